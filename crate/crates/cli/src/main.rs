//! `simulate`: run a declarative simulation config, or compare reference
//! solvers from the command line.

use std::os::raw::c_int;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpsim::driver::{describe, load_config, run, DataFile};
use mpsim::oracles::{covariance_evolve, CovarianceModel, Statistics};
use mpsim::{Error, C64};

extern "C" {
    fn openblas_set_num_threads(n: c_int);
}

#[derive(Parser)]
#[command(
    name = "simulate",
    version,
    about = "Matrix product state simulations of pure and mixed states"
)]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Simulation config (TOML).
    config: Option<PathBuf>,

    #[command(flatten)]
    common: Common,

    /// Validate the config and print the phase outline without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Clone)]
struct Common {
    /// Directory receiving the run directory.
    #[arg(long, default_value = ".", global = true)]
    out: PathBuf,

    /// BLAS threads.
    #[arg(long, default_value_t = 1, global = true)]
    threads: usize,

    /// error, warn, info, debug or trace.
    #[arg(long, default_value = "info", global = true)]
    log_level: log::LevelFilter,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a quadratic model with the correlation-matrix solver and write
    /// the occupations `⟨a_i† a_i⟩` to `<out>/oracle-<model>/density.dat`.
    TestOracles(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    FermionDephasing,
    BosonSource,
    FermionSource,
    XxBoundary,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(value_enum)]
    model: Model,
    #[arg(long, default_value_t = 10)]
    sites: usize,
    #[arg(long, default_value_t = 4.0)]
    duration: f64,
    /// Output interval; the integrator refines it internally.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Dephasing `γ` or source `Γ`.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long, default_value_t = 1.0)]
    eps_left: f64,
    #[arg(long, default_value_t = 1.0)]
    mu_left: f64,
    #[arg(long, default_value_t = 1.0)]
    eps_right: f64,
    #[arg(long, default_value_t = -1.0)]
    mu_right: f64,
}

fn oracles(args: &OracleArgs, out: &Path) -> Result<(), Error> {
    let n = args.sites;
    let (name, model, g0) = match args.model {
        Model::FermionDephasing => {
            let occ: Vec<f64> = (1..=n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
            (
                "fermion-dephasing",
                CovarianceModel::fermion_dephasing(n, args.rate)?,
                occ,
            )
        }
        Model::BosonSource => (
            "boson-source",
            CovarianceModel::central_source(Statistics::Boson, n, args.rate)?,
            vec![0.0; n],
        ),
        Model::FermionSource => (
            "fermion-source",
            CovarianceModel::central_source(Statistics::Fermion, n, args.rate)?,
            vec![0.0; n],
        ),
        Model::XxBoundary => (
            "xx-boundary",
            CovarianceModel::xx_boundary(n, (args.eps_left, args.mu_left), (args.eps_right, args.mu_right))?,
            vec![0.5; n],
        ),
    };
    if !(args.step > 0.0 && args.duration >= 0.0) {
        return Err(Error::Config(
            "--step must be positive and --duration nonnegative".into(),
        ));
    }
    let dir = out.join(format!("oracle-{name}"));
    std::fs::create_dir_all(&dir)?;
    let header = vec![
        format!("correlation-matrix oracle: {name}, {n} modes"),
        "columns: t site re im".to_string(),
    ];
    let mut file = DataFile::create(&dir.join("density.dat"), &header)?;
    let mut g = CovarianceModel::occupations(&g0);
    let steps = (args.duration / args.step).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * args.step;
        for i in 0..n {
            file.row(&[format!("{t:.10e}"), (i + 1).to_string()], &[g[[i, i]]])?;
        }
        if k < steps {
            g = covariance_evolve(&model, &g, args.step, args.step)?;
        }
    }
    file.flush()?;
    let total: C64 = g.diag().sum();
    println!("{}: N_tot({}) = {:.10}", dir.display(), args.duration, total.re);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.common.log_level)
        .format_timestamp(None)
        .init();
    // SAFETY: plain setter in the linked BLAS library, called before any BLAS work.
    unsafe { openblas_set_num_threads(cli.common.threads.max(1) as c_int) };

    if let Some(Command::TestOracles(args)) = &cli.command {
        return match oracles(args, &cli.common.out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e @ Error::Config(_)) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    }

    let Some(path) = cli.config else {
        eprintln!("error: missing config file (see --help)");
        return ExitCode::from(1);
    };
    let cfg = match load_config(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(1);
        }
    };
    if cli.dry_run {
        print!("{}", describe(&cfg));
        return ExitCode::SUCCESS;
    }
    match run(&cfg, &cli.common.out) {
        Ok(report) => {
            for w in &report.warnings {
                log::warn!("{w}");
            }
            println!("{}", report.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
