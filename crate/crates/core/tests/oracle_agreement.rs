//! The two reference solvers must agree with each other before either is
//! trusted as a yardstick.

mod common;

use common::{expr, reg};
use mpsim::dsl::SiteKind;
use mpsim::oracles::{
    covariance_evolve, dense_evolve, dense_expect, CovarianceModel, DenseModel, DenseSpace, Statistics,
};
use mpsim::state::System;
use mpsim::C64;
use ndarray::Array2;

fn dense_occupations(model: &DenseModel, rho: &Array2<C64>, op: &str, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| {
            let o = model.space.operator(&expr(&format!("{op}({i})")), &reg()).unwrap();
            dense_expect(rho, &o).re
        })
        .collect()
}

#[test]
fn fermion_dephasing_covariance_matches_dense() {
    let (n, gamma) = (4, 0.8);
    let sys = System::uniform(n, SiteKind::Fermion).unwrap();
    let ev = expr(
        "-im*(-dag(C)(1)C(2) - dag(C)(2)C(1) - dag(C)(2)C(3) - dag(C)(3)C(2) - dag(C)(3)C(4) - dag(C)(4)C(3)) \
         + Dissipator(sqrt(3.2)*N)(1) + Dissipator(sqrt(3.2)*N)(2) + Dissipator(sqrt(3.2)*N)(3) + Dissipator(sqrt(3.2)*N)(4)",
    );
    let model = DenseModel::from_evolver(&ev, &sys, &reg()).unwrap();
    let rho0 = model.space.product_density(&["Emp", "Occ", "Emp", "Occ"]).unwrap();
    let cov = CovarianceModel::fermion_dephasing(n, gamma).unwrap();
    let g0 = CovarianceModel::occupations(&[0.0, 1.0, 0.0, 1.0]);
    for t in [0.5, 1.5] {
        let rho = dense_evolve(&model, &rho0, t, 0.02).unwrap();
        let g = covariance_evolve(&cov, &g0, t, 0.02).unwrap();
        let dense = dense_occupations(&model, &rho, "N", n);
        for i in 0..n {
            assert!((dense[i] - g[[i, i]].re).abs() < 1e-8, "t={t} i={i}");
        }
        // an off-diagonal element as well
        let c12 = model.space.operator(&expr("dag(C)(1)C(2)"), &reg()).unwrap();
        assert!((dense_expect(&rho, &c12) - g[[0, 1]]).norm() < 1e-8);
    }
}

#[test]
fn two_site_coherence_decays_at_four_gamma() {
    // from |1,0⟩+|0,1⟩ without hopping the coherence only dephases
    let gamma = 0.3;
    let mut cov = CovarianceModel::fermion_dephasing(2, gamma).unwrap();
    cov.hopping = Array2::zeros((2, 2));
    let g0 = Array2::from_elem((2, 2), C64::new(0.5, 0.0));
    let g = covariance_evolve(&cov, &g0, 1.0, 0.05).unwrap();
    assert!((g[[0, 1]].re - 0.5 * (-4.0 * gamma).exp()).abs() < 1e-10);
}

fn source_pair(kind: SiteKind, stat: Statistics, n: usize, rate: f64) -> (DenseModel, CovarianceModel) {
    let sys = System::uniform(n, kind).unwrap();
    let a = if stat == Statistics::Fermion { "C" } else { "A" };
    let hop: Vec<String> = (1..n)
        .map(|i| format!("dag({a})({i})*{a}({j}) + dag({a})({j})*{a}({i})", j = i + 1))
        .collect();
    let ev = expr(&format!(
        "-im*({}) + Dissipator(sqrt({})*dag({a}))({})",
        hop.join(" + "),
        2.0 * rate,
        n / 2
    ));
    (
        DenseModel::from_evolver(&ev, &sys, &reg()).unwrap(),
        CovarianceModel::central_source(stat, n, rate).unwrap(),
    )
}

/// Largest `|⟨n_i⟩_dense − G_ii|` over sites at each of `times` (equally spaced).
fn source_errors(kind: SiteKind, stat: Statistics, n: usize, times: &[f64]) -> Vec<f64> {
    let (model, cov) = source_pair(kind, stat, n, 0.2);
    let vacuum = if stat == Statistics::Fermion { "Emp" } else { "0" };
    let mut rho = model.space.product_density(&[vacuum]).unwrap();
    let mut g = CovarianceModel::occupations(&vec![0.0; n]);
    let mut last = 0.0;
    times
        .iter()
        .map(|&t| {
            rho = dense_evolve(&model, &rho, t - last, 0.05).unwrap();
            g = covariance_evolve(&cov, &g, t - last, 0.05).unwrap();
            last = t;
            let dense = dense_occupations(&model, &rho, "N", n);
            (0..n).map(|i| (dense[i] - g[[i, i]].re).abs()).fold(0.0, f64::max)
        })
        .collect()
}

#[test]
fn fermion_source_covariance_matches_dense() {
    for err in source_errors(SiteKind::Fermion, Statistics::Fermion, 4, &[0.5, 1.0, 2.0]) {
        assert!(err < 1e-8, "{err}");
    }
}

#[test]
fn boson_source_covariance_matches_dense_up_to_truncation() {
    // occupations beyond the cutoff feed back as an O(P(n = d-1)) error
    let wide = source_errors(SiteKind::boson(8).unwrap(), Statistics::Boson, 3, &[0.25, 0.5]);
    assert!(wide.iter().all(|e| *e < 1e-5), "{wide:?}");
    let narrow = source_errors(SiteKind::boson(5).unwrap(), Statistics::Boson, 4, &[0.25, 0.5, 1.0]);
    assert!(narrow.iter().all(|e| *e < 1e-3), "{narrow:?}");
    assert!(narrow[1] > wide[1]);
}

#[test]
fn boson_source_total_number_grows() {
    let cov = CovarianceModel::central_source(Statistics::Boson, 10, 0.2).unwrap();
    let mut g = CovarianceModel::occupations(&[0.0; 10]);
    let mut last = 0.0;
    for _ in 0..10 {
        g = covariance_evolve(&cov, &g, 0.2, 0.05).unwrap();
        let total: f64 = g.diag().iter().map(|x| x.re).sum();
        assert!(total > last);
        last = total;
    }
}

fn xx_dense(n: usize, eps_l: f64, mu_l: f64, eps_r: f64, mu_r: f64) -> DenseModel {
    let sys = System::uniform(n, SiteKind::Qubit).unwrap();
    let hop: Vec<String> = (1..n)
        .map(|i| format!("X({i})X({j}) + Y({i})Y({j})", j = i + 1))
        .collect();
    let drive = |eps: f64, mu: f64, site: usize| {
        format!(
            "Dissipator(sqrt({})*Sp)({site}) + Dissipator(sqrt({})*Sm)({site})",
            eps * (1.0 + mu) / 2.0,
            eps * (1.0 - mu) / 2.0
        )
    };
    let ev = expr(&format!(
        "-im*({}) + {} + {}",
        hop.join(" + "),
        drive(eps_l, mu_l, 1),
        drive(eps_r, mu_r, n)
    ));
    DenseModel::from_evolver(&ev, &sys, &reg()).unwrap()
}

#[test]
fn xx_boundary_covariance_matches_dense() {
    let n = 4;
    for (eps_l, mu_l, eps_r, mu_r) in [(1.0, 1.0, 1.0, -1.0), (5.0, 0.3, 1.0, -0.6)] {
        let model = xx_dense(n, eps_l, mu_l, eps_r, mu_r);
        // start away from the fixed point so the check is not trivial
        let rho0 = model.space.product_density(&["Up", "Dn", "FullyMixed", "Up"]).unwrap();
        let g0 = CovarianceModel::occupations(&[0.0, 1.0, 0.5, 0.0]);
        let cov = CovarianceModel::xx_boundary(n, (eps_l, mu_l), (eps_r, mu_r)).unwrap();
        let z1 = model.space.operator(&expr("Z(1)"), &reg()).unwrap();
        let cur = model.space.operator(&expr("X(1)*Y(2) - Y(1)*X(2)"), &reg()).unwrap();
        let z3 = model.space.operator(&expr("Z(3)"), &reg()).unwrap();
        for t in [0.4, 1.2] {
            let rho = dense_evolve(&model, &rho0, t, 0.02).unwrap();
            let g = covariance_evolve(&cov, &g0, t, 0.02).unwrap();
            let i = C64::new(0.0, 1.0);
            assert!((dense_expect(&rho, &z1).re - (1.0 - 2.0 * g[[0, 0]].re)).abs() < 1e-8);
            assert!((dense_expect(&rho, &z3).re - (1.0 - 2.0 * g[[2, 2]].re)).abs() < 1e-8);
            let j = 2.0 * i * (g[[1, 0]] - g[[0, 1]]);
            assert!(
                (dense_expect(&rho, &cur) - j).norm() < 1e-8,
                "{} vs {j}",
                dense_expect(&rho, &cur)
            );
        }
    }
}

#[test]
fn xx_infinite_temperature_is_fixed_point_for_symmetric_driving() {
    let cov = CovarianceModel::xx_boundary(6, (1.3, 0.0), (1.3, 0.0)).unwrap();
    let g0 = CovarianceModel::occupations(&[0.5; 6]);
    let g = covariance_evolve(&cov, &g0, 3.0, 0.1).unwrap();
    assert!(common::max_diff(&g, &g0) < 1e-12);
}

#[test]
fn covariance_is_linear_without_sources() {
    let cov = CovarianceModel::fermion_dephasing(5, 0.6).unwrap();
    let a = CovarianceModel::occupations(&[1.0, 0.0, 1.0, 0.0, 1.0]);
    let mut b = CovarianceModel::occupations(&[0.2, 0.4, 0.0, 0.9, 0.1]);
    b[[1, 3]] = C64::new(0.1, 0.2);
    b[[3, 1]] = C64::new(0.1, -0.2);
    let (x, y) = (C64::new(0.3, 0.0), C64::new(-1.7, 0.4));
    let lhs = covariance_evolve(&cov, &(&a * x + &b * y), 1.0, 0.05).unwrap();
    let rhs = covariance_evolve(&cov, &a, 1.0, 0.05).unwrap() * x + covariance_evolve(&cov, &b, 1.0, 0.05).unwrap() * y;
    assert!(common::max_diff(&lhs, &rhs) < 1e-10);
}

#[test]
fn dense_space_rejects_large_systems() {
    let sys = System::uniform(11, SiteKind::Qubit).unwrap();
    assert!(DenseSpace::new(&sys).is_err());
}
