//! Matrix product state simulation of pure and mixed quantum many-body states.
//!
//! Mixed states are stored as vectorized density matrices `|ρ⟩⟩`, so that the
//! same MPS machinery handles both representations. The crate is organised as
//!
//! - [`tensor`]: dense labeled tensors, truncated SVD and matrix exponentials,
//! - [`dsl`]: site kinds, built-in operators and the operator-expression language,
//! - [`state`]: MPS containers, product/graph states, compression,
//! - [`mpo`]: lowering of expressions to operator strings and MPO construction,
//!   including the W^I/W^II approximants of `exp(τL)`,
//! - [`evolution`]: gate/channel application and time evolution,
//! - [`measure`]: expectation values, purities and entanglement measures,
//! - [`oracles`]: dense and covariance reference solvers,
//! - [`driver`]: declarative simulation configs and the run loop.
//!
//! # Conventions
//!
//! Site indices are 1-based in the expression language and 0-based everywhere
//! in the Rust API. Tensor data is stored row-major (the first label varies
//! slowest). A density matrix is vectorized site by site with the combined
//! local index `i * d + j` for the local element `|i⟩⟨j|`, so that
//! `vec(A ρ B) = (A ⊗ Bᵀ) vec(ρ)`.

extern crate blas_src;
extern crate openblas_src;

pub mod driver;
pub mod dsl;
pub mod error;
pub mod evolution;
pub mod measure;
pub mod mpo;
pub mod oracles;
pub mod state;
pub mod tensor;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
