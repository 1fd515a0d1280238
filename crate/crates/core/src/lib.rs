//! Monte-Carlo laboratory for Markovian BSDEs driven by a general clock
//! `V`, with no reference martingale: Picard regression solver, Pseudo-PDE
//! extraction, carré du champ and bracket identities, and Lebesgue
//! decomposition of atomic measures.

pub mod bsde_solver;
pub mod cli;
pub mod clock_measure;
pub mod config;
pub mod error;
pub mod expression;
pub mod forward_models;
pub mod io;
pub mod pseudo_pde;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod verification;

pub use error::{Error, Result};
