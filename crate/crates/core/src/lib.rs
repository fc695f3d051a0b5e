//! Multi-country quantile factor model with a convex combination of a
//! linear quantile regression and a sum-of-trees (BART) component.
//!
//! For every country `i` and quantile `p`:
//!
//! ```text
//! y_it = alpha_ip + omega_ip g_ip(x_it) + (1 - omega_ip) beta_ip' x_it + lambda_ip f_pt + eps_ip,t
//! eps_ip,t ~ ALD_p(sigma_ip),   f_pt ~ N(0, exp(h_pt)),   h_pt AR(1)
//! ```
//!
//! The crate provides the Gibbs sampler ([`gibbs`]), tail forecast
//! evaluation ([`forecast`]), variance decompositions and generalized
//! impulse responses ([`scenario`]) and a small CLI ([`commands`]).

pub mod ald;
pub mod bart;
pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod factor_sv;
pub mod forecast;
pub mod gibbs;
pub mod panel;
pub mod plot;
pub mod rng;
pub mod scenario;
pub mod shrinkage;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
