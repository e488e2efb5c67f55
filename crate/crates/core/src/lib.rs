//! Sample-based estimation of Wasserstein gradient flow velocity fields for
//! f-divergences, and particle flows driven by them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod datasets;
pub mod divergence;
pub mod error;
pub mod flow;
pub mod kernel;
mod linalg;
pub mod local_linear;
pub mod nw;
pub mod rng;
pub mod sample;
pub mod score;
pub mod selection;
pub mod subspace;

pub use divergence::{h_of, mirror_of, Divergence, DivergenceSpec, Generator, Mirror};
pub use error::{Error, Result};
pub use kernel::{gauss_weight, median_bandwidth, GaussianKernel};
pub use local_linear::{fit_batch, solve_quadratic, velocity_field, FitOptions, LocalFit, Solver};
pub use nw::nw_velocity;
pub use sample::SampleSet;
pub use score::{BuiltinScore, GaussianScore, MixtureScore, ScoreOracle};
