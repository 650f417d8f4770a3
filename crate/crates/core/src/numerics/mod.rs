//! Small dense numerics: matrices, MLPs with hand-written backprop, Adam,
//! a seeded random source and a central-difference gradient oracle.

mod adam;
mod finite_diff;
mod matrix;
mod mlp;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use finite_diff::{finite_diff_grad, relative_error};
pub use matrix::DenseMatrix;
pub use mlp::{Activation, DenseLayer, MlpCache, MlpParams};
pub use rng::SeededRng;

pub(crate) fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
