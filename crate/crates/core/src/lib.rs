//! Numerical core for the divmin workbench: dense matrices, a fixed
//! two-hidden-layer MLP with hand-written backpropagation, diagonal-Gaussian
//! policy heads, Adam, a finite-difference gradient checker, and the DIVMIN1
//! parameter checkpoint format.
//!
//! Everything is 64-bit. All types are plain owned data and safe to move
//! between worker threads; nothing here touches global state.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod gradcheck;
pub mod mat;
pub mod mlp;

pub use adam::{AdamState, NonFiniteGradient};
pub use checkpoint::{Checkpoint, CheckpointError, MAGIC, VERSION};
pub use gaussian::{GaussianPolicyParams, PolicyGrads, LOG_STD_MAX, LOG_STD_MIN};
pub use gradcheck::finite_diff_check;
pub use mat::Mat;
pub use mlp::{MlpCache, MlpDims, MlpGrads, MlpParams};

/// Models that can round-trip through a flat `f64` vector.
///
/// The flat layout is the contract between structured parameters and the
/// optimizer / checkpoint / ensemble-mixing code, so implementations must
/// keep a stable element order.
pub trait FlatParams {
    fn flat_len(&self) -> usize;
    fn copy_to_flat(&self, out: &mut [f64]);
    fn copy_from_flat(&mut self, src: &[f64]);

    fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.flat_len()];
        self.copy_to_flat(&mut out);
        out
    }
}

impl FlatParams for Vec<f64> {
    fn flat_len(&self) -> usize {
        self.len()
    }
    fn copy_to_flat(&self, out: &mut [f64]) {
        out.copy_from_slice(self);
    }
    fn copy_from_flat(&mut self, src: &[f64]) {
        self.copy_from_slice(src);
    }
}
