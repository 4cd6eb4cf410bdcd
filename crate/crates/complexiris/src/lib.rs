//! Complex-valued convolutional iris recognition.
//!
//! The crate is organized around a dense complex tensor type
//! ([`ctensor::ComplexTensor`]) and builds up from there:
//!
//! * [`ctensor`] — complex tensor arithmetic and 2-D FFT
//! * [`layers`] — complex convolution, zReLU, complex batch
//!   normalization, spectral pooling, Gabor kernels
//! * [`autograd`] — tape-based reverse-mode differentiation and the
//!   Nesterov SGD optimizer
//! * [`model`] — the Gabor-embedded densely connected network and its
//!   checkpoint format
//! * [`loss`] — masked fractional distance, shift-minimizing distance
//!   and the extended triplet loss, plus triplet mining
//! * [`preprocess`] — integro-differential circle localization and
//!   rubber-sheet normalization to a 64x256 strip with validity mask
//! * [`baseline`] — classical IrisCode phase encoding and masked,
//!   shift-compensated Hamming matching
//! * [`eval`] — genuine/impostor pair enumeration, ROC, EER, FRR@FAR
//! * [`synth`] — synthetic stochastic-texture dataset generator for
//!   desk-scale training runs

pub mod autograd;
pub mod baseline;
pub mod ctensor;
pub mod error;
pub mod eval;
pub mod layers;
pub mod loss;
pub mod model;
pub mod preprocess;
pub mod real;
pub mod synth;

pub use ctensor::{ComplexTensor, RealTensor, Shape};
pub use error::{Error, Result};
pub use real::Real;

/// Environment variable capping worker parallelism for all batch
/// operations (`rayon` pool size). Unset means one worker per core.
pub const THREADS_ENV: &str = "COMPLEXIRIS_THREADS";

/// Configure the global worker pool from [`THREADS_ENV`], optionally
/// forcing single-threaded execution.
///
/// Call once at process start; later calls are ignored by rayon.
pub fn init_threads(force_sequential: bool) {
    let mut threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    if force_sequential {
        threads = Some(1);
    }
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
