//! Probabilistic disaggregation: learn per-pixel Gaussian value maps from
//! labels that exist only as sums over spatial regions.
//!
//! Per-pixel means and variances are summed over each region's pixels by a
//! sparse aggregation layer (the Gaussian sum closure), and the resulting
//! region-level Gaussian is trained against the region label by negative
//! log-likelihood. The crate also carries the deterministic, uniform-label,
//! Poisson, and sampling-based variants, the evaluation metrics, a merged-
//! region training protocol, and a synthetic scene generator that provides
//! the pixel-level ground truth real parcel data lacks.

pub mod aggregate;
pub mod error;
pub mod eval;
pub mod io;
pub mod math;
pub mod objective;
pub mod predictor;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};

/// Cap rayon worker threads from the `DISAGG_THREADS` environment variable
/// (default: logical cores). Safe to call repeatedly; only the first call
/// can take effect.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("DISAGG_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}
