//! Synthetic sparsification: Bernoulli-samples a dense ground-truth map
//! down to a target measurement count.
//!
//! Each valid pixel is kept independently with probability
//! `desired / available`, so the kept count is binomial around `desired`
//! rather than exact. Draws come from a ChaCha8 stream (`rand_chacha`),
//! one `f64` draw per valid pixel in row-major order, which makes a given
//! `(map validity, seed)` pair reproduce bit-identically everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::DepthMap;
use crate::scalar::Scalar;

/// Target count and RNG seed for [`sample_sparse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub desired: usize,
    pub seed: u64,
}

/// Name and version of the random generator behind [`sample_sparse`],
/// for run metadata.
pub const GENERATOR: &str = concat!("chacha8 (rand_chacha ", "0.3", ")");

/// Keeps each valid pixel of `gt` with probability `desired / available`;
/// every other pixel becomes invalid. Requesting more samples than there
/// are valid pixels is a capacity error.
pub fn sample_sparse<T: Scalar>(gt: &DepthMap<T>, cfg: &SamplerConfig) -> Result<DepthMap<T>> {
    let available = gt.validity_mask().popcount();
    if cfg.desired > available {
        return Err(Error::SamplingCapacity {
            requested: cfg.desired,
            available,
        });
    }
    let (h, w) = gt.shape();
    let mut out = DepthMap::zeros(h, w)?;
    if available == 0 {
        return Ok(out);
    }
    let keep_probability = cfg.desired as f64 / available as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for r in 0..h {
        for c in 0..w {
            let v = gt.get(r, c);
            if v > T::zero() && rng.gen::<f64>() < keep_probability {
                out.set(r, c, v);
            }
        }
    }
    Ok(out)
}
