//! Validity-aware grayscale morphology for hole-filling sparse depth maps.
//!
//! Invalid pixels (depth 0) are excluded from the neighborhood extrema
//! rather than treated as value 0: dilation takes the max over the valid
//! neighbors, erosion demands that every in-bounds neighbor be valid.
//! Out-of-bounds taps are clipped at the border, so a fully dense map
//! passes through erosion unchanged.

use crate::error::{Error, Result};
use crate::grid::DepthMap;
use crate::scalar::Scalar;

/// Morphological closing parameters: `iterations` rounds of dilation
/// followed by erosion with a `kernel` x `kernel` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClosingConfig {
    pub kernel: usize,
    pub iterations: usize,
    /// Copy the original measurements back over the closed map, so
    /// hole-filling never rewrites a real sample.
    pub preserve_original: bool,
}

impl Default for ClosingConfig {
    fn default() -> Self {
        Self {
            kernel: 3,
            iterations: 1,
            preserve_original: true,
        }
    }
}

impl ClosingConfig {
    pub fn validate(&self) -> Result<()> {
        check_kernel(self.kernel)?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Valid-pixel bookkeeping for a map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityStats {
    pub valid: usize,
    pub total: usize,
    pub fraction: f64,
}

pub fn density_stats<T: Scalar>(map: &DepthMap<T>) -> DensityStats {
    let valid = map.validity_mask().popcount();
    let total = map.height() * map.width();
    DensityStats {
        valid,
        total,
        fraction: valid as f64 / total as f64,
    }
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(Error::Config(format!(
            "kernel must be odd and >= 3, got {kernel}"
        )));
    }
    Ok(())
}

#[inline]
fn window(center: usize, half: usize, len: usize) -> (usize, usize) {
    let lo = center.saturating_sub(half);
    let hi = (center + half).min(len - 1);
    (lo, hi)
}

/// Grayscale dilation: each pixel becomes the maximum over the valid
/// pixels in its window, or stays invalid if the window holds none.
pub fn dilate<T: Scalar>(map: &DepthMap<T>, kernel: usize) -> Result<DepthMap<T>> {
    check_kernel(kernel)?;
    let half = kernel / 2;
    let (h, w) = map.shape();
    let mut out = DepthMap::zeros(h, w)?;
    for r in 0..h {
        let (r0, r1) = window(r, half, h);
        for c in 0..w {
            let (c0, c1) = window(c, half, w);
            let mut best = T::zero();
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let v = map.get(rr, cc);
                    if v > best {
                        best = v;
                    }
                }
            }
            if best > T::zero() {
                out.set(r, c, best);
            }
        }
    }
    Ok(out)
}

/// Grayscale erosion: each pixel becomes the minimum over its window,
/// and is valid only if every in-bounds neighbor is valid.
pub fn erode<T: Scalar>(map: &DepthMap<T>, kernel: usize) -> Result<DepthMap<T>> {
    check_kernel(kernel)?;
    let half = kernel / 2;
    let (h, w) = map.shape();
    let mut out = DepthMap::zeros(h, w)?;
    for r in 0..h {
        let (r0, r1) = window(r, half, h);
        'pixel: for c in 0..w {
            let (c0, c1) = window(c, half, w);
            let mut worst = T::infinity();
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let v = map.get(rr, cc);
                    if v <= T::zero() {
                        continue 'pixel;
                    }
                    if v < worst {
                        worst = v;
                    }
                }
            }
            out.set(r, c, worst);
        }
    }
    Ok(out)
}

/// Morphological closing: `iterations` rounds of dilate-then-erode,
/// optionally restoring the original samples afterwards.
pub fn closing<T: Scalar>(map: &DepthMap<T>, cfg: &ClosingConfig) -> Result<DepthMap<T>> {
    cfg.validate()?;
    let mut current = map.clone();
    for _ in 0..cfg.iterations {
        current = erode(&dilate(&current, cfg.kernel)?, cfg.kernel)?;
    }
    if cfg.preserve_original {
        let (h, w) = map.shape();
        for r in 0..h {
            for c in 0..w {
                let v = map.get(r, c);
                if v > T::zero() {
                    current.set(r, c, v);
                }
            }
        }
    }
    Ok(current)
}
