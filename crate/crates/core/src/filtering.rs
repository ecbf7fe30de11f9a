//! Intensity-image operators: Sobel gradients, edge thresholding, and
//! Gaussian smoothing.
//!
//! All operators use cross-correlation (kernels are not flipped) and
//! replicate the border pixel for out-of-bounds taps.

use crate::error::{Error, Result};
use crate::grid::{GrayImage, ScalarField, ValidityMask};
use crate::scalar::{cast, upcast, Scalar};

/// Horizontal Sobel kernel; the vertical kernel is its negated transpose.
const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];

/// Per-pixel image gradient: components, magnitude, and direction.
///
/// Direction is `atan(iy / ix)`, an orientation in `[-pi/2, pi/2]`:
/// `ix = 0` maps to `pi/2` or `-pi/2` by the sign of `iy`, and a pixel
/// with zero gradient gets direction `0`.
#[derive(Debug, Clone)]
pub struct GradientField<T = f64> {
    pub ix: ScalarField<T>,
    pub iy: ScalarField<T>,
    pub magnitude: ScalarField<T>,
    pub direction: ScalarField<T>,
}

/// Threshold for [`edge_mask`]: a pixel is an edge iff magnitude > tau.
#[derive(Debug, Clone, Copy)]
pub struct EdgeConfig<T = f64> {
    pub tau: T,
}

impl<T: Scalar> Default for EdgeConfig<T> {
    fn default() -> Self {
        Self { tau: cast(0.25) }
    }
}

/// Gaussian smoothing parameters. The kernel spans `2 * radius + 1` taps
/// per axis and is renormalized to unit sum after truncation.
#[derive(Debug, Clone, Copy)]
pub struct GaussianConfig<T = f64> {
    pub sigma: T,
    pub radius: usize,
}

impl<T: Scalar> GaussianConfig<T> {
    /// Radius defaults to `ceil(3 * sigma)`, covering 99.7% of the mass.
    pub fn with_sigma(sigma: T) -> Self {
        let three_sigma = (upcast(sigma) * 3.0).ceil();
        let radius = if three_sigma.is_finite() && three_sigma >= 1.0 {
            three_sigma as usize
        } else {
            1
        };
        Self { sigma, radius }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > T::zero()) {
            return Err(Error::Config(format!(
                "gaussian sigma must be finite and > 0, got {}",
                self.sigma
            )));
        }
        if self.radius == 0 {
            return Err(Error::Config("gaussian radius must be at least 1".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for GaussianConfig<T> {
    fn default() -> Self {
        Self::with_sigma(cast(1.76))
    }
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Sobel gradients of an intensity image (replicate border). The image
/// must be at least 3x3.
pub fn sobel<T: Scalar>(img: &GrayImage<T>) -> Result<GradientField<T>> {
    let (h, w) = img.shape();
    if h < 3 || w < 3 {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: 3,
        });
    }
    let kx: Vec<T> = SOBEL_X.iter().flatten().map(|v| cast(*v)).collect();
    let ky: Vec<T> = SOBEL_Y.iter().flatten().map(|v| cast(*v)).collect();

    let mut ix = ScalarField::zeros(h, w)?;
    let mut iy = ScalarField::zeros(h, w)?;
    let mut magnitude = ScalarField::zeros(h, w)?;
    let mut direction = ScalarField::zeros(h, w)?;
    let half_pi = cast::<T>(std::f64::consts::FRAC_PI_2);

    for r in 0..h {
        for c in 0..w {
            let mut gx = T::zero();
            let mut gy = T::zero();
            for m in 0..3usize {
                let rr = clamp_index(r as isize + m as isize - 1, h);
                for n in 0..3usize {
                    let cc = clamp_index(c as isize + n as isize - 1, w);
                    let v = img.get(rr, cc);
                    gx = gx + kx[m * 3 + n] * v;
                    gy = gy + ky[m * 3 + n] * v;
                }
            }
            let dir = if gx == T::zero() {
                if gy == T::zero() {
                    T::zero()
                } else if gy > T::zero() {
                    half_pi
                } else {
                    -half_pi
                }
            } else {
                (gy / gx).atan()
            };
            ix.set(r, c, gx);
            iy.set(r, c, gy);
            magnitude.set(r, c, gx.hypot(gy));
            direction.set(r, c, dir);
        }
    }
    Ok(GradientField {
        ix,
        iy,
        magnitude,
        direction,
    })
}

/// Pixels whose gradient magnitude strictly exceeds `tau`.
pub fn edge_mask<T: Scalar>(grad: &GradientField<T>, cfg: &EdgeConfig<T>) -> Result<ValidityMask> {
    if !(cfg.tau.is_finite() && cfg.tau >= T::zero()) {
        return Err(Error::Config(format!(
            "edge threshold must be finite and >= 0, got {}",
            cfg.tau
        )));
    }
    let (h, w) = grad.magnitude.shape();
    let bits = grad.magnitude.values().iter().map(|m| *m > cfg.tau).collect();
    ValidityMask::new(h, w, bits)
}

fn gaussian_taps<T: Scalar>(cfg: &GaussianConfig<T>) -> Vec<T> {
    let sigma = upcast(cfg.sigma);
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-(cfg.radius as isize)..=cfg.radius as isize)
        .map(|t| (-((t * t) as f64) / denom).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps.into_iter().map(cast).collect()
}

/// Gaussian blur with a truncated, renormalized kernel and replicate
/// border. Output values are clamped to `[0, 1]` to absorb rounding.
///
/// The square-truncated 2D Gaussian factorizes exactly, so the filter
/// runs as two 1D passes; replicate padding commutes with the
/// cross-axis pass, making this identical to the full 2D correlation.
pub fn gaussian_blur<T: Scalar>(img: &GrayImage<T>, cfg: &GaussianConfig<T>) -> Result<GrayImage<T>> {
    cfg.validate()?;
    let taps = gaussian_taps(cfg);
    let rad = cfg.radius as isize;
    let (h, w) = img.shape();

    let mut horiz = vec![T::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = T::zero();
            for (k, tap) in taps.iter().enumerate() {
                let cc = clamp_index(c as isize + k as isize - rad, w);
                acc = acc + *tap * img.get(r, cc);
            }
            horiz[r * w + c] = acc;
        }
    }

    let mut out = vec![T::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = T::zero();
            for (k, tap) in taps.iter().enumerate() {
                let rr = clamp_index(r as isize + k as isize - rad, h);
                acc = acc + *tap * horiz[rr * w + c];
            }
            out[r * w + c] = acc.max(T::zero()).min(T::one());
        }
    }
    GrayImage::new(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    /// I(i, j) = j * 0.1: brightness grows to the right.
    fn horizontal_ramp(h: usize, w: usize) -> GrayImage {
        let values = (0..h * w).map(|i| (i % w) as f64 * 0.1).collect();
        GrayImage::new(h, w, values).unwrap()
    }

    #[test]
    fn ramp_gradient_interior() {
        let g = sobel(&horizontal_ramp(5, 8)).unwrap();
        for r in 0..5 {
            for c in 1..7 {
                assert!((g.ix.get(r, c) - 0.8).abs() < 1e-12, "ix at ({r},{c})");
                assert!(g.iy.get(r, c).abs() < 1e-12);
                assert!((g.magnitude.get(r, c) - 0.8).abs() < 1e-12);
                assert!(g.direction.get(r, c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_ramp_gradient_interior() {
        // I(i, j) = i * 0.1. The vertical kernel weights the upper row
        // positively, so a downward-increasing ramp reads as -0.8.
        let values = (0..8 * 5).map(|i| (i / 5) as f64 * 0.1).collect();
        let img = GrayImage::new(8, 5, values).unwrap();
        let g = sobel(&img).unwrap();
        for r in 1..7 {
            for c in 0..5 {
                assert!((g.iy.get(r, c) + 0.8).abs() < 1e-12, "iy at ({r},{c})");
                assert!(g.ix.get(r, c).abs() < 1e-12);
                assert!((g.magnitude.get(r, c) - 0.8).abs() < 1e-12);
                assert!((g.direction.get(r, c) + FRAC_PI_2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upward_ramp_direction_is_positive_half_pi() {
        let values = (0..8 * 5).map(|i| (7 - i / 5) as f64 * 0.1).collect();
        let img = GrayImage::new(8, 5, values).unwrap();
        let g = sobel(&img).unwrap();
        assert!((g.direction.get(3, 2) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let img: GrayImage = GrayImage::new(4, 4, vec![0.42; 16]).unwrap();
        let g = sobel(&img).unwrap();
        // Tap cancellation leaves a few ulps of summation residue.
        for v in g.magnitude.values() {
            assert!(v.abs() < 1e-15);
        }
        for v in g.direction.values() {
            assert!(v.abs() < FRAC_PI_2 + 1e-12);
        }
        assert_eq!(edge_mask(&g, &EdgeConfig::default()).unwrap().popcount(), 0);
    }

    #[test]
    fn sobel_rejects_tiny_images() {
        let img = GrayImage::new(2, 5, vec![0.0; 10]).unwrap();
        assert!(matches!(sobel(&img), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn complement_image_negates_gradient() {
        let img = horizontal_ramp(5, 8);
        let flipped = GrayImage::new(
            5,
            8,
            img.values().iter().map(|v| 1.0 - *v).collect(),
        )
        .unwrap();
        let g = sobel(&img).unwrap();
        let gf = sobel(&flipped).unwrap();
        for r in 0..5 {
            for c in 0..8 {
                assert!((g.ix.get(r, c) + gf.ix.get(r, c)).abs() < 1e-12);
                assert!((g.iy.get(r, c) + gf.iy.get(r, c)).abs() < 1e-12);
                assert!((g.magnitude.get(r, c) - gf.magnitude.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_threshold_is_strict() {
        let g = sobel(&horizontal_ramp(5, 8)).unwrap();
        let at = edge_mask(&g, &EdgeConfig { tau: 0.8 }).unwrap();
        assert!(!at.get(2, 3), "magnitude == tau must not fire");
        let below = edge_mask(&g, &EdgeConfig { tau: 0.79 }).unwrap();
        assert!(below.get(2, 3));
        assert!(edge_mask(&g, &EdgeConfig { tau: f64::NAN }).is_err());
    }

    #[test]
    fn direction_and_magnitude_ranges() {
        let mut values = Vec::new();
        let mut state = 0x243f6a88u64;
        for _ in 0..7 * 9 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            values.push((state >> 11) as f64 / (1u64 << 53) as f64);
        }
        let img = GrayImage::new(7, 9, values).unwrap();
        let g = sobel(&img).unwrap();
        for (m, d) in g.magnitude.values().iter().zip(g.direction.values()) {
            assert!(*m >= 0.0);
            assert!(*d >= -FRAC_PI_2 - 1e-15 && *d <= FRAC_PI_2 + 1e-15);
        }
    }

    #[test]
    fn default_gaussian_radius_covers_three_sigma() {
        let cfg = GaussianConfig::<f64>::default();
        assert_eq!(cfg.radius, 6);
        assert!((cfg.sigma - 1.76).abs() < 1e-15);
        assert_eq!(GaussianConfig::with_sigma(0.4f64).radius, 2);
    }

    #[test]
    fn impulse_response_is_renormalized_kernel() {
        // Oracle: direct summation of the truncated Gaussian.
        let sigma = 1.76f64;
        let mut z = 0.0;
        for m in -6i32..=6 {
            for n in -6i32..=6 {
                z += (-((m * m + n * n) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        let mut values = vec![0.0; 15 * 15];
        values[7 * 15 + 7] = 1.0;
        let img = GrayImage::new(15, 15, values).unwrap();
        let out = gaussian_blur(&img, &GaussianConfig::default()).unwrap();
        assert!((out.get(7, 7) - 1.0 / z).abs() < 1e-12, "centre weight");
        let expect_23 = (-(4.0 + 9.0) / (2.0 * sigma * sigma)).exp() / z;
        assert!((out.get(9, 10) - expect_23).abs() < 1e-12, "offset (2,3) weight");
        assert!(out.get(0, 0).abs() < 1e-15, "outside the kernel support");
    }

    #[test]
    fn constant_image_is_preserved() {
        let img: GrayImage = GrayImage::new(9, 11, vec![0.37; 99]).unwrap();
        let out = gaussian_blur(&img, &GaussianConfig::default()).unwrap();
        for v in out.values() {
            assert!((*v - 0.37).abs() < 1e-12);
        }
        let mean_in: f64 = img.values().iter().sum::<f64>() / 99.0;
        let mean_out: f64 = out.values().iter().sum::<f64>() / 99.0;
        assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn blur_matches_direct_2d_correlation() {
        let mut values = Vec::new();
        let mut state = 0x9e3779b9u64;
        for _ in 0..7 * 9 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            values.push((state >> 11) as f64 / (1u64 << 53) as f64);
        }
        let img = GrayImage::new(7, 9, values).unwrap();
        let cfg = GaussianConfig {
            sigma: 1.0,
            radius: 2,
        };
        let out = gaussian_blur(&img, &cfg).unwrap();

        // Brute-force 2D oracle with the same truncation and border.
        let mut weights = [[0.0f64; 5]; 5];
        let mut z = 0.0;
        for m in -2i32..=2 {
            for n in -2i32..=2 {
                let wv = (-((m * m + n * n) as f64) / 2.0).exp();
                weights[(m + 2) as usize][(n + 2) as usize] = wv;
                z += wv;
            }
        }
        for r in 0..7usize {
            for c in 0..9usize {
                let mut acc = 0.0;
                for m in -2i32..=2 {
                    for n in -2i32..=2 {
                        let rr = (r as i32 + m).clamp(0, 6) as usize;
                        let cc = (c as i32 + n).clamp(0, 8) as usize;
                        acc += weights[(m + 2) as usize][(n + 2) as usize] * img.get(rr, cc);
                    }
                }
                assert!((out.get(r, c) - acc / z).abs() < 1e-12, "pixel ({r},{c})");
            }
        }
    }

    #[test]
    fn blur_clamps_to_unit_interval() {
        let img: GrayImage = GrayImage::new(5, 5, vec![1.0; 25]).unwrap();
        let out = gaussian_blur(&img, &GaussianConfig::default()).unwrap();
        for v in out.values() {
            assert!(*v <= 1.0 && *v >= 0.0);
            assert!((*v - 1.0).abs() < 1e-12);
        }
        assert!(gaussian_blur(&img, &GaussianConfig { sigma: 0.0, radius: 2 }).is_err());
        assert!(gaussian_blur(&img, &GaussianConfig { sigma: 1.0, radius: 0 }).is_err());
    }
}
