//! Row-major grid containers: depth maps, intensity images, masks, and the
//! camera model they are defined against.
//!
//! Validity convention: a depth of exactly `0` marks a pixel with no
//! measurement. Every reduction in the crate runs over an explicit
//! [`ValidityMask`] so the convention stays in one place.

use crate::error::{Error, Result};
use crate::scalar::{upcast, Scalar};

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Grid(format!(
            "grid dimensions must be at least 1x1, got {height}x{width}"
        )));
    }
    Ok(())
}

fn check_len(height: usize, width: usize, len: usize) -> Result<()> {
    check_dims(height, width)?;
    let expected = height * width;
    if len != expected {
        return Err(Error::Grid(format!(
            "value buffer holds {len} entries, {height}x{width} needs {expected}"
        )));
    }
    Ok(())
}

fn shape_mismatch(lh: usize, lw: usize, rh: usize, rw: usize) -> Error {
    Error::ShapeMismatch {
        left_height: lh,
        left_width: lw,
        right_height: rh,
        right_width: rw,
    }
}

/// Rectangular region for sub-grid extraction, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    /// Checks that the rectangle is non-empty and lies inside an
    /// `image_height` x `image_width` grid.
    pub fn check_within(&self, image_height: usize, image_width: usize) -> Result<()> {
        let fits = self.height >= 1
            && self.width >= 1
            && self.top + self.height <= image_height
            && self.left + self.width <= image_width;
        if fits {
            Ok(())
        } else {
            Err(Error::CropOutOfBounds {
                top: self.top,
                left: self.left,
                height: self.height,
                width: self.width,
                image_height,
                image_width,
            })
        }
    }
}

/// Per-pixel boolean grid marking which pixels carry a measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        check_len(height, width, bits.len())?;
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// All-false mask (no valid pixels).
    pub fn all_invalid(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            bits: vec![false; height * width],
        })
    }

    /// All-true mask.
    pub fn all_valid(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            bits: vec![true; height * width],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, valid: bool) {
        self.bits[row * self.width + col] = valid;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of valid pixels.
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Pixel-wise conjunction. Shapes must match.
    pub fn and(&self, other: &ValidityMask) -> Result<ValidityMask> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(ValidityMask {
            height: self.height,
            width: self.width,
            bits,
        })
    }

    pub fn crop(&self, rect: &CropRect) -> Result<ValidityMask> {
        rect.check_within(self.height, self.width)?;
        let mut bits = Vec::with_capacity(rect.height * rect.width);
        for r in rect.top..rect.top + rect.height {
            let base = r * self.width;
            bits.extend_from_slice(&self.bits[base + rect.left..base + rect.left + rect.width]);
        }
        Ok(ValidityMask {
            height: rect.height,
            width: rect.width,
            bits,
        })
    }
}

/// Dense row-major depth grid in metres. `0` marks an invalid pixel, all
/// other values are finite and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T = f64> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> DepthMap<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        check_len(height, width, values.len())?;
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < T::zero() {
                return Err(Error::Grid(format!(
                    "depth at pixel ({}, {}) is {}, must be finite and >= 0",
                    i / width,
                    i % width,
                    v
                )));
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Fully invalid map.
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            values: vec![T::zero(); height * width],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    /// Writes one pixel. The value must respect the container invariant.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        assert!(
            value.is_finite() && value >= T::zero(),
            "depth must be finite and >= 0, got {value}"
        );
        self.values[row * self.width + col] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.get(row, col) > T::zero()
    }

    /// Mask with a bit set exactly where the stored value is > 0.
    pub fn validity_mask(&self) -> ValidityMask {
        ValidityMask {
            height: self.height,
            width: self.width,
            bits: self.values.iter().map(|v| *v > T::zero()).collect(),
        }
    }

    pub fn crop(&self, rect: &CropRect) -> Result<DepthMap<T>> {
        rect.check_within(self.height, self.width)?;
        let mut values = Vec::with_capacity(rect.height * rect.width);
        for r in rect.top..rect.top + rect.height {
            let base = r * self.width;
            values.extend_from_slice(&self.values[base + rect.left..base + rect.left + rect.width]);
        }
        Ok(DepthMap {
            height: rect.height,
            width: rect.width,
            values,
        })
    }
}

/// Dense row-major intensity image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T = f64> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> GrayImage<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        check_len(height, width, values.len())?;
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < T::zero() || *v > T::one() {
                return Err(Error::Grid(format!(
                    "intensity at pixel ({}, {}) is {}, must lie in [0, 1]",
                    i / width,
                    i % width,
                    v
                )));
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Unconstrained finite-valued grid: gradients, directions, and other
/// signed per-pixel quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T = f64> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> ScalarField<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        check_len(height, width, values.len())?;
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Grid(format!(
                    "field value at pixel ({}, {}) is {}, must be finite",
                    i / width,
                    i % width,
                    v
                )));
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            values: vec![T::zero(); height * width],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        assert!(value.is_finite(), "field values must be finite, got {value}");
        self.values[row * self.width + col] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Grid with `channels` values per pixel (channel-contiguous layout).
/// Used for per-pixel class scores and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelField<T = f64> {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<T>,
}

impl<T: Scalar> ChannelField<T> {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        check_dims(height, width)?;
        if channels == 0 {
            return Err(Error::Grid("channel count must be at least 1".into()));
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(Error::Grid(format!(
                "value buffer holds {} entries, {height}x{width}x{channels} needs {expected}",
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Grid(format!(
                    "channel value at flat index {i} is {v}, must be finite"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![T::zero(); height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Channel slice of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let base = (row * self.width + col) * self.channels;
        &self.values[base..base + self.channels]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        debug_assert!(channel < self.channels);
        self.values[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: T) {
        assert!(value.is_finite(), "channel values must be finite, got {value}");
        debug_assert!(channel < self.channels);
        self.values[(row * self.width + col) * self.channels + channel] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Pinhole camera: focal lengths and principal point, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T = f64> {
    pub fx: T,
    pub fy: T,
    pub ox: T,
    pub oy: T,
}

impl<T: Scalar> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, ox: T, oy: T) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && fx > T::zero() && fy > T::zero()) {
            return Err(Error::Config(format!(
                "focal lengths must be finite and > 0, got fx={fx} fy={fy}"
            )));
        }
        if !(ox.is_finite() && oy.is_finite()) {
            return Err(Error::Config(format!(
                "principal point must be finite, got ox={ox} oy={oy}"
            )));
        }
        Ok(Self { fx, fy, ox, oy })
    }
}

/// Evaluation mask for a depth cap: a pixel participates iff the ground
/// truth is valid and `lo < gt <= hi`. `pred` only contributes its shape,
/// which must match.
///
/// With `lo = 0` and `hi = +inf` this reduces to `gt.validity_mask()`.
pub fn apply_cap<T: Scalar>(
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    lo: T,
    hi: T,
) -> Result<ValidityMask> {
    if pred.shape() != gt.shape() {
        return Err(shape_mismatch(
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width(),
        ));
    }
    if !(lo >= T::zero() && lo < hi) {
        return Err(Error::Config(format!(
            "cap bounds must satisfy 0 <= lo < hi, got lo={} hi={}",
            upcast(lo),
            upcast(hi)
        )));
    }
    let bits = gt.values().iter().map(|g| *g > lo && *g <= hi).collect();
    ValidityMask::new(gt.height(), gt.width(), bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> DepthMap {
        DepthMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn validity_tracks_positive_values() {
        let m = map(2, 2, &[0.0, 1.5, 2.0, 0.0]);
        let mask = m.validity_mask();
        assert_eq!(mask.bits(), &[false, true, true, false]);
        assert_eq!(mask.popcount(), 2);
    }

    #[test]
    fn popcount_plus_invalid_is_total() {
        let m = map(3, 2, &[0.0, 1.0, 0.5, 0.0, 2.0, 7.25]);
        let mask = m.validity_mask();
        let invalid = mask.bits().iter().filter(|b| !**b).count();
        assert_eq!(mask.popcount() + invalid, 6);
    }

    #[test]
    fn rejects_negative_and_non_finite_depths() {
        assert!(DepthMap::new(1, 2, vec![1.0, -0.5]).is_err());
        assert!(DepthMap::new(1, 2, vec![f64::NAN, 1.0]).is_err());
        assert!(DepthMap::new(1, 2, vec![f64::INFINITY, 1.0]).is_err());
        assert!(DepthMap::<f64>::new(0, 2, vec![]).is_err());
        assert!(DepthMap::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn gray_image_bounds() {
        assert!(GrayImage::new(1, 2, vec![0.0, 1.0]).is_ok());
        assert!(GrayImage::new(1, 2, vec![0.0, 1.0 + 1e-9]).is_err());
        assert!(GrayImage::new(1, 2, vec![-0.1, 0.5]).is_err());
    }

    #[test]
    fn cap_example() {
        let gt = map(1, 2, &[0.5, 90.0]);
        let pred = map(1, 2, &[1.0, 1.0]);
        let mask = apply_cap(&pred, &gt, 0.0, 80.0).unwrap();
        assert_eq!(mask.bits(), &[true, false]);
    }

    #[test]
    fn cap_with_trivial_bounds_is_validity() {
        let gt = map(2, 3, &[0.0, 0.1, 5.0, 80.0, 1e6, 0.0]);
        let pred = DepthMap::zeros(2, 3).unwrap();
        let mask = apply_cap(&pred, &gt, 0.0, f64::INFINITY).unwrap();
        assert_eq!(mask, gt.validity_mask());
    }

    #[test]
    fn cap_boundary_is_half_open() {
        // lo excluded, hi included
        let gt = map(1, 3, &[1.0, 2.0, 3.0]);
        let pred = map(1, 3, &[1.0, 1.0, 1.0]);
        let mask = apply_cap(&pred, &gt, 1.0, 3.0).unwrap();
        assert_eq!(mask.bits(), &[false, true, true]);
    }

    #[test]
    fn cap_shape_and_bound_errors() {
        let gt = map(1, 2, &[1.0, 2.0]);
        let pred = map(2, 1, &[1.0, 2.0]);
        assert!(matches!(
            apply_cap(&pred, &gt, 0.0, 80.0),
            Err(Error::ShapeMismatch { .. })
        ));
        let pred = map(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            apply_cap(&pred, &gt, 5.0, 5.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            apply_cap(&pred, &gt, -1.0, 5.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn crop_extracts_subgrid() {
        let m = map(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let c = m.crop(&CropRect::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.shape(), (2, 2));
        assert_eq!(c.values(), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn crop_composition_matches_offset_rect() {
        let m = map(4, 5, &(0..20).map(|i| i as f64 + 1.0).collect::<Vec<_>>());
        let a = CropRect::new(1, 1, 3, 4);
        let b = CropRect::new(1, 2, 2, 2);
        let ab = CropRect::new(a.top + b.top, a.left + b.left, b.height, b.width);
        let two_step = m.crop(&a).unwrap().crop(&b).unwrap();
        let one_step = m.crop(&ab).unwrap();
        assert_eq!(two_step, one_step);
    }

    #[test]
    fn crop_out_of_bounds() {
        let m = map(2, 2, &[1.0; 4]);
        assert!(matches!(
            m.crop(&CropRect::new(1, 0, 2, 1)),
            Err(Error::CropOutOfBounds { .. })
        ));
        assert!(matches!(
            m.crop(&CropRect::new(0, 0, 0, 1)),
            Err(Error::CropOutOfBounds { .. })
        ));
    }

    #[test]
    fn mask_and_requires_matching_shape() {
        let a = ValidityMask::all_valid(2, 2).unwrap();
        let b = ValidityMask::all_invalid(2, 3).unwrap();
        assert!(matches!(a.and(&b), Err(Error::ShapeMismatch { .. })));
        let c = ValidityMask::new(2, 2, vec![true, false, true, false]).unwrap();
        assert_eq!(a.and(&c).unwrap(), c);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(700.0, 700.0, 320.0, 240.0).is_ok());
        assert!(CameraIntrinsics::new(0.0, 700.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(700.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(f64::NAN, 700.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn channel_field_layout() {
        let f = ChannelField::new(1, 2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(f.pixel(0, 1), &[3.0, 4.0, 5.0]);
        assert_eq!(f.get(0, 0, 2), 2.0);
    }

    #[test]
    fn f32_instantiation_compiles_and_matches() {
        let m = DepthMap::<f32>::new(1, 2, vec![0.0, 2.5]).unwrap();
        assert_eq!(m.validity_mask().popcount(), 1);
        assert_eq!(m.get(0, 1), 2.5f32);
    }
}
