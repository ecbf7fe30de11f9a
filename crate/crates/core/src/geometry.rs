//! Backprojection and surface-normal estimation from depth.
//!
//! A depth pixel `(row, col)` with value `z` backprojects through the
//! pinhole model to `x = z (col - ox) / fx`, `y = z (row - oy) / fy`.
//! Normals come from an affine plane fit over each pixel's window: solve
//! `(D'D + ridge I) s = D' 1` for the neighborhood points `D`, normalize
//! `s`, and flip the result to face the camera (dot with the viewing ray
//! through the neighborhood centroid <= 0).

use crate::error::{Error, Result};
use crate::grid::{CameraIntrinsics, CropRect, DepthMap, ValidityMask};
use crate::scalar::{cast, upcast, Scalar};

pub(crate) mod vec3 {
    use crate::scalar::Scalar;

    #[inline]
    pub fn dot<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[inline]
    pub fn norm<T: Scalar>(a: [T; 3]) -> T {
        dot(a, a).sqrt()
    }

    #[inline]
    pub fn normalize<T: Scalar>(a: [T; 3]) -> Option<[T; 3]> {
        let n = norm(a);
        if n > T::zero() {
            Some([a[0] / n, a[1] / n, a[2] / n])
        } else {
            None
        }
    }

    #[inline]
    pub fn neg<T: Scalar>(a: [T; 3]) -> [T; 3] {
        [-a[0], -a[1], -a[2]]
    }
}

/// Backprojected points plus the flat pixel index each one came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T = f64> {
    pub points: Vec<[T; 3]>,
    pub pixel_index: Vec<usize>,
}

impl<T: Scalar> PointCloud<T> {
    /// Validating constructor: one index per point, all depths positive.
    pub fn new(points: Vec<[T; 3]>, pixel_index: Vec<usize>) -> Result<Self> {
        if points.len() != pixel_index.len() {
            return Err(Error::Grid(format!(
                "{} points but {} pixel indices",
                points.len(),
                pixel_index.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite() && p[2].is_finite() && p[2] > T::zero()) {
                return Err(Error::Grid(format!(
                    "point {i} is [{}, {}, {}]; coordinates must be finite with z > 0",
                    p[0], p[1], p[2]
                )));
            }
        }
        Ok(Self {
            points,
            pixel_index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-pixel unit surface normals with a validity mask. Valid entries
/// have length 1 within 1e-9 (loosened to a few ulps for `f32`);
/// invalid entries are stored as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap<T = f64> {
    normals: Vec<[T; 3]>,
    valid: ValidityMask,
}

fn unit_tolerance<T: Scalar>() -> T {
    cast::<T>(1e-9).max(T::epsilon() * cast(8.0))
}

impl<T: Scalar> NormalMap<T> {
    pub fn new(normals: Vec<[T; 3]>, valid: ValidityMask) -> Result<Self> {
        let (h, w) = valid.shape();
        if normals.len() != h * w {
            return Err(Error::Grid(format!(
                "{} normals for a {h}x{w} mask",
                normals.len()
            )));
        }
        let tol = unit_tolerance::<T>();
        let mut stored = normals;
        for (i, n) in stored.iter_mut().enumerate() {
            if valid.get(i / w, i % w) {
                let len = vec3::norm(*n);
                if !len.is_finite() || (len - T::one()).abs() > tol {
                    return Err(Error::Domain(format!(
                        "normal at pixel ({}, {}) has length {len}, expected 1",
                        i / w,
                        i % w
                    )));
                }
            } else {
                *n = [T::zero(); 3];
            }
        }
        Ok(Self {
            normals: stored,
            valid,
        })
    }

    pub fn all_invalid(height: usize, width: usize) -> Result<Self> {
        let valid = ValidityMask::all_invalid(height, width)?;
        Ok(Self {
            normals: vec![[T::zero(); 3]; height * width],
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.valid.height()
    }

    pub fn width(&self) -> usize {
        self.valid.width()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.valid.shape()
    }

    /// The normal at a pixel, or `None` when the pixel is invalid.
    pub fn get(&self, row: usize, col: usize) -> Option<[T; 3]> {
        if self.valid.get(row, col) {
            Some(self.normals[row * self.width() + col])
        } else {
            None
        }
    }

    pub fn validity(&self) -> &ValidityMask {
        &self.valid
    }

    /// Marks a pixel valid with the given unit normal.
    pub fn set_valid(&mut self, row: usize, col: usize, normal: [T; 3]) {
        let len = vec3::norm(normal);
        assert!(
            (len - T::one()).abs() <= unit_tolerance::<T>(),
            "normal must be unit length, got {len}"
        );
        let w = self.width();
        self.normals[row * w + col] = normal;
        self.valid.set(row, col, true);
    }

    pub fn set_invalid(&mut self, row: usize, col: usize) {
        let w = self.width();
        self.normals[row * w + col] = [T::zero(); 3];
        self.valid.set(row, col, false);
    }

    pub fn crop(&self, rect: &CropRect) -> Result<NormalMap<T>> {
        let valid = self.valid.crop(rect)?;
        let mut normals = Vec::with_capacity(rect.height * rect.width);
        for r in rect.top..rect.top + rect.height {
            for c in rect.left..rect.left + rect.width {
                normals.push(self.normals[r * self.width() + c]);
            }
        }
        Ok(NormalMap { normals, valid })
    }
}

/// Plane-fit parameters: neighborhood window edge (odd, >= 3), minimum
/// point count, and the ridge added to the normal equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFitConfig<T = f64> {
    pub window: usize,
    pub min_points: usize,
    pub ridge: T,
}

impl<T: Scalar> Default for PlaneFitConfig<T> {
    fn default() -> Self {
        Self {
            window: 5,
            min_points: 3,
            ridge: cast(1e-9),
        }
    }
}

impl<T: Scalar> PlaneFitConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.min_points < 3 {
            return Err(Error::Config(format!(
                "min_points must be >= 3, got {}",
                self.min_points
            )));
        }
        if !(self.ridge.is_finite() && self.ridge >= T::zero()) {
            return Err(Error::Config(format!(
                "ridge must be finite and >= 0, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Backprojects every valid pixel. Invalid pixels contribute nothing.
pub fn backproject<T: Scalar>(depth: &DepthMap<T>, cam: &CameraIntrinsics<T>) -> PointCloud<T> {
    let (h, w) = depth.shape();
    let mut points = Vec::new();
    let mut pixel_index = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let z = depth.get(r, c);
            if z > T::zero() {
                points.push(backproject_pixel(r, c, z, cam));
                pixel_index.push(r * w + c);
            }
        }
    }
    PointCloud {
        points,
        pixel_index,
    }
}

#[inline]
fn backproject_pixel<T: Scalar>(row: usize, col: usize, z: T, cam: &CameraIntrinsics<T>) -> [T; 3] {
    let u = cast::<T>(col as f64);
    let v = cast::<T>(row as f64);
    [z * (u - cam.ox) / cam.fx, z * (v - cam.oy) / cam.fy, z]
}

/// Ascending eigenvalues of a symmetric 3x3 matrix (closed form).
/// Used only to detect rank deficiency, so f64 precision suffices.
fn sym_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    if p1 == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = [
        [(m[0][0] - q) / p, m[0][1] / p, m[0][2] / p],
        [m[0][1] / p, (m[1][1] - q) / p, m[1][2] / p],
        [m[0][2] / p, m[1][2] / p, (m[2][2] - q) / p],
    ];
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let two_thirds_pi = 2.0 * std::f64::consts::PI / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + two_thirds_pi).cos();
    let mid = 3.0 * q - hi - lo;
    [lo, mid, hi]
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// 3x3 matrix, or `None` if a pivot is non-positive.
fn cholesky3<T: Scalar>(m: &[[T; 3]; 3]) -> Option<[[T; 3]; 3]> {
    let mut l = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            if i == j {
                if s <= T::zero() {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn solve_cholesky3<T: Scalar>(l: &[[T; 3]; 3], b: [T; 3]) -> [T; 3] {
    // Forward substitution L y = b, then back substitution L' x = y.
    let mut y = [T::zero(); 3];
    for i in 0..3 {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [T::zero(); 3];
    for i in (0..3).rev() {
        let mut s = y[i];
        for k in i + 1..3 {
            s = s - l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Relative eigenvalue floor below which the normal equations are
/// declared rank-deficient (collinear samples, or a plane through the
/// camera center). Ordinary fp noise sits near 1e-16; genuine
/// neighborhoods stay far above this.
const DEGENERACY_RATIO: f64 = 1e-12;

/// Fits the affine plane `<s, p> = 1` to a neighborhood point list and
/// returns its camera-facing unit normal.
pub fn fit_normal<T: Scalar>(points: &[[T; 3]], cfg: &PlaneFitConfig<T>) -> Result<[T; 3]> {
    cfg.validate()?;
    if points.len() < cfg.min_points {
        return Err(Error::InsufficientPoints {
            got: points.len(),
            required: cfg.min_points,
        });
    }
    let mut m = [[T::zero(); 3]; 3];
    let mut b = [T::zero(); 3];
    for p in points {
        for i in 0..3 {
            b[i] = b[i] + p[i];
            for j in i..3 {
                m[i][j] = m[i][j] + p[i] * p[j];
            }
        }
    }
    m[1][0] = m[0][1];
    m[2][0] = m[0][2];
    m[2][1] = m[1][2];

    let mf = [
        [upcast(m[0][0]), upcast(m[0][1]), upcast(m[0][2])],
        [upcast(m[1][0]), upcast(m[1][1]), upcast(m[1][2])],
        [upcast(m[2][0]), upcast(m[2][1]), upcast(m[2][2])],
    ];
    let eigs = sym_eigenvalues(&mf);
    if !(eigs[2] > 0.0) || eigs[0] <= eigs[2] * DEGENERACY_RATIO {
        return Err(Error::DegenerateGeometry);
    }

    let mut ridged = m;
    for i in 0..3 {
        ridged[i][i] = ridged[i][i] + cfg.ridge;
    }
    let l = cholesky3(&ridged).ok_or(Error::DegenerateGeometry)?;
    let s = solve_cholesky3(&l, b);
    let mut n = vec3::normalize(s).ok_or(Error::DegenerateGeometry)?;

    let count = cast::<T>(points.len() as f64);
    let centroid = [b[0] / count, b[1] / count, b[2] / count];
    if vec3::dot(n, centroid) > T::zero() {
        n = vec3::neg(n);
    }
    Ok(n)
}

/// Estimates a normal at every valid pixel from its backprojected
/// window. Pixels whose fit cannot be formed (too few valid neighbors,
/// degenerate geometry) come back invalid rather than failing the call.
pub fn normals_from_depth<T: Scalar>(
    depth: &DepthMap<T>,
    cam: &CameraIntrinsics<T>,
    cfg: &PlaneFitConfig<T>,
) -> Result<NormalMap<T>> {
    cfg.validate()?;
    let (h, w) = depth.shape();
    let mut points: Vec<Option<[T; 3]>> = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let z = depth.get(r, c);
            points.push(if z > T::zero() {
                Some(backproject_pixel(r, c, z, cam))
            } else {
                None
            });
        }
    }

    let half = cfg.window / 2;
    let mut out = NormalMap::all_invalid(h, w)?;
    let mut neighborhood: Vec<[T; 3]> = Vec::with_capacity(cfg.window * cfg.window);
    for r in 0..h {
        let r0 = r.saturating_sub(half);
        let r1 = (r + half).min(h - 1);
        for c in 0..w {
            if points[r * w + c].is_none() {
                continue;
            }
            let c0 = c.saturating_sub(half);
            let c1 = (c + half).min(w - 1);
            neighborhood.clear();
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    if let Some(p) = points[rr * w + cc] {
                        neighborhood.push(p);
                    }
                }
            }
            if neighborhood.len() < cfg.min_points {
                continue;
            }
            match fit_normal(&neighborhood, cfg) {
                Ok(n) => out.set_valid(r, c, n),
                Err(Error::InsufficientPoints { .. }) | Err(Error::DegenerateGeometry) => {}
                Err(other) => return Err(other),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
    }

    #[test]
    fn backproject_examples() {
        let cam = CameraIntrinsics::new(1.0, 1.0, 3.0, 2.0).unwrap();
        let mut depth = DepthMap::zeros(4, 6).unwrap();
        depth.set(2, 3, 3.0); // at the principal point
        depth.set(2, 4, 2.0); // one pixel right of it
        let cloud = backproject(&depth, &cam);
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.pixel_index, vec![2 * 6 + 3, 2 * 6 + 4]);
        assert_eq!(cloud.points[0], [0.0, 0.0, 3.0]);
        assert_eq!(cloud.points[1], [2.0, 0.0, 2.0]);
    }

    #[test]
    fn point_cloud_validation() {
        assert!(PointCloud::new(vec![[0.0, 0.0, 1.0]], vec![0, 1]).is_err());
        assert!(PointCloud::new(vec![[0.0, 0.0, 0.0]], vec![0]).is_err());
        assert!(PointCloud::new(vec![[1.0, -2.0, 3.0]], vec![5]).is_ok());
    }

    #[test]
    fn frontoparallel_plane_gives_minus_z() {
        let points = vec![
            [0.0, 0.0, 5.0],
            [1.0, 0.0, 5.0],
            [0.0, 1.0, 5.0],
            [1.0, 1.0, 5.0],
        ];
        let n = fit_normal(&points, &PlaneFitConfig::default()).unwrap();
        assert_close(n[0], 0.0, 1e-9, "nx");
        assert_close(n[1], 0.0, 1e-9, "ny");
        assert_close(n[2], -1.0, 1e-9, "nz");
    }

    #[test]
    fn oblique_plane_normal_faces_camera() {
        // Points on x + y + z = 3, all with z > 0, spanning rank 3.
        let points = vec![
            [1.0, 1.0, 1.0],
            [2.0, 0.0, 1.0],
            [0.0, 2.0, 1.0],
            [0.5, 0.5, 2.0],
        ];
        let n = fit_normal(&points, &PlaneFitConfig::default()).unwrap();
        let expected = -(1.0 / 3.0f64.sqrt());
        for (i, c) in n.iter().enumerate() {
            assert_close(*c, expected, 1e-9, &format!("component {i}"));
        }
        let len = vec3::norm(n);
        assert!((len - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let line = vec![[1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [1.0, 2.0, 1.0]];
        assert!(matches!(
            fit_normal(&line, &PlaneFitConfig::default()),
            Err(Error::DegenerateGeometry)
        ));
        let through_origin = vec![[1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [3.0, 3.0, 3.0]];
        assert!(matches!(
            fit_normal(&through_origin, &PlaneFitConfig::default()),
            Err(Error::DegenerateGeometry)
        ));
    }

    #[test]
    fn too_few_points_is_reported() {
        let pts = vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]];
        match fit_normal(&pts, &PlaneFitConfig::default()).unwrap_err() {
            Error::InsufficientPoints { got, required } => {
                assert_eq!((got, required), (2, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    /// Renders `z = offset / <n_unit, ray>` for a plane with unit normal
    /// pointing toward the camera.
    fn plane_depth(
        h: usize,
        w: usize,
        cam: &CameraIntrinsics,
        n: [f64; 3],
        offset: f64,
    ) -> DepthMap {
        let mut depth = DepthMap::zeros(h, w).unwrap();
        for r in 0..h {
            for c in 0..w {
                let ray = [
                    (c as f64 - cam.ox) / cam.fx,
                    (r as f64 - cam.oy) / cam.fy,
                    1.0,
                ];
                let z = offset / vec3::dot(n, ray);
                depth.set(r, c, z);
            }
        }
        depth
    }

    #[test]
    fn normals_from_rendered_plane_match_analytic() {
        let cam = CameraIntrinsics::new(120.0, 110.0, 7.5, 8.5).unwrap();
        let n = vec3::normalize([0.2, -0.1, -1.0]).unwrap();
        let depth = plane_depth(16, 16, &cam, n, -4.0);
        let normals = normals_from_depth(&depth, &cam, &PlaneFitConfig::default()).unwrap();
        // The ridge perturbs the fit by roughly ridge / lambda_min,
        // well under 1e-4 degrees at these scales.
        for r in 2..14 {
            for c in 2..14 {
                let est = normals.get(r, c).expect("interior pixel must be valid");
                let cosine = vec3::dot(est, n).clamp(-1.0, 1.0);
                let angle_deg = cosine.acos().to_degrees();
                assert!(angle_deg <= 1e-4, "pixel ({r},{c}) off by {angle_deg} deg");
                assert!((vec3::norm(est) - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn depth_scaling_preserves_normal_direction() {
        let cam = CameraIntrinsics::new(90.0, 95.0, 6.0, 6.0).unwrap();
        let n = vec3::normalize([-0.15, 0.25, -1.0]).unwrap();
        let depth = plane_depth(13, 13, &cam, n, -3.0);
        let scaled = DepthMap::new(
            13,
            13,
            depth.values().iter().map(|v| v * 2.0).collect(),
        )
        .unwrap();
        let a = normals_from_depth(&depth, &cam, &PlaneFitConfig::default()).unwrap();
        let b = normals_from_depth(&scaled, &cam, &PlaneFitConfig::default()).unwrap();
        // Exact invariance holds only at ridge zero; the default ridge
        // moves each fit by well under 1e-4 degrees.
        for r in 0..13 {
            for c in 0..13 {
                let (na, nb) = (a.get(r, c).unwrap(), b.get(r, c).unwrap());
                let cosine = vec3::dot(na, nb).clamp(-1.0, 1.0);
                assert!(cosine.acos().to_degrees() < 1e-4);
            }
        }
    }

    #[test]
    fn sparse_neighborhoods_degrade_to_invalid_pixels() {
        let cam = CameraIntrinsics::new(50.0, 50.0, 5.0, 5.0).unwrap();
        let mut depth = DepthMap::zeros(11, 11).unwrap();
        depth.set(5, 5, 4.0); // a single isolated sample
        depth.set(0, 0, 3.0);
        depth.set(0, 1, 3.0);
        let normals = normals_from_depth(&depth, &cam, &PlaneFitConfig::default()).unwrap();
        assert_eq!(normals.validity().popcount(), 0);
    }

    #[test]
    fn dense_constant_map_has_valid_borders() {
        let cam = CameraIntrinsics::new(80.0, 80.0, 4.0, 4.0).unwrap();
        let depth = DepthMap::new(9, 9, vec![5.0; 81]).unwrap();
        let normals = normals_from_depth(&depth, &cam, &PlaneFitConfig::default()).unwrap();
        assert_eq!(normals.validity().popcount(), 81);
        for r in 0..9 {
            for c in 0..9 {
                let n = normals.get(r, c).unwrap();
                assert_close(n[2], -1.0, 1e-9, "nz");
            }
        }
    }

    #[test]
    fn normal_map_validates_unit_length() {
        let valid = ValidityMask::new(1, 2, vec![true, false]).unwrap();
        let err = NormalMap::new(vec![[0.5, 0.0, 0.0], [0.0; 3]], valid.clone());
        assert!(matches!(err, Err(Error::Domain(_))));
        let ok = NormalMap::new(vec![[0.0, 0.0, 1.0], [7.0, 7.0, 7.0]], valid).unwrap();
        // Invalid slots are normalized to zeros regardless of input.
        assert_eq!(ok.get(0, 1), None);
        assert_eq!(ok.get(0, 0), Some([0.0, 0.0, 1.0]));
    }

    #[test]
    fn normal_map_crop() {
        let mut m = NormalMap::all_invalid(3, 3).unwrap();
        m.set_valid(1, 2, [0.0, 0.0, -1.0]);
        let c = m.crop(&CropRect::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.shape(), (2, 2));
        assert_eq!(c.get(0, 1), Some([0.0, 0.0, -1.0]));
        assert_eq!(c.get(1, 1), None);
    }

    #[test]
    fn config_validation() {
        let bad: PlaneFitConfig = PlaneFitConfig {
            window: 4,
            ..PlaneFitConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad: PlaneFitConfig = PlaneFitConfig {
            min_points: 2,
            ..PlaneFitConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PlaneFitConfig {
            ridge: -1.0,
            ..PlaneFitConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
