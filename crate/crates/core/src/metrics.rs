//! Standard evaluation metrics for depth maps and normal maps.
//!
//! All statistics are taken over the evaluation pixels: the optional
//! mask intersected with validity where the input type carries it.
//! Reports are plain `f64` structs with key=value and CSV renderers so
//! callers can print or aggregate them without reformatting.

use crate::error::{Error, Result};
use crate::geometry::{vec3, NormalMap};
use crate::grid::{DepthMap, ValidityMask};
use crate::scalar::{upcast, Scalar};

/// Depth error statistics over the evaluation pixels.
///
/// `silog` is the scale-invariant log error `mean(d^2) - mean(d)^2/2`
/// with `d = ln(pred) - ln(gt)`. The `delta*` fields are threshold
/// accuracies with a strict `< 1.25^k` comparison. `imae`/`irmse` work
/// on inverse depth (`scale / depth`); the `*_literal` variants are the
/// plain reciprocals `1/mae` and `1/rmse`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetricsReport {
    pub silog: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub abs_rel: f64,
    pub sqr_rel: f64,
    pub log10: f64,
    pub mae: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub imae: f64,
    pub irmse: f64,
    pub imae_literal: f64,
    pub irmse_literal: f64,
    pub n_pixels: usize,
}

macro_rules! depth_fields {
    ($m:ident) => {
        [
            ("silog", $m.silog),
            ("delta1", $m.delta1),
            ("delta2", $m.delta2),
            ("delta3", $m.delta3),
            ("abs_rel", $m.abs_rel),
            ("sqr_rel", $m.sqr_rel),
            ("log10", $m.log10),
            ("mae", $m.mae),
            ("rmse", $m.rmse),
            ("rmse_log", $m.rmse_log),
            ("imae", $m.imae),
            ("irmse", $m.irmse),
            ("imae_literal", $m.imae_literal),
            ("irmse_literal", $m.irmse_literal),
        ]
    };
}

impl DepthMetricsReport {
    pub fn kv_block(&self) -> String {
        let mut parts: Vec<String> = depth_fields!(self)
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        parts.push(format!("n_pixels={}", self.n_pixels));
        parts.join(" ")
    }

    pub fn csv_header() -> &'static str {
        "silog,delta1,delta2,delta3,abs_rel,sqr_rel,log10,mae,rmse,rmse_log,\
         imae,irmse,imae_literal,irmse_literal,n_pixels"
    }

    pub fn csv_row(&self) -> String {
        let mut parts: Vec<String> = depth_fields!(self)
            .iter()
            .map(|(_, v)| format!("{v}"))
            .collect();
        parts.push(format!("{}", self.n_pixels));
        parts.join(",")
    }
}

/// Depth metrics with inverse-depth errors in units of `1/depth`.
pub fn depth_metrics<T: Scalar>(
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    mask: Option<&ValidityMask>,
) -> Result<DepthMetricsReport> {
    depth_metrics_scaled(pred, gt, mask, 1.0)
}

/// Depth metrics with the inverse-depth errors computed on
/// `inverse_scale / depth` (e.g. 1000 turns meters into 1/km).
pub fn depth_metrics_scaled<T: Scalar>(
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    mask: Option<&ValidityMask>,
    inverse_scale: f64,
) -> Result<DepthMetricsReport> {
    if !(inverse_scale.is_finite() && inverse_scale > 0.0) {
        return Err(Error::Config(format!(
            "inverse scale must be finite and > 0, got {inverse_scale}"
        )));
    }
    let (h, w) = pred.shape();
    if gt.shape() != (h, w) {
        return Err(Error::ShapeMismatch {
            left_height: h,
            left_width: w,
            right_height: gt.height(),
            right_width: gt.width(),
        });
    }
    if let Some(m) = mask {
        if m.shape() != (h, w) {
            return Err(Error::ShapeMismatch {
                left_height: h,
                left_width: w,
                right_height: m.height(),
                right_width: m.width(),
            });
        }
    }

    let mut n = 0usize;
    let (mut sum_d, mut sum_d2) = (0.0f64, 0.0);
    let (mut hits1, mut hits2, mut hits3) = (0usize, 0, 0);
    let (mut abs_rel, mut sqr_rel, mut log10) = (0.0f64, 0.0, 0.0);
    let (mut abs_err, mut sq_err) = (0.0f64, 0.0);
    let (mut inv_abs, mut inv_sq) = (0.0f64, 0.0);
    for r in 0..h {
        for c in 0..w {
            if !mask.map_or(true, |m| m.get(r, c)) {
                continue;
            }
            let p = upcast(pred.get(r, c));
            let g = upcast(gt.get(r, c));
            for v in [p, g] {
                if v <= 0.0 {
                    return Err(Error::NonPositiveValue {
                        row: r,
                        col: c,
                        value: v,
                    });
                }
            }
            n += 1;
            let d = p.ln() - g.ln();
            sum_d += d;
            sum_d2 += d * d;
            let ratio = (p / g).max(g / p);
            hits1 += (ratio < 1.25) as usize;
            hits2 += (ratio < 1.25f64.powi(2)) as usize;
            hits3 += (ratio < 1.25f64.powi(3)) as usize;
            abs_rel += (p - g).abs() / g;
            sqr_rel += (p - g).powi(2) / g;
            log10 += (p.log10() - g.log10()).abs();
            abs_err += (p - g).abs();
            sq_err += (p - g).powi(2);
            let di = inverse_scale / p - inverse_scale / g;
            inv_abs += di.abs();
            inv_sq += di * di;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let count = n as f64;
    let mae = abs_err / count;
    let rmse = (sq_err / count).sqrt();
    Ok(DepthMetricsReport {
        silog: sum_d2 / count - 0.5 * (sum_d / count).powi(2),
        delta1: hits1 as f64 / count,
        delta2: hits2 as f64 / count,
        delta3: hits3 as f64 / count,
        abs_rel: abs_rel / count,
        sqr_rel: sqr_rel / count,
        log10: log10 / count,
        mae,
        rmse,
        rmse_log: (sum_d2 / count).sqrt(),
        imae: inv_abs / count,
        irmse: (inv_sq / count).sqrt(),
        imae_literal: 1.0 / mae,
        irmse_literal: 1.0 / rmse,
        n_pixels: n,
    })
}

/// Angular error statistics between two normal maps, in degrees.
/// Accuracies count angles less than or equal to the threshold; the
/// median is the lower middle of the sorted angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalsMetricsReport {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub rmse_deg: f64,
    pub acc_11_25: f64,
    pub acc_22_5: f64,
    pub acc_30: f64,
    pub n_pixels: usize,
}

macro_rules! normals_fields {
    ($m:ident) => {
        [
            ("mean_deg", $m.mean_deg),
            ("median_deg", $m.median_deg),
            ("rmse_deg", $m.rmse_deg),
            ("acc_11_25", $m.acc_11_25),
            ("acc_22_5", $m.acc_22_5),
            ("acc_30", $m.acc_30),
        ]
    };
}

impl NormalsMetricsReport {
    pub fn kv_block(&self) -> String {
        let mut parts: Vec<String> = normals_fields!(self)
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        parts.push(format!("n_pixels={}", self.n_pixels));
        parts.join(" ")
    }

    pub fn csv_header() -> &'static str {
        "mean_deg,median_deg,rmse_deg,acc_11_25,acc_22_5,acc_30,n_pixels"
    }

    pub fn csv_row(&self) -> String {
        let mut parts: Vec<String> = normals_fields!(self)
            .iter()
            .map(|(_, v)| format!("{v}"))
            .collect();
        parts.push(format!("{}", self.n_pixels));
        parts.join(",")
    }
}

/// Angular metrics over pixels valid in both maps (and in the mask
/// when given).
pub fn normals_metrics<T: Scalar>(
    pred: &NormalMap<T>,
    gt: &NormalMap<T>,
    mask: Option<&ValidityMask>,
) -> Result<NormalsMetricsReport> {
    let (h, w) = pred.shape();
    if gt.shape() != (h, w) {
        return Err(Error::ShapeMismatch {
            left_height: h,
            left_width: w,
            right_height: gt.height(),
            right_width: gt.width(),
        });
    }
    let mut effective = pred.validity().and(gt.validity())?;
    if let Some(m) = mask {
        effective = effective.and(m)?;
    }
    let mut angles = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if effective.get(r, c) {
                let a = pred.get(r, c).expect("valid by mask");
                let b = gt.get(r, c).expect("valid by mask");
                let cosine = upcast(vec3::dot(a, b)).clamp(-1.0, 1.0);
                angles.push(cosine.acos().to_degrees());
            }
        }
    }
    if angles.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = angles.len();
    let count = n as f64;
    let mut sorted = angles.clone();
    sorted.sort_by(f64::total_cmp);
    let frac_le = |t: f64| angles.iter().filter(|a| **a <= t).count() as f64 / count;
    Ok(NormalsMetricsReport {
        mean_deg: angles.iter().sum::<f64>() / count,
        median_deg: sorted[(n - 1) / 2],
        rmse_deg: (angles.iter().map(|a| a * a).sum::<f64>() / count).sqrt(),
        acc_11_25: frac_le(11.25),
        acc_22_5: frac_le(22.5),
        acc_30: frac_le(30.0),
        n_pixels: n,
    })
}
