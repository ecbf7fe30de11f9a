//! Training losses over depth pairs, with analytic gradients.
//!
//! Scale-invariant depth losses work on the log residual
//! `h = ln(pred) - ln(gt)`; the log-cosh loss is the one kind that uses
//! the linear residual `pred - gt`. Gradients are taken with respect to
//! the predicted depth and returned as a dense field that is zero off
//! the evaluation mask. The reverse-Huber and Huber losses couple every
//! pixel to the residual maximum through their branch threshold, and
//! their gradients carry that term, so finite differences match them to
//! first order everywhere off the (measure-zero) branch seams.

use crate::error::{Error, Result};
use crate::geometry::{vec3, NormalMap};
use crate::grid::{ChannelField, DepthMap, ScalarField, ValidityMask};
use crate::scalar::{cast, upcast, Scalar};

/// The loss families the evaluator knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Scale-invariant log loss, `mean(h^2) - lambda * mean(h)^2`.
    SiLog,
    /// Square root form, `theta * sqrt(mean(h^2) - lambda * mean(h)^2)`.
    SiLogPlus,
    /// Mean of `|h|` outside the threshold, quadratic inside.
    Huber,
    /// Reverse Huber: `|h|` inside the threshold, quadratic outside.
    BerHu,
    /// Mean absolute log residual.
    L1,
    /// Mean squared log residual.
    L2,
    /// Summed absolute log residual.
    L1Sum,
    /// Summed squared log residual.
    L2Sum,
    /// Mean of `(h^2 + alpha^2)^a`.
    Charbonnier,
    /// Summed `ln(cosh(pred - gt))` on linear depths.
    LogCosh,
    /// Distance-weighted sum of a per-pixel inner loss.
    Attention,
    /// Mean cosine dissimilarity between normal maps.
    Cosine,
    /// Inner depth loss plus `psi` times the cosine term.
    TwoFiveD,
    /// Mean categorical cross entropy over per-pixel logits.
    CrossEntropy,
}

/// How a kind folds per-pixel terms into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
    /// Neither a plain mean nor a plain sum of per-pixel terms.
    Composite,
}

impl Reduction {
    pub fn name(self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
            Reduction::Composite => "composite",
        }
    }
}

impl LossKind {
    pub const ALL: [LossKind; 14] = [
        LossKind::SiLog,
        LossKind::SiLogPlus,
        LossKind::Huber,
        LossKind::BerHu,
        LossKind::L1,
        LossKind::L2,
        LossKind::L1Sum,
        LossKind::L2Sum,
        LossKind::Charbonnier,
        LossKind::LogCosh,
        LossKind::Attention,
        LossKind::Cosine,
        LossKind::TwoFiveD,
        LossKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::SiLog => "silog",
            LossKind::SiLogPlus => "silog+",
            LossKind::Huber => "huber",
            LossKind::BerHu => "berhu",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::L1Sum => "l1+",
            LossKind::L2Sum => "l2+",
            LossKind::Charbonnier => "charbonnier",
            LossKind::LogCosh => "logcosh",
            LossKind::Attention => "attention",
            LossKind::Cosine => "cosine",
            LossKind::TwoFiveD => "2.5d",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let wanted = s.trim();
        if wanted == "cce" {
            return Ok(LossKind::CrossEntropy);
        }
        LossKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == wanted)
            .ok_or_else(|| Error::Config(format!("unknown loss kind \"{wanted}\"")))
    }

    pub fn reduction(self) -> Reduction {
        match self {
            LossKind::Huber
            | LossKind::BerHu
            | LossKind::L1
            | LossKind::L2
            | LossKind::Charbonnier
            | LossKind::Cosine
            | LossKind::CrossEntropy => Reduction::Mean,
            LossKind::L1Sum | LossKind::L2Sum | LossKind::LogCosh | LossKind::Attention => {
                Reduction::Sum
            }
            LossKind::SiLog | LossKind::SiLogPlus | LossKind::TwoFiveD => Reduction::Composite,
        }
    }
}

/// Loss selection plus every tunable the kinds use. Unused fields are
/// ignored by kinds that do not read them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec<T = f64> {
    pub kind: LossKind,
    /// Variance weighting of the scale-invariant kinds.
    pub lambda: T,
    /// Output scaling of the square-root scale-invariant kind.
    pub theta: T,
    /// Branch threshold divisor for Huber and reverse Huber.
    pub kappa: T,
    /// Charbonnier exponent.
    pub a: T,
    /// Charbonnier floor.
    pub alpha: T,
    /// Depth premultiplier inside the attention weights.
    pub beta: T,
    /// Weight of the cosine term in the combined 2.5D loss.
    pub psi: T,
    /// Per-pixel kind wrapped by attention or the 2.5D combination.
    /// `None` selects L1.
    pub inner: Option<LossKind>,
}

impl<T: Scalar> Default for LossSpec<T> {
    fn default() -> Self {
        Self {
            kind: LossKind::SiLog,
            lambda: cast(0.85),
            theta: cast(10.0),
            kappa: cast(5.0),
            a: cast(0.45),
            alpha: cast(1e-3),
            beta: T::one(),
            psi: cast(1e6),
            inner: None,
        }
    }
}

impl<T: Scalar> LossSpec<T> {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, T, bool); 6] = [
            (
                "lambda",
                self.lambda,
                self.lambda >= T::zero() && self.lambda <= T::one(),
            ),
            ("theta", self.theta, self.theta > T::zero()),
            ("kappa", self.kappa, self.kappa > T::zero()),
            ("a", self.a, self.a > T::zero()),
            ("alpha", self.alpha, self.alpha > T::zero()),
            ("beta", self.beta, self.beta > T::zero()),
        ];
        for (name, value, ok) in checks {
            if !(value.is_finite() && ok) {
                return Err(Error::Config(format!("invalid {name}: {value}")));
            }
        }
        if !(self.psi.is_finite() && self.psi >= T::zero()) {
            return Err(Error::Config(format!("invalid psi: {}", self.psi)));
        }
        if let Some(inner) = self.inner {
            match self.kind {
                LossKind::Attention => {
                    if !is_per_pixel_kind(inner) {
                        return Err(Error::Config(format!(
                            "attention inner loss must be a per-pixel kind, got \"{}\"",
                            inner.name()
                        )));
                    }
                }
                LossKind::TwoFiveD => {
                    if matches!(
                        inner,
                        LossKind::Cosine | LossKind::TwoFiveD | LossKind::CrossEntropy
                    ) {
                        return Err(Error::Config(format!(
                            "2.5d inner loss must be a depth loss, got \"{}\"",
                            inner.name()
                        )));
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "inner loss is only meaningful for attention and 2.5d, not \"{}\"",
                        other.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds a spec from `key=value` strings. `kind` is required; the
    /// numeric keys mirror the struct fields; `inner` names a kind.
    pub fn parse_kv<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        let mut spec = Self::default();
        let mut saw_kind = false;
        for item in items {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got \"{item}\"")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "kind" => {
                    spec.kind = LossKind::parse(value)?;
                    saw_kind = true;
                }
                "inner" => spec.inner = Some(LossKind::parse(value)?),
                _ => {
                    let parsed: f64 = value.parse().map_err(|_| {
                        Error::Config(format!("invalid number \"{value}\" for {key}"))
                    })?;
                    let v = cast::<T>(parsed);
                    match key {
                        "lambda" => spec.lambda = v,
                        "theta" => spec.theta = v,
                        "kappa" => spec.kappa = v,
                        "a" => spec.a = v,
                        "alpha" => spec.alpha = v,
                        "beta" => spec.beta = v,
                        "psi" => spec.psi = v,
                        _ => return Err(Error::Config(format!("unknown loss key \"{key}\""))),
                    }
                }
            }
        }
        if !saw_kind {
            return Err(Error::Config("loss spec needs kind=<name>".into()));
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn is_per_pixel_kind(kind: LossKind) -> bool {
    matches!(
        kind,
        LossKind::L1
            | LossKind::L2
            | LossKind::Charbonnier
            | LossKind::LogCosh
            | LossKind::BerHu
            | LossKind::Huber
    )
}

/// Residuals gathered over the evaluation mask, in pixel order.
struct Residuals<T> {
    idx: Vec<usize>,
    log: Vec<T>,
    lin: Vec<T>,
    pred: Vec<T>,
    gt: Vec<T>,
    width: usize,
}

fn gather<T: Scalar>(
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    mask: Option<&ValidityMask>,
) -> Result<Residuals<T>> {
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
    let mut out = Residuals {
        idx: Vec::new(),
        log: Vec::new(),
        lin: Vec::new(),
        pred: Vec::new(),
        gt: Vec::new(),
        width: w,
    };
    for r in 0..h {
        for c in 0..w {
            if mask.map_or(true, |m| m.get(r, c)) {
                let p = pred.get(r, c);
                let g = gt.get(r, c);
                for v in [p, g] {
                    if v <= T::zero() {
                        return Err(Error::NonPositiveValue {
                            row: r,
                            col: c,
                            value: upcast(v),
                        });
                    }
                }
                out.idx.push(r * w + c);
                out.log.push(p.ln() - g.ln());
                out.lin.push(p - g);
                out.pred.push(p);
                out.gt.push(g);
            }
        }
    }
    if out.idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(out)
}

#[inline]
fn signum0<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[inline]
fn log_cosh_stable<T: Scalar>(h: T) -> T {
    let a = h.abs();
    a + (-(a + a)).exp().ln_1p() - cast::<T>(std::f64::consts::LN_2)
}

/// Shared Huber/reverse-Huber machinery. The threshold is
/// `g = max|h| / kappa`; `small_is_linear` picks which side of `g` uses
/// the absolute value (true for reverse Huber). Returns the weighted
/// total, the per-pixel branch values, and, on request, `d(total)/dh`
/// per pixel including the coupling through `g` at the argmax pixel.
fn branched_loss<T: Scalar>(
    h: &[T],
    weights: &[T],
    kappa: T,
    small_is_linear: bool,
    want_grad: bool,
) -> (T, Vec<T>, Option<Vec<T>>) {
    let n = h.len();
    let mut arg = 0usize;
    for (i, v) in h.iter().enumerate() {
        if v.abs() > h[arg].abs() {
            arg = i;
        }
    }
    let g = h[arg].abs() / kappa;
    let mut per_pixel = vec![T::zero(); n];
    let mut grad = want_grad.then(|| vec![T::zero(); n]);
    if g == T::zero() {
        return (T::zero(), per_pixel, grad);
    }
    let two = cast::<T>(2.0);
    let mut total = T::zero();
    let mut coupling = T::zero();
    for i in 0..n {
        let a = h[i].abs();
        let linear = if small_is_linear { a <= g } else { a >= g };
        let f = if linear {
            a
        } else {
            (h[i] * h[i] + g * g) / (two * g)
        };
        per_pixel[i] = f;
        total = total + weights[i] * f;
        if let Some(grad) = grad.as_mut() {
            grad[i] = weights[i]
                * if linear {
                    signum0(h[i])
                } else {
                    h[i] / g
                };
        }
        if !linear {
            coupling = coupling + weights[i] * (g * g - h[i] * h[i]) / (two * g * g);
        }
    }
    if let Some(grad) = grad.as_mut() {
        grad[arg] = grad[arg] + coupling * signum0(h[arg]) / kappa;
    }
    (total, per_pixel, grad)
}

/// Per-pixel value and `d/dh` for the kinds attention can wrap,
/// Huber-family kinds excluded (those need the shared threshold).
fn per_pixel_loss<T: Scalar>(kind: LossKind, h: T, spec: &LossSpec<T>) -> (T, T) {
    let two = cast::<T>(2.0);
    match kind {
        LossKind::L1 => (h.abs(), signum0(h)),
        LossKind::L2 => (h * h, two * h),
        LossKind::Charbonnier => {
            let base = h * h + spec.alpha * spec.alpha;
            (
                base.powf(spec.a),
                two * spec.a * h * base.powf(spec.a - T::one()),
            )
        }
        LossKind::LogCosh => (log_cosh_stable(h), h.tanh()),
        _ => unreachable!("not a per-pixel kind"),
    }
}

fn eval_scalar<T: Scalar>(
    spec: &LossSpec<T>,
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    mask: Option<&ValidityMask>,
    want_grad: bool,
) -> Result<(T, Option<ScalarField<T>>)> {
    spec.validate()?;
    match spec.kind {
        LossKind::Cosine | LossKind::TwoFiveD | LossKind::CrossEntropy => {
            return Err(Error::Config(format!(
                "kind \"{}\" does not evaluate on a depth pair alone",
                spec.kind.name()
            )));
        }
        _ => {}
    }
    let res = gather(pred, gt, mask)?;
    let n = res.idx.len();
    let count = cast::<T>(n as f64);
    let two = cast::<T>(2.0);

    // dV/dh per masked pixel for log-residual kinds; log-cosh fills the
    // y-gradient directly since its residual is linear.
    let mut dv_dh = vec![T::zero(); n];
    let mut dv_dy_direct: Option<Vec<T>> = None;

    let value = match spec.kind {
        LossKind::SiLog | LossKind::SiLogPlus => {
            let mean = res.log.iter().copied().sum::<T>() / count;
            let mean_sq = res.log.iter().map(|h| *h * *h).sum::<T>() / count;
            let s = mean_sq - spec.lambda * mean * mean;
            if spec.kind == LossKind::SiLog {
                if want_grad {
                    for (d, h) in dv_dh.iter_mut().zip(&res.log) {
                        *d = two * (*h - spec.lambda * mean) / count;
                    }
                }
                s
            } else if s <= T::zero() {
                // The square root kinks at zero spread; report the
                // zero subgradient there.
                T::zero()
            } else {
                let root = s.sqrt();
                if want_grad {
                    for (d, h) in dv_dh.iter_mut().zip(&res.log) {
                        *d = spec.theta * (*h - spec.lambda * mean) / (count * root);
                    }
                }
                spec.theta * root
            }
        }
        LossKind::L1 | LossKind::L2 | LossKind::Charbonnier => {
            let mut total = T::zero();
            for (i, h) in res.log.iter().enumerate() {
                let (f, df) = per_pixel_loss(spec.kind, *h, spec);
                total = total + f;
                dv_dh[i] = df / count;
            }
            total / count
        }
        LossKind::L1Sum | LossKind::L2Sum => {
            let base = if spec.kind == LossKind::L1Sum {
                LossKind::L1
            } else {
                LossKind::L2
            };
            let mut total = T::zero();
            for (i, h) in res.log.iter().enumerate() {
                let (f, df) = per_pixel_loss(base, *h, spec);
                total = total + f;
                dv_dh[i] = df;
            }
            total
        }
        LossKind::LogCosh => {
            let mut total = T::zero();
            let mut direct = vec![T::zero(); n];
            for (i, h) in res.lin.iter().enumerate() {
                let (f, df) = per_pixel_loss(LossKind::LogCosh, *h, spec);
                total = total + f;
                direct[i] = df;
            }
            dv_dy_direct = Some(direct);
            total
        }
        LossKind::BerHu | LossKind::Huber => {
            let weights = vec![T::one() / count; n];
            let small_is_linear = spec.kind == LossKind::BerHu;
            let (total, _, grad) =
                branched_loss(&res.log, &weights, spec.kappa, small_is_linear, want_grad);
            if let Some(grad) = grad {
                dv_dh = grad;
            }
            total
        }
        LossKind::Attention => {
            let (total, direct) = attention_loss(spec, &res, want_grad)?;
            dv_dy_direct = direct;
            total
        }
        LossKind::Cosine | LossKind::TwoFiveD | LossKind::CrossEntropy => unreachable!(),
    };

    let gradient = if want_grad {
        let mut field = ScalarField::zeros(pred.height(), pred.width())?;
        for (slot, i) in res.idx.iter().enumerate() {
            let dy = match &dv_dy_direct {
                Some(direct) => direct[slot],
                None => dv_dh[slot] / res.pred[slot],
            };
            field.set(i / res.width, i % res.width, dy);
        }
        Some(field)
    } else {
        None
    };
    Ok((value, gradient))
}

/// Attention weighting: `w = gamma + eps` with
/// `gamma = ln(gt) / max ln(gt)` and
/// `eps = 1 - min(ln(beta pred), ln(beta gt)) / max(...)`, applied to a
/// per-pixel inner loss and summed. Returns the total and, on request,
/// `dV/dy` per masked pixel.
fn attention_loss<T: Scalar>(
    spec: &LossSpec<T>,
    res: &Residuals<T>,
    want_grad: bool,
) -> Result<(T, Option<Vec<T>>)> {
    let n = res.idx.len();
    let mut log_gt_max = T::zero();
    for (slot, g) in res.gt.iter().enumerate() {
        if *g <= T::one() {
            let i = res.idx[slot];
            return Err(Error::Domain(format!(
                "attention loss requires ground truth > 1, got {} at ({}, {})",
                g,
                i / res.width,
                i % res.width
            )));
        }
        log_gt_max = log_gt_max.max(g.ln());
    }

    let mut weights = vec![T::zero(); n];
    let mut d_eps = vec![T::zero(); n];
    for slot in 0..n {
        let u = (spec.beta * res.pred[slot]).ln();
        let v = (spec.beta * res.gt[slot]).ln();
        let hi = u.max(v);
        if hi == T::zero() {
            let i = res.idx[slot];
            return Err(Error::Domain(format!(
                "attention weight undefined at ({}, {}): max(ln(beta*pred), ln(beta*gt)) is zero",
                i / res.width,
                i % res.width
            )));
        }
        let lo = u.min(v);
        let gamma = res.gt[slot].ln() / log_gt_max;
        weights[slot] = gamma + (T::one() - lo / hi);
        if want_grad {
            d_eps[slot] = if u < v {
                -T::one() / (v * res.pred[slot])
            } else if u > v {
                v / (u * u * res.pred[slot])
            } else {
                T::zero()
            };
        }
    }

    let inner = spec.inner.unwrap_or(LossKind::L1);
    if !is_per_pixel_kind(inner) {
        return Err(Error::Config(format!(
            "attention inner loss must be a per-pixel kind, got \"{}\"",
            inner.name()
        )));
    }

    let mut grad = want_grad.then(|| vec![T::zero(); n]);
    let total = match inner {
        LossKind::BerHu | LossKind::Huber => {
            let small_is_linear = inner == LossKind::BerHu;
            let (total, per_pixel, dv_dh) =
                branched_loss(&res.log, &weights, spec.kappa, small_is_linear, want_grad);
            if let Some(grad) = grad.as_mut() {
                let dv_dh = dv_dh.expect("requested with want_grad");
                for slot in 0..n {
                    grad[slot] = dv_dh[slot] / res.pred[slot] + d_eps[slot] * per_pixel[slot];
                }
            }
            total
        }
        _ => {
            let mut total = T::zero();
            for slot in 0..n {
                let (f, df_direct) = if inner == LossKind::LogCosh {
                    let (f, df) = per_pixel_loss(inner, res.lin[slot], spec);
                    (f, df)
                } else {
                    let (f, df) = per_pixel_loss(inner, res.log[slot], spec);
                    (f, df / res.pred[slot])
                };
                total = total + weights[slot] * f;
                if let Some(grad) = grad.as_mut() {
                    grad[slot] = weights[slot] * df_direct + d_eps[slot] * f;
                }
            }
            total
        }
    };
    Ok((total, grad))
}

/// Evaluates a scalar depth loss over the masked pixels.
pub fn evaluate<T: Scalar>(
    spec: &LossSpec<T>,
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    mask: Option<&ValidityMask>,
) -> Result<T> {
    eval_scalar(spec, pred, gt, mask, false).map(|(v, _)| v)
}

/// Gradient of a scalar depth loss with respect to the prediction,
/// zero at pixels outside the mask.
pub fn loss_gradient<T: Scalar>(
    spec: &LossSpec<T>,
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    mask: Option<&ValidityMask>,
) -> Result<ScalarField<T>> {
    eval_scalar(spec, pred, gt, mask, true).map(|(_, g)| g.expect("gradient requested"))
}

/// `1 - <a, b> / (|a| |b|)`, or `None` when either vector is zero.
pub fn cosine_dissimilarity<T: Scalar>(a: [T; 3], b: [T; 3]) -> Option<T> {
    let (na, nb) = (vec3::norm(a), vec3::norm(b));
    if na > T::zero() && nb > T::zero() {
        Some(T::one() - vec3::dot(a, b) / (na * nb))
    } else {
        None
    }
}

/// Mean cosine dissimilarity over pixels valid in both maps (and in
/// the mask when given). Ranges over [0, 2].
pub fn loss_cosine<T: Scalar>(
    pred: &NormalMap<T>,
    gt: &NormalMap<T>,
    mask: Option<&ValidityMask>,
) -> Result<T> {
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
    let mut total = T::zero();
    let mut n = 0usize;
    for r in 0..h {
        for c in 0..w {
            if effective.get(r, c) {
                let term = cosine_dissimilarity(
                    pred.get(r, c).expect("valid by mask"),
                    gt.get(r, c).expect("valid by mask"),
                )
                .expect("valid normals are unit length");
                total = total + term;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / cast::<T>(n as f64))
}

/// Inner depth loss plus `psi` times the cosine dissimilarity between
/// the normal maps. The gradient of this combination is taken as the
/// inner loss gradient (`loss_gradient` with the inner kind); the
/// normal maps are treated as fixed inputs, not differentiated through.
pub fn loss_2p5d<T: Scalar>(
    spec: &LossSpec<T>,
    pred: &DepthMap<T>,
    gt: &DepthMap<T>,
    pred_normals: &NormalMap<T>,
    gt_normals: &NormalMap<T>,
    mask: Option<&ValidityMask>,
) -> Result<T> {
    if spec.kind != LossKind::TwoFiveD {
        return Err(Error::Config(format!(
            "expected kind \"2.5d\", got \"{}\"",
            spec.kind.name()
        )));
    }
    spec.validate()?;
    if pred_normals.shape() != pred.shape() {
        return Err(Error::ShapeMismatch {
            left_height: pred.height(),
            left_width: pred.width(),
            right_height: pred_normals.height(),
            right_width: pred_normals.width(),
        });
    }
    let inner_spec = LossSpec {
        kind: spec.inner.unwrap_or(LossKind::L1),
        inner: None,
        ..*spec
    };
    let depth_term = evaluate(&inner_spec, pred, gt, mask)?;
    let normal_term = loss_cosine(pred_normals, gt_normals, mask)?;
    Ok(depth_term + spec.psi * normal_term)
}

fn one_hot_class<T: Scalar>(target: &ChannelField<T>, row: usize, col: usize) -> Result<usize> {
    let mut hot = None;
    for (c, v) in target.pixel(row, col).iter().enumerate() {
        if *v == T::one() {
            if hot.is_some() {
                return Err(Error::OneHot {
                    row,
                    col,
                    what: "more than one channel set".into(),
                });
            }
            hot = Some(c);
        } else if *v != T::zero() {
            return Err(Error::OneHot {
                row,
                col,
                what: format!("channel {c} is {}, expected exactly 0 or 1", upcast(*v)),
            });
        }
    }
    hot.ok_or(Error::OneHot {
        row,
        col,
        what: "no channel set".into(),
    })
}

fn cce_impl<T: Scalar>(
    logits: &ChannelField<T>,
    target: &ChannelField<T>,
    mask: Option<&ValidityMask>,
    want_grad: bool,
) -> Result<(T, Option<ChannelField<T>>)> {
    let (h, w, ch) = logits.shape();
    if target.shape() != (h, w, ch) {
        if target.height() != h || target.width() != w {
            return Err(Error::ShapeMismatch {
                left_height: h,
                left_width: w,
                right_height: target.height(),
                right_width: target.width(),
            });
        }
        return Err(Error::Grid(format!(
            "logits have {ch} channels but targets have {}",
            target.channels()
        )));
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
    let mut picked = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.map_or(true, |m| m.get(r, c)) {
                picked.push((r, c, one_hot_class(target, r, c)?));
            }
        }
    }
    if picked.is_empty() {
        return Err(Error::EmptyMask);
    }
    let count = cast::<T>(picked.len() as f64);
    let mut total = T::zero();
    let mut grad = if want_grad {
        Some(ChannelField::zeros(h, w, ch)?)
    } else {
        None
    };
    for (r, c, class) in picked {
        let z = logits.pixel(r, c);
        let top = z.iter().copied().fold(z[0], T::max);
        let mut denom = T::zero();
        for v in z {
            denom = denom + (*v - top).exp();
        }
        total = total + top + denom.ln() - z[class];
        if let Some(grad) = grad.as_mut() {
            for (k, v) in z.iter().enumerate() {
                let softmax = (*v - top).exp() / denom;
                let indicator = if k == class { T::one() } else { T::zero() };
                grad.set(r, c, k, (softmax - indicator) / count);
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean cross entropy of per-pixel logits against strict one-hot
/// targets (each target channel exactly 0 or 1, exactly one 1).
pub fn loss_cross_entropy<T: Scalar>(
    logits: &ChannelField<T>,
    target: &ChannelField<T>,
    mask: Option<&ValidityMask>,
) -> Result<T> {
    cce_impl(logits, target, mask, false).map(|(v, _)| v)
}

/// Gradient of the cross entropy with respect to the logits:
/// `(softmax - onehot) / N` at masked pixels, zero elsewhere.
pub fn loss_cross_entropy_gradient<T: Scalar>(
    logits: &ChannelField<T>,
    target: &ChannelField<T>,
    mask: Option<&ValidityMask>,
) -> Result<ChannelField<T>> {
    cce_impl(logits, target, mask, true).map(|(_, g)| g.expect("gradient requested"))
}
