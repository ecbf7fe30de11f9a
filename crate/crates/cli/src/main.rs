//! Batch front end over the depthkit library: densification, normal
//! estimation, sparse sampling, evaluation, and loss checking.
//!
//! Exit codes: 0 on success, 1 on runtime failure (IO, format, shape),
//! 2 on a usage error. Usage errors write only to standard error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use depthkit::io::{
    read_depth_png16, read_intrinsics, read_normals_png16, write_depth_png16, write_mask_png8,
    write_normals_png16,
};
use depthkit::{
    apply_cap, closing, density_stats, depth_metrics, edge_mask, evaluate, gaussian_blur,
    loss_gradient, normals_from_depth, normals_metrics, sample_sparse, sobel, ClosingConfig,
    CropRect, DensityStats, DepthMap, DepthMetricsReport, EdgeConfig, GaussianConfig, GrayImage,
    LossSpec, NormalMap, NormalsMetricsReport, PlaneFitConfig, SamplerConfig, ValidityMask,
    GENERATOR,
};

#[derive(Parser)]
#[command(name = "depthkit", version, about = "Depth-map geometry and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill holes in a sparse depth map by morphological closing.
    Densify(DensifyArgs),
    /// Estimate surface normals (and optionally an edge mask) from depth.
    Normals(NormalsArgs),
    /// Simulate a sparse sensor by seeded subsampling of dense truth.
    Sample(SampleArgs),
    /// Score predicted depth against ground truth.
    Eval(EvalArgs),
    /// Score predicted normals against ground-truth normals.
    EvalNormals(EvalNormalsArgs),
    /// Evaluate a loss spec on one pred/gt pair.
    Losscheck(LosscheckArgs),
    /// Average valid-pixel density over a directory of depth maps.
    Density(DensityArgs),
}

#[derive(Args)]
struct DensifyArgs {
    /// Input sparse depth PNG.
    #[arg(long = "in", value_name = "PNG")]
    input: PathBuf,
    /// Output densified depth PNG.
    #[arg(long, value_name = "PNG")]
    out: PathBuf,
    /// Kernel side length, odd and >= 3.
    #[arg(long)]
    k: usize,
    /// Closing iterations.
    #[arg(long)]
    it: usize,
    /// Let closing overwrite pixels that carried a measurement.
    #[arg(long)]
    no_preserve: bool,
}

#[derive(Args)]
struct NormalsArgs {
    /// Input depth PNG.
    #[arg(long, value_name = "PNG")]
    depth: PathBuf,
    /// Camera file with fx=, fy=, ox=, oy= lines.
    #[arg(long, value_name = "FILE")]
    cam: PathBuf,
    /// Output normals PNG; the edge mask lands next to it as
    /// <out>.edges.png.
    #[arg(long, value_name = "PNG")]
    out: PathBuf,
    /// Plane-fit window, odd and >= 3.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Smooth the depth (sigma 1.76) before edge detection.
    #[arg(long)]
    blur: bool,
    /// Also write a binary edge mask with this gradient threshold,
    /// applied to depth normalized by its maximum.
    #[arg(long, value_name = "TAU")]
    edges: Option<f64>,
}

#[derive(Args)]
struct SampleArgs {
    /// Dense ground-truth depth PNG.
    #[arg(long, value_name = "PNG")]
    gt: PathBuf,
    /// Desired sample count; each valid pixel survives with
    /// probability n / valid_count.
    #[arg(long)]
    n: usize,
    /// Random seed.
    #[arg(long)]
    seed: u64,
    /// Output sparse depth PNG.
    #[arg(long, value_name = "PNG")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted depth PNG, or a directory of them.
    #[arg(long, value_name = "PNG|DIR")]
    pred: PathBuf,
    /// Ground-truth depth PNG, or a directory of them.
    #[arg(long, value_name = "PNG|DIR")]
    gt: PathBuf,
    /// Score only pixels whose ground truth lies in (lo, hi].
    #[arg(long, value_name = "LO:HI")]
    cap: Option<String>,
    /// Crop top,left,height,width applied to both maps.
    #[arg(long, value_name = "T,L,H,W")]
    crop: Option<String>,
    /// Also write the rows as CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalNormalsArgs {
    /// Predicted normals PNG, or a directory of them.
    #[arg(long, value_name = "PNG|DIR")]
    pred: PathBuf,
    /// Ground-truth normals PNG, or a directory of them.
    #[arg(long, value_name = "PNG|DIR")]
    gt: PathBuf,
    /// Crop top,left,height,width applied to both maps.
    #[arg(long, value_name = "T,L,H,W")]
    crop: Option<String>,
    /// Also write the rows as CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct LosscheckArgs {
    /// Loss settings as key=value items, e.g. kind=berhu kappa=5.
    #[arg(long, value_name = "KEY=VALUE", num_args = 1.., required = true)]
    spec: Vec<String>,
    /// Predicted depth PNG.
    #[arg(long, value_name = "PNG")]
    pred: PathBuf,
    /// Ground-truth depth PNG.
    #[arg(long, value_name = "PNG")]
    gt: PathBuf,
    /// Compare the analytic gradient against central differences.
    #[arg(long)]
    grad_check: bool,
}

#[derive(Args)]
struct DensityArgs {
    /// Directory of depth PNGs.
    #[arg(long, value_name = "DIR")]
    dir: PathBuf,
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        CliError::Runtime(err)
    }
}

impl From<depthkit::Error> for CliError {
    fn from(err: depthkit::Error) -> Self {
        CliError::Runtime(err.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Densify(a) => cmd_densify(a),
        Command::Normals(a) => cmd_normals(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::EvalNormals(a) => cmd_eval_normals(a),
        Command::Losscheck(a) => cmd_losscheck(a),
        Command::Density(a) => cmd_density(a),
    }
}

fn cmd_densify(a: DensifyArgs) -> CliResult {
    if a.k < 3 || a.k % 2 == 0 {
        return Err(usage(format!("kernel must be odd and >= 3, got {}", a.k)));
    }
    if a.it == 0 {
        return Err(usage("iterations must be at least 1"));
    }
    let depth = read_depth(&a.input)?;
    let before = density_stats(&depth);
    let cfg = ClosingConfig {
        kernel: a.k,
        iterations: a.it,
        preserve_original: !a.no_preserve,
    };
    let closed = closing(&depth, &cfg)?;
    let after = density_stats(&closed);
    write_depth_png16(&closed, &a.out).with_context(|| write_ctx(&a.out))?;
    print_density("in", &before);
    print_density("out", &after);
    Ok(())
}

fn print_density(prefix: &str, s: &DensityStats) {
    println!("{prefix}_valid={}", s.valid);
    println!("{prefix}_total={}", s.total);
    println!("{prefix}_fraction={}", s.fraction);
}

fn cmd_normals(a: NormalsArgs) -> CliResult {
    if a.window < 3 || a.window % 2 == 0 {
        return Err(usage(format!("window must be odd >= 3, got {}", a.window)));
    }
    if let Some(tau) = a.edges {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(usage(format!(
                "edge threshold must be finite and >= 0, got {tau}"
            )));
        }
    }
    let depth = read_depth(&a.depth)?;
    let cam =
        read_intrinsics(&a.cam).with_context(|| format!("reading camera {}", a.cam.display()))?;
    let cfg = PlaneFitConfig {
        window: a.window,
        ..PlaneFitConfig::default()
    };
    let normals = normals_from_depth(&depth, &cam, &cfg)?;
    write_normals_png16(&normals, &a.out).with_context(|| write_ctx(&a.out))?;
    println!("normals={}", a.out.display());
    if let Some(tau) = a.edges {
        let gray = depth_to_gray(&depth)?;
        let gray = if a.blur {
            gaussian_blur(&gray, &GaussianConfig::with_sigma(1.76))?
        } else {
            gray
        };
        let mask = edge_mask(&sobel(&gray)?, &EdgeConfig { tau })?;
        let edge_path = edges_path(&a.out);
        write_mask_png8(&mask, &edge_path).with_context(|| write_ctx(&edge_path))?;
        println!("edges={}", edge_path.display());
    }
    Ok(())
}

fn edges_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".edges.png");
    out.with_file_name(name)
}

/// Depth scaled into [0, 1] by its maximum, so one threshold works
/// across scenes. Invalid pixels read as 0.
fn depth_to_gray(depth: &DepthMap) -> CliResult<GrayImage> {
    let max = depth.values().iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(CliError::Runtime(anyhow!("depth map has no valid pixels")));
    }
    let values = depth.values().iter().map(|v| v / max).collect();
    Ok(GrayImage::new(depth.height(), depth.width(), values)?)
}

fn cmd_sample(a: SampleArgs) -> CliResult {
    let gt = read_depth(&a.gt)?;
    let cfg = SamplerConfig {
        desired: a.n,
        seed: a.seed,
    };
    let sparse = sample_sparse(&gt, &cfg)?;
    write_depth_png16(&sparse, &a.out).with_context(|| write_ctx(&a.out))?;
    println!("kept_count={}", sparse.validity_mask().popcount());
    println!("rng={GENERATOR}");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let cap = a.cap.as_deref().map(parse_cap).transpose()?;
    let crop = a.crop.as_deref().map(parse_crop).transpose()?;
    let pairs = collect_pairs(&a.pred, &a.gt)?;
    let mut rows: Vec<(String, DepthMetricsReport)> = Vec::new();
    for (name, pred_path, gt_path) in pairs {
        let mut pred = read_depth(&pred_path)?;
        let mut gt = read_depth(&gt_path)?;
        if let Some(rect) = &crop {
            pred = pred.crop(rect)?;
            gt = gt.crop(rect)?;
        }
        let mask = eval_mask(&pred, &gt, cap)?;
        let report = depth_metrics(&pred, &gt, Some(&mask))
            .with_context(|| format!("scoring {name}"))?;
        rows.push((name, report));
    }
    let agg = aggregate_depth(&rows);
    for (name, r) in &rows {
        println!("image={name} {}", r.kv_block());
    }
    println!("image=aggregate {}", agg.kv_block());
    if let Some(csv) = &a.csv {
        let mut text = format!("image,{}\n", DepthMetricsReport::csv_header());
        for (name, r) in &rows {
            text.push_str(&format!("{name},{}\n", r.csv_row()));
        }
        text.push_str(&format!("aggregate,{}\n", agg.csv_row()));
        fs::write(csv, text).with_context(|| write_ctx(csv))?;
    }
    Ok(())
}

/// Pixels scored by eval: valid in both maps, and inside the cap when
/// one was given.
fn eval_mask(pred: &DepthMap, gt: &DepthMap, cap: Option<(f64, f64)>) -> CliResult<ValidityMask> {
    let both = gt.validity_mask().and(&pred.validity_mask())?;
    match cap {
        Some((lo, hi)) => Ok(both.and(&apply_cap(pred, gt, lo, hi)?)?),
        None => Ok(both),
    }
}

fn aggregate_depth(rows: &[(String, DepthMetricsReport)]) -> DepthMetricsReport {
    let n = rows.len() as f64;
    let mean = |f: fn(&DepthMetricsReport) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    DepthMetricsReport {
        silog: mean(|r| r.silog),
        delta1: mean(|r| r.delta1),
        delta2: mean(|r| r.delta2),
        delta3: mean(|r| r.delta3),
        abs_rel: mean(|r| r.abs_rel),
        sqr_rel: mean(|r| r.sqr_rel),
        log10: mean(|r| r.log10),
        mae: mean(|r| r.mae),
        rmse: mean(|r| r.rmse),
        rmse_log: mean(|r| r.rmse_log),
        imae: mean(|r| r.imae),
        irmse: mean(|r| r.irmse),
        imae_literal: mean(|r| r.imae_literal),
        irmse_literal: mean(|r| r.irmse_literal),
        n_pixels: rows.iter().map(|(_, r)| r.n_pixels).sum(),
    }
}

fn cmd_eval_normals(a: EvalNormalsArgs) -> CliResult {
    let crop = a.crop.as_deref().map(parse_crop).transpose()?;
    let pairs = collect_pairs(&a.pred, &a.gt)?;
    let mut rows: Vec<(String, NormalsMetricsReport)> = Vec::new();
    for (name, pred_path, gt_path) in pairs {
        let mut pred = read_normals(&pred_path)?;
        let mut gt = read_normals(&gt_path)?;
        if let Some(rect) = &crop {
            pred = pred.crop(rect)?;
            gt = gt.crop(rect)?;
        }
        let report = normals_metrics(&pred, &gt, None)
            .with_context(|| format!("scoring {name}"))?;
        rows.push((name, report));
    }
    let agg = aggregate_normals(&rows);
    for (name, r) in &rows {
        println!("image={name} {}", r.kv_block());
    }
    println!("image=aggregate {}", agg.kv_block());
    if let Some(csv) = &a.csv {
        let mut text = format!("image,{}\n", NormalsMetricsReport::csv_header());
        for (name, r) in &rows {
            text.push_str(&format!("{name},{}\n", r.csv_row()));
        }
        text.push_str(&format!("aggregate,{}\n", agg.csv_row()));
        fs::write(csv, text).with_context(|| write_ctx(csv))?;
    }
    Ok(())
}

fn aggregate_normals(rows: &[(String, NormalsMetricsReport)]) -> NormalsMetricsReport {
    let n = rows.len() as f64;
    let mean =
        |f: fn(&NormalsMetricsReport) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    NormalsMetricsReport {
        mean_deg: mean(|r| r.mean_deg),
        median_deg: mean(|r| r.median_deg),
        rmse_deg: mean(|r| r.rmse_deg),
        acc_11_25: mean(|r| r.acc_11_25),
        acc_22_5: mean(|r| r.acc_22_5),
        acc_30: mean(|r| r.acc_30),
        n_pixels: rows.iter().map(|(_, r)| r.n_pixels).sum(),
    }
}

fn cmd_losscheck(a: LosscheckArgs) -> CliResult {
    let spec: LossSpec = LossSpec::parse_kv(&a.spec).map_err(|e| usage(e.to_string()))?;
    let pred = read_depth(&a.pred)?;
    let gt = read_depth(&a.gt)?;
    let mask = gt.validity_mask().and(&pred.validity_mask())?;
    let value = evaluate(&spec, &pred, &gt, Some(&mask))?;
    println!("loss={value}");
    println!("reduction={}", spec.kind.reduction().name());
    if a.grad_check {
        println!("max_rel_err={}", grad_check(&spec, &pred, &gt, &mask)?);
    }
    Ok(())
}

/// Largest relative disagreement between the analytic gradient and a
/// central difference over the masked pixels. The 1e-3 floor in the
/// denominator keeps difference noise on near-zero gradients from
/// dominating the report.
fn grad_check(
    spec: &LossSpec,
    pred: &DepthMap,
    gt: &DepthMap,
    mask: &ValidityMask,
) -> CliResult<f64> {
    let analytic = loss_gradient(spec, pred, gt, Some(mask))?;
    let (h, w) = pred.shape();
    let mut worst = 0.0f64;
    let mut values = pred.values().to_vec();
    for r in 0..h {
        for c in 0..w {
            if !(mask.get(r, c) && pred.is_valid(r, c) && gt.is_valid(r, c)) {
                continue;
            }
            let i = pred.idx(r, c);
            let y = values[i];
            // Large enough that rounding in the loss sum does not swamp
            // the difference, small enough to keep truncation negligible.
            let step = 1e-5 * y.max(1.0);
            values[i] = y + step;
            let up = evaluate(spec, &DepthMap::new(h, w, values.clone())?, gt, Some(mask))?;
            values[i] = y - step;
            let dn = evaluate(spec, &DepthMap::new(h, w, values.clone())?, gt, Some(mask))?;
            values[i] = y;
            let numeric = (up - dn) / (2.0 * step);
            let a = analytic.get(r, c);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn cmd_density(a: DensityArgs) -> CliResult {
    let files = list_pngs(&a.dir)?;
    if files.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "no png files in {}",
            a.dir.display()
        )));
    }
    let mut sum = 0.0;
    let mut lines = Vec::with_capacity(files.len());
    for f in &files {
        let s = density_stats(&read_depth(f)?);
        lines.push(format!("image={} fraction={}", stem(f), s.fraction));
        sum += s.fraction;
    }
    for line in lines {
        println!("{line}");
    }
    let mean = sum / files.len() as f64;
    println!("files={}", files.len());
    println!("mean_fraction={mean}");
    println!("mean_percent={}", mean * 100.0);
    Ok(())
}

fn read_depth(path: &Path) -> CliResult<DepthMap> {
    Ok(read_depth_png16(path).with_context(|| format!("reading depth {}", path.display()))?)
}

fn read_normals(path: &Path) -> CliResult<NormalMap> {
    Ok(read_normals_png16(path).with_context(|| format!("reading normals {}", path.display()))?)
}

fn write_ctx(path: &Path) -> String {
    format!("writing {}", path.display())
}

fn parse_cap(s: &str) -> CliResult<(f64, f64)> {
    let err = || usage(format!("cap must be lo:hi with 0 <= lo < hi, got \"{s}\""));
    let (lo, hi) = s.split_once(':').ok_or_else(err)?;
    let lo: f64 = lo.trim().parse().map_err(|_| err())?;
    let hi: f64 = hi.trim().parse().map_err(|_| err())?;
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
        return Err(err());
    }
    Ok((lo, hi))
}

fn parse_crop(s: &str) -> CliResult<CropRect> {
    let err = || usage(format!("crop must be top,left,height,width, got \"{s}\""));
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| err())?;
    match parts[..] {
        [top, left, height, width] => Ok(CropRect::new(top, left, height, width)),
        _ => Err(err()),
    }
}

/// One (label, pred, gt) triple per image. Two files form a single
/// pair; two directories pair their PNGs by sorted filename.
fn collect_pairs(pred: &Path, gt: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    match (pred.is_dir(), gt.is_dir()) {
        (true, true) => {
            let p = list_pngs(pred)?;
            let g = list_pngs(gt)?;
            if p.is_empty() {
                return Err(CliError::Runtime(anyhow!(
                    "no png files in {}",
                    pred.display()
                )));
            }
            if p.len() != g.len() {
                return Err(CliError::Runtime(anyhow!(
                    "{} prediction files vs {} ground-truth files",
                    p.len(),
                    g.len()
                )));
            }
            Ok(p
                .into_iter()
                .zip(g)
                .map(|(pp, gp)| (stem(&pp), pp, gp))
                .collect())
        }
        (false, false) => Ok(vec![(stem(pred), pred.to_path_buf(), gt.to_path_buf())]),
        _ => Err(CliError::Runtime(anyhow!(
            "--pred and --gt must both be files or both be directories"
        ))),
    }
}

fn list_pngs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .with_context(|| format!("listing {}", dir.display()))?
            .path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort_by_key(|p| p.file_name().map(|s| s.to_os_string()));
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
