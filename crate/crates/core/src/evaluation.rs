//! Error statistics, latent embeddings and report export.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bundle::DualPrediction;
use crate::dataset::{NormalizationSpec, SampleRecord};
use crate::error::{Error, Result};

/// Relative-error band of the accuracy fraction.
pub const BAND: f64 = 0.20;
/// Cells whose truth is below this (in normalized units) are left out of
/// relative-error statistics.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn error_map(predicted: &[f32], truth: &[f32]) -> Result<Vec<f64>> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("error_map", truth.len(), predicted.len()));
    }
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .collect())
}

/// Quantile `q ∈ [0, 1]` of sorted data, interpolating linearly between
/// order statistics at position `q·(n−1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStats {
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
}

pub fn distribution_stats(values: &[f64]) -> Result<DistributionStats> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "distribution of an empty map".into(),
        ));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("distribution contains NaN".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(DistributionStats {
        median: quantile_sorted(&s, 0.5),
        p75: quantile_sorted(&s, 0.75),
        p95: quantile_sorted(&s, 0.95),
        max: s[s.len() - 1],
    })
}

/// `1 − SS_res / SS_tot` over all cells.
pub fn r2_score(predicted: &[f32], truth: &[f32]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape("r2_score", truth.len(), predicted.len()));
    }
    let mean = truth.iter().map(|&t| t as f64).sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|&t| (t as f64 - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument(
            "R² undefined for a constant truth field".into(),
        ));
    }
    let ss_res: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandFraction {
    /// Share of evaluated cells within the band; 1 when none were evaluated.
    pub fraction: f64,
    pub evaluated: usize,
    /// Cells skipped because `|truth| < floor`.
    pub excluded: usize,
}

/// Share of cells with `|p − t| ≤ band·|t|`, skipping `|t| < floor`.
pub fn within_band_fraction(
    predicted: &[f32],
    truth: &[f32],
    band: f64,
    floor: f64,
) -> Result<BandFraction> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(
            "within_band_fraction",
            truth.len(),
            predicted.len(),
        ));
    }
    let (mut inside, mut evaluated) = (0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        let (p, t) = (p as f64, t as f64);
        if t.abs() < floor {
            continue;
        }
        evaluated += 1;
        if (p - t).abs() <= band * t.abs() {
            inside += 1;
        }
    }
    Ok(BandFraction {
        fraction: if evaluated == 0 {
            1.0
        } else {
            inside as f64 / evaluated as f64
        },
        evaluated,
        excluded: truth.len() - evaluated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Velocity,
    Temperature,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Velocity => "velocity",
            FieldKind::Temperature => "temperature",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            FieldKind::Velocity => "m/s",
            FieldKind::Temperature => "°C",
        }
    }

    /// Physical size of one normalized unit.
    fn span(self, norm: &NormalizationSpec) -> f64 {
        match self {
            FieldKind::Velocity => norm.velocity_scale,
            FieldKind::Temperature => norm.temperature_max - norm.temperature_min,
        }
    }
}

/// Metrics of one field of one case, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEval {
    pub kind: FieldKind,
    pub stats: DistributionStats,
    pub r2: f64,
    pub band: BandFraction,
    pub predicted: Vec<f32>,
    pub truth: Vec<f32>,
    pub error: Vec<f64>,
}

impl FieldEval {
    pub fn new(
        kind: FieldKind,
        predicted: Vec<f32>,
        truth: Vec<f32>,
        norm: &NormalizationSpec,
    ) -> Result<Self> {
        let error = error_map(&predicted, &truth)?;
        Ok(Self {
            kind,
            stats: distribution_stats(&error)?,
            r2: r2_score(&predicted, &truth)?,
            band: within_band_fraction(&predicted, &truth, BAND, RELATIVE_FLOOR * kind.span(norm))?,
            predicted,
            truth,
            error,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseEval {
    pub id: String,
    pub left: f64,
    pub right: f64,
    pub velocity: FieldEval,
    pub temperature: FieldEval,
}

impl CaseEval {
    pub fn field(&self, kind: FieldKind) -> &FieldEval {
        match kind {
            FieldKind::Velocity => &self.velocity,
            FieldKind::Temperature => &self.temperature,
        }
    }
}

/// Compares a prediction against a ground-truth record (denormalized).
pub fn evaluate_case(
    id: &str,
    prediction: &DualPrediction,
    truth: &SampleRecord,
    norm: &NormalizationSpec,
) -> Result<CaseEval> {
    if (prediction.ny, prediction.nx) != truth.grid() {
        return Err(Error::shape(
            "evaluate_case grid",
            truth.grid(),
            (prediction.ny, prediction.nx),
        ));
    }
    let parts = truth.fields.split_channels(&[1, 1])?;
    let (tv, tt) = crate::dataset::denormalize(&parts[0], &parts[1], norm);
    Ok(CaseEval {
        id: id.to_string(),
        left: truth.spec.left_inlet_velocity,
        right: truth.spec.right_inlet_velocity,
        velocity: FieldEval::new(FieldKind::Velocity, prediction.velocity.clone(), tv, norm)?,
        temperature: FieldEval::new(
            FieldKind::Temperature,
            prediction.temperature.clone(),
            tt,
            norm,
        )?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ny: usize,
    pub nx: usize,
    pub norm: NormalizationSpec,
    pub cases: Vec<CaseEval>,
}

impl EvalReport {
    /// Statistics over the pooled cells of every case.
    pub fn aggregate(&self, kind: FieldKind) -> Result<(DistributionStats, f64, BandFraction)> {
        let mut err = Vec::new();
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for c in &self.cases {
            let f = c.field(kind);
            err.extend_from_slice(&f.error);
            pred.extend_from_slice(&f.predicted);
            truth.extend_from_slice(&f.truth);
        }
        Ok((
            distribution_stats(&err)?,
            r2_score(&pred, &truth)?,
            within_band_fraction(&pred, &truth, BAND, RELATIVE_FLOOR * kind.span(&self.norm))?,
        ))
    }
}

/// Linear blue-to-red colormap of `s ∈ [0, 1]`, clamped.
pub fn colormap(s: f64) -> [u8; 3] {
    let s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
    [
        (255.0 * s).round() as u8,
        0,
        (255.0 * (1.0 - s)).round() as u8,
    ]
}

/// Binary P6 image of a row-major field with row 0 at the floor (drawn at the bottom).
pub fn field_ppm(values: &[f64], ny: usize, nx: usize, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if values.len() != ny * nx {
        return Err(Error::shape("field_ppm", ny * nx, values.len()));
    }
    let mut out = format!("P6\n{nx} {ny}\n255\n").into_bytes();
    let range = hi - lo;
    for j in (0..ny).rev() {
        for v in &values[j * nx..(j + 1) * nx] {
            let s = if range > 0.0 { (v - lo) / range } else { 0.0 };
            out.extend_from_slice(&colormap(s));
        }
    }
    Ok(out)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path)?;
    f.write_all(bytes)?;
    Ok(path)
}

fn stats_row(
    out: &mut String,
    id: &str,
    l: &str,
    r: &str,
    kind: FieldKind,
    s: &DistributionStats,
    r2: f64,
    band: f64,
) {
    let _ = writeln!(
        out,
        "{id},{l},{r},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6},{:.6}",
        kind.as_str(),
        s.median,
        s.p75,
        s.p95,
        s.max,
        r2,
        band
    );
}

pub const STATS_HEADER: &str = "case_id,L,R,field,median,p75,p95,max,r2,band_fraction";
const HISTOGRAM_BINS: usize = 40;

/// Writes `stats_<field>.csv` (one row per case plus an `all` row),
/// `hist_<field>.csv`, and per case predicted, truth and error images.
pub fn export_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for kind in [FieldKind::Velocity, FieldKind::Temperature] {
        let mut csv = format!("{STATS_HEADER}\n");
        for c in &report.cases {
            let f = c.field(kind);
            stats_row(
                &mut csv,
                &c.id,
                &format!("{:.2}", c.left),
                &format!("{:.2}", c.right),
                kind,
                &f.stats,
                f.r2,
                f.band.fraction,
            );
        }
        if !report.cases.is_empty() {
            let (s, r2, band) = report.aggregate(kind)?;
            stats_row(&mut csv, "all", "", "", kind, &s, r2, band.fraction);
        }
        written.push(write_file(
            dir,
            &format!("stats_{}.csv", kind.as_str()),
            csv.as_bytes(),
        )?);

        let top = report
            .cases
            .iter()
            .flat_map(|c| c.field(kind).error.iter().copied())
            .fold(0.0, f64::max);
        let width = if top > 0.0 {
            top / HISTOGRAM_BINS as f64
        } else {
            1.0
        };
        let mut hist = String::from("case_id,bin_low,bin_high,count\n");
        for c in &report.cases {
            let mut counts = [0usize; HISTOGRAM_BINS];
            for &e in &c.field(kind).error {
                counts[((e / width) as usize).min(HISTOGRAM_BINS - 1)] += 1;
            }
            for (b, n) in counts.iter().enumerate() {
                let _ = writeln!(
                    hist,
                    "{},{:.6e},{:.6e},{n}",
                    c.id,
                    b as f64 * width,
                    (b + 1) as f64 * width
                );
            }
        }
        written.push(write_file(
            dir,
            &format!("hist_{}.csv", kind.as_str()),
            hist.as_bytes(),
        )?);

        for c in &report.cases {
            let f = c.field(kind);
            let pred: Vec<f64> = f.predicted.iter().map(|&v| v as f64).collect();
            let truth: Vec<f64> = f.truth.iter().map(|&v| v as f64).collect();
            let lo = pred
                .iter()
                .chain(&truth)
                .copied()
                .fold(f64::INFINITY, f64::min);
            let hi = pred
                .iter()
                .chain(&truth)
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let emax = f.error.iter().copied().fold(0.0, f64::max);
            let k = kind.as_str();
            let (ny, nx) = (report.ny, report.nx);
            written.push(write_file(
                dir,
                &format!("{}_{k}_pred.ppm", c.id),
                &field_ppm(&pred, ny, nx, lo, hi)?,
            )?);
            written.push(write_file(
                dir,
                &format!("{}_{k}_truth.ppm", c.id),
                &field_ppm(&truth, ny, nx, lo, hi)?,
            )?);
            written.push(write_file(
                dir,
                &format!("{}_{k}_error.ppm", c.id),
                &field_ppm(&f.error, ny, nx, 0.0, emax)?,
            )?);
        }
    }
    Ok(written)
}

/// Two-dimensional embedding of a labelled point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    /// KL divergence against the unexaggerated affinities, per iteration.
    pub kl_history: Vec<f64>,
    /// Points perturbed because they duplicated an earlier point.
    pub jittered: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 5.0,
            iterations: 1000,
            exaggeration: 4.0,
            exaggeration_iterations: 100,
            learning_rate: 100.0,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row `i` of the conditional affinities with bandwidth searched so the
/// entropy matches `ln(perplexity)`.
fn conditional_row(d: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    // shift by the nearest distance so exp() never underflows to all zeros
    let dmin = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut p = vec![0.0; d.len()];
    for _ in 0..200 {
        let mut sum = 0.0;
        for (j, pj) in p.iter_mut().enumerate() {
            *pj = if j == i {
                0.0
            } else {
                (-(d[j] - dmin) * beta).exp()
            };
            sum += *pj;
        }
        let mut h = 0.0;
        for (j, pj) in p.iter_mut().enumerate() {
            *pj /= sum;
            if j != i && *pj > 0.0 {
                h -= *pj * pj.ln();
            }
        }
        if (h - target).abs() < 1e-10 {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() {
                0.5 * (beta + hi)
            } else {
                beta * 2.0
            };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    p
}

/// Exact t-SNE with early exaggeration, momentum and adaptive gains.
pub fn tsne_embed(
    latents: &[Vec<f64>],
    labels: &[usize],
    config: &TsneConfig,
) -> Result<Embedding2D> {
    let n = latents.len();
    if labels.len() != n {
        return Err(Error::shape("tsne labels", n, labels.len()));
    }
    if (n as f64) < 3.0 * config.perplexity || config.perplexity <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "t-SNE needs at least 3·perplexity points, got {n} for perplexity {}",
            config.perplexity
        )));
    }
    let dim = latents[0].len();
    if latents
        .iter()
        .any(|x| x.len() != dim || x.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "t-SNE inputs must be finite with equal length".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = latents.to_vec();
    let scale = x
        .iter()
        .flatten()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let jitter = Normal::new(0.0, 1e-6 * scale).expect("positive sd");
    let mut jittered = 0;
    for i in 1..n {
        if (0..i).any(|j| sq_dist(&x[i], &x[j]) == 0.0) {
            for v in x[i].iter_mut() {
                *v += jitter.sample(&mut rng);
            }
            jittered += 1;
        }
    }
    if jittered > 0 {
        tracing::warn!(jittered, "duplicate latents jittered before embedding");
    }

    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let d: Vec<f64> = (0..n).map(|j| sq_dist(&x[i], &x[j])).collect();
        let row = conditional_row(&d, i, config.perplexity);
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut pj = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pj[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        pj[i * n + i] = 0.0;
    }

    let init = Normal::new(0.0, 1e-4).expect("positive sd");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [init.sample(&mut rng), init.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::with_capacity(config.iterations);
    let mut num = vec![0.0; n * n];
    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iterations {
            config.exaggeration
        } else {
            1.0
        };
        let momentum = if it < 250 { 0.5 } else { 0.8 };
        let mut zsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    1.0 / (1.0 + sq_dist(&y[i], &y[j]))
                };
                num[i * n + j] = v;
                zsum += v;
            }
        }
        let mut kl = 0.0;
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i * n + j] / zsum).max(1e-12);
                let pij = pj[i * n + j];
                kl += pij * (pij / q).ln();
                let m = 4.0 * (exag * pij - q) * num[i * n + j];
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                let same = (g[k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same {
                    gains[i][k] * 0.8
                } else {
                    gains[i][k] + 0.2
                };
                gains[i][k] = gains[i][k].max(0.01);
                update[i][k] = momentum * update[i][k] - config.learning_rate * gains[i][k] * g[k];
            }
        }
        kl_history.push(kl);
        for i in 0..n {
            y[i][0] += update[i][0];
            y[i][1] += update[i][1];
        }
        let mean = y.iter().fold([0.0; 2], |m, p| [m[0] + p[0], m[1] + p[1]]);
        for p in y.iter_mut() {
            p[0] -= mean[0] / n as f64;
            p[1] -= mean[1] / n as f64;
        }
    }
    if y.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidArgument(
            "t-SNE produced non-finite coordinates".into(),
        ));
    }
    Ok(Embedding2D {
        points: y,
        labels: labels.to_vec(),
        kl_history,
        jittered,
    })
}

/// Leave-one-out 1-nearest-neighbour accuracy (Euclidean, first index wins ties).
pub fn latent_separability(latents: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n = latents.len();
    if labels.len() != n || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need matching labels for at least 2 points, got {n}"
        )));
    }
    let mut correct = 0;
    for i in 0..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in (0..n).filter(|&j| j != i) {
            let d = sq_dist(&latents[i], &latents[j]);
            if d < best.0 {
                best = (d, j);
            }
        }
        if labels[best.1] == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Share of points whose nearest class centroid is their own class.
pub fn nearest_centroid_accuracy(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if labels.len() != n || n == 0 {
        return Err(Error::InvalidArgument(
            "nearest centroid needs matching labels".into(),
        ));
    }
    let dim = points[0].len();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    let centroids: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    let mut correct = 0;
    for (p, &l) in points.iter().zip(labels) {
        let best = centroids
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.as_ref().map(|c| (k, sq_dist(p, c))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k);
        if best == Some(l) {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Scatter colours per label: blue, orange, green, then grey.
fn label_colour(label: usize) -> [u8; 3] {
    match label {
        0 => [31, 119, 180],
        1 => [255, 127, 14],
        2 => [44, 160, 44],
        _ => [128, 128, 128],
    }
}

/// Writes `embedding.csv` (`x,y,label`) and a 400×400 `embedding.ppm` scatter.
pub fn export_embedding(
    e: &Embedding2D,
    names: &[&str],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("x,y,label\n");
    for (p, &l) in e.points.iter().zip(&e.labels) {
        let name = names.get(l).copied().unwrap_or("unknown");
        let _ = writeln!(csv, "{:.6},{:.6},{name}", p[0], p[1]);
    }
    const SIZE: usize = 400;
    let mut img = vec![255u8; SIZE * SIZE * 3];
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &e.points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let px = |v: f64, k: usize| -> usize {
        let span = (hi[k] - lo[k]).max(1e-12);
        (20.0 + (v - lo[k]) / span * (SIZE - 40) as f64).round() as usize
    };
    for (p, &l) in e.points.iter().zip(&e.labels) {
        let (cx, cy) = (px(p[0], 0), SIZE - 1 - px(p[1], 1));
        for yy in cy.saturating_sub(3)..=(cy + 3).min(SIZE - 1) {
            for xx in cx.saturating_sub(3)..=(cx + 3).min(SIZE - 1) {
                let o = (yy * SIZE + xx) * 3;
                img[o..o + 3].copy_from_slice(&label_colour(l));
            }
        }
    }
    let mut ppm = format!("P6\n{SIZE} {SIZE}\n255\n").into_bytes();
    ppm.extend_from_slice(&img);
    Ok(vec![
        write_file(dir, "embedding.csv", csv.as_bytes())?,
        write_file(dir, "embedding.ppm", &ppm)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_convention() {
        let s = distribution_stats(&[3.0, 0.0, 2.0, 1.0]).unwrap();
        assert_eq!(s.median, 1.5);
        assert_eq!(s.max, 3.0);
        let c = distribution_stats(&[0.7; 9]).unwrap();
        assert_eq!((c.median, c.p75, c.p95, c.max), (0.7, 0.7, 0.7, 0.7));
        assert!(distribution_stats(&[]).is_err());
    }

    #[test]
    fn r2_definition() {
        let t = [1.0f32, 2.0, 4.0, 7.0];
        assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
        assert!(r2_score(&[3.5; 4], &t).unwrap().abs() < 1e-15);
        assert!(r2_score(&t, &[2.0; 4]).is_err());
    }

    #[test]
    fn band_fraction_cases() {
        let t = [1.0f32, -2.0, 0.5, 0.0];
        let b = within_band_fraction(&t, &t, 0.2, 1e-3).unwrap();
        assert_eq!((b.fraction, b.evaluated, b.excluded), (1.0, 3, 1));
        let off: Vec<f32> = t.iter().map(|v| v * 1.3).collect();
        assert_eq!(
            within_band_fraction(&off, &t, 0.2, 1e-3).unwrap().fraction,
            0.0
        );
    }

    #[test]
    fn colormap_endpoints_and_image_layout() {
        assert_eq!(colormap(0.0), [0, 0, 255]);
        assert_eq!(colormap(1.0), [255, 0, 0]);
        // 2×3 field, floor row 0 = zeros, top row = ones
        let img = field_ppm(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2, 3, 0.0, 1.0).unwrap();
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(&img[header.len()..header.len() + 3], &[255, 0, 0]);
        assert_eq!(&img[img.len() - 3..], &[0, 0, 255]);
    }

    #[test]
    fn identical_labels_are_trivially_separable() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 0.0]).collect();
        assert_eq!(latent_separability(&pts, &[0; 5]).unwrap(), 1.0);
        assert_eq!(nearest_centroid_accuracy(&pts, &[0; 5]).unwrap(), 1.0);
    }
}
