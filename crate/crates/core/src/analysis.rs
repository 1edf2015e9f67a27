//! Metrics, per-listener sweeps, PCA projections of behavior embeddings,
//! F1 histograms and the CSV/SVG reports built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::Example;
use crate::features::write_atomic;
use crate::model::{argmax, Model, ModelError};
use crate::numerics::Tensor2D;
use crate::provenance::{fmt_g, Provenance};

pub const N_BINS: usize = 25;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("cannot evaluate an empty split")]
    EmptySplit,
    #[error("variant {0} has no listener embedding")]
    VariantWithoutListener(crate::model::Variant),
    #[error("PCA needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("covariance is all zero")]
    DegenerateData,
    #[error("score {0} outside [0, 1]")]
    OutOfRangeScore(f64),
    #[error("prediction and gold lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AnalysisError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnalysisError::EmptySplit => "empty_split",
            AnalysisError::VariantWithoutListener(_) => "variant_without_listener",
            AnalysisError::TooFewPoints(_) | AnalysisError::DegenerateData => "degenerate_data",
            AnalysisError::OutOfRangeScore(_) => "out_of_range_score",
            AnalysisError::LengthMismatch(..) => "length_mismatch",
            AnalysisError::Model(_) => "model",
            AnalysisError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// `confusion[gold][predicted]`.
pub type Confusion = [[u64; 3]; 3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_f1: [f64; 3],
    pub macro_f1: f64,
    pub confusion: Confusion,
    pub n_instances: usize,
}

impl EvalReport {
    pub fn from_predictions(gold: &[usize], predicted: &[usize]) -> Result<Self> {
        if gold.len() != predicted.len() {
            return Err(AnalysisError::LengthMismatch(predicted.len(), gold.len()));
        }
        if gold.is_empty() {
            return Err(AnalysisError::EmptySplit);
        }
        let mut confusion = [[0u64; 3]; 3];
        for (&g, &p) in gold.iter().zip(predicted) {
            confusion[g][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Confusion) -> Self {
        let n: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..3).map(|c| confusion[c][c]).sum();
        let mut per_class_f1 = [0.0; 3];
        for c in 0..3 {
            let tp = confusion[c][c] as f64;
            let predicted: u64 = (0..3).map(|g| confusion[g][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
            per_class_f1[c] = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
        }
        Self {
            accuracy: correct as f64 / n as f64,
            per_class_f1,
            macro_f1: per_class_f1.iter().sum::<f64>() / 3.0,
            confusion,
            n_instances: n as usize,
        }
    }
}

/// Predicted class per example, with listener rows optionally forced.
fn predict_with(model: &Model, examples: &[Example], forced_listener: Option<&str>) -> Result<Vec<usize>> {
    examples
        .par_iter()
        .map(|ex| {
            let listener = forced_listener.unwrap_or(&ex.listener_id);
            let (s, l) = model.resolve_ids(Some(&ex.speaker_id), Some(listener))?;
            Ok(argmax(&model.predict_proba(&ex.window, s, l)?))
        })
        .collect()
}

pub fn predict(model: &Model, examples: &[Example]) -> Result<Vec<usize>> {
    predict_with(model, examples, None)
}

pub fn gold_labels(examples: &[Example]) -> Vec<usize> {
    examples.iter().map(|e| e.label.index()).collect()
}

pub fn evaluate(model: &Model, examples: &[Example]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(AnalysisError::EmptySplit);
    }
    EvalReport::from_predictions(&gold_labels(examples), &predict(model, examples)?)
}

/// Macro-F1 over all of `examples` with every listener input replaced by
/// each candidate in turn. Speaker inputs are left as they are.
pub fn per_listener_f1(model: &Model, examples: &[Example], listeners: &[String]) -> Result<BTreeMap<String, f64>> {
    if !model.variant().uses_listener() {
        return Err(AnalysisError::VariantWithoutListener(model.variant()));
    }
    if examples.is_empty() {
        return Err(AnalysisError::EmptySplit);
    }
    let gold = gold_labels(examples);
    listeners
        .par_iter()
        .map(|id| {
            let pred = predict_with(model, examples, Some(id))?;
            Ok((id.clone(), EvalReport::from_predictions(&gold, &pred)?.macro_f1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-length principal axes, largest variance first.
    pub components: [Vec<f64>; 2],
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance: [f64; 2],
    pub projection: Vec<[f64; 2]>,
    pub centroid: [f64; 2],
}

pub fn pca_2d(table: &Tensor2D) -> Result<Pca> {
    let (n, d) = (table.rows(), table.cols());
    if n < 2 {
        return Err(AnalysisError::TooFewPoints(n));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(table.row(r)) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |r, c| table.get(r, c) - mean[c]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    if cov.iter().all(|&v| v == 0.0) {
        return Err(AnalysisError::DegenerateData);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();

    let axis = |k: usize| -> Vec<f64> {
        if k >= d {
            return vec![0.0; d];
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let components = [axis(0), axis(1)];
    let projection: Vec<[f64; 2]> = (0..n)
        .map(|r| {
            let row = centered.row(r);
            let dot = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [dot(&components[0]), dot(&components[1])]
        })
        .collect();
    let centroid = [
        projection.iter().map(|p| p[0]).sum::<f64>() / n as f64,
        projection.iter().map(|p| p[1]).sum::<f64>() / n as f64,
    ];
    let frac = |k: usize| eigenvalues.get(k).map_or(0.0, |e| e / total);
    Ok(Pca {
        mean,
        components,
        explained_variance: [frac(0), frac(1)],
        eigenvalues,
        projection,
        centroid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Histogram {
    pub counts: [usize; N_BINS],
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

pub fn bin_index(score: f64) -> usize {
    ((score * N_BINS as f64).floor() as usize).min(N_BINS - 1)
}

/// Equal-width bins `[i/25, (i+1)/25)`, the last one closed at 1.
pub fn f1_histogram(scores: &[f64]) -> Result<F1Histogram> {
    let mut counts = [0usize; N_BINS];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(AnalysisError::OutOfRangeScore(s));
        }
        counts[bin_index(s)] += 1;
    }
    let (mean, median) = if scores.is_empty() {
        (None, None)
    } else {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        (Some(scores.iter().sum::<f64>() / n as f64), Some(median))
    };
    Ok(F1Histogram { counts, mean, median })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingAnalysis {
    pub per_listener_f1: BTreeMap<String, f64>,
    /// Listener IDs in projection row order.
    pub listener_ids: Vec<String>,
    pub projection: Vec<[f64; 2]>,
    pub centroid: [f64; 2],
    pub explained_variance: [f64; 2],
    pub histogram: F1Histogram,
}

impl EmbeddingAnalysis {
    pub fn empty() -> Self {
        Self {
            per_listener_f1: BTreeMap::new(),
            listener_ids: Vec::new(),
            projection: Vec::new(),
            centroid: [0.0, 0.0],
            explained_variance: [0.0, 0.0],
            histogram: f1_histogram(&[]).unwrap(),
        }
    }
}

/// Sweep, PCA of the listeners' raw table rows, and the F1 histogram.
pub fn analyze_embeddings(model: &Model, examples: &[Example], listeners: &[String]) -> Result<EmbeddingAnalysis> {
    let per_listener_f1 = per_listener_f1(model, examples, listeners)?;
    let table = &model
        .params
        .listener
        .as_ref()
        .ok_or(AnalysisError::VariantWithoutListener(model.variant()))?
        .table;
    let mut rows = Vec::with_capacity(listeners.len() * table.cols());
    for id in listeners {
        rows.extend_from_slice(table.row(model.vocab.lookup(id)?));
    }
    let sub = Tensor2D::new(listeners.len(), table.cols(), rows).expect("row-sized");
    let pca = pca_2d(&sub)?;
    let scores: Vec<f64> = listeners.iter().map(|id| per_listener_f1[id]).collect();
    Ok(EmbeddingAnalysis {
        histogram: f1_histogram(&scores)?,
        per_listener_f1,
        listener_ids: listeners.to_vec(),
        projection: pca.projection,
        centroid: pca.centroid,
        explained_variance: pca.explained_variance,
    })
}

const CLASS_COLUMNS: [&str; 3] = ["NO_BC", "YEAH", "UH_HUH"];

/// `metric,value` rows: accuracy, macro_f1, f1 per class, n_instances.
pub fn eval_csv(report: &EvalReport, prov: &Provenance) -> String {
    let mut s = prov.csv_comment();
    s.push_str("metric,value\n");
    let _ = writeln!(s, "accuracy,{}", fmt_g(report.accuracy));
    let _ = writeln!(s, "macro_f1,{}", fmt_g(report.macro_f1));
    for (name, f1) in CLASS_COLUMNS.iter().zip(report.per_class_f1) {
        let _ = writeln!(s, "f1_{name},{}", fmt_g(f1));
    }
    let _ = writeln!(s, "n_instances,{}", report.n_instances);
    s
}

/// Rows are gold classes, columns predicted classes.
pub fn confusion_csv(confusion: &Confusion, prov: &Provenance) -> String {
    let mut s = prov.csv_comment();
    s.push_str("gold,pred_NO_BC,pred_YEAH,pred_UH_HUH\n");
    for (name, row) in CLASS_COLUMNS.iter().zip(confusion) {
        let _ = writeln!(s, "{name},{},{},{}", row[0], row[1], row[2]);
    }
    s
}

/// `listener_id,macro_f1,pc1,pc2`, one row per listener.
pub fn listeners_csv(a: &EmbeddingAnalysis, prov: &Provenance) -> String {
    let mut s = prov.csv_comment();
    s.push_str("listener_id,macro_f1,pc1,pc2\n");
    for (id, p) in a.listener_ids.iter().zip(&a.projection) {
        let f1 = a.per_listener_f1.get(id).copied().unwrap_or(f64::NAN);
        let _ = writeln!(s, "{id},{},{},{}", fmt_g(f1), fmt_g(p[0]), fmt_g(p[1]));
    }
    s
}

/// `bin,lower,upper,count` for the 25 bins.
pub fn histogram_csv(h: &F1Histogram, prov: &Provenance) -> String {
    let mut s = prov.csv_comment();
    s.push_str("bin,lower,upper,count\n");
    if h.mean.is_none() {
        return s;
    }
    for (i, c) in h.counts.iter().enumerate() {
        let lo = i as f64 / N_BINS as f64;
        let hi = (i + 1) as f64 / N_BINS as f64;
        let _ = writeln!(s, "{i},{},{},{c}", fmt_g(lo), fmt_g(hi));
    }
    s
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn svg_open(title: &str, prov: &Provenance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        s,
        r#"<metadata>config_hash={} seed={}</metadata>"#,
        prov.config_hash, prov.seed
    );
    let _ = writeln!(s, r#"<title>{title}</title>"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN / 2.0);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    s
}

fn axis_labels(s: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{x_label}</text>"#,
        fmt_g(W / 2.0),
        fmt_g(H - 12.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{y_label}</text>"#,
        fmt_g(H / 2.0),
        fmt_g(H / 2.0)
    );
}

struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, a: f64, b: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Self { lo, hi, a, b }
    }

    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

/// Blue at F1 0 through red at F1 1.
fn f1_color(f1: f64) -> String {
    let t = if f1.is_finite() { f1.clamp(0.0, 1.0) } else { 0.0 };
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// Projected listeners as `class="point"` circles colored by F1, plus a
/// single `class="centroid"` cross.
pub fn scatter_svg(a: &EmbeddingAnalysis, prov: &Provenance) -> String {
    let mut s = svg_open("Listener embeddings (PCA)", prov);
    axis_labels(&mut s, "PC1", "PC2");
    if !a.projection.is_empty() {
        let pts = a.projection.iter().chain(std::iter::once(&a.centroid));
        let sx = Scale::new(pts.clone().map(|p| p[0]), MARGIN + 10.0, W - MARGIN / 2.0 - 10.0);
        let sy = Scale::new(pts.map(|p| p[1]), H - MARGIN - 10.0, MARGIN / 2.0 + 10.0);
        for (id, p) in a.listener_ids.iter().zip(&a.projection) {
            let f1 = a.per_listener_f1.get(id).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                r#"<circle class="point" cx="{}" cy="{}" r="3" fill="{}"><title>{id} F1={}</title></circle>"#,
                fmt_g(sx.map(p[0])),
                fmt_g(sy.map(p[1])),
                f1_color(f1),
                fmt_g(f1)
            );
        }
        let (cx, cy) = (sx.map(a.centroid[0]), sy.map(a.centroid[1]));
        let _ = writeln!(
            s,
            r#"<path class="centroid" d="M{} {} L{} {} M{} {} L{} {}" stroke="black" stroke-width="2"/>"#,
            fmt_g(cx - 6.0),
            fmt_g(cy - 6.0),
            fmt_g(cx + 6.0),
            fmt_g(cy + 6.0),
            fmt_g(cx - 6.0),
            fmt_g(cy + 6.0),
            fmt_g(cx + 6.0),
            fmt_g(cy - 6.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn histogram_svg(h: &F1Histogram, prov: &Provenance) -> String {
    let mut s = svg_open("F1 distribution over listeners", prov);
    axis_labels(&mut s, "macro-F1", "listeners");
    let max = h.counts.iter().copied().max().unwrap_or(0);
    if max > 0 {
        let bar_w = (W - 1.5 * MARGIN) / N_BINS as f64;
        let plot_h = H - 1.5 * MARGIN;
        for (i, &c) in h.counts.iter().enumerate() {
            let bh = plot_h * c as f64 / max as f64;
            let _ = writeln!(
                s,
                r##"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="#4a78b0"/>"##,
                fmt_g(MARGIN + i as f64 * bar_w),
                fmt_g(H - MARGIN - bh),
                fmt_g(bar_w * 0.9),
                fmt_g(bh)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// One box per named distribution of F1 scores, on a fixed [0, 1] axis.
pub fn boxplot_svg(groups: &[(String, Vec<f64>)], prov: &Provenance) -> String {
    let mut s = svg_open("F1 distributions", prov);
    axis_labels(&mut s, "", "macro-F1");
    let sy = Scale {
        lo: 0.0,
        hi: 1.0,
        a: H - MARGIN,
        b: MARGIN / 2.0,
    };
    let slot = (W - 1.5 * MARGIN) / groups.len().max(1) as f64;
    for (g, (name, scores)) in groups.iter().enumerate() {
        if scores.is_empty() {
            continue;
        }
        let mut v = scores.clone();
        v.sort_by(f64::total_cmp);
        let [lo, q1, med, q3, hi] = [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| sy.map(quantile(&v, q)));
        let cx = MARGIN + slot * (g as f64 + 0.5);
        let bw = slot * 0.25;
        let _ = writeln!(
            s,
            r##"<g class="box"><line x1="{x}" y1="{lo}" x2="{x}" y2="{hi}" stroke="black"/><rect x="{}" y="{}" width="{}" height="{}" fill="#c8d8ec" stroke="black"/><line x1="{}" y1="{med}" x2="{}" y2="{med}" stroke="black" stroke-width="2"/></g>"##,
            fmt_g(cx - bw),
            fmt_g(q3),
            fmt_g(2.0 * bw),
            fmt_g(q1 - q3),
            fmt_g(cx - bw),
            fmt_g(cx + bw),
            x = fmt_g(cx),
            lo = fmt_g(lo),
            hi = fmt_g(hi),
            med = fmt_g(med),
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{name}</text>"#,
            fmt_g(cx),
            fmt_g(H - MARGIN + 14.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `eval.csv` and `confusion.csv` under `dir`.
pub fn emit_eval_report(report: &EvalReport, dir: &Path, prov: &Provenance) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        ("eval.csv", eval_csv(report, prov)),
        ("confusion.csv", confusion_csv(&report.confusion, prov)),
    ];
    write_all(dir, &files)
}

/// Writes `listeners.csv`, `histogram.csv`, `scatter.svg`, `histogram.svg`
/// and `boxplot.svg` under `dir`.
pub fn emit_embedding_report(a: &EmbeddingAnalysis, dir: &Path, prov: &Provenance) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let scores: Vec<f64> = a.listener_ids.iter().filter_map(|id| a.per_listener_f1.get(id).copied()).collect();
    let files = [
        ("listeners.csv", listeners_csv(a, prov)),
        ("histogram.csv", histogram_csv(&a.histogram, prov)),
        ("scatter.svg", scatter_svg(a, prov)),
        ("histogram.svg", histogram_svg(&a.histogram, prov)),
        ("boxplot.svg", boxplot_svg(&[("listeners".to_string(), scores)], prov)),
    ];
    write_all(dir, &files)
}

fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            write_atomic(&path, body.as_bytes())?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            config_hash: "h".into(),
            seed: 1,
        }
    }

    #[test]
    fn perfect_predictions() {
        let g = [0, 1, 2, 2, 1];
        let r = EvalReport::from_predictions(&g, &g).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class_f1, [1.0; 3]);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn hand_computed_example() {
        let r = EvalReport::from_predictions(&[0, 0, 1, 2], &[0, 1, 1, 2]).unwrap();
        assert_eq!(r.accuracy, 0.75);
        // class 0: P=1, R=1/2; class 1: P=1/2, R=1; class 2 exact
        assert!((r.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class_f1[2], 1.0);
        assert!((r.macro_f1 - 7.0 / 9.0).abs() < 1e-15);
        assert!(matches!(EvalReport::from_predictions(&[], &[]), Err(AnalysisError::EmptySplit)));
    }

    #[test]
    fn histogram_boundaries() {
        let h = f1_histogram(&[0.5; 7]).unwrap();
        assert_eq!(h.counts[12], 7);
        assert_eq!(h.counts.iter().sum::<usize>(), 7);
        let h = f1_histogram(&[0.0, 1.0]).unwrap();
        assert_eq!((h.counts[0], h.counts[24]), (1, 1));
        assert_eq!(h.median, Some(0.5));
        assert!(matches!(f1_histogram(&[1.5]), Err(AnalysisError::OutOfRangeScore(_))));
    }

    #[test]
    fn pca_rejects_degenerate_tables() {
        let t = Tensor2D::from_fn(4, 5, |_, _| 0.3);
        assert!(matches!(pca_2d(&t), Err(AnalysisError::DegenerateData)));
        assert!(matches!(pca_2d(&Tensor2D::zeros(1, 5)), Err(AnalysisError::TooFewPoints(1))));
    }

    #[test]
    fn pca_of_planar_points() {
        let t = Tensor2D::from_fn(6, 5, |r, c| match c {
            1 => r as f64,
            3 => ((r * r) % 5) as f64,
            _ => 0.0,
        });
        let p = pca_2d(&t).unwrap();
        assert!((p.explained_variance[0] + p.explained_variance[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_analysis_reports() {
        let a = EmbeddingAnalysis::empty();
        assert_eq!(listeners_csv(&a, &prov()), "# config_hash=h seed=1\nlistener_id,macro_f1,pc1,pc2\n");
        let svg = scatter_svg(&a, &prov());
        assert_eq!(svg.matches("class=\"axis\"").count(), 2);
        assert_eq!(svg.matches("class=\"point\"").count(), 0);
    }

    #[test]
    fn toy_scatter_counts_markers() {
        let a = EmbeddingAnalysis {
            per_listener_f1: [("a", 0.2), ("b", 0.5), ("c", 0.9)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            listener_ids: vec!["a".into(), "b".into(), "c".into()],
            projection: vec![[1.0, 0.0], [-1.0, 0.5], [0.0, -0.5]],
            centroid: [0.0, 0.0],
            explained_variance: [0.7, 0.3],
            histogram: f1_histogram(&[0.2, 0.5, 0.9]).unwrap(),
        };
        let svg = scatter_svg(&a, &prov());
        assert_eq!(svg.matches("class=\"point\"").count(), 3);
        assert_eq!(svg.matches("class=\"centroid\"").count(), 1);
        assert_eq!(svg, scatter_svg(&a, &prov()));
    }
}
