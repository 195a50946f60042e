//! Scanpath similarity: grid quantization to symbol strings, string-edit
//! distance (SED), string-based time-delay-embedding distance (SBTDE), and the
//! Mean / ScanPath-Plausibility (SPP) aggregations over viewers.
//!
//! Every distance is computed as `distance(generated, reference)`; SBTDE is
//! directional.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NevaError, Result};
use crate::types::Scanpath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { rows: 5, cols: 5 }
    }
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        let g = GridSpec { rows, cols };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.rows * self.cols < 2 {
            return Err(NevaError::invalid(format!(
                "grid {}x{} must have at least two cells",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// A scanpath as a sequence of grid-cell indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ScanpathString(pub Vec<usize>);

impl ScanpathString {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for ScanpathString {
    fn from(v: Vec<usize>) -> Self {
        ScanpathString(v)
    }
}

/// Cell index `floor(y * rows) * cols + floor(x * cols)`; a coordinate of
/// exactly 1 falls into the last row/column.
pub fn quantize(sp: &Scanpath, grid: &GridSpec) -> ScanpathString {
    let cell = |v: f64, n: usize| ((v * n as f64).floor() as usize).min(n - 1);
    ScanpathString(
        sp.fixations
            .iter()
            .map(|f| cell(f.y, grid.rows) * grid.cols + cell(f.x, grid.cols))
            .collect(),
    )
}

/// Levenshtein distance with unit insertion, deletion and substitution costs.
pub fn sed(a: &ScanpathString, b: &ScanpathString) -> usize {
    let (a, b) = (a.symbols(), b.symbols());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &sa) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &sb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(sa != sb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// String-based time-delay-embedding distance of `a` from `b`.
///
/// For each embedding length `k` in `1..=max_k`, every length-`k` window of
/// `a` is matched to its closest length-`k` window of `b` under normalized
/// Hamming distance; `d_k` is the mean of those minima. The result is the mean
/// of `d_k` over `k` and lies in `[0, 1]`.
pub fn sbtde(a: &ScanpathString, b: &ScanpathString, max_k: usize) -> Result<f64> {
    let limit = a.len().min(b.len());
    if max_k == 0 || max_k > limit {
        return Err(NevaError::invalid(format!(
            "max_k = {max_k} outside [1, {limit}] for strings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (a, b) = (a.symbols(), b.symbols());
    let mut total = 0.0;
    for k in 1..=max_k {
        let mut sum_min = 0.0;
        let windows_a = a.windows(k);
        let count = windows_a.len();
        for x in windows_a {
            let best = b
                .windows(k)
                .map(|y| x.iter().zip(y).filter(|(p, q)| p != q).count())
                .min()
                .expect("b has at least one window");
            sum_min += best as f64 / k as f64;
        }
        total += sum_min / count as f64;
    }
    Ok(total / max_k as f64)
}

pub fn aggregate_mean(dists: &[f64]) -> Result<f64> {
    if dists.is_empty() {
        return Err(NevaError::invalid("cannot aggregate an empty list"));
    }
    // Averaging offsets from the minimum keeps the result >= min under rounding.
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(min + dists.iter().map(|d| d - min).sum::<f64>() / dists.len() as f64)
}

pub fn aggregate_spp(dists: &[f64]) -> Result<f64> {
    dists
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| NevaError::invalid("cannot aggregate an empty list"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "SED")]
    Sed,
    #[serde(rename = "SBTDE")]
    Sbtde,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Sed => "SED",
            MetricKind::Sbtde => "SBTDE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Aggregation {
    Mean,
    #[serde(rename = "SPP")]
    Spp,
}

impl Aggregation {
    pub fn apply(&self, dists: &[f64]) -> Result<f64> {
        match self {
            Aggregation::Mean => aggregate_mean(dists),
            Aggregation::Spp => aggregate_spp(dists),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mean => "Mean",
            Aggregation::Spp => "SPP",
        })
    }
}

/// Row order of the dataset summary.
pub const SUMMARY_ROWS: [(Aggregation, MetricKind); 4] = [
    (Aggregation::Mean, MetricKind::Sed),
    (Aggregation::Spp, MetricKind::Sed),
    (Aggregation::Mean, MetricKind::Sbtde),
    (Aggregation::Spp, MetricKind::Sbtde),
];

/// Name of the leave-one-out viewer column.
pub const HUMAN: &str = "Human";

/// A distance between two symbol strings; `None` when the pair is too short for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Sed,
    Sbtde { max_k: usize },
}

impl Metric {
    pub fn kind(&self) -> MetricKind {
        match self {
            Metric::Sed => MetricKind::Sed,
            Metric::Sbtde { .. } => MetricKind::Sbtde,
        }
    }

    pub fn distance(&self, generated: &ScanpathString, reference: &ScanpathString) -> Option<f64> {
        match *self {
            Metric::Sed => Some(sed(generated, reference) as f64),
            Metric::Sbtde { max_k } => sbtde(generated, reference, max_k).ok(),
        }
    }
}

/// Leave-one-out viewer score for one image.
///
/// Each subject's string is scored against every other subject's with `metric`
/// and `aggregation`; the per-subject scores are averaged. Returns `None` (and
/// logs a warning) when fewer than two subjects can be compared.
pub fn human_baseline(
    image_id: &str,
    subjects: &[(String, ScanpathString)],
    metric: Metric,
    aggregation: Aggregation,
) -> Result<Option<f64>> {
    if subjects.len() < 2 {
        log::warn!("image {image_id}: {} subject(s), human baseline skipped", subjects.len());
        return Ok(None);
    }
    let mut per_subject = Vec::with_capacity(subjects.len());
    for (i, (_, own)) in subjects.iter().enumerate() {
        let dists: Vec<f64> = subjects
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .filter_map(|(_, (_, other))| metric.distance(own, other))
            .collect();
        if !dists.is_empty() {
            per_subject.push(aggregation.apply(&dists)?);
        }
    }
    if per_subject.is_empty() {
        log::warn!("image {image_id}: no comparable subject pairs for {}", metric.kind());
        return Ok(None);
    }
    aggregate_mean(&per_subject).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub grid: GridSpec,
    pub max_k: usize,
    /// Scanpath length; viewer scanpaths are cut to this many fixations.
    pub length: usize,
    pub truncate_viewers: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            grid: GridSpec::default(),
            max_k: 5,
            length: 10,
            truncate_viewers: true,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.length == 0 {
            return Err(NevaError::invalid("scanpath length must be at least 1"));
        }
        if self.max_k == 0 {
            return Err(NevaError::invalid("max_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    pub method: String,
    pub metric: MetricKind,
    pub aggregation: Aggregation,
    pub value: f64,
}

/// Dataset-level value: mean over images of the per-image scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub method: String,
    pub metric: MetricKind,
    pub aggregation: Aggregation,
    pub value: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    /// Sorted by image id, method, metric, aggregation.
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryCell>,
    /// Method columns in output order; the viewer column comes last.
    pub methods: Vec<String>,
    pub errors: Vec<String>,
}

impl EvaluationReport {
    pub fn summary_value(&self, method: &str, aggregation: Aggregation, metric: MetricKind) -> Option<f64> {
        self.summary
            .iter()
            .find(|c| c.method == method && c.aggregation == aggregation && c.metric == metric)
            .map(|c| c.value)
    }
}

/// Per-method generated scanpaths: `method -> image_id -> scanpath`.
pub type MethodScanpaths = BTreeMap<String, BTreeMap<String, Scanpath>>;
/// Viewer scanpaths: `image_id -> [(subject_id, scanpath)]`.
pub type ViewerScanpaths = BTreeMap<String, Vec<(String, Scanpath)>>;

/// Scores every method against the viewers and adds the leave-one-out viewer column.
pub fn evaluate(methods: &MethodScanpaths, viewers: &ViewerScanpaths, cfg: &EvaluationConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let mut report = EvaluationReport::default();
    let sed_metric = Metric::Sed;
    let sbtde_metric = Metric::Sbtde { max_k: cfg.max_k };

    let viewer_strings: BTreeMap<&str, Vec<(String, ScanpathString)>> = viewers
        .iter()
        .map(|(image, subjects)| {
            let strings = subjects
                .iter()
                .map(|(sid, sp)| {
                    let sp = if cfg.truncate_viewers { sp.truncated(cfg.length) } else { sp.clone() };
                    (sid.clone(), quantize(&sp, &cfg.grid))
                })
                .collect();
            (image.as_str(), strings)
        })
        .collect();

    let push = |report: &mut EvaluationReport, image: &str, method: &str, metric: Metric, dists: &[f64]| -> Result<()> {
        if dists.is_empty() {
            return Ok(());
        }
        for aggregation in [Aggregation::Mean, Aggregation::Spp] {
            report.rows.push(MetricRow {
                image_id: image.to_string(),
                method: method.to_string(),
                metric: metric.kind(),
                aggregation,
                value: aggregation.apply(dists)?,
            });
        }
        Ok(())
    };

    for (method, scanpaths) in methods {
        if method == HUMAN {
            return Err(NevaError::invalid(format!("method name {HUMAN:?} is reserved")));
        }
        report.methods.push(method.clone());
        for image in scanpaths.keys().filter(|id| !viewer_strings.contains_key(id.as_str())) {
            report.errors.push(format!("{method}: image {image} has no viewer scanpaths"));
        }
        for image in viewer_strings.keys().filter(|id| !scanpaths.contains_key(**id)) {
            report.errors.push(format!("{method}: no scanpath for image {image}"));
        }
        for (image, sp) in scanpaths {
            let Some(subjects) = viewer_strings.get(image.as_str()) else { continue };
            let generated = quantize(sp, &cfg.grid);
            for metric in [sed_metric, sbtde_metric] {
                let dists: Vec<f64> = subjects
                    .iter()
                    .filter_map(|(_, human)| metric.distance(&generated, human))
                    .collect();
                push(&mut report, image, method, metric, &dists)?;
            }
        }
    }

    report.methods.push(HUMAN.to_string());
    for (image, subjects) in &viewer_strings {
        for metric in [sed_metric, sbtde_metric] {
            for aggregation in [Aggregation::Mean, Aggregation::Spp] {
                if let Some(value) = human_baseline(image, subjects, metric, aggregation)? {
                    report.rows.push(MetricRow {
                        image_id: image.to_string(),
                        method: HUMAN.to_string(),
                        metric: metric.kind(),
                        aggregation,
                        value,
                    });
                }
            }
        }
    }

    report.rows.sort_by(|a, b| {
        (&a.image_id, &a.method, a.metric, a.aggregation).cmp(&(&b.image_id, &b.method, b.metric, b.aggregation))
    });

    for method in &report.methods {
        for (aggregation, metric) in SUMMARY_ROWS {
            let values: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| &r.method == method && r.metric == metric && r.aggregation == aggregation)
                .map(|r| r.value)
                .collect();
            if let Ok(value) = aggregate_mean(&values) {
                report.summary.push(SummaryCell {
                    method: method.clone(),
                    metric,
                    aggregation,
                    value,
                    images: values.len(),
                });
            }
        }
    }
    Ok(report)
}

/// Writes the per-image rows as CSV: `image_id,method,metric,aggregation,value`.
pub fn write_rows_csv<W: std::io::Write>(report: &EvaluationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image_id", "method", "metric", "aggregation", "value"])?;
    for r in &report.rows {
        w.write_record([
            r.image_id.clone(),
            r.method.clone(),
            r.metric.to_string(),
            r.aggregation.to_string(),
            r.value.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes the dataset summary: one row per `"<aggregation> <metric>"`, one column per method.
pub fn write_summary_csv<W: std::io::Write>(report: &EvaluationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["metric".to_string()];
    header.extend(report.methods.iter().cloned());
    w.write_record(&header)?;
    for (aggregation, metric) in SUMMARY_ROWS {
        let mut row = vec![format!("{aggregation} {metric}")];
        for m in &report.methods {
            row.push(
                report
                    .summary_value(m, aggregation, metric)
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
