//! Template update over a usage timeline, and confidence-threshold cascade
//! fusion of two classifiers.

use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::embed_net::Adam;
use crate::error::{config, input, Error, Result};
use crate::eval_metrics::{curves, eer, ScoreTable};
use crate::losses::cross_entropy;
use crate::matching::{min_gallery_score, Metric};

/// Templates of one identity in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    templates: Vec<Vec<f64>>,
    fixed: Vec<bool>,
    capacity: usize,
    /// Number of enrollment templates.
    enrolled: usize,
}

impl Gallery {
    pub fn new(templates: Vec<Vec<f64>>, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return config("gallery capacity must be positive");
        }
        if templates.len() > capacity {
            return config(format!("{} enrollment templates exceed capacity {capacity}", templates.len()));
        }
        if let Some(d) = templates.first().map(Vec::len) {
            if templates.iter().any(|t| t.len() != d) {
                return input("enrollment templates differ in length");
            }
        }
        let n = templates.len();
        Ok(Self { fixed: vec![false; n], templates, capacity, enrolled: n })
    }

    pub fn templates(&self) -> &[Vec<f64>] {
        &self.templates
    }

    pub fn fixed_flags(&self) -> &[bool] {
        &self.fixed
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn enrolled(&self) -> usize {
        self.enrolled
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed.iter().filter(|f| **f).count()
    }

    /// Mark the `count` oldest templates as fixed. Already fixed templates stay fixed.
    pub fn fix_oldest(&mut self, count: usize) {
        let k = count.min(self.fixed.len());
        self.fixed[..k].iter_mut().for_each(|f| *f = true);
    }
}

/// Acceptance band on the update score, inclusive at both ends. Use
/// `high = f64::INFINITY` for single-threshold acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if low.is_nan() || high.is_nan() || low > high {
            return config(format!("invalid band [{low}, {high}]"));
        }
        Ok(Self { low, high })
    }

    pub fn contains(&self, score: f64) -> bool {
        self.low <= score && score <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateOutcome {
    OutsideBand,
    Appended,
    /// The template at this position (before removal) was evicted.
    Replaced(usize),
    /// At capacity with every template fixed.
    Skipped,
}

pub fn fifo_update(g: &mut Gallery, candidate: Vec<f64>, score: f64, band: Band) -> Result<UpdateOutcome> {
    if let Some(t) = g.templates.first() {
        if t.len() != candidate.len() {
            return input(format!("candidate length {} differs from gallery length {}", candidate.len(), t.len()));
        }
    }
    if !band.contains(score) {
        return Ok(UpdateOutcome::OutsideBand);
    }
    if g.len() < g.capacity {
        g.templates.push(candidate);
        g.fixed.push(false);
        return Ok(UpdateOutcome::Appended);
    }
    match g.fixed.iter().position(|f| !f) {
        Some(i) => {
            g.templates.remove(i);
            g.fixed.remove(i);
            g.templates.push(candidate);
            g.fixed.push(false);
            Ok(UpdateOutcome::Replaced(i))
        }
        None => {
            warn!("gallery at capacity with every template fixed; update skipped");
            Ok(UpdateOutcome::Skipped)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FixationSchedule {
    /// Fix this fraction of the enrollment templates (rounded to nearest).
    Fraction { fraction: f64 },
    /// At time point `j` (0-based), fix the `n + j n` oldest templates.
    Adaptive { n: usize },
}

impl FixationSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FixationSchedule::Fraction { fraction } if !(0.0..=1.0).contains(&fraction) => {
                config(format!("fixation fraction {fraction} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// Templates fixed at time point `j`.
    pub fn fixed_count(&self, enrolled: usize, j: usize) -> usize {
        match *self {
            FixationSchedule::Fraction { fraction } => (fraction * enrolled as f64).round() as usize,
            FixationSchedule::Adaptive { n } => n + j * n,
        }
    }

    pub fn apply(&self, g: &mut Gallery, j: usize) {
        g.fix_oldest(self.fixed_count(g.enrolled, j));
    }
}

/// Apply the schedule for time point `j`, then FIFO-update among non-fixed templates.
pub fn fixation_update(
    g: &mut Gallery,
    candidate: Vec<f64>,
    score: f64,
    band: Band,
    schedule: FixationSchedule,
    j: usize,
) -> Result<UpdateOutcome> {
    schedule.validate()?;
    schedule.apply(g, j);
    fifo_update(g, candidate, score, band)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum UpdatePolicy {
    Static,
    Fifo { band: Band },
    Fixation { band: Band, schedule: FixationSchedule },
}

/// One time point: test samples are scored first, then candidates may update
/// the gallery of their labeled identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub tests: Vec<(usize, Vec<f64>)>,
    pub candidates: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePointReport {
    pub time_point: usize,
    /// Closed-set rank-1 accuracy against the minimum-distance gallery.
    pub accuracy: f64,
    /// Verification EER, own gallery against every other gallery.
    pub eer: Option<f64>,
    pub n_tests: usize,
    pub n_accepted: usize,
}

fn evaluate(galleries: &[Gallery], tests: &[(usize, Vec<f64>)], metric: Metric) -> Result<(f64, Option<f64>)> {
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    let mut correct = 0usize;
    for (id, x) in tests {
        if *id >= galleries.len() {
            return input(format!("test identity {id} has no gallery"));
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for (g_id, g) in galleries.iter().enumerate() {
            let s = min_gallery_score(x, g.templates(), metric)?.value;
            if s < best.0 {
                best = (s, g_id);
            }
            if g_id == *id {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
        correct += (best.1 == *id) as usize;
    }
    let e = if genuine.is_empty() || impostor.is_empty() {
        None
    } else {
        Some(eer(&curves(&ScoreTable::dissimilarity(genuine, impostor))?))
    };
    Ok((correct as f64 / tests.len() as f64, e))
}

/// Test-then-update over the stream. The update score of a candidate is its
/// minimum distance to its own gallery, so the band is in `metric` units.
pub fn run_timeline(galleries: &mut [Gallery], stream: &[TimePoint], metric: Metric, policy: UpdatePolicy) -> Result<Vec<TimePointReport>> {
    if let UpdatePolicy::Fixation { schedule, .. } = policy {
        schedule.validate()?;
    }
    let mut reports = Vec::new();
    for (j, tp) in stream.iter().enumerate() {
        if tp.tests.is_empty() {
            warn!("time point {j} has no test samples; evaluation skipped");
        } else {
            let (accuracy, eer) = evaluate(galleries, &tp.tests, metric)?;
            reports.push(TimePointReport { time_point: j, accuracy, eer, n_tests: tp.tests.len(), n_accepted: 0 });
        }
        if let UpdatePolicy::Fixation { schedule, .. } = policy {
            galleries.iter_mut().for_each(|g| schedule.apply(g, j));
        }
        let mut accepted = 0;
        for (id, c) in &tp.candidates {
            let g = galleries.get_mut(*id).ok_or_else(|| Error::Input(format!("candidate identity {id} has no gallery")))?;
            let band = match policy {
                UpdatePolicy::Static => continue,
                UpdatePolicy::Fifo { band } | UpdatePolicy::Fixation { band, .. } => band,
            };
            let score = min_gallery_score(c, g.templates(), metric)?.value;
            if matches!(fifo_update(g, c.clone(), score, band)?, UpdateOutcome::Appended | UpdateOutcome::Replaced(_)) {
                accepted += 1;
            }
        }
        if let Some(r) = reports.last_mut().filter(|r| r.time_point == j) {
            r.n_accepted = accepted;
        }
    }
    Ok(reports)
}

fn check_prob_row(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return input("probabilities must lie in [0, 1]");
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return input(format!("probability row sums to {s}"));
    }
    Ok(())
}

/// Lowest index of the maximum.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { lr: 0.05, epochs: 500, l2_lambda: 1e-3 }
    }
}

/// Multinomial logistic regression over concatenated `[primary, secondary]` probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub n_classes: usize,
    /// Row-major `n_classes x 2 n_classes` weights followed by `n_classes` biases.
    pub params: Vec<f64>,
}

impl FusionModel {
    fn n_in(&self) -> usize {
        2 * self.n_classes
    }

    fn logits(&self, primary: &[f64], secondary: &[f64]) -> Vec<f64> {
        let d = self.n_in();
        let (w, b) = self.params.split_at(self.n_classes * d);
        (0..self.n_classes)
            .map(|c| {
                let row = &w[c * d..(c + 1) * d];
                b[c] + row[..self.n_classes].iter().zip(primary).map(|(a, x)| a * x).sum::<f64>()
                    + row[self.n_classes..].iter().zip(secondary).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, primary: &[f64], secondary: &[f64]) -> Result<Vec<f64>> {
        if primary.len() != self.n_classes || secondary.len() != self.n_classes {
            return input(format!("fusion expects {} probabilities per modality", self.n_classes));
        }
        let z = self.logits(primary, secondary);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        Ok(e.into_iter().map(|v| v / s).collect())
    }

    pub fn predict(&self, primary: &[f64], secondary: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(primary, secondary)?))
    }
}

/// One instance of the probability stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbRow {
    pub label: usize,
    pub primary: Vec<f64>,
    pub secondary: Vec<f64>,
}

fn check_rows(rows: &[ProbRow]) -> Result<usize> {
    let n = rows.first().map(|r| r.primary.len()).ok_or_else(|| Error::Input("no probability rows".into()))?;
    for r in rows {
        if r.primary.len() != n || r.secondary.len() != n {
            return input("probability rows differ in class count");
        }
        if r.label >= n {
            return input(format!("label {} out of range for {n} classes", r.label));
        }
        check_prob_row(&r.primary)?;
        check_prob_row(&r.secondary)?;
    }
    Ok(n)
}

/// Full-batch Adam on mean cross-entropy; L2 adds `lambda w` to weight gradients.
/// Parameters start at zero, so training is deterministic.
pub fn fusion_train(rows: &[ProbRow], cfg: &FusionConfig) -> Result<FusionModel> {
    let n = check_rows(rows)?;
    if rows.iter().all(|r| r.label == rows[0].label) {
        return input("fusion training needs at least two classes among the labels");
    }
    let d = 2 * n;
    let n_w = n * d;
    let mut model = FusionModel { n_classes: n, params: vec![0.0; n_w + n] };
    let mut adam = Adam::new(model.params.len());
    let inv = 1.0 / rows.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grads = vec![0.0; model.params.len()];
        for r in rows {
            let z = model.logits(&r.primary, &r.secondary);
            let g = cross_entropy(&z, r.label)?.grads.remove(0);
            for c in 0..n {
                let gc = g[c] * inv;
                let row = &mut grads[c * d..(c + 1) * d];
                for (k, x) in r.primary.iter().chain(&r.secondary).enumerate() {
                    row[k] += gc * x;
                }
                grads[n_w + c] += gc;
            }
        }
        for (g, w) in grads[..n_w].iter_mut().zip(&model.params[..n_w]) {
            *g += cfg.l2_lambda * w;
        }
        adam.step(&mut model.params, &grads, cfg.lr)?;
    }
    Ok(model)
}

/// Confidence is the maximum primary probability; at or above `threshold`
/// the primary argmax is returned, otherwise the secondary modality is
/// queried and fused. Any `threshold > 1` always defers.
pub fn cascade_classify<F>(primary: &[f64], secondary: F, fusion: &FusionModel, threshold: f64) -> Result<(usize, bool)>
where
    F: FnOnce() -> Result<Vec<f64>>,
{
    if threshold.is_nan() || threshold < 0.0 {
        return config(format!("cascade threshold {threshold} must be non-negative"));
    }
    check_prob_row(primary)?;
    let confidence = primary.iter().copied().fold(0.0, f64::max);
    if confidence >= threshold {
        return Ok((argmax(primary), false));
    }
    let s = secondary()?;
    check_prob_row(&s)?;
    Ok((fusion.predict(primary, &s)?, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub accuracy: f64,
    pub deferral: f64,
}

pub fn sweep_threshold(rows: &[ProbRow], fusion: &FusionModel, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    check_rows(rows)?;
    grid.iter()
        .map(|&t| {
            let (mut correct, mut deferred) = (0usize, 0usize);
            for r in rows {
                let (label, d) = cascade_classify(&r.primary, || Ok(r.secondary.clone()), fusion, t)?;
                correct += (label == r.label) as usize;
                deferred += d as usize;
            }
            let n = rows.len() as f64;
            Ok(SweepPoint { threshold: t, accuracy: correct as f64 / n, deferral: deferred as f64 / n })
        })
        .collect()
}

/// Accuracy of the primary argmax, the secondary argmax, and the fusion model.
pub fn unimodal_and_fusion_accuracy(rows: &[ProbRow], fusion: &FusionModel) -> Result<(f64, f64, f64)> {
    check_rows(rows)?;
    let n = rows.len() as f64;
    let acc = |f: &dyn Fn(&ProbRow) -> Result<usize>| -> Result<f64> {
        let mut c = 0usize;
        for r in rows {
            c += (f(r)? == r.label) as usize;
        }
        Ok(c as f64 / n)
    };
    Ok((
        acc(&|r| Ok(argmax(&r.primary)))?,
        acc(&|r| Ok(argmax(&r.secondary)))?,
        acc(&|r| fusion.predict(&r.primary, &r.secondary))?,
    ))
}

/// CSV with header `label,p_primary_1..N,p_secondary_1..N`.
pub fn write_prob_stream<W: Write>(rows: &[ProbRow], w: W) -> Result<()> {
    let n = check_rows(rows)?;
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string()];
    header.extend((1..=n).map(|i| format!("p_primary_{i}")));
    header.extend((1..=n).map(|i| format!("p_secondary_{i}")));
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.label.to_string()];
        rec.extend(r.primary.iter().chain(&r.secondary).map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_prob_stream<R: Read>(r: R) -> Result<Vec<ProbRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let cols = headers.len();
    if cols < 3 || cols % 2 == 0 || &headers[0] != "label" {
        return Err(Error::Parse { line: 1, message: "expected 'label' then 2N probability columns".into() });
    }
    let n = (cols - 1) / 2;
    for i in 1..=n {
        if headers[i] != format!("p_primary_{i}") || headers[n + i] != format!("p_secondary_{i}") {
            return Err(Error::Parse { line: 1, message: format!("unexpected probability column names at class {i}") });
        }
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let label = rec[0].parse().map_err(|_| Error::Parse { line, message: format!("bad label '{}'", &rec[0]) })?;
        let mut p = Vec::with_capacity(2 * n);
        for f in rec.iter().skip(1) {
            p.push(f.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("bad probability '{f}'") })?);
        }
        let secondary = p.split_off(n);
        rows.push(ProbRow { label, primary: p, secondary });
    }
    check_rows(&rows)?;
    Ok(rows)
}
