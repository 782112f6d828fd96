//! Verification, identification, classification, regression and
//! reconstruction metrics.
//!
//! Verification convention: for dissimilarity scores a comparison matches at
//! threshold `t` when `score < t`; a score equal to `t` is a non-match.
//! Similarity tables are negated internally and reported in their own units.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, input, Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Similarity,
    #[default]
    Dissimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub convention: Convention,
}

impl ScoreTable {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>, convention: Convention) -> Self {
        Self { genuine, impostor, convention }
    }

    pub fn dissimilarity(genuine: Vec<f64>, impostor: Vec<f64>) -> Self {
        Self::new(genuine, impostor, Convention::Dissimilarity)
    }

    fn to_internal(&self, v: &[f64]) -> Vec<f64> {
        match self.convention {
            Convention::Dissimilarity => v.to_vec(),
            Convention::Similarity => v.iter().map(|s| -s).collect(),
        }
    }

    /// CSV with header `score,label` and labels `genuine` / `impostor`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["score", "label"])?;
        for (scores, label) in [(&self.genuine, "genuine"), (&self.impostor, "impostor")] {
            for s in scores {
                out.write_record([s.to_string().as_str(), label])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, convention: Convention) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["score", "label"] {
            return Err(Error::Parse { line: 1, message: "expected header 'score,label'".into() });
        }
        let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let parse_err = |m: String| Error::Parse { line, message: m };
            let score: f64 = rec
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|_| parse_err(format!("bad score '{}'", rec.get(0).unwrap_or(""))))?;
            if !score.is_finite() {
                return Err(parse_err("non-finite score".into()));
            }
            match rec.get(1) {
                Some("genuine") => genuine.push(score),
                Some("impostor") => impostor.push(score),
                other => return Err(parse_err(format!("bad label {other:?}"))),
            }
        }
        Ok(Self { genuine, impostor, convention })
    }
}

/// Empirical FMR/FNMR at every operating point: `-inf`, each distinct score
/// in ascending internal order, and `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    /// In the table's own units, ordered by increasing FMR.
    pub thresholds: Vec<f64>,
    pub fmr: Vec<f64>,
    pub fnmr: Vec<f64>,
    pub convention: Convention,
}

/// Fraction of `sorted` strictly below `t`.
pub fn rate_below(sorted: &[f64], t: f64) -> f64 {
    sorted.partition_point(|&s| s < t) as f64 / sorted.len() as f64
}

/// Fraction of `sorted` at or above `t`, counted directly rather than as
/// `1 - rate_below` so the rate is the correctly rounded ratio.
pub fn rate_at_or_above(sorted: &[f64], t: f64) -> f64 {
    (sorted.len() - sorted.partition_point(|&s| s < t)) as f64 / sorted.len() as f64
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Internal (dissimilarity-domain) operating thresholds for a set of scores.
fn operating_thresholds(all: &[f64]) -> Vec<f64> {
    let mut t = sorted(all);
    t.dedup();
    t.insert(0, f64::NEG_INFINITY);
    t.push(f64::INFINITY);
    t
}

pub fn curves(st: &ScoreTable) -> Result<CurveSet> {
    if st.genuine.is_empty() || st.impostor.is_empty() {
        return input("curves need non-empty genuine and impostor populations");
    }
    let g = sorted(&st.to_internal(&st.genuine));
    let i = sorted(&st.to_internal(&st.impostor));
    let all: Vec<f64> = g.iter().chain(&i).copied().collect();
    let thresholds = operating_thresholds(&all);
    let fmr = thresholds.iter().map(|&t| rate_below(&i, t)).collect();
    let fnmr = thresholds.iter().map(|&t| rate_at_or_above(&g, t)).collect();
    let thresholds = match st.convention {
        Convention::Dissimilarity => thresholds,
        Convention::Similarity => thresholds.into_iter().map(|t| -t).collect(),
    };
    Ok(CurveSet { thresholds, fmr, fnmr, convention: st.convention })
}

/// Location of the equal-error crossing: rates interpolate as
/// `(1 - lambda) * r[index - 1] + lambda * r[index]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub index: usize,
    pub lambda: f64,
}

impl EerPoint {
    /// Interpolate any per-operating-point quantity at the crossing.
    pub fn interpolate(&self, values: &[f64]) -> f64 {
        if self.index == 0 || self.lambda == 1.0 {
            return values[self.index];
        }
        (1.0 - self.lambda) * values[self.index - 1] + self.lambda * values[self.index]
    }
}

/// Equal error rate by linear interpolation where FNMR - FMR changes sign.
pub fn eer_point(c: &CurveSet) -> EerPoint {
    let diff: Vec<f64> = c.fnmr.iter().zip(&c.fmr).map(|(n, m)| n - m).collect();
    let k = diff.iter().position(|&d| d <= 0.0).unwrap_or(diff.len() - 1);
    if diff[k] == 0.0 || k == 0 {
        return EerPoint { eer: c.fmr[k], index: k, lambda: 1.0 };
    }
    let lambda = diff[k - 1] / (diff[k - 1] - diff[k]);
    let p = EerPoint { eer: 0.0, index: k, lambda };
    EerPoint { eer: p.interpolate(&c.fmr), ..p }
}

pub fn eer(c: &CurveSet) -> f64 {
    eer_point(c).eer
}

/// Area under the ROC `(FMR, 1 - FNMR)` by the trapezoid rule.
pub fn auc(c: &CurveSet) -> f64 {
    c.fmr
        .windows(2)
        .zip(c.fnmr.windows(2))
        .map(|(m, n)| (m[1] - m[0]) * ((1.0 - n[0]) + (1.0 - n[1])) / 2.0)
        .sum()
}

/// Lowest FNMR over operating points with FMR strictly below `target`.
pub fn fnmr_at_fmr(c: &CurveSet, target: f64) -> f64 {
    c.fmr
        .iter()
        .zip(&c.fnmr)
        .filter(|(m, _)| **m < target)
        .map(|(_, n)| *n)
        .fold(1.0, f64::min)
}

/// Mean genuine and mean impostor score.
pub fn gmean_imean(st: &ScoreTable) -> Result<(f64, f64)> {
    if st.genuine.is_empty() || st.impostor.is_empty() {
        return input("empty score population");
    }
    Ok((stats::mean(&st.genuine), stats::mean(&st.impostor)))
}

/// Thresholds, FMR and FNMR as CSV for plotting.
pub fn write_curves_csv<W: Write>(c: &CurveSet, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold", "fmr", "fnmr"])?;
    for ((t, m), n) in c.thresholds.iter().zip(&c.fmr).zip(&c.fnmr) {
        out.write_record([t.to_string(), m.to_string(), n.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    /// Rank-1 identification rate (with threshold).
    pub idr: f64,
    pub midr: f64,
    /// TPIR at the requested rank (with threshold).
    pub tpir_r: f64,
    /// TPIR(R) for R = 1..N without threshold.
    pub cmc: Vec<f64>,
    /// Fraction of unenrolled queries returning any candidate; `None` if there are none.
    pub fpir: Option<f64>,
}

/// Rank (1-based) of column `target` when columns are ordered by ascending
/// dissimilarity, ties broken by column index.
fn rank_of(row: &[f64], target: usize) -> usize {
    let s = row[target];
    1 + row.iter().enumerate().filter(|&(j, &v)| j != target && (v < s || (v == s && j < target))).count()
}

/// `scores[q][e]` is the dissimilarity between query `q` and enrolled identity
/// `enrolled_ids[e]`. A query whose true identity is `None` or not enrolled
/// counts toward FPIR. `threshold = None` accepts every candidate; otherwise a
/// candidate is returned only when its score is below the threshold.
pub fn identification_metrics(
    scores: &[Vec<f64>],
    enrolled_ids: &[usize],
    true_ids: &[Option<usize>],
    rank: usize,
    threshold: Option<f64>,
) -> Result<IdentificationReport> {
    if scores.len() != true_ids.len() {
        return input("score rows and true ids differ in length");
    }
    let n = enrolled_ids.len();
    if n == 0 || scores.iter().any(|r| r.len() != n) {
        return input("every score row must have one column per enrolled identity");
    }
    if rank == 0 {
        return input("rank must be at least 1");
    }
    let t = threshold.unwrap_or(f64::INFINITY);
    let mut ranks = Vec::new();
    let mut passes = Vec::new();
    let (mut unenrolled, mut false_pos) = (0usize, 0usize);
    for (row, id) in scores.iter().zip(true_ids) {
        match id.and_then(|id| enrolled_ids.iter().position(|e| *e == id)) {
            Some(col) => {
                ranks.push(rank_of(row, col));
                passes.push(row[col] < t);
            }
            None => {
                unenrolled += 1;
                if row.iter().any(|&s| s < t) {
                    false_pos += 1;
                }
            }
        }
    }
    let mated = ranks.len();
    if mated == 0 {
        return input("no query belongs to an enrolled identity");
    }
    let tpir = |r: usize, thr: bool| {
        ranks.iter().zip(&passes).filter(|(k, p)| **k <= r && (!thr || **p)).count() as f64 / mated as f64
    };
    let idr = tpir(1, true);
    Ok(IdentificationReport {
        idr,
        midr: 1.0 - idr,
        tpir_r: tpir(rank, true),
        cmc: (1..=n).map(|r| tpir(r, false)).collect(),
        fpir: (unenrolled > 0).then(|| false_pos as f64 / unenrolled as f64),
    })
}

/// Query-by-gallery dissimilarities for identification. CSV header is
/// `true_id` followed by the enrolled identity labels; an empty `true_id`
/// marks a query from an unenrolled subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub enrolled_ids: Vec<usize>,
    pub true_ids: Vec<Option<usize>>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["true_id".to_string()];
        header.extend(self.enrolled_ids.iter().map(usize::to_string));
        out.write_record(&header)?;
        for (t, row) in self.true_ids.iter().zip(&self.scores) {
            let mut rec = vec![t.map_or(String::new(), |v| v.to_string())];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let header_err = || Error::Parse { line: 1, message: "expected header 'true_id,<enrolled ids>'".into() };
        if headers.get(0) != Some("true_id") || headers.len() < 2 {
            return Err(header_err());
        }
        let enrolled_ids = headers.iter().skip(1).map(|h| h.parse().map_err(|_| header_err())).collect::<Result<Vec<usize>>>()?;
        let (mut true_ids, mut scores) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let parse_err = |m: String| Error::Parse { line, message: m };
            let t = rec.get(0).unwrap_or("");
            true_ids.push(if t.is_empty() { None } else { Some(t.parse().map_err(|_| parse_err(format!("bad true_id '{t}'")))?) });
            let row = rec
                .iter()
                .skip(1)
                .map(|v| match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(parse_err(format!("bad score '{v}'"))),
                })
                .collect::<Result<Vec<f64>>>()?;
            scores.push(row);
        }
        Ok(Self { enrolled_ids, true_ids, scores })
    }

    pub fn metrics(&self, rank: usize, threshold: Option<f64>) -> Result<IdentificationReport> {
        identification_metrics(&self.scores, &self.enrolled_ids, &self.true_ids, rank, threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Binary labels only; class 1 is the positive (attack) class.
    pub f1: Option<f64>,
    /// Attacks (label 1) classified as bona fide, over attacks.
    pub apcer: Option<f64>,
    /// Bona fide presentations (label 0) classified as attacks, over bona fide.
    pub bpcer: Option<f64>,
}

pub fn classification_metrics(preds: &[usize], labels: &[usize]) -> Result<ClassificationReport> {
    if preds.len() != labels.len() {
        return input("predictions and labels differ in length");
    }
    if preds.is_empty() {
        return input("no predictions");
    }
    let n = preds.len() as f64;
    let accuracy = preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / n;
    let binary = preds.iter().chain(labels).all(|&c| c <= 1);
    if !binary {
        return Ok(ClassificationReport { accuracy, f1: None, apcer: None, bpcer: None });
    }
    let count = |p: usize, l: usize| preds.iter().zip(labels).filter(|&(a, b)| *a == p && *b == l).count() as f64;
    let (tp, fp, fn_, tn) = (count(1, 1), count(1, 0), count(0, 1), count(0, 0));
    let f1 = if tp > 0.0 {
        let (p, r) = (tp / (tp + fp), tp / (tp + fn_));
        Some(2.0 * p * r / (p + r))
    } else if fp + fn_ > 0.0 {
        Some(0.0)
    } else {
        None
    };
    let apcer = (tp + fn_ > 0.0).then(|| fn_ / (tp + fn_));
    let bpcer = (tn + fp > 0.0).then(|| fp / (tn + fp));
    Ok(ClassificationReport { accuracy, f1, apcer, bpcer })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub rmse: f64,
    pub cc: f64,
    pub ccc: f64,
    pub sagr: f64,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// RMSE, Pearson CC, concordance CC and sign agreement, with population moments.
pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionReport> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return input("regression metrics need equal lengths of at least 2");
    }
    let (vp, vt) = (stats::variance(pred), stats::variance(truth));
    if !(vp > 0.0 && vt > 0.0) {
        return degenerate("constant sequence: correlation undefined");
    }
    let cov = stats::covariance(pred, truth);
    let cc = cov / (vp.sqrt() * vt.sqrt());
    let dm = stats::mean(pred) - stats::mean(truth);
    let ccc = 2.0 * cov / (vp + vt + dm * dm);
    let sagr = pred.iter().zip(truth).filter(|(p, t)| sign(**p) == sign(**t)).count() as f64 / pred.len() as f64;
    Ok(RegressionReport { rmse: stats::rmse(pred, truth), cc, ccc, sagr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub pearson_r: f64,
    pub rmse: f64,
    pub ssim_1d: f64,
}

/// SSIM Gaussian window length and standard deviation.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Mean SSIM over all full windows. `x` is the reference: its dynamic range sets
/// the stabilizers `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`. Signals shorter than
/// the window use the longest odd window that fits.
pub fn ssim_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return input("SSIM needs equal, non-empty lengths");
    }
    let (lo, hi) = stats::min_max(x);
    let l = hi - lo;
    if !(l > 0.0) {
        return degenerate("reference signal has zero dynamic range");
    }
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let mut w = SSIM_WINDOW.min(x.len());
    if w.is_multiple_of(2) {
        w -= 1;
    }
    let half = (w / 2) as f64;
    let mut kernel: Vec<f64> = (0..w).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let ks: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= ks);
    let windows = x.len() - w + 1;
    let mut total = 0.0;
    for s in 0..windows {
        let (xs, ys) = (&x[s..s + w], &y[s..s + w]);
        let wm = |v: &[f64]| kernel.iter().zip(v).map(|(k, a)| k * a).sum::<f64>();
        let (mx, my) = (wm(xs), wm(ys));
        let mut vx = 0.0;
        let mut vy = 0.0;
        let mut cxy = 0.0;
        for i in 0..w {
            let (dx, dy) = (xs[i] - mx, ys[i] - my);
            vx += kernel[i] * dx * dx;
            vy += kernel[i] * dy * dy;
            cxy += kernel[i] * dx * dy;
        }
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / windows as f64)
}

pub fn reconstruction_metrics(x: &[f64], y: &[f64]) -> Result<ReconstructionReport> {
    if x.len() != y.len() {
        return input("reconstruction metrics need equal lengths");
    }
    if x.len() < 2 {
        return input("reconstruction metrics need at least 2 samples");
    }
    if !(stats::variance(x) > 0.0 && stats::variance(y) > 0.0) {
        return degenerate("constant signal: correlation undefined");
    }
    Ok(ReconstructionReport { pearson_r: stats::pearson(x, y), rmse: stats::rmse(x, y), ssim_1d: ssim_1d(x, y)? })
}
