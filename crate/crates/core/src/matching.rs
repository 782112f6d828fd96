//! Distances between embeddings or sequences, and minimum-over-gallery scoring.
//! All scores are dissimilarities.

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, input, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    /// The metric guarantees `value` in [0, 1].
    pub bounded01: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    SquaredEuclidean,
    NormalizedEuclidean,
    Cosine,
    Dtw,
}

impl std::str::FromStr for Metric {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "squared_euclidean" => Ok(Metric::SquaredEuclidean),
            "normalized_euclidean" => Ok(Metric::NormalizedEuclidean),
            "cosine" => Ok(Metric::Cosine),
            "dtw" => Ok(Metric::Dtw),
            _ => crate::error::config(format!("unknown metric '{s}'")),
        }
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return input(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    Ok(())
}

pub fn euclidean(a: &[f64], b: &[f64], squared: bool) -> Result<Score> {
    check_len(a, b)?;
    let d = stats::squared_distance(a, b);
    Ok(Score { value: if squared { d } else { d.sqrt() }, bounded01: false })
}

/// `Var(a - b) / (2 (Var(a) + Var(b)))` with population variances.
pub fn normalized_euclidean(a: &[f64], b: &[f64]) -> Result<Score> {
    check_len(a, b)?;
    if a.len() < 2 {
        return input("normalized Euclidean distance needs at least 2 elements");
    }
    let denom = 2.0 * (stats::variance(a) + stats::variance(b));
    if !(denom > 0.0) {
        return degenerate("both vectors are constant");
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(Score { value: (stats::variance(&diff) / denom).clamp(0.0, 1.0), bounded01: true })
}

/// `(1 - cos(a, b)) / 2`.
pub fn cosine_dissimilarity(a: &[f64], b: &[f64]) -> Result<Score> {
    check_len(a, b)?;
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return degenerate("cosine dissimilarity of a zero vector");
    }
    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok(Score { value: ((1.0 - cos) / 2.0).clamp(0.0, 1.0), bounded01: true })
}

/// Dynamic time warping with absolute-difference cost and the symmetric
/// (match, insertion, deletion) step pattern, no band constraint.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<Score> {
    if a.is_empty() || b.is_empty() {
        return input("DTW needs non-empty sequences");
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(Score { value: prev[m], bounded01: false })
}

pub fn score(metric: Metric, a: &[f64], b: &[f64]) -> Result<Score> {
    match metric {
        Metric::Euclidean => euclidean(a, b, false),
        Metric::SquaredEuclidean => euclidean(a, b, true),
        Metric::NormalizedEuclidean => normalized_euclidean(a, b),
        Metric::Cosine => cosine_dissimilarity(a, b),
        Metric::Dtw => dtw(a, b),
    }
}

/// The smallest score between `query` and any gallery template.
pub fn min_gallery_score(query: &[f64], gallery: &[Vec<f64>], metric: Metric) -> Result<Score> {
    let mut best: Option<Score> = None;
    for g in gallery {
        let s = score(metric, query, g)?;
        if best.is_none_or(|b| s.value < b.value) {
            best = Some(s);
        }
    }
    best.map_or_else(|| input("empty gallery"), Ok)
}
