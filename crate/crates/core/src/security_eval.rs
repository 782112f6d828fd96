//! Template-protection evaluation for keyed templates: cancelability curves,
//! score-level unlinkability, and k-NN information estimates for privacy and
//! secrecy leakage. All scores are dissimilarities; information is in nats.

use std::io::{Read, Write};

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{degenerate, input, Error, Result};
use crate::eval_metrics::{curves, eer_point, rate_at_or_above, rate_below, ScoreTable};
use crate::rng::seeded;
use crate::stats;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyedScoreTable {
    pub mated_same_key: Vec<f64>,
    pub mated_diff_key: Vec<f64>,
    pub nonmated_same_key: Vec<f64>,
    pub nonmated_diff_key: Vec<f64>,
}

impl KeyedScoreTable {
    fn list_mut(&mut self, mated: bool, same_key: bool) -> &mut Vec<f64> {
        match (mated, same_key) {
            (true, true) => &mut self.mated_same_key,
            (true, false) => &mut self.mated_diff_key,
            (false, true) => &mut self.nonmated_same_key,
            (false, false) => &mut self.nonmated_diff_key,
        }
    }

    pub fn push(&mut self, score: f64, mated: bool, same_key: bool) {
        self.list_mut(mated, same_key).push(score);
    }

    /// CSV with header `score,mated,same_key`; flags are 0 or 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["score", "mated", "same_key"])?;
        let lists = [
            (&self.mated_same_key, "1", "1"),
            (&self.mated_diff_key, "1", "0"),
            (&self.nonmated_same_key, "0", "1"),
            (&self.nonmated_diff_key, "0", "0"),
        ];
        for (scores, m, k) in lists {
            for s in scores {
                out.write_record([s.to_string().as_str(), m, k])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["score", "mated", "same_key"] {
            return Err(Error::Parse { line: 1, message: "expected header 'score,mated,same_key'".into() });
        }
        let mut t = Self::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let score: f64 = field(0)
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::Parse { line, message: format!("bad score '{}'", field(0)) })?;
            let flag = |k: usize, name: &str| match field(k) {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse { line, message: format!("{name} must be 0 or 1, got '{other}'") }),
            };
            t.push(score, flag(1, "mated")?, flag(2, "same_key")?);
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancelabilityReport {
    /// `-inf`, every distinct score of the three lists, `+inf`.
    pub thresholds: Vec<f64>,
    /// Non-mated, same key accepted.
    pub fmr_v: Vec<f64>,
    /// Mated, different key accepted.
    pub fmr_c: Vec<f64>,
    /// Mated, same key rejected.
    pub fnmr: Vec<f64>,
    /// Verification EER from `mated_same_key` against `nonmated_same_key`.
    pub eer: f64,
    /// FMR_C at the verification EER operating point.
    pub fmr_c_at_eer: f64,
}

pub fn cancelability_analysis(t: &KeyedScoreTable) -> Result<CancelabilityReport> {
    if t.mated_same_key.is_empty() || t.nonmated_same_key.is_empty() || t.mated_diff_key.is_empty() {
        return input("cancelability needs mated/same-key, non-mated/same-key and mated/different-key scores");
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (ms, ns, md) = (sorted(&t.mated_same_key), sorted(&t.nonmated_same_key), sorted(&t.mated_diff_key));

    let verification = curves(&ScoreTable::dissimilarity(t.mated_same_key.clone(), t.nonmated_same_key.clone()))?;
    let p = eer_point(&verification);
    let fmr_c_v: Vec<f64> = verification.thresholds.iter().map(|&th| rate_below(&md, th)).collect();
    let fmr_c_at_eer = p.interpolate(&fmr_c_v);

    let mut thresholds: Vec<f64> = ms.iter().chain(&ns).chain(&md).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.insert(0, f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);
    Ok(CancelabilityReport {
        fmr_v: thresholds.iter().map(|&th| rate_below(&ns, th)).collect(),
        fmr_c: thresholds.iter().map(|&th| rate_below(&md, th)).collect(),
        fnmr: thresholds.iter().map(|&th| rate_at_or_above(&ms, th)).collect(),
        thresholds,
        eer: p.eer,
        fmr_c_at_eer,
    })
}

/// KDE grid size.
pub const KDE_GRID: usize = 512;

/// Silverman's rule: `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let sd = stats::std_dev(x);
    let iqr = stats::quantile(x, 0.75) - stats::quantile(x, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (x.len() as f64).powf(-0.2)
}

fn kde(x: &[f64], bw: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (x.len() as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| norm * x.iter().map(|&v| (-0.5 * ((g - v) / bw).powi(2)).exp()).sum::<f64>())
        .collect()
}

/// Local linkability from a likelihood ratio.
pub fn linkability_d(lr: f64) -> f64 {
    if lr.is_nan() || lr <= 1.0 {
        0.0
    } else {
        2.0 * (1.0 / (1.0 + (-(lr - 1.0)).exp()) - 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlinkabilityReport {
    pub grid: Vec<f64>,
    pub p_mated: Vec<f64>,
    pub p_nonmated: Vec<f64>,
    pub d: Vec<f64>,
    pub d_sys: f64,
    pub bandwidth_mated: f64,
    pub bandwidth_nonmated: f64,
}

/// Score-level linkability between mated and non-mated different-key pairs.
/// `bandwidth = None` uses Silverman's rule on each list. `D_sys` integrates
/// `D(d) p(d|mated)` on the grid, with the mated density renormalized to the grid.
pub fn unlinkability_analysis(mated: &[f64], nonmated: &[f64], bandwidth: Option<f64>) -> Result<UnlinkabilityReport> {
    if mated.is_empty() || nonmated.is_empty() {
        return input("unlinkability needs non-empty mated and non-mated lists");
    }
    if mated.iter().chain(nonmated).any(|v| !v.is_finite()) {
        return input("non-finite score");
    }
    let (bm, bn) = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => (b, b),
        Some(b) => return input(format!("bandwidth must be positive, got {b}")),
        None => (silverman_bandwidth(mated), silverman_bandwidth(nonmated)),
    };
    if !(bm > 0.0 && bn > 0.0) {
        return degenerate("zero KDE bandwidth: a score list is constant");
    }
    let (lo, hi) = stats::min_max(&mated.iter().chain(nonmated).copied().collect::<Vec<_>>());
    let pad = 3.0 * bm.max(bn);
    let (a, b) = (lo - pad, hi + pad);
    let step = (b - a) / (KDE_GRID - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID).map(|i| a + step * i as f64).collect();
    let p_mated = kde(mated, bm, &grid);
    let p_nonmated = kde(nonmated, bn, &grid);
    let d: Vec<f64> = p_mated
        .iter()
        .zip(&p_nonmated)
        .map(|(&pm, &pn)| match (pm > 0.0, pn > 0.0) {
            (true, true) => linkability_d(pm / pn),
            (true, false) => 1.0,
            _ => 0.0,
        })
        .collect();
    let mass: f64 = p_mated.iter().sum();
    let d_sys = if mass > 0.0 {
        (d.iter().zip(&p_mated).map(|(d, p)| d * p).sum::<f64>() / mass).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(UnlinkabilityReport { grid, p_mated, p_nonmated, d, d_sys, bandwidth_mated: bm, bandwidth_nonmated: bn })
}

/// Uniform jitter amplitude added when duplicate samples give zero neighbour distances.
pub const NN_JITTER: f64 = 1e-10;

fn check_samples(x: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return input("k must be at least 1");
    }
    if x.len() <= k {
        return input(format!("need more than k = {k} samples, got {}", x.len()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|v| v.len() != d) {
        return input("samples must share a positive dimension");
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return input("non-finite sample");
    }
    Ok(d)
}

fn jittered(x: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    x.iter()
        .map(|v| v.iter().map(|a| a + rng.random_range(-NN_JITTER..NN_JITTER)).collect())
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    stats::squared_distance(a, b).sqrt()
}

fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Distance from each point to its k-th nearest neighbour (brute force).
fn kth_nn(x: &[Vec<f64>], k: usize, dist: impl Fn(&[f64], &[f64]) -> f64) -> Vec<f64> {
    let mut buf = Vec::with_capacity(x.len());
    x.iter()
        .enumerate()
        .map(|(i, xi)| {
            buf.clear();
            buf.extend(x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, xj)| dist(xi, xj)));
            *buf.select_nth_unstable_by(k - 1, f64::total_cmp).1
        })
        .collect()
}

/// Differential entropy by the Kozachenko-Leonenko k-NN estimator with
/// Euclidean distances:
/// `psi(N) - psi(k) + ln V_d + (d/N) sum ln r_k(i)`.
pub fn kl_entropy(x: &[Vec<f64>], k: usize) -> Result<f64> {
    let d = check_samples(x, k)?;
    let mut r = kth_nn(x, k, euclid);
    if r.contains(&0.0) {
        warn!("zero nearest-neighbour distances in entropy estimate; adding {NN_JITTER:e} jitter");
        r = kth_nn(&jittered(x, 0), k, euclid);
        if r.contains(&0.0) {
            return degenerate("zero nearest-neighbour distances persist after jitter");
        }
    }
    let n = x.len() as f64;
    let df = d as f64;
    let ln_vd = df / 2.0 * std::f64::consts::PI.ln() - ln_gamma(df / 2.0 + 1.0);
    let mean_ln = r.iter().map(|v| v.ln()).sum::<f64>() / n;
    Ok(digamma(n) - digamma(k as f64) + ln_vd + df * mean_ln)
}

fn ksg_raw(x: &[Vec<f64>], y: &[Vec<f64>], k: usize) -> Option<f64> {
    let n = x.len();
    let joint_dist = |i: usize, j: usize| chebyshev(&x[i], &x[j]).max(chebyshev(&y[i], &y[j]));
    let mut sum = 0.0;
    let mut buf = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        buf.extend((0..n).filter(|&j| j != i).map(|j| joint_dist(i, j)));
        let eps = *buf.select_nth_unstable_by(k - 1, f64::total_cmp).1;
        if eps == 0.0 {
            return None;
        }
        let nx = (0..n).filter(|&j| j != i && chebyshev(&x[i], &x[j]) < eps).count();
        let ny = (0..n).filter(|&j| j != i && chebyshev(&y[i], &y[j]) < eps).count();
        sum += digamma((nx + 1) as f64) + digamma((ny + 1) as f64);
    }
    Some(digamma(k as f64) + digamma(n as f64) - sum / n as f64)
}

/// Mutual information by the Kraskov-Stoegbauer-Grassberger estimator
/// (first variant, max-norm), clipped below at zero.
pub fn ksg_mi(x: &[Vec<f64>], y: &[Vec<f64>], k: usize) -> Result<f64> {
    if x.len() != y.len() {
        return input("X and Y must have the same number of samples");
    }
    check_samples(x, k)?;
    check_samples(y, k)?;
    let mi = match ksg_raw(x, y, k) {
        Some(v) => v,
        None => {
            warn!("zero nearest-neighbour distances in MI estimate; adding {NN_JITTER:e} jitter");
            ksg_raw(&jittered(x, 0), &jittered(y, 1), k)
                .ok_or_else(|| Error::Degenerate("zero nearest-neighbour distances persist after jitter".into()))?
        }
    };
    Ok(mi.max(0.0))
}

/// Maximum number of pairs used by the leakage estimators.
pub const LEAKAGE_MAX_PAIRS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub value: f64,
    pub mutual_information: f64,
    /// Entropy of the reference variable; only for privacy leakage.
    pub entropy: Option<f64>,
    pub n_used: usize,
}

fn subsample<R: Rng + ?Sized>(a: &[Vec<f64>], b: &[Vec<f64>], rng: &mut R) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    if a.len() <= LEAKAGE_MAX_PAIRS {
        return (a.to_vec(), b.to_vec());
    }
    let mut idx = sample(rng, a.len(), LEAKAGE_MAX_PAIRS).into_vec();
    idx.sort_unstable();
    (idx.iter().map(|&i| a[i].clone()).collect(), idx.iter().map(|&i| b[i].clone()).collect())
}

/// `1 - I(X;Y) / H(X)`, clamped to [0, 1].
pub fn privacy_leakage<R: Rng + ?Sized>(x: &[Vec<f64>], y: &[Vec<f64>], k: usize, rng: &mut R) -> Result<LeakageReport> {
    if x.len() != y.len() {
        return input("X and Y must have the same number of samples");
    }
    let (xs, ys) = subsample(x, y, rng);
    let h = kl_entropy(&xs, k)?;
    if !(h > 0.0) {
        return degenerate(format!("entropy estimate of X is not positive ({h})"));
    }
    let mi = ksg_mi(&xs, &ys, k)?;
    Ok(LeakageReport { value: (1.0 - mi / h).clamp(0.0, 1.0), mutual_information: mi, entropy: Some(h), n_used: xs.len() })
}

/// `I(Y;K)` between stored templates and their keys. The estimator assumes
/// continuous variables: binary keys give heavily tied max-norm distances and
/// a biased estimate.
pub fn secrecy_leakage<R: Rng + ?Sized>(y: &[Vec<f64>], keys: &[Vec<f64>], k: usize, rng: &mut R) -> Result<LeakageReport> {
    if y.len() != keys.len() {
        return input("Y and K must have the same number of samples");
    }
    let (ys, ks) = subsample(y, keys, rng);
    let mi = ksg_mi(&ys, &ks, k)?;
    Ok(LeakageReport { value: mi, mutual_information: mi, entropy: None, n_used: ys.len() })
}
