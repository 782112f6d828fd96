//! Non-fiducial autocorrelation + DCT features.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config, degenerate, input, Result};
use crate::signal::Signal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Extraction settings, e.g. `ac_dct(lags=60,keep=15)`.
    pub provenance: String,
}

/// Biased (1/N) autocorrelation for lags `0..=max_lag`, normalized to 1 at lag 0.
/// The mean is removed first.
pub fn autocorrelation(s: &Signal, max_lag: usize) -> Result<Vec<f64>> {
    let x = s.samples();
    let n = x.len();
    if max_lag >= n {
        return config(format!("max_lag {max_lag} must be below signal length {n}"));
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let r0: f64 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if r0 == 0.0 {
        return degenerate("autocorrelation of a constant signal");
    }
    Ok((0..=max_lag)
        .map(|k| {
            let r: f64 = centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum();
            r / n as f64 / r0
        })
        .collect())
}

/// Cosine table `cos(pi * m / (2n))` for `m in 0..4n`, indexed modulo `4n`.
fn cos_table(n: usize) -> Vec<f64> {
    (0..4 * n).map(|m| (PI * m as f64 / (2 * n) as f64).cos()).collect()
}

/// Orthonormal DCT-II.
pub fn dct2(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 {
        return input("DCT of an empty vector");
    }
    let table = cos_table(n);
    let period = 4 * n;
    let (s0, sk) = ((1.0 / n as f64).sqrt(), (2.0 / n as f64).sqrt());
    Ok((0..n)
        .map(|k| {
            let sum: f64 = v
                .iter()
                .enumerate()
                .map(|(i, x)| x * table[(k * (2 * i + 1)) % period])
                .sum();
            sum * if k == 0 { s0 } else { sk }
        })
        .collect())
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct2(c: &[f64]) -> Result<Vec<f64>> {
    let n = c.len();
    if n == 0 {
        return input("inverse DCT of an empty vector");
    }
    let table = cos_table(n);
    let period = 4 * n;
    let (s0, sk) = ((1.0 / n as f64).sqrt(), (2.0 / n as f64).sqrt());
    Ok((0..n)
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, x)| x * table[(k * (2 * i + 1)) % period] * if k == 0 { s0 } else { sk })
                .sum()
        })
        .collect())
}

/// First `n_keep` DCT coefficients of the normalized autocorrelation.
pub fn ac_dct_features(s: &Signal, ac_lags: usize, n_keep: usize) -> Result<FeatureVector> {
    if n_keep > ac_lags + 1 {
        return config(format!("cannot keep {n_keep} of {} coefficients", ac_lags + 1));
    }
    let ac = autocorrelation(s, ac_lags)?;
    let mut coeffs = dct2(&ac)?;
    coeffs.truncate(n_keep);
    Ok(FeatureVector { values: coeffs, provenance: format!("ac_dct(lags={ac_lags},keep={n_keep})") })
}
