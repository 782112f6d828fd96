//! Filtering, smoothing, resampling and normalization of uniformly sampled 1D signals.

mod butterworth;
mod resample;
mod savgol;

pub use butterworth::{Biquad, SosFilter};
pub use resample::resample;
pub use savgol::savitzky_golay;

use serde::{Deserialize, Serialize};

use crate::error::{config, degenerate, Error, Result};
use crate::stats;

/// A uniformly sampled waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Vec<f64>,
    rate: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return config(format!("sample rate must be positive, got {rate}"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    /// Same rate, new samples.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Signal {
        Signal { samples, rate: self.rate }
    }

    /// Contiguous sub-signal `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Signal {
        self.with_samples(self.samples[start..end].to_vec())
    }
}

/// Zero-phase Butterworth bandpass of prototype order `order`.
pub fn bandpass_filter(s: &Signal, f_low: f64, f_high: f64, order: usize) -> Result<Signal> {
    let filter = SosFilter::butterworth_bandpass(order, f_low, f_high, s.rate())?;
    Ok(s.with_samples(filter.filtfilt(s.samples())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    /// Zero mean, unit population standard deviation.
    Zscore,
    /// Min-max to [0, 1].
    Minmax01,
    /// Min-max to [-1, 1].
    Minmax11,
    /// Division by the maximum absolute amplitude.
    Maxdiv,
}

impl std::str::FromStr for NormMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(Self::Zscore),
            "minmax01" => Ok(Self::Minmax01),
            "minmax11" => Ok(Self::Minmax11),
            "maxdiv" => Ok(Self::Maxdiv),
            other => config(format!("unknown normalization method '{other}'")),
        }
    }
}

pub fn normalize(s: &Signal, method: NormMethod) -> Result<Signal> {
    Ok(s.with_samples(normalize_values(s.samples(), method)?))
}

/// [`normalize`] over a bare slice.
pub fn normalize_values(x: &[f64], method: NormMethod) -> Result<Vec<f64>> {
    if x.is_empty() {
        return degenerate("cannot normalize an empty signal");
    }
    let (lo, hi) = stats::min_max(x);
    match method {
        NormMethod::Zscore => {
            let sd = stats::std_dev(x);
            if hi == lo || sd == 0.0 {
                return degenerate("z-score of a constant signal");
            }
            let m = stats::mean(x);
            Ok(x.iter().map(|v| (v - m) / sd).collect())
        }
        NormMethod::Minmax01 | NormMethod::Minmax11 => {
            if hi == lo {
                return degenerate("min-max of a constant signal");
            }
            let range = hi - lo;
            Ok(x
                .iter()
                .map(|v| {
                    let unit = (v - lo) / range;
                    if method == NormMethod::Minmax11 {
                        2.0 * unit - 1.0
                    } else {
                        unit
                    }
                })
                .collect())
        }
        NormMethod::Maxdiv => {
            let peak = lo.abs().max(hi.abs());
            if peak == 0.0 {
                return degenerate("max-div of an all-zero signal");
            }
            Ok(x.iter().map(|v| v / peak).collect())
        }
    }
}

/// Linearly corrected QT interval (Framingham): `QT + 0.154 (1 - RR)`, all in seconds.
pub fn framingham_qt(qt: f64, rr: f64) -> Result<f64> {
    if !(qt > 0.0 && rr > 0.0) {
        return Err(Error::Domain(format!("QT and RR must be positive (qt={qt}, rr={rr})")));
    }
    Ok(qt + 0.154 * (1.0 - rr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: f64, n: usize) -> Signal {
        let x = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin())
            .collect();
        Signal::new(x, rate).unwrap()
    }

    fn steady_amplitude(x: &[f64]) -> f64 {
        let mid = &x[x.len() / 4..3 * x.len() / 4];
        mid.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn rejects_bad_rate_and_nan() {
        assert!(matches!(Signal::new(vec![1.0], 0.0), Err(Error::Config(_))));
        assert!(matches!(Signal::new(vec![f64::NAN], 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn bandpass_removes_dc() {
        let s = Signal::new(vec![5.0; 2000], 200.0).unwrap();
        let y = bandpass_filter(&s, 1.0, 40.0, 2).unwrap();
        assert_eq!(y.len(), 2000);
        assert!(steady_amplitude(y.samples()) < 1e-6);
    }

    #[test]
    fn bandpass_passes_10hz_and_attenuates_60hz() {
        let y = bandpass_filter(&sine(10.0, 200.0, 4000), 1.0, 40.0, 2).unwrap();
        let a = steady_amplitude(y.samples());
        assert!((0.95..=1.05).contains(&a), "10 Hz amplitude {a}");
        let y = bandpass_filter(&sine(60.0, 200.0, 4000), 1.0, 40.0, 2).unwrap();
        assert!(steady_amplitude(y.samples()) < 0.5);
    }

    #[test]
    fn bandpass_rejects_invalid_band() {
        let s = sine(10.0, 200.0, 500);
        assert!(matches!(bandpass_filter(&s, 40.0, 1.0, 2), Err(Error::Config(_))));
        assert!(matches!(bandpass_filter(&s, 1.0, 100.0, 2), Err(Error::Config(_))));
        assert!(matches!(bandpass_filter(&s, 0.0, 40.0, 2), Err(Error::Config(_))));
        assert!(matches!(bandpass_filter(&s, 1.0, 40.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_examples() {
        let s = Signal::new(vec![1.0, 2.0, 3.0], 1.0).unwrap();
        let z = normalize(&s, NormMethod::Zscore).unwrap();
        assert!(stats::mean(z.samples()).abs() < 1e-12);
        assert!((stats::std_dev(z.samples()) - 1.0).abs() < 1e-12);

        let m = normalize_values(&[0.0, 5.0, 10.0], NormMethod::Minmax11).unwrap();
        assert_eq!(m, vec![-1.0, 0.0, 1.0]);
        let m = normalize_values(&[0.0, 5.0, 10.0], NormMethod::Minmax01).unwrap();
        assert_eq!(m, vec![0.0, 0.5, 1.0]);
        let d = normalize_values(&[1.0, -4.0, 2.0], NormMethod::Maxdiv).unwrap();
        assert_eq!(d, vec![0.25, -1.0, 0.5]);
    }

    #[test]
    fn normalize_degenerate_inputs() {
        for m in [NormMethod::Zscore, NormMethod::Minmax01, NormMethod::Minmax11] {
            assert!(matches!(normalize_values(&[2.0; 4], m), Err(Error::Degenerate(_))));
        }
        assert!(matches!(
            normalize_values(&[0.0; 4], NormMethod::Maxdiv),
            Err(Error::Degenerate(_))
        ));
        assert!(normalize_values(&[2.0; 4], NormMethod::Maxdiv).is_ok());
    }

    #[test]
    fn framingham_examples() {
        assert!((framingham_qt(0.40, 1.0).unwrap() - 0.40).abs() < 1e-12);
        assert!((framingham_qt(0.40, 0.8).unwrap() - 0.4308).abs() < 1e-12);
        assert!((framingham_qt(0.40, 1.2).unwrap() - 0.3692).abs() < 1e-12);
        assert!(matches!(framingham_qt(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(framingham_qt(0.4, -1.0), Err(Error::Domain(_))));
    }
}
