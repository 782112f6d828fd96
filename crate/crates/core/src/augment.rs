//! Seven 1D augmentation strategies for ECG segments. Every strategy preserves
//! length and is reproducible from its seed. Parameters left as `None` are drawn
//! from the default ranges documented on each variant.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::seeded;
use crate::signal::Signal;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentKind {
    /// Additive sinusoid. Defaults: frequency U[0.8, 1.2] Hz, amplitude 0.1 x signal std.
    BaselineWander { freq_hz: Option<f64>, amplitude: Option<f64> },
    /// Contiguous sub-segment stretched back to full length by linear
    /// interpolation. Default kept fraction U[0.8, 1.0], dropping at least one sample.
    Cropping { fraction: Option<f64> },
    /// Time reversal.
    Flip,
    /// Additive white noise. Default sigma 0.1 x signal std.
    GaussianNoise { sigma: Option<f64> },
    /// Constant gain. Default U[0.9, 1.1].
    MagnitudeScaling { factor: Option<f64> },
    /// Gain `1 + a sin(2 pi f t + phase)`. Defaults: a = 0.1, f U[0.8, 1.2] Hz.
    MagnitudeWarping { amplitude: Option<f64>, freq_hz: Option<f64> },
    /// Split into N near-equal contiguous pieces and reorder them (never the
    /// original order when N > 1). Default N U{2..8}.
    RandomPermutations { segments: Option<usize> },
}

impl AugmentKind {
    /// All seven kinds with default parameters.
    pub fn all_defaults() -> Vec<AugmentKind> {
        vec![
            AugmentKind::BaselineWander { freq_hz: None, amplitude: None },
            AugmentKind::Cropping { fraction: None },
            AugmentKind::Flip,
            AugmentKind::GaussianNoise { sigma: None },
            AugmentKind::MagnitudeScaling { factor: None },
            AugmentKind::MagnitudeWarping { amplitude: None, freq_hz: None },
            AugmentKind::RandomPermutations { segments: None },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AugmentKind::BaselineWander { .. } => "baseline_wander",
            AugmentKind::Cropping { .. } => "cropping",
            AugmentKind::Flip => "flip",
            AugmentKind::GaussianNoise { .. } => "gaussian_noise",
            AugmentKind::MagnitudeScaling { .. } => "magnitude_scaling",
            AugmentKind::MagnitudeWarping { .. } => "magnitude_warping",
            AugmentKind::RandomPermutations { .. } => "random_permutations",
        }
    }

    /// Default-parameter kind from its snake_case name.
    pub fn from_name(name: &str) -> Result<Self> {
        Self::all_defaults()
            .into_iter()
            .find(|k| k.name() == name)
            .map_or_else(|| config(format!("unknown augmentation '{name}'")), Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    #[serde(flatten)]
    pub kind: AugmentKind,
    pub seed: u64,
}

/// The concrete parameters an application resolved to.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentTrace {
    BaselineWander { freq_hz: f64, amplitude: f64, phase: f64 },
    Cropping { start: usize, len: usize },
    Flip,
    GaussianNoise { sigma: f64 },
    MagnitudeScaling { factor: f64 },
    MagnitudeWarping { amplitude: f64, freq_hz: f64, phase: f64 },
    /// `bounds[k]..bounds[k + 1]` is input piece `k`; output places pieces in `order`.
    RandomPermutations { bounds: Vec<usize>, order: Vec<usize> },
}

pub fn apply(s: &Signal, spec: &AugmentSpec) -> Result<Signal> {
    apply_traced(s, spec).map(|(out, _)| out)
}

pub fn apply_traced(s: &Signal, spec: &AugmentSpec) -> Result<(Signal, AugmentTrace)> {
    let x = s.samples();
    let n = x.len();
    if n == 0 {
        return config("cannot augment an empty signal");
    }
    let mut rng = seeded(spec.seed);
    let rate = s.rate();
    let sd = stats::std_dev(x);

    let (out, trace) = match spec.kind {
        AugmentKind::BaselineWander { freq_hz, amplitude } => {
            let f = freq_hz.unwrap_or_else(|| rng.random_range(0.8..=1.2));
            let a = amplitude.unwrap_or(0.1 * sd);
            if !(f > 0.0) || !(a >= 0.0) {
                return config("baseline wander needs positive frequency and non-negative amplitude");
            }
            let phase = rng.random_range(0.0..TAU);
            let y = x
                .iter()
                .enumerate()
                .map(|(i, v)| v + a * (TAU * f * i as f64 / rate + phase).sin())
                .collect();
            (y, AugmentTrace::BaselineWander { freq_hz: f, amplitude: a, phase })
        }
        AugmentKind::Cropping { fraction } => {
            let frac = fraction.unwrap_or_else(|| rng.random_range(0.8..=1.0));
            if !(frac > 0.0 && frac <= 1.0) {
                return config(format!("crop fraction {frac} outside (0, 1]"));
            }
            if n < 2 {
                return config("cropping needs at least 2 samples");
            }
            let mut len = ((frac * n as f64).round() as usize).clamp(2, n);
            // a drawn fraction always removes at least one sample
            if fraction.is_none() && n > 2 {
                len = len.min(n - 1);
            }
            let start = rng.random_range(0..=n - len);
            (crop_stretch(x, start, len), AugmentTrace::Cropping { start, len })
        }
        AugmentKind::Flip => (x.iter().rev().copied().collect(), AugmentTrace::Flip),
        AugmentKind::GaussianNoise { sigma } => {
            let sigma = sigma.unwrap_or(0.1 * sd);
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return config(format!("invalid noise sigma {sigma}"));
            }
            let noise = Normal::new(0.0, sigma).expect("valid sigma");
            let y = x.iter().map(|v| v + noise.sample(&mut rng)).collect();
            (y, AugmentTrace::GaussianNoise { sigma })
        }
        AugmentKind::MagnitudeScaling { factor } => {
            let factor = factor.unwrap_or_else(|| rng.random_range(0.9..=1.1));
            if !(factor > 0.0 && factor.is_finite()) {
                return config(format!("scaling factor {factor} must be positive"));
            }
            (x.iter().map(|v| v * factor).collect(), AugmentTrace::MagnitudeScaling { factor })
        }
        AugmentKind::MagnitudeWarping { amplitude, freq_hz } => {
            let a = amplitude.unwrap_or(0.1);
            let f = freq_hz.unwrap_or_else(|| rng.random_range(0.8..=1.2));
            if !(0.0..1.0).contains(&a) || !(f > 0.0) {
                return config("warping amplitude must lie in [0, 1) and frequency be positive");
            }
            let phase = rng.random_range(0.0..TAU);
            let y = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (1.0 + a * (TAU * f * i as f64 / rate + phase).sin()))
                .collect();
            (y, AugmentTrace::MagnitudeWarping { amplitude: a, freq_hz: f, phase })
        }
        AugmentKind::RandomPermutations { segments } => {
            let pieces = match segments {
                Some(k) => k,
                None => rng.random_range(2..=8usize).min(n),
            };
            if pieces == 0 || pieces > n {
                return config(format!("cannot split {n} samples into {pieces} segments"));
            }
            let bounds: Vec<usize> = (0..=pieces).map(|k| k * n / pieces).collect();
            let mut order: Vec<usize> = (0..pieces).collect();
            // the identity arrangement is redrawn so the output always differs
            while pieces > 1 && order.windows(2).all(|w| w[0] < w[1]) {
                order.shuffle(&mut rng);
            }
            let y = order.iter().flat_map(|&k| x[bounds[k]..bounds[k + 1]].iter().copied()).collect();
            (y, AugmentTrace::RandomPermutations { bounds, order })
        }
    };
    Ok((Signal::new(out, rate)?, trace))
}

/// Linear-interpolation stretch of `x[start..start + len]` onto `x.len()` samples.
pub fn crop_stretch(x: &[f64], start: usize, len: usize) -> Vec<f64> {
    let n = x.len();
    let seg = &x[start..start + len];
    (0..n)
        .map(|i| {
            let pos = if n > 1 { i as f64 * (len - 1) as f64 / (n - 1) as f64 } else { 0.0 };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            let frac = pos - lo as f64;
            seg[lo] * (1.0 - frac) + seg[hi] * frac
        })
        .collect()
}
