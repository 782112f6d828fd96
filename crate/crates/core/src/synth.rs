//! Seeded synthetic ECG: each beat is a sum of five Gaussian bumps (P, Q, R, S, T).
//!
//! Parameter ranges loosely follow textbook P/QRS/T morphology. Nothing here
//! claims physiological fidelity; it exists so every pipeline can run with a
//! known ground truth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::seeded;
use crate::signal::Signal;

/// One Gaussian bump: amplitude, centre offset from the R peak (ms), width (ms, std).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    pub center_ms: f64,
    pub width_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticIdentity {
    /// P, Q, R, S, T in that order.
    pub waves: [Wave; 5],
    pub heart_rate_bpm: f64,
    /// Relative standard deviation of successive RR intervals.
    pub rr_jitter: f64,
    /// Relative standard deviation of per-beat wave amplitudes.
    pub beat_jitter: f64,
    pub seed: u64,
}

const R: usize = 2;

impl SyntheticIdentity {
    /// Draw an identity from the fixed parameter ranges.
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded(seed ^ 0x005E_ED1D);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let waves = [
            Wave { amplitude: u(0.08, 0.25), center_ms: -u(140.0, 200.0), width_ms: u(15.0, 30.0) },
            Wave { amplitude: -u(0.05, 0.25), center_ms: -u(20.0, 35.0), width_ms: u(5.0, 12.0) },
            Wave { amplitude: u(0.9, 1.6), center_ms: 0.0, width_ms: u(6.0, 12.0) },
            Wave { amplitude: -u(0.1, 0.45), center_ms: u(20.0, 40.0), width_ms: u(6.0, 14.0) },
            Wave { amplitude: u(0.15, 0.5), center_ms: u(220.0, 320.0), width_ms: u(30.0, 60.0) },
        ];
        Self {
            waves,
            heart_rate_bpm: u(55.0, 85.0),
            rr_jitter: 0.03,
            beat_jitter: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.waves[R].amplitude.abs();
        if r <= self.waves[0].amplitude.abs() || r <= self.waves[4].amplitude.abs() {
            return config("R amplitude must dominate P and T");
        }
        if self.waves.iter().any(|w| !(w.width_ms > 0.0)) {
            return config("wave widths must be positive");
        }
        if !(40.0..=180.0).contains(&self.heart_rate_bpm) {
            return config(format!("heart rate {} bpm outside [40, 180]", self.heart_rate_bpm));
        }
        if self.rr_jitter < 0.0 || self.beat_jitter < 0.0 {
            return config("jitter must be non-negative");
        }
        Ok(())
    }

    /// Parameter-wise blend `(1 - t) * self + t * other`; used to model slow drift.
    pub fn blend(&self, other: &Self, t: f64) -> Self {
        let mix = |a: f64, b: f64| (1.0 - t) * a + t * b;
        let mut waves = self.waves;
        for (w, o) in waves.iter_mut().zip(&other.waves) {
            w.amplitude = mix(w.amplitude, o.amplitude);
            w.center_ms = mix(w.center_ms, o.center_ms);
            w.width_ms = mix(w.width_ms, o.width_ms);
        }
        Self {
            waves,
            heart_rate_bpm: mix(self.heart_rate_bpm, other.heart_rate_bpm),
            rr_jitter: mix(self.rr_jitter, other.rr_jitter),
            beat_jitter: mix(self.beat_jitter, other.beat_jitter),
            seed: self.seed,
        }
    }
}

/// Recording conditions for [`synth_ecg`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub duration_s: f64,
    pub rate: f64,
    /// Standard deviation of additive white Gaussian noise.
    pub noise_sigma: f64,
    /// Amplitude of a slow (0.15-0.4 Hz) baseline sinusoid; 0 disables it.
    pub baseline_wander: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { duration_s: 10.0, rate: 200.0, noise_sigma: 0.0, baseline_wander: 0.0 }
    }
}

/// Generate a recording and its ground-truth R-peak indices.
pub fn synth_ecg(id: &SyntheticIdentity, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Result<(Signal, Vec<usize>)> {
    id.validate()?;
    if opts.duration_s < 2.0 {
        return config(format!("duration {} s below the 2 s minimum", opts.duration_s));
    }
    if !(opts.rate > 0.0) || opts.noise_sigma < 0.0 || opts.baseline_wander < 0.0 {
        return config("rate must be positive and noise/wander non-negative");
    }
    let n = (opts.duration_s * opts.rate).round() as usize;
    let rr_mean = 60.0 / id.heart_rate_bpm;
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    let mut beat_times = Vec::new();
    let mut t = rng.random_range(0.3..0.3 + rr_mean);
    while t < opts.duration_s {
        beat_times.push(t);
        let rr = rr_mean * (1.0 + id.rr_jitter * std.sample(rng));
        t += rr.max(0.25 * rr_mean);
    }

    let mut x = vec![0.0; n];
    for &tb in &beat_times {
        let waves: Vec<Wave> = id
            .waves
            .iter()
            .map(|w| Wave { amplitude: w.amplitude * (1.0 + id.beat_jitter * std.sample(rng)), ..*w })
            .collect();
        for w in &waves {
            let c = tb + w.center_ms / 1000.0;
            let sd = w.width_ms / 1000.0;
            let lo = (((c - 5.0 * sd) * opts.rate).floor().max(0.0)) as usize;
            let hi = (((c + 5.0 * sd) * opts.rate).ceil().max(0.0) as usize).min(n);
            for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                let d = (i as f64 / opts.rate - c) / sd;
                *v += w.amplitude * (-0.5 * d * d).exp();
            }
        }
    }

    if opts.baseline_wander > 0.0 {
        let f = rng.random_range(0.15..0.4);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for (i, v) in x.iter_mut().enumerate() {
            *v += opts.baseline_wander * (std::f64::consts::TAU * f * i as f64 / opts.rate + phase).sin();
        }
    }
    if opts.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, opts.noise_sigma).expect("valid sigma");
        for v in x.iter_mut() {
            *v += noise.sample(rng);
        }
    }

    let peaks = beat_times
        .iter()
        .map(|t| (t * opts.rate).round() as usize)
        .filter(|&i| i < n)
        .collect();
    Ok((Signal::new(x, opts.rate)?, peaks))
}

/// Root-mean-square amplitude, used to set noise by SNR.
pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}
