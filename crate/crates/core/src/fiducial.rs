//! R-peak detection, heartbeat segmentation, DMEAN-style outlier rejection and
//! ensemble templates.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::signal::{Signal, SosFilter};
use crate::stats;

/// Minimum distance between two detected R peaks.
pub const REFRACTORY_MS: f64 = 200.0;

/// R-anchored fixed-length beats cut from one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatSet {
    pub beats: Vec<Vec<f64>>,
    /// Source-signal index of each beat's R peak.
    pub r_indices: Vec<usize>,
    pub pre_ms: f64,
    pub post_ms: f64,
    pub rate: f64,
    pub keep_mask: Vec<bool>,
    /// Peaks discarded because their window crossed a signal edge.
    pub dropped: usize,
}

impl HeartbeatSet {
    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    /// Sample offset of the R peak inside each beat.
    pub fn r_offset(&self) -> usize {
        ms_to_samples(self.pre_ms, self.rate)
    }

    pub fn kept(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.beats.iter().zip(&self.keep_mask).filter(|(_, k)| **k).map(|(b, _)| b)
    }
}

fn ms_to_samples(ms: f64, rate: f64) -> usize {
    (ms / 1000.0 * rate).round() as usize
}

/// Beat length in samples for a `[-pre_ms, +post_ms]` window.
pub fn beat_length(pre_ms: f64, post_ms: f64, rate: f64) -> usize {
    ((pre_ms + post_ms) / 1000.0 * rate).round() as usize
}

/// Pan-Tompkins style QRS detection: 5-15 Hz bandpass, five-point derivative,
/// squaring, 150 ms moving-window integration, then adaptive signal/noise
/// thresholds with a 200 ms refractory period, T-wave discrimination and
/// search-back for missed beats. Returns strictly increasing R-peak indices.
pub fn detect_r_peaks(s: &Signal) -> Result<Vec<usize>> {
    let rate = s.rate();
    if rate < 100.0 {
        return input(format!("R-peak detection needs rate >= 100 Hz, got {rate}"));
    }
    if s.duration() < 2.0 {
        return input(format!("signal of {:.3} s is shorter than 2 s", s.duration()));
    }
    let x = s.samples();
    let n = x.len();

    let band = SosFilter::butterworth_bandpass(2, 5.0, 15.0, rate)?.filtfilt(x);

    let h = 1.0 / rate;
    let deriv: Vec<f64> = (0..n)
        .map(|i| {
            let at = |k: i64| band[(i as i64 + k).clamp(0, n as i64 - 1) as usize];
            (2.0 * at(1) + at(2) - at(-2) - 2.0 * at(-1)) / (8.0 * h)
        })
        .collect();
    let squared: Vec<f64> = deriv.iter().map(|d| d * d).collect();

    // Centred moving-window integration, so integrated peaks stay aligned with the QRS.
    let win = ms_to_samples(150.0, rate).max(1);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + squared[i];
    }
    let mwi: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(win / 2);
            let hi = (i + win - win / 2).min(n);
            (prefix[hi] - prefix[lo]) / win as f64
        })
        .collect();

    let refractory = ms_to_samples(REFRACTORY_MS, rate);
    let half_ref = refractory / 2;
    let candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| {
            let v = mwi[i];
            if v <= 0.0 || v < mwi[i - 1] || v < mwi[i + 1] {
                return false;
            }
            let lo = i.saturating_sub(half_ref);
            let hi = (i + half_ref + 1).min(n);
            // Plateaus: keep the first index attaining the local maximum.
            (lo..hi).all(|j| mwi[j] < v || (mwi[j] == v && j >= i))
        })
        .collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let learn = ms_to_samples(2000.0, rate).min(n);
    let learn_max = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let mut spk = 0.25 * learn_max;
    let mut npk = 0.5 * stats::mean(&mwi[..learn]);
    let slope_at = |i: usize| -> f64 {
        let lo = i.saturating_sub(win / 2);
        let hi = (i + win / 2 + 1).min(n);
        deriv[lo..hi].iter().fold(0.0f64, |m, d| m.max(d.abs()))
    };

    let mut qrs: Vec<usize> = Vec::new();
    let mut last_slope = 0.0;
    let mut rr_history: Vec<usize> = Vec::new();
    let mut skipped: Vec<usize> = Vec::new();

    for &c in &candidates {
        let v = mwi[c];
        let threshold = npk + 0.25 * (spk - npk);
        let mut is_qrs = v > threshold;
        if is_qrs {
            if let Some(&last) = qrs.last() {
                // refractory period, then the T-wave slope test
                let gap = c - last;
                if gap < refractory || (gap < ms_to_samples(360.0, rate) && slope_at(c) < 0.5 * last_slope) {
                    is_qrs = false;
                }
            }
        }

        if is_qrs {
            // Search back for a missed beat before accepting this one.
            if let Some(&last) = qrs.last() {
                if !rr_history.is_empty() {
                    let rr_avg = rr_history.iter().sum::<usize>() as f64 / rr_history.len() as f64;
                    if (c - last) as f64 > 1.66 * rr_avg {
                        let t2 = 0.5 * threshold;
                        let missed = skipped
                            .iter()
                            .copied()
                            .filter(|&k| k > last + refractory && k + refractory < c && mwi[k] > t2)
                            .max_by(|&a, &b| mwi[a].total_cmp(&mwi[b]));
                        if let Some(k) = missed {
                            spk = 0.25 * mwi[k] + 0.75 * spk;
                            rr_history.push(k - last);
                            qrs.push(k);
                        }
                    }
                }
            }
            spk = 0.125 * v + 0.875 * spk;
            if let Some(&last) = qrs.last() {
                rr_history.push(c - last);
                if rr_history.len() > 8 {
                    rr_history.remove(0);
                }
            }
            last_slope = slope_at(c);
            qrs.push(c);
            skipped.clear();
        } else {
            npk = 0.125 * v + 0.875 * npk;
            skipped.push(c);
        }
    }

    // Refine each detection to the bandpassed maximum near the integrated peak.
    let search = ms_to_samples(75.0, rate);
    let mut peaks: Vec<usize> = qrs
        .iter()
        .map(|&c| {
            let lo = c.saturating_sub(search);
            let hi = (c + search + 1).min(n);
            (lo..hi).max_by(|&a, &b| band[a].total_cmp(&band[b]).then(b.cmp(&a))).unwrap_or(c)
        })
        .collect();
    peaks.sort_unstable();
    let mut out: Vec<usize> = Vec::with_capacity(peaks.len());
    for p in peaks {
        match out.last() {
            Some(&q) if p - q < refractory => {
                if band[p] > band[q] {
                    *out.last_mut().unwrap() = p;
                }
            }
            _ => out.push(p),
        }
    }
    Ok(out)
}

/// Cut `[-pre_ms, +post_ms]` windows around each R peak. Peaks whose window
/// crosses a signal edge are dropped and counted.
pub fn segment_heartbeats(s: &Signal, r_indices: &[usize], pre_ms: f64, post_ms: f64) -> HeartbeatSet {
    let rate = s.rate();
    let pre = ms_to_samples(pre_ms, rate);
    let len = beat_length(pre_ms, post_ms, rate);
    let x = s.samples();
    let mut beats = Vec::new();
    let mut kept_r = Vec::new();
    for &r in r_indices {
        if r < pre || r - pre + len > x.len() {
            continue;
        }
        beats.push(x[r - pre..r - pre + len].to_vec());
        kept_r.push(r);
    }
    let dropped = r_indices.len() - beats.len();
    HeartbeatSet {
        keep_mask: vec![true; beats.len()],
        beats,
        r_indices: kept_r,
        pre_ms,
        post_ms,
        rate,
        dropped,
    }
}

/// Outlier rejection with four rules, evaluated on every beat:
///
/// 1. distance to the mean beat `<= alpha *` mean distance-to-mean;
/// 2. minimum amplitude not below the median beat minimum widened outward by `beta`;
/// 3. maximum amplitude not above the median beat maximum widened outward by `beta`;
/// 4. global maximum within 40 ms of the nominal R position.
///
/// "Widened outward" multiplies a bound by `beta` when that moves it away from
/// zero and divides by `beta` otherwise, so bounds always contain the median
/// beat. Fewer than two beats are all kept.
pub fn dmean_outliers(h: &HeartbeatSet, alpha: f64, beta: f64) -> Vec<bool> {
    let n = h.beats.len();
    if n < 2 {
        warn!("DMEAN needs at least 2 beats, got {n}; keeping all");
        return vec![true; n];
    }
    let len = h.beats[0].len();
    let mut mean_beat = vec![0.0; len];
    for b in &h.beats {
        for (m, v) in mean_beat.iter_mut().zip(b) {
            *m += v / n as f64;
        }
    }
    let dists: Vec<f64> = h.beats.iter().map(|b| stats::squared_distance(b, &mean_beat).sqrt()).collect();
    let dist_limit = alpha * stats::mean(&dists);

    let mins: Vec<f64> = h.beats.iter().map(|b| stats::min_max(b).0).collect();
    let maxs: Vec<f64> = h.beats.iter().map(|b| stats::min_max(b).1).collect();
    let lower = widen_down(stats::median(&mins), beta);
    let upper = widen_up(stats::median(&maxs), beta);

    let r_pos = h.r_offset() as i64;
    let tolerance = ms_to_samples(40.0, h.rate) as i64;

    h.beats
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let argmax = b
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(&x.0)))
                .map(|(k, _)| k as i64)
                .unwrap_or(r_pos);
            dists[i] <= dist_limit + 1e-12
                && mins[i] >= lower
                && maxs[i] <= upper
                && (argmax - r_pos).abs() <= tolerance
        })
        .collect()
}

fn widen_up(v: f64, beta: f64) -> f64 {
    if v >= 0.0 {
        v * beta
    } else {
        v / beta
    }
}

fn widen_down(v: f64, beta: f64) -> f64 {
    -widen_up(-v, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    None,
    /// Integer shift (within +-50 ms) maximizing cross-correlation with the first kept beat.
    Xcorr,
}

/// Element-wise mean of kept beats, optionally aligned to the first kept beat.
pub fn average_template(h: &HeartbeatSet, align: Alignment) -> Result<Vec<f64>> {
    let kept: Vec<&Vec<f64>> = h.kept().collect();
    let Some(reference) = kept.first() else {
        return input("no kept beats to average");
    };
    let len = reference.len();
    let max_shift = ms_to_samples(50.0, h.rate) as i64;
    let mut acc = vec![0.0; len];
    for b in &kept {
        let shift = match align {
            Alignment::None => 0,
            Alignment::Xcorr => best_shift(reference, b, max_shift),
        };
        for (t, a) in acc.iter_mut().enumerate() {
            let k = (t as i64 + shift).clamp(0, len as i64 - 1) as usize;
            *a += b[k];
        }
    }
    let count = kept.len() as f64;
    Ok(acc.into_iter().map(|v| v / count).collect())
}

/// Shift `s` maximizing `sum_t reference[t] * beat[t + s]` over the overlap.
fn best_shift(reference: &[f64], beat: &[f64], max_shift: i64) -> i64 {
    let len = reference.len() as i64;
    let max_shift = max_shift.min(len - 1);
    let mut best = (0i64, f64::NEG_INFINITY);
    for s in -max_shift..=max_shift {
        let lo = 0.max(-s);
        let hi = len.min(len - s);
        let c: f64 = (lo..hi).map(|t| reference[t as usize] * beat[(t + s) as usize]).sum();
        if c > best.1 + 1e-12 || (c >= best.1 - 1e-12 && s.abs() < best.0.abs()) {
            best = (s, c);
        }
    }
    best.0
}
