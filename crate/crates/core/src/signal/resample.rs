use std::f64::consts::PI;

use super::Signal;
use crate::error::{config, Result};

/// Zero crossings of the sinc kernel on each side of the centre.
const KERNEL_ZEROS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Mirror an out-of-range index back into `0..n` (edge sample not repeated).
fn reflect(mut i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Band-limited resampling with a Hann-windowed sinc kernel. The kernel cutoff
/// follows the lower of the two Nyquist frequencies, so downsampling is
/// anti-aliased. Output length is `round(len * new_rate / rate)`.
pub fn resample(s: &Signal, new_rate: f64) -> Result<Signal> {
    if !(new_rate > 0.0 && new_rate.is_finite()) {
        return config(format!("new rate must be positive, got {new_rate}"));
    }
    if new_rate == s.rate() {
        return Ok(s.clone());
    }
    let x = s.samples();
    let n = x.len();
    let ratio = new_rate / s.rate();
    let n_out = (n as f64 * ratio).round() as usize;
    if n == 0 {
        return Signal::new(Vec::new(), new_rate);
    }
    let cutoff = ratio.min(1.0);
    let half_width = KERNEL_ZEROS / cutoff;

    let out = (0..n_out)
        .map(|j| {
            let u = j as f64 / ratio;
            let lo = (u - half_width).ceil() as i64;
            let hi = (u + half_width).floor() as i64;
            let (mut acc, mut wsum) = (0.0, 0.0);
            for k in lo..=hi {
                let t = u - k as f64;
                let window = 0.5 * (1.0 + (PI * t / half_width).cos());
                let h = cutoff * sinc(cutoff * t) * window;
                acc += h * x[reflect(k, n as i64)];
                wsum += h;
            }
            acc / wsum
        })
        .collect();
    Signal::new(out, new_rate)
}
