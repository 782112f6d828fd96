use std::f64::consts::PI;

use nalgebra::Complex;

use crate::error::{config, Result};

/// One second-order section, `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, w: f64) -> Complex<f64> {
        let z1 = Complex::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z1 * self.a[1] + z2 * self.a[2];
        num / den
    }

    /// Transposed direct-form-II state reached after a unit step settles.
    fn step_state(&self) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2]);
        let z2 = self.b[2] - self.a[2] * dc;
        let z1 = self.b[1] - self.a[1] * dc + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2])
    }
}

/// A cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Digital Butterworth bandpass with an order-`order` lowpass prototype
    /// (`order` biquads), designed by bilinear transform with pre-warping and
    /// normalized to unit gain at the geometric centre frequency.
    pub fn butterworth_bandpass(order: usize, f_low: f64, f_high: f64, rate: f64) -> Result<Self> {
        if order == 0 {
            return config("filter order must be positive");
        }
        if !(f_low > 0.0 && f_low < f_high && f_high < rate / 2.0) {
            return config(format!(
                "invalid band [{f_low}, {f_high}] Hz for sample rate {rate} Hz"
            ));
        }
        let wl = (PI * f_low / rate).tan();
        let wh = (PI * f_high / rate).tan();
        let bw = wh - wl;
        let w0_sq = wl * wh;

        let mut poles = Vec::with_capacity(2 * order);
        for k in 1..=order {
            let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
            let p = Complex::from_polar(1.0, theta);
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
                poles.push((Complex::new(1.0, 0.0) + s) / (Complex::new(1.0, 0.0) - s));
            }
        }

        let tol = 1e-10;
        let mut complex: Vec<Complex<f64>> = poles.iter().copied().filter(|p| p.im > tol).collect();
        let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= tol).map(|p| p.re).collect();
        complex.sort_by(|a, b| a.re.total_cmp(&b.re));
        real.sort_by(f64::total_cmp);

        let mut sections = Vec::with_capacity(order);
        for p in complex {
            sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -2.0 * p.re, p.norm_sqr()] });
        }
        for pair in real.chunks(2) {
            let (p1, p2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
            sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -(p1 + p2), p1 * p2] });
        }

        let mut filter = Self { sections };
        let w_center = 2.0 * w0_sq.sqrt().atan();
        let gain = filter.response(w_center).norm();
        for c in filter.sections[0].b.iter_mut() {
            *c /= gain;
        }
        Ok(filter)
    }

    fn response(&self, w: f64) -> Complex<f64> {
        self.sections.iter().fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    /// Single-pass magnitude response at `freq` Hz.
    pub fn magnitude(&self, freq: f64, rate: f64) -> f64 {
        self.response(2.0 * PI * freq / rate).norm()
    }

    /// Causal filtering. With `steady_start` the section states are initialized to
    /// the steady state of a constant input equal to `x[0]`.
    pub fn lfilter(&self, x: &[f64], steady_start: bool) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.sections {
            let mut state = if steady_start {
                let st = s.step_state();
                [st[0] * level, st[1] * level]
            } else {
                [0.0, 0.0]
            };
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + state[0];
                state[0] = s.b[1] * xin - s.a[1] * out + state[1];
                state[1] = s.b[2] * xin - s.a[2] * out;
                *v = out;
            }
            level *= s.dc_gain();
        }
        y
    }

    /// Forward-backward (zero-phase) filtering with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return self.lfilter(x, true);
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let mut y = self.lfilter(&ext, true);
        y.reverse();
        let mut y = self.lfilter(&y, true);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}
