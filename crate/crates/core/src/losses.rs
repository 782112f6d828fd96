//! Triplet-family losses with exact gradients. Training distances are squared
//! Euclidean. Every function returns the value and one gradient per input,
//! in argument order.

use serde::{Deserialize, Serialize};

use crate::error::{config, degenerate, input, Result};

/// Cosine clamp applied before `acos` in [`arcface_loss`].
pub const ARCFACE_CLAMP: f64 = 1e-7;
/// Probability floor of the soft histograms in [`linkability_kld`].
pub const KLD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// How the linkability term of [`secure_tl2`] is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Linkability {
    Kld { bins: usize, bandwidth: f64 },
    Stats,
}

fn same_len(vs: &[&[f64]]) -> Result<usize> {
    let n = vs[0].len();
    if n == 0 {
        return input("embeddings must be non-empty");
    }
    if vs.iter().any(|v| v.len() != n) {
        return input("embedding lengths differ");
    }
    Ok(n)
}

/// `||a - b||^2` and its gradient with respect to `a` (the gradient for `b` is the negation).
pub fn sq_dist(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let d = diff.iter().map(|v| v * v).sum();
    (d, diff.into_iter().map(|v| 2.0 * v).collect())
}

fn axpy(acc: &mut [f64], s: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, v)| *a += s * v);
}

/// `max(0, alpha + d_pos - d_neg)` with its derivatives in `(d_pos, d_neg)`.
pub fn triplet_hinge(d_pos: f64, d_neg: f64, alpha: f64) -> (f64, [f64; 2]) {
    let z = alpha + d_pos - d_neg;
    if z > 0.0 {
        (z, [1.0, -1.0])
    } else {
        (0.0, [0.0, 0.0])
    }
}

pub fn triplet_loss(ya: &[f64], yp: &[f64], yn: &[f64], alpha: f64) -> Result<LossResult> {
    let n = same_len(&[ya, yp, yn])?;
    let (dp, gp) = sq_dist(ya, yp);
    let (dn, gn) = sq_dist(ya, yn);
    let (value, [sp, sn]) = triplet_hinge(dp, dn, alpha);
    let mut grads = vec![vec![0.0; n]; 3];
    axpy(&mut grads[0], sp, &gp);
    axpy(&mut grads[0], sn, &gn);
    axpy(&mut grads[1], -sp, &gp);
    axpy(&mut grads[2], -sn, &gn);
    Ok(LossResult { value, grads })
}

/// Secure triplet loss on distances `(d_sp, [d_sn, d_dp, d_dn])`. Returns the
/// value and the index of the negative that receives the gradient (lowest
/// index on ties), or `None` when the hinge is inactive.
pub fn secure_hinge(d_sp: f64, negatives: [f64; 3], alpha: f64) -> (f64, Option<usize>) {
    let mut k = 0;
    for i in 1..3 {
        if negatives[i] < negatives[k] {
            k = i;
        }
    }
    let z = alpha + d_sp - negatives[k];
    if z > 0.0 {
        (z, Some(k))
    } else {
        (0.0, None)
    }
}

/// The five representations of one secure triplet: anchor and positive/negative
/// under the anchor's key (`p1`, `n1`) and under the second key (`p2`, `n2`).
#[derive(Debug, Clone, PartialEq)]
pub struct SecureEmbeddings {
    pub a: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
}

impl SecureEmbeddings {
    /// `(d_sp, d_sn, d_dp, d_dn)`.
    pub fn distances(&self) -> [f64; 4] {
        [
            sq_dist(&self.a, &self.p1).0,
            sq_dist(&self.a, &self.n1).0,
            sq_dist(&self.a, &self.p2).0,
            sq_dist(&self.a, &self.n2).0,
        ]
    }
}

/// Gradients are returned for `(y_a, y_p1, y_p2, y_n1, y_n2)`.
pub fn secure_triplet_loss(
    ya: &[f64],
    yp1: &[f64],
    yp2: &[f64],
    yn1: &[f64],
    yn2: &[f64],
    alpha: f64,
) -> Result<LossResult> {
    let n = same_len(&[ya, yp1, yp2, yn1, yn2])?;
    let (d_sp, g_sp) = sq_dist(ya, yp1);
    // negatives in order: SN, DP, DN
    let others = [(yn1, 3), (yp2, 2), (yn2, 4)];
    let neg: Vec<(f64, Vec<f64>)> = others.iter().map(|(y, _)| sq_dist(ya, y)).collect();
    let (value, chosen) = secure_hinge(d_sp, [neg[0].0, neg[1].0, neg[2].0], alpha);
    let mut grads = vec![vec![0.0; n]; 5];
    if let Some(k) = chosen {
        axpy(&mut grads[0], 1.0, &g_sp);
        axpy(&mut grads[1], -1.0, &g_sp);
        axpy(&mut grads[0], -1.0, &neg[k].1);
        axpy(&mut grads[others[k].1], 1.0, &neg[k].1);
    }
    Ok(LossResult { value, grads })
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `|mu(dp) - mu(dn)| + |sigma(dp) - sigma(dn)|` with population standard deviations.
pub fn linkability_stats(d_dp: &[f64], d_dn: &[f64]) -> Result<LossResult> {
    if d_dp.is_empty() || d_dn.is_empty() {
        return input("linkability needs non-empty distance batches");
    }
    let (m1, s1) = mean_std(d_dp);
    let (m2, s2) = mean_std(d_dn);
    let value = (m1 - m2).abs() + (s1 - s2).abs();
    let (sm, ss) = (sign(m1 - m2), sign(s1 - s2));
    let grad = |x: &[f64], m: f64, s: f64, dir: f64| -> Vec<f64> {
        let n = x.len() as f64;
        x.iter()
            .map(|v| {
                let dsd = if s > 0.0 { (v - m) / (n * s) } else { 0.0 };
                dir * (sm / n + ss * dsd)
            })
            .collect()
    };
    Ok(LossResult { value, grads: vec![grad(d_dp, m1, s1, 1.0), grad(d_dn, m2, s2, -1.0)] })
}

/// Kullback-Leibler divergence between Gaussian-kernel soft histograms of the two
/// batches. Bins are centred on `bins` equal cells spanning `[0, max + 3 bw]`,
/// where `max` is the largest observed distance; each histogram is normalized,
/// floored by `KLD_EPS` and renormalized. The gradient includes the movement of
/// the bin grid with the maximum.
pub fn linkability_kld(d_dp: &[f64], d_dn: &[f64], bins: usize, bw: f64) -> Result<LossResult> {
    if d_dp.is_empty() || d_dn.is_empty() {
        return input("linkability needs non-empty distance batches");
    }
    if bins < 2 || !(bw > 0.0 && bw.is_finite()) {
        return config("KLD linkability needs bins >= 2 and a positive bandwidth");
    }
    let (mut arg, mut max) = (0, f64::NEG_INFINITY);
    for (i, &v) in d_dp.iter().chain(d_dn).enumerate() {
        if v > max {
            max = v;
            arg = i;
        }
    }
    let hi = max + 3.0 * bw;
    let b = bins as f64;
    let centers: Vec<f64> = (0..bins).map(|k| (k as f64 + 0.5) * hi / b).collect();
    let kernel = |c: f64, d: f64| (-(c - d) * (c - d) / (2.0 * bw * bw)).exp();
    let hist = |x: &[f64]| -> Vec<f64> { centers.iter().map(|&c| x.iter().map(|&d| kernel(c, d)).sum()).collect() };
    let (hp, hq) = (hist(d_dp), hist(d_dn));
    let (sp, sq): (f64, f64) = (hp.iter().sum(), hq.iter().sum());
    if !(sp > 0.0 && sq > 0.0) {
        return degenerate("soft histogram has no mass; bandwidth too small");
    }
    let z = 1.0 + b * KLD_EPS;
    let pp: Vec<f64> = hp.iter().map(|h| (h / sp + KLD_EPS) / z).collect();
    let qq: Vec<f64> = hq.iter().map(|h| (h / sq + KLD_EPS) / z).collect();
    let value: f64 = pp.iter().zip(&qq).map(|(p, q)| p * (p / q).ln()).sum();

    // d value / d (raw histogram counts), through both normalizations
    let a: Vec<f64> = pp.iter().zip(&qq).map(|(p, q)| ((p / q).ln() + 1.0) / z).collect();
    let c: Vec<f64> = pp.iter().zip(&qq).map(|(p, q)| -(p / q) / z).collect();
    let through_norm = |g: &[f64], h: &[f64], s: f64| -> Vec<f64> {
        let avg: f64 = g.iter().zip(h).map(|(gv, hv)| gv * hv / s).sum();
        g.iter().map(|gv| (gv - avg) / s).collect()
    };
    let gp = through_norm(&a, &hp, sp);
    let gq = through_norm(&c, &hq, sq);

    let mut d_center = vec![0.0; bins];
    let mut elem = |x: &[f64], g: &[f64]| -> Vec<f64> {
        x.iter()
            .map(|&d| {
                let mut acc = 0.0;
                for k in 0..bins {
                    let slope = kernel(centers[k], d) * (centers[k] - d) / (bw * bw);
                    acc += g[k] * slope;
                    d_center[k] -= g[k] * slope;
                }
                acc
            })
            .collect()
    };
    let mut g_dp = elem(d_dp, &gp);
    let mut g_dn = elem(d_dn, &gq);
    let d_max: f64 = d_center.iter().enumerate().map(|(k, g)| g * (k as f64 + 0.5) / b).sum();
    if arg < d_dp.len() {
        g_dp[arg] += d_max;
    } else {
        g_dn[arg - d_dp.len()] += d_max;
    }
    Ok(LossResult { value, grads: vec![g_dp, g_dn] })
}

/// `gamma * mean(l_STL) + (1 - gamma) * l_L` over a batch. Gradients are
/// returned item-major as `(a, p1, p2, n1, n2)` per item.
pub fn secure_tl2(batch: &[SecureEmbeddings], alpha: f64, gamma: f64, link: Linkability) -> Result<LossResult> {
    if !(0.0..=1.0).contains(&gamma) {
        return config(format!("gamma {gamma} outside [0, 1]"));
    }
    if batch.is_empty() {
        return input("empty secure batch");
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grads = Vec::with_capacity(5 * batch.len());
    let mut stl = 0.0;
    for e in batch {
        let r = secure_triplet_loss(&e.a, &e.p1, &e.p2, &e.n1, &e.n2, alpha)?;
        stl += r.value * inv;
        grads.extend(r.grads.into_iter().map(|g| g.into_iter().map(|v| gamma * inv * v).collect::<Vec<f64>>()));
    }
    let d_dp: Vec<f64> = batch.iter().map(|e| sq_dist(&e.a, &e.p2).0).collect();
    let d_dn: Vec<f64> = batch.iter().map(|e| sq_dist(&e.a, &e.n2).0).collect();
    let l = match link {
        Linkability::Stats => linkability_stats(&d_dp, &d_dn)?,
        Linkability::Kld { bins, bandwidth } => linkability_kld(&d_dp, &d_dn, bins, bandwidth)?,
    };
    let w = 1.0 - gamma;
    if w > 0.0 {
        for (i, e) in batch.iter().enumerate() {
            let (_, g_ap2) = sq_dist(&e.a, &e.p2);
            let (_, g_an2) = sq_dist(&e.a, &e.n2);
            let (sdp, sdn) = (w * l.grads[0][i], w * l.grads[1][i]);
            axpy(&mut grads[5 * i], sdp, &g_ap2);
            axpy(&mut grads[5 * i + 2], -sdp, &g_ap2);
            axpy(&mut grads[5 * i], sdn, &g_an2);
            axpy(&mut grads[5 * i + 4], -sdn, &g_an2);
        }
    }
    Ok(LossResult { value: gamma * stl + w * l.value, grads })
}

/// Compacted stochastic triplet loss on distances, with derivatives in `(d_pos, d_neg)`.
pub fn stochastic_hinge(d_pos: f64, d_neg: f64, alpha: f64, beta: f64, gamma: f64) -> (f64, [f64; 2]) {
    let w1 = beta * gamma;
    let w2 = (1.0 - beta) * (1.0 - gamma);
    let z1 = w1 * (alpha + d_pos - d_neg);
    let z2 = w2 * (alpha + d_neg - d_pos);
    let mut value = 0.0;
    let mut g = [0.0, 0.0];
    if z1 > 0.0 {
        value += z1;
        g[0] += w1;
        g[1] -= w1;
    }
    if z2 > 0.0 {
        value += z2;
        g[0] -= w2;
        g[1] += w2;
    }
    (value, g)
}

pub fn stochastic_triplet_loss(
    ya: &[f64],
    yp: &[f64],
    yn: &[f64],
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<LossResult> {
    if !(0.0..=1.0).contains(&beta) || !(0.0..=1.0).contains(&gamma) {
        return config(format!("beta {beta} and gamma {gamma} must lie in [0, 1]"));
    }
    let n = same_len(&[ya, yp, yn])?;
    let (dp, gp) = sq_dist(ya, yp);
    let (dn, gn) = sq_dist(ya, yn);
    let (value, [sp, sn]) = stochastic_hinge(dp, dn, alpha, beta, gamma);
    let mut grads = vec![vec![0.0; n]; 3];
    axpy(&mut grads[0], sp, &gp);
    axpy(&mut grads[0], sn, &gn);
    axpy(&mut grads[1], -sp, &gp);
    axpy(&mut grads[2], -sn, &gn);
    Ok(LossResult { value, grads })
}

/// Triplet loss plus the mean squared error between the masked-input anchor
/// embedding `y_am` and the clean anchor `y_a`. Gradients for `(y_a, y_p, y_n, y_am)`.
pub fn masked_triplet_loss(ya: &[f64], yp: &[f64], yn: &[f64], yam: &[f64], alpha: f64) -> Result<LossResult> {
    let n = same_len(&[ya, yp, yn, yam])?;
    let mut r = triplet_loss(ya, yp, yn, alpha)?;
    let scale = 1.0 / n as f64;
    let (d, g_am) = sq_dist(yam, ya);
    r.value += d * scale;
    axpy(&mut r.grads[0], -scale, &g_am);
    r.grads.push(g_am.into_iter().map(|v| v * scale).collect());
    Ok(r)
}

fn log_softmax_grad(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let grad = logits
        .iter()
        .enumerate()
        .map(|(j, l)| (l - lse).exp() - if j == target { 1.0 } else { 0.0 })
        .collect();
    (lse - logits[target], grad)
}

/// Softmax cross-entropy on logits; the gradient is `softmax - onehot(target)`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<LossResult> {
    if target >= logits.len() {
        return input(format!("target {target} out of range for {} classes", logits.len()));
    }
    let (value, g) = log_softmax_grad(logits, target);
    Ok(LossResult { value, grads: vec![g] })
}

/// `-ln p[target]` for an already normalized probability vector.
pub fn cross_entropy_probs(probs: &[f64], target: usize) -> Result<LossResult> {
    if target >= probs.len() {
        return input(format!("target {target} out of range for {} classes", probs.len()));
    }
    let p = probs[target];
    if !(p > 0.0 && p <= 1.0) {
        return degenerate(format!("target probability {p} outside (0, 1]"));
    }
    let mut g = vec![0.0; probs.len()];
    g[target] = -1.0 / p;
    Ok(LossResult { value: -p.ln(), grads: vec![g] })
}

fn normalized(v: &[f64], what: &str) -> Result<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return degenerate(format!("{what} has zero norm"));
    }
    Ok((v.iter().map(|x| x / norm).collect(), norm))
}

/// Additive angular margin loss. Embedding and class weights are l2-normalized;
/// the target logit is `s cos(theta_t + m)` and the others `s cos(theta_j)`.
/// Gradients: the embedding first, then one per class-weight row.
pub fn arcface_loss(embedding: &[f64], class_weights: &[Vec<f64>], target: usize, s: f64, m: f64) -> Result<LossResult> {
    if target >= class_weights.len() {
        return input(format!("target {target} out of range for {} classes", class_weights.len()));
    }
    let rows: Vec<&[f64]> = class_weights.iter().map(Vec::as_slice).collect();
    let mut all = vec![embedding];
    all.extend(&rows);
    let n = same_len(&all)?;
    let (xh, xn) = normalized(embedding, "embedding")?;
    let mut wh = Vec::with_capacity(rows.len());
    for (j, r) in rows.iter().enumerate() {
        wh.push(normalized(r, &format!("class weight {j}"))?);
    }
    let cos: Vec<f64> = wh.iter().map(|(w, _)| w.iter().zip(&xh).map(|(a, b)| a * b).sum()).collect();
    let mut logits: Vec<f64> = cos.iter().map(|c| s * c).collect();
    let ct = cos[target];
    let lim = 1.0 - ARCFACE_CLAMP;
    let clamped = ct.clamp(-lim, lim);
    let theta = clamped.acos();
    logits[target] = s * (theta + m).cos();
    // d cos(theta + m) / d cos(theta); zero where the clamp is active
    let dt = if ct == clamped { (theta + m).sin() / theta.sin() } else { 0.0 };

    let (value, g_logits) = log_softmax_grad(&logits, target);
    let g_cos: Vec<f64> = g_logits
        .iter()
        .enumerate()
        .map(|(j, g)| g * s * if j == target { dt } else { 1.0 })
        .collect();
    let mut gx = vec![0.0; n];
    let mut grads = Vec::with_capacity(rows.len() + 1);
    for (j, (w, wn)) in wh.iter().enumerate() {
        let gc = g_cos[j];
        for i in 0..n {
            gx[i] += gc * (w[i] - cos[j] * xh[i]) / xn;
        }
        grads.push(w.iter().zip(&xh).map(|(wv, xv)| gc * (xv - cos[j] * wv) / wn).collect());
    }
    grads.insert(0, gx);
    Ok(LossResult { value, grads })
}
