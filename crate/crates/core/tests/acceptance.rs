//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test -p cardiokey --test acceptance -- 3 8`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use cardiokey::augment::{apply, apply_traced, AugmentKind, AugmentSpec, AugmentTrace};
use cardiokey::embed_net::{grad_check, Mode, Network, NetworkConfig};
use cardiokey::eval_metrics::{curves, eer, identification_metrics, ScoreTable};
use cardiokey::fiducial::{detect_r_peaks, dmean_outliers, segment_heartbeats, HeartbeatSet};
use cardiokey::losses::*;
use cardiokey::matching::Metric;
use cardiokey::pipeline::*;
use cardiokey::rng::seeded;
use cardiokey::security_eval::{cancelability_analysis, kl_entropy, ksg_mi, unlinkability_analysis};
use cardiokey::signal::Signal;
use cardiokey::synth::{synth_ecg, SynthOptions, SyntheticIdentity};
use cardiokey::update_cascade::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let all: [Criterion; 11] = [
        (1, "gradient correctness", Duration::from_secs(120), c1_gradients),
        (2, "loss reductions", Duration::from_secs(60), c2_reductions),
        (3, "metric oracles", Duration::from_secs(30), c3_metric_oracles),
        (4, "unlinkability calibration", Duration::from_secs(10), c4_unlinkability),
        (5, "estimator calibration", Duration::from_secs(60), c5_estimators),
        (6, "end-to-end synthetic reproduction", Duration::from_secs(15 * 60), c6_end_to_end),
        (7, "stochastic-loss stress curve", Duration::from_secs(10 * 60), c7_stress),
        (8, "cascade contract", Duration::from_secs(60), c8_cascade),
        (9, "fiducial accuracy", Duration::from_secs(60), c9_fiducial),
        (10, "augmentation properties", Duration::from_secs(60), c10_augmentation),
        (11, "template-update benefit", Duration::from_secs(60), c11_template_update),
    ];
    let mut failed = 0;
    for (n, name, budget, run) in all {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        let took = t0.elapsed();
        let pass = o.pass && took <= budget;
        failed += !pass as usize;
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n} ({name}): {verdict}; {}; {:.1} s of {} s", o.detail, took.as_secs_f64(), budget.as_secs());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ---------------------------------------------------------------- 1

const TRIALS: usize = 100;
const KINK: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-4;

/// Largest finite-difference disagreement of `f` over the concatenated parts.
fn check_parts<F>(parts: &[Vec<f64>], f: F) -> f64
where
    F: Fn(&[Vec<f64>]) -> LossResult,
{
    let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
    let split = |x: &[f64]| {
        let mut out = Vec::with_capacity(sizes.len());
        let mut o = 0;
        for s in &sizes {
            out.push(x[o..o + s].to_vec());
            o += s;
        }
        out
    };
    grad_check(
        &parts.concat(),
        |x| {
            let r = f(&split(x));
            (r.value, r.grads.concat())
        },
        1e-6,
    )
}

/// Draw inputs until `TRIALS` of them pass `usable`, returning the worst error.
fn trials<G, U, F>(seed: u64, mut draw: G, usable: U, f: F) -> (f64, usize)
where
    G: FnMut(&mut ChaCha8Rng) -> Vec<Vec<f64>>,
    U: Fn(&[Vec<f64>]) -> bool,
    F: Fn(&[Vec<f64>]) -> LossResult,
{
    let mut rng = seeded(seed);
    let (mut worst, mut done, mut drawn) = (0.0f64, 0, 0);
    while done < TRIALS && drawn < 100 * TRIALS {
        drawn += 1;
        let parts = draw(&mut rng);
        if !usable(&parts) {
            continue;
        }
        worst = worst.max(check_parts(&parts, &f));
        done += 1;
    }
    (worst, done)
}

fn triplet_usable(p: &[Vec<f64>], alpha: f64) -> bool {
    (alpha + d2(&p[0], &p[1]) - d2(&p[0], &p[2])).abs() > KINK
}

fn secure_usable(p: &[Vec<f64>], alpha: f64) -> bool {
    let mut neg = [d2(&p[0], &p[3]), d2(&p[0], &p[2]), d2(&p[0], &p[4])];
    neg.sort_by(f64::total_cmp);
    neg[1] - neg[0] > KINK && (alpha + d2(&p[0], &p[1]) - neg[0]).abs() > KINK
}

fn pop_mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
}

fn stats_usable(dp: &[f64], dn: &[f64]) -> bool {
    let ((m1, s1), (m2, s2)) = (pop_mean_std(dp), pop_mean_std(dn));
    (m1 - m2).abs() > KINK && (s1 - s2).abs() > KINK
}

fn batch_of(p: &[Vec<f64>]) -> Vec<SecureEmbeddings> {
    p.chunks(5)
        .map(|c| SecureEmbeddings { a: c[0].clone(), p1: c[1].clone(), p2: c[2].clone(), n1: c[3].clone(), n2: c[4].clone() })
        .collect()
}

fn tl2_usable(p: &[Vec<f64>], alpha: f64, stats: bool) -> bool {
    let items: Vec<&[Vec<f64>]> = p.chunks(5).collect();
    let dp: Vec<f64> = items.iter().map(|c| d2(&c[0], &c[2])).collect();
    let dn: Vec<f64> = items.iter().map(|c| d2(&c[0], &c[4])).collect();
    items.iter().all(|c| secure_usable(c, alpha)) && (!stats || stats_usable(&dp, &dn))
}

fn net_path_error(cfg: &NetworkConfig, mode: Mode, seed: u64) -> (f64, usize) {
    let key: Vec<f64> = (0..cfg.key_dim).map(|i| if i % 3 == 0 { 0.0 } else { 0.7 }).collect();
    let key = (cfg.key_dim > 0).then_some(key.as_slice());
    let mut rng = seeded(seed);
    let (mut worst, mut done, mut s) = (0.0f64, 0, 0u64);
    while done < TRIALS && s < 100 * TRIALS as u64 {
        s += 1;
        let mut net = Network::new(cfg.clone(), seed * 10_000 + s).unwrap();
        net.set_mode(mode);
        let x = rand_vec(&mut rng, cfg.input_len, -1.0, 1.0);
        let w = rand_vec(&mut rng, cfg.embedding_dim(), -1.0, 1.0);
        let mask_seed = rng.random::<u64>();
        let tr = net.forward_trace(&x, key, &mut seeded(mask_seed)).unwrap();
        if net.kink_margin(&tr) < KINK {
            continue;
        }
        let eval = |net: &Network, x: &[f64]| {
            let tr = net.forward_trace(x, key, &mut seeded(mask_seed)).unwrap();
            let value: f64 = tr.output().iter().zip(&w).map(|(a, b)| a * b).sum();
            let mut g = vec![0.0; net.n_params()];
            let gi = net.backward_trace(&tr, &w, &mut g).unwrap();
            (value, g, gi)
        };
        let mut probe = net.clone();
        let ep = grad_check(
            net.params(),
            |p| {
                probe.set_params(p.to_vec()).unwrap();
                let (v, g, _) = eval(&probe, &x);
                (v, g)
            },
            1e-5,
        );
        let ei = grad_check(
            &x,
            |xi| {
                let (v, _, gi) = eval(&net, xi);
                (v, gi)
            },
            1e-5,
        );
        worst = worst.max(ep).max(ei);
        done += 1;
    }
    (worst, done)
}

fn c1_gradients() -> Outcome {
    const D: usize = 4;
    let alpha = 1.0;
    let v = move |rng: &mut ChaCha8Rng, k: usize| (0..k).map(|_| rand_vec(rng, D, -1.0, 1.0)).collect::<Vec<_>>();
    let mut results: Vec<(&str, (f64, usize))> = vec![
        ("triplet", trials(1, |r| v(r, 3), |p| triplet_usable(p, alpha), |p| triplet_loss(&p[0], &p[1], &p[2], alpha).unwrap())),
        (
            "masked_triplet",
            trials(2, |r| v(r, 4), |p| triplet_usable(p, alpha), |p| masked_triplet_loss(&p[0], &p[1], &p[2], &p[3], alpha).unwrap()),
        ),
        (
            "secure_triplet",
            trials(3, |r| v(r, 5), |p| secure_usable(p, alpha), |p| secure_triplet_loss(&p[0], &p[1], &p[2], &p[3], &p[4], alpha).unwrap()),
        ),
        (
            "linkability_stats",
            trials(
                4,
                |r| vec![rand_vec(r, 6, 0.0, 2.0), rand_vec(r, 6, 0.0, 3.0)],
                |p| stats_usable(&p[0], &p[1]),
                |p| linkability_stats(&p[0], &p[1]).unwrap(),
            ),
        ),
        (
            "linkability_kld",
            trials(
                5,
                |r| vec![rand_vec(r, 8, 0.0, 2.0), rand_vec(r, 8, 0.5, 3.0)],
                |_| true,
                |p| linkability_kld(&p[0], &p[1], 16, 0.3).unwrap(),
            ),
        ),
        (
            "secure_tl2_stats",
            trials(
                6,
                |r| v(r, 15),
                |p| tl2_usable(p, alpha, true),
                |p| secure_tl2(&batch_of(p), alpha, 0.7, Linkability::Stats).unwrap(),
            ),
        ),
        (
            "secure_tl2_kld",
            trials(
                7,
                |r| v(r, 15),
                |p| tl2_usable(p, alpha, false),
                |p| secure_tl2(&batch_of(p), alpha, 0.7, Linkability::Kld { bins: 16, bandwidth: 0.5 }).unwrap(),
            ),
        ),
        ("cross_entropy", trials(9, |r| vec![rand_vec(r, 5, -3.0, 3.0)], |_| true, |p| cross_entropy(&p[0], 2).unwrap())),
        (
            "cross_entropy_probs",
            trials(
                10,
                |r| {
                    let raw = rand_vec(r, 5, 0.05, 1.0);
                    let s: f64 = raw.iter().sum();
                    vec![raw.iter().map(|x| x / s).collect()]
                },
                |_| true,
                |p| cross_entropy_probs(&p[0], 1).unwrap(),
            ),
        ),
        (
            "arcface",
            trials(
                11,
                |r| v(r, 5),
                |p| {
                    let cos = |a: &[f64], b: &[f64]| {
                        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (d2(a, &[0.0; D]).sqrt() * d2(b, &[0.0; D]).sqrt())
                    };
                    cos(&p[0], &p[1]).abs() < 1.0 - KINK
                },
                |p| arcface_loss(&p[0], &p[1..], 0, 2.0, 0.4).unwrap(),
            ),
        ),
    ];
    let stoch = trials(
        8,
        |r| v(r, 3),
        |p| {
            let z = alpha + d2(&p[0], &p[1]) - d2(&p[0], &p[2]);
            z.abs() > KINK && (2.0 * alpha - z).abs() > KINK
        },
        |p| stochastic_triplet_loss(&p[0], &p[1], &p[2], alpha, 0.8, 0.7).unwrap(),
    );
    results.push(("stochastic_triplet", stoch));

    let tiny = |key_dim: usize| NetworkConfig {
        input_len: 24,
        conv_filters: vec![(3, 3), (4, 3)],
        pool: vec![(2, 2), (1, 1)],
        fc_sizes: vec![6, 5],
        key_dim,
        dropout_rate: 0.0,
        l2_lambda: 0.0,
        output_relu: false,
    };
    let nets: Vec<(&str, NetworkConfig, Mode)> = vec![
        ("net_conv_pool_fc", tiny(0), Mode::Eval),
        ("net_keyed", tiny(3), Mode::Eval),
        ("net_output_relu", NetworkConfig { output_relu: true, ..tiny(3) }, Mode::Eval),
        ("net_overlapping_pool", NetworkConfig { pool: vec![(3, 2), (2, 1)], ..tiny(0) }, Mode::Eval),
        ("net_dense_only", NetworkConfig { conv_filters: vec![], pool: vec![], ..tiny(2) }, Mode::Eval),
        ("net_dropout", NetworkConfig { dropout_rate: 0.3, ..tiny(3) }, Mode::Train),
    ];
    for (i, (name, cfg, mode)) in nets.into_iter().enumerate() {
        results.push((name, net_path_error(&cfg, mode, 50 + i as u64)));
    }

    let bad: Vec<String> = results
        .iter()
        .filter(|(_, (e, n))| e.is_nan() || *e >= GRAD_TOL || *n < TRIALS)
        .map(|(name, (e, n))| format!("{name} err {e:.2e} over {n}"))
        .collect();
    let worst = results.iter().map(|(_, (e, _))| *e).fold(0.0, f64::max);
    let detail = format!("{} paths x {TRIALS} non-kink trials, worst relative error {worst:.2e} (limit {GRAD_TOL:e})", results.len());
    if bad.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; failing: {}", bad.join(", ")))
    }
}

// ---------------------------------------------------------------- 2

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn result_diff(a: &LossResult, b: &LossResult) -> f64 {
    (a.value - b.value).abs().max(max_abs_diff(&a.grads.concat(), &b.grads.concat()))
}

/// Softmax cross-entropy over `s cos(x, w_j)` with its gradient in `x`.
fn scaled_cosine_ce(x: &[f64], w: &[Vec<f64>], target: usize, s: f64) -> (f64, Vec<f64>) {
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let xn = norm(x);
    let cos: Vec<f64> = w.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / (norm(r) * xn)).collect();
    let z: Vec<f64> = cos.iter().map(|c| s * c).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut gx = vec![0.0; x.len()];
    for (j, r) in w.iter().enumerate() {
        let coef = s * ((z[j] - lse).exp() - (j == target) as u8 as f64);
        let rn = norm(r);
        for i in 0..x.len() {
            gx[i] += coef * (r[i] / (rn * xn) - cos[j] * x[i] / (xn * xn));
        }
    }
    (lse - z[target], gx)
}

fn c2_reductions() -> Outcome {
    const N: usize = 1000;
    let mut rng = seeded(2);
    let (mut w_tl2, mut w_sto, mut w_arc) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..N {
        let dim = rng.random_range(1..=8);
        let batch_len = rng.random_range(1..=6);
        let batch: Vec<SecureEmbeddings> = (0..batch_len)
            .map(|_| SecureEmbeddings {
                a: rand_vec(&mut rng, dim, -1.0, 1.0),
                p1: rand_vec(&mut rng, dim, -1.0, 1.0),
                p2: rand_vec(&mut rng, dim, -1.0, 1.0),
                n1: rand_vec(&mut rng, dim, -1.0, 1.0),
                n2: rand_vec(&mut rng, dim, -1.0, 1.0),
            })
            .collect();
        let alpha = rng.random_range(0.1..2.0);
        let link = if rng.random_bool(0.5) { Linkability::Stats } else { Linkability::Kld { bins: 20, bandwidth: 0.2 } };
        let got = secure_tl2(&batch, alpha, 1.0, link).unwrap();
        let inv = 1.0 / batch_len as f64;
        let mut want = LossResult { value: 0.0, grads: Vec::new() };
        for e in &batch {
            let r = secure_triplet_loss(&e.a, &e.p1, &e.p2, &e.n1, &e.n2, alpha).unwrap();
            want.value += inv * r.value;
            want.grads.extend(r.grads.into_iter().map(|g| g.into_iter().map(|v| inv * v).collect::<Vec<_>>()));
        }
        w_tl2 = w_tl2.max(result_diff(&got, &want));

        let (a, p, n) = (rand_vec(&mut rng, dim, -1.0, 1.0), rand_vec(&mut rng, dim, -1.0, 1.0), rand_vec(&mut rng, dim, -1.0, 1.0));
        let got = stochastic_triplet_loss(&a, &p, &n, alpha, 1.0, 1.0).unwrap();
        w_sto = w_sto.max(result_diff(&got, &triplet_loss(&a, &p, &n, alpha).unwrap()));

        let classes = rng.random_range(2..=6);
        let x = rand_vec(&mut rng, dim.max(2), -1.0, 1.0);
        let w: Vec<Vec<f64>> = (0..classes).map(|_| rand_vec(&mut rng, x.len(), -1.0, 1.0)).collect();
        let target = rng.random_range(0..classes);
        let s = rng.random_range(1.0..32.0);
        let got = arcface_loss(&x, &w, target, s, 0.0).unwrap();
        let (value, gx) = scaled_cosine_ce(&x, &w, target, s);
        w_arc = w_arc.max((got.value - value).abs()).max(max_abs_diff(&got.grads[0], &gx));
    }
    let pass = w_tl2 <= 1e-9 && w_sto <= 1e-9 && w_arc <= 1e-9;
    outcome(
        pass,
        format!("{N} inputs each; max deviation secure_tl2(gamma=1) {w_tl2:.1e}, stochastic(1,1) {w_sto:.1e}, arcface(m=0) {w_arc:.1e} (limit 1e-9)"),
    )
}

// ---------------------------------------------------------------- 3

/// FMR and FNMR at every candidate threshold by direct counting.
fn brute_curves(g: &[f64], i: &[f64], similarity: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut t: Vec<f64> = g.iter().chain(i).copied().collect();
    t.push(f64::NEG_INFINITY);
    t.push(f64::INFINITY);
    t.sort_by(f64::total_cmp);
    t.dedup();
    if similarity {
        t.reverse();
    }
    let accepted = |s: f64, th: f64| if similarity { s > th } else { s < th };
    let mut fmr = Vec::new();
    let mut fnmr = Vec::new();
    for &th in &t {
        let mut fa = 0usize;
        for &s in i {
            if accepted(s, th) {
                fa += 1;
            }
        }
        let mut fr = 0usize;
        for &s in g {
            if !accepted(s, th) {
                fr += 1;
            }
        }
        fmr.push(fa as f64 / i.len() as f64);
        fnmr.push(fr as f64 / g.len() as f64);
    }
    (t, fmr, fnmr)
}

/// EER at the first operating point where FNMR no longer exceeds FMR,
/// linearly interpolated from the previous point.
fn brute_eer(fmr: &[f64], fnmr: &[f64]) -> f64 {
    for k in 0..fmr.len() {
        let d = fnmr[k] - fmr[k];
        if d <= 0.0 {
            if d == 0.0 || k == 0 {
                return fmr[k];
            }
            let dp = fnmr[k - 1] - fmr[k - 1];
            let lambda = dp / (dp - d);
            return (1.0 - lambda) * fmr[k - 1] + lambda * fmr[k];
        }
    }
    unreachable!("FNMR reaches 0 at +inf")
}

fn brute_rank(row: &[f64], target: usize) -> usize {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    1 + order.iter().position(|&j| j == target).unwrap()
}

fn c3_metric_oracles() -> Outcome {
    let mut rng = seeded(3);
    let mut tables = 0;
    let mut mismatches = Vec::new();
    for case in 0..4000 {
        let total = rng.random_range(2..=200);
        let ng = rng.random_range(1..total);
        // a coarse grid forces ties; a fine one exercises distinct scores
        let levels: f64 = if case % 2 == 0 { 10.0 } else { 1e6 };
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| (rng.random_range(0.0..1.0) * levels).floor() / levels).collect() };
        let (g, i) = (draw(ng), draw(total - ng));
        let similarity = case % 3 == 0;
        let st = ScoreTable::new(
            g.clone(),
            i.clone(),
            if similarity { cardiokey::eval_metrics::Convention::Similarity } else { cardiokey::eval_metrics::Convention::Dissimilarity },
        );
        let c = curves(&st).unwrap();
        let (t, fmr, fnmr) = brute_curves(&g, &i, similarity);
        if c.thresholds != t || c.fmr != fmr || c.fnmr != fnmr {
            mismatches.push(format!("curves case {case}"));
        }
        if eer(&c) != brute_eer(&fmr, &fnmr) {
            mismatches.push(format!("eer case {case}"));
        }
        tables += 1;
    }
    for case in 0..2000 {
        let n_enrolled = rng.random_range(1..=12);
        let n_queries = rng.random_range(1..=(200 / n_enrolled).max(1));
        let levels: f64 = if case % 2 == 0 { 5.0 } else { 1e6 };
        let ids: Vec<usize> = (0..n_enrolled).map(|k| 3 * k + 1).collect();
        let mut true_ids: Vec<Option<usize>> = (0..n_queries).map(|_| Some(ids[rng.random_range(0..n_enrolled)])).collect();
        true_ids[0] = Some(ids[0]);
        let scores: Vec<Vec<f64>> = (0..n_queries)
            .map(|_| (0..n_enrolled).map(|_| (rng.random_range(0.0..1.0) * levels).floor() / levels).collect())
            .collect();
        let r = identification_metrics(&scores, &ids, &true_ids, 1, None).unwrap();
        let ranks: Vec<usize> =
            scores.iter().zip(&true_ids).map(|(row, t)| brute_rank(row, ids.iter().position(|e| Some(*e) == *t).unwrap())).collect();
        let cmc: Vec<f64> =
            (1..=n_enrolled).map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n_queries as f64).collect();
        if r.cmc != cmc || r.idr != cmc[0] {
            mismatches.push(format!("cmc case {case}"));
        }
        tables += 1;
    }
    let detail = format!("{tables} random tables (up to 200 entries, with ties), exact equality");
    if mismatches.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {} mismatches, first {}", mismatches.len(), mismatches[0]))
    }
}

// ---------------------------------------------------------------- 4

fn c4_unlinkability() -> Outcome {
    const N: usize = 2000;
    let mut rng = seeded(4);
    let dist = Normal::new(0.5, 0.1).unwrap();
    let mated: Vec<f64> = (0..N).map(|_| dist.sample(&mut rng)).collect();
    let nonmated: Vec<f64> = (0..N).map(|_| dist.sample(&mut rng)).collect();
    let same = unlinkability_analysis(&mated, &nonmated, None).unwrap().d_sys;
    let near = Normal::new(0.2, 0.03).unwrap();
    let far = Normal::new(0.8, 0.03).unwrap();
    let mated: Vec<f64> = (0..N).map(|_| near.sample(&mut rng)).collect();
    let nonmated: Vec<f64> = (0..N).map(|_| far.sample(&mut rng)).collect();
    let apart = unlinkability_analysis(&mated, &nonmated, None).unwrap().d_sys;
    outcome(same < 0.02 && apart > 0.95, format!("identical D_sys {same:.4} (< 0.02), separated D_sys {apart:.4} (> 0.95)"))
}

// ---------------------------------------------------------------- 5

fn c5_estimators() -> Outcome {
    const N: usize = 2000;
    let mut rng = seeded(5);
    let rho: f64 = 0.6;
    let (mut x, mut y) = (Vec::with_capacity(N), Vec::with_capacity(N));
    for _ in 0..N {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x.push(vec![a]);
        y.push(vec![rho * a + (1.0 - rho * rho).sqrt() * b]);
    }
    let mi_true = -0.5 * (1.0 - rho * rho).ln();
    let mi = ksg_mi(&x, &y, 3).unwrap();
    let u: Vec<Vec<f64>> = (0..N).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
    let g: Vec<Vec<f64>> = (0..N).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
    let h_u = kl_entropy(&u, 3).unwrap();
    let h_g = kl_entropy(&g, 3).unwrap();
    let h_g_true = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let pass = (mi - mi_true).abs() <= 0.1 && h_u.abs() <= 0.05 && (h_g - h_g_true).abs() <= 0.05;
    outcome(
        pass,
        format!("KSG MI {mi:.4} vs {mi_true:.4} (+-0.1); H[U(0,1)] {h_u:.4} vs 0 (+-0.05); H[N(0,1)] {h_g:.4} vs {h_g_true:.4} (+-0.05)"),
    )
}

// ---------------------------------------------------------------- 6 and 7

const E2E_EPOCHS: usize = 60;
const E2E_TRIPLETS: usize = 2000;
const E2E_TRAIN_IDS: usize = 10;

fn e2e_data(seed: u64) -> (DatasetConfig, cardiokey::triplet_gen::LabeledDataset, cardiokey::triplet_gen::LabeledDataset) {
    let dc = DatasetConfig { seed, ..Default::default() };
    let ds = beat_dataset(&synth_recordings(&dc).unwrap(), &dc).unwrap();
    let (train_ds, test_ds) = split_identities(&ds, E2E_TRAIN_IDS).unwrap();
    (dc, train_ds, test_ds)
}

fn e2e_train(train_ds: &cardiokey::triplet_gen::LabeledDataset, dc: &DatasetConfig, loss: LossConfig, seed: u64, p_err: f64) -> Network {
    let mut tc = TrainConfig::new(loss, dc.beat_len());
    tc.epochs = E2E_EPOCHS;
    tc.triplets_per_epoch = E2E_TRIPLETS;
    tc.error_probability = p_err;
    tc.seed = seed;
    train(train_ds, &tc).unwrap().net
}

fn c6_end_to_end() -> Outcome {
    let seeds = [0u64, 1, 2];
    let p = Protocol::default();
    let mut wins = [0usize; 3];
    let mut lines = Vec::new();
    for &seed in &seeds {
        let (dc, tr, te) = e2e_data(seed);
        let net = e2e_train(&tr, &dc, LossConfig::Triplet { alpha: 1.0 }, seed, 0.0);
        let e = eer(&curves(&verification_scores(&net, &te, &p).unwrap()).unwrap());

        let keyed = |loss| {
            let net = e2e_train(&tr, &dc, loss, seed, 0.0);
            let kt = keyed_scores(&net, &te, &p, &mut seeded(seed)).unwrap();
            let c = cancelability_analysis(&kt).unwrap();
            let u = unlinkability_analysis(&kt.mated_diff_key, &kt.nonmated_diff_key, None).unwrap();
            (c, u.d_sys)
        };
        let (sec, d_sec) = keyed(LossConfig::Secure { alpha: 1.0 });
        let (_, d_tl2) = keyed(LossConfig::SecureTl2 { alpha: 1.0, gamma: 0.9, linkability: Linkability::Stats });

        let checks = [e <= 0.10, sec.fmr_c_at_eer <= sec.eer, d_tl2 <= 0.5 * d_sec];
        for (w, ok) in wins.iter_mut().zip(checks) {
            *w += ok as usize;
        }
        lines.push(format!(
            "seed {seed}: (a) EER {e:.3}, (b) FMR_C@EER {:.3} vs FMR_V {:.3}, (c) D_sys {d_tl2:.3} vs {d_sec:.3}",
            sec.fmr_c_at_eer, sec.eer
        ));
    }
    let majority = seeds.len() / 2 + 1;
    let pass = wins.iter().all(|&w| w >= majority);
    outcome(pass, format!("passing seeds a/b/c = {}/{}/{} of 3; {}", wins[0], wins[1], wins[2], lines.join("; ")))
}

fn c7_stress() -> Outcome {
    let p = Protocol::default();
    let mut pass = true;
    let mut lines = Vec::new();
    for seed in [0u64, 1] {
        let (dc, tr, te) = e2e_data(seed);
        let eers: Vec<f64> = [0.0, 0.3, 0.7]
            .iter()
            .map(|&pe| {
                let net = e2e_train(&tr, &dc, LossConfig::Stochastic { alpha: 1.0, beta: 0.99, gamma: 0.99 }, seed, pe);
                eer(&curves(&verification_scores(&net, &te, &p).unwrap()).unwrap())
            })
            .collect();
        let ok = eers[0] <= eers[1] + 0.01 && eers[1] <= eers[2] + 0.01;
        pass &= ok;
        lines.push(format!("seed {seed}: EER {:.3} / {:.3} / {:.3}", eers[0], eers[1], eers[2]));
    }
    outcome(pass, format!("error probability 0 / 0.3 / 0.7 with 1% slack; {}", lines.join("; ")))
}

// ---------------------------------------------------------------- 8

fn random_stream(rng: &mut ChaCha8Rng, classes: usize, n: usize) -> Vec<ProbRow> {
    let row = |rng: &mut ChaCha8Rng| {
        let raw = rand_vec(rng, classes, 0.01, 1.0);
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    (0..n).map(|_| ProbRow { label: rng.random_range(0..classes), primary: row(rng), secondary: row(rng) }).collect()
}

fn c8_cascade() -> Outcome {
    let mut grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    grid.push(1.01);
    let mut rng = seeded(8);
    let mut problems = Vec::new();
    let mut best_margin = f64::INFINITY;
    let fit_eval = |rows: Vec<ProbRow>| {
        let (fit, eval) = rows.split_at(rows.len() / 2);
        let fusion = fusion_train(fit, &FusionConfig::default()).unwrap();
        let sweep = sweep_threshold(eval, &fusion, &grid).unwrap();
        let (primary, _, fused) = unimodal_and_fusion_accuracy(eval, &fusion).unwrap();
        (sweep, primary, fused)
    };
    for case in 0..25 {
        let complementary = case < 5;
        let rows = if complementary {
            synth_complementary_stream(3 + case, 600, case as u64).unwrap()
        } else {
            let classes = rng.random_range(2..=5);
            random_stream(&mut rng, classes, 200)
        };
        let (sweep, primary, fused) = fit_eval(rows);
        if sweep[0].accuracy != primary || sweep[0].deferral != 0.0 {
            problems.push(format!("case {case}: T=0 differs from primary-only"));
        }
        let last = sweep.last().unwrap();
        if last.accuracy != fused || last.deferral != 1.0 {
            problems.push(format!("case {case}: T>1 differs from fusion"));
        }
        if sweep.windows(2).any(|w| w[1].deferral < w[0].deferral) {
            problems.push(format!("case {case}: deferral not monotone"));
        }
        if complementary {
            let best = sweep.iter().map(|s| s.accuracy).fold(0.0, f64::max);
            best_margin = best_margin.min(best - primary);
            if best < primary {
                problems.push(format!("case {case}: best cascade {best} below primary {primary}"));
            }
        }
    }
    let detail = format!("25 streams (5 complementary); smallest best-T gain over primary {best_margin:.3}");
    if problems.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {}", problems.join(", ")))
    }
}

// ---------------------------------------------------------------- 9

fn c9_fiducial() -> Outcome {
    let tol_ms = 25.0;
    let recall = |sigma: f64| {
        let (mut hits, mut total) = (0usize, 0usize);
        for seed in 0..20u64 {
            let id = SyntheticIdentity::random(900 + seed);
            let opts = SynthOptions { duration_s: 30.0, noise_sigma: sigma, ..Default::default() };
            let (s, truth) = synth_ecg(&id, &opts, &mut seeded(seed)).unwrap();
            let found = detect_r_peaks(&s).unwrap();
            let tol = (tol_ms / 1000.0 * s.rate()).round() as i64;
            total += truth.len();
            hits += truth.iter().filter(|&&t| found.iter().any(|&f| (f as i64 - t as i64).abs() <= tol)).count();
        }
        hits as f64 / total as f64
    };
    let (clean, noisy) = (recall(0.0), recall(0.1));

    // DMEAN: real beat morphology, one constructed violator among identical clean beats
    let mut rng = seeded(9);
    let (mut flagged, mut violators, mut false_rejections, mut clean_beats) = (0usize, 0usize, 0usize, 0usize);
    for trial in 0..400u64 {
        let id = SyntheticIdentity::random(trial);
        let (s, peaks) = synth_ecg(&id, &SynthOptions::default(), &mut seeded(trial)).unwrap();
        let h = segment_heartbeats(&s, &peaks, 250.0, 450.0);
        let template = h.beats[h.len() / 2].clone();
        let n = rng.random_range(5..=30);
        let mut beats = vec![template.clone(); n];
        let r_max = template.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = (rng.random_range(0.08..0.15) * s.rate()) as usize;
        let bad: Vec<f64> = match trial % 5 {
            0 => template.iter().map(|v| v * rng.random_range(3.0..6.0)).collect(),
            1 => template.iter().map(|v| -v).collect(),
            2 => {
                let mut b = template.clone();
                b.rotate_right(shift);
                b
            }
            3 => template.iter().map(|v| v + rng.random_range(2.0..4.0) * r_max).collect(),
            _ => {
                let mut b = template.clone();
                let at = template.len() - 1 - rng.random_range(0..template.len() / 4);
                b[at] += rng.random_range(2.0..4.0) * r_max;
                b
            }
        };
        let k = rng.random_range(0..n);
        beats[k] = bad;
        let set = HeartbeatSet { keep_mask: vec![true; n], beats, ..h.clone() };
        let set = HeartbeatSet { r_indices: (0..n).map(|i| 1000 + 200 * i).collect(), ..set };
        let keep = dmean_outliers(&set, 1.2, 1.5);
        violators += 1;
        flagged += !keep[k] as usize;
        clean_beats += n - 1;
        false_rejections += keep.iter().enumerate().filter(|&(i, &kp)| i != k && !kp).count();

        let all_clean = HeartbeatSet { keep_mask: vec![true; n], beats: vec![template; n], r_indices: (0..n).collect(), ..h };
        clean_beats += n;
        false_rejections += dmean_outliers(&all_clean, 1.2, 1.5).iter().filter(|k| !**k).count();
    }
    let pass = clean >= 0.99 && noisy >= 0.95 && flagged == violators && false_rejections == 0;
    outcome(
        pass,
        format!(
            "R-peak recall within {tol_ms} ms: clean {clean:.4} (>= 0.99), sigma 0.1 {noisy:.4} (>= 0.95); DMEAN flagged {flagged}/{violators} violators, {false_rejections} false rejections over {clean_beats} clean beats"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn c10_augmentation() -> Outcome {
    const N: usize = 1000;
    let mut rng = seeded(10);
    let kinds = AugmentKind::all_defaults();
    let mut problems = Vec::new();
    for trial in 0..N {
        let len = rng.random_range(16..=400);
        let rate = [100.0, 250.0, 500.0][trial % 3];
        let s = Signal::new(rand_vec(&mut rng, len, -2.0, 2.0), rate).unwrap();
        let seed = rng.random::<u64>();

        let flip = AugmentSpec { kind: AugmentKind::Flip, seed };
        let twice = apply(&apply(&s, &flip).unwrap(), &flip).unwrap();
        if twice.samples() != s.samples() {
            problems.push(format!("trial {trial}: flip is not an involution"));
        }

        let perm = AugmentSpec { kind: AugmentKind::RandomPermutations { segments: None }, seed };
        let (out, trace) = apply_traced(&s, &perm).unwrap();
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        if sorted(out.samples()) != sorted(s.samples()) || !matches!(trace, AugmentTrace::RandomPermutations { .. }) {
            problems.push(format!("trial {trial}: permutation changed the multiset"));
        }

        for kind in &kinds {
            let spec = AugmentSpec { kind: kind.clone(), seed };
            let a = apply(&s, &spec).unwrap();
            let b = apply(&s, &spec).unwrap();
            if a.samples().len() != len {
                problems.push(format!("trial {trial}: {} changed the length", kind.name()));
            }
            let same_bits = a.samples().iter().zip(b.samples()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same_bits || a.rate() != b.rate() {
                problems.push(format!("trial {trial}: {} is not seed-deterministic", kind.name()));
            }
        }
    }
    let detail = format!("{N} trials x {} kinds: flip involution, permutation multiset, length, bit-exact reruns", kinds.len());
    if problems.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {} problems, first {}", problems.len(), problems[0]))
    }
}

// ---------------------------------------------------------------- 11

fn retains_fixed(rng: &mut ChaCha8Rng) -> bool {
    let capacity = rng.random_range(1..=12);
    let enrolled = rng.random_range(1..=capacity);
    let mut next = 0.0;
    let mut fresh = || {
        next += 1.0;
        vec![next, -next]
    };
    let mut g = Gallery::new((0..enrolled).map(|_| fresh()).collect(), capacity).unwrap();
    let schedule = if rng.random_bool(0.5) {
        FixationSchedule::Adaptive { n: rng.random_range(0..=3) }
    } else {
        FixationSchedule::Fraction { fraction: rng.random_range(0.0..=1.0) }
    };
    let band = Band::new(0.0, 1.0).unwrap();
    let mut fixed_seen: Vec<Vec<f64>> = Vec::new();
    for j in 0..rng.random_range(1..=8) {
        for _ in 0..rng.random_range(0..=10) {
            let score = rng.random_range(-0.5..1.5);
            fixation_update(&mut g, fresh(), score, band, schedule, j).unwrap();
            for (t, f) in g.templates().iter().zip(g.fixed_flags()) {
                if *f && !fixed_seen.contains(t) {
                    fixed_seen.push(t.clone());
                }
            }
            let still = fixed_seen.iter().all(|t| g.templates().iter().zip(g.fixed_flags()).any(|(u, f)| *f && u == t));
            if !still || g.len() > capacity {
                return false;
            }
        }
    }
    true
}

fn c11_template_update() -> Outcome {
    let mut finals = Vec::new();
    let mut wins = 0;
    let seeds = [0u64, 1, 2];
    for &seed in &seeds {
        let cfg = DriftConfig { seed, ..Default::default() };
        let (galleries, stream) = synth_drift_timeline(&cfg).unwrap();
        let run = |policy| {
            let mut g = galleries.clone();
            run_timeline(&mut g, &stream, Metric::NormalizedEuclidean, policy).unwrap().last().unwrap().accuracy
        };
        let band = Band::new(0.0, 0.2).unwrap();
        let fixed = run(UpdatePolicy::Fixation { band, schedule: FixationSchedule::Adaptive { n: 1 } });
        let stat = run(UpdatePolicy::Static);
        wins += (fixed >= stat) as usize;
        finals.push(format!("seed {seed}: fixation {fixed:.3} vs static {stat:.3}"));
    }
    let cases = 2000;
    let retained = (0..cases).filter(|&c| retains_fixed(&mut seeded(1100 + c))).count();
    let pass = wins == seeds.len() && retained == cases as usize;
    outcome(
        pass,
        format!("final-time-point accuracy {}; fixed templates retained in {retained}/{cases} random update sequences", finals.join(", ")),
    )
}
