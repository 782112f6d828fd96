//! Per-sample relevance of a 1D input: occlusion and gradient saliency.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embed_net::{ClassifierHead, Mode, Network};
use crate::error::{config, input, state, Result};
use crate::fiducial::segment_heartbeats;
use crate::rng::seeded;
use crate::signal::Signal;

/// A model with an input gradient.
pub trait Differentiable {
    fn output(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Gradient of `upstream . output(x)` with respect to `x`.
    fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>>;
}

/// An embedding network in eval mode, with an optional bound key.
pub struct NetModel<'a> {
    net: &'a Network,
    key: Option<&'a [f64]>,
}

impl<'a> NetModel<'a> {
    pub fn new(net: &'a Network, key: Option<&'a [f64]>) -> Result<Self> {
        if net.mode() != Mode::Eval {
            return state("relevance needs the network in eval mode");
        }
        Ok(Self { net, key })
    }
}

impl Differentiable for NetModel<'_> {
    fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.embed(x, self.key)
    }

    fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        // eval mode draws nothing from the generator
        let tr = self.net.forward_trace(x, self.key, &mut seeded(0))?;
        let mut scratch = vec![0.0; self.net.n_params()];
        let g = self.net.backward_trace(&tr, upstream, &mut scratch)?;
        Ok(g[..x.len()].to_vec())
    }
}

/// Scalar explained quantity, a function of the model output.
#[derive(Debug, Clone)]
pub enum Target<'a> {
    /// One output dimension.
    Output(usize),
    /// Minus the Euclidean distance to a reference template.
    NegDistance(Vec<f64>),
    /// Softmax probability of `class` under a classification head.
    ClassProbability { head: &'a ClassifierHead, class: usize },
}

impl Target<'_> {
    pub fn describe(&self) -> String {
        match self {
            Target::Output(k) => format!("output[{k}]"),
            Target::NegDistance(_) => "neg_distance".into(),
            Target::ClassProbability { class, .. } => format!("class_probability[{class}]"),
        }
    }

    /// Value and gradient with respect to the model output.
    pub fn eval(&self, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Target::Output(k) => {
                if *k >= y.len() {
                    return config(format!("output {k} out of range for {} dimensions", y.len()));
                }
                let mut g = vec![0.0; y.len()];
                g[*k] = 1.0;
                Ok((y[*k], g))
            }
            Target::NegDistance(r) => {
                if r.len() != y.len() {
                    return input("reference template length differs from the output");
                }
                let diff: Vec<f64> = y.iter().zip(r).map(|(a, b)| a - b).collect();
                let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                let g = if d > 0.0 { diff.iter().map(|v| -v / d).collect() } else { vec![0.0; y.len()] };
                Ok((-d, g))
            }
            Target::ClassProbability { head, class } => {
                if *class >= head.n_classes {
                    return config(format!("class {class} out of range"));
                }
                let z = head.logits(y)?;
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                let p: Vec<f64> = e.iter().map(|v| v / s).collect();
                let pc = p[*class];
                let g_logits: Vec<f64> =
                    p.iter().enumerate().map(|(j, pj)| pc * (((j == *class) as u8 as f64) - pj)).collect();
                let mut scratch = vec![0.0; head.params.len()];
                Ok((pc, head.backward(y, &g_logits, &mut scratch)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Occlusion,
    Saliency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub values: Vec<f64>,
    pub method: Method,
    pub target: String,
}

impl RelevanceMap {
    /// Scale into [0, 1] by the maximum; an all-zero map stays zero.
    pub fn normalized(&self) -> RelevanceMap {
        let m = self.values.iter().copied().fold(0.0, f64::max);
        let values = if m > 0.0 { self.values.iter().map(|v| v / m).collect() } else { self.values.clone() };
        RelevanceMap { values, ..self.clone() }
    }

    /// CSV with header `sample_index,amplitude,relevance`.
    pub fn write_csv<W: Write>(&self, amplitude: &[f64], w: W) -> Result<()> {
        if amplitude.len() != self.values.len() {
            return input("amplitude and relevance lengths differ");
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample_index", "amplitude", "relevance"])?;
        for (i, (a, r)) in amplitude.iter().zip(&self.values).enumerate() {
            out.write_record([i.to_string(), a.to_string(), r.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Default occlusion window in samples.
pub const DEFAULT_OCCLUSION_WINDOW: usize = 25;

/// Window starts at `0, stride, 2 stride, ...`, plus one flush with the end
/// when the stride grid does not reach it.
fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=n - window).step_by(stride).collect();
    if *starts.last().unwrap() != n - window {
        starts.push(n - window);
    }
    starts
}

/// Relevance of each sample: mean absolute change of the target over every
/// occluding window that covers it. Occluded samples are set to `baseline`.
pub fn occlusion_relevance<M: Differentiable + ?Sized>(
    model: &M,
    x: &[f64],
    target: &Target,
    window: usize,
    stride: usize,
    baseline: f64,
) -> Result<RelevanceMap> {
    if window == 0 || stride == 0 {
        return config("occlusion window and stride must be positive");
    }
    if window > x.len() {
        return config(format!("occlusion window {window} exceeds input length {}", x.len()));
    }
    let reference = target.eval(&model.output(x)?)?.0;
    let mut sum = vec![0.0; x.len()];
    let mut count = vec![0usize; x.len()];
    let mut occluded = x.to_vec();
    for s in window_starts(x.len(), window, stride) {
        occluded[s..s + window].fill(baseline);
        let delta = (target.eval(&model.output(&occluded)?)?.0 - reference).abs();
        occluded[s..s + window].copy_from_slice(&x[s..s + window]);
        for i in s..s + window {
            sum[i] += delta;
            count[i] += 1;
        }
    }
    let values = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    Ok(RelevanceMap { values, method: Method::Occlusion, target: target.describe() })
}

/// `|d target / d x|` per sample.
pub fn saliency<M: Differentiable + ?Sized>(model: &M, x: &[f64], target: &Target) -> Result<RelevanceMap> {
    let (_, g) = target.eval(&model.output(x)?)?;
    let gx = model.input_gradient(x, &g)?;
    Ok(RelevanceMap { values: gx.iter().map(|v| v.abs()).collect(), method: Method::Saliency, target: target.describe() })
}

/// Mean of the absolute per-dimension saliency maps over every output dimension.
pub fn saliency_all_outputs<M: Differentiable + ?Sized>(model: &M, x: &[f64]) -> Result<RelevanceMap> {
    let dims = model.output(x)?.len();
    let mut acc = vec![0.0; x.len()];
    for k in 0..dims {
        let m = saliency(model, x, &Target::Output(k))?;
        acc.iter_mut().zip(&m.values).for_each(|(a, v)| *a += v / dims as f64);
    }
    Ok(RelevanceMap { values: acc, method: Method::Saliency, target: "mean_abs_outputs".into() })
}

/// Average the relevance windows around each R peak, with the same edge
/// rules as heartbeat segmentation.
pub fn beat_average_relevance(map: &RelevanceMap, rate: f64, r_indices: &[usize], pre_ms: f64, post_ms: f64) -> Result<Vec<f64>> {
    let s = Signal::new(map.values.clone(), rate)?;
    let beats = segment_heartbeats(&s, r_indices, pre_ms, post_ms).beats;
    if beats.is_empty() {
        return input("no complete beats in the relevance map");
    }
    let n = beats.len() as f64;
    let mut mean = vec![0.0; beats[0].len()];
    for b in &beats {
        mean.iter_mut().zip(b).for_each(|(m, v)| *m += v / n);
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_net::{grad_check, NetworkConfig};
    use rand::Rng;

    /// `y = W x`.
    struct Linear(Vec<Vec<f64>>);

    impl Differentiable for Linear {
        fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.iter().map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum()).collect())
        }

        fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
            let mut g = vec![0.0; x.len()];
            for (w, u) in self.0.iter().zip(upstream) {
                g.iter_mut().zip(w).for_each(|(gi, wi)| *gi += u * wi);
            }
            Ok(g)
        }
    }

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.37).sin() + 0.1).collect()
    }

    #[test]
    fn occlusion_examples() {
        let x = ramp(20);
        let constant = Linear(vec![vec![0.0; 20]]);
        let r = occlusion_relevance(&constant, &x, &Target::Output(0), 4, 2, 0.0).unwrap();
        assert!(r.values.iter().all(|v| *v == 0.0));

        let mut w = vec![0.0; 20];
        w[7] = 2.0;
        let single = Linear(vec![w]);
        let r = occlusion_relevance(&single, &x, &Target::Output(0), 1, 1, 0.0).unwrap();
        for (i, v) in r.values.iter().enumerate() {
            if i == 7 {
                assert!((v - 2.0 * x[7].abs()).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }

        let dense = Linear(vec![ramp(20)]);
        let same = Linear(vec![vec![1.0; 20]]);
        let c = vec![0.5; 20];
        let r = occlusion_relevance(&same, &c, &Target::Output(0), 5, 5, 0.5).unwrap();
        assert!(r.values.iter().all(|v| *v == 0.0));
        assert!(occlusion_relevance(&dense, &x, &Target::Output(0), 21, 1, 0.0).is_err());
    }

    #[test]
    fn occlusion_partition_matches_per_window_deltas() {
        let x = ramp(30);
        let model = Linear(vec![ramp(30).iter().map(|v| v * v - 0.3).collect()]);
        let t = Target::Output(0);
        let r = occlusion_relevance(&model, &x, &t, 6, 6, 0.0).unwrap();
        let base = model.output(&x).unwrap()[0];
        for s in (0..30).step_by(6) {
            let mut o = x.clone();
            o[s..s + 6].fill(0.0);
            let d = (model.output(&o).unwrap()[0] - base).abs();
            assert!(r.values[s..s + 6].iter().all(|v| *v == d));
        }
    }

    #[test]
    fn saliency_of_linear_model_is_abs_weights() {
        let w = vec![0.5, -2.0, 0.0, 3.0];
        let m = Linear(vec![w.clone()]);
        let r = saliency(&m, &[1.0, 2.0, 3.0, 4.0], &Target::Output(0)).unwrap();
        assert_eq!(r.values, vec![0.5, 2.0, 0.0, 3.0]);
        let zero = Linear(vec![vec![0.0; 4]]);
        assert!(saliency(&zero, &[1.0; 4], &Target::Output(0)).unwrap().values.iter().all(|v| *v == 0.0));
    }

    fn tiny_net(seed: u64) -> Network {
        let cfg = NetworkConfig {
            input_len: 24,
            conv_filters: vec![(3, 3)],
            pool: vec![(2, 2)],
            fc_sizes: vec![6],
            key_dim: 0,
            dropout_rate: 0.0,
            l2_lambda: 0.0,
            output_relu: false,
        };
        let mut net = Network::new(cfg, seed).unwrap();
        net.set_mode(Mode::Eval);
        net
    }

    #[test]
    fn network_saliency_matches_finite_differences() {
        let mut rng = seeded(3);
        let mut checked = 0;
        for seed in 0..40 {
            let net = tiny_net(seed);
            let model = NetModel::new(&net, None).unwrap();
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tr = net.forward_trace(&x, None, &mut seeded(0)).unwrap();
            if net.kink_margin(&tr) < 1e-3 {
                continue;
            }
            let reference: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = Target::NegDistance(reference);
            let err = grad_check(
                &x,
                |xs| {
                    let y = model.output(xs).unwrap();
                    let (v, g) = target.eval(&y).unwrap();
                    (v, model.input_gradient(xs, &g).unwrap())
                },
                1e-6,
            );
            assert!(err < 1e-4, "seed {seed}: {err}");
            let sal = saliency(&model, &x, &target).unwrap();
            assert_eq!(sal.values.len(), 24);
            checked += 1;
        }
        assert!(checked >= 10);
    }

    #[test]
    fn class_probability_target_gradient() {
        let head = ClassifierHead::new(4, 3, 1).unwrap();
        let target = Target::ClassProbability { head: &head, class: 2 };
        let y = [0.3, -0.2, 0.8, 0.1];
        let err = grad_check(&y, |v| target.eval(v).unwrap(), 1e-6);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn train_mode_network_is_rejected() {
        let mut net = tiny_net(0);
        net.set_mode(Mode::Train);
        assert!(NetModel::new(&net, None).is_err());
    }

    #[test]
    fn beat_average_examples() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut values = Vec::new();
        for _ in 0..3 {
            values.extend(&v);
        }
        let map = RelevanceMap { values, method: Method::Occlusion, target: "t".into() };
        // 10 samples at 1000 Hz around peaks at 4, 14, 24: window [-4 ms, +6 ms)
        let avg = beat_average_relevance(&map, 1000.0, &[4, 14, 24], 4.0, 6.0).unwrap();
        assert_eq!(avg, v);

        let mut values = v.clone();
        values.extend(vec![0.0; 10]);
        let map = RelevanceMap { values, ..map };
        let avg = beat_average_relevance(&map, 1000.0, &[4, 14, 28], 4.0, 6.0).unwrap();
        assert_eq!(avg, v.iter().map(|x| x / 2.0).collect::<Vec<_>>());
        assert!(beat_average_relevance(&map, 1000.0, &[1], 4.0, 6.0).is_err());
    }

    #[test]
    fn normalization_and_csv() {
        let m = RelevanceMap { values: vec![0.0, 2.0, 4.0], method: Method::Saliency, target: "t".into() };
        assert_eq!(m.normalized().values, vec![0.0, 0.5, 1.0]);
        let mut buf = Vec::new();
        m.write_csv(&[1.0, 2.0, 3.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample_index,amplitude,relevance\n0,1,0\n"));
    }
}
