//! Python bindings: signal preprocessing, synthetic ECG, losses, evaluation
//! metrics and trained-model embedding.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cardiokey::eval_metrics::{curves, eer as eer_of, ScoreTable};
use cardiokey::losses::{secure_triplet_loss as stl, stochastic_triplet_loss as stoch, triplet_loss as tl, LossResult};
use cardiokey::pipeline::ModelBundle;
use cardiokey::security_eval::{cancelability_analysis, unlinkability_analysis, KeyedScoreTable};
use cardiokey::signal::Signal;
use cardiokey::synth::{SynthOptions, SyntheticIdentity};

fn err(e: cardiokey::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type LossOut = (f64, Vec<Vec<f64>>);

fn loss_out(r: cardiokey::Result<LossResult>) -> PyResult<LossOut> {
    r.map(|l| (l.value, l.grads)).map_err(err)
}

/// Synthetic ECG of one identity: `(samples, r_peak_indices)`.
#[pyfunction]
#[pyo3(signature = (identity_seed, noise_seed, duration_s = 10.0, rate = 200.0, noise_sigma = 0.0, baseline_wander = 0.0))]
fn synth_ecg(
    identity_seed: u64,
    noise_seed: u64,
    duration_s: f64,
    rate: f64,
    noise_sigma: f64,
    baseline_wander: f64,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let id = SyntheticIdentity::random(identity_seed);
    let opts = SynthOptions { duration_s, rate, noise_sigma, baseline_wander };
    let (s, peaks) = cardiokey::synth::synth_ecg(&id, &opts, &mut cardiokey::rng::seeded(noise_seed)).map_err(err)?;
    Ok((s.into_samples(), peaks))
}

/// Zero-phase Butterworth bandpass.
#[pyfunction]
#[pyo3(signature = (samples, rate, low_hz, high_hz, order = 2))]
fn bandpass(samples: Vec<f64>, rate: f64, low_hz: f64, high_hz: f64, order: usize) -> PyResult<Vec<f64>> {
    let s = Signal::new(samples, rate).map_err(err)?;
    Ok(cardiokey::signal::bandpass_filter(&s, low_hz, high_hz, order).map_err(err)?.into_samples())
}

#[pyfunction]
fn detect_r_peaks(samples: Vec<f64>, rate: f64) -> PyResult<Vec<usize>> {
    cardiokey::fiducial::detect_r_peaks(&Signal::new(samples, rate).map_err(err)?).map_err(err)
}

/// Fixed-length beats around each R peak; windows crossing an edge are dropped.
#[pyfunction]
#[pyo3(signature = (samples, rate, r_peaks, pre_ms = 250.0, post_ms = 450.0))]
fn segment_heartbeats(samples: Vec<f64>, rate: f64, r_peaks: Vec<usize>, pre_ms: f64, post_ms: f64) -> PyResult<Vec<Vec<f64>>> {
    let s = Signal::new(samples, rate).map_err(err)?;
    Ok(cardiokey::fiducial::segment_heartbeats(&s, &r_peaks, pre_ms, post_ms).beats)
}

/// `(value, [grad_a, grad_p, grad_n])`.
#[pyfunction]
fn triplet_loss(ya: Vec<f64>, yp: Vec<f64>, yn: Vec<f64>, alpha: f64) -> PyResult<LossOut> {
    loss_out(tl(&ya, &yp, &yn, alpha))
}

/// `(value, grads)` for the anchor, positive under both keys and negative under both keys.
#[pyfunction]
fn secure_triplet_loss(ya: Vec<f64>, yp1: Vec<f64>, yp2: Vec<f64>, yn1: Vec<f64>, yn2: Vec<f64>, alpha: f64) -> PyResult<LossOut> {
    loss_out(stl(&ya, &yp1, &yp2, &yn1, &yn2, alpha))
}

#[pyfunction]
fn stochastic_triplet_loss(ya: Vec<f64>, yp: Vec<f64>, yn: Vec<f64>, alpha: f64, beta: f64, gamma: f64) -> PyResult<LossOut> {
    loss_out(stoch(&ya, &yp, &yn, alpha, beta, gamma))
}

/// Equal error rate of dissimilarity scores.
#[pyfunction]
fn eer(genuine: Vec<f64>, impostor: Vec<f64>) -> PyResult<f64> {
    Ok(eer_of(&curves(&ScoreTable::dissimilarity(genuine, impostor)).map_err(err)?))
}

/// Global unlinkability `D_sys` of mated and non-mated scores.
#[pyfunction]
#[pyo3(signature = (mated, nonmated, bandwidth = None))]
fn d_sys(mated: Vec<f64>, nonmated: Vec<f64>, bandwidth: Option<f64>) -> PyResult<f64> {
    Ok(unlinkability_analysis(&mated, &nonmated, bandwidth).map_err(err)?.d_sys)
}

/// `(eer, fmr_c_at_eer)` from the four keyed score lists.
#[pyfunction]
fn cancelability(
    mated_same_key: Vec<f64>,
    nonmated_same_key: Vec<f64>,
    mated_diff_key: Vec<f64>,
    nonmated_diff_key: Vec<f64>,
) -> PyResult<(f64, f64)> {
    let t = KeyedScoreTable { mated_same_key, mated_diff_key, nonmated_same_key, nonmated_diff_key };
    let r = cancelability_analysis(&t).map_err(err)?;
    Ok((r.eer, r.fmr_c_at_eer))
}

/// A trained model file written by `cardiokey train`.
#[pyclass(module = "cardiokey_py")]
struct Model {
    bundle: ModelBundle,
    net: cardiokey::embed_net::Network,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bundle = ModelBundle::load(&path).map_err(err)?;
        let net = bundle.network().map_err(err)?;
        Ok(Self { bundle, net })
    }

    #[getter]
    fn loss(&self) -> &'static str {
        self.bundle.loss.name()
    }

    #[getter]
    fn input_len(&self) -> usize {
        self.net.config().input_len
    }

    #[getter]
    fn key_dim(&self) -> usize {
        self.net.config().key_dim
    }

    /// Embedding of one preprocessed beat, optionally bound to a real-valued key.
    #[pyo3(signature = (beat, key = None))]
    fn embed(&self, beat: Vec<f64>, key: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.net.embed(&beat, key.as_deref()).map_err(err)
    }
}

#[pymodule]
fn cardiokey_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth_ecg, m)?)?;
    m.add_function(wrap_pyfunction!(bandpass, m)?)?;
    m.add_function(wrap_pyfunction!(detect_r_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(segment_heartbeats, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(secure_triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(stochastic_triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(eer, m)?)?;
    m.add_function(wrap_pyfunction!(d_sys, m)?)?;
    m.add_function(wrap_pyfunction!(cancelability, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
