//! End-to-end desk-scale runs on synthetic ECG: dataset generation, beat
//! extraction, network training with the triplet-family losses, and score
//! generation for verification, identification and template-security analysis.

use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentKind, AugmentSpec};
use crate::embed_net::{Adam, Checkpoint, ClassifierHead, Mode, Network, NetworkConfig, Trace};
use crate::error::{config, input, Result};
use crate::eval_metrics::{ScoreMatrix, ScoreTable};
use crate::fiducial::{beat_length, detect_r_peaks, segment_heartbeats};
use crate::losses::{
    arcface_loss, secure_tl2, secure_triplet_loss, stochastic_triplet_loss, triplet_loss, Linkability, SecureEmbeddings,
};
use crate::io::{load_signal_csv, save_signal_csv, write_atomic};
use crate::matching::normalized_euclidean;
use crate::rng::seeded;
use crate::security_eval::KeyedScoreTable;
use crate::signal::{bandpass_filter, normalize_values, NormMethod, Signal};
use crate::synth::{synth_ecg, SynthOptions, SyntheticIdentity};
use crate::triplet_gen::{gen_secure_batch, gen_supervised, inject_errors, LabeledDataset, Sample, SecureKey, KEY_BITS};
use crate::update_cascade::{Gallery, ProbRow, TimePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub identities: usize,
    pub recordings: usize,
    pub duration_s: f64,
    pub rate: f64,
    pub noise_sigma: f64,
    pub baseline_wander: f64,
    /// Blend fraction toward a random identity drawn per recording (session variability).
    pub session_variation: f64,
    pub pre_ms: f64,
    pub post_ms: f64,
    /// Bandpass corner frequencies applied before segmentation.
    pub band_hz: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            identities: 20,
            recordings: 3,
            duration_s: 30.0,
            rate: 100.0,
            noise_sigma: 0.05,
            baseline_wander: 0.1,
            session_variation: 0.15,
            pre_ms: 250.0,
            post_ms: 450.0,
            band_hz: Some((1.0, 40.0)),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn beat_len(&self) -> usize {
        self.preprocessing().beat_len(self.rate)
    }

    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing { pre_ms: self.pre_ms, post_ms: self.post_ms, band_hz: self.band_hz }
    }
}

/// How recordings become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub pre_ms: f64,
    pub post_ms: f64,
    pub band_hz: Option<(f64, f64)>,
}

impl Preprocessing {
    pub fn beat_len(&self, rate: f64) -> usize {
        beat_length(self.pre_ms, self.post_ms, rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub identity: usize,
    /// Unique over the whole dataset: `identity * recordings + session`.
    pub recording: usize,
    pub signal: Signal,
    pub r_peaks: Vec<usize>,
}

/// Seeded recordings for every identity and session.
pub fn synth_recordings(cfg: &DatasetConfig) -> Result<Vec<Recording>> {
    if cfg.identities < 2 || cfg.recordings < 1 {
        return config("need at least 2 identities and 1 recording each");
    }
    if !(0.0..=1.0).contains(&cfg.session_variation) {
        return config("session variation must lie in [0, 1]");
    }
    let mut master = seeded(cfg.seed);
    let opts = SynthOptions {
        duration_s: cfg.duration_s,
        rate: cfg.rate,
        noise_sigma: cfg.noise_sigma,
        baseline_wander: cfg.baseline_wander,
    };
    let mut out = Vec::with_capacity(cfg.identities * cfg.recordings);
    for id in 0..cfg.identities {
        let base = SyntheticIdentity::random(master.random());
        for r in 0..cfg.recordings {
            let other = SyntheticIdentity::random(master.random());
            let session = base.blend(&other, cfg.session_variation);
            let (signal, r_peaks) = synth_ecg(&session, &opts, &mut seeded(master.random()))?;
            out.push(Recording { identity: id, recording: id * cfg.recordings + r, signal, r_peaks });
        }
    }
    Ok(out)
}

/// Bandpass (when configured), cut beats at the R peaks and z-score each beat.
pub fn extract_beats(rec: &Recording, cfg: &Preprocessing) -> Result<Vec<Vec<f64>>> {
    let s = match cfg.band_hz {
        Some((lo, hi)) => bandpass_filter(&rec.signal, lo, hi, 2)?,
        None => rec.signal.clone(),
    };
    segment_heartbeats(&s, &rec.r_peaks, cfg.pre_ms, cfg.post_ms)
        .beats
        .iter()
        .map(|b| normalize_values(b, NormMethod::Zscore))
        .collect()
}

pub fn beat_dataset(recs: &[Recording], cfg: &DatasetConfig) -> Result<LabeledDataset> {
    beats_from_recordings(recs, &cfg.preprocessing())
}

pub fn beats_from_recordings(recs: &[Recording], cfg: &Preprocessing) -> Result<LabeledDataset> {
    let Some(first) = recs.first() else {
        return input("no recordings");
    };
    let rate = first.signal.rate();
    if recs.iter().any(|r| r.signal.rate() != rate) {
        return input("recordings must share one sample rate");
    }
    let mut samples = Vec::new();
    for rec in recs {
        for data in extract_beats(rec, cfg)? {
            samples.push(Sample { id: samples.len(), identity: Some(rec.identity), recording: Some(rec.recording), data });
        }
    }
    LabeledDataset::new(samples, rate)
}

/// Identities below `n_train` go to the first set, the rest to the second.
pub fn split_identities(ds: &LabeledDataset, n_train: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok((select_identities(ds, |id| id < n_train)?, select_identities(ds, |id| id >= n_train)?))
}

/// The samples whose identity passes `keep`.
pub fn select_identities(ds: &LabeledDataset, keep: impl Fn(usize) -> bool) -> Result<LabeledDataset> {
    let picked: Vec<Sample> = ds.samples().iter().filter(|s| s.identity.is_some_and(&keep)).cloned().collect();
    if picked.is_empty() {
        return input("identity selection is empty");
    }
    LabeledDataset::new(picked, ds.rate())
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Signal CSV path relative to the dataset directory.
    pub file: String,
    pub identity: usize,
    pub recording: usize,
    /// Known R-peak sample indices; detected when absent.
    #[serde(default)]
    pub r_peaks: Option<Vec<usize>>,
}

/// A dataset directory: signal CSVs plus a manifest listing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    /// Generator settings for synthetic datasets.
    #[serde(default)]
    pub synth: Option<DatasetConfig>,
    pub recordings: Vec<ManifestEntry>,
}

/// Write recordings and a manifest into `dir` (created if missing).
pub fn save_dataset_dir(recs: &[Recording], synth: Option<&DatasetConfig>, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(recs.len());
    for r in recs {
        let file = format!("id{:03}_rec{:04}.csv", r.identity, r.recording);
        save_signal_csv(&r.signal, &dir.join(&file))?;
        entries.push(ManifestEntry { file, identity: r.identity, recording: r.recording, r_peaks: Some(r.r_peaks.clone()) });
    }
    let m = Manifest { schema: 1, synth: synth.cloned(), recordings: entries };
    write_atomic(&dir.join(MANIFEST_FILE), format!("{}\n", serde_json::to_string_pretty(&m)?).as_bytes())?;
    Ok(m)
}

pub fn load_dataset_dir(dir: &Path) -> Result<(Manifest, Vec<Recording>)> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if m.schema != 1 {
        return config(format!("unsupported manifest schema {}", m.schema));
    }
    let recs = m
        .recordings
        .iter()
        .map(|e| {
            let signal = load_signal_csv(&dir.join(&e.file))?;
            let r_peaks = match &e.r_peaks {
                Some(p) => p.clone(),
                None => detect_r_peaks(&signal)?,
            };
            Ok(Recording { identity: e.identity, recording: e.recording, signal, r_peaks })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, recs))
}

/// A trained model with everything needed to score new recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema: u32,
    pub loss: LossConfig,
    pub preprocessing: Preprocessing,
    pub rate: f64,
    pub network: Checkpoint,
    #[serde(default)]
    pub head: Option<ClassifierHead>,
    pub loss_history: Vec<f64>,
    /// Identities seen in training; evaluation uses the others.
    pub train_identities: Vec<usize>,
}

impl ModelBundle {
    pub fn new(out: &TrainOutcome, loss: LossConfig, preprocessing: Preprocessing, train: &LabeledDataset) -> Self {
        Self {
            train_identities: train.identities(),
            rate: train.rate(),
            schema: 1,
            loss,
            preprocessing,
            network: out.net.to_checkpoint(),
            head: out.head.clone(),
            loss_history: out.loss_history.clone(),
        }
    }

    pub fn network(&self) -> Result<Network> {
        let mut net = Network::from_checkpoint(self.network.clone())?;
        net.set_mode(Mode::Eval);
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if b.schema != 1 {
            return config(format!("unsupported model schema {}", b.schema));
        }
        Ok(b)
    }
}

/// A small beat-level network: two convolution blocks and two dense layers.
pub fn beat_network(input_len: usize, key_dim: usize, embedding_dim: usize) -> NetworkConfig {
    NetworkConfig {
        input_len,
        conv_filters: vec![(8, 5), (16, 5)],
        pool: vec![(2, 2), (2, 2)],
        fc_sizes: vec![64, embedding_dim],
        key_dim,
        dropout_rate: 0.0,
        l2_lambda: 1e-3,
        output_relu: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossConfig {
    Triplet { alpha: f64 },
    Secure { alpha: f64 },
    SecureTl2 { alpha: f64, gamma: f64, linkability: Linkability },
    Stochastic { alpha: f64, beta: f64, gamma: f64 },
    Arcface { s: f64, m: f64 },
}

impl LossConfig {
    pub fn name(&self) -> &'static str {
        match self {
            LossConfig::Triplet { .. } => "triplet",
            LossConfig::Secure { .. } => "secure",
            LossConfig::SecureTl2 { .. } => "secure_tl2",
            LossConfig::Stochastic { .. } => "stochastic",
            LossConfig::Arcface { .. } => "arcface",
        }
    }

    pub fn is_keyed(&self) -> bool {
        matches!(self, LossConfig::Secure { .. } | LossConfig::SecureTl2 { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub network: NetworkConfig,
    pub epochs: usize,
    /// Triplets (or samples, for ArcFace) drawn per epoch.
    pub triplets_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing positives and negatives by wrong-identity samples.
    pub error_probability: f64,
    /// Kinds drawn uniformly to augment positives of plain and stochastic triplets.
    #[serde(default)]
    pub augment: Vec<AugmentKind>,
    #[serde(default)]
    pub augment_probability: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossConfig, input_len: usize) -> Self {
        let key_dim = if loss.is_keyed() { KEY_BITS } else { 0 };
        Self {
            loss,
            network: beat_network(input_len, key_dim, 32),
            epochs: 20,
            triplets_per_epoch: 2000,
            batch_size: 32,
            lr: 1e-3,
            error_probability: 0.0,
            augment: Vec::new(),
            augment_probability: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.batch_size == 0 || self.triplets_per_epoch == 0 {
            return config("batch size and triplets per epoch must be positive");
        }
        if !(self.lr > 0.0) {
            return config("learning rate must be positive");
        }
        if self.loss.is_keyed() != (self.network.key_dim > 0) {
            return config("keyed losses need a keyed network and vice versa");
        }
        if !(0.0..=1.0).contains(&self.error_probability) || !(0.0..=1.0).contains(&self.augment_probability) {
            return config("probabilities must lie in [0, 1]");
        }
        if self.augment_probability > 0.0 && self.augment.is_empty() {
            return config("augmentation probability set without augmentation kinds");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    /// ArcFace class weights.
    pub head: Option<ClassifierHead>,
    /// Mean loss per epoch.
    pub loss_history: Vec<f64>,
}

struct Step<'a> {
    net: &'a Network,
    grads: Vec<f64>,
    rng: &'a mut ChaCha8Rng,
}

impl Step<'_> {
    fn fwd(&mut self, x: &[f64], key: Option<&[f64]>) -> Result<Trace> {
        self.net.forward_trace(x, key, self.rng)
    }

    fn back(&mut self, tr: &Trace, g: &[f64]) -> Result<()> {
        self.net.backward_trace(tr, g, &mut self.grads).map(|_| ())
    }
}

pub fn train(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() || ds.samples()[0].data.len() != cfg.network.input_len {
        return input("training samples do not match the network input length");
    }
    let mut net = Network::new(cfg.network.clone(), cfg.seed)?;
    net.set_mode(Mode::Train);
    let mut adam = Adam::new(net.n_params());
    let mut rng = seeded(cfg.seed ^ 0x7A1_u64);
    let ids = ds.identities();
    let mut head = match cfg.loss {
        LossConfig::Arcface { .. } => Some(ClassifierHead::new(cfg.network.embedding_dim(), ids.len(), cfg.seed)?),
        _ => None,
    };
    let mut head_adam = head.as_ref().map(|h| Adam::new(h.params.len()));
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut n_items = 0usize;
        match cfg.loss {
            LossConfig::Secure { alpha } | LossConfig::SecureTl2 { alpha, .. } => {
                let items = gen_secure_batch(ds, cfg.triplets_per_epoch, &mut rng)?;
                for batch in items.chunks(cfg.batch_size) {
                    let mut st = Step { net: &net, grads: vec![0.0; net.n_params()], rng: &mut rng };
                    let mut traces = Vec::with_capacity(batch.len());
                    for it in batch {
                        let (k1, k2) = (it.key1.normalized(), it.key2.normalized());
                        let t = &it.triplet;
                        let (xa, xp, xn) = (&ds.sample(t.anchor).data, &ds.sample(t.positive).data, &ds.sample(t.negative).data);
                        traces.push([
                            st.fwd(xa, Some(&k1))?,
                            st.fwd(xp, Some(&k1))?,
                            st.fwd(xp, Some(&k2))?,
                            st.fwd(xn, Some(&k1))?,
                            st.fwd(xn, Some(&k2))?,
                        ]);
                    }
                    let scale = 1.0 / batch.len() as f64;
                    if let LossConfig::SecureTl2 { gamma, linkability, .. } = cfg.loss {
                        let embs: Vec<SecureEmbeddings> = traces
                            .iter()
                            .map(|t| SecureEmbeddings {
                                a: t[0].output().to_vec(),
                                p1: t[1].output().to_vec(),
                                p2: t[2].output().to_vec(),
                                n1: t[3].output().to_vec(),
                                n2: t[4].output().to_vec(),
                            })
                            .collect();
                        let l = secure_tl2(&embs, alpha, gamma, linkability)?;
                        for (i, tr) in traces.iter().enumerate() {
                            for (k, t) in tr.iter().enumerate() {
                                st.back(t, &l.grads[5 * i + k])?;
                            }
                        }
                        epoch_loss += l.value * batch.len() as f64;
                    } else {
                        for tr in &traces {
                            let o: Vec<&[f64]> = tr.iter().map(Trace::output).collect();
                            let l = secure_triplet_loss(o[0], o[1], o[2], o[3], o[4], alpha)?;
                            for (t, g) in tr.iter().zip(&l.grads) {
                                let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
                                st.back(t, &g)?;
                            }
                            epoch_loss += l.value;
                        }
                    }
                    n_items += batch.len();
                    let grads = st.grads;
                    net.adam_step(&mut adam, &grads, cfg.lr)?;
                }
            }
            LossConfig::Triplet { alpha } | LossConfig::Stochastic { alpha, .. } => {
                let mut triplets = gen_supervised(ds, cfg.triplets_per_epoch, &mut rng)?;
                if cfg.error_probability > 0.0 {
                    let p = cfg.error_probability;
                    triplets = inject_errors(&triplets, p, p, ds, &mut rng)?;
                }
                if cfg.augment_probability > 0.0 {
                    for t in &mut triplets {
                        if rng.random::<f64>() < cfg.augment_probability {
                            let kind = cfg.augment.choose(&mut rng).expect("validated").clone();
                            t.positive_aug = Some(AugmentSpec { kind, seed: rng.random() });
                        }
                    }
                }
                for batch in triplets.chunks(cfg.batch_size) {
                    let mut st = Step { net: &net, grads: vec![0.0; net.n_params()], rng: &mut rng };
                    let scale = 1.0 / batch.len() as f64;
                    for t in batch {
                        let xp = ds.positive_data(t)?;
                        let tr = [st.fwd(&ds.sample(t.anchor).data, None)?, st.fwd(&xp, None)?, st.fwd(&ds.sample(t.negative).data, None)?];
                        let (ya, yp, yn) = (tr[0].output(), tr[1].output(), tr[2].output());
                        let l = match cfg.loss {
                            LossConfig::Stochastic { beta, gamma, .. } => stochastic_triplet_loss(ya, yp, yn, alpha, beta, gamma)?,
                            _ => triplet_loss(ya, yp, yn, alpha)?,
                        };
                        for (t, g) in tr.iter().zip(&l.grads) {
                            let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
                            st.back(t, &g)?;
                        }
                        epoch_loss += l.value;
                    }
                    n_items += batch.len();
                    let grads = st.grads;
                    net.adam_step(&mut adam, &grads, cfg.lr)?;
                }
            }
            LossConfig::Arcface { s, m } => {
                let (h, h_adam) = (head.as_mut().expect("head"), head_adam.as_mut().expect("head optimizer"));
                let mut order: Vec<usize> = (0..ds.len()).collect();
                order.shuffle(&mut rng);
                order.truncate(cfg.triplets_per_epoch.min(ds.len()));
                for batch in order.chunks(cfg.batch_size) {
                    let mut st = Step { net: &net, grads: vec![0.0; net.n_params()], rng: &mut rng };
                    let mut head_grads = vec![0.0; h.params.len()];
                    let scale = 1.0 / batch.len() as f64;
                    let rows = h.class_weights();
                    for &i in batch {
                        let sample = ds.sample(i);
                        let class = ids.binary_search(&sample.identity.expect("supervised")).expect("known identity");
                        let tr = st.fwd(&sample.data, None)?;
                        let l = arcface_loss(tr.output(), &rows, class, s, m)?;
                        let g: Vec<f64> = l.grads[0].iter().map(|v| v * scale).collect();
                        st.back(&tr, &g)?;
                        for (c, gr) in l.grads[1..].iter().enumerate() {
                            let row = &mut head_grads[c * h.n_in..(c + 1) * h.n_in];
                            row.iter_mut().zip(gr).for_each(|(a, b)| *a += b * scale);
                        }
                        epoch_loss += l.value;
                    }
                    n_items += batch.len();
                    let grads = st.grads;
                    net.adam_step(&mut adam, &grads, cfg.lr)?;
                    h_adam.step(&mut h.params, &head_grads, cfg.lr)?;
                }
            }
        }
        let mean = epoch_loss / n_items.max(1) as f64;
        debug!("epoch {epoch}: mean {} loss {mean:.5}", cfg.loss.name());
        history.push(mean);
    }
    net.set_mode(Mode::Eval);
    info!("trained {} for {} epochs, final loss {:.5}", cfg.loss.name(), cfg.epochs, history.last().copied().unwrap_or(f64::NAN));
    Ok(TrainOutcome { net, head, loss_history: history })
}

/// Enrollment uses the first `enroll_beats` beats of each identity's first
/// recording; every beat of its other recordings is a query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub enroll_beats: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self { enroll_beats: 10 }
    }
}

struct Split {
    ids: Vec<usize>,
    enroll: Vec<Vec<usize>>,
    queries: Vec<(usize, usize)>,
}

fn split_protocol(ds: &LabeledDataset, p: &Protocol) -> Result<Split> {
    let ids = ds.identities();
    if ids.len() < 2 {
        return input("evaluation needs at least 2 identities");
    }
    let mut enroll = Vec::new();
    let mut queries = Vec::new();
    for (k, &id) in ids.iter().enumerate() {
        let members = ds.identity_members(id);
        let first_rec = members.iter().filter_map(|&i| ds.sample(i).recording).min();
        let in_first: Vec<usize> = members.iter().copied().filter(|&i| ds.sample(i).recording == first_rec).collect();
        let e: Vec<usize> = in_first.into_iter().take(p.enroll_beats.max(1)).collect();
        queries.extend(members.iter().filter(|&&i| ds.sample(i).recording != first_rec).map(|&i| (k, i)));
        enroll.push(e);
    }
    if queries.is_empty() {
        return input("evaluation needs at least 2 recordings per identity");
    }
    Ok(Split { ids, enroll, queries })
}

fn mean_embedding(net: &Network, ds: &LabeledDataset, idx: &[usize], key: Option<&[f64]>) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; net.config().embedding_dim()];
    for &i in idx {
        let y = net.embed(&ds.sample(i).data, key)?;
        acc.iter_mut().zip(y).for_each(|(a, v)| *a += v / idx.len() as f64);
    }
    Ok(acc)
}

fn score(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(normalized_euclidean(a, b)?.value)
}

/// Normalized-Euclidean verification scores of every query against every template.
pub fn verification_scores(net: &Network, ds: &LabeledDataset, p: &Protocol) -> Result<ScoreTable> {
    let m = identification_matrix(net, ds, p)?;
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for (row, t) in m.scores.iter().zip(&m.true_ids) {
        for (id, s) in m.enrolled_ids.iter().zip(row) {
            if Some(*id) == *t { genuine.push(*s) } else { impostor.push(*s) }
        }
    }
    Ok(ScoreTable::dissimilarity(genuine, impostor))
}

/// Every query against every identity template.
pub fn identification_matrix(net: &Network, ds: &LabeledDataset, p: &Protocol) -> Result<ScoreMatrix> {
    if net.config().key_dim > 0 {
        return config("use keyed_scores for keyed networks");
    }
    let sp = split_protocol(ds, p)?;
    let templates = sp.enroll.iter().map(|e| mean_embedding(net, ds, e, None)).collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(sp.queries.len());
    let mut true_ids = Vec::with_capacity(sp.queries.len());
    for &(k, i) in &sp.queries {
        let y = net.embed(&ds.sample(i).data, None)?;
        scores.push(templates.iter().map(|t| score(&y, t)).collect::<Result<Vec<_>>>()?);
        true_ids.push(Some(sp.ids[k]));
    }
    Ok(ScoreMatrix { enrolled_ids: sp.ids, true_ids, scores })
}

/// Keyed evaluation with two systems. Each identity holds key `K_i` in system
/// one and `K'_i` in system two; templates live in system one. A query of
/// identity `j` scored against template `i` gives a same-key score when the
/// query is bound to `K_i`, and a different-key score when bound to `K'_j`.
pub fn keyed_scores(net: &Network, ds: &LabeledDataset, p: &Protocol, rng: &mut ChaCha8Rng) -> Result<KeyedScoreTable> {
    let dim = net.config().key_dim;
    if dim == 0 {
        return config("keyed evaluation needs a keyed network");
    }
    let sp = split_protocol(ds, p)?;
    let n = sp.ids.len();
    let keys1: Vec<Vec<f64>> = (0..n).map(|_| SecureKey::random(dim, rng).normalized()).collect();
    let keys2: Vec<Vec<f64>> = (0..n)
        .map(|i| loop {
            let k = SecureKey::random(dim, rng).normalized();
            if k != keys1[i] {
                break k;
            }
        })
        .collect();
    let templates = sp
        .enroll
        .iter()
        .zip(&keys1)
        .map(|(e, k)| mean_embedding(net, ds, e, Some(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut t = KeyedScoreTable::default();
    for &(j, q) in &sp.queries {
        let x = &ds.sample(q).data;
        let y_other = net.embed(x, Some(&keys2[j]))?;
        for i in 0..n {
            let y_same = net.embed(x, Some(&keys1[i]))?;
            t.push(score(&y_same, &templates[i])?, i == j, true);
            t.push(score(&y_other, &templates[i])?, i == j, false);
        }
    }
    Ok(t)
}

/// Slowly drifting identities observed over several time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub identities: usize,
    pub time_points: usize,
    /// Blend fraction toward the drift target reached at the last time point.
    pub drift: f64,
    pub duration_s: f64,
    pub rate: f64,
    pub noise_sigma: f64,
    pub enroll_beats: usize,
    pub capacity: usize,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            identities: 10,
            time_points: 7,
            drift: 0.8,
            duration_s: 30.0,
            rate: 100.0,
            noise_sigma: 0.05,
            enroll_beats: 10,
            capacity: 20,
            seed: 0,
        }
    }
}

/// Initial galleries and per-time-point stream. At each time point the first
/// half of every identity's beats are tests and the second half update candidates.
pub fn synth_drift_timeline(cfg: &DriftConfig) -> Result<(Vec<Gallery>, Vec<TimePoint>)> {
    if cfg.time_points < 2 || cfg.identities < 2 {
        return config("drift timeline needs at least 2 time points and 2 identities");
    }
    let prep = DatasetConfig::default().preprocessing();
    let mut master = seeded(cfg.seed);
    let opts = SynthOptions { duration_s: cfg.duration_s, rate: cfg.rate, noise_sigma: cfg.noise_sigma, baseline_wander: 0.0 };
    let pairs: Vec<(SyntheticIdentity, SyntheticIdentity)> = (0..cfg.identities)
        .map(|_| (SyntheticIdentity::random(master.random()), SyntheticIdentity::random(master.random())))
        .collect();
    let mut beats_at = |tp: usize| -> Result<Vec<Vec<Vec<f64>>>> {
        let frac = cfg.drift * tp as f64 / (cfg.time_points - 1) as f64;
        pairs
            .iter()
            .enumerate()
            .map(|(id, (a, b))| {
                let (signal, r_peaks) = synth_ecg(&a.blend(b, frac), &opts, &mut seeded(master.random()))?;
                extract_beats(&Recording { identity: id, recording: tp, signal, r_peaks }, &prep)
            })
            .collect()
    };
    let enrollment = beats_at(0)?;
    let galleries = enrollment
        .iter()
        .map(|b| Gallery::new(b.iter().take(cfg.enroll_beats).cloned().collect(), cfg.capacity))
        .collect::<Result<Vec<_>>>()?;
    let mut stream = Vec::with_capacity(cfg.time_points);
    for tp in 0..cfg.time_points {
        let beats = if tp == 0 {
            enrollment.iter().map(|b| b[cfg.enroll_beats.min(b.len())..].to_vec()).collect()
        } else {
            beats_at(tp)?
        };
        let mut point = TimePoint::default();
        for (id, b) in beats.into_iter().enumerate() {
            let half = b.len() / 2;
            for (k, x) in b.into_iter().enumerate() {
                if k < half { point.tests.push((id, x)) } else { point.candidates.push((id, x)) }
            }
        }
        stream.push(point);
    }
    Ok((galleries, stream))
}

/// Two classifiers with complementary blind spots over `n_classes` classes:
/// the primary mistakes the last class for class 0, the secondary mistakes
/// class 1 for class 0. Confidence is drawn in [0.4, 0.95).
pub fn synth_complementary_stream(n_classes: usize, n: usize, seed: u64) -> Result<Vec<ProbRow>> {
    if n_classes < 3 {
        return config("complementary stream needs at least 3 classes");
    }
    let mut rng = seeded(seed);
    let row = |predicted: usize, rng: &mut ChaCha8Rng| {
        let conf = rng.random_range(0.4..0.95);
        let mut p = vec![(1.0 - conf) / (n_classes - 1) as f64; n_classes];
        p[predicted] = conf;
        p
    };
    Ok((0..n)
        .map(|i| {
            let label = i % n_classes;
            let primary = row(if label == n_classes - 1 { 0 } else { label }, &mut rng);
            let secondary = row(if label == 1 { 0 } else { label }, &mut rng);
            ProbRow { label, primary, secondary }
        })
        .collect())
}
