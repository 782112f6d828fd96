//! Training-tuple generation: supervised, unsupervised (augmented positives),
//! recording-based and keyed triplets, plus deliberate label-error injection.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentKind, AugmentSpec};
use crate::error::{config, input, Error, Result};
use crate::signal::Signal;

/// Number of bits in a secure key.
pub const KEY_BITS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub identity: Option<usize>,
    pub recording: Option<usize>,
    pub data: Vec<f64>,
}

/// Samples with optional identity and recording labels, indexed per label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    rate: f64,
    by_identity: BTreeMap<usize, Vec<usize>>,
    by_recording: BTreeMap<usize, Vec<usize>>,
}

impl LabeledDataset {
    /// `rate` is the sample rate of every payload, used by augmentation.
    pub fn new(samples: Vec<Sample>, rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return config("dataset sample rate must be positive");
        }
        let mut by_identity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut by_recording: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if let Some(id) = s.identity {
                by_identity.entry(id).or_default().push(i);
            }
            if let Some(r) = s.recording {
                by_recording.entry(r).or_default().push(i);
            }
        }
        Ok(Self { samples, rate, by_identity, by_recording })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Number of distinct identities.
    pub fn n_identities(&self) -> usize {
        self.by_identity.len()
    }

    /// Distinct identity labels in ascending order.
    pub fn identities(&self) -> Vec<usize> {
        self.by_identity.keys().copied().collect()
    }

    pub fn identity_members(&self, identity: usize) -> &[usize] {
        self.by_identity.get(&identity).map_or(&[], Vec::as_slice)
    }

    fn identity_of(&self, i: usize) -> Result<usize> {
        self.samples[i].identity.ok_or_else(|| Error::Input(format!("sample {i} has no identity label")))
    }

    fn require_supervised(&self) -> Result<()> {
        if self.samples.iter().any(|s| s.identity.is_none()) {
            return input("supervised generation needs an identity for every sample");
        }
        if self.by_identity.len() < 2 {
            return input("need at least 2 identities");
        }
        if let Some((id, _)) = self.by_identity.iter().find(|(_, m)| m.len() < 2) {
            return input(format!("identity {id} has fewer than 2 samples"));
        }
        Ok(())
    }

    /// Payload of the positive of `t`, augmenting the anchor when required.
    pub fn positive_data(&self, t: &Triplet) -> Result<Vec<f64>> {
        let base = &self.samples[t.positive].data;
        match &t.positive_aug {
            None => Ok(base.clone()),
            Some(spec) => Ok(augment::apply(&Signal::new(base.clone(), self.rate)?, spec)?.into_samples()),
        }
    }
}

/// Indices into a [`LabeledDataset`]. When `positive_aug` is set the positive
/// is that augmentation applied to sample `positive` (the anchor itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub positive_aug: Option<AugmentSpec>,
}

/// Anchors drawn without replacement, reshuffled each time the pool is exhausted.
fn anchor_stream(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut epoch = pool.to_vec();
    while out.len() < n {
        epoch.shuffle(rng);
        out.extend(epoch.iter().take(n - out.len()));
    }
    out
}

fn pick_other(members: &[usize], exclude: usize, rng: &mut ChaCha8Rng) -> usize {
    loop {
        let c = *members.choose(rng).expect("non-empty member list");
        if c != exclude {
            return c;
        }
    }
}

/// Uniform over the samples for which `accept` holds; at least one must exist.
fn pick_where(n: usize, rng: &mut ChaCha8Rng, accept: impl Fn(usize) -> bool) -> usize {
    loop {
        let c = rng.random_range(0..n);
        if accept(c) {
            return c;
        }
    }
}

pub fn gen_supervised(ds: &LabeledDataset, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Triplet>> {
    ds.require_supervised()?;
    let pool: Vec<usize> = (0..ds.len()).collect();
    anchor_stream(&pool, n, rng)
        .into_iter()
        .map(|a| {
            let id = ds.identity_of(a)?;
            let positive = pick_other(ds.identity_members(id), a, rng);
            let negative = pick_where(ds.len(), rng, |c| ds.samples[c].identity != Some(id));
            Ok(Triplet { anchor: a, positive, negative, positive_aug: None })
        })
        .collect()
}

/// Nominal probability that a uniformly drawn negative shares the anchor's
/// class in a balanced dataset with `classes` classes.
pub fn nominal_error_probability(classes: usize) -> f64 {
    1.0 / classes as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnsupervisedTriplets {
    pub triplets: Vec<Triplet>,
    /// Probability that a positive is truly positive (augmentations never change identity).
    pub beta: f64,
    /// `1 - 1/C` when the true class count `C` is supplied.
    pub gamma: Option<f64>,
}

/// Positives are augmented anchors, one kind drawn uniformly from `policy`;
/// negatives are uniform over the other samples.
pub fn gen_unsupervised(
    ds: &LabeledDataset,
    policy: &[AugmentKind],
    n: usize,
    classes: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<UnsupervisedTriplets> {
    if policy.is_empty() {
        return config("empty augmentation policy");
    }
    if ds.len() < 2 {
        return input("need at least 2 samples");
    }
    if classes == Some(0) {
        return config("class count must be positive");
    }
    let pool: Vec<usize> = (0..ds.len()).collect();
    let triplets = anchor_stream(&pool, n, rng)
        .into_iter()
        .map(|a| {
            let kind = policy.choose(rng).expect("non-empty policy").clone();
            let spec = AugmentSpec { kind, seed: rng.random() };
            let negative = pick_where(ds.len(), rng, |c| c != a);
            Triplet { anchor: a, positive: a, negative, positive_aug: Some(spec) }
        })
        .collect();
    Ok(UnsupervisedTriplets {
        triplets,
        beta: 1.0,
        gamma: classes.map(|c| 1.0 - nominal_error_probability(c)),
    })
}

/// Positive from the anchor's recording, negative from any other recording.
pub fn gen_recording_based(ds: &LabeledDataset, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Triplet>> {
    if ds.samples.iter().any(|s| s.recording.is_none()) {
        return input("recording-based generation needs a recording id for every sample");
    }
    if ds.by_recording.len() < 2 {
        return input("need at least 2 recordings");
    }
    let pool: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.by_recording[&ds.samples[i].recording.expect("checked")].len() >= 2)
        .collect();
    if pool.is_empty() {
        return input("no recording holds 2 samples");
    }
    Ok(anchor_stream(&pool, n, rng)
        .into_iter()
        .map(|a| {
            let rec = ds.samples[a].recording;
            let positive = pick_other(&ds.by_recording[&rec.expect("checked")], a, rng);
            let negative = pick_where(ds.len(), rng, |c| ds.samples[c].recording != rec);
            Triplet { anchor: a, positive, negative, positive_aug: None }
        })
        .collect())
}

/// Replace each positive by a different-identity sample with probability
/// `p_pos`, and each negative by a same-identity sample (other than the
/// anchor) with probability `p_neg`.
pub fn inject_errors(
    triplets: &[Triplet],
    p_pos: f64,
    p_neg: f64,
    ds: &LabeledDataset,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>> {
    if !(0.0..=1.0).contains(&p_pos) || !(0.0..=1.0).contains(&p_neg) {
        return config(format!("error probabilities ({p_pos}, {p_neg}) must lie in [0, 1]"));
    }
    ds.require_supervised()?;
    triplets
        .iter()
        .map(|t| {
            let mut out = t.clone();
            let id = ds.identity_of(t.anchor)?;
            let (flip_pos, flip_neg) = (rng.random::<f64>() < p_pos, rng.random::<f64>() < p_neg);
            if flip_pos {
                out.positive = pick_where(ds.len(), rng, |c| ds.samples[c].identity != Some(id));
                out.positive_aug = None;
            }
            if flip_neg {
                out.negative = pick_other(ds.identity_members(id), t.anchor, rng);
            }
            Ok(out)
        })
        .collect()
}

/// A random binary key and its unit-norm real version `bits / sqrt(popcount)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureKey {
    bits: Vec<bool>,
}

impl SecureKey {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|b| *b) {
            return input("a key needs at least one set bit");
        }
        Ok(Self { bits })
    }

    /// I.i.d. fair bits; the all-zero key is redrawn.
    pub fn random(len: usize, rng: &mut ChaCha8Rng) -> Self {
        loop {
            let bits: Vec<bool> = (0..len).map(|_| rng.random()).collect();
            if let Ok(k) = Self::from_bits(bits) {
                return k;
            }
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn normalized(&self) -> Vec<f64> {
        let v = 1.0 / (self.popcount() as f64).sqrt();
        self.bits.iter().map(|&b| if b { v } else { 0.0 }).collect()
    }

    /// Bits packed most-significant first, zero-padded to whole bytes.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .bits
            .chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i))))
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Input(format!("bad key hex: {e}")))?;
        if bytes.len() != len.div_ceil(8) {
            return input(format!("key hex holds {} bytes, expected {}", bytes.len(), len.div_ceil(8)));
        }
        let bits = (0..len).map(|i| bytes[i / 8] >> (7 - i % 8) & 1 == 1).collect();
        Self::from_bits(bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecureTriplet {
    pub triplet: Triplet,
    pub key1: SecureKey,
    pub key2: SecureKey,
}

/// Supervised triplets, each with two fresh distinct keys.
pub fn gen_secure_batch(ds: &LabeledDataset, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SecureTriplet>> {
    gen_secure_batch_with(ds, n, KEY_BITS, rng)
}

pub fn gen_secure_batch_with(ds: &LabeledDataset, n: usize, key_bits: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SecureTriplet>> {
    if key_bits < 2 {
        return config("keys need at least 2 bits to differ");
    }
    let triplets = gen_supervised(ds, n, rng)?;
    Ok(triplets
        .into_iter()
        .map(|triplet| {
            let key1 = SecureKey::random(key_bits, rng);
            let key2 = loop {
                let k = SecureKey::random(key_bits, rng);
                if k != key1 {
                    break k;
                }
            };
            SecureTriplet { triplet, key1, key2 }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestRow {
    anchor: usize,
    positive: usize,
    negative: usize,
    augment: String,
    key1: String,
    key2: String,
}

/// CSV of sample ids (and augmentation JSON / key hex where present).
pub fn write_manifest<W: Write>(w: W, ds: &LabeledDataset, rows: &[SecureTriplet]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        let t = &r.triplet;
        out.serialize(ManifestRow {
            anchor: ds.samples[t.anchor].id,
            positive: ds.samples[t.positive].id,
            negative: ds.samples[t.negative].id,
            augment: t.positive_aug.as_ref().map(serde_json::to_string).transpose()?.unwrap_or_default(),
            key1: r.key1.to_hex(),
            key2: r.key2.to_hex(),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Triplets without keys, for manifests of unkeyed training.
pub fn write_triplet_manifest<W: Write>(w: W, ds: &LabeledDataset, rows: &[Triplet]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for t in rows {
        out.serialize(ManifestRow {
            anchor: ds.samples[t.anchor].id,
            positive: ds.samples[t.positive].id,
            negative: ds.samples[t.negative].id,
            augment: t.positive_aug.as_ref().map(serde_json::to_string).transpose()?.unwrap_or_default(),
            key1: String::new(),
            key2: String::new(),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_manifest`]; sample ids are resolved against `ds`.
pub fn read_manifest<R: Read>(r: R, ds: &LabeledDataset, key_bits: usize) -> Result<Vec<SecureTriplet>> {
    let index: BTreeMap<usize, usize> = ds.samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let lookup = |id: usize| index.get(&id).copied().ok_or_else(|| Error::Input(format!("unknown sample id {id}")));
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        let positive_aug = if row.augment.is_empty() { None } else { Some(serde_json::from_str(&row.augment)?) };
        out.push(SecureTriplet {
            triplet: Triplet {
                anchor: lookup(row.anchor)?,
                positive: lookup(row.positive)?,
                negative: lookup(row.negative)?,
                positive_aug,
            },
            key1: SecureKey::from_hex(&row.key1, key_bits)?,
            key2: SecureKey::from_hex(&row.key2, key_bits)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn dataset(identities: usize, per: usize) -> LabeledDataset {
        let samples = (0..identities * per)
            .map(|i| Sample {
                id: 1000 + i,
                identity: Some(i / per),
                recording: Some(i / per),
                data: (0..16).map(|t| ((t + i) as f64 * 0.3).sin()).collect(),
            })
            .collect();
        LabeledDataset::new(samples, 100.0).unwrap()
    }

    fn id(ds: &LabeledDataset, i: usize) -> usize {
        ds.sample(i).identity.unwrap()
    }

    #[test]
    fn supervised_constraints() {
        let ds = dataset(2, 2);
        let t = gen_supervised(&ds, 10, &mut seeded(1)).unwrap();
        assert_eq!(t.len(), 10);
        for x in &t {
            assert_eq!(id(&ds, x.anchor), id(&ds, x.positive));
            assert_ne!(x.anchor, x.positive);
            assert_ne!(id(&ds, x.anchor), id(&ds, x.negative));
        }
        assert_eq!(t, gen_supervised(&ds, 10, &mut seeded(1)).unwrap());

        let ds = dataset(100, 3);
        let t = gen_supervised(&ds, 10_000, &mut seeded(2)).unwrap();
        assert!(t.iter().all(|x| id(&ds, x.negative) != id(&ds, x.anchor)));
    }

    #[test]
    fn supervised_errors() {
        assert!(gen_supervised(&dataset(1, 5), 3, &mut seeded(0)).is_err());
        assert!(gen_supervised(&dataset(3, 1), 3, &mut seeded(0)).is_err());
    }

    #[test]
    fn anchors_cover_dataset() {
        let ds = dataset(4, 5);
        let t = gen_supervised(&ds, 20, &mut seeded(7)).unwrap();
        let mut anchors: Vec<usize> = t.iter().map(|x| x.anchor).collect();
        anchors.sort();
        assert_eq!(anchors, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn unsupervised_reports_nominal_rates() {
        assert!((nominal_error_probability(100) - 0.01).abs() < 1e-15);
        assert!((nominal_error_probability(10) - 0.1).abs() < 1e-15);
        let ds = dataset(5, 4);
        let policy = AugmentKind::all_defaults();
        let out = gen_unsupervised(&ds, &policy, 30, Some(100), &mut seeded(3)).unwrap();
        assert!((out.gamma.unwrap() - 0.99).abs() < 1e-15);
        for t in &out.triplets {
            let pos = ds.positive_data(t).unwrap();
            assert_eq!(pos.len(), ds.sample(t.anchor).data.len());
            assert_ne!(pos, ds.sample(t.anchor).data);
            assert_ne!(t.negative, t.anchor);
        }
        assert!(gen_unsupervised(&ds, &[], 3, None, &mut seeded(0)).is_err());
    }

    #[test]
    fn recording_constraints() {
        let ds = dataset(2, 4);
        let t = gen_recording_based(&ds, 50, &mut seeded(5)).unwrap();
        for x in &t {
            let rec = |i: usize| ds.sample(i).recording;
            assert_eq!(rec(x.anchor), rec(x.positive));
            assert_ne!(rec(x.anchor), rec(x.negative));
        }
        assert_eq!(t, gen_recording_based(&ds, 50, &mut seeded(5)).unwrap());
        assert!(gen_recording_based(&dataset(1, 4), 5, &mut seeded(0)).is_err());
    }

    #[test]
    fn injection_rates() {
        let ds = dataset(2, 5);
        let t = gen_supervised(&ds, 200, &mut seeded(1)).unwrap();
        assert_eq!(inject_errors(&t, 0.0, 0.0, &ds, &mut seeded(2)).unwrap(), t);
        let all = inject_errors(&t, 0.0, 1.0, &ds, &mut seeded(2)).unwrap();
        assert!(all.iter().all(|x| id(&ds, x.negative) == id(&ds, x.anchor)));
        assert!(inject_errors(&t, 1.5, 0.0, &ds, &mut seeded(2)).is_err());

        let ds = dataset(50, 4);
        let t = gen_supervised(&ds, 10_000, &mut seeded(1)).unwrap();
        let c = inject_errors(&t, 0.3, 0.1, &ds, &mut seeded(9)).unwrap();
        let pos_rate = c.iter().filter(|x| id(&ds, x.positive) != id(&ds, x.anchor)).count() as f64 / 1e4;
        let neg_rate = c.iter().filter(|x| id(&ds, x.negative) == id(&ds, x.anchor)).count() as f64 / 1e4;
        assert!((0.28..=0.32).contains(&pos_rate), "{pos_rate}");
        assert!((0.08..=0.12).contains(&neg_rate), "{neg_rate}");
    }

    #[test]
    fn secure_keys() {
        let ds = dataset(3, 3);
        let batch = gen_secure_batch(&ds, 40, &mut seeded(4)).unwrap();
        for b in &batch {
            assert_ne!(b.key1, b.key2);
            for k in [&b.key1, &b.key2] {
                assert_eq!(k.len(), KEY_BITS);
                let norm: f64 = k.normalized().iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
                let back: Vec<bool> = k.normalized().iter().map(|v| *v > 0.0).collect();
                assert_eq!(back, k.bits());
            }
        }
        let bits: Vec<bool> = (0..KEY_BITS).map(|i| i % 2 == 0).collect();
        let k = SecureKey::from_bits(bits).unwrap();
        assert_eq!(k.popcount(), 50);
        let v = 1.0 / 50f64.sqrt();
        assert!(k.normalized().iter().all(|x| *x == 0.0 || *x == v));
        assert!(SecureKey::from_bits(vec![false; 8]).is_err());
    }

    #[test]
    fn hex_and_manifest_round_trip() {
        let mut rng = seeded(6);
        let k = SecureKey::random(KEY_BITS, &mut rng);
        assert_eq!(k.to_hex().len(), 26);
        assert_eq!(SecureKey::from_hex(&k.to_hex(), KEY_BITS).unwrap(), k);

        let ds = dataset(3, 3);
        let mut batch = gen_secure_batch(&ds, 5, &mut rng).unwrap();
        batch[0].triplet.positive_aug = Some(AugmentSpec { kind: AugmentKind::Flip, seed: 3 });
        let mut buf = Vec::new();
        write_manifest(&mut buf, &ds, &batch).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("anchor,positive,negative,augment,key1,key2"));
        assert_eq!(read_manifest(buf.as_slice(), &ds, KEY_BITS).unwrap(), batch);
    }
}
