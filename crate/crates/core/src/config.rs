//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! dir = "synth_data"        # dataset directory; generated from [data.synth] when absent
//! train_identities = 10
//!
//! [loss]
//! kind = "secure_tl2"
//! alpha = 1.0
//! gamma = 0.9
//! linkability = { variant = "stats" }
//!
//! [optim]
//! epochs = 60
//! lr = 0.001
//! ```
//!
//! Relative paths resolve against the directory holding the config file. The
//! top-level seed drives data generation and training; `CARDIOKEY_SEED`
//! overrides it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentKind;
use crate::error::{config, Error, Result};
use crate::losses::Linkability;
use crate::pipeline::{beat_network, DatasetConfig, LossConfig, Protocol, TrainConfig};
use crate::rng::seed_from_env;
use crate::triplet_gen::KEY_BITS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    /// Generator and preprocessing settings; its seed is replaced by the run seed.
    pub synth: DatasetConfig,
    /// Identities below this index train, the rest are held out.
    pub train_identities: usize,
    pub enroll_beats: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dir: None, synth: DatasetConfig::default(), train_identities: 10, enroll_beats: Protocol::default().enroll_beats }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub epochs: usize,
    pub triplets_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub error_probability: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        Self { epochs: 60, triplets_per_epoch: 2000, batch_size: 32, lr: 1e-3, error_probability: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Augmentation names, e.g. `random_permutations`.
    pub kinds: Vec<String>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub conv_filters: Vec<(usize, usize)>,
    pub pool: Vec<(usize, usize)>,
    pub fc_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = beat_network(1, 0, 32);
        Self { conv_filters: n.conv_filters, pool: n.pool, fc_sizes: n.fc_sizes, dropout_rate: n.dropout_rate, l2_lambda: n.l2_lambda }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Where commands write their outputs.
    pub output_dir: Option<PathBuf>,
    /// Trained model read by evaluation commands.
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default = "default_loss")]
    pub loss: LossConfig,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub paths: PathsSection,
}

fn default_loss() -> LossConfig {
    LossConfig::Triplet { alpha: 1.0 }
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            data: DataSection::default(),
            loss: default_loss(),
            optim: OptimSection::default(),
            augment: AugmentSection::default(),
            network: NetworkSection::default(),
            paths: PathsSection::default(),
        }
    }

    /// Parse, resolve relative paths against `base`, and validate.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut().filter(|x| x.is_relative()) {
                *x = base.join(&*x);
            }
        };
        resolve(&mut c.data.dir);
        resolve(&mut c.paths.output_dir);
        resolve(&mut c.paths.model);
        c.data.synth.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    /// Load from a file, applying the `CARDIOKEY_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut c = Self::from_toml(&text, base)?;
        if let Some(seed) = seed_from_env()? {
            c.set_seed(seed);
        }
        Ok(c)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.data.dir {
            if !d.join(crate::pipeline::MANIFEST_FILE).is_file() {
                return config(format!("data.dir {} has no {}", d.display(), crate::pipeline::MANIFEST_FILE));
            }
        }
        if let Some(m) = &self.paths.model {
            if !m.is_file() {
                return config(format!("paths.model {} does not exist", m.display()));
            }
        }
        if let Some(o) = &self.paths.output_dir {
            let parent = o.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if !o.is_dir() && !parent.is_dir() {
                return config(format!("paths.output_dir {} cannot be created: parent is missing", o.display()));
            }
        }
        if self.data.train_identities == 0 {
            return config("data.train_identities must be positive");
        }
        if let LossConfig::SecureTl2 { linkability: Linkability::Kld { bins, bandwidth }, .. } = self.loss {
            if bins < 2 || !(bandwidth > 0.0) {
                return config("KLD linkability needs at least 2 bins and a positive bandwidth");
            }
        }
        self.augment_kinds()?;
        self.train_config(self.data.synth.beat_len())?.validate()
    }

    pub fn augment_kinds(&self) -> Result<Vec<AugmentKind>> {
        self.augment.kinds.iter().map(|k| AugmentKind::from_name(k)).collect()
    }

    pub fn protocol(&self) -> Protocol {
        Protocol { enroll_beats: self.data.enroll_beats }
    }

    pub fn train_config(&self, input_len: usize) -> Result<TrainConfig> {
        let key_dim = if self.loss.is_keyed() { KEY_BITS } else { 0 };
        let mut network = beat_network(input_len, key_dim, 32);
        network.conv_filters = self.network.conv_filters.clone();
        network.pool = self.network.pool.clone();
        network.fc_sizes = self.network.fc_sizes.clone();
        network.dropout_rate = self.network.dropout_rate;
        network.l2_lambda = self.network.l2_lambda;
        Ok(TrainConfig {
            loss: self.loss,
            network,
            epochs: self.optim.epochs,
            triplets_per_epoch: self.optim.triplets_per_epoch,
            batch_size: self.optim.batch_size,
            lr: self.optim.lr,
            error_probability: self.optim.error_probability,
            augment: self.augment_kinds()?,
            augment_probability: self.augment.probability,
            seed: self.seed,
        })
    }
}
