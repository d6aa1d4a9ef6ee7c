//! Run configuration.
//!
//! Files hold UTF-8 `key = value` lines; `#` starts a comment. Every key has
//! a default, so a file lists only what it changes. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ascl_core::adversary::{AttackConfig, AttackKind, AttackLoss};
use ascl_core::data::{load_dataset, make_blobs, make_two_moons, BlobsConfig, Dataset, Split};
use ascl_core::loss::{LossFlags, LossWeights, SelectionStrategy, Similarity};
use ascl_core::model::{ModelSpec, Projection};

use crate::error::{Result, TrainError};

/// Every recognized key with its default value, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "two_moons"),
    ("samples", "4000"),
    ("noise", "0.1"),
    ("classes", "10"),
    ("per_class", "100"),
    ("dims", "10"),
    ("spread", "0.3"),
    ("train_file", ""),
    ("test_file", ""),
    ("data_seed", "0"),
    ("test_fraction", "0.25"),
    ("hidden", "64,64"),
    ("projection", "identity"),
    ("epsilon", "0.05"),
    ("eta", "0.0125"),
    ("steps", "10"),
    ("random_init", "true"),
    ("eval_epsilon", ""),
    ("eval_eta", ""),
    ("eval_steps", "250"),
    ("epoch_eval_steps", "10"),
    ("eval_samples", "0"),
    ("eval_attacks", "none,pgd,mpgd"),
    ("strategy", "global"),
    ("lambda_scl", "1"),
    ("lambda_vat", "2"),
    ("tau", "0.07"),
    ("similarity", "cosine"),
    ("nat_ce", "true"),
    ("use_vat", "true"),
    ("optimizer", "adam"),
    ("lr", "0.001"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("momentum", "0.9"),
    ("weight_decay", "0"),
    ("schedule", ""),
    ("epochs", "30"),
    ("batch_size", "128"),
    ("seed", "0"),
    ("output_dir", ""),
];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    TwoMoons { samples: usize, noise: f64 },
    Blobs(BlobsConfig),
    Files { train: PathBuf, test: Option<PathBuf> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64 },
    Sgd { momentum: f64, weight_decay: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub data_seed: u64,
    pub test_fraction: f64,
    pub hidden: Vec<usize>,
    pub projection: Projection,
    pub train_attack: AttackConfig,
    pub eval_attack: AttackConfig,
    /// PGD steps of the cheap robust evaluation after each epoch.
    pub epoch_eval_steps: usize,
    /// Test samples used by per-epoch evaluation; 0 means all.
    pub eval_samples: usize,
    /// Attacks of the final evaluation.
    pub eval_attacks: Vec<AttackKind>,
    pub strategy: SelectionStrategy,
    pub weights: LossWeights,
    pub flags: LossFlags,
    pub optimizer: OptimizerConfig,
    /// `(epoch, lr)` pairs, epochs strictly increasing from 0.
    pub schedule: Vec<(usize, f64)>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pairs: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pairs(Vec::<(String, String)>::new()).expect("defaults are valid")
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> TrainError {
    TrainError::Config(format!("`{key} = {value}`: {why}"))
}

struct Reader<'a>(&'a BTreeMap<String, String>);

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).expect("every key has a default")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| bad(key, v, e))
    }

    fn float(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if !v.is_finite() {
            return Err(bad(key, self.raw(key), "must be finite"));
        }
        Ok(v)
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(bad(key, v, "expected true or false")),
        }
    }

    fn float_or(&self, key: &str, fallback: f64) -> Result<f64> {
        if self.raw(key).is_empty() {
            Ok(fallback)
        } else {
            self.float(key)
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| bad(key, v, e)))
        .collect()
}

fn parse_schedule(v: &str) -> Result<Vec<(usize, f64)>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (e, lr) = item
                .split_once(':')
                .ok_or_else(|| bad("schedule", v, "entries look like epoch:lr"))?;
            let e = e.trim().parse().map_err(|err| bad("schedule", v, err))?;
            let lr = lr.trim().parse().map_err(|err| bad("schedule", v, err))?;
            Ok((e, lr))
        })
        .collect()
}

impl RunConfig {
    /// Defaults overlaid with `pairs`; later pairs win.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self> {
        let mut map: BTreeMap<String, String> = KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in pairs {
            let k = k.as_ref().trim();
            if !map.contains_key(k) {
                return Err(TrainError::Config(format!("unknown key `{k}`")));
            }
            map.insert(k.to_string(), v.as_ref().trim().to_string());
        }
        Self::from_map(map)
    }

    /// Parses the `key = value` text format.
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(Self::parse_text(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// A copy with some keys replaced.
    pub fn with<K: AsRef<str>, V: AsRef<str>>(&self, pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self> {
        let merged: Vec<(String, String)> = self
            .pairs
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .chain(pairs.into_iter().map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string())))
            .collect();
        Self::from_pairs(merged)
    }

    /// Resolved key/value view, in key order.
    pub fn pairs(&self) -> &BTreeMap<String, String> {
        &self.pairs
    }

    pub fn to_text(&self) -> String {
        KEYS.iter().map(|(k, _)| format!("{k} = {}\n", self.pairs[*k])).collect()
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let r = Reader(&map);
        let data = match r.raw("dataset") {
            "two_moons" => DataSource::TwoMoons {
                samples: r.parse("samples")?,
                noise: r.float("noise")?,
            },
            "blobs" => DataSource::Blobs(BlobsConfig {
                classes: r.parse("classes")?,
                per_class: r.parse("per_class")?,
                dims: r.parse("dims")?,
                spread: r.float("spread")?,
                seed: r.parse("data_seed")?,
            }),
            "file" => DataSource::Files {
                train: r
                    .path("train_file")
                    .ok_or_else(|| TrainError::Config("dataset = file needs train_file".into()))?,
                test: r.path("test_file"),
            },
            other => return Err(bad("dataset", other, "expected two_moons, blobs or file")),
        };
        let projection: Projection = r.parse("projection")?;
        let hidden = parse_list("hidden", r.raw("hidden"))?;
        let epsilon = r.float("epsilon")?;
        let eta = r.float("eta")?;
        let train_attack = AttackConfig {
            epsilon,
            eta,
            steps: r.parse("steps")?,
            random_init: r.bool("random_init")?,
            loss: AttackLoss::CrossEntropy,
            clip: (0.0, 1.0),
        };
        let eval_attack = AttackConfig {
            epsilon: r.float_or("eval_epsilon", epsilon)?,
            eta: r.float_or("eval_eta", eta)?,
            steps: r.parse("eval_steps")?,
            ..train_attack
        };
        let weights = LossWeights {
            lambda_scl: r.float("lambda_scl")?,
            lambda_vat: r.float("lambda_vat")?,
            tau: r.float("tau")?,
            similarity: r.parse::<Similarity>("similarity")?,
        };
        let optimizer = match r.raw("optimizer") {
            "adam" => OptimizerConfig::Adam {
                beta1: r.float("beta1")?,
                beta2: r.float("beta2")?,
            },
            "sgd" => OptimizerConfig::Sgd {
                momentum: r.float("momentum")?,
                weight_decay: r.float("weight_decay")?,
            },
            other => return Err(bad("optimizer", other, "expected adam or sgd")),
        };
        let lr = r.float("lr")?;
        let mut schedule = parse_schedule(r.raw("schedule"))?;
        if schedule.is_empty() {
            schedule.push((0, lr));
        }
        let cfg = Self {
            data,
            data_seed: r.parse("data_seed")?,
            test_fraction: r.float("test_fraction")?,
            hidden,
            projection,
            train_attack,
            eval_attack,
            epoch_eval_steps: r.parse("epoch_eval_steps")?,
            eval_samples: r.parse("eval_samples")?,
            eval_attacks: parse_list("eval_attacks", r.raw("eval_attacks"))?,
            strategy: r.parse("strategy")?,
            weights,
            flags: LossFlags {
                nat_ce: r.bool("nat_ce")?,
                use_vat: r.bool("use_vat")?,
            },
            optimizer,
            schedule,
            epochs: r.parse("epochs")?,
            batch_size: r.parse("batch_size")?,
            seed: r.parse("seed")?,
            output_dir: r.path("output_dir"),
            pairs: map.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.schedule[0].0 != 0 || self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(TrainError::Config(
                "schedule epochs must start at 0 and strictly increase".into(),
            ));
        }
        if self.schedule.iter().any(|&(_, lr)| !(lr >= 0.0) || !lr.is_finite()) {
            return Err(TrainError::Config("learning rates must be finite and >= 0".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(TrainError::Config("hidden needs at least one positive width".into()));
        }
        self.train_attack.validate()?;
        self.eval_attack.validate()?;
        self.weights.validate()?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(TrainError::Config(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .rev()
            .find(|(e, _)| *e <= epoch)
            .map(|&(_, lr)| lr)
            .expect("schedule starts at epoch 0")
    }

    /// Train and test splits.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let full = match &self.data {
            DataSource::TwoMoons { samples, noise } => make_two_moons(*samples, *noise, self.data_seed)?,
            DataSource::Blobs(b) => make_blobs(b)?,
            DataSource::Files { train, test: Some(test) } => {
                return Ok((
                    load_dataset(train)?.with_split(Split::Train),
                    load_dataset(test)?.with_split(Split::Test),
                ));
            }
            DataSource::Files { train, test: None } => load_dataset(train)?,
        };
        Ok(full.train_test_split(self.test_fraction, self.data_seed)?)
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec::new(input_dim, self.hidden.clone(), num_classes).with_projection(self.projection)
    }
}
