//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cckd_core::adversarial::DEFAULT_MAX_ITERS;
use cckd_core::{Algorithm, Architecture, DistillPlan, Error, Regime, Result, Role};
use sha2::{Digest, Sha256};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// IDX image/label pairs; each path may be gzip-compressed.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Gaussian blobs; the test split uses `seed + 1`.
    Synth {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: Option<String>,
    pub regime: Regime,
    pub tau: f64,
    pub balance_lambda: f64,
    pub alpha: f64,
    /// `None` picks the regime's default.
    pub learning_rate: Option<f64>,
    pub optimizer: Algorithm,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight initialisation seed; defaults to `seed`.
    pub init_seed: Option<u64>,
    pub arch: Architecture,
    pub teacher_arch: Architecture,
    pub role: Role,
    pub data: Option<DataSource>,
    pub limit: Option<usize>,
    pub out_dir: PathBuf,
    pub teacher_checkpoint: Option<PathBuf>,
    pub source_checkpoint: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub adversarial_set: Option<PathBuf>,
    pub epsilon: f64,
    pub max_iters: usize,
    pub attack_samples: usize,
    pub records: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plan = DistillPlan::new(Regime::Separate);
        Self {
            name: None,
            regime: Regime::Separate,
            tau: plan.tau,
            balance_lambda: plan.balance_lambda,
            alpha: plan.alpha,
            learning_rate: None,
            optimizer: plan.optimizer,
            epochs: plan.epochs,
            batch_size: plan.batch_size,
            seed: 0,
            init_seed: None,
            arch: Architecture::Lenet5,
            teacher_arch: Architecture::Lenet5,
            role: Role::Teacher,
            data: None,
            limit: None,
            out_dir: PathBuf::from("out"),
            teacher_checkpoint: None,
            source_checkpoint: None,
            checkpoints: Vec::new(),
            adversarial_set: None,
            epsilon: 0.15,
            max_iters: DEFAULT_MAX_ITERS,
            attack_samples: 1000,
            records: Vec::new(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "name",
    "regime",
    "tau",
    "balance_lambda",
    "alpha",
    "learning_rate",
    "optimizer",
    "epochs",
    "batch_size",
    "seed",
    "init_seed",
    "arch",
    "teacher_arch",
    "role",
    "data",
    "data_dir",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "synth_classes",
    "synth_dim",
    "synth_per_class",
    "synth_spread",
    "synth_seed",
    "limit",
    "out_dir",
    "teacher_checkpoint",
    "source_checkpoint",
    "checkpoints",
    "adversarial_set",
    "epsilon",
    "max_iters",
    "attack_samples",
    "records",
];

fn value<T>(key: &str, raw: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::Config(format!("key `{key}`: cannot parse {raw:?}: {e}")))
}

fn list(raw: &str) -> Vec<PathBuf> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect()
}

/// Splits config text into `(line number, key, value)` entries.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        if v.is_empty() {
            return Err(Error::Config(format!("line {}: key `{k}` has no value", i + 1)));
        }
        if !seen.insert(k.to_owned()) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
        out.push((i + 1, k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

#[derive(Default)]
struct DataKeys {
    kind: Option<String>,
    dir: Option<PathBuf>,
    paths: [Option<PathBuf>; 4],
    classes: Option<usize>,
    dim: Option<usize>,
    per_class: Option<usize>,
    spread: Option<f64>,
    seed: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut d = DataKeys::default();
        for (_, k, v) in parse_entries(text)? {
            let v = v.as_str();
            match k.as_str() {
                "name" => cfg.name = Some(v.to_owned()),
                "regime" => cfg.regime = value(&k, v)?,
                "tau" => cfg.tau = value(&k, v)?,
                "balance_lambda" => cfg.balance_lambda = value(&k, v)?,
                "alpha" => cfg.alpha = value(&k, v)?,
                "learning_rate" => cfg.learning_rate = Some(value(&k, v)?),
                "optimizer" => cfg.optimizer = value(&k, v)?,
                "epochs" => cfg.epochs = value(&k, v)?,
                "batch_size" => cfg.batch_size = value(&k, v)?,
                "seed" => cfg.seed = value(&k, v)?,
                "init_seed" => cfg.init_seed = Some(value(&k, v)?),
                "arch" => cfg.arch = value(&k, v)?,
                "teacher_arch" => cfg.teacher_arch = value(&k, v)?,
                "role" => {
                    cfg.role = Role::parse(v)
                        .ok_or_else(|| Error::Config(format!("key `role`: unknown role {v:?}")))?
                }
                "data" => d.kind = Some(v.to_owned()),
                "data_dir" => d.dir = Some(v.into()),
                "train_images" => d.paths[0] = Some(v.into()),
                "train_labels" => d.paths[1] = Some(v.into()),
                "test_images" => d.paths[2] = Some(v.into()),
                "test_labels" => d.paths[3] = Some(v.into()),
                "synth_classes" => d.classes = Some(value(&k, v)?),
                "synth_dim" => d.dim = Some(value(&k, v)?),
                "synth_per_class" => d.per_class = Some(value(&k, v)?),
                "synth_spread" => d.spread = Some(value(&k, v)?),
                "synth_seed" => d.seed = Some(value(&k, v)?),
                "limit" => cfg.limit = Some(value(&k, v)?),
                "out_dir" => cfg.out_dir = v.into(),
                "teacher_checkpoint" => cfg.teacher_checkpoint = Some(v.into()),
                "source_checkpoint" => cfg.source_checkpoint = Some(v.into()),
                "checkpoints" => cfg.checkpoints = list(v),
                "adversarial_set" => cfg.adversarial_set = Some(v.into()),
                "epsilon" => cfg.epsilon = value(&k, v)?,
                "max_iters" => cfg.max_iters = value(&k, v)?,
                "attack_samples" => cfg.attack_samples = value(&k, v)?,
                "records" => cfg.records = list(v),
                other => unreachable!("key {other} is listed but not handled"),
            }
        }
        cfg.data = resolve_data(d)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.regime.default_learning_rate())
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }

    pub fn plan(&self) -> DistillPlan {
        DistillPlan {
            regime: self.regime,
            tau: self.tau,
            balance_lambda: self.balance_lambda,
            alpha: self.alpha,
            learning_rate: self.learning_rate(),
            optimizer: self.optimizer,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// Every field in canonical `key = value` form; optional fields that are
    /// unset are omitted. Feeding the text back to [`RunConfig::parse`]
    /// reproduces `self`.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_owned(), v));
        let path = |p: &Path| p.display().to_string();
        let join = |ps: &[PathBuf]| ps.iter().map(|p| path(p)).collect::<Vec<_>>().join(",");
        if let Some(n) = &self.name {
            put("name", n.clone());
        }
        put("regime", self.regime.to_string());
        put("tau", self.tau.to_string());
        put("balance_lambda", self.balance_lambda.to_string());
        put("alpha", self.alpha.to_string());
        put("learning_rate", self.learning_rate().to_string());
        put("optimizer", self.optimizer.as_str().to_owned());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("init_seed", self.init_seed().to_string());
        put("arch", self.arch.to_string());
        put("teacher_arch", self.teacher_arch.to_string());
        put("role", self.role.as_str().to_owned());
        match &self.data {
            None => {}
            Some(DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            }) => {
                put("data", "idx".into());
                put("train_images", path(train_images));
                put("train_labels", path(train_labels));
                put("test_images", path(test_images));
                put("test_labels", path(test_labels));
            }
            Some(DataSource::Synth {
                classes,
                dim,
                per_class,
                spread,
                seed,
            }) => {
                put("data", "synth".into());
                put("synth_classes", classes.to_string());
                put("synth_dim", dim.to_string());
                put("synth_per_class", per_class.to_string());
                put("synth_spread", spread.to_string());
                put("synth_seed", seed.to_string());
            }
        }
        if let Some(l) = self.limit {
            put("limit", l.to_string());
        }
        put("out_dir", path(&self.out_dir));
        if let Some(p) = &self.teacher_checkpoint {
            put("teacher_checkpoint", path(p));
        }
        if let Some(p) = &self.source_checkpoint {
            put("source_checkpoint", path(p));
        }
        if !self.checkpoints.is_empty() {
            put("checkpoints", join(&self.checkpoints));
        }
        if let Some(p) = &self.adversarial_set {
            put("adversarial_set", path(p));
        }
        put("epsilon", self.epsilon.to_string());
        put("max_iters", self.max_iters.to_string());
        put("attack_samples", self.attack_samples.to_string());
        if !self.records.is_empty() {
            put("records", join(&self.records));
        }
        out
    }

    pub fn echo_text(&self) -> String {
        self.echo()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`RunConfig::echo_text`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.echo_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn resolve_data(d: DataKeys) -> Result<Option<DataSource>> {
    let has_idx = d.dir.is_some() || d.paths.iter().any(Option::is_some);
    let has_synth = d.classes.is_some()
        || d.dim.is_some()
        || d.per_class.is_some()
        || d.spread.is_some()
        || d.seed.is_some();
    let kind = match d.kind.as_deref() {
        Some(k) => k.to_owned(),
        None if has_idx => "idx".to_owned(),
        None if has_synth => "synth".to_owned(),
        None => return Ok(None),
    };
    match kind.as_str() {
        "idx" | "mnist" => {
            if has_synth {
                return Err(Error::Config("synth_* keys given with `data = idx`".into()));
            }
            const STEMS: [&str; 4] = [
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            ];
            const KEYS: [&str; 4] = ["train_images", "train_labels", "test_images", "test_labels"];
            let mut paths = Vec::with_capacity(4);
            for i in 0..4 {
                let p = match (&d.paths[i], &d.dir) {
                    (Some(p), _) => p.clone(),
                    (None, Some(dir)) => {
                        let plain = dir.join(STEMS[i]);
                        let gz = dir.join(format!("{}.gz", STEMS[i]));
                        if !plain.exists() && gz.exists() {
                            gz
                        } else {
                            plain
                        }
                    }
                    (None, None) => {
                        return Err(Error::Config(format!(
                            "dataset path missing: set `{}` or `data_dir`",
                            KEYS[i]
                        )))
                    }
                };
                paths.push(p);
            }
            let [a, b, c, e]: [PathBuf; 4] = paths.try_into().expect("four paths");
            Ok(Some(DataSource::Idx {
                train_images: a,
                train_labels: b,
                test_images: c,
                test_labels: e,
            }))
        }
        "synth" => {
            if has_idx {
                return Err(Error::Config("IDX path keys given with `data = synth`".into()));
            }
            Ok(Some(DataSource::Synth {
                classes: d.classes.unwrap_or(3),
                dim: d.dim.unwrap_or(2),
                per_class: d.per_class.unwrap_or(100),
                spread: d.spread.unwrap_or(0.1),
                seed: d.seed.unwrap_or(0),
            }))
        }
        other => Err(Error::Config(format!(
            "key `data`: expected `idx` or `synth`, got {other:?}"
        ))),
    }
}
