use std::path::{Path, PathBuf};

use fusenet::trainer::TrainConfig;
use fusenet::{BackboneKind, BackboneSpec, Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};

use crate::args::{CommonArgs, TrainArgs};

/// Name of the resolved configuration echoed into every output directory.
pub const ECHO_FILE: &str = "run_config.json";

fn default_holdout() -> usize {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_holdout")]
    pub n_val: usize,
    #[serde(default = "default_holdout")]
    pub n_test: usize,
    #[serde(default)]
    pub stratified: bool,
    /// Per-image zero-mean, unit-variance scaling after dividing by 255.
    #[serde(default)]
    pub standardize: bool,
    /// Seed of the split shuffle.
    #[serde(default)]
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_val: default_holdout(),
            n_test: default_holdout(),
            stratified: false,
            standardize: false,
            seed: 0,
        }
    }
}

/// Every field is optional; absent fields take the library defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Starts from `--config` when given, then applies the shared flags.
    pub fn from_common(common: &CommonArgs) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(m) = &common.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(o) = &common.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }

    pub fn apply_train_flags(&mut self, args: &TrainArgs) -> Result<()> {
        if let Some(s) = &args.split {
            self.split = Some(s.clone());
        }
        if let Some(seed) = args.common.seed {
            self.train.seed = seed;
        }
        if let Some(e) = args.epochs {
            self.train.epochs = e;
        }
        if let Some(b) = args.batch_size {
            self.train.batch_size = b;
        }
        if let Some(lr) = args.lr {
            self.train.learning_rate = lr;
        }
        if let Some(c) = args.classes {
            self.model.class_count = c;
        }
        if let Some(names) = &args.backbones {
            self.model.backbones = select_backbones(&self.model.backbones, names)?;
        }
        if let Some(f) = args.feature_dim {
            self.model.set_feature_dim(f);
        }
        Ok(())
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        required(&self.manifest, "--manifest")
    }

    pub fn require_split(&self) -> Result<&Path> {
        required(&self.split, "--split")
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        required(&self.checkpoint, "--checkpoint")
    }

    pub fn require_out(&self) -> Result<&Path> {
        required(&self.out, "--out")
    }

    /// Creates the output directory and writes the resolved configuration into it.
    pub fn echo(&self) -> Result<PathBuf> {
        let out = self.require_out()?.to_path_buf();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let path = out.join(ECHO_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(out)
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match value {
        Some(p) => Ok(p),
        None => Err(Error::Usage(format!("{flag} is required (flag or config file)"))),
    }
}

/// Keeps the configured spec of each named kind, or a miniature matching the
/// existing input size and feature width when the kind was not configured.
fn select_backbones(current: &[BackboneSpec], names: &[String]) -> Result<Vec<BackboneSpec>> {
    let template = current.first().cloned();
    names
        .iter()
        .map(|name| {
            let kind: BackboneKind = name.trim().parse()?;
            Ok(match current.iter().find(|s| s.kind == kind) {
                Some(s) => s.clone(),
                None => {
                    let mut s = BackboneSpec::miniature(kind);
                    if let Some(t) = &template {
                        s = s.with_feature_dim(t.feature_dim).with_input_size(t.input_size[0], t.input_size[1]);
                    }
                    s
                }
            })
        })
        .collect()
}
