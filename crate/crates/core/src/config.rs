//! Experiment configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SplitPolicy;
use crate::hyper::{SigmaBounds, SIGMA_MAX, SIGMA_MIN};
use crate::pbt::PbtConfig;
use crate::synth::SyntheticSpec;
use crate::trainer::{HyperInit, Schedule, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rs,
    Hb,
    Pbt,
    St,
    Pst,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Rs, Method::Hb, Method::Pbt, Method::St, Method::Pst];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rs => "rs",
            Method::Hb => "hb",
            Method::Pbt => "pbt",
            Method::St => "st",
            Method::Pst => "pst",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Raw citation files, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cites: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Seed of the synthetic generator.
    #[serde(default = "one")]
    pub generator_seed: u64,
    #[serde(default)]
    pub split: SplitPolicy,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    128
}

/// Settings of the self-tuning trainer, shared by `st` and `pst`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTuningConfig {
    pub epochs: u64,
    pub lr_model: f64,
    pub lr_hyper: f64,
    pub lr_scale: f64,
    pub tau: f64,
    pub model_epochs: u64,
    pub hyper_epochs: u64,
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub init: HyperInit,
}

impl Default for SelfTuningConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: 400,
            lr_model: t.lr_model,
            lr_hyper: t.lr_hyper,
            lr_scale: t.lr_scale,
            tau: t.tau,
            model_epochs: t.schedule.model_epochs,
            hyper_epochs: t.schedule.hyper_epochs,
            sigma_init: 0.5,
            sigma_min: SIGMA_MIN,
            sigma_max: SIGMA_MAX,
            init: HyperInit::Uniform,
        }
    }
}

impl SelfTuningConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_model: self.lr_model,
            lr_hyper: self.lr_hyper,
            lr_scale: self.lr_scale,
            tau: self.tau,
            schedule: Schedule {
                model_epochs: self.model_epochs,
                hyper_epochs: self.hyper_epochs,
            },
            ..TrainConfig::default()
        }
    }

    pub fn bounds(&self) -> SigmaBounds {
        SigmaBounds {
            min: self.sigma_min,
            max: self.sigma_max,
        }
    }

    fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if !(0.0 < self.sigma_min && self.sigma_min <= self.sigma_max) {
            return Err(Error::Config(format!(
                "need 0 < sigma_min ({}) <= sigma_max ({})",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PstConfig {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: u64,
    #[serde(default = "one")]
    pub step_epochs: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Per-agent trainer settings (`[pst.train]`).
    #[serde(default)]
    pub train: SelfTuningConfig,
}

fn default_population() -> usize {
    20
}

fn default_warmup() -> u64 {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlainPbtConfig {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: u64,
    #[serde(default = "one")]
    pub step_epochs: u64,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    #[serde(default = "default_search_lr")]
    pub lr: f64,
    #[serde(default = "yes")]
    pub exploit: bool,
    #[serde(default = "yes")]
    pub explore: bool,
}

fn default_epochs() -> u64 {
    400
}

fn default_search_lr() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    #[serde(default = "default_search_lr")]
    pub lr: f64,
}

fn default_trials() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbConfig {
    #[serde(default = "default_epochs")]
    pub max_budget: u64,
    #[serde(default = "default_eta")]
    pub eta: u64,
    #[serde(default = "default_trials")]
    pub target_trials: usize,
    #[serde(default = "default_search_lr")]
    pub lr: f64,
}

fn default_eta() -> u64 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "one_worker")]
    pub workers: usize,
    #[serde(default = "yes")]
    pub deterministic: bool,
    /// Parent of the run directory, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rs: Option<RsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hb: Option<HbConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pbt: Option<PlainPbtConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub st: Option<SelfTuningConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pst: Option<PstConfig>,
}

fn one_worker() -> usize {
    1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.dataset.content);
        resolve(&mut cfg.dataset.cites);
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model.layers < 2 {
            return bad(format!("model.layers must be at least 2, got {}", self.model.layers));
        }
        if self.model.hidden == 0 || self.workers == 0 {
            return bad("model.hidden and workers must be positive".into());
        }
        let d = &self.dataset;
        match (&d.content, &d.cites, &d.synthetic) {
            (Some(c), Some(e), None) => {
                for p in [c, e] {
                    if !p.exists() {
                        return bad(format!("dataset file {} does not exist", p.display()));
                    }
                }
            }
            (None, None, Some(s)) => s.validate()?,
            _ => return bad("dataset needs either content + cites paths or a synthetic block".into()),
        }
        let present: Vec<Method> = [
            (Method::Rs, self.rs.is_some()),
            (Method::Hb, self.hb.is_some()),
            (Method::Pbt, self.pbt.is_some()),
            (Method::St, self.st.is_some()),
            (Method::Pst, self.pst.is_some()),
        ]
        .into_iter()
        .filter_map(|(m, p)| p.then_some(m))
        .collect();
        if present != [self.method] {
            let names: Vec<&str> = present.iter().map(|m| m.name()).collect();
            return bad(format!(
                "method `{}` needs exactly its own [{}] block, found [{}]",
                self.method.name(),
                self.method.name(),
                names.join(", ")
            ));
        }
        if let Some(st) = &self.st {
            st.validate()?;
        }
        if let Some(p) = &self.pst {
            p.train.validate()?;
            self.pst_config()?.validate()?;
            if p.population == 0 {
                return bad("pst.population must be positive".into());
            }
        }
        if let Some(p) = &self.pbt {
            if p.population < 3 {
                return bad(format!("pbt.population must be at least 3, got {}", p.population));
            }
            self.plain_pbt_config()?.validate()?;
        }
        if let Some(rs) = &self.rs {
            if rs.trials == 0 {
                return bad("rs.trials must be positive".into());
            }
        }
        if let Some(hb) = &self.hb {
            crate::search::hyperband_schedule(hb.max_budget, hb.eta)?;
        }
        if self.deterministic && self.seed.is_none() {
            return bad("deterministic runs need a seed".into());
        }
        Ok(())
    }

    pub fn pst_config(&self) -> Result<PbtConfig> {
        let p = self.pst.as_ref().ok_or_else(|| Error::Config("missing [pst] block".into()))?;
        Ok(PbtConfig {
            warmup_epochs: p.warmup_epochs,
            step_epochs: p.step_epochs,
            total_epochs: p.train.epochs,
            exploit: true,
            explore: true,
            checkpoint_every: p.checkpoint_every,
        })
    }

    pub fn plain_pbt_config(&self) -> Result<PbtConfig> {
        let p = self.pbt.as_ref().ok_or_else(|| Error::Config("missing [pbt] block".into()))?;
        Ok(PbtConfig {
            warmup_epochs: p.warmup_epochs,
            step_epochs: p.step_epochs,
            total_epochs: p.epochs,
            exploit: p.exploit,
            explore: p.explore,
            checkpoint_every: 0,
        })
    }
}
