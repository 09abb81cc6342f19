//! Run configuration files.
//!
//! A config is a TOML document with the sections `env`, `archive`, `ppo`,
//! `qd`, `reward_model`, `bonus`, `demos`, `output` and `seeds`. Every section
//! and every key is optional; omitted values take the defaults listed in
//! `docs/config.md`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::ArchiveConfig;
use crate::demos::{default_demos, DemoSet};
use crate::driver::QdConfig;
use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::reward::{BonusParams, RewardConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn expand(&self, k: usize) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone(); k],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: String,
    pub horizon: usize,
    /// Parallel episodes per rollout.
    pub batch: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { kind: EnvKind::PointFlyer.name().into(), horizon: 100, batch: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchiveSection {
    pub cells_per_dim: OneOrMany<usize>,
    pub lo: OneOrMany<f64>,
    pub hi: OneOrMany<f64>,
    pub alpha: f64,
    pub threshold_init: f64,
    pub qd_floor: f64,
}

impl Default for ArchiveSection {
    fn default() -> Self {
        ArchiveSection {
            cells_per_dim: OneOrMany::One(25),
            lo: OneOrMany::One(0.0),
            hi: OneOrMany::One(1.0),
            alpha: 0.1,
            threshold_init: 0.0,
            qd_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QdSection {
    pub iterations: usize,
    pub n1: usize,
    pub n2: usize,
    pub lambda: usize,
    pub sigma_g: f64,
}

impl Default for QdSection {
    fn default() -> Self {
        QdSection { iterations: 300, n1: 10, n2: 10, lambda: 8, sigma_g: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSection {
    /// Demonstration file; generated from the scripted experts when absent.
    pub path: Option<PathBuf>,
    pub count: usize,
    /// Drop actions from generated demonstrations.
    pub observation_only: bool,
}

impl Default for DemoSection {
    fn default() -> Self {
        DemoSection { path: None, count: 4, observation_only: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub heatmap: bool,
    /// Record elapsed seconds in the metrics CSV. Off by default so that
    /// repeated runs produce identical files.
    pub wall_clock: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs"), heatmap: true, wall_clock: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub base: u64,
}

/// The parsed file, with defaults filled in. Serializing it gives the config
/// echo written next to run outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvSection,
    pub archive: ArchiveSection,
    pub ppo: PpoConfig,
    pub qd: QdSection,
    pub reward_model: RewardConfig,
    pub bonus: BonusParams,
    pub demos: DemoSection,
    pub output: OutputSection,
    pub seeds: SeedSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Parses and validates `text`; `origin` only labels errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            Error::Parse { path: origin.to_path_buf(), line, msg: e.message().trim().to_string() }
        })?;
        if let Err((section, key, msg)) = cfg.check() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: key_line(text, section, key).unwrap_or(0),
                msg: format!("{section}.{key}: {msg}"),
            });
        }
        Ok(cfg)
    }

    fn check(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        fn need(ok: bool, section: &'static str, key: &'static str, msg: String) -> std::result::Result<(), (&'static str, &'static str, String)> {
            if ok { Ok(()) } else { Err((section, key, msg)) }
        }
        let kind = EnvKind::from_name(&self.env.kind).map_err(|e| ("env", "kind", e.to_string()))?;
        need(self.env.horizon >= 1, "env", "horizon", "must be at least 1".into())?;
        need(self.env.batch >= 1, "env", "batch", "must be at least 1".into())?;

        let a = &self.archive;
        let k = kind.measure_dim();
        need((0.0..=1.0).contains(&a.alpha), "archive", "alpha", format!("must lie in [0, 1], got {}", a.alpha))?;
        need(a.threshold_init.is_finite(), "archive", "threshold_init", "must be finite".into())?;
        need(a.qd_floor.is_finite(), "archive", "qd_floor", "must be finite".into())?;
        let cells = a.cells_per_dim.expand(k);
        need(cells.len() == k, "archive", "cells_per_dim", format!("needs {k} entries for {}", kind.name()))?;
        need(cells.iter().all(|&c| c >= 1), "archive", "cells_per_dim", "entries must be at least 1".into())?;
        let (lo, hi) = (a.lo.expand(k), a.hi.expand(k));
        need(lo.len() == k, "archive", "lo", format!("needs {k} entries"))?;
        need(hi.len() == k, "archive", "hi", format!("needs {k} entries"))?;
        need(lo.iter().zip(&hi).all(|(l, h)| l < h), "archive", "hi", "must exceed lo in every dimension".into())?;

        let p = &self.ppo;
        need(p.clip > 0.0, "ppo", "clip", format!("must be positive, got {}", p.clip))?;
        need(p.epochs >= 1, "ppo", "epochs", "must be at least 1".into())?;
        need(p.minibatches >= 1, "ppo", "minibatches", "must be at least 1".into())?;
        need(p.gamma > 0.0 && p.gamma <= 1.0, "ppo", "gamma", format!("must lie in (0, 1], got {}", p.gamma))?;
        need((0.0..=1.0).contains(&p.gae_lambda), "ppo", "gae_lambda", format!("must lie in [0, 1], got {}", p.gae_lambda))?;
        need(p.lr >= 0.0 && p.lr.is_finite(), "ppo", "lr", format!("must be nonnegative, got {}", p.lr))?;
        need(p.ent_coef >= 0.0, "ppo", "ent_coef", "must be nonnegative".into())?;
        need(p.vf_coef >= 0.0, "ppo", "vf_coef", "must be nonnegative".into())?;
        need(p.max_grad_norm >= 0.0, "ppo", "max_grad_norm", "must be nonnegative".into())?;
        need(!p.hidden.contains(&0), "ppo", "hidden", "sizes must be positive".into())?;

        let q = &self.qd;
        need(q.iterations >= 1, "qd", "iterations", "must be at least 1".into())?;
        need(q.lambda >= 2, "qd", "lambda", format!("must be at least 2, got {}", q.lambda))?;
        need(q.sigma_g > 0.0 && q.sigma_g.is_finite(), "qd", "sigma_g", format!("must be positive, got {}", q.sigma_g))?;

        let r = &self.reward_model;
        need(r.lr >= 0.0 && r.lr.is_finite(), "reward_model", "lr", format!("must be nonnegative, got {}", r.lr))?;
        need(!r.hidden.contains(&0), "reward_model", "hidden", "sizes must be positive".into())?;
        need(r.minibatch >= 1, "reward_model", "minibatch", "must be at least 1".into())?;
        need(r.epochs >= 1, "reward_model", "epochs", "must be at least 1".into())?;
        need(r.latent_dim >= 1, "reward_model", "latent_dim", "must be at least 1".into())?;
        need(r.info_constraint >= 0.0, "reward_model", "info_constraint", "must be nonnegative".into())?;
        need(r.beta_lr >= 0.0, "reward_model", "beta_lr", "must be nonnegative".into())?;
        need(r.beta_init >= 0.0, "reward_model", "beta_init", "must be nonnegative".into())?;

        need(self.bonus.p >= 0.0 && self.bonus.p.is_finite(), "bonus", "p", format!("must be nonnegative, got {}", self.bonus.p))?;
        need(self.bonus.q >= 0.0 && self.bonus.q.is_finite(), "bonus", "q", format!("must be nonnegative, got {}", self.bonus.q))?;
        need(self.demos.count >= 1, "demos", "count", "must be at least 1".into())?;
        Ok(())
    }

    pub fn env_kind(&self) -> EnvKind {
        EnvKind::from_name(&self.env.kind).expect("validated at parse time")
    }

    /// Driver configuration for the given base seed.
    pub fn qd_config(&self, seed: u64) -> Result<QdConfig> {
        let kind = self.env_kind();
        let k = kind.measure_dim();
        let a = &self.archive;
        let cfg = QdConfig {
            env: EnvSpec::new(kind, self.env.horizon, self.env.batch)?,
            archive: ArchiveConfig {
                lo: a.lo.expand(k),
                hi: a.hi.expand(k),
                cells_per_dim: a.cells_per_dim.expand(k),
                alpha: a.alpha,
                threshold_init: a.threshold_init,
                qd_floor: a.qd_floor,
            },
            ppo: self.ppo.clone(),
            reward: self.reward_model.clone(),
            bonus: self.bonus,
            iterations: self.qd.iterations,
            n1: self.qd.n1,
            n2: self.qd.n2,
            lambda: self.qd.lambda,
            sigma_g: self.qd.sigma_g,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `demos.path`, or generates `demos.count` scripted demonstrations.
    pub fn demos(&self) -> Result<DemoSet> {
        let kind = self.env_kind();
        let set = match &self.demos.path {
            Some(p) => {
                let set = DemoSet::load(p)?;
                if set.env_kind()? != kind {
                    return Err(Error::Config(format!(
                        "{} holds {} demonstrations but env.kind is {}",
                        p.display(),
                        set.header.env,
                        kind.name()
                    )));
                }
                set
            }
            None => default_demos(kind, self.env.horizon, self.demos.count)?,
        };
        Ok(if self.demos.observation_only { set.without_actions() } else { set })
    }

    /// The fully resolved document, defaults included.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]`, by a plain scan of the source.
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
