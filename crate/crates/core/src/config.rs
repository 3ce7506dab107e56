//! Experiment configuration, read from and written to TOML.
//!
//! ```toml
//! protocol = "mdgan"          # standalone | flgan | mdgan
//! seed = 1
//! workers = 10                # N
//! batch = 10                  # b
//! k = "log"                   # integer, or "log" for floor(log N)
//! log_base = "e"              # base used when k = "log": e | 2 | 10
//! epochs = 1                  # E
//! disc_steps = 1              # L
//! iterations = 10000          # I
//! checkpoint_stride = 1000
//! score_samples = 500
//! mode_threshold = 3.0        # in units of the ring's std
//!
//! [dataset]
//! kind = "ring"               # ring | checkerboard | idx
//! modes = 8
//! radius = 2.0
//! std = 0.05
//! samples_per_mode = 1000
//!
//! [crashes]
//! kind = "none"               # none | every | list (with crashes = [[worker, iteration], ...])
//!
//! [architecture]
//! noise_dim = 2
//! generator_hidden = [[64, "relu"], [64, "relu"]]
//! discriminator_hidden = [[64, "relu"], [64, "relu"]]
//! generator_adam = { lr = 2e-4, beta1 = 0.5, beta2 = 0.999, eps = 1e-8 }
//! discriminator_adam = { lr = 2e-4, beta1 = 0.5, beta2 = 0.999, eps = 1e-8 }
//! ```
//!
//! Every key except `protocol` and `dataset` has a default. `seed` may be
//! left out of the file when it is supplied on the command line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::CrashSchedule;
use crate::cost::ProtocolKind;
use crate::data::DatasetDescriptor;
use crate::error::{Error, Result};
use crate::gan::GanArchitecture;
use crate::metrics::{DEFAULT_SAMPLE_COUNT, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KRule {
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSetting {
    Fixed(usize),
    Rule(KRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[serde(rename = "e")]
    Natural,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
            LogBase::Ten => x.log10(),
        }
    }
}

/// `⌊log N⌋` in the given base, never below one.
pub fn k_from_log(workers: usize, base: LogBase) -> usize {
    (base.log(workers as f64).floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CrashConfig {
    #[default]
    None,
    /// Worker `n` crashes at iteration `n·I/N`.
    Every,
    List { crashes: Vec<(usize, u64)> },
}

fn default_seed() -> u64 {
    0
}
fn default_one() -> usize {
    1
}
fn default_batch() -> usize {
    10
}
fn default_k() -> KSetting {
    KSetting::Fixed(1)
}
fn default_base() -> LogBase {
    LogBase::Natural
}
fn default_iterations() -> u64 {
    1000
}
fn default_stride() -> u64 {
    1000
}
fn default_samples() -> usize {
    DEFAULT_SAMPLE_COUNT
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: ProtocolKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_k")]
    pub k: KSetting,
    #[serde(default = "default_base")]
    pub log_base: LogBase,
    #[serde(default = "default_one")]
    pub epochs: usize,
    #[serde(default = "default_one")]
    pub disc_steps: usize,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_stride")]
    pub checkpoint_stride: u64,
    #[serde(default = "default_samples")]
    pub score_samples: usize,
    #[serde(default = "default_threshold")]
    pub mode_threshold: f64,
    pub dataset: DatasetDescriptor,
    #[serde(default)]
    pub crashes: CrashConfig,
    #[serde(default)]
    pub architecture: GanArchitecture,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Batch-set size after applying the `"log"` rule.
    pub fn resolved_k(&self) -> usize {
        match self.k {
            KSetting::Fixed(k) => k,
            KSetting::Rule(KRule::Log) => k_from_log(self.workers, self.log_base),
        }
    }

    pub fn crash_schedule(&self) -> Result<CrashSchedule> {
        match &self.crashes {
            CrashConfig::None => Ok(CrashSchedule::default()),
            CrashConfig::Every => Ok(CrashSchedule::every(self.iterations, self.workers)),
            CrashConfig::List { crashes } => CrashSchedule::new(crashes.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("workers", self.workers),
            ("batch", self.batch),
            ("epochs", self.epochs),
            ("disc_steps", self.disc_steps),
            ("architecture.noise_dim", self.architecture.noise_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let k = self.resolved_k();
        if k == 0 || k > self.workers {
            return Err(Error::Config(format!("k={k} must lie in 1..={}", self.workers)));
        }
        if self.score_samples < 2 {
            return Err(Error::Config("score_samples must be at least 2".into()));
        }
        if self.mode_threshold.is_nan() || self.mode_threshold <= 0.0 {
            return Err(Error::Config("mode_threshold must be positive".into()));
        }
        if self.protocol == ProtocolKind::Standalone && !matches!(self.crashes, CrashConfig::None) {
            return Err(Error::Config("the standalone baseline has no workers to crash".into()));
        }
        for adam in [&self.architecture.generator_adam, &self.architecture.discriminator_adam] {
            if adam.lr.is_nan() || adam.lr < 0.0 || !(0.0..1.0).contains(&adam.beta1) || !(0.0..1.0).contains(&adam.beta2) || adam.eps.is_nan() || adam.eps <= 0.0 {
                return Err(Error::Config("adam settings out of range".into()));
            }
        }
        let schedule = self.crash_schedule()?;
        if let Some((w, _)) = schedule.crashes.iter().find(|(w, _)| *w == 0 || *w > self.workers) {
            return Err(Error::Config(format!("crash schedule names unknown worker {w}")));
        }
        Ok(())
    }

    /// Copy with `k` replaced by its resolved value and crashes expanded.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        out.k = KSetting::Fixed(self.resolved_k());
        if !matches!(self.crashes, CrashConfig::None) {
            out.crashes = CrashConfig::List { crashes: self.crash_schedule()?.crashes };
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
protocol = "mdgan"
seed = 7
workers = 10
k = "log"

[dataset]
kind = "ring"
modes = 8
radius = 2.0
std = 0.05
samples_per_mode = 100
"#;

    #[test]
    fn log_rule_uses_natural_log_by_default() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.resolved_k(), 2);
        c.validate().unwrap();
        assert_eq!(k_from_log(10, LogBase::Two), 3);
        assert_eq!(k_from_log(10, LogBase::Ten), 1);
        assert_eq!(k_from_log(1, LogBase::Natural), 1);
    }

    #[test]
    fn resolved_round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap().resolved().unwrap();
        assert_eq!(c.k, KSetting::Fixed(2));
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.k = KSetting::Fixed(11);
        assert!(c.validate().is_err());
        c.k = KSetting::Fixed(1);
        c.crashes = CrashConfig::List { crashes: vec![(11, 5)] };
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("protocol = \"gossip\"").is_err());
        assert!(ExperimentConfig::from_toml(&format!("bogus = 1\n{MINIMAL}")).is_err());
    }

    #[test]
    fn crash_every() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.workers = 5;
        c.iterations = 50;
        c.crashes = CrashConfig::Every;
        assert_eq!(c.crash_schedule().unwrap().crashes, vec![(1, 10), (2, 20), (3, 30), (4, 40), (5, 50)]);
    }
}
