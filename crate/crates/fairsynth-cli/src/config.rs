//! Experiment configuration: one TOML file per experiment, checked into
//! `configs/`, fully determining a run given its base seed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fairsynth::fairness::{DistortionRule, DistortionSpec, RuleCombine};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Adult,
    Compas,
    German,
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DatasetKind::Adult => "adult",
            DatasetKind::Compas => "compas",
            DatasetKind::German => "german",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    /// DP budgets to sweep; each cell also runs without privacy.
    pub epsilons: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FairnessMethod {
    #[default]
    None,
    Tot,
    Rw,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FairnessConfig {
    #[serde(default)]
    pub method: FairnessMethod,
    /// Discrimination bounds to sweep (transform method only).
    #[serde(default)]
    pub etas: Vec<f64>,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub c: Vec<f64>,
    #[serde(default)]
    pub rules: Vec<DistortionRule>,
    #[serde(default = "default_combine")]
    pub combine: RuleCombine,
    /// Protected attribute for reweighting; defaults to the schema's first
    /// protected attribute.
    #[serde(default)]
    pub rw_protected: Option<String>,
}

fn default_combine() -> RuleCombine {
    RuleCombine::Max
}

impl FairnessConfig {
    pub fn distortion(&self) -> DistortionSpec {
        DistortionSpec {
            rules: self.rules.clone(),
            combine: self.combine,
            thresholds: self.thresholds.clone(),
            c_bounds: self.c.clone(),
        }
    }

    /// The distortion spec with substituted c bounds (sensitivity sweeps).
    pub fn distortion_with_c(&self, c: &[f64]) -> DistortionSpec {
        DistortionSpec {
            rules: self.rules.clone(),
            combine: self.combine,
            thresholds: self.thresholds.clone(),
            c_bounds: c.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    pub epsilon: f64,
    pub etas: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub sizes: Vec<usize>,
    pub feature_sets: Vec<Vec<String>>,
    pub repeats: usize,
    pub epsilon: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetKind,
    pub csv_path: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub repeats: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub privacy: Option<PrivacyConfig>,
    #[serde(default)]
    pub fairness: FairnessConfig,
    #[serde(default)]
    pub sensitivity: Option<SensitivityConfig>,
    #[serde(default)]
    pub timing: Option<TimingConfig>,
}

fn default_train_fraction() -> f64 {
    0.75
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            bail!("repeats must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction must be in (0, 1)");
        }
        if let Some(p) = &self.privacy {
            if p.epsilons.is_empty() {
                bail!("privacy.epsilons must not be empty");
            }
            if p.epsilons.iter().any(|e| !(*e > 0.0)) {
                bail!("every epsilon must be positive");
            }
            if !(p.delta > 0.0 && p.delta < 1.0) {
                bail!("delta must lie in (0, 1)");
            }
            if self.dataset == DatasetKind::German {
                bail!("the german pipeline runs reweighting on the original encoding only; drop [privacy]");
            }
        }
        match self.fairness.method {
            FairnessMethod::Tot => {
                if self.fairness.etas.is_empty() {
                    bail!("fairness.etas must not be empty for the transform method");
                }
                if self.fairness.etas.iter().any(|e| !(*e >= 0.0)) {
                    bail!("every eta must be nonnegative");
                }
                if self.fairness.rules.is_empty() {
                    bail!("the transform method needs distortion rules");
                }
                if self.fairness.thresholds.len() != self.fairness.c.len() {
                    bail!("fairness.thresholds and fairness.c must have equal length");
                }
                if self.fairness.c.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    bail!("every c bound must lie in [0, 1]");
                }
            }
            FairnessMethod::Rw | FairnessMethod::None => {}
        }
        if let Some(s) = &self.sensitivity {
            if !(s.epsilon > 0.0) {
                bail!("sensitivity.epsilon must be positive");
            }
            if s.c1.is_empty() || s.c2.is_empty() || s.c3.is_empty() || s.etas.is_empty() {
                bail!("sensitivity grids must not be empty");
            }
        }
        if let Some(t) = &self.timing {
            if t.sizes.is_empty() || t.feature_sets.is_empty() || t.repeats == 0 {
                bail!("timing needs sizes, feature_sets, and at least one repeat");
            }
        }
        Ok(())
    }
}
