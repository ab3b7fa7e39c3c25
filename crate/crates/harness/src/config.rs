//! Run configuration: one TOML file with nested sections describes a whole
//! sweep. Every `depthlab` flag maps onto exactly one key here and flags win
//! over the file, so a manifest's config echo plus the binary version pins a
//! run completely.

use std::path::{Path, PathBuf};

use entrywise_optim::UpdateRule;
use parametrization::{depth_mup_preset, Parametrization, RuleKind};
use resnet_sim::{Loss, NetConfig, Phi, Placement};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Which engine executes each sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Finite-width network trained with the configured rule.
    Train,
    /// Deterministic infinite-width linear program.
    LimitLinear,
    /// Deterministic infinite-width nonlinear program at `alpha = gamma = 1/2`.
    LimitNonlinear,
}

/// Target family of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// `y = w* . xi + 0.1 eps` with `w*` drawn once from the dataset seed.
    Regression,
    /// Two seeded Gaussian blobs with labels 0 and 1.
    Classification,
}

/// Where training data comes from. `source = "synthetic"` draws a fixed
/// dataset from a seed; `source = "idx"` reads idx-format image and label
/// files from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic {
        d_in: usize,
        task: Task,
        /// Number of samples; batches cycle through them in order.
        size: usize,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Normalization applied after the raw `[0, 1]` pixel scaling:
        /// `(x - mean) / std`.
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        std: f64,
        /// Seed of the random projection used when the experiment needs
        /// scalar inputs. Echoed in the manifest via the config.
        #[serde(default)]
        projection_seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

impl DatasetSpec {
    pub fn task(&self) -> Task {
        match self {
            DatasetSpec::Synthetic { task, .. } => *task,
            DatasetSpec::Idx { .. } => Task::Classification,
        }
    }
}

/// Architecture fields that do not depend on the sweep grids. Depth comes
/// from the depth grid and the data dimensions come from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    /// Width.
    pub n: usize,
    /// Layers per residual block.
    pub k: usize,
    pub phi: Phi,
    pub placement: Placement,
    pub mean_subtraction: bool,
    pub pre_layernorm: bool,
    pub train_io: bool,
    pub loss: Loss,
}

impl Default for NetSettings {
    fn default() -> Self {
        NetSettings {
            n: 256,
            k: 1,
            phi: Phi::Relu,
            placement: Placement::Post,
            mean_subtraction: true,
            pre_layernorm: false,
            train_io: true,
            loss: Loss::Squared,
        }
    }
}

impl NetSettings {
    pub fn to_net_config(&self, l: usize, d_in: usize, d_out: usize) -> NetConfig {
        NetConfig {
            d_in,
            d_out,
            n: self.n,
            l,
            k: self.k,
            phi: self.phi,
            placement: self.placement,
            mean_subtraction: self.mean_subtraction,
            pre_layernorm: self.pre_layernorm,
            train_io: self.train_io,
            loss: self.loss,
        }
    }
}

/// Update rule selector. The beta/epsilon fields override the rule's
/// standard constants only when present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub kind: RuleKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings { kind: RuleKind::Adam, beta1: None, beta2: None, epsilon: None }
    }
}

impl OptimizerSettings {
    pub fn rule(&self) -> UpdateRule {
        let mut rule = match self.kind {
            RuleKind::Sgd => UpdateRule::sgd(),
            RuleKind::SignSgd => UpdateRule::sign_sgd(),
            RuleKind::Adam => UpdateRule::adam(),
        };
        if let Some(b) = self.beta1 {
            rule.beta1 = b;
        }
        if let Some(b) = self.beta2 {
            rule.beta2 = b;
        }
        if let Some(e) = self.epsilon {
            rule.epsilon = e;
        }
        rule
    }
}

/// Complete description of one sweep: the grids, the engine, the
/// parametrization, and the data. Serializes to a TOML file whose top level
/// holds the grids and whose sections are `[parametrization]`, `[net]`,
/// `[optimizer]` and `[dataset]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: ExperimentKind,
    pub depths: Vec<usize>,
    /// Raw learning rates, strictly increasing.
    pub lrs: Vec<f64>,
    /// Branch multiplier constants, strictly increasing.
    pub a_grid: Vec<f64>,
    /// Seeds per cell; seed indices run `0..seeds`.
    pub seeds: usize,
    pub steps: usize,
    pub batch_size: usize,
    /// Final fraction of steps whose losses are averaged into the cell
    /// statistic, in `(0, 1]`.
    pub slice_frac: f64,
    pub master_seed: u64,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
    pub parametrization: Parametrization,
    pub net: NetSettings,
    pub optimizer: OptimizerSettings,
    pub dataset: DatasetSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kind: ExperimentKind::Train,
            depths: vec![8, 16, 32, 64, 128, 256],
            lrs: (-3..=3).map(|j: i32| 1e-3 * 2f64.powi(j)).collect(),
            a_grid: vec![1.0],
            seeds: 3,
            steps: 200,
            batch_size: 16,
            slice_frac: 0.1,
            master_seed: 0,
            threads: 0,
            parametrization: depth_mup_preset(RuleKind::Adam),
            net: NetSettings::default(),
            optimizer: OptimizerSettings::default(),
            dataset: DatasetSpec::Synthetic {
                d_in: 8,
                task: Task::Regression,
                size: 256,
                seed: 0,
            },
        }
    }
}

/// Values carried by command-line flags. Each present field replaces the
/// matching config key; a single `--depth` or `--lr` collapses its grid to
/// one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub depth: Option<usize>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub phi: Option<Phi>,
    pub block_depth: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: SweepConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(d) = o.depth {
            self.depths = vec![d];
        }
        if let Some(a) = o.alpha {
            self.parametrization.alpha = a;
        }
        if let Some(g) = o.gamma {
            self.parametrization.gamma = g;
        }
        if let Some(lr) = o.lr {
            self.lrs = vec![lr];
        }
        if let Some(s) = o.steps {
            self.steps = s;
        }
        if let Some(p) = o.phi {
            self.net.phi = p;
        }
        if let Some(k) = o.block_depth {
            self.net.k = k;
        }
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        fn grid_ok(name: &str, grid: &[f64]) -> Result<(), HarnessError> {
            if grid.is_empty() {
                return Err(HarnessError::Config(format!("{name} grid is empty")));
            }
            if grid.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(HarnessError::Config(format!(
                    "{name} grid entries must be finite and positive"
                )));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(HarnessError::Config(format!(
                    "{name} grid must be strictly increasing"
                )));
            }
            Ok(())
        }

        if self.depths.is_empty() {
            return Err(HarnessError::Config("depth grid is empty".into()));
        }
        if self.depths.iter().any(|d| *d == 0) {
            return Err(HarnessError::Config("depths must be >= 1".into()));
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Config("depth grid must be strictly increasing".into()));
        }
        grid_ok("lr", &self.lrs)?;
        grid_ok("a", &self.a_grid)?;
        if self.seeds == 0 {
            return Err(HarnessError::Config("seeds must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(HarnessError::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be >= 1".into()));
        }
        if !(self.slice_frac > 0.0 && self.slice_frac <= 1.0) {
            return Err(HarnessError::Config("slice_frac must lie in (0, 1]".into()));
        }
        self.parametrization
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.optimizer
            .rule()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.net.n == 0 || self.net.k == 0 {
            return Err(HarnessError::Config("net width and block depth must be >= 1".into()));
        }
        if self.net.placement == Placement::Pre && self.net.k != 1 {
            return Err(HarnessError::Config("pre placement requires block depth 1".into()));
        }
        match &self.dataset {
            DatasetSpec::Synthetic { d_in, size, .. } => {
                if *d_in == 0 || *size == 0 {
                    return Err(HarnessError::Config(
                        "synthetic dataset needs d_in >= 1 and size >= 1".into(),
                    ));
                }
            }
            DatasetSpec::Idx { std, .. } => {
                if !std.is_finite() || *std <= 0.0 {
                    return Err(HarnessError::Config(
                        "idx std must be finite and positive".into(),
                    ));
                }
            }
        }
        if self.kind != ExperimentKind::Train {
            if self.a_grid != [1.0] {
                return Err(HarnessError::Config(
                    "limit engines fix the branch constant at 1; set a_grid = [1.0]".into(),
                ));
            }
            if self.dataset.task() != Task::Regression {
                return Err(HarnessError::Config(
                    "limit engines need scalar regression targets".into(),
                ));
            }
        }
        if self.kind == ExperimentKind::LimitNonlinear {
            let p = &self.parametrization;
            if (p.alpha - 0.5).abs() > 1e-12 || (p.gamma - 0.5).abs() > 1e-12 {
                return Err(HarnessError::Config(
                    "the nonlinear limit is defined at alpha = gamma = 1/2".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let cfg = SweepConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = SweepConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = SweepConfig::from_toml_str("stepz = 3").unwrap_err();
        assert!(matches!(err, HarnessError::Toml(_)), "{err}");
    }

    #[test]
    fn nonlinear_limit_requires_centered_exponents() {
        let mut cfg = SweepConfig::default();
        cfg.kind = ExperimentKind::LimitNonlinear;
        cfg.dataset = DatasetSpec::Synthetic {
            d_in: 1,
            task: Task::Regression,
            size: 64,
            seed: 0,
        };
        cfg.validate().unwrap();
        cfg.parametrization.gamma = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn limit_kind_rejects_branch_grid() {
        let mut cfg = SweepConfig::default();
        cfg.kind = ExperimentKind::LimitLinear;
        cfg.dataset = DatasetSpec::Synthetic {
            d_in: 1,
            task: Task::Regression,
            size: 64,
            seed: 0,
        };
        cfg.a_grid = vec![0.5, 1.0];
        assert!(cfg.validate().is_err());
    }
}
