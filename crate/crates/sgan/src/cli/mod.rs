//! Experiment runner: configuration schema, seed management, run
//! orchestration and artifact emission.

pub mod checkpoint;
pub mod runner;
pub mod seeds;
pub mod sweep;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetKind, DatasetSpec};
use crate::ensemble::{GradAggregate, RunMode, SganConfig};
use crate::nn::OptimizerKind;
use crate::objectives::{GLossVariant, ObjectiveKind, ObjectiveSpec};
use crate::{Result, SganError};

pub use seeds::{derive_seed, derive_seed_pair, SeedRole};

/// On-disk run configuration. Every key is optional with documented
/// defaults; unknown keys are rejected so sweep typos surface immediately.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    pub objective: ObjectiveSection,
    pub network: NetworkSection,
    pub optimizer: OptimizerSection,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub n: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub z_dim: usize,
    pub mode: RunMode,
    pub master_seed: u64,
    pub eval_every: u64,
    pub aggregate: GradAggregate,
    pub clone_messenger_opt_state: bool,
    pub parallel: bool,
    pub check_isolation: bool,
    pub shared_streams: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            n: 5,
            iterations: 1000,
            batch_size: 64,
            z_dim: 100,
            mode: RunMode::Full,
            master_seed: 0,
            eval_every: 10,
            aggregate: GradAggregate::Mean,
            clone_messenger_opt_state: true,
            parallel: false,
            check_isolation: false,
            shared_streams: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub m: usize,
    pub radius: f64,
    pub grid_extent: f64,
    /// Per-component standard deviation; when omitted the geometry default
    /// applies (0.02 for circle mixtures, 0.05 for grids).
    pub component_std: Option<f64>,
    pub swiss_noise: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: DatasetKind::GmmCircle,
            m: 8,
            radius: 2.0,
            grid_extent: 4.0,
            component_std: None,
            swiss_noise: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    /// Defaults to 10 for wgan_gp and dragan.
    pub penalty_coeff: Option<f64>,
    pub dragan_noise_scale: Option<f64>,
    /// Defaults to 1 for gan/dragan and 5 for wgan_gp.
    pub d_steps: Option<usize>,
    pub g_loss_variant: GLossVariant,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            kind: ObjectiveKind::Gan,
            penalty_coeff: None,
            dragan_noise_scale: None,
            d_steps: None,
            g_loss_variant: GLossVariant::NonSaturating,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub activation_slope: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden_units: 512,
            hidden_layers: 3,
            activation_slope: 0.01,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kind: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            kind: "adam".into(),
            lr: 1e-5,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.99,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub eval_samples: usize,
    pub kde_samples: usize,
    pub held_out_samples: usize,
    pub kde_enabled: bool,
    /// Mode-assignment radius; defaults to 3 * component_std.
    pub assignment_eps: Option<f64>,
    /// Coverage count threshold; 0 means max(1, floor(0.2 * B / M)).
    pub coverage_threshold: usize,
    pub bandwidth_grid_points: usize,
    /// Fraction of iterations discarded before curve sampling.
    pub burn_in_fraction: f64,
    /// Number of evenly spaced evaluation points after burn-in.
    pub curve_eval_points: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            eval_samples: 512,
            kde_samples: 500,
            held_out_samples: 256,
            kde_enabled: true,
            assignment_eps: None,
            coverage_threshold: 0,
            bandwidth_grid_points: 9,
            burn_in_fraction: 0.2,
            curve_eval_points: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Dump generator samples every this many iterations (0 = never).
    pub sample_dump_every: u64,
    pub grid_resolution: usize,
    /// Save a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            sample_dump_every: 0,
            grid_resolution: 64,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    /// Parse and validate a TOML config file. Unknown keys and type
    /// mismatches are reported with their location.
    pub fn from_file(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| SganError::Config(e.to_string()))?;
        config.resolve()?;
        Ok(config)
    }

    /// The dataset spec with geometry defaults applied.
    pub fn dataset_spec(&self) -> DatasetSpec {
        let d = &self.dataset;
        let default_std = match d.kind {
            DatasetKind::GmmCircle => 0.02,
            DatasetKind::GmmGrid => 0.05,
            DatasetKind::SwissRoll => 0.0,
        };
        DatasetSpec {
            kind: d.kind,
            m: d.m,
            radius: d.radius,
            grid_extent: d.grid_extent,
            component_std: d.component_std.unwrap_or(default_std),
            swiss_noise: d.swiss_noise,
        }
    }

    pub fn objective_spec(&self) -> ObjectiveSpec {
        let o = &self.objective;
        let (default_lambda, default_d_steps) = match o.kind {
            ObjectiveKind::Gan => (0.0, 1),
            ObjectiveKind::WganGp => (10.0, 5),
            ObjectiveKind::Dragan => (10.0, 1),
        };
        ObjectiveSpec {
            kind: o.kind,
            penalty_coeff: o.penalty_coeff.unwrap_or(default_lambda),
            dragan_noise_scale: o.dragan_noise_scale,
            d_steps: o.d_steps.unwrap_or(default_d_steps),
            g_loss_variant: o.g_loss_variant,
        }
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        match self.optimizer.kind.as_str() {
            "adam" => Ok(OptimizerKind::Adam {
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                eps: self.optimizer.eps,
            }),
            "rmsprop" => Ok(OptimizerKind::Rmsprop {
                decay: self.optimizer.decay,
                eps: self.optimizer.eps,
            }),
            other => Err(SganError::Config(format!(
                "unknown optimizer kind '{other}' (expected adam or rmsprop)"
            ))),
        }
    }

    /// Build the resolved training configuration.
    pub fn resolve(&self) -> Result<SganConfig> {
        let config = SganConfig {
            n: self.run.n,
            iterations: self.run.iterations,
            batch_size: self.run.batch_size,
            z_dim: self.run.z_dim,
            hidden_units: self.network.hidden_units,
            hidden_layers: self.network.hidden_layers,
            activation_slope: self.network.activation_slope,
            mode: self.run.mode,
            master_seed: self.run.master_seed,
            eval_every: self.run.eval_every,
            objective: self.objective_spec(),
            dataset: self.dataset_spec(),
            optimizer: self.optimizer_kind()?,
            lr: self.optimizer.lr,
            aggregate: self.run.aggregate,
            clone_messenger_opt_state: self.run.clone_messenger_opt_state,
            parallel: self.run.parallel,
            check_isolation: self.run.check_isolation,
            shared_streams: self.run.shared_streams,
        };
        config.validate()?;
        Ok(config)
    }

    /// Mode-assignment radius with the 3-sigma default.
    pub fn assignment_eps(&self) -> f64 {
        self.metrics
            .assignment_eps
            .unwrap_or_else(|| 3.0 * self.dataset_spec().component_std)
    }

    pub fn coverage_threshold(&self) -> usize {
        if self.metrics.coverage_threshold > 0 {
            self.metrics.coverage_threshold
        } else {
            crate::metrics::default_coverage_threshold(self.metrics.eval_samples, self.dataset.m.max(1))
        }
    }

    /// Echoed, fully resolved form written into the run directory.
    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hash binding checkpoints to the producing configuration. The
    /// iteration budget is excluded so a checkpointed run can be resumed
    /// with a larger one.
    pub fn config_hash(&self) -> [u8; 32] {
        let mut canonical = self.clone();
        canonical.run.iterations = 0;
        let mut h = Sha256::new();
        h.update(canonical.echo_toml().as_bytes());
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empty_config_uses_documented_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.run.n, 5);
        assert_eq!(c.run.iterations, 1000);
        assert_eq!(c.run.batch_size, 64);
        assert_eq!(c.run.z_dim, 100);
        assert_eq!(c.run.mode, RunMode::Full);
        assert_eq!(c.run.eval_every, 10);
        assert!(c.run.clone_messenger_opt_state);
        assert_eq!(c.dataset.kind, DatasetKind::GmmCircle);
        assert_eq!(c.dataset.m, 8);
        assert_abs_diff_eq!(c.dataset.radius, 2.0);
        assert_eq!(c.network.hidden_units, 512);
        assert_eq!(c.network.hidden_layers, 3);
        assert_abs_diff_eq!(c.optimizer.lr, 1e-5);
        assert_abs_diff_eq!(c.optimizer.beta1, 0.5);
        assert_abs_diff_eq!(c.optimizer.beta2, 0.999);
        assert_eq!(c.metrics.eval_samples, 512);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let err = RunConfig::from_toml("[optimizer]\nlerning_rate = 1e-4\n").unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
    }

    #[test]
    fn objective_defaults_depend_on_kind() {
        let c = RunConfig::from_toml("[objective]\nkind = \"wgan_gp\"\n").unwrap();
        let spec = c.objective_spec();
        assert_abs_diff_eq!(spec.penalty_coeff, 10.0);
        assert_eq!(spec.d_steps, 5);

        let c = RunConfig::from_toml("").unwrap();
        let spec = c.objective_spec();
        assert_abs_diff_eq!(spec.penalty_coeff, 0.0);
        assert_eq!(spec.d_steps, 1);
    }

    #[test]
    fn geometry_default_stds() {
        let circle = RunConfig::from_toml("").unwrap();
        assert_abs_diff_eq!(circle.dataset_spec().component_std, 0.02);
        assert_abs_diff_eq!(circle.assignment_eps(), 0.06);

        let grid = RunConfig::from_toml("[dataset]\nkind = \"gmm_grid\"\nm = 25\n").unwrap();
        assert_abs_diff_eq!(grid.dataset_spec().component_std, 0.05);

        let explicit =
            RunConfig::from_toml("[dataset]\ncomponent_std = 0.1\n\n[metrics]\nassignment_eps = 0.5\n")
                .unwrap();
        assert_abs_diff_eq!(explicit.dataset_spec().component_std, 0.1);
        assert_abs_diff_eq!(explicit.assignment_eps(), 0.5);
    }

    #[test]
    fn coverage_threshold_default_formula() {
        // 512 samples over 8 modes: floor(0.2 * 512 / 8) = 12
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.coverage_threshold(), 12);
        let c = RunConfig::from_toml("[metrics]\ncoverage_threshold = 3\n").unwrap();
        assert_eq!(c.coverage_threshold(), 3);
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_toml("[run]\nn = 3\nmaster_seed = 42\n").unwrap();
        let echoed = c.echo_toml();
        let back = RunConfig::from_toml(&echoed).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn bad_optimizer_kind_is_an_error() {
        let c = RunConfig::from_toml("[optimizer]\nkind = \"sgd\"\n").unwrap_err();
        assert!(c.to_string().contains("sgd"), "{c}");
    }

    #[test]
    fn config_hash_ignores_iteration_budget_only() {
        let a = RunConfig::from_toml("[run]\niterations = 100\n").unwrap();
        let b = RunConfig::from_toml("[run]\niterations = 2000\n").unwrap();
        let c = RunConfig::from_toml("[run]\niterations = 100\nn = 3\n").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn resolve_checks_mode_constraints() {
        let bad = RunConfig::from_toml(
            "[run]\nmode = \"paired_baseline\"\n\n[objective]\nkind = \"wgan_gp\"\n",
        );
        assert!(bad.is_err());
        let ok = RunConfig::from_toml("[run]\nmode = \"paired_baseline\"\n");
        assert!(ok.is_ok());
    }
}
