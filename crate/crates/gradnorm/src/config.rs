//! Experiment configuration: a single JSON document that pins every seed,
//! dimension, and hyperparameter, so a run is reproducible from the config
//! alone. Unknown keys are rejected rather than silently ignored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::toytasks::{sample_sigmas, ScaleKind};

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub taskset: TasksetConfig,
    pub model: ModelConfig,
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub steps: u64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::eval_every")]
    pub eval_every: u64,
    pub data_seed: u64,
    pub test_seed: u64,
    #[serde(default = "defaults::test_batch_size")]
    pub test_batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksetConfig {
    pub seed: u64,
    pub num_tasks: usize,
    /// Explicit output scales; absent means "sample from |N(0, sigma_width)|
    /// using sigma_seed", which resolution makes explicit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
    #[serde(default = "defaults::output_dim")]
    pub output_dim: usize,
    #[serde(default = "defaults::base_scale")]
    pub base_scale: f64,
    #[serde(default = "defaults::eps_scale")]
    pub eps_scale: f64,
    /// Whether the scales above are standard deviations or variances.
    #[serde(default)]
    pub scale_kind: ScaleKindConfig,
    #[serde(default = "defaults::sigma_width")]
    pub sigma_width: f64,
    /// Seed for sigma sampling; defaults to `seed + 4` at resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKindConfig {
    #[default]
    StdDev,
    Variance,
}

impl From<ScaleKindConfig> for ScaleKind {
    fn from(k: ScaleKindConfig) -> ScaleKind {
        match k {
            ScaleKindConfig::StdDev => ScaleKind::StdDev,
            ScaleKindConfig::Variance => ScaleKind::Variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub init_seed: u64,
    #[serde(default = "defaults::hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::depth")]
    pub depth: usize,
    /// Which trunk layer is the norm-measurement layer `W`; defaults to the
    /// last one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_layer_index: Option<usize>,
}

/// Loss-weighting strategy. Externally tagged so each variant carries
/// exactly its own fields: `"equal"`, `{"gradnorm": {"alpha": 0.12}}`,
/// `{"static": {"weights": [1.2, 0.8]}}`, `"uncertainty"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyConfig {
    Gradnorm {
        alpha: f64,
    },
    Equal,
    Uncertainty,
    Static {
        weights: Vec<f64>,
    },
}

impl StrategyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::Gradnorm { .. } => "gradnorm",
            StrategyConfig::Equal => "equal",
            StrategyConfig::Uncertainty => "uncertainty",
            StrategyConfig::Static { .. } => "static",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "defaults::network_lr")]
    pub network_lr: f64,
    /// Learning rate for the balancer's weight vector (and the uncertainty
    /// baseline's log-variances).
    #[serde(default = "defaults::weight_lr")]
    pub weight_lr: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    /// Reset the weight optimizer's moments before every balancing step
    /// instead of keeping them across steps.
    #[serde(default)]
    pub reset_weight_optimizer_each_step: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            network_lr: defaults::network_lr(),
            weight_lr: defaults::weight_lr(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            epsilon: defaults::epsilon(),
            reset_weight_optimizer_each_step: false,
        }
    }
}

mod defaults {
    pub fn batch_size() -> usize {
        100
    }
    pub fn eval_every() -> u64 {
        100
    }
    pub fn test_batch_size() -> usize {
        1000
    }
    pub fn input_dim() -> usize {
        250
    }
    pub fn output_dim() -> usize {
        100
    }
    pub fn base_scale() -> f64 {
        10.0
    }
    pub fn eps_scale() -> f64 {
        3.5
    }
    pub fn sigma_width() -> f64 {
        50.0
    }
    pub fn hidden_dim() -> usize {
        100
    }
    pub fn depth() -> usize {
        4
    }
    pub fn network_lr() -> f64 {
        1e-3
    }
    pub fn weight_lr() -> f64 {
        crate::balancer::DEFAULT_WEIGHT_LR
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn epsilon() -> f64 {
        1e-8
    }
}

impl ExperimentConfig {
    /// Built-in configurations for the two synthetic benchmarks, derived
    /// from one master seed: taskset = seed, model init = seed + 1, data =
    /// seed + 2, test = seed + 3, sigma sampling = seed + 4.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let taskset = |sigmas: Option<Vec<f64>>, num_tasks: usize| TasksetConfig {
            seed,
            num_tasks,
            sigmas,
            input_dim: defaults::input_dim(),
            output_dim: defaults::output_dim(),
            base_scale: defaults::base_scale(),
            eps_scale: defaults::eps_scale(),
            scale_kind: ScaleKindConfig::StdDev,
            sigma_width: defaults::sigma_width(),
            sigma_seed: None,
        };
        let base = |taskset: TasksetConfig| ExperimentConfig {
            taskset,
            model: ModelConfig {
                init_seed: seed.wrapping_add(1),
                hidden_dim: defaults::hidden_dim(),
                depth: defaults::depth(),
                shared_layer_index: None,
            },
            strategy: StrategyConfig::Gradnorm { alpha: 0.12 },
            optimizer: OptimizerConfig::default(),
            steps: 20_000,
            batch_size: defaults::batch_size(),
            eval_every: defaults::eval_every(),
            data_seed: seed.wrapping_add(2),
            test_seed: seed.wrapping_add(3),
            test_batch_size: defaults::test_batch_size(),
        };
        match name {
            "toy2" => Ok(base(taskset(Some(vec![1.0, 100.0]), 2))),
            "toy10" => Ok(base(taskset(None, 10))),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected toy2 or toy10)"
            ))),
        }
    }

    /// Fill in sampled values (sigmas) and validate everything. The result
    /// is self-contained: serializing it captures the exact run.
    pub fn resolved(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        if cfg.taskset.num_tasks == 0 {
            return Err(Error::Config("num_tasks must be at least 1".into()));
        }
        if cfg.taskset.sigmas.is_none() {
            let sigma_seed = cfg
                .taskset
                .sigma_seed
                .unwrap_or_else(|| cfg.taskset.seed.wrapping_add(4));
            let mut rng = Rng::new(sigma_seed);
            cfg.taskset.sigmas = Some(sample_sigmas(
                &mut rng,
                cfg.taskset.num_tasks,
                cfg.taskset.sigma_width,
            ));
            cfg.taskset.sigma_seed = Some(sigma_seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let t = self.taskset.num_tasks;
        let sigmas = self
            .taskset
            .sigmas
            .as_ref()
            .expect("sigmas are resolved before validation");
        if sigmas.len() != t {
            return Err(Error::Config(format!(
                "taskset.sigmas has {} entries but num_tasks is {t}",
                sigmas.len()
            )));
        }
        if sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("taskset.sigmas must all be positive".into()));
        }
        if self.taskset.input_dim == 0 || self.taskset.output_dim == 0 {
            return Err(Error::Config("taskset dimensions must be positive".into()));
        }
        if self.model.hidden_dim == 0 || self.model.depth == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if let Some(idx) = self.model.shared_layer_index {
            if idx >= self.model.depth {
                return Err(Error::Config(format!(
                    "model.shared_layer_index {idx} out of range for depth {}",
                    self.model.depth
                )));
            }
        }
        match &self.strategy {
            StrategyConfig::Gradnorm { alpha } => {
                if *alpha < 0.0 {
                    return Err(Error::Config(format!(
                        "strategy.gradnorm.alpha must be nonnegative, got {alpha}"
                    )));
                }
            }
            StrategyConfig::Static { weights } => {
                if weights.len() != t {
                    return Err(Error::Config(format!(
                        "strategy.static.weights has {} entries but num_tasks is {t}",
                        weights.len()
                    )));
                }
                if weights.iter().any(|&w| !(w > 0.0)) {
                    return Err(Error::Config(
                        "strategy.static.weights must all be positive".into(),
                    ));
                }
            }
            StrategyConfig::Equal | StrategyConfig::Uncertainty => {}
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.test_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(self.optimizer.network_lr > 0.0) {
            return Err(Error::Config("optimizer.network_lr must be positive".into()));
        }
        if self.optimizer.weight_lr < 0.0 {
            return Err(Error::Config(
                "optimizer.weight_lr must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Parse a JSON config document, then resolve it.
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolved()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy2_preset_matches_benchmark_settings() {
        let cfg = ExperimentConfig::preset("toy2", 7).unwrap();
        assert_eq!(cfg.taskset.num_tasks, 2);
        assert_eq!(cfg.taskset.sigmas, Some(vec![1.0, 100.0]));
        assert_eq!(cfg.taskset.input_dim, 250);
        assert_eq!(cfg.taskset.output_dim, 100);
        assert_eq!(cfg.model.hidden_dim, 100);
        assert_eq!(cfg.model.depth, 4);
        assert!(matches!(
            cfg.strategy,
            StrategyConfig::Gradnorm { alpha } if alpha == 0.12
        ));
        assert_eq!(cfg.optimizer.weight_lr, 0.025);
        assert_eq!(cfg.data_seed, 9);
    }

    #[test]
    fn toy10_preset_resolves_sampled_sigmas() {
        let cfg = ExperimentConfig::preset("toy10", 7).unwrap();
        assert!(cfg.taskset.sigmas.is_none());
        let resolved = cfg.resolved().unwrap();
        let sigmas = resolved.taskset.sigmas.as_ref().unwrap();
        assert_eq!(sigmas.len(), 10);
        assert!(sigmas.iter().all(|&s| s > 0.0));
        // Resolution is idempotent and deterministic.
        assert_eq!(resolved, cfg.resolved().unwrap());
        assert_eq!(resolved, resolved.resolved().unwrap());
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(ExperimentConfig::preset("toy3", 1).is_err());
    }

    #[test]
    fn json_round_trip_preserves_config() {
        let cfg = ExperimentConfig::preset("toy2", 3).unwrap().resolved().unwrap();
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let cfg = ExperimentConfig::preset("toy2", 3).unwrap().resolved().unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        value["taskset"]["typo_field"] = serde_json::json!(1);
        let err = ExperimentConfig::from_json(&value.to_string());
        assert!(err.is_err());
        let msg = format!("{}", err.unwrap_err());
        assert!(msg.contains("typo_field"), "message: {msg}");
    }

    #[test]
    fn strategy_fields_must_match_variant() {
        // alpha on the equal strategy is rejected.
        let text = r#"{"equal": {"alpha": 0.1}}"#;
        assert!(serde_json::from_str::<StrategyConfig>(text).is_err());
        // gradnorm without alpha is rejected.
        let text = r#"{"gradnorm": {}}"#;
        assert!(serde_json::from_str::<StrategyConfig>(text).is_err());
        // well-formed variants parse.
        assert_eq!(
            serde_json::from_str::<StrategyConfig>(r#""equal""#).unwrap(),
            StrategyConfig::Equal
        );
        assert_eq!(
            serde_json::from_str::<StrategyConfig>(r#"{"gradnorm": {"alpha": 0.5}}"#).unwrap(),
            StrategyConfig::Gradnorm { alpha: 0.5 }
        );
        assert_eq!(
            serde_json::from_str::<StrategyConfig>(r#"{"static": {"weights": [2.0, 1.0]}}"#)
                .unwrap(),
            StrategyConfig::Static {
                weights: vec![2.0, 1.0]
            }
        );
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut cfg = ExperimentConfig::preset("toy2", 1).unwrap();
        cfg.taskset.sigmas = Some(vec![1.0]);
        assert!(cfg.resolved().is_err());

        let mut cfg = ExperimentConfig::preset("toy2", 1).unwrap();
        cfg.strategy = StrategyConfig::Static {
            weights: vec![1.0, -1.0],
        };
        assert!(cfg.resolved().is_err());

        let mut cfg = ExperimentConfig::preset("toy2", 1).unwrap();
        cfg.steps = 0;
        assert!(cfg.resolved().is_err());

        let mut cfg = ExperimentConfig::preset("toy2", 1).unwrap();
        cfg.model.shared_layer_index = Some(4);
        assert!(cfg.resolved().is_err());
    }
}
