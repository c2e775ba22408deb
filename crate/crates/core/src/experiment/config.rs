//! Versioned JSON experiment configs.
//!
//! A config file is one JSON object with `schema_version`, an `experiment`
//! tag naming the subcommand, and that experiment's fields. Unknown keys
//! are rejected at every level.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::nn::tabular::context_count;
use crate::oracle::check_cap;
use crate::support::{LossConfig, MaskSet, Normalizer, Objective, TokenDistillConfig, TokenTaskSpec};
use crate::toy::{DistillConfig, TeacherConfig, ToyEnvConfig};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Teach,
    ToySweep,
    TokenDistill,
    OracleCheck,
    VarianceProbe,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::Teach => "teach",
            ExperimentKind::ToySweep => "toy_sweep",
            ExperimentKind::TokenDistill => "token_distill",
            ExperimentKind::OracleCheck => "oracle_check",
            ExperimentKind::VarianceProbe => "variance_probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Teach(TeachConfig),
    ToySweep(ToySweepConfig),
    TokenDistill(TokenDistillRun),
    OracleCheck(OracleCheckConfig),
    VarianceProbe(VarianceProbeConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeachConfig {
    pub seed: u64,
    pub tasks: Vec<u32>,
    pub env: ToyEnvConfig,
    pub teacher: TeacherConfig,
}

impl Default for TeachConfig {
    fn default() -> Self {
        TeachConfig { seed: 42, tasks: vec![0, 1], env: ToyEnvConfig::default(), teacher: TeacherConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySweepConfig {
    pub seeds: Vec<u64>,
    pub gammas: Vec<f64>,
    pub env: ToyEnvConfig,
    pub teacher: TeacherConfig,
    /// Student settings; the discount comes from `gammas`.
    pub student: DistillConfig,
    /// Trailing share of updates averaged into the late-phase variance.
    pub late_fraction: f64,
}

impl Default for ToySweepConfig {
    fn default() -> Self {
        ToySweepConfig {
            seeds: vec![42, 43, 2026],
            gammas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            env: ToyEnvConfig::default(),
            teacher: TeacherConfig::default(),
            student: DistillConfig::default(),
            late_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenDistillRun {
    #[serde(default)]
    pub seed: u64,
    pub task: TokenTaskSpec,
    pub training: TokenDistillConfig,
}

impl Default for TokenDistillRun {
    fn default() -> Self {
        let task = TokenTaskSpec::sharp_default();
        let loss = LossConfig {
            objective: Objective::LsmTeacherTopk,
            k: 20,
            mask: MaskSet::empty(),
            normalizer: Normalizer::AllPositions,
        };
        let training = TokenDistillConfig::for_task(&task, loss);
        TokenDistillRun { seed: 0, task, training }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleCheckConfig {
    pub seed: u64,
    pub vocab: usize,
    pub order: usize,
    pub horizon: usize,
    /// Standard deviation of the random logits.
    pub scale: f64,
    /// Use the student as its own teacher.
    pub identical: bool,
    pub fd_step: f64,
    /// Sampled trajectories for the estimator reduction checks.
    pub trajectories: usize,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        OracleCheckConfig {
            seed: 7,
            vocab: 3,
            order: 1,
            horizon: 3,
            scale: 1.0,
            identical: false,
            fd_step: 1e-5,
            trajectories: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceProbeConfig {
    pub seed: u64,
    pub reward_bound: f64,
    pub score_bound: f64,
    pub horizons: Vec<usize>,
    /// Dimension of the synthetic score vectors.
    pub dim: usize,
    pub random: Option<RandomProbeConfig>,
}

impl Default for VarianceProbeConfig {
    fn default() -> Self {
        VarianceProbeConfig {
            seed: 0,
            reward_bound: 1.0,
            score_bound: 1.0,
            horizons: vec![4, 8, 16, 32, 64],
            dim: 4,
            random: Some(RandomProbeConfig::default()),
        }
    }
}

/// Monte Carlo second moments on a random tabular pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomProbeConfig {
    pub vocab: usize,
    pub order: usize,
    pub scale: f64,
    pub horizons: Vec<usize>,
    pub samples: usize,
}

impl Default for RandomProbeConfig {
    fn default() -> Self {
        RandomProbeConfig { vocab: 3, order: 1, scale: 1.0, horizons: vec![4, 8, 16, 32, 64], samples: 2000 }
    }
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Teach => ExperimentConfig::Teach(TeachConfig::default()),
            ExperimentKind::ToySweep => ExperimentConfig::ToySweep(ToySweepConfig::default()),
            ExperimentKind::TokenDistill => ExperimentConfig::TokenDistill(TokenDistillRun::default()),
            ExperimentKind::OracleCheck => ExperimentConfig::OracleCheck(OracleCheckConfig::default()),
            ExperimentKind::VarianceProbe => ExperimentConfig::VarianceProbe(VarianceProbeConfig::default()),
        }
    }

    pub fn kind(&self) -> ExperimentKind {
        match self {
            ExperimentConfig::Teach(_) => ExperimentKind::Teach,
            ExperimentConfig::ToySweep(_) => ExperimentKind::ToySweep,
            ExperimentConfig::TokenDistill(_) => ExperimentKind::TokenDistill,
            ExperimentConfig::OracleCheck(_) => ExperimentKind::OracleCheck,
            ExperimentConfig::VarianceProbe(_) => ExperimentKind::VarianceProbe,
        }
    }

    /// Parse a config document and validate it.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        let obj = value.as_object_mut().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        match obj.remove("schema_version") {
            Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(Error::Config("missing schema_version".into())),
        }
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The config as a JSON document, `schema_version` included.
    pub fn to_json_value(&self) -> Result<Value> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(obj) = &mut v {
            obj.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        Ok(v)
    }

    /// Replace every seed in the config by `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::Teach(c) => c.seed = seed,
            ExperimentConfig::ToySweep(c) => c.seeds = vec![seed],
            ExperimentConfig::TokenDistill(c) => c.seed = seed,
            ExperimentConfig::OracleCheck(c) => c.seed = seed,
            ExperimentConfig::VarianceProbe(c) => c.seed = seed,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match self {
            ExperimentConfig::Teach(c) => vec![c.seed],
            ExperimentConfig::ToySweep(c) => c.seeds.clone(),
            ExperimentConfig::TokenDistill(c) => vec![c.seed],
            ExperimentConfig::OracleCheck(c) => vec![c.seed],
            ExperimentConfig::VarianceProbe(c) => vec![c.seed],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExperimentConfig::Teach(c) => {
                c.env.validate()?;
                c.teacher.validate()?;
                if c.tasks.is_empty() {
                    return Err(Error::Config("teach needs at least one task".into()));
                }
                for t in &c.tasks {
                    c.env.task(*t)?;
                }
                Ok(())
            }
            ExperimentConfig::ToySweep(c) => {
                c.env.validate()?;
                c.teacher.validate()?;
                if c.seeds.is_empty() {
                    return Err(Error::Config("seed list is empty".into()));
                }
                if c.gammas.is_empty() {
                    return Err(Error::Config("gamma grid is empty".into()));
                }
                for g in &c.gammas {
                    Estimator::gamma(*g)?;
                }
                c.student.validate(&c.env)?;
                if !(c.late_fraction > 0.0 && c.late_fraction <= 1.0) {
                    return Err(Error::Config("late_fraction must lie in (0, 1]".into()));
                }
                Ok(())
            }
            ExperimentConfig::TokenDistill(c) => {
                c.task.validate()?;
                c.training.validate(c.task.vocab())
            }
            ExperimentConfig::OracleCheck(c) => {
                context_count(c.vocab, c.order)?;
                check_cap(c.vocab, c.horizon)?;
                if c.vocab < 2 || c.horizon == 0 {
                    return Err(Error::Config("oracle check needs vocab >= 2 and horizon >= 1".into()));
                }
                if !(c.scale >= 0.0 && c.fd_step > 0.0) {
                    return Err(Error::Config("scale must be nonnegative and fd_step positive".into()));
                }
                if c.trajectories == 0 {
                    return Err(Error::Config("trajectories must be positive".into()));
                }
                Ok(())
            }
            ExperimentConfig::VarianceProbe(c) => {
                if c.horizons.len() < 2 || c.horizons.contains(&0) {
                    return Err(Error::Config("probe needs two or more positive horizons".into()));
                }
                if c.dim == 0 {
                    return Err(Error::Config("dim must be positive".into()));
                }
                crate::estimators::BoundConstants::new(c.reward_bound, c.score_bound)?;
                if let Some(r) = &c.random {
                    context_count(r.vocab, r.order)?;
                    if r.horizons.len() < 2 || r.horizons.contains(&0) || r.samples == 0 || r.vocab < 2 {
                        return Err(Error::Config(
                            "random probe needs vocab >= 2, samples and two positive horizons".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }
}
