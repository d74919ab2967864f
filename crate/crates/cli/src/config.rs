//! Experiment configuration: one TOML document describing a complete run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use skillparse::collector::CollectorConfig;
use skillparse::idm::TrainConfig;
use skillparse::world::TaskSpec;

use crate::HarnessError;

/// Demo seeds start here so demonstration layouts never collide with
/// evaluation layouts (evaluation uses the experiment seeds directly).
pub const DEMO_SEED_BASE: u64 = 1000;

/// Which trained variants a run produces beyond the full pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Skip pretraining; fine-tune from fresh networks.
    pub no_pretrain: bool,
    /// Parse with the greedy scan instead of the dynamic program.
    pub greedy_parse: bool,
    /// Fine-tune on segment-start tuples only, no interior relabeling.
    pub no_augment: bool,
}

impl AblationFlags {
    /// Variant rows this run reports, in canonical order, after `full`.
    pub fn variants(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.no_pretrain {
            v.push("no_pretrain");
        }
        if self.greedy_parse {
            v.push("greedy_parse");
        }
        if self.no_augment {
            v.push("no_augment");
        }
        v
    }
}

/// Everything a reproducible run needs. Defaults are the blessed desk-scale
/// recipe; any field can be overridden from the TOML file or the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Built-in task name.
    pub task: String,
    /// Demonstration budget.
    pub demos: usize,
    /// Actuation noise applied to scripted demonstrations.
    pub demo_noise: f64,
    /// One complete training run per seed; reports aggregate across them.
    pub seeds: Vec<u64>,
    /// Per-segment penalty on the unstructured class during parsing.
    pub alpha: f64,
    /// Candidate boundary spacing in frames.
    pub stride: usize,
    /// Evaluation episodes per seed.
    pub eval_episodes: usize,
    /// Skill budget per evaluation episode.
    pub max_prims: usize,
    /// Motor-step budget per baseline evaluation episode.
    pub bc_max_steps: usize,
    /// Fraction of the collected dataset held out for the quality gate.
    pub holdout_frac: f64,
    pub collector: CollectorConfig,
    pub idm: TrainConfig,
    pub policy: TrainConfig,
    pub ablations: AblationFlags,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            task: "pick_place_lite".into(),
            demos: 30,
            demo_noise: 0.1,
            seeds: vec![0, 1, 2],
            alpha: 0.1,
            stride: 5,
            eval_episodes: 50,
            max_prims: 8,
            bc_max_steps: 1000,
            holdout_frac: 0.1,
            collector: CollectorConfig::default(),
            idm: TrainConfig::default(),
            policy: TrainConfig::default(),
            ablations: AblationFlags::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if TaskSpec::builtin(&self.task).is_none() {
            return bad(format!("unknown task {:?}", self.task));
        }
        if self.demos == 0 {
            return bad("demos must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.demo_noise.is_finite() && (0.0..=0.5).contains(&self.demo_noise)) {
            return bad(format!("demo_noise {} out of [0, 0.5]", self.demo_noise));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} out of (0, 1]", self.alpha));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if self.max_prims == 0 {
            return bad("max_prims must be at least 1".into());
        }
        if self.bc_max_steps == 0 {
            return bad("bc_max_steps must be at least 1".into());
        }
        if !(self.holdout_frac.is_finite() && (0.0..1.0).contains(&self.holdout_frac)) {
            return bad(format!("holdout_frac {} out of [0, 1)", self.holdout_frac));
        }
        self.collector
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.idm
            .validate()
            .map_err(|e| HarnessError::Config(format!("idm: {e}")))?;
        self.policy
            .validate()
            .map_err(|e| HarnessError::Config(format!("policy: {e}")))?;
        Ok(())
    }

    pub fn spec(&self) -> Result<TaskSpec, HarnessError> {
        TaskSpec::builtin(&self.task)
            .ok_or_else(|| HarnessError::Config(format!("unknown task {:?}", self.task)))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("parse {}: {e}", path.display())))
    }

    /// Write the fully resolved configuration; the stored copy is the record
    /// of what the run actually used.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| HarnessError::Config(format!("serialize config: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| HarnessError::Config(format!("write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_fields_are_rejected() {
        for mutate in [
            (|c: &mut ExperimentConfig| c.task = "warehouse".into()) as fn(&mut ExperimentConfig),
            |c| c.demos = 0,
            |c| c.seeds = Vec::new(),
            |c| c.alpha = 0.0,
            |c| c.alpha = 1.5,
            |c| c.stride = 0,
            |c| c.eval_episodes = 0,
            |c| c.holdout_frac = 1.0,
            |c| c.demo_noise = 0.9,
            |c| c.collector.episodes = 0,
            |c| c.idm.components = 0,
        ] {
            let mut cfg = ExperimentConfig::default();
            mutate(&mut cfg);
            assert!(
                matches!(cfg.validate(), Err(HarnessError::Config(_))),
                "mutation accepted"
            );
        }
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.task = "tidy_up_lite".into();
        cfg.seeds = vec![7, 8];
        cfg.ablations.greedy_parse = true;
        cfg.idm.fit.epochs = 17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        cfg.save(&path).unwrap();
        assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, "task = \"tidy_up_lite\"\n[collector]\nepisodes = 64\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.task, "tidy_up_lite");
        assert_eq!(cfg.collector.episodes, 64);
        assert_eq!(cfg.collector.horizon, CollectorConfig::default().horizon);
        assert_eq!(cfg.demos, 30);
    }

    #[test]
    fn variant_order_is_canonical() {
        let all = AblationFlags {
            no_pretrain: true,
            greedy_parse: true,
            no_augment: true,
        };
        assert_eq!(all.variants(), vec!["no_pretrain", "greedy_parse", "no_augment"]);
        assert!(AblationFlags::default().variants().is_empty());
    }
}
