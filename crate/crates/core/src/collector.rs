//! Self-supervised experience collection for inverse-model training.
//!
//! Each episode interleaves randomly sampled skill executions with single
//! random motor actions. Successful skill executions become positive labeled
//! state pairs; random spans of the stitched trajectory become examples of
//! the unstructured `other` class. The assembled dataset is balanced with
//! per-type inverse-frequency weights.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, ContainerError};
use crate::primitives::{
    execute_primitive, primitive_success, sample_params_sigma, PrimitiveParams, PrimitiveType,
    PriorMode, PRIOR_SIGMA,
};
use crate::rng::{self, tags};
use crate::world::{
    self, Grip, MotorAction, Shape, TaskSpec, WorldState, MAX_ROTATION, MAX_TRANSLATION,
};

/// Number of features produced by [`featurize`] for a task.
pub fn feature_dim(spec: &TaskSpec) -> usize {
    7 + 5 * spec.objects.len()
}

/// Fixed-width feature encoding of a world state.
///
/// Layout: gripper x, y, z, sin and cos of the gripper yaw, aperture, and a
/// held flag (1.0 while an object is attached), followed by one block per
/// object in task order: x, y, sin and cos of its orientation, and a shape
/// flag (0.0 for a disc, 1.0 for a box).
///
/// Panics if the state's object roster does not match the task schema; the
/// encoding is only defined for states produced under the same task.
pub fn featurize(spec: &TaskSpec, state: &WorldState) -> Vec<f64> {
    assert_eq!(
        state.objects.len(),
        spec.objects.len(),
        "object roster mismatch between state and task schema"
    );
    let mut f = Vec::with_capacity(feature_dim(spec));
    f.push(state.gripper[0]);
    f.push(state.gripper[1]);
    f.push(state.gripper[2]);
    f.push(state.yaw.sin());
    f.push(state.yaw.cos());
    f.push(state.aperture);
    f.push(if state.held.is_some() { 1.0 } else { 0.0 });
    for (obj, schema) in state.objects.iter().zip(&spec.objects) {
        f.push(obj.pos[0]);
        f.push(obj.pos[1]);
        f.push(obj.theta.sin());
        f.push(obj.theta.cos());
        f.push(match schema.shape {
            Shape::Disc { .. } => 0.0,
            Shape::Box { .. } => 1.0,
        });
    }
    f
}

/// One labeled state-pair example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdmSample {
    pub s: Vec<f64>,
    pub s_prime: Vec<f64>,
    pub p: PrimitiveType,
    /// Present exactly when `p` is a library skill.
    pub x: Option<PrimitiveParams>,
    pub weight: f64,
}

/// Collection run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectorConfig {
    /// Episodes to roll out.
    pub episodes: usize,
    /// Skill or atomic draws per episode.
    pub horizon: usize,
    /// Random `other` spans sampled per episode.
    pub negatives_per_episode: usize,
    /// Probability that a draw executes a skill rather than one motor action.
    pub primitive_prob: f64,
    pub prior_mode: PriorMode,
    /// Width of the object-centered target prior.
    pub prior_sigma: f64,
    /// Fraction of skill draws that use the uniform prior instead of the
    /// object-centered one, so free-space motion is represented too.
    pub uniform_prior_frac: f64,
    pub seed: u64,
}

impl Default for CollectorConfig {
    fn default() -> CollectorConfig {
        CollectorConfig {
            episodes: 2000,
            horizon: 15,
            negatives_per_episode: 10,
            primitive_prob: 0.5,
            prior_mode: PriorMode::ObjectPrior,
            prior_sigma: PRIOR_SIGMA,
            uniform_prior_frac: 0.25,
            seed: 0,
        }
    }
}

impl CollectorConfig {
    pub fn validate(&self) -> Result<(), CollectError> {
        if self.episodes < 1 || self.horizon < 1 || self.negatives_per_episode < 1 {
            return Err(CollectError::BadConfig(
                "episodes, horizon, and negatives_per_episode must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.primitive_prob) {
            return Err(CollectError::BadConfig(
                "primitive_prob must lie in [0, 1]".into(),
            ));
        }
        if !self.prior_sigma.is_finite() || self.prior_sigma <= 0.0 {
            return Err(CollectError::BadConfig(
                "prior_sigma must be positive and finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.uniform_prior_frac) {
            return Err(CollectError::BadConfig(
                "uniform_prior_frac must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("collector configuration invalid: {0}")]
    BadConfig(String),
    #[error(transparent)]
    File(#[from] ContainerError),
}

/// Audit record pairing a positive example with its raw world states, so a
/// checker can re-execute the skill and confirm the stored outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPositive {
    pub episode: u64,
    pub p: PrimitiveType,
    pub x: PrimitiveParams,
    pub start: WorldState,
    pub end: WorldState,
}

/// Everything produced by one collection episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub episode: u64,
    pub positives: Vec<IdmSample>,
    pub negatives: Vec<IdmSample>,
    pub audits: Vec<RawPositive>,
    /// Index pairs (j, l), j < l, into `trajectory` backing each negative.
    pub negative_spans: Vec<(usize, usize)>,
    /// The stitched episode trajectory the spans refer to.
    pub trajectory: Vec<WorldState>,
}

fn random_motor_action(rng: &mut ChaCha8Rng) -> MotorAction {
    MotorAction {
        dx: rng::uniform(rng, -MAX_TRANSLATION, MAX_TRANSLATION),
        dy: rng::uniform(rng, -MAX_TRANSLATION, MAX_TRANSLATION),
        dz: rng::uniform(rng, -MAX_TRANSLATION, MAX_TRANSLATION),
        dyaw: rng::uniform(rng, -MAX_ROTATION, MAX_ROTATION),
        grip: if rng::unit_f64(rng) < 0.5 {
            Grip::Open
        } else {
            Grip::Close
        },
    }
}

/// Skill types that can succeed from `state`. Placing needs a held object;
/// grasping needs a free hand, and a push attempted while holding would only
/// drag the held object around, so both are gated on an empty hand.
fn eligible_skills(state: &WorldState) -> &'static [PrimitiveType] {
    if state.held.is_some() {
        &[PrimitiveType::Reach, PrimitiveType::Place]
    } else {
        &[
            PrimitiveType::Reach,
            PrimitiveType::Grasp,
            PrimitiveType::Push,
        ]
    }
}

/// Roll out one collection episode. All randomness is keyed by
/// `(cfg.seed, episode)`, so episodes can run in any order or in parallel.
pub fn collect_episode(spec: &TaskSpec, cfg: &CollectorConfig, episode: u64) -> EpisodeOutput {
    let mut rng = rng::derive_rng(cfg.seed, &[tags::EPISODE, episode]);
    let mut state = world::reset(spec, cfg.seed, episode);
    let mut trajectory = vec![state.clone()];
    let mut positives = Vec::new();
    let mut audits = Vec::new();

    for _ in 0..cfg.horizon {
        if rng::unit_f64(&mut rng) < cfg.primitive_prob {
            let lib = eligible_skills(&state);
            let p = lib[rng::uniform_idx(&mut rng, lib.len())];
            let mode = if cfg.prior_mode == PriorMode::ObjectPrior
                && rng::unit_f64(&mut rng) < cfg.uniform_prior_frac
            {
                PriorMode::Uniform
            } else {
                cfg.prior_mode
            };
            let x = sample_params_sigma(&mut rng, p, &state, mode, cfg.prior_sigma);
            let seg = execute_primitive(spec, &state, p, &x);
            for (s, _) in seg.transitions.iter().skip(1) {
                trajectory.push(s.clone());
            }
            trajectory.push(seg.final_state.clone());
            if primitive_success(&seg, p, &x) {
                positives.push(IdmSample {
                    s: featurize(spec, &state),
                    s_prime: featurize(spec, &seg.final_state),
                    p,
                    x: Some(x.clone()),
                    weight: 1.0,
                });
                audits.push(RawPositive {
                    episode,
                    p,
                    x,
                    start: state.clone(),
                    end: seg.final_state.clone(),
                });
            }
            state = seg.final_state;
        } else {
            let action = random_motor_action(&mut rng);
            world::step(spec, &mut state, &action);
            trajectory.push(state.clone());
        }
    }

    let mut negatives = Vec::with_capacity(cfg.negatives_per_episode);
    let mut negative_spans = Vec::with_capacity(cfg.negatives_per_episode);
    for _ in 0..cfg.negatives_per_episode {
        let (j, l) = loop {
            let a = rng::uniform_idx(&mut rng, trajectory.len());
            let b = rng::uniform_idx(&mut rng, trajectory.len());
            if a != b {
                break (a.min(b), a.max(b));
            }
        };
        negatives.push(IdmSample {
            s: featurize(spec, &trajectory[j]),
            s_prime: featurize(spec, &trajectory[l]),
            p: PrimitiveType::Other,
            x: None,
            weight: 1.0,
        });
        negative_spans.push((j, l));
    }

    EpisodeOutput {
        episode,
        positives,
        negatives,
        audits,
        negative_spans,
        trajectory,
    }
}

/// Weighted, shuffled training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdmDataset {
    pub task: String,
    pub feature_dim: usize,
    pub samples: Vec<IdmSample>,
}

impl IdmDataset {
    /// Sample count per class, indexed by [`PrimitiveType::index`].
    pub fn type_counts(&self) -> [usize; PrimitiveType::COUNT] {
        let mut counts = [0usize; PrimitiveType::COUNT];
        for sample in &self.samples {
            counts[sample.p.index()] += 1;
        }
        counts
    }

    /// Classes with at least one example, in canonical order.
    pub fn present_types(&self) -> Vec<PrimitiveType> {
        let counts = self.type_counts();
        PrimitiveType::ALL
            .into_iter()
            .filter(|p| counts[p.index()] > 0)
            .collect()
    }

    /// Split off the trailing `frac` of samples for held-out evaluation.
    /// Samples were already shuffled at assembly, so a suffix split is an
    /// unbiased holdout; weights travel with their samples unchanged.
    pub fn split_holdout(mut self, frac: f64) -> (IdmDataset, IdmDataset) {
        assert!((0.0..1.0).contains(&frac), "holdout fraction {frac} out of range");
        let keep = self.samples.len() - (self.samples.len() as f64 * frac).round() as usize;
        let held = self.samples.split_off(keep);
        let holdout = IdmDataset {
            task: self.task.clone(),
            feature_dim: self.feature_dim,
            samples: held,
        };
        (self, holdout)
    }
}

/// Per-type counts plus any library skills that never succeeded. A missing
/// type is a warning, not an error: the dataset is still usable and the
/// classifier masks absent classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub counts: [usize; PrimitiveType::COUNT],
    pub missing: Vec<PrimitiveType>,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in PrimitiveType::ALL {
            write!(f, "{}={} ", p.name(), self.counts[p.index()])?;
        }
        if !self.missing.is_empty() {
            let names: Vec<&str> = self.missing.iter().map(|p| p.name()).collect();
            write!(f, "(no successes: {})", names.join(", "))?;
        }
        Ok(())
    }
}

/// Merge episode outputs into a dataset: weight every sample of type `p` by
/// one over the count of `p`, shuffle deterministically under
/// `(cfg.seed, shuffle)`, and pass the audit records through.
pub fn build_dataset(
    spec: &TaskSpec,
    cfg: &CollectorConfig,
    episodes: Vec<EpisodeOutput>,
) -> (IdmDataset, Vec<RawPositive>, DatasetSummary) {
    let mut samples = Vec::new();
    let mut audits = Vec::new();
    for mut ep in episodes {
        samples.append(&mut ep.positives);
        samples.append(&mut ep.negatives);
        audits.append(&mut ep.audits);
    }
    let mut counts = [0usize; PrimitiveType::COUNT];
    for sample in &samples {
        counts[sample.p.index()] += 1;
    }
    for sample in &mut samples {
        sample.weight = 1.0 / counts[sample.p.index()] as f64;
    }
    let mut shuffle_rng = rng::derive_rng(cfg.seed, &[tags::SHUFFLE]);
    rng::shuffle(&mut shuffle_rng, &mut samples);
    let missing = PrimitiveType::LIBRARY
        .into_iter()
        .filter(|p| counts[p.index()] == 0)
        .collect();
    (
        IdmDataset {
            task: spec.name.clone(),
            feature_dim: feature_dim(spec),
            samples,
        },
        audits,
        DatasetSummary { counts, missing },
    )
}

/// Run the full collection: episodes in parallel, merged in index order, then
/// weighted and shuffled. Identical output for a fixed config regardless of
/// worker count.
pub fn collect_dataset(
    spec: &TaskSpec,
    cfg: &CollectorConfig,
) -> Result<(IdmDataset, Vec<RawPositive>, DatasetSummary), CollectError> {
    cfg.validate()?;
    let episodes: Vec<EpisodeOutput> = (0..cfg.episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut out = collect_episode(spec, cfg, i);
            // Trajectories are only needed within the episode; dropping them
            // here keeps peak memory proportional to the sample count.
            out.trajectory = Vec::new();
            out.negative_spans = Vec::new();
            out
        })
        .collect();
    Ok(build_dataset(spec, cfg, episodes))
}

const DATASET_KIND: &str = "idm-dataset";
const DATASET_VERSION: u32 = 1;
const AUDIT_KIND: &str = "idm-audit";
const AUDIT_VERSION: u32 = 1;

#[derive(Serialize)]
struct DatasetMeta<'a> {
    task: &'a str,
    feature_dim: usize,
    count: usize,
}

pub fn save_dataset(path: &std::path::Path, ds: &IdmDataset) -> Result<(), ContainerError> {
    io::write_container(
        path,
        DATASET_KIND,
        DATASET_VERSION,
        &DatasetMeta {
            task: &ds.task,
            feature_dim: ds.feature_dim,
            count: ds.samples.len(),
        },
        &ds.samples,
    )
}

pub fn load_dataset(path: &std::path::Path) -> Result<IdmDataset, ContainerError> {
    let (meta, samples) = io::read_container::<IdmSample>(path, DATASET_KIND, DATASET_VERSION)?;
    let task = meta
        .get("task")
        .and_then(|v| v.as_str())
        .ok_or_else(|| ContainerError::CorruptFile("dataset meta missing task".into()))?
        .to_string();
    let feature_dim = meta
        .get("feature_dim")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ContainerError::CorruptFile("dataset meta missing feature_dim".into()))?
        as usize;
    Ok(IdmDataset {
        task,
        feature_dim,
        samples,
    })
}

#[derive(Serialize)]
struct AuditMeta<'a> {
    task: &'a str,
    count: usize,
}

pub fn save_audits(
    path: &std::path::Path,
    task: &str,
    audits: &[RawPositive],
) -> Result<(), ContainerError> {
    io::write_container(
        path,
        AUDIT_KIND,
        AUDIT_VERSION,
        &AuditMeta {
            task,
            count: audits.len(),
        },
        audits,
    )
}

pub fn load_audits(path: &std::path::Path) -> Result<Vec<RawPositive>, ContainerError> {
    let (_, audits) = io::read_container(path, AUDIT_KIND, AUDIT_VERSION)?;
    Ok(audits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CollectorConfig {
        CollectorConfig {
            episodes: 8,
            horizon: 6,
            negatives_per_episode: 4,
            seed: 17,
            ..CollectorConfig::default()
        }
    }

    #[test]
    fn feature_layout_matches_schema() {
        let spec = TaskSpec::pick_place_lite();
        let state = world::reset(&spec, 0, 0);
        let f = featurize(&spec, &state);
        assert_eq!(f.len(), 12);
        assert_eq!(feature_dim(&spec), 12);
        assert_eq!(f[0], state.gripper[0]);
        assert_eq!(f[2], state.gripper[2]);
        assert_eq!(f[5], state.aperture);
        assert_eq!(f[6], 0.0);
        assert_eq!(f[7], state.objects[0].pos[0]);
        assert_eq!(f[11], 0.0);

        let tidy = TaskSpec::tidy_up_lite();
        assert_eq!(feature_dim(&tidy), 22);
        let tidy_state = world::reset(&tidy, 0, 0);
        let tf = featurize(&tidy, &tidy_state);
        // The crate object is the only box in the roster.
        assert_eq!(tf[11], 1.0);
        assert_eq!(tf[16], 0.0);
    }

    #[test]
    fn zero_yaw_encodes_as_unit_cosine() {
        let spec = TaskSpec::pick_place_lite();
        let mut state = world::reset(&spec, 1, 0);
        state.yaw = 0.0;
        let f = featurize(&spec, &state);
        assert_eq!(f[3], 0.0);
        assert_eq!(f[4], 1.0);
    }

    #[test]
    #[should_panic(expected = "roster mismatch")]
    fn roster_mismatch_is_rejected() {
        let spec = TaskSpec::pick_place_lite();
        let mut state = world::reset(&spec, 1, 0);
        state.objects.clear();
        featurize(&spec, &state);
    }

    #[test]
    fn episode_respects_draw_and_negative_budgets() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = small_cfg();
        for episode in 0..4 {
            let out = collect_episode(&spec, &cfg, episode);
            assert!(out.positives.len() <= cfg.horizon);
            assert_eq!(out.negatives.len(), cfg.negatives_per_episode);
            assert_eq!(out.audits.len(), out.positives.len());
            for &(j, l) in &out.negative_spans {
                assert!(j < l, "span ({j}, {l}) not ordered");
                assert!(l < out.trajectory.len());
            }
        }
    }

    #[test]
    fn episodes_are_reproducible() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = small_cfg();
        let a = collect_episode(&spec, &cfg, 3);
        let b = collect_episode(&spec, &cfg, 3);
        assert_eq!(a.positives, b.positives);
        assert_eq!(a.negatives, b.negatives);
        assert_eq!(a.negative_spans, b.negative_spans);
    }

    #[test]
    fn positives_replay_from_stored_states() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = CollectorConfig {
            episodes: 6,
            ..small_cfg()
        };
        let mut checked = 0;
        for episode in 0..cfg.episodes as u64 {
            let out = collect_episode(&spec, &cfg, episode);
            for audit in &out.audits {
                let seg = execute_primitive(&spec, &audit.start, audit.p, &audit.x);
                assert!(primitive_success(&seg, audit.p, &audit.x));
                assert_eq!(seg.final_state, audit.end);
                checked += 1;
            }
        }
        assert!(checked > 0, "no positives collected in any episode");
    }

    #[test]
    fn weights_balance_each_type_to_unit_mass() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = CollectorConfig {
            episodes: 20,
            ..small_cfg()
        };
        let (ds, audits, summary) = collect_dataset(&spec, &cfg).unwrap();
        assert_eq!(
            summary.counts[PrimitiveType::Other.index()],
            cfg.episodes * cfg.negatives_per_episode
        );
        assert_eq!(
            audits.len(),
            ds.samples.iter().filter(|s| s.p != PrimitiveType::Other).count()
        );
        let mut mass = [0.0f64; PrimitiveType::COUNT];
        for sample in &ds.samples {
            mass[sample.p.index()] += sample.weight;
            assert_eq!(sample.p == PrimitiveType::Other, sample.x.is_none());
        }
        for (i, &m) in mass.iter().enumerate() {
            if summary.counts[i] > 0 {
                assert!((m - 1.0).abs() < 1e-9, "type {i} mass {m}");
            }
        }
    }

    #[test]
    fn synthetic_counts_give_reciprocal_weights() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = small_cfg();
        let dim = feature_dim(&spec);
        let sample = |p: PrimitiveType| IdmSample {
            s: vec![0.0; dim],
            s_prime: vec![0.0; dim],
            p,
            x: (p != PrimitiveType::Other).then(|| PrimitiveParams(vec![0.0; p.param_dim()])),
            weight: 1.0,
        };
        let episodes = vec![EpisodeOutput {
            episode: 0,
            positives: std::iter::repeat_with(|| sample(PrimitiveType::Grasp))
                .take(100)
                .chain(std::iter::repeat_with(|| sample(PrimitiveType::Push)).take(50))
                .collect(),
            negatives: Vec::new(),
            audits: Vec::new(),
            negative_spans: Vec::new(),
            trajectory: Vec::new(),
        }];
        let (ds, _, summary) = build_dataset(&spec, &cfg, episodes);
        for s in &ds.samples {
            let expect = match s.p {
                PrimitiveType::Grasp => 0.01,
                PrimitiveType::Push => 0.02,
                _ => unreachable!(),
            };
            assert_eq!(s.weight, expect);
        }
        assert_eq!(
            summary.missing,
            vec![PrimitiveType::Reach, PrimitiveType::Place]
        );
    }

    #[test]
    fn full_collection_is_deterministic() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = small_cfg();
        let (a, audits_a, _) = collect_dataset(&spec, &cfg).unwrap();
        let (b, audits_b, _) = collect_dataset(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(audits_a, audits_b);
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = small_cfg();
        let (ds, audits, _) = collect_dataset(&spec, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ds_path = dir.path().join("dataset.jsonl");
        let audit_path = dir.path().join("audits.jsonl");
        save_dataset(&ds_path, &ds).unwrap();
        save_audits(&audit_path, &ds.task, &audits).unwrap();
        assert_eq!(load_dataset(&ds_path).unwrap(), ds);
        assert_eq!(load_audits(&audit_path).unwrap(), audits);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = CollectorConfig {
            primitive_prob: 1.5,
            ..CollectorConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = CollectorConfig {
            episodes: 0,
            ..CollectorConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn holdout_split_preserves_samples_and_weights() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = CollectorConfig {
            episodes: 20,
            seed: 5,
            ..CollectorConfig::default()
        };
        let (data, _, _) = collect_dataset(&spec, &cfg).unwrap();
        let all = data.samples.clone();
        let n = all.len();
        let (train, held) = data.split_holdout(0.1);
        assert_eq!(held.samples.len(), (n as f64 * 0.1).round() as usize);
        assert_eq!(train.samples.len() + held.samples.len(), n);
        let rejoined: Vec<_> = train
            .samples
            .iter()
            .chain(held.samples.iter())
            .cloned()
            .collect();
        assert_eq!(rejoined, all);
        assert_eq!(train.task, held.task);
        assert_eq!(train.feature_dim, held.feature_dim);
    }
}
