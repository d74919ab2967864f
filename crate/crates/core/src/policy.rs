//! Two-level imitation policy and a flat behavioral-cloning baseline.
//!
//! The skill policy factorizes into a type classifier over the library
//! (the unstructured `other` class is not representable) and one
//! mixture-density parameter head per type. It pretrains on the inverse
//! model's positive examples, then fine-tunes on parsed demonstrations
//! enriched by stepwise relabeling of segment interiors. The baseline
//! clones raw motor actions with a single mixture head.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{featurize, feature_dim, IdmDataset};
use crate::demos::Demonstration;
use crate::idm::{idm_score, IdmError, IdmModels, ParamModel, TrainConfig};
use crate::io::{self, ContainerError};
use crate::nn::{
    fit_classifier, fit_mixture, gmm_mode, gmm_sample, log_softmax_masked, FitConfig,
    ForwardCache, GmmShape, Mlp, TrainError,
};
use crate::parser::ParsedSequence;
use crate::primitives::{execute_primitive, param_bounds, PrimitiveParams, PrimitiveType};
use crate::rng::{self, tags};
use crate::world::{
    self, task_success, MotorAction, TaskSpec, MAX_ROTATION, MAX_TRANSLATION,
};

const LIBRARY_LEN: usize = PrimitiveType::LIBRARY.len();

/// Distinct init streams so policy networks never share draws with the
/// inverse-model networks trained under the same seed.
const PRIM_NET_TAG: u64 = 10;
const PARAM_NET_TAG: u64 = 11;
const BC_NET_TAG: u64 = 20;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no training tuples")]
    NoTuples,
    #[error("no demonstrations")]
    NoDemos,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Idm(#[from] IdmError),
    #[error(transparent)]
    File(#[from] ContainerError),
}

/// Skill-type classifier over the library only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitivePolicy {
    pub feature_dim: usize,
    pub net: Mlp,
    /// Types seen in any completed training stage, by library index.
    pub present: [bool; LIBRARY_LEN],
}

/// Per-type parameter heads, in library order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPolicy {
    pub feature_dim: usize,
    pub heads: Vec<Option<ParamModel>>,
}

/// Where a training tuple came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TupleSource {
    Parsed,
    Augmented,
    Pretrain,
}

/// One (state features, skill, parameters) training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTuple {
    pub s: Vec<f64>,
    pub p: PrimitiveType,
    pub x: PrimitiveParams,
    pub source: TupleSource,
    /// Demo frame the tuple's skill is aimed at; used by audits that check
    /// every interior relabel targets its own segment's end.
    pub endpoint: usize,
}

/// Tuples at segment starts: one per parsed library-skill segment.
pub fn parsed_tuples(
    spec: &TaskSpec,
    demo: &Demonstration,
    parsed: &ParsedSequence,
) -> Vec<PolicyTuple> {
    parsed
        .segments
        .iter()
        .filter(|seg| seg.p != PrimitiveType::Other)
        .map(|seg| PolicyTuple {
            s: featurize(spec, demo.state(seg.t_start)),
            p: seg.p,
            x: seg.x.clone().expect("library segment carries parameters"),
            source: TupleSource::Parsed,
            endpoint: seg.t_end,
        })
        .collect()
}

/// Relabel every interior frame of every segment against the segment's end
/// state: the best library explanation of (s_l, s_end) becomes a fresh
/// training tuple. The `other` class never participates in the relabel.
pub fn augment_stepwise(
    spec: &TaskSpec,
    demo: &Demonstration,
    parsed: &ParsedSequence,
    models: &IdmModels,
) -> Result<Vec<PolicyTuple>, PolicyError> {
    let features: Vec<Vec<f64>> = (0..=demo.len())
        .map(|i| featurize(spec, demo.state(i)))
        .collect();
    let jobs: Vec<(usize, usize)> = parsed
        .segments
        .iter()
        .flat_map(|seg| ((seg.t_start + 1)..seg.t_end).map(move |l| (l, seg.t_end)))
        .collect();
    let tuples = jobs
        .par_iter()
        .map(|&(l, endpoint)| {
            let table = idm_score(models, &features[l], &features[endpoint])?;
            let best = PrimitiveType::LIBRARY
                .into_iter()
                .filter(|&p| table.entry(p).log_score.is_finite())
                .max_by(|a, b| {
                    table
                        .log_score(*a)
                        .total_cmp(&table.log_score(*b))
                        // Scan order breaks exact ties toward earlier classes.
                        .then(b.index().cmp(&a.index()))
                })
                .expect("at least one library class is trained");
            let entry = table.entry(best);
            Ok(PolicyTuple {
                s: features[l].clone(),
                p: best,
                x: entry.x_star.clone().expect("scored class carries a mode"),
                source: TupleSource::Augmented,
                endpoint,
            })
        })
        .collect::<Result<Vec<_>, PolicyError>>()?;
    Ok(tuples)
}

/// Fresh, untrained policy networks for the given feature width.
pub fn init_policy(feature_dim: usize, cfg: &TrainConfig) -> (PrimitivePolicy, ParameterPolicy) {
    let mut init_rng = rng::derive_rng(cfg.fit.seed, &[tags::NET_INIT, PRIM_NET_TAG]);
    let mut sizes = Vec::with_capacity(cfg.hidden.len() + 2);
    sizes.push(feature_dim);
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(LIBRARY_LEN);
    let net = Mlp::new(&sizes, &mut init_rng);
    (
        PrimitivePolicy {
            feature_dim,
            net,
            present: [false; LIBRARY_LEN],
        },
        ParameterPolicy {
            feature_dim,
            heads: vec![None; LIBRARY_LEN],
        },
    )
}

fn fresh_head(feature_dim: usize, p: PrimitiveType, cfg: &TrainConfig) -> ParamModel {
    let shape = GmmShape {
        components: cfg.components,
        dim: p.param_dim(),
    };
    let mut init_rng = rng::derive_rng(
        cfg.fit.seed,
        &[tags::NET_INIT, PARAM_NET_TAG + p.index() as u64],
    );
    let mut sizes = Vec::with_capacity(cfg.hidden.len() + 2);
    sizes.push(feature_dim);
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(shape.out_dim());
    ParamModel {
        p,
        net: Mlp::new(&sizes, &mut init_rng),
        shape,
    }
}

/// Loss curves from one policy training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub prim_curve: Vec<f64>,
    pub param_curves: Vec<(PrimitiveType, Vec<f64>)>,
}

/// Decorrelated per-network seed within one training stage.
fn stage_seed(seed: u64, tag: u64) -> u64 {
    use rand_core::RngCore;
    rng::derive_rng(seed, &[tags::TRAIN, tag]).next_u64()
}

/// Train both policy levels on (state, skill, parameters) triples.
fn train_on(
    mut prim: PrimitivePolicy,
    mut param: ParameterPolicy,
    triples: &[(Vec<f64>, PrimitiveType, &[f64], f64)],
    cfg: &TrainConfig,
) -> Result<(PrimitivePolicy, ParameterPolicy, PolicyReport), PolicyError> {
    if triples.is_empty() {
        return Err(PolicyError::NoTuples);
    }
    for &(_, p, _, _) in triples {
        prim.present[p.index()] = true;
    }
    let class_examples: Vec<(Vec<f64>, usize, f64)> = triples
        .iter()
        .map(|(s, p, _, w)| (s.clone(), p.index(), *w))
        .collect();
    let prim_curve = fit_classifier(&mut prim.net, &prim.present, &class_examples, &cfg.fit)?;

    let mut param_curves = Vec::new();
    for p in PrimitiveType::LIBRARY {
        let examples: Vec<(Vec<f64>, &[f64], f64)> = triples
            .iter()
            .filter(|(_, tp, _, _)| *tp == p)
            .map(|(s, _, x, w)| (s.clone(), *x, *w))
            .collect();
        if examples.is_empty() {
            continue;
        }
        let mut head = match param.heads[p.index()].take() {
            Some(head) => head,
            None => fresh_head(param.feature_dim, p, cfg),
        };
        let fit_cfg = FitConfig {
            seed: stage_seed(cfg.fit.seed, PARAM_NET_TAG + p.index() as u64),
            ..cfg.fit.clone()
        };
        let curve = fit_mixture(&mut head.net, head.shape, &examples, &fit_cfg)?;
        param.heads[p.index()] = Some(head);
        param_curves.push((p, curve));
    }
    Ok((prim, param, PolicyReport { prim_curve, param_curves }))
}

/// Pretrain fresh policies on the inverse model's positive examples, reusing
/// the dataset's balancing weights. `other` samples are excluded.
pub fn pretrain_policy(
    data: &IdmDataset,
    cfg: &TrainConfig,
) -> Result<(PrimitivePolicy, ParameterPolicy, PolicyReport), PolicyError> {
    let triples: Vec<(Vec<f64>, PrimitiveType, &[f64], f64)> = data
        .samples
        .iter()
        .filter(|sample| sample.p != PrimitiveType::Other)
        .map(|sample| {
            let x = sample.x.as_ref().expect("library sample without parameters");
            (sample.s.clone(), sample.p, x.as_slice(), sample.weight)
        })
        .collect();
    let (prim, param) = init_policy(data.feature_dim, cfg);
    train_on(prim, param, &triples, cfg)
}

/// Continue training existing policies on parsed and augmented tuples,
/// uniformly weighted.
pub fn finetune_policy(
    prim: PrimitivePolicy,
    param: ParameterPolicy,
    tuples: &[PolicyTuple],
    cfg: &TrainConfig,
) -> Result<(PrimitivePolicy, ParameterPolicy, PolicyReport), PolicyError> {
    let triples: Vec<(Vec<f64>, PrimitiveType, &[f64], f64)> = tuples
        .iter()
        .map(|t| (t.s.clone(), t.p, t.x.as_slice(), 1.0))
        .collect();
    train_on(prim, param, &triples, cfg)
}

/// How the rollout turns distributions into decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// Argmax type and the mixture mode: deterministic evaluation.
    ModeSelect,
    /// Categorical type and a mixture draw.
    Sample,
}

/// Outcome of one skill-policy episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub primitives_executed: usize,
}

fn clamp_to_bounds(x: &mut [f64], p: PrimitiveType) {
    for (v, (lo, hi)) in x.iter_mut().zip(param_bounds(p)) {
        *v = v.clamp(lo, hi);
    }
}

/// Run the two-level policy from a fresh episode reset until success or the
/// skill budget runs out.
pub fn rollout_policy(
    prim: &PrimitivePolicy,
    param: &ParameterPolicy,
    spec: &TaskSpec,
    seed: u64,
    episode: u64,
    max_prims: usize,
    mode: DecisionMode,
) -> EpisodeResult {
    assert_eq!(prim.feature_dim, feature_dim(spec), "policy/task feature mismatch");
    if prim.present.iter().all(|&b| !b) {
        return EpisodeResult {
            success: false,
            primitives_executed: 0,
        };
    }
    let mut state = world::reset(spec, seed, episode);
    let mut rng = rng::derive_rng(seed, &[tags::EVAL, episode]);
    let mut cache = ForwardCache::default();
    let mut executed = 0;
    for _ in 0..max_prims {
        let features = featurize(spec, &state);
        let logits = prim.net.forward(&features, &mut cache).to_vec();
        let mask: Vec<bool> = prim.present.to_vec();
        let log_probs = log_softmax_masked(&logits, &mask);
        let class = match mode {
            DecisionMode::ModeSelect => {
                let mut best = 0;
                for (i, lp) in log_probs.iter().enumerate() {
                    if *lp > log_probs[best] {
                        best = i;
                    }
                }
                best
            }
            DecisionMode::Sample => {
                let u = rng::unit_f64(&mut rng);
                let mut acc = 0.0;
                let mut picked = LIBRARY_LEN - 1;
                for (i, lp) in log_probs.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        picked = i;
                        break;
                    }
                }
                picked
            }
        };
        let p = PrimitiveType::LIBRARY[class];
        let head = param.heads[class]
            .as_ref()
            .expect("present classes carry a trained head");
        let out = head.net.forward(&features, &mut cache).to_vec();
        let mut x = match mode {
            DecisionMode::ModeSelect => gmm_mode(&out, head.shape).0,
            DecisionMode::Sample => gmm_sample(&out, head.shape, &mut rng),
        };
        clamp_to_bounds(&mut x, p);
        let seg = execute_primitive(spec, &state, p, &PrimitiveParams(x));
        state = seg.final_state;
        executed += 1;
        if task_success(spec, &state) {
            return EpisodeResult {
                success: true,
                primitives_executed: executed,
            };
        }
    }
    EpisodeResult {
        success: false,
        primitives_executed: executed,
    }
}

/// Flat behavioral cloning: one mixture head over raw motor actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatBcPolicy {
    pub feature_dim: usize,
    pub net: Mlp,
    pub shape: GmmShape,
}

/// Clone (state features -> motor action) pairs from every demo frame.
pub fn train_bc_baseline(
    spec: &TaskSpec,
    demos: &[Demonstration],
    cfg: &TrainConfig,
) -> Result<(FlatBcPolicy, Vec<f64>), PolicyError> {
    if demos.is_empty() {
        return Err(PolicyError::NoDemos);
    }
    let examples: Vec<(Vec<f64>, [f64; MotorAction::DIM], f64)> = demos
        .iter()
        .flat_map(|demo| {
            demo.frames
                .iter()
                .map(|(state, action)| (featurize(spec, state), action.to_vec(), 1.0))
        })
        .collect();
    let shape = GmmShape {
        components: cfg.components,
        dim: MotorAction::DIM,
    };
    let dim = feature_dim(spec);
    let mut init_rng = rng::derive_rng(cfg.fit.seed, &[tags::NET_INIT, BC_NET_TAG]);
    let mut sizes = Vec::with_capacity(cfg.hidden.len() + 2);
    sizes.push(dim);
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(shape.out_dim());
    let mut net = Mlp::new(&sizes, &mut init_rng);
    let curve = fit_mixture(&mut net, shape, &examples, &cfg.fit)?;
    Ok((
        FlatBcPolicy {
            feature_dim: dim,
            net,
            shape,
        },
        curve,
    ))
}

/// Outcome of one flat-baseline episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcEpisodeResult {
    pub success: bool,
    pub steps: usize,
}

/// Run the flat baseline with mode actions until success or the step budget.
pub fn rollout_bc(
    policy: &FlatBcPolicy,
    spec: &TaskSpec,
    seed: u64,
    episode: u64,
    max_steps: usize,
) -> BcEpisodeResult {
    assert_eq!(policy.feature_dim, feature_dim(spec), "policy/task feature mismatch");
    let mut state = world::reset(spec, seed, episode);
    let mut cache = ForwardCache::default();
    for step in 1..=max_steps {
        let features = featurize(spec, &state);
        let out = policy.net.forward(&features, &mut cache).to_vec();
        let (mut action, _) = gmm_mode(&out, policy.shape);
        for v in action.iter_mut().take(3) {
            *v = v.clamp(-MAX_TRANSLATION, MAX_TRANSLATION);
        }
        action[3] = action[3].clamp(-MAX_ROTATION, MAX_ROTATION);
        action[4] = action[4].clamp(0.0, 1.0);
        let motor = MotorAction::from_vec([action[0], action[1], action[2], action[3], action[4]]);
        world::step(spec, &mut state, &motor);
        if task_success(spec, &state) {
            return BcEpisodeResult {
                success: true,
                steps: step,
            };
        }
    }
    BcEpisodeResult {
        success: false,
        steps: max_steps,
    }
}

const POLICY_KIND: &str = "policy";
const POLICY_VERSION: u32 = 1;
const BC_KIND: &str = "bc-policy";
const BC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicyCheckpoint {
    prim: PrimitivePolicy,
    param: ParameterPolicy,
}

#[derive(Serialize)]
struct PolicyMeta {
    feature_dim: usize,
}

pub fn save_policy(
    path: &std::path::Path,
    prim: &PrimitivePolicy,
    param: &ParameterPolicy,
) -> Result<(), ContainerError> {
    let checkpoint = PolicyCheckpoint {
        prim: prim.clone(),
        param: param.clone(),
    };
    io::write_container(
        path,
        POLICY_KIND,
        POLICY_VERSION,
        &PolicyMeta {
            feature_dim: prim.feature_dim,
        },
        std::slice::from_ref(&checkpoint),
    )
}

pub fn load_policy(
    path: &std::path::Path,
) -> Result<(PrimitivePolicy, ParameterPolicy), ContainerError> {
    let (_, records) = io::read_container::<PolicyCheckpoint>(path, POLICY_KIND, POLICY_VERSION)?;
    let checkpoint = records
        .into_iter()
        .next()
        .ok_or_else(|| ContainerError::CorruptFile("policy file has no record".into()))?;
    Ok((checkpoint.prim, checkpoint.param))
}

pub fn save_bc(path: &std::path::Path, policy: &FlatBcPolicy) -> Result<(), ContainerError> {
    io::write_container(
        path,
        BC_KIND,
        BC_VERSION,
        &PolicyMeta {
            feature_dim: policy.feature_dim,
        },
        std::slice::from_ref(policy),
    )
}

pub fn load_bc(path: &std::path::Path) -> Result<FlatBcPolicy, ContainerError> {
    let (_, records) = io::read_container::<FlatBcPolicy>(path, BC_KIND, BC_VERSION)?;
    records
        .into_iter()
        .next()
        .ok_or_else(|| ContainerError::CorruptFile("policy file has no record".into()))
}
