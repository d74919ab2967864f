//! Factorized inverse model over state pairs.
//!
//! A classifier assigns each (s, s′) pair a distribution over skill types
//! (including the unstructured `other` class), and one mixture-density
//! network per skill type models the distribution of parameters that would
//! produce the transition. Scoring a pair returns class log-probabilities,
//! a deterministic parameter estimate per skill, and a combined segment
//! score used by the demonstration parser.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{IdmDataset, IdmSample};
use crate::io::{self, ContainerError};
use crate::nn::{
    fit_classifier, fit_mixture, gmm_mode, log_softmax_masked, FitConfig, ForwardCache, GmmShape,
    Mlp, TrainError,
};
use crate::primitives::{PrimitiveParams, PrimitiveType};
use crate::rng::{self, tags};

/// Training hyperparameters for the classifier and the parameter heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub fit: FitConfig,
    /// Hidden layer widths shared by every network.
    pub hidden: Vec<usize>,
    /// Mixture components per parameter head.
    pub components: usize,
    /// Blend factor for the parameter density in the combined segment score.
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            fit: FitConfig::default(),
            hidden: vec![64, 64],
            components: 5,
            beta: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), IdmError> {
        self.fit.validate()?;
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.components == 0 {
            return Err(IdmError::BadConfig);
        }
        Ok(())
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(output);
        sizes
    }
}

#[derive(Debug, Error)]
pub enum IdmError {
    #[error("dataset has no samples of the required kind")]
    EmptyDataset,
    #[error("classifier needs at least two classes, found {0}")]
    SingleClass(usize),
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network configuration invalid")]
    BadConfig,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    File(#[from] ContainerError),
}

/// Mixture-density head for one skill type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamModel {
    pub p: PrimitiveType,
    pub net: Mlp,
    pub shape: GmmShape,
}

/// Trained classifier plus one parameter head per skill type seen in the
/// dataset. Classes never seen in training stay masked out of every score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdmModels {
    pub feature_dim: usize,
    pub classifier: Mlp,
    /// Classes with training data, indexed by [`PrimitiveType::index`].
    pub present: [bool; PrimitiveType::COUNT],
    /// Parameter heads in library order; absent when the type had no data.
    pub param_models: Vec<Option<ParamModel>>,
    pub beta: f64,
}

/// Per-class scores for one state pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    /// Masked classifier log-probability of the class.
    pub log_prim: f64,
    /// Deterministic parameter estimate; absent for `other` or masked classes.
    pub x_star: Option<PrimitiveParams>,
    /// Mixture log-likelihood of `x_star`.
    pub log_q: Option<f64>,
    /// Combined segment score: `log_prim + beta * log_q`.
    pub log_score: f64,
}

/// Scores for every class on one state pair, indexed by type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    pub fn entry(&self, p: PrimitiveType) -> &ScoreEntry {
        &self.entries[p.index()]
    }

    pub fn log_score(&self, p: PrimitiveType) -> f64 {
        self.entries[p.index()].log_score
    }
}

fn pair_input(s: &[f64], s_prime: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(s.len() + s_prime.len());
    input.extend_from_slice(s);
    input.extend_from_slice(s_prime);
    input
}

fn check_dim(expected: usize, s: &[f64], s_prime: &[f64]) -> Result<(), IdmError> {
    for side in [s, s_prime] {
        if side.len() != expected {
            return Err(IdmError::DimensionMismatch {
                expected,
                got: side.len(),
            });
        }
    }
    Ok(())
}

/// Decorrelated seed for one of the several networks trained from one config.
fn sub_seed(seed: u64, index: u64) -> u64 {
    use rand_core::RngCore;
    rng::derive_rng(seed, &[tags::TRAIN, index]).next_u64()
}

/// Train the skill-type classifier on the full weighted dataset.
pub fn train_primitive_idm(
    data: &IdmDataset,
    cfg: &TrainConfig,
) -> Result<(Mlp, [bool; PrimitiveType::COUNT], Vec<f64>), IdmError> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(IdmError::EmptyDataset);
    }
    let counts = data.type_counts();
    let present: [bool; PrimitiveType::COUNT] = std::array::from_fn(|i| counts[i] > 0);
    let class_count = present.iter().filter(|&&b| b).count();
    if class_count < 2 {
        return Err(IdmError::SingleClass(class_count));
    }
    let examples: Vec<(Vec<f64>, usize, f64)> = data
        .samples
        .iter()
        .map(|sample| {
            (
                pair_input(&sample.s, &sample.s_prime),
                sample.p.index(),
                sample.weight,
            )
        })
        .collect();
    let mut init_rng = rng::derive_rng(cfg.fit.seed, &[tags::NET_INIT, 0]);
    let mut net = Mlp::new(
        &cfg.sizes(2 * data.feature_dim, PrimitiveType::COUNT),
        &mut init_rng,
    );
    let curve = fit_classifier(&mut net, &present, &examples, &cfg.fit)?;
    Ok((net, present, curve))
}

/// Train the parameter head for one skill type on that type's samples.
pub fn train_param_idm(
    data: &IdmDataset,
    p: PrimitiveType,
    cfg: &TrainConfig,
) -> Result<(ParamModel, Vec<f64>), IdmError> {
    cfg.validate()?;
    assert!(p != PrimitiveType::Other, "the `other` class has no parameters");
    let examples: Vec<(Vec<f64>, &[f64], f64)> = data
        .samples
        .iter()
        .filter(|sample| sample.p == p)
        .map(|sample| {
            let x = sample.x.as_ref().expect("library sample without parameters");
            (pair_input(&sample.s, &sample.s_prime), x.as_slice(), sample.weight)
        })
        .collect();
    if examples.is_empty() {
        return Err(IdmError::EmptyDataset);
    }
    let shape = GmmShape {
        components: cfg.components,
        dim: p.param_dim(),
    };
    let mut init_rng = rng::derive_rng(cfg.fit.seed, &[tags::NET_INIT, 1 + p.index() as u64]);
    let mut net = Mlp::new(&cfg.sizes(2 * data.feature_dim, shape.out_dim()), &mut init_rng);
    let fit_cfg = FitConfig {
        seed: sub_seed(cfg.fit.seed, 1 + p.index() as u64),
        ..cfg.fit.clone()
    };
    let curve = fit_mixture(&mut net, shape, &examples, &fit_cfg)?;
    Ok((ParamModel { p, net, shape }, curve))
}

/// Loss curves from one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub classifier_curve: Vec<f64>,
    pub param_curves: Vec<(PrimitiveType, Vec<f64>)>,
}

/// Train the classifier and every per-type parameter head with data.
pub fn train_idm(data: &IdmDataset, cfg: &TrainConfig) -> Result<(IdmModels, TrainReport), IdmError> {
    let (classifier, present, classifier_curve) = train_primitive_idm(data, cfg)?;
    let mut param_models = Vec::with_capacity(PrimitiveType::LIBRARY.len());
    let mut param_curves = Vec::new();
    for p in PrimitiveType::LIBRARY {
        if present[p.index()] {
            let (model, curve) = train_param_idm(data, p, cfg)?;
            param_models.push(Some(model));
            param_curves.push((p, curve));
        } else {
            param_models.push(None);
        }
    }
    Ok((
        IdmModels {
            feature_dim: data.feature_dim,
            classifier,
            present,
            param_models,
            beta: cfg.beta,
        },
        TrainReport {
            classifier_curve,
            param_curves,
        },
    ))
}

/// Score one state pair under every class.
///
/// Masked classes score negative infinity. For library skills the entry also
/// carries the mixture component mean maximizing weight times density at its
/// own mean, and that point's mixture log-likelihood.
pub fn idm_score(models: &IdmModels, s: &[f64], s_prime: &[f64]) -> Result<ScoreTable, IdmError> {
    check_dim(models.feature_dim, s, s_prime)?;
    let input = pair_input(s, s_prime);
    let mut cache = ForwardCache::default();
    let logits = models.classifier.forward(&input, &mut cache).to_vec();
    let log_probs = log_softmax_masked(&logits, &models.present);
    let entries = PrimitiveType::ALL
        .into_iter()
        .map(|p| {
            let log_prim = log_probs[p.index()];
            let head = if p == PrimitiveType::Other {
                None
            } else {
                models.param_models[p.index()].as_ref()
            };
            match head {
                Some(model) if log_prim.is_finite() => {
                    let out = model.net.forward(&input, &mut cache).to_vec();
                    let (x_star, log_q) = gmm_mode(&out, model.shape);
                    ScoreEntry {
                        log_prim,
                        x_star: Some(PrimitiveParams(x_star)),
                        log_q: Some(log_q),
                        log_score: log_prim + models.beta * log_q,
                    }
                }
                _ => ScoreEntry {
                    log_prim,
                    x_star: None,
                    log_q: None,
                    log_score: log_prim,
                },
            }
        })
        .collect();
    Ok(ScoreTable { entries })
}

/// Fraction of samples whose type is the classifier argmax.
pub fn classifier_accuracy(models: &IdmModels, samples: &[IdmSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut cache = ForwardCache::default();
    let correct = samples
        .iter()
        .filter(|sample| {
            let input = pair_input(&sample.s, &sample.s_prime);
            let logits = models.classifier.forward(&input, &mut cache);
            let log_probs = log_softmax_masked(logits, &models.present);
            let argmax = log_probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            argmax == sample.p.index()
        })
        .count();
    correct as f64 / samples.len() as f64
}

const MODEL_KIND: &str = "idm-models";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize)]
struct ModelMeta {
    feature_dim: usize,
    classes: usize,
}

pub fn save_model(path: &std::path::Path, models: &IdmModels) -> Result<(), ContainerError> {
    io::write_container(
        path,
        MODEL_KIND,
        MODEL_VERSION,
        &ModelMeta {
            feature_dim: models.feature_dim,
            classes: models.present.iter().filter(|&&b| b).count(),
        },
        std::slice::from_ref(models),
    )
}

pub fn load_model(path: &std::path::Path) -> Result<IdmModels, ContainerError> {
    let (_, records) = io::read_container::<IdmModels>(path, MODEL_KIND, MODEL_VERSION)?;
    records
        .into_iter()
        .next()
        .ok_or_else(|| ContainerError::CorruptFile("model file has no record".into()))
}

/// Simplex check used by tests and the verification tools: masked class
/// log-probabilities must exponentiate and sum to one.
pub fn class_log_probs(models: &IdmModels, s: &[f64], s_prime: &[f64]) -> Result<Vec<f64>, IdmError> {
    check_dim(models.feature_dim, s, s_prime)?;
    let input = pair_input(s, s_prime);
    let mut cache = ForwardCache::default();
    let logits = models.classifier.forward(&input, &mut cache);
    Ok(log_softmax_masked(logits, &models.present))
}
