//! Independent correctness oracles for the acceptance suite.
//!
//! Nothing here is needed to run the pipeline; these are instruments that
//! check it from the outside: a hand-constructible segment scorer, an
//! exhaustive segmentation enumerator, a finite-difference gradient checker,
//! and audits that re-execute recorded collection data. Tie-breaking is
//! deliberately NOT reimplemented here — equality tests must compare parser
//! semantics against parser semantics, not against a second tie-break.

use thiserror::Error;

use skillparse::collector::{IdmDataset, RawPositive};
use skillparse::idm::{ScoreEntry, ScoreTable};
use skillparse::parser::{SegmentScorer, MAX_BRUTEFORCE_BOUNDARIES};
use skillparse::primitives::{
    execute_primitive, primitive_success, PrimitiveParams, PrimitiveType,
};
use skillparse::rng;
use skillparse::world::TaskSpec;

/// Stream tag for oracle score generation, outside the pipeline's tag space.
const ORACLE_TAG: u64 = 0x40;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("{0} boundaries exceed the exhaustive limit of {MAX_BRUTEFORCE_BOUNDARIES}")]
    TooLarge(usize),
    #[error("need at least 2 boundaries, got {0}")]
    TooSmall(usize),
    #[error("finite-difference step must be positive and finite, got {0}")]
    BadStep(f64),
}

/// A segment scorer with explicitly assigned log-scores: every feasible
/// boundary pair gets a finite score per class, so parser behavior can be
/// checked against hand-computable inputs instead of trained networks.
#[derive(Debug, Clone)]
pub struct OracleScoreTable {
    pub boundaries: Vec<usize>,
    scores: Vec<[f64; PrimitiveType::COUNT]>,
}

impl OracleScoreTable {
    /// All-zero scores over the given ascending boundary list.
    pub fn new(boundaries: Vec<usize>) -> OracleScoreTable {
        assert!(
            boundaries.len() >= 2 && boundaries.windows(2).all(|w| w[0] < w[1]),
            "boundaries must be ascending with at least two entries"
        );
        let n = boundaries.len();
        OracleScoreTable {
            boundaries,
            scores: vec![[0.0; PrimitiveType::COUNT]; n * n],
        }
    }

    /// Independent scores drawn uniformly from [-8, 0) for every pair and
    /// class, keyed by `seed`.
    pub fn random(seed: u64, boundaries: Vec<usize>) -> OracleScoreTable {
        let mut table = OracleScoreTable::new(boundaries);
        let mut stream = rng::derive_rng(seed, &[ORACLE_TAG]);
        let n = table.boundaries.len();
        for ti in 0..n {
            for bi in (ti + 1)..n {
                for c in 0..PrimitiveType::COUNT {
                    table.scores[ti * n + bi][c] = rng::uniform(&mut stream, -8.0, 0.0);
                }
            }
        }
        table
    }

    /// Assign one (start boundary, end boundary, class) score.
    pub fn set(&mut self, ti: usize, bi: usize, p: PrimitiveType, value: f64) {
        assert!(ti < bi && bi < self.boundaries.len(), "boundary pair out of range");
        let n = self.boundaries.len();
        self.scores[ti * n + bi][p.index()] = value;
    }

    fn position(&self, frame: usize) -> usize {
        self.boundaries
            .iter()
            .position(|&b| b == frame)
            .expect("scored frame is a declared boundary")
    }
}

impl SegmentScorer for OracleScoreTable {
    fn score(&self, t_start: usize, t_end: usize) -> ScoreTable {
        let n = self.boundaries.len();
        let row = &self.scores[self.position(t_start) * n + self.position(t_end)];
        let entries = PrimitiveType::ALL
            .into_iter()
            .map(|p| ScoreEntry {
                log_prim: row[p.index()],
                x_star: (p != PrimitiveType::Other)
                    .then(|| PrimitiveParams(vec![0.5; p.param_dim()])),
                log_q: None,
                log_score: row[p.index()],
            })
            .collect();
        ScoreTable { entries }
    }
}

/// All contiguous segmentations over `n` candidate boundaries, as ascending
/// index lists that keep the first and last position: exactly `2^(n-2)`
/// items. Pair with [`class_assignments`] to span per-segment type choices.
pub fn enumerate_segmentations(
    n_boundaries: usize,
) -> Result<impl Iterator<Item = Vec<usize>>, VerifyError> {
    if n_boundaries < 2 {
        return Err(VerifyError::TooSmall(n_boundaries));
    }
    if n_boundaries > MAX_BRUTEFORCE_BOUNDARIES {
        return Err(VerifyError::TooLarge(n_boundaries));
    }
    let interior = n_boundaries - 2;
    Ok((0u32..(1u32 << interior)).map(move |mask| {
        let mut subset = Vec::with_capacity(interior + 2);
        subset.push(0);
        for i in 0..interior {
            if mask & (1 << i) != 0 {
                subset.push(i + 1);
            }
        }
        subset.push(n_boundaries - 1);
        subset
    }))
}

/// All per-segment class choices: `classes^segments` vectors in
/// lexicographic order.
pub fn class_assignments(
    segments: usize,
    classes: usize,
) -> impl Iterator<Item = Vec<usize>> {
    let total = classes.pow(segments as u32);
    (0..total).map(move |mut code| {
        let mut assignment = vec![0usize; segments];
        for slot in assignment.iter_mut().rev() {
            *slot = code % classes;
            code /= classes;
        }
        assignment
    })
}

/// Central-difference gradient estimate of `loss` at `params`.
pub fn finite_difference_grad<F: FnMut(&[f64]) -> f64>(
    mut loss: F,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>, VerifyError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(VerifyError::BadStep(h));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let plus = loss(&probe);
        probe[i] = params[i] - h;
        let minus = loss(&probe);
        probe[i] = params[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative disagreement between two gradients: `|a - n| / max(|a| + |n|, ε)`
/// in the Euclidean norm.
pub fn gradient_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut diff = 0.0;
    let mut scale = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        diff += (a - n) * (a - n);
        scale += a * a + n * n;
    }
    diff.sqrt() / scale.sqrt().max(1e-12)
}

/// Outcome of re-executing recorded positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositiveAudit {
    pub checked: usize,
    pub failures: usize,
}

/// Re-run every recorded positive from its stored start state and count the
/// ones that no longer succeed or no longer land on the stored end state.
pub fn audit_positives(spec: &TaskSpec, audits: &[RawPositive]) -> PositiveAudit {
    let mut failures = 0;
    for audit in audits {
        let seg = execute_primitive(spec, &audit.start, audit.p, &audit.x);
        if !primitive_success(&seg, audit.p, &audit.x) || seg.final_state != audit.end {
            failures += 1;
        }
    }
    PositiveAudit {
        checked: audits.len(),
        failures,
    }
}

/// Per-class weight totals and the `other` sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetAudit {
    pub class_mass: [f64; PrimitiveType::COUNT],
    pub class_counts: [usize; PrimitiveType::COUNT],
}

/// Sum sample weights per class; balanced datasets carry unit mass per
/// present class.
pub fn audit_dataset(data: &IdmDataset) -> DatasetAudit {
    let mut class_mass = [0.0; PrimitiveType::COUNT];
    let mut class_counts = [0usize; PrimitiveType::COUNT];
    for sample in &data.samples {
        class_mass[sample.p.index()] += sample.weight;
        class_counts[sample.p.index()] += 1;
    }
    DatasetAudit {
        class_mass,
        class_counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use skillparse::collector::{collect_dataset, CollectorConfig};
    use skillparse::parser::parse_boundaries_dp;

    #[test]
    fn enumeration_counts_match_the_closed_form() {
        assert_eq!(enumerate_segmentations(3).unwrap().count(), 2);
        assert_eq!(enumerate_segmentations(4).unwrap().count(), 4);
        for n in 2..=12 {
            assert_eq!(enumerate_segmentations(n).unwrap().count(), 1 << (n - 2));
        }
        assert_eq!(
            enumerate_segmentations(19).err(),
            Some(VerifyError::TooLarge(19))
        );
        assert_eq!(
            enumerate_segmentations(1).err(),
            Some(VerifyError::TooSmall(1))
        );
    }

    #[test]
    fn enumerated_subsets_are_ascending_and_anchored() {
        for subset in enumerate_segmentations(6).unwrap() {
            assert_eq!(subset[0], 0);
            assert_eq!(*subset.last().unwrap(), 5);
            assert!(subset.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn class_assignments_cover_the_product_space() {
        let all: Vec<Vec<usize>> = class_assignments(3, 5).collect();
        assert_eq!(all.len(), 125);
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[124], vec![4, 4, 4]);
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 125);
    }

    /// A third, dead-simple implementation: enumerate every segmentation and
    /// every class assignment, score left to right, and keep the best total.
    /// The dynamic program must land on exactly this number.
    #[test]
    fn exhaustive_expansion_matches_the_dynamic_program() {
        for trial in 0..20u64 {
            let boundaries = vec![0, 2, 4, 6, 8];
            let oracle = OracleScoreTable::random(trial, boundaries.clone());
            let alpha = 0.1f64;
            let log_alpha = alpha.ln();
            let mut best = f64::NEG_INFINITY;
            for subset in enumerate_segmentations(boundaries.len()).unwrap() {
                let segments = subset.len() - 1;
                if subset
                    .windows(2)
                    .any(|w| boundaries[w[1]] - boundaries[w[0]] < 2)
                {
                    continue;
                }
                for classes in class_assignments(segments, PrimitiveType::COUNT) {
                    let mut total = 0.0;
                    for (w, &class) in subset.windows(2).zip(&classes) {
                        let p = PrimitiveType::from_index(class).unwrap();
                        let table = oracle.score(boundaries[w[0]], boundaries[w[1]]);
                        let penalty = if p == PrimitiveType::Other { log_alpha } else { 0.0 };
                        total += penalty + table.log_score(p);
                    }
                    if total > best {
                        best = total;
                    }
                }
            }
            let parsed = parse_boundaries_dp(&oracle, &boundaries, alpha, trial).unwrap();
            assert_eq!(parsed.total_log_score, best, "trial {trial}");
        }
    }

    #[test]
    fn oracle_tables_are_reproducible_and_editable() {
        let a = OracleScoreTable::random(9, vec![0, 3, 6]);
        let b = OracleScoreTable::random(9, vec![0, 3, 6]);
        assert_eq!(a.score(0, 6), b.score(0, 6));
        assert!(a.score(3, 6).log_score(PrimitiveType::Grasp) < 0.0);

        let mut c = OracleScoreTable::new(vec![0, 3, 6]);
        c.set(0, 2, PrimitiveType::Push, -2.5);
        assert_eq!(c.score(0, 6).log_score(PrimitiveType::Push), -2.5);
        assert_eq!(c.score(0, 3).log_score(PrimitiveType::Push), 0.0);
        assert!(c.score(0, 6).entry(PrimitiveType::Other).x_star.is_none());
        assert!(c.score(0, 6).entry(PrimitiveType::Reach).x_star.is_some());
    }

    #[test]
    fn finite_differences_recover_a_quadratic_gradient() {
        let loss = |theta: &[f64]| theta.iter().map(|t| t * t).sum::<f64>();
        let grad = finite_difference_grad(loss, &[1.0, 2.0], 1e-5).unwrap();
        assert!((grad[0] - 2.0).abs() < 1e-6);
        assert!((grad[1] - 4.0).abs() < 1e-6);
        assert_eq!(
            finite_difference_grad(loss, &[1.0], 0.0).unwrap_err(),
            VerifyError::BadStep(0.0)
        );
    }

    #[test]
    fn relative_error_separates_agreement_from_drift() {
        let a = vec![1.0, -2.0, 3.0];
        assert_eq!(gradient_relative_error(&a, &a), 0.0);
        let drifted = vec![1.0, -2.0, 3.1];
        let err = gradient_relative_error(&a, &drifted);
        assert!(err > 1e-3 && err < 0.1, "unexpected error {err}");
    }

    #[test]
    fn collection_audits_pass_clean_data_and_catch_tampering() {
        let spec = TaskSpec::pick_place_lite();
        let cfg = CollectorConfig {
            episodes: 10,
            seed: 3,
            ..CollectorConfig::default()
        };
        let (data, audits, _) = collect_dataset(&spec, &cfg).unwrap();

        let clean = audit_positives(&spec, &audits);
        assert_eq!(clean.checked, audits.len());
        assert_eq!(clean.failures, 0);

        let mut tampered = audits.clone();
        tampered[0].end.gripper[0] += 1.0;
        let caught = audit_positives(&spec, &tampered);
        assert_eq!(caught.failures, 1);

        let report = audit_dataset(&data);
        for p in data.present_types() {
            assert!(
                (report.class_mass[p.index()] - 1.0).abs() < 1e-9,
                "class {p:?} mass {}",
                report.class_mass[p.index()]
            );
        }
        assert_eq!(
            report.class_counts[PrimitiveType::Other.index()],
            cfg.episodes * cfg.negatives_per_episode
        );
    }
}
