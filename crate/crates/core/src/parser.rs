//! Demonstration segmentation.
//!
//! A demonstration is split at candidate frame boundaries into consecutive
//! segments, each explained by one skill (or the unstructured `other`
//! class). Dynamic programming over the boundaries maximizes the summed
//! per-segment log-score, with a multiplicative penalty `alpha` on `other`
//! segments. An exhaustive enumerator serves as a cross-check oracle and a
//! greedy scan as a weaker baseline; all three share one scoring interface
//! and one deterministic tie-break order, and accumulate scores left to
//! right so their totals are bit-for-bit comparable.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{featurize, feature_dim};
use crate::demos::Demonstration;
use crate::idm::{idm_score, IdmError, IdmModels, ScoreTable};
use crate::io::{self, ContainerError};
use crate::primitives::{execute_primitive, PrimitiveParams, PrimitiveType};
use crate::world::{task_success, TaskSpec};

/// Largest boundary count the exhaustive enumerator accepts.
pub const MAX_BRUTEFORCE_BOUNDARIES: usize = 18;

/// Shortest admissible segment, in frames.
pub const MIN_SEGMENT_FRAMES: usize = 2;

/// One parsed span of a demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSegment {
    pub t_start: usize,
    pub t_end: usize,
    pub p: PrimitiveType,
    /// Present exactly when `p` is a library skill.
    pub x: Option<PrimitiveParams>,
    /// Segment contribution to the parse total, penalty included.
    pub log_score: f64,
}

/// A full segmentation of one demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSequence {
    pub demo_id: u64,
    pub segments: Vec<ParsedSegment>,
    pub total_log_score: f64,
}

impl ParsedSequence {
    pub fn boundaries(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.segments.iter().map(|s| s.t_start).collect();
        if let Some(last) = self.segments.last() {
            b.push(last.t_end);
        }
        b
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("demonstration has no frames")]
    EmptyDemo,
    #[error("alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("stride must be at least 1")]
    BadStride,
    #[error("candidate boundaries must start at 0, be strictly increasing, and have at least two entries")]
    BadBoundaries,
    #[error("{0} candidate boundaries exceed the enumeration bound of {MAX_BRUTEFORCE_BOUNDARIES}")]
    TooLarge(usize),
    #[error(transparent)]
    Idm(#[from] IdmError),
}

/// Anything that can score a candidate segment between two frame indices.
///
/// Implementations must be pure functions of the index pair so parses are
/// independent of evaluation order.
pub trait SegmentScorer: Sync {
    fn score(&self, t_start: usize, t_end: usize) -> ScoreTable;
}

/// Scorer backed by trained inverse models over a demonstration's frames.
pub struct IdmScorer<'a> {
    models: &'a IdmModels,
    features: Vec<Vec<f64>>,
}

impl<'a> IdmScorer<'a> {
    pub fn new(
        spec: &TaskSpec,
        demo: &Demonstration,
        models: &'a IdmModels,
    ) -> Result<IdmScorer<'a>, ParseError> {
        if models.feature_dim != feature_dim(spec) {
            return Err(ParseError::Idm(IdmError::DimensionMismatch {
                expected: models.feature_dim,
                got: feature_dim(spec),
            }));
        }
        let features = (0..=demo.len())
            .map(|i| featurize(spec, demo.state(i)))
            .collect();
        Ok(IdmScorer { models, features })
    }
}

impl SegmentScorer for IdmScorer<'_> {
    fn score(&self, t_start: usize, t_end: usize) -> ScoreTable {
        idm_score(self.models, &self.features[t_start], &self.features[t_end])
            .expect("dimensions checked at construction")
    }
}

/// Candidate boundary frames: multiples of `stride` plus the final frame.
pub fn candidate_boundaries(frames: usize, stride: usize) -> Vec<usize> {
    let mut b: Vec<usize> = (0..frames).step_by(stride).collect();
    b.push(frames);
    b
}

fn check_inputs(boundaries: &[usize], alpha: f64) -> Result<(), ParseError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ParseError::BadAlpha(alpha));
    }
    let ascending = boundaries.windows(2).all(|w| w[0] < w[1]);
    if boundaries.len() < 2 || boundaries[0] != 0 || !ascending {
        return Err(ParseError::BadBoundaries);
    }
    Ok(())
}

/// A segment must span at least [`MIN_SEGMENT_FRAMES`]; the sole exception is
/// a demonstration too short to contain one, which parses as a single
/// full-span segment.
fn feasible(t_start: usize, t_end: usize, frames: usize) -> bool {
    t_end - t_start >= MIN_SEGMENT_FRAMES
        || (t_start == 0 && t_end == frames && frames < MIN_SEGMENT_FRAMES)
}

fn alpha_term(p: PrimitiveType, log_alpha: f64) -> f64 {
    if p == PrimitiveType::Other {
        log_alpha
    } else {
        0.0
    }
}

/// Total order on complete parses: higher score, then fewer segments, then
/// lexicographically earlier boundaries, then earlier class order. Both the
/// dynamic program and the enumerator resolve ties through this order, which
/// is what makes their outputs comparable segment for segment.
fn parse_cmp(
    score_a: f64,
    bounds_a: &[usize],
    classes_a: &[usize],
    score_b: f64,
    bounds_b: &[usize],
    classes_b: &[usize],
) -> Ordering {
    score_a
        .total_cmp(&score_b)
        .then_with(|| bounds_b.len().cmp(&bounds_a.len()))
        .then_with(|| bounds_b.cmp(bounds_a))
        .then_with(|| classes_b.cmp(classes_a))
}

/// Per-boundary best prefix kept by the dynamic program.
#[derive(Clone)]
struct Cell {
    score: f64,
    bounds: Vec<usize>,
    classes: Vec<usize>,
}

/// Score every feasible boundary pair, in parallel, into a dense table
/// indexed by boundary positions.
fn score_pairs<S: SegmentScorer + ?Sized>(
    scorer: &S,
    boundaries: &[usize],
    frames: usize,
) -> Vec<Option<ScoreTable>> {
    let n = boundaries.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|ti| ((ti + 1)..n).map(move |bi| (ti, bi)))
        .filter(|&(ti, bi)| feasible(boundaries[ti], boundaries[bi], frames))
        .collect();
    let scored: Vec<ScoreTable> = pairs
        .par_iter()
        .map(|&(ti, bi)| scorer.score(boundaries[ti], boundaries[bi]))
        .collect();
    let mut table = vec![None; n * n];
    for ((ti, bi), score) in pairs.into_iter().zip(scored) {
        table[ti * n + bi] = Some(score);
    }
    table
}

fn materialize(
    demo_id: u64,
    boundaries: &[usize],
    bounds: &[usize],
    classes: &[usize],
    tables: &[Option<ScoreTable>],
    n: usize,
    log_alpha: f64,
    total: f64,
) -> ParsedSequence {
    let position = |frame: usize| boundaries.iter().position(|&b| b == frame).unwrap();
    let segments = bounds
        .windows(2)
        .zip(classes)
        .map(|(w, &class)| {
            let p = PrimitiveType::from_index(class).unwrap();
            let table = tables[position(w[0]) * n + position(w[1])]
                .as_ref()
                .expect("chosen segment was scored");
            let entry = table.entry(p);
            ParsedSegment {
                t_start: w[0],
                t_end: w[1],
                p,
                x: entry.x_star.clone(),
                log_score: alpha_term(p, log_alpha) + entry.log_score,
            }
        })
        .collect();
    ParsedSequence {
        demo_id,
        segments,
        total_log_score: total,
    }
}

/// Optimal segmentation by dynamic programming over the boundary list.
pub fn parse_boundaries_dp<S: SegmentScorer + ?Sized>(
    scorer: &S,
    boundaries: &[usize],
    alpha: f64,
    demo_id: u64,
) -> Result<ParsedSequence, ParseError> {
    check_inputs(boundaries, alpha)?;
    let n = boundaries.len();
    let frames = boundaries[n - 1];
    let log_alpha = alpha.ln();
    let tables = score_pairs(scorer, boundaries, frames);

    let mut cells: Vec<Option<Cell>> = vec![None; n];
    cells[0] = Some(Cell {
        score: 0.0,
        bounds: vec![boundaries[0]],
        classes: Vec::new(),
    });
    for bi in 1..n {
        // Best (predecessor, class) under the shared order; prefixes share
        // the appended boundary, so comparing prefixes compares the parses.
        let mut best: Option<(f64, usize, usize)> = None;
        for ti in 0..bi {
            let (table, cell) = match (&tables[ti * n + bi], &cells[ti]) {
                (Some(table), Some(cell)) => (table, cell),
                _ => continue,
            };
            for p in PrimitiveType::ALL {
                let term = alpha_term(p, log_alpha) + table.entry(p).log_score;
                let cand = cell.score + term;
                let replace = match best {
                    None => true,
                    Some((b_score, b_ti, b_class)) => {
                        let b_cell = cells[b_ti].as_ref().unwrap();
                        parse_cmp(
                            cand,
                            &cell.bounds,
                            &cell.classes,
                            b_score,
                            &b_cell.bounds,
                            &b_cell.classes,
                        )
                        .then(p.index().cmp(&b_class).reverse())
                            == Ordering::Greater
                    }
                };
                if replace {
                    best = Some((cand, ti, p.index()));
                }
            }
        }
        if let Some((score, ti, class)) = best {
            let prev = cells[ti].as_ref().unwrap();
            let mut bounds = prev.bounds.clone();
            bounds.push(boundaries[bi]);
            let mut classes = prev.classes.clone();
            classes.push(class);
            cells[bi] = Some(Cell {
                score,
                bounds,
                classes,
            });
        }
    }
    let last = cells[n - 1]
        .take()
        .expect("a full-span segment is always feasible");
    Ok(materialize(
        demo_id,
        boundaries,
        &last.bounds,
        &last.classes,
        &tables,
        n,
        log_alpha,
        last.score,
    ))
}

/// Exhaustive oracle: enumerate every segmentation over the boundary list
/// and keep the best under the shared tie-break order.
pub fn parse_boundaries_bruteforce<S: SegmentScorer + ?Sized>(
    scorer: &S,
    boundaries: &[usize],
    alpha: f64,
    demo_id: u64,
) -> Result<ParsedSequence, ParseError> {
    check_inputs(boundaries, alpha)?;
    let n = boundaries.len();
    if n > MAX_BRUTEFORCE_BOUNDARIES {
        return Err(ParseError::TooLarge(n));
    }
    let frames = boundaries[n - 1];
    let log_alpha = alpha.ln();
    let tables = score_pairs(scorer, boundaries, frames);

    let interior = n - 2;
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << interior) {
        let mut bounds = Vec::with_capacity(n);
        bounds.push(boundaries[0]);
        for k in 0..interior {
            if mask & (1 << k) != 0 {
                bounds.push(boundaries[k + 1]);
            }
        }
        bounds.push(boundaries[n - 1]);

        let mut acc = 0.0;
        let mut classes = Vec::with_capacity(bounds.len() - 1);
        let mut ok = true;
        for w in bounds.windows(2) {
            if !feasible(w[0], w[1], frames) {
                ok = false;
                break;
            }
            let position = |frame: usize| boundaries.iter().position(|&b| b == frame).unwrap();
            let table = tables[position(w[0]) * n + position(w[1])]
                .as_ref()
                .expect("feasible pair was scored");
            // Same accumulation and class tie-break as one DP transition.
            let mut seg_best: Option<(f64, usize)> = None;
            for p in PrimitiveType::ALL {
                let cand = acc + alpha_term(p, log_alpha) + table.entry(p).log_score;
                if seg_best.map_or(true, |(s, _)| cand > s) {
                    seg_best = Some((cand, p.index()));
                }
            }
            let (next, class) = seg_best.unwrap();
            acc = next;
            classes.push(class);
        }
        if !ok {
            continue;
        }
        let replace = match &best {
            None => true,
            Some((b_score, b_bounds, b_classes)) => {
                parse_cmp(acc, &bounds, &classes, *b_score, b_bounds, b_classes)
                    == Ordering::Greater
            }
        };
        if replace {
            best = Some((acc, bounds, classes));
        }
    }
    let (score, bounds, classes) = best.expect("the full-span segmentation is always feasible");
    Ok(materialize(
        demo_id,
        boundaries,
        &bounds,
        &classes,
        &tables,
        n,
        log_alpha,
        score,
    ))
}

/// Greedy baseline: from each boundary, commit to the best-scoring next
/// segment, never revisiting. Boundaries that would strand the scan short of
/// the final frame are skipped.
pub fn parse_boundaries_greedy<S: SegmentScorer + ?Sized>(
    scorer: &S,
    boundaries: &[usize],
    alpha: f64,
    demo_id: u64,
) -> Result<ParsedSequence, ParseError> {
    check_inputs(boundaries, alpha)?;
    let n = boundaries.len();
    let frames = boundaries[n - 1];
    let log_alpha = alpha.ln();

    let mut segments = Vec::new();
    let mut total = 0.0;
    let mut ti = 0;
    while ti < n - 1 {
        let t_frame = boundaries[ti];
        let options: Vec<(usize, ScoreTable)> = ((ti + 1)..n)
            .filter(|&bi| {
                let i_frame = boundaries[bi];
                feasible(t_frame, i_frame, frames)
                    && (bi == n - 1 || feasible(i_frame, frames, frames))
            })
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&bi| (bi, scorer.score(t_frame, boundaries[bi])))
            .collect();
        // Scan order (ascending boundary, class order) with strict
        // improvement keeps the earliest option on ties.
        let mut best: Option<(f64, usize, PrimitiveType)> = None;
        for (bi, table) in &options {
            for p in PrimitiveType::ALL {
                let term = alpha_term(p, log_alpha) + table.entry(p).log_score;
                if best.map_or(true, |(s, _, _)| term > s) {
                    best = Some((term, *bi, p));
                }
            }
        }
        let (term, bi, p) = best.expect("the final boundary is always reachable");
        let table = options.iter().find(|(b, _)| *b == bi).map(|(_, t)| t).unwrap();
        let entry = table.entry(p);
        segments.push(ParsedSegment {
            t_start: t_frame,
            t_end: boundaries[bi],
            p,
            x: entry.x_star.clone(),
            log_score: term,
        });
        total += term;
        ti = bi;
    }
    Ok(ParsedSequence {
        demo_id,
        segments,
        total_log_score: total,
    })
}

fn demo_boundaries(demo: &Demonstration, stride: usize) -> Result<Vec<usize>, ParseError> {
    if demo.is_empty() {
        return Err(ParseError::EmptyDemo);
    }
    if stride < 1 {
        return Err(ParseError::BadStride);
    }
    Ok(candidate_boundaries(demo.len(), stride))
}

/// Optimal parse of one demonstration under trained models.
pub fn parse_dp(
    spec: &TaskSpec,
    demo: &Demonstration,
    models: &IdmModels,
    alpha: f64,
    stride: usize,
) -> Result<ParsedSequence, ParseError> {
    let boundaries = demo_boundaries(demo, stride)?;
    let scorer = IdmScorer::new(spec, demo, models)?;
    parse_boundaries_dp(&scorer, &boundaries, alpha, demo.seed)
}

/// Exhaustive-oracle parse of one demonstration (small demos only).
pub fn parse_bruteforce(
    spec: &TaskSpec,
    demo: &Demonstration,
    models: &IdmModels,
    alpha: f64,
    stride: usize,
) -> Result<ParsedSequence, ParseError> {
    let boundaries = demo_boundaries(demo, stride)?;
    let scorer = IdmScorer::new(spec, demo, models)?;
    parse_boundaries_bruteforce(&scorer, &boundaries, alpha, demo.seed)
}

/// Greedy parse of one demonstration.
pub fn parse_greedy(
    spec: &TaskSpec,
    demo: &Demonstration,
    models: &IdmModels,
    alpha: f64,
    stride: usize,
) -> Result<ParsedSequence, ParseError> {
    let boundaries = demo_boundaries(demo, stride)?;
    let scorer = IdmScorer::new(spec, demo, models)?;
    parse_boundaries_greedy(&scorer, &boundaries, alpha, demo.seed)
}

/// Outcome of executing a parsed sequence in the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayResult {
    pub success: bool,
    pub executed: usize,
    pub aborted_on_other: bool,
}

/// Execute a parse's skills in order from the demonstration's initial state.
/// An `other` segment aborts the replay; it has no controller to run.
pub fn replay(spec: &TaskSpec, parsed: &ParsedSequence, demo: &Demonstration) -> ReplayResult {
    let mut state = demo.state(0).clone();
    let mut executed = 0;
    let mut aborted_on_other = false;
    for segment in &parsed.segments {
        if segment.p == PrimitiveType::Other {
            aborted_on_other = true;
            break;
        }
        let x = segment.x.as_ref().expect("library segment carries parameters");
        let seg = execute_primitive(spec, &state, segment.p, x);
        state = seg.final_state;
        executed += 1;
    }
    ReplayResult {
        success: task_success(spec, &state),
        executed,
        aborted_on_other,
    }
}

const PARSED_KIND: &str = "parsed";
const PARSED_VERSION: u32 = 1;

#[derive(Serialize)]
struct ParsedMeta<'a> {
    task: &'a str,
    count: usize,
}

pub fn save_parsed(
    path: &std::path::Path,
    task: &str,
    parses: &[ParsedSequence],
) -> Result<(), ContainerError> {
    io::write_container(
        path,
        PARSED_KIND,
        PARSED_VERSION,
        &ParsedMeta {
            task,
            count: parses.len(),
        },
        parses,
    )
}

pub fn load_parsed(path: &std::path::Path) -> Result<Vec<ParsedSequence>, ContainerError> {
    let (_, parses) = io::read_container(path, PARSED_KIND, PARSED_VERSION)?;
    Ok(parses)
}
