//! Closed-loop manipulation skills built from motor actions.
//!
//! Each skill drives the gripper with a deterministic proportional controller:
//! rise to a safe height, translate and rotate over the target, descend, then
//! run a skill-specific tail (close, open, or a relative displacement). The
//! controller is a pure function of the world state, so executing a skill from
//! the same snapshot always reproduces the same segment bit for bit.

use serde::{Deserialize, Serialize};

use crate::math::angle_diff;
use crate::rng;
use crate::world::{
    self, Grip, MotorAction, TaskSpec, WorldState, MAX_ROTATION, MAX_TRANSLATION,
    WORKSPACE_MAX, WORKSPACE_MIN, Z_MAX,
};
use rand_chacha::ChaCha8Rng;

/// Controller position tolerance (meters, per axis).
pub const POSITION_TOL: f64 = 0.005;
/// Controller yaw tolerance (radians).
pub const YAW_TOL: f64 = 0.02;
/// Transit height for the rise phase.
pub const Z_SAFE: f64 = 0.25;
/// Hard per-skill step budget.
pub const STEP_CAP: usize = 400;
/// A push must move some object at least this far to count.
pub const PUSH_MIN_DISPLACEMENT: f64 = 0.02;
/// A place must leave the object within this distance of the commanded spot.
pub const PLACE_TOL: f64 = 0.05;

/// Skill identity. `Other` marks spans produced by raw motor actions; it has
/// no parameters and cannot be executed as a skill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimitiveType {
    Reach,
    Grasp,
    Place,
    Push,
    Other,
}

impl PrimitiveType {
    /// Number of classes including `Other`.
    pub const COUNT: usize = 5;
    /// Executable skills, in canonical order.
    pub const LIBRARY: [PrimitiveType; 4] = [
        PrimitiveType::Reach,
        PrimitiveType::Grasp,
        PrimitiveType::Place,
        PrimitiveType::Push,
    ];
    /// All classes, in canonical order.
    pub const ALL: [PrimitiveType; 5] = [
        PrimitiveType::Reach,
        PrimitiveType::Grasp,
        PrimitiveType::Place,
        PrimitiveType::Push,
        PrimitiveType::Other,
    ];

    pub fn index(self) -> usize {
        match self {
            PrimitiveType::Reach => 0,
            PrimitiveType::Grasp => 1,
            PrimitiveType::Place => 2,
            PrimitiveType::Push => 3,
            PrimitiveType::Other => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<PrimitiveType> {
        PrimitiveType::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveType::Reach => "reach",
            PrimitiveType::Grasp => "grasp",
            PrimitiveType::Place => "place",
            PrimitiveType::Push => "push",
            PrimitiveType::Other => "other",
        }
    }

    /// Length of this skill's parameter vector.
    pub fn param_dim(self) -> usize {
        match self {
            PrimitiveType::Reach | PrimitiveType::Grasp | PrimitiveType::Place => 4,
            PrimitiveType::Push => 7,
            PrimitiveType::Other => 0,
        }
    }
}

/// Continuous skill parameters: a target pose `(x, y, z, yaw)`, plus a
/// relative displacement `(dx, dy, dz)` for pushes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveParams(pub Vec<f64>);

impl PrimitiveParams {
    pub fn pose(x: f64, y: f64, z: f64, yaw: f64) -> PrimitiveParams {
        PrimitiveParams(vec![x, y, z, yaw])
    }

    pub fn push(x: f64, y: f64, z: f64, yaw: f64, dx: f64, dy: f64, dz: f64) -> PrimitiveParams {
        PrimitiveParams(vec![x, y, z, yaw, dx, dy, dz])
    }

    pub fn none() -> PrimitiveParams {
        PrimitiveParams(Vec::new())
    }

    pub fn target(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn displacement(&self) -> [f64; 3] {
        if self.0.len() >= 7 {
            [self.0[4], self.0[5], self.0[6]]
        } else {
            [0.0, 0.0, 0.0]
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One executed skill: the visited states with the actions taken from them,
/// plus the state the skill ended in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub transitions: Vec<(WorldState, MotorAction)>,
    pub final_state: WorldState,
    /// Set when the step budget ran out before the controller finished.
    pub timed_out: bool,
}

impl Segment {
    pub fn initial_state(&self) -> &WorldState {
        &self.transitions[0].0
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &MotorAction> {
        self.transitions.iter().map(|(_, a)| a)
    }
}

/// Inclusive lower / upper bounds for each parameter dimension of a skill.
///
/// Planar targets span the whole table. Grasp and push targets keep their
/// height near the surface (where attachment and dragging are possible);
/// reach and place may end anywhere in the vertical travel range.
pub fn param_bounds(p: PrimitiveType) -> Vec<(f64, f64)> {
    use std::f64::consts::FRAC_PI_2;
    let xy = [
        (WORKSPACE_MIN[0], WORKSPACE_MAX[0]),
        (WORKSPACE_MIN[1], WORKSPACE_MAX[1]),
    ];
    match p {
        PrimitiveType::Reach | PrimitiveType::Place => {
            vec![xy[0], xy[1], (0.0, 0.25), (-FRAC_PI_2, FRAC_PI_2)]
        }
        PrimitiveType::Grasp => vec![xy[0], xy[1], (0.0, 0.10), (-FRAC_PI_2, FRAC_PI_2)],
        PrimitiveType::Push => vec![
            xy[0],
            xy[1],
            (0.0, 0.10),
            (-FRAC_PI_2, FRAC_PI_2),
            (-0.15, 0.15),
            (-0.15, 0.15),
            (-0.15, 0.15),
        ],
        PrimitiveType::Other => Vec::new(),
    }
}

/// How `sample_params` draws planar targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Every dimension uniform over its bounds.
    Uniform,
    /// The `(x, y)` target is drawn near a uniformly chosen object center
    /// (isotropic Gaussian, clamped to the table); the remaining dimensions
    /// stay uniform.
    ObjectPrior,
}

/// Default standard deviation of the object-centered target prior.
pub const PRIOR_SIGMA: f64 = 0.04;

/// Draw a random parameter vector for skill `p` from its legal ranges, using
/// the default prior width.
pub fn sample_params(
    rng: &mut ChaCha8Rng,
    p: PrimitiveType,
    state: &WorldState,
    mode: PriorMode,
) -> PrimitiveParams {
    sample_params_sigma(rng, p, state, mode, PRIOR_SIGMA)
}

/// [`sample_params`] with an explicit object-prior width. A tighter prior
/// concentrates targets on objects and raises the rollout success rate; a
/// wider one covers more of the workspace.
pub fn sample_params_sigma(
    rng: &mut ChaCha8Rng,
    p: PrimitiveType,
    state: &WorldState,
    mode: PriorMode,
    sigma: f64,
) -> PrimitiveParams {
    assert!(sigma.is_finite() && sigma > 0.0, "prior sigma must be positive");
    let bounds = param_bounds(p);
    let mut values: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| rng::uniform(rng, lo, hi))
        .collect();
    if mode == PriorMode::ObjectPrior && !values.is_empty() && !state.objects.is_empty() {
        let idx = rng::uniform_idx(rng, state.objects.len());
        let center = state.objects[idx].pos;
        for axis in 0..2 {
            let v = center[axis] + sigma * rng::standard_normal(rng);
            values[axis] = v.clamp(WORKSPACE_MIN[axis], WORKSPACE_MAX[axis]);
        }
    }
    PrimitiveParams(values)
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Rise,
    Translate,
    Descend,
    Tail,
    Done,
}

/// Grip command that preserves the current attachment.
fn hold_grip(state: &WorldState) -> Grip {
    if state.held.is_some() {
        Grip::Close
    } else {
        Grip::Open
    }
}

fn aligned_xy_yaw(state: &WorldState, target: &[f64; 4]) -> bool {
    (state.gripper[0] - target[0]).abs() <= POSITION_TOL
        && (state.gripper[1] - target[1]).abs() <= POSITION_TOL
        && angle_diff(target[3], state.yaw).abs() <= YAW_TOL
}

/// Proportional pose step toward `(tx, ty, tyaw)` at height target `tz`,
/// with every component clamped to the motor limits.
fn pose_step(state: &WorldState, tx: f64, ty: f64, tz: f64, tyaw: f64, grip: Grip) -> MotorAction {
    MotorAction {
        dx: (tx - state.gripper[0]).clamp(-MAX_TRANSLATION, MAX_TRANSLATION),
        dy: (ty - state.gripper[1]).clamp(-MAX_TRANSLATION, MAX_TRANSLATION),
        dz: (tz - state.gripper[2]).clamp(-MAX_TRANSLATION, MAX_TRANSLATION),
        dyaw: angle_diff(tyaw, state.yaw).clamp(-MAX_ROTATION, MAX_ROTATION),
        grip,
    }
}

/// Run skill `p` with parameters `x` from `start`, returning the full segment.
pub fn execute_primitive(
    spec: &TaskSpec,
    start: &WorldState,
    p: PrimitiveType,
    x: &PrimitiveParams,
) -> Segment {
    assert!(
        p != PrimitiveType::Other,
        "the `other` class has no controller"
    );
    assert_eq!(x.0.len(), p.param_dim(), "parameter length mismatch");

    let target = x.target();
    let mut state = start.clone();
    let mut transitions: Vec<(WorldState, MotorAction)> = Vec::new();
    let mut timed_out = false;

    let mut phase = if aligned_xy_yaw(&state, &target) {
        Phase::Descend
    } else if state.gripper[2] >= Z_SAFE - POSITION_TOL {
        Phase::Translate
    } else {
        Phase::Rise
    };
    // Fixed at tail entry for pushes.
    let mut displace_goal = [0.0f64; 3];

    while phase != Phase::Done {
        if transitions.len() >= STEP_CAP {
            timed_out = true;
            break;
        }
        let action = match phase {
            Phase::Rise => {
                if state.gripper[2] >= Z_SAFE - POSITION_TOL {
                    phase = Phase::Translate;
                    continue;
                }
                pose_step(
                    &state,
                    state.gripper[0],
                    state.gripper[1],
                    Z_SAFE,
                    state.yaw,
                    hold_grip(&state),
                )
            }
            Phase::Translate => {
                if aligned_xy_yaw(&state, &target) {
                    phase = Phase::Descend;
                    continue;
                }
                pose_step(
                    &state,
                    target[0],
                    target[1],
                    state.gripper[2],
                    target[3],
                    hold_grip(&state),
                )
            }
            Phase::Descend => {
                if (state.gripper[2] - target[2]).abs() <= POSITION_TOL {
                    phase = Phase::Tail;
                    if p == PrimitiveType::Push {
                        let d = x.displacement();
                        displace_goal = [
                            (target[0] + d[0]).clamp(WORKSPACE_MIN[0], WORKSPACE_MAX[0]),
                            (target[1] + d[1]).clamp(WORKSPACE_MIN[1], WORKSPACE_MAX[1]),
                            (target[2] + d[2]).clamp(0.0, Z_MAX),
                        ];
                    }
                    continue;
                }
                pose_step(
                    &state,
                    state.gripper[0],
                    state.gripper[1],
                    target[2],
                    state.yaw,
                    hold_grip(&state),
                )
            }
            Phase::Tail => match p {
                PrimitiveType::Reach => {
                    phase = Phase::Done;
                    continue;
                }
                PrimitiveType::Grasp => {
                    if state.held.is_some() || state.aperture < 0.1 {
                        phase = Phase::Done;
                        continue;
                    }
                    MotorAction::idle(Grip::Close)
                }
                PrimitiveType::Place => {
                    if state.held.is_none() && state.aperture >= 1.0 {
                        phase = Phase::Done;
                        continue;
                    }
                    MotorAction::idle(Grip::Open)
                }
                PrimitiveType::Push => {
                    let reached = (state.gripper[0] - displace_goal[0]).abs() <= POSITION_TOL
                        && (state.gripper[1] - displace_goal[1]).abs() <= POSITION_TOL
                        && (state.gripper[2] - displace_goal[2]).abs() <= POSITION_TOL;
                    if reached {
                        phase = Phase::Done;
                        continue;
                    }
                    pose_step(
                        &state,
                        displace_goal[0],
                        displace_goal[1],
                        displace_goal[2],
                        state.yaw,
                        hold_grip(&state),
                    )
                }
                PrimitiveType::Other => unreachable!(),
            },
            Phase::Done => unreachable!(),
        };
        let before = state.clone();
        world::step(spec, &mut state, &action);
        transitions.push((before, action));
    }

    // A skill always spans at least one transition.
    if transitions.is_empty() {
        let action = MotorAction::idle(hold_grip(&state));
        let before = state.clone();
        world::step(spec, &mut state, &action);
        transitions.push((before, action));
    }

    Segment {
        transitions,
        final_state: state,
        timed_out,
    }
}

/// Whether an executed segment achieved skill `p`'s postcondition.
pub fn primitive_success(seg: &Segment, p: PrimitiveType, x: &PrimitiveParams) -> bool {
    if seg.timed_out {
        return false;
    }
    let first = seg.initial_state();
    let last = &seg.final_state;
    match p {
        PrimitiveType::Reach => {
            let t = x.target();
            (last.gripper[0] - t[0]).abs() <= POSITION_TOL
                && (last.gripper[1] - t[1]).abs() <= POSITION_TOL
                && (last.gripper[2] - t[2]).abs() <= POSITION_TOL
                && angle_diff(t[3], last.yaw).abs() <= YAW_TOL
        }
        PrimitiveType::Grasp => first.held.is_none() && last.held.is_some(),
        PrimitiveType::Place => {
            let t = x.target();
            match first.held {
                Some(obj) if last.held.is_none() => {
                    let dx = last.objects[obj].pos[0] - t[0];
                    let dy = last.objects[obj].pos[1] - t[1];
                    (dx * dx + dy * dy).sqrt() <= PLACE_TOL
                }
                _ => false,
            }
        }
        PrimitiveType::Push => first
            .objects
            .iter()
            .zip(&last.objects)
            .any(|(a, b)| {
                let dx = b.pos[0] - a.pos[0];
                let dy = b.pos[1] - a.pos[1];
                (dx * dx + dy * dy).sqrt() >= PUSH_MIN_DISPLACEMENT
            }),
        PrimitiveType::Other => false,
    }
}
