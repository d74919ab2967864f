//! Deterministic 2.5-D tabletop world.
//!
//! The gripper is a point with a yaw angle and a scalar aperture. Objects are
//! planar footprints (discs and boxes) that live on the table surface; the
//! gripper can attach one object at a time and drag contacted objects when it
//! sweeps low over them. All dynamics are kinematic and fully deterministic
//! given the motor actions, so state transitions can be replayed bit for bit.

pub mod geom;
pub mod task;

use serde::{Deserialize, Serialize};

use crate::rng::{self, tags};
pub use task::{GoalRegion, ObjectSpec, Shape, TaskError, TaskSpec};

/// Horizontal workspace bounds (the table).
pub const WORKSPACE_MIN: [f64; 2] = [0.0, 0.0];
pub const WORKSPACE_MAX: [f64; 2] = [1.0, 1.0];
/// Vertical travel range of the gripper.
pub const Z_MAX: f64 = 0.3;
/// Per-step translation clamp on each of dx, dy, dz.
pub const MAX_TRANSLATION: f64 = 0.02;
/// Per-step yaw clamp.
pub const MAX_ROTATION: f64 = 0.1;
/// Aperture moves at most this far per step.
pub const APERTURE_RATE: f64 = 0.2;
/// Attachment requires the gripper at or below this height.
pub const Z_GRASP: f64 = 0.03;
/// Sweeping below this height drags contacted objects.
pub const Z_PUSH: f64 = 0.05;
/// Attachment requires an object center within this planar distance.
pub const GRASP_RADIUS: f64 = 0.03;
/// Gripper pose after reset: position, yaw, aperture.
pub const HOME_POSITION: [f64; 3] = [0.5, 0.1, 0.25];
pub const HOME_YAW: f64 = 0.0;
pub const HOME_APERTURE: f64 = 1.0;

/// Minimum center clearance between placed objects at reset, beyond the sum
/// of bounding radii.
const RESET_CLEARANCE: f64 = 0.01;
const RESET_ATTEMPTS: usize = 100;

/// Binary grip command carried by a motor action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grip {
    Open,
    Close,
}

/// One low-level control: a pose increment plus a grip command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorAction {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dyaw: f64,
    pub grip: Grip,
}

impl MotorAction {
    pub const DIM: usize = 5;

    pub fn idle(grip: Grip) -> MotorAction {
        MotorAction {
            dx: 0.0,
            dy: 0.0,
            dz: 0.0,
            dyaw: 0.0,
            grip,
        }
    }

    /// Encode as a 5-vector; the grip channel is 1.0 for close, 0.0 for open.
    pub fn to_vec(&self) -> [f64; 5] {
        let g = match self.grip {
            Grip::Close => 1.0,
            Grip::Open => 0.0,
        };
        [self.dx, self.dy, self.dz, self.dyaw, g]
    }

    /// Decode from a 5-vector; grip values at or above 0.5 close the gripper.
    pub fn from_vec(v: [f64; 5]) -> MotorAction {
        MotorAction {
            dx: v[0],
            dy: v[1],
            dz: v[2],
            dyaw: v[3],
            grip: if v[4] >= 0.5 { Grip::Close } else { Grip::Open },
        }
    }
}

/// Pose of one object on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pos: [f64; 2],
    pub theta: f64,
}

/// Complete world snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub gripper: [f64; 3],
    pub yaw: f64,
    pub aperture: f64,
    /// Index of the attached object, if any.
    pub held: Option<usize>,
    pub objects: Vec<ObjectState>,
    pub step_count: usize,
}

/// A task bound to a live state.
#[derive(Debug, Clone)]
pub struct World {
    spec: TaskSpec,
    state: WorldState,
}

impl World {
    /// Build a world and draw its initial state from `(seed, episode)`.
    pub fn new(spec: TaskSpec, seed: u64, episode: u64) -> World {
        let state = reset(&spec, seed, episode);
        World { spec, state }
    }

    /// Build a world pinned to an explicit snapshot (for replay).
    pub fn from_state(spec: TaskSpec, state: WorldState) -> World {
        World { spec, state }
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn set_state(&mut self, state: WorldState) {
        self.state = state;
    }

    pub fn reset(&mut self, seed: u64, episode: u64) {
        self.state = reset(&self.spec, seed, episode);
    }

    pub fn step(&mut self, action: &MotorAction) {
        step(&self.spec, &mut self.state, action);
    }

    pub fn is_success(&self) -> bool {
        task_success(&self.spec, &self.state)
    }
}

fn clamp_xy(p: [f64; 2]) -> [f64; 2] {
    [
        p[0].clamp(WORKSPACE_MIN[0], WORKSPACE_MAX[0]),
        p[1].clamp(WORKSPACE_MIN[1], WORKSPACE_MAX[1]),
    ]
}

/// Draw an initial state. Object centers are rejection-sampled in order so
/// that bounding circles keep a small clearance; a crowded layout falls back
/// to the last sample rather than failing.
pub fn reset(spec: &TaskSpec, seed: u64, episode: u64) -> WorldState {
    let mut rng = rng::derive_rng(seed, &[tags::RESET, episode]);
    let mut objects: Vec<ObjectState> = Vec::with_capacity(spec.objects.len());
    for obj in &spec.objects {
        let mut placed = ObjectState {
            pos: [obj.init_min[0], obj.init_min[1]],
            theta: 0.0,
        };
        for _attempt in 0..RESET_ATTEMPTS {
            let pos = [
                rng::uniform(&mut rng, obj.init_min[0], obj.init_max[0]),
                rng::uniform(&mut rng, obj.init_min[1], obj.init_max[1]),
            ];
            let theta = rng::uniform(
                &mut rng,
                -std::f64::consts::FRAC_PI_4,
                std::f64::consts::FRAC_PI_4,
            );
            placed = ObjectState { pos, theta };
            let clear = objects.iter().zip(&spec.objects).all(|(other, other_spec)| {
                let dx = other.pos[0] - pos[0];
                let dy = other.pos[1] - pos[1];
                let min_dist = obj.shape.bounding_radius()
                    + other_spec.shape.bounding_radius()
                    + RESET_CLEARANCE;
                dx * dx + dy * dy > min_dist * min_dist
            });
            if clear {
                break;
            }
        }
        objects.push(placed);
    }
    WorldState {
        gripper: HOME_POSITION,
        yaw: HOME_YAW,
        aperture: HOME_APERTURE,
        held: None,
        objects,
        step_count: 0,
    }
}

/// Advance the state by one motor action.
///
/// Order of effects within a step: the action is clamped; the gripper pose
/// integrates and is clamped to the workspace; the aperture moves toward the
/// commanded side; attachment is attempted (close command, empty hand, low
/// gripper, object within reach); an open command releases; if the hand was
/// empty for the whole step and the gripper is low, objects contacted by the
/// planar sweep are dragged by the realized displacement; finally a held
/// object tracks the gripper pose.
pub fn step(spec: &TaskSpec, state: &mut WorldState, action: &MotorAction) {
    let dx = action.dx.clamp(-MAX_TRANSLATION, MAX_TRANSLATION);
    let dy = action.dy.clamp(-MAX_TRANSLATION, MAX_TRANSLATION);
    let dz = action.dz.clamp(-MAX_TRANSLATION, MAX_TRANSLATION);
    let dyaw = action.dyaw.clamp(-MAX_ROTATION, MAX_ROTATION);

    let old_xy = [state.gripper[0], state.gripper[1]];
    let new_xy = clamp_xy([old_xy[0] + dx, old_xy[1] + dy]);
    let new_z = (state.gripper[2] + dz).clamp(0.0, Z_MAX);
    state.gripper = [new_xy[0], new_xy[1], new_z];
    state.yaw = crate::math::wrap_angle(state.yaw + dyaw);

    let target = match action.grip {
        Grip::Open => 1.0,
        Grip::Close => 0.0,
    };
    let delta = (target - state.aperture).clamp(-APERTURE_RATE, APERTURE_RATE);
    state.aperture = (state.aperture + delta).clamp(0.0, 1.0);

    let held_at_entry = state.held;
    let mut attached_now = false;
    if action.grip == Grip::Close && state.held.is_none() && new_z <= Z_GRASP {
        let mut best: Option<(usize, f64)> = None;
        for (i, obj) in state.objects.iter().enumerate() {
            let ddx = obj.pos[0] - new_xy[0];
            let ddy = obj.pos[1] - new_xy[1];
            let d2 = ddx * ddx + ddy * ddy;
            if d2 <= GRASP_RADIUS * GRASP_RADIUS {
                match best {
                    Some((_, bd2)) if bd2 <= d2 => {}
                    _ => best = Some((i, d2)),
                }
            }
        }
        if let Some((i, _)) = best {
            state.held = Some(i);
            attached_now = true;
        }
    }
    if action.grip == Grip::Open {
        state.held = None;
    }

    if held_at_entry.is_none() && !attached_now && new_z <= Z_PUSH {
        let actual = [new_xy[0] - old_xy[0], new_xy[1] - old_xy[1]];
        if actual[0] != 0.0 || actual[1] != 0.0 {
            for (obj, obj_spec) in state.objects.iter_mut().zip(&spec.objects) {
                let hit = match obj_spec.shape {
                    Shape::Disc { radius } => {
                        geom::disc_intersects_segment(obj.pos, radius, old_xy, new_xy)
                    }
                    Shape::Box { half_x, half_y } => geom::rect_intersects_segment(
                        obj.pos,
                        [half_x, half_y],
                        obj.theta,
                        old_xy,
                        new_xy,
                    ),
                };
                if hit {
                    obj.pos = clamp_xy([obj.pos[0] + actual[0], obj.pos[1] + actual[1]]);
                }
            }
        }
    }

    if let Some(i) = state.held {
        state.objects[i].pos = new_xy;
        state.objects[i].theta = crate::math::wrap_angle(state.objects[i].theta + dyaw);
    }

    state.step_count += 1;
}

/// A task is solved when every goal region contains its object's center and
/// nothing is attached to the gripper.
pub fn task_success(spec: &TaskSpec, state: &WorldState) -> bool {
    state.held.is_none()
        && spec
            .goals
            .iter()
            .all(|g| g.contains(state.objects[g.object].pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idle(grip: Grip) -> MotorAction {
        MotorAction::idle(grip)
    }

    #[test]
    fn reset_is_deterministic_and_seed_sensitive() {
        let spec = TaskSpec::tidy_up_lite();
        let a = reset(&spec, 7, 3);
        let b = reset(&spec, 7, 3);
        assert_eq!(a, b);
        let c = reset(&spec, 8, 3);
        assert_ne!(a.objects, c.objects);
        let d = reset(&spec, 7, 4);
        assert_ne!(a.objects, d.objects);
    }

    #[test]
    fn reset_places_everything_inside_its_range() {
        let spec = TaskSpec::tidy_up_lite();
        for ep in 0..50 {
            let s = reset(&spec, 11, ep);
            for (obj, os) in s.objects.iter().zip(&spec.objects) {
                assert!(obj.pos[0] >= os.init_min[0] && obj.pos[0] <= os.init_max[0]);
                assert!(obj.pos[1] >= os.init_min[1] && obj.pos[1] <= os.init_max[1]);
            }
            assert_eq!(s.gripper, HOME_POSITION);
            assert_eq!(s.aperture, HOME_APERTURE);
            assert_eq!(s.held, None);
            assert_eq!(s.step_count, 0);
        }
    }

    #[test]
    fn degenerate_init_range_pins_the_object() {
        let mut spec = TaskSpec::pick_place_lite();
        spec.objects[0].init_min = [0.3, 0.4];
        spec.objects[0].init_max = [0.3, 0.4];
        let s = reset(&spec, 0, 0);
        assert_eq!(s.objects[0].pos, [0.3, 0.4]);
    }

    #[test]
    fn zero_action_only_counts_the_step() {
        let spec = TaskSpec::pick_place_lite();
        let mut s = reset(&spec, 1, 0);
        let before = s.clone();
        step(&spec, &mut s, &idle(Grip::Open));
        assert_eq!(s.gripper, before.gripper);
        assert_eq!(s.yaw, before.yaw);
        assert_eq!(s.aperture, before.aperture);
        assert_eq!(s.objects, before.objects);
        assert_eq!(s.step_count, before.step_count + 1);
    }

    #[test]
    fn oversized_action_components_are_clamped() {
        let spec = TaskSpec::pick_place_lite();
        let mut s = reset(&spec, 1, 0);
        let g0 = s.gripper;
        let yaw0 = s.yaw;
        step(
            &spec,
            &mut s,
            &MotorAction {
                dx: 0.5,
                dy: -0.5,
                dz: -0.5,
                dyaw: 2.0,
                grip: Grip::Open,
            },
        );
        assert!((s.gripper[0] - (g0[0] + MAX_TRANSLATION)).abs() < 1e-12);
        assert!((s.gripper[1] - (g0[1] - MAX_TRANSLATION)).abs() < 1e-12);
        assert!((s.gripper[2] - (g0[2] - MAX_TRANSLATION)).abs() < 1e-12);
        assert!((s.yaw - (yaw0 + MAX_ROTATION)).abs() < 1e-12);
    }

    #[test]
    fn aperture_ramps_toward_command() {
        let spec = TaskSpec::pick_place_lite();
        let mut s = reset(&spec, 1, 0);
        // Keep the gripper high so closing cannot attach anything.
        for k in 1..=5 {
            step(&spec, &mut s, &idle(Grip::Close));
            assert!((s.aperture - (1.0 - 0.2 * k as f64)).abs() < 1e-12);
        }
        step(&spec, &mut s, &idle(Grip::Close));
        assert_eq!(s.aperture, 0.0);
        step(&spec, &mut s, &idle(Grip::Open));
        assert!((s.aperture - 0.2).abs() < 1e-12);
    }

    #[test]
    fn low_sweep_drags_a_disc() {
        let mut spec = TaskSpec::pick_place_lite();
        spec.objects[0].init_min = [0.5, 0.5];
        spec.objects[0].init_max = [0.5, 0.5];
        let mut s = reset(&spec, 0, 0);
        s.gripper = [0.46, 0.5, 0.04];
        step(
            &spec,
            &mut s,
            &MotorAction {
                dx: 0.02,
                dy: 0.0,
                dz: 0.0,
                dyaw: 0.0,
                grip: Grip::Open,
            },
        );
        assert!((s.objects[0].pos[0] - 0.52).abs() < 1e-12);
        assert!((s.objects[0].pos[1] - 0.5).abs() < 1e-12);
        // Above the push height nothing moves.
        let mut s2 = reset(&spec, 0, 0);
        s2.gripper = [0.46, 0.5, 0.06];
        step(
            &spec,
            &mut s2,
            &MotorAction {
                dx: 0.02,
                dy: 0.0,
                dz: 0.0,
                dyaw: 0.0,
                grip: Grip::Open,
            },
        );
        assert_eq!(s2.objects[0].pos, [0.5, 0.5]);
    }

    #[test]
    fn attach_lift_carry_release() {
        let mut spec = TaskSpec::pick_place_lite();
        spec.objects[0].init_min = [0.5, 0.5];
        spec.objects[0].init_max = [0.5, 0.5];
        let mut s = reset(&spec, 0, 0);
        s.gripper = [0.5, 0.5, 0.02];
        step(&spec, &mut s, &idle(Grip::Close));
        assert_eq!(s.held, Some(0));
        // Carry while closed: the object tracks the gripper.
        step(
            &spec,
            &mut s,
            &MotorAction {
                dx: 0.02,
                dy: 0.01,
                dz: 0.02,
                dyaw: 0.05,
                grip: Grip::Close,
            },
        );
        assert_eq!(s.held, Some(0));
        assert_eq!(s.objects[0].pos, [s.gripper[0], s.gripper[1]]);
        let dropped_at = s.objects[0].pos;
        step(&spec, &mut s, &idle(Grip::Open));
        assert_eq!(s.held, None);
        assert_eq!(s.objects[0].pos, dropped_at);
        // Rise above the drag height, then move away: the object stays put.
        step(
            &spec,
            &mut s,
            &MotorAction {
                dx: 0.0,
                dy: 0.0,
                dz: 0.02,
                dyaw: 0.0,
                grip: Grip::Open,
            },
        );
        step(
            &spec,
            &mut s,
            &MotorAction {
                dx: 0.02,
                dy: 0.0,
                dz: 0.0,
                dyaw: 0.0,
                grip: Grip::Open,
            },
        );
        assert_eq!(s.objects[0].pos, dropped_at);
    }

    #[test]
    fn attach_requires_low_gripper_and_proximity() {
        let mut spec = TaskSpec::pick_place_lite();
        spec.objects[0].init_min = [0.5, 0.5];
        spec.objects[0].init_max = [0.5, 0.5];
        let mut s = reset(&spec, 0, 0);
        s.gripper = [0.5, 0.5, 0.04];
        step(&spec, &mut s, &idle(Grip::Close));
        assert_eq!(s.held, None);
        s.gripper = [0.54, 0.5, 0.02];
        step(&spec, &mut s, &idle(Grip::Close));
        assert_eq!(s.held, None);
        s.gripper = [0.52, 0.5, 0.02];
        step(&spec, &mut s, &idle(Grip::Close));
        assert_eq!(s.held, Some(0));
    }

    #[test]
    fn nearest_object_wins_ties_toward_lower_index() {
        let spec = TaskSpec {
            name: "two_discs".into(),
            objects: vec![
                ObjectSpec {
                    name: "a".into(),
                    shape: Shape::Disc { radius: 0.02 },
                    init_min: [0.50, 0.52],
                    init_max: [0.50, 0.52],
                },
                ObjectSpec {
                    name: "b".into(),
                    shape: Shape::Disc { radius: 0.02 },
                    init_min: [0.50, 0.48],
                    init_max: [0.50, 0.48],
                },
            ],
            goals: vec![],
            max_steps: 100,
        };
        let mut s = reset(&spec, 0, 0);
        // Equidistant: index 0 is picked.
        s.gripper = [0.5, 0.5, 0.02];
        step(&spec, &mut s, &idle(Grip::Close));
        assert_eq!(s.held, Some(0));
        // Strictly nearer object wins regardless of index.
        let mut s2 = reset(&spec, 0, 0);
        s2.gripper = [0.5, 0.49, 0.02];
        step(&spec, &mut s2, &idle(Grip::Close));
        assert_eq!(s2.held, Some(1));
    }

    #[test]
    fn attaching_suppresses_the_drag_on_that_step() {
        let mut spec = TaskSpec::pick_place_lite();
        spec.objects[0].init_min = [0.5, 0.5];
        spec.objects[0].init_max = [0.5, 0.5];
        let mut s = reset(&spec, 0, 0);
        s.gripper = [0.48, 0.5, 0.02];
        step(
            &spec,
            &mut s,
            &MotorAction {
                dx: 0.02,
                dy: 0.0,
                dz: 0.0,
                dyaw: 0.0,
                grip: Grip::Close,
            },
        );
        // The sweep touches the disc but the attach takes priority, and the
        // held object snaps to the gripper center.
        assert_eq!(s.held, Some(0));
        assert_eq!(s.objects[0].pos, [0.5, 0.5]);
    }

    #[test]
    fn success_requires_containment_and_an_empty_hand() {
        let spec = TaskSpec::pick_place_lite();
        let mut s = reset(&spec, 0, 0);
        assert!(!task_success(&spec, &s));
        s.objects[0].pos = [0.7, 0.7];
        assert!(task_success(&spec, &s));
        s.held = Some(0);
        assert!(!task_success(&spec, &s));
        s.held = None;
        s.objects[0].pos = [0.61, 0.7];
        assert!(!task_success(&spec, &s));
    }

    #[test]
    fn state_round_trips_through_json_exactly() {
        let spec = TaskSpec::tidy_up_lite();
        let s = reset(&spec, 42, 9);
        let text = serde_json::to_string(&s).unwrap();
        let back: WorldState = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    fn arb_action() -> impl Strategy<Value = MotorAction> {
        (
            -0.05f64..0.05,
            -0.05f64..0.05,
            -0.05f64..0.05,
            -0.3f64..0.3,
            prop::bool::ANY,
        )
            .prop_map(|(dx, dy, dz, dyaw, close)| MotorAction {
                dx,
                dy,
                dz,
                dyaw,
                grip: if close { Grip::Close } else { Grip::Open },
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn stepping_is_deterministic(seed in 0u64..1000, actions in prop::collection::vec(arb_action(), 1..40)) {
            let spec = TaskSpec::tidy_up_lite();
            let mut a = reset(&spec, seed, 0);
            let mut b = a.clone();
            for act in &actions {
                step(&spec, &mut a, act);
                step(&spec, &mut b, act);
            }
            prop_assert_eq!(a, b);
        }

        #[test]
        fn everything_stays_in_the_workspace(seed in 0u64..1000, actions in prop::collection::vec(arb_action(), 1..60)) {
            let spec = TaskSpec::tidy_up_lite();
            let mut s = reset(&spec, seed, 0);
            for act in &actions {
                step(&spec, &mut s, act);
                prop_assert!(s.gripper[0] >= 0.0 && s.gripper[0] <= 1.0);
                prop_assert!(s.gripper[1] >= 0.0 && s.gripper[1] <= 1.0);
                prop_assert!(s.gripper[2] >= 0.0 && s.gripper[2] <= Z_MAX);
                prop_assert!(s.yaw > -std::f64::consts::PI - 1e-12 && s.yaw <= std::f64::consts::PI + 1e-12);
                prop_assert!(s.aperture >= 0.0 && s.aperture <= 1.0);
                for obj in &s.objects {
                    prop_assert!(obj.pos[0] >= 0.0 && obj.pos[0] <= 1.0);
                    prop_assert!(obj.pos[1] >= 0.0 && obj.pos[1] <= 1.0);
                }
            }
        }

        #[test]
        fn a_high_gripper_never_disturbs_objects(seed in 0u64..1000, actions in prop::collection::vec(arb_action(), 1..40)) {
            let spec = TaskSpec::tidy_up_lite();
            let mut s = reset(&spec, seed, 0);
            let initial = s.objects.clone();
            for act in &actions {
                // Forbid descent below the push height.
                let mut act = *act;
                act.dz = act.dz.abs();
                step(&spec, &mut s, &act);
            }
            prop_assert_eq!(s.objects, initial);
        }

        #[test]
        fn held_object_tracks_until_release(seed in 0u64..1000) {
            let mut spec = TaskSpec::pick_place_lite();
            spec.objects[0].init_min = [0.5, 0.5];
            spec.objects[0].init_max = [0.5, 0.5];
            let mut s = reset(&spec, seed, 0);
            s.gripper = [0.5, 0.5, 0.02];
            step(&spec, &mut s, &MotorAction::idle(Grip::Close));
            prop_assert_eq!(s.held, Some(0));
            for k in 0..20 {
                let act = MotorAction {
                    dx: 0.01 * ((k % 3) as f64 - 1.0),
                    dy: 0.015,
                    dz: 0.01,
                    dyaw: 0.02,
                    grip: Grip::Close,
                };
                step(&spec, &mut s, &act);
                prop_assert_eq!(s.held, Some(0));
                prop_assert_eq!(s.objects[0].pos, [s.gripper[0], s.gripper[1]]);
            }
        }
    }
}
