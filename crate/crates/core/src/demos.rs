//! Scripted demonstrations: long unsegmented motor-action trajectories.
//!
//! The demonstrator reads privileged state and walks through each delivery
//! with the same rise / translate / descend motion profile the skills use,
//! but it emits one continuous action stream with no segment markers. A
//! `noise` knob perturbs the continuous action channels to emulate operator
//! variability; failed attempts (noise can spoil a grasp) are retried with a
//! fresh noise stream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, ContainerError};
use crate::math::angle_diff;
use crate::primitives::{POSITION_TOL, YAW_TOL, Z_SAFE};
use crate::rng::{self, tags};
use crate::world::{
    self, Grip, MotorAction, TaskSpec, WorldState, HOME_POSITION, HOME_YAW, MAX_ROTATION,
    MAX_TRANSLATION,
};
use rand_chacha::ChaCha8Rng;

/// Height the demonstrator grasps and releases at.
const WORK_Z: f64 = 0.02;
/// Maximum demonstration attempts per seed.
const MAX_ATTEMPTS: u32 = 5;

/// One complete demonstration of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub task: String,
    pub seed: u64,
    pub frames: Vec<(WorldState, MotorAction)>,
    pub final_state: WorldState,
}

impl Demonstration {
    /// Number of actions (= number of transitions).
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// State at frame index `i`, where `i` ranges over `0..=len()`.
    pub fn state(&self, i: usize) -> &WorldState {
        if i < self.frames.len() {
            &self.frames[i].0
        } else {
            &self.final_state
        }
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("noise level {0} outside 0.0..=0.5")]
    InvalidNoise(f64),
    #[error("task `{task}` seed {seed}: no successful demonstration in {attempts} attempts")]
    Failed { task: String, seed: u64, attempts: u32 },
    #[error(transparent)]
    File(#[from] ContainerError),
}

struct Runner<'a> {
    spec: &'a TaskSpec,
    state: WorldState,
    rng: ChaCha8Rng,
    noise: f64,
    frames: Vec<(WorldState, MotorAction)>,
    budget: usize,
}

impl<'a> Runner<'a> {
    fn hold(&self) -> Grip {
        if self.state.held.is_some() {
            Grip::Close
        } else {
            Grip::Open
        }
    }

    /// Perturb, clamp, record, and apply one action. False when out of steps.
    fn emit(&mut self, mut a: MotorAction) -> bool {
        if self.frames.len() >= self.budget {
            return false;
        }
        if self.noise > 0.0 {
            a.dx += self.noise * MAX_TRANSLATION * rng::standard_normal(&mut self.rng);
            a.dy += self.noise * MAX_TRANSLATION * rng::standard_normal(&mut self.rng);
            a.dz += self.noise * MAX_TRANSLATION * rng::standard_normal(&mut self.rng);
            a.dyaw += self.noise * MAX_ROTATION * rng::standard_normal(&mut self.rng);
            a.dx = a.dx.clamp(-MAX_TRANSLATION, MAX_TRANSLATION);
            a.dy = a.dy.clamp(-MAX_TRANSLATION, MAX_TRANSLATION);
            a.dz = a.dz.clamp(-MAX_TRANSLATION, MAX_TRANSLATION);
            a.dyaw = a.dyaw.clamp(-MAX_ROTATION, MAX_ROTATION);
        }
        let before = self.state.clone();
        world::step(self.spec, &mut self.state, &a);
        self.frames.push((before, a));
        true
    }

    fn toward(&self, tx: f64, ty: f64, tz: f64, tyaw: f64, grip: Grip) -> MotorAction {
        MotorAction {
            dx: (tx - self.state.gripper[0]).clamp(-MAX_TRANSLATION, MAX_TRANSLATION),
            dy: (ty - self.state.gripper[1]).clamp(-MAX_TRANSLATION, MAX_TRANSLATION),
            dz: (tz - self.state.gripper[2]).clamp(-MAX_TRANSLATION, MAX_TRANSLATION),
            dyaw: angle_diff(tyaw, self.state.yaw).clamp(-MAX_ROTATION, MAX_ROTATION),
            grip,
        }
    }

    fn rise(&mut self) -> bool {
        while self.state.gripper[2] < Z_SAFE - POSITION_TOL {
            let a = self.toward(
                self.state.gripper[0],
                self.state.gripper[1],
                Z_SAFE,
                self.state.yaw,
                self.hold(),
            );
            if !self.emit(a) {
                return false;
            }
        }
        true
    }

    fn move_to(&mut self, tx: f64, ty: f64, tyaw: f64) -> bool {
        loop {
            let aligned = (self.state.gripper[0] - tx).abs() <= POSITION_TOL
                && (self.state.gripper[1] - ty).abs() <= POSITION_TOL
                && angle_diff(tyaw, self.state.yaw).abs() <= YAW_TOL;
            if aligned {
                return true;
            }
            let a = self.toward(tx, ty, self.state.gripper[2], tyaw, self.hold());
            if !self.emit(a) {
                return false;
            }
        }
    }

    /// Lower to `tz` while actively holding the planar target, so noise
    /// cannot walk the gripper off the spot it is descending onto.
    fn descend(&mut self, tx: f64, ty: f64, tz: f64, tyaw: f64) -> bool {
        while (self.state.gripper[2] - tz).abs() > POSITION_TOL {
            let a = self.toward(tx, ty, tz, tyaw, self.hold());
            if !self.emit(a) {
                return false;
            }
        }
        true
    }

    fn close_until_held(&mut self, obj: usize, tx: f64, ty: f64, tyaw: f64) -> bool {
        while self.state.held != Some(obj) {
            if self.state.held.is_some() || self.state.aperture <= 0.0 {
                return false;
            }
            let mut a = self.toward(tx, ty, self.state.gripper[2], tyaw, Grip::Close);
            a.dz = 0.0;
            if !self.emit(a) {
                return false;
            }
        }
        true
    }

    fn open_fully(&mut self, tx: f64, ty: f64, tyaw: f64) -> bool {
        while self.state.held.is_some() || self.state.aperture < 1.0 {
            let mut a = self.toward(tx, ty, self.state.gripper[2], tyaw, Grip::Open);
            a.dz = 0.0;
            if !self.emit(a) {
                return false;
            }
        }
        true
    }

    fn pick(&mut self, obj: usize) -> bool {
        let target = self.state.objects[obj].pos;
        let yaw = self.state.objects[obj].theta;
        self.rise()
            && self.move_to(target[0], target[1], yaw)
            && self.descend(target[0], target[1], WORK_Z, yaw)
            && self.close_until_held(obj, target[0], target[1], yaw)
    }

    fn place(&mut self, cx: f64, cy: f64) -> bool {
        self.rise()
            && self.move_to(cx, cy, 0.0)
            && self.descend(cx, cy, WORK_Z, 0.0)
            && self.open_fully(cx, cy, 0.0)
    }

    fn go_home(&mut self) -> bool {
        self.rise() && self.move_to(HOME_POSITION[0], HOME_POSITION[1], HOME_YAW)
    }
}

/// Produce one successful demonstration, retrying with fresh noise streams.
pub fn script_demo(spec: &TaskSpec, seed: u64, noise: f64) -> Result<Demonstration, DemoError> {
    if !(0.0..=0.5).contains(&noise) || !noise.is_finite() {
        return Err(DemoError::InvalidNoise(noise));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut run = Runner {
            spec,
            state: world::reset(spec, seed, 0),
            rng: rng::derive_rng(seed, &[tags::DEMO, attempt as u64]),
            noise,
            frames: Vec::new(),
            budget: spec.max_steps,
        };
        let mut ok = true;
        for goal in &spec.goals {
            if goal.contains(run.state.objects[goal.object].pos) {
                continue;
            }
            let center = [
                0.5 * (goal.min[0] + goal.max[0]),
                0.5 * (goal.min[1] + goal.max[1]),
            ];
            if !(run.pick(goal.object) && run.place(center[0], center[1])) {
                ok = false;
                break;
            }
        }
        if ok {
            ok = run.go_home();
        }
        if ok && world::task_success(spec, &run.state) {
            return Ok(Demonstration {
                task: spec.name.clone(),
                seed,
                frames: run.frames,
                final_state: run.state,
            });
        }
    }
    Err(DemoError::Failed {
        task: spec.name.clone(),
        seed,
        attempts: MAX_ATTEMPTS,
    })
}

const DEMO_KIND: &str = "demos";
const DEMO_VERSION: u32 = 1;

#[derive(Serialize)]
struct DemoMeta<'a> {
    task: &'a str,
    count: usize,
}

pub fn save_demos(path: &std::path::Path, demos: &[Demonstration]) -> Result<(), ContainerError> {
    let task = demos.first().map(|d| d.task.as_str()).unwrap_or("");
    io::write_container(
        path,
        DEMO_KIND,
        DEMO_VERSION,
        &DemoMeta {
            task,
            count: demos.len(),
        },
        demos,
    )
}

pub fn load_demos(path: &std::path::Path) -> Result<Vec<Demonstration>, ContainerError> {
    let (_, demos) = io::read_container(path, DEMO_KIND, DEMO_VERSION)?;
    Ok(demos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::task_success;

    #[test]
    fn clean_demo_solves_the_task() {
        let spec = TaskSpec::pick_place_lite();
        let demo = script_demo(&spec, 3, 0.0).unwrap();
        assert!(task_success(&spec, &demo.final_state));
        assert_eq!(demo.task, "pick_place_lite");
    }

    #[test]
    fn zero_noise_is_reproducible() {
        let spec = TaskSpec::pick_place_lite();
        let a = script_demo(&spec, 7, 0.0).unwrap();
        let b = script_demo(&spec, 7, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_demos_succeed_and_stay_in_band() {
        let spec = TaskSpec::pick_place_lite();
        for seed in 0..30 {
            let demo = script_demo(&spec, seed, 0.1).unwrap();
            assert!(task_success(&spec, &demo.final_state), "seed {seed}");
            assert!(
                demo.len() >= 100 && demo.len() <= 600,
                "seed {seed}: length {}",
                demo.len()
            );
        }
    }

    #[test]
    fn multi_object_demo_succeeds() {
        let spec = TaskSpec::tidy_up_lite();
        let demo = script_demo(&spec, 11, 0.1).unwrap();
        assert!(task_success(&spec, &demo.final_state));
        assert!(demo.len() <= spec.max_steps);
    }

    #[test]
    fn frames_chain_under_the_world_step() {
        let spec = TaskSpec::pick_place_lite();
        let demo = script_demo(&spec, 5, 0.2).unwrap();
        let mut s = demo.frames[0].0.clone();
        for (expect, action) in &demo.frames {
            assert_eq!(&s, expect);
            world::step(&spec, &mut s, action);
        }
        assert_eq!(s, demo.final_state);
    }

    #[test]
    fn invalid_noise_is_rejected() {
        let spec = TaskSpec::pick_place_lite();
        assert!(matches!(
            script_demo(&spec, 0, 0.6),
            Err(DemoError::InvalidNoise(_))
        ));
        assert!(matches!(
            script_demo(&spec, 0, -0.1),
            Err(DemoError::InvalidNoise(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let spec = TaskSpec::pick_place_lite();
        let demos: Vec<_> = (0..3)
            .map(|seed| script_demo(&spec, seed, 0.1).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        save_demos(&path, &demos).unwrap();
        let back = load_demos(&path).unwrap();
        assert_eq!(demos, back);
    }

    #[test]
    fn truncated_file_is_detected() {
        let spec = TaskSpec::pick_place_lite();
        let demos = vec![script_demo(&spec, 0, 0.0).unwrap()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        save_demos(&path, &demos).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_demos(&path),
            Err(ContainerError::CorruptFile(_)) | Err(ContainerError::Record { .. })
        ));
    }

    #[test]
    fn empty_demo_list_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        save_demos(&path, &[]).unwrap();
        assert!(load_demos(&path).unwrap().is_empty());
    }
}
