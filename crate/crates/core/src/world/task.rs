//! Task definitions: object inventories, initial placement ranges, goals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{WORKSPACE_MAX, WORKSPACE_MIN};

/// Planar footprint of a tabletop object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disc { radius: f64 },
    Box { half_x: f64, half_y: f64 },
}

impl Shape {
    /// Radius of the smallest circle containing the footprint.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Disc { radius } => radius,
            Shape::Box { half_x, half_y } => (half_x * half_x + half_y * half_y).sqrt(),
        }
    }
}

/// One object template: its shape plus the box its center is drawn from at
/// reset time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: Shape,
    pub init_min: [f64; 2],
    pub init_max: [f64; 2],
}

/// Axis-aligned goal region an object center must land inside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalRegion {
    pub object: usize,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl GoalRegion {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid task `{name}`: {reason}")]
    Invalid { name: String, reason: String },
}

/// Full description of a task instance family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub objects: Vec<ObjectSpec>,
    pub goals: Vec<GoalRegion>,
    /// Episode step budget used by scripted demonstrations and policy rollout.
    pub max_steps: usize,
}

impl TaskSpec {
    /// Load a task from a TOML file.
    pub fn from_toml_path(path: &std::path::Path) -> Result<TaskSpec, TaskError> {
        let text = std::fs::read_to_string(path)?;
        let spec: TaskSpec = toml::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let fail = |reason: String| TaskError::Invalid {
            name: self.name.clone(),
            reason,
        };
        if self.objects.is_empty() {
            return Err(fail("no objects".into()));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let r = obj.shape.bounding_radius();
            if !(r > 0.0) {
                return Err(fail(format!("object {i} has nonpositive extent")));
            }
            for axis in 0..2 {
                if obj.init_min[axis] > obj.init_max[axis] {
                    return Err(fail(format!("object {i} has inverted init range")));
                }
                if obj.init_min[axis] < WORKSPACE_MIN[axis]
                    || obj.init_max[axis] > WORKSPACE_MAX[axis]
                {
                    return Err(fail(format!("object {i} init range leaves the workspace")));
                }
            }
        }
        for (i, goal) in self.goals.iter().enumerate() {
            if goal.object >= self.objects.len() {
                return Err(fail(format!("goal {i} names a missing object")));
            }
            if goal.min[0] > goal.max[0] || goal.min[1] > goal.max[1] {
                return Err(fail(format!("goal {i} has inverted bounds")));
            }
        }
        if self.max_steps == 0 {
            return Err(fail("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Single disc moved to a single target region.
    pub fn pick_place_lite() -> TaskSpec {
        TaskSpec {
            name: "pick_place_lite".into(),
            objects: vec![ObjectSpec {
                name: "disc".into(),
                shape: Shape::Disc { radius: 0.03 },
                init_min: [0.15, 0.15],
                init_max: [0.45, 0.45],
            }],
            goals: vec![GoalRegion {
                object: 0,
                min: [0.62, 0.62],
                max: [0.78, 0.78],
            }],
            max_steps: 400,
        }
    }

    /// One box and two discs, each to its own bin.
    pub fn tidy_up_lite() -> TaskSpec {
        TaskSpec {
            name: "tidy_up_lite".into(),
            objects: vec![
                ObjectSpec {
                    name: "box".into(),
                    shape: Shape::Box {
                        half_x: 0.04,
                        half_y: 0.04,
                    },
                    init_min: [0.15, 0.40],
                    init_max: [0.40, 0.60],
                },
                ObjectSpec {
                    name: "disc_a".into(),
                    shape: Shape::Disc { radius: 0.025 },
                    init_min: [0.15, 0.10],
                    init_max: [0.45, 0.30],
                },
                ObjectSpec {
                    name: "disc_b".into(),
                    shape: Shape::Disc { radius: 0.025 },
                    init_min: [0.15, 0.70],
                    init_max: [0.45, 0.90],
                },
            ],
            goals: vec![
                GoalRegion {
                    object: 0,
                    min: [0.65, 0.42],
                    max: [0.80, 0.58],
                },
                GoalRegion {
                    object: 1,
                    min: [0.65, 0.12],
                    max: [0.80, 0.28],
                },
                GoalRegion {
                    object: 2,
                    min: [0.65, 0.72],
                    max: [0.80, 0.88],
                },
            ],
            max_steps: 1200,
        }
    }

    /// Look up a built-in task by name.
    pub fn builtin(name: &str) -> Option<TaskSpec> {
        match name {
            "pick_place_lite" => Some(TaskSpec::pick_place_lite()),
            "tidy_up_lite" => Some(TaskSpec::tidy_up_lite()),
            _ => None,
        }
    }
}
