//! Task definitions and the built-in catalog.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_4;
use core::fmt;

use crate::error::ContractError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Pick,
    Push,
    Pull,
    Stack,
    Place,
    PegInsert,
}

impl Family {
    /// Families whose success requires closing the gripper on an object.
    pub fn is_grasp(self) -> bool {
        matches!(
            self,
            Family::Pick | Family::Stack | Family::Place | Family::PegInsert
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Pick => "PICK",
            Family::Push => "PUSH",
            Family::Pull => "PULL",
            Family::Stack => "STACK",
            Family::Place => "PLACE",
            Family::PegInsert => "PEG_INSERT",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Medium => "Medium",
            Difficulty::Hard => "Hard",
        }
    }
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub const fn point(v: f64) -> Self {
        Self { low: v, high: v }
    }

    pub fn is_well_ordered(&self) -> bool {
        self.low.is_finite() && self.high.is_finite() && self.low <= self.high
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

/// One randomized rigid object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSlot {
    pub id: String,
    /// Axis-aligned half extents in meters; `z` is also the resting height on the table.
    pub half_extents: [f64; 3],
    pub x: Range,
    pub y: Range,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoalMode {
    /// Goal sampled from the goal ranges.
    Sampled,
    /// Goal is the reset pose of the named object (stacking base).
    OnObject(String),
}

/// Insertion fixture: a block with a hole whose exact axis is hidden state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocketSpec {
    pub half_extents: [f64; 3],
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRandomization {
    pub objects: Vec<ObjectSlot>,
    pub yaw: Range,
    pub goal_x: Range,
    pub goal_y: Range,
    pub goal_z: Range,
    pub goal_mode: GoalMode,
    /// Grid the goal is rounded to before it is exposed in observations.
    pub goal_quantum: f64,
    pub socket: Option<SocketSpec>,
    /// Extra gap kept between sampled footprints.
    pub min_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessParams {
    pub position_tolerance: f64,
    pub height_threshold: f64,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub family: Family,
    pub difficulty: Difficulty,
    pub scene: SceneRandomization,
    pub success: SuccessParams,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), ContractError> {
        let bad = |m: &str| {
            Err(ContractError::InvalidTask(alloc::format!(
                "{}: {}", self.id, m
            )))
        };
        if self.instruction.trim().is_empty() {
            return bad("instruction is empty");
        }
        if self.scene.objects.is_empty() {
            return bad("no objects");
        }
        let s = &self.scene;
        let ranges = [s.yaw, s.goal_x, s.goal_y, s.goal_z];
        if ranges.iter().any(|r| !r.is_well_ordered())
            || s.objects
                .iter()
                .any(|o| !o.x.is_well_ordered() || !o.y.is_well_ordered())
        {
            return bad("randomization range is not well ordered");
        }
        if s.objects
            .iter()
            .any(|o| o.half_extents.iter().any(|h| h.is_nan() || *h <= 0.0))
        {
            return bad("object extents must be positive");
        }
        if s.goal_quantum.is_nan() || s.goal_quantum <= 0.0 || s.min_gap < 0.0 {
            return bad("goal quantum must be positive");
        }
        let p = &self.success;
        if !(p.position_tolerance > 0.0 && p.height_threshold > 0.0 && p.clearance > 0.0) {
            return bad("success tolerances must be positive");
        }
        if let GoalMode::OnObject(id) = &s.goal_mode {
            if !s.objects.iter().any(|o| &o.id == id) {
                return bad("goal refers to an unknown object");
            }
        }
        if self.family == Family::PegInsert && s.socket.is_none() {
            return bad("insertion task without a socket");
        }
        Ok(())
    }

    /// The object the success predicate is evaluated on.
    pub fn target_object(&self) -> &ObjectSlot {
        &self.scene.objects[0]
    }
}

const CUBE: [f64; 3] = [0.02, 0.02, 0.02];
const SPHERE: [f64; 3] = [0.02, 0.02, 0.02];
const DEFAULT_SUCCESS: SuccessParams = SuccessParams {
    position_tolerance: 0.015,
    height_threshold: 0.1,
    clearance: 0.001,
};

fn slot(id: &str, half_extents: [f64; 3], x: (f64, f64), y: (f64, f64)) -> ObjectSlot {
    ObjectSlot {
        id: id.to_string(),
        half_extents,
        x: Range::new(x.0, x.1),
        y: Range::new(y.0, y.1),
    }
}

fn scene(
    objects: Vec<ObjectSlot>,
    goal: ((f64, f64), (f64, f64), (f64, f64)),
) -> SceneRandomization {
    SceneRandomization {
        objects,
        yaw: Range::new(-FRAC_PI_4, FRAC_PI_4),
        goal_x: Range::new(goal.0 .0, goal.0 .1),
        goal_y: Range::new(goal.1 .0, goal.1 .1),
        goal_z: Range::new(goal.2 .0, goal.2 .1),
        goal_mode: GoalMode::Sampled,
        goal_quantum: 0.001,
        socket: None,
        min_gap: 0.02,
    }
}

fn task(
    id: &str,
    instruction: &str,
    family: Family,
    difficulty: Difficulty,
    scene: SceneRandomization,
) -> TaskSpec {
    TaskSpec {
        id: id.to_string(),
        instruction: instruction.to_string(),
        family,
        difficulty,
        scene,
        success: DEFAULT_SUCCESS,
    }
}

/// Built-in tasks, one or more per family.
pub fn catalog() -> Vec<TaskSpec> {
    let mut stack = scene(
        vec![
            slot("cube_a", CUBE, (-0.15, -0.05), (-0.1, 0.1)),
            slot("cube_b", CUBE, (0.05, 0.15), (-0.1, 0.1)),
        ],
        ((0.0, 0.0), (0.0, 0.0), (0.0, 0.0)),
    );
    stack.goal_mode = GoalMode::OnObject("cube_b".to_string());

    let mut peg = scene(
        vec![slot("peg", [0.01, 0.01, 0.04], (-0.15, -0.05), (-0.1, 0.1))],
        ((0.05, 0.15), (-0.1, 0.1), (0.03, 0.03)),
    );
    peg.goal_quantum = 0.004;
    peg.socket = Some(SocketSpec {
        half_extents: [0.04, 0.04, 0.015],
        depth: 0.02,
    });

    vec![
        task(
            "pick_cube",
            "pick up the cube and lift it to the goal position",
            Family::Pick,
            Difficulty::Easy,
            scene(
                vec![slot("cube", CUBE, (-0.1, 0.1), (-0.1, 0.1))],
                ((-0.1, 0.1), (-0.1, 0.1), (0.15, 0.3)),
            ),
        ),
        task(
            "push_cube",
            "push the cube to the goal region",
            Family::Push,
            Difficulty::Easy,
            scene(
                vec![slot("cube", CUBE, (-0.15, -0.05), (-0.1, 0.1))],
                ((0.05, 0.15), (-0.1, 0.1), (0.02, 0.02)),
            ),
        ),
        task(
            "pull_cube",
            "pull the cube back to the goal region",
            Family::Pull,
            Difficulty::Easy,
            scene(
                vec![slot("cube", CUBE, (0.05, 0.15), (-0.1, 0.1))],
                ((-0.15, -0.05), (-0.1, 0.1), (0.02, 0.02)),
            ),
        ),
        task(
            "stack_cube",
            "stack cube_a on top of cube_b",
            Family::Stack,
            Difficulty::Medium,
            stack,
        ),
        task(
            "place_sphere",
            "place the sphere in the goal bin",
            Family::Place,
            Difficulty::Medium,
            scene(
                vec![slot("sphere", SPHERE, (-0.15, -0.05), (-0.1, 0.1))],
                ((0.05, 0.15), (-0.1, 0.1), (0.02, 0.02)),
            ),
        ),
        task(
            "lift_peg_upright",
            "lift the peg off the table and hold it above the goal",
            Family::Pick,
            Difficulty::Medium,
            scene(
                vec![slot("peg", [0.01, 0.01, 0.04], (-0.1, 0.1), (-0.1, 0.1))],
                ((-0.1, 0.1), (-0.1, 0.1), (0.2, 0.3)),
            ),
        ),
        task(
            "peg_insertion",
            "insert the peg into the socket",
            Family::PegInsert,
            Difficulty::Hard,
            peg,
        ),
    ]
}

pub fn find_task(id: &str) -> Option<TaskSpec> {
    catalog().into_iter().find(|t| t.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn catalog_is_valid_and_covers_every_family() {
        let tasks = catalog();
        let ids: BTreeSet<_> = tasks.iter().map(|t| t.id.clone()).collect();
        assert_eq!(ids.len(), tasks.len());
        for t in &tasks {
            t.validate().unwrap();
        }
        for f in [
            Family::Pick,
            Family::Push,
            Family::Pull,
            Family::Stack,
            Family::Place,
            Family::PegInsert,
        ] {
            assert!(tasks.iter().any(|t| t.family == f), "{f}");
        }
    }

    #[test]
    fn validation_rejects_bad_tasks() {
        let mut t = find_task("pick_cube").unwrap();
        t.instruction = "  ".into();
        assert!(t.validate().is_err());

        let mut t = find_task("pick_cube").unwrap();
        t.scene.goal_x = Range::new(0.2, 0.1);
        assert!(t.validate().is_err());

        let mut t = find_task("pick_cube").unwrap();
        t.success.position_tolerance = 0.0;
        assert!(t.validate().is_err());
    }
}
