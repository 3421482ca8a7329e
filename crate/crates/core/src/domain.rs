//! Shared value types: poses, actions, observations, outcomes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::f64::consts::PI;
use core::fmt;

use crate::error::ContractError;

/// Axis-aligned limits for commanded gripper targets, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

pub const WORKSPACE: WorkspaceBounds = WorkspaceBounds {
    min: [-0.6, -0.6, 0.0],
    max: [0.6, 0.6, 0.6],
};

impl WorkspaceBounds {
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let p = [x, y, z];
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_yaw(yaw: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = yaw - two_pi * libm::floor((yaw + PI) / two_pi);
    if y <= -PI {
        y += two_pi;
    }
    if y > PI {
        y -= two_pi;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose {
    /// Builds a pose, normalizing yaw. Rejects non-finite coordinates.
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self, ContractError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && yaw.is_finite()) {
            return Err(ContractError::NonFinitePose);
        }
        Ok(Self {
            x,
            y,
            z,
            yaw: normalize_yaw(yaw),
        })
    }

    pub const fn at(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z, yaw: 0.0 }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        libm::sqrt(dx * dx + dy * dy + dz * dz)
    }

    pub fn distance_xy(&self, other: &Pose) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        libm::sqrt(dx * dx + dy * dy)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:.4}, {:.4}, {:.4}, yaw {:.4})",
            self.x, self.y, self.z, self.yaw
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Grip {
    Open,
    Close,
}

impl Grip {
    pub fn as_str(self) -> &'static str {
        match self {
            Grip::Open => "open",
            Grip::Close => "close",
        }
    }
}

/// One primitive command of an episode script. Gripper targets are absolute
/// end-effector poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    MoveTo(Pose),
    Gripper(Grip),
    Wait(u32),
}

impl Action {
    /// Validated `MOVE_TO`: finite and inside [`WORKSPACE`].
    pub fn move_to(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self, ContractError> {
        let pose = Pose::new(x, y, z, yaw)?;
        if !WORKSPACE.contains(pose.x, pose.y, pose.z) {
            return Err(ContractError::OutOfWorkspace);
        }
        Ok(Action::MoveTo(pose))
    }

    /// Validated `WAIT`: tick count must be positive.
    pub fn wait(ticks: u32) -> Result<Self, ContractError> {
        if ticks == 0 {
            return Err(ContractError::ZeroWait);
        }
        Ok(Action::Wait(ticks))
    }

    pub fn verb(&self) -> &'static str {
        match self {
            Action::MoveTo(_) => "move_to",
            Action::Gripper(_) => "gripper",
            Action::Wait(_) => "wait",
        }
    }
}

pub type ObjectId = String;

/// Privileged ground-truth state handed to reasoners.
///
/// `goal` is the task's exposed goal marker. For insertion tasks it is only the
/// coarse socket position; the exact axis stays inside the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub gripper_pose: Pose,
    pub gripper_open: bool,
    pub held_object: Option<ObjectId>,
    pub objects: BTreeMap<ObjectId, Pose>,
    pub goal: Pose,
    pub tick: u64,
}

impl Observation {
    pub fn object(&self, id: &str) -> Option<&Pose> {
        self.objects.get(id)
    }

    /// Checks the held-object and finiteness invariants.
    pub fn validate(&self) -> Result<(), ContractError> {
        if let Some(held) = &self.held_object {
            if !self.objects.contains_key(held) {
                return Err(ContractError::UnknownHeldObject);
            }
        }
        if !self.gripper_pose.is_finite()
            || !self.goal.is_finite()
            || self.objects.values().any(|p| !p.is_finite())
        {
            return Err(ContractError::NonFinitePose);
        }
        Ok(())
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tick {}; gripper {} {}; held {}; goal {}",
            self.tick,
            self.gripper_pose,
            if self.gripper_open { "open" } else { "closed" },
            self.held_object.as_deref().unwrap_or("none"),
            self.goal
        )?;
        for (id, pose) in &self.objects {
            write!(f, "; {} {}", id, pose)?;
        }
        Ok(())
    }
}

/// Evaluator verdict on the terminal state of one script execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub success: bool,
    pub error: Option<String>,
    pub final_obs: Observation,
}

impl Outcome {
    pub fn new(success: bool, error: Option<String>, final_obs: Observation) -> Self {
        // an errored execution never counts as a success
        let success = success && error.is_none();
        Self {
            success,
            error,
            final_obs,
        }
    }
}
