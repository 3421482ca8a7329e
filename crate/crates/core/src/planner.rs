//! Analytic waypoint plans built from privileged observations.
//!
//! Every plan approaches from a safe height, descends straight down, acts, and
//! leaves straight up. Under zero control noise each supported plan succeeds by
//! construction.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{Action, Grip, Observation, Pose, WORKSPACE};
use crate::dsl::EpisodeScript;
use crate::sim::{contact_distance, GRIPPER_HALF};
use crate::task::{Family, GoalMode, TaskSpec};

/// Travel height above every object in the catalog.
pub const SAFE_Z: f64 = 0.25;
/// Gap left between gripper and object before a push starts.
pub const PUSH_STANDOFF: f64 = 0.02;
/// Height above the support at which carried objects are released.
pub const RELEASE_GAP: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("no analytic plan for {0} tasks")]
    Unsupported(Family),
    #[error("observation lacks object '{0}'")]
    MissingObject(alloc::string::String),
}

fn mv(x: f64, y: f64, z: f64) -> Action {
    let b = WORKSPACE;
    Action::MoveTo(Pose::at(
        x.clamp(b.min[0], b.max[0]),
        y.clamp(b.min[1], b.max[1]),
        z.clamp(b.min[2], b.max[2]),
    ))
}

fn object<'a>(obs: &'a Observation, id: &str) -> Result<&'a Pose, PlanError> {
    obs.object(id)
        .ok_or_else(|| PlanError::MissingObject(id.into()))
}

/// Open, hover, descend, close, and rise back to `SAFE_Z`.
fn grasp(o: &Pose) -> Vec<Action> {
    vec![
        Action::Gripper(Grip::Open),
        mv(o.x, o.y, SAFE_Z),
        mv(o.x, o.y, o.z),
        Action::Gripper(Grip::Close),
    ]
}

/// Analytic plan for the pick, push, pull, stack and place families.
pub fn oracle_plan(task: &TaskSpec, obs: &Observation) -> Result<EpisodeScript, PlanError> {
    let slot = task.target_object();
    let o = object(obs, &slot.id)?;
    let g = obs.goal;
    let actions = match task.family {
        Family::Pick => {
            let mut a = grasp(o);
            a.push(mv(o.x, o.y, g.z));
            a.push(mv(g.x, g.y, g.z));
            a
        }
        Family::Push | Family::Pull => {
            let (dx, dy) = (g.x - o.x, g.y - o.y);
            let n = libm::sqrt(dx * dx + dy * dy);
            let u = if n > 1e-12 {
                [dx / n, dy / n]
            } else {
                [1.0, 0.0]
            };
            let contact = contact_distance(u, &GRIPPER_HALF, &slot.half_extents);
            let back = contact + PUSH_STANDOFF;
            let start = (o.x - u[0] * back, o.y - u[1] * back);
            let end = (g.x - u[0] * contact, g.y - u[1] * contact);
            vec![
                Action::Gripper(Grip::Close),
                mv(start.0, start.1, SAFE_Z),
                mv(start.0, start.1, o.z),
                mv(end.0, end.1, o.z),
                mv(end.0, end.1, SAFE_Z),
            ]
        }
        Family::Stack => {
            let GoalMode::OnObject(base_id) = &task.scene.goal_mode else {
                return Err(PlanError::Unsupported(task.family));
            };
            let base = object(obs, base_id)?;
            let base_half = task
                .scene
                .objects
                .iter()
                .find(|s| &s.id == base_id)
                .map_or(slot.half_extents[2], |s| s.half_extents[2]);
            let release = base.z + base_half + slot.half_extents[2] + RELEASE_GAP;
            let mut a = grasp(o);
            a.extend([
                mv(o.x, o.y, SAFE_Z),
                mv(base.x, base.y, SAFE_Z),
                mv(base.x, base.y, release),
                Action::Gripper(Grip::Open),
                mv(base.x, base.y, SAFE_Z),
            ]);
            a
        }
        Family::Place => {
            let release = slot.half_extents[2] + RELEASE_GAP;
            let mut a = grasp(o);
            a.extend([
                mv(o.x, o.y, SAFE_Z),
                mv(g.x, g.y, SAFE_Z),
                mv(g.x, g.y, release),
                Action::Gripper(Grip::Open),
                mv(g.x, g.y, SAFE_Z),
            ]);
            a
        }
        Family::PegInsert => return Err(PlanError::Unsupported(Family::PegInsert)),
    };
    Ok(EpisodeScript::from_actions(actions))
}

/// Like [`oracle_plan`], and additionally attempts insertion tasks by lowering
/// the peg onto the observed (coarse) socket position.
pub fn waypoint_plan(task: &TaskSpec, obs: &Observation) -> Result<EpisodeScript, PlanError> {
    if task.family != Family::PegInsert {
        return oracle_plan(task, obs);
    }
    let socket = task
        .scene
        .socket
        .ok_or(PlanError::Unsupported(Family::PegInsert))?;
    let slot = task.target_object();
    let p = object(obs, &slot.id)?;
    let s = obs.goal;
    let hole_bottom = 2.0 * socket.half_extents[2] - socket.depth;
    let inserted = hole_bottom + slot.half_extents[2];
    let mut a = grasp(p);
    a.extend([
        mv(p.x, p.y, SAFE_Z),
        mv(s.x, s.y, SAFE_Z),
        mv(s.x, s.y, inserted),
        Action::Gripper(Grip::Open),
        mv(s.x, s.y, SAFE_Z),
    ]);
    Ok(EpisodeScript::from_actions(a))
}

/// Shifts every `move_to` target by `delta`, clamped to the workspace.
pub fn perturb(script: &EpisodeScript, delta: [f64; 3]) -> EpisodeScript {
    let actions = script
        .statements
        .iter()
        .map(|a| match a {
            Action::MoveTo(p) => {
                let mut m = mv(p.x + delta[0], p.y + delta[1], p.z + delta[2]);
                if let Action::MoveTo(q) = &mut m {
                    q.yaw = p.yaw;
                }
                m
            }
            other => *other,
        })
        .collect();
    EpisodeScript::from_actions(actions)
}
