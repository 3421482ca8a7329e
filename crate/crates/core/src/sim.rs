//! Seeded quasi-static tabletop simulator.
//!
//! Bodies are axis-aligned boxes. The gripper moves toward absolute targets in
//! bounded increments, a closed gripper carries at most one object rigidly, and
//! a moving gripper (or its load) shoves free objects out of the way along the
//! direction of motion. There is no momentum and no friction: every tick ends in
//! a resting configuration.
//!
//! All randomness comes from one ChaCha stream seeded at reset, consumed in a
//! fixed order (goal, objects, then per-move arrival noise), so a given task,
//! seed and action sequence always reproduces the same observations.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{normalize_yaw, Action, Grip, ObjectId, Observation, Pose};
use crate::error::{ContractError, EnvError};
use crate::task::{Family, GoalMode, SocketSpec, TaskSpec};

/// The four-operation environment contract shared by local and remote backends.
pub trait Environment {
    fn reset(&mut self, task: &TaskSpec, seed: u64) -> Result<Observation, EnvError>;
    fn step(&mut self, action: &Action) -> Result<Observation, EnvError>;
    fn get_obs(&mut self) -> Result<Observation, EnvError>;
    fn check_success(&mut self) -> Result<bool, EnvError>;
}

impl<E: Environment + ?Sized> Environment for &mut E {
    fn reset(&mut self, task: &TaskSpec, seed: u64) -> Result<Observation, EnvError> {
        (**self).reset(task, seed)
    }
    fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        (**self).step(action)
    }
    fn get_obs(&mut self) -> Result<Observation, EnvError> {
        (**self).get_obs()
    }
    fn check_success(&mut self) -> Result<bool, EnvError> {
        (**self).check_success()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlParams {
    /// Maximum gripper travel per tick, meters.
    pub max_step: f64,
    /// Per-axis standard deviation of the arrival error of a move, meters.
    pub noise_sigma: f64,
    /// Maximum gripper-to-object-center distance at which a close grasps.
    pub grasp_tolerance: f64,
    /// Tick budget for one script execution (ticks since reset).
    pub tick_limit: u64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            max_step: 0.02,
            noise_sigma: 0.002,
            grasp_tolerance: 0.015,
            tick_limit: 2000,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), ContractError> {
        let err = |m: &str| Err(ContractError::InvalidControl(m.to_string()));
        if !(self.max_step > 0.0 && self.grasp_tolerance > 0.0 && self.tick_limit > 0) {
            return err("step, grasp tolerance and tick limit must be positive");
        }
        // zero noise is allowed so plans can be checked noise-free
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < self.grasp_tolerance) {
            return err("noise sigma must be in [0, grasp tolerance)");
        }
        Ok(())
    }

    /// Arrival noise is clamped to this many standard deviations.
    pub const NOISE_CLAMP_SIGMAS: f64 = 6.0;
}

pub const HOME: Pose = Pose::at(0.0, 0.0, 0.3);
pub const GRIPPER_HALF: [f64; 3] = [0.01, 0.01, 0.01];
const EPS: f64 = 1e-9;
const MAX_PLACEMENT_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub pose: Pose,
    pub half: [f64; 3],
}

impl Body {
    fn bottom(&self) -> f64 {
        self.pose.z - self.half[2]
    }
    fn top(&self) -> f64 {
        self.pose.z + self.half[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attachment {
    /// Object offset from the gripper, expressed in the gripper's yaw frame.
    pub local_offset: [f64; 3],
    pub yaw_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Socket {
    pub spec: SocketSpec,
    /// Exact hole axis (x, y) and block center height.
    pub center: Pose,
    /// Radial misalignment under which a body drops into the hole.
    pub clearance: f64,
}

impl Socket {
    pub fn top(&self) -> f64 {
        self.center.z + self.spec.half_extents[2]
    }
    pub fn hole_bottom(&self) -> f64 {
        self.top() - self.spec.depth
    }
}

/// Full simulator state, including values never exposed to reasoners.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub gripper_pose: Pose,
    pub gripper_open: bool,
    pub attachment: Option<(ObjectId, Attachment)>,
    pub objects: BTreeMap<ObjectId, Body>,
    /// Exact goal used by the success predicate.
    pub hidden_goal: Pose,
    /// Quantized goal marker published in observations.
    pub exposed_goal: Pose,
    pub socket: Option<Socket>,
    pub tick: u64,
    pub rng_seed: u64,
}

/// Exact internal values a trusted auditor may compare scripts against.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenValues {
    pub values: Vec<(String, f64)>,
    /// Success tolerance around the hidden values.
    pub tolerance: f64,
}

pub struct Sim {
    control: ControlParams,
    task: Option<TaskSpec>,
    state: Option<WorldState>,
    rng: ChaCha8Rng,
}

impl Default for Sim {
    fn default() -> Self {
        Self::new(ControlParams::default()).expect("default control params are valid")
    }
}

fn unit(rng: &mut ChaCha8Rng, low: f64, high: f64) -> f64 {
    let u: f64 = rng.random();
    low + (high - low) * u
}

fn quantize(v: f64, q: f64) -> f64 {
    q * libm::round(v / q)
}

fn footprints_overlap(a: &Pose, ah: &[f64; 3], b: &Pose, bh: &[f64; 3], gap: f64) -> bool {
    libm::fabs(a.x - b.x) < ah[0] + bh[0] + gap && libm::fabs(a.y - b.y) < ah[1] + bh[1] + gap
}

fn boxes_overlap(a: [f64; 3], ah: &[f64; 3], b: [f64; 3], bh: &[f64; 3]) -> bool {
    (0..3).all(|i| libm::fabs(a[i] - b[i]) < ah[i] + bh[i] - 1e-12)
}

fn rotate_z(v: [f64; 3], yaw: f64) -> [f64; 3] {
    let (s, c) = (libm::sin(yaw), libm::cos(yaw));
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

fn shortest_yaw_delta(from: f64, to: f64) -> f64 {
    let mut d = normalize_yaw(to - from);
    if d == PI && to < from {
        d = -PI;
    }
    d
}

/// Distance from a pusher to the center of the box it pushes along the unit
/// direction `dir`, once the two axis-aligned boxes just separate.
pub fn contact_distance(dir: [f64; 2], pusher_half: &[f64; 3], pushed_half: &[f64; 3]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..2 {
        let u = libm::fabs(dir[a]);
        if u > 1e-12 {
            best = best.min((pusher_half[a] + pushed_half[a]) / u);
        }
    }
    best
}

impl Sim {
    pub fn new(control: ControlParams) -> Result<Self, ContractError> {
        control.validate()?;
        Ok(Self {
            control,
            task: None,
            state: None,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn control(&self) -> &ControlParams {
        &self.control
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.state.as_ref()
    }

    /// Mutable access for constructing test states directly.
    pub fn world_mut(&mut self) -> Option<&mut WorldState> {
        self.state.as_mut()
    }

    pub fn task(&self) -> Option<&TaskSpec> {
        self.task.as_ref()
    }

    pub fn hidden_values(&self) -> Option<HiddenValues> {
        let (task, state) = (self.task.as_ref()?, self.state.as_ref()?);
        let (label, pose, tolerance) = match &state.socket {
            Some(s) => ("socket_axis", s.center, task.success.clearance),
            None => ("goal", state.hidden_goal, task.success.position_tolerance),
        };
        Some(HiddenValues {
            values: alloc::vec![
                (format!("{label}.x"), pose.x),
                (format!("{label}.y"), pose.y),
            ],
            tolerance,
        })
    }

    fn state(&self) -> Result<&WorldState, EnvError> {
        self.state.as_ref().ok_or(EnvError::NotReset)
    }

    fn sample_world(&mut self, task: &TaskSpec, seed: u64) -> Result<WorldState, EnvError> {
        let scene = &task.scene;
        let rng = &mut self.rng;
        let mut goal = Pose::at(
            unit(rng, scene.goal_x.low, scene.goal_x.high),
            unit(rng, scene.goal_y.low, scene.goal_y.high),
            unit(rng, scene.goal_z.low, scene.goal_z.high),
        );

        let socket = scene.socket.map(|spec| Socket {
            spec,
            center: Pose::at(goal.x, goal.y, spec.half_extents[2]),
            clearance: task.success.clearance,
        });
        if let Some(s) = &socket {
            goal.z = s.top();
        }

        let mut placed: Vec<(Pose, [f64; 3])> = Vec::new();
        if let Some(s) = &socket {
            placed.push((s.center, s.spec.half_extents));
        }
        let mut objects = BTreeMap::new();
        for slot in &scene.objects {
            let mut found = None;
            for _ in 0..MAX_PLACEMENT_TRIES {
                let x = unit(rng, slot.x.low, slot.x.high);
                let y = unit(rng, slot.y.low, slot.y.high);
                let yaw = unit(rng, scene.yaw.low, scene.yaw.high);
                let pose = Pose {
                    x,
                    y,
                    z: slot.half_extents[2],
                    yaw: normalize_yaw(yaw),
                };
                let clear = placed.iter().all(|(p, h)| {
                    !footprints_overlap(&pose, &slot.half_extents, p, h, scene.min_gap)
                });
                if clear {
                    found = Some(pose);
                    break;
                }
            }
            let pose = found.ok_or_else(|| {
                EnvError::Reset(format!("could not place '{}' without overlap", slot.id))
            })?;
            placed.push((pose, slot.half_extents));
            objects.insert(
                slot.id.clone(),
                Body {
                    pose,
                    half: slot.half_extents,
                },
            );
        }

        if let GoalMode::OnObject(id) = &scene.goal_mode {
            let base = objects
                .get(id)
                .ok_or_else(|| EnvError::Reset(format!("goal object '{id}' missing")))?;
            goal = Pose::at(base.pose.x, base.pose.y, base.pose.z);
        }

        let q = scene.goal_quantum;
        let exposed_goal = Pose::at(
            quantize(goal.x, q),
            quantize(goal.y, q),
            quantize(goal.z, q),
        );
        Ok(WorldState {
            gripper_pose: HOME,
            gripper_open: true,
            attachment: None,
            objects,
            hidden_goal: goal,
            exposed_goal,
            socket,
            tick: 0,
            rng_seed: seed,
        })
    }

    fn observe(state: &WorldState) -> Observation {
        Observation {
            gripper_pose: state.gripper_pose,
            gripper_open: state.gripper_open,
            held_object: state.attachment.as_ref().map(|(id, _)| id.clone()),
            objects: state
                .objects
                .iter()
                .map(|(id, b)| (id.clone(), b.pose))
                .collect(),
            goal: state.exposed_goal,
            tick: state.tick,
        }
    }

    fn arrival_noise(&mut self) -> [f64; 3] {
        let sigma = self.control.noise_sigma;
        let clamp = ControlParams::NOISE_CLAMP_SIGMAS * sigma;
        let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
        let mut out = [0.0; 3];
        for v in &mut out {
            *v = normal.sample(&mut self.rng).clamp(-clamp, clamp);
        }
        out
    }

    fn move_to(&mut self, target: Pose) -> Result<(), EnvError> {
        let (start, start_yaw, open, tick) = {
            let s = self.state()?;
            (s.gripper_pose, s.gripper_pose.yaw, s.gripper_open, s.tick)
        };
        let dist = start.distance(&target);
        let ticks = libm::ceil(dist / self.control.max_step - EPS).max(1.0) as u64;
        if tick + ticks > self.control.tick_limit {
            return Err(EnvError::TickLimit {
                limit: self.control.tick_limit,
            });
        }
        let noise = self.arrival_noise();
        let goal = [
            target.x + noise[0],
            target.y + noise[1],
            target.z + noise[2],
        ];
        let dyaw = shortest_yaw_delta(start_yaw, target.yaw);

        let grasp_tol = self.control.grasp_tolerance;
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        // an open gripper may enclose the object it is being lowered onto
        let exempt: Vec<ObjectId> = if open {
            state
                .objects
                .iter()
                .filter(|(id, b)| {
                    !state.attachment.as_ref().is_some_and(|(h, _)| h == *id)
                        && b.pose.distance(&target) <= grasp_tol
                })
                .map(|(id, _)| id.clone())
                .collect()
        } else {
            Vec::new()
        };

        let from = start.position();
        for k in 1..=ticks {
            let frac = k as f64 / ticks as f64;
            let desired = [
                from[0] + (goal[0] - from[0]) * frac,
                from[1] + (goal[1] - from[1]) * frac,
                from[2] + (goal[2] - from[2]) * frac,
            ];
            let yaw = normalize_yaw(start_yaw + dyaw * frac);
            advance(state, desired, yaw, &exempt);
        }
        Ok(())
    }

    fn close(&mut self) -> Result<(), EnvError> {
        let tol = self.control.grasp_tolerance;
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        state.tick += 1;
        if !state.gripper_open {
            return Ok(());
        }
        state.gripper_open = false;
        let g = state.gripper_pose;
        let nearest = state
            .objects
            .iter()
            .map(|(id, b)| (b.pose.distance(&g), id, b))
            .filter(|(d, _, _)| *d <= tol)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, id, body)) = nearest {
            let world = [body.pose.x - g.x, body.pose.y - g.y, body.pose.z - g.z];
            let att = Attachment {
                local_offset: rotate_z(world, -g.yaw),
                yaw_offset: normalize_yaw(body.pose.yaw - g.yaw),
            };
            state.attachment = Some((id.clone(), att));
        }
        Ok(())
    }

    fn open(&mut self) -> Result<(), EnvError> {
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        state.tick += 1;
        state.gripper_open = true;
        if let Some((id, _)) = state.attachment.take() {
            let rest = rest_height(state, &id);
            if let Some(b) = state.objects.get_mut(&id) {
                b.pose.z = rest;
            }
        }
        Ok(())
    }

    fn evaluate(task: &TaskSpec, state: &WorldState) -> bool {
        let target = &task.target_object().id;
        let Some(obj) = state.objects.get(target) else {
            return false;
        };
        let held = state.attachment.as_ref().is_some_and(|(h, _)| h == target);
        let tol = task.success.position_tolerance;
        let goal = &state.hidden_goal;
        match task.family {
            Family::Pick => {
                obj.pose.distance_xy(goal) <= tol && obj.pose.z >= task.success.height_threshold
            }
            Family::Push | Family::Pull | Family::Place => {
                !held
                    && obj.pose.distance_xy(goal) <= tol
                    && libm::fabs(obj.pose.z - rest_height(state, target)) <= tol
            }
            Family::Stack => {
                let GoalMode::OnObject(base_id) = &task.scene.goal_mode else {
                    return false;
                };
                let Some(base) = state.objects.get(base_id) else {
                    return false;
                };
                !held
                    && obj.pose.distance_xy(&base.pose) <= tol
                    && libm::fabs(obj.bottom() - base.top()) <= tol
            }
            Family::PegInsert => match &state.socket {
                Some(s) => {
                    obj.pose.distance_xy(&s.center) <= task.success.clearance
                        && obj.bottom() <= s.hole_bottom() + task.success.clearance
                }
                None => false,
            },
        }
    }
}

/// Height of the highest support under `id`'s footprint, plus its half height.
fn rest_height(state: &WorldState, id: &str) -> f64 {
    let Some(body) = state.objects.get(id) else {
        return 0.0;
    };
    let mut support: f64 = 0.0;
    for (other_id, other) in &state.objects {
        if other_id == id {
            continue;
        }
        if footprints_overlap(&body.pose, &body.half, &other.pose, &other.half, 0.0)
            && other.top() <= body.bottom() + EPS
        {
            support = support.max(other.top());
        }
    }
    if let Some(s) = &state.socket {
        support = support.max(socket_support(s, &body.pose, &body.half));
    }
    support + body.half[2]
}

/// Lowest bottom height allowed for a body by the socket fixture.
fn socket_support(socket: &Socket, pose: &Pose, half: &[f64; 3]) -> f64 {
    let axis_err = libm::sqrt(
        (pose.x - socket.center.x) * (pose.x - socket.center.x)
            + (pose.y - socket.center.y) * (pose.y - socket.center.y),
    );
    let fits_hole =
        half[0] <= socket.spec.half_extents[0] && half[1] <= socket.spec.half_extents[1];
    if fits_hole && axis_err <= socket.clearance {
        socket.hole_bottom()
    } else if footprints_overlap(pose, half, &socket.center, &socket.spec.half_extents, 0.0) {
        socket.top()
    } else {
        0.0
    }
}

/// Moves the gripper (and its load) one tick toward `desired`, resolving
/// contacts: resting on supports it was above, shoving anything else.
fn advance(state: &mut WorldState, desired: [f64; 3], yaw: f64, exempt: &[ObjectId]) {
    let prev = state.gripper_pose;
    let held = state.attachment.clone();
    let held_half = held
        .as_ref()
        .and_then(|(id, _)| state.objects.get(id))
        .map(|b| b.half);

    let load_center = |g: [f64; 3], yaw: f64| -> Option<[f64; 3]> {
        let (_, att) = held.as_ref()?;
        let off = rotate_z(att.local_offset, yaw);
        Some([g[0] + off[0], g[1] + off[1], g[2] + off[2]])
    };

    // (center, half) of each moving body at the previous tick
    let mut movers_prev: Vec<([f64; 3], [f64; 3])> = alloc::vec![(prev.position(), GRIPPER_HALF)];
    if let (Some(c), Some(h)) = (load_center(prev.position(), prev.yaw), held_half) {
        movers_prev.push((c, h));
    }

    let free: Vec<ObjectId> = state
        .objects
        .keys()
        .filter(|id| {
            !held.as_ref().is_some_and(|(h, _)| h == *id) && !exempt.iter().any(|e| e == *id)
        })
        .cloned()
        .collect();
    let already_touching = |state: &WorldState, id: &ObjectId| -> bool {
        let b = &state.objects[id];
        movers_prev
            .iter()
            .any(|(c, h)| boxes_overlap(*c, h, b.pose.position(), &b.half))
    };
    let active: Vec<ObjectId> = free
        .iter()
        .filter(|id| !already_touching(state, id))
        .cloned()
        .collect();

    let mut g = desired;
    let movers_at = |g: [f64; 3]| -> Vec<([f64; 3], [f64; 3], f64)> {
        // (center, half, z offset of center relative to gripper)
        let mut v = alloc::vec![(g, GRIPPER_HALF, 0.0)];
        if let (Some(c), Some(h)) = (load_center(g, yaw), held_half) {
            v.push((c, h, c[2] - g[2]));
        }
        v
    };

    // vertical supports: table, socket, and objects the movers were above
    let mut min_z = f64::NEG_INFINITY;
    for (i, (c, h, dz)) in movers_at(g).into_iter().enumerate() {
        let _ = c;
        min_z = min_z.max(h[2] - dz);
        if let Some(s) = &state.socket {
            let pose = Pose::at(c[0], c[1], c[2]);
            min_z = min_z.max(socket_support(s, &pose, &h) + h[2] - dz);
        }
        let prev_bottom = movers_prev.get(i).map(|(pc, ph)| pc[2] - ph[2]);
        for id in &active {
            let b = &state.objects[id];
            if !footprints_overlap(&Pose::at(c[0], c[1], c[2]), &h, &b.pose, &b.half, -1e-12) {
                continue;
            }
            if prev_bottom.is_some_and(|pb| pb >= b.top() - EPS) {
                min_z = min_z.max(b.top() + h[2] - dz);
            }
        }
    }
    if g[2] < min_z {
        g[2] = min_z;
    }

    // horizontal shoves
    let dh = [g[0] - prev.x, g[1] - prev.y];
    for (c, h, _) in movers_at(g) {
        for id in &active {
            let b = state.objects.get_mut(id).expect("active ids exist");
            if !boxes_overlap(c, &h, b.pose.position(), &b.half) {
                continue;
            }
            let mut dir = dh;
            let mut n = libm::sqrt(dir[0] * dir[0] + dir[1] * dir[1]);
            if n < 1e-12 {
                dir = [b.pose.x - c[0], b.pose.y - c[1]];
                n = libm::sqrt(dir[0] * dir[0] + dir[1] * dir[1]);
            }
            if n < 1e-12 {
                dir = [1.0, 0.0];
                n = 1.0;
            }
            let u = [dir[0] / n, dir[1] / n];
            let mut shove = f64::INFINITY;
            for a in 0..2 {
                if libm::fabs(u[a]) > 1e-12 {
                    let oc = if a == 0 { b.pose.x } else { b.pose.y };
                    let need = if u[a] > 0.0 {
                        (c[a] + h[a] + b.half[a]) - oc
                    } else {
                        oc - (c[a] - h[a] - b.half[a])
                    };
                    shove = shove.min(need / libm::fabs(u[a]));
                }
            }
            let shove = shove.max(0.0);
            b.pose.x += u[0] * shove;
            b.pose.y += u[1] * shove;
        }
    }

    state.gripper_pose = Pose {
        x: g[0],
        y: g[1],
        z: g[2],
        yaw,
    };
    if let Some((id, att)) = &held {
        if let (Some(c), Some(b)) = (load_center(g, yaw), state.objects.get_mut(id)) {
            b.pose = Pose {
                x: c[0],
                y: c[1],
                z: c[2],
                yaw: normalize_yaw(yaw + att.yaw_offset),
            };
        }
    }
    state.tick += 1;
}

impl Environment for Sim {
    fn reset(&mut self, task: &TaskSpec, seed: u64) -> Result<Observation, EnvError> {
        task.validate()
            .map_err(|e| EnvError::Reset(e.to_string()))?;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let state = self.sample_world(task, seed)?;
        let obs = Self::observe(&state);
        self.state = Some(state);
        self.task = Some(task.clone());
        Ok(obs)
    }

    fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        let tick = self.state()?.tick;
        match *action {
            Action::MoveTo(target) => self.move_to(target)?,
            Action::Gripper(Grip::Close) => self.close()?,
            Action::Gripper(Grip::Open) => self.open()?,
            Action::Wait(n) => {
                if tick + n as u64 > self.control.tick_limit {
                    return Err(EnvError::TickLimit {
                        limit: self.control.tick_limit,
                    });
                }
                self.state.as_mut().ok_or(EnvError::NotReset)?.tick += n as u64;
            }
        }
        Ok(Self::observe(self.state()?))
    }

    fn get_obs(&mut self) -> Result<Observation, EnvError> {
        Ok(Self::observe(self.state()?))
    }

    fn check_success(&mut self) -> Result<bool, EnvError> {
        let state = self.state()?;
        let task = self.task.as_ref().ok_or(EnvError::NotReset)?;
        Ok(Self::evaluate(task, state))
    }
}
