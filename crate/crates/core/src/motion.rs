//! Approach, descent and force-regulated scanning against the simulated plant.

use std::io::Write;

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forcecalib::Wrench;
use crate::geometry::{rotation_vector, RigidTransform, Vec3};
use crate::simworld::{ArmModel, ContactPlant, Joints, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("inverse kinematics did not converge after {iterations} iterations (position {position_error:.3e} mm, rotation {rotation_error:.3e} rad)")]
    NotConverged {
        iterations: usize,
        position_error: f64,
        rotation_error: f64,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("planner gave up after {0} iterations")]
    PlanningTimeout(usize),
    #[error("{0} configuration is in collision")]
    InCollision(&'static str),
    #[error("no contact within {0} s")]
    Timeout(f64),
    #[error("invalid controller gains: {0}")]
    InvalidGains(&'static str),
    #[error("invalid scan command: {0}")]
    InvalidCommand(&'static str),
}

/// Point `k0` mm above the lesion along the plate normal.
pub fn standoff_target(lesion: &Vec3, n: &Vec3, k0: f64) -> Vec3 {
    lesion + n * k0
}

/// Force magnitude of a wrench, N.
pub fn contact_force_magnitude(w: &Wrench) -> f64 {
    w.force.norm()
}

// ---------------------------------------------------------------------------
// Inverse kinematics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkOptions {
    pub max_iters: usize,
    /// mm
    pub position_tolerance: f64,
    /// rad
    pub rotation_tolerance: f64,
    /// Damping of the least-squares step, in units of the weighted error.
    pub damping: f64,
    /// Length converting rotation errors to mm when weighting the step.
    pub rotation_weight: f64,
    /// Largest joint change per iteration, rad.
    pub max_step: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            position_tolerance: 1e-6,
            rotation_tolerance: 1e-6,
            damping: 1e-3,
            rotation_weight: 100.0,
            max_step: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub joints: Joints,
    pub iterations: usize,
}

fn pose_error(current: &RigidTransform, target: &RigidTransform) -> (Vec3, Vec3) {
    let dp = target.translation - current.translation;
    let dw = rotation_vector(&(target.rotation * current.rotation.transpose()));
    (dp, dw)
}

/// Damped least-squares IK seeded at `seed`. Joint values are clamped to
/// their limits after each step.
pub fn ik_solve(
    arm: &ArmModel,
    target: &RigidTransform,
    seed: &Joints,
    opts: &IkOptions,
) -> Result<IkSolution, MotionError> {
    arm.within_limits(seed)?;
    let mut q = *seed;
    let w = opts.rotation_weight;
    for iter in 0..=opts.max_iters {
        let (dp, dw) = pose_error(&arm.fk_unchecked(&q), target);
        if dp.norm() <= opts.position_tolerance && dw.norm() <= opts.rotation_tolerance {
            arm.within_limits(&q)?;
            return Ok(IkSolution {
                joints: q,
                iterations: iter,
            });
        }
        if iter == opts.max_iters {
            return Err(MotionError::NotConverged {
                iterations: iter,
                position_error: dp.norm(),
                rotation_error: dw.norm(),
            });
        }
        let mut jac = arm.jacobian(&q);
        for r in 3..6 {
            for c in 0..6 {
                jac[(r, c)] *= w;
            }
        }
        let e = Vector6::new(dp.x, dp.y, dp.z, w * dw.x, w * dw.y, w * dw.z);
        let jjt = jac * jac.transpose() + Matrix6::identity() * opts.damping.powi(2);
        let Some(y) = jjt.cholesky().map(|c| c.solve(&e)) else {
            return Err(MotionError::NotConverged {
                iterations: iter,
                position_error: dp.norm(),
                rotation_error: dw.norm(),
            });
        };
        let mut dq = jac.transpose() * y;
        let big = dq.amax();
        if big > opts.max_step {
            dq *= opts.max_step / big;
        }
        for (i, j) in arm.joints.iter().enumerate() {
            q[i] = (q[i] + dq[i]).clamp(j.limits[0], j.limits[1]);
        }
    }
    unreachable!("loop returns on its last iteration")
}

// ---------------------------------------------------------------------------
// Collision model and planning

/// Axis-aligned box in the base frame, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let excess = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            d2 += excess * excess;
        }
        d2.sqrt()
    }
}

/// Arm links as chains of spheres along the kinematic skeleton, plus tool
/// spheres fixed in the end-effector frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionModel {
    pub link_radius: f64,
    /// Largest gap between consecutive sphere centers on a link, mm.
    pub sphere_spacing: f64,
    /// Skeleton vertices with fewer proximal joints than this are ignored
    /// (the base column cannot move and is assumed clear).
    pub skip_proximal: usize,
    pub tool_points: Vec<[f64; 3]>,
    pub tool_radius: f64,
}

impl Default for CollisionModel {
    fn default() -> Self {
        Self {
            link_radius: 40.0,
            sphere_spacing: 30.0,
            skip_proximal: 1,
            tool_points: vec![[0.0, 0.0, 40.0], [0.0, 0.0, 90.0], [0.0, 0.0, 140.0]],
            tool_radius: 25.0,
        }
    }
}

impl CollisionModel {
    /// Farthest tool point from the end-effector origin, mm.
    pub fn tool_reach(&self) -> f64 {
        self.tool_points
            .iter()
            .map(|p| Vec3::from(*p).norm() + self.tool_radius)
            .fold(0.0, f64::max)
    }

    /// `(center, radius)` of every collision sphere at `q`.
    pub fn spheres(&self, arm: &ArmModel, q: &Joints) -> Vec<(Vec3, f64)> {
        let skel = arm.skeleton(q);
        let mut out = Vec::new();
        for w in skel.windows(2) {
            let ((a, _), (b, tag)) = (w[0], w[1]);
            if tag < self.skip_proximal.max(1) {
                continue;
            }
            let len = (b - a).norm();
            let n = (len / self.sphere_spacing).ceil().max(1.0) as usize;
            for k in 0..=n {
                out.push((a + (b - a) * (k as f64 / n as f64), self.link_radius));
            }
        }
        let t_be = arm.fk_unchecked(q);
        for p in &self.tool_points {
            out.push((t_be.transform_point(&Vec3::from(*p)), self.tool_radius));
        }
        out
    }

    /// Smallest signed gap between any sphere and any obstacle, mm.
    pub fn clearance(&self, arm: &ArmModel, q: &Joints, obstacles: &[Aabb]) -> f64 {
        let mut best = f64::INFINITY;
        for (c, r) in self.spheres(arm, q) {
            for b in obstacles {
                best = best.min(b.distance(&c) - r);
            }
        }
        best
    }

    /// Bound on how far any collision geometry point moves per radian of
    /// joint `i`.
    pub fn lever_arm(&self, arm: &ArmModel, i: usize) -> f64 {
        arm.distal_length(i) + self.tool_reach() + self.link_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrtOptions {
    /// Tree extension length, rad (max-norm).
    pub step: f64,
    pub goal_bias: f64,
    pub max_iters: usize,
    /// Largest joint change between checked configurations, rad.
    pub collision_step: f64,
    /// Configurations closer than this to an obstacle count as colliding, mm.
    pub clearance_margin: f64,
    pub shortcut_iters: usize,
    pub seed: u64,
}

impl Default for RrtOptions {
    fn default() -> Self {
        Self {
            step: 0.1,
            goal_bias: 0.1,
            max_iters: 50_000,
            collision_step: 0.02,
            clearance_margin: 1.0,
            shortcut_iters: 100,
            seed: 7,
        }
    }
}

pub struct Planner<'a> {
    pub arm: &'a ArmModel,
    pub model: &'a CollisionModel,
    pub obstacles: &'a [Aabb],
    pub opts: RrtOptions,
    levers: [f64; 6],
}

fn lerp(a: &Joints, b: &Joints, s: f64) -> Joints {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * s)
}

fn joint_distance(a: &Joints, b: &Joints) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl<'a> Planner<'a> {
    pub fn new(
        arm: &'a ArmModel,
        model: &'a CollisionModel,
        obstacles: &'a [Aabb],
        opts: RrtOptions,
    ) -> Self {
        let levers = std::array::from_fn(|i| model.lever_arm(arm, i));
        Self {
            arm,
            model,
            obstacles,
            opts,
            levers,
        }
    }

    pub fn config_free(&self, q: &Joints) -> bool {
        self.arm.within_limits(q).is_ok()
            && self.model.clearance(self.arm, q, self.obstacles) >= self.opts.clearance_margin
    }

    /// Certifies the straight joint segment `a → b`. Steps are sized so the
    /// geometry cannot move farther than the clearance measured at the
    /// previous check, so every intermediate configuration is clear, not just
    /// the sampled ones.
    pub fn edge_free(&self, a: &Joints, b: &Joints) -> bool {
        if self.obstacles.is_empty() {
            return self.arm.within_limits(a).is_ok() && self.arm.within_limits(b).is_ok();
        }
        let sweep: f64 = (0..6).map(|i| (b[i] - a[i]).abs() * self.levers[i]).sum();
        let max_joint = joint_distance(a, b);
        let mut s = 0.0;
        loop {
            let q = lerp(a, b, s);
            if self.arm.within_limits(&q).is_err() {
                return false;
            }
            let c = self.model.clearance(self.arm, &q, self.obstacles);
            if c < self.opts.clearance_margin {
                return false;
            }
            if s >= 1.0 {
                return true;
            }
            let mut ds = if sweep > 0.0 { c / sweep } else { 1.0 };
            if max_joint > 0.0 {
                ds = ds.min(self.opts.collision_step / max_joint);
            }
            s = (s + ds).min(1.0);
        }
    }

    pub fn plan(&self, start: &Joints, goal: &Joints) -> Result<Vec<Joints>, MotionError> {
        if !self.config_free(start) {
            return Err(MotionError::InCollision("start"));
        }
        if !self.config_free(goal) {
            return Err(MotionError::InCollision("goal"));
        }
        if start == goal {
            return Ok(vec![*start]);
        }
        if self.edge_free(start, goal) {
            return Ok(vec![*start, *goal]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        let mut nodes: Vec<Joints> = vec![*start];
        let mut parent: Vec<usize> = vec![0];
        for _ in 0..self.opts.max_iters {
            let sample: Joints = if rng.random::<f64>() < self.opts.goal_bias {
                *goal
            } else {
                std::array::from_fn(|i| {
                    let [lo, hi] = self.arm.joints[i].limits;
                    rng.random_range(lo..hi)
                })
            };
            let (near_idx, near_d) = nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (i, joint_distance(n, &sample)))
                .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
            if near_d == 0.0 {
                continue;
            }
            let near = nodes[near_idx];
            let new = if near_d <= self.opts.step {
                sample
            } else {
                lerp(&near, &sample, self.opts.step / near_d)
            };
            if !self.edge_free(&near, &new) {
                continue;
            }
            nodes.push(new);
            parent.push(near_idx);
            if self.edge_free(&new, goal) {
                let mut path = vec![*goal];
                let mut i = nodes.len() - 1;
                loop {
                    path.push(nodes[i]);
                    if i == 0 {
                        break;
                    }
                    i = parent[i];
                }
                path.reverse();
                log::debug!("rrt: {} nodes, {} raw waypoints", nodes.len(), path.len());
                return Ok(self.shortcut(path, &mut rng));
            }
        }
        log::warn!("rrt: no path after {} iterations", self.opts.max_iters);
        Err(MotionError::PlanningTimeout(self.opts.max_iters))
    }

    fn shortcut(&self, mut path: Vec<Joints>, rng: &mut ChaCha8Rng) -> Vec<Joints> {
        for _ in 0..self.opts.shortcut_iters {
            if path.len() < 3 {
                break;
            }
            let i = rng.random_range(0..path.len() - 2);
            let j = rng.random_range(i + 2..path.len());
            if self.edge_free(&path[i], &path[j]) {
                path.drain(i + 1..j);
            }
        }
        path
    }

    /// Re-checks a path at a fixed interpolation step (rad, max-norm); a
    /// configuration passes with clearance ≥ 0.
    pub fn validate_path(&self, path: &[Joints], step: f64) -> bool {
        for q in path {
            if self.model.clearance(self.arm, q, self.obstacles) < 0.0 {
                return false;
            }
        }
        for w in path.windows(2) {
            let n = (joint_distance(&w[0], &w[1]) / step).ceil().max(1.0) as usize;
            for k in 1..n {
                let q = lerp(&w[0], &w[1], k as f64 / n as f64);
                if self.arm.within_limits(&q).is_err()
                    || self.model.clearance(self.arm, &q, self.obstacles) < 0.0
                {
                    return false;
                }
            }
        }
        true
    }
}

/// Convenience wrapper around [`Planner::plan`].
pub fn rrt_plan(
    arm: &ArmModel,
    start: &Joints,
    goal: &Joints,
    model: &CollisionModel,
    obstacles: &[Aabb],
    opts: &RrtOptions,
) -> Result<Vec<Joints>, MotionError> {
    Planner::new(arm, model, obstacles, *opts).plan(start, goal)
}

// ---------------------------------------------------------------------------
// Contact and force control

/// Force magnitude seen by the controller after subtracting the bias
/// estimate for the current (fixed) probe orientation.
pub fn sensed_force(plant: &mut ContactPlant, offset: &Wrench) -> f64 {
    contact_force_magnitude(&(plant.read_wrench() - *offset))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentEvent {
    /// First sample with nonzero true contact force, s (None if the probe
    /// started in contact).
    pub contact_time: Option<f64>,
    pub stop_time: f64,
    pub stop_force: f64,
    /// `stop_force − threshold`
    pub overshoot: f64,
    pub stop_position: [f64; 3],
    pub steps: usize,
}

/// Moves along `−n` at `v_descend` until the sensed force reaches the
/// threshold. The force is sampled before each motion step, so a probe that
/// already presses hard enough stops at t = 0.
pub fn descend_until_contact(
    plant: &mut ContactPlant,
    n: &Vec3,
    v_descend: f64,
    f_threshold: f64,
    dt: f64,
    timeout: f64,
    offset: &Wrench,
) -> Result<DescentEvent, MotionError> {
    if !(f_threshold > 0.0 && dt > 0.0 && v_descend > 0.0) {
        return Err(MotionError::InvalidCommand(
            "threshold, speed and period must be positive",
        ));
    }
    let n = n.normalize();
    let t0 = plant.time;
    let mut contact_time = None;
    let mut steps = 0usize;
    loop {
        let f = sensed_force(plant, offset);
        if contact_time.is_none() && steps > 0 && plant.contact_force() > 0.0 {
            contact_time = Some(plant.time - t0);
        }
        if f >= f_threshold {
            plant.velocity = Vec3::zeros();
            let p = plant.position;
            return Ok(DescentEvent {
                contact_time,
                stop_time: plant.time - t0,
                stop_force: f,
                overshoot: f - f_threshold,
                stop_position: [p.x, p.y, p.z],
                steps,
            });
        }
        if plant.time - t0 >= timeout {
            plant.velocity = Vec3::zeros();
            return Err(MotionError::Timeout(timeout));
        }
        plant.step(-n * v_descend, dt);
        steps += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    /// mm/s per N
    pub kp: f64,
    /// s
    pub ti: f64,
    /// s
    pub td: f64,
    /// mm/s
    pub output_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 3.0,
            ti: 2.0,
            td: 0.0,
            output_limit: 10.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), MotionError> {
        if !(self.kp > 0.0) {
            return Err(MotionError::InvalidGains("kp must be positive"));
        }
        if !(self.ti > 0.0) {
            return Err(MotionError::InvalidGains("ti must be positive"));
        }
        if !(self.td >= 0.0) {
            return Err(MotionError::InvalidGains("td must be non-negative"));
        }
        if !(self.output_limit > 0.0) {
            return Err(MotionError::InvalidGains("output limit must be positive"));
        }
        Ok(())
    }
}

/// Discrete PID on the force error. Trapezoidal integral, backward-difference
/// derivative; the first call has neither. While the output saturates the
/// integral is held.
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    pub integral: f64,
    prev_error: Option<f64>,
}

impl PidController {
    pub fn new(gains: PidGains) -> Result<Self, MotionError> {
        gains.validate()?;
        Ok(Self {
            gains,
            integral: 0.0,
            prev_error: None,
        })
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn step(&mut self, e: f64, dt: f64) -> f64 {
        let g = &self.gains;
        let (candidate, derivative) = match self.prev_error {
            Some(prev) => (self.integral + 0.5 * (prev + e) * dt, (e - prev) / dt),
            None => (self.integral, 0.0),
        };
        self.prev_error = Some(e);
        let out = g.kp * (e + candidate / g.ti + g.td * derivative);
        if out.abs() > g.output_limit {
            out.signum() * g.output_limit
        } else {
            self.integral = candidate;
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanCommand {
    pub tangential_dir: Vec3,
    pub plate_normal: Vec3,
    /// mm/s
    pub v_t: f64,
    /// N
    pub f_target: f64,
    /// s
    pub duration: f64,
    /// s
    pub dt: f64,
}

impl ScanCommand {
    pub fn validate(&self) -> Result<(), MotionError> {
        if (self.tangential_dir.norm() - 1.0).abs() > 1e-12
            || (self.plate_normal.norm() - 1.0).abs() > 1e-12
        {
            return Err(MotionError::InvalidCommand("directions must be unit vectors"));
        }
        if self.tangential_dir.dot(&self.plate_normal).abs() > 1e-9 {
            return Err(MotionError::InvalidCommand(
                "scan direction must lie in the plate",
            ));
        }
        if !(self.v_t > 0.0 && self.dt > 0.0 && self.duration >= 0.0) {
            return Err(MotionError::InvalidCommand(
                "speed and period must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub t: f64,
    pub position: [f64; 3],
    pub v_n: f64,
    pub force: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanEvent {
    ContactLost { t: f64 },
    ContactRegained { t: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanLog {
    pub rows: Vec<ScanRow>,
    pub events: Vec<ScanEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceStats {
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
}

impl ScanLog {
    /// Columns `t,px,py,pz,v_n,F`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,px,py,pz,v_n,F")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t, r.position[0], r.position[1], r.position[2], r.v_n, r.force
            )?;
        }
        Ok(())
    }

    /// Mean and population standard deviation of the force for `t ≥ from`.
    pub fn force_stats(&self, from: f64) -> Option<ForceStats> {
        let f: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.t >= from - 1e-12)
            .map(|r| r.force)
            .collect();
        if f.is_empty() {
            return None;
        }
        let n = f.len() as f64;
        let mean = f.iter().sum::<f64>() / n;
        let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(ForceStats {
            mean,
            std: var.sqrt(),
            samples: f.len(),
        })
    }

    /// Largest excess of the force over `target`, or 0.
    pub fn overshoot(&self, target: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| r.force - target)
            .fold(0.0, f64::max)
    }
}

/// Time without contact after which a loss event is emitted, s.
pub const CONTACT_LOST_AFTER: f64 = 0.5;

/// Runs the force-regulated sweep: each period the sensed force feeds the
/// PID and the commanded velocity `v_t τ − v_n n` is executed.
pub fn run_scan(
    plant: &mut ContactPlant,
    cmd: &ScanCommand,
    gains: &PidGains,
    offset: &Wrench,
) -> Result<ScanLog, MotionError> {
    cmd.validate()?;
    let mut pid = PidController::new(*gains)?;
    let steps = (cmd.duration / cmd.dt).round() as usize;
    let mut log = ScanLog {
        rows: Vec::with_capacity(steps + 1),
        events: Vec::new(),
    };
    let mut seen_contact = plant.contact_force() > 0.0;
    let mut zero_since: Option<f64> = None;
    let mut lost = false;
    for k in 0..=steps {
        let t = k as f64 * cmd.dt;
        let f = sensed_force(plant, offset);
        let touching = plant.contact_force() > 0.0;
        if touching {
            seen_contact = true;
            zero_since = None;
            if lost {
                lost = false;
                log.events.push(ScanEvent::ContactRegained { t });
            }
        } else if seen_contact {
            let since = *zero_since.get_or_insert(t);
            if !lost && t - since > CONTACT_LOST_AFTER {
                lost = true;
                log.events.push(ScanEvent::ContactLost { t });
            }
        }
        let v_n = pid.step(cmd.f_target - f, cmd.dt);
        let p = plant.position;
        log.rows.push(ScanRow {
            t,
            position: [p.x, p.y, p.z],
            v_n,
            force: f,
        });
        if k < steps {
            plant.step(cmd.tangential_dir * cmd.v_t - cmd.plate_normal * v_n, cmd.dt);
        }
    }
    plant.velocity = Vec3::zeros();
    Ok(log)
}
