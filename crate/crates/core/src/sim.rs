//! Quasi-static point-contact world.
//!
//! The end-effector is a point held by the robot's Cartesian spring `K` at the
//! commanded position. Environment constraints are stiff penalty springs, and
//! every step returns the force-balance equilibrium of the two. There are no
//! dynamics, friction or gravity.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::DemoRecord;
use crate::spd::{is_rotation, SpdMatrix3, SymMatrix3};

/// Isotropic stiffness (N/m) added to every ground-truth environment matrix.
pub const BACKGROUND_STIFFNESS: f64 = 1.0;
/// Stiffness used for rigid constraints.
pub const RIGID_STIFFNESS: f64 = 1e9;
/// Robot stiffness used while recording demonstrations (N/m).
pub const DEMO_ROBOT_STIFFNESS: f64 = 3000.0;
/// Demonstration sampling period (s).
pub const DEMO_PERIOD: f64 = 0.1;
/// Default number of demonstrations per task.
pub const DEFAULT_EPISODES: usize = 16;
/// Standard deviation of the scripted operator's positional jitter (m).
pub const OPERATOR_NOISE: f64 = 0.003;
/// Bound on the per-episode wrist camera misalignment (rad).
pub const CAMERA_NOISE: f64 = 15.0 * std::f64::consts::PI / 180.0;
/// Distance from the door handle within which the gripper latches onto it (m).
pub const DOOR_CAPTURE: f64 = 0.03;

const SOLVER_MAX_ITERS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Wall,
    Door,
    Slot,
    Free,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::Wall, EnvKind::Door, EnvKind::Slot, EnvKind::Free];

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Wall => "wall",
            EnvKind::Door => "door",
            EnvKind::Slot => "slot",
            EnvKind::Free => "free",
        }
    }

    /// Length of the task state vector.
    pub fn state_dim(&self) -> usize {
        match self {
            EnvKind::Door => 1,
            _ => 3,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown environment '{s}' (expected wall, door, slot or free)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    /// Half-space `normal·x ≥ offset`; the wall fills the other side.
    Wall {
        normal: Vector3<f64>,
        offset: f64,
    },
    /// Door on a vertical hinge through `hinge`. The handle sits at `radius`
    /// from the hinge and at `closed_angle` (azimuth, rad) when shut.
    Door {
        hinge: Vector3<f64>,
        radius: f64,
        closed_angle: f64,
    },
    /// Channel entering along `axis` at `origin`, laterally bounded by
    /// `half_width` in both cross-channel directions.
    Slot {
        origin: Vector3<f64>,
        axis: Vector3<f64>,
        half_width: f64,
    },
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub geometry: Geometry,
    /// Stiffness of each constrained direction (N/m).
    pub stiffness: f64,
}

impl Environment {
    pub fn new(geometry: Geometry, stiffness: f64) -> Result<Self> {
        let env = Self {
            geometry,
            stiffness,
        };
        env.validate()?;
        Ok(env)
    }

    /// Default scene for each task kind, with rigid constraints.
    pub fn preset(kind: EnvKind) -> Self {
        let geometry = match kind {
            EnvKind::Wall => Geometry::Wall {
                normal: Vector3::x(),
                offset: 0.0,
            },
            EnvKind::Door => Geometry::Door {
                hinge: Vector3::zeros(),
                radius: 0.3,
                closed_angle: 0.0,
            },
            EnvKind::Slot => Geometry::Slot {
                origin: Vector3::zeros(),
                axis: -Vector3::z(),
                half_width: 0.001,
            },
            EnvKind::Free => Geometry::Free,
        };
        Self {
            geometry,
            stiffness: RIGID_STIFFNESS,
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self.geometry {
            Geometry::Wall { .. } => EnvKind::Wall,
            Geometry::Door { .. } => EnvKind::Door,
            Geometry::Slot { .. } => EnvKind::Slot,
            Geometry::Free => EnvKind::Free,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0 && self.stiffness.is_finite()) {
            return Err(Error::param("environment stiffness must be positive"));
        }
        let unit = |v: &Vector3<f64>, what: &str| {
            if (v.norm() - 1.0).abs() > 1e-9 {
                Err(Error::param(format!("{what} must be a unit vector")))
            } else {
                Ok(())
            }
        };
        match &self.geometry {
            Geometry::Wall { normal, offset } => {
                unit(normal, "wall normal")?;
                if !offset.is_finite() {
                    return Err(Error::param("wall offset must be finite"));
                }
            }
            Geometry::Door { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::param("door radius must be positive"));
                }
            }
            Geometry::Slot {
                axis, half_width, ..
            } => {
                unit(axis, "slot axis")?;
                if !(*half_width > 0.0) {
                    return Err(Error::param("slot half-width must be positive"));
                }
            }
            Geometry::Free => {}
        }
        Ok(())
    }

    /// A collision-free starting pose near the task.
    pub fn home(&self) -> Vector3<f64> {
        match &self.geometry {
            Geometry::Wall { normal, offset } => normal * (offset + 0.12),
            Geometry::Door {
                hinge,
                radius,
                closed_angle,
            } => hinge + radial(*closed_angle) * (radius + 0.15),
            Geometry::Slot { origin, axis, .. } => origin - axis * 0.1,
            Geometry::Free => Vector3::zeros(),
        }
    }

    /// Task state observed at end-effector position `act`.
    ///
    /// wall: (u, v, signed gap) in the wall frame; door: (opening angle);
    /// slot: (depth along the channel, lateral offset 1, lateral offset 2);
    /// free: position.
    pub fn task_state(&self, act: &Vector3<f64>, door_angle: f64) -> Vec<f64> {
        match &self.geometry {
            Geometry::Wall { normal, offset } => {
                let (t1, t2) = tangent_basis(normal);
                vec![t1.dot(act), t2.dot(act), normal.dot(act) - offset]
            }
            Geometry::Door { .. } => vec![door_angle],
            Geometry::Slot { origin, axis, .. } => {
                let (e1, e2) = tangent_basis(axis);
                let d = act - origin;
                vec![axis.dot(&d), e1.dot(&d), e2.dot(&d)]
            }
            Geometry::Free => vec![act.x, act.y, act.z],
        }
    }

    /// Analytic environment stiffness (N/m) at a task state.
    pub fn ground_truth_stiffness(&self, state: &[f64]) -> Result<SpdMatrix3> {
        let kind = self.kind();
        if state.len() != kind.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: kind.state_dim(),
                got: state.len(),
            });
        }
        let k = self.stiffness;
        let constrained = match &self.geometry {
            Geometry::Wall { normal, .. } => SymMatrix3::outer(normal) * k,
            Geometry::Door { closed_angle, .. } => {
                SymMatrix3::outer(&radial(closed_angle + state[0])) * k
            }
            Geometry::Slot { axis, .. } => {
                let (e1, e2) = tangent_basis(axis);
                (SymMatrix3::outer(&e1) + SymMatrix3::outer(&e2)) * k
            }
            Geometry::Free => SymMatrix3::zeros(),
        };
        SpdMatrix3::new(constrained.add_identity(BACKGROUND_STIFFNESS))
    }

    /// Penalty constraints at `x`. Door constraints are linearized about `x`.
    fn constraints(&self, x: &Vector3<f64>, cmd: &Vector3<f64>) -> Vec<Constraint> {
        match &self.geometry {
            Geometry::Wall { normal, offset } => vec![Constraint {
                normal: *normal,
                offset: *offset,
                bilateral: false,
            }],
            Geometry::Door {
                hinge,
                radius,
                closed_angle,
            } => {
                let h = horizontal(&(x - hinge));
                let n = if h.norm() > 1e-12 {
                    h.normalize()
                } else {
                    radial(*closed_angle)
                };
                vec![Constraint {
                    normal: n,
                    offset: n.dot(hinge) + radius,
                    bilateral: true,
                }]
            }
            Geometry::Slot {
                origin,
                axis,
                half_width,
            } => {
                // lateral walls only exist below the entrance
                if axis.dot(&(cmd - origin)) < 0.0 {
                    return Vec::new();
                }
                let (e1, e2) = tangent_basis(axis);
                [e1, e2]
                    .iter()
                    .flat_map(|e| {
                        [
                            Constraint {
                                normal: -e,
                                offset: -e.dot(origin) - half_width,
                                bilateral: false,
                            },
                            Constraint {
                                normal: *e,
                                offset: e.dot(origin) - half_width,
                                bilateral: false,
                            },
                        ]
                    })
                    .collect()
            }
            Geometry::Free => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Constraint {
    /// Points into the admissible region.
    normal: Vector3<f64>,
    /// Boundary is `normal·x = offset`.
    offset: f64,
    bilateral: bool,
}

impl Constraint {
    fn penetration(&self, x: &Vector3<f64>) -> f64 {
        self.offset - self.normal.dot(x)
    }

    fn active(&self, x: &Vector3<f64>) -> bool {
        self.bilateral || self.penetration(x) > 0.0
    }
}

/// Quasi-static equilibrium for one command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub act_pos: Vector3<f64>,
    /// Force the robot applies to the environment, `K·(cmd − act)` (N).
    pub force: Vector3<f64>,
}

impl StepOutcome {
    /// Contact force acting on the end-effector (the environment's reaction).
    pub fn contact_force(&self) -> Vector3<f64> {
        -self.force
    }
}

/// Equilibrium of the robot spring `k_robot` anchored at `cmd` against the
/// environment. Door handles are treated as grasped.
pub fn step(env: &Environment, cmd: &Vector3<f64>, k_robot: &SpdMatrix3) -> Result<StepOutcome> {
    if !cmd.iter().all(|v| v.is_finite()) {
        return Err(Error::param("commanded position must be finite"));
    }
    let k = k_robot.to_matrix();
    let ke = env.stiffness;
    let mut x = *cmd;
    let mut active: Vec<Constraint> = env
        .constraints(&x, cmd)
        .into_iter()
        .filter(|c| c.active(cmd))
        .collect();
    if active.is_empty() {
        return Ok(StepOutcome {
            act_pos: *cmd,
            force: Vector3::zeros(),
        });
    }

    for _ in 0..SOLVER_MAX_ITERS {
        // solve for the displacement from the command to keep the rigid
        // case well scaled
        let mut lhs = k;
        let mut rhs = Vector3::zeros();
        for c in &active {
            lhs += c.normal * c.normal.transpose() * ke;
            rhs += c.normal * ((c.offset - c.normal.dot(cmd)) * ke);
        }
        let d = lhs
            .cholesky()
            .ok_or_else(|| Error::param("contact system is not positive definite"))?
            .solve(&rhs);
        let next = cmd + d;
        let next_active: Vec<Constraint> = env
            .constraints(&next, cmd)
            .into_iter()
            .filter(|c| c.active(&next))
            .collect();
        let moved = (next - x).norm();
        let same_set = next_active.len() == active.len()
            && next_active
                .iter()
                .zip(&active)
                .all(|(a, b)| a.normal == b.normal || (a.bilateral && b.bilateral));
        x = next;
        let done = same_set && moved <= 1e-15 * (1.0 + x.norm());
        active = next_active;
        if done || active.is_empty() {
            break;
        }
    }
    Ok(StepOutcome {
        act_pos: x,
        force: -(k * (x - cmd)),
    })
}

/// Snapshot of the world after a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub act_pos: Vector3<f64>,
    /// Contact force on the end-effector (N).
    pub contact_force: Vector3<f64>,
    pub env_state: Vec<f64>,
    pub tick: u64,
}

/// Stateful world: tracks the door angle and whether the handle is held.
#[derive(Clone, Debug)]
pub struct World {
    env: Environment,
    state: WorldState,
    door_angle: f64,
    grasped: bool,
}

impl World {
    pub fn new(env: Environment, start: Vector3<f64>) -> Result<Self> {
        env.validate()?;
        let env_state = env.task_state(&start, 0.0);
        Ok(Self {
            env,
            state: WorldState {
                act_pos: start,
                contact_force: Vector3::zeros(),
                env_state,
                tick: 0,
            },
            door_angle: 0.0,
            grasped: false,
        })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn door_angle(&self) -> f64 {
        self.door_angle
    }

    pub fn step(&mut self, cmd: &Vector3<f64>, k_robot: &SpdMatrix3) -> Result<&WorldState> {
        let outcome = match &self.env.geometry {
            Geometry::Door {
                hinge,
                radius,
                closed_angle,
            } => {
                let h = horizontal(&(cmd - hinge));
                let rho = h.norm();
                let near_circle = (rho - radius).abs() <= DOOR_CAPTURE;
                if !self.grasped && near_circle {
                    let handle = hinge + radial(closed_angle + self.door_angle) * *radius;
                    self.grasped = horizontal(&(cmd - handle)).norm() <= DOOR_CAPTURE;
                } else if !near_circle {
                    self.grasped = false;
                }
                if self.grasped {
                    let out = step(&self.env, cmd, k_robot)?;
                    let r = horizontal(&(out.act_pos - hinge));
                    self.door_angle = wrap_angle(r.y.atan2(r.x) - closed_angle);
                    out
                } else {
                    StepOutcome {
                        act_pos: *cmd,
                        force: Vector3::zeros(),
                    }
                }
            }
            _ => step(&self.env, cmd, k_robot)?,
        };
        self.state = WorldState {
            act_pos: outcome.act_pos,
            contact_force: outcome.contact_force(),
            env_state: self.env.task_state(&outcome.act_pos, self.door_angle),
            tick: self.state.tick + 1,
        };
        Ok(&self.state)
    }
}

/// Scripted demonstrations with a stiff robot, recorded every 0.1 s.
///
/// Each episode randomizes the object placement and adds Gaussian jitter to
/// every waypoint. Episodes use independent random streams, so the output
/// depends only on `(env, episodes, seed)`.
pub fn scripted_demo(env: &Environment, episodes: usize, seed: u64) -> Result<Vec<DemoRecord>> {
    if episodes == 0 {
        return Err(Error::param("episodes must be at least 1"));
    }
    env.validate()?;
    let per_episode: Result<Vec<Vec<DemoRecord>>> = (0..episodes)
        .into_par_iter()
        .map(|ep| run_episode(env, ep, seed))
        .collect();
    Ok(per_episode?.into_iter().flatten().collect())
}

fn run_episode(env: &Environment, episode: usize, seed: u64) -> Result<Vec<DemoRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    let jitter = Normal::new(0.0, OPERATOR_NOISE).expect("valid normal");

    let placed = randomize_placement(env, &mut rng);
    let plan = plan_episode(&placed, &mut rng);
    let cam_noise = random_rotation(&mut rng, CAMERA_NOISE);
    let k_robot = SpdMatrix3::scaled_identity(DEMO_ROBOT_STIFFNESS)?;

    let mut world = World::new(placed.clone(), plan[0])?;
    let mut out = Vec::with_capacity(plan.len());
    for (i, nominal) in plan.iter().enumerate() {
        let noise = Vector3::new(
            jitter.sample(&mut rng),
            jitter.sample(&mut rng),
            jitter.sample(&mut rng),
        );
        let cmd = nominal + noise;
        let state = world.step(&cmd, &k_robot)?.clone();
        let view = viewing_direction(&placed, world.door_angle());
        let cam = cam_noise * look_along(&view);
        debug_assert!(is_rotation(&cam, 1e-9));
        out.push(DemoRecord {
            task: placed.kind(),
            episode,
            t: i as f64 * DEMO_PERIOD,
            state: state.env_state,
            force: state.contact_force.into(),
            cam_rot: row_major(&cam),
            cmd_pos: cmd.into(),
            act_pos: state.act_pos.into(),
        });
    }
    Ok(out)
}

fn randomize_placement(env: &Environment, rng: &mut ChaCha8Rng) -> Environment {
    let mut placed = env.clone();
    match &mut placed.geometry {
        Geometry::Wall { offset, .. } => *offset += rng.random_range(-0.03..0.03),
        Geometry::Door { hinge, .. } => {
            hinge.x += rng.random_range(-0.05..0.05);
            hinge.y += rng.random_range(-0.05..0.05);
        }
        Geometry::Slot { origin, axis, .. } => {
            let (e1, e2) = tangent_basis(axis);
            *origin += e1 * rng.random_range(-0.05..0.05) + e2 * rng.random_range(-0.05..0.05);
        }
        Geometry::Free => {}
    }
    placed
}

/// Nominal waypoints at the demonstration rate.
fn plan_episode(env: &Environment, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut path = Vec::new();
    match &env.geometry {
        Geometry::Wall { normal, offset } => {
            let (t1, t2) = tangent_basis(normal);
            let u0 = rng.random_range(-0.1..0.1);
            let v0 = rng.random_range(-0.1..0.1);
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let depth = rng.random_range(0.005..0.015);
            let stroke = 0.15;
            let at = |u: f64, v: f64, gap: f64| t1 * u + t2 * v + normal * (offset + gap);
            let (du, dv) = (heading.cos() * stroke, heading.sin() * stroke);
            // approach, press, wipe, retract
            lerp_into(&mut path, at(u0, v0, 0.15), at(u0, v0, 0.0), 12);
            lerp_into(&mut path, at(u0, v0, 0.0), at(u0, v0, -depth), 4);
            lerp_into(
                &mut path,
                at(u0, v0, -depth),
                at(u0 + du, v0 + dv, -depth),
                30,
            );
            lerp_into(
                &mut path,
                at(u0 + du, v0 + dv, -depth),
                at(u0 + du, v0 + dv, 0.15),
                12,
            );
        }
        Geometry::Door {
            hinge,
            radius,
            closed_angle,
        } => {
            let handle =
                |theta: f64, out: f64| hinge + radial(closed_angle + theta) * (radius + out);
            let open_to = rng.random_range(80f64..95.0).to_radians();
            lerp_into(&mut path, handle(0.0, 0.15), handle(0.0, 0.0), 10);
            lerp_into(&mut path, handle(0.0, 0.0), handle(0.0, 0.0), 3);
            let n = 40;
            path.extend((1..=n).map(|i| handle(open_to * i as f64 / n as f64, 0.0)));
            lerp_into(&mut path, handle(open_to, 0.0), handle(open_to, 0.15), 8);
        }
        Geometry::Slot { origin, axis, .. } => {
            let (e1, e2) = tangent_basis(axis);
            let bearing = rng.random_range(0.0..std::f64::consts::TAU);
            let pick = origin - axis * 0.1 + (e1 * bearing.cos() + e2 * bearing.sin()) * 0.1;
            let above = origin - axis * 0.05;
            let depth = rng.random_range(0.03..0.05);
            lerp_into(&mut path, pick, pick, 6);
            lerp_into(&mut path, pick, above, 15);
            lerp_into(&mut path, above, origin + axis * depth, 30);
            lerp_into(&mut path, origin + axis * depth, origin - axis * 0.08, 10);
        }
        Geometry::Free => {
            let mut p = Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.0..0.2),
            );
            for _ in 0..4 {
                let q = Vector3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(0.0..0.2),
                );
                lerp_into(&mut path, p, q, 10);
                p = q;
            }
        }
    }
    path
}

/// Appends `n` evenly spaced points ending at `to` (excluding `from`).
fn lerp_into(path: &mut Vec<Vector3<f64>>, from: Vector3<f64>, to: Vector3<f64>, n: usize) {
    path.extend((1..=n).map(|i| from.lerp(&to, i as f64 / n as f64)));
}

/// Direction the wrist camera looks along for the current tool pose.
fn viewing_direction(env: &Environment, door_angle: f64) -> Vector3<f64> {
    match &env.geometry {
        Geometry::Wall { normal, .. } => -normal,
        Geometry::Door { closed_angle, .. } => -radial(closed_angle + door_angle),
        Geometry::Slot { axis, .. } => *axis,
        Geometry::Free => -Vector3::z(),
    }
}

/// Camera rotation (columns: camera axes in world) with optical axis `z_cam = dir`.
pub fn look_along(dir: &Vector3<f64>) -> Matrix3<f64> {
    let z = dir.normalize();
    let (x, _) = tangent_basis(&z);
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Rotation about a uniformly random axis by an angle uniform in `[-max, max]`.
pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Matrix3<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let axis = loop {
        let v = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        if v.norm() > 1e-6 {
            break Unit::new_normalize(v);
        }
    };
    let angle = rng.random_range(-max_angle..=max_angle);
    Rotation3::from_axis_angle(&axis, angle).into_inner()
}

/// Deterministic orthonormal pair completing `n` to a right-handed frame
/// `(t1, t2, n)`.
pub fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vector3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let t1 = (a - n * n.dot(&a)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Horizontal unit vector at azimuth `angle`.
pub fn radial(angle: f64) -> Vector3<f64> {
    Vector3::new(angle.cos(), angle.sin(), 0.0)
}

fn horizontal(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0)
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + tau
    } else {
        w
    }
}

pub fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

pub fn from_row_major(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn iso(k: f64) -> SpdMatrix3 {
        SpdMatrix3::scaled_identity(k).unwrap()
    }

    fn wall(stiffness: f64) -> Environment {
        Environment::new(
            Geometry::Wall {
                normal: Vector3::x(),
                offset: 0.0,
            },
            stiffness,
        )
        .unwrap()
    }

    #[test]
    fn free_space_follows_command() {
        let env = Environment::preset(EnvKind::Free);
        let cmd = Vector3::new(0.3, -0.2, 0.1);
        let out = step(&env, &cmd, &iso(3000.0)).unwrap();
        assert_eq!(out.act_pos, cmd);
        assert_eq!(out.force, Vector3::zeros());
    }

    #[test]
    fn rigid_wall_two_spring_equilibrium() {
        let out = step(&wall(1e9), &Vector3::new(-0.01, 0.0, 0.0), &iso(3000.0)).unwrap();
        // x_act = k_r·x_cmd / (k_r + k_e)
        let x_act = 3000.0 * -0.01 / (3000.0 + 1e9);
        assert_relative_eq!(out.act_pos.x, x_act, max_relative = 1e-9);
        assert_relative_eq!(out.force.x, 3000.0 * (-0.01 - x_act), max_relative = 1e-9);
        assert_relative_eq!(out.force.x, -30.0, epsilon = 1e-3);
        assert_eq!(out.force.y, 0.0);
        assert_eq!(out.force.z, 0.0);
    }

    #[test]
    fn compliant_wall_splits_penetration() {
        let out = step(&wall(3000.0), &Vector3::new(-0.01, 0.0, 0.0), &iso(3000.0)).unwrap();
        assert_relative_eq!(out.act_pos.x, -0.005, epsilon = 1e-15);
        assert_relative_eq!(out.force.norm(), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn anisotropic_robot_pushes_only_along_the_normal() {
        let k =
            SpdMatrix3::new(SymMatrix3::new(900.0, 400.0, 100.0, 2000.0, -300.0, 1500.0)).unwrap();
        let cmd = Vector3::new(-0.01, 0.02, 0.03);
        let out = step(&wall(1e9), &cmd, &k).unwrap();
        let f = out.force;
        assert!(f.y.abs() < 1e-9 * f.norm() && f.z.abs() < 1e-9 * f.norm());
        assert!(out.act_pos.x > -1e-6);
    }

    #[test]
    fn door_force_is_radial() {
        let env = Environment::preset(EnvKind::Door);
        let angle = 0.7f64;
        let cmd = radial(angle) * 0.305 + Vector3::new(0.0, 0.0, 0.02);
        let out = step(&env, &cmd, &iso(3000.0)).unwrap();
        let r = radial(angle);
        let radial_part = out.force.dot(&r).abs();
        let tangential = out.force - r * out.force.dot(&r);
        assert!(tangential.norm() < 1e-9 * radial_part);
        assert_relative_eq!(
            horizontal(&out.act_pos).norm(),
            0.3 + radial_part / env.stiffness,
            epsilon = 1e-12
        );
        assert_relative_eq!(radial_part, 15.0, epsilon = 1e-3);
    }

    #[test]
    fn slot_walls_act_only_inside_the_channel() {
        let env = Environment::preset(EnvKind::Slot);
        let k = iso(3000.0);
        let above = Vector3::new(0.004, 0.0, 0.02);
        assert_eq!(step(&env, &above, &k).unwrap().force, Vector3::zeros());
        let inside = Vector3::new(0.004, -0.003, -0.02);
        let out = step(&env, &inside, &k).unwrap();
        assert_relative_eq!(out.force.x, 3000.0 * 0.003, epsilon = 1e-3);
        assert_relative_eq!(out.force.y, -3000.0 * 0.002, epsilon = 1e-3);
        assert!(out.force.z.abs() < 1e-9);
    }

    #[test]
    fn ground_truth_presets() {
        let free = Environment::preset(EnvKind::Free);
        assert_eq!(
            free.ground_truth_stiffness(&[0.0, 0.0, 0.0]).unwrap().sym(),
            &SymMatrix3::identity()
        );
        let w = wall(1e4);
        assert_eq!(
            w.ground_truth_stiffness(&[0.0, 0.0, 0.0]).unwrap().sym(),
            &SymMatrix3::diag(1e4 + 1.0, 1.0, 1.0)
        );
        assert!(w.ground_truth_stiffness(&[0.0]).is_err());
    }

    #[test]
    fn door_ground_truth_is_rotation_equivariant() {
        let env = Environment::preset(EnvKind::Door);
        let at0 = env.ground_truth_stiffness(&[0.0]).unwrap();
        let at90 = env
            .ground_truth_stiffness(&[std::f64::consts::FRAC_PI_2])
            .unwrap();
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let rotated = at0.sym().conjugate(rz.matrix());
        assert!((rotated - *at90.sym()).frobenius_norm() < 1e-6);
        let top = at90.eig().vector(0);
        assert!(top.dot(&Vector3::y()).abs() > 1.0 - 1e-12);
    }

    #[test]
    fn unknown_env_name_is_rejected() {
        assert!("cupboard".parse::<EnvKind>().is_err());
        assert_eq!("door".parse::<EnvKind>().unwrap(), EnvKind::Door);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let bad = Environment::new(
            Geometry::Wall {
                normal: Vector3::new(1.0, 1.0, 0.0),
                offset: 0.0,
            },
            1e9,
        );
        assert!(bad.is_err());
        let bad = Environment::new(
            Geometry::Slot {
                origin: Vector3::zeros(),
                axis: Vector3::z(),
                half_width: 0.0,
            },
            1e9,
        );
        assert!(bad.is_err());
        assert!(Environment::new(Geometry::Free, 0.0).is_err());
    }

    #[test]
    fn door_latches_and_releases() {
        let env = Environment::preset(EnvKind::Door);
        let k = iso(3000.0);
        let mut world = World::new(env, radial(0.0) * 0.45).unwrap();
        world.step(&(radial(0.0) * 0.45), &k).unwrap();
        assert_eq!(world.state().contact_force, Vector3::zeros());
        world.step(&(radial(0.0) * 0.31), &k).unwrap();
        assert!(world.state().contact_force.norm() > 20.0);
        world.step(&(radial(0.5) * 0.3), &k).unwrap();
        assert_relative_eq!(world.door_angle(), 0.5, epsilon = 1e-9);
        world.step(&(radial(0.5) * 0.45), &k).unwrap();
        assert_eq!(world.state().contact_force, Vector3::zeros());
        assert_relative_eq!(world.state().env_state[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn look_along_is_a_rotation() {
        for d in [Vector3::x(), -Vector3::z(), Vector3::new(0.3, -0.4, 0.5)] {
            let r = look_along(&d);
            assert!(is_rotation(&r, 1e-12));
            assert_relative_eq!(r.column(2).into_owned(), d.normalize(), epsilon = 1e-12);
        }
    }
}
