//! Impedance runtime: scale normalized profiles to N/m, derive damping,
//! smooth in the log domain and drive a [`World`] in sim time.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyModel;
use crate::sim::{
    row_major, tangent_basis, Environment, Geometry, World, WorldState, OPERATOR_NOISE,
};
use crate::spd::{spd_ema, SpdMatrix3};

/// `d = DAMPING_GAIN·√k` per eigen-direction.
pub const DAMPING_GAIN: f64 = 1.4;
pub const TRAJECTORY_FORMAT: &str = "stiffness-trajectory/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Low,
    High,
    #[default]
    Copilot,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Low => "low",
            Mode::High => "high",
            Mode::Copilot => "copilot",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Mode::Low),
            "high" => Ok(Mode::High),
            "copilot" => Ok(Mode::Copilot),
            other => Err(Error::param(format!(
                "unknown mode {other:?} (expected low, high or copilot)"
            ))),
        }
    }
}

/// Orientation impedance; logged, not simulated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationalImpedance {
    /// N·m/rad
    pub stiffness: f64,
    /// N·m·s/rad
    pub damping: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceConfig {
    pub k_min: f64,
    pub k_max: f64,
    pub alpha: f64,
    pub eps_ema: f64,
    pub rate_hz: f64,
    pub k_low: f64,
    pub d_low: f64,
    pub k_high: f64,
    pub d_high: f64,
    pub rot_low: RotationalImpedance,
    pub rot_high: RotationalImpedance,
    pub rot_copilot: RotationalImpedance,
    /// Contact force magnitude (N) above which the stop flag is raised.
    pub stop_force: f64,
}

impl Default for ImpedanceConfig {
    fn default() -> Self {
        Self {
            k_min: 300.0,
            k_max: 3000.0,
            alpha: 0.2,
            eps_ema: 1e-6,
            rate_hz: 90.0,
            k_low: 300.0,
            d_low: 20.0,
            k_high: 3000.0,
            d_high: 70.0,
            rot_low: RotationalImpedance {
                stiffness: 10.0,
                damping: 3.0,
            },
            rot_high: RotationalImpedance {
                stiffness: 100.0,
                damping: 8.0,
            },
            rot_copilot: RotationalImpedance {
                stiffness: 40.0,
                damping: 5.5,
            },
            stop_force: 100.0,
        }
    }
}

impl ImpedanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.k_min && self.k_min < self.k_max && self.k_max.is_finite()) {
            return Err(Error::param(
                "stiffness bounds must satisfy 0 < k_min < k_max",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::param("rate_hz must be positive"));
        }
        if !(self.eps_ema >= 0.0) {
            return Err(Error::param("eps_ema must be non-negative"));
        }
        for v in [self.k_low, self.d_low, self.k_high, self.d_high] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param("baseline gains must be positive"));
            }
        }
        if !(self.stop_force > 0.0) {
            return Err(Error::param("stop_force must be positive"));
        }
        Ok(())
    }

    pub fn rotational(&self, mode: Mode) -> RotationalImpedance {
        match mode {
            Mode::Low => self.rot_low,
            Mode::High => self.rot_high,
            Mode::Copilot => self.rot_copilot,
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

/// Maps eigenvalues `λ̃ ∈ [0, 1]` to `k_min + λ̃·(k_max − k_min)`.
pub fn scale_stiffness(k_norm: &SpdMatrix3, k_min: f64, k_max: f64) -> Result<SpdMatrix3> {
    if !(0.0 < k_min && k_min < k_max) {
        return Err(Error::param(
            "stiffness bounds must satisfy 0 < k_min < k_max",
        ));
    }
    let eig = k_norm.eig();
    if let Some(&bad) = eig
        .lambda
        .iter()
        .find(|l| !(-1e-9..=1.0 + 1e-9).contains(*l))
    {
        return Err(Error::OutOfRange(bad));
    }
    let lambda = eig
        .lambda
        .map(|l| k_min + l.clamp(0.0, 1.0) * (k_max - k_min));
    SpdMatrix3::from_eigen(&eig.q, lambda)
}

/// `D = Q·diag(1.4·√k_i)·Qᵀ` for `K = Q·diag(k_i)·Qᵀ`.
pub fn damping_from_stiffness(k: &SpdMatrix3) -> Result<SpdMatrix3> {
    k.map_eigenvalues(|l| DAMPING_GAIN * l.sqrt())
}

/// Stiffness and damping for one tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpedanceCommand {
    pub tick: u64,
    pub mode: Mode,
    pub k: SpdMatrix3,
    pub d: SpdMatrix3,
}

/// One copilot update: scale, smooth against the previous command, derive
/// damping. Without a previous command the raw stiffness is used as is.
pub fn tick(
    cfg: &ImpedanceConfig,
    prev: Option<&ImpedanceCommand>,
    model_output: &SpdMatrix3,
    index: u64,
) -> Result<ImpedanceCommand> {
    let raw = scale_stiffness(model_output, cfg.k_min, cfg.k_max)?;
    let k = match prev {
        Some(p) => spd_ema(&p.k, &raw, cfg.alpha, cfg.eps_ema)?,
        None => raw,
    };
    Ok(ImpedanceCommand {
        tick: index,
        mode: Mode::Copilot,
        k,
        d: damping_from_stiffness(&k)?,
    })
}

/// Fixed isotropic gains for the low and high baselines.
pub fn baseline_command(cfg: &ImpedanceConfig, mode: Mode, index: u64) -> Result<ImpedanceCommand> {
    let (k, d) = match mode {
        Mode::Low => (cfg.k_low, cfg.d_low),
        Mode::High => (cfg.k_high, cfg.d_high),
        Mode::Copilot => return Err(Error::param("copilot mode has no fixed baseline")),
    };
    Ok(ImpedanceCommand {
        tick: index,
        mode,
        k: SpdMatrix3::scaled_identity(k)?,
        d: SpdMatrix3::scaled_identity(d)?,
    })
}

/// Anything that maps a task state to a normalized stiffness profile.
pub trait StiffnessPolicy: Send + Sync {
    fn normalized_stiffness(&self, state: &[f64]) -> Result<SpdMatrix3>;
}

impl StiffnessPolicy for PolicyModel {
    fn normalized_stiffness(&self, state: &[f64]) -> Result<SpdMatrix3> {
        self.predict(state)
    }
}

/// Ignores the state.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy(pub SpdMatrix3);

impl StiffnessPolicy for ConstantPolicy {
    fn normalized_stiffness(&self, _state: &[f64]) -> Result<SpdMatrix3> {
        Ok(self.0)
    }
}

/// Supplies the commanded position each tick; `None` holds the last one.
pub trait PoseSource {
    fn pose(&mut self, tick: u64) -> Option<Vector3<f64>>;
}

/// Replays a fixed list, then holds its final pose.
#[derive(Clone, Debug)]
pub struct ScriptedPoses(pub Vec<Vector3<f64>>);

impl PoseSource for ScriptedPoses {
    fn pose(&mut self, tick: u64) -> Option<Vector3<f64>> {
        self.0.get(tick as usize).or(self.0.last()).copied()
    }
}

/// Latest-value slot shared between a producer and the control loop.
/// Each read sees the most recent pose; older ones are overwritten.
#[derive(Clone, Debug, Default)]
pub struct PoseMailbox(Arc<Mutex<Option<Vector3<f64>>>>);

impl PoseMailbox {
    pub fn post(&self, pose: Vector3<f64>) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = Some(pose);
    }

    pub fn latest(&self) -> Option<Vector3<f64>> {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn clear(&self) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = None;
    }
}

impl PoseSource for PoseMailbox {
    fn pose(&mut self, _tick: u64) -> Option<Vector3<f64>> {
        self.latest()
    }
}

/// Phases of the scripted wall press, in ticks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallPressPlan {
    pub hover_ticks: u64,
    pub approach_ticks: u64,
    /// Height above the wall while hovering (m).
    pub hover_gap: f64,
    /// Commanded penetration while pressing (m).
    pub depth: f64,
    /// Per-axis standard deviation of the command noise (m).
    pub noise: f64,
}

impl Default for WallPressPlan {
    fn default() -> Self {
        Self {
            hover_ticks: 90,
            approach_ticks: 90,
            hover_gap: 0.10,
            depth: 0.01,
            noise: OPERATOR_NOISE,
        }
    }
}

/// Operator that hovers above a wall, moves in, and holds a press with
/// Gaussian jitter on every command.
#[derive(Clone, Debug)]
pub struct WallPressOperator {
    plan: WallPressPlan,
    normal: Vector3<f64>,
    anchor: Vector3<f64>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl WallPressOperator {
    pub fn new(env: &Environment, plan: WallPressPlan, seed: u64) -> Result<Self> {
        let Geometry::Wall { normal, offset } = env.geometry else {
            return Err(Error::param("wall press needs a wall environment"));
        };
        let noise = Normal::new(0.0, plan.noise).map_err(|e| Error::param(e.to_string()))?;
        Ok(Self {
            plan,
            normal,
            anchor: normal * offset,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        })
    }

    /// Noise-free command at `tick`.
    pub fn nominal(&self, tick: u64) -> Vector3<f64> {
        let p = &self.plan;
        let gap = if tick < p.hover_ticks {
            p.hover_gap
        } else if tick < p.hover_ticks + p.approach_ticks {
            let s = (tick - p.hover_ticks + 1) as f64 / p.approach_ticks as f64;
            p.hover_gap + s * (-p.depth - p.hover_gap)
        } else {
            -p.depth
        };
        self.anchor + self.normal * gap
    }

    pub fn is_pressing(&self, tick: u64) -> bool {
        tick >= self.plan.hover_ticks + self.plan.approach_ticks
    }

    pub fn is_hovering(&self, tick: u64) -> bool {
        tick < self.plan.hover_ticks
    }

    pub fn plan(&self) -> &WallPressPlan {
        &self.plan
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    /// In-plane basis of the wall, for callers that offset the press point.
    pub fn tangents(&self) -> (Vector3<f64>, Vector3<f64>) {
        tangent_basis(&self.normal)
    }
}

impl PoseSource for WallPressOperator {
    fn pose(&mut self, tick: u64) -> Option<Vector3<f64>> {
        let n = Vector3::new(
            self.noise.sample(&mut self.rng),
            self.noise.sample(&mut self.rng),
            self.noise.sample(&mut self.rng),
        );
        Some(self.nominal(tick) + n)
    }
}

/// One line of a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub mode: Mode,
    pub cmd_pos: [f64; 3],
    pub act_pos: [f64; 3],
    /// Contact force on the end-effector (N).
    pub force: [f64; 3],
    #[serde(rename = "K")]
    pub k: [f64; 6],
    #[serde(rename = "D")]
    pub d: [f64; 6],
    /// Eigenvectors of `K` as columns, row-major.
    pub eig_q: [f64; 9],
    pub eig_lambda: [f64; 3],
    pub state: Vec<f64>,
    pub stop: bool,
}

impl TickRecord {
    pub fn force_norm(&self) -> f64 {
        Vector3::from(self.force).norm()
    }
}

/// First line of a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub format: String,
    pub mode: Mode,
    pub env: Environment,
    pub config: ImpedanceConfig,
    pub rotational: RotationalImpedance,
}

/// Single-writer control loop over a world and the impedance state.
pub struct Controller {
    cfg: ImpedanceConfig,
    home: Vector3<f64>,
    world: World,
    policy: Option<Arc<dyn StiffnessPolicy>>,
    mode: Mode,
    last: Option<ImpedanceCommand>,
    cmd_pos: Vector3<f64>,
    tick: u64,
}

impl Controller {
    pub fn new(
        cfg: ImpedanceConfig,
        env: Environment,
        mode: Mode,
        policy: Option<Arc<dyn StiffnessPolicy>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if mode == Mode::Copilot && policy.is_none() {
            return Err(Error::param("copilot mode needs a stiffness policy"));
        }
        let home = env.home();
        Ok(Self {
            cfg,
            home,
            world: World::new(env, home)?,
            policy,
            mode,
            last: None,
            cmd_pos: home,
            tick: 0,
        })
    }

    pub fn config(&self) -> &ImpedanceConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn last_command(&self) -> Option<&ImpedanceCommand> {
        self.last.as_ref()
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        if mode == Mode::Copilot && self.policy.is_none() {
            return Err(Error::param("copilot mode needs a stiffness policy"));
        }
        if mode != self.mode {
            self.mode = mode;
            self.last = None;
        }
        Ok(())
    }

    /// Returns the end-effector to its home pose; the tick counter keeps running.
    pub fn reset(&mut self) -> Result<()> {
        self.world = World::new(self.world.env().clone(), self.home)?;
        self.cmd_pos = self.home;
        self.last = None;
        Ok(())
    }

    /// Advances one tick with an optional new commanded position.
    pub fn step(&mut self, pose: Option<Vector3<f64>>) -> Result<TickRecord> {
        if let Some(p) = pose {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite);
            }
            self.cmd_pos = p;
        }
        let index = self.tick;
        let command = match (self.mode, &self.policy) {
            (Mode::Copilot, Some(policy)) => {
                let out = policy.normalized_stiffness(&self.world.state().env_state)?;
                tick(&self.cfg, self.last.as_ref(), &out, index)?
            }
            (Mode::Copilot, None) => {
                return Err(Error::param("copilot mode needs a stiffness policy"))
            }
            (mode, _) => baseline_command(&self.cfg, mode, index)?,
        };
        let state: WorldState = self.world.step(&self.cmd_pos, &command.k)?.clone();
        self.last = Some(command);
        self.tick += 1;

        let eig = command.k.eig();
        Ok(TickRecord {
            tick: index,
            t: index as f64 * self.cfg.period(),
            mode: self.mode,
            cmd_pos: self.cmd_pos.into(),
            act_pos: state.act_pos.into(),
            force: state.contact_force.into(),
            k: command.k.entries(),
            d: command.d.entries(),
            eig_q: row_major(&eig.q),
            eig_lambda: eig.lambda,
            state: state.env_state,
            stop: state.contact_force.norm() > self.cfg.stop_force,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub ticks: Vec<TickRecord>,
}

impl Trajectory {
    pub fn write(&self, w: impl std::io::Write) -> Result<()> {
        let mut w = w;
        serde_json::to_writer(&mut w, &self.header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        crate::records::write_jsonl(w, &self.ticks)
    }
}

/// Runs `ticks` control ticks in sim time.
pub fn rollout(
    cfg: &ImpedanceConfig,
    env: &Environment,
    mode: Mode,
    policy: Option<Arc<dyn StiffnessPolicy>>,
    source: &mut dyn PoseSource,
    ticks: u64,
) -> Result<Trajectory> {
    let mut ctl = Controller::new(*cfg, env.clone(), mode, policy)?;
    let mut out = Vec::with_capacity(ticks as usize);
    for i in 0..ticks {
        out.push(ctl.step(source.pose(i))?);
    }
    Ok(Trajectory {
        header: TrajectoryHeader {
            format: TRAJECTORY_FORMAT.to_string(),
            mode,
            env: env.clone(),
            config: *cfg,
            rotational: cfg.rotational(mode),
        },
        ticks: out,
    })
}
