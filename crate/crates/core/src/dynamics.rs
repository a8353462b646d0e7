//! Uncertain multi-agent dynamics and the two benchmark systems.
//!
//! Agent `i` evolves as `x_{k+1}^i = f^i(x_k, u_k^i, ω_k^i; θ)` where the
//! dynamics depend on the full joint state (couplings), a scalar model
//! parameter `θ ~ N(0, 1)` and per-agent process noise `ω ~ N(0, σ_n² I)`.
//!
//! * `spring`: two actuated agents tied to an unactuated mass (agent 3).
//! * `collision`: `M` dynamically independent agents that must keep their
//!   positions at least 0.2 apart.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub agents: Vec<Vec<f64>>,
}

impl JointState {
    pub fn new(agents: Vec<Vec<f64>>) -> Self {
        Self { agents }
    }

    pub fn zeros(num_agents: usize, dim: usize) -> Self {
        Self {
            agents: vec![vec![0.0; dim]; num_agents],
        }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// First state component of agent `i`.
    pub fn position(&self, i: usize) -> f64 {
        self.agents[i][0]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.agents.iter().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.agents.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub agents: Vec<Vec<f64>>,
}

impl JointAction {
    pub fn new(agents: Vec<Vec<f64>>) -> Self {
        Self { agents }
    }

    /// All-zero action shaped for `system`.
    pub fn zeros<S: MasSystem + ?Sized>(system: &S) -> Self {
        Self {
            agents: (0..system.num_agents())
                .map(|i| vec![0.0; system.action_dim(i)])
                .collect(),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.agents.iter().flatten().map(|v| v * v).sum()
    }
}

/// Per-dimension action bounds, shared by every actuated dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub low: f64,
    pub high: f64,
}

impl Default for ActionBox {
    fn default() -> Self {
        Self {
            low: -1.0,
            high: 1.0,
        }
    }
}

impl ActionBox {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite()) || low > high {
            return Err(Error::config(format!("invalid action box [{low}, {high}]")));
        }
        Ok(Self { low, high })
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.low, self.high)
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.low..=self.high).contains(&v)
    }

    /// `points` evenly spaced values from `low` to `high` inclusive.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        match points {
            0 => Vec::new(),
            1 => vec![0.5 * (self.low + self.high)],
            n => {
                let step = (self.high - self.low) / (n - 1) as f64;
                (0..n)
                    .map(|k| if k + 1 == n { self.high } else { self.low + step * k as f64 })
                    .collect()
            }
        }
    }
}

/// Uniform distribution over a box: the first state component of every
/// agent in `position`, the remaining components in `velocity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl StateBox {
    pub fn new(position: [f64; 2], velocity: [f64; 2]) -> Result<Self> {
        for (name, [lo, hi]) in [("position", position), ("velocity", velocity)] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::config(format!("invalid {name} range [{lo}, {hi}]")));
            }
        }
        Ok(Self { position, velocity })
    }

    pub fn sample<S: MasSystem + ?Sized>(&self, system: &S, rng: &mut SimRng) -> JointState {
        let draw = |rng: &mut SimRng, [lo, hi]: [f64; 2]| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        };
        let agents = (0..system.num_agents())
            .map(|_| {
                (0..system.state_dim())
                    .map(|d| draw(rng, if d == 0 { self.position } else { self.velocity }))
                    .collect()
            })
            .collect();
        JointState { agents }
    }
}

/// One realization of the model uncertainty: the parameter θ and the
/// per-agent process noise for a single transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySample {
    pub theta: f64,
    pub noise: Vec<Vec<f64>>,
}

/// Interface the filters, value estimation and simulator are written against.
pub trait MasSystem: Sync {
    fn num_agents(&self) -> usize;

    /// State dimension per agent.
    fn state_dim(&self) -> usize;

    /// Action dimension of agent `i`; zero for unactuated agents.
    fn action_dim(&self, agent: usize) -> usize;

    fn noise_dim(&self) -> usize {
        self.state_dim()
    }

    fn noise_scale(&self) -> f64;

    fn action_box(&self) -> ActionBox;

    fn gamma(&self) -> f64;

    /// Per-agent reference state used by reward and tracking error.
    fn reference(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    /// Pure transition map `(x, u, ω, θ) -> x'`. Dimensions are already checked.
    fn transition(&self, x: &JointState, u: &JointAction, s: &UncertaintySample) -> JointState;

    fn cost(&self, x: &JointState) -> f64;

    fn is_safe(&self, x: &JointState) -> bool;

    /// Whether agent `i` is involved in no violation of `x`.
    fn agent_safe(&self, x: &JointState, _i: usize) -> bool {
        self.is_safe(x)
    }

    fn reward(&self, _x: &JointState, _u: &JointAction) -> f64 {
        1.0
    }

    fn actuated_agents(&self) -> Vec<usize> {
        (0..self.num_agents())
            .filter(|&i| self.action_dim(i) > 0)
            .collect()
    }

    fn check_state(&self, x: &JointState) -> Result<()> {
        if x.agents.len() != self.num_agents() {
            return Err(Error::contract(format!(
                "state has {} agents, model has {}",
                x.agents.len(),
                self.num_agents()
            )));
        }
        if let Some((i, a)) = x
            .agents
            .iter()
            .enumerate()
            .find(|(_, a)| a.len() != self.state_dim())
        {
            return Err(Error::contract(format!(
                "agent {i} state has dimension {}, expected {}",
                a.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    fn check_action(&self, u: &JointAction) -> Result<()> {
        if u.agents.len() != self.num_agents() {
            return Err(Error::contract(format!(
                "action has {} agents, model has {}",
                u.agents.len(),
                self.num_agents()
            )));
        }
        for (i, a) in u.agents.iter().enumerate() {
            if a.len() != self.action_dim(i) {
                return Err(Error::contract(format!(
                    "agent {i} action has dimension {}, expected {}",
                    a.len(),
                    self.action_dim(i)
                )));
            }
        }
        Ok(())
    }

    /// Dimension-checked transition.
    fn step(&self, x: &JointState, u: &JointAction, s: &UncertaintySample) -> Result<JointState> {
        self.check_state(x)?;
        self.check_action(u)?;
        if s.noise.len() != self.num_agents()
            || s.noise.iter().any(|w| w.len() != self.noise_dim())
        {
            return Err(Error::contract("noise sample does not match model dimensions"));
        }
        Ok(self.transition(x, u, s))
    }

    /// Fresh per-agent noise `N(0, σ_n² I)`.
    fn sample_noise(&self, rng: &mut SimRng) -> Vec<Vec<f64>> {
        let scale = self.noise_scale();
        (0..self.num_agents())
            .map(|_| {
                (0..self.noise_dim())
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        if scale == 0.0 {
                            0.0
                        } else {
                            scale * z
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// θ from the standard normal prior followed by one noise draw.
    fn sample_uncertainty_with(&self, rng: &mut SimRng) -> UncertaintySample {
        let theta: f64 = rng.sample(StandardNormal);
        let noise = self.sample_noise(rng);
        UncertaintySample { theta, noise }
    }
}

/// Deterministic sample of the uncertainty for `seed`.
pub fn sample_uncertainty<S: MasSystem + ?Sized>(system: &S, seed: u64) -> UncertaintySample {
    system.sample_uncertainty_with(&mut seed::rng(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Spring,
    Collision,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spring" => Ok(Preset::Spring),
            "collision" => Ok(Preset::Collision),
            other => Err(Error::config(format!("unknown preset '{other}'"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Spring => "spring",
            Preset::Collision => "collision",
        })
    }
}

/// Overrides applied on top of a preset's defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    /// Number of agents (collision preset only; the spring system always has 3).
    pub agents: Option<usize>,
    pub noise_scale: Option<f64>,
    pub gamma: Option<f64>,
    pub action_box: Option<ActionBox>,
}

const SPRING_LIMIT: f64 = 2.0;
const COLLISION_DISTANCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct MasModel {
    pub preset: Preset,
    agents: usize,
    action_dims: Vec<usize>,
    pub noise_scale: f64,
    pub gamma: f64,
    pub action_box: ActionBox,
    /// Weight of `‖u‖²` in the reward (`W_u = w·I`).
    pub action_weight: f64,
    /// Diagonal of `W_x^i` per agent.
    pub state_weights: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
}

impl MasModel {
    pub fn num_actuated(&self) -> usize {
        self.action_dims.iter().filter(|&&d| d > 0).count()
    }
}

/// Build a preset model with its default parameters, then apply overrides.
pub fn make_model(preset: Preset, params: &ModelParams) -> Result<MasModel> {
    let mut model = match preset {
        Preset::Spring => {
            if let Some(m) = params.agents {
                if m != 3 {
                    return Err(Error::config(format!(
                        "spring preset has exactly 3 agents, got {m}"
                    )));
                }
            }
            MasModel {
                preset,
                agents: 3,
                action_dims: vec![1, 1, 0],
                noise_scale: 0.01,
                gamma: 0.99,
                action_box: ActionBox::default(),
                action_weight: 0.01,
                state_weights: vec![vec![0.1, 0.0], vec![0.1, 0.0], vec![1.0, 0.0]],
                reference: vec![7.0 / 4.0, 0.0],
            }
        }
        Preset::Collision => {
            let m = params.agents.unwrap_or(2);
            if m < 2 {
                return Err(Error::config(format!(
                    "collision preset needs at least 2 agents, got {m}"
                )));
            }
            MasModel {
                preset,
                agents: m,
                action_dims: vec![1; m],
                noise_scale: 0.1,
                gamma: 0.99,
                action_box: ActionBox::default(),
                action_weight: 0.1,
                state_weights: vec![vec![1.0, 0.1]; m],
                reference: vec![0.0, 0.0],
            }
        }
    };
    if let Some(s) = params.noise_scale {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::config(format!("noise scale must be >= 0, got {s}")));
        }
        model.noise_scale = s;
    }
    if let Some(g) = params.gamma {
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1), got {g}")));
        }
        model.gamma = g;
    }
    if let Some(b) = params.action_box {
        model.action_box = ActionBox::new(b.low, b.high)?;
    }
    Ok(model)
}

/// `1 / (1 + exp(-10 z))`
pub fn sigm10(z: f64) -> f64 {
    1.0 / (1.0 + (-10.0 * z).exp())
}

/// Saturating linear map onto [-1, 1].
fn saturate(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

impl MasSystem for MasModel {
    fn num_agents(&self) -> usize {
        self.agents
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self, agent: usize) -> usize {
        self.action_dims[agent]
    }

    fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    fn action_box(&self) -> ActionBox {
        self.action_box
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reference(&self) -> Vec<f64> {
        self.reference.clone()
    }

    fn transition(&self, x: &JointState, u: &JointAction, s: &UncertaintySample) -> JointState {
        let theta = s.theta;
        match self.preset {
            Preset::Spring => {
                let mass = x.position(2);
                let e1 = x.position(0) - mass;
                let e2 = x.position(1) - mass;
                let coupling = 0.5 * theta * theta;
                let agents = (0..3)
                    .map(|i| {
                        let (p, v) = (x.agents[i][0], x.agents[i][1]);
                        let w = &s.noise[i];
                        let g = match i {
                            0 => 5.0 * u.agents[0][0] - coupling * e1,
                            1 => 5.0 * u.agents[1][0] - coupling * e2,
                            _ => coupling * (e1 + e2),
                        };
                        vec![
                            p + 0.1 * v + w[0],
                            v + 0.1 * g - 0.1 * saturate(v).sin() + w[1],
                        ]
                    })
                    .collect();
                JointState { agents }
            }
            Preset::Collision => {
                let agents = x
                    .agents
                    .iter()
                    .zip(&u.agents)
                    .zip(&s.noise)
                    .map(|((xi, ui), w)| {
                        let (p, v) = (xi[0], xi[1]);
                        vec![p + 0.01 * v + theta * p.sin() + w[0], v + ui[0] + w[1]]
                    })
                    .collect();
                JointState { agents }
            }
        }
    }

    fn cost(&self, x: &JointState) -> f64 {
        match self.preset {
            // 1 - Σ (1/3) sigm(4 - p²) written as Σ (1/3) sigm(p² - 4) to avoid cancellation.
            Preset::Spring => (0..3)
                .map(|i| sigm10(x.position(i).powi(2) - SPRING_LIMIT * SPRING_LIMIT) / 3.0)
                .sum(),
            Preset::Collision => {
                let m = self.agents;
                let d2 = COLLISION_DISTANCE * COLLISION_DISTANCE;
                (0..m)
                    .map(|i| {
                        let nearest = (0..m)
                            .filter(|&j| j != i)
                            .map(|j| (x.position(i) - x.position(j)).powi(2))
                            .fold(f64::INFINITY, f64::min);
                        sigm10(d2 - nearest)
                    })
                    .sum::<f64>()
                    / m as f64
            }
        }
    }

    fn is_safe(&self, x: &JointState) -> bool {
        match self.preset {
            Preset::Spring => (0..3).all(|i| x.position(i).abs() <= SPRING_LIMIT),
            Preset::Collision => {
                let m = self.agents;
                (0..m).all(|i| {
                    (i + 1..m).all(|j| (x.position(i) - x.position(j)).abs() >= COLLISION_DISTANCE)
                })
            }
        }
    }

    fn agent_safe(&self, x: &JointState, i: usize) -> bool {
        match self.preset {
            Preset::Spring => x.position(i).abs() <= SPRING_LIMIT,
            Preset::Collision => (0..self.agents)
                .filter(|&j| j != i)
                .all(|j| (x.position(i) - x.position(j)).abs() >= COLLISION_DISTANCE),
        }
    }

    fn reward(&self, x: &JointState, u: &JointAction) -> f64 {
        let action_term = self.action_weight * u.squared_norm();
        let state_term: f64 = x
            .agents
            .iter()
            .zip(&self.state_weights)
            .map(|(xi, w)| {
                xi.iter()
                    .zip(&self.reference)
                    .zip(w)
                    .map(|((v, r), w)| w * (v - r).powi(2))
                    .sum::<f64>()
            })
            .sum();
        (-action_term - state_term).exp()
    }
}
