//! Nominal and safe feedback policies.
//!
//! Policies are per-agent PD laws on the shared joint state, clipped to the
//! action box. An optional repulsion term pushes an agent away from
//! neighbours closer than `spacing`, which is what a separation-keeping
//! backup policy needs on the collision system. `cem_improve` runs a
//! cross-entropy search over the PD gains against Monte-Carlo cost-to-go.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ActionBox, JointAction, JointState, MasSystem};
use crate::error::{Error, Result};
use crate::seed;
use crate::value::mc_cost_to_go;

/// Anything that maps a joint state to a joint action.
pub trait FeedbackPolicy: Sync {
    fn act(&self, x: &JointState) -> Result<JointAction>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
}

impl Gains {
    pub fn new(kp: f64, kd: f64) -> Self {
        Self { kp, kd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Proportional,
    Improved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLaw {
    pub kp: f64,
    pub kd: f64,
    /// Target position.
    pub reference: f64,
    pub repulsion: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub action_box: ActionBox,
    /// `None` for unactuated agents.
    pub agents: Vec<Option<AgentLaw>>,
}

/// `u^i = clip(-kp (x1^i - ref) - kd x2^i, U)` for every actuated agent.
pub fn make_proportional<S: MasSystem + ?Sized>(system: &S, gains: &[Gains]) -> Result<Policy> {
    let actuated = system.actuated_agents();
    if gains.len() != actuated.len() {
        return Err(Error::contract(format!(
            "{} gain pairs for {} actuated agents",
            gains.len(),
            actuated.len()
        )));
    }
    if let Some(i) = (0..system.num_agents()).find(|&i| system.action_dim(i) > 1) {
        return Err(Error::contract(format!(
            "agent {i} has a {}-dimensional action; proportional laws are scalar",
            system.action_dim(i)
        )));
    }
    let reference = system.reference()[0];
    let mut gains = gains.iter();
    let agents = (0..system.num_agents())
        .map(|i| {
            (system.action_dim(i) > 0).then(|| {
                let g = gains.next().expect("counted above");
                AgentLaw {
                    kp: g.kp,
                    kd: g.kd,
                    reference,
                    repulsion: 0.0,
                    spacing: 0.0,
                }
            })
        })
        .collect();
    Ok(Policy {
        kind: PolicyKind::Proportional,
        action_box: system.action_box(),
        agents,
    })
}

impl Policy {
    /// Per-agent target positions (one entry per agent, unactuated entries ignored).
    pub fn with_references(mut self, references: &[f64]) -> Result<Self> {
        if references.len() != self.agents.len() {
            return Err(Error::contract("one reference per agent required"));
        }
        for (law, &r) in self.agents.iter_mut().zip(references) {
            if let Some(law) = law {
                law.reference = r;
            }
        }
        Ok(self)
    }

    pub fn with_repulsion(mut self, gain: f64, spacing: f64) -> Self {
        for law in self.agents.iter_mut().flatten() {
            law.repulsion = gain;
            law.spacing = spacing;
        }
        self
    }

    /// Flat parameter vector `[kp_0, kd_0, kp_1, kd_1, ...]` over actuated agents.
    pub fn params(&self) -> Vec<f64> {
        self.agents
            .iter()
            .flatten()
            .flat_map(|law| [law.kp, law.kd])
            .collect()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let n = self.agents.iter().flatten().count();
        if params.len() != 2 * n {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                2 * n,
                params.len()
            )));
        }
        let mut out = self.clone();
        for (law, p) in out.agents.iter_mut().flatten().zip(params.chunks(2)) {
            law.kp = p[0];
            law.kd = p[1];
        }
        Ok(out)
    }

    fn agent_action(&self, law: &AgentLaw, i: usize, x: &JointState) -> f64 {
        let (p, v) = (x.agents[i][0], x.agents[i][1]);
        let mut u = -law.kp * (p - law.reference) - law.kd * v;
        if law.repulsion != 0.0 {
            let push: f64 = (0..x.num_agents())
                .filter(|&j| j != i)
                .map(|j| {
                    let d = p - x.agents[j][0];
                    let gap = (law.spacing - d.abs()).max(0.0);
                    // tie broken toward the agent with the smaller index moving down
                    let dir = if d > 0.0 || (d == 0.0 && i > j) { 1.0 } else { -1.0 };
                    dir * gap
                })
                .sum();
            u += law.repulsion * push;
        }
        self.action_box.clip(u)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_u8(match self.kind {
            PolicyKind::Proportional => 0,
            PolicyKind::Improved => 1,
        })?;
        w.write_f64::<LittleEndian>(self.action_box.low)?;
        w.write_f64::<LittleEndian>(self.action_box.high)?;
        w.write_u32::<LittleEndian>(self.agents.len() as u32)?;
        for law in &self.agents {
            match law {
                None => w.write_u8(0)?,
                Some(law) => {
                    w.write_u8(1)?;
                    for v in [law.kp, law.kd, law.reference, law.repulsion, law.spacing] {
                        w.write_f64::<LittleEndian>(v)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let kind = match r.read_u8()? {
            0 => PolicyKind::Proportional,
            1 => PolicyKind::Improved,
            k => return Err(Error::Format(format!("unknown policy kind {k}"))),
        };
        let low = r.read_f64::<LittleEndian>()?;
        let high = r.read_f64::<LittleEndian>()?;
        let action_box = ActionBox::new(low, high).map_err(|e| Error::Format(e.to_string()))?;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut agents = Vec::with_capacity(n);
        for _ in 0..n {
            agents.push(match r.read_u8()? {
                0 => None,
                1 => {
                    let mut v = [0.0; 5];
                    for slot in &mut v {
                        *slot = r.read_f64::<LittleEndian>()?;
                    }
                    Some(AgentLaw {
                        kp: v[0],
                        kd: v[1],
                        reference: v[2],
                        repulsion: v[3],
                        spacing: v[4],
                    })
                }
                t => return Err(Error::Format(format!("bad agent tag {t}"))),
            });
        }
        Ok(Self {
            kind,
            action_box,
            agents,
        })
    }
}

impl FeedbackPolicy for Policy {
    fn act(&self, x: &JointState) -> Result<JointAction> {
        if x.num_agents() != self.agents.len() || x.agents.iter().any(|a| a.len() < 2) {
            return Err(Error::contract(format!(
                "policy for {} agents evaluated on a state with {} agents",
                self.agents.len(),
                x.num_agents()
            )));
        }
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, law)| match law {
                Some(law) => vec![self.agent_action(law, i, x)],
                None => Vec::new(),
            })
            .collect();
        Ok(JointAction { agents })
    }
}

/// Cross-entropy search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub iterations: usize,
    pub population: usize,
    pub elite_fraction: f64,
    /// Rollout horizon of the cost-to-go objective.
    pub horizon: usize,
    /// Rollouts per evaluation state.
    pub samples: usize,
    /// Initial sampling standard deviation of every gain.
    pub init_std: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            population: 16,
            elite_fraction: 0.25,
            horizon: 100,
            samples: 4,
            init_std: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CemResult {
    pub policy: Policy,
    pub initial_objective: f64,
    /// Best objective found after each iteration.
    pub trace: Vec<f64>,
}

impl CemResult {
    pub fn best_objective(&self) -> f64 {
        self.trace.last().copied().unwrap_or(self.initial_objective)
    }
}

/// Mean Monte-Carlo cost-to-go of `policy` over `states`. State `k` always
/// uses seed `derive(seed, k)`, so different policies see identical draws.
pub fn mean_cost_to_go<S: MasSystem + ?Sized>(
    system: &S,
    policy: &Policy,
    states: &[JointState],
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (k, x) in states.iter().enumerate() {
        total += mc_cost_to_go(system, policy, x, horizon, samples, seed::derive(seed, k as u64))?;
    }
    Ok(total / states.len() as f64)
}

/// Cross-entropy improvement of the PD gains of `init`.
pub fn cem_improve<S: MasSystem + ?Sized>(
    system: &S,
    init: &Policy,
    eval_states: &[JointState],
    cfg: &CemConfig,
    seed: u64,
) -> Result<CemResult> {
    if cfg.population < 2 {
        return Err(Error::contract(format!(
            "population must be at least 2, got {}",
            cfg.population
        )));
    }
    if eval_states.is_empty() {
        return Err(Error::contract("no evaluation states"));
    }
    if !(cfg.elite_fraction > 0.0 && cfg.elite_fraction <= 1.0) {
        return Err(Error::contract("elite fraction must lie in (0, 1]"));
    }
    let objective_seed = seed::derive(seed, 0);
    let objective = |p: &Policy| {
        mean_cost_to_go(system, p, eval_states, cfg.horizon, cfg.samples, objective_seed)
    };

    let initial_objective = objective(init)?;
    let mut best = (init.clone(), initial_objective);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut mean = init.params();
    let mut std = vec![cfg.init_std; mean.len()];
    let n_elite = ((cfg.population as f64 * cfg.elite_fraction).ceil() as usize).max(1);

    for it in 0..cfg.iterations {
        let mut rng = seed::rng(seed::derive(seed, 1 + it as u64));
        let candidates: Vec<Vec<f64>> = (0..cfg.population)
            .map(|_| {
                mean.iter()
                    .zip(&std)
                    .map(|(m, s)| {
                        let z: f64 = rng.sample(StandardNormal);
                        (m + s * z).max(0.0)
                    })
                    .collect()
            })
            .collect();
        let scored: Vec<(Vec<f64>, f64)> = candidates
            .into_par_iter()
            .map(|params| {
                let p = init.with_params(&params)?;
                let j = objective(&p)?;
                Ok((params, j))
            })
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[a].1.total_cmp(&scored[b].1));
        let elite: Vec<&Vec<f64>> = order[..n_elite].iter().map(|&k| &scored[k].0).collect();

        let (top_params, top_obj) = &scored[order[0]];
        if *top_obj < best.1 {
            let mut p = init.with_params(top_params)?;
            p.kind = PolicyKind::Improved;
            best = (p, *top_obj);
        }
        trace.push(best.1);

        for d in 0..mean.len() {
            let m = elite.iter().map(|e| e[d]).sum::<f64>() / n_elite as f64;
            let var = elite.iter().map(|e| (e[d] - m).powi(2)).sum::<f64>() / n_elite as f64;
            mean[d] = m;
            std[d] = var.sqrt().max(1e-3);
        }
    }

    Ok(CemResult {
        policy: best.0,
        initial_objective,
        trace,
    })
}
