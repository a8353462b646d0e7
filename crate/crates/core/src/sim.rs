//! Seeded closed-loop rollouts and experiment metrics.
//!
//! Rollout `r` of a batch uses seed `base + r`. Within a rollout θ is drawn
//! once, noise is drawn fresh every step, and agent `i`'s filter at step `k`
//! uses [`seed::filter_seed`]`(rollout_seed, k, i)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{JointAction, JointState, MasSystem, StateBox, UncertaintySample};
use crate::error::{Error, Result};
use crate::filters::{centralized_filter, switching_filter, Branch, FilterConfig};
use crate::policy::{FeedbackPolicy, Policy};
use crate::seed;
use crate::value::{Barrier, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentFlag {
    pub agent: usize,
    pub branch: Branch,
    pub feasible: bool,
}

/// A controller's output for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: JointAction,
    /// One flag per actuated agent for filtered controllers.
    pub flags: Option<Vec<AgentFlag>>,
}

pub trait Controller<S: MasSystem + ?Sized>: Sync {
    fn decide(&self, system: &S, x: &JointState, rollout_seed: u64, step: usize)
        -> Result<Decision>;
}

impl<S: MasSystem + ?Sized> Controller<S> for Policy {
    fn decide(&self, _: &S, x: &JointState, _: u64, _: usize) -> Result<Decision> {
        Ok(Decision {
            action: self.act(x)?,
            flags: None,
        })
    }
}

/// Every actuated agent runs the switching filter independently.
#[derive(Debug, Clone)]
pub struct SwitchingController<V> {
    pub barrier: Barrier<V>,
    pub nominal: Policy,
    pub safe: Policy,
    pub cfg: FilterConfig,
}

impl<S, V> Controller<S> for SwitchingController<V>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
{
    fn decide(&self, system: &S, x: &JointState, rollout_seed: u64, step: usize) -> Result<Decision> {
        let nominal = self.nominal.act(x)?;
        let safe = self.safe.act(x)?;
        let mut action = JointAction::zeros(system);
        let mut flags = Vec::new();
        for i in system.actuated_agents() {
            let out = switching_filter(
                i,
                system,
                &self.barrier,
                x,
                &nominal,
                &safe,
                &self.cfg,
                seed::filter_seed(rollout_seed, step, i),
            )?;
            action.agents[i] = out.action;
            flags.push(AgentFlag {
                agent: i,
                branch: out.branch,
                feasible: out.feasible,
            });
        }
        Ok(Decision {
            action,
            flags: Some(flags),
        })
    }
}

/// Joint filter solved with full knowledge of every agent's action; falls
/// back to the safe policy when infeasible.
#[derive(Debug, Clone)]
pub struct CentralizedController<V> {
    pub barrier: Barrier<V>,
    pub nominal: Policy,
    pub safe: Policy,
    pub cfg: FilterConfig,
}

impl<S, V> Controller<S> for CentralizedController<V>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
{
    fn decide(&self, system: &S, x: &JointState, rollout_seed: u64, step: usize) -> Result<Decision> {
        let nominal = self.nominal.act(x)?;
        let solved = centralized_filter(
            system,
            &self.barrier,
            x,
            &nominal,
            &self.cfg,
            seed::filter_seed(rollout_seed, step, 0),
        )?;
        let feasible = solved.is_some();
        let action = match solved {
            Some(out) => out.action,
            None => self.safe.act(x)?,
        };
        let flags = system
            .actuated_agents()
            .into_iter()
            .map(|agent| AgentFlag {
                agent,
                branch: Branch::Centralized,
                feasible,
            })
            .collect();
        Ok(Decision {
            action,
            flags: Some(flags),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub seed: u64,
    pub theta: f64,
    /// `x_0 ..= x_T`
    pub states: Vec<JointState>,
    /// `u_0 .. u_{T-1}`
    pub actions: Vec<JointAction>,
    /// Per step, one flag per actuated agent; `None` for unfiltered runs.
    pub flags: Option<Vec<Vec<AgentFlag>>>,
    /// Joint safety of every state.
    pub safe: Vec<bool>,
    /// `r(x_k, u_k)` per step.
    pub rewards: Vec<f64>,
}

impl RolloutRecord {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

const INIT_STREAM: u64 = u64::MAX;

/// Closed-loop rollout of `steps` transitions from `x0`.
pub fn rollout<S, C>(
    system: &S,
    controller: &C,
    x0: &JointState,
    steps: usize,
    seed: u64,
) -> Result<RolloutRecord>
where
    S: MasSystem + ?Sized,
    C: Controller<S> + ?Sized,
{
    rollout_inner(system, controller, x0, steps, seed, None)
}

/// As [`rollout`] with θ pinned to `theta` (the noise stream is unchanged).
pub fn rollout_with_theta<S, C>(
    system: &S,
    controller: &C,
    x0: &JointState,
    steps: usize,
    seed: u64,
    theta: f64,
) -> Result<RolloutRecord>
where
    S: MasSystem + ?Sized,
    C: Controller<S> + ?Sized,
{
    rollout_inner(system, controller, x0, steps, seed, Some(theta))
}

fn rollout_inner<S, C>(
    system: &S,
    controller: &C,
    x0: &JointState,
    steps: usize,
    seed: u64,
    theta: Option<f64>,
) -> Result<RolloutRecord>
where
    S: MasSystem + ?Sized,
    C: Controller<S> + ?Sized,
{
    system.check_state(x0)?;
    let mut rng = seed::rng(seed);
    let drawn = system.sample_uncertainty_with(&mut rng).theta;
    let theta = theta.unwrap_or(drawn);

    let mut states = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    let mut flags: Option<Vec<Vec<AgentFlag>>> = None;
    let mut x = x0.clone();
    for k in 0..steps {
        let decision = controller
            .decide(system, &x, seed, k)
            .map_err(|e| Error::at_step(k, e))?;
        if let Some(f) = decision.flags {
            flags.get_or_insert_with(|| Vec::with_capacity(steps)).push(f);
        }
        let s = UncertaintySample {
            theta,
            noise: system.sample_noise(&mut rng),
        };
        let next = system
            .step(&x, &decision.action, &s)
            .map_err(|e| Error::at_step(k, e))?;
        rewards.push(system.reward(&x, &decision.action));
        actions.push(decision.action);
        states.push(std::mem::replace(&mut x, next));
    }
    states.push(x);
    let safe = states.iter().map(|s| system.is_safe(s)).collect();
    Ok(RolloutRecord {
        seed,
        theta,
        states,
        actions,
        flags,
        safe,
        rewards,
    })
}

/// Where rollouts start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    Fixed(JointState),
    Uniform(StateBox),
}

impl InitialState {
    /// Initial state of the rollout seeded with `rollout_seed`.
    pub fn draw<S: MasSystem + ?Sized>(&self, system: &S, rollout_seed: u64) -> JointState {
        match self {
            InitialState::Fixed(x) => x.clone(),
            InitialState::Uniform(b) => {
                b.sample(system, &mut seed::rng(seed::derive(rollout_seed, INIT_STREAM)))
            }
        }
    }
}

/// System, controller and initial-state distribution bundled for batch runs.
pub struct Scenario<S, C> {
    pub system: S,
    pub controller: C,
    pub init: InitialState,
}

/// Object-safe batch interface used by [`sweep`].
pub trait RunRollouts: Sync {
    fn run_one(&self, steps: usize, seed: u64) -> Result<RolloutRecord>;

    /// Rollouts with seeds `base_seed + r`, run in parallel, returned in order.
    fn run_many(&self, n: usize, steps: usize, base_seed: u64) -> Result<Vec<RolloutRecord>> {
        (0..n as u64)
            .into_par_iter()
            .map(|r| self.run_one(steps, base_seed.wrapping_add(r)))
            .collect()
    }
}

impl<S, C> RunRollouts for Scenario<S, C>
where
    S: MasSystem,
    C: Controller<S>,
{
    fn run_one(&self, steps: usize, seed: u64) -> Result<RolloutRecord> {
        let x0 = self.init.draw(&self.system, seed);
        rollout(&self.system, &self.controller, &x0, steps, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rollouts: usize,
    /// (rollout, step) pairs counted, i.e. states `x_1 ..= x_T` of every rollout.
    pub steps: usize,
    pub violations: usize,
    pub violation_rate: f64,
    /// Violating steps per agent (spring: position limit; collision: too close to some neighbour).
    pub agent_violations: Vec<usize>,
    /// Mean squared position error to the reference.
    pub mse: f64,
    /// Mean over rollouts of the summed reward.
    pub cumulative_reward: f64,
    /// Fraction of filter solves where the pessimistic branch was feasible.
    pub feasibility_rate: Option<f64>,
    pub agent_feasibility: BTreeMap<usize, f64>,
    pub branch_counts: BTreeMap<Branch, usize>,
}

/// Aggregate metrics over `records`.
pub fn compute_metrics<S: MasSystem + ?Sized>(
    records: &[RolloutRecord],
    system: &S,
) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::contract("no rollout records"));
    }
    let m = system.num_agents();
    let reference = system.reference()[0];
    let mut steps = 0;
    let mut violations = 0;
    let mut agent_violations = vec![0; m];
    let mut sq_err = 0.0;
    let mut reward_total = 0.0;
    let mut solves: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut branch_counts = BTreeMap::new();

    for rec in records {
        for (k, x) in rec.states.iter().enumerate().skip(1) {
            steps += 1;
            if !rec.safe[k] {
                violations += 1;
                for (i, count) in agent_violations.iter_mut().enumerate() {
                    if !system.agent_safe(x, i) {
                        *count += 1;
                    }
                }
            }
            sq_err += (0..m).map(|i| (x.position(i) - reference).powi(2)).sum::<f64>();
        }
        reward_total += rec.rewards.iter().sum::<f64>();
        for step_flags in rec.flags.iter().flatten() {
            for f in step_flags {
                let e = solves.entry(f.agent).or_insert((0, 0));
                e.0 += 1;
                if f.branch == Branch::Pessimistic && f.feasible {
                    e.1 += 1;
                }
                *branch_counts.entry(f.branch).or_insert(0) += 1;
            }
        }
    }
    let (total_solves, total_feasible) = solves
        .values()
        .fold((0, 0), |(a, b), (n, f)| (a + n, b + f));
    Ok(Metrics {
        rollouts: records.len(),
        steps,
        violations,
        violation_rate: if steps == 0 { 0.0 } else { violations as f64 / steps as f64 },
        agent_violations,
        mse: if steps == 0 { 0.0 } else { sq_err / (steps * m) as f64 },
        cumulative_reward: reward_total / records.len() as f64,
        feasibility_rate: (total_solves > 0)
            .then(|| total_feasible as f64 / total_solves as f64),
        agent_feasibility: solves
            .into_iter()
            .map(|(a, (n, f))| (a, f as f64 / n as f64))
            .collect(),
        branch_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Beta,
    Xi,
    Agents,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Xi => "xi",
            SweepAxis::Agents => "M",
        }
    }
}

/// One row of a parameter sweep; statistics are over per-rollout metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_name: String,
    pub param_value: f64,
    pub violations_mean: f64,
    pub violations_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    /// `None` for unfiltered controllers.
    pub feas_rate_mean: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summarize a batch of rollouts as a sweep row.
pub fn summarize<S: MasSystem + ?Sized>(
    axis: SweepAxis,
    value: f64,
    records: &[RolloutRecord],
    system: &S,
) -> Result<SweepRow> {
    let per: Vec<Metrics> = records
        .iter()
        .map(|r| compute_metrics(std::slice::from_ref(r), system))
        .collect::<Result<_>>()?;
    let pick = |f: &dyn Fn(&Metrics) -> f64| mean_std(&per.iter().map(f).collect::<Vec<_>>());
    let (violations_mean, violations_std) = pick(&|m| m.violations as f64);
    let (mse_mean, mse_std) = pick(&|m| m.mse);
    let (reward_mean, reward_std) = pick(&|m| m.cumulative_reward);
    let feas: Vec<f64> = per.iter().filter_map(|m| m.feasibility_rate).collect();
    Ok(SweepRow {
        param_name: axis.name().to_string(),
        param_value: value,
        violations_mean,
        violations_std,
        mse_mean,
        mse_std,
        reward_mean,
        reward_std,
        feas_rate_mean: (!feas.is_empty()).then(|| mean_std(&feas).0),
    })
}

/// Run `n_rollouts` rollouts (seeds `base_seed + r`, shared by every value)
/// for each parameter value. `factory` builds the batch runner for a value
/// and `system_for` the system its metrics are computed against.
pub fn sweep<'a, F>(
    axis: SweepAxis,
    values: &[f64],
    n_rollouts: usize,
    steps: usize,
    base_seed: u64,
    mut factory: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(f64) -> Result<(Box<dyn RunRollouts + 'a>, Box<dyn MasSystem + 'a>)>,
{
    if values.is_empty() {
        return Err(Error::contract("sweep needs at least one parameter value"));
    }
    if n_rollouts == 0 {
        return Err(Error::contract("sweep needs at least one rollout per value"));
    }
    values
        .iter()
        .map(|&v| {
            let (runner, system) = factory(v)?;
            let records = runner.run_many(n_rollouts, steps, base_seed)?;
            summarize(axis, v, &records, system.as_ref())
        })
        .collect()
}
