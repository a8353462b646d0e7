//! Risk-sensitive safety filters.
//!
//! All filters enforce the sampled risk condition
//!
//! ```text
//! -R_β[-h(x⁺)] >= α h(x) + ε,    x⁺ = f(x, u, ω; θ)
//! ```
//!
//! where the risk is estimated from `S` draws of (θ, ω). Within one solve the
//! same draws are reused for every candidate action (common random numbers),
//! and the minimization over actions is a search over a per-dimension grid
//! ordered by distance to the nominal action, nominal first.
//!
//! * [`centralized_filter`] searches joint actions of all agents.
//! * [`pessimistic_filter`] searches agent `i`'s action against the worst
//!   grid action of every other agent; feasibility alone certifies the
//!   condition whatever the others do.
//! * [`proximity_filter`] projects the nominal action onto a ball around the
//!   safe policy's action; always feasible.
//! * [`switching_filter`] uses the pessimistic action when it exists and the
//!   proximity action otherwise.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ActionBox, JointAction, JointState, MasSystem, UncertaintySample};
use crate::error::{Error, Result};
use crate::risk::risk_lower;
use crate::seed;
use crate::value::{Barrier, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusMode {
    /// Constant radius `radius`.
    Fixed,
    /// `((ᾱ - α) h(x) + ε̄ - ε) / (M L_h L_fu)`.
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub alpha_bar: f64,
    pub epsilon_bar: f64,
    pub beta: f64,
    /// Sublevel threshold of the barrier.
    pub xi: f64,
    /// Risk samples per solve.
    pub samples: usize,
    /// Grid points per action dimension.
    pub grid: usize,
    pub radius_mode: RadiusMode,
    pub radius: f64,
    pub lipschitz_h: f64,
    pub lipschitz_fu: f64,
    /// A candidate is feasible when its margin is at least this.
    pub tolerance: f64,
    /// Re-project proximity actions onto the action box.
    pub clip_proximity: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epsilon: 0.0,
            alpha_bar: 0.2,
            epsilon_bar: 0.1,
            beta: 1.0,
            xi: 5.0,
            samples: 5,
            grid: 9,
            radius_mode: RadiusMode::Fixed,
            radius: 0.05,
            lipschitz_h: 1.0,
            lipschitz_fu: 1.0,
            tolerance: 0.0,
            clip_proximity: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("alpha_bar", self.alpha_bar)?;
        nonneg("epsilon", self.epsilon)?;
        nonneg("epsilon_bar", self.epsilon_bar)?;
        nonneg("beta", self.beta)?;
        nonneg("radius", self.radius)?;
        nonneg("tolerance", self.tolerance)?;
        if !self.xi.is_finite() {
            return Err(Error::config("xi must be finite"));
        }
        if self.samples == 0 {
            return Err(Error::config("samples must be at least 1"));
        }
        if self.grid < 2 {
            return Err(Error::config(format!("grid must be at least 2, got {}", self.grid)));
        }
        if self.radius_mode == RadiusMode::Margin {
            if !(self.alpha < self.alpha_bar && self.epsilon <= self.epsilon_bar) {
                return Err(Error::config(
                    "margin radius needs alpha < alpha_bar and epsilon <= epsilon_bar",
                ));
            }
            if !(self.lipschitz_h > 0.0 && self.lipschitz_fu > 0.0) {
                return Err(Error::config("Lipschitz constants must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Centralized,
    Pessimistic,
    Proximity,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Centralized => "centralized",
            Branch::Pessimistic => "pessimistic",
            Branch::Proximity => "proximity",
        }
    }
}

/// Result of one agent's filter solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub action: Vec<f64>,
    pub branch: Branch,
    /// Whether the pessimistic constraint admitted a solution.
    pub feasible: bool,
    /// Condition margin at the chosen action (worst case over the other
    /// agents for the pessimistic branch); `None` for proximity actions.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedOutcome {
    pub action: JointAction,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCheck {
    pub satisfied: bool,
    pub margin: f64,
}

/// `count` independent draws of (θ, ω) from `seed`.
pub fn draw_samples<S: MasSystem + ?Sized>(
    system: &S,
    count: usize,
    seed: u64,
) -> Vec<UncertaintySample> {
    let mut rng = seed::rng(seed);
    (0..count)
        .map(|_| system.sample_uncertainty_with(&mut rng))
        .collect()
}

/// `-R_β[-h(x⁺)] - α h(x) - ε` over the given draws, with `h(x) = h_x` precomputed.
pub fn condition_margin<S, V>(
    system: &S,
    barrier: &Barrier<V>,
    x: &JointState,
    h_x: f64,
    u: &JointAction,
    samples: &[UncertaintySample],
    cfg: &FilterConfig,
) -> Result<f64>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
{
    if samples.is_empty() {
        return Err(Error::contract("risk condition needs at least one sample"));
    }
    let values = samples
        .iter()
        .map(|s| barrier.h(&system.step(x, u, s)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(risk_lower(&values, cfg.beta)? - cfg.alpha * h_x - cfg.epsilon)
}

/// Evaluate the risk condition at `(x, u)` with `cfg.samples` draws from `seed`.
pub fn check_condition<S, V>(
    system: &S,
    barrier: &Barrier<V>,
    x: &JointState,
    u: &JointAction,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<ConditionCheck>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
{
    let samples = draw_samples(system, cfg.samples, seed);
    let h_x = barrier.h(x)?;
    if !h_x.is_finite() {
        return Err(Error::NonFinite(format!("barrier value {h_x}")));
    }
    let margin = condition_margin(system, barrier, x, h_x, u, &samples, cfg)?;
    Ok(ConditionCheck {
        satisfied: margin >= cfg.tolerance,
        margin,
    })
}

/// Every combination of `points` over `dims` dimensions, lexicographic.
fn grid_product(dims: usize, points: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(dims)];
    for _ in 0..dims {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                points.iter().map(move |&p| {
                    let mut v = prefix.clone();
                    v.push(p);
                    v
                })
            })
            .collect();
    }
    out
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `nominal` followed by the grid, ordered by distance to `nominal` (ties keep grid order).
fn ordered_candidates(nominal: &[f64], action_box: &ActionBox, grid: usize) -> Vec<Vec<f64>> {
    let mut pts = grid_product(nominal.len(), &action_box.grid(grid));
    pts.sort_by(|a, b| squared_distance(a, nominal).total_cmp(&squared_distance(b, nominal)));
    std::iter::once(nominal.to_vec()).chain(pts).collect()
}

/// Minimally invasive joint action: the candidate closest to `nominal`
/// satisfying the risk condition. `None` when no candidate does.
pub fn centralized_filter<S, V>(
    system: &S,
    barrier: &Barrier<V>,
    x: &JointState,
    nominal: &JointAction,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<Option<CentralizedOutcome>>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
{
    system.check_state(x)?;
    system.check_action(nominal)?;
    let samples = draw_samples(system, cfg.samples, seed);
    let h_x = barrier.h(x)?;
    let actuated = system.actuated_agents();
    let flat: Vec<f64> = actuated
        .iter()
        .flat_map(|&i| nominal.agents[i].iter().copied())
        .collect();
    let unflatten = |v: &[f64]| {
        let mut agents = vec![Vec::new(); system.num_agents()];
        let mut at = 0;
        for &i in &actuated {
            let d = system.action_dim(i);
            agents[i] = v[at..at + d].to_vec();
            at += d;
        }
        JointAction { agents }
    };
    for cand in ordered_candidates(&flat, &system.action_box(), cfg.grid) {
        let u = unflatten(&cand);
        let margin = condition_margin(system, barrier, x, h_x, &u, &samples, cfg)?;
        if margin >= cfg.tolerance {
            return Ok(Some(CentralizedOutcome { action: u, margin }));
        }
    }
    Ok(None)
}

/// Smallest margin over `others` with agent `agent` playing `own`; stops
/// early once it falls below `stop_below`.
#[allow(clippy::too_many_arguments)]
fn worst_case_margin<S, V>(
    system: &S,
    barrier: &Barrier<V>,
    x: &JointState,
    h_x: f64,
    agent: usize,
    own: &[f64],
    others: &[Vec<Vec<f64>>],
    samples: &[UncertaintySample],
    cfg: &FilterConfig,
    stop_below: f64,
) -> Result<f64>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
{
    let mut worst = f64::INFINITY;
    for combo in others {
        let u = combine_actions(system, agent, own, combo);
        let m = condition_margin(system, barrier, x, h_x, &u, samples, cfg)?;
        worst = worst.min(m);
        if worst < stop_below {
            break;
        }
    }
    Ok(worst)
}

/// Joint action with agent `agent` playing `own` and the remaining actuated
/// agents playing `others` in index order.
pub fn combine_actions<S: MasSystem + ?Sized>(
    system: &S,
    agent: usize,
    own: &[f64],
    others: &[Vec<f64>],
) -> JointAction {
    let mut others = others.iter();
    let agents = (0..system.num_agents())
        .map(|j| {
            if j == agent {
                own.to_vec()
            } else if system.action_dim(j) > 0 {
                others.next().cloned().unwrap_or_default()
            } else {
                Vec::new()
            }
        })
        .collect();
    JointAction { agents }
}

/// Grid actions of every actuated agent other than `agent`, one `Vec` per combination.
pub fn other_agent_grid<S: MasSystem + ?Sized>(
    system: &S,
    agent: usize,
    grid: usize,
) -> Vec<Vec<Vec<f64>>> {
    let points = system.action_box().grid(grid);
    let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
    for j in system.actuated_agents().into_iter().filter(|&j| j != agent) {
        let own = grid_product(system.action_dim(j), &points);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                own.iter().map(move |a| {
                    let mut v = prefix.clone();
                    v.push(a.clone());
                    v
                })
            })
            .collect();
    }
    out
}

/// Agent `agent`'s action closest to its nominal action whose worst-case
/// margin over the other agents' grid actions is feasible. `None` when no
/// candidate survives, which is an ordinary outcome.
pub fn pessimistic_filter<S, V>(
    agent: usize,
    system: &S,
    barrier: &Barrier<V>,
    x: &JointState,
    nominal: &JointAction,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<Option<FilterOutcome>>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
{
    system.check_state(x)?;
    system.check_action(nominal)?;
    if agent >= system.num_agents() || system.action_dim(agent) == 0 {
        return Err(Error::contract(format!("agent {agent} is not actuated")));
    }
    let samples = draw_samples(system, cfg.samples, seed);
    let h_x = barrier.h(x)?;
    let others = other_agent_grid(system, agent, cfg.grid);
    for cand in ordered_candidates(&nominal.agents[agent], &system.action_box(), cfg.grid) {
        let worst = worst_case_margin(
            system, barrier, x, h_x, agent, &cand, &others, &samples, cfg, cfg.tolerance,
        )?;
        if worst >= cfg.tolerance {
            return Ok(Some(FilterOutcome {
                action: cand,
                branch: Branch::Pessimistic,
                feasible: true,
                margin: Some(worst),
            }));
        }
    }
    Ok(None)
}

/// Proximity radius for agent actions at a state with barrier value `h_x`.
pub fn proximity_radius(cfg: &FilterConfig, num_agents: usize, h_x: f64) -> Result<f64> {
    match cfg.radius_mode {
        RadiusMode::Fixed => Ok(cfg.radius),
        RadiusMode::Margin => {
            let delta = (cfg.alpha_bar - cfg.alpha) * h_x + cfg.epsilon_bar - cfg.epsilon;
            let r = delta / (num_agents as f64 * cfg.lipschitz_h * cfg.lipschitz_fu);
            if r < 0.0 || !r.is_finite() {
                return Err(Error::domain(format!(
                    "negative proximity radius {r} at h(x) = {h_x}: state outside the guaranteed region"
                )));
            }
            Ok(r)
        }
    }
}

/// Closest point to `nominal` in the ball of radius `radius` around `safe`.
pub fn project_to_ball(nominal: &[f64], safe: &[f64], radius: f64) -> Vec<f64> {
    let dist = squared_distance(nominal, safe).sqrt();
    if dist <= radius {
        return nominal.to_vec();
    }
    let scale = radius / dist;
    safe.iter()
        .zip(nominal)
        .map(|(s, n)| s + scale * (n - s))
        .collect()
}

/// Alternating projection onto ball ∩ box starting from `start`; falls
/// back to the (clipped) safe action when it does not settle.
fn project_ball_box(start: &[f64], safe: &[f64], radius: f64, action_box: &ActionBox) -> Vec<f64> {
    const ITERS: usize = 50;
    const TOL: f64 = 1e-9;
    let mut v = start.to_vec();
    for _ in 0..ITERS {
        v.iter_mut().for_each(|c| *c = action_box.clip(*c));
        if squared_distance(&v, safe).sqrt() <= radius + TOL {
            return v;
        }
        v = project_to_ball(&v, safe, radius);
        if v.iter().all(|&c| c >= action_box.low - TOL && c <= action_box.high + TOL) {
            return v.into_iter().map(|c| action_box.clip(c)).collect();
        }
    }
    safe.iter().map(|&c| action_box.clip(c)).collect()
}

/// Agent `agent`'s proximity action: `nominal^i` projected onto the ball
/// around `safe^i` whose radius comes from [`proximity_radius`].
pub fn proximity_filter<S: MasSystem + ?Sized>(
    agent: usize,
    system: &S,
    nominal: &JointAction,
    safe: &JointAction,
    cfg: &FilterConfig,
    h_x: f64,
) -> Result<Vec<f64>> {
    system.check_action(nominal)?;
    system.check_action(safe)?;
    let radius = proximity_radius(cfg, system.num_agents(), h_x)?;
    let (n, s) = (&nominal.agents[agent], &safe.agents[agent]);
    let projected = project_to_ball(n, s, radius);
    Ok(if cfg.clip_proximity {
        project_ball_box(&projected, s, radius, &system.action_box())
    } else {
        projected
    })
}

/// Pessimistic action when feasible, proximity action otherwise.
#[allow(clippy::too_many_arguments)]
pub fn switching_filter<S, V>(
    agent: usize,
    system: &S,
    barrier: &Barrier<V>,
    x: &JointState,
    nominal: &JointAction,
    safe: &JointAction,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<FilterOutcome>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
{
    if let Some(out) = pessimistic_filter(agent, system, barrier, x, nominal, cfg, seed)? {
        return Ok(out);
    }
    let h_x = barrier.h(x)?;
    let action = proximity_filter(agent, system, nominal, safe, cfg, h_x)?;
    Ok(FilterOutcome {
        action,
        branch: Branch::Proximity,
        feasible: false,
        margin: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_model, ModelParams, Preset};
    use crate::value::ConstantValue;
    use approx::assert_abs_diff_eq;

    /// `f(x, u, ω) = x` for `m` agents with scalar actions.
    struct Static(usize);

    impl MasSystem for Static {
        fn num_agents(&self) -> usize {
            self.0
        }
        fn state_dim(&self) -> usize {
            2
        }
        fn action_dim(&self, _: usize) -> usize {
            1
        }
        fn noise_scale(&self) -> f64 {
            0.1
        }
        fn action_box(&self) -> ActionBox {
            ActionBox::default()
        }
        fn gamma(&self) -> f64 {
            0.9
        }
        fn transition(&self, x: &JointState, _: &JointAction, _: &UncertaintySample) -> JointState {
            x.clone()
        }
        fn cost(&self, _: &JointState) -> f64 {
            0.0
        }
        fn is_safe(&self, _: &JointState) -> bool {
            true
        }
    }

    /// V(x) = position of agent 0 after a move of `u`, so h depends on actions.
    struct FirstPosition;

    impl ValueFunction for FirstPosition {
        fn value(&self, x: &JointState) -> Result<f64> {
            Ok(x.position(0).max(0.0))
        }
    }

    fn unit_barrier() -> Barrier<ConstantValue> {
        // h = ξ - V = 1
        Barrier::new(ConstantValue(4.0), 5.0)
    }

    fn nominal(m: usize, v: f64) -> JointAction {
        JointAction::new(vec![vec![v]; m])
    }

    #[test]
    fn static_condition_margin() {
        let sys = Static(2);
        let x = JointState::zeros(2, 2);
        let cfg = FilterConfig::default();
        let c = check_condition(&sys, &unit_barrier(), &x, &nominal(2, 0.3), &cfg, 1).unwrap();
        assert!(c.satisfied);
        assert_abs_diff_eq!(c.margin, 0.9, epsilon = 1e-12);

        let hard = FilterConfig {
            epsilon: 10.0,
            ..cfg
        };
        let c = check_condition(&sys, &unit_barrier(), &x, &nominal(2, 0.3), &hard, 1).unwrap();
        assert!(!c.satisfied);
    }

    #[test]
    fn risk_neutral_limit_matches_expectation() {
        let m = make_model(Preset::Spring, &ModelParams::default()).unwrap();
        let barrier = Barrier::new(FirstPosition, 1.0);
        let x = JointState::new(vec![vec![0.5, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
        let u = JointAction::new(vec![vec![0.5], vec![0.0], vec![]]);
        let cfg = FilterConfig {
            beta: 1e-8,
            ..FilterConfig::default()
        };
        let c = check_condition(&m, &barrier, &x, &u, &cfg, 4).unwrap();
        let samples = draw_samples(&m, cfg.samples, 4);
        let mean_h = samples
            .iter()
            .map(|s| barrier.h(&m.step(&x, &u, s).unwrap()).unwrap())
            .sum::<f64>()
            / samples.len() as f64;
        let expected = mean_h - cfg.alpha * barrier.h(&x).unwrap() - cfg.epsilon;
        assert!((c.margin - expected).abs() <= 1e-6);
    }

    #[test]
    fn filters_keep_feasible_nominal() {
        let sys = Static(2);
        let x = JointState::zeros(2, 2);
        let cfg = FilterConfig::default();
        let nom = JointAction::new(vec![vec![0.37], vec![-0.81]]);
        let c = centralized_filter(&sys, &unit_barrier(), &x, &nom, &cfg, 3)
            .unwrap()
            .unwrap();
        assert_eq!(c.action, nom);
        let p = pessimistic_filter(1, &sys, &unit_barrier(), &x, &nom, &cfg, 3)
            .unwrap()
            .unwrap();
        assert_eq!(p.action, vec![-0.81]);
        assert_eq!(p.branch, Branch::Pessimistic);
        assert_abs_diff_eq!(p.margin.unwrap(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn unsatisfiable_condition_is_infeasible() {
        let sys = Static(2);
        let x = JointState::zeros(2, 2);
        let cfg = FilterConfig {
            epsilon: 10.0,
            ..FilterConfig::default()
        };
        let nom = nominal(2, 0.2);
        assert!(centralized_filter(&sys, &unit_barrier(), &x, &nom, &cfg, 3)
            .unwrap()
            .is_none());
        assert!(pessimistic_filter(0, &sys, &unit_barrier(), &x, &nom, &cfg, 3)
            .unwrap()
            .is_none());

        let safe = nominal(2, 0.0);
        let out = switching_filter(0, &sys, &unit_barrier(), &x, &nom, &safe, &cfg, 3).unwrap();
        assert_eq!(out.branch, Branch::Proximity);
        assert!(!out.feasible);
        assert_eq!(out.action, proximity_filter(0, &sys, &nom, &safe, &cfg, 1.0).unwrap());
        assert_abs_diff_eq!(out.action[0], 0.05, epsilon = 1e-15);
    }

    #[test]
    fn single_agent_pessimistic_equals_centralized() {
        struct Drift;
        impl MasSystem for Drift {
            fn num_agents(&self) -> usize {
                1
            }
            fn state_dim(&self) -> usize {
                2
            }
            fn action_dim(&self, _: usize) -> usize {
                1
            }
            fn noise_scale(&self) -> f64 {
                0.2
            }
            fn action_box(&self) -> ActionBox {
                ActionBox::default()
            }
            fn gamma(&self) -> f64 {
                0.9
            }
            fn transition(
                &self,
                x: &JointState,
                u: &JointAction,
                s: &UncertaintySample,
            ) -> JointState {
                let (p, v) = (x.agents[0][0], x.agents[0][1]);
                JointState::new(vec![vec![
                    p + 0.5 * v + 0.3 * s.theta + s.noise[0][0],
                    v + u.agents[0][0] + s.noise[0][1],
                ]])
            }
            fn cost(&self, _: &JointState) -> f64 {
                0.0
            }
            fn is_safe(&self, _: &JointState) -> bool {
                true
            }
        }
        let barrier = Barrier::new(FirstPosition, 1.5);
        let cfg = FilterConfig::default();
        for k in 0..50 {
            let x = JointState::new(vec![vec![-1.0 + 0.05 * k as f64, 0.7 - 0.03 * k as f64]]);
            let nom = JointAction::new(vec![vec![0.9 - 0.04 * k as f64]]);
            let c = centralized_filter(&Drift, &barrier, &x, &nom, &cfg, k).unwrap();
            let p = pessimistic_filter(0, &Drift, &barrier, &x, &nom, &cfg, k).unwrap();
            match (c, p) {
                (None, None) => {}
                (Some(c), Some(p)) => {
                    assert_eq!(c.action.agents[0], p.action);
                    assert_eq!(c.margin, p.margin.unwrap());
                }
                (c, p) => panic!("state {k}: centralized {c:?} vs pessimistic {p:?}"),
            }
        }
    }

    #[test]
    fn pessimistic_rejects_unactuated_agent() {
        let m = make_model(Preset::Spring, &ModelParams::default()).unwrap();
        let x = JointState::zeros(3, 2);
        let nom = JointAction::zeros(&m);
        let r = pessimistic_filter(2, &m, &unit_barrier(), &x, &nom, &FilterConfig::default(), 0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn other_grid_skips_self_and_unactuated() {
        let m = make_model(Preset::Spring, &ModelParams::default()).unwrap();
        let g = other_agent_grid(&m, 0, 5);
        assert_eq!(g.len(), 5);
        let u = combine_actions(&m, 0, &[0.3], &g[1]);
        assert_eq!(u.agents, vec![vec![0.3], vec![-0.5], vec![]]);

        let c = make_model(
            Preset::Collision,
            &ModelParams {
                agents: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(other_agent_grid(&c, 1, 4).len(), 16);
    }

    #[test]
    fn proximity_by_hand() {
        assert_eq!(project_to_ball(&[0.03], &[0.0], 0.05), vec![0.03]);
        assert_abs_diff_eq!(project_to_ball(&[0.3], &[0.0], 0.05)[0], 0.05, epsilon = 1e-15);
        assert_eq!(project_to_ball(&[0.3, -0.2], &[0.1, 0.1], 0.0), vec![0.1, 0.1]);
    }

    #[test]
    fn margin_radius() {
        let cfg = FilterConfig {
            radius_mode: RadiusMode::Margin,
            alpha: 0.1,
            alpha_bar: 0.3,
            epsilon: 0.0,
            epsilon_bar: 0.2,
            lipschitz_h: 2.0,
            lipschitz_fu: 0.5,
            ..FilterConfig::default()
        };
        cfg.validate().unwrap();
        // (0.2 * 1.0 + 0.2) / (2 * 2 * 0.5) = 0.2
        assert_abs_diff_eq!(proximity_radius(&cfg, 2, 1.0).unwrap(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(proximity_radius(&cfg, 2, -1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(matches!(proximity_radius(&cfg, 2, -1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn clipped_proximity_stays_in_box_and_ball() {
        let sys = Static(1);
        let cfg = FilterConfig {
            radius: 0.5,
            clip_proximity: true,
            ..FilterConfig::default()
        };
        let nom = JointAction::new(vec![vec![3.0]]);
        let safe = JointAction::new(vec![vec![0.8]]);
        let u = proximity_filter(0, &sys, &nom, &safe, &cfg, 1.0).unwrap();
        assert_eq!(u, vec![1.0]);
    }

    #[test]
    fn config_validation() {
        FilterConfig::default().validate().unwrap();
        for bad in [
            FilterConfig {
                alpha: 1.5,
                ..Default::default()
            },
            FilterConfig {
                samples: 0,
                ..Default::default()
            },
            FilterConfig {
                grid: 1,
                ..Default::default()
            },
            FilterConfig {
                radius_mode: RadiusMode::Margin,
                alpha: 0.5,
                alpha_bar: 0.4,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
