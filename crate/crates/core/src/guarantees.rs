//! Multi-step safety probability bound and empirical spot-checks of the
//! risk condition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{JointState, MasSystem};
use crate::error::{Error, Result};
use crate::filters::{condition_margin, draw_samples, FilterConfig};
use crate::policy::FeedbackPolicy;
use crate::seed;
use crate::value::{Barrier, ValueFunction};

/// Violation probability bound over `k` steps from a state with barrier value `h0`:
///
/// `δ = 1 - (1 - exp(-β(α h0 + ε))) (1 - exp(-β ε))^(K-1)`
pub fn compute_delta(beta: f64, alpha: f64, epsilon: f64, h0: f64, k: usize) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::domain(format!("beta must be > 0, got {beta}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if h0.is_nan() || h0 < 0.0 {
        return Err(Error::domain(format!(
            "h(x0) = {h0} < 0: initial state outside the sublevel set"
        )));
    }
    if k == 0 {
        return Err(Error::domain("horizon K must be at least 1"));
    }
    let first = -beta * (alpha * h0 + epsilon);
    if k == 1 {
        return Ok(first.exp());
    }
    // 1 - exp(-z) as -expm1(-z)
    let stay_first = -first.exp_m1();
    let stay_next = -(-beta * epsilon).exp_m1();
    Ok(1.0 - stay_first * stay_next.powi((k - 1) as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMargin {
    pub index: usize,
    pub h: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    /// One entry per state inside the sublevel set, in input order.
    pub margins: Vec<StateMargin>,
    /// States skipped because `h(x) < 0`.
    pub skipped: usize,
    /// `None` when no state was inside the sublevel set.
    pub pass_fraction: Option<f64>,
    pub oracle_samples: usize,
}

impl CertificationReport {
    pub fn evaluated(&self) -> usize {
        self.margins.len()
    }

    /// Nothing inside the sublevel set was checked.
    pub fn is_empty(&self) -> bool {
        self.margins.is_empty()
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.margins.iter().map(|m| m.margin).reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub delta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub h0: f64,
    pub k: usize,
    pub warnings: Vec<String>,
    pub certification: Option<CertificationReport>,
}

/// Bound plus a warning when it is vacuous.
pub fn guarantee_report(
    beta: f64,
    alpha: f64,
    epsilon: f64,
    h0: f64,
    k: usize,
    certification: Option<CertificationReport>,
) -> Result<GuaranteeReport> {
    let delta = compute_delta(beta, alpha, epsilon, h0, k)?;
    let mut warnings = Vec::new();
    if epsilon == 0.0 && k >= 2 {
        warnings.push(format!(
            "epsilon = 0 makes the {k}-step bound vacuous (delta = 1); \
             single-step and empirical results remain informative"
        ));
    } else if delta >= 1.0 {
        warnings.push("delta = 1: the bound is vacuous".to_string());
    }
    if certification.as_ref().is_some_and(|c| c.is_empty()) {
        warnings.push("no certification state lies inside the sublevel set".to_string());
    }
    Ok(GuaranteeReport {
        delta,
        beta,
        alpha,
        epsilon,
        h0,
        k,
        warnings,
        certification,
    })
}

/// Check the risk condition under `policy` at every state with `h(x) >= 0`,
/// using `oracle_samples` draws per state (state `k` uses `derive(seed, k)`).
pub fn certify_grid<S, V, P>(
    system: &S,
    barrier: &Barrier<V>,
    policy: &P,
    states: &[JointState],
    cfg: &FilterConfig,
    seed: u64,
    oracle_samples: usize,
) -> Result<CertificationReport>
where
    S: MasSystem + ?Sized,
    V: ValueFunction,
    P: FeedbackPolicy + ?Sized,
{
    if states.is_empty() {
        return Err(Error::contract("no states to certify"));
    }
    if oracle_samples == 0 {
        return Err(Error::contract("oracle sample count must be at least 1"));
    }
    let per_state: Vec<Option<StateMargin>> = states
        .par_iter()
        .enumerate()
        .map(|(index, x)| {
            let h = barrier.h(x)?;
            if h < 0.0 {
                return Ok(None);
            }
            let u = policy.act(x)?;
            let samples = draw_samples(system, oracle_samples, seed::derive(seed, index as u64));
            let margin = condition_margin(system, barrier, x, h, &u, &samples, cfg)?;
            Ok(Some(StateMargin {
                index,
                h,
                margin,
                pass: margin >= cfg.tolerance,
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = per_state.iter().filter(|m| m.is_none()).count();
    let margins: Vec<StateMargin> = per_state.into_iter().flatten().collect();
    let pass_fraction = (!margins.is_empty())
        .then(|| margins.iter().filter(|m| m.pass).count() as f64 / margins.len() as f64);
    Ok(CertificationReport {
        margins,
        skipped,
        pass_fraction,
        oracle_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_model, ModelParams, Preset};
    use crate::policy::{make_proportional, Gains};
    use crate::value::ConstantValue;
    use approx::assert_abs_diff_eq;

    #[test]
    fn delta_closed_forms() {
        let d = compute_delta(2.0, 0.3, 0.1, 1.5, 1).unwrap();
        assert_eq!(d, (-2.0f64 * (0.3 * 1.5 + 0.1)).exp());
        assert_eq!(1.0 - d, 1.0 - (-2.0f64 * (0.3 * 1.5 + 0.1)).exp());
        for k in 2..20 {
            assert_eq!(compute_delta(1.0, 0.1, 0.0, 3.0, k).unwrap(), 1.0);
        }
        let hand = 1.0 - (1.0 - (-0.7f64).exp()) * (1.0 - (-0.5f64).exp()).powi(2);
        let d = compute_delta(1.0, 0.1, 0.5, 2.0, 3).unwrap();
        assert_abs_diff_eq!(d, hand, epsilon = 1e-14);
        assert_abs_diff_eq!(d, 0.92206, epsilon = 1e-5);
    }

    #[test]
    fn delta_domain_errors() {
        assert!(matches!(compute_delta(1.0, 0.1, 0.5, -0.1, 3), Err(Error::Domain(_))));
        assert!(matches!(compute_delta(1.0, 0.1, 0.5, 1.0, 0), Err(Error::Domain(_))));
        assert!(matches!(compute_delta(0.0, 0.1, 0.5, 1.0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn delta_monotonicity() {
        let betas = [0.1, 0.5, 1.0, 2.0, 5.0];
        let eps = [0.05, 0.1, 0.5, 1.0];
        for &e in &eps {
            for w in betas.windows(2) {
                for k in 2..6 {
                    let a = compute_delta(w[0], 0.2, e, 1.0, k).unwrap();
                    let b = compute_delta(w[1], 0.2, e, 1.0, k).unwrap();
                    assert!(b <= a);
                    assert!(compute_delta(w[0], 0.2, e, 1.0, k + 1).unwrap() >= a);
                }
            }
        }
        for w in eps.windows(2) {
            let a = compute_delta(1.0, 0.2, w[0], 1.0, 4).unwrap();
            let b = compute_delta(1.0, 0.2, w[1], 1.0, 4).unwrap();
            assert!(b <= a);
        }
    }

    #[test]
    fn vacuity_warning() {
        let r = guarantee_report(1.0, 0.1, 0.0, 2.0, 10, None).unwrap();
        assert_eq!(r.delta, 1.0);
        assert_eq!(r.warnings.len(), 1);
        let r = guarantee_report(1.0, 0.1, 0.5, 2.0, 10, None).unwrap();
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn certify_constant_barrier() {
        let m = make_model(Preset::Spring, &ModelParams::default()).unwrap();
        let p = make_proportional(&m, &[Gains::new(1.0, 1.0); 2]).unwrap();
        let states = vec![JointState::zeros(3, 2); 4];
        let barrier = Barrier::new(ConstantValue(4.0), 5.0);
        let cfg = FilterConfig::default();
        let r = certify_grid(&m, &barrier, &p, &states, &cfg, 1, 50).unwrap();
        assert_eq!(r.pass_fraction, Some(1.0));
        assert!(r.margins.iter().all(|s| (s.margin - 0.9).abs() < 1e-12));

        let hard = FilterConfig {
            epsilon: 10.0,
            ..cfg.clone()
        };
        let r = certify_grid(&m, &barrier, &p, &states, &hard, 1, 50).unwrap();
        assert_eq!(r.pass_fraction, Some(0.0));

        let outside = Barrier::new(ConstantValue(6.0), 5.0);
        let r = certify_grid(&m, &outside, &p, &states, &cfg, 1, 50).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.skipped, 4);
        assert_eq!(r.pass_fraction, None);

        assert!(certify_grid(&m, &barrier, &p, &[], &cfg, 1, 50).is_err());
        assert_eq!(
            certify_grid(&m, &barrier, &p, &states, &cfg, 1, 50).unwrap(),
            certify_grid(&m, &barrier, &p, &states, &cfg, 1, 50).unwrap()
        );
    }
}
