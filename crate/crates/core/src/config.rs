//! Experiment configuration.
//!
//! A TOML document with top-level run settings and one table per concern.
//! Every key is optional; unknown keys are rejected. Keys left unset that
//! depend on the preset (gains, sampling boxes) are filled in by the
//! `resolve_*` methods.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{make_model, ActionBox, MasModel, MasSystem, ModelParams, Preset, StateBox};
use crate::error::{Error, Result};
use crate::filters::FilterConfig;
use crate::policy::{make_proportional, CemConfig, Gains, Policy};
use crate::value::ApproxConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: String,
    /// Number of agents; collision preset only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    /// Rollout length T.
    pub steps: usize,
    pub rollouts: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub filter: FilterConfig,
    pub value: ValueSection,
    pub policy: PolicySection,
    pub init: InitSection,
    pub sweep: SweepSection,
    pub certify: CertifySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: "spring".into(),
            agents: None,
            steps: 200,
            rollouts: 20,
            seed: 0,
            out_dir: None,
            model: ModelSection::default(),
            filter: FilterConfig::default(),
            value: ValueSection::default(),
            policy: PolicySection::default(),
            init: InitSection::default(),
            sweep: SweepSection::default(),
            certify: CertifySection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueSection {
    /// Training states.
    pub states: usize,
    /// Rollout horizon H of the cost-to-go targets.
    pub horizon: usize,
    /// Monte-Carlo rollouts per target.
    pub samples: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Sampling box for training states; preset default when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
    /// Model file; defaults to `value_model.bin` in the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for ValueSection {
    fn default() -> Self {
        let approx = ApproxConfig::default();
        Self {
            states: 2000,
            horizon: 200,
            samples: 8,
            hidden: approx.hidden,
            epochs: approx.epochs,
            learning_rate: approx.learning_rate,
            position: None,
            velocity: None,
            path: None,
        }
    }
}

/// Proportional policy parameters; preset defaults when unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal_kp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal_kd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safe_kp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safe_kd: Option<f64>,
    /// Safe references spread evenly over `[-spread, spread]` (collision).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safe_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safe_repulsion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safe_spacing: Option<f64>,
    /// Cross-entropy refinement of the safe policy before value training; 0 disables it.
    pub cem_iterations: usize,
    pub cem_population: usize,
    pub cem_elite_fraction: f64,
    pub cem_horizon: usize,
    pub cem_samples: usize,
    pub cem_states: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        let cem = CemConfig::default();
        Self {
            nominal_kp: None,
            nominal_kd: None,
            safe_kp: None,
            safe_kd: None,
            safe_spread: None,
            safe_repulsion: None,
            safe_spacing: None,
            cem_iterations: 0,
            cem_population: cem.population,
            cem_elite_fraction: cem.elite_fraction,
            cem_horizon: cem.horizon,
            cem_samples: cem.samples,
            cem_states: 16,
        }
    }
}

/// Initial-state box of experiment rollouts; a degenerate box is a fixed state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub beta: Vec<f64>,
    pub xi: Vec<f64>,
    /// Rollouts per value; top-level `rollouts` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollouts: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            beta: vec![0.1, 1.0, 10.0],
            xi: vec![2.5, 5.0, 10.0],
            rollouts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    /// Spot-check states drawn from the value-training box.
    pub states: usize,
    pub oracle_samples: usize,
    /// Horizon K of the safety-probability bound.
    pub horizon: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self {
            states: 200,
            oracle_samples: 1000,
            horizon: 10,
        }
    }
}

/// Parse a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingConfig(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_config_str(&text)
}

/// Parse configuration text; the empty document gives all defaults.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        if msg.starts_with("unknown field") {
            Error::UnknownKey(msg)
        } else {
            Error::ConfigSyntax(e.to_string())
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_range(name: &str, r: Option<[f64; 2]>) -> Result<()> {
    match r {
        Some([lo, hi]) if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
            Err(Error::config(format!("{name} range [{lo}, {hi}] is invalid")))
        }
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn preset(&self) -> Result<Preset> {
        self.preset.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        if self.rollouts == 0 {
            return Err(Error::config("rollouts must be at least 1"));
        }
        self.filter.validate()?;
        let v = &self.value;
        if v.states == 0 || v.samples == 0 {
            return Err(Error::config("value.states and value.samples must be at least 1"));
        }
        if v.hidden.contains(&0) {
            return Err(Error::config("value.hidden layer sizes must be positive"));
        }
        if !(v.learning_rate.is_finite() && v.learning_rate > 0.0) {
            return Err(Error::config("value.learning_rate must be positive"));
        }
        check_range("value.position", v.position)?;
        check_range("value.velocity", v.velocity)?;
        check_range("init.position", self.init.position)?;
        check_range("init.velocity", self.init.velocity)?;
        let p = &self.policy;
        for (name, g) in [
            ("nominal_kp", p.nominal_kp),
            ("nominal_kd", p.nominal_kd),
            ("safe_kp", p.safe_kp),
            ("safe_kd", p.safe_kd),
            ("safe_spread", p.safe_spread),
            ("safe_repulsion", p.safe_repulsion),
            ("safe_spacing", p.safe_spacing),
        ] {
            if g.is_some_and(|g| !(g.is_finite() && g >= 0.0)) {
                return Err(Error::config(format!("policy.{name} must be finite and >= 0")));
            }
        }
        if p.cem_iterations > 0 {
            if p.cem_population < 2 {
                return Err(Error::config("policy.cem_population must be at least 2"));
            }
            if !(p.cem_elite_fraction > 0.0 && p.cem_elite_fraction <= 1.0) {
                return Err(Error::config("policy.cem_elite_fraction must lie in (0, 1]"));
            }
            if p.cem_samples == 0 || p.cem_states == 0 {
                return Err(Error::config("policy.cem_samples and cem_states must be at least 1"));
            }
        }
        if self.sweep.rollouts == Some(0) {
            return Err(Error::config("sweep.rollouts must be at least 1"));
        }
        for &b in &self.sweep.beta {
            FilterConfig { beta: b, ..self.filter.clone() }.validate()?;
        }
        if self.sweep.xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("sweep.xi values must be finite"));
        }
        let c = &self.certify;
        if c.states == 0 || c.oracle_samples == 0 || c.horizon == 0 {
            return Err(Error::config(
                "certify.states, oracle_samples and horizon must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<MasModel> {
        let action_box = match (self.model.action_low, self.model.action_high) {
            (None, None) => None,
            (lo, hi) => {
                let d = ActionBox::default();
                Some(ActionBox::new(lo.unwrap_or(d.low), hi.unwrap_or(d.high))?)
            }
        };
        make_model(
            self.preset()?,
            &ModelParams {
                agents: self.agents,
                noise_scale: self.model.noise_scale,
                gamma: self.model.gamma,
                action_box,
            },
        )
    }

    pub fn approx(&self) -> ApproxConfig {
        ApproxConfig {
            hidden: self.value.hidden.clone(),
            epochs: self.value.epochs,
            learning_rate: self.value.learning_rate,
        }
    }

    pub fn cem(&self) -> CemConfig {
        let p = &self.policy;
        CemConfig {
            iterations: p.cem_iterations,
            population: p.cem_population,
            elite_fraction: p.cem_elite_fraction,
            horizon: p.cem_horizon,
            samples: p.cem_samples,
            ..CemConfig::default()
        }
    }

    /// Sampling box of value-training and certification states.
    pub fn value_box(&self) -> Result<StateBox> {
        let (p, v) = match self.preset()? {
            Preset::Spring => ([-3.0, 3.0], [-4.0, 4.0]),
            Preset::Collision => ([-2.0, 2.0], [-5.0, 5.0]),
        };
        StateBox::new(
            self.value.position.unwrap_or(p),
            self.value.velocity.unwrap_or(v),
        )
    }

    /// Initial-state box of rollouts: the origin for spring, a random box for collision.
    pub fn init_box(&self) -> Result<StateBox> {
        let (p, v) = match self.preset()? {
            Preset::Spring => ([0.0, 0.0], [0.0, 0.0]),
            Preset::Collision => ([-1.0, 1.0], [-0.5, 0.5]),
        };
        StateBox::new(
            self.init.position.unwrap_or(p),
            self.init.velocity.unwrap_or(v),
        )
    }

    /// Aggressive proportional law towards the reference.
    pub fn nominal_policy(&self, model: &MasModel) -> Result<Policy> {
        let (kp, kd) = match model.preset {
            Preset::Spring => (2.0, 0.2),
            Preset::Collision => (1.0, 0.2),
        };
        let g = Gains::new(
            self.policy.nominal_kp.unwrap_or(kp),
            self.policy.nominal_kd.unwrap_or(kd),
        );
        make_proportional(model, &vec![g; model.num_actuated()])
    }

    /// Conservative law: slow approach for spring; spread-out references
    /// with mutual repulsion for collision.
    pub fn safe_policy(&self, model: &MasModel) -> Result<Policy> {
        let p = &self.policy;
        match model.preset {
            Preset::Spring => {
                let g = Gains::new(p.safe_kp.unwrap_or(0.5), p.safe_kd.unwrap_or(1.0));
                make_proportional(model, &vec![g; model.num_actuated()])
            }
            Preset::Collision => {
                let g = Gains::new(p.safe_kp.unwrap_or(1.0), p.safe_kd.unwrap_or(0.2));
                let m = model.num_agents();
                let spread = p.safe_spread.unwrap_or(1.0);
                let refs: Vec<f64> = (0..m)
                    .map(|i| -spread + 2.0 * spread * i as f64 / (m - 1) as f64)
                    .collect();
                Ok(make_proportional(model, &vec![g; m])?
                    .with_references(&refs)?
                    .with_repulsion(p.safe_repulsion.unwrap_or(5.0), p.safe_spacing.unwrap_or(2.0)))
            }
        }
    }

    /// Rollouts per sweep value.
    pub fn sweep_rollouts(&self) -> usize {
        self.sweep.rollouts.unwrap_or(self.rollouts)
    }
}
