//! The CLI's experiments: value training, filtered rollouts, parameter
//! sweeps and certification, each writing its artifacts and a manifest into
//! an output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dynamics::{JointState, MasModel, MasSystem, StateBox};
use crate::error::{Error, Result};
use crate::filters::FilterConfig;
use crate::guarantees::{certify_grid, guarantee_report, GuaranteeReport};
use crate::output;
use crate::policy::{cem_improve, Policy};
use crate::seed;
use crate::sim::{
    compute_metrics, sweep, InitialState, Metrics, RunRollouts, Scenario, SweepAxis,
    SwitchingController,
};
use crate::value::{collect_dataset, fit_value_with, Barrier, ModelBundle, ValueModel};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MODEL_FILE: &str = "value_model.bin";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const NOMINAL_TRAJECTORIES_FILE: &str = "trajectories_nominal.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const REPORT_FILE: &str = "report.json";

// Sub-streams of the base seed.
const STREAM_CEM: u64 = 1;
const STREAM_DATASET: u64 = 2;
const STREAM_FIT: u64 = 3;
const STREAM_CERTIFY: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TrainValue,
    Run,
    SweepBeta,
    SweepXi,
    Certify,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::TrainValue,
        Command::Run,
        Command::SweepBeta,
        Command::SweepXi,
        Command::Certify,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainValue => "train-value",
            Command::Run => "run",
            Command::SweepBeta => "sweep-beta",
            Command::SweepXi => "sweep-xi",
            Command::Certify => "certify",
        }
    }

    pub fn manifest_file(&self) -> String {
        format!("manifest_{}.json", self.name())
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown command {s:?}")))
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    /// Files written, relative to the output directory (or as configured).
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    artifact_version: &'a str,
    command: &'a str,
    seed: u64,
    rollout_seeds: Option<[u64; 2]>,
    config_toml: String,
    value_box: StateBox,
    init_box: StateBox,
    outputs: Vec<String>,
    warnings: &'a [String],
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    train_mse: f64,
    states: usize,
    target_mean: f64,
    target_max: f64,
    safe_policy: Policy,
    cem_trace: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct RunMetrics {
    filtered: Metrics,
    nominal: Metrics,
}

/// Location of the value model: `value.path` or the default file in `out_dir`.
pub fn model_path(cfg: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    cfg.value.path.clone().unwrap_or_else(|| out_dir.join(MODEL_FILE))
}

/// Run one command, writing its outputs into `out_dir` (created if needed).
pub fn run_experiment(cfg: &ExperimentConfig, command: Command, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let model = cfg.model()?;
    let mut outcome = match command {
        Command::TrainValue => train_value(cfg, &model, out_dir)?,
        Command::Run => run(cfg, &model, out_dir)?,
        Command::SweepBeta => run_sweep(cfg, &model, SweepAxis::Beta, out_dir)?,
        Command::SweepXi => run_sweep(cfg, &model, SweepAxis::Xi, out_dir)?,
        Command::Certify => certify(cfg, &model, out_dir)?,
    };
    let rollout_seeds = matches!(command, Command::Run | Command::SweepBeta | Command::SweepXi)
        .then(|| {
            let n = match command {
                Command::Run => cfg.rollouts,
                _ => cfg.sweep_rollouts(),
            } as u64;
            [cfg.seed, cfg.seed.wrapping_add(n - 1)]
        });
    let manifest_name = command.manifest_file();
    let manifest = Manifest {
        artifact_version: ARTIFACT_VERSION,
        command: command.name(),
        seed: cfg.seed,
        rollout_seeds,
        config_toml: cfg.to_toml()?,
        value_box: cfg.value_box()?,
        init_box: cfg.init_box()?,
        outputs: outcome.files.iter().map(|p| p.display().to_string()).collect(),
        warnings: &outcome.warnings,
    };
    output::save_json(&out_dir.join(&manifest_name), &manifest)?;
    outcome.files.push(PathBuf::from(manifest_name));
    Ok(outcome)
}

fn sample_states(model: &MasModel, sampler: &StateBox, n: usize, seed: u64) -> Vec<JointState> {
    (0..n as u64)
        .map(|k| sampler.sample(model, &mut seed::rng(seed::derive(seed, k))))
        .collect()
}

fn train_value(cfg: &ExperimentConfig, model: &MasModel, out_dir: &Path) -> Result<Outcome> {
    let nominal = cfg.nominal_policy(model)?;
    let mut safe = cfg.safe_policy(model)?;
    let value_box = cfg.value_box()?;
    let mut cem_trace = None;
    if cfg.policy.cem_iterations > 0 {
        let cem_seed = seed::derive(cfg.seed, STREAM_CEM);
        let states = sample_states(model, &value_box, cfg.policy.cem_states, cem_seed);
        let result = cem_improve(model, &safe, &states, &cfg.cem(), cem_seed)?;
        safe = result.policy;
        cem_trace = Some(result.trace);
    }
    let data = collect_dataset(
        model,
        &safe,
        cfg.value.states,
        cfg.value.horizon,
        cfg.value.samples,
        seed::derive(cfg.seed, STREAM_DATASET),
        &value_box,
    )?;
    let value = fit_value_with(
        &data,
        &cfg.approx(),
        seed::derive(cfg.seed, STREAM_FIT),
        model.gamma,
        cfg.value.horizon,
    )?;
    let summary = TrainSummary {
        train_mse: value.train_mse,
        states: data.len(),
        target_mean: data.targets.iter().sum::<f64>() / data.len() as f64,
        target_max: data.targets.iter().copied().fold(0.0, f64::max),
        safe_policy: safe.clone(),
        cem_trace,
    };
    let path = model_path(cfg, out_dir);
    ModelBundle {
        value,
        policies: vec![("nominal".into(), nominal), ("safe".into(), safe)],
    }
    .save(&path)?;
    output::save_json(&out_dir.join("training.json"), &summary)?;
    let model_file = if cfg.value.path.is_some() {
        path
    } else {
        PathBuf::from(MODEL_FILE)
    };
    Ok(Outcome {
        files: vec![model_file, PathBuf::from("training.json")],
        warnings: Vec::new(),
    })
}

struct Loaded {
    value: ValueModel,
    nominal: Policy,
    safe: Policy,
}

fn load(cfg: &ExperimentConfig, model: &MasModel, out_dir: &Path) -> Result<Loaded> {
    let bundle = ModelBundle::load(&model_path(cfg, out_dir))?;
    let expected = model.num_agents() * model.state_dim();
    if bundle.value.input_dim() != expected {
        return Err(Error::config(format!(
            "value model expects {} inputs but the configured system has {expected}; \
             retrain with train-value",
            bundle.value.input_dim()
        )));
    }
    let policy = |name: &str| {
        bundle
            .policy(name)
            .cloned()
            .ok_or_else(|| Error::Format(format!("model file has no {name:?} policy")))
    };
    let nominal = policy("nominal")?;
    let safe = policy("safe")?;
    for p in [&nominal, &safe] {
        if p.agents.len() != model.num_agents() {
            return Err(Error::config("stored policies do not match the configured agent count"));
        }
    }
    Ok(Loaded {
        value: bundle.value,
        nominal,
        safe,
    })
}

fn filtered<'a>(
    model: &MasModel,
    loaded: &'a Loaded,
    filter: FilterConfig,
    init: &StateBox,
) -> Scenario<MasModel, SwitchingController<&'a ValueModel>> {
    Scenario {
        system: model.clone(),
        controller: SwitchingController {
            barrier: Barrier::new(&loaded.value, filter.xi),
            nominal: loaded.nominal.clone(),
            safe: loaded.safe.clone(),
            cfg: filter,
        },
        init: InitialState::Uniform(*init),
    }
}

fn run(cfg: &ExperimentConfig, model: &MasModel, out_dir: &Path) -> Result<Outcome> {
    let loaded = load(cfg, model, out_dir)?;
    let init = cfg.init_box()?;
    let records =
        filtered(model, &loaded, cfg.filter.clone(), &init).run_many(cfg.rollouts, cfg.steps, cfg.seed)?;
    let nominal = Scenario {
        system: model.clone(),
        controller: loaded.nominal.clone(),
        init: InitialState::Uniform(init),
    }
    .run_many(cfg.rollouts, cfg.steps, cfg.seed)?;
    output::save_trajectories(&out_dir.join(TRAJECTORIES_FILE), &records, model)?;
    output::save_trajectories(&out_dir.join(NOMINAL_TRAJECTORIES_FILE), &nominal, model)?;
    let metrics = RunMetrics {
        filtered: compute_metrics(&records, model)?,
        nominal: compute_metrics(&nominal, model)?,
    };
    output::save_json(&out_dir.join(METRICS_FILE), &metrics)?;
    Ok(Outcome {
        files: [TRAJECTORIES_FILE, NOMINAL_TRAJECTORIES_FILE, METRICS_FILE]
            .map(PathBuf::from)
            .to_vec(),
        warnings: Vec::new(),
    })
}

fn run_sweep(
    cfg: &ExperimentConfig,
    model: &MasModel,
    axis: SweepAxis,
    out_dir: &Path,
) -> Result<Outcome> {
    let values = match axis {
        SweepAxis::Beta => &cfg.sweep.beta,
        SweepAxis::Xi => &cfg.sweep.xi,
        SweepAxis::Agents => unreachable!("agent sweeps need one model per value"),
    };
    let loaded = load(cfg, model, out_dir)?;
    let init = cfg.init_box()?;
    let rows = sweep(
        axis,
        values,
        cfg.sweep_rollouts(),
        cfg.steps,
        cfg.seed,
        |v| {
            let mut filter = cfg.filter.clone();
            match axis {
                SweepAxis::Beta => filter.beta = v,
                _ => filter.xi = v,
            }
            filter.validate()?;
            Ok((
                Box::new(filtered(model, &loaded, filter, &init)) as Box<dyn RunRollouts>,
                Box::new(model.clone()) as Box<dyn MasSystem>,
            ))
        },
    )?;
    output::save_sweep(&out_dir.join(SWEEP_FILE), &rows)?;
    Ok(Outcome {
        files: vec![PathBuf::from(SWEEP_FILE)],
        warnings: Vec::new(),
    })
}

fn certify(cfg: &ExperimentConfig, model: &MasModel, out_dir: &Path) -> Result<Outcome> {
    let loaded = load(cfg, model, out_dir)?;
    let barrier = Barrier::new(&loaded.value, cfg.filter.xi);
    let cert_seed = seed::derive(cfg.seed, STREAM_CERTIFY);
    let states = sample_states(
        model,
        &cfg.value_box()?,
        cfg.certify.states,
        seed::derive(cert_seed, 0),
    );
    let report = certify_grid(
        model,
        &barrier,
        &loaded.safe,
        &states,
        &cfg.filter,
        seed::derive(cert_seed, 1),
        cfg.certify.oracle_samples,
    )?;
    // The bound is reported for the initial state of rollout 0.
    let x0 = InitialState::Uniform(cfg.init_box()?).draw(model, cfg.seed);
    let h0 = barrier.h(&x0)?;
    let f = &cfg.filter;
    let report: GuaranteeReport =
        guarantee_report(f.beta, f.alpha, f.epsilon, h0, cfg.certify.horizon, Some(report))?;
    output::save_json(&out_dir.join(REPORT_FILE), &report)?;
    Ok(Outcome {
        files: vec![PathBuf::from(REPORT_FILE)],
        warnings: report.warnings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert_eq!("fly".parse::<Command>().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn missing_model_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let e = run_experiment(&cfg, Command::Run, dir.path()).unwrap_err();
        assert!(matches!(e, Error::MissingModel(_)));
        assert_eq!(e.exit_code(), 2);
    }
}
