//! CSV and JSON artifacts.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so every
//! file is a pure function of its inputs. Empty fields mean "not applicable"
//! (no action after the last state, no filter flag for unfiltered runs).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::dynamics::MasSystem;
use crate::error::Result;
use crate::sim::{RolloutRecord, SweepRow};

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "rollout", "step", "agent", "x1", "x2", "u", "branch", "feasible", "safe", "reward",
];

pub const SWEEP_HEADER: [&str; 9] = [
    "param_name",
    "param_value",
    "violations_mean",
    "violations_std",
    "mse_mean",
    "mse_std",
    "reward_mean",
    "reward_std",
    "feas_rate_mean",
];

fn float(v: f64) -> String {
    format!("{v}")
}

/// One row per (rollout, state `x_0 ..= x_T`, agent). Action, flag and reward
/// fields refer to the step leaving that state and are empty for `x_T`.
pub fn write_trajectories<W: Write, S: MasSystem + ?Sized>(
    w: W,
    records: &[RolloutRecord],
    system: &S,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAJECTORY_HEADER)?;
    for (r, rec) in records.iter().enumerate() {
        for (k, x) in rec.states.iter().enumerate() {
            let action = rec.actions.get(k);
            let flags = rec.flags.as_ref().and_then(|f| f.get(k));
            for i in 0..system.num_agents() {
                let u = action
                    .and_then(|a| a.agents[i].first())
                    .map(|&u| float(u))
                    .unwrap_or_default();
                let flag = flags.and_then(|f| f.iter().find(|f| f.agent == i));
                out.write_record([
                    r.to_string(),
                    k.to_string(),
                    i.to_string(),
                    float(x.agents[i][0]),
                    float(x.agents[i][1]),
                    u,
                    flag.map(|f| f.branch.as_str().to_string()).unwrap_or_default(),
                    flag.map(|f| f.feasible.to_string()).unwrap_or_default(),
                    rec.safe[k].to_string(),
                    rec.rewards.get(k).map(|&v| float(v)).unwrap_or_default(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for row in rows {
        out.write_record([
            row.param_name.clone(),
            float(row.param_value),
            float(row.violations_mean),
            float(row.violations_std),
            float(row.mse_mean),
            float(row.mse_std),
            float(row.reward_mean),
            float(row.reward_std),
            row.feas_rate_mean.map(float).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn save_trajectories<S: MasSystem + ?Sized>(
    path: &Path,
    records: &[RolloutRecord],
    system: &S,
) -> Result<()> {
    write_trajectories(create(path)?, records, system)
}

pub fn save_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_sweep(create(path)?, rows)
}

/// Pretty-printed JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_model, JointState, ModelParams, Preset};
    use crate::policy::{make_proportional, Gains};
    use crate::sim::rollout;

    fn text(f: impl FnOnce(&mut Vec<u8>)) -> String {
        let mut buf = Vec::new();
        f(&mut buf);
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let s = text(|b| write_sweep(b, &[]).unwrap());
        assert_eq!(s, format!("{}\n", SWEEP_HEADER.join(",")));
    }

    #[test]
    fn trajectory_rows() {
        let m = make_model(Preset::Spring, &ModelParams::default()).unwrap();
        let p = make_proportional(&m, &[Gains::new(0.5, 0.5); 2]).unwrap();
        let rec = rollout(&m, &p, &JointState::zeros(3, 2), 1, 3).unwrap();
        let s = text(|b| write_trajectories(b, std::slice::from_ref(&rec), &m).unwrap());
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_HEADER.join(","));
        // two states times three agents
        assert_eq!(lines.len(), 1 + 6);
        assert_eq!(lines[1], format!("0,0,0,0,0,0.875,,,true,{}", rec.rewards[0]));
        assert_eq!(lines[3], format!("0,0,2,0,0,,,,true,{}", rec.rewards[0]));
        assert!(lines[6].ends_with(",,,,true,"));
        let again = text(|b| write_trajectories(b, std::slice::from_ref(&rec), &m).unwrap());
        assert_eq!(s, again);
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5e17] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn io_failure_maps_to_exit_4() {
        let e = save_sweep(Path::new("/nonexistent-dir/sweep.csv"), &[]).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }
}
