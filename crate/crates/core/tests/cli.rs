use std::path::Path;
use std::process::{Command, Output};

const SMALL_VALUE: &str = "[value]\nstates = 120\nhorizon = 30\nepochs = 40\n";

fn cli(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mas-safety"));
    cmd.args(args).env_remove("MAS_SAFETY_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn run_defaults_writes_every_state() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let small = write(tmp.path(), "small.toml", SMALL_VALUE);
    let o = out.to_str().unwrap();
    assert_eq!(code(&cli(&["train-value", "--config", &small, "--out", o], &[])), 0);
    let r = cli(&["run", "--out", o], &[]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));

    let rows = lines(&out.join("trajectories.csv"));
    assert_eq!(rows[0], "rollout,step,agent,x1,x2,u,branch,feasible,safe,reward");
    // 20 rollouts x 201 states x 3 agents
    assert_eq!(rows.len() - 1, 20 * 201 * 3);
    let last = rows.last().unwrap();
    assert!(last.starts_with("19,200,2,"), "{last}");
    assert_eq!(lines(&out.join("trajectories_nominal.csv")).len(), rows.len());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest_run.json")).unwrap()).unwrap();
    assert_eq!(manifest["rollout_seeds"], serde_json::json!([0, 19]));
    assert!(manifest["config_toml"].as_str().unwrap().contains("steps = 200"));
}

#[test]
fn sweep_and_certify() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        &format!(
            "steps = 20\nrollouts = 2\n[filter]\nepsilon = 0.0\n[certify]\nhorizon = 10\nstates = 10\noracle_samples = 20\n{SMALL_VALUE}"
        ),
    );
    let o = tmp.path().join("o");
    let o = o.to_str().unwrap();
    assert_eq!(code(&cli(&["train-value", "--config", &cfg, "--out", o], &[])), 0);
    assert_eq!(code(&cli(&["sweep-beta", "--config", &cfg, "--out", o], &[])), 0);
    let rows = lines(&Path::new(o).join("sweep.csv"));
    assert_eq!(rows.len(), 1 + 3);
    assert!(rows[1].starts_with("beta,0.1,"));
    assert!(rows[3].starts_with("beta,10,"));

    let c = cli(&["certify", "--config", &cfg, "--out", o], &[]);
    assert_eq!(code(&c), 0, "{}", String::from_utf8_lossy(&c.stderr));
    assert!(String::from_utf8_lossy(&c.stderr).contains("vacuous"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(Path::new(o).join("report.json")).unwrap()).unwrap();
    assert_eq!(report["delta"], 1.0);
    assert_eq!(report["k"], 10);
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o");
    let o = o.to_str().unwrap();

    assert_eq!(code(&cli(&["run", "--out", o], &[])), 2);
    assert_eq!(code(&cli(&["fly", "--out", o], &[])), 1);
    assert_eq!(code(&cli(&["run", "--config", "/nonexistent.toml"], &[])), 1);
    let bad = write(tmp.path(), "bad.toml", "[filter]\nalpha = 1.5\n");
    assert_eq!(code(&cli(&["run", "--config", &bad, "--out", o], &[])), 1);
    let unknown = write(tmp.path(), "unknown.toml", "speed = 3\n");
    assert_eq!(code(&cli(&["run", "--config", &unknown, "--out", o], &[])), 1);
    assert_eq!(code(&cli(&["run", "--bogus-flag"], &[])), 1);

    let file = write(tmp.path(), "not_a_dir", "");
    let small = write(tmp.path(), "small.toml", SMALL_VALUE);
    assert_eq!(code(&cli(&["train-value", "--config", &small, "--out", &file], &[])), 4);

    // Margin-mode proximity radius goes negative outside the sublevel set.
    assert_eq!(code(&cli(&["train-value", "--config", &small, "--out", o], &[])), 0);
    let outside = write(
        tmp.path(),
        "outside.toml",
        "steps = 5\nrollouts = 1\n[filter]\nxi = -100.0\nradius_mode = \"margin\"\n",
    );
    let r = cli(&["run", "--config", &outside, "--out", o], &[]);
    assert_eq!(code(&r), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("step 0"));
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let env_out = tmp.path().join("from_env");
    let small = write(tmp.path(), "small.toml", SMALL_VALUE);
    let r = cli(
        &["train-value", "--config", &small],
        &[("MAS_SAFETY_OUT", env_out.as_path())],
    );
    assert_eq!(code(&r), 0);
    assert!(env_out.join("value_model.bin").exists());

    let flag_out = tmp.path().join("from_flag");
    let r = cli(
        &["train-value", "--config", &small, "--out", flag_out.to_str().unwrap()],
        &[("MAS_SAFETY_OUT", env_out.as_path())],
    );
    assert_eq!(code(&r), 0);
    assert!(flag_out.join("value_model.bin").exists());
    assert_eq!(
        std::fs::read(env_out.join("value_model.bin")).unwrap(),
        std::fs::read(flag_out.join("value_model.bin")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", &format!("seed = 5\n{SMALL_VALUE}"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, seed) in [(&a, None), (&b, Some("6"))] {
        let mut args = vec!["train-value", "--config", &cfg, "--out", dir.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert_eq!(code(&cli(&args, &[])), 0);
    }
    let read = |d: &Path| std::fs::read(d.join("value_model.bin")).unwrap();
    assert_ne!(read(&a), read(&b));
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(b.join("manifest_train-value.json")).unwrap())
            .unwrap();
    assert_eq!(m["seed"], 6);
}
