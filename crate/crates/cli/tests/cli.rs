use std::process::{Command, Output};

fn ptree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptree")).args(args).env("PTREE_THREADS", "2").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.csv");
    let o = ptree(&["sweep", "--env", "grid", "--vary", "p=0.9,1.0", "--trials", "8", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].starts_with("p,change_mean,change_se,leaf_depth_mean"), "{text}");
    assert!(lines[2].starts_with("1,0,0,"), "{text}");
}

#[test]
fn sweep_is_reproducible() {
    let args = ["sweep", "--vary", "delta_star=0.01,0.1", "--trials", "6", "--seed", "9"];
    let a = ptree(&args);
    let b = ptree(&args);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        "vary = \"n_actions=4,8\"\ntrials = 5\nseed = 2\nformat = \"csv\"\n[build]\nn_particles = 200\nn_min = 50\n",
    )
    .unwrap();
    let from_file = ptree(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(from_file.status.success(), "{}", String::from_utf8_lossy(&from_file.stderr));

    let flags_cfg = dir.path().join("flags.toml");
    std::fs::write(&flags_cfg, "[build]\nn_particles = 200\nn_min = 50\n").unwrap();
    let from_flags = ptree(&[
        "sweep", "--config", flags_cfg.to_str().unwrap(), "--vary", "n_actions=4,8", "--trials", "5", "--seed", "2",
        "--format", "csv",
    ]);
    assert_eq!(stdout(&from_file), stdout(&from_flags));
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, "trails = 5\n").unwrap();
    let o = ptree(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("trails"));
}

#[test]
fn build_then_export_dot() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("t.tree");
    let dot = dir.path().join("t.dot");
    let o = ptree(&["build", "--env", "grid", "--seed", "1", "--out", tree.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = ptree(&["export", "--tree", tree.to_str().unwrap(), "--format", "dot", "--out", dot.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.starts_with("digraph policy_tree {"));
    assert!(text.contains("n0 [label="));
    assert!(text.contains("color=blue"));
}

#[test]
fn cyber_build_uses_belief() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("build.toml");
    std::fs::write(&params, "n_particles = 80\nn_min = 20\nd_max = 3\n").unwrap();
    let tree = dir.path().join("c.tree");
    let o = ptree(&[
        "build", "--env", "cyber", "--build-config", params.to_str().unwrap(), "--out", tree.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = ptree(&["export", "--tree", tree.to_str().unwrap(), "--format", "json"]);
    assert!(stdout(&o).contains("\"schema_version\": 1"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    for args in [
        &["sweep", "--env", "vaccine"][..],
        &["sweep", "--vary", "p"],
        &["sweep", "--vary", "n_actions=4.5", "--trials", "2"],
        &["export", "--tree", "/nonexistent.tree"],
        &["build", "--env", "cyber", "--baseline", "value_iteration", "--out", "/tmp/never.tree"],
    ] {
        let o = ptree(args);
        assert!(!o.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"), "{args:?}");
    }
}
