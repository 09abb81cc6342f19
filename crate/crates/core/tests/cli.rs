use std::fs;
use std::path::Path;
use std::process::Command;

use qdil::archive::{Archive, ArchiveConfig};
use qdil::driver::PolicySnapshot;
use qdil::envs::{EnvKind, EnvSpec};
use qdil::mlp::GaussianPolicy;
use qdil::output::{SavedArchive, METRICS_HEADER};
use qdil::ppo::RunningMeanStd;

const SMOKE: &str = "\
[env]
horizon = 20
batch = 4

[qd]
iterations = 5
lambda = 3
n1 = 2
n2 = 2
";

fn qdil(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qdil"))
        .args(args)
        .current_dir(dir)
        .env_remove("QDIL_THREADS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn train_writes_reproducible_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, "smoke.toml", SMOKE);
    for out in ["a", "b"] {
        let o = qdil(&["train", "--config", &cfg, "--seed", "3", "--out", out], dir);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read_to_string(dir.join("a/metrics.csv")).unwrap();
    let b = fs::read_to_string(dir.join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 6);
    for (i, row) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 8);
        assert_eq!(cols[0], (i + 1).to_string());
        assert_eq!(cols[7], "0");
    }
    for f in ["config.toml", "archive.json", "heatmap.csv"] {
        assert!(dir.join("a").join(f).exists(), "{f}");
    }
    // The echo reproduces the run, seed included.
    let echo = fs::read_to_string(dir.join("a/config.toml")).unwrap();
    assert!(echo.contains("base = 3"));
    let o = qdil(&["train", "--config", "a/config.toml", "--out", "c"], dir);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.join("c/metrics.csv")).unwrap(), a);

    let o = qdil(&["eval-archive", "--config", &cfg, "--out", "a"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("a/eval.json")).unwrap()).unwrap();
    assert!(eval["coverage"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad = write_config(dir, "bad.toml", "[archive]\nalpha = 1.5\n");
    let o = qdil(&["train", "--config", &bad], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml:2"));

    let unknown = write_config(dir, "unknown.toml", "[qd]\nfoo = 1\n");
    let o = qdil(&["train", "--config", &unknown], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));

    let o = qdil(&["train", "--config", "missing.toml"], dir);
    assert_eq!(o.status.code(), Some(2));

    let ok = write_config(dir, "ok.toml", SMOKE);
    let o = Command::new(env!("CARGO_BIN_EXE_qdil"))
        .args(["train", "--config", &ok])
        .current_dir(dir)
        .env("QDIL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, "c.toml", SMOKE);
    let o = qdil(&["export-heatmap", "--config", &cfg, "--archive", "nope.json", "--out", "x"], dir);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn heatmap_places_a_single_elite() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let env = EnvSpec::new(EnvKind::PointFlyer, 20, 4).unwrap();
    let policy = GaussianPolicy::new(env.obs_dim(), &[4], env.act_dim()).unwrap();
    let mut archive = Archive::new(ArchiveConfig::uniform(2, 0.0, 1.0, 25, 0.1)).unwrap();
    let snap = PolicySnapshot { params: policy.init(0), obs_stats: RunningMeanStd::new(env.obs_dim()) };
    archive.insert(2.0, &[0.52, 0.10], snap).unwrap();
    SavedArchive { env, policy_hidden: vec![4], archive }.save(&dir.join("one.json")).unwrap();

    let cfg = write_config(dir, "c.toml", "");
    let o = qdil(&["export-heatmap", "--config", &cfg, "--archive", "one.json", "--out", "h"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.join("h/heatmap.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 25);
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 25);
        for (c, v) in row.iter().enumerate() {
            if (r, c) == (13, 2) {
                assert_eq!(v.parse::<f64>().unwrap(), 2.0);
            } else {
                assert_eq!(*v, "NaN");
            }
        }
    }
}

#[test]
fn gen_demos_and_lemma_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, "d.toml", "[env]\nkind = \"ChainHopper\"\nhorizon = 20\n[demos]\ncount = 3\n");
    let o = qdil(&["gen-demos", "--config", &cfg, "--out", "d"], dir);
    assert!(o.status.success());
    let set = qdil::demos::DemoSet::load(&dir.join("d/demos.jsonl")).unwrap();
    assert_eq!(set.episodes.len(), 3);
    assert_eq!(set.header.env, "ChainHopper");

    let o = qdil(&["verify-lemma", "--config", &cfg, "--out", "l"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.join("l/lemma.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
