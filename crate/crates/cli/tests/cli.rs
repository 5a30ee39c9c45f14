use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedhpo_cli::commands::{PartitionManifest, REPORT_HEADER};
use fedhpo_cli::config::ExperimentConfig;
use fedhpo_cli::{cmd_hpo, cmd_partition, load_config, parse_config, RunArtifact};
use fedhpo_core::analysis::{Approach, TABLE2_CSV};

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn fedhpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedhpo")).args(args).env_remove("FEDHPO_LOG").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sets(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// The i.i.d. preset shrunk to ten clients of 60 samples and two rounds.
fn small_iid(extra: &[&str]) -> Vec<String> {
    let mut s = sets(&["dataset.synthetic.samplesPerClass=6", "federation.rounds=2"]);
    s.extend(sets(extra));
    s
}

#[test]
fn shipped_table_matches_embedded_fixture() {
    assert_eq!(fs::read_to_string(presets().join("table2.csv")).unwrap(), TABLE2_CSV);
}

#[test]
fn presets_load_and_round_trip() {
    for name in ["mnist-iid.json", "industrial-synthetic.json", "table2-fixture.json"] {
        let loaded = load_config(&presets().join(name), &[], None).unwrap();
        let text = serde_json::to_string(&loaded.config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, loaded.config, "{name}");
        assert_eq!(loaded.raw, fs::read_to_string(presets().join(name)).unwrap());
    }
}

#[test]
fn overrides_reach_the_typed_config() {
    let loaded = load_config(
        &presets().join("mnist-iid.json"),
        &sets(&["federation.rounds=3", "hpo.grid=[0.01,0.1]", "hpo.localEpochRule={\"explicit\":4}"]),
        Some(9),
    )
    .unwrap();
    let fed = loaded.config.federation.as_ref().unwrap();
    let hpo = loaded.config.hpo.as_ref().unwrap();
    assert_eq!(fed.rounds, 3);
    assert_eq!(hpo.grid.values(), &[0.01, 0.1]);
    assert_eq!(hpo.local_epoch_rule.epochs(fed), 4);
    assert_eq!(loaded.config.seed, 9);
    assert_eq!(loaded.overrides.len(), 3);
}

#[test]
fn iid_preset_derives_ten_local_epochs() {
    let cfg = load_config(&presets().join("mnist-iid.json"), &[], None).unwrap().config;
    let (fed, hpo) = (cfg.federation.unwrap(), cfg.hpo.unwrap());
    assert_eq!(hpo.local_epoch_rule.epochs(&fed), 10);
    assert_eq!(fed.batch_size, 128);
}

#[test]
fn partition_manifest_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_config(&presets().join("mnist-iid.json"), &small_iid(&[]), None).unwrap();
    let a = cmd_partition(&loaded, &dir.path().join("a")).unwrap();
    let b = cmd_partition(&loaded, &dir.path().join("b")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.clients.len(), 10);
    for c in &a.clients {
        assert_eq!(c.n_k, 60);
        assert_eq!(c.train + c.valid + c.test, 60);
        assert!((c.label_marginal.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for rel in c.files.values() {
            let x = fs::read(dir.path().join("a").join(rel)).unwrap();
            assert_eq!(x, fs::read(dir.path().join("b").join(rel)).unwrap(), "{rel}");
        }
    }
    let on_disk: PartitionManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, a);
    let manifest = |d: &str| fs::read(dir.path().join(d).join("manifest.json")).unwrap();
    assert_eq!(manifest("a"), manifest("b"));
    let other = load_config(&presets().join("mnist-iid.json"), &small_iid(&[]), Some(1)).unwrap();
    assert_ne!(cmd_partition(&other, &dir.path().join("c")).unwrap().clients, a.clients);
}

#[test]
fn hpo_writes_artifact_results_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_config(&presets().join("mnist-iid.json"), &small_iid(&["hpo.bayesian.nIter=2"]), None).unwrap();
    let run = cmd_hpo(&loaded, dir.path()).unwrap();
    assert_eq!(run.outcomes.len(), 4);
    assert_eq!(run.results.rows().len(), 40);
    assert_eq!(fs::read_to_string(dir.path().join("config.json")).unwrap(), loaded.raw);
    let back = RunArtifact::read(&dir.path().join("hpo-run.json")).unwrap();
    assert_eq!(back, run);
    let csv = fs::read_to_string(dir.path().join("hpo-results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    for o in &run.outcomes {
        assert_eq!(o.round_logs.len(), 2);
        assert_eq!(o.learning_rates.len(), 10);
    }
}

#[test]
fn report_carries_learning_rates() {
    let dir = tempfile::tempdir().unwrap();
    let config = presets().join("mnist-iid.json");
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["hpo", "--config", config.to_str().unwrap(), "--out", out];
    let overrides = small_iid(&["hpo.strategies=[\"grid\"]"]);
    for o in &overrides {
        args.extend(["--set", o.as_str()]);
    }
    let run = fedhpo(&args);
    assert!(run.status.success(), "{}", stderr(&run));
    let artifact = dir.path().join("hpo-run.json");
    let report = fedhpo(&["report", artifact.to_str().unwrap()]);
    assert!(report.status.success(), "{}", stderr(&report));
    let text = fs::read_to_string(dir.path().join("approaches-report.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 20);
    let artifact = RunArtifact::read(&artifact).unwrap();
    for r in &rows {
        let approach: Approach = r[2].parse().unwrap();
        let client: usize = r[0].parse().unwrap();
        let eta: f64 = r[4].parse().unwrap();
        let outcome = artifact.outcomes.iter().find(|o| o.approach == approach).unwrap();
        assert_eq!(eta, outcome.learning_rates[&client]);
    }
    let again = fedhpo(&["report", dir.path().join("hpo-run.json").to_str().unwrap(), "--out", dir.path().join("again").to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("again/approaches-report.csv")).unwrap(), text);
    let globals: Vec<&str> = rows.iter().filter(|r| r[2] == "globalGrid").map(|r| r[4]).collect();
    assert!(globals.iter().all(|&e| e == globals[0]));
}

#[test]
fn analyze_fixture_through_binary() {
    let dir = tempfile::tempdir().unwrap();
    let config = presets().join("table2-fixture.json");
    let out = dir.path().to_str().unwrap();
    let run = fedhpo(&["analyze", "--config", config.to_str().unwrap(), "--out", out]);
    assert!(run.status.success(), "{}", stderr(&run));
    let text = stdout(&run);
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("0.0277") && text.contains("0.0120") && text.contains("0.0042") && text.contains("0.0083"));
    assert_eq!(fs::read_to_string(dir.path().join("comparisons.txt")).unwrap(), text);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("comparisons.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 4);
    assert_eq!(json[0]["result"]["degreesOfFreedom"], 7);

    let all = fedhpo(&["analyze", "--config", config.to_str().unwrap(), "--out", out, "--set", "analysis.exclude=[]"]);
    assert!(stdout(&all).contains("0.0318"), "{}", stdout(&all));

    let empty = fedhpo(&["analyze", "--config", config.to_str().unwrap(), "--out", out, "--set", "analysis.pairs=[]"]);
    assert!(empty.status.success());
    assert_eq!(stdout(&empty).lines().count(), 1);
}

#[test]
fn exit_codes_and_single_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let table = presets().join("table2.csv");
    let table = table.to_str().unwrap();
    let iid = presets().join("mnist-iid.json");
    let iid = iid.to_str().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "federation": {"rounds": 1}}"#).unwrap();
    let cases: Vec<(Vec<&str>, i32, &str)> = vec![
        (vec!["frobnicate"], 2, "usage"),
        (vec!["hpo"], 2, "config.missing"),
        (vec!["hpo", "--config", "/nonexistent.json"], 2, "config.read"),
        (vec!["hpo", "--config", bad.to_str().unwrap()], 2, "config.invalid"),
        (vec!["hpo", "--config", iid, "--set", "partition.clients=1"], 2, "config.invalid"),
        (vec!["hpo", "--config", iid, "--set", "noequals"], 2, "config.override"),
        (vec!["baselines", "--config", iid, "--out", out], 2, "config.missing"),
        (vec!["analyze", "--out", out, table, "--pair", "central:localGrid"], 3, "analysis.missing-results"),
        (vec!["analyze", "--out", out, table, "--pair", "nonsense"], 2, "usage"),
        (vec!["analyze", "--out", out, "/nonexistent.csv"], 3, "io"),
        (vec!["report", "--out", out, table], 3, "artifact.parse"),
    ];
    for (args, code, tag) in cases {
        let o = fedhpo(&args);
        let err = stderr(&o);
        assert_eq!(o.status.code(), Some(code), "{args:?}: {err}");
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with(&format!("error[{tag}]")), "{args:?}: {err}");
    }
}

#[test]
fn parse_errors_name_the_source() {
    let e = parse_config("[1, 2]", "broken.json", &[], None).unwrap_err();
    assert!(e.line().contains("broken.json"));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn iid_local_grid_matches_global_grid() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_config(&presets().join("mnist-iid.json"), &sets(&["hpo.strategies=[\"grid\"]"]), None).unwrap();
    let run = cmd_hpo(&loaded, dir.path()).unwrap();
    let local = run.outcomes.iter().find(|o| o.approach == Approach::LocalGrid).unwrap();
    let global = run.outcomes.iter().find(|o| o.approach == Approach::GlobalGrid).unwrap();
    let first = local.learning_rates[&0];
    assert!(local.learning_rates.values().all(|&e| e == first), "{:?}", local.learning_rates);
    assert!(global.learning_rates.values().all(|&e| e == first), "{:?}", global.learning_rates);
    assert!((local.test_accuracy - global.test_accuracy).abs() <= 0.01);
}

#[test]
fn final_training_follows_posterior_block() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = small_iid(&[
        "hpo.regimes=[\"global\"]",
        "hpo.strategies=[\"grid\"]",
        "hpo.posterior={\"rounds\":20,\"epochs\":5}",
    ]);
    let loaded = load_config(&presets().join("mnist-iid.json"), &overrides, None).unwrap();
    let run = cmd_hpo(&loaded, dir.path()).unwrap();
    assert_eq!(run.outcomes.len(), 1);
    assert_eq!(run.outcomes[0].round_logs.len(), 20);
    assert_eq!(run.outcomes[0].outcome.comm.aggregation_rounds, 4 * 2);
}
