use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tandem(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tandem"));
    for (key, _) in std::env::vars().filter(|(k, _)| k.starts_with("TANDEM_")) {
        cmd.env_remove(key);
    }
    cmd.args(args).output().expect("binary runs")
}

fn config(name: &str) -> String {
    root().join("configs").join(name).to_string_lossy().into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_subcommands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for (pattern, cfg) in
        [("coordinate", "fe2o3.toml"), ("directive", "directive.toml"), ("surrogate", "surrogate.toml")]
    {
        let mut reports = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{pattern}_{k}.json"));
            let o = tandem(&["--config", &config(cfg), "--seed", "7", "run", pattern, "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{pattern}: {}", stderr(&o));
            assert!(stderr(&o).contains("seed 7"));
            reports.push(std::fs::read(&out).unwrap());
        }
        assert_eq!(reports[0], reports[1], "{pattern} reports differ");
    }
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\n[coupler.coordinate]\ntau_gen = 0.9\nflush_treshold = 5\n").unwrap();
    let o = tandem(&["--config", path.to_str().unwrap(), "run", "coordinate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("coupler.coordinate.flush_treshold"), "{}", stderr(&o));

    std::fs::write(&path, "[oracle]\ncutoff_radius = -1.0\n").unwrap();
    let o = tandem(&["--config", path.to_str().unwrap(), "run", "surrogate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cutoff_radius"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(tandem(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(tandem(&["train-surrogate"]).status.code(), Some(2));
    assert_eq!(tandem(&["depot", "stats"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let o = tandem(&["replay", "/nonexistent/trace.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replay_reproduces_fe2o3_counters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("replay.json");
    let trace = root().join("fixtures/fe2o3_trace.json");
    let o = tandem(&["replay", trace.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&out);
    assert_eq!(report["ai_calls"], 9);
    assert_eq!(report["oracle_calls"], 5);
    assert_eq!(report["summary"]["iterations"], 50);
    assert_eq!(report["summary"]["unique_survivors"], 14);
}

#[test]
fn generate_screen_and_depot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let generated = dir.path().join("generated.json");
    let o = tandem(&["generate", "--count", "12", "--seed", "3", "--out", generated.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&generated).as_array().unwrap().len(), 12);

    let screened = dir.path().join("screen.json");
    let o = tandem(&["screen", generated.to_str().unwrap(), "--out", screened.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&screened)["input_count"], 12);

    let cfg = dir.path().join("depot.toml");
    std::fs::write(&cfg, "[depot]\npath = \"store\"\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let ids = dir.path().join("ids.json");
    let o = tandem(&["--config", cfg, "depot", "ingest", generated.to_str().unwrap(), "--out", ids.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&ids).as_array().unwrap().len(), 12);

    let stats = dir.path().join("stats.json");
    let o = tandem(&["--config", cfg, "depot", "stats", "--out", stats.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let distinct = json(&stats)["records"].as_u64().unwrap();
    assert!((1..=12).contains(&distinct));

    let first = json(&generated)[0].clone();
    let found = dir.path().join("found.json");
    let species = first["species"].as_array().unwrap();
    let symbol = species[0].as_str().unwrap();
    let o =
        tandem(&["--config", cfg, "depot", "search", "--formula", &reduced(species), "--out", found.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let hits = json(&found);
    assert!(hits.as_array().unwrap().iter().any(|r| r["structure"]["species"][0] == symbol));
}

/// Formula string of a species list; the depot reduces it on lookup.
fn reduced(species: &[serde_json::Value]) -> String {
    let mut counts = std::collections::BTreeMap::new();
    for s in species {
        *counts.entry(s.as_str().unwrap().to_string()).or_insert(0) += 1;
    }
    counts.iter().map(|(el, n)| format!("{el}{n}")).collect()
}
