use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn histroad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histroad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(scenario: &str, dir: &Path) -> PathBuf {
    let out = histroad(&["synth", "--scenario", s(&fixture(scenario)), "--output", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.toml")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn roi_on_bundled_fixture_has_no_invalid_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth("synthetic20.json", dir.path());
    let out = histroad(&["roi", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for epoch in [1900, 1950] {
        let rows = csv_rows(&dir.path().join(format!("out/roi_{epoch}.csv")));
        assert_eq!(rows.len(), 20);
        assert!(rows.iter().all(|r| r[9] == "true" && r[10] == "ok"));
        let geo = std::fs::read_to_string(dir.path().join(format!("out/roi_{epoch}.geojson"))).unwrap();
        assert_eq!(geo.matches("\"type\":\"Feature\"").count(), 20);
    }
}

#[test]
fn cluster_on_blank_sheet_skips_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth("blank_sheet.json", dir.path());
    let out = histroad(&["cluster", "--config", s(&cfg)]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("split skipped"), "{stderr}");
    let groups = csv_rows(&dir.path().join("out/cluster_groups.csv"));
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0][3], "degenerate");
    let rows = csv_rows(&dir.path().join("out/clusters_1900.csv"));
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r[14] == "false"));
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn pipeline_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth("synthetic20.json", dir.path());
    let text = std::fs::read_to_string(&cfg).unwrap();
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "4")] {
        let c = dir.path().join(format!("{name}.toml"));
        std::fs::write(&c, text.replace("output = \"out\"", &format!("output = \"{name}\""))).unwrap();
        let out = histroad(&["pipeline", "--config", s(&c), "--workers", workers, "--seed", "11"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(read_tree(&dir.path().join(name)));
    }
    assert!(outputs[0].len() > 10);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth("synthetic20.json", dir.path());
    let out = histroad(&[
        "cluster", "--config", s(&cfg), "--seed", "99", "--scope", "area", "--csd", "10", "--csl", "80",
        "--target-h", "15", "--target-w", "16",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = std::fs::read_to_string(dir.path().join("out/run_manifest.json")).unwrap();
    for needle in [
        "\"seed\": 99",
        "\"scope\": \"area\"",
        "\"csd_m\": 10.0",
        "\"csl_m\": 80.0",
        "\"target_h\": 15",
        "\"target_w\": 16",
    ] {
        assert!(m.contains(needle), "{needle} missing from {m}");
    }
    let rows = csv_rows(&dir.path().join("out/clusters_1900.csv"));
    assert!(rows.iter().all(|r| r[11] == "area" && r[12] == "1900:area"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(histroad(&["roi", "--config", s(&missing)]).status.code(), Some(1));
    assert_eq!(histroad(&["roi", "--bogus"]).status.code(), Some(1));
    assert_eq!(histroad(&["--help"]).status.code(), Some(0));

    let cfg = synth("synthetic20.json", dir.path());
    assert_eq!(histroad(&["roi", "--config", s(&cfg), "--csd", "-1"]).status.code(), Some(1));
    std::fs::write(dir.path().join("roads.geojson"), "{not json").unwrap();
    assert_eq!(histroad(&["roi", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let out = histroad(&[
        "sweep",
        "--scenario",
        s(&fixture("synthetic20.json")),
        "--grid",
        s(&fixture("sweep_grid.toml")),
        "--output",
        s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert!(dir.path().join("sweep_manifest.json").is_file());
}

#[test]
fn evaluate_and_temporal_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth("synthetic20.json", dir.path());
    for cmd in ["evaluate", "temporal"] {
        let out = histroad(&[cmd, "--config", s(&cfg)]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.starts_with("reference,study_area,epoch_year,stratum,n,km,"));
    assert!(metrics.lines().any(|l| l.starts_with("manual,synthetic,1900,all,20,")));
    assert!(dir.path().join("out/transitions.csv").is_file());
    assert!(dir.path().join("out/roi_histogram_1900_1950.csv").is_file());
}
