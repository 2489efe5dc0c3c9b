use std::fs;
use std::path::Path;

use clap::Parser;
use lakeorg_cli::{run, Cli};

fn lakeorg(args: &[&str]) {
    let cli = Cli::try_parse_from(std::iter::once("lakeorg").chain(args.iter().copied())).unwrap();
    run(cli).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_bench(dir: &Path) {
    lakeorg(&[
        "gen-bench", "--out", p(dir), "--seed", "2", "--n-tags", "15", "--n-tables", "20",
        "--max-values", "50", "--max-attributes", "6",
    ]);
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn pipeline_is_byte_for_byte_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let d = root.path().join(name);
        small_bench(&d.join("bench"));
        let lake = d.join("bench/lake.json");
        lakeorg(&[
            "build", "--lake", p(&lake), "--out", p(&d.join("org")), "--max-iters", "40",
            "--dimensions", "2", "--seed", "9",
        ]);
        lakeorg(&["eval", "--lake", p(&lake), "--org", p(&d.join("org")), "--out", p(&d.join("eval"))]);
        runs.push(d);
    }
    for f in [
        "bench/lake.json",
        "bench/ground_truth.csv",
        "bench/metadata.jsonl",
        "org/org-0.json",
        "org/org-1.json",
        "org/trace.jsonl",
        "eval/report.csv",
        "eval/summary.json",
    ] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn ingest_reproduces_the_generated_lake() {
    let d = tempfile::tempdir().unwrap();
    let bench = d.path().join("bench");
    small_bench(&bench);
    let out = d.path().join("ingested.json");
    lakeorg(&[
        "ingest", "--tables", p(&bench.join("tables")), "--metadata", p(&bench.join("metadata.jsonl")),
        "--embeddings", p(&bench.join("embeddings.txt")), "--out", p(&out),
    ]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(bench.join("lake.json")).unwrap());
}

#[test]
fn exact_flag_matches_full_representative_fraction() {
    let d = tempfile::tempdir().unwrap();
    small_bench(&d.path().join("bench"));
    let lake = d.path().join("bench/lake.json");
    let build = |out: &str, extra: &[&str]| {
        let mut args = vec!["build", "--lake", p(&lake), "--max-iters", "30", "--out"];
        let o = d.path().join(out);
        args.push(p(&o));
        args.extend_from_slice(extra);
        lakeorg(&args);
        fs::read(o.join("org-0.json")).unwrap()
    };
    let a = build("exact", &["--exact"]);
    let b = build("full", &["--reps-fraction", "1.0"]);
    assert_eq!(a, b);
}

#[test]
fn theta_above_one_makes_success_equal_discovery() {
    let d = tempfile::tempdir().unwrap();
    small_bench(&d.path().join("bench"));
    let lake = d.path().join("bench/lake.json");
    let org = d.path().join("org");
    lakeorg(&["build", "--lake", p(&lake), "--out", p(&org), "--max-iters", "10"]);
    lakeorg(&["eval", "--lake", p(&lake), "--org", p(&org), "--out", p(&d.path().join("e")), "--theta", "1.01"]);
    let rows = read_csv(&d.path().join("e/report.csv"));
    assert!(!rows.is_empty());
    for r in rows {
        let (disc, succ): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((disc - succ).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn eval_reports_every_table_once_with_probabilities() {
    let d = tempfile::tempdir().unwrap();
    small_bench(&d.path().join("bench"));
    let lake = d.path().join("bench/lake.json");
    let org = d.path().join("org");
    lakeorg(&["build", "--lake", p(&lake), "--out", p(&org), "--max-iters", "10", "--dimensions", "2"]);
    lakeorg(&["eval", "--lake", p(&lake), "--org", p(&org), "--out", p(&d.path().join("e"))]);
    let rows = read_csv(&d.path().join("e/report.csv"));
    assert_eq!(rows.len(), 20);
    let ids: std::collections::BTreeSet<_> = rows.iter().map(|r| r[0].clone()).collect();
    assert_eq!(ids.len(), rows.len());
    for r in &rows {
        let (disc, succ): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((0.0..=1.0).contains(&disc) && (0.0..=1.0).contains(&succ));
        assert!(succ + 1e-12 >= disc);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("e/summary.json")).unwrap()).unwrap();
    let mean = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum::<f64>() / rows.len() as f64;
    assert!((summary["effectiveness"].as_f64().unwrap() - mean).abs() < 1e-9);
}

#[test]
fn trace_has_one_line_per_iteration_and_dimension() {
    let d = tempfile::tempdir().unwrap();
    small_bench(&d.path().join("bench"));
    let lake = d.path().join("bench/lake.json");
    let org = d.path().join("org");
    lakeorg(&["build", "--lake", p(&lake), "--out", p(&org), "--max-iters", "12", "--plateau-window", "100"]);
    let text = fs::read_to_string(org.join("trace.jsonl")).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let summary = lines.pop().unwrap();
    assert_eq!(summary["iterations"].as_u64().unwrap(), lines.len() as u64);
    assert_eq!(summary["exit"], "max_iterations");
    assert_eq!(lines.len(), 12);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["iteration"].as_u64().unwrap(), i as u64);
        assert_eq!(l["dimension"].as_u64().unwrap(), 0);
        assert!(l["best_effectiveness"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn enrich_on_itself_labels_nothing_new() {
    let d = tempfile::tempdir().unwrap();
    small_bench(&d.path().join("bench"));
    let lake = d.path().join("bench/lake.json");
    let out = d.path().join("out.json");
    let report = d.path().join("report.csv");
    lakeorg(&[
        "enrich", "--source", p(&lake), "--target", p(&lake), "--out", p(&out), "--report", p(&report),
        "--min-positives", "3",
    ]);
    for r in read_csv(&report) {
        assert_eq!(r[1], "0");
    }
    let before: serde_json::Value = serde_json::from_slice(&fs::read(&lake).unwrap()).unwrap();
    let after: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(before, after);
}

#[test]
fn bad_inputs_are_errors_not_panics() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("missing.json");
    let cli = Cli::try_parse_from(["lakeorg", "build", "--lake", p(&missing), "--out", p(d.path())]).unwrap();
    assert!(run(cli).is_err());
    small_bench(&d.path().join("bench"));
    let lake = d.path().join("bench/lake.json");
    let cli = Cli::try_parse_from(["lakeorg", "build", "--lake", p(&lake), "--out", p(d.path()), "--gamma=-1"])
        .unwrap();
    assert!(run(cli).is_err());
    assert!(Cli::try_parse_from(["lakeorg", "eval", "--lake", p(&lake)]).is_err());
}
