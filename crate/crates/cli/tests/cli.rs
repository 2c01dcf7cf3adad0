use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn scaller(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scaller"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// The last stderr line parsed as the JSON error record.
fn error_line(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.lines().last().expect("stderr line")).expect("JSON error line")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn calibrate_builtin_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = scaller(
        &["calibrate", "--targets", "builtin-table1", "--out", "p.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["converged"], true);
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 12);
    for r in rows {
        assert!(r["rel_error"].as_f64().unwrap().abs() < 2e-3, "{r}");
    }
    let params = read_json(&dir.path().join("p.json"));
    assert!(params["d_mux0"].as_f64().unwrap() > 0.0);

    let o = scaller(&["report", "--params", "p.json"], dir.path());
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 13);
    assert!(table.contains("720.300"));
}

#[test]
fn calibrate_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.json"), "[]").unwrap();
    let o = scaller(
        &["calibrate", "--targets", "empty.json", "--out", "p.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert_eq!(error_line(&o)["error"], "non_identifiable");
    assert!(!dir.path().join("p.json").exists());

    let o = scaller(
        &["calibrate", "--targets", "absent.json", "--out", "p.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert_eq!(error_line(&o)["error"], "io");

    let o = scaller(&["calibrate", "--tol", "1e-9", "--out", "p.json"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(dir.path().join("p.json").exists());

    let o = scaller(
        &["calibrate", "--fix", "d_bogus=1", "--out", "p.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_sweep_analyze_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a.json", "b.json"] {
        let o = scaller(&["gen", "--seed", "7", "--n-chips", "3", "--out", out], d);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        fs::read(d.join("a.json")).unwrap(),
        fs::read(d.join("b.json")).unwrap()
    );
    let pop = read_json(&d.join("a.json"));
    let pairs: usize = pop["chips"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["blocks"].as_array().unwrap().len())
        .sum();
    assert_eq!(pairs, 3 * 224);

    let o = scaller(
        &[
            "sweep",
            "--pop",
            "a.json",
            "--chip",
            "2",
            "--type",
            "5mux-fast",
            "--out-dir",
            "one",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    let files: Vec<_> = fs::read_dir(d.join("one"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(files.len(), 36);
    for f in &files {
        assert_eq!(fs::read_to_string(f).unwrap().lines().count(), 33);
    }

    let o = scaller(&["sweep", "--pop", "a.json", "--out-dir", "all"], d);
    assert_eq!(code(&o), 0);
    let o = scaller(
        &[
            "analyze", "--in", "all", "--report", "r.json", "--figdir", "fig", "--pop", "a.json",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&d.join("r.json"));
    assert_eq!(report["n_tables"], 672);
    let types: Vec<&str> = report["types"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|t| !t["corners_pooled"].is_null())
        .map(|t| t["type"].as_str().unwrap())
        .collect();
    for t in ["5mux-fast", "6mux-fast", "7mux-fast"] {
        assert!(types.contains(&t), "{types:?}");
    }
    for fig in ["fig5", "fig6a", "fig6b", "fig6c", "fig6d", "fig7"] {
        assert!(d.join("fig").join(format!("{fig}.csv")).is_file(), "{fig}");
    }
}

#[test]
fn gen_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = scaller(&["gen", "--seed", "1", "--n-chips", "0", "--out", "p.json"], d);
    assert_eq!(code(&o), 2);
    assert_eq!(error_line(&o)["error"], "invalid_parameter");
    assert!(!d.join("p.json").exists());

    let o = scaller(&["gen", "--out", "p.json"], d);
    assert_eq!(code(&o), 2);

    fs::write(d.join("run.json"), r#"{"seed": 1, "vp": "missing.json"}"#).unwrap();
    let o = scaller(&["gen", "--config", "run.json", "--out", "p.json"], d);
    assert_eq!(code(&o), 1);

    let o = scaller(&["gen", "--config", "nowhere.json", "--out", "p.json"], d);
    assert_eq!(code(&o), 1);
}

#[test]
fn analyze_rejects_malformed_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&scaller(
            &["gen", "--seed", "3", "--n-chips", "1", "--out", "p.json"],
            d
        )),
        0
    );
    let sweep = [
        "sweep",
        "--pop",
        "p.json",
        "--chip",
        "0",
        "--type",
        "6mux-fast",
        "--out-dir",
        "sw",
    ];
    assert_eq!(code(&scaller(&sweep, d)), 0);
    let file = fs::read_dir(d.join("sw"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let good = fs::read_to_string(&file).unwrap();

    fs::write(&file, good.replacen("sel_bits", "selection", 1)).unwrap();
    let o = scaller(&["analyze", "--in", "sw", "--report", "r.json"], d);
    assert_eq!(code(&o), 2);
    assert_eq!(error_line(&o)["error"], "schema");

    let truncated: String = good.lines().take(40).map(|l| format!("{l}\n")).collect();
    fs::write(&file, truncated).unwrap();
    let o = scaller(&["analyze", "--in", "sw", "--report", "r.json"], d);
    assert_eq!(code(&o), 2);
    assert!(!d.join("r.json").exists());

    let o = scaller(&["analyze", "--in", "no_such_dir", "--report", "r.json"], d);
    assert_eq!(code(&o), 1);
}

fn cell_counts(netlist: &Value) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for inst in netlist["instances"].as_array().unwrap() {
        *m.entry(inst["cell"].as_str().unwrap().to_string()).or_default() += 1;
    }
    m
}

#[test]
fn netlist_cell_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = scaller(
        &[
            "netlist", "--k", "5", "--speed", "fast", "--flavor", "lle", "--out", "n.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let counts = cell_counts(&read_json(&dir.path().join("n.json")));
    let expected: BTreeMap<String, usize> = [
        ("MUX2", 5),
        ("INV_SHT", 5),
        ("INV_EXT", 5),
        ("INV_BL", 3),
        ("NAND2", 1),
        ("DELBUF_FAST", 1),
    ]
    .into_iter()
    .map(|(c, n)| (c.to_string(), n))
    .collect();
    assert_eq!(counts, expected);

    let o = scaller(
        &["netlist", "--k", "7", "--speed", "slow", "--flavor", "ref"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let counts = cell_counts(&serde_json::from_slice(&o.stdout).unwrap());
    assert_eq!(counts["INV_BL"], 15);
    assert_eq!(counts["DELBUF_SLOW"], 5);

    let o = scaller(
        &["netlist", "--k", "9", "--speed", "fast", "--flavor", "ref"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn run_uses_the_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("s.json"),
        r#"{"scenario": "tiny", "seed": 4, "mode": "presilicon", "n_chips": 1, "output_dir": "res"}"#,
    )
    .unwrap();
    let o = scaller(&["run", "--config", "s.json"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["population.json", "report.json", "figures/fig6a.csv"] {
        assert!(d.join("res").join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(d.join("res/sweeps")).unwrap().count(), 224);
}

#[test]
fn thread_cap_must_be_a_number() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_scaller"))
        .args(["report", "--json"])
        .env("SCALLER_THREADS", "many")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_scaller"))
        .args(["report", "--json"])
        .env("SCALLER_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let rows: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 12);
}
