use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use platoon_cli::commands;
use platoon_cli::scenario::Scenario;
use serde_json::Value;

const DEFAULT_SCENARIO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/h07.toml");

fn platoon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().expect("object").keys().map(String::as_str).collect();
    k.sort_unstable();
    k
}

fn sorted(mut v: Vec<&str>) -> Vec<&str> {
    v.sort_unstable();
    v
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Shared `mansd` run at (0.82, 2.6) on the default scenario.
fn mansd_report() -> &'static (tempfile::TempDir, PathBuf, Value) {
    static CELL: OnceLock<(tempfile::TempDir, PathBuf, Value)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("mansd.json");
        let o = platoon(&["mansd", "--scenario", DEFAULT_SCENARIO, "--kp", "0.82", "--kd", "2.6", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        (dir, out, v)
    })
}

const SMALL: &str = "[platoon]\nh = 0.7\ntau_d = 0.1\nTs = 0.05\nm = 3\n\
[tuning]\nn_k1 = 3\nn_k2 = 2\ndelta_grid = [0.5, 2.0, 7.943282347242821]\nDelta_max = 6\nepsilon = 0.01\ntol_feas = 1e-7\n\
[sim]\nt_end = 3.0\nsubsteps = 10\nv0 = 15.0\nr = 2.0\nL = 4.5\n";

#[test]
fn gain_locus_csv() {
    let o = platoon(&["gain-locus", "--scenario", DEFAULT_SCENARIO]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("branch,kp,kd,dominant_real_part,min_damping"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 175);
    assert_eq!(rows.iter().filter(|r| r[0] == "C1").count(), 162);
    assert_eq!(rows.iter().filter(|r| r[0] == "C2").count(), 13);
    for r in &rows {
        let dom: f64 = r[3].parse().unwrap();
        let zeta: f64 = r[4].parse().unwrap();
        assert!((dom + 0.367).abs() < 1e-6, "{r:?}");
        assert!(zeta >= 0.7 - 1e-6, "{r:?}");
    }

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("locus.csv");
    let o = platoon(&["gain-locus", "--scenario", DEFAULT_SCENARIO, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn empty_locus_reports_conditions() {
    let mut sc = Scenario::from_toml(SMALL).unwrap();
    sc.spec.lambda_m = -4.0;
    let o = commands::gain_locus(&sc, None).unwrap();
    assert_eq!(o.code, 1);
    assert!(o.stdout.is_empty());
    assert!(o.stderr.contains("-1/(3 tau_d)"), "{}", o.stderr);
}

#[test]
fn mansd_report_schema() {
    let (_, _, v) = mansd_report();
    assert_eq!(
        keys(v),
        sorted(vec![
            "status", "kp", "kd", "Delta", "delta_star", "theta", "margin", "certificate", "verification",
            "solver_calls", "capped", "anomalies",
        ])
    );
    assert_eq!(keys(&v["certificate"]), sorted(vec!["P1", "p2", "delta", "theta", "Delta"]));
    let verification = keys(&v["verification"]);
    for k in ["lambda_max_M0", "lambda_max_Mend", "passed", "reasons"] {
        assert!(verification.contains(&k), "{k}");
    }
    assert_eq!(v["status"], "certified");
    assert_eq!(v["Delta"], 5);
    assert_eq!(v["certificate"]["P1"].as_array().unwrap().len(), 16);
    assert_eq!(v["verification"]["passed"], true);
}

#[test]
fn verify_round_trip_and_mutations() {
    let (dir, out, v) = mansd_report();
    let o = platoon(&["verify", out.to_str().unwrap(), "--scenario", DEFAULT_SCENARIO]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["passed"], true);
    assert_eq!(r["lambda_max_M0"], v["verification"]["lambda_max_M0"]);

    let mut bad = v.clone();
    bad["certificate"]["p2"] = Value::from(-1.0);
    let p = write(dir.path(), "bad_p2.json", &serde_json::to_string(&bad).unwrap());
    let o = platoon(&["verify", p.to_str().unwrap(), "--scenario", DEFAULT_SCENARIO]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("p2 positivity"), "{}", stderr(&o));

    let o = platoon(&["verify", out.to_str().unwrap(), "--scenario", DEFAULT_SCENARIO, "--mansd", "8"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("M((Delta+1)Ts)"), "{}", stderr(&o));

    let p = write(dir.path(), "broken.json", "{\n  \"kp\": 0.82,\n  \"certificate\": {\"P1\": [1, 2,]\n}\n");
    let o = platoon(&["verify", p.to_str().unwrap(), "--scenario", DEFAULT_SCENARIO]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let p = write(dir.path(), "field.json", "{\"kp\": 0.82, \"kd\": 2.6, \"certificate\": {\"P1\": [], \"p2\": 1.0}}");
    let o = platoon(&["verify", p.to_str().unwrap(), "--scenario", DEFAULT_SCENARIO]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("delta"), "{}", stderr(&o));
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "bad.toml", &format!("{SMALL}[attack]\nkind = \"none\"\nDelta = 0\nbogus = 1\n"));
    let o = platoon(&["mansd", "--scenario", sc.to_str().unwrap(), "--kp", "0.2", "--kd", "0.7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let o = platoon(&["mansd", "--scenario", DEFAULT_SCENARIO, "--kp", "0.2"]);
    assert_eq!(o.status.code(), Some(2));

    let o = platoon(&["mansd", "--scenario", "/nonexistent/scenario.toml", "--kp", "0.2", "--kd", "0.7"]);
    assert_eq!(o.status.code(), Some(2));

    let o = platoon(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = platoon(&["tune", "--scenario", DEFAULT_SCENARIO, "--jobs", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.toml", &format!("{SMALL}[attack]\nkind = \"random\"\nDelta = 2\nseed = 4\n"));
    let out = dir.path().join("trace.csv");
    let o = platoon(&["simulate", "--scenario", sc.to_str().unwrap(), "--kp", "0.82", "--kd", "2.6", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let trace = std::fs::read_to_string(&out).unwrap();
    let header = trace.lines().next().unwrap();
    let mut expected = String::from("t");
    for i in 0..=3 {
        expected.push_str(&format!(",q_{i},v_{i},a_{i},u_{i},e_{i},omega_{i}"));
    }
    assert_eq!(header, expected);
    assert!(trace.lines().skip(1).all(|l| l.split(',').count() == 25));

    let events = std::fs::read_to_string(dir.path().join("trace_events.csv")).unwrap();
    assert_eq!(events.lines().next(), Some("t,link,delivered"));
    // 60 transmissions per link over 3 s at Ts = 0.05
    assert_eq!(events.lines().count() - 1, 3 * 60);
    assert!(events.lines().skip(1).all(|l| l.ends_with(",0") || l.ends_with(",1")));

    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace_metrics.json")).unwrap()).unwrap();
    assert_eq!(
        keys(&m),
        sorted(vec!["kp", "kd", "attack", "l2_ratio", "max_overshoot", "final_abs_error", "spacing_consistency"])
    );
    assert_eq!(m["l2_ratio"].as_array().unwrap().len(), 3);
    assert_eq!(m["attack"]["seed"], 4);

    let o = platoon(&[
        "simulate", "--scenario", sc.to_str().unwrap(), "--kp", "0.82", "--kd", "2.6", "--seed", "9", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace_metrics.json")).unwrap()).unwrap();
    assert_eq!(m["attack"]["seed"], 9);
}

#[test]
fn equilibrium_trace_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "eq.toml", &format!("{SMALL}[leader]\nsegments = [[0.0, 0.0]]\n"));
    let out = dir.path().join("eq.csv");
    let o = platoon(&["simulate", "--scenario", sc.to_str().unwrap(), "--kp", "0.82", "--kd", "2.6", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = std::fs::read_to_string(&out).unwrap();
    let mut lines = trace.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let cols: Vec<usize> = (0..header.len()).filter(|&j| header[j].starts_with("e_") || header[j].starts_with("omega_")).collect();
    assert_eq!(cols.len(), 8);
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        for &j in &cols {
            assert_eq!(f[j], "0", "{} in {l}", header[j]);
        }
    }
}

#[test]
fn failed_commands_leave_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "viol.toml",
        "[platoon]\nh = 0.7\ntau_d = 0.1\nTs = 0.05\nm = 1\n[attack]\nkind = \"none\"\nDelta = 1\nexplicit_drops = [[3, 4]]\n",
    );
    let out = dir.path().join("trace.csv");
    let o = platoon(&["simulate", "--scenario", sc.to_str().unwrap(), "--kp", "0.82", "--kd", "2.6", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("consecutive drops"), "{}", stderr(&o));
    let names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(names, vec!["viol.toml".to_string()]);

    let missing = dir.path().join("no_such_dir").join("trace.csv");
    let o = platoon(&["simulate", "--scenario", DEFAULT_SCENARIO, "--kp", "0.82", "--kd", "2.6", "--out", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tune_report_and_locus_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "t.toml", SMALL);
    let run = |name: &str| {
        let out = dir.path().join(format!("{name}.json"));
        let locus = dir.path().join(format!("{name}_locus.csv"));
        let o = platoon(&[
            "tune", "--scenario", sc.to_str().unwrap(), "--jobs", "2", "--out", out.to_str().unwrap(), "--locus-out",
            locus.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        (v, std::fs::read_to_string(locus).unwrap())
    };
    let (a, locus_a) = run("a");
    let (b, locus_b) = run("b");
    assert_eq!(
        keys(&a),
        sorted(vec![
            "kp", "kd", "Delta", "branch", "delta_star", "theta", "certificate", "verification", "locus_table",
            "timing", "solver_calls", "solver_call_budget", "anomalies",
        ])
    );
    assert_eq!(keys(&a["timing"]), sorted(vec!["stage1_c1_s", "stage2_c2_s", "selection_s", "total_s"]));
    assert_eq!(a["locus_table"].as_array().unwrap().len(), 5);
    assert!(a["solver_calls"].as_u64().unwrap() <= a["solver_call_budget"].as_u64().unwrap());
    assert_eq!(locus_a.lines().next(), Some("branch,kp,kd,Delta,delta_star"));
    assert_eq!(locus_a.lines().count(), 6);

    for k in ["kp", "kd", "Delta", "branch", "delta_star", "certificate", "locus_table", "solver_calls"] {
        assert_eq!(a[k], b[k], "{k}");
    }
    assert_eq!(locus_a, locus_b);

    // the tuned certificate verifies through the same path
    let o = platoon(&["verify", dir.path().join("a.json").to_str().unwrap(), "--scenario", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
