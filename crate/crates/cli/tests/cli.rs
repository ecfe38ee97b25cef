//! End-to-end runs of the binary on the configs shipped in `configs/`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use toml::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn superhedge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superhedge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_report(name: &str, extra: &[&str]) -> (i32, Value, String) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.toml");
    let cfg = config(name);
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = superhedge(&args);
    let text = std::fs::read_to_string(&out).unwrap_or_default();
    let value = text.parse::<Value>().unwrap_or_else(|e| panic!("report is not TOML: {e}\n{text}"));
    (o.status.code().unwrap(), value, text)
}

struct Row {
    axis: f64,
    p: f64,
    v: f64,
    gap: f64,
    status: String,
}

fn run_sweep(name: &str, sweep: &str) -> (i32, Vec<Row>, String) {
    let cfg = config(name);
    let o = superhedge(&["--config", cfg.to_str().unwrap(), "--sweep", sweep]);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("axis,P,V,gap,status"));
    let rows = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 5, "{l}");
            for x in &f[..4] {
                // 17 significant digits, so the text is the double's round-trip form.
                let parsed: f64 = x.parse().unwrap();
                assert_eq!(&format!("{parsed:.16e}"), x);
            }
            Row {
                axis: f[0].parse().unwrap(),
                p: f[1].parse().unwrap(),
                v: f[2].parse().unwrap(),
                gap: f[3].parse().unwrap(),
                status: f[4].to_string(),
            }
        })
        .collect();
    (o.status.code().unwrap(), rows, text)
}

fn float(v: &Value, path: &str) -> f64 {
    let mut cur = v;
    for key in path.split('.') {
        cur = cur.get(key).unwrap_or_else(|| panic!("missing {path}"));
    }
    cur.as_float().unwrap_or_else(|| panic!("{path} is not a float"))
}

/// Report text with the wall-clock section removed.
fn without_timings(text: &str) -> String {
    text.split("\n[timings]").next().unwrap().to_string()
}

#[test]
fn call_market_asian_has_no_gap() {
    let (code, report, _) = run_report("asian_calls.toml", &[]);
    assert_eq!(code, 0);
    assert_eq!(report["status"].as_str(), Some("ok"));
    let p = float(&report, "duality.primal");
    let v = float(&report, "duality.dual");
    assert!((v - p).abs() <= 1e-7, "V {v} P {p}");
    assert!(float(&report, "duality.gap").abs() <= 1e-7);
    // Provenance: means, forward and bubble flags.
    let prov = &report["provenance"];
    let means: Vec<f64> = prov["means"].as_array().unwrap().iter().map(|m| m.as_float().unwrap()).collect();
    assert_eq!(means, vec![90.0, 82.5]);
    assert_eq!(prov["forward"].as_float(), Some(82.5));
    assert!(prov["bubble"].as_array().unwrap().iter().all(|b| b.as_bool() == Some(true)));
    assert_eq!(report["config_sha256"].as_str().map(str::len), Some(64));
    assert!(report.get("timings").is_some());
}

#[test]
fn put_curve_falling_in_maturity_is_arbitrage() {
    let (code, report, _) = run_report("put_arbitrage.toml", &[]);
    assert_eq!(code, 2);
    assert_eq!(report["status"].as_str(), Some("arbitrage"));
    let cert = &report["certificate"];
    assert!(cert["cost"].as_float().unwrap() <= -1e-6);
    assert!(cert["worst_payoff"].as_float().unwrap() >= -1e-9);
    assert!(cert["paths_checked"].as_integer().unwrap() > 0);
    let failed: Vec<&str> = report["conditions"]["clauses"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["holds"].as_bool() == Some(false))
        .map(|c| c["clause"].as_str().unwrap())
        .collect();
    assert_eq!(failed.len(), 1, "{failed:?}");
    assert!(failed[0].contains("nondecreasing in i"));
}

#[test]
fn empty_prediction_set_is_ill_posed() {
    let (code, report, _) = run_report("empty_prediction_set.toml", &[]);
    assert_eq!(code, 3);
    assert_eq!(report["status"].as_str(), Some("ill_posed"));
    assert!(report["message"].as_str().unwrap().contains("prediction set"));
    assert!(report.get("duality").is_none());
}

#[test]
fn config_errors_exit_3_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config("bounded_puts.toml")).unwrap();
    std::fs::write(&bad, text.replace("strike = 90.0", "strike = \"ninety\"")).unwrap();
    let o = superhedge(&["--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line") && err.contains("bad.toml"), "{err}");

    let o = superhedge(&["--config", config("bounded_puts.toml").to_str().unwrap(), "--routes", "sideways"]);
    assert_eq!(o.status.code(), Some(3));
    let o = superhedge(&["--config", config("asian_calls.toml").to_str().unwrap(), "--sweep", "N=1,10"]);
    assert_eq!(o.status.code(), Some(3));
    let o = superhedge(&["--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn reruns_are_identical_apart_from_timings() {
    let (_, _, a) = run_report("lognormal_puts.toml", &[]);
    let (_, _, b) = run_report("lognormal_puts.toml", &[]);
    assert_eq!(without_timings(&a), without_timings(&b));
    let (_, _, a) = run_sweep("forward_puts.toml", "proxy_factor=10,100,1000");
    let (_, _, b) = run_sweep("forward_puts.toml", "proxy_factor=10,100,1000");
    assert_eq!(a, b);
}

#[test]
fn forward_gap_with_puts_reaches_the_bubble() {
    let (code, rows, csv) = run_sweep("forward_puts.toml", "proxy_factor=10,100,1000");
    assert_eq!(code, 0);
    assert_eq!(rows.iter().map(|r| r.axis).collect::<Vec<_>>(), vec![10.0, 100.0, 1000.0]);
    for w in rows.windows(2) {
        assert!(w[1].gap >= w[0].gap - 1e-9, "{csv}");
        assert!(!w[1].status.contains("gap_down"));
    }
    let last = rows.last().unwrap();
    // s_0 - m = 100 - 90.
    assert!((last.gap - 10.0).abs() <= 1e-3 * 100.0, "{csv}");
    assert!((last.v - last.p - last.gap).abs() <= 1e-12);
}

#[test]
fn bounded_payoff_has_no_gap_on_any_axis() {
    let (code, rows, csv) = run_sweep("bounded_puts.toml", "proxy_factor=10,100,1000");
    assert_eq!(code, 0);
    assert!(rows.iter().all(|r| r.gap.abs() <= 1e-6 && r.status.starts_with("ok")), "{csv}");
}

#[test]
fn gamma_n_converges_on_masked_problem() {
    let (code, rows, csv) = run_sweep("masked_forward_puts.toml", "N=1,10,100");
    assert_eq!(code, 0);
    let diffs: Vec<f64> = rows.windows(2).map(|w| (w[1].gap - w[0].gap).abs()).collect();
    let slack = 1e-7 * (1.0 + rows[0].gap.abs());
    assert!(diffs.windows(2).all(|d| d[1] <= d[0] + slack), "{csv}");
    // The limit is the directly computed masked gap.
    let (_, report, _) = run_report("masked_forward_puts.toml", &[]);
    let direct = float(&report, "duality.gap");
    assert!((rows.last().unwrap().gap - direct).abs() <= 1e-3 * 100.0, "{csv} vs {direct}");
}

#[test]
fn grid_size_sweep_refines_parametric_marginals() {
    let (code, rows, csv) = run_sweep("lognormal_puts.toml", "grid_size=3,5,8");
    assert_eq!(code, 0, "{csv}");
    assert_eq!(rows.len(), 3);
    // Asian gap (1/n) sum (s_0 - m_i) with means 96 and 92.
    for r in &rows {
        assert!((r.gap - 6.0).abs() <= 1e-3 * 100.0, "{csv}");
    }
}

#[test]
fn routes_flag_selects_pricing_routes() {
    let (code, report, _) = run_report("lognormal_puts.toml", &["--routes", "beta"]);
    assert_eq!(code, 0);
    let d = &report["duality"];
    assert!(d.get("dual").is_none());
    let via_beta = float(&report, "duality.gap_via_beta");
    assert!((via_beta - 6.0).abs() <= 1e-6, "{via_beta}");
    let (code, report, _) = run_report("masked_forward_puts.toml", &["--routes", "direct"]);
    assert_eq!(code, 0);
    assert!(report["duality"].get("gamma").is_none());
}

#[test]
fn seed_drives_random_payoff_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("random.toml");
    let text = std::fs::read_to_string(config("asian_calls.toml")).unwrap();
    let text = text.replace("[payoff]\ntype = \"asian\"\nstrike = 80.0", "[random_payoff]\nlo = 0.0\nhi = 50.0");
    std::fs::write(&cfg, text).unwrap();
    let run = |seed: &str| {
        let out = dir.path().join(format!("r{seed}.toml"));
        let o = superhedge(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v: Value = std::fs::read_to_string(out).unwrap().parse().unwrap();
        (float(&v, "duality.primal"), float(&v, "duality.gap"))
    };
    let (a, gap_a) = run("1");
    let (b, _) = run("2");
    assert_eq!(run("1").0, a);
    assert_ne!(a, b);
    assert!(gap_a.abs() <= 1e-6 * (1.0 + a.abs()));
}
