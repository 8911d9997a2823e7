use std::path::Path;
use std::process::{Command, Output};

use apricot::{BoundTable, GapReport, Market, RevenueReport, WorstCaseSolution};

fn apricot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apricot"))
        .args(args)
        .env_remove("APRICOT_TOL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const MARKET: &str = r#"{"k": 2, "agents": [
  {"r_star": 1.0, "q_star": 0.5},
  {"r_star": 0.3, "q_star": 0.2, "count": 10},
  {"r_star": 0.05, "q_star": 1.0, "count": 3}
]}"#;

#[test]
fn worst_case_k1_prints_opt() {
    let o = apricot(&["worst-case", "--k", "1"]);
    assert!(o.status.success(), "{o:?}");
    let line = stdout(&o);
    assert!(line.contains("OPT=2.476"), "{line}");
    assert_eq!(line.lines().count(), 1);
}

#[test]
fn worst_case_json_round_trips_and_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = apricot(&["worst-case", "--k", "2", "--grid", "40", "--format", "json", "--out", p(out)]);
        assert!(o.status.success(), "{o:?}");
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let sol: WorstCaseSolution = serde_json::from_str(&text).unwrap();
    assert_eq!(sol.table.len(), 41);
    assert!((sol.alpha - 0.5206).abs() < 1e-3);
    assert!((sol.ear_value - 2.2860).abs() < 2e-3);
    assert_eq!(serde_json::to_string_pretty(&sol).unwrap() + "\n", text);
}

#[test]
fn worst_case_csv_plot_and_market() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("wc.csv");
    let svg = dir.path().join("wc.svg");
    let market = dir.path().join("wc_market.json");
    let o = apricot(&[
        "worst-case", "--k", "1", "--grid", "20", "--out", p(&csv), "--plot", p(&svg), "--emit-market", p(&market),
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,d1,r,q"));
    assert_eq!(lines.count(), 21);
    assert!(!text.contains('\r'));
    let d1: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(d1.windows(2).all(|w| w[0] < w[1]));
    assert!(*d1.last().unwrap() > 0.99);
    let svg = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    let m: Market = serde_json::from_str(&std::fs::read_to_string(&market).unwrap()).unwrap();
    assert_eq!(m.supply(), 1);
}

#[test]
fn bound_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.json");
    let o = apricot(&["worst-case", "--table", "5", "--format", "json", "--out", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    let t: BoundTable = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(t.argmax_k, 1);
    assert!((t.max_bound - 2.4762).abs() < 2e-3);
    assert!(t.rows.iter().all(|r| r.bound >= 2.0));
    for (k, v) in [(2, 2.2860), (3, 2.1914), (4, 2.1432)] {
        assert!((t.rows[k - 1].bound - v).abs() < 2e-3);
    }
}

#[test]
fn example1_ratio_is_harmonic() {
    let o = apricot(&["example1", "--k", "1024"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("ratio=7.509"), "{}", stdout(&o));
}

#[test]
fn gap_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", MARKET);
    let out = dir.path().join("gap.json");
    let o = apricot(&["gap", "--market", p(&m), "--format", "json", "--out", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    let g: GapReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(g.market_id, "m");
    assert!(g.ap <= g.opt && g.opt <= g.ear);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", MARKET);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = apricot(&["simulate", "--market", p(&m), "--trials", "20000", "--seed", seed, "--out", p(&out)]);
        assert!(o.status.success(), "{o:?}");
        std::fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv", "7");
    assert_eq!(a, run("b.csv", "7"));
    assert_ne!(a, run("c.csv", "8"));
    assert!(a.starts_with("mechanism,revenue,stderr,price,seed\nAP,"));
    assert_eq!(a.lines().count(), 4);

    let out = dir.path().join("s.json");
    let o = apricot(&["simulate", "--market", p(&m), "--trials", "1000", "--format", "json", "--out", p(&out)]);
    assert!(o.status.success());
    let reports: Vec<RevenueReport> = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(reports[0].seed, 0xA9C0);
}

#[test]
fn order_stats_csv() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", MARKET);
    let out = dir.path().join("os.csv");
    let o = apricot(&["order-stats", "--market", p(&m), "--prices", "0.5,2", "--out", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("price,j,exact,approx,lower_bound,upper_bound\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn empty_market_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "empty.json", r#"{"k": 1, "agents": []}"#);
    let o = apricot(&["order-stats", "--market", p(&m)]);
    assert_eq!(o.status.code(), Some(2));
    let bad = write(dir.path(), "bad.json", "{not json");
    assert_eq!(apricot(&["gap", "--market", p(&bad)]).status.code(), Some(2));
}

#[test]
fn bad_tolerance_is_input_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_apricot"))
        .args(["worst-case", "--k", "2"])
        .env("APRICOT_TOL", "-1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn impossible_tolerance_is_numerical_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_apricot"))
        .args(["worst-case", "--k", "2", "--grid", "10"])
        .env("APRICOT_TOL", "1e-300")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("did not converge"));
}

#[test]
fn decompose_curve() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", r#"{"knots": [[0, 0], [0.2, 0.6], [0.5, 0.9], [1, 0.5]]}"#);
    let out = dir.path().join("m.json");
    let svg = dir.path().join("c.svg");
    let o = apricot(&["decompose", "--curve", p(&c), "--format", "json", "--out", p(&out), "--plot", p(&svg)]);
    assert!(o.status.success(), "{o:?}");
    let m: Market = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(m.agents().len(), 2);
    assert!((m.agents()[0].monopoly_value() - 3.0).abs() < 1e-12);
    assert_eq!(std::fs::read_to_string(svg).unwrap().matches("<polyline").count(), 3);
}

#[test]
fn lower_bound_emits_market() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lb.json");
    let o = apricot(&["lower-bound", "--k", "2", "--delta", "0.01", "--emit-market", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    let m: Market = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(m.agents()[0].count(), 100);
}
