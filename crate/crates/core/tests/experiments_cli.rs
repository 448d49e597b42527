use std::process::Command;

use jacob::admission::{AdmissionOptions, Mode};
use jacob::experiments::{self, feasibility_sweep, solve_once, RunConfig};
use jacob::model::UserRecord;
use jacob::scenario::{self, LargeScaleModel};
use jacob::{CVector, Scenario, C64};

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.trials = 4;
    c.seed = 11;
    c.scenario.antennas = 4;
    c.user_counts = vec![3, 6];
    c
}

fn report_value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing"))
}

#[test]
fn feasibility_csv_is_deterministic() {
    let a = feasibility_sweep(&small_config()).unwrap().table.to_csv();
    let b = feasibility_sweep(&small_config()).unwrap().table.to_csv();
    assert_eq!(a, b);
    assert!(a.contains("# seed=11\n"));
    assert!(a.contains("# tx_antenna_gain_dbi=15\n"));
    assert!(a.contains("users,rate,rate_stderr,"));
}

#[test]
fn single_user_always_feasible() {
    let mut c = small_config();
    c.user_counts = vec![1];
    c.scenario.num_bs = 1;
    c.scenario.large_scale = LargeScaleModel::Unit;
    c.trials = 10;
    let study = feasibility_sweep(&c).unwrap();
    assert_eq!(study.table.column("rate").unwrap(), vec![1.0]);
}

#[test]
fn tiny_threshold_admits_everyone() {
    let mut c = small_config();
    c.scenario.users_per_cell = 2;
    c.trials = 2;
    c.gammas_db = vec![-30.0];
    let study = experiments::admitted_sweep(&c).unwrap();
    assert_eq!(study.table.column("centralized_mean").unwrap(), vec![6.0]);
    assert_eq!(study.table.column("distributed_mean").unwrap(), vec![6.0]);
    assert!(study.records.iter().all(|r| r.certificate.holds()));
}

fn single_user_scenario() -> (Scenario, f64) {
    let h = CVector::from_vec(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.4)]);
    let (sigma2, gamma) = (1e-3, 4.0);
    let s = Scenario::new(
        2,
        vec![(0.0, 0.0)],
        vec![1.0],
        vec![UserRecord { index: 0, cell: 0, channels: vec![h.clone()], noise_power: sigma2, threshold: gamma }],
    )
    .unwrap();
    (s, gamma * sigma2 / h.norm_squared())
}

#[test]
fn solve_once_single_user_report() {
    let dir = tempfile::tempdir().unwrap();
    let (s, expected_power) = single_user_scenario();
    let input = dir.path().join("one.txt");
    scenario::save(&s, &input).unwrap();
    let out = dir.path().join("report.txt");
    for mode in [Mode::Centralized, Mode::Distributed] {
        solve_once(&input, mode, &AdmissionOptions::default(), &out).unwrap();
        let report = std::fs::read_to_string(&out).unwrap();
        assert_eq!(report_value(&report, "admitted"), "{0}");
        let row = report.lines().skip_while(|l| *l != "[users]").nth(2).unwrap();
        let power: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!((power - expected_power).abs() <= 1e-5 * expected_power, "{power} vs {expected_power}");
        solve_once(&input, mode, &AdmissionOptions::default(), dir.path().join("again.txt")).unwrap();
        assert_eq!(report, std::fs::read_to_string(dir.path().join("again.txt")).unwrap());
    }
}

#[test]
fn solve_once_reports_parse_location() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.txt");
    std::fs::write(&input, "jacob-scenario v1\n1 2\nbs 0 0 0 x\n").unwrap();
    let err = solve_once(&input, Mode::Centralized, &AdmissionOptions::default(), dir.path().join("r")).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jacob"))
}

#[test]
fn cli_gen_then_solve() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("s.txt");
    let status = cli()
        .args(["gen", "--seed", "5", "--users-per-cell", "1", "--out"])
        .arg(&scen)
        .status()
        .unwrap();
    assert!(status.success());
    let s = scenario::load(&scen).unwrap();
    assert_eq!(s.num_users(), 3);
    let out = cli()
        .args(["solve", "--mode", "centralized", "--gamma-db", "3"])
        .arg(&scen)
        .output()
        .unwrap();
    assert!(out.status.success());
    let report = String::from_utf8(out.stdout).unwrap();
    assert_eq!(report_value(&report, "mode"), "centralized");
}

#[test]
fn cli_config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# desk run\ntrials=2\nseed=9\nantennas=2\nlarge_scale=unit\n").unwrap();
    let out = cli()
        .args(["feasibility", "--total-users", "3", "--seed", "4", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.contains("# seed=4\n"));
    assert!(csv.contains("# trials=2\n"));
    assert!(csv.contains("# large_scale=unit\n"));
    let mut back = RunConfig::default();
    back.apply_text(&csv.lines().filter_map(|l| l.strip_prefix("# ")).filter(|l| !l.starts_with("study=")).collect::<Vec<_>>().join("\n"))
        .unwrap();
    assert_eq!(back.scenario.large_scale, LargeScaleModel::Unit);
    assert_eq!(back.seed, 4);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "trials=lots\n").unwrap();
    let out = cli().args(["admitted", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = cli().args(["feasibility", "--total-users", "4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "not a scenario\n").unwrap();
    let out = cli().arg("solve").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = cli().args(["solve", "--eps", "1e-5"]).arg(dir.path().join("missing.txt")).output().unwrap();
    assert!(!out.status.success());
}
