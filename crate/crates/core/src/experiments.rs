//! Monte-Carlo studies and the single-scenario report.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::admission::{deflate, AdmissionOptions, AdmissionResult, Mode, Stage, BUDGET_TOL, SINR_TOL};
use crate::bcd::BcdSettings;
use crate::error::{JacobError, Result};
use crate::jacob::{cobf_feasible, Feasibility, JacobSettings, DEFAULT_EPS};
use crate::model::{self, Scenario};
use crate::scenario::{self, db_to_linear, LargeScaleModel, ScenarioConfig};

/// Resolved settings of a run; serialized as `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub trials: usize,
    pub seed: u64,
    pub eps: f64,
    pub mode: Mode,
    pub prescreen: bool,
    pub stop_tol: f64,
    pub max_rounds: usize,
    /// Total user counts KM for the feasibility sweep.
    pub user_counts: Vec<usize>,
    pub gammas_db: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig { users_per_cell: 5, ..ScenarioConfig::default() },
            trials: 100,
            seed: 0,
            eps: DEFAULT_EPS,
            mode: Mode::Distributed,
            prescreen: true,
            stop_tol: 1e-2,
            max_rounds: 200,
            user_counts: vec![3, 9, 15, 21, 27],
            gammas_db: vec![6.0, 12.0, 20.0],
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| JacobError::parse(line, key, format!("cannot parse '{value}'")))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| parse_value(line, key, v))
        .collect()
}

impl RunConfig {
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let sc = &self.scenario;
        let mut out = vec![
            ("num_bs", sc.num_bs.to_string()),
            ("antennas", sc.antennas.to_string()),
            ("users_per_cell", sc.users_per_cell.to_string()),
            ("bs_spacing_km", sc.bs_spacing_km.to_string()),
            ("min_user_distance_km", sc.min_user_distance_km.to_string()),
            ("noise_dbm", sc.noise_dbm.to_string()),
            ("rx_antenna_gain_dbi", sc.rx_antenna_gain_dbi.to_string()),
            ("tx_antenna_gain_dbi", sc.tx_antenna_gain_dbi.to_string()),
            ("budget_dbm", sc.budget_dbm.to_string()),
            ("threshold_db", sc.threshold_db.to_string()),
        ];
        match sc.large_scale {
            LargeScaleModel::Cellular { intercept_db, slope_db, shadowing_std_db } => {
                out.push(("large_scale", "cellular".into()));
                out.push(("pathloss_intercept_db", intercept_db.to_string()));
                out.push(("pathloss_slope_db", slope_db.to_string()));
                out.push(("shadowing_std_db", shadowing_std_db.to_string()));
            }
            LargeScaleModel::Unit => out.push(("large_scale", "unit".into())),
        }
        out.extend([
            ("trials", self.trials.to_string()),
            ("seed", self.seed.to_string()),
            ("eps", format!("{:e}", self.eps)),
            ("mode", self.mode.to_string()),
            ("prescreen", self.prescreen.to_string()),
            ("stop_tol", format!("{:e}", self.stop_tol)),
            ("max_rounds", self.max_rounds.to_string()),
            ("user_counts", join(&self.user_counts)),
            ("gammas_db", join(&self.gammas_db)),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let sc = &mut self.scenario;
        let cellular = |ls: &mut LargeScaleModel| -> (f64, f64, f64) {
            match *ls {
                LargeScaleModel::Cellular { intercept_db, slope_db, shadowing_std_db } => {
                    (intercept_db, slope_db, shadowing_std_db)
                }
                LargeScaleModel::Unit => {
                    let d = LargeScaleModel::default();
                    *ls = d;
                    match d {
                        LargeScaleModel::Cellular { intercept_db, slope_db, shadowing_std_db } => {
                            (intercept_db, slope_db, shadowing_std_db)
                        }
                        LargeScaleModel::Unit => unreachable!(),
                    }
                }
            }
        };
        match key {
            "num_bs" => sc.num_bs = parse_value(line, key, value)?,
            "antennas" => sc.antennas = parse_value(line, key, value)?,
            "users_per_cell" => sc.users_per_cell = parse_value(line, key, value)?,
            "bs_spacing_km" => sc.bs_spacing_km = parse_value(line, key, value)?,
            "min_user_distance_km" => sc.min_user_distance_km = parse_value(line, key, value)?,
            "noise_dbm" => sc.noise_dbm = parse_value(line, key, value)?,
            "rx_antenna_gain_dbi" => sc.rx_antenna_gain_dbi = parse_value(line, key, value)?,
            "tx_antenna_gain_dbi" => sc.tx_antenna_gain_dbi = parse_value(line, key, value)?,
            "budget_dbm" => sc.budget_dbm = parse_value(line, key, value)?,
            "threshold_db" => sc.threshold_db = parse_value(line, key, value)?,
            "large_scale" => {
                sc.large_scale = match value.trim() {
                    "cellular" => LargeScaleModel::default(),
                    "unit" => LargeScaleModel::Unit,
                    other => return Err(JacobError::parse(line, key, format!("unknown model '{other}'"))),
                }
            }
            "pathloss_intercept_db" | "pathloss_slope_db" | "shadowing_std_db" => {
                let v: f64 = parse_value(line, key, value)?;
                let (mut a, mut b, mut c) = cellular(&mut sc.large_scale);
                match key {
                    "pathloss_intercept_db" => a = v,
                    "pathloss_slope_db" => b = v,
                    _ => c = v,
                }
                sc.large_scale = LargeScaleModel::Cellular { intercept_db: a, slope_db: b, shadowing_std_db: c };
            }
            "trials" => self.trials = parse_value(line, key, value)?,
            "seed" => self.seed = parse_value(line, key, value)?,
            "eps" => self.eps = parse_value(line, key, value)?,
            "mode" => self.mode = value.trim().parse().map_err(|_| JacobError::parse(line, key, format!("unknown mode '{value}'")))?,
            "prescreen" => self.prescreen = parse_value(line, key, value)?,
            "stop_tol" => self.stop_tol = parse_value(line, key, value)?,
            "max_rounds" => self.max_rounds = parse_value(line, key, value)?,
            "user_counts" => self.user_counts = parse_list(line, key, value)?,
            "gammas_db" => self.gammas_db = parse_list(line, key, value)?,
            _ => return Err(JacobError::parse(line, key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a `key=value` file on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| JacobError::parse(n + 1, line, "expected key=value"))?;
            self.set(k.trim(), v, n + 1)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.trials == 0 {
            return Err(JacobError::Config("trials must be at least 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(JacobError::Config("eps must be positive".into()));
        }
        if !(self.stop_tol > 0.0) || self.max_rounds == 0 {
            return Err(JacobError::Config("stop_tol and max_rounds must be positive".into()));
        }
        Ok(())
    }

    pub fn admission_options(&self, prescreen: bool) -> AdmissionOptions {
        AdmissionOptions {
            eps: self.eps,
            prescreen,
            bcd: BcdSettings { stop_tol: self.stop_tol, max_rounds: self.max_rounds, ..BcdSettings::default() },
            ..AdmissionOptions::default()
        }
    }

    /// Scenario settings for trial `t`.
    pub fn trial_config(&self, t: usize) -> ScenarioConfig {
        ScenarioConfig { rng_seed: self.seed ^ t as u64, ..self.scenario.clone() }
    }
}

/// A CSV table with the resolved configuration as comment lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub config: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(study: &str, cfg: &RunConfig, header: &[&str]) -> Self {
        let mut config = vec![("study".to_string(), study.to_string())];
        config.extend(cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
        Self { config, header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Worst certification margins of one admission result, recomputed from its
/// beamformers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Certificate {
    /// `min_q SINR_q/γ_q` over admitted users (1 when none).
    pub min_sinr_ratio: f64,
    /// `max_i P_i/P_max,i` over BSs with a positive budget (0 when none).
    pub max_budget_ratio: f64,
}

impl Certificate {
    pub fn of(r: &AdmissionResult) -> Result<Self> {
        let s = &r.scenario;
        let mut min_sinr_ratio = 1.0f64;
        for q in 0..s.num_users() {
            min_sinr_ratio = min_sinr_ratio.min(model::sinr(q, &r.beams, s)? / s.user(q).threshold);
        }
        let used = model::cell_powers(&r.beams.covariances(s.antennas()), s);
        let mut max_budget_ratio = 0.0f64;
        for (i, &p) in used.iter().enumerate() {
            let b = s.budgets()[i];
            if b > 0.0 {
                max_budget_ratio = max_budget_ratio.max(p / b);
            } else if p > 0.0 {
                max_budget_ratio = f64::INFINITY;
            }
        }
        Ok(Self { min_sinr_ratio, max_budget_ratio })
    }

    pub fn holds(&self) -> bool {
        self.min_sinr_ratio >= 1.0 - SINR_TOL && self.max_budget_ratio <= 1.0 + BUDGET_TOL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityTrial {
    pub users: usize,
    pub trial: usize,
    pub outcome: std::result::Result<Feasibility, String>,
}

#[derive(Clone, Debug)]
pub struct FeasibilityStudy {
    pub table: Table,
    pub trials: Vec<FeasibilityTrial>,
}

/// Fraction of trials in which every user can be served, per total user
/// count in `cfg.user_counts` (each must be a multiple of `num_bs`).
pub fn feasibility_sweep(cfg: &RunConfig) -> Result<FeasibilityStudy> {
    cfg.validate()?;
    let m = cfg.scenario.num_bs;
    if let Some(&bad) = cfg.user_counts.iter().find(|&&k| k % m != 0) {
        return Err(JacobError::Config(format!("user count {bad} is not a multiple of num_bs={m}")));
    }
    let mut table = Table::new(
        "feasibility",
        cfg,
        &["users", "rate", "rate_stderr", "feasible", "infeasible", "indeterminate", "failed"],
    );
    let settings = JacobSettings::with_eps(cfg.eps);
    let mut records = Vec::new();
    for &km in &cfg.user_counts {
        let outcomes: Vec<FeasibilityTrial> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let sc = ScenarioConfig { users_per_cell: km / m, ..cfg.trial_config(t) };
                let outcome = scenario::generate(&sc)
                    .and_then(|s| cobf_feasible(&s, &settings))
                    .map_err(|e| e.to_string());
                FeasibilityTrial { users: km, trial: t, outcome }
            })
            .collect();
        let count = |f: Feasibility| outcomes.iter().filter(|o| o.outcome == Ok(f)).count();
        let (feas, infeas, indet) =
            (count(Feasibility::Feasible), count(Feasibility::Infeasible), count(Feasibility::Indeterminate));
        let failed = outcomes.iter().filter(|o| o.outcome.is_err()).count();
        let decided = feas + infeas;
        let (rate, se) = if decided == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let p = feas as f64 / decided as f64;
            (p, (p * (1.0 - p) / decided as f64).sqrt())
        };
        table.rows.push(vec![km as f64, rate, se, feas as f64, infeas as f64, indet as f64, failed as f64]);
        records.extend(outcomes);
    }
    Ok(FeasibilityStudy { table, trials: records })
}

/// One deflation run inside a study.
#[derive(Clone, Debug)]
pub struct DeflationRecord {
    pub gamma_db: f64,
    pub trial: usize,
    pub label: &'static str,
    pub admitted: usize,
    pub bcd_rounds: usize,
    pub prescreen_drops: usize,
    pub certificate: Certificate,
}

fn record(gamma_db: f64, trial: usize, label: &'static str, r: &AdmissionResult) -> Result<DeflationRecord> {
    Ok(DeflationRecord {
        gamma_db,
        trial,
        label,
        admitted: r.num_admitted(),
        bcd_rounds: r.bcd_rounds,
        prescreen_drops: r.dropped(Stage::Prescreen).count(),
        certificate: Certificate::of(r)?,
    })
}

#[derive(Clone, Debug)]
pub struct DeflationStudy {
    pub table: Table,
    pub records: Vec<DeflationRecord>,
    /// `(γ in dB, trial, error)` for trials excluded after a failure.
    pub failures: Vec<(f64, usize, String)>,
}

fn trial_scenario(cfg: &RunConfig, t: usize, gamma_db: f64) -> Result<Scenario> {
    scenario::generate(&cfg.trial_config(t))?.with_thresholds(db_to_linear(gamma_db))
}

/// Runs `variants` on the same draw for each trial and γ; a trial in which
/// any variant fails is excluded from every column.
fn deflation_study(
    study: &str,
    cfg: &RunConfig,
    variants: &[(&'static str, Mode, bool)],
    metric: fn(&DeflationRecord) -> f64,
) -> Result<DeflationStudy> {
    cfg.validate()?;
    let mut header = vec!["gamma_db".to_string()];
    for (label, _, _) in variants {
        header.push(format!("{label}_mean"));
        header.push(format!("{label}_stderr"));
    }
    header.extend(["trials_used".to_string(), "failed".to_string()]);
    let mut table = Table::new(study, cfg, &[]);
    table.header = header;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &g in &cfg.gammas_db {
        let runs: Vec<std::result::Result<Vec<DeflationRecord>, String>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let s = trial_scenario(cfg, t, g).map_err(|e| e.to_string())?;
                variants
                    .iter()
                    .map(|&(label, mode, prescreen)| {
                        deflate(&s, mode, &cfg.admission_options(prescreen)).and_then(|r| record(g, t, label, &r))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.to_string())
            })
            .collect();
        let mut ok = Vec::new();
        for (t, run) in runs.into_iter().enumerate() {
            match run {
                Ok(r) => ok.push(r),
                Err(e) => failures.push((g, t, e)),
            }
        }
        let mut row = vec![g];
        for v in 0..variants.len() {
            let values: Vec<f64> = ok.iter().map(|r| metric(&r[v])).collect();
            let (mean, se) = mean_stderr(&values);
            row.extend([mean, se]);
        }
        row.extend([ok.len() as f64, (cfg.trials - ok.len()) as f64]);
        table.rows.push(row);
        records.extend(ok.into_iter().flatten());
    }
    Ok(DeflationStudy { table, records, failures })
}

/// Mean admitted users per γ, centralized and distributed on identical draws.
pub fn admitted_sweep(cfg: &RunConfig) -> Result<DeflationStudy> {
    deflation_study(
        "admitted",
        cfg,
        &[("centralized", Mode::Centralized, cfg.prescreen), ("distributed", Mode::Distributed, cfg.prescreen)],
        |r| r.admitted as f64,
    )
}

/// Mean total BCD rounds over the whole deflation, with and without
/// prescreening.
pub fn iteration_study(cfg: &RunConfig) -> Result<DeflationStudy> {
    deflation_study(
        "iterations",
        cfg,
        &[("with_prescreen", Mode::Distributed, true), ("without_prescreen", Mode::Distributed, false)],
        |r| r.bcd_rounds as f64,
    )
}

/// Runs deflation on one scenario and renders a plain-text report.
pub fn solve_report(s: &Scenario, mode: Mode, options: &AdmissionOptions) -> Result<String> {
    let r = deflate(s, mode, options)?;
    let cert = Certificate::of(&r)?;
    let mut out = String::new();
    let _ = writeln!(out, "mode={mode}");
    let _ = writeln!(out, "eps={:e}", options.eps);
    let _ = writeln!(out, "prescreen={}", options.prescreen);
    let _ = writeln!(out, "users={}", s.num_users());
    let _ = writeln!(out, "admitted={{{}}}", join(&r.admitted));
    let _ = writeln!(out, "num_admitted={}", r.num_admitted());
    let _ = writeln!(out, "\n[drops]");
    let _ = writeln!(out, "user,stage,value");
    for d in &r.drops {
        let _ = writeln!(out, "{},{},{:.6e}", d.user, d.stage, d.value);
    }
    let _ = writeln!(out, "\n[users]");
    let _ = writeln!(out, "user,cell,sinr,requested,power,rank_ratio");
    for q in 0..r.scenario.num_users() {
        let u = r.scenario.user(q);
        let _ = writeln!(
            out,
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
            u.index,
            u.cell,
            r.sinr[q],
            u.threshold,
            r.beams.power(q),
            r.rank_ratios[q]
        );
    }
    let _ = writeln!(out, "\n[cells]");
    let _ = writeln!(out, "bs,power,budget");
    let used = model::cell_powers(&r.beams.covariances(s.antennas()), &r.scenario);
    for (i, (p, b)) in used.iter().zip(s.budgets()).enumerate() {
        let _ = writeln!(out, "{i},{p:.6e},{b:.6e}");
    }
    let _ = writeln!(out, "\n[solver]");
    let _ = writeln!(out, "solves={}", r.solves);
    let _ = writeln!(out, "solver_iterations={}", r.solver_iterations);
    let _ = writeln!(out, "bcd_rounds={}", r.bcd_rounds);
    let _ = writeln!(out, "scalars_broadcast={}", r.scalars_broadcast);
    if let Some(t) = &r.last_trace {
        let _ = writeln!(out, "last_bcd_converged={}", t.converged);
        let _ = writeln!(out, "last_bcd_objective={:.6e}", t.objectives.last().copied().unwrap_or(f64::NAN));
    }
    let _ = writeln!(out, "min_sinr_ratio={:.6e}", cert.min_sinr_ratio);
    let _ = writeln!(out, "max_budget_ratio={:.6e}", cert.max_budget_ratio);
    Ok(out)
}

/// Loads a scenario file, runs deflation and writes the report to `out`.
pub fn solve_once(path: impl AsRef<Path>, mode: Mode, options: &AdmissionOptions, out: impl AsRef<Path>) -> Result<()> {
    let s = scenario::load(path)?;
    std::fs::write(out, solve_report(&s, mode, options)?)?;
    Ok(())
}
