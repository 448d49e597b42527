//! Random multicell drops and the `jacob-scenario v1` text format.
//!
//! Geometry: BSs on a regular ring (an equilateral triangle for M = 3) with
//! adjacent spacing `bs_spacing_km`. Users are drawn uniformly from the disk
//! of radius `1.4 · bs_spacing_km` around the ring center, rejecting points
//! closer than `min_user_distance_km` to any BS. Each cell is filled with
//! `users_per_cell` users whose nearest BS is that cell's BS.
//!
//! Channels are `h_{j,q} = √g_{j,q} · CN(0, I_N)` with the large-scale gain
//! `g` in dB equal to `−(128.1 + 37.6·log10 d_km) + shadowing + tx gain +
//! rx gain`, 8 dB lognormal shadowing, 15 dBi BS antenna gain and 5 dBi
//! receive gain by default.
//!
//! Randomness comes from `ChaCha20Rng::seed_from_u64(rng_seed)`; draws happen
//! in a fixed order (positions cell by cell, then per user and per BS: the
//! shadowing sample followed by N complex Gaussians), so a seed reproduces
//! the same scenario on every platform.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{JacobError, Result};
use crate::linalg::{CVector, C64};
use crate::model::{Scenario, UserRecord};

pub const FILE_HEADER: &str = "jacob-scenario v1";

/// Radius of the user-drop disk as a multiple of the BS spacing.
pub const COVERAGE_RADIUS_FACTOR: f64 = 1.4;

const MAX_DRAWS_PER_USER: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LargeScaleModel {
    /// `intercept + slope·log10(d_km)` path loss with lognormal shadowing.
    Cellular {
        intercept_db: f64,
        slope_db: f64,
        shadowing_std_db: f64,
    },
    /// Unit large-scale gain (small-scale fading only).
    Unit,
}

impl Default for LargeScaleModel {
    fn default() -> Self {
        LargeScaleModel::Cellular {
            intercept_db: 128.1,
            slope_db: 37.6,
            shadowing_std_db: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub num_bs: usize,
    pub antennas: usize,
    pub users_per_cell: usize,
    pub bs_spacing_km: f64,
    pub min_user_distance_km: f64,
    pub noise_dbm: f64,
    pub rx_antenna_gain_dbi: f64,
    pub tx_antenna_gain_dbi: f64,
    pub budget_dbm: f64,
    pub threshold_db: f64,
    pub large_scale: LargeScaleModel,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_bs: 3,
            antennas: 8,
            users_per_cell: 15,
            bs_spacing_km: 2.8,
            min_user_distance_km: 0.7,
            noise_dbm: -92.0,
            rx_antenna_gain_dbi: 5.0,
            tx_antenna_gain_dbi: 15.0,
            budget_dbm: 46.0,
            threshold_db: 6.0,
            large_scale: LargeScaleModel::default(),
            rng_seed: 0,
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bs == 0 {
            return Err(JacobError::Config("num_bs must be at least 1".into()));
        }
        if self.antennas == 0 {
            return Err(JacobError::Config("antennas must be at least 1".into()));
        }
        if !(self.bs_spacing_km > 0.0) || !(self.min_user_distance_km > 0.0) {
            return Err(JacobError::Config("distances must be positive".into()));
        }
        if self.min_user_distance_km >= COVERAGE_RADIUS_FACTOR * self.bs_spacing_km {
            return Err(JacobError::Config(
                "min_user_distance_km leaves no room in the coverage disk".into(),
            ));
        }
        for (name, v) in [
            ("noise_dbm", self.noise_dbm),
            ("rx_antenna_gain_dbi", self.rx_antenna_gain_dbi),
            ("tx_antenna_gain_dbi", self.tx_antenna_gain_dbi),
            ("budget_dbm", self.budget_dbm),
            ("threshold_db", self.threshold_db),
        ] {
            if !v.is_finite() {
                return Err(JacobError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn budget_watts(&self) -> f64 {
        dbm_to_watts(self.budget_dbm)
    }

    pub fn threshold_linear(&self) -> f64 {
        db_to_linear(self.threshold_db)
    }

    pub fn total_users(&self) -> usize {
        self.num_bs * self.users_per_cell
    }
}

/// BS coordinates: a ring whose adjacent vertices are `spacing` apart.
pub fn bs_layout(num_bs: usize, spacing: f64) -> Vec<(f64, f64)> {
    match num_bs {
        0 => vec![],
        1 => vec![(0.0, 0.0)],
        m => {
            let radius = spacing / (2.0 * (std::f64::consts::PI / m as f64).sin());
            (0..m)
                .map(|i| {
                    let a = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                    (radius * a.cos(), radius * a.sin())
                })
                .collect()
        }
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Index of the nearest BS (lowest index on ties).
pub fn nearest_bs(p: (f64, f64), bs: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for j in 1..bs.len() {
        if distance(p, bs[j]) < distance(p, bs[best]) {
            best = j;
        }
    }
    best
}

/// `N` i.i.d. circularly-symmetric complex Gaussians with unit variance.
pub fn small_scale_channel<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVector {
    let half = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_iterator(
        n,
        (0..n).map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * half, im * half)
        }),
    )
}

/// Generated scenario plus the user coordinates (not part of [`Scenario`]).
#[derive(Clone, Debug)]
pub struct Drop {
    pub scenario: Scenario,
    pub user_positions: Vec<(f64, f64)>,
}

pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    generate_drop(config).map(|d| d.scenario)
}

pub fn generate_drop(config: &ScenarioConfig) -> Result<Drop> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
    let bs = bs_layout(config.num_bs, config.bs_spacing_km);
    let radius = COVERAGE_RADIUS_FACTOR * config.bs_spacing_km;
    let center = (
        bs.iter().map(|p| p.0).sum::<f64>() / bs.len() as f64,
        bs.iter().map(|p| p.1).sum::<f64>() / bs.len() as f64,
    );

    let mut positions = Vec::with_capacity(config.total_users());
    let mut cells = Vec::with_capacity(config.total_users());
    for cell in 0..config.num_bs {
        for _ in 0..config.users_per_cell {
            let mut placed = None;
            for _ in 0..MAX_DRAWS_PER_USER {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                let p = (center.0 + r * theta.cos(), center.1 + r * theta.sin());
                if bs.iter().any(|&b| distance(p, b) < config.min_user_distance_km) {
                    continue;
                }
                if nearest_bs(p, &bs) == cell {
                    placed = Some(p);
                    break;
                }
            }
            let p = placed.ok_or_else(|| {
                JacobError::Config(format!("could not place a user in cell {cell}; geometry too tight"))
            })?;
            positions.push(p);
            cells.push(cell);
        }
    }

    let noise = config.noise_watts();
    let threshold = config.threshold_linear();
    let shadow = match config.large_scale {
        LargeScaleModel::Cellular { shadowing_std_db, .. } => Some(
            Normal::new(0.0, shadowing_std_db)
                .map_err(|e| JacobError::Config(format!("shadowing std: {e}")))?,
        ),
        LargeScaleModel::Unit => None,
    };
    let mut users = Vec::with_capacity(positions.len());
    for (q, (&p, &cell)) in positions.iter().zip(&cells).enumerate() {
        let channels = bs
            .iter()
            .map(|&b| {
                let gain = match (config.large_scale, &shadow) {
                    (
                        LargeScaleModel::Cellular { intercept_db, slope_db, .. },
                        Some(normal),
                    ) => {
                        let loss = intercept_db + slope_db * distance(p, b).log10();
                        let s = normal.sample(&mut rng);
                        db_to_linear(-loss + s + config.rx_antenna_gain_dbi + config.tx_antenna_gain_dbi)
                    }
                    _ => 1.0,
                };
                small_scale_channel(&mut rng, config.antennas).scale(gain.sqrt())
            })
            .collect();
        users.push(UserRecord {
            index: q,
            cell,
            channels,
            noise_power: noise,
            threshold,
        });
    }
    let budgets = vec![config.budget_watts(); config.num_bs];
    let scenario = Scenario::new(config.antennas, bs, budgets, users)?;
    Ok(Drop {
        scenario,
        user_positions: positions,
    })
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders a scenario in the `jacob-scenario v1` format.
pub fn to_text(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FILE_HEADER}");
    let _ = writeln!(out, "{} {}", s.num_bs(), s.antennas());
    for (i, (&(x, y), &p)) in s.bs_positions().iter().zip(s.budgets()).enumerate() {
        let _ = writeln!(out, "bs {i} {} {} {}", fmt_real(x), fmt_real(y), fmt_real(p));
    }
    for u in s.users() {
        let _ = writeln!(
            out,
            "user {} {} {} {}",
            u.index,
            u.cell,
            fmt_real(u.threshold),
            fmt_real(u.noise_power)
        );
        for h in &u.channels {
            let row: Vec<String> = h.iter().flat_map(|z| [fmt_real(z.re), fmt_real(z.im)]).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

pub fn save(s: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_text(s))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}

struct Line<'a> {
    number: usize,
    fields: Vec<&'a str>,
}

impl<'a> Line<'a> {
    fn field<T: std::str::FromStr>(&self, k: usize, name: &str) -> Result<T> {
        let raw = self
            .fields
            .get(k)
            .ok_or_else(|| JacobError::parse(self.number, name, "missing"))?;
        raw.parse()
            .map_err(|_| JacobError::parse(self.number, name, format!("cannot parse `{raw}`")))
    }

    fn expect_len(&self, n: usize, what: &str) -> Result<()> {
        if self.fields.len() != n {
            return Err(JacobError::parse(
                self.number,
                what,
                format!("expected {n} fields, found {}", self.fields.len()),
            ));
        }
        Ok(())
    }
}

/// Parses the `jacob-scenario v1` format. Blank lines are ignored.
pub fn parse(text: &str) -> Result<Scenario> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| Line {
            number: i + 1,
            fields: l.split_whitespace().collect(),
        })
        .filter(|l| !l.fields.is_empty())
        .peekable();

    let header = lines.next().ok_or_else(|| JacobError::parse(1, "header", "empty file"))?;
    if header.fields.join(" ") != FILE_HEADER {
        return Err(JacobError::parse(header.number, "header", format!("expected `{FILE_HEADER}`")));
    }
    let dims = lines
        .next()
        .ok_or_else(|| JacobError::parse(header.number + 1, "M N", "missing dimension line"))?;
    dims.expect_len(2, "M N")?;
    let num_bs: usize = dims.field(0, "M")?;
    let antennas: usize = dims.field(1, "N")?;
    if num_bs == 0 || antennas == 0 {
        return Err(JacobError::parse(dims.number, "M N", "dimensions must be positive"));
    }

    let mut positions = Vec::with_capacity(num_bs);
    let mut budgets = Vec::with_capacity(num_bs);
    for i in 0..num_bs {
        let line = lines
            .next()
            .ok_or_else(|| JacobError::parse(dims.number, "bs", format!("missing line for BS {i}")))?;
        if line.fields[0] != "bs" {
            return Err(JacobError::parse(line.number, "bs", format!("expected line for BS {i}")));
        }
        line.expect_len(5, "bs")?;
        let idx: usize = line.field(1, "bs index")?;
        if idx != i {
            return Err(JacobError::parse(line.number, "bs index", format!("expected {i}, found {idx}")));
        }
        positions.push((line.field(2, "x_km")?, line.field(3, "y_km")?));
        budgets.push(line.field(4, "pmax_watts")?);
    }

    let mut users = Vec::new();
    while let Some(line) = lines.next() {
        if line.fields[0] != "user" {
            return Err(JacobError::parse(line.number, "user", "expected a `user` line"));
        }
        line.expect_len(5, "user")?;
        let index: usize = line.field(1, "user index")?;
        let cell: usize = line.field(2, "cell")?;
        let threshold: f64 = line.field(3, "gamma_linear")?;
        let noise_power: f64 = line.field(4, "sigma2_watts")?;
        if cell >= num_bs {
            return Err(JacobError::parse(line.number, "cell", format!("BS {cell} does not exist")));
        }
        let mut channels = Vec::with_capacity(num_bs);
        for j in 0..num_bs {
            let row = match lines.peek() {
                Some(l) if l.fields[0] != "user" => lines.next().unwrap(),
                next => {
                    let at = next.map_or(line.number + j + 1, |l| l.number);
                    return Err(JacobError::parse(
                        at,
                        "channel",
                        format!("user {index}: expected {num_bs} channel rows, found {j}"),
                    ));
                }
            };
            if row.fields.len() != 2 * antennas {
                return Err(JacobError::parse(
                    row.number,
                    "channel",
                    format!(
                        "user {index}, BS {j}: expected {} reals, found {}",
                        2 * antennas,
                        row.fields.len()
                    ),
                ));
            }
            let mut h = CVector::zeros(antennas);
            for n in 0..antennas {
                let re: f64 = row.field(2 * n, &format!("user {index} channel re[{n}]"))?;
                let im: f64 = row.field(2 * n + 1, &format!("user {index} channel im[{n}]"))?;
                h[n] = C64::new(re, im);
            }
            channels.push(h);
        }
        users.push(UserRecord {
            index,
            cell,
            channels,
            noise_power,
            threshold,
        });
    }
    Scenario::new(antennas, positions, budgets, users)
}
