//! Radius sequences `r_n = a n^{-gamma} (log n)^beta`, their regime
//! classification, and the simulation harnesses comparing persistence
//! diagram statistics against the Monte Carlo limits.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cech::build_filtration;
use crate::cycles::{count_g, for_each_clique, sandwich_check_with_diagram};
use crate::error::{invalid, Error, Result};
use crate::format::ext_real_opt;
use crate::geometry::neighbor_graph;
use crate::limits::{estimate_ak, estimate_boundary_mass, estimate_mu, McEstimate, MIN_MASS_SAMPLES};
use crate::persistence::{compute_diagram, count_rectangle, persistent_betti, rectangle_by_betti, Rectangle};
use crate::sampling::{derive_seed, sample, Density, PointCloud, SampleSpec};

/// Exponents within this distance of zero are treated as zero.
pub const EXPONENT_TOL: f64 = 1e-12;

const TRIAL_TAG: u64 = 0x7472_6961_6c73;
const ORACLE_TAG: u64 = 0x6f72_6163_6c65;
const RERUN_TAG: u64 = 0x7265_7275_6e00;
const BOUNDARY_TAG: u64 = 0x6564_6765;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSpec {
    pub a: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl RadiusSpec {
    pub fn new(a: f64, gamma: f64, beta: f64) -> Result<Self> {
        let spec = RadiusSpec { a, gamma, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(invalid(format!("radius prefactor a must be positive, got {}", self.a)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(invalid(format!("radius exponent gamma must be positive, got {}", self.gamma)));
        }
        if !self.beta.is_finite() {
            return Err(invalid("radius log exponent beta must be finite"));
        }
        Ok(())
    }

    /// `n r_n^d -> 0`, i.e. `1 - gamma d < 0`, or `= 0` with `beta < 0`.
    pub fn is_sparse(&self, d: usize) -> bool {
        let e = 1.0 - self.gamma * d as f64;
        if e.abs() <= EXPONENT_TOL {
            self.beta < 0.0
        } else {
            e < 0.0
        }
    }

    pub fn check_sparse(&self, d: usize) -> Result<()> {
        self.validate()?;
        if self.is_sparse(d) {
            Ok(())
        } else {
            Err(Error::NotSparse)
        }
    }

    pub fn radius(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let n = n as f64;
        let r = self.a * n.powf(-self.gamma) * n.ln().powf(self.beta);
        if !(r > 0.0) || !r.is_finite() {
            return Err(invalid(format!("r_n = {r} at n = {n}; use n >= 2 when beta != 0")));
        }
        Ok(r)
    }

    /// `n^{k+2} r_n^{d(k+1)} = a^{d(k+1)} n^{k+2-gamma d(k+1)} (log n)^{beta d(k+1)}`.
    pub fn normalizer(&self, n: u64, k: usize, d: usize) -> Result<f64> {
        let (e, le) = exponents(self, k, d);
        let m = (d * (k + 1)) as i32;
        let nf = n as f64;
        let log_part = if le == 0.0 { 1.0 } else { nf.ln().powf(le) };
        let value = self.a.powi(m) * nf.powf(e) * log_part;
        if !value.is_normal() {
            return Err(Error::NormalizerUnderflow { n, value });
        }
        Ok(value)
    }
}

impl FromStr for RadiusSpec {
    type Err = Error;

    /// Parses `"a,gamma,beta"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(invalid(format!("radius must be \"a,gamma,beta\", got {s:?}")));
        }
        let num = |x: &str| x.parse::<f64>().map_err(|_| invalid(format!("bad number {x:?} in radius {s:?}")));
        RadiusSpec::new(num(parts[0])?, num(parts[1])?, num(parts[2])?)
    }
}

fn exponents(spec: &RadiusSpec, k: usize, d: usize) -> (f64, f64) {
    let m = (d * (k + 1)) as f64;
    let e = (k + 2) as f64 - spec.gamma * m;
    let e = if e.abs() <= EXPONENT_TOL { 0.0 } else { e };
    (e, spec.beta * m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    Divergence,
    Poisson { c: f64 },
    Vanishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub sparse: bool,
    /// Exponent of `n` in the normalizer.
    pub n_exponent: f64,
    /// Exponent of `log n` in the normalizer.
    pub log_exponent: f64,
    /// Largest `eta` with normalizer `= Omega((log n)^eta)`; `inf` for
    /// polynomial growth, absent outside the divergence regime.
    #[serde(with = "ext_real_opt")]
    pub omega_log_eta: Option<f64>,
}

pub fn classify(spec: &RadiusSpec, k: usize, d: usize) -> Result<RegimeReport> {
    if k < 1 || d < 1 {
        return Err(invalid("k and d must be at least 1"));
    }
    spec.check_sparse(d)?;
    let (e, le) = exponents(spec, k, d);
    let (regime, eta) = if e > 0.0 {
        (Regime::Divergence, Some(f64::INFINITY))
    } else if e < 0.0 {
        (Regime::Vanishing, None)
    } else if le > EXPONENT_TOL {
        (Regime::Divergence, Some(le))
    } else if le < -EXPONENT_TOL {
        (Regime::Vanishing, None)
    } else {
        (Regime::Poisson { c: spec.a.powi((d * (k + 1)) as i32) }, None)
    };
    Ok(RegimeReport { regime, sparse: true, n_exponent: e, log_exponent: le, omega_log_eta: eta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Divergence,
    Poisson,
    Vanishing,
    Palm,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divergence" => Ok(Mode::Divergence),
            "poisson" => Ok(Mode::Poisson),
            "vanishing" => Ok(Mode::Vanishing),
            "palm" => Ok(Mode::Palm),
            _ => Err(invalid(format!("unknown mode {s:?}"))),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k: usize,
    pub d: usize,
    pub density: Density,
    pub radius: RadiusSpec,
    /// Rectangles in scaled (radius-free) units.
    #[serde(default)]
    pub rectangles: Vec<Rectangle>,
    pub n_grid: Vec<u64>,
    /// Independent clouds per grid point (seeds, for the divergence harness).
    pub n_trials: usize,
    pub master_seed: u64,
    pub mc_samples: u64,
    #[serde(default)]
    pub poissonized: bool,
    /// `t` for the `beta(t,t)` expectation check and the Palm mean check.
    #[serde(default)]
    pub expectation_t: Option<f64>,
    /// Rectangle index pairs whose counts should be uncorrelated.
    #[serde(default)]
    pub disjoint_pairs: Vec<(usize, usize)>,
    /// One rerun with a fresh seed when only statistical checks fail.
    #[serde(default = "default_true")]
    pub allow_rerun: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(invalid("k must be at least 1"));
        }
        self.density.validate()?;
        if self.density.dim() != self.d {
            return Err(Error::ConfigMismatch(format!("d = {} but density has dimension {}", self.d, self.density.dim())));
        }
        self.radius.check_sparse(self.d)?;
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(invalid("n_grid must be non-empty with positive entries"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("n_grid must be strictly increasing"));
        }
        if self.n_trials == 0 {
            return Err(invalid("n_trials must be positive"));
        }
        if self.mc_samples < MIN_MASS_SAMPLES {
            return Err(invalid(format!("mc_samples must be at least {MIN_MASS_SAMPLES}")));
        }
        for r in &self.rectangles {
            r.validate()?;
        }
        if let Some(t) = self.expectation_t {
            if !(t > 0.0) || !t.is_finite() {
                return Err(invalid(format!("expectation_t must be positive and finite, got {t}")));
            }
        }
        for &(i, j) in &self.disjoint_pairs {
            if i >= self.rectangles.len() || j >= self.rectangles.len() || i == j {
                return Err(invalid(format!("disjoint pair ({i}, {j}) does not name two rectangles")));
            }
        }
        if self.rectangles.is_empty() && self.expectation_t.is_none() {
            return Err(invalid("config has neither rectangles nor expectation_t"));
        }
        Ok(())
    }

    /// Largest finite coordinate over all rectangles and `expectation_t`;
    /// the filtration is truncated at `r_n` times this value.
    pub fn max_coordinate(&self) -> f64 {
        self.rectangles
            .iter()
            .map(Rectangle::max_finite)
            .chain(self.expectation_t)
            .fold(0.0, f64::max)
    }
}

/// One verdict. Statistical checks use 3-SE bands or fixed tolerances on
/// random quantities; the rest are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistical: bool,
    pub pass: bool,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn exact(name: impl Into<String>, pass: bool, observed: f64, expected: f64, detail: impl Into<String>) -> Self {
        Check { name: name.into(), statistical: false, pass, observed, expected, tolerance: 0.0, detail: detail.into() }
    }

    fn statistical(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), statistical: true, pass, observed, expected, tolerance, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub rectangle: Rectangle,
    pub mu: McEstimate,
    /// Boundary shell masses at widths `BOUNDARY_EPS` and `BOUNDARY_EPS / 4`.
    pub boundary_shell: Option<(McEstimate, McEstimate)>,
}

/// Summary of one statistic over the trials at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub n: u64,
    pub radius: f64,
    pub normalizer: f64,
    pub statistic: String,
    pub rectangle: Option<usize>,
    pub trials: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    /// `mean / normalizer` and its standard error.
    pub ratio: f64,
    pub ratio_se: f64,
    pub p_ge1: f64,
    pub p_ge2: f64,
    /// `histogram[j]` = number of trials with count `j`.
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub master_seed: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub regime: RegimeReport,
    pub oracles: Vec<OracleRecord>,
    pub ak: Option<McEstimate>,
    pub records: Vec<Record>,
    pub checks: Vec<Check>,
    pub attempts: Vec<Attempt>,
    pub pass: bool,
}

impl ExperimentResult {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn record(&self, n: u64, statistic: &str, rectangle: Option<usize>) -> Option<&Record> {
        self.records.iter().find(|r| r.n == n && r.statistic == statistic && r.rectangle == rectangle)
    }
}

/// Counts read off one cloud.
#[derive(Debug, Clone, Default, PartialEq)]
struct Observation {
    xi: Vec<u64>,
    betti_tt: Option<u64>,
}

/// Computes rectangle counts and `beta(t,t)` for one cloud, asserting the
/// inclusion-exclusion identity and the sandwich bounds on the way.
fn observe(cloud: &PointCloud, cfg: &ExperimentConfig, r_n: f64, short_circuit: bool) -> Result<Observation> {
    let k = cfg.k;
    let zero = Observation { xi: vec![0; cfg.rectangles.len()], betti_tt: cfg.expectation_t.map(|_| 0) };
    if cloud.len() < k + 2 {
        return Ok(zero);
    }
    let cutoff = r_n * cfg.max_coordinate();
    if short_circuit {
        // Without a (k+2)-clique there is no candidate k-cycle; every count,
        // G and beta vanish and the bounds hold trivially.
        let graph = neighbor_graph(cloud, cutoff)?;
        let mut any = false;
        for_each_clique(&graph, k + 2, |_| any = true);
        if !any {
            return Ok(zero);
        }
    }
    let fc = build_filtration(cloud, k, cutoff)?;
    let diag = compute_diagram(&fc, k, r_n)?;
    let mut xi = Vec::with_capacity(cfg.rectangles.len());
    for rect in &cfg.rectangles {
        let direct = count_rectangle(&diag, rect)?;
        let by_betti = rectangle_by_betti(&diag, rect)?;
        if direct as i64 != by_betti {
            return Err(Error::InvariantViolation(format!(
                "rectangle {rect:?}: direct count {direct} vs inclusion-exclusion {by_betti}"
            )));
        }
        if rect.u.is_finite() && rect.t > 0.0 {
            sandwich(cloud, k, rect.t * r_n, rect.u * r_n, &diag)?;
        }
        xi.push(direct as u64);
    }
    let betti_tt = match cfg.expectation_t {
        Some(t) => {
            sandwich(cloud, k, t * r_n, t * r_n, &diag)?;
            Some(persistent_betti(&diag, t, t)? as u64)
        }
        None => None,
    };
    Ok(Observation { xi, betti_tt })
}

fn sandwich(cloud: &PointCloud, k: usize, s_phys: f64, t_phys: f64, diag: &crate::persistence::Diagram) -> Result<()> {
    let rep = sandwich_check_with_diagram(cloud, k, s_phys, t_phys, diag)?;
    if !rep.pass {
        return Err(Error::InvariantViolation(format!(
            "sandwich at ({s_phys}, {t_phys}): {} <= {} <= {} fails",
            rep.lower, rep.betti, rep.upper
        )));
    }
    Ok(())
}

fn summarize(n: u64, radius: f64, normalizer: f64, statistic: &str, rectangle: Option<usize>, counts: &[u64]) -> Record {
    let t = counts.len();
    let tf = t as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / tf;
    let variance = if t > 1 { counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (tf - 1.0) } else { 0.0 };
    let std_error = (variance / tf).sqrt();
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut histogram = vec![0u64; max + 1];
    for &c in counts {
        histogram[c as usize] += 1;
    }
    Record {
        n,
        radius,
        normalizer,
        statistic: statistic.into(),
        rectangle,
        trials: t,
        mean,
        variance,
        std_error,
        ratio: mean / normalizer,
        ratio_se: std_error / normalizer,
        p_ge1: counts.iter().filter(|&&c| c >= 1).count() as f64 / tf,
        p_ge2: counts.iter().filter(|&&c| c >= 2).count() as f64 / tf,
        histogram,
    }
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(derive_seed(seed, TRIAL_TAG), trial as u64)
}

fn oracle_seed(seed: u64, index: u64) -> u64 {
    derive_seed(derive_seed(seed, ORACLE_TAG), index)
}

/// `P(Poisson(mu) = j)`.
fn poisson_pmf(mu: f64, j: usize) -> f64 {
    let log = -mu + j as f64 * mu.ln() - statrs::function::gamma::ln_gamma(j as f64 + 1.0);
    if mu == 0.0 {
        f64::from(u8::from(j == 0))
    } else {
        log.exp()
    }
}

/// Total variation distance between an empirical pmf and `Poisson(mu)`.
pub fn tv_to_poisson(histogram: &[u64], mu: f64) -> f64 {
    let total: u64 = histogram.iter().sum();
    let mut covered = 0.0;
    let mut diff = 0.0;
    for (j, &h) in histogram.iter().enumerate() {
        let q = poisson_pmf(mu, j);
        covered += q;
        diff += (h as f64 / total as f64 - q).abs();
    }
    0.5 * (diff + (1.0 - covered).max(0.0))
}

struct Oracles {
    mu: Vec<McEstimate>,
    shells: Vec<Option<(McEstimate, McEstimate)>>,
    ak: Option<McEstimate>,
}

const BOUNDARY_EPS: f64 = 0.01;

fn compute_oracles(cfg: &ExperimentConfig) -> Result<Oracles> {
    let mu = cfg
        .rectangles
        .iter()
        .enumerate()
        .map(|(i, r)| estimate_mu(r, cfg.k, &cfg.density, cfg.mc_samples, oracle_seed(cfg.master_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let shells = cfg
        .rectangles
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if is_degenerate(r) {
                return Ok(None);
            }
            let seed = derive_seed(oracle_seed(cfg.master_seed, i as u64), BOUNDARY_TAG);
            let wide = estimate_boundary_mass(r, BOUNDARY_EPS, cfg.k, cfg.d, cfg.mc_samples, seed)?;
            let thin = estimate_boundary_mass(r, BOUNDARY_EPS / 4.0, cfg.k, cfg.d, cfg.mc_samples, seed)?;
            Ok(Some((wide, thin)))
        })
        .collect::<Result<Vec<_>>>()?;
    let ak = match cfg.expectation_t {
        Some(t) => Some(estimate_ak(t, t, cfg.k, &cfg.density, cfg.mc_samples, oracle_seed(cfg.master_seed, u64::MAX))?),
        None => None,
    };
    Ok(Oracles { mu, shells, ak })
}

fn is_degenerate(r: &Rectangle) -> bool {
    (!r.left_closed && r.s == r.t) || r.u == r.v
}

/// Runs the harness for `mode`, rerunning once with a fresh seed when only
/// statistical checks fail and the config allows it.
pub fn run(cfg: &ExperimentConfig, mode: Mode) -> Result<ExperimentResult> {
    cfg.validate()?;
    let regime = classify(&cfg.radius, cfg.k, cfg.d)?;
    match mode {
        Mode::Divergence if regime.regime != Regime::Divergence => {
            return Err(Error::ConfigMismatch(format!("divergence mode needs a divergence-regime radius, got {:?}", regime.regime)));
        }
        Mode::Poisson => match regime.regime {
            Regime::Poisson { c } if (c - 1.0).abs() <= EXPONENT_TOL => {}
            Regime::Poisson { .. } => return Err(Error::UnsupportedScaling),
            other => return Err(Error::ConfigMismatch(format!("poisson mode needs a poisson-regime radius, got {other:?}"))),
        },
        Mode::Vanishing if regime.regime != Regime::Vanishing => {
            return Err(Error::ConfigMismatch(format!("vanishing mode needs a vanishing-regime radius, got {:?}", regime.regime)));
        }
        Mode::Palm if !cfg.poissonized => {
            return Err(Error::ConfigMismatch("palm mode needs a poissonized config".into()));
        }
        Mode::Palm if cfg.expectation_t.is_none() => {
            return Err(Error::ConfigMismatch("palm mode needs expectation_t".into()));
        }
        _ => {}
    }
    if mode != Mode::Palm && mode != Mode::Divergence && cfg.rectangles.is_empty() {
        return Err(Error::ConfigMismatch(format!("{mode:?} mode needs at least one rectangle")));
    }
    // Normalizers are checked up front so underflow is reported before any
    // simulation.
    for &n in &cfg.n_grid {
        cfg.radius.normalizer(n, cfg.k, cfg.d)?;
    }

    let oracles = compute_oracles(cfg)?;
    let mut attempts = Vec::new();
    let mut seed = cfg.master_seed;
    loop {
        let (records, checks) = run_attempt(cfg, mode, &oracles, seed)?;
        let pass = checks.iter().all(|c| c.pass);
        attempts.push(Attempt { master_seed: seed, pass });
        let only_statistical = checks.iter().filter(|c| !c.pass).all(|c| c.statistical);
        if pass || !only_statistical || !cfg.allow_rerun || attempts.len() == 2 {
            return Ok(ExperimentResult {
                mode,
                config: cfg.clone(),
                regime,
                oracles: cfg
                    .rectangles
                    .iter()
                    .zip(&oracles.mu)
                    .zip(&oracles.shells)
                    .map(|((r, m), b)| OracleRecord { rectangle: *r, mu: *m, boundary_shell: *b })
                    .collect(),
                ak: oracles.ak,
                records,
                checks,
                attempts,
                pass,
            });
        }
        seed = derive_seed(cfg.master_seed, RERUN_TAG);
    }
}

fn run_attempt(cfg: &ExperimentConfig, mode: Mode, oracles: &Oracles, seed: u64) -> Result<(Vec<Record>, Vec<Check>)> {
    let mut checks = oracle_checks(cfg, mode, oracles);
    let mut records = Vec::new();
    match mode {
        Mode::Divergence => divergence(cfg, oracles, seed, &mut records, &mut checks)?,
        Mode::Poisson => poisson_mode(cfg, oracles, seed, &mut records, &mut checks)?,
        Mode::Vanishing => vanishing(cfg, oracles, seed, &mut records, &mut checks)?,
        Mode::Palm => palm(cfg, oracles, seed, &mut records, &mut checks)?,
    }
    Ok((records, checks))
}

/// Rectangles must be resolved by the oracle (mass at least 5 SE) before
/// simulated counts are compared against it.
fn oracle_checks(cfg: &ExperimentConfig, mode: Mode, oracles: &Oracles) -> Vec<Check> {
    let mut checks = Vec::new();
    for (i, (r, mu)) in cfg.rectangles.iter().zip(&oracles.mu).enumerate() {
        if is_degenerate(r) {
            continue;
        }
        checks.push(Check::exact(
            format!("oracle_resolved[{i}]"),
            mu.value >= 5.0 * mu.std_error && mu.value > 0.0,
            mu.value,
            5.0 * mu.std_error,
            "oracle mass must be at least 5 standard errors",
        ));
        if let Some((wide, thin)) = oracles.shells[i] {
            // Without boundary atoms the shell mass shrinks linearly in its width.
            let bound = 0.5 * wide.value + 3.0 * (thin.std_error.powi(2) + (0.5 * wide.std_error).powi(2)).sqrt();
            checks.push(Check::statistical(
                format!("boundary_mass[{i}]"),
                thin.value,
                0.5 * wide.value,
                bound - 0.5 * wide.value,
                thin.value <= bound,
                format!("shell mass at width {} vs {}: {} -> {}", BOUNDARY_EPS, BOUNDARY_EPS / 4.0, wide.value, thin.value),
            ));
        }
        if mode == Mode::Divergence {
            let rel = mu.relative_error();
            checks.push(Check::exact(format!("oracle_precision[{i}]"), rel <= 0.02, rel, 0.02, "oracle SE / value"));
        }
    }
    if let Some(ak) = oracles.ak {
        checks.push(Check::exact(
            "oracle_resolved[ak]",
            ak.value >= 5.0 * ak.std_error && ak.value > 0.0,
            ak.value,
            5.0 * ak.std_error,
            "A_k(t,t) must be at least 5 standard errors",
        ));
    }
    checks
}

fn draw(cfg: &ExperimentConfig, n: u64, poissonized: bool, seed: u64) -> Result<PointCloud> {
    sample(&cfg.density, &SampleSpec::new(n, poissonized, seed)?)
}

fn divergence(cfg: &ExperimentConfig, oracles: &Oracles, seed: u64, records: &mut Vec<Record>, checks: &mut Vec<Check>) -> Result<()> {
    let grid = &cfg.n_grid;
    let n_max = *grid.last().expect("validated");
    // Each trial follows one sample path: the cloud at n is the first n
    // points of the cloud at n_max (Poissonized configs draw per n).
    let per_trial: Vec<Vec<Observation>> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|trial| {
            let ts = trial_seed(seed, trial);
            let full = if cfg.poissonized { None } else { Some(draw(cfg, n_max, false, ts)?) };
            grid.iter()
                .enumerate()
                .map(|(gi, &n)| {
                    let r_n = cfg.radius.radius(n)?;
                    let cloud = match &full {
                        Some(c) => c.prefix(n as usize),
                        None => draw(cfg, n, true, derive_seed(ts, gi as u64))?,
                    };
                    observe(&cloud, cfg, r_n, false)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rel_errors: Vec<Vec<f64>> = vec![Vec::new(); cfg.rectangles.len()];
    let mut normalizers = Vec::new();
    for (gi, &n) in grid.iter().enumerate() {
        let r_n = cfg.radius.radius(n)?;
        let norm = cfg.radius.normalizer(n, cfg.k, cfg.d)?;
        normalizers.push(norm);
        for (ri, rect) in cfg.rectangles.iter().enumerate() {
            let counts: Vec<u64> = per_trial.iter().map(|o| o[gi].xi[ri]).collect();
            let rec = summarize(n, r_n, norm, "xi", Some(ri), &counts);
            if is_degenerate(rect) {
                checks.push(Check::exact(format!("degenerate_zero[{ri}][n={n}]"), rec.mean == 0.0, rec.mean, 0.0, "empty rectangle"));
            } else {
                let mu = oracles.mu[ri].value;
                rel_errors[ri].push((rec.ratio - mu).abs() / mu);
            }
            records.push(rec);
        }
        if cfg.expectation_t.is_some() {
            let counts: Vec<u64> = per_trial.iter().map(|o| o[gi].betti_tt.expect("expectation_t set")).collect();
            records.push(summarize(n, r_n, norm, "betti_tt", None, &counts));
        }
    }

    let increasing = normalizers.windows(2).all(|w| w[1] > w[0]);
    checks.push(Check::exact("normalizer_increasing", increasing, f64::from(u8::from(increasing)), 1.0, "normalizer along n_grid"));

    let n_last = n_max;
    for (ri, rect) in cfg.rectangles.iter().enumerate() {
        if is_degenerate(rect) {
            continue;
        }
        let errs = &rel_errors[ri];
        let last = *errs.last().expect("non-empty grid");
        let rec = records.iter().rev().find(|r| r.n == n_last && r.rectangle == Some(ri)).expect("recorded");
        checks.push(Check::statistical(
            format!("ratio_rel_error[{ri}]"),
            rec.ratio,
            oracles.mu[ri].value,
            0.2,
            last <= 0.2,
            format!("seed-averaged xi(R)/normalizer at n = {n_last}; relative error {last}"),
        ));
        if errs.len() > 1 {
            let steps = errs.len() - 1;
            let good = errs.windows(2).filter(|w| w[1] <= w[0]).count();
            checks.push(Check::statistical(
                format!("rel_error_trend[{ri}]"),
                good as f64,
                steps as f64,
                0.0,
                good == steps,
                format!("relative errors along n_grid: {errs:?}"),
            ));
        }
    }
    if let (Some(t), Some(ak)) = (cfg.expectation_t, oracles.ak) {
        let rec = records.iter().rev().find(|r| r.n == n_last && r.statistic == "betti_tt").expect("recorded");
        let rel = (rec.ratio - ak.value).abs() / ak.value;
        checks.push(Check::statistical(
            "expectation_betti_tt",
            rec.ratio,
            ak.value,
            0.1,
            rel <= 0.1,
            format!("mean beta({t},{t}) / normalizer at n = {n_last}; relative error {rel}"),
        ));
    }
    Ok(())
}

/// Per-trial observations at a single `n`, in trial order.
fn observe_trials(cfg: &ExperimentConfig, n: u64, seed: u64, short_circuit: bool) -> Result<Vec<Observation>> {
    let r_n = cfg.radius.radius(n)?;
    (0..cfg.n_trials)
        .into_par_iter()
        .map(|trial| {
            let cloud = draw(cfg, n, cfg.poissonized, derive_seed(trial_seed(seed, trial), n))?;
            observe(&cloud, cfg, r_n, short_circuit)
        })
        .collect()
}

fn poisson_mode(cfg: &ExperimentConfig, oracles: &Oracles, seed: u64, records: &mut Vec<Record>, checks: &mut Vec<Check>) -> Result<()> {
    for &n in &cfg.n_grid {
        let r_n = cfg.radius.radius(n)?;
        let norm = cfg.radius.normalizer(n, cfg.k, cfg.d)?;
        let obs = observe_trials(cfg, n, seed, false)?;
        let trials = obs.len() as f64;
        if obs.len() < 2 {
            checks.push(Check::exact(format!("insufficient_trials[n={n}]"), false, trials, 2.0, "insufficient trials"));
        }
        for (ri, rect) in cfg.rectangles.iter().enumerate() {
            let counts: Vec<u64> = obs.iter().map(|o| o.xi[ri]).collect();
            let rec = summarize(n, r_n, norm, "xi", Some(ri), &counts);
            if is_degenerate(rect) {
                checks.push(Check::exact(format!("degenerate_zero[{ri}][n={n}]"), rec.mean == 0.0, rec.mean, 0.0, "empty rectangle"));
                records.push(rec);
                continue;
            }
            if obs.len() >= 2 {
                let mu = oracles.mu[ri];
                let expected = mu.value * norm;
                // Under the Poisson limit the count variance equals its mean.
                let var = if rec.variance > 0.0 { rec.variance } else { expected };
                let se = (var / trials + (mu.std_error * norm).powi(2)).sqrt();
                let z = (rec.mean - expected).abs() / se;
                checks.push(Check::statistical(format!("mean[{ri}][n={n}]"), rec.mean, expected, 3.0 * se, z <= 3.0, format!("z = {z}")));
                let dispersion = rec.variance / rec.mean;
                checks.push(Check::statistical(
                    format!("dispersion[{ri}][n={n}]"),
                    dispersion,
                    1.0,
                    0.3,
                    (0.7..=1.3).contains(&dispersion),
                    "variance / mean",
                ));
                let tv = tv_to_poisson(&rec.histogram, expected);
                checks.push(Check::statistical(format!("tv_poisson[{ri}][n={n}]"), tv, 0.0, 0.1, tv <= 0.1, "empirical pmf vs Poisson(mu)"));
            }
            records.push(rec);
        }
        if obs.len() >= 2 {
            for &(i, j) in &cfg.disjoint_pairs {
                let x: Vec<f64> = obs.iter().map(|o| o.xi[i] as f64).collect();
                let y: Vec<f64> = obs.iter().map(|o| o.xi[j] as f64).collect();
                let (cov, se) = covariance(&x, &y);
                let pass = if se == 0.0 { cov == 0.0 } else { cov.abs() <= 3.0 * se };
                checks.push(Check::statistical(format!("covariance[{i},{j}][n={n}]"), cov, 0.0, 3.0 * se, pass, "disjoint rectangles"));
            }
        }
    }
    Ok(())
}

/// Sample covariance and the standard error of the mean centered product.
pub fn covariance(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let cov = prods.iter().sum::<f64>() / (n - 1.0);
    let mp = prods.iter().sum::<f64>() / n;
    let var = prods.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / (n - 1.0);
    (cov, (var / n).sqrt())
}

fn vanishing(cfg: &ExperimentConfig, oracles: &Oracles, seed: u64, records: &mut Vec<Record>, checks: &mut Vec<Check>) -> Result<()> {
    for &n in &cfg.n_grid {
        let r_n = cfg.radius.radius(n)?;
        let norm = cfg.radius.normalizer(n, cfg.k, cfg.d)?;
        let obs = observe_trials(cfg, n, seed, true)?;
        let trials = obs.len() as f64;
        for (ri, rect) in cfg.rectangles.iter().enumerate() {
            let counts: Vec<u64> = obs.iter().map(|o| o.xi[ri]).collect();
            let rec = summarize(n, r_n, norm, "xi", Some(ri), &counts);
            if is_degenerate(rect) {
                checks.push(Check::exact(format!("degenerate_zero[{ri}][n={n}]"), rec.mean == 0.0, rec.mean, 0.0, "empty rectangle"));
                records.push(rec);
                continue;
            }
            let mu = oracles.mu[ri];
            let p1 = rec.p_ge1;
            // Binomial SE of the frequency; with no hits, use the oracle's
            // predicted frequency instead of a degenerate zero.
            let p_for_se = if p1 > 0.0 { p1 } else { mu.value * norm };
            let se = ((p_for_se * (1.0 - p_for_se) / trials).sqrt() / norm).hypot(mu.std_error);
            let observed = p1 / norm;
            let z = (observed - mu.value).abs() / se;
            checks.push(Check::statistical(
                format!("p_ge1_ratio[{ri}][n={n}]"),
                observed,
                mu.value,
                3.0 * se,
                z <= 3.0,
                format!("P(xi >= 1) / normalizer; z = {z}"),
            ));
            let second = if p1 > 0.0 { rec.p_ge2 / p1 } else { 0.0 };
            checks.push(Check::statistical(
                format!("p_ge2_over_p_ge1[{ri}][n={n}]"),
                second,
                0.0,
                0.1,
                second <= 0.1,
                "P(xi >= 2) / P(xi >= 1)",
            ));
            records.push(rec);
        }
    }
    Ok(())
}

fn palm(cfg: &ExperimentConfig, oracles: &Oracles, seed: u64, records: &mut Vec<Record>, checks: &mut Vec<Check>) -> Result<()> {
    let t = cfg.expectation_t.expect("checked in run");
    let ak = oracles.ak.expect("expectation_t set");
    for &n in &cfg.n_grid {
        let r_n = cfg.radius.radius(n)?;
        let norm = cfg.radius.normalizer(n, cfg.k, cfg.d)?;
        let pairs: Vec<(u64, u64)> = (0..cfg.n_trials)
            .into_par_iter()
            .map(|trial| {
                let ts = derive_seed(trial_seed(seed, trial), n);
                let poi = draw(cfg, n, true, ts)?;
                let bin = draw(cfg, n, false, derive_seed(ts, 1))?;
                observe(&poi, cfg, r_n, false)?;
                observe(&bin, cfg, r_n, false)?;
                Ok((count_g(&poi, cfg.k, t * r_n, t * r_n)?, count_g(&bin, cfg.k, t * r_n, t * r_n)?))
            })
            .collect::<Result<_>>()?;
        let poi: Vec<u64> = pairs.iter().map(|p| p.0).collect();
        let bin: Vec<u64> = pairs.iter().map(|p| p.1).collect();
        let rp = summarize(n, r_n, norm, "count_g_poissonized", None, &poi);
        let rb = summarize(n, r_n, norm, "count_g_binomial", None, &bin);
        let rel = (rp.ratio - ak.value).abs() / ak.value;
        checks.push(Check::statistical(
            format!("palm_mean[n={n}]"),
            rp.ratio,
            ak.value,
            0.1,
            rel <= 0.1,
            format!("Poissonized G({t},{t}) mean / normalizer; relative error {rel}"),
        ));
        let se = rp.std_error.hypot(rb.std_error);
        let diff = (rp.mean - rb.mean).abs();
        let pass = if se == 0.0 { diff == 0.0 } else { diff <= 3.0 * se };
        checks.push(Check::statistical(
            format!("binomial_vs_poissonized[n={n}]"),
            rb.mean,
            rp.mean,
            3.0 * se,
            pass,
            "count_G means at the same n",
        ));
        records.push(rp);
        records.push(rb);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(a: f64, gamma: f64, beta: f64) -> RadiusSpec {
        RadiusSpec::new(a, gamma, beta).unwrap()
    }

    #[test]
    fn classify_examples() {
        let p = classify(&spec(1.0, 0.75, 0.0), 1, 2).unwrap();
        assert_eq!(p.regime, Regime::Poisson { c: 1.0 });
        let d = classify(&spec(1.0, 0.6, 0.0), 1, 2).unwrap();
        assert_eq!(d.regime, Regime::Divergence);
        assert!(d.sparse);
        assert_eq!(d.omega_log_eta, Some(f64::INFINITY));
        assert_eq!(classify(&spec(1.0, 0.9, 0.0), 1, 2).unwrap().regime, Regime::Vanishing);
        assert!(matches!(classify(&spec(1.0, 0.4, 0.0), 1, 2), Err(Error::NotSparse)));
    }

    #[test]
    fn log_ties() {
        let up = classify(&spec(1.0, 0.75, 0.5), 1, 2).unwrap();
        assert_eq!(up.regime, Regime::Divergence);
        assert_eq!(up.omega_log_eta, Some(2.0));
        assert_eq!(classify(&spec(1.0, 0.75, -0.5), 1, 2).unwrap().regime, Regime::Vanishing);
        // Sparse boundary: gamma d = 1 is sparse only with beta < 0.
        assert!(spec(1.0, 0.5, -1.0).is_sparse(2));
        assert!(!spec(1.0, 0.5, 0.0).is_sparse(2));
        assert!(!spec(1.0, 0.5, 1.0).is_sparse(2));
    }

    #[test]
    fn poisson_c_scales_with_a() {
        for a in [0.5, 2.0, 3.0] {
            let r = classify(&spec(a, 0.75, 0.0), 1, 2).unwrap();
            assert_eq!(r.regime, Regime::Poisson { c: a.powi(4) });
            assert_eq!(classify(&spec(a, 0.6, 0.0), 1, 2).unwrap().regime, Regime::Divergence);
            assert_eq!(classify(&spec(a, 0.9, 0.0), 1, 2).unwrap().regime, Regime::Vanishing);
        }
    }

    #[test]
    fn normalizer_and_radius() {
        let s = spec(1.0, 0.6, 0.0);
        let v = s.normalizer(10_000, 1, 2).unwrap();
        assert!((v / 10f64.powf(2.4) - 1.0).abs() < 1e-12);
        let r = s.radius(10_000).unwrap();
        assert!((10_000f64.powi(3) * r.powi(4) / v - 1.0).abs() < 1e-9);
        assert_eq!(spec(1.0, 0.75, 0.0).normalizer(4000, 1, 2).unwrap(), 1.0);
        assert!(matches!(spec(1.0, 30.0, 0.0).normalizer(1 << 40, 1, 2), Err(Error::NormalizerUnderflow { .. })));
        assert!(spec(1.0, 0.6, 1.0).radius(1).is_err());
    }

    #[test]
    fn parse_radius() {
        assert_eq!("1,0.75,0".parse::<RadiusSpec>().unwrap(), spec(1.0, 0.75, 0.0));
        assert!("1,0.75".parse::<RadiusSpec>().is_err());
        assert!("1,x,0".parse::<RadiusSpec>().is_err());
        assert!("-1,0.75,0".parse::<RadiusSpec>().is_err());
    }

    #[test]
    fn tv_examples() {
        assert!(tv_to_poisson(&[1], 0.0) < 1e-15);
        let mu: f64 = 0.5;
        let exact = 0.5 * ((1.0 - (-mu).exp()) + (1.0 - (-mu).exp()));
        assert!((tv_to_poisson(&[10], mu) - exact).abs() < 1e-12);
    }

    #[test]
    fn covariance_examples() {
        let (c, _) = covariance(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]);
        assert!((c - 2.0).abs() < 1e-12);
        let (c, se) = covariance(&[0.0, 0.0], &[1.0, 5.0]);
        assert_eq!((c, se), (0.0, 0.0));
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            k: 1,
            d: 2,
            density: Density::uniform_cube(1.0, 2).unwrap(),
            radius: spec(1.0, 0.6, 0.0),
            rectangles: vec![Rectangle::new(0.8, 1.0, 1.02, 1.15).unwrap(), Rectangle::new(1.0, 1.0, 1.02, 1.15).unwrap()],
            n_grid: vec![200, 400],
            n_trials: 6,
            master_seed: 3,
            mc_samples: 20_000,
            poissonized: false,
            expectation_t: Some(1.0),
            disjoint_pairs: vec![],
            allow_rerun: false,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.d = 3;
        assert!(matches!(c.validate(), Err(Error::ConfigMismatch(_))));
        let mut c = small_config();
        c.n_grid = vec![400, 200];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.rectangles.push(Rectangle { s: 0.0, t: f64::INFINITY, u: f64::INFINITY, v: f64::INFINITY, left_closed: false });
        assert!(matches!(c.validate(), Err(Error::InvalidRectangle(_))));
        let mut c = small_config();
        c.radius = spec(1.0, 0.4, 0.0);
        assert!(matches!(c.validate(), Err(Error::NotSparse)));
        assert_eq!(small_config().max_coordinate(), 1.15);
    }

    #[test]
    fn config_json_round_trip() {
        let c = small_config();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn mode_preconditions() {
        let c = small_config();
        assert!(matches!(run(&c, Mode::Poisson), Err(Error::ConfigMismatch(_))));
        assert!(matches!(run(&c, Mode::Vanishing), Err(Error::ConfigMismatch(_))));
        assert!(matches!(run(&c, Mode::Palm), Err(Error::ConfigMismatch(_))));
        let mut p = small_config();
        p.radius = spec(2.0, 0.75, 0.0);
        assert!(matches!(run(&p, Mode::Poisson), Err(Error::UnsupportedScaling)));
    }

    #[test]
    fn divergence_small_run_is_deterministic_and_degenerate_is_zero() {
        let c = small_config();
        let a = run(&c, Mode::Divergence).unwrap();
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| run(&c, Mode::Divergence).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for n in [200, 400] {
            assert_eq!(a.record(n, "xi", Some(1)).unwrap().mean, 0.0);
        }
        assert!(a.checks.iter().filter(|c| c.name.starts_with("degenerate_zero")).all(|c| c.pass));
        assert_eq!(a.records.len(), 6);
    }

    #[test]
    fn single_path_prefix() {
        // Prefixes of the n_max cloud are the clouds a smaller n would see.
        let c = small_config();
        let full = draw(&c, 400, false, 9).unwrap();
        let small = draw(&c, 200, false, 9).unwrap();
        assert_eq!(full.prefix(200).points().collect::<Vec<_>>(), small.points().collect::<Vec<_>>());
    }

    #[test]
    fn insufficient_trials() {
        let mut c = small_config();
        c.radius = spec(1.0, 0.75, 0.0);
        c.n_trials = 1;
        c.n_grid = vec![100];
        let r = run(&c, Mode::Poisson).unwrap();
        assert!(!r.pass);
        assert!(r.checks.iter().any(|ch| ch.detail == "insufficient trials" && !ch.pass));
    }

    #[test]
    fn palm_below_k_plus_two_is_zero() {
        let mut c = small_config();
        c.poissonized = true;
        c.n_grid = vec![1];
        c.n_trials = 4;
        let r = run(&c, Mode::Palm).unwrap();
        let rec = r.record(1, "count_g_binomial", None).unwrap();
        assert_eq!(rec.mean, 0.0);
    }
}
