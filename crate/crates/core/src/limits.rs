//! Monte Carlo oracles for the limiting constants: `C_k`, the masses
//! `lambda{y : (b(0,y), d(0,y)) in R}`, `mu_k(R)`, `A_k(s,t)`, and the
//! connectedness volume that controls `E[L_r]`.
//!
//! Every estimator splits its samples into fixed-size shards. Shard `i` draws
//! from `stream(seed, i)` and shard sums are combined in shard order, so the
//! reported numbers do not depend on the number of worker threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycles::{binomial, birth_death_refs};
use crate::error::{invalid, Result};
use crate::geometry::{dist, simplex_value_refs, MAX_DIM, MAX_POINTS};
use crate::persistence::Rectangle;
use crate::sampling::{stream, Density};

pub const SHARD_SIZE: u64 = 1 << 16;
/// Smallest sample count accepted by the mass estimators.
pub const MIN_MASS_SAMPLES: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        McEstimate { value, std_error: 0.0, n_samples: 0, seed: 0 }
    }

    pub fn scaled(self, c: f64) -> Self {
        McEstimate { value: self.value * c, std_error: self.std_error * c.abs(), ..self }
    }

    /// Product with an independent estimate (first-order error propagation).
    pub fn times(self, other: McEstimate) -> Self {
        let se = ((other.value * self.std_error).powi(2) + (self.value * other.std_error).powi(2)).sqrt();
        McEstimate { value: self.value * other.value, std_error: se, ..self }
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)`; infinite when both errors vanish
    /// and the values differ.
    pub fn z_distance(&self, other: &McEstimate) -> f64 {
        let diff = (self.value - other.value).abs();
        let se = self.std_error.hypot(other.std_error);
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }

    pub fn relative_error(&self) -> f64 {
        self.std_error / self.value.abs()
    }
}

/// Running sum and sum of squares of estimator terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Accumulator {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn estimate(&self, seed: u64) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        McEstimate { value: mean, std_error: (var / n).sqrt(), n_samples: self.n, seed }
    }
}

/// Runs `term` on `samples` draws split into shards and reduces in shard order.
pub fn sharded_mean<F>(samples: u64, seed: u64, term: F) -> McEstimate
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let shards = samples.div_ceil(SHARD_SIZE);
    let partial: Vec<Accumulator> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = stream(seed, shard);
            let count = SHARD_SIZE.min(samples - shard * SHARD_SIZE);
            let mut acc = Accumulator::default();
            for _ in 0..count {
                acc.push(term(&mut rng));
            }
            acc
        })
        .collect();
    let mut total = Accumulator::default();
    for p in &partial {
        total.merge(p);
    }
    total.estimate(seed)
}

/// `C_k`: exact for uniform cubes, Monte Carlo otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CkValue {
    Exact { value: f64 },
    Estimate(McEstimate),
}

impl CkValue {
    pub fn value(&self) -> f64 {
        match self {
            CkValue::Exact { value } => *value,
            CkValue::Estimate(e) => e.value,
        }
    }

    pub fn as_estimate(&self) -> McEstimate {
        match self {
            CkValue::Exact { value } => McEstimate::exact(*value),
            CkValue::Estimate(e) => *e,
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `C_k = ((k+2)!)^{-1} int f^{k+2}`.
pub fn compute_ck(density: &Density, k: usize, mc_samples: u64, seed: u64) -> Result<CkValue> {
    density.validate()?;
    let fact = factorial(k + 2);
    match *density {
        Density::UniformCube { side, d } => {
            Ok(CkValue::Exact { value: side.powf(-((d * (k + 1)) as f64)) / fact })
        }
        Density::TruncatedGaussian { .. } => {
            if mc_samples == 0 {
                return Err(invalid("mc_samples must be positive"));
            }
            // int f^{k+2} = E_f[f(X)^{k+1}]
            let single = crate::sampling::SampleSpec { n: 1, poissonized: false, seed: 0 };
            let est = sharded_mean(mc_samples, seed, |rng| {
                let spec = crate::sampling::SampleSpec { seed: rng.random(), ..single };
                let cloud = crate::sampling::sample(density, &spec).expect("validated density");
                density.pdf(cloud.point(0)).powi(k as i32 + 1)
            });
            Ok(CkValue::Estimate(est.scaled(1.0 / fact)))
        }
    }
}

/// The density-dependent constants for a fixed `(k, d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    pub k: usize,
    pub d: usize,
    pub c_k: CkValue,
    pub density: Density,
}

impl LimitConstants {
    pub fn new(density: &Density, k: usize, mc_samples: u64, seed: u64) -> Result<Self> {
        let c_k = compute_ck(density, k, mc_samples, seed)?;
        Ok(LimitConstants { k, d: density.dim(), c_k, density: density.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassMethod {
    /// Indicator of `(b, d) in R` from the closed-form birth and death.
    BdClosedForm,
    /// `H = h_t h_u - h_t h_v - h_s h_u + h_s h_v` with `h_inf = 0`.
    HProduct,
}

/// Enclosing values of one configuration: every leave-one-out subset and the
/// whole tuple. `h_r` is evaluated from these per radius.
struct Profile {
    loo: [f64; MAX_POINTS],
    m: usize,
    full: f64,
}

impl Profile {
    fn new(points: &[&[f64]]) -> Self {
        let m = points.len();
        let mut loo = [0.0; MAX_POINTS];
        let mut rest: [&[f64]; MAX_POINTS] = [&[]; MAX_POINTS];
        for (skip, slot) in loo.iter_mut().enumerate().take(m) {
            let mut len = 0;
            for (i, p) in points.iter().enumerate() {
                if i != skip {
                    rest[len] = p;
                    len += 1;
                }
            }
            *slot = simplex_value_refs(&rest[..len]).expect("kernel limits");
        }
        Profile { loo, m, full: simplex_value_refs(points).expect("kernel limits") }
    }

    /// `h_r` with `h_inf = 0`.
    fn h(&self, r: f64) -> i32 {
        if r.is_infinite() {
            return 0;
        }
        let plus = self.loo[..self.m].iter().all(|&v| v <= r);
        let minus = self.full <= r;
        i32::from(plus) - i32::from(minus)
    }
}

/// Fills `buf` with `{0, y_1, ..., y_count}` with `y` uniform on `[-half, half]^d`.
fn draw_configuration(rng: &mut impl Rng, d: usize, count: usize, half: f64, buf: &mut [[f64; MAX_DIM]; MAX_POINTS]) {
    buf[0] = [0.0; MAX_DIM];
    for row in buf.iter_mut().skip(1).take(count) {
        for c in row.iter_mut().take(d) {
            *c = half * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
}

fn check_kd(k: usize, d: usize) -> Result<()> {
    if k < 1 || k + 3 > MAX_POINTS {
        return Err(invalid(format!("k must be in 1..={}", MAX_POINTS - 3)));
    }
    if d < 1 || d > MAX_DIM {
        return Err(invalid(format!("d must be in 1..={MAX_DIM}")));
    }
    Ok(())
}

/// `lambda{y in (R^d)^{k+1} : (b(0,y), d(0,y)) in R}` by uniform sampling on
/// `[-t, t]^{d(k+1)}`. Any `y` with birth `<= t` has every `|y_i| <= t`.
pub fn estimate_mass(rect: &Rectangle, k: usize, d: usize, mc_samples: u64, seed: u64, method: MassMethod) -> Result<McEstimate> {
    rect.validate()?;
    check_kd(k, d)?;
    if mc_samples < MIN_MASS_SAMPLES {
        return Err(invalid(format!("mc_samples must be at least {MIN_MASS_SAMPLES}")));
    }
    let half = rect.t;
    let m = k + 2;
    let volume = (2.0 * half).powi((d * (k + 1)) as i32);
    if volume == 0.0 {
        return Ok(McEstimate { value: 0.0, std_error: 0.0, n_samples: mc_samples, seed });
    }
    let rect = *rect;
    let est = sharded_mean(mc_samples, seed, |rng| {
        let mut buf = [[0.0; MAX_DIM]; MAX_POINTS];
        draw_configuration(rng, d, k + 1, half, &mut buf);
        let mut pts: [&[f64]; MAX_POINTS] = [&[]; MAX_POINTS];
        for (slot, row) in pts.iter_mut().zip(buf.iter()).take(m) {
            *slot = &row[..d];
        }
        let pts = &pts[..m];
        let hit = match method {
            MassMethod::BdClosedForm => {
                let bd = birth_death_refs(pts).expect("kernel limits");
                f64::from(u8::from(bd.exists && rect.contains(bd.birth, bd.death)))
            }
            MassMethod::HProduct => {
                let p = Profile::new(pts);
                let s = if rect.left_closed { 0.0 } else { rect.s };
                let (ht, hu, hv, hs) = (p.h(rect.t), p.h(rect.u), p.h(rect.v), p.h(s));
                f64::from(ht * hu - ht * hv - hs * hu + hs * hv)
            }
        };
        volume * hit
    });
    Ok(est)
}

/// Mass of the points within sup-distance `eps` of the boundary of `rect`:
/// the inflated rectangle minus the deflated one. It vanishes with `eps`
/// unless the limit measure charges the boundary.
pub fn estimate_boundary_mass(rect: &Rectangle, eps: f64, k: usize, d: usize, mc_samples: u64, seed: u64) -> Result<McEstimate> {
    rect.validate()?;
    check_kd(k, d)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    if mc_samples < MIN_MASS_SAMPLES {
        return Err(invalid(format!("mc_samples must be at least {MIN_MASS_SAMPLES}")));
    }
    let half = rect.t + eps;
    let m = k + 2;
    let volume = (2.0 * half).powi((d * (k + 1)) as i32);
    let r = *rect;
    // Rectangle shrunk by `e` on every side (grown when `e < 0`).
    let inside = move |b: f64, dd: f64, e: f64| {
        let birth_ok = if r.left_closed { b <= r.t - e } else { r.s + e < b && b <= r.t - e };
        birth_ok && r.u + e < dd && dd <= r.v - e
    };
    Ok(sharded_mean(mc_samples, seed, |rng| {
        let mut buf = [[0.0; MAX_DIM]; MAX_POINTS];
        draw_configuration(rng, d, k + 1, half, &mut buf);
        let mut pts: [&[f64]; MAX_POINTS] = [&[]; MAX_POINTS];
        for (slot, row) in pts.iter_mut().zip(buf.iter()).take(m) {
            *slot = &row[..d];
        }
        let bd = birth_death_refs(&pts[..m]).expect("kernel limits");
        let shell = bd.exists && inside(bd.birth, bd.death, -eps) && !inside(bd.birth, bd.death, eps);
        volume * f64::from(u8::from(shell))
    }))
}

/// `mu_k(R) = C_k * mass(R)`.
pub fn estimate_mu(rect: &Rectangle, k: usize, density: &Density, mc_samples: u64, seed: u64) -> Result<McEstimate> {
    let mass = estimate_mass(rect, k, density.dim(), mc_samples, seed, MassMethod::BdClosedForm)?;
    let ck = compute_ck(density, k, mc_samples, crate::sampling::derive_seed(seed, 0xC0))?;
    Ok(mass.times(ck.as_estimate()))
}

/// `A_k(s,t) = C_k * lambda{y : h_s(0,y) h_t(0,y) = 1}`, sampled on
/// `[-s, s]^{d(k+1)}`.
pub fn estimate_ak(s: f64, t: f64, k: usize, density: &Density, mc_samples: u64, seed: u64) -> Result<McEstimate> {
    if !(s > 0.0) || !(s <= t) || !t.is_finite() {
        return Err(invalid(format!("need 0 < s <= t < inf, got s = {s}, t = {t}")));
    }
    let d = density.dim();
    check_kd(k, d)?;
    if mc_samples < MIN_MASS_SAMPLES {
        return Err(invalid(format!("mc_samples must be at least {MIN_MASS_SAMPLES}")));
    }
    let m = k + 2;
    let volume = (2.0 * s).powi((d * (k + 1)) as i32);
    let raw = sharded_mean(mc_samples, seed, |rng| {
        let mut buf = [[0.0; MAX_DIM]; MAX_POINTS];
        draw_configuration(rng, d, k + 1, s, &mut buf);
        let mut pts: [&[f64]; MAX_POINTS] = [&[]; MAX_POINTS];
        for (slot, row) in pts.iter_mut().zip(buf.iter()).take(m) {
            *slot = &row[..d];
        }
        let p = Profile::new(&pts[..m]);
        volume * f64::from(p.h(s) * p.h(t))
    });
    let ck = compute_ck(density, k, mc_samples, crate::sampling::derive_seed(seed, 0xC0))?;
    Ok(raw.times(ck.as_estimate()))
}

/// `int 1{C({0, y_1, ..., y_{k+2}}, r) connected} dy` over `(R^d)^{k+2}`,
/// sampled on `[-(k+2) r, (k+2) r]^{d(k+2)}`.
pub fn estimate_connected_volume(k: usize, d: usize, r: f64, mc_samples: u64, seed: u64) -> Result<McEstimate> {
    check_kd(k, d)?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid(format!("r must be positive, got {r}")));
    }
    if mc_samples == 0 {
        return Err(invalid("mc_samples must be positive"));
    }
    let m = k + 3;
    let half = (k + 2) as f64 * r;
    let volume = (2.0 * half).powi((d * (k + 2)) as i32);
    Ok(sharded_mean(mc_samples, seed, |rng| {
        let mut buf = [[0.0; MAX_DIM]; MAX_POINTS];
        draw_configuration(rng, d, k + 2, half, &mut buf);
        volume * f64::from(u8::from(connected(&buf[..m], d, r)))
    }))
}

fn connected(points: &[[f64; MAX_DIM]], d: usize, r: f64) -> bool {
    let m = points.len();
    let mut reached = [false; MAX_POINTS];
    let mut stack = [0usize; MAX_POINTS];
    let mut top = 1;
    reached[0] = true;
    let mut count = 1;
    while top > 0 {
        top -= 1;
        let v = stack[top];
        for u in 0..m {
            if !reached[u] && dist(&points[v][..d], &points[u][..d]) <= r {
                reached[u] = true;
                stack[top] = u;
                top += 1;
                count += 1;
            }
        }
    }
    count == m
}

/// `C(k+3, k+1)`, the multiplicity bound in the sandwich inequality.
pub fn sandwich_multiplier(k: usize) -> u64 {
    binomial(k as u64 + 3, k as u64 + 1)
}

/// A named oracle quantity whose first verified value is frozen in a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "quantity", rename_all = "snake_case")]
pub enum GoldenQuantity {
    Mass { rect: Rectangle, k: usize, d: usize, method: MassMethod },
    Mu { rect: Rectangle, k: usize, density: Density },
    Ak { s: f64, t: f64, k: usize, density: Density },
    ConnectedVolume { k: usize, d: usize, r: f64 },
    Ck { k: usize, density: Density },
}

impl GoldenQuantity {
    pub fn evaluate(&self, samples: u64, seed: u64) -> Result<McEstimate> {
        match self {
            GoldenQuantity::Mass { rect, k, d, method } => estimate_mass(rect, *k, *d, samples, seed, *method),
            GoldenQuantity::Mu { rect, k, density } => estimate_mu(rect, *k, density, samples, seed),
            GoldenQuantity::Ak { s, t, k, density } => estimate_ak(*s, *t, *k, density, samples, seed),
            GoldenQuantity::ConnectedVolume { k, d, r } => estimate_connected_volume(*k, *d, *r, samples, seed),
            GoldenQuantity::Ck { k, density } => Ok(compute_ck(density, *k, samples, seed)?.as_estimate()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub name: String,
    pub spec: GoldenQuantity,
    pub estimate: McEstimate,
}

/// The oracle constants frozen by the `goldens` workflow.
pub fn default_goldens() -> Result<Vec<(String, GoldenQuantity, u64)>> {
    let cube = Density::uniform_cube(1.0, 2)?;
    let m = 4_000_000;
    Ok(vec![
        (
            "mass_k1_d2_alive_at_1".into(),
            GoldenQuantity::Mass { rect: Rectangle::new(0.0, 1.0, 1.0, f64::INFINITY)?, k: 1, d: 2, method: MassMethod::BdClosedForm },
            m,
        ),
        ("ak_k1_d2_s1_t1".into(), GoldenQuantity::Ak { s: 1.0, t: 1.0, k: 1, density: cube.clone() }, m),
        ("connected_volume_k1_d1_r1".into(), GoldenQuantity::ConnectedVolume { k: 1, d: 1, r: 1.0 }, m),
        ("mu_divergence_rect".into(), GoldenQuantity::Mu { rect: Rectangle::new(0.8, 1.0, 1.02, 1.15)?, k: 1, density: cube.clone() }, m),
        ("mu_poisson_rect".into(), GoldenQuantity::Mu { rect: Rectangle::left_closed(1.0, 1.05, 1.15)?, k: 1, density: cube.clone() }, m),
        ("mu_vanishing_rect".into(), GoldenQuantity::Mu { rect: Rectangle::new(0.0, 1.0, 1.0, 1.2)?, k: 1, density: cube }, m),
        ("ck_k1_gaussian_d2".into(), GoldenQuantity::Ck { k: 1, density: Density::truncated_gaussian(1.0, 3.0, 2)? }, 1_000_000),
    ])
}

pub const GOLDEN_VERSION: u32 = 1;

/// Versioned on-disk form of the golden numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFixture {
    pub version: u32,
    pub records: Vec<GoldenRecord>,
}

impl GoldenFixture {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: GoldenFixture = serde_json::from_str(text)?;
        if f.version != GOLDEN_VERSION {
            return Err(invalid(format!("golden fixture version {} (expected {GOLDEN_VERSION})", f.version)));
        }
        Ok(f)
    }
}

/// Evaluates every default golden quantity.
pub fn compute_goldens(seed: u64) -> Result<Vec<GoldenRecord>> {
    default_goldens()?
        .into_iter()
        .map(|(name, spec, samples)| {
            let estimate = spec.evaluate(samples, seed)?;
            Ok(GoldenRecord { name, spec, estimate })
        })
        .collect()
}

/// Compares fresh estimates with stored ones: identical seeds must reproduce
/// within 3 combined standard errors.
pub fn check_goldens(stored: &[GoldenRecord], fresh_seed: Option<u64>) -> Result<Vec<(String, McEstimate, McEstimate, bool)>> {
    stored
        .iter()
        .map(|g| {
            let seed = fresh_seed.unwrap_or(g.estimate.seed);
            let now = g.spec.evaluate(g.estimate.n_samples.max(1), seed)?;
            let ok = now.z_distance(&g.estimate) <= 3.0;
            Ok((g.name.clone(), g.estimate, now, ok))
        })
        .collect()
}
