//! Euclidean primitives: points, minimum enclosing balls and threshold graphs.
//!
//! Every ball-intersection test in the crate reduces to a minimum enclosing
//! ball query: closed balls `B(x_j, r/2)` share a point iff the smallest ball
//! enclosing the centres has radius at most `r/2`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampling::PointCloud;

/// Largest number of points accepted by a single enclosing-ball query.
pub const MAX_POINTS: usize = 8;
/// Largest ambient dimension supported by the enclosing-ball kernel.
pub const MAX_DIM: usize = 8;

/// Relative slack used only when checking that a candidate ball contains the
/// non-support points. Support points lie on the sphere up to rounding.
const CONTAINMENT_SLACK: f64 = 1e-10;

/// A point in `R^d` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Point(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A closed ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn contains(&self, p: &[f64], rel_tol: f64) -> bool {
        let d2 = dist2(&self.center, p);
        d2.sqrt() <= self.radius * (1.0 + rel_tol) + f64::MIN_POSITIVE
    }
}

/// Squared Euclidean distance. Symmetric bit-for-bit in its arguments.
#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// Result of the fixed-size kernel: squared radius plus the winning support.
#[derive(Debug, Clone, Copy)]
struct MebCore {
    radius_sq: f64,
    center: [f64; MAX_DIM],
}

/// Exhaustive support-set scan.
///
/// For every subset of at most `d + 1` points, compute the smallest ball with
/// those points on its boundary (the circumball inside their affine hull) and
/// keep the smallest one that contains all inputs. The minimum enclosing ball
/// is always of this form, so the scan is exact up to rounding.
fn meb_core(points: &[&[f64]]) -> Result<MebCore> {
    let m = points.len();
    if m == 0 {
        return Err(Error::EmptyPointSet);
    }
    if m > MAX_POINTS {
        return Err(Error::TooManyPoints(m));
    }
    let d = points[0].len();
    if d > MAX_DIM {
        return Err(invalid(format!("dimension {d} exceeds {MAX_DIM}")));
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: p.len() });
    }
    if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::NonFinite);
    }

    let mut best: Option<MebCore> = None;
    let max_support = (d + 1).min(m);
    for mask in 1u32..(1u32 << m) {
        let q = mask.count_ones() as usize;
        if q > max_support {
            continue;
        }
        let mut support = [0usize; MAX_POINTS];
        let mut len = 0;
        for (i, slot) in (0..m).filter(|i| mask & (1 << i) != 0).zip(0..) {
            support[slot] = i;
            len += 1;
        }
        let Some(cand) = circumball(points, &support[..len], d) else {
            continue;
        };
        if let Some(b) = &best {
            if cand.radius_sq >= b.radius_sq {
                continue;
            }
        }
        let bound = cand.radius_sq.sqrt() * (1.0 + CONTAINMENT_SLACK);
        let encloses = (0..m)
            .filter(|i| mask & (1 << i) == 0)
            .all(|i| dist2(&cand.center[..d], points[i]).sqrt() <= bound);
        if encloses {
            best = Some(cand);
        }
    }
    // The diametral ball of the farthest pair always exists, so some
    // candidate encloses everything unless the input is degenerate beyond
    // repair; fall back to the bounding ball around the first point.
    Ok(best.unwrap_or_else(|| {
        let mut center = [0.0; MAX_DIM];
        center[..d].copy_from_slice(points[0]);
        let r2 = points.iter().map(|p| dist2(points[0], p)).fold(0.0, f64::max);
        MebCore { radius_sq: r2, center }
    }))
}

/// Circumball of `points[support]` within the affine hull of the support.
/// Returns `None` for affinely dependent supports.
fn circumball(points: &[&[f64]], support: &[usize], d: usize) -> Option<MebCore> {
    let p0 = points[support[0]];
    let mut center = [0.0; MAX_DIM];
    center[..d].copy_from_slice(p0);
    let q = support.len() - 1;
    if q == 0 {
        return Some(MebCore { radius_sq: 0.0, center });
    }

    let mut v = [[0.0; MAX_DIM]; MAX_POINTS];
    for (row, &idx) in v.iter_mut().zip(&support[1..]) {
        for j in 0..d {
            row[j] = points[idx][j] - p0[j];
        }
    }
    // Gram system G lambda = b with G_ij = <v_i, v_j>, b_i = |v_i|^2 / 2.
    let mut g = [[0.0; MAX_POINTS + 1]; MAX_POINTS];
    for i in 0..q {
        for j in 0..q {
            g[i][j] = dot(&v[i][..d], &v[j][..d]);
        }
        g[i][q] = 0.5 * g[i][i];
    }
    let mut b = [0.0; MAX_POINTS];
    for i in 0..q {
        b[i] = g[i][q];
    }
    let scale = (0..q).map(|i| g[i][i]).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    for col in 0..q {
        let pivot = (col..q)
            .max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs()))
            .unwrap();
        if g[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        g.swap(col, pivot);
        for row in 0..q {
            if row != col {
                let f = g[row][col] / g[col][col];
                if f != 0.0 {
                    for j in col..=q {
                        g[row][j] -= f * g[col][j];
                    }
                }
            }
        }
    }
    let mut lambda = [0.0; MAX_POINTS];
    for i in 0..q {
        lambda[i] = g[i][q] / g[i][i];
    }
    for i in 0..q {
        for j in 0..d {
            center[j] += lambda[i] * v[i][j];
        }
    }
    // |sum lambda_i v_i|^2 = lambda^T G lambda = lambda . b
    let radius_sq = (0..q).map(|i| lambda[i] * b[i]).sum::<f64>().max(0.0);
    Some(MebCore { radius_sq, center })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest closed ball containing every point.
pub fn min_enclosing_ball<P: AsRef<[f64]>>(points: &[P]) -> Result<Ball> {
    let refs: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
    let core = meb_core(&refs)?;
    let d = refs[0].len();
    Ok(Ball { center: core.center[..d].to_vec(), radius: core.radius_sq.sqrt() })
}

/// Radius of the minimum enclosing ball, without allocating.
#[inline]
pub fn meb_radius(points: &[&[f64]]) -> Result<f64> {
    meb_core(points).map(|c| c.radius_sq.sqrt())
}

/// Filtration value of a simplex: the smallest `r` at which the closed balls
/// of radius `r/2` around its vertices share a point.
pub fn simplex_value<P: AsRef<[f64]>>(points: &[P]) -> Result<f64> {
    let refs: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
    simplex_value_refs(&refs)
}

#[inline]
pub fn simplex_value_refs(points: &[&[f64]]) -> Result<f64> {
    Ok(2.0 * meb_radius(points)?)
}

/// Threshold graph: `i ~ j` iff `|x_i - x_j| <= threshold`, `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    threshold: f64,
    adjacency: Vec<Vec<u32>>,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Sorted neighbour list of `v`.
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&(b as u32)).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, nb)| {
            nb.iter().map(|&b| b as usize).filter(move |&b| b > a).map(move |b| (a, b))
        })
    }
}

/// Exact threshold graph with closed inclusion, using grid bucketing with cell
/// side equal to the threshold.
pub fn neighbor_graph(cloud: &PointCloud, threshold: f64) -> Result<NeighborGraph> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(invalid(format!("threshold must be positive and finite, got {threshold}")));
    }
    let n = cloud.len();
    let d = cloud.dim();
    let mut adjacency = vec![Vec::new(); n];
    if n < 2 {
        return Ok(NeighborGraph { threshold, adjacency });
    }

    let cell_of = |p: &[f64]| -> Vec<i64> { p.iter().map(|&c| (c / threshold).floor() as i64).collect() };
    let mut grid: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
    for i in 0..n {
        grid.entry(cell_of(cloud.point(i))).or_default().push(i as u32);
    }

    let offsets = neighbor_offsets(d);
    let mut key = vec![0i64; d];
    for i in 0..n {
        let p = cloud.point(i);
        let base = cell_of(p);
        for off in &offsets {
            for j in 0..d {
                key[j] = base[j].saturating_add(off[j]);
            }
            if let Some(bucket) = grid.get(&key) {
                for &j in bucket {
                    let j = j as usize;
                    if j != i && dist(p, cloud.point(j)) <= threshold {
                        adjacency[i].push(j as u32);
                    }
                }
            }
        }
        adjacency[i].sort_unstable();
    }
    Ok(NeighborGraph { threshold, adjacency })
}

fn neighbor_offsets(d: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::with_capacity(d)];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-1..=1).map(move |o| {
                    let mut v = prefix.clone();
                    v.push(o);
                    v
                })
            })
            .collect();
    }
    out
}
