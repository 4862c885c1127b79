//! Small-configuration statistics: the single-cycle indicator `h_r`, its
//! monotone parts `h_r^(+)` and `h_r^(-)`, closed-form birth and death times,
//! and the subset counts `G`, isolated `G`, and `L` that sandwich the
//! persistent Betti numbers.
//!
//! Radii here are physical (unscaled) filtration values.

use serde::{Deserialize, Serialize};

use crate::cech::FilteredComplex;
use crate::error::{invalid, Error, Result};
use crate::geometry::{neighbor_graph, simplex_value_refs, NeighborGraph, MAX_POINTS};
use crate::persistence::{compute_diagram, persistent_betti, Diagram};
use crate::sampling::PointCloud;

/// Exactly `k + 2` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTuple {
    points: Vec<Vec<f64>>,
}

impl CycleTuple {
    pub fn new(k: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if k < 1 {
            return Err(invalid("k must be at least 1"));
        }
        if points.len() != k + 2 {
            return Err(invalid(format!("a k = {k} configuration needs {} points, got {}", k + 2, points.len())));
        }
        if points.len() > MAX_POINTS {
            return Err(Error::TooManyPoints(points.len()));
        }
        let d = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
        Ok(CycleTuple { points })
    }

    pub fn k(&self) -> usize {
        self.points.len() - 2
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn refs(&self) -> Vec<&[f64]> {
        self.points.iter().map(Vec::as_slice).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthDeath {
    /// Twice the largest leave-one-out enclosing radius.
    pub birth: f64,
    /// Twice the enclosing radius of the whole tuple.
    pub death: f64,
    pub exists: bool,
}

impl BirthDeath {
    /// `h_r = 1` iff `birth <= r < death`.
    #[inline]
    pub fn alive_at(&self, r: f64) -> bool {
        self.exists && self.birth <= r && r < self.death
    }
}

/// Closed-form birth and death for `k + 2` points given as slices.
#[inline]
pub fn birth_death_refs(points: &[&[f64]]) -> Result<BirthDeath> {
    let m = points.len();
    if m < 3 {
        return Err(invalid("configurations need at least 3 points"));
    }
    let death = simplex_value_refs(points)?;
    let mut birth = 0.0f64;
    let mut rest: [&[f64]; MAX_POINTS] = [&[]; MAX_POINTS];
    for skip in 0..m {
        let mut len = 0;
        for (i, p) in points.iter().enumerate() {
            if i != skip {
                rest[len] = p;
                len += 1;
            }
        }
        birth = birth.max(simplex_value_refs(&rest[..len])?);
    }
    Ok(BirthDeath { birth, death, exists: birth < death })
}

pub fn birth_death(cfg: &CycleTuple) -> BirthDeath {
    birth_death_refs(&cfg.refs()).expect("validated tuple")
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0) {
        return Err(invalid(format!("radius must be positive, got {r}")));
    }
    Ok(())
}

/// `1` iff every leave-one-out family of balls `B(x_j, r/2)` intersects.
pub fn h_plus(cfg: &CycleTuple, r: f64) -> Result<u8> {
    check_radius(r)?;
    let pts = cfg.refs();
    for skip in 0..pts.len() {
        let rest: Vec<&[f64]> = pts.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, p)| *p).collect();
        if simplex_value_refs(&rest)? > r {
            return Ok(0);
        }
    }
    Ok(1)
}

/// `1` iff the full family of balls `B(x_j, r/2)` intersects.
pub fn h_minus(cfg: &CycleTuple, r: f64) -> Result<u8> {
    check_radius(r)?;
    Ok(u8::from(simplex_value_refs(&cfg.refs())? <= r))
}

/// `h_r = h_r^(+) - h_r^(-)`: the tuple carries exactly one k-cycle at `r`.
pub fn h_indicator(cfg: &CycleTuple, r: f64) -> Result<u8> {
    Ok(h_plus(cfg, r)? - h_minus(cfg, r)?)
}

fn check_window(s_phys: f64, t_phys: f64) -> Result<()> {
    if !(s_phys > 0.0) || !(s_phys <= t_phys) || !t_phys.is_finite() {
        return Err(invalid(format!("need 0 < s <= t < inf, got s = {s_phys}, t = {t_phys}")));
    }
    Ok(())
}

/// Visits every clique of exactly `size` vertices (sorted vertex lists).
pub(crate) fn for_each_clique(graph: &NeighborGraph, size: usize, mut visit: impl FnMut(&[u32])) {
    fn grow(graph: &NeighborGraph, size: usize, clique: &mut Vec<u32>, cand: &[u32], visit: &mut dyn FnMut(&[u32])) {
        if clique.len() == size {
            visit(clique);
            return;
        }
        for (i, &u) in cand.iter().enumerate() {
            if cand.len() - i < size - clique.len() {
                break;
            }
            let next: Vec<u32> =
                cand[i + 1..].iter().copied().filter(|&w| graph.has_edge(u as usize, w as usize)).collect();
            clique.push(u);
            grow(graph, size, clique, &next, visit);
            clique.pop();
        }
    }
    if size == 0 {
        return;
    }
    let mut clique = Vec::with_capacity(size);
    for v in 0..graph.n() {
        let higher: Vec<u32> = graph.neighbors(v).iter().copied().filter(|&u| u as usize > v).collect();
        if higher.len() + 1 < size {
            continue;
        }
        clique.clear();
        clique.push(v as u32);
        grow(graph, size, &mut clique, &higher, &mut visit);
    }
}

/// Visits every connected vertex set of exactly `size` vertices once,
/// rooted at its smallest vertex (ESU enumeration).
pub(crate) fn for_each_connected_subset(graph: &NeighborGraph, size: usize, mut visit: impl FnMut(&[u32])) {
    fn extend(
        graph: &NeighborGraph,
        size: usize,
        root: u32,
        sub: &mut Vec<u32>,
        ext: Vec<u32>,
        visit: &mut dyn FnMut(&[u32]),
    ) {
        if sub.len() == size {
            visit(sub);
            return;
        }
        let mut ext = ext;
        while let Some(w) = ext.pop() {
            // Exclusive neighbours of w: larger than the root, not in the
            // subgraph and not adjacent to it.
            let mut next = ext.clone();
            for &u in graph.neighbors(w as usize) {
                if u > root
                    && !sub.contains(&u)
                    && u != w
                    && !next.contains(&u)
                    && !sub.iter().any(|&x| graph.has_edge(x as usize, u as usize))
                {
                    next.push(u);
                }
            }
            sub.push(w);
            extend(graph, size, root, sub, next, visit);
            sub.pop();
        }
    }
    if size == 0 {
        return;
    }
    let mut sub = Vec::with_capacity(size);
    for v in 0..graph.n() as u32 {
        sub.clear();
        sub.push(v);
        if size == 1 {
            visit(&sub);
            continue;
        }
        let ext: Vec<u32> = graph.neighbors(v as usize).iter().copied().filter(|&u| u > v).collect();
        extend(graph, size, v, &mut sub, ext, &mut visit);
    }
}

fn tuple_birth_death(cloud: &PointCloud, verts: &[u32]) -> BirthDeath {
    let mut pts: [&[f64]; MAX_POINTS] = [&[]; MAX_POINTS];
    for (slot, &v) in pts.iter_mut().zip(verts) {
        *slot = cloud.point(v as usize);
    }
    birth_death_refs(&pts[..verts.len()]).expect("tuple within kernel limits")
}

fn check_k(k: usize) -> Result<()> {
    if k < 1 || k + 3 > MAX_POINTS {
        return Err(invalid(format!("k must be in 1..={}, got {k}", MAX_POINTS - 3)));
    }
    Ok(())
}

/// `G(s, t)`: number of `(k+2)`-subsets with `h_s h_t = 1`, i.e. birth `<= s`
/// and death `> t`.
///
/// `h_s = 1` forces every pairwise distance below `s`, so only cliques of the
/// threshold graph at `s` are examined.
pub fn count_g(cloud: &PointCloud, k: usize, s_phys: f64, t_phys: f64) -> Result<u64> {
    check_k(k)?;
    check_window(s_phys, t_phys)?;
    if cloud.len() < k + 2 {
        return Ok(0);
    }
    let graph = neighbor_graph(cloud, s_phys)?;
    Ok(count_g_on(cloud, &graph, k, s_phys, t_phys, None))
}

/// As [`count_g`], restricted to subsets that form a connected component of
/// the threshold graph at `t`.
pub fn count_g_isolated(cloud: &PointCloud, k: usize, s_phys: f64, t_phys: f64) -> Result<u64> {
    check_k(k)?;
    check_window(s_phys, t_phys)?;
    if cloud.len() < k + 2 {
        return Ok(0);
    }
    let at_s = neighbor_graph(cloud, s_phys)?;
    let at_t = neighbor_graph(cloud, t_phys)?;
    Ok(count_g_on(cloud, &at_s, k, s_phys, t_phys, Some(&at_t)))
}

fn count_g_on(
    cloud: &PointCloud,
    at_s: &NeighborGraph,
    k: usize,
    s_phys: f64,
    t_phys: f64,
    isolation: Option<&NeighborGraph>,
) -> u64 {
    let mut count = 0;
    for_each_clique(at_s, k + 2, |verts| {
        if let Some(at_t) = isolation {
            let isolated = verts
                .iter()
                .all(|&v| at_t.neighbors(v as usize).iter().all(|u| verts.binary_search(u).is_ok()));
            if !isolated {
                return;
            }
        }
        let bd = tuple_birth_death(cloud, verts);
        if bd.exists && bd.birth <= s_phys && bd.death > t_phys {
            count += 1;
        }
    });
    count
}

/// `L_r`: number of `(k+3)`-subsets whose threshold graph at `r` is connected.
pub fn count_l(cloud: &PointCloud, k: usize, r_phys: f64) -> Result<u64> {
    check_k(k)?;
    check_radius(r_phys)?;
    if cloud.len() < k + 3 {
        return Ok(0);
    }
    let graph = neighbor_graph(cloud, r_phys)?;
    let mut count = 0;
    for_each_connected_subset(&graph, k + 3, |_| count += 1);
    Ok(count)
}

/// Outcome of checking `G_iso <= beta(s,t) <= G_iso + C(k+3, k+1) L_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub lower: u64,
    pub betti: u64,
    pub upper: u64,
    pub pass: bool,
}

pub fn binomial(n: u64, r: u64) -> u64 {
    if r > n {
        return 0;
    }
    (0..r.min(n - r)).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Checks the sandwich bounds with `beta` taken from the persistence diagram
/// of `fc` at `scale`. `s_phys = scale * s`, `t_phys = scale * t`.
pub fn sandwich_check(
    cloud: &PointCloud,
    k: usize,
    s_phys: f64,
    t_phys: f64,
    fc: &FilteredComplex,
    scale: f64,
) -> Result<SandwichReport> {
    let diag = compute_diagram(fc, k, scale)?;
    sandwich_check_with_diagram(cloud, k, s_phys, t_phys, &diag)
}

/// As [`sandwich_check`] with a precomputed diagram.
pub fn sandwich_check_with_diagram(
    cloud: &PointCloud,
    k: usize,
    s_phys: f64,
    t_phys: f64,
    diag: &Diagram,
) -> Result<SandwichReport> {
    let lower = count_g_isolated(cloud, k, s_phys, t_phys)?;
    let l = count_l(cloud, k, t_phys)?;
    let betti = persistent_betti(diag, s_phys / diag.scale, t_phys / diag.scale)? as u64;
    let upper = lower + binomial(k as u64 + 3, k as u64 + 1) * l;
    Ok(SandwichReport { lower, betti, upper, pass: lower <= betti && betti <= upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cech::build_filtration;

    const TRI: f64 = 1.1547005383792517;

    fn tri() -> CycleTuple {
        CycleTuple::new(1, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]]).unwrap()
    }

    fn obtuse() -> CycleTuple {
        CycleTuple::new(1, vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![1.0, 1.0]]).unwrap()
    }

    #[test]
    fn h_examples() {
        assert_eq!(h_indicator(&tri(), 1.05).unwrap(), 1);
        assert_eq!(h_indicator(&tri(), 0.99).unwrap(), 0);
        for r in [0.5, 1.0, 2.0, 3.0, 4.0, 4.5, 10.0] {
            assert_eq!(h_indicator(&obtuse(), r).unwrap(), 0);
        }
        assert_eq!((h_plus(&tri(), 1.2).unwrap(), h_minus(&tri(), 1.2).unwrap()), (1, 1));
        assert_eq!(h_indicator(&tri(), 1.2).unwrap(), 0);
        assert_eq!((h_plus(&tri(), 1.05).unwrap(), h_minus(&tri(), 1.05).unwrap()), (1, 0));
        assert!(h_indicator(&tri(), 0.0).is_err());
    }

    #[test]
    fn wrong_tuple_size() {
        assert!(CycleTuple::new(1, vec![vec![0.0], vec![1.0]]).is_err());
        assert!(CycleTuple::new(2, vec![vec![0.0], vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn birth_death_examples() {
        let bd = birth_death(&tri());
        assert!(bd.exists);
        assert!((bd.birth - 1.0).abs() < 1e-12 && (bd.death - TRI).abs() < 1e-12);

        let right = CycleTuple::new(1, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let bd = birth_death(&right);
        assert!(!bd.exists);
        assert!((bd.birth - 2f64.sqrt()).abs() < 1e-12 && (bd.death - 2f64.sqrt()).abs() < 1e-12);

        let s = 1.0 / 2f64.sqrt();
        let tet = CycleTuple::new(
            2,
            vec![vec![s, 0.0, 0.0], vec![0.0, s, 0.0], vec![0.0, 0.0, s], vec![s, s, s]],
        )
        .unwrap();
        let bd = birth_death(&tet);
        assert!(bd.exists);
        assert!((bd.birth - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((bd.death - 2.0 * (3.0f64 / 8.0).sqrt()).abs() < 1e-12);
    }

    fn cloud(rows: &[[f64; 2]]) -> PointCloud {
        PointCloud::from_rows(2, rows).unwrap()
    }

    fn tri_cloud() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]
    }

    #[test]
    fn count_g_examples() {
        let c = cloud(&tri_cloud());
        assert_eq!(count_g(&c, 1, 1.05, 1.05).unwrap(), 1);
        assert_eq!(count_g(&c, 1, 0.9, 1.05).unwrap(), 0);
        assert_eq!(count_g(&cloud(&[[0.0, 0.0], [1.0, 0.0]]), 1, 1.0, 1.0).unwrap(), 0);
        assert!(count_g(&c, 1, 1.2, 1.05).is_err());
    }

    #[test]
    fn count_g_isolated_examples() {
        let c = cloud(&tri_cloud());
        assert_eq!(count_g_isolated(&c, 1, 1.05, 1.05).unwrap(), count_g(&c, 1, 1.05, 1.05).unwrap());
        let mut far = tri_cloud();
        far.push([100.0, 0.0]);
        assert_eq!(count_g_isolated(&cloud(&far), 1, 1.05, 1.05).unwrap(), 1);
        let mut near = tri_cloud();
        near.push([-0.5, 0.0]);
        assert_eq!(count_g(&cloud(&near), 1, 1.05, 1.05).unwrap(), 1);
        assert_eq!(count_g_isolated(&cloud(&near), 1, 1.05, 1.05).unwrap(), 0);
    }

    #[test]
    fn count_l_examples() {
        let path = PointCloud::from_rows(1, [[0.0], [1.0], [2.0], [3.0]]).unwrap();
        assert_eq!(count_l(&path, 1, 1.0).unwrap(), 1);
        assert_eq!(count_l(&path, 1, 0.9).unwrap(), 0);
        let three = PointCloud::from_rows(1, [[0.0], [1.0], [2.0]]).unwrap();
        assert_eq!(count_l(&three, 1, 5.0).unwrap(), 0);
    }

    #[test]
    fn sandwich_examples() {
        let c = cloud(&tri_cloud());
        let fc = build_filtration(&c, 1, 1.05).unwrap();
        let rep = sandwich_check(&c, 1, 1.05, 1.05, &fc, 1.0).unwrap();
        assert_eq!(rep, SandwichReport { lower: 1, betti: 1, upper: 1, pass: true });

        let sparse = cloud(&[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]]);
        let fc = build_filtration(&sparse, 1, 1.0).unwrap();
        let rep = sandwich_check(&sparse, 1, 0.5, 1.0, &fc, 1.0).unwrap();
        assert_eq!(rep, SandwichReport { lower: 0, betti: 0, upper: 0, pass: true });
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(5, 3), 10);
        assert_eq!(binomial(3, 5), 0);
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> (PointCloud, NeighborGraph) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let c = cloud(&rows);
        let g = neighbor_graph(&c, p).unwrap();
        (c, g)
    }

    fn connected(g: &NeighborGraph, verts: &[u32]) -> bool {
        let mut seen = vec![verts[0]];
        let mut stack = vec![verts[0]];
        while let Some(v) = stack.pop() {
            for &u in g.neighbors(v as usize) {
                if verts.contains(&u) && !seen.contains(&u) {
                    seen.push(u);
                    stack.push(u);
                }
            }
        }
        seen.len() == verts.len()
    }

    fn subsets(n: usize, size: usize) -> Vec<Vec<u32>> {
        (0u32..(1 << n)).filter(|m| m.count_ones() as usize == size).map(|m| (0..n as u32).filter(|i| m & (1 << i) != 0).collect()).collect()
    }

    #[test]
    fn enumerators_match_brute_force() {
        for seed in 0..40 {
            let (_, g) = random_graph(13, 0.35, seed);
            for size in 1..=5 {
                let mut conn = Vec::new();
                for_each_connected_subset(&g, size, |s| {
                    let mut s = s.to_vec();
                    s.sort();
                    conn.push(s)
                });
                conn.sort();
                let dedup_len = {
                    let mut c = conn.clone();
                    c.dedup();
                    c.len()
                };
                assert_eq!(dedup_len, conn.len(), "duplicate connected subset");
                let mut expect: Vec<Vec<u32>> = subsets(13, size).into_iter().filter(|s| connected(&g, s)).collect();
                expect.sort();
                assert_eq!(conn, expect, "seed {seed} size {size}");

                let mut cliques = Vec::new();
                for_each_clique(&g, size, |s| cliques.push(s.to_vec()));
                cliques.sort();
                let expect: Vec<Vec<u32>> = subsets(13, size)
                    .into_iter()
                    .filter(|s| s.iter().all(|&a| s.iter().all(|&b| a == b || g.has_edge(a as usize, b as usize))))
                    .collect();
                let mut expect = expect;
                expect.sort();
                assert_eq!(cliques, expect);
            }
        }
    }

    #[test]
    fn count_g_matches_all_subsets() {
        for seed in 0..30 {
            let (c, _) = random_graph(14, 0.3, 100 + seed);
            for k in 1..=2 {
                let (s, t) = (0.25, 0.3);
                let brute = subsets(14, k + 2)
                    .iter()
                    .filter(|verts| {
                        let pts: Vec<Vec<f64>> = verts.iter().map(|&v| c.point(v as usize).to_vec()).collect();
                        let cfg = CycleTuple::new(k, pts).unwrap();
                        h_indicator(&cfg, s).unwrap() == 1 && h_indicator(&cfg, t).unwrap() == 1
                    })
                    .count() as u64;
                assert_eq!(count_g(&c, k, s, t).unwrap(), brute);
            }
        }
    }
}
