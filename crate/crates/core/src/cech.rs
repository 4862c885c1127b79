//! Truncated Čech filtration over a point cloud.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::format::fmt_g17;
use crate::geometry::{neighbor_graph, simplex_value_refs, MAX_POINTS};
use crate::sampling::PointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    /// Strictly increasing vertex indices.
    pub vertices: Vec<u32>,
    /// Smallest radius at which the simplex enters the complex.
    pub value: f64,
}

impl Simplex {
    pub fn dim(&self) -> usize {
        self.vertices.len() - 1
    }
}

fn filtration_order(a: &Simplex, b: &Simplex) -> Ordering {
    a.value
        .total_cmp(&b.value)
        .then(a.vertices.len().cmp(&b.vertices.len()))
        .then_with(|| a.vertices.cmp(&b.vertices))
}

/// All simplices of dimension `<= max_dim` with value `<= cutoff`, sorted by
/// `(value, dimension, vertices)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredComplex {
    d: usize,
    max_dim: usize,
    cutoff: f64,
    simplices: Vec<Simplex>,
}

impl FilteredComplex {
    pub fn ambient_dim(&self) -> usize {
        self.d
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn count_dim(&self, dim: usize) -> usize {
        self.simplices.iter().filter(|s| s.dim() == dim).count()
    }

    /// Sub-complex of simplices with value `<= r`.
    pub fn complex_at(&self, r: f64) -> Result<SubComplex<'_>> {
        if r > self.cutoff {
            return Err(Error::BeyondTruncation { r, cutoff: self.cutoff });
        }
        if r.is_nan() || r < 0.0 {
            return Err(invalid(format!("radius must be non-negative, got {r}")));
        }
        let end = self.simplices.partition_point(|s| s.value <= r);
        Ok(SubComplex { simplices: &self.simplices[..end] })
    }

    /// Debug export, one row `dim,value,v0,...,vdim` per simplex.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.simplices {
            let verts: Vec<String> = s.vertices.iter().map(u32::to_string).collect();
            writeln!(w, "{},{},{}", s.dim(), fmt_g17(s.value), verts.join(","))?;
        }
        Ok(())
    }
}

/// A prefix of a filtration: a valid simplicial complex.
#[derive(Debug, Clone, Copy)]
pub struct SubComplex<'a> {
    simplices: &'a [Simplex],
}

impl<'a> SubComplex<'a> {
    pub fn simplices(&self) -> &'a [Simplex] {
        self.simplices
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn count_dim(&self, dim: usize) -> usize {
        self.simplices.iter().filter(|s| s.dim() == dim).count()
    }
}

/// Builds the filtration up to dimension `k + 1`.
///
/// Simplices are enumerated as cliques of the neighbour graph at threshold
/// `cutoff`, grown in increasing vertex order. A clique whose value exceeds
/// the cutoff is not extended, since cofaces can only be larger.
pub fn build_filtration(cloud: &PointCloud, k: usize, cutoff: f64) -> Result<FilteredComplex> {
    if k < 1 {
        return Err(invalid("homology degree k must be at least 1"));
    }
    if !(cutoff > 0.0) || !cutoff.is_finite() {
        return Err(invalid(format!("cutoff must be positive and finite, got {cutoff}")));
    }
    let max_dim = k + 1;
    if max_dim + 1 > MAX_POINTS {
        return Err(invalid(format!("k = {k} too large (simplices limited to {MAX_POINTS} vertices)")));
    }
    let d = cloud.dim();
    let mut simplices: Vec<Simplex> =
        (0..cloud.len() as u32).map(|v| Simplex { vertices: vec![v], value: 0.0 }).collect();

    if cloud.len() > 1 {
        let graph = neighbor_graph(cloud, cutoff)?;
        let mut clique = Vec::with_capacity(max_dim + 1);
        for v in 0..cloud.len() {
            let higher: Vec<u32> = graph.neighbors(v).iter().copied().filter(|&u| u as usize > v).collect();
            if higher.is_empty() {
                continue;
            }
            clique.clear();
            clique.push(v as u32);
            extend_cliques(cloud, &graph, &mut clique, &higher, 0.0, max_dim, cutoff, &mut simplices);
        }
    }

    repair_monotonicity(&mut simplices);
    simplices.sort_by(filtration_order);
    Ok(FilteredComplex { d, max_dim, cutoff, simplices })
}

#[allow(clippy::too_many_arguments)]
fn extend_cliques(
    cloud: &PointCloud,
    graph: &crate::geometry::NeighborGraph,
    clique: &mut Vec<u32>,
    candidates: &[u32],
    parent_value: f64,
    max_dim: usize,
    cutoff: f64,
    out: &mut Vec<Simplex>,
) {
    let mut pts: [&[f64]; MAX_POINTS] = [&[]; MAX_POINTS];
    for (i, &u) in candidates.iter().enumerate() {
        clique.push(u);
        for (slot, &w) in pts.iter_mut().zip(clique.iter()) {
            *slot = cloud.point(w as usize);
        }
        let value = simplex_value_refs(&pts[..clique.len()])
            .expect("clique within kernel limits")
            .max(parent_value);
        if value <= cutoff {
            out.push(Simplex { vertices: clique.clone(), value });
            if clique.len() <= max_dim {
                let next: Vec<u32> =
                    candidates[i + 1..].iter().copied().filter(|&w| graph.has_edge(u as usize, w as usize)).collect();
                if !next.is_empty() {
                    extend_cliques(cloud, graph, clique, &next, value, max_dim, cutoff, out);
                }
            }
        }
        clique.pop();
    }
}

/// Raises any value that rounding left below one of its facets, so that the
/// sort order is always a valid filtration order.
fn repair_monotonicity(simplices: &mut [Simplex]) {
    let index: HashMap<Vec<u32>, usize> =
        simplices.iter().enumerate().map(|(i, s)| (s.vertices.clone(), i)).collect();
    let mut order: Vec<usize> = (0..simplices.len()).collect();
    order.sort_by_key(|&i| simplices[i].vertices.len());
    let mut facet = Vec::new();
    for i in order {
        let len = simplices[i].vertices.len();
        if len < 3 {
            continue;
        }
        let mut value = simplices[i].value;
        for skip in 0..len {
            facet.clear();
            facet.extend(simplices[i].vertices.iter().enumerate().filter(|(j, _)| *j != skip).map(|(_, &v)| v));
            if let Some(&f) = index.get(&facet) {
                value = value.max(simplices[f].value);
            }
        }
        simplices[i].value = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::simplex_value;
    use crate::sampling::{sample, Density, SampleSpec};
    use std::collections::HashSet;

    pub(crate) fn equilateral() -> PointCloud {
        PointCloud::from_rows(2, [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]).unwrap()
    }

    #[test]
    fn equilateral_full() {
        let fc = build_filtration(&equilateral(), 1, 2.0).unwrap();
        assert_eq!(fc.count_dim(0), 3);
        assert_eq!(fc.count_dim(1), 3);
        assert_eq!(fc.count_dim(2), 1);
        let tri = fc.simplices().last().unwrap();
        assert_eq!(tri.vertices, vec![0, 1, 2]);
        assert!((tri.value - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        for e in fc.simplices().iter().filter(|s| s.dim() == 1) {
            assert!((e.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equilateral_truncated_below_triangle() {
        let fc = build_filtration(&equilateral(), 1, 1.1).unwrap();
        assert_eq!((fc.count_dim(0), fc.count_dim(1), fc.count_dim(2)), (3, 3, 0));
    }

    #[test]
    fn single_point() {
        let c = PointCloud::from_rows(3, [[1.0, 2.0, 3.0]]).unwrap();
        let fc = build_filtration(&c, 2, 1.0).unwrap();
        assert_eq!(fc.simplices(), &[Simplex { vertices: vec![0], value: 0.0 }]);
        assert!(build_filtration(&PointCloud::empty(2), 1, 1.0).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_filtration(&equilateral(), 1, 0.0).is_err());
        assert!(build_filtration(&equilateral(), 0, 1.0).is_err());
    }

    #[test]
    fn complex_at_views() {
        let fc = build_filtration(&equilateral(), 1, 2.0).unwrap();
        let at1 = fc.complex_at(1.0).unwrap();
        assert_eq!((at1.count_dim(0), at1.count_dim(1), at1.count_dim(2)), (3, 3, 0));
        assert_eq!(fc.complex_at(0.0).unwrap().len(), 3);
        let tri_value = fc.simplices().last().unwrap().value;
        assert_eq!(fc.complex_at(tri_value).unwrap().len(), 7);
        assert!(matches!(fc.complex_at(2.5), Err(Error::BeyondTruncation { .. })));
    }

    #[test]
    fn csv_export() {
        let fc = build_filtration(&equilateral(), 1, 1.1).unwrap();
        let mut buf = Vec::new();
        fc.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("0,0,0\n0,0,1\n0,0,2\n"), "{text}");
        assert!(text.lines().any(|l| l == "1,1,0,1"), "{text}");
        assert_eq!(text.lines().count(), 6);
    }

    fn random_cloud(n: u64, d: usize, seed: u64) -> PointCloud {
        sample(&Density::uniform_cube(1.0, d).unwrap(), &SampleSpec::new(n, false, seed).unwrap()).unwrap()
    }

    fn check_invariants(fc: &FilteredComplex) {
        let values: HashMap<&[u32], f64> = fc.simplices().iter().map(|s| (s.vertices.as_slice(), s.value)).collect();
        for w in fc.simplices().windows(2) {
            assert_ne!(filtration_order(&w[0], &w[1]), Ordering::Greater);
        }
        for s in fc.simplices() {
            assert!(s.value <= fc.cutoff());
            assert!(s.vertices.windows(2).all(|w| w[0] < w[1]));
            if s.vertices.len() > 1 {
                for skip in 0..s.vertices.len() {
                    let facet: Vec<u32> = s.vertices.iter().enumerate().filter(|(j, _)| *j != skip).map(|(_, &v)| v).collect();
                    let fv = values.get(facet.as_slice()).expect("closure");
                    assert!(*fv <= s.value);
                }
            }
        }
    }

    #[test]
    fn closure_and_monotonicity_on_random_clouds() {
        for seed in 0..1000u64 {
            let n = 5 + seed % 36;
            let d = 2 + (seed % 2) as usize;
            let k = 1 + (seed % 2) as usize;
            let cloud = random_cloud(n, d, seed);
            let fc = build_filtration(&cloud, k, 0.35).unwrap();
            check_invariants(&fc);
        }
    }

    fn brute_force(cloud: &PointCloud, k: usize, r: f64) -> HashSet<Vec<u32>> {
        let n = cloud.len();
        let mut out = HashSet::new();
        for mask in 1u64..(1 << n) {
            let size = mask.count_ones() as usize;
            if size > k + 2 {
                continue;
            }
            let verts: Vec<u32> = (0..n as u32).filter(|i| mask & (1 << i) != 0).collect();
            let pts: Vec<&[f64]> = verts.iter().map(|&v| cloud.point(v as usize)).collect();
            if simplex_value(&pts).unwrap() <= r {
                out.insert(verts);
            }
        }
        out
    }

    #[test]
    fn matches_definition_by_brute_force() {
        for seed in 0..60u64 {
            let n = 4 + seed % 9;
            let k = 1 + (seed % 2) as usize;
            let cloud = random_cloud(n, 2, 1000 + seed);
            let fc = build_filtration(&cloud, k, 0.8).unwrap();
            for r in [0.1, 0.3, 0.5, 0.8] {
                let got: HashSet<Vec<u32>> = fc.complex_at(r).unwrap().simplices().iter().map(|s| s.vertices.clone()).collect();
                assert_eq!(got, brute_force(&cloud, k, r), "seed {seed} r {r}");
            }
        }
    }

    #[test]
    fn scale_equivariance() {
        for seed in 0..50u64 {
            let cloud = random_cloud(30, 2, 500 + seed);
            let c = 3.7;
            let a = build_filtration(&cloud, 1, 0.3).unwrap();
            let b = build_filtration(&cloud.scaled(c), 1, 0.3 * c).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.simplices().iter().zip(b.simplices()) {
                assert_eq!(x.vertices, y.vertices);
                assert!((x.value * c - y.value).abs() <= 1e-12 * y.value.max(1e-300));
            }
        }
    }
}
