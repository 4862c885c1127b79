//! Persistence diagrams, persistent Betti numbers and rectangle counts.
//!
//! Diagrams come from the standard column reduction of the boundary matrix
//! over GF(2) with clearing. An independent rank-based computation of the
//! persistent Betti numbers lives in [`persistent_betti_oracle`].

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cech::{FilteredComplex, Simplex};
use crate::error::{invalid, Error, Result};
use crate::format::{ext_real, fmt_g17, parse_f64};
use crate::gf2::{kernel_basis, rank, BitVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    pub birth: f64,
    /// `+inf` for classes still alive at the truncation cutoff.
    #[serde(with = "ext_real")]
    pub death: f64,
}

/// The k-th persistence diagram in scaled units (filtration value / scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagram {
    pub k: usize,
    pub scale: f64,
    pub pairs: Vec<PersistencePair>,
    /// True when some class outlived the truncation cutoff.
    pub censored: bool,
}

impl Diagram {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Rows `birth,death`, `inf` for infinite deaths.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.pairs {
            writeln!(w, "{},{}", fmt_g17(p.birth), fmt_g17(p.death))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, k: usize, scale: f64) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let bad = || Error::Parse { line: idx + 1, msg: format!("expected `birth,death`, got {t:?}") };
            let (b, d) = t.split_once(',').ok_or_else(bad)?;
            let birth = parse_f64(b).ok_or_else(bad)?;
            let death = parse_f64(d).ok_or_else(bad)?;
            pairs.push(PersistencePair { birth, death });
        }
        let censored = pairs.iter().any(|p| p.death.is_infinite());
        Ok(Diagram { k, scale, pairs, censored })
    }
}

/// Half-open birth-death window: `(s, t] x (u, v]`, or `[0, t] x (u, v]` when
/// `left_closed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub s: f64,
    pub t: f64,
    pub u: f64,
    #[serde(with = "ext_real")]
    pub v: f64,
    #[serde(default)]
    pub left_closed: bool,
}

impl Rectangle {
    pub fn new(s: f64, t: f64, u: f64, v: f64) -> Result<Self> {
        let r = Rectangle { s, t, u, v, left_closed: false };
        r.validate()?;
        Ok(r)
    }

    pub fn left_closed(t: f64, u: f64, v: f64) -> Result<Self> {
        let r = Rectangle { s: 0.0, t, u, v, left_closed: true };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let Rectangle { s, t, u, v, left_closed } = *self;
        if [s, t, u, v].iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidRectangle("NaN coordinate".into()));
        }
        if !t.is_finite() {
            return Err(Error::InvalidRectangle("birth bound t must be finite".into()));
        }
        if !(0.0 <= s && s <= t && t <= u && u <= v) {
            return Err(Error::InvalidRectangle(format!("need 0 <= s <= t <= u <= v, got ({s}, {t}, {u}, {v})")));
        }
        if left_closed && s != 0.0 {
            return Err(Error::InvalidRectangle("left-closed rectangles require s = 0".into()));
        }
        Ok(())
    }

    pub fn contains(&self, birth: f64, death: f64) -> bool {
        let birth_ok = if self.left_closed {
            (0.0..=self.t).contains(&birth)
        } else {
            self.s < birth && birth <= self.t
        };
        birth_ok && self.u < death && death <= self.v
    }

    /// Largest finite coordinate.
    pub fn max_finite(&self) -> f64 {
        if self.v.is_finite() {
            self.v
        } else {
            self.u
        }
    }
}

/// Reduces the boundary matrix and returns the k-th diagram in units of
/// `scale`. Zero-persistence pairs are dropped; classes unpaired within the
/// truncation get death `+inf` and set the censoring flag.
pub fn compute_diagram(fc: &FilteredComplex, k: usize, scale: f64) -> Result<Diagram> {
    if k + 1 > fc.max_dim() {
        return Err(invalid(format!("k = {k} requires simplices of dimension {} but max_dim = {}", k + 1, fc.max_dim())));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(invalid(format!("scale must be positive, got {scale}")));
    }
    let raw = reduce_pairs(fc.simplices(), k);
    let mut pairs: Vec<PersistencePair> = raw
        .into_iter()
        .filter(|&(b, d)| b < d)
        .map(|(b, d)| PersistencePair { birth: b / scale, death: d / scale })
        .collect();
    pairs.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.death.total_cmp(&b.death)));
    let censored = pairs.iter().any(|p| p.death.is_infinite());
    Ok(Diagram { k, scale, pairs, censored })
}

/// Column reduction restricted to dimensions `k - 1, k, k + 1`, returning
/// raw `(birth value, death value)` pairs with `inf` for essential classes.
fn reduce_pairs(simplices: &[Simplex], k: usize) -> Vec<(f64, f64)> {
    let index_of: HashMap<&[u32], usize> = simplices
        .iter()
        .enumerate()
        .filter(|(_, s)| s.dim() + 1 >= k && s.dim() <= k)
        .map(|(i, s)| (s.vertices.as_slice(), i))
        .collect();

    // Reduce the (k+1)-columns; each pivot row is a k-simplex giving birth.
    let mut pivot_owner: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut out = Vec::new();
    let mut paired_birth = vec![false; simplices.len()];
    for (j, s) in simplices.iter().enumerate() {
        if s.dim() != k + 1 {
            continue;
        }
        let mut col = boundary(s, &index_of);
        if let Some(low) = reduce_column(&mut col, &pivot_owner) {
            paired_birth[low] = true;
            out.push((simplices[low].value, simplices[j].value));
            pivot_owner.insert(low, col);
        }
    }

    // Classify the remaining k-simplices; cleared columns are known positive.
    let mut low_owner: HashMap<usize, Vec<usize>> = HashMap::new();
    for (j, s) in simplices.iter().enumerate() {
        if s.dim() != k || paired_birth[j] {
            continue;
        }
        if k == 0 {
            out.push((s.value, f64::INFINITY));
            continue;
        }
        let mut col = boundary(s, &index_of);
        match reduce_column(&mut col, &low_owner) {
            Some(low) => {
                low_owner.insert(low, col);
            }
            None => out.push((s.value, f64::INFINITY)),
        }
    }
    out
}

fn boundary(s: &Simplex, index_of: &HashMap<&[u32], usize>) -> Vec<usize> {
    let mut facet = Vec::with_capacity(s.vertices.len());
    let mut col: Vec<usize> = (0..s.vertices.len())
        .map(|skip| {
            facet.clear();
            facet.extend(s.vertices.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &v)| v));
            *index_of.get(facet.as_slice()).expect("filtration is closed under faces")
        })
        .collect();
    col.sort_unstable();
    col
}

/// Adds earlier reduced columns until the lowest entry is unclaimed.
fn reduce_column(col: &mut Vec<usize>, owner: &HashMap<usize, Vec<usize>>) -> Option<usize> {
    while let Some(&low) = col.last() {
        match owner.get(&low) {
            Some(other) => *col = symmetric_difference(col, other),
            None => return Some(low),
        }
    }
    None
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// `#{(b, d) : b <= s, d > t}`. At `t = inf` this is `#{b <= s, d = inf}`
/// counting only truly essential classes, which is zero for `k >= 1`.
pub fn persistent_betti(diag: &Diagram, s: f64, t: f64) -> Result<usize> {
    if s.is_nan() || t.is_nan() || s > t {
        return Err(invalid(format!("need s <= t, got s = {s}, t = {t}")));
    }
    Ok(if t.is_infinite() {
        // For k >= 1 every class of a finite cloud dies eventually, so
        // infinite deaths are truncation artifacts.
        if diag.k >= 1 && diag.censored {
            return Ok(0);
        }
        diag.pairs.iter().filter(|p| p.birth <= s && p.death.is_infinite()).count()
    } else {
        diag.pairs.iter().filter(|p| p.birth <= s && p.death > t).count()
    })
}

/// Number of diagram points in the rectangle.
pub fn count_rectangle(diag: &Diagram, rect: &Rectangle) -> Result<usize> {
    rect.validate()?;
    Ok(diag.pairs.iter().filter(|p| rect.contains(p.birth, p.death)).count())
}

/// Inclusion-exclusion of persistent Betti numbers over the rectangle
/// corners; equals [`count_rectangle`] exactly.
pub fn rectangle_by_betti(diag: &Diagram, rect: &Rectangle) -> Result<i64> {
    rect.validate()?;
    let b = |s: f64, t: f64| persistent_betti(diag, s, t).map(|x| x as i64);
    let mut total = b(rect.t, rect.u)? - b(rect.t, rect.v)?;
    if !rect.left_closed {
        total += b(rect.s, rect.v)? - b(rect.s, rect.u)?;
    }
    Ok(total)
}

/// Rank-based persistent Betti number in filtration units:
/// `dim Z_k(s) - dim(Z_k(s) ∩ B_k(t)) = dim(Z_k(s) + B_k(t)) - rank ∂_{k+1}(t)`.
pub fn persistent_betti_oracle(fc: &FilteredComplex, k: usize, s: f64, t: f64) -> Result<usize> {
    if s.is_nan() || t.is_nan() || s > t || s < 0.0 {
        return Err(invalid(format!("need 0 <= s <= t, got s = {s}, t = {t}")));
    }
    if t > fc.cutoff() {
        return Err(Error::BeyondTruncation { r: t, cutoff: fc.cutoff() });
    }
    if k + 1 > fc.max_dim() {
        return Err(invalid(format!("k = {k} exceeds max_dim - 1")));
    }
    let at_t = fc.complex_at(t)?.simplices();
    let k_simplices: Vec<&Simplex> = at_t.iter().filter(|x| x.dim() == k).collect();
    let k_index: HashMap<&[u32], usize> =
        k_simplices.iter().enumerate().map(|(i, x)| (x.vertices.as_slice(), i)).collect();
    let m = k_simplices.len();

    // Kernel of the k-th boundary restricted to the complex at s.
    let at_s: Vec<&Simplex> = k_simplices.iter().copied().filter(|x| x.value <= s).collect();
    let cycles_in_s: Vec<BitVector> = if k == 0 {
        (0..at_s.len()).map(|i| unit(m, i)).collect()
    } else {
        let lower: Vec<&Simplex> = at_t.iter().filter(|x| x.dim() + 1 == k && x.value <= s).collect();
        let lower_index: HashMap<&[u32], usize> =
            lower.iter().enumerate().map(|(i, x)| (x.vertices.as_slice(), i)).collect();
        let columns: Vec<BitVector> = at_s.iter().map(|x| boundary_vector(x, &lower_index, lower.len())).collect();
        kernel_basis(&columns, lower.len())
            .into_iter()
            .map(|z| {
                // Re-embed from the at-s indexing into the at-t indexing.
                let mut v = BitVector::zeros(m);
                for (i, x) in at_s.iter().enumerate() {
                    if z.get(i) {
                        v.set(k_index[x.vertices.as_slice()], true);
                    }
                }
                v
            })
            .collect()
    };

    let boundaries: Vec<BitVector> =
        at_t.iter().filter(|x| x.dim() == k + 1).map(|x| boundary_vector(x, &k_index, m)).collect();
    let rank_b = rank(&boundaries);
    let mut stacked = cycles_in_s;
    stacked.extend(boundaries);
    Ok(rank(&stacked) - rank_b)
}

/// Ordinary Betti number of the complex at `r` (filtration units):
/// `dim ker ∂_k - rank ∂_{k+1}`.
pub fn betti_number(fc: &FilteredComplex, k: usize, r: f64) -> Result<usize> {
    if k + 1 > fc.max_dim() {
        return Err(invalid(format!("k = {k} exceeds max_dim - 1")));
    }
    let at = fc.complex_at(r)?.simplices();
    let faces = |dim: usize| -> Vec<&Simplex> { at.iter().filter(|x| x.dim() == dim).collect() };
    let ks = faces(k);
    let k_index: HashMap<&[u32], usize> = ks.iter().enumerate().map(|(i, x)| (x.vertices.as_slice(), i)).collect();
    let rank_k = if k == 0 {
        0
    } else {
        let lower = faces(k - 1);
        let lower_index: HashMap<&[u32], usize> =
            lower.iter().enumerate().map(|(i, x)| (x.vertices.as_slice(), i)).collect();
        let cols: Vec<BitVector> = ks.iter().map(|x| boundary_vector(x, &lower_index, lower.len())).collect();
        rank(&cols)
    };
    let upper: Vec<BitVector> = faces(k + 1).iter().map(|x| boundary_vector(x, &k_index, ks.len())).collect();
    Ok(ks.len() - rank_k - rank(&upper))
}

fn unit(len: usize, i: usize) -> BitVector {
    let mut v = BitVector::zeros(len);
    v.set(i, true);
    v
}

fn boundary_vector(s: &Simplex, index: &HashMap<&[u32], usize>, len: usize) -> BitVector {
    let mut v = BitVector::zeros(len);
    for skip in 0..s.vertices.len() {
        let facet: Vec<u32> = s.vertices.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &x)| x).collect();
        v.flip(index[facet.as_slice()]);
    }
    v
}
