//! Dense linear algebra over the two-element field.
//!
//! Kept separate from the column reduction in `persistence` so the rank-based
//! persistent Betti oracle shares no code path with the diagram it checks.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn xor_assign(&mut self, other: &BitVector) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Index of the lowest set bit.
    pub fn lowest(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }
}

/// Rank of a set of vectors (row echelon by lowest set bit).
pub fn rank(vectors: &[BitVector]) -> usize {
    let mut basis: Vec<(usize, BitVector)> = Vec::new();
    for v in vectors {
        let mut v = v.clone();
        loop {
            let Some(lead) = v.lowest() else { break };
            match basis.iter().find(|(l, _)| *l == lead) {
                Some((_, b)) => v.xor_assign(b),
                None => {
                    basis.push((lead, v));
                    break;
                }
            }
        }
    }
    basis.len()
}

/// Basis of the kernel of the linear map whose columns are `columns`
/// (each of length `rows`). Kernel vectors have length `columns.len()`.
pub fn kernel_basis(columns: &[BitVector], rows: usize) -> Vec<BitVector> {
    let ncols = columns.len();
    // Row-major copy of the matrix, then reduced row echelon form.
    let mut m: Vec<BitVector> = (0..rows)
        .map(|r| {
            let mut row = BitVector::zeros(ncols);
            for (c, col) in columns.iter().enumerate() {
                if col.get(r) {
                    row.set(c, true);
                }
            }
            row
        })
        .collect();
    let mut pivot_cols = Vec::new();
    let mut pivot_row = 0;
    for c in 0..ncols {
        if pivot_row == rows {
            break;
        }
        let Some(found) = (pivot_row..rows).find(|&r| m[r].get(c)) else { continue };
        m.swap(pivot_row, found);
        let pivot = m[pivot_row].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != pivot_row && row.get(c) {
                row.xor_assign(&pivot);
            }
        }
        pivot_cols.push(c);
        pivot_row += 1;
    }
    let is_pivot: Vec<bool> = {
        let mut v = vec![false; ncols];
        for &c in &pivot_cols {
            v[c] = true;
        }
        v
    };
    (0..ncols)
        .filter(|&f| !is_pivot[f])
        .map(|f| {
            let mut x = BitVector::zeros(ncols);
            x.set(f, true);
            for (i, &p) in pivot_cols.iter().enumerate() {
                if m[i].get(f) {
                    x.set(p, true);
                }
            }
            x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bv(bits: &[u8]) -> BitVector {
        let mut v = BitVector::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b == 1);
        }
        v
    }

    fn apply(columns: &[BitVector], rows: usize, x: &BitVector) -> BitVector {
        let mut out = BitVector::zeros(rows);
        for (c, col) in columns.iter().enumerate() {
            if x.get(c) {
                out.xor_assign(col);
            }
        }
        out
    }

    #[test]
    fn rank_basics() {
        assert_eq!(rank(&[]), 0);
        assert_eq!(rank(&[bv(&[0, 0, 0])]), 0);
        assert_eq!(rank(&[bv(&[1, 1, 0]), bv(&[0, 1, 1]), bv(&[1, 0, 1])]), 2);
        assert_eq!(rank(&[bv(&[1, 0, 0]), bv(&[0, 1, 0]), bv(&[0, 0, 1])]), 3);
    }

    #[test]
    fn triangle_boundary_kernel() {
        // Edges 01, 02, 12 over vertices 0, 1, 2.
        let cols = vec![bv(&[1, 1, 0]), bv(&[1, 0, 1]), bv(&[0, 1, 1])];
        let ker = kernel_basis(&cols, 3);
        assert_eq!(ker, vec![bv(&[1, 1, 1])]);
    }

    #[test]
    fn rank_nullity_on_random_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let rows = rng.random_range(1..70);
            let ncols = rng.random_range(1..70);
            let cols: Vec<BitVector> = (0..ncols)
                .map(|_| {
                    let mut v = BitVector::zeros(rows);
                    for r in 0..rows {
                        v.set(r, rng.random_bool(0.1));
                    }
                    v
                })
                .collect();
            let ker = kernel_basis(&cols, rows);
            assert_eq!(ker.len() + rank(&cols), ncols);
            assert_eq!(rank(&ker), ker.len());
            for x in &ker {
                assert!(apply(&cols, rows, x).is_zero());
            }
        }
    }
}
