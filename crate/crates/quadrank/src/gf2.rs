//! Linear algebra over F₂ on bit-packed vectors (ambient dimension ≤ 64)
//! plus subspace-lattice combinatorics: subspace enumeration, the subspace
//! counts N₂(j), lattice Möbius values and Gaussian binomials.
//!
//! Subspaces are canonicalised eagerly to a reduced row-echelon basis so they
//! can serve as exact dictionary keys.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("ambient dimension {0} exceeds the enumeration guard {1}")]
    EnumerationGuard(usize, usize),
    #[error("subspaces are not nested (V ⊄ W)")]
    NotNested,
    #[error("ambient dimensions differ: {0} vs {1}")]
    AmbientMismatch(usize, usize),
}

/// Dense matrix over F₂; each row is one u64 word, bit i = column i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        assert!(cols <= 64, "BitMatrix supports at most 64 columns");
        BitMatrix { rows, cols, data: vec![0; rows] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = BitMatrix::zero(n, n);
        for i in 0..n {
            m.data[i] = 1 << i;
        }
        m
    }

    pub fn from_rows(rows: &[u64], cols: usize) -> Self {
        assert!(cols <= 64);
        let mask = mask(cols);
        for &r in rows {
            assert_eq!(r & !mask, 0, "row has bits beyond cols");
        }
        BitMatrix { rows: rows.len(), cols, data: rows.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> u64 {
        self.data[r]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r] >> c & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, bit: bool) {
        if bit {
            self.data[r] |= 1 << c;
        } else {
            self.data[r] &= !(1 << c);
        }
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zero(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    t.set(c, r, true);
                }
            }
        }
        t
    }

    /// y = M·x where x is a column vector packed into a word (bit c = x_c);
    /// bit r of the result is the parity of row_r ∧ x.
    pub fn mul_vec(&self, x: u64) -> u64 {
        let mut y = 0u64;
        for r in 0..self.rows {
            y |= (((self.data[r] & x).count_ones() as u64) & 1) << r;
        }
        y
    }

    pub fn rank(&self) -> usize {
        let mut rows = self.data.clone();
        echelonize(&mut rows)
    }

    /// Kernel {x : M·x = 0} as a canonical subspace of F₂^cols.
    pub fn kernel(&self) -> Subspace {
        // Eliminate on the rows viewed as linear forms, tracking pivots.
        let mut rows: Vec<u64> = self.data.iter().copied().filter(|&r| r != 0).collect();
        let rank = echelonize(&mut rows);
        rows.truncate(rank);
        let mut pivots = Vec::with_capacity(rank);
        for &r in &rows {
            pivots.push(r.trailing_zeros() as usize);
        }
        let mut basis = Vec::new();
        for free in 0..self.cols {
            if pivots.contains(&free) {
                continue;
            }
            // Back-substitute: x_free = 1, solve pivot coordinates.
            let mut v = 1u64 << free;
            for (i, &row) in rows.iter().enumerate() {
                if (row & v).count_ones() % 2 == 1 {
                    v |= 1 << pivots[i];
                }
            }
            basis.push(v);
        }
        Subspace::from_vectors(self.cols, &basis)
    }
}

fn mask(cols: usize) -> u64 {
    if cols == 64 {
        u64::MAX
    } else {
        (1u64 << cols) - 1
    }
}

/// Reduced row echelon form in place (pivot = lowest set bit, rows sorted by
/// pivot, pivot columns cleared elsewhere). Returns the rank; zero rows are
/// moved to the tail.
fn echelonize(rows: &mut Vec<u64>) -> usize {
    let mut basis: Vec<u64> = Vec::new();
    for mut v in rows.iter().copied() {
        for &b in &basis {
            let pivot = b & b.wrapping_neg(); // lowest set bit
            if v & pivot != 0 {
                v ^= b;
            }
        }
        if v != 0 {
            // Clear the new pivot from existing basis rows.
            let pivot = v & v.wrapping_neg();
            for b in basis.iter_mut() {
                if *b & pivot != 0 {
                    *b ^= v;
                }
            }
            basis.push(v);
        }
    }
    basis.sort_by_key(|b| b.trailing_zeros());
    let rank = basis.len();
    rows.clear();
    rows.extend_from_slice(&basis);
    rank
}

/// An F₂-subspace of F₂^ambient stored as a canonical reduced-echelon basis.
/// Equal subspaces compare equal and hash identically, so values can key
/// accumulator maps directly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subspace {
    ambient: usize,
    basis: Vec<u64>,
}

impl Subspace {
    pub fn from_vectors(ambient: usize, vectors: &[u64]) -> Self {
        assert!(ambient <= 64);
        let m = mask(ambient);
        let mut rows: Vec<u64> = vectors.to_vec();
        for &v in vectors {
            assert_eq!(v & !m, 0, "vector has bits beyond ambient");
        }
        echelonize(&mut rows);
        Subspace { ambient, basis: rows }
    }

    pub fn zero(ambient: usize) -> Self {
        Subspace { ambient, basis: Vec::new() }
    }

    pub fn full(ambient: usize) -> Self {
        Subspace::from_vectors(ambient, &(0..ambient).map(|i| 1u64 << i).collect::<Vec<_>>())
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[u64] {
        &self.basis
    }

    pub fn contains(&self, v: u64) -> bool {
        let mut v = v;
        for &b in &self.basis {
            let pivot = b & b.wrapping_neg();
            if v & pivot != 0 {
                v ^= b;
            }
        }
        v == 0
    }

    pub fn contains_subspace(&self, other: &Subspace) -> bool {
        other.basis.iter().all(|&v| self.contains(v))
    }

    /// All 2^dim elements, ascending as integers.
    pub fn elements(&self) -> Vec<u64> {
        assert!(self.dim() <= 24, "element enumeration guard");
        let mut out = Vec::with_capacity(1 << self.dim());
        for sel in 0u64..(1 << self.dim()) {
            let mut v = 0u64;
            for (i, &b) in self.basis.iter().enumerate() {
                if sel >> i & 1 == 1 {
                    v ^= b;
                }
            }
            out.push(v);
        }
        out.sort_unstable();
        out
    }

    /// Sum (join) of two subspaces of the same ambient space.
    pub fn join(&self, other: &Subspace) -> Result<Subspace, Gf2Error> {
        if self.ambient != other.ambient {
            return Err(Gf2Error::AmbientMismatch(self.ambient, other.ambient));
        }
        let mut vecs = self.basis.clone();
        vecs.extend_from_slice(&other.basis);
        Ok(Subspace::from_vectors(self.ambient, &vecs))
    }

    /// Extend by one vector.
    pub fn extend(&self, v: u64) -> Subspace {
        let mut vecs = self.basis.clone();
        vecs.push(v);
        Subspace::from_vectors(self.ambient, &vecs)
    }

    /// Orthogonal complement w.r.t. the standard dot product (parity of AND).
    pub fn orthogonal_complement(&self) -> Subspace {
        if self.basis.is_empty() {
            return Subspace::full(self.ambient);
        }
        BitMatrix::from_rows(&self.basis, self.ambient).kernel()
    }
}

const ENUM_GUARD: usize = 6;

/// Every subspace of F₂^s, all N₂(s) of them. Guarded at s ≤ 6
/// (N₂(6) = 2825 is the largest lattice walked here).
pub fn enumerate_subspaces(ambient: usize) -> Result<Vec<Subspace>, Gf2Error> {
    if ambient > ENUM_GUARD {
        return Err(Gf2Error::EnumerationGuard(ambient, ENUM_GUARD));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut frontier = vec![Subspace::zero(ambient)];
    seen.insert(Subspace::zero(ambient));
    while let Some(s) = frontier.pop() {
        for v in 1..(1u64 << ambient) {
            if s.contains(v) {
                continue;
            }
            let bigger = s.extend(v);
            if seen.insert(bigger.clone()) {
                frontier.push(bigger);
            }
        }
    }
    Ok(seen.into_iter().collect())
}

/// Gaussian binomial coefficient: the number of k-dimensional subspaces of
/// F_base^n, computed exactly.
pub fn gaussian_binomial(n: u64, k: u64, base: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let q = BigUint::from(base);
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..k {
        num *= q.pow((n - i) as u32) - 1u32;
        den *= q.pow((k - i) as u32) - 1u32;
    }
    debug_assert!((&num % &den).is_zero());
    num / den
}

/// N₂(j): the number of subspaces of F₂^j, with the convention N₂(j) = 1 for
/// j < 0 (callers only multiply such values by vanishing masses).
pub fn n2(j: i64) -> BigUint {
    if j < 0 {
        return BigUint::one();
    }
    let j = j as u64;
    let mut total = BigUint::zero();
    for k in 0..=j {
        total += gaussian_binomial(j, k, 2);
    }
    total
}

/// Möbius function of the subspace lattice for a nested pair V ⊆ W:
/// (−1)^d · 2^(d(d−1)/2) with d = dim W − dim V.
pub fn moebius(v: &Subspace, w: &Subspace) -> Result<BigInt, Gf2Error> {
    if v.ambient() != w.ambient() {
        return Err(Gf2Error::AmbientMismatch(v.ambient(), w.ambient()));
    }
    if !w.contains_subspace(v) {
        return Err(Gf2Error::NotNested);
    }
    let d = (w.dim() - v.dim()) as u32;
    let mag = BigInt::from(2u32).pow(d * d.saturating_sub(1) / 2);
    Ok(if d % 2 == 1 { -mag } else { mag })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_kernel_basics() {
        let z = BitMatrix::zero(2, 2);
        assert_eq!(z.rank(), 0);
        assert_eq!(z.kernel(), Subspace::full(2));

        let id = BitMatrix::identity(3);
        assert_eq!(id.rank(), 3);
        assert_eq!(id.kernel(), Subspace::zero(3));

        // [[1,1],[0,0]] -> rank 1, kernel spanned by (1,1).
        let m = BitMatrix::from_rows(&[0b11, 0b00], 2);
        assert_eq!(m.rank(), 1);
        assert_eq!(m.kernel(), Subspace::from_vectors(2, &[0b11]));
    }

    #[test]
    fn kernel_vectors_are_annihilated() {
        // Pseudo-random small matrices, exhaustive kernel check.
        let mut state = 0x9e3779b97f4a7c15u64;
        for cols in 1..=8usize {
            for rows in 1..=8usize {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                let data: Vec<u64> = (0..rows)
                    .map(|i| {
                        let x = state.rotate_left(i as u32 * 7) ^ (i as u64);
                        x & mask(cols)
                    })
                    .collect();
                let m = BitMatrix::from_rows(&data, cols);
                let ker = m.kernel();
                assert_eq!(ker.dim(), cols - m.rank());
                for v in ker.elements() {
                    assert_eq!(m.mul_vec(v), 0, "kernel vector not annihilated");
                }
                // Exhaustive: every annihilated vector lies in the kernel.
                for v in 0..(1u64 << cols) {
                    assert_eq!(m.mul_vec(v) == 0, ker.contains(v));
                }
            }
        }
    }

    #[test]
    fn subspace_canonical_and_idempotent() {
        let a = Subspace::from_vectors(4, &[0b0011, 0b0110, 0b0101]);
        let b = Subspace::from_vectors(4, &[0b0110, 0b0101]);
        assert_eq!(a, b); // 0b0011 = 0b0110 ^ 0b0101
        let re = Subspace::from_vectors(4, a.basis());
        assert_eq!(re.basis(), a.basis());
        assert_eq!(a.dim(), 2);
    }

    #[test]
    fn enumerate_subspace_counts() {
        assert_eq!(enumerate_subspaces(0).unwrap().len(), 1);
        assert_eq!(enumerate_subspaces(2).unwrap().len(), 5);
        assert_eq!(enumerate_subspaces(4).unwrap().len(), 67);
        assert!(enumerate_subspaces(7).is_err());
        for s in 0..=5usize {
            let list = enumerate_subspaces(s).unwrap();
            let expect: BigUint = (0..=s as u64).map(|k| gaussian_binomial(s as u64, k, 2)).sum();
            assert_eq!(BigUint::from(list.len()), expect);
            assert!(list.contains(&Subspace::zero(s)));
            assert!(list.contains(&Subspace::full(s)));
        }
    }

    #[test]
    fn n2_values() {
        assert_eq!(n2(0), BigUint::from(1u32));
        assert_eq!(n2(1), BigUint::from(2u32));
        assert_eq!(n2(2), BigUint::from(5u32));
        assert_eq!(n2(3), BigUint::from(16u32));
        assert_eq!(n2(-2), BigUint::from(1u32));
        assert_eq!(n2(4), BigUint::from(67u32));
    }

    #[test]
    fn gaussian_binomial_values() {
        assert_eq!(gaussian_binomial(5, 0, 2), BigUint::from(1u32));
        assert_eq!(gaussian_binomial(2, 1, 2), BigUint::from(3u32));
        assert_eq!(gaussian_binomial(4, 2, 2), BigUint::from(35u32));
        assert_eq!(gaussian_binomial(4, 2, 3), BigUint::from(130u32));
        // Exhaustive cross-check against the enumerated lattice.
        for s in 0..=5usize {
            let list = enumerate_subspaces(s).unwrap();
            for k in 0..=s {
                let count = list.iter().filter(|sp| sp.dim() == k).count();
                assert_eq!(BigUint::from(count), gaussian_binomial(s as u64, k as u64, 2));
            }
        }
    }

    #[test]
    fn moebius_values_and_defining_relation() {
        let z = Subspace::zero(3);
        let f = Subspace::full(3);
        assert_eq!(moebius(&f, &f).unwrap(), BigInt::from(1));
        let line = Subspace::from_vectors(3, &[0b001]);
        assert_eq!(moebius(&z, &line).unwrap(), BigInt::from(-1));
        assert_eq!(moebius(&z, &f).unwrap(), BigInt::from(-8)); // d = 3
        assert!(moebius(&f, &line).is_err());

        // Σ_{V ⊆ W} μ(V, W) = 0 for dim W ≥ 1, ambient ≤ 4.
        for ambient in 1..=4usize {
            let all = enumerate_subspaces(ambient).unwrap();
            for w in &all {
                if w.dim() == 0 {
                    continue;
                }
                let mut total = BigInt::zero();
                for v in &all {
                    if w.contains_subspace(v) {
                        total += moebius(v, w).unwrap();
                    }
                }
                assert_eq!(total, BigInt::zero(), "W dim {}", w.dim());
            }
        }
    }

    #[test]
    fn moebius_matches_recursive_lattice_definition() {
        // μ(V, W) defined recursively: μ(W,W) = 1,
        // μ(V,W) = −Σ_{V ⊆ U ⊊ W} μ(V,U).
        fn recursive_mu(v: &Subspace, w: &Subspace, all: &[Subspace]) -> BigInt {
            if v == w {
                return BigInt::from(1);
            }
            let mut acc = BigInt::zero();
            for u in all {
                if u != w && u.contains_subspace(v) && w.contains_subspace(u) {
                    acc += recursive_mu(v, u, all);
                }
            }
            -acc
        }
        for ambient in 0..=4usize {
            let all = enumerate_subspaces(ambient).unwrap();
            for v in &all {
                for w in &all {
                    if w.contains_subspace(v) {
                        assert_eq!(moebius(v, w).unwrap(), recursive_mu(v, w, &all));
                    }
                }
            }
        }
    }

    #[test]
    fn orthogonal_complement_dims() {
        for ambient in 0..=5usize {
            for s in enumerate_subspaces(ambient).unwrap() {
                let perp = s.orthogonal_complement();
                assert_eq!(perp.dim(), ambient - s.dim());
                for &b in s.basis() {
                    for w in perp.elements() {
                        assert_eq!((b & w).count_ones() % 2, 0);
                    }
                }
            }
        }
    }
}
