//! Linkage combinatorics on F₂^{2k} and the closed-form coset identity.
//!
//! Index vectors are grouped into k blocks of two bits.  A quadratic form on
//! pairs of blocks ("linked") carves the 4^k indices into maximal unlinked
//! sets, which turn out to be cosets of k-dimensional subspaces.  Each set
//! carries a signed tuple sum γ(U), and for any admissible system of parity
//! functionals Ψ the stable sets satisfy
//!
//!   Σ_{U stable} γ(U) = 2^{2^k + k − 1} · N₂(k − #T),
//!
//! where N₂ counts subspaces of F₂^j.  Everything here verifies that identity
//! and its supporting structure by exhaustive enumeration.

use crate::gf2::{enumerate_subspaces, n2, BitMatrix, Gf2Error, Subspace};
use num_traits::ToPrimitive;
use serde::Serialize;
use std::collections::BTreeSet;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Largest supported block count; 2k = 6 ambient bits keeps every
/// enumeration (64 indices, 2825 subspaces) exhaustive and fast.
pub const MAX_K: u32 = 3;

#[derive(Debug, Error)]
pub enum CombError {
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error("block count {0} outside supported range 1..=3")]
    BadBlockCount(u32),
    #[error("bit pattern {bits:#b} out of range for {k} blocks")]
    BitsOutOfRange { bits: u64, k: u32 },
    #[error("index vectors over {left} and {right} blocks cannot be combined")]
    BlockCountMismatch { left: u32, right: u32 },
    #[error("elements {u} and {v} are linked")]
    NotUnlinked { u: u64, v: u64 },
    #[error("duplicate element {0}")]
    DuplicateElement(u64),
    #[error("expected {expected} block masks, got {got}")]
    ProfileLength { expected: usize, got: usize },
    #[error("mask {mask:#b} does not fit in {num_t} basis bits")]
    MaskOutOfRange { mask: u32, num_t: u32 },
    #[error("no block carries basis mask {0:#b} alone")]
    MissingBasisBlock(u32),
    #[error("derived parity functionals are linearly dependent")]
    DependentFunctionals,
    #[error("maximal unlinked set {0:?} does not have 2^k elements")]
    WrongSetSize(Vec<u64>),
    #[error("maximal unlinked set {0:?} is not a coset of a subspace")]
    NotACoset(Vec<u64>),
}

/// Element of F₂^{2k} viewed as k blocks (u₁, u₂); block j occupies bits
/// 2j (u₁) and 2j+1 (u₂).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct IndexVector {
    bits: u64,
    k: u32,
}

impl IndexVector {
    pub fn new(bits: u64, k: u32) -> Result<Self, CombError> {
        if k == 0 || k > 31 {
            return Err(CombError::BadBlockCount(k));
        }
        if bits >> (2 * k) != 0 {
            return Err(CombError::BitsOutOfRange { bits, k });
        }
        Ok(IndexVector { bits, k })
    }

    /// Build from explicit (u₁, u₂) block entries, each 0 or 1.
    pub fn from_blocks(blocks: &[(u8, u8)]) -> Result<Self, CombError> {
        let k = blocks.len() as u32;
        let mut bits = 0u64;
        for (j, &(u1, u2)) in blocks.iter().enumerate() {
            if u1 > 1 || u2 > 1 {
                return Err(CombError::BitsOutOfRange { bits: u64::from(u1.max(u2)), k });
            }
            bits |= u64::from(u1) << (2 * j) | u64::from(u2) << (2 * j + 1);
        }
        IndexVector::new(bits, k)
    }

    pub fn bits(self) -> u64 {
        self.bits
    }

    pub fn k(self) -> u32 {
        self.k
    }

    /// The (u₁, u₂) pair of block j.
    pub fn block(self, j: u32) -> (bool, bool) {
        (self.bits >> (2 * j) & 1 == 1, self.bits >> (2 * j + 1) & 1 == 1)
    }

    pub fn xor(self, other: Self) -> Result<Self, CombError> {
        check_same_k(self, other)?;
        Ok(IndexVector { bits: self.bits ^ other.bits, k: self.k })
    }
}

fn check_same_k(u: IndexVector, v: IndexVector) -> Result<(), CombError> {
    if u.k != v.k {
        return Err(CombError::BlockCountMismatch { left: u.k, right: v.k });
    }
    Ok(())
}

fn phi_raw(u: u64, v: u64, k: u32) -> bool {
    let mut acc = 0u64;
    for j in 0..k {
        let u1 = u >> (2 * j) & 1;
        let v1 = v >> (2 * j) & 1;
        let v2 = v >> (2 * j + 1) & 1;
        acc ^= (u1 ^ v1) & (u1 ^ v2);
    }
    acc == 1
}

fn linked_raw(u: u64, v: u64, k: u32) -> bool {
    phi_raw(u, v, k) ^ phi_raw(v, u, k)
}

fn lambda_raw(d: u64, k: u32) -> bool {
    let mut acc = 0u64;
    for j in 0..k {
        acc ^= d >> (2 * j) & 1 & !(d >> (2 * j + 1));
    }
    acc & 1 == 1
}

fn l_raw(u: u64, v: u64, k: u32) -> bool {
    let mut acc = 0u64;
    for j in 0..k {
        acc ^= (u >> (2 * j) & 1) & ((v >> (2 * j) ^ v >> (2 * j + 1)) & 1);
    }
    acc == 1
}

/// Blockwise sum of (u₁+v₁)(u₁+v₂); asymmetric in (u, v).
pub fn phi_form(u: IndexVector, v: IndexVector) -> Result<bool, CombError> {
    check_same_k(u, v)?;
    Ok(phi_raw(u.bits, v.bits, u.k))
}

/// u and v are linked when the two orientations of the pair form differ.
/// Symmetric, never true on the diagonal.
pub fn linked(u: IndexVector, v: IndexVector) -> Result<bool, CombError> {
    check_same_k(u, v)?;
    Ok(linked_raw(u.bits, v.bits, u.k))
}

/// Quadratic form λ with linked(u, v) = λ(u ⊕ v): blockwise d₁(1 + d₂).
pub fn lambda(d: IndexVector) -> bool {
    lambda_raw(d.bits, d.k)
}

/// Bilinear form L(u, v) = Σ_j u₁⁽ʲ⁾(v₁⁽ʲ⁾ + v₂⁽ʲ⁾) with λ(d) = L(d, d).
pub fn l_form(u: IndexVector, v: IndexVector) -> Result<bool, CombError> {
    check_same_k(u, v)?;
    Ok(l_raw(u.bits, v.bits, u.k))
}

/// The same form written in the alternate basis: Σ_j x₁⁽ʲ⁾ y₂⁽ʲ⁾.
pub fn l_form_b(x: IndexVector, y: IndexVector) -> Result<bool, CombError> {
    check_same_k(x, y)?;
    let mut acc = 0u64;
    for j in 0..x.k {
        acc ^= (x.bits >> (2 * j) & 1) & (y.bits >> (2 * j + 1) & 1);
    }
    Ok(acc == 1)
}

/// Change of basis taking alternate-basis coordinates to standard ones:
/// per block, u₁ = x₁ and u₂ = x₁ + x₂ (b₁ = e₁ + e₂, b₂ = e₂).
pub fn b_basis_matrix(k: u32) -> Result<BitMatrix, CombError> {
    if k == 0 || k > MAX_K {
        return Err(CombError::BadBlockCount(k));
    }
    let n = 2 * k as usize;
    let mut rows = vec![0u64; n];
    for j in 0..k as usize {
        rows[2 * j] = 1 << (2 * j);
        rows[2 * j + 1] = 1 << (2 * j) | 1 << (2 * j + 1);
    }
    Ok(BitMatrix::from_rows(&rows, n))
}

/// All maximal pairwise-unlinked subsets of F₂^{2k}, each verified to have
/// exactly 2^k elements and to be a coset of a subspace.
#[derive(Clone, Debug, Serialize)]
pub struct UnlinkedFamily {
    pub k: u32,
    /// Each set sorted ascending; the family sorted lexicographically.
    pub sets: Vec<Vec<u64>>,
}

/// Exhaustive maximal-clique enumeration of the unlinked graph on 4^k
/// vertices.  The size and coset structure of every clique is checked, not
/// assumed.
pub fn maximal_unlinked_sets(k: u32) -> Result<UnlinkedFamily, CombError> {
    if k == 0 || k > MAX_K {
        return Err(CombError::BadBlockCount(k));
    }
    let n = 1usize << (2 * k);
    let mut adj = vec![0u64; n];
    for u in 0..n {
        for v in 0..n {
            if u != v && !linked_raw(u as u64, v as u64, k) {
                adj[u] |= 1u64 << v;
            }
        }
    }
    let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut cliques = Vec::new();
    bron_kerbosch(0, all, 0, &adj, &mut cliques);

    let expected = 1usize << k;
    let mut sets = Vec::with_capacity(cliques.len());
    for mask in cliques {
        let elems: Vec<u64> = (0..n as u64).filter(|i| mask >> i & 1 == 1).collect();
        if elems.len() != expected {
            return Err(CombError::WrongSetSize(elems));
        }
        let diffs: BTreeSet<u64> = elems.iter().map(|&e| e ^ elems[0]).collect();
        for &a in &diffs {
            for &b in &diffs {
                if !diffs.contains(&(a ^ b)) {
                    return Err(CombError::NotACoset(elems));
                }
            }
        }
        sets.push(elems);
    }
    sets.sort();
    Ok(UnlinkedFamily { k, sets })
}

fn bron_kerbosch(r: u64, p: u64, x: u64, adj: &[u64], out: &mut Vec<u64>) {
    if p == 0 && x == 0 {
        out.push(r);
        return;
    }
    let mut pivot = 0usize;
    let mut best = -1i64;
    let mut px = p | x;
    while px != 0 {
        let v = px.trailing_zeros() as usize;
        let c = (p & adj[v]).count_ones() as i64;
        if c > best {
            best = c;
            pivot = v;
        }
        px &= px - 1;
    }
    let mut cand = p & !adj[pivot];
    let mut p = p;
    let mut x = x;
    while cand != 0 {
        let v = cand.trailing_zeros() as usize;
        let bit = 1u64 << v;
        bron_kerbosch(r | bit, p & adj[v], x & adj[v], adj, out);
        p &= !bit;
        x |= bit;
        cand &= !bit;
    }
}

/// Signed tuple sum over a pairwise-unlinked set U: every assignment
/// ε ∈ F₂^U of odd weight contributes (−1)^{Σ_{u<v} Φ(u,v) ε_u ε_v}.
/// (Φ is symmetric on unlinked pairs, so the unordered sum is well defined.)
pub fn gamma(set: &[u64], k: u32) -> Result<i64, CombError> {
    if k == 0 || k > MAX_K {
        return Err(CombError::BadBlockCount(k));
    }
    let n = set.len();
    let mut seen = BTreeSet::new();
    for &e in set {
        if e >> (2 * k) != 0 {
            return Err(CombError::BitsOutOfRange { bits: e, k });
        }
        if !seen.insert(e) {
            return Err(CombError::DuplicateElement(e));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if linked_raw(set[i], set[j], k) {
                return Err(CombError::NotUnlinked { u: set[i], v: set[j] });
            }
        }
    }
    // pair_mask[i] records which later elements j have Φ(set[i], set[j]) = 1
    let mut pair_mask = vec![0u64; n];
    for i in 0..n {
        for j in i + 1..n {
            if phi_raw(set[i], set[j], k) {
                pair_mask[i] |= 1u64 << j;
            }
        }
    }
    let mut total = 0i64;
    for eps in 0u64..1 << n {
        if eps.count_ones() % 2 == 0 {
            continue;
        }
        let mut sign = false;
        for i in 0..n {
            if eps >> i & 1 == 1 {
                sign ^= (pair_mask[i] & eps).count_ones() % 2 == 1;
            }
        }
        total += if sign { -1 } else { 1 };
    }
    Ok(total)
}

/// A system of independent parity functionals Ψ_t on F₂^{2k}.
///
/// Each block is tagged with a mask over the #T basis bits (the expansion of
/// the block's character in the chosen basis; untagged blocks carry 0), and
/// Ψ_t sums the u₁ bits of the blocks whose mask includes basis bit t.
/// Admissibility requires every basis bit to appear as the sole mask of some
/// block, which forces the Ψ_t to be linearly independent.
#[derive(Clone, Debug)]
pub struct PsiSystem {
    k: u32,
    masks: Vec<u32>,
    num_t: u32,
    functionals: Vec<u64>,
}

impl PsiSystem {
    pub fn new(k: u32, masks: &[u32], num_t: u32) -> Result<Self, CombError> {
        if k == 0 || k > 31 {
            return Err(CombError::BadBlockCount(k));
        }
        if masks.len() != k as usize {
            return Err(CombError::ProfileLength { expected: k as usize, got: masks.len() });
        }
        for &m in masks {
            if num_t >= 32 || m >> num_t != 0 {
                return Err(CombError::MaskOutOfRange { mask: m, num_t });
            }
        }
        let mut functionals = Vec::with_capacity(num_t as usize);
        for t in 0..num_t {
            if !masks.iter().any(|&m| m == 1 << t) {
                return Err(CombError::MissingBasisBlock(1 << t));
            }
            let mut f = 0u64;
            for (j, &m) in masks.iter().enumerate() {
                if m >> t & 1 == 1 {
                    f |= 1u64 << (2 * j);
                }
            }
            functionals.push(f);
        }
        if BitMatrix::from_rows(&functionals, 2 * k as usize).rank() != num_t as usize {
            return Err(CombError::DependentFunctionals);
        }
        Ok(PsiSystem { k, masks: masks.to_vec(), num_t, functionals })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn num_t(&self) -> u32 {
        self.num_t
    }

    pub fn masks(&self) -> &[u32] {
        &self.masks
    }

    /// Value of Ψ_t at u.
    pub fn psi(&self, t: u32, u: u64) -> bool {
        (self.functionals[t as usize] & u).count_ones() % 2 == 1
    }

    /// True when every Ψ_t is constant on the set.  The constants may differ
    /// across functionals; equivalently, every Ψ_t vanishes on the difference
    /// subspace of the coset.
    pub fn is_stable(&self, set: &[u64]) -> bool {
        if set.is_empty() {
            return true;
        }
        (0..self.num_t).all(|t| {
            let first = self.psi(t, set[0]);
            set.iter().all(|&u| self.psi(t, u) == first)
        })
    }

    /// True when every Ψ_t vanishes on every basis vector of the subspace.
    fn vanishes_on(&self, subspace: &Subspace) -> bool {
        (0..self.num_t).all(|t| subspace.basis().iter().all(|&b| !self.psi(t, b)))
    }
}

/// Every admissible mask assignment for k blocks over num_t basis bits.
pub fn admissible_profiles(k: u32, num_t: u32) -> Result<Vec<Vec<u32>>, CombError> {
    if k == 0 || k > MAX_K {
        return Err(CombError::BadBlockCount(k));
    }
    if num_t > k {
        return Ok(Vec::new());
    }
    let choices = 1u32 << num_t;
    let mut out = Vec::new();
    let mut masks = vec![0u32; k as usize];
    loop {
        if (0..num_t).all(|t| masks.iter().any(|&m| m == 1 << t)) {
            out.push(masks.clone());
        }
        // odometer over all mask vectors
        let mut pos = 0usize;
        loop {
            if pos == masks.len() {
                return Ok(out);
            }
            masks[pos] += 1;
            if masks[pos] < choices {
                break;
            }
            masks[pos] = 0;
            pos += 1;
        }
    }
}

/// Both sides of the coset identity plus the supporting structure counts.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub k: u32,
    pub num_t: u32,
    pub profile: Vec<u32>,
    pub lhs: i64,
    pub rhs: i64,
    pub identity_holds: bool,
    pub maximal_sets: usize,
    pub stable_sets: usize,
    pub good_subspaces: usize,
    pub good_subspaces_expected: i64,
    pub psi_vanishing_good: usize,
    pub psi_vanishing_good_expected: i64,
    pub per_good_coset_totals_ok: bool,
    pub gamma_vanishes_off_good: bool,
}

fn is_good(subspace: &Subspace, k: u32) -> bool {
    let basis = subspace.basis();
    basis
        .iter()
        .all(|&a| basis.iter().all(|&b| !l_raw(a, b, k) && !l_raw(b, a, k)))
}

fn coset_reps(subspace: &Subspace, k: u32) -> Vec<Vec<u64>> {
    let elems = subspace.elements();
    let mut seen = BTreeSet::new();
    let mut cosets = Vec::new();
    for t in 0..1u64 << (2 * k) {
        let mut coset: Vec<u64> = elems.iter().map(|&e| e ^ t).collect();
        coset.sort_unstable();
        if seen.insert(coset[0]) {
            cosets.push(coset);
        }
    }
    cosets
}

/// Verifies Σ_{U stable} γ(U) = 2^{2^k + k − 1} · N₂(k − #T) exhaustively,
/// along with the second route through L-isotropic ("good") subspaces: their
/// count is N₂(k), those killed by every Ψ_t number N₂(k − #T), each such
/// subspace's cosets contribute 2^{2^k + k − 1} in total, and γ vanishes on
/// every coset of a non-good subspace.
pub fn verify_identity(k: u32, psi: &PsiSystem) -> Result<IdentityReport, CombError> {
    if k == 0 || k > MAX_K {
        return Err(CombError::BadBlockCount(k));
    }
    if psi.k != k {
        return Err(CombError::BlockCountMismatch { left: psi.k, right: k });
    }
    let family = maximal_unlinked_sets(k)?;
    let stable: Vec<&Vec<u64>> = family.sets.iter().filter(|s| psi.is_stable(s)).collect();

    #[cfg(feature = "parallel")]
    let gammas: Result<Vec<i64>, CombError> =
        stable.par_iter().map(|s| gamma(s, k)).collect();
    #[cfg(not(feature = "parallel"))]
    let gammas: Result<Vec<i64>, CombError> = stable.iter().map(|s| gamma(s, k)).collect();
    let lhs: i64 = gammas?.into_iter().sum();

    let weight = 2u64.pow(1 << k) * 2u64.pow(k - 1);
    let rhs = (weight * n2(i64::from(k) - i64::from(psi.num_t)).to_u64().unwrap()) as i64;

    let ambient = 2 * k as usize;
    let all = enumerate_subspaces(ambient)?;
    let good: Vec<&Subspace> =
        all.iter().filter(|s| s.dim() == k as usize && is_good(s, k)).collect();
    let psi_vanishing = good.iter().filter(|s| psi.vanishes_on(s)).count();

    #[cfg(feature = "parallel")]
    let coset_totals: Result<Vec<i64>, CombError> = good
        .par_iter()
        .map(|s| coset_reps(s, k).iter().map(|c| gamma(c, k)).sum())
        .collect();
    #[cfg(not(feature = "parallel"))]
    let coset_totals: Result<Vec<i64>, CombError> = good
        .iter()
        .map(|s| coset_reps(s, k).iter().map(|c| gamma(c, k)).sum())
        .collect();
    let per_good_coset_totals_ok =
        coset_totals?.into_iter().all(|t| t == weight as i64);

    let mut gamma_vanishes_off_good = true;
    for set in &family.sets {
        let diffs: Vec<u64> = set.iter().map(|&e| e ^ set[0]).collect();
        let diff_space = Subspace::from_vectors(ambient, &diffs);
        if !is_good(&diff_space, k) && gamma(set, k)? != 0 {
            gamma_vanishes_off_good = false;
        }
    }

    Ok(IdentityReport {
        k,
        num_t: psi.num_t,
        profile: psi.masks.clone(),
        lhs,
        rhs,
        identity_holds: lhs == rhs,
        maximal_sets: family.sets.len(),
        stable_sets: stable.len(),
        good_subspaces: good.len(),
        good_subspaces_expected: n2(i64::from(k)).to_i64().unwrap(),
        psi_vanishing_good: psi_vanishing,
        psi_vanishing_good_expected: n2(i64::from(k) - i64::from(psi.num_t))
            .to_i64()
            .unwrap(),
        per_good_coset_totals_ok,
        gamma_vanishes_off_good,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(blocks: &[(u8, u8)]) -> IndexVector {
        IndexVector::from_blocks(blocks).unwrap()
    }

    #[test]
    fn phi_and_linked_small_cases() {
        assert!(!phi_form(iv(&[(0, 0)]), iv(&[(0, 0)])).unwrap());
        assert!(phi_form(iv(&[(1, 0)]), iv(&[(0, 0)])).unwrap());
        assert!(!phi_form(iv(&[(0, 1)]), iv(&[(0, 0)])).unwrap());

        // k = 1 linkage table: {0,1} and {2,3} are the only linked pairs.
        let e = |b: u64| IndexVector::new(b, 1).unwrap();
        assert!(linked(e(0), e(1)).unwrap());
        assert!(linked(e(2), e(3)).unwrap());
        assert!(!linked(e(0), e(2)).unwrap());
        assert!(!linked(e(0), e(3)).unwrap());
        assert!(!linked(e(1), e(2)).unwrap());
        assert!(!linked(e(1), e(3)).unwrap());
        for b in 0..4 {
            assert!(!linked(e(b), e(b)).unwrap());
        }
    }

    #[test]
    fn linked_matches_quadratic_form_of_difference() {
        for k in 1..=MAX_K {
            let n = 1u64 << (2 * k);
            for u in 0..n {
                let ui = IndexVector::new(u, k).unwrap();
                assert_eq!(lambda(ui), l_form(ui, ui).unwrap());
                for v in 0..n {
                    let vi = IndexVector::new(v, k).unwrap();
                    assert_eq!(linked(ui, vi).unwrap(), lambda(ui.xor(vi).unwrap()));
                }
            }
        }
    }

    #[test]
    fn input_validation_errors() {
        assert!(matches!(
            IndexVector::new(0b100, 1),
            Err(CombError::BitsOutOfRange { .. })
        ));
        assert!(matches!(IndexVector::new(0, 0), Err(CombError::BadBlockCount(0))));
        let u = IndexVector::new(1, 1).unwrap();
        let v = IndexVector::new(1, 2).unwrap();
        assert!(matches!(
            phi_form(u, v),
            Err(CombError::BlockCountMismatch { .. })
        ));
        // {0,1} is a linked pair at k = 1
        assert!(matches!(
            gamma(&[0, 1], 1),
            Err(CombError::NotUnlinked { .. })
        ));
        assert!(matches!(gamma(&[0, 0], 1), Err(CombError::DuplicateElement(0))));
        assert!(matches!(gamma(&[0, 4], 1), Err(CombError::BitsOutOfRange { .. })));
        assert!(matches!(maximal_unlinked_sets(4), Err(CombError::BadBlockCount(4))));
    }

    #[test]
    fn maximal_unlinked_family_structure() {
        let fam1 = maximal_unlinked_sets(1).unwrap();
        let expected: Vec<Vec<u64>> = vec![vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3]];
        assert_eq!(fam1.sets, expected);
        // counts: (# maximal isotropic k-subspaces of the split form) · 2^k cosets
        assert_eq!(maximal_unlinked_sets(2).unwrap().sets.len(), 24);
        assert_eq!(maximal_unlinked_sets(3).unwrap().sets.len(), 240);
        for k in 1..=MAX_K {
            for set in &maximal_unlinked_sets(k).unwrap().sets {
                assert_eq!(set.len(), 1 << k);
                for (i, &u) in set.iter().enumerate() {
                    for &v in &set[i + 1..] {
                        assert!(!linked_raw(u, v, k));
                    }
                }
            }
        }
    }

    #[test]
    fn gamma_values() {
        let fam1 = maximal_unlinked_sets(1).unwrap();
        for set in &fam1.sets {
            assert_eq!(gamma(set, 1).unwrap(), 2);
        }
        // hand evaluation: on {0,2,8,10} every Φ pair vanishes, so γ counts
        // the 2^3 odd-weight assignments
        assert_eq!(gamma(&[0, 2, 8, 10], 2).unwrap(), 8);
        let total: i64 = maximal_unlinked_sets(2)
            .unwrap()
            .sets
            .iter()
            .map(|s| gamma(s, 2).unwrap())
            .sum();
        assert_eq!(total, 160);
    }

    #[test]
    fn psi_system_construction_and_errors() {
        let psi = PsiSystem::new(2, &[0b01, 0b10], 2).unwrap();
        assert_eq!(psi.num_t(), 2);
        assert!(psi.psi(0, 0b0001));
        assert!(!psi.psi(0, 0b0010));
        assert!(psi.psi(1, 0b0100));
        assert!(!psi.psi(1, 0b0001));

        assert!(matches!(
            PsiSystem::new(2, &[0b01], 2),
            Err(CombError::ProfileLength { .. })
        ));
        assert!(matches!(
            PsiSystem::new(2, &[0b100, 0b10], 2),
            Err(CombError::MaskOutOfRange { .. })
        ));
        // basis bit 1 never appears alone
        assert!(matches!(
            PsiSystem::new(2, &[0b01, 0b11], 2),
            Err(CombError::MissingBasisBlock(0b10))
        ));
    }

    #[test]
    fn admissible_profile_counts() {
        assert_eq!(admissible_profiles(1, 0).unwrap(), vec![vec![0]]);
        assert_eq!(admissible_profiles(1, 1).unwrap(), vec![vec![1]]);
        assert_eq!(admissible_profiles(2, 1).unwrap().len(), 3);
        assert_eq!(admissible_profiles(2, 2).unwrap().len(), 2);
        assert_eq!(admissible_profiles(3, 2).unwrap().len(), 18);
        assert_eq!(admissible_profiles(3, 3).unwrap().len(), 6);
        assert!(admissible_profiles(2, 3).unwrap().is_empty());
    }

    #[test]
    fn identity_pinned_values() {
        let cases: &[(u32, &[u32], u32, i64)] = &[
            (1, &[0], 0, 8),
            (1, &[1], 1, 4),
            (2, &[0, 0], 0, 160),
            (2, &[1, 0], 1, 64),
            (2, &[0, 1], 1, 64),
            (2, &[1, 1], 1, 64),
            (2, &[1, 2], 2, 32),
            (2, &[2, 1], 2, 32),
        ];
        for &(k, masks, num_t, expected) in cases {
            let psi = PsiSystem::new(k, masks, num_t).unwrap();
            let report = verify_identity(k, &psi).unwrap();
            assert_eq!(report.lhs, expected, "lhs for k={k} masks={masks:?}");
            assert_eq!(report.rhs, expected);
            assert!(report.identity_holds);
            assert_eq!(report.good_subspaces as i64, report.good_subspaces_expected);
            assert_eq!(
                report.psi_vanishing_good as i64,
                report.psi_vanishing_good_expected
            );
            assert!(report.per_good_coset_totals_ok);
            assert!(report.gamma_vanishes_off_good);
        }
    }

    #[test]
    fn identity_across_all_admissible_profiles() {
        for k in 1..=2u32 {
            for num_t in 0..=k {
                for masks in admissible_profiles(k, num_t).unwrap() {
                    let psi = PsiSystem::new(k, &masks, num_t).unwrap();
                    let report = verify_identity(k, &psi).unwrap();
                    assert!(
                        report.identity_holds,
                        "k={k} masks={masks:?}: {} vs {}",
                        report.lhs, report.rhs
                    );
                }
            }
        }
    }

    #[test]
    fn stability_is_per_functional_constancy() {
        // With two functionals, demanding a constant shared across both
        // halves the qualifying cosets and breaks the identity: the correct
        // predicate lets each functional take its own constant.
        let psi = PsiSystem::new(2, &[1, 2], 2).unwrap();
        let family = maximal_unlinked_sets(2).unwrap();
        let shared_constant: i64 = family
            .sets
            .iter()
            .filter(|s| {
                let all_zero = (0..2).all(|t| s.iter().all(|&u| !psi.psi(t, u)));
                let all_one = (0..2).all(|t| s.iter().all(|&u| psi.psi(t, u)));
                all_zero || all_one
            })
            .map(|s| gamma(s, 2).unwrap())
            .sum();
        assert_eq!(shared_constant, 16);
        assert_eq!(verify_identity(2, &psi).unwrap().lhs, 32);
    }

    #[test]
    fn identity_k3() {
        let cases: &[(&[u32], u32, i64)] = &[
            (&[0, 0, 0], 0, 16384),
            (&[1, 0, 0], 1, 5120),
            (&[1, 1, 1], 1, 5120),
            (&[1, 2, 0], 2, 2048),
            (&[1, 2, 4], 3, 1024),
        ];
        for &(masks, num_t, expected) in cases {
            let psi = PsiSystem::new(3, masks, num_t).unwrap();
            let report = verify_identity(3, &psi).unwrap();
            assert_eq!(report.lhs, expected, "masks={masks:?}");
            assert!(report.identity_holds);
            assert_eq!(report.maximal_sets, 240);
            assert!(report.per_good_coset_totals_ok);
            assert!(report.gamma_vanishes_off_good);
        }
    }

    #[test]
    fn b_basis_change_is_consistent() {
        for k in 1..=MAX_K {
            let m = b_basis_matrix(k).unwrap();
            assert_eq!(m.rank(), 2 * k as usize);
            let n = 1u64 << (2 * k);
            for x in 0..n {
                for y in 0..n {
                    let xe = IndexVector::new(m.mul_vec(x), k).unwrap();
                    let ye = IndexVector::new(m.mul_vec(y), k).unwrap();
                    let xb = IndexVector::new(x, k).unwrap();
                    let yb = IndexVector::new(y, k).unwrap();
                    assert_eq!(l_form(xe, ye).unwrap(), l_form_b(xb, yb).unwrap());
                }
            }
        }
    }

    #[test]
    fn report_serializes_with_expected_keys() {
        let psi = PsiSystem::new(1, &[1], 1).unwrap();
        let report = verify_identity(1, &psi).unwrap();
        let value = serde_json::to_value(&report).unwrap();
        for key in [
            "k",
            "num_t",
            "profile",
            "lhs",
            "rhs",
            "identity_holds",
            "maximal_sets",
            "stable_sets",
            "good_subspaces",
            "psi_vanishing_good",
        ] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(value["lhs"], 4);
    }
}
