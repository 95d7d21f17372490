//! Special divisors of an odd squarefree D and the character machinery built
//! on them.
//!
//! A divisor d | D is *special* when d is a square modulo D/d and D/d is a
//! square modulo d. Encoding divisors by their prime-support masks, the
//! special divisors form an F₂-subspace of the divisor group under
//! d₁⊙d₂ = d₁d₂/gcd(d₁,d₂)² (XOR on masks), always containing 1 and D.
//! This module computes that space two independent ways (a brute-force scan
//! and a kernel computation), maps it into the quadratic-sign groups attached
//! to a pair of auxiliary moduli (n₁, n₂), and evaluates the character counts
//! m_χ together with the twisted divisor sums A_χ that recover them.

use crate::arith::{is_square_mod, jacobi, ArithError, FactoredOdd};
use crate::gf2::{BitMatrix, Subspace};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecialDivError {
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error("moduli n1 = {0} and n2 = {1} are not coprime")]
    ModuliNotCoprime(u64, u64),
    #[error("D = {d} is not coprime to n1·n2 = {n}")]
    DNotCoprime { d: u64, n: u64 },
    #[error("D = {d} is not a square modulo n1 = {n1}")]
    DNotSquareModN1 { d: u64, n1: u64 },
    #[error("D = {d} is not a non-residue modulo the prime {p} of n2")]
    DNotNonResidueModN2 { d: u64, p: u64 },
    #[error("divisor mask {mask:#b} is not a special divisor of D = {d}")]
    NotSpecialDivisor { mask: u64, d: u64 },
    #[error("special divisors of D = {0} are not XOR-closed; the subspace law is falsified")]
    ClosureFalsified(u64),
    #[error("brute-force and kernel special-divisor computations disagree for D = {0}")]
    RouteMismatch(u64),
    #[error("character subset outside the prime index range")]
    BadCharacterSubset,
    #[error("character subset over n2 must have even cardinality")]
    OddN2Subset,
    #[error("kernel route requires ω(D) ≥ 1")]
    KernelNeedsPrime,
}

/// A divisor of D encoded by the bit mask of the primes it contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DivisorCode(pub u64);

impl DivisorCode {
    /// Numeric value of the encoded divisor.
    pub fn value(self, d: &FactoredOdd) -> u64 {
        d.primes()
            .iter()
            .enumerate()
            .filter(|(i, _)| self.0 >> i & 1 == 1)
            .map(|(_, &p)| p)
            .product()
    }
}

/// The set S(D) of special divisors, stored as a canonical subspace of
/// F₂^{ω(D)} over divisor masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialSpace {
    d: FactoredOdd,
    space: Subspace,
}

impl SpecialSpace {
    pub fn d(&self) -> &FactoredOdd {
        &self.d
    }

    pub fn space(&self) -> &Subspace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// #S(D) = 2^dim.
    pub fn size(&self) -> u64 {
        1u64 << self.dim()
    }

    /// Dimension of S(D)/{1, D}; the all-ones mask (divisor D) is quotiented
    /// out, which is the zero mask only when D = 1.
    pub fn quotient_dim(&self) -> usize {
        if self.d.omega() == 0 {
            0
        } else {
            self.dim() - 1
        }
    }

    /// The special divisors as integers, ascending.
    pub fn divisors(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .space
            .elements()
            .into_iter()
            .map(|m| DivisorCode(m).value(&self.d))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn codes(&self) -> Vec<DivisorCode> {
        self.space.elements().into_iter().map(DivisorCode).collect()
    }

    pub fn contains(&self, code: DivisorCode) -> bool {
        self.space.contains(code.0)
    }
}

/// Bit i of column j: jacobi(p_i, p_j) = −1 (i ≠ j); used by both routes.
fn negative_sign_columns(d: &FactoredOdd) -> Vec<u64> {
    let ps = d.primes();
    let w = ps.len();
    let mut cols = vec![0u64; w];
    for j in 0..w {
        for i in 0..w {
            if i != j && jacobi(ps[i] as i64, ps[j]).unwrap() == -1 {
                cols[j] |= 1 << i;
            }
        }
    }
    cols
}

/// Scan all 2^ω(D) divisors, testing the defining two-sided square condition
/// per prime; the collected set is verified XOR-closed (a failure would
/// falsify the subspace law and is reported as fatal, never repaired).
pub fn special_divisors_bruteforce(d: &FactoredOdd) -> Result<SpecialSpace, SpecialDivError> {
    let w = d.omega();
    let cols = negative_sign_columns(d);
    let full = if w == 0 { 0 } else { (1u64 << w) - 1 };
    let mut masks = Vec::new();
    'mask: for m in 0..(1u64 << w) {
        for (j, &col) in cols.iter().enumerate() {
            let relevant = if m >> j & 1 == 0 { m } else { !m & full };
            if (col & relevant).count_ones() % 2 == 1 {
                continue 'mask;
            }
        }
        masks.push(m);
    }
    let set: std::collections::HashSet<u64> = masks.iter().copied().collect();
    if !set.contains(&0) || !set.contains(&full) {
        return Err(SpecialDivError::ClosureFalsified(d.value()));
    }
    for &a in &masks {
        for &b in &masks {
            if !set.contains(&(a ^ b)) {
                return Err(SpecialDivError::ClosureFalsified(d.value()));
            }
        }
    }
    let space = Subspace::from_vectors(w, &masks);
    if 1u64 << space.dim() != masks.len() as u64 {
        return Err(SpecialDivError::ClosureFalsified(d.value()));
    }
    Ok(SpecialSpace { d: d.clone(), space })
}

/// Linear route: the ω×ω matrix B over F₂ with B_ij = [jacobi(p_i, p_j) = −1]
/// off the diagonal and B_jj = Σ_{i≠j} B_ij; S(D) is the kernel of Bᵀ.
pub fn special_divisors_kernel(d: &FactoredOdd) -> Result<SpecialSpace, SpecialDivError> {
    let w = d.omega();
    if w == 0 {
        return Err(SpecialDivError::KernelNeedsPrime);
    }
    let cols = negative_sign_columns(d);
    let mut b = BitMatrix::zero(w, w);
    for j in 0..w {
        for i in 0..w {
            if i != j && cols[j] >> i & 1 == 1 {
                b.set(i, j, true);
            }
        }
        let diag = cols[j].count_ones() % 2 == 1;
        b.set(j, j, diag);
    }
    let space = b.transpose().kernel();
    Ok(SpecialSpace { d: d.clone(), space })
}

/// Compute S(D) by both routes and require exact agreement. D = 1 falls back
/// to the (trivially correct) brute-force scan.
pub fn special_divisors_checked(d: &FactoredOdd) -> Result<SpecialSpace, SpecialDivError> {
    let brute = special_divisors_bruteforce(d)?;
    if d.omega() == 0 {
        return Ok(brute);
    }
    let kernel = special_divisors_kernel(d)?;
    if brute.space != kernel.space {
        return Err(SpecialDivError::RouteMismatch(d.value()));
    }
    Ok(brute)
}

/// The pair of auxiliary moduli (n₁, n₂) presenting the sign group
/// G_{n1} × G̃_{n2} and its character set. Characters of G_{n1} correspond to
/// arbitrary subsets of the primes of n₁; characters of the reduced group
/// G̃_{n2} to even-cardinality subsets of the primes of n₂.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetGroup {
    n1: FactoredOdd,
    n2: FactoredOdd,
}

impl TargetGroup {
    pub fn new(n1: FactoredOdd, n2: FactoredOdd) -> Result<Self, SpecialDivError> {
        if !n1.is_coprime_to(&n2) {
            return Err(SpecialDivError::ModuliNotCoprime(n1.value(), n2.value()));
        }
        Ok(TargetGroup { n1, n2 })
    }

    pub fn n1(&self) -> &FactoredOdd {
        &self.n1
    }

    pub fn n2(&self) -> &FactoredOdd {
        &self.n2
    }

    /// Dimension of the sign space: ω(n₁) + max(ω(n₂) − 1, 0).
    pub fn ambient_dim(&self) -> usize {
        self.n1.omega() + self.n2.omega().saturating_sub(1)
    }

    /// All primes of n₁ followed by all primes of n₂.
    pub fn target_primes(&self) -> Vec<u64> {
        let mut ps = self.n1.primes().to_vec();
        ps.extend_from_slice(self.n2.primes());
        ps
    }

    pub fn trivial_character(&self) -> CharacterIndex {
        CharacterIndex { s1: 0, s2: 0 }
    }

    /// The full dual group, 2^{ambient_dim} characters, in a fixed order
    /// (n₁-subset major, even n₂-subset minor). The trivial character is
    /// first.
    pub fn characters(&self) -> Vec<CharacterIndex> {
        let w1 = self.n1.omega();
        let w2 = self.n2.omega();
        let mut out = Vec::new();
        for s1 in 0..(1u64 << w1) {
            for s2 in 0..(1u64 << w2) {
                if s2.count_ones() % 2 == 0 {
                    out.push(CharacterIndex { s1, s2 });
                }
            }
        }
        out
    }

    pub fn character(&self, s1: u64, s2: u64) -> Result<CharacterIndex, SpecialDivError> {
        if s1 >> self.n1.omega() != 0 || s2 >> self.n2.omega() != 0 {
            return Err(SpecialDivError::BadCharacterSubset);
        }
        if s2.count_ones() % 2 == 1 {
            return Err(SpecialDivError::OddN2Subset);
        }
        Ok(CharacterIndex { s1, s2 })
    }
}

/// A quadratic character of G_{n1} × G̃_{n2}: χ(x) = ∏ jacobi(x, p) over the
/// selected primes. The n₂-subset is even so that χ kills the reduced line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharacterIndex {
    s1: u64,
    s2: u64,
}

impl CharacterIndex {
    pub fn subsets(&self) -> (u64, u64) {
        (self.s1, self.s2)
    }

    pub fn is_trivial(&self) -> bool {
        self.s1 == 0 && self.s2 == 0
    }

    /// The linear functional on the sign space that evaluates χ on φ-images:
    /// χ(φ(d)) = (−1)^{parity(functional ∧ image)}.
    pub fn functional(&self, tg: &TargetGroup) -> u64 {
        // n₂ images are canonicalised with first coordinate +1, so an even
        // subset evaluates through the remaining ω(n₂)−1 stored coordinates.
        let w1 = tg.n1.omega();
        self.s1 | (self.s2 >> 1) << w1
    }

    /// χ at an integer coprime to the selected primes.
    pub fn eval_int(&self, tg: &TargetGroup, x: i64) -> Result<i32, SpecialDivError> {
        let mut v = 1i32;
        for (i, &p) in tg.n1.primes().iter().enumerate() {
            if self.s1 >> i & 1 == 1 {
                v *= jacobi(x, p)?;
            }
        }
        for (i, &p) in tg.n2.primes().iter().enumerate() {
            if self.s2 >> i & 1 == 1 {
                v *= jacobi(x, p)?;
            }
        }
        Ok(v)
    }

    /// Stable display name: "chi1" for the trivial character, otherwise
    /// "chi" followed by the selected primes joined by underscores.
    pub fn name(&self, tg: &TargetGroup) -> String {
        let mut primes: Vec<u64> = Vec::new();
        for (i, &p) in tg.n1.primes().iter().enumerate() {
            if self.s1 >> i & 1 == 1 {
                primes.push(p);
            }
        }
        for (i, &p) in tg.n2.primes().iter().enumerate() {
            if self.s2 >> i & 1 == 1 {
                primes.push(p);
            }
        }
        if primes.is_empty() {
            return "chi1".to_string();
        }
        primes.sort_unstable();
        let parts: Vec<String> = primes.iter().map(|p| p.to_string()).collect();
        format!("chi{}", parts.join("_"))
    }
}

/// The sign map φ from S(D) into F₂^{ambient}, with preconditions checked
/// once at construction. Images are canonical (first n₂ coordinate forced to
/// +1) and the map is linear on divisor masks, so images of arbitrary special
/// divisors combine from the basis images.
pub struct PhiMap<'a> {
    space: &'a SpecialSpace,
    tg: &'a TargetGroup,
    /// Raw sign rows per prime of D over the ω(n1)+ω(n2) target primes.
    basis_images: Vec<u64>,
}

impl<'a> PhiMap<'a> {
    pub fn new(space: &'a SpecialSpace, tg: &'a TargetGroup) -> Result<Self, SpecialDivError> {
        let d = space.d();
        let n = tg.n1.value() * tg.n2.value();
        if num_integer::gcd(d.value(), n) != 1 {
            return Err(SpecialDivError::DNotCoprime { d: d.value(), n });
        }
        if !is_square_mod(d.value() as i64, &tg.n1)? {
            return Err(SpecialDivError::DNotSquareModN1 { d: d.value(), n1: tg.n1.value() });
        }
        for &p in tg.n2.primes() {
            if jacobi(d.value() as i64, p)? != -1 {
                return Err(SpecialDivError::DNotNonResidueModN2 { d: d.value(), p });
            }
        }
        let w1 = tg.n1.omega();
        let w2 = tg.n2.omega();
        let targets = tg.target_primes();
        // Raw sign row for each prime of D.
        let mut rows = Vec::with_capacity(d.omega());
        for &q in d.primes() {
            let mut row = 0u64;
            for (t, &p) in targets.iter().enumerate() {
                if jacobi(q as i64, p)? == -1 {
                    row |= 1 << t;
                }
            }
            rows.push(row);
        }
        // Canonicalise and project each basis mask of S(D).
        let flip: u64 = ((1u64 << w2) - 1) << w1;
        let canonical = |raw: u64| -> u64 {
            let raw = if w2 > 0 && raw >> w1 & 1 == 1 { raw ^ flip } else { raw };
            let lo = raw & ((1u64 << w1) - 1);
            let hi = if w2 > 1 { (raw >> (w1 + 1)) << w1 } else { 0 };
            lo | hi
        };
        let basis_images = space
            .space()
            .basis()
            .iter()
            .map(|&mask| {
                let mut raw = 0u64;
                for (i, &row) in rows.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        raw ^= row;
                    }
                }
                canonical(raw)
            })
            .collect();
        Ok(PhiMap { space, tg, basis_images })
    }

    pub fn target_group(&self) -> &TargetGroup {
        self.tg
    }

    pub fn ambient_dim(&self) -> usize {
        self.tg.ambient_dim()
    }

    /// Canonical sign vector of a special divisor.
    pub fn image(&self, code: DivisorCode) -> Result<u64, SpecialDivError> {
        // Express the mask over the echelon basis; reduction mirrors
        // Subspace::contains but records which basis rows were used.
        let mut rem = code.0;
        let mut img = 0u64;
        for (i, &b) in self.space.space().basis().iter().enumerate() {
            let pivot = b & b.wrapping_neg();
            if rem & pivot != 0 {
                rem ^= b;
                img ^= self.basis_images[i];
            }
        }
        if rem != 0 {
            return Err(SpecialDivError::NotSpecialDivisor {
                mask: code.0,
                d: self.space.d().value(),
            });
        }
        Ok(img)
    }

    /// Im(φ): the span of the basis images.
    pub fn image_subspace(&self) -> Subspace {
        Subspace::from_vectors(self.ambient_dim(), &self.basis_images)
    }

    /// m_χ(D): the number of special divisors d (over the full S(D)) with
    /// χ(φ(d)) = 1. Counted from the definition; always even because the
    /// {d, D⊙d} pairs share a value.
    pub fn m_chi(&self, chi: &CharacterIndex) -> u64 {
        let f = chi.functional(self.tg);
        let dim = self.space.dim();
        let mut count = 0u64;
        let mut img = 0u64;
        for sel in 0u64..(1u64 << dim) {
            // Gray-code walk over the subspace.
            if sel != 0 {
                img ^= self.basis_images[sel.trailing_zeros() as usize];
            }
            if (f & img).count_ones() % 2 == 0 {
                count += 1;
            }
        }
        count
    }
}

/// φ as a one-shot operation (preconditions re-checked per call).
pub fn phi(
    space: &SpecialSpace,
    tg: &TargetGroup,
    code: DivisorCode,
) -> Result<u64, SpecialDivError> {
    PhiMap::new(space, tg)?.image(code)
}

/// m_χ as a one-shot operation.
pub fn m_chi(
    space: &SpecialSpace,
    tg: &TargetGroup,
    chi: &CharacterIndex,
) -> Result<u64, SpecialDivError> {
    Ok(PhiMap::new(space, tg)?.m_chi(chi))
}

/// Im(φ) as a one-shot operation.
pub fn image_of_phi(space: &SpecialSpace, tg: &TargetGroup) -> Result<Subspace, SpecialDivError> {
    Ok(PhiMap::new(space, tg)?.image_subspace())
}

/// The twisted double divisor sum
/// A_χ(D) = Σ_{a'b' = D} χ(a') (Σ_{c'|b'} (a'/c')) (Σ_{d'|a'} (b'/d'))
/// with Jacobi-symbol summands, evaluated exactly. Satisfies
/// m_χ(D) = 2^{−ω(D)} (A₁(D) + A_χ(D)) / 2.
pub fn a_chi(
    d: &FactoredOdd,
    tg: &TargetGroup,
    chi: &CharacterIndex,
) -> Result<i64, SpecialDivError> {
    // Same admissibility as φ, minus any divisor membership.
    let n = tg.n1.value() * tg.n2.value();
    if num_integer::gcd(d.value(), n) != 1 {
        return Err(SpecialDivError::DNotCoprime { d: d.value(), n });
    }
    if !is_square_mod(d.value() as i64, &tg.n1)? {
        return Err(SpecialDivError::DNotSquareModN1 { d: d.value(), n1: tg.n1.value() });
    }
    for &p in tg.n2.primes() {
        if jacobi(d.value() as i64, p)? != -1 {
            return Err(SpecialDivError::DNotNonResidueModN2 { d: d.value(), p });
        }
    }
    let w = d.omega();
    let full = if w == 0 { 0u64 } else { (1u64 << w) - 1 };
    // neg_to[j]: bits i with jacobi(p_i, p_j) = −1, so the symbol (x/y) for
    // divisor masks X, Y is (−1)^{Σ_{j∈Y} |neg_to[j] ∧ X|}.
    let neg_to = negative_sign_columns(d);
    // χ at each prime of D.
    let mut chi_neg = 0u64;
    for (i, &q) in d.primes().iter().enumerate() {
        if chi.eval_int(tg, q as i64)? == -1 {
            chi_neg |= 1 << i;
        }
    }
    let symbol = |x: u64, y: u64| -> i64 {
        let mut par = 0u32;
        let mut rest = y;
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            par ^= (neg_to[j] & x).count_ones() & 1;
        }
        if par & 1 == 1 {
            -1
        } else {
            1
        }
    };
    let mut total = 0i64;
    for a in 0..=full {
        let b = full & !a;
        let chi_a: i64 = if (chi_neg & a).count_ones() % 2 == 1 { -1 } else { 1 };
        // Σ over c' | b' of (a'/c').
        let mut inner1 = 0i64;
        let mut c = b;
        loop {
            inner1 += symbol(a, c);
            if c == 0 {
                break;
            }
            c = (c - 1) & b;
        }
        // Σ over d' | a' of (b'/d').
        let mut inner2 = 0i64;
        let mut e = a;
        loop {
            inner2 += symbol(b, e);
            if e == 0 {
                break;
            }
            e = (e - 1) & a;
        }
        total += chi_a * inner1 * inner2;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(n: u64) -> FactoredOdd {
        FactoredOdd::new(n).unwrap()
    }

    fn tg(n1: u64, n2: u64) -> TargetGroup {
        TargetGroup::new(f(n1), f(n2)).unwrap()
    }

    #[test]
    fn special_divisors_small_cases() {
        assert_eq!(special_divisors_bruteforce(&f(7)).unwrap().divisors(), vec![1, 7]);
        assert_eq!(special_divisors_bruteforce(&f(21)).unwrap().divisors(), vec![1, 21]);
        assert_eq!(special_divisors_bruteforce(&f(39)).unwrap().divisors(), vec![1, 3, 13, 39]);
        assert_eq!(special_divisors_bruteforce(&f(39)).unwrap().dim(), 2);
        assert_eq!(special_divisors_bruteforce(&f(15)).unwrap().divisors(), vec![1, 15]);
        assert_eq!(special_divisors_bruteforce(&f(1)).unwrap().divisors(), vec![1]);
        assert_eq!(special_divisors_bruteforce(&f(1)).unwrap().quotient_dim(), 0);
        assert_eq!(special_divisors_bruteforce(&f(7)).unwrap().quotient_dim(), 0);
        assert_eq!(special_divisors_bruteforce(&f(39)).unwrap().quotient_dim(), 1);
    }

    #[test]
    fn kernel_route_matches_brute_force() {
        // D = 39: both off-diagonal symbols +1 → B = 0 → kernel full.
        assert_eq!(special_divisors_kernel(&f(39)).unwrap().space().dim(), 2);
        // D = 21 and 15: kernel spanned by (1,1).
        assert_eq!(
            special_divisors_kernel(&f(21)).unwrap().space(),
            &Subspace::from_vectors(2, &[0b11])
        );
        assert_eq!(
            special_divisors_kernel(&f(15)).unwrap().space(),
            &Subspace::from_vectors(2, &[0b11])
        );
        assert!(special_divisors_kernel(&f(1)).is_err());
        // Agreement on every odd squarefree D ≤ 3000.
        for n in (3..=3000u64).step_by(2) {
            if let Ok(d) = FactoredOdd::new(n) {
                assert!(special_divisors_checked(&d).is_ok(), "D = {n}");
            }
        }
    }

    #[test]
    fn target_group_and_characters() {
        let t = tg(5, 21);
        assert_eq!(t.ambient_dim(), 2);
        let chars = t.characters();
        assert_eq!(chars.len(), 4);
        assert!(chars[0].is_trivial());
        assert_eq!(chars[0].name(&t), "chi1");
        // Even n₂-subsets only.
        for c in &chars {
            assert_eq!(c.subsets().1.count_ones() % 2, 0);
        }
        let t21 = tg(1, 21);
        assert_eq!(t21.ambient_dim(), 1);
        assert_eq!(t21.characters().len(), 2);
        assert_eq!(t21.characters()[1].name(&t21), "chi3_7");
        assert!(t21.character(0, 0b01).is_err());
        assert!(TargetGroup::new(f(15), f(21)).is_err());
    }

    #[test]
    fn phi_preconditions_and_values() {
        let s39 = special_divisors_bruteforce(&f(39)).unwrap();
        let t5 = tg(5, 1);
        // 39 ≡ 4 mod 5 is a square, so the map exists.
        let pm = PhiMap::new(&s39, &t5).unwrap();
        assert_eq!(pm.image(DivisorCode(0)).unwrap(), 0);
        assert_eq!(pm.image(DivisorCode(0b11)).unwrap(), 0); // φ(D) = identity
        assert_eq!(pm.image(DivisorCode(0b01)).unwrap(), 1); // (3/5) = −1
        // d = 3 is not special for D = 21, so its code is rejected.
        let s21 = special_divisors_bruteforce(&f(21)).unwrap();
        let pm21 = PhiMap::new(&s21, &t5).unwrap();
        assert!(matches!(
            pm21.image(DivisorCode(0b01)),
            Err(SpecialDivError::NotSpecialDivisor { .. })
        ));
        // Precondition failures are named.
        let t13 = tg(13, 1);
        assert!(matches!(
            PhiMap::new(&s39, &t13),
            Err(SpecialDivError::DNotCoprime { .. })
        ));
        let t7 = tg(7, 1);
        assert!(PhiMap::new(&s39, &t7).is_ok()); // 39 ≡ 4 mod 7, square
        let s35 = special_divisors_bruteforce(&f(35)).unwrap();
        let t3 = tg(3, 1);
        assert!(matches!(
            PhiMap::new(&s35, &t3),
            Err(SpecialDivError::DNotSquareModN1 { .. })
        )); // 35 ≡ 2 mod 3 is a non-residue
        let t_n2 = tg(1, 5);
        let s11 = special_divisors_bruteforce(&f(11)).unwrap();
        assert!(matches!(
            PhiMap::new(&s11, &t_n2),
            Err(SpecialDivError::DNotNonResidueModN2 { p: 5, .. })
        )); // 11 ≡ 1 mod 5 is a residue, but n2 primes demand −1
    }

    #[test]
    fn phi_sign_examples() {
        // D = 55, n1 = 13: 55 ≡ 3 mod 13 is a square; (5/13) = −1.
        let s55 = special_divisors_bruteforce(&f(55)).unwrap();
        assert_eq!(s55.divisors(), vec![1, 5, 11, 55]);
        let t13 = tg(13, 1);
        let pm = PhiMap::new(&s55, &t13).unwrap();
        assert_eq!(pm.image(DivisorCode(0b01)).unwrap(), 1); // d = 5
    }

    #[test]
    fn phi_is_a_homomorphism() {
        // φ(d₁⊙d₂) = φ(d₁)·φ(d₂) over a long scan of admissible (D, d₁, d₂).
        let t5 = tg(5, 1);
        let mut checked = 0u32;
        for n in (3..2000u64).step_by(2) {
            let Ok(d) = FactoredOdd::new(n) else { continue };
            let s = special_divisors_bruteforce(&d).unwrap();
            let Ok(pm) = PhiMap::new(&s, &t5) else { continue };
            let codes = s.codes();
            for &c1 in &codes {
                for &c2 in &codes {
                    let lhs = pm.image(DivisorCode(c1.0 ^ c2.0)).unwrap();
                    let rhs = pm.image(c1).unwrap() ^ pm.image(c2).unwrap();
                    assert_eq!(lhs, rhs);
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn m_chi_values() {
        let s39 = special_divisors_bruteforce(&f(39)).unwrap();
        let t5 = tg(5, 1);
        let chars = t5.characters();
        assert_eq!(m_chi(&s39, &t5, &chars[0]).unwrap(), 4); // trivial: #S(39)
        assert_eq!(m_chi(&s39, &t5, &chars[1]).unwrap(), 2); // (·/5)
        let s55 = special_divisors_bruteforce(&f(55)).unwrap();
        let t13 = tg(13, 1);
        assert_eq!(m_chi(&s55, &t13, &t13.characters()[1]).unwrap(), 2);
    }

    #[test]
    fn image_of_phi_cases() {
        let t5 = tg(5, 1);
        let s7 = special_divisors_bruteforce(&f(7)).unwrap();
        // D prime ≡ square mod 5: quotient trivial → image {0}.
        // 7 ≡ 2 mod 5 is not a square, pick D = 11 ≡ 1 instead.
        assert!(PhiMap::new(&s7, &t5).is_err());
        let s11 = special_divisors_bruteforce(&f(11)).unwrap();
        assert_eq!(image_of_phi(&s11, &t5).unwrap().dim(), 0);
        let s39 = special_divisors_bruteforce(&f(39)).unwrap();
        assert_eq!(image_of_phi(&s39, &t5).unwrap().dim(), 1);
        let t7 = tg(7, 1);
        assert_eq!(image_of_phi(&s39, &t7).unwrap().dim(), 1); // (3/7) = −1
    }

    #[test]
    fn a_chi_values_and_identity() {
        let t5 = tg(5, 1);
        let chars5 = t5.characters();
        assert_eq!(a_chi(&f(39), &t5, &chars5[0]).unwrap(), 16);
        assert_eq!(a_chi(&f(39), &t5, &chars5[1]).unwrap(), 0);
        // D prime, trivial χ → 4. (11 ≡ 1 mod 5 is admissible.)
        assert_eq!(a_chi(&f(11), &t5, &chars5[0]).unwrap(), 4);

        // m_χ(D) = 2^{−ω(D)} (A₁(D) + A_χ(D)) / 2 across a grid.
        for (n1, n2) in [(5u64, 1u64), (7, 1), (1, 21), (5, 21)] {
            let t = tg(n1, n2);
            for n in (3..1200u64).step_by(2) {
                let Ok(d) = FactoredOdd::new(n) else { continue };
                let s = special_divisors_bruteforce(&d).unwrap();
                let Ok(pm) = PhiMap::new(&s, &t) else { continue };
                let a1 = a_chi(&d, &t, &t.trivial_character()).unwrap();
                for chi in t.characters() {
                    let ax = a_chi(&d, &t, &chi).unwrap();
                    let sum = a1 + ax;
                    let denom = 1i64 << (d.omega() + 1);
                    assert_eq!(sum.rem_euclid(denom), 0, "divisibility D={n}");
                    assert_eq!(pm.m_chi(&chi) as i64, sum / denom, "identity D={n}");
                }
            }
        }
    }

    #[test]
    fn m_chi_is_all_or_half() {
        let t = tg(5, 21);
        for n in (3..3000u64).step_by(2) {
            let Ok(d) = FactoredOdd::new(n) else { continue };
            let s = special_divisors_bruteforce(&d).unwrap();
            let Ok(pm) = PhiMap::new(&s, &t) else { continue };
            for chi in t.characters() {
                let m = pm.m_chi(&chi);
                assert!(m == s.size() || m == s.size() / 2);
                assert_eq!(m % 2, 0);
            }
            assert_eq!(pm.m_chi(&t.trivial_character()), s.size());
        }
    }
}
