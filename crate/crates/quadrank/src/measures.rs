//! Exact evaluators for the predicted masses, moments, and averages: the
//! Cohen–Lenstra η-products and rank masses, Hom/epi counts, the
//! character-sampling generation probabilities, the mixed-moment and joint
//! 4-rank laws, the odd-p ray class averages, and the closed-form unit-group
//! identity with its truncated verification.
//!
//! Masses are carried symbolically as (exact rational) × η_∞(M)^power so
//! that ratios of predicted masses stay exact; only final rendering is
//! floating-point.

use crate::arith::is_prime_u64;
use crate::gf2::{enumerate_subspaces, gaussian_binomial, moebius, n2, Gf2Error, Subspace};
use crate::specialdiv::{CharacterIndex, SpecialDivError, TargetGroup};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeasuresError {
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error(transparent)]
    SpecialDiv(#[from] SpecialDivError),
    #[error("η base must be ≥ 2, got {0}")]
    BadEtaBase(u64),
    #[error("ambient dual dimension {0} exceeds the enumeration guard {1}")]
    AmbientGuard(usize, usize),
    #[error("exponent vector has {got} entries but the dual group has {want}")]
    KVectorLength { got: usize, want: usize },
    #[error("ambient mismatch: k-vector over F₂^{0}, subspace in F₂^{1}")]
    KVectorAmbient(usize, usize),
    #[error("{0} is not an odd prime")]
    NotOddPrime(u64),
    #[error("modulus must be positive")]
    ZeroModulus,
    #[error("local prime {0} is not supported (must be a prime distinct from p and pairwise distinct)")]
    BadLocalPrime(u64),
    #[error("brute-force automorphism count too large: needs {0} matrix candidates")]
    OracleTooLarge(u128),
    #[error("truncation {truncation} too small to certify: tail bound {tail:.3e} ≥ {need:.0e}")]
    TruncationTooSmall { truncation: u32, tail: f64, need: f64 },
    #[error("masses with different η factors cannot be combined: ({0},{1}) vs ({2},{3})")]
    MassShapeMismatch(u64, u32, u64, u32),
}

/// Stop the η_∞ product once M^{-i} drops below this.
const ETA_TRUNC_EPS: f64 = 1e-16;
/// Certified absolute error of the truncated η_∞ value.
pub const ETA_INF_ERROR_BOUND: f64 = 1e-12;
/// Default rank truncation for the complete laws; the μ_CL tail beyond is
/// far below every tolerance used.
pub const RANK_TRUNCATION: u32 = 40;

/// η_s(M) = ∏_{i=1}^{s} (1 − M^{-i}), exact for finite s, truncated with a
/// certified bound for s = ∞ (`s = None`).
#[derive(Debug, Clone, PartialEq)]
pub enum EtaValue {
    Finite { s: u32, base: u64, exact: BigRational },
    Infinite { base: u64, approx: f64, error_bound: f64 },
}

impl EtaValue {
    pub fn approx(&self) -> f64 {
        match self {
            EtaValue::Finite { exact, .. } => rational_to_f64(exact),
            EtaValue::Infinite { approx, .. } => *approx,
        }
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            EtaValue::Finite { exact, .. } => Some(exact),
            EtaValue::Infinite { .. } => None,
        }
    }
}

pub fn eta(s: Option<u32>, base: u64) -> Result<EtaValue, MeasuresError> {
    if base < 2 {
        return Err(MeasuresError::BadEtaBase(base));
    }
    match s {
        Some(s) => Ok(EtaValue::Finite { s, base, exact: eta_finite(s, base) }),
        None => Ok(EtaValue::Infinite {
            base,
            approx: eta_infinity_approx(base),
            error_bound: ETA_INF_ERROR_BOUND,
        }),
    }
}

/// Exact η_s(M) for finite s.
pub fn eta_finite(s: u32, base: u64) -> BigRational {
    let mut out = BigRational::one();
    let b = BigInt::from(base);
    let mut pow = BigInt::one();
    for _ in 1..=s {
        pow *= &b;
        out *= BigRational::one() - BigRational::new(BigInt::one(), pow.clone());
    }
    out
}

/// Truncated η_∞(M): factors are included while M^{-i} ≥ 1e-16, which keeps
/// the dropped tail (and accumulated rounding) below `ETA_INF_ERROR_BOUND`.
pub fn eta_infinity_approx(base: u64) -> f64 {
    let mut out = 1.0f64;
    let mut term = 1.0f64;
    let b = base as f64;
    loop {
        term /= b;
        if term < ETA_TRUNC_EPS {
            return out;
        }
        out *= 1.0 - term;
    }
}

/// Convert an exact rational to f64 without overflowing on huge numerators
/// or denominators (both are rescaled by a common power of two first).
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.numer().is_zero() {
        return 0.0;
    }
    let nb = r.numer().bits() as i64;
    let db = r.denom().bits() as i64;
    let ns = (nb - 100).max(0) as usize;
    let ds = (db - 100).max(0) as usize;
    let n = (r.numer() >> ns).to_f64().unwrap();
    let d = (r.denom() >> ds).to_f64().unwrap();
    (n / d) * 2f64.powi(ns as i32 - ds as i32)
}

/// A predicted mass: coeff · η_∞(base)^power. Ratios of same-shape masses
/// are exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mass {
    coeff: BigRational,
    base: u64,
    power: u32,
}

impl Mass {
    pub fn new(coeff: BigRational, base: u64, power: u32) -> Self {
        Mass { coeff, base, power }
    }

    pub fn zero(base: u64, power: u32) -> Self {
        Mass { coeff: BigRational::zero(), base, power }
    }

    pub fn coeff(&self) -> &BigRational {
        &self.coeff
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn power(&self) -> u32 {
        self.power
    }

    pub fn approx(&self) -> f64 {
        rational_to_f64(&self.coeff) * eta_infinity_approx(self.base).powi(self.power as i32)
    }

    pub fn scale(&self, r: &BigRational) -> Mass {
        Mass { coeff: &self.coeff * r, base: self.base, power: self.power }
    }

    /// Exact ratio of two masses sharing the same η factor.
    pub fn ratio(&self, other: &Mass) -> Result<BigRational, MeasuresError> {
        if self.base != other.base || self.power != other.power {
            return Err(MeasuresError::MassShapeMismatch(
                self.base,
                self.power,
                other.base,
                other.power,
            ));
        }
        Ok(&self.coeff / &other.coeff)
    }

    pub fn add(&self, other: &Mass) -> Result<Mass, MeasuresError> {
        if self.coeff.is_zero() {
            return Ok(other.clone());
        }
        if other.coeff.is_zero() {
            return Ok(self.clone());
        }
        if self.base != other.base || self.power != other.power {
            return Err(MeasuresError::MassShapeMismatch(
                self.base,
                self.power,
                other.base,
                other.power,
            ));
        }
        Ok(Mass { coeff: &self.coeff + &other.coeff, base: self.base, power: self.power })
    }
}

/// μ_CL mass of {p-groups of p-rank j}: η_∞(p) / (η_j(p)² p^{j²}).
pub fn mu_cl_rank_mass(p: u64, j: u32) -> Result<Mass, MeasuresError> {
    if p < 2 {
        return Err(MeasuresError::BadEtaBase(p));
    }
    let etaj = eta_finite(j, p);
    let denom = &etaj * &etaj * BigRational::from(BigInt::from(p).pow(j * j));
    Ok(Mass::new(denom.recip(), p, 1))
}

/// #{surjections F_p^j ↠ F_p^r} = ∏_{i=0}^{r−1} (p^j − p^i); zero when
/// r > j.
pub fn count_epi(p: u64, j: u32, r: u32) -> BigUint {
    let pj = BigInt::from(p).pow(j);
    let mut out = BigInt::one();
    for i in 0..r {
        out *= &pj - BigInt::from(p).pow(i);
    }
    out.max(BigInt::zero()).to_biguint().unwrap_or_else(BigUint::zero)
}

/// #{φ ∈ Hom(F_p^j, F_p^s) : rank φ = r} = [s choose r]_p · #epi(F_p^j, F_p^r);
/// zero outside 0 ≤ r ≤ min(j, s).
pub fn count_hom_rank(p: u64, j: u32, s: u32, r: u32) -> BigUint {
    if r > s || r > j {
        return BigUint::zero();
    }
    gaussian_binomial(s as u64, r as u64, p) * count_epi(p, j, r)
}

/// Per-character sampling exponents k_χ over a TargetGroup's dual, stored in
/// the group's fixed character order together with each character's linear
/// functional on the sign space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KVector {
    ambient: usize,
    /// (functional mask, exponent), one entry per dual character.
    entries: Vec<(u64, u32)>,
}

impl KVector {
    pub fn new(tg: &TargetGroup, exps: &[u32]) -> Result<Self, MeasuresError> {
        let chars = tg.characters();
        if exps.len() != chars.len() {
            return Err(MeasuresError::KVectorLength { got: exps.len(), want: chars.len() });
        }
        let entries = chars
            .iter()
            .zip(exps)
            .map(|(c, &k)| (c.functional(tg), k))
            .collect();
        Ok(KVector { ambient: tg.ambient_dim(), entries })
    }

    pub fn zero(tg: &TargetGroup) -> Self {
        KVector {
            ambient: tg.ambient_dim(),
            entries: tg.characters().iter().map(|c| (c.functional(tg), 0)).collect(),
        }
    }

    /// Build from sparse (character, exponent) pairs; unlisted characters
    /// get exponent 0.
    pub fn from_pairs(
        tg: &TargetGroup,
        pairs: &[(CharacterIndex, u32)],
    ) -> Result<Self, MeasuresError> {
        let chars = tg.characters();
        let mut exps = vec![0u32; chars.len()];
        for (chi, k) in pairs {
            let idx = chars.iter().position(|c| c == chi).ok_or(
                MeasuresError::KVectorLength { got: pairs.len(), want: chars.len() },
            )?;
            exps[idx] += k;
        }
        KVector::new(tg, &exps)
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn exponents(&self) -> Vec<u32> {
        self.entries.iter().map(|&(_, k)| k).collect()
    }

    /// |k|₁ = Σ_χ k_χ.
    pub fn total(&self) -> u32 {
        self.entries.iter().map(|&(_, k)| k).sum()
    }

    /// Σ of k_χ over characters whose functional lies outside V.
    pub fn sum_outside(&self, v: &Subspace) -> u32 {
        self.entries
            .iter()
            .filter(|&&(f, _)| !v.contains(f))
            .map(|&(_, k)| k)
            .sum()
    }

    pub fn entries(&self) -> &[(u64, u32)] {
        &self.entries
    }
}

const PROB_AMBIENT_GUARD: usize = 5;
const EXHAUSTIVE_AMBIENT_GUARD: usize = 4;

/// P_(k)(Y): probability that a random subset of the dual — each character χ
/// included independently with probability 1 − 2^{−k_χ} — spans exactly Y.
/// Computed by Möbius inversion over the subspace lattice:
/// Σ_{V ⊆ Y} μ(V, Y) · 2^{−Σ_{χ∉V} k_χ}.
pub fn prob_generate(k: &KVector, y: &Subspace) -> Result<BigRational, MeasuresError> {
    if k.ambient() != y.ambient() {
        return Err(MeasuresError::KVectorAmbient(k.ambient(), y.ambient()));
    }
    if k.ambient() > PROB_AMBIENT_GUARD {
        return Err(MeasuresError::AmbientGuard(k.ambient(), PROB_AMBIENT_GUARD));
    }
    let mut total = BigRational::zero();
    for v in enumerate_subspaces(y.ambient())? {
        if !y.contains_subspace(&v) {
            continue;
        }
        let mu = moebius(&v, y)?;
        let weight = BigRational::new(BigInt::one(), BigInt::from(2u32).pow(k.sum_outside(&v)));
        total += BigRational::from(mu) * weight;
    }
    Ok(total)
}

/// The same probability from the definition: walk all 2^{#dual} subsets of
/// the dual, multiply the per-character inclusion probabilities, and bucket
/// by span. Exponential; a cross-check for small ambient only.
pub fn prob_generate_exhaustive(k: &KVector, y: &Subspace) -> Result<BigRational, MeasuresError> {
    if k.ambient() != y.ambient() {
        return Err(MeasuresError::KVectorAmbient(k.ambient(), y.ambient()));
    }
    if k.ambient() > EXHAUSTIVE_AMBIENT_GUARD {
        return Err(MeasuresError::AmbientGuard(k.ambient(), EXHAUSTIVE_AMBIENT_GUARD));
    }
    let entries = k.entries();
    let n = entries.len();
    let mut total = BigRational::zero();
    for subset in 0u64..(1 << n) {
        let mut p = BigRational::one();
        let mut span = Subspace::zero(k.ambient());
        for (i, &(f, kx)) in entries.iter().enumerate() {
            let inclusion = BigRational::new(BigInt::one(), BigInt::from(2u32).pow(kx));
            if subset >> i & 1 == 1 {
                p *= BigRational::one() - inclusion;
                span = span.extend(f);
            } else {
                p *= inclusion;
            }
            if p.is_zero() {
                break;
            }
        }
        if !p.is_zero() && &span == y {
            total += p;
        }
    }
    Ok(total)
}

/// Predicted mixed moment C_k = 2^{|k|₁} Σ_W P_(k)(W) · N₂(|k|₁ − dim W),
/// summed over all subspaces W of the sign space. Exact rational.
pub fn predicted_mixed_moment(k: &KVector) -> Result<BigRational, MeasuresError> {
    if k.ambient() > PROB_AMBIENT_GUARD {
        return Err(MeasuresError::AmbientGuard(k.ambient(), PROB_AMBIENT_GUARD));
    }
    let total_k = k.total();
    let mut sum = BigRational::zero();
    for w in enumerate_subspaces(k.ambient())? {
        let p = prob_generate(k, &w)?;
        if p.is_zero() {
            continue;
        }
        let subcount = n2(total_k as i64 - w.dim() as i64);
        sum += p * BigRational::from(BigInt::from(subcount));
    }
    Ok(sum * BigRational::from(BigInt::from(2u32).pow(total_k)))
}

/// Independent route to the same moment: the truncated double sum over rank
/// j and homomorphisms δ grouped by image, with model values
/// m_χ(δ) = 2^j if χ kills Im δ and 2^{j−1} otherwise:
/// 2^{|k|} Σ_j μ_CL-rank-mass(j) 2^{−js} Σ_Y #epi(F₂^j, Y) 2^{j|k| − Σ_{χ∉Y^⊥} k_χ}.
/// Returns the mass (rational coefficient × η_∞(2)).
pub fn predicted_mixed_moment_direct(k: &KVector, jmax: u32) -> Result<Mass, MeasuresError> {
    if k.ambient() > PROB_AMBIENT_GUARD {
        return Err(MeasuresError::AmbientGuard(k.ambient(), PROB_AMBIENT_GUARD));
    }
    let s = k.ambient() as u32;
    let total_k = k.total();
    // Per-subspace data is j-independent: (dim Y, Σ_{χ ∉ Y^⊥} k_χ).
    let mut shapes = Vec::new();
    for y in enumerate_subspaces(k.ambient())? {
        shapes.push((y.dim() as u32, k.sum_outside(&y.orthogonal_complement())));
    }
    let mut coeff = BigRational::zero();
    for j in 0..=jmax {
        let mass_j = mu_cl_rank_mass(2, j)?;
        let mut inner = BigRational::zero();
        for &(dim_y, outside) in &shapes {
            let epi = count_epi(2, j, dim_y);
            if epi.is_zero() {
                continue;
            }
            // 2^{j|k| − js − outside} as an exact rational.
            let e = j as i64 * total_k as i64 - (j * s) as i64 - outside as i64;
            let two = BigInt::from(2u32);
            let scale = if e >= 0 {
                BigRational::from(two.pow(e as u32))
            } else {
                BigRational::new(BigInt::one(), two.pow((-e) as u32))
            };
            inner += BigRational::from(BigInt::from(epi)) * scale;
        }
        coeff += mass_j.coeff() * inner;
    }
    Ok(Mass::new(coeff * BigRational::from(BigInt::from(2u32).pow(total_k)), 2, 1))
}

/// Predicted joint law for (2-rank j of the class group, image subspace Y of
/// the sign map): μ_CL-rank-mass(2, j) · #epi(F₂^j, Y) / 2^{j·ambient}.
pub fn predicted_pair_distribution(
    j: u32,
    y: &Subspace,
    tg: &TargetGroup,
) -> Result<Mass, MeasuresError> {
    if y.ambient() != tg.ambient_dim() {
        return Err(MeasuresError::KVectorAmbient(tg.ambient_dim(), y.ambient()));
    }
    let base = mu_cl_rank_mass(2, j)?;
    let epi = BigRational::from(BigInt::from(count_epi(2, j, y.dim() as u32)));
    let denom = BigRational::from(BigInt::from(2u32).pow(j * tg.ambient_dim() as u32));
    Ok(base.scale(&(epi / denom)))
}

/// 2-rank of the unit-side subgroup (rational residues times squares inside
/// (O/c)*/⟨−1⟩), determined by the conductor type alone: a first-factor
/// prime contributes 1 when it is 3 mod 4 (inert) and 2 when 1 mod 4
/// (split), the second-factor primes contribute 1 each minus a single shared
/// −1 identification, and every excluded prime contributes 1. Cross-checked
/// against Smith-normal-form unit-group computations in the oracle tests.
pub fn w_rank(tg: &TargetGroup, excluded: u32) -> u32 {
    let from_n1: u32 =
        tg.n1().primes().iter().map(|&l| if l % 4 == 3 { 1 } else { 2 }).sum();
    let from_n2 = tg.n2().omega() as u32;
    from_n1 + from_n2 - u32::from(from_n2 > 0) + excluded
}

/// Predicted joint distribution of (4-rank of Cl(K), 4-rank of the ray class
/// group): the rank of the connecting map must be rk₂(W) − (j₂ − j₁) with
/// rk₂(W) the unit-side 2-rank of the type, maps counted in F₂^{ambient}.
pub fn predicted_joint_4rank(
    j1: u32,
    j2: u32,
    tg: &TargetGroup,
    excluded: u32,
) -> Result<Mass, MeasuresError> {
    let ambient = tg.ambient_dim() as u32;
    let rk2 = i64::from(w_rank(tg, excluded));
    let r = rk2 - (j2 as i64 - j1 as i64);
    let base = mu_cl_rank_mass(2, j1)?;
    if r < 0 {
        return Ok(Mass::zero(2, 1));
    }
    let homs = count_hom_rank(2, j1, ambient, r as u32);
    if homs.is_zero() {
        return Ok(Mass::zero(2, 1));
    }
    let denom = BigRational::from(BigInt::from(2u32).pow(j1 * ambient));
    Ok(base.scale(&(BigRational::from(BigInt::from(homs)) / denom)))
}

/// Which family of imaginary quadratic fields the ray class average runs
/// over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyMode {
    /// Discriminants coprime to the conductor (no prime of c ramifies).
    UnramifiedOnly,
    /// All discriminants, ramification at primes of c allowed.
    AllDiscriminants,
}

fn factor_u64(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            let mut e = 0;
            while n % d == 0 {
                n /= d;
                e += 1;
            }
            out.push((d, e));
        }
        d += 1;
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

fn int_ratio(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Average of #Cl(K, c)[p] over imaginary quadratic K, exactly, for odd p.
/// Unramified mode requires gcd(disc, c) = 1 and splits on p² | c; the
/// all-discriminant mode splits on p ∤ c, p ‖ c, p² | c (with p = 3 special).
pub fn avg_p_torsion_ray(p: u64, c: u64, mode: FamilyMode) -> Result<BigRational, MeasuresError> {
    if p < 3 || p % 2 == 0 || !is_prime_u64(p) {
        return Err(MeasuresError::NotOddPrime(p));
    }
    if c == 0 {
        return Err(MeasuresError::ZeroModulus);
    }
    let factors = factor_u64(c);
    let vp = factors.iter().find(|&&(l, _)| l == p).map_or(0, |&(_, e)| e);
    let ones = factors.iter().filter(|&&(l, _)| l % p == 1).count() as u32;
    let p_big = BigInt::from(p);
    match mode {
        FamilyMode::UnramifiedOnly => {
            // p^{#{l≡1}} (1 + ((p+1)/2)^{#{l≡±1}}), with an extra factor p on
            // each piece once p² | c.
            let pm = factors
                .iter()
                .filter(|&&(l, _)| l % p == 1 || l % p == p - 1)
                .count() as u32;
            let half = BigInt::from((p + 1) / 2).pow(pm);
            if vp < 2 {
                Ok(BigRational::from(p_big.pow(ones) * (BigInt::one() + half)))
            } else {
                Ok(BigRational::from(
                    p_big.pow(ones + 1) * (BigInt::one() + &p_big * half),
                ))
            }
        }
        FamilyMode::AllDiscriminants => {
            if p == 3 {
                // ∏_{l|c} (1 + l/(l+1)) over all primes of c.
                let mut prod = BigRational::one();
                for &(l, _) in &factors {
                    prod *= BigRational::one() + int_ratio(l, l + 1);
                }
                let lead = BigRational::from(p_big.pow(ones + u32::from(vp >= 2)));
                let inner = match vp {
                    0 => BigRational::one() + prod,
                    1 => BigRational::one() + int_ratio(6, 7) * prod,
                    _ => BigRational::one() + int_ratio(15, 7) * prod,
                };
                Ok(lead * inner)
            } else {
                // ∏ over l | c with p | l² − 1 of (1 + (p−1)/2 · l/(l+1)).
                let mut prod = BigRational::one();
                for &(l, _) in &factors {
                    if l % p == 1 || l % p == p - 1 {
                        prod *= BigRational::one() + int_ratio((p - 1) / 2, 1) * int_ratio(l, l + 1);
                    }
                }
                let lead = BigRational::from(p_big.pow(ones));
                let inner = match vp {
                    0 => BigRational::one() + prod,
                    1 => BigRational::one() + int_ratio(2 * p, p + 1) * prod,
                    _ => BigRational::one() + int_ratio(p + p * p, p + 1) * prod,
                };
                Ok(lead * inner)
            }
        }
    }
}

/// Splitting behaviour of one prime of the conductor in the quadratic field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LocalSplitting {
    Inert,
    Split,
    Ramified,
}

/// Local description of R = O_K/c at an odd p: per-prime splitting plus the
/// residue class, enough to evaluate #(R*/R*^p)^±.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingLocalData {
    p: u64,
    locals: Vec<(u64, LocalSplitting)>,
}

impl RingLocalData {
    /// `locals` pairs each prime l | c with its splitting type; primes must
    /// be distinct, prime, and different from p (c squarefree away from p).
    pub fn new(p: u64, locals: Vec<(u64, LocalSplitting)>) -> Result<Self, MeasuresError> {
        if p < 3 || p % 2 == 0 || !is_prime_u64(p) {
            return Err(MeasuresError::NotOddPrime(p));
        }
        for (i, &(l, _)) in locals.iter().enumerate() {
            if l == p || !is_prime_u64(l) || locals[..i].iter().any(|&(m, _)| m == l) {
                return Err(MeasuresError::BadLocalPrime(l));
            }
        }
        Ok(RingLocalData { p, locals })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    /// p-rank of (R*/R*^p)^+: one per prime l ≡ 1 mod p (any splitting).
    pub fn plus_rank(&self) -> u32 {
        self.locals.iter().filter(|&&(l, _)| l % self.p == 1).count() as u32
    }

    /// p-rank of (R*/R*^p)^−: split l ≡ 1 mod p (anti-diagonal line) and
    /// inert l ≡ −1 mod p (Frobenius acts by −1).
    pub fn minus_rank(&self) -> u32 {
        self.locals
            .iter()
            .filter(|&&(l, ty)| match ty {
                LocalSplitting::Split => l % self.p == 1,
                LocalSplitting::Inert => l % self.p == self.p - 1,
                LocalSplitting::Ramified => false,
            })
            .count() as u32
    }

    /// #(R*/R*^p)^+ · (1 + #(R*/R*^p)^−), the closed form.
    pub fn closed_form(&self) -> BigUint {
        let p = BigUint::from(self.p);
        p.pow(self.plus_rank()) * (BigUint::one() + p.pow(self.minus_rank()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropJustReport {
    pub p: u64,
    pub plus_rank: u32,
    pub minus_rank: u32,
    pub truncation: u32,
    pub lhs_truncated: f64,
    pub rhs_closed_form: f64,
    pub gap: f64,
    pub tail_bound: f64,
}

/// Verify the closed-form identity Σ_S #M(S)[p] μ_seq(S) = p^a (1 + p^m) by
/// evaluating the left side truncated at p-rank ≤ J. Grouping the sum by the
/// rank r of G[p] and the rank s of the connecting map gives
/// W(r) = p^{a+m−mr} Σ_s #{rank-s homs F_p^r → F_p^m} p^{r−s}, with total
/// Σ_r rank-mass(p, r) W(r). Fails if J is too small to certify 10⁻⁶.
pub fn verify_prop_just(
    ring: &RingLocalData,
    truncation: u32,
) -> Result<PropJustReport, MeasuresError> {
    const NEED: f64 = 1e-6;
    let p = ring.p();
    let a = ring.plus_rank();
    let m = ring.minus_rank();
    // Tail: term_r ≤ p^{a+m} p^{r−r²} / η_∞(p), consecutive ratio ≤ p^{−2r}.
    let eta_inf = eta_infinity_approx(p);
    let r1 = (truncation + 1) as i32;
    let tail_bound =
        2.0 * (p as f64).powi((a + m) as i32) * (p as f64).powi(r1 - r1 * r1) / eta_inf;
    if !(tail_bound < NEED) {
        return Err(MeasuresError::TruncationTooSmall {
            truncation,
            tail: tail_bound,
            need: NEED,
        });
    }
    let mut coeff_sum = BigRational::zero();
    for r in 0..=truncation {
        let mass_r = mu_cl_rank_mass(p, r)?;
        // W(r) exactly.
        let mut w = BigRational::zero();
        for s in 0..=r.min(m) {
            let homs = count_hom_rank(p, r, m, s);
            if homs.is_zero() {
                continue;
            }
            w += BigRational::from(BigInt::from(homs) * BigInt::from(p).pow(r - s));
        }
        let shift = a as i64 + m as i64 - (m as i64 * r as i64);
        let scale = if shift >= 0 {
            BigRational::from(BigInt::from(p).pow(shift as u32))
        } else {
            BigRational::new(BigInt::one(), BigInt::from(p).pow((-shift) as u32))
        };
        coeff_sum += mass_r.coeff() * w * scale;
    }
    let lhs = rational_to_f64(&coeff_sum) * eta_inf;
    let rhs = ring.closed_form().to_f64().unwrap();
    Ok(PropJustReport {
        p,
        plus_rank: a,
        minus_rank: m,
        truncation,
        lhs_truncated: lhs,
        rhs_closed_form: rhs,
        gap: (lhs - rhs).abs(),
        tail_bound,
    })
}

/// #Aut of the abelian p-group ⊕ Z/p^{λ_i} via the standard partition
/// product formula (λ descending). With λ sorted ascending as e_1 ≤ … ≤ e_n,
/// d_k = max{l : e_l = e_k}, c_k = min{l : e_l = e_k}:
/// ∏_k (p^{d_k} − p^{k−1}) · ∏_j p^{e_j (n − d_j)} · ∏_i p^{(e_i − 1)(n − c_i + 1)}.
pub fn aut_order_abelian(p: u64, partition: &[u32]) -> BigUint {
    let mut e: Vec<u32> = partition.to_vec();
    e.retain(|&x| x > 0);
    e.sort_unstable();
    let n = e.len();
    if n == 0 {
        return BigUint::one();
    }
    let pb = BigUint::from(p);
    let mut out = BigUint::one();
    for k in 0..n {
        let d_k = (0..n).rev().find(|&l| e[l] == e[k]).unwrap() + 1;
        let c_k = (0..n).find(|&l| e[l] == e[k]).unwrap() + 1;
        out *= pb.pow(d_k as u32) - pb.pow(k as u32);
        out *= pb.pow(e[k] * (n - d_k) as u32);
        out *= pb.pow((e[k] - 1) * (n - c_k + 1) as u32);
    }
    out
}

/// Brute-force #Aut oracle: enumerate every endomorphism (as a matrix of
/// residues a_ij ∈ Z/p^{min(e_i, e_j)}, acting via a_ij p^{max(e_i−e_j,0)})
/// and count those whose reduction mod p is invertible (Nakayama: an
/// endomorphism of a finite p-group is bijective iff it is mod p).
pub fn aut_order_bruteforce(p: u64, partition: &[u32]) -> Result<u64, MeasuresError> {
    let mut e: Vec<u32> = partition.to_vec();
    e.retain(|&x| x > 0);
    e.sort_unstable_by(|a, b| b.cmp(a));
    let n = e.len();
    if n == 0 {
        return Ok(1);
    }
    // Residue bound per entry, and how the entry reduces mod p.
    let mut bounds = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            bounds.push((p as u128).pow(e[i].min(e[j])));
        }
    }
    let total: u128 = bounds.iter().product();
    if total > 200_000_000 {
        return Err(MeasuresError::OracleTooLarge(total));
    }
    let mut digits = vec![0u64; n * n];
    let mut count = 0u64;
    let mut reduced = vec![0u64; n * n];
    loop {
        for idx in 0..n * n {
            let (i, j) = (idx / n, idx % n);
            // a_ij p^{max(e_i−e_j,0)} mod p: zero unless e_i ≤ e_j.
            reduced[idx] = if e[i] > e[j] { 0 } else { digits[idx] % p };
        }
        if det_mod_p(&reduced, n, p) != 0 {
            count += 1;
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == n * n {
                return Ok(count);
            }
            digits[pos] += 1;
            if (digits[pos] as u128) < bounds[pos] {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

fn det_mod_p(m: &[u64], n: usize, p: u64) -> u64 {
    let mut a: Vec<u64> = m.to_vec();
    let mut det = 1u64;
    for col in 0..n {
        let pivot = (col..n).find(|&r| a[r * n + col] % p != 0);
        let Some(pr) = pivot else { return 0 };
        if pr != col {
            for c in 0..n {
                a.swap(pr * n + c, col * n + c);
            }
            det = (p - det % p) % p;
        }
        let inv = mod_inverse(a[col * n + col] % p, p);
        det = det * (a[col * n + col] % p) % p;
        for r in col + 1..n {
            let factor = a[r * n + col] % p * inv % p;
            if factor == 0 {
                continue;
            }
            for c in col..n {
                let sub = factor * a[col * n + c] % p;
                a[r * n + c] = (a[r * n + c] % p + p - sub) % p;
            }
        }
    }
    det % p
}

fn mod_inverse(a: u64, p: u64) -> u64 {
    // Fermat; p is a small prime.
    let mut result = 1u64;
    let mut base = a % p;
    let mut exp = p - 2;
    while exp > 0 {
        if exp & 1 == 1 {
            result = result * base % p;
        }
        base = base * base % p;
        exp >>= 1;
    }
    result
}

/// Σ over partitions with exactly r parts, each ≤ max_part, of
/// η_∞(p)/#Aut — the groupwise form of the rank mass, for cross-checking
/// `mu_cl_rank_mass` against the partition formula.
pub fn rank_mass_partition_sum(p: u64, r: u32, max_part: u32) -> f64 {
    let eta_inf = eta_infinity_approx(p);
    let mut total = 0.0f64;
    let mut stack: Vec<Vec<u32>> = vec![vec![]];
    while let Some(cur) = stack.pop() {
        if cur.len() == r as usize {
            let aut = aut_order_abelian(p, &cur);
            total += eta_inf * rational_to_f64(&BigRational::new(BigInt::one(), BigInt::from(aut)));
            continue;
        }
        let hi = cur.last().copied().unwrap_or(max_part);
        for part in 1..=hi {
            let mut next = cur.clone();
            next.push(part);
            stack.push(next);
        }
    }
    total
}

/// One row of a rendered prediction table.
#[derive(Debug, Clone, Serialize)]
pub struct PredictedOutcome {
    pub outcome: String,
    pub coeff: String,
    pub eta_base: u64,
    pub eta_power: u32,
    pub value: f64,
}

/// A rendered law: named parameters, per-outcome masses (symbolic and
/// numeric), and the total with its truncation bound.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionReport {
    pub law: String,
    pub params: serde_json::Value,
    pub outcomes: Vec<PredictedOutcome>,
    pub mass_exact: String,
    pub mass_float: f64,
    pub tail_bound: f64,
}

fn outcome_row(outcome: String, mass: &Mass) -> PredictedOutcome {
    PredictedOutcome {
        outcome,
        coeff: mass.coeff().to_string(),
        eta_base: mass.base(),
        eta_power: mass.power(),
        value: mass.approx(),
    }
}

fn mass_total(rows: &[(String, Mass)], base: u64, power: u32) -> Result<Mass, MeasuresError> {
    let mut total = Mass::zero(base, power);
    for (_, m) in rows {
        total = total.add(m)?;
    }
    Ok(total)
}

fn finish_report(
    law: &str,
    params: serde_json::Value,
    rows: Vec<(String, Mass)>,
    tail_bound: f64,
) -> Result<PredictionReport, MeasuresError> {
    let total = mass_total(&rows, 2, 1)?;
    Ok(PredictionReport {
        law: law.to_string(),
        params,
        outcomes: rows.iter().map(|(o, m)| outcome_row(o.clone(), m)).collect(),
        mass_exact: format!("({})·η_∞({})^{}", total.coeff(), total.base(), total.power()),
        mass_float: total.approx(),
        tail_bound,
    })
}

fn subspace_label(y: &Subspace) -> String {
    if y.dim() == 0 {
        return "span{}".to_string();
    }
    let parts: Vec<String> = y.basis().iter().map(|b| format!("{:#b}", b)).collect();
    format!("span{{{}}}", parts.join(","))
}

/// Full (j, Y) pair-distribution table up to rank `j_max`.
pub fn pair_distribution_report(
    tg: &TargetGroup,
    j_max: u32,
) -> Result<PredictionReport, MeasuresError> {
    let ambient = tg.ambient_dim();
    if ambient > PROB_AMBIENT_GUARD {
        return Err(MeasuresError::AmbientGuard(ambient, PROB_AMBIENT_GUARD));
    }
    let subspaces = enumerate_subspaces(ambient)?;
    let mut rows = Vec::new();
    for j in 0..=j_max {
        for y in &subspaces {
            let mass = predicted_pair_distribution(j, y, tg)?;
            if mass.coeff().is_zero() {
                continue;
            }
            rows.push((format!("j={} Y={}", j, subspace_label(y)), mass));
        }
    }
    let tail = 2.0 * mu_cl_rank_mass(2, j_max + 1)?.approx();
    finish_report(
        "pair-distribution",
        serde_json::json!({"n1": tg.n1().value(), "n2": tg.n2().value(), "j_max": j_max}),
        rows,
        tail,
    )
}

/// Joint (j₁, j₂) 4-rank table up to `j_max` in each coordinate.
pub fn joint_4rank_report(
    tg: &TargetGroup,
    excluded: u32,
    j_max: u32,
) -> Result<PredictionReport, MeasuresError> {
    let rk2 = w_rank(tg, excluded);
    let mut rows = Vec::new();
    for j1 in 0..=j_max {
        for j2 in 0..=(j_max + rk2) {
            let mass = predicted_joint_4rank(j1, j2, tg, excluded)?;
            if mass.coeff().is_zero() {
                continue;
            }
            rows.push((format!("j1={} j2={}", j1, j2), mass));
        }
    }
    let tail = 2.0 * mu_cl_rank_mass(2, j_max + 1)?.approx();
    finish_report(
        "joint-4rank",
        serde_json::json!({
            "n1": tg.n1().value(),
            "n2": tg.n2().value(),
            "excluded": excluded,
            "j_max": j_max
        }),
        rows,
        tail,
    )
}

/// Mixed-moment report: per-subspace contributions plus the exact total.
pub fn moment_report(tg: &TargetGroup, k: &KVector) -> Result<PredictionReport, MeasuresError> {
    let total_k = k.total();
    let mut outcomes = Vec::new();
    let mut total = BigRational::zero();
    for w in enumerate_subspaces(k.ambient())? {
        let p = prob_generate(k, &w)?;
        if p.is_zero() {
            continue;
        }
        let contrib = &p
            * BigRational::from(BigInt::from(n2(total_k as i64 - w.dim() as i64)))
            * BigRational::from(BigInt::from(2u32).pow(total_k));
        total += &contrib;
        outcomes.push(PredictedOutcome {
            outcome: format!("W={}", subspace_label(&w)),
            coeff: contrib.to_string(),
            eta_base: 2,
            eta_power: 0,
            value: rational_to_f64(&contrib),
        });
    }
    Ok(PredictionReport {
        law: "mixed-moment".to_string(),
        params: serde_json::json!({
            "n1": tg.n1().value(),
            "n2": tg.n2().value(),
            "k": k.exponents(),
            "k_total": total_k,
        }),
        outcomes,
        mass_exact: total.to_string(),
        mass_float: rational_to_f64(&total),
        tail_bound: 0.0,
    })
}

/// Exact ray class average report for odd p.
pub fn average_report(
    p: u64,
    c: u64,
    mode: FamilyMode,
) -> Result<PredictionReport, MeasuresError> {
    let value = avg_p_torsion_ray(p, c, mode)?;
    let mode_name = match mode {
        FamilyMode::UnramifiedOnly => "unramified",
        FamilyMode::AllDiscriminants => "all-discriminants",
    };
    Ok(PredictionReport {
        law: "p-average".to_string(),
        params: serde_json::json!({"p": p, "c": c, "family": mode_name}),
        outcomes: vec![PredictedOutcome {
            outcome: format!("average #Cl(K,{})[{}]", c, p),
            coeff: value.to_string(),
            eta_base: p,
            eta_power: 0,
            value: rational_to_f64(&value),
        }],
        mass_exact: value.to_string(),
        mass_float: rational_to_f64(&value),
        tail_bound: 0.0,
    })
}
