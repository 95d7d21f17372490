//! Empirical side of the library: sharded experiments over progressions of
//! odd squarefree discriminants with exact integer accumulators, merge-based
//! parallelism, JSON/CSV reports that pair every observed statistic with its
//! predicted value, and an exact-rational inversion of moment tables back
//! into rank masses with a certified truncation residual.

use std::collections::BTreeMap;
use std::time::Instant;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{
    is_square_mod, jacobi, sieve_squarefree_range, ArithError, FactoredOdd, SpfTable,
};
use crate::gf2::Subspace;
use crate::measures::{
    eta_infinity_approx, mu_cl_rank_mass, predicted_joint_4rank, predicted_mixed_moment,
    predicted_pair_distribution, rational_to_f64, KVector, MeasuresError,
};
use crate::specialdiv::{
    a_chi, special_divisors_kernel, CharacterIndex, PhiMap, SpecialDivError, TargetGroup,
};

/// Tolerance on the certified truncation residual of `invert_moments`.
pub const INVERSION_TOLERANCE: f64 = 1e-8;

/// Truncation depth that keeps the certified residual far below the
/// tolerance for single-character tables of the sizes used here.
pub const DEFAULT_TRUNC: u32 = 18;

/// Headroom constant for the moment growth estimate
/// C_k ≤ A · 2^{(|k|₁² + 4|k|₁)/4}. The trivial-character moments approach
/// ≈ 7.38 times the bare power of two from below, so A = 8 holds with margin
/// on every box we build while staying tight enough to certify inversion
/// tails.
pub const GROWTH_CONSTANT: f64 = 8.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    SpecialDiv(#[from] SpecialDivError),
    #[error(transparent)]
    Measures(#[from] MeasuresError),
    #[error("modulus {q} is not a multiple of 4·n1·n2 = {required}")]
    ModulusNotAligned { q: u64, required: u64 },
    #[error("residue {0} is not ≡ 3 (mod 4)")]
    ResidueNotThreeModFour(u64),
    #[error("residue {a} is not coprime to the modulus {q}")]
    ResidueNotCoprime { a: u64, q: u64 },
    #[error("residue {a} is not a square modulo n1 = {n1}")]
    ResidueNotSquareModN1 { a: u64, n1: u64 },
    #[error("residue {a} is not a non-residue modulo the prime {p} of n2")]
    ResidueNotNonResidue { a: u64, p: u64 },
    #[error("shard count must be positive")]
    ZeroShards,
    #[error("shard index {index} out of range for {shards} shards")]
    ShardOutOfRange { index: usize, shards: usize },
    #[error("k-vector has ambient {got}, target group has ambient {expected}")]
    KVectorShape { expected: usize, got: usize },
    #[error("cannot merge accumulators from different configurations ({left:#018x} vs {right:#018x})")]
    ConfigMismatch { left: u64, right: u64 },
    #[error("divisor-sum audit failed at D = {d} for character {chi}")]
    AuditMismatch { d: u64, chi: String },
    #[error("moment table must contain at least one character")]
    EmptyTable,
    #[error("moment table must have C_0 = 1, found {0}")]
    BadTableRoot(String),
    #[error("moment table entry at k = {k:?} exceeds the growth bound {bound}: C_k = {c}")]
    GrowthBound { k: Vec<u32>, c: String, bound: String },
    #[error("moment table is missing the entry at k = {0:?}")]
    MissingEntry(Vec<u32>),
    #[error("table box {kmax:?} leaves no room for recovered masses at truncation depth {trunc}")]
    InsufficientCoverage { kmax: Vec<u32>, trunc: u32 },
    #[error("certified truncation residual {bound:e} exceeds the tolerance {tol:e}")]
    ResidualTooLarge { bound: f64, tol: f64 },
    #[error("invalid accumulator state: {0}")]
    BadState(String),
}

/// 64-bit FNV-1a. Pinned here (rather than using the standard library's
/// hasher) because configuration hashes must be stable across builds: they
/// gate accumulator merges and checkpoint resumption.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; selects the deterministic 1% audit subsample so the
/// same discriminants are audited regardless of sharding or schedule.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Human-readable name of a moment exponent vector: `"chi5:2,chi1:1"` means
/// E[m_{χ₅}² · m_{χ₁}]. The zero vector (the constant-1 moment) is `"1"`.
pub fn kvector_label(tg: &TargetGroup, kv: &KVector) -> String {
    let chars = tg.characters();
    let exps = kv.exponents();
    let parts: Vec<String> = chars
        .iter()
        .zip(exps.iter())
        .filter(|&(_, &e)| e > 0)
        .map(|(c, e)| format!("{}:{}", c.name(tg), e))
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join(",")
    }
}

/// Everything a reproducible experiment needs: the range bound X, the
/// progression D ≡ a (mod q), the target group, the requested moment
/// exponent vectors, and the shard count (which never affects results).
///
/// Construction enforces the five family conditions that make *every* odd
/// squarefree D ≡ a (mod q) admissible, so runs never skip a sieved value:
/// 4·n1·n2 | q, a ≡ 3 (mod 4), gcd(a, q) = 1, a a square mod n1, and a a
/// non-residue mod each prime of n2.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    x: u64,
    a: u64,
    q: u64,
    tg: TargetGroup,
    kvectors: Vec<KVector>,
    shards: usize,
}

/// The configuration subobject embedded in reports. Deliberately excludes
/// the shard count: reports are identical for any sharding of the same run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub x: u64,
    pub a: u64,
    pub q: u64,
    pub n1: u64,
    pub n2: u64,
    pub k: Vec<String>,
}

impl ExperimentConfig {
    pub fn new(
        x: u64,
        a: u64,
        q: u64,
        tg: TargetGroup,
        kvectors: Vec<KVector>,
        shards: usize,
    ) -> Result<Self, HarnessError> {
        if shards == 0 {
            return Err(HarnessError::ZeroShards);
        }
        if q == 0 || num_integer::gcd(a, q) != 1 {
            return Err(HarnessError::ResidueNotCoprime { a, q });
        }
        let required = 4 * tg.n1().value() * tg.n2().value();
        if q % required != 0 {
            return Err(HarnessError::ModulusNotAligned { q, required });
        }
        if a % 4 != 3 {
            return Err(HarnessError::ResidueNotThreeModFour(a));
        }
        if !is_square_mod(a as i64, tg.n1())? {
            return Err(HarnessError::ResidueNotSquareModN1 { a, n1: tg.n1().value() });
        }
        for &p in tg.n2().primes() {
            if jacobi(a as i64, p)? != -1 {
                return Err(HarnessError::ResidueNotNonResidue { a, p });
            }
        }
        for kv in &kvectors {
            if kv.ambient() != tg.ambient_dim() {
                return Err(HarnessError::KVectorShape {
                    expected: tg.ambient_dim(),
                    got: kv.ambient(),
                });
            }
        }
        Ok(Self { x, a, q, tg, kvectors, shards })
    }

    pub fn x(&self) -> u64 {
        self.x
    }

    pub fn a(&self) -> u64 {
        self.a
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn target_group(&self) -> &TargetGroup {
        &self.tg
    }

    pub fn kvectors(&self) -> &[KVector] {
        &self.kvectors
    }

    pub fn shards(&self) -> usize {
        self.shards
    }

    /// Balanced contiguous partition of [1, X] into `shards` blocks, fixed
    /// by (X, shards) alone so every schedule reproduces the same per-shard
    /// substreams. Blocks may be empty when X < shards.
    pub fn block_bounds(&self) -> Vec<(u64, u64)> {
        let shards = self.shards as u64;
        let base = self.x / shards;
        let rem = self.x % shards;
        let mut out = Vec::with_capacity(self.shards);
        let mut lo = 1u64;
        for i in 0..shards {
            let size = base + u64::from(i < rem);
            out.push((lo, lo + size - 1));
            lo += size;
        }
        out
    }

    fn canonical_string(&self) -> String {
        let labels: Vec<String> =
            self.kvectors.iter().map(|kv| kvector_label(&self.tg, kv)).collect();
        format!(
            "x={};a={};q={};n1={};n2={};k=[{}];shards={}",
            self.x,
            self.a,
            self.q,
            self.tg.n1().value(),
            self.tg.n2().value(),
            labels.join("|"),
            self.shards
        )
    }

    /// Stable digest of the full configuration (including sharding); guards
    /// merges and checkpoint resumption against mixed configurations.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.canonical_string().as_bytes())
    }

    pub fn summary(&self) -> ConfigSummary {
        ConfigSummary {
            x: self.x,
            a: self.a,
            q: self.q,
            n1: self.tg.n1().value(),
            n2: self.tg.n2().value(),
            k: self.kvectors.iter().map(|kv| kvector_label(&self.tg, kv)).collect(),
        }
    }
}

/// Exact running sums Σ ∏ m_χ(D)^{k_χ} (and their squares, for dispersion)
/// for each requested exponent vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentAccumulator {
    n: u64,
    sums: Vec<BigUint>,
    sums_sq: Vec<BigUint>,
}

impl MomentAccumulator {
    pub fn new(width: usize) -> Self {
        Self { n: 0, sums: vec![BigUint::zero(); width], sums_sq: vec![BigUint::zero(); width] }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn sums(&self) -> &[BigUint] {
        &self.sums
    }

    pub fn sums_sq(&self) -> &[BigUint] {
        &self.sums_sq
    }

    fn record(&mut self, terms: &[BigUint]) {
        debug_assert_eq!(terms.len(), self.sums.len());
        self.n += 1;
        for (i, t) in terms.iter().enumerate() {
            self.sums[i] += t;
            self.sums_sq[i] += t * t;
        }
    }

    fn merge_from(&mut self, other: &MomentAccumulator) {
        debug_assert_eq!(self.sums.len(), other.sums.len());
        self.n += other.n;
        for (i, s) in other.sums.iter().enumerate() {
            self.sums[i] += s;
        }
        for (i, s) in other.sums_sq.iter().enumerate() {
            self.sums_sq[i] += s;
        }
    }
}

/// Exact counts of the joint outcome (dim S(D)/{1,D}, canonical basis of
/// Im φ), keyed so iteration order is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DistributionAccumulator {
    counts: BTreeMap<(u32, Vec<u64>), u64>,
}

impl DistributionAccumulator {
    pub fn counts(&self) -> &BTreeMap<(u32, Vec<u64>), u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    fn record(&mut self, dim: u32, basis: Vec<u64>) {
        *self.counts.entry((dim, basis)).or_default() += 1;
    }

    fn merge_from(&mut self, other: &DistributionAccumulator) {
        for (key, &count) in &other.counts {
            *self.counts.entry(key.clone()).or_default() += count;
        }
    }
}

/// Mergeable result of processing any sub-range of the discriminant
/// progression. All arithmetic inside is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentAccumulator {
    cfg_hash: u64,
    moments: MomentAccumulator,
    dist: DistributionAccumulator,
    audited: u64,
}

#[derive(Serialize, Deserialize)]
struct DistStateRow {
    dim: u32,
    basis: Vec<u64>,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct AccumulatorState {
    cfg_hash: u64,
    n: u64,
    sums: Vec<String>,
    sums_sq: Vec<String>,
    distribution: Vec<DistStateRow>,
    audited: u64,
}

impl ExperimentAccumulator {
    pub fn empty(cfg: &ExperimentConfig) -> Self {
        Self {
            cfg_hash: cfg.config_hash(),
            moments: MomentAccumulator::new(cfg.kvectors.len()),
            dist: DistributionAccumulator::default(),
            audited: 0,
        }
    }

    pub fn cfg_hash(&self) -> u64 {
        self.cfg_hash
    }

    pub fn n(&self) -> u64 {
        self.moments.n
    }

    pub fn moments(&self) -> &MomentAccumulator {
        &self.moments
    }

    pub fn distribution(&self) -> &DistributionAccumulator {
        &self.dist
    }

    /// How many processed discriminants went through the divisor-sum audit.
    pub fn audited(&self) -> u64 {
        self.audited
    }

    /// Serialize to a checkpointable JSON string. Big integers travel as
    /// decimal strings so the state survives any JSON tooling unchanged.
    pub fn to_state(&self) -> String {
        let state = AccumulatorState {
            cfg_hash: self.cfg_hash,
            n: self.moments.n,
            sums: self.moments.sums.iter().map(|s| s.to_string()).collect(),
            sums_sq: self.moments.sums_sq.iter().map(|s| s.to_string()).collect(),
            distribution: self
                .dist
                .counts
                .iter()
                .map(|((dim, basis), &count)| DistStateRow {
                    dim: *dim,
                    basis: basis.clone(),
                    count,
                })
                .collect(),
            audited: self.audited,
        };
        serde_json::to_string(&state).expect("accumulator state serializes")
    }

    /// Inverse of `to_state`, with structural validation.
    pub fn from_state(s: &str) -> Result<Self, HarnessError> {
        let state: AccumulatorState =
            serde_json::from_str(s).map_err(|e| HarnessError::BadState(e.to_string()))?;
        if state.sums.len() != state.sums_sq.len() {
            return Err(HarnessError::BadState(format!(
                "{} sums but {} squared sums",
                state.sums.len(),
                state.sums_sq.len()
            )));
        }
        let parse = |v: &[String]| -> Result<Vec<BigUint>, HarnessError> {
            v.iter()
                .map(|s| {
                    s.parse::<BigUint>()
                        .map_err(|_| HarnessError::BadState(format!("bad integer literal {s:?}")))
                })
                .collect()
        };
        let sums = parse(&state.sums)?;
        let sums_sq = parse(&state.sums_sq)?;
        let mut counts = BTreeMap::new();
        for row in state.distribution {
            if counts.insert((row.dim, row.basis), row.count).is_some() {
                return Err(HarnessError::BadState("duplicate distribution key".to_string()));
            }
        }
        let dist = DistributionAccumulator { counts };
        if dist.total() != state.n {
            return Err(HarnessError::BadState(format!(
                "distribution total {} does not match sample count {}",
                dist.total(),
                state.n
            )));
        }
        Ok(Self {
            cfg_hash: state.cfg_hash,
            moments: MomentAccumulator { n: state.n, sums, sums_sq },
            dist,
            audited: state.audited,
        })
    }
}

/// Combine two accumulators from the same configuration. Commutative and
/// associative with `ExperimentAccumulator::empty` as identity; the runner's
/// reduction is exactly repeated merges in fixed shard order.
pub fn merge(
    left: &ExperimentAccumulator,
    right: &ExperimentAccumulator,
) -> Result<ExperimentAccumulator, HarnessError> {
    if left.cfg_hash != right.cfg_hash || left.moments.sums.len() != right.moments.sums.len() {
        return Err(HarnessError::ConfigMismatch { left: left.cfg_hash, right: right.cfg_hash });
    }
    let mut out = left.clone();
    out.moments.merge_from(&right.moments);
    out.dist.merge_from(&right.dist);
    out.audited += right.audited;
    Ok(out)
}

/// How shards are driven. `Parallel` requires the `parallel` feature;
/// without it the variant degrades to the sequential schedule (results are
/// identical either way by the merge laws).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

/// Recompute every m_χ through the twisted double divisor sums and demand
/// exact agreement with the subspace-walk count: m_χ · 2^{ω(D)+1} = A₁ + A_χ.
fn audit_d(
    f: &FactoredOdd,
    tg: &TargetGroup,
    chars: &[CharacterIndex],
    ms: &[u64],
) -> Result<(), HarnessError> {
    let a1 = a_chi(f, tg, &tg.trivial_character())?;
    let shift = f.omega() as u32 + 1;
    for (chi, &m) in chars.iter().zip(ms) {
        let a_x = if chi.is_trivial() { a1 } else { a_chi(f, tg, chi)? };
        if (m as i64) << shift != a1 + a_x {
            return Err(HarnessError::AuditMismatch { d: f.value(), chi: chi.name(tg) });
        }
    }
    Ok(())
}

fn process_d(
    f: &FactoredOdd,
    tg: &TargetGroup,
    chars: &[CharacterIndex],
    exps: &[Vec<u32>],
    acc: &mut ExperimentAccumulator,
) -> Result<(), HarnessError> {
    let space = special_divisors_kernel(f)?;
    let pm = PhiMap::new(&space, tg)?;
    let ms: Vec<u64> = chars.iter().map(|c| pm.m_chi(c)).collect();
    let terms: Vec<BigUint> = exps
        .iter()
        .map(|ks| {
            let mut t = BigUint::one();
            for (&m, &k) in ms.iter().zip(ks.iter()) {
                if k > 0 {
                    t *= BigUint::from(m).pow(k);
                }
            }
            t
        })
        .collect();
    acc.moments.record(&terms);
    acc.dist.record(space.quotient_dim() as u32, pm.image_subspace().basis().to_vec());
    if splitmix64(f.value()) % 100 == 0 {
        audit_d(f, tg, chars, &ms)?;
        acc.audited += 1;
    }
    Ok(())
}

/// Process one fixed block of the discriminant range into a fresh
/// accumulator. The factor table must cover the block's upper bound.
pub fn run_shard(
    cfg: &ExperimentConfig,
    table: &SpfTable,
    shard: usize,
) -> Result<ExperimentAccumulator, HarnessError> {
    if shard >= cfg.shards {
        return Err(HarnessError::ShardOutOfRange { index: shard, shards: cfg.shards });
    }
    let (lo, hi) = cfg.block_bounds()[shard];
    let mut acc = ExperimentAccumulator::empty(cfg);
    if hi < lo {
        return Ok(acc);
    }
    let chars = cfg.tg.characters();
    let exps: Vec<Vec<u32>> = cfg.kvectors.iter().map(|kv| kv.exponents()).collect();
    for f in sieve_squarefree_range(table, lo, hi, cfg.a, cfg.q)? {
        process_d(&f, &cfg.tg, &chars, &exps, &mut acc)?;
    }
    Ok(acc)
}

#[cfg(feature = "parallel")]
fn run_shards(
    cfg: &ExperimentConfig,
    table: &SpfTable,
    mode: ExecMode,
) -> Result<Vec<ExperimentAccumulator>, HarnessError> {
    match mode {
        ExecMode::Sequential => (0..cfg.shards).map(|i| run_shard(cfg, table, i)).collect(),
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..cfg.shards).into_par_iter().map(|i| run_shard(cfg, table, i)).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn run_shards(
    cfg: &ExperimentConfig,
    table: &SpfTable,
    _mode: ExecMode,
) -> Result<Vec<ExperimentAccumulator>, HarnessError> {
    (0..cfg.shards).map(|i| run_shard(cfg, table, i)).collect()
}

/// Drive all shards under the given schedule and reduce them in fixed shard
/// order, so the result is independent of how the work was scheduled.
pub fn run_accumulate(
    cfg: &ExperimentConfig,
    table: &SpfTable,
    mode: ExecMode,
) -> Result<ExperimentAccumulator, HarnessError> {
    let shard_results = run_shards(cfg, table, mode)?;
    let mut acc = ExperimentAccumulator::empty(cfg);
    for s in &shard_results {
        acc = merge(&acc, s)?;
    }
    Ok(acc)
}

/// One row of the moment section of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub k: String,
    pub empirical: f64,
    pub predicted: f64,
    pub abs_gap: f64,
}

/// One row of the distribution section: an observed outcome
/// (dim S(D)/{1,D}, Im φ) with its frequency and predicted mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub dim: u32,
    pub image_basis: Vec<u64>,
    pub count: u64,
    pub freq: f64,
    pub predicted: f64,
}

/// Full experiment report. Serializes to the stable schema
/// `{config, N, moments, distribution, runtime_ms}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub config: ConfigSummary,
    #[serde(rename = "N")]
    pub n: u64,
    pub moments: Vec<MomentRow>,
    pub distribution: Vec<DistributionRow>,
    pub runtime_ms: u64,
}

/// Round to 12 significant decimal digits. Every float placed in a report
/// passes through here, so rendered JSON/CSV is reproducible digit for
/// digit across shard counts and schedules.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    if x == 0.0 {
        return 0.0;
    }
    format!("{x:.11e}").parse().expect("formatted float reparses")
}

impl EmpiricalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV rendering, one row per outcome. Moment rows carry the sample
    /// count in `count`; distribution rows carry the outcome count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,count,value,predicted,abs_gap\n");
        for m in &self.moments {
            out.push_str(&format!(
                "moment,\"{}\",{},{},{},{}\n",
                m.k, self.n, m.empirical, m.predicted, m.abs_gap
            ));
        }
        for d in &self.distribution {
            let basis =
                d.image_basis.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
            out.push_str(&format!(
                "distribution,\"dim={};basis={}\",{},{},{},{}\n",
                d.dim,
                basis,
                d.count,
                d.freq,
                d.predicted,
                sig12((d.freq - d.predicted).abs())
            ));
        }
        out
    }
}

/// Render an accumulator against its configuration: empirical moments and
/// outcome frequencies side by side with their predicted values. A run that
/// saw no discriminants produces empty sections and performs no division.
pub fn build_report(
    cfg: &ExperimentConfig,
    acc: &ExperimentAccumulator,
    runtime_ms: u64,
) -> Result<EmpiricalReport, HarnessError> {
    if acc.cfg_hash != cfg.config_hash() {
        return Err(HarnessError::ConfigMismatch {
            left: acc.cfg_hash,
            right: cfg.config_hash(),
        });
    }
    let n = acc.moments.n;
    let mut moments = Vec::new();
    let mut distribution = Vec::new();
    if n > 0 {
        let n_big = BigInt::from(n);
        for (i, kv) in cfg.kvectors.iter().enumerate() {
            let emp = BigRational::new(BigInt::from(acc.moments.sums[i].clone()), n_big.clone());
            let pred = predicted_mixed_moment(kv)?;
            let empirical = sig12(rational_to_f64(&emp));
            let predicted = sig12(rational_to_f64(&pred));
            moments.push(MomentRow {
                k: kvector_label(&cfg.tg, kv),
                empirical,
                predicted,
                abs_gap: sig12((empirical - predicted).abs()),
            });
        }
        for ((dim, basis), &count) in &acc.dist.counts {
            let y = Subspace::from_vectors(cfg.tg.ambient_dim(), basis);
            let predicted = predicted_pair_distribution(*dim, &y, &cfg.tg)?.approx();
            let freq = rational_to_f64(&BigRational::new(BigInt::from(count), n_big.clone()));
            distribution.push(DistributionRow {
                dim: *dim,
                image_basis: basis.clone(),
                count,
                freq: sig12(freq),
                predicted: sig12(predicted),
            });
        }
    }
    Ok(EmpiricalReport { config: cfg.summary(), n, moments, distribution, runtime_ms })
}

/// Run the whole experiment under the given schedule and report.
pub fn run_experiment_with_mode(
    cfg: &ExperimentConfig,
    mode: ExecMode,
) -> Result<EmpiricalReport, HarnessError> {
    let start = Instant::now();
    let table = SpfTable::new(cfg.x.max(1));
    let acc = run_accumulate(cfg, &table, mode)?;
    let runtime_ms = start.elapsed().as_millis() as u64;
    build_report(cfg, &acc, runtime_ms)
}

/// One-call entry point; parallel when the `parallel` feature is enabled.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EmpiricalReport, HarnessError> {
    run_experiment_with_mode(cfg, ExecMode::Parallel)
}

/// One cell of the empirical joint 4-rank table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRankCell {
    pub j1: u32,
    pub j2: u32,
    pub count: u64,
    pub freq: f64,
    pub predicted: f64,
}

/// Marginal row over j1 with the one-variable predicted mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMarginalRow {
    pub j1: u32,
    pub count: u64,
    pub freq: f64,
    pub predicted: f64,
}

/// Empirical joint law of (j₁, j₂) = (4-rank of the class group, 4-rank of
/// the ray class group) with predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRankReport {
    pub config: ConfigSummary,
    pub excluded: u32,
    pub rk2: u32,
    #[serde(rename = "N")]
    pub n: u64,
    pub cells: Vec<JointRankCell>,
    pub j1_marginals: Vec<JointMarginalRow>,
    pub runtime_ms: u64,
}

/// Tabulate the joint 4-rank law over the configured family. j₂ is obtained
/// from the reflection identity j₂ = j₁ + rk₂ − rank(φ), where rk₂ is the
/// unit-side 2-rank of the conductor type (`excluded` counting the conductor
/// primes that contribute to neither factor of the target group).
pub fn empirical_joint_4rank(
    cfg: &ExperimentConfig,
    excluded: u32,
    mode: ExecMode,
) -> Result<JointRankReport, HarnessError> {
    let start = Instant::now();
    let table = SpfTable::new(cfg.x.max(1));
    let acc = run_accumulate(cfg, &table, mode)?;
    let rk2 = crate::measures::w_rank(&cfg.tg, excluded);
    let n = acc.moments.n;
    let mut joint: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut marginal: BTreeMap<u32, u64> = BTreeMap::new();
    for ((dim, basis), &count) in &acc.dist.counts {
        let rank = basis.len() as u32;
        debug_assert!(rank <= rk2);
        *joint.entry((*dim, dim + rk2 - rank)).or_default() += count;
        *marginal.entry(*dim).or_default() += count;
    }
    let mut cells = Vec::new();
    let mut j1_marginals = Vec::new();
    if n > 0 {
        let n_big = BigInt::from(n);
        let freq_of = |count: u64| {
            sig12(rational_to_f64(&BigRational::new(BigInt::from(count), n_big.clone())))
        };
        for (&(j1, j2), &count) in &joint {
            let predicted = predicted_joint_4rank(j1, j2, &cfg.tg, excluded)?.approx();
            cells.push(JointRankCell {
                j1,
                j2,
                count,
                freq: freq_of(count),
                predicted: sig12(predicted),
            });
        }
        for (&j1, &count) in &marginal {
            let predicted = mu_cl_rank_mass(2, j1)?.approx();
            j1_marginals.push(JointMarginalRow {
                j1,
                count,
                freq: freq_of(count),
                predicted: sig12(predicted),
            });
        }
    }
    let runtime_ms = start.elapsed().as_millis() as u64;
    Ok(JointRankReport {
        config: cfg.summary(),
        excluded,
        rk2,
        n,
        cells,
        j1_marginals,
        runtime_ms,
    })
}

/// 2^e as an exact rational, for any sign of e.
fn pow2(e: i64) -> BigRational {
    if e >= 0 {
        BigRational::from(BigInt::one() << e as usize)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-e) as usize)
    }
}

/// Taylor coefficients a_0 ..= a_jmax of F(t) = ∏_{n≥0} (1 − t·2^{−n}),
/// exact. From the functional equation F(t) = (1 − t)·F(t/2) one gets the
/// recurrence a_j = −2·a_{j−1} / (2^j − 1); unit tests check it against the
/// closed form and against direct truncated series multiplication.
pub fn a_coefficients(jmax: usize) -> Vec<BigRational> {
    let mut a: Vec<BigRational> = Vec::with_capacity(jmax + 1);
    a.push(BigRational::one());
    for j in 1..=jmax {
        let denom = (BigInt::one() << j) - BigInt::one();
        let next = &a[j - 1] * BigRational::new(BigInt::from(-2), denom);
        a.push(next);
    }
    a
}

/// All exponent vectors 0 ≤ k ≤ kmax (coordinatewise), ascending lex.
fn box_points(kmax: &[u32]) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; kmax.len()];
    loop {
        out.push(cur.clone());
        let mut i = kmax.len();
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < kmax[i] {
                cur[i] += 1;
                for v in cur[i + 1..].iter_mut() {
                    *v = 0;
                }
                break;
            }
        }
    }
}

/// All vectors of the given length with coordinate sum ≤ budget.
fn simplex_points(len: usize, budget: u32) -> Vec<Vec<u32>> {
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[i] = v;
            rec(i + 1, left - v, cur, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; len];
    rec(0, budget, &mut cur, &mut out);
    out
}

fn dot_uu(a: &[u32], b: &[u32]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| i64::from(x) * i64::from(y)).sum()
}

fn dot_ui(a: &[u32], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| i64::from(x) * y).sum()
}

/// A finite box of exact mixed moments C_k, the input to `invert_moments`.
#[derive(Debug, Clone)]
pub struct MomentTable {
    kmax: Vec<u32>,
    entries: BTreeMap<Vec<u32>, BigRational>,
}

/// C_k ≤ GROWTH_CONSTANT · 2^{(|k|₁²+4|k|₁)/4}, compared exactly by raising
/// both sides to the fourth power.
fn check_growth(k: &[u32], c: &BigRational) -> Result<(), HarnessError> {
    let t: u32 = k.iter().sum();
    let e = (u64::from(t) * u64::from(t) + 4 * u64::from(t)) as usize;
    let lhs = c.pow(4);
    let rhs = BigRational::from(BigInt::from(4096u32) * (BigInt::one() << e));
    if lhs > rhs {
        return Err(HarnessError::GrowthBound {
            k: k.to_vec(),
            c: c.to_string(),
            bound: format!("8·2^({e}/4)"),
        });
    }
    Ok(())
}

impl MomentTable {
    /// Exact predicted moments over the full box k ≤ kmax for the chosen
    /// characters, verifying C_0 = 1 and the growth bound on every entry.
    pub fn from_predictions(
        tg: &TargetGroup,
        chars: &[CharacterIndex],
        kmax: &[u32],
    ) -> Result<Self, HarnessError> {
        if chars.is_empty() {
            return Err(HarnessError::EmptyTable);
        }
        if chars.len() != kmax.len() {
            return Err(HarnessError::KVectorShape { expected: chars.len(), got: kmax.len() });
        }
        let mut entries = BTreeMap::new();
        for k in box_points(kmax) {
            let pairs: Vec<(CharacterIndex, u32)> =
                chars.iter().copied().zip(k.iter().copied()).collect();
            let kv = KVector::from_pairs(tg, &pairs)?;
            let c = predicted_mixed_moment(&kv)?;
            check_growth(&k, &c)?;
            entries.insert(k, c);
        }
        Self::checked(kmax.to_vec(), entries)
    }

    /// Build from explicit entries covering the full box (useful for
    /// synthetic tables and round-trip tests). C_0 = 1 is still required;
    /// the growth bound is not, since arbitrary tables need not come from
    /// the family law.
    pub fn from_entries(
        kmax: Vec<u32>,
        entries: BTreeMap<Vec<u32>, BigRational>,
    ) -> Result<Self, HarnessError> {
        if kmax.is_empty() {
            return Err(HarnessError::EmptyTable);
        }
        Self::checked(kmax, entries)
    }

    fn checked(
        kmax: Vec<u32>,
        entries: BTreeMap<Vec<u32>, BigRational>,
    ) -> Result<Self, HarnessError> {
        for k in box_points(&kmax) {
            if !entries.contains_key(&k) {
                return Err(HarnessError::MissingEntry(k));
            }
        }
        let root = &entries[&vec![0u32; kmax.len()]];
        if !root.is_one() {
            return Err(HarnessError::BadTableRoot(root.to_string()));
        }
        Ok(Self { kmax, entries })
    }

    pub fn num_chars(&self) -> usize {
        self.kmax.len()
    }

    pub fn kmax(&self) -> &[u32] {
        &self.kmax
    }

    pub fn get(&self, k: &[u32]) -> Result<&BigRational, HarnessError> {
        self.entries.get(k).ok_or_else(|| HarnessError::MissingEntry(k.to_vec()))
    }
}

/// log2 of the number of length-`s` compositions of t (with zeros), i.e.
/// C(t+s−1, s−1).
fn compositions_log2(t: u32, s: usize) -> f64 {
    let mut lg = 0.0f64;
    for i in 1..s {
        lg += f64::from(t + i as u32).log2() - (i as f64).log2();
    }
    lg
}

/// log2 upper bound on max_{|n|₁ = t} ∏ |a_{n_i}| over length-`s` vectors:
/// |a_j| ≤ 2^{−j(j−1)/2} / η_∞, and j(j−1)/2 is convex, so the balanced
/// composition minimizes the exponent sum.
fn max_a_log2(t: u32, s: usize, log2_inv_eta: f64) -> f64 {
    let q = u64::from(t) / s as u64;
    let r = u64::from(t) % s as u64;
    let min_split = r * (q + 1) * q / 2 + (s as u64 - r) * q * (q - 1) / 2;
    s as f64 * log2_inv_eta - min_split as f64
}

/// log2 of a certified upper bound on Σ_{|n|₁ > trunc} |a_n| C_n 2^{−n·k}
/// for any solve point k ≥ (1,…,1), using the growth estimate on C_n.
/// Returns +∞ when the shell bounds do not decay (the certificate cannot
/// close, which happens for multi-character tables at small k).
fn tail_log2(s: usize, trunc: u32) -> f64 {
    let log2_inv_eta = -eta_infinity_approx(2).log2();
    let mut shells: Vec<f64> = Vec::new();
    let mut peak = f64::NEG_INFINITY;
    let mut last = f64::NEG_INFINITY;
    for t in trunc + 1..=trunc + 200 {
        let tf = f64::from(t);
        let lg = compositions_log2(t, s)
            + max_a_log2(t, s, log2_inv_eta)
            + GROWTH_CONSTANT.log2()
            + (tf * tf + 4.0 * tf) / 4.0
            - tf;
        peak = peak.max(lg);
        last = lg;
        shells.push(lg);
        if lg < peak - 150.0 {
            break;
        }
    }
    // Shell bounds still at (or above) peak level at the end of the scan
    // window mean the majorant series diverges.
    if last > peak - 40.0 {
        return f64::INFINITY;
    }
    let total: f64 = shells.iter().map(|&lg| (lg - peak).exp2()).sum();
    peak + total.log2()
}

/// Exact recovered masses on the support box, with a certified bound on the
/// truncation error of each mass.
#[derive(Debug, Clone)]
pub struct InvertedMasses {
    /// Per-character support size: masses cover 0 ≤ m_i < support[i].
    pub support: Vec<u32>,
    pub trunc: u32,
    pub masses: BTreeMap<Vec<u32>, BigRational>,
    /// Certified upper bound on |recovered − true| over all masses.
    pub residual: f64,
}

/// Recover the joint mass function x from its moment generating table
/// C_k = Σ_m x(m)·2^{k·m}. The infinite inversion series is truncated at
/// |n|₁ ≤ trunc, which reserves the top `trunc` layers of the table box;
/// the remaining box (kmax − trunc per coordinate) is the recovered
/// support. Solves the triangular system at the points k = m + 1 in
/// ascending lex order over exact rationals; the only inexactness is the
/// certified truncation residual (its derivation assumes the table comes
/// from a sub-probability mass function).
pub fn invert_moments(table: &MomentTable, trunc: u32) -> Result<InvertedMasses, HarnessError> {
    let s = table.num_chars();
    let mut support = Vec::with_capacity(s);
    for &km in table.kmax() {
        if km <= trunc {
            return Err(HarnessError::InsufficientCoverage {
                kmax: table.kmax().to_vec(),
                trunc,
            });
        }
        support.push(km - trunc);
    }
    let a = a_coefficients(trunc as usize);
    let ns = simplex_points(s, trunc);
    let an: Vec<BigRational> = ns
        .iter()
        .map(|n| n.iter().map(|&j| a[j as usize].clone()).product())
        .collect();
    let coef_for = |d: &[i64]| -> BigRational {
        let mut c = BigRational::zero();
        for (n, an_j) in ns.iter().zip(&an) {
            c += an_j * pow2(dot_ui(n, d));
        }
        c
    };
    let c_diag = coef_for(&vec![-1i64; s]);
    let c_diag_abs = rational_to_f64(&c_diag).abs();
    // Per-solve-point data error: the n-tail of the left side plus one
    // tail-sized term for each already-solved mass (masses of a
    // sub-probability function are at most 1).
    let points: Vec<Vec<u32>> = box_points(&support.iter().map(|&v| v - 1).collect::<Vec<_>>());
    let tail = 2f64.powf(tail_log2(s, trunc));
    let eps = (1.0 + points.len() as f64) * tail;
    let mut solved: Vec<(Vec<u32>, BigRational, f64)> = Vec::new();
    for m in &points {
        let k: Vec<u32> = m.iter().map(|&v| v + 1).collect();
        let mut lhs = BigRational::zero();
        for (n, an_j) in ns.iter().zip(&an) {
            lhs += an_j * table.get(n)? * pow2(-dot_uu(n, &k));
        }
        let mut err = eps;
        for (m_prev, x_prev, e_prev) in &solved {
            let d: Vec<i64> =
                m_prev.iter().zip(&k).map(|(&mp, &kk)| i64::from(mp) - i64::from(kk)).collect();
            let c = coef_for(&d);
            err += rational_to_f64(&c).abs() * e_prev;
            lhs -= c * x_prev;
        }
        let x = lhs / &c_diag;
        solved.push((m.clone(), x, err / c_diag_abs));
    }
    let residual = solved.iter().map(|(_, _, e)| *e).fold(0.0f64, f64::max);
    if !(residual <= INVERSION_TOLERANCE) {
        return Err(HarnessError::ResidualTooLarge {
            bound: residual,
            tol: INVERSION_TOLERANCE,
        });
    }
    let masses = solved.into_iter().map(|(m, x, _)| (m, x)).collect();
    Ok(InvertedMasses { support, trunc, masses, residual })
}
