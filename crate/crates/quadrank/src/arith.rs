//! Integer substrate: Jacobi symbols, quadratic-residue tests and a factored
//! squarefree sieve.
//!
//! Everything downstream works with odd squarefree moduli carried together
//! with their prime factorisation ([`FactoredOdd`]), so residue questions
//! reduce to per-prime Jacobi symbols. 64-bit arithmetic suffices for the
//! scales this crate targets.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArithError {
    #[error("modulus must be odd and positive, got {0}")]
    BadModulus(i64),
    #[error("{0} is not an odd squarefree positive integer")]
    NotOddSquarefree(u64),
    #[error("prime list invalid: {0}")]
    BadPrimeList(String),
    #[error("inputs must be coprime: gcd({a}, {n}) > 1")]
    NotCoprime { a: i64, n: u64 },
    #[error("sieve limit {limit} exceeds table capacity {capacity}")]
    SieveCapacity { limit: u64, capacity: u64 },
    #[error("residue {a} and modulus {q} are not coprime")]
    BadProgression { a: u64, q: u64 },
    #[error("sieve limit {limit} below modulus {q}")]
    LimitBelowModulus { limit: u64, q: u64 },
}

/// Jacobi symbol (a/n) for odd positive n, computed by binary reciprocity
/// (no factorisation of n needed). Returns 0 exactly when gcd(a, n) > 1.
pub fn jacobi(a: i64, n: u64) -> Result<i32, ArithError> {
    if n == 0 || n % 2 == 0 {
        return Err(ArithError::BadModulus(n as i64));
    }
    let mut n = n;
    let mut a = a.rem_euclid(n as i64) as u64;
    let mut t = 1i32;
    while a != 0 {
        while a % 2 == 0 {
            a /= 2;
            if matches!(n % 8, 3 | 5) {
                t = -t;
            }
        }
        std::mem::swap(&mut a, &mut n);
        if a % 4 == 3 && n % 4 == 3 {
            t = -t;
        }
        a %= n;
    }
    Ok(if n == 1 { t } else { 0 })
}

/// Trial-division primality test; adequate for the desk-scale inputs used
/// throughout (moduli, conductors, sieve primes).
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// An odd squarefree positive integer together with its ascending prime
/// factorisation. The unit D = 1 is admitted with an empty prime list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FactoredOdd {
    value: u64,
    primes: Vec<u64>,
}

impl FactoredOdd {
    /// Factor `value` by trial division and check it is odd and squarefree.
    pub fn new(value: u64) -> Result<Self, ArithError> {
        if value == 0 || value % 2 == 0 {
            return Err(ArithError::NotOddSquarefree(value));
        }
        let mut primes = Vec::new();
        let mut rest = value;
        let mut d = 3u64;
        while d * d <= rest {
            if rest % d == 0 {
                rest /= d;
                if rest % d == 0 {
                    return Err(ArithError::NotOddSquarefree(value));
                }
                primes.push(d);
            }
            d += 2;
        }
        if rest > 1 {
            primes.push(rest);
        }
        Ok(FactoredOdd { value, primes })
    }

    /// Build from an ascending list of distinct odd primes.
    pub fn from_primes(primes: Vec<u64>) -> Result<Self, ArithError> {
        let mut value = 1u64;
        for (i, &p) in primes.iter().enumerate() {
            if p < 3 || p % 2 == 0 || !is_prime_u64(p) {
                return Err(ArithError::BadPrimeList(format!("{p} is not an odd prime")));
            }
            if i > 0 && primes[i - 1] >= p {
                return Err(ArithError::BadPrimeList("primes not strictly ascending".into()));
            }
            value = value
                .checked_mul(p)
                .ok_or_else(|| ArithError::BadPrimeList("product overflows u64".into()))?;
        }
        Ok(FactoredOdd { value, primes })
    }

    pub fn one() -> Self {
        FactoredOdd { value: 1, primes: Vec::new() }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    /// Number of prime factors ω.
    pub fn omega(&self) -> usize {
        self.primes.len()
    }

    pub fn is_coprime_to(&self, other: &FactoredOdd) -> bool {
        num_integer::gcd(self.value, other.value) == 1
    }
}

/// True iff `a` is a square modulo every prime of the odd squarefree modulus
/// `n` (equivalently a square mod n.value()). Requires gcd(a, n) = 1; the
/// empty modulus n = 1 answers true.
pub fn is_square_mod(a: i64, n: &FactoredOdd) -> Result<bool, ArithError> {
    if num_integer::gcd(a.rem_euclid(n.value() as i64) as u64, n.value()) != 1 {
        return Err(ArithError::NotCoprime { a, n: n.value() });
    }
    for &p in n.primes() {
        if jacobi(a, p)? != 1 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest-prime-factor table for 2 ≤ n ≤ limit; shared read-only backing
/// store for the squarefree sieve.
pub struct SpfTable {
    limit: u64,
    spf: Vec<u32>,
}

impl SpfTable {
    pub fn new(limit: u64) -> Self {
        assert!(limit < u32::MAX as u64, "SpfTable limit must fit in u32");
        let n = limit as usize;
        let mut spf = vec![0u32; n + 1];
        let mut i = 2usize;
        while i <= n {
            if spf[i] == 0 {
                let mut j = i;
                while j <= n {
                    if spf[j] == 0 {
                        spf[j] = i as u32;
                    }
                    j += i;
                }
            }
            i += 1;
        }
        SpfTable { limit, spf }
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn smallest_prime_factor(&self, n: u64) -> u64 {
        self.spf[n as usize] as u64
    }

    /// Factor an odd `n ≤ limit`; `None` if it is not squarefree.
    pub fn factor_odd_squarefree(&self, n: u64) -> Option<FactoredOdd> {
        debug_assert!(n % 2 == 1 && n <= self.limit);
        let mut primes = Vec::new();
        let mut rest = n;
        while rest > 1 {
            let p = self.spf[rest as usize] as u64;
            rest /= p;
            if rest % p == 0 {
                return None;
            }
            primes.push(p);
        }
        Some(FactoredOdd { value: n, primes })
    }
}

/// Iterator over the odd squarefree D ≤ limit with D ≡ a (mod q), ascending,
/// each carrying its full factorisation.
pub struct SquarefreeSieve<'a> {
    table: &'a SpfTable,
    next: u64,
    step: u64,
    limit: u64,
}

impl<'a> Iterator for SquarefreeSieve<'a> {
    type Item = FactoredOdd;

    fn next(&mut self) -> Option<FactoredOdd> {
        while self.next <= self.limit {
            let d = self.next;
            self.next += self.step;
            if d % 2 == 1 {
                if let Some(f) = self.table.factor_odd_squarefree(d) {
                    return Some(f);
                }
            }
        }
        None
    }
}

/// Stream of odd squarefree D ≤ limit, D ≡ a (mod q), in ascending order.
/// Capacity and progression validity are checked before any value is yielded.
pub fn sieve_squarefree<'a>(
    table: &'a SpfTable,
    limit: u64,
    a: u64,
    q: u64,
) -> Result<SquarefreeSieve<'a>, ArithError> {
    if limit < q {
        return Err(ArithError::LimitBelowModulus { limit, q });
    }
    sieve_squarefree_range(table, 1, limit, a, q)
}

/// The same stream restricted to lo ≤ D ≤ hi; empty when the window misses
/// the progression.  Used for fixed-block sharding of a D-range.
pub fn sieve_squarefree_range<'a>(
    table: &'a SpfTable,
    lo: u64,
    hi: u64,
    a: u64,
    q: u64,
) -> Result<SquarefreeSieve<'a>, ArithError> {
    if q == 0 || num_integer::gcd(a, q) != 1 {
        return Err(ArithError::BadProgression { a, q });
    }
    if hi > table.limit() {
        return Err(ArithError::SieveCapacity { limit: hi, capacity: table.limit() });
    }
    let lo = lo.max(1);
    let r = a % q;
    let first = if lo % q <= r { lo - lo % q + r } else { lo - lo % q + q + r };
    Ok(SquarefreeSieve { table, next: first, step: q, limit: hi })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_pinned_values() {
        assert_eq!(jacobi(1, 15).unwrap(), 1);
        assert_eq!(jacobi(3, 13).unwrap(), 1); // squares mod 13: {1,3,4,9,10,12}
        assert_eq!(jacobi(3, 7).unwrap(), -1); // squares mod 7: {1,2,4}
        assert_eq!(jacobi(6, 3).unwrap(), 0);
        assert_eq!(jacobi(-1, 7).unwrap(), -1);
        assert_eq!(jacobi(-1, 13).unwrap(), 1);
        assert_eq!(jacobi(5, 1).unwrap(), 1);
        assert!(jacobi(3, 4).is_err());
        assert!(jacobi(3, 0).is_err());
    }

    #[test]
    fn jacobi_matches_euler_criterion_for_primes() {
        // (a/p) ≡ a^((p-1)/2) mod p for odd primes p.
        for p in [3u64, 5, 7, 11, 13, 17, 19, 23, 97, 101] {
            for a in 0..p as i64 {
                let mut pow = 1u64;
                let mut base = a.rem_euclid(p as i64) as u64;
                let mut e = (p - 1) / 2;
                base %= p;
                while e > 0 {
                    if e & 1 == 1 {
                        pow = pow * base % p;
                    }
                    base = base * base % p;
                    e >>= 1;
                }
                let expect = if pow == 1 {
                    1
                } else if pow == p - 1 {
                    -1
                } else {
                    0
                };
                assert_eq!(jacobi(a, p).unwrap(), expect, "a={a} p={p}");
            }
        }
    }

    #[test]
    fn jacobi_multiplicative_in_modulus() {
        for m in (1..200u64).step_by(2) {
            for n in (1..200u64).step_by(2) {
                for a in [-7i64, -2, 0, 1, 2, 3, 10, 99] {
                    assert_eq!(
                        jacobi(a, m * n).unwrap(),
                        jacobi(a, m).unwrap() * jacobi(a, n).unwrap(),
                        "a={a} m={m} n={n}"
                    );
                }
            }
        }
    }

    #[test]
    fn jacobi_multiplicative_in_numerator() {
        for n in (1..120u64).step_by(2) {
            for a in -20i64..20 {
                for b in -20i64..20 {
                    assert_eq!(
                        jacobi(a * b, n).unwrap(),
                        jacobi(a, n).unwrap() * jacobi(b, n).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn quadratic_reciprocity_under_1000() {
        let odd_primes: Vec<u64> = (3..1000).filter(|&n| is_prime_u64(n)).collect();
        for &p in &odd_primes {
            for &q in &odd_primes {
                if p == q {
                    continue;
                }
                let lhs = jacobi(p as i64, q).unwrap() * jacobi(q as i64, p).unwrap();
                let rhs = if p % 4 == 3 && q % 4 == 3 { -1 } else { 1 };
                assert_eq!(lhs, rhs, "p={p} q={q}");
            }
        }
    }

    #[test]
    fn factored_odd_construction() {
        let d = FactoredOdd::new(39).unwrap();
        assert_eq!(d.primes(), &[3, 13]);
        assert_eq!(d.omega(), 2);
        let one = FactoredOdd::new(1).unwrap();
        assert_eq!(one.omega(), 0);
        assert_eq!(one.value(), 1);
        assert!(FactoredOdd::new(12).is_err());
        assert!(FactoredOdd::new(9).is_err());
        assert!(FactoredOdd::new(45).is_err());
        assert_eq!(FactoredOdd::from_primes(vec![3, 13]).unwrap().value(), 39);
        assert!(FactoredOdd::from_primes(vec![13, 3]).is_err());
        assert!(FactoredOdd::from_primes(vec![3, 9]).is_err());
    }

    #[test]
    fn is_square_mod_cases() {
        let n5 = FactoredOdd::new(5).unwrap();
        assert!(is_square_mod(4, &n5).unwrap());
        assert!(is_square_mod(59, &n5).unwrap()); // 59 ≡ 4 mod 5
        let n35 = FactoredOdd::new(35).unwrap();
        assert!(!is_square_mod(3, &n35).unwrap()); // (3/5) = -1
        assert!(is_square_mod(11, &FactoredOdd::one()).unwrap());
        assert!(is_square_mod(10, &n5).is_err());
    }

    #[test]
    fn sieve_first_values() {
        let table = SpfTable::new(200);
        let got: Vec<u64> = sieve_squarefree(&table, 100, 3, 4)
            .unwrap()
            .map(|f| f.value())
            .collect();
        assert_eq!(got, vec![3, 7, 11, 15, 19, 23, 31, 35, 39, 43, 47, 51, 55, 59, 67, 71, 79, 83, 87, 91, 95]);
        let got: Vec<u64> = sieve_squarefree(&table, 10, 1, 1)
            .unwrap()
            .map(|f| f.value())
            .collect();
        assert_eq!(got, vec![1, 3, 5, 7]);
        let got: Vec<u64> = sieve_squarefree(&table, 100, 59, 60)
            .unwrap()
            .map(|f| f.value())
            .collect();
        assert_eq!(got, vec![59]);
    }

    #[test]
    fn sieve_guards() {
        let table = SpfTable::new(100);
        assert!(sieve_squarefree(&table, 100, 2, 4).is_err());
        assert!(sieve_squarefree(&table, 3, 3, 4).is_err());
        assert!(sieve_squarefree(&table, 1000, 3, 4).is_err());
    }

    #[test]
    fn sieve_range_blocks_concatenate_to_full_stream() {
        let limit = 10_000u64;
        let table = SpfTable::new(limit);
        let full: Vec<u64> = sieve_squarefree(&table, limit, 59, 60)
            .unwrap()
            .map(|f| f.value())
            .collect();
        let mut blocked = Vec::new();
        for (lo, hi) in [(1, 2_500), (2_501, 5_000), (5_001, 7_500), (7_501, 10_000)] {
            blocked.extend(
                sieve_squarefree_range(&table, lo, hi, 59, 60)
                    .unwrap()
                    .map(|f| f.value()),
            );
        }
        assert_eq!(blocked, full);
        // A window that misses the progression entirely yields nothing.
        let empty: Vec<u64> = sieve_squarefree_range(&table, 60, 118, 59, 60)
            .unwrap()
            .map(|f| f.value())
            .collect();
        assert!(empty.is_empty());
        // A window narrower than the modulus is fine as long as it hits.
        let hit: Vec<u64> = sieve_squarefree_range(&table, 110, 125, 59, 60)
            .unwrap()
            .map(|f| f.value())
            .collect();
        assert_eq!(hit, vec![119]);
    }

    #[test]
    fn sieve_matches_trial_division_at_1e5() {
        let limit = 100_000u64;
        let table = SpfTable::new(limit);
        let sieved: Vec<u64> = sieve_squarefree(&table, limit, 1, 1)
            .unwrap()
            .map(|f| {
                assert_eq!(f.primes().iter().product::<u64>(), f.value());
                f.value()
            })
            .collect();
        let reference: Vec<u64> = (1..=limit)
            .step_by(2)
            .filter(|&n| FactoredOdd::new(n).is_ok())
            .collect();
        assert_eq!(sieved, reference);
    }
}
