//! Exact-arithmetic toolkit for statistics of 4-ranks of class groups and
//! ray class groups of imaginary quadratic fields.
//!
//! The crate is organised in layers:
//!
//! * [`arith`] — Jacobi symbols, quadratic-residue tests, and a factored
//!   squarefree sieve.
//! * [`gf2`] — bit-packed linear algebra over F₂ plus subspace-lattice
//!   combinatorics (Gaussian binomials, subspace counts, Möbius values).
//! * [`specialdiv`] — special divisors of an odd squarefree D, the sign maps
//!   into quadratic-character groups, the character counts m_χ and the
//!   divisor sums A_χ, each computed two independent ways.
//! * [`measures`] — exact evaluators for the predicted masses, moments and
//!   averages (Cohen–Lenstra style), with small-case oracles.
//! * [`combinatorics`] — brute-force verification of the linkage/stable-set
//!   identity over F₂^{2k}.
//! * [`harness`] — the empirical engine: sieve discriminants, accumulate
//!   moments and image distributions, compare with predictions, and invert
//!   moment tables back into distributions.
//! * [`rayoracle`] — independent ground truth: class groups from reduced
//!   binary quadratic forms and ray class groups from relation matrices in
//!   Smith normal form.

pub mod arith;
pub mod combinatorics;
pub mod gf2;
pub mod harness;
pub mod measures;
pub mod rayoracle;
pub mod specialdiv;
