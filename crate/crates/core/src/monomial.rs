//! Exact decomposition of a monomial into pure powers plus gradient squares:
//!
//! `u_1^{n_1}⋯u_k^{n_k} = Σ_i p_i u_i^N + Σ_{i<j} d_{i,j}(u) (u_i − u_j)²`
//!
//! with `p` a probability vector and every coefficient of every `d_{i,j}`
//! non-positive. The data come from an absorbing random walk: stage `s`
//! moves exponent between an accumulated variable and variable `s + 1`, one
//! unit at a time, until one of them is exhausted. Absorption probabilities
//! give `p`, expected visit counts give the `d` coefficients. Everything is
//! computed in exact rational arithmetic.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Exponent vector `(n_1, …, n_k)` with every `n_i ≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct MultiIndex {
    n: Vec<u32>,
}

impl MultiIndex {
    pub fn new(n: Vec<u32>) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::invalid("multi-index needs at least one variable"));
        }
        if n.contains(&0) {
            return Err(Error::invalid("multi-index entries must be positive"));
        }
        if n.iter().map(|&x| x as u64).sum::<u64>() > 1 << 16 {
            return Err(Error::size("total degree too large"));
        }
        Ok(MultiIndex { n })
    }

    pub fn powers(&self) -> &[u32] {
        &self.n
    }

    pub fn k(&self) -> usize {
        self.n.len()
    }

    /// Total degree `N`.
    pub fn degree(&self) -> u32 {
        self.n.iter().sum()
    }

    /// Partial sum `N_j = n_1 + … + n_j` (1-based `j`).
    pub fn partial(&self, j: usize) -> u32 {
        self.n[..j].iter().sum()
    }
}

/// A polynomial with exact rational coefficients, keyed by exponent vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Poly {
    terms: BTreeMap<Vec<u32>, BigRational>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn monomial(powers: Vec<u32>, coeff: BigRational) -> Self {
        let mut p = Poly::zero();
        p.add_term(powers, coeff);
        p
    }

    pub fn add_term(&mut self, powers: Vec<u32>, coeff: BigRational) {
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(powers) {
            Entry::Vacant(slot) => {
                slot.insert(coeff);
            }
            Entry::Occupied(mut slot) => {
                *slot.get_mut() += coeff;
                if slot.get().is_zero() {
                    slot.remove();
                }
            }
        }
    }

    pub fn add(&mut self, other: &Poly) {
        for (k, v) in &other.terms {
            self.add_term(k.clone(), v.clone());
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                let key = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                out.add_term(key, va * vb);
            }
        }
        out
    }

    pub fn terms(&self) -> &BTreeMap<Vec<u32>, BigRational> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Evaluates at a floating-point point.
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, c)| {
                let m: f64 = k.iter().zip(u).map(|(&n, &x)| x.powi(n as i32)).product();
                to_f64(c) * m
            })
            .sum()
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// `"num/den"` form used for serialization.
pub fn rational_string(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// The absorbing walk behind the decomposition.
///
/// States are `(i, x)` with `i` the stage (1-based, `1..k`) and `x` the
/// exponent carried by the accumulated variable. Interior stages hold
/// `1..=N_{i+1}−1` and hand over to `(i+1, N_{i+1})` from either edge; the
/// last stage holds `0..=N_k` with both ends absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingChain {
    pub states: Vec<(usize, u32)>,
    /// Sparse rows: `(target state index, probability)`.
    pub transition: Vec<Vec<(usize, BigRational)>>,
    pub start: usize,
    /// Indices of the two absorbing states, low end first.
    pub traps: (usize, usize),
}

impl AbsorbingChain {
    pub fn index_of(&self, state: (usize, u32)) -> Option<usize> {
        self.states.iter().position(|&s| s == state)
    }

    pub fn row_sum(&self, row: usize) -> BigRational {
        self.transition[row]
            .iter()
            .fold(BigRational::zero(), |acc, (_, p)| acc + p)
    }
}

/// Result of building the chain: a single variable needs no walk.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainBuild {
    SinglePower,
    Chain(AbsorbingChain),
}

pub fn build_chain(n: &MultiIndex) -> Result<ChainBuild> {
    let k = n.k();
    if n.degree() < 2 {
        return Err(Error::domain("total degree must be at least 2"));
    }
    if k == 1 {
        return Ok(ChainBuild::SinglePower);
    }
    let mut states = Vec::new();
    for i in 1..k {
        let top = n.partial(i + 1);
        let range = if i < k - 1 { 1..=top - 1 } else { 0..=top };
        states.extend(range.map(|x| (i, x)));
    }
    let index = |s: (usize, u32)| states.iter().position(|&t| t == s).expect("state");
    let half = rational(1, 2);
    let mut transition = Vec::with_capacity(states.len());
    for &(i, x) in &states {
        let top = n.partial(i + 1);
        let mut row: Vec<(usize, BigRational)> = Vec::new();
        let mut push = |target: usize, p: BigRational| {
            if let Some(entry) = row.iter_mut().find(|(t, _)| *t == target) {
                entry.1 += p;
            } else {
                row.push((target, p));
            }
        };
        if i == k - 1 && (x == 0 || x == top) {
            push(index((i, x)), BigRational::one());
        } else {
            for y in [x.wrapping_sub(1), x + 1] {
                let inside = if i < k - 1 { y >= 1 && y < top } else { y <= top };
                if inside {
                    push(index((i, y)), half.clone());
                } else {
                    push(index((i + 1, top)), half.clone());
                }
            }
        }
        transition.push(row);
    }
    let last = k - 1;
    let start = index((1, n.powers()[0]));
    let traps = (index((last, 0)), index((last, n.degree())));
    Ok(ChainBuild::Chain(AbsorbingChain {
        states,
        transition,
        start,
        traps,
    }))
}

/// Solves `a x = b` over the rationals for an integer matrix, using
/// fraction-free (Bareiss) elimination followed by rational back
/// substitution. Returns `None` for a singular matrix.
pub fn solve_exact(mut a: Vec<Vec<BigInt>>, mut b: Vec<BigInt>) -> Option<Vec<BigRational>> {
    let n = b.len();
    let mut prev = BigInt::one();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            for j in col + 1..n {
                a[row][j] = (&a[row][j] * &a[col][col] - &a[row][col] * &a[col][j]) / &prev;
            }
            b[row] = (&b[row] * &a[col][col] - &a[row][col] * &b[col]) / &prev;
            a[row][col] = BigInt::zero();
        }
        prev = a[col][col].clone();
    }
    let mut x = vec![BigRational::zero(); n];
    for row in (0..n).rev() {
        let mut acc = BigRational::from_integer(b[row].clone());
        for j in row + 1..n {
            acc -= BigRational::from_integer(a[row][j].clone()) * &x[j];
        }
        x[row] = acc / BigRational::from_integer(a[row][row].clone());
    }
    Some(x)
}

/// One stage of the walk: a symmetric ±1 walk on `1..top−1` killed at `0`
/// and `top`, entered at `entry`.
struct StageData {
    /// Probability of leaving through `top`.
    up: BigRational,
    /// Expected visits to `x`, indexed by `x − 1`.
    visits: Vec<BigRational>,
}

/// `2(I − Q)` for the killed walk is the integer tridiagonal `(−1, 2, −1)`.
fn stage_data(top: u32, entry: u32) -> StageData {
    let size = (top - 1) as usize;
    let matrix: Vec<Vec<BigInt>> = (0..size)
        .map(|r| {
            (0..size)
                .map(|c| match r.abs_diff(c) {
                    0 => BigInt::from(2),
                    1 => BigInt::from(-1),
                    _ => BigInt::zero(),
                })
                .collect()
        })
        .collect();
    let e = (entry - 1) as usize;
    // Exit through the top from x − 1 = size − 1: (I − Q) h = e_{top−1}/2.
    let mut rhs = vec![BigInt::zero(); size];
    rhs[size - 1] = BigInt::one();
    let up_from = solve_exact(matrix.clone(), rhs).expect("nonsingular walk matrix");
    // Occupations from the entry: (I − Q)ᵀ g = δ_entry, and the matrix is symmetric.
    let mut rhs = vec![BigInt::zero(); size];
    rhs[e] = BigInt::from(2);
    let visits = solve_exact(matrix, rhs).expect("nonsingular walk matrix");
    StageData {
        up: up_from[e].clone(),
        visits,
    }
}

/// The decomposition data for a multi-index.
#[derive(Debug, Clone, PartialEq)]
pub struct GradDecomposition {
    /// Variables in processing order: `order[s]` is the original index of
    /// the `s`-th processed variable.
    pub order: Vec<usize>,
    /// Degree `N`.
    pub degree: u32,
    /// `p_i` for each original variable.
    pub p: Vec<BigRational>,
    /// `d_{i,j}` keyed by original indices `(min, max)`.
    pub d: BTreeMap<(usize, usize), Poly>,
}

/// Decomposes with the variables processed in the given order.
pub fn decompose(n: &MultiIndex) -> Result<GradDecomposition> {
    decompose_with(n, false)
}

/// Decomposes; with `canonical` the variables are processed in order of
/// decreasing exponent (ties by index), which fixes one representative of
/// the non-unique decomposition independent of how the factors are listed.
pub fn decompose_with(n: &MultiIndex, canonical: bool) -> Result<GradDecomposition> {
    let total = n.degree();
    if total < 2 {
        return Err(Error::domain("total degree must be at least 2"));
    }
    let k = n.k();
    let mut order: Vec<usize> = (0..k).collect();
    if canonical {
        order.sort_by_key(|&i| (std::cmp::Reverse(n.powers()[i]), i));
    }
    let powers: Vec<u32> = order.iter().map(|&i| n.powers()[i]).collect();
    let mut p = vec![BigRational::zero(); k];
    let mut d: BTreeMap<(usize, usize), Poly> = BTreeMap::new();
    if k == 1 {
        p[0] = BigRational::one();
        return Ok(GradDecomposition {
            order,
            degree: total,
            p,
            d,
        });
    }
    let partial = |j: usize| -> u32 { powers[..j].iter().sum() };
    // Distribution of the accumulated variable (processing index).
    let mut acc = vec![BigRational::zero(); k];
    acc[0] = BigRational::one();
    let half = rational(1, 2);
    for s in 1..k {
        // Stage s pairs the accumulated variable with processing index s.
        let top = partial(s + 1);
        let entry = if s == 1 { powers[0] } else { partial(s) };
        let data = stage_data(top, entry);
        let tail: Vec<u32> = powers[s + 1..].to_vec();
        for a in 0..s {
            if acc[a].is_zero() {
                continue;
            }
            let weight = -&half * &acc[a];
            let key = (order[a].min(order[s]), order[a].max(order[s]));
            let poly = d.entry(key).or_default();
            for x in 1..top {
                let g = &data.visits[(x - 1) as usize];
                let mut exps = vec![0u32; k];
                exps[order[a]] += x - 1;
                exps[order[s]] += top - x - 1;
                for (offset, &t) in tail.iter().enumerate() {
                    exps[order[s + 1 + offset]] += t;
                }
                poly.add_term(exps, &weight * g);
            }
        }
        let down = BigRational::one() - &data.up;
        let moved: BigRational = acc.iter().fold(BigRational::zero(), |t, v| t + v) * &down;
        for v in acc.iter_mut() {
            *v *= &data.up;
        }
        acc[s] += moved;
    }
    for (a, prob) in acc.into_iter().enumerate() {
        p[order[a]] = prob;
    }
    d.retain(|_, poly| !poly.is_zero());
    Ok(GradDecomposition {
        order,
        degree: total,
        p,
        d,
    })
}

/// Expands both sides as exact polynomials and compares them.
pub fn verify_identity(n: &MultiIndex, dec: &GradDecomposition) -> bool {
    let k = n.k();
    if dec.p.len() != k || dec.degree != n.degree() {
        return false;
    }
    let mut rhs = Poly::zero();
    for (i, pi) in dec.p.iter().enumerate() {
        let mut exps = vec![0u32; k];
        exps[i] = dec.degree;
        rhs.add_term(exps, pi.clone());
    }
    for (&(i, j), poly) in &dec.d {
        if i >= k || j >= k {
            return false;
        }
        let mut square = Poly::zero();
        let mut e = vec![0u32; k];
        e[i] = 2;
        square.add_term(e, BigRational::one());
        let mut e = vec![0u32; k];
        e[j] = 2;
        square.add_term(e, BigRational::one());
        let mut e = vec![0u32; k];
        e[i] = 1;
        e[j] = 1;
        square.add_term(e, rational(-2, 1));
        rhs.add(&poly.mul(&square));
    }
    rhs == Poly::monomial(n.powers().to_vec(), BigRational::one())
}

/// Empirical constant `max_{i,j} sup_{|u|≤U} |d_{i,j}| / (U^{N−2} N³)`.
///
/// Every coefficient is non-positive and `d_{i,j}` is homogeneous of degree
/// `N − 2`, so the supremum sits at `u ≡ U` and equals `U^{N−2} Σ|c|`.
pub fn coefficient_bound_report(n: &MultiIndex, dec: &GradDecomposition, big_u: f64) -> Result<f64> {
    if !(big_u > 0.0 && big_u <= 1.0) {
        return Err(Error::domain(format!("U must lie in (0, 1], got {big_u}")));
    }
    let total = n.degree();
    let scale = big_u.powi(total as i32 - 2) * (total as f64).powi(3);
    let point = vec![big_u; n.k()];
    Ok(dec
        .d
        .values()
        .map(|poly| poly.eval(&point).abs() / scale)
        .fold(0.0, f64::max))
}

impl GradDecomposition {
    pub fn p_sum(&self) -> BigRational {
        self.p.iter().fold(BigRational::zero(), |a, b| a + b)
    }

    /// True when every coefficient of every `d_{i,j}` is `≤ 0`.
    pub fn all_coefficients_nonpositive(&self) -> bool {
        self.d
            .values()
            .all(|poly| poly.terms.values().all(|c| !c.is_positive()))
    }
}

impl Serialize for GradDecomposition {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Term {
            powers: Vec<u32>,
            coeff: String,
        }
        #[derive(Serialize)]
        struct Entry {
            i: usize,
            j: usize,
            terms: Vec<Term>,
        }
        #[derive(Serialize)]
        struct Repr {
            order: Vec<usize>,
            degree: u32,
            p: Vec<String>,
            d: Vec<Entry>,
        }
        Repr {
            order: self.order.clone(),
            degree: self.degree,
            p: self.p.iter().map(rational_string).collect(),
            d: self
                .d
                .iter()
                .map(|(&(i, j), poly)| Entry {
                    i,
                    j,
                    terms: poly
                        .terms
                        .iter()
                        .map(|(k, c)| Term {
                            powers: k.clone(),
                            coeff: rational_string(c),
                        })
                        .collect(),
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(n: &[u32]) -> MultiIndex {
        MultiIndex::new(n.to_vec()).unwrap()
    }

    fn r(a: i64, b: i64) -> BigRational {
        rational(a, b)
    }

    /// Green's function of the symmetric walk on `0..=top` killed at the ends.
    fn green(top: u32, from: u32, at: u32) -> BigRational {
        let (lo, hi) = (from.min(at) as i64, from.max(at) as i64);
        r(2 * lo * (top as i64 - hi), top as i64)
    }

    #[test]
    fn stage_solve_matches_green_function() {
        for top in 2..9u32 {
            for entry in 1..top {
                let data = stage_data(top, entry);
                assert_eq!(data.up, r(entry as i64, top as i64));
                for x in 1..top {
                    assert_eq!(data.visits[(x - 1) as usize], green(top, entry, x));
                }
            }
        }
    }

    #[test]
    fn exact_solver_with_pivoting() {
        let a = vec![
            vec![BigInt::from(0), BigInt::from(1)],
            vec![BigInt::from(2), BigInt::from(3)],
        ];
        let x = solve_exact(a, vec![BigInt::from(1), BigInt::from(4)]).unwrap();
        assert_eq!(x, vec![r(1, 2), r(1, 1)]);
        let singular = vec![
            vec![BigInt::from(1), BigInt::from(2)],
            vec![BigInt::from(2), BigInt::from(4)],
        ];
        assert!(solve_exact(singular, vec![BigInt::from(1), BigInt::from(1)]).is_none());
    }

    #[test]
    fn uv_identity() {
        let n = mi(&[1, 1]);
        let dec = decompose(&n).unwrap();
        assert_eq!(dec.p, vec![r(1, 2), r(1, 2)]);
        let d = &dec.d[&(0, 1)];
        assert_eq!(d, &Poly::monomial(vec![0, 0], r(-1, 2)));
        assert!(verify_identity(&n, &dec));
    }

    #[test]
    fn u2v_identity() {
        let n = mi(&[2, 1]);
        let dec = decompose(&n).unwrap();
        assert_eq!(dec.p, vec![r(2, 3), r(1, 3)]);
        let mut expected = Poly::zero();
        expected.add_term(vec![1, 0], r(-2, 3));
        expected.add_term(vec![0, 1], r(-1, 3));
        assert_eq!(dec.d[&(0, 1)], expected);
        assert!(verify_identity(&n, &dec));
        // Evaluate at (2, 1): 4 = 16/3 + 1/3 − 5/3.
        let lhs = 4.0;
        let rhs = 16.0 / 3.0 + 1.0 / 3.0 + dec.d[&(0, 1)].eval(&[2.0, 1.0]);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn uvw_identity() {
        let n = mi(&[1, 1, 1]);
        let dec = decompose(&n).unwrap();
        assert!(verify_identity(&n, &dec));
        assert_eq!(dec.p_sum(), BigRational::one());
        assert!(dec.all_coefficients_nonpositive());
    }

    #[test]
    fn single_variable() {
        let n = mi(&[5]);
        assert_eq!(build_chain(&n).unwrap(), ChainBuild::SinglePower);
        let dec = decompose(&n).unwrap();
        assert_eq!(dec.p, vec![BigRational::one()]);
        assert!(dec.d.is_empty());
        assert!(verify_identity(&n, &dec));
    }

    #[test]
    fn degree_one_is_domain_error() {
        assert!(matches!(decompose(&mi(&[1])), Err(Error::Domain(_))));
        assert!(MultiIndex::new(vec![1, 0]).is_err());
    }

    #[test]
    fn chain_shapes() {
        let ChainBuild::Chain(c) = build_chain(&mi(&[1, 1])).unwrap() else {
            panic!("expected chain")
        };
        assert_eq!(c.states, vec![(1, 0), (1, 1), (1, 2)]);
        assert_eq!(c.states[c.start], (1, 1));
        assert_eq!(c.traps, (0, 2));
        let ChainBuild::Chain(c) = build_chain(&mi(&[2, 1])).unwrap() else {
            panic!("expected chain")
        };
        assert_eq!(c.states.len(), 4);
        assert_eq!(c.states[c.start], (1, 2));
        let ChainBuild::Chain(c) = build_chain(&mi(&[1, 2, 1, 3])).unwrap() else {
            panic!("expected chain")
        };
        // |Ω_i| = N_{i+1} − 1 for i < k − 1, and N_k + 1 for the last stage.
        assert_eq!(c.states.iter().filter(|s| s.0 == 1).count(), 2);
        assert_eq!(c.states.iter().filter(|s| s.0 == 2).count(), 3);
        assert_eq!(c.states.iter().filter(|s| s.0 == 3).count(), 8);
        for row in 0..c.states.len() {
            assert_eq!(c.row_sum(row), BigRational::one());
        }
        assert_eq!(c.transition[c.traps.0], vec![(c.traps.0, BigRational::one())]);
    }

    #[test]
    fn one_state_stage_hands_over_with_probability_one() {
        let ChainBuild::Chain(c) = build_chain(&mi(&[1, 1, 1])).unwrap() else {
            panic!("expected chain")
        };
        let from = c.index_of((1, 1)).unwrap();
        let to = c.index_of((2, 2)).unwrap();
        assert_eq!(c.transition[from], vec![(to, BigRational::one())]);
    }

    #[test]
    fn template_structure() {
        let n = mi(&[2, 1, 3]);
        let dec = decompose(&n).unwrap();
        for (&(i, j), poly) in &dec.d {
            let nj: u32 = n.partial(j + 1);
            for powers in poly.terms().keys() {
                let m = powers[i] + 1;
                assert!(m >= 1 && m < nj);
                assert_eq!(powers[j], nj - m - 1);
                for l in j + 1..n.k() {
                    assert_eq!(powers[l], n.powers()[l]);
                }
                assert_eq!(powers.iter().sum::<u32>(), n.degree() - 2);
            }
        }
    }

    #[test]
    fn canonical_order_still_verifies() {
        let n = mi(&[1, 3, 2]);
        let dec = decompose_with(&n, true).unwrap();
        assert_eq!(dec.order, vec![1, 2, 0]);
        assert!(verify_identity(&n, &dec));
        let swapped = decompose_with(&mi(&[3, 2, 1]), true).unwrap();
        let mut p = swapped.p.clone();
        p.rotate_right(1);
        assert_eq!(p, dec.p);
    }

    #[test]
    fn tampered_p_fails() {
        let n = mi(&[2, 2]);
        let mut dec = decompose(&n).unwrap();
        dec.p[0] += r(1, 1000);
        assert!(!verify_identity(&n, &dec));
    }

    #[test]
    fn bound_report_values() {
        let n = mi(&[1, 1]);
        let dec = decompose(&n).unwrap();
        assert_eq!(coefficient_bound_report(&n, &dec, 1.0).unwrap(), 1.0 / 16.0);
        let n = mi(&[2, 1]);
        let dec = decompose(&n).unwrap();
        let half = coefficient_bound_report(&n, &dec, 0.5).unwrap();
        let sup = dec.d[&(0, 1)].eval(&[0.5, 0.5]).abs();
        assert!((half - sup / (0.5 * 27.0)).abs() < 1e-15);
        assert!(coefficient_bound_report(&n, &dec, 0.0).is_err());
    }

    #[test]
    fn json_uses_rational_strings() {
        let dec = decompose(&mi(&[2, 1])).unwrap();
        let v = serde_json::to_value(&dec).unwrap();
        assert_eq!(v["p"], serde_json::json!(["2/3", "1/3"]));
        assert_eq!(v["d"][0]["i"], 0);
        assert_eq!(v["d"][0]["j"], 1);
    }
}
