//! Polymer-gas representation of the normalized ring partition function
//! `Z* = Z / Π(e^{h_i} + e^{−h_i})` and its cluster coefficients.
//!
//! Pairs are indexed by their left site: pair `p` joins sites `p` and
//! `p + 1 (mod ℓ)`. All ring operations here require `ℓ ≥ 3` so that the
//! `ℓ` pairs are distinct.

use std::collections::{BTreeMap, HashMap};

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::compensated_sum;

/// Largest ring for direct spin enumeration.
pub const MAX_ENUMERATION_RING: usize = 14;
/// Largest ring for the polymer-gas sum.
pub const MAX_POLYMER_RING: usize = 12;
/// Largest ring for cluster coefficients.
pub const MAX_COEFF_RING: usize = 10;
/// Largest truncation order for cluster coefficients.
pub const MAX_COEFF_DEGREE: u32 = 8;

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

fn check_ring(u: &[f64], max: usize) -> Result<()> {
    if u.len() < 3 {
        return Err(Error::invalid(format!("ring length must be >= 3, got {}", u.len())));
    }
    if u.len() > max {
        return Err(Error::size(format!("ring length {} exceeds {max}", u.len())));
    }
    for &x in u {
        if !x.is_finite() {
            return Err(Error::invalid("non-finite tanh field"));
        }
        if x.abs() >= 1.0 {
            return Err(Error::domain(format!("tanh field {x} outside (-1, 1)")));
        }
    }
    Ok(())
}

/// A polymer `(C, S, X)`: a connected arc of pairs, each labelled S or X.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Polymer {
    ell: usize,
    /// First pair of the arc.
    start: usize,
    /// Pairs of the support, in ring order starting at `start`.
    support: Vec<usize>,
    s_pairs: Vec<usize>,
    x_sites: Vec<usize>,
}

impl Polymer {
    /// Arc of `len` pairs starting at pair `start`; bit `k` of `s_mask`
    /// marks the `k`-th pair of the arc as an S-pair.
    pub fn new(ell: usize, start: usize, len: usize, s_mask: u64) -> Result<Self> {
        if ell < 3 {
            return Err(Error::invalid("polymers need a ring of length >= 3"));
        }
        if start >= ell || len == 0 || len > ell {
            return Err(Error::invalid(format!(
                "arc (start {start}, length {len}) does not fit a ring of {ell}"
            )));
        }
        if len < 64 && s_mask >> len != 0 {
            return Err(Error::invalid("S-mask has bits beyond the arc"));
        }
        let support: Vec<usize> = (0..len).map(|k| (start + k) % ell).collect();
        let s_pairs: Vec<usize> = (0..len)
            .filter(|&k| s_mask >> k & 1 == 1)
            .map(|k| support[k])
            .collect();
        let mut cover = vec![0u8; ell];
        for (k, &p) in support.iter().enumerate() {
            if s_mask >> k & 1 == 0 {
                cover[p] += 1;
                cover[(p + 1) % ell] += 1;
            }
        }
        let x_sites = (0..ell).filter(|&i| cover[i] == 1).collect();
        Ok(Polymer {
            ell,
            start,
            support,
            s_pairs,
            x_sites,
        })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn s_pairs(&self) -> &[usize] {
        &self.s_pairs
    }

    pub fn x_sites(&self) -> &[usize] {
        &self.x_sites
    }

    pub fn x_pair_count(&self) -> usize {
        self.support.len() - self.s_pairs.len()
    }

    pub fn is_full_ring(&self) -> bool {
        self.support.len() == self.ell
    }

    /// Sites touched by the support.
    pub fn sites(&self) -> Vec<usize> {
        let mut sites: Vec<usize> = self
            .support
            .iter()
            .flat_map(|&p| [p, (p + 1) % self.ell])
            .collect();
        sites.sort_unstable();
        sites.dedup();
        sites
    }

    /// `|Γ| = |C| + 1`.
    pub fn size(&self) -> usize {
        self.support.len() + 1
    }

    /// Compatibility: supports share no site.
    pub fn compatible(&self, other: &Polymer) -> bool {
        let mine = self.sites();
        other.sites().iter().all(|s| mine.binary_search(s).is_err())
    }

    /// Weight `sinh(λ)^{#X-pairs} (cosh λ − 1)^{|S|} Π_{x∈X} u_x`. The full
    /// ring without S-pairs has no singly covered site, so this also yields
    /// `sinh(λ)^ℓ` there.
    pub fn weight(&self, lambda: f64, u: &[f64]) -> f64 {
        if self.is_full_ring() && self.s_pairs.is_empty() {
            return lambda.sinh().powi(self.ell as i32);
        }
        let mut w = lambda.sinh().powi(self.x_pair_count() as i32)
            * (lambda.cosh() - 1.0).powi(self.s_pairs.len() as i32);
        for &x in &self.x_sites {
            w *= u[x];
        }
        w
    }
}

/// Every polymer supported on the arc of `len` pairs starting at `start`.
pub fn polymers_on_arc(ell: usize, start: usize, len: usize) -> Result<Vec<Polymer>> {
    if len > 20 {
        return Err(Error::size("arc too long to label exhaustively"));
    }
    (0..1u64 << len)
        .map(|mask| Polymer::new(ell, start, len, mask))
        .collect()
}

/// All polymers on the ring of length `ell`.
pub fn enumerate_polymers(ell: usize) -> Result<Vec<Polymer>> {
    if ell > MAX_POLYMER_RING {
        return Err(Error::size(format!("ring length {ell} exceeds {MAX_POLYMER_RING}")));
    }
    let mut all = Vec::new();
    for len in 1..ell {
        for start in 0..ell {
            all.extend(polymers_on_arc(ell, start, len)?);
        }
    }
    all.extend(polymers_on_arc(ell, 0, ell)?);
    Ok(all)
}

/// `Z*` by direct enumeration of the `2^ℓ` spin configurations, using
/// `e^{hσ}/(e^h + e^{−h}) = (1 + σu)/2`.
pub fn z_star_enumerate(lambda: f64, u: &[f64]) -> Result<f64> {
    check_lambda(lambda)?;
    check_ring(u, MAX_ENUMERATION_RING)?;
    let ell = u.len();
    let terms = (0u32..1 << ell).map(|mask| {
        let spin = |i: usize| if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
        let mut bond = 0.0;
        let mut field = 1.0;
        for i in 0..ell {
            let s = spin(i);
            bond += s * spin((i + 1) % ell);
            field *= 0.5 * (1.0 + s * u[i]);
        }
        field * (lambda * bond).exp()
    });
    Ok(compensated_sum(terms))
}

/// `Z*` as the partition function of the polymer gas: a sum over compatible
/// collections, i.e. over sets of pairs split into maximal arcs, each arc
/// contributing the total weight of the polymers it supports.
pub fn z_star_polymer(lambda: f64, u: &[f64]) -> Result<f64> {
    check_lambda(lambda)?;
    check_ring(u, MAX_POLYMER_RING)?;
    let ell = u.len();
    // arc_weight[start][len - 1]
    let mut arc_weight = vec![vec![0.0; ell]; ell];
    for (start, row) in arc_weight.iter_mut().enumerate() {
        for len in 1..ell {
            row[len - 1] = compensated_sum(
                polymers_on_arc(ell, start, len)?
                    .iter()
                    .map(|p| p.weight(lambda, u)),
            );
        }
    }
    let full_ring = compensated_sum(
        polymers_on_arc(ell, 0, ell)?
            .iter()
            .map(|p| p.weight(lambda, u)),
    );
    let all = (1u32 << ell) - 1;
    let terms = (0..=all).map(|mask| {
        if mask == all {
            return full_ring;
        }
        // Walk the ring from just after a missing pair so no arc wraps.
        let gap = (0..ell).find(|&p| mask >> p & 1 == 0).expect("mask not full");
        let mut product = 1.0;
        let mut run_start = None;
        for k in 1..=ell {
            let p = (gap + k) % ell;
            let present = k < ell && mask >> p & 1 == 1;
            match (present, run_start) {
                (true, None) => run_start = Some(k),
                (false, Some(s)) => {
                    product *= arc_weight[(gap + s) % ell][k - s - 1];
                    run_start = None;
                }
                _ => {}
            }
        }
        product
    });
    Ok(compensated_sum(terms))
}

/// Result of the Kotecký-Preiss check for a single-pair polymer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpReport {
    pub lambda: f64,
    pub b: f64,
    pub holds: bool,
    /// Left side for the worst single-pair polymer (`∞` when divergent).
    pub lhs_max: f64,
    /// Right side `|Γ| = 2`.
    pub rhs: f64,
    /// Geometric ratio `e^{1+b}(e^λ − 1)` per added pair.
    pub ratio: f64,
}

/// The exponent `b(λ) = (5/12) log(1/λ)`, i.e. `e^b = λ^{−5/12}`.
pub fn kp_exponent(lambda: f64) -> f64 {
    (5.0 / 12.0) * (1.0 / lambda).ln()
}

/// Sums `Σ_{Γ' ≁ Γ} w₁(Γ') e^{(1+b)|Γ'|}` for `Γ` a single pair, on an
/// unbounded line. Arcs of `k` pairs meeting the two sites of `Γ` come in
/// `k + 2` positions and their S/X labellings sum to `(e^λ − 1)^k`, so the
/// series is `e^{1+b} Σ_{k≥1} (k+2) q^k` with `q = e^{1+b}(e^λ − 1)`.
pub fn kp_check(lambda: f64, b: f64) -> Result<KpReport> {
    check_lambda(lambda)?;
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("b must be finite and >= 0, got {b}")));
    }
    let prefactor = (1.0 + b).exp();
    let q = prefactor * lambda.exp_m1();
    let rhs = 2.0;
    let lhs_max = if q >= 1.0 {
        f64::INFINITY
    } else {
        let one_minus = 1.0 - q;
        prefactor * (q / (one_minus * one_minus) + 2.0 * q / one_minus)
    };
    Ok(KpReport {
        lambda,
        b,
        holds: lhs_max <= rhs,
        lhs_max,
        rhs,
        ratio: q,
    })
}

/// Largest `λ` (to 1e−6 relative) where the check holds with `b = b(λ)`,
/// found by bisection in `log λ` on `[1e−15, 0.5]`.
pub fn max_lambda_kp() -> f64 {
    let holds = |lambda: f64| {
        kp_check(lambda, kp_exponent(lambda))
            .map(|r| r.holds)
            .unwrap_or(false)
    };
    let (mut lo, mut hi) = (1e-15f64.ln(), 0.5f64.ln());
    if holds(hi.exp()) {
        return hi.exp();
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if holds(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.exp()
}

/// Multi-index packed into 4-bit fields, one per site. With `ℓ ≤ 10` and
/// total degree `≤ 8` no field can overflow, so adding two keys as integers
/// adds the exponents.
type Key = u64;

fn key_degree(key: Key) -> u32 {
    let mut k = key;
    let mut d = 0;
    while k != 0 {
        d += (k & 0xF) as u32;
        k >>= 4;
    }
    d
}

fn key_power(key: Key, site: usize) -> u32 {
    ((key >> (4 * site)) & 0xF) as u32
}

fn key_from_powers(powers: &[u32]) -> Key {
    powers
        .iter()
        .enumerate()
        .map(|(i, &n)| (n as u64) << (4 * i))
        .sum()
}

fn key_to_powers(key: Key, ell: usize) -> Vec<u32> {
    (0..ell).map(|i| key_power(key, i)).collect()
}

/// Smallest cyclic arc (in sites) containing the support of `powers`.
pub fn support_diameter(powers: &[u32]) -> usize {
    let ell = powers.len();
    let sites: Vec<usize> = (0..ell).filter(|&i| powers[i] > 0).collect();
    if sites.is_empty() {
        return 0;
    }
    let mut largest_gap = sites[0] + ell - sites[sites.len() - 1] - 1;
    for w in sites.windows(2) {
        largest_gap = largest_gap.max(w[1] - w[0] - 1);
    }
    ell - largest_gap
}

/// `‖N‖ = max(|N|, R(N))`.
pub fn multi_index_norm(powers: &[u32]) -> usize {
    let total: u32 = powers.iter().sum();
    (total as usize).max(support_diameter(powers))
}

type Series = Vec<(Key, f64)>;

fn series_mul(a: &Series, b: &Series, max_degree: u32) -> Series {
    let b_deg: Vec<u32> = b.iter().map(|&(k, _)| key_degree(k)).collect();
    let mut acc: HashMap<Key, f64> = HashMap::new();
    for &(ka, va) in a {
        let da = key_degree(ka);
        for (&(kb, vb), &db) in b.iter().zip(&b_deg) {
            if da + db <= max_degree {
                *acc.entry(ka + kb).or_insert(0.0) += va * vb;
            }
        }
    }
    let mut out: Series = acc.into_iter().collect();
    out.sort_unstable_by_key(|&(k, _)| k);
    out
}

/// In-place Walsh-Hadamard transform.
fn walsh_hadamard(values: &mut [f64]) {
    let n = values.len();
    let mut half = 1;
    while half < n {
        for block in (0..n).step_by(2 * half) {
            for j in block..block + half {
                let (x, y) = (values[j], values[j + half]);
                values[j] = x + y;
                values[j + half] = x - y;
            }
        }
        half *= 2;
    }
}

/// Coefficients `A_N` of the truncated expansion
/// `log Z* = Σ_N A_N u^N`, keyed by multi-index.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMap {
    lambda: f64,
    ell: usize,
    max_degree: u32,
    entries: BTreeMap<Key, f64>,
}

/// One serialized coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoeffEntry {
    pub sites: Vec<usize>,
    pub powers: Vec<u32>,
    pub value: f64,
}

impl CoeffMap {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ring_length(&self) -> usize {
        self.ell
    }

    pub fn max_total_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `A_N` for the multi-index given as per-site powers (zero if absent).
    pub fn get(&self, powers: &[u32]) -> f64 {
        if powers.len() != self.ell || powers.iter().any(|&n| n > 15) {
            return 0.0;
        }
        self.entries
            .get(&key_from_powers(powers))
            .copied()
            .unwrap_or(0.0)
    }

    /// The constant term `A_0 = log Z*(u = 0)`.
    pub fn a0(&self) -> f64 {
        self.entries.get(&0).copied().unwrap_or(0.0)
    }

    /// Pair coefficient `α_d`: the coefficient of `u_0 u_d`.
    pub fn alpha(&self, d: usize) -> f64 {
        let mut powers = vec![0; self.ell];
        powers[0] = 1;
        powers[d % self.ell] += 1;
        self.get(&powers)
    }

    /// Iterates `(powers, A_N)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<u32>, f64)> + '_ {
        self.entries
            .iter()
            .map(move |(&k, &v)| (key_to_powers(k, self.ell), v))
    }

    /// Serializable list of non-constant and constant entries.
    pub fn entries(&self) -> Vec<CoeffEntry> {
        self.iter()
            .map(|(powers, value)| {
                let sites = (0..self.ell).filter(|&i| powers[i] > 0).collect::<Vec<_>>();
                let powers = sites.iter().map(|&i| powers[i]).collect();
                CoeffEntry {
                    sites,
                    powers,
                    value,
                }
            })
            .collect()
    }

    /// The truncated series `Σ_N A_N u^N`.
    pub fn evaluate(&self, u: &[f64]) -> f64 {
        compensated_sum(self.iter().map(|(powers, a)| a * monomial(u, &powers)))
    }

    /// `Ψ_i(u) = (1 − u_i²) Σ_{N(i)>0} N(i) A_N u^{N − e_i}` from the truncated
    /// series.
    pub fn psi(&self, u: &[f64]) -> Vec<f64> {
        (0..self.ell)
            .map(|i| {
                let s = compensated_sum(self.iter().filter(|(p, _)| p[i] > 0).map(|(mut p, a)| {
                    let n = p[i];
                    p[i] -= 1;
                    n as f64 * a * monomial(u, &p)
                }));
                (1.0 - u[i] * u[i]) * s
            })
            .collect()
    }
}

impl Serialize for CoeffMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            lambda: f64,
            ring_length: usize,
            max_total_degree: u32,
            entries: Vec<CoeffEntry>,
        }
        Repr {
            lambda: self.lambda,
            ring_length: self.ell,
            max_total_degree: self.max_degree,
            entries: self.entries(),
        }
        .serialize(serializer)
    }
}

fn monomial(u: &[f64], powers: &[u32]) -> f64 {
    u.iter()
        .zip(powers)
        .filter(|(_, &n)| n > 0)
        .map(|(&x, &n)| x.powi(n as i32))
        .product()
}

/// Truncated cluster coefficients of `log Z*` on a homogeneous-`λ` ring.
///
/// `Z*` is affine in every `u_i`; its coefficients are the Walsh transform of
/// the normalized bond weights. Writing `Z* = c₀ (1 + P)` with `P` free of a
/// constant term, `log Z* = log c₀ + Σ_k (−1)^{k+1} P^k / k` truncated at
/// total degree `max_degree`.
pub fn cluster_coefficients(lambda: f64, ell: usize, max_degree: u32) -> Result<CoeffMap> {
    check_lambda(lambda)?;
    if ell < 3 {
        return Err(Error::invalid(format!("ring length must be >= 3, got {ell}")));
    }
    if ell > MAX_COEFF_RING {
        return Err(Error::size(format!("ring length {ell} exceeds {MAX_COEFF_RING}")));
    }
    if max_degree > MAX_COEFF_DEGREE {
        return Err(Error::size(format!(
            "truncation order {max_degree} exceeds {MAX_COEFF_DEGREE}"
        )));
    }
    let n = 1usize << ell;
    let mut weights: Vec<f64> = (0..n)
        .map(|mask| {
            let spin = |i: usize| if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
            let bond: f64 = (0..ell).map(|i| spin(i) * spin((i + 1) % ell)).sum();
            (lambda * bond).exp()
        })
        .collect();
    walsh_hadamard(&mut weights);
    let scale = 1.0 / n as f64;
    let c0 = weights[0] * scale;
    let mut p: Series = Vec::new();
    for (subset, &w) in weights.iter().enumerate().skip(1) {
        let degree = subset.count_ones();
        // Odd subsets vanish by spin-flip symmetry; skip their rounding noise.
        if degree % 2 == 1 || degree > max_degree {
            continue;
        }
        let c = w * scale / c0;
        if c != 0.0 {
            let key: Key = (0..ell)
                .filter(|&i| subset >> i & 1 == 1)
                .map(|i| 1u64 << (4 * i))
                .sum();
            p.push((key, c));
        }
    }
    p.sort_unstable_by_key(|&(k, _)| k);

    let mut entries: BTreeMap<Key, f64> = BTreeMap::new();
    entries.insert(0, c0.ln());
    let mut power = p.clone();
    let mut k = 1u32;
    while !power.is_empty() && 2 * k <= max_degree {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        for &(key, v) in &power {
            *entries.entry(key).or_insert(0.0) += sign * v / k as f64;
        }
        power = series_mul(&power, &p, max_degree);
        k += 1;
    }
    Ok(CoeffMap {
        lambda,
        ell,
        max_degree,
        entries,
    })
}

/// One row of the coefficient decay table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub m: usize,
    /// `max_i Σ_{N(i)>0, ‖N‖≥M} |A_N|`.
    pub sum: f64,
    /// `e^{−bM}`.
    pub bound: f64,
    pub within_bound: bool,
}

/// Tail sums of `|A_N|` against `e^{−bM}` for `M = 2..=max_degree`. The row
/// `M = 1` is omitted: every non-constant coefficient has `|N| ≥ 2`, so it
/// repeats the `M = 2` sum.
pub fn coefficient_decay_report(coeffs: &CoeffMap, b: f64) -> Vec<DecayRow> {
    let ell = coeffs.ell;
    let indexed: Vec<(Vec<u32>, usize, f64)> = coeffs
        .iter()
        .filter(|(p, _)| p.iter().any(|&n| n > 0))
        .map(|(p, a)| {
            let norm = multi_index_norm(&p);
            (p, norm, a.abs())
        })
        .collect();
    (2..=coeffs.max_degree as usize)
        .map(|m| {
            let sum = (0..ell)
                .map(|i| {
                    compensated_sum(
                        indexed
                            .iter()
                            .filter(|(p, norm, _)| p[i] > 0 && *norm >= m)
                            .map(|&(_, _, a)| a),
                    )
                })
                .fold(0.0, f64::max);
            let bound = (-b * m as f64).exp();
            DecayRow {
                m,
                sum,
                bound,
                within_bound: sum <= bound,
            }
        })
        .collect()
}

/// Fitted constant `c = max_d |α_d| / (λe)^d` over the distances `d ≤ ℓ/2`.
pub fn alpha_decay_constant(coeffs: &CoeffMap) -> f64 {
    let base = coeffs.lambda * std::f64::consts::E;
    (1..=coeffs.ell / 2)
        .map(|d| coeffs.alpha(d).abs() / base.powi(d as i32))
        .fold(0.0, f64::max)
}
