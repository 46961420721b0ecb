//! Exact thermodynamics of the nearest-neighbour Ising ring.
//!
//! Temperature is fixed to one throughout. The ring partition function with
//! site fields `h_i` is the trace of the ordered product of the 2×2 site
//! matrices `T_i(σ, σ') = exp(λσσ' + h_i σ)`. Products are carried in a
//! log-scaled form so rings of length `10^5` neither overflow nor underflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertical nearest-neighbour coupling `λ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    lambda: f64,
}

impl Coupling {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::invalid(format!(
                "coupling must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    /// No vertical interaction.
    pub fn free() -> Self {
        Self { lambda: 0.0 }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Per-site magnetic fields on a ring of length `ℓ ≥ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    h: Vec<f64>,
}

impl FieldVector {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.len() < 2 {
            return Err(Error::invalid(format!(
                "ring needs at least 2 sites, got {}",
                h.len()
            )));
        }
        if let Some(bad) = h.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite field entry {bad}")));
        }
        Ok(Self { h })
    }

    pub fn homogeneous(h: f64, ell: usize) -> Result<Self> {
        Self::new(vec![h; ell])
    }

    /// Builds fields from tanh coordinates `u_i = tanh(h_i)`.
    pub fn from_tanh(u: &[f64]) -> Result<Self> {
        if let Some(bad) = u.iter().find(|v| !(v.abs() < 1.0)) {
            return Err(Error::domain(format!("tanh coordinate {bad} outside (-1, 1)")));
        }
        Self::new(u.iter().map(|v| v.atanh()).collect())
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.h
    }

    pub fn tanh(&self) -> Vec<f64> {
        self.h.iter().map(|v| v.tanh()).collect()
    }
}

/// Exact log partition function of a ring together with its first
/// log-derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingPartition {
    pub log_z: f64,
    /// `m_i = ∂ log Z / ∂h_i`.
    pub magnetizations: Vec<f64>,
    /// `⟨σ_i σ_{i+1}⟩`, cyclic.
    pub correlations_nn: Vec<f64>,
}

/// 2×2 matrix times `exp(log_scale)`.
#[derive(Debug, Clone, Copy)]
struct Scaled {
    m: [[f64; 2]; 2],
    log_scale: f64,
}

const SPIN: [f64; 2] = [1.0, -1.0];

impl Scaled {
    fn identity() -> Self {
        Self {
            m: [[1.0, 0.0], [0.0, 1.0]],
            log_scale: 0.0,
        }
    }

    fn site(lambda: f64, h: f64) -> Self {
        let top = lambda + h.abs();
        let mut m = [[0.0; 2]; 2];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, entry) in row.iter_mut().enumerate() {
                *entry = (lambda * SPIN[a] * SPIN[b] + h * SPIN[a] - top).exp();
            }
        }
        Self { m, log_scale: top }
    }

    /// Left multiplication by `diag(+1, -1)`: inserts the spin of the row site.
    fn with_spin(mut self) -> Self {
        self.m[1][0] = -self.m[1][0];
        self.m[1][1] = -self.m[1][1];
        self
    }

    fn raw_mul(&self, o: &Self) -> [[f64; 2]; 2] {
        let a = &self.m;
        let b = &o.m;
        [
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ]
    }

    fn mul(&self, o: &Self) -> Self {
        let m = self.raw_mul(o);
        let norm = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mut out = Self {
            m,
            log_scale: self.log_scale + o.log_scale,
        };
        if norm > 0.0 && norm.is_finite() {
            for v in out.m.iter_mut().flatten() {
                *v /= norm;
            }
            out.log_scale += norm.ln();
        }
        out
    }

    fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    /// `tr(self) / tr(den)` with both scales accounted for.
    fn trace_ratio(&self, den: &Self) -> f64 {
        self.trace() / den.trace() * (self.log_scale - den.log_scale).exp()
    }
}

struct RingProducts {
    sites: Vec<Scaled>,
    /// `prefix[k] = T_0 ⋯ T_{k-1}`.
    prefix: Vec<Scaled>,
    /// `suffix[k] = T_k ⋯ T_{ℓ-1}`.
    suffix: Vec<Scaled>,
}

impl RingProducts {
    fn new(coupling: Coupling, fields: &FieldVector) -> Self {
        let lambda = coupling.lambda();
        let sites: Vec<Scaled> = fields
            .as_slice()
            .iter()
            .map(|&h| Scaled::site(lambda, h))
            .collect();
        let n = sites.len();
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(Scaled::identity());
        for s in &sites {
            let next = prefix.last().unwrap().mul(s);
            prefix.push(next);
        }
        let mut suffix = vec![Scaled::identity(); n + 1];
        for k in (0..n).rev() {
            suffix[k] = sites[k].mul(&suffix[k + 1]);
        }
        Self {
            sites,
            prefix,
            suffix,
        }
    }

    fn log_z(&self) -> f64 {
        let full = self.prefix.last().unwrap();
        full.log_scale + full.trace().ln()
    }

    /// Product of everything except sites `i..i+span` (cyclically), ordered
    /// so that it multiplies on the right of `T_i ⋯ T_{i+span-1}`.
    fn complement(&self, i: usize, span: usize) -> Scaled {
        let n = self.sites.len();
        let end = i + span;
        if end <= n {
            self.suffix[end].mul(&self.prefix[i])
        } else {
            // Window wraps: T_i..T_{n-1} T_0..T_{end-n-1}; remainder is the middle.
            let mut acc = Scaled::identity();
            for k in end - n..i {
                acc = acc.mul(&self.sites[k]);
            }
            acc
        }
    }

    fn magnetization(&self, i: usize) -> f64 {
        let rest = self.complement(i, 1);
        let num = self.sites[i].with_spin().mul(&rest);
        let den = self.sites[i].mul(&rest);
        num.trace_ratio(&den)
    }

    fn nn_correlation(&self, i: usize) -> f64 {
        let n = self.sites.len();
        let j = (i + 1) % n;
        if n == 2 {
            // Both bonds join the same two sites.
            let num = self.sites[i].with_spin().mul(&self.sites[j].with_spin());
            let den = self.sites[i].mul(&self.sites[j]);
            return num.trace_ratio(&den);
        }
        let rest = self.complement(i, 2);
        let num = self.sites[i]
            .with_spin()
            .mul(&self.sites[j].with_spin())
            .mul(&rest);
        let den = self.sites[i].mul(&self.sites[j]).mul(&rest);
        num.trace_ratio(&den)
    }
}

/// Exact ring partition function, magnetizations and nearest-neighbour
/// correlations.
pub fn ring_log_z(coupling: Coupling, fields: &FieldVector) -> RingPartition {
    let products = RingProducts::new(coupling, fields);
    let n = fields.len();
    RingPartition {
        log_z: products.log_z(),
        magnetizations: (0..n).map(|i| products.magnetization(i)).collect(),
        correlations_nn: (0..n).map(|i| products.nn_correlation(i)).collect(),
    }
}

/// Connected correlation matrix `C_ij = ∂m_i/∂h_j = ⟨σ_iσ_j⟩ − m_i m_j`.
///
/// Quadratic in the ring length; intended for the short rings of the
/// effective-hamiltonian computations.
pub fn ring_covariance(coupling: Coupling, fields: &FieldVector) -> Vec<Vec<f64>> {
    let p = RingProducts::new(coupling, fields);
    let n = fields.len();
    let mags: Vec<f64> = (0..n).map(|i| p.magnetization(i)).collect();
    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..n {
        cov[i][i] = 1.0 - mags[i] * mags[i];
        // Numerator carries σ_i and σ_j; both share the denominator's scale.
        let mut num_mid = p.sites[i].with_spin();
        let mut den_mid = p.sites[i];
        for j in i + 1..n {
            let num = num_mid
                .mul(&p.sites[j].with_spin())
                .mul(&p.suffix[j + 1])
                .mul(&p.prefix[i]);
            let den = den_mid
                .mul(&p.sites[j])
                .mul(&p.suffix[j + 1])
                .mul(&p.prefix[i]);
            let corr = num.trace_ratio(&den);
            let c = corr - mags[i] * mags[j];
            cov[i][j] = c;
            cov[j][i] = c;
            num_mid = num_mid.mul(&p.sites[j]);
            den_mid = den_mid.mul(&p.sites[j]);
        }
    }
    cov
}

fn stable_parts(lambda: f64, h: f64) -> (f64, f64) {
    // μ_max = e^{λ+|h|} [ (1+t)/2 + sqrt(((1−t)/2)^2 + e^{−4λ} t) ], t = e^{−2|h|}
    let t = (-2.0 * h.abs()).exp();
    let half_sum = 0.5 * (1.0 + t);
    let root = (0.25 * (1.0 - t) * (1.0 - t) + (-4.0 * lambda).exp() * t).sqrt();
    (half_sum, root)
}

/// Infinite-ring pressure `p_λ(h)`: log of the largest transfer-matrix
/// eigenvalue.
pub fn pressure(coupling: Coupling, h: f64) -> f64 {
    let lambda = coupling.lambda();
    let (half_sum, root) = stable_parts(lambda, h);
    lambda + h.abs() + (half_sum + root).ln()
}

/// `dp_λ/dh = sinh h / sqrt(sinh² h + e^{−4λ})`.
pub fn magnetization_of_field(coupling: Coupling, h: f64) -> f64 {
    let s = h.sinh();
    let s2 = s * s;
    if !s2.is_finite() {
        return h.signum();
    }
    s / (s2 + (-4.0 * coupling.lambda()).exp()).sqrt()
}

/// `d²p_λ/dh² = e^{−4λ} cosh h / (sinh² h + e^{−4λ})^{3/2}`.
pub fn susceptibility(coupling: Coupling, h: f64) -> f64 {
    let e = (-4.0 * coupling.lambda()).exp();
    let s = h.sinh();
    let s2 = s * s;
    if !s2.is_finite() {
        return 0.0;
    }
    e * h.cosh() / (s2 + e).powf(1.5)
}

fn check_magnetization(m: f64) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::invalid(format!("non-finite magnetization {m}")));
    }
    if m.abs() >= 1.0 {
        return Err(Error::domain(format!("magnetization {m} outside (-1, 1)")));
    }
    Ok(())
}

/// Solves `magnetization_of_field(h) = m` for `m ≥ 0`.
fn conjugate_field_nonneg(coupling: Coupling, m: f64) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    let lambda = coupling.lambda();
    let center = m.atanh();
    let mut lo = center - 2.0 * lambda - 1.0;
    let mut hi = center + 2.0 * lambda + 1.0;
    let mut x = center.clamp(lo, hi);
    for _ in 0..300 {
        let r = magnetization_of_field(coupling, x) - m;
        if r == 0.0 {
            return x;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = susceptibility(coupling, x);
        let mut next = x - r / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) || hi - lo <= 0.0 {
            return next;
        }
        x = next;
    }
    x
}

/// `f_λ′(m)`: the unique field whose infinite-ring magnetization is `m`.
pub fn free_energy_derivative(coupling: Coupling, m: f64) -> Result<f64> {
    check_magnetization(m)?;
    Ok(m.signum() * conjugate_field_nonneg(coupling, m.abs()))
}

/// Canonical free energy `f_λ(m) = sup_h { h m − p_λ(h) }`.
pub fn free_energy_canonical(coupling: Coupling, m: f64) -> Result<f64> {
    check_magnetization(m)?;
    let a = m.abs();
    let h = conjugate_field_nonneg(coupling, a);
    Ok(h * a - pressure(coupling, h))
}

/// Entropy of independent spins with mean `m`.
pub fn entropy(m: f64) -> f64 {
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    -(xlogx(0.5 * (1.0 + m)) + xlogx(0.5 * (1.0 - m)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force ring sum, log-sum-exp over all 2^ℓ configurations.
    fn brute_force(lambda: f64, h: &[f64]) -> (f64, Vec<f64>) {
        let n = h.len();
        let mut energies = Vec::with_capacity(1 << n);
        for mask in 0u32..(1 << n) {
            let s = |i: usize| if mask >> (i % n) & 1 == 1 { -1.0 } else { 1.0 };
            let e: f64 = (0..n).map(|i| lambda * s(i) * s(i + 1) + h[i] * s(i)).sum();
            energies.push(e);
        }
        let top = energies.iter().cloned().fold(f64::MIN, f64::max);
        let weights: Vec<f64> = energies.iter().map(|e| (e - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mags = (0..n)
            .map(|i| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(mask, w)| if mask >> i & 1 == 1 { -w } else { *w })
                    .sum::<f64>()
                    / total
            })
            .collect();
        (top + total.ln(), mags)
    }

    fn c(lambda: f64) -> Coupling {
        Coupling::new(lambda).unwrap()
    }

    #[test]
    fn independent_spins() {
        let p = ring_log_z(Coupling::free(), &FieldVector::new(vec![0.0; 3]).unwrap());
        assert!((p.log_z - 3.0 * 2f64.ln()).abs() < 1e-14);
        let p = ring_log_z(Coupling::free(), &FieldVector::homogeneous(0.7, 5).unwrap());
        for m in p.magnetizations {
            assert!((m - 0.7f64.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_brute_force_six_sites() {
        let h = [0.31, -0.92, 0.57, 0.05, -0.44, 0.83];
        let p = ring_log_z(c(0.05), &FieldVector::new(h.to_vec()).unwrap());
        let (log_z, mags) = brute_force(0.05, &h);
        assert!(((p.log_z - log_z) / log_z).abs() < 1e-12);
        for (a, b) in p.magnetizations.iter().zip(&mags) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nn_correlations_match_brute_force() {
        let h = [0.7, -0.2, 1.3, 0.4, -0.9];
        let lambda = 0.4;
        let p = ring_log_z(c(lambda), &FieldVector::new(h.to_vec()).unwrap());
        let n = h.len();
        let mut z = 0.0;
        let mut corr = vec![0.0; n];
        for mask in 0u32..(1 << n) {
            let s = |i: usize| if mask >> (i % n) & 1 == 1 { -1.0 } else { 1.0 };
            let e: f64 = (0..n).map(|i| lambda * s(i) * s(i + 1) + h[i] * s(i)).sum();
            let w = e.exp();
            z += w;
            for (i, c) in corr.iter_mut().enumerate() {
                *c += w * s(i) * s(i + 1);
            }
        }
        for (a, b) in p.correlations_nn.iter().zip(&corr) {
            assert!((a - b / z).abs() < 1e-12);
        }
    }

    #[test]
    fn two_site_ring_counts_both_bonds() {
        // Z = Σ exp(2λ σ1σ2) at zero field.
        let p = ring_log_z(c(0.3), &FieldVector::new(vec![0.0, 0.0]).unwrap());
        let expected = (2.0 * (0.6f64).exp() + 2.0 * (-0.6f64).exp()).ln();
        assert!((p.log_z - expected).abs() < 1e-14);
        assert!((p.correlations_nn[0] - 0.6f64.tanh()).abs() < 1e-14);
    }

    #[test]
    fn long_ring_does_not_overflow() {
        let fields = FieldVector::homogeneous(3.0, 100_000).unwrap();
        let p = ring_log_z(c(0.5), &fields);
        assert!(p.log_z.is_finite());
        let per_site = p.log_z / 100_000.0;
        assert!((per_site - pressure(c(0.5), 3.0)).abs() < 1e-10);
    }

    #[test]
    fn covariance_matches_finite_difference() {
        let coupling = c(0.2);
        let h = vec![0.1, -0.3, 0.4, 0.2, -0.1];
        let cov = ring_covariance(coupling, &FieldVector::new(h.clone()).unwrap());
        let step = 1e-6;
        for j in 0..h.len() {
            let mut up = h.clone();
            up[j] += step;
            let mut down = h.clone();
            down[j] -= step;
            let mu = ring_log_z(coupling, &FieldVector::new(up).unwrap()).magnetizations;
            let md = ring_log_z(coupling, &FieldVector::new(down).unwrap()).magnetizations;
            for i in 0..h.len() {
                let fd = (mu[i] - md[i]) / (2.0 * step);
                assert!((fd - cov[i][j]).abs() < 1e-8, "C[{i}][{j}]");
            }
        }
    }

    #[test]
    fn pressure_special_cases() {
        assert!((pressure(Coupling::free(), 0.0) - 2f64.ln()).abs() < 1e-15);
        for h in [-2.0, -0.3, 0.0, 0.8, 5.0] {
            let expected = (2.0 * f64::cosh(h)).ln();
            assert!((pressure(Coupling::free(), h) - expected).abs() < 1e-14);
        }
        // Huge fields stay finite.
        assert!((pressure(c(0.1), 1000.0) - 1000.1).abs() < 1e-9);
    }

    #[test]
    fn pressure_is_ring_limit() {
        let coupling = c(0.3);
        let p = ring_log_z(coupling, &FieldVector::homogeneous(0.1, 2000).unwrap());
        assert!((p.log_z / 2000.0 - pressure(coupling, 0.1)).abs() < 1e-3);
    }

    #[test]
    fn magnetization_is_pressure_derivative() {
        assert_eq!(magnetization_of_field(c(0.4), 0.0), 0.0);
        assert!((magnetization_of_field(Coupling::free(), 0.5) - 0.462117157260).abs() < 1e-11);
        let coupling = c(0.2);
        let step = 1e-6;
        let fd = (pressure(coupling, 0.3 + step) - pressure(coupling, 0.3 - step)) / (2.0 * step);
        assert!((fd - magnetization_of_field(coupling, 0.3)).abs() < 1e-8);
    }

    #[test]
    fn free_energy_values() {
        let f0 = free_energy_canonical(Coupling::free(), 0.0).unwrap();
        assert!((f0 + 2f64.ln()).abs() < 1e-15);
        let f = free_energy_canonical(Coupling::free(), 0.5).unwrap();
        let closed = 0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln();
        assert!((f - closed).abs() < 1e-13);
        assert!((closed + 0.562335).abs() < 1e-6);
    }

    #[test]
    fn free_energy_derivative_values() {
        for m in [-0.9, -0.2, 0.0, 0.35, 0.99] {
            let d = free_energy_derivative(Coupling::free(), m).unwrap();
            assert!((d - f64::atanh(m)).abs() < 1e-12);
        }
        assert_eq!(free_energy_derivative(c(0.7), 0.0).unwrap(), 0.0);
        let coupling = c(0.2);
        let step = 1e-5;
        let fd = (free_energy_canonical(coupling, 0.4 + step).unwrap()
            - free_energy_canonical(coupling, 0.4 - step).unwrap())
            / (2.0 * step);
        assert!((fd - free_energy_derivative(coupling, 0.4).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn conjugate_field_matches_closed_form() {
        // Independent route: sinh h = m e^{−2λ} / sqrt(1 − m²).
        for lambda in [0.0, 0.05, 0.3, 1.0] {
            for m in [0.01, 0.3, 0.7, 0.999] {
                let closed = f64::asinh(m * (-2.0 * lambda as f64).exp() / (1.0 - m * m).sqrt());
                let got = free_energy_derivative(c(lambda), m).unwrap();
                assert!((got - closed).abs() < 1e-11 * (1.0 + closed.abs()));
            }
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            free_energy_canonical(c(0.1), 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            free_energy_derivative(c(0.1), -1.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            FieldVector::new(vec![0.0, f64::NAN]),
            Err(Error::InvalidInput(_))
        ));
        assert!(FieldVector::new(vec![0.0]).is_err());
        assert!(Coupling::new(-0.1).is_err());
    }
}
