//! The effective hamiltonian of a block of `ℓ` layers in tanh coordinates
//! `u_i = tanh h_i`, the inversion `m ↦ u`, and exact small-block checks of
//! ensemble equivalence.
//!
//! With `m_i` the exact ring magnetizations at fields `h_i = atanh u_i`,
//!
//! `H(u) = −Σ_i (m_i²/2 − h_i m_i + h_ext m_i) − log Z_ℓ(h) + A_0`
//!
//! where `A_0 = log Z*(u = 0)` is the constant cluster coefficient.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ising1d::{self, Coupling, FieldVector};
use crate::linalg::solve_dense;
use crate::phase;
use crate::polymer;

/// Sup-norm residual target of the inversion.
pub const INVERSION_TOL: f64 = 1e-12;
/// Newton iteration cap of the inversion.
pub const INVERSION_MAX_ITER: usize = 200;
/// Default number of minimization restarts.
pub const DEFAULT_RESTARTS: usize = 32;
/// Amplitude of the random perturbations of the restart seeds.
pub const SEED_PERTURBATION: f64 = 0.3;
/// Energies within this distance of the best are global minima.
pub const GLOBAL_TIE_TOL: f64 = 1e-9;

/// The magnetization bound `m_+` at the large-field threshold.
pub fn magnetization_bound() -> f64 {
    phase::magnetization_cap(phase::threshold_h_star()).expect("threshold is positive")
}

/// `u_+ = tanh(atanh(m_+) + 2λ)`: fields conjugate to `|m| ≤ m_+` never
/// exceed `atanh(m_+)` by more than the largest bond field `2λ`.
pub fn tanh_bound(coupling: Coupling) -> f64 {
    (magnetization_bound().atanh() + 2.0 * coupling.lambda()).tanh()
}

/// Exact per-layer magnetizations at tanh fields `u`.
pub fn forward_magnetization(coupling: Coupling, u: &[f64]) -> Result<Vec<f64>> {
    let fields = FieldVector::from_tanh(u)?;
    Ok(ising1d::ring_log_z(coupling, &fields).magnetizations)
}

/// Output of the `m ↦ u` inversion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UVector {
    pub u: Vec<f64>,
    pub h: Vec<f64>,
    /// Sup-norm magnetization residual at `u`.
    pub residual: f64,
    /// Row-sum norm of the Jacobian of `Ψ(u) = m(u) − u`.
    pub contraction_norm: f64,
    pub iterations: usize,
}

impl UVector {
    pub fn ring_length(&self) -> usize {
        self.u.len()
    }
}

fn sup_residual(m: &[f64], target: &[f64]) -> f64 {
    m.iter()
        .zip(target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `max_i Σ_j |C_ij/(1 − u_j²) − δ_ij|`.
pub fn contraction_norm(coupling: Coupling, u: &[f64]) -> Result<f64> {
    let fields = FieldVector::from_tanh(u)?;
    let cov = ising1d::ring_covariance(coupling, &fields);
    Ok(cov
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, c)| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    (c / (1.0 - u[j] * u[j]) - delta).abs()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// Finds the tanh fields whose ring magnetizations are `m`, by damped Newton
/// in `h` started from `h = atanh(m)`.
pub fn u_from_m(coupling: Coupling, m: &[f64]) -> Result<UVector> {
    if m.len() < 2 {
        return Err(Error::invalid("ring needs at least 2 layers"));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite magnetization"));
    }
    let m_plus = magnetization_bound();
    if let Some(bad) = m.iter().find(|x| x.abs() > m_plus) {
        return Err(Error::domain(format!(
            "magnetization {bad} exceeds the bound {m_plus}"
        )));
    }
    let mut h: Vec<f64> = m.iter().map(|x| x.atanh()).collect();
    let mut fields = FieldVector::new(h.clone())?;
    let mut current = ising1d::ring_log_z(coupling, &fields).magnetizations;
    let mut residual = sup_residual(&current, m);
    let mut iterations = 0;
    while residual > INVERSION_TOL {
        if iterations == INVERSION_MAX_ITER {
            return Err(Error::Convergence(format!(
                "inversion stalled at residual {residual:e} after {iterations} iterations"
            )));
        }
        iterations += 1;
        let cov = ising1d::ring_covariance(coupling, &fields);
        let rhs: Vec<f64> = m.iter().zip(&current).map(|(t, c)| t - c).collect();
        let step = solve_dense(cov, rhs)
            .ok_or_else(|| Error::Convergence("singular covariance in inversion".into()))?;
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = h.iter().zip(&step).map(|(a, s)| a + scale * s).collect();
            let trial_fields = FieldVector::new(trial.clone())?;
            let trial_m = ising1d::ring_log_z(coupling, &trial_fields).magnetizations;
            let trial_residual = sup_residual(&trial_m, m);
            if trial_residual < residual {
                h = trial;
                fields = trial_fields;
                current = trial_m;
                residual = trial_residual;
                break;
            }
            scale *= 0.5;
            if scale < 1e-12 {
                if residual <= 4.0 * INVERSION_TOL {
                    // Rounding floor just above the target.
                    break;
                }
                return Err(Error::Convergence(format!(
                    "damping failed at residual {residual:e}"
                )));
            }
        }
        if scale < 1e-12 {
            break;
        }
    }
    let u: Vec<f64> = h.iter().map(|x| x.tanh()).collect();
    let norm = contraction_norm(coupling, &u)?;
    if norm >= 1.0 {
        return Err(Error::Convergence(format!(
            "contraction norm {norm} is not below one"
        )));
    }
    if residual > INVERSION_TOL {
        return Err(Error::Convergence(format!(
            "inversion residual {residual:e} above {INVERSION_TOL:e}"
        )));
    }
    Ok(UVector {
        u,
        h,
        residual,
        contraction_norm: norm,
        iterations,
    })
}

/// Constant cluster coefficient `A_0 = log Z*(u = 0)` of a ring.
///
/// Rings the coefficient expansion supports take it from there; longer or
/// two-site rings use the same quantity from the transfer matrix.
pub fn constant_term(coupling: Coupling, ell: usize) -> Result<f64> {
    if (3..=polymer::MAX_COEFF_RING).contains(&ell) {
        return Ok(polymer::cluster_coefficients(coupling.lambda(), ell, 0)?.a0());
    }
    let zero = FieldVector::homogeneous(0.0, ell)?;
    Ok(ising1d::ring_log_z(coupling, &zero).log_z - ell as f64 * std::f64::consts::LN_2)
}

/// Value and gradient of the effective hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffEnergy {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub a0: f64,
}

/// The effective hamiltonian at fixed `(λ, h_ext, ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffModel {
    pub coupling: Coupling,
    pub h_ext: f64,
    pub ell: usize,
    pub a0: f64,
    pub u_plus: f64,
}

impl EffModel {
    pub fn new(coupling: Coupling, h_ext: f64, ell: usize) -> Result<Self> {
        if !h_ext.is_finite() {
            return Err(Error::invalid("h_ext must be finite"));
        }
        if ell < 2 {
            return Err(Error::invalid("ring needs at least 2 layers"));
        }
        Ok(Self {
            coupling,
            h_ext,
            ell,
            a0: constant_term(coupling, ell)?,
            u_plus: tanh_bound(coupling),
        })
    }

    /// Same hamiltonian with `A_0` dropped.
    pub fn without_constant(mut self) -> Self {
        self.a0 = 0.0;
        self
    }

    pub fn energy(&self, u: &[f64]) -> Result<EffEnergy> {
        if u.len() != self.ell {
            return Err(Error::invalid(format!(
                "expected {} tanh fields, got {}",
                self.ell,
                u.len()
            )));
        }
        let fields = FieldVector::from_tanh(u)?;
        let h = fields.as_slice();
        let ring = ising1d::ring_log_z(self.coupling, &fields);
        let m = &ring.magnetizations;
        let local: f64 = (0..self.ell)
            .map(|i| 0.5 * m[i] * m[i] - h[i] * m[i] + self.h_ext * m[i])
            .sum();
        let value = -local - ring.log_z + self.a0;
        // ∂H/∂h_j = −Σ_i C_ij (m_i − h_i + h_ext); then dh/du = 1/(1 − u²).
        let cov = ising1d::ring_covariance(self.coupling, &fields);
        let weight: Vec<f64> = (0..self.ell).map(|i| m[i] - h[i] + self.h_ext).collect();
        let gradient = (0..self.ell)
            .map(|j| {
                let dh: f64 = (0..self.ell).map(|i| cov[i][j] * weight[i]).sum();
                -dh / (1.0 - u[j] * u[j])
            })
            .collect();
        Ok(EffEnergy {
            value,
            gradient,
            a0: self.a0,
        })
    }
}

/// `H^eff` and its gradient at tanh fields `u`.
pub fn eff_energy(coupling: Coupling, h_ext: f64, u: &[f64]) -> Result<EffEnergy> {
    let model = EffModel::new(coupling, h_ext, u.len())?;
    if let Some(bad) = u.iter().find(|x| x.abs() > model.u_plus) {
        if bad.abs() >= 1.0 {
            return Err(Error::domain(format!("tanh field {bad} outside (-1, 1)")));
        }
    }
    model.energy(u)
}

/// A local minimum found by one restart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalMinimum {
    pub u: Vec<f64>,
    pub value: f64,
    pub spread: f64,
    pub gradient_norm: f64,
}

/// Result of the multistart minimization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimizeResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    /// `max_i u_i − min_i u_i` at `argmin`.
    pub spread: f64,
    /// Largest spread over all global minima.
    pub max_global_spread: f64,
    /// Distinct global minima, ascending in `u_0`.
    pub global_minima: Vec<LocalMinimum>,
    /// Distinct local minima, ascending in value.
    pub local_minima: Vec<LocalMinimum>,
    pub u_plus: f64,
}

fn spread(u: &[f64]) -> f64 {
    let hi = u.iter().cloned().fold(f64::MIN, f64::max);
    let lo = u.iter().cloned().fold(f64::MAX, f64::min);
    hi - lo
}

fn projected_gradient(x: &[f64], g: &[f64], bound: f64) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            if (xi >= bound && gi < 0.0) || (xi <= -bound && gi > 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Projected BFGS with backtracking on the box `|u_i| ≤ bound`.
fn bfgs_box(model: &EffModel, start: Vec<f64>, bound: f64) -> Result<LocalMinimum> {
    let n = start.len();
    let mut x: Vec<f64> = start.into_iter().map(|v| v.clamp(-bound, bound)).collect();
    let first = model.energy(&x)?;
    let mut f = first.value;
    let mut g = first.gradient;
    let mut inv = identity(n);
    for _ in 0..2000 {
        let pg = projected_gradient(&x, &g, bound);
        if sup_norm(&pg) < 1e-12 {
            break;
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&inv[i], &pg)).collect();
        if dot(&dir, &pg) >= 0.0 {
            inv = identity(n);
            dir = pg.iter().map(|v| -v).collect();
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-16 {
            let trial: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(a, d)| (a + t * d).clamp(-bound, bound))
                .collect();
            let e = model.energy(&trial)?;
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let armijo = e.value <= f + 1e-4 * dot(&pg, &moved);
            // Near the optimum energy differences drown in rounding; keep
            // descending on the gradient instead.
            let flat = e.value <= f + 1e-13 * f.abs().max(1.0)
                && sup_norm(&projected_gradient(&trial, &e.gradient, bound)) < sup_norm(&pg);
            if armijo || flat {
                accepted = Some((trial, e));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, e)) = accepted else { break };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = e.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let clamped = trial.iter().any(|v| v.abs() >= bound);
        if clamped {
            inv = identity(n);
        } else if sy > 1e-300 {
            bfgs_update(&mut inv, &s, &y, sy);
        }
        x = trial;
        f = e.value;
        g = e.gradient;
        if sup_norm(&s) == 0.0 {
            break;
        }
    }
    let pg = projected_gradient(&x, &g, bound);
    Ok(LocalMinimum {
        spread: spread(&x),
        gradient_norm: sup_norm(&pg),
        u: x,
        value: f,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Inverse-Hessian BFGS update `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
fn bfgs_update(inv: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&inv[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            inv[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Restart seeds: half homogeneous across the box, half random
/// perturbations of homogeneous points.
fn restart_seeds(ell: usize, restarts: usize, bound: f64) -> Vec<Vec<f64>> {
    let homogeneous = restarts.div_ceil(2);
    let mut seeds = Vec::with_capacity(restarts);
    for r in 0..homogeneous {
        let level = if homogeneous == 1 {
            0.0
        } else {
            -0.8 + 1.6 * r as f64 / (homogeneous - 1) as f64
        };
        seeds.push(vec![level * bound; ell]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while seeds.len() < restarts {
        let base: f64 = rng.random_range(-0.8..0.8);
        seeds.push(
            (0..ell)
                .map(|_| (base + rng.random_range(-SEED_PERTURBATION..SEED_PERTURBATION)).clamp(-0.95, 0.95) * bound)
                .collect(),
        );
    }
    seeds
}

/// Multistart minimization of `H^eff` over `|u_i| ≤ u_+`.
pub fn minimize_eff(coupling: Coupling, h_ext: f64, ell: usize, restarts: usize) -> Result<MinimizeResult> {
    minimize_model(&EffModel::new(coupling, h_ext, ell)?, restarts)
}

/// Multistart minimization of a prepared model.
pub fn minimize_model(model: &EffModel, restarts: usize) -> Result<MinimizeResult> {
    if model.ell < 3 {
        return Err(Error::invalid("minimization needs at least 3 layers"));
    }
    if restarts == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    let bound = model.u_plus;
    let found: Vec<LocalMinimum> = restart_seeds(model.ell, restarts, bound)
        .into_par_iter()
        .map(|seed| bfgs_box(model, seed, bound))
        .collect::<Result<_>>()?;
    let mut distinct: Vec<LocalMinimum> = Vec::new();
    for candidate in found {
        let same = distinct.iter_mut().find(|d| {
            d.u.iter()
                .zip(&candidate.u)
                .all(|(a, b)| (a - b).abs() < 1e-6)
        });
        match same {
            Some(existing) if candidate.value < existing.value => *existing = candidate,
            Some(_) => {}
            None => distinct.push(candidate),
        }
    }
    distinct.sort_by(|a, b| a.value.total_cmp(&b.value));
    let best = distinct[0].value;
    let mut global: Vec<LocalMinimum> = distinct
        .iter()
        .filter(|d| d.value - best <= GLOBAL_TIE_TOL)
        .cloned()
        .collect();
    global.sort_by(|a, b| a.u[0].total_cmp(&b.u[0]));
    let top = distinct[0].clone();
    Ok(MinimizeResult {
        max_global_spread: global.iter().map(|g| g.spread).fold(0.0, f64::max),
        argmin: top.u,
        value: top.value,
        spread: top.spread,
        global_minima: global,
        local_minima: distinct,
        u_plus: bound,
    })
}

/// Minimum of `H^eff/ℓ` over homogeneous `u`, and the minimizing `u`.
pub fn scalar_reduction(model: &EffModel) -> Result<(f64, f64)> {
    let per_site = |v: f64| -> Result<f64> {
        Ok(model.energy(&vec![v; model.ell])?.value / model.ell as f64)
    };
    let bound = model.u_plus;
    let points = 2001;
    let grid: Vec<f64> = (0..points)
        .map(|k| -bound + 2.0 * bound * k as f64 / (points - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&v| per_site(v)).collect::<Result<_>>()?;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..points {
        let left = if k > 0 { values[k - 1] } else { f64::INFINITY };
        let right = if k + 1 < points { values[k + 1] } else { f64::INFINITY };
        if values[k] <= left && values[k] <= right {
            let lo = grid[k.saturating_sub(1)];
            let hi = grid[(k + 1).min(points - 1)];
            let (v, x) = golden_section(lo, hi, &per_site)?;
            if v < best.0 {
                best = (v, x);
            }
        }
    }
    Ok(best)
}

fn golden_section(mut lo: f64, mut hi: f64, f: &impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b)?;
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x)?;
    let candidates = [(fx, x), (fa, a), (fb, b)];
    Ok(candidates
        .into_iter()
        .fold((f64::INFINITY, 0.0), |acc, c| if c.0 < acc.0 { c } else { acc }))
}

/// `ξ(u) = (atanh u − u)(1 − u²)`.
pub fn xi(u: f64) -> f64 {
    (u.atanh() - u) * (1.0 - u * u)
}

/// `ξ′(u) = 3u² − 2u atanh u`.
pub fn xi_prime(u: f64) -> f64 {
    3.0 * u * u - 2.0 * u * u.atanh()
}

/// Below this separation the divided difference is replaced by the
/// derivative at the midpoint.
const THETA_MERGE: f64 = 1e-5;

/// Divided difference `θ(u, u′) = (ξ(u) − ξ(u′))/(u − u′)`, `ξ′` on the
/// diagonal. Exactly symmetric.
pub fn theta(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if hi - lo < THETA_MERGE {
        xi_prime(0.5 * (lo + hi))
    } else {
        (xi(hi) - xi(lo)) / (hi - lo)
    }
}

/// Maximum of `θ` over a square grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaScan {
    pub points: usize,
    pub limit: f64,
    pub max: f64,
    pub argmax: (f64, f64),
    pub diagonal_max: f64,
    pub diagonal_argmax: f64,
}

/// Scans `θ` on the `points × points` grid over `[−limit, limit]²`.
pub fn theta_scan(points: usize, limit: f64) -> Result<ThetaScan> {
    if points < 2 {
        return Err(Error::invalid("grid needs at least 2 points per axis"));
    }
    if !(limit > 0.0 && limit < 1.0) {
        return Err(Error::domain(format!("grid limit must lie in (0, 1), got {limit}")));
    }
    let grid: Vec<f64> = (0..points)
        .map(|k| -limit + 2.0 * limit * k as f64 / (points - 1) as f64)
        .collect();
    let row_best: Vec<(f64, usize)> = grid
        .par_iter()
        .map(|&a| {
            grid.iter()
                .enumerate()
                .map(|(j, &b)| (theta(a, b), j))
                .fold((f64::NEG_INFINITY, 0), |acc, c| if c.0 > acc.0 { c } else { acc })
        })
        .collect();
    let (i, &(max, j)) = row_best
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, &(f64, usize))>, (i, c)| match acc {
            Some((_, best)) if best.0 >= c.0 => acc,
            _ => Some((i, c)),
        })
        .expect("non-empty grid");
    let (diagonal_max, diagonal_argmax) = grid
        .iter()
        .map(|&v| (theta(v, v), v))
        .fold((f64::NEG_INFINITY, 0.0), |acc, c| if c.0 > acc.0 { c } else { acc });
    Ok(ThetaScan {
        points,
        limit,
        max,
        argmax: (grid[i], grid[j]),
        diagonal_max,
        diagonal_argmax,
    })
}

/// Signed gap between the grand-canonical and the layer-constrained log
/// partition densities of an `ℓ × ℓ` block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleGap {
    pub ell: usize,
    pub gap: f64,
    /// Layer-constrained free energy density `φ_ℓ(m)`.
    pub phi: f64,
    /// `(1/ℓ²) log{e^{−ℓ Σ h_i m_i} Z_Δ(h)}`.
    pub grand: f64,
    /// Conjugate fields from the inversion.
    pub h: Vec<f64>,
}

/// Largest block for the exact constrained sum.
pub const MAX_GAP_BLOCK: usize = 5;

/// Integer layer sums `ℓ m_i`, checked for achievability.
fn layer_sums(ell: usize, m: &[f64]) -> Result<Vec<i32>> {
    m.iter()
        .map(|&x| {
            let target = x * ell as f64;
            let rounded = target.round();
            let ok = (target - rounded).abs() < 1e-9
                && rounded.abs() <= ell as f64
                && (rounded as i64 - ell as i64).rem_euclid(2) == 0;
            if ok {
                Ok(rounded as i32)
            } else {
                Err(Error::domain(format!(
                    "layer magnetization {x} is not achievable with {ell} spins"
                )))
            }
        })
        .collect()
}

/// `φ_ℓ(m) = −(1/ℓ²) log Σ' exp(λ Σ_x Σ_i σ(x,i)σ(x,i+1))`, the sum over
/// block configurations with every layer sum equal to `ℓ m_i`.
///
/// Columns are independent vertical rings, so the constrained sum is a
/// dynamic program over columns whose state is the vector of partial layer
/// sums.
pub fn constrained_free_energy(coupling: Coupling, ell: usize, m: &[f64]) -> Result<f64> {
    if ell < 2 {
        return Err(Error::invalid("block needs at least 2 layers"));
    }
    if ell > MAX_GAP_BLOCK {
        return Err(Error::size(format!("block size {ell} exceeds {MAX_GAP_BLOCK}")));
    }
    if m.len() != ell {
        return Err(Error::invalid(format!("expected {ell} layer magnetizations")));
    }
    let targets = layer_sums(ell, m)?;
    let lambda = coupling.lambda();
    let columns: Vec<(Vec<i32>, f64)> = (0u32..1 << ell)
        .map(|mask| {
            let spins: Vec<i32> = (0..ell).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
            let bond: i32 = (0..ell).map(|i| spins[i] * spins[(i + 1) % ell]).sum();
            (spins, (lambda * bond as f64).exp())
        })
        .collect();
    let mut states: HashMap<Vec<i32>, f64> = HashMap::new();
    states.insert(vec![0; ell], 1.0);
    for col in 0..ell {
        let remaining = (ell - col - 1) as i32;
        let mut next: HashMap<Vec<i32>, f64> = HashMap::new();
        let mut keys: Vec<&Vec<i32>> = states.keys().collect();
        keys.sort();
        for key in keys {
            let w = states[key];
            for (spins, cw) in &columns {
                let sums: Vec<i32> = key.iter().zip(spins).map(|(a, b)| a + b).collect();
                // Prune states that can no longer reach the targets.
                if sums
                    .iter()
                    .zip(&targets)
                    .any(|(s, t)| (t - s).abs() > remaining)
                {
                    continue;
                }
                *next.entry(sums).or_insert(0.0) += w * cw;
            }
        }
        states = next;
    }
    let total = states.get(&targets).copied().unwrap_or(0.0);
    if total <= 0.0 {
        return Err(Error::domain("layer constraint admits no configuration"));
    }
    Ok(-total.ln() / (ell * ell) as f64)
}

/// Gap `(1/ℓ)[log Z_ℓ(h) − Σ h_i m_i] + φ_ℓ(m)` with `h` the fields that
/// reproduce `m` as unconstrained ring magnetizations. The block partition
/// function factorizes over its `ℓ` columns, `Z_Δ = Z_ℓ^ℓ`.
pub fn ensemble_gap(coupling: Coupling, ell: usize, m: &[f64]) -> Result<EnsembleGap> {
    let phi = constrained_free_energy(coupling, ell, m)?;
    let inversion = u_from_m(coupling, m)?;
    let fields = FieldVector::new(inversion.h.clone())?;
    let log_z = ising1d::ring_log_z(coupling, &fields).log_z;
    let hm: f64 = inversion.h.iter().zip(m).map(|(h, x)| h * x).sum();
    let grand = (log_z - hm) / ell as f64;
    Ok(EnsembleGap {
        ell,
        gap: grand + phi,
        phi,
        grand,
        h: inversion.h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(lambda: f64) -> Coupling {
        Coupling::new(lambda).unwrap()
    }

    fn binomial(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn free_inversion_is_identity() {
        let m = [0.1, -0.4, 0.7, 0.0];
        let inv = u_from_m(Coupling::free(), &m).unwrap();
        for (u, x) in inv.u.iter().zip(&m) {
            assert!((u - x).abs() < 1e-15);
        }
        assert_eq!(inv.iterations, 0);
    }

    #[test]
    fn homogeneous_inversion() {
        let coupling = c(0.05);
        let inv = u_from_m(coupling, &[0.3; 8]).unwrap();
        assert!(spread(&inv.u) < 1e-13);
        let h_inf = ising1d::free_energy_derivative(coupling, 0.3).unwrap();
        assert!((inv.h[0] - h_inf).abs() < 1e-3);
        assert!(inv.contraction_norm < 1.0);
    }

    #[test]
    fn inversion_rejects_large_m() {
        let err = u_from_m(c(0.05), &[0.9999999, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn free_energy_identity() {
        // Decoupled layers: H/ℓ = −u²/2 − S(u) − h_ext u.
        for &(u, h_ext) in &[(0.0, 0.0), (0.3, 0.2), (-0.6, 0.1)] {
            let e = eff_energy(Coupling::free(), h_ext, &[u; 5]).unwrap();
            let expected = -0.5 * u * u - ising1d::entropy(u) - h_ext * u;
            assert!((e.value / 5.0 - expected).abs() < 1e-14);
            assert_eq!(e.a0, 0.0);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let model = EffModel::new(c(0.05), 0.1, 6).unwrap();
        let u = [0.2, -0.3, 0.5, 0.1, -0.05, 0.4];
        let e = model.energy(&u).unwrap();
        for j in 0..6 {
            let step = 1e-5;
            let mut up = u;
            let mut dn = u;
            up[j] += step;
            dn[j] -= step;
            let fd = (model.energy(&up).unwrap().value - model.energy(&dn).unwrap().value) / (2.0 * step);
            assert!((fd - e.gradient[j]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn energy_is_rotation_invariant() {
        let model = EffModel::new(c(0.1), 0.2, 5).unwrap();
        let u = [0.1, 0.5, -0.2, 0.3, 0.0];
        let base = model.energy(&u).unwrap().value;
        let mut r = u;
        r.rotate_left(2);
        assert!((model.energy(&r).unwrap().value - base).abs() < 1e-13);
    }

    #[test]
    fn constant_term_sources_agree() {
        let coupling = c(0.07);
        let from_series = constant_term(coupling, 6).unwrap();
        let zero = FieldVector::homogeneous(0.0, 6).unwrap();
        let direct = ising1d::ring_log_z(coupling, &zero).log_z - 6.0 * std::f64::consts::LN_2;
        assert!((from_series - direct).abs() < 1e-14);
    }

    #[test]
    fn constant_does_not_move_minimizer() {
        let model = EffModel::new(c(0.05), 0.2, 4).unwrap();
        let with = minimize_model(&model, 8).unwrap();
        let without = minimize_model(&model.without_constant(), 8).unwrap();
        assert_eq!(with.argmin, without.argmin);
    }

    #[test]
    fn homogeneous_minimizer_is_stationary() {
        let model = EffModel::new(c(0.05), 0.2, 5).unwrap();
        let (_, u) = scalar_reduction(&model).unwrap();
        let e = model.energy(&[u; 5]).unwrap();
        assert!(sup_norm(&e.gradient) < 1e-8);
    }

    #[test]
    fn minimize_finds_both_wells() {
        let r = minimize_eff(c(0.05), 0.0, 4, 16).unwrap();
        assert_eq!(r.global_minima.len(), 2);
        assert!(r.max_global_spread <= 1e-6);
        let (a, b) = (&r.global_minima[0], &r.global_minima[1]);
        assert!((a.u[0] + b.u[0]).abs() < 1e-6);
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta(0.0, 0.0), 0.0);
        assert_eq!(theta(0.3, -0.7), theta(-0.7, 0.3));
        assert!((theta(0.665, 0.665) - 0.2604).abs() < 1e-3);
        // Continuity across the merge threshold.
        let v = 0.4;
        for factor in [0.99, 1.01] {
            let d = factor * THETA_MERGE;
            assert!((theta(v, v + d) - xi_prime(v + 0.5 * d)).abs() < 1e-9);
        }
    }

    #[test]
    fn small_theta_scan() {
        let s = theta_scan(201, 0.999).unwrap();
        assert!(s.max <= 0.375);
        assert!((s.diagonal_max - 0.2604).abs() < 1e-3);
    }

    #[test]
    fn free_gap_is_binomial() {
        for ell in [2usize, 4] {
            let g = ensemble_gap(Coupling::free(), ell, &vec![0.0; ell]).unwrap();
            let phi = -binomial(ell as u64, ell as u64 / 2).ln() / ell as f64;
            assert!((g.phi - phi).abs() < 1e-14);
            assert!((g.gap - (std::f64::consts::LN_2 + phi)).abs() < 1e-14);
        }
    }

    #[test]
    fn constrained_sum_matches_brute_force() {
        let lambda = 0.3;
        let ell = 3;
        let m = [1.0 / 3.0, -1.0 / 3.0, 1.0];
        let mut total = 0.0;
        for mask in 0u32..1 << 9 {
            let s = |x: usize, i: usize| if mask >> (3 * x + i) & 1 == 1 { -1.0 } else { 1.0 };
            let ok = (0..3).all(|i| ((0..3).map(|x| s(x, i)).sum::<f64>() - 3.0 * m[i]).abs() < 1e-9);
            if ok {
                let bond: f64 = (0..3)
                    .flat_map(|x| (0..3).map(move |i| (x, i)))
                    .map(|(x, i)| s(x, i) * s(x, (i + 1) % 3))
                    .sum();
                total += (lambda * bond).exp();
            }
        }
        let phi = constrained_free_energy(c(lambda), ell, &m).unwrap();
        assert!((phi + total.ln() / 9.0).abs() < 1e-13);
    }

    #[test]
    fn unachievable_constraints() {
        assert!(matches!(
            ensemble_gap(c(0.1), 3, &[0.0; 3]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            ensemble_gap(c(0.1), 6, &[0.0; 6]),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn psi_matches_cluster_series() {
        let lambda = 0.05;
        let coupling = c(lambda);
        let coeffs = polymer::cluster_coefficients(lambda, 6, 8).unwrap();
        let u = [0.03, -0.05, 0.01, 0.04, -0.02, 0.05];
        let m = forward_magnetization(coupling, &u).unwrap();
        let psi = coeffs.psi(&u);
        for i in 0..6 {
            assert!((m[i] - u[i] - psi[i]).abs() < 1e-12);
        }
    }
}
