//! Mean-field phase diagram of the layered model.
//!
//! The limiting pressure is `−inf_m { −h_ext m + g(m) }` with
//! `g(m) = −m²/2 + f_λ(m)`; its Legendre dual is the convex envelope of `g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising1d::{self, Coupling};

/// Grid step for the scalar minimization scan.
pub const MINIMIZATION_GRID_STEP: f64 = 1e-3;
/// Grid step for the mean-field root scan.
pub const ROOT_SCAN_STEP: f64 = 1e-4;
/// Absolute tie tolerance on objective values when collecting minimizers.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// One point of the phase diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub lambda: f64,
    pub h_ext: f64,
    /// The (largest) global minimizer.
    pub minimizer_m: f64,
    /// All global minimizers, ascending.
    pub minimizers: Vec<f64>,
    /// Variational pressure `−min_m { −h_ext m + g(m) }`.
    pub pressure_lp: f64,
    pub degenerate: bool,
}

/// `g(m)` sampled on a symmetric grid and its lower convex hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCurve {
    pub grid_m: Vec<f64>,
    pub g_values: Vec<f64>,
    pub envelope_values: Vec<f64>,
    /// Coexistence plateau `(−m_s, m_s)` when present.
    pub flat_interval: Option<(f64, f64)>,
}

fn coupling(lambda: f64) -> Result<Coupling> {
    Coupling::new(lambda)
}

/// `g(m) = −m²/2 + f_λ(m)`, exactly even in `m`.
pub fn mean_field_g(c: Coupling, m: f64) -> Result<f64> {
    let a = m.abs();
    Ok(-0.5 * a * a + ising1d::free_energy_canonical(c, a)?)
}

/// `d/dm [−h_ext m + g(m)] = −h_ext − m + f_λ′(m)`.
fn objective_slope(c: Coupling, h_ext: f64, m: f64) -> f64 {
    -h_ext - m + ising1d::free_energy_derivative(c, m).expect("m inside (-1, 1)")
}

fn objective(c: Coupling, h_ext: f64, m: f64) -> f64 {
    -h_ext * m + mean_field_g(c, m).expect("m inside (-1, 1)")
}

/// Symmetric grid `k·step`, `|k·step| < 1`, with extra points accumulating
/// at ±1 so roots very close to saturation are bracketed.
fn symmetric_grid(step: f64, with_tails: bool) -> Vec<f64> {
    let kmax = ((1.0 - 1e-12) / step).floor() as i64;
    let kmax = if (kmax as f64) * step >= 1.0 { kmax - 1 } else { kmax };
    let mut grid: Vec<f64> = (-kmax..=kmax).map(|k| k as f64 * step).collect();
    if with_tails {
        let last = kmax as f64 * step;
        let tails: Vec<f64> = (1..=15)
            .map(|j| 1.0 - 10f64.powi(-j))
            .filter(|&t| t > last && t < 1.0)
            .collect();
        let mut neg: Vec<f64> = tails.iter().rev().map(|t| -t).collect();
        neg.extend(grid);
        neg.extend(tails);
        grid = neg;
    }
    grid
}

/// Bisection on a sign change of `f` in `[lo, hi]`, to the last bit.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Local minimum of `F` inside `[lo, hi]` through its slope: Newton steps
/// safeguarded by the bracket, falling back to bisection.
fn polish_minimum(c: Coupling, h_ext: f64, lo: f64, hi: f64, start: f64) -> f64 {
    let slope = |m: f64| objective_slope(c, h_ext, m);
    let (s_lo, s_hi) = (slope(lo), slope(hi));
    if s_lo < 0.0 && s_hi > 0.0 {
        return bisect(lo, hi, slope);
    }
    // No interior sign change: the minimum sits on whichever end slopes down.
    let _ = start;
    if s_lo >= 0.0 {
        lo
    } else {
        hi
    }
}

/// Variational pressure and its minimizers at `(λ, h_ext)`.
pub fn lp_pressure(lambda: f64, h_ext: f64) -> Result<PhasePoint> {
    let c = coupling(lambda)?;
    if !h_ext.is_finite() {
        return Err(Error::invalid("h_ext must be finite"));
    }
    let grid = symmetric_grid(MINIMIZATION_GRID_STEP, true);
    let values: Vec<f64> = grid.iter().map(|&m| objective(c, h_ext, m)).collect();
    let n = grid.len();
    let mut candidates = Vec::new();
    for k in 0..n {
        let left = if k > 0 { values[k - 1] } else { f64::INFINITY };
        let right = if k + 1 < n { values[k + 1] } else { f64::INFINITY };
        if values[k] <= left && values[k] <= right {
            let lo = if k > 0 { grid[k - 1] } else { grid[k] };
            let hi = if k + 1 < n { grid[k + 1] } else { grid[k] };
            let m = polish_minimum(c, h_ext, lo, hi, grid[k]);
            candidates.push((m, objective(c, h_ext, m)));
        }
    }
    let best = candidates
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut minimizers: Vec<f64> = candidates
        .iter()
        .filter(|&&(_, v)| v - best <= DEGENERACY_TOL)
        .map(|&(m, _)| m)
        .collect();
    minimizers.sort_by(f64::total_cmp);
    minimizers.dedup_by(|a, b| (*a - *b).abs() < 1e-8);
    let minimizer_m = *minimizers.last().expect("grid always has a minimum");
    Ok(PhasePoint {
        lambda,
        h_ext,
        minimizer_m,
        degenerate: minimizers.len() > 1,
        minimizers,
        pressure_lp: -best,
    })
}

/// `g` on a grid of step `grid_step` and its convex envelope.
pub fn convex_envelope(lambda: f64, grid_step: f64) -> Result<EnvelopeCurve> {
    let c = coupling(lambda)?;
    if !(grid_step > 0.0 && grid_step <= 1e-2) {
        return Err(Error::invalid(format!(
            "grid step must lie in (0, 1e-2], got {grid_step}"
        )));
    }
    let grid = symmetric_grid(grid_step, false);
    let g: Vec<f64> = grid
        .iter()
        .map(|&m| mean_field_g(c, m))
        .collect::<Result<_>>()?;
    let hull = lower_hull(&grid, &g);
    let mut envelope = vec![0.0; grid.len()];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let slope = (g[b] - g[a]) / (grid[b] - grid[a]);
        for k in a..=b {
            envelope[k] = if k == a {
                g[a]
            } else if k == b {
                g[b]
            } else {
                (g[a] + slope * (grid[k] - grid[a])).min(g[k])
            };
        }
    }
    let flat_interval = plateau(&grid, &g, &hull, grid_step);
    Ok(EnvelopeCurve {
        grid_m: grid,
        g_values: g,
        envelope_values: envelope,
        flat_interval,
    })
}

/// Monotone-chain lower hull; returns vertex indices in ascending order.
fn lower_hull(x: &[f64], y: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b unless it lies strictly below the chord a→k.
            let cross = (x[b] - x[a]) * (y[k] - y[a]) - (y[b] - y[a]) * (x[k] - x[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    hull
}

fn plateau(grid: &[f64], g: &[f64], hull: &[usize], step: f64) -> Option<(f64, f64)> {
    let seg = hull.windows(2).find(|w| grid[w[0]] < 0.0 && grid[w[1]] > 0.0)?;
    let (a, b) = (seg[0], seg[1]);
    if grid[b] - grid[a] < 1.5 * step {
        return None;
    }
    let slope = (g[b] - g[a]) / (grid[b] - grid[a]);
    if slope.abs() >= 1e-10 {
        return None;
    }
    Some((grid[a], grid[b]))
}

/// Positive minimizer of `g` (zero when `g` is minimized at the origin).
pub fn spontaneous_magnetization(lambda: f64) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let point = lp_pressure(lambda, 0.0)?;
    Ok(point.minimizer_m.max(0.0))
}

/// All roots of `h_ext + m = f_λ′(m)` in `(−1, 1)`.
pub fn mean_field_solve(lambda: f64, h_ext: f64) -> Result<Vec<f64>> {
    let c = coupling(lambda)?;
    if !h_ext.is_finite() {
        return Err(Error::invalid("h_ext must be finite"));
    }
    let residual = |m: f64| h_ext + m - ising1d::free_energy_derivative(c, m).expect("inside");
    let grid = symmetric_grid(ROOT_SCAN_STEP, true);
    let values: Vec<f64> = grid.iter().map(|&m| residual(m)).collect();
    let mut roots = Vec::new();
    for k in 0..grid.len() {
        if values[k] == 0.0 {
            roots.push(grid[k]);
        }
        if k + 1 < grid.len() && values[k] * values[k + 1] < 0.0 {
            roots.push(bisect(grid[k], grid[k + 1], residual));
        }
    }
    Ok(roots)
}

/// Dobrushin contraction ratio `(1+2λ)/cosh²(h_ext − 1 − 2λ)`; uniqueness
/// regime is `r < 1/4`.
pub fn dobrushin_ratio(lambda: f64, h_ext: f64) -> f64 {
    let c = (h_ext - 1.0 - 2.0 * lambda).cosh();
    (1.0 + 2.0 * lambda) / (c * c)
}

/// Both solutions of `3/cosh²(h − 3) = 1/4`, ascending.
pub fn threshold_h_star_branches() -> (f64, f64) {
    let offset = 12f64.sqrt().acosh();
    (3.0 - offset, 3.0 + offset)
}

/// Large-field threshold `h*`: the larger root of `3/cosh²(h − 3) = 1/4`.
pub fn threshold_h_star() -> f64 {
    threshold_h_star_branches().1
}

/// Small-field threshold `h_0 = (1/2 − 3/8)/4 = 1/32`.
pub fn threshold_h0() -> f64 {
    0.25 * (0.5 - 0.375)
}

/// `m*` solving `atanh(m) − m = h` for `h > 0`.
pub fn cap_root(h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::domain(format!("field must be positive, got {h}")));
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid.atanh() - mid > h {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Magnetization bound `m_+ = m* + 0.01`, kept strictly below one by
/// halving the distance to saturation when the shift would overshoot.
pub fn magnetization_cap(h_star: f64) -> Result<f64> {
    let m_star = cap_root(h_star)?;
    let shifted = m_star + 0.01;
    Ok(if shifted < 1.0 {
        shifted
    } else {
        0.5 * (1.0 + m_star)
    })
}
