//! Metropolis simulation of the two-dimensional layered model
//!
//! `H(σ) = Σ_i −½ Σ_{x≠y} J_γ(x,y) σ(x,i)σ(y,i) − λ Σ_{x,i} σ(x,i)σ(x,i+1) − h_ext Σ σ`
//!
//! on an `L × L` torus at temperature one. Row `i` is a layer; `x` runs along
//! it. Each layer keeps the Kac sums `Σ_y J(x,y) σ(y,i)` cached so a flip
//! costs `O(range)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::phase;

/// Number of batches for the batch-means error estimate.
pub const BATCHES: usize = 32;
/// Name of the generator recorded with every result.
pub const RNG_NAME: &str = "ChaCha8";

/// Reference profile `φ` of the interaction, supported on `|s| < 1` with
/// unit integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// `(1 + cos πs)/2`.
    #[default]
    RaisedCosine,
    /// `(15/16)(1 − s²)²`.
    Quartic,
}

impl KernelShape {
    pub fn profile(self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            KernelShape::RaisedCosine => 0.5 * (1.0 + (std::f64::consts::PI * s).cos()),
            KernelShape::Quartic => {
                let t = 1.0 - s * s;
                15.0 / 16.0 * t * t
            }
        }
    }
}

impl std::str::FromStr for KernelShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raised-cosine" => Ok(KernelShape::RaisedCosine),
            "quartic" => Ok(KernelShape::Quartic),
            other => Err(Error::invalid(format!("unknown kernel shape {other:?}"))),
        }
    }
}

/// Discretized, normalized Kac kernel `J_γ(0, y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KacKernel {
    pub gamma: f64,
    pub range: usize,
    /// `J_γ(0, y)` for `y = −range..=range`.
    pub weights: Vec<f64>,
    pub c_gamma: f64,
    pub shape: KernelShape,
}

impl KacKernel {
    /// Kernel with no Kac interaction at all.
    pub fn null() -> Self {
        KacKernel {
            gamma: 0.0,
            range: 0,
            weights: vec![0.0],
            c_gamma: 0.0,
            shape: KernelShape::RaisedCosine,
        }
    }

    /// `J_γ(0, y)`.
    pub fn weight(&self, y: i64) -> f64 {
        let r = self.range as i64;
        if y.abs() > r {
            0.0
        } else {
            self.weights[(y + r) as usize]
        }
    }

    pub fn self_weight(&self) -> f64 {
        self.weights[self.range]
    }
}

pub fn build_kernel(gamma: f64) -> Result<KacKernel> {
    build_kernel_with(gamma, KernelShape::RaisedCosine)
}

/// `J_γ(0, y) = c_γ γ φ(γ y)` with `c_γ` fixing the row sum to one.
pub fn build_kernel_with(gamma: f64, shape: KernelShape) -> Result<KacKernel> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::domain(format!("gamma must lie in (0, 1/2], got {gamma}")));
    }
    let range = (1.0 / gamma).floor() as usize;
    let half: Vec<f64> = (0..=range)
        .map(|y| gamma * shape.profile(gamma * y as f64))
        .collect();
    let raw_sum = compensated_sum(
        std::iter::once(half[0]).chain(half[1..].iter().flat_map(|&w| [w, w])),
    );
    let c_gamma = 1.0 / raw_sum;
    let scaled: Vec<f64> = half.iter().map(|w| w / raw_sum).collect();
    let weights: Vec<f64> = scaled
        .iter()
        .rev()
        .chain(scaled[1..].iter())
        .copied()
        .collect();
    Ok(KacKernel {
        gamma,
        range,
        weights,
        c_gamma,
        shape,
    })
}

/// Periodic `L × L` spin configuration, stored row-major by layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpinLattice {
    l: usize,
    spins: Vec<i8>,
}

impl SpinLattice {
    pub fn uniform(l: usize, spin: i8) -> Result<Self> {
        if l < 2 {
            return Err(Error::invalid("lattice side must be at least 2"));
        }
        if spin != 1 && spin != -1 {
            return Err(Error::invalid("spins are ±1"));
        }
        Ok(SpinLattice {
            l,
            spins: vec![spin; l * l],
        })
    }

    pub fn random(l: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut lattice = Self::uniform(l, 1)?;
        for s in lattice.spins.iter_mut() {
            if rng.random::<bool>() {
                *s = -1;
            }
        }
        Ok(lattice)
    }

    pub fn from_spins(l: usize, spins: Vec<i8>) -> Result<Self> {
        if l < 2 || spins.len() != l * l {
            return Err(Error::invalid("spin vector does not match the lattice side"));
        }
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("spins are ±1"));
        }
        Ok(SpinLattice { l, spins })
    }

    pub fn side(&self) -> usize {
        self.l
    }

    /// `σ(x, i)` with periodic wrap in both directions.
    pub fn get(&self, x: i64, i: i64) -> i8 {
        let l = self.l as i64;
        self.spins[(i.rem_euclid(l) * l + x.rem_euclid(l)) as usize]
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn negated(&self) -> Self {
        SpinLattice {
            l: self.l,
            spins: self.spins.iter().map(|s| -s).collect(),
        }
    }

    pub fn magnetization(&self) -> f64 {
        self.spins.iter().map(|&s| s as i64).sum::<i64>() as f64 / self.spins.len() as f64
    }
}

fn check_fit(lattice: &SpinLattice, kernel: &KacKernel) -> Result<()> {
    if lattice.l < 2 * kernel.range + 1 {
        return Err(Error::domain(format!(
            "lattice side {} is shorter than the kernel diameter {}",
            lattice.l,
            2 * kernel.range + 1
        )));
    }
    Ok(())
}

/// `Σ_y J_γ(x,y)σ(y,i) + λ[σ(x,i+1) + σ(x,i−1)] + h_ext`; the Kac sum
/// includes the `y = x` term.
pub fn local_field(
    lattice: &SpinLattice,
    kernel: &KacKernel,
    lambda: f64,
    h_ext: f64,
    site: (usize, usize),
) -> f64 {
    let (x, i) = (site.0 as i64, site.1 as i64);
    let r = kernel.range as i64;
    let kac: f64 = (-r..=r)
        .map(|y| kernel.weight(y) * lattice.get(x + y, i) as f64)
        .sum();
    kac + lambda * (lattice.get(x, i + 1) + lattice.get(x, i - 1)) as f64 + h_ext
}

/// Total energy from scratch.
pub fn total_energy(lattice: &SpinLattice, kernel: &KacKernel, lambda: f64, h_ext: f64) -> f64 {
    let l = lattice.l as i64;
    let r = kernel.range as i64;
    let mut terms = Vec::with_capacity(lattice.spins.len());
    for i in 0..l {
        for x in 0..l {
            let s = lattice.get(x, i) as f64;
            let kac: f64 = (-r..=r)
                .filter(|&y| y != 0)
                .map(|y| kernel.weight(y) * lattice.get(x + y, i) as f64)
                .sum();
            terms.push(-0.5 * s * kac - lambda * s * lattice.get(x, i + 1) as f64 - h_ext * s);
        }
    }
    compensated_sum(terms)
}

/// Physical parameters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub h_ext: f64,
    pub gamma: f64,
    #[serde(default)]
    pub shape: KernelShape,
}

impl ModelParams {
    pub fn new(lambda: f64, h_ext: f64, gamma: f64) -> Self {
        ModelParams {
            lambda,
            h_ext,
            gamma,
            shape: KernelShape::RaisedCosine,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !self.h_ext.is_finite() {
            return Err(Error::invalid("h_ext must be finite"));
        }
        Ok(())
    }
}

/// Metropolis chain state with cached Kac sums.
pub struct Metropolis {
    lattice: SpinLattice,
    kernel: KacKernel,
    lambda: f64,
    h_ext: f64,
    /// `Σ_y J(x,y)σ(y,i)` including the self term, indexed like the spins.
    kac: Vec<f64>,
    energy: f64,
    rng: ChaCha8Rng,
    accepted: u64,
    proposed: u64,
}

impl Metropolis {
    pub fn new(
        lattice: SpinLattice,
        kernel: KacKernel,
        lambda: f64,
        h_ext: f64,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        check_fit(&lattice, &kernel)?;
        let l = lattice.l;
        let mut kac = vec![0.0; l * l];
        for i in 0..l {
            for x in 0..l {
                let r = kernel.range as i64;
                kac[i * l + x] = (-r..=r)
                    .map(|y| kernel.weight(y) * lattice.get(x as i64 + y, i as i64) as f64)
                    .sum();
            }
        }
        let energy = total_energy(&lattice, &kernel, lambda, h_ext);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Metropolis {
            lattice,
            kernel,
            lambda,
            h_ext,
            kac,
            energy,
            rng,
            accepted: 0,
            proposed: 0,
        })
    }

    pub fn lattice(&self) -> &SpinLattice {
        &self.lattice
    }

    /// Energy tracked incrementally from the accepted `ΔH`.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// `ΔH` of flipping `(x, i)`.
    pub fn delta_energy(&self, x: usize, i: usize) -> f64 {
        let l = self.lattice.l;
        let idx = i * l + x;
        let s = self.lattice.spins[idx] as f64;
        let up = self.lattice.spins[((i + 1) % l) * l + x];
        let down = self.lattice.spins[((i + l - 1) % l) * l + x];
        let kac = self.kac[idx] - self.kernel.self_weight() * s;
        2.0 * s * (kac + self.lambda * (up + down) as f64 + self.h_ext)
    }

    fn flip(&mut self, x: usize, i: usize, delta: f64) {
        let l = self.lattice.l;
        let idx = i * l + x;
        let old = self.lattice.spins[idx];
        self.lattice.spins[idx] = -old;
        let change = -2.0 * old as f64;
        let r = self.kernel.range as i64;
        let row = &mut self.kac[i * l..(i + 1) * l];
        for y in -r..=r {
            let target = (x as i64 + y).rem_euclid(l as i64) as usize;
            row[target] += self.kernel.weight(y) * change;
        }
        self.energy += delta;
    }

    /// One proposal at `(x, i)`. Always consumes exactly one uniform.
    pub fn step(&mut self, x: usize, i: usize) -> bool {
        let delta = self.delta_energy(x, i);
        let draw: f64 = self.rng.random();
        self.proposed += 1;
        let accept = delta <= 0.0 || draw < (-delta).exp();
        if accept {
            self.flip(x, i, delta);
            self.accepted += 1;
        }
        accept
    }

    /// One typewriter sweep over the lattice.
    pub fn sweep(&mut self) {
        let l = self.lattice.l;
        for i in 0..l {
            for x in 0..l {
                self.step(x, i);
            }
        }
    }
}

/// Outcome of one chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub mean_magnetization: f64,
    /// Batch-means standard error.
    pub stderr: f64,
    /// Magnetization per site after each measured sweep.
    pub magnetization_trace: Vec<f64>,
    /// Energy per site after each measured sweep.
    pub energy_trace: Vec<f64>,
    pub sweeps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub stream: u64,
    pub rng: String,
    pub acceptance_rate: f64,
    pub side: usize,
}

/// Mean and batch-means standard error.
pub fn batch_means(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    let batches = BATCHES.min(n);
    if batches < 2 {
        return (mean, f64::NAN);
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| compensated_sum(values[b * size..(b + 1) * size].iter().copied()) / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Runs a chain from a given configuration; `sweeps` counts the warmup.
pub fn run_from(
    lattice: SpinLattice,
    kernel: KacKernel,
    params: &ModelParams,
    sweeps: usize,
    warmup: usize,
    seed: u64,
    stream: u64,
) -> Result<McResult> {
    params.validate()?;
    if sweeps <= warmup {
        return Err(Error::invalid(format!(
            "sweeps ({sweeps}) must exceed warmup ({warmup})"
        )));
    }
    let side = lattice.side();
    let sites = (side * side) as f64;
    let mut chain = Metropolis::new(lattice, kernel, params.lambda, params.h_ext, seed, stream)?;
    let mut magnetization_trace = Vec::with_capacity(sweeps - warmup);
    let mut energy_trace = Vec::with_capacity(sweeps - warmup);
    for t in 0..sweeps {
        chain.sweep();
        if t >= warmup {
            magnetization_trace.push(chain.lattice.magnetization());
            energy_trace.push(chain.energy / sites);
        }
    }
    let (mean_magnetization, stderr) = batch_means(&magnetization_trace);
    Ok(McResult {
        mean_magnetization,
        stderr,
        magnetization_trace,
        energy_trace,
        sweeps,
        warmup,
        seed,
        stream,
        rng: RNG_NAME.to_string(),
        acceptance_rate: chain.acceptance_rate(),
        side,
    })
}

/// Starting configuration: all plus for a positive field, all minus for a
/// negative one, independent fair spins otherwise.
pub fn initial_lattice(l: usize, h_ext: f64, seed: u64, stream: u64) -> Result<SpinLattice> {
    if h_ext > 0.0 {
        SpinLattice::uniform(l, 1)
    } else if h_ext < 0.0 {
        SpinLattice::uniform(l, -1)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a77_1ce0);
        rng.set_stream(stream);
        SpinLattice::random(l, &mut rng)
    }
}

/// Single-spin Metropolis run of the full model.
pub fn run_metropolis(params: &ModelParams, l: usize, sweeps: usize, warmup: usize, seed: u64) -> Result<McResult> {
    run_stream(params, l, sweeps, warmup, seed, 0)
}

fn run_stream(params: &ModelParams, l: usize, sweeps: usize, warmup: usize, seed: u64, stream: u64) -> Result<McResult> {
    params.validate()?;
    let kernel = build_kernel_with(params.gamma, params.shape)?;
    let lattice = initial_lattice(l, params.h_ext, seed, stream)?;
    run_from(lattice, kernel, params, sweeps, warmup, seed, stream)
}

/// One row of a γ sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub side: usize,
    pub m_mc: f64,
    pub stderr: f64,
    pub m_pred: f64,
    pub deviation: f64,
}

/// Runs one chain per `γ` at fixed `L·γ` (the lattice side measured in
/// interaction ranges) and compares with the variational prediction.
/// Chains use the same seed on distinct generator streams.
pub fn gamma_sweep(
    params: &ModelParams,
    gammas: &[f64],
    side_times_gamma: f64,
    sweeps: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    params.validate()?;
    if !(side_times_gamma >= 2.0) {
        return Err(Error::domain("L·γ must be at least 2 so the kernel fits the lattice"));
    }
    let m_pred = phase::lp_pressure(params.lambda, params.h_ext)?.minimizer_m;
    gammas
        .par_iter()
        .enumerate()
        .map(|(k, &gamma)| {
            let side = (side_times_gamma / gamma).round() as usize;
            let p = ModelParams { gamma, ..*params };
            let r = run_stream(&p, side, sweeps, warmup, seed, k as u64)?;
            Ok(SweepRow {
                gamma,
                side,
                m_mc: r.mean_magnetization,
                stderr: r.stderr,
                m_pred,
                deviation: (r.mean_magnetization - m_pred).abs(),
            })
        })
        .collect()
}
