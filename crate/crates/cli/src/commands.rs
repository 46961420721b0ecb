//! Parameters and execution of every subcommand.
//!
//! Each parameter struct doubles as the clap argument group and as the TOML
//! schema: every field is optional on both sides, the two sources are merged
//! with flags taking precedence, and `fill_defaults` supplies the rest.

use std::collections::BTreeMap;

use clap::Args;
use kac_ising::effective::{ensemble_gap, minimize_eff, scalar_reduction, theta_scan, EffModel, DEFAULT_RESTARTS};
use kac_ising::mc::{gamma_sweep, run_metropolis, KernelShape, ModelParams};
use kac_ising::monomial::{coefficient_bound_report, decompose_with, rational_string, verify_identity, MultiIndex};
use kac_ising::phase::{convex_envelope, lp_pressure, spontaneous_magnetization, MINIMIZATION_GRID_STEP};
use kac_ising::polymer::{
    alpha_decay_constant, cluster_coefficients, coefficient_decay_report, kp_check, kp_exponent,
    max_lambda_kp, multi_index_norm,
};
use kac_ising::Coupling;
use num_traits::{One, Signed};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::required;
use crate::error::CliError;
use crate::report::{float, json_text, to_value, Csv, Report};

/// A subcommand: its parameters, defaults and computation.
pub trait Experiment: Serialize + DeserializeOwned {
    const NAME: &'static str;

    fn fill_defaults(&mut self);

    fn run(&self) -> Result<Report, CliError>;
}

fn checks<const N: usize>(items: [(&str, bool); N]) -> BTreeMap<String, bool> {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn coupling(lambda: f64) -> Result<Coupling, CliError> {
    Ok(Coupling::new(lambda)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDiagram {
    /// Vertical coupling λ.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Spacing of the magnetization grid.
    #[arg(long, allow_negative_numbers = true)]
    pub grid_step: Option<f64>,
}

impl Experiment for PhaseDiagram {
    const NAME: &'static str = "phase-diagram";

    fn fill_defaults(&mut self) {
        self.grid_step.get_or_insert(MINIMIZATION_GRID_STEP);
    }

    fn run(&self) -> Result<Report, CliError> {
        let lambda = required(&self.lambda, "lambda")?;
        let step = required(&self.grid_step, "grid_step")?;
        let curve = convex_envelope(lambda, step)?;
        let m_star = spontaneous_magnetization(lambda)?;
        let mut csv = Csv::new(&["m", "g", "envelope"]);
        for k in 0..curve.grid_m.len() {
            csv.row([
                float(curve.grid_m[k]),
                float(curve.g_values[k]),
                float(curve.envelope_values[k]),
            ]);
        }
        let below = curve
            .envelope_values
            .iter()
            .zip(&curve.g_values)
            .all(|(e, g)| *e <= g + 1e-12);
        let summary = json!({
            "lambda": lambda,
            "grid_step": step,
            "flat_interval": curve.flat_interval,
            "spontaneous_magnetization": m_star,
        });
        Ok(Report {
            primary: csv.finish(),
            sidecar: Some(summary.clone()),
            results: summary,
            checks: checks([("envelope_below_g", below)]),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpontaneousMag {
    /// Comma-separated list of couplings λ.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub lambdas: Option<Vec<f64>>,
}

impl Experiment for SpontaneousMag {
    const NAME: &'static str = "spontaneous-mag";

    fn fill_defaults(&mut self) {}

    fn run(&self) -> Result<Report, CliError> {
        let lambdas = required(&self.lambdas, "lambdas")?;
        if lambdas.is_empty() {
            return Err(CliError::config("`lambdas` must not be empty"));
        }
        let values = lambdas
            .iter()
            .map(|&l| spontaneous_magnetization(l))
            .collect::<Result<Vec<f64>, _>>()?;
        let mut csv = Csv::new(&["lambda", "m_star", "sqrt_6_lambda"]);
        for (&l, &m) in lambdas.iter().zip(&values) {
            csv.row([float(l), float(m), float((6.0 * l).sqrt())]);
        }
        let mut pairs: Vec<(f64, f64)> = lambdas.iter().copied().zip(values.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let monotone = pairs.windows(2).all(|w| w[1].1 >= w[0].1);
        Ok(Report {
            primary: csv.finish(),
            sidecar: None,
            results: json!({ "lambdas": lambdas, "m_star": values }),
            checks: checks([("nondecreasing_in_lambda", monotone)]),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterExpand {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Ring length ℓ.
    #[arg(long, allow_negative_numbers = true)]
    pub ell: Option<usize>,
    /// Truncation order of the series.
    #[arg(long, allow_negative_numbers = true)]
    pub max_degree: Option<u32>,
    /// Decay rate used for the tail-sum bound; defaults to (5/12) log(1/λ).
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl Experiment for ClusterExpand {
    const NAME: &'static str = "cluster-expand";

    fn fill_defaults(&mut self) {
        self.max_degree.get_or_insert(6);
        self.format.get_or_insert(Format::Json);
        if let (None, Some(l)) = (self.b, self.lambda) {
            if l > 0.0 {
                self.b = Some(kp_exponent(l));
            }
        }
    }

    fn run(&self) -> Result<Report, CliError> {
        let lambda = required(&self.lambda, "lambda")?;
        let ell = required(&self.ell, "ell")?;
        let degree = required(&self.max_degree, "max_degree")?;
        let b = required(&self.b, "b")?;
        let coeffs = cluster_coefficients(lambda, ell, degree)?;
        let decay = coefficient_decay_report(&coeffs, b);
        let fitted = alpha_decay_constant(&coeffs);
        let odd_max = coeffs
            .iter()
            .filter(|(p, _)| p.iter().sum::<u32>() % 2 == 1)
            .map(|(_, a)| a.abs())
            .fold(0.0, f64::max);
        let primary = match self.format {
            Some(Format::Csv) => {
                let mut csv = Csv::new(&["powers", "norm", "value"]);
                for (powers, value) in coeffs.iter() {
                    let joined: Vec<String> = powers.iter().map(|p| p.to_string()).collect();
                    csv.row([joined.join(" "), multi_index_norm(&powers).to_string(), float(value)]);
                }
                csv.finish()
            }
            Some(Format::Json) => json_text(&json!({
                "coefficients": coeffs,
                "decay": decay,
                "alpha_decay_constant": fitted,
            })),
            _ => return Err(CliError::config("cluster-expand supports format json or csv")),
        };
        Ok(Report {
            primary,
            sidecar: None,
            results: json!({
                "coefficients": coeffs.len(),
                "a0": coeffs.a0(),
                "alpha_1": coeffs.alpha(1),
                "alpha_decay_constant": fitted,
                "decay": decay,
            }),
            checks: checks([
                ("tail_sums_decreasing", decay.windows(2).all(|w| w[1].sum < w[0].sum)),
                ("odd_coefficients_absent", odd_max < 1e-14),
            ]),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpCheck {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Decay rate b; defaults to (5/12) log(1/λ).
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
}

impl Experiment for KpCheck {
    const NAME: &'static str = "kp-check";

    fn fill_defaults(&mut self) {
        if let (None, Some(l)) = (self.b, self.lambda) {
            if l > 0.0 {
                self.b = Some(kp_exponent(l));
            }
        }
    }

    fn run(&self) -> Result<Report, CliError> {
        let lambda = required(&self.lambda, "lambda")?;
        let b = required(&self.b, "b")?;
        let report = kp_check(lambda, b)?;
        let value = json!({ "report": report, "max_lambda_kp": max_lambda_kp() });
        Ok(Report {
            primary: json_text(&value),
            sidecar: None,
            results: value,
            checks: checks([("holds", report.holds)]),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decompose {
    /// Exponents n_1,…,n_k of the monomial.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub powers: Option<Vec<u32>>,
    /// Process variables by decreasing exponent.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub canonical: Option<bool>,
    /// Box size U for the coefficient bound.
    #[arg(long, allow_negative_numbers = true)]
    pub bound_u: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

fn poly_text(poly: &kac_ising::monomial::Poly) -> String {
    let mut text = String::new();
    for (k, (powers, coeff)) in poly.terms().iter().enumerate() {
        let magnitude = rational_string(&coeff.abs());
        let sign = match (k, coeff.is_negative()) {
            (0, true) => "-",
            (0, false) => "",
            (_, true) => " - ",
            (_, false) => " + ",
        };
        text.push_str(sign);
        text.push_str(&magnitude);
        for (i, &p) in powers.iter().enumerate().filter(|(_, &p)| p > 0) {
            if p == 1 {
                text.push_str(&format!(" u{}", i + 1));
            } else {
                text.push_str(&format!(" u{}^{p}", i + 1));
            }
        }
    }
    text
}

impl Experiment for Decompose {
    const NAME: &'static str = "decompose";

    fn fill_defaults(&mut self) {
        self.canonical.get_or_insert(false);
        self.bound_u.get_or_insert(1.0);
        self.format.get_or_insert(Format::Json);
    }

    fn run(&self) -> Result<Report, CliError> {
        let powers = required(&self.powers, "powers")?;
        let n = MultiIndex::new(powers)?;
        let dec = decompose_with(&n, self.canonical.unwrap_or(false))?;
        let verified = verify_identity(&n, &dec);
        let bound = coefficient_bound_report(&n, &dec, required(&self.bound_u, "bound_u")?)?;
        let primary = match self.format {
            Some(Format::Json) => json_text(&dec),
            Some(Format::Text) => {
                let mut text = String::new();
                for (i, p) in dec.p.iter().enumerate() {
                    text.push_str(&format!("p_{} = {}\n", i + 1, rational_string(p)));
                }
                for ((i, j), poly) in &dec.d {
                    text.push_str(&format!("d_{},{} = {}\n", i + 1, j + 1, poly_text(poly)));
                }
                text
            }
            _ => return Err(CliError::config("decompose supports format json or text")),
        };
        Ok(Report {
            primary,
            sidecar: None,
            results: json!({
                "identity_verified": verified,
                "p": dec.p.iter().map(rational_string).collect::<Vec<_>>(),
                "coefficient_bound": bound,
            }),
            checks: checks([
                ("identity_verified", verified),
                ("p_sum_is_one", dec.p_sum().is_one()),
                ("coefficients_nonpositive", dec.all_coefficients_nonpositive()),
            ]),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffMinimize {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// External field.
    #[arg(long, allow_negative_numbers = true)]
    pub h_ext: Option<f64>,
    /// Number of layers ℓ.
    #[arg(long, allow_negative_numbers = true)]
    pub ell: Option<usize>,
    /// Number of multistart seeds.
    #[arg(long, allow_negative_numbers = true)]
    pub restarts: Option<usize>,
}

impl Experiment for EffMinimize {
    const NAME: &'static str = "eff-minimize";

    fn fill_defaults(&mut self) {
        self.h_ext.get_or_insert(0.0);
        self.restarts.get_or_insert(DEFAULT_RESTARTS);
    }

    fn run(&self) -> Result<Report, CliError> {
        let lambda = required(&self.lambda, "lambda")?;
        let h_ext = required(&self.h_ext, "h_ext")?;
        let ell = required(&self.ell, "ell")?;
        let restarts = required(&self.restarts, "restarts")?;
        let c = coupling(lambda)?;
        let result = minimize_eff(c, h_ext, ell, restarts)?;
        let (scalar_value, scalar_u) = scalar_reduction(&EffModel::new(c, h_ext, ell)?)?;
        let lp = lp_pressure(lambda, h_ext)?;
        let per_site = result.value / ell as f64;
        let value = json!({
            "minimization": result,
            "per_site_minimum": per_site,
            "scalar_reduction": { "value": scalar_value, "u": scalar_u },
            "lp": lp,
        });
        Ok(Report {
            primary: json_text(&value),
            sidecar: None,
            results: json!({
                "per_site_minimum": per_site,
                "max_global_spread": result.max_global_spread,
                "global_minima": result.global_minima.len(),
                "scalar_reduction": scalar_value,
                "lp_variational_value": -lp.pressure_lp,
            }),
            checks: checks([
                ("homogeneous_minimizers", result.max_global_spread <= 1e-6),
                ("matches_scalar_reduction", (per_site - scalar_value).abs() <= 1e-4),
            ]),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleGapArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Comma-separated block sizes ℓ.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub ells: Option<Vec<usize>>,
    /// Common magnetization of every layer.
    #[arg(long, allow_negative_numbers = true)]
    pub m: Option<f64>,
}

impl Experiment for EnsembleGapArgs {
    const NAME: &'static str = "ensemble-gap";

    fn fill_defaults(&mut self) {
        self.m.get_or_insert(0.0);
    }

    fn run(&self) -> Result<Report, CliError> {
        let lambda = required(&self.lambda, "lambda")?;
        let ells = required(&self.ells, "ells")?;
        let m = required(&self.m, "m")?;
        let c = coupling(lambda)?;
        let gaps = ells
            .iter()
            .map(|&ell| ensemble_gap(c, ell, &vec![m; ell]))
            .collect::<Result<Vec<_>, _>>()?;
        let mut csv = Csv::new(&["ell", "gap", "phi", "grand"]);
        for g in &gaps {
            csv.row([g.ell.to_string(), float(g.gap), float(g.phi), float(g.grand)]);
        }
        let decreasing = gaps.windows(2).all(|w| w[1].gap.abs() < w[0].gap.abs());
        Ok(Report {
            primary: csv.finish(),
            sidecar: None,
            results: to_value(&gaps),
            checks: checks([("abs_gap_decreasing", decreasing)]),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaScanArgs {
    /// Grid points per axis.
    #[arg(long, allow_negative_numbers = true)]
    pub points: Option<usize>,
    /// The grid covers (−limit, limit)².
    #[arg(long, allow_negative_numbers = true)]
    pub limit: Option<f64>,
}

impl Experiment for ThetaScanArgs {
    const NAME: &'static str = "theta-scan";

    fn fill_defaults(&mut self) {
        self.points.get_or_insert(2001);
        self.limit.get_or_insert(0.999);
    }

    fn run(&self) -> Result<Report, CliError> {
        let scan = theta_scan(required(&self.points, "points")?, required(&self.limit, "limit")?)?;
        Ok(Report {
            primary: json_text(&scan),
            sidecar: None,
            results: to_value(&scan),
            checks: checks([("max_at_most_three_eighths", scan.max <= 0.375)]),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McRun {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub h_ext: Option<f64>,
    /// Inverse interaction range γ.
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Lattice side.
    #[arg(long = "L", allow_negative_numbers = true)]
    #[serde(rename = "L")]
    pub side: Option<usize>,
    /// Total sweeps, warmup included.
    #[arg(long, allow_negative_numbers = true)]
    pub sweeps: Option<usize>,
    /// Sweeps discarded before measuring; defaults to a tenth of the total.
    #[arg(long, allow_negative_numbers = true)]
    pub warmup: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub seed: Option<u64>,
    /// Kernel profile: raised-cosine or quartic.
    #[arg(long, allow_negative_numbers = true)]
    pub shape: Option<KernelShape>,
}

impl Experiment for McRun {
    const NAME: &'static str = "mc-run";

    fn fill_defaults(&mut self) {
        self.h_ext.get_or_insert(0.0);
        self.seed.get_or_insert(0);
        self.shape.get_or_insert(KernelShape::RaisedCosine);
        if let (None, Some(s)) = (self.warmup, self.sweeps) {
            self.warmup = Some(s / 10);
        }
    }

    fn run(&self) -> Result<Report, CliError> {
        let params = ModelParams {
            shape: required(&self.shape, "shape")?,
            ..ModelParams::new(
                required(&self.lambda, "lambda")?,
                required(&self.h_ext, "h_ext")?,
                required(&self.gamma, "gamma")?,
            )
        };
        let r = run_metropolis(
            &params,
            required(&self.side, "L")?,
            required(&self.sweeps, "sweeps")?,
            required(&self.warmup, "warmup")?,
            required(&self.seed, "seed")?,
        )?;
        let m_pred = lp_pressure(params.lambda, params.h_ext)?.minimizer_m;
        let mut csv = Csv::new(&["sweep", "magnetization", "energy_per_site"]);
        for (k, (m, e)) in r.magnetization_trace.iter().zip(&r.energy_trace).enumerate() {
            csv.row([(r.warmup + k + 1).to_string(), float(*m), float(*e)]);
        }
        let summary = json!({
            "mean_magnetization": r.mean_magnetization,
            "stderr": r.stderr,
            "m_pred": m_pred,
            "deviation": (r.mean_magnetization - m_pred).abs(),
            "acceptance_rate": r.acceptance_rate,
            "rng": r.rng,
            "seed": r.seed,
            "stream": r.stream,
            "sweeps": r.sweeps,
            "warmup": r.warmup,
            "side": r.side,
        });
        Ok(Report {
            primary: csv.finish(),
            sidecar: Some(summary.clone()),
            results: summary,
            checks: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSweep {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub h_ext: Option<f64>,
    /// Comma-separated values of γ.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub gammas: Option<Vec<f64>>,
    /// Lattice side in units of the interaction range, held fixed across γ.
    #[arg(long, allow_negative_numbers = true)]
    pub side_times_gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub sweeps: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub warmup: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub shape: Option<KernelShape>,
}

impl Experiment for GammaSweep {
    const NAME: &'static str = "gamma-sweep";

    fn fill_defaults(&mut self) {
        self.h_ext.get_or_insert(0.0);
        self.side_times_gamma.get_or_insert(8.0);
        self.seed.get_or_insert(0);
        self.shape.get_or_insert(KernelShape::RaisedCosine);
        if let (None, Some(s)) = (self.warmup, self.sweeps) {
            self.warmup = Some(s / 10);
        }
    }

    fn run(&self) -> Result<Report, CliError> {
        let gammas = required(&self.gammas, "gammas")?;
        let first = *gammas
            .first()
            .ok_or_else(|| CliError::config("`gammas` must not be empty"))?;
        let params = ModelParams {
            shape: required(&self.shape, "shape")?,
            ..ModelParams::new(required(&self.lambda, "lambda")?, required(&self.h_ext, "h_ext")?, first)
        };
        let rows = gamma_sweep(
            &params,
            &gammas,
            required(&self.side_times_gamma, "side_times_gamma")?,
            required(&self.sweeps, "sweeps")?,
            required(&self.warmup, "warmup")?,
            required(&self.seed, "seed")?,
        )?;
        let mut csv = Csv::new(&["gamma", "L", "m_mc", "stderr", "m_pred", "deviation"]);
        for r in &rows {
            csv.row([
                float(r.gamma),
                r.side.to_string(),
                float(r.m_mc),
                float(r.stderr),
                float(r.m_pred),
                float(r.deviation),
            ]);
        }
        Ok(Report {
            primary: csv.finish(),
            sidecar: None,
            results: to_value(&rows),
            checks: BTreeMap::new(),
        })
    }
}
