//! Error norms and convergence-rate studies.

use crate::error::{Error, Result};
use crate::gmm::{estimate_interaction, AdmissibleSet, EstimatorConfig};
use crate::moments::{analytic_moments, empirical_moments, GaussianMeasure};
use crate::orthopoly::{build_basis, eval_poly};
use crate::potential::PotentialSpec;
use crate::quadrature::QuadratureSpec;
use crate::seed::derive_seed;
use crate::sim::{simulate_ips, SimConfig};
use crate::textfmt::fmt_f64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub use crate::quadrature::l2_rho_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateAxis {
    #[serde(rename = "T")]
    Horizon,
    #[serde(rename = "N")]
    Particles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Estimand {
    /// Euclidean distance between empirical and exact moments of orders `1..=2K`.
    MomentError,
    /// `||psi_k - psi~_k||` in `L^2(rho)`.
    BasisError { k: usize },
    /// `||W'_hat - W'||` in `L^2(rho)`.
    KernelError,
}

impl Estimand {
    pub fn label(&self) -> String {
        match self {
            Estimand::MomentError => "moment_error".into(),
            Estimand::BasisError { k } => format!("basis_error_k{k}"),
            Estimand::KernelError => "kernel_error".into(),
        }
    }
}

/// Mean error per grid point and the fitted log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub estimand: String,
    pub grid: Vec<f64>,
    pub mean_errors: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_seeds: Vec<usize>,
    pub slope: f64,
    pub slope_stderr: f64,
    /// Errors of the first seed alone; `None` where that run failed.
    pub single_seed_errors: Vec<Option<f64>>,
}

impl RateResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "grid_value,mean_error,stderr,n_seeds")?;
        for i in 0..self.grid.len() {
            writeln!(
                f,
                "{},{},{},{}",
                fmt_f64(self.grid[i]),
                fmt_f64(self.mean_errors[i]),
                fmt_f64(self.stderr[i]),
                self.n_seeds[i]
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `log y` against `log x`, with its standard error.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::RateStudy("slope fit needs at least two points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::RateStudy(
            "slope fit needs positive finite grid values and errors".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::RateStudy("grid values must differ".into()));
    }
    let slope = sxy / sxx;
    let stderr = if lx.len() > 2 {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, stderr))
}

/// Runs `eval(grid_index, seed_index)` on every cell, in parallel, and
/// aggregates the returned error vectors (one entry per label) into one
/// [`RateResult`] per label. Failed runs are dropped from their cell; a
/// cell in which every seed failed aborts the study.
pub fn rate_study_cells<F>(
    grid: &[f64],
    seeds: usize,
    labels: &[String],
    eval: F,
) -> Result<Vec<RateResult>>
where
    F: Fn(usize, usize) -> Result<Vec<f64>> + Sync,
{
    if grid.len() < 3 {
        return Err(Error::RateStudy("grid needs at least three values".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || !(grid[0] > 0.0) {
        return Err(Error::RateStudy("grid must be positive and strictly increasing".into()));
    }
    if seeds == 0 || labels.is_empty() {
        return Err(Error::RateStudy("need at least one seed and one estimand".into()));
    }

    let cells: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..seeds).map(move |s| (g, s)))
        .collect();
    let outcomes: Vec<Result<Vec<f64>>> = cells
        .par_iter()
        .map(|&(g, s)| {
            let errs = eval(g, s)?;
            if errs.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    got: errs.len(),
                });
            }
            if errs.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(Error::RateStudy(format!("non-finite or negative error {errs:?}")));
            }
            Ok(errs)
        })
        .collect();

    let mut per_cell: Vec<Vec<Vec<f64>>> = vec![Vec::new(); grid.len()];
    let mut first_seed: Vec<Option<Vec<f64>>> = vec![None; grid.len()];
    let mut first_error: Vec<Option<Error>> = (0..grid.len()).map(|_| None).collect();
    for (&(g, s), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(errs) => {
                if s == 0 {
                    first_seed[g] = Some(errs.clone());
                }
                per_cell[g].push(errs);
            }
            Err(e) => {
                log::warn!("rate study cell {} seed {s} failed: {e}", grid[g]);
                first_error[g].get_or_insert(e);
            }
        }
    }
    if let Some(g) = per_cell.iter().position(|c| c.is_empty()) {
        let source = first_error[g]
            .take()
            .unwrap_or_else(|| Error::RateStudy("no runs".into()));
        return Err(Error::RateCellFailed {
            grid_value: grid[g],
            source: Box::new(source),
        });
    }

    labels
        .iter()
        .enumerate()
        .map(|(e, label)| {
            let mut mean_errors = Vec::with_capacity(grid.len());
            let mut stderr = Vec::with_capacity(grid.len());
            for runs in &per_cell {
                let n = runs.len() as f64;
                let mean = runs.iter().map(|r| r[e]).sum::<f64>() / n;
                let var = if runs.len() > 1 {
                    runs.iter().map(|r| (r[e] - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                mean_errors.push(mean);
                stderr.push((var / n).sqrt());
            }
            let (slope, slope_stderr) = fit_loglog_slope(grid, &mean_errors)?;
            Ok(RateResult {
                estimand: label.clone(),
                grid: grid.to_vec(),
                mean_errors,
                stderr,
                n_seeds: per_cell.iter().map(Vec::len).collect(),
                slope,
                slope_stderr,
                single_seed_errors: first_seed.iter().map(|f| f.as_ref().map(|v| v[e])).collect(),
            })
        })
        .collect()
}

/// Synthetic errors `scale * g^exponent` with no noise, for checking the harness.
pub fn injected_power_law(grid: &[f64], exponent: f64, seeds: usize) -> Result<RateResult> {
    let labels = vec![format!("injected_{exponent}")];
    let mut out = rate_study_cells(grid, seeds, &labels, |g, _| Ok(vec![0.3 * grid[g].powf(exponent)]))?;
    Ok(out.remove(0))
}

/// Ground truth for a rate study: invariant measure and `W'` as monomial coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateReference {
    pub measure: GaussianMeasure,
    pub kernel: Vec<f64>,
}

impl RateReference {
    /// `V = W = x^2/2`, `sigma = 1`: `rho = N(0, 1/2)` and `W'(x) = x`.
    pub fn ornstein_uhlenbeck() -> Self {
        Self {
            measure: GaussianMeasure::new(0.0, 0.5),
            kernel: vec![0.0, 1.0],
        }
    }
}

/// One convergence experiment: the base simulation, the estimator, the grid
/// axis and the estimands.
#[derive(Debug, Clone, PartialEq)]
pub struct RateExperiment {
    pub simulation: SimConfig,
    pub confining: PotentialSpec,
    pub interaction: PotentialSpec,
    pub estimator: EstimatorConfig,
    pub axis: RateAxis,
    pub grid: Vec<f64>,
    pub seeds: usize,
    pub estimands: Vec<Estimand>,
    pub reference: RateReference,
    pub quadrature: QuadratureSpec,
}

impl RateExperiment {
    /// OU study along `axis` with the exact `N(0, 1/2)` quadrature.
    pub fn ornstein_uhlenbeck(
        simulation: SimConfig,
        order: usize,
        axis: RateAxis,
        grid: Vec<f64>,
        seeds: usize,
        estimands: Vec<Estimand>,
    ) -> Self {
        use crate::potential::PotentialFamily::Quadratic;
        let mut estimator = EstimatorConfig::new(order, 1.0);
        estimator.admissible = AdmissibleSet::Unconstrained;
        Self {
            simulation,
            confining: PotentialSpec::confining(Quadratic { a: 1.0 }),
            interaction: PotentialSpec::interaction(Quadratic { a: 1.0 }),
            estimator,
            axis,
            grid,
            seeds,
            estimands,
            reference: RateReference::ornstein_uhlenbeck(),
            quadrature: QuadratureSpec::gaussian(0.0, 0.5),
        }
    }

    fn cell_config(&self, g: usize, s: usize) -> Result<SimConfig> {
        let mut cfg = self.simulation.clone();
        let value = self.grid[g];
        match self.axis {
            RateAxis::Horizon => cfg.horizon = value,
            RateAxis::Particles => {
                if value.fract() != 0.0 {
                    return Err(Error::RateStudy(format!("N grid value {value} is not an integer")));
                }
                cfg.n_particles = value as usize;
            }
        }
        cfg.seed = derive_seed(self.simulation.seed, &format!("rate/{g}/{s}"));
        cfg.threads = 1;
        Ok(cfg)
    }

    /// Simulates one cell and evaluates every estimand on it.
    pub fn run_cell(&self, g: usize, s: usize) -> Result<Vec<f64>> {
        let cfg = self.cell_config(g, s)?;
        let traj = simulate_ips(&cfg, &self.confining, &self.interaction)?;
        let rule = self.quadrature.rule()?;
        let order = self.estimator.order;
        let top = self
            .estimands
            .iter()
            .map(|e| match e {
                Estimand::BasisError { k } => *k,
                _ => order,
            })
            .max()
            .unwrap_or(order)
            .max(1);
        let moments = empirical_moments(&traj, 2 * top, self.estimator.sampling)?;
        let exact = analytic_moments(self.reference.measure, 2 * top)?;
        let mut kernel = None;
        self.estimands
            .iter()
            .map(|e| match e {
                Estimand::MomentError => Ok((1..=2 * order.max(1))
                    .map(|r| (moments.get(r) - exact.get(r)).powi(2))
                    .sum::<f64>()
                    .sqrt()),
                Estimand::BasisError { k } => {
                    let approx = build_basis(&moments, *k)?;
                    let truth = build_basis(&exact, *k)?;
                    Ok(rule.l2_norm(|x| {
                        eval_poly(&approx, *k, x).expect("k in range")
                            - eval_poly(&truth, *k, x).expect("k in range")
                    }))
                }
                Estimand::KernelError => {
                    if kernel.is_none() {
                        kernel = Some(estimate_interaction(&traj, &self.confining, &self.estimator)?);
                    }
                    let est = &kernel.as_ref().expect("just set").estimate;
                    let truth = &self.reference.kernel;
                    Ok(rule.l2_norm(|x| est.eval(x) - horner(truth, x)))
                }
            })
            .collect()
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Runs the full pipeline on every (grid value, seed) cell and fits the rates.
pub fn rate_study(exp: &RateExperiment) -> Result<Vec<RateResult>> {
    exp.simulation.validate()?;
    if exp.estimands.is_empty() {
        return Err(Error::RateStudy("no estimands requested".into()));
    }
    let labels: Vec<String> = exp.estimands.iter().map(Estimand::label).collect();
    rate_study_cells(&exp.grid, exp.seeds, &labels, |g, s| exp.run_cell(g, s))
}

/// Interval between the `(1 - mass)/2` and `(1 + mass)/2` sample quantiles.
pub fn central_interval(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidQuadrature("no samples".into()));
    }
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::InvalidQuadrature(format!("mass {mass} outside (0, 1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    let tail = (1.0 - mass) / 2.0;
    // the nudges keep exact quantile positions from rounding outward
    let lo = sorted[(tail * last + 1e-9).floor() as usize];
    let hi = sorted[((1.0 - tail) * last - 1e-9).ceil().min(last) as usize];
    Ok((lo, hi))
}

/// `||est - truth|| / ||truth||` in the empirical `L^2` of the samples lying
/// in the central `mass` interval.
pub fn relative_l2_error(
    est: impl Fn(f64) -> f64,
    truth: impl Fn(f64) -> f64,
    samples: &[f64],
    mass: f64,
) -> Result<f64> {
    let (lo, hi) = central_interval(samples, mass)?;
    let inside: Vec<f64> = samples.iter().copied().filter(|x| (lo..=hi).contains(x)).collect();
    let quad = QuadratureSpec::empirical(inside).rule()?;
    let denom = quad.l2_norm(&truth);
    if denom == 0.0 {
        return Err(Error::InvalidQuadrature("reference kernel vanishes on the samples".into()));
    }
    Ok(quad.l2_norm(|x| est(x) - truth(x)) / denom)
}
