//! Euler–Maruyama integration of the N-particle system
//!
//! ```text
//! dX^n = -V'(X^n) dt - (1/N) sum_i W'(X^n - X^i) dt + sqrt(2 sigma) dB^n
//! ```
//!
//! Each particle owns a ChaCha8 stream selected by its index, so a run is a
//! pure function of the configuration and does not depend on loop order or on
//! how many worker threads evaluate the forces.

use crate::error::{Error, Result};
use crate::potential::{DerivativeShape, PotentialFamily, PotentialSpec};
use crate::trajectory::{Trajectory, TrajectoryMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Positions beyond this magnitude abort the run.
pub const BLOW_UP_BOUND: f64 = 1e8;

const STEP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Deterministic { x0: f64 },
    GaussianIid { mean: f64, var: f64 },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Deterministic { x0: 0.0 }
    }
}

fn default_stride() -> usize {
    1
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "N")]
    pub n_particles: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub h: f64,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub init: InitialCondition,
    /// Time discarded from the front of the stored path.
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default = "default_stride")]
    pub store_stride: usize,
    /// Worker threads for the force loop. Results do not depend on this.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let n = r.round();
    if n >= 0.0 && (r - n).abs() <= STEP_TOL * r.abs().max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

impl SimConfig {
    /// Configuration used throughout the numerical experiments: start at the
    /// origin, step 0.01, no burn-in, every step stored.
    pub fn new(n_particles: usize, horizon: f64, sigma: f64, seed: u64) -> Self {
        Self {
            n_particles,
            horizon,
            h: 0.01,
            sigma,
            seed,
            init: InitialCondition::default(),
            burn_in: 0.0,
            store_stride: 1,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_particles == 0 {
            return bad("N must be at least 1");
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad("h must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("T must be positive");
        }
        match integer_ratio(self.horizon, self.h) {
            Some(n) if n > 0 => {}
            _ => return bad("T/h must be a positive integer"),
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and non-negative");
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return bad("burn_in must satisfy 0 <= burn_in < T");
        }
        if integer_ratio(self.burn_in, self.h).is_none() {
            return bad("burn_in must be a multiple of h");
        }
        if self.store_stride == 0 {
            return bad("store_stride must be at least 1");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if let InitialCondition::GaussianIid { var, .. } = self.init {
            if !(var >= 0.0 && var.is_finite()) {
                return bad("initial variance must be non-negative");
            }
        }
        if (self.steps() - self.burn_steps()) / self.store_stride < 1 {
            return bad("configuration stores fewer than two samples");
        }
        Ok(())
    }

    /// Number of integration steps, `T/h`.
    pub fn steps(&self) -> usize {
        integer_ratio(self.horizon, self.h).unwrap_or(0)
    }

    fn burn_steps(&self) -> usize {
        integer_ratio(self.burn_in, self.h).unwrap_or(0)
    }
}

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for p in 0..=n {
        let mut row = vec![1.0; p + 1];
        for q in 1..p {
            row[q] = rows[p - 1][q - 1] + rows[p - 1][q];
        }
        rows.push(row);
    }
    rows
}

/// Evaluates `(1/N) sum_i W'(x_n - x_i)` for every particle.
#[derive(Debug, Clone)]
pub(crate) struct MeanFieldForce {
    family: PotentialFamily,
    shape: DerivativeShape,
    binom: Vec<Vec<f64>>,
}

impl MeanFieldForce {
    pub(crate) fn new(interaction: &PotentialSpec) -> Self {
        let shape = interaction.family.derivative_shape();
        let degree = match &shape {
            DerivativeShape::PolySin { coeffs, .. } => coeffs.len(),
            DerivativeShape::General => 0,
        };
        Self {
            family: interaction.family.clone(),
            shape,
            binom: binomial_table(degree),
        }
    }

    pub(crate) fn pairwise(&self, positions: &[f64], out: &mut [f64], parallel: bool) {
        let inv_n = 1.0 / positions.len() as f64;
        let one = |x: f64| {
            positions
                .iter()
                .map(|&y| self.family.derivative(x - y))
                .sum::<f64>()
                * inv_n
        };
        if parallel {
            out.par_iter_mut()
                .zip(positions.par_iter())
                .for_each(|(o, &x)| *o = one(x));
        } else {
            for (o, &x) in out.iter_mut().zip(positions) {
                *o = one(x);
            }
        }
    }

    /// O(N deg) evaluation through power means (and mean sine/cosine) of the
    /// ensemble. Returns `false` when the family has no such structure.
    pub(crate) fn aggregated(&self, positions: &[f64], out: &mut [f64], parallel: bool) -> bool {
        let DerivativeShape::PolySin {
            coeffs,
            sin_amplitude,
        } = &self.shape
        else {
            return false;
        };
        let n = positions.len() as f64;
        let deg = coeffs.len().saturating_sub(1);

        // power means mu_m, m = 0..=deg, summed in index order
        let mut mu = vec![0.0; deg + 1];
        let (mut mean_cos, mut mean_sin) = (0.0, 0.0);
        for &x in positions {
            let mut p = 1.0;
            for m in mu.iter_mut() {
                *m += p;
                p *= x;
            }
            if *sin_amplitude != 0.0 {
                mean_cos += x.cos();
                mean_sin += x.sin();
            }
        }
        mu.iter_mut().for_each(|m| *m /= n);
        mean_cos /= n;
        mean_sin /= n;

        // (1/N) sum_i (x - x_i)^p = sum_q C(p,q) x^q (-1)^(p-q) mu_(p-q)
        let mut b = vec![0.0; coeffs.len()];
        for (p, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (q, bq) in b.iter_mut().enumerate().take(p + 1) {
                let sign = if (p - q) % 2 == 0 { 1.0 } else { -1.0 };
                *bq += a * self.binom[p][q] * sign * mu[p - q];
            }
        }

        let amp = *sin_amplitude;
        let one = |x: f64| {
            let poly = b.iter().rev().fold(0.0, |acc, &c| acc * x + c);
            if amp != 0.0 {
                // sin(x - y) = sin x cos y - cos x sin y
                poly - amp * (x.sin() * mean_cos - x.cos() * mean_sin)
            } else {
                poly
            }
        };
        if parallel {
            out.par_iter_mut()
                .zip(positions.par_iter())
                .for_each(|(o, &x)| *o = one(x));
        } else {
            for (o, &x) in out.iter_mut().zip(positions) {
                *o = one(x);
            }
        }
        true
    }

    pub(crate) fn eval(&self, positions: &[f64], out: &mut [f64], parallel: bool) {
        if !self.aggregated(positions, out, parallel) {
            self.pairwise(positions, out, parallel);
        }
    }
}

/// Mean-field interaction drift `(1/N) sum_i W'(x_n - x_i)` for each `n`.
pub fn interaction_drift(positions: &[f64], interaction: &PotentialSpec) -> Vec<f64> {
    let mut out = vec![0.0; positions.len()];
    MeanFieldForce::new(interaction).eval(positions, &mut out, false);
    out
}

/// The O(N^2) reference evaluation of [`interaction_drift`].
pub fn interaction_drift_pairwise(positions: &[f64], interaction: &PotentialSpec) -> Vec<f64> {
    let mut out = vec![0.0; positions.len()];
    MeanFieldForce::new(interaction).pairwise(positions, &mut out, false);
    out
}

fn particle_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Simulates the system and returns the path of particle 1 (index 0).
pub fn simulate_ips(
    cfg: &SimConfig,
    confining: &PotentialSpec,
    interaction: &PotentialSpec,
) -> Result<Trajectory> {
    Ok(simulate_particles(cfg, confining, interaction, &[0])?
        .pop()
        .expect("one observed particle"))
}

/// Simulates the system and returns the paths of the requested particles
/// (zero-based indices), in the order given.
pub fn simulate_particles(
    cfg: &SimConfig,
    confining: &PotentialSpec,
    interaction: &PotentialSpec,
    observed: &[usize],
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    confining.family.validate().map_err(Error::InvalidConfig)?;
    interaction.family.validate().map_err(Error::InvalidConfig)?;
    if let Some(&bad) = observed.iter().find(|&&i| i >= cfg.n_particles) {
        return Err(Error::InvalidConfig(format!(
            "observed particle {bad} does not exist (N = {})",
            cfg.n_particles
        )));
    }

    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?,
        )
    } else {
        None
    };
    let run = || integrate(cfg, confining, interaction, observed, pool.is_some());
    let paths = match &pool {
        Some(pool) => pool.install(run),
        None => run(),
    }?;

    let meta = TrajectoryMeta {
        h: cfg.h,
        horizon: cfg.horizon,
        n_particles: Some(cfg.n_particles),
        sigma: Some(cfg.sigma),
        seed: Some(cfg.seed),
        delta: cfg.h * cfg.store_stride as f64,
    };
    paths
        .into_iter()
        .map(|values| Trajectory::from_values(cfg.burn_in, values, meta.clone()))
        .collect()
}

fn integrate(
    cfg: &SimConfig,
    confining: &PotentialSpec,
    interaction: &PotentialSpec,
    observed: &[usize],
    parallel: bool,
) -> Result<Vec<Vec<f64>>> {
    let n = cfg.n_particles;
    let h = cfg.h;
    let noise = (2.0 * cfg.sigma * h).sqrt();
    let steps = cfg.steps();
    let burn = cfg.burn_steps();
    let stride = cfg.store_stride;

    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| particle_rng(cfg.seed, i)).collect();
    let mut x: Vec<f64> = match cfg.init {
        InitialCondition::Deterministic { x0 } => vec![x0; n],
        InitialCondition::GaussianIid { mean, var } => rngs
            .iter_mut()
            .map(|r| mean + var.sqrt() * r.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    let force = MeanFieldForce::new(interaction);
    let mut drift = vec![0.0; n];

    let stored = (steps - burn) / stride + 1;
    let mut paths: Vec<Vec<f64>> = observed.iter().map(|_| Vec::with_capacity(stored)).collect();
    let record = |paths: &mut Vec<Vec<f64>>, x: &[f64]| {
        for (path, &i) in paths.iter_mut().zip(observed) {
            path.push(x[i]);
        }
    };
    if burn == 0 {
        record(&mut paths, &x);
    }

    let update = |xi: &mut f64, rng: &mut ChaCha8Rng, d: f64| {
        let xi_noise: f64 = rng.sample(StandardNormal);
        *xi += -h * confining.derivative(*xi) - h * d + noise * xi_noise;
    };

    for step in 1..=steps {
        force.eval(&x, &mut drift, parallel);
        if parallel {
            x.par_iter_mut()
                .zip(rngs.par_iter_mut())
                .zip(drift.par_iter())
                .for_each(|((xi, rng), &d)| update(xi, rng, d));
        } else {
            for ((xi, rng), &d) in x.iter_mut().zip(rngs.iter_mut()).zip(&drift) {
                update(xi, rng, d);
            }
        }
        if let Some(particle) = x.iter().position(|v| !(v.abs() <= BLOW_UP_BOUND)) {
            return Err(Error::NonFinitePosition {
                step,
                particle,
                value: x[particle],
            });
        }
        if step >= burn && (step - burn) % stride == 0 {
            record(&mut paths, &x);
        }
    }
    Ok(paths)
}
