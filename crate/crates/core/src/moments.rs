//! Moments of the invariant measure estimated from a single trajectory,
//! closed-form Gaussian moments, and the quadratic-variation estimate of the
//! diffusion coefficient.

use crate::error::{Error, Result};
use crate::potential::PotentialSpec;
use crate::trajectory::Trajectory;
use serde::{Deserialize, Serialize};

/// How a trajectory is turned into time averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Left-endpoint Riemann sum of the continuous-time average, samples `0..I`.
    #[default]
    Continuous,
    /// Plain average over the discrete samples `1..=I`.
    Discrete,
}

impl Sampling {
    /// Samples entering the average.
    pub fn window<'a>(&self, traj: &'a Trajectory) -> Result<&'a [f64]> {
        let v = traj.values();
        if v.len() < 2 {
            return Err(Error::EmptyTrajectory);
        }
        Ok(match self {
            Sampling::Continuous => &v[..v.len() - 1],
            Sampling::Discrete => &v[1..],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaussianMeasure {
    Gaussian { mean: f64, var: f64 },
}

impl GaussianMeasure {
    pub fn new(mean: f64, var: f64) -> Self {
        GaussianMeasure::Gaussian { mean, var }
    }

    pub fn mean(&self) -> f64 {
        let GaussianMeasure::Gaussian { mean, .. } = *self;
        mean
    }

    pub fn var(&self) -> f64 {
        let GaussianMeasure::Gaussian { var, .. } = *self;
        var
    }

    pub fn density(&self, x: f64) -> f64 {
        let (m, v) = (self.mean(), self.var());
        (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentProvenance {
    EmpiricalContinuous {
        #[serde(rename = "T")]
        span: f64,
        #[serde(rename = "N")]
        n_particles: Option<usize>,
    },
    EmpiricalDiscrete {
        #[serde(rename = "I")]
        samples: usize,
        delta: f64,
        #[serde(rename = "N")]
        n_particles: Option<usize>,
    },
    Analytic {
        measure: GaussianMeasure,
    },
}

/// Moments `M^(0..=R)` of a probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub values: Vec<f64>,
    pub provenance: MomentProvenance,
}

impl MomentVector {
    pub fn from_values(values: Vec<f64>, provenance: MomentProvenance) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::OrderTooHigh {
                needed: 0,
                available: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("moments must be finite".into()));
        }
        Ok(Self { values, provenance })
    }

    /// Highest available order.
    pub fn max_order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn get(&self, r: usize) -> f64 {
        self.values[r]
    }

    pub fn require(&self, order: usize) -> Result<()> {
        if order > self.max_order() {
            Err(Error::OrderTooHigh {
                needed: order,
                available: self.max_order(),
            })
        } else {
            Ok(())
        }
    }

    /// Hankel matrix `H_ij = M^(i+j)`, `i, j = 0..=k`.
    pub fn hankel(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        self.require(2 * k)?;
        Ok((0..=k)
            .map(|i| (0..=k).map(|j| self.values[i + j]).collect())
            .collect())
    }
}

/// Averages of `y^0..y^R` over `samples`.
fn power_averages(samples: &[f64], order: usize) -> Vec<f64> {
    let mut acc = vec![0.0; order + 1];
    for &y in samples {
        let mut p = 1.0;
        for a in acc.iter_mut() {
            *a += p;
            p *= y;
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    // exact normalization regardless of rounding in the count
    acc[0] = 1.0;
    acc
}

/// Moments from a trajectory under the given sampling convention.
pub fn empirical_moments(traj: &Trajectory, order: usize, sampling: Sampling) -> Result<MomentVector> {
    let window = sampling.window(traj)?;
    let provenance = match sampling {
        Sampling::Continuous => MomentProvenance::EmpiricalContinuous {
            span: traj.span(),
            n_particles: traj.meta().n_particles,
        },
        Sampling::Discrete => MomentProvenance::EmpiricalDiscrete {
            samples: window.len(),
            delta: traj.spacing(),
            n_particles: traj.meta().n_particles,
        },
    };
    MomentVector::from_values(power_averages(window, order), provenance)
}

/// `(1/T) int_0^T Y_t^r dt` by the left-endpoint rule, `r = 0..=order`.
pub fn empirical_moments_continuous(traj: &Trajectory, order: usize) -> Result<MomentVector> {
    empirical_moments(traj, order, Sampling::Continuous)
}

/// `(1/I) sum_{i=1}^I Y_i^r`, `r = 0..=order`; the initial sample is excluded.
pub fn empirical_moments_discrete(traj: &Trajectory, order: usize) -> Result<MomentVector> {
    empirical_moments(traj, order, Sampling::Discrete)
}

/// Time averages of `V'(Y) Y^j` for `j = 0..=max_power`.
pub fn weighted_drift_averages(
    traj: &Trajectory,
    vprime: &PotentialSpec,
    max_power: usize,
    sampling: Sampling,
) -> Result<Vec<f64>> {
    let window = sampling.window(traj)?;
    let mut acc = vec![0.0; max_power + 1];
    for &y in window {
        let mut p = vprime.derivative(y);
        for a in acc.iter_mut() {
            *a += p;
            p *= y;
        }
    }
    let n = window.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// `(1/T) int_0^T V'(Y_t) Y_t^j dt` with the same discretization as the moments.
pub fn weighted_drift_average(traj: &Trajectory, vprime: &PotentialSpec, j: usize) -> Result<f64> {
    Ok(weighted_drift_averages(traj, vprime, j, Sampling::Continuous)?[j])
}

/// Gaussian moments by `M^(r) = mean M^(r-1) + (r-1) var M^(r-2)`.
pub fn analytic_moments(measure: GaussianMeasure, order: usize) -> Result<MomentVector> {
    let (mean, var) = (measure.mean(), measure.var());
    if !(var > 0.0) || !mean.is_finite() || !var.is_finite() {
        return Err(Error::InvalidConfig("Gaussian variance must be positive".into()));
    }
    let mut m = Vec::with_capacity(order + 1);
    m.push(1.0);
    if order >= 1 {
        m.push(mean);
    }
    for r in 2..=order {
        let next = mean * m[r - 1] + (r - 1) as f64 * var * m[r - 2];
        m.push(next);
    }
    MomentVector::from_values(m, MomentProvenance::Analytic { measure })
}

/// `sum (Y_j - Y_{j-1})^2 / (2 T)` over the stored grid.
pub fn quadratic_variation_sigma(traj: &Trajectory) -> Result<f64> {
    let v = traj.values();
    if v.len() < 2 {
        return Err(Error::EmptyTrajectory);
    }
    let q: f64 = v.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    Ok(q / (2.0 * traj.span()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialFamily;
    use proptest::prelude::*;

    fn path(values: Vec<f64>) -> Trajectory {
        Trajectory::from_samples(values, 0.01).unwrap()
    }

    #[test]
    fn constant_path_moments_are_powers() {
        let c = 1.7;
        let m = empirical_moments_continuous(&path(vec![c; 10]), 6).unwrap();
        let mut p = 1.0;
        for r in 0..=6 {
            assert!((m.get(r) - p).abs() <= 1e-14 * p);
            p *= c;
        }
    }

    #[test]
    fn two_point_left_endpoint() {
        let m = empirical_moments_continuous(&path(vec![1.0, 3.0]), 1).unwrap();
        assert_eq!(m.get(1), 1.0);
        assert_eq!(m.get(0), 1.0);
    }

    #[test]
    fn discrete_drops_first_sample() {
        let m = empirical_moments_discrete(&path(vec![5.0, 1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(m.get(1), 2.0);
        let ones = empirical_moments_discrete(&path(vec![9.0, 1.0, 1.0, 1.0]), 5).unwrap();
        assert!(ones.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn discrete_and_continuous_differ_by_the_end_samples() {
        let values: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin() * 2.0).collect();
        let t = path(values.clone());
        let c = empirical_moments_continuous(&t, 4).unwrap();
        let d = empirical_moments_discrete(&t, 4).unwrap();
        let i = (values.len() - 1) as f64;
        let ymax = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for r in 0..=4 {
            let expected = (values[0].powi(r as i32) - values[199].powi(r as i32)) / i;
            assert!((c.get(r) - d.get(r) - expected).abs() < 1e-13);
            assert!((c.get(r) - d.get(r)).abs() <= 2.0 * ymax.powi(r as i32) / i + 1e-15);
        }
    }

    #[test]
    fn drift_average_identities() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).cos()).collect();
        let t = path(values);
        let lin = PotentialSpec::confining(PotentialFamily::Quadratic { a: 1.0 });
        let m = empirical_moments_continuous(&t, 2).unwrap();
        assert_eq!(weighted_drift_average(&t, &lin, 1).unwrap(), m.get(2));
        let zero = PotentialSpec::confining(PotentialFamily::Zero);
        assert_eq!(weighted_drift_average(&t, &zero, 3).unwrap(), 0.0);

        let cubic = PotentialSpec::confining(PotentialFamily::Polynomial {
            coeffs: vec![0.0, 0.0, 0.0, 0.0, 0.25],
        });
        let c: f64 = 1.3;
        let cst = path(vec![c; 5]);
        for j in 0..4 {
            let got = weighted_drift_average(&cst, &cubic, j).unwrap();
            assert!((got - c.powi(3 + j as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_moments() {
        let m = analytic_moments(GaussianMeasure::new(0.0, 0.5), 4).unwrap();
        assert_eq!(m.values, vec![1.0, 0.0, 0.5, 0.0, 0.75]);
        let m = analytic_moments(GaussianMeasure::new(1.0, 1.0), 3).unwrap();
        assert_eq!(m.values, vec![1.0, 1.0, 2.0, 4.0]);
        let m = analytic_moments(GaussianMeasure::new(-0.3, 2.0), 1).unwrap();
        assert_eq!(m.get(1), -0.3);
        assert!(analytic_moments(GaussianMeasure::new(0.0, 0.0), 2).is_err());
    }

    #[test]
    fn gaussian_moments_match_double_factorial_formula() {
        // (1/sqrt 2)^k (k-1)!! for even k
        let m = analytic_moments(GaussianMeasure::new(0.0, 0.5), 12).unwrap();
        let mut dfact = 1.0;
        for k in (2..=12).step_by(2) {
            dfact *= (k - 1) as f64;
            let expected = 0.5f64.powi(k as i32 / 2) * dfact;
            assert!((m.get(k) - expected).abs() < 1e-12 * expected);
            assert_eq!(m.get(k - 1), 0.0);
        }
    }

    #[test]
    fn quadratic_variation_of_constant_is_zero() {
        assert_eq!(quadratic_variation_sigma(&path(vec![2.0; 10])).unwrap(), 0.0);
    }

    #[test]
    fn too_short_paths_are_rejected() {
        let meta = path(vec![0.0, 1.0]).meta().clone();
        assert!(Trajectory::from_values(0.0, vec![1.0], meta).is_err());
    }

    proptest! {
        #[test]
        fn even_moments_nonnegative_and_cauchy_schwarz(
            values in proptest::collection::vec(-3.0f64..3.0, 2..200)
        ) {
            let m = empirical_moments_continuous(&path(values), 8).unwrap();
            prop_assert_eq!(m.get(0), 1.0);
            for r in (0..=8).step_by(2) {
                prop_assert!(m.get(r) >= 0.0);
            }
            for r in 0..=4 {
                let lhs = m.get(r) * m.get(r);
                prop_assert!(lhs <= m.get(2 * r) * (1.0 + 1e-12) + 1e-300);
            }
        }
    }
}
