//! Generalized method of moments for the Fourier coefficients of `W'`.
//!
//! Testing the stationary mean-field Fokker–Planck equation against each
//! `psi_i` gives, for the coefficients `beta` of `W'` in the basis,
//!
//! ```text
//! alpha_i + sum_k B_ik beta_k = sigma gamma_i
//! alpha_i = E[V'(X) psi_i(X)],  gamma_i = E[psi_i'(X)],
//! B_ik    = E[psi_i(X) (psi_k * rho)(X)].
//! ```
//!
//! All three are finite sums over moments (and time averages of
//! `V'(Y) Y^j` for `alpha`). Truncating at degree `K` and replacing moments by
//! empirical ones gives the `(K+1)`-dimensional system solved here.

use crate::error::{Error, Result};
use crate::moments::{empirical_moments, weighted_drift_averages, MomentVector, Sampling};
use crate::orthopoly::{build_basis, OrthoBasis};
use crate::potential::PotentialSpec;
use crate::quadrature::QuadratureSpec;
use crate::trajectory::Trajectory;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Largest binomial row kept in exact integer arithmetic.
const EXACT_BINOMIAL_ROWS: usize = 60;

/// Pivots below this fraction of the largest entry of `B` mean singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-14;

/// Condition numbers above this are reported as a warning.
pub const ILL_CONDITIONED: f64 = 1e10;

pub const DEFAULT_BALL_RADIUS: f64 = 100.0;

fn binomial_rows(n: usize) -> Vec<Vec<f64>> {
    assert!(n <= EXACT_BINOMIAL_ROWS, "binomial table limited to {EXACT_BINOMIAL_ROWS} rows");
    let mut rows: Vec<Vec<u64>> = Vec::with_capacity(n + 1);
    for p in 0..=n {
        let mut row = vec![1u64; p + 1];
        for q in 1..p {
            row[q] = rows[p - 1][q - 1] + rows[p - 1][q];
        }
        rows.push(row);
    }
    rows.into_iter()
        .map(|r| r.into_iter().map(|v| v as f64).collect())
        .collect()
}

/// `gamma_i = (1/c_i) sum_{j=1}^i j lambda_ij M^(j-1)`.
pub fn assemble_gamma(basis: &OrthoBasis, moments: &MomentVector) -> Result<DVector<f64>> {
    let order = basis.order();
    moments.require(order.saturating_sub(1))?;
    let c = basis.normalizations();
    Ok(DVector::from_fn(order + 1, |i, _| {
        let s: f64 = basis
            .lambda(i)
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, &l)| j as f64 * l * moments.get(j - 1))
            .sum();
        s / c[i]
    }))
}

/// `alpha_i = (1/c_i) sum_j lambda_ij E[V'(X) X^j]` from given expectations.
pub fn assemble_alpha_from_expectations(
    basis: &OrthoBasis,
    drift_moments: &[f64],
) -> Result<DVector<f64>> {
    let order = basis.order();
    if drift_moments.len() < order + 1 {
        return Err(Error::OrderTooHigh {
            needed: order,
            available: drift_moments.len().saturating_sub(1),
        });
    }
    let c = basis.normalizations();
    Ok(DVector::from_fn(order + 1, |i, _| {
        let s: f64 = basis
            .lambda(i)
            .iter()
            .zip(drift_moments)
            .map(|(l, e)| l * e)
            .sum();
        s / c[i]
    }))
}

/// `alpha` with `E[V'(X) X^j]` replaced by trajectory time averages.
pub fn assemble_alpha(
    basis: &OrthoBasis,
    traj: &Trajectory,
    vprime: &PotentialSpec,
    sampling: Sampling,
) -> Result<DVector<f64>> {
    let averages = weighted_drift_averages(traj, vprime, basis.order(), sampling)?;
    assemble_alpha_from_expectations(basis, &averages)
}

/// `E[V'(X) X^j] = sum_p a_p M^(p+j)` for a polynomial `V'` with monomial
/// coefficients `a`.
pub fn polynomial_drift_expectations(
    vprime_coeffs: &[f64],
    moments: &MomentVector,
    max_power: usize,
) -> Result<Vec<f64>> {
    moments.require((max_power + vprime_coeffs.len()).saturating_sub(1))?;
    Ok((0..=max_power)
        .map(|j| {
            vprime_coeffs
                .iter()
                .enumerate()
                .map(|(p, a)| a * moments.get(p + j))
                .sum()
        })
        .collect())
}

/// Rows `0..=rows` and columns `0..=basis.order()` of
/// `B_ik = (1/(c_i c_k)) sum_l sum_j sum_m (-1)^(j-m) C(j,m) lambda_il lambda_kj M^(m+l) M^(j-m)`.
fn assemble_b_block(basis: &OrthoBasis, moments: &MomentVector, rows: usize) -> Result<DMatrix<f64>> {
    let cols = basis.order();
    moments.require(rows + cols)?;
    let binom = binomial_rows(cols);
    let c = basis.normalizations();
    let mut b = DMatrix::zeros(rows + 1, cols + 1);
    for i in 0..=rows {
        let li = basis.lambda(i);
        for k in 0..=cols {
            let lk = basis.lambda(k);
            let mut s = 0.0;
            for (l, &a) in li.iter().enumerate() {
                for (j, &bkj) in lk.iter().enumerate() {
                    let mut inner = 0.0;
                    for m in 0..=j {
                        let sign = if (j - m) % 2 == 0 { 1.0 } else { -1.0 };
                        inner += sign * binom[j][m] * moments.get(m + l) * moments.get(j - m);
                    }
                    s += a * bkj * inner;
                }
            }
            b[(i, k)] = s / (c[i] * c[k]);
        }
    }
    Ok(b)
}

/// `B_ik = E[psi_i(X) (psi_k * rho)(X)]`, `i, k = 0..=K`.
pub fn assemble_b(basis: &OrthoBasis, moments: &MomentVector) -> Result<DMatrix<f64>> {
    assemble_b_block(basis, moments, basis.order())
}

fn condition_number(b: &DMatrix<f64>) -> f64 {
    let sv = b.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// The assembled truncated system `B beta = sigma gamma - alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub b: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub gamma: DVector<f64>,
    pub sigma: f64,
    pub condition_estimate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemDump {
    #[serde(rename = "K")]
    pub order: usize,
    /// Row-major.
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: f64,
    pub condition_estimate: f64,
}

impl MomentSystem {
    pub fn new(
        b: DMatrix<f64>,
        alpha: DVector<f64>,
        gamma: DVector<f64>,
        sigma: f64,
    ) -> Result<Self> {
        let n = b.nrows();
        if b.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.ncols(),
            });
        }
        for v in [&alpha, &gamma] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if b.iter().chain(alpha.iter()).chain(gamma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("moment system has non-finite entries".into()));
        }
        let condition_estimate = condition_number(&b);
        Ok(Self {
            b,
            alpha,
            gamma,
            sigma,
            condition_estimate,
        })
    }

    /// Assembles `B` and `gamma` from the basis and its moments, with a given `alpha`.
    pub fn assemble(
        basis: &OrthoBasis,
        moments: &MomentVector,
        alpha: DVector<f64>,
        sigma: f64,
    ) -> Result<Self> {
        let b = assemble_b(basis, moments)?;
        let gamma = assemble_gamma(basis, moments)?;
        Self::new(b, alpha, gamma, sigma)
    }

    pub fn order(&self) -> usize {
        self.b.nrows() - 1
    }

    /// `sigma gamma - alpha`.
    pub fn rhs(&self) -> DVector<f64> {
        &self.gamma * self.sigma - &self.alpha
    }

    /// `alpha + B beta - sigma gamma`.
    pub fn residual(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.alpha + &self.b * beta - &self.gamma * self.sigma
    }

    pub fn dump(&self) -> SystemDump {
        SystemDump {
            order: self.order(),
            b: self.b.transpose().iter().copied().collect(),
            alpha: self.alpha.iter().copied().collect(),
            gamma: self.gamma.iter().copied().collect(),
            sigma: self.sigma,
            condition_estimate: self.condition_estimate,
        }
    }
}

/// Solves `B beta = sigma gamma - alpha` by LU with partial pivoting.
pub fn solve_coefficients(system: &MomentSystem) -> Result<DVector<f64>> {
    let scale = system.b.amax();
    let lu = system.b.clone().lu();
    let u = lu.u();
    let pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(scale > 0.0) || !(pivot >= SINGULAR_PIVOT_TOL * scale) {
        return Err(Error::SingularSystem { pivot, scale });
    }
    if system.condition_estimate > ILL_CONDITIONED {
        log::warn!(
            "moment matrix is ill-conditioned (condition {:e}); the estimate may be unreliable",
            system.condition_estimate
        );
    }
    lu.solve(&system.rhs())
        .ok_or(Error::SingularSystem { pivot, scale })
}

/// Convex set the coefficient vector is projected onto.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdmissibleSet {
    EuclideanBall { radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Unconstrained,
}

impl Default for AdmissibleSet {
    fn default() -> Self {
        AdmissibleSet::EuclideanBall {
            radius: DEFAULT_BALL_RADIUS,
        }
    }
}

impl AdmissibleSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            AdmissibleSet::EuclideanBall { radius } if !(*radius > 0.0) => Err(
                Error::InvalidConfig("admissible ball radius must be positive".into()),
            ),
            AdmissibleSet::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::DimensionMismatch {
                        expected: lower.len(),
                        got: upper.len(),
                    });
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return Err(Error::InvalidConfig(
                        "admissible box needs lower < upper in every coordinate".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, beta: &DVector<f64>) -> bool {
        match self {
            AdmissibleSet::EuclideanBall { radius } => beta.norm() <= *radius,
            AdmissibleSet::Box { lower, upper } => beta
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(b, (l, u))| l <= b && b <= u),
            AdmissibleSet::Unconstrained => true,
        }
    }
}

/// Euclidean projection onto the admissible set.
pub fn project(beta: &DVector<f64>, set: &AdmissibleSet) -> Result<DVector<f64>> {
    set.validate()?;
    match set {
        AdmissibleSet::EuclideanBall { radius } => {
            let norm = beta.norm();
            Ok(if norm > *radius {
                beta * (*radius / norm)
            } else {
                beta.clone()
            })
        }
        AdmissibleSet::Box { lower, upper } => {
            if lower.len() != beta.len() {
                return Err(Error::DimensionMismatch {
                    expected: beta.len(),
                    got: lower.len(),
                });
            }
            Ok(DVector::from_fn(beta.len(), |i, _| beta[i].clamp(lower[i], upper[i])))
        }
        AdmissibleSet::Unconstrained => Ok(beta.clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Interaction,
    Drift,
}

/// `sum_k coeffs_k psi_k(x)` for the interaction kernel or the drift.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub beta_hat: DVector<f64>,
    pub basis: OrthoBasis,
    pub kind: KernelKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateDump {
    pub kind: KernelKind,
    pub beta_hat: Vec<f64>,
    pub basis: String,
    /// Coefficients of `1, x, x^2, ...` in the expanded estimate.
    pub monomial_coefficients: Vec<f64>,
}

impl KernelEstimate {
    pub fn eval(&self, x: f64) -> f64 {
        self.basis
            .eval_all(x)
            .iter()
            .zip(self.beta_hat.iter())
            .map(|(p, b)| p * b)
            .sum()
    }

    /// `sum_k (beta_k / c_k) lambda_kj` for `j = 0..=K`.
    pub fn monomial_coeffs(&self) -> Vec<f64> {
        let order = self.basis.order();
        let mut out = vec![0.0; order + 1];
        for (k, &b) in self.beta_hat.iter().enumerate() {
            let row = self.basis.monomial_coeffs(k).expect("k in range");
            for (o, r) in out.iter_mut().zip(row) {
                *o += b * r;
            }
        }
        out
    }

    pub fn dump(&self, basis_ref: &str) -> EstimateDump {
        EstimateDump {
            kind: self.kind,
            beta_hat: self.beta_hat.iter().copied().collect(),
            basis: basis_ref.to_string(),
            monomial_coefficients: self.monomial_coeffs(),
        }
    }
}

pub fn estimate_kernel(beta_hat: &DVector<f64>, basis: &OrthoBasis) -> Result<KernelEstimate> {
    if beta_hat.len() != basis.order() + 1 {
        return Err(Error::DimensionMismatch {
            expected: basis.order() + 1,
            got: beta_hat.len(),
        });
    }
    Ok(KernelEstimate {
        beta_hat: beta_hat.clone(),
        basis: basis.clone(),
        kind: KernelKind::Interaction,
    })
}

/// Drift coefficients `alpha = sigma gamma - B beta` for a known interaction.
pub fn estimate_drift(
    beta_known: &DVector<f64>,
    system: &MomentSystem,
    set: &AdmissibleSet,
    basis: &OrthoBasis,
) -> Result<KernelEstimate> {
    if beta_known.len() != system.order() + 1 || basis.order() != system.order() {
        return Err(Error::DimensionMismatch {
            expected: system.order() + 1,
            got: beta_known.len(),
        });
    }
    if !(system.sigma > 0.0) {
        return Err(Error::InvalidConfig("sigma must be positive".into()));
    }
    let alpha = &system.gamma * system.sigma - &system.b * beta_known;
    Ok(KernelEstimate {
        beta_hat: project(&alpha, set)?,
        basis: basis.clone(),
        kind: KernelKind::Drift,
    })
}

/// Ground-truth kernel for the truncation diagnostics.
#[derive(Clone, Copy)]
pub enum TrueKernel<'a> {
    /// Monomial coefficients of `W'`.
    Polynomial(&'a [f64]),
    /// `W'` evaluated pointwise, projected with the given quadrature.
    Function(&'a dyn Fn(f64) -> f64, &'a QuadratureSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaDiagnostics {
    #[serde(rename = "K")]
    pub order: usize,
    /// Number of coefficients beyond `K` that entered the tail sums.
    pub tail_terms: usize,
    /// `e_i = sum_{k > K} B_ik beta_k`.
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    /// `2 ||B^{-1} e||`.
    pub delta_estimate: f64,
    /// `sqrt(sum_{k > K} beta_k^2)`.
    pub epsilon_estimate: f64,
}

/// Fourier coefficients `E[f psi_k]` of a polynomial `f`.
pub fn polynomial_fourier_coefficients(
    basis: &OrthoBasis,
    moments: &MomentVector,
    coeffs: &[f64],
) -> Result<DVector<f64>> {
    let expect = polynomial_drift_expectations(coeffs, moments, basis.order())?;
    assemble_alpha_from_expectations(basis, &expect)
}

/// Truncation diagnostics `e^(K)`, `delta(K)` and `epsilon(K)` for a known
/// kernel, using `tail_terms` coefficients beyond `K`. The default is `4K`,
/// or for a polynomial kernel its degree, since higher coefficients vanish.
/// The tail is shortened when the moments do not support a basis of the
/// requested degree.
pub fn diagnostics_delta(
    moments: &MomentVector,
    order: usize,
    kernel: &TrueKernel<'_>,
    tail_terms: Option<usize>,
) -> Result<DeltaDiagnostics> {
    let mut tail = match (tail_terms, kernel) {
        (Some(t), _) => t,
        (None, TrueKernel::Polynomial(coeffs)) => coeffs.len().saturating_sub(1).saturating_sub(order),
        (None, TrueKernel::Function(..)) => 4 * order.max(1),
    };
    let extra = match kernel {
        TrueKernel::Polynomial(coeffs) => coeffs.len(),
        TrueKernel::Function(..) => 0,
    };
    // largest basis degree the moments can support
    let supported = (moments.max_order().saturating_sub(extra)) / 2;
    tail = tail.min(supported.saturating_sub(order));

    let full = loop {
        match build_basis(moments, order + tail) {
            Ok(b) => break b,
            Err(Error::HankelNotPositiveDefinite { .. }) if tail > 0 => tail -= 1,
            Err(e) => return Err(e),
        }
    };

    let beta = match kernel {
        TrueKernel::Polynomial(coeffs) => polynomial_fourier_coefficients(&full, moments, coeffs)?,
        TrueKernel::Function(f, quad) => {
            let rule = quad.rule()?;
            DVector::from_fn(full.order() + 1, |k, _| {
                rule.integrate(|x| f(x) * full.eval(k, x).expect("k in range"))
            })
        }
    };

    let b = assemble_b_block(&full, moments, order)?;
    let residual = DVector::from_fn(order + 1, |i, _| {
        (order + 1..=order + tail).map(|k| b[(i, k)] * beta[k]).sum::<f64>()
    });
    let b_head = b.columns(0, order + 1).into_owned();
    let correction = b_head
        .lu()
        .solve(&residual)
        .ok_or(Error::SingularSystem {
            pivot: 0.0,
            scale: b.amax(),
        })?;
    let epsilon = beta.rows(order + 1, tail).norm();
    Ok(DeltaDiagnostics {
        order,
        tail_terms: tail,
        residual_norm: residual.norm(),
        residual: residual.iter().copied().collect(),
        delta_estimate: 2.0 * correction.norm(),
        epsilon_estimate: epsilon,
    })
}

/// Parameters of the kernel estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub order: usize,
    pub sigma: f64,
    pub admissible: AdmissibleSet,
    pub sampling: Sampling,
}

impl EstimatorConfig {
    pub fn new(order: usize, sigma: f64) -> Self {
        Self {
            order,
            sigma,
            admissible: AdmissibleSet::default(),
            sampling: Sampling::Continuous,
        }
    }
}

/// Every intermediate product of one estimator run.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub moments: MomentVector,
    pub basis: OrthoBasis,
    pub system: MomentSystem,
    /// Unprojected solution of the moment system.
    pub beta_tilde: DVector<f64>,
    pub estimate: KernelEstimate,
    /// Whether the projection moved the solution.
    pub projection_active: bool,
}

/// Estimates `W'` from a single trajectory: moments of order `2K`, the
/// orthonormal basis, the moment system, its solution, and the projection.
pub fn estimate_interaction(
    traj: &Trajectory,
    vprime: &PotentialSpec,
    cfg: &EstimatorConfig,
) -> Result<Estimation> {
    if !(cfg.sigma > 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::InvalidConfig("sigma must be positive".into()));
    }
    cfg.admissible.validate()?;
    let moments = empirical_moments(traj, 2 * cfg.order, cfg.sampling)?;
    let basis = build_basis(&moments, cfg.order)?;
    let alpha = assemble_alpha(&basis, traj, vprime, cfg.sampling)?;
    let system = MomentSystem::assemble(&basis, &moments, alpha, cfg.sigma)?;
    let beta_tilde = solve_coefficients(&system)?;
    let beta_hat = project(&beta_tilde, &cfg.admissible)?;
    let projection_active = beta_hat != beta_tilde;
    if projection_active {
        log::info!("projection onto the admissible set changed the coefficients");
    }
    let estimate = estimate_kernel(&beta_hat, &basis)?;
    Ok(Estimation {
        moments,
        basis,
        system,
        beta_tilde,
        estimate,
        projection_active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{analytic_moments, GaussianMeasure};
    use proptest::prelude::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn hermite(order: usize) -> (MomentVector, OrthoBasis) {
        let m = analytic_moments(GaussianMeasure::new(0.0, 0.5), 2 * order + 8).unwrap();
        let b = build_basis(&m, order).unwrap();
        (m, b)
    }

    #[test]
    fn gamma_examples() {
        let (m, b) = hermite(2);
        let g = assemble_gamma(&b, &m).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - SQRT2).abs() < 1e-14);
        assert!(g[2].abs() < 1e-14);
    }

    #[test]
    fn exact_alpha_for_linear_drift() {
        let (m, b) = hermite(2);
        let e = polynomial_drift_expectations(&[0.0, 1.0], &m, 2).unwrap();
        let a = assemble_alpha_from_expectations(&b, &e).unwrap();
        assert!(a[0].abs() < 1e-15);
        assert!((a[1] - 1.0 / SQRT2).abs() < 1e-14);
        assert!(a[2].abs() < 1e-14);
    }

    #[test]
    fn zero_drift_gives_zero_alpha() {
        let (_, b) = hermite(3);
        let t = Trajectory::from_samples(vec![0.1, -0.4, 0.9, 0.3], 0.01).unwrap();
        let zero = PotentialSpec::confining(crate::potential::PotentialFamily::Zero);
        let a = assemble_alpha(&b, &t, &zero, Sampling::Continuous).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn b_examples() {
        let (m, b) = hermite(1);
        let bm = assemble_b(&b, &m).unwrap();
        assert!((bm[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(bm[(1, 0)].abs() < 1e-15);
        assert!((bm[(1, 1)] - 1.0).abs() < 1e-14);
    }

    /// `int int psi_i(x) psi_k(x - y) rho(y) rho(x) dy dx` by tensor Simpson.
    fn b_by_quadrature(basis: &OrthoBasis, i: usize, k: usize, mean: f64, var: f64) -> f64 {
        let rule = QuadratureSpec::ExactDensity {
            measure: GaussianMeasure::new(mean, var),
            half_width_sd: 9.0,
            nodes: 801,
        }
        .rule()
        .unwrap();
        rule.integrate(|x| {
            basis.eval(i, x).unwrap() * rule.integrate(|y| basis.eval(k, x - y).unwrap())
        })
    }

    #[test]
    fn b_matches_double_quadrature() {
        for (mean, var) in [(0.0, 0.5), (0.7, 1.3)] {
            let m = analytic_moments(GaussianMeasure::new(mean, var), 8).unwrap();
            let basis = build_basis(&m, 4).unwrap();
            let bm = assemble_b(&basis, &m).unwrap();
            for i in 0..=4 {
                for k in 0..=4 {
                    let q = b_by_quadrature(&basis, i, k, mean, var);
                    assert!(
                        (bm[(i, k)] - q).abs() < 1e-6,
                        "B[{i}][{k}] = {} vs quadrature {q}",
                        bm[(i, k)]
                    );
                }
            }
        }
    }

    fn ou_exact_system(order: usize) -> (MomentSystem, OrthoBasis) {
        let (m, b) = hermite(order);
        let e = polynomial_drift_expectations(&[0.0, 1.0], &m, order).unwrap();
        let alpha = assemble_alpha_from_expectations(&b, &e).unwrap();
        (MomentSystem::assemble(&b, &m, alpha, 1.0).unwrap(), b)
    }

    #[test]
    fn exact_ou_system_recovers_linear_kernel() {
        let (sys, _) = ou_exact_system(1);
        assert!((sys.rhs()[1] - (SQRT2 - 1.0 / SQRT2)).abs() < 1e-14);
        let beta = solve_coefficients(&sys).unwrap();
        assert!(beta[0].abs() < 1e-12);
        assert!((beta[1] - 1.0 / SQRT2).abs() < 1e-12);
        for order in 1..=6 {
            let (sys, _) = ou_exact_system(order);
            let beta = solve_coefficients(&sys).unwrap();
            assert!((beta[1] - 1.0 / SQRT2).abs() < 1e-8);
            for k in (0..=order).filter(|&k| k != 1) {
                assert!(beta[k].abs() < 1e-8, "K={order} beta[{k}] = {}", beta[k]);
            }
            assert!((sys.b[(0, 0)] - 1.0).abs() < 1e-12);
            assert_eq!(sys.gamma[0], 0.0);
        }
    }

    #[test]
    fn identity_system_returns_rhs() {
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let sys = MomentSystem::new(DMatrix::identity(3, 3), -&v, DVector::zeros(3), 1.0).unwrap();
        assert_eq!(solve_coefficients(&sys).unwrap(), v);
    }

    #[test]
    fn singular_system_is_rejected() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let sys = MomentSystem::new(b, DVector::zeros(2), DVector::zeros(2), 1.0).unwrap();
        assert!(matches!(solve_coefficients(&sys), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn solver_agrees_with_svd_least_squares() {
        for order in 1..=4 {
            let (sys, _) = ou_exact_system(order);
            assert!(sys.condition_estimate < 1e6);
            let lu = solve_coefficients(&sys).unwrap();
            let svd = sys.b.clone().svd(true, true).solve(&sys.rhs(), 1e-15).unwrap();
            assert!((lu - &svd).norm() <= 1e-10 * svd.norm());
        }
    }

    #[test]
    fn projection_examples() {
        let ball = AdmissibleSet::EuclideanBall { radius: 1.0 };
        let p = project(&DVector::from_vec(vec![3.0, 4.0]), &ball).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let inside = DVector::from_vec(vec![0.1, -0.2]);
        assert_eq!(project(&inside, &ball).unwrap(), inside);
        let bx = AdmissibleSet::Box {
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        };
        assert_eq!(
            project(&DVector::from_vec(vec![2.0, -0.5]), &bx).unwrap(),
            DVector::from_vec(vec![1.0, -0.5])
        );
        assert_eq!(project(&inside, &AdmissibleSet::Unconstrained).unwrap(), inside);
        assert!(project(&inside, &AdmissibleSet::EuclideanBall { radius: 0.0 }).is_err());
        let flipped = AdmissibleSet::Box {
            lower: vec![1.0],
            upper: vec![-1.0],
        };
        assert!(project(&DVector::from_vec(vec![0.0]), &flipped).is_err());
    }

    fn sets() -> Vec<AdmissibleSet> {
        vec![
            AdmissibleSet::EuclideanBall { radius: 1.5 },
            AdmissibleSet::Box {
                lower: vec![-1.0, -0.5, 0.0],
                upper: vec![1.0, 2.0, 0.3],
            },
            AdmissibleSet::Unconstrained,
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let a = DVector::from_vec(a);
            let b = DVector::from_vec(b);
            for set in sets() {
                let pa = project(&a, &set).unwrap();
                let pb = project(&b, &set).unwrap();
                prop_assert!(set.contains(&pa) || (pa.norm() - 1.5).abs() < 1e-12);
                prop_assert!((project(&pa, &set).unwrap() - &pa).norm() < 1e-14);
                prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn kernel_evaluation() {
        let (_, b) = hermite(2);
        let e1 = estimate_kernel(&DVector::from_vec(vec![0.0, 1.0, 0.0]), &b).unwrap();
        for &x in &[-1.0, 0.3, 2.0] {
            assert!((e1.eval(x) - SQRT2 * x).abs() < 1e-14);
        }
        let zero = estimate_kernel(&DVector::zeros(3), &b).unwrap();
        assert_eq!(zero.eval(1.7), 0.0);
        assert_eq!(zero.monomial_coeffs(), vec![0.0; 3]);
        let mono = e1.monomial_coeffs();
        assert!(mono[0].abs() < 1e-15 && (mono[1] - SQRT2).abs() < 1e-14 && mono[2].abs() < 1e-15);
        assert!(estimate_kernel(&DVector::zeros(2), &b).is_err());
    }

    #[test]
    fn drift_without_interaction_is_sigma_gamma() {
        // V = x^2/2, W = 0, sigma = 1: invariant measure N(0, 1)
        let m = analytic_moments(GaussianMeasure::new(0.0, 1.0), 6).unwrap();
        let b = build_basis(&m, 2).unwrap();
        let e = polynomial_drift_expectations(&[0.0, 1.0], &m, 2).unwrap();
        let alpha = assemble_alpha_from_expectations(&b, &e).unwrap();
        let sys = MomentSystem::assemble(&b, &m, alpha, 1.0).unwrap();
        let drift = estimate_drift(&DVector::zeros(3), &sys, &AdmissibleSet::Unconstrained, &b)
            .unwrap();
        assert!((drift.beta_hat[1] - 1.0).abs() < 1e-14);
        assert_eq!(drift.kind, KernelKind::Drift);
        for &x in &[-1.5, 0.2, 2.0] {
            assert!((drift.eval(x) - x).abs() < 1e-13);
        }
    }

    #[test]
    fn drift_with_known_ou_interaction() {
        let (sys, b) = ou_exact_system(2);
        let beta = DVector::from_vec(vec![0.0, 1.0 / SQRT2, 0.0]);
        let drift = estimate_drift(&beta, &sys, &AdmissibleSet::default(), &b).unwrap();
        assert!((drift.beta_hat[1] - 1.0 / SQRT2).abs() < 1e-12);
        let mut zero_sigma = sys.clone();
        zero_sigma.sigma = 0.0;
        assert!(estimate_drift(&beta, &zero_sigma, &AdmissibleSet::default(), &b).is_err());
    }

    #[test]
    fn identifiability_shift_leaves_residual_unchanged() {
        // f(x) = x^2/2: f' = x and (f' * rho)(x) = x - E[X] = x
        let (m, b) = hermite(3);
        let e = polynomial_drift_expectations(&[0.0, 1.0], &m, 3).unwrap();
        let alpha = assemble_alpha_from_expectations(&b, &e).unwrap();
        let sys = MomentSystem::assemble(&b, &m, alpha.clone(), 1.0).unwrap();
        let beta = DVector::from_vec(vec![0.0, 1.0 / SQRT2, 0.0, 0.0]);
        let shift_w = polynomial_fourier_coefficients(&b, &m, &[0.0, 1.0]).unwrap();
        let shift_v = polynomial_fourier_coefficients(&b, &m, &[0.0, 1.0]).unwrap();
        let shifted = MomentSystem::new(sys.b.clone(), &alpha - shift_v, sys.gamma.clone(), 1.0)
            .unwrap();
        let r0 = sys.residual(&beta);
        let r1 = shifted.residual(&(&beta + shift_w));
        assert!((r0 - r1).norm() < 1e-10);
    }

    #[test]
    fn truncation_diagnostics() {
        let m = analytic_moments(GaussianMeasure::new(0.0, 0.5), 40).unwrap();
        for order in 1..=4 {
            let d = diagnostics_delta(&m, order, &TrueKernel::Polynomial(&[0.0, 1.0]), None)
                .unwrap();
            assert!(d.delta_estimate <= 1e-10);
        }
        let cubic = [-1.0, 0.0, 0.0, 1.0];
        let d2 = diagnostics_delta(&m, 2, &TrueKernel::Polynomial(&cubic), None).unwrap();
        let d5 = diagnostics_delta(&m, 5, &TrueKernel::Polynomial(&cubic), None).unwrap();
        assert!(d2.delta_estimate > 1e-3);
        assert!(d5.delta_estimate <= 1e-10);
        assert!(d2.epsilon_estimate > 0.1 && d5.epsilon_estimate == 0.0);

        // the same through pointwise evaluation and quadrature
        let q = QuadratureSpec::gaussian(0.0, 0.5);
        let f = |x: f64| x * x * x - x;
        let dq = diagnostics_delta(&m, 2, &TrueKernel::Function(&f, &q), Some(4)).unwrap();
        assert!((dq.delta_estimate - d2.delta_estimate).abs() < 1e-6);
    }
}
