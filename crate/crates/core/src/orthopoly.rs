//! Polynomials orthonormal with respect to a measure known only through its
//! moments.
//!
//! `psi_k(x) = (1/c_k) sum_j lambda_kj x^j`, where the row `lambda_k` spans
//! the direction of the `k`-th orthogonal polynomial and
//! `c_k^2 = sum_ij lambda_ki lambda_kj M^(i+j)`.
//!
//! Two constructions are provided. [`build_basis`] factors the Hankel moment
//! matrix `H = L L^T`; row `k` of `L^{-1}` is orthonormal under `H`.
//! [`build_basis_determinant`] uses the signed Hankel minors directly and is
//! kept as a reference for small degrees, where it is well conditioned.

use crate::error::{Error, Result};
use crate::moments::MomentVector;
use crate::quadrature::QuadratureSpec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Pivots below this fraction of the largest Hankel diagonal entry are
/// treated as loss of positive definiteness.
pub const PIVOT_REL_TOL: f64 = 1e-12;

/// Normalizations below this are logged as a warning.
pub const SMALL_NORMALIZATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Cholesky,
    Determinant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis {
    lambda: Vec<Vec<f64>>,
    c: Vec<f64>,
    source: MomentVector,
    construction: Construction,
}

/// JSON layout of a basis: `lambda` is the lower triangle in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisDump {
    #[serde(rename = "K")]
    pub order: usize,
    pub lambda: Vec<f64>,
    pub c: Vec<f64>,
    pub source: MomentVector,
    pub construction: Construction,
}

fn normalization(row: &[f64], moments: &MomentVector) -> f64 {
    let mut s = 0.0;
    for (i, &li) in row.iter().enumerate() {
        for (j, &lj) in row.iter().enumerate() {
            s += li * lj * moments.get(i + j);
        }
    }
    s
}

/// Lower Cholesky factor of a symmetric matrix, failing on the first pivot
/// below `PIVOT_REL_TOL * max diagonal`.
fn cholesky_lower(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let max_diag = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                let pivot = a[i][i] - s;
                if !(pivot > PIVOT_REL_TOL * max_diag) {
                    return Err(Error::HankelNotPositiveDefinite { order: i, pivot });
                }
                l[i][i] = pivot.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn invert_lower(l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = l.len();
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        inv[col][col] = 1.0 / l[col][col];
        for row in col + 1..n {
            let s: f64 = (col..row).map(|p| l[row][p] * inv[p][col]).sum();
            inv[row][col] = -s / l[row][row];
        }
    }
    inv
}

impl OrthoBasis {
    fn from_rows(
        rows: Vec<Vec<f64>>,
        moments: &MomentVector,
        construction: Construction,
    ) -> Result<Self> {
        let mut c = Vec::with_capacity(rows.len());
        for (k, row) in rows.iter().enumerate() {
            let c2 = normalization(row, moments);
            if !(c2 > 0.0) || !c2.is_finite() {
                return Err(Error::HankelNotPositiveDefinite { order: k, pivot: c2 });
            }
            let ck = c2.sqrt();
            if ck < SMALL_NORMALIZATION {
                log::warn!("normalization c_{k} = {ck:e} is very small; the basis may be unstable");
            }
            c.push(ck);
        }
        Ok(Self {
            lambda: rows,
            c,
            source: moments.clone(),
            construction,
        })
    }

    /// Highest degree `K`.
    pub fn order(&self) -> usize {
        self.lambda.len() - 1
    }

    /// Row `k` of the coefficient table, `lambda_k0..=lambda_kk`.
    pub fn lambda(&self, k: usize) -> &[f64] {
        &self.lambda[k]
    }

    pub fn normalizations(&self) -> &[f64] {
        &self.c
    }

    pub fn source(&self) -> &MomentVector {
        &self.source
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    fn check(&self, k: usize) -> Result<()> {
        if k > self.order() {
            Err(Error::DegreeOutOfRange {
                k,
                max: self.order(),
            })
        } else {
            Ok(())
        }
    }

    /// Monomial coefficients of `psi_k`, i.e. `lambda_kj / c_k`.
    pub fn monomial_coeffs(&self, k: usize) -> Result<Vec<f64>> {
        self.check(k)?;
        Ok(self.lambda[k].iter().map(|l| l / self.c[k]).collect())
    }

    pub fn eval(&self, k: usize, x: f64) -> Result<f64> {
        self.check(k)?;
        let s = self.lambda[k].iter().rev().fold(0.0, |acc, &l| acc * x + l);
        Ok(s / self.c[k])
    }

    pub fn eval_derivative(&self, k: usize, x: f64) -> Result<f64> {
        self.check(k)?;
        let s = self.lambda[k]
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (j, &l)| acc * x + j as f64 * l);
        Ok(s / self.c[k])
    }

    /// `psi_0(x)..=psi_K(x)`.
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        (0..=self.order())
            .map(|k| self.eval(k, x).expect("k in range"))
            .collect()
    }

    /// `G_kl = E[psi_k psi_l]` under the given moments.
    pub fn gram_matrix(&self, moments: &MomentVector) -> Result<Vec<Vec<f64>>> {
        moments.require(2 * self.order())?;
        let n = self.order() + 1;
        let mut g = vec![vec![0.0; n]; n];
        for k in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for (i, &a) in self.lambda[k].iter().enumerate() {
                    for (j, &b) in self.lambda[l].iter().enumerate() {
                        s += a * b * moments.get(i + j);
                    }
                }
                g[k][l] = s / (self.c[k] * self.c[l]);
            }
        }
        Ok(g)
    }

    pub fn dump(&self) -> BasisDump {
        BasisDump {
            order: self.order(),
            lambda: self.lambda.iter().flatten().copied().collect(),
            c: self.c.clone(),
            source: self.source.clone(),
            construction: self.construction,
        }
    }

    pub fn from_dump(dump: BasisDump) -> Result<Self> {
        let n = dump.order + 1;
        if dump.lambda.len() != n * (n + 1) / 2 || dump.c.len() != n {
            return Err(Error::InvalidConfig("inconsistent basis dump".into()));
        }
        let mut rows = Vec::with_capacity(n);
        let mut offset = 0;
        for k in 0..n {
            rows.push(dump.lambda[offset..offset + k + 1].to_vec());
            offset += k + 1;
        }
        Ok(Self {
            lambda: rows,
            c: dump.c,
            source: dump.source,
            construction: dump.construction,
        })
    }
}

/// Orthonormal basis `psi_0..=psi_K` from the Cholesky factor of the Hankel
/// moment matrix.
pub fn build_basis(moments: &MomentVector, order: usize) -> Result<OrthoBasis> {
    let hankel = moments.hankel(order)?;
    let l = cholesky_lower(&hankel)?;
    let inv = invert_lower(&l);
    let rows = inv
        .into_iter()
        .enumerate()
        .map(|(k, row)| row[..=k].to_vec())
        .collect();
    OrthoBasis::from_rows(rows, moments, Construction::Cholesky)
}

/// `lambda_kj = (-1)^(k+j) det(Lambda_kj)`, where `Lambda_kj` is the `k x k`
/// matrix `[M^(i+col)]_{i<k, col<=k}` with column `j` removed.
pub fn hankel_lambda(moments: &MomentVector, k: usize, j: usize) -> Result<f64> {
    if j > k {
        return Err(Error::DegreeOutOfRange { k: j, max: k });
    }
    if k == 0 {
        return Ok(1.0);
    }
    moments.require(2 * k - 1)?;
    let minor = DMatrix::from_fn(k, k, |i, col| {
        let col = if col < j { col } else { col + 1 };
        moments.get(i + col)
    });
    let sign = if (k + j) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * minor.determinant())
}

/// Reference construction from signed Hankel minors.
pub fn build_basis_determinant(moments: &MomentVector, order: usize) -> Result<OrthoBasis> {
    moments.require(2 * order)?;
    let mut rows = Vec::with_capacity(order + 1);
    for k in 0..=order {
        let row = (0..=k)
            .map(|j| hankel_lambda(moments, k, j))
            .collect::<Result<Vec<_>>>()?;
        // lambda_kk is the leading principal minor of order k
        if !(row[k] > 0.0) {
            return Err(Error::HankelNotPositiveDefinite {
                order: k,
                pivot: row[k],
            });
        }
        rows.push(row);
    }
    OrthoBasis::from_rows(rows, moments, Construction::Determinant)
}

pub fn eval_poly(basis: &OrthoBasis, k: usize, x: f64) -> Result<f64> {
    basis.eval(k, x)
}

pub fn eval_poly_derivative(basis: &OrthoBasis, k: usize, x: f64) -> Result<f64> {
    basis.eval_derivative(k, x)
}

/// `||psi_k^a - psi_k^b||_{L^2(rho)}` for every `k`.
pub fn basis_distance(a: &OrthoBasis, b: &OrthoBasis, quad: &QuadratureSpec) -> Result<Vec<f64>> {
    if a.order() != b.order() {
        return Err(Error::MismatchedK {
            a: a.order(),
            b: b.order(),
        });
    }
    let rule = quad.rule()?;
    Ok((0..=a.order())
        .map(|k| {
            rule.l2_norm(|x| a.eval(k, x).expect("k in range") - b.eval(k, x).expect("k in range"))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{analytic_moments, GaussianMeasure, MomentProvenance};
    use proptest::prelude::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn half_gaussian(order: usize) -> MomentVector {
        analytic_moments(GaussianMeasure::new(0.0, 0.5), order).unwrap()
    }

    #[test]
    fn hermite_low_degrees() {
        let b = build_basis(&half_gaussian(4), 2).unwrap();
        assert_eq!(b.eval(0, 3.7).unwrap(), 1.0);
        let p1 = b.monomial_coeffs(1).unwrap();
        assert!(p1[0].abs() < 1e-15 && (p1[1] - SQRT2).abs() < 1e-14);
        let p2 = b.monomial_coeffs(2).unwrap();
        assert!((p2[0] + 1.0 / SQRT2).abs() < 1e-14);
        assert!(p2[1].abs() < 1e-15);
        assert!((p2[2] - SQRT2).abs() < 1e-14);
    }

    #[test]
    fn evaluation_examples() {
        let b = build_basis(&half_gaussian(4), 2).unwrap();
        assert!((b.eval(1, 1.0).unwrap() - SQRT2).abs() < 1e-14);
        assert!((b.eval(2, 0.0).unwrap() + 1.0 / SQRT2).abs() < 1e-14);
        assert_eq!(b.eval_derivative(0, 2.0).unwrap(), 0.0);
        assert!((b.eval_derivative(1, -4.0).unwrap() - SQRT2).abs() < 1e-14);
        assert!((b.eval_derivative(2, 1.0).unwrap() - 2.0 * SQRT2).abs() < 1e-14);
        assert!(matches!(b.eval(3, 0.0), Err(Error::DegreeOutOfRange { k: 3, max: 2 })));
        assert!(b.eval_derivative(5, 0.0).is_err());
    }

    #[test]
    fn shifted_gaussian_first_degree() {
        let m = analytic_moments(GaussianMeasure::new(1.0, 1.0), 2).unwrap();
        let b = build_basis(&m, 1).unwrap();
        let p = b.monomial_coeffs(1).unwrap();
        assert!((p[0] + 1.0).abs() < 1e-14 && (p[1] - 1.0).abs() < 1e-14);
        // quadrature oracle: E[psi_1] = 0, E[psi_1^2] = 1
        let rule = QuadratureSpec::gaussian(1.0, 1.0).rule().unwrap();
        assert!(rule.integrate(|x| b.eval(1, x).unwrap()).abs() < 1e-10);
        assert!((rule.integrate(|x| b.eval(1, x).unwrap().powi(2)) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn determinant_minors() {
        let m = half_gaussian(4);
        assert_eq!(hankel_lambda(&m, 0, 0).unwrap(), 1.0);
        assert_eq!(hankel_lambda(&m, 1, 0).unwrap(), 0.0);
        assert_eq!(hankel_lambda(&m, 1, 1).unwrap(), 1.0);
        let row: Vec<f64> = (0..=2).map(|j| hankel_lambda(&m, 2, j).unwrap()).collect();
        // leading minor of the 2x2 Hankel block, not monic
        assert!((row[0] + 0.25).abs() < 1e-15 && row[1].abs() < 1e-15 && (row[2] - 0.5).abs() < 1e-15);

        let general = MomentVector::from_values(
            vec![1.0, 0.3, 1.2, 0.9, 2.5],
            MomentProvenance::Analytic {
                measure: GaussianMeasure::new(0.0, 1.0),
            },
        )
        .unwrap();
        assert!((hankel_lambda(&general, 1, 0).unwrap() + 0.3).abs() < 1e-15);
        assert!((hankel_lambda(&general, 1, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(hankel_lambda(&general, 3, 0), Err(Error::OrderTooHigh { .. })));
    }

    #[test]
    fn gram_identity_up_to_degree_ten() {
        for k in 0..=10 {
            let m = half_gaussian(2 * k);
            let b = build_basis(&m, k).unwrap();
            let g = b.gram_matrix(&m).unwrap();
            for (i, row) in g.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-8, "K={k} G[{i}][{j}] = {v}");
                }
            }
            assert!((0..=k).all(|i| b.lambda(i)[i] > 0.0));
        }
    }

    #[test]
    fn symmetric_measure_gives_parity_polynomials() {
        let b = build_basis(&half_gaussian(16), 8).unwrap();
        for k in 0..=8 {
            let p = b.monomial_coeffs(k).unwrap();
            for (j, &v) in p.iter().enumerate() {
                if (j + k) % 2 == 1 {
                    assert!(v.abs() <= 1e-12, "psi_{k} has x^{j} coefficient {v}");
                }
            }
        }
    }

    #[test]
    fn scaling_covariance() {
        // pushforward of N(0, 1/2) under x -> s x is N(0, s^2/2)
        let s: f64 = 1.7;
        let base = build_basis(&half_gaussian(12), 6).unwrap();
        let scaled =
            build_basis(&analytic_moments(GaussianMeasure::new(0.0, 0.5 * s * s), 12).unwrap(), 6)
                .unwrap();
        for k in 0..=6 {
            for &x in &[-1.3, -0.2, 0.0, 0.8, 2.1] {
                let a = scaled.eval(k, s * x).unwrap();
                let b = base.eval(k, x).unwrap();
                assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
            }
        }
    }

    fn assert_same_polynomials(a: &OrthoBasis, b: &OrthoBasis) {
        for k in 0..=a.order() {
            let pa = a.monomial_coeffs(k).unwrap();
            let pb = b.monomial_coeffs(k).unwrap();
            let scale = pb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in pa.iter().zip(&pb) {
                assert!((x - y).abs() <= 1e-8 * scale, "k={k}: {pa:?} vs {pb:?}");
            }
        }
    }

    #[test]
    fn construction_paths_agree_on_gaussians() {
        for (mean, var) in [(0.0, 0.5), (1.0, 1.0), (-0.4, 2.3)] {
            let m = analytic_moments(GaussianMeasure::new(mean, var), 12).unwrap();
            for k in 0..=6 {
                assert_same_polynomials(
                    &build_basis(&m, k).unwrap(),
                    &build_basis_determinant(&m, k).unwrap(),
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn construction_paths_agree_on_empirical_moments(
            samples in proptest::collection::vec(-2.0f64..2.0, 400..800)
        ) {
            let t = crate::trajectory::Trajectory::from_samples(samples, 0.1).unwrap();
            let m = crate::moments::empirical_moments_continuous(&t, 12).unwrap();
            let chol = build_basis(&m, 6).unwrap();
            let det = build_basis_determinant(&m, 6).unwrap();
            assert_same_polynomials(&chol, &det);
            let g = chol.gram_matrix(&m).unwrap();
            for (i, row) in g.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((v - want).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn degenerate_measure_is_rejected() {
        // point mass at 2: Hankel matrix has rank one
        let m = MomentVector::from_values(
            (0..=4).map(|r| 2f64.powi(r)).collect(),
            MomentProvenance::EmpiricalContinuous {
                span: 1.0,
                n_particles: None,
            },
        )
        .unwrap();
        assert!(matches!(
            build_basis(&m, 2),
            Err(Error::HankelNotPositiveDefinite { order: 1, .. })
        ));
        assert!(matches!(build_basis(&m, 3), Err(Error::OrderTooHigh { .. })));
    }

    #[test]
    fn distance_to_self_and_to_exact_hermite() {
        let q = QuadratureSpec::gaussian(0.0, 0.5);
        let m = half_gaussian(12);
        let b = build_basis(&m, 6).unwrap();
        assert!(basis_distance(&b, &b, &q).unwrap().iter().all(|&d| d == 0.0));
        let det = build_basis_determinant(&m, 6).unwrap();
        assert!(basis_distance(&b, &det, &q).unwrap().iter().all(|&d| d <= 1e-10));
        let short = build_basis(&m, 3).unwrap();
        assert!(matches!(
            basis_distance(&b, &short, &q),
            Err(Error::MismatchedK { a: 6, b: 3 })
        ));
    }

    #[test]
    fn dump_round_trip() {
        let b = build_basis(&half_gaussian(8), 4).unwrap();
        let back = OrthoBasis::from_dump(b.dump()).unwrap();
        assert_eq!(back, b);
        assert_eq!(b.dump().lambda.len(), 15);
    }
}
