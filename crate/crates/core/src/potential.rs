//! Closed-form confining and interaction potentials.
//!
//! Every family evaluates `U`, `U'` and `U''` analytically. Families that are
//! polynomials (or a polynomial plus a cosine) also expose the structure the
//! simulator uses for its O(N) mean-field force path.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Functional form of a potential together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialFamily {
    /// `a x^2 / 2`
    Quadratic { a: f64 },
    /// `x^4/4 - x^2/2`
    Bistable,
    /// `cosh(x)`
    Cosh,
    /// `D (1 - exp(-a (x^2 - r^2)))^2`
    MorseLike { depth: f64, a: f64, r: f64 },
    /// `-A / sqrt(2 pi) exp(-x^2 / 2)`
    GaussianWell { amplitude: f64 },
    /// `sum_j coeffs[j] x^j + cos_amplitude * cos(x)`
    PolyCos { coeffs: Vec<f64>, cos_amplitude: f64 },
    /// `sum_j coeffs[j] x^j`
    Polynomial { coeffs: Vec<f64> },
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialRole {
    Confining,
    Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub role: PotentialRole,
}

/// Structure of `U'` that allows the mean-field sum to be evaluated from
/// per-step aggregates instead of all pairs.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum DerivativeShape {
    /// `U'(x) = sum_p coeffs[p] x^p - sin_amplitude * sin(x)`
    PolySin { coeffs: Vec<f64>, sin_amplitude: f64 },
    General,
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn differentiate(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, &c)| j as f64 * c)
        .collect()
}

fn trim(mut coeffs: Vec<f64>) -> Vec<f64> {
    while coeffs.last() == Some(&0.0) {
        coeffs.pop();
    }
    coeffs
}

impl PotentialFamily {
    /// Monomial coefficients (lowest degree first) when the family is a polynomial.
    pub fn polynomial_coeffs(&self) -> Option<Vec<f64>> {
        match self {
            PotentialFamily::Quadratic { a } => Some(vec![0.0, 0.0, 0.5 * a]),
            PotentialFamily::Bistable => Some(vec![0.0, 0.0, -0.5, 0.0, 0.25]),
            PotentialFamily::Polynomial { coeffs } => Some(coeffs.clone()),
            PotentialFamily::Zero => Some(Vec::new()),
            _ => None,
        }
    }

    /// Degree of the potential for polynomial families, `None` otherwise.
    pub fn degree(&self) -> Option<usize> {
        self.polynomial_coeffs()
            .map(|c| trim(c).len().saturating_sub(1))
    }

    /// Monomial coefficients of `U'` for polynomial families.
    pub fn derivative_coeffs(&self) -> Option<Vec<f64>> {
        self.polynomial_coeffs().map(|c| trim(differentiate(&c)))
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            PotentialFamily::Cosh => x.cosh(),
            PotentialFamily::MorseLike { depth, a, r } => {
                let s = 1.0 - (-a * (x * x - r * r)).exp();
                depth * s * s
            }
            PotentialFamily::GaussianWell { amplitude } => {
                -amplitude / (2.0 * PI).sqrt() * (-0.5 * x * x).exp()
            }
            PotentialFamily::PolyCos {
                coeffs,
                cos_amplitude,
            } => horner(coeffs, x) + cos_amplitude * x.cos(),
            PotentialFamily::Quadratic { a } => 0.5 * a * x * x,
            PotentialFamily::Bistable => 0.25 * x.powi(4) - 0.5 * x * x,
            PotentialFamily::Polynomial { coeffs } => horner(coeffs, x),
            PotentialFamily::Zero => 0.0,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            PotentialFamily::Quadratic { a } => a * x,
            PotentialFamily::Bistable => x * x * x - x,
            PotentialFamily::Cosh => x.sinh(),
            PotentialFamily::MorseLike { depth, a, r } => {
                let e = (-a * (x * x - r * r)).exp();
                4.0 * depth * a * x * e * (1.0 - e)
            }
            PotentialFamily::GaussianWell { amplitude } => {
                amplitude / (2.0 * PI).sqrt() * x * (-0.5 * x * x).exp()
            }
            PotentialFamily::PolyCos {
                coeffs,
                cos_amplitude,
            } => horner(&differentiate(coeffs), x) - cos_amplitude * x.sin(),
            PotentialFamily::Polynomial { coeffs } => horner(&differentiate(coeffs), x),
            PotentialFamily::Zero => 0.0,
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            PotentialFamily::Quadratic { a } => *a,
            PotentialFamily::Bistable => 3.0 * x * x - 1.0,
            PotentialFamily::Cosh => x.cosh(),
            PotentialFamily::MorseLike { depth, a, r } => {
                // d/dx [4 D a x (e - e^2)] with e' = -2 a x e
                let e = (-a * (x * x - r * r)).exp();
                let de = -2.0 * a * x * e;
                4.0 * depth * a * ((e - e * e) + x * (de - 2.0 * e * de))
            }
            PotentialFamily::GaussianWell { amplitude } => {
                amplitude / (2.0 * PI).sqrt() * (1.0 - x * x) * (-0.5 * x * x).exp()
            }
            PotentialFamily::PolyCos {
                coeffs,
                cos_amplitude,
            } => horner(&differentiate(&differentiate(coeffs)), x) - cos_amplitude * x.cos(),
            PotentialFamily::Polynomial { coeffs } => {
                horner(&differentiate(&differentiate(coeffs)), x)
            }
            PotentialFamily::Zero => 0.0,
        }
    }

    pub(crate) fn derivative_shape(&self) -> DerivativeShape {
        if let Some(coeffs) = self.derivative_coeffs() {
            return DerivativeShape::PolySin {
                coeffs,
                sin_amplitude: 0.0,
            };
        }
        match self {
            PotentialFamily::PolyCos {
                coeffs,
                cos_amplitude,
            } => DerivativeShape::PolySin {
                coeffs: differentiate(coeffs),
                sin_amplitude: *cos_amplitude,
            },
            _ => DerivativeShape::General,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("potential parameter `{what}` must be finite"))
            }
        };
        match self {
            PotentialFamily::Quadratic { a } => finite(*a, "a"),
            PotentialFamily::MorseLike { depth, a, r } => {
                finite(*depth, "depth")?;
                finite(*a, "a")?;
                finite(*r, "r")
            }
            PotentialFamily::GaussianWell { amplitude } => finite(*amplitude, "amplitude"),
            PotentialFamily::PolyCos {
                coeffs,
                cos_amplitude,
            } => {
                finite(*cos_amplitude, "cos_amplitude")?;
                coeffs.iter().try_for_each(|&c| finite(c, "coeffs"))
            }
            PotentialFamily::Polynomial { coeffs } => {
                coeffs.iter().try_for_each(|&c| finite(c, "coeffs"))
            }
            PotentialFamily::Bistable | PotentialFamily::Cosh | PotentialFamily::Zero => Ok(()),
        }
    }
}

impl PotentialSpec {
    pub fn confining(family: PotentialFamily) -> Self {
        Self {
            family,
            role: PotentialRole::Confining,
        }
    }

    pub fn interaction(family: PotentialFamily) -> Self {
        Self {
            family,
            role: PotentialRole::Interaction,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.family.value(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.family.derivative(x)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.family.second_derivative(x)
    }

    pub fn degree(&self) -> Option<usize> {
        self.family.degree()
    }

    pub fn derivative_coeffs(&self) -> Option<Vec<f64>> {
        self.family.derivative_coeffs()
    }
}
