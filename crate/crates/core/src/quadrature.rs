//! Weighted `L^2(rho)` norms.

use crate::error::{Error, Result};
use crate::moments::GaussianMeasure;
use serde::{Deserialize, Serialize};

pub const DEFAULT_HALF_WIDTH_SD: f64 = 8.0;
pub const DEFAULT_NODES: usize = 10_001;

/// How the measure `rho` in `||f||_{L^2(rho)}` is represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadratureSpec {
    /// Composite Simpson on `mean ± half_width_sd * sd` against a closed-form density.
    ExactDensity {
        measure: GaussianMeasure,
        #[serde(default = "default_half_width")]
        half_width_sd: f64,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    /// Equal-weight average over samples drawn from `rho`.
    EmpiricalMeasure { samples: Vec<f64> },
}

fn default_half_width() -> f64 {
    DEFAULT_HALF_WIDTH_SD
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

impl QuadratureSpec {
    pub fn gaussian(mean: f64, var: f64) -> Self {
        QuadratureSpec::ExactDensity {
            measure: GaussianMeasure::new(mean, var),
            half_width_sd: DEFAULT_HALF_WIDTH_SD,
            nodes: DEFAULT_NODES,
        }
    }

    pub fn empirical(samples: Vec<f64>) -> Self {
        QuadratureSpec::EmpiricalMeasure { samples }
    }

    /// Nodes and weights such that `sum w_i f(x_i) ≈ int f rho`.
    pub fn rule(&self) -> Result<QuadratureRule> {
        match self {
            QuadratureSpec::ExactDensity {
                measure,
                half_width_sd,
                nodes,
            } => {
                if *nodes < 3 || nodes % 2 == 0 {
                    return Err(Error::InvalidQuadrature(format!(
                        "Simpson needs an odd node count >= 3, got {nodes}"
                    )));
                }
                if !(*half_width_sd > 0.0) || !(measure.var() > 0.0) {
                    return Err(Error::InvalidQuadrature(
                        "interval and variance must be positive".into(),
                    ));
                }
                let sd = measure.var().sqrt();
                let a = measure.mean() - half_width_sd * sd;
                let b = measure.mean() + half_width_sd * sd;
                let step = (b - a) / (nodes - 1) as f64;
                let (xs, ws) = (0..*nodes)
                    .map(|i| {
                        let x = a + i as f64 * step;
                        let simpson = if i == 0 || i == nodes - 1 {
                            1.0
                        } else if i % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        (x, simpson * step / 3.0 * measure.density(x))
                    })
                    .unzip();
                Ok(QuadratureRule {
                    nodes: xs,
                    weights: ws,
                })
            }
            QuadratureSpec::EmpiricalMeasure { samples } => {
                if samples.is_empty() {
                    return Err(Error::InvalidQuadrature("no samples".into()));
                }
                let w = 1.0 / samples.len() as f64;
                Ok(QuadratureRule {
                    nodes: samples.clone(),
                    weights: vec![w; samples.len()],
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn l2_norm(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.integrate(|x| {
            let v = f(x);
            v * v
        })
        .sqrt()
    }
}

/// `sqrt(int f^2 rho)`.
pub fn l2_rho_norm(f: impl Fn(f64) -> f64, quad: &QuadratureSpec) -> Result<f64> {
    Ok(quad.rule()?.l2_norm(f))
}
