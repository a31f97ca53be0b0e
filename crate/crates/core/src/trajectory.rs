//! Observed single-particle paths on a uniform time grid.

use crate::error::{Error, Result};
use crate::textfmt::{fmt_f64, to_json_string};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Relative tolerance on grid uniformity.
const GRID_TOL: f64 = 1e-9;

/// Sampling metadata. Serialized as the trajectory's JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    /// Integrator step of the simulation that produced the path.
    pub h: f64,
    /// Simulated horizon.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Number of particles in the originating system, when known.
    #[serde(rename = "N")]
    pub n_particles: Option<usize>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    /// Spacing of the stored grid.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    values: Vec<f64>,
    meta: TrajectoryMeta,
}

impl Trajectory {
    /// Builds a trajectory, checking that the grid is uniform with spacing `meta.delta`.
    pub fn new(times: Vec<f64>, values: Vec<f64>, meta: TrajectoryMeta) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidTrajectory(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::EmptyTrajectory);
        }
        if !(meta.delta > 0.0 && meta.delta.is_finite()) {
            return Err(Error::InvalidTrajectory("grid spacing must be positive".into()));
        }
        let t0 = times[0];
        for (i, &t) in times.iter().enumerate() {
            let expected = t0 + i as f64 * meta.delta;
            if (t - expected).abs() > GRID_TOL * meta.delta.max(expected.abs()) {
                return Err(Error::InvalidTrajectory(format!(
                    "time {t} at index {i} is off the uniform grid (expected {expected})"
                )));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTrajectory(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            times,
            values,
            meta,
        })
    }

    /// Builds the grid `t0 + i * meta.delta` for the given values.
    pub fn from_values(t0: f64, values: Vec<f64>, meta: TrajectoryMeta) -> Result<Self> {
        let times = (0..values.len())
            .map(|i| t0 + i as f64 * meta.delta)
            .collect();
        Self::new(times, values, meta)
    }

    /// Uniformly sampled path with no simulation provenance.
    pub fn from_samples(values: Vec<f64>, delta: f64) -> Result<Self> {
        let horizon = delta * values.len().saturating_sub(1) as f64;
        let meta = TrajectoryMeta {
            h: delta,
            horizon,
            n_particles: None,
            sigma: None,
            seed: None,
            delta,
        };
        Self::from_values(0.0, values, meta)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid spacing of the stored samples.
    pub fn spacing(&self) -> f64 {
        self.meta.delta
    }

    /// Length of the stored time window.
    pub fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Keeps every `delta / spacing`-th sample starting at index 0.
    pub fn subsample(&self, delta: f64) -> Result<Self> {
        let ratio = delta / self.meta.delta;
        let stride = ratio.round();
        if !(delta > 0.0) || stride < 1.0 || (ratio - stride).abs() > GRID_TOL * ratio.max(1.0) {
            return Err(Error::IncommensurateDelta {
                delta,
                spacing: self.meta.delta,
            });
        }
        let stride = stride as usize;
        let idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        if idx.len() < 2 {
            return Err(Error::EmptyTrajectory);
        }
        let meta = TrajectoryMeta {
            delta: self.meta.delta * stride as f64,
            ..self.meta.clone()
        };
        Ok(Self {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
            meta,
        })
    }

    /// Sidecar path used next to a trajectory CSV (`foo.csv` -> `foo.json`).
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes `t,x` CSV plus the JSON metadata sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(csv_path)?);
        writeln!(out, "t,x")?;
        for (t, x) in self.times.iter().zip(&self.values) {
            writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*x))?;
        }
        out.flush()?;
        fs::write(Self::sidecar_path(csv_path), to_json_string(&self.meta)?)?;
        Ok(())
    }

    /// Reads a `t,x` CSV. The sidecar is used when present; otherwise the
    /// spacing is inferred from the first two samples.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(csv_path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "x" {
            return Err(Error::InvalidTrajectory(format!(
                "expected header `t,x`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidTrajectory(format!("bad number `{s}`: {e}")))
            };
            times.push(parse(&record[0])?);
            values.push(parse(&record[1])?);
        }
        if times.len() < 2 {
            return Err(Error::EmptyTrajectory);
        }
        let sidecar = Self::sidecar_path(csv_path);
        let meta = if sidecar.exists() {
            serde_json::from_str(&fs::read_to_string(sidecar)?)?
        } else {
            let delta = times[1] - times[0];
            TrajectoryMeta {
                h: delta,
                horizon: times[times.len() - 1],
                n_particles: None,
                sigma: None,
                seed: None,
                delta,
            }
        };
        Self::new(times, values, meta)
    }
}
