//! Config-driven commands behind the `mfkernel` binary.

use crate::error::{Error, Result};
use crate::gmm::{estimate_interaction, AdmissibleSet, EstimatorConfig};
use crate::metrics::{
    injected_power_law, rate_study, Estimand, RateAxis, RateExperiment, RateReference, RateResult,
};
use crate::moments::{analytic_moments, empirical_moments, quadratic_variation_sigma, GaussianMeasure, Sampling};
use crate::orthopoly::{build_basis, OrthoBasis};
use crate::potential::{PotentialFamily, PotentialSpec};
use crate::quadrature::QuadratureSpec;
use crate::seed::derive_seed;
use crate::sim::{simulate_ips, SimConfig};
use crate::textfmt::{fmt_f64, to_json_string};
use crate::trajectory::Trajectory;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSource {
    Given { value: f64 },
    QuadraticVariation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observation {
    #[default]
    Continuous,
    Discrete { delta: f64 },
}

fn default_sigma_source() -> SigmaSource {
    SigmaSource::QuadraticVariation
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    #[serde(rename = "K")]
    pub order: usize,
    #[serde(default = "default_sigma_source")]
    pub sigma: SigmaSource,
    #[serde(default)]
    pub admissible: AdmissibleSet,
    #[serde(default)]
    pub observation: Observation,
    /// Measure for `L^2(rho)` errors; defaults to `N(0, 1/2)`.
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for CurveGrid {
    fn default() -> Self {
        Self {
            lo: -3.0,
            hi: 3.0,
            points: 601,
        }
    }
}

impl CurveGrid {
    pub fn nodes(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.lo < self.hi) {
            return Err(Error::InvalidConfig(
                "curve grid needs lo < hi and at least two points".into(),
            ));
        }
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        Ok((0..self.points).map(|i| self.lo + i as f64 * step).collect())
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub curve: CurveGrid,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            curve: CurveGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfTest {
    pub exponent: f64,
}

fn default_seeds() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub axis: RateAxis,
    pub grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub estimands: Vec<Estimand>,
    /// Defaults to the Ornstein–Uhlenbeck ground truth.
    #[serde(default)]
    pub reference: Option<RateReference>,
    /// Replaces the pipeline by noiseless `g^exponent` errors.
    #[serde(default)]
    pub self_test: Option<SelfTest>,
}

/// One JSON document describing a run; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub simulation: Option<SimConfig>,
    #[serde(default)]
    pub confining: Option<PotentialFamily>,
    /// True interaction; drives simulation and the `w_true` column.
    #[serde(default)]
    pub interaction: Option<PotentialFamily>,
    #[serde(default)]
    pub estimation: Option<EstimationSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub convergence: Option<ConvergenceSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sim) = &self.simulation {
            sim.validate()?;
        }
        for family in self.confining.iter().chain(&self.interaction) {
            family.validate().map_err(Error::InvalidConfig)?;
        }
        if let Some(est) = &self.estimation {
            est.admissible.validate()?;
            if let SigmaSource::Given { value } = est.sigma {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::InvalidConfig("sigma must be positive".into()));
                }
            }
            if let Observation::Discrete { delta } = est.observation {
                if !(delta > 0.0) {
                    return Err(Error::InvalidConfig("delta must be positive".into()));
                }
                if let Some(sim) = &self.simulation {
                    let stored = sim.h * sim.store_stride as f64;
                    let r = delta / stored;
                    if (r - r.round()).abs() > 1e-9 * r.max(1.0) || r.round() < 1.0 {
                        return Err(Error::IncommensurateDelta {
                            delta,
                            spacing: stored,
                        });
                    }
                }
            }
        }
        self.output.curve.nodes()?;
        Ok(())
    }

    fn simulation(&self) -> Result<&SimConfig> {
        self.simulation
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config has no `simulation` section".into()))
    }

    fn confining(&self) -> Result<PotentialSpec> {
        self.confining
            .clone()
            .map(PotentialSpec::confining)
            .ok_or_else(|| Error::InvalidConfig("config has no `confining` potential".into()))
    }

    fn interaction(&self) -> Result<PotentialSpec> {
        self.interaction
            .clone()
            .map(PotentialSpec::interaction)
            .ok_or_else(|| Error::InvalidConfig("config has no `interaction` potential".into()))
    }

    fn estimation(&self) -> Result<&EstimationSection> {
        self.estimation
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config has no `estimation` section".into()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "mfkernel", version, about = "Interaction-kernel inference from one observed particle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Top-level seed; overrides `simulation.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the particle system and store the path of one particle.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the orthonormal basis from a trajectory or analytic moments.
    Basis {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, conflicts_with = "analytic")]
        trajectory: Option<PathBuf>,
        /// `gaussian:MEAN,VAR`
        #[arg(long)]
        analytic: Option<String>,
    },
    /// Estimate the interaction kernel from a trajectory.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Run a convergence-rate study.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Loads the config and applies command-line overrides.
fn prepare(common: &CommonArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(sim) = cfg.simulation.as_mut() {
        if let Some(seed) = common.seed {
            sim.seed = seed;
        }
        if let Some(threads) = common.threads {
            sim.threads = threads.max(1);
        }
    }
    if let Some(threads) = common.threads {
        // an already-initialised global pool is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let (cfg, out) = prepare(&common)?;
            cmd_simulate(&cfg, &out).map(|_| ())
        }
        Command::Basis {
            common,
            trajectory,
            analytic,
        } => {
            let (cfg, out) = prepare(&common)?;
            let source = match (trajectory, analytic) {
                (Some(p), None) => BasisSource::Trajectory(p),
                (None, Some(spec)) => BasisSource::Analytic(parse_analytic(&spec)?),
                _ => {
                    return Err(Error::InvalidConfig(
                        "basis needs exactly one of --trajectory or --analytic".into(),
                    ))
                }
            };
            cmd_basis(&cfg, &source, &out).map(|_| ())
        }
        Command::Estimate { common, trajectory } => {
            let (cfg, out) = prepare(&common)?;
            cmd_estimate(&cfg, &trajectory, &out).map(|_| ())
        }
        Command::Convergence { common } => {
            let (cfg, out) = prepare(&common)?;
            cmd_convergence(&cfg, &out).map(|_| ())
        }
    }
}

/// Writes `trajectory.csv` and its sidecar.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Trajectory> {
    let mut sim = cfg.simulation()?.clone();
    sim.seed = derive_seed(sim.seed, "simulate");
    let traj = simulate_ips(&sim, &cfg.confining()?, &cfg.interaction()?)?;
    traj.save(&out.join("trajectory.csv"))?;
    Ok(traj)
}

pub enum BasisSource {
    Trajectory(PathBuf),
    Analytic(GaussianMeasure),
}

/// Parses `gaussian:MEAN,VAR`.
pub fn parse_analytic(spec: &str) -> Result<GaussianMeasure> {
    let bad = || Error::InvalidConfig(format!("expected gaussian:MEAN,VAR, got {spec:?}"));
    let rest = spec.strip_prefix("gaussian:").ok_or_else(bad)?;
    let (m, v) = rest.split_once(',').ok_or_else(bad)?;
    let mean: f64 = m.trim().parse().map_err(|_| bad())?;
    let var: f64 = v.trim().parse().map_err(|_| bad())?;
    if !(var > 0.0) || !mean.is_finite() {
        return Err(bad());
    }
    Ok(GaussianMeasure::new(mean, var))
}

fn load_observation(cfg: &RunConfig, path: &Path) -> Result<(Trajectory, Sampling)> {
    let traj = Trajectory::load(path)?;
    let est = cfg.estimation()?;
    Ok(match est.observation {
        Observation::Continuous => (traj, Sampling::Continuous),
        Observation::Discrete { delta } => (traj.subsample(delta)?, Sampling::Discrete),
    })
}

fn write_curve(path: &Path, header: &str, xs: &[f64], rows: impl Fn(f64) -> Vec<Option<f64>>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for &x in xs {
        let cols: Vec<String> = std::iter::once(fmt_f64(x))
            .chain(rows(x).into_iter().map(|v| v.map(fmt_f64).unwrap_or_default()))
            .collect();
        writeln!(f, "{}", cols.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Writes `basis.json` and `basis_samples.csv`.
pub fn cmd_basis(cfg: &RunConfig, source: &BasisSource, out: &Path) -> Result<OrthoBasis> {
    let order = cfg.estimation()?.order;
    let moments = match source {
        BasisSource::Analytic(measure) => analytic_moments(*measure, 2 * order)?,
        BasisSource::Trajectory(path) => {
            let (traj, sampling) = load_observation(cfg, path)?;
            empirical_moments(&traj, 2 * order, sampling)?
        }
    };
    let basis = build_basis(&moments, order)?;
    write_json(&out.join("basis.json"), &basis.dump())?;
    let header = std::iter::once("x".to_string())
        .chain((0..=order).map(|k| format!("psi_{k}")))
        .collect::<Vec<_>>()
        .join(",");
    let xs = cfg.output.curve.nodes()?;
    write_curve(&out.join("basis_samples.csv"), &header, &xs, |x| {
        basis.eval_all(x).into_iter().map(Some).collect()
    })?;
    Ok(basis)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    #[serde(flatten)]
    pub estimate: crate::gmm::EstimateDump,
    pub beta_tilde: Vec<f64>,
    pub sigma: f64,
    pub sigma_source: SigmaSource,
    pub projection_active: bool,
    pub condition_estimate: f64,
    /// `||W'_hat - W'||` in `L^2(rho)` when the true interaction is known.
    pub l2_error: Option<f64>,
}

/// Runs the estimator and writes `moments.json`, `basis.json`, `system.json`,
/// `estimate.json` and `kernel_curve.csv`.
pub fn cmd_estimate(cfg: &RunConfig, trajectory: &Path, out: &Path) -> Result<EstimateReport> {
    let est = cfg.estimation()?;
    let (traj, sampling) = load_observation(cfg, trajectory)?;
    let sigma = match est.sigma {
        SigmaSource::Given { value } => value,
        SigmaSource::QuadraticVariation => quadratic_variation_sigma(&traj)?,
    };
    let estimator = EstimatorConfig {
        order: est.order,
        sigma,
        admissible: est.admissible.clone(),
        sampling,
    };
    let run = estimate_interaction(&traj, &cfg.confining()?, &estimator)?;
    write_json(&out.join("moments.json"), &run.moments)?;
    write_json(&out.join("basis.json"), &run.basis.dump())?;
    write_json(&out.join("system.json"), &run.system.dump())?;

    let truth = cfg.interaction.clone();
    let l2_error = match &truth {
        Some(w) => {
            let quad = est
                .quadrature
                .clone()
                .unwrap_or_else(|| QuadratureSpec::gaussian(0.0, 0.5));
            let rule = quad.rule()?;
            Some(rule.l2_norm(|x| run.estimate.eval(x) - w.derivative(x)))
        }
        None => None,
    };
    let report = EstimateReport {
        estimate: run.estimate.dump("basis.json"),
        beta_tilde: run.beta_tilde.iter().copied().collect(),
        sigma,
        sigma_source: est.sigma.clone(),
        projection_active: run.projection_active,
        condition_estimate: run.system.condition_estimate,
        l2_error,
    };
    write_json(&out.join("estimate.json"), &report)?;
    let xs = cfg.output.curve.nodes()?;
    write_curve(&out.join("kernel_curve.csv"), "x,w_hat,w_true", &xs, |x| {
        vec![Some(run.estimate.eval(x)), truth.as_ref().map(|w| w.derivative(x))]
    })?;
    Ok(report)
}

/// Runs the configured rate study and writes one CSV per estimand plus
/// `rate_summary.json`.
pub fn cmd_convergence(cfg: &RunConfig, out: &Path) -> Result<Vec<RateResult>> {
    let conv = cfg
        .convergence
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no `convergence` section".into()))?;
    let results = match &conv.self_test {
        Some(t) => vec![injected_power_law(&conv.grid, t.exponent, conv.seeds)?],
        None => {
            let est = cfg.estimation()?;
            let sigma = match est.sigma {
                SigmaSource::Given { value } => value,
                SigmaSource::QuadraticVariation => {
                    return Err(Error::InvalidConfig(
                        "convergence studies need a given sigma".into(),
                    ))
                }
            };
            let sampling = match est.observation {
                Observation::Continuous => Sampling::Continuous,
                Observation::Discrete { .. } => {
                    return Err(Error::InvalidConfig(
                        "convergence studies use continuous observation".into(),
                    ))
                }
            };
            if conv.estimands.is_empty() {
                return Err(Error::InvalidConfig("convergence.estimands is empty".into()));
            }
            let reference = conv.reference.clone().unwrap_or_else(RateReference::ornstein_uhlenbeck);
            let quadrature = est.quadrature.clone().unwrap_or(QuadratureSpec::ExactDensity {
                measure: reference.measure,
                half_width_sd: crate::quadrature::DEFAULT_HALF_WIDTH_SD,
                nodes: crate::quadrature::DEFAULT_NODES,
            });
            let exp = RateExperiment {
                simulation: cfg.simulation()?.clone(),
                confining: cfg.confining()?,
                interaction: cfg.interaction()?,
                estimator: EstimatorConfig {
                    order: est.order,
                    sigma,
                    admissible: est.admissible.clone(),
                    sampling,
                },
                axis: conv.axis,
                grid: conv.grid.clone(),
                seeds: conv.seeds,
                estimands: conv.estimands.clone(),
                reference,
                quadrature,
            };
            rate_study(&exp)?
        }
    };
    for r in &results {
        r.write_csv(&out.join(format!("rate_{}.csv", r.estimand)))?;
    }
    write_json(&out.join("rate_summary.json"), &results)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = r#"{
        "simulation": {"N": 5, "T": 2.0, "h": 0.01, "sigma": 1.0, "seed": 1},
        "confining": {"family": "quadratic", "a": 1.0},
        "interaction": {"family": "quadratic", "a": 1.0},
        "estimation": {"K": 2, "sigma": {"source": "given", "value": 1.0}}
    }"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = RunConfig::from_json(OU).unwrap();
        let est = cfg.estimation.unwrap();
        assert_eq!(est.order, 2);
        assert_eq!(est.admissible, AdmissibleSet::EuclideanBall { radius: 100.0 });
        assert_eq!(est.observation, Observation::Continuous);
        assert_eq!(cfg.output.curve, CurveGrid::default());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let typo = OU.replace("\"seed\": 1", "\"seed\": 1, \"sede\": 2");
        assert!(matches!(RunConfig::from_json(&typo), Err(Error::InvalidConfig(_))));
        let top = OU.replacen('{', "{\"extra\": 1,", 1);
        assert!(RunConfig::from_json(&top).is_err());
    }

    #[test]
    fn incommensurate_delta_is_a_config_error() {
        let bad = OU.replace(
            "\"K\": 2,",
            "\"K\": 2, \"observation\": {\"mode\": \"discrete\", \"delta\": 0.015},",
        );
        let err = RunConfig::from_json(&bad).unwrap_err();
        assert!(matches!(err, Error::IncommensurateDelta { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn analytic_spec_parsing() {
        assert_eq!(parse_analytic("gaussian:0,0.5").unwrap(), GaussianMeasure::new(0.0, 0.5));
        assert!(parse_analytic("gaussian:0").is_err());
        assert!(parse_analytic("gaussian:0,-1").is_err());
        assert!(parse_analytic("laplace:0,1").is_err());
    }
}
