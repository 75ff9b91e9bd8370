//! Experiment configuration read from TOML.
//!
//! ```toml
//! horizon = 100
//! runs = 100
//! seed = 7
//! output = "out"
//!
//! [model]
//! preset = "example1"      # or inline a, b, c, d, q, r, p, mu1, p1
//!
//! [nonlinearity]
//! preset = "deadzone"      # parameters below are optional
//! width = 3.0
//!
//! [inputs]
//! mean = 0.0
//! var = 2.0
//!
//! [algorithms]
//! enabled = ["qgsf", "qgss", "ekf", "eks", "pf", "ps"]
//! l1 = 10
//! l2 = 10
//! max_components = 10
//! particles = 500
//!
//! [grid]
//! times = [25, 50, 75, 100]
//! coordinate = 1
//! ground_truth = true
//! ```
//!
//! Matrices are row-major nested arrays. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::WienerModel;
use crate::nonlinearity::PiecewiseNonlinearity;
use crate::qgsf::FilterOptions;
use crate::simulate::InputSpec;

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Qgsf,
    Qgss,
    Ekf,
    Eks,
    Pf,
    Ps,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Qgsf,
        Algorithm::Qgss,
        Algorithm::Ekf,
        Algorithm::Eks,
        Algorithm::Pf,
        Algorithm::Ps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Qgsf => "qgsf",
            Algorithm::Qgss => "qgss",
            Algorithm::Ekf => "ekf",
            Algorithm::Eks => "eks",
            Algorithm::Pf => "pf",
            Algorithm::Ps => "ps",
        }
    }

    /// Smoothers estimate `x_t | y_{1:N}`, filters `x_t | y_{1:t}`.
    pub fn is_smoother(self) -> bool {
        matches!(self, Algorithm::Qgss | Algorithm::Eks | Algorithm::Ps)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Algorithm> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Comma-separated algorithm list, duplicates removed, order kept.
pub fn parse_algorithms(list: &str) -> Result<Vec<Algorithm>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let a: Algorithm = part.parse()?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty algorithm list".into()));
    }
    Ok(out)
}

/// Uniform evaluation grid with `points ≥ 2` nodes including both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Grid> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || points < 2 {
            return Err(Error::Config(format!("invalid grid {lo}:{hi}:{points}")));
        }
        Ok(Grid { lo, hi, points })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points).map(|i| self.lo + i as f64 * h).collect()
    }
}

impl FromStr for Grid {
    type Err = Error;

    /// `LO:HI:POINTS`.
    fn from_str(s: &str) -> Result<Grid> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("grid must be LO:HI:POINTS, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let points: usize = parts[2].trim().parse().map_err(|_| bad())?;
        Grid::new(lo, hi, points)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: Option<String>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<Vec<f64>>>,
    pub d: Option<Vec<Vec<f64>>>,
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub mu1: Option<Vec<f64>>,
    pub p1: Option<Vec<Vec<f64>>>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("`{name}` must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

impl ModelSpec {
    /// The preset (if any) with every inline field overriding it.
    pub fn resolve(&self) -> Result<WienerModel> {
        let base = match &self.preset {
            Some(name) => {
                Some(WienerModel::preset(name).ok_or_else(|| Error::Config(format!("unknown model preset `{name}`")))?)
            }
            None => None,
        };
        let need = |name: &str| Error::Config(format!("model needs `{name}` without a preset"));
        let mat = |name: &str, v: &Option<Vec<Vec<f64>>>, fallback: Option<&DMatrix<f64>>| match v {
            Some(rows) => matrix(name, rows),
            None => fallback.cloned().ok_or_else(|| need(name)),
        };
        let model = WienerModel {
            a: mat("a", &self.a, base.as_ref().map(|m| &m.a))?,
            b: mat("b", &self.b, base.as_ref().map(|m| &m.b))?,
            c: mat("c", &self.c, base.as_ref().map(|m| &m.c))?,
            d: mat("d", &self.d, base.as_ref().map(|m| &m.d))?,
            q: mat("q", &self.q, base.as_ref().map(|m| &m.q))?,
            r: self.r.or(base.as_ref().map(|m| m.r)).ok_or_else(|| need("r"))?,
            p: self.p.or(base.as_ref().map(|m| m.p)).ok_or_else(|| need("p"))?,
            mu1: match &self.mu1 {
                Some(v) => DVector::from_vec(v.clone()),
                None => base.as_ref().map(|m| m.mu1.clone()).ok_or_else(|| need("mu1"))?,
            },
            p1: mat("p1", &self.p1, base.as_ref().map(|m| &m.p1))?,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub preset: Option<String>,
    /// Deadzone half-width.
    pub width: Option<f64>,
    /// Saturation limits.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Quantizer.
    pub levels: Option<usize>,
    pub step: Option<f64>,
}

impl NonlinearitySpec {
    pub fn resolve(&self) -> Result<PiecewiseNonlinearity> {
        let name = self
            .preset
            .as_deref()
            .ok_or_else(|| Error::Config("nonlinearity needs a `preset`".into()))?;
        let nl = match name {
            "deadzone" if self.width.is_some() => PiecewiseNonlinearity::deadzone(self.width.unwrap()),
            "saturation" if self.lo.is_some() || self.hi.is_some() => {
                PiecewiseNonlinearity::saturation(self.lo.unwrap_or(-3.0), self.hi.unwrap_or(3.0))
            }
            "quantizer" if self.levels.is_some() || self.step.is_some() => {
                PiecewiseNonlinearity::quantizer(self.levels.unwrap_or(3), self.step.unwrap_or(1.0))
            }
            _ => PiecewiseNonlinearity::preset(name)
                .ok_or_else(|| Error::Config(format!("unknown nonlinearity preset `{name}`")))?,
        };
        let report = nl.validate();
        if !report.is_valid() {
            return Err(Error::InvalidNonlinearity(format!("{:?}", report.violations)));
        }
        Ok(nl)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub mean: f64,
    pub var: f64,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig { mean: 0.0, var: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    pub enabled: Vec<Algorithm>,
    pub l1: usize,
    pub l2: usize,
    pub max_components: usize,
    pub particles: usize,
    /// Backward-simulated trajectories for the particle smoother.
    pub smoother_trajectories: usize,
    pub ground_truth_particles: usize,
    pub ground_truth_trajectories: usize,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            enabled: vec![Algorithm::Qgsf, Algorithm::Qgss, Algorithm::Ekf, Algorithm::Eks],
            l1: 10,
            l2: 10,
            max_components: 10,
            particles: 500,
            smoother_trajectories: 500,
            ground_truth_particles: crate::baselines::particle::GROUND_TRUTH_PARTICLES,
            ground_truth_trajectories: 2000,
        }
    }
}

impl AlgorithmConfig {
    pub fn filter_options(&self) -> FilterOptions {
        FilterOptions {
            l1: self.l1,
            l2: self.l2,
            max_components: self.max_components,
        }
    }
}

/// Density output. Nothing is emitted when `times` is empty.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub points: usize,
    pub times: Vec<usize>,
    /// 1-based state coordinate.
    pub coordinate: usize,
    /// Run the reference particle filter and smoother for distances.
    pub ground_truth: bool,
    /// Monte Carlo runs (from index 0) that emit densities.
    pub runs: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lo: None,
            hi: None,
            points: 400,
            times: Vec::new(),
            coordinate: 1,
            ground_truth: false,
            runs: 1,
        }
    }
}

impl GridConfig {
    /// The fixed grid, when both ends are given.
    pub fn fixed(&self) -> Result<Option<Grid>> {
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => Grid::new(lo, hi, self.points).map(Some),
            (None, None) => Ok(None),
            _ => Err(Error::Config("grid needs both `lo` and `hi` or neither".into())),
        }
    }

    pub fn set_fixed(&mut self, g: Grid) {
        self.lo = Some(g.lo);
        self.hi = Some(g.hi);
        self.points = g.points;
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub nonlinearity: NonlinearitySpec,
    #[serde(default)]
    pub inputs: InputConfig,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub algorithms: AlgorithmConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_horizon() -> usize {
    100
}

fn default_runs() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A config with every field resolved into model objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: WienerModel,
    pub nl: PiecewiseNonlinearity,
}

impl Experiment {
    pub fn input_spec(&self) -> InputSpec {
        InputSpec::iid(self.model.m(), self.config.inputs.mean, self.config.inputs.var)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// A preset example with the defaults above.
    pub fn preset(name: &str) -> Result<ExperimentConfig> {
        if WienerModel::preset(name).is_none() {
            return Err(Error::Config(format!("unknown model preset `{name}`")));
        }
        Self::parse(&format!(
            "[model]\npreset = \"{name}\"\n[nonlinearity]\npreset = \"{name}\"\n"
        ))
    }

    /// Resolves presets and checks every setting.
    pub fn resolve(&self) -> Result<Experiment> {
        let model = self.model.resolve()?;
        let nl = self.nonlinearity.resolve()?;
        let a = &self.algorithms;
        if self.horizon == 0 || self.runs == 0 {
            return Err(Error::Config("`horizon` and `runs` must be positive".into()));
        }
        if a.enabled.is_empty() {
            return Err(Error::Config("no algorithm enabled".into()));
        }
        if a.l1 == 0 || a.l2 == 0 || a.max_components == 0 {
            return Err(Error::Config(
                "quadrature orders and `max_components` must be positive".into(),
            ));
        }
        if a.particles < 2
            || a.ground_truth_particles < 2
            || a.smoother_trajectories == 0
            || a.ground_truth_trajectories == 0
        {
            return Err(Error::Config("particle counts too small".into()));
        }
        if !(self.inputs.var >= 0.0 && self.inputs.mean.is_finite()) {
            return Err(Error::Config("input variance must be non-negative".into()));
        }
        let g = &self.grid;
        g.fixed()?;
        if g.points < 2 {
            return Err(Error::Config("grid needs at least 2 points".into()));
        }
        if g.coordinate == 0 || g.coordinate > model.n() {
            return Err(Error::Config(format!("grid coordinate must be in 1..={}", model.n())));
        }
        if let Some(t) = g.times.iter().find(|&&t| t == 0 || t > self.horizon) {
            return Err(Error::Config(format!("grid time {t} outside 1..={}", self.horizon)));
        }
        Ok(Experiment {
            config: self.clone(),
            model,
            nl,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_same_map(a: &PiecewiseNonlinearity, b: &PiecewiseNonlinearity) {
        for i in -40..=40 {
            let r = i as f64 * 0.25;
            assert_eq!(a.evaluate(r).unwrap(), b.evaluate(r).unwrap(), "r = {r}");
        }
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::preset("example2").unwrap();
        assert_eq!(c.horizon, 100);
        assert_eq!(c.runs, 1);
        assert_eq!(c.algorithms.l1, 10);
        assert_eq!(c.algorithms.max_components, 10);
        let e = c.resolve().unwrap();
        assert_eq!(e.model, WienerModel::example2());
        assert_same_map(&e.nl, &PiecewiseNonlinearity::abs_square());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            ExperimentConfig::parse("bogus = 1\n[model]\npreset=\"example1\"\n[nonlinearity]\npreset=\"example1\"\n");
        assert!(matches!(err, Err(Error::Config(_))));
        let err = ExperimentConfig::parse("[model]\npreset=\"example1\"\nfoo=2\n[nonlinearity]\npreset=\"example1\"\n");
        assert!(matches!(err, Err(Error::Config(_))));
        let err = ExperimentConfig::parse(
            "[model]\npreset=\"example1\"\n[nonlinearity]\npreset=\"example1\"\n[algorithms]\nenabled=[\"ukf\"]\n",
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn inline_model_overrides_preset() {
        let c = ExperimentConfig::parse(
            "[model]\npreset = \"example1\"\np = 0.25\na = [[0.5]]\n[nonlinearity]\npreset = \"deadzone\"\nwidth = 1.5\n",
        )
        .unwrap();
        let e = c.resolve().unwrap();
        assert_eq!(e.model.p, 0.25);
        assert_eq!(e.model.a[(0, 0)], 0.5);
        assert_eq!(e.model.b, WienerModel::example1().b);
        assert_same_map(&e.nl, &PiecewiseNonlinearity::deadzone(1.5));
    }

    #[test]
    fn fully_inline_model() {
        let c = ExperimentConfig::parse(
            r#"
[model]
a = [[0.9, 0.1], [-0.1, 0.7]]
b = [[1.5], [2.5]]
c = [[1.1, 0.3]]
d = [[1.2]]
q = [[1.0, 0.0], [0.0, 1.0]]
r = 0.5
p = 0.5
mu1 = [1.0, 1.0]
p1 = [[1.0, 0.0], [0.0, 1.0]]
[nonlinearity]
preset = "example2"
"#,
        )
        .unwrap();
        assert_eq!(c.resolve().unwrap().model, WienerModel::example2());
    }

    #[test]
    fn inline_model_without_preset_needs_every_field() {
        let c = ExperimentConfig::parse("[model]\na = [[0.5]]\n[nonlinearity]\npreset = \"square\"\n").unwrap();
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let c = ExperimentConfig::parse(
            "[model]\npreset = \"example2\"\na = [[1.0, 0.0], [0.0]]\n[nonlinearity]\npreset = \"example2\"\n",
        )
        .unwrap();
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn settings_are_checked() {
        let mut c = ExperimentConfig::preset("example1").unwrap();
        c.grid.times = vec![101];
        assert!(c.resolve().is_err());
        c.grid.times = vec![100];
        c.grid.coordinate = 2;
        assert!(c.resolve().is_err());
        c.grid.coordinate = 1;
        c.grid.lo = Some(1.0);
        assert!(c.resolve().is_err());
        c.grid.hi = Some(2.0);
        assert!(c.resolve().is_ok());
        c.runs = 0;
        assert!(c.resolve().is_err());
    }

    #[test]
    fn grid_parsing() {
        let g: Grid = "-5:5:11".parse().unwrap();
        assert_eq!(g.step(), 1.0);
        assert_eq!(g.nodes()[0], -5.0);
        assert_eq!(g.nodes()[10], 5.0);
        for bad in ["1:2", "2:1:10", "0:1:1", "a:1:3", "0:1:3:4"] {
            assert!(bad.parse::<Grid>().is_err(), "{bad}");
        }
    }

    #[test]
    fn algorithm_lists() {
        assert_eq!(
            parse_algorithms("qgsf, PF,qgsf").unwrap(),
            vec![Algorithm::Qgsf, Algorithm::Pf]
        );
        assert!(parse_algorithms("qgsf,ukf").is_err());
        assert!(parse_algorithms("").is_err());
    }
}
