//! Experiment configuration read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use agingpop::config_space::{Basis, MarkedConfiguration, GROUND_BUDGET, KAPPA_BUDGET};
use agingpop::habitat::{DensityFamily, DepartureModel, Dynamics, Habitat, Tolerances, Window};
use agingpop::mark_space::SigmaLadder;
use agingpop::test_functions::Theta;
use agingpop::verify::InitialLaw;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub habitat: HabitatSpec,
    pub model: DepartureModel,
    /// Age-dependent model used by the model-generic verification checks.
    #[serde(default)]
    pub secondary_model: Option<DepartureModel>,
    pub theta: ThetaSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HabitatSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub density: DensityFamily,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSpec {
    pub triples: Vec<[usize; 3]>,
    #[serde(default = "one")]
    pub sigma_bar: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub n_paths: usize,
    pub times: Vec<f64>,
    /// Multiplies the Monte Carlo budgets of the verification suites.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub budgets: Budgets,
    /// Probe points per axis (locations) and along ages for the rate bounds check.
    #[serde(default = "default_probe")]
    pub probe_points: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    pub ground: usize,
    pub kappa: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { ground: GROUND_BUDGET, kappa: KAPPA_BUDGET }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    Empty,
    /// A configuration file, relative paths taken from the config's directory.
    Dirac { path: PathBuf },
    Stationary,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn default_probe() -> usize {
    9
}

/// A parsed and validated config together with its source text.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub text: String,
    pub path: PathBuf,
    pub dynamics: Dynamics,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        let dynamics = config.validate()?;
        Ok(Loaded { config, text, path: path.to_path_buf(), dynamics })
    }

    pub fn basis(&self) -> Basis {
        Basis::new(self.dynamics.habitat.window().clone()).expect("validated window")
    }

    pub fn ladder(&self) -> SigmaLadder {
        SigmaLadder::new(self.config.theta.sigma_bar).expect("validated ladder")
    }

    pub fn theta(&self) -> Theta {
        Theta::new(&self.basis(), &self.ladder(), &self.config.theta.triples).expect("validated triples")
    }

    pub fn initial_law(&self) -> Result<InitialLaw> {
        Ok(match &self.config.initial {
            InitialSpec::Empty => InitialLaw::empty(),
            InitialSpec::Dirac { path } => {
                let path = match self.path.parent() {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let c = MarkedConfiguration::read(&path)
                    .with_context(|| format!("initial.path: reading {}", path.display()))?;
                c.check_dim(self.dynamics.habitat.dim()).context("initial.path")?;
                InitialLaw::dirac(c)
            }
            InitialSpec::Stationary => InitialLaw::stationary(&self.dynamics).context("initial.law")?,
        })
    }
}

impl ExperimentConfig {
    /// Checks every field and builds the dynamics.
    pub fn validate(&self) -> Result<Dynamics> {
        let window = Window::new(self.habitat.lower.clone(), self.habitat.upper.clone())
            .context("habitat.lower/habitat.upper")?;
        let habitat = Habitat::new(window, self.habitat.density.clone()).context("habitat.density")?;
        check_model(&self.model, &habitat, self.run.probe_points).context("model")?;
        if let Some(m) = &self.secondary_model {
            check_model(m, &habitat, self.run.probe_points).context("secondary_model")?;
        }
        self.run.tolerances.validate().context("run.tolerances")?;
        SigmaLadder::new(self.theta.sigma_bar).context("theta.sigma_bar")?;
        if self.theta.triples.iter().flatten().any(|&i| i == 0) {
            bail!("theta.triples: indices start at 1");
        }
        if self.run.n_paths == 0 {
            bail!("run.n_paths: must be positive");
        }
        if self.run.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || self.run.times.windows(2).any(|w| w[1] < w[0])
        {
            bail!("run.times: must be finite, nonnegative and sorted");
        }
        if !(self.run.scale.is_finite() && self.run.scale > 0.0) {
            bail!("run.scale: must be positive, got {}", self.run.scale);
        }
        if self.run.budgets.ground == 0 || self.run.budgets.kappa == 0 {
            bail!("run.budgets: must be positive");
        }
        if self.run.probe_points < 2 {
            bail!("run.probe_points: need at least 2");
        }
        Ok(Dynamics::new(habitat, self.model.clone()).with_tolerances(self.run.tolerances))
    }
}

/// Validates the model and checks `m₀ ≤ m(x, α) ≤ m_*` on a probe grid of the
/// window times ages in `[0, 20/m_*]`.
pub fn check_model(model: &DepartureModel, habitat: &Habitat, probe: usize) -> Result<()> {
    model.validate()?;
    let (m0, m_star) = (model.m_zero(), model.m_star());
    let w = habitat.window();
    let age_max = if m_star > 0.0 { 20.0 / m_star } else { 20.0 };
    let grid = |lo: f64, hi: f64| (0..probe).map(move |i| lo + (hi - lo) * i as f64 / (probe - 1) as f64);
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in 0..w.dim() {
        points = points
            .into_iter()
            .flat_map(|p| {
                grid(w.lower[axis], w.upper[axis]).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    for x in &points {
        for age in grid(0.0, age_max) {
            let m = model.rate(x, age);
            if !(m.is_finite() && m0 - 1e-12 <= m && m <= m_star + 1e-12) {
                bail!("rate m({x:?}, {age}) = {m} outside [m0, m*] = [{m0}, {m_star}]");
            }
        }
    }
    Ok(())
}
