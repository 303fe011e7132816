//! Experiment configuration: a TOML file with nested sections, overridable
//! from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use choquet_emv::closedform::{EmvSpec, MarketParams};
use choquet_emv::market::{Dynamics, SimConfig};
use choquet_emv::rl::{default_lambda, CriticForm, TrainConfig};
use choquet_emv::{BuiltinDistortion, RegularizerMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub market: MarketSection,
    pub problem: ProblemSection,
    pub training: TrainingSection,
    pub simulation: SimulationSection,
    pub figures: FiguresSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub horizon: f64,
    pub dt: f64,
    pub x0: f64,
    pub target: f64,
    pub modes: Vec<RegularizerMode>,
    pub distortions: Vec<BuiltinDistortion>,
    /// Exploration weight for every mode; unset means 0.01 (plain) and 0.1 (log).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub episodes: usize,
    pub m: usize,
    /// Critic and actor learning rate.
    pub alpha: f64,
    /// Multiplier learning rate; unset means `alpha`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_w: Option<f64>,
    pub decay: f64,
    pub critic_form: CriticForm,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Trailing episodes summarized in the table.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub paths: usize,
    pub dynamics: Dynamics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiguresSection {
    pub block: usize,
    pub lambdas: Vec<f64>,
    pub sweep_distortion: BuiltinDistortion,
}

impl Default for MarketSection {
    fn default() -> Self {
        Self { mu: vec![-0.5, -0.3, -0.1, 0.1, 0.3, 0.5], sigma: vec![0.1, 0.2, 0.3, 0.4], r: 0.02 }
    }
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            dt: 1.0 / 252.0,
            x0: 1.0,
            target: 1.4,
            modes: RegularizerMode::ALL.to_vec(),
            distortions: vec![BuiltinDistortion::GaussianScore],
            lambda: None,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            m: 10,
            alpha: 0.01,
            alpha_w: None,
            decay: 0.51,
            critic_form: CriticForm::Exponential,
            grad_clip: None,
            window: 200,
        }
    }
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { paths: 100_000, dynamics: Dynamics::Exploratory }
    }
}

impl Default for FiguresSection {
    fn default() -> Self {
        Self { block: 100, lambdas: vec![0.001, 0.01, 0.1, 1.0], sweep_distortion: BuiltinDistortion::GaussianScore }
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mu: f64,
    pub sigma: f64,
    pub mode: RegularizerMode,
    pub h: BuiltinDistortion,
    pub lambda: f64,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.market.mu.is_empty() && !self.market.sigma.is_empty(), "mu and sigma lists must be non-empty");
        ensure!(!self.problem.modes.is_empty(), "at least one mode is required");
        ensure!(!self.problem.distortions.is_empty(), "at least one distortion is required");
        for &mu in &self.market.mu {
            for &sigma in &self.market.sigma {
                MarketParams::new(mu, sigma, self.market.r)?;
            }
        }
        self.steps()?;
        ensure!(self.training.window > 0, "summary window must be positive");
        ensure!(self.simulation.paths > 0, "paths must be positive");
        ensure!(self.figures.block > 0, "block size must be positive");
        for cell in self.cells() {
            self.train_config(&cell, 0).validate()?;
        }
        Ok(())
    }

    /// Number of time steps; `dt` must divide the horizon.
    pub fn steps(&self) -> Result<usize> {
        Ok(SimConfig::with_step(self.problem.dt, self.problem.horizon, 1, 0)?.steps)
    }

    pub fn lambda_for(&self, mode: RegularizerMode) -> f64 {
        self.problem.lambda.unwrap_or_else(|| default_lambda(mode))
    }

    /// Grid cells in (h, sigma, mu, mode) order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &h in &self.problem.distortions {
            for &sigma in &self.market.sigma {
                for &mu in &self.market.mu {
                    for &mode in &self.problem.modes {
                        out.push(Cell { mu, sigma, mode, h, lambda: self.lambda_for(mode) });
                    }
                }
            }
        }
        out
    }

    /// The single cell of a one-point grid.
    pub fn single_cell(&self) -> Result<Cell> {
        let cells = self.cells();
        if cells.len() != 1 {
            bail!(
                "this command runs one cell but the grid has {} (mu: {}, sigma: {}, modes: {}, distortions: {})",
                cells.len(),
                self.market.mu.len(),
                self.market.sigma.len(),
                self.problem.modes.len(),
                self.problem.distortions.len()
            );
        }
        Ok(cells[0])
    }

    pub fn market(&self, cell: &Cell) -> Result<MarketParams> {
        Ok(MarketParams::new(cell.mu, cell.sigma, self.market.r)?)
    }

    pub fn spec(&self, cell: &Cell) -> Result<EmvSpec> {
        let p = &self.problem;
        Ok(EmvSpec::new(p.horizon, cell.lambda, p.target, p.x0, cell.mode, cell.h.into())?)
    }

    pub fn train_config(&self, cell: &Cell, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            episodes: t.episodes,
            m: t.m,
            alpha_theta: t.alpha,
            alpha_phi: t.alpha,
            alpha_w: t.alpha_w.unwrap_or(t.alpha),
            decay: t.decay,
            lambda: cell.lambda,
            horizon: self.problem.horizon,
            steps: self.steps().unwrap_or(0),
            x0: self.problem.x0,
            target: self.problem.target,
            seed,
            critic_form: t.critic_form,
            grad_clip: t.grad_clip,
            ..TrainConfig::standard(cell.mode, cell.h)
        }
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        Ok(SimConfig::with_step(self.problem.dt, self.problem.horizon, self.simulation.paths, seed)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML, excluding
    /// the output directory.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(&Config { output_dir: None, ..self.clone() }).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Seed of one grid cell: SHA-256 over the base seed and the cell's
/// coordinates, truncated to 64 bits.
pub fn cell_seed(base: u64, mu: f64, sigma: f64, mode: RegularizerMode, h: BuiltinDistortion) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(mu.to_bits().to_le_bytes());
    hasher.update(sigma.to_bits().to_le_bytes());
    hasher.update(mode.name().as_bytes());
    hasher.update([0]);
    hasher.update(h.name().as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
