//! Discounted-wealth simulator.
//!
//! Wealth follows `dX = sigma u (rho dt + dW)` for a single action `u`, or the
//! exploratory dynamics `dX = rho sigma mu_t dt + sigma sqrt(mu_t^2 + s_t^2) dW`
//! when the action is replaced by its distribution. Both are stepped with
//! Euler–Maruyama on a uniform grid.
//!
//! Every path owns one ChaCha8 stream (`seed`, stream = path index), so results
//! are bit-identical regardless of how paths are spread across threads.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closedform::{optimal_policy, EmvSpec, MarketParams};
use crate::error::{invalid, Result};
use crate::policy::{LocationScalePolicy, RegularizerMode};

/// Time grid and Monte Carlo size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(steps: usize, horizon: f64, n_paths: usize, seed: u64) -> Result<Self> {
        if steps == 0 || n_paths == 0 {
            return Err(invalid("steps and n_paths must be positive"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { steps, horizon, n_paths, seed })
    }

    /// Grid with step `dt`; `dt` must divide the horizon.
    pub fn with_step(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(invalid(format!("time step {dt} does not divide horizon {horizon}")));
        }
        Self::new(steps as usize, horizon, n_paths, seed)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }
}

/// One Euler step of the discounted wealth: `x + sigma u (rho dt + sqrt(dt) xi)`.
pub fn step(x: f64, u: f64, market: &MarketParams, dt: f64, xi: f64) -> f64 {
    x + market.sigma * u * (market.rho() * dt + dt.sqrt() * xi)
}

/// A (possibly state-feedback) schedule of exploratory policies.
pub trait PolicySchedule: Sync {
    fn policy(&self, t: f64, x: f64) -> Result<LocationScalePolicy>;
}

impl<F> PolicySchedule for F
where
    F: Fn(f64, f64) -> Result<LocationScalePolicy> + Sync,
{
    fn policy(&self, t: f64, x: f64) -> Result<LocationScalePolicy> {
        self(t, x)
    }
}

/// The closed-form optimal policy of `spec` at multiplier `w`.
#[derive(Debug, Clone)]
pub struct OptimalSchedule {
    pub spec: EmvSpec,
    pub market: MarketParams,
    pub w: f64,
}

impl PolicySchedule for OptimalSchedule {
    fn policy(&self, t: f64, x: f64) -> Result<LocationScalePolicy> {
        optimal_policy(t, x, &self.spec, &self.market, self.w)
    }
}

/// The classical (degenerate) control `-(rho/sigma)(x - w)`.
#[derive(Debug, Clone)]
pub struct ClassicalSchedule {
    pub spec: EmvSpec,
    pub market: MarketParams,
    pub w: f64,
}

impl PolicySchedule for ClassicalSchedule {
    fn policy(&self, _t: f64, x: f64) -> Result<LocationScalePolicy> {
        let u = -(self.market.rho() / self.market.sigma) * (x - self.w);
        LocationScalePolicy::new(self.spec.h.clone(), u, 0.0)
    }
}

/// Weight and form of the running regularizer reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningReward {
    pub lambda: f64,
    pub mode: RegularizerMode,
}

impl RunningReward {
    pub fn none() -> Self {
        Self { lambda: 0.0, mode: RegularizerMode::Plain }
    }

    fn increment(&self, policy: &LocationScalePolicy, dt: f64) -> Result<f64> {
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(self.lambda * policy.regularizer_value(self.mode)? * dt)
    }
}

/// A simulated path on the grid `t_0..t_N`.
///
/// `actions[i]` is the action applied on `[t_i, t_{i+1})`: the sampled action
/// for single-action paths, the policy mean for exploratory paths.
/// `running_regularizer` is `lambda * sum_i p(t_i) dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub running_regularizer: f64,
}

impl WealthPath {
    fn with_capacity(n: usize, x0: f64) -> Self {
        let mut states = Vec::with_capacity(n + 1);
        states.push(x0);
        let mut times = Vec::with_capacity(n + 1);
        times.push(0.0);
        Self { times, states, actions: Vec::with_capacity(n), running_regularizer: 0.0 }
    }

    pub fn terminal(&self) -> f64 {
        *self.states.last().expect("a path always holds x0")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// The random stream of path `path` under `seed`.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Euler path of the exploratory dynamics using each policy's mean and variance.
pub fn simulate_exploratory<S, R>(
    schedule: &S,
    market: &MarketParams,
    sim: &SimConfig,
    x0: f64,
    reward: RunningReward,
    rng: &mut R,
) -> Result<WealthPath>
where
    S: PolicySchedule + ?Sized,
    R: Rng + ?Sized,
{
    let dt = sim.dt();
    let sqrt_dt = dt.sqrt();
    let (rho, sigma) = (market.rho(), market.sigma);
    let mut path = WealthPath::with_capacity(sim.steps, x0);
    let mut x = x0;
    for i in 0..sim.steps {
        let t = sim.time(i);
        let policy = schedule.policy(t, x)?;
        let (mean, var) = policy.moments();
        path.running_regularizer += reward.increment(&policy, dt)?;
        let xi = standard_normal(rng);
        x += rho * sigma * mean * dt + sigma * (mean * mean + var).sqrt() * sqrt_dt * xi;
        path.actions.push(mean);
        path.times.push(sim.time(i + 1));
        path.states.push(x);
    }
    Ok(path)
}

/// Euler path of the single-action dynamics with actions drawn from the
/// schedule by inverse-transform sampling.
pub fn simulate_sampled<S, R>(
    schedule: &S,
    market: &MarketParams,
    sim: &SimConfig,
    x0: f64,
    reward: RunningReward,
    rng: &mut R,
) -> Result<WealthPath>
where
    S: PolicySchedule + ?Sized,
    R: Rng + ?Sized,
{
    let dt = sim.dt();
    let mut path = WealthPath::with_capacity(sim.steps, x0);
    let mut x = x0;
    for i in 0..sim.steps {
        let t = sim.time(i);
        let policy = schedule.policy(t, x)?;
        path.running_regularizer += reward.increment(&policy, dt)?;
        let u = policy.sample(uniform_open(rng))?;
        x = step(x, u, market, dt, standard_normal(rng));
        path.actions.push(u);
        path.times.push(sim.time(i + 1));
        path.states.push(x);
    }
    Ok(path)
}

/// Which dynamics a Monte Carlo run integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    Exploratory,
    SampledActions,
}

/// Terminal wealth and pathwise objective of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub terminal: f64,
    pub objective: f64,
}

/// Simulate `sim.n_paths` independent paths in parallel and return the
/// pathwise objective `(X_T - w)^2 - lambda ∫ p dt - (w - z)^2` of each,
/// in path order.
pub fn simulate_outcomes<S: PolicySchedule + ?Sized>(
    schedule: &S,
    spec: &EmvSpec,
    market: &MarketParams,
    sim: &SimConfig,
    w: f64,
    dynamics: Dynamics,
) -> Result<Vec<PathOutcome>> {
    let reward = RunningReward { lambda: spec.lambda, mode: spec.mode };
    let penalty = (w - spec.target).powi(2);
    (0..sim.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(sim.seed, i);
            let path = match dynamics {
                Dynamics::Exploratory => simulate_exploratory(schedule, market, sim, spec.x0, reward, &mut rng)?,
                Dynamics::SampledActions => simulate_sampled(schedule, market, sim, spec.x0, reward, &mut rng)?,
            };
            let terminal = path.terminal();
            Ok(PathOutcome { terminal, objective: (terminal - w).powi(2) - path.running_regularizer - penalty })
        })
        .collect()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let nf = n as f64;
        let mean = samples.iter().sum::<f64>() / nf;
        let var = if n > 1 { samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
        Self { estimate: mean, std_error: (var / nf).sqrt(), n }
    }

    /// |estimate - target| in units of standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.estimate - target).abs() / self.std_error
    }
}

/// Monte Carlo estimate of the regularized objective under `schedule`, using
/// the exploratory dynamics.
pub fn mc_objective<S: PolicySchedule + ?Sized>(
    schedule: &S,
    spec: &EmvSpec,
    market: &MarketParams,
    sim: &SimConfig,
    w: f64,
) -> Result<McEstimate> {
    let out = simulate_outcomes(schedule, spec, market, sim, w, Dynamics::Exploratory)?;
    let objectives: Vec<f64> = out.iter().map(|o| o.objective).collect();
    Ok(McEstimate::from_samples(&objectives))
}
