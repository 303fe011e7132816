//! Actor-critic training with a learned Lagrange multiplier.
//!
//! Critic: `V(t, x) = (x - w)^2 e^{-theta2 tau} - theta1 e^{theta0 tau} - (w - z)^2`
//! with `tau = T - t` (or `- theta1 (e^{theta0 tau} - 1)` for [`CriticForm::Corrected`]).
//!
//! Actor: `Q(p) = -phi0 (x - w) + e^{phi1/2 + phi2 tau / 2} h'(1 - p)`.
//!
//! Each episode samples one path, then takes one semi-gradient step on the
//! critic and one policy-gradient step on the actor, both scaled by
//! `l(j) = j^{-decay}`. Every `m` episodes `w` moves against the gap between
//! the recent mean terminal wealth and the target.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::choquet::{BuiltinDistortion, DistortionFn};
use crate::closedform::MarketParams;
use crate::error::{invalid, Error, Result};
use crate::market::{simulate_sampled, RunningReward, SimConfig, WealthPath};
use crate::policy::{LocationScalePolicy, RegularizerMode};

pub type Vec3 = [f64; 3];

/// Window used for the summary statistics of a run.
pub const SUMMARY_WINDOW: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticForm {
    /// `-theta1 e^{theta0 tau}`; misses the terminal condition by `theta1`.
    #[default]
    Exponential,
    /// `-theta1 (e^{theta0 tau} - 1)`; exact at `t = T`.
    Corrected,
}

impl CriticForm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exponential => "exponential",
            Self::Corrected => "corrected",
        }
    }
}

impl fmt::Display for CriticForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriticForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Self::Exponential),
            "corrected" => Ok(Self::Corrected),
            other => Err(invalid(format!("unknown critic form `{other}` (expected exponential or corrected)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticParams {
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl CriticParams {
    pub fn new(theta0: f64, theta1: f64, theta2: f64) -> Self {
        Self { theta0, theta1, theta2 }
    }

    pub fn to_array(self) -> Vec3 {
        [self.theta0, self.theta1, self.theta2]
    }

    pub fn from_array(a: Vec3) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Default for CriticParams {
    fn default() -> Self {
        Self::new(1.0, 0.1, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorParams {
    pub phi0: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl ActorParams {
    pub fn new(phi0: f64, phi1: f64, phi2: f64) -> Self {
        Self { phi0, phi1, phi2 }
    }

    pub fn to_array(self) -> Vec3 {
        [self.phi0, self.phi1, self.phi2]
    }

    pub fn from_array(a: Vec3) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// `S(t) = e^{phi1/2 + phi2 (T - t)/2}`.
    pub fn scale(&self, t: f64, horizon: f64) -> f64 {
        (0.5 * self.phi1 + 0.5 * self.phi2 * (horizon - t)).exp()
    }
}

impl Default for ActorParams {
    fn default() -> Self {
        Self::new(0.5, 0.0, 1.0)
    }
}

fn is_finite3(a: &Vec3) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Hyper-parameters and problem data of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub m: usize,
    pub alpha_theta: f64,
    pub alpha_phi: f64,
    pub alpha_w: f64,
    pub decay: f64,
    pub lambda: f64,
    pub mode: RegularizerMode,
    pub h: BuiltinDistortion,
    pub horizon: f64,
    pub steps: usize,
    pub x0: f64,
    pub target: f64,
    pub seed: u64,
    pub critic_form: CriticForm,
    pub init_theta: CriticParams,
    pub init_phi: ActorParams,
    /// Initial multiplier; `None` starts at the target.
    pub init_w: Option<f64>,
    /// Rescale each raw gradient to at most this Euclidean norm.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// Daily steps over one year, `K = 20000`, `m = 10`, rates `0.01` with
    /// `j^{-0.51}` decay, and `lambda = 0.01` (plain) or `0.1` (log).
    pub fn standard(mode: RegularizerMode, h: BuiltinDistortion) -> Self {
        Self {
            episodes: 20_000,
            m: 10,
            alpha_theta: 0.01,
            alpha_phi: 0.01,
            alpha_w: 0.01,
            decay: 0.51,
            lambda: default_lambda(mode),
            mode,
            h,
            horizon: 1.0,
            steps: 252,
            x0: 1.0,
            target: 1.4,
            seed: 0,
            critic_form: CriticForm::Exponential,
            init_theta: CriticParams::default(),
            init_phi: ActorParams::default(),
            init_w: None,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.m == 0 || self.steps == 0 {
            return Err(invalid("episodes, m and steps must be at least 1"));
        }
        for (name, v) in [("alpha_theta", self.alpha_theta), ("alpha_phi", self.alpha_phi), ("alpha_w", self.alpha_w)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.decay >= 0.0) || !(self.lambda >= 0.0) || !(self.horizon > 0.0) {
            return Err(invalid("decay and lambda must be nonnegative and the horizon positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(invalid(format!("gradient clip must be positive, got {c}")));
            }
        }
        let finite = [self.x0, self.target, self.init_w.unwrap_or(0.0)].iter().all(|v| v.is_finite())
            && is_finite3(&self.init_theta.to_array())
            && is_finite3(&self.init_phi.to_array());
        if !finite {
            return Err(invalid("initial values must be finite"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn distortion(&self) -> DistortionFn {
        self.h.into()
    }

    /// `l(j) = j^{-decay}` for episode `j >= 1`.
    pub fn rate_decay(&self, j: usize) -> f64 {
        (j as f64).powf(-self.decay)
    }
}

pub fn default_lambda(mode: RegularizerMode) -> f64 {
    match mode {
        RegularizerMode::Plain => 0.01,
        RegularizerMode::Log => 0.1,
    }
}

pub fn critic_value(theta: &CriticParams, form: CriticForm, t: f64, x: f64, w: f64, z: f64, horizon: f64) -> f64 {
    let tau = horizon - t;
    let tail = match form {
        CriticForm::Exponential => (theta.theta0 * tau).exp(),
        CriticForm::Corrected => (theta.theta0 * tau).exp_m1(),
    };
    (x - w).powi(2) * (-theta.theta2 * tau).exp() - theta.theta1 * tail - (w - z).powi(2)
}

/// `∂V/∂theta`.
pub fn critic_grad(theta: &CriticParams, form: CriticForm, t: f64, x: f64, w: f64, horizon: f64) -> Vec3 {
    let tau = horizon - t;
    let e0 = (theta.theta0 * tau).exp();
    let tail = match form {
        CriticForm::Exponential => e0,
        CriticForm::Corrected => (theta.theta0 * tau).exp_m1(),
    };
    [-theta.theta1 * tau * e0, -tail, -tau * (x - w).powi(2) * (-theta.theta2 * tau).exp()]
}

pub fn actor_policy(
    phi: &ActorParams,
    t: f64,
    x: f64,
    w: f64,
    horizon: f64,
    h: &DistortionFn,
) -> Result<LocationScalePolicy> {
    LocationScalePolicy::new(h.clone(), -phi.phi0 * (x - w), phi.scale(t, horizon))
}

/// Running regularizer `p(t; phi)` of the actor and `∂p/∂phi`.
pub fn regularizer_schedule(
    phi: &ActorParams,
    t: f64,
    horizon: f64,
    h: &DistortionFn,
    mode: RegularizerMode,
) -> (f64, Vec3) {
    let tau = horizon - t;
    match mode {
        RegularizerMode::Plain => {
            let p = phi.scale(t, horizon) * h.l2_norm_sq();
            (p, [0.0, 0.5 * p, 0.5 * tau * p])
        }
        RegularizerMode::Log => {
            let p = 0.5 * phi.phi1 + 0.5 * phi.phi2 * tau + 2.0 * h.l2_norm().ln();
            (p, [0.0, 0.5, 0.5 * tau])
        }
    }
}

/// `∂/∂phi log density` of the actor's policy at action `u`.
pub fn actor_log_density_grad(
    phi: &ActorParams,
    t: f64,
    x: f64,
    w: f64,
    u: f64,
    horizon: f64,
    h: &DistortionFn,
) -> Result<Vec3> {
    let policy = actor_policy(phi, t, x, w, horizon, h)?;
    let (dm, ds) = policy.log_density_grad(u)?;
    let s = policy.scale;
    let tau = horizon - t;
    Ok([-(x - w) * dm, 0.5 * s * ds, 0.5 * tau * s * ds])
}

/// One observed step `(t_i, x_i) -> (t_{i+1}, x_{i+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub t0: f64,
    pub x0: f64,
    pub t1: f64,
    pub x1: f64,
}

/// `delta = V(t1, x1) - V(t0, x0) - lambda p(t0) (t1 - t0)`.
pub fn td_error(theta: &CriticParams, phi: &ActorParams, tr: &Transition, w: f64, cfg: &TrainConfig) -> f64 {
    let h = cfg.distortion();
    let (p, _) = regularizer_schedule(phi, tr.t0, cfg.horizon, &h, cfg.mode);
    td_error_with(theta, cfg.critic_form, tr, w, cfg.target, cfg.horizon, cfg.lambda * p)
}

fn td_error_with(
    theta: &CriticParams,
    form: CriticForm,
    tr: &Transition,
    w: f64,
    z: f64,
    horizon: f64,
    lambda_p: f64,
) -> f64 {
    critic_value(theta, form, tr.t1, tr.x1, w, z, horizon)
        - critic_value(theta, form, tr.t0, tr.x0, w, z, horizon)
        - lambda_p * (tr.t1 - tr.t0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeGradients {
    pub grad_theta: Vec3,
    pub grad_phi: Vec3,
    /// Actor terms dropped because the replayed action fell outside the policy support.
    pub skipped: usize,
}

/// Critic and actor gradients of one episode:
///
/// ```text
/// grad_theta = -Σ_i ∂V/∂theta(t_i, x_i) delta_i
/// grad_phi   =  Σ_i { ∂/∂phi log pi(u_i | t_i, x_i) delta_i - lambda ∂p/∂phi(t_i) dt }
/// ```
///
/// `delta_i` treats the target `V(t_{i+1}, x_{i+1})` as a constant.
pub fn episode_gradients(
    episode: &WealthPath,
    theta: &CriticParams,
    phi: &ActorParams,
    w: f64,
    cfg: &TrainConfig,
) -> Result<EpisodeGradients> {
    let h = cfg.distortion();
    let mut out = EpisodeGradients::default();
    for i in 0..episode.len() {
        let tr = Transition {
            t0: episode.times[i],
            x0: episode.states[i],
            t1: episode.times[i + 1],
            x1: episode.states[i + 1],
        };
        let dt = tr.t1 - tr.t0;
        let (p, dp) = regularizer_schedule(phi, tr.t0, cfg.horizon, &h, cfg.mode);
        let delta = td_error_with(theta, cfg.critic_form, &tr, w, cfg.target, cfg.horizon, cfg.lambda * p);

        let dv = critic_grad(theta, cfg.critic_form, tr.t0, tr.x0, w, cfg.horizon);
        for k in 0..3 {
            out.grad_theta[k] -= dv[k] * delta;
            out.grad_phi[k] -= cfg.lambda * dp[k] * dt;
        }
        match actor_log_density_grad(phi, tr.t0, tr.x0, w, episode.actions[i], cfg.horizon, &h) {
            Ok(dl) => {
                for (g, d) in out.grad_phi.iter_mut().zip(dl) {
                    *g += d * delta;
                }
            }
            Err(Error::OutsideSupport { .. }) => out.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `w - alpha_w (mean(batch) - z)`.
pub fn lagrange_update(w: f64, terminal_wealths: &[f64], alpha_w: f64, z: f64) -> Result<f64> {
    if terminal_wealths.is_empty() {
        return Err(invalid("Lagrange update needs at least one terminal wealth"));
    }
    let mean = terminal_wealths.iter().sum::<f64>() / terminal_wealths.len() as f64;
    Ok(w - alpha_w * (mean - z))
}

/// Sample one episode under the actor.
pub fn simulate_episode<R: rand::Rng + ?Sized>(
    phi: &ActorParams,
    w: f64,
    cfg: &TrainConfig,
    market: &MarketParams,
    rng: &mut R,
) -> Result<WealthPath> {
    let sim = SimConfig::new(cfg.steps, cfg.horizon, 1, cfg.seed)?;
    let h = cfg.distortion();
    let horizon = cfg.horizon;
    let schedule = |t: f64, x: f64| actor_policy(phi, t, x, w, horizon, &h);
    simulate_sampled(&schedule, market, &sim, cfg.x0, RunningReward { lambda: cfg.lambda, mode: cfg.mode }, rng)
}

/// Parameters in force after an episode's updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub terminal_wealth: f64,
    pub theta: CriticParams,
    pub phi: ActorParams,
    pub w: f64,
}

/// Mean, variance and Sharpe ratio `(mean - 1)/sqrt(variance)` of a window of
/// terminal wealths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
    pub sharpe: f64,
    pub n: usize,
}

impl Summary {
    /// Uses the unbiased (`n - 1`) variance.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let variance = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
        Self { mean, variance, sharpe: sharpe_ratio(mean, variance), n }
    }
}

pub fn sharpe_ratio(mean: f64, variance: f64) -> f64 {
    (mean - 1.0) / variance.sqrt()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpisodeRecord>,
    pub skipped_terms: usize,
    pub clipped_updates: usize,
}

impl TrainLog {
    pub fn terminal_wealths(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.terminal_wealth).collect()
    }

    /// Statistics of the last `window` terminal wealths (fewer if the run is shorter).
    pub fn summary(&self, window: usize) -> Summary {
        self.summary_at(self.records.len(), window)
    }

    /// Statistics of the `window` terminal wealths ending at episode `upto`.
    pub fn summary_at(&self, upto: usize, window: usize) -> Summary {
        let upto = upto.min(self.records.len());
        let lo = upto.saturating_sub(window);
        let v: Vec<f64> = self.records[lo..upto].iter().map(|r| r.terminal_wealth).collect();
        Summary::of(&v)
    }

    /// Means of consecutive blocks of `block` terminal wealths; a trailing
    /// partial block is dropped.
    pub fn block_means(&self, block: usize) -> Vec<f64> {
        self.records
            .chunks_exact(block.max(1))
            .map(|c| c.iter().map(|r| r.terminal_wealth).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn last(&self) -> Option<&EpisodeRecord> {
        self.records.last()
    }
}

fn clip(g: &mut Vec3, max_norm: Option<f64>) -> bool {
    let Some(c) = max_norm else { return false };
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > c {
        let k = c / norm;
        g.iter_mut().for_each(|v| *v *= k);
        true
    } else {
        false
    }
}

/// Outcome of one episode: the record appended to the log and the raw
/// (unscaled, post-clipping) gradients that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStep {
    pub record: EpisodeRecord,
    pub gradients: EpisodeGradients,
    /// `l(j)` applied to this episode's updates.
    pub rate_decay: f64,
}

/// Stepwise actor-critic loop. [`train`] drives it to completion.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    market: MarketParams,
    rng: ChaCha8Rng,
    theta: CriticParams,
    phi: ActorParams,
    w: f64,
    episode: usize,
    batch: Vec<f64>,
    skipped_terms: usize,
    clipped_updates: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, market: MarketParams) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            theta: cfg.init_theta,
            phi: cfg.init_phi,
            w: cfg.init_w.unwrap_or(cfg.target),
            episode: 0,
            batch: Vec::with_capacity(cfg.m),
            skipped_terms: 0,
            clipped_updates: 0,
            cfg,
            market,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn theta(&self) -> CriticParams {
        self.theta
    }

    pub fn phi(&self) -> ActorParams {
        self.phi
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn is_done(&self) -> bool {
        self.episode >= self.cfg.episodes
    }

    /// Sample one episode and apply the critic, actor and (every `m`
    /// episodes) multiplier updates.
    pub fn step(&mut self) -> Result<EpisodeStep> {
        let j = self.episode + 1;
        let cfg = &self.cfg;
        let path = simulate_episode(&self.phi, self.w, cfg, &self.market, &mut self.rng)
            .map_err(|e| Error::NonFiniteParameter { episode: j, detail: format!("simulation failed: {e}") })?;
        let terminal = path.terminal();
        let mut g = episode_gradients(&path, &self.theta, &self.phi, self.w, cfg)?;
        self.skipped_terms += g.skipped;
        let clipped_theta = clip(&mut g.grad_theta, cfg.grad_clip);
        let clipped_phi = clip(&mut g.grad_phi, cfg.grad_clip);
        self.clipped_updates += usize::from(clipped_theta) + usize::from(clipped_phi);

        let l = cfg.rate_decay(j);
        let mut th = self.theta.to_array();
        let mut ph = self.phi.to_array();
        for k in 0..3 {
            th[k] -= cfg.alpha_theta * l * g.grad_theta[k];
            ph[k] -= cfg.alpha_phi * l * g.grad_phi[k];
        }
        let theta = CriticParams::from_array(th);
        let phi = ActorParams::from_array(ph);

        let mut w = self.w;
        self.batch.push(terminal);
        if j.is_multiple_of(cfg.m) {
            w = lagrange_update(w, &self.batch, cfg.alpha_w, cfg.target)?;
            self.batch.clear();
        }

        let scales_ok = [0.0, cfg.horizon].iter().all(|&t| {
            let s = phi.scale(t, cfg.horizon);
            s > 0.0 && s.is_finite()
        });
        if !(terminal.is_finite() && w.is_finite() && is_finite3(&th) && is_finite3(&ph) && scales_ok) {
            return Err(Error::NonFiniteParameter {
                episode: j,
                detail: format!("x_T = {terminal}, theta = {th:?}, phi = {ph:?}, w = {w}"),
            });
        }
        self.theta = theta;
        self.phi = phi;
        self.w = w;
        self.episode = j;
        Ok(EpisodeStep {
            record: EpisodeRecord { episode: j, terminal_wealth: terminal, theta, phi, w },
            gradients: g,
            rate_decay: l,
        })
    }
}

/// Run the actor-critic loop for `cfg.episodes` episodes.
pub fn train(cfg: &TrainConfig, market: &MarketParams) -> Result<TrainLog> {
    let mut trainer = Trainer::new(cfg.clone(), *market)?;
    let mut log = TrainLog { records: Vec::with_capacity(cfg.episodes), ..TrainLog::default() };
    while !trainer.is_done() {
        log.records.push(trainer.step()?.record);
    }
    log.skipped_terms = trainer.skipped_terms;
    log.clipped_updates = trainer.clipped_updates;
    Ok(log)
}
