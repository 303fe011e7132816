//! Analytic solutions of the exploratory mean-variance problem.
//!
//! Everything here is exact: value functions live in the quadratic family
//! `A(t)(x - w)^2 + F(t)` and policy improvement maps that family to itself,
//! so no PDE is ever solved numerically.

use serde::{Deserialize, Serialize};

use crate::choquet::DistortionFn;
use crate::error::{invalid, Error, Result};
use crate::policy::{LocationScalePolicy, RegularizerMode};
use crate::quad;

/// Market coefficients of the risky asset and the risk-free rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
}

impl MarketParams {
    pub fn new(mu: f64, sigma: f64, r: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("volatility must be positive, got {sigma}")));
        }
        if !mu.is_finite() || !r.is_finite() {
            return Err(invalid("market parameters must be finite"));
        }
        Ok(Self { mu, sigma, r })
    }

    /// Sharpe ratio `(mu - r) / sigma`.
    pub fn rho(&self) -> f64 {
        (self.mu - self.r) / self.sigma
    }

    fn rho_nonzero(&self) -> Result<f64> {
        let rho = self.rho();
        if rho == 0.0 {
            Err(Error::DegenerateSharpe)
        } else {
            Ok(rho)
        }
    }
}

/// Problem data: horizon, exploration weight, target, initial wealth,
/// regularizer mode and distortion.
#[derive(Debug, Clone)]
pub struct EmvSpec {
    pub horizon: f64,
    pub lambda: f64,
    pub target: f64,
    pub x0: f64,
    pub mode: RegularizerMode,
    pub h: DistortionFn,
}

impl EmvSpec {
    pub fn new(
        horizon: f64,
        lambda: f64,
        target: f64,
        x0: f64,
        mode: RegularizerMode,
        h: DistortionFn,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("exploration weight must be positive, got {lambda}")));
        }
        if !target.is_finite() || !x0.is_finite() {
            return Err(invalid("target and initial wealth must be finite"));
        }
        Ok(Self { horizon, lambda, target, x0, mode, h })
    }

    pub fn with_mode(&self, mode: RegularizerMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.horizon, lambda, self.target, self.x0, self.mode, self.h.clone())
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(invalid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.horizon - t)
    }
}

/// Lagrange multiplier `w = (z e^{rho^2 T} - x0) / (e^{rho^2 T} - 1)`, which
/// makes the optimal terminal mean equal the target.
pub fn lagrange_multiplier(spec: &EmvSpec, market: &MarketParams) -> Result<f64> {
    let rho = market.rho_nonzero()?;
    let growth = (rho * rho * spec.horizon).exp_m1();
    // z + (z - x0) / (e^{rho^2 T} - 1), algebraically identical and stable for small rho
    Ok(spec.target + (spec.target - spec.x0) / growth)
}

/// Classical (non-exploratory) optimal control and value: `(u*, Vcl)`.
pub fn classical_solution(t: f64, x: f64, spec: &EmvSpec, market: &MarketParams, w: f64) -> Result<(f64, f64)> {
    let tau = spec.check_time(t)?;
    let rho = market.rho();
    let u = -(rho / market.sigma) * (x - w);
    let v = (x - w).powi(2) * (-rho * rho * tau).exp() - (w - spec.target).powi(2);
    Ok((u, v))
}

/// Value and partial derivatives of a value function at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueDerivatives {
    pub v: f64,
    pub v_t: f64,
    pub v_x: f64,
    pub v_xx: f64,
}

fn exploration_constant(spec: &EmvSpec, market: &MarketParams, rho: f64) -> f64 {
    spec.lambda.powi(2) * spec.h.l2_norm_sq() / (4.0 * rho * rho * market.sigma.powi(2))
}

/// Value function under the `Phi_h` regularizer.
pub fn value_plain(t: f64, x: f64, spec: &EmvSpec, market: &MarketParams, w: f64) -> Result<f64> {
    value_plain_derivatives(t, x, spec, market, w).map(|d| d.v)
}

pub fn value_plain_derivatives(
    t: f64,
    x: f64,
    spec: &EmvSpec,
    market: &MarketParams,
    w: f64,
) -> Result<ValueDerivatives> {
    let tau = spec.check_time(t)?;
    let rho = market.rho_nonzero()?;
    let r2 = rho * rho;
    let c = exploration_constant(spec, market, rho);
    let decay = (-r2 * tau).exp();
    let y = x - w;
    Ok(ValueDerivatives {
        v: y * y * decay - c * (r2 * tau).exp_m1() - (w - spec.target).powi(2),
        v_t: r2 * y * y * decay + c * r2 * (r2 * tau).exp(),
        v_x: 2.0 * y * decay,
        v_xx: 2.0 * decay,
    })
}

/// Value function under the `log Phi_h` regularizer.
pub fn value_log(t: f64, x: f64, spec: &EmvSpec, market: &MarketParams, w: f64) -> Result<f64> {
    value_log_derivatives(t, x, spec, market, w).map(|d| d.v)
}

pub fn value_log_derivatives(
    t: f64,
    x: f64,
    spec: &EmvSpec,
    market: &MarketParams,
    w: f64,
) -> Result<ValueDerivatives> {
    let tau = spec.check_time(t)?;
    let rho = market.rho_nonzero()?;
    let r2 = rho * rho;
    let (lam, big_t) = (spec.lambda, spec.horizon);
    let log_term = (lam * spec.h.l2_norm_sq() / (2.0 * std::f64::consts::E * market.sigma.powi(2))).ln();
    let decay = (-r2 * tau).exp();
    let y = x - w;
    let v = y * y * decay + 0.25 * lam * r2 * (big_t * big_t - t * t)
        - 0.5 * lam * (r2 * big_t + log_term) * tau
        - (w - spec.target).powi(2);
    let v_t = r2 * y * y * decay - 0.5 * lam * r2 * t + 0.5 * lam * (r2 * big_t + log_term);
    Ok(ValueDerivatives { v, v_t, v_x: 2.0 * y * decay, v_xx: 2.0 * decay })
}

/// Value function for `spec.mode`.
pub fn value(t: f64, x: f64, spec: &EmvSpec, market: &MarketParams, w: f64) -> Result<f64> {
    match spec.mode {
        RegularizerMode::Plain => value_plain(t, x, spec, market, w),
        RegularizerMode::Log => value_log(t, x, spec, market, w),
    }
}

/// Residual of `V_t - (rho^2/2) V_x^2 / V_xx - lambda^2 ||h'||^2 / (2 sigma^2 V_xx)`.
pub fn hjb_residual_plain(d: &ValueDerivatives, spec: &EmvSpec, market: &MarketParams) -> f64 {
    let r2 = market.rho().powi(2);
    d.v_t
        - 0.5 * r2 * d.v_x * d.v_x / d.v_xx
        - spec.lambda.powi(2) * spec.h.l2_norm_sq() / (2.0 * market.sigma.powi(2) * d.v_xx)
}

/// Residual of the log-regularized HJB after the inner minimization:
/// `V_t - (rho^2/2) V_x^2 / V_xx + lambda/2 - (lambda/2) log(lambda ||h'||^2 / (sigma^2 V_xx))`.
pub fn hjb_residual_log(d: &ValueDerivatives, spec: &EmvSpec, market: &MarketParams) -> f64 {
    let r2 = market.rho().powi(2);
    let lam = spec.lambda;
    d.v_t - 0.5 * r2 * d.v_x * d.v_x / d.v_xx + 0.5 * lam
        - 0.5 * lam * (lam * spec.h.l2_norm_sq() / (market.sigma.powi(2) * d.v_xx)).ln()
}

/// Scale `S(t)` of the optimal exploratory policy for `spec.mode`.
pub fn optimal_scale(t: f64, spec: &EmvSpec, market: &MarketParams) -> Result<f64> {
    let tau = spec.check_time(t)?;
    let r2 = market.rho().powi(2);
    let s2 = market.sigma.powi(2);
    Ok(match spec.mode {
        RegularizerMode::Plain => spec.lambda / (2.0 * s2) * (r2 * tau).exp(),
        RegularizerMode::Log => (spec.lambda / (2.0 * s2 * spec.h.l2_norm_sq())).sqrt() * (0.5 * r2 * tau).exp(),
    })
}

/// Optimal exploratory policy at `(t, x)`: mean `-(rho/sigma)(x - w)` and the
/// mode's optimal scale.
pub fn optimal_policy(t: f64, x: f64, spec: &EmvSpec, market: &MarketParams, w: f64) -> Result<LocationScalePolicy> {
    let scale = optimal_scale(t, spec, market)?;
    let location = -(market.rho() / market.sigma) * (x - w);
    LocationScalePolicy::new(spec.h.clone(), location, scale)
}

/// Closed-form exploration cost: `lambda^2 ||h'||^2 (e^{rho^2 T} - 1) / (4 rho^2 sigma^2)`
/// for `Phi_h`, `lambda T / 2` for `log Phi_h`.
pub fn exploration_cost(spec: &EmvSpec, market: &MarketParams) -> Result<f64> {
    match spec.mode {
        RegularizerMode::Plain => {
            let rho = market.rho_nonzero()?;
            Ok(exploration_constant(spec, market, rho) * (rho * rho * spec.horizon).exp_m1())
        }
        RegularizerMode::Log => Ok(0.5 * spec.lambda * spec.horizon),
    }
}

/// Exploration cost from its definition: the regularized optimal value plus
/// the accumulated regularizer reward, minus the classical value, all at
/// `(0, x0)`. The time integral is done by Gauss–Legendre quadrature.
pub fn exploration_cost_by_quadrature(spec: &EmvSpec, market: &MarketParams) -> Result<f64> {
    let w = lagrange_multiplier(spec, market)?;
    let x0 = spec.x0;
    let reward = |t: f64| optimal_policy(t, x0, spec, market, w)?.regularizer_value(spec.mode);
    reward(0.0)?;
    let integral = quad::gauss_legendre(|t| reward(t).unwrap_or(f64::NAN), 0.0, spec.horizon);
    if !integral.is_finite() {
        return Err(Error::DivergentIntegral("accumulated regularizer reward".into()));
    }
    let (_, v_cl) = classical_solution(0.0, x0, spec, market, w)?;
    Ok(value(0.0, x0, spec, market, w)? + spec.lambda * integral - v_cl)
}

/// Ratio of the `Phi_h` cost to the `log Phi_h` cost:
/// `(lambda ||h'||^2 / (2 sigma^2)) (e^{rho^2 T} - 1) / (rho^2 T)`.
pub fn cost_ratio(spec: &EmvSpec, market: &MarketParams) -> Result<f64> {
    let rho = market.rho_nonzero()?;
    let x = rho * rho * spec.horizon;
    Ok(spec.lambda * spec.h.l2_norm_sq() / (2.0 * market.sigma.powi(2)) * x.exp_m1() / x)
}

/// Mean optimal wealth `(x0 - w) e^{-rho^2 t} + w`.
pub fn expected_wealth(t: f64, spec: &EmvSpec, market: &MarketParams, w: f64) -> Result<f64> {
    spec.check_time(t)?;
    let r2 = market.rho().powi(2);
    Ok((spec.x0 - w) * (-r2 * t).exp() + w)
}

/// `(e^{rate tau} - 1) / rate`, continuous at `rate = 0`.
fn exp_integral(rate: f64, tau: f64) -> f64 {
    let x = rate * tau;
    if x == 0.0 {
        tau
    } else {
        x.exp_m1() / rate
    }
}

/// Feedback policy with mean `gain (x - w)` and scale `scale e^{scale_rate (T - t)}`.
///
/// This family is closed under policy improvement; the optimal policies of
/// both modes belong to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPolicy {
    pub gain: f64,
    pub scale: f64,
    pub scale_rate: f64,
}

impl FeedbackPolicy {
    pub fn optimal(spec: &EmvSpec, market: &MarketParams) -> Self {
        let rho = market.rho();
        let r2 = rho * rho;
        let s2 = market.sigma.powi(2);
        let (scale, scale_rate) = match spec.mode {
            RegularizerMode::Plain => (spec.lambda / (2.0 * s2), r2),
            RegularizerMode::Log => ((spec.lambda / (2.0 * s2 * spec.h.l2_norm_sq())).sqrt(), 0.5 * r2),
        };
        Self { gain: -rho / market.sigma, scale, scale_rate }
    }

    pub fn location(&self, x: f64, w: f64) -> f64 {
        self.gain * (x - w)
    }

    pub fn scale_at(&self, t: f64, horizon: f64) -> f64 {
        self.scale * (self.scale_rate * (horizon - t)).exp()
    }

    pub fn at(&self, t: f64, x: f64, w: f64, spec: &EmvSpec) -> Result<LocationScalePolicy> {
        spec.check_time(t)?;
        LocationScalePolicy::new(spec.h.clone(), self.location(x, w), self.scale_at(t, spec.horizon))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RunningTerm {
    /// `lambda c ||h'||^2 e^{d u}` integrated over u in [0, tau]
    Plain { coef: f64, rate: f64 },
    /// `lambda (log(c ||h'||^2) + d u)` integrated over u in [0, tau]
    Log { level: f64, slope: f64 },
}

/// `V(t, x) = A(t) (x - w)^2 + F(t)` with `A(t) = a_scale e^{a_rate (T - t)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticValueFn {
    pub horizon: f64,
    pub w: f64,
    pub target: f64,
    pub a_scale: f64,
    pub a_rate: f64,
    diffusion_coef: f64,
    diffusion_rate: f64,
    running: RunningTerm,
}

impl QuadraticValueFn {
    /// Value function of a feedback policy, from the Feynman–Kac equation
    /// `V_t + rho sigma M V_x + (sigma^2/2)(M^2 + Var) V_xx - lambda p = 0`
    /// with terminal value `(x - w)^2 - (w - z)^2`.
    pub fn of_policy(policy: &FeedbackPolicy, spec: &EmvSpec, market: &MarketParams, w: f64) -> Result<Self> {
        let (rho, sigma) = (market.rho(), market.sigma);
        let a = policy.gain;
        let a_rate = 2.0 * rho * sigma * a + sigma * sigma * a * a;
        let h2 = spec.h.l2_norm_sq();
        let running = match spec.mode {
            RegularizerMode::Plain => {
                RunningTerm::Plain { coef: spec.lambda * policy.scale * h2, rate: policy.scale_rate }
            }
            RegularizerMode::Log => {
                if !(policy.scale > 0.0) {
                    return Err(Error::DegeneratePolicy);
                }
                RunningTerm::Log {
                    level: spec.lambda * (policy.scale * h2).ln(),
                    slope: spec.lambda * policy.scale_rate,
                }
            }
        };
        Ok(Self {
            horizon: spec.horizon,
            w,
            target: spec.target,
            a_scale: 1.0,
            a_rate,
            diffusion_coef: sigma * sigma * h2 * policy.scale * policy.scale,
            diffusion_rate: a_rate + 2.0 * policy.scale_rate,
            running,
        })
    }

    /// A quadratic value function with only its curvature specified (`F` is
    /// the terminal constant). Enough for policy improvement, which reads
    /// `V_x / V_xx` and `V_xx` only.
    pub fn from_curvature(spec: &EmvSpec, w: f64, a_scale: f64, a_rate: f64) -> Self {
        Self {
            horizon: spec.horizon,
            w,
            target: spec.target,
            a_scale,
            a_rate,
            diffusion_coef: 0.0,
            diffusion_rate: 0.0,
            running: RunningTerm::Plain { coef: 0.0, rate: 0.0 },
        }
    }

    pub fn a(&self, t: f64) -> f64 {
        self.a_scale * (self.a_rate * (self.horizon - t)).exp()
    }

    pub fn f(&self, t: f64) -> f64 {
        let tau = self.horizon - t;
        let running = match self.running {
            RunningTerm::Plain { coef, rate } => coef * exp_integral(rate, tau),
            RunningTerm::Log { level, slope } => level * tau + 0.5 * slope * tau * tau,
        };
        -(self.w - self.target).powi(2) + self.diffusion_coef * exp_integral(self.diffusion_rate, tau) - running
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.a(t) * (x - self.w).powi(2) + self.f(t)
    }

    pub fn v_x(&self, t: f64, x: f64) -> f64 {
        2.0 * self.a(t) * (x - self.w)
    }

    pub fn v_xx(&self, t: f64) -> f64 {
        2.0 * self.a(t)
    }
}

/// Improved policy at `(t, x)`: mean `-(rho/sigma) V_x / V_xx`, scale
/// `lambda / (sigma^2 V_xx)` (plain) or `sqrt(lambda / (sigma^2 ||h'||^2 V_xx))` (log).
pub fn improvement_step(
    value: &QuadraticValueFn,
    spec: &EmvSpec,
    market: &MarketParams,
    t: f64,
    x: f64,
) -> Result<LocationScalePolicy> {
    spec.check_time(t)?;
    let a = value.a(t);
    if !(a > 0.0) {
        return Err(Error::ConvexityViolated { t, a });
    }
    let (rho, s2) = (market.rho(), market.sigma.powi(2));
    let v_xx = value.v_xx(t);
    let location = -(rho / market.sigma) * value.v_x(t, x) / v_xx;
    let scale = match spec.mode {
        RegularizerMode::Plain => spec.lambda / (s2 * v_xx),
        RegularizerMode::Log => (spec.lambda / (s2 * spec.h.l2_norm_sq() * v_xx)).sqrt(),
    };
    LocationScalePolicy::new(spec.h.clone(), location, scale)
}

/// [`improvement_step`] applied to the whole feedback family at once.
pub fn improve(value: &QuadraticValueFn, spec: &EmvSpec, market: &MarketParams) -> Result<FeedbackPolicy> {
    if !(value.a_scale > 0.0) {
        return Err(Error::ConvexityViolated { t: spec.horizon, a: value.a_scale });
    }
    let (rho, s2) = (market.rho(), market.sigma.powi(2));
    let (scale, scale_rate) = match spec.mode {
        RegularizerMode::Plain => (spec.lambda / (2.0 * s2 * value.a_scale), -value.a_rate),
        RegularizerMode::Log => {
            ((spec.lambda / (2.0 * s2 * spec.h.l2_norm_sq() * value.a_scale)).sqrt(), -0.5 * value.a_rate)
        }
    };
    Ok(FeedbackPolicy { gain: -rho / market.sigma, scale, scale_rate })
}

/// One element of a policy-iteration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyIterate {
    pub policy: FeedbackPolicy,
    pub value: QuadraticValueFn,
}

/// Policy iteration from `initial` (mean `a (x - w)`, scale `c1 e^{c2 (T - t)}`).
/// Returns `steps + 1` iterates, starting with the initial policy. The second
/// iterate onward is optimal; later steps are fixed points.
pub fn policy_iteration(
    initial: FeedbackPolicy,
    spec: &EmvSpec,
    market: &MarketParams,
    w: f64,
    steps: usize,
) -> Result<Vec<PolicyIterate>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut policy = initial;
    let mut value = QuadraticValueFn::of_policy(&policy, spec, market, w)?;
    out.push(PolicyIterate { policy, value });
    for _ in 0..steps {
        policy = improve(&value, spec, market)?;
        value = QuadraticValueFn::of_policy(&policy, spec, market, w)?;
        out.push(PolicyIterate { policy, value });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choquet::BuiltinDistortion;
    use approx::assert_relative_eq;

    fn spec(mode: RegularizerMode, lambda: f64) -> EmvSpec {
        EmvSpec::new(1.0, lambda, 1.4, 1.0, mode, DistortionFn::gaussian_score()).unwrap()
    }

    #[test]
    fn lagrange_multiplier_examples() {
        let m = MarketParams::new(0.3, 0.1, 0.02).unwrap();
        assert_relative_eq!(m.rho(), 2.8, max_relative = 1e-14);
        let w = lagrange_multiplier(&spec(RegularizerMode::Plain, 0.01), &m).unwrap();
        // z + (z - x0) / (e^{7.84} - 1), evaluated independently
        let direct = (1.4 * 7.84f64.exp() - 1.0) / (7.84f64.exp() - 1.0);
        assert_relative_eq!(w, direct, max_relative = 1e-14);
        assert!((w - 1.40016).abs() < 5e-6, "{w}");

        let mut s = spec(RegularizerMode::Plain, 0.01);
        s.target = s.x0;
        assert_relative_eq!(lagrange_multiplier(&s, &m).unwrap(), s.x0);

        let big = MarketParams::new(2.0, 0.1, 0.0).unwrap();
        assert_relative_eq!(lagrange_multiplier(&s, &big).unwrap(), s.target, max_relative = 1e-15);

        let flat = MarketParams::new(0.02, 0.2, 0.02).unwrap();
        assert_eq!(lagrange_multiplier(&s, &flat), Err(Error::DegenerateSharpe));
    }

    #[test]
    fn classical_solution_examples() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        let s = spec(RegularizerMode::Plain, 0.01);
        let (u, v) = classical_solution(0.3, 2.0, &s, &m, 2.0).unwrap();
        assert_eq!(u, 0.0);
        assert_relative_eq!(v, -(2.0f64 - 1.4).powi(2));
        let (_, v) = classical_solution(1.0, 1.1, &s, &m, 2.0).unwrap();
        assert_relative_eq!(v, 0.81 - 0.36, max_relative = 1e-14);
        let flat = MarketParams::new(0.02, 0.2, 0.02).unwrap();
        let (u, v) = classical_solution(0.2, 1.1, &s, &flat, 2.0).unwrap();
        assert_eq!(u, 0.0);
        assert_relative_eq!(v, 0.81 - 0.36, max_relative = 1e-14);
    }

    #[test]
    fn terminal_conditions() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        for mode in RegularizerMode::ALL {
            let s = spec(mode, 0.1);
            let v = value(1.0, 0.7, &s, &m, 2.5).unwrap();
            assert_relative_eq!(v, (0.7f64 - 2.5).powi(2) - (2.5f64 - 1.4).powi(2), max_relative = 1e-14);
        }
    }

    #[test]
    fn hjb_residuals_vanish() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        for (t, x) in [(0.0, 1.0), (0.4, -0.3), (0.99, 3.0)] {
            let s = spec(RegularizerMode::Plain, 0.05);
            let d = value_plain_derivatives(t, x, &s, &m, 3.0).unwrap();
            assert!(hjb_residual_plain(&d, &s, &m).abs() < 1e-12);
            let s = spec(RegularizerMode::Log, 0.05);
            let d = value_log_derivatives(t, x, &s, &m, 3.0).unwrap();
            assert!(hjb_residual_log(&d, &s, &m).abs() < 1e-12);
        }
    }

    #[test]
    fn value_time_derivatives_match_finite_differences() {
        let m = MarketParams::new(0.3, 0.25, 0.02).unwrap();
        for mode in RegularizerMode::ALL {
            let s = spec(mode, 0.2);
            let (t, x, w) = (0.37, 1.3, 2.2);
            let d = match mode {
                RegularizerMode::Plain => value_plain_derivatives(t, x, &s, &m, w).unwrap(),
                RegularizerMode::Log => value_log_derivatives(t, x, &s, &m, w).unwrap(),
            };
            let eps = 1e-5;
            let fd_t = (value(t + eps, x, &s, &m, w).unwrap() - value(t - eps, x, &s, &m, w).unwrap()) / (2.0 * eps);
            let fd_x = (value(t, x + eps, &s, &m, w).unwrap() - value(t, x - eps, &s, &m, w).unwrap()) / (2.0 * eps);
            assert_relative_eq!(d.v_t, fd_t, max_relative = 1e-8);
            assert_relative_eq!(d.v_x, fd_x, max_relative = 1e-8);
        }
    }

    #[test]
    fn value_functions_reject_zero_sharpe() {
        let flat = MarketParams::new(0.02, 0.2, 0.02).unwrap();
        assert_eq!(value_plain(0.0, 1.0, &spec(RegularizerMode::Plain, 0.1), &flat, 1.0), Err(Error::DegenerateSharpe));
        assert_eq!(value_log(0.0, 1.0, &spec(RegularizerMode::Log, 0.1), &flat, 1.0), Err(Error::DegenerateSharpe));
        assert_eq!(exploration_cost(&spec(RegularizerMode::Plain, 0.1), &flat), Err(Error::DegenerateSharpe));
        assert!(exploration_cost(&spec(RegularizerMode::Log, 0.1), &flat).is_ok());
        assert_eq!(cost_ratio(&spec(RegularizerMode::Log, 0.1), &flat), Err(Error::DegenerateSharpe));
    }

    #[test]
    fn optimal_policy_examples() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        for mode in RegularizerMode::ALL {
            let p = optimal_policy(0.5, 2.0, &spec(mode, 0.01), &m, 2.0).unwrap();
            assert_eq!(p.location, 0.0);
        }
        // sigma = 0.2, rho = 0.4 (mu = 0.1, r = 0.02)
        let p = optimal_policy(0.0, 1.0, &spec(RegularizerMode::Plain, 0.01), &m, 2.0).unwrap();
        let expected = 0.01f64.powi(2) / (4.0 * 0.2f64.powi(4)) * 0.32f64.exp();
        assert_relative_eq!(p.moments().1, expected, max_relative = 1e-13);

        let lg = |h: DistortionFn| {
            let s = EmvSpec::new(1.0, 0.1, 1.4, 1.0, RegularizerMode::Log, h).unwrap();
            optimal_policy(0.2, 1.0, &s, &m, 2.0).unwrap().moments().1
        };
        let expected = 0.1 * (0.16f64 * 0.8).exp() / (2.0 * 0.04);
        assert_relative_eq!(lg(DistortionFn::gini()), expected, max_relative = 1e-13);
        assert_relative_eq!(lg(DistortionFn::gaussian_score()), expected, max_relative = 1e-13);
    }

    #[test]
    fn exploration_cost_examples() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        assert_relative_eq!(exploration_cost(&spec(RegularizerMode::Log, 0.1), &m).unwrap(), 0.05);
        for mode in RegularizerMode::ALL {
            let s = spec(mode, 0.07);
            let by_def = exploration_cost_by_quadrature(&s, &m).unwrap();
            assert!((by_def - exploration_cost(&s, &m).unwrap()).abs() < 1e-10, "{mode}");
        }
        // leading-order scaling as lambda -> 0
        let c1 = exploration_cost(&spec(RegularizerMode::Plain, 1e-3), &m).unwrap() / 1e-6;
        let c2 = exploration_cost(&spec(RegularizerMode::Plain, 1e-4), &m).unwrap() / 1e-8;
        assert_relative_eq!(c1, c2, max_relative = 1e-12);
        let c = exploration_cost(&spec(RegularizerMode::Log, 1e-4), &m).unwrap() / 1e-4;
        assert_relative_eq!(c, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn cost_ratio_examples() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        let s = spec(RegularizerMode::Plain, 0.03);
        let ratio = cost_ratio(&s, &m).unwrap();
        let plain = exploration_cost(&s, &m).unwrap();
        let log = exploration_cost(&s.with_mode(RegularizerMode::Log), &m).unwrap();
        assert!((ratio * log - plain).abs() < 1e-12);

        // lambda ||h'||^2 = 2 sigma^2 and rho^2 T -> 0
        let sigma = 0.3;
        let tiny = MarketParams::new(0.02 + 1e-7 * sigma, sigma, 0.02).unwrap();
        let s = spec(RegularizerMode::Plain, 2.0 * sigma * sigma);
        assert_relative_eq!(cost_ratio(&s, &tiny).unwrap(), 1.0, max_relative = 1e-9);

        let m = MarketParams::new(0.02 + 0.2667 * 0.3, 0.3, 0.02).unwrap();
        let s = spec(RegularizerMode::Plain, 0.01);
        assert!(cost_ratio(&s, &m).unwrap() < 1.0);
    }

    #[test]
    fn improvement_step_examples() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        let r2 = m.rho().powi(2);
        let w = 2.5;
        for mode in RegularizerMode::ALL {
            let s = spec(mode, 0.05);
            let optimal_value = QuadraticValueFn::from_curvature(&s, w, 1.0, -r2);
            for (t, x) in [(0.0, 1.0), (0.6, 3.1)] {
                let improved = improvement_step(&optimal_value, &s, &m, t, x).unwrap();
                let best = optimal_policy(t, x, &s, &m, w).unwrap();
                assert_relative_eq!(improved.location, best.location, max_relative = 1e-14);
                assert_relative_eq!(improved.scale, best.scale, max_relative = 1e-14);

                let other = QuadraticValueFn::from_curvature(&s, w, 7.3, 0.9);
                assert_relative_eq!(
                    improvement_step(&other, &s, &m, t, x).unwrap().location,
                    best.location,
                    max_relative = 1e-14
                );
            }
        }
        let s = spec(RegularizerMode::Plain, 0.05);
        let one = QuadraticValueFn::from_curvature(&s, w, 1.0, 0.3);
        let two = QuadraticValueFn::from_curvature(&s, w, 2.0, 0.3);
        let s1 = improvement_step(&one, &s, &m, 0.2, 1.0).unwrap().scale;
        let s2 = improvement_step(&two, &s, &m, 0.2, 1.0).unwrap().scale;
        assert_relative_eq!(s2, 0.5 * s1, max_relative = 1e-15);

        let concave = QuadraticValueFn::from_curvature(&s, w, -1.0, 0.3);
        assert!(matches!(improvement_step(&concave, &s, &m, 0.2, 1.0), Err(Error::ConvexityViolated { .. })));
        assert!(matches!(improve(&concave, &s, &m), Err(Error::ConvexityViolated { .. })));
    }

    #[test]
    fn value_of_optimal_policy_is_the_closed_form() {
        let m = MarketParams::new(0.25, 0.3, 0.02).unwrap();
        for b in BuiltinDistortion::ALL {
            for mode in RegularizerMode::ALL {
                let s = EmvSpec::new(1.0, 0.08, 1.4, 1.0, mode, b.into()).unwrap();
                let w = lagrange_multiplier(&s, &m).unwrap();
                let v = QuadraticValueFn::of_policy(&FeedbackPolicy::optimal(&s, &m), &s, &m, w).unwrap();
                for (t, x) in [(0.0, 1.0), (0.3, 2.0), (0.8, -0.5), (1.0, 1.7)] {
                    let exact = value(t, x, &s, &m, w).unwrap();
                    assert!((v.value(t, x) - exact).abs() < 1e-12 * exact.abs().max(1.0), "{b} {mode} ({t},{x})");
                }
            }
        }
    }

    #[test]
    fn policy_iteration_fixed_point_from_optimal_gain() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        let s = spec(RegularizerMode::Plain, 0.05);
        let w = lagrange_multiplier(&s, &m).unwrap();
        let initial = FeedbackPolicy { gain: -m.rho() / m.sigma, scale: 0.4, scale_rate: 0.1 };
        let it = policy_iteration(initial, &s, &m, w, 3).unwrap();
        assert_relative_eq!(it[0].value.a_rate, -m.rho().powi(2), max_relative = 1e-14);
        assert_eq!(it[1].policy, it[2].policy);
        assert_eq!(it[2].policy, it[3].policy);
    }

    #[test]
    fn expected_wealth_boundary_values() {
        let m = MarketParams::new(0.1, 0.2, 0.02).unwrap();
        let s = spec(RegularizerMode::Plain, 0.01);
        let w = lagrange_multiplier(&s, &m).unwrap();
        assert_relative_eq!(expected_wealth(0.0, &s, &m, w).unwrap(), 1.0, max_relative = 1e-15);
        assert!((expected_wealth(1.0, &s, &m, w).unwrap() - 1.4).abs() < 1e-12);
        assert!(expected_wealth(1.5, &s, &m, w).is_err());
    }
}
