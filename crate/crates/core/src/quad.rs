//! Numerical quadrature on finite intervals.
//!
//! Two rules are provided:
//!
//! * [`GaussLegendre`], an n-point rule (default 256 nodes) for smooth integrands.
//! * [`tanh_sinh`], a double-exponential rule that tolerates integrable endpoint
//!   singularities such as `log(p)^2` or `z(p)^2` at `p -> 0`.
//!
//! [`integrate`] picks between them per sub-interval: it accepts the Gauss–Legendre
//! value when a half-resolution rule agrees with it, and falls back to tanh–sinh
//! otherwise (slow Gauss–Legendre convergence is the signature of a singularity).

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const DEFAULT_NODES: usize = 256;

const AGREEMENT_TOL: f64 = 1e-13;
const TANH_SINH_TOL: f64 = 1e-14;
const TANH_SINH_MAX_LEVEL: u32 = 12;
const TANH_SINH_T_MAX: f64 = 6.6;

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes and weights on [-1, 1], computed by Newton iteration on the
    /// three-term Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (_, d) = legendre(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(mid + half * x)).sum::<f64>() * half
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn default_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(DEFAULT_NODES))
}

fn half_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(DEFAULT_NODES / 2))
}

/// Gauss–Legendre with the default node count.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    default_rule().integrate(f, a, b)
}

/// Tanh–sinh quadrature on (a, b). The integrand is never evaluated at the
/// endpoints, so integrable singularities there are fine.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::InvalidArgument(format!("empty interval ({a}, {b})")));
    }
    let len = b - a;
    let eval = |t: f64| -> Result<f64> {
        // u = distance to the nearer endpoint, as a fraction of the interval
        let s = 0.5 * PI * t.abs().sinh();
        let u = 1.0 / (1.0 + (2.0 * s).exp());
        let weight = len * PI * t.cosh() * u * (1.0 - u);
        if weight == 0.0 {
            return Ok(0.0);
        }
        let x = if t < 0.0 { a + len * u } else { b - len * u };
        if t == 0.0 {
            let v = f(0.5 * (a + b));
            return finite_or(v, weight, x);
        }
        if x <= a || x >= b {
            return Ok(0.0);
        }
        finite_or(f(x), weight, x)
    };

    let mut step = 1.0;
    let mut sum = eval(0.0)?;
    let mut k = 1;
    while k as f64 * step <= TANH_SINH_T_MAX {
        let t = k as f64 * step;
        sum += eval(t)? + eval(-t)?;
        k += 1;
    }
    let mut estimate = sum * step;
    let mut last_change = f64::INFINITY;
    for level in 1..=TANH_SINH_MAX_LEVEL {
        step *= 0.5;
        let mut j = 1;
        while j as f64 * step <= TANH_SINH_T_MAX {
            let t = j as f64 * step;
            sum += eval(t)? + eval(-t)?;
            j += 2;
        }
        let next = sum * step;
        if !next.is_finite() {
            return Err(Error::DivergentIntegral("tanh-sinh sum is not finite".into()));
        }
        last_change = (next - estimate).abs() / next.abs().max(1.0);
        estimate = next;
        if level >= 3 && last_change <= TANH_SINH_TOL {
            return Ok(estimate);
        }
    }
    // Level cap reached; accept a slowly converging but settled estimate.
    if last_change <= 1e-9 {
        Ok(estimate)
    } else {
        Err(Error::DivergentIntegral(format!("tanh-sinh did not converge (last relative change {last_change:.3e})")))
    }
}

fn finite_or(v: f64, weight: f64, x: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(weight * v)
    } else if weight < 1e-200 {
        Ok(0.0)
    } else {
        Err(Error::DivergentIntegral(format!("integrand is not finite at {x}")))
    }
}

/// Integrate `f` over (a, b), split at `breaks` (points strictly inside the
/// interval where `f` has kinks). Each piece uses Gauss–Legendre when it
/// converges and tanh–sinh otherwise.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64]) -> Result<f64> {
    let mut points = Vec::with_capacity(breaks.len() + 2);
    points.push(a);
    points.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    points.push(b);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut total = 0.0;
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let fine = default_rule().integrate(&f, lo, hi);
        let coarse = half_rule().integrate(&f, lo, hi);
        let piece = if fine.is_finite() && (fine - coarse).abs() <= AGREEMENT_TOL * fine.abs().max(1.0) {
            fine
        } else {
            tanh_sinh(&f, lo, hi)?
        };
        total += piece;
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::DivergentIntegral("integral is not finite".into()))
    }
}

/// Integral over the unit interval (0, 1).
pub fn integrate_unit<F: Fn(f64) -> f64>(f: F, breaks: &[f64]) -> Result<f64> {
    integrate(f, 0.0, 1.0, breaks)
}
