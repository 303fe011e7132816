//! Distortion functions and the Choquet regularizer.
//!
//! A distortion `h` is a concave map on [0, 1] with `h(0) = h(1) = 0`. On a
//! distribution with left-quantile `Q` the regularizer is
//!
//! ```text
//! Phi_h(Q) = ∫_0^1 Q(p) h'(1 - p) dp
//! ```
//!
//! and over all distributions with mean `m` and variance `s^2` it is maximized by
//! the quantile `m + s h'(1 - p) / ||h'||_2`, with maximum `s ||h'||_2`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::quad;

/// Number of grid points used to check concavity of a custom distortion.
pub const CONCAVITY_GRID: usize = 2048;

const ENDPOINT_TOL: f64 = 1e-12;

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// The three distortions with closed-form samplers and densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinDistortion {
    /// `h(p) = -p log p`; optimal samplers are shifted exponentials.
    EntropyLike,
    /// `h(p) = ∫_0^p z(1 - s) ds`; optimal samplers are Gaussian.
    GaussianScore,
    /// `h(p) = p - p^2`; optimal samplers are uniform.
    Gini,
}

impl BuiltinDistortion {
    pub const ALL: [BuiltinDistortion; 3] = [Self::EntropyLike, Self::GaussianScore, Self::Gini];

    pub fn name(self) -> &'static str {
        match self {
            Self::EntropyLike => "entropy_like",
            Self::GaussianScore => "gaussian_score",
            Self::Gini => "gini",
        }
    }

    pub fn h(self, p: f64) -> f64 {
        match self {
            Self::EntropyLike => {
                if p <= 0.0 {
                    0.0
                } else {
                    -p * p.ln()
                }
            }
            // ∫_0^p z(1-s) ds = phi(z(p))
            Self::GaussianScore => {
                if p <= 0.0 || p >= 1.0 {
                    0.0
                } else {
                    let z = normal_quantile(p);
                    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
                }
            }
            Self::Gini => p - p * p,
        }
    }

    pub fn hprime(self, p: f64) -> f64 {
        match self {
            Self::EntropyLike => -p.ln() - 1.0,
            Self::GaussianScore => -normal_quantile(p),
            Self::Gini => 1.0 - 2.0 * p,
        }
    }

    /// `h'(1 - p)`, evaluated without forming `1 - p` where that loses digits.
    /// This is the standardized quantile of the family's sampler.
    pub fn template(self, p: f64) -> f64 {
        match self {
            Self::EntropyLike => -(-p).ln_1p() - 1.0,
            Self::GaussianScore => normal_quantile(p),
            Self::Gini => 2.0 * p - 1.0,
        }
    }

    /// Analytic `||h'||_2`.
    pub fn l2_norm(self) -> f64 {
        match self {
            Self::EntropyLike | Self::GaussianScore => 1.0,
            Self::Gini => 3f64.sqrt().recip(),
        }
    }

    /// Support of the standardized template `h'(1 - p)` over p in (0, 1).
    pub fn template_support(self) -> (f64, f64) {
        match self {
            Self::EntropyLike => (-1.0, f64::INFINITY),
            Self::GaussianScore => (f64::NEG_INFINITY, f64::INFINITY),
            Self::Gini => (-1.0, 1.0),
        }
    }
}

impl fmt::Display for BuiltinDistortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinDistortion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy_like" => Ok(Self::EntropyLike),
            "gaussian_score" => Ok(Self::GaussianScore),
            "gini" => Ok(Self::Gini),
            other => Err(Error::UnknownDistortion(other.to_string())),
        }
    }
}

type RealMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Builtin(BuiltinDistortion),
    Custom { name: Arc<str>, h: RealMap, hprime: RealMap },
}

/// A distortion function together with its right-derivative and `||h'||_2`.
#[derive(Clone)]
pub struct DistortionFn {
    repr: Repr,
    l2_norm: f64,
    l2_analytic: bool,
}

impl fmt::Debug for DistortionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DistortionFn")
            .field("name", &self.name())
            .field("l2_norm", &self.l2_norm)
            .field("l2_analytic", &self.l2_analytic)
            .finish()
    }
}

impl From<BuiltinDistortion> for DistortionFn {
    fn from(b: BuiltinDistortion) -> Self {
        Self { repr: Repr::Builtin(b), l2_norm: b.l2_norm(), l2_analytic: true }
    }
}

impl DistortionFn {
    pub fn entropy_like() -> Self {
        BuiltinDistortion::EntropyLike.into()
    }

    pub fn gaussian_score() -> Self {
        BuiltinDistortion::GaussianScore.into()
    }

    pub fn gini() -> Self {
        BuiltinDistortion::Gini.into()
    }

    pub fn from_name(name: &str) -> Result<Self> {
        name.parse::<BuiltinDistortion>().map(Into::into)
    }

    /// A user-supplied distortion. The invariants are checked on a sampled
    /// grid and `||h'||_2` is computed by quadrature.
    pub fn custom<H, D>(name: &str, h: H, hprime: D) -> Result<Self>
    where
        H: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let bad = |reason: String| Error::InvalidDistortion { name: name.to_string(), reason };
        let (h0, h1) = (h(0.0), h(1.0));
        if h0.abs() > ENDPOINT_TOL || h1.abs() > ENDPOINT_TOL {
            return Err(bad(format!("h(0) = {h0}, h(1) = {h1}; both must be 0")));
        }
        check_nonincreasing(&hprime).map_err(bad)?;
        let sq = quad::integrate_unit(|p| hprime(p).powi(2), &[])
            .map_err(|e| Error::DivergentNorm(format!("{name}: {e}")))?;
        if !(sq > 0.0) {
            return Err(bad("h is constantly zero".into()));
        }
        let l2_norm = sq.sqrt();
        if !l2_norm.is_finite() {
            return Err(Error::DivergentNorm(name.to_string()));
        }
        Ok(Self {
            repr: Repr::Custom { name: Arc::from(name), h: Arc::new(h), hprime: Arc::new(hprime) },
            l2_norm,
            l2_analytic: false,
        })
    }

    /// `c * h`, which scales `h'` and `||h'||_2` by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(invalid(format!("distortion scale must be positive, got {c}")));
        }
        let (name, h, hprime): (String, RealMap, RealMap) = match &self.repr {
            Repr::Builtin(b) => {
                let b = *b;
                (format!("{c}*{}", b.name()), Arc::new(move |p| b.h(p)), Arc::new(move |p| b.hprime(p)))
            }
            Repr::Custom { name, h, hprime } => (format!("{c}*{name}"), h.clone(), hprime.clone()),
        };
        Ok(Self {
            repr: Repr::Custom {
                name: Arc::from(name.as_str()),
                h: Arc::new(move |p| c * h(p)),
                hprime: Arc::new(move |p| c * hprime(p)),
            },
            l2_norm: c * self.l2_norm,
            l2_analytic: self.l2_analytic,
        })
    }

    pub fn name(&self) -> &str {
        match &self.repr {
            Repr::Builtin(b) => b.name(),
            Repr::Custom { name, .. } => name,
        }
    }

    pub fn builtin(&self) -> Option<BuiltinDistortion> {
        match self.repr {
            Repr::Builtin(b) => Some(b),
            Repr::Custom { .. } => None,
        }
    }

    pub fn h(&self, p: f64) -> f64 {
        match &self.repr {
            Repr::Builtin(b) => b.h(p),
            Repr::Custom { h, .. } => h(p),
        }
    }

    pub fn hprime(&self, p: f64) -> f64 {
        match &self.repr {
            Repr::Builtin(b) => b.hprime(p),
            Repr::Custom { hprime, .. } => hprime(p),
        }
    }

    /// `h'(1 - p)`.
    pub fn template(&self, p: f64) -> f64 {
        match &self.repr {
            Repr::Builtin(b) => b.template(p),
            Repr::Custom { hprime, .. } => hprime(1.0 - p),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.l2_norm * self.l2_norm
    }

    pub fn l2_analytic(&self) -> bool {
        self.l2_analytic
    }
}

fn check_nonincreasing<D: Fn(f64) -> f64>(hprime: &D) -> std::result::Result<(), String> {
    let n = CONCAVITY_GRID;
    let mut prev = f64::INFINITY;
    for i in 0..n {
        let p = (i as f64 + 0.5) / n as f64;
        let v = hprime(p);
        if v.is_nan() {
            return Err(format!("h'({p}) is NaN"));
        }
        if v > prev + 1e-12 * prev.abs().max(1.0) {
            return Err(format!("h' increases near p = {p}; h is not concave"));
        }
        prev = v;
    }
    Ok(())
}

/// `||h'||_2`; analytic for the built-ins, quadrature otherwise.
pub fn l2_norm(h: &DistortionFn) -> f64 {
    h.l2_norm()
}

/// `||h'||_2` computed by quadrature regardless of whether a closed form exists.
pub fn l2_norm_by_quadrature(h: &DistortionFn) -> Result<f64> {
    let sq = quad::integrate_unit(|p| h.hprime(p).powi(2), &[])
        .map_err(|e| Error::DivergentNorm(format!("{}: {e}", h.name())))?;
    if sq.is_finite() {
        Ok(sq.sqrt())
    } else {
        Err(Error::DivergentNorm(h.name().to_string()))
    }
}

/// A nondecreasing left-quantile function on (0, 1).
#[derive(Clone)]
pub struct QuantileFn {
    q: RealMap,
    lower: f64,
    upper: f64,
    breaks: Arc<[f64]>,
}

impl fmt::Debug for QuantileFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuantileFn")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("breaks", &self.breaks.len())
            .finish()
    }
}

impl QuantileFn {
    pub fn new<F: Fn(f64) -> f64 + Send + Sync + 'static>(q: F) -> Self {
        let lower = q(0.0);
        let upper = q(1.0);
        Self {
            q: Arc::new(q),
            lower: if lower.is_nan() { f64::NEG_INFINITY } else { lower },
            upper: if upper.is_nan() { f64::INFINITY } else { upper },
            breaks: Arc::from(Vec::new()),
        }
    }

    /// Degenerate distribution at `c`.
    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    /// Points in (0, 1) where `q` has kinks; quadrature splits there.
    pub fn with_breaks(mut self, breaks: Vec<f64>) -> Self {
        self.breaks = Arc::from(breaks);
        self
    }

    pub fn eval(&self, p: f64) -> f64 {
        (self.q)(p)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// Quantile of `a X + c` for `a > 0`.
    pub fn affine(&self, a: f64, c: f64) -> Self {
        let q = self.q.clone();
        Self {
            q: Arc::new(move |p| a * q(p) + c),
            lower: a * self.lower + c,
            upper: a * self.upper + c,
            breaks: self.breaks.clone(),
        }
    }

    pub fn mean(&self) -> Result<f64> {
        quad::integrate_unit(|p| self.eval(p), &self.breaks)
    }

    pub fn variance(&self) -> Result<f64> {
        let m = self.mean()?;
        quad::integrate_unit(|p| (self.eval(p) - m).powi(2), &self.breaks)
    }
}

/// `Phi_h` of the distribution with quantile `q`, via `∫ q(p) h'(1-p) dp`.
pub fn regularizer_of_quantile(h: &DistortionFn, q: &QuantileFn) -> Result<f64> {
    quad::integrate_unit(|p| q.eval(p) * h.template(p), q.breaks())
        .map_err(|e| Error::DivergentIntegral(format!("Choquet regularizer under {}: {e}", h.name())))
}

/// Maximizer of `Phi_h` over distributions with mean `m` and variance `s^2`:
/// the quantile `m + s h'(1-p) / ||h'||_2` and the maximum value `s ||h'||_2`.
pub fn max_constrained(h: &DistortionFn, m: f64, s: f64) -> Result<(QuantileFn, f64)> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(invalid(format!("standard deviation must be positive, got {s}")));
    }
    if !m.is_finite() {
        return Err(invalid(format!("mean must be finite, got {m}")));
    }
    let norm = h.l2_norm();
    let h2 = h.clone();
    let q = QuantileFn::new(move |p| m + s * h2.template(p) / norm);
    Ok((q, s * norm))
}
