//! Location-scale exploratory policies `Q(p) = M + S h'(1 - p)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::choquet::{normal_cdf, BuiltinDistortion, DistortionFn};
use crate::error::{invalid, Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Which regularizer enters the running reward: `Phi_h` or `log Phi_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerMode {
    Plain,
    Log,
}

impl RegularizerMode {
    pub const ALL: [RegularizerMode; 2] = [Self::Plain, Self::Log];

    pub fn name(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Log => "log",
        }
    }
}

impl fmt::Display for RegularizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegularizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "log" => Ok(Self::Log),
            other => Err(invalid(format!("unknown regularizer mode `{other}` (expected plain or log)"))),
        }
    }
}

/// An exploratory action distribution in the location-scale family of `h`.
///
/// Mean is `location` exactly (since `∫ h'(1-p) dp = 0`) and variance is
/// `scale^2 ||h'||_2^2`.
#[derive(Debug, Clone)]
pub struct LocationScalePolicy {
    pub h: DistortionFn,
    pub location: f64,
    pub scale: f64,
}

impl LocationScalePolicy {
    pub fn new(h: DistortionFn, location: f64, scale: f64) -> Result<Self> {
        if !location.is_finite() {
            return Err(invalid(format!("policy location must be finite, got {location}")));
        }
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(invalid(format!("policy scale must be finite and nonnegative, got {scale}")));
        }
        Ok(Self { h, location, scale })
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if self.scale == 0.0 {
            return self.location;
        }
        self.location + self.scale * self.h.template(p)
    }

    /// Inverse-transform sample from a uniform draw `p` in (0, 1).
    pub fn sample(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid(format!("uniform draw must lie in (0, 1), got {p}")));
        }
        Ok(self.quantile(p))
    }

    /// `(mean, variance)`.
    pub fn moments(&self) -> (f64, f64) {
        (self.location, self.scale * self.scale * self.h.l2_norm_sq())
    }

    /// `Phi_h = S ||h'||^2` (plain) or its logarithm. The log of a degenerate
    /// policy is reported as [`Error::DegeneratePolicy`].
    pub fn regularizer_value(&self, mode: RegularizerMode) -> Result<f64> {
        let phi = self.scale * self.h.l2_norm_sq();
        match mode {
            RegularizerMode::Plain => Ok(phi),
            RegularizerMode::Log if self.scale == 0.0 => Err(Error::DegeneratePolicy),
            RegularizerMode::Log => Ok(phi.ln()),
        }
    }

    /// Closed support `[lo, hi]` of the sampler.
    pub fn support(&self) -> (f64, f64) {
        let (lo, hi) = match self.h.builtin() {
            Some(b) => b.template_support(),
            None => (self.h.template(0.0), self.h.template(1.0)),
        };
        (self.location + self.scale * lo, self.location + self.scale * hi)
    }

    fn family(&self) -> Result<BuiltinDistortion> {
        let b = self.h.builtin().ok_or_else(|| Error::DensityUnavailable(self.h.name().to_string()))?;
        if !(self.scale > 0.0) {
            return Err(invalid("density requires a positive scale"));
        }
        Ok(b)
    }

    pub fn log_density(&self, u: f64) -> Result<f64> {
        let b = self.family()?;
        let (m, s) = (self.location, self.scale);
        let y = (u - m) / s;
        match b {
            BuiltinDistortion::GaussianScore => Ok(-LN_SQRT_2PI - s.ln() - 0.5 * y * y),
            BuiltinDistortion::EntropyLike => {
                if y < -1.0 {
                    return Err(Error::OutsideSupport { u });
                }
                Ok(-s.ln() - (y + 1.0))
            }
            BuiltinDistortion::Gini => {
                if !(-1.0..=1.0).contains(&y) {
                    return Err(Error::OutsideSupport { u });
                }
                Ok(-(2.0 * s).ln())
            }
        }
    }

    /// `(∂/∂M, ∂/∂S)` of [`log_density`](Self::log_density).
    pub fn log_density_grad(&self, u: f64) -> Result<(f64, f64)> {
        let b = self.family()?;
        let (m, s) = (self.location, self.scale);
        let y = (u - m) / s;
        match b {
            BuiltinDistortion::GaussianScore => Ok((y / s, (y * y - 1.0) / s)),
            BuiltinDistortion::EntropyLike => {
                if y < -1.0 {
                    return Err(Error::OutsideSupport { u });
                }
                Ok((1.0 / s, (y - 1.0) / s))
            }
            BuiltinDistortion::Gini => {
                if !(-1.0..=1.0).contains(&y) {
                    return Err(Error::OutsideSupport { u });
                }
                Ok((0.0, -1.0 / s))
            }
        }
    }

    pub fn cdf(&self, u: f64) -> Result<f64> {
        let b = self.family()?;
        let y = (u - self.location) / self.scale;
        Ok(match b {
            BuiltinDistortion::GaussianScore => normal_cdf(y),
            BuiltinDistortion::EntropyLike => {
                if y < -1.0 {
                    0.0
                } else {
                    -(-(y + 1.0)).exp_m1()
                }
            }
            BuiltinDistortion::Gini => (0.5 * (y + 1.0)).clamp(0.0, 1.0),
        })
    }
}
