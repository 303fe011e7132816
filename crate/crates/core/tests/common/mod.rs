#![allow(dead_code)]

use choquet_emv::choquet::{normal_quantile, QuantileFn};
use rand::Rng;

/// Standardized maximizer shapes of the three built-in distortions.
pub fn template_exponential(p: f64) -> f64 {
    -(-p).ln_1p() - 1.0
}

pub fn template_normal(p: f64) -> f64 {
    normal_quantile(p)
}

pub fn template_uniform(p: f64) -> f64 {
    3f64.sqrt() * (2.0 * p - 1.0)
}

/// Nondecreasing piecewise-linear ramp sum `Σ c_j clamp((p - a_j)/w_j, 0, 1)`.
#[derive(Debug, Clone)]
pub struct Ramps {
    pub starts: Vec<f64>,
    pub widths: Vec<f64>,
    pub heights: Vec<f64>,
}

impl Ramps {
    pub fn eval(&self, p: f64) -> f64 {
        self.starts
            .iter()
            .zip(&self.widths)
            .zip(&self.heights)
            .map(|((&a, &w), &c)| c * ((p - a) / w).clamp(0.0, 1.0))
            .sum()
    }

    pub fn breaks(&self) -> Vec<f64> {
        self.starts.iter().zip(&self.widths).flat_map(|(&a, &w)| [a, a + w]).collect()
    }
}

/// A random nondecreasing quantile: a nonnegative mixture of the three
/// maximizer shapes plus ramps (which include near-steps, i.e. atoms).
pub fn random_quantile<R: Rng>(rng: &mut R) -> QuantileFn {
    let mut weights = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    // some candidates sit close to a single family's maximizer
    if rng.random_bool(0.3) {
        let k = rng.random_range(0..3);
        for (i, w) in weights.iter_mut().enumerate() {
            if i != k {
                *w *= 1e-3;
            }
        }
    }
    let n = rng.random_range(0..6);
    let mut ramps = Ramps { starts: vec![], widths: vec![], heights: vec![] };
    let ramp_scale = if rng.random_bool(0.3) { 1e-3 } else { 2.0 };
    for _ in 0..n {
        let a = rng.random_range(0.01..0.95);
        let w = if rng.random_bool(0.3) { 1e-6 } else { rng.random_range(0.001..(0.99 - a)) };
        ramps.starts.push(a);
        ramps.widths.push(w);
        ramps.heights.push(ramp_scale * rng.random::<f64>());
    }
    let breaks = ramps.breaks();
    let [we, wn, wu] = weights;
    QuantileFn::new(move |p| {
        we * template_exponential(p) + wn * template_normal(p) + wu * template_uniform(p) + ramps.eval(p)
    })
    .with_breaks(breaks)
}

/// `q` renormalized to mean `m` and standard deviation `s`, or `None` if
/// its variance is numerically zero.
pub fn renormalize(q: &QuantileFn, m: f64, s: f64) -> Option<QuantileFn> {
    let mean = q.mean().ok()?;
    let sd = q.variance().ok()?.sqrt();
    if sd.is_nan() || sd <= 1e-6 {
        return None;
    }
    Some(q.affine(s / sd, m - s * mean / sd))
}

/// Richardson-extrapolated central difference of `f` at `x`.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

pub fn rel_err(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(approx.abs()).max(1e-8)
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance with the standard error of that estimate, from the fourth
/// central moment.
pub fn variance_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), ((m4 - m2 * m2) / n).sqrt())
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
