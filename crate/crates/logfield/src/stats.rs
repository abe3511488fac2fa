//! Small statistics toolbox: summary moments, Wilson intervals for binomial
//! proportions, weighted least squares, empirical CDFs, and distances between
//! empirical laws (Kolmogorov-Smirnov, Lévy-Prokhorov, and the one-sided
//! domination distance).

use crate::error::{Error, Result};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Sample covariance of paired observations.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() - 1) as f64
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (i, t) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - t) + sorted[i + 1] * t
    } else {
        sorted[i]
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_sf(x: f64) -> f64 {
    Normal::standard().sf(x)
}

/// Wilson score interval for a binomial proportion at ±z standard normal
/// quantiles (z = 1.96 for 95%).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WilsonInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub successes: u64,
    pub trials: u64,
}

pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Result<WilsonInterval> {
    if trials == 0 {
        return Err(Error::Domain("Wilson interval needs at least one trial".into()));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(WilsonInterval {
        estimate: p,
        lower: (center - half).max(0.0),
        upper: (center + half).min(1.0),
        successes,
        trials,
    })
}

/// Weighted least-squares line y = intercept + slope·x.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FittedLine {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn weighted_least_squares(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<FittedLine> {
    if xs.len() != ys.len() || xs.len() != weights.len() || xs.len() < 2 {
        return Err(Error::Domain("need >= 2 consistent points for a line fit".into()));
    }
    let sw: f64 = weights.iter().sum();
    let mx = xs.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(weights).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(weights).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::Domain("degenerate abscissae in line fit".into()));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(weights)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // heteroscedastic slope SE with per-point variance 1/w
    let slope_se = (xs
        .iter()
        .zip(weights)
        .map(|(x, w)| ((x - mx) / sxx).powi(2) / w)
        .sum::<f64>())
    .sqrt();
    Ok(FittedLine { slope, intercept, slope_se })
}

/// Empirical CDF over a sorted copy of the data.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("empty sample set".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Ok(Ecdf { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// F(x) = P(X ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    /// P(X > x).
    pub fn survival(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    /// P(X ≥ x).
    pub fn survival_closed(&self, x: f64) -> f64 {
        1.0 - self.sorted.partition_point(|&s| s < x) as f64 / self.sorted.len() as f64
    }

    pub fn quantile(&self, q: f64) -> f64 {
        quantile(&self.sorted, q)
    }
}

/// Kolmogorov-Smirnov distance sup_x |F(x) − G(x)|.
pub fn ks_distance(a: &Ecdf, b: &Ecdf) -> f64 {
    let mut sup = 0.0f64;
    for x in a.sorted().iter().chain(b.sorted()) {
        sup = sup.max((a.cdf(*x) - b.cdf(*x)).abs());
    }
    sup
}

/// Lévy-Prokhorov distance between one-dimensional empirical laws, by grid
/// search over δ at the given resolution. Uses the interval
/// characterization F_ν(x) ≤ F_μ(x+δ)+δ in both directions.
pub fn levy_prokhorov_distance(a: &Ecdf, b: &Ecdf, resolution: f64) -> f64 {
    let ks = ks_distance(a, b); // LP <= KS
    let holds = |delta: f64| -> bool {
        let one_sided = |p: &Ecdf, q: &Ecdf| {
            p.sorted()
                .iter()
                .all(|&x| p.cdf(x) <= q.cdf(x + delta) + delta + 1e-12)
        };
        one_sided(a, b) && one_sided(b, a)
    };
    let mut delta = 0.0;
    while delta < ks && !holds(delta) {
        delta += resolution;
    }
    delta.min(ks)
}

/// One-sided domination distance
/// d̃(μ,ν) = inf{δ>0: μ((x,∞)) ≤ ν((x−δ,∞)) + δ for all x}; zero when ν
/// stochastically dominates μ.
pub fn one_sided_distance(mu: &Ecdf, nu: &Ecdf, resolution: f64) -> f64 {
    let holds = |delta: f64| -> bool {
        mu.sorted().iter().all(|&x| {
            mu.survival(x) <= nu.survival(x - delta) + delta + 1e-12
                && mu.survival_closed(x) <= nu.survival_closed(x - delta) + delta + 1e-12
        })
    };
    let mut delta = 0.0;
    while delta < 1.0 && !holds(delta) {
        delta += resolution;
    }
    delta
}
