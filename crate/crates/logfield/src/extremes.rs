//! Extreme-value statistics over replicated field samples: centered maxima,
//! right-tail slopes, Gumbel-mixture shape diagnostics, localization of
//! extremal trajectories, cluster geometry of near-maxima, subset-max bounds,
//! and the β* right-tail estimator.

use crate::error::{Error, Result};
use crate::profile::{m_centering, VarianceProfile};
use crate::sampler::FieldSample;
use crate::stats::{
    ks_distance, levy_prokhorov_distance, one_sided_distance, quantile, weighted_least_squares,
    wilson_interval, Ecdf, FittedLine, WilsonInterval,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::f64::consts::LN_2;

/// Per-replica maximum statistics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MaxStat {
    pub replica: usize,
    pub max: f64,
    pub argmax_index: usize,
    pub centered: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxSummary {
    pub stats: Vec<MaxStat>,
    pub centering: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl MaxSummary {
    pub fn interquartile_range(&self) -> f64 {
        self.q75 - self.q25
    }

    pub fn centered_values(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.centered).collect()
    }
}

/// Centered maxima of a replica set (each replica's max minus the centering).
pub fn centered_max(samples: &[FieldSample], centering: f64) -> Result<MaxSummary> {
    if samples.is_empty() {
        return Err(Error::Domain("centered_max needs at least one replica".into()));
    }
    let stats: Vec<MaxStat> = samples
        .iter()
        .enumerate()
        .map(|(replica, s)| {
            let argmax_index = s.argmax();
            let max = s.values[argmax_index];
            MaxStat { replica, max, argmax_index, centered: max - centering }
        })
        .collect();
    let mut centered: Vec<f64> = stats.iter().map(|s| s.centered).collect();
    centered.sort_by(|a, b| a.total_cmp(b));
    Ok(MaxSummary {
        stats,
        centering,
        median: quantile(&centered, 0.5),
        q25: quantile(&centered, 0.25),
        q75: quantile(&centered, 0.75),
    })
}

/// One point of the cluster-geometry estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterStat {
    pub r: f64,
    pub c: f64,
    pub threshold: f64,
    pub interval: WilsonInterval,
    /// the pair constraint r ≤ ‖u−v‖ ≤ N/r was empty
    pub empty_constraint: bool,
}

/// Fraction of replicas containing a high pair at intermediate distance:
/// u ≠ v with r ≤ ‖u−v‖₂ ≤ N/r and both values ≥ m_N − c·ln ln r.
/// Prunes by collecting only the vertices above the threshold.
pub fn pair_cluster_prob(samples: &[FieldSample], r: f64, c: f64) -> Result<ClusterStat> {
    if samples.is_empty() {
        return Err(Error::Domain("pair_cluster_prob needs replicas".into()));
    }
    if r < 2.0 {
        return Err(Error::Domain(format!("r={r} below 2")));
    }
    let side = samples[0].side;
    let threshold = m_centering(side)? - c * r.ln().ln();
    if (side as f64) / r < r {
        return Ok(ClusterStat {
            r,
            c,
            threshold,
            interval: wilson_interval(0, samples.len() as u64, 1.96)?,
            empty_constraint: true,
        });
    }
    let upper = side as f64 / r;
    let mut successes = 0u64;
    for sample in samples {
        let high: Vec<(i64, i64)> = sample
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= threshold)
            .map(|(i, _)| (i as i64 / side, i as i64 % side))
            .collect();
        let found = high.iter().enumerate().any(|(a, &(x1, y1))| {
            high[a + 1..].iter().any(|&(x2, y2)| {
                let d = (((x1 - x2).pow(2) + (y1 - y2).pow(2)) as f64).sqrt();
                (r..=upper).contains(&d)
            })
        });
        if found {
            successes += 1;
        }
    }
    Ok(ClusterStat {
        r,
        c,
        threshold,
        interval: wilson_interval(successes, samples.len() as u64, 1.96)?,
        empty_constraint: false,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailPoint {
    pub z: f64,
    pub interval: WilsonInterval,
    pub used_in_fit: bool,
}

/// Right-tail estimate of the centered max: survival probabilities over a z
/// grid and the weighted log-linear slope (target −2).
#[derive(Debug, Clone, Serialize)]
pub struct TailEstimate {
    pub points: Vec<TailPoint>,
    pub fit: Option<FittedLine>,
    /// set when fewer than two grid points had the required exceedances
    pub widen_grid: bool,
    pub replicas: usize,
}

/// Minimum exceedance count for a grid point to enter the slope fit.
pub const MIN_EXCEEDANCES: u64 = 50;

pub fn tail_slope(centered: &[f64], z_grid: &[f64]) -> Result<TailEstimate> {
    if centered.is_empty() {
        return Err(Error::Domain("tail_slope needs samples".into()));
    }
    if z_grid.len() < 2 {
        return Err(Error::Domain("z grid of one point: cannot fit a slope".into()));
    }
    let n = centered.len() as u64;
    let points: Vec<TailPoint> = z_grid
        .iter()
        .map(|&z| {
            let successes = centered.iter().filter(|&&v| v >= z).count() as u64;
            Ok(TailPoint {
                z,
                interval: wilson_interval(successes, n, 1.96)?,
                used_in_fit: successes >= MIN_EXCEEDANCES,
            })
        })
        .collect::<Result<_>>()?;
    let fit_points: Vec<&TailPoint> = points.iter().filter(|p| p.used_in_fit).collect();
    let fit = if fit_points.len() >= 2 {
        let xs: Vec<f64> = fit_points.iter().map(|p| p.z).collect();
        let ys: Vec<f64> = fit_points.iter().map(|p| p.interval.estimate.ln()).collect();
        // binomial delta method: Var(ln p̂) ≈ (1−p)/(n p), weight = inverse
        let ws: Vec<f64> = fit_points
            .iter()
            .map(|p| {
                let prob = p.interval.estimate;
                n as f64 * prob / (1.0 - prob).max(1e-12)
            })
            .collect();
        Some(weighted_least_squares(&xs, &ys, &ws)?)
    } else {
        None
    };
    Ok(TailEstimate {
        widen_grid: fit.is_none(),
        points,
        fit,
        replicas: centered.len(),
    })
}

/// Shape diagnostics of the centered-max law against a Gumbel mixture:
/// the double-log transform ln(−ln F̂(z)) fitted against z on the central
/// quantile range. A rate-2 Gumbel gives slope −2 and zero curvature; a
/// nondegenerate mixture keeps the slope but bends the curve.
#[derive(Debug, Clone, Serialize)]
pub struct ShapeReport {
    pub slope: f64,
    pub slope_se: f64,
    pub curvature: f64,
    pub points: usize,
    pub replicas: usize,
}

pub fn gumbel_mixture_shape(centered: &[f64]) -> Result<ShapeReport> {
    if centered.len() < 100 {
        return Err(Error::Domain("gumbel_mixture_shape needs >= 100 replicas".into()));
    }
    let ecdf = Ecdf::new(centered)?;
    let (lo, hi) = (ecdf.quantile(0.15), ecdf.quantile(0.85));
    let grid = 40;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..=grid {
        let z = lo + (hi - lo) * i as f64 / grid as f64;
        let f = ecdf.cdf(z);
        if f > 0.0 && f < 1.0 {
            xs.push(z);
            ys.push((-f.ln()).ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::Domain("degenerate centered-max distribution".into()));
    }
    // quadratic least squares y = a + b z + c z²; curvature = 2c
    let rows = xs.len();
    let design = DMatrix::from_fn(rows, 3, |i, j| xs[i].powi(j as i32));
    let rhs = DVector::from_vec(ys.clone());
    let normal = design.transpose() * &design;
    let coef = normal
        .lu()
        .solve(&(design.transpose() * rhs))
        .ok_or_else(|| Error::Numeric("singular quadratic fit".into()))?;
    let ws = vec![1.0; rows];
    let line = weighted_least_squares(&xs, &ys, &ws)?;
    Ok(ShapeReport {
        slope: line.slope,
        slope_se: line.slope_se,
        curvature: 2.0 * coef[2],
        points: rows,
        replicas: centered.len(),
    })
}

/// Localization tube around the mean trajectory profile: at branching step t
/// out of n the center is 2·log 2·I_{σ²}(0, t/n)·n and the half-width is
/// i(t,n)^γ with i(t,n) = t ∧ (n−t).
#[derive(Debug, Clone, Copy)]
pub struct TubeSpec {
    pub gamma: f64,
}

impl TubeSpec {
    pub fn half_width(&self, t: u32, n: u32) -> f64 {
        (t.min(n - t) as f64).powf(self.gamma)
    }

    pub fn center(&self, profile: &VarianceProfile, t: u32, n: u32) -> Result<f64> {
        Ok(2.0 * LN_2 * profile.i_sigma2(0.0, t as f64 / n as f64)? * n as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationReport {
    pub interval: WilsonInterval,
    pub high_replicas: usize,
    pub threshold: f64,
    pub window: Option<(u32, u32)>,
}

/// Among replicas whose max reaches the threshold, the fraction containing a
/// high vertex whose trajectory leaves the tube at some step inside the
/// window [log₂ r, n − log₂ r]. An empty window gives fraction 0.
pub fn trajectory_localization(
    samples: &[FieldSample],
    profile: &VarianceProfile,
    threshold: f64,
    tube: TubeSpec,
    r: f64,
) -> Result<LocalizationReport> {
    if samples.is_empty() {
        return Err(Error::Domain("trajectory_localization needs replicas".into()));
    }
    if samples.iter().any(|s| s.trajectories.is_none()) {
        return Err(Error::Config("trajectories were not retained for this run".into()));
    }
    let n = samples[0].levels;
    let t_lo = r.log2().ceil().max(1.0) as u32;
    let t_hi_f = n as f64 - r.log2();
    let window = (t_hi_f >= t_lo as f64).then(|| (t_lo, t_hi_f.floor() as u32));
    let mut high_replicas = 0usize;
    let mut exits = 0u64;
    let centers: Vec<f64> = (0..=n)
        .map(|t| tube.center(profile, t, n))
        .collect::<Result<_>>()?;
    for sample in samples {
        if sample.max_value() < threshold {
            continue;
        }
        high_replicas += 1;
        let Some((lo, hi)) = window else { continue };
        let dim = sample.values.len();
        let found = (0..dim)
            .filter(|&i| sample.values[i] >= threshold)
            .any(|i| {
                let traj = sample.trajectory(i).expect("trajectories checked present");
                (lo..=hi).any(|t| {
                    (traj[t as usize] - centers[t as usize]).abs() > tube.half_width(t, n)
                })
            });
        if found {
            exits += 1;
        }
    }
    let trials = high_replicas.max(1) as u64;
    Ok(LocalizationReport {
        interval: wilson_interval(exits, trials, 1.96)?,
        high_replicas,
        threshold,
        window,
    })
}

/// Empirical subset-max tail and the implied constant of the bound
/// P(max_A ≥ m_N + z − y) ≤ C·(|A|/|V_N|)·e^{−2(z−y)}.
#[derive(Debug, Clone, Serialize)]
pub struct SubsetBoundReport {
    pub interval: WilsonInterval,
    pub c_hat: f64,
    pub subset_size: usize,
    pub z: f64,
    pub y: f64,
}

pub fn subset_max_tail(
    samples: &[FieldSample],
    subset: &[usize],
    centering: f64,
    z: f64,
    y: f64,
) -> Result<SubsetBoundReport> {
    if samples.is_empty() || subset.is_empty() {
        return Err(Error::Domain("subset_max_tail needs replicas and a subset".into()));
    }
    if z < 1.0 || y < 0.0 {
        return Err(Error::Domain(format!("need z >= 1 and y >= 0, got z={z}, y={y}")));
    }
    let level = centering + z - y;
    let successes = samples
        .iter()
        .filter(|s| subset.iter().any(|&i| s.values[i] >= level))
        .count() as u64;
    let interval = wilson_interval(successes, samples.len() as u64, 1.96)?;
    let total = samples[0].values.len() as f64;
    let c_hat = interval.estimate * (total / subset.len() as f64) * (2.0 * (z - y)).exp();
    Ok(SubsetBoundReport { interval, c_hat, subset_size: subset.len(), z, y })
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaStarPoint {
    pub z: f64,
    pub exceedances: u64,
    /// omitted when below the exceedance floor
    pub beta_hat: Option<f64>,
}

/// β* right-tail estimate from maxima of the fine field over one coarse cell:
/// β̂(z) = e^{2 log 2·k̄(1−σ²(0))}·e^{−2k̄^γ}·e^{2z}·P̂(max ≥ base − k̄^γ + z).
#[derive(Debug, Clone, Serialize)]
pub struct BetaStarReport {
    pub points: Vec<BetaStarPoint>,
    pub kbar: f64,
    pub gamma: f64,
    /// stability window limit ρ(K′L′) = ln(K′L′)
    pub z_window: f64,
    pub replicas: usize,
}

pub const BETA_MIN_EXCEEDANCES: u64 = 30;

pub fn beta_star_estimate(
    fine_maxima: &[f64],
    kbar: u32,
    gamma: f64,
    sigma0: f64,
    centering_base: f64,
    z_list: &[f64],
) -> Result<BetaStarReport> {
    if fine_maxima.is_empty() {
        return Err(Error::Domain("beta_star_estimate needs samples".into()));
    }
    let kb = kbar as f64;
    let kb_gamma = kb.powf(gamma);
    let prefactor = (2.0 * LN_2 * kb * (1.0 - sigma0 * sigma0)).exp() * (-2.0 * kb_gamma).exp();
    let n = fine_maxima.len() as f64;
    let points = z_list
        .iter()
        .map(|&z| {
            let level = centering_base - kb_gamma + z;
            let exceedances = fine_maxima.iter().filter(|&&v| v >= level).count() as u64;
            let beta_hat = (exceedances >= BETA_MIN_EXCEEDANCES)
                .then(|| prefactor * (2.0 * z).exp() * exceedances as f64 / n);
            BetaStarPoint { z, exceedances, beta_hat }
        })
        .collect();
    Ok(BetaStarReport {
        points,
        kbar: kb,
        gamma,
        z_window: kb * LN_2,
        replicas: fine_maxima.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    Ks,
    LevyProkhorov,
    /// one-sided domination distance d̃ (asymmetric)
    OneSidedDomination,
}

/// grid resolution for the Lévy-Prokhorov and d̃ searches
pub const LP_RESOLUTION: f64 = 1e-3;

/// Distance between the empirical laws of two sample sets.
pub fn dist_distance(a: &[f64], b: &[f64], metric: DistanceMetric) -> Result<f64> {
    let ea = Ecdf::new(a)?;
    let eb = Ecdf::new(b)?;
    Ok(match metric {
        DistanceMetric::Ks => ks_distance(&ea, &eb),
        DistanceMetric::LevyProkhorov => levy_prokhorov_distance(&ea, &eb, LP_RESOLUTION),
        DistanceMetric::OneSidedDomination => one_sided_distance(&ea, &eb, LP_RESOLUTION),
    })
}
