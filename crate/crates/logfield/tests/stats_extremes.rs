use approx::assert_abs_diff_eq;
use logfield::extremes::{
    beta_star_estimate, centered_max, dist_distance, gumbel_mixture_shape, pair_cluster_prob,
    subset_max_tail, tail_slope, trajectory_localization, DistanceMetric, TubeSpec,
};
use logfield::profile::{m_centering, VarianceProfile};
use logfield::sampler::{FieldSample, ModelTag};
use logfield::stats::{
    ks_distance, levy_prokhorov_distance, normal_sf, one_sided_distance, weighted_least_squares,
    wilson_interval, Ecdf,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_sample(values: Vec<f64>, side: i64) -> FieldSample {
    FieldSample {
        model: ModelTag::Dgff,
        side,
        values,
        levels: (side as f64).log2().round() as u32,
        trajectories: None,
        components: None,
    }
}

/// Gumbel with survival e^{-2z} asymptotics.
fn gumbel_rate2(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(1e-300..1.0);
    -(-u.ln()).ln() / 2.0
}

#[test]
fn wilson_interval_contains_the_estimate() {
    let w = wilson_interval(30, 100, 1.96).unwrap();
    assert!(w.lower <= w.estimate && w.estimate <= w.upper);
    assert_abs_diff_eq!(w.estimate, 0.3);
    // known oracle value for 30/100 at 95%
    assert_abs_diff_eq!(w.lower, 0.2189, epsilon = 1e-3);
    assert_abs_diff_eq!(w.upper, 0.3959, epsilon = 1e-3);
    assert!(wilson_interval(0, 0, 1.96).is_err());
    let edge = wilson_interval(0, 50, 1.96).unwrap();
    assert_eq!(edge.lower, 0.0);
}

#[test]
fn weighted_least_squares_recovers_a_line() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x).collect();
    let fit = weighted_least_squares(&xs, &ys, &[1.0; 4]).unwrap();
    assert_abs_diff_eq!(fit.slope, -2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(fit.intercept, 1.5, epsilon = 1e-12);
    assert!(weighted_least_squares(&[1.0], &[1.0], &[1.0]).is_err());
}

#[test]
fn distance_identities() {
    let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
    let ea = Ecdf::new(&a).unwrap();
    assert_eq!(ks_distance(&ea, &ea), 0.0);
    assert_eq!(levy_prokhorov_distance(&ea, &ea, 1e-3), 0.0);
    assert_eq!(one_sided_distance(&ea, &ea, 1e-3), 0.0);
    let shifted: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
    let eb = Ecdf::new(&shifted).unwrap();
    assert_abs_diff_eq!(ks_distance(&ea, &eb), 1.0);
    // the shifted set dominates the original
    assert_eq!(one_sided_distance(&ea, &eb, 1e-3), 0.0);
    assert!(one_sided_distance(&eb, &ea, 1e-3) > 0.3);
    // LP never exceeds KS
    let lp = levy_prokhorov_distance(&ea, &eb, 1e-3);
    assert!(lp <= 1.0 && lp > 0.3);
}

#[test]
fn dist_distance_wraps_all_metrics() {
    let a = vec![0.0, 1.0, 2.0];
    assert_eq!(dist_distance(&a, &a, DistanceMetric::Ks).unwrap(), 0.0);
    assert_eq!(dist_distance(&a, &a, DistanceMetric::LevyProkhorov).unwrap(), 0.0);
    assert_eq!(dist_distance(&a, &a, DistanceMetric::OneSidedDomination).unwrap(), 0.0);
}

#[test]
fn centered_max_of_constant_fields() {
    let side = 8i64;
    let samples: Vec<FieldSample> =
        (0..10).map(|_| synthetic_sample(vec![0.0; 64], side)).collect();
    let m = m_centering(side).unwrap();
    let summary = centered_max(&samples, m).unwrap();
    for s in &summary.stats {
        assert_eq!(s.centered, -m);
        assert_eq!(s.max, 0.0);
    }
    assert_eq!(summary.median, -m);
    assert!(centered_max(&[], m).is_err());
}

#[test]
fn tail_slope_recovers_the_gumbel_exponent() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let centered: Vec<f64> = (0..40_000).map(|_| gumbel_rate2(&mut rng)).collect();
    let grid: Vec<f64> = (0..=6).map(|i| 0.8 + 0.15 * i as f64).collect();
    let est = tail_slope(&centered, &grid).unwrap();
    let fit = est.fit.expect("enough exceedances");
    assert!(
        (fit.slope + 2.0).abs() < 4.0 * fit.slope_se.max(0.05),
        "slope {} (se {})",
        fit.slope,
        fit.slope_se
    );
    // survival monotone over the grid
    for pair in est.points.windows(2) {
        assert!(pair[1].interval.estimate <= pair[0].interval.estimate);
    }
    assert!(tail_slope(&centered, &[1.0]).is_err());
    // far-tail grid: no usable points, widened-grid flag set
    let deep = tail_slope(&centered, &[30.0, 31.0]).unwrap();
    assert!(deep.widen_grid && deep.fit.is_none());
}

#[test]
fn gumbel_shape_flat_for_pure_gumbel_and_bent_for_mixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pure: Vec<f64> = (0..30_000).map(|_| gumbel_rate2(&mut rng)).collect();
    let pure_shape = gumbel_mixture_shape(&pure).unwrap();
    assert!((pure_shape.slope + 2.0).abs() < 0.2, "slope {}", pure_shape.slope);
    assert!(pure_shape.curvature.abs() < 0.25, "curvature {}", pure_shape.curvature);
    // Lambda ~ LogNormal mixture: max = ln(Lambda)/2 + Gumbel
    let mixed: Vec<f64> = (0..30_000)
        .map(|_| {
            let lambda: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 2.0;
            lambda / 2.0 + gumbel_rate2(&mut rng)
        })
        .collect();
    let mixed_shape = gumbel_mixture_shape(&mixed).unwrap();
    assert!(
        mixed_shape.curvature.abs() > pure_shape.curvature.abs(),
        "mixture curvature {} vs pure {}",
        mixed_shape.curvature,
        pure_shape.curvature
    );
}

#[test]
fn cluster_probability_edge_cases() {
    let side = 32i64;
    let m = m_centering(side).unwrap();
    // two high vertices at distance 4
    let mut values = vec![0.0; (side * side) as usize];
    values[(10 * side + 10) as usize] = m + 1.0;
    values[(10 * side + 14) as usize] = m + 1.0;
    let samples = vec![synthetic_sample(values, side)];
    let hit = pair_cluster_prob(&samples, 4.0, 1.0).unwrap();
    assert_eq!(hit.interval.successes, 1);
    // r too large: empty constraint flag
    let empty = pair_cluster_prob(&samples, 8.0, 1.0).unwrap();
    assert!(empty.empty_constraint);
    assert_eq!(empty.interval.successes, 0);
    // enormous c: threshold at -inf, any pair qualifies
    let zeros = vec![synthetic_sample(vec![0.0; (side * side) as usize], side)];
    let sure = pair_cluster_prob(&zeros, 4.0, 1e6).unwrap();
    assert_eq!(sure.interval.successes, 1);
    assert!(pair_cluster_prob(&samples, 1.0, 1.0).is_err());
}

#[test]
fn cluster_threshold_nesting() {
    let side = 16i64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<FieldSample> = (0..200)
        .map(|_| {
            let values: Vec<f64> = (0..side * side)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * 4.0)
                .collect();
            synthetic_sample(values, side)
        })
        .collect();
    // r > e so a larger c lowers the threshold
    let loose = pair_cluster_prob(&samples, 4.0, 5.0).unwrap();
    let tight = pair_cluster_prob(&samples, 4.0, 1.0).unwrap();
    assert!(tight.interval.successes <= loose.interval.successes);
}

fn tube_samples(n: u32, wiggle: f64) -> Vec<FieldSample> {
    // trajectories drift linearly to the final value plus a mid-path bump
    let side = 1i64 << n;
    let dim = (side * side) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    (0..60)
        .map(|_| {
            let values: Vec<f64> =
                (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) + 10.0).collect();
            let width = n as usize + 1;
            let mut traj = vec![0.0; dim * width];
            for v in 0..dim {
                for t in 1..=n as usize {
                    let frac = t as f64 / n as f64;
                    let bump = wiggle * (std::f64::consts::PI * frac).sin();
                    traj[v * width + t] = values[v] * frac + bump;
                }
            }
            FieldSample {
                model: ModelTag::Ibrw,
                side,
                values,
                levels: n,
                trajectories: Some(traj),
                components: None,
            }
        })
        .collect()
}

#[test]
fn localization_tube_nesting_and_window() {
    let profile = VarianceProfile::constant();
    let n = 6u32;
    let samples = tube_samples(n, 3.0);
    let narrow = TubeSpec { gamma: 0.55 };
    let wide = TubeSpec { gamma: 1.0 };
    let low = trajectory_localization(&samples, &profile, 0.0, narrow, 4.0).unwrap();
    let high = trajectory_localization(&samples, &profile, 0.0, wide, 4.0).unwrap();
    assert!(high.interval.successes <= low.interval.successes);
    // empty window by convention gives zero
    let empty = trajectory_localization(&samples, &profile, 0.0, narrow, 1000.0).unwrap();
    assert!(empty.window.is_none());
    assert_eq!(empty.interval.successes, 0);
    // missing trajectories is a configuration error
    let bare = vec![synthetic_sample(vec![0.0; 4096], 64)];
    assert!(trajectory_localization(&bare, &profile, 0.0, narrow, 4.0).is_err());
}

#[test]
fn subset_tail_single_vertex_gaussian_oracle() {
    let side = 16i64;
    let dim = (side * side) as usize;
    let sd = 3.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples: Vec<FieldSample> = (0..20_000)
        .map(|_| {
            let values: Vec<f64> =
                (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * sd).collect();
            synthetic_sample(values, side)
        })
        .collect();
    let idx = 37usize;
    let z = 2.0;
    let report = subset_max_tail(&samples, &[idx], 0.0, z, 0.0).unwrap();
    let exact = normal_sf(z / sd);
    assert!(
        report.interval.lower <= exact && exact <= report.interval.upper,
        "oracle {exact} outside [{}, {}]",
        report.interval.lower,
        report.interval.upper
    );
    // bigger subsets can only raise the probability
    let wide = subset_max_tail(&samples, &(0..64).collect::<Vec<_>>(), 0.0, z, 0.0).unwrap();
    assert!(wide.interval.estimate >= report.interval.estimate);
    assert!(subset_max_tail(&samples, &[idx], 0.0, 0.5, 0.0).is_err());
}

#[test]
fn beta_star_basic_behavior() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let maxima: Vec<f64> = (0..5000).map(|_| gumbel_rate2(&mut rng) + 5.0).collect();
    let report =
        beta_star_estimate(&maxima, 4, 0.6, 0.5f64.sqrt(), 5.0, &[1.0, 2.0, 8.0]).unwrap();
    assert_eq!(report.points.len(), 3);
    assert!(report.points[0].beta_hat.unwrap() > 0.0);
    // deep z has too few exceedances and is omitted
    assert!(report.points[2].beta_hat.is_none());
    assert_abs_diff_eq!(report.z_window, 4.0 * std::f64::consts::LN_2);
}
