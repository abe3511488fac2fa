use approx::assert_abs_diff_eq;
use logfield::covariance::{green_matrix, ibrw_cov, mibrw_cov, psi_covariance, CovarianceMatrix};
use logfield::lattice::{BoxSpec, Vertex};
use logfield::profile::VarianceProfile;
use logfield::sampler::{
    ibrw_sample, mibrw_sample, stream_rng, variance_match_constants, DgffSampler, MvnFactor,
    PsiSampler, SurrogateParams, SurrogateSampler, ThreeFieldParams, ThreeFieldSampler,
};
use logfield::stats::{covariance, mean, variance};
use nalgebra::DMatrix;

fn entry_se(cov: &CovarianceMatrix, i: usize, j: usize, replicas: usize) -> f64 {
    ((cov.value(i, i) * cov.value(j, j) + cov.value(i, j).powi(2)) / replicas as f64).sqrt()
}

#[test]
fn stream_rng_is_deterministic_and_separated() {
    use rand::RngCore;
    let a: Vec<u64> = (0..4).map(|_| stream_rng(7, 0, "dgff").next_u64()).collect();
    assert!(a.iter().all(|&x| x == a[0]));
    assert_ne!(stream_rng(7, 0, "dgff").next_u64(), stream_rng(7, 1, "dgff").next_u64());
    assert_ne!(stream_rng(7, 0, "dgff").next_u64(), stream_rng(7, 0, "psi").next_u64());
    assert_ne!(stream_rng(7, 0, "dgff").next_u64(), stream_rng(8, 0, "dgff").next_u64());
}

#[test]
fn mvn_factor_degenerate_cases() {
    let zero = CovarianceMatrix::from_matrix(DMatrix::zeros(3, 3)).unwrap();
    let factor = MvnFactor::new(&zero).unwrap();
    let mut rng = stream_rng(1, 0, "test");
    assert_eq!(factor.sample(&mut rng), vec![0.0; 3]);
    // rank-one: perfectly correlated coordinates
    let ones = CovarianceMatrix::from_matrix(DMatrix::from_element(2, 2, 1.0)).unwrap();
    let factor = MvnFactor::new(&ones).unwrap();
    // the factorization may add jitter within the PSD tolerance
    for _ in 0..50 {
        let s = factor.sample(&mut rng);
        assert_abs_diff_eq!(s[0], s[1], epsilon = 1e-2);
    }
    // indefinite input is refused
    let bad =
        CovarianceMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]))
            .unwrap();
    assert!(MvnFactor::new(&bad).is_err());
}

#[test]
fn dgff_empirical_covariance_matches_green() {
    let spec = BoxSpec::new(3, 0.0).unwrap();
    let g = green_matrix(&spec).unwrap();
    let sampler = DgffSampler::new(spec).unwrap();
    let mut rng = stream_rng(21, 0, "dgff");
    let replicas = 6000;
    let samples: Vec<Vec<f64>> = (0..replicas).map(|_| sampler.sample(&mut rng).values).collect();
    let probes = [
        (spec.index(Vertex::new(4, 4)), spec.index(Vertex::new(4, 4))),
        (spec.index(Vertex::new(4, 4)), spec.index(Vertex::new(3, 4))),
        (spec.index(Vertex::new(2, 2)), spec.index(Vertex::new(5, 5))),
        (spec.index(Vertex::new(1, 6)), spec.index(Vertex::new(6, 1))),
    ];
    for (i, j) in probes {
        let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let emp = if i == j { variance(&xs) } else { covariance(&xs, &ys) };
        let se = entry_se(&g, i, j, replicas);
        assert!(
            (emp - g.value(i, j)).abs() < 5.0 * se,
            "entry ({i},{j}): {emp} vs {}",
            g.value(i, j)
        );
    }
}

#[test]
fn psi_with_flat_profile_is_bitwise_the_dgff() {
    let spec = BoxSpec::new(3, 0.0).unwrap();
    let dgff = DgffSampler::new(spec).unwrap();
    let psi = PsiSampler::new(spec, &VarianceProfile::constant()).unwrap();
    let a = dgff.sample(&mut stream_rng(3, 5, "field"));
    let b = psi.sample(&mut stream_rng(3, 5, "field"));
    assert_eq!(a.values, b.values);
}

#[test]
fn psi_empirical_variance_matches_exact() {
    let spec = BoxSpec::new(3, 0.0).unwrap();
    let profile = VarianceProfile::two_speed();
    let exact = psi_covariance(&spec, &profile).unwrap();
    let sampler = PsiSampler::new(spec, &profile).unwrap();
    let mut rng = stream_rng(4, 0, "psi");
    let replicas = 6000;
    let samples: Vec<Vec<f64>> = (0..replicas).map(|_| sampler.sample(&mut rng).values).collect();
    for v in [Vertex::new(4, 4), Vertex::new(2, 5)] {
        let i = spec.index(v);
        let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let se = entry_se(&exact, i, i, replicas);
        assert!((variance(&xs) - exact.value(i, i)).abs() < 5.0 * se);
    }
}

#[test]
fn ibrw_sample_matches_closed_form_covariance() {
    let profile = VarianceProfile::two_speed();
    let n = 4u32;
    let mut rng = stream_rng(9, 0, "ibrw");
    let replicas = 6000;
    let samples: Vec<Vec<f64>> =
        (0..replicas).map(|_| ibrw_sample(&profile, n, &mut rng, false).unwrap().values).collect();
    let m = 1i64 << n;
    let pairs = [
        (Vertex::new(3, 3), Vertex::new(3, 3)),
        (Vertex::new(4, 4), Vertex::new(5, 6)),
        (Vertex::new(0, 0), Vertex::new(15, 15)),
    ];
    for (u, v) in pairs {
        let (i, j) = ((u.x * m + u.y) as usize, (v.x * m + v.y) as usize);
        let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let emp = if i == j { variance(&xs) } else { covariance(&xs, &ys) };
        let exact = ibrw_cov(&profile, n, u, v).unwrap();
        let vu = ibrw_cov(&profile, n, u, u).unwrap();
        let vv = ibrw_cov(&profile, n, v, v).unwrap();
        let se = ((vu * vv + exact * exact) / replicas as f64).sqrt();
        assert!((emp - exact).abs() < 5.0 * se, "({u:?},{v:?}): {emp} vs {exact}");
    }
}

#[test]
fn ibrw_trajectories_are_running_partial_sums() {
    let profile = VarianceProfile::two_speed();
    let n = 4u32;
    let sample = ibrw_sample(&profile, n, &mut stream_rng(2, 0, "ibrw"), true).unwrap();
    for i in (0..sample.values.len()).step_by(37) {
        let traj = sample.trajectory(i).unwrap();
        assert_eq!(traj.len(), n as usize + 1);
        assert_eq!(traj[0], 0.0);
        assert_abs_diff_eq!(traj[n as usize], sample.values[i], epsilon = 1e-12);
        // vertices in the same coarse half share the first increment
    }
    let traj_a = sample.trajectory(0).unwrap();
    let traj_b = sample.trajectory(1).unwrap();
    assert_eq!(traj_a[1], traj_b[1]);
}

#[test]
fn mibrw_sample_matches_closed_form_covariance() {
    let profile = VarianceProfile::two_speed();
    let n = 3u32;
    let mut rng = stream_rng(14, 0, "mibrw");
    let replicas = 8000;
    let samples: Vec<Vec<f64>> = (0..replicas)
        .map(|_| mibrw_sample(&profile, n, &mut rng, false).unwrap().values)
        .collect();
    let m = 1i64 << n;
    let pairs = [
        (Vertex::new(0, 0), Vertex::new(0, 0)),
        (Vertex::new(2, 3), Vertex::new(2, 4)),
        (Vertex::new(0, 0), Vertex::new(4, 4)),
        (Vertex::new(1, 7), Vertex::new(6, 0)),
    ];
    for (u, v) in pairs {
        let (i, j) = ((u.x * m + u.y) as usize, (v.x * m + v.y) as usize);
        let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        let emp = if i == j { variance(&xs) } else { covariance(&xs, &ys) };
        let exact = mibrw_cov(&profile, n, u, v).unwrap();
        let vu = mibrw_cov(&profile, n, u, u).unwrap();
        let se = ((vu * vu + exact * exact) / replicas as f64).sqrt();
        assert!((emp - exact).abs() < 5.0 * se, "({u:?},{v:?}): {emp} vs {exact}");
    }
}

#[test]
fn samplers_reproduce_bit_identically() {
    let profile = VarianceProfile::two_speed();
    let a = mibrw_sample(&profile, 4, &mut stream_rng(6, 3, "mibrw"), true).unwrap();
    let b = mibrw_sample(&profile, 4, &mut stream_rng(6, 3, "mibrw"), true).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.trajectories, b.trajectories);
    let c = mibrw_sample(&profile, 4, &mut stream_rng(6, 4, "mibrw"), false).unwrap();
    assert_ne!(a.values, c.values);
}

fn small_three_field(alpha_hat: f64) -> (ThreeFieldParams, Vec<f64>) {
    let profile = VarianceProfile::two_speed();
    let spec = BoxSpec::new(5, 0.0).unwrap();
    let psi = psi_covariance(&spec, &profile).unwrap();
    let psi_var: Vec<f64> = (0..psi.dim()).map(|i| psi.value(i, i)).collect();
    let params = ThreeFieldParams {
        n: 5,
        k: 1,
        l: 1,
        kp: 1,
        lp: 0,
        profile,
        alpha_hat,
        a2_by_residue: Vec::new(),
    };
    (params, psi_var)
}

#[test]
fn variance_matching_solves_the_diagonal_equation() {
    let (mut params, psi_var) = small_three_field(5.0);
    let consts = variance_match_constants(&params, 0.0, &psi_var).unwrap();
    assert_eq!(consts.a2_by_residue.len(), 4);
    assert!(consts.a2_by_residue.iter().all(|&a| a >= 0.0));
    assert!(consts.a_max <= (8.0 * params.alpha_hat).sqrt());
    assert!(consts.mean_abs_residual.is_finite());
    // matching variance goes negative when the budget cannot cover the
    // intermediate field
    params.alpha_hat = 0.0;
    let zeros = vec![0.0; psi_var.len()];
    assert!(variance_match_constants(&params, 0.0, &zeros).is_err());
}

#[test]
fn three_field_components_are_independent_and_sum() {
    let (mut params, psi_var) = small_three_field(5.0);
    let consts = variance_match_constants(&params, 0.0, &psi_var).unwrap();
    params.a2_by_residue = consts.a2_by_residue.clone();
    let sampler = ThreeFieldSampler::new(params.clone()).unwrap();
    let mut rng = stream_rng(31, 0, "threefield");
    let replicas = 5000;
    let mut totals = Vec::with_capacity(replicas);
    let mut coarse = Vec::with_capacity(replicas);
    let mut bottom = Vec::with_capacity(replicas);
    let mut inter = Vec::with_capacity(replicas);
    let spec = BoxSpec::new(5, 0.0).unwrap();
    let probe = spec.index(Vertex::new(13, 9));
    for _ in 0..replicas {
        let s = sampler.sample(&mut rng, true).unwrap();
        let c = s.components.as_ref().unwrap();
        totals.push(s.values[probe]);
        coarse.push(c.coarse[probe]);
        bottom.push(c.bottom[probe]);
        inter.push(c.intermediate[probe]);
    }
    // pairwise component covariances vanish
    for (a, b) in [(&coarse, &bottom), (&coarse, &inter), (&bottom, &inter)] {
        let cv = covariance(a, b);
        let se = (variance(a) * variance(b) / replicas as f64).sqrt();
        assert!(cv.abs() < 5.0 * se.max(1e-6), "component covariance {cv}");
    }
    // total variance solves the matching equation: Var psi + 4 alpha-hat
    let target = psi_var[probe] + 4.0 * params.alpha_hat;
    let emp = variance(&totals);
    let se = target * (2.0 / replicas as f64).sqrt();
    assert!((emp - target).abs() < 5.0 * se, "variance {emp} vs {target}");
    assert_abs_diff_eq!(mean(&totals), 0.0, epsilon = 5.0 * (target / replicas as f64).sqrt());
}

#[test]
fn surrogate_outcomes_are_consistent() {
    let params = SurrogateParams {
        k: 2,
        l: 1,
        gamma: 0.6,
        beta_star: 1.0,
        sigma0: 0.5f64.sqrt(),
    };
    let sampler = SurrogateSampler::new(params).unwrap();
    let mut rng = stream_rng(44, 0, "surrogate");
    for _ in 0..200 {
        let o = sampler.sample(&mut rng);
        assert!(o.d_kl > 0.0);
        assert!(o.active_cells as usize <= sampler.params().cell_count());
        assert_eq!(o.g_star.is_none(), o.active_cells == 0);
    }
    // bit-identical replay
    let a = SurrogateSampler::new(sampler.params().clone())
        .unwrap()
        .sample(&mut stream_rng(44, 1, "surrogate"));
    let b = sampler.sample(&mut stream_rng(44, 1, "surrogate"));
    assert_eq!(a.d_kl, b.d_kl);
    assert_eq!(a.g_star, b.g_star);
}

#[test]
fn surrogate_rejects_bad_parameters() {
    let mut params = SurrogateParams {
        k: 2,
        l: 1,
        gamma: 0.3,
        beta_star: 1.0,
        sigma0: 0.5,
    };
    assert!(SurrogateSampler::new(params.clone()).is_err());
    params.gamma = 0.6;
    params.beta_star = 0.0;
    assert!(SurrogateSampler::new(params).is_err());
}
