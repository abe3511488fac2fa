//! Random generation of all field models: exact DGFF and scale-inhomogeneous
//! fields via covariance factorization, hierarchical IBRW/MIBRW samplers with
//! per-scale trajectories, the three-field approximation with variance
//! matching, and the thinned-peaks surrogate (ρ, Y, Z, G*, D_{K,L}).

use crate::covariance::{
    green_matrix, level_weight, psi_functional_matrix, CovarianceMatrix, LinearFunctionalMatrix,
};
use crate::error::{Error, Result};
use crate::lattice::{restricted_set, BoxSpec, Partition, Vertex};
use crate::profile::VarianceProfile;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::f64::consts::LN_2;

/// Deterministic, component-separated random stream: the ChaCha key is
/// derived from (seed, component) and the stream id is the replica index, so
/// adding components never perturbs existing streams.
pub fn stream_rng(seed: u64, replica: u64, component: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(component.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replica);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTag {
    Dgff,
    Psi,
    Ibrw,
    Mibrw,
    ThreeField,
    Surrogate,
}

/// Per-vertex component breakdown of a three-field sample.
#[derive(Debug, Clone)]
pub struct ThreeFieldComponents {
    pub coarse: Vec<f64>,
    pub intermediate: Vec<f64>,
    pub bottom: Vec<f64>,
    pub matching: Vec<f64>,
}

/// One realization of a field model on V_N (row-major values), with optional
/// per-scale partial-sum trajectories (vertex-major, n+1 entries per vertex,
/// coarsest scales first; the last entry equals the value).
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub model: ModelTag,
    pub side: i64,
    pub values: Vec<f64>,
    pub levels: u32,
    pub trajectories: Option<Vec<f64>>,
    pub components: Option<ThreeFieldComponents>,
}

impl FieldSample {
    pub fn trajectory(&self, vertex_index: usize) -> Option<&[f64]> {
        self.trajectories.as_ref().map(|t| {
            let w = self.levels as usize + 1;
            &t[vertex_index * w..(vertex_index + 1) * w]
        })
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Symmetric factorization of a covariance for exact Gaussian sampling.
/// Inactive coordinates (zero diagonal, e.g. Dirichlet boundary) are pinned
/// to zero; the active block is factorized by Cholesky, with a jitter retry
/// within the PSD tolerance and a clamped spectral factorization as fallback.
pub struct MvnFactor {
    dim: usize,
    active: Vec<usize>,
    lower: DMatrix<f64>,
}

impl MvnFactor {
    pub fn new(cov: &CovarianceMatrix) -> Result<Self> {
        let dim = cov.dim();
        let active: Vec<usize> = (0..dim).filter(|&i| cov.value(i, i) > 0.0).collect();
        let k = active.len();
        let mut sub = DMatrix::<f64>::zeros(k, k);
        for (a, &i) in active.iter().enumerate() {
            for (b, &j) in active.iter().enumerate() {
                sub[(a, b)] = cov.value(i, j);
            }
        }
        let tol = cov.psd_tolerance();
        let lower = if k == 0 {
            DMatrix::<f64>::zeros(0, 0)
        } else if let Some(chol) = sub.clone().cholesky() {
            chol.l()
        } else if let Some(chol) = (&sub + DMatrix::identity(k, k) * tol).cholesky() {
            chol.l()
        } else {
            let eig = sub.symmetric_eigen();
            let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if min < -tol {
                return Err(Error::Numeric(format!(
                    "covariance not PSD: min eigenvalue {min} below tolerance -{tol}"
                )));
            }
            let mut vecs = eig.eigenvectors;
            for (c, &lam) in eig.eigenvalues.iter().enumerate() {
                let s = lam.max(0.0).sqrt();
                vecs.column_mut(c).scale_mut(s);
            }
            vecs
        };
        Ok(MvnFactor { dim, active, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One zero-mean Gaussian vector with the factored covariance.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let k = self.active.len();
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let mut out = vec![0.0; self.dim];
        for (a, &i) in self.active.iter().enumerate() {
            let mut acc = 0.0;
            for b in 0..k {
                acc += self.lower[(a, b)] * z[b];
            }
            out[i] = acc;
        }
        out
    }
}

/// Exact multivariate normal samples with the given covariance.
pub fn mvn_sample(
    cov: &CovarianceMatrix,
    rng: &mut impl Rng,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let factor = MvnFactor::new(cov)?;
    Ok((0..count).map(|_| factor.sample(rng)).collect())
}

/// Exact DGFF sampler on V_N (dense-guard sizes).
pub struct DgffSampler {
    spec: BoxSpec,
    factor: MvnFactor,
}

impl DgffSampler {
    pub fn new(spec: BoxSpec) -> Result<Self> {
        let factor = MvnFactor::new(&green_matrix(&spec)?)?;
        Ok(DgffSampler { spec, factor })
    }

    pub fn spec(&self) -> &BoxSpec {
        &self.spec
    }

    pub fn sample(&self, rng: &mut impl Rng) -> FieldSample {
        FieldSample {
            model: ModelTag::Dgff,
            side: self.spec.side(),
            values: self.factor.sample(rng),
            levels: self.spec.exponent(),
            trajectories: None,
            components: None,
        }
    }
}

/// Exact sampler of the scale-inhomogeneous field ψ = A·φ.
pub struct PsiSampler {
    spec: BoxSpec,
    factor: MvnFactor,
    functional: LinearFunctionalMatrix,
}

impl PsiSampler {
    pub fn new(spec: BoxSpec, profile: &VarianceProfile) -> Result<Self> {
        let functional = psi_functional_matrix(&spec, profile)?;
        let factor = MvnFactor::new(&green_matrix(&spec)?)?;
        Ok(PsiSampler { spec, factor, functional })
    }

    pub fn spec(&self) -> &BoxSpec {
        &self.spec
    }

    pub fn functional(&self) -> &LinearFunctionalMatrix {
        &self.functional
    }

    pub fn sample(&self, rng: &mut impl Rng) -> FieldSample {
        let phi = self.factor.sample(rng);
        FieldSample {
            model: ModelTag::Psi,
            side: self.spec.side(),
            values: self.functional.apply(&phi),
            levels: self.spec.exponent(),
            trajectories: None,
            components: None,
        }
    }
}

/// IBRW sample on V_{2^n}: per dyadic level k (side-2^k aligned boxes) one
/// standard Gaussian per box, added with weight √(log 2)·w_k; levels are
/// consumed coarsest first so trajectories R_v(t) are partial sums over the
/// first t branching steps.
pub fn ibrw_sample(
    profile: &VarianceProfile,
    n: u32,
    rng: &mut impl Rng,
    keep_trajectories: bool,
) -> Result<FieldSample> {
    let m = 1i64 << n;
    let dim = (m * m) as usize;
    let mut values = vec![0.0; dim];
    let width = n as usize + 1;
    let mut traj = if keep_trajectories { vec![0.0; dim * width] } else { Vec::new() };
    for t in 1..=n {
        let k = n - t; // coarse levels first
        let w = level_weight(profile, n, k)?;
        let scale = LN_2.sqrt() * w;
        let boxes_per_axis = (m >> k) as usize;
        let mut noise = vec![0.0; boxes_per_axis * boxes_per_axis];
        for cell in noise.iter_mut() {
            *cell = StandardNormal.sample(rng);
        }
        for x in 0..m {
            let bx = (x >> k) as usize;
            for y in 0..m {
                let by = (y >> k) as usize;
                let i = (x * m + y) as usize;
                values[i] += scale * noise[bx * boxes_per_axis + by];
                if keep_trajectories {
                    traj[i * width + t as usize] = values[i];
                }
            }
        }
    }
    Ok(FieldSample {
        model: ModelTag::Ibrw,
        side: m,
        values,
        levels: n,
        trajectories: keep_trajectories.then_some(traj),
        components: None,
    })
}

/// Circular window sums along the y axis: out[x][y] = Σ_{d=0..w−1} in[x][(y−d) mod m].
fn circular_window_y(input: &[f64], m: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for x in 0..m {
        let row = &input[x * m..(x + 1) * m];
        let mut acc: f64 = row[m - w + 1..].iter().sum::<f64>() + row[0];
        out[x * m] = acc;
        for y in 1..m {
            acc += row[y] - row[(y + m - w) % m];
            out[x * m + y] = acc;
        }
    }
    out
}

/// Same along the x axis.
fn circular_window_x(input: &[f64], m: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for y in 0..m {
        let mut acc = 0.0;
        for d in 0..w {
            acc += input[((m - d) % m) * m + y];
        }
        out[y] = acc;
        for x in 1..m {
            acc += input[x * m + y] - input[((x + m - w) % m) * m + y];
            out[x * m + y] = acc;
        }
    }
    out
}

/// MIBRW sample on the side-2^n torus: per level k, i.i.d. noise indexed by
/// the torus positions of box corners; the value at v adds
/// 2^{−k}√(log 2)·w_k times the sum of the noise over the 2^{2k} side-2^k
/// boxes containing v. Box sums are taken with torus prefix windows, O(N²)
/// per level.
pub fn mibrw_sample(
    profile: &VarianceProfile,
    n: u32,
    rng: &mut impl Rng,
    keep_trajectories: bool,
) -> Result<FieldSample> {
    let m = (1i64 << n) as usize;
    let dim = m * m;
    let mut values = vec![0.0; dim];
    let width = n as usize + 1;
    let mut traj = if keep_trajectories { vec![0.0; dim * width] } else { Vec::new() };
    let mut noise = vec![0.0; dim];
    for t in 1..=n {
        let k = n - t;
        let w = level_weight(profile, n, k)?;
        let scale = 0.5f64.powi(k as i32) * LN_2.sqrt() * w;
        for cell in noise.iter_mut() {
            *cell = StandardNormal.sample(rng);
        }
        let side = 1usize << k;
        let sums = circular_window_x(&circular_window_y(&noise, m, side), m, side);
        for i in 0..dim {
            values[i] += scale * sums[i];
            if keep_trajectories {
                traj[i * width + t as usize] = values[i];
            }
        }
    }
    Ok(FieldSample {
        model: ModelTag::Mibrw,
        side: m as i64,
        values,
        levels: n,
        trajectories: keep_trajectories.then_some(traj),
        components: None,
    })
}

/// Parameters of the three-field approximation S = S^c + S^b + S^m + a·Φ.
/// All box sides are powers of two given by their exponents; the matching
/// constants a are per residue class modulo K′L′.
#[derive(Debug, Clone)]
pub struct ThreeFieldParams {
    pub n: u32,
    pub k: u32,
    pub l: u32,
    pub kp: u32,
    pub lp: u32,
    pub profile: VarianceProfile,
    pub alpha_hat: f64,
    /// a²_{K′L′, v̄} per residue v̄, row-major over the K′L′ square.
    pub a2_by_residue: Vec<f64>,
}

impl ThreeFieldParams {
    pub fn side(&self) -> i64 {
        1i64 << self.n
    }

    /// KL, the number of coarse cells per axis.
    pub fn coarse_cells(&self) -> i64 {
        1i64 << (self.k + self.l)
    }

    /// N/KL, the coarse cell side.
    pub fn coarse_side(&self) -> i64 {
        1i64 << (self.n - self.k - self.l)
    }

    /// K′L′, the bottom cell side.
    pub fn bottom_side(&self) -> i64 {
        1i64 << (self.kp + self.lp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k + self.l >= self.n {
            return Err(Error::Config("KL must be below N".into()));
        }
        if self.coarse_side() <= self.bottom_side() {
            return Err(Error::Config(format!(
                "need N/KL > K'L', got {} vs {}",
                self.coarse_side(),
                self.bottom_side()
            )));
        }
        let expected = (self.bottom_side() * self.bottom_side()) as usize;
        if self.a2_by_residue.len() != expected {
            return Err(Error::Config(format!(
                "matching constants: expected {expected} residues, got {}",
                self.a2_by_residue.len()
            )));
        }
        if self.a2_by_residue.iter().any(|&a| !a.is_finite() || a < 0.0) {
            return Err(Error::Config("matching constants must be nonnegative".into()));
        }
        Ok(())
    }

    /// Intermediate-field level range l′+k′ ..= n−l−k (box sides 2^{l′+k′}
    /// up to the coarse cell side).
    pub fn intermediate_levels(&self) -> (u32, u32) {
        (self.lp + self.kp, self.n - self.l - self.k)
    }
}

/// Sampler for the three-field approximation. Components are independent:
/// coarse = σ(0)·DGFF on V_{KL}, constant per N/KL cell; bottom = σ(1)·
/// independent DGFFs per K′L′ cell; intermediate = independent MIBRW-style
/// sums per N/KL cell (periodized on that cell), constant per K′L′ cell;
/// matching = a_{K′L′,v̄}·Φ with one standard Gaussian per K′L′ cell.
pub struct ThreeFieldSampler {
    params: ThreeFieldParams,
    spec: BoxSpec,
    coarse_factor: MvnFactor,
    bottom_factor: MvnFactor,
    coarse_cells: Partition,
    bottom_cells: Partition,
}

impl ThreeFieldSampler {
    pub fn new(params: ThreeFieldParams) -> Result<Self> {
        params.validate()?;
        let spec = BoxSpec::new(params.n, 0.0)?;
        let coarse_spec = BoxSpec::new(params.k + params.l, 0.0)?;
        let bottom_spec = BoxSpec::new(params.kp + params.lp, 0.0)?;
        let coarse_factor = MvnFactor::new(&green_matrix(&coarse_spec)?)?;
        let bottom_factor = MvnFactor::new(&green_matrix(&bottom_spec)?)?;
        let coarse_cells = Partition::new(&spec, params.coarse_side())?;
        let bottom_cells = Partition::new(&spec, params.bottom_side())?;
        Ok(ThreeFieldSampler {
            params,
            spec,
            coarse_factor,
            bottom_factor,
            coarse_cells,
            bottom_cells,
        })
    }

    pub fn params(&self) -> &ThreeFieldParams {
        &self.params
    }

    pub fn spec(&self) -> &BoxSpec {
        &self.spec
    }

    pub fn sample(&self, rng: &mut impl Rng, keep_components: bool) -> Result<FieldSample> {
        let p = &self.params;
        let m = p.side();
        let dim = (m * m) as usize;
        let s0 = p.profile.sigma0();
        let s1 = p.profile.sigma1();
        let kl = p.coarse_cells();
        let coarse_side = p.coarse_side();
        let bottom_side = p.bottom_side();

        // coarse: one DGFF value per N/KL cell, indexed by the grid point w_i
        let phi_coarse = self.coarse_factor.sample(rng);
        let mut coarse = vec![0.0; dim];
        for v in self.spec.vertices() {
            let w = (v.x / coarse_side) * kl + v.y / coarse_side;
            coarse[self.spec.index(v)] = s0 * phi_coarse[w as usize];
        }

        // bottom: independent DGFF per K'L' cell
        let mut bottom = vec![0.0; dim];
        for cell in 0..self.bottom_cells.cell_count() {
            let phi = self.bottom_factor.sample(rng);
            for (j, v) in self.bottom_cells.cell_vertices(cell).enumerate() {
                // cell_vertices iterates row-major, matching the V_{K'L'} index
                bottom[self.spec.index(v)] = s1 * phi[j];
            }
        }

        // intermediate: per coarse cell, MIBRW levels on the cell torus,
        // evaluated at the K'L' corners and constant on each K'L' cell
        let (j_lo, j_hi) = p.intermediate_levels();
        let cell_m = coarse_side as usize;
        let corners_per_axis = (coarse_side / bottom_side) as usize;
        let mut intermediate = vec![0.0; dim];
        let mut noise = vec![0.0; cell_m * cell_m];
        for cell in 0..self.coarse_cells.cell_count() {
            let corner = {
                let c = self.coarse_cells.cells_per_axis();
                Vertex::new(cell as i64 / c * coarse_side, cell as i64 % c * coarse_side)
            };
            let mut corner_values = vec![0.0; corners_per_axis * corners_per_axis];
            for j in (j_lo..=j_hi).rev() {
                let w = level_weight(&p.profile, p.n, j)?;
                let scale = 0.5f64.powi(j as i32) * LN_2.sqrt() * w;
                for celln in noise.iter_mut() {
                    *celln = StandardNormal.sample(rng);
                }
                let side = 1usize << j;
                let sums = circular_window_x(&circular_window_y(&noise, cell_m, side), cell_m, side);
                for cx in 0..corners_per_axis {
                    for cy in 0..corners_per_axis {
                        let lx = cx * bottom_side as usize;
                        let ly = cy * bottom_side as usize;
                        corner_values[cx * corners_per_axis + cy] += scale * sums[lx * cell_m + ly];
                    }
                }
            }
            for cx in 0..corners_per_axis {
                for cy in 0..corners_per_axis {
                    let val = corner_values[cx * corners_per_axis + cy];
                    for dx in 0..bottom_side {
                        for dy in 0..bottom_side {
                            let v = Vertex::new(
                                corner.x + cx as i64 * bottom_side + dx,
                                corner.y + cy as i64 * bottom_side + dy,
                            );
                            intermediate[self.spec.index(v)] = val;
                        }
                    }
                }
            }
        }

        // matching: a_{K'L',v̄}·Φ_j, one standard Gaussian per K'L' cell
        let mut matching = vec![0.0; dim];
        for cell in 0..self.bottom_cells.cell_count() {
            let phi: f64 = StandardNormal.sample(rng);
            for v in self.bottom_cells.cell_vertices(cell) {
                let res = self.bottom_cells.residue_of(v);
                let a2 = p.a2_by_residue[(res.x * bottom_side + res.y) as usize];
                matching[self.spec.index(v)] = a2.sqrt() * phi;
            }
        }

        let values: Vec<f64> = (0..dim)
            .map(|i| coarse[i] + bottom[i] + intermediate[i] + matching[i])
            .collect();
        Ok(FieldSample {
            model: ModelTag::ThreeField,
            side: m,
            values,
            levels: p.n,
            trajectories: None,
            components: keep_components.then_some(ThreeFieldComponents {
                coarse,
                intermediate,
                bottom,
                matching,
            }),
        })
    }
}

/// Exact variance of the three-field sum at a vertex, given the matching
/// constants (component variances are deterministic functions of position).
pub struct ThreeFieldVariances {
    pub coarse_diag: Vec<f64>,
    pub bottom_diag: Vec<f64>,
    pub intermediate_var: f64,
}

pub fn three_field_variances(params: &ThreeFieldParams) -> Result<ThreeFieldVariances> {
    let coarse_spec = BoxSpec::new(params.k + params.l, 0.0)?;
    let bottom_spec = BoxSpec::new(params.kp + params.lp, 0.0)?;
    let gc = green_matrix(&coarse_spec)?;
    let gb = green_matrix(&bottom_spec)?;
    let s0 = params.profile.sigma0();
    let s1 = params.profile.sigma1();
    let coarse_diag: Vec<f64> = (0..gc.dim()).map(|i| s0 * s0 * gc.value(i, i)).collect();
    let bottom_diag: Vec<f64> = (0..gb.dim()).map(|i| s1 * s1 * gb.value(i, i)).collect();
    let (j_lo, j_hi) = params.intermediate_levels();
    let mut intermediate_var = 0.0;
    for j in j_lo..=j_hi {
        let w = level_weight(&params.profile, params.n, j)?;
        intermediate_var += LN_2 * w * w;
    }
    Ok(ThreeFieldVariances { coarse_diag, bottom_diag, intermediate_var })
}

/// Result of the variance-matching construction.
#[derive(Debug, Clone, Serialize)]
pub struct MatchingConstants {
    /// a² per residue class, row-major over the K′L′ square.
    pub a2_by_residue: Vec<f64>,
    pub a_max: f64,
    /// mean over V*_{N,δ} of |Var(S_v) − Var(ψ_v) − 4α̂| with the class
    /// constants in place
    pub mean_abs_residual: f64,
    pub alpha_hat: f64,
    pub restricted_count: usize,
}

/// Solves Var(S_v) = Var(ψ_v) + 4α̂ for a² per vertex, then averages within
/// residue classes modulo K′L′ over V*_{N,δ}. ψ-variances are supplied per
/// vertex (exact at dense sizes, asymptotic beyond).
pub fn variance_match_constants(
    params: &ThreeFieldParams,
    delta: f64,
    psi_variances: &[f64],
) -> Result<MatchingConstants> {
    let spec = BoxSpec::new(params.n, delta)?;
    if psi_variances.len() != spec.vertex_count() {
        return Err(Error::Config("psi variance table has wrong size".into()));
    }
    let vars = three_field_variances(params)?;
    let kl = params.coarse_cells();
    let coarse_side = params.coarse_side();
    let bottom_side = params.bottom_side();
    let alpha4 = 4.0 * params.alpha_hat;
    let vstar = restricted_set(&spec, 1i64 << params.k, 1i64 << params.l, delta)?;
    if vstar.is_empty() {
        return Err(Error::Config("restricted set V* is empty".into()));
    }
    let a2_vertex = |v: Vertex| -> f64 {
        let w = ((v.x / coarse_side) * kl + v.y / coarse_side) as usize;
        let res = ((v.x % bottom_side) * bottom_side + v.y % bottom_side) as usize;
        psi_variances[spec.index(v)] + alpha4
            - vars.coarse_diag[w]
            - vars.bottom_diag[res]
            - vars.intermediate_var
    };
    let residues = (bottom_side * bottom_side) as usize;
    let mut sums = vec![0.0; residues];
    let mut counts = vec![0usize; residues];
    for &v in &vstar {
        let res = ((v.x % bottom_side) * bottom_side + v.y % bottom_side) as usize;
        sums[res] += a2_vertex(v);
        counts[res] += 1;
    }
    // classes unrepresented in V* fall back to the global mean
    let global = sums.iter().sum::<f64>() / vstar.len() as f64;
    let mut a2_by_residue = vec![0.0; residues];
    let mut worst = 0.0f64;
    for r in 0..residues {
        let a2 = if counts[r] > 0 { sums[r] / counts[r] as f64 } else { global };
        worst = worst.min(a2);
        a2_by_residue[r] = a2.max(0.0);
    }
    if worst < -1e-6 {
        return Err(Error::Config(format!(
            "negative matching variance {worst}: alpha_hat too small, need at least {}",
            params.alpha_hat - worst / 4.0
        )));
    }
    let mut residual = 0.0;
    for &v in &vstar {
        let res = ((v.x % bottom_side) * bottom_side + v.y % bottom_side) as usize;
        residual += (a2_by_residue[res] - a2_vertex(v)).abs();
    }
    let a_max = a2_by_residue.iter().fold(0.0f64, |a, &b| a.max(b)).sqrt();
    Ok(MatchingConstants {
        a2_by_residue,
        a_max,
        mean_abs_residual: residual / vstar.len() as f64,
        alpha_hat: params.alpha_hat,
        restricted_count: vstar.len(),
    })
}

/// Parameters of the surrogate process for the centered maximum.
#[derive(Debug, Clone)]
pub struct SurrogateParams {
    pub k: u32,
    pub l: u32,
    /// exponent in the k̄^γ corrections, in (1/2, 1)
    pub gamma: f64,
    pub beta_star: f64,
    pub sigma0: f64,
}

impl SurrogateParams {
    pub fn kbar(&self) -> f64 {
        (self.k + self.l) as f64
    }

    pub fn cell_count(&self) -> usize {
        let kl = 1usize << (self.k + self.l);
        kl * kl
    }

    /// Bernoulli success probability of ρ, clamped to [0,1]. The raw value
    /// β*·e^{2k̄^γ}·2^{2 log 2·k̄(σ²(0)−1)} exceeds 1 for small k̄.
    pub fn bernoulli_p(&self) -> (f64, bool) {
        let kbar = self.kbar();
        let s02 = self.sigma0 * self.sigma0;
        let raw = self.beta_star
            * (2.0 * kbar.powf(self.gamma)).exp()
            * 2f64.powf(2.0 * LN_2 * kbar * (s02 - 1.0));
        (raw.min(1.0), raw > 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma={} not in (1/2,1)", self.gamma)));
        }
        if self.beta_star <= 0.0 {
            return Err(Error::Config("beta_star must be positive".into()));
        }
        Ok(())
    }
}

/// One surrogate replica: the thinned max G*, the number of active cells, and
/// the intensity variable D_{K,L}.
#[derive(Debug, Clone, Serialize)]
pub struct SurrogateOutcome {
    /// max over active cells of G_{R,i}; `None` when every ρ_i = 0
    pub g_star: Option<f64>,
    pub active_cells: u32,
    pub d_kl: f64,
}

/// Sampler for (ρ, Y, Z, G*, D_{K,L}): ρ i.i.d. Bernoulli, Y i.i.d. shifted
/// exponentials with P(Y ≥ x) = e^{−2x}e^{−2k̄^γ} on [−k̄^γ, ∞), Z the
/// coarse-field marginals (σ(0) times a DGFF on V_{KL}).
pub struct SurrogateSampler {
    params: SurrogateParams,
    factor: MvnFactor,
    p: f64,
    pub p_clamped: bool,
}

impl SurrogateSampler {
    pub fn new(params: SurrogateParams) -> Result<Self> {
        params.validate()?;
        let spec = BoxSpec::new(params.k + params.l, 0.0)?;
        let factor = MvnFactor::new(&green_matrix(&spec)?)?;
        let (p, p_clamped) = params.bernoulli_p();
        Ok(SurrogateSampler { params, factor, p, p_clamped })
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }

    pub fn sample(&self, rng: &mut impl Rng) -> SurrogateOutcome {
        let p = &self.params;
        let kl = 1i64 << (p.k + p.l);
        let ln_kl = (kl as f64).ln();
        let s02 = p.sigma0 * p.sigma0;
        let kbar_gamma = p.kbar().powf(p.gamma);
        let z_field = self.factor.sample(rng);
        let exp2 = Exp::new(2.0).expect("rate 2 valid");
        let mut g_star = f64::NEG_INFINITY;
        let mut active = 0u32;
        let mut d_kl = 0.0;
        for zi in z_field.iter().map(|&phi| p.sigma0 * phi) {
            let rho = rng.gen_bool(self.p);
            let y = -kbar_gamma + exp2.sample(rng);
            if rho {
                active += 1;
                let g = y + 2.0 * ln_kl * (1.0 - s02) + (zi - 2.0 * ln_kl);
                g_star = g_star.max(g);
            }
            let s = 2.0 * ln_kl * (1.0 + s02) - zi;
            d_kl += (-2.0 * s).exp();
        }
        SurrogateOutcome {
            g_star: (active > 0).then_some(g_star),
            active_cells: active,
            d_kl,
        }
    }
}
