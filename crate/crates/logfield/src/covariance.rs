//! Exact covariance machinery: Green matrices with Dirichlet boundary,
//! harmonic (exit) kernels, the linear-functional representation of the
//! scale-inhomogeneous field, closed-form branching-random-walk covariances,
//! deviation diagnostics against the asymptotic log formulas, and tabulated
//! continuum kernels.

use crate::error::{Error, Result};
use crate::lattice::{scale_box, BoxSpec, Vertex};
use crate::profile::{ProfileKind, VarianceProfile};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::f64::consts::{LN_2, PI};

/// Dense solves (Green matrix, exit kernels, ψ covariance) are capped at this
/// side length; larger boxes must use the sampler-based models.
pub const DENSE_GUARD_N: i64 = 64;

const NEIGHBOR_STEPS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// A dense symmetric covariance over the vertices of V_N (row-major index),
/// with zero rows exactly on ∂V_N for Dirichlet fields.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    matrix: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Numeric("covariance matrix must be square".into()));
        }
        let asym = (&matrix - matrix.transpose()).abs().max();
        if asym > 1e-9 {
            return Err(Error::Numeric(format!("covariance asymmetry {asym}")));
        }
        Ok(CovarianceMatrix { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// Smallest eigenvalue; the PSD invariant demands it be at least
    /// −1e−8 · trace/dim. O(dim³): intended for moderate sizes.
    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn psd_tolerance(&self) -> f64 {
        1e-8 * self.matrix.trace() / self.dim() as f64
    }
}

/// Green matrix of V_N: G(u,v) = (π/2) · expected visits to v of the simple
/// random walk from u, killed on ∂V_N. Solved via the absorbing-chain system
/// on the interior; boundary rows and columns are zero.
pub fn green_matrix(spec: &BoxSpec) -> Result<CovarianceMatrix> {
    green_matrix_for_side(spec.side())
}

/// Green matrix for an arbitrary (not necessarily dyadic) box side, row-major
/// indexed. Shares the dense-solve guard.
pub fn green_matrix_for_side(m: i64) -> Result<CovarianceMatrix> {
    if m < 2 {
        return Err(Error::Domain(format!("Green matrix needs N >= 2, got {m}")));
    }
    if m == 2 {
        // every vertex is boundary: the field is identically zero
        return CovarianceMatrix::from_matrix(DMatrix::zeros(4, 4));
    }
    if m > DENSE_GUARD_N {
        return Err(Error::Size(format!(
            "N={m} exceeds the dense-solve guard {DENSE_GUARD_N}; use a sampler-based model"
        )));
    }
    let flat = |v: Vertex| (v.x * m + v.y) as usize;
    let interior: Vec<Vertex> = (1..m - 1)
        .flat_map(|x| (1..m - 1).map(move |y| Vertex::new(x, y)))
        .collect();
    let index: Vec<i64> = {
        let mut idx = vec![-1i64; (m * m) as usize];
        for (i, &v) in interior.iter().enumerate() {
            idx[flat(v)] = i as i64;
        }
        idx
    };
    let k = interior.len();
    let mut a = DMatrix::<f64>::identity(k, k);
    for (i, &v) in interior.iter().enumerate() {
        for (dx, dy) in NEIGHBOR_STEPS {
            let w = Vertex::new(v.x + dx, v.y + dy);
            let j = index[flat(w)];
            if j >= 0 {
                a[(i, j as usize)] -= 0.25;
            }
        }
    }
    let inv = a
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("absorbing-chain system singular".into()))?;
    let dim = (m * m) as usize;
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    for (i, &u) in interior.iter().enumerate() {
        let iu = flat(u);
        for (j, &v) in interior.iter().enumerate() {
            g[(iu, flat(v))] = PI / 2.0 * inv[(i, j)];
        }
    }
    CovarianceMatrix::from_matrix(g)
}

/// Exit distribution of the simple random walk from a source vertex, absorbed
/// on the complement of a free set.
#[derive(Debug, Clone)]
pub struct HarmonicKernel {
    pub source: Vertex,
    /// Absorption vertices with hit probabilities; sums to 1.
    pub weights: Vec<(Vertex, f64)>,
}

impl HarmonicKernel {
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum()
    }
}

/// Exit kernel from `free`: the walk starts at `source` and is absorbed the
/// first time it leaves the free set. `source` must be in the free set (a
/// source outside it yields the point mass at itself).
pub fn exit_kernel(free: &[Vertex], source: Vertex) -> Result<HarmonicKernel> {
    use std::collections::HashMap;
    let index: HashMap<Vertex, usize> = free.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let Some(&src) = index.get(&source) else {
        return Ok(HarmonicKernel { source, weights: vec![(source, 1.0)] });
    };
    let k = free.len();
    let mut a = DMatrix::<f64>::identity(k, k);
    for (i, &v) in free.iter().enumerate() {
        for (dx, dy) in NEIGHBOR_STEPS {
            if let Some(&j) = index.get(&Vertex::new(v.x + dx, v.y + dy)) {
                a[(i, j)] -= 0.25;
            }
        }
    }
    // expected visits: (I − Q)ᵀ ν = e_source
    let mut rhs = DVector::<f64>::zeros(k);
    rhs[src] = 1.0;
    let visits = a
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("exit-kernel system singular".into()))?;
    let mut weights: Vec<(Vertex, f64)> = Vec::new();
    let mut acc: HashMap<Vertex, f64> = HashMap::new();
    for (i, &v) in free.iter().enumerate() {
        for (dx, dy) in NEIGHBOR_STEPS {
            let w = Vertex::new(v.x + dx, v.y + dy);
            if !index.contains_key(&w) {
                *acc.entry(w).or_insert(0.0) += 0.25 * visits[i];
            }
        }
    }
    weights.extend(acc);
    weights.sort_by_key(|&(v, _)| v);
    Ok(HarmonicKernel { source, weights })
}

/// Exit kernel of the scale box [v]_λ inside V_N. The free set consists of the
/// box vertices that are off ∂V_N and have all four neighbours inside the box;
/// the field is conditioned on everything outside it.
pub fn harmonic_kernel(spec: &BoxSpec, v: Vertex, lambda: f64) -> Result<HarmonicKernel> {
    let sbox = scale_box(v, lambda, spec)?;
    let free: Vec<Vertex> = sbox
        .vertices()
        .filter(|&p| {
            !spec.is_boundary(p)
                && NEIGHBOR_STEPS
                    .iter()
                    .all(|&(dx, dy)| sbox.contains(Vertex::new(p.x + dx, p.y + dy)))
        })
        .collect();
    exit_kernel(&free, v)
}

/// Rows a_v expressing the scale-inhomogeneous field as a linear image
/// ψ = A·φ of the DGFF φ on V_N. Rows are sparse (vertex index, weight)
/// lists over V_N.
#[derive(Debug, Clone)]
pub struct LinearFunctionalMatrix {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
    scales: Vec<f64>,
}

impl LinearFunctionalMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Applies the functional to a field vector: (A·φ).
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * field[j]).sum())
            .collect()
    }

    /// A·G·Aᵀ as a dense covariance.
    pub fn conjugate(&self, g: &CovarianceMatrix) -> Result<CovarianceMatrix> {
        let dim = self.dim;
        if g.dim() != dim {
            return Err(Error::Numeric("dimension mismatch in A·G·Aᵀ".into()));
        }
        let gm = g.matrix();
        // B = A·G
        let mut b = DMatrix::<f64>::zeros(dim, dim);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for col in 0..dim {
                    b[(i, col)] += w * gm[(j, col)];
                }
            }
        }
        // C = B·Aᵀ
        let mut c = DMatrix::<f64>::zeros(dim, dim);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                let src = b.column(j);
                let mut dst = c.column_mut(i);
                dst.axpy(w, &src, 1.0);
            }
        }
        // symmetrize away accumulation noise
        let sym = (&c + c.transpose()) * 0.5;
        CovarianceMatrix::from_matrix(sym)
    }
}

/// The functional matrix of ψ for a step profile:
/// a_v = Σ_i σ_i · (L_{v,λ_i} − L_{v,λ_{i−1}}) with L_{v,λ} the exit-kernel
/// functional of [v]_λ pushed to V_N (∂V_N entries dropped since the field
/// vanishes there); L_{v,0} ≡ 0 and L_{v,1} = e_v on the interior.
pub fn psi_functional_matrix(
    spec: &BoxSpec,
    profile: &VarianceProfile,
) -> Result<LinearFunctionalMatrix> {
    if profile.kind() != ProfileKind::Step {
        return Err(Error::Config(
            "psi functional rows need a step profile; build step envelopes first".into(),
        ));
    }
    let m = spec.side();
    if m > DENSE_GUARD_N {
        return Err(Error::Size(format!(
            "N={m} exceeds the dense-solve guard {DENSE_GUARD_N}; use a sampler-based model"
        )));
    }
    let dim = spec.vertex_count();
    let scales: Vec<f64> = profile.breakpoints().to_vec();
    let sigmas: Vec<f64> = profile.values().to_vec();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
    for v in spec.vertices() {
        let iv = spec.index(v);
        let mut acc: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
        let mut prev: Vec<(usize, f64)> = Vec::new(); // L_{v,0} projected to the interior
        for (i, &sigma) in sigmas.iter().enumerate() {
            let lambda = scales[i + 1];
            let next: Vec<(usize, f64)> = if lambda >= 1.0 {
                if spec.is_boundary(v) {
                    Vec::new()
                } else {
                    vec![(iv, 1.0)]
                }
            } else {
                let kernel = harmonic_kernel(spec, v, lambda)?;
                kernel
                    .weights
                    .iter()
                    .filter(|&&(w, _)| spec.contains(w) && !spec.is_boundary(w))
                    .map(|&(w, p)| (spec.index(w), p))
                    .collect()
            };
            for &(j, p) in &next {
                *acc.entry(j).or_insert(0.0) += sigma * p;
            }
            for &(j, p) in &prev {
                *acc.entry(j).or_insert(0.0) -= sigma * p;
            }
            prev = next;
        }
        let mut row: Vec<(usize, f64)> =
            acc.into_iter().filter(|&(_, w)| w.abs() > 1e-14).collect();
        row.sort_by_key(|&(j, _)| j);
        rows[iv] = row;
    }
    Ok(LinearFunctionalMatrix { dim, rows, scales })
}

/// Exact covariance of ψ on V_N: A·G·Aᵀ.
pub fn psi_covariance(spec: &BoxSpec, profile: &VarianceProfile) -> Result<CovarianceMatrix> {
    let a = psi_functional_matrix(spec, profile)?;
    let g = green_matrix(spec)?;
    a.conjugate(&g)
}

/// Level weight of the branching-random-walk models:
/// w_k = ∫_{n−k−1}^{n−k} σ(s/n) ds = n ∫ σ over the matching unit fraction.
/// Level k owns boxes of side 2^k, so k = 0 is the finest scale (σ near 1)
/// and k = n−1 the coarsest (σ near 0); the n integrals tile [0, n].
pub fn level_weight(profile: &VarianceProfile, n: u32, k: u32) -> Result<f64> {
    if k >= n {
        return Err(Error::Domain(format!("level k={k} out of range for n={n}")));
    }
    let nf = n as f64;
    Ok(nf * profile.i_sigma((n - k - 1) as f64 / nf, (n - k) as f64 / nf)?)
}

/// IBRW covariance: log 2 · Σ w_k² over the dyadic levels k at which u and v
/// share their BD_k box.
pub fn ibrw_cov(profile: &VarianceProfile, n: u32, u: Vertex, v: Vertex) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..n {
        if crate::lattice::dyadic_box_index(u, k) == crate::lattice::dyadic_box_index(v, k) {
            let w = level_weight(profile, n, k)?;
            total += LN_2 * w * w;
        }
    }
    Ok(total)
}

/// Number of side-`side` squares (per axis) containing both of two points at
/// torus displacement `d` on a torus of side `m`: corners may sit anywhere on
/// the torus, so the count is the overlap of two length-`side` windows.
fn axis_overlap(side: i64, d: i64, m: i64) -> i64 {
    let dm = ((d % m) + m) % m;
    let mut o = (side - dm).max(0);
    if dm > 0 {
        o += (side - (m - dm)).max(0);
    }
    o
}

/// MIBRW covariance on the side-N torus:
/// log 2 · Σ_k 2^{−2k} w_k² · #{side-2^k torus squares containing u and v}.
pub fn mibrw_cov(profile: &VarianceProfile, n: u32, u: Vertex, v: Vertex) -> Result<f64> {
    mibrw_cov_levels(profile, n, 0, n - 1, 1i64 << n, u, v)
}

/// MIBRW covariance restricted to levels k_lo ..= k_hi, periodized on a torus
/// of side `torus_side` (which must be at least the largest box side).
pub fn mibrw_cov_levels(
    profile: &VarianceProfile,
    n: u32,
    k_lo: u32,
    k_hi: u32,
    torus_side: i64,
    u: Vertex,
    v: Vertex,
) -> Result<f64> {
    if k_hi >= n || k_lo > k_hi {
        return Err(Error::Domain(format!("level range {k_lo}..={k_hi} invalid for n={n}")));
    }
    if (1i64 << k_hi) > torus_side {
        return Err(Error::Domain(format!(
            "box side {} exceeds torus side {torus_side}",
            1i64 << k_hi
        )));
    }
    let mut total = 0.0;
    for k in k_lo..=k_hi {
        let side = 1i64 << k;
        let ox = axis_overlap(side, u.x - v.x, torus_side);
        let oy = axis_overlap(side, u.y - v.y, torus_side);
        if ox == 0 || oy == 0 {
            continue;
        }
        let w = level_weight(profile, n, k)?;
        total += LN_2 * 0.25f64.powi(k as i32) * w * w * (ox * oy) as f64;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationModel {
    Dgff,
    Psi,
    Mibrw,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationEntry {
    pub n_side: i64,
    pub sup_deviation: f64,
    pub argmax_pair: ((i64, i64), (i64, i64)),
}

/// Sup deviations of exact covariances from their asymptotic log-formula
/// targets, per side length; the empirical α is the max over the list.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub model: DeviationModel,
    pub entries: Vec<DeviationEntry>,
    /// sup over all tested N of the sup deviation
    pub alpha_bar: f64,
    /// the constant handed to downstream formulas: 2·alpha_bar (safety factor)
    pub alpha_hat: f64,
    pub growing: bool,
}

/// Computes sup |cov(u,v) − target(u,v)| over pairs of `region`, where the
/// target is the log-formula of the respective model:
/// DGFF (σ≡1): ln N − ln₊‖u−v‖₂; ψ: ln N · I_{σ²}(1 − ln₊‖u−v‖₂/ln N);
/// MIBRW: the same with the torus distance.
pub fn deviation_alpha(
    model: DeviationModel,
    profile: &VarianceProfile,
    exponents: &[u32],
    margin: f64,
) -> Result<DeviationReport> {
    let mut entries = Vec::new();
    for &n in exponents {
        let spec = BoxSpec::new(n, 0.0)?;
        let m = spec.side();
        let lo = margin * m as f64;
        let hi = (1.0 - margin) * m as f64;
        let region: Vec<Vertex> = spec
            .vertices()
            .filter(|v| {
                let in_band = |c: i64| (c as f64) > lo && (c as f64) < hi;
                in_band(v.x) && in_band(v.y)
            })
            .collect();
        if region.is_empty() {
            return Err(Error::Domain(format!("margin {margin} empties V_{m}")));
        }
        let cov = match model {
            DeviationModel::Dgff | DeviationModel::Psi => Some(psi_covariance(&spec, profile)?),
            DeviationModel::Mibrw => None,
        };
        let ln_n = (m as f64).ln();
        let mut sup = 0.0f64;
        let mut arg = (region[0], region[0]);
        for (i, &u) in region.iter().enumerate() {
            for &v in &region[i..] {
                let (c, d) = match model {
                    DeviationModel::Dgff | DeviationModel::Psi => {
                        let c = cov.as_ref().unwrap().value(spec.index(u), spec.index(v));
                        let d = (((u.x - v.x).pow(2) + (u.y - v.y).pow(2)) as f64).sqrt();
                        (c, d)
                    }
                    DeviationModel::Mibrw => {
                        let c = mibrw_cov(profile, n, u, v)?;
                        let d = crate::lattice::torus_distance(u, v, m).0;
                        (c, d)
                    }
                };
                let log_plus = if d > 1.0 { d.ln() } else { 0.0 };
                let target = match model {
                    DeviationModel::Dgff => ln_n - log_plus,
                    DeviationModel::Psi | DeviationModel::Mibrw => {
                        // planar distances can slightly exceed N; the scale
                        // argument of I lives in [0, 1]
                        ln_n * profile.i_cum((1.0 - log_plus / ln_n).max(0.0))?
                    }
                };
                let dev = (c - target).abs();
                if dev > sup {
                    sup = dev;
                    arg = (u, v);
                }
            }
        }
        entries.push(DeviationEntry {
            n_side: m,
            sup_deviation: sup,
            argmax_pair: ((arg.0.x, arg.0.y), (arg.1.x, arg.1.y)),
        });
    }
    let alpha_bar = entries.iter().map(|e| e.sup_deviation).fold(0.0, f64::max);
    let growing = entries
        .windows(2)
        .all(|w| w[1].sup_deviation > w[0].sup_deviation * 1.05)
        && entries.len() > 1;
    Ok(DeviationReport {
        model,
        entries,
        alpha_bar,
        alpha_hat: 2.0 * alpha_bar,
        growing,
    })
}

/// Tabulated continuum kernels on the unit square:
/// f(x) = ∫ Π(x, dz) ln‖z − x‖ (harmonic measure Π from x), and
/// h(x,y) = −ln‖x−y‖ + ∫ Π(x, dz) ln‖z − y‖, both approximated on a fine
/// lattice of the given resolution.
pub struct ContinuumKernels {
    resolution: i64,
    grid_divisions: usize,
    /// f on the (grid_divisions+1)² grid; boundary entries are −inf stand-ins.
    f_table: Vec<f64>,
    interior: Vec<Vertex>,
    index: Vec<i64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ContinuumKernels {
    /// Builds the interior-Laplacian factorization at `resolution` and
    /// tabulates f on a 17×17 grid. Resolutions below 32 are refused.
    pub fn new(resolution: i64) -> Result<Self> {
        Self::with_grid(resolution, 16)
    }

    pub fn with_grid(resolution: i64, grid_divisions: usize) -> Result<Self> {
        if resolution < 32 {
            return Err(Error::Numeric(format!(
                "resolution {resolution} too coarse for kernel tabulation (need >= 32)"
            )));
        }
        let r = resolution;
        let interior: Vec<Vertex> = (1..r - 1)
            .flat_map(|x| (1..r - 1).map(move |y| Vertex::new(x, y)))
            .collect();
        let mut index = vec![-1i64; (r * r) as usize];
        for (i, &v) in interior.iter().enumerate() {
            index[(v.x * r + v.y) as usize] = i as i64;
        }
        let k = interior.len();
        let mut a = DMatrix::<f64>::identity(k, k);
        for (i, &v) in interior.iter().enumerate() {
            for (dx, dy) in NEIGHBOR_STEPS {
                let w = Vertex::new(v.x + dx, v.y + dy);
                if (0..r).contains(&w.x) && (0..r).contains(&w.y) {
                    let j = index[(w.x * r + w.y) as usize];
                    if j >= 0 {
                        a[(i, j as usize)] -= 0.25;
                    }
                }
            }
        }
        let lu = a.lu();
        let mut kernels = ContinuumKernels {
            resolution: r,
            grid_divisions,
            f_table: Vec::new(),
            interior,
            index,
            lu,
        };
        let g = grid_divisions;
        let mut table = vec![f64::NEG_INFINITY; (g + 1) * (g + 1)];
        for i in 1..g {
            for j in 1..g {
                let x = (i as f64 / g as f64, j as f64 / g as f64);
                table[i * (g + 1) + j] = kernels.harmonic_log_potential(x, x)?;
            }
        }
        kernels.f_table = table;
        Ok(kernels)
    }

    /// Solves the Dirichlet problem with boundary data z ↦ ln‖z − y‖ and
    /// evaluates at the lattice point nearest x (both in unit-square
    /// coordinates).
    fn harmonic_log_potential(&self, x: (f64, f64), y: (f64, f64)) -> Result<f64> {
        let r = self.resolution;
        let k = self.interior.len();
        let mut rhs = DVector::<f64>::zeros(k);
        for (i, &v) in self.interior.iter().enumerate() {
            for (dx, dy) in NEIGHBOR_STEPS {
                let w = Vertex::new(v.x + dx, v.y + dy);
                let inside = (1..r - 1).contains(&w.x) && (1..r - 1).contains(&w.y);
                if !inside {
                    // lattice index s maps to s/(r-1), so the box fills [0,1]²
                    let dzx = w.x as f64 / (r - 1) as f64 - y.0;
                    let dzy = w.y as f64 / (r - 1) as f64 - y.1;
                    rhs[i] += 0.25 * dzx.hypot(dzy).max(1e-12).ln();
                }
            }
        }
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("harmonic solve failed".into()))?;
        let px = ((x.0 * (r - 1) as f64).round() as i64).clamp(1, r - 2);
        let py = ((x.1 * (r - 1) as f64).round() as i64).clamp(1, r - 2);
        let i = self.index[(px * r + py) as usize];
        Ok(sol[i as usize])
    }

    /// f(x) by bilinear interpolation of the tabulation; x is clamped to the
    /// interior grid band.
    pub fn f(&self, x: (f64, f64)) -> f64 {
        let g = self.grid_divisions as f64;
        let clamp = |c: f64| c.clamp(1.0 / g, (g - 1.0) / g - 1e-9);
        let (cx, cy) = (clamp(x.0) * g, clamp(x.1) * g);
        let (i, j) = (cx.floor() as usize, cy.floor() as usize);
        let (tx, ty) = (cx - i as f64, cy - j as f64);
        let at = |a: usize, b: usize| self.f_table[a * (self.grid_divisions + 1) + b];
        at(i, j) * (1.0 - tx) * (1.0 - ty)
            + at(i + 1, j) * tx * (1.0 - ty)
            + at(i, j + 1) * (1.0 - tx) * ty
            + at(i + 1, j + 1) * tx * ty
    }

    /// h(x,y) = −ln‖x−y‖ + ∫ Π(x,dz) ln‖z−y‖ (continuous and symmetric).
    pub fn h(&self, x: (f64, f64), y: (f64, f64)) -> Result<f64> {
        let d = (x.0 - y.0).hypot(x.1 - y.1).max(1e-12);
        Ok(-d.ln() + self.harmonic_log_potential(x, y)?)
    }

    pub fn resolution(&self) -> i64 {
        self.resolution
    }
}

/// Estimates the near-diagonal constant g(a,b) of the ψ covariance as the
/// residual E[ψ_{c+a} ψ_{c+b}] − ln N − σ²(0)·f(c/N) at the center c of the
/// largest dense box, scaled by −1/σ²(1). Only pinned up to the stated limit;
/// used as a variance offset for large-N inputs.
pub fn estimate_g(
    profile: &VarianceProfile,
    kernels: &ContinuumKernels,
    exponent: u32,
    a: Vertex,
    b: Vertex,
) -> Result<f64> {
    let spec = BoxSpec::new(exponent, 0.0)?;
    let m = spec.side();
    let cov = psi_covariance(&spec, profile)?;
    let c = Vertex::new(m / 2, m / 2);
    let (u, v) = (Vertex::new(c.x + a.x, c.y + a.y), Vertex::new(c.x + b.x, c.y + b.y));
    let e = cov.value(spec.index(u), spec.index(v));
    let f = kernels.f((c.x as f64 / m as f64, c.y as f64 / m as f64));
    let s0 = profile.sigma0();
    let s1 = profile.sigma1();
    Ok(-(e - (m as f64).ln() - s0 * s0 * f) / (s1 * s1))
}
