//! Variance profiles: the speed function σ(·) on [0,1], its squared
//! integral I_{σ²}, the weak-correlation assumption check, step envelopes,
//! and the centering constants m_N and M_n.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// Right-continuous step function: `values[i]` on `[breakpoints[i], breakpoints[i+1])`.
    Step,
    /// Linear interpolation through `(breakpoints[i], values[i])`.
    PiecewiseLinear,
}

/// The speed function σ(s) on [0,1] together with exact integration of σ².
///
/// Invariant: σ ≥ 0 and I_{σ²}(0,1) = 1 (within 1e−12).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceProfile {
    kind: ProfileKind,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl VarianceProfile {
    /// Validating constructor. For `Step`, `breakpoints` has one more entry
    /// than `values` (the cell edges, starting at 0 and ending at 1). For
    /// `PiecewiseLinear` the lengths match (knot positions and values).
    /// With `normalize`, σ is rescaled so that I_{σ²}(0,1) = 1; otherwise a
    /// profile with I ≠ 1 is rejected.
    pub fn new(
        kind: ProfileKind,
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        normalize: bool,
    ) -> Result<Self> {
        let expected = match kind {
            ProfileKind::Step => values.len() + 1,
            ProfileKind::PiecewiseLinear => values.len(),
        };
        if breakpoints.len() != expected || values.is_empty() {
            return Err(Error::Config(format!(
                "breakpoint/value count mismatch: {} breakpoints for {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.first() != Some(&0.0) || breakpoints.last() != Some(&1.0) {
            return Err(Error::Config("breakpoints must start at 0 and end at 1".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("breakpoints must be strictly ascending".into()));
        }
        if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Config("sigma values must be finite and nonnegative".into()));
        }
        let mut profile = VarianceProfile { kind, breakpoints, values };
        let total = profile.i_sigma2(0.0, 1.0)?;
        if normalize {
            if total <= 0.0 {
                return Err(Error::Config("cannot normalize a profile with zero mass".into()));
            }
            let scale = total.sqrt().recip();
            for v in &mut profile.values {
                *v *= scale;
            }
        } else if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "profile not normalized: I(0,1) = {total} (pass normalize=true to rescale)"
            )));
        }
        Ok(profile)
    }

    /// The constant profile σ ≡ 1.
    pub fn constant() -> Self {
        VarianceProfile {
            kind: ProfileKind::Step,
            breakpoints: vec![0.0, 1.0],
            values: vec![1.0],
        }
    }

    /// The two-speed profile σ² = 1/2 on [0, 1/2], 3/2 on (1/2, 1]. This is
    /// the canonical admissible (weakly correlated) example.
    pub fn two_speed() -> Self {
        VarianceProfile {
            kind: ProfileKind::Step,
            breakpoints: vec![0.0, 0.5, 1.0],
            values: vec![0.5f64.sqrt(), 1.5f64.sqrt()],
        }
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// σ(s). Step profiles are right-continuous; σ(1) is the last value.
    pub fn sigma(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match self.kind {
            ProfileKind::Step => {
                let i = match self.breakpoints[1..].iter().position(|&b| s < b) {
                    Some(i) => i,
                    None => self.values.len() - 1,
                };
                self.values[i]
            }
            ProfileKind::PiecewiseLinear => {
                let i = self
                    .breakpoints
                    .windows(2)
                    .position(|w| s <= w[1])
                    .unwrap_or(self.values.len() - 2);
                let (a, b) = (self.breakpoints[i], self.breakpoints[i + 1]);
                let t = (s - a) / (b - a);
                self.values[i] * (1.0 - t) + self.values[i + 1] * t
            }
        }
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma(0.0)
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma(1.0)
    }

    /// I_{σ²}(a,b) = ∫_a^b σ²(x) dx, exact per piece.
    pub fn i_sigma2(&self, a: f64, b: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(Error::Domain(format!("invalid integration range [{a}, {b}]")));
        }
        let mut total = 0.0;
        for i in 0..self.segment_count() {
            let (lo, hi) = self.segment(i);
            let (x0, x1) = (a.max(lo), b.min(hi));
            if x1 <= x0 {
                continue;
            }
            total += match self.kind {
                ProfileKind::Step => self.values[i] * self.values[i] * (x1 - x0),
                ProfileKind::PiecewiseLinear => {
                    // integrate (v0 + slope·(x − lo))² exactly
                    let (v0, v1) = (self.values[i], self.values[i + 1]);
                    let slope = (v1 - v0) / (hi - lo);
                    let at = |x: f64| {
                        let u = x - lo;
                        v0 * v0 * u + v0 * slope * u * u + slope * slope * u * u * u / 3.0
                    };
                    at(x1) - at(x0)
                }
            };
        }
        Ok(total)
    }

    /// Shorthand for I_{σ²}(0, λ).
    pub fn i_cum(&self, lambda: f64) -> Result<f64> {
        self.i_sigma2(0.0, lambda)
    }

    /// ∫_a^b σ(x) dx (the integral of σ itself, not σ²), exact per piece.
    /// This is the level weight of the branching-random-walk models.
    pub fn i_sigma(&self, a: f64, b: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(Error::Domain(format!("invalid integration range [{a}, {b}]")));
        }
        let mut total = 0.0;
        for i in 0..self.segment_count() {
            let (lo, hi) = self.segment(i);
            let (x0, x1) = (a.max(lo), b.min(hi));
            if x1 <= x0 {
                continue;
            }
            total += match self.kind {
                ProfileKind::Step => self.values[i] * (x1 - x0),
                ProfileKind::PiecewiseLinear => {
                    let (v0, v1) = (self.values[i], self.values[i + 1]);
                    let slope = (v1 - v0) / (hi - lo);
                    let at = |x: f64| {
                        let u = x - lo;
                        v0 * u + slope * u * u / 2.0
                    };
                    at(x1) - at(x0)
                }
            };
        }
        Ok(total)
    }

    fn segment_count(&self) -> usize {
        match self.kind {
            ProfileKind::Step => self.values.len(),
            ProfileKind::PiecewiseLinear => self.values.len() - 1,
        }
    }

    fn segment(&self, i: usize) -> (f64, f64) {
        (self.breakpoints[i], self.breakpoints[i + 1])
    }

    /// Scales at which σ changes (the interior breakpoints), used to
    /// discretize the scale integral exactly for step profiles.
    pub fn interior_breakpoints(&self) -> &[f64] {
        &self.breakpoints[1..self.breakpoints.len() - 1]
    }
}

/// Report of the weak-correlation assumption: I_{σ²}(x) < x on (0,1),
/// σ(0) < 1 < σ(1), and I_{σ²}(1) = 1.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub grid_resolution: usize,
    pub margin: f64,
    pub i_below_diagonal: bool,
    pub worst_gap: f64,
    pub worst_x: f64,
    pub sigma0_below_one: bool,
    pub sigma1_above_one: bool,
    pub normalized: bool,
    pub pass: bool,
}

/// Checks the weak-correlation assumption on a strict-margin interior grid.
pub fn check_assumption(profile: &VarianceProfile, grid_resolution: usize) -> AssumptionReport {
    let resolution = grid_resolution.max(2);
    let margin = 1e-9;
    let mut worst_gap = f64::INFINITY;
    let mut worst_x = 0.0;
    for i in 1..resolution {
        let x = i as f64 / resolution as f64;
        let gap = x - profile.i_cum(x).expect("x in [0,1]");
        if gap < worst_gap {
            worst_gap = gap;
            worst_x = x;
        }
    }
    let i_below = worst_gap > margin;
    let s0 = profile.sigma0() < 1.0;
    let s1 = profile.sigma1() > 1.0;
    let normalized = (profile.i_cum(1.0).unwrap() - 1.0).abs() <= 1e-12;
    AssumptionReport {
        grid_resolution: resolution,
        margin,
        i_below_diagonal: i_below,
        worst_gap,
        worst_x,
        sigma0_below_one: s0,
        sigma1_above_one: s1,
        normalized,
        pass: i_below && s0 && s1 && normalized,
    }
}

/// Step-function envelopes (σ₁, σ₂) with I_{σ₁²} ≤ I_{σ²} ≤ I_{σ₂²} < x on a
/// verification grid, both normalized. A step profile is its own envelope
/// pair. The construction can fail when the margin below the diagonal is too
/// tight for the requested level count.
pub fn step_envelopes(
    profile: &VarianceProfile,
    levels: usize,
) -> Result<(VarianceProfile, VarianceProfile)> {
    if !check_assumption(profile, 1024).pass {
        return Err(Error::Config("profile violates the weak-correlation assumption".into()));
    }
    if let ProfileKind::Step = profile.kind() {
        return Ok((profile.clone(), profile.clone()));
    }
    if levels < 2 {
        return Err(Error::Config("at least two envelope levels required".into()));
    }
    let mut edges = Vec::with_capacity(levels + 1);
    for i in 0..=levels {
        edges.push(i as f64 / levels as f64);
    }
    // cumulative construction: interpolate I at the nodes, shifted down/up by
    // a tent function that majorizes the per-cell interpolation error, so the
    // sandwich holds everywhere while both envelopes keep I(1) = 1 exactly
    let h = 1.0 / levels as f64;
    let nodes: Vec<f64> = edges.iter().map(|&x| profile.i_sigma2(0.0, x)).collect::<Result<_>>()?;
    let samples_per_cell = 64;
    let oscillation = edges
        .windows(2)
        .map(|w| {
            let vals = (0..=samples_per_cell)
                .map(|j| profile.sigma(w[0] + (w[1] - w[0]) * j as f64 / samples_per_cell as f64).powi(2));
            let (lo, hi) = vals.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
            (hi - lo) * h
        })
        .fold(0.0f64, f64::max);
    let tent = |i: usize| if i == 0 || i == levels { 0.0 } else { oscillation };
    let step_values = |sign: f64| -> Result<Vec<f64>> {
        edges
            .windows(2)
            .enumerate()
            .map(|(i, _)| {
                let slope =
                    (nodes[i + 1] + sign * tent(i + 1) - nodes[i] - sign * tent(i)) / h;
                if slope < 0.0 {
                    return Err(Error::Config(format!(
                        "envelope slope negative on cell {i}: increase the level count"
                    )));
                }
                Ok(slope.sqrt())
            })
            .collect()
    };
    let lower_vals = step_values(-1.0)?;
    let upper_vals = step_values(1.0)?;
    let lower = VarianceProfile::new(ProfileKind::Step, edges.clone(), lower_vals, false)?;
    let upper = VarianceProfile::new(ProfileKind::Step, edges, upper_vals, false)?;
    // verify the sandwich and the diagonal bound after normalization
    let grid = 1000;
    for i in 1..grid {
        let x = i as f64 / grid as f64;
        let (il, im, iu) = (lower.i_cum(x)?, profile.i_cum(x)?, upper.i_cum(x)?);
        if il > im + 1e-9 || im > iu + 1e-9 || iu >= x - 1e-9 {
            return Err(Error::Config(format!(
                "envelope construction infeasible at x={x}: I-values ({il}, {im}, {iu}); \
                 increase the level count or loosen the profile"
            )));
        }
    }
    Ok((lower, upper))
}

/// Centering constant m_N = 2 ln N − (ln ln N)/4 (natural logarithms).
pub fn m_centering(n_side: i64) -> Result<f64> {
    let x = n_side as f64;
    if x <= std::f64::consts::E {
        return Err(Error::Domain(format!("m_N needs N > e, got {n_side}")));
    }
    Ok(2.0 * x.ln() - x.ln().ln() / 4.0)
}

/// Level-indexed centering
/// M_n(k,t) = 2 log 2 · I_{σ²}(k/n, t/n) · n − (t ∧ (n−l̄)) ln n / (4(n−l̄)),
/// for t ∈ [k, n], with l̄ the bottom-scale offset.
pub fn level_centering(
    profile: &VarianceProfile,
    n: u32,
    lbar: u32,
    k: f64,
    t: f64,
) -> Result<f64> {
    let nf = n as f64;
    if lbar as f64 >= nf {
        return Err(Error::Domain(format!("lbar={lbar} must be below n={n}")));
    }
    if k > t || t > nf {
        return Err(Error::Domain(format!("need k <= t <= n, got k={k}, t={t}, n={n}")));
    }
    let i = profile.i_sigma2(k / nf, t / nf)?;
    Ok(2.0 * std::f64::consts::LN_2 * i * nf - t.min(nf - lbar as f64) * nf.ln() / (4.0 * (nf - lbar as f64)))
}

/// ln N = n ln 2 for N = 2^n: the single place where the natural-log and
/// level-indexed conventions are reconciled. M_n(0,n) with l̄ = 0 equals
/// 2 ln N − (ln n)/4, which differs from m_N by (ln ln 2)/4 because
/// ln ln N = ln n + ln ln 2.
pub fn ln_n_from_levels(n: u32) -> f64 {
    n as f64 * std::f64::consts::LN_2
}
