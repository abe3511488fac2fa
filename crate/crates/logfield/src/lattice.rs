//! Lattice geometry: the box V_N = ([0,N) ∩ Z)², scale boxes, torus
//! distances, partitions into sub-boxes, dyadic box families, and the
//! boundary-avoiding restricted vertex set.

use crate::error::{Error, Result};

/// A lattice point. Coordinates are signed so that shifted/dyadic box
/// arithmetic stays closed; points of V_N have coordinates in [0, N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    pub x: i64,
    pub y: i64,
}

impl Vertex {
    pub fn new(x: i64, y: i64) -> Self {
        Vertex { x, y }
    }
}

/// The dyadic box V_N with N = 2^n, plus a boundary-margin fraction used by
/// the shrunken set V_N^δ.
#[derive(Debug, Clone, Copy)]
pub struct BoxSpec {
    n: u32,
    delta: f64,
}

impl BoxSpec {
    pub fn new(n: u32, delta: f64) -> Result<Self> {
        if n == 0 || n > 20 {
            return Err(Error::Config(format!("box exponent n={n} out of range 1..=20")));
        }
        if !(0.0..0.5).contains(&delta) {
            return Err(Error::Config(format!("delta={delta} not in [0, 1/2)")));
        }
        Ok(BoxSpec { n, delta })
    }

    pub fn exponent(&self) -> u32 {
        self.n
    }

    /// Side length N = 2^n.
    pub fn side(&self) -> i64 {
        1i64 << self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn vertex_count(&self) -> usize {
        (self.side() * self.side()) as usize
    }

    pub fn contains(&self, v: Vertex) -> bool {
        let m = self.side();
        (0..m).contains(&v.x) && (0..m).contains(&v.y)
    }

    /// Row-major linear index of a vertex of V_N.
    pub fn index(&self, v: Vertex) -> usize {
        debug_assert!(self.contains(v));
        (v.x * self.side() + v.y) as usize
    }

    pub fn vertex_at(&self, index: usize) -> Vertex {
        let m = self.side();
        Vertex::new(index as i64 / m, index as i64 % m)
    }

    /// Boundary ∂V_N: vertices of V_N with fewer than four neighbours in V_N.
    pub fn is_boundary(&self, v: Vertex) -> bool {
        let m = self.side();
        v.x == 0 || v.y == 0 || v.x == m - 1 || v.y == m - 1
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        let m = self.side();
        (0..m).flat_map(move |x| (0..m).map(move |y| Vertex::new(x, y)))
    }

    pub fn interior_vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.vertices().filter(|&v| !self.is_boundary(v))
    }

    /// V_N^δ: vertices at distance ≥ δN from the complement of V_N.
    pub fn shrunken_vertices(&self) -> Vec<Vertex> {
        let m = self.side();
        let margin = self.delta * m as f64;
        self.vertices()
            .filter(|v| {
                let d = [v.x + 1, m - v.x, v.y + 1, m - v.y]
                    .into_iter()
                    .min()
                    .unwrap() as f64;
                d >= margin
            })
            .collect()
    }
}

/// The closed square of side N^{1−λ} centered at v, intersected with V_N.
/// λ = 0 is all of V_N and λ = 1 is {v}, by definition.
#[derive(Debug, Clone, Copy)]
pub struct ScaleBox {
    pub center: Vertex,
    pub lambda: f64,
    pub x_range: (i64, i64),
    pub y_range: (i64, i64),
}

impl ScaleBox {
    pub fn contains(&self, v: Vertex) -> bool {
        (self.x_range.0..=self.x_range.1).contains(&v.x)
            && (self.y_range.0..=self.y_range.1).contains(&v.y)
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        (x0..=x1).flat_map(move |x| (y0..=y1).map(move |y| Vertex::new(x, y)))
    }

    pub fn side_lengths(&self) -> (i64, i64) {
        (
            self.x_range.1 - self.x_range.0 + 1,
            self.y_range.1 - self.y_range.0 + 1,
        )
    }
}

/// Scale box [v]_λ. Half-width is rounded symmetrically (ceil on the left
/// endpoint, floor on the right), keeping v centered and nesting monotone.
pub fn scale_box(v: Vertex, lambda: f64, spec: &BoxSpec) -> Result<ScaleBox> {
    if !spec.contains(v) {
        return Err(Error::Domain(format!("vertex {v:?} outside V_{}", spec.side())));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda={lambda} not in [0,1]")));
    }
    let m = spec.side();
    let (x_range, y_range) = if lambda == 0.0 {
        ((0, m - 1), (0, m - 1))
    } else {
        let half = 0.5 * (m as f64).powf(1.0 - lambda);
        let clip = |c: i64| -> (i64, i64) {
            let lo = (c as f64 - half).ceil() as i64;
            let hi = (c as f64 + half).floor() as i64;
            (lo.max(0), hi.min(m - 1))
        };
        (clip(v.x), clip(v.y))
    };
    Ok(ScaleBox { center: v, lambda, x_range, y_range })
}

/// Torus distances on (Z/NZ)²: the minimum of ‖u − v − z‖ over shifts
/// z ∈ (NZ)², for the Euclidean and sup norms.
pub fn torus_distance(u: Vertex, v: Vertex, n_side: i64) -> (f64, f64) {
    let wrap = |d: i64| -> i64 {
        let r = (d % n_side + n_side) % n_side;
        r.min(n_side - r)
    };
    let dx = wrap(u.x - v.x) as f64;
    let dy = wrap(u.y - v.y) as f64;
    (dx.hypot(dy), dx.max(dy))
}

/// A partition of V_N into disjoint axis-aligned square cells.
#[derive(Debug, Clone)]
pub struct Partition {
    parent_side: i64,
    cell_side: i64,
}

impl Partition {
    pub fn new(spec: &BoxSpec, cell_side: i64) -> Result<Self> {
        let m = spec.side();
        if cell_side < 1 || m % cell_side != 0 {
            return Err(Error::Config(format!(
                "cell side {cell_side} does not divide N={m}"
            )));
        }
        Ok(Partition { parent_side: m, cell_side })
    }

    pub fn cell_side(&self) -> i64 {
        self.cell_side
    }

    pub fn cells_per_axis(&self) -> i64 {
        self.parent_side / self.cell_side
    }

    pub fn cell_count(&self) -> usize {
        let c = self.cells_per_axis();
        (c * c) as usize
    }

    /// Left-bottom corners, row-major.
    pub fn corners(&self) -> Vec<Vertex> {
        let c = self.cells_per_axis();
        let s = self.cell_side;
        (0..c)
            .flat_map(|i| (0..c).map(move |j| Vertex::new(i * s, j * s)))
            .collect()
    }

    /// Row-major index of the cell containing v.
    pub fn cell_index(&self, v: Vertex) -> usize {
        let c = self.cells_per_axis();
        ((v.x / self.cell_side) * c + v.y / self.cell_side) as usize
    }

    /// Left-bottom corner of the cell containing v.
    pub fn corner_of(&self, v: Vertex) -> Vertex {
        Vertex::new(
            v.x / self.cell_side * self.cell_side,
            v.y / self.cell_side * self.cell_side,
        )
    }

    /// Offset of v inside its cell (the residue of v modulo the cell side).
    pub fn residue_of(&self, v: Vertex) -> Vertex {
        Vertex::new(v.x % self.cell_side, v.y % self.cell_side)
    }

    pub fn cell_vertices(&self, cell: usize) -> impl Iterator<Item = Vertex> + '_ {
        let c = self.cells_per_axis();
        let s = self.cell_side;
        let corner = Vertex::new(cell as i64 / c * s, cell as i64 % c * s);
        (0..s).flat_map(move |dx| (0..s).map(move |dy| Vertex::new(corner.x + dx, corner.y + dy)))
    }
}

/// Index of the side-2^k dyadic box containing v (the aligned partition of Z²
/// into squares of side 2^k).
pub fn dyadic_box_index(v: Vertex, k: u32) -> (i64, i64) {
    (v.x >> k, v.y >> k)
}

/// The boundary-avoiding set V*_{N,δ}: the intersection of the unions of
/// δ-shrunk cells of the N/L-, N/KL-, L- and KL-partitions. A cell's
/// δ-shrink keeps vertices whose distance to the outer vertex boundary of
/// the cell is at least δ times the cell side.
pub fn restricted_set(spec: &BoxSpec, k: i64, l: i64, delta: f64) -> Result<Vec<Vertex>> {
    let m = spec.side();
    let sides = [m / l, m / (k * l), l, k * l];
    for &s in &sides {
        if s < 2 || m % s != 0 || (s & (s - 1)) != 0 {
            return Err(Error::Config(format!(
                "side {s} invalid for N={m}: dyadic sides >= 2 dividing N required"
            )));
        }
    }
    // per-axis admissibility for each partition side
    let axis_mask = |side: i64| -> Vec<bool> {
        (0..m)
            .map(|x| {
                let r = x % side;
                let dist = (r.min(side - 1 - r) + 1) as f64;
                dist >= delta * side as f64
            })
            .collect()
    };
    let masks: Vec<Vec<bool>> = sides.iter().map(|&s| axis_mask(s)).collect();
    let ok = |x: i64| masks.iter().all(|mask| mask[x as usize]);
    Ok(spec
        .vertices()
        .filter(|v| ok(v.x) && ok(v.y))
        .collect())
}

/// Lower bound on |V*_{N,δ}| from the construction: (1 − 16δ)·|V_N|.
pub fn restricted_set_lower_bound(spec: &BoxSpec, delta: f64) -> f64 {
    (1.0 - 16.0 * delta).max(0.0) * spec.vertex_count() as f64
}
