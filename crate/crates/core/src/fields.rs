//! Cell-centered grid fields, difference operators and weighted norms.
//!
//! A [`Grid`] holds the cells of a uniform lattice whose centers lie in the
//! interior of the domain and inside a window. Fields are plain value arrays
//! aligned with `grid.cells`; quadrature is the midpoint rule.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::gallery::{PlacementTable, RoomPlacement};
use crate::geom::{Point, Rect, RectDomain};

/// Every exponent appearing in the inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentParams {
    pub p: f64,
    pub q: f64,
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub sigma: f64,
    pub tau: f64,
    pub beta: f64,
    pub n: f64,
}

impl Default for ExponentParams {
    fn default() -> Self {
        ExponentParams {
            p: 2.0,
            q: 2.0,
            a: 0.0,
            b: 0.0,
            s: 1.0,
            sigma: 1.0,
            tau: 1.0,
            beta: 1.0,
            n: 2.0,
        }
    }
}

impl ExponentParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.p, self.q, self.a, self.b, self.s, self.sigma, self.tau, self.beta, self.n];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter("non-finite exponent".into()));
        }
        if self.a < 0.0 {
            return Err(LabError::InvalidParameter("a must be >= 0".into()));
        }
        if self.p < 1.0 {
            return Err(LabError::InvalidParameter("p must be >= 1".into()));
        }
        if self.n < 2.0 {
            return Err(LabError::InvalidParameter("n must be >= 2".into()));
        }
        Ok(())
    }

    pub fn validate_korn(&self) -> Result<()> {
        self.validate()?;
        if self.p <= 1.0 {
            return Err(LabError::InvalidParameter("Korn inequalities need p > 1".into()));
        }
        Ok(())
    }
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct Grid {
    pub h: f64,
    pub origin: Point,
    pub nx: usize,
    pub ny: usize,
    /// Lattice indices `(i, j)` of the retained cells.
    pub cells: Vec<(i64, i64)>,
    pub centers: Vec<Point>,
    pub rho: Vec<f64>,
    lookup: Vec<u32>,
}

impl Grid {
    /// Cells of spacing `h` tiling `window` from its lower-left corner.
    pub fn new(domain: &RectDomain, window: Rect, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(LabError::InvalidParameter("grid spacing must be positive".into()));
        }
        let nx = (window.width() / h).round().max(1.0) as usize;
        let ny = (window.height() / h).round().max(1.0) as usize;
        let origin = Point::new(window.x0, window.y0);
        let mut lookup = vec![NONE; nx * ny];
        let mut cells = Vec::new();
        let mut centers = Vec::new();
        let mut rho = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let c = Point::new(origin.x + (i as f64 + 0.5) * h, origin.y + (j as f64 + 0.5) * h);
                if !window.contains(c) || !domain.contains(c) {
                    continue;
                }
                let r = domain.distance_to_boundary_unchecked(c);
                if r <= 0.0 {
                    continue;
                }
                lookup[j * nx + i] = cells.len() as u32;
                cells.push((i as i64, j as i64));
                centers.push(c);
                rho.push(r);
            }
        }
        if cells.is_empty() {
            return Err(LabError::InvalidParameter("grid has no cells in the domain".into()));
        }
        Ok(Grid {
            h,
            origin,
            nx,
            ny,
            cells,
            centers,
            rho,
            lookup,
        })
    }

    /// Grid over the whole bounding box.
    pub fn uniform(domain: &RectDomain, h: f64) -> Result<Self> {
        Self::new(domain, domain.bbox(), h)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// Cell id at lattice position `(i, j)`.
    pub fn id(&self, i: i64, j: i64) -> Option<usize> {
        if i < 0 || j < 0 || i as usize >= self.nx || j as usize >= self.ny {
            return None;
        }
        let v = self.lookup[j as usize * self.nx + i as usize];
        (v != NONE).then_some(v as usize)
    }

    /// Cell containing `p`.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let i = ((p.x - self.origin.x) / self.h).floor() as i64;
        let j = ((p.y - self.origin.y) / self.h).floor() as i64;
        self.id(i, j)
    }

    /// Cell has all four lattice neighbours.
    pub fn is_interior(&self, id: usize) -> bool {
        let (i, j) = self.cells[id];
        self.id(i - 1, j).is_some()
            && self.id(i + 1, j).is_some()
            && self.id(i, j - 1).is_some()
            && self.id(i, j + 1).is_some()
    }

    pub fn sample(&self, f: impl Fn(Point) -> f64) -> ScalarField {
        ScalarField {
            values: self.centers.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn sample_vector(&self, f: impl Fn(Point) -> [f64; 2]) -> VectorField {
        let mut x = Vec::with_capacity(self.len());
        let mut y = Vec::with_capacity(self.len());
        for &p in &self.centers {
            let v = f(p);
            x.push(v[0]);
            y.push(v[1]);
        }
        VectorField { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Per-cell 2×2 matrices `[m11, m12, m21, m22]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub m: Vec<[f64; 4]>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { values: vec![0.0; n] }
    }
}

impl VectorField {
    pub fn zeros(n: usize) -> Self {
        VectorField {
            x: vec![0.0; n],
            y: vec![0.0; n],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        VectorField {
            x: self.x.iter().map(|v| c * v).collect(),
            y: self.y.iter().map(|v| c * v).collect(),
        }
    }
}

/// Pointwise magnitude: absolute value, Euclidean or Frobenius norm.
pub trait Pointwise {
    fn magnitude(&self, id: usize) -> f64;
    fn cells(&self) -> usize;
}

impl Pointwise for ScalarField {
    fn magnitude(&self, id: usize) -> f64 {
        self.values[id].abs()
    }
    fn cells(&self) -> usize {
        self.values.len()
    }
}

impl Pointwise for VectorField {
    fn magnitude(&self, id: usize) -> f64 {
        self.x[id].hypot(self.y[id])
    }
    fn cells(&self) -> usize {
        self.x.len()
    }
}

impl Pointwise for TensorField {
    fn magnitude(&self, id: usize) -> f64 {
        let m = self.m[id];
        (m[0] * m[0] + m[1] * m[1] + m[2] * m[2] + m[3] * m[3]).sqrt()
    }
    fn cells(&self) -> usize {
        self.m.len()
    }
}

/// Derivative along one axis: central, then second-order one-sided, then
/// first-order one-sided differences. `None` when the cell has no neighbour
/// on that axis.
fn axis_derivative(grid: &Grid, u: &[f64], id: usize, dx: i64, dy: i64) -> Option<f64> {
    let (i, j) = grid.cells[id];
    let h = grid.h;
    let at = |k: i64| grid.id(i + k * dx, j + k * dy);
    match (at(-1), at(1)) {
        (Some(m), Some(p)) => Some((u[p] - u[m]) / (2.0 * h)),
        (None, Some(p)) => Some(match at(2) {
            Some(p2) => (-3.0 * u[id] + 4.0 * u[p] - u[p2]) / (2.0 * h),
            None => (u[p] - u[id]) / h,
        }),
        (Some(m), None) => Some(match at(-2) {
            Some(m2) => (3.0 * u[id] - 4.0 * u[m] + u[m2]) / (2.0 * h),
            None => (u[id] - u[m]) / h,
        }),
        (None, None) => None,
    }
}

pub fn gradient(grid: &Grid, u: &ScalarField) -> Result<VectorField> {
    let mut out = VectorField::zeros(grid.len());
    for id in 0..grid.len() {
        let gx = axis_derivative(grid, &u.values, id, 1, 0);
        let gy = axis_derivative(grid, &u.values, id, 0, 1);
        if gx.is_none() && gy.is_none() {
            let (i, j) = grid.cells[id];
            return Err(LabError::IsolatedCell { i, j });
        }
        out.x[id] = gx.unwrap_or(0.0);
        out.y[id] = gy.unwrap_or(0.0);
    }
    Ok(out)
}

/// `(Dv, ε(v))` with `Dv[r][c] = ∂v_r/∂x_c`.
pub fn sym_gradient(grid: &Grid, v: &VectorField) -> Result<(TensorField, TensorField)> {
    let g1 = gradient(grid, &ScalarField { values: v.x.clone() })?;
    let g2 = gradient(grid, &ScalarField { values: v.y.clone() })?;
    let mut d = Vec::with_capacity(grid.len());
    let mut e = Vec::with_capacity(grid.len());
    for id in 0..grid.len() {
        let m = [g1.x[id], g1.y[id], g2.x[id], g2.y[id]];
        let off = 0.5 * (m[1] + m[2]);
        d.push(m);
        e.push([m[0], off, off, m[3]]);
    }
    Ok((TensorField { m: d }, TensorField { m: e }))
}

/// `Σ |f|^p ρ^a h²` over the cells accepted by `keep`.
pub fn weighted_power_sum<F: Pointwise + ?Sized>(
    grid: &Grid,
    f: &F,
    p: f64,
    a: f64,
    keep: impl Fn(usize) -> bool,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(LabError::InvalidParameter(format!("p = {p} < 1")));
    }
    let mut s = 0.0;
    for id in 0..grid.len() {
        if keep(id) {
            let m = f.magnitude(id);
            if m != 0.0 {
                s += m.powf(p) * grid.rho[id].powf(a);
            }
        }
    }
    Ok(s * grid.cell_area())
}

/// `(Σ |f|^p ρ^a h²)^{1/p}`.
pub fn weighted_lp_norm<F: Pointwise + ?Sized>(grid: &Grid, f: &F, p: f64, a: f64) -> Result<f64> {
    Ok(weighted_power_sum(grid, f, p, a, |_| true)?.powf(1.0 / p))
}

pub fn weighted_mean(grid: &Grid, u: &ScalarField, a: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for id in 0..grid.len() {
        let w = grid.rho[id].powf(a);
        num += u.values[id] * w;
        den += w;
    }
    num / den
}

/// `u − u_{Ω,a}`.
pub fn project_zero_mean(grid: &Grid, u: &ScalarField, a: f64) -> ScalarField {
    let m = weighted_mean(grid, u, a);
    ScalarField {
        values: u.values.iter().map(|v| v - m).collect(),
    }
}

/// Which piece of the Example 4.1 field a point lies in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Piece {
    Room,
    Corridor,
    Outside,
}

pub fn example_piece(room: &RoomPlacement, p: Point) -> Piece {
    if room.room.contains(p) {
        Piece::Room
    } else if room.corridor.contains(p) {
        Piece::Corridor
    } else {
        Piece::Outside
    }
}

/// `u_i(p)`: `(2y + r^τ, −2(x − x_i))` on the room, `(−y²/r^τ, 2(x − x_i)y/r^τ)`
/// on the corridor, zero elsewhere.
pub fn example_value(room: &RoomPlacement, p: Point) -> [f64; 2] {
    let ht = room.height();
    let dx = p.x - room.x;
    match example_piece(room, p) {
        Piece::Room => [2.0 * p.y + ht, -2.0 * dx],
        Piece::Corridor => [-p.y * p.y / ht, 2.0 * dx * p.y / ht],
        Piece::Outside => [0.0, 0.0],
    }
}

/// Exact `Du_i(p)` as `[∂₁u₁, ∂₂u₁, ∂₁u₂, ∂₂u₂]`.
pub fn example_gradient(room: &RoomPlacement, p: Point) -> [f64; 4] {
    let ht = room.height();
    let dx = p.x - room.x;
    match example_piece(room, p) {
        Piece::Room => [0.0, 2.0, -2.0, 0.0],
        Piece::Corridor => [0.0, -2.0 * p.y / ht, 2.0 * p.y / ht, 2.0 * dx / ht],
        Piece::Outside => [0.0; 4],
    }
}

pub fn example_field(placement: &PlacementTable, i: usize, grid: &Grid) -> Result<VectorField> {
    let room = placement.room(i)?;
    Ok(grid.sample_vector(|p| example_value(room, p)))
}

/// `v = ((x₂ − y₂)u, (y₁ − x₁)u)`.
pub fn rotation_test_field(grid: &Grid, u: &ScalarField, y: Point) -> VectorField {
    let mut v = VectorField::zeros(grid.len());
    for id in 0..grid.len() {
        let c = grid.centers[id];
        v.x[id] = (c.y - y.y) * u.values[id];
        v.y[id] = (y.x - c.x) * u.values[id];
    }
    v
}
