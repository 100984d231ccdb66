//! Lower bounds for best Poincaré and Korn constants, and the blow-up
//! sequences along the rooms-and-corridors family.
//!
//! Quotients are evaluated with the `fields` quadrature. The searches work on
//! matrix-free surrogates: cell-face differences for scalar gradients and
//! 2×2 vertex stencils for vector gradients. Whatever the search finds is
//! re-evaluated with the quadrature, so the reported value is the quotient of
//! an explicit field and hence a lower bound for the supremum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{self, ExponentParams, Grid, ScalarField, VectorField};
use crate::gallery::{rooms_and_corridors, PlacementTable, RoomsSpec};
use crate::geom::{Point, Rect, RectDomain};
use crate::par::{self, Execution};
use crate::scaling::{korn_failure_predicted, predicted_exponents, HPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuotientKind {
    Poincare,
    Korn,
    KornTilde { cube: Rect },
}

impl QuotientKind {
    pub fn name(&self) -> &'static str {
        match self {
            QuotientKind::Poincare => "poincare",
            QuotientKind::Korn => "korn",
            QuotientKind::KornTilde { .. } => "korn_tilde",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientProblem {
    pub kind: QuotientKind,
    pub params: ExponentParams,
}

impl QuotientProblem {
    pub fn validate(&self, domain: &RectDomain) -> Result<()> {
        self.params.validate()?;
        match &self.kind {
            QuotientKind::Poincare => Ok(()),
            QuotientKind::Korn => self.params.validate_korn(),
            QuotientKind::KornTilde { cube } => {
                self.params.validate_korn()?;
                let inside = cube.width() > 0.0
                    && cube.height() > 0.0
                    && cube.corners().iter().all(|c| domain.contains(*c))
                    && domain.rect_boundary_distance(cube) > 0.0;
                if inside {
                    Ok(())
                } else {
                    Err(LabError::InvalidParameter(
                        "korn_tilde cube must lie strictly inside the domain".into(),
                    ))
                }
            }
        }
    }
}

/// `‖u − u_{Ω,a}‖^p_{L^p(ρ^a)} / ‖∇u‖^p_{L^p(ρ^b)}`.
pub fn poincare_quotient(grid: &Grid, u: &ScalarField, params: &ExponentParams) -> Result<f64> {
    let centered = fields::project_zero_mean(grid, u, params.a);
    let num = fields::weighted_power_sum(grid, &centered, params.p, params.a, |_| true)?;
    let g = fields::gradient(grid, u)?;
    let den = fields::weighted_power_sum(grid, &g, params.p, params.b, |_| true)?;
    if !(den > 0.0) {
        return Err(LabError::ZeroDenominator);
    }
    Ok(num / den)
}

/// Norm quotient of the Korn inequality named by `kind`.
pub fn korn_quotient(grid: &Grid, v: &VectorField, params: &ExponentParams, kind: &QuotientKind) -> Result<f64> {
    let p = params.p;
    let (d, e) = fields::sym_gradient(grid, v)?;
    let num = fields::weighted_power_sum(grid, &d, p, params.a, |_| true)?.powf(1.0 / p);
    let eps = fields::weighted_power_sum(grid, &e, p, params.b - p, |_| true)?.powf(1.0 / p);
    let second = match kind {
        QuotientKind::Poincare => {
            return Err(LabError::InvalidParameter("korn_quotient needs a Korn kind".into()))
        }
        QuotientKind::Korn => fields::weighted_lp_norm(grid, v, p, params.a)?,
        QuotientKind::KornTilde { cube } => {
            fields::weighted_power_sum(grid, &d, p, params.a, |id| cube.contains(grid.centers[id]))?
                .powf(1.0 / p)
        }
    };
    let den = eps + second;
    if !(den > 0.0) {
        return Err(LabError::ZeroDenominator);
    }
    Ok(num / den)
}

/// Matrix-free difference operators on a grid.
struct Stencils {
    h: f64,
    /// Neighbouring cell pairs `(left, right)` and `(below, above)`.
    faces: Vec<(usize, usize)>,
    face_rho: Vec<f64>,
    /// Complete 2×2 blocks `[ll, lr, ul, ur]` around interior vertices.
    verts: Vec<[usize; 4]>,
    vert_rho: Vec<f64>,
    vert_center: Vec<Point>,
}

impl Stencils {
    fn new(grid: &Grid) -> Self {
        let mut faces = Vec::new();
        let mut face_rho = Vec::new();
        let mut verts = Vec::new();
        let mut vert_rho = Vec::new();
        let mut vert_center = Vec::new();
        for (id, &(i, j)) in grid.cells.iter().enumerate() {
            for (di, dj) in [(1, 0), (0, 1)] {
                if let Some(n) = grid.id(i + di, j + dj) {
                    faces.push((id, n));
                    face_rho.push(0.5 * (grid.rho[id] + grid.rho[n]));
                }
            }
            if let (Some(lr), Some(ul), Some(ur)) = (grid.id(i + 1, j), grid.id(i, j + 1), grid.id(i + 1, j + 1)) {
                let b = [id, lr, ul, ur];
                verts.push(b);
                vert_rho.push(b.iter().map(|&c| grid.rho[c]).sum::<f64>() / 4.0);
                let c = grid.centers[id];
                vert_center.push(Point::new(c.x + grid.h / 2.0, c.y + grid.h / 2.0));
            }
        }
        Stencils {
            h: grid.h,
            faces,
            face_rho,
            verts,
            vert_rho,
            vert_center,
        }
    }

    /// `(∂₁f, ∂₂f)` at vertex `k`.
    fn vgrad(&self, f: &[f64], k: usize) -> [f64; 2] {
        let [ll, lr, ul, ur] = self.verts[k];
        let s = 0.5 / self.h;
        [
            s * (f[lr] + f[ur] - f[ll] - f[ul]),
            s * (f[ul] + f[ur] - f[ll] - f[lr]),
        ]
    }

    /// Adds the transpose of `vgrad` applied to `g` at vertex `k`.
    fn vgrad_t(&self, g: [f64; 2], k: usize, out: &mut [f64]) {
        let [ll, lr, ul, ur] = self.verts[k];
        let s = 0.5 / self.h;
        out[ll] -= s * (g[0] + g[1]);
        out[lr] += s * (g[0] - g[1]);
        out[ul] += s * (g[1] - g[0]);
        out[ur] += s * (g[0] + g[1]);
    }

    /// `Dv = [∂₁v₁, ∂₂v₁, ∂₁v₂, ∂₂v₂]` at vertex `k`; `v` is `[v₁ | v₂]`.
    fn vjac(&self, v: &[f64], n: usize, k: usize) -> [f64; 4] {
        let a = self.vgrad(&v[..n], k);
        let b = self.vgrad(&v[n..], k);
        [a[0], a[1], b[0], b[1]]
    }

    fn vjac_t(&self, m: [f64; 4], n: usize, k: usize, out: &mut [f64]) {
        let (o1, o2) = out.split_at_mut(n);
        self.vgrad_t([m[0], m[1]], k, o1);
        self.vgrad_t([m[2], m[3]], k, o2);
    }
}

fn sym(m: [f64; 4]) -> [f64; 4] {
    let off = 0.5 * (m[1] + m[2]);
    [m[0], off, off, m[3]]
}

fn norm4(m: &[f64; 4]) -> f64 {
    (m[0] * m[0] + m[1] * m[1] + m[2] * m[2] + m[3] * m[3]).sqrt()
}

/// `|x|^{p−2} x` with the convention `0` at `x = 0`.
fn pow_dir(norm: f64, p: f64) -> f64 {
    if norm > 0.0 {
        norm.powf(p - 2.0)
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients for a symmetric positive semidefinite operator and a
/// consistent right-hand side.
fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let mut x = x0;
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = tol * tol * dot(b, b);
    for _ in 0..max_iter {
        if rr <= stop || rr == 0.0 {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    x
}

/// Discrete quotient searched over; `x` holds cell values (`[v₁ | v₂]` for
/// vector kinds).
struct Surrogate<'a> {
    grid: &'a Grid,
    st: Stencils,
    params: ExponentParams,
    kind: QuotientKind,
    cell_w: Vec<f64>,
    face_w: Vec<f64>,
    vert_wa: Vec<f64>,
    vert_weps: Vec<f64>,
    /// Vertex weights of the `korn_tilde` reference cube.
    vert_wq: Vec<f64>,
}

impl<'a> Surrogate<'a> {
    fn new(grid: &'a Grid, kind: &QuotientKind, params: &ExponentParams) -> Self {
        let st = Stencils::new(grid);
        let area = grid.cell_area();
        let (a, b, p) = (params.a, params.b, params.p);
        let cell_w = grid.rho.iter().map(|r| r.powf(a) * area).collect();
        let face_w = st.face_rho.iter().map(|r| r.powf(b) * area).collect();
        let vert_wa: Vec<f64> = st.vert_rho.iter().map(|r| r.powf(a) * area).collect();
        let vert_weps = st.vert_rho.iter().map(|r| r.powf(b - p) * area).collect();
        let vert_wq = match kind {
            QuotientKind::KornTilde { cube } => st
                .vert_center
                .iter()
                .zip(&vert_wa)
                .map(|(c, w)| if cube.contains(*c) { *w } else { 0.0 })
                .collect(),
            _ => Vec::new(),
        };
        Surrogate {
            grid,
            st,
            params: *params,
            kind: kind.clone(),
            cell_w,
            face_w,
            vert_wa,
            vert_weps,
            vert_wq,
        }
    }

    fn n(&self) -> usize {
        self.grid.len()
    }

    fn weighted_mean(&self, x: &[f64]) -> f64 {
        let s: f64 = self.cell_w.iter().sum();
        dot(&self.cell_w, x) / s
    }

    fn center(&self, x: &mut [f64]) {
        let m = self.weighted_mean(x);
        x.iter_mut().for_each(|v| *v -= m);
    }

    /// Log quotient and its gradient.
    fn log_quotient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let p = self.params.p;
        let h = self.st.h;
        let mut g = vec![0.0; x.len()];
        match self.kind {
            QuotientKind::Poincare => {
                let m = self.weighted_mean(x);
                let mut num = 0.0;
                let mut gn = vec![0.0; x.len()];
                for c in 0..x.len() {
                    let y = x[c] - m;
                    num += y.abs().powf(p) * self.cell_w[c];
                    gn[c] = p * pow_dir(y.abs(), p) * y * self.cell_w[c];
                }
                let corr = gn.iter().sum::<f64>() / self.cell_w.iter().sum::<f64>();
                for c in 0..x.len() {
                    gn[c] -= corr * self.cell_w[c];
                }
                let mut den = 0.0;
                let mut gd = vec![0.0; x.len()];
                for (k, &(i, j)) in self.st.faces.iter().enumerate() {
                    let d = (x[j] - x[i]) / h;
                    den += d.abs().powf(p) * self.face_w[k];
                    let t = p * pow_dir(d.abs(), p) * d * self.face_w[k] / h;
                    gd[j] += t;
                    gd[i] -= t;
                }
                if !(num > 0.0 && den > 0.0) {
                    return (f64::NEG_INFINITY, g);
                }
                for c in 0..x.len() {
                    g[c] = gn[c] / num - gd[c] / den;
                }
                (num.ln() - den.ln(), g)
            }
            _ => {
                let n = self.n();
                let (mut num, mut eps, mut sec) = (0.0, 0.0, 0.0);
                let mut gn = vec![0.0; x.len()];
                let mut ge = vec![0.0; x.len()];
                let mut gs = vec![0.0; x.len()];
                for k in 0..self.st.verts.len() {
                    let d = self.st.vjac(x, n, k);
                    let nd = norm4(&d);
                    let e = sym(d);
                    let ne = norm4(&e);
                    num += nd.powf(p) * self.vert_wa[k];
                    eps += ne.powf(p) * self.vert_weps[k];
                    let cd = p * pow_dir(nd, p) * self.vert_wa[k];
                    self.st.vjac_t(d.map(|v| v * cd), n, k, &mut gn);
                    let ce = p * pow_dir(ne, p) * self.vert_weps[k];
                    self.st.vjac_t(e.map(|v| v * ce), n, k, &mut ge);
                    if let QuotientKind::KornTilde { .. } = self.kind {
                        let wq = self.vert_wq[k];
                        if wq > 0.0 {
                            sec += nd.powf(p) * wq;
                            let cq = p * pow_dir(nd, p) * wq;
                            self.st.vjac_t(d.map(|v| v * cq), n, k, &mut gs);
                        }
                    }
                }
                if let QuotientKind::Korn = self.kind {
                    for c in 0..n {
                        let nv = (x[c] * x[c] + x[n + c] * x[n + c]).sqrt();
                        sec += nv.powf(p) * self.cell_w[c];
                        let cv = p * pow_dir(nv, p) * self.cell_w[c];
                        gs[c] += cv * x[c];
                        gs[n + c] += cv * x[n + c];
                    }
                }
                let (re, rs) = (eps.powf(1.0 / p), sec.powf(1.0 / p));
                let den = re + rs;
                if !(num > 0.0 && den > 0.0) {
                    return (f64::NEG_INFINITY, g);
                }
                let de = if eps > 0.0 { re / (p * eps) } else { 0.0 };
                let ds = if sec > 0.0 { rs / (p * sec) } else { 0.0 };
                for c in 0..x.len() {
                    g[c] = gn[c] / (p * num) - (de * ge[c] + ds * gs[c]) / den;
                }
                (num.ln() / p - den.ln(), g)
            }
        }
    }

    /// Numerator and denominator quadratic forms at `p = 2`.
    fn forms(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut nx = vec![0.0; x.len()];
        let mut dx = vec![0.0; x.len()];
        match self.kind {
            QuotientKind::Poincare => {
                let m = self.weighted_mean(x);
                for c in 0..x.len() {
                    nx[c] = (x[c] - m) * self.cell_w[c];
                }
                let h2 = self.st.h * self.st.h;
                for (k, &(i, j)) in self.st.faces.iter().enumerate() {
                    let t = (x[j] - x[i]) * self.face_w[k] / h2;
                    dx[j] += t;
                    dx[i] -= t;
                }
            }
            _ => {
                let n = self.n();
                for k in 0..self.st.verts.len() {
                    let d = self.st.vjac(x, n, k);
                    self.st.vjac_t(d.map(|v| v * self.vert_wa[k]), n, k, &mut nx);
                    let e = sym(d);
                    self.st.vjac_t(e.map(|v| v * self.vert_weps[k]), n, k, &mut dx);
                    if let QuotientKind::KornTilde { .. } = self.kind {
                        let wq = self.vert_wq[k];
                        if wq > 0.0 {
                            self.st.vjac_t(d.map(|v| v * wq), n, k, &mut dx);
                        }
                    }
                }
                if let QuotientKind::Korn = self.kind {
                    for c in 0..n {
                        dx[c] += x[c] * self.cell_w[c];
                        dx[n + c] += x[n + c] * self.cell_w[c];
                    }
                }
            }
        }
        (nx, dx)
    }

    fn to_field(&self, x: &[f64]) -> Field {
        let n = self.n();
        match self.kind {
            QuotientKind::Poincare => Field::Scalar(ScalarField { values: x.to_vec() }),
            _ => Field::Vector(VectorField {
                x: x[..n].to_vec(),
                y: x[n..].to_vec(),
            }),
        }
    }

    fn from_field(&self, f: &Field) -> Result<Vec<f64>> {
        match (f, &self.kind) {
            (Field::Scalar(s), QuotientKind::Poincare) if s.values.len() == self.n() => Ok(s.values.clone()),
            (Field::Vector(v), QuotientKind::Korn | QuotientKind::KornTilde { .. })
                if v.x.len() == self.n() && v.y.len() == self.n() =>
            {
                Ok(v.x.iter().chain(&v.y).copied().collect())
            }
            _ => Err(LabError::InvalidParameter("warm start does not match the problem".into())),
        }
    }

    /// Quadrature quotient of a candidate.
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self.to_field(x) {
            Field::Scalar(s) => poincare_quotient(self.grid, &s, &self.params),
            Field::Vector(v) => korn_quotient(self.grid, &v, &self.params, &self.kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalar(ScalarField),
    Vector(VectorField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Eigen,
    Ascent,
    TestField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    /// Iterations per search (power steps or ascent steps).
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            iterations: 300,
            restarts: 8,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub kind: String,
    /// Quadrature quotient of `maximizer`.
    pub lower_bound: f64,
    /// Value of the discrete surrogate at the maximizer.
    pub surrogate: f64,
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// Quadrature quotients of the restarts, in seed order.
    pub restarts: Vec<f64>,
    /// Quadrature quotients of the supplied warm starts.
    pub warm_starts: Vec<f64>,
    #[serde(skip)]
    pub maximizer: Option<Field>,
}

fn random_start(grid: &Grid, vector: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b = grid_bbox(grid);
    let mut one = || {
        let mut c = [[0.0; 4]; 4];
        for (k, row) in c.iter_mut().enumerate() {
            for (l, v) in row.iter_mut().enumerate() {
                if k + l > 0 {
                    *v = rng.gen_range(-1.0..1.0) / (1 + k + l) as f64;
                }
            }
        }
        grid.centers
            .iter()
            .map(|p| {
                let x = (p.x - b.x0) / b.width();
                let y = (p.y - b.y0) / b.height();
                let mut s = 0.0;
                for (k, row) in c.iter().enumerate() {
                    for (l, v) in row.iter().enumerate() {
                        s += v
                            * (k as f64 * std::f64::consts::PI * x).cos()
                            * (l as f64 * std::f64::consts::PI * y).cos();
                    }
                }
                s
            })
            .collect::<Vec<f64>>()
    };
    let mut out = one();
    if vector {
        out.extend(one());
    }
    out
}

fn grid_bbox(grid: &Grid) -> Rect {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for c in &grid.centers {
        x0 = x0.min(c.x);
        y0 = y0.min(c.y);
        x1 = x1.max(c.x);
        y1 = y1.max(c.y);
    }
    Rect::new(x0 - grid.h / 2.0, y0 - grid.h / 2.0, x1 + grid.h / 2.0, y1 + grid.h / 2.0)
}

fn normalize(x: &mut [f64]) {
    let n = dot(x, x).sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Power iteration on the pencil; returns `(vector, Rayleigh value, steps, converged)`.
fn power_iteration(s: &Surrogate, start: Vec<f64>, opts: &EstimateOptions) -> (Vec<f64>, f64, usize, bool) {
    let mut x = start;
    let scalar = matches!(s.kind, QuotientKind::Poincare);
    if scalar {
        s.center(&mut x);
    }
    normalize(&mut x);
    let mut last = f64::NAN;
    let cg_iter = 4000;
    for step in 1..=opts.iterations {
        let (nx, dx) = s.forms(&x);
        let guess = (dot(&x, &nx) / dot(&x, &dx)).max(0.0);
        let x0 = x.iter().map(|v| v * guess).collect();
        let mut y = conjugate_gradient(|v| s.forms(v).1, &nx, x0, 1e-10, cg_iter);
        if scalar {
            s.center(&mut y);
        }
        normalize(&mut y);
        let (ny, dy) = s.forms(&y);
        let lambda = dot(&y, &ny) / dot(&y, &dy);
        x = y;
        if (lambda - last).abs() <= opts.tolerance * lambda.abs() {
            return (x, lambda, step, true);
        }
        last = lambda;
    }
    (x, last, opts.iterations, false)
}

/// Normalised gradient ascent on the log quotient with step adaptation.
fn ascent(s: &Surrogate, start: Vec<f64>, opts: &EstimateOptions) -> (Vec<f64>, f64, usize) {
    let mut x = start;
    if matches!(s.kind, QuotientKind::Poincare) {
        s.center(&mut x);
    }
    normalize(&mut x);
    let (mut j, mut g) = s.log_quotient(&x);
    let mut step = 0.1;
    let mut used = 0;
    for it in 0..opts.iterations {
        used = it + 1;
        let gn = dot(&g, &g).sqrt();
        if !(gn > 0.0) || !j.is_finite() {
            break;
        }
        let mut accepted = false;
        while step > 1e-12 {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b / gn).collect();
            normalize(&mut y);
            let (jy, gy) = s.log_quotient(&y);
            if jy > j {
                let gain = jy - j;
                x = y;
                j = jy;
                g = gy;
                step *= 1.5;
                accepted = true;
                if gain <= opts.tolerance * j.abs().max(1.0) {
                    return (x, j, used);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, j, used)
}

/// Best quotient found for `problem` on `grid`.
///
/// At `p = 2` the pencil is solved by power iteration with conjugate-gradient
/// inner solves; otherwise `opts.restarts` random smooth starts and the warm
/// starts are improved by gradient ascent. Warm starts always compete, so the
/// result is at least the quotient of every warm start.
pub fn estimate_constant(
    grid: &Grid,
    problem: &QuotientProblem,
    opts: &EstimateOptions,
    warm: &[Field],
    exec: Execution,
) -> Result<ConstantEstimate> {
    problem.params.validate()?;
    if !matches!(problem.kind, QuotientKind::Poincare) {
        problem.params.validate_korn()?;
    }
    let s = Surrogate::new(grid, &problem.kind, &problem.params);
    let vector = !matches!(problem.kind, QuotientKind::Poincare);
    let warm_x: Vec<Vec<f64>> = warm.iter().map(|f| s.from_field(f)).collect::<Result<_>>()?;
    let warm_q: Vec<f64> = warm_x
        .iter()
        .map(|x| s.evaluate(x).unwrap_or(f64::NEG_INFINITY))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1)).map(|_| random_start(grid, vector, &mut rng)).collect();

    let (cands, method, iterations, converged): (Vec<(Vec<f64>, f64)>, Method, usize, bool) =
        if problem.params.p == 2.0 {
            let start = warm_q
                .iter()
                .enumerate()
                .filter(|(_, q)| q.is_finite())
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or_else(|| starts[0].clone(), |(k, _)| warm_x[k].clone());
            let (x, lambda, steps, conv) = power_iteration(&s, start, opts);
            (vec![(x, lambda)], Method::Eigen, steps, conv)
        } else {
            let mut all = starts.clone();
            all.extend(warm_x.iter().cloned());
            let runs = par::map(exec, &all, |x0| ascent(&s, x0.clone(), opts));
            let iters = runs.iter().map(|r| r.2).sum();
            let c: Vec<(Vec<f64>, f64)> = runs.into_iter().map(|(x, j, _)| (x, j.exp())).collect();
            (c, Method::Ascent, iters, false)
        };
    let restart_q: Vec<f64> = cands
        .iter()
        .map(|(x, _)| s.evaluate(x).unwrap_or(f64::NEG_INFINITY))
        .collect();
    let mut best: Option<(f64, f64, Method, Vec<f64>)> = None;
    for ((x, sur), q) in cands.iter().zip(&restart_q) {
        if q.is_finite() && best.as_ref().is_none_or(|b| *q > b.0) {
            best = Some((*q, *sur, method, x.clone()));
        }
    }
    for (x, q) in warm_x.iter().zip(&warm_q) {
        if q.is_finite() && best.as_ref().is_none_or(|b| *q > b.0) {
            best = Some((*q, f64::NAN, Method::TestField, x.clone()));
        }
    }
    let Some((lower_bound, surrogate, method, x)) = best else {
        return Err(LabError::ZeroDenominator);
    };
    let converged = if method == Method::Ascent || (method == Method::TestField && problem.params.p != 2.0) {
        let mut top: Vec<f64> = restart_q.iter().copied().filter(|q| q.is_finite()).collect();
        top.sort_by(|a, b| b.total_cmp(a));
        top.len() >= 3 && (top[0] - top[2]) <= 0.01 * top[0]
    } else {
        converged
    };
    Ok(ConstantEstimate {
        kind: problem.kind.name().into(),
        lower_bound,
        surrogate,
        method,
        iterations,
        converged,
        seed: opts.seed,
        restarts: restart_q,
        warm_starts: warm_q,
        maximizer: Some(s.to_field(&x)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlowupVerdict {
    Fails,
    ConsistentHolds,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupRow {
    pub i: usize,
    pub r: f64,
    pub quotient: f64,
    /// Predicted log-log slope of the quotient against `r_i`.
    pub predicted_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub kind: String,
    pub params: ExponentParams,
    pub rows: Vec<BlowupRow>,
    /// `quotient(max i) / quotient(min i)`.
    pub growth: f64,
    /// `max / min` over the sequence.
    pub spread: f64,
    pub failure_predicted: bool,
    pub verdict: BlowupVerdict,
}

/// `(a + 2 − min(σ(b+1) + τ(1−p), a + p + 2)) / p`.
pub fn predicted_quotient_exponent(params: &ExponentParams) -> f64 {
    let e = predicted_exponents(params);
    (e.room_du - e.corridor_eps.min(e.room_u)) / params.p
}

/// Korn quotient of the field `u_i`, integrated on per-piece grids.
pub fn example_quotient(
    domain: &RectDomain,
    table: &PlacementTable,
    i: usize,
    params: &ExponentParams,
    kind: &QuotientKind,
    policy: &HPolicy,
) -> Result<f64> {
    let room = table.room(i)?;
    if policy.room_cells < 8 || policy.corridor_cells < 8 {
        return Err(LabError::UnderResolved("fewer than 8 cells per piece".into()));
    }
    let side = room.width().min(room.height());
    let hc = side / policy.corridor_cells as f64;
    if ((room.width() / hc).round() as usize) < 8 {
        return Err(LabError::UnderResolved(format!("corridor {i} resolved by fewer than 8 cells")));
    }
    let grids = [
        Grid::new(domain, room.room, room.r / policy.room_cells as f64)?,
        Grid::new(domain, room.corridor, hc)?,
    ];
    let p = params.p;
    let (mut num, mut eps, mut sec) = (0.0, 0.0, 0.0);
    for g in &grids {
        let u = fields::example_field(table, i, g)?;
        let (d, e) = fields::sym_gradient(g, &u)?;
        num += fields::weighted_power_sum(g, &d, p, params.a, |_| true)?;
        eps += fields::weighted_power_sum(g, &e, p, params.b - p, |_| true)?;
        sec += match kind {
            QuotientKind::Poincare => {
                return Err(LabError::InvalidParameter("blow-up needs a Korn kind".into()))
            }
            QuotientKind::Korn => fields::weighted_power_sum(g, &u, p, params.a, |_| true)?,
            QuotientKind::KornTilde { cube } => {
                fields::weighted_power_sum(g, &d, p, params.a, |id| cube.contains(g.centers[id]))?
            }
        };
    }
    let den = eps.powf(1.0 / p) + sec.powf(1.0 / p);
    if !(den > 0.0) {
        return Err(LabError::ZeroDenominator);
    }
    Ok(num.powf(1.0 / p) / den)
}

/// Quotients of `u_i` along the room sequence and the resulting verdict.
pub fn blowup_experiment(
    spec: &RoomsSpec,
    params: &ExponentParams,
    kind: &QuotientKind,
    rooms: std::ops::RangeInclusive<usize>,
    policy: &HPolicy,
) -> Result<BlowupReport> {
    params.validate_korn()?;
    let (domain, table) = rooms_and_corridors(spec)?;
    if rooms.is_empty() || *rooms.start() == 0 || *rooms.end() > table.rooms.len() {
        return Err(LabError::IndexOutOfRange {
            index: *rooms.end(),
            len: table.rooms.len(),
        });
    }
    let slope = predicted_quotient_exponent(params);
    let mut rows = Vec::new();
    for i in rooms {
        rows.push(BlowupRow {
            i,
            r: table.room(i)?.r,
            quotient: example_quotient(&domain, &table, i, params, kind, policy)?,
            predicted_exponent: slope,
        });
    }
    let first = rows[0].quotient;
    let last = rows[rows.len() - 1].quotient;
    let growth = last / first;
    let hi = rows.iter().map(|r| r.quotient).fold(f64::MIN, f64::max);
    let lo = rows.iter().map(|r| r.quotient).fold(f64::MAX, f64::min);
    let spread = hi / lo;
    let failure_predicted = korn_failure_predicted(params);
    let verdict = if failure_predicted && growth >= 10.0 {
        BlowupVerdict::Fails
    } else if !failure_predicted && spread <= 2.0 {
        BlowupVerdict::ConsistentHolds
    } else {
        BlowupVerdict::Mismatch
    };
    Ok(BlowupReport {
        kind: kind.name().into(),
        params: *params,
        rows,
        growth,
        spread,
        failure_predicted,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationBound {
    pub y: Point,
    /// `max (|ε(v)| − 2|x − y||∇u|)` over cells.
    pub max_excess: f64,
    /// Allowed discretisation error `2h·max|∇u|`.
    pub slack: f64,
    pub holds: bool,
}

/// Pointwise `|ε(v)| ≤ 2|x − y||∇u|` for the rotation field `v` built from `u`.
pub fn rotation_bound(grid: &Grid, u: &ScalarField, y: Point) -> Result<RotationBound> {
    let v = fields::rotation_test_field(grid, u, y);
    let (_, e) = fields::sym_gradient(grid, &v)?;
    let g = fields::gradient(grid, u)?;
    let mut max_excess = f64::NEG_INFINITY;
    let mut gmax: f64 = 0.0;
    for id in 0..grid.len() {
        let gn = g.x[id].hypot(g.y[id]);
        gmax = gmax.max(gn);
        let bound = 2.0 * grid.centers[id].dist(y) * gn;
        max_excess = max_excess.max(norm4(&e.m[id]) - bound);
    }
    let slack = 2.0 * grid.h * gmax + 1e-12;
    Ok(RotationBound {
        y,
        max_excess,
        slack,
        holds: max_excess <= slack,
    })
}

/// `min(1, max(0, 1 − dist(x, A)/dist(A, Q)))`: one on `A`, zero on `Q`.
pub fn ramp(grid: &Grid, a: &Rect, q: &Rect) -> Result<ScalarField> {
    let delta = a.dist_rect(q);
    if !(delta > 0.0) {
        return Err(LabError::InvalidParameter("A must keep a positive distance from Q".into()));
    }
    Ok(grid.sample(|x| (1.0 - a.dist_point(x) / delta).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleCheck {
    pub a: Rect,
    /// `|A|`.
    pub measure: f64,
    /// `∫ |∇u|^p` for the ramp of `A`.
    pub energy: f64,
    /// `(2 K diam Ω)^p`.
    pub constant: f64,
    pub holds: bool,
}

/// `|A| ≤ (2 K diam Ω)^p ∫|∇u|^p` for ramps `u`, `K` a `korn_tilde` constant
/// with reference cube `q`.
pub fn admissible_check(
    grid: &Grid,
    q: &Rect,
    rects: &[Rect],
    korn_constant: f64,
    p: f64,
    diam: f64,
) -> Result<Vec<AdmissibleCheck>> {
    let constant = (2.0 * korn_constant * diam).powf(p);
    let mut out = Vec::with_capacity(rects.len());
    for a in rects {
        let u = ramp(grid, a, q)?;
        let g = fields::gradient(grid, &u)?;
        let energy = fields::weighted_power_sum(grid, &g, p, 0.0, |_| true)?;
        let measure = grid.centers.iter().filter(|c| a.contains(**c)).count() as f64 * grid.cell_area();
        out.push(AdmissibleCheck {
            a: *a,
            measure,
            energy,
            constant,
            holds: measure <= constant * energy,
        });
    }
    Ok(out)
}
