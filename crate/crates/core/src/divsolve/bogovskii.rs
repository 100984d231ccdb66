//! Bogovskii solver on the reference square `[−1, 1]²` with an `R × R`
//! cell grid.
//!
//! The field generated by a unit mass at `y` is
//! `N(x, y) = (x − y)/|x − y|² · ∫_{|x−y|}^∞ ω(y + t e) t dt`, `e` the unit
//! vector from `y` to `x`, so that `div N(·, y) = δ_y − ω`. Its flux through a
//! segment is the ω-mass of the part of the plane hidden behind the segment
//! as seen from `y`. The solver stores, for every interior face, the flux
//! produced by a unit mass spread over each cell; boundary fluxes vanish
//! because `supp ω = [−½, ½]²`.

use std::sync::OnceLock;

use crate::par::{self, Execution};

pub const R: usize = 32;
const CELL: f64 = 2.0 / R as f64;

/// Gauss-Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn bump1(t: f64) -> f64 {
    let s = 2.0 * t;
    if s.abs() >= 1.0 {
        0.0
    } else {
        let u = 1.0 - s * s;
        u * u * u
    }
}

/// `ω(z) = (35/16)² β(z₁) β(z₂)`, `β(t) = (1 − 4t²)³` on `[−½, ½]`.
pub fn omega(x: f64, y: f64) -> f64 {
    const C: f64 = (35.0 / 16.0) * (35.0 / 16.0);
    C * bump1(x) * bump1(y)
}

struct Rules {
    ray: (Vec<f64>, Vec<f64>),
}

/// `∫_s^∞ ω(y + t e) t dt`, exact for the piecewise polynomial ω.
fn tail_mass(rules: &Rules, yx: f64, yy: f64, ex: f64, ey: f64, s: f64) -> f64 {
    // clip the ray to the support box
    let mut lo = s;
    let mut hi = f64::INFINITY;
    for (p, d) in [(yx, ex), (yy, ey)] {
        if d.abs() < 1e-300 {
            if p.abs() >= 0.5 {
                return 0.0;
            }
        } else {
            let a = (-0.5 - p) / d;
            let b = (0.5 - p) / d;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if !(hi > lo) {
        return 0.0;
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let (xs, ws) = &rules.ray;
    let mut acc = 0.0;
    for (x, w) in xs.iter().zip(ws) {
        let t = mid + half * x;
        acc += w * omega(yx + t * ex, yy + t * ey) * t;
    }
    acc * half
}

/// Flux in the `+x` direction through the vertical segment
/// `{xf} × [ya, yb]` generated by a unit point mass at `(yx, yy)`.
fn point_flux(rules: &Rules, theta: &(Vec<f64>, Vec<f64>), yx: f64, yy: f64, xf: f64, ya: f64, yb: f64) -> f64 {
    let dx = xf - yx;
    if dx < 0.0 {
        // ω is even in x
        return -point_flux(rules, theta, -yx, yy, -xf, ya, yb);
    }
    let t0 = (ya - yy).atan2(dx);
    let t1 = (yb - yy).atan2(dx);
    let mid = 0.5 * (t0 + t1);
    let half = 0.5 * (t1 - t0);
    let (xs, ws) = theta;
    let mut acc = 0.0;
    for (x, w) in xs.iter().zip(ws) {
        let th = mid + half * x;
        let (ey, ex) = th.sin_cos();
        acc += w * tail_mass(rules, yx, yy, ex, ey, dx / ex);
    }
    acc * half
}

/// Precomputed flux matrices of the reference square.
pub struct ReferenceSolver {
    /// `vert[(f * R + j) * R * R + c]`: flux through the vertical face on the
    /// grid line `x = −1 + f·CELL` (`f = 1..R−1`, stored at `f − 1`), row `j`,
    /// due to unit mass spread over cell `c = b * R + a`.
    vert: Vec<f64>,
}

fn cell_index(a: usize, b: usize) -> usize {
    b * R + a
}

impl ReferenceSolver {
    fn compute(exec: Execution) -> Self {
        let rules = Rules {
            ray: gauss_legendre(8),
        };
        let far_y = gauss_legendre(3);
        let near_y = gauss_legendre(8);
        let far_t = gauss_legendre(10);
        let near_t = gauss_legendre(24);
        let nf = R - 1;
        // faces f = 1..=R/2 and rows j < R/2; the rest follows by symmetry
        let jobs: Vec<(usize, usize)> = (1..=R / 2)
            .flat_map(|f| (0..R / 2).map(move |j| (f, j)))
            .collect();
        let blocks: Vec<Vec<f64>> = par::map(exec, &jobs, |&(f, j)| {
            let xf = -1.0 + f as f64 * CELL;
            let ya = -1.0 + j as f64 * CELL;
            let yb = ya + CELL;
            let mut out = vec![0.0; R * R];
            for b in 0..R {
                for a in 0..R {
                    let cx0 = -1.0 + a as f64 * CELL;
                    let cy0 = -1.0 + b as f64 * CELL;
                    let right = cx0 >= xf;
                    // shadow beyond the face line misses the support
                    if (!right && xf >= 0.5) || (right && xf <= -0.5) {
                        continue;
                    }
                    let gap_x = if right { cx0 - xf } else { xf - (cx0 + CELL) };
                    let gap_y = (cy0 - yb).max(ya - (cy0 + CELL)).max(0.0);
                    let near = gap_x < 1.5 * CELL && gap_y < 1.5 * CELL;
                    let (qy, qt) = if near { (&near_y, &near_t) } else { (&far_y, &far_t) };
                    let mut acc = 0.0;
                    for (u, wu) in qy.0.iter().zip(&qy.1) {
                        for (v, wv) in qy.0.iter().zip(&qy.1) {
                            let yx = cx0 + 0.5 * CELL * (1.0 + u);
                            let yy = cy0 + 0.5 * CELL * (1.0 + v);
                            acc += wu * wv * point_flux(&rules, qt, yx, yy, xf, ya, yb);
                        }
                    }
                    out[cell_index(a, b)] = acc / 4.0;
                }
            }
            out
        });
        let mut vert = vec![0.0; nf * R * R * R];
        let put = |vert: &mut Vec<f64>, f: usize, j: usize, a: usize, b: usize, v: f64| {
            vert[((f - 1) * R + j) * R * R + cell_index(a, b)] = v;
        };
        for (k, &(f, j)) in jobs.iter().enumerate() {
            for b in 0..R {
                for a in 0..R {
                    let v = blocks[k][cell_index(a, b)];
                    put(&mut vert, f, j, a, b, v);
                    put(&mut vert, f, R - 1 - j, a, R - 1 - b, v);
                    put(&mut vert, R - f, j, R - 1 - a, b, -v);
                    put(&mut vert, R - f, R - 1 - j, R - 1 - a, R - 1 - b, -v);
                }
            }
        }
        ReferenceSolver { vert }
    }

    /// Shared instance, computed on first use.
    pub fn get() -> &'static ReferenceSolver {
        static SOLVER: OnceLock<ReferenceSolver> = OnceLock::new();
        SOLVER.get_or_init(|| ReferenceSolver::compute(Execution::default()))
    }

    /// Face fluxes for cell masses `m` (row-major, `R × R`): vertical faces
    /// `fx[(f − 1)·R + j]` and horizontal faces `fy[(f − 1)·R + i]`.
    pub fn fluxes(&self, m: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nf = R - 1;
        let mut fx = vec![0.0; nf * R];
        let mut fy = vec![0.0; nf * R];
        let nz: Vec<usize> = (0..R * R).filter(|&c| m[c] != 0.0).collect();
        if nz.is_empty() {
            return (fx, fy);
        }
        // transposed mass for the horizontal faces (x ↔ y swap)
        let mt: Vec<f64> = (0..R * R).map(|c| m[cell_index(c / R, c % R)]).collect();
        let nzt: Vec<usize> = (0..R * R).filter(|&c| mt[c] != 0.0).collect();
        for row in 0..nf * R {
            let a = &self.vert[row * R * R..(row + 1) * R * R];
            fx[row] = nz.iter().map(|&c| a[c] * m[c]).sum();
            fy[row] = nzt.iter().map(|&c| a[c] * mt[c]).sum();
        }
        (fx, fy)
    }
}

/// Solution on the reference grid of a square `box` of side `L`.
#[derive(Debug, Clone)]
pub struct RefSolution {
    /// Cell-centered components, row-major `R × R`.
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    /// Discrete divergence per cell (density).
    pub div: Vec<f64>,
}

/// Solve `div u = m/|cell|` on a square of side `side` from cell masses.
pub fn solve_masses(m: &[f64], side: f64) -> RefSolution {
    let solver = ReferenceSolver::get();
    let (fx, fy) = solver.fluxes(m);
    let h = side / R as f64;
    let flux_x = |f: usize, j: usize| if f == 0 || f == R { 0.0 } else { fx[(f - 1) * R + j] };
    let flux_y = |f: usize, i: usize| if f == 0 || f == R { 0.0 } else { fy[(f - 1) * R + i] };
    let mut ux = vec![0.0; R * R];
    let mut uy = vec![0.0; R * R];
    let mut div = vec![0.0; R * R];
    for b in 0..R {
        for a in 0..R {
            let c = cell_index(a, b);
            let (l, r) = (flux_x(a, b), flux_x(a + 1, b));
            let (d, t) = (flux_y(b, a), flux_y(b + 1, a));
            ux[c] = 0.5 * (l + r) / h;
            uy[c] = 0.5 * (d + t) / h;
            div[c] = (r - l + t - d) / (h * h);
        }
    }
    RefSolution { ux, uy, div }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_polynomials() {
        for n in [2, 3, 8, 10, 24] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((num - exact).abs() < 1e-13, "{n}");
        }
    }

    #[test]
    fn omega_has_unit_mass() {
        let (x, w) = gauss_legendre(8);
        let mut s = 0.0;
        for (a, wa) in x.iter().zip(&w) {
            for (b, wb) in x.iter().zip(&w) {
                s += wa * wb * omega(0.5 * a, 0.5 * b) * 0.25;
            }
        }
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flux_through_closed_contour() {
        // total outflux around a square enclosing the point is its mass minus
        // the ω-mass inside, here 1 − 0 for a small square far from supp ω
        let rules = Rules { ray: gauss_legendre(8) };
        let th = gauss_legendre(24);
        let (px, py) = (-0.8, -0.7);
        let s = 0.05;
        let right = point_flux(&rules, &th, px, py, px + s, py - s, py + s);
        let left = point_flux(&rules, &th, px, py, px - s, py - s, py + s);
        // horizontal faces by the x ↔ y swap
        let top = point_flux(&rules, &th, py, px, py + s, px - s, px + s);
        let bottom = point_flux(&rules, &th, py, px, py - s, px - s, px + s);
        let out = right - left + top - bottom;
        assert!((out - 1.0).abs() < 1e-4, "{out}");
    }

    #[test]
    fn zero_mass_gives_zero_field() {
        let sol = solve_masses(&vec![0.0; R * R], 1.0);
        assert!(sol.ux.iter().chain(&sol.uy).all(|v| *v == 0.0));
    }
}
