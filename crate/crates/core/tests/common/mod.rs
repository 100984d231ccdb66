#![allow(dead_code)]
//! Oracles shared by the integration tests.

use korn_lab::geom::{Point, RectDomain};
use nalgebra::DMatrix;
use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use statrs::function::beta::beta;

/// Quasihyperbolic distance on the 8-neighbour lattice of spacing `h`, edges
/// weighted by Simpson's rule on `1/ρ`.
pub fn lattice_distance(domain: &RectDomain, x: Point, y: Point, h: f64) -> f64 {
    let b = domain.bbox();
    let nx = ((b.x1 - b.x0) / h).round() as i64;
    let ny = ((b.y1 - b.y0) / h).round() as i64;
    let at = |i: i64, j: i64| Point::new(b.x0 + i as f64 * h, b.y0 + j as f64 * h);
    let rho = |p: Point| domain.distance_to_boundary_unchecked(p);
    let mut g = UnGraph::<(), f64>::new_undirected();
    let mut idx = vec![None; ((nx + 1) * (ny + 1)) as usize];
    let key = |i: i64, j: i64| (j * (nx + 1) + i) as usize;
    for j in 0..=ny {
        for i in 0..=nx {
            let p = at(i, j);
            if domain.contains_interior(p) && rho(p) > 0.0 {
                idx[key(i, j)] = Some(g.add_node(()));
            }
        }
    }
    for j in 0..=ny {
        for i in 0..=nx {
            let Some(a) = idx[key(i, j)] else { continue };
            for (di, dj) in [(1, 0), (0, 1), (1, 1), (1, -1)] {
                let (k, l) = (i + di, j + dj);
                if k > nx || l < 0 || l > ny {
                    continue;
                }
                let Some(c) = idx[key(k, l)] else { continue };
                let (p, q) = (at(i, j), at(k, l));
                let m = p.lerp(q, 0.5);
                if !(rho(m) > 0.0) {
                    continue;
                }
                let w = p.dist(q) * (1.0 / rho(p) + 4.0 / rho(m) + 1.0 / rho(q)) / 6.0;
                g.add_edge(a, c, w);
            }
        }
    }
    let node = |p: Point| -> NodeIndex {
        let (i, j) = (((p.x - b.x0) / h).round() as i64, ((p.y - b.y0) / h).round() as i64);
        idx[key(i, j)].expect("lattice node")
    };
    let (s, t) = (node(x), node(y));
    *dijkstra(&g, s, Some(t), |e| *e.weight()).get(&t).expect("reachable")
}

/// `∫_corridor |ε(u_i)|^p ρ^{b−p}` with `ρ` the distance to the side walls.
pub fn corridor_eps_closed_form(w: f64, ht: f64, p: f64, b: f64) -> f64 {
    2.0 * ht.powf(1.0 - p) * 2f64.powf(p) * (w / 2.0).powf(b + 1.0) * beta(p + 1.0, b - p + 1.0)
}

/// `∫_room |Du_i|^p ρ^a` with `ρ` the distance to the room's sides.
pub fn room_du_closed_form(r: f64, p: f64, a: f64) -> f64 {
    8f64.powf(p / 2.0) * 4.0 * r * (r / 2.0).powf(a + 1.0) * beta(a + 1.0, 2.0)
}

/// Smallest nonzero eigenvalue of the cell-centred Neumann Laplacian on the
/// unit square with `n` cells per side, from the 1D factor of the Kronecker
/// sum `T ⊗ I + I ⊗ T`.
pub fn neumann_gap(n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut t = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        if i > 0 {
            t[(i, i)] += 1.0;
            t[(i, i - 1)] = -1.0;
        }
        if i + 1 < n {
            t[(i, i)] += 1.0;
            t[(i, i + 1)] = -1.0;
        }
    }
    t /= h * h;
    let mut ev: Vec<f64> = t.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev[1]
}
