//! Independent oracles for the quasihyperbolic metric, the scaling integrals
//! and the Poincaré constant.

use korn_lab::constants::{estimate_constant, EstimateOptions, QuotientKind, QuotientProblem};
use korn_lab::fields::{ExponentParams, Grid};
use korn_lab::gallery::{rooms_and_corridors, square, strip, RoomsSpec};
use korn_lab::geom::Point;
use korn_lab::par::Execution;
use korn_lab::qhyp::qh_distance;
use korn_lab::scaling::{room_integral, HPolicy, Quantity};

mod common;
use common::{corridor_eps_closed_form, lattice_distance, neumann_gap, room_du_closed_form};

#[test]
fn strip_midline_matches_lattice_oracle() {
    let d = strip(10.0, 2.0).unwrap();
    let (x, y) = (Point::new(3.0, 1.0), Point::new(7.0, 1.0));
    let oracle = lattice_distance(&d, x, y, 1.0 / 32.0);
    assert!((oracle - 4.0).abs() <= 0.03 * 4.0, "oracle {oracle}");
    let k = qh_distance(&d, x, y, 8).unwrap().upper;
    assert!((k - oracle).abs() <= 0.03 * oracle, "k̂ {k} oracle {oracle}");
}

#[test]
fn square_vertical_matches_lattice_oracle() {
    let d = square(1.0).unwrap();
    let (x, y) = (Point::new(0.5, 0.5), Point::new(0.5, 0.1));
    let oracle = lattice_distance(&d, x, y, 1.0 / 256.0);
    let ln5 = 5f64.ln();
    assert!((oracle - ln5).abs() <= 0.03 * ln5, "oracle {oracle}");
    let k = qh_distance(&d, x, y, 8).unwrap().upper;
    assert!((k - oracle).abs() <= 0.03 * oracle, "k̂ {k} oracle {oracle}");
}

#[test]
fn scaling_integrals_match_beta_identities() {
    for (p, a, b, sigma, tau) in [(2.0, 0.0, 2.0, 2.0, 1.0), (2.0, 1.0, 2.0, 2.0, 1.0), (3.0, 0.0, 3.0, 2.0, 2.0)] {
        let params = ExponentParams { p, a, b, sigma, tau, ..Default::default() };
        let (d, table) = rooms_and_corridors(&RoomsSpec::geometric(sigma, tau, 4.0, 4)).unwrap();
        for i in 1..=4 {
            let room = table.room(i).unwrap();
            let policy = HPolicy::default();
            let eps = room_integral(&d, &table, &params, Quantity::CorridorEps, &policy, i).unwrap();
            let eo = corridor_eps_closed_form(room.width(), room.height(), p, b);
            assert!((eps / eo - 1.0).abs() <= 0.02, "eps room {i}: {eps} vs {eo}");
            let du = room_integral(&d, &table, &params, Quantity::RoomDu, &policy, i).unwrap();
            let dor = room_du_closed_form(room.r, p, a);
            assert!((du / dor - 1.0).abs() <= 0.02, "Du room {i}: {du} vs {dor}");
        }
    }
}

#[test]
fn poincare_estimate_matches_neumann_oracle() {
    let d = square(1.0).unwrap();
    let problem = QuotientProblem { kind: QuotientKind::Poincare, params: ExponentParams::default() };
    let mut last = None;
    for n in [64, 128] {
        let g = Grid::uniform(&d, 1.0 / n as f64).unwrap();
        let est = estimate_constant(&g, &problem, &EstimateOptions::default(), &[], Execution::default()).unwrap();
        let oracle = 1.0 / neumann_gap(n);
        assert!((est.lower_bound / oracle - 1.0).abs() <= 0.05, "{} vs {oracle}", est.lower_bound);
        let pi2 = 1.0 / std::f64::consts::PI.powi(2);
        assert!((est.lower_bound / pi2 - 1.0).abs() <= 0.05);
        if let Some(prev) = last {
            let drift: f64 = (est.lower_bound - prev) / prev;
            assert!(drift.abs() <= 0.10);
        }
        last = Some(est.lower_bound);
    }
}
