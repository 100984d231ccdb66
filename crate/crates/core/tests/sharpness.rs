use korn_lab::constants::*;
use korn_lab::fields::{example_field, ExponentParams, Grid};
use korn_lab::gallery::{rooms_and_corridors, RoomsSpec};
use korn_lab::geom::Rect;
use korn_lab::par::Execution;
use korn_lab::scaling::{korn_failure_predicted, HPolicy};

fn params(sigma: f64, tau: f64, p: f64, a: f64, b: f64) -> ExponentParams {
    ExponentParams { p, a, b, sigma, tau, ..Default::default() }
}

fn blowup(sigma: f64, tau: f64, p: f64, a: f64, b: f64) -> BlowupReport {
    let spec = RoomsSpec::geometric(sigma, tau, 4.0, 4);
    blowup_experiment(&spec, &params(sigma, tau, p, a, b), &QuotientKind::Korn, 1..=4, &HPolicy::default()).unwrap()
}

#[test]
fn sigma_two_tau_one_blows_up() {
    let r = blowup(2.0, 1.0, 2.0, 0.0, 2.0);
    assert!(r.failure_predicted);
    assert!(r.growth >= 10.0, "{r:?}");
    assert_eq!(r.verdict, BlowupVerdict::Fails);
}

#[test]
fn john_rooms_stay_bounded() {
    for p in [2.0, 3.0] {
        let r = blowup(1.0, 1.0, p, 0.0, p);
        assert!(!r.failure_predicted);
        assert!(r.spread <= 2.0, "{r:?}");
        assert_eq!(r.verdict, BlowupVerdict::ConsistentHolds);
    }
}

#[test]
fn square_corridors_grow() {
    let r = blowup(2.0, 2.0, 2.0, 0.0, 2.0);
    assert!(korn_failure_predicted(&r.params));
    assert!(r.growth > 1.0);
    assert_eq!(r.verdict, BlowupVerdict::Fails);
}

#[test]
fn rows_follow_room_sides() {
    let r = blowup(2.0, 1.0, 2.0, 0.0, 2.0);
    let got: Vec<f64> = r.rows.iter().map(|w| w.r).collect();
    let want: Vec<f64> = (1..=4).map(|i| 4f64.powi(-i)).collect();
    assert_eq!(got, want);
    assert!(r.rows.iter().all(|w| w.predicted_exponent == -1.0));
}

#[test]
fn out_of_range_rooms_are_rejected() {
    let spec = RoomsSpec::geometric(2.0, 1.0, 4.0, 3);
    assert!(blowup_experiment(&spec, &params(2.0, 1.0, 2.0, 0.0, 2.0), &QuotientKind::Korn, 1..=4, &HPolicy::default()).is_err());
}

#[test]
fn rooms_estimate_is_at_least_the_example_quotient() {
    let (d, table) = rooms_and_corridors(&RoomsSpec::geometric(2.0, 1.0, 2.0, 4)).unwrap();
    let room = table.room(4).unwrap();
    let (a, c) = (room.room, room.corridor);
    let window = Rect::new(a.x0.min(c.x0), a.y0.min(c.y0), a.x1.max(c.x1), a.y1.max(c.y1));
    let g = Grid::new(&d, window, c.width().min(c.height()) / 8.0).unwrap();
    let u = example_field(&table, 4, &g).unwrap();
    let problem = QuotientProblem { kind: QuotientKind::Korn, params: params(2.0, 1.0, 2.0, 0.0, 2.0) };
    let wq = korn_quotient(&g, &u, &problem.params, &problem.kind).unwrap();
    let opts = EstimateOptions { iterations: 3, ..Default::default() };
    let est = estimate_constant(&g, &problem, &opts, &[Field::Vector(u)], Execution::default()).unwrap();
    assert!(est.lower_bound >= wq, "{} < {wq}", est.lower_bound);
    assert_eq!(est.warm_starts, vec![wq]);
}
