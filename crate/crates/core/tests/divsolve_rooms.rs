use korn_lab::divsolve::{solve, solver_grid};
use korn_lab::fields::ExponentParams;
use korn_lab::gallery::{rooms_and_corridors, RoomsSpec};
use korn_lab::geom::{Point, Rect, Truncation, WhitneyDecomposition};
use korn_lab::par::Execution;
use korn_lab::qhyp::geodesic_chains;

#[test]
fn rooms_weak_form_and_constant_drift() {
    let params = ExponentParams { p: 2.0, q: 2.0, b: 2.0, ..Default::default() };
    let (d, _) = rooms_and_corridors(&RoomsSpec::geometric(2.0, 1.0, 4.0, 3)).unwrap();
    let inner = Rect::new(0.125, 0.125, 0.875, 0.875);
    let mut ratios = Vec::new();
    for level in [6, 7] {
        let w = WhitneyDecomposition::build(&d, &Truncation::uniform(level), Some(Point::new(0.5, 0.5))).unwrap();
        let chains = geodesic_chains(&d, &w, w.base_center()).unwrap();
        let g = solver_grid(&d, &w).unwrap();
        let f = g.sample(|p| if inner.contains_strict(p) { p.x - 0.5 } else { 0.0 });
        let (datum, sol) = solve(&g, &f, &w, &chains, &params, Execution::default()).unwrap();
        assert!(sol.summary.worst_weak <= 0.05, "level {level}: {}", sol.summary.worst_weak);
        assert!(datum.leak_fraction <= 0.01);
        ratios.push(sol.summary.norms.ratio);
    }
    let drift = (ratios[1] - ratios[0]).abs() / ratios[0];
    assert!(drift <= 0.15, "{ratios:?}");
}
