//! Exponent formulas for the rooms-and-corridors fields, threshold
//! predicates of the Korn and Poincaré theorems, and log-log slope fits.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{example_field, sym_gradient, weighted_power_sum, ExponentParams, Grid};
use crate::gallery::PlacementTable;
use crate::geom::RectDomain;
use crate::par::{self, Execution};
use crate::qhyp::FitVerdict;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn fit_line(points: &[[f64; 2]]) -> LineFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p[0] - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum();
    let syy: f64 = points.iter().map(|p| (p[1] - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 && sxx > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    LineFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Largest least-squares slope over windows of `window` consecutive points
/// (all points when fewer), with the start index of the maximising window.
pub fn max_window_slope(points: &[[f64; 2]], window: usize) -> (f64, usize) {
    let w = window.min(points.len());
    let mut best = (f64::NEG_INFINITY, 0);
    for start in 0..=points.len() - w {
        let s = fit_line(&points[start..start + w]).slope;
        if s > best.0 {
            best = (s, start);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Borderline,
    NotGuaranteed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedExponents {
    #[serde(rename = "room_Du")]
    pub room_du: f64,
    pub corridor_eps: f64,
    pub room_u: f64,
}

pub fn predicted_exponents(params: &ExponentParams) -> PredictedExponents {
    PredictedExponents {
        room_du: params.a + 2.0,
        corridor_eps: params.sigma * (params.b + 1.0) + params.tau * (1.0 - params.p),
        room_u: params.a + params.p + 2.0,
    }
}

/// The rooms-and-corridors fields `u_i` force a Korn failure exactly when
/// the room gradient exponent is below both competing exponents.
pub fn korn_failure_predicted(params: &ExponentParams) -> bool {
    let e = predicted_exponents(params);
    e.room_du < e.corridor_eps.min(e.room_u)
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// s-John Korn condition `n + a ≥ s(n + b − 1) − p + 1`.
pub fn korn_verdict_sjohn(params: &ExponentParams) -> Verdict {
    let lhs = params.n + params.a;
    let rhs = params.s * (params.n + params.b - 1.0) - params.p + 1.0;
    if lhs >= rhs || rel_eq(lhs, rhs) {
        Verdict::Holds
    } else {
        Verdict::Fails
    }
}

/// QHBC Korn condition `(a + n)·2β/(1 + β)` against `n + b − p`.
pub fn korn_verdict_qhbc(params: &ExponentParams) -> Verdict {
    let lhs = (params.a + params.n) * 2.0 * params.beta / (1.0 + params.beta);
    let rhs = params.n + params.b - params.p;
    if rel_eq(lhs, rhs) {
        Verdict::Borderline
    } else if lhs > rhs {
        Verdict::Holds
    } else {
        Verdict::Fails
    }
}

/// QHBC Poincaré condition `(a+n)/q · 2β/(1+β) + (p−n−b)/p > 0` with its
/// side conditions on `(p, q)`.
pub fn poincare_verdict_qhbc(params: &ExponentParams) -> Result<Verdict> {
    let ExponentParams { p, q, a, b, n, beta, .. } = *params;
    if p < 1.0 {
        return Err(LabError::SideCondition(format!("p = {p} < 1")));
    }
    if p > q {
        return Err(LabError::SideCondition(format!("p = {p} > q = {q}")));
    }
    if p < n && q > n * p / (n - p) {
        return Err(LabError::SideCondition(format!(
            "q = {q} exceeds the Sobolev exponent np/(n-p) = {}",
            n * p / (n - p)
        )));
    }
    let v = (a + n) / q * 2.0 * beta / (1.0 + beta) + (p - n - b) / p;
    Ok(if rel_eq(v, 0.0) {
        Verdict::NotGuaranteed
    } else if v > 0.0 {
        Verdict::Holds
    } else {
        Verdict::Fails
    })
}

/// s-John Poincaré condition `n + a ≥ s(n + b − 1) − p + 1`.
pub fn poincare_verdict_sjohn(params: &ExponentParams) -> Verdict {
    let lhs = params.n + params.a;
    let rhs = params.s * (params.n + params.b - 1.0) - params.p + 1.0;
    if lhs >= rhs || rel_eq(lhs, rhs) {
        Verdict::Holds
    } else {
        Verdict::NotGuaranteed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "room_Du")]
    RoomDu,
    #[serde(rename = "corridor_eps")]
    CorridorEps,
    #[serde(rename = "room_u")]
    RoomU,
}

impl Quantity {
    pub fn predicted(&self, e: &PredictedExponents) -> f64 {
        match self {
            Quantity::RoomDu => e.room_du,
            Quantity::CorridorEps => e.corridor_eps,
            Quantity::RoomU => e.room_u,
        }
    }
}

impl std::str::FromStr for Quantity {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "room_Du" | "room_du" => Ok(Quantity::RoomDu),
            "corridor_eps" => Ok(Quantity::CorridorEps),
            "room_u" => Ok(Quantity::RoomU),
            _ => Err(LabError::Parse(format!("unknown quantity {s}"))),
        }
    }
}

/// Per-piece grid resolution: rooms get `room_cells` cells per side, corridors
/// `corridor_cells` cells across their shorter side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HPolicy {
    pub room_cells: usize,
    pub corridor_cells: usize,
}

impl Default for HPolicy {
    fn default() -> Self {
        HPolicy {
            room_cells: 64,
            corridor_cells: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub params: ExponentParams,
    pub quantity: Quantity,
    /// `(r_i, integral)` in room order.
    pub samples: Vec<[f64; 2]>,
    pub fitted_slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub predicted_slope: f64,
    pub rel_error: f64,
    pub verdict: FitVerdict,
}

/// Integral of the chosen quantity for `u_i` on its own room or corridor grid.
pub fn room_integral(
    domain: &RectDomain,
    placement: &PlacementTable,
    params: &ExponentParams,
    quantity: Quantity,
    policy: &HPolicy,
    i: usize,
) -> Result<f64> {
    let room = placement.room(i)?;
    match quantity {
        Quantity::RoomDu | Quantity::RoomU => {
            let grid = Grid::new(domain, room.room, room.r / policy.room_cells as f64)?;
            let u = example_field(placement, i, &grid)?;
            if quantity == Quantity::RoomU {
                weighted_power_sum(&grid, &u, params.p, params.a, |_| true)
            } else {
                let (du, _) = sym_gradient(&grid, &u)?;
                weighted_power_sum(&grid, &du, params.p, params.a, |_| true)
            }
        }
        Quantity::CorridorEps => {
            if policy.corridor_cells < 8 {
                return Err(LabError::UnderResolved(format!(
                    "corridor {i} resolved by {} < 8 cells",
                    policy.corridor_cells
                )));
            }
            let side = room.width().min(room.height());
            let grid = Grid::new(domain, room.corridor, side / policy.corridor_cells as f64)?;
            let across = (room.width() / grid.h).round() as usize;
            if across < 8 {
                return Err(LabError::UnderResolved(format!(
                    "corridor {i} resolved by {across} < 8 cells"
                )));
            }
            let u = example_field(placement, i, &grid)?;
            let (_, eps) = sym_gradient(&grid, &u)?;
            weighted_power_sum(&grid, &eps, params.p, params.b - params.p, |_| true)
        }
    }
}

pub fn measure_scaling(
    domain: &RectDomain,
    placement: &PlacementTable,
    params: &ExponentParams,
    quantity: Quantity,
    policy: &HPolicy,
    rooms: RangeInclusive<usize>,
) -> Result<ScalingReport> {
    measure_scaling_with(domain, placement, params, quantity, policy, rooms, Execution::default())
}

pub fn measure_scaling_with(
    domain: &RectDomain,
    placement: &PlacementTable,
    params: &ExponentParams,
    quantity: Quantity,
    policy: &HPolicy,
    rooms: RangeInclusive<usize>,
    exec: Execution,
) -> Result<ScalingReport> {
    params.validate()?;
    let ids: Vec<usize> = rooms.collect();
    let values = par::map(exec, &ids, |&i| room_integral(domain, placement, params, quantity, policy, i));
    let mut samples = Vec::with_capacity(ids.len());
    for (&i, v) in ids.iter().zip(values) {
        samples.push([placement.room(i)?.r, v?]);
    }
    let predicted = quantity.predicted(&predicted_exponents(params));
    let logs: Vec<[f64; 2]> = samples.iter().map(|s| [s[0].ln(), s[1].ln()]).collect();
    let (fit, verdict) = if samples.len() >= 2 && samples.iter().all(|s| s[1] > 0.0) {
        let f = fit_line(&logs);
        let rel = (f.slope - predicted).abs() / predicted.abs().max(1.0);
        let v = if samples.len() < 3 {
            FitVerdict::Inconclusive
        } else if rel <= 0.02 {
            FitVerdict::Holds
        } else {
            FitVerdict::Fails
        };
        (f, v)
    } else {
        (
            LineFit {
                slope: f64::NAN,
                intercept: f64::NAN,
                r_squared: 0.0,
            },
            FitVerdict::Inconclusive,
        )
    };
    Ok(ScalingReport {
        params: *params,
        quantity,
        samples,
        fitted_slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        predicted_slope: predicted,
        rel_error: (fit.slope - predicted).abs() / predicted.abs().max(1.0),
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64, a: f64, b: f64, sigma: f64, tau: f64) -> ExponentParams {
        ExponentParams {
            p,
            a,
            b,
            sigma,
            tau,
            ..Default::default()
        }
    }

    #[test]
    fn exponent_examples() {
        let e = predicted_exponents(&params(2.0, 0.0, 2.0, 2.0, 1.0));
        assert_eq!((e.room_du, e.corridor_eps, e.room_u), (2.0, 5.0, 4.0));
        let e = predicted_exponents(&params(2.0, 0.0, 2.0, 1.0, 1.0));
        assert_eq!(e.corridor_eps, e.room_du);
        for tau in [1.0, 2.5, 7.0] {
            let e = predicted_exponents(&params(1.0, 0.0, 2.0, 2.0, tau));
            assert_eq!(e.corridor_eps, 6.0);
        }
    }

    #[test]
    fn exponents_are_affine_in_a_and_b() {
        let base = params(2.0, 0.5, 1.5, 3.0, 1.0);
        let e0 = predicted_exponents(&base);
        let ea = predicted_exponents(&ExponentParams { a: base.a + 1.0, ..base });
        let eb = predicted_exponents(&ExponentParams { b: base.b + 1.0, ..base });
        assert_eq!(
            (ea.room_du - e0.room_du, ea.corridor_eps - e0.corridor_eps, ea.room_u - e0.room_u),
            (1.0, 0.0, 1.0)
        );
        assert_eq!(
            (eb.room_du - e0.room_du, eb.corridor_eps - e0.corridor_eps, eb.room_u - e0.room_u),
            (0.0, 3.0, 0.0)
        );
    }

    #[test]
    fn sjohn_korn_verdicts() {
        let v = |s, a, b, p| {
            korn_verdict_sjohn(&ExponentParams {
                s,
                a,
                b,
                p,
                ..Default::default()
            })
        };
        assert_eq!(v(1.0, 0.0, 2.0, 2.0), Verdict::Holds);
        assert_eq!(v(1.0, 0.0, 3.0, 3.0), Verdict::Holds);
        assert_eq!(v(2.0, 0.0, 2.0, 2.0), Verdict::Fails);
        // the theorem's condition is non-strict
        assert_eq!(v(2.0, 3.0, 2.0, 2.0), Verdict::Holds);
    }

    #[test]
    fn qhbc_korn_verdicts() {
        let v = |a, b, p, beta| {
            korn_verdict_qhbc(&ExponentParams {
                a,
                b,
                p,
                beta,
                ..Default::default()
            })
        };
        assert_eq!(v(0.0, 1.5, 2.0, 1.0), Verdict::Holds);
        assert_eq!(v(0.0, 2.0, 2.0, 1.0 / 3.0), Verdict::Fails);
        assert_eq!(v(0.0, 2.0, 2.0, 1.0), Verdict::Borderline);
    }

    #[test]
    fn poincare_verdicts() {
        let pq = |p, q, a, b, beta| ExponentParams {
            p,
            q,
            a,
            b,
            beta,
            ..Default::default()
        };
        assert_eq!(poincare_verdict_qhbc(&pq(2.0, 2.0, 0.0, 0.0, 1.0)).unwrap(), Verdict::Holds);
        assert_eq!(poincare_verdict_qhbc(&pq(2.0, 2.0, 0.0, 4.0, 1.0)).unwrap(), Verdict::Fails);
        assert!(matches!(
            poincare_verdict_qhbc(&pq(2.0, 1.0, 0.0, 0.0, 1.0)),
            Err(LabError::SideCondition(_))
        ));
        assert!(poincare_verdict_qhbc(&pq(1.5, 7.0, 0.0, 0.0, 1.0)).is_err());
        let sj = |s, b| ExponentParams {
            s,
            b,
            ..Default::default()
        };
        assert_eq!(poincare_verdict_sjohn(&sj(1.0, 0.0)), Verdict::Holds);
        assert_eq!(poincare_verdict_sjohn(&sj(3.0, 0.0)), Verdict::Holds);
        assert_eq!(poincare_verdict_sjohn(&sj(3.0, 1.0)), Verdict::NotGuaranteed);
    }

    #[test]
    fn verdict_consistency_with_room_reduction() {
        for sigma in [1.0, 1.5, 2.0, 3.0] {
            for a in [0.0, 0.5, 1.0, 3.0] {
                for b in [0.0, 1.0, 2.0, 3.0] {
                    for p in [1.5, 2.0, 3.0] {
                        let pr = ExponentParams {
                            p,
                            a,
                            b,
                            sigma,
                            tau: 1.0,
                            s: sigma,
                            ..Default::default()
                        };
                        let fails = korn_verdict_sjohn(&pr) == Verdict::Fails;
                        assert_eq!(fails, korn_failure_predicted(&pr), "{pr:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn exact_power_data_fits_exactly() {
        let pts: Vec<[f64; 2]> = (1..=5)
            .map(|i| {
                let r = 4f64.powi(-i);
                [r.ln(), (3.0 * r.powf(2.7)).ln()]
            })
            .collect();
        let f = fit_line(&pts);
        assert!((f.slope - 2.7).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let (s, _) = max_window_slope(&pts, 3);
        assert!((s - 2.7).abs() < 1e-10);
    }
}
