//! File formats: domain and parameter JSON, cube and field CSV dumps, and
//! plot data.

use std::fmt;
use std::path::Path;

use serde::de::{self, DeserializeOwned, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::constants::BlowupReport;
use crate::error::{LabError, Result};
use crate::fields::{Grid, ScalarField, VectorField};
use crate::geom::{Rect, RectDomain, WhitneyDecomposition};
use crate::qhyp::FitReport;
use crate::scaling::ScalingReport;

/// Coordinate written as a decimal string; reads numbers, decimal strings
/// and `p/q` rationals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coord(pub f64);

impl Serialize for Coord {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

pub fn parse_coord(text: &str) -> Result<f64> {
    let t = text.trim();
    let v = match t.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| LabError::Parse(format!("bad numerator in {t:?}")))?;
            let d: f64 = d.trim().parse().map_err(|_| LabError::Parse(format!("bad denominator in {t:?}")))?;
            n / d
        }
        None => t.parse().map_err(|_| LabError::Parse(format!("bad number {t:?}")))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LabError::Parse(format!("non-finite coordinate {t:?}")))
    }
}

impl<'de> Deserialize<'de> for Coord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Coord;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a decimal/rational string")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Coord, E> {
                Ok(Coord(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Coord, E> {
                Ok(Coord(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Coord, E> {
                Ok(Coord(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Coord, E> {
                parse_coord(v).map(Coord).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFile {
    pub name: String,
    pub rects: Vec<[Coord; 4]>,
}

impl DomainFile {
    pub fn from_domain(d: &RectDomain) -> Self {
        DomainFile {
            name: d.name().to_string(),
            rects: d
                .rects()
                .iter()
                .map(|r| r.as_array().map(Coord))
                .collect(),
        }
    }

    pub fn to_domain(&self) -> Result<RectDomain> {
        let rects = self
            .rects
            .iter()
            .map(|r| Rect::new(r[0].0, r[1].0, r[2].0, r[3].0))
            .collect();
        RectDomain::new(self.name.clone(), rects)
    }
}

pub fn domain_to_json(d: &RectDomain) -> Result<String> {
    Ok(serde_json::to_string_pretty(&DomainFile::from_domain(d))?)
}

pub fn domain_from_json(text: &str) -> Result<RectDomain> {
    serde_json::from_str::<DomainFile>(text)?.to_domain()
}

pub fn read_domain(path: impl AsRef<Path>) -> Result<RectDomain> {
    domain_from_json(&std::fs::read_to_string(path)?)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(path, text)?)
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Parse(e.to_string())
}

fn write_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LabError::Parse(e.to_string()))
}

/// `level, ix, iy, dist_to_boundary`.
pub fn cubes_csv(decomp: &WhitneyDecomposition) -> Result<String> {
    write_rows(
        &["level", "ix", "iy", "dist_to_boundary"],
        decomp.cubes().iter().enumerate().map(|(id, c)| {
            vec![
                c.level.to_string(),
                c.ix.to_string(),
                c.iy.to_string(),
                decomp.dist_to_boundary(id).to_string(),
            ]
        }),
    )
}

fn cell_prefix(grid: &Grid, id: usize) -> Vec<String> {
    let (i, j) = grid.cells[id];
    let c = grid.centers[id];
    vec![i.to_string(), j.to_string(), c.x.to_string(), c.y.to_string(), grid.rho[id].to_string()]
}

/// `i, j, x, y, rho, value`.
pub fn scalar_field_csv(grid: &Grid, u: &ScalarField) -> Result<String> {
    write_rows(
        &["i", "j", "x", "y", "rho", "value"],
        (0..grid.len()).map(|id| {
            let mut r = cell_prefix(grid, id);
            r.push(u.values[id].to_string());
            r
        }),
    )
}

/// `i, j, x, y, rho, vx, vy`.
pub fn vector_field_csv(grid: &Grid, v: &VectorField) -> Result<String> {
    write_rows(
        &["i", "j", "x", "y", "rho", "vx", "vy"],
        (0..grid.len()).map(|id| {
            let mut r = cell_prefix(grid, id);
            r.push(v.x[id].to_string());
            r.push(v.y[id].to_string());
            r
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Loglog,
    Sequence,
}

impl std::str::FromStr for PlotKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loglog" => Ok(PlotKind::Loglog),
            "sequence" => Ok(PlotKind::Sequence),
            _ => Err(LabError::Parse(format!("unknown plot kind {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PlotSource<'a> {
    Scaling(&'a ScalingReport),
    Blowup(&'a BlowupReport),
    Fit(&'a FitReport),
}

/// Plot-ready CSV with a header row.
///
/// `loglog` writes the samples with a predicted power law through the first
/// sample; `sequence` writes them indexed from 1.
pub fn emit_plot_data(src: PlotSource, kind: PlotKind) -> Result<String> {
    let (names, samples, predicted): ([&str; 2], Vec<[f64; 2]>, Option<f64>) = match src {
        PlotSource::Scaling(r) => (["r_i", "integral"], r.samples.clone(), Some(r.predicted_slope)),
        PlotSource::Blowup(r) => (
            ["r_i", "quotient"],
            r.rows.iter().map(|w| [w.r, w.quotient]).collect(),
            r.rows.first().map(|w| w.predicted_exponent),
        ),
        PlotSource::Fit(r) => (["x", "y"], r.samples.clone(), r.predicted),
    };
    if samples.is_empty() {
        return Err(LabError::InsufficientSamples("report has no samples".into()));
    }
    let log_space = matches!(src, PlotSource::Fit(_));
    match kind {
        PlotKind::Loglog => {
            let [x0, y0] = samples[0];
            let line = |x: f64| match predicted {
                Some(s) if log_space => y0 + s * (x - x0),
                Some(s) => y0 * (x / x0).powf(s),
                None => f64::NAN,
            };
            let header = if predicted.is_some() {
                vec![names[0], names[1], "predicted"]
            } else {
                vec![names[0], names[1]]
            };
            write_rows(
                &header,
                samples.iter().map(|s| {
                    let mut r = vec![s[0].to_string(), s[1].to_string()];
                    if predicted.is_some() {
                        r.push(line(s[0]).to_string());
                    }
                    r
                }),
            )
        }
        PlotKind::Sequence => {
            let index: Vec<usize> = match src {
                PlotSource::Blowup(r) => r.rows.iter().map(|w| w.i).collect(),
                _ => (1..=samples.len()).collect(),
            };
            write_rows(
                &["i", names[0], names[1]],
                index.iter().zip(&samples).map(|(i, s)| vec![i.to_string(), s[0].to_string(), s[1].to_string()]),
            )
        }
    }
}

/// `i, r_i, quotient, predicted_exponent`.
pub fn blowup_csv(report: &BlowupReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(LabError::InsufficientSamples("blow-up report has no rows".into()));
    }
    write_rows(
        &["i", "r_i", "quotient", "predicted_exponent"],
        report.rows.iter().map(|w| {
            vec![w.i.to_string(), w.r.to_string(), w.quotient.to_string(), w.predicted_exponent.to_string()]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{BlowupRow, BlowupVerdict};
    use crate::fields::ExponentParams;
    use crate::gallery::{l_shape, rooms_and_corridors, RoomsSpec};
    use crate::qhyp::FitVerdict;

    #[test]
    fn domain_round_trip() {
        for d in [l_shape(1.0, 0.5).unwrap(), rooms_and_corridors(&RoomsSpec::geometric(2.0, 1.0, 4.0, 3)).unwrap().0] {
            let back = domain_from_json(&domain_to_json(&d).unwrap()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn coordinates_accept_rationals_and_numbers() {
        let d = domain_from_json(r#"{"name":"q","rects":[["0","1/3",1,"0.75"]]}"#).unwrap();
        assert_eq!(d.rects()[0], Rect::new(0.0, 1.0 / 3.0, 1.0, 0.75));
        assert!(domain_from_json(r#"{"name":"q","rects":[["0","1/0",1,1]]}"#).is_err());
        assert!(domain_from_json(r#"{"name":"q","rects":[],"extra":1}"#).is_err());
    }

    #[test]
    fn params_round_trip_and_reject_unknown_keys() {
        let p = ExponentParams { p: 3.0, a: 1.0 / 3.0, b: 0.1 + 0.2, ..Default::default() };
        let back: ExponentParams = serde_json::from_str(&to_json(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<ExponentParams>(r#"{"p":2,"bogus":1}"#).is_err());
    }

    fn scaling(samples: Vec<[f64; 2]>) -> ScalingReport {
        ScalingReport {
            params: ExponentParams::default(),
            quantity: crate::scaling::Quantity::RoomDu,
            samples,
            fitted_slope: 2.0,
            intercept: 0.0,
            r_squared: 1.0,
            predicted_slope: 2.0,
            rel_error: 0.0,
            verdict: FitVerdict::Holds,
        }
    }

    #[test]
    fn scaling_plot_columns() {
        let csv = emit_plot_data(PlotSource::Scaling(&scaling(vec![[0.25, 0.0625], [0.5, 0.25]])), PlotKind::Loglog).unwrap();
        assert_eq!(csv, "r_i,integral,predicted\n0.25,0.0625,0.0625\n0.5,0.25,0.25\n");
    }

    #[test]
    fn blowup_sequence_columns() {
        let report = BlowupReport {
            kind: "korn".into(),
            params: ExponentParams::default(),
            rows: vec![BlowupRow { i: 1, r: 0.25, quotient: 3.0, predicted_exponent: -1.0 }],
            growth: 1.0,
            spread: 1.0,
            failure_predicted: false,
            verdict: BlowupVerdict::ConsistentHolds,
        };
        let csv = emit_plot_data(PlotSource::Blowup(&report), PlotKind::Sequence).unwrap();
        assert_eq!(csv, "i,r_i,quotient\n1,0.25,3\n");
        assert_eq!(blowup_csv(&report).unwrap(), "i,r_i,quotient,predicted_exponent\n1,0.25,3,-1\n");
    }

    #[test]
    fn empty_fit_is_an_error() {
        let fit = FitReport {
            samples: vec![],
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: 0.0,
            predicted: None,
            verdict: FitVerdict::Inconclusive,
            witness: None,
        };
        let err = emit_plot_data(PlotSource::Fit(&fit), PlotKind::Loglog).unwrap_err();
        assert!(matches!(err, LabError::InsufficientSamples(_)));
    }
}
