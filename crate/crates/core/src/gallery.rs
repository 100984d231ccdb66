//! Reference domains and the rooms-and-corridors family.
//!
//! Layout: `Q_0 = [0,1]²`; below its bottom edge hang corridors
//! `C_i = [x_i − w_i/2, x_i + w_i/2] × [−r_i^τ, 0]` with `w_i = r_i^σ`, and
//! under each corridor a square room `Q_i` of side `r_i`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geom::{Point, Rect, RectDomain, RefineZone, Truncation};

pub fn square(side: f64) -> Result<RectDomain> {
    positive("side", side)?;
    RectDomain::new("square", vec![Rect::new(0.0, 0.0, side, side)])
}

pub fn strip(length: f64, width: f64) -> Result<RectDomain> {
    positive("length", length)?;
    positive("width", width)?;
    RectDomain::new("strip", vec![Rect::new(0.0, 0.0, length, width)])
}

/// Union of `[0, arm] × [0, thickness]` and `[0, thickness] × [0, arm]`.
pub fn l_shape(arm: f64, thickness: f64) -> Result<RectDomain> {
    positive("arm", arm)?;
    positive("thickness", thickness)?;
    if thickness > arm {
        return Err(LabError::InvalidParameter(
            "l_shape thickness must not exceed arm".into(),
        ));
    }
    RectDomain::new(
        "l_shape",
        vec![
            Rect::new(0.0, 0.0, arm, thickness),
            Rect::new(0.0, 0.0, thickness, arm),
        ],
    )
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(LabError::InvalidParameter(format!("{name} must be positive")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomsSpec {
    pub sigma: f64,
    pub tau: f64,
    pub room_sides: Vec<f64>,
}

impl RoomsSpec {
    /// `r_i = ratio^{-i}` for `i = 1..=rooms`.
    pub fn geometric(sigma: f64, tau: f64, ratio: f64, rooms: usize) -> Self {
        RoomsSpec {
            sigma,
            tau,
            room_sides: (1..=rooms).map(|i| ratio.powi(-(i as i32))).collect(),
        }
    }

    pub fn rooms(&self) -> usize {
        self.room_sides.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 1.0 && self.tau >= 1.0) {
            return Err(LabError::InvalidParameter("sigma and tau must be >= 1".into()));
        }
        for (i, &r) in self.room_sides.iter().enumerate() {
            if !(r > 0.0 && r < 1.0) {
                return Err(LabError::InvalidParameter(format!(
                    "room side r_{} = {r} must lie in (0, 1)",
                    i + 1
                )));
            }
        }
        if self.room_sides.windows(2).any(|w| w[1] >= w[0]) {
            return Err(LabError::InvalidParameter(
                "room sides must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomPlacement {
    pub index: usize,
    pub x: f64,
    pub r: f64,
    pub corridor: Rect,
    pub room: Rect,
    pub room_center: Point,
}

impl RoomPlacement {
    pub fn width(&self) -> f64 {
        self.corridor.width()
    }

    pub fn height(&self) -> f64 {
        self.corridor.height()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementTable {
    pub spec: RoomsSpec,
    pub gap: f64,
    pub rescaled: bool,
    pub rooms: Vec<RoomPlacement>,
}

impl PlacementTable {
    /// Room `i`, 1-based.
    pub fn room(&self, i: usize) -> Result<&RoomPlacement> {
        if i == 0 || i > self.rooms.len() {
            return Err(LabError::IndexOutOfRange {
                index: i,
                len: self.rooms.len(),
            });
        }
        Ok(&self.rooms[i - 1])
    }
}

pub fn rooms_and_corridors(spec: &RoomsSpec) -> Result<(RectDomain, PlacementTable)> {
    spec.validate()?;
    let rs = &spec.room_sides;
    let n = rs.len();
    let mut rects = vec![Rect::new(0.0, 0.0, 1.0, 1.0)];
    if n == 0 {
        let table = PlacementTable {
            spec: spec.clone(),
            gap: 0.0,
            rescaled: false,
            rooms: Vec::new(),
        };
        return Ok((RectDomain::new("rooms_and_corridors", rects)?, table));
    }
    let total: f64 = rs.iter().sum();
    let mut gap = rs[0] / 4.0;
    let mut rescaled = false;
    if total + (n as f64 + 1.0) * gap > 1.0 {
        gap = (1.0 - total) / (n as f64 + 1.0);
        rescaled = true;
        if gap <= 0.0 {
            return Err(LabError::InfeasiblePlacement(format!(
                "room sides sum to {total} >= 1; need faster decay so that sum r_i < 1"
            )));
        }
    }
    let mut rooms = Vec::with_capacity(n);
    let mut x = rs[0] / 2.0 + gap;
    for (k, &r) in rs.iter().enumerate() {
        if k > 0 {
            x += rs[k - 1] / 2.0 + r / 2.0 + gap;
        }
        let w = r.powf(spec.sigma);
        let ht = r.powf(spec.tau);
        let corridor = Rect::new(x - w / 2.0, -ht, x + w / 2.0, 0.0);
        let room = Rect::new(x - r / 2.0, -ht - r, x + r / 2.0, -ht);
        rooms.push(RoomPlacement {
            index: k + 1,
            x,
            r,
            corridor,
            room,
            room_center: Point::new(x, -r / 2.0 - ht),
        });
        rects.push(corridor);
        rects.push(room);
    }
    let domain = RectDomain::new("rooms_and_corridors", rects)?;
    Ok((
        domain,
        PlacementTable {
            spec: spec.clone(),
            gap,
            rescaled,
            rooms,
        },
    ))
}

/// Truncation resolving every corridor and room of a placement table.
///
/// Corridors get cubes down to `w/16`, rooms down to `r/32`, and each corridor
/// mouth is surrounded by rings of half-size `w·2^j` refined to `w·2^{j−4}`
/// so the decomposition grades from the global level to the corridor scale.
pub fn rooms_truncation(table: &PlacementTable, min_level: i32) -> Truncation {
    let mut zones = Vec::new();
    for room in &table.rooms {
        let w = room.width();
        let kc = (1.0 / w).log2().ceil() as i32 + 4;
        let kr = ((1.0 / room.r).log2().ceil() as i32 + 5).max(min_level);
        zones.push(RefineZone {
            rect: room.corridor,
            max_level: kc,
        });
        zones.push(RefineZone {
            rect: room.room,
            max_level: kr,
        });
        for mouth in [Point::new(room.x, 0.0), Point::new(room.x, -room.height())] {
            let mut j = 1;
            while kc - j > min_level {
                let half = w * (j as f64).exp2();
                zones.push(RefineZone {
                    rect: Rect::new(mouth.x - half, mouth.y - half, mouth.x + half, mouth.y + half),
                    max_level: kc - j,
                });
                j += 1;
            }
        }
    }
    Truncation::with_zones(min_level, zones)
}
