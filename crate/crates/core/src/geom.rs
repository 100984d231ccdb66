//! Rectilinear domains: membership, boundary distance and Whitney cubes.
//!
//! A [`RectDomain`] is a connected finite union of closed axis-aligned
//! rectangles. Its boundary is computed once, at construction, as the set of
//! maximal axis-parallel segments separating the union from its complement,
//! so that edges shared between rectangles never count as boundary.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }
}

/// Closed axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn diam(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn contains_strict(&self, p: Point) -> bool {
        p.x > self.x0 && p.x < self.x1 && p.y > self.y0 && p.y < self.y1
    }

    /// Interiors overlap (positive-area intersection).
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Euclidean distance between two closed rectangles (0 when they meet).
    pub fn dist_rect(&self, other: &Rect) -> f64 {
        let dx = (other.x0 - self.x1).max(self.x0 - other.x1).max(0.0);
        let dy = (other.y0 - self.y1).max(self.y0 - other.y1).max(0.0);
        dx.hypot(dy)
    }

    pub fn dist_point(&self, p: Point) -> f64 {
        let dx = (self.x0 - p.x).max(p.x - self.x1).max(0.0);
        let dy = (self.y0 - p.y).max(p.y - self.y1).max(0.0);
        dx.hypot(dy)
    }

    /// Same center, side lengths scaled by `factor`.
    pub fn dilate(&self, factor: f64) -> Rect {
        let c = self.center();
        let hw = 0.5 * factor * self.width();
        let hh = 0.5 * factor * self.height();
        Rect::new(c.x - hw, c.y - hh, c.x + hw, c.y + hh)
    }

    pub fn expand(&self, margin: f64) -> Rect {
        Rect::new(
            self.x0 - margin,
            self.y0 - margin,
            self.x1 + margin,
            self.y1 + margin,
        )
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x0, self.y0),
            Point::new(self.x1, self.y0),
            Point::new(self.x1, self.y1),
            Point::new(self.x0, self.y1),
        ]
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Axis-parallel boundary segment, stored as a degenerate rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    fn as_rect(&self) -> Rect {
        Rect::new(
            self.a.x.min(self.b.x),
            self.a.y.min(self.b.y),
            self.a.x.max(self.b.x),
            self.a.y.max(self.b.y),
        )
    }
}

/// Connected finite union of closed rectangles.
#[derive(Debug, Clone)]
pub struct RectDomain {
    name: String,
    rects: Vec<Rect>,
    boundary: Vec<Rect>,
    bbox: Rect,
}

impl PartialEq for RectDomain {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.rects == other.rects
    }
}

impl RectDomain {
    pub fn new(name: impl Into<String>, rects: Vec<Rect>) -> Result<Self> {
        if rects.is_empty() {
            return Err(LabError::InvalidDomain("no rectangles".into()));
        }
        for (k, r) in rects.iter().enumerate() {
            if !r.as_array().iter().all(|v| v.is_finite()) {
                return Err(LabError::InvalidDomain(format!("rect {k} is not finite")));
            }
            if r.width() <= 0.0 || r.height() <= 0.0 {
                return Err(LabError::InvalidDomain(format!(
                    "rect {k} has nonpositive width or height"
                )));
            }
        }
        if !rects_connected(&rects) {
            return Err(LabError::InvalidDomain("union is not connected".into()));
        }
        let bbox = rects.iter().skip(1).fold(rects[0], |acc, r| {
            Rect::new(
                acc.x0.min(r.x0),
                acc.y0.min(r.y0),
                acc.x1.max(r.x1),
                acc.y1.max(r.y1),
            )
        });
        let boundary = merged_boundary(&rects)
            .into_iter()
            .map(|s| s.as_rect())
            .collect();
        Ok(RectDomain {
            name: name.into(),
            rects,
            boundary,
            bbox,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn bbox(&self) -> Rect {
        self.bbox
    }

    pub fn boundary_segments(&self) -> Vec<Segment> {
        self.boundary
            .iter()
            .map(|r| Segment {
                a: Point::new(r.x0, r.y0),
                b: Point::new(r.x1, r.y1),
            })
            .collect()
    }

    /// Diameter of the union (attained between bounding-box corners of the
    /// rectangles, so the max over rectangle corners is exact).
    pub fn diam(&self) -> f64 {
        let pts: Vec<Point> = self.rects.iter().flat_map(|r| r.corners()).collect();
        let mut d: f64 = 0.0;
        for (i, p) in pts.iter().enumerate() {
            for q in &pts[i + 1..] {
                d = d.max(p.dist(*q));
            }
        }
        d
    }

    /// Closed-set membership.
    pub fn contains(&self, p: Point) -> bool {
        self.rects.iter().any(|r| r.contains(p))
    }

    /// Membership of the open interior: inside the closed union and off the
    /// merged boundary.
    pub fn contains_interior(&self, p: Point) -> bool {
        self.contains(p) && self.distance_to_boundary_unchecked(p) > 0.0
    }

    /// ρ(p) = dist(p, ∂Ω) for a point of the closed union.
    pub fn boundary_distance(&self, p: Point) -> Result<f64> {
        if !self.contains(p) {
            return Err(LabError::NotInDomain { x: p.x, y: p.y });
        }
        Ok(self.distance_to_boundary_unchecked(p))
    }

    /// Distance to the merged boundary without the membership check.
    pub fn distance_to_boundary_unchecked(&self, p: Point) -> f64 {
        let mut best = f64::INFINITY;
        for s in &self.boundary {
            let d = s.dist_point(p);
            if d < best {
                best = d;
            }
        }
        best
    }

    /// dist(R, ∂Ω) for a closed rectangle R.
    pub fn rect_boundary_distance(&self, r: &Rect) -> f64 {
        self.boundary
            .iter()
            .map(|s| s.dist_rect(r))
            .fold(f64::INFINITY, f64::min)
    }

    /// True when the interior of `r` meets the interior of the domain.
    pub fn meets_interior(&self, r: &Rect) -> bool {
        self.rects.iter().any(|d| d.overlaps(r))
    }
}

fn rects_connected(rects: &[Rect]) -> bool {
    let n = rects.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if seen[j] {
                continue;
            }
            let a = rects[i];
            let b = rects[j];
            let ox = a.x1.min(b.x1) - a.x0.max(b.x0);
            let oy = a.y1.min(b.y1) - a.y0.max(b.y0);
            if ox >= 0.0 && oy >= 0.0 && (ox > 0.0 || oy > 0.0) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

/// Boundary of the union as maximal axis-parallel segments, computed on the
/// elementary grid spanned by all rectangle coordinates.
fn merged_boundary(rects: &[Rect]) -> Vec<Segment> {
    let xs = sorted_unique(rects.iter().flat_map(|r| [r.x0, r.x1]).collect());
    let ys = sorted_unique(rects.iter().flat_map(|r| [r.y0, r.y1]).collect());
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let inside = |a: isize, b: isize| -> bool {
        if a < 0 || b < 0 || a as usize >= nx || b as usize >= ny {
            return false;
        }
        let c = Point::new(
            0.5 * (xs[a as usize] + xs[a as usize + 1]),
            0.5 * (ys[b as usize] + ys[b as usize + 1]),
        );
        rects.iter().any(|r| r.contains(c))
    };
    let mut segs = Vec::new();
    // vertical edges at xs[a]
    for a in 0..=nx {
        let mut start: Option<usize> = None;
        for b in 0..=ny {
            let is_edge = b < ny && inside(a as isize - 1, b as isize) != inside(a as isize, b as isize);
            match (is_edge, start) {
                (true, None) => start = Some(b),
                (false, Some(s)) => {
                    segs.push(Segment {
                        a: Point::new(xs[a], ys[s]),
                        b: Point::new(xs[a], ys[b]),
                    });
                    start = None;
                }
                _ => {}
            }
        }
    }
    // horizontal edges at ys[b]
    for b in 0..=ny {
        let mut start: Option<usize> = None;
        for a in 0..=nx {
            let is_edge = a < nx && inside(a as isize, b as isize - 1) != inside(a as isize, b as isize);
            match (is_edge, start) {
                (true, None) => start = Some(a),
                (false, Some(s)) => {
                    segs.push(Segment {
                        a: Point::new(xs[s], ys[b]),
                        b: Point::new(xs[a], ys[b]),
                    });
                    start = None;
                }
                _ => {}
            }
        }
    }
    segs
}

// ---------------------------------------------------------------------------
// Whitney decomposition
// ---------------------------------------------------------------------------

/// Dyadic cube `[ix·2^{-k}, (ix+1)·2^{-k}] × [iy·2^{-k}, (iy+1)·2^{-k}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WhitneyCube {
    pub level: i32,
    pub ix: i64,
    pub iy: i64,
}

impl WhitneyCube {
    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn diam(&self) -> f64 {
        self.side() * std::f64::consts::SQRT_2
    }

    pub fn rect(&self) -> Rect {
        let s = self.side();
        Rect::new(
            self.ix as f64 * s,
            self.iy as f64 * s,
            (self.ix + 1) as f64 * s,
            (self.iy + 1) as f64 * s,
        )
    }

    pub fn center(&self) -> Point {
        self.rect().center()
    }

    pub fn children(&self) -> [WhitneyCube; 4] {
        let l = self.level + 1;
        let (x, y) = (2 * self.ix, 2 * self.iy);
        [
            WhitneyCube { level: l, ix: x, iy: y },
            WhitneyCube { level: l, ix: x + 1, iy: y },
            WhitneyCube { level: l, ix: x, iy: y + 1 },
            WhitneyCube { level: l, ix: x + 1, iy: y + 1 },
        ]
    }

    /// Integer bounds `[x0, x1] × [y0, y1]` at a finer level `m ≥ level`.
    pub fn bounds_at(&self, m: i32) -> [i64; 4] {
        let sh = (m - self.level) as u32;
        [
            self.ix << sh,
            self.iy << sh,
            (self.ix + 1) << sh,
            (self.iy + 1) << sh,
        ]
    }

    /// Closures intersect (exact integer arithmetic).
    pub fn touches(&self, other: &WhitneyCube) -> bool {
        let m = self.level.max(other.level);
        let a = self.bounds_at(m);
        let b = other.bounds_at(m);
        a[0] <= b[2] && b[0] <= a[2] && a[1] <= b[3] && b[1] <= a[3]
    }

    /// Closures share a segment of positive length.
    pub fn shares_face(&self, other: &WhitneyCube) -> bool {
        let m = self.level.max(other.level);
        let a = self.bounds_at(m);
        let b = other.bounds_at(m);
        let ox = a[2].min(b[2]) - a[0].max(b[0]);
        let oy = a[3].min(b[3]) - a[1].max(b[1]);
        ox >= 0 && oy >= 0 && (ox > 0) != (oy > 0)
    }
}

/// Region in which cubes finer than the global `min_level` are retained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineZone {
    pub rect: Rect,
    pub max_level: i32,
}

/// Finite truncation of the (infinite) Whitney decomposition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub min_level: i32,
    #[serde(default)]
    pub zones: Vec<RefineZone>,
}

impl Truncation {
    pub fn uniform(min_level: i32) -> Self {
        Truncation {
            min_level,
            zones: Vec::new(),
        }
    }

    pub fn with_zones(min_level: i32, zones: Vec<RefineZone>) -> Self {
        Truncation { min_level, zones }
    }

    fn allowed_level(&self, r: &Rect) -> i32 {
        self.zones
            .iter()
            .filter(|z| z.rect.overlaps(r))
            .map(|z| z.max_level)
            .fold(self.min_level, i32::max)
    }

    pub fn finest_level(&self) -> i32 {
        self.zones
            .iter()
            .map(|z| z.max_level)
            .fold(self.min_level, i32::max)
    }
}

/// Truncated dyadic Whitney decomposition under the convention
/// `diam(Q) ≤ dist(Q, ∂Ω) ≤ 4·diam(Q)`.
///
/// Only the adjacency component containing the base cube is kept; cubes in
/// other components (reachable in the full decomposition only through
/// truncated cubes) are dropped and `truncated` is set.
#[derive(Debug, Clone)]
pub struct WhitneyDecomposition {
    cubes: Vec<WhitneyCube>,
    dist: Vec<f64>,
    adjacency: Vec<Vec<usize>>,
    index: HashMap<WhitneyCube, usize>,
    levels: Vec<i32>,
    base: usize,
    truncation: Truncation,
    truncated: bool,
}

impl WhitneyDecomposition {
    /// Uniform truncation at `min_level`, base cube at the one containing
    /// the center of the largest cube (ties broken by position).
    pub fn new(domain: &RectDomain, min_level: i32) -> Result<Self> {
        Self::build(domain, &Truncation::uniform(min_level), None)
    }

    /// General constructor. `base_point` selects the base cube; `None` picks
    /// the largest cube, nearest the bounding-box center.
    pub fn build(
        domain: &RectDomain,
        truncation: &Truncation,
        base_point: Option<Point>,
    ) -> Result<Self> {
        if truncation.min_level < 0 {
            return Err(LabError::InvalidParameter("min_level must be >= 0".into()));
        }
        let bbox = domain.bbox();
        let extent = bbox.width().max(bbox.height());
        let k0 = -(extent.log2().ceil() as i32);
        let s0 = (-(k0 as f64)).exp2();
        let mut raw = Vec::new();
        let mut truncated = false;
        let ix0 = (bbox.x0 / s0).floor() as i64;
        let ix1 = (bbox.x1 / s0).ceil() as i64;
        let iy0 = (bbox.y0 / s0).floor() as i64;
        let iy1 = (bbox.y1 / s0).ceil() as i64;
        let mut stack: Vec<WhitneyCube> = Vec::new();
        for ix in ix0..ix1 {
            for iy in iy0..iy1 {
                stack.push(WhitneyCube { level: k0, ix, iy });
            }
        }
        while let Some(q) = stack.pop() {
            let r = q.rect();
            if !domain.meets_interior(&r) {
                continue;
            }
            let allowed = truncation.allowed_level(&r);
            if q.level > allowed {
                truncated = true;
                continue;
            }
            let d = domain.rect_boundary_distance(&r);
            let admissible = d >= q.diam() && domain.contains(r.center());
            if admissible {
                raw.push((q, d));
            } else if q.level < allowed {
                stack.extend(q.children());
            } else {
                truncated = true;
            }
        }
        if raw.is_empty() {
            return Err(LabError::TooCoarse {
                min_level: truncation.min_level as u32,
            });
        }
        raw.sort_by(|a, b| a.0.cmp(&b.0));
        let index: HashMap<WhitneyCube, usize> =
            raw.iter().enumerate().map(|(i, (q, _))| (*q, i)).collect();
        let levels = sorted_levels(raw.iter().map(|(q, _)| q.level));
        let adjacency = build_adjacency(&raw.iter().map(|(q, _)| *q).collect::<Vec<_>>(), &index, &levels);

        let target = base_point.unwrap_or_else(|| bbox.center());
        let base = pick_base(&raw, target, base_point.is_some())?;

        // keep the component of the base cube
        let mut seen = vec![false; raw.len()];
        let mut queue = VecDeque::from([base]);
        seen[base] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            truncated = true;
        }
        let kept: Vec<(WhitneyCube, f64)> = raw
            .iter()
            .zip(&seen)
            .filter(|(_, s)| **s)
            .map(|(c, _)| *c)
            .collect();
        let index: HashMap<WhitneyCube, usize> =
            kept.iter().enumerate().map(|(i, (q, _))| (*q, i)).collect();
        let cubes: Vec<WhitneyCube> = kept.iter().map(|(q, _)| *q).collect();
        let dist: Vec<f64> = kept.iter().map(|(_, d)| *d).collect();
        let levels = sorted_levels(cubes.iter().map(|q| q.level));
        let adjacency = build_adjacency(&cubes, &index, &levels);
        let base = index[&raw[base].0];
        Ok(WhitneyDecomposition {
            cubes,
            dist,
            adjacency,
            index,
            levels,
            base,
            truncation: truncation.clone(),
            truncated,
        })
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cubes(&self) -> &[WhitneyCube] {
        &self.cubes
    }

    pub fn cube(&self, id: usize) -> Result<&WhitneyCube> {
        self.cubes.get(id).ok_or(LabError::UnknownCube(id))
    }

    /// dist(Q, ∂Ω) per cube.
    pub fn dist_to_boundary(&self, id: usize) -> f64 {
        self.dist[id]
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn base_center(&self) -> Point {
        self.cubes[self.base].center()
    }

    pub fn min_level(&self) -> i32 {
        self.truncation.min_level
    }

    pub fn truncation(&self) -> &Truncation {
        &self.truncation
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Cubes whose closures meet the closure of `id`.
    pub fn neighbors(&self, id: usize) -> Result<&[usize]> {
        self.adjacency
            .get(id)
            .map(|v| v.as_slice())
            .ok_or(LabError::UnknownCube(id))
    }

    pub fn id_of(&self, q: &WhitneyCube) -> Option<usize> {
        self.index.get(q).copied()
    }

    /// A retained cube whose closure contains `p`, preferring the largest.
    pub fn locate(&self, p: Point) -> Option<usize> {
        for &l in &self.levels {
            let s = (-(l as f64)).exp2();
            let fx = p.x / s;
            let fy = p.y / s;
            let cx = [fx.floor() as i64, fx.ceil() as i64 - 1];
            let cy = [fy.floor() as i64, fy.ceil() as i64 - 1];
            for &ix in &cx {
                for &iy in &cy {
                    let q = WhitneyCube { level: l, ix, iy };
                    if let Some(&id) = self.index.get(&q) {
                        if q.rect().contains(p) {
                            return Some(id);
                        }
                    }
                }
            }
        }
        None
    }

    /// Maximum number of dilated cubes `factor·Q` containing any of the
    /// supplied points.
    pub fn overlap_multiplicity(&self, factor: f64, probes: &[Point]) -> usize {
        let dil: Vec<Rect> = self.cubes.iter().map(|q| q.rect().dilate(factor)).collect();
        probes
            .iter()
            .map(|p| dil.iter().filter(|r| r.contains_strict(*p)).count())
            .max()
            .unwrap_or(0)
    }
}

fn sorted_levels(it: impl Iterator<Item = i32>) -> Vec<i32> {
    let set: HashSet<i32> = it.collect();
    let mut v: Vec<i32> = set.into_iter().collect();
    v.sort_unstable();
    v
}

fn pick_base(raw: &[(WhitneyCube, f64)], target: Point, strict: bool) -> Result<usize> {
    let containing: Vec<usize> = (0..raw.len())
        .filter(|&i| raw[i].0.rect().contains(target))
        .collect();
    let pool: Vec<usize> = if containing.is_empty() {
        if strict {
            return Err(LabError::NotInDomain {
                x: target.x,
                y: target.y,
            });
        }
        (0..raw.len()).collect()
    } else {
        containing
    };
    let key = |i: usize| {
        let q = raw[i].0;
        (q.level, q.center().dist(target))
    };
    Ok(*pool
        .iter()
        .min_by(|&&a, &&b| {
            let (la, da) = key(a);
            let (lb, db) = key(b);
            la.cmp(&lb).then(da.partial_cmp(&db).unwrap())
        })
        .unwrap())
}

fn build_adjacency(
    cubes: &[WhitneyCube],
    index: &HashMap<WhitneyCube, usize>,
    levels: &[i32],
) -> Vec<Vec<usize>> {
    let level_set: HashSet<i32> = levels.iter().copied().collect();
    cubes
        .iter()
        .enumerate()
        .map(|(id, q)| {
            let mut out = Vec::new();
            for dl in -2..=2 {
                let l = q.level + dl;
                if !level_set.contains(&l) {
                    continue;
                }
                let r = q.rect();
                let s = (-(l as f64)).exp2();
                let xa = (r.x0 / s).floor() as i64 - 1;
                let xb = (r.x1 / s).ceil() as i64;
                let ya = (r.y0 / s).floor() as i64 - 1;
                let yb = (r.y1 / s).ceil() as i64;
                for ix in xa..=xb {
                    for iy in ya..=yb {
                        let c = WhitneyCube { level: l, ix, iy };
                        if let Some(&j) = index.get(&c) {
                            if j != id && q.touches(&c) {
                                out.push(j);
                            }
                        }
                    }
                }
            }
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect()
}
