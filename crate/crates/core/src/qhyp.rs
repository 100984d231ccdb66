//! Quasihyperbolic distance, geodesic chains and shadows, and the β-QHBC and
//! s-John classifiers.
//!
//! Distances are shortest paths on a graph whose nodes are Whitney cube
//! centers and cube corners (hanging corners of smaller neighbours included);
//! every edge lies inside one closed cube and is weighted by a composite
//! trapezoid rule for `∫ 1/ρ`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geom::{Point, RectDomain, WhitneyDecomposition};
use crate::par::{self, Execution};
use crate::scaling::{fit_line, max_window_slope};

const TRAPEZOID_PANELS: usize = 4;

/// `∫_a^b 1/ρ` by the composite trapezoid rule, given the endpoint values.
fn edge_weight(domain: &RectDomain, a: Point, b: Point, ra: f64, rb: f64, panels: usize) -> f64 {
    let len = a.dist(b);
    if len == 0.0 {
        return 0.0;
    }
    let mut s = 0.5 * (1.0 / ra + 1.0 / rb);
    for k in 1..panels {
        let p = a.lerp(b, k as f64 / panels as f64);
        s += 1.0 / domain.distance_to_boundary_unchecked(p);
    }
    len * s / panels as f64
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    d: f64,
    v: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Weighted undirected graph in compressed adjacency form.
#[derive(Debug, Clone)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl Csr {
    fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut deg = vec![0usize; n + 1];
        for &(u, v, _) in edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0usize; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        for &(u, v, w) in edges {
            targets[fill[u]] = v;
            weights[fill[u]] = w;
            fill[u] += 1;
            targets[fill[v]] = u;
            weights[fill[v]] = w;
            fill[v] += 1;
        }
        Csr {
            offsets,
            targets,
            weights,
        }
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    /// Multi-source Dijkstra; `order` lists nodes in settle order.
    fn dijkstra(&self, seeds: &[(usize, f64)]) -> Tree {
        let n = self.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut heap = BinaryHeap::new();
        for &(s, d) in seeds {
            if d < dist[s] {
                dist[s] = d;
                heap.push(HeapItem { d, v: s });
            }
        }
        while let Some(HeapItem { d, v }) = heap.pop() {
            if done[v] {
                continue;
            }
            done[v] = true;
            order.push(v);
            for (u, w) in self.neighbors(v) {
                let nd = d + w;
                if nd < dist[u] {
                    dist[u] = nd;
                    pred[u] = v;
                    heap.push(HeapItem { d: nd, v: u });
                }
            }
        }
        Tree { dist, pred, order }
    }
}

/// Shortest-path tree: distances, predecessors (`usize::MAX` at roots) and
/// the settle order.
#[derive(Debug, Clone)]
pub struct Tree {
    pub dist: Vec<f64>,
    pub pred: Vec<usize>,
    pub order: Vec<usize>,
}

impl Tree {
    /// Root-to-`v` path.
    pub fn path_to(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut cur = v;
        while self.pred[cur] != usize::MAX {
            cur = self.pred[cur];
            out.push(cur);
        }
        out.reverse();
        out
    }
}

/// Discrete quasihyperbolic graph over a Whitney decomposition.
#[derive(Debug, Clone)]
pub struct QhGraph {
    domain: RectDomain,
    decomp: WhitneyDecomposition,
    points: Vec<Point>,
    rho: Vec<f64>,
    center_node: Vec<usize>,
    perimeter: Vec<Vec<usize>>,
    graph: Csr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QhDistance {
    pub upper: f64,
    pub lower: f64,
}

impl QhGraph {
    pub fn new(domain: &RectDomain, decomp: &WhitneyDecomposition) -> Self {
        Self::with_execution(domain, decomp, Execution::default())
    }

    pub fn with_execution(domain: &RectDomain, decomp: &WhitneyDecomposition, exec: Execution) -> Self {
        let cubes = decomp.cubes();
        let lmax = cubes.iter().map(|q| q.level).max().unwrap_or(0);
        let scale = (lmax as f64).exp2();
        let mut key_id: HashMap<(i64, i64), usize> = HashMap::new();
        let mut points = Vec::new();
        let mut perimeter = Vec::with_capacity(cubes.len());
        for (id, q) in cubes.iter().enumerate() {
            let [x0, y0, x1, y1] = q.bounds_at(lmax);
            let side = x1 - x0;
            let mut keys: Vec<(i64, i64)> = vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
            for &j in decomp.adjacency()[id].iter() {
                let n = cubes[j];
                if n.level <= q.level {
                    continue;
                }
                let [a0, b0, a1, b1] = n.bounds_at(lmax);
                for (x, y) in [(a0, b0), (a1, b0), (a1, b1), (a0, b1)] {
                    let on_x = (x == x0 || x == x1) && y >= y0 && y <= y1;
                    let on_y = (y == y0 || y == y1) && x >= x0 && x <= x1;
                    if on_x || on_y {
                        keys.push((x, y));
                    }
                }
            }
            let param = |&(x, y): &(i64, i64)| -> i64 {
                if y == y0 {
                    x - x0
                } else if x == x1 {
                    side + (y - y0)
                } else if y == y1 {
                    2 * side + (x1 - x)
                } else {
                    3 * side + (y1 - y)
                }
            };
            keys.sort_by_key(param);
            keys.dedup();
            let ids: Vec<usize> = keys
                .iter()
                .map(|k| {
                    *key_id.entry(*k).or_insert_with(|| {
                        points.push(Point::new(k.0 as f64 / scale, k.1 as f64 / scale));
                        points.len() - 1
                    })
                })
                .collect();
            perimeter.push(ids);
        }
        let mut center_node = Vec::with_capacity(cubes.len());
        for q in cubes {
            points.push(q.center());
            center_node.push(points.len() - 1);
        }
        let rho: Vec<f64> = par::map(exec, &points, |p| domain.distance_to_boundary_unchecked(*p));

        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        for (id, per) in perimeter.iter().enumerate() {
            let c = center_node[id];
            for (k, &a) in per.iter().enumerate() {
                pairs.push((c, a));
                let b = per[(k + 1) % per.len()];
                let e = (a.min(b), a.max(b));
                if seen.insert(e) {
                    pairs.push(e);
                }
            }
        }
        let edges: Vec<(usize, usize, f64)> = par::map(exec, &pairs, |&(u, v)| {
            (u, v, edge_weight(domain, points[u], points[v], rho[u], rho[v], TRAPEZOID_PANELS))
        });
        let graph = Csr::from_edges(points.len(), &edges);
        QhGraph {
            domain: domain.clone(),
            decomp: decomp.clone(),
            points,
            rho,
            center_node,
            perimeter,
            graph,
        }
    }

    pub fn decomposition(&self) -> &WhitneyDecomposition {
        &self.decomp
    }

    pub fn domain(&self) -> &RectDomain {
        &self.domain
    }

    pub fn node_count(&self) -> usize {
        self.points.len()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.targets.len() / 2
    }

    pub fn point(&self, v: usize) -> Point {
        self.points[v]
    }

    pub fn rho(&self, v: usize) -> f64 {
        self.rho[v]
    }

    pub fn center_node(&self, cube: usize) -> usize {
        self.center_node[cube]
    }

    fn attach(&self, p: Point) -> Result<(usize, Vec<(usize, f64)>)> {
        let rp = self.domain.boundary_distance(p)?;
        let required = |r: f64| (8.0 / r).log2().ceil().max(0.0) as u32;
        let level = self.decomp.min_level().max(0) as u32;
        let cube = self.decomp.locate(p).ok_or(LabError::TooCloseToBoundary {
            x: p.x,
            y: p.y,
            level,
            required: required(rp),
        })?;
        let mut out = Vec::new();
        let c = self.center_node[cube];
        for &v in self.perimeter[cube].iter().chain(std::iter::once(&c)) {
            let w = edge_weight(&self.domain, p, self.points[v], rp, self.rho[v], 2 * TRAPEZOID_PANELS);
            out.push((v, w));
        }
        Ok((cube, out))
    }

    /// Upper bound `k̂(x, y)` and the universal lower bound `|log ρ(x)/ρ(y)|`.
    pub fn distance(&self, x: Point, y: Point) -> Result<QhDistance> {
        let (x, y) = if (y.x, y.y) < (x.x, x.y) { (y, x) } else { (x, y) };
        let rx = self.domain.boundary_distance(x)?;
        let ry = self.domain.boundary_distance(y)?;
        let lower = (rx / ry).ln().abs();
        if x == y {
            return Ok(QhDistance { upper: 0.0, lower });
        }
        let (cx, sx) = self.attach(x)?;
        let (cy, sy) = self.attach(y)?;
        let tree = self.graph.dijkstra(&sx);
        let mut upper = sy
            .iter()
            .map(|&(v, w)| tree.dist[v] + w)
            .fold(f64::INFINITY, f64::min);
        if cx == cy {
            upper = upper.min(edge_weight(&self.domain, x, y, rx, ry, 4 * TRAPEZOID_PANELS));
        }
        if !upper.is_finite() {
            return Err(LabError::Disconnected("no path between query points".into()));
        }
        if upper < lower - 1e-9 * (1.0 + lower) {
            return Err(LabError::BoundViolation { upper, lower });
        }
        Ok(QhDistance { upper, lower })
    }

    /// Shortest-path tree from a graph node.
    pub fn tree_from_node(&self, v: usize) -> Tree {
        self.graph.dijkstra(&[(v, 0.0)])
    }
}

/// `k̂(x, y)` on a uniform truncation at `min_level`.
pub fn qh_distance(domain: &RectDomain, x: Point, y: Point, min_level: i32) -> Result<QhDistance> {
    let thr = 8.0 * (-(min_level as f64)).exp2();
    for p in [x, y] {
        let r = domain.boundary_distance(p)?;
        if r < thr {
            return Err(LabError::TooCloseToBoundary {
                x: p.x,
                y: p.y,
                level: min_level.max(0) as u32,
                required: (8.0 / r).log2().ceil().max(0.0) as u32,
            });
        }
    }
    let decomp = WhitneyDecomposition::build(domain, &crate::geom::Truncation::uniform(min_level), Some(x))?;
    QhGraph::new(domain, &decomp).distance(x, y)
}

// ---------------------------------------------------------------------------
// Chains and shadows
// ---------------------------------------------------------------------------

/// Geodesic chains `P(Q)` from the base cube and their shadows `S(Q)`.
///
/// Chains are the branches of one shortest-path tree on the cube-center graph
/// (face neighbours and equal-size corner neighbours), so a cube's shadow is
/// exactly its subtree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainTable {
    pub base: usize,
    pub parent: Vec<Option<usize>>,
    pub order: Vec<usize>,
    pub qh_to_base: Vec<f64>,
    shadow_diam: Vec<f64>,
}

impl ChainTable {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// `P(Q)`, from the base cube to `q`.
    pub fn chain(&self, q: usize) -> Vec<usize> {
        let mut out = vec![q];
        let mut cur = q;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (q, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(q);
            }
        }
        ch
    }

    /// Cube ids of `S(Q)`.
    pub fn shadow(&self, q: usize) -> Vec<usize> {
        let ch = self.children();
        let mut out = Vec::new();
        let mut stack = vec![q];
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(ch[c].iter().copied());
        }
        out.sort_unstable();
        out
    }

    pub fn shadow_diameter(&self, q: usize) -> f64 {
        self.shadow_diam[q]
    }
}

pub fn geodesic_chains(domain: &RectDomain, decomp: &WhitneyDecomposition, x0: Point) -> Result<ChainTable> {
    let base = decomp.locate(x0).ok_or(LabError::NotInDomain { x: x0.x, y: x0.y })?;
    let c = decomp.cubes()[base].center();
    if c.dist(x0) > 1e-12 * (1.0 + c.x.abs() + c.y.abs()) {
        return Err(LabError::InvalidParameter(format!(
            "base point ({}, {}) is not the center of its Whitney cube",
            x0.x, x0.y
        )));
    }
    let cubes = decomp.cubes();
    let centers: Vec<Point> = cubes.iter().map(|q| q.center()).collect();
    let rho: Vec<f64> = centers
        .iter()
        .map(|p| domain.distance_to_boundary_unchecked(*p))
        .collect();
    let mut edges = Vec::new();
    for (i, q) in cubes.iter().enumerate() {
        for &j in decomp.neighbors(i)? {
            if j < i {
                continue;
            }
            let n = &cubes[j];
            if q.shares_face(n) || q.level == n.level {
                let w = edge_weight(domain, centers[i], centers[j], rho[i], rho[j], 8);
                edges.push((i, j, w));
            }
        }
    }
    let tree = Csr::from_edges(cubes.len(), &edges).dijkstra(&[(base, 0.0)]);
    if tree.order.len() != cubes.len() {
        return Err(LabError::Disconnected(format!(
            "{} of {} cubes unreachable from the base",
            cubes.len() - tree.order.len(),
            cubes.len()
        )));
    }
    let parent: Vec<Option<usize>> = tree
        .pred
        .iter()
        .map(|&p| if p == usize::MAX { None } else { Some(p) })
        .collect();

    // bottom-up convex hulls of the shadows
    let mut hulls: Vec<Vec<Point>> = cubes.iter().map(|q| q.rect().corners().to_vec()).collect();
    let mut shadow_diam = vec![0.0; cubes.len()];
    for &q in tree.order.iter().rev() {
        let h = convex_hull(std::mem::take(&mut hulls[q]));
        shadow_diam[q] = hull_diameter(&h);
        match parent[q] {
            Some(p) => hulls[p].extend(h),
            None => hulls[q] = h,
        }
    }
    Ok(ChainTable {
        base,
        parent,
        order: tree.order,
        qh_to_base: tree.dist,
        shadow_diam,
    })
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn convex_hull(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn hull_diameter(h: &[Point]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, p) in h.iter().enumerate() {
        for q in &h[i + 1..] {
            d = d.max(p.dist(*q));
        }
    }
    d
}

// ---------------------------------------------------------------------------
// Fits and classifiers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitVerdict {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub samples: Vec<[f64; 2]>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub predicted: Option<f64>,
    pub verdict: FitVerdict,
    pub witness: Option<Point>,
}

impl FitReport {
    fn from_samples(samples: Vec<[f64; 2]>) -> Self {
        let (slope, intercept, r_squared) = if samples.len() >= 2 {
            let f = fit_line(&samples);
            (f.slope, f.intercept, f.r_squared)
        } else {
            (f64::NAN, f64::NAN, 0.0)
        };
        FitReport {
            samples,
            slope,
            intercept,
            r_squared,
            predicted: None,
            verdict: FitVerdict::Inconclusive,
            witness: None,
        }
    }
}

const WINDOW: usize = 8;

/// Exponent test for `diam S(Q) ≲ diam(Q)^{2β/(1+β)}`.
///
/// Samples are the per-level maxima of `log diam S(Q)` against
/// `log diam Q`; the bound holds when this envelope decays at least at the
/// predicted rate, up to 10%.
pub fn shadow_diameter_fit(decomp: &WhitneyDecomposition, chains: &ChainTable, beta: f64) -> Result<FitReport> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(LabError::InvalidParameter(format!("beta = {beta} outside (0, 1]")));
    }
    let gamma = 2.0 * beta / (1.0 + beta);
    let mut by_level: HashMap<i32, (f64, usize)> = HashMap::new();
    for (id, q) in decomp.cubes().iter().enumerate() {
        let s = chains.shadow_diameter(id);
        let e = by_level.entry(q.level).or_insert((0.0, id));
        if s > e.0 {
            *e = (s, id);
        }
    }
    let mut levels: Vec<i32> = by_level.keys().copied().collect();
    levels.sort_unstable();
    let samples: Vec<[f64; 2]> = levels
        .iter()
        .map(|l| {
            let q = decomp.cubes()[by_level[l].1];
            [q.diam().ln(), by_level[l].0.ln()]
        })
        .collect();
    let mut rep = FitReport::from_samples(samples);
    rep.predicted = Some(gamma);
    if rep.samples.len() >= 4 {
        rep.verdict = if rep.slope >= 0.9 * gamma {
            FitVerdict::Holds
        } else {
            FitVerdict::Fails
        };
        let (_, worst) = levels
            .iter()
            .map(|l| {
                let q = decomp.cubes()[by_level[l].1];
                (by_level[l].0.ln() - gamma * q.diam().ln(), by_level[l].1)
            })
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
        rep.witness = Some(decomp.cubes()[worst].center());
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QhbcEstimate {
    pub beta: f64,
    pub c0: f64,
    pub samples_used: usize,
    /// Range of `log(ρ(x0)/ρ(x))` of the binding window.
    pub binding_window: [f64; 2],
    pub fit: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SJohnEstimate {
    pub s: f64,
    pub c: f64,
    pub samples_used: usize,
    pub binding_window: [f64; 2],
    pub fit: FitReport,
}

/// Cube-center sample ids, at most `cap`, keeping the extreme `key` values
/// within each `ln 2` bin of `strat`.
fn stratified(ids: Vec<usize>, strat: impl Fn(usize) -> f64, key: impl Fn(usize) -> f64, cap: usize) -> Vec<usize> {
    if ids.len() <= cap {
        return ids;
    }
    let mut bins: HashMap<i64, Vec<usize>> = HashMap::new();
    for id in ids {
        bins.entry((strat(id) / std::f64::consts::LN_2).floor() as i64)
            .or_default()
            .push(id);
    }
    let mut keys: Vec<i64> = bins.keys().copied().collect();
    keys.sort_unstable();
    let quota = (cap / keys.len()).max(1);
    let mut out = Vec::new();
    for k in keys {
        let mut v = bins.remove(&k).unwrap();
        v.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        v.truncate(quota);
        out.extend(v);
    }
    out.sort_unstable();
    out
}

/// Envelope points `(bin center, value, witness)` with ordered bins.
fn binned_envelope(
    items: impl Iterator<Item = (f64, f64, usize)>,
    maximize: bool,
) -> Vec<(f64, f64, usize)> {
    let mut bins: HashMap<i64, (f64, f64, usize)> = HashMap::new();
    for (x, y, w) in items {
        let b = (x / std::f64::consts::LN_2).floor() as i64;
        let e = bins.entry(b).or_insert((x, y, w));
        let better = if maximize { y > e.1 } else { y < e.1 };
        if better {
            *e = (x, y, w);
        }
    }
    let mut keys: Vec<i64> = bins.keys().copied().collect();
    keys.sort_unstable();
    keys.into_iter().map(|k| bins[&k]).collect()
}

/// β-QHBC estimate on a prepared graph, base point at the base cube center.
pub fn check_qhbc_graph(graph: &QhGraph, samples: usize) -> Result<QhbcEstimate> {
    if samples < 16 {
        return Err(LabError::InvalidParameter("need at least 16 samples".into()));
    }
    let decomp = graph.decomposition();
    let src = graph.center_node(decomp.base());
    let tree = graph.tree_from_node(src);
    let rho0 = graph.rho(src);
    let level = |id: usize| (rho0 / graph.rho(graph.center_node(id))).ln();
    let kval = |id: usize| tree.dist[graph.center_node(id)];
    let ids = stratified((0..decomp.len()).collect(), level, kval, samples);
    let env = binned_envelope(ids.iter().map(|&id| (level(id), kval(id), id)), true);
    let pts: Vec<[f64; 2]> = env.iter().map(|e| [e.0, e.1]).collect();
    let mut fit = FitReport::from_samples(pts.clone());
    if pts.len() < 4 || pts.iter().all(|p| (p[0] - pts[0][0]).abs() < 1e-12) {
        return Err(LabError::InsufficientSamples(format!(
            "{} distinct boundary-distance bins",
            pts.len()
        )));
    }
    // growth phase: bins up to the envelope maximum; beyond it only the
    // truncation of the decomposition is visible
    let peak = (0..pts.len())
        .max_by(|&i, &j| pts[i][1].total_cmp(&pts[j][1]).then(j.cmp(&i)))
        .unwrap()
        .max(3);
    let slope = fit_line(&pts[..=peak]).slope;
    let beta = if slope > 0.0 { (1.0 / slope).min(1.0) } else { 1.0 };
    let (c0, wit) = ids
        .iter()
        .map(|&id| (kval(id) - level(id) / beta, id))
        .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
    fit.predicted = Some(1.0 / beta);
    fit.verdict = FitVerdict::Holds;
    fit.witness = Some(decomp.cubes()[wit].center());
    Ok(QhbcEstimate {
        beta,
        c0,
        samples_used: ids.len(),
        binding_window: [pts[0][0], pts[peak][0]],
        fit,
    })
}

pub fn check_qhbc(domain: &RectDomain, x0: Point, samples: usize, min_level: i32) -> Result<QhbcEstimate> {
    let decomp = WhitneyDecomposition::build(domain, &crate::geom::Truncation::uniform(min_level), Some(x0))?;
    check_qhbc_graph(&QhGraph::new(domain, &decomp), samples)
}

struct JohnData {
    /// `(log t, log ρ, node)` pairs of the per-bin minimum of ρ.
    env: Vec<(f64, f64, usize)>,
    samples_used: usize,
}

/// For each tree node `v`, the longest arclength `t` from a sample below `v`
/// up to `v`; `v` then lies on a curve at parameter `t` for every sampled
/// offset up to that height, and contributes `ρ(v)` to those bins.
fn john_envelope(graph: &QhGraph, samples: usize) -> Result<JohnData> {
    let decomp = graph.decomposition();
    let src = graph.center_node(decomp.base());
    let tree = graph.tree_from_node(src);
    let n = graph.node_count();
    let rho0 = graph.rho(src);
    let cube_ids: Vec<usize> = (0..decomp.len()).collect();
    let level = |id: usize| (rho0 / graph.rho(graph.center_node(id))).ln();
    let ids = stratified(cube_ids, level, level, samples);
    let mut height = vec![f64::NEG_INFINITY; n];
    for &id in &ids {
        height[graph.center_node(id)] = 0.0;
    }
    for &v in tree.order.iter().rev() {
        let p = tree.pred[v];
        if p != usize::MAX && height[v] > f64::NEG_INFINITY {
            let h = height[v] + graph.point(v).dist(graph.point(p));
            if h > height[p] {
                height[p] = h;
            }
        }
    }
    // each node contributes to every dyadic bin of t up to its height
    let mut best: HashMap<i64, (f64, usize)> = HashMap::new();
    for v in 0..n {
        let h = height[v];
        if h <= 0.0 {
            continue;
        }
        let b = (h.ln() / std::f64::consts::LN_2).floor() as i64;
        let e = best.entry(b).or_insert((f64::INFINITY, v));
        if graph.rho(v) < e.0 {
            *e = (graph.rho(v), v);
        }
    }
    let mut keys: Vec<i64> = best.keys().copied().collect();
    keys.sort_unstable();
    let mut env = Vec::with_capacity(keys.len());
    let mut run = (f64::INFINITY, 0usize);
    for &k in keys.iter().rev() {
        if best[&k].0 < run.0 {
            run = best[&k];
        }
        let t = ((k as f64) + 0.5) * std::f64::consts::LN_2;
        env.push((t, run.0.ln(), run.1));
    }
    env.reverse();
    Ok(JohnData {
        env,
        samples_used: ids.len(),
    })
}

/// s-John estimate: the discrete geodesics to the base cube center serve as
/// John curves, and ŝ is the steepest decay rate of `min ρ(γ(t))` as `t → 0`.
pub fn check_sjohn_graph(graph: &QhGraph, samples: usize) -> Result<SJohnEstimate> {
    if samples < 16 {
        return Err(LabError::InvalidParameter("need at least 16 samples".into()));
    }
    let data = john_envelope(graph, samples)?;
    let pts: Vec<[f64; 2]> = data.env.iter().map(|e| [e.0, e.1]).collect();
    if pts.len() < 4 {
        return Err(LabError::InsufficientSamples(format!("{} arclength bins", pts.len())));
    }
    let (slope, start) = max_window_slope(&pts, WINDOW);
    let s = slope.max(1.0);
    let (c, wit) = data
        .env
        .iter()
        .map(|e| ((e.1 - s * e.0).exp(), e.2))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
    let mut fit = FitReport::from_samples(pts.clone());
    fit.predicted = Some(s);
    fit.verdict = FitVerdict::Holds;
    fit.witness = Some(graph.point(wit));
    let end = (start + WINDOW).min(pts.len()) - 1;
    Ok(SJohnEstimate {
        s,
        c,
        samples_used: data.samples_used,
        binding_window: [pts[start][0], pts[end][0]],
        fit,
    })
}

/// Test `ρ(γ(t)) ≥ C t^s` at a fixed `s`: fails when the per-bin best
/// constant `min ρ / t^s` still tends to zero as `t → 0`.
pub fn check_sjohn_forced(graph: &QhGraph, samples: usize, s: f64) -> Result<FitReport> {
    let data = john_envelope(graph, samples)?;
    let pts: Vec<[f64; 2]> = data.env.iter().map(|e| [e.0, e.1 - s * e.0]).collect();
    let mut fit = FitReport::from_samples(pts.clone());
    fit.predicted = Some(s);
    if pts.len() >= 4 {
        let (slope, start) = max_window_slope(&pts, WINDOW);
        fit.verdict = if slope > 0.1 {
            FitVerdict::Fails
        } else {
            FitVerdict::Holds
        };
        fit.witness = Some(graph.point(data.env[start].2));
    }
    Ok(fit)
}

pub fn check_sjohn(domain: &RectDomain, x0: Point, samples: usize, min_level: i32) -> Result<SJohnEstimate> {
    let decomp = WhitneyDecomposition::build(domain, &crate::geom::Truncation::uniform(min_level), Some(x0))?;
    check_sjohn_graph(&QhGraph::new(domain, &decomp), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{self, RoomsSpec};
    use crate::geom::Truncation;

    fn square_graph(level: i32) -> (RectDomain, QhGraph) {
        let d = gallery::square(1.0).unwrap();
        let w = WhitneyDecomposition::build(&d, &Truncation::uniform(level), Some(Point::new(0.5, 0.5))).unwrap();
        let g = QhGraph::new(&d, &w);
        (d, g)
    }

    #[test]
    fn identity_and_symmetry() {
        let (_, g) = square_graph(6);
        let x = Point::new(0.3, 0.6);
        let y = Point::new(0.8, 0.25);
        let z = Point::new(0.5, 0.5);
        assert_eq!(g.distance(x, x).unwrap().upper, 0.0);
        let xy = g.distance(x, y).unwrap().upper;
        let yx = g.distance(y, x).unwrap().upper;
        assert!((xy - yx).abs() <= 1e-12 * xy);
        let xz = g.distance(x, z).unwrap().upper;
        let zy = g.distance(z, y).unwrap().upper;
        assert!(xy <= xz + zy + 1e-12);
    }

    #[test]
    fn too_close_reports_required_level() {
        let d = gallery::square(1.0).unwrap();
        match qh_distance(&d, Point::new(0.5, 0.5), Point::new(0.5, 0.01), 6) {
            Err(LabError::TooCloseToBoundary { required, .. }) => assert_eq!(required, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lower_bound_is_respected() {
        let (_, g) = square_graph(7);
        for y in [0.1, 0.2, 0.35] {
            let d = g.distance(Point::new(0.5, 0.5), Point::new(0.5, y)).unwrap();
            assert!(d.upper >= d.lower - 1e-9);
            assert!(d.upper <= d.lower * 1.03);
        }
    }

    #[test]
    fn chain_definitions() {
        let (d, g) = square_graph(6);
        let w = g.decomposition();
        let c = geodesic_chains(&d, w, w.base_center()).unwrap();
        assert_eq!(c.chain(c.base), vec![c.base]);
        for q in 0..w.len() {
            let ch = c.chain(q);
            assert_eq!(ch[0], c.base);
            assert_eq!(*ch.last().unwrap(), q);
            for pair in ch.windows(2) {
                assert!(w.neighbors(pair[0]).unwrap().contains(&pair[1]));
            }
            assert!(c.shadow(q).contains(&q));
        }
        // nesting along a chain
        let q = w.len() - 1;
        let ch = c.chain(q);
        let s = c.shadow(q);
        for &a in &ch {
            let sa = c.shadow(a);
            assert!(s.iter().all(|x| sa.contains(x)));
            assert!(c.shadow_diameter(a) >= c.shadow_diameter(q));
        }
        assert!(geodesic_chains(&d, w, Point::new(0.31, 0.47)).is_err());
    }

    #[test]
    fn room_chains_cross_the_corridor() {
        let (d, t) = gallery::rooms_and_corridors(&RoomsSpec::geometric(2.0, 2.0, 4.0, 4)).unwrap();
        let w = WhitneyDecomposition::build(&d, &gallery::rooms_truncation(&t, 6), Some(Point::new(0.5, 0.5))).unwrap();
        let c = geodesic_chains(&d, &w, w.base_center()).unwrap();
        for room in &t.rooms {
            let q = w.locate(room.room_center).unwrap();
            let hits = c
                .chain(q)
                .iter()
                .filter(|&&k| w.cubes()[k].rect().overlaps(&room.corridor))
                .count();
            assert!(hits >= 1, "room {}", room.index);
        }
    }

    #[test]
    fn shadow_fit_on_square() {
        let (d, g) = square_graph(7);
        let w = g.decomposition();
        let c = geodesic_chains(&d, w, w.base_center()).unwrap();
        let f = shadow_diameter_fit(w, &c, 1.0).unwrap();
        assert_eq!(f.verdict, FitVerdict::Holds);
        assert!(f.slope >= 0.9, "{}", f.slope);
        assert!(shadow_diameter_fit(w, &c, 0.0).is_err());
        assert!(shadow_diameter_fit(w, &c, 1.5).is_err());
    }

    #[test]
    fn square_classifiers() {
        let (_, g) = square_graph(7);
        let j = check_sjohn_graph(&g, 10_000).unwrap();
        assert!((j.s - 1.0).abs() < 0.1);
        let q = check_qhbc_graph(&g, 10_000).unwrap();
        // corner points force k ≈ √2·log(ρ0/ρ)
        assert!(q.beta > 0.6 && q.beta <= 1.0, "{}", q.beta);
        assert!(check_qhbc_graph(&g, 4).is_err());
    }
}
