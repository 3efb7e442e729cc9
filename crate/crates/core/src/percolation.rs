//! Site colorings, crossing / arm / circuit events and crossing estimates.
//!
//! A site is black at level `p` when `f(x) >= -p`. Connectivity is computed
//! with union-find over same-colored sites plus one virtual node per target
//! side. Because black sets grow with `p`, each sample has a critical level
//! `p*` at which a given black connection appears; [`critical_level`] finds
//! it in one pass (sites added in decreasing field order), which lets a single
//! batch of samples serve a whole sweep over `p`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{face_centered_sqrt_kernel, Kernel};
use crate::lattice::{build_region_graph, Marks, Rect, Region, RegionGraph};
use crate::sampler::ConvolutionSampler;
pub use crate::stats::MCEstimate;
use crate::stats::RunningStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Black,
    White,
}

impl Color {
    pub fn flip(self) -> Color {
        match self {
            Color::Black => Color::White,
            Color::White => Color::Black,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LeftRight,
    TopBottom,
}

impl Direction {
    pub fn sides(self) -> (Marks, Marks) {
        match self {
            Direction::LeftRight => (Marks::LEFT, Marks::RIGHT),
            Direction::TopBottom => (Marks::TOP, Marks::BOTTOM),
        }
    }
}

/// Disjoint-set forest with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] as usize != root {
            root = self.parent[root] as usize;
        }
        while self.parent[x] as usize != root {
            let next = self.parent[x] as usize;
            self.parent[x] = root as u32;
            x = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb as u32,
            std::cmp::Ordering::Greater => self.parent[rb] = ra as u32,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra as u32;
                self.rank[ra] += 1;
            }
        }
    }

    pub fn connected(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }
}

/// A black/white coloring of the sites of a region graph.
#[derive(Debug, Clone)]
pub struct ColoredConfig<'g> {
    pub graph: &'g RegionGraph,
    /// `true` for black.
    pub colors: Vec<bool>,
    pub level: f64,
}

impl<'g> ColoredConfig<'g> {
    /// Black where `f(x) >= -p`.
    pub fn from_field(graph: &'g RegionGraph, values: &[f64], p: f64) -> Self {
        assert_eq!(values.len(), graph.len(), "one field value per site");
        ColoredConfig {
            graph,
            colors: values.iter().map(|&f| f >= -p).collect(),
            level: p,
        }
    }

    pub fn from_colors(graph: &'g RegionGraph, colors: Vec<bool>) -> Self {
        assert_eq!(colors.len(), graph.len(), "one color per site");
        ColoredConfig {
            graph,
            colors,
            level: f64::NAN,
        }
    }

    /// Coloring from the low bits of `mask` (bit `i` set means black).
    pub fn from_mask(graph: &'g RegionGraph, mask: u64) -> Self {
        Self::from_colors(graph, (0..graph.len()).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn uniform(graph: &'g RegionGraph, color: Color) -> Self {
        Self::from_colors(graph, vec![color == Color::Black; graph.len()])
    }

    pub fn color(&self, i: usize) -> Color {
        if self.colors[i] {
            Color::Black
        } else {
            Color::White
        }
    }

    /// Edges whose two endpoints are black.
    pub fn black_edges(&self) -> Vec<(usize, usize)> {
        self.graph
            .edges()
            .into_iter()
            .filter(|&(i, j)| self.colors[i] && self.colors[j])
            .collect()
    }

    /// Is there a path of `color` sites from a site marked `from` to a site
    /// marked `to`?
    pub fn connects(&self, from: Marks, to: Marks, color: Color) -> bool {
        let want = color == Color::Black;
        connects_where(self.graph, |i| self.colors[i] == want, from, to)
    }
}

/// Union-find connection between two mark classes through member sites.
pub fn connects_where(graph: &RegionGraph, member: impl Fn(usize) -> bool, from: Marks, to: Marks) -> bool {
    let n = graph.len();
    let (s, t) = (n, n + 1);
    let mut uf = UnionFind::new(n + 2);
    for i in 0..n {
        if !member(i) {
            continue;
        }
        let m = graph.marks(i);
        if m.contains(from) {
            uf.union(i, s);
        }
        if m.contains(to) {
            uf.union(i, t);
        }
        for j in graph.neighbors(i) {
            if j < i && member(j) {
                uf.union(i, j);
            }
        }
    }
    uf.connected(s, t)
}

pub fn crossing(config: &ColoredConfig, direction: Direction, color: Color) -> bool {
    let (a, b) = direction.sides();
    config.connects(a, b, color)
}

/// Path of `color` from the inner to the outer boundary of an annulus.
pub fn arm_event(config: &ColoredConfig, color: Color) -> bool {
    config.connects(Marks::INNER, Marks::OUTER, color)
}

/// Circuit of `color` around the hole of an annulus, detected as the absence
/// of an arm of the opposite color. Exact on a triangulation.
pub fn circuit_event(config: &ColoredConfig, color: Color) -> bool {
    !arm_event(config, color.flip())
}

/// The level at which a `color` connection between the two mark classes
/// switches. For black the event holds iff `p >= level`; for white iff
/// `p < level`. Returns `+inf` (black) or `-inf` (white) when the classes
/// are never joined.
pub fn critical_level(graph: &RegionGraph, values: &[f64], from: Marks, to: Marks, color: Color) -> f64 {
    let n = graph.len();
    let mut order: Vec<usize> = (0..n).collect();
    match color {
        Color::Black => order.sort_unstable_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b))),
        Color::White => order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))),
    }
    let (s, t) = (n, n + 1);
    let mut uf = UnionFind::new(n + 2);
    let mut active = vec![false; n];
    for &i in &order {
        active[i] = true;
        let m = graph.marks(i);
        if m.contains(from) {
            uf.union(i, s);
        }
        if m.contains(to) {
            uf.union(i, t);
        }
        for j in graph.neighbors(i) {
            if active[j] {
                uf.union(i, j);
            }
        }
        if uf.connected(s, t) {
            return -values[i];
        }
    }
    match color {
        Color::Black => f64::INFINITY,
        Color::White => f64::NEG_INFINITY,
    }
}

/// Does a crossing with critical level `level` occur at `p`?
pub fn occurs_at(level: f64, p: f64, color: Color) -> bool {
    match color {
        Color::Black => p >= level,
        Color::White => p < level,
    }
}

/// A region clipped from a parent graph, with its own boundary marks and
/// the parent index of each of its sites.
#[derive(Debug, Clone)]
pub struct SubRegion {
    pub graph: RegionGraph,
    pub parent_index: Vec<usize>,
}

impl SubRegion {
    pub fn new(parent: &RegionGraph, region: Region) -> Result<Self> {
        let graph = build_region_graph(parent.mesh_eps, region)?;
        let parent_index = graph
            .sites()
            .iter()
            .map(|&q| {
                parent.index_of(q).ok_or_else(|| {
                    Error::InvalidParameter("sub-region reaches outside its parent graph".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SubRegion { graph, parent_index })
    }

    pub fn restrict(&self, parent_values: &[f64]) -> Vec<f64> {
        self.parent_index.iter().map(|&i| parent_values[i]).collect()
    }

    pub fn critical_level(&self, parent_values: &[f64], direction: Direction, color: Color) -> f64 {
        let (a, b) = direction.sides();
        critical_level(&self.graph, &self.restrict(parent_values), a, b, color)
    }

    pub fn crossing(&self, parent: &ColoredConfig, direction: Direction, color: Color) -> bool {
        let colors = self.parent_index.iter().map(|&i| parent.colors[i]).collect();
        crossing(&ColoredConfig::from_colors(&self.graph, colors), direction, color)
    }
}

/// `r_0 = 1`, `r_{k+1} = 2 r_k + sqrt(r_k)`.
pub fn r_sequence(k_max: usize) -> Vec<f64> {
    let mut r: Vec<f64> = Vec::with_capacity(k_max + 1);
    r.push(1.0);
    for k in 0..k_max {
        let x = r[k];
        r.push(2.0 * x + x.sqrt());
    }
    r
}

/// Smallest `C` with `r_k <= C 2^k` along the sequence, and whether
/// `2^k <= r_k` holds throughout.
pub fn r_sequence_bracket(r: &[f64]) -> (bool, f64) {
    let lower = r.iter().enumerate().all(|(k, &x)| x >= 2f64.powi(k as i32));
    let c = r.iter().enumerate().map(|(k, &x)| x / 2f64.powi(k as i32)).fold(0.0, f64::max);
    (lower, c)
}

/// The seven rectangles of `MultiCross(k)` inside `[0, 5r] x [0, r]`:
/// four `2r x r` left-right crossings followed by three `r x r` top-bottom
/// crossings.
pub fn multicross_rectangles(r: f64) -> Vec<(Rect, Direction)> {
    let mut out = Vec::with_capacity(7);
    for i in 0..4 {
        out.push((Rect::new(i as f64 * r, 0.0, 2.0 * r, r), Direction::LeftRight));
    }
    for j in 1..4 {
        out.push((Rect::new(j as f64 * r, 0.0, r, r), Direction::TopBottom));
    }
    out
}

/// `MultiCross(k)` on a graph containing `[0, 5 r_k] x [0, r_k]`.
pub struct MultiCross {
    pub r: f64,
    parts: Vec<(SubRegion, Direction)>,
}

impl MultiCross {
    pub fn new(parent: &RegionGraph, k: usize, r_table: &[f64]) -> Result<Self> {
        let r = *r_table
            .get(k)
            .ok_or_else(|| Error::InvalidParameter(format!("scale index {k} outside the r table")))?;
        let parts = multicross_rectangles(r)
            .into_iter()
            .map(|(rect, d)| Ok((SubRegion::new(parent, Region::Rectangle(rect))?, d)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiCross { r, parts })
    }

    pub fn occurs(&self, config: &ColoredConfig) -> bool {
        self.parts.iter().all(|(s, d)| s.crossing(config, *d, Color::Black))
    }

    /// Black critical level of the conjunction.
    pub fn critical_level(&self, values: &[f64]) -> f64 {
        self.parts
            .iter()
            .map(|(s, d)| s.critical_level(values, *d, Color::Black))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Monte Carlo crossing probabilities on `[0, rho R] x [0, R]`.
pub struct CrossingEstimator {
    pub kernel: Kernel,
    pub eps: f64,
    pub r: f64,
    pub rho: f64,
    sampler: ConvolutionSampler,
}

impl CrossingEstimator {
    pub fn new(kernel: &Kernel, eps: f64, r: f64, rho: f64) -> Result<Self> {
        let sqrt = Arc::new(face_centered_sqrt_kernel(kernel, eps)?);
        Self::with_sqrt(sqrt, r, rho)
    }

    pub fn with_sqrt(sqrt: Arc<crate::kernels::SqrtKernel>, r: f64, rho: f64) -> Result<Self> {
        if !(r > 0.0 && rho > 0.0) {
            return Err(Error::InvalidParameter(format!("need R > 0 and rho > 0, got R={r}, rho={rho}")));
        }
        let eps = sqrt.lattice_eps();
        let graph = Arc::new(build_region_graph(eps, Region::rectangle(rho * r, r))?);
        let kernel = sqrt.kernel;
        let sampler = ConvolutionSampler::new(sqrt, graph)?;
        Ok(CrossingEstimator {
            kernel,
            eps,
            r,
            rho,
            sampler,
        })
    }

    pub fn sampler(&self) -> &ConvolutionSampler {
        &self.sampler
    }

    pub fn graph(&self) -> &RegionGraph {
        self.sampler.graph()
    }

    /// Per-replicate critical levels, in replicate order.
    pub fn critical_levels(&self, seed: u64, n: usize, direction: Direction, color: Color) -> Vec<f64> {
        let g = self.sampler.graph().clone();
        let (a, b) = direction.sides();
        self.sampler
            .map_replicates(seed, n, |f| critical_level(&g, &f.values, a, b, color))
    }

    pub fn estimate(&self, seed: u64, n: usize, p: f64) -> MCEstimate {
        let levels = self.critical_levels(seed, n, Direction::LeftRight, Color::Black);
        estimate_from_levels(&levels, p, Color::Black, seed)
    }
}

pub fn estimate_from_levels(levels: &[f64], p: f64, color: Color, seed: u64) -> MCEstimate {
    let hits = levels.iter().filter(|&&l| occurs_at(l, p, color)).count();
    MCEstimate::from_hits(hits, levels.len(), seed)
}

/// `P[Cross_p(rho R, R)]` for black left-right crossings.
pub fn estimate_crossing(kernel: &Kernel, eps: f64, r: f64, rho: f64, p: f64, n: usize, seed: u64) -> Result<MCEstimate> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    Ok(CrossingEstimator::new(kernel, eps, r, rho)?.estimate(seed, n, p))
}

/// `P[Arm_p(x, inner, outer)]` (black arm) on a square annulus.
pub fn estimate_arm(kernel: &Kernel, eps: f64, center: [f64; 2], inner: f64, outer: f64, p: f64, n: usize, seed: u64) -> Result<MCEstimate> {
    let sqrt = Arc::new(face_centered_sqrt_kernel(kernel, eps)?);
    let graph = Arc::new(build_region_graph(eps, Region::annulus(center, inner, outer))?);
    let sampler = ConvolutionSampler::new(sqrt, graph.clone())?;
    let levels = sampler.map_replicates(seed, n, |f| critical_level(&graph, &f.values, Marks::INNER, Marks::OUTER, Color::Black));
    let mut stats = RunningStats::new();
    for l in levels {
        stats.push(if occurs_at(l, p, Color::Black) { 1.0 } else { 0.0 });
    }
    Ok(MCEstimate::from_stats(&stats, seed))
}
