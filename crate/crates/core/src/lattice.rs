//! The face-centered square lattice `T^eps` and its clipped region graphs.
//!
//! Sites are `eps Z^2` (corners) together with the square centers
//! `eps (Z^2 + (1/2, 1/2))`. Each center is joined to the four corners of its
//! square and corners are joined along the square edges, which makes the
//! lattice a self-dual periodic triangulation.
//!
//! Rotating by `pi / 4` and rescaling by `sqrt 2` maps the site set onto
//! `Z^2`. Sites are addressed by that index `(u, v)`:
//!
//! ```text
//! u = (x + y) / eps,  v = (y - x) / eps,   x = eps (u - v) / 2,  y = eps (u + v) / 2
//! ```
//!
//! Corners are the indices with `u + v` even.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-9;

/// A lattice site in rotated `Z^2` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub u: i64,
    pub v: i64,
}

impl LatticePoint {
    pub fn new(u: i64, v: i64) -> Self {
        LatticePoint { u, v }
    }

    pub fn is_corner(&self) -> bool {
        (self.u + self.v).rem_euclid(2) == 0
    }

    pub fn position(&self, eps: f64) -> [f64; 2] {
        unrotate_index(eps, *self)
    }

    /// Lattice neighbours: four for a center, eight for a corner.
    pub fn neighbors(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        const AXIS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const DIAG: [(i64, i64); 4] = [(1, -1), (-1, 1), (1, 1), (-1, -1)];
        let diag: &[(i64, i64)] = if self.is_corner() { &DIAG } else { &[] };
        AXIS.iter()
            .chain(diag.iter())
            .map(move |&(du, dv)| LatticePoint::new(self.u + du, self.v + dv))
    }
}

/// Maps a site of `V^eps` to its `Z^2` index.
pub fn rotate_index(eps: f64, p: [f64; 2]) -> Result<LatticePoint> {
    let u = (p[0] + p[1]) / eps;
    let v = (p[1] - p[0]) / eps;
    let (ur, vr) = (u.round(), v.round());
    if (u - ur).abs() > GEOM_TOL * (1.0 + u.abs()) || (v - vr).abs() > GEOM_TOL * (1.0 + v.abs()) {
        return Err(Error::OffLattice(p[0], p[1]));
    }
    Ok(LatticePoint::new(ur as i64, vr as i64))
}

pub fn unrotate_index(eps: f64, q: LatticePoint) -> [f64; 2] {
    [0.5 * eps * (q.u - q.v) as f64, 0.5 * eps * (q.u + q.v) as f64]
}

/// Closed axis-parallel rectangle `[x0, x0 + width] x [y0, y0 + height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, width: f64, height: f64) -> Self {
        Rect { x0, y0, width, height }
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] >= self.x0 - tol
            && p[0] <= self.x0 + self.width + tol
            && p[1] >= self.y0 - tol
            && p[1] <= self.y0 + self.height + tol
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x0 + 0.5 * self.width, self.y0 + 0.5 * self.height]
    }

    /// Does the closed segment `a b` meet the closed rectangle?
    fn meets_segment(&self, a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        // Liang-Barsky clipping
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let d = [b[0] - a[0], b[1] - a[1]];
        let lo = [self.x0 - tol, self.y0 - tol];
        let hi = [self.x0 + self.width + tol, self.y0 + self.height + tol];
        for k in 0..2 {
            if d[k].abs() < 1e-300 {
                if a[k] < lo[k] || a[k] > hi[k] {
                    return false;
                }
            } else {
                let (mut ta, mut tb) = ((lo[k] - a[k]) / d[k], (hi[k] - a[k]) / d[k]);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Rectangle(Rect),
    /// Square annulus `B(center, outer) \ int B(center, inner)` with
    /// `B(x, r) = x + [-r, r]^2`.
    Annulus {
        center: [f64; 2],
        inner: f64,
        outer: f64,
    },
}

impl Region {
    pub fn rectangle(width: f64, height: f64) -> Self {
        Region::Rectangle(Rect::new(0.0, 0.0, width, height))
    }

    pub fn annulus(center: [f64; 2], inner: f64, outer: f64) -> Self {
        Region::Annulus { center, inner, outer }
    }

    fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        match *self {
            Region::Rectangle(r) => r.contains(p, tol),
            Region::Annulus { center, inner, outer } => {
                let d = sup_dist(p, center);
                d >= inner - tol && d <= outer + tol
            }
        }
    }

    fn bounding_box(&self) -> Rect {
        match *self {
            Region::Rectangle(r) => r,
            Region::Annulus { center, outer, .. } => {
                Rect::new(center[0] - outer, center[1] - outer, 2.0 * outer, 2.0 * outer)
            }
        }
    }

    pub fn center(&self) -> [f64; 2] {
        match *self {
            Region::Rectangle(r) => r.center(),
            Region::Annulus { center, .. } => center,
        }
    }
}

fn sup_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

/// Which lattice sites a rectangle keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SiteRule {
    /// Sites inside the closed region.
    #[default]
    Inside,
    /// Endpoints of every lattice edge meeting the closed rectangle (`V^eps_R`).
    EdgeIntersecting,
}

/// Boundary markers of a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct Marks(pub u8);

impl Marks {
    pub const NONE: Marks = Marks(0);
    pub const LEFT: Marks = Marks(1);
    pub const RIGHT: Marks = Marks(2);
    pub const TOP: Marks = Marks(4);
    pub const BOTTOM: Marks = Marks(8);
    pub const INNER: Marks = Marks(16);
    pub const OUTER: Marks = Marks(32);

    pub fn contains(self, other: Marks) -> bool {
        self.0 & other.0 == other.0 && other.0 != 0
    }

    pub fn insert(&mut self, other: Marks) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    fn label(self) -> String {
        let names = [
            (Marks::LEFT, 'L'),
            (Marks::RIGHT, 'R'),
            (Marks::TOP, 'T'),
            (Marks::BOTTOM, 'B'),
            (Marks::INNER, 'I'),
            (Marks::OUTER, 'O'),
        ];
        let s: String = names.iter().filter(|(m, _)| self.contains(*m)).map(|(_, c)| *c).collect();
        if s.is_empty() {
            "-".into()
        } else {
            s
        }
    }
}

impl std::ops::BitOr for Marks {
    type Output = Marks;
    fn bitor(self, rhs: Marks) -> Marks {
        Marks(self.0 | rhs.0)
    }
}

/// The lattice restricted to a region, with boundary markers.
///
/// A site carries a side mark when one of its lattice neighbours lies
/// strictly beyond that side (for annuli: strictly inside the hole, or
/// strictly outside the outer square). On lattice-aligned regions this marks
/// exactly the sites lying on the side, and the marked sites form contiguous
/// arcs of the outer boundary, which is what planar duality needs.
#[derive(Debug, Clone)]
pub struct RegionGraph {
    pub mesh_eps: f64,
    pub region: Region,
    pub rule: SiteRule,
    sites: Vec<LatticePoint>,
    offsets: Vec<usize>,
    adjacency: Vec<u32>,
    marks: Vec<Marks>,
    lookup: Lookup,
}

#[derive(Debug, Clone)]
struct Lookup {
    u0: i64,
    v0: i64,
    nu: usize,
    nv: usize,
    slots: Vec<u32>,
}

impl Lookup {
    const EMPTY: u32 = u32::MAX;

    fn get(&self, q: LatticePoint) -> Option<usize> {
        let (du, dv) = (q.u - self.u0, q.v - self.v0);
        if du < 0 || dv < 0 || du as usize >= self.nu || dv as usize >= self.nv {
            return None;
        }
        match self.slots[du as usize * self.nv + dv as usize] {
            Self::EMPTY => None,
            i => Some(i as usize),
        }
    }
}

/// Caps the number of sites of a single region graph.
pub const MAX_SITES: usize = 4_000_000;

pub fn build_region_graph(eps: f64, region: Region) -> Result<RegionGraph> {
    build_region_graph_with_rule(eps, region, SiteRule::Inside)
}

pub fn build_region_graph_with_rule(eps: f64, region: Region, rule: SiteRule) -> Result<RegionGraph> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("mesh must be positive, got {eps}")));
    }
    match region {
        Region::Rectangle(r) => {
            if !(r.width > 0.0 && r.height > 0.0) {
                return Err(Error::DegenerateRegion(format!(
                    "rectangle {} x {} has zero area",
                    r.width, r.height
                )));
            }
            if r.width < eps * (1.0 - GEOM_TOL) || r.height < eps * (1.0 - GEOM_TOL) {
                return Err(Error::InvalidParameter(format!(
                    "rectangle {} x {} is smaller than the mesh {eps}",
                    r.width, r.height
                )));
            }
        }
        Region::Annulus { inner, outer, .. } => {
            if !(inner >= 0.0 && outer > inner) {
                return Err(Error::DegenerateRegion(format!(
                    "annulus radii ({inner}, {outer}) enclose no area"
                )));
            }
            if 2.0 * outer < eps {
                return Err(Error::InvalidParameter(format!(
                    "annulus outer radius {outer} is smaller than half the mesh {eps}"
                )));
            }
            if rule == SiteRule::EdgeIntersecting {
                return Err(Error::InvalidParameter(
                    "the edge-intersecting rule applies to rectangles only".into(),
                ));
            }
        }
    }
    let tol = GEOM_TOL * eps;
    let mut bbox = region.bounding_box();
    if rule == SiteRule::EdgeIntersecting {
        bbox = Rect::new(bbox.x0 - eps, bbox.y0 - eps, bbox.width + 2.0 * eps, bbox.height + 2.0 * eps);
    }
    let u_lo = ((bbox.x0 + bbox.y0) / eps).floor() as i64 - 1;
    let u_hi = ((bbox.x0 + bbox.width + bbox.y0 + bbox.height) / eps).ceil() as i64 + 1;
    let v_lo = ((bbox.y0 - bbox.x0 - bbox.width) / eps).floor() as i64 - 1;
    let v_hi = ((bbox.y0 + bbox.height - bbox.x0) / eps).ceil() as i64 + 1;
    let candidates = ((u_hi - u_lo + 1) as u128) * ((v_hi - v_lo + 1) as u128);
    if candidates > 4 * MAX_SITES as u128 {
        return Err(Error::ResourceCap(format!(
            "region needs about {} sites (cap {MAX_SITES})",
            candidates / 2
        )));
    }

    let keep = |q: LatticePoint| -> bool {
        let p = q.position(eps);
        match (rule, region) {
            (SiteRule::Inside, _) => region.contains(p, tol),
            (SiteRule::EdgeIntersecting, Region::Rectangle(r)) => {
                r.contains(p, tol) || q.neighbors().any(|n| r.meets_segment(p, n.position(eps), tol))
            }
            (SiteRule::EdgeIntersecting, Region::Annulus { .. }) => unreachable!(),
        }
    };

    let mut sites = Vec::new();
    for u in u_lo..=u_hi {
        for v in v_lo..=v_hi {
            let q = LatticePoint::new(u, v);
            if keep(q) {
                sites.push(q);
            }
        }
    }
    if sites.is_empty() {
        return Err(Error::DegenerateRegion("region contains no lattice site".into()));
    }
    if sites.len() > MAX_SITES {
        return Err(Error::ResourceCap(format!(
            "region has {} sites (cap {MAX_SITES})",
            sites.len()
        )));
    }

    let nu = (u_hi - u_lo + 1) as usize;
    let nv = (v_hi - v_lo + 1) as usize;
    let mut slots = vec![Lookup::EMPTY; nu * nv];
    for (i, q) in sites.iter().enumerate() {
        slots[(q.u - u_lo) as usize * nv + (q.v - v_lo) as usize] = i as u32;
    }
    let lookup = Lookup { u0: u_lo, v0: v_lo, nu, nv, slots };

    let mut offsets = Vec::with_capacity(sites.len() + 1);
    let mut adjacency = Vec::with_capacity(sites.len() * 6);
    let mut marks = Vec::with_capacity(sites.len());
    offsets.push(0);
    for q in &sites {
        let mut m = Marks::NONE;
        for n in q.neighbors() {
            if let Some(j) = lookup.get(n) {
                adjacency.push(j as u32);
            }
            m.insert(side_marks(&region, rule, n.position(eps), tol));
        }
        if rule == SiteRule::EdgeIntersecting {
            m = edge_rule_marks(&region, q.position(eps), eps, tol);
        }
        offsets.push(adjacency.len());
        marks.push(m);
    }

    Ok(RegionGraph {
        mesh_eps: eps,
        region,
        rule,
        sites,
        offsets,
        adjacency,
        marks,
        lookup,
    })
}

/// Marks contributed by a neighbour at `p` lying beyond a side.
fn side_marks(region: &Region, rule: SiteRule, p: [f64; 2], tol: f64) -> Marks {
    if rule != SiteRule::Inside {
        return Marks::NONE;
    }
    let mut m = Marks::NONE;
    match *region {
        Region::Rectangle(r) => {
            if p[0] < r.x0 - tol {
                m.insert(Marks::LEFT);
            }
            if p[0] > r.x0 + r.width + tol {
                m.insert(Marks::RIGHT);
            }
            if p[1] < r.y0 - tol {
                m.insert(Marks::BOTTOM);
            }
            if p[1] > r.y0 + r.height + tol {
                m.insert(Marks::TOP);
            }
        }
        Region::Annulus { center, inner, outer } => {
            let d = sup_dist(p, center);
            if d < inner - tol {
                m.insert(Marks::INNER);
            }
            if d > outer + tol {
                m.insert(Marks::OUTER);
            }
        }
    }
    m
}

/// For `V^eps_R` graphs a site is marked for a side when it lies on or
/// beyond that side.
fn edge_rule_marks(region: &Region, p: [f64; 2], _eps: f64, tol: f64) -> Marks {
    let mut m = Marks::NONE;
    if let Region::Rectangle(r) = *region {
        if p[0] <= r.x0 + tol {
            m.insert(Marks::LEFT);
        }
        if p[0] >= r.x0 + r.width - tol {
            m.insert(Marks::RIGHT);
        }
        if p[1] <= r.y0 + tol {
            m.insert(Marks::BOTTOM);
        }
        if p[1] >= r.y0 + r.height - tol {
            m.insert(Marks::TOP);
        }
    }
    m
}

impl RegionGraph {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[LatticePoint] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> LatticePoint {
        self.sites[i]
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.sites[i].position(self.mesh_eps)
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.sites.iter().map(|q| q.position(self.mesh_eps)).collect()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[self.offsets[i]..self.offsets[i + 1]].iter().map(|&j| j as usize)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn marks(&self, i: usize) -> Marks {
        self.marks[i]
    }

    pub fn index_of(&self, q: LatticePoint) -> Option<usize> {
        self.lookup.get(q)
    }

    pub fn index_of_point(&self, p: [f64; 2]) -> Result<Option<usize>> {
        Ok(self.index_of(rotate_index(self.mesh_eps, p)?))
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.adjacency.len() / 2);
        for i in 0..self.len() {
            for j in self.neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn sites_with(&self, mark: Marks) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.marks[i].contains(mark))
    }

    /// Site closest to the region's center (lowest index on ties).
    pub fn center_site(&self) -> usize {
        let c = self.region.center();
        let d2 = |i: usize| {
            let p = self.position(i);
            (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)
        };
        (0..self.len())
            .min_by(|&a, &b| d2(a).total_cmp(&d2(b)).then(a.cmp(&b)))
            .expect("non-empty graph")
    }

    /// Bounding box of the site indices: `(u_min, u_max, v_min, v_max)`.
    pub fn index_bounds(&self) -> (i64, i64, i64, i64) {
        let mut b = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for q in &self.sites {
            b.0 = b.0.min(q.u);
            b.1 = b.1.max(q.u);
            b.2 = b.2.min(q.v);
            b.3 = b.3.max(q.v);
        }
        b
    }

    /// Whether the neighbours of `i`, taken in angular order, close up into
    /// a cycle of triangles.
    pub fn is_locally_triangulated(&self, i: usize) -> bool {
        let p = self.position(i);
        let mut nb: Vec<usize> = self.neighbors(i).collect();
        if nb.len() < 3 {
            return false;
        }
        nb.sort_by(|&a, &b| {
            let (pa, pb) = (self.position(a), self.position(b));
            let ta = (pa[1] - p[1]).atan2(pa[0] - p[0]);
            let tb = (pb[1] - p[1]).atan2(pb[0] - p[0]);
            ta.total_cmp(&tb)
        });
        (0..nb.len()).all(|k| {
            let (a, b) = (nb[k], nb[(k + 1) % nb.len()]);
            self.neighbors(a).any(|x| x == b)
        })
    }

    /// Edge-list dump: a header, one `site` line per site, one `edge` line
    /// per undirected edge.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let edges = self.edges();
        let _ = writeln!(
            out,
            "# bfperc lattice eps={} sites={} edges={}",
            self.mesh_eps,
            self.len(),
            edges.len()
        );
        for (i, q) in self.sites.iter().enumerate() {
            let p = q.position(self.mesh_eps);
            let _ = writeln!(out, "site {i} {} {} {} {} {}", q.u, q.v, p[0], p[1], self.marks[i].label());
        }
        for (i, j) in edges {
            let _ = writeln!(out, "edge {i} {j}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: f64, h: f64) -> Region {
        Region::rectangle(w, h)
    }

    #[test]
    fn origin_and_center_indices() {
        assert_eq!(rotate_index(0.7, [0.0, 0.0]).unwrap(), LatticePoint::new(0, 0));
        let c = rotate_index(0.7, [0.35, 0.35]).unwrap();
        assert_eq!(c, LatticePoint::new(1, 0));
        assert!(!c.is_corner());
        assert!(LatticePoint::new(0, 0).neighbors().any(|n| n == c));
        assert!(rotate_index(1.0, [0.3, 0.0]).is_err());
    }

    #[test]
    fn two_by_one_block_has_eight_sites() {
        // 3 x 2 corners plus the 2 square centers
        let g = build_region_graph(1.0, rect(2.0, 1.0)).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.sites().iter().filter(|q| q.is_corner()).count(), 6);
        assert_eq!(g.edges().len(), 7 + 8);
    }

    #[test]
    fn no_dangling_edges() {
        let g = build_region_graph(1.0, rect(2.0, 1.0)).unwrap();
        for i in 0..g.len() {
            for j in g.neighbors(i) {
                assert!(j < g.len());
                assert!(g.neighbors(j).any(|k| k == i));
            }
        }
    }

    #[test]
    fn degrees_bounded() {
        let g = build_region_graph(0.5, rect(3.0, 2.0)).unwrap();
        for i in 0..g.len() {
            let cap = if g.site(i).is_corner() { 8 } else { 4 };
            assert!(g.degree(i) <= cap);
        }
    }

    #[test]
    fn side_marks_are_on_the_sides() {
        let g = build_region_graph(0.5, rect(3.0, 2.0)).unwrap();
        for i in 0..g.len() {
            let p = g.position(i);
            let m = g.marks(i);
            assert_eq!(m.contains(Marks::LEFT), p[0].abs() < 1e-9);
            assert_eq!(m.contains(Marks::RIGHT), (p[0] - 3.0).abs() < 1e-9);
            assert_eq!(m.contains(Marks::BOTTOM), p[1].abs() < 1e-9);
            assert_eq!(m.contains(Marks::TOP), (p[1] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn marks_within_one_mesh_of_side_for_unaligned_rectangles() {
        let eps = 0.5;
        let r = Rect::new(0.3, 0.1, 2.6, 1.7);
        let g = build_region_graph(eps, Region::Rectangle(r)).unwrap();
        for i in 0..g.len() {
            let p = g.position(i);
            let m = g.marks(i);
            if m.contains(Marks::LEFT) {
                assert!(p[0] - r.x0 <= eps);
            }
            if m.contains(Marks::TOP) {
                assert!(r.y0 + r.height - p[1] <= eps);
            }
        }
        assert!(g.sites_with(Marks::LEFT).count() > 0);
    }

    #[test]
    fn annulus_marks_are_disjoint() {
        let g = build_region_graph(0.5, Region::annulus([0.0, 0.0], 1.0, 2.0)).unwrap();
        let inner: Vec<usize> = g.sites_with(Marks::INNER).collect();
        let outer: Vec<usize> = g.sites_with(Marks::OUTER).collect();
        assert!(!inner.is_empty() && !outer.is_empty());
        assert!(inner.iter().all(|i| !outer.contains(i)));
        for &i in &inner {
            assert!((sup_dist(g.position(i), [0.0, 0.0]) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn interior_is_triangulated() {
        let g = build_region_graph(0.5, rect(3.0, 3.0)).unwrap();
        let interior: Vec<usize> = (0..g.len()).filter(|&i| g.marks(i).is_empty()).collect();
        assert!(!interior.is_empty());
        assert!(interior.iter().all(|&i| g.is_locally_triangulated(i)));
    }

    #[test]
    fn reflection_swaps_left_and_right() {
        let r = 3.0;
        let g = build_region_graph(0.5, rect(r, r)).unwrap();
        for i in 0..g.len() {
            let p = g.position(i);
            let j = g.index_of_point([r - p[0], p[1]]).unwrap().expect("mirror site");
            let (a, b) = (g.marks(i), g.marks(j));
            assert_eq!(a.contains(Marks::LEFT), b.contains(Marks::RIGHT));
            assert_eq!(a.contains(Marks::TOP), b.contains(Marks::TOP));
            let mut ni: Vec<[i64; 2]> = g
                .neighbors(i)
                .map(|k| {
                    let q = g.position(k);
                    [((r - q[0]) * 4.0).round() as i64, (q[1] * 4.0).round() as i64]
                })
                .collect();
            let mut nj: Vec<[i64; 2]> = g
                .neighbors(j)
                .map(|k| {
                    let q = g.position(k);
                    [(q[0] * 4.0).round() as i64, (q[1] * 4.0).round() as i64]
                })
                .collect();
            ni.sort();
            nj.sort();
            assert_eq!(ni, nj);
        }
    }

    #[test]
    fn edge_intersecting_rule() {
        let eps = 1.0;
        let r = Rect::new(0.0, 0.0, 2.0, 1.0);
        let g = build_region_graph_with_rule(eps, Region::Rectangle(r), SiteRule::EdgeIntersecting).unwrap();
        let inside = build_region_graph(eps, Region::Rectangle(r)).unwrap();
        assert!(g.len() > inside.len());
        // every kept site lies on an edge meeting the rectangle
        for i in 0..g.len() {
            let q = g.site(i);
            let p = q.position(eps);
            assert!(r.contains(p, 1e-9) || q.neighbors().any(|n| r.meets_segment(p, n.position(eps), 1e-9)));
            // and every lattice edge meeting the rectangle has both ends kept
            for n in q.neighbors() {
                if r.meets_segment(p, n.position(eps), 1e-9) {
                    assert!(g.index_of(n).is_some());
                }
            }
        }
    }

    #[test]
    fn degenerate_regions_rejected() {
        assert!(matches!(build_region_graph(1.0, rect(0.0, 1.0)), Err(Error::DegenerateRegion(_))));
        assert!(matches!(
            build_region_graph(1.0, Region::annulus([0.0, 0.0], 2.0, 2.0)),
            Err(Error::DegenerateRegion(_))
        ));
        assert!(build_region_graph(1.0, rect(0.5, 1.0)).is_err());
    }

    #[test]
    fn dump_lists_every_edge() {
        let g = build_region_graph(1.0, rect(2.0, 1.0)).unwrap();
        let d = g.dump();
        assert_eq!(d.lines().filter(|l| l.starts_with("edge ")).count(), g.edges().len());
        assert_eq!(d.lines().filter(|l| l.starts_with("site ")).count(), g.len());
    }

    #[test]
    fn site_order_is_row_major_in_rotated_index() {
        let g = build_region_graph(0.5, rect(2.0, 1.5)).unwrap();
        assert!(g.sites().windows(2).all(|w| w[0] < w[1]));
    }
}
