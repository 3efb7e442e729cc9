//! Exhaustive checks of planar duality on small regions.

use bfperc::lattice::{build_region_graph, Rect, Region, RegionGraph};
use bfperc::percolation::{circuit_event, crossing, Color, ColoredConfig, Direction, UnionFind};

/// Black circuit around `center`, found directly: a cycle of black sites
/// with odd winding number. Uses the double cover of the black subgraph cut
/// along a ray from `center`; such a cycle exists iff some site is joined
/// to its own copy on the other sheet.
fn circuit_by_cycle_search(g: &RegionGraph, colors: &[bool], center: [f64; 2]) -> bool {
    let n = g.len();
    let (a, b) = (0.613_f64.cos(), 0.613_f64.sin());
    // does the segment p q cross the ray center + t (a, b), t > 0?
    let crosses = |p: [f64; 2], q: [f64; 2]| {
        let side = |z: [f64; 2]| (z[0] - center[0]) * b - (z[1] - center[1]) * a;
        let (sp, sq) = (side(p), side(q));
        if sp.signum() == sq.signum() {
            return false;
        }
        let t = sp / (sp - sq);
        let z = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
        (z[0] - center[0]) * a + (z[1] - center[1]) * b > 0.0
    };
    let mut uf = UnionFind::new(2 * n);
    for (i, j) in g.edges() {
        if !(colors[i] && colors[j]) {
            continue;
        }
        if crosses(g.position(i), g.position(j)) {
            uf.union(i, j + n);
            uf.union(i + n, j);
        } else {
            uf.union(i, j);
            uf.union(i + n, j + n);
        }
    }
    (0..n).any(|i| colors[i] && uf.connected(i, i + n))
}

fn for_all_colorings(g: &RegionGraph, mut check: impl FnMut(&ColoredConfig)) {
    assert!(g.len() <= 24);
    for mask in 0u64..(1 << g.len()) {
        check(&ColoredConfig::from_mask(g, mask));
    }
}

#[test]
fn black_left_right_xor_white_top_bottom_on_every_coloring() {
    let g = build_region_graph(0.5, Region::Rectangle(Rect::new(0.0, 0.0, 1.5, 1.0))).unwrap();
    assert_eq!(g.len(), 18);
    let mut count = 0u64;
    for_all_colorings(&g, |c| {
        let black = crossing(c, Direction::LeftRight, Color::Black);
        let white = crossing(c, Direction::TopBottom, Color::White);
        assert!(black ^ white, "duality fails on {:?}", c.colors);
        count += 1;
    });
    assert_eq!(count, 1 << 18);
}

#[test]
fn duality_on_the_eight_site_block() {
    let g = build_region_graph(1.0, Region::rectangle(2.0, 1.0)).unwrap();
    for_all_colorings(&g, |c| {
        assert!(crossing(c, Direction::LeftRight, Color::Black) ^ crossing(c, Direction::TopBottom, Color::White));
        assert!(crossing(c, Direction::TopBottom, Color::Black) ^ crossing(c, Direction::LeftRight, Color::White));
    });
}

#[test]
fn duality_on_unaligned_rectangle() {
    let g = build_region_graph(0.5, Region::Rectangle(Rect::new(0.3, 0.1, 1.3, 0.9))).unwrap();
    assert!(g.len() <= 20, "{} sites", g.len());
    for_all_colorings(&g, |c| {
        assert!(crossing(c, Direction::LeftRight, Color::Black) ^ crossing(c, Direction::TopBottom, Color::White));
    });
}

fn circuit_equivalence(center: [f64; 2], inner: f64, outer: f64, expected_sites: usize) {
    let g = build_region_graph(0.5, Region::annulus(center, inner, outer)).unwrap();
    assert_eq!(g.len(), expected_sites);
    let mut circuits = 0u64;
    for_all_colorings(&g, |c| {
        let by_duality = circuit_event(c, Color::Black);
        let by_search = circuit_by_cycle_search(&g, &c.colors, center);
        assert_eq!(by_duality, by_search, "coloring {:?}", c.colors);
        circuits += by_duality as u64;
    });
    assert!(circuits > 0);
}

#[test]
fn circuit_duality_matches_cycle_search_around_a_corner() {
    circuit_equivalence([0.0, 0.0], 0.25, 0.5, 12);
}

#[test]
fn circuit_duality_matches_cycle_search_on_a_wider_ring() {
    circuit_equivalence([0.0, 0.0], 0.5, 0.75, 20);
}

#[test]
fn circuit_duality_matches_cycle_search_around_a_center() {
    circuit_equivalence([0.25, 0.25], 0.25, 0.5, 12);
}
