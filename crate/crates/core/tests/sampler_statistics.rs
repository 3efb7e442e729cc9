use std::sync::Arc;

use bfperc::kernels::{face_centered_sqrt_kernel, Kernel};
use bfperc::lattice::{build_region_graph, Region};
use bfperc::sampler::{cross_validate_samplers, default_probe_pairs, ConvolutionSampler, HermiteSampler};
use bfperc::stats::{covariance_with_stderr, RunningStats};

fn sampler(eps: f64, w: f64, h: f64) -> ConvolutionSampler {
    let sqrt = Arc::new(face_centered_sqrt_kernel(&Kernel::bargmann_fock(), eps).unwrap());
    let graph = Arc::new(build_region_graph(eps, Region::rectangle(w, h)).unwrap());
    ConvolutionSampler::new(sqrt, graph).unwrap()
}

#[test]
fn unit_variance_at_probe_sites() {
    let s = sampler(0.5, 4.0, 4.0);
    let g = s.graph();
    let sites: Vec<usize> = [[0.0, 0.0], [2.0, 2.0], [4.0, 4.0], [0.5, 3.5], [1.25, 0.75]]
        .iter()
        .map(|&p| g.index_of_point(p).unwrap().unwrap())
        .collect();
    let vals = s.map_replicates(1, 10_000, |f| sites.iter().map(|&i| f.values[i]).collect::<Vec<f64>>());
    for k in 0..sites.len() {
        let sq: RunningStats = vals.iter().map(|v| v[k] * v[k]).collect();
        assert!((sq.mean() - 1.0).abs() <= 4.0 * sq.stderr(), "site {k}: {} +- {}", sq.mean(), sq.stderr());
    }
}

#[test]
fn neighbour_covariance_matches_kappa() {
    let bf = Kernel::bargmann_fock();
    let s = sampler(0.5, 3.0, 3.0);
    let g = s.graph();
    let pairs = [([1.0, 1.0], [1.5, 1.0]), ([1.0, 1.0], [1.25, 1.25]), ([0.0, 0.0], [0.0, 0.5])];
    let idx: Vec<(usize, usize)> = pairs
        .iter()
        .map(|(a, b)| (g.index_of_point(*a).unwrap().unwrap(), g.index_of_point(*b).unwrap().unwrap()))
        .collect();
    let draws = s.map_replicates(2, 10_000, |f| idx.iter().map(|&(i, j)| (f.values[i], f.values[j])).collect::<Vec<_>>());
    for (k, (a, b)) in pairs.iter().enumerate() {
        let x: Vec<f64> = draws.iter().map(|d| d[k].0).collect();
        let y: Vec<f64> = draws.iter().map(|d| d[k].1).collect();
        let (c, se) = covariance_with_stderr(&x, &y);
        let target = bf.kappa([b[0] - a[0], b[1] - a[1]]);
        assert!((c - target).abs() <= 4.0 * se, "pair {k}: {c} vs {target} (se {se})");
    }
}

#[test]
fn hermite_series_covariances() {
    let pts = vec![[0.0, 0.0], [0.5, 0.0], [0.3, -0.4], [1.0, 1.0]];
    let h = HermiteSampler::certified(&pts).unwrap();
    let draws: Vec<Vec<f64>> = (0..10_000).map(|r| h.sample(3, r).values).collect();
    for (i, j) in [(0, 1), (1, 2), (0, 3)] {
        let x: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let y: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        let (c, se) = covariance_with_stderr(&x, &y);
        let d2 = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
        assert!((c - (-0.5 * d2).exp()).abs() <= 4.0 * se);
    }
}

#[test]
fn cross_validation_passes_and_ignores_probe_order() {
    let bf = Kernel::bargmann_fock();
    let mut probes = default_probe_pairs(0.5);
    let a = cross_validate_samplers(&bf, 0.5, 4000, 9, Some(&probes)).unwrap();
    probes.reverse();
    let b = cross_validate_samplers(&bf, 0.5, 4000, 9, Some(&probes)).unwrap();
    assert_eq!(a, b);
    assert!(a.pass, "{a:?}");
}

#[test]
fn same_seed_same_sample_bitwise() {
    let s = sampler(0.5, 2.0, 2.0);
    let a = s.sample(11, 5);
    let b = s.sample(11, 5);
    assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a.values, s.sample(11, 6).values);
}
