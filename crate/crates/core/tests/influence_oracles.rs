use std::f64::consts::PI;

use nalgebra::DMatrix;

use bfperc::influence::{
    conditional_monotonicity_check, condition_on_site, directional_influence, influences, kkl_check, russo_check,
    sublinearity_check, Dictator, GaussianSpec, HalfSpace, Majority, Tribes,
};
use bfperc::kernels::Kernel;
use bfperc::stats::covariance_with_stderr;

fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[test]
fn majority_of_three_matches_binomial_derivative() {
    // with independent coordinates P(p) = 3q^2 - 2q^3, q = Phi(p)
    let spec = GaussianSpec::identity(3);
    for p in [0.0, 0.4] {
        let q = normal_cdf(p);
        let exact = 6.0 * q * (1.0 - q) * density(p);
        let rep = influences(&Majority { n: 3 }, &spec, p, 200_000, 5).unwrap();
        assert!(rep.total.within(exact, 4.0), "p {p}: {:?} vs {exact}", rep.total);
        let russo = russo_check(&Majority { n: 3 }, &spec, p, 0.02, 200_000, 6).unwrap();
        assert!(russo.pass, "{russo:?}");
    }
}

#[test]
fn dictator_closed_form() {
    let rep = kkl_check(&Dictator { n: 4, index: 1 }, &GaussianSpec::identity(4).with_sqrt(), 0.0, 20_000, 1).unwrap();
    assert!((rep.max_influence - density(0.0)).abs() < 1e-12);
    assert!((rep.influence_sum - density(0.0)).abs() < 1e-12);
    assert!(rep.log_plus.is_finite());
}

#[test]
fn kkl_implied_constants_for_tribes() {
    for (n, width) in [(4, 2), (9, 3), (16, 4)] {
        let rep = kkl_check(&Tribes { n, width }, &GaussianSpec::identity(n).with_sqrt(), 0.0, 20_000, 2).unwrap();
        assert!((rep.sqrt_op_norm - 1.0).abs() < 1e-9);
        if let Some(c) = rep.implied_constant {
            assert!(c > 0.0 && c.is_finite(), "{rep:?}");
        } else {
            assert!(rep.vacuous);
        }
    }
}

#[test]
fn conditioning_matches_schur_complement() {
    let pts = [[0.0, 0.0], [0.6, 0.0], [0.0, 0.8], [1.0, 0.5], [-0.4, 0.3], [0.2, -0.9]];
    let bf = Kernel::bargmann_fock();
    let spec = GaussianSpec::from_kernel(&bf, &pts).unwrap();
    let (site, q) = (1, -0.5);
    let col = spec.column(site);
    let draws: Vec<Vec<f64>> = (0..50_000).map(|r| condition_on_site(&spec.sample(4, r), site, q, &col)).collect();
    let sigma = DMatrix::from_fn(6, 6, |i, j| bf.kappa([pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]]));
    for i in (0..6).filter(|&i| i != site) {
        let xi: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let mean: f64 = xi.iter().sum::<f64>() / xi.len() as f64;
        let cond_var = sigma[(i, i)] - col[i] * col[i];
        assert!((mean - col[i] * q).abs() <= 4.0 * (cond_var / xi.len() as f64).sqrt());
        for j in (i..6).filter(|&j| j != site) {
            let xj: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let (c, se) = covariance_with_stderr(&xi, &xj);
            let schur = sigma[(i, j)] - col[i] * col[j] / col[site];
            assert!((c - schur).abs() <= 4.0 * se, "({i},{j}): {c} vs {schur}");
        }
    }
}

#[test]
fn pivotal_probabilities_are_scale_covariant() {
    let pts = [[0.0, 0.0], [0.7, 0.0], [0.0, 0.7], [0.7, 0.7], [1.4, 0.3]];
    let spec = GaussianSpec::from_kernel(&Kernel::bargmann_fock(), &pts).unwrap();
    let scaled = GaussianSpec::new(spec.sigma.clone() * 4.0).unwrap();
    let event = Majority { n: 5 };
    let a = influences(&event, &spec, 0.3, 5_000, 8).unwrap();
    let b = influences(&event, &scaled, 0.6, 5_000, 8).unwrap();
    for (x, y) in a.sites.iter().zip(&b.sites) {
        assert_eq!(x.pivotal_prob.mean, y.pivotal_prob.mean);
    }
}

#[test]
fn half_space_influence_by_enlargement() {
    // A = {a.x >= b} with |a| = 1: I_v(A) = |a.v| phi(b)
    let a = vec![0.6, 0.8];
    let set = HalfSpace { a: a.clone(), b: 0.5 };
    let spec = GaussianSpec::identity(2);
    for v in [vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, -0.8]] {
        let exact = (a[0] * v[0] + a[1] * v[1]).abs() * density(0.5);
        let est = directional_influence(&set, &spec, &v, 400_000, 3).unwrap();
        assert!((est.mean - exact).abs() <= 4.0 * est.stderr + 2e-3, "{v:?}: {est:?} vs {exact}");
    }
    let rep = sublinearity_check(&set, &spec, &[0.6, -0.8], 200_000, 4).unwrap();
    assert!(rep.holds, "{rep:?}");
}

#[test]
fn conditional_expectation_increases_with_the_conditioning_value() {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let spec = GaussianSpec::new(sigma).unwrap();
    let grid = [-1.0, 0.0, 1.0];
    let rep = conditional_monotonicity_check(&spec, |x| x[0], &grid, 0.0, 20_000, 5).unwrap();
    assert!(rep.non_decreasing && rep.level_ordering_holds);
    let slope = (rep.conditional_means[2].mean - rep.conditional_means[0].mean) / 2.0;
    assert!((slope - 0.5).abs() < 1e-12);
}
