use bfperc::kernels::Kernel;
use bfperc::sprinkling::{estimate_fold, estimate_fold_probability, estimate_sprinkled_gap, FoldMethod, FoldSpec};

#[test]
fn importance_sampler_agrees_with_crude_on_the_gaussian_kernel() {
    let bf = Kernel::bargmann_fock();
    let spec = FoldSpec { eps: 1.0, p: 0.5, k: 8, n: 200_000 };
    let crude = estimate_fold(&bf, &spec, 1, FoldMethod::Crude).unwrap().estimate;
    let is = estimate_fold(&bf, &FoldSpec { n: 20_000, ..spec }, 2, FoldMethod::ImportanceSampling).unwrap().estimate;
    assert!(crude.mean > 0.0);
    assert!((crude.mean - is.mean).abs() <= 4.0 * crude.stderr.hypot(is.stderr), "{crude:?} vs {is:?}");
    assert!(is.stderr < 0.05 * is.mean);
}

#[test]
fn fold_probability_falls_as_the_mesh_shrinks() {
    let bf = Kernel::bargmann_fock();
    let est: Vec<_> = [0.5, 0.35, 0.25]
        .iter()
        .map(|&eps| estimate_fold_probability(&bf, &FoldSpec { eps, p: 0.5, k: 16, n: 20_000 }, 3).unwrap())
        .collect();
    for w in est.windows(2) {
        assert!(w[1].mean + 4.0 * w[1].stderr < w[0].mean - 4.0 * w[0].stderr, "{est:?}");
    }
}

#[test]
fn fold_probability_falls_as_the_level_rises() {
    let bf = Kernel::bargmann_fock();
    let est: Vec<_> = [0.3, 0.5, 0.8]
        .iter()
        .map(|&p| estimate_fold_probability(&bf, &FoldSpec { eps: 0.75, p, k: 8, n: 20_000 }, 4).unwrap())
        .collect();
    assert!(est.windows(2).all(|w| w[1].mean < w[0].mean), "{est:?}");
}

#[test]
fn nearly_rigid_field_has_no_folds() {
    let spec = FoldSpec { eps: 0.02, p: 0.5, k: 8, n: 10_000 };
    let e = estimate_fold(&Kernel::rational(1).unwrap(), &spec, 5, FoldMethod::Crude).unwrap();
    assert_eq!(e.estimate.mean, 0.0);
}

#[test]
fn sprinkled_gap_is_small_and_contained() {
    let rep = estimate_sprinkled_gap(&Kernel::bargmann_fock(), 0.5, 10.0, 0.5, 4, 300, 6).unwrap();
    assert!(rep.gap.mean <= 0.05, "{rep:?}");
    assert_eq!(rep.containment_violations, 0);
    assert!(rep.coarse_crossing.mean > 0.5);
}

#[test]
fn gap_does_not_grow_as_the_mesh_shrinks() {
    let bf = Kernel::bargmann_fock();
    let reps: Vec<_> = [1.0, 0.5]
        .iter()
        .map(|&eps| estimate_sprinkled_gap(&bf, eps, 4.0, 0.5, 4, 400, 7).unwrap())
        .collect();
    for r in &reps {
        assert_eq!(r.containment_violations, 0);
    }
    let (a, b) = (&reps[0].gap, &reps[1].gap);
    assert!(b.mean <= a.mean + 4.0 * a.stderr.hypot(b.stderr), "{reps:?}");
}

#[test]
fn invalid_fold_specs_rejected() {
    let bf = Kernel::bargmann_fock();
    assert!(estimate_fold_probability(&bf, &FoldSpec { eps: 0.5, p: 0.0, k: 4, n: 10 }, 0).is_err());
    assert!(estimate_fold_probability(&bf, &FoldSpec { eps: 0.5, p: 0.5, k: 4, n: 0 }, 0).is_err());
}
