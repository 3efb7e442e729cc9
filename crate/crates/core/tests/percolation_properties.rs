use bfperc::kernels::Kernel;
use bfperc::lattice::{Rect, Region};
use bfperc::percolation::{
    crossing, critical_level, estimate_arm, r_sequence, Color, ColoredConfig, Direction, MultiCross, SubRegion,
};
use bfperc::sampler::ConvolutionSampler;
use bfperc::stats::covariance_with_stderr;
use proptest::prelude::*;

fn sampler(w: f64, h: f64) -> ConvolutionSampler {
    ConvolutionSampler::for_region(&Kernel::bargmann_fock(), 0.5, Region::rectangle(w, h)).unwrap()
}

#[test]
fn black_crossing_equals_white_crossing_of_the_negated_field() {
    let s = sampler(4.0, 3.0);
    let g = s.graph().clone();
    let agree = s.map_replicates(1, 2000, |f| {
        let p = 0.3 * ((f.replicate % 7) as f64 - 3.0);
        let neg: Vec<f64> = f.values.iter().map(|v| -v).collect();
        let a = crossing(&ColoredConfig::from_field(&g, &f.values, p), Direction::LeftRight, Color::Black);
        let b = crossing(&ColoredConfig::from_field(&g, &neg, -p), Direction::LeftRight, Color::White);
        a == b
    });
    assert!(agree.iter().all(|&x| x));
}

#[test]
fn multicross_implies_long_crossing() {
    let r = r_sequence(2);
    let k = 1;
    let s = sampler(5.0 * r[k], r[k]);
    let g = s.graph().clone();
    let mc = MultiCross::new(&g, k, &r).unwrap();
    let results = s.map_replicates(2, 1000, |f| {
        let p = 0.25 * ((f.replicate % 9) as f64 - 4.0);
        let c = ColoredConfig::from_field(&g, &f.values, p);
        let long = crossing(&c, Direction::LeftRight, Color::Black);
        (mc.occurs(&c), long)
    });
    assert!(results.iter().all(|&(m, long)| !m || long));
    assert!(results.iter().any(|&(m, _)| m), "event never observed");
}

#[test]
fn halves_are_positively_associated() {
    let s = sampler(4.0, 2.0);
    let g = s.graph().clone();
    let left = SubRegion::new(&g, Region::Rectangle(Rect::new(0.0, 0.0, 2.0, 2.0))).unwrap();
    let right = SubRegion::new(&g, Region::Rectangle(Rect::new(2.0, 0.0, 2.0, 2.0))).unwrap();
    let pairs = s.map_replicates(3, 4000, |f| {
        let c = ColoredConfig::from_field(&g, &f.values, 0.0);
        (
            left.crossing(&c, Direction::LeftRight, Color::Black) as u8 as f64,
            right.crossing(&c, Direction::LeftRight, Color::Black) as u8 as f64,
        )
    });
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (c, se) = covariance_with_stderr(&x, &y);
    assert!(c >= -4.0 * se, "covariance {c} (se {se})");
}

#[test]
fn arm_probability_decreases_with_radius() {
    let bf = Kernel::bargmann_fock();
    let est: Vec<_> = [2.0, 4.0, 8.0]
        .iter()
        .map(|&outer| estimate_arm(&bf, 0.5, [0.0, 0.0], 1.0, outer, 0.0, 2000, 4).unwrap())
        .collect();
    for w in est.windows(2) {
        assert!(w[1].mean <= w[0].mean + 4.0 * w[0].stderr.hypot(w[1].stderr), "{est:?}");
    }
    assert!(est[2].mean < est[0].mean);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crossing_is_monotone_in_level(rep in 0u64..10_000, p in -1.0f64..1.0, dp in 0.0f64..1.0) {
        let s = sampler(3.0, 2.0);
        let g = s.graph();
        let f = s.sample(5, rep);
        let lo = crossing(&ColoredConfig::from_field(g, &f.values, p), Direction::LeftRight, Color::Black);
        let hi = crossing(&ColoredConfig::from_field(g, &f.values, p + dp), Direction::LeftRight, Color::Black);
        prop_assert!(!lo || hi);
        let (a, b) = Direction::LeftRight.sides();
        let level = critical_level(g, &f.values, a, b, Color::Black);
        prop_assert_eq!(lo, p >= level);
    }
}
