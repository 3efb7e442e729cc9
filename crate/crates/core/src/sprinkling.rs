//! Fold events and the sprinkled crossing gap.
//!
//! A fold on an edge `e = [x, y]` at level `p` means `f(x), f(y) >= -p/2`
//! while `f(z) < -p` somewhere inside `e`. The interior is sampled at `K`
//! equally spaced points.
//!
//! Fold probabilities fall off like `exp(-c eps^-4)`, far below anything a
//! plain Monte Carlo run can see at desk scale (about `1e-13` already at
//! `eps = 0.5` for Bargmann-Fock). [`estimate_fold_probability`] therefore
//! splits the law. The endpoint pair `(f(x), f(y))` is drawn from an
//! exponential tilt anchored at the corner `(-p/2, -p/2)` of its admissible
//! quadrant and reweighted by its exact Gaussian density. Given the
//! endpoints, the interior is an explicit Gaussian vector and
//! `P[min_j f(z_j) < -p]` is the probability of a union of half-spaces,
//! estimated by the ALOE estimator (sample a half-space in proportion to its
//! exact probability, condition on it, divide the summed probabilities by
//! the number of half-spaces hit), whose relative error stays bounded
//! however rare the union is.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::kernels::{face_centered_sqrt_kernel, Kernel};
use crate::lattice::{build_region_graph, LatticePoint, Region, RegionGraph};
use crate::percolation::{critical_level, Color, Direction};
use crate::rng::{fill_standard_normal, standard_normal, stream_rng, StreamRng};
use crate::sampler::ConvolutionSampler;
use crate::stats::{parallel_moments, MCEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub eps: f64,
    pub p: f64,
    /// Interior sample points per edge.
    pub k: usize,
    pub n: usize,
}

impl FoldSpec {
    fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) {
            return Err(Error::InvalidParameter(format!("fold level must be positive, got {}", self.p)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("mesh must be positive, got {}", self.eps)));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("need at least one replicate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMethod {
    Crude,
    ImportanceSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEstimate {
    pub spec: FoldSpec,
    pub method: FoldMethod,
    pub estimate: MCEstimate,
    /// Diagonal jitter needed to factor the covariance (crude sampling).
    pub jitter: f64,
    /// Rate of the exponential tilt on the endpoint values.
    pub tilt_rate: [f64; 2],
}

/// Largest diagonal jitter tried before giving up on a factorization.
pub const JITTER_CAP: f64 = 1e-8;

/// Lower Cholesky factor of `sigma + jitter I`, escalating the jitter from
/// zero up to [`JITTER_CAP`].
pub fn jittered_cholesky(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = sigma.nrows();
    let mut jitter = 0.0;
    loop {
        let m = sigma + DMatrix::identity(n, n) * jitter;
        if let Some(c) = nalgebra::Cholesky::new(m) {
            return Ok((c.l(), jitter));
        }
        jitter = if jitter == 0.0 { 1e-15 } else { jitter * 10.0 };
        if jitter > JITTER_CAP * (1.0 + 1e-9) {
            return Err(Error::Factorization(format!(
                "covariance of {n} points is not positive definite even with jitter {JITTER_CAP}"
            )));
        }
    }
}

/// Points of the square edge `[0, eps] x {0}`: the two endpoints, then `K`
/// interior points at `j eps / (K + 1)`.
pub fn fold_points(eps: f64, k: usize) -> Vec<[f64; 2]> {
    let mut pts = vec![[0.0, 0.0], [eps, 0.0]];
    pts.extend((1..=k).map(|j| [eps * j as f64 / (k + 1) as f64, 0.0]));
    pts
}

fn is_fold(x: &[f64], p: f64) -> bool {
    x[0] >= -0.5 * p && x[1] >= -0.5 * p && x[2..].iter().any(|&v| v < -p)
}

fn covariance(kernel: &Kernel, pts: &[[f64; 2]]) -> DMatrix<f64> {
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| kernel.kappa([pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]]))
}

/// `P[N(0, 1) > t]`.
fn normal_upper_tail(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Standard normal conditioned on `> a`: plain rejection below zero,
/// exponential proposal above.
fn truncated_normal(rng: &mut StreamRng, a: f64) -> f64 {
    if a <= 0.0 {
        loop {
            let z = standard_normal(rng);
            if z > a {
                return z;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let x = a + e / rate;
        let u: f64 = rng.random();
        if u <= (-0.5 * (x - rate) * (x - rate)).exp() {
            return x;
        }
    }
}

/// The interior given the endpoints: mean `A (x0, x1)` and covariance
/// `B B^T`.
struct SplitLaw {
    /// Inverse of the endpoint covariance.
    k_inv: Matrix2<f64>,
    log_norm: f64,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    row_norm: Vec<f64>,
}

/// Relative size of a negative eigenvalue tolerated (and clipped) in the
/// conditional interior covariance.
const EIGEN_FLOOR: f64 = 1e-8;

impl SplitLaw {
    fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        let k = n - 2;
        let kee = Matrix2::new(sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 0)], sigma[(1, 1)]);
        let det = kee.determinant();
        let k_inv = kee
            .try_inverse()
            .filter(|_| det > 0.0)
            .ok_or_else(|| Error::Factorization("endpoint covariance is singular".into()))?;
        let kie = sigma.view((2, 0), (k, 2)).into_owned();
        let kinv_dyn = DMatrix::from_fn(2, 2, |i, j| k_inv[(i, j)]);
        let a = &kie * &kinv_dyn;
        let mut c = sigma.view((2, 2), (k, k)).into_owned() - &a * kie.transpose();
        c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(1e-300);
        if eig.eigenvalues.iter().any(|&l| l < -EIGEN_FLOOR * scale.max(1.0)) {
            return Err(Error::Factorization(
                "conditional interior covariance has a negative eigenvalue".into(),
            ));
        }
        let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let b = &eig.eigenvectors * DMatrix::from_diagonal(&root);
        let row_norm = (0..k).map(|j| b.row(j).norm()).collect();
        Ok(SplitLaw {
            k_inv,
            log_norm: -(2.0 * PI).ln() - 0.5 * det.ln(),
            a,
            b,
            row_norm,
        })
    }

    fn log_density(&self, x: Vector2<f64>) -> f64 {
        self.log_norm - 0.5 * (x.transpose() * self.k_inv * x)[(0, 0)]
    }

    /// Thresholds `tau_j = p + mu_j`: the interior point `j` dips below `-p`
    /// iff `-B_j . z > tau_j`.
    fn thresholds(&self, x: Vector2<f64>, p: f64) -> Vec<f64> {
        (0..self.a.nrows())
            .map(|j| p + self.a[(j, 0)] * x[0] + self.a[(j, 1)] * x[1])
            .collect()
    }

    fn half_space_probs(&self, tau: &[f64]) -> Vec<f64> {
        tau.iter()
            .zip(&self.row_norm)
            .map(|(&t, &s)| if s > 0.0 { normal_upper_tail(t / s) } else { (t < 0.0) as u8 as f64 })
            .collect()
    }

    fn log_union_bound(&self, x: Vector2<f64>, p: f64) -> f64 {
        self.half_space_probs(&self.thresholds(x, p)).iter().sum::<f64>().ln()
    }

    /// One ALOE draw of `P[some interior point < -p | endpoints = x]`.
    fn aloe(&self, x: Vector2<f64>, p: f64, rng: &mut StreamRng) -> f64 {
        let tau = self.thresholds(x, p);
        let probs = self.half_space_probs(&tau);
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return 0.0;
        }
        let k = probs.len();
        let mut pick: f64 = rng.random::<f64>() * total;
        let mut j = k - 1;
        for (i, &q) in probs.iter().enumerate() {
            if pick < q {
                j = i;
                break;
            }
            pick -= q;
        }
        let s = self.row_norm[j];
        let mut y = vec![0.0; k];
        fill_standard_normal(rng, &mut y);
        // unit direction w = -B_j / s; replace the component of y along w
        let w: Vec<f64> = (0..k).map(|c| -self.b[(j, c)] / s).collect();
        let along: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        let t = truncated_normal(rng, tau[j] / s);
        for (yc, wc) in y.iter_mut().zip(&w) {
            *yc += (t - along) * wc;
        }
        let hits = (0..k)
            .filter(|&i| {
                let v: f64 = (0..k).map(|c| -self.b[(i, c)] * y[c]).sum();
                v > tau[i]
            })
            .count()
            .max(1);
        total / hits as f64
    }
}

/// Fold probability of a square edge (see the module documentation).
pub fn estimate_fold_probability(kernel: &Kernel, spec: &FoldSpec, seed: u64) -> Result<MCEstimate> {
    Ok(estimate_fold(kernel, spec, seed, FoldMethod::ImportanceSampling)?.estimate)
}

pub fn estimate_fold(kernel: &Kernel, spec: &FoldSpec, seed: u64, method: FoldMethod) -> Result<FoldEstimate> {
    spec.validate()?;
    let mut out = FoldEstimate {
        spec: *spec,
        method,
        estimate: MCEstimate {
            mean: 0.0,
            stderr: 0.0,
            n: spec.n,
            seed_stream: seed,
        },
        jitter: 0.0,
        tilt_rate: [0.0, 0.0],
    };
    if spec.k == 0 {
        // no interior point can witness a fold
        return Ok(out);
    }
    let sigma = covariance(kernel, &fold_points(spec.eps, spec.k));
    let p = spec.p;
    match method {
        FoldMethod::Crude => {
            let (l, jitter) = jittered_cholesky(&sigma)?;
            let d = sigma.nrows();
            let stats = parallel_moments(spec.n, 1, |r, o| {
                let mut z = vec![0.0; d];
                fill_standard_normal(&mut stream_rng(seed, r), &mut z);
                let x: Vec<f64> = (0..d).map(|i| (0..=i).map(|k| l[(i, k)] * z[k]).sum()).collect();
                o[0] = is_fold(&x, p) as u8 as f64;
            });
            out.estimate = MCEstimate::from_stats(&stats[0], seed);
            out.jitter = jitter;
        }
        FoldMethod::ImportanceSampling => {
            let law = SplitLaw::new(&sigma)?;
            let corner = Vector2::new(-0.5 * p, -0.5 * p);
            let log_g = |x: Vector2<f64>| law.log_density(x) + law.log_union_bound(x, p);
            let g0 = log_g(corner);
            if !g0.is_finite() {
                return Err(Error::InsufficientData(
                    "fold probability underflows double precision at this mesh".into(),
                ));
            }
            let h = 1e-4 * p;
            let rate = |dx: Vector2<f64>| (-(log_g(corner + dx * h) - g0) / h).clamp(0.5, 1e8);
            let lam = [rate(Vector2::new(1.0, 0.0)), rate(Vector2::new(0.0, 1.0))];
            let log_q_norm = lam[0].ln() + lam[1].ln();
            let stats = parallel_moments(spec.n, 1, |r, o| {
                let mut rng = stream_rng(seed, r);
                let e0: f64 = Exp1.sample(&mut rng);
                let e1: f64 = Exp1.sample(&mut rng);
                let x = corner + Vector2::new(e0 / lam[0], e1 / lam[1]);
                let log_w = law.log_density(x) - (log_q_norm - e0 - e1);
                o[0] = log_w.exp() * law.aloe(x, p, &mut rng);
            });
            out.estimate = MCEstimate::from_stats(&stats[0], seed);
            out.tilt_rate = lam;
        }
    }
    Ok(out)
}

/// Fold estimates for several interior sample counts.
pub fn k_refinement(kernel: &Kernel, eps: f64, p: f64, ks: &[usize], n: usize, seed: u64) -> Result<Vec<FoldEstimate>> {
    ks.iter()
        .map(|&k| estimate_fold(kernel, &FoldSpec { eps, p, k, n }, seed, FoldMethod::ImportanceSampling))
        .collect()
}

/// Coarse lattice of mesh `eps` embedded in the lattice of mesh
/// `eps / fine_factor` on the same rectangle.
pub struct SprinkledPair {
    pub eps: f64,
    pub fine_factor: usize,
    pub coarse: RegionGraph,
    fine_sampler: ConvolutionSampler,
    /// Fine index of each coarse site.
    coarse_to_fine: Vec<usize>,
    /// Coarse edges with the fine sites strictly inside them.
    edge_interiors: Vec<(usize, usize, Vec<usize>)>,
}

impl SprinkledPair {
    /// `[0, 2R] x [0, R]` with `R` rounded to a multiple of `eps`, so both
    /// lattices see the same sides.
    pub fn new(kernel: &Kernel, eps: f64, r: f64, fine_factor: usize) -> Result<Self> {
        if fine_factor < 4 || !fine_factor.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "fine factor must be an even integer >= 4, got {fine_factor}"
            )));
        }
        let r = snap(r, eps);
        let region = Region::rectangle(2.0 * r, r);
        let fine_eps = eps / fine_factor as f64;
        let coarse = build_region_graph(eps, region)?;
        let fine = Arc::new(build_region_graph(fine_eps, region)?);
        let sqrt = Arc::new(face_centered_sqrt_kernel(kernel, fine_eps)?);
        let fine_sampler = ConvolutionSampler::new(sqrt, fine.clone())?;
        let f = fine_factor as i64;
        let lift = |q: LatticePoint| LatticePoint::new(f * q.u, f * q.v);
        let coarse_to_fine = coarse
            .sites()
            .iter()
            .map(|&q| {
                fine.index_of(lift(q))
                    .ok_or_else(|| Error::InvalidParameter("coarse site missing from the fine lattice".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut edge_interiors = Vec::new();
        for (a, b) in coarse.edges() {
            let (qa, qb) = (lift(coarse.site(a)), lift(coarse.site(b)));
            let (du, dv) = ((qb.u - qa.u) / f, (qb.v - qa.v) / f);
            let inner = (1..f)
                .map(|j| {
                    fine.index_of(LatticePoint::new(qa.u + j * du, qa.v + j * dv))
                        .ok_or_else(|| Error::InvalidParameter("edge interior missing from the fine lattice".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            edge_interiors.push((a, b, inner));
        }
        Ok(SprinkledPair {
            eps,
            fine_factor,
            coarse,
            fine_sampler,
            coarse_to_fine,
            edge_interiors,
        })
    }

    pub fn fine_graph(&self) -> &RegionGraph {
        self.fine_sampler.graph()
    }

    pub fn coarse_values(&self, fine_values: &[f64]) -> Vec<f64> {
        self.coarse_to_fine.iter().map(|&i| fine_values[i]).collect()
    }

    /// Any coarse edge black at level `p/2` with a fine interior site below `-p`?
    pub fn has_fold(&self, fine_values: &[f64], p: f64) -> bool {
        self.edge_interiors.iter().any(|(a, b, inner)| {
            let (fa, fb) = (fine_values[self.coarse_to_fine[*a]], fine_values[self.coarse_to_fine[*b]]);
            fa >= -0.5 * p && fb >= -0.5 * p && inner.iter().any(|&i| fine_values[i] < -p)
        })
    }

    /// `(coarse crossing at p/2, fine crossing at p, fold present)`.
    pub fn evaluate(&self, fine_values: &[f64], p: f64) -> (bool, bool, bool) {
        let (a, b) = Direction::LeftRight.sides();
        let coarse = critical_level(&self.coarse, &self.coarse_values(fine_values), a, b, Color::Black) <= 0.5 * p;
        let fine = critical_level(self.fine_graph(), fine_values, a, b, Color::Black) <= p;
        (coarse, fine, self.has_fold(fine_values, p))
    }
}

fn snap(r: f64, eps: f64) -> f64 {
    ((r / eps).round().max(1.0)) * eps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub eps: f64,
    /// Side length after rounding to the coarse mesh.
    pub r: f64,
    pub p: f64,
    pub fine_factor: usize,
    /// `P[coarse crossing at p/2 and no fine crossing at p]`.
    pub gap: MCEstimate,
    pub coarse_crossing: MCEstimate,
    pub fine_crossing: MCEstimate,
    pub fold_fraction: f64,
    /// Samples with a coarse crossing, no fold, and no fine crossing. The
    /// sprinkling argument says this never happens.
    pub containment_violations: usize,
}

pub fn estimate_sprinkled_gap(kernel: &Kernel, eps: f64, r: f64, p: f64, fine_factor: usize, n: usize, seed: u64) -> Result<GapReport> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("sprinkling level must be positive, got {p}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    let pair = SprinkledPair::new(kernel, eps, r, fine_factor)?;
    let outcomes = pair.fine_sampler.map_replicates(seed, n, |f| pair.evaluate(&f.values, p));
    let count = |pred: &dyn Fn(&(bool, bool, bool)) -> bool| outcomes.iter().filter(|o| pred(o)).count();
    let gap = count(&|o| o.0 && !o.1);
    let violations = count(&|o| o.0 && !o.2 && !o.1);
    Ok(GapReport {
        eps,
        r: snap(r, eps),
        p,
        fine_factor,
        gap: MCEstimate::from_hits(gap, n, seed),
        coarse_crossing: MCEstimate::from_hits(count(&|o| o.0), n, seed),
        fine_crossing: MCEstimate::from_hits(count(&|o| o.1), n, seed),
        fold_fraction: count(&|o| o.2) as f64 / n as f64,
        containment_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_interior_points_means_no_fold() {
        let spec = FoldSpec { eps: 0.5, p: 0.5, k: 0, n: 100 };
        let e = estimate_fold_probability(&Kernel::bargmann_fock(), &spec, 1).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn fold_points_layout() {
        let pts = fold_points(1.0, 3);
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[2], [0.25, 0.0]);
        assert_eq!(pts[4], [0.75, 0.0]);
    }

    #[test]
    fn fold_indicator() {
        assert!(is_fold(&[0.0, 0.0, -0.6], 0.5));
        assert!(!is_fold(&[-0.3, 0.0, -0.6], 0.5));
        assert!(!is_fold(&[0.0, 0.0, -0.4], 0.5));
    }

    #[test]
    fn importance_sampling_agrees_with_crude_where_both_work() {
        // a rough kernel at a coarse mesh makes folds common enough
        let k = Kernel::rational(1).unwrap();
        let spec = FoldSpec { eps: 2.0, p: 0.5, k: 4, n: 40_000 };
        let crude = estimate_fold(&k, &spec, 3, FoldMethod::Crude).unwrap();
        let is = estimate_fold(&k, &spec, 4, FoldMethod::ImportanceSampling).unwrap();
        assert!(crude.estimate.mean > 0.01);
        let se = crude.estimate.stderr.hypot(is.estimate.stderr);
        assert!((crude.estimate.mean - is.estimate.mean).abs() < 4.0 * se, "{crude:?} {is:?}");
    }

    #[test]
    fn jitter_escalates_then_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, j) = jittered_cholesky(&m).unwrap();
        assert!(j > 0.0 && j <= JITTER_CAP);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(jittered_cholesky(&bad), Err(Error::Factorization(_))));
    }

    #[test]
    fn fine_factor_validated() {
        let k = Kernel::bargmann_fock();
        assert!(SprinkledPair::new(&k, 0.5, 2.0, 3).is_err());
        assert!(SprinkledPair::new(&k, 0.5, 2.0, 2).is_err());
    }

    #[test]
    fn coarse_sites_are_fine_sites_at_the_same_place() {
        let pair = SprinkledPair::new(&Kernel::bargmann_fock(), 0.5, 1.0, 4).unwrap();
        for (i, &j) in pair.coarse_to_fine.iter().enumerate() {
            let a = pair.coarse.position(i);
            let b = pair.fine_graph().position(j);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        for (a, b, inner) in &pair.edge_interiors {
            assert_eq!(inner.len(), 3);
            let (pa, pb) = (pair.coarse.position(*a), pair.coarse.position(*b));
            for &i in inner {
                let q = pair.fine_graph().position(i);
                let cross = (pb[0] - pa[0]) * (q[1] - pa[1]) - (pb[1] - pa[1]) * (q[0] - pa[0]);
                assert!(cross.abs() < 1e-12);
            }
        }
    }
}
