//! Gaussian influences and the Russo-type derivative formula.
//!
//! For a threshold event `B` (an increasing set of colorings) and
//! `X ~ N(0, Sigma)`, the influence of coordinate `i` at level `p` is
//!
//! ```text
//! I_i = P[i pivotal for B | X_i = -p] * exp(-p^2 / (2 Sigma_ii)) / sqrt(2 pi Sigma_ii)
//! ```
//!
//! and `d/dp P[omega^p in B] = sum_i I_i`. The conditional law is sampled
//! exactly by `X' = X + (q - X_i) Sigma(., i) / Sigma_ii`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::lattice::RegionGraph;
use crate::percolation::{connects_where, Direction};
use crate::rng::{derive_seed, fill_standard_normal, stream_rng};
use crate::stats::{parallel_moments, MCEstimate, RunningStats};

/// A centered Gaussian vector `N(0, Sigma)`.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub sigma: DMatrix<f64>,
    /// Lower Cholesky factor, used for sampling.
    chol: DMatrix<f64>,
    sqrt_sigma: Option<DMatrix<f64>>,
}

impl GaussianSpec {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 || sigma.ncols() != n {
            return Err(Error::InvalidParameter("covariance must be a non-empty square matrix".into()));
        }
        for i in 0..n {
            if !(sigma[(i, i)] > 0.0) {
                return Err(Error::InvalidParameter(format!("Sigma[{i},{i}] = {} is not positive", sigma[(i, i)])));
            }
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * (sigma[(i, i)] * sigma[(j, j)]).sqrt() {
                    return Err(Error::InvalidParameter(format!("Sigma is not symmetric at ({i},{j})")));
                }
            }
        }
        let chol = nalgebra::Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::Factorization("covariance is not positive definite".into()))?
            .l();
        Ok(GaussianSpec {
            sigma,
            chol,
            sqrt_sigma: None,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is positive definite")
    }

    /// `Sigma_ij = kappa(x_i - x_j)`.
    pub fn from_kernel(kernel: &Kernel, points: &[[f64; 2]]) -> Result<Self> {
        let n = points.len();
        let sigma = DMatrix::from_fn(n, n, |i, j| {
            kernel.kappa([points[i][0] - points[j][0], points[i][1] - points[j][1]])
        });
        Self::new(sigma)
    }

    /// Covariance of a region graph's sites.
    pub fn from_graph(kernel: &Kernel, graph: &RegionGraph) -> Result<Self> {
        Self::from_kernel(kernel, &graph.positions())
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.sigma.column(i).iter().copied().collect()
    }

    /// Attaches the symmetric square root, computed by eigendecomposition.
    pub fn with_sqrt(mut self) -> Self {
        let eig = SymmetricEigen::new(self.sigma.clone());
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let s = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        self.sqrt_sigma = Some((&s + s.transpose()) * 0.5);
        self
    }

    pub fn sqrt_sigma(&self) -> Option<&DMatrix<f64>> {
        self.sqrt_sigma.as_ref()
    }

    /// `||sqrt(Sigma)||_{inf, op}`: the largest absolute row sum.
    pub fn sqrt_op_norm(&self) -> f64 {
        let owned;
        let s = match &self.sqrt_sigma {
            Some(s) => s,
            None => {
                owned = self.clone().with_sqrt();
                owned.sqrt_sigma.as_ref().expect("just computed")
            }
        };
        s.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Draw number `replicate` of the stream `seed`.
    pub fn sample(&self, seed: u64, replicate: u64) -> Vec<f64> {
        let n = self.dim();
        let mut z = vec![0.0; n];
        fill_standard_normal(&mut stream_rng(seed, replicate), &mut z);
        (0..n)
            .map(|i| {
                let row = self.chol.row(i);
                (0..=i).map(|k| row[k] * z[k]).sum()
            })
            .collect()
    }

    /// Gaussian density of coordinate `i` at `-p`.
    pub fn density_factor(&self, i: usize, p: f64) -> f64 {
        let s = self.sigma[(i, i)];
        (-p * p / (2.0 * s)).exp() / (2.0 * PI * s).sqrt()
    }
}

/// `X' = X + (q - X_i) column / column[i]`, an exact draw of `X` given
/// `X_i = q` when `column = Sigma(., i)`. Coordinate `i` is set to `q`
/// exactly.
pub fn condition_on_site(x: &[f64], i: usize, q: f64, column: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    condition_in_place(&mut out, i, q, column);
    out
}

pub fn condition_in_place(x: &mut [f64], i: usize, q: f64, column: &[f64]) {
    let shift = (q - x[i]) / column[i];
    for (xj, cj) in x.iter_mut().zip(column) {
        *xj += shift * cj;
    }
    x[i] = q;
}

/// An increasing event on colorings (`true` = black).
pub trait ThresholdEvent: Sync {
    fn dim(&self) -> usize;
    fn occurs(&self, black: &[bool]) -> bool;
    fn name(&self) -> String;
}

/// Is coordinate `i` pivotal for `event` in `black`?
pub fn is_pivotal(event: &dyn ThresholdEvent, black: &mut [bool], i: usize) -> bool {
    let keep = black[i];
    black[i] = true;
    let up = event.occurs(black);
    black[i] = false;
    let down = event.occurs(black);
    black[i] = keep;
    up != down
}

#[derive(Debug, Clone)]
pub struct Dictator {
    pub n: usize,
    pub index: usize,
}

impl ThresholdEvent for Dictator {
    fn dim(&self) -> usize {
        self.n
    }
    fn occurs(&self, black: &[bool]) -> bool {
        black[self.index]
    }
    fn name(&self) -> String {
        format!("dictator({})", self.index)
    }
}

/// Strictly more than half of the coordinates black.
#[derive(Debug, Clone)]
pub struct Majority {
    pub n: usize,
}

impl ThresholdEvent for Majority {
    fn dim(&self) -> usize {
        self.n
    }
    fn occurs(&self, black: &[bool]) -> bool {
        2 * black.iter().filter(|&&b| b).count() > self.n
    }
    fn name(&self) -> String {
        format!("majority({})", self.n)
    }
}

/// Some block of `width` consecutive coordinates is entirely black.
#[derive(Debug, Clone)]
pub struct Tribes {
    pub n: usize,
    pub width: usize,
}

impl ThresholdEvent for Tribes {
    fn dim(&self) -> usize {
        self.n
    }
    fn occurs(&self, black: &[bool]) -> bool {
        black.chunks(self.width).any(|c| c.iter().all(|&b| b))
    }
    fn name(&self) -> String {
        format!("tribes({}x{})", self.n / self.width.max(1), self.width)
    }
}

/// Black crossing of a region graph; small graphs use a truth table.
pub struct GraphCrossing<'g> {
    graph: &'g RegionGraph,
    direction: Direction,
    table: Option<Vec<bool>>,
}

impl<'g> GraphCrossing<'g> {
    pub const TABLE_SITES: usize = 20;

    pub fn new(graph: &'g RegionGraph, direction: Direction) -> Self {
        let mut ev = GraphCrossing {
            graph,
            direction,
            table: None,
        };
        if graph.len() <= Self::TABLE_SITES {
            let n = graph.len();
            let table = (0u64..1 << n)
                .map(|mask| {
                    let black: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                    ev.direct(&black)
                })
                .collect();
            ev.table = Some(table);
        }
        ev
    }

    fn direct(&self, black: &[bool]) -> bool {
        let (a, b) = self.direction.sides();
        connects_where(self.graph, |i| black[i], a, b)
    }
}

impl ThresholdEvent for GraphCrossing<'_> {
    fn dim(&self) -> usize {
        self.graph.len()
    }
    fn occurs(&self, black: &[bool]) -> bool {
        match &self.table {
            Some(t) => {
                let mask = black.iter().enumerate().fold(0usize, |m, (i, &b)| m | (b as usize) << i);
                t[mask]
            }
            None => self.direct(black),
        }
    }
    fn name(&self) -> String {
        format!("crossing({:?}, {} sites)", self.direction, self.graph.len())
    }
}

fn colors_at(x: &[f64], p: f64, out: &mut Vec<bool>) {
    out.clear();
    out.extend(x.iter().map(|&v| v >= -p));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEstimate {
    pub site: usize,
    pub level: f64,
    /// `P[Piv_i | X_i = -p]`.
    pub pivotal_prob: MCEstimate,
    pub influence: f64,
    pub influence_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub event: String,
    pub level: f64,
    pub sites: Vec<InfluenceEstimate>,
    /// `sum_i I_i` with the standard error of the per-replicate sum.
    pub total: MCEstimate,
    pub max_influence: f64,
}

fn check_dims(event: &dyn ThresholdEvent, spec: &GaussianSpec) -> Result<()> {
    if event.dim() != spec.dim() {
        return Err(Error::InvalidParameter(format!(
            "event has {} coordinates, covariance has {}",
            event.dim(),
            spec.dim()
        )));
    }
    Ok(())
}

/// Influences of every coordinate. Replicate `r` draws `X` once and
/// conditions it on each coordinate in turn.
pub fn influences(event: &dyn ThresholdEvent, spec: &GaussianSpec, p: f64, n: usize, seed: u64) -> Result<InfluenceReport> {
    check_dims(event, spec)?;
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    let d = spec.dim();
    let columns: Vec<Vec<f64>> = (0..d).map(|i| spec.column(i)).collect();
    let factors: Vec<f64> = (0..d).map(|i| spec.density_factor(i, p)).collect();
    // observables: d pivotal indicators followed by the weighted sum
    let stats = parallel_moments(n, d + 1, |r, out| {
        let x = spec.sample(seed, r);
        let mut y = x.clone();
        let mut black = Vec::with_capacity(d);
        let mut sum = 0.0;
        for i in 0..d {
            y.copy_from_slice(&x);
            condition_in_place(&mut y, i, -p, &columns[i]);
            colors_at(&y, p, &mut black);
            let piv = is_pivotal(event, &mut black, i) as u8 as f64;
            out[i] = piv;
            sum += piv * factors[i];
        }
        out[d] = sum;
    });
    let sites: Vec<InfluenceEstimate> = (0..d)
        .map(|i| {
            let piv = MCEstimate::from_stats(&stats[i], seed);
            InfluenceEstimate {
                site: i,
                level: p,
                pivotal_prob: piv,
                influence: piv.mean * factors[i],
                influence_stderr: piv.stderr * factors[i],
            }
        })
        .collect();
    let max_influence = sites.iter().map(|s| s.influence).fold(0.0, f64::max);
    Ok(InfluenceReport {
        event: event.name(),
        level: p,
        sites,
        total: MCEstimate::from_stats(&stats[d], seed),
        max_influence,
    })
}

pub fn influence_of_site(event: &dyn ThresholdEvent, spec: &GaussianSpec, i: usize, p: f64, n: usize, seed: u64) -> Result<InfluenceEstimate> {
    check_dims(event, spec)?;
    if i >= spec.dim() {
        return Err(Error::InvalidParameter(format!("site {i} out of range")));
    }
    let column = spec.column(i);
    let stats = parallel_moments(n, 1, |r, out| {
        let mut x = spec.sample(seed, r);
        condition_in_place(&mut x, i, -p, &column);
        let mut black = Vec::new();
        colors_at(&x, p, &mut black);
        out[0] = is_pivotal(event, &mut black, i) as u8 as f64;
    });
    let piv = MCEstimate::from_stats(&stats[0], seed);
    let f = spec.density_factor(i, p);
    Ok(InfluenceEstimate {
        site: i,
        level: p,
        pivotal_prob: piv,
        influence: piv.mean * f,
        influence_stderr: piv.stderr * f,
    })
}

/// `P[omega^p in B]`.
pub fn event_probability(event: &dyn ThresholdEvent, spec: &GaussianSpec, p: f64, n: usize, seed: u64) -> Result<MCEstimate> {
    check_dims(event, spec)?;
    let stats = parallel_moments(n, 1, |r, out| {
        let x = spec.sample(seed, r);
        let mut black = Vec::new();
        colors_at(&x, p, &mut black);
        out[0] = event.occurs(&black) as u8 as f64;
    });
    Ok(MCEstimate::from_stats(&stats[0], seed))
}

/// Central difference `(P(p + h) - P(p - h)) / 2h` with common random numbers.
pub fn finite_difference(event: &dyn ThresholdEvent, spec: &GaussianSpec, p: f64, h: f64, n: usize, seed: u64) -> Result<MCEstimate> {
    check_dims(event, spec)?;
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let stats = parallel_moments(n, 1, |r, out| {
        let x = spec.sample(seed, r);
        let mut black = Vec::new();
        colors_at(&x, p + h, &mut black);
        let up = event.occurs(&black) as u8 as f64;
        colors_at(&x, p - h, &mut black);
        let down = event.occurs(&black) as u8 as f64;
        out[0] = (up - down) / (2.0 * h);
    });
    Ok(MCEstimate::from_stats(&stats[0], seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RussoReport {
    pub event: String,
    pub p: f64,
    pub h: f64,
    pub n: usize,
    pub influence_sum: MCEstimate,
    pub finite_difference: MCEstimate,
    pub combined_stderr: f64,
    pub discrepancy: f64,
    pub pass: bool,
}

/// Compares `sum_i I_i` with the finite-difference derivative of
/// `p -> P[omega^p in B]`, on independent streams.
pub fn russo_check(event: &dyn ThresholdEvent, spec: &GaussianSpec, p: f64, h: f64, n: usize, seed: u64) -> Result<RussoReport> {
    let infl = influences(event, spec, p, n, derive_seed(seed, 0x5255))?;
    let fd = finite_difference(event, spec, p, h, n, derive_seed(seed, 0x4644))?;
    let combined = infl.total.stderr.hypot(fd.stderr);
    let discrepancy = (infl.total.mean - fd.mean).abs();
    Ok(RussoReport {
        event: event.name(),
        p,
        h,
        n,
        influence_sum: infl.total,
        finite_difference: fd,
        combined_stderr: combined,
        discrepancy,
        pass: discrepancy <= 3.0 * combined,
    })
}

pub fn log_plus(t: f64) -> f64 {
    t.ln().max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KklReport {
    pub event: String,
    pub mu: MCEstimate,
    pub influence_sum: f64,
    pub max_influence: f64,
    pub sqrt_op_norm: f64,
    pub log_plus: f64,
    /// `||sqrt Sigma||^-1 mu (1 - mu) sqrt(log_+(1 / (||sqrt Sigma|| max I)))`.
    pub rhs: f64,
    /// `influence_sum / rhs`, absent in the vacuous case.
    pub implied_constant: Option<f64>,
    pub vacuous: bool,
}

pub fn kkl_check(event: &dyn ThresholdEvent, spec: &GaussianSpec, p: f64, n: usize, seed: u64) -> Result<KklReport> {
    let infl = influences(event, spec, p, n, derive_seed(seed, 1))?;
    let mu = event_probability(event, spec, p, n, derive_seed(seed, 2))?;
    let norm = spec.sqrt_op_norm();
    let lp = log_plus(1.0 / (norm * infl.max_influence));
    let rhs = mu.mean * (1.0 - mu.mean) * lp.sqrt() / norm;
    let vacuous = !(rhs > 0.0);
    Ok(KklReport {
        event: event.name(),
        mu,
        influence_sum: infl.total.mean,
        max_influence: infl.max_influence,
        sqrt_op_norm: norm,
        log_plus: lp,
        rhs,
        implied_constant: (!vacuous).then(|| infl.total.mean / rhs),
        vacuous,
    })
}

/// A monotone subset of `R^n` whose membership along a line changes only at
/// finitely many computable points.
pub trait MonotoneSet: Sync {
    fn dim(&self) -> usize;
    fn contains(&self, x: &[f64]) -> bool;
    /// Values of `t` where `t -> contains(x + t v)` may change.
    fn breakpoints(&self, x: &[f64], v: &[f64]) -> Vec<f64>;
}

/// `{x : omega^p(x) in B}` for a threshold event `B`.
pub struct ThresholdSet<'a> {
    pub event: &'a dyn ThresholdEvent,
    pub p: f64,
}

impl MonotoneSet for ThresholdSet<'_> {
    fn dim(&self) -> usize {
        self.event.dim()
    }
    fn contains(&self, x: &[f64]) -> bool {
        let black: Vec<bool> = x.iter().map(|&v| v >= -self.p).collect();
        self.event.occurs(&black)
    }
    fn breakpoints(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(v)
            .filter(|(_, &vi)| vi != 0.0)
            .map(|(&xi, &vi)| (-self.p - xi) / vi)
            .collect()
    }
}

/// `{x : a . x >= b}` with `a >= 0`.
#[derive(Debug, Clone)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl MonotoneSet for HalfSpace {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn contains(&self, x: &[f64]) -> bool {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() >= self.b
    }
    fn breakpoints(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let ax: f64 = self.a.iter().zip(x).map(|(a, x)| a * x).sum();
        let av: f64 = self.a.iter().zip(v).map(|(a, v)| a * v).sum();
        if av == 0.0 {
            Vec::new()
        } else {
            vec![(self.b - ax) / av]
        }
    }
}

/// Is `x` in the Minkowski enlargement `A + [-r, r] v`, i.e. does
/// `x + t v` meet `A` for some `|t| <= r`?
pub fn in_enlargement(set: &dyn MonotoneSet, x: &[f64], v: &[f64], r: f64) -> bool {
    if set.contains(x) {
        return true;
    }
    if r == 0.0 || v.iter().all(|&c| c == 0.0) {
        return false;
    }
    let mut ts: Vec<f64> = set.breakpoints(x, v).into_iter().filter(|t| t.abs() <= r).collect();
    ts.push(-r);
    ts.push(r);
    ts.sort_by(f64::total_cmp);
    let probe = |t: f64| {
        let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + t * b).collect();
        set.contains(&y)
    };
    ts.iter().any(|&t| probe(t)) || ts.windows(2).any(|w| probe(0.5 * (w[0] + w[1])))
}

/// Enlargement steps used by the influence-by-definition estimator.
pub const ENLARGEMENT_STEPS: [f64; 3] = [0.05, 0.02, 0.01];

/// Weights turning the three difference quotients into the intercept of
/// their least-squares line in `r`.
fn richardson_weights(rs: &[f64]) -> Vec<f64> {
    let k = rs.len() as f64;
    let mean = rs.iter().sum::<f64>() / k;
    let sxx: f64 = rs.iter().map(|r| (r - mean).powi(2)).sum();
    rs.iter().map(|r| 1.0 / k - mean * (r - mean) / sxx).collect()
}

/// `I_v(A)` from its definition: `(mu(A + [-r, r] v) - mu(A)) / r`,
/// extrapolated to `r = 0` over [`ENLARGEMENT_STEPS`].
pub fn directional_influence(set: &dyn MonotoneSet, spec: &GaussianSpec, v: &[f64], n: usize, seed: u64) -> Result<MCEstimate> {
    Ok(directional_influences(set, spec, &[v.to_vec()], n, seed)?.remove(0))
}

/// Several directions evaluated on the same draws.
pub fn directional_influences(set: &dyn MonotoneSet, spec: &GaussianSpec, dirs: &[Vec<f64>], n: usize, seed: u64) -> Result<Vec<MCEstimate>> {
    if set.dim() != spec.dim() || dirs.iter().any(|v| v.len() != spec.dim()) {
        return Err(Error::InvalidParameter("dimension mismatch".into()));
    }
    let w = richardson_weights(&ENLARGEMENT_STEPS);
    let stats = parallel_moments(n, dirs.len(), |r, out| {
        let x = spec.sample(seed, r);
        if set.contains(&x) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        for (o, v) in out.iter_mut().zip(dirs) {
            *o = ENLARGEMENT_STEPS
                .iter()
                .zip(&w)
                .map(|(&step, &wk)| wk * in_enlargement(set, &x, v, step) as u8 as f64 / step)
                .sum();
        }
    });
    Ok(stats.iter().map(|s| MCEstimate::from_stats(s, seed)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublinearityReport {
    pub direction: Vec<f64>,
    pub lhs: MCEstimate,
    pub coordinate_influences: Vec<MCEstimate>,
    /// `sum_i |v_i| I_i(A)`.
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub holds: bool,
}

/// `I_v(A) <= sum_i |v_i| I_{e_i}(A)`, all influences by enlargement on
/// shared draws. Holds when `lhs <= rhs + 4 * stderr`.
pub fn sublinearity_check(set: &dyn MonotoneSet, spec: &GaussianSpec, v: &[f64], n: usize, seed: u64) -> Result<SublinearityReport> {
    let d = spec.dim();
    let mut dirs = vec![v.to_vec()];
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        dirs.push(e);
    }
    let est = directional_influences(set, spec, &dirs, n, seed)?;
    let lhs = est[0];
    let coords = est[1..].to_vec();
    let rhs: f64 = coords.iter().zip(v).map(|(c, vi)| vi.abs() * c.mean).sum();
    let rhs_var: f64 = coords.iter().zip(v).map(|(c, vi)| (vi.abs() * c.stderr).powi(2)).sum();
    let rhs_stderr = rhs_var.sqrt();
    // upper bound on the stderr of the difference regardless of correlation
    let tol = 4.0 * (lhs.stderr + rhs_stderr);
    Ok(SublinearityReport {
        direction: v.to_vec(),
        lhs,
        coordinate_influences: coords,
        rhs,
        rhs_stderr,
        holds: lhs.mean <= rhs + tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMonotonicityReport {
    pub q_grid: Vec<f64>,
    pub conditional_means: Vec<MCEstimate>,
    pub non_decreasing: bool,
    pub p: f64,
    /// `E[phi | X_0 = -p]`.
    pub at_level: MCEstimate,
    /// `E[phi | X_0 >= -p]`.
    pub above_level: MCEstimate,
    pub level_ordering_holds: bool,
}

/// `q -> E[phi(X_1..) | X_0 = q]` on a grid, with common random numbers
/// across `q`, for a covariance whose first row is non-negative.
pub fn conditional_monotonicity_check<F>(spec: &GaussianSpec, phi: F, q_grid: &[f64], p: f64, n: usize, seed: u64) -> Result<ConditionalMonotonicityReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = spec.dim();
    if d < 2 {
        return Err(Error::InvalidParameter("need the conditioning coordinate plus at least one more".into()));
    }
    let column = spec.column(0);
    if column.iter().any(|&c| c < 0.0) {
        return Err(Error::InvalidParameter("Sigma(0, .) must be non-negative".into()));
    }
    let k = q_grid.len();
    let stats = parallel_moments(n, k + 1, |r, out| {
        let x = spec.sample(seed, r);
        for (o, &q) in out.iter_mut().zip(q_grid) {
            let y = condition_on_site(&x, 0, q, &column);
            *o = phi(&y[1..]);
        }
        let y = condition_on_site(&x, 0, -p, &column);
        out[k] = phi(&y[1..]);
    });
    let means: Vec<MCEstimate> = stats[..k].iter().map(|s| MCEstimate::from_stats(s, seed)).collect();
    let at_level = MCEstimate::from_stats(&stats[k], seed);
    let above_seed = derive_seed(seed, 3);
    let accepted: Vec<Option<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let x = spec.sample(above_seed, r);
            (x[0] >= -p).then(|| phi(&x[1..]))
        })
        .collect();
    let above: RunningStats = accepted.into_iter().flatten().collect();
    if above.count() < 2 {
        return Err(Error::InsufficientData(format!("fewer than two draws with X_0 >= {}", -p)));
    }
    let above_level = MCEstimate::from_stats(&above, above_seed);
    let tol = |a: &MCEstimate, b: &MCEstimate| 4.0 * a.stderr.hypot(b.stderr);
    Ok(ConditionalMonotonicityReport {
        q_grid: q_grid.to_vec(),
        non_decreasing: means.windows(2).all(|w| w[1].mean >= w[0].mean - tol(&w[0], &w[1])),
        conditional_means: means,
        p,
        level_ordering_holds: at_level.mean <= above_level.mean + tol(&at_level, &above_level),
        at_level,
        above_level,
    })
}
