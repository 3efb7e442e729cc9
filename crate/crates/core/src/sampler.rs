//! Gaussian field samplers.
//!
//! [`ConvolutionSampler`] realises the lattice field as `eta * W` with `W`
//! white noise on `Z^2`, addressed through the rotated lattice index.
//! [`HermiteSampler`] evaluates the truncated Bargmann-Fock series at
//! arbitrary points of the plane. The two share nothing but the kernel, which
//! makes [`cross_validate_samplers`] a meaningful check.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft2::{next_fast_len, Fft2};
use crate::kernels::{face_centered_sqrt_kernel, Frame, Kernel, SqrtKernel};
use crate::lattice::{build_region_graph, Region, RegionGraph};
use crate::rng::{fill_standard_normal, stream_rng};
use crate::stats::{covariance_with_stderr, ks_two_sample};

/// Windows up to this many cells per side use the direct stencil.
pub const DIRECT_WINDOW: usize = 128;

/// Noise cells allowed in one sampling window.
pub const MAX_WINDOW_CELLS: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    SqrtConvolution,
    HermiteSeries,
}

/// Field values at the sites of a region graph (or at a list of points for
/// the Hermite sampler), in site order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub mesh_eps: f64,
    pub seed: u64,
    pub replicate: u64,
    pub method: SamplerMethod,
    pub kernel: Kernel,
}

impl FieldSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which convolution path to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionPath {
    #[default]
    Auto,
    Direct,
    Fft,
}

struct FftPlan {
    fft: Fft2,
    /// Transform of `eta` placed on the padded grid.
    eta_hat: Vec<Complex64>,
}

/// `f(q) = sum_{|m|_inf <= M} eta(m) W(q - m)` on the sites of a region graph.
///
/// Noise for replicate `r` is drawn row-major over the window
/// `[u_min - M, u_max + M] x [v_min - M, v_max + M]` from stream `r` of the
/// seed, so a replicate's values do not depend on scheduling.
pub struct ConvolutionSampler {
    sqrt: Arc<SqrtKernel>,
    graph: Arc<RegionGraph>,
    u0: i64,
    v0: i64,
    rows: usize,
    cols: usize,
    /// Offset of each site in the noise window.
    site_offsets: Vec<usize>,
    fft: Option<FftPlan>,
}

impl ConvolutionSampler {
    pub fn new(sqrt: Arc<SqrtKernel>, graph: Arc<RegionGraph>) -> Result<Self> {
        Self::with_path(sqrt, graph, ConvolutionPath::Auto)
    }

    pub fn with_path(sqrt: Arc<SqrtKernel>, graph: Arc<RegionGraph>, path: ConvolutionPath) -> Result<Self> {
        if sqrt.frame != Frame::FaceCentered {
            return Err(Error::InvalidParameter(
                "the lattice sampler needs a face-centered square root table".into(),
            ));
        }
        let lattice_eps = sqrt.lattice_eps();
        if (lattice_eps - graph.mesh_eps).abs() > 1e-12 * graph.mesh_eps {
            return Err(Error::InvalidParameter(format!(
                "square root built for mesh {lattice_eps}, graph has mesh {}",
                graph.mesh_eps
            )));
        }
        let m = sqrt.support_radius as i64;
        let (umin, umax, vmin, vmax) = graph.index_bounds();
        let u0 = umin - m;
        let v0 = vmin - m;
        let rows = (umax - umin + 1 + 2 * m) as usize;
        let cols = (vmax - vmin + 1 + 2 * m) as usize;
        if rows.saturating_mul(cols) > MAX_WINDOW_CELLS {
            return Err(Error::ResourceCap(format!(
                "noise window {rows} x {cols} exceeds {MAX_WINDOW_CELLS} cells"
            )));
        }
        let site_offsets = graph
            .sites()
            .iter()
            .map(|q| (q.u - u0) as usize * cols + (q.v - v0) as usize)
            .collect();
        let use_fft = match path {
            ConvolutionPath::Auto => rows > DIRECT_WINDOW || cols > DIRECT_WINDOW,
            ConvolutionPath::Direct => false,
            ConvolutionPath::Fft => true,
        };
        let fft = use_fft.then(|| {
            let (nr, nc) = (next_fast_len(rows), next_fast_len(cols));
            let fft = Fft2::new(nr, nc);
            let mut eta_hat = vec![Complex64::new(0.0, 0.0); nr * nc];
            for m1 in -m..=m {
                for m2 in -m..=m {
                    let r = m1.rem_euclid(nr as i64) as usize;
                    let c = m2.rem_euclid(nc as i64) as usize;
                    eta_hat[r * nc + c].re = sqrt.get(m1, m2);
                }
            }
            fft.forward(&mut eta_hat, &mut Vec::new());
            FftPlan { fft, eta_hat }
        });
        Ok(ConvolutionSampler {
            sqrt,
            graph,
            u0,
            v0,
            rows,
            cols,
            site_offsets,
            fft,
        })
    }

    /// Builds the square root table for `kernel` at lattice spacing `eps`.
    pub fn for_region(kernel: &Kernel, eps: f64, region: Region) -> Result<Self> {
        let sqrt = Arc::new(face_centered_sqrt_kernel(kernel, eps)?);
        let graph = Arc::new(build_region_graph(eps, region)?);
        Self::new(sqrt, graph)
    }

    pub fn graph(&self) -> &Arc<RegionGraph> {
        &self.graph
    }

    pub fn sqrt_kernel(&self) -> &Arc<SqrtKernel> {
        &self.sqrt
    }

    pub fn window(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn uses_fft(&self) -> bool {
        self.fft.is_some()
    }

    /// Window origin in rotated coordinates.
    pub fn window_origin(&self) -> (i64, i64) {
        (self.u0, self.v0)
    }

    pub fn noise(&self, seed: u64, replicate: u64) -> Vec<f64> {
        let mut w = vec![0.0; self.rows * self.cols];
        fill_standard_normal(&mut stream_rng(seed, replicate), &mut w);
        w
    }

    fn stencil_at(&self, noise: &[f64], offset: usize) -> f64 {
        let m = self.sqrt.support_radius;
        let width = self.sqrt.width();
        let table = &self.sqrt.table;
        let cols = self.cols;
        // eta(m1, m2) W(q - m): walk the table backwards against the noise
        let mut acc = 0.0;
        for a in 0..width {
            let row = offset + m * cols - a * cols;
            let trow = &table[a * width..(a + 1) * width];
            let nrow = &noise[row - m..=row + m];
            for (t, w) in trow.iter().zip(nrow.iter().rev()) {
                acc += t * w;
            }
        }
        acc
    }

    fn convolve_direct(&self, noise: &[f64]) -> Vec<f64> {
        self.site_offsets.iter().map(|&o| self.stencil_at(noise, o)).collect()
    }

    /// Field values at a subset of sites via the direct stencil.
    pub fn sample_sites(&self, seed: u64, replicate: u64, sites: &[usize]) -> Vec<f64> {
        let noise = self.noise(seed, replicate);
        sites.iter().map(|&i| self.stencil_at(&noise, self.site_offsets[i])).collect()
    }

    /// Circular convolution of one or two (packed as real/imag) noise
    /// windows. The padded grid is at least `window` in each direction, so
    /// the sites never see wrapped noise.
    fn convolve_fft(&self, plan: &FftPlan, a: &[f64], b: Option<&[f64]>) -> (Vec<f64>, Option<Vec<f64>>) {
        let (nr, nc) = (plan.fft.rows(), plan.fft.cols());
        let mut buf = vec![Complex64::new(0.0, 0.0); nr * nc];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let k = r * self.cols + c;
                buf[r * nc + c] = Complex64::new(a[k], b.map_or(0.0, |b| b[k]));
            }
        }
        let mut scratch = Vec::new();
        plan.fft.forward(&mut buf, &mut scratch);
        for (x, h) in buf.iter_mut().zip(plan.eta_hat.iter()) {
            *x *= h;
        }
        plan.fft.inverse(&mut buf, &mut scratch);
        let scale = 1.0 / (nr * nc) as f64;
        let at = |o: usize| buf[(o / self.cols) * nc + o % self.cols] * scale;
        let fa = self.site_offsets.iter().map(|&o| at(o).re).collect();
        let fb = b.map(|_| self.site_offsets.iter().map(|&o| at(o).im).collect());
        (fa, fb)
    }

    fn wrap(&self, values: Vec<f64>, seed: u64, replicate: u64) -> FieldSample {
        FieldSample {
            values,
            mesh_eps: self.graph.mesh_eps,
            seed,
            replicate,
            method: SamplerMethod::SqrtConvolution,
            kernel: self.sqrt.kernel,
        }
    }

    pub fn sample(&self, seed: u64, replicate: u64) -> FieldSample {
        let noise = self.noise(seed, replicate);
        let values = match &self.fft {
            Some(plan) => self.convolve_fft(plan, &noise, None).0,
            None => self.convolve_direct(&noise),
        };
        self.wrap(values, seed, replicate)
    }

    /// Replicates `2k` and `2k + 1`. On the FFT path both share one
    /// transform, so values can differ from [`Self::sample`] in the last bits;
    /// the Monte Carlo estimators always go through this function.
    pub fn sample_pair(&self, seed: u64, k: u64) -> (FieldSample, FieldSample) {
        let (ra, rb) = (2 * k, 2 * k + 1);
        match &self.fft {
            Some(plan) => {
                let (na, nb) = (self.noise(seed, ra), self.noise(seed, rb));
                let (fa, fb) = self.convolve_fft(plan, &na, Some(&nb));
                (self.wrap(fa, seed, ra), self.wrap(fb.expect("packed"), seed, rb))
            }
            None => (self.sample(seed, ra), self.sample(seed, rb)),
        }
    }

    /// Runs `f` on replicates `0..n` in parallel and returns the results in
    /// replicate order.
    pub fn map_replicates<T, F>(&self, seed: u64, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&FieldSample) -> T + Sync,
    {
        let pairs = n.div_ceil(2);
        let mut out: Vec<T> = (0..pairs as u64)
            .into_par_iter()
            .flat_map_iter(|k| {
                let (a, b) = self.sample_pair(seed, k);
                let first = f(&a);
                let second = (2 * k + 1 < n as u64).then(|| f(&b));
                std::iter::once(first).chain(second)
            })
            .collect();
        out.truncate(n);
        out
    }
}

/// Truncated Bargmann-Fock series
/// `f(x) = exp(-|x|^2 / 2) sum_{i, j <= N} a_ij x1^i x2^j / sqrt(i! j!)`.
#[derive(Debug, Clone)]
pub struct HermiteSampler {
    pub truncation: usize,
    points: Vec<[f64; 2]>,
    /// Per point, `u_i(x1)` and `u_j(x2)` for `i, j <= N`.
    basis: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Certified bound on the discarded series variance.
pub const HERMITE_TAIL_BOUND: f64 = 1e-10;

/// `sum_{i > n} e^{-lambda} lambda^i / i!`.
fn poisson_upper_tail(lambda: f64, n: usize) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut log_term = -lambda;
    for i in 1..=n + 1 {
        log_term += lambda.ln() - (i as f64).ln();
    }
    let mut sum = 0.0;
    let mut i = n + 1;
    loop {
        let t = log_term.exp();
        sum += t;
        i += 1;
        log_term += lambda.ln() - (i as f64).ln();
        if (i as f64) > lambda && t < 1e-18 * sum.max(1e-300) {
            break;
        }
        if i > n + 100_000 {
            break;
        }
    }
    sum.min(1.0)
}

/// Variance of the discarded part of the series at `x`:
/// `1 - P1 P2` with `P_k` the Poisson(`x_k^2`) distribution function at `N`.
pub fn hermite_tail_variance(x: [f64; 2], truncation: usize) -> f64 {
    let q1 = poisson_upper_tail(x[0] * x[0], truncation);
    let q2 = poisson_upper_tail(x[1] * x[1], truncation);
    q1 + q2 - q1 * q2
}

/// Smallest truncation whose tail variance at `x` is within the bound.
pub fn required_truncation(x: [f64; 2]) -> usize {
    let mut n = 0;
    while hermite_tail_variance(x, n) > HERMITE_TAIL_BOUND {
        n += 1;
    }
    n
}

fn hermite_basis(t: f64, n: usize) -> Vec<f64> {
    let mut u = Vec::with_capacity(n + 1);
    let mut cur = (-0.5 * t * t).exp();
    u.push(cur);
    for i in 1..=n {
        cur *= t / (i as f64).sqrt();
        u.push(cur);
    }
    u
}

impl HermiteSampler {
    pub fn new(truncation: usize, points: &[[f64; 2]]) -> Result<Self> {
        for &p in points {
            let tail = hermite_tail_variance(p, truncation);
            if tail > HERMITE_TAIL_BOUND {
                return Err(Error::OutsideCertifiedRadius {
                    radius: (p[0] * p[0] + p[1] * p[1]).sqrt(),
                    truncation,
                    required: required_truncation(p),
                });
            }
        }
        let basis = points
            .iter()
            .map(|p| (hermite_basis(p[0], truncation), hermite_basis(p[1], truncation)))
            .collect();
        Ok(HermiteSampler {
            truncation,
            points: points.to_vec(),
            basis,
        })
    }

    /// Uses the smallest truncation certified at every point.
    pub fn certified(points: &[[f64; 2]]) -> Result<Self> {
        let n = points.iter().map(|&p| required_truncation(p)).max().unwrap_or(0);
        Self::new(n, points)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Coefficients `a_ij`, row-major in `i`, from stream `replicate`.
    pub fn coefficients(&self, seed: u64, replicate: u64) -> Vec<f64> {
        let k = self.truncation + 1;
        let mut a = vec![0.0; k * k];
        fill_standard_normal(&mut stream_rng(seed, replicate), &mut a);
        a
    }

    pub fn sample(&self, seed: u64, replicate: u64) -> FieldSample {
        let a = self.coefficients(seed, replicate);
        let k = self.truncation + 1;
        let values = self
            .basis
            .iter()
            .map(|(b1, b2)| {
                (0..k)
                    .map(|i| b1[i] * a[i * k..(i + 1) * k].iter().zip(b2).map(|(x, y)| x * y).sum::<f64>())
                    .sum()
            })
            .collect();
        FieldSample {
            values,
            mesh_eps: f64::NAN,
            seed,
            replicate,
            method: SamplerMethod::HermiteSeries,
            kernel: Kernel::bargmann_fock(),
        }
    }
}

/// One probe pair of [`cross_validate_samplers`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub kappa: f64,
    pub conv_cov: f64,
    pub conv_stderr: f64,
    pub hermite_cov: f64,
    pub hermite_stderr: f64,
}

impl ProbeComparison {
    /// Largest of the three pairwise discrepancies measured in its own
    /// standard error.
    pub fn worst_z(&self) -> f64 {
        let z1 = (self.conv_cov - self.kappa).abs() / self.conv_stderr;
        let z2 = (self.hermite_cov - self.kappa).abs() / self.hermite_stderr;
        let z3 = (self.conv_cov - self.hermite_cov).abs() / self.conv_stderr.hypot(self.hermite_stderr);
        z1.max(z2).max(z3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub eps: f64,
    pub n: usize,
    pub seed: u64,
    pub hermite_truncation: usize,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    pub max_cov_discrepancy: f64,
    pub probes: Vec<ProbeComparison>,
    pub pass: bool,
}

/// Probe pairs on the face-centered lattice of spacing `eps` near the origin.
pub fn default_probe_pairs(eps: f64) -> Vec<([f64; 2], [f64; 2])> {
    let e = eps;
    let h = 0.5 * eps;
    vec![
        ([0.0, 0.0], [e, 0.0]),
        ([0.0, 0.0], [h, h]),
        ([0.0, 0.0], [0.0, 2.0 * e]),
        ([h, h], [-h, 3.0 * h]),
        ([e, e], [-e, e]),
        ([-e, 0.0], [e, 2.0 * e]),
        ([-h, -h], [3.0 * h, h]),
        ([0.0, -e], [0.0, 2.0 * e]),
    ]
}

/// Compares the convolution sampler on `[-5, 5]^2` with the Hermite series
/// at the origin and at probe pairs; `probes` defaults to
/// [`default_probe_pairs`]. The report does not depend on probe order.
pub fn cross_validate_samplers(
    kernel: &Kernel,
    eps: f64,
    n: usize,
    seed: u64,
    probes: Option<&[([f64; 2], [f64; 2])]>,
) -> Result<CrossValidationReport> {
    if !kernel.is_bargmann_fock() {
        return Err(Error::UnsupportedKernel(format!(
            "the Hermite series exists for the Bargmann-Fock kernel only, got {kernel}"
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData("need at least two replicates".into()));
    }
    let mut pairs: Vec<([f64; 2], [f64; 2])> = probes.map_or_else(|| default_probe_pairs(eps), |p| p.to_vec());
    pairs.sort_by(|a, b| {
        let ka = [a.0[0], a.0[1], a.1[0], a.1[1]];
        let kb = [b.0[0], b.0[1], b.1[0], b.1[1]];
        ka.iter().zip(kb.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });

    let half = 5.0;
    let conv = ConvolutionSampler::for_region(kernel, eps, Region::Rectangle(crate::lattice::Rect::new(-half, -half, 2.0 * half, 2.0 * half)))?;
    let mut points: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    for (x, y) in &pairs {
        for p in [*x, *y] {
            if !points.contains(&p) {
                points.push(p);
            }
        }
    }
    let mut sites = Vec::with_capacity(points.len());
    for &p in &points {
        let i = conv.graph().index_of_point(p)?.ok_or_else(|| {
            Error::InvalidParameter(format!("probe point ({}, {}) is outside the sampling window", p[0], p[1]))
        })?;
        sites.push(i);
    }
    let hermite = HermiteSampler::certified(&points)?;

    let conv_seed = crate::rng::derive_seed(seed, 1);
    let herm_seed = crate::rng::derive_seed(seed, 2);
    let conv_draws: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|r| conv.sample_sites(conv_seed, r, &sites))
        .collect();
    let herm_draws: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|r| hermite.sample(herm_seed, r).values)
        .collect();

    let column = |draws: &[Vec<f64>], k: usize| -> Vec<f64> { draws.iter().map(|d| d[k]).collect() };
    let (ks_statistic, ks_pvalue) = ks_two_sample(&column(&conv_draws, 0), &column(&herm_draws, 0));

    let idx = |p: [f64; 2]| points.iter().position(|&q| q == p).expect("probe point registered");
    let mut max_disc: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let comparisons: Vec<ProbeComparison> = pairs
        .iter()
        .map(|&(x, y)| {
            let (i, j) = (idx(x), idx(y));
            let (cc, cs) = covariance_with_stderr(&column(&conv_draws, i), &column(&conv_draws, j));
            let (hc, hs) = covariance_with_stderr(&column(&herm_draws, i), &column(&herm_draws, j));
            let kappa = kernel.kappa([y[0] - x[0], y[1] - x[1]]);
            let c = ProbeComparison {
                x,
                y,
                kappa,
                conv_cov: cc,
                conv_stderr: cs,
                hermite_cov: hc,
                hermite_stderr: hs,
            };
            max_disc = max_disc.max((cc - hc).abs());
            worst_z = worst_z.max(c.worst_z());
            c
        })
        .collect();
    Ok(CrossValidationReport {
        eps,
        n,
        seed,
        hermite_truncation: hermite.truncation,
        ks_statistic,
        ks_pvalue,
        max_cov_discrepancy: max_disc,
        probes: comparisons,
        pass: ks_pvalue > 0.01 && worst_z < 4.0,
    })
}

/// Mesh of the `Z^2` index used by the sampler for lattice spacing `eps`.
pub fn rotated_mesh(eps: f64) -> f64 {
    eps * FRAC_1_SQRT_2
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn hermite_tail_decreases_in_truncation(x in -3.0f64..3.0, y in -3.0f64..3.0, n in 0usize..60) {
            prop_assert!(hermite_tail_variance([x, y], n + 1) <= hermite_tail_variance([x, y], n));
        }
    }
}
