//! Experiment orchestration: threshold sweeps, logit curves, decay fits,
//! summability reports, the pivotal decay scan and run records.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{face_centered_sqrt_kernel, Kernel};
use crate::lattice::{build_region_graph, Region};
use crate::percolation::{
    connects_where, estimate_from_levels, r_sequence, Color, CrossingEstimator, Direction,
};
use crate::rng::derive_seed;
use crate::sampler::ConvolutionSampler;
use crate::stats::{weighted_linear_fit, MCEstimate, RunningStats};

/// Smallest replicate count for which standard errors are trusted.
pub const MIN_REPLICATES: usize = 100;

/// How the mesh is chosen for each `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsRule {
    Fixed(f64),
    /// `eps(R) = log(R)^(-1/3)`.
    LogCubeRoot,
}

impl EpsRule {
    pub fn eps(&self, r: f64) -> Result<f64> {
        match *self {
            EpsRule::Fixed(e) if e > 0.0 => Ok(e),
            EpsRule::Fixed(e) => Err(Error::InvalidParameter(format!("mesh must be positive, got {e}"))),
            EpsRule::LogCubeRoot if r > 1.0 => Ok(r.ln().powf(-1.0 / 3.0)),
            EpsRule::LogCubeRoot => Err(Error::InvalidParameter(format!("log rule needs R > 1, got {r}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kernel: Kernel,
    pub eps: EpsRule,
    pub r_grid: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub rho: f64,
    pub n: usize,
    pub seed: u64,
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_grid.is_empty() || self.p_grid.is_empty() {
            return Err(Error::InvalidParameter("R and p grids must be non-empty".into()));
        }
        if self.n < MIN_REPLICATES {
            return Err(Error::InvalidParameter(format!(
                "need at least {MIN_REPLICATES} replicates, got {}",
                self.n
            )));
        }
        if !(self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!("aspect must be positive, got {}", self.rho)));
        }
        for &r in &self.r_grid {
            self.eps.eps(r)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// SHA-256 of the JSON serialization of any config value.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A completed run. The wall time is only filled in on request so that
/// records stay byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub code_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub results: serde_json::Value,
    pub fits: serde_json::Value,
}

impl RunRecord {
    pub fn new<C: Serialize, R: Serialize>(command: &str, config: &C, results: &R) -> Result<Self> {
        Ok(RunRecord {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: None,
            results: serde_json::to_value(results)?,
            fits: serde_json::Value::Null,
        })
    }
}

/// One row of a crossing sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kernel: String,
    pub eps: f64,
    pub r: f64,
    pub rho: f64,
    pub p: f64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub seed: u64,
}

/// Black left-right crossing probabilities on `[0, rho R] x [0, R]` for every
/// `(R, p)` in the grids. All levels at one `R` share the same samples.
pub fn crossing_sweep(config: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.r_grid.len() * config.p_grid.len());
    for (ri, &r) in config.r_grid.iter().enumerate() {
        let eps = config.eps.eps(r)?;
        let seed = derive_seed(config.seed, ri as u64);
        let est = CrossingEstimator::new(&config.kernel, eps, r, config.rho)?;
        let levels = est.critical_levels(seed, config.n, Direction::LeftRight, Color::Black);
        for &p in &config.p_grid {
            let e = estimate_from_levels(&levels, p, Color::Black, seed);
            out.push(SweepPoint {
                kernel: config.kernel.to_string(),
                eps,
                r,
                rho: config.rho,
                p,
                n: e.n,
                mean: e.mean,
                stderr: e.stderr,
                seed,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPoint {
    pub r: f64,
    pub eps: f64,
    pub p: f64,
    pub g: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitCurve {
    pub points: Vec<LogitPoint>,
    /// Sweep points whose estimate was 0 or 1.
    pub censored: usize,
}

/// `log(P / (1 - P))` with the delta-method error `se / (P (1 - P))`.
pub fn logit(e: &MCEstimate) -> Option<(f64, f64)> {
    let p = e.mean;
    (p > 0.0 && p < 1.0).then(|| ((p / (1.0 - p)).ln(), e.stderr / (p * (1.0 - p))))
}

pub fn logit_curve(sweep: &[SweepPoint]) -> LogitCurve {
    let mut points = Vec::with_capacity(sweep.len());
    let mut censored = 0;
    for s in sweep {
        let e = MCEstimate {
            mean: s.mean,
            stderr: s.stderr,
            n: s.n,
            seed_stream: s.seed,
        };
        match logit(&e) {
            Some((g, stderr)) => points.push(LogitPoint {
                r: s.r,
                eps: s.eps,
                p: s.p,
                g,
                stderr,
            }),
            None => censored += 1,
        }
    }
    LogitCurve { points, censored }
}

/// Local slope of `g` near `p = 0` at one `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSlope {
    pub r: f64,
    pub eps: f64,
    pub slope: f64,
    pub stderr: f64,
    /// `P[Cross_p(rho R, R)]` at the second reported level.
    pub crossing_at: f64,
    pub crossing: MCEstimate,
}

/// Levels used for the local slope fit of `g` around zero.
pub const SLOPE_LEVELS: [f64; 5] = [-0.1, -0.05, 0.0, 0.05, 0.1];

/// For each `R`: the slope of `g` around `p = 0` (weighted fit over
/// [`SLOPE_LEVELS`], all from one set of samples) and the crossing
/// probability at `p_far`.
pub fn threshold_sharpness(kernel: &Kernel, eps: f64, r_grid: &[f64], rho: f64, p_far: f64, n: usize, seed: u64) -> Result<Vec<ThresholdSlope>> {
    let sqrt = Arc::new(face_centered_sqrt_kernel(kernel, eps)?);
    r_grid
        .iter()
        .enumerate()
        .map(|(ri, &r)| {
            let seed = derive_seed(seed, ri as u64);
            let est = CrossingEstimator::with_sqrt(sqrt.clone(), r, rho)?;
            let levels = est.critical_levels(seed, n, Direction::LeftRight, Color::Black);
            let mut x = Vec::new();
            let mut y = Vec::new();
            let mut w = Vec::new();
            for &p in &SLOPE_LEVELS {
                if let Some((g, se)) = logit(&estimate_from_levels(&levels, p, Color::Black, seed)) {
                    x.push(p);
                    y.push(g);
                    w.push(1.0 / (se * se).max(1e-300));
                }
            }
            if x.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "fewer than two uncensored levels near zero at R = {r}"
                )));
            }
            let (_, slope, stderr) = weighted_linear_fit(&x, &y, Some(&w));
            Ok(ThresholdSlope {
                r,
                eps,
                slope,
                stderr,
                crossing_at: p_far,
                crossing: estimate_from_levels(&levels, p_far, Color::Black, seed),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub p: f64,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub used: usize,
    pub censored: usize,
    pub decaying: bool,
}

/// Least-squares slope of `log(1 - P)` against `R` from failure estimates of
/// `1 - P[Cross_p(2R, R)]`. Only meaningful above the critical level, so
/// `p <= 0` is rejected.
pub fn decay_fit(p: f64, r_grid: &[f64], failures: &[MCEstimate]) -> Result<DecayFit> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "decay fit needs p > 0; at p = {p} the failure probability does not vanish"
        )));
    }
    if r_grid.len() != failures.len() {
        return Err(Error::InvalidParameter("R grid and estimates differ in length".into()));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (&r, f) in r_grid.iter().zip(failures) {
        if f.mean > 0.0 {
            x.push(r);
            y.push(f.mean.ln());
        }
    }
    let censored = r_grid.len() - x.len();
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} uncensored failure estimates; need two",
            x.len()
        )));
    }
    let (intercept, slope, slope_stderr) = weighted_linear_fit(&x, &y, None);
    Ok(DecayFit {
        p,
        slope,
        intercept,
        slope_stderr,
        used: x.len(),
        censored,
        decaying: slope < 0.0,
    })
}

/// Failure estimates `1 - P[Cross_p(2R, R)]` over an `R` grid.
pub fn failure_estimates(kernel: &Kernel, eps: f64, r_grid: &[f64], p: f64, n: usize, seed: u64) -> Result<Vec<MCEstimate>> {
    let sqrt = Arc::new(face_centered_sqrt_kernel(kernel, eps)?);
    r_grid
        .iter()
        .enumerate()
        .map(|(ri, &r)| {
            let seed = derive_seed(seed, ri as u64);
            let est = CrossingEstimator::with_sqrt(sqrt.clone(), r, 2.0)?;
            let levels = est.critical_levels(seed, n, Direction::LeftRight, Color::Black);
            let c = estimate_from_levels(&levels, p, Color::Black, seed);
            Ok(MCEstimate { mean: 1.0 - c.mean, ..c })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummabilityRow {
    pub k: usize,
    pub scale: f64,
    pub failure: MCEstimate,
    pub partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub p: f64,
    pub eps: f64,
    pub rows: Vec<SummabilityRow>,
    pub decreasing: bool,
}

/// Partial sums of `1 - P[Cross_p(2^(k+1), 2^k)]` over the `k` grid.
pub fn summability_report(kernel: &Kernel, eps: f64, p: f64, ks: &[usize], n: usize, seed: u64) -> Result<SummabilityReport> {
    let scales: Vec<f64> = ks.iter().map(|&k| 2f64.powi(k as i32)).collect();
    let failures = failure_estimates(kernel, eps, &scales, p, n, seed)?;
    let mut sum = 0.0;
    let rows: Vec<SummabilityRow> = ks
        .iter()
        .zip(&scales)
        .zip(failures)
        .map(|((&k, &scale), failure)| {
            sum += failure.mean;
            SummabilityRow {
                k,
                scale,
                failure,
                partial_sum: sum,
            }
        })
        .collect();
    let decreasing = rows.windows(2).all(|w| w[1].failure.mean < w[0].failure.mean);
    Ok(SummabilityReport { p, eps, rows, decreasing })
}

/// One step of the renormalization recursion: `a_k` against `49 a_{k-1}^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionRow {
    pub k: usize,
    pub r: f64,
    pub failure: MCEstimate,
    /// `1 - P[Cross_p(2 r_k, r_k)] + exp(-r_k / 10)`.
    pub a: f64,
    /// `49 a_{k-1}^2`; absent at the first scale.
    pub bound_from_previous: Option<f64>,
}

/// Both sides of `a_{k+1} <= 49 a_k^2` along `r_k`, reported and not
/// asserted.
pub fn recursion_report(kernel: &Kernel, eps: f64, p: f64, k_max: usize, n: usize, seed: u64) -> Result<Vec<RecursionRow>> {
    let r = r_sequence(k_max);
    let failures = failure_estimates(kernel, eps, &r, p, n, seed)?;
    let mut prev: Option<f64> = None;
    Ok(r
        .iter()
        .zip(failures)
        .enumerate()
        .map(|(k, (&r, failure))| {
            let a = failure.mean + (-r / 10.0).exp();
            let row = RecursionRow {
                k,
                r,
                failure,
                a,
                bound_from_previous: prev.map(|x| 49.0 * x * x),
            };
            prev = Some(a);
            row
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotalRow {
    pub r: f64,
    pub site: [f64; 2],
    pub estimate: MCEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotalDecay {
    pub eps: f64,
    pub p: f64,
    pub rows: Vec<PivotalRow>,
    pub non_increasing: bool,
    /// Slope of `log P` against `log R`; absent when an estimate is zero.
    pub loglog_slope: Option<f64>,
}

/// `P[site x is pivotal for Cross_p(2R, R) | f(x) = -p]` with `x` the site
/// nearest the centre of `[0, 2R] x [0, R]`. The condition is imposed
/// exactly: `f + (-p - f(x)) kappa(. - x)`.
pub fn pivotal_decay_scan(kernel: &Kernel, eps: f64, r_grid: &[f64], p: f64, n: usize, seed: u64) -> Result<PivotalDecay> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    let sqrt = Arc::new(face_centered_sqrt_kernel(kernel, eps)?);
    let mut rows = Vec::with_capacity(r_grid.len());
    for (ri, &r) in r_grid.iter().enumerate() {
        let graph = Arc::new(build_region_graph(eps, Region::rectangle(2.0 * r, r))?);
        let sampler = ConvolutionSampler::new(sqrt.clone(), graph.clone())?;
        let x = graph.center_site();
        let px = graph.position(x);
        let column: Vec<f64> = graph
            .positions()
            .iter()
            .map(|q| kernel.kappa([q[0] - px[0], q[1] - px[1]]))
            .collect();
        let (from, to) = Direction::LeftRight.sides();
        let seed = derive_seed(seed, ri as u64);
        let hits = sampler.map_replicates(seed, n, |f| {
            let shift = -p - f.values[x];
            let black: Vec<bool> = f
                .values
                .iter()
                .zip(&column)
                .enumerate()
                .map(|(i, (v, c))| i == x || v + shift * c >= -p)
                .collect();
            let with_x = connects_where(&graph, |i| black[i], from, to);
            with_x && !connects_where(&graph, |i| i != x && black[i], from, to)
        });
        let stats: RunningStats = hits.iter().map(|&h| h as u8 as f64).collect();
        rows.push(PivotalRow {
            r,
            site: px,
            estimate: MCEstimate::from_stats(&stats, seed),
        });
    }
    let non_increasing = rows.windows(2).all(|w| w[1].estimate.mean <= w[0].estimate.mean);
    let loglog_slope = if rows.len() >= 2 && rows.iter().all(|row| row.estimate.mean > 0.0) {
        let x: Vec<f64> = rows.iter().map(|row| row.r.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|row| row.estimate.mean.ln()).collect();
        Some(weighted_linear_fit(&x, &y, None).1)
    } else {
        None
    };
    Ok(PivotalDecay {
        eps,
        p,
        rows,
        non_increasing,
        loglog_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(mean: f64) -> MCEstimate {
        MCEstimate {
            mean,
            stderr: 0.01,
            n: 1000,
            seed_stream: 0,
        }
    }

    #[test]
    fn logit_of_half_and_inverse_logit_of_one() {
        assert_eq!(logit(&est(0.5)).unwrap().0, 0.0);
        let e = std::f64::consts::E;
        assert!((logit(&est(e / (1.0 + e))).unwrap().0 - 1.0).abs() < 1e-12);
        let (_, se) = logit(&est(0.5)).unwrap();
        assert!((se - 0.04).abs() < 1e-12);
        assert!(logit(&est(0.0)).is_none() && logit(&est(1.0)).is_none());
    }

    #[test]
    fn exact_exponential_fits_exactly() {
        let rs = [8.0, 12.0, 16.0, 20.0];
        let f: Vec<MCEstimate> = rs.iter().map(|r: &f64| est((-0.3 * r).exp())).collect();
        let fit = decay_fit(0.5, &rs, &f).unwrap();
        assert!((fit.slope + 0.3).abs() < 1e-6);
        assert!(fit.decaying && fit.censored == 0);
    }

    #[test]
    fn decay_fit_preconditions() {
        let rs = [1.0, 2.0, 3.0];
        let f = [est(0.5), est(0.0), est(0.0)];
        assert!(matches!(decay_fit(0.0, &rs, &f), Err(Error::InvalidParameter(_))));
        assert!(matches!(decay_fit(0.5, &rs, &f), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn censored_points_are_counted() {
        let pt = |mean| SweepPoint {
            kernel: "bf".into(),
            eps: 0.5,
            r: 10.0,
            rho: 2.0,
            p: 0.0,
            n: 100,
            mean,
            stderr: 0.05,
            seed: 1,
        };
        let c = logit_curve(&[pt(0.0), pt(0.4), pt(1.0)]);
        assert_eq!(c.censored, 2);
        assert_eq!(c.points.len(), 1);
    }

    #[test]
    fn config_validation_and_hash() {
        let mut c = ExperimentConfig {
            kernel: Kernel::bargmann_fock(),
            eps: EpsRule::Fixed(0.5),
            r_grid: vec![2.0],
            p_grid: vec![0.0],
            rho: 1.0,
            n: 100,
            seed: 1,
            output: None,
        };
        assert!(c.validate().is_ok());
        let h = c.hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, c.clone().hash());
        c.n = 99;
        assert!(c.validate().is_err());
        assert_ne!(h, c.hash());
        c.n = 100;
        c.p_grid.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_rule_mesh() {
        let e = EpsRule::LogCubeRoot.eps(std::f64::consts::E.powi(8)).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
        assert!(EpsRule::LogCubeRoot.eps(1.0).is_err());
    }

    #[test]
    fn sweep_is_monotone_in_p() {
        let c = ExperimentConfig {
            kernel: Kernel::bargmann_fock(),
            eps: EpsRule::Fixed(0.5),
            r_grid: vec![3.0],
            p_grid: vec![-0.5, 0.0, 0.5],
            rho: 1.0,
            n: 200,
            seed: 5,
            output: None,
        };
        let s = crossing_sweep(&c).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s[0].mean <= s[1].mean && s[1].mean <= s[2].mean);
    }
}
