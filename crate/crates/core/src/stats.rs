//! Streaming moments and small statistical helpers.

use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate: mean, standard error and replicate count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed_stream: u64,
}

impl MCEstimate {
    pub fn from_stats(stats: &RunningStats, seed_stream: u64) -> Self {
        MCEstimate {
            mean: stats.mean(),
            stderr: stats.stderr(),
            n: stats.count() as usize,
            seed_stream,
        }
    }

    /// Estimate of a probability from a hit count.
    pub fn from_hits(hits: usize, n: usize, seed_stream: u64) -> Self {
        let mut s = RunningStats::new();
        s.push_bernoulli(hits as u64, n as u64);
        Self::from_stats(&s, seed_stream)
    }

    pub fn within(&self, target: f64, k_sigma: f64) -> bool {
        (self.mean - target).abs() <= k_sigma * self.stderr
    }
}

/// Welford accumulator. `merge` is associative so replicate batches can be
/// reduced in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Adds `hits` ones and `n - hits` zeros in one step.
    pub fn push_bernoulli(&mut self, hits: u64, n: u64) {
        if n == 0 {
            return;
        }
        let mean = hits as f64 / n as f64;
        let m2 = hits as f64 * (1.0 - mean).powi(2) + (n - hits) as f64 * mean * mean;
        self.merge(&RunningStats { n, mean, m2 });
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Replicates per parallel work item in [`parallel_moments`].
pub const CHUNK: usize = 1024;

/// Runs `f(replicate, out)` for replicates `0..n`, each filling `width`
/// observables, and accumulates their moments. Chunks are reduced in a fixed
/// order, so results do not depend on the thread count.
pub fn parallel_moments<F>(n: usize, width: usize, f: F) -> Vec<RunningStats>
where
    F: Fn(u64, &mut [f64]) + Sync,
{
    use rayon::prelude::*;
    let chunks: Vec<Vec<RunningStats>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![RunningStats::new(); width];
            let mut out = vec![0.0; width];
            for r in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(r as u64, &mut out);
                for (a, &x) in acc.iter_mut().zip(out.iter()) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![RunningStats::new(); width];
    for c in &chunks {
        for (t, s) in total.iter_mut().zip(c) {
            t.merge(s);
        }
    }
    total
}

/// Empirical covariance of paired samples with the standard error of the
/// estimate (from the sample variance of centered products).
pub fn covariance_with_stderr(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: RunningStats = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    (prods.mean() * n / (n - 1.0), prods.stderr())
}

/// Two-sample Kolmogorov-Smirnov test. Returns `(D, p_value)` using the
/// asymptotic Kolmogorov distribution with the usual small-sample correction.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    (d, kolmogorov_q(lambda))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Ordinary least squares fit `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (a, b, _) = weighted_linear_fit(x, y, None);
    (a, b)
}

/// Weighted least squares `y = a + b x`. Returns `(a, b, stderr_b)`; the slope
/// error uses the weights as inverse variances when given, the residual
/// scatter otherwise.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: Option<&[f64]>) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let ones = vec![1.0; n];
    let w = w.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (a - mx) * (c - my))
        .sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let se = if w.as_ptr() == ones.as_ptr() {
        if n > 2 {
            let rss: f64 = x
                .iter()
                .zip(y)
                .map(|(a, c)| (c - icept - slope * a).powi(2))
                .sum();
            (rss / (n - 2) as f64 / sxx).sqrt()
        } else {
            0.0
        }
    } else {
        (1.0 / sxx).sqrt()
    };
    (icept, slope, se)
}
