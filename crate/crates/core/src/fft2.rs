//! Minimal 2-D complex FFT on row-major buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Unnormalized forward transform, `sum_x a(x) exp(-2 pi i <k, x> / n)`.
    pub fn forward(&self, data: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.run(data, scratch, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse transform (positive exponent, no `1/n` factor).
    pub fn inverse(&self, data: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.run(data, scratch, &self.row_inv, &self.col_inv);
    }

    fn run(
        &self,
        data: &mut [Complex64],
        scratch: &mut Vec<Complex64>,
        row: &Arc<dyn Fft<f64>>,
        col: &Arc<dyn Fft<f64>>,
    ) {
        assert_eq!(data.len(), self.rows * self.cols);
        row.process(data);
        scratch.resize(data.len(), Complex64::new(0.0, 0.0));
        transpose(data, scratch, self.rows, self.cols);
        col.process(scratch);
        transpose(scratch, data, self.cols, self.rows);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Smallest `m >= n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}
