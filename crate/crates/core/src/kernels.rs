//! Stationary covariance kernels and their lattice convolution square roots.
//!
//! Fourier convention: `kappa_hat(xi) = (2 pi)^-2 \int exp(-i <xi, x>) kappa(x) dx`,
//! so that `kappa(x) = \int exp(i <xi, x>) kappa_hat(xi) dxi`.
//!
//! For a mesh `eps`, the square root `eta` is the family of Fourier
//! coefficients of
//!
//! ```text
//! lambda(xi) = sqrt( sum_{m in Z^2} kappa_hat((xi - 2 pi m) / eps) )
//! eta(m)     = (1 / (2 pi eps)) \int_{T^2} exp(i <m, xi>) lambda(xi) dxi
//! ```
//!
//! which satisfies `(eta * eta)(m) = kappa(eps m)` on `Z^2`. The torus
//! integral is evaluated by trapezoidal quadrature on a uniform `N x N` grid,
//! realised as one inverse FFT.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft2::{next_fast_len, Fft2};

/// Target accuracy of `eta * eta` against `kappa(eps m)`.
pub const CONV_TOLERANCE: f64 = 1e-6;
/// Largest quadrature grid tried before giving up.
pub const MAX_GRID_ORDER: usize = 4096;
/// Relative mass of the discarded tail when choosing the stencil radius.
pub const TAIL_TOLERANCE: f64 = 1e-8;
/// Relative size of an image shell below which the periodisation stops.
const IMAGE_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelName {
    /// `kappa(x) = exp(-|x|^2 / 2)`.
    BargmannFock,
    /// `kappa(x) = ((1 + x1^2)(1 + x2^2))^-n`.
    Rational(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Symmetry {
    pub even: bool,
    pub quarter_turn_invariant: bool,
    pub axis_reflection_invariant: bool,
    /// Full rotation invariance (only the Bargmann-Fock kernel).
    pub rotation_invariant: bool,
}

/// A normalized stationary covariance `kappa` with `kappa(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Kernel {
    pub name: KernelName,
    /// Polynomial decay exponent; infinite for the Gaussian kernel.
    pub alpha: f64,
    pub symmetry: Symmetry,
}

impl Kernel {
    pub fn bargmann_fock() -> Self {
        Kernel {
            name: KernelName::BargmannFock,
            alpha: f64::INFINITY,
            symmetry: Symmetry {
                even: true,
                quarter_turn_invariant: true,
                axis_reflection_invariant: true,
                rotation_invariant: true,
            },
        }
    }

    pub fn rational(n: u32) -> Result<Self> {
        if n == 0 || n > 20 {
            return Err(Error::InvalidParameter(format!(
                "rational kernel order must be in 1..=20, got {n}"
            )));
        }
        Ok(Kernel {
            name: KernelName::Rational(n),
            alpha: 2.0 * n as f64,
            symmetry: Symmetry {
                even: true,
                quarter_turn_invariant: true,
                axis_reflection_invariant: true,
                rotation_invariant: false,
            },
        })
    }

    pub fn is_bargmann_fock(&self) -> bool {
        self.name == KernelName::BargmannFock
    }

    /// `kappa(x)`.
    pub fn kappa(&self, x: [f64; 2]) -> f64 {
        eval_kappa(self, x)
    }

    /// `kappa(R x)` where `R` is the frame rotation.
    pub fn kappa_in(&self, frame: Frame, z: [f64; 2]) -> f64 {
        eval_kappa(self, frame.to_plane(z))
    }

    /// `log kappa_hat(R xi)` in the given frame.
    pub fn log_kappa_hat_in(&self, frame: Frame, xi: [f64; 2]) -> f64 {
        log_kappa_hat(self, frame.to_plane(xi))
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name {
            KernelName::BargmannFock => write!(f, "bf"),
            KernelName::Rational(n) => write!(f, "rational:{n}"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bf" | "bargmann_fock" | "bargmann-fock" => Ok(Kernel::bargmann_fock()),
            _ => {
                let n = s
                    .strip_prefix("rational:")
                    .or_else(|| s.strip_prefix("rational"))
                    .and_then(|t| t.parse::<u32>().ok())
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown kernel '{s}'")))?;
                Kernel::rational(n)
            }
        }
    }
}

impl From<Kernel> for String {
    fn from(k: Kernel) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for Kernel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Coordinate frame in which a square root table is indexed.
///
/// `FaceCentered` is the `Z^2` indexing of the face-centered square lattice:
/// index `(u, v)` sits at `R (u, v)` with `R` the rotation by `pi / 4`, so the
/// covariance between indices is `kappa(mesh * R (m1, m2))` with
/// `mesh = eps / sqrt(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    Axis,
    FaceCentered,
}

impl Frame {
    pub fn to_plane(self, z: [f64; 2]) -> [f64; 2] {
        match self {
            Frame::Axis => z,
            Frame::FaceCentered => [
                FRAC_1_SQRT_2 * (z[0] - z[1]),
                FRAC_1_SQRT_2 * (z[0] + z[1]),
            ],
        }
    }
}

pub fn eval_kappa(kernel: &Kernel, x: [f64; 2]) -> f64 {
    match kernel.name {
        KernelName::BargmannFock => (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp(),
        KernelName::Rational(n) => {
            let base = 1.0 / ((1.0 + x[0] * x[0]) * (1.0 + x[1] * x[1]));
            base.powi(n as i32)
        }
    }
}

pub fn eval_kappa_hat(kernel: &Kernel, xi: [f64; 2]) -> Result<f64> {
    Ok(log_kappa_hat(kernel, xi).exp())
}

/// Natural log of `kappa_hat`; finite everywhere since `kappa_hat > 0`.
pub fn log_kappa_hat(kernel: &Kernel, xi: [f64; 2]) -> f64 {
    match kernel.name {
        KernelName::BargmannFock => -0.5 * (xi[0] * xi[0] + xi[1] * xi[1]) - (2.0 * PI).ln(),
        KernelName::Rational(n) => log_rational_hat_1d(n, xi[0]) + log_rational_hat_1d(n, xi[1]),
    }
}

/// One-dimensional factor of the rational kernel transform:
/// `(1 / 2 pi) \int exp(-i w t) (1 + t^2)^-n dt`
/// `= exp(-|w|) / (2^(2n-1) (n-1)!) * sum_k (2n-2-k)! / (k! (n-1-k)!) (2|w|)^k`.
fn log_rational_hat_1d(n: u32, w: f64) -> f64 {
    let a = w.abs();
    let n = n as usize;
    let fact = |k: usize| (1..=k).fold(1.0f64, |acc, i| acc * i as f64);
    let mut poly = 0.0;
    for k in 0..n {
        poly += fact(2 * n - 2 - k) / (fact(k) * fact(n - 1 - k)) * (2.0 * a).powi(k as i32);
    }
    let norm = 2f64.powi(2 * n as i32 - 1) * fact(n - 1);
    -a + poly.ln() - norm.ln()
}

/// `log sum_m kappa_hat((xi - 2 pi m) / mesh)`, summed over square shells of
/// images until a shell adds less than `IMAGE_TOLERANCE` of the total.
fn log_symbol(kernel: &Kernel, frame: Frame, mesh: f64, xi: [f64; 2]) -> f64 {
    let inv = 1.0 / mesh;
    let term = |m1: i64, m2: i64| {
        kernel.log_kappa_hat_in(
            frame,
            [
                (xi[0] - 2.0 * PI * m1 as f64) * inv,
                (xi[1] - 2.0 * PI * m2 as f64) * inv,
            ],
        )
    };
    let mut acc = LogSum::new(term(0, 0));
    let mut s: i64 = 1;
    loop {
        let mut shell = LogSum::empty();
        for k in -s..=s {
            shell.add(term(k, s));
            shell.add(term(k, -s));
        }
        for k in (-s + 1)..s {
            shell.add(term(s, k));
            shell.add(term(-s, k));
        }
        let done = s >= 1 && shell.value() < acc.value() + IMAGE_TOLERANCE.ln();
        acc.merge(&shell);
        if done || s > 10_000 {
            return acc.value();
        }
        s += 1;
    }
}

#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn empty() -> Self {
        LogSum { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    fn new(x: f64) -> Self {
        LogSum { max: x, sum: 1.0 }
    }

    fn add(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn merge(&mut self, other: &LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max <= self.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// Full periodic quadrature table of `eta` on an `n x n` grid, row-major with
/// wrap-around indices, plus the minimum of the log symbol over the grid.
pub(crate) fn quadrature_table(
    kernel: &Kernel,
    frame: Frame,
    mesh: f64,
    n: usize,
) -> (Vec<f64>, f64) {
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    let mut min_log = f64::INFINITY;
    let centered = |j: usize| {
        let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        2.0 * PI * k / n as f64
    };
    for j1 in 0..n {
        let x1 = centered(j1);
        for j2 in 0..n {
            let ls = log_symbol(kernel, frame, mesh, [x1, centered(j2)]);
            min_log = min_log.min(ls);
            buf[j1 * n + j2] = Complex64::new((0.5 * ls).exp(), 0.0);
        }
    }
    Fft2::new(n, n).inverse(&mut buf, &mut Vec::new());
    let scale = 2.0 * PI / (mesh * (n * n) as f64);
    (buf.iter().map(|c| c.re * scale).collect(), min_log)
}

/// Truncated convolution square root `eta` on `|m|_inf <= support_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqrtKernel {
    pub kernel: Kernel,
    pub frame: Frame,
    /// Spacing of the `Z^2` index in the plane.
    pub mesh_eps: f64,
    pub support_radius: usize,
    pub grid_order: usize,
    /// Row-major `(2M+1)^2` table; entry `(m1 + M) * (2M+1) + (m2 + M)`.
    pub table: Vec<f64>,
    pub sum_abs: f64,
    /// `max_{|m|_inf <= M/2} |(eta * eta)(m) - kappa(mesh R m)|`.
    pub conv_residual: f64,
    /// Mass of the quadrature table outside the stencil.
    pub tail_mass: f64,
    /// Minimum over the quadrature grid of the log periodised spectral density.
    pub min_log_symbol: f64,
}

impl SqrtKernel {
    pub fn width(&self) -> usize {
        2 * self.support_radius + 1
    }

    pub fn get(&self, m1: i64, m2: i64) -> f64 {
        let r = self.support_radius as i64;
        if m1.abs() > r || m2.abs() > r {
            return 0.0;
        }
        let w = self.width() as i64;
        self.table[((m1 + r) * w + (m2 + r)) as usize]
    }

    /// Lattice spacing of the face-centered lattice this table serves.
    pub fn lattice_eps(&self) -> f64 {
        match self.frame {
            Frame::Axis => self.mesh_eps,
            Frame::FaceCentered => self.mesh_eps * std::f64::consts::SQRT_2,
        }
    }

    /// Table holding a unit mass at the origin (`eta = delta_0`).
    pub fn identity(kernel: Kernel, frame: Frame, mesh_eps: f64) -> Self {
        SqrtKernel {
            kernel,
            frame,
            mesh_eps,
            support_radius: 0,
            grid_order: 1,
            table: vec![1.0],
            sum_abs: 1.0,
            conv_residual: f64::NAN,
            tail_mass: 0.0,
            min_log_symbol: f64::NAN,
        }
    }

    /// Cache key `(kernel, mesh, frame, M, grid order)`.
    pub fn cache_key(&self) -> String {
        cache_key(&self.kernel, self.frame, self.mesh_eps, self.support_radius, self.grid_order)
    }
}

pub fn cache_key(kernel: &Kernel, frame: Frame, mesh: f64, radius: usize, grid: usize) -> String {
    let frame = match frame {
        Frame::Axis => "axis",
        Frame::FaceCentered => "fc",
    };
    format!("{}_{frame}_{:016x}_M{radius}_N{grid}", kernel.to_string().replace(':', ""), mesh.to_bits())
}

/// Square root of `kappa(eps m)` on `Z^2` (axis frame).
///
/// `grid_order` is the starting quadrature resolution; it is doubled until the
/// convolution residual falls below [`CONV_TOLERANCE`] or [`MAX_GRID_ORDER`]
/// is reached.
pub fn build_sqrt_kernel(
    kernel: &Kernel,
    eps: f64,
    grid_order: usize,
    support_radius: usize,
) -> Result<SqrtKernel> {
    build_sqrt_kernel_in_frame(kernel, Frame::Axis, eps, grid_order, support_radius)
}

pub fn build_sqrt_kernel_in_frame(
    kernel: &Kernel,
    frame: Frame,
    mesh: f64,
    grid_order: usize,
    support_radius: usize,
) -> Result<SqrtKernel> {
    if !(mesh > 0.0 && mesh.is_finite()) {
        return Err(Error::InvalidParameter(format!("mesh must be positive, got {mesh}")));
    }
    if support_radius == 0 {
        return Err(Error::InvalidParameter("support radius must be positive".into()));
    }
    if !grid_order.is_power_of_two() || grid_order < 2 * support_radius {
        return Err(Error::InvalidParameter(format!(
            "grid order {grid_order} must be a power of two >= 2 * support radius ({})",
            2 * support_radius
        )));
    }
    let mut n = grid_order;
    loop {
        let sk = assemble(kernel, frame, mesh, n, support_radius);
        if sk.conv_residual < CONV_TOLERANCE {
            return Ok(sk);
        }
        if n >= MAX_GRID_ORDER {
            return Err(Error::QuadratureNotConverged {
                residual: sk.conv_residual,
                grid_order: n,
            });
        }
        n *= 2;
    }
}

fn assemble(kernel: &Kernel, frame: Frame, mesh: f64, n: usize, radius: usize) -> SqrtKernel {
    let (full, min_log_symbol) = quadrature_table(kernel, frame, mesh, n);
    let r = radius as i64;
    let w = 2 * radius + 1;
    let at = |m1: i64, m2: i64| full[(m1.rem_euclid(n as i64) as usize) * n + m2.rem_euclid(n as i64) as usize];
    let mut table = vec![0.0; w * w];
    for m1 in -r..=r {
        for m2 in -r..=r {
            // IEEE addition commutes, so m and -m receive bit-identical values
            let v = 0.5 * (at(m1, m2) + at(-m1, -m2));
            table[((m1 + r) as usize) * w + (m2 + r) as usize] = v;
        }
    }
    let sum_abs: f64 = table.iter().map(|v| v.abs()).sum();
    let full_abs: f64 = full.iter().map(|v| v.abs()).sum();
    let tail_mass = (full_abs - sum_abs).max(0.0);
    let mut sk = SqrtKernel {
        kernel: *kernel,
        frame,
        mesh_eps: mesh,
        support_radius: radius,
        grid_order: n,
        table,
        sum_abs,
        conv_residual: f64::NAN,
        tail_mass,
        min_log_symbol,
    };
    sk.conv_residual = convolution_residual(&sk, radius / 2);
    sk
}

/// Self-convolution of the truncated table evaluated through a zero-padded
/// FFT; returns the `(2 R + 1)^2` block around the origin, row-major.
pub fn self_convolution(sk: &SqrtKernel, range: usize) -> Vec<f64> {
    let m = sk.support_radius;
    let len = next_fast_len(2 * m + range + 1);
    let w = sk.width();
    let mut buf = vec![Complex64::new(0.0, 0.0); len * len];
    for i in 0..w {
        for j in 0..w {
            let a = (i as i64 - m as i64).rem_euclid(len as i64) as usize;
            let b = (j as i64 - m as i64).rem_euclid(len as i64) as usize;
            buf[a * len + b] = Complex64::new(sk.table[i * w + j], 0.0);
        }
    }
    let plan = Fft2::new(len, len);
    let mut scratch = Vec::new();
    plan.forward(&mut buf, &mut scratch);
    for c in buf.iter_mut() {
        *c = *c * *c;
    }
    plan.inverse(&mut buf, &mut scratch);
    let scale = 1.0 / (len * len) as f64;
    let r = range as i64;
    let ow = 2 * range + 1;
    let mut out = vec![0.0; ow * ow];
    for m1 in -r..=r {
        for m2 in -r..=r {
            let a = m1.rem_euclid(len as i64) as usize;
            let b = m2.rem_euclid(len as i64) as usize;
            out[((m1 + r) as usize) * ow + (m2 + r) as usize] = buf[a * len + b].re * scale;
        }
    }
    out
}

fn convolution_residual(sk: &SqrtKernel, range: usize) -> f64 {
    let conv = self_convolution(sk, range);
    let r = range as i64;
    let ow = 2 * range + 1;
    let mut worst: f64 = 0.0;
    for m1 in -r..=r {
        for m2 in -r..=r {
            let target = sk
                .kernel
                .kappa_in(sk.frame, [sk.mesh_eps * m1 as f64, sk.mesh_eps * m2 as f64]);
            let got = conv[((m1 + r) as usize) * ow + (m2 + r) as usize];
            worst = worst.max((got - target).abs());
        }
    }
    worst
}

/// Chooses the quadrature grid and the smallest stencil radius whose
/// discarded tail is below [`TAIL_TOLERANCE`] of the total mass, then builds
/// the table.
pub fn build_auto(kernel: &Kernel, frame: Frame, mesh: f64) -> Result<SqrtKernel> {
    build_auto_with_min_radius(kernel, frame, mesh, 1)
}

pub fn build_auto_with_min_radius(
    kernel: &Kernel,
    frame: Frame,
    mesh: f64,
    min_radius: usize,
) -> Result<SqrtKernel> {
    if !(mesh > 0.0 && mesh.is_finite()) {
        return Err(Error::InvalidParameter(format!("mesh must be positive, got {mesh}")));
    }
    let mut n = 64usize.max((4 * min_radius).next_power_of_two());
    loop {
        let (full, _) = quadrature_table(kernel, frame, mesh, n);
        let radius = tail_radius(&full, n).max(min_radius);
        if 4 * radius <= n {
            return build_sqrt_kernel_in_frame(kernel, frame, mesh, n, radius);
        }
        if n >= MAX_GRID_ORDER {
            return Err(Error::ResourceCap(format!(
                "stencil radius {radius} needs a quadrature grid above {MAX_GRID_ORDER}"
            )));
        }
        n *= 2;
    }
}

/// Smallest `M` such that the mass outside `|m|_inf <= M` is below the tail
/// tolerance.
fn tail_radius(full: &[f64], n: usize) -> usize {
    let half = n / 2;
    let mut shell = vec![0.0; half + 1];
    for j1 in 0..n {
        let m1 = if j1 <= half { j1 } else { n - j1 };
        for j2 in 0..n {
            let m2 = if j2 <= half { j2 } else { n - j2 };
            shell[m1.max(m2)] += full[j1 * n + j2].abs();
        }
    }
    let total: f64 = shell.iter().sum();
    let mut tail = total;
    for (m, s) in shell.iter().enumerate() {
        tail -= s;
        if tail < TAIL_TOLERANCE * total {
            return m.max(1);
        }
    }
    half
}

/// Square root table for the face-centered lattice of spacing `eps`, indexed
/// by the rotated `Z^2` coordinates of [`crate::lattice`].
pub fn face_centered_sqrt_kernel(kernel: &Kernel, eps: f64) -> Result<SqrtKernel> {
    build_auto(kernel, Frame::FaceCentered, eps * FRAC_1_SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpNormRow {
    pub eps: f64,
    pub sum_abs: f64,
    /// `sum_abs * eps / log(1 / eps)`.
    pub ratio: f64,
}

/// `sum |eta_eps|` (the infinity operator norm of the square root) across a
/// grid of meshes.
pub fn op_norm_scan(kernel: &Kernel, eps_grid: &[f64]) -> Result<Vec<OpNormRow>> {
    eps_grid
        .iter()
        .map(|&eps| {
            let sk = build_auto(kernel, Frame::Axis, eps)?;
            Ok(OpNormRow {
                eps,
                sum_abs: sk.sum_abs,
                ratio: sk.sum_abs * eps / (1.0 / eps).ln(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_closed_forms() {
        let bf = Kernel::bargmann_fock();
        assert_eq!(bf.kappa([0.0, 0.0]), 1.0);
        assert!((bf.kappa([1.0, 0.0]) - 0.606_530_659_712_633_4).abs() < 1e-15);
        let r1 = Kernel::rational(1).unwrap();
        assert!((r1.kappa([1.0, 1.0]) - 0.25).abs() < 1e-15);
        assert_eq!(r1.kappa([0.0, 0.0]), 1.0);
    }

    #[test]
    fn kappa_hat_values() {
        let bf = Kernel::bargmann_fock();
        let h0 = eval_kappa_hat(&bf, [0.0, 0.0]).unwrap();
        assert!((h0 - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let h1 = eval_kappa_hat(&bf, [1.0, 0.0]).unwrap();
        assert!((h1 - 0.096_532_352_630_053_9).abs() < 1e-12);
        for k in [bf, Kernel::rational(1).unwrap(), Kernel::rational(3).unwrap()] {
            for xi in [[0.3, -1.2], [2.0, 0.7], [-4.0, 5.5]] {
                let a = eval_kappa_hat(&k, xi).unwrap();
                let b = eval_kappa_hat(&k, [-xi[0], -xi[1]]).unwrap();
                assert_eq!(a, b);
                assert!(a > 0.0);
            }
        }
    }

    #[test]
    fn rational_transform_inverts_to_kappa() {
        // kappa(x) = \int exp(i xi x) kappa_hat(xi) dxi, checked per axis by
        // composite Simpson quadrature on [-60, 60].
        for n in 1..=4u32 {
            let steps = 240_000;
            let (a, b) = (-60.0f64, 60.0f64);
            let h = (b - a) / steps as f64;
            for t in [0.0, 0.5, 1.7] {
                let mut s = 0.0;
                for i in 0..=steps {
                    let w = a + i as f64 * h;
                    let c = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    s += c * (w * t).cos() * log_rational_hat_1d(n, w).exp();
                }
                s *= h / 3.0;
                let exact = (1.0 + t * t).powi(-(n as i32));
                assert!((s - exact).abs() < 1e-7, "n={n} t={t}: {s} vs {exact}");
            }
        }
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("bf".parse::<Kernel>().unwrap(), Kernel::bargmann_fock());
        assert_eq!("rational:3".parse::<Kernel>().unwrap().to_string(), "rational:3");
        assert!("matern".parse::<Kernel>().is_err());
        assert!(Kernel::rational(0).is_err());
    }

    #[test]
    fn face_centered_frame_rotates() {
        let p = Frame::FaceCentered.to_plane([1.0, 0.0]);
        assert!((p[0] - FRAC_1_SQRT_2).abs() < 1e-15 && (p[1] - FRAC_1_SQRT_2).abs() < 1e-15);
        let q = Frame::FaceCentered.to_plane([0.0, 1.0]);
        assert!((q[0] + FRAC_1_SQRT_2).abs() < 1e-15 && (q[1] - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn build_rejects_bad_grid() {
        let bf = Kernel::bargmann_fock();
        assert!(build_sqrt_kernel(&bf, 0.5, 48, 16).is_err());
        assert!(build_sqrt_kernel(&bf, 0.5, 16, 16).is_err());
        assert!(build_sqrt_kernel(&bf, -1.0, 64, 16).is_err());
    }

    #[test]
    fn table_is_exactly_even_and_normalized() {
        let sk = build_sqrt_kernel(&Kernel::bargmann_fock(), 0.5, 64, 16).unwrap();
        for m1 in -16..=16 {
            for m2 in -16..=16 {
                assert_eq!(sk.get(m1, m2), sk.get(-m1, -m2));
            }
        }
        let c = self_convolution(&sk, 0);
        assert!((c[0] - 1.0).abs() < 1e-9);
        assert!(sk.sum_abs >= sk.get(0, 0).abs());
        assert!(sk.min_log_symbol.is_finite());
    }

    #[test]
    fn truncation_too_short_fails_to_converge() {
        // a 3x3 stencil cannot represent the Gaussian square root at this mesh
        let err = build_sqrt_kernel(&Kernel::bargmann_fock(), 0.25, 1024, 1).unwrap_err();
        match err {
            Error::QuadratureNotConverged { residual, grid_order } => {
                assert!(residual > CONV_TOLERANCE);
                assert_eq!(grid_order, MAX_GRID_ORDER);
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn rotation_invariant_kernel_is_frame_independent() {
        let bf = Kernel::bargmann_fock();
        let a = build_sqrt_kernel_in_frame(&bf, Frame::Axis, 0.4, 64, 20).unwrap();
        let b = build_sqrt_kernel_in_frame(&bf, Frame::FaceCentered, 0.4, 64, 20).unwrap();
        for (x, y) in a.table.iter().zip(&b.table) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn serde_round_trip() {
        let sk = build_sqrt_kernel(&Kernel::bargmann_fock(), 1.0, 16, 8).unwrap();
        let s = serde_json::to_string(&sk).unwrap();
        let back: SqrtKernel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, sk);
    }
}
