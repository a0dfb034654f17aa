//! Non-uniform Fourier operators by Kaiser-Bessel gridding.
//!
//! Conventions: pixel `(row, col)` sits at `p = (col - N/2, row - N/2)`, sample
//! coordinates are in cycles/sample, and the forward operator is
//! `y_j = sum_p x_p * exp(-2*pi*i * k_j . p)`. The adjoint is the exact
//! conjugate transpose of the discrete gridding pipeline, not of the ideal sum.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{dot, norm_sqr, KSpaceMeasurements, MultiCoilImage};
use crate::trajgen::Trajectory;

/// Slack on the `|k| <= 0.5` band edge. Spiral end points land on it exactly.
const COORD_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NufftOptions {
    pub oversamp: f64,
    pub kernel_width: usize,
}

impl Default for NufftOptions {
    fn default() -> Self {
        Self {
            oversamp: 2.0,
            kernel_width: 8,
        }
    }
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < 1e-17 * sum {
            return sum;
        }
        k += 1.0;
    }
}

/// Shape parameter from Beatty et al. for a given width and oversampling.
pub fn beatty_beta(width: usize, oversamp: f64) -> f64 {
    let w = width as f64;
    PI * ((w / oversamp).powi(2) * (oversamp - 0.5).powi(2) - 0.8).sqrt()
}

#[derive(Clone, Copy, Debug)]
struct KaiserBessel {
    width: f64,
    beta: f64,
    norm: f64,
}

impl KaiserBessel {
    fn new(width: usize, beta: f64) -> Self {
        Self {
            width: width as f64,
            beta,
            norm: 1.0 / bessel_i0(beta),
        }
    }

    fn eval(&self, d: f64) -> f64 {
        let x = 2.0 * d / self.width;
        if x.abs() > 1.0 {
            return 0.0;
        }
        bessel_i0(self.beta * (1.0 - x * x).sqrt()) * self.norm
    }

    /// Continuous Fourier transform of the kernel at `xi` cycles per grid cell.
    fn transform(&self, xi: f64) -> f64 {
        let a = PI * self.width * xi;
        let z2 = self.beta * self.beta - a * a;
        let ratio = if z2 > 0.0 {
            let z = z2.sqrt();
            z.sinh() / z
        } else if z2 < 0.0 {
            let z = (-z2).sqrt();
            z.sin() / z
        } else {
            1.0
        };
        self.width * ratio * self.norm
    }
}

/// Precomputed gridding structure for one set of sample coordinates.
#[derive(Clone)]
pub struct NufftPlan {
    pub image_size: usize,
    pub grid_size: usize,
    pub oversamp: f64,
    pub kernel_width: usize,
    pub kernel_beta: f64,
    pub sample_coords: Vec<[f64; 2]>,
    idx_x: Vec<usize>,
    idx_y: Vec<usize>,
    w_x: Vec<f64>,
    w_y: Vec<f64>,
    /// Separable image-domain correction, indexed by column or row.
    apod: Vec<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for NufftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NufftPlan")
            .field("image_size", &self.image_size)
            .field("grid_size", &self.grid_size)
            .field("oversamp", &self.oversamp)
            .field("kernel_width", &self.kernel_width)
            .field("kernel_beta", &self.kernel_beta)
            .field("samples", &self.sample_coords.len())
            .finish()
    }
}

impl NufftPlan {
    /// Builds a plan from coordinates already in cycles/sample.
    pub fn new(coords: Vec<[f64; 2]>, image_size: usize, opts: NufftOptions) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if image_size == 0 {
            return Err(Error::InvalidParameter("image_size must be positive".into()));
        }
        if !(opts.oversamp >= 1.25 && opts.oversamp.is_finite()) || opts.kernel_width < 2 {
            return Err(Error::InvalidParameter(format!(
                "unsupported gridding options: oversamp {} width {}",
                opts.oversamp, opts.kernel_width
            )));
        }
        for (index, k) in coords.iter().enumerate() {
            let inside = |v: f64| v.is_finite() && v.abs() <= 0.5 + COORD_SLACK;
            if !(inside(k[0]) && inside(k[1])) {
                return Err(Error::CoordOutOfRange {
                    index,
                    kx: k[0],
                    ky: k[1],
                });
            }
        }

        let mut grid_size = (opts.oversamp * image_size as f64).ceil() as usize;
        grid_size += grid_size % 2;
        let width = opts.kernel_width;
        let beta = beatty_beta(width, opts.oversamp);
        let kernel = KaiserBessel::new(width, beta);

        let m = coords.len();
        let mut idx_x = Vec::with_capacity(m * width);
        let mut idx_y = Vec::with_capacity(m * width);
        let mut w_x = Vec::with_capacity(m * width);
        let mut w_y = Vec::with_capacity(m * width);
        let kgrid = grid_size as i64;
        let half = width as f64 / 2.0;
        for k in &coords {
            for (axis, (idx, w)) in [(&mut idx_x, &mut w_x), (&mut idx_y, &mut w_y)].into_iter().enumerate() {
                let u = k[axis] * grid_size as f64;
                let start = (u - half).floor() as i64 + 1;
                for g in start..start + width as i64 {
                    idx.push(g.rem_euclid(kgrid) as usize);
                    w.push(kernel.eval(u - g as f64));
                }
            }
        }

        let n = image_size as i64;
        let apod: Vec<f64> = (0..n)
            .map(|c| kernel.transform((c - n / 2) as f64 / grid_size as f64))
            .collect();
        if apod.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidParameter(
                "kernel apodization is not strictly positive over the image".into(),
            ));
        }

        let mut planner = FftPlanner::new();
        Ok(Self {
            image_size,
            grid_size,
            oversamp: opts.oversamp,
            kernel_width: width,
            kernel_beta: beta,
            sample_coords: coords,
            idx_x,
            idx_y,
            w_x,
            w_y,
            apod,
            fft_fwd: planner.plan_fft_forward(grid_size),
            fft_inv: planner.plan_fft_inverse(grid_size),
        })
    }

    /// Plan for a designed trajectory at its own matrix size.
    pub fn from_trajectory(traj: &Trajectory, opts: NufftOptions) -> Result<Self> {
        Self::new(traj.normalized_coords(), traj.spec.matrix_size, opts)
    }

    /// Plan sampling every point of the `n x n` Cartesian grid, row-major in `(ky, kx)`.
    pub fn cartesian(n: usize, opts: NufftOptions) -> Result<Self> {
        Self::new(cartesian_coords(n), n, opts)
    }

    pub fn num_samples(&self) -> usize {
        self.sample_coords.len()
    }

    /// Image-domain correction map, row-major, strictly positive.
    pub fn apodization(&self) -> Vec<f64> {
        let n = self.image_size;
        (0..n * n).map(|i| self.apod[i / n] * self.apod[i % n]).collect()
    }

    /// Interpolation table: per sample, `kernel_width` (index, weight) pairs per axis.
    pub fn interp_table(&self) -> (&[usize], &[f64], &[usize], &[f64]) {
        (&self.idx_x, &self.w_x, &self.idx_y, &self.w_y)
    }

    fn grid_index(&self, p: usize) -> usize {
        let n = self.image_size as i64;
        (p as i64 - n / 2).rem_euclid(self.grid_size as i64) as usize
    }

    fn fft2(&self, grid: &mut [Complex64], inverse: bool) {
        let k = self.grid_size;
        let fft = if inverse { &self.fft_inv } else { &self.fft_fwd };
        fft.process(grid);
        transpose_square(grid, k);
        fft.process(grid);
        transpose_square(grid, k);
    }

    /// Forward operator on one coil image.
    pub fn forward_coil(&self, img: &[Complex64], out: &mut [Complex64]) {
        let n = self.image_size;
        let k = self.grid_size;
        let mut grid = vec![Complex64::new(0.0, 0.0); k * k];
        for r in 0..n {
            let gy = self.grid_index(r);
            for c in 0..n {
                let gx = self.grid_index(c);
                grid[gy * k + gx] = img[r * n + c] / (self.apod[r] * self.apod[c]);
            }
        }
        self.fft2(&mut grid, false);

        let w = self.kernel_width;
        for (j, y) in out.iter_mut().enumerate() {
            let (ix, wx) = (&self.idx_x[j * w..(j + 1) * w], &self.w_x[j * w..(j + 1) * w]);
            let (iy, wy) = (&self.idx_y[j * w..(j + 1) * w], &self.w_y[j * w..(j + 1) * w]);
            let mut acc = Complex64::new(0.0, 0.0);
            for b in 0..w {
                let row = &grid[iy[b] * k..(iy[b] + 1) * k];
                let mut line = Complex64::new(0.0, 0.0);
                for a in 0..w {
                    line += row[ix[a]] * wx[a];
                }
                acc += line * wy[b];
            }
            *y = acc;
        }
    }

    /// Adjoint operator on one coil's samples.
    pub fn adjoint_coil(&self, samples: &[Complex64], out: &mut [Complex64]) {
        let n = self.image_size;
        let k = self.grid_size;
        let w = self.kernel_width;
        let mut grid = vec![Complex64::new(0.0, 0.0); k * k];
        for (j, &y) in samples.iter().enumerate() {
            let (ix, wx) = (&self.idx_x[j * w..(j + 1) * w], &self.w_x[j * w..(j + 1) * w]);
            let (iy, wy) = (&self.idx_y[j * w..(j + 1) * w], &self.w_y[j * w..(j + 1) * w]);
            for b in 0..w {
                let yb = y * wy[b];
                let row = &mut grid[iy[b] * k..(iy[b] + 1) * k];
                for a in 0..w {
                    row[ix[a]] += yb * wx[a];
                }
            }
        }
        self.fft2(&mut grid, true);
        for r in 0..n {
            let gy = self.grid_index(r);
            for c in 0..n {
                let gx = self.grid_index(c);
                out[r * n + c] = grid[gy * k + gx] / (self.apod[r] * self.apod[c]);
            }
        }
    }

    fn check_image(&self, img: &MultiCoilImage) -> Result<()> {
        if img.height != self.image_size || img.width != self.image_size {
            return Err(Error::shape(
                format!("{0}x{0} image", self.image_size),
                format!("{}x{}", img.height, img.width),
            ));
        }
        Ok(())
    }

    fn check_meas(&self, meas: &KSpaceMeasurements) -> Result<()> {
        if meas.samples_per_coil != self.num_samples() || meas.data.len() != meas.coils * meas.samples_per_coil {
            return Err(Error::shape(
                format!("{} samples per coil", self.num_samples()),
                meas.samples_per_coil,
            ));
        }
        Ok(())
    }

    /// Applies the per-coil normal operator `A^H A + reg * I`.
    fn normal_coil(&self, x: &[Complex64], reg: f64, scratch: &mut [Complex64], out: &mut [Complex64]) {
        self.forward_coil(x, scratch);
        self.adjoint_coil(scratch, out);
        if reg != 0.0 {
            for (o, xi) in out.iter_mut().zip(x) {
                *o += xi * reg;
            }
        }
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in r + 1..n {
            buf.swap(r * n + c, c * n + r);
        }
    }
}

/// Every point of the centered `n x n` Cartesian grid in cycles/sample.
pub fn cartesian_coords(n: usize) -> Vec<[f64; 2]> {
    let half = (n / 2) as f64;
    (0..n * n)
        .map(|i| [((i % n) as f64 - half) / n as f64, ((i / n) as f64 - half) / n as f64])
        .collect()
}

/// `A x`, coil by coil.
pub fn forward(plan: &NufftPlan, img: &MultiCoilImage) -> Result<KSpaceMeasurements> {
    plan.check_image(img)?;
    let m = plan.num_samples();
    let per_coil: Vec<Vec<Complex64>> = (0..img.coils)
        .into_par_iter()
        .map(|c| {
            let mut out = vec![Complex64::new(0.0, 0.0); m];
            plan.forward_coil(img.coil(c), &mut out);
            out
        })
        .collect();
    KSpaceMeasurements::from_data(img.coils, m, per_coil.concat())
}

/// `A^H y`, coil by coil.
pub fn adjoint(plan: &NufftPlan, meas: &KSpaceMeasurements) -> Result<MultiCoilImage> {
    plan.check_meas(meas)?;
    let n = plan.image_size;
    let per_coil: Vec<Vec<Complex64>> = (0..meas.coils)
        .into_par_iter()
        .map(|c| {
            let mut out = vec![Complex64::new(0.0, 0.0); n * n];
            plan.adjoint_coil(meas.coil(c), &mut out);
            out
        })
        .collect();
    MultiCoilImage::from_data(meas.coils, n, n, per_coil.concat())
}

/// Direct `O(M N^2)` evaluation of the forward sum. Meant for small images.
pub fn nudft_forward_oracle(coords: &[[f64; 2]], img: &MultiCoilImage) -> KSpaceMeasurements {
    let (h, w) = (img.height, img.width);
    let mut data = Vec::with_capacity(img.coils * coords.len());
    for c in 0..img.coils {
        let x = img.coil(c);
        for k in coords {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..h {
                let py = r as f64 - (h / 2) as f64;
                for col in 0..w {
                    let px = col as f64 - (w / 2) as f64;
                    let phase = -2.0 * PI * (k[0] * px + k[1] * py);
                    acc += x[r * w + col] * Complex64::from_polar(1.0, phase);
                }
            }
            data.push(acc);
        }
    }
    KSpaceMeasurements {
        coils: img.coils,
        samples_per_coil: coords.len(),
        data,
        trajectory_ref: String::new(),
    }
}

/// Direct evaluation of the adjoint sum onto an `n x n` image.
pub fn nudft_adjoint_oracle(coords: &[[f64; 2]], meas: &KSpaceMeasurements, n: usize) -> MultiCoilImage {
    let mut img = MultiCoilImage::zeros(meas.coils, n, n);
    for c in 0..meas.coils {
        let y = meas.coil(c);
        let out = img.coil_mut(c);
        for r in 0..n {
            let py = r as f64 - (n / 2) as f64;
            for col in 0..n {
                let px = col as f64 - (n / 2) as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, yj) in coords.iter().zip(y) {
                    let phase = 2.0 * PI * (k[0] * px + k[1] * py);
                    acc += yj * Complex64::from_polar(1.0, phase);
                }
                out[r * n + col] = acc;
            }
        }
    }
    img
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub l2_reg: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            l2_reg: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoilSolveReport {
    pub iterations: usize,
    /// `||r_i|| / ||A^H y||` after each iteration.
    pub residual_history: Vec<f64>,
}

impl CoilSolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CgReport {
    pub per_coil: Vec<CoilSolveReport>,
}

impl CgReport {
    pub fn max_iterations(&self) -> usize {
        self.per_coil.iter().map(|c| c.iterations).max().unwrap_or(0)
    }

    pub fn max_final_residual(&self) -> f64 {
        self.per_coil.iter().map(|c| c.final_residual()).fold(0.0, f64::max)
    }
}

/// Approximate inverse NUFFT: solves `(A^H A + l2_reg I) x = A^H y` per coil.
///
/// Uses the conjugate-residual form of conjugate gradients, which minimizes the
/// residual norm over each Krylov space, so the reported residuals never grow.
pub fn cg_inverse(
    plan: &NufftPlan,
    meas: &KSpaceMeasurements,
    opts: CgOptions,
) -> Result<(MultiCoilImage, CgReport)> {
    plan.check_meas(meas)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("cg tol must be positive, got {}", opts.tol)));
    }
    let n = plan.image_size;
    let solved: Vec<Result<(Vec<Complex64>, CoilSolveReport)>> = (0..meas.coils)
        .into_par_iter()
        .map(|c| solve_coil(plan, meas.coil(c), opts))
        .collect();
    let mut data = Vec::with_capacity(meas.coils * n * n);
    let mut report = CgReport::default();
    for s in solved {
        let (x, r) = s?;
        data.extend(x);
        report.per_coil.push(r);
    }
    Ok((MultiCoilImage::from_data(meas.coils, n, n, data)?, report))
}

fn solve_coil(plan: &NufftPlan, y: &[Complex64], opts: CgOptions) -> Result<(Vec<Complex64>, CoilSolveReport)> {
    let len = plan.image_size * plan.image_size;
    let zero = Complex64::new(0.0, 0.0);
    let mut scratch = vec![zero; plan.num_samples()];
    let mut x = vec![zero; len];
    let mut r = vec![zero; len];
    plan.adjoint_coil(y, &mut r);
    let b_norm = norm_sqr(&r).sqrt();
    let mut report = CoilSolveReport::default();
    if !b_norm.is_finite() {
        return Err(Error::NumericalBreakdown {
            iteration: 0,
            detail: "non-finite right-hand side".into(),
        });
    }
    if b_norm == 0.0 {
        return Ok((x, report));
    }

    let mut p = r.clone();
    let mut ar = vec![zero; len];
    plan.normal_coil(&r, opts.l2_reg, &mut scratch, &mut ar);
    let mut ap = ar.clone();
    let mut r_ar = dot(&r, &ar).re;

    for it in 1..=opts.max_iters {
        let ap_ap = norm_sqr(&ap);
        if ap_ap == 0.0 {
            break;
        }
        let step = r_ar / ap_ap;
        for i in 0..len {
            x[i] += p[i] * step;
            r[i] -= ap[i] * step;
        }
        let rel = norm_sqr(&r).sqrt() / b_norm;
        report.iterations = it;
        report.residual_history.push(rel);
        if !rel.is_finite() {
            return Err(Error::NumericalBreakdown {
                iteration: it,
                detail: "residual became non-finite".into(),
            });
        }
        if rel <= opts.tol || it == opts.max_iters {
            break;
        }
        plan.normal_coil(&r, opts.l2_reg, &mut scratch, &mut ar);
        let r_ar_next = dot(&r, &ar).re;
        let beta = r_ar_next / r_ar;
        r_ar = r_ar_next;
        for i in 0..len {
            p[i] = r[i] + p[i] * beta;
            ap[i] = ar[i] + ap[i] * beta;
        }
    }
    Ok((x, report))
}

/// Multiplies every coil's samples elementwise by `weights`.
pub fn apply_frequency_weighting(meas: &KSpaceMeasurements, weights: &[f64]) -> Result<KSpaceMeasurements> {
    if weights.len() != meas.samples_per_coil {
        return Err(Error::shape(format!("{} weights", meas.samples_per_coil), weights.len()));
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::NonPositiveWeight { index, value });
    }
    let mut out = meas.clone();
    for c in 0..out.coils {
        for (y, w) in out.coil_mut(c).iter_mut().zip(weights) {
            *y *= *w;
        }
    }
    Ok(out)
}
