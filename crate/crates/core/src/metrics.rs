//! Image quality scores and scan-time bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{MultiCoilImage, RealImage};
use crate::phantom::rss_combine;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    /// Side of the square Gaussian window, pixels (odd).
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// `None` uses the maximum of the reference image.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let raw: Vec<f64> = (0..window)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Half-sample symmetric reflection into `0..n`.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn blur(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let half = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| k * data[r * w + reflect(c as isize + t as isize - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| k * tmp[reflect(r as isize + t as isize - half, h) * w + c])
                .sum();
        }
    }
    out
}

fn check_pair(reference: &RealImage, test: &RealImage) -> Result<()> {
    if reference.height != test.height || reference.width != test.width {
        return Err(Error::shape(
            format!("{}x{}", reference.height, reference.width),
            format!("{}x{}", test.height, test.width),
        ));
    }
    Ok(())
}

/// Mean SSIM over all pixels, Gaussian-windowed with reflective borders.
pub fn ssim(reference: &RealImage, test: &RealImage, params: &SsimParams) -> Result<f64> {
    check_pair(reference, test)?;
    if params.window % 2 == 0 || !(params.sigma > 0.0 && params.k1 > 0.0 && params.k2 > 0.0) {
        return Err(Error::InvalidParameter("ssim window must be odd, sigma/k1/k2 positive".into()));
    }
    let range = params.dynamic_range.unwrap_or_else(|| reference.max());
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::DegenerateReference);
    }
    let (h, w) = (reference.height, reference.width);
    let taps = gaussian_taps(params.window, params.sigma);
    let x = &reference.data;
    let y = &test.data;
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();

    let mu_x = blur(x, h, w, &taps);
    let mu_y = blur(y, h, w, &taps);
    let xx = blur(&prod(x, x), h, w, &taps);
    let yy = blur(&prod(y, y), h, w, &taps);
    let xy = blur(&prod(x, y), h, w, &taps);

    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let mut total = 0.0;
    for i in 0..h * w {
        let mxy = mu_x[i] * mu_y[i];
        let mxx = mu_x[i] * mu_x[i];
        let myy = mu_y[i] * mu_y[i];
        let sxy = xy[i] - mxy;
        let sxx = xx[i] - mxx;
        let syy = yy[i] - myy;
        total += ((2.0 * mxy + c1) * (2.0 * sxy + c2)) / ((mxx + myy + c1) * (sxx + syy + c2));
    }
    Ok(total / (h * w) as f64)
}

/// `||test - ref|| / ||ref||`.
pub fn nrmse(reference: &RealImage, test: &RealImage) -> Result<f64> {
    check_pair(reference, test)?;
    let den: f64 = reference.data.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let num: f64 = reference.data.iter().zip(&test.data).map(|(r, t)| (t - r).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// Scan time per 2-D slice at a reduced phase-encode count.
pub fn effective_scan_time(scan_time_s: f64, matrix_lines: f64, recon_lines: f64, slices: f64) -> f64 {
    scan_time_s * (recon_lines / matrix_lines) / slices
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub ssim: f64,
    pub nrmse: f64,
}

/// Scores a multicoil reconstruction on RSS magnitudes, both scaled so that the
/// reference peaks at 1.
pub fn score_rss(truth: &MultiCoilImage, recon: &MultiCoilImage) -> Result<Scores> {
    let reference = rss_combine(truth);
    let test = rss_combine(recon);
    score_real(&reference, &test)
}

pub fn score_real(reference: &RealImage, test: &RealImage) -> Result<Scores> {
    let peak = reference.max();
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::DegenerateReference);
    }
    let (reference, test) = (reference.scaled(1.0 / peak), test.scaled(1.0 / peak));
    Ok(Scores {
        ssim: ssim(&reference, &test, &SsimParams::default())?,
        nrmse: nrmse(&reference, &test)?,
    })
}
