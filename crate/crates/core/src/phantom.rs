//! Synthetic ground truth: phantoms, coil sensitivity maps and simulated
//! multicoil spiral acquisitions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{KSpaceMeasurements, MultiCoilImage, RealImage};
use crate::nufft::{forward, NufftPlan};

/// Noise std as a fraction of the peak noiseless sample magnitude.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoilProfile {
    Gaussian,
    BirdcageLike,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub size: usize,
    pub kind: PhantomKind,
    pub seed: u64,
    pub coils: usize,
    pub coil_profile: CoilProfile,
    /// Complex noise std per real/imaginary component. `None` selects
    /// [`DEFAULT_NOISE_FRACTION`] of the peak noiseless sample magnitude.
    pub noise_sigma: Option<f64>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            kind: PhantomKind::SheppLogan,
            seed: 0,
            coils: 8,
            coil_profile: CoilProfile::Gaussian,
            noise_sigma: None,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::InvalidParameter(format!("phantom size must be >= 16, got {}", self.size)));
        }
        if self.coils < 1 {
            return Err(Error::InvalidParameter("coils must be >= 1".into()));
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("noise_sigma must be >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Ellipse with additive intensity, in `[-1, 1]^2` coordinates (y up).
#[derive(Clone, Copy, Debug)]
struct Ellipse {
    intensity: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

impl Ellipse {
    const fn new(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi_deg: f64) -> Self {
        Self {
            intensity,
            a,
            b,
            x0,
            y0,
            phi_deg,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Toft's modified Shepp-Logan head.
const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse::new(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    Ellipse::new(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    Ellipse::new(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    Ellipse::new(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    Ellipse::new(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    Ellipse::new(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn random_ellipses(seed: u64) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(0.62..0.74);
    let b = rng.random_range(0.80..0.92);
    let tilt = rng.random_range(-10.0..10.0);
    let mut out = vec![
        Ellipse::new(1.0, a, b, 0.0, 0.0, tilt),
        Ellipse::new(-0.75, a * 0.92, b * 0.93, 0.0, -0.01, tilt),
    ];
    let count = rng.random_range(5..=9);
    for _ in 0..count {
        let r = rng.random_range(0.0..0.5);
        let theta = rng.random_range(0.0..2.0 * PI);
        let sign = if rng.random_bool(0.7) { 1.0 } else { -1.0 };
        out.push(Ellipse::new(
            sign * rng.random_range(0.1..0.45),
            rng.random_range(0.04..0.25),
            rng.random_range(0.04..0.25),
            r * a * theta.cos(),
            r * b * theta.sin(),
            rng.random_range(0.0..180.0),
        ));
    }
    out
}

fn rasterize(ellipses: &[Ellipse], n: usize) -> Vec<f64> {
    const SUB: usize = 4;
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for sr in 0..SUB {
                for sc in 0..SUB {
                    let x = (2.0 * (c as f64 + (sc as f64 + 0.5) / SUB as f64)) / n as f64 - 1.0;
                    let y = 1.0 - (2.0 * (r as f64 + (sr as f64 + 0.5) / SUB as f64)) / n as f64;
                    acc += ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum::<f64>();
                }
            }
            out[r * n + c] = (acc / (SUB * SUB) as f64).max(0.0);
        }
    }
    let peak = out.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut out {
            *v /= peak;
        }
    }
    out
}

/// Single-coil real proton-density image with values in `[0, 1]` and peak 1.
pub fn make_phantom(spec: &PhantomSpec) -> Result<MultiCoilImage> {
    spec.validate()?;
    let ellipses = match spec.kind {
        PhantomKind::SheppLogan => SHEPP_LOGAN.to_vec(),
        PhantomKind::RandomEllipses => random_ellipses(spec.seed),
    };
    MultiCoilImage::from_real(spec.size, spec.size, &rasterize(&ellipses, spec.size))
}

/// Smooth complex receive maps, one per coil.
///
/// Gaussian maps have std `0.5 * fov` centered on a circle of radius
/// `0.3 * fov`, with a seeded linear phase; a single coil is centered and real.
pub fn coil_sensitivities(size: usize, coils: usize, profile: CoilProfile, seed: u64) -> Result<MultiCoilImage> {
    if coils < 1 {
        return Err(Error::InvalidParameter("coils must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c011);
    let mut maps = MultiCoilImage::zeros(coils, size, size);
    for c in 0..coils {
        let theta = 2.0 * PI * c as f64 / coils as f64;
        let offset = rng.random_range(-PI..PI);
        let ramp = rng.random_range(0.2..0.8) * PI;
        let map = maps.coil_mut(c);
        for r in 0..size {
            for col in 0..size {
                let x = (2.0 * col as f64 + 1.0) / size as f64 - 1.0;
                let y = 1.0 - (2.0 * r as f64 + 1.0) / size as f64;
                map[r * size + col] = match profile {
                    CoilProfile::Gaussian if coils == 1 => Complex64::new((-(x * x + y * y) / 2.0).exp(), 0.0),
                    CoilProfile::Gaussian => {
                        let (cx, cy) = (0.6 * theta.cos(), 0.6 * theta.sin());
                        let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                        let phase = offset + ramp * (x * theta.cos() + y * theta.sin());
                        Complex64::from_polar((-d2 / 2.0).exp(), phase)
                    }
                    CoilProfile::BirdcageLike => {
                        let (cx, cy) = (1.5 * theta.cos(), 1.5 * theta.sin());
                        let (dx, dy) = (x - cx, y - cy);
                        let mag = 1.0 / (1.0 + (dx * dx + dy * dy) / 2.0);
                        Complex64::from_polar(mag, dy.atan2(dx) + offset)
                    }
                };
            }
        }
    }
    Ok(maps)
}

/// `sens_c * img` for every coil of `sens`; `img` must have one coil.
pub fn coil_images(img: &MultiCoilImage, sens: &MultiCoilImage) -> Result<MultiCoilImage> {
    if img.coils != 1 || img.height != sens.height || img.width != sens.width {
        return Err(Error::shape(
            format!("1x{}x{} image", sens.height, sens.width),
            img.shape_string(),
        ));
    }
    let x = img.coil(0);
    let mut out = sens.clone();
    for c in 0..out.coils {
        for (s, v) in out.coil_mut(c).iter_mut().zip(x) {
            *s *= v;
        }
    }
    Ok(out)
}

/// `forward(plan, sens ⊙ img)` plus complex Gaussian noise of std `noise_sigma`
/// per component.
pub fn simulate_measurements(
    img: &MultiCoilImage,
    sens: &MultiCoilImage,
    plan: &NufftPlan,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceMeasurements> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut y = forward(plan, &coil_images(img, sens)?)?;
    if noise_sigma > 0.0 {
        add_complex_noise(&mut y.data, noise_sigma, seed);
    }
    Ok(y)
}

/// The default noise level for a noiseless acquisition.
pub fn default_noise_sigma(noiseless: &KSpaceMeasurements) -> f64 {
    DEFAULT_NOISE_FRACTION * noiseless.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn add_complex_noise(data: &mut [Complex64], sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma checked by caller");
    for z in data {
        let re = normal.sample(&mut rng);
        let im = normal.sample(&mut rng);
        *z += Complex64::new(re, im);
    }
}

/// Root-sum-of-squares magnitude combination.
pub fn rss_combine(img: &MultiCoilImage) -> RealImage {
    let n = img.pixels_per_coil();
    let mut acc = vec![0.0; n];
    for c in 0..img.coils {
        for (a, z) in acc.iter_mut().zip(img.coil(c)) {
            *a += z.norm_sqr();
        }
    }
    RealImage {
        height: img.height,
        width: img.width,
        data: acc.into_iter().map(f64::sqrt).collect(),
    }
}
