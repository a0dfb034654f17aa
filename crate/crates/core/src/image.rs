//! Complex multicoil image stacks and per-coil k-space sample sets.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Coil-major stack of square complex images.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCoilImage {
    pub coils: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl MultiCoilImage {
    pub fn zeros(coils: usize, height: usize, width: usize) -> Self {
        Self {
            coils,
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); coils * height * width],
        }
    }

    pub fn from_data(coils: usize, height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != coils * height * width {
            return Err(Error::shape(
                format!("{} values for {coils}x{height}x{width}", coils * height * width),
                data.len(),
            ));
        }
        Ok(Self {
            coils,
            height,
            width,
            data,
        })
    }

    /// Single-coil image from real pixel values.
    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let data = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::from_data(1, height, width, data)
    }

    pub fn pixels_per_coil(&self) -> usize {
        self.height * self.width
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        let n = self.pixels_per_coil();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn coil_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.pixels_per_coil();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Extracts a single coil as its own one-coil image.
    pub fn single(&self, c: usize) -> MultiCoilImage {
        MultiCoilImage {
            coils: 1,
            height: self.height,
            width: self.width,
            data: self.coil(c).to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn same_shape(&self, other: &MultiCoilImage) -> bool {
        self.coils == other.coils && self.height == other.height && self.width == other.width
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> MultiCoilImage {
        MultiCoilImage {
            data: self.data.iter().map(|z| z * s).collect(),
            ..*self
        }
    }

    pub(crate) fn check_shape(&self, other: &MultiCoilImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.coils, self.height, self.width)
    }
}

/// Per-coil complex samples along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceMeasurements {
    pub coils: usize,
    pub samples_per_coil: usize,
    pub data: Vec<Complex64>,
    /// Free-form provenance tag, e.g. the trajectory file name.
    pub trajectory_ref: String,
}

impl KSpaceMeasurements {
    pub fn zeros(coils: usize, samples_per_coil: usize) -> Self {
        Self {
            coils,
            samples_per_coil,
            data: vec![Complex64::new(0.0, 0.0); coils * samples_per_coil],
            trajectory_ref: String::new(),
        }
    }

    pub fn from_data(coils: usize, samples_per_coil: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != coils * samples_per_coil {
            return Err(Error::shape(
                format!("{} values for {coils}x{samples_per_coil}", coils * samples_per_coil),
                data.len(),
            ));
        }
        Ok(Self {
            coils,
            samples_per_coil,
            data,
            trajectory_ref: String::new(),
        })
    }

    pub fn with_ref(mut self, trajectory_ref: impl Into<String>) -> Self {
        self.trajectory_ref = trajectory_ref.into();
        self
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        let n = self.samples_per_coil;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn coil_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.samples_per_coil;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `<a, b>` with the conjugate on the first argument.
pub(crate) fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Real-valued image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RealImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!("{} values for {height}x{width}", height * width), data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, s: f64) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}
