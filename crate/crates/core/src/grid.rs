//! Sample grids, real images and their spectra.
//!
//! Images are stored row-major as `[row, col]` = `[y, x]`. Spectra use the
//! unshifted DFT layout: DC at index `(0, 0)`, negative frequencies wrapped to
//! the upper half of each axis.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Pixel pitch in µm.
    pub pitch: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, pitch: f64) -> Result<Self> {
        let grid = Self {
            width,
            height,
            pitch,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn square(size: usize, pitch: f64) -> Result<Self> {
        Self::new(size, size, pitch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidGrid(format!(
                "{}x{} is smaller than 8x8",
                self.width, self.height
            )));
        }
        if self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "{}x{} has an odd dimension",
                self.width, self.height
            )));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::InvalidGrid(format!("pitch {} must be > 0", self.pitch)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Largest frequency representable along the coarser axis, 1/(2·pitch).
    pub fn nyquist(&self) -> f64 {
        0.5 / self.pitch
    }

    /// Field of view along x in µm.
    pub fn field_x(&self) -> f64 {
        self.width as f64 * self.pitch
    }

    pub fn field_y(&self) -> f64 {
        self.height as f64 * self.pitch
    }

    /// Pixel coordinates of the field center, `(W/2, H/2)`.
    pub fn center_px(&self) -> (f64, f64) {
        ((self.width / 2) as f64, (self.height / 2) as f64)
    }

    /// Spatial frequency in µm⁻¹ for column index `col` (x axis).
    pub fn freq_x(&self, col: usize) -> f64 {
        wrapped(col, self.width) as f64 / (self.width as f64 * self.pitch)
    }

    pub fn freq_y(&self, row: usize) -> f64 {
        wrapped(row, self.height) as f64 / (self.height as f64 * self.pitch)
    }

    pub fn freq_radius(&self, row: usize, col: usize) -> f64 {
        self.freq_x(col).hypot(self.freq_y(row))
    }

    /// Signed pixel offset of column `col` from the origin under wraparound.
    pub fn offset_x(&self, col: usize) -> i64 {
        wrapped(col, self.width)
    }

    pub fn offset_y(&self, row: usize) -> i64 {
        wrapped(row, self.height)
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{} @ {} µm", self.width, self.height, self.pitch)
    }
}

/// Index `k` on an `n`-point periodic axis mapped to `[-n/2, n/2)`.
pub(crate) fn wrapped(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

pub(crate) fn ensure_same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a.width != b.width || a.height != b.height || (a.pitch - b.pitch).abs() > 1e-12 * a.pitch {
        return Err(Error::GridMismatch {
            left: a.to_string(),
            right: b.to_string(),
        });
    }
    Ok(())
}

/// Real-valued 2D sample grid with physical pixel pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: GridSpec,
    values: Array2<f64>,
}

impl Image {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: Array2::zeros(grid.shape()),
        }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            values: Array2::from_elem(grid.shape(), value),
        }
    }

    pub fn from_array(grid: GridSpec, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::InvalidGrid(format!(
                "array shape {:?} does not match grid {}",
                values.dim(),
                grid
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite pixel value".into()));
        }
        Ok(Self { grid, values })
    }

    /// Builds an image from `f(x, y)` evaluated at integer pixel indices.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = Array2::from_shape_fn(grid.shape(), |(y, x)| f(x, y));
        Self { grid, values }
    }

    /// Wraps an array the caller knows to be finite and of the right shape.
    pub(crate) fn from_raw(grid: GridSpec, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.dim(), grid.shape());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[[y, x]]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[[y, x]] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.grid.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `(x, y)` of the largest pixel (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for ((y, x), &v) in self.values.indexed_iter() {
            if v > best_v {
                best_v = v;
                best = (x, y);
            }
        }
        best
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        ensure_same_grid(&self.grid, &other.grid)?;
        Ok(Zip::from(&self.values)
            .and(&other.values)
            .fold(0.0, |acc, a, b| acc + a * b))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(self.grid, self.values.mapv(f))
    }

    pub fn scaled(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    /// Pixel-wise combination of two images on the same grid.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let mut out = Array2::zeros(self.grid.shape());
        Zip::from(&mut out)
            .and(&self.values)
            .and(&other.values)
            .for_each(|o, &a, &b| *o = f(a, b));
        Ok(Image::from_raw(self.grid, out))
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn clip_negative(&mut self) {
        self.values.mapv_inplace(|v| v.max(0.0));
    }

    /// Circular shift so that `out(x, y) = self(x - dx, y - dy)`.
    pub fn roll(&self, dx: i64, dy: i64) -> Image {
        let (h, w) = self.grid.shape();
        let sx = dx.rem_euclid(w as i64) as usize;
        let sy = dy.rem_euclid(h as i64) as usize;
        let mut out = Array2::zeros((h, w));
        for y in 0..h {
            let src_y = (y + h - sy) % h;
            for x in 0..w {
                out[[y, x]] = self.values[[src_y, (x + w - sx) % w]];
            }
        }
        Image::from_raw(self.grid, out)
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum::from_raw(self.grid, fft::fft2_real(&self.values))
    }

    /// Relative L2 distance `‖self − reference‖ / ‖reference‖`.
    pub fn relative_l2(&self, reference: &Image) -> Result<f64> {
        let diff = self.sub(reference)?;
        Ok(diff.norm() / reference.norm())
    }
}

/// Complex spectrum of an image on the unshifted DFT layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: GridSpec,
    values: Array2<Complex64>,
}

impl Spectrum {
    pub fn from_array(grid: GridSpec, values: Array2<Complex64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::InvalidGrid(format!(
                "spectrum shape {:?} does not match grid {}",
                values.dim(),
                grid
            )));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Array2<Complex64>) -> Self {
        debug_assert_eq!(values.dim(), grid.shape());
        Self { grid, values }
    }

    /// Real transfer function evaluated from `f(row, col)`.
    pub fn from_real_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = Array2::from_shape_fn(grid.shape(), |(r, c)| Complex64::new(f(r, c), 0.0));
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.values
    }

    pub fn dc(&self) -> Complex64 {
        self.values[[0, 0]]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Inverse transform, keeping the real part.
    pub fn to_image(&self) -> Image {
        Image::from_raw(self.grid, fft::ifft2_real(&self.values))
    }

    /// Total power `Σ|X|²`.
    pub fn power(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Power carried by frequencies with `|u| > radius` (µm⁻¹).
    pub fn power_beyond(&self, radius: f64) -> f64 {
        self.values
            .indexed_iter()
            .filter(|((r, c), _)| self.grid.freq_radius(*r, *c) > radius)
            .map(|(_, v)| v.norm_sqr())
            .sum()
    }

    /// Largest `|X(u)|` over `|u| > radius`.
    pub fn max_abs_beyond(&self, radius: f64) -> f64 {
        self.values
            .indexed_iter()
            .filter(|((r, c), _)| self.grid.freq_radius(*r, *c) > radius)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }

    /// Largest deviation from Hermitian symmetry relative to the peak magnitude.
    pub fn hermitian_error(&self) -> f64 {
        let (h, w) = self.grid.shape();
        let peak = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for r in 0..h {
            for c in 0..w {
                let a = self.values[[r, c]];
                let b = self.values[[(h - r) % h, (w - c) % w]].conj();
                worst = worst.max((a - b).norm());
            }
        }
        worst / peak
    }

    pub fn mul(&self, other: &Spectrum) -> Result<Spectrum> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let mut out = self.values.clone();
        Zip::from(&mut out).and(&other.values).for_each(|a, &b| *a *= b);
        Ok(Spectrum::from_raw(self.grid, out))
    }

    pub fn abs_sqr(&self) -> Spectrum {
        Spectrum::from_raw(
            self.grid,
            self.values.mapv(|c| Complex64::new(c.norm_sqr(), 0.0)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    pub na: f64,
    /// Excitation wavelength, µm.
    pub lambda_illu: f64,
    /// Emission wavelength, µm.
    pub lambda_det: f64,
    pub grid: GridSpec,
}

impl OpticalConfig {
    pub fn new(na: f64, lambda_illu: f64, lambda_det: f64, grid: GridSpec) -> Result<Self> {
        let cfg = Self {
            na,
            lambda_illu,
            lambda_det,
            grid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Square grid at the finest default pitch, λ_det/(8·NA).
    pub fn with_default_pitch(na: f64, lambda: f64, size: usize) -> Result<Self> {
        let grid = GridSpec::square(size, lambda / (8.0 * na))?;
        Self::new(na, lambda, lambda, grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.na > 0.0 && self.na <= 1.5) {
            return Err(Error::InvalidConfig(format!("NA {} outside (0, 1.5]", self.na)));
        }
        if !(self.lambda_illu > 0.0 && self.lambda_det > 0.0) {
            return Err(Error::InvalidConfig("wavelengths must be positive".into()));
        }
        let max_pitch = self.lambda_det / (8.0 * self.na);
        if self.grid.pitch > max_pitch * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "pitch {} µm exceeds λ_det/(8·NA) = {} µm",
                self.grid.pitch, max_pitch
            )));
        }
        Ok(())
    }

    /// Abbe resolution λ_det/(2·NA), the unit of all reported resolutions.
    pub fn abbe(&self) -> f64 {
        self.lambda_det / (2.0 * self.na)
    }

    /// Incoherent cutoff 2·NA/λ for the detection side.
    pub fn cutoff_det(&self) -> f64 {
        2.0 * self.na / self.lambda_det
    }

    pub fn cutoff_illu(&self) -> f64 {
        2.0 * self.na / self.lambda_illu
    }
}
