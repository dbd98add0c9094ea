//! Incoherent circular-pupil kernels and the Fourier-domain primitives built on them.

use std::f64::consts::PI;

use ndarray::Zip;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, GridSpec, Image, OpticalConfig, Spectrum};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Illumination,
    Detection,
}

/// Normalized incoherent OTF of a circular pupil: the autocorrelation of a
/// disc, `(2/π)(acos ν − ν√(1−ν²))` for `ν = |u|/cutoff < 1`, zero beyond.
pub fn pupil_otf(radius: f64, cutoff: f64) -> f64 {
    let v = radius / cutoff;
    if v >= 1.0 {
        0.0
    } else {
        2.0 / PI * (v.acos() - v * (1.0 - v * v).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum OtfModel {
    CircularPupil { cutoff: f64 },
    Sampled,
}

/// Paired PSF / OTF of one optical side.
#[derive(Debug, Clone)]
pub struct Kernel {
    psf: Image,
    otf: Spectrum,
    cutoff: f64,
    model: OtfModel,
}

impl Kernel {
    /// Kernel from a sampled PSF centered at the origin (wraparound layout).
    /// The PSF is normalized to unit sum.
    pub fn from_psf(psf: Image, cutoff: f64) -> Result<Self> {
        let total = psf.sum();
        if !(total.abs() > 0.0) {
            return Err(Error::IllPosed("PSF sums to zero".into()));
        }
        let psf = psf.scaled(1.0 / total);
        let otf = psf.spectrum();
        Ok(Self {
            psf,
            otf,
            cutoff,
            model: OtfModel::Sampled,
        })
    }

    pub(crate) fn from_parts(psf: Image, otf: Spectrum, cutoff: f64) -> Self {
        Self {
            psf,
            otf,
            cutoff,
            model: OtfModel::Sampled,
        }
    }

    pub fn psf(&self) -> &Image {
        &self.psf
    }

    pub fn otf(&self) -> &Spectrum {
        &self.otf
    }

    pub fn grid(&self) -> &GridSpec {
        self.psf.grid()
    }

    /// Frequency radius (µm⁻¹) beyond which the OTF vanishes.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Analytic OTF at an arbitrary frequency, when the kernel has a closed form.
    pub fn otf_at(&self, ux: f64, uy: f64) -> Option<f64> {
        match self.model {
            OtfModel::CircularPupil { cutoff } => Some(pupil_otf(ux.hypot(uy), cutoff)),
            OtfModel::Sampled => None,
        }
    }

    /// PSF with its peak moved to the field center, for display and profiles.
    pub fn centered_psf(&self) -> Image {
        let g = self.grid();
        self.psf.roll((g.width / 2) as i64, (g.height / 2) as i64)
    }

    /// Full width at half maximum of the PSF along x, in µm, read from a 4×
    /// band-limited interpolation of the sampled PSF.
    pub fn fwhm(&self) -> Result<f64> {
        const UP: usize = 4;
        let centered = self.centered_psf();
        let g = *centered.grid();
        let fine = metrics::fourier_upsample(centered.values(), UP);
        let row = fine.row(UP * (g.height / 2)).to_vec();
        Ok(metrics::fwhm(&row)? * g.pitch / UP as f64)
    }
}

/// Circular-pupil kernel for one side of the microscope.
pub fn make_kernel(config: &OpticalConfig, side: Side) -> Result<Kernel> {
    let lambda = match side {
        Side::Illumination => config.lambda_illu,
        Side::Detection => config.lambda_det,
    };
    pupil_kernel(config.grid, 2.0 * config.na / lambda)
}

/// Circular-pupil kernel with the given cutoff frequency (µm⁻¹).
pub fn pupil_kernel(grid: GridSpec, cutoff: f64) -> Result<Kernel> {
    let nyquist = grid.nyquist();
    if cutoff > nyquist {
        return Err(Error::Aliasing { cutoff, nyquist });
    }
    let otf = Spectrum::from_real_fn(grid, |r, c| pupil_otf(grid.freq_radius(r, c), cutoff));
    let mut psf = otf.to_image();
    // The sampled PSF is the periodized Airy pattern, nonnegative up to round-off.
    psf.clip_negative();
    Ok(Kernel {
        psf,
        otf,
        cutoff,
        model: OtfModel::CircularPupil { cutoff },
    })
}

/// Illumination and detection kernels of one optical configuration.
#[derive(Debug, Clone)]
pub struct Kernels {
    pub illu: Kernel,
    pub det: Kernel,
}

impl Kernels {
    pub fn new(config: &OpticalConfig) -> Result<Self> {
        Ok(Self {
            illu: make_kernel(config, Side::Illumination)?,
            det: make_kernel(config, Side::Detection)?,
        })
    }
}

/// Circular convolution `a ⊗ k` through the kernel OTF.
pub fn convolve(a: &Image, k: &Kernel) -> Result<Image> {
    filter(a, k.otf())
}

/// Multiplies the spectrum of `a` by `transfer` and returns the real part.
pub fn filter(a: &Image, transfer: &Spectrum) -> Result<Image> {
    ensure_same_grid(a.grid(), transfer.grid())?;
    a.spectrum().mul(transfer).map(|s| s.to_image())
}

/// Circular convolution of two images.
pub fn convolve_images(a: &Image, b: &Image) -> Result<Image> {
    ensure_same_grid(a.grid(), b.grid())?;
    a.spectrum().mul(&b.spectrum()).map(|s| s.to_image())
}

/// Circular cross-correlation `(a ⋆ b)(d) = Σ_r a(r)·b(r + d)`.
pub fn cross_correlate(a: &Image, b: &Image) -> Result<Image> {
    ensure_same_grid(a.grid(), b.grid())?;
    let mut sa = a.spectrum();
    let sb = b.spectrum();
    Zip::from(sa.values_mut())
        .and(sb.values())
        .for_each(|x, &y| *x = x.conj() * y);
    Ok(sa.to_image())
}

/// Tikhonov-regularized inverse filter `Ĩ·T* / (|T|² + reg)`.
///
/// With `clip`, negative output pixels are set to zero. `reg = 0` is accepted
/// only where the data vanish wherever the transfer function does.
pub fn tikhonov_deconvolve(img: &Image, transfer: &Spectrum, reg: f64, clip: bool) -> Result<Image> {
    ensure_same_grid(img.grid(), transfer.grid())?;
    if !(reg >= 0.0) || !reg.is_finite() {
        return Err(Error::InvalidConfig(format!("regularizer {reg} must be ≥ 0")));
    }
    let mut spec = img.spectrum();
    let data_scale = spec.max_abs().max(f64::MIN_POSITIVE);
    let mut ill_posed = false;
    Zip::from(spec.values_mut())
        .and(transfer.values())
        .for_each(|x, &t| {
            let denom = t.norm_sqr() + reg;
            if denom > 0.0 {
                *x = *x * t.conj() / denom;
            } else {
                if x.norm() > 1e-12 * data_scale {
                    ill_posed = true;
                }
                *x = Complex64::default();
            }
        });
    if ill_posed {
        return Err(Error::IllPosed(
            "zero regularizer with data outside the transfer-function support".into(),
        ));
    }
    let mut out = spec.to_image();
    if clip {
        out.clip_negative();
    }
    Ok(out)
}

/// Sub-pixel translation by `(dx, dy)` µm via the shift theorem:
/// `out(r) = img(r − shift)`.
///
/// The Nyquist row/column of an even grid cannot carry a fractional shift for
/// a real image; the real part of the shifted spectrum is kept.
pub fn fourier_shift(img: &Image, dx: f64, dy: f64) -> Image {
    if dx == 0.0 && dy == 0.0 {
        return img.clone();
    }
    let g = *img.grid();
    let mut spec = img.spectrum();
    for ((r, c), v) in spec.values_mut().indexed_iter_mut() {
        let phase = -2.0 * PI * (g.freq_x(c) * dx + g.freq_y(r) * dy);
        *v *= Complex64::from_polar(1.0, phase);
    }
    spec.to_image()
}
