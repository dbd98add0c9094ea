//! Pattern–intensity covariance imaging: covariance image, effective kernel,
//! deconvolution and shading correction.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{estimate_all, PeConfig, PeResult};
use crate::fft;
use crate::grid::{ensure_same_grid, Image, Spectrum};
use crate::optics::{tikhonov_deconvolve, Kernel, Kernels};
use crate::patterns::{ImageStack, PatternStack};

const CHUNK: usize = 16;

/// Sums `f(range)` over fixed-size chunks of `0..n` in parallel, combining the
/// partial sums in index order so the result does not depend on scheduling.
pub(crate) fn chunked_sum<F>(n: usize, shape: (usize, usize), f: F) -> Array2<f64>
where
    F: Fn(std::ops::Range<usize>) -> Array2<f64> + Sync + Send,
{
    let parts: Vec<Array2<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect();
    let mut acc = Array2::zeros(shape);
    for p in parts {
        acc += &p;
    }
    acc
}

pub(crate) fn check_pair(i: &ImageStack, p: &PatternStack) -> Result<()> {
    if i.len() != p.len() {
        return Err(Error::CountMismatch(i.len(), p.len()));
    }
    if i.len() < 2 {
        return Err(Error::TooFewImages {
            needed: 2,
            got: i.len(),
        });
    }
    ensure_same_grid(i.grid(), p.grid())
}

pub(crate) fn stack_mean(s: &ImageStack) -> Array2<f64> {
    let n = s.len();
    chunked_sum(n, s.grid().shape(), |range| {
        let mut acc = Array2::zeros(s.grid().shape());
        for l in range {
            acc += s.get(l).values();
        }
        acc
    }) / n as f64
}

/// `⟨Δp_ℓ ΔI_ℓ⟩_ℓ` with per-pixel means removed and 1/N normalization.
pub fn covariance_image(i: &ImageStack, p: &PatternStack) -> Result<Image> {
    check_pair(i, p)?;
    let (mi, mp) = (stack_mean(i), stack_mean(p));
    let n = i.len();
    let acc = chunked_sum(n, i.grid().shape(), |range| {
        let mut acc = Array2::zeros(i.grid().shape());
        for l in range {
            Zip::from(&mut acc)
                .and(i.get(l).values())
                .and(&mi)
                .and(p.get(l).values())
                .and(&mp)
                .for_each(|a, &iv, &im, &pv, &pm| *a += (pv - pm) * (iv - im));
        }
        acc
    });
    Image::from_array(*i.grid(), acc / n as f64)
}

/// Per-pixel pattern variance `⟨Δp_ℓ²⟩_ℓ` (1/N).
pub fn variance_map(p: &PatternStack) -> Result<Image> {
    if p.len() < 2 {
        return Err(Error::TooFewImages {
            needed: 2,
            got: p.len(),
        });
    }
    let mp = stack_mean(p);
    let n = p.len();
    let acc = chunked_sum(n, p.grid().shape(), |range| {
        let mut acc = Array2::zeros(p.grid().shape());
        for l in range {
            Zip::from(&mut acc)
                .and(p.get(l).values())
                .and(&mp)
                .for_each(|a, &v, &m| *a += (v - m) * (v - m));
        }
        acc
    });
    Image::from_array(*p.grid(), acc / n as f64)
}

/// Pattern autocovariance averaged over position and scan index,
/// `C(d) = ⟨Δp_ℓ(r) Δp_ℓ(r + d)⟩_{r,ℓ}`, origin at index (0, 0).
pub fn pattern_autocovariance(p: &PatternStack) -> Result<Image> {
    if p.len() < 2 {
        return Err(Error::TooFewImages {
            needed: 2,
            got: p.len(),
        });
    }
    let g = *p.grid();
    let mp = stack_mean(p);
    let n = p.len();
    let power = chunked_sum(n, g.shape(), |range| {
        let mut acc = Array2::zeros(g.shape());
        for l in range {
            let dp = p.get(l).values() - &mp;
            let spec = fft::fft2_real(&dp);
            Zip::from(&mut acc).and(&spec).for_each(|a, s| *a += s.norm_sqr());
        }
        acc
    });
    let spec = power.mapv(|v| Complex64::new(v, 0.0));
    let auto = fft::ifft2_real(&spec) / (n * g.len()) as f64;
    Image::from_array(g, auto)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// `h_illu ⋆ h_illu` from the illumination OTF.
    #[default]
    Analytic,
    /// Pattern autocovariance measured from the pattern stack.
    Empirical,
}

/// Effective PSF of the covariance image and its transfer function.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    pub kernel: Kernel,
    /// Set when an empirical autocovariance does not look point-like.
    pub warning: Option<String>,
}

/// Peak-to-median ratio below which an empirical autocovariance is flagged.
pub const POINT_LIKE_RATIO: f64 = 10.0;

/// `h_illu ⋆ h_illu`, origin at index (0, 0).
pub fn illumination_autocorrelation(illu: &Kernel) -> Image {
    illu.otf().abs_sqr().to_image()
}

/// Effective PSF `(C · h_det)` normalized to unit sum, with `C` either the
/// analytic illumination autocorrelation or the measured pattern autocovariance.
pub fn covariance_kernel(
    illu: &Kernel,
    det: &Kernel,
    mode: KernelMode,
    patterns: Option<&PatternStack>,
) -> Result<CovarianceKernel> {
    ensure_same_grid(illu.grid(), det.grid())?;
    let (c, warning) = match mode {
        KernelMode::Analytic => (illumination_autocorrelation(illu), None),
        KernelMode::Empirical => {
            let p = patterns.ok_or_else(|| {
                Error::InvalidConfig("empirical kernel mode needs a pattern stack".into())
            })?;
            let c = pattern_autocovariance(p)?;
            let mut mags: Vec<f64> = c.values().iter().map(|v| v.abs()).collect();
            mags.sort_by(|a, b| a.total_cmp(b));
            let median = mags[mags.len() / 2];
            let peak = c.get(0, 0);
            let warning = (peak < POINT_LIKE_RATIO * median).then(|| {
                let msg = format!(
                    "pattern autocovariance is not point-like (peak {peak:.3e}, median {median:.3e})"
                );
                log::warn!("{msg}");
                msg
            });
            (c, warning)
        }
    };
    let psf = c.mul(det.psf())?;
    let kernel = Kernel::from_psf(psf, illu.cutoff() + det.cutoff())?;
    Ok(CovarianceKernel { kernel, warning })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimsConfig {
    /// Deconvolution regularizer, relative to `max|H|²`.
    pub xi: f64,
    /// Shading regularizer, relative to `max(α)²`.
    pub eps: f64,
    pub kernel_mode: KernelMode,
}

impl Default for SimsConfig {
    fn default() -> Self {
        Self {
            xi: 3e-7,
            eps: 1e-2,
            kernel_mode: KernelMode::Analytic,
        }
    }
}

impl SimsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) || !(self.eps >= 0.0) {
            return Err(Error::InvalidConfig(format!("bad covariance config {self:?}")));
        }
        Ok(())
    }
}

/// Clipped Tikhonov deconvolution of a covariance image; `xi` is absolute.
pub fn sims_deconvolve(i_cov: &Image, h: &Spectrum, xi: f64) -> Result<Image> {
    if !(xi > 0.0) {
        return Err(Error::InvalidConfig(format!("xi {xi} must be > 0")));
    }
    tikhonov_deconvolve(i_cov, h, xi, true)
}

/// Regularized division by the shading map, `img·α/(α² + eps)`; `eps` is absolute.
pub fn shading_correct(img: &Image, alpha: &Image, eps: f64) -> Result<Image> {
    ensure_same_grid(img.grid(), alpha.grid())?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidConfig(format!("eps {eps} must be ≥ 0")));
    }
    if alpha.values().iter().any(|&a| a < 0.0) {
        return Err(Error::NegativeInput("shading map".into()));
    }
    if eps == 0.0 && alpha.values().iter().any(|&a| a == 0.0) {
        return Err(Error::IllPosed("zero shading with eps = 0".into()));
    }
    img.zip_map(alpha, |v, a| {
        let d = a * a + eps;
        if d > 0.0 {
            v * a / d
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct SimsResult {
    pub i_cov: Image,
    pub i_cov_dec: Image,
    pub alpha_map: Image,
    pub i_sims: Image,
    pub psf_eff: Image,
    pub effective_otf: Spectrum,
    pub kernel_warning: Option<String>,
}

/// Shared tail of both pipelines: deconvolve with `kernel`, then shading-correct.
pub(crate) fn finish(
    i_cov: Image,
    kernel: &Kernel,
    patterns: &PatternStack,
    cfg: &SimsConfig,
    kernel_warning: Option<String>,
) -> Result<SimsResult> {
    let xi = cfg.xi * kernel.otf().max_abs().powi(2);
    let i_cov_dec = sims_deconvolve(&i_cov, kernel.otf(), xi)?;
    let alpha_map = variance_map(patterns)?;
    let eps = cfg.eps * alpha_map.max().powi(2);
    let i_sims = shading_correct(&i_cov_dec, &alpha_map, eps)?;
    Ok(SimsResult {
        i_cov,
        i_cov_dec,
        alpha_map,
        i_sims,
        psf_eff: kernel.psf().clone(),
        effective_otf: kernel.otf().clone(),
        kernel_warning,
    })
}

/// Covariance reconstruction from measurements and a given pattern stack
/// (estimated, or ground truth for ablation).
pub fn sims_reconstruct(
    stack: &ImageStack,
    patterns: &PatternStack,
    kernels: &Kernels,
    cfg: &SimsConfig,
) -> Result<SimsResult> {
    cfg.validate()?;
    let i_cov = covariance_image(stack, patterns)?;
    let ck = covariance_kernel(&kernels.illu, &kernels.det, cfg.kernel_mode, Some(patterns))?;
    finish(i_cov, &ck.kernel, patterns, cfg, ck.warning)
}

/// Blind pipeline: pattern estimation followed by covariance reconstruction.
pub fn pe_sims(
    stack: &ImageStack,
    kernels: &Kernels,
    pe_cfg: PeConfig,
    cfg: &SimsConfig,
) -> Result<(PeResult, SimsResult)> {
    cfg.validate()?;
    let pe = estimate_all(stack, kernels, pe_cfg)?;
    let sims = sims_reconstruct(stack, &pe.patterns, kernels, cfg)?;
    Ok((pe, sims))
}
