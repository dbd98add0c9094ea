//! Pixel reassignment of shifted pattern–intensity covariances.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{estimate_all, PeConfig, PeResult};
use crate::grid::{Image, Spectrum};
use crate::optics::{fourier_shift, Kernel, Kernels};
use crate::patterns::{ImageStack, PatternStack};
use crate::sims::{check_pair, chunked_sum, finish, illumination_autocorrelation, stack_mean, SimsConfig, SimsResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrConfig {
    /// Radius of the shift disc in detection-PSF FWHM.
    pub radius_fwhm: f64,
    /// Explicit pixel offsets; overrides the disc when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<(i64, i64)>>,
}

impl Default for PrConfig {
    fn default() -> Self {
        Self {
            radius_fwhm: 2.0,
            shifts: None,
        }
    }
}

impl PrConfig {
    pub fn single() -> Self {
        Self {
            radius_fwhm: 0.0,
            shifts: Some(vec![(0, 0)]),
        }
    }

    /// Pixel offsets `r_s` within the configured disc, always containing the
    /// origin and closed under negation.
    pub fn shift_set(&self, det: &Kernel) -> Result<Vec<(i64, i64)>> {
        if let Some(s) = &self.shifts {
            if !s.contains(&(0, 0)) || s.iter().any(|&(x, y)| !s.contains(&(-x, -y))) {
                return Err(Error::InvalidConfig(
                    "shift set must contain the origin and be symmetric".into(),
                ));
            }
            return Ok(s.clone());
        }
        if !(self.radius_fwhm >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "shift radius {} must be ≥ 0",
                self.radius_fwhm
            )));
        }
        let r = self.radius_fwhm * det.fwhm()? / det.grid().pitch;
        let reach = r.floor() as i64;
        let mut out = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if ((dx * dx + dy * dy) as f64).sqrt() <= r + 1e-9 {
                    out.push((dx, dy));
                }
            }
        }
        Ok(out)
    }
}

/// `⟨Δp_ℓ(r − r_s) ΔI_ℓ(r)⟩_ℓ` for an integer pixel offset `r_s`.
pub fn shifted_covariance(i: &ImageStack, p: &PatternStack, shift: (i64, i64)) -> Result<Image> {
    check_pair(i, p)?;
    let (mi, mp) = (stack_mean(i), stack_mean(p));
    shifted_covariance_with_means(i, p, &mi, &mp, shift)
}

fn shifted_covariance_with_means(
    i: &ImageStack,
    p: &PatternStack,
    mi: &Array2<f64>,
    mp: &Array2<f64>,
    (sx, sy): (i64, i64),
) -> Result<Image> {
    let g = *i.grid();
    if sx.unsigned_abs() as usize > g.width / 4 || sy.unsigned_abs() as usize > g.height / 4 {
        return Err(Error::InvalidConfig(format!(
            "shift ({sx}, {sy}) px exceeds a quarter of the field"
        )));
    }
    let (h, w) = (g.height, g.width);
    let mp_shift = Image::from_raw(g, mp.clone()).roll(sx, sy).into_values();
    let n = i.len();
    let acc = chunked_sum(n, (h, w), |range| {
        let mut acc = Array2::zeros((h, w));
        for l in range {
            let ps = p.get(l).roll(sx, sy);
            Zip::from(&mut acc)
                .and(i.get(l).values())
                .and(mi)
                .and(ps.values())
                .and(&mp_shift)
                .for_each(|a, &iv, &im, &pv, &pm| *a += (pv - pm) * (iv - im));
        }
        acc
    });
    Image::from_array(g, acc / n as f64)
}

/// `Σ_s I_cov^s(r + r_s/2, r_s)`: every shifted covariance is moved back by
/// half its offset (Fourier interpolation) and summed.
pub fn accumulate_pr(i: &ImageStack, p: &PatternStack, shifts: &[(i64, i64)]) -> Result<Image> {
    check_pair(i, p)?;
    if shifts.is_empty() {
        return Err(Error::InvalidConfig("empty shift set".into()));
    }
    let g = *i.grid();
    let (mi, mp) = (stack_mean(i), stack_mean(p));
    let parts = shifts
        .par_iter()
        .map(|&s| {
            let cov = shifted_covariance_with_means(i, p, &mi, &mp, s)?;
            Ok(fourier_shift(
                &cov,
                -0.5 * s.0 as f64 * g.pitch,
                -0.5 * s.1 as f64 * g.pitch,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Image::zeros(g);
    for part in &parts {
        *acc.values_mut() += part.values();
    }
    Ok(acc)
}

/// Analytic reassigned PSF `[(h_illu ⋆ h_illu) ⊗ h_det](2r)`, unit-normalized,
/// with its transfer function `|h̃_illu(u/2)|²·h̃_det(u/2)`.
///
/// Closed-form kernels are evaluated at half frequency directly; sampled ones
/// through a twice-finer spectrum obtained by zero padding.
pub fn pr_kernel(illu: &Kernel, det: &Kernel) -> Result<Kernel> {
    crate::grid::ensure_same_grid(illu.grid(), det.grid())?;
    let g = *illu.grid();
    let values = match (illu.otf_at(0.0, 0.0), det.otf_at(0.0, 0.0)) {
        (Some(_), Some(_)) => Array2::from_shape_fn(g.shape(), |(r, c)| {
            let (ux, uy) = (0.5 * g.freq_x(c), 0.5 * g.freq_y(r));
            let a = illu.otf_at(ux, uy).unwrap_or(0.0);
            Complex64::new(a * a * det.otf_at(ux, uy).unwrap_or(0.0), 0.0)
        }),
        _ => half_frequency_samples(&illumination_autocorrelation(illu).spectrum().mul(det.otf())?),
    };
    let dc = values[[0, 0]];
    let otf = Spectrum::from_array(g, values.mapv(|v| v / dc))?;
    let psf = otf.to_image();
    Ok(Kernel::from_parts(psf, otf, illu.cutoff() + det.cutoff()))
}

/// `G(u/2)` on the original frequency grid from the samples `G(u)`, via the
/// spatial function zero-padded to twice the field.
fn half_frequency_samples(spec: &Spectrum) -> Array2<Complex64> {
    let g = *spec.grid();
    let (h, w) = g.shape();
    let spatial = crate::fft::ifft2(spec.values());
    let mut padded = Array2::<Complex64>::zeros((2 * h, 2 * w));
    for r in 0..h {
        for c in 0..w {
            let rr = (crate::grid::wrapped(r, h)).rem_euclid(2 * h as i64) as usize;
            let cc = (crate::grid::wrapped(c, w)).rem_euclid(2 * w as i64) as usize;
            padded[[rr, cc]] = spatial[[r, c]];
        }
    }
    let fine = crate::fft::fft2(&padded);
    // bin k of the padded transform sits at frequency k/2 of the original grid
    Array2::from_shape_fn((h, w), |(r, c)| {
        let rr = crate::grid::wrapped(r, h).rem_euclid(2 * h as i64) as usize;
        let cc = crate::grid::wrapped(c, w).rem_euclid(2 * w as i64) as usize;
        fine[[rr, cc]]
    })
}

/// Reassigned reconstruction from measurements and a given pattern stack.
pub fn sims_pr_reconstruct(
    stack: &ImageStack,
    patterns: &PatternStack,
    kernels: &Kernels,
    cfg: &SimsConfig,
    pr: &PrConfig,
) -> Result<SimsResult> {
    cfg.validate()?;
    let shifts = pr.shift_set(&kernels.det)?;
    let i_pr = accumulate_pr(stack, patterns, &shifts)?;
    let kernel = pr_kernel(&kernels.illu, &kernels.det)?;
    finish(i_pr, &kernel, patterns, cfg, None)
}

/// Blind reassigned pipeline.
pub fn pe_sims_pr(
    stack: &ImageStack,
    kernels: &Kernels,
    pe_cfg: PeConfig,
    cfg: &SimsConfig,
    pr: &PrConfig,
) -> Result<(PeResult, SimsResult)> {
    cfg.validate()?;
    let pe = estimate_all(stack, kernels, pe_cfg)?;
    let res = sims_pr_reconstruct(stack, &pe.patterns, kernels, cfg, pr)?;
    Ok((pe, res))
}
