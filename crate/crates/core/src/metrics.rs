//! Resolution and contrast readouts: Siemens-star azimuthal contrast, MTF
//! sweeps, FWHM and two-point analysis.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::Image;

/// How the modulation along a circle is turned into a contrast value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastMethod {
    /// Amplitude of the spoke harmonic relative to the mean, `2|F_N|/|F_0|`.
    #[default]
    Harmonic,
    /// Michelson contrast of per-period maxima and minima, averaged over the circle.
    PeriodExtrema,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastOptions {
    pub method: ContrastMethod,
    /// Fourier upsampling factor applied before bilinear interpolation.
    pub upsample: usize,
    pub samples_per_period: usize,
}

impl Default for ContrastOptions {
    fn default() -> Self {
        Self {
            method: ContrastMethod::Harmonic,
            upsample: 4,
            samples_per_period: 32,
        }
    }
}

/// Band-limited interpolant of an image, sampled on a finer grid.
pub struct ContrastProbe {
    fine: Array2<f64>,
    factor: usize,
    pitch: f64,
    options: ContrastOptions,
}

impl ContrastProbe {
    pub fn new(img: &Image, options: ContrastOptions) -> Result<Self> {
        if options.upsample == 0 {
            return Err(Error::InvalidConfig("upsample factor must be ≥ 1".into()));
        }
        if options.samples_per_period < 8 {
            return Err(Error::Sampling(format!(
                "{} samples per period; need at least 8",
                options.samples_per_period
            )));
        }
        Ok(Self {
            fine: fourier_upsample(img.values(), options.upsample),
            factor: options.upsample,
            pitch: img.grid().pitch,
            options,
        })
    }

    /// Contrast of the `spokes`-fold modulation on the circle of `radius` µm
    /// around `center` (pixel coordinates of the original grid).
    pub fn contrast(&self, center: (f64, f64), radius: f64, spokes: usize) -> Result<f64> {
        let (h, w) = self.fine.dim();
        let f = self.factor as f64;
        let r_px = radius / self.pitch * f;
        let (cx, cy) = (center.0 * f, center.1 * f);
        if spokes < 2 || !(r_px > 0.0) {
            return Err(Error::Sampling(format!(
                "radius {radius} µm with {spokes} spokes"
            )));
        }
        if cx - r_px < 0.0 || cy - r_px < 0.0 || cx + r_px > (w - 1) as f64 || cy + r_px > (h - 1) as f64 {
            return Err(Error::Sampling(format!(
                "circle of radius {radius} µm leaves the field"
            )));
        }
        let period_px = 2.0 * PI * r_px / spokes as f64;
        if period_px < 2.0 {
            return Err(Error::Sampling(format!(
                "local period {:.3} px of the interpolant is below 2 px",
                period_px
            )));
        }
        let spp = self.options.samples_per_period;
        let m = spokes * spp;
        let offset = match self.options.method {
            ContrastMethod::Harmonic => 0.0,
            // each block then spans one full period starting at a trough
            ContrastMethod::PeriodExtrema => -PI / spokes as f64,
        };
        let profile: Vec<f64> = (0..m)
            .map(|j| {
                let th = (j as f64 + 0.5) / m as f64 * 2.0 * PI + offset;
                bilinear(&self.fine, cx + r_px * th.cos(), cy + r_px * th.sin())
            })
            .collect();
        Ok(match self.options.method {
            ContrastMethod::Harmonic => harmonic_contrast(&profile, spokes),
            ContrastMethod::PeriodExtrema => extrema_contrast(&profile, spp),
        })
    }
}

fn harmonic_contrast(profile: &[f64], harmonic: usize) -> f64 {
    let m = profile.len() as f64;
    let f0: f64 = profile.iter().sum();
    if f0 <= 0.0 {
        return 0.0;
    }
    let fk: Complex64 = profile
        .iter()
        .enumerate()
        .map(|(j, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (harmonic * j) as f64 / m))
        .sum();
    2.0 * fk.norm() / f0
}

fn extrema_contrast(profile: &[f64], spp: usize) -> f64 {
    let blocks = profile.len() / spp;
    let (mut hi, mut lo) = (0.0, 0.0);
    for block in profile.chunks(spp) {
        hi += block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lo += block.iter().cloned().fold(f64::INFINITY, f64::min);
    }
    let (hi, lo) = (hi / blocks as f64, lo / blocks as f64);
    if hi + lo <= 0.0 {
        0.0
    } else {
        ((hi - lo) / (hi + lo)).max(0.0)
    }
}

/// Contrast of a single circle; builds a fresh interpolant on every call.
pub fn azimuthal_contrast(
    img: &Image,
    center: (f64, f64),
    radius: f64,
    spokes: usize,
    options: ContrastOptions,
) -> Result<f64> {
    ContrastProbe::new(img, options)?.contrast(center, radius, spokes)
}

/// Zero-padded spectral interpolation by an integer factor (periodic).
pub fn fourier_upsample(values: &Array2<f64>, factor: usize) -> Array2<f64> {
    if factor == 1 {
        return values.clone();
    }
    let (h, w) = values.dim();
    let spec = fft::fft2_real(values);
    let (hh, ww) = (h * factor, w * factor);
    let mut big = Array2::<Complex64>::zeros((hh, ww));
    // Nyquist bins of an even grid are split evenly between ±N/2.
    let map = |k: usize, n: usize, nn: usize| -> Vec<(usize, f64)> {
        if n % 2 == 0 && k == n / 2 {
            vec![(nn - n / 2, 0.5), (n / 2, 0.5)]
        } else if k < n / 2 || (n % 2 == 1 && k <= n / 2) {
            vec![(k, 1.0)]
        } else {
            vec![(nn - (n - k), 1.0)]
        }
    };
    for r in 0..h {
        for (rr, wr) in map(r, h, hh) {
            for c in 0..w {
                for (cc, wc) in map(c, w, ww) {
                    big[[rr, cc]] += spec[[r, c]] * (wr * wc);
                }
            }
        }
    }
    let scale = (factor * factor) as f64;
    fft::ifft2_real(&big).mapv(|v| v * scale)
}

/// Bilinear interpolation with periodic wrap; `x` is the column coordinate.
pub fn bilinear(values: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = values.dim();
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let xi = (x0 as i64).rem_euclid(w as i64) as usize;
    let yi = (y0 as i64).rem_euclid(h as i64) as usize;
    let (x1, y1) = ((xi + 1) % w, (yi + 1) % h);
    values[[yi, xi]] * (1.0 - fx) * (1.0 - fy)
        + values[[yi, x1]] * fx * (1.0 - fy)
        + values[[y1, xi]] * (1.0 - fx) * fy
        + values[[y1, x1]] * fx * fy
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtfSample {
    pub radius: f64,
    pub period: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfCurve {
    pub spokes: usize,
    pub samples: Vec<MtfSample>,
}

/// Range of local periods swept by [`mtf_curve`], in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub period_min: f64,
    pub period_max: f64,
    pub steps: usize,
}

impl Sweep {
    /// 0.3–1.5 Abbe periods in 0.0025-Abbe steps.
    pub fn abbe_units(abbe: f64) -> Self {
        Self {
            period_min: 0.3 * abbe,
            period_max: 1.5 * abbe,
            steps: 481,
        }
    }
}

/// Contrast against local period over a radius sweep (radii increasing).
pub fn mtf_curve(
    img: &Image,
    center: (f64, f64),
    spokes: usize,
    sweep: Sweep,
    options: ContrastOptions,
) -> Result<MtfCurve> {
    if sweep.steps < 2 || !(sweep.period_min > 0.0) || sweep.period_max <= sweep.period_min {
        return Err(Error::InvalidConfig(format!("bad sweep {sweep:?}")));
    }
    let probe = ContrastProbe::new(img, options)?;
    let samples = (0..sweep.steps)
        .map(|i| {
            let period = sweep.period_min
                + (sweep.period_max - sweep.period_min) * i as f64 / (sweep.steps - 1) as f64;
            let radius = spokes as f64 * period / (2.0 * PI);
            probe.contrast(center, radius, spokes).map(|contrast| MtfSample {
                radius,
                period,
                contrast,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MtfCurve { spokes, samples })
}

/// Finest period resolved at `threshold`: walking inward from the largest
/// radius, the first period whose contrast falls below the threshold, linearly
/// interpolated against its outer neighbour.
pub fn resolution_at(curve: &MtfCurve, threshold: f64) -> Result<f64> {
    let s = &curve.samples;
    let last = s.len().checked_sub(1).ok_or(Error::OutOfRange { threshold })?;
    if s[last].contrast < threshold {
        return Err(Error::OutOfRange { threshold });
    }
    for i in (0..last).rev() {
        let (outer, inner) = (&s[i + 1], &s[i]);
        if inner.contrast < threshold {
            let t = (outer.contrast - threshold) / (outer.contrast - inner.contrast);
            return Ok(outer.period + t * (inner.period - outer.period));
        }
    }
    Err(Error::OutOfRange { threshold })
}

/// Full width at half maximum of the global peak, in samples, from linearly
/// interpolated half-maximum crossings.
pub fn fwhm(profile: &[f64]) -> Result<f64> {
    let (peak, &max) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Profile("empty profile".into()))?;
    if !(max > 0.0) {
        return Err(Error::Profile("profile has no positive peak".into()));
    }
    let half = 0.5 * max;
    let left = (0..peak).rev().find(|&i| profile[i] < half).map(|i| {
        let (a, b) = (profile[i], profile[i + 1]);
        i as f64 + (half - a) / (b - a)
    });
    let right = (peak + 1..profile.len()).find(|&i| profile[i] < half).map(|i| {
        let (a, b) = (profile[i - 1], profile[i]);
        (i - 1) as f64 + (a - half) / (a - b)
    });
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::Profile("half maximum not reached on both sides".into())),
    }
}

/// Michelson dip contrast between two known peak positions (fractional sample
/// indices): `(mean peak − midpoint)/(mean peak + midpoint)`, zero when the
/// midpoint is not a dip.
pub fn dip_contrast_at(profile: &[f64], a: f64, b: f64) -> f64 {
    let sample = |x: f64| {
        let i = (x.floor() as usize).min(profile.len() - 2);
        let t = x - i as f64;
        profile[i] * (1.0 - t) + profile[i + 1] * t
    };
    let peaks = 0.5 * (sample(a) + sample(b));
    let mid = sample(0.5 * (a + b));
    if peaks + mid <= 0.0 {
        0.0
    } else {
        ((peaks - mid) / (peaks + mid)).max(0.0)
    }
}

/// One row of the two-Gaussian lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoGaussianEntry {
    /// True center separation in FWHM units.
    pub separation: f64,
    /// Distance between the two apparent maxima, in FWHM units.
    pub apparent: f64,
    pub dip_contrast: f64,
}

/// Dip contrast of two equal unit-FWHM Gaussians against separation,
/// evaluated by dense brute-force sampling.
pub fn two_gaussian_lookup() -> &'static [TwoGaussianEntry] {
    static TABLE: OnceLock<Vec<TwoGaussianEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let sigma = 1.0 / (8.0 * 2f64.ln()).sqrt();
        let g = |x: f64| (-0.5 * (x / sigma).powi(2)).exp();
        (0..=460)
            .filter_map(|i| {
                let s = 0.85 + 0.005 * i as f64;
                let f = |x: f64| g(x - 0.5 * s) + g(x + 0.5 * s);
                let dx = 1e-4;
                let n = (s / dx).ceil() as usize + 1;
                let (xm, fm) = (0..=n)
                    .map(|k| {
                        let x = k as f64 * dx;
                        (x, f(x))
                    })
                    .fold((0.0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
                let mid = f(0.0);
                (xm > 0.0).then(|| TwoGaussianEntry {
                    separation: s,
                    apparent: 2.0 * xm,
                    dip_contrast: (fm - mid) / (fm + mid),
                })
            })
            .collect()
    })
}

/// Separation in FWHM units for a measured dip contrast, with the matching
/// apparent peak distance, by linear interpolation in the lookup.
pub fn separation_from_dip(dip: f64) -> Result<(f64, f64)> {
    let table = two_gaussian_lookup();
    let first = table.first().expect("lookup is non-empty");
    let last = table.last().expect("lookup is non-empty");
    if dip < first.dip_contrast || dip > last.dip_contrast {
        return Err(Error::Profile(format!(
            "dip contrast {dip:.4} outside lookup range [{:.4}, {:.4}]",
            first.dip_contrast, last.dip_contrast
        )));
    }
    for w in table.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if dip <= b.dip_contrast {
            let t = (dip - a.dip_contrast) / (b.dip_contrast - a.dip_contrast);
            return Ok((
                a.separation + t * (b.separation - a.separation),
                a.apparent + t * (b.apparent - a.apparent),
            ));
        }
    }
    Ok((last.separation, last.apparent))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointResult {
    /// Distance between the two apparent maxima, in samples.
    pub peak_distance: f64,
    pub dip_contrast: f64,
    /// Center separation in units of the (unknown) PSF FWHM.
    pub separation_fwhm: f64,
    /// PSF FWHM implied by the apparent peak distance, in samples.
    pub inferred_fwhm: f64,
}

/// Two-point analysis of a bimodal cutline.
pub fn two_point_analysis(profile: &[f64]) -> Result<TwoPointResult> {
    let maxima: Vec<usize> = (1..profile.len().saturating_sub(1))
        .filter(|&i| profile[i] > profile[i - 1] && profile[i] >= profile[i + 1])
        .collect();
    if maxima.len() < 2 {
        return Err(Error::Profile("profile is not bimodal".into()));
    }
    let mut top = maxima.clone();
    top.sort_by(|&a, &b| profile[b].total_cmp(&profile[a]));
    let (i, j) = (top[0].min(top[1]), top[0].max(top[1]));
    let refine = |k: usize| {
        let (a, b, c) = (profile[k - 1], profile[k], profile[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() < f64::EPSILON {
            k as f64
        } else {
            k as f64 + 0.5 * (a - c) / denom
        }
    };
    let (pi, pj) = (refine(i), refine(j));
    let peaks = 0.5 * (profile[i] + profile[j]);
    let dip = profile[i..=j].iter().cloned().fold(f64::INFINITY, f64::min);
    let dip_contrast = (peaks - dip) / (peaks + dip);
    let (separation_fwhm, apparent) = separation_from_dip(dip_contrast)?;
    let peak_distance = pj - pi;
    Ok(TwoPointResult {
        peak_distance,
        dip_contrast,
        separation_fwhm,
        inferred_fwhm: peak_distance / apparent,
    })
}

/// PSF width with the finite bead size removed in quadrature.
pub fn bead_corrected_fwhm(measured: f64, bead: f64) -> Result<f64> {
    if bead > measured {
        return Err(Error::Profile(format!(
            "bead width {bead} exceeds measured width {measured}"
        )));
    }
    Ok((measured * measured - bead * bead).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use proptest::prelude::*;

    fn gaussian(n: usize, center: f64, sigma: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (-0.5 * ((i as f64 - center) / sigma).powi(2)).exp())
            .collect()
    }

    fn star_image(n: usize, spokes: usize) -> Image {
        let g = GridSpec::square(n, 0.05).unwrap();
        let c = n as f64 / 2.0;
        Image::from_fn(g, |x, y| {
            let th = (y as f64 - c).atan2(x as f64 - c);
            1.0 + (spokes as f64 * th).cos()
        })
    }

    #[test]
    fn fwhm_of_gaussian() {
        for &sigma in &[3.0, 3.7, 6.0] {
            let p = gaussian(200, 99.3, sigma);
            let w = fwhm(&p).unwrap();
            assert!((w / (2.3548 * sigma) - 1.0).abs() < 0.01, "{sigma}: {w}");
        }
        assert!(fwhm(&[1.0, 1.0, 1.0]).is_err());
        assert!(fwhm(&[]).is_err());
    }

    #[test]
    fn constant_image_has_zero_contrast() {
        let img = Image::constant(GridSpec::square(64, 0.05).unwrap(), 2.0);
        for method in [ContrastMethod::Harmonic, ContrastMethod::PeriodExtrema] {
            let opts = ContrastOptions {
                method,
                ..Default::default()
            };
            let c = azimuthal_contrast(&img, (32.0, 32.0), 1.0, 16, opts).unwrap();
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn perfect_star_has_unit_contrast() {
        let img = star_image(128, 16);
        for method in [ContrastMethod::Harmonic, ContrastMethod::PeriodExtrema] {
            let opts = ContrastOptions {
                method,
                upsample: 1,
                ..Default::default()
            };
            let c = azimuthal_contrast(&img, (64.0, 64.0), 2.5, 16, opts).unwrap();
            assert!((c - 1.0).abs() < 0.05, "{method:?}: {c}");
        }
    }

    #[test]
    fn contrast_rejects_bad_circles() {
        let img = star_image(64, 16);
        let opts = ContrastOptions::default();
        assert!(azimuthal_contrast(&img, (32.0, 32.0), 5.0, 16, opts).is_err());
        assert!(azimuthal_contrast(&img, (32.0, 32.0), 0.0, 16, opts).is_err());
        assert!(azimuthal_contrast(&img, (32.0, 32.0), 0.01, 40, opts).is_err());
    }

    #[test]
    fn upsample_preserves_samples_and_band_limited_values() {
        let g = GridSpec::square(16, 1.0).unwrap();
        let img = Image::from_fn(g, |x, y| {
            (2.0 * PI * 3.0 * x as f64 / 16.0).cos() + 0.5 * (2.0 * PI * 2.0 * y as f64 / 16.0).sin()
        });
        let up = fourier_upsample(img.values(), 4);
        for y in 0..64 {
            for x in 0..64 {
                let (xf, yf) = (x as f64 / 4.0, y as f64 / 4.0);
                let expect = (2.0 * PI * 3.0 * xf / 16.0).cos()
                    + 0.5 * (2.0 * PI * 2.0 * yf / 16.0).sin();
                assert!((up[[y, x]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_nyquist_cosine_stays_real_and_symmetric() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let img = Image::from_fn(g, |x, _| if x % 2 == 0 { 1.0 } else { -1.0 });
        let up = fourier_upsample(img.values(), 2);
        for x in 0..16 {
            let expect = (PI * x as f64 / 2.0).cos();
            assert!((up[[0, x]] - expect).abs() < 1e-12);
        }
    }

    fn curve(contrasts: &[f64]) -> MtfCurve {
        MtfCurve {
            spokes: 40,
            samples: contrasts
                .iter()
                .enumerate()
                .map(|(i, &c)| MtfSample {
                    radius: 1.0 + i as f64,
                    period: 0.1 * (1.0 + i as f64),
                    contrast: c,
                })
                .collect(),
        }
    }

    #[test]
    fn resolution_interpolates_crossing() {
        let c = curve(&[0.0, 0.005, 0.015, 0.1, 0.4]);
        // crossing between period 0.2 (0.005) and 0.3 (0.015)
        let r = resolution_at(&c, 0.01).unwrap();
        assert!((r - 0.25).abs() < 1e-12);
        // contrast that recovers at small periods is ignored
        let c = curve(&[0.5, 0.005, 0.015, 0.1, 0.4]);
        assert!((resolution_at(&c, 0.01).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn resolution_out_of_range() {
        assert!(matches!(
            resolution_at(&curve(&[0.0, 0.001, 0.002]), 0.01),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            resolution_at(&curve(&[0.2, 0.3, 0.4]), 0.01),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn two_gaussian_round_trip() {
        let table = two_gaussian_lookup();
        for w in table.windows(2) {
            assert!(w[1].dip_contrast > w[0].dip_contrast);
        }
        // brute-force dip of two Gaussians at 1.16 FWHM, sampled finely
        let fw = 40.0;
        let sigma = fw / 2.3548200450309493;
        let s = 1.16 * fw;
        let n = 600;
        let c = 300.0;
        let p: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64;
                (-0.5 * ((x - c - s / 2.0) / sigma).powi(2)).exp()
                    + (-0.5 * ((x - c + s / 2.0) / sigma).powi(2)).exp()
            })
            .collect();
        let res = two_point_analysis(&p).unwrap();
        assert!((res.separation_fwhm - 1.16).abs() <= 0.02, "{res:?}");
        assert!((res.inferred_fwhm - fw).abs() / fw < 0.02, "{res:?}");
    }

    #[test]
    fn bead_quadrature() {
        let v = bead_corrected_fwhm(283.0, 140.0).unwrap();
        assert!((v - 245.9).abs() < 0.1);
        assert!((v / 240.0 - 1.0).abs() < 0.03);
        assert!(bead_corrected_fwhm(100.0, 140.0).is_err());
    }

    #[test]
    fn unimodal_profile_rejected() {
        let p = gaussian(64, 32.0, 4.0);
        assert!(two_point_analysis(&p).is_err());
        assert_eq!(dip_contrast_at(&p, 28.0, 36.0), 0.0);
    }

    proptest! {
        #[test]
        fn resolution_monotone_in_threshold(
            raw in proptest::collection::vec(0.0f64..1.0, 5..40),
            t1 in 0.001f64..0.5,
            dt in 0.0f64..0.3,
        ) {
            let mut c = raw.clone();
            c.sort_by(|a, b| a.total_cmp(b));
            let last = c.len() - 1;
            c[last] = 1.0;
            c[0] = 0.0;
            let cv = curve(&c);
            let t2 = (t1 + dt).min(0.99);
            let r1 = resolution_at(&cv, t1).unwrap();
            let r2 = resolution_at(&cv, t2).unwrap();
            prop_assert!(r2 >= r1 - 1e-12);
        }

        #[test]
        fn contrast_scale_invariant(a in 0.1f64..100.0) {
            let img = star_image(64, 8);
            let opts = ContrastOptions { upsample: 1, ..Default::default() };
            let c1 = azimuthal_contrast(&img, (32.0, 32.0), 0.8, 8, opts).unwrap();
            let c2 = azimuthal_contrast(&img.scaled(a), (32.0, 32.0), 0.8, 8, opts).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
        }
    }
}
