//! Illumination-pattern estimation from measurements and a deconvolved
//! widefield object, by accelerated projected gradient descent.

use std::time::Instant;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::HalfPlane;
use crate::grid::{ensure_same_grid, Image, Spectrum};
use crate::optics::{convolve, filter, tikhonov_deconvolve, Kernel, Kernels};
use crate::patterns::{ImageStack, PatternStack, Stack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum StepRule {
    /// `η = 1/L` with `L = 2·max(o_est)²·max|h̃_det|²`.
    Lipschitz,
    Fixed { eta: f64 },
}

/// Pattern-estimation settings. `beta` and `delta` are relative to the peak
/// squared magnitude of the detection and illumination OTFs respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    pub beta: f64,
    pub delta: f64,
    pub iters: usize,
    pub step: StepRule,
    /// Zero the momentum whenever the residual increases.
    pub restart: bool,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            delta: 1e-4,
            iters: 50,
            step: StepRule::Lipschitz,
            restart: true,
        }
    }
}

impl PeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.delta >= 0.0) || self.iters == 0 {
            return Err(Error::InvalidConfig(format!("bad pattern-estimation config {self:?}")));
        }
        if let StepRule::Fixed { eta } = self.step {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::InvalidConfig(format!("step size {eta} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Momentum sequence `t_{k+1} = (1 + √(1 + 4t_k²))/2`.
pub fn next_momentum(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

/// Pixel-wise mean of the measurements.
pub fn widefield_average(stack: &ImageStack) -> Result<Image> {
    if stack.is_empty() {
        return Err(Error::EmptyStack);
    }
    Ok(stack.mean())
}

/// Tikhonov-deconvolved widefield estimate, clipped at zero.
pub fn estimate_object(avg: &Image, det: &Kernel, beta: f64) -> Result<Image> {
    if !(beta > 0.0) {
        return Err(Error::InvalidConfig(format!("beta {beta} must be > 0")));
    }
    let reg = beta * det.otf().max_abs().powi(2);
    tikhonov_deconvolve(avg, det.otf(), reg, true)
}

/// Data-fidelity residual `Σ (I − (o_est·p) ⊗ h_det)²`.
pub fn f_diff(p: &Image, i: &Image, o_est: &Image, det: &Kernel) -> Result<f64> {
    let model = convolve(&o_est.mul(p)?, det)?;
    Ok(i.sub(&model)?.energy())
}

/// Gradient of [`f_diff`] with respect to `p`:
/// `−2·o_est·[h_det ⋆ (I − (o_est·p) ⊗ h_det)]`.
pub fn pe_gradient(p: &Image, i: &Image, o_est: &Image, det: &Kernel) -> Result<Image> {
    ensure_same_grid(p.grid(), i.grid())?;
    let residual = i.sub(&convolve(&o_est.mul(p)?, det)?)?;
    let mut spec = residual.spectrum();
    Zip::from(spec.values_mut())
        .and(det.otf().values())
        .for_each(|r, h| *r *= h.conj());
    let back = spec.to_image();
    o_est.zip_map(&back, |o, q| -2.0 * o * q)
}

/// Soft support filter `|h̃|²/(|h̃|² + δ)`; exactly zero where `h̃` vanishes.
fn support_filter(illu: &Kernel, delta: f64) -> Array2<f64> {
    let reg = delta * illu.otf().max_abs().powi(2);
    illu.otf().values().mapv(|h| {
        let a = h.norm_sqr();
        if a == 0.0 {
            0.0
        } else {
            a / (a + reg)
        }
    })
}

/// Applies the soft-edge support filter of the illumination OTF.
pub fn project_support(x: &Image, illu: &Kernel, delta: f64) -> Result<Image> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidConfig(format!("delta {delta} must be ≥ 0")));
    }
    let f = support_filter(illu, delta).mapv(|v| Complex64::new(v, 0.0));
    filter(x, &Spectrum::from_array(*illu.grid(), f)?)
}

/// Per-pattern estimate with its residual trace (entry 0 is the residual of
/// the all-zero start, entry k that after iteration k).
#[derive(Debug, Clone)]
pub struct PatternEstimate {
    pub pattern: Image,
    pub trace: Vec<f64>,
    pub seconds: f64,
}

/// Precomputed state shared by every pattern of one stack.
pub struct PatternEstimator {
    plan: HalfPlane,
    o_est: Array2<f64>,
    h: Array2<Complex64>,
    filt: Array2<f64>,
    eta: f64,
    cfg: PeConfig,
    grid: crate::grid::GridSpec,
}

impl PatternEstimator {
    pub fn new(o_est: &Image, kernels: &Kernels, cfg: PeConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = *o_est.grid();
        ensure_same_grid(&grid, kernels.det.grid())?;
        ensure_same_grid(&grid, kernels.illu.grid())?;
        let plan = HalfPlane::new(grid.width, grid.height);
        let h_max = kernels.det.otf().max_abs();
        let eta = match cfg.step {
            StepRule::Fixed { eta } => eta,
            StepRule::Lipschitz => {
                let lipschitz = 2.0 * o_est.max().powi(2) * h_max * h_max;
                if !(lipschitz > 0.0) {
                    return Err(Error::IllPosed("object estimate is identically zero".into()));
                }
                1.0 / lipschitz
            }
        };
        Ok(Self {
            h: plan.restrict(kernels.det.otf().values()),
            filt: plan.restrict(&support_filter(&kernels.illu, cfg.delta)),
            plan,
            o_est: o_est.values().clone(),
            eta,
            cfg,
            grid,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.eta
    }

    fn residual_spectrum(&self, i_hat: &Array2<Complex64>, op_hat: &Array2<Complex64>) -> Array2<Complex64> {
        let mut r = i_hat.clone();
        Zip::from(&mut r)
            .and(&self.h)
            .and(op_hat)
            .for_each(|r, &h, &a| *r -= h * a);
        r
    }

    /// Runs the iteration for measurement `index`, starting from `init` (zero
    /// when absent).
    pub fn estimate(&self, index: usize, i: &Image, init: Option<&Image>) -> Result<PatternEstimate> {
        ensure_same_grid(&self.grid, i.grid())?;
        let start = Instant::now();
        let (h, w) = (self.grid.height, self.grid.width);
        let i_hat = self.plan.forward(i.values());
        let o = &self.o_est;

        let mut p_prev = match init {
            Some(p0) => {
                ensure_same_grid(&self.grid, p0.grid())?;
                p0.values().clone()
            }
            None => Array2::zeros((h, w)),
        };
        let mut op_prev = self.plan.forward(&(o * &p_prev));
        let mut y = p_prev.clone();
        let mut oy_hat = op_prev.clone();

        let mut cost = self.plan.energy(&self.residual_spectrum(&i_hat, &op_prev));
        let mut trace = Vec::with_capacity(self.cfg.iters + 1);
        trace.push(cost);
        let mut minimum = cost;
        let mut t = 1.0;

        for _ in 0..self.cfg.iters {
            // q = h ⋆ (I − (o·y) ⊗ h)
            let mut r = self.residual_spectrum(&i_hat, &oy_hat);
            Zip::from(&mut r).and(&self.h).for_each(|r, h| *r *= h.conj());
            let q = self.plan.inverse(r);
            // y − η·g with g = −2·o·q
            let two_eta = 2.0 * self.eta;
            let mut z = y;
            Zip::from(&mut z)
                .and(o)
                .and(&q)
                .for_each(|z, &o, &q| *z += two_eta * o * q);
            let mut z_hat = self.plan.forward(&z);
            Zip::from(&mut z_hat).and(&self.filt).for_each(|v, &f| *v *= f);
            let p_new = self.plan.inverse(z_hat);
            let op_new = self.plan.forward(&(o * &p_new));
            let new_cost = self.plan.energy(&self.residual_spectrum(&i_hat, &op_new));
            if !new_cost.is_finite() || new_cost > 10.0 * minimum {
                return Err(Error::Divergence {
                    index,
                    residual: new_cost,
                    minimum,
                });
            }
            let mut t_next = next_momentum(t);
            let mut weight = (t - 1.0) / t_next;
            if self.cfg.restart && new_cost > cost {
                t_next = 1.0;
                weight = 0.0;
            }
            y = &p_new + &((&p_new - &p_prev) * weight);
            oy_hat = &op_new + &((&op_new - &op_prev) * Complex64::new(weight, 0.0));
            p_prev = p_new;
            op_prev = op_new;
            t = t_next;
            cost = new_cost;
            minimum = minimum.min(cost);
            trace.push(cost);
        }
        Ok(PatternEstimate {
            pattern: Image::from_array(self.grid, p_prev)?,
            trace,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Single-pattern convenience wrapper around [`PatternEstimator`].
pub fn estimate_pattern(i: &Image, o_est: &Image, kernels: &Kernels, cfg: PeConfig) -> Result<PatternEstimate> {
    PatternEstimator::new(o_est, kernels, cfg)?.estimate(0, i, None)
}

#[derive(Debug, Clone)]
pub struct PeResult {
    pub patterns: PatternStack,
    pub o_est: Image,
    pub traces: Vec<Vec<f64>>,
    pub seconds: Vec<f64>,
    pub step_size: f64,
}

impl PeResult {
    pub fn mean_seconds(&self) -> f64 {
        self.seconds.iter().sum::<f64>() / self.seconds.len().max(1) as f64
    }
}

/// Widefield average, object estimate, then every pattern independently.
pub fn estimate_all(stack: &ImageStack, kernels: &Kernels, cfg: PeConfig) -> Result<PeResult> {
    cfg.validate()?;
    let avg = widefield_average(stack)?;
    let o_est = estimate_object(&avg, &kernels.det, cfg.beta)?;
    let est = PatternEstimator::new(&o_est, kernels, cfg)?;
    let results = stack
        .images()
        .par_iter()
        .enumerate()
        .map(|(l, img)| est.estimate(l, img, None))
        .collect::<Result<Vec<_>>>()?;
    let mut images = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    let mut seconds = Vec::with_capacity(results.len());
    for r in results {
        images.push(r.pattern);
        traces.push(r.trace);
        seconds.push(r.seconds);
    }
    Ok(PeResult {
        patterns: Stack::new(images, stack.shifts().to_vec())?,
        o_est,
        traces,
        seconds,
        step_size: est.step_size(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, OpticalConfig};
    use crate::patterns::project_pattern;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (OpticalConfig, Kernels) {
        let c = OpticalConfig::with_default_pitch(0.8, 0.5, n).unwrap();
        let k = Kernels::new(&c).unwrap();
        (c, k)
    }

    fn random(grid: GridSpec, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(grid, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn momentum_sequence() {
        let t2 = next_momentum(1.0);
        assert!((t2 - 1.618_033_988_749_895).abs() < 1e-12);
        let t3 = next_momentum(t2);
        assert!((t3 - 2.193_527_085_331_054).abs() < 1e-12);
    }

    #[test]
    fn default_iterations() {
        assert_eq!(PeConfig::default().iters, 50);
    }

    #[test]
    fn averages() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let a = random(g, 1);
        let b = random(g, 2);
        let s = Stack::from_images(vec![a.clone(), b.clone()]).unwrap();
        let avg = widefield_average(&s).unwrap();
        let expect = a.add(&b).unwrap().scaled(0.5);
        assert!(avg.sub(&expect).unwrap().map(f64::abs).max() < 1e-15);
        let same = Stack::from_images(vec![a.clone(); 3]).unwrap();
        assert!(widefield_average(&same).unwrap().sub(&a).unwrap().map(f64::abs).max() < 1e-15);
    }

    #[test]
    fn gradient_zero_at_exact_fit_and_at_zero_pattern() {
        let (c, k) = setup(16);
        let o = random(c.grid, 3);
        let p = random(c.grid, 4);
        let i = convolve(&o.mul(&p).unwrap(), &k.det).unwrap();
        let g = pe_gradient(&p, &i, &o, &k.det).unwrap();
        assert!(g.map(f64::abs).max() < 1e-12);
        let g0 = pe_gradient(&Image::zeros(c.grid), &i, &o, &k.det).unwrap();
        let direct = o
            .zip_map(&convolve(&i, &k.det).unwrap(), |o, v| -2.0 * o * v)
            .unwrap();
        assert!(g0.sub(&direct).unwrap().map(f64::abs).max() < 1e-12);
    }

    #[test]
    fn support_filter_cases() {
        let (c, k) = setup(32);
        let cut = k.illu.cutoff();
        // out-of-band only: a Nyquist checkerboard
        let checker = Image::from_fn(c.grid, |x, y| if (x + y) % 2 == 0 { 1.0 } else { -1.0 });
        let out = project_support(&checker, &k.illu, 1e-2).unwrap();
        assert!(out.map(f64::abs).max() < 1e-12);
        // delta = 0 passes in-band content untouched
        let x = random(c.grid, 5);
        let inband = filter(&x, &Spectrum::from_real_fn(c.grid, |r, col| {
            if c.grid.freq_radius(r, col) < cut { 1.0 } else { 0.0 }
        }))
        .unwrap();
        let pass = project_support(&inband, &k.illu, 0.0).unwrap();
        assert!(pass.sub(&inband).unwrap().map(f64::abs).max() < 1e-12);
        // DC scaled by 1/(1+δ)
        let flat = Image::constant(c.grid, 2.0);
        let d = project_support(&flat, &k.illu, 0.25).unwrap();
        assert!((d.mean() - 2.0 / 1.25).abs() < 1e-12);
        assert!(project_support(&flat, &k.illu, -1.0).is_err());
    }

    #[test]
    fn half_plane_loop_matches_full_plane_operators() {
        // one plain gradient-projection step from zero, computed both ways
        let (c, k) = setup(32);
        let o = random(c.grid, 6);
        let t = random(c.grid, 7).map(|v| if v > 0.8 { 1.0 } else { 0.0 });
        let p = project_pattern(&t, &k.illu).unwrap();
        let i = convolve(&o.mul(&p).unwrap(), &k.det).unwrap();
        let cfg = PeConfig {
            iters: 1,
            delta: 1e-2,
            ..Default::default()
        };
        let est = PatternEstimator::new(&o, &k, cfg).unwrap();
        let got = est.estimate(0, &i, None).unwrap();
        let g = pe_gradient(&Image::zeros(c.grid), &i, &o, &k.det).unwrap();
        let expect = project_support(&g.scaled(-est.step_size()), &k.illu, 1e-2).unwrap();
        assert!(got.pattern.sub(&expect).unwrap().map(f64::abs).max() < 1e-12);
        let f0 = f_diff(&Image::zeros(c.grid), &i, &o, &k.det).unwrap();
        let f1 = f_diff(&expect, &i, &o, &k.det).unwrap();
        assert!((got.trace[0] - f0).abs() < 1e-9 * f0);
        assert!((got.trace[1] - f1).abs() < 1e-9 * f0);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let (c, k) = setup(32);
        let o = random(c.grid, 8);
        let t = random(c.grid, 9).map(|v| if v > 0.9 { 1.0 } else { 0.0 });
        let p = project_pattern(&t, &k.illu).unwrap();
        let i = convolve(&o.mul(&p).unwrap(), &k.det).unwrap();
        let cfg = PeConfig {
            iters: 1,
            delta: 0.0,
            ..Default::default()
        };
        let est = PatternEstimator::new(&o, &k, cfg).unwrap();
        let out = est.estimate(0, &i, Some(&p)).unwrap();
        assert!(out.pattern.sub(&p).unwrap().map(f64::abs).max() < 1e-10);
    }

    #[test]
    fn recovers_band_limited_pattern() {
        let (c, k) = setup(64);
        let o = convolve(&random(c.grid, 10), &k.det).unwrap().map(|v| v + 0.2);
        let t = random(c.grid, 11).map(|v| if v > 0.9 { 1.0 } else { 0.0 });
        let p = project_pattern(&t, &k.illu).unwrap();
        let i = convolve(&o.mul(&p).unwrap(), &k.det).unwrap();
        let out = estimate_pattern(&i, &o, &k, PeConfig::default()).unwrap();
        let ncc = zero_mean_ncc(&out.pattern, &p);
        assert!(ncc >= 0.95, "ncc {ncc}");
        assert!(out.trace.last().unwrap() <= &out.trace[0]);
        assert!(out.pattern.spectrum().max_abs_beyond(k.illu.cutoff()) <= 1e-12 * out.pattern.spectrum().max_abs());
    }

    #[test]
    fn rejects_zero_object_and_bad_config() {
        let (c, k) = setup(16);
        assert!(PatternEstimator::new(&Image::zeros(c.grid), &k, PeConfig::default()).is_err());
        let bad = PeConfig {
            iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(estimate_object(&Image::zeros(c.grid), &k.det, 0.0).is_err());
    }

    #[test]
    fn huge_step_reports_divergence() {
        let (c, k) = setup(32);
        let o = random(c.grid, 12);
        let i = convolve(&o, &k.det).unwrap();
        let cfg = PeConfig {
            step: StepRule::Fixed { eta: 1e3 },
            ..Default::default()
        };
        let est = PatternEstimator::new(&o, &k, cfg).unwrap();
        assert!(matches!(est.estimate(3, &i, None), Err(Error::Divergence { index: 3, .. })));
    }

    fn zero_mean_ncc(a: &Image, b: &Image) -> f64 {
        let (ma, mb) = (a.mean(), b.mean());
        let a = a.map(|v| v - ma);
        let b = b.map(|v| v - mb);
        a.dot(&b).unwrap() / (a.norm() * b.norm())
    }
}
