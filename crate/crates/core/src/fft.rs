//! 2D FFT helpers on row-major `[y, x]` arrays.
//!
//! Plans are cached process-wide; each call allocates its own working
//! buffers, so the helpers are safe to use from several threads at once.

use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

fn complex_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let mut planner = PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .expect("fft planner poisoned");
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

fn real_planner() -> std::sync::MutexGuard<'static, RealFftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<RealFftPlanner<f64>>> = OnceLock::new();
    PLANNER
        .get_or_init(|| Mutex::new(RealFftPlanner::new()))
        .lock()
        .expect("real fft planner poisoned")
}

/// Runs `plan` over every column of a `(rows, cols)` row-major buffer.
fn process_columns(data: &mut [Complex64], rows: usize, cols: usize, plan: &dyn Fft<f64>) {
    let mut t = vec![Complex64::default(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = data[r * cols + c];
        }
    }
    plan.process(&mut t);
    for c in 0..cols {
        for r in 0..rows {
            data[r * cols + c] = t[c * rows + r];
        }
    }
}

fn fft2_inplace(data: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = data.dim();
    let row_plan = complex_plan(w, inverse);
    let col_plan = complex_plan(h, inverse);
    let slice = data
        .as_slice_mut()
        .expect("fft2 expects a standard-layout array");
    row_plan.process(slice);
    process_columns(slice, h, w, col_plan.as_ref());
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for v in slice.iter_mut() {
            *v *= scale;
        }
    }
}

/// Forward 2D DFT (unnormalized).
pub fn fft2(data: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = data.as_standard_layout().into_owned();
    fft2_inplace(&mut out, false);
    out
}

/// Inverse 2D DFT with 1/N normalization.
pub fn ifft2(data: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = data.as_standard_layout().into_owned();
    fft2_inplace(&mut out, true);
    out
}

pub fn fft2_real(data: &Array2<f64>) -> Array2<Complex64> {
    let mut out = data.mapv(|v| Complex64::new(v, 0.0));
    fft2_inplace(&mut out, false);
    out
}

/// Inverse 2D DFT keeping only the real part.
pub fn ifft2_real(data: &Array2<Complex64>) -> Array2<f64> {
    ifft2(data).mapv(|c| c.re)
}

/// Real-input 2D transform on the half plane `(h, w/2 + 1)`.
///
/// Used by the inner loops that only ever see real images and real-symmetric
/// transfer functions; roughly halves the cost of the full complex path.
pub struct HalfPlane {
    width: usize,
    height: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl HalfPlane {
    pub fn new(width: usize, height: usize) -> Self {
        let (r2c, c2r) = {
            let mut p = real_planner();
            (p.plan_fft_forward(width), p.plan_fft_inverse(width))
        };
        Self {
            width,
            height,
            r2c,
            c2r,
            col_fwd: complex_plan(height, false),
            col_inv: complex_plan(height, true),
        }
    }

    pub fn half_width(&self) -> usize {
        self.width / 2 + 1
    }

    pub fn forward(&self, data: &Array2<f64>) -> Array2<Complex64> {
        let (h, w) = (self.height, self.width);
        let hw = self.half_width();
        debug_assert_eq!(data.dim(), (h, w));
        let mut out = vec![Complex64::default(); h * hw];
        let mut row = vec![0.0; w];
        let mut scratch = self.r2c.make_scratch_vec();
        for (y, chunk) in out.chunks_mut(hw).enumerate() {
            for (dst, src) in row.iter_mut().zip(data.row(y).iter()) {
                *dst = *src;
            }
            self.r2c
                .process_with_scratch(&mut row, chunk, &mut scratch)
                .expect("r2c length mismatch");
        }
        process_columns(&mut out, h, hw, self.col_fwd.as_ref());
        Array2::from_shape_vec((h, hw), out).expect("shape")
    }

    /// Inverse transform with 1/N normalization. Consumes its input.
    pub fn inverse(&self, spectrum: Array2<Complex64>) -> Array2<f64> {
        let (h, w) = (self.height, self.width);
        let hw = self.half_width();
        let mut buf = spectrum.into_raw_vec_and_offset().0;
        process_columns(&mut buf, h, hw, self.col_inv.as_ref());
        let mut out = Array2::zeros((h, w));
        let mut row_out = vec![0.0; w];
        let mut scratch = self.c2r.make_scratch_vec();
        let scale = 1.0 / (h * w) as f64;
        for (y, chunk) in buf.chunks_mut(hw).enumerate() {
            // DC and Nyquist columns of a real image are real per row.
            chunk[0].im = 0.0;
            chunk[hw - 1].im = 0.0;
            self.c2r
                .process_with_scratch(chunk, &mut row_out, &mut scratch)
                .expect("c2r length mismatch");
            for (dst, src) in out.row_mut(y).iter_mut().zip(row_out.iter()) {
                *dst = src * scale;
            }
        }
        out
    }

    /// `Σ|x|²` of the real image whose half spectrum is given (Parseval).
    pub fn energy(&self, spectrum: &Array2<Complex64>) -> f64 {
        let hw = self.half_width();
        let mut total = 0.0;
        for row in spectrum.rows() {
            for (c, v) in row.iter().enumerate() {
                let weight = if c == 0 || c == hw - 1 { 1.0 } else { 2.0 };
                total += weight * v.norm_sqr();
            }
        }
        total / (self.width * self.height) as f64
    }

    /// Slice of a full-plane array onto the half plane.
    pub fn restrict<T: Clone>(&self, full: &Array2<T>) -> Array2<T> {
        let hw = self.half_width();
        full.slice(ndarray::s![.., 0..hw]).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.gen::<f64>() - 0.5)
    }

    fn naive_dft(a: &Array2<f64>) -> Array2<Complex64> {
        let (h, w) = a.dim();
        Array2::from_shape_fn((h, w), |(ky, kx)| {
            let mut acc = Complex64::default();
            for y in 0..h {
                for x in 0..w {
                    let ph = -2.0
                        * std::f64::consts::PI
                        * ((kx * x) as f64 / w as f64 + (ky * y) as f64 / h as f64);
                    acc += a[[y, x]] * Complex64::from_polar(1.0, ph);
                }
            }
            acc
        })
    }

    #[test]
    fn matches_naive_dft() {
        let a = random(8, 12, 1);
        let fast = fft2_real(&a);
        let slow = naive_dft(&a);
        for (f, s) in fast.iter().zip(slow.iter()) {
            assert!((f - s).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip() {
        let a = random(16, 32, 2);
        let back = ifft2_real(&fft2_real(&a));
        let err = (&back - &a).mapv(f64::abs).fold(0.0_f64, |m, &v| m.max(v));
        assert!(err < 1e-13);
    }

    #[test]
    fn half_plane_agrees_with_full() {
        let a = random(16, 24, 3);
        let plan = HalfPlane::new(24, 16);
        let half = plan.forward(&a);
        let full = fft2_real(&a);
        let restricted = plan.restrict(&full);
        for (x, y) in half.iter().zip(restricted.iter()) {
            assert!((x - y).norm() < 1e-10);
        }
        let back = plan.inverse(half.clone());
        let err = (&back - &a).mapv(f64::abs).fold(0.0_f64, |m, &v| m.max(v));
        assert!(err < 1e-13);
        let e: f64 = a.iter().map(|v| v * v).sum();
        assert!((plan.energy(&half) - e).abs() < 1e-10 * e);
    }
}
