//! Brute-force direct-sum references shared by the integration suites.
#![allow(dead_code)]

use num_complex::Complex64;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simrecon_core::{GridSpec, Image, Stack};

pub fn random_image(grid: GridSpec, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(grid, |_, _| rng.gen::<f64>())
}

pub fn random_stack(grid: GridSpec, n: usize, seed: u64) -> Stack {
    Stack::from_images((0..n as u64).map(|l| random_image(grid, seed * 1000 + l)).collect()).unwrap()
}

/// `Σ_x a(x)·k(r − x)` with periodic wrap.
pub fn direct_convolve(a: &Image, k: &Image) -> Image {
    let g = *a.grid();
    let (w, h) = (g.width, g.height);
    Image::from_fn(g, |x, y| {
        let mut s = 0.0;
        for yy in 0..h {
            for xx in 0..w {
                s += a.get(xx, yy) * k.get((x + w - xx) % w, (y + h - yy) % h);
            }
        }
        s
    })
}

/// `Σ_r a(r)·b(r + d)` with periodic wrap.
pub fn direct_correlate(a: &Image, b: &Image) -> Image {
    let g = *a.grid();
    let (w, h) = (g.width, g.height);
    Image::from_fn(g, |dx, dy| {
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                s += a.get(x, y) * b.get((x + dx) % w, (y + dy) % h);
            }
        }
        s
    })
}

/// Per-pixel `(1/N)·Σ_ℓ (p_ℓ − p̄)(I_ℓ − Ī)`.
pub fn direct_covariance(i: &Stack, p: &Stack) -> Image {
    let n = i.len() as f64;
    Image::from_fn(*i.grid(), |x, y| {
        let mi = i.iter().map(|v| v.get(x, y)).sum::<f64>() / n;
        let mp = p.iter().map(|v| v.get(x, y)).sum::<f64>() / n;
        i.iter()
            .zip(p.iter())
            .map(|(a, b)| (a.get(x, y) - mi) * (b.get(x, y) - mp))
            .sum::<f64>()
            / n
    })
}

/// `(o·p) ⊗ psf` by direct summation.
pub fn direct_forward(o: &Image, p: &Image, psf: &Image) -> Image {
    direct_convolve(&o.mul(p).unwrap(), psf)
}

/// Unnormalized forward DFT `Σ x(r)·exp(−2πi u·r/N)`.
pub fn direct_dft(values: &Array2<f64>) -> Array2<Complex64> {
    let (h, w) = values.dim();
    Array2::from_shape_fn((h, w), |(v, u)| {
        let mut s = Complex64::new(0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let phase = -2.0 * std::f64::consts::PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                s += values[[y, x]] * Complex64::from_polar(1.0, phase);
            }
        }
        s
    })
}

/// Central finite differences of `f` at every pixel of `p`.
pub fn central_differences(p: &Image, step: f64, f: impl Fn(&Image) -> f64) -> Image {
    let g = *p.grid();
    Image::from_fn(g, |x, y| {
        let mut plus = p.clone();
        plus.set(x, y, p.get(x, y) + step);
        let mut minus = p.clone();
        minus.set(x, y, p.get(x, y) - step);
        (f(&plus) - f(&minus)) / (2.0 * step)
    })
}

pub fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.sub(b).unwrap().map(f64::abs).max()
}

pub fn max_abs(a: &Image) -> f64 {
    a.map(f64::abs).max()
}

pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

fn small_kernels(size: usize) -> simrecon_core::Kernels {
    let cfg = simrecon_core::OpticalConfig::with_default_pitch(0.8, 0.5, size).unwrap();
    simrecon_core::Kernels::new(&cfg).unwrap()
}

/// FFT-based primitives against direct sums on 32² grids, plus Parseval and
/// round-trip checks. Errors are relative to the largest reference magnitude.
pub fn oracle_checks() -> Vec<Check> {
    use simrecon_core::fft::{fft2, fft2_real, ifft2};
    use simrecon_core::optics::{convolve, cross_correlate};
    use simrecon_core::patterns::{forward, NoiseSpec};
    use simrecon_core::sims::covariance_image;

    let k = small_kernels(32);
    let g = *k.det.grid();
    let a = random_image(g, 1);
    let b = random_image(g, 2);
    let rel = |got: &Image, want: &Image| max_abs_diff(got, want) / max_abs(want);

    let mut out = Vec::new();
    let conv = convolve(&a, &k.det).unwrap();
    out.push(Check {
        name: "convolution",
        error: rel(&conv, &direct_convolve(&a, k.det.psf())),
        tolerance: 1e-10,
    });
    out.push(Check {
        name: "correlation",
        error: rel(&cross_correlate(&a, &b).unwrap(), &direct_correlate(&a, &b)),
        tolerance: 1e-10,
    });
    let i = random_stack(g, 7, 3);
    let p = random_stack(g, 7, 4);
    out.push(Check {
        name: "covariance",
        error: rel(&covariance_image(&i, &p).unwrap(), &direct_covariance(&i, &p)),
        tolerance: 1e-10,
    });
    out.push(Check {
        name: "forward model",
        error: rel(
            &forward(&a, &b, &k.det, NoiseSpec::None, 0).unwrap(),
            &direct_forward(&a, &b, k.det.psf()),
        ),
        tolerance: 1e-10,
    });

    let spec = fft2_real(a.values());
    let dft = direct_dft(a.values());
    let dft_err = spec.iter().zip(dft.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
        / dft.iter().map(|c| c.norm()).fold(0.0, f64::max);
    out.push(Check {
        name: "dft",
        error: dft_err,
        tolerance: 1e-10,
    });
    let energy: f64 = a.values().iter().map(|v| v * v).sum();
    let spectral: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / g.len() as f64;
    out.push(Check {
        name: "parseval",
        error: (energy - spectral).abs() / energy,
        tolerance: 1e-12,
    });
    let complex = a.values().mapv(|v| Complex64::new(v, 0.5 * v - 0.25));
    let back = ifft2(&fft2(&complex));
    let rt = back.iter().zip(complex.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
        / complex.iter().map(|c| c.norm()).fold(0.0, f64::max);
    out.push(Check {
        name: "round trip",
        error: rt,
        tolerance: 1e-12,
    });
    out
}

/// Largest deviation of `pe_gradient` from central finite differences over
/// `instances` random 16² problems, relative to the largest gradient component
/// of each instance.
pub fn gradient_oracle_error(instances: u64) -> f64 {
    use simrecon_core::estimation::{f_diff, pe_gradient};
    use simrecon_core::optics::convolve;

    let k = small_kernels(16);
    let g = *k.det.grid();
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let o = random_image(g, 100 + s);
        let truth = random_image(g, 200 + s);
        let i = convolve(&o.mul(&truth).unwrap(), &k.det).unwrap();
        let p = random_image(g, 300 + s);
        let grad = pe_gradient(&p, &i, &o, &k.det).unwrap();
        let fd = central_differences(&p, 1e-3, |q| f_diff(q, &i, &o, &k.det).unwrap());
        worst = worst.max(max_abs_diff(&grad, &fd) / max_abs(&fd));
    }
    worst
}
