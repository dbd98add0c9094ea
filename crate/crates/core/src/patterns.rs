//! Pattern stacks, projection through the illumination optics, and the
//! forward imaging model `I = (o·p) ⊗ h_det`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, GridSpec, Image};
use crate::optics::{convolve, Kernel};

/// Ordered images sharing one grid, with the scan shift (µm) of each member.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    grid: GridSpec,
    images: Vec<Image>,
    shifts: Vec<(f64, f64)>,
}

pub type PatternStack = Stack;
pub type ImageStack = Stack;

impl Stack {
    pub fn new(images: Vec<Image>, shifts: Vec<(f64, f64)>) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyStack)?;
        let grid = *first.grid();
        for img in &images {
            ensure_same_grid(&grid, img.grid())?;
        }
        if shifts.len() != images.len() {
            return Err(Error::CountMismatch(images.len(), shifts.len()));
        }
        Ok(Self {
            grid,
            images,
            shifts,
        })
    }

    /// Stack with all shifts zero.
    pub fn from_images(images: Vec<Image>) -> Result<Self> {
        let n = images.len();
        Self::new(images, vec![(0.0, 0.0); n])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn shifts(&self) -> &[(f64, f64)] {
        &self.shifts
    }

    pub fn get(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Image> {
        self.images.iter()
    }

    /// Pixel-wise mean over members.
    pub fn mean(&self) -> Image {
        let mut acc = Image::zeros(self.grid);
        for img in &self.images {
            *acc.values_mut() += img.values();
        }
        acc.scaled(1.0 / self.len() as f64)
    }

    /// Applies `f` to every member in parallel, keeping the shifts.
    pub fn map_par<F>(&self, f: F) -> Result<Stack>
    where
        F: Fn(&Image) -> Result<Image> + Sync + Send,
    {
        let images = self.images.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        Stack::new(images, self.shifts.clone())
    }
}

/// Raster scan in units of the detection PSF FWHM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub nx: usize,
    pub ny: usize,
    /// Step per scan position, in detection-PSF FWHM.
    pub step: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self {
            nx: 20,
            ny: 20,
            step: 0.6,
        }
    }
}

/// A scan grid resolved to whole-pixel steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub nx: usize,
    pub ny: usize,
    pub step_px: usize,
}

impl ScanPlan {
    pub fn count(&self) -> usize {
        self.nx * self.ny
    }

    /// Pixel offsets `(dx, dy)` of each scan position, x fastest.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        (0..self.ny)
            .flat_map(|iy| (0..self.nx).map(move |ix| (ix * self.step_px, iy * self.step_px)))
            .collect()
    }
}

impl ScanGrid {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || !(self.step > 0.0) {
            return Err(Error::InvalidConfig(format!("bad scan grid {self:?}")));
        }
        Ok(())
    }

    /// Converts the step to pixels through the detection PSF width and rounds it.
    pub fn resolve(&self, det: &Kernel) -> Result<ScanPlan> {
        self.validate()?;
        let step_px = self.step * det.fwhm()? / det.grid().pitch;
        if step_px < 1.0 {
            return Err(Error::StepTooSmall { step_px });
        }
        Ok(ScanPlan {
            nx: self.nx,
            ny: self.ny,
            step_px: step_px.round() as usize,
        })
    }
}

/// How the members of a random-pattern stack relate to one another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomMode {
    /// One random pattern circularly shifted to every scan position.
    #[default]
    Shifted,
    /// An independent draw per scan position.
    Independent,
}

fn random_binary(grid: GridSpec, fill: f64, rng: &mut ChaCha8Rng) -> Image {
    let n = grid.len();
    let on = (fill * n as f64).round() as usize;
    let mut img = Image::zeros(grid);
    let w = grid.width;
    for idx in sample(rng, n, on) {
        img.set(idx % w, idx / w, 1.0);
    }
    img
}

fn shifts_um(grid: &GridSpec, plan: &ScanPlan) -> Vec<(f64, f64)> {
    plan.offsets()
        .into_iter()
        .map(|(dx, dy)| (dx as f64 * grid.pitch, dy as f64 * grid.pitch))
        .collect()
}

/// Binary DMD patterns with exactly `round(fill·N)` pixels on per member.
pub fn random_dmd_stack(
    grid: GridSpec,
    plan: &ScanPlan,
    fill: f64,
    seed: u64,
    mode: RandomMode,
) -> Result<PatternStack> {
    if !(fill > 0.0 && fill < 1.0) {
        return Err(Error::InvalidConfig(format!("fill {fill} must lie in (0, 1)")));
    }
    let offsets = plan.offsets();
    let images: Vec<Image> = match mode {
        RandomMode::Shifted => {
            let base = random_binary(grid, fill, &mut ChaCha8Rng::seed_from_u64(seed));
            offsets
                .par_iter()
                .map(|&(dx, dy)| base.roll(dx as i64, dy as i64))
                .collect()
        }
        RandomMode::Independent => (0..offsets.len())
            .into_par_iter()
            .map(|l| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(l as u64 + 1);
                random_binary(grid, fill, &mut rng)
            })
            .collect(),
    };
    Stack::new(images, shifts_um(&grid, plan))
}

/// Multi-spot patterns: square spots one scan step wide on a lattice of
/// `period_steps` steps, scanned over one full unit cell.
///
/// Only whole unit cells are lit; a remainder strip at the far field edges
/// stays dark when the field is not a multiple of the lattice period.
pub fn multispot_dmd_stack(grid: GridSpec, plan: &ScanPlan, period_steps: usize) -> Result<PatternStack> {
    if period_steps == 0 || plan.nx != period_steps || plan.ny != period_steps {
        return Err(Error::InvalidConfig(format!(
            "multi-spot scan must be {period_steps}×{period_steps}, got {}×{}",
            plan.nx, plan.ny
        )));
    }
    let s = plan.step_px;
    let period = period_steps * s;
    if period > grid.width.min(grid.height) {
        return Err(Error::Tiling {
            period_px: period,
            extent: grid.width.min(grid.height),
        });
    }
    let (cells_x, cells_y) = (grid.width / period, grid.height / period);
    let images = plan
        .offsets()
        .into_par_iter()
        .map(|(dx, dy)| {
            let mut img = Image::zeros(grid);
            for m in 0..cells_y {
                for n in 0..cells_x {
                    for y in 0..s {
                        for x in 0..s {
                            img.set(n * period + dx + x, m * period + dy + y, 1.0);
                        }
                    }
                }
            }
            img
        })
        .collect();
    Stack::new(images, shifts_um(&grid, plan))
}

/// Fraction of nonzero pixels.
pub fn fill_fraction(img: &Image) -> f64 {
    img.values().iter().filter(|&&v| v != 0.0).count() as f64 / img.grid().len() as f64
}

/// Pattern in the sample plane, `p = t ⊗ h_illu`.
pub fn project_pattern(t: &Image, illu: &Kernel) -> Result<Image> {
    let mut p = convolve(t, illu)?;
    // A nonnegative pattern through a nonnegative PSF; only round-off can go below zero.
    p.clip_negative();
    Ok(p)
}

pub fn project_stack(dmd: &PatternStack, illu: &Kernel) -> Result<PatternStack> {
    dmd.map_par(|t| project_pattern(t, illu))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum NoiseSpec {
    #[default]
    None,
    /// Additive white Gaussian noise with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Poisson counts of `photons · I`, rescaled back by `1/photons`.
    Poisson { photons: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Gaussian { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            NoiseSpec::Poisson { photons } if photons > 0.0 && photons.is_finite() => Ok(()),
            other => Err(Error::InvalidConfig(format!("bad noise spec {other:?}"))),
        }
    }

    fn apply(&self, img: &mut Image, rng: &mut ChaCha8Rng) {
        match *self {
            NoiseSpec::None => {}
            NoiseSpec::Gaussian { sigma } => {
                if sigma > 0.0 {
                    let d = Normal::new(0.0, sigma).expect("validated sigma");
                    img.values_mut().mapv_inplace(|v| v + d.sample(rng));
                }
            }
            NoiseSpec::Poisson { photons } => {
                img.values_mut().mapv_inplace(|v| {
                    let lambda = v * photons;
                    if lambda > 0.0 {
                        Poisson::new(lambda).expect("positive rate").sample(rng) / photons
                    } else {
                        0.0
                    }
                });
            }
        }
    }
}

fn check_nonnegative(img: &Image, what: &str) -> Result<()> {
    let floor = -1e-9 * img.max().abs().max(1.0);
    if img.values().iter().any(|&v| v < floor) {
        return Err(Error::NegativeInput(what.into()));
    }
    Ok(())
}

/// One measurement `I = (o·p) ⊗ h_det`, with optional noise drawn from `seed`.
pub fn forward(o: &Image, p: &Image, det: &Kernel, noise: NoiseSpec, seed: u64) -> Result<Image> {
    ensure_same_grid(o.grid(), p.grid())?;
    check_nonnegative(o, "object")?;
    check_nonnegative(p, "pattern")?;
    noise.validate()?;
    let mut img = convolve(&o.mul(p)?, det)?;
    if noise != NoiseSpec::None {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        noise.apply(&mut img, &mut rng);
    }
    Ok(img)
}

/// Measurement stack for every pattern; member `ℓ` draws noise from stream `ℓ`.
pub fn simulate_stack(
    o: &Image,
    patterns: &PatternStack,
    det: &Kernel,
    noise: NoiseSpec,
    seed: u64,
) -> Result<ImageStack> {
    ensure_same_grid(o.grid(), patterns.grid())?;
    check_nonnegative(o, "object")?;
    noise.validate()?;
    let images = patterns
        .images()
        .par_iter()
        .enumerate()
        .map(|(l, p)| {
            check_nonnegative(p, "pattern")?;
            let mut img = convolve(&o.mul(p)?, det)?;
            if noise != NoiseSpec::None {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(l as u64 + 1);
                noise.apply(&mut img, &mut rng);
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    Stack::new(images, patterns.shifts().to_vec())
}
