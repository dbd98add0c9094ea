//! JSON run configuration shared by every subcommand.

use serde::{Deserialize, Serialize};

use simrecon_core::estimation::{PeConfig, StepRule};
use simrecon_core::patterns::{NoiseSpec, RandomMode, ScanGrid};
use simrecon_core::reassignment::PrConfig;
use simrecon_core::sims::{KernelMode, SimsConfig};
use simrecon_core::simulate::{PatternSpec, Phantom, SimulationConfig};
use simrecon_core::{Error, GridSpec, OpticalConfig, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalSection {
    pub na: f64,
    /// µm
    pub lambda_illu: f64,
    /// µm
    pub lambda_det: f64,
    /// µm; defaults to λ_det/(8·NA).
    pub pitch: Option<f64>,
    /// Side length of the square field in pixels.
    pub grid: usize,
}

impl Default for OpticalSection {
    fn default() -> Self {
        Self {
            na: 0.8,
            lambda_illu: 0.5,
            lambda_det: 0.5,
            pitch: None,
            grid: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub nx: usize,
    pub ny: usize,
    /// Step in detection-PSF FWHM.
    pub step_fwhm: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        let s = ScanGrid::default();
        Self {
            nx: s.nx,
            ny: s.ny,
            step_fwhm: s.step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternMode {
    #[default]
    Random,
    Multispot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternSection {
    pub mode: PatternMode,
    pub fill: f64,
    /// Multi-spot period in scan steps.
    pub period_steps: usize,
    pub seed: u64,
    pub draw: RandomMode,
}

impl Default for PatternSection {
    fn default() -> Self {
        Self {
            mode: PatternMode::Random,
            fill: 0.1,
            period_steps: 6,
            seed: 1,
            draw: RandomMode::Shifted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regularizers {
    pub beta: f64,
    pub delta: f64,
    pub xi: f64,
    pub eps: f64,
}

impl Default for Regularizers {
    fn default() -> Self {
        let pe = PeConfig::default();
        let sc = SimsConfig::default();
        Self {
            beta: pe.beta,
            delta: pe.delta,
            xi: sc.xi,
            eps: sc.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    #[default]
    PeSims,
    PeSimsPr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub optical: OpticalSection,
    pub scan: ScanSection,
    pub pattern: PatternSection,
    pub phantom: Phantom,
    pub noise: NoiseSpec,
    pub regularizers: Regularizers,
    pub pipeline: Pipeline,
    pub kernel_mode: KernelMode,
    /// Shift-disc radius for pixel reassignment, in detection-PSF FWHM.
    pub pr_radius_fwhm: f64,
    /// FISTA iterations per pattern.
    pub iters: usize,
    /// Fixed FISTA step; the Lipschitz bound is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optical: OpticalSection::default(),
            scan: ScanSection::default(),
            pattern: PatternSection::default(),
            phantom: Phantom::default(),
            noise: NoiseSpec::None,
            regularizers: Regularizers::default(),
            pipeline: Pipeline::default(),
            kernel_mode: KernelMode::Analytic,
            pr_radius_fwhm: PrConfig::default().radius_fwhm,
            iters: PeConfig::default().iters,
            step: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn optical(&self) -> Result<OpticalConfig> {
        let o = &self.optical;
        let pitch = o.pitch.unwrap_or(o.lambda_det / (8.0 * o.na));
        OpticalConfig::new(o.na, o.lambda_illu, o.lambda_det, GridSpec::square(o.grid, pitch)?)
    }

    pub fn simulation(&self) -> Result<SimulationConfig> {
        let pattern = match self.pattern.mode {
            PatternMode::Random => PatternSpec::Random {
                fill: self.pattern.fill,
                draw: self.pattern.draw,
            },
            PatternMode::Multispot => PatternSpec::Multispot {
                period_steps: self.pattern.period_steps,
            },
        };
        Ok(SimulationConfig {
            optical: self.optical()?,
            scan: ScanGrid {
                nx: self.scan.nx,
                ny: self.scan.ny,
                step: self.scan.step_fwhm,
            },
            pattern,
            phantom: self.phantom,
            noise: self.noise,
            seed: self.pattern.seed,
        })
    }

    pub fn pe(&self) -> PeConfig {
        PeConfig {
            beta: self.regularizers.beta,
            delta: self.regularizers.delta,
            iters: self.iters,
            step: self.step.map_or(StepRule::Lipschitz, |eta| StepRule::Fixed { eta }),
            ..PeConfig::default()
        }
    }

    pub fn sims(&self) -> SimsConfig {
        SimsConfig {
            xi: self.regularizers.xi,
            eps: self.regularizers.eps,
            kernel_mode: self.kernel_mode,
        }
    }

    pub fn pr(&self) -> PrConfig {
        PrConfig {
            radius_fwhm: self.pr_radius_fwhm,
            shifts: None,
        }
    }

    /// Checks every section before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.optical()?;
        if self.scan.nx == 0 || self.scan.ny == 0 || !(self.scan.step_fwhm > 0.0) {
            return bad(format!("bad scan {:?}", self.scan));
        }
        match self.pattern.mode {
            PatternMode::Random if !(self.pattern.fill > 0.0 && self.pattern.fill < 1.0) => {
                return bad(format!("fill {} outside (0, 1)", self.pattern.fill));
            }
            PatternMode::Multispot if self.pattern.period_steps == 0 => {
                return bad("period_steps must be ≥ 1".into());
            }
            _ => {}
        }
        match self.phantom {
            Phantom::Star { spokes } if spokes < 2 || spokes % 2 != 0 => {
                return bad(format!("star needs an even spoke count ≥ 2, got {spokes}"));
            }
            Phantom::TwoPoint { separation } if !(separation > 0.0) => {
                return bad(format!("two-point separation {separation} must be > 0"));
            }
            Phantom::Beads { count, diameter } if count == 0 || !(diameter > 0.0) => {
                return bad(format!("bad bead field ({count} beads, {diameter} µm)"));
            }
            _ => {}
        }
        self.noise.validate()?;
        self.pe().validate()?;
        self.sims().validate()?;
        if !(self.pr_radius_fwhm >= 0.0) {
            return bad(format!("pr_radius_fwhm {} must be ≥ 0", self.pr_radius_fwhm));
        }
        Ok(())
    }
}
