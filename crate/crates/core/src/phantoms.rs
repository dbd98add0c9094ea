//! Test objects: Siemens star, point pairs and bead fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, OpticalConfig};

/// Placement and extent of a `1 + cos(Nθ)` star.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarGeometry {
    pub spokes: usize,
    /// Center in pixel coordinates.
    pub center: (f64, f64),
    /// Inner exclusion radius, µm.
    pub r_in: f64,
    /// Outer radius, µm.
    pub r_out: f64,
    /// Sub-samples per pixel axis used for area averaging.
    pub supersample: usize,
}

impl StarGeometry {
    /// Star centered on the field, spanning local periods 0.2 to 2 Abbe lengths.
    pub fn for_config(config: &OpticalConfig, spokes: usize) -> Self {
        let abbe = config.abbe();
        let radius_at = |period: f64| spokes as f64 * period / (2.0 * PI);
        Self {
            spokes,
            center: config.grid.center_px(),
            r_in: radius_at(0.2 * abbe),
            r_out: radius_at(2.0 * abbe),
            supersample: 8,
        }
    }

    /// Radius at which the local azimuthal period equals `period`.
    pub fn radius_for_period(&self, period: f64) -> f64 {
        self.spokes as f64 * period / (2.0 * PI)
    }

    pub fn period_at(&self, radius: f64) -> f64 {
        2.0 * PI * radius / self.spokes as f64
    }
}

/// Siemens star with the default geometry for `config`.
pub fn siemens_star(config: &OpticalConfig, spokes: usize) -> Result<Image> {
    siemens_star_with(config, &StarGeometry::for_config(config, spokes))
}

pub fn siemens_star_with(config: &OpticalConfig, geom: &StarGeometry) -> Result<Image> {
    if geom.spokes < 2 || geom.spokes % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "spokes must be even and ≥ 2, got {}",
            geom.spokes
        )));
    }
    if geom.supersample == 0 || !(geom.r_out > geom.r_in) || geom.r_in < 0.0 {
        return Err(Error::InvalidConfig(format!("bad star geometry {geom:?}")));
    }
    let g = config.grid;
    let ss = geom.supersample;
    let n = geom.spokes as f64;
    let (cx, cy) = geom.center;
    Ok(Image::from_fn(g, |x, y| {
        let mut acc = 0.0;
        for sy in 0..ss {
            let yy = (y as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5 - cy) * g.pitch;
            for sx in 0..ss {
                let xx = (x as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5 - cx) * g.pitch;
                let r = xx.hypot(yy);
                if r >= geom.r_in && r <= geom.r_out {
                    acc += 1.0 + (n * yy.atan2(xx)).cos();
                }
            }
        }
        acc / (ss * ss) as f64
    }))
}

/// Pixel positions `(x, y)` of the two points placed by [`two_point`].
pub fn two_point_positions(config: &OpticalConfig, separation: f64) -> Result<((usize, usize), (usize, usize))> {
    let g = config.grid;
    let sep = (separation / g.pitch).round() as usize;
    if sep < 1 || sep >= g.width / 2 {
        return Err(Error::InvalidConfig(format!(
            "separation {separation} µm is {sep} px on this grid"
        )));
    }
    let (cx, cy) = (g.width / 2, g.height / 2);
    let left = cx - sep / 2;
    Ok(((left, cy), (left + sep, cy)))
}

/// Two unit impulses on the central row, separated by `separation` µm rounded
/// to whole pixels.
pub fn two_point(config: &OpticalConfig, separation: f64) -> Result<Image> {
    let ((x0, y0), (x1, y1)) = two_point_positions(config, separation)?;
    let mut img = Image::zeros(config.grid);
    img.set(x0, y0, 1.0);
    img.set(x1, y1, 1.0);
    Ok(img)
}

/// `n` non-overlapping uniform discs of the given diameter (µm) at seeded
/// random pixel-centered positions, kept clear of the field border.
pub fn bead_field(config: &OpticalConfig, n: usize, diameter: f64, seed: u64) -> Result<Image> {
    let g = config.grid;
    let d_px = diameter / g.pitch;
    if d_px < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "bead diameter {diameter} µm is below one pixel"
        )));
    }
    let radius = 0.5 * d_px;
    let margin = (radius + 2.0 * config.abbe() / g.pitch).ceil() as usize;
    if 2 * margin >= g.width.min(g.height) {
        return Err(Error::InvalidConfig("beads do not fit in the field".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attempts_allowed = 1000 * n.max(1);
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut attempts = 0;
    while centers.len() < n {
        if attempts == attempts_allowed {
            return Err(Error::Placement {
                requested: n,
                attempts,
            });
        }
        attempts += 1;
        let x = rng.gen_range(margin..g.width - margin) as f64;
        let y = rng.gen_range(margin..g.height - margin) as f64;
        if centers
            .iter()
            .all(|&(cx, cy)| (x - cx).hypot(y - cy) > d_px + 1.0)
        {
            centers.push((x, y));
        }
    }
    let mut img = Image::zeros(g);
    let reach = radius.ceil() as i64;
    for &(cx, cy) in &centers {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if ((dx * dx + dy * dy) as f64).sqrt() <= radius {
                    img.set((cx as i64 + dx) as usize, (cy as i64 + dy) as usize, 1.0);
                }
            }
        }
    }
    Ok(img)
}
