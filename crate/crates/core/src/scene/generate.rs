//! Synthetic scene generation. Scenes carry a pixel-level oracle value map
//! by construction, standing in for real parcel data where pixel-level
//! ground truth cannot exist.

use super::{Chip, RegionLabels, RegionSet, Sample};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Configuration of one synthetic scene.
///
/// The scene is a `parcel_grid` partition of the chip; each parcel gets a
/// constant per-pixel land value drawn from `land_value_range`, and with
/// probability `building_prob` a quarter-size rectangle whose pixels take a
/// value drawn from `building_value_range` instead.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default = "default_size")]
    pub width: usize,
    /// (rows, cols) of the parcel partition.
    #[serde(default = "default_grid")]
    pub parcel_grid: (usize, usize),
    #[serde(default = "default_building_prob")]
    pub building_prob: f64,
    #[serde(default = "default_land_range")]
    pub land_value_range: (f64, f64),
    #[serde(default = "default_building_range")]
    pub building_value_range: (f64, f64),
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_size() -> usize {
    64
}
fn default_grid() -> (usize, usize) {
    (2, 4)
}
fn default_building_prob() -> f64 {
    0.5
}
fn default_land_range() -> (f64, f64) {
    (0.5, 1.5)
}
fn default_building_range() -> (f64, f64) {
    (20.0, 60.0)
}
fn default_noise() -> f64 {
    0.05
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: default_size(),
            width: default_size(),
            parcel_grid: default_grid(),
            building_prob: default_building_prob(),
            land_value_range: default_land_range(),
            building_value_range: default_building_range(),
            noise_sigma: default_noise(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.parcel_grid;
        if rows == 0 || cols == 0 {
            return Err(Error::config("parcel_grid must be at least 1x1".to_string()));
        }
        if self.height % rows != 0 || self.width % cols != 0 {
            return Err(Error::config(format!(
                "scene {}x{} not divisible by parcel grid {}x{}",
                self.height, self.width, rows, cols
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::config("scene must be at least 8x8".to_string()));
        }
        for (name, (lo, hi)) in [
            ("land_value_range", self.land_value_range),
            ("building_value_range", self.building_value_range),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
                return Err(Error::config(format!("invalid {name}: [{lo}, {hi}]")));
            }
        }
        if !(0.0..=1.0).contains(&self.building_prob) {
            return Err(Error::config(format!(
                "building_prob {} outside [0,1]",
                self.building_prob
            )));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::config(format!(
                "noise_sigma {} must be nonnegative",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

// drawn in f64, stored at f32 precision so dataset round-trips are lossless
fn quantize_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Generate one synthetic scene. Identical configs (including seed)
/// reproduce the identical sample bit for bit.
///
/// Chip rendering: channel 0 is the building mask, channel 1 the value
/// normalized by the land range top, channel 2 the value normalized by the
/// overall range top; each gets Gaussian intensity noise, is clamped to
/// [0,1], and is quantized to 8-bit steps to match the on-disk format.
pub fn generate_scene(cfg: &SceneConfig, id: &str) -> Result<Sample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let (rows, cols) = cfg.parcel_grid;
    let (ph, pw) = (h / rows, w / cols);
    let n_parcels = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    struct Parcel {
        land: f64,
        building: Option<(f64, usize, usize, usize, usize)>, // value, top, left, bh, bw
    }
    let mut parcels = Vec::with_capacity(n_parcels);
    for _ in 0..n_parcels {
        let land = quantize_f32(uniform_in(&mut rng, cfg.land_value_range));
        let has_building = rng.gen_bool(cfg.building_prob);
        let building = if has_building {
            let value = quantize_f32(uniform_in(&mut rng, cfg.building_value_range));
            let bh = (ph / 4).max(1);
            let bw = (pw / 4).max(1);
            let top = rng.gen_range(0..=ph - bh);
            let left = rng.gen_range(0..=pw - bw);
            Some((value, top, left, bh, bw))
        } else {
            None
        };
        parcels.push(Parcel { land, building });
    }

    let mut oracle = vec![0.0f64; h * w];
    let mut mask = vec![0u32; h * w];
    let mut building_mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let pr = y / ph;
            let pc = x / pw;
            let pi = pr * cols + pc;
            let parcel = &parcels[pi];
            let (py, px) = (y - pr * ph, x - pc * pw);
            let mut v = parcel.land;
            if let Some((bval, top, left, bh, bw)) = parcel.building {
                if py >= top && py < top + bh && px >= left && px < left + bw {
                    v = bval;
                    building_mask[y * w + x] = true;
                }
            }
            oracle[y * w + x] = v;
            mask[y * w + x] = pi as u32 + 1;
        }
    }

    let regions = RegionSet::new(h, w, mask)?;
    let labels = RegionLabels {
        values: super::region_oracle_sums(&regions, &oracle),
    };

    let land_top = cfg.land_value_range.1.max(1e-9);
    let value_top = cfg
        .land_value_range
        .1
        .max(cfg.building_value_range.1)
        .max(1e-9);
    let mut chip_data = vec![0.0f64; 3 * h * w];
    for c in 0..3 {
        for p in 0..h * w {
            let base = match c {
                0 => {
                    if building_mask[p] {
                        1.0
                    } else {
                        0.0
                    }
                }
                1 => (oracle[p] / land_top).min(1.0),
                _ => (oracle[p] / value_top).min(1.0),
            };
            let noisy = if cfg.noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                base + cfg.noise_sigma * z
            } else {
                base
            };
            let clamped = noisy.clamp(0.0, 1.0);
            chip_data[c * h * w + p] = (clamped * 255.0).round() / 255.0;
        }
    }

    let sample = Sample {
        id: id.to_string(),
        chip: Chip {
            height: h,
            width: w,
            channels: 3,
            data: chip_data,
            gsd_meters: 1.0,
        },
        regions,
        labels,
        oracle: Some(oracle),
    };
    sample.validate()?;
    Ok(sample)
}
