//! Dataset model: chips, region masks, region labels, synthetic scene
//! generation, dataset IO, and the sample-level operations used during
//! training (filtering, splitting, merging, flip augmentation).

mod generate;
mod io;

pub use generate::{generate_scene, SceneConfig};
pub use io::{load_dataset, write_dataset, SampleEntry};

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Relative tolerance for the label-equals-oracle-sum invariant.
pub const ORACLE_SUM_RTOL: f64 = 1e-6;

/// A multi-channel raster crop in planar channel-major layout:
/// `data[(c*height + y)*width + x]`, intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Ground sample distance in meters per pixel; informational.
    pub gsd_meters: f64,
}

impl Chip {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let chip = Chip {
            height,
            width,
            channels,
            data,
            gsd_meters: 1.0,
        };
        chip.validate()?;
        Ok(chip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::shape(format!(
                "chip must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if self.data.len() != self.height * self.width * self.channels {
            return Err(Error::shape(format!(
                "chip data length {} does not match {}x{}x{}",
                self.data.len(),
                self.height,
                self.width,
                self.channels
            )));
        }
        if self.data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::domain(
                "chip intensities must be finite and within [0,1]".to_string(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Disjoint region mask: 0 is background, indices 1..=region_count label
/// the regions. Every index must occur at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<u32>,
    pub region_count: usize,
}

impl RegionSet {
    pub fn new(height: usize, width: usize, mask: Vec<u32>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::shape(format!(
                "mask length {} does not match {}x{}",
                mask.len(),
                height,
                width
            )));
        }
        let n = mask.iter().copied().max().unwrap_or(0) as usize;
        if n == 0 {
            return Err(Error::config("mask contains no regions".to_string()));
        }
        let rs = RegionSet {
            height,
            width,
            mask,
            region_count: n,
        };
        rs.validate()?;
        Ok(rs)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.region_count];
        for &m in &self.mask {
            if m as usize > self.region_count {
                return Err(Error::shape(format!(
                    "mask index {m} exceeds region count {}",
                    self.region_count
                )));
            }
            if m > 0 {
                seen[m as usize - 1] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::config(format!("region {} never appears", i + 1)));
        }
        Ok(())
    }

    /// Pixel count per region, indexed 0..region_count.
    pub fn region_areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.region_count];
        for &m in &self.mask {
            if m > 0 {
                areas[m as usize - 1] += 1;
            }
        }
        areas
    }
}

/// Per-region scalar labels in currency units, index-aligned with the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabels {
    pub values: Vec<f64>,
}

impl RegionLabels {
    pub fn validate(&self, regions: &RegionSet) -> Result<()> {
        if self.values.len() != regions.region_count {
            return Err(Error::config(format!(
                "label count mismatch: {} labels for {} regions",
                self.values.len(),
                regions.region_count
            )));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(
                "labels must be finite and nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// One training sample: chip + region mask + labels, plus the pixel-level
/// oracle value map for synthetic scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub chip: Chip,
    pub regions: RegionSet,
    pub labels: RegionLabels,
    pub oracle: Option<Vec<f64>>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        self.chip.validate()?;
        self.regions.validate()?;
        self.labels.validate(&self.regions)?;
        if self.regions.height != self.chip.height || self.regions.width != self.chip.width {
            return Err(Error::shape(format!(
                "mask {}x{} does not match chip {}x{}",
                self.regions.height, self.regions.width, self.chip.height, self.chip.width
            )));
        }
        if let Some(oracle) = &self.oracle {
            if oracle.len() != self.chip.height * self.chip.width {
                return Err(Error::shape(format!(
                    "oracle length {} does not match chip {}x{}",
                    oracle.len(),
                    self.chip.height,
                    self.chip.width
                )));
            }
            let sums = region_oracle_sums(&self.regions, oracle);
            for (i, (&y, &s)) in self.labels.values.iter().zip(&sums).enumerate() {
                if (y - s).abs() > ORACLE_SUM_RTOL * y.abs().max(1.0) {
                    return Err(Error::domain(format!(
                        "region {} label {y} does not match oracle sum {s}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Row-major per-region sums of a pixel map; the independent accumulation
/// used by the label/oracle consistency check.
pub fn region_oracle_sums(regions: &RegionSet, pixel_map: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; regions.region_count];
    for (p, &m) in regions.mask.iter().enumerate() {
        if m > 0 {
            sums[m as usize - 1] += pixel_map[p];
        }
    }
    sums
}

/// Disjoint id partition of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn select<'a>(&self, samples: &'a [Sample], which: SplitKind) -> Vec<&'a Sample> {
        let ids = match which {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        };
        ids.iter()
            .filter_map(|id| samples.iter().find(|s| &s.id == id))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

/// Filtering rules applied at load time, before splitting.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterRules {
    /// Drop regions whose label is zero (unlabeled or public land).
    pub drop_zero_value: bool,
    /// Drop regions whose label divided by pixel area exceeds this cap.
    pub max_density: Option<f64>,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            drop_zero_value: true,
            max_density: None,
        }
    }
}

/// Remove zero-value and over-dense regions; samples left without regions
/// are dropped entirely. Total function: never errors.
pub fn filter_dataset(samples: Vec<Sample>, rules: FilterRules) -> Vec<Sample> {
    samples
        .into_iter()
        .filter_map(|s| filter_sample(s, rules))
        .collect()
}

fn filter_sample(sample: Sample, rules: FilterRules) -> Option<Sample> {
    let areas = sample.regions.region_areas();
    let keep: Vec<bool> = sample
        .labels
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if rules.drop_zero_value && v == 0.0 {
                return false;
            }
            if let Some(cap) = rules.max_density {
                if v / areas[i] as f64 > cap {
                    return false;
                }
            }
            true
        })
        .collect();
    if keep.iter().all(|&k| k) {
        return Some(sample);
    }
    if !keep.iter().any(|&k| k) {
        return None;
    }
    let masked: Vec<u32> = sample
        .regions
        .mask
        .iter()
        .map(|&m| if m > 0 && keep[m as usize - 1] { m } else { 0 })
        .collect();
    let (mask, order) = reindex_compact(&masked, sample.regions.region_count);
    let values: Vec<f64> = order
        .iter()
        .map(|&old| sample.labels.values[old])
        .collect();
    let regions = RegionSet {
        height: sample.regions.height,
        width: sample.regions.width,
        mask,
        region_count: order.len(),
    };
    Some(Sample {
        id: sample.id,
        chip: sample.chip,
        regions,
        labels: RegionLabels { values },
        oracle: sample.oracle,
    })
}

/// Renumber surviving mask indices compactly, ordered by first pixel
/// occurrence in row-major scan. Returns the new mask and, per new index,
/// the old zero-based region it came from.
fn reindex_compact(mask: &[u32], old_count: usize) -> (Vec<u32>, Vec<usize>) {
    let mut remap = vec![0u32; old_count + 1];
    let mut order = Vec::new();
    let mut out = Vec::with_capacity(mask.len());
    for &m in mask {
        if m == 0 {
            out.push(0);
            continue;
        }
        if remap[m as usize] == 0 {
            order.push(m as usize - 1);
            remap[m as usize] = order.len() as u32;
        }
        out.push(remap[m as usize]);
    }
    (out, order)
}

/// Seeded shuffle followed by a contiguous partition: floor(frac*N) samples
/// to validation and test, remainder to train.
pub fn split_dataset(
    samples: &[Sample],
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&(val_frac + test_frac)) || val_frac < 0.0 || test_frac < 0.0 {
        return Err(Error::config(format!(
            "invalid split fractions val={val_frac} test={test_frac}"
        )));
    }
    let mut ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_val = (val_frac * n as f64).floor() as usize;
    let n_test = (test_frac * n as f64).floor() as usize;
    let validation = ids[..n_val].to_vec();
    let test = ids[n_val..n_val + n_test].to_vec();
    let train = ids[n_val + n_test..].to_vec();
    Ok(DatasetSplit {
        train,
        validation,
        test,
    })
}

/// One pass of random pairwise merging of 8-adjacent regions. Each region
/// merges at most once per call; a merge whose combined value per combined
/// pixel exceeds `density_cap` is skipped. The oracle map is untouched.
pub fn merge_regions(sample: &Sample, seed: u64, density_cap: f64) -> Sample {
    let n = sample.regions.region_count;
    if n < 2 {
        return sample.clone();
    }
    let adjacency = region_adjacency(&sample.regions);
    let areas = sample.regions.region_areas();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visit: Vec<usize> = (0..n).collect();
    visit.shuffle(&mut rng);

    // partner[i] == i means unmerged
    let mut partner: Vec<usize> = (0..n).collect();
    let mut merged = vec![false; n];
    for &i in &visit {
        if merged[i] {
            continue;
        }
        let candidates: Vec<usize> = adjacency[i].iter().copied().filter(|&j| !merged[j]).collect();
        if candidates.is_empty() {
            continue;
        }
        let j = candidates[rng.gen_range(0..candidates.len())];
        let value = sample.labels.values[i] + sample.labels.values[j];
        let area = (areas[i] + areas[j]) as f64;
        if value / area > density_cap {
            continue;
        }
        merged[i] = true;
        merged[j] = true;
        partner[i] = i.min(j);
        partner[j] = i.min(j);
    }

    if !merged.iter().any(|&m| m) {
        return sample.clone();
    }

    // collapse pairs onto their representative, then compact
    let relabeled: Vec<u32> = sample
        .regions
        .mask
        .iter()
        .map(|&m| {
            if m == 0 {
                0
            } else {
                partner[m as usize - 1] as u32 + 1
            }
        })
        .collect();
    let (mask, order) = reindex_compact(&relabeled, n);
    let values: Vec<f64> = order
        .iter()
        .map(|&rep| {
            if merged[rep] {
                let other = (0..n).find(|&k| k != rep && partner[k] == rep).unwrap();
                sample.labels.values[rep] + sample.labels.values[other]
            } else {
                sample.labels.values[rep]
            }
        })
        .collect();
    let regions = RegionSet {
        height: sample.regions.height,
        width: sample.regions.width,
        mask,
        region_count: order.len(),
    };
    Sample {
        id: sample.id.clone(),
        chip: sample.chip.clone(),
        regions,
        labels: RegionLabels { values },
        oracle: sample.oracle.clone(),
    }
}

/// Region pairs with at least one 8-adjacent pixel pair, as per-region
/// sorted neighbor lists.
fn region_adjacency(regions: &RegionSet) -> Vec<Vec<usize>> {
    let (h, w) = (regions.height, regions.width);
    let mut sets: Vec<std::collections::BTreeSet<usize>> =
        vec![std::collections::BTreeSet::new(); regions.region_count];
    let at = |y: usize, x: usize| regions.mask[y * w + x];
    // scanning E, SW, S, SE from every pixel covers all 8-adjacent pairs
    for y in 0..h {
        for x in 0..w {
            let a = at(y, x);
            if a == 0 {
                continue;
            }
            let mut link = |b: u32| {
                if b > 0 && b != a {
                    sets[a as usize - 1].insert(b as usize - 1);
                    sets[b as usize - 1].insert(a as usize - 1);
                }
            };
            if x + 1 < w {
                link(at(y, x + 1));
            }
            if y + 1 < h {
                if x > 0 {
                    link(at(y + 1, x - 1));
                }
                link(at(y + 1, x));
                if x + 1 < w {
                    link(at(y + 1, x + 1));
                }
            }
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Random horizontal/vertical flips (probability 1/2 each), applied
/// consistently to chip, mask, and oracle. Labels are unchanged because
/// region aggregation is flip-invariant.
pub fn flip_augment(sample: &Sample, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip_h = rng.gen_bool(0.5);
    let flip_v = rng.gen_bool(0.5);
    apply_flips(sample, flip_h, flip_v)
}

/// Deterministic flip application; exposed so tests can force axes.
pub fn apply_flips(sample: &Sample, flip_h: bool, flip_v: bool) -> Sample {
    if !flip_h && !flip_v {
        return sample.clone();
    }
    let (h, w) = (sample.chip.height, sample.chip.width);
    let src = |y: usize, x: usize| {
        let sy = if flip_v { h - 1 - y } else { y };
        let sx = if flip_h { w - 1 - x } else { x };
        sy * w + sx
    };
    let mut chip_data = vec![0.0; sample.chip.data.len()];
    for c in 0..sample.chip.channels {
        let plane = c * h * w;
        for y in 0..h {
            for x in 0..w {
                chip_data[plane + y * w + x] = sample.chip.data[plane + src(y, x)];
            }
        }
    }
    let mut mask = vec![0u32; h * w];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = sample.regions.mask[src(y, x)];
        }
    }
    let oracle = sample.oracle.as_ref().map(|o| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = o[src(y, x)];
            }
        }
        out
    });
    Sample {
        id: sample.id.clone(),
        chip: Chip {
            data: chip_data,
            ..sample.chip.clone()
        },
        regions: RegionSet {
            mask,
            ..sample.regions.clone()
        },
        labels: sample.labels.clone(),
        oracle,
    }
}
