//! Dataset directory layout:
//!
//! * `manifest.json` — ordered array of `{id, chip, mask, labels, oracle?}`
//!   relative paths
//! * chips as 8-bit RGB PNG, masks as 16-bit grayscale PNG (0 = background)
//! * labels as CSV `region_id,value` with 1-based region ids
//! * oracle maps as raw little-endian f32 with a `{height,width}` sidecar

use super::{Chip, RegionLabels, RegionSet, Sample};
use crate::error::{Error, Result};
use crate::io::{read_f32_map, write_f32_map};
use image::{ImageBuffer, Luma, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One manifest row; paths are relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub chip: String,
    pub mask: String,
    pub labels: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
}

/// Write samples into `dir` and return the manifest entries, in order.
pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<Vec<SampleEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for sample in samples {
        entries.push(write_sample(sample, dir)?);
    }
    let manifest = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), manifest)?;
    Ok(entries)
}

fn write_sample(sample: &Sample, dir: &Path) -> Result<SampleEntry> {
    sample.validate()?;
    let id = &sample.id;
    let chip_name = format!("{id}.chip.png");
    let mask_name = format!("{id}.mask.png");
    let labels_name = format!("{id}.labels.csv");

    let (h, w) = (sample.chip.height, sample.chip.width);
    if sample.chip.channels != 3 {
        return Err(Error::config(format!(
            "chip PNG format requires 3 channels, sample '{id}' has {}",
            sample.chip.channels
        )));
    }
    let mut rgb: RgbImage = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = Rgb([
                quantize_u8(sample.chip.at(0, y, x)),
                quantize_u8(sample.chip.at(1, y, x)),
                quantize_u8(sample.chip.at(2, y, x)),
            ]);
            rgb.put_pixel(x as u32, y as u32, px);
        }
    }
    rgb.save(dir.join(&chip_name))
        .map_err(|e| Error::Format(format!("writing chip for '{id}': {e}")))?;

    if sample.regions.region_count > u16::MAX as usize {
        return Err(Error::config(format!(
            "sample '{id}' has more regions than the 16-bit mask format allows"
        )));
    }
    let mut mask_img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            mask_img.put_pixel(
                x as u32,
                y as u32,
                Luma([sample.regions.mask[y * w + x] as u16]),
            );
        }
    }
    mask_img
        .save(dir.join(&mask_name))
        .map_err(|e| Error::Format(format!("writing mask for '{id}': {e}")))?;

    let mut csv = String::from("region_id,value\n");
    for (i, v) in sample.labels.values.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, v));
    }
    std::fs::write(dir.join(&labels_name), csv)?;

    let oracle = match &sample.oracle {
        Some(map) => {
            let name = format!("{id}.oracle.f32");
            write_f32_map(&dir.join(&name), h, w, map)?;
            Some(name)
        }
        None => None,
    };

    Ok(SampleEntry {
        id: id.clone(),
        chip: chip_name,
        mask: mask_name,
        labels: labels_name,
        oracle,
    })
}

fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load every sample listed by a manifest, in manifest order. `path` may be
/// the manifest file or its directory. Each sample is validated against all
/// type invariants; a violation fails the load naming the offending sample.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let manifest_path = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path
        .parent()
        .ok_or_else(|| Error::config("manifest has no parent directory".to_string()))?
        .to_path_buf();
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Format(format!("reading {}: {e}", manifest_path.display())))?;
    let entries: Vec<SampleEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("parsing {}: {e}", manifest_path.display())))?;

    entries
        .par_iter()
        .map(|entry| load_sample(entry, &dir))
        .collect()
}

fn load_sample(entry: &SampleEntry, dir: &Path) -> Result<Sample> {
    let id = &entry.id;
    let err = |msg: String| Error::load(id.clone(), msg);

    let chip_img = image::open(dir.join(&entry.chip))
        .map_err(|e| err(format!("cannot read chip: {e}")))?
        .to_rgb8();
    let (w, h) = (chip_img.width() as usize, chip_img.height() as usize);
    let mut data = vec![0.0f64; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = chip_img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                data[c * h * w + y * w + x] = px[c] as f64 / 255.0;
            }
        }
    }
    let chip = Chip {
        height: h,
        width: w,
        channels: 3,
        data,
        gsd_meters: 1.0,
    };

    let mask_img = image::open(dir.join(&entry.mask))
        .map_err(|e| err(format!("cannot read mask: {e}")))?;
    let mask_img: ImageBuffer<Luma<u16>, Vec<u16>> = match mask_img {
        image::DynamicImage::ImageLuma16(img) => img,
        other => {
            // an 8-bit mask would be silently rescaled by conversion; treat
            // anything but 16-bit grayscale as a format error
            let _ = other;
            return Err(err("mask must be a 16-bit grayscale PNG".to_string()));
        }
    };
    if mask_img.width() as usize != w || mask_img.height() as usize != h {
        return Err(err(format!(
            "mask {}x{} does not match chip {}x{}",
            mask_img.height(),
            mask_img.width(),
            h,
            w
        )));
    }
    let mut mask = vec![0u32; h * w];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = mask_img.get_pixel(x as u32, y as u32)[0] as u32;
        }
    }
    let regions = RegionSet::new(h, w, mask).map_err(|e| err(e.to_string()))?;

    let labels_text = std::fs::read_to_string(dir.join(&entry.labels))
        .map_err(|e| err(format!("cannot read labels: {e}")))?;
    let values = parse_labels_csv(&labels_text).map_err(|e| err(e.to_string()))?;
    let labels = RegionLabels { values };

    let oracle = match &entry.oracle {
        Some(rel) => {
            let (oh, ow, map) =
                read_f32_map(&dir.join(rel)).map_err(|e| err(e.to_string()))?;
            if oh != h || ow != w {
                return Err(err(format!(
                    "oracle {oh}x{ow} does not match chip {h}x{w}"
                )));
            }
            Some(map)
        }
        None => None,
    };

    let sample = Sample {
        id: id.clone(),
        chip,
        regions,
        labels,
        oracle,
    };
    sample.validate().map_err(|e| err(e.to_string()))?;
    Ok(sample)
}

fn parse_labels_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "region_id,value" => {}
        other => {
            return Err(Error::Format(format!(
                "labels CSV must start with 'region_id,value', got {other:?}"
            )))
        }
    }
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id_s, val_s) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("labels CSV line {}: missing comma", i + 2)))?;
        let rid: usize = id_s
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("labels CSV line {}: bad region id", i + 2)))?;
        if rid != values.len() + 1 {
            return Err(Error::Format(format!(
                "labels CSV line {}: region ids must be 1-based and consecutive",
                i + 2
            )));
        }
        let v: f64 = val_s
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("labels CSV line {}: bad value", i + 2)))?;
        values.push(v);
    }
    Ok(values)
}
