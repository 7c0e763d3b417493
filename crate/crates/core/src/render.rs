//! Heatmap rendering of value and uncertainty maps: monotone color ramp,
//! percentile or explicit clipping, optional region-boundary overlay.

use crate::error::{Error, Result};
use image::{ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

/// Rendering options. With `vmin`/`vmax` unset the clip range is the 2nd
/// and 98th percentile of the map; property-value maps are heavy-tailed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RenderSpec {
    #[serde(default = "default_ramp")]
    pub ramp: String,
    #[serde(default)]
    pub vmin: Option<f64>,
    #[serde(default)]
    pub vmax: Option<f64>,
    #[serde(default)]
    pub overlay_regions: bool,
}

fn default_ramp() -> String {
    "viridis".to_string()
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            ramp: default_ramp(),
            vmin: None,
            vmax: None,
            overlay_regions: false,
        }
    }
}

// viridis anchor colors at 1/8 steps
const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

const GRAY: [[u8; 3]; 2] = [[0, 0, 0], [255, 255, 255]];

const BOUNDARY_COLOR: Rgb<u8> = Rgb([220, 20, 60]);

fn ramp_color(anchors: &[[u8; 3]], t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let scaled = t * (anchors.len() - 1) as f64;
    let i = (scaled.floor() as usize).min(anchors.len() - 2);
    let f = scaled - i as f64;
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    Rgb([
        mix(anchors[i][0], anchors[i + 1][0]),
        mix(anchors[i][1], anchors[i + 1][1]),
        mix(anchors[i][2], anchors[i + 1][2]),
    ])
}

/// Nearest-rank percentile of a finite sample, p in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let idx = ((p / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Render a scalar map to an RGB heatmap. `mask` supplies region indices
/// for the boundary overlay when `spec.overlay_regions` is set.
pub fn render_heatmap(
    height: usize,
    width: usize,
    data: &[f64],
    spec: &RenderSpec,
    mask: Option<&[u32]>,
) -> Result<RgbImage> {
    if data.len() != height * width {
        return Err(Error::shape(format!(
            "map length {} does not match {height}x{width}",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("map contains non-finite values".to_string()));
    }
    let anchors: &[[u8; 3]] = match spec.ramp.as_str() {
        "viridis" => &VIRIDIS,
        "gray" => &GRAY,
        other => {
            return Err(Error::config(format!(
                "unknown ramp '{other}' (expected viridis or gray)"
            )))
        }
    };
    let (vmin, vmax) = match (spec.vmin, spec.vmax) {
        (Some(a), Some(b)) => {
            if !(a < b) {
                return Err(Error::config(format!(
                    "vmin {a} must be strictly below vmax {b}"
                )));
            }
            (a, b)
        }
        (None, None) => (percentile(data, 2.0), percentile(data, 98.0)),
        (a, b) => {
            let lo = a.unwrap_or_else(|| percentile(data, 2.0));
            let hi = b.unwrap_or_else(|| percentile(data, 98.0));
            if !(lo < hi) && !(lo == hi) {
                return Err(Error::config(format!("empty clip range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
    };
    if let Some(m) = mask {
        if spec.overlay_regions && m.len() != data.len() {
            return Err(Error::shape(
                "overlay mask does not match the map".to_string(),
            ));
        }
    } else if spec.overlay_regions {
        return Err(Error::config(
            "overlay_regions requires a region mask".to_string(),
        ));
    }

    let span = vmax - vmin;
    let mut img: RgbImage = ImageBuffer::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let v = data[y * width + x];
            // a degenerate auto range renders uniformly at the ramp bottom
            let t = if span > 0.0 { (v - vmin) / span } else { 0.0 };
            img.put_pixel(x as u32, y as u32, ramp_color(anchors, t));
        }
    }

    if spec.overlay_regions {
        let m = mask.expect("checked above");
        for y in 0..height {
            for x in 0..width {
                let here = m[y * width + x];
                let boundary = (x + 1 < width && m[y * width + x + 1] != here)
                    || (x > 0 && m[y * width + x - 1] != here)
                    || (y + 1 < height && m[(y + 1) * width + x] != here)
                    || (y > 0 && m[(y - 1) * width + x] != here);
                if boundary {
                    img.put_pixel(x as u32, y as u32, BOUNDARY_COLOR);
                }
            }
        }
    }
    Ok(img)
}
