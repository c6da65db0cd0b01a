//! Heatmap export as binary PPM (P6, maxval 255).
//!
//! Seismic mode maps a MinMax-normalized value linearly on each half:
//! -1 -> (0,0,255), 0 -> (255,255,255), +1 -> (255,0,0). Overlay mode blends
//! red over a base image where the value exceeds a threshold, with opacity
//! proportional to the value.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::uai::AggregateMap;

/// Rendering mode for [`export_heatmap`].
#[derive(Debug, Clone, Copy)]
pub enum HeatmapMode<'a> {
    Seismic,
    Overlay { base: &'a Tensor, threshold: f32 },
}

fn byte(t: f32) -> u8 {
    (255.0 * t).clamp(0.0, 255.0) as u8
}

/// Seismic color for a value in [-1, 1].
pub fn seismic_rgb(v: f32) -> [u8; 3] {
    let b = byte(1.0 - v.abs());
    if v >= 0.0 {
        [255, b, b]
    } else {
        [b, b, 255]
    }
}

fn spatial_dims(map: &Tensor) -> Result<(usize, usize)> {
    match map.rank() {
        1 => Ok((1, map.shape()[0])),
        2 => Ok((map.shape()[0], map.shape()[1])),
        r => Err(Error::InvalidArgument(format!(
            "cannot render a rank-{r} map as an image"
        ))),
    }
}

/// Writes a P6 PPM file.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::InvalidArgument(format!(
            "pixel buffer length {} does not match {width}x{height}",
            rgb.len()
        )));
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders an aggregate map to a PPM file.
///
/// Seismic mode requires values in [-1, 1] (MinMax-normalize first). Overlay
/// mode expects a `[3,H,W]` base image in [0, 1] matching the map's spatial
/// shape.
pub fn export_heatmap(map: &AggregateMap, path: &Path, mode: HeatmapMode) -> Result<()> {
    let (h, w) = spatial_dims(&map.values)?;
    match mode {
        HeatmapMode::Seismic => {
            if map.values.data().iter().any(|v| v.abs() > 1.0 + 1e-6) {
                return Err(Error::InvalidArgument(
                    "seismic mode requires a MinMax-normalized map (values in [-1, 1])"
                        .to_string(),
                ));
            }
            let mut rgb = Vec::with_capacity(w * h * 3);
            for &v in map.values.data() {
                rgb.extend_from_slice(&seismic_rgb(v));
            }
            write_ppm(path, w, h, &rgb)
        }
        HeatmapMode::Overlay { base, threshold } => {
            if base.shape() != [3, h, w] {
                return Err(Error::InvalidArgument(format!(
                    "overlay base shape {:?} does not match [3, {h}, {w}]",
                    base.shape()
                )));
            }
            let plane = h * w;
            let mut rgb = Vec::with_capacity(plane * 3);
            for (p, &v) in map.values.data().iter().enumerate() {
                let base_px = [
                    base.data()[p],
                    base.data()[plane + p],
                    base.data()[2 * plane + p],
                ];
                if v > threshold {
                    let a = v.clamp(0.0, 1.0);
                    rgb.push(byte(base_px[0] * (1.0 - a) + a));
                    rgb.push(byte(base_px[1] * (1.0 - a)));
                    rgb.push(byte(base_px[2] * (1.0 - a)));
                } else {
                    rgb.extend(base_px.iter().map(|&c| byte(c)));
                }
            }
            write_ppm(path, w, h, &rgb)
        }
    }
}
