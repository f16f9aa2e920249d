//! Series -> fixed-shape model input: pick three images (first, middle,
//! last), bilinear-resize each to the target size, min-max normalize each
//! channel independently, stack HxWx3.

use std::io::Write;
use std::path::Path;

use crate::dicom::{DicomImageMeta, SeriesRecord, Vendor};
use crate::error::{Error, Result};
use crate::labeling::LabelOutcome;

/// One model input: size x size x 3, HWC layout, all values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Datapoint {
    pub pixels: Vec<f64>,
    pub size: usize,
    pub label: LabelOutcome,
    pub study_instance_uid: String,
    pub vendor: Vendor,
    pub source_series: String,
}

impl Datapoint {
    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.size + x) * 3 + c]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().skip(c).step_by(3).copied().collect()
    }
}

/// Indices of the first, middle and last member; short series repeat the
/// first image.
pub fn select_three_indices(n: usize) -> (usize, usize, usize) {
    assert!(n > 0);
    match n {
        1 => (0, 0, 0),
        2 => (0, 0, 1),
        _ => (0, (n - 1) / 2, n - 1),
    }
}

pub fn select_three(record: &SeriesRecord) -> (&DicomImageMeta, &DicomImageMeta, &DicomImageMeta) {
    let (a, b, c) = select_three_indices(record.members.len());
    (&record.members[a], &record.members[b], &record.members[c])
}

/// Bilinear resize with half-pixel sample centers: output pixel i samples
/// the input at (i + 0.5) * H / out - 0.5, clamped to the border.
pub fn resize_bilinear(image: &[f64], h: usize, w: usize, out_size: usize) -> Vec<f64> {
    assert_eq!(image.len(), h * w);
    assert!(h >= 1 && w >= 1);
    if h == out_size && w == out_size {
        return image.to_vec();
    }
    let mut out = vec![0.0; out_size * out_size];
    let sy = h as f64 / out_size as f64;
    let sx = w as f64 / out_size as f64;
    for oy in 0..out_size {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_size {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let top = image[y0 * w + x0] * (1.0 - wx) + image[y0 * w + x1] * wx;
            let bot = image[y1 * w + x0] * (1.0 - wx) + image[y1 * w + x1] * wx;
            out[oy * out_size + ox] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

/// (x - min) / (max - min); a constant channel maps to all zeros.
pub fn normalize_minmax(channel: &mut [f64]) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in channel.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    if !(max > min) {
        channel.fill(0.0);
        return;
    }
    let inv = 1.0 / (max - min);
    for v in channel.iter_mut() {
        *v = (*v - min) * inv;
    }
}

/// Decode, rescale, resize and normalize the three selected members into a
/// stacked datapoint.
pub fn build_datapoint(
    record: &SeriesRecord,
    label: LabelOutcome,
    out_size: usize,
) -> Result<Datapoint> {
    if record.members.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (first, middle, last) = select_three(record);
    let mut pixels = vec![0.0; out_size * out_size * 3];
    for (c, meta) in [first, middle, last].into_iter().enumerate() {
        let raw = meta.decode_pixels()?;
        let mut resized = resize_bilinear(&raw, meta.rows, meta.columns, out_size);
        normalize_minmax(&mut resized);
        for (i, &v) in resized.iter().enumerate() {
            pixels[i * 3 + c] = v;
        }
    }
    Ok(Datapoint {
        pixels,
        size: out_size,
        label,
        study_instance_uid: record.study_instance_uid.clone(),
        vendor: record.vendor,
        source_series: record.group_key.clone(),
    })
}

/// 8-bit binary PGM (P5). Values expected in [0,1].
pub fn write_pgm(path: &Path, image: &[f64], h: usize, w: usize) -> Result<()> {
    assert_eq!(image.len(), h * w);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header = format!("P5\n{w} {h}\n255\n");
    let body: Vec<u8> = image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(header.as_bytes())
        .and_then(|_| f.write_all(&body))
        .map_err(|e| Error::io(path, e))
}

/// Debug dump: one PGM per channel.
pub fn dump_datapoint_pgm(dp: &Datapoint, dir: &Path, stem: &str) -> Result<()> {
    for c in 0..3 {
        let path = dir.join(format!("{stem}_ch{c}.pgm"));
        write_pgm(&path, &dp.channel(c), dp.size, dp.size)?;
    }
    Ok(())
}
