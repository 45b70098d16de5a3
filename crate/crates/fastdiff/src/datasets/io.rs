//! Dataset directory layout and paired-image ingestion.
//!
//! Layout: `<root>/manifest.txt` (UTF-8, one id per line, defines iteration
//! order), `<root>/target/<id>.pgm` and `<root>/cond/<id>.pgm` for
//! single-channel conditions, or `<root>/cond/<id>.c<k>.pgm` per channel for
//! multi-channel stacks. PNG files with the same stems are accepted on load.
//! Pixels map linearly: 0 → −1, maxval → +1 (16-bit max-value → exactly 1.0).

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::pgm;
use super::{Dataset, PairSample};

/// Expected structure of a dataset directory.
#[derive(Debug, Clone, Copy)]
pub struct DirLayout {
    pub cond_channels: usize,
    /// Bilinear-resize everything to this square size on load.
    pub resize_to: Option<usize>,
}

fn quantize16(v: f32) -> u16 {
    (((v + 1.0) / 2.0 * 65535.0).round()).clamp(0.0, 65535.0) as u16
}

fn plane_to_u16(t: &Tensor<f32>, channel: usize) -> (usize, usize, Vec<u16>) {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let plane = &t.data()[channel * h * w..(channel + 1) * h * w];
    (h, w, plane.iter().map(|&v| quantize16(v)).collect())
}

/// Write a dataset as 16-bit PGMs plus a manifest (lossless at 16-bit
/// quantization: per-pixel error ≤ 2⁻¹⁶ of the full range).
pub fn save_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    if dataset.target_channels() != 1 {
        return Err(Error::Dataset(format!(
            "directory format stores single-channel targets, got {}",
            dataset.target_channels()
        )));
    }
    fs::create_dir_all(root.join("target"))?;
    fs::create_dir_all(root.join("cond"))?;
    let mut manifest = String::new();
    for s in dataset.samples() {
        manifest.push_str(&s.id);
        manifest.push('\n');
        let (h, w, data) = plane_to_u16(&s.target, 0);
        let mut f = BufWriter::new(fs::File::create(
            root.join("target").join(format!("{}.pgm", s.id)),
        )?);
        pgm::write_pgm16(&mut f, w, h, &data)?;
        let cc = s.cond.shape()[0];
        for k in 0..cc {
            let (h, w, data) = plane_to_u16(&s.cond, k);
            let name = if cc == 1 {
                format!("{}.pgm", s.id)
            } else {
                format!("{}.c{k}.pgm", s.id)
            };
            let mut f = BufWriter::new(fs::File::create(root.join("cond").join(name))?);
            pgm::write_pgm16(&mut f, w, h, &data)?;
        }
    }
    fs::write(root.join("manifest.txt"), manifest)?;
    Ok(())
}

struct DecodedImage {
    width: usize,
    height: usize,
    bit_depth: u8,
    /// normalized to [−1, 1]
    data: Vec<f32>,
}

fn decode_file(path: &Path) -> Result<DecodedImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "pgm" => {
            let mut r = BufReader::new(fs::File::open(path)?);
            let img = pgm::read_pgm(&mut r)?;
            let max = img.maxval as f32;
            Ok(DecodedImage {
                width: img.width,
                height: img.height,
                bit_depth: img.bit_depth(),
                data: img
                    .data
                    .iter()
                    .map(|&v| v as f32 / max * 2.0 - 1.0)
                    .collect(),
            })
        }
        "png" => {
            let img = image::open(path)
                .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
            match img {
                image::DynamicImage::ImageLuma8(g) => Ok(DecodedImage {
                    width: g.width() as usize,
                    height: g.height() as usize,
                    bit_depth: 8,
                    data: g.pixels().map(|p| p.0[0] as f32 / 255.0 * 2.0 - 1.0).collect(),
                }),
                image::DynamicImage::ImageLuma16(g) => Ok(DecodedImage {
                    width: g.width() as usize,
                    height: g.height() as usize,
                    bit_depth: 16,
                    data: g
                        .pixels()
                        .map(|p| p.0[0] as f32 / 65535.0 * 2.0 - 1.0)
                        .collect(),
                }),
                _ => Err(Error::Dataset(format!(
                    "{}: expected 8- or 16-bit grayscale PNG",
                    path.display()
                ))),
            }
        }
        _ => Err(Error::Dataset(format!(
            "{}: unsupported extension (pgm/png)",
            path.display()
        ))),
    }
}

/// Find `<dir>/<stem>.pgm` or `<dir>/<stem>.png`.
fn resolve(dir: &Path, stem: &str) -> Option<PathBuf> {
    for ext in ["pgm", "png"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.is_file() {
            return Some(p);
        }
    }
    None
}

/// Bilinear resample of a single [H,W] plane (half-pixel centers).
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; oh * ow];
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    for y in 0..oh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for x in 0..ow {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out[y * ow + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

/// Load a paired-image directory per the documented layout.
///
/// Problems (missing pair members, undecodable files, mixed bit depths,
/// mismatched extents) are collected and reported together.
pub fn load_image_dir(root: &Path, layout: &DirLayout) -> Result<Dataset> {
    if layout.cond_channels == 0 {
        return Err(Error::Dataset("cond_channels must be >= 1".to_string()));
    }
    let manifest_path = root.join("manifest.txt");
    let manifest = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
    let ids: Vec<&str> = manifest
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();

    let mut problems: Vec<String> = Vec::new();
    let mut depth_seen: Option<u8> = None;
    let mut samples = Vec::with_capacity(ids.len());

    let check_depth = |d: u8, what: &str, problems: &mut Vec<String>,
                       depth_seen: &mut Option<u8>| {
        match *depth_seen {
            None => *depth_seen = Some(d),
            Some(prev) if prev != d => {
                problems.push(format!("{what}: bit depth {d} but dataset started at {prev}"))
            }
            _ => {}
        }
    };

    for id in &ids {
        let mut load_plane = |dir: &str, stem: &str| -> Option<DecodedImage> {
            let Some(path) = resolve(&root.join(dir), stem) else {
                problems.push(format!("{id}: missing {dir}/{stem}.pgm|png"));
                return None;
            };
            match decode_file(&path) {
                Ok(img) => {
                    check_depth(
                        img.bit_depth,
                        &path.display().to_string(),
                        &mut problems,
                        &mut depth_seen,
                    );
                    Some(img)
                }
                Err(e) => {
                    problems.push(e.to_string());
                    None
                }
            }
        };

        let target = load_plane("target", id);
        let mut cond_planes = Vec::with_capacity(layout.cond_channels);
        if layout.cond_channels == 1 {
            if let Some(c) = load_plane("cond", id) {
                cond_planes.push(c);
            }
        } else {
            for k in 0..layout.cond_channels {
                if let Some(c) = load_plane("cond", &format!("{id}.c{k}")) {
                    cond_planes.push(c);
                }
            }
        }
        let Some(target) = target else { continue };
        if cond_planes.len() != layout.cond_channels {
            continue;
        }
        if cond_planes
            .iter()
            .any(|c| c.width != target.width || c.height != target.height)
        {
            problems.push(format!("{id}: condition extents differ from target"));
            continue;
        }

        let finish = |img: DecodedImage| -> (usize, usize, Vec<f32>) {
            match layout.resize_to {
                Some(size) if size != img.height || size != img.width => (
                    size,
                    size,
                    resize_bilinear(&img.data, img.height, img.width, size, size),
                ),
                _ => (img.height, img.width, img.data),
            }
        };
        let (h, w, tdata) = finish(target);
        let target_t = match Tensor::from_vec(&[1, h, w], tdata) {
            Ok(t) => t,
            Err(e) => {
                problems.push(format!("{id}: {e}"));
                continue;
            }
        };
        let mut cdata = Vec::with_capacity(layout.cond_channels * h * w);
        for c in cond_planes {
            let (_, _, d) = finish(c);
            cdata.extend(d);
        }
        let cond_t = match Tensor::from_vec(&[layout.cond_channels, h, w], cdata) {
            Ok(t) => t,
            Err(e) => {
                problems.push(format!("{id}: {e}"));
                continue;
            }
        };
        match PairSample::new(id.to_string(), target_t, cond_t) {
            Ok(s) => samples.push(s),
            Err(e) => problems.push(e.to_string()),
        }
    }

    if !problems.is_empty() {
        return Err(Error::Dataset(format!(
            "{} problem(s):\n  {}",
            problems.len(),
            problems.join("\n  ")
        )));
    }
    Dataset::new(samples)
}
