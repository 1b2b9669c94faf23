//! Binary PPM (P6) and PGM (P5) read/write, plus clip directory layout.
//!
//! Frames are exported as `frame_NNNNNN.ppm` and patch-level label maps as
//! `label_NNNNNN.pgm`, zero-padded, 8-bit. The same reader ingests external
//! frame directories, so real data can be dropped in without new formats.

use crate::error::{Error, Result};
use crate::video::{CorrespondenceTruth, VideoClip};
use std::fs;
use std::path::{Path, PathBuf};

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an H×W×3 frame of [0,1] floats as binary PPM.
pub fn write_ppm(path: &Path, h: usize, w: usize, rgb: &[f32]) -> Result<()> {
    assert_eq!(rgb.len(), h * w * 3, "frame data length mismatch");
    let mut buf = Vec::with_capacity(h * w * 3 + 32);
    buf.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    buf.extend(rgb.iter().map(|&v| quantize(v)));
    fs::write(path, buf)?;
    Ok(())
}

/// Write a label map as binary PGM; labels must fit in a byte.
pub fn write_pgm(path: &Path, h: usize, w: usize, labels: &[u32]) -> Result<()> {
    assert_eq!(labels.len(), h * w, "label map length mismatch");
    let mut buf = Vec::with_capacity(h * w + 32);
    buf.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &l in labels {
        if l > 255 {
            return Err(Error::Contract(format!("label {l} does not fit in PGM byte")));
        }
        buf.push(l as u8);
    }
    fs::write(path, buf)?;
    Ok(())
}

struct PnmHeader {
    magic: [u8; 2],
    w: usize,
    h: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<PnmHeader> {
    let bad = |m: &str| Error::Parse(format!("{}: {m}", path.display()));
    if bytes.len() < 2 {
        return Err(bad("truncated header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    let mut field = 0;
    while field < 3 {
        // Skip whitespace and comments.
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("malformed header field"));
        }
        fields[field] = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("bad integer"))?;
        field += 1;
    }
    if pos >= bytes.len() {
        return Err(bad("missing data"));
    }
    pos += 1; // single whitespace after maxval
    Ok(PnmHeader {
        magic,
        w: fields[0],
        h: fields[1],
        maxval: fields[2],
        data_offset: pos,
    })
}

/// Read a binary PPM into (h, w, [0,1] floats).
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let hdr = parse_header(&bytes, path)?;
    if &hdr.magic != b"P6" {
        return Err(Error::Parse(format!("{}: not a P6 ppm", path.display())));
    }
    if hdr.maxval != 255 {
        return Err(Error::Parse(format!("{}: only 8-bit supported", path.display())));
    }
    let n = hdr.h * hdr.w * 3;
    let data = &bytes[hdr.data_offset..];
    if data.len() < n {
        return Err(Error::Parse(format!("{}: truncated pixel data", path.display())));
    }
    Ok((
        hdr.h,
        hdr.w,
        data[..n].iter().map(|&b| b as f32 / 255.0).collect(),
    ))
}

/// Read a binary PGM into (h, w, labels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let bytes = fs::read(path)?;
    let hdr = parse_header(&bytes, path)?;
    if &hdr.magic != b"P5" {
        return Err(Error::Parse(format!("{}: not a P5 pgm", path.display())));
    }
    if hdr.maxval != 255 {
        return Err(Error::Parse(format!("{}: only 8-bit supported", path.display())));
    }
    let n = hdr.h * hdr.w;
    let data = &bytes[hdr.data_offset..];
    if data.len() < n {
        return Err(Error::Parse(format!("{}: truncated label data", path.display())));
    }
    Ok((hdr.h, hdr.w, data[..n].iter().map(|&b| b as u32).collect()))
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.ppm")
}

pub fn label_name(i: usize) -> String {
    format!("label_{i:06}.pgm")
}

/// Export a clip (and optionally its truth maps) to a directory.
pub fn export_clip(dir: &Path, clip: &VideoClip, truth: Option<&CorrespondenceTruth>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in 0..clip.t {
        write_ppm(&dir.join(frame_name(t)), clip.h, clip.w, clip.frame_data(t))?;
    }
    if let Some(truth) = truth {
        for (t, labels) in truth.labels.iter().enumerate() {
            write_pgm(
                &dir.join(label_name(t)),
                truth.h_patches,
                truth.w_patches,
                labels,
            )?;
        }
    }
    Ok(())
}

/// Import every `*.ppm` in a directory, sorted by name, as a clip.
pub fn import_clip(dir: &Path) -> Result<VideoClip> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "ppm").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Parse(format!("no .ppm frames in {}", dir.display())));
    }
    let (h, w, first) = read_ppm(&paths[0])?;
    let mut frames = first;
    for p in &paths[1..] {
        let (fh, fw, data) = read_ppm(p)?;
        if fh != h || fw != w {
            return Err(Error::Parse(format!(
                "{}: frame size {}x{} differs from {}x{}",
                p.display(),
                fh,
                fw,
                h,
                w
            )));
        }
        frames.extend_from_slice(&data);
    }
    Ok(VideoClip::new(paths.len(), h, w, frames))
}

/// Read a first-frame label map and rasterize it to the patch grid.
///
/// Accepts either a patch-resolution map (used as-is) or a pixel-resolution
/// mask (downsampled by per-patch majority vote, lowest label on ties).
pub fn import_first_labels(
    path: &Path,
    frame_h: usize,
    frame_w: usize,
    patch: usize,
) -> Result<Vec<u32>> {
    let (h, w, labels) = read_pgm(path)?;
    let (hp, wp) = (frame_h / patch, frame_w / patch);
    if h == hp && w == wp {
        return Ok(labels);
    }
    if h != frame_h || w != frame_w {
        return Err(Error::Parse(format!(
            "{}: label map {}x{} matches neither patch grid {}x{} nor frame {}x{}",
            path.display(),
            h,
            w,
            hp,
            wp,
            frame_h,
            frame_w
        )));
    }
    let mut out = vec![0u32; hp * wp];
    for pr in 0..hp {
        for pc in 0..wp {
            let mut counts: Vec<(u32, usize)> = Vec::new();
            for dy in 0..patch {
                for dx in 0..patch {
                    let l = labels[(pr * patch + dy) * frame_w + pc * patch + dx];
                    match counts.iter_mut().find(|(v, _)| *v == l) {
                        Some((_, c)) => *c += 1,
                        None => counts.push((l, 1)),
                    }
                }
            }
            counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            out[pr * wp + pc] = counts[0].0;
        }
    }
    Ok(out)
}

/// Write PPM bytes to memory (for bit-identical directory comparisons in tests).
pub fn ppm_bytes(h: usize, w: usize, rgb: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(h * w * 3 + 32);
    buf.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    buf.extend(rgb.iter().map(|&v| quantize(v)));
    buf
}

impl VideoClip {
    /// Render a frame into owned PPM bytes.
    pub fn frame_ppm(&self, i: usize) -> Vec<u8> {
        ppm_bytes(self.h, self.w, self.frame_data(i))
    }
}
