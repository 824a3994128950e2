//! 8-bit binary PGM images of class affiliations.
//!
//! One image per class, `frames` pixels wide and `bins` pixels high, with
//! the highest frequency bin on the top row. Pixel value is `round(255 g)`.

use std::path::{Path, PathBuf};

use beamlearn::types::ClassAffiliations;
use beamlearn::{Error, Result};

pub fn encode(g: &ClassAffiliations<f64>, class: usize) -> Vec<u8> {
    let (frames, bins) = (g.frames(), g.bins());
    let mut out = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    out.reserve(frames * bins);
    for f in (0..bins).rev() {
        for t in 0..frames {
            out.push(pixel(g.get(class, t, f)));
        }
    }
    out
}

fn pixel(v: f64) -> u8 {
    (255.0 * v).round().clamp(0.0, 255.0) as u8
}

/// Parses a binary PGM into `(width, height, pixels)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Format("not an 8-bit binary PGM".into());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(bad());
    }
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = bytes.get(pos..).ok_or_else(bad)?;
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, pixels.to_vec()))
}

/// Writes `mask_<k>.pgm` for every class and returns the paths.
pub fn write_mask_images(dir: &Path, g: &ClassAffiliations<f64>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..g.classes())
        .map(|k| {
            let p = dir.join(format!("mask_{k}.pgm"));
            std::fs::write(&p, encode(g, k))?;
            Ok(p)
        })
        .collect()
}
