use std::fs;
use std::path::Path;

use ctrecon_core::Image;

use super::{write_bytes, FormatError, Reader, Result, Writer};

pub const IMAGE_MAGIC: &[u8; 8] = b"CTRIMG\0\0";

/// Raw image: `side: u32`, `pixel_spacing: f64`, then `side^2` row-major
/// `f64` values.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let mut w = Writer::new(IMAGE_MAGIC);
    w.u32(image.side() as u32);
    w.f64(image.pixel_spacing());
    for &v in image.values() {
        w.f64(v);
    }
    write_bytes(path, &w.buf)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, IMAGE_MAGIC, "image")?;
    let side = r.u32()? as usize;
    let spacing = r.f64()?;
    r.expect_remaining(8 * (side as u64) * (side as u64))?;
    let values = (0..side * side).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Image::from_values(side, spacing, values)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    pub fn maxval(self) -> u16 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Intensity window mapped linearly onto `0..=maxval`; values outside are
/// clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    /// Minimum to maximum of the image.
    pub fn fit(image: &Image) -> Self {
        let (lo, hi) =
            image.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Window { lo, hi }
    }

    fn level(&self, v: f64, maxval: u16) -> u16 {
        let span = self.hi - self.lo;
        if !(span > 0.0) || !v.is_finite() {
            return 0;
        }
        let t = ((v - self.lo) / span).clamp(0.0, 1.0);
        (t * maxval as f64).round() as u16
    }
}

/// Binary (`P5`) greymap; 16-bit samples are big-endian as the format
/// requires.
pub fn write_pgm(path: &Path, image: &Image, window: Window, depth: PgmDepth) -> Result<()> {
    let side = image.side();
    let maxval = depth.maxval();
    let mut buf = format!("P5\n{side} {side}\n{maxval}\n").into_bytes();
    for &v in image.values() {
        let q = window.level(v, maxval);
        match depth {
            PgmDepth::Eight => buf.push(q as u8),
            PgmDepth::Sixteen => buf.extend_from_slice(&q.to_be_bytes()),
        }
    }
    write_bytes(path, &buf)
}

/// Reads a `P5` file written by [`write_pgm`]: returns width, height,
/// maxval and the samples.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, u16, Vec<u16>)> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| FormatError::Invalid(format!("PGM: {m}"));
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary greymap"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    let data = &bytes[pos + 1..];
    let samples: Vec<u16> = if maxval < 256 {
        data.iter().map(|&b| b as u16).collect()
    } else {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if samples.len() != w * h {
        return Err(bad("sample count does not match header"));
    }
    Ok((w, h, maxval as u16, samples))
}
