use std::fs;
use std::path::Path;

use ctrecon_core::{Geometry, Sinogram};

use super::{write_bytes, Reader, Result, Writer};

pub const SINOGRAM_MAGIC: &[u8; 8] = b"CTRSINO\0";

/// Header: `n_views: u32`, `n_bins: u32`, `det_spacing: f64`,
/// `image_side: u32`, `pixel_spacing: f64`; then `n_views` angles and the
/// `n_views x n_bins` values, all `f64`.
pub fn encode_sinogram(sino: &Sinogram) -> Vec<u8> {
    let g = sino.geometry();
    let mut w = Writer::new(SINOGRAM_MAGIC);
    w.u32(g.n_views() as u32);
    w.u32(g.n_bins() as u32);
    w.f64(g.det_spacing());
    w.u32(g.image_side() as u32);
    w.f64(g.pixel_spacing());
    for &a in g.angles() {
        w.f64(a);
    }
    for &v in sino.values() {
        w.f64(v);
    }
    w.buf
}

pub fn decode_sinogram(bytes: &[u8]) -> Result<Sinogram> {
    let mut r = Reader::new(bytes, SINOGRAM_MAGIC, "sinogram")?;
    let n_views = r.u32()? as usize;
    let n_bins = r.u32()? as usize;
    let det_spacing = r.f64()?;
    let image_side = r.u32()? as usize;
    let pixel_spacing = r.f64()?;
    r.expect_remaining(8 * (n_views as u64) * (n_bins as u64 + 1))?;
    let angles = (0..n_views).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let values = (0..n_views * n_bins).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let geometry = Geometry::new(angles, n_bins, det_spacing, image_side, pixel_spacing)?;
    Ok(Sinogram::from_values(geometry, values)?)
}

pub fn write_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    write_bytes(path, &encode_sinogram(sino))
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    decode_sinogram(&fs::read(path)?)
}
