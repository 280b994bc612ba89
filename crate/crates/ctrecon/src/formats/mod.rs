//! On-disk formats. Binary formats are little-endian, start with an 8-byte
//! magic string and a `u32` version, and are documented in `docs/formats.md`.

mod image;
mod phantom;
mod sinogram;
mod tables;
mod weights;

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub use image::{read_image, read_pgm, write_image, write_pgm, PgmDepth, Window, IMAGE_MAGIC};
pub use phantom::{parse_phantom, read_phantom, render_phantom, write_phantom};
pub use sinogram::{decode_sinogram, encode_sinogram, read_sinogram, write_sinogram, SINOGRAM_MAGIC};
pub use tables::{write_history_csv, write_solver_log_csv};
pub use weights::{decode_weights, encode_weights, read_weights, write_weights, WEIGHTS_MAGIC};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a {0} file (bad magic)")]
    Magic(&'static str),
    #[error("unsupported {kind} format version {found}")]
    Version { kind: &'static str, found: u32 },
    #[error("truncated {0} file")]
    Truncated(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] ctrecon_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8]) -> Self {
        let mut w = Writer { buf: magic.to_vec() };
        w.u32(FORMAT_VERSION);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    kind: &'static str,
}

impl<'a> Reader<'a> {
    /// Checks magic and version.
    pub fn new(bytes: &'a [u8], magic: &[u8; 8], kind: &'static str) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != magic {
            return Err(FormatError::Magic(kind));
        }
        let mut r = Reader { bytes: &bytes[8..], kind };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version { kind, found: version });
        }
        Ok(r)
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.bytes.len() < N {
            return Err(FormatError::Truncated(self.kind));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().unwrap())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    /// Guards allocations sized from header fields.
    pub fn expect_remaining(&self, bytes: u64) -> Result<()> {
        if (self.bytes.len() as u64) < bytes {
            return Err(FormatError::Truncated(self.kind));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if !self.bytes.is_empty() {
            return Err(FormatError::Invalid(format!("{} trailing bytes after {} data", self.bytes.len(), self.kind)));
        }
        Ok(())
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}
