//! `DMAP`: a single-channel f32 raster.
//!
//! magic "DMAP", u32 version, u32 height, u32 width, height*width f32 row-major.

use std::path::Path;

use super::{push_f32s, read_file, write_file, ByteReader};
use crate::error::{FormatError, Result};

pub const MAGIC: &[u8; 4] = b"DMAP";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Dmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl Dmap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height.checked_mul(width) != Some(values.len()) {
            return Err(FormatError::Invalid {
                format: "DMAP",
                reason: format!("{} values for a {height}x{width} raster", values.len()),
            }
            .into());
        }
        if height > u32::MAX as usize || width > u32::MAX as usize {
            return Err(FormatError::Invalid {
                format: "DMAP",
                reason: "dimension exceeds u32".into(),
            }
            .into());
        }
        Ok(Dmap { height, width, values })
    }

    /// Narrowing an f64 raster to the on-disk precision.
    pub fn from_f64(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Dmap::new(height, width, values.iter().map(|&v| v as f32).collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        push_f32s(&mut out, &self.values);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("DMAP", bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let height = r.u32("height")? as usize;
        let width = r.u32("width")? as usize;
        let count = height.checked_mul(width).ok_or_else(|| FormatError::Invalid {
            format: "DMAP",
            reason: format!("{height}x{width} overflows"),
        })?;
        let values = r.f32s(count, "values")?;
        r.finish()?;
        Ok(Dmap { height, width, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dmap::decode(&read_file(path)?)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn round_trip_is_lossless() {
        let m = Dmap::new(2, 3, vec![0.0, -1.5, f32::MIN_POSITIVE, 3.25, 1e-30, 7.0]).unwrap();
        let bytes = m.encode();
        assert_eq!(bytes.len(), 16 + 4 * 6);
        assert_eq!(Dmap::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn header_layout() {
        let bytes = Dmap::new(1, 2, vec![1.0, 2.0]).unwrap().encode();
        assert_eq!(&bytes[..4], b"DMAP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
    }

    #[test]
    fn distinct_errors() {
        let good = Dmap::new(2, 2, vec![1.0; 4]).unwrap().encode();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Dmap::decode(&bad_magic), Err(Error::Format(FormatError::BadMagic { .. }))));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(Dmap::decode(&bad_version), Err(Error::Format(FormatError::Version { found: 2, .. }))));
        assert!(matches!(Dmap::decode(&good[..good.len() - 1]), Err(Error::Format(FormatError::Truncated { .. }))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(Dmap::decode(&long), Err(Error::Format(FormatError::TrailingBytes { count: 1, .. }))));
    }

    #[test]
    fn huge_declared_dims_fail_without_allocating() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DMAP");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(Dmap::decode(&bytes), Err(Error::Format(FormatError::Truncated { .. }))));
    }

    #[test]
    fn value_count_must_match_dims() {
        assert!(Dmap::new(2, 2, vec![0.0; 3]).is_err());
    }
}
