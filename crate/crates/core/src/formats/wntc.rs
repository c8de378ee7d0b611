//! `WNTC`: a flat list of named f32 tensors.
//!
//! magic "WNTC", u32 version, u32 count; per tensor: u16 name length, UTF-8
//! name, u8 rank, rank x u32 dims, prod(dims) f32. No trailing bytes.

use std::collections::HashSet;
use std::path::Path;

use super::{push_f32s, read_file, write_file, ByteReader};
use crate::error::{FormatError, Result};

pub const MAGIC: &[u8; 4] = b"WNTC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)) != Some(data.len()) {
            return Err(invalid(format!("tensor `{name}`: {} values for dims {dims:?}", data.len())));
        }
        Ok(NamedTensor { name, dims, data })
    }
}

fn invalid(reason: String) -> crate::error::Error {
    FormatError::Invalid { format: "WNTC", reason }.into()
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| invalid("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(FormatError::DuplicateTensor(t.name.clone()).into());
        }
        let len = u16::try_from(t.name.len()).map_err(|_| invalid(format!("name `{}` too long", t.name)))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| invalid(format!("tensor `{}` rank too high", t.name)))?;
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(invalid(format!("tensor `{}` data does not match dims", t.name)));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| invalid(format!("tensor `{}` dim exceeds u32", t.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        push_f32s(&mut out, &t.data);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = ByteReader::new("WNTC", bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u32("tensor count")? as usize;
    // Each tensor needs at least 3 header bytes.
    let mut tensors = Vec::with_capacity(count.min(r.remaining() / 3));
    let mut seen = HashSet::new();
    for i in 0..count {
        let len = r.u16(&format!("name length of tensor {i}"))? as usize;
        let raw = r.take(len, &format!("name of tensor {i}"))?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| invalid(format!("name of tensor {i} is not UTF-8")))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(FormatError::DuplicateTensor(name).into());
        }
        let rank = r.u8(&format!("rank of `{name}`"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&format!("dims of `{name}`"))? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| invalid(format!("dims of `{name}` overflow")))?;
        let data = r.f32s(numel, &format!("data of `{name}`"))?;
        tensors.push(NamedTensor { name, dims, data });
    }
    r.finish()?;
    Ok(tensors)
}

pub fn save(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    write_file(path, &encode(tensors)?)
}

pub fn load(path: &Path) -> Result<Vec<NamedTensor>> {
    decode(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor::new("a.weight", vec![2, 1, 1, 2], vec![1.0, -2.0, 0.5, 1e-20]).unwrap(),
            NamedTensor::new("a.bias", vec![2], vec![0.0, -0.0]).unwrap(),
            NamedTensor::new("scalar", vec![], vec![42.0]).unwrap(),
        ]
    }

    #[test]
    fn round_trip_bit_identical() {
        let t = sample();
        let back = decode(&encode(&t).unwrap()).unwrap();
        assert_eq!(back.len(), t.len());
        for (a, b) in t.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.dims, b.dims);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn duplicate_names_rejected_both_ways() {
        let mut t = sample();
        t.push(t[0].clone());
        assert!(matches!(encode(&t), Err(Error::Format(FormatError::DuplicateTensor(_)))));

        let mut bytes = encode(&sample()[..1]).unwrap();
        let body = bytes[12..].to_vec();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&body);
        assert!(matches!(decode(&bytes), Err(Error::Format(FormatError::DuplicateTensor(_)))));
    }

    #[test]
    fn trailing_and_truncated() {
        let bytes = encode(&sample()).unwrap();
        let mut long = bytes.clone();
        long.extend_from_slice(&[0, 0]);
        assert!(matches!(decode(&long), Err(Error::Format(FormatError::TrailingBytes { count: 2, .. }))));
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
        }
    }

    #[test]
    fn huge_count_does_not_preallocate() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"WNTC");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Format(FormatError::Truncated { .. }))));
    }
}
