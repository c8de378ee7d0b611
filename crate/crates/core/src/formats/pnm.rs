//! Binary 8-bit PNM images: P5 (grayscale) and P6 (RGB).

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{FormatError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    /// Interleaved samples, row-major.
    pub pixels: Vec<u8>,
    pub maxval: u8,
}

fn invalid(reason: impl Into<String>) -> crate::error::Error {
    FormatError::Invalid {
        format: "PNM",
        reason: reason.into(),
    }
    .into()
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("{channels} channels")));
        }
        if width.checked_mul(height).and_then(|p| p.checked_mul(channels)) != Some(pixels.len()) {
            return Err(invalid("pixel buffer does not match dims"));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
            maxval: 255,
        })
    }

    /// Planar 3-channel values in [0, 1]; grayscale is replicated.
    pub fn to_rgb_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let scale = 1.0 / self.maxval as f32;
        let mut out = vec![0.0; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                let src = if self.channels == 1 { i } else { 3 * i + c };
                out[c * plane + i] = self.pixels[src] as f32 * scale;
            }
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 2 || bytes[0] != b'P' {
            return Err(FormatError::BadMagic {
                expected: "P5 or P6".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
            }
            .into());
        }
        let channels = match bytes[1] {
            b'5' => 1,
            b'6' => 3,
            _ => {
                return Err(FormatError::BadMagic {
                    expected: "P5 or P6".into(),
                    found: String::from_utf8_lossy(&bytes[..2]).into_owned(),
                }
                .into())
            }
        };
        let mut pos = 2;
        let mut header = [0usize; 3];
        for (i, slot) in header.iter_mut().enumerate() {
            // Whitespace and comments before each header token.
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(_) => break,
                    None => {
                        return Err(FormatError::Truncated {
                            format: "PNM",
                            context: "header".into(),
                        }
                        .into())
                    }
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            let token = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
            *slot = token
                .parse()
                .map_err(|_| invalid(format!("bad header field {}", i + 1)))?;
        }
        let [width, height, maxval] = header;
        if width == 0 || height == 0 {
            return Err(invalid("zero dimension"));
        }
        if maxval == 0 || maxval > 255 {
            return Err(invalid(format!("maxval {maxval} unsupported (8-bit only)")));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(invalid("missing separator after header"));
        }
        pos += 1;
        let count = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| invalid("dims overflow"))?;
        let raster = &bytes[pos..];
        if raster.len() < count {
            return Err(FormatError::Truncated {
                format: "PNM",
                context: "raster".into(),
            }
            .into());
        }
        if raster.len() > count {
            return Err(FormatError::TrailingBytes {
                format: "PNM",
                count: raster.len() - count,
            }
            .into());
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels: raster.to_vec(),
            maxval: maxval as u8,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Image::decode(&read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }
}
