//! Minimal Netpbm graymap (PGM) reading and writing.
//!
//! Reads binary `P5` and plain `P2` files with 8- or 16-bit samples
//! (16-bit samples are big-endian). Writes binary `P5`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    /// `(1, 1, height, width)` tensor of `pixel / maxval`.
    pub fn to_unit_tensor(&self) -> Result<Tensor<f32>> {
        let m = self.maxval as f32;
        Tensor::from_vec(
            [1, 1, self.height, self.width],
            self.pixels.iter().map(|&p| p as f32 / m).collect(),
        )
    }

    /// 8-bit image of `round(255 * v)` from channel plane `(0, channel)`,
    /// values clamped to [0, 1].
    pub fn from_unit_plane<E: Element>(t: &Tensor<E>, channel: usize) -> Self {
        let s = t.shape();
        GrayImage {
            width: s.width,
            height: s.height,
            maxval: 255,
            pixels: t
                .plane(0, channel)
                .iter()
                .map(|v| (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u16)
                .collect(),
        }
    }
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        loop {
            match self.rest.first() {
                Some(c) if c.is_ascii_whitespace() => self.rest = &self.rest[1..],
                Some(b'#') => {
                    let end = self.rest.iter().position(|&c| c == b'\n').unwrap_or(self.rest.len());
                    self.rest = &self.rest[end..];
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let end = self
            .rest
            .iter()
            .position(|c| !c.is_ascii_digit())
            .unwrap_or(self.rest.len());
        if end == 0 {
            return Err(Error::Format(format!("PGM: expected {what}")));
        }
        let s = std::str::from_utf8(&self.rest[..end]).expect("ascii digits");
        self.rest = &self.rest[end..];
        s.parse()
            .map_err(|_| Error::Format(format!("PGM: {what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Format("not a Netpbm file".into()));
    }
    let plain = match bytes[1] {
        b'5' => false,
        b'2' => true,
        b'1' | b'4' => return Err(Error::Format("bitmap (PBM) input, expected grayscale PGM".into())),
        b'3' | b'6' => return Err(Error::Format("color (PPM) input, expected grayscale PGM".into())),
        _ => return Err(Error::Format("unsupported Netpbm variant".into())),
    };
    let mut h = Header { rest: &bytes[2..] };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM: zero-sized image".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM: maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let pixels = if plain {
        (0..n)
            .map(|_| h.number("sample").map(|v| v as u16))
            .collect::<Result<Vec<_>>>()?
    } else {
        match h.rest.first() {
            Some(c) if c.is_ascii_whitespace() => {}
            _ => return Err(Error::Format("PGM: missing whitespace before raster".into())),
        }
        let raster = &h.rest[1..];
        let bps = if maxval < 256 { 1 } else { 2 };
        if raster.len() < n * bps {
            return Err(Error::Format(format!(
                "PGM: raster has {} bytes, expected {}",
                raster.len(),
                n * bps
            )));
        }
        if bps == 1 {
            raster[..n].iter().map(|&b| b as u16).collect()
        } else {
            raster[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        }
    };
    if pixels.iter().any(|&p| p as usize > maxval) {
        return Err(Error::Format("PGM: sample exceeds maxval".into()));
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval < 256 {
        out.extend(img.pixels.iter().map(|&p| p as u8));
    } else {
        for &p in &img.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    out
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode(img))?;
    Ok(())
}
