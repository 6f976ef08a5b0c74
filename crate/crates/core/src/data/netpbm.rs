//! Binary netpbm: P5 (grey) and P6 (RGB), maxval 255 only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// A decoded 8-bit raster, interleaved when `channels == 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Cursor<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_string(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                path: self.path.to_string(),
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

/// Parses a P5/P6 byte stream; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &str) -> Result<Raster> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(cur.fail("expected magic P5 or P6")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format {
            path: path.to_string(),
            offset: maxval_at,
            reason: format!("maxval {maxval} unsupported, only 255"),
        });
    }
    if width == 0 || height == 0 {
        return Err(cur.fail("zero image dimension"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.fail("expected single whitespace before payload")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| cur.fail("image dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Format {
            path: path.to_string(),
            offset: bytes.len(),
            reason: format!("truncated payload, need {need} bytes, have {}", payload.len()),
        });
    }
    Ok(Raster {
        width,
        height,
        channels,
        pixels: payload[..need].to_vec(),
    })
}

pub fn encode(r: &Raster) -> Vec<u8> {
    let magic = if r.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.pixels);
    out
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn write(path: &Path, r: &Raster) -> Result<()> {
    assert!(r.channels == 1 || r.channels == 3, "netpbm rasters are grey or RGB");
    assert_eq!(r.pixels.len(), r.width * r.height * r.channels);
    fs::write(path, encode(r)).map_err(|e| Error::io(path, e))
}

/// `round(255·v)` after clamping to `[0,1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Converts a planar `(1,c,h,w)` tensor with values in `[0,1]` to an interleaved raster.
pub fn raster_from_tensor(t: &Tensor<f32>) -> Result<Raster> {
    let s = t.shape();
    if s.n() != 1 || (s.c() != 1 && s.c() != 3) {
        return Err(Error::shape("netpbm", format!("expected (1,1|3,h,w), got {s}")));
    }
    let mut pixels = Vec::with_capacity(s.numel());
    for y in 0..s.h() {
        for x in 0..s.w() {
            for c in 0..s.c() {
                pixels.push(quantize(t.at(0, c, y, x) as f64));
            }
        }
    }
    Ok(Raster {
        width: s.w(),
        height: s.h(),
        channels: s.c(),
        pixels,
    })
}

/// Planar `(1,c,h,w)` tensor with values `byte/255`.
pub fn tensor_from_raster(r: &Raster) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, r.channels, r.height, r.width), |_, c, y, x| {
        r.pixels[(y * r.width + x) * r.channels + c] as f32 / 255.0
    })
}

/// Loads a P6 colour image as a `(1,3,h,w)` tensor.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let r = read(path)?;
    if r.channels != 3 {
        return Err(Error::Data(format!("{}: expected a P6 colour image", path.display())));
    }
    Ok(tensor_from_raster(&r))
}

/// Loads a P5 map as a `(1,1,h,w)` tensor of `byte/255`.
pub fn load_map(path: &Path) -> Result<Tensor<f32>> {
    let r = read(path)?;
    if r.channels != 1 {
        return Err(Error::Data(format!("{}: expected a P5 grey map", path.display())));
    }
    Ok(tensor_from_raster(&r))
}

/// Loads a P5 mask, binarised at 128.
pub fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    Ok(load_map(path)?.map(|v| if v >= 128.0 / 255.0 { 1.0 } else { 0.0 }))
}

/// Writes a `(1,c,h,w)` tensor as P5 (c = 1) or P6 (c = 3).
pub fn save_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write(path, &raster_from_tensor(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_two_by_two_payload() {
        let bytes = b"P5\n# comment\n2 2\n255\n\x00\x80\xff\x33";
        let r = decode(bytes, "t").unwrap();
        assert_eq!((r.width, r.height, r.channels), (2, 2, 1));
        let t = tensor_from_raster(&r);
        assert_eq!(t.data(), &[0.0, 128.0 / 255.0, 1.0, 51.0 / 255.0]);
    }

    #[test]
    fn rejects_bad_headers_with_offsets() {
        let e = decode(b"P3\n1 1\n255\n\x00", "t").unwrap_err();
        assert!(matches!(e, Error::Format { offset: 0, .. }), "{e}");
        let e = decode(b"P5\n1 1\n65535\n\x00\x00", "t").unwrap_err();
        assert!(matches!(e, Error::Format { offset: 7, .. }), "{e}");
        let e = decode(b"P6\n2 2\n255\n\x00\x00\x00", "t").unwrap_err();
        assert!(e.to_string().contains("truncated"), "{e}");
        let e = decode(b"P5\nx 1\n255\n", "t").unwrap_err();
        assert!(matches!(e, Error::Format { offset: 3, .. }), "{e}");
    }

    #[test]
    fn encode_decode_round_trip() {
        let r = Raster {
            width: 3,
            height: 2,
            channels: 3,
            pixels: (0..18).map(|v| (v * 14) as u8).collect(),
        };
        assert_eq!(decode(&encode(&r), "t").unwrap(), r);
    }

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(-0.5), 0);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(1.0 / 255.0), 1);
    }
}
