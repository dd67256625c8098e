//! Binary PGM (`P5`) with 8-bit samples.

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    /// Row-major samples.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            bail!(
                Format,
                "{}x{} image cannot hold {} pixels",
                width,
                height,
                pixels.len()
            );
        }
        Ok(Self {
            width,
            height,
            maxval: 255,
            pixels,
        })
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Skips whitespace and `#` comments running to end of line.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            bail!(Format, "PGM header: expected {field}");
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse() {
            Ok(v) => Ok(v),
            Err(_) => bail!(Format, "PGM header: {field} {text} out of range"),
        }
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        bail!(Format, "not a binary PGM: magic must be P5");
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        bail!(Format, "PGM dimensions must be positive, got {width}x{height}");
    }
    if maxval == 0 || maxval > 255 {
        bail!(Format, "PGM maxval {maxval} unsupported; must be 1..=255");
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => bail!(Format, "PGM header must end with one whitespace byte"),
    }
    let need = width
        .checked_mul(height)
        .filter(|&n| n <= isize::MAX as usize)
        .ok_or_else(|| crate::Error::Format(format!("PGM size {width}x{height} overflows")))?;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        bail!(
            Format,
            "PGM payload truncated: {} of {} bytes present",
            payload.len(),
            need
        );
    }
    let pixels = payload[..need].to_vec();
    if let Some(&v) = pixels.iter().find(|&&v| usize::from(v) > maxval) {
        bail!(Format, "PGM sample {v} exceeds maxval {maxval}");
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u8,
        pixels,
    })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}
