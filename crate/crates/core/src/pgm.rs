//! 8-bit grayscale images and binary PGM (`P5`) I/O.

use std::io::Write;
use std::path::Path;

use crate::error::{ensure, file_err, Error, Result};
use crate::masks::BinaryMask;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        ensure!(
            pixels.len() == height * width,
            "image of {height}x{width} needs {} pixels, got {}",
            height * width,
            pixels.len()
        );
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        self.pixels[r * self.width + c] = v;
    }

    /// Pixel values scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            pixels: mask.pixels().iter().map(|&p| p * 255).collect(),
        }
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Pgm(m.to_string());
        let mut fields = Vec::with_capacity(4);
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
                if bytes[i] == b'#' {
                    while i < bytes.len() && bytes[i] != b'\n' {
                        i += 1;
                    }
                } else {
                    i += 1;
                }
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("non-ascii header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary PGM (P5)"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit PGM (maxval 255) is supported"));
        }
        // exactly one whitespace byte separates the header from the raster
        let data = bytes.get(i + 1..).ok_or_else(|| bad("missing raster"))?;
        if data.len() < width * height {
            return Err(bad("raster shorter than header claims"));
        }
        Self::new(height, width, data[..width * height].to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(file_err(path))?;
        f.write_all(&self.encode_pgm()).map_err(file_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(file_err(path))?;
        Self::decode_pgm(&bytes)
    }
}

/// Writes a mask as a PGM with foreground at 255.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    GrayImage::from_mask(mask).write(path)
}

/// Loads a mask PGM; any nonzero pixel is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = GrayImage::read(path)?;
    BinaryMask::new(
        img.height,
        img.width,
        img.pixels.iter().map(|&p| u8::from(p != 0)).collect(),
    )
}
