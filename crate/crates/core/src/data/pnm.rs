//! 8-bit binary PGM (`P5`) and PPM (`P6`) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Data(format!(
                "{} bytes for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Planar `C x H x W` values in `[0, 1]`.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, &b) in self.pixels.iter().enumerate() {
            out[(i % self.channels) * plane + i / self.channels] = b as f64 / 255.0;
        }
        out
    }

    /// Quantises planar `C x H x W` values (clamped to `[0, 1]`).
    pub fn from_planar(values: &[f64], channels: usize, height: usize, width: usize) -> Result<Self> {
        let plane = width * height;
        if values.len() != plane * channels {
            return Err(Error::Data(format!("{} values for {channels}x{height}x{width}", values.len())));
        }
        let mut pixels = vec![0u8; values.len()];
        for (i, px) in pixels.iter_mut().enumerate() {
            *px = quantize(values[(i % channels) * plane + i / channels]);
        }
        Image::new(width, height, channels, pixels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::Data(format!("unsupported image magic {other:?}"))),
        };
        let width = number(bytes, &mut pos)?;
        let height = number(bytes, &mut pos)?;
        let maxval = number(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(Error::Data(format!("maxval {maxval} unsupported (need 255)")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Data("missing raster separator".into()));
        }
        pos += 1;
        let need = width * height * channels;
        let raster = &bytes[pos..];
        if raster.len() != need {
            return Err(Error::Data(format!("raster has {} bytes, expected {need}", raster.len())));
        }
        Image::new(width, height, channels, raster.to_vec())
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Data("truncated image header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let t = token(bytes, pos)?;
    t.parse().map_err(|_| Error::Data(format!("bad header number {t:?}")))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::from_bytes(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, image.to_bytes()).map_err(|e| Error::io(path, e))
}
