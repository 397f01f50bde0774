//! Attention heatmap export.
//!
//! Maps are scaled by their maximum (an all-zero map stays black), upsampled
//! bilinearly to the requested size and quantised to 8 bits. Colour output
//! indexes [`COLORMAP`]: entry `i` is `(r, g, b) = (i, 0, 255 - i)`, a linear
//! ramp from pure blue (0) to pure red (255).

use std::path::Path;

use crate::autodiff::{Tape, Tensor};
use crate::data::pnm::{quantize, write_image, Image};
use crate::error::{Error, Result};

pub const COLORMAP: [[u8; 3]; 256] = {
    let mut table = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        table[i] = [i as u8, 0, 255 - i as u8];
        i += 1;
    }
    table
};

/// Max-normalised copy of a non-negative map.
pub fn normalize_map(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Domain {
            op: "normalize_map",
            detail: format!("attention value {bad} is not a finite non-negative number"),
        });
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok(if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; values.len()]
    })
}

/// Normalised, upsampled 8-bit intensities of an `h x w` map.
pub fn heatmap_levels(values: &[f64], hw: (usize, usize), target: (usize, usize)) -> Result<Vec<u8>> {
    if values.len() != hw.0 * hw.1 {
        return Err(Error::shape("heatmap", format!("{} values for a {}x{} map", values.len(), hw.0, hw.1)));
    }
    let norm = Tensor::new(vec![hw.0, hw.1], normalize_map(values)?)?;
    let up = Tape::new().bilinear_upsample(&norm, target.0, target.1)?;
    Ok(up.data().iter().map(|&v| quantize(v)).collect())
}

pub fn heatmap_image(values: &[f64], hw: (usize, usize), target: (usize, usize), color: bool) -> Result<Image> {
    let levels = heatmap_levels(values, hw, target)?;
    if color {
        let pixels = levels.iter().flat_map(|&l| COLORMAP[l as usize]).collect();
        Image::new(target.1, target.0, 3, pixels)
    } else {
        Image::new(target.1, target.0, 1, levels)
    }
}

/// Writes a heatmap as PGM (`color = false`) or PPM.
pub fn export_heatmap(values: &[f64], hw: (usize, usize), target: (usize, usize), color: bool, path: &Path) -> Result<()> {
    write_image(path, &heatmap_image(values, hw, target, color)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_image;

    #[test]
    fn constant_and_zero_maps() {
        assert!(heatmap_levels(&[0.3; 4], (2, 2), (4, 4)).unwrap().iter().all(|&v| v == 255));
        assert!(heatmap_levels(&[0.0; 4], (2, 2), (4, 4)).unwrap().iter().all(|&v| v == 0));
        assert!(heatmap_levels(&[-1.0, 0.0, 0.0, 0.0], (2, 2), (2, 2)).is_err());
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(COLORMAP[0], [0, 0, 255]);
        assert_eq!(COLORMAP[255], [255, 0, 0]);
        assert_eq!(COLORMAP[100], [100, 0, 155]);
    }

    #[test]
    fn written_files_read_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let map = [0.0, 0.5, 1.0, 2.0];
        let before = map;
        for color in [false, true] {
            let path = dir.path().join(if color { "h.ppm" } else { "h.pgm" });
            export_heatmap(&map, (2, 2), (3, 3), color, &path).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(back, heatmap_image(&map, (2, 2), (3, 3), color).unwrap());
        }
        assert_eq!(map, before);
        // corners survive the upsampling: 0, 0.25, 0.5, 1.0 of the max
        let levels = heatmap_levels(&map, (2, 2), (3, 3)).unwrap();
        assert_eq!([levels[0], levels[2], levels[6], levels[8]], [0, 64, 128, 255]);
    }
}
