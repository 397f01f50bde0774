//! Synthetic images with one deliberately confusable class pair.
//!
//! Classes 0 and 1 both carry a bright disk (the confounder) at the same
//! sampled location; they differ only in a small bar next to it, horizontal for
//! class 0 and vertical for class 1. A model that looks only at the disk cannot
//! separate them, and the correct attention for either class is the bar box.
//! Every other class shows a single distinct motif and no disk.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motif {
    Disk,
    HorizontalBar,
    VerticalBar,
    Cross,
    Ring,
    Diagonal,
    AntiDiagonal,
}

/// Motif of each class; class 0 and 1 form the confusable pair.
pub const CLASS_MOTIFS: [Motif; 7] = [
    Motif::HorizontalBar,
    Motif::VerticalBar,
    Motif::Cross,
    Motif::Ring,
    Motif::Diagonal,
    Motif::AntiDiagonal,
    Motif::Disk,
];

pub const CONFOUNDER: Motif = Motif::Disk;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Side of the square box each motif is drawn in.
    pub motif_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            height: 32,
            width: 32,
            motif_size: 7,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

/// Axis-aligned box `[y0, y0 + size) x [x0, x0 + size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotifBox {
    pub y0: usize,
    pub x0: usize,
    pub size: usize,
}

impl MotifBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y0 + self.size).contains(&y) && (self.x0..self.x0 + self.size).contains(&x)
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=CLASS_MOTIFS.len()).contains(&self.classes) {
            return Err(Error::Config(format!(
                "classes = {}: must be between 2 and {}",
                self.classes,
                CLASS_MOTIFS.len()
            )));
        }
        if self.motif_size < 3 {
            return Err(Error::Config(format!("motif_size = {}: must be at least 3", self.motif_size)));
        }
        // the confusable pair needs the disk and the bar side by side
        if self.motif_size > self.height || 2 * self.motif_size + 1 > self.width {
            return Err(Error::Config(format!(
                "motif_size = {}: two motifs side by side do not fit a {}x{} canvas",
                self.motif_size, self.height, self.width
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_std) {
            return Err(Error::Config(format!("noise_std = {}: must lie in [0, 0.5]", self.noise_std)));
        }
        Ok(())
    }
}

fn inside(motif: Motif, dy: usize, dx: usize, s: usize) -> bool {
    let t = (s / 3).max(1);
    let lo = (s - t) / 2;
    let band = |v: usize| (lo..lo + t).contains(&v);
    match motif {
        Motif::Disk => {
            let c = (s as f64 - 1.0) / 2.0;
            let r = s as f64 / 2.0;
            (dy as f64 - c).powi(2) + (dx as f64 - c).powi(2) <= r * r
        }
        Motif::HorizontalBar => band(dy),
        Motif::VerticalBar => band(dx),
        Motif::Cross => band(dy) || band(dx),
        Motif::Ring => dy == 0 || dx == 0 || dy == s - 1 || dx == s - 1,
        Motif::Diagonal => dy == dx,
        Motif::AntiDiagonal => dy + dx == s - 1,
    }
}

fn draw(canvas: &mut [f64], width: usize, b: MotifBox, motif: Motif, intensity: f64) {
    for dy in 0..b.size {
        for dx in 0..b.size {
            if inside(motif, dy, dx, b.size) {
                canvas[(b.y0 + dy) * width + b.x0 + dx] = intensity;
            }
        }
    }
}

/// A rendered sample and the box of its class-specific motif.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: Vec<f64>,
    pub discriminative: MotifBox,
    pub confounder: Option<MotifBox>,
}

/// Renders one grayscale image of `class`. All random draws (layout,
/// intensity, noise) come from `latent_seed` alone, so the two pair classes
/// rendered from one seed differ only inside the bar box.
pub fn render(spec: &SynthSpec, class: usize, latent_seed: u64) -> Result<Rendered> {
    spec.validate()?;
    if class >= spec.classes {
        return Err(Error::Config(format!("class {class} out of range for {} classes", spec.classes)));
    }
    let (h, w, s) = (spec.height, spec.width, spec.motif_size);
    let mut rng = ChaCha8Rng::seed_from_u64(latent_seed);
    let y0 = rng.gen_range(0..=h - s);
    let x0 = rng.gen_range(0..=w - (2 * s + 1));
    let swap = rng.gen_bool(0.5);
    let intensity = rng.gen_range(0.7..1.0);
    let single = MotifBox {
        y0: rng.gen_range(0..=h - s),
        x0: rng.gen_range(0..=w - s),
        size: s,
    };
    let left = MotifBox { y0, x0, size: s };
    let right = MotifBox { y0, x0: x0 + s + 1, size: s };
    let (disk, bar) = if swap { (right, left) } else { (left, right) };

    let mut image = vec![0.0; h * w];
    let rendered_boxes = if class < 2 {
        draw(&mut image, w, disk, CONFOUNDER, intensity);
        draw(&mut image, w, bar, CLASS_MOTIFS[class], intensity);
        (bar, Some(disk))
    } else {
        draw(&mut image, w, single, CLASS_MOTIFS[class], intensity);
        (single, None)
    };
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
        for v in &mut image {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(Rendered {
        image,
        discriminative: rendered_boxes.0,
        confounder: rendered_boxes.1,
    })
}

/// Per-image seed; distinct for every (seed, class, index).
pub fn latent_seed(seed: u64, class: usize, index: usize) -> u64 {
    let mut z = seed ^ ((class as u64) << 48) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds `per_class` samples of every class, ordered by class then index.
pub fn generate_synth(spec: &SynthSpec, per_class: usize) -> Result<Dataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.classes * per_class);
    for class in 0..spec.classes {
        for i in 0..per_class {
            let r = render(spec, class, latent_seed(spec.seed, class, i))?;
            samples.push(Sample {
                id: format!("c{class}_{i:05}"),
                image: r.image,
                label: Label::Single(class),
            });
        }
    }
    Ok(Dataset {
        samples,
        channels: 1,
        height: spec.height,
        width: spec.width,
        classes: spec.classes,
        multi_label: false,
    })
}
