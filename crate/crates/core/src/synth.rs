//! Deterministic synthetic RGB-D benchmark with strictly complementary
//! modalities. Color images carry only the hue (always rendered on a disc);
//! depth maps carry only the shape (rendered as a raised height field), so an
//! ideal single-modality classifier caps at 1/S (color) or 1/C (depth) while
//! the fused task is solvable exactly.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::image::{
    depth_to_normals, rgb_to_tensor, write_pgm16, write_ppm, DepthImage, RgbImage, RgbdSample,
};
use crate::rng::{item_rng, Stream};
use crate::scalar::Scalar;

/// Shape primitives drawable by the depth renderer, in index order.
pub const SHAPE_NAMES: [&str; 6] = ["disc", "square", "triangle", "ring", "diamond", "cross"];

const BACKGROUND_MM: f64 = 1200.0;
const OBJECT_MM: f64 = 1000.0;
/// Depth noise in millimeters per unit of `noise_std`.
const DEPTH_NOISE_MM: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_shapes: usize,
    pub num_hues: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_hw: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_shapes: 4,
            num_hues: 4,
            train_per_class: 20,
            test_per_class: 10,
            image_hw: 64,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_shapes < 2 || self.num_hues < 2 {
            return Err(Error::Config("need at least 2 shapes and 2 hues".into()));
        }
        if self.num_shapes > SHAPE_NAMES.len() {
            return Err(Error::Config(format!(
                "{} shapes requested but only {} primitives exist",
                self.num_shapes,
                SHAPE_NAMES.len()
            )));
        }
        if self.image_hw < 8 {
            return Err(Error::Config("image_hw must be at least 8".into()));
        }
        if self.train_per_class < 1 || self.test_per_class < 1 {
            return Err(Error::Config("per-class sample counts must be >= 1".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_shapes * self.num_hues
    }

    pub fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Test => self.test_per_class,
        }
    }

    /// Class id `shape * num_hues + hue`; zero-padded names keep sorted
    /// directory order aligned with class ids.
    pub fn class_name(&self, class: usize) -> String {
        let (s, h) = (class / self.num_hues, class % self.num_hues);
        format!("s{s:02}_h{h:02}")
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes()).map(|c| self.class_name(c)).collect()
    }
}

/// Ideal single-modality accuracy ceilings `(rgb_only, depth_only)`: color
/// recovers the hue but guesses the shape and vice versa.
pub fn bayes_bounds(cfg: &SynthConfig) -> (f64, f64) {
    (1.0 / cfg.num_shapes as f64, 1.0 / cfg.num_hues as f64)
}

fn hue_to_rgb(hue_index: usize, hues: usize) -> [f64; 3] {
    let h = hue_index as f64 / hues as f64 * 360.0;
    let hp = h / 60.0;
    let x = 1.0 - (hp % 2.0 - 1.0).abs();
    let (r, g, b) = match hp as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b]
}

fn inside_shape(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => ax <= 0.9 * r && ay <= 0.9 * r,
        2 => {
            // Apex-up triangle spanning [-r, 0.8r] vertically.
            dy >= -r && dy <= 0.8 * r && ax <= (dy + r) * 0.62
        }
        3 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
        4 => ax + ay <= 1.1 * r,
        5 => (ax <= 0.35 * r && ay <= r) || (ay <= 0.35 * r && ax <= r),
        _ => unreachable!("validated against SHAPE_NAMES"),
    }
}

/// Gaussian via Box-Muller on the explicit generator; bit-stable because it
/// never depends on distribution crates.
fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Renders the raw color and depth files for one sample. Both planes share
/// one translation; the color plane always shows a disc of the class hue,
/// the depth plane shows the class shape.
pub fn render_raw(cfg: &SynthConfig, split: Split, class: usize, index: usize) -> (RgbImage, DepthImage) {
    let hw = cfg.image_hw;
    let stream = match split {
        Split::Train => Stream::DataTrain,
        Split::Test => Stream::DataTest,
    };
    let item = (class * cfg.per_class(split) + index) as u64;
    let mut rng = item_rng(cfg.seed, stream, item);

    let shape = class / cfg.num_hues;
    let hue = class % cfg.num_hues;
    let color = hue_to_rgb(hue, cfg.num_hues);

    let max_shift = 0.1 * hw as f64;
    let cx = hw as f64 / 2.0 + (rng.random::<f64>() * 2.0 - 1.0) * max_shift;
    let cy = hw as f64 / 2.0 + (rng.random::<f64>() * 2.0 - 1.0) * max_shift;
    let radius = 0.3 * hw as f64;

    let mut pixels = vec![0u8; hw * hw * 3];
    for y in 0..hw {
        for x in 0..hw {
            let on_disc = inside_shape(0, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, radius);
            for c in 0..3 {
                let base = if on_disc { color[c] } else { 0.0 };
                let v = base + cfg.noise_std * gaussian(&mut rng);
                pixels[(y * hw + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }

    let mut values = vec![0u16; hw * hw];
    for y in 0..hw {
        for x in 0..hw {
            let on = inside_shape(shape, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, radius);
            let base = if on { OBJECT_MM } else { BACKGROUND_MM };
            let v = base + cfg.noise_std * DEPTH_NOISE_MM * gaussian(&mut rng);
            values[y * hw + x] = v.round().clamp(1.0, 65535.0) as u16;
        }
    }

    (
        RgbImage {
            width: hw,
            height: hw,
            pixels,
        },
        DepthImage {
            width: hw,
            height: hw,
            values,
        },
    )
}

/// In-memory dataset for one split; identical to writing the files with
/// [`write_dataset_dir`] and loading them back.
pub fn generate_dataset<T: Scalar>(cfg: &SynthConfig, split: Split) -> Result<Vec<RgbdSample<T>>> {
    cfg.validate()?;
    let per = cfg.per_class(split);
    let mut samples = Vec::with_capacity(cfg.num_classes() * per);
    for class in 0..cfg.num_classes() {
        for i in 0..per {
            let (rgb, depth) = render_raw(cfg, split, class, i);
            samples.push(RgbdSample {
                rgb: rgb_to_tensor(&rgb),
                depth_encoded: depth_to_normals(&depth)?,
                label: class,
            });
        }
    }
    Ok(samples)
}

/// Writes `<root>/train/<class>/...` and `<root>/test/<class>/...` in the
/// image module's directory layout.
pub fn write_dataset_dir(cfg: &SynthConfig, root: &Path) -> Result<()> {
    cfg.validate()?;
    for split in [Split::Train, Split::Test] {
        let split_dir = root.join(match split {
            Split::Train => "train",
            Split::Test => "test",
        });
        for class in 0..cfg.num_classes() {
            let dir = split_dir.join(cfg.class_name(class));
            fs::create_dir_all(&dir)
                .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
            for i in 0..cfg.per_class(split) {
                let (rgb, depth) = render_raw(cfg, split, class, i);
                write_ppm(&dir.join(format!("{i:04}_rgb.ppm")), &rgb)?;
                write_pgm16(&dir.join(format!("{i:04}_depth.pgm")), &depth)?;
            }
        }
    }
    Ok(())
}
