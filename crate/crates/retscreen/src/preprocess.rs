//! Deterministic image preprocessing: bilinear resize, [0,1] rescaling,
//! flip augmentation, and label encoding.
//!
//! Every operation is a pure function. Augmentation randomness comes from a
//! caller-supplied generator; [`sample_rng`] derives a per-sample stream
//! from `(global_seed, epoch, sample_index)` so parallel preprocessing stays
//! deterministic regardless of scheduling.
//!
//! Flips are exact involutions and commute with each other:
//!
//! ```
//! use ndarray::Array3;
//! use retscreen::preprocess::{flip_horizontal, flip_vertical, ImageTensor, PixelScale};
//!
//! let img = ImageTensor::new(
//!     Array3::from_shape_fn((3, 5, 3), |(h, w, c)| (h * 100 + w * 10 + c) as f32),
//!     PixelScale::Byte,
//! );
//! assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
//! assert_eq!(
//!     flip_horizontal(&flip_vertical(&img)),
//!     flip_vertical(&flip_horizontal(&img))
//! );
//! ```

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("image is empty (zero-sized dimension)")]
    EmptyImage,
    #[error("image already rescaled to [0,1]; refusing to rescale twice")]
    DoubleRescale,
    #[error("label {0} outside {{0,1}}")]
    NonBinaryLabel(i64),
    #[error("failed to read image {path}: {source}")]
    ImageRead {
        path: String,
        source: image::ImageError,
    },
}

/// Whether pixel values live in [0,255] or have been rescaled to [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelScale {
    Byte,
    Unit,
}

/// An RGB image tensor, shape (height, width, 3), with an explicit scale tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f32>,
    pub scale: PixelScale,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>, scale: PixelScale) -> Self {
        Self { data, scale }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    /// Decode a PNG/JPEG file into a byte-scale tensor.
    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let img = image::open(path)
            .map_err(|source| PreprocessError::ImageRead {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            img.get_pixel(x as u32, y as u32)[c] as f32
        });
        Ok(Self::new(data, PixelScale::Byte))
    }
}

/// Flip augmentation configuration. Rotation/zoom/brightness exist as flags
/// but ship disabled; the executed configurations use flips only.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub flip_probability: f64,
    #[serde(default)]
    pub rotation: bool,
    #[serde(default)]
    pub zoom: bool,
    #[serde(default)]
    pub brightness: bool,
}

impl AugmentConfig {
    pub fn off() -> Self {
        Self {
            horizontal_flip: false,
            vertical_flip: false,
            flip_probability: 0.5,
            rotation: false,
            zoom: false,
            brightness: false,
        }
    }

    /// Flips only, each with probability 0.5.
    pub fn flips() -> Self {
        Self {
            horizontal_flip: true,
            vertical_flip: true,
            ..Self::off()
        }
    }

    pub fn is_identity(&self) -> bool {
        !(self.horizontal_flip || self.vertical_flip)
    }
}

/// Bilinear resize to `target` x `target`. The scale tag is preserved and a
/// constant-valued image stays constant.
pub fn resize(img: &ImageTensor, target: usize) -> Result<ImageTensor, PreprocessError> {
    if img.height() == 0 || img.width() == 0 || target == 0 {
        return Err(PreprocessError::EmptyImage);
    }
    let (h, w) = (img.height(), img.width());
    if h == target && w == target {
        return Ok(img.clone());
    }
    let scale_y = h as f32 / target as f32;
    let scale_x = w as f32 / target as f32;
    let data = Array3::from_shape_fn((target, target, 3), |(oy, ox, c)| {
        // half-pixel-center sampling, clamped at the border
        let sy = ((oy as f32 + 0.5) * scale_y - 0.5).max(0.0);
        let sx = ((ox as f32 + 0.5) * scale_x - 0.5).max(0.0);
        let y0 = (sy.floor() as usize).min(h - 1);
        let x0 = (sx.floor() as usize).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = sy - y0 as f32;
        let fx = sx - x0 as f32;
        let top = img.data[(y0, x0, c)] * (1.0 - fx) + img.data[(y0, x1, c)] * fx;
        let bot = img.data[(y1, x0, c)] * (1.0 - fx) + img.data[(y1, x1, c)] * fx;
        top * (1.0 - fy) + bot * fy
    });
    Ok(ImageTensor::new(data, img.scale))
}

/// Divide every value by 255 and retag as unit scale. Rescaling an
/// already-rescaled image is a contract violation, not a no-op.
pub fn rescale(img: &ImageTensor) -> Result<ImageTensor, PreprocessError> {
    if img.scale == PixelScale::Unit {
        return Err(PreprocessError::DoubleRescale);
    }
    Ok(ImageTensor::new(img.data.mapv(|v| v / 255.0), PixelScale::Unit))
}

/// Reverse column order.
pub fn flip_horizontal(img: &ImageTensor) -> ImageTensor {
    let mut data = img.data.clone();
    data.invert_axis(ndarray::Axis(1));
    ImageTensor::new(data, img.scale)
}

/// Reverse row order.
pub fn flip_vertical(img: &ImageTensor) -> ImageTensor {
    let mut data = img.data.clone();
    data.invert_axis(ndarray::Axis(0));
    ImageTensor::new(data, img.scale)
}

/// Derive the RNG stream for one (epoch, sample) pair from the global seed.
pub fn sample_rng(global_seed: u64, epoch: u64, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
    rng.set_stream(epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ sample_index);
    rng
}

/// Apply each enabled flip independently with `flip_probability`. With all
/// flags off this is the identity and consumes no randomness.
pub fn augment(img: &ImageTensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> ImageTensor {
    let mut out = img.clone();
    if cfg.horizontal_flip && rng.gen::<f64>() < cfg.flip_probability {
        out = flip_horizontal(&out);
    }
    if cfg.vertical_flip && rng.gen::<f64>() < cfg.flip_probability {
        out = flip_vertical(&out);
    }
    out
}

/// Output-head target encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Single sigmoid unit; the target is the scalar label.
    SigmoidScalar,
    /// Two softmax units; the target is a one-hot pair.
    SoftmaxPair,
}

pub fn encode_label(label: u8, head_kind: HeadKind) -> Result<Vec<f32>, PreprocessError> {
    if label > 1 {
        return Err(PreprocessError::NonBinaryLabel(label as i64));
    }
    Ok(match head_kind {
        HeadKind::SigmoidScalar => vec![label as f32],
        HeadKind::SoftmaxPair => {
            if label == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_by_two() -> ImageTensor {
        // single channel values replicated over RGB
        let base = array![[1.0f32, 2.0], [3.0, 4.0]];
        let data = Array3::from_shape_fn((2, 2, 3), |(y, x, _)| base[(y, x)]);
        ImageTensor::new(data, PixelScale::Byte)
    }

    #[test]
    fn resize_shape_contract() {
        let img = ImageTensor::new(Array3::zeros((1424, 2144, 3)), PixelScale::Byte);
        let out = resize(&img, 64).unwrap();
        assert_eq!(out.data.shape(), &[64, 64, 3]);
        assert_eq!(out.scale, PixelScale::Byte);
    }

    #[test]
    fn resize_identity_when_already_target() {
        let img = two_by_two();
        let out = resize(&img, 2).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_preserves_constant_images() {
        for &(h, w, target) in &[(10usize, 17usize, 7usize), (64, 64, 254), (254, 100, 64)] {
            let img = ImageTensor::new(
                Array3::from_elem((h, w, 3), 42.5f32),
                PixelScale::Byte,
            );
            let out = resize(&img, target).unwrap();
            for &v in out.data.iter() {
                assert!((v - 42.5).abs() < 1e-4, "{h}x{w}->{target}: got {v}");
            }
        }
    }

    #[test]
    fn resize_rejects_empty() {
        let img = ImageTensor::new(Array3::zeros((0, 4, 3)), PixelScale::Byte);
        assert!(matches!(resize(&img, 8), Err(PreprocessError::EmptyImage)));
    }

    #[test]
    fn rescale_endpoints_and_midpoint() {
        let data = Array3::from_shape_fn((1, 3, 3), |(_, x, _)| [255.0, 0.0, 51.0][x]);
        let img = ImageTensor::new(data, PixelScale::Byte);
        let out = rescale(&img).unwrap();
        assert_eq!(out.scale, PixelScale::Unit);
        assert_eq!(out.data[(0, 0, 0)], 1.0);
        assert_eq!(out.data[(0, 1, 0)], 0.0);
        assert!((out.data[(0, 2, 0)] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn double_rescale_is_an_error() {
        let img = two_by_two();
        let once = rescale(&img).unwrap();
        assert!(matches!(rescale(&once), Err(PreprocessError::DoubleRescale)));
    }

    #[test]
    fn flip_examples() {
        let img = two_by_two();
        let h = flip_horizontal(&img);
        assert_eq!(h.data[(0, 0, 0)], 2.0);
        assert_eq!(h.data[(0, 1, 0)], 1.0);
        assert_eq!(h.data[(1, 0, 0)], 4.0);
        let v = flip_vertical(&img);
        assert_eq!(v.data[(0, 0, 0)], 3.0);
        assert_eq!(v.data[(0, 1, 0)], 4.0);
        assert_eq!(v.data[(1, 0, 0)], 1.0);
    }

    #[test]
    fn flips_are_involutions_and_commute() {
        let img = two_by_two();
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
        assert_eq!(flip_vertical(&flip_vertical(&img)), img);
        assert_eq!(
            flip_horizontal(&flip_vertical(&img)),
            flip_vertical(&flip_horizontal(&img))
        );
    }

    #[test]
    fn augment_identity_when_off() {
        let img = two_by_two();
        let mut rng = sample_rng(1, 0, 0);
        let out = augment(&img, &AugmentConfig::off(), &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn augment_forced_flip() {
        let img = two_by_two();
        let cfg = AugmentConfig {
            horizontal_flip: true,
            flip_probability: 1.0,
            ..AugmentConfig::off()
        };
        let mut rng = sample_rng(1, 0, 0);
        assert_eq!(augment(&img, &cfg, &mut rng), flip_horizontal(&img));
    }

    #[test]
    fn augment_deterministic_per_stream() {
        let img = two_by_two();
        let cfg = AugmentConfig::flips();
        let a = augment(&img, &cfg, &mut sample_rng(7, 3, 11));
        let b = augment(&img, &cfg, &mut sample_rng(7, 3, 11));
        assert_eq!(a, b);
    }

    #[test]
    fn flip_frequency_near_half() {
        let cfg = AugmentConfig {
            horizontal_flip: true,
            ..AugmentConfig::off()
        };
        let img = two_by_two();
        let flipped = flip_horizontal(&img);
        let mut count = 0;
        for i in 0..1000 {
            let out = augment(&img, &cfg, &mut sample_rng(42, 0, i));
            if out == flipped {
                count += 1;
            }
        }
        let freq = count as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&freq), "flip frequency {freq}");
    }

    #[test]
    fn label_encoding() {
        assert_eq!(encode_label(1, HeadKind::SigmoidScalar).unwrap(), vec![1.0]);
        assert_eq!(encode_label(0, HeadKind::SigmoidScalar).unwrap(), vec![0.0]);
        assert_eq!(encode_label(1, HeadKind::SoftmaxPair).unwrap(), vec![0.0, 1.0]);
        assert_eq!(encode_label(0, HeadKind::SoftmaxPair).unwrap(), vec![1.0, 0.0]);
        assert!(encode_label(2, HeadKind::SoftmaxPair).is_err());
    }
}
