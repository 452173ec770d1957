use rand::Rng;
use serde::{Deserialize, Serialize};

use super::align::AlignedFace;
use crate::error::{FmpnError, Result};
use crate::raster::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Side of the square crop taken from the aligned canvas.
    pub crop_size: usize,
    pub flip_probability: f64,
    /// When false the center crop is always used.
    pub random_crop: bool,
}

impl AugmentPolicy {
    /// Deterministic center crop without flipping, used at evaluation time.
    pub fn eval(&self) -> AugmentPolicy {
        AugmentPolicy {
            crop_size: self.crop_size,
            flip_probability: 0.0,
            random_crop: false,
        }
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            crop_size: 224,
            flip_probability: 0.5,
            random_crop: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropPosition {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl CropPosition {
    pub const ALL: [CropPosition; 5] = [
        CropPosition::TopLeft,
        CropPosition::TopRight,
        CropPosition::BottomLeft,
        CropPosition::BottomRight,
        CropPosition::Center,
    ];

    fn origin(self, canvas: usize, crop: usize) -> (usize, usize) {
        let far = canvas - crop;
        match self {
            CropPosition::TopLeft => (0, 0),
            CropPosition::TopRight => (far, 0),
            CropPosition::BottomLeft => (0, far),
            CropPosition::BottomRight => (far, far),
            CropPosition::Center => (far / 2, far / 2),
        }
    }
}

/// A sampled crop-and-flip, applied identically to every raster of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct View {
    pub position: CropPosition,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    pub flip: bool,
}

impl View {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, policy: &AugmentPolicy, canvas: usize) -> Result<View> {
        if policy.crop_size > canvas || policy.crop_size == 0 {
            return Err(FmpnError::Config(format!(
                "crop size {} does not fit a {canvas}px canvas",
                policy.crop_size
            )));
        }
        let position = if policy.random_crop {
            CropPosition::ALL[rng.random_range(0..5)]
        } else {
            CropPosition::Center
        };
        let flip = policy.flip_probability > 0.0 && rng.random::<f64>() < policy.flip_probability;
        let (x0, y0) = position.origin(canvas, policy.crop_size);
        Ok(View {
            position,
            x0,
            y0,
            size: policy.crop_size,
            flip,
        })
    }

    pub fn center(policy: &AugmentPolicy, canvas: usize) -> Result<View> {
        if policy.crop_size > canvas || policy.crop_size == 0 {
            return Err(FmpnError::Config(format!(
                "crop size {} does not fit a {canvas}px canvas",
                policy.crop_size
            )));
        }
        let (x0, y0) = CropPosition::Center.origin(canvas, policy.crop_size);
        Ok(View {
            position: CropPosition::Center,
            x0,
            y0,
            size: policy.crop_size,
            flip: false,
        })
    }

    pub fn apply_gray(&self, img: &GrayImage) -> GrayImage {
        let out = img.crop(self.x0, self.y0, self.size);
        if self.flip {
            out.flip_horizontal()
        } else {
            out
        }
    }

    pub fn apply(&self, face: &AlignedFace) -> AlignedFace {
        let rgb = face.rgb.crop(self.x0, self.y0, self.size);
        AlignedFace {
            gray: self.apply_gray(&face.gray),
            rgb: if self.flip { rgb.flip_horizontal() } else { rgb },
            label: face.label,
            subject_id: face.subject_id.clone(),
        }
    }
}

/// Random five-position crop plus horizontal flip.
pub fn augment<R: Rng + ?Sized>(face: &AlignedFace, rng: &mut R, policy: &AugmentPolicy) -> Result<AlignedFace> {
    Ok(View::sample(rng, policy, face.size())?.apply(face))
}
