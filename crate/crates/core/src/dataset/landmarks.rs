use serde::{Deserialize, Serialize};

use crate::error::{FmpnError, Result};
use crate::raster::RgbImage;

/// Five facial landmarks in pixel coordinates: left eye, right eye, nose tip,
/// left mouth corner, right mouth corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: [[f64; 2]; 5],
}

impl LandmarkSet {
    pub fn new(points: [[f64; 2]; 5]) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FmpnError::Argument("non-finite landmark coordinate".into()));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[[f64; 2]; 5] {
        &self.points
    }

    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> LandmarkSet {
        LandmarkSet {
            points: self.points.map(f),
        }
    }

    pub fn rms_distance(&self, other: &LandmarkSet) -> f64 {
        let sum: f64 = self
            .points
            .iter()
            .zip(other.points.iter())
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum();
        (sum / 5.0).sqrt()
    }
}

/// Canonical landmark positions as fractions of the output width/height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkTemplate {
    pub fractions: [[f64; 2]; 5],
}

impl Default for LandmarkTemplate {
    fn default() -> Self {
        LandmarkTemplate {
            fractions: [[0.30, 0.40], [0.70, 0.40], [0.50, 0.58], [0.34, 0.76], [0.66, 0.76]],
        }
    }
}

impl LandmarkTemplate {
    pub fn at_size(&self, size: usize) -> LandmarkSet {
        let s = size as f64;
        LandmarkSet {
            points: self.fractions.map(|[fx, fy]| [fx * s, fy * s]),
        }
    }
}

/// Source of landmarks for images that do not carry them in a manifest.
///
/// No detector ships with this crate; implementors wrap an external one.
pub trait LandmarkProvider {
    fn landmarks(&self, image: &RgbImage) -> Result<LandmarkSet>;
}

/// Provider returning the same landmarks for every image.
#[derive(Debug, Clone)]
pub struct FixedLandmarks(pub LandmarkSet);

impl LandmarkProvider for FixedLandmarks {
    fn landmarks(&self, _image: &RgbImage) -> Result<LandmarkSet> {
        Ok(self.0)
    }
}
