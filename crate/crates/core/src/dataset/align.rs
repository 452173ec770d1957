use crate::error::{FmpnError, Result};
use crate::raster::{to_grayscale, GrayImage, RgbImage};

use super::landmarks::LandmarkSet;

/// `p ↦ scale · R(rotation) · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        [
            self.scale * (c * p[0] - s * p[1]) + self.translation[0],
            self.scale * (s * p[0] + c * p[1]) + self.translation[1],
        ]
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let scale = 1.0 / self.scale;
        let rotation = -self.rotation;
        let (s, c) = rotation.sin_cos();
        let [tx, ty] = self.translation;
        SimilarityTransform {
            scale,
            rotation,
            translation: [-scale * (c * tx - s * ty), -scale * (s * tx + c * ty)],
        }
    }

    pub fn apply_landmarks(&self, lm: &LandmarkSet) -> LandmarkSet {
        lm.map(|p| self.apply(p))
    }
}

/// Closed-form least-squares similarity fit minimizing `Σ‖T(src_i) − dst_i‖²`.
pub fn estimate_similarity(src: &LandmarkSet, dst: &LandmarkSet) -> Result<SimilarityTransform> {
    let centroid = |lm: &LandmarkSet| {
        let mut c = [0.0; 2];
        for p in lm.points() {
            c[0] += p[0] / 5.0;
            c[1] += p[1] / 5.0;
        }
        c
    };
    let cs = centroid(src);
    let cd = centroid(dst);

    let (mut spread, mut a, mut b) = (0.0, 0.0, 0.0);
    for (p, q) in src.points().iter().zip(dst.points()) {
        let (px, py) = (p[0] - cs[0], p[1] - cs[1]);
        let (qx, qy) = (q[0] - cd[0], q[1] - cd[1]);
        spread += px * px + py * py;
        a += px * qx + py * qy;
        b += px * qy - py * qx;
    }
    let extent = src.points().iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    if spread <= 1e-12 * extent * extent {
        return Err(FmpnError::SingularConfiguration(
            "source landmarks coincide".into(),
        ));
    }
    a /= spread;
    b /= spread;
    let scale = a.hypot(b);
    if scale <= 0.0 {
        return Err(FmpnError::SingularConfiguration(
            "destination landmarks coincide".into(),
        ));
    }
    let translation = [cd[0] - (a * cs[0] - b * cs[1]), cd[1] - (b * cs[0] + a * cs[1])];
    Ok(SimilarityTransform {
        scale,
        rotation: b.atan2(a),
        translation,
    })
}

/// A face warped into the canonical landmark frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pub gray: GrayImage,
    pub rgb: RgbImage,
    pub label: usize,
    pub subject_id: String,
}

impl AlignedFace {
    /// Builds a face from RGB, deriving the gray channel by luminance.
    pub fn from_rgb(rgb: RgbImage, label: usize, subject_id: impl Into<String>) -> Self {
        AlignedFace {
            gray: to_grayscale(&rgb),
            rgb,
            label,
            subject_id: subject_id.into(),
        }
    }

    pub fn size(&self) -> usize {
        self.gray.width
    }
}

/// Warps `image` so that `landmarks` land on `reference`, resampling bilinearly
/// onto an `out_size × out_size` canvas. Pixels mapped from outside the source
/// are black.
pub fn align_face(
    image: &RgbImage,
    landmarks: &LandmarkSet,
    reference: &LandmarkSet,
    out_size: usize,
) -> Result<AlignedFace> {
    if out_size < 32 {
        return Err(FmpnError::Argument(format!(
            "aligned face size {out_size} is below the minimum of 32"
        )));
    }
    let forward = estimate_similarity(landmarks, reference)?;
    let back = forward.inverse();
    let mut rgb = RgbImage::new(out_size, out_size);
    for y in 0..out_size {
        for x in 0..out_size {
            let [sx, sy] = back.apply([x as f64, y as f64]);
            rgb.set(x, y, image.sample_bilinear(sx, sy));
        }
    }
    Ok(AlignedFace::from_rgb(rgb, 0, String::new()))
}
