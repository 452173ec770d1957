//! Floating point rasters with values in `[0, 1]`.
//!
//! Gray images are stored row-major, RGB images row-major with interleaved
//! channels (`H×W×3`).

use std::path::Path;

use crate::error::{FmpnError, Result};

/// Luminance weights applied to (R, G, B).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(FmpnError::Shape(format!(
                "{} values for a {width}x{height} gray image",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample at a sub-pixel location; pixels outside the image read as 0.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        bilinear(self.width, self.height, 1, &self.data, x, y, 0)
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = GrayImage::new(width, height);
        for y in 0..height {
            let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            for x in 0..width {
                let u = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                out.set(x, y, self.sample_bilinear(u, v));
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> GrayImage {
        let mut out = GrayImage::new(size, size);
        for y in 0..size {
            let src = &self.data[(y0 + y) * self.width + x0..][..size];
            out.data[y * size..(y + 1) * size].copy_from_slice(src);
        }
        out
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    /// Quantizes to 8-bit levels with round-half-away-from-zero.
    pub fn to_levels(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_level(v)).collect()
    }

    pub fn from_levels(width: usize, height: usize, levels: &[u8]) -> Self {
        GrayImage {
            width,
            height,
            data: levels.iter().map(|&l| l as f64 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_levels())
            .expect("buffer sized from dimensions");
        buf.save(path).map_err(|source| FmpnError::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| FmpnError::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        Ok(Self::from_levels(
            img.width() as usize,
            img.height() as usize,
            img.as_raw(),
        ))
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(FmpnError::Shape(format!(
                "{} values for a {width}x{height}x3 rgb image",
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        [0, 1, 2].map(|c| bilinear(self.width, self.height, 3, &self.data, x, y, c))
    }

    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> RgbImage {
        let mut out = RgbImage::new(size, size);
        for y in 0..size {
            let src = &self.data[((y0 + y) * self.width + x0) * 3..][..size * 3];
            out.data[y * size * 3..(y + 1) * size * 3].copy_from_slice(src);
        }
        out
    }

    pub fn flip_horizontal(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        RgbImage {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&l| l as f64 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.data.iter().map(|&v| to_level(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer sized from dimensions")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| FmpnError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| FmpnError::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Luminance conversion with weights (0.299, 0.587, 0.114).
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let data = rgb
        .data
        .chunks_exact(3)
        .map(|p| (wr * p[0] + wg * p[1] + wb * p[2]).clamp(0.0, 1.0))
        .collect();
    GrayImage {
        width: rgb.width,
        height: rgb.height,
        data,
    }
}

#[inline]
pub fn to_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn bilinear(width: usize, height: usize, stride: usize, data: &[f64], x: f64, y: f64, c: usize) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |xi: isize, yi: isize| -> f64 {
        if xi < 0 || yi < 0 || xi >= width as isize || yi >= height as isize {
            0.0
        } else {
            data[(yi as usize * width + xi as usize) * stride + c]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}
