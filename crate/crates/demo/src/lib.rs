//! Browser bindings: synthetic faces, class motion masks and landmark
//! alignment, each returned as RGBA pixels for a canvas.

use fmpn_core::dataset::{align_face, LandmarkSet, LandmarkTemplate};
use fmpn_core::maskgen::{compute_class_mask, MaskPair};
use fmpn_core::raster::{to_grayscale, to_level, GrayImage, RgbImage};
use fmpn_core::synth::SynthSpec;
use wasm_bindgen::prelude::*;

fn spec(seed: u32, amplitude: f64, noise: f64, pose_jitter: f64) -> SynthSpec {
    SynthSpec {
        seed: seed as u64,
        amplitude: amplitude.max(0.0),
        noise_sigma: noise.max(0.0),
        pose_jitter: pose_jitter.max(0.0),
        ..SynthSpec::default()
    }
}

fn rgba_from_rgb(img: &RgbImage) -> Vec<u8> {
    img.data
        .chunks_exact(3)
        .flat_map(|px| [to_level(px[0]), to_level(px[1]), to_level(px[2]), 255])
        .collect()
}

fn put(rgba: &mut [u8], width: usize, x: i64, y: i64, color: [u8; 3]) {
    let height = rgba.len() / 4 / width;
    if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
        return;
    }
    let i = (y as usize * width + x as usize) * 4;
    rgba[i..i + 3].copy_from_slice(&color);
}

fn draw_landmarks(rgba: &mut [u8], width: usize, lm: &LandmarkSet, color: [u8; 3]) {
    for p in lm.points() {
        let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
        for d in -1..=1 {
            put(rgba, width, cx + d, cy, color);
            put(rgba, width, cx, cy + d, color);
        }
    }
}

/// Side length of every face image produced here.
#[wasm_bindgen]
pub fn face_size() -> usize {
    SynthSpec::default().image_size
}

#[wasm_bindgen]
pub fn class_names() -> Vec<String> {
    SynthSpec::default().class_names()
}

/// One synthetic face as RGBA. `class` below zero renders the neutral face.
#[wasm_bindgen]
pub fn synth_face(seed: u32, subject: u32, class: i32, amplitude: f64, noise: f64) -> Vec<u8> {
    let s = spec(seed, amplitude, noise, 0.0);
    let k = s.num_classes() as i32;
    let rendered = if class < 0 {
        s.render_neutral(subject as usize)
    } else {
        s.render_expressive(subject as usize, class.min(k - 1) as usize, 0)
    };
    rgba_from_rgb(&rendered.image)
}

/// Motion mask of one class averaged over `subjects` synthetic subjects,
/// with its rectangles outlined.
#[wasm_bindgen]
pub struct MaskView {
    rgba: Vec<u8>,
    inside: f64,
}

#[wasm_bindgen]
impl MaskView {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Share of the top-decile mask pixels inside the class rectangles.
    #[wasm_bindgen(getter)]
    pub fn inside(&self) -> f64 {
        self.inside
    }
}

#[wasm_bindgen]
pub fn class_mask(seed: u32, class: u32, subjects: u32, amplitude: f64, noise: f64) -> MaskView {
    let s = spec(seed, amplitude, noise, 0.0);
    let k = (class as usize).min(s.num_classes() - 1);
    let pairs: Vec<MaskPair> = (0..subjects.max(1) as usize)
        .flat_map(|subject| {
            let neutral = to_grayscale(&s.render_neutral(subject).image);
            (0..2).map(move |i| (subject, i, neutral.clone()))
        })
        .map(|(subject, i, neutral)| MaskPair {
            key: format!("{subject}/{i}"),
            expressive: to_grayscale(&s.render_expressive(subject, k, i).image),
            neutral,
        })
        .collect();
    let mask = compute_class_mask(&pairs, k).expect("pairs share one shape").values;
    let layout = &s.classes[k];
    let size = mask.width;
    let mut rgba = heat(&mask);
    for y in 0..size {
        for x in 0..size {
            let here = layout.contains_pixel(x, y, size);
            let edge = [(1, 0), (0, 1), (-1, 0), (0, -1)].iter().any(|(dx, dy)| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                nx < 0
                    || ny < 0
                    || nx as usize >= size
                    || ny as usize >= size
                    || layout.contains_pixel(nx as usize, ny as usize, size) != here
            });
            if here && edge {
                put(&mut rgba, size, x as i64, y as i64, [0, 255, 120]);
            }
        }
    }
    MaskView {
        rgba,
        inside: fmpn_core::synth::top_decile_inside(&mask, layout),
    }
}

fn heat(mask: &GrayImage) -> Vec<u8> {
    mask.data
        .iter()
        .flat_map(|&v| {
            let v = v.clamp(0.0, 1.0);
            [to_level(v.sqrt()), to_level(v * v), to_level(0.3 * (1.0 - v)), 255]
        })
        .collect()
}

/// A posed face next to its aligned version, `2S × S` RGBA. Detected
/// landmarks are drawn in red on the left, template points in cyan on the right.
#[wasm_bindgen]
pub fn alignment(seed: u32, subject: u32, pose_jitter: f64) -> Vec<u8> {
    let s = spec(seed, 1.0, 0.0, pose_jitter);
    let size = s.image_size;
    let posed = s.render_neutral(subject as usize);
    let reference = LandmarkTemplate::default().at_size(size);
    let aligned = align_face(&posed.image, &posed.landmarks, &reference, size)
        .expect("template landmarks are never collinear")
        .rgb;
    let mut left = rgba_from_rgb(&posed.image);
    draw_landmarks(&mut left, size, &posed.landmarks, [255, 40, 40]);
    let mut right = rgba_from_rgb(&aligned);
    draw_landmarks(&mut right, size, &reference, [40, 220, 255]);
    let row = size * 4;
    (0..size)
        .flat_map(|y| {
            left[y * row..(y + 1) * row]
                .iter()
                .chain(&right[y * row..(y + 1) * row])
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}
