//! Per-expression facial-motion masks.
//!
//! A class mask is the histogram-equalized mean absolute difference between
//! aligned expressive faces of that class and their neutral counterparts.
//! Banks are persisted as one 8-bit PNG per class plus `bank.json`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{align_face, DatasetManifest, LandmarkSet, LandmarkTemplate};
use crate::error::{FmpnError, Result};
use crate::raster::{to_level, GrayImage, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionMask {
    pub values: GrayImage,
    pub class_index: usize,
    pub source_count: usize,
}

/// One aligned expressive/neutral pair. `key` fixes the summation order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub key: String,
    pub expressive: GrayImage,
    pub neutral: GrayImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBank {
    pub masks: Vec<MotionMask>,
    pub class_names: Vec<String>,
    pub provenance: String,
}

/// Per-pixel mean of `|expressive − neutral|`, accumulated in slice order.
pub fn mean_abs_diff(pairs: &[(GrayImage, GrayImage)]) -> Result<GrayImage> {
    let Some((first, _)) = pairs.first() else {
        return Err(FmpnError::Argument("no image pairs to average".into()));
    };
    let mut acc = GrayImage::new(first.width, first.height);
    for (i, (e, n)) in pairs.iter().enumerate() {
        if !e.same_shape(first) || !n.same_shape(first) {
            return Err(FmpnError::Argument(format!(
                "pair {i} is {}x{}/{}x{}, expected {}x{}",
                e.width, e.height, n.width, n.height, first.width, first.height
            )));
        }
        for ((a, x), y) in acc.data.iter_mut().zip(&e.data).zip(&n.data) {
            *a += (x - y).abs();
        }
    }
    let count = pairs.len() as f64;
    for a in &mut acc.data {
        *a /= count;
    }
    Ok(acc)
}

/// Histogram equalization on a 256-level quantization of `[0, 1]`.
///
/// Each level maps to `round(255 · (cdf(v) − cdf_min) / (HW − cdf_min)) / 255`.
/// A constant image maps to all zeros.
pub fn equalize_histogram(image: &GrayImage) -> Result<GrayImage> {
    if let Some(v) = image.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(FmpnError::Argument(format!("value {v} outside [0, 1]")));
    }
    let levels = image.to_levels();
    let mut hist = [0u64; 256];
    for &l in &levels {
        hist[l as usize] += 1;
    }
    let mut cdf = [0u64; 256];
    let mut running = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        running += h;
        *c = running;
    }
    let total = levels.len() as u64;
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let denom = total - cdf_min;
    let mut lut = [0u8; 256];
    if denom > 0 {
        for (out, &c) in lut.iter_mut().zip(&cdf) {
            let num = c.saturating_sub(cdf_min) * 255;
            *out = ((num + denom / 2) / denom) as u8;
        }
    }
    let mapped: Vec<u8> = levels.iter().map(|&l| lut[l as usize]).collect();
    Ok(GrayImage::from_levels(image.width, image.height, &mapped))
}

fn canonical_order(pairs: &[MaskPair]) -> Vec<&MaskPair> {
    let mut sorted: Vec<&MaskPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| {
        a.key.cmp(&b.key).then_with(|| {
            let ka = a.expressive.data.iter().chain(&a.neutral.data);
            let kb = b.expressive.data.iter().chain(&b.neutral.data);
            ka.map(|v| v.to_bits()).cmp(kb.map(|v| v.to_bits()))
        })
    });
    sorted
}

pub fn compute_class_mask(pairs: &[MaskPair], class_index: usize) -> Result<MotionMask> {
    let ordered: Vec<(GrayImage, GrayImage)> = canonical_order(pairs)
        .into_iter()
        .map(|p| (p.expressive.clone(), p.neutral.clone()))
        .collect();
    let diff = mean_abs_diff(&ordered)?;
    Ok(MotionMask {
        values: equalize_histogram(&diff)?,
        class_index,
        source_count: pairs.len(),
    })
}

/// True when `shuffles` random reorderings of `pairs` all give a bit-identical mask.
pub fn mask_order_invariance_check(pairs: &[MaskPair], shuffles: usize, seed: u64) -> Result<bool> {
    let reference = compute_class_mask(pairs, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = pairs.to_vec();
    for _ in 0..shuffles {
        shuffled.shuffle(&mut rng);
        let mask = compute_class_mask(&shuffled, 0)?;
        let same = mask
            .values
            .data
            .iter()
            .zip(&reference.values.data)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Aligned expressive/neutral pairs grouped by class, in manifest order.
/// Rows without a neutral reference are skipped.
///
/// The neutral image uses the landmarks of the manifest row whose path equals
/// the neutral path when such a row exists, otherwise the expressive row's.
pub fn aligned_pairs(manifest: &DatasetManifest, template: &LandmarkTemplate) -> Result<Vec<Vec<MaskPair>>> {
    let reference = template.at_size(manifest.image_size);
    let by_path: HashMap<&str, LandmarkSet> = manifest
        .samples
        .iter()
        .map(|s| (s.image_path.as_str(), s.landmarks))
        .collect();

    let mut neutral_cache: HashMap<(String, [u64; 10]), GrayImage> = HashMap::new();
    let mut class_pairs: Vec<Vec<MaskPair>> = vec![Vec::new(); manifest.num_classes()];
    for s in &manifest.samples {
        let Some(neutral_path) = &s.neutral_path else {
            continue;
        };
        let neutral_lm = by_path.get(neutral_path.as_str()).copied().unwrap_or(s.landmarks);
        let expr_img = RgbImage::load(&manifest.resolve(&s.image_path))?;
        let expressive = align_face(&expr_img, &s.landmarks, &reference, manifest.image_size)?.gray;
        let lm_key: Vec<u64> = neutral_lm.points().iter().flatten().map(|v| v.to_bits()).collect();
        let cache_key = (neutral_path.clone(), lm_key.try_into().expect("ten coordinates"));
        let neutral = match neutral_cache.get(&cache_key) {
            Some(g) => g.clone(),
            None => {
                let img = RgbImage::load(&manifest.resolve(neutral_path))?;
                let g = align_face(&img, &neutral_lm, &reference, manifest.image_size)?.gray;
                neutral_cache.insert(cache_key, g.clone());
                g
            }
        };
        class_pairs[s.label].push(MaskPair {
            key: s.image_path.clone(),
            expressive,
            neutral,
        });
    }
    Ok(class_pairs)
}

/// Aligns every expressive/neutral pair of the manifest and builds one mask per class.
pub fn generate_mask_bank(manifest: &DatasetManifest, template: &LandmarkTemplate) -> Result<MaskBank> {
    let class_pairs = aligned_pairs(manifest, template)?;
    if let Some(k) = class_pairs.iter().position(Vec::is_empty) {
        return Err(FmpnError::Coverage {
            class: manifest.class_names[k].clone(),
        });
    }

    let jobs: Vec<(usize, Vec<MaskPair>)> = class_pairs.into_iter().enumerate().collect();
    let masks = crate::par::map(jobs, |(k, pairs)| compute_class_mask(&pairs, k))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskBank {
        masks,
        class_names: manifest.class_names.clone(),
        provenance: manifest.root.display().to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BankHeader {
    class_names: Vec<String>,
    provenance: String,
    height: usize,
    width: usize,
    source_counts: Vec<usize>,
}

impl MaskBank {
    pub fn new(masks: Vec<MotionMask>, class_names: Vec<String>, provenance: impl Into<String>) -> Result<Self> {
        if masks.len() != class_names.len() {
            return Err(FmpnError::Argument(format!(
                "{} masks for {} classes",
                masks.len(),
                class_names.len()
            )));
        }
        let first = &masks[0].values;
        for (k, m) in masks.iter().enumerate() {
            if m.class_index != k || !m.values.same_shape(first) {
                return Err(FmpnError::Argument(format!("mask {k} is out of order or mis-sized")));
            }
        }
        Ok(MaskBank {
            masks,
            class_names,
            provenance: provenance.into(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.masks.len()
    }

    pub fn size(&self) -> (usize, usize) {
        let v = &self.masks[0].values;
        (v.width, v.height)
    }

    pub fn mask(&self, class: usize) -> &GrayImage {
        &self.masks[class].values
    }

    /// Bank with every mask bilinearly resized to `size × size`.
    pub fn resized(&self, size: usize) -> MaskBank {
        MaskBank {
            masks: self
                .masks
                .iter()
                .map(|m| MotionMask {
                    values: m.values.resize_bilinear(size, size),
                    ..m.clone()
                })
                .collect(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Re-indexes the bank onto `target_classes`. `mapping` sends a target
    /// class name to a bank class name; unmapped names must match exactly.
    pub fn remap(&self, target_classes: &[String], mapping: &HashMap<String, String>) -> Result<MaskBank> {
        let masks = target_classes
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let source = mapping.get(name).unwrap_or(name);
                let idx = self
                    .class_names
                    .iter()
                    .position(|c| c == source)
                    .ok_or_else(|| FmpnError::Mapping { class: name.clone() })?;
                Ok(MotionMask {
                    class_index: k,
                    ..self.masks[idx].clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskBank {
            masks,
            class_names: target_classes.to_vec(),
            provenance: self.provenance.clone(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| FmpnError::io(dir, e))?;
        for (name, mask) in self.class_names.iter().zip(&self.masks) {
            mask.values.save_png(&dir.join(format!("{name}.png")))?;
        }
        let (width, height) = self.size();
        let header = BankHeader {
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
            height,
            width,
            source_counts: self.masks.iter().map(|m| m.source_count).collect(),
        };
        let path = dir.join("bank.json");
        fs::write(&path, serde_json::to_string_pretty(&header)?).map_err(|e| FmpnError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<MaskBank> {
        let path = dir.join("bank.json");
        let header: BankHeader =
            serde_json::from_str(&fs::read_to_string(&path).map_err(|e| FmpnError::io(&path, e))?)?;
        if header.source_counts.len() != header.class_names.len() || header.class_names.is_empty() {
            return Err(FmpnError::Load("bank.json class list and counts disagree".into()));
        }
        let mut masks = Vec::with_capacity(header.class_names.len());
        for (k, name) in header.class_names.iter().enumerate() {
            let file = dir.join(format!("{name}.png"));
            if !file.is_file() {
                return Err(FmpnError::Coverage { class: name.clone() });
            }
            let values = GrayImage::load_png(&file)?;
            if values.width != header.width || values.height != header.height {
                return Err(FmpnError::Load(format!(
                    "{name}.png is {}x{}, bank.json says {}x{}",
                    values.width, values.height, header.width, header.height
                )));
            }
            masks.push(MotionMask {
                values,
                class_index: k,
                source_count: header.source_counts[k],
            });
        }
        MaskBank::new(masks, header.class_names, header.provenance)
    }

    /// Masks as 8-bit levels, mostly for tests and rendering.
    pub fn levels(&self, class: usize) -> Vec<u8> {
        self.masks[class].values.data.iter().map(|&v| to_level(v)).collect()
    }
}
