//! Procedural face corpus with class-specific motion regions.
//!
//! Every subject gets one neutral face: a soft ellipse with eyes, brows, nose
//! and mouth placed on the default landmark template, tinted and textured per
//! subject. Expressive variants add intensity bumps and small local
//! translations inside the rectangles of their class, then pixel noise.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, FaceSample, LandmarkSet, LandmarkTemplate, SimilarityTransform};
use crate::error::{FmpnError, Result};
use crate::maskgen::aligned_pairs;
use crate::raster::{GrayImage, RgbImage};
use crate::seed::{derive_seed, rng};

/// Axis-aligned rectangle in image fractions, `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x0 && u < self.x1 && v >= self.y0 && v < self.y1
    }

    /// Membership of pixel `(x, y)` of a `size`-pixel square image.
    pub fn contains_pixel(&self, x: usize, y: usize, size: usize) -> bool {
        self.contains(x as f64 / size as f64, y as f64 / size as f64)
    }

    fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.x0)
            && (0.0..=1.0).contains(&self.x1)
            && (0.0..=1.0).contains(&self.y0)
            && (0.0..=1.0).contains(&self.y1)
            && self.x0 < self.x1
            && self.y0 < self.y1
    }

    /// Flat-topped window: 1 in the central 60 %, cosine tapers to 0 at the border.
    fn window(&self, u: f64, v: f64) -> f64 {
        if !self.contains(u, v) {
            return 0.0;
        }
        let taper = |t: f64| {
            let edge = t.min(1.0 - t);
            if edge >= 0.2 {
                1.0
            } else {
                0.5 * (1.0 - (std::f64::consts::PI * edge / 0.2).cos())
            }
        };
        taper((u - self.x0) / (self.x1 - self.x0)) * taper((v - self.y0) / (self.y1 - self.y0))
    }
}

/// One deformation rectangle: additive intensity and a translation of the
/// underlying face, both in image units and both faded by the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub rect: Rect,
    pub intensity: f64,
    pub shift: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLayout {
    pub name: String,
    pub regions: Vec<Region>,
}

impl ClassLayout {
    pub fn rects(&self) -> Vec<Rect> {
        self.regions.iter().map(|r| r.rect).collect()
    }

    pub fn contains_pixel(&self, x: usize, y: usize, size: usize) -> bool {
        self.regions.iter().any(|r| r.rect.contains_pixel(x, y, size))
    }
}

fn region(x0: f64, y0: f64, x1: f64, y1: f64, intensity: f64, shift: [f64; 2]) -> Region {
    Region {
        rect: Rect::new(x0, y0, x1, y1),
        intensity,
        shift,
    }
}

/// Seven basic expressions with disjoint-enough layouts around brows, eyes,
/// nose, cheeks and mouth.
pub fn default_layouts() -> Vec<ClassLayout> {
    let layout = |name: &str, regions: Vec<Region>| ClassLayout {
        name: name.into(),
        regions,
    };
    vec![
        layout(
            "anger",
            vec![
                region(0.16, 0.24, 0.84, 0.42, -0.30, [0.0, 0.02]),
                region(0.38, 0.40, 0.62, 0.56, -0.22, [0.0, 0.0]),
            ],
        ),
        layout(
            "contempt",
            vec![
                region(0.52, 0.62, 0.86, 0.90, 0.28, [0.02, -0.02]),
                region(0.58, 0.46, 0.86, 0.62, 0.18, [0.0, -0.01]),
            ],
        ),
        layout(
            "disgust",
            vec![
                region(0.36, 0.40, 0.64, 0.66, -0.26, [0.0, -0.01]),
                region(0.26, 0.64, 0.74, 0.76, 0.24, [0.0, -0.02]),
            ],
        ),
        layout(
            "fear",
            vec![
                region(0.14, 0.30, 0.46, 0.50, 0.26, [0.0, -0.01]),
                region(0.54, 0.30, 0.86, 0.50, 0.26, [0.0, -0.01]),
                region(0.26, 0.72, 0.74, 0.86, -0.24, [0.0, 0.01]),
            ],
        ),
        layout(
            "happiness",
            vec![
                region(0.14, 0.58, 0.40, 0.88, 0.30, [-0.01, -0.02]),
                region(0.60, 0.58, 0.86, 0.88, 0.30, [0.01, -0.02]),
            ],
        ),
        layout(
            "sadness",
            vec![
                region(0.28, 0.20, 0.72, 0.38, 0.24, [0.0, -0.02]),
                region(0.20, 0.76, 0.80, 0.92, -0.28, [0.0, 0.02]),
            ],
        ),
        layout(
            "surprise",
            vec![
                region(0.14, 0.14, 0.86, 0.30, 0.26, [0.0, -0.02]),
                region(0.34, 0.68, 0.66, 0.96, -0.34, [0.0, 0.0]),
            ],
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: Vec<ClassLayout>,
    pub subjects: usize,
    pub samples_per_subject_per_class: usize,
    pub image_size: usize,
    /// Standard deviation of additive pixel noise, in `[0, 1]` intensity units.
    pub noise_sigma: f64,
    /// Global multiplier on region intensities and shifts; 0 disables deformation.
    pub amplitude: f64,
    /// Per-subject head pose spread; 0 keeps every face on the template.
    pub pose_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: default_layouts(),
            subjects: 20,
            samples_per_subject_per_class: 3,
            image_size: 64,
            noise_sigma: 0.02,
            amplitude: 1.0,
            pose_jitter: 0.0,
            seed: 0,
        }
    }
}

/// Per-subject appearance drawn once from the subject's stream.
#[derive(Debug, Clone)]
struct Subject {
    skin: [f64; 3],
    background: [f64; 3],
    lip: [f64; 3],
    radii: [f64; 2],
    feature_darkness: f64,
    brow_thickness: f64,
    waves: Vec<([f64; 2], f64, f64)>,
    pose: SimilarityTransform,
}

fn smoothstep(a: f64, b: f64, x: f64) -> f64 {
    let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft ellipse indicator centered at `c` with radii `r`.
fn blob(u: f64, v: f64, c: [f64; 2], r: [f64; 2]) -> f64 {
    let e = ((u - c[0]) / r[0]).powi(2) + ((v - c[1]) / r[1]).powi(2);
    1.0 - smoothstep(0.6, 1.0, e)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

impl Subject {
    fn draw(spec: &SynthSpec, index: usize) -> Subject {
        let mut r = rng(spec.seed, derive_seed(index as u64, 0x5B1E));
        let tone = r.random_range(0.45..0.85);
        let warmth = r.random_range(0.75..0.95);
        let skin = [tone + 0.06, tone * warmth, tone * warmth * 0.85];
        let bg = r.random_range(0.05..0.35);
        let background = [bg, bg * r.random_range(0.9..1.2), bg * r.random_range(0.9..1.4)];
        let lip = [0.35 + 0.4 * tone, 0.25 * tone, 0.25 * tone];
        let radii = [r.random_range(0.33..0.40), r.random_range(0.42..0.50)];
        let waves = (0..4)
            .map(|_| {
                let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
                let freq = r.random_range(3.0..9.0) * std::f64::consts::TAU;
                ([angle.cos() * freq, angle.sin() * freq], r.random_range(0.0..std::f64::consts::TAU), r.random_range(0.005..0.02))
            })
            .collect();
        let feature_darkness = r.random_range(0.55..0.85);
        let brow_thickness = r.random_range(0.018..0.03);
        let j = spec.pose_jitter;
        let (angle, scale, shift) = if j > 0.0 {
            (
                r.random_range(-0.15..0.15) * j,
                1.0 + r.random_range(-0.1..0.1) * j,
                [r.random_range(-0.05..0.05) * j, r.random_range(-0.05..0.05) * j],
            )
        } else {
            (0.0, 1.0, [0.0, 0.0])
        };
        let s = spec.image_size as f64;
        let c = [s / 2.0, s / 2.0];
        let (sn, cs) = angle.sin_cos();
        let pose = SimilarityTransform {
            scale,
            rotation: angle,
            translation: [
                c[0] + shift[0] * s - scale * (cs * c[0] - sn * c[1]),
                c[1] + shift[1] * s - scale * (sn * c[0] + cs * c[1]),
            ],
        };
        Subject {
            skin,
            background,
            lip,
            radii,
            feature_darkness,
            brow_thickness,
            waves,
            pose,
        }
    }

    /// Neutral face color at canonical point `(u, v)`.
    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let texture: f64 = self
            .waves
            .iter()
            .map(|(k, phase, amp)| amp * (k[0] * u + k[1] * v + phase).sin())
            .sum();
        let skin = self.skin.map(|c| c + texture);
        let inside = blob(u, v, [0.5, 0.54], self.radii);
        let mut px = mix(self.background, skin, inside);

        let d = self.feature_darkness;
        let t = LandmarkTemplate::default().fractions;
        for eye in [t[0], t[1]] {
            let white = blob(u, v, eye, [0.075, 0.035]);
            px = mix(px, [0.92, 0.92, 0.9], 0.7 * white);
            let pupil = blob(u, v, eye, [0.028, 0.028]);
            px = mix(px, [0.05, 0.04, 0.04], d * pupil);
            let brow = blob(u, v, [eye[0], eye[1] - 0.09], [0.09, self.brow_thickness]);
            px = mix(px, [0.12, 0.08, 0.06], d * brow);
        }
        let bridge = blob(u, v, [t[2][0], t[2][1] - 0.07], [0.025, 0.09]);
        px = px.map(|c| c * (1.0 - 0.15 * bridge));
        for side in [-0.04, 0.04] {
            let nostril = blob(u, v, [t[2][0] + side, t[2][1] + 0.01], [0.018, 0.014]);
            px = px.map(|c| c * (1.0 - 0.6 * d * nostril));
        }
        let mouth_center = [(t[3][0] + t[4][0]) / 2.0, (t[3][1] + t[4][1]) / 2.0];
        let half_width = (t[4][0] - t[3][0]) / 2.0;
        let lips = blob(u, v, mouth_center, [half_width, 0.03]);
        mix(px, self.lip, 0.85 * lips)
    }
}

/// A rendered face and its analytic landmarks.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: RgbImage,
    pub landmarks: LandmarkSet,
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FmpnError::Config(m));
        if self.classes.len() < 2 {
            return bad("at least two classes are required".into());
        }
        for (i, a) in self.classes.iter().enumerate() {
            if a.regions.is_empty() {
                return bad(format!("class \"{}\" has no deformation rectangles", a.name));
            }
            if let Some(r) = a.regions.iter().find(|r| !r.rect.is_valid()) {
                return bad(format!("class \"{}\" has a rectangle outside the image: {:?}", a.name, r.rect));
            }
            for b in &self.classes[..i] {
                if a.name == b.name {
                    return bad(format!("duplicate class \"{}\"", a.name));
                }
                if a.rects() == b.rects() {
                    return bad(format!("classes \"{}\" and \"{}\" share a layout", b.name, a.name));
                }
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(self.amplitude >= 0.0 && self.pose_jitter >= 0.0) {
            return bad("amplitude and pose_jitter must be non-negative".into());
        }
        if self.image_size < 32 {
            return bad(format!("image_size {} is below 32", self.image_size));
        }
        if self.subjects == 0 {
            return bad("at least one subject is required".into());
        }
        Ok(())
    }

    pub fn subject_id(&self, subject: usize) -> String {
        format!("s{subject:03}")
    }

    pub fn landmarks(&self, subject: usize) -> LandmarkSet {
        Subject::draw(self, subject)
            .pose
            .apply_landmarks(&LandmarkTemplate::default().at_size(self.image_size))
    }

    pub fn render_neutral(&self, subject: usize) -> Rendered {
        self.render(&Subject::draw(self, subject), subject, None)
    }

    pub fn render_expressive(&self, subject: usize, class: usize, sample: usize) -> Rendered {
        self.render(&Subject::draw(self, subject), subject, Some((class, sample)))
    }

    fn render(&self, who: &Subject, subject: usize, expression: Option<(usize, usize)>) -> Rendered {
        let size = self.image_size;
        let stream = match expression {
            None => derive_seed(subject as u64, 0x0E07),
            Some((k, i)) => derive_seed(derive_seed(subject as u64, k as u64), i as u64 + 1),
        };
        let mut r: ChaCha8Rng = rng(self.seed, stream);
        let gain = match expression {
            Some(_) => self.amplitude * r.random_range(0.75..1.25),
            None => 0.0,
        };
        let regions: &[Region] = match expression {
            Some((k, _)) => &self.classes[k].regions,
            None => &[],
        };
        let noise = Normal::new(0.0, self.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let back = who.pose.inverse();
        let s = size as f64;
        let mut image = RgbImage::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let [cx, cy] = back.apply([x as f64, y as f64]);
                let (u, v) = (cx / s, cy / s);
                let (mut du, mut dv, mut delta) = (0.0, 0.0, 0.0);
                if gain > 0.0 {
                    for reg in regions {
                        let w = reg.rect.window(u, v) * gain;
                        du += w * reg.shift[0];
                        dv += w * reg.shift[1];
                        delta += w * reg.intensity;
                    }
                }
                let mut px = who.color(u - du, v - dv).map(|c| c + delta);
                if self.noise_sigma > 0.0 {
                    let n = noise.sample(&mut r);
                    px = px.map(|c| c + n);
                }
                image.set(x, y, px.map(|c| c.clamp(0.0, 1.0)));
            }
        }
        Rendered {
            image,
            landmarks: who.pose.apply_landmarks(&LandmarkTemplate::default().at_size(size)),
        }
    }
}

/// Writes `images/*.png`, `manifest.csv` with its sidecar and `synth_spec.json`
/// under `out_dir`. Manifest rows are the expressive faces; each references
/// its subject's neutral image.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| FmpnError::io(&images, e))?;
    let subjects: Vec<usize> = (0..spec.subjects).collect();
    let rows = crate::par::map(subjects, |subject| -> Result<Vec<FaceSample>> {
        let who = Subject::draw(spec, subject);
        let id = spec.subject_id(subject);
        let neutral_path = format!("images/{id}_neutral.png");
        let neutral = spec.render(&who, subject, None);
        neutral.image.save_png(&out_dir.join(&neutral_path))?;
        let mut rows = Vec::new();
        for (k, class) in spec.classes.iter().enumerate() {
            for i in 0..spec.samples_per_subject_per_class {
                let face = spec.render(&who, subject, Some((k, i)));
                let path = format!("images/{id}_{}_{i}.png", class.name);
                face.image.save_png(&out_dir.join(&path))?;
                rows.push(FaceSample {
                    image_path: path,
                    label: k,
                    subject_id: id.clone(),
                    landmarks: face.landmarks,
                    neutral_path: Some(neutral_path.clone()),
                });
            }
        }
        Ok(rows)
    });
    let mut manifest = DatasetManifest::new(out_dir.to_path_buf(), spec.class_names(), spec.image_size)?;
    for r in rows {
        manifest.samples.extend(r?);
    }
    manifest.save(&out_dir.join("manifest.csv"))?;
    let spec_path = out_dir.join("synth_spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(spec)?).map_err(|e| FmpnError::io(&spec_path, e))?;
    Ok(manifest)
}

/// Nearest-class-template accuracy on aligned `|expressive − neutral|`
/// differences must reach 99 %. Templates are per-class means over the whole
/// manifest, leaving out the sample being classified. Fewer than two
/// represented classes pass trivially.
pub fn verify_separability(manifest: &DatasetManifest) -> Result<bool> {
    let pairs = aligned_pairs(manifest, &LandmarkTemplate::default())?;
    let diffs: Vec<Vec<Vec<f64>>> = pairs
        .iter()
        .map(|class| {
            class
                .iter()
                .map(|p| {
                    p.expressive
                        .data
                        .iter()
                        .zip(&p.neutral.data)
                        .map(|(e, n)| (e - n).abs())
                        .collect()
                })
                .collect()
        })
        .collect();
    let present: Vec<usize> = (0..diffs.len()).filter(|&k| !diffs[k].is_empty()).collect();
    if present.len() <= 1 {
        return Ok(true);
    }
    let sums: Vec<Vec<f64>> = present
        .iter()
        .map(|&k| {
            let mut sum = vec![0.0; diffs[k][0].len()];
            for d in &diffs[k] {
                for (s, v) in sum.iter_mut().zip(d) {
                    *s += v;
                }
            }
            sum
        })
        .collect();
    let (mut correct, mut total) = (0usize, 0usize);
    for &k in &present {
        for d in &diffs[k] {
            let mut best = (f64::INFINITY, usize::MAX);
            for (&c, sum) in present.iter().zip(&sums) {
                let n = diffs[c].len();
                // Leave the sample out of its own class template.
                let own = c == k;
                if own && n == 1 {
                    continue;
                }
                let count = (n - usize::from(own)) as f64;
                let dist: f64 = d
                    .iter()
                    .zip(sum)
                    .map(|(a, s)| {
                        let t = if own { (s - a) / count } else { s / count };
                        (a - t) * (a - t)
                    })
                    .sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            correct += usize::from(best.1 == k);
            total += 1;
        }
    }
    Ok(correct as f64 >= 0.99 * total as f64)
}

/// Fraction of the mask's top-decile pixels (the `⌈HW/10⌉` largest values,
/// ties resolved toward lower raster index) that fall inside `layout`.
pub fn top_decile_inside(mask: &GrayImage, layout: &ClassLayout) -> f64 {
    let n = mask.data.len();
    let take = n.div_ceil(10);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mask.data[b].total_cmp(&mask.data[a]).then(a.cmp(&b)));
    let inside = order[..take]
        .iter()
        .filter(|&&i| layout.contains_pixel(i % mask.width, i / mask.width, mask.width))
        .count();
    inside as f64 / take as f64
}
