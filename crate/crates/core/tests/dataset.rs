use std::fs;

use fmpn_core::dataset::{
    align_face, align_samples, estimate_similarity, load_manifest, plan_folds, DatasetManifest, FaceSample,
    LandmarkSet, LandmarkTemplate,
};
use fmpn_core::raster::RgbImage;
use fmpn_core::seed::rng;
use fmpn_core::synth::SynthSpec;
use fmpn_core::FmpnError;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Least-squares similarity via complex arithmetic on centered points:
/// `a = Σ conj(z̃)·w̃ / Σ |z̃|²`, `b = w̄ − a·z̄`.
fn complex_fit(src: &[[f64; 2]; 5], dst: &[[f64; 2]; 5]) -> (f64, f64, [f64; 2]) {
    let mean = |p: &[[f64; 2]; 5]| {
        let (x, y) = p.iter().fold((0.0, 0.0), |(x, y), q| (x + q[0], y + q[1]));
        (x / 5.0, y / 5.0)
    };
    let (zx, zy) = mean(src);
    let (wx, wy) = mean(dst);
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s[0] - zx, s[1] - zy);
        let (c, e) = (d[0] - wx, d[1] - wy);
        re += a * c + b * e;
        im += a * e - b * c;
        norm += a * a + b * b;
    }
    let (ar, ai) = (re / norm, im / norm);
    let t = [wx - (ar * zx - ai * zy), wy - (ai * zx + ar * zy)];
    (ar.hypot(ai), ai.atan2(ar), t)
}

#[test]
fn rotated_noisy_landmarks_match_the_closed_form_oracle() {
    let src = LandmarkTemplate::default().at_size(128);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut r = rng(30, 0);
    let (s, c) = 30f64.to_radians().sin_cos();
    let [cx, cy] = [64.0, 70.0];
    let dst = src.map(|[x, y]| {
        let (dx, dy) = (x - cx, y - cy);
        [cx + c * dx - s * dy, cy + s * dx + c * dy]
    });
    let dst = LandmarkSet::new(dst.points().map(|[x, y]| [x + noise.sample(&mut r), y + noise.sample(&mut r)])).unwrap();
    let fit = estimate_similarity(&src, &dst).unwrap();
    let (scale, rotation, t) = complex_fit(src.points(), dst.points());
    assert!((fit.scale - scale).abs() < 1e-6);
    assert!((fit.rotation - rotation).abs() < 1e-6);
    assert!((fit.translation[0] - t[0]).abs() < 1e-6);
    assert!((fit.translation[1] - t[1]).abs() < 1e-6);
    assert!((rotation - 30f64.to_radians()).abs() < 0.01);
}

#[test]
fn translated_image_is_recovered() {
    let spec = SynthSpec::default();
    let face = spec.render_neutral(2);
    let size = spec.image_size;
    let mut shifted = RgbImage::new(size, size);
    for y in 4..size {
        for x in 7..size {
            shifted.set(x, y, face.image.get(x - 7, y - 4));
        }
    }
    let moved = face.landmarks.map(|[x, y]| [x + 7.0, y + 4.0]);
    let fit = estimate_similarity(&moved, &face.landmarks).unwrap();
    assert!(fit.apply_landmarks(&moved).rms_distance(&face.landmarks) < 0.5);

    let aligned = align_face(&shifted, &moved, &face.landmarks, size).unwrap();
    for y in 4..size - 4 {
        for x in 7..size - 7 {
            let (a, b) = (aligned.rgb.get(x, y), face.image.get(x, y));
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() < 1e-9, "pixel ({x}, {y})");
            }
        }
    }
}

fn manifest_with_subjects(n: usize) -> DatasetManifest {
    let mut m = DatasetManifest::new(".".into(), vec!["a".into(), "b".into()], 64).unwrap();
    for s in 0..n {
        for j in 0..2 {
            m.samples.push(FaceSample {
                image_path: format!("{s}_{j}.png"),
                label: j,
                subject_id: format!("subject{s:02}"),
                landmarks: LandmarkTemplate::default().at_size(64),
                neutral_path: None,
            });
        }
    }
    m
}

/// Every way of writing `total` as `parts` ordered sizes whose spread is at most one.
fn balanced_compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn go(left: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == parts {
            if left == 0 {
                let (lo, hi) = (prefix.iter().min().unwrap(), prefix.iter().max().unwrap());
                if hi - lo <= 1 {
                    out.push(prefix.clone());
                }
            }
            return;
        }
        for size in 0..=left {
            prefix.push(size);
            go(left - size, parts, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(total, parts, &mut Vec::new(), &mut out);
    out
}

#[test]
fn twenty_five_subjects_in_ten_folds() {
    let candidates = balanced_compositions(25, 10);
    assert!(candidates.iter().all(|c| {
        let mut sorted = c.clone();
        sorted.sort_unstable();
        sorted == [2, 2, 2, 2, 2, 3, 3, 3, 3, 3]
    }));
    let plan = plan_folds(&manifest_with_subjects(25), 10).unwrap();
    let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    assert!(candidates.contains(&sizes));
    assert_eq!(sizes, [3, 3, 3, 3, 3, 2, 2, 2, 2, 2]);
    let flat: Vec<&String> = plan.folds.iter().flatten().collect();
    assert!(flat.windows(2).all(|w| w[0] < w[1]), "folds are contiguous in sorted order");
}

#[test]
fn leakage_is_reported_for_a_corrupted_plan() {
    let manifest = manifest_with_subjects(4);
    let mut plan = plan_folds(&manifest, 2).unwrap();
    plan.assignment[1] = 1 - plan.assignment[0];
    assert!(matches!(plan.split(&manifest, 0), Err(FmpnError::Leakage(_))));
}

#[test]
fn csv_round_trip_and_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        subjects: 3,
        samples_per_subject_per_class: 1,
        pose_jitter: 1.0,
        ..SynthSpec::default()
    };
    let manifest = fmpn_core::synth::generate(&spec, dir.path()).unwrap();
    let loaded = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(loaded.samples, manifest.samples);
    assert_eq!(loaded.class_names, manifest.class_names);
    let faces = align_samples(&loaded, &LandmarkTemplate::default()).unwrap();
    assert_eq!(faces.len(), 3 * 7);
    assert!(faces.iter().all(|f| f.size() == spec.image_size));
    assert_eq!(faces[0].subject_id, loaded.samples[0].subject_id);
}

#[test]
fn parse_errors_carry_the_file_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut m = manifest_with_subjects(1);
    m.save(&path).unwrap();
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("x.png,a,s9,1,2,3\n");
    fs::write(&path, text).unwrap();
    let err = load_manifest(&path).unwrap_err().to_string();
    assert!(err.contains('4'), "{err}");
    m.samples.clear();
    m.save(&path).unwrap();
    assert!(load_manifest(&path).unwrap().samples.is_empty());
}

proptest! {
    #[test]
    fn plan_is_a_balanced_subject_partition(subjects in 2usize..40, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(subjects >= k);
        let mut manifest = manifest_with_subjects(subjects);
        let mut r = rng(seed, 0);
        for s in &mut manifest.samples {
            s.label = r.random_range(0..2);
        }
        let plan = plan_folds(&manifest, k).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), subjects);
        for fold in 0..k {
            let (train, test) = plan.split(&manifest, fold).unwrap();
            prop_assert_eq!(train.len() + test.len(), manifest.samples.len());
            for &i in &test {
                prop_assert!(plan.folds[fold].contains(&manifest.samples[i].subject_id));
            }
        }
    }
}
