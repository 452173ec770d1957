#![allow(dead_code)]

use std::path::Path;

use fmpn_core::dataset::{AugmentPolicy, DatasetManifest};
use fmpn_core::evaluation::RunConfig;
use fmpn_core::networks::{BackboneDescriptor, BackboneRegistry, FmgArch, FmpnModel, ModelSpec, NamedState};
use fmpn_core::nn::{Param, Tensor};
use fmpn_core::synth::{generate, SynthSpec};
use fmpn_core::nn::Mode;
use fmpn_core::training::{joint_gradients, joint_objective, mask_loss, stage1_gradients, Batch, TrainConfig, Variant};
use fmpn_core::seed::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn mini_spec(num_classes: usize) -> ModelSpec {
    ModelSpec {
        fmg: FmgArch {
            enc1: 2,
            enc2: 3,
            res_blocks: 1,
        },
        backbone: BackboneDescriptor {
            name: "tiny".into(),
            input_size: 8,
            num_classes,
            widths: vec![3, 4],
        },
    }
}

pub fn mini_model(seed: u64) -> FmpnModel {
    FmpnModel::init(&mini_spec(3), seed, &BackboneRegistry::default()).unwrap()
}

/// Random 8×8 batch of two faces with targets in (0, 1).
pub fn mini_batch(rng: &mut ChaCha8Rng) -> Batch {
    let mut t = |c: usize| Tensor::from_vec([2, c, 8, 8], (0..2 * c * 64).map(|_| rng.random::<f64>()).collect());
    let gray = t(1);
    let rgb = t(3);
    let target = t(1);
    Batch {
        gray,
        rgb,
        target,
        labels: vec![0, 2],
    }
}

pub fn params_mut(model: &mut FmpnModel) -> Vec<&mut Param> {
    let mut v = model.fmg.params_mut();
    v.extend(model.pfn.params_mut());
    v.extend(model.cn.params_mut());
    v
}

pub fn params(model: &FmpnModel) -> Vec<&Param> {
    let mut v = model.fmg.params();
    v.extend(model.pfn.params());
    v.extend(model.cn.params());
    v
}

/// Synthetic corpus small enough for seconds-long training runs.
pub fn tiny_corpus(dir: &Path, seed: u64) -> DatasetManifest {
    let spec = SynthSpec {
        subjects: 4,
        samples_per_subject_per_class: 1,
        image_size: 32,
        seed,
        ..SynthSpec::default()
    };
    generate(&spec, dir).unwrap()
}

pub fn tiny_run_config() -> RunConfig {
    RunConfig {
        train: TrainConfig {
            stage1_epochs: 1,
            stage2_epochs: 2,
            decay_start_stage1: 0,
            decay_start_stage2: 1,
            lr_fmg_stage1: 1e-3,
            lr_fmg_stage2: 1e-4,
            lr_rest: 1e-3,
            augment: AugmentPolicy {
                crop_size: 28,
                flip_probability: 0.5,
                random_crop: true,
            },
            ..TrainConfig::default()
        },
        fmg: FmgArch {
            enc1: 4,
            enc2: 4,
            res_blocks: 1,
        },
        backbone_widths: vec![4, 8],
        folds: 2,
        ..RunConfig::default()
    }
}

const STEP: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, 1e-8)` over `samples` randomly chosen scalars.
pub fn worst_relative_error(
    model: &mut FmpnModel,
    samples: usize,
    seed: u64,
    objective: &mut dyn FnMut(&mut FmpnModel) -> f64,
) -> f64 {
    let analytic: Vec<Vec<f64>> = params(model).iter().map(|p| p.grad.clone()).collect();
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let mut r = rng(seed, 77);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut flat = r.random_range(0..total);
        let mut p = 0;
        while flat >= sizes[p] {
            flat -= sizes[p];
            p += 1;
        }
        let original = params(model)[p].value[flat];
        params_mut(model)[p].value[flat] = original + STEP;
        let plus = objective(model);
        params_mut(model)[p].value[flat] = original - STEP;
        let minus = objective(model);
        params_mut(model)[p].value[flat] = original;
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic[p][flat];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}


/// Worst relative error of the `l_G` gradient over 50 sampled parameters.
pub fn mask_gradient_error(seed: u64) -> f64 {
    let mut model = mini_model(seed);
    let batch = mini_batch(&mut rng(seed, 1));
    model.zero_grad();
    stage1_gradients(&mut model, &batch).unwrap();
    worst_relative_error(&mut model, 50, seed, &mut |m| {
        let (mask, _) = m.fmg.forward(&batch.gray, Mode::Train).unwrap();
        mask_loss(&mask, &batch.target).unwrap()
    })
}

/// Worst relative error of the joint objective's gradient over 50 sampled parameters.
pub fn joint_gradient_error(cfg: &TrainConfig, seed: u64) -> f64 {
    let mut model = mini_model(seed);
    let batch = mini_batch(&mut rng(seed, 1));
    model.zero_grad();
    joint_gradients(&mut model, &batch, cfg, Variant::Full).unwrap();
    worst_relative_error(&mut model, 50, seed, &mut |m| {
        joint_objective(m, &batch, cfg, Variant::Full).unwrap()
    })
}

/// Brute-force class mask: per-pixel loops for the mean of `|e − n|` over
/// the pairs in the given order, quantization to 8 bits, then the textbook
/// histogram equalization `round((cdf(v) − cdf_min) / (N − cdf_min) · 255)`.
pub fn oracle_mask(pairs: &[(Vec<f64>, Vec<f64>)]) -> Vec<u8> {
    let n = pairs[0].0.len();
    let mut mean = vec![0.0f64; n];
    for (i, m) in mean.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (e, z) in pairs {
            acc += (e[i] - z[i]).abs();
        }
        *m = acc / pairs.len() as f64;
    }
    let levels: Vec<usize> = mean.iter().map(|v| (v * 255.0).round() as usize).collect();
    let mut hist = [0usize; 256];
    for &l in &levels {
        hist[l] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut run = 0;
    for v in 0..256 {
        run += hist[v];
        cdf[v] = run;
    }
    let cdf_min = (0..256).map(|v| cdf[v]).find(|&c| c > 0).unwrap();
    levels
        .iter()
        .map(|&l| {
            if n == cdf_min {
                0
            } else {
                ((cdf[l] - cdf_min) as f64 / (n - cdf_min) as f64 * 255.0).round() as u8
            }
        })
        .collect()
}
