//! Subject-independent cross-validation, confusion matrices, ablation
//! variants and cross-corpus mask transfer.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{align_samples, plan_folds, AlignedFace, AugmentPolicy, DatasetManifest, LandmarkTemplate, View};
use crate::error::{FmpnError, Result};
use crate::maskgen::MaskBank;
use crate::networks::{BackboneDescriptor, BackboneRegistry, Checkpoint, FmgArch, FmpnModel, ModelSpec};
use crate::seed::derive_seed;
use crate::training::{argmax, face_tensors, fit, TrainConfig, TrainingSet, Variant};

/// Everything one experiment needs besides data: the training schedule plus
/// the model architecture. Serialized flat, so a plain training config file
/// is also a valid run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub fmg: FmgArch,
    pub backbone: String,
    pub backbone_widths: Vec<usize>,
    /// Optional checkpoint whose `cn.*` tensors initialize the backbone.
    pub pretrained_backbone: Option<PathBuf>,
    /// Run stage 1 before joint training.
    pub pretrain_fmg: bool,
    pub folds: usize,
    /// Faces per forward pass at evaluation time.
    pub eval_batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            fmg: FmgArch::default(),
            backbone: "tiny".into(),
            backbone_widths: BackboneDescriptor::tiny(0, 2).widths,
            pretrained_backbone: None,
            pretrain_fmg: true,
            folds: 10,
            eval_batch_size: 64,
        }
    }
}

impl RunConfig {
    /// Narrow networks and short schedules for 64-pixel corpora.
    pub fn desk() -> Self {
        RunConfig {
            train: TrainConfig::desk(),
            fmg: FmgArch::desk(),
            folds: 5,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.eval_batch_size == 0 {
            return Err(FmpnError::Config("eval_batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self, num_classes: usize) -> ModelSpec {
        ModelSpec {
            fmg: self.fmg,
            backbone: BackboneDescriptor {
                name: self.backbone.clone(),
                input_size: self.train.augment.crop_size,
                num_classes,
                widths: self.backbone_widths.clone(),
            },
        }
    }

    /// Hex SHA-256 of the canonical JSON form of this config.
    pub fn digest(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Class index with the largest logit; ties go to the lowest index.
pub fn predict(model: &mut FmpnModel, face: &AlignedFace, policy: &AugmentPolicy, use_fmg: bool) -> Result<usize> {
    Ok(predict_faces(model, &[face], policy, use_fmg, 1)?[0])
}

/// Center-crop predictions for many faces, `batch_size` at a time.
pub fn predict_faces(
    model: &mut FmpnModel,
    faces: &[&AlignedFace],
    policy: &AugmentPolicy,
    use_fmg: bool,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(faces.len());
    for chunk in faces.chunks(batch_size.max(1)) {
        let views = chunk
            .iter()
            .map(|f| View::center(policy, f.size()))
            .collect::<Result<Vec<_>>>()?;
        let (gray, rgb) = face_tensors(chunk, &views);
        let logits = model.logits(&gray, &rgb, use_fmg)?;
        preds.extend(logits.data.chunks_exact(logits.shape[1]).map(argmax));
    }
    Ok(preds)
}

/// Cell `(i, j)` counts samples of true class `i` predicted as `j`.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if preds.len() != labels.len() {
        return Err(FmpnError::Argument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= k || l >= k {
            return Err(FmpnError::Argument(format!("class index out of range for K={k}: ({l}, {p})")));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Row-normalized confusion; rows without samples stay zero and are flagged.
pub fn normalize_confusion(confusion: &[Vec<u64>]) -> (Vec<Vec<f64>>, Vec<bool>) {
    confusion
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                (vec![0.0; row.len()], true)
            } else {
                (row.iter().map(|&c| c as f64 / total as f64).collect(), false)
            }
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub class_names: Vec<String>,
    pub per_fold_accuracy: Vec<f64>,
    pub per_fold_samples: Vec<usize>,
    /// Correct predictions over all test samples, i.e. the sample-weighted fold mean.
    pub mean_accuracy: f64,
    /// Plain average of the fold accuracies.
    pub uniform_mean_accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub normalized_confusion: Vec<Vec<f64>>,
    /// Classes that never occur in any test fold.
    pub empty_rows: Vec<bool>,
    pub config_digest: String,
    /// Mask-generator forward passes over all folds, training included.
    pub fmg_evaluations: u64,
}

/// Predictions and labels of one held-out fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub preds: Vec<usize>,
    pub labels: Vec<usize>,
    pub fmg_evaluations: u64,
}

impl EvalReport {
    pub fn from_folds(
        folds: &[FoldOutcome],
        class_names: Vec<String>,
        variant: Variant,
        config_digest: String,
    ) -> Result<EvalReport> {
        let k = class_names.len();
        let mut confusion = vec![vec![0u64; k]; k];
        let mut per_fold_accuracy = Vec::with_capacity(folds.len());
        let mut per_fold_samples = Vec::with_capacity(folds.len());
        let (mut correct, mut total) = (0usize, 0usize);
        for fold in folds {
            let c = confusion_matrix(&fold.preds, &fold.labels, k)?;
            for (row, add) in confusion.iter_mut().zip(&c) {
                for (a, b) in row.iter_mut().zip(add) {
                    *a += b;
                }
            }
            let hits = fold.preds.iter().zip(&fold.labels).filter(|(p, l)| p == l).count();
            let n = fold.labels.len();
            per_fold_accuracy.push(if n == 0 { 0.0 } else { hits as f64 / n as f64 });
            per_fold_samples.push(n);
            correct += hits;
            total += n;
        }
        let (normalized_confusion, empty_rows) = normalize_confusion(&confusion);
        let uniform = per_fold_accuracy.iter().sum::<f64>() / per_fold_accuracy.len().max(1) as f64;
        Ok(EvalReport {
            variant,
            class_names,
            mean_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            uniform_mean_accuracy: uniform,
            per_fold_accuracy,
            per_fold_samples,
            confusion,
            normalized_confusion,
            empty_rows,
            config_digest,
            fmg_evaluations: folds.iter().map(|f| f.fmg_evaluations).sum(),
        })
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.normalized_confusion) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap of the normalized confusion, `cell` pixels per entry, white
    /// for 0 through dark blue for 1. Empty rows are drawn hatched gray.
    pub fn confusion_heatmap(&self, cell: usize) -> image::RgbImage {
        let k = self.class_names.len();
        let side = (k * cell) as u32;
        image::RgbImage::from_fn(side, side, |x, y| {
            let (i, j) = (y as usize / cell, x as usize / cell);
            if cell > 2 && (x as usize % cell == 0 || y as usize % cell == 0) {
                return image::Rgb([200, 200, 200]);
            }
            if self.empty_rows[i] {
                let stripe = (x + y) % 6 < 3;
                return image::Rgb(if stripe { [160, 160, 160] } else { [230, 230, 230] });
            }
            let v = self.normalized_confusion[i][j].clamp(0.0, 1.0);
            let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
            image::Rgb([lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0)])
        })
    }

    /// Writes `report.json`, `confusion.csv` and `confusion.png` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| FmpnError::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| FmpnError::io(&json, e))?;
        let csv = dir.join("confusion.csv");
        fs::write(&csv, self.confusion_csv()).map_err(|e| FmpnError::io(&csv, e))?;
        let png = dir.join("confusion.png");
        self.confusion_heatmap(32)
            .save(&png)
            .map_err(|source| FmpnError::Image { path: png, source })
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = fs::read_to_string(path).map_err(|e| FmpnError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Trains one model on the training faces of a fold and predicts its test faces.
pub fn run_fold(
    train: Vec<AlignedFace>,
    test: &[&AlignedFace],
    bank: &MaskBank,
    cfg: &RunConfig,
    variant: Variant,
    seed: u64,
    registry: &BackboneRegistry,
) -> Result<(FmpnModel, FoldOutcome)> {
    let mut model = FmpnModel::init(&cfg.model_spec(bank.num_classes()), seed, registry)?;
    if let Some(path) = &cfg.pretrained_backbone {
        model.load_pretrained_backbone(&Checkpoint::load(path)?)?;
    }
    let set = TrainingSet::new(train, bank)?;
    let train_cfg = TrainConfig { seed, ..cfg.train };
    fit(&mut model, &set, &train_cfg, variant, cfg.pretrain_fmg, &mut |_, _| Ok(()))?;
    let preds = predict_faces(&mut model, test, &cfg.train.augment, variant.uses_fmg(), cfg.eval_batch_size)?;
    let outcome = FoldOutcome {
        preds,
        labels: test.iter().map(|f| f.label).collect(),
        fmg_evaluations: model.fmg_calls,
    };
    Ok((model, outcome))
}

/// `k`-fold subject-independent evaluation of one variant. Folds train in
/// parallel on independent models; each fold's seed derives from the config
/// seed and the fold index.
pub fn evaluate(
    manifest: &DatasetManifest,
    bank: &MaskBank,
    cfg: &RunConfig,
    variant: Variant,
    k: usize,
    registry: &BackboneRegistry,
) -> Result<EvalReport> {
    cfg.validate()?;
    if bank.class_names != manifest.class_names {
        return Err(FmpnError::Mapping {
            class: manifest
                .class_names
                .iter()
                .find(|c| !bank.class_names.contains(c))
                .unwrap_or(&manifest.class_names[0])
                .clone(),
        });
    }
    let plan = plan_folds(manifest, k)?;
    let splits = (0..k).map(|f| plan.split(manifest, f)).collect::<Result<Vec<_>>>()?;
    let faces = align_samples(manifest, &LandmarkTemplate::default())?;
    let jobs: Vec<usize> = (0..k).collect();
    let outcomes = crate::par::map(jobs, |fold| {
        let (train, test) = &splits[fold];
        let train_faces = train.iter().map(|&i| faces[i].clone()).collect();
        let test_faces: Vec<&AlignedFace> = test.iter().map(|&i| &faces[i]).collect();
        let seed = derive_seed(cfg.train.seed, fold as u64);
        run_fold(train_faces, &test_faces, bank, cfg, variant, seed, registry).map(|(_, o)| o)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    #[derive(Serialize)]
    struct DigestInput<'a> {
        config: &'a RunConfig,
        variant: Variant,
        k: usize,
        class_names: &'a [String],
    }
    let digest = hex_digest(&serde_json::to_vec(&DigestInput {
        config: cfg,
        variant,
        k,
        class_names: &manifest.class_names,
    })?);
    EvalReport::from_folds(&outcomes, manifest.class_names.clone(), variant, digest)
}

/// Full-pipeline cross-validation.
pub fn cross_validate(manifest: &DatasetManifest, bank: &MaskBank, cfg: &RunConfig, k: usize) -> Result<EvalReport> {
    run_ablation(manifest, bank, cfg, Variant::Full, k)
}

pub fn run_ablation(
    manifest: &DatasetManifest,
    bank: &MaskBank,
    cfg: &RunConfig,
    variant: Variant,
    k: usize,
) -> Result<EvalReport> {
    evaluate(manifest, bank, cfg, variant, k, &BackboneRegistry::default())
}

/// Trains on `target` with masks borrowed from another corpus. `class_map`
/// sends target class names to bank class names; unlisted names must match
/// exactly. Stage 1 is skipped.
pub fn transfer_masks(
    source_bank: &MaskBank,
    target: &DatasetManifest,
    cfg: &RunConfig,
    class_map: &HashMap<String, String>,
    k: usize,
) -> Result<EvalReport> {
    let bank = source_bank.remap(&target.class_names, class_map)?;
    let cfg = RunConfig {
        pretrain_fmg: false,
        ..cfg.clone()
    };
    run_ablation(target, &bank, &cfg, Variant::Full, k)
}
