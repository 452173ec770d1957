//! Stage 1 tunes the mask generator alone against the class masks; stage 2
//! trains generator, fusion and classifier jointly on
//! `λ₁ · l_G + λ₂ · l_C`, with separate learning rates for the generator and
//! for the rest.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_grad_norm, Adam};
use super::loss::{classification_loss, classification_loss_grad, mask_loss, mask_loss_grad, total_loss};
use super::schedule::lr_at;
use super::{TrainConfig, Variant};
use crate::dataset::{AlignedFace, View};
use crate::error::{FmpnError, Result};
use crate::maskgen::MaskBank;
use crate::networks::{FmpnModel, NamedState};
use crate::nn::{Mode, Param, Tensor};
use crate::seed::rng;

/// A mini-batch in network layout.
#[derive(Debug, Clone)]
pub struct Batch {
    pub gray: Tensor,
    pub rgb: Tensor,
    /// Class masks seen through the same crop and flip as the faces.
    pub target: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(faces: &[&AlignedFace], views: &[View], bank: &MaskBank) -> Result<Batch> {
        let (gray, rgb) = face_tensors(faces, views);
        let mut target = Tensor::zeros(gray.shape);
        for (b, (face, view)) in faces.iter().zip(views).enumerate() {
            if face.label >= bank.num_classes() {
                return Err(FmpnError::Coverage {
                    class: format!("#{}", face.label),
                });
            }
            let mask = bank.mask(face.label);
            if !mask.same_shape(&face.gray) {
                return Err(FmpnError::Shape(format!(
                    "mask {}x{} vs face {}x{}",
                    mask.width, mask.height, face.gray.width, face.gray.height
                )));
            }
            target.item_mut(b).copy_from_slice(&view.apply_gray(mask).data);
        }
        Ok(Batch {
            gray,
            rgb,
            target,
            labels: faces.iter().map(|f| f.label).collect(),
        })
    }
}

/// Gray `(B, 1, S, S)` and RGB `(B, 3, S, S)` tensors of the given views.
pub fn face_tensors(faces: &[&AlignedFace], views: &[View]) -> (Tensor, Tensor) {
    let size = views.first().map_or(0, |v| v.size);
    let n = faces.len();
    let plane = size * size;
    let mut gray = Tensor::zeros([n, 1, size, size]);
    let mut rgb = Tensor::zeros([n, 3, size, size]);
    for (b, (face, view)) in faces.iter().zip(views).enumerate() {
        let v = view.apply(face);
        gray.item_mut(b).copy_from_slice(&v.gray.data);
        let dst = rgb.item_mut(b);
        for (p, px) in v.rgb.data.chunks_exact(3).enumerate() {
            dst[p] = px[0];
            dst[plane + p] = px[1];
            dst[2 * plane + p] = px[2];
        }
    }
    (gray, rgb)
}

/// Aligned training faces with a mask bank at the same resolution.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub faces: Vec<AlignedFace>,
    pub bank: MaskBank,
}

impl TrainingSet {
    /// Resizes the bank to the faces' resolution when they differ.
    pub fn new(faces: Vec<AlignedFace>, bank: &MaskBank) -> Result<Self> {
        let size = faces.first().map_or(bank.size().0, AlignedFace::size);
        if let Some(f) = faces.iter().find(|f| f.size() != size) {
            return Err(FmpnError::Shape(format!("mixed face sizes {} and {size}", f.size())));
        }
        if let Some(f) = faces.iter().find(|f| f.label >= bank.num_classes()) {
            return Err(FmpnError::Coverage {
                class: format!("#{}", f.label),
            });
        }
        let bank = if bank.size() == (size, size) {
            bank.clone()
        } else {
            bank.resized(size)
        };
        Ok(TrainingSet { faces, bank })
    }

    fn epoch_batches(&self, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Batch>> {
        let mut order: Vec<usize> = (0..self.faces.len()).collect();
        order.shuffle(rng);
        order
            .chunks(cfg.batch_size)
            .map(|chunk| {
                let faces: Vec<&AlignedFace> = chunk.iter().map(|&i| &self.faces[i]).collect();
                let views = faces
                    .iter()
                    .map(|f| View::sample(rng, &cfg.augment, f.size()))
                    .collect::<Result<Vec<_>>>()?;
                Batch::new(&faces, &views, &self.bank)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Epoch index across both stages.
    pub epoch: usize,
    pub stage: u8,
    pub l_g: Option<f64>,
    pub l_c: Option<f64>,
    pub l_total: f64,
    pub lr_fmg: Option<f64>,
    pub lr_rest: Option<f64>,
    pub train_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lG,lC,l_total,lr_fmg,lr_rest,train_acc\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                opt(r.l_g),
                opt(r.l_c),
                r.l_total,
                opt(r.lr_fmg),
                opt(r.lr_rest),
                opt(r.train_acc)
            );
        }
        out
    }

    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }
}

/// Losses of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub l_g: Option<f64>,
    pub l_c: f64,
    pub l_total: f64,
    pub correct: usize,
}

/// Stage-1 objective on a batch, gradients accumulated into the mask generator.
pub fn stage1_gradients(model: &mut FmpnModel, batch: &Batch) -> Result<f64> {
    model.fmg_calls += 1;
    let (mask, cache) = model.fmg.forward(&batch.gray, Mode::Train)?;
    let loss = mask_loss(&mask, &batch.target)?;
    let grad = mask_loss_grad(&mask, &batch.target)?;
    model.fmg.backward(&cache, &grad);
    Ok(loss)
}

/// Joint objective on a batch with gradients accumulated into every trainable
/// part. Gradients are not zeroed first.
pub fn joint_gradients(model: &mut FmpnModel, batch: &Batch, cfg: &TrainConfig, variant: Variant) -> Result<StepStats> {
    let lambda1 = if variant == Variant::Full { cfg.lambda1 } else { 0.0 };
    let fmg_mode = if cfg.freeze_fmg { Mode::Eval } else { Mode::Train };
    let fused = if variant.uses_fmg() {
        model.fmg_calls += 1;
        let (mask, fcache) = model.fmg.forward(&batch.gray, fmg_mode)?;
        let (fused, pcache) = model.pfn.fuse(&batch.rgb, &batch.gray, &mask)?;
        Some((mask, fcache, fused, pcache))
    } else {
        None
    };
    let input = fused.as_ref().map_or(&batch.rgb, |f| &f.2);
    let (logits, ccache) = model.cn.forward(input, Mode::Train)?;
    let l_c = classification_loss(&logits, &batch.labels)?;
    let mut dlogits = classification_loss_grad(&logits, &batch.labels)?;
    dlogits.scale(cfg.lambda2);
    let correct = count_correct(&logits, &batch.labels);
    let dinput = model.cn.backward(ccache, &dlogits);

    let Some((mask, fcache, _, pcache)) = fused else {
        return Ok(StepStats {
            l_g: None,
            l_c,
            l_total: cfg.lambda2 * l_c,
            correct,
        });
    };
    let l_g = mask_loss(&mask, &batch.target)?;
    let mut dmask = model.pfn.backward(&pcache, &dinput);
    let mut dlg = mask_loss_grad(&mask, &batch.target)?;
    dlg.scale(lambda1);
    dmask.add_assign(&dlg);
    if !cfg.freeze_fmg {
        model.fmg.backward(&fcache, &dmask);
    }
    Ok(StepStats {
        l_g: Some(l_g),
        l_c,
        l_total: lambda1 * l_g + cfg.lambda2 * l_c,
        correct,
    })
}

/// Forward-only joint objective in training mode.
pub fn joint_objective(model: &mut FmpnModel, batch: &Batch, cfg: &TrainConfig, variant: Variant) -> Result<f64> {
    let lambda1 = if variant == Variant::Full { cfg.lambda1 } else { 0.0 };
    let fmg_mode = if cfg.freeze_fmg { Mode::Eval } else { Mode::Train };
    let (input, l_g) = if variant.uses_fmg() {
        let (mask, _) = model.fmg.forward(&batch.gray, fmg_mode)?;
        let l_g = mask_loss(&mask, &batch.target)?;
        (model.pfn.fuse(&batch.rgb, &batch.gray, &mask)?.0, l_g)
    } else {
        (batch.rgb.clone(), 0.0)
    };
    let (logits, _) = model.cn.forward(&input, Mode::Train)?;
    let l_c = classification_loss(&logits, &batch.labels)?;
    Ok(total_loss(l_g, l_c, &TrainConfig { lambda1, ..*cfg }))
}

pub(crate) fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape[1];
    logits
        .data
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn step_group(adam: &mut Adam, mut params: Vec<&mut Param>, lr: f64, clip: Option<f64>) {
    if let Some(max) = clip {
        clip_grad_norm(&mut params, max);
    }
    adam.step(params, lr);
}

pub type EpochHook<'a> = dyn FnMut(&FmpnModel, &EpochRecord) -> Result<()> + 'a;

/// Trains the mask generator alone for `cfg.stage1_epochs` epochs.
pub fn train_stage1(model: &mut FmpnModel, set: &TrainingSet, cfg: &TrainConfig) -> Result<History> {
    train_stage1_with(model, set, cfg, &mut |_, _| Ok(()))
}

pub fn train_stage1_with(
    model: &mut FmpnModel,
    set: &TrainingSet,
    cfg: &TrainConfig,
    hook: &mut EpochHook,
) -> Result<History> {
    cfg.validate_for_training()?;
    let schedule = cfg.stage1_schedule();
    let mut adam = Adam::new(cfg.adam);
    let mut history = History::default();
    for epoch in 0..cfg.stage1_epochs {
        let lr = lr_at(&schedule, epoch)?;
        let mut r = rng(cfg.seed, (1 << 32) | epoch as u64);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in set.epoch_batches(cfg, &mut r)? {
            model.fmg.zero_grad();
            let loss = stage1_gradients(model, &batch)?;
            step_group(&mut adam, model.fmg.params_mut(), lr, cfg.grad_clip);
            sum += loss * batch.labels.len() as f64;
            count += batch.labels.len();
        }
        let l_g = sum / count.max(1) as f64;
        let record = EpochRecord {
            epoch,
            stage: 1,
            l_g: Some(l_g),
            l_c: None,
            l_total: cfg.lambda1 * l_g,
            lr_fmg: Some(lr),
            lr_rest: None,
            train_acc: None,
        };
        hook(model, &record)?;
        history.records.push(record);
    }
    Ok(history)
}

/// Joint training for `cfg.stage2_epochs` epochs. `first_epoch` offsets the
/// recorded epoch indices.
pub fn train_joint(
    model: &mut FmpnModel,
    set: &TrainingSet,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<History> {
    train_joint_with(model, set, cfg, variant, 0, &mut |_, _| Ok(()))
}

pub fn train_joint_with(
    model: &mut FmpnModel,
    set: &TrainingSet,
    cfg: &TrainConfig,
    variant: Variant,
    first_epoch: usize,
    hook: &mut EpochHook,
) -> Result<History> {
    cfg.validate_for_training()?;
    let fmg_schedule = cfg.stage2_fmg_schedule();
    let rest_schedule = cfg.stage2_rest_schedule();
    let train_fmg = variant.uses_fmg() && !cfg.freeze_fmg;
    let mut adam_fmg = Adam::new(cfg.adam);
    let mut adam_rest = Adam::new(cfg.adam);
    let mut history = History::default();
    for epoch in 0..cfg.stage2_epochs {
        let lr_fmg = lr_at(&fmg_schedule, epoch)?;
        let lr_rest = lr_at(&rest_schedule, epoch)?;
        let mut r = rng(cfg.seed, (2 << 32) | epoch as u64);
        let (mut lg_sum, mut lc_sum, mut total_sum, mut correct, mut count) = (0.0, 0.0, 0.0, 0, 0usize);
        for batch in set.epoch_batches(cfg, &mut r)? {
            model.zero_grad();
            let stats = joint_gradients(model, &batch, cfg, variant)?;
            if train_fmg {
                step_group(&mut adam_fmg, model.fmg.params_mut(), lr_fmg, cfg.grad_clip);
            }
            let mut rest = Vec::new();
            if variant.uses_fmg() {
                rest.extend(model.pfn.params_mut());
            }
            rest.extend(model.cn.params_mut());
            step_group(&mut adam_rest, rest, lr_rest, cfg.grad_clip);

            let n = batch.labels.len();
            lg_sum += stats.l_g.unwrap_or(0.0) * n as f64;
            lc_sum += stats.l_c * n as f64;
            total_sum += stats.l_total * n as f64;
            correct += stats.correct;
            count += n;
        }
        let denom = count.max(1) as f64;
        let record = EpochRecord {
            epoch: first_epoch + epoch,
            stage: 2,
            l_g: variant.uses_fmg().then_some(lg_sum / denom),
            l_c: Some(lc_sum / denom),
            l_total: total_sum / denom,
            lr_fmg: train_fmg.then_some(lr_fmg),
            lr_rest: Some(lr_rest),
            train_acc: Some(correct as f64 / denom),
        };
        hook(model, &record)?;
        history.records.push(record);
    }
    Ok(history)
}

/// Full schedule for a variant: stage 1 only for [`Variant::Full`] and only
/// when `pretrain_fmg` is set, then joint training.
pub fn fit(
    model: &mut FmpnModel,
    set: &TrainingSet,
    cfg: &TrainConfig,
    variant: Variant,
    pretrain_fmg: bool,
    hook: &mut EpochHook,
) -> Result<History> {
    let mut history = History::default();
    if variant == Variant::Full && pretrain_fmg {
        history = train_stage1_with(model, set, cfg, hook)?;
    }
    let offset = history.records.len();
    let joint = train_joint_with(model, set, cfg, variant, offset, hook)?;
    history.records.extend(joint.records);
    Ok(history)
}
