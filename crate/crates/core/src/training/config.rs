use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::schedule::StageSchedule;
use crate::dataset::AugmentPolicy;
use crate::error::{FmpnError, Result};

/// Which parts of the pipeline are trained and used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Mask generator supervised by the motion masks, fusion and classifier.
    #[serde(rename = "full")]
    Full,
    /// Same architecture without mask supervision (`lambda1 = 0`, no stage 1).
    #[serde(rename = "no_lG")]
    NoMaskLoss,
    /// Classifier alone on the aligned RGB face.
    #[serde(rename = "baseline_cnn")]
    BaselineCnn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoMaskLoss, Variant::BaselineCnn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMaskLoss => "no_lG",
            Variant::BaselineCnn => "baseline_cnn",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FmpnError::Config(format!("unknown variant \"{s}\"")))
    }

    pub fn uses_fmg(self) -> bool {
        self != Variant::BaselineCnn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr_fmg_stage1: f64,
    pub lr_fmg_stage2: f64,
    pub lr_rest: f64,
    pub decay_start_stage1: usize,
    pub decay_start_stage2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global-norm gradient clipping per parameter group; off when `None`.
    pub grad_clip: Option<f64>,
    /// Keep the mask generator fixed (evaluation-mode normalization, no updates) in stage 2.
    pub freeze_fmg: bool,
    pub augment: AugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 10.0,
            lambda2: 1.0,
            stage1_epochs: 300,
            stage2_epochs: 200,
            lr_fmg_stage1: 1e-4,
            lr_fmg_stage2: 1e-5,
            lr_rest: 1e-4,
            decay_start_stage1: 150,
            decay_start_stage2: 100,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
            grad_clip: None,
            freeze_fmg: false,
            augment: AugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    /// Short schedule for 64-pixel synthetic corpora on one CPU core.
    ///
    /// Keeps the loss weights and the 10:1 stage-2 ratio between the
    /// classifier and mask-generator learning rates, with fewer epochs and
    /// proportionally larger steps.
    pub fn desk() -> Self {
        TrainConfig {
            stage1_epochs: 5,
            stage2_epochs: 10,
            lr_fmg_stage1: 3e-3,
            lr_fmg_stage2: 3e-4,
            lr_rest: 3e-3,
            decay_start_stage1: 2,
            decay_start_stage2: 5,
            augment: AugmentPolicy {
                crop_size: 56,
                flip_probability: 0.5,
                random_crop: true,
            },
            ..TrainConfig::default()
        }
    }

    /// Full check for user-supplied configurations: learning rates must be positive.
    pub fn validate(&self) -> Result<()> {
        self.check(false)
    }

    /// Check applied by the training loops, which also accept zero learning rates.
    pub fn validate_for_training(&self) -> Result<()> {
        self.check(true)
    }

    fn check(&self, allow_zero_lr: bool) -> Result<()> {
        let bad = |m: String| Err(FmpnError::Config(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("loss weights must be non-negative: {} {}", self.lambda1, self.lambda2));
        }
        for (name, lr) in [
            ("lr_fmg_stage1", self.lr_fmg_stage1),
            ("lr_fmg_stage2", self.lr_fmg_stage2),
            ("lr_rest", self.lr_rest),
        ] {
            if !((lr > 0.0 || (allow_zero_lr && lr == 0.0)) && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, start, len) in [
            ("stage 1", self.decay_start_stage1, self.stage1_epochs),
            ("stage 2", self.decay_start_stage2, self.stage2_epochs),
        ] {
            if len > 0 && start >= len {
                return bad(format!("{name} decay starts at {start} but the stage has {len} epochs"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn stage1_schedule(&self) -> StageSchedule {
        StageSchedule {
            base_lr: self.lr_fmg_stage1,
            total_epochs: self.stage1_epochs,
            decay_start: self.decay_start_stage1,
        }
    }

    pub fn stage2_fmg_schedule(&self) -> StageSchedule {
        StageSchedule {
            base_lr: self.lr_fmg_stage2,
            total_epochs: self.stage2_epochs,
            decay_start: self.decay_start_stage2,
        }
    }

    pub fn stage2_rest_schedule(&self) -> StageSchedule {
        StageSchedule {
            base_lr: self.lr_rest,
            ..self.stage2_fmg_schedule()
        }
    }
}
