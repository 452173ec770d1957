use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneDescriptor, BackboneRegistry, Checkpoint, Fmg, FmgArch, NamedState, Pfn};
use crate::error::{FmpnError, Result};
use crate::nn::{Mode, ParamInit, Tensor};
use crate::seed::{derive_seed, rng};

/// Architecture of the whole mask-fusion-classifier pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub fmg: FmgArch,
    pub backbone: BackboneDescriptor,
}

impl ModelSpec {
    pub fn desk(input_size: usize, num_classes: usize) -> Self {
        ModelSpec {
            fmg: FmgArch::desk(),
            backbone: BackboneDescriptor::tiny(input_size, num_classes),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FmpnModel {
    pub spec: ModelSpec,
    pub fmg: Fmg,
    pub pfn: Pfn,
    pub cn: Box<dyn Backbone>,
    /// Number of mask-generator forward passes run through this model.
    pub fmg_calls: u64,
}

impl FmpnModel {
    /// Random mask generator and backbone from `seed`, pass-through fusion.
    pub fn init(spec: &ModelSpec, seed: u64, registry: &BackboneRegistry) -> Result<Self> {
        let mut r = rng(seed, 0xF316);
        let fmg = Fmg::new(spec.fmg, &mut ParamInit { rng: &mut r });
        let cn = registry.build(&spec.backbone, derive_seed(seed, 0xC0DE))?;
        Ok(FmpnModel {
            spec: spec.clone(),
            fmg,
            pfn: Pfn::pass_through(),
            cn,
            fmg_calls: 0,
        })
    }

    /// Replaces backbone weights with the `cn.*` tensors of a checkpoint.
    pub fn load_pretrained_backbone(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.header.spec.backbone != self.spec.backbone {
            return Err(FmpnError::Load(format!(
                "checkpoint backbone {:?} does not match {:?}",
                ckpt.header.spec.backbone, self.spec.backbone
            )));
        }
        ckpt.restore(self.cn.as_mut())
    }

    pub fn zero_grad(&mut self) {
        self.fmg.zero_grad();
        self.pfn.zero_grad();
        self.cn.zero_grad();
    }

    /// Evaluation-mode logits. With `use_fmg` false the backbone sees the
    /// aligned RGB face directly.
    pub fn logits(&mut self, gray: &Tensor, rgb: &Tensor, use_fmg: bool) -> Result<Tensor> {
        let input = if use_fmg {
            self.fmg_calls += 1;
            let (mask, _) = self.fmg.forward(gray, Mode::Eval)?;
            self.pfn.fuse(rgb, gray, &mask)?.0
        } else {
            rgb.clone()
        };
        Ok(self.cn.forward(&input, Mode::Eval)?.0)
    }

    pub fn mask(&mut self, gray: &Tensor) -> Result<Tensor> {
        self.fmg_calls += 1;
        Ok(self.fmg.forward(gray, Mode::Eval)?.0)
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: usize) -> Checkpoint {
        let mut ckpt = Checkpoint::new(self.spec.clone(), seed, epoch);
        ckpt.capture(&self.fmg);
        ckpt.capture(&self.pfn);
        ckpt.capture(self.cn.as_ref());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, registry: &BackboneRegistry) -> Result<Self> {
        let mut model = FmpnModel::init(&ckpt.header.spec, ckpt.header.seed, registry)?;
        ckpt.restore(&mut model.fmg)?;
        ckpt.restore(&mut model.pfn)?;
        ckpt.restore(model.cn.as_mut())?;
        Ok(model)
    }
}
