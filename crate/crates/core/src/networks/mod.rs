//! The mask generator (FMG), the prior fusion layer (PFN) and the pluggable
//! classification backbone (CN).

mod backbone;
mod checkpoint;
mod fmg;
mod model;
mod pfn;

pub use backbone::{Backbone, BackboneCache, BackboneDescriptor, BackboneRegistry, TinyBackbone};
pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use fmg::{Fmg, FmgArch, FmgCache};
pub use model::{ModelSpec, FmpnModel};
pub use pfn::{Pfn, PfnCache};

use crate::nn::Param;

/// Access to trainable parameters and non-trainable buffers by name.
pub trait NamedState {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn buffers(&self) -> Vec<(String, &Vec<f64>)>;
    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

pub(crate) fn bn_buffers<'a>(bn: &'a crate::nn::BatchNorm2d) -> [(String, &'a Vec<f64>); 2] {
    let name = bn.gamma.name.trim_end_matches(".gamma");
    [
        (format!("{name}.running_mean"), &bn.running_mean),
        (format!("{name}.running_var"), &bn.running_var),
    ]
}

pub(crate) fn bn_buffers_mut<'a>(bn: &'a mut crate::nn::BatchNorm2d) -> [(String, &'a mut Vec<f64>); 2] {
    let name = bn.gamma.name.trim_end_matches(".gamma").to_string();
    [
        (format!("{name}.running_mean"), &mut bn.running_mean),
        (format!("{name}.running_var"), &mut bn.running_var),
    ]
}
