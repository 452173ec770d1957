//! Classification backbones behind a small object-safe interface, resolved
//! by name from a registry.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::{bn_buffers, bn_buffers_mut, NamedState};
use crate::error::{FmpnError, Result};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm2d, Conv2d, Linear, Mode, Param,
    ParamInit, Tensor,
};
use crate::seed::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneDescriptor {
    /// Registry key.
    pub name: String,
    /// Square input side in pixels.
    pub input_size: usize,
    pub num_classes: usize,
    /// Backbone-specific channel widths.
    #[serde(default)]
    pub widths: Vec<usize>,
}

impl BackboneDescriptor {
    pub fn tiny(input_size: usize, num_classes: usize) -> Self {
        BackboneDescriptor {
            name: "tiny".into(),
            input_size,
            num_classes,
            widths: vec![16, 32, 64],
        }
    }
}

pub type BackboneCache = Box<dyn Any + Send>;

/// An image classifier mapping `(B, 3, S, S)` to `(B, K, 1, 1)` logits.
pub trait Backbone: NamedState + Debug + Send + Sync {
    fn descriptor(&self) -> &BackboneDescriptor;

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BackboneCache)>;

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    fn backward(&mut self, cache: BackboneCache, dlogits: &Tensor) -> Tensor;

    fn box_clone(&self) -> Box<dyn Backbone>;
}

impl Clone for Box<dyn Backbone> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub type BackboneFactory = fn(&BackboneDescriptor, u64) -> Result<Box<dyn Backbone>>;

#[derive(Debug, Clone)]
pub struct BackboneRegistry {
    factories: BTreeMap<String, BackboneFactory>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut r = BackboneRegistry {
            factories: BTreeMap::new(),
        };
        r.register("tiny", |d, seed| Ok(Box::new(TinyBackbone::new(d.clone(), seed)?)));
        r
    }
}

impl BackboneRegistry {
    pub fn register(&mut self, name: &str, factory: BackboneFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, descriptor: &BackboneDescriptor, seed: u64) -> Result<Box<dyn Backbone>> {
        let factory = self
            .factories
            .get(&descriptor.name)
            .ok_or_else(|| FmpnError::Config(format!("unknown backbone \"{}\"", descriptor.name)))?;
        factory(descriptor, seed)
    }
}

/// Stride-2 conv/BN/ReLU blocks, global average pooling and a linear head.
#[derive(Debug, Clone)]
pub struct TinyBackbone {
    descriptor: BackboneDescriptor,
    convs: Vec<Conv2d>,
    norms: Vec<BatchNorm2d>,
    head: Linear,
}

struct TinyCache {
    convs: Vec<crate::nn::conv::ConvCache>,
    norms: Vec<crate::nn::norm::BatchNormCache>,
    acts: Vec<Tensor>,
    pooled: Vec<f64>,
}

impl TinyBackbone {
    pub fn new(descriptor: BackboneDescriptor, seed: u64) -> Result<Self> {
        if descriptor.widths.is_empty() || descriptor.num_classes < 2 || descriptor.input_size == 0 {
            return Err(FmpnError::Config(format!("invalid tiny backbone {descriptor:?}")));
        }
        let mut r = rng(seed, 0xC1A5);
        let mut init = ParamInit { rng: &mut r };
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut prev = 3;
        for (i, &w) in descriptor.widths.iter().enumerate() {
            convs.push(Conv2d::new(&format!("cn.block{i}.conv"), prev, w, 3, 2, 1, false, &mut init));
            norms.push(BatchNorm2d::new(&format!("cn.block{i}.bn"), w));
            prev = w;
        }
        let head = Linear::new("cn.head", prev, descriptor.num_classes, &mut init);
        Ok(TinyBackbone {
            descriptor,
            convs,
            norms,
            head,
        })
    }
}

impl Backbone for TinyBackbone {
    fn descriptor(&self) -> &BackboneDescriptor {
        &self.descriptor
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BackboneCache)> {
        let s = self.descriptor.input_size;
        if x.shape[1] != 3 || x.shape[2] != s || x.shape[3] != s {
            return Err(FmpnError::Shape(format!(
                "backbone expects (B, 3, {s}, {s}), got {:?}",
                x.shape
            )));
        }
        let mut cache = TinyCache {
            convs: Vec::new(),
            norms: Vec::new(),
            acts: Vec::new(),
            pooled: Vec::new(),
        };
        let mut h = x.clone();
        for (conv, bn) in self.convs.iter().zip(self.norms.iter_mut()) {
            let (y, cc) = conv.forward(&h);
            let (mut a, nc) = bn.forward(&y, mode);
            relu(&mut a);
            cache.convs.push(cc);
            cache.norms.push(nc);
            cache.acts.push(a.clone());
            h = a;
        }
        let pooled = global_avg_pool(&h);
        let n = x.batch();
        let logits = self.head.forward(&pooled.data, n);
        cache.pooled = pooled.data;
        Ok((
            Tensor::from_vec([n, self.descriptor.num_classes, 1, 1], logits),
            Box::new(cache),
        ))
    }

    fn backward(&mut self, cache: BackboneCache, dlogits: &Tensor) -> Tensor {
        let cache = cache.downcast::<TinyCache>().expect("cache produced by TinyBackbone::forward");
        let n = dlogits.batch();
        let dpooled = self.head.backward(&cache.pooled, &dlogits.data, n);
        let last = cache.acts.last().expect("at least one block");
        let mut d = global_avg_pool_backward(
            &Tensor::from_vec([n, last.shape[1], 1, 1], dpooled),
            last.shape,
        );
        for i in (0..self.convs.len()).rev() {
            relu_backward(&cache.acts[i], &mut d);
            let dn = self.norms[i].backward(&cache.norms[i], &d);
            d = self.convs[i].backward(&cache.convs[i], &dn);
        }
        d
    }

    fn box_clone(&self) -> Box<dyn Backbone> {
        Box::new(self.clone())
    }
}

impl NamedState for TinyBackbone {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for (c, b) in self.convs.iter().zip(&self.norms) {
            v.extend(c.params());
            v.extend(b.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for (c, b) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            v.extend(c.params_mut());
            v.extend(b.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        self.norms.iter().flat_map(bn_buffers).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        self.norms.iter_mut().flat_map(bn_buffers_mut).collect()
    }
}
