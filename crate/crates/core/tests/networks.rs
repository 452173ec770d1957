use fmpn_core::networks::{
    Backbone, BackboneDescriptor, BackboneRegistry, Checkpoint, Fmg, FmgArch, FmpnModel, ModelSpec, NamedState, Pfn,
    TinyBackbone,
};
use fmpn_core::nn::{Mode, ParamInit, Tensor};
use fmpn_core::seed::rng;
use fmpn_core::training::{argmax, classification_loss_grad, mask_loss, mask_loss_grad, Adam, AdamConfig};
use rand::Rng;

fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut r = rng(seed, 9);
    Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| r.random::<f64>()).collect())
}

#[test]
fn fmg_overfits_one_mask() {
    let mut r = rng(1, 0);
    let mut fmg = Fmg::new(FmgArch::desk(), &mut ParamInit { rng: &mut r });
    let gray = random_tensor([1, 1, 32, 32], 2);
    let target = Tensor::from_vec(
        [1, 1, 32, 32],
        (0..32 * 32)
            .map(|i| {
                let (x, y) = ((i % 32) as f64, (i / 32) as f64);
                0.1 + 0.8 * (-((x - 16.0).powi(2) + (y - 22.0).powi(2)) / 40.0).exp()
            })
            .collect(),
    );
    let mut adam = Adam::new(AdamConfig::default());
    let mut last = f64::INFINITY;
    for _ in 0..500 {
        fmg.zero_grad();
        let (mask, cache) = fmg.forward(&gray, Mode::Train).unwrap();
        last = mask_loss(&mask, &target).unwrap();
        fmg.backward(&cache, &mask_loss_grad(&mask, &target).unwrap());
        adam.step(fmg.params_mut(), 3e-3);
    }
    let (mask, _) = fmg.forward(&gray, Mode::Train).unwrap();
    let mse = mask_loss(&mask, &target).unwrap();
    assert!(mse < 1e-3, "mse {mse} (last step {last})");
}

#[test]
fn fusion_matches_a_scalar_loop() {
    let mut r = rng(3, 0);
    let mut pfn = Pfn::pass_through();
    for p in pfn.params_mut() {
        for v in &mut p.value {
            *v = r.random_range(-1.0..1.0);
        }
    }
    let rgb = random_tensor([2, 3, 2, 2], 4);
    let gray = random_tensor([2, 1, 2, 2], 5);
    let mask = random_tensor([2, 1, 2, 2], 6);
    let (out, _) = pfn.fuse(&rgb, &gray, &mask).unwrap();
    let (hw, hb) = (&pfn.holistic_weight.value, &pfn.holistic_bias.value);
    let (mw, mb) = (&pfn.masked_weight.value, &pfn.masked_bias.value);
    for n in 0..2 {
        for o in 0..3 {
            for px in 0..4 {
                let mut v = hb[o] + mb[o];
                for i in 0..3 {
                    v += hw[o * 3 + i] * rgb.data[(n * 3 + i) * 4 + px];
                }
                v += mw[o] * gray.data[n * 4 + px] * mask.data[n * 4 + px];
                assert!((out.data[(n * 3 + o) * 4 + px] - v).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn fresh_fusion_adds_gray_under_a_unit_mask() {
    let rgb = random_tensor([1, 3, 4, 4], 7);
    let gray = random_tensor([1, 1, 4, 4], 8);
    let ones = Tensor::from_vec([1, 1, 4, 4], vec![1.0; 16]);
    let (out, _) = Pfn::pass_through().fuse(&rgb, &gray, &ones).unwrap();
    for c in 0..3 {
        for px in 0..16 {
            assert_eq!(out.data[c * 16 + px], rgb.data[c * 16 + px] + gray.data[px]);
        }
    }
}

#[test]
fn tiny_backbone_overfits_eight_samples() {
    let descriptor = BackboneDescriptor {
        name: "tiny".into(),
        input_size: 16,
        num_classes: 4,
        widths: vec![8, 16],
    };
    let mut cn = TinyBackbone::new(descriptor, 11).unwrap();
    let x = random_tensor([8, 3, 16, 16], 12);
    let labels = [0, 1, 2, 3, 0, 1, 2, 3];
    let mut adam = Adam::new(AdamConfig::default());
    let mut solved_at = None;
    for step in 0..300 {
        cn.zero_grad();
        let (logits, cache) = cn.forward(&x, Mode::Train).unwrap();
        let correct = (0..8).filter(|&i| argmax(logits.item(i)) == labels[i]).count();
        if correct == 8 {
            solved_at = Some(step);
            break;
        }
        cn.backward(cache, &classification_loss_grad(&logits, &labels).unwrap());
        adam.step(cn.params_mut(), 1e-2);
    }
    assert!(solved_at.is_some(), "not separated within 300 steps");
}

#[test]
fn equal_seeds_give_identical_parameters() {
    let spec = ModelSpec::desk(56, 7);
    let registry = BackboneRegistry::default();
    let a = FmpnModel::init(&spec, 42, &registry).unwrap();
    let b = FmpnModel::init(&spec, 42, &registry).unwrap();
    let c = FmpnModel::init(&spec, 43, &registry).unwrap();
    let bits = |m: &FmpnModel| -> Vec<u64> {
        let mut v: Vec<u64> = Vec::new();
        for p in m.fmg.params().into_iter().chain(m.pfn.params()).chain(m.cn.params()) {
            v.extend(p.value.iter().map(|x| x.to_bits()));
        }
        v
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let registry = BackboneRegistry::default();
    let mut model = FmpnModel::init(&ModelSpec::desk(32, 3), 5, &registry).unwrap();
    let gray = random_tensor([2, 1, 32, 32], 1);
    let rgb = random_tensor([2, 3, 32, 32], 2);
    // Touch the normalization statistics so buffers are not at their defaults.
    model.fmg.forward(&gray, Mode::Train).unwrap();
    let path = dir.path().join("model.ckpt");
    model.to_checkpoint(5, 9).save(&path).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt.header.epoch, 9);
    let mut restored = FmpnModel::from_checkpoint(&ckpt, &registry).unwrap();
    let a = model.logits(&gray, &rgb, true).unwrap();
    let b = restored.logits(&gray, &rgb, true).unwrap();
    assert_eq!(a.data, b.data);

    let mut other = FmpnModel::init(&ModelSpec::desk(32, 3), 6, &registry).unwrap();
    other.load_pretrained_backbone(&ckpt).unwrap();
    assert_eq!(
        other.cn.params()[0].value,
        model.cn.params()[0].value,
        "backbone weights come from the checkpoint"
    );
    let mut wrong = FmpnModel::init(&ModelSpec::desk(32, 4), 6, &registry).unwrap();
    assert!(wrong.load_pretrained_backbone(&ckpt).is_err());
}
