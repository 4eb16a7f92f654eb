use fedunet::autodiff::{Tape, Tensor};
use fedunet::models::{backbone_names, backbone_preset, CompositeModel, Fusion, UNetSpec, UNET_PRESETS};

const INPUT: [usize; 3] = [3, 16, 16];

fn images(n: usize) -> Tensor {
    let len = n * INPUT.iter().product::<usize>();
    Tensor::new(
        vec![n, INPUT[0], INPUT[1], INPUT[2]],
        (0..len).map(|i| ((i * 37) % 101) as f32 / 101.0).collect(),
    )
    .unwrap()
}

#[test]
fn every_backbone_and_variant_composes() {
    for (variant, _, _) in UNET_PRESETS {
        let unet = UNetSpec::preset(variant, 16, Fusion::Add).unwrap();
        let mut bottleneck_len = None;
        for name in backbone_names() {
            let spec = backbone_preset(name, INPUT, 5).unwrap();
            let (model, store) = CompositeModel::build(&spec, &unet, 1, 2).unwrap();
            let logits = model.logits(&store, images(2)).unwrap();
            assert_eq!(logits.shape(), &[2, 5], "{variant}/{name}");
            assert!(logits.is_finite());

            let tagged: usize = store
                .iter()
                .filter(|(n, _)| store.is_bottleneck(n))
                .map(|(n, t)| {
                    assert!(n.starts_with("unet.bottleneck."), "{n}");
                    t.numel()
                })
                .sum();
            assert_eq!(tagged, store.count_bottleneck());
            assert_eq!(
                store.count_params(),
                store.count_prefixed("backbone.") + store.count_prefixed("unet.") + store.count_prefixed("classifier.")
            );
            // the shared slice must not depend on the backbone
            assert_eq!(*bottleneck_len.get_or_insert(tagged), tagged, "{variant}/{name}");
        }
    }
}

#[test]
fn shared_seed_fixes_bottleneck_only() {
    let unet = UNetSpec::preset("compact", 32, Fusion::Add).unwrap();
    let a_spec = backbone_preset("plain-s2", INPUT, 4).unwrap();
    let b_spec = backbone_preset("residual-s3", INPUT, 4).unwrap();
    let (_, a) = CompositeModel::build(&a_spec, &unet, 10, 99).unwrap();
    let (_, b) = CompositeModel::build(&b_spec, &unet, 11, 99).unwrap();
    assert_eq!(a.extract_bottleneck(), b.extract_bottleneck());
    let enc = "unet.enc0.conv1.weight";
    assert_ne!(a.get(enc).unwrap().data(), b.get(enc).unwrap().data());
    let (_, a2) = CompositeModel::build(&a_spec, &unet, 10, 99).unwrap();
    assert_eq!(a.extract_all(), a2.extract_all());
}

#[test]
fn zero_adapter_reduces_to_backbone() {
    let unet = UNetSpec::preset("compact", 16, Fusion::Add).unwrap();
    for name in ["plain-s3", "residual-s2"] {
        let spec = backbone_preset(name, INPUT, 3).unwrap();
        let (model, mut store) = CompositeModel::build(&spec, &unet, 3, 4).unwrap();
        model.zero_adapter(&mut store);
        let full = model.logits(&store, images(3)).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.leaf(images(3));
        let y = model.forward_backbone_only(&mut tape, &bound, x).unwrap();
        assert_eq!(full.data(), tape.data(y));
    }
}

#[test]
fn concat_fusion_widens_classifier() {
    let spec = backbone_preset("plain-s2", INPUT, 3).unwrap();
    let add = UNetSpec::preset("shallow", 8, Fusion::Add).unwrap();
    let cat = UNetSpec {
        fusion: Fusion::Concat,
        ..add.clone()
    };
    let (ma, _) = CompositeModel::build(&spec, &add, 0, 0).unwrap();
    let (mc, sc) = CompositeModel::build(&spec, &cat, 0, 0).unwrap();
    assert_eq!(mc.joint_channels(), 2 * ma.joint_channels());
    assert_eq!(mc.classifier_input_dim(), 2 * ma.classifier_input_dim());
    assert_eq!(mc.logits(&sc, images(1)).unwrap().shape(), &[1, 3]);
}

#[test]
fn one_training_step_touches_every_parameter() {
    let spec = backbone_preset("residual-s2", INPUT, 4).unwrap();
    let unet = UNetSpec::preset("compact", 8, Fusion::Add).unwrap();
    let (model, mut store) = CompositeModel::build(&spec, &unet, 5, 6).unwrap();
    let loss = model
        .accumulate_batch_grads(&mut store, images(4), &[0, 1, 2, 3])
        .unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    for (name, t) in store.iter() {
        let g = t.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
        assert_eq!(g.len(), t.numel());
    }
}
