mod common;

use common::{random_mask, random_tensor};
use dscnn::loss::{total_objective, SupervisionWeights};
use dscnn::model::HeadPlacement;
use dscnn::{build_dscnn, build_unet, Error, Model, ModelKind, Tape, Tensor};

fn conv(i: usize, o: usize, k: usize) -> usize {
    o * i * k * k + o
}

/// Parameter count from the layer list, independent of the builder.
fn census(kind: ModelKind, in_ch: usize, b: usize) -> usize {
    let ds = kind == ModelKind::Dscnn;
    let widths = [b, 2 * b, 4 * b, 8 * b, 16 * b];
    let mut total = 0;
    let mut prev = in_ch;
    for &w in &widths {
        total += conv(prev, w, 3) + conv(w, w, 3);
        if ds {
            total += conv(w, w, 1);
        }
        prev = w;
    }
    for &w in widths[..4].iter().rev() {
        total += conv(prev, w, 1) + conv(2 * w, w, 3) + conv(w, w, 3);
        if ds {
            total += conv(w, w, 1);
        }
        prev = w;
    }
    total += conv(b, 1, 1);
    if ds {
        // heads on enc2..enc5 and dec1..dec4, 3x3 deconv to one channel
        for w in [2 * b, 4 * b, 8 * b, 16 * b, 8 * b, 4 * b, 2 * b, b] {
            total += conv(w, 1, 3);
        }
    }
    total
}

#[test]
fn parameter_census() {
    for b in [2, 4, 64] {
        assert_eq!(build_unet(1, b, 0).unwrap().params.numel(), census(ModelKind::Unet, 1, b));
        assert_eq!(build_dscnn(1, b, 0).unwrap().params.numel(), census(ModelKind::Dscnn, 1, b));
    }
    assert_eq!(census(ModelKind::Unet, 1, 64), 28_941_633);
    assert_eq!(census(ModelKind::Dscnn, 1, 64), 30_715_401);
}

#[test]
fn full_width_channel_schedule() {
    let m = build_dscnn(1, 64, 0).unwrap();
    let widths: Vec<usize> = m.net.stages.iter().map(|s| s.spec.out_ch).collect();
    assert_eq!(widths, vec![64, 128, 256, 512, 1024, 512, 256, 128, 64]);
    for s in &m.net.stages[5..] {
        let partner = &m.net.stages[s.spec.skip_source.unwrap() - 1];
        assert_eq!(s.spec.concat_channels(), partner.spec.out_ch + s.spec.out_ch);
    }
    let mut tape = Tape::with_params(&m.params);
    let x = tape.leaf(random_tensor([1, 1, 16, 16], 0), false);
    let out = m.net.forward(&mut tape, x).unwrap();
    assert_eq!(tape.shape(out.stages[3]).dims(), [1, 512, 2, 2]);
    assert_eq!(tape.shape(out.stages[4]).dims(), [1, 1024, 1, 1]);
}

#[test]
fn outputs_are_full_resolution_probabilities() {
    for kind in [ModelKind::Dscnn, ModelKind::Unet] {
        let m = Model::new(kind, 1, 4, 3).unwrap();
        let outs = m.predict(&random_tensor([1, 1, 64, 64], 1)).unwrap();
        assert_eq!(outs.len(), if kind == ModelKind::Dscnn { 9 } else { 1 });
        for o in &outs {
            assert_eq!(o.shape().dims(), [1, 1, 64, 64]);
            assert!(o.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert_eq!(outs, m.predict(&random_tensor([1, 1, 64, 64], 1)).unwrap());
    }
    let heads = build_dscnn(1, 2, 0).unwrap().net.heads;
    assert_eq!(heads[3].spec.upsample_factor, 16);
    assert_eq!(heads.iter().map(|h| h.spec.upsample_factor).collect::<Vec<_>>(), vec![2, 4, 8, 16, 8, 4, 2, 1]);
}

#[test]
fn invalid_inputs() {
    let m = build_unet(1, 2, 0).unwrap();
    assert!(matches!(m.predict(&Tensor::zeros([1, 1, 60, 60]).unwrap()), Err(Error::Dimension(_))));
    assert!(matches!(m.predict(&Tensor::zeros([1, 2, 16, 16]).unwrap()), Err(Error::Dimension(_))));
}

#[test]
fn zero_weights_give_one_half() {
    let mut m = build_dscnn(1, 2, 0).unwrap();
    m.params.zero_values();
    for o in m.predict(&random_tensor([1, 1, 32, 32], 2)).unwrap() {
        assert!(o.data().iter().all(|&v| v == 0.5));
    }
}

#[test]
fn every_head_receives_gradient() {
    let m = build_dscnn(1, 4, 5).unwrap();
    let mut tape = Tape::with_params(&m.params);
    let x = tape.leaf(random_tensor([1, 1, 32, 32], 6).map(|v| v.abs()), false);
    let y = tape.leaf(random_mask([1, 1, 32, 32], 0.2, 7), false);
    let out = m.net.forward(&mut tape, x).unwrap();
    let w = SupervisionWeights::uniform(8);
    let obj = total_objective(&mut tape, out.main, &out.heads, y, &w).unwrap();
    let g = tape.backward(obj.total).unwrap();
    for h in &m.net.heads {
        let gw = g.param(h.deconv.weight).unwrap();
        assert!(gw.iter().any(|&v| v != 0.0), "{} has no gradient", h.spec.attach);
    }
}

/// With every alpha zero, trunk gradients equal those of the main loss alone
/// and the heads get nothing.
#[test]
fn zero_alpha_reduces_to_main_loss() {
    let m = build_dscnn(1, 4, 8).unwrap();
    let img = random_tensor([1, 1, 32, 32], 9).map(|v| v.abs());
    let mask = random_mask([1, 1, 32, 32], 0.2, 10);
    let grads = |full: bool| {
        let mut tape = Tape::with_params(&m.params);
        let x = tape.leaf(img.clone(), false);
        let y = tape.leaf(mask.clone(), false);
        let out = m.net.forward(&mut tape, x).unwrap();
        let loss = if full {
            let w = SupervisionWeights::new(vec![0.0; 8], 1.0).unwrap();
            total_objective(&mut tape, out.main, &out.heads, y, &w).unwrap().total
        } else {
            tape.soft_dice(out.main, y).unwrap()
        };
        tape.backward(loss).unwrap()
    };
    let (a, b) = (grads(true), grads(false));
    let head_params: Vec<_> = m.net.heads.iter().flat_map(|h| [h.deconv.weight, h.deconv.bias]).collect();
    for id in m.params.ids() {
        let ga = a.param(id).map(<[f64]>::to_vec).unwrap_or_default();
        if head_params.contains(&id) {
            assert!(ga.iter().all(|&v| v == 0.0));
            continue;
        }
        let gb = b.param(id).unwrap();
        for (x, y) in ga.iter().zip(gb) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn custom_placement_round_trips_through_checkpoint() {
    let placement = HeadPlacement {
        stages: vec![dscnn::model::StageRef::encoder(3), dscnn::model::StageRef::decoder(4)],
    };
    let m = Model::with_placement(ModelKind::Dscnn, 1, 2, &placement, 1).unwrap();
    assert_eq!(m.net.head_count(), 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.dsnc");
    dscnn::checkpoint::save(&p, &m, None).unwrap();
    let back = dscnn::checkpoint::load(&p).unwrap();
    assert_eq!(back.model, m);
    assert!(back.optimizer.is_none());
}
