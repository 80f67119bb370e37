mod common;

use common::{layer_suite, random_tensor, rng};
use dscnn::gradcheck::{finite_diff_check, GradCheckOptions, Objective};
use dscnn::layers::{ConcatJunction, Conv2dLayer, DeconvLayer, MaxPoolLayer, UpsampleLayer};
use dscnn::{Element, Error, ParamStore, Result, Tape, Tensor, Var};

#[test]
fn every_layer_matches_finite_differences() {
    for case in layer_suite() {
        let report = case.check(&GradCheckOptions::default());
        assert!(report.passed, "{}: {:?}", case.name, report.worst(3));
        assert!(report.skipped() * 50 <= report.checked(), "{}: too many kinks", case.name);
    }
}

#[test]
fn single_pointwise_conv_with_soft_dice() {
    struct DiceProbe {
        conv: Conv2dLayer,
        image: Tensor<f32>,
        mask: Tensor<f32>,
    }
    impl Objective for DiceProbe {
        fn record<E: Element>(&self, tape: &mut Tape<'_, E>) -> Result<Var> {
            let x = tape.leaf(self.image.cast(), false);
            let y = self.conv.forward(tape, x)?;
            let p = tape.sigmoid(y);
            let q = tape.leaf(self.mask.cast(), false);
            tape.soft_dice(p, q)
        }
    }
    let mut s = ParamStore::<f32>::new();
    let conv = Conv2dLayer::new(&mut s, "c", 1, 1, 1, &mut rng(3)).unwrap();
    let obj = DiceProbe {
        conv,
        image: random_tensor([1, 1, 4, 4], 4),
        mask: common::random_mask([1, 1, 4, 4], 0.5, 5),
    };
    let r = finite_diff_check(&obj, &s, &GradCheckOptions::default()).unwrap();
    assert!(r.passed && r.max_rel_error() < 1e-3, "{:?}", r.params);
}

fn conv_value(store: &ParamStore<f32>, conv: &Conv2dLayer, x: &Tensor<f32>) -> Tensor<f32> {
    let mut tape = Tape::with_params(store);
    let v = tape.leaf(x.clone(), false);
    let y = conv.forward(&mut tape, v).unwrap();
    tape.value(y).clone()
}

#[test]
fn conv_examples() {
    let mut s = ParamStore::<f32>::new();
    let conv = Conv2dLayer::new(&mut s, "c", 1, 1, 1, &mut rng(0)).unwrap();
    s.get_mut(conv.weight).value.data_mut()[0] = 1.0;
    let x = random_tensor([1, 1, 5, 5], 1);
    assert_eq!(conv_value(&s, &conv, &x), x);

    let mut s = ParamStore::<f32>::new();
    let conv = Conv2dLayer::new(&mut s, "c", 1, 1, 3, &mut rng(0)).unwrap();
    s.get_mut(conv.weight).value.data_mut().fill(0.0);
    s.get_mut(conv.bias).value.data_mut()[0] = 0.75;
    let y = conv_value(&s, &conv, &x);
    assert!(y.data().iter().all(|&v| v == 0.75));

    // Averaging kernel on a constant image, against a direct sum.
    let c = 0.9f32;
    s.get_mut(conv.weight).value.data_mut().fill(1.0 / 9.0);
    s.get_mut(conv.bias).value.data_mut()[0] = 0.0;
    let img = Tensor::<f32>::full([1, 1, 6, 6], c).unwrap();
    let y = conv_value(&s, &conv, &img);
    for yy in 0..6i32 {
        for xx in 0..6i32 {
            let mut covered = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (0..6).contains(&(yy + dy)) && (0..6).contains(&(xx + dx)) {
                        covered += 1;
                    }
                }
            }
            let want = c as f64 * covered as f64 / 9.0;
            assert!((y.at(0, 0, yy as usize, xx as usize) as f64 - want).abs() < 1e-6);
        }
    }
    assert!((y.at(0, 0, 0, 0) as f64 - 4.0 * c as f64 / 9.0).abs() < 1e-6);
    assert!((y.at(0, 0, 3, 3) - c).abs() < 1e-6);
}

#[test]
fn conv_channel_mismatch() {
    let mut s = ParamStore::<f32>::new();
    let conv = Conv2dLayer::new(&mut s, "c", 2, 1, 3, &mut rng(0)).unwrap();
    let mut tape = Tape::with_params(&s);
    let x = tape.leaf(Tensor::zeros([1, 3, 4, 4]).unwrap(), false);
    assert!(matches!(conv.forward(&mut tape, x), Err(Error::Dimension(_))));
    assert!(matches!(Conv2dLayer::new(&mut s, "d", 1, 1, 5, &mut rng(0)), Err(Error::Dimension(_))));
}

#[test]
fn repeated_identity_pointwise_is_identity() {
    let mut s = ParamStore::<f32>::new();
    let convs: Vec<Conv2dLayer> = (0..4)
        .map(|i| {
            let c = Conv2dLayer::new(&mut s, &format!("c{i}"), 3, 3, 1, &mut rng(i)).unwrap();
            c
        })
        .collect();
    for c in &convs {
        let w = &mut s.get_mut(c.weight).value;
        w.data_mut().fill(0.0);
        for i in 0..3 {
            w.set(i, i, 0, 0, 1.0);
        }
    }
    let x = random_tensor([2, 3, 4, 4], 9);
    let mut tape = Tape::with_params(&s);
    let mut v = tape.leaf(x.clone(), false);
    for c in &convs {
        v = c.forward(&mut tape, v).unwrap();
    }
    assert_eq!(tape.value(v), &x);
}

#[test]
fn deconv_examples() {
    let mut s = ParamStore::<f32>::new();
    let d = DeconvLayer::new(&mut s, "d", 1, 1, 1, 1, 0, &mut rng(0)).unwrap();
    s.get_mut(d.weight).value.data_mut()[0] = 1.0;
    let x = random_tensor([1, 1, 4, 4], 2);
    let mut tape = Tape::with_params(&s);
    let v = tape.leaf(x.clone(), false);
    let y = d.forward(&mut tape, v).unwrap();
    assert_eq!(tape.value(y), &x);

    let mut s = ParamStore::<f32>::new();
    let d = DeconvLayer::new(&mut s, "d", 1, 1, 2, 2, 0, &mut rng(0)).unwrap();
    assert_eq!(d.output_size(2), 4);
    let mut tape = Tape::with_params(&s);
    let v = tape.leaf(random_tensor([1, 1, 2, 2], 3), false);
    let y = d.forward(&mut tape, v).unwrap();
    assert_eq!(tape.shape(y).dims(), [1, 1, 4, 4]);

    let mut tape = Tape::with_params(&s);
    let v = tape.leaf(random_tensor([1, 2, 2, 2], 3), false);
    assert!(matches!(d.forward(&mut tape, v), Err(Error::Dimension(_))));
}

/// <conv(x), y> == <x, deconv(y)> with a shared kernel.
#[test]
fn deconv_is_adjoint_of_conv() {
    for (k, stride, pad, n) in [(3, 1, 1, 4), (3, 2, 1, 5), (2, 2, 0, 4), (1, 1, 0, 4)] {
        let w = random_tensor([3, 2, k, k], 11);
        let x = random_tensor([1, 2, n, n], 12);
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(x.cast(), false);
        let wv = tape.leaf(w.cast(), false);
        let cx = tape.conv2d(xv, wv, None, stride, pad).unwrap();
        let y = random_tensor(tape.shape(cx).dims(), 13);
        let yv = tape.leaf(y.cast(), false);
        // deconv weight layout is (in, out, k, k): in = conv's output channels.
        let dy = tape.deconv2d(yv, wv, None, stride, pad).unwrap();
        assert_eq!(tape.shape(dy), x.shape());
        let lhs: f64 = tape.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * *b as f64).sum();
        let rhs: f64 = tape.value(dy).data().iter().zip(x.data()).map(|(a, b)| a * *b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "k{k} s{stride}: {lhs} vs {rhs}");
    }
}

#[test]
fn pool_upsample_concat_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
    let p = MaxPoolLayer.forward(&mut tape, x).unwrap();
    assert_eq!(tape.value(p).data(), &[4.0]);
    let g = tape.backward(p).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);

    let c = tape.leaf(Tensor::full([1, 2, 4, 6], 0.3).unwrap(), false);
    let pc = MaxPoolLayer.forward(&mut tape, c).unwrap();
    assert_eq!(tape.value(pc), &Tensor::full([1, 2, 2, 3], 0.3).unwrap());
    let odd = tape.leaf(Tensor::zeros([1, 1, 3, 4]).unwrap(), false);
    assert!(matches!(MaxPoolLayer.forward(&mut tape, odd), Err(Error::Dimension(_))));

    let a = tape.leaf(Tensor::scalar(2.5), true);
    let u = UpsampleLayer::default().forward(&mut tape, a).unwrap();
    assert_eq!(tape.value(u).data(), &[2.5; 4]);
    let su = tape.sum(u);
    let g = tape.backward(su).unwrap();
    assert_eq!(g.wrt(a).unwrap(), &[4.0]);

    let a = tape.leaf(random_tensor([1, 2, 4, 4], 1), false);
    let b = tape.leaf(random_tensor([1, 3, 4, 4], 2), false);
    let cat = ConcatJunction.forward(&mut tape, a, b).unwrap();
    assert_eq!(tape.shape(cat).dims(), [1, 5, 4, 4]);
    let wrong = tape.leaf(random_tensor([1, 3, 2, 4], 2), false);
    assert!(matches!(ConcatJunction.forward(&mut tape, a, wrong), Err(Error::Dimension(_))));
}

#[test]
fn upsample_then_average_pool_is_identity() {
    let x = random_tensor([1, 2, 3, 5], 4);
    let mut tape = Tape::<f32>::new();
    let v = tape.leaf(x.clone(), false);
    let u = UpsampleLayer::default().forward(&mut tape, v).unwrap();
    let up = tape.value(u);
    for c in 0..2 {
        for y in 0..3 {
            for xx in 0..5 {
                let avg = (up.at(0, c, 2 * y, 2 * xx)
                    + up.at(0, c, 2 * y + 1, 2 * xx)
                    + up.at(0, c, 2 * y, 2 * xx + 1)
                    + up.at(0, c, 2 * y + 1, 2 * xx + 1))
                    / 4.0;
                assert_eq!(avg, x.at(0, c, y, xx));
            }
        }
    }
}
