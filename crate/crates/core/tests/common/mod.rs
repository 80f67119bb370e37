#![allow(dead_code)]

use dscnn::data::{Dataset, SamplePair};
use dscnn::gradcheck::{finite_diff_check, randomize_biases, GradCheckOptions, GradCheckReport, Objective};
use dscnn::layers::{ConcatJunction, Conv2dLayer, DeconvLayer, MaxPoolLayer, UpsampleLayer};
use dscnn::{Element, Model, ModelKind, ParamId, ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap()
}

pub fn random_mask(shape: [usize; 4], density: f64, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| if r.random_bool(density) { 1.0 } else { 0.0 }).collect()).unwrap()
}

fn set_center(model: &mut Model, name: &str, out: usize, inp: usize, v: f32) {
    let id = model.params.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = &mut model.params.get_mut(id).value;
    let k = t.shape().height;
    t.set(out, inp, k / 2, k / 2, v);
}

/// A model whose main output is `sigmoid(20 x - 10)` of its input channel 0:
/// every parameter is zero except an identity path through the first
/// encoder stage, the skip connection and the last decoder stage.
pub fn passthrough_model(kind: ModelKind, base: usize) -> Model {
    let mut m = Model::new(kind, 1, base, 0).unwrap();
    m.params.zero_values();
    let dec4_skip_ch = 0;
    for name in ["enc1.conv1.weight", "enc1.conv2.weight", "dec4.conv2.weight"] {
        set_center(&mut m, name, 0, 0, 1.0);
    }
    set_center(&mut m, "dec4.conv1.weight", 0, dec4_skip_ch, 1.0);
    if kind == ModelKind::Dscnn {
        set_center(&mut m, "enc1.pw.weight", 0, 0, 1.0);
        set_center(&mut m, "dec4.pw.weight", 0, 0, 1.0);
    }
    set_center(&mut m, "out.weight", 0, 0, 20.0);
    let b = m.params.find("out.bias").unwrap();
    m.params.get_mut(b).value.data_mut()[0] = -10.0;
    m
}

/// Dataset whose images equal their masks.
pub fn self_masked(n: usize, size: usize, seed: u64) -> Dataset {
    let samples = (0..n)
        .map(|i| {
            let mask = random_mask([1, 1, size, size], 0.3, seed + i as u64);
            SamplePair::new(mask.clone(), mask, format!("s{i:02}"), format!("s{i:02}_0")).unwrap()
        })
        .collect();
    Dataset::new(samples)
}

#[derive(Clone)]
pub enum Layer {
    Conv(Conv2dLayer),
    Deconv(DeconvLayer),
    Relu,
    Sigmoid,
    Pool,
    Upsample(UpsampleLayer),
    Concat(ParamId),
}

/// `sum(probe * layer(x))` with `x` stored as a parameter so that
/// parameter-free layers are checked through their input gradient.
pub struct Probe {
    pub layer: Layer,
    pub input: ParamId,
    pub probe: Tensor<f32>,
}

pub fn apply<E: Element>(layer: &Layer, tape: &mut Tape<'_, E>, x: Var) -> Result<Var> {
    match layer {
        Layer::Conv(c) => c.forward(tape, x),
        Layer::Deconv(d) => d.forward(tape, x),
        Layer::Relu => Ok(tape.relu(x)),
        Layer::Sigmoid => Ok(tape.sigmoid(x)),
        Layer::Pool => MaxPoolLayer.forward(tape, x),
        Layer::Upsample(u) => u.forward(tape, x),
        Layer::Concat(other) => {
            let b = tape.param(*other)?;
            ConcatJunction.forward(tape, x, b)
        }
    }
}

impl Objective for Probe {
    fn record<E: Element>(&self, tape: &mut Tape<'_, E>) -> Result<Var> {
        let x = tape.param(self.input)?;
        let y = apply(&self.layer, tape, x)?;
        let r = tape.leaf(self.probe.cast(), false);
        let p = tape.mul(y, r)?;
        Ok(tape.sum(p))
    }
}


/// One layer wired up for a finite-difference check.
pub struct LayerCase {
    pub name: String,
    pub store: ParamStore<f32>,
    pub layer: Layer,
    pub input: ParamId,
    pub seed: u64,
}

impl LayerCase {
    pub fn check(&self, opts: &GradCheckOptions) -> GradCheckReport {
        let mut store = self.store.clone();
        randomize_biases(&mut store, 0.5, self.seed);
        let shape = {
            let mut tape = Tape::with_params(&store);
            let x = tape.param(self.input).unwrap();
            let y = apply(&self.layer, &mut tape, x).unwrap();
            tape.shape(y).dims()
        };
        let obj = Probe {
            layer: self.layer.clone(),
            input: self.input,
            probe: random_tensor(shape, self.seed + 1),
        };
        finite_diff_check(&obj, &store, opts).unwrap()
    }
}

fn case(name: &str, input: [usize; 4], seed: u64, make: impl FnOnce(&mut ParamStore<f32>) -> Layer) -> LayerCase {
    let mut store = ParamStore::new();
    let id = store.add("input", random_tensor(input, seed)).unwrap();
    let layer = make(&mut store);
    LayerCase { name: name.to_string(), store, layer, input: id, seed }
}

/// Every layer type the networks use, on small seeded inputs.
pub fn layer_suite() -> Vec<LayerCase> {
    vec![
        case("conv3x3", [2, 3, 6, 6], 1, |s| Layer::Conv(Conv2dLayer::new(s, "c", 3, 4, 3, &mut rng(1)).unwrap())),
        case("conv1x1", [2, 3, 4, 4], 2, |s| Layer::Conv(Conv2dLayer::new(s, "c", 3, 2, 1, &mut rng(2)).unwrap())),
        case("deconv3x3/s1", [1, 2, 4, 4], 3, |s| Layer::Deconv(DeconvLayer::new(s, "d", 2, 3, 3, 1, 1, &mut rng(3)).unwrap())),
        case("deconv2x2/s2", [1, 2, 4, 4], 4, |s| Layer::Deconv(DeconvLayer::new(s, "d", 2, 3, 2, 2, 0, &mut rng(4)).unwrap())),
        case("deconv3x3/s2", [1, 2, 3, 3], 5, |s| Layer::Deconv(DeconvLayer::new(s, "d", 2, 2, 3, 2, 1, &mut rng(5)).unwrap())),
        case("relu", [2, 3, 8, 8], 6, |_| Layer::Relu),
        case("sigmoid", [2, 3, 8, 8], 7, |_| Layer::Sigmoid),
        case("maxpool", [2, 3, 8, 8], 8, |_| Layer::Pool),
        case("upsample", [2, 3, 4, 4], 9, |_| Layer::Upsample(UpsampleLayer::default())),
        case("concat", [1, 2, 4, 4], 10, |s| Layer::Concat(s.add("other", random_tensor([1, 3, 4, 4], 11)).unwrap())),
    ]
}
