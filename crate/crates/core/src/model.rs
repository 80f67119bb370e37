//! Encoder/decoder segmentation networks.
//!
//! Both architectures share a five-stage compression path (four stages
//! followed by 2x2 max pooling, then a bottleneck) and a four-stage
//! expansive path that upsamples, halves the channel count with a 1x1
//! convolution and concatenates the encoder map of matching resolution.
//! With base width `b` the stage widths are `b, 2b, 4b, 8b, 16b` going
//! down and `8b, 4b, 2b, b` coming back up.
//!
//! The deeply-supervised variant adds a ReLU'd 1x1 convolution at the end
//! of every stage and attaches supervision heads to hidden stages. Each
//! head upsamples its stage output to full resolution, projects to one
//! channel with a 3x3 transposed convolution and applies a sigmoid.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{Conv2dLayer, DeconvLayer};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};

/// Input height and width must be multiples of this (four poolings).
pub const SIZE_MULTIPLE: usize = 16;
const ENCODER_STAGES: usize = 5;
const DECODER_STAGES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Unet,
    Dscnn,
}

impl ModelKind {
    pub fn code(self) -> u32 {
        match self {
            ModelKind::Unet => 0,
            ModelKind::Dscnn => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Unet),
            1 => Some(ModelKind::Dscnn),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Unet => "unet",
            ModelKind::Dscnn => "dscnn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unet" | "u-net" => Ok(ModelKind::Unet),
            "dscnn" | "ds-cnn" => Ok(ModelKind::Dscnn),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (expected unet or dscnn)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Path {
    Encoder,
    Decoder,
}

/// A stage on the encoder (1..=5, 5 being the bottleneck) or decoder (1..=4) path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StageRef {
    pub path: Path,
    pub index: usize,
}

impl StageRef {
    pub fn encoder(index: usize) -> Self {
        StageRef {
            path: Path::Encoder,
            index,
        }
    }

    pub fn decoder(index: usize) -> Self {
        StageRef {
            path: Path::Decoder,
            index,
        }
    }

    /// Position in the network's flat stage list.
    fn position(self) -> usize {
        match self.path {
            Path::Encoder => self.index - 1,
            Path::Decoder => ENCODER_STAGES + self.index - 1,
        }
    }

    /// Downsampling factor of the stage's output relative to the input.
    pub fn scale(self) -> usize {
        match self.path {
            Path::Encoder => 1 << (self.index - 1),
            Path::Decoder => 1 << (DECODER_STAGES - self.index),
        }
    }

    fn code(self) -> u32 {
        match self.path {
            Path::Encoder => self.index as u32,
            Path::Decoder => 10 + self.index as u32,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            1..=5 => Some(StageRef::encoder(code as usize)),
            11..=14 => Some(StageRef::decoder(code as usize - 10)),
            _ => None,
        }
    }
}

impl fmt::Display for StageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.path {
            Path::Encoder => write!(f, "enc{}", self.index),
            Path::Decoder => write!(f, "dec{}", self.index),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub stage: StageRef,
    /// Channels arriving on the main path.
    pub in_ch: usize,
    pub out_ch: usize,
    /// 2x2 max pooling after the stage (encoder stages 1..=4).
    pub has_pool: bool,
    /// Nearest 2x upsampling at the start of the stage (decoder stages).
    pub has_upsample: bool,
    /// Encoder stage whose output is concatenated in (decoder stages).
    pub skip_source: Option<usize>,
    pub skip_ch: usize,
}

impl StageSpec {
    /// Channels entering the first 3x3 convolution (after the skip join).
    pub fn concat_channels(&self) -> usize {
        if self.skip_source.is_some() {
            self.out_ch + self.skip_ch
        } else {
            self.in_ch
        }
    }
}

/// Where supervision heads attach.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadPlacement {
    pub stages: Vec<StageRef>,
}

impl Default for HeadPlacement {
    /// Encoder stages 2..=5 and decoder stages 1..=4, shallow to deep.
    fn default() -> Self {
        let mut stages: Vec<StageRef> = (2..=5).map(StageRef::encoder).collect();
        stages.extend((1..=4).map(StageRef::decoder));
        HeadPlacement { stages }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadSpec {
    pub attach: StageRef,
    pub in_ch: usize,
    pub upsample_factor: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub spec: StageSpec,
    /// 1x1 channel-halving projection after upsampling (decoder only).
    pub reduce: Option<Conv2dLayer>,
    pub conv1: Conv2dLayer,
    pub conv2: Conv2dLayer,
    /// Extra 1x1 convolution (deeply-supervised variant only).
    pub pointwise: Option<Conv2dLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub spec: HeadSpec,
    pub deconv: DeconvLayer,
}

/// Architecture description; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub kind: ModelKind,
    pub in_ch: usize,
    pub base_ch: usize,
    pub stages: Vec<Stage>,
    pub heads: Vec<Head>,
    pub output: Conv2dLayer,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct NetOutputs {
    pub main: Var,
    /// Head probabilities, in placement order.
    pub heads: Vec<Var>,
    /// Output of every stage, encoder 1..=5 then decoder 1..=4.
    pub stages: Vec<Var>,
}

impl NetOutputs {
    /// Main output followed by the heads.
    pub fn all(&self) -> Vec<Var> {
        std::iter::once(self.main).chain(self.heads.iter().copied()).collect()
    }
}

fn stage_specs(base: usize, in_ch: usize) -> Vec<StageSpec> {
    let mut specs = Vec::with_capacity(ENCODER_STAGES + DECODER_STAGES);
    let mut prev = in_ch;
    for k in 1..=ENCODER_STAGES {
        let out = base << (k - 1);
        specs.push(StageSpec {
            stage: StageRef::encoder(k),
            in_ch: prev,
            out_ch: out,
            has_pool: k < ENCODER_STAGES,
            has_upsample: false,
            skip_source: None,
            skip_ch: 0,
        });
        prev = out;
    }
    for d in 1..=DECODER_STAGES {
        let partner = ENCODER_STAGES - d;
        let out = base << (partner - 1);
        specs.push(StageSpec {
            stage: StageRef::decoder(d),
            in_ch: prev,
            out_ch: out,
            has_pool: false,
            has_upsample: true,
            skip_source: Some(partner),
            skip_ch: out,
        });
        prev = out;
    }
    specs
}

impl Network {
    pub fn build<E: Element>(
        kind: ModelKind,
        in_ch: usize,
        base_ch: usize,
        placement: &HeadPlacement,
        store: &mut ParamStore<E>,
        seed: u64,
    ) -> Result<Self> {
        if in_ch == 0 || base_ch == 0 {
            return Err(Error::contract("in_ch and base_ch must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pointwise = kind == ModelKind::Dscnn;
        let mut stages = Vec::new();
        for spec in stage_specs(base_ch, in_ch) {
            let name = spec.stage.to_string();
            let reduce = if spec.has_upsample {
                Some(Conv2dLayer::new(
                    store,
                    &format!("{name}.reduce"),
                    spec.in_ch,
                    spec.out_ch,
                    1,
                    &mut rng,
                )?)
            } else {
                None
            };
            let conv1 = Conv2dLayer::new(
                store,
                &format!("{name}.conv1"),
                spec.concat_channels(),
                spec.out_ch,
                3,
                &mut rng,
            )?;
            let conv2 =
                Conv2dLayer::new(store, &format!("{name}.conv2"), spec.out_ch, spec.out_ch, 3, &mut rng)?;
            let pw = if pointwise {
                Some(Conv2dLayer::new(
                    store,
                    &format!("{name}.pw"),
                    spec.out_ch,
                    spec.out_ch,
                    1,
                    &mut rng,
                )?)
            } else {
                None
            };
            stages.push(Stage {
                spec,
                reduce,
                conv1,
                conv2,
                pointwise: pw,
            });
        }
        let output = Conv2dLayer::new(store, "out", base_ch, 1, 1, &mut rng)?;
        let mut heads = Vec::new();
        if kind == ModelKind::Dscnn {
            for (i, &attach) in placement.stages.iter().enumerate() {
                let valid = match attach.path {
                    Path::Encoder => (1..=ENCODER_STAGES).contains(&attach.index),
                    Path::Decoder => (1..=DECODER_STAGES).contains(&attach.index),
                };
                if !valid {
                    return Err(Error::contract(format!("no stage {attach} to attach a head to")));
                }
                let in_ch = stages[attach.position()].spec.out_ch;
                let deconv = DeconvLayer::new(
                    store,
                    &format!("head{}.deconv", i + 1),
                    in_ch,
                    1,
                    3,
                    1,
                    1,
                    &mut rng,
                )?;
                heads.push(Head {
                    spec: HeadSpec {
                        attach,
                        in_ch,
                        upsample_factor: attach.scale(),
                    },
                    deconv,
                });
            }
        }
        Ok(Network {
            kind,
            in_ch,
            base_ch,
            stages,
            heads,
            output,
        })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn placement(&self) -> HeadPlacement {
        HeadPlacement {
            stages: self.heads.iter().map(|h| h.spec.attach).collect(),
        }
    }

    pub fn check_input(&self, shape: crate::tensor::Shape) -> Result<()> {
        if shape.channels != self.in_ch {
            return Err(Error::dim(format!(
                "model expects {} input channels, got {}",
                self.in_ch, shape.channels
            )));
        }
        if shape.height % SIZE_MULTIPLE != 0 || shape.width % SIZE_MULTIPLE != 0 {
            return Err(Error::dim(format!(
                "input {}x{} is not divisible by {SIZE_MULTIPLE}",
                shape.height, shape.width
            )));
        }
        Ok(())
    }

    /// Records a full forward pass on `tape`.
    pub fn forward<E: Element>(&self, tape: &mut Tape<'_, E>, input: Var) -> Result<NetOutputs> {
        self.check_input(tape.shape(input))?;
        let mut h = input;
        let mut features = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if stage.spec.has_upsample {
                h = tape.upsample(h, 2)?;
                h = stage.reduce.as_ref().expect("decoder stage").forward(tape, h)?;
            }
            if let Some(src) = stage.spec.skip_source {
                h = tape.concat(features[src - 1], h)?;
            }
            h = stage.conv1.forward(tape, h)?;
            h = tape.relu(h);
            h = stage.conv2.forward(tape, h)?;
            h = tape.relu(h);
            if let Some(pw) = &stage.pointwise {
                h = pw.forward(tape, h)?;
                h = tape.relu(h);
            }
            features.push(h);
            if stage.spec.has_pool {
                h = tape.max_pool2(h)?;
            }
        }
        let logits = self.output.forward(tape, h)?;
        let main = tape.sigmoid(logits);
        let mut heads = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut f = features[head.spec.attach.position()];
            if head.spec.upsample_factor > 1 {
                f = tape.upsample(f, head.spec.upsample_factor)?;
            }
            let logits = head.deconv.forward(tape, f)?;
            heads.push(tape.sigmoid(logits));
        }
        Ok(NetOutputs {
            main,
            heads,
            stages: features,
        })
    }

    pub(crate) fn placement_codes(&self) -> Vec<u32> {
        self.heads.iter().map(|h| h.spec.attach.code()).collect()
    }

    pub(crate) fn placement_from_codes(codes: &[u32]) -> Result<HeadPlacement> {
        let stages = codes
            .iter()
            .map(|&c| {
                StageRef::from_code(c).ok_or_else(|| Error::Format(format!("bad head placement code {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HeadPlacement { stages })
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: Network,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn new(kind: ModelKind, in_ch: usize, base_ch: usize, seed: u64) -> Result<Self> {
        Self::with_placement(kind, in_ch, base_ch, &HeadPlacement::default(), seed)
    }

    pub fn with_placement(
        kind: ModelKind,
        in_ch: usize,
        base_ch: usize,
        placement: &HeadPlacement,
        seed: u64,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Network::build(kind, in_ch, base_ch, placement, &mut params, seed)?;
        Ok(Model { net, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.net.kind
    }

    /// Inference: main output followed by every head output.
    pub fn predict(&self, image: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        let mut tape = Tape::with_params(&self.params);
        let x = tape.leaf(image.clone(), false);
        let out = self.net.forward(&mut tape, x)?;
        Ok(out.all().into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

/// U-Net baseline: single sigmoid output.
pub fn build_unet(in_ch: usize, base_ch: usize, seed: u64) -> Result<Model> {
    Model::new(ModelKind::Unet, in_ch, base_ch, seed)
}

/// Deeply-supervised network with the default eight heads.
pub fn build_dscnn(in_ch: usize, base_ch: usize, seed: u64) -> Result<Model> {
    Model::new(ModelKind::Dscnn, in_ch, base_ch, seed)
}
