//! Layers used by the segmentation networks.
//!
//! Parametrised layers own [`ParamId`]s into a [`ParamStore`]; the tensors
//! themselves live in the store so the same layer description can run at
//! any storage precision.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{kaiming_normal, ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

/// Stride-1 convolution with same zero padding; kernel 1 or 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv2dLayer {
    pub fn new<E: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::dim(format!("conv kernel must be 1 or 3, got {kernel}")));
        }
        let shape = Shape::new(out_ch, in_ch, kernel, kernel);
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_normal(shape, in_ch * kernel * kernel, rng)?,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([1, out_ch, 1, 1])?)?;
        Ok(Conv2dLayer {
            name: name.to_string(),
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
        })
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<'_, E>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight)?;
        let b = tape.param(self.bias)?;
        tape.conv2d(x, w, Some(b), 1, self.padding())
    }
}

/// Transposed convolution; weight layout `(in_ch, out_ch, k, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeconvLayer {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = Shape::new(in_ch, out_ch, kernel, kernel);
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_normal(shape, in_ch * kernel * kernel, rng)?,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([1, out_ch, 1, 1])?)?;
        Ok(DeconvLayer {
            name: name.to_string(),
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        })
    }

    pub fn output_size(&self, input: usize) -> usize {
        self.stride * (input - 1) + self.kernel - 2 * self.pad
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<'_, E>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight)?;
        let b = tape.param(self.bias)?;
        tape.deconv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// 2x2 window, stride 2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaxPoolLayer;

impl MaxPoolLayer {
    pub fn forward<E: Element>(&self, tape: &mut Tape<'_, E>, x: Var) -> Result<Var> {
        tape.max_pool2(x)
    }
}

/// Nearest-neighbour upsampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpsampleLayer {
    pub factor: usize,
}

impl Default for UpsampleLayer {
    fn default() -> Self {
        UpsampleLayer { factor: 2 }
    }
}

impl UpsampleLayer {
    pub fn forward<E: Element>(&self, tape: &mut Tape<'_, E>, x: Var) -> Result<Var> {
        tape.upsample(x, self.factor)
    }
}

/// Channel-axis join of an encoder skip and the decoder path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConcatJunction;

impl ConcatJunction {
    pub fn forward<E: Element>(&self, tape: &mut Tape<'_, E>, skip: Var, path: Var) -> Result<Var> {
        tape.concat(skip, path)
    }
}
