//! Minimal layer library: convolution, pooling, resampling and activations,
//! each with an explicit backward pass.

pub mod conv;
pub mod ops;
pub mod param;
pub mod weights;

pub use conv::Conv2d;
pub use param::{Module, Param};

use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// conv3x3 -> ReLU -> conv3x3 -> ReLU.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub first: Conv2d,
    pub second: Conv2d,
}

/// Activations kept for the backward pass of a [`DoubleConv`].
#[derive(Debug)]
pub struct DoubleConvCache {
    input: Tensor,
    mid: Tensor,
    out: Tensor,
}

impl DoubleConvCache {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

impl DoubleConv {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        DoubleConv {
            first: Conv2d::new(&format!("{name}.conv1"), in_ch, out_ch, 3, 1, rng),
            second: Conv2d::new(&format!("{name}.conv2"), out_ch, out_ch, 3, 1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut mid = self.first.forward(x)?;
        ops::relu_inplace(&mut mid);
        let mut out = self.second.forward(&mid)?;
        ops::relu_inplace(&mut out);
        Ok(out)
    }

    pub fn forward_cached(&self, x: Tensor) -> Result<DoubleConvCache> {
        let mut mid = self.first.forward(&x)?;
        ops::relu_inplace(&mut mid);
        let mut out = self.second.forward(&mid)?;
        ops::relu_inplace(&mut out);
        Ok(DoubleConvCache { input: x, mid, out })
    }

    pub fn backward(
        &mut self,
        cache: &DoubleConvCache,
        mut grad: Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        ops::relu_backward(&mut grad, &cache.out);
        let mut gmid = self
            .second
            .backward(&cache.mid, &grad, true)?
            .expect("input grad requested");
        ops::relu_backward(&mut gmid, &cache.mid);
        self.first.backward(&cache.input, &gmid, need_input_grad)
    }
}

impl Module for DoubleConv {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.first.visit(f);
        self.second.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.first.visit_mut(f);
        self.second.visit_mut(f);
    }
}
