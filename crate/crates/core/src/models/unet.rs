//! Attention-gated U-Net producing a single-channel lane probability map.

use rand::Rng;

use super::attention::{AttentionGate, GateCache};
use super::ModelConfig;
use crate::error::Result;
use crate::nn::{ops, Conv2d, DoubleConv, DoubleConvCache, Module, Param};
use crate::tensor::Tensor;

pub const DEPTH: usize = 4;

#[derive(Clone, Debug)]
pub struct AttentionUNet {
    /// Encoder stages, shallow to deep (widths C, 2C, 4C, 8C).
    pub encoder: Vec<DoubleConv>,
    pub bottleneck: DoubleConv,
    /// Decoder stages, deep to shallow. Index `i` restores encoder level `DEPTH - 1 - i`.
    pub up_convs: Vec<Conv2d>,
    pub gates: Vec<AttentionGate>,
    pub decoder: Vec<DoubleConv>,
    pub head: Conv2d,
}

#[derive(Debug)]
struct UpCache {
    upsampled: Tensor,
    up_out: Tensor,
    gate: GateCache,
    gated_channels: usize,
    block: DoubleConvCache,
    low_shape: [usize; 4],
}

#[derive(Debug)]
pub struct UNetCache {
    encoder: Vec<DoubleConvCache>,
    pool_args: Vec<Vec<u8>>,
    bottleneck: DoubleConvCache,
    ups: Vec<UpCache>,
    output: Tensor,
}

impl AttentionUNet {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let c = config.base_width;
        let widths: Vec<usize> = (0..DEPTH).map(|i| c << i).collect();
        let mut encoder = Vec::with_capacity(DEPTH);
        let mut prev = 3;
        for (i, &w) in widths.iter().enumerate() {
            encoder.push(DoubleConv::new(&format!("encoder{}", i + 1), prev, w, rng));
            prev = w;
        }
        let bottleneck = DoubleConv::new("bottleneck", prev, c << DEPTH, rng);
        prev = c << DEPTH;
        let mut up_convs = Vec::new();
        let mut gates = Vec::new();
        let mut decoder = Vec::new();
        for level in (0..DEPTH).rev() {
            let w = widths[level];
            let tag = level + 1;
            up_convs.push(Conv2d::new(&format!("up{tag}.conv"), prev, w, 3, 1, rng));
            gates.push(AttentionGate::new(&format!("up{tag}.gate"), w, w, rng));
            decoder.push(DoubleConv::new(&format!("up{tag}.block"), 2 * w, w, rng));
            prev = w;
        }
        let head = Conv2d::new("head", prev, 1, 1, 1, rng);
        AttentionUNet {
            encoder,
            bottleneck,
            up_convs,
            gates,
            decoder,
            head,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut skips = Vec::with_capacity(DEPTH);
        let mut h = x.clone();
        for stage in &self.encoder {
            let s = stage.forward(&h)?;
            h = ops::maxpool2(&s)?.0;
            skips.push(s);
        }
        let mut d = self.bottleneck.forward(&h)?;
        for i in 0..DEPTH {
            let skip = skips.pop().expect("one skip per level");
            let up = ops::resize_bilinear(&d, 2 * d.height(), 2 * d.width());
            let mut u = self.up_convs[i].forward(&up)?;
            ops::relu_inplace(&mut u);
            let att = self.gates[i].forward(&skip, &u)?;
            d = self.decoder[i].forward(&Tensor::concat_channels(&att, &u)?)?;
        }
        Ok(self.head.forward(&d)?.map(ops::sigmoid))
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, UNetCache)> {
        let mut encoder = Vec::with_capacity(DEPTH);
        let mut pool_args = Vec::with_capacity(DEPTH);
        let mut h = x.clone();
        for stage in &self.encoder {
            let cache = stage.forward_cached(h)?;
            let (pooled, arg) = ops::maxpool2(cache.output())?;
            pool_args.push(arg);
            encoder.push(cache);
            h = pooled;
        }
        let bottleneck = self.bottleneck.forward_cached(h)?;
        let mut ups = Vec::with_capacity(DEPTH);
        let mut d = bottleneck.output().clone();
        for i in 0..DEPTH {
            let skip = encoder[DEPTH - 1 - i].output().clone();
            let low_shape = d.shape();
            let upsampled = ops::resize_bilinear(&d, 2 * d.height(), 2 * d.width());
            let mut up_out = self.up_convs[i].forward(&upsampled)?;
            ops::relu_inplace(&mut up_out);
            let (att, gate) = self.gates[i].forward_cached(skip, up_out.clone())?;
            let gated_channels = att.channels();
            let block = self.decoder[i].forward_cached(Tensor::concat_channels(&att, &up_out)?)?;
            d = block.output().clone();
            ups.push(UpCache {
                upsampled,
                up_out,
                gate,
                gated_channels,
                block,
                low_shape,
            });
        }
        let output = self.head.forward(&d)?.map(ops::sigmoid);
        Ok((
            output.clone(),
            UNetCache {
                encoder,
                pool_args,
                bottleneck,
                ups,
                output,
            },
        ))
    }

    /// Backpropagate `grad` (with respect to the output probabilities).
    pub fn backward(&mut self, cache: &UNetCache, grad: &Tensor) -> Result<()> {
        let mut g = grad.clone();
        ops::sigmoid_backward(&mut g, &cache.output);
        let head_in = cache.ups[DEPTH - 1].block.output();
        let mut gd = self.head.backward(head_in, &g, true)?.expect("input grad");

        let mut skip_grads: Vec<Option<Tensor>> = (0..DEPTH).map(|_| None).collect();
        for i in (0..DEPTH).rev() {
            let up = &cache.ups[i];
            let gcat = self.decoder[i]
                .backward(&up.block, gd, true)?
                .expect("input grad");
            let (g_att, mut g_up) = gcat.split_channels(up.gated_channels);
            let (g_skip, g_gate) = self.gates[i].backward(&up.gate, &g_att)?;
            g_up.add_assign(&g_gate)?;
            ops::relu_backward(&mut g_up, &up.up_out);
            let g_upsampled = self.up_convs[i]
                .backward(&up.upsampled, &g_up, true)?
                .expect("input grad");
            gd = ops::resize_bilinear_backward(&g_upsampled, up.low_shape[2], up.low_shape[3]);
            skip_grads[DEPTH - 1 - i] = Some(g_skip);
        }

        let mut g = self
            .bottleneck
            .backward(&cache.bottleneck, gd, true)?
            .expect("input grad");
        for level in (0..DEPTH).rev() {
            let enc = &cache.encoder[level];
            let mut gs = ops::maxpool2_backward(&g, &cache.pool_args[level], enc.output().shape());
            gs.add_assign(skip_grads[level].as_ref().expect("skip grad"))?;
            let need = level > 0;
            match self.encoder[level].backward(enc, gs, need)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }
}

impl Module for AttentionUNet {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.encoder.iter().for_each(|m| m.visit(f));
        self.bottleneck.visit(f);
        for i in 0..DEPTH {
            self.up_convs[i].visit(f);
            self.gates[i].visit(f);
            self.decoder[i].visit(f);
        }
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.iter_mut().for_each(|m| m.visit_mut(f));
        self.bottleneck.visit_mut(f);
        for i in 0..DEPTH {
            self.up_convs[i].visit_mut(f);
            self.gates[i].visit_mut(f);
            self.decoder[i].visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}
