//! Feature-pyramid segmentation network with a 3-way softmax head
//! (background, left lane, right lane).

use rand::Rng;

use super::ModelConfig;
use crate::error::Result;
use crate::nn::{ops, Conv2d, Module, Param};
use crate::tensor::Tensor;

pub const LEVELS: usize = 4;
pub const OUTPUT_STRIDE: usize = 4;

/// Strided 3x3 conv + ReLU followed by a 3x3 conv + ReLU. Halves resolution.
#[derive(Clone, Debug)]
pub struct DownStage {
    pub down: Conv2d,
    pub conv: Conv2d,
}

#[derive(Debug)]
struct DownCache {
    input: Tensor,
    mid: Tensor,
    out: Tensor,
}

impl DownStage {
    fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        DownStage {
            down: Conv2d::new(&format!("{name}.down"), in_ch, out_ch, 3, 2, rng),
            conv: Conv2d::new(&format!("{name}.conv"), out_ch, out_ch, 3, 1, rng),
        }
    }

    fn forward(&self, x: Tensor) -> Result<DownCache> {
        let mut mid = self.down.forward(&x)?;
        ops::relu_inplace(&mut mid);
        let mut out = self.conv.forward(&mid)?;
        ops::relu_inplace(&mut out);
        Ok(DownCache { input: x, mid, out })
    }

    fn backward(&mut self, c: &DownCache, mut g: Tensor, need: bool) -> Result<Option<Tensor>> {
        ops::relu_backward(&mut g, &c.out);
        let mut gm = self.conv.backward(&c.mid, &g, true)?.expect("input grad");
        ops::relu_backward(&mut gm, &c.mid);
        self.down.backward(&c.input, &gm, need)
    }
}

#[derive(Clone, Debug)]
pub struct Fpn {
    /// Five stride-2 stages; outputs of stages 1..=4 are the pyramid inputs
    /// at strides 4, 8, 16 and 32.
    pub encoder: Vec<DownStage>,
    pub laterals: Vec<Conv2d>,
    pub heads: Vec<Conv2d>,
    pub classifier: Conv2d,
}

#[derive(Debug)]
pub struct FpnCache {
    stages: Vec<DownCache>,
    pyramid: Vec<Tensor>,
    head_out: Vec<Tensor>,
    merged: Tensor,
    small_shape: [usize; 4],
    probs: Tensor,
}

impl Fpn {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let widths = config.encoder_widths;
        let mut encoder = Vec::with_capacity(widths.len());
        let mut prev = 3;
        for (i, &w) in widths.iter().enumerate() {
            encoder.push(DownStage::new(&format!("encoder.stage{i}"), prev, w, rng));
            prev = w;
        }
        let laterals = (0..LEVELS)
            .map(|l| {
                Conv2d::new(
                    &format!("fpn.lateral{}", l + 2),
                    widths[l + 1],
                    config.pyramid_channels,
                    1,
                    1,
                    rng,
                )
            })
            .collect();
        let heads = (0..LEVELS)
            .map(|l| {
                Conv2d::new(
                    &format!("fpn.head{}", l + 2),
                    config.pyramid_channels,
                    config.head_channels,
                    3,
                    1,
                    rng,
                )
            })
            .collect();
        let classifier = Conv2d::new(
            "classifier",
            config.head_channels,
            config.num_classes,
            1,
            1,
            rng,
        );
        Fpn {
            encoder,
            laterals,
            heads,
            classifier,
        }
    }

    /// Test hook: zero the final 1x1 layer so every logit is 0.
    pub fn zero_classifier(&mut self) {
        self.classifier.weight.value.iter_mut().for_each(|v| *v = 0.0);
        self.classifier.bias.value.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Encoder feature maps at strides 4, 8, 16, 32.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.clone();
        let mut feats = Vec::with_capacity(LEVELS);
        for (i, stage) in self.encoder.iter().enumerate() {
            h = stage.forward(h)?.out;
            if i > 0 {
                feats.push(h.clone());
            }
        }
        Ok(feats)
    }

    fn top_down(&self, feats: &[&Tensor]) -> Result<Vec<Tensor>> {
        let mut pyramid: Vec<Option<Tensor>> = (0..LEVELS).map(|_| None).collect();
        let mut above: Option<Tensor> = None;
        for l in (0..LEVELS).rev() {
            let mut p = self.laterals[l].forward(feats[l])?;
            if let Some(a) = above.take() {
                p.add_assign(&ops::upsample_nearest2(&a))?;
            }
            above = Some(p.clone());
            pyramid[l] = Some(p);
        }
        Ok(pyramid.into_iter().map(|p| p.expect("every level")).collect())
    }

    fn merge(&self, pyramid: &[Tensor]) -> Result<(Vec<Tensor>, Tensor)> {
        let (th, tw) = (pyramid[0].height(), pyramid[0].width());
        let mut merged: Option<Tensor> = None;
        let mut head_out = Vec::with_capacity(LEVELS);
        for (l, p) in pyramid.iter().enumerate() {
            let mut h = self.heads[l].forward(p)?;
            ops::relu_inplace(&mut h);
            let up = ops::resize_bilinear(&h, th, tw);
            match merged.as_mut() {
                Some(m) => m.add_assign(&up)?,
                None => merged = Some(up),
            }
            head_out.push(h);
        }
        Ok((head_out, merged.expect("at least one level")))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let feats = self.features(x)?;
        let pyramid = self.top_down(&feats.iter().collect::<Vec<_>>())?;
        let (_, merged) = self.merge(&pyramid)?;
        let logits = self.classifier.forward(&merged)?;
        let logits = ops::resize_bilinear(&logits, x.height(), x.width());
        Ok(ops::softmax_channels(&logits))
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, FpnCache)> {
        let mut stages = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for stage in &self.encoder {
            let c = stage.forward(h)?;
            h = c.out.clone();
            stages.push(c);
        }
        let feats: Vec<&Tensor> = stages[1..].iter().map(|c| &c.out).collect();
        let pyramid = self.top_down(&feats)?;
        let (head_out, merged) = self.merge(&pyramid)?;
        let small = self.classifier.forward(&merged)?;
        let small_shape = small.shape();
        let logits = ops::resize_bilinear(&small, x.height(), x.width());
        let probs = ops::softmax_channels(&logits);
        Ok((
            probs.clone(),
            FpnCache {
                stages,
                pyramid,
                head_out,
                merged,
                small_shape,
                probs,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FpnCache, grad: &Tensor) -> Result<()> {
        let g_logits = ops::softmax_channels_backward(grad, &cache.probs);
        let g_small =
            ops::resize_bilinear_backward(&g_logits, cache.small_shape[2], cache.small_shape[3]);
        let g_merged = self
            .classifier
            .backward(&cache.merged, &g_small, true)?
            .expect("input grad");

        let mut g_pyr: Vec<Tensor> = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            let p = &cache.pyramid[l];
            let mut gh = ops::resize_bilinear_backward(&g_merged, p.height(), p.width());
            ops::relu_backward(&mut gh, &cache.head_out[l]);
            g_pyr.push(self.heads[l].backward(p, &gh, true)?.expect("input grad"));
        }

        // Top-down adjoint: shallow levels feed gradient to the level above.
        let mut g_feat: Vec<Option<Tensor>> = (0..LEVELS).map(|_| None).collect();
        for l in 0..LEVELS {
            if l > 0 {
                let from_below = ops::upsample_nearest2_backward(&g_pyr[l - 1]);
                g_pyr[l].add_assign(&from_below)?;
            }
            let feat = &cache.stages[l + 1].out;
            g_feat[l] = self.laterals[l].backward(feat, &g_pyr[l], true)?;
        }

        let mut g: Option<Tensor> = None;
        for s in (0..self.encoder.len()).rev() {
            let mut gs = g.take().unwrap_or_else(|| Tensor::zeros(cache.stages[s].out.shape()));
            if s >= 1 {
                gs.add_assign(g_feat[s - 1].as_ref().expect("lateral grad"))?;
            }
            g = self.encoder[s].backward(&cache.stages[s], gs, s > 0)?;
        }
        Ok(())
    }
}

impl Module for Fpn {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for s in &self.encoder {
            s.down.visit(f);
            s.conv.visit(f);
        }
        self.laterals.iter().for_each(|m| m.visit(f));
        self.heads.iter().for_each(|m| m.visit(f));
        self.classifier.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for s in &mut self.encoder {
            s.down.visit_mut(f);
            s.conv.visit_mut(f);
        }
        self.laterals.iter_mut().for_each(|m| m.visit_mut(f));
        self.heads.iter_mut().for_each(|m| m.visit_mut(f));
        self.classifier.visit_mut(f);
    }
}
