//! Additive attention gate on a U-Net skip connection.
//!
//! ```text
//! alpha = sigmoid(psi(relu(Wx * skip + Wg * gate)))
//! out   = skip * alpha        (alpha broadcast over channels)
//! ```
//!
//! `Wx`, `Wg` are 1x1 convolutions to an intermediate width of `F / 2`
//! (`F` = skip channels) and `psi` is a 1x1 convolution to a single channel.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{ops, Conv2d, Module, Param};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub wx: Conv2d,
    pub wg: Conv2d,
    pub psi: Conv2d,
    /// Test hook: replace the computed coefficients with a constant.
    pub forced_alpha: Option<f64>,
}

#[derive(Debug)]
pub struct GateCache {
    skip: Tensor,
    gate: Tensor,
    hidden: Tensor,
    alpha: Tensor,
}

impl GateCache {
    pub fn alpha(&self) -> &Tensor {
        &self.alpha
    }
}

impl AttentionGate {
    pub fn new(name: &str, skip_ch: usize, gate_ch: usize, rng: &mut impl Rng) -> Self {
        let inter = (skip_ch / 2).max(1);
        AttentionGate {
            wx: Conv2d::new(&format!("{name}.wx"), skip_ch, inter, 1, 1, rng),
            wg: Conv2d::new(&format!("{name}.wg"), gate_ch, inter, 1, 1, rng),
            psi: Conv2d::new(&format!("{name}.psi"), inter, 1, 1, 1, rng),
            forced_alpha: None,
        }
    }

    pub fn intermediate_channels(&self) -> usize {
        self.wx.out_channels()
    }

    fn check(skip: &Tensor, gate: &Tensor) -> Result<()> {
        let [ns, _, hs, ws] = skip.shape();
        let [ng, _, hg, wg] = gate.shape();
        if ns != ng || hs != hg || ws != wg {
            return Err(Error::Shape(format!(
                "attention gate: skip {:?} and gate {:?} are not spatially aligned",
                skip.shape(),
                gate.shape()
            )));
        }
        Ok(())
    }

    fn coefficients(&self, skip: &Tensor, gate: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut hidden = self.wx.forward(skip)?;
        hidden.add_assign(&self.wg.forward(gate)?)?;
        ops::relu_inplace(&mut hidden);
        let alpha = match self.forced_alpha {
            Some(v) => Tensor::full([skip.batch(), 1, skip.height(), skip.width()], v),
            None => self.psi.forward(&hidden)?.map(ops::sigmoid),
        };
        Ok((hidden, alpha))
    }

    fn apply(skip: &Tensor, alpha: &Tensor) -> Tensor {
        let mut out = skip.clone();
        for b in 0..skip.batch() {
            let a = alpha.channel(b, 0).to_vec();
            for c in 0..skip.channels() {
                out.channel_mut(b, c)
                    .iter_mut()
                    .zip(&a)
                    .for_each(|(v, &w)| *v *= w);
            }
        }
        out
    }

    pub fn forward(&self, skip: &Tensor, gate: &Tensor) -> Result<Tensor> {
        Self::check(skip, gate)?;
        let (_, alpha) = self.coefficients(skip, gate)?;
        Ok(Self::apply(skip, &alpha))
    }

    pub fn forward_cached(&self, skip: Tensor, gate: Tensor) -> Result<(Tensor, GateCache)> {
        Self::check(&skip, &gate)?;
        let (hidden, alpha) = self.coefficients(&skip, &gate)?;
        let out = Self::apply(&skip, &alpha);
        Ok((
            out,
            GateCache {
                skip,
                gate,
                hidden,
                alpha,
            },
        ))
    }

    /// Returns `(d skip, d gate)` and accumulates parameter gradients.
    pub fn backward(&mut self, cache: &GateCache, grad: &Tensor) -> Result<(Tensor, Tensor)> {
        let skip = &cache.skip;
        let mut g_skip = Self::apply(grad, &cache.alpha);
        let gate_zero = Tensor::zeros(cache.gate.shape());
        if self.forced_alpha.is_some() {
            return Ok((g_skip, gate_zero));
        }
        let [n, c, h, w] = skip.shape();
        let mut g_logit = Tensor::zeros([n, 1, h, w]);
        for b in 0..n {
            let a = cache.alpha.channel(b, 0);
            let dst = g_logit.channel_mut(b, 0);
            for ch in 0..c {
                let gs = grad.channel(b, ch);
                let xs = skip.channel(b, ch);
                for i in 0..h * w {
                    dst[i] += gs[i] * xs[i];
                }
            }
            for i in 0..h * w {
                dst[i] *= a[i] * (1.0 - a[i]);
            }
        }
        let mut g_hidden = self
            .psi
            .backward(&cache.hidden, &g_logit, true)?
            .expect("input grad requested");
        ops::relu_backward(&mut g_hidden, &cache.hidden);
        let gx = self
            .wx
            .backward(skip, &g_hidden, true)?
            .expect("input grad requested");
        g_skip.add_assign(&gx)?;
        let g_gate = self
            .wg
            .backward(&cache.gate, &g_hidden, true)?
            .expect("input grad requested");
        Ok((g_skip, g_gate))
    }
}

impl Module for AttentionGate {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.wx.visit(f);
        self.wg.visit(f);
        self.psi.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.wx.visit_mut(f);
        self.wg.visit_mut(f);
        self.psi.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn forced_ones_is_identity_and_zeros_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gate = AttentionGate::new("g", 4, 6, &mut rng);
        let skip = random([2, 4, 8, 8], &mut rng);
        let g = random([2, 6, 8, 8], &mut rng);
        gate.forced_alpha = Some(1.0);
        assert_eq!(gate.forward(&skip, &g).unwrap(), skip);
        gate.forced_alpha = Some(0.0);
        assert!(gate.forward(&skip, &g).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coefficients_are_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gate = AttentionGate::new("g", 4, 4, &mut rng);
        let (_, cache) = gate
            .forward_cached(random([1, 4, 8, 8], &mut rng), random([1, 4, 8, 8], &mut rng))
            .unwrap();
        assert!(cache.alpha().data().iter().all(|&a| a > 0.0 && a < 1.0));
        assert_eq!(gate.intermediate_channels(), 2);
    }

    #[test]
    fn spatial_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gate = AttentionGate::new("g", 4, 4, &mut rng);
        let r = gate.forward(&Tensor::zeros([1, 4, 8, 8]), &Tensor::zeros([1, 4, 4, 4]));
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
