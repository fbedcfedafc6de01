//! Parameter-free layers with hand-written adjoints.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_inplace(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Mask `grad` by `out > 0`, where `out` is the ReLU output.
pub fn relu_backward(grad: &mut Tensor, out: &Tensor) {
    grad.data_mut()
        .iter_mut()
        .zip(out.data())
        .for_each(|(g, &y)| {
            if y <= 0.0 {
                *g = 0.0
            }
        });
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `grad * y * (1 - y)` where `y` is the sigmoid output.
pub fn sigmoid_backward(grad: &mut Tensor, out: &Tensor) {
    grad.data_mut()
        .iter_mut()
        .zip(out.data())
        .for_each(|(g, &y)| *g *= y * (1.0 - y));
}

/// Per-pixel softmax across channels.
pub fn softmax_channels(logits: &Tensor) -> Tensor {
    let [n, c, _, _] = logits.shape();
    let p = logits.plane();
    let mut out = logits.clone();
    for b in 0..n {
        let item = out.item_mut(b);
        for i in 0..p {
            let max = (0..c).map(|k| item[k * p + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..c {
                let e = (item[k * p + i] - max).exp();
                item[k * p + i] = e;
                sum += e;
            }
            for k in 0..c {
                item[k * p + i] /= sum;
            }
        }
    }
    out
}

/// Adjoint of [`softmax_channels`]: `p * (g - sum_k p_k g_k)`.
pub fn softmax_channels_backward(grad: &Tensor, probs: &Tensor) -> Tensor {
    let [n, c, _, _] = probs.shape();
    let p = probs.plane();
    let mut out = grad.clone();
    for b in 0..n {
        let pr = probs.item(b);
        let g = out.item_mut(b);
        for i in 0..p {
            let dot: f64 = (0..c).map(|k| pr[k * p + i] * g[k * p + i]).sum();
            for k in 0..c {
                g[k * p + i] = pr[k * p + i] * (g[k * p + i] - dot);
            }
        }
    }
    out
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the argmax
/// position (0..4) of each output inside its window.
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<u8>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max-pool needs even size, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, ho, wo]);
    let mut arg = vec![0u8; n * c * ho * wo];
    let mut idx = 0;
    for b in 0..n {
        for ch in 0..c {
            let src = x.channel(b, ch);
            let dst = y.channel_mut(b, ch);
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = 2 * oy * w + 2 * ox;
                    let cand = [src[base], src[base + 1], src[base + w], src[base + w + 1]];
                    let mut best = 0;
                    for k in 1..4 {
                        if cand[k] > cand[best] {
                            best = k;
                        }
                    }
                    dst[oy * wo + ox] = cand[best];
                    arg[idx] = best as u8;
                    idx += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward(grad: &Tensor, arg: &[u8], input_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = input_shape;
    let (ho, wo) = (h / 2, w / 2);
    let mut gx = Tensor::zeros(input_shape);
    let mut idx = 0;
    for b in 0..n {
        for ch in 0..c {
            let g = grad.channel(b, ch);
            let dst = gx.channel_mut(b, ch);
            for oy in 0..ho {
                for ox in 0..wo {
                    let a = arg[idx] as usize;
                    let pos = (2 * oy + a / 2) * w + 2 * ox + a % 2;
                    dst[pos] += g[oy * wo + ox];
                    idx += 1;
                }
            }
        }
    }
    gx
}

/// Source taps for half-pixel bilinear sampling along one axis.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize (half-pixel centres, edge clamped) of every channel plane.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    if (oh, ow) == (h, w) {
        return x.clone();
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.channel(b, ch);
            let dst = y.channel_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    y
}

/// Adjoint of [`resize_bilinear`] back to an `h x w` input.
pub fn resize_bilinear_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, oh, ow] = grad.shape();
    if (oh, ow) == (h, w) {
        return grad.clone();
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut gx = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let g = grad.channel(b, ch);
            let dst = gx.channel_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                    dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                    dst[y1 * w + x0] += v * fy * (1.0 - fx);
                    dst[y1 * w + x1] += v * fy * fx;
                }
            }
        }
    }
    gx
}

pub fn upsample_nearest2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.channel(b, ch);
            let dst = y.channel_mut(b, ch);
            for oy in 0..2 * h {
                for ox in 0..2 * w {
                    dst[oy * 2 * w + ox] = src[(oy / 2) * w + ox / 2];
                }
            }
        }
    }
    y
}

pub fn upsample_nearest2_backward(grad: &Tensor) -> Tensor {
    let [n, c, h2, w2] = grad.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let g = grad.channel(b, ch);
            let dst = gx.channel_mut(b, ch);
            for oy in 0..h2 {
                for ox in 0..w2 {
                    dst[(oy / 2) * w + ox / 2] += g[oy * w2 + ox];
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    // <A x, y> == <x, A^T y> for every linear op.
    #[test]
    fn adjoint_identities() {
        let x = random([2, 3, 4, 6], 1);
        for &(oh, ow) in &[(8, 12), (16, 24), (5, 7), (2, 3)] {
            let y = random([2, 3, oh, ow], 2);
            let lhs = dot(&resize_bilinear(&x, oh, ow), &y);
            let rhs = dot(&x, &resize_bilinear_backward(&y, 4, 6));
            assert!((lhs - rhs).abs() < 1e-10, "{oh}x{ow}");
        }
        let y = random([2, 3, 8, 12], 3);
        let lhs = dot(&upsample_nearest2(&x), &y);
        let rhs = dot(&x, &upsample_nearest2_backward(&y));
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn bilinear_upsample_of_constant_is_constant() {
        let x = Tensor::full([1, 1, 3, 5], 0.7);
        let y = resize_bilinear(&x, 12, 20);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[0.9]);
        let g = maxpool2_backward(&Tensor::full([1, 1, 1, 1], 2.0), &arg, x.shape());
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_backward_matches_fd() {
        let x = random([1, 3, 2, 2], 9);
        let p = softmax_channels(&x);
        for i in 0..4 {
            let s: f64 = (0..3).map(|c| p.channel(0, c)[i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let r = random([1, 3, 2, 2], 10);
        let g = softmax_channels_backward(&r, &p);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (dot(&softmax_channels(&xp), &r) - dot(&softmax_channels(&xm), &r)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }
}
