//! 2-D convolution via chunked im2col and `matrixmultiply` GEMM.

use rand::Rng;

use super::param::{Module, Param};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::Tensor;

/// Upper bound on im2col buffer size in elements (~16 MiB of f64).
const COLS_BUDGET: usize = 1 << 21;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    s: usize,
    p: usize,
}

impl Geom {
    fn ck2(&self) -> usize {
        self.c * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.s == 1 && self.p == 0
    }

    fn rows_per_chunk(&self) -> usize {
        (COLS_BUDGET / (self.ck2() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// im2col for output rows `r0..r1`, laid out `[ck2, (r1 - r0) * wo]`.
    fn im2col(&self, x: &[f64], r0: usize, r1: usize, cols: &mut Vec<f64>) {
        let n = (r1 - r0) * self.wo;
        cols.clear();
        cols.resize(self.ck2() * n, 0.0);
        let mut row = 0;
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for (j, oy) in (r0..r1).enumerate() {
                        let iy = (oy * self.s + ky) as isize - self.p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let d = &mut dst[j * self.wo..(j + 1) * self.wo];
                        for (ox, v) in d.iter_mut().enumerate() {
                            let ix = (ox * self.s + kx) as isize - self.p as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *v = src[ix as usize];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-add the column gradient back onto the input gradient.
    fn col2im_add(&self, cols: &[f64], r0: usize, r1: usize, gx: &mut [f64]) {
        let n = (r1 - r0) * self.wo;
        let mut row = 0;
        for ci in 0..self.c {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let src = &cols[row * n..(row + 1) * n];
                    for (j, oy) in (r0..r1).enumerate() {
                        let iy = (oy * self.s + ky) as isize - self.p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let s = &src[j * self.wo..(j + 1) * self.wo];
                        for (ox, v) in s.iter().enumerate() {
                            let ix = (ox * self.s + kx) as isize - self.p as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, all strides in elements.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    beta: f64,
    c: (&mut [f64], usize, usize),
) {
    let max_index = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.0.len() >= max_index(m, k, a.1, a.2));
    assert!(b.0.len() >= max_index(k, n, b.1, b.2));
    assert!(c.0.len() >= max_index(m, n, c.1, c.2));
    // SAFETY: the asserts above bound every index the kernel can touch.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        );
    }
}

impl Conv2d {
    /// Square kernel, "same" padding (`kernel / 2`), He-initialised weights and zero bias.
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: Param::he_normal(
                format!("{name}.weight"),
                vec![out_ch, in_ch, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_ch]),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.pad - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    fn geom(&self, x: &Tensor) -> Result<Geom> {
        let [_, c, h, w] = x.shape();
        if c != self.in_ch {
            return Err(Error::Shape(format!(
                "{} expects {} input channels, got {c}",
                self.weight.name, self.in_ch
            )));
        }
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::Shape(format!("input {h}x{w} smaller than kernel")));
        }
        let (ho, wo) = self.output_size(h, w);
        Ok(Geom {
            c,
            h,
            w,
            ho,
            wo,
            k: self.kernel,
            s: self.stride,
            p: self.pad,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geom(x)?;
        let n = x.batch();
        let rows = g.rows_per_chunk();
        let chunks = g.ho.div_ceil(rows);
        let ck2 = g.ck2();
        let o = self.out_ch;

        let pieces = exec::map_indexed(n * chunks, |job| {
            let (b, ch) = (job / chunks, job % chunks);
            let r0 = ch * rows;
            let r1 = (r0 + rows).min(g.ho);
            let cols_n = (r1 - r0) * g.wo;
            let item = x.item(b);
            let mut out = vec![0.0; o * cols_n];
            if g.is_pointwise() {
                gemm(
                    o,
                    ck2,
                    cols_n,
                    (&self.weight.value, ck2, 1),
                    (&item[r0 * g.w..], g.h * g.w, 1),
                    0.0,
                    (&mut out, cols_n, 1),
                );
            } else {
                let mut cols = Vec::new();
                g.im2col(item, r0, r1, &mut cols);
                gemm(
                    o,
                    ck2,
                    cols_n,
                    (&self.weight.value, ck2, 1),
                    (&cols, cols_n, 1),
                    0.0,
                    (&mut out, cols_n, 1),
                );
            }
            for (oc, row) in out.chunks_mut(cols_n).enumerate() {
                let bias = self.bias.value[oc];
                row.iter_mut().for_each(|v| *v += bias);
            }
            out
        });

        let mut y = Tensor::zeros([n, o, g.ho, g.wo]);
        let plane = g.ho * g.wo;
        for (job, piece) in pieces.into_iter().enumerate() {
            let (b, ch) = (job / chunks, job % chunks);
            let r0 = ch * rows;
            let r1 = (r0 + rows).min(g.ho);
            let cols_n = (r1 - r0) * g.wo;
            let item = y.item_mut(b);
            for oc in 0..o {
                item[oc * plane + r0 * g.wo..oc * plane + r1 * g.wo]
                    .copy_from_slice(&piece[oc * cols_n..(oc + 1) * cols_n]);
            }
        }
        Ok(y)
    }

    /// Accumulate parameter gradients for `grad_out` and, if requested, return
    /// the gradient with respect to `x`.
    pub fn backward(
        &mut self,
        x: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let g = self.geom(x)?;
        let n = x.batch();
        if grad_out.shape() != [n, self.out_ch, g.ho, g.wo] {
            return Err(Error::Shape(format!(
                "{} grad {:?} does not match output {:?}",
                self.weight.name,
                grad_out.shape(),
                [n, self.out_ch, g.ho, g.wo]
            )));
        }
        let rows = g.rows_per_chunk();
        let ck2 = g.ck2();
        let o = self.out_ch;
        let plane = g.ho * g.wo;
        let weight = &self.weight.value;

        let per_item = exec::map_indexed(n, |b| {
            let item = x.item(b);
            let go = grad_out.item(b);
            let mut gw = vec![0.0; o * ck2];
            let mut gb = vec![0.0; o];
            let mut gx = if need_input_grad {
                vec![0.0; item.len()]
            } else {
                Vec::new()
            };
            for (oc, gbv) in gb.iter_mut().enumerate() {
                *gbv = go[oc * plane..(oc + 1) * plane].iter().sum();
            }
            let mut cols = Vec::new();
            let mut gcols = Vec::new();
            let mut r0 = 0;
            while r0 < g.ho {
                let r1 = (r0 + rows).min(g.ho);
                let cols_n = (r1 - r0) * g.wo;
                let go_chunk = &go[r0 * g.wo..];
                if g.is_pointwise() {
                    gemm(
                        o,
                        cols_n,
                        ck2,
                        (go_chunk, plane, 1),
                        (&item[r0 * g.w..], 1, g.h * g.w),
                        1.0,
                        (&mut gw, ck2, 1),
                    );
                    if need_input_grad {
                        gemm(
                            ck2,
                            o,
                            cols_n,
                            (weight, 1, ck2),
                            (go_chunk, plane, 1),
                            1.0,
                            (&mut gx[r0 * g.w..], g.h * g.w, 1),
                        );
                    }
                } else {
                    g.im2col(item, r0, r1, &mut cols);
                    gemm(
                        o,
                        cols_n,
                        ck2,
                        (go_chunk, plane, 1),
                        (&cols, 1, cols_n),
                        1.0,
                        (&mut gw, ck2, 1),
                    );
                    if need_input_grad {
                        gcols.clear();
                        gcols.resize(ck2 * cols_n, 0.0);
                        gemm(
                            ck2,
                            o,
                            cols_n,
                            (weight, 1, ck2),
                            (go_chunk, plane, 1),
                            0.0,
                            (&mut gcols, cols_n, 1),
                        );
                        g.col2im_add(&gcols, r0, r1, &mut gx);
                    }
                }
                r0 = r1;
            }
            (gw, gb, gx)
        });

        let mut gx_all = need_input_grad.then(|| Vec::with_capacity(x.len()));
        for (gw, gb, gx) in per_item {
            self.weight
                .grad
                .iter_mut()
                .zip(&gw)
                .for_each(|(a, b)| *a += b);
            self.bias
                .grad
                .iter_mut()
                .zip(&gb)
                .for_each(|(a, b)| *a += b);
            if let Some(all) = gx_all.as_mut() {
                all.extend_from_slice(&gx);
            }
        }
        gx_all
            .map(|v| Tensor::from_vec(x.shape(), v))
            .transpose()
    }
}

impl Module for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
