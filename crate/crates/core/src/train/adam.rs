use crate::nn::Module;

/// Adam with bias correction. Moment buffers follow the module's
/// parameter visit order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, module: &mut dyn Module) {
        if self.m.is_empty() {
            module.visit(&mut |p| {
                self.m.push(vec![0.0; p.len()]);
                self.v.push(vec![0.0; p.len()]);
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit_mut(&mut |p| {
            let (m, v) = (&mut ms[i], &mut vs[i]);
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    struct One(Param);

    impl Module for One {
        fn visit(&self, f: &mut dyn FnMut(&Param)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::zeros("w", vec![2]);
        p.grad = vec![3.0, -0.5];
        let mut m = One(p);
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut m);
        assert!((m.0.value[0] + 0.1).abs() < 1e-6);
        assert!((m.0.value[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let mut m = One(Param::zeros("w", vec![1]));
        m.0.value[0] = 5.0;
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            m.0.grad[0] = 2.0 * (m.0.value[0] - 1.0);
            opt.step(&mut m);
        }
        assert!((m.0.value[0] - 1.0).abs() < 1e-2);
    }
}
