//! SGD with momentum and an exponential learning-rate schedule.

use crate::module::{Module, TensorMut};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Coupled L2 penalty, applied only to parameters flagged for decay.
    pub weight_decay: f64,
}

/// Momentum SGD in the PyTorch formulation:
/// `g += wd·w; v = μ·v + g; w -= lr·v` (first step `v = g`).
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the gradients currently stored in `model`.
    pub fn step<M: Module<T> + ?Sized>(&mut self, model: &mut M) {
        let SgdConfig { lr, momentum, weight_decay } = self.config;
        let velocity = &mut self.velocity;
        let mut slot = 0;
        model.visit_mut("", &mut |_, t| {
            let TensorMut::Param(p) = t else { return };
            if velocity.len() <= slot {
                velocity.push(None);
            }
            let mut g = p.grad.clone();
            if weight_decay != 0.0 && p.decay {
                g.axpy(T::of(weight_decay), &p.value).expect("grad matches value");
            }
            let v = match velocity[slot].take() {
                Some(mut v) if momentum != 0.0 => {
                    v.scale(T::of(momentum));
                    v.add_assign(&g).expect("velocity matches grad");
                    v
                }
                _ => g,
            };
            p.value.axpy(T::of(-lr), &v).expect("velocity matches value");
            velocity[slot] = Some(v);
            slot += 1;
        });
    }
}

/// `lr_e = lr_0 · γ^e`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentialLr {
    pub initial: f64,
    pub gamma: f64,
}

impl ExponentialLr {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial * self.gamma.powi(epoch as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::module::{join, Param, TensorRef};

    struct Two {
        a: Param<f64>,
        b: Param<f64>,
    }

    impl Module<f64> for Two {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, f64>)) {
            f(&join(prefix, "a"), TensorRef::Param(&self.a));
            f(&join(prefix, "b"), TensorRef::Param(&self.b));
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, f64>)) {
            f(&join(prefix, "a"), TensorMut::Param(&mut self.a));
            f(&join(prefix, "b"), TensorMut::Param(&mut self.b));
        }
    }

    #[test]
    fn momentum_and_decay_follow_reference_update() {
        let mut m = Two {
            a: Param::new(Tensor::full([1, 1, 1, 1], 1.0), true),
            b: Param::new(Tensor::full([1, 1, 1, 1], 1.0), false),
        };
        let mut opt = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.5 });
        m.a.grad.fill(1.0);
        m.b.grad.fill(1.0);
        opt.step(&mut m);
        // a: g = 1 + 0.5·1 = 1.5, w = 1 - 0.15
        assert!((m.a.value.data()[0] - 0.85).abs() < 1e-12);
        // b: no decay
        assert!((m.b.value.data()[0] - 0.9).abs() < 1e-12);
        opt.step(&mut m);
        // a: g = 1 + 0.5·0.85 = 1.425, v = 0.9·1.5 + 1.425 = 2.775
        assert!((m.a.value.data()[0] - (0.85 - 0.2775)).abs() < 1e-12);
        // b: v = 0.9 + 1 = 1.9
        assert!((m.b.value.data()[0] - (0.9 - 0.19)).abs() < 1e-12);
    }

    #[test]
    fn exponential_schedule() {
        let s = ExponentialLr { initial: 0.001, gamma: 0.98 };
        assert_eq!(s.lr_at(0), 0.001);
        assert!((s.lr_at(200) / 0.001 - 0.98f64.powi(200)).abs() < 1e-15);
    }
}
