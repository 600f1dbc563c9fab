use crate::real::Real;
use crate::tensor::Tensor;

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Whether weight decay applies (convolution kernels only).
    pub decay: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Read-only view of a named tensor inside a module.
pub enum TensorRef<'a, T> {
    Param(&'a Param<T>),
    /// Non-trainable state such as norm running statistics.
    Buffer(&'a Tensor<T>),
}

impl<'a, T: Real> TensorRef<'a, T> {
    pub fn tensor(&self) -> &'a Tensor<T> {
        match self {
            TensorRef::Param(p) => &p.value,
            TensorRef::Buffer(b) => b,
        }
    }
}

pub enum TensorMut<'a, T> {
    Param(&'a mut Param<T>),
    Buffer(&'a mut Tensor<T>),
}

impl<T: Real> TensorMut<'_, T> {
    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        match self {
            TensorMut::Param(p) => &mut p.value,
            TensorMut::Buffer(b) => b,
        }
    }
}

/// Anything that owns named parameters and buffers.
///
/// Names are dot-joined paths (`encoder.0.conv1.weight`). Visiting order is
/// fixed for a given architecture.
pub trait Module<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorRef<'_, T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorMut<'_, T>));

    /// Number of trainable scalars.
    fn parameter_count(&self) -> usize {
        let mut count = 0;
        self.visit("", &mut |_, t| {
            if let TensorRef::Param(p) = t {
                count += p.value.len();
            }
        });
        count
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| {
            if let TensorMut::Param(p) = t {
                p.zero_grad();
            }
        });
    }

    /// Names in visiting order.
    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |name, _| names.push(name.to_string()));
        names
    }
}

/// `prefix.name`, or `name` when the prefix is empty.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
