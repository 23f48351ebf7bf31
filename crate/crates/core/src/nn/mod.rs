//! Small numerical kernel: tensors, the handful of layers the pipeline
//! needs (each with a hand-written backward pass), BCE loss, Adam, and a
//! finite-difference gradient checker.

mod gradcheck;
mod layers;
mod loss;
mod optim;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, Checkable, GradCheckOptions, GradCheckReport};
pub use layers::{
    relu, relu_backward, relu_derivative, sigmoid, sigmoid_backward, sigmoid_derivative, tanh, tanh_backward,
    tanh_derivative, Activation, BatchNorm, BatchNormCache, Conv1d, Dense, Dropout, MaxPool1d,
};
pub use loss::{bce_logit_grad, bce_loss, BCE_CLAMP};
pub use optim::{Adam, TrainConfig};
pub use rng::RngStream;
pub use tensor::{matmul, Scalar, Tensor};
pub(crate) use tensor::{accumulate_at_b, matmul_a_bt};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input length {len} shorter than kernel {kernel}")]
    KernelTooLong { len: usize, kernel: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Train-time vs inference behavior for batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Parameter { value, grad: Tensor::zeros(&shape), adam_m: Tensor::zeros(&shape), adam_v: Tensor::zeros(&shape) }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Parameter::new(Tensor::zeros(shape))
    }

    /// Glorot-uniform initialization.
    pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..shape.iter().product::<usize>()).map(|_| T::from_f64(rng.uniform(-limit, limit))).collect();
        Parameter::new(Tensor::from_vec(shape, data).expect("length matches shape"))
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Same values in another precision; optimizer state is reset.
    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter::new(self.value.cast())
    }
}
