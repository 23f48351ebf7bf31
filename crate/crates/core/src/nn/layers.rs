use serde::{Deserialize, Serialize};

use super::tensor::{accumulate_at_b, gemm_into, matmul_a_bt};
use super::{Mode, NnError, Parameter, RngStream, Scalar, Tensor};

/// `y = xW + b` over a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        Dense { w: Parameter::glorot(&[inputs, outputs], inputs, outputs, rng), b: Parameter::zeros(&[outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, inp) = (x.rows(), x.cols());
        if inp != self.inputs() {
            return Err(NnError::ShapeMismatch(format!(
                "dense expects {} inputs, got {:?}",
                self.inputs(),
                x.shape()
            )));
        }
        let out = self.outputs();
        let mut y = Tensor::zeros(&[n, out]);
        for r in 0..n {
            y.row_mut(r).copy_from_slice(self.b.value.data());
        }
        gemm_into(n, inp, out, x.data(), inp as isize, 1, self.w.value.data(), out as isize, 1, T::one(), y.data_mut());
        Ok(y)
    }

    /// Accumulates into `w.grad`/`b.grad` and returns dL/dx.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, inp, out) = (x.rows(), self.inputs(), self.outputs());
        accumulate_at_b(x.data(), inp, dy.data(), out, n, self.w.grad.data_mut());
        let bg = self.b.grad.data_mut();
        for r in 0..n {
            for (g, &d) in bg.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let dx = matmul_a_bt(dy.data(), n, out, self.w.value.data(), inp);
        Tensor::from_vec(&[n, inp], dx).expect("dx shape")
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense { w: self.w.cast(), b: self.b.cast() }
    }
}

/// Valid (unpadded) 1-D convolution over `[len × in_ch]` inputs.
///
/// Windows of a row-major input are contiguous runs of `k·in_ch` values
/// starting every `stride·in_ch`, so the im2col matrix is just a strided
/// view and the whole layer is one GEMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T = f32> {
    /// `[k × in_ch × out_ch]`
    pub kernel: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(k: usize, in_ch: usize, out_ch: usize, stride: usize, rng: &mut RngStream) -> Self {
        Conv1d {
            kernel: Parameter::glorot(&[k, in_ch, out_ch], k * in_ch, k * out_ch, rng),
            bias: Parameter::zeros(&[out_ch]),
            stride,
        }
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    /// `floor((len − k)/stride) + 1`
    pub fn out_len(&self, len: usize) -> Result<usize, NnError> {
        let k = self.kernel_len();
        if len < k {
            return Err(NnError::KernelTooLong { len, kernel: k });
        }
        Ok((len - k) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let in_ch = self.in_channels();
        if x.shape().len() != 2 || x.cols() != in_ch {
            return Err(NnError::ShapeMismatch(format!("conv1d expects [len x {in_ch}], got {:?}", x.shape())));
        }
        let out_len = self.out_len(x.rows())?;
        let (kc, out_ch) = (self.kernel_len() * in_ch, self.out_channels());
        let mut y = Tensor::zeros(&[out_len, out_ch]);
        for r in 0..out_len {
            y.row_mut(r).copy_from_slice(self.bias.value.data());
        }
        let row_stride = (self.stride * in_ch) as isize;
        gemm_into(out_len, kc, out_ch, x.data(), row_stride, 1, self.kernel.value.data(), out_ch as isize, 1, T::one(), y.data_mut());
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let in_ch = self.in_channels();
        let (kc, out_ch) = (self.kernel_len() * in_ch, self.out_channels());
        let out_len = dy.rows();
        let step = self.stride * in_ch;
        // kernel.grad[kc × out_ch] += Xcolᵀ · dy
        T::gemm(
            kc,
            out_len,
            out_ch,
            T::one(),
            x.data(),
            1,
            step as isize,
            dy.data(),
            out_ch as isize,
            1,
            T::one(),
            self.kernel.grad.data_mut(),
            out_ch as isize,
            1,
        );
        let bg = self.bias.grad.data_mut();
        for r in 0..out_len {
            for (g, &d) in bg.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let dcol = matmul_a_bt(dy.data(), out_len, out_ch, self.kernel.value.data(), kc);
        let mut dx = Tensor::zeros(x.shape());
        let dxd = dx.data_mut();
        for p in 0..out_len {
            let base = p * step;
            for (d, &g) in dxd[base..base + kc].iter_mut().zip(&dcol[p * kc..(p + 1) * kc]) {
                *d += g;
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }

    pub fn cast<U: Scalar>(&self) -> Conv1d<U> {
        Conv1d { kernel: self.kernel.cast(), bias: self.bias.cast(), stride: self.stride }
    }
}

/// Max pooling with window 2 and stride 2 over `[len × ch]`; a trailing odd
/// row is dropped.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPool1d;

impl MaxPool1d {
    pub fn out_len(len: usize) -> usize {
        len / 2
    }

    /// Returns the pooled tensor and, per output element, the source row.
    pub fn forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
        let (len, ch) = (x.rows(), x.cols());
        let out_len = len / 2;
        let mut y = Tensor::zeros(&[out_len, ch]);
        let mut argmax = vec![0; out_len * ch];
        for p in 0..out_len {
            let (a, b) = (x.row(2 * p), x.row(2 * p + 1));
            for c in 0..ch {
                // Ties go to the first element.
                let (v, src) = if b[c] > a[c] { (b[c], 2 * p + 1) } else { (a[c], 2 * p) };
                y.data_mut()[p * ch + c] = v;
                argmax[p * ch + c] = src;
            }
        }
        (y, argmax)
    }

    pub fn backward<T: Scalar>(dy: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Tensor<T> {
        let ch = input_shape[1];
        let mut dx = Tensor::zeros(input_shape);
        for (i, (&g, &src)) in dy.data().iter().zip(argmax).enumerate() {
            dx.data_mut()[src * ch + i % ch] += g;
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Tanh => tanh(x),
            Activation::Relu => relu(x),
        }
    }

    /// Backward given the layer *output* `y` (valid for both: relu'(x) is
    /// recoverable from relu(x) > 0).
    pub fn backward_from_output<T: Scalar>(self, y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Tanh => tanh_backward(y, dy),
            Activation::Relu => relu_backward(y, dy),
        }
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Works with either the pre- or post-activation values.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().zip(dy.data()).map(|(&v, &d)| if v > T::zero() { d } else { T::zero() }).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Takes the tanh *output*.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y.data().iter().zip(dy.data()).map(|(&v, &d)| d * (T::one() - v * v)).collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Takes the sigmoid *output*.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y.data().iter().zip(dy.data()).map(|(&v, &d)| d * v * (T::one() - v)).collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

pub fn relu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn tanh_derivative(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

pub fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid_scalar(x);
    s * (1.0 - s)
}

/// Batch normalization over the rows of `[n × features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T = f32> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(Tensor::filled(&[features], T::one())),
            beta: Parameter::zeros(&[features]),
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            momentum: T::from_f64(0.99),
            eps: T::from_f64(1e-5),
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.shape()[0]
    }

    /// Inference mode: normalize with the running statistics.
    pub fn forward_infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let f = self.features();
        let mut y = x.clone();
        let scale: Vec<T> = (0..f)
            .map(|j| self.gamma.value.data()[j] / (self.running_var[j] + self.eps).sqrt())
            .collect();
        for r in 0..x.rows() {
            for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.running_mean[j]) * scale[j] + self.beta.value.data()[j];
            }
        }
        y
    }

    /// Backward through the inference-mode affine map, given its input.
    pub fn backward_infer(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let f = self.features();
        let inv_std: Vec<T> = (0..f).map(|j| T::one() / (self.running_var[j] + self.eps).sqrt()).collect();
        let mut dx = dy.clone();
        for r in 0..x.rows() {
            for j in 0..f {
                let g = dy.row(r)[j];
                let xhat = (x.row(r)[j] - self.running_mean[j]) * inv_std[j];
                self.gamma.grad.data_mut()[j] += g * xhat;
                self.beta.grad.data_mut()[j] += g;
                dx.row_mut(r)[j] = g * self.gamma.value.data()[j] * inv_std[j];
            }
        }
        dx
    }

    /// Training mode: normalize with batch statistics (biased variance) and
    /// fold them into the running averages.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BatchNormCache<T>) {
        let (n, f) = (x.rows(), x.cols());
        let nt = T::from_f64(n as f64);
        let mut mean = vec![T::zero(); f];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nt);
        let mut var = vec![T::zero(); f];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s = *s / nt);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(&[n, f]);
        let mut y = Tensor::zeros(&[n, f]);
        for r in 0..n {
            for j in 0..f {
                let h = (x.row(r)[j] - mean[j]) * inv_std[j];
                xhat.row_mut(r)[j] = h;
                y.row_mut(r)[j] = h * self.gamma.value.data()[j] + self.beta.value.data()[j];
            }
        }
        let keep = self.momentum;
        for j in 0..f {
            self.running_mean[j] = keep * self.running_mean[j] + (T::one() - keep) * mean[j];
            self.running_var[j] = keep * self.running_var[j] + (T::one() - keep) * var[j];
        }
        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> (Tensor<T>, Option<BatchNormCache<T>>) {
        match mode {
            Mode::Train => {
                let (y, cache) = self.forward_train(x);
                (y, Some(cache))
            }
            Mode::Infer => (self.forward_infer(x), None),
        }
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, f) = (dy.rows(), dy.cols());
        let nt = T::from_f64(n as f64);
        let mut sum_dy = vec![T::zero(); f];
        let mut sum_dy_xhat = vec![T::zero(); f];
        for r in 0..n {
            for j in 0..f {
                let d = dy.row(r)[j];
                sum_dy[j] += d;
                sum_dy_xhat[j] += d * cache.xhat.row(r)[j];
            }
        }
        for j in 0..f {
            self.beta.grad.data_mut()[j] += sum_dy[j];
            self.gamma.grad.data_mut()[j] += sum_dy_xhat[j];
        }
        let mut dx = Tensor::zeros(&[n, f]);
        for r in 0..n {
            for j in 0..f {
                let g = self.gamma.value.data()[j];
                let term = nt * dy.row(r)[j] - sum_dy[j] - cache.xhat.row(r)[j] * sum_dy_xhat[j];
                dx.row_mut(r)[j] = g * cache.inv_std[j] / nt * term;
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            running_var: self.running_var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            momentum: U::from_f64(self.momentum.as_f64()),
            eps: U::from_f64(self.eps.as_f64()),
        }
    }
}

/// Inverted dropout: survivors are scaled by `1/(1−p)` at train time, so
/// inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::InvalidConfig(format!("dropout rate {p} outside [0, 1)")));
        }
        Ok(Dropout { p })
    }

    /// Returns the output and, in training mode, the mask applied.
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> (Tensor<T>, Option<Vec<T>>) {
        if mode == Mode::Infer || self.p == 0.0 {
            return (x.clone(), None);
        }
        let keep = T::from_f64(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len()).map(|_| if rng.bernoulli(self.p) { T::zero() } else { keep }).collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        (Tensor::from_vec(x.shape(), data).expect("same shape"), Some(mask))
    }

    pub fn backward<T: Scalar>(dy: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
        match mask {
            None => dy.clone(),
            Some(mask) => {
                let data = dy.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                Tensor::from_vec(dy.shape(), data).expect("same shape")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_and_scalar() {
        let mut rng = RngStream::new(0);
        let mut d = Dense::<f32>::new(3, 3, &mut rng);
        d.w.value = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(d.forward(&x).unwrap(), x);

        let mut s = Dense::<f32>::new(1, 1, &mut rng);
        s.w.value = t(&[1, 1], &[3.]);
        s.b.value = t(&[1], &[1.]);
        assert_eq!(s.forward(&t(&[1, 1], &[2.])).unwrap().data(), &[7.]);
        assert!(matches!(s.forward(&t(&[1, 2], &[1., 1.])), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn conv_lengths() {
        let mut rng = RngStream::new(0);
        let big = Conv1d::<f32>::new(385, 1, 96, 385, &mut rng);
        assert_eq!(big.out_len(38_500).unwrap(), 100);
        let small = Conv1d::<f32>::new(8, 96, 96, 1, &mut rng);
        assert_eq!(small.out_len(50).unwrap(), 43);
        assert_eq!(43 * 96, 4128);
        assert!(matches!(small.out_len(7), Err(NnError::KernelTooLong { len: 7, kernel: 8 })));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = RngStream::new(3);
        let conv = Conv1d::<f64>::new(3, 2, 4, 2, &mut rng);
        let x = Tensor::from_vec(&[9, 2], (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[4, 4]);
        for p in 0..4 {
            for o in 0..4 {
                let mut acc = conv.bias.value.data()[o];
                for k in 0..3 {
                    for c in 0..2 {
                        acc += x.row(p * 2 + k)[c] * conv.kernel.value.data()[(k * 2 + c) * 4 + o];
                    }
                }
                assert!((acc - y.row(p)[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_cases() {
        let (y, _) = MaxPool1d::forward(&t(&[4, 1], &[1., 3., 2., 5.]));
        assert_eq!(y.data(), &[3., 5.]);
        let (y, _) = MaxPool1d::forward(&Tensor::<f32>::filled(&[7, 2], 4.0));
        assert_eq!(y.shape(), &[3, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
        assert_eq!(MaxPool1d::out_len(100), 50);
        assert_eq!(MaxPool1d::out_len(30), 15);
    }

    #[test]
    fn activation_values() {
        assert_eq!(sigmoid(&t(&[1], &[0.])).data(), &[0.5]);
        assert_eq!(relu(&t(&[2], &[-1., 2.])).data(), &[0., 2.]);
        assert!(sigmoid(&t(&[2], &[-1000., 1000.])).all_finite());
    }

    #[test]
    fn batchnorm_zero_variance_gives_beta() {
        let mut bn = BatchNorm::<f32>::new(2);
        bn.beta.value = t(&[2], &[0.25, -1.0]);
        let (y, _) = bn.forward_train(&t(&[3, 2], &[5., 7., 5., 7., 5., 7.]));
        for r in 0..3 {
            assert_eq!(y.row(r), &[0.25, -1.0]);
        }
    }

    #[test]
    fn batchnorm_standardized_passthrough() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1], vec![-1.0, 1.0]).unwrap();
        let (y, _) = bn.forward_train(&x);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1);
        let batches = [vec![1.0, 3.0], vec![2.0, 6.0], vec![0.0, 0.0]];
        let (mut rm, mut rv) = (0.0, 1.0);
        for b in &batches {
            let x = Tensor::from_vec(&[2, 1], b.clone()).unwrap();
            bn.forward_train(&x);
            let mean = (b[0] + b[1]) / 2.0;
            let var = ((b[0] - mean).powi(2) + (b[1] - mean).powi(2)) / 2.0;
            rm = 0.99 * rm + 0.01 * mean;
            rv = 0.99 * rv + 0.01 * var;
        }
        let probe = Tensor::from_vec(&[1, 1], vec![2.5]).unwrap();
        let y = bn.forward_infer(&probe);
        let expected = (2.5 - rm) / (rv + 1e-5).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_infer_backward() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.running_mean = vec![1.0];
        bn.running_var = vec![3.0];
        bn.gamma.value = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let x = Tensor::from_vec(&[2, 1], vec![4.0, 0.0]).unwrap();
        let dy = Tensor::from_vec(&[2, 1], vec![0.5, -1.0]).unwrap();
        let dx = bn.backward_infer(&x, &dy);
        let inv = 1.0 / (3.0f64 + 1e-5).sqrt();
        assert!((dx.data()[0] - 0.5 * 2.0 * inv).abs() < 1e-15);
        assert!((dx.data()[1] + 2.0 * inv).abs() < 1e-15);
        assert!((bn.gamma.grad.data()[0] - (0.5 * 3.0 * inv + 1.0 * inv)).abs() < 1e-15);
        assert_eq!(bn.beta.grad.data()[0], -0.5);
    }

    #[test]
    fn dropout_modes() {
        let d = Dropout::new(0.5).unwrap();
        let x = Tensor::<f32>::filled(&[4, 4], 1.0);
        let mut rng = RngStream::new(1);
        assert_eq!(d.forward(&x, Mode::Infer, &mut rng).0, x);
        let zero = Dropout::new(0.0).unwrap();
        assert_eq!(zero.forward(&x, Mode::Train, &mut rng).0, x);
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn dropout_rate_is_half() {
        let d = Dropout::new(0.5).unwrap();
        let x = Tensor::<f32>::filled(&[1000, 1000], 1.0);
        let (y, _) = d.forward(&x, Mode::Train, &mut RngStream::new(2024));
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((dropped - 0.5).abs() < 0.01, "{dropped}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
