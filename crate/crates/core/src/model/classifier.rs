use serde::{Deserialize, Serialize};

use crate::nn::{relu, relu_backward, sigmoid, BatchNorm, BatchNormCache, Dense, Dropout, Mode, NnError};
use crate::nn::{Parameter, RngStream, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcConfig {
    /// Hidden widths; each is Dense → BatchNorm → ReLU → Dropout.
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for CcConfig {
    fn default() -> Self {
        CcConfig { hidden: vec![1024, 512], dropout: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreClassifier<T = f32> {
    pub config: CcConfig,
    pub hidden: Vec<(Dense<T>, BatchNorm<T>)>,
    pub output: Dense<T>,
}

pub struct CcCache<T> {
    layers: Vec<LayerCache<T>>,
    final_input: Tensor<T>,
    /// Output probabilities, one per row.
    pub probs: Vec<T>,
}

struct LayerCache<T> {
    input: Tensor<T>,
    bn: Option<BatchNormCache<T>>,
    relu_out: Tensor<T>,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> CoreClassifier<T> {
    pub fn new(input_dim: usize, config: CcConfig, rng: &mut RngStream) -> Result<Self, NnError> {
        Dropout::new(config.dropout)?;
        if config.hidden.contains(&0) {
            return Err(NnError::InvalidConfig("hidden widths must be positive".into()));
        }
        let mut hidden = Vec::new();
        let mut prev = input_dim;
        for &h in &config.hidden {
            hidden.push((Dense::new(prev, h, rng), BatchNorm::new(h)));
            prev = h;
        }
        let output = Dense::new(prev, 1, rng);
        Ok(CoreClassifier { config, hidden, output })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map_or(self.output.inputs(), |(d, _)| d.inputs())
    }

    /// Batched forward. In `Train` mode batch statistics are used (and fold
    /// into the running averages) and dropout draws from `rng`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Result<CcCache<T>, NnError> {
        let dropout = Dropout::new(self.config.dropout)?;
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut cur = x.clone();
        for (dense, bn) in &mut self.hidden {
            let z = dense.forward(&cur)?;
            let (normed, bn_cache) = bn.forward(&z, mode);
            let relu_out = relu(&normed);
            let (dropped, mask) = dropout.forward(&relu_out, mode, rng);
            layers.push(LayerCache { input: std::mem::replace(&mut cur, dropped), bn: bn_cache, relu_out, mask });
        }
        let logits = self.output.forward(&cur)?;
        let probs = sigmoid(&logits).into_data();
        Ok(CcCache { layers, final_input: cur, probs })
    }

    /// Inference-mode probabilities; does not touch any state.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<T>, NnError> {
        let mut cur = x.clone();
        for (dense, bn) in &self.hidden {
            cur = relu(&bn.forward_infer(&dense.forward(&cur)?));
        }
        Ok(sigmoid(&self.output.forward(&cur)?).into_data())
    }

    /// Replace every BatchNorm's running statistics with the exact
    /// population mean and (biased) variance of its input over `x`, taking
    /// layers in order with inference-mode upstream layers.
    pub fn recalibrate(&mut self, x: &Tensor<T>) -> Result<(), NnError> {
        let n = x.rows();
        if n == 0 {
            return Ok(());
        }
        let inv = T::from_f64(1.0 / n as f64);
        let mut cur = x.clone();
        for (dense, bn) in &mut self.hidden {
            let z = dense.forward(&cur)?;
            let f = z.cols();
            let mut mean = vec![T::zero(); f];
            for r in 0..n {
                for (m, &v) in mean.iter_mut().zip(z.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv);
            let mut var = vec![T::zero(); f];
            for r in 0..n {
                for ((s, &v), &m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s *= inv);
            bn.running_mean = mean;
            bn.running_var = var;
            cur = relu(&bn.forward_infer(&z));
        }
        Ok(())
    }

    /// Backward from dL/dlogit (one per row); returns dL/dx.
    pub fn backward(&mut self, cache: &CcCache<T>, dlogits: &[T]) -> Tensor<T> {
        let dl = Tensor::from_vec(&[dlogits.len(), 1], dlogits.to_vec()).expect("one logit per row");
        let mut d = self.output.backward(&cache.final_input, &dl);
        for ((dense, bn), lc) in self.hidden.iter_mut().zip(&cache.layers).rev() {
            let d_relu = Dropout::backward(&d, lc.mask.as_deref());
            let d_bn = relu_backward(&lc.relu_out, &d_relu);
            let d_z = match &lc.bn {
                Some(c) => bn.backward(c, &d_bn),
                None => {
                    let z = dense.forward(&lc.input).expect("shapes checked on the way in");
                    bn.backward_infer(&z, &d_bn)
                }
            };
            d = dense.backward(&lc.input, &d_z);
        }
        d
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for (dense, bn) in &mut self.hidden {
            out.extend(dense.params_mut());
            out.extend(bn.params_mut());
        }
        out.extend(self.output.params_mut());
        out
    }

    pub fn cast<U: Scalar>(&self) -> CoreClassifier<U> {
        CoreClassifier {
            config: self.config.clone(),
            hidden: self.hidden.iter().map(|(d, b)| (d.cast(), b.cast())).collect(),
            output: self.output.cast(),
        }
    }

    /// Weights and running statistics under stable names.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (dense, bn)) in self.hidden.iter().enumerate() {
            let p = format!("cc.hidden{}", i + 1);
            out.push((format!("{p}.w"), dense.w.value.clone()));
            out.push((format!("{p}.b"), dense.b.value.clone()));
            out.push((format!("{p}.bn.gamma"), bn.gamma.value.clone()));
            out.push((format!("{p}.bn.beta"), bn.beta.value.clone()));
            let n = bn.features();
            out.push((format!("{p}.bn.mean"), Tensor::from_vec(&[n], bn.running_mean.clone()).expect("n")));
            out.push((format!("{p}.bn.var"), Tensor::from_vec(&[n], bn.running_var.clone()).expect("n")));
        }
        out.push(("cc.out.w".into(), self.output.w.value.clone()));
        out.push(("cc.out.b".into(), self.output.b.value.clone()));
        out
    }

    pub fn from_named_tensors(config: CcConfig, mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Option<Self> {
        let mut hidden = Vec::new();
        for i in 0..config.hidden.len() {
            let p = format!("cc.hidden{}", i + 1);
            let dense = Dense { w: Parameter::new(lookup(&format!("{p}.w"))?), b: Parameter::new(lookup(&format!("{p}.b"))?) };
            let mut bn = BatchNorm::new(config.hidden[i]);
            bn.gamma = Parameter::new(lookup(&format!("{p}.bn.gamma"))?);
            bn.beta = Parameter::new(lookup(&format!("{p}.bn.beta"))?);
            bn.running_mean = lookup(&format!("{p}.bn.mean"))?.into_data();
            bn.running_var = lookup(&format!("{p}.bn.var"))?.into_data();
            hidden.push((dense, bn));
        }
        let output = Dense { w: Parameter::new(lookup("cc.out.w")?), b: Parameter::new(lookup("cc.out.b")?) };
        Some(CoreClassifier { config, hidden, output })
    }
}

/// Single-embedding inference.
pub fn cc_forward(embedding: &[f32], cc: &CoreClassifier<f32>) -> Result<f32, NnError> {
    if embedding.len() != cc.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "classifier expects {} inputs, got {}",
            cc.input_dim(),
            embedding.len()
        )));
    }
    let x = Tensor::from_vec(&[1, embedding.len()], embedding.to_vec())?;
    Ok(cc.predict(&x)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Vulnerable,
    NonVulnerable,
}

/// Vulnerable iff `probability ≥ threshold`.
pub fn classify(probability: f64, threshold: f64) -> Classification {
    if probability >= threshold {
        Classification::Vulnerable
    } else {
        Classification::NonVulnerable
    }
}
