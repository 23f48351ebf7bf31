//! Smart Contract to Vector: graph convolutions over the CFG, SortPooling
//! on the one-channel last layer, and a 1-D convolutional head that turns
//! the pooled node summaries into a fixed-size contract embedding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::ControlFlowGraph;
use crate::n2v::{NodeEmbeddingMatrix, NODE_DIM};
use crate::nn::{accumulate_at_b, matmul_a_bt, relu, relu_backward, Activation, Conv1d, MaxPool1d, NnError};
use crate::nn::{Parameter, RngStream, Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Sc2vError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid sc2v configuration: {0}")]
    InvalidConfig(String),
    #[error("node matrix has {rows} rows but the graph has {nodes} nodes")]
    NodeCountMismatch { rows: usize, nodes: usize },
}

/// Contracts under 750 instructions use the small family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Large,
}

impl SizeClass {
    pub fn sortpool_k(self) -> usize {
        match self {
            SizeClass::Small => 30,
            SizeClass::Large => 100,
        }
    }

    pub fn preset(self) -> Sc2vConfig {
        match self {
            SizeClass::Small => Sc2vConfig::small(),
            SizeClass::Large => Sc2vConfig::large(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Large => "large",
        }
    }
}

impl std::str::FromStr for SizeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(SizeClass::Small),
            "large" => Ok(SizeClass::Large),
            other => Err(format!("unknown size class {other:?}")),
        }
    }
}

impl std::fmt::Display for SizeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How node summaries become one graph-level tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Mean,
    Sum,
    SortTopK,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sc2vConfig {
    pub gcn_sizes: Vec<usize>,
    pub sortpool_k: usize,
    pub conv_channels: usize,
    pub conv2_kernel: usize,
    pub gcn_activation: Activation,
    pub aggregation: Aggregation,
    /// Convolutions in the head, counting the first (kernel = summary width).
    pub conv_layers: usize,
}

impl Sc2vConfig {
    pub fn large() -> Self {
        Sc2vConfig {
            gcn_sizes: vec![256, 128, 1],
            sortpool_k: 100,
            conv_channels: 96,
            conv2_kernel: 8,
            gcn_activation: Activation::Tanh,
            aggregation: Aggregation::SortTopK,
            conv_layers: 2,
        }
    }

    pub fn small() -> Self {
        Sc2vConfig { sortpool_k: 30, ..Self::large() }
    }

    /// Width of the concatenated GCN outputs.
    pub fn summary_width(&self) -> usize {
        self.gcn_sizes.iter().sum()
    }

    fn positions_after_pool(&self) -> usize {
        self.sortpool_k / 2
    }

    /// Length of the contract embedding.
    pub fn embedding_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Mean | Aggregation::Sum => self.summary_width(),
            Aggregation::SortTopK => {
                let shrink = (self.conv2_kernel - 1) * (self.conv_layers - 1);
                (self.positions_after_pool() - shrink) * self.conv_channels
            }
        }
    }

    pub fn validate(&self) -> Result<(), Sc2vError> {
        let bad = |m: &str| Err(Sc2vError::InvalidConfig(m.to_string()));
        if self.gcn_sizes.is_empty() || self.gcn_sizes.contains(&0) {
            return bad("gcn sizes must be nonempty and positive");
        }
        if self.aggregation == Aggregation::SortTopK {
            if self.gcn_sizes.last() != Some(&1) {
                return bad("the last gcn layer must have one channel to sort by");
            }
            if self.sortpool_k < 2 || self.conv_layers == 0 || self.conv_channels == 0 || self.conv2_kernel == 0 {
                return bad("sortpool k, conv layers, channels and kernel must be positive");
            }
            let shrink = (self.conv2_kernel - 1) * (self.conv_layers - 1);
            if self.positions_after_pool() <= shrink {
                return bad("sortpool k too small for the convolution stack");
            }
        }
        Ok(())
    }
}

/// `D^{-1/2}(A_sym + I)D^{-1/2}` stored as sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    /// Directed edges are symmetrized; self-edges are dropped since the
    /// identity term already supplies each node's self-loop.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbors = vec![std::collections::BTreeSet::new(); n];
        for (a, b) in edges {
            if a != b && a < n && b < n {
                neighbors[a].insert(b);
                neighbors[b].insert(a);
            }
        }
        let inv_sqrt: Vec<f64> = neighbors.iter().map(|s| 1.0 / ((s.len() + 1) as f64).sqrt()).collect();
        let rows = (0..n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = neighbors[i].iter().map(|&j| (j, inv_sqrt[i] * inv_sqrt[j])).collect();
                let diag = inv_sqrt[i] * inv_sqrt[i];
                let at = row.partition_point(|&(j, _)| j < i);
                row.insert(at, (i, diag));
                row
            })
            .collect();
        NormalizedAdjacency { n, rows }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[i][j] = w;
            }
        }
        m
    }

    /// `Â · h`. Â is symmetric, so this is also its own backward.
    pub fn propagate<T: Scalar>(&self, h: &Tensor<T>) -> Tensor<T> {
        let cols = h.cols();
        let mut out = Tensor::zeros(&[self.n, cols]);
        for (i, row) in self.rows.iter().enumerate() {
            let dst = out.row_mut(i);
            for &(j, w) in row {
                let w = T::from_f64(w);
                for (d, &s) in dst.iter_mut().zip(h.row(j)) {
                    *d += w * s;
                }
            }
        }
        out
    }
}

pub fn normalize_adjacency(cfg: &ControlFlowGraph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_edges(cfg.node_count(), cfg.index_edges())
}

/// `H_{l+1} = act(Â H_l W_{l+1})` for each layer; returns every `H_l`, l ≥ 1.
pub fn gcn_stack<T: Scalar>(
    adj: &NormalizedAdjacency,
    h0: &Tensor<T>,
    weights: &[Parameter<T>],
    act: Activation,
) -> Result<Vec<Tensor<T>>, Sc2vError> {
    let mut outs: Vec<Tensor<T>> = Vec::with_capacity(weights.len());
    for w in weights {
        let input = outs.last().unwrap_or(h0);
        if input.cols() != w.shape()[0] || input.rows() != adj.n() {
            return Err(NnError::ShapeMismatch(format!("gcn layer {:?} on input {:?}", w.shape(), input.shape())).into());
        }
        let hw = crate::nn::matmul(input, &w.value)?;
        outs.push(act.apply(&adj.propagate(&hw)));
    }
    Ok(outs)
}

/// Sort rows ascending by the last column (ties by row index), keep the
/// last `k`, and prepend zero rows when there are fewer than `k`. The
/// second value maps each output row to its source row.
pub fn sort_pool<T: Scalar>(hcat: &Tensor<T>, k: usize) -> (Tensor<T>, Vec<Option<usize>>) {
    let (n, d) = (hcat.rows(), hcat.cols());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| hcat.row(a)[d - 1].as_f64().total_cmp(&hcat.row(b)[d - 1].as_f64()).then(a.cmp(&b)));
    let kept = &order[n.saturating_sub(k)..];
    let mut source = vec![None; k - kept.len()];
    source.extend(kept.iter().map(|&i| Some(i)));
    let mut out = Tensor::zeros(&[k, d]);
    for (r, src) in source.iter().enumerate() {
        if let Some(i) = src {
            out.row_mut(r).copy_from_slice(hcat.row(*i));
        }
    }
    (out, source)
}

/// GCN weights plus convolutional head, with the architecture that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Sc2vWeights<T = f32> {
    pub config: Sc2vConfig,
    pub gcn: Vec<Parameter<T>>,
    pub convs: Vec<Conv1d<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractEmbedding {
    pub vector: Vec<f32>,
    pub size_class: SizeClass,
}

/// Intermediate values kept for the backward pass.
pub struct Sc2vCache<T> {
    layers: Vec<Tensor<T>>,
    head: HeadCache<T>,
}

enum HeadCache<T> {
    Sort {
        source: Vec<Option<usize>>,
        pooled: Tensor<T>,
        first_out: Tensor<T>,
        pool_argmax: Vec<usize>,
        /// Input and ReLU output of each convolution after the pool.
        tail: Vec<(Tensor<T>, Tensor<T>)>,
    },
    Reduce,
}

impl<T: Scalar> Sc2vWeights<T> {
    pub fn new(config: Sc2vConfig, input_dim: usize, rng: &mut RngStream) -> Result<Self, Sc2vError> {
        config.validate()?;
        let mut gcn = Vec::new();
        let mut prev = input_dim;
        for &size in &config.gcn_sizes {
            gcn.push(Parameter::glorot(&[prev, size], prev, size, rng));
            prev = size;
        }
        let mut convs = Vec::new();
        if config.aggregation == Aggregation::SortTopK {
            let width = config.summary_width();
            convs.push(Conv1d::new(width, 1, config.conv_channels, width, rng));
            for _ in 1..config.conv_layers {
                convs.push(Conv1d::new(config.conv2_kernel, config.conv_channels, config.conv_channels, 1, rng));
            }
        }
        Ok(Sc2vWeights { config, gcn, convs })
    }

    pub fn preset(size: SizeClass, rng: &mut RngStream) -> Self {
        Self::new(size.preset(), NODE_DIM, rng).expect("presets are valid")
    }

    pub fn output_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    pub fn forward(&self, adj: &NormalizedAdjacency, h0: &Tensor<T>) -> Result<(Vec<T>, Sc2vCache<T>), Sc2vError> {
        if h0.rows() != adj.n() {
            return Err(Sc2vError::NodeCountMismatch { rows: h0.rows(), nodes: adj.n() });
        }
        let layers = gcn_stack(adj, h0, &self.gcn, self.config.gcn_activation)?;
        let width = self.config.summary_width();
        let parts: Vec<&Tensor<T>> = layers.iter().collect();
        let hcat = if adj.n() == 0 { Tensor::zeros(&[0, width]) } else { Tensor::concat_cols(&parts) };
        match self.config.aggregation {
            Aggregation::Mean | Aggregation::Sum => {
                let mut v = vec![T::zero(); width];
                for r in 0..hcat.rows() {
                    v.iter_mut().zip(hcat.row(r)).for_each(|(a, &b)| *a += b);
                }
                if self.config.aggregation == Aggregation::Mean && hcat.rows() > 0 {
                    let inv = T::one() / T::from_f64(hcat.rows() as f64);
                    v.iter_mut().for_each(|a| *a *= inv);
                }
                Ok((v, Sc2vCache { layers, head: HeadCache::Reduce }))
            }
            Aggregation::SortTopK => {
                let k = self.config.sortpool_k;
                let (pooled, source) = sort_pool(&hcat, k);
                let flat = pooled.clone().reshape(&[k * width, 1])?;
                let first_out = relu(&self.convs[0].forward(&flat)?);
                let (mut x, pool_argmax) = MaxPool1d::forward(&first_out);
                let mut tail = Vec::new();
                for conv in &self.convs[1..] {
                    let y = relu(&conv.forward(&x)?);
                    tail.push((x, y.clone()));
                    x = y;
                }
                let head = HeadCache::Sort { source, pooled, first_out, pool_argmax, tail };
                Ok((x.into_data(), Sc2vCache { layers, head }))
            }
        }
    }

    /// Accumulate parameter gradients given dL/d(embedding).
    pub fn backward(&mut self, adj: &NormalizedAdjacency, h0: &Tensor<T>, cache: &Sc2vCache<T>, d_out: &[T]) {
        let n = adj.n();
        let width = self.config.summary_width();
        let mut dhcat = Tensor::zeros(&[n, width]);
        match &cache.head {
            HeadCache::Reduce => {
                let scale = if self.config.aggregation == Aggregation::Mean && n > 0 {
                    T::one() / T::from_f64(n as f64)
                } else {
                    T::one()
                };
                for r in 0..n {
                    dhcat.row_mut(r).iter_mut().zip(d_out).for_each(|(a, &g)| *a = g * scale);
                }
            }
            HeadCache::Sort { source, pooled, first_out, pool_argmax, tail } => {
                let last_shape = tail.last().map_or(vec![first_out.rows() / 2, first_out.cols()], |t| t.1.shape().to_vec());
                let mut dy = Tensor::from_vec(&last_shape, d_out.to_vec()).expect("embedding length");
                for (conv, (x, y)) in self.convs[1..].iter_mut().zip(tail).rev() {
                    let dpre = relu_backward(y, &dy);
                    dy = conv.backward(x, &dpre);
                }
                let dfirst = MaxPool1d::backward(&dy, pool_argmax, first_out.shape());
                let dpre = relu_backward(first_out, &dfirst);
                let k = self.config.sortpool_k;
                let flat = pooled.clone().reshape(&[k * width, 1]).expect("pooled size");
                let dflat = self.convs[0].backward(&flat, &dpre);
                for (r, src) in source.iter().enumerate() {
                    if let Some(i) = src {
                        dhcat.row_mut(*i).copy_from_slice(&dflat.data()[r * width..(r + 1) * width]);
                    }
                }
            }
        }
        if n == 0 {
            return;
        }
        // Back through the GCN layers; layer l also receives its slice of dHcat.
        let mut offsets = Vec::with_capacity(self.gcn.len());
        let mut off = 0;
        for &s in &self.config.gcn_sizes {
            offsets.push(off);
            off += s;
        }
        let mut carried: Option<Tensor<T>> = None;
        for l in (0..self.gcn.len()).rev() {
            let size = self.config.gcn_sizes[l];
            let mut dh = Tensor::zeros(&[n, size]);
            for r in 0..n {
                dh.row_mut(r).copy_from_slice(&dhcat.row(r)[offsets[l]..offsets[l] + size]);
            }
            if let Some(c) = carried.take() {
                dh.add_assign(&c);
            }
            let dy = self.config.gcn_activation.backward_from_output(&cache.layers[l], &dh);
            let dp = adj.propagate(&dy);
            let input = if l == 0 { h0 } else { &cache.layers[l - 1] };
            let inp = input.cols();
            accumulate_at_b(input.data(), inp, dp.data(), size, n, self.gcn[l].grad.data_mut());
            if l > 0 {
                let dx = matmul_a_bt(dp.data(), n, size, self.gcn[l].value.data(), inp);
                carried = Some(Tensor::from_vec(&[n, inp], dx).expect("gcn input shape"));
            }
        }
    }

    pub fn embed(&self, adj: &NormalizedAdjacency, h0: &Tensor<T>) -> Result<Vec<T>, Sc2vError> {
        Ok(self.forward(adj, h0)?.0)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = self.gcn.iter_mut().collect();
        for c in &mut self.convs {
            out.extend(c.params_mut());
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Sc2vWeights<U> {
        Sc2vWeights {
            config: self.config.clone(),
            gcn: self.gcn.iter().map(Parameter::cast).collect(),
            convs: self.convs.iter().map(Conv1d::cast).collect(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, w) in self.gcn.iter().enumerate() {
            out.push((format!("sc2v.gcn{}.w", i + 1), &w.value));
        }
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("sc2v.conv{}.kernel", i + 1), &c.kernel.value));
            out.push((format!("sc2v.conv{}.bias", i + 1), &c.bias.value));
        }
        out
    }

    pub fn from_named_tensors(
        config: Sc2vConfig,
        mut lookup: impl FnMut(&str) -> Option<Tensor<T>>,
    ) -> Result<Self, Sc2vError> {
        config.validate()?;
        let missing = |name: &str| Sc2vError::InvalidConfig(format!("missing tensor {name}"));
        let mut take = |name: String| lookup(&name).map(Parameter::new).ok_or_else(|| missing(&name));
        let mut gcn = Vec::new();
        for i in 0..config.gcn_sizes.len() {
            gcn.push(take(format!("sc2v.gcn{}.w", i + 1))?);
        }
        let mut convs = Vec::new();
        if config.aggregation == Aggregation::SortTopK {
            for i in 0..config.conv_layers {
                let stride = if i == 0 { config.summary_width() } else { 1 };
                let kernel = take(format!("sc2v.conv{}.kernel", i + 1))?;
                let bias = take(format!("sc2v.conv{}.bias", i + 1))?;
                convs.push(Conv1d { kernel, bias, stride });
            }
        }
        Ok(Sc2vWeights { config, gcn, convs })
    }
}

impl Sc2vWeights<f32> {
    pub fn embed_contract(
        &self,
        cfg: &ControlFlowGraph,
        nodes: &NodeEmbeddingMatrix,
        size_class: SizeClass,
    ) -> Result<ContractEmbedding, Sc2vError> {
        embed_contract(cfg, nodes, self, size_class)
    }
}

/// normalize → GCN stack → SortPooling → conv head.
pub fn embed_contract(
    cfg: &ControlFlowGraph,
    nodes: &NodeEmbeddingMatrix,
    weights: &Sc2vWeights<f32>,
    size_class: SizeClass,
) -> Result<ContractEmbedding, Sc2vError> {
    if nodes.len() != cfg.node_count() {
        return Err(Sc2vError::NodeCountMismatch { rows: nodes.len(), nodes: cfg.node_count() });
    }
    let adj = normalize_adjacency(cfg);
    let vector = weights.embed(&adj, &nodes.rows)?;
    Ok(ContractEmbedding { vector, size_class })
}
