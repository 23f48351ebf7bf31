use log::warn;

use super::{Architecture, ModelError, VulnerabilityModel};
use crate::cfg::ControlFlowGraph;
use crate::n2v::{encode_contract_nodes, DanEncoder, TokenVocab};
use crate::nn::{bce_logit_grad, bce_loss, Adam, Mode, Parameter, RngStream, Tensor, TrainConfig};
use crate::par::{self, Execution};
use crate::sc2v::{normalize_adjacency, NormalizedAdjacency, Sc2vCache, Sc2vWeights, SizeClass};

/// A contract reduced to what SC2V consumes, with its label.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub adj: NormalizedAdjacency,
    pub nodes: Tensor<f32>,
    pub label: bool,
}

pub fn prepare_example(cfg: &ControlFlowGraph, encoder: &DanEncoder, vocab: &TokenVocab, label: bool) -> TrainingExample {
    TrainingExample { adj: normalize_adjacency(cfg), nodes: encode_contract_nodes(cfg, encoder, vocab).rows, label }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub execution: Execution,
    /// Samples per gradient shard. Shards are reduced in index order, so
    /// results do not depend on how many threads run them.
    pub chunk_size: usize,
    pub threshold: f64,
    /// Recompute BatchNorm population statistics over the training set
    /// after every epoch. Momentum averages barely move when an epoch is
    /// only a handful of steps.
    pub recalibrate_bn: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { execution: Execution::Parallel, chunk_size: 16, threshold: 0.5, recalibrate_bn: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Mean mini-batch loss seen while training (dropout active).
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub initial_train_loss: f64,
    pub initial_valid_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// 0-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

fn embed_all(sc2v: &Sc2vWeights<f32>, data: &[TrainingExample], exec: Execution) -> Result<Vec<Vec<f32>>, ModelError> {
    par::map(exec, data, |ex| sc2v.embed(&ex.adj, &ex.nodes)).into_iter().map(|r| r.map_err(Into::into)).collect()
}

/// Mean BCE in inference mode.
pub fn evaluate_loss(model: &VulnerabilityModel, data: &[TrainingExample], exec: Execution) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let embeddings = embed_all(&model.sc2v, data, exec)?;
    let dim = model.embedding_dim();
    let flat: Vec<f32> = embeddings.into_iter().flatten().collect();
    let x = Tensor::from_vec(&[data.len(), dim], flat)?;
    let p: Vec<f64> = model.cc.predict(&x)?.into_iter().map(f64::from).collect();
    let y: Vec<f64> = data.iter().map(|e| if e.label { 1.0 } else { 0.0 }).collect();
    Ok(bce_loss(&p, &y).0)
}

fn zeroed_like(sc2v: &Sc2vWeights<f32>) -> Sc2vWeights<f32> {
    let mut copy = sc2v.clone();
    for p in copy.params_mut() {
        p.zero_grad();
    }
    copy
}

fn add_grads(dst: Vec<&mut Parameter<f32>>, src: &mut Sc2vWeights<f32>) {
    for (d, s) in dst.into_iter().zip(src.params_mut()) {
        d.grad.add_assign(&s.grad);
    }
}

/// Jointly train SC2V and CC with BCE, Adam and early stopping on
/// validation loss (best weights restored).
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    train: &[TrainingExample],
    valid: &[TrainingExample],
    vulnerability: &str,
    size_class: SizeClass,
    config: &TrainConfig,
    arch: &Architecture,
    options: &TrainOptions,
) -> Result<(VulnerabilityModel, TrainHistory), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset("training set is empty".into()));
    }
    if valid.is_empty() {
        return Err(ModelError::EmptyDataset("validation set is empty".into()));
    }
    let mut warnings = Vec::new();
    let positives = train.iter().filter(|e| e.label).count();
    if positives == 0 || positives == train.len() {
        let msg = format!("single-class training set for {vulnerability} ({positives}/{} positive)", train.len());
        warn!("{msg}");
        warnings.push(msg);
    }

    let exec = options.execution;
    let mut model = VulnerabilityModel::new(vulnerability, size_class, arch, config.seed)?;
    model.threshold = options.threshold;
    let root = RngStream::new(config.seed);
    let mut order_rng = root.split(3);
    let mut dropout_rng = root.split(4);
    let mut adam = Adam::new(config.learning_rate);

    let initial_train_loss = evaluate_loss(&model, train, exec)?;
    let initial_valid_loss = evaluate_loss(&model, valid, exec)?;
    let mut best = (model.clone(), initial_valid_loss, 0usize);
    let mut have_best = false;
    let mut epochs = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    let dim = model.embedding_dim();
    let chunk = options.chunk_size.max(1);

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let shards: Vec<&[usize]> = batch.chunks(chunk).collect();
            let sc2v = &model.sc2v;
            let forward: Vec<Result<Vec<(Vec<f32>, Sc2vCache<f32>)>, ModelError>> = par::map(exec, &shards, |shard| {
                shard
                    .iter()
                    .map(|&i| sc2v.forward(&train[i].adj, &train[i].nodes).map_err(ModelError::from))
                    .collect()
            });
            let mut caches = Vec::with_capacity(shards.len());
            let mut flat = Vec::with_capacity(batch.len() * dim);
            for shard in forward {
                let shard = shard?;
                let mut cs = Vec::with_capacity(shard.len());
                for (emb, cache) in shard {
                    flat.extend_from_slice(&emb);
                    cs.push(cache);
                }
                caches.push(cs);
            }
            let x = Tensor::from_vec(&[batch.len(), dim], flat)?;
            let cc_cache = model.cc.forward(&x, Mode::Train, &mut dropout_rng)?;
            let y: Vec<f32> = batch.iter().map(|&i| if train[i].label { 1.0 } else { 0.0 }).collect();
            let probs = Tensor::from_vec(&[batch.len(), 1], cc_cache.probs.clone())?;
            loss_sum += bce_loss(&cc_cache.probs, &y).0 as f64;
            batches += 1;
            let dlogits = bce_logit_grad(&probs, &y).into_data();
            let dx = model.cc.backward(&cc_cache, &dlogits);

            let sc2v = &model.sc2v;
            let work: Vec<(usize, &[usize])> = shards.iter().copied().enumerate().collect();
            let shard_grads: Vec<Sc2vWeights<f32>> = par::map(exec, &work, |&(s, shard)| {
                let mut local = zeroed_like(sc2v);
                let base = s * chunk;
                for (j, &i) in shard.iter().enumerate() {
                    let row = dx.row(base + j);
                    local.backward(&train[i].adj, &train[i].nodes, &caches[s][j], row);
                }
                local
            });
            for mut g in shard_grads {
                add_grads(model.sc2v.params_mut(), &mut g);
            }
            let mut params = model.sc2v.params_mut();
            params.extend(model.cc.params_mut());
            adam.step_all(params);
        }
        if options.recalibrate_bn {
            let flat: Vec<f32> = embed_all(&model.sc2v, train, exec)?.into_iter().flatten().collect();
            model.cc.recalibrate(&Tensor::from_vec(&[train.len(), dim], flat)?)?;
        }
        let valid_loss = evaluate_loss(&model, valid, exec)?;
        epochs.push(EpochStats { train_loss: loss_sum / batches.max(1) as f64, valid_loss });
        if !have_best || valid_loss < best.1 {
            best = (model.clone(), valid_loss, epoch);
            have_best = true;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_model, best_valid_loss, best_epoch) = best;
    let history = TrainHistory {
        initial_train_loss,
        initial_valid_loss,
        epochs,
        best_epoch,
        best_valid_loss,
        stopped_early,
        warnings,
    };
    Ok((best_model, history))
}
