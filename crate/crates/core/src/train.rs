//! Training and evaluation over temporal batches.
//!
//! Within a batch every prediction reads the memory as it stood before the
//! batch and the history strictly before its own event. Memory is flushed with
//! the batch's true events only after all of its predictions are made.

use crate::config::{EmbeddingKind, ModelKind, TrainConfig};
use crate::dgcnn::Dgcnn;
use crate::error::{config, Error, Result};
use crate::events::{chronological_split, sample_negative_destination, Event, EventStream, NodeId, Region, SplitSpec, TemporalAdjacency};
use crate::memory::{Embedding, MemoryState, MessageBuffer, TemporalMemory};
use crate::metrics::average_precision;
use crate::mlp::MlpDecoder;
use crate::rng::{derived_rng, TAG_DROPOUT, TAG_INIT, TAG_NEG_EVAL, TAG_NEG_TRAIN};
use crate::seal::{drnl_label, extract_enclosing_subgraph, node_features_on_tape, EnclosingSubgraph};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Instant;
use tgn_seal_autograd::{Adam, AdamConfig, Gradients, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub enum Decoder {
    Seal(Dgcnn),
    Mlp(MlpDecoder),
}

/// Parameters and module layout of one model.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore<f64>,
    pub memory: TemporalMemory,
    pub embedding: Embedding,
    pub decoder: Decoder,
}

impl Model {
    /// Builds a model for a configuration whose `sortpool_k` and `time_scale`
    /// are already resolved.
    pub fn new(cfg: &TrainConfig, feat_dim: usize) -> Result<Self> {
        let mut rng = derived_rng(cfg.seed, &[TAG_INIT]);
        let mut store = ParamStore::new();
        let memory = TemporalMemory::new(&mut store, cfg.d_mem, cfg.d_time, feat_dim, cfg.aggregation, &mut rng)?;
        let embedding = match cfg.effective_embedding() {
            EmbeddingKind::Identity => Embedding::Identity,
            EmbeddingKind::TimeProjection => {
                let scale = cfg
                    .time_scale
                    .ok_or_else(|| config("time_scale must be resolved before building the model"))?;
                Embedding::time_projection(&mut store, cfg.d_mem, scale)?
            }
        };
        let decoder = match cfg.model {
            ModelKind::TgnSeal => {
                let k = cfg
                    .sortpool_k
                    .ok_or_else(|| config("sortpool_k must be resolved before building the model"))?;
                Decoder::Seal(Dgcnn::new(&mut store, cfg.dgcnn_config(k), &mut rng)?)
            }
            ModelKind::TgnId | ModelKind::TgnTime => Decoder::Mlp(MlpDecoder::new(&mut store, cfg.d_mem, &mut rng)?),
        };
        Ok(Self {
            store,
            memory,
            embedding,
            decoder,
        })
    }
}

/// One scored candidate: slot 0 is the true event, later slots are negatives
/// that keep the source and swap in a sampled destination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredItem {
    pub event_idx: usize,
    pub slot: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub label: bool,
    pub unseen: bool,
    pub score: f64,
}

#[derive(Clone, Copy, Debug)]
struct Item {
    event_idx: usize,
    slot: usize,
    src: NodeId,
    dst: NodeId,
    t: f64,
    label: bool,
    unseen: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Train { epoch: usize },
    Eval,
}

/// Mean gap between consecutive events of the same node over visible training
/// events, or 1 when there is none.
pub fn mean_node_gap(stream: &EventStream, split: &SplitSpec) -> f64 {
    let mut last: HashMap<NodeId, f64> = HashMap::new();
    let (mut sum, mut count) = (0.0, 0usize);
    for e in &stream.events()[split.range(Region::Train)] {
        if !split.is_visible(e) {
            continue;
        }
        for n in [e.src, e.dst] {
            if let Some(prev) = last.insert(n, e.ts) {
                sum += e.ts - prev;
                count += 1;
            }
        }
    }
    if count == 0 || sum <= 0.0 {
        1.0
    } else {
        sum / count as f64
    }
}

/// Parameter snapshot in store order.
type NamedTensors = Vec<(String, Tensor<f64>)>;

/// Training state for one run over one stream.
pub struct Session<'a> {
    stream: &'a EventStream,
    split: SplitSpec,
    adj: TemporalAdjacency,
    cfg: TrainConfig,
    model: Model,
    memory: MemoryState<f64>,
    adam: Adam<f64>,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Session<'a> {
    /// Session with the chronological split derived from the configuration.
    pub fn new(stream: &'a EventStream, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let split = chronological_split(stream, cfg.train_frac, cfg.val_frac, cfg.unseen_frac, cfg.seed)?;
        Self::with_split(stream, cfg, split)
    }

    pub fn with_split(stream: &'a EventStream, cfg: &TrainConfig, split: SplitSpec) -> Result<Self> {
        cfg.validate()?;
        if split.len != stream.len() || split.val_end > split.len || split.train_end > split.val_end {
            return Err(config(format!(
                "split boundaries {}/{}/{} do not fit a stream of {} events",
                split.train_end,
                split.val_end,
                split.len,
                stream.len()
            )));
        }
        if split.train_end == 0 {
            return Err(config("training region is empty"));
        }
        if stream.num_nodes() < 3 {
            return Err(config("negative sampling needs a stream with at least 3 nodes"));
        }
        let adj = TemporalAdjacency::build_filtered(stream, |e| split.is_visible(e));
        let mut cfg = cfg.clone();
        if cfg.effective_embedding() == EmbeddingKind::TimeProjection && cfg.time_scale.is_none() {
            cfg.time_scale = Some(mean_node_gap(stream, &split));
        }
        if cfg.model == ModelKind::TgnSeal && cfg.sortpool_k.is_none() {
            cfg.sortpool_k = Some(auto_sortpool_k(stream, &split, &adj, &cfg)?);
        }
        let model = Model::new(&cfg, stream.feat_dim())?;
        let adam = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            &model.store,
        );
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            stream,
            split,
            adj,
            memory: MemoryState::new(stream.num_nodes(), cfg.d_mem),
            cfg,
            model,
            adam,
            pool,
        })
    }

    /// Configuration with `sortpool_k` and `time_scale` filled in.
    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn memory(&self) -> &MemoryState<f64> {
        &self.memory
    }

    /// Enclosing subgraph over the session's visible history.
    pub fn extract(&self, u: NodeId, v: NodeId, t: f64) -> Result<EnclosingSubgraph> {
        let mut sub = extract_enclosing_subgraph(&self.adj, u, v, t, self.cfg.k, self.cfg.cap)?;
        sub.labels = drnl_label(&sub, self.cfg.l_max);
        Ok(sub)
    }

    pub fn reset_memory(&mut self) {
        self.memory.reset();
    }

    fn items(&self, events: &[Event], phase: Phase) -> Result<Vec<Item>> {
        let mut items = Vec::with_capacity(events.len() * (1 + self.cfg.neg_per_pos));
        for e in events {
            if !self.split.is_visible(e) {
                continue;
            }
            let unseen = self.split.is_unseen_event(e);
            let base = Item {
                event_idx: e.idx,
                slot: 0,
                src: e.src,
                dst: e.dst,
                t: e.ts,
                label: true,
                unseen,
            };
            items.push(base);
            for slot in 1..=self.cfg.neg_per_pos {
                let coords = match phase {
                    Phase::Train { epoch } => [TAG_NEG_TRAIN, epoch as u64, e.idx as u64, slot as u64],
                    Phase::Eval => [TAG_NEG_EVAL, 0, e.idx as u64, slot as u64],
                };
                let mut rng = derived_rng(self.cfg.seed, &coords);
                let dst = sample_negative_destination(&mut rng, self.stream.num_nodes(), e.src, e.dst)?;
                items.push(Item {
                    slot,
                    dst,
                    label: false,
                    ..base
                });
            }
        }
        Ok(items)
    }

    /// Probability for one item recorded on `tape`.
    fn forward(
        &self,
        tape: &mut Tape<f64>,
        item: &Item,
        dropout: Option<&mut dyn RngCore>,
        grad: bool,
    ) -> Result<Var> {
        let store = &self.model.store;
        let logit = match &self.model.decoder {
            Decoder::Seal(net) => {
                let sub = extract_enclosing_subgraph(&self.adj, item.src, item.dst, item.t, self.cfg.k, self.cfg.cap)?;
                let s = self.memory_rows(tape, &sub.nodes, grad)?;
                let x = node_features_on_tape(tape, store, &sub, &self.memory, &self.model.embedding, s, self.cfg.l_max, grad)?;
                let prop = Dgcnn::propagation(&sub)?;
                net.logit_on_tape(tape, store, &prop, x, dropout, grad)?
            }
            Decoder::Mlp(mlp) => {
                let nodes = [item.src, item.dst];
                let s = self.memory_rows(tape, &nodes, grad)?;
                let z = self
                    .model
                    .embedding
                    .apply_on_tape(tape, store, &self.memory, &nodes, s, item.t, grad)?;
                let zu = tape.slice(z, 0, 0, 1)?;
                let zv = tape.slice(z, 0, 1, 1)?;
                mlp.logit_on_tape(tape, store, zu, zv, grad)?
            }
        };
        Ok(tape.sigmoid(logit))
    }

    fn memory_rows(&self, tape: &mut Tape<f64>, nodes: &[NodeId], grad: bool) -> Result<Var> {
        if grad && self.cfg.train_memory {
            self.model
                .memory
                .rows_through_last_update(tape, &self.model.store, &self.memory, nodes)
        } else {
            Ok(tape.constant(self.memory.gather(nodes)))
        }
    }

    fn map_items<R: Send>(&self, items: &[Item], f: impl Fn(&Item) -> Result<R> + Sync) -> Result<Vec<R>> {
        match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }

    fn score_items(&self, items: &[Item]) -> Result<Vec<ScoredItem>> {
        self.map_items(items, |item| {
            let mut tape = Tape::new();
            let p = self.forward(&mut tape, item, None, false)?;
            Ok(ScoredItem {
                event_idx: item.event_idx,
                slot: item.slot,
                src: item.src,
                dst: item.dst,
                t: item.t,
                label: item.label,
                unseen: item.unseen,
                score: tape.value(p).data()[0],
            })
        })
    }

    /// Evaluation-mode scores for the events (each with its seeded negatives)
    /// against the current memory. Events masked out of training are skipped.
    pub fn score_events(&self, events: &[Event]) -> Result<Vec<ScoredItem>> {
        let items = self.items(events, Phase::Eval)?;
        self.score_items(&items)
    }

    /// One optimizer step on a batch. Returns the mean BCE over its items, or
    /// `None` when every event of the batch is masked.
    pub fn train_batch(&mut self, events: &[Event], epoch: usize) -> Result<Option<f64>> {
        let items = self.items(events, Phase::Train { epoch })?;
        if items.is_empty() {
            return Ok(None);
        }
        let seed = self.cfg.seed;
        let per_item: Vec<(f64, Gradients<f64>)> = self.map_items(&items, |item| {
            let mut tape = Tape::new();
            let mut rng = derived_rng(
                seed,
                &[TAG_DROPOUT, epoch as u64, item.event_idx as u64, item.slot as u64],
            );
            let p = self.forward(&mut tape, item, Some(&mut rng), true)?;
            let loss = tape.bce(p, &[if item.label { 1.0 } else { 0.0 }])?;
            let value = tape.value(loss).data()[0];
            Ok((value, tape.backward(loss)?))
        })?;
        let scale = 1.0 / items.len() as f64;
        self.model.store.zero_grad();
        let mut total = 0.0;
        for (loss, grads) in &per_item {
            total += loss;
            self.model.store.accumulate(grads, scale);
        }
        self.adam.step(&mut self.model.store);
        Ok(Some(total * scale))
    }

    /// Applies the true events (masked ones excluded) to memory.
    pub fn flush_events(&mut self, events: &[Event]) -> Result<()> {
        let mut buffer = MessageBuffer::new();
        for e in events.iter().filter(|e| self.split.is_visible(e)) {
            let (a, b) = self.model.memory.compute_messages(e, &self.memory, &self.model.store)?;
            buffer.push(a);
            buffer.push(b);
        }
        self.model.memory.flush_batch(&mut buffer, &mut self.memory, &self.model.store)?;
        Ok(())
    }

    fn batches(&self, region: Region) -> Vec<std::ops::Range<usize>> {
        let r = self.split.range(region);
        let bs = self.cfg.batch_size;
        (r.start..r.end)
            .step_by(bs)
            .map(|s| s..(s + bs).min(r.end))
            .collect()
    }

    /// Flushes every batch of the region without predicting.
    pub fn replay(&mut self, region: Region) -> Result<()> {
        for b in self.batches(region) {
            let stream = self.stream;
            self.flush_events(&stream.events()[b])?;
        }
        Ok(())
    }

    /// Scores each batch of the region, then flushes it.
    pub fn score_region(&mut self, region: Region) -> Result<Vec<ScoredItem>> {
        let mut out = Vec::new();
        for b in self.batches(region) {
            let stream = self.stream;
            let events = &stream.events()[b];
            out.extend(self.score_events(events)?);
            self.flush_events(events)?;
        }
        Ok(out)
    }

    /// Resets memory and trains one pass over the training region. Returns
    /// the per-batch losses.
    pub fn train_epoch(&mut self, epoch: usize) -> Result<Vec<f64>> {
        self.reset_memory();
        let mut losses = Vec::new();
        for b in self.batches(Region::Train) {
            let stream = self.stream;
            let events = &stream.events()[b];
            if let Some(loss) = self.train_batch(events, epoch)? {
                losses.push(loss);
            }
            self.flush_events(events)?;
        }
        Ok(losses)
    }

    /// Pooled validation AP, continuing memory from the end of training.
    pub fn validate(&mut self) -> Result<f64> {
        let scored = self.score_region(Region::Val)?;
        let (scores, labels): (Vec<f64>, Vec<bool>) = scored.iter().map(|s| (s.score, s.label)).unzip();
        average_precision(&scores, &labels)
            .map_err(|_| config("validation region has no events to score"))
    }

    /// Trains with early stopping on validation AP and restores the best
    /// parameters. Returns the per-batch loss curve and per-epoch AP curve.
    pub fn fit(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.split.range(Region::Val).is_empty() {
            return Err(config("validation region is empty"));
        }
        let mut loss_curve = Vec::new();
        let mut val_curve = Vec::new();
        let mut best: Option<(f64, NamedTensors)> = None;
        let mut stale = 0;
        for epoch in 0..self.cfg.epochs {
            let losses = self.train_epoch(epoch)?;
            if losses.is_empty() {
                return Err(config("every training event is masked"));
            }
            loss_curve.extend(losses);
            let ap = self.validate()?;
            val_curve.push(ap);
            if best.as_ref().is_none_or(|(b, _)| ap > *b) {
                best = Some((ap, self.model.store.named_values()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.cfg.patience {
                    break;
                }
            }
        }
        if let Some((_, params)) = best {
            for (name, value) in params {
                self.model.store.set(&name, value)?;
            }
        }
        Ok((loss_curve, val_curve))
    }

    /// Replays training and validation into fresh memory, then scores the test
    /// region. Returns `(ap_seen, ap_unseen)`; a subset without positives is
    /// `None`.
    pub fn evaluate_test(&mut self) -> Result<(Option<f64>, Option<f64>)> {
        self.reset_memory();
        self.replay(Region::Train)?;
        self.replay(Region::Val)?;
        let scored = self.score_region(Region::Test)?;
        let ap = |unseen: bool| -> Result<Option<f64>> {
            let (scores, labels): (Vec<f64>, Vec<bool>) = scored
                .iter()
                .filter(|s| s.unseen == unseen)
                .map(|s| (s.score, s.label))
                .unzip();
            if !labels.contains(&true) {
                return Ok(None);
            }
            average_precision(&scores, &labels).map(Some)
        };
        Ok((ap(false)?, ap(true)?))
    }

    /// Parameters plus memory in checkpoint order.
    pub fn checkpoint_tensors(&self) -> Vec<(String, Tensor<f64>)> {
        let mut named = self.model.store.named_values();
        named.extend(self.memory.to_named_tensors());
        named
    }

    /// Loads parameters saved by [`Session::checkpoint_tensors`]; memory
    /// entries are ignored because evaluation rebuilds memory by replay.
    pub fn load_parameters(&mut self, named: &[(String, Tensor<f64>)]) -> Result<()> {
        let mut seen = 0;
        for (name, value) in named {
            if name.starts_with("memory.") {
                continue;
            }
            self.model.store.set(name, value.clone())?;
            seen += 1;
        }
        if seen != self.model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {seen} parameters, model has {}",
                self.model.store.len()
            )));
        }
        Ok(())
    }
}

/// SortPooling size such that about `sortpool_quantile` of epoch-0 training
/// subgraphs (positives and negatives) have at least that many nodes.
fn auto_sortpool_k(
    stream: &EventStream,
    split: &SplitSpec,
    adj: &TemporalAdjacency,
    cfg: &TrainConfig,
) -> Result<usize> {
    let mut sizes = Vec::new();
    for e in &stream.events()[split.range(Region::Train)] {
        if !split.is_visible(e) {
            continue;
        }
        let mut dsts = vec![e.dst];
        for slot in 1..=cfg.neg_per_pos {
            let mut rng = derived_rng(cfg.seed, &[TAG_NEG_TRAIN, 0, e.idx as u64, slot as u64]);
            dsts.push(sample_negative_destination(&mut rng, stream.num_nodes(), e.src, e.dst)?);
        }
        for dst in dsts {
            sizes.push(extract_enclosing_subgraph(adj, e.src, dst, e.ts, cfg.k, cfg.cap)?.len());
        }
    }
    let min = cfg.min_sortpool_k();
    if sizes.is_empty() {
        return Ok(min);
    }
    sizes.sort_unstable();
    let idx = (((1.0 - cfg.sortpool_quantile) * sizes.len() as f64).floor() as usize).min(sizes.len() - 1);
    Ok(sizes[idx].max(min))
}

/// Output of one full run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub seed: u64,
    pub ap_seen: Option<f64>,
    pub ap_unseen: Option<f64>,
    pub loss_curve: Vec<f64>,
    pub val_ap_curve: Vec<f64>,
    pub wall_time_s: f64,
    pub config: TrainConfig,
}

pub struct RunOutcome {
    pub report: MetricsReport,
    pub checkpoint: Vec<(String, Tensor<f64>)>,
}

/// Trains, early-stops and evaluates one model.
pub fn train_and_evaluate(stream: &EventStream, cfg: &TrainConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    let session = Session::new(stream, cfg)?;
    finish_run(session, start)
}

pub fn train_and_evaluate_with_split(
    stream: &EventStream,
    cfg: &TrainConfig,
    split: SplitSpec,
) -> Result<RunOutcome> {
    let start = Instant::now();
    let session = Session::with_split(stream, cfg, split)?;
    finish_run(session, start)
}

fn finish_run(mut session: Session<'_>, start: Instant) -> Result<RunOutcome> {
    let (loss_curve, val_ap_curve) = session.fit()?;
    let (ap_seen, ap_unseen) = session.evaluate_test()?;
    let cfg = session.config().clone();
    Ok(RunOutcome {
        report: MetricsReport {
            model: cfg.model.name().to_string(),
            seed: cfg.seed,
            ap_seen,
            ap_unseen,
            loss_curve,
            val_ap_curve,
            wall_time_s: start.elapsed().as_secs_f64(),
            config: cfg,
        },
        checkpoint: session.checkpoint_tensors(),
    })
}
