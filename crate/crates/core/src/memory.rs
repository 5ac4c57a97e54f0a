//! Per-node temporal memory: messages, aggregation, GRU update, time encoding
//! and the embedding modules read from memory.
//!
//! Memory rows only change in [`TemporalMemory::flush_batch`], which callers
//! run once per batch after every prediction of that batch has been made.

use crate::error::{Error, Result};
use crate::events::{Event, NodeId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use tgn_seal_autograd::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState<T> {
    dim: usize,
    s: Vec<T>,
    last_update: Vec<f64>,
    /// Inputs of each node's most recent GRU update: the aggregated message
    /// and the state it replaced.
    last_input: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> MemoryState<T> {
    pub fn new(num_nodes: usize, dim: usize) -> Self {
        Self {
            dim,
            s: vec![T::zero(); num_nodes * dim],
            last_update: vec![0.0; num_nodes],
            last_input: vec![None; num_nodes],
        }
    }

    pub fn reset(&mut self) {
        self.s.iter_mut().for_each(|x| *x = T::zero());
        self.last_update.iter_mut().for_each(|x| *x = 0.0);
        self.last_input.iter_mut().for_each(|x| *x = None);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.last_update.len()
    }

    pub fn row(&self, node: NodeId) -> &[T] {
        let i = node as usize;
        &self.s[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update[node as usize]
    }

    /// Aggregated message and previous state of the node's latest update.
    pub fn last_input(&self, node: NodeId) -> Option<(&[T], &[T])> {
        self.last_input[node as usize]
            .as_ref()
            .map(|(m, s)| (m.as_slice(), s.as_slice()))
    }

    fn record_input(&mut self, msg: &RawMessage<T>) {
        let prev = self.row(msg.node).to_vec();
        self.last_input[msg.node as usize] = Some((msg.payload.clone(), prev));
    }

    fn write(&mut self, node: NodeId, row: &[T], ts: f64) {
        let i = node as usize;
        self.s[i * self.dim..(i + 1) * self.dim].copy_from_slice(row);
        self.last_update[i] = ts;
    }

    /// Rows of the given nodes stacked into `[nodes.len() × dim]`.
    pub fn gather(&self, nodes: &[NodeId]) -> Tensor<T> {
        let data = nodes.iter().flat_map(|&n| self.row(n).iter().copied()).collect();
        Tensor::new(vec![nodes.len(), self.dim], data).expect("row-major gather")
    }

    /// `memory.s` and `memory.last_update` for the checkpoint container.
    pub fn to_named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        vec![
            (
                "memory.s".to_string(),
                Tensor::new(vec![self.num_nodes(), self.dim], self.s.clone()).expect("shape"),
            ),
            (
                "memory.last_update".to_string(),
                Tensor::vector(self.last_update.iter().map(|&t| T::lit(t)).collect()),
            ),
        ]
    }
}

/// Message for one endpoint: `s_self(t⁻) ‖ s_other(t⁻) ‖ φ(Δt) ‖ e(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMessage<T> {
    pub node: NodeId,
    pub ts: f64,
    pub payload: Vec<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MostRecent,
    Mean,
}

/// Messages accumulated during the current batch, keyed by node.
#[derive(Clone, Debug, Default)]
pub struct MessageBuffer<T> {
    pending: BTreeMap<NodeId, Vec<RawMessage<T>>>,
}

impl<T: Scalar> MessageBuffer<T> {
    pub fn new() -> Self {
        Self {
            pending: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, msg: RawMessage<T>) {
        self.pending.entry(msg.node).or_default().push(msg);
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.pending.keys().copied()
    }

    pub fn messages(&self, node: NodeId) -> &[RawMessage<T>] {
        self.pending.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn clear(&mut self) {
        self.pending.clear();
    }
}

/// Reduces a node's pending messages to one.
///
/// `MostRecent` keeps the largest timestamp, the later arrival on ties. `Mean`
/// averages payloads and carries the largest timestamp.
pub fn aggregate_messages<T: Scalar>(
    buffer: &MessageBuffer<T>,
    node: NodeId,
    mode: Aggregation,
) -> Result<RawMessage<T>> {
    let msgs = buffer.messages(node);
    let first = msgs
        .first()
        .ok_or_else(|| Error::Empty(format!("no pending messages for node {node}")))?;
    match mode {
        Aggregation::MostRecent => {
            let mut best = first;
            for m in &msgs[1..] {
                if m.ts >= best.ts {
                    best = m;
                }
            }
            Ok(best.clone())
        }
        Aggregation::Mean => {
            let mut acc = vec![T::zero(); first.payload.len()];
            let mut ts = f64::NEG_INFINITY;
            for m in msgs {
                if m.payload.len() != acc.len() {
                    return Err(Error::Contract(format!(
                        "node {node}: payload lengths {} and {} differ",
                        acc.len(),
                        m.payload.len()
                    )));
                }
                acc.iter_mut().zip(&m.payload).for_each(|(a, &p)| *a = *a + p);
                ts = ts.max(m.ts);
            }
            let n = T::lit(msgs.len() as f64);
            acc.iter_mut().for_each(|a| *a = *a / n);
            Ok(RawMessage {
                node,
                ts,
                payload: acc,
            })
        }
    }
}

/// `cos(Δt·w + b)` elementwise.
pub fn time_encode<T: Scalar>(dt: f64, w: &[T], b: &[T]) -> Result<Vec<T>> {
    if dt < 0.0 || dt.is_nan() {
        return Err(Error::Contract(format!(
            "time encoding of negative elapsed time {dt}"
        )));
    }
    let dt = T::lit(dt);
    Ok(w.iter().zip(b).map(|(&wi, &bi)| (dt * wi + bi).cos()).collect())
}

/// Learnable cosine time features.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    pub w: ParamId,
    pub b: ParamId,
    pub dim: usize,
}

impl TimeEncoder {
    /// Frequencies start log-spaced over `[1e-9, 1]` so both seconds and
    /// months resolve; phases start at zero.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Result<Self> {
        let w = (0..dim)
            .map(|i| {
                let frac = if dim > 1 { i as f64 / (dim - 1) as f64 } else { 0.0 };
                T::lit(10f64.powf(-9.0 * frac))
            })
            .collect();
        let w = store.add(format!("{prefix}.w"), Tensor::vector(w))?;
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(vec![dim]))?;
        Ok(Self { w, b, dim })
    }

    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, dt: f64) -> Result<Vec<T>> {
        time_encode(dt, store.value(self.w).data(), store.value(self.b).data())
    }
}

/// GRU memory cell:
///
/// ```text
/// z  = σ(m W_z + s U_z + b_z)
/// r  = σ(m W_r + s U_r + b_r)
/// n  = tanh(m W_n + (r ∘ s) U_n + b_n)
/// s' = (1 − z) ∘ n + z ∘ s
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut uniform = |shape: Vec<usize>| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
            Tensor::new(shape, data).expect("shape")
        };
        let mut add = |name: &str, t: Tensor<T>| store.add(format!("{prefix}.{name}"), t);
        Ok(Self {
            input_dim,
            hidden_dim,
            w_z: add("w_z", uniform(vec![input_dim, hidden_dim]))?,
            u_z: add("u_z", uniform(vec![hidden_dim, hidden_dim]))?,
            b_z: add("b_z", uniform(vec![hidden_dim]))?,
            w_r: add("w_r", uniform(vec![input_dim, hidden_dim]))?,
            u_r: add("u_r", uniform(vec![hidden_dim, hidden_dim]))?,
            b_r: add("b_r", uniform(vec![hidden_dim]))?,
            w_n: add("w_n", uniform(vec![input_dim, hidden_dim]))?,
            u_n: add("u_n", uniform(vec![hidden_dim, hidden_dim]))?,
            b_n: add("b_n", uniform(vec![hidden_dim]))?,
        })
    }

    /// Batched update of `s [n × hidden]` by messages `m [n × input]`. With
    /// `grad = false` the weights enter the tape as constants.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        m: Var,
        s: Var,
        grad: bool,
    ) -> Result<Var> {
        let mut p = |id| {
            if grad {
                tape.param(store, id)
            } else {
                tape.param_const(store, id)
            }
        };
        let (w_z, u_z, b_z) = (p(self.w_z), p(self.u_z), p(self.b_z));
        let (w_r, u_r, b_r) = (p(self.w_r), p(self.u_r), p(self.b_r));
        let (w_n, u_n, b_n) = (p(self.w_n), p(self.u_n), p(self.b_n));

        let gate = |tape: &mut Tape<T>, w, u, b, s_in| -> Result<Var> {
            let a = tape.matmul(m, w)?;
            let c = tape.matmul(s_in, u)?;
            let sum = tape.add(a, c)?;
            Ok(tape.add_bias(sum, b)?)
        };
        let z_pre = gate(tape, w_z, u_z, b_z, s)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, w_r, u_r, b_r, s)?;
        let r = tape.sigmoid(r_pre);
        let rs = tape.mul(r, s)?;
        let n_pre = gate(tape, w_n, u_n, b_n, rs)?;
        let n = tape.tanh(n_pre);

        let ones = tape.constant(Tensor::ones(tape.shape(z).to_vec()));
        let keep_new = tape.sub(ones, z)?;
        let a = tape.mul(keep_new, n)?;
        let b = tape.mul(z, s)?;
        Ok(tape.add(a, b)?)
    }
}

/// Memory side of the model: message construction, aggregation and GRU update.
#[derive(Clone, Debug)]
pub struct TemporalMemory {
    pub d_mem: usize,
    pub feat_dim: usize,
    pub aggregation: Aggregation,
    pub time: TimeEncoder,
    pub gru: GruCell,
}

impl TemporalMemory {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        d_mem: usize,
        d_time: usize,
        feat_dim: usize,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Result<Self> {
        let time = TimeEncoder::new(store, "tgn.time", d_time)?;
        let gru = GruCell::new(store, "tgn.gru", 2 * d_mem + d_time + feat_dim, d_mem, rng)?;
        Ok(Self {
            d_mem,
            feat_dim,
            aggregation,
            time,
            gru,
        })
    }

    pub fn message_dim(&self) -> usize {
        2 * self.d_mem + self.time.dim + self.feat_dim
    }

    fn message_for<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        memory: &MemoryState<T>,
        me: NodeId,
        other: NodeId,
        event: &Event,
    ) -> Result<RawMessage<T>> {
        let dt = event.ts - memory.last_update(me);
        let phi = self.time.encode(store, dt).map_err(|_| {
            Error::Contract(format!(
                "event {} at ts={} precedes node {me}'s last update {}",
                event.idx,
                event.ts,
                memory.last_update(me)
            ))
        })?;
        let mut payload = Vec::with_capacity(self.message_dim());
        payload.extend_from_slice(memory.row(me));
        payload.extend_from_slice(memory.row(other));
        payload.extend(phi);
        payload.extend(event.feats.iter().map(|&f| T::lit(f)));
        Ok(RawMessage {
            node: me,
            ts: event.ts,
            payload,
        })
    }

    /// Messages for the source and destination of `event`, built from the
    /// memory as it stands before the event.
    pub fn compute_messages<T: Scalar>(
        &self,
        event: &Event,
        memory: &MemoryState<T>,
        store: &ParamStore<T>,
    ) -> Result<(RawMessage<T>, RawMessage<T>)> {
        if event.feats.len() != self.feat_dim {
            return Err(Error::Contract(format!(
                "event {} has {} features, memory expects {}",
                event.idx,
                event.feats.len(),
                self.feat_dim
            )));
        }
        Ok((
            self.message_for(store, memory, event.src, event.dst, event)?,
            self.message_for(store, memory, event.dst, event.src, event)?,
        ))
    }

    /// Runs the GRU on aggregated messages for several nodes at once and
    /// returns the new rows, without writing them.
    pub fn updated_rows<T: Scalar>(
        &self,
        messages: &[RawMessage<T>],
        memory: &MemoryState<T>,
        store: &ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let dim = self.message_dim();
        if let Some(bad) = messages.iter().find(|m| m.payload.len() != dim) {
            return Err(Error::Contract(format!(
                "message for node {} has length {}, GRU expects {dim}",
                bad.node,
                bad.payload.len()
            )));
        }
        let nodes: Vec<NodeId> = messages.iter().map(|m| m.node).collect();
        let m = Tensor::new(
            vec![messages.len(), dim],
            messages.iter().flat_map(|m| m.payload.iter().copied()).collect(),
        )?;
        let mut tape = Tape::new();
        let mv = tape.constant(m);
        let sv = tape.constant(memory.gather(&nodes));
        let out = self.gru.forward(&mut tape, store, mv, sv, false)?;
        Ok(tape.value(out).clone())
    }

    /// Memory rows of `nodes` recomputed on `tape` from each node's latest
    /// update, so the GRU weights receive gradient. Values equal the stored
    /// rows; nodes never updated give zero rows.
    pub fn rows_through_last_update<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        memory: &MemoryState<T>,
        nodes: &[NodeId],
    ) -> Result<Var> {
        let mut msgs = Vec::new();
        let mut prevs = Vec::new();
        let mut rows = Vec::with_capacity(nodes.len());
        let mut slot_of: BTreeMap<NodeId, usize> = BTreeMap::new();
        for &n in nodes {
            match memory.last_input(n) {
                None => rows.push(None),
                Some((m, s)) => {
                    let next = slot_of.len();
                    let slot = *slot_of.entry(n).or_insert_with(|| {
                        msgs.extend_from_slice(m);
                        prevs.extend_from_slice(s);
                        next
                    });
                    rows.push(Some(slot));
                }
            }
        }
        if slot_of.is_empty() {
            return Ok(tape.constant(Tensor::zeros(vec![nodes.len(), self.d_mem])));
        }
        let count = slot_of.len();
        let m = tape.constant(Tensor::new(vec![count, self.message_dim()], msgs)?);
        let s = tape.constant(Tensor::new(vec![count, self.d_mem], prevs)?);
        let out = self.gru.forward(tape, store, m, s, true)?;
        Ok(tape.gather_rows(out, rows)?)
    }

    pub fn update_memory<T: Scalar>(
        &self,
        msg: &RawMessage<T>,
        memory: &mut MemoryState<T>,
        store: &ParamStore<T>,
    ) -> Result<()> {
        let rows = self.updated_rows(std::slice::from_ref(msg), memory, store)?;
        memory.record_input(msg);
        memory.write(msg.node, rows.row(0), msg.ts);
        Ok(())
    }

    /// Aggregates and applies every pending message, then empties the buffer.
    /// Returns the aggregated message of each updated node in node order.
    pub fn flush_batch<T: Scalar>(
        &self,
        buffer: &mut MessageBuffer<T>,
        memory: &mut MemoryState<T>,
        store: &ParamStore<T>,
    ) -> Result<Vec<RawMessage<T>>> {
        if buffer.is_empty() {
            return Ok(Vec::new());
        }
        let aggregated = buffer
            .nodes()
            .map(|n| aggregate_messages(buffer, n, self.aggregation))
            .collect::<Result<Vec<_>>>()?;
        let rows = self.updated_rows(&aggregated, memory, store)?;
        for (i, m) in aggregated.iter().enumerate() {
            memory.record_input(m);
            memory.write(m.node, rows.row(i), m.ts);
        }
        buffer.clear();
        Ok(aggregated)
    }
}

/// `z_i(t) = s_i(t)`.
pub fn embed_identity<T: Scalar>(memory: &MemoryState<T>, node: NodeId) -> Vec<T> {
    memory.row(node).to_vec()
}

/// `z_i(t) = (1 + Δt·w) ∘ s_i(t)` with `Δt = t − last_update(i)`.
pub fn embed_time_projection<T: Scalar>(
    memory: &MemoryState<T>,
    node: NodeId,
    t: f64,
    w: &[T],
) -> Result<Vec<T>> {
    let dt = elapsed(memory, node, t)?;
    let dt = T::lit(dt);
    Ok(memory
        .row(node)
        .iter()
        .zip(w)
        .map(|(&s, &wi)| (T::one() + dt * wi) * s)
        .collect())
}

fn elapsed<T: Scalar>(memory: &MemoryState<T>, node: NodeId, t: f64) -> Result<f64> {
    let dt = t - memory.last_update(node);
    if dt < 0.0 {
        return Err(Error::Contract(format!(
            "embedding node {node} at t={t} before its last update {}",
            memory.last_update(node)
        )));
    }
    Ok(dt)
}

/// Embedding module applied to memory rows when building decoder inputs.
#[derive(Clone, Debug)]
pub enum Embedding {
    Identity,
    /// Time projection with `Δt` measured in units of `time_scale` seconds.
    TimeProjection { w: ParamId, time_scale: f64 },
}

impl Embedding {
    pub fn time_projection<T: Scalar>(
        store: &mut ParamStore<T>,
        d_mem: usize,
        time_scale: f64,
    ) -> Result<Self> {
        let w = store.add("tgn.proj.w", Tensor::zeros(vec![d_mem]))?;
        Ok(Self::TimeProjection { w, time_scale })
    }

    /// Embeddings of `nodes` at time `t`, stacked `[nodes.len() × d_mem]`.
    /// Only the projection weights can carry gradient; memory is constant.
    pub fn rows_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        memory: &MemoryState<T>,
        nodes: &[NodeId],
        t: f64,
        grad: bool,
    ) -> Result<Var> {
        let s = tape.constant(memory.gather(nodes));
        self.apply_on_tape(tape, store, memory, nodes, s, t, grad)
    }

    /// Embeddings from memory rows `s [nodes.len() × d_mem]` already on the tape.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        memory: &MemoryState<T>,
        nodes: &[NodeId],
        s: Var,
        t: f64,
        grad: bool,
    ) -> Result<Var> {
        match self {
            Embedding::Identity => Ok(s),
            Embedding::TimeProjection { w, time_scale } => {
                let dts = nodes
                    .iter()
                    .map(|&n| elapsed(memory, n, t).map(|dt| T::lit(dt / time_scale)))
                    .collect::<Result<Vec<T>>>()?;
                let dt_col = tape.constant(Tensor::new(vec![nodes.len(), 1], dts)?);
                let wv = if grad {
                    tape.param(store, *w)
                } else {
                    tape.param_const(store, *w)
                };
                let w_row = tape.reshape(wv, vec![1, memory.dim()])?;
                let scaled = tape.matmul(dt_col, w_row)?;
                let ones = tape.constant(Tensor::ones(vec![nodes.len(), memory.dim()]));
                let factor = tape.add(ones, scaled)?;
                Ok(tape.mul(factor, s)?)
            }
        }
    }

    pub fn embed<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        memory: &MemoryState<T>,
        node: NodeId,
        t: f64,
    ) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let v = self.rows_on_tape(&mut tape, store, memory, &[node], t, false)?;
        Ok(tape.value(v).data().to_vec())
    }
}
