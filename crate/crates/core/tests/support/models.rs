//! Finite-difference cases for the model components: the GRU cell, the MLP
//! decoder, the DGCNN head, and the chain GRU → time projection → DGCNN.

use super::primitives::{rand_tensor, weighted, Case, Setup};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tgn_seal::dgcnn::{Dgcnn, DgcnnConfig};
use tgn_seal::memory::GruCell;
use tgn_seal::mlp::MlpDecoder;
use tgn_seal::seal::node_features_on_tape;
use tgn_seal::{
    drnl_label, extract_enclosing_subgraph, EnclosingSubgraph, Embedding, Event, EventStream, MemoryState,
    NodeId, TemporalAdjacency,
};
use tgn_seal_autograd::{ParamStore, TensorError};

/// Library errors inside a finite-difference loss closure.
fn lift<T>(r: tgn_seal::Result<T>) -> tgn_seal_autograd::Result<T> {
    r.map_err(|e| TensorError::InvalidArgument { op: "model", msg: e.to_string() })
}

/// Moves zero-initialized biases off zero so no relu sits exactly on its kink.
fn jitter_biases(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (name, value) in store.named_values() {
        if name.ends_with(".b") {
            store.set(&name, rand_tensor(rng, value.shape(), -0.5, 0.5)).unwrap();
        }
    }
}

pub fn small_dgcnn(in_dim: usize) -> DgcnnConfig {
    DgcnnConfig {
        in_dim,
        channels: vec![4, 4, 1],
        sortpool_k: 10,
        conv1_filters: 3,
        conv2_filters: 4,
        conv2_kernel: 5,
        pool_width: 2,
        dense_units: 6,
        dropout: 0.5,
    }
}

/// Subgraph around nodes 0 and 1 of a random graph over up to 14 nodes.
pub fn random_subgraph(rng: &mut ChaCha8Rng, l_max: usize) -> EnclosingSubgraph {
    let n = rng.gen_range(2..14usize);
    let m = rng.gen_range(0..3 * n);
    let events = (0..m)
        .map(|i| {
            let a = rng.gen_range(0..n) as NodeId;
            let b = (a + rng.gen_range(1..n) as NodeId) % n as NodeId;
            Event { idx: i, src: a, dst: b, ts: i as f64, feats: vec![] }
        })
        .collect();
    let stream = EventStream::new(events, n, 0).unwrap();
    let adj = TemporalAdjacency::build(&stream);
    let mut sub = extract_enclosing_subgraph(&adj, 0, 1, m as f64, 2, 20).unwrap();
    sub.labels = drnl_label(&sub, l_max);
    sub
}

fn gru(rng: &mut ChaCha8Rng) -> Case {
    let (n, input, hid) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..5));
    let mut s = ParamStore::new();
    let cell = GruCell::new(&mut s, "gru", input, hid, rng).unwrap();
    let m = s.add("m", rand_tensor(rng, &[n, input], -1.0, 1.0)).unwrap();
    let h = s.add("s", rand_tensor(rng, &[n, hid], -1.0, 1.0)).unwrap();
    let w = rand_tensor(rng, &[n * hid], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let (mv, hv) = (t.param(s, m), t.param(s, h));
        let y = lift(cell.forward(t, s, mv, hv, true))?;
        weighted(t, y, &w)
    }))
}

fn mlp(rng: &mut ChaCha8Rng) -> Case {
    let d = rng.gen_range(1..6);
    let mut s = ParamStore::new();
    let net = MlpDecoder::new(&mut s, d, rng).unwrap();
    jitter_biases(&mut s, rng);
    let zu = s.add("zu", rand_tensor(rng, &[1, d], -1.0, 1.0)).unwrap();
    let zv = s.add("zv", rand_tensor(rng, &[1, d], -1.0, 1.0)).unwrap();
    let label = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    (s, Box::new(move |t, s| {
        let (a, b) = (t.param(s, zu), t.param(s, zv));
        let logit = lift(net.logit_on_tape(t, s, a, b, true))?;
        let p = t.sigmoid(logit);
        t.bce(p, &[label])
    }))
}

fn dgcnn(rng: &mut ChaCha8Rng) -> Case {
    let sub = random_subgraph(rng, 3);
    let in_dim = rng.gen_range(1..5);
    let mut s = ParamStore::new();
    let net = Dgcnn::new(&mut s, small_dgcnn(in_dim), rng).unwrap();
    jitter_biases(&mut s, rng);
    let x = s.add("x", rand_tensor(rng, &[sub.len(), in_dim], -1.0, 1.0)).unwrap();
    let prop = Dgcnn::propagation::<f64>(&sub).unwrap();
    let label = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
    (s, Box::new(move |t, s| {
        let xv = t.param(s, x);
        let logit = lift(net.logit_on_tape(t, s, &prop, xv, None, true))?;
        let p = t.sigmoid(logit);
        t.bce(p, &[label])
    }))
}

/// Memory rows from a GRU step, time-projected, labeled and decoded.
fn pipeline(rng: &mut ChaCha8Rng) -> Case {
    let l_max = 4;
    let sub = random_subgraph(rng, l_max);
    let (d_mem, msg) = (3, 4);
    let mut s = ParamStore::new();
    let cell = GruCell::new(&mut s, "gru", msg, d_mem, rng).unwrap();
    let embedding = Embedding::time_projection(&mut s, d_mem, 10.0).unwrap();
    s.set("tgn.proj.w", rand_tensor(rng, &[d_mem], -0.5, 0.5)).unwrap();
    let net = Dgcnn::new(&mut s, small_dgcnn(d_mem + l_max + 1), rng).unwrap();
    jitter_biases(&mut s, rng);
    let n = sub.len();
    let m = rand_tensor(rng, &[n, msg], -1.0, 1.0);
    let prev = rand_tensor(rng, &[n, d_mem], -1.0, 1.0);
    let memory = MemoryState::<f64>::new(sub.nodes.iter().max().map_or(0, |&x| x as usize + 1), d_mem);
    let prop = Dgcnn::propagation::<f64>(&sub).unwrap();
    (s, Box::new(move |t, s| {
        let (mv, pv) = (t.constant(m.clone()), t.constant(prev.clone()));
        let rows = lift(cell.forward(t, s, mv, pv, true))?;
        let x = lift(node_features_on_tape(t, s, &sub, &memory, &embedding, rows, l_max, true))?;
        let logit = lift(net.logit_on_tape(t, s, &prop, x, None, true))?;
        let p = t.sigmoid(logit);
        t.bce(p, &[1.0])
    }))
}

pub fn cases() -> Vec<(&'static str, Setup)> {
    vec![
        ("gru cell", gru),
        ("mlp decoder", mlp),
        ("dgcnn head", dgcnn),
        ("gru→projection→dgcnn", pipeline),
    ]
}
