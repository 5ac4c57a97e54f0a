//! Enclosing-subgraph extraction around a candidate pair, double-radius node
//! labeling, and per-node feature assembly.

use crate::error::{Error, Result};
use crate::events::{NodeId, TemporalAdjacency};
use crate::memory::{Embedding, MemoryState};
use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use tgn_seal_autograd::{ParamStore, Scalar, Tape, Tensor, Var};

/// Induced subgraph over the k-hop neighborhoods of `(u, v)` strictly before
/// `cutoff`. Local index 0 is `u`, 1 is `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnclosingSubgraph {
    pub nodes: Vec<NodeId>,
    /// Sorted neighbor lists over local indices; symmetric, no self loops.
    pub adj: Vec<Vec<usize>>,
    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// For each edge, the most recent event supporting it.
    pub edge_event: Vec<usize>,
    pub cutoff: f64,
    pub k: usize,
    /// Unclamped DRNL labels.
    pub labels: Vec<usize>,
}

impl EnclosingSubgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edge-list text block with local indices and labels.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "subgraph u={} v={} cutoff={} k={} nodes={} edges={}",
            self.nodes[0],
            self.nodes[1],
            self.cutoff,
            self.k,
            self.len(),
            self.num_edges()
        );
        for (i, (n, l)) in self.nodes.iter().zip(&self.labels).enumerate() {
            let _ = writeln!(out, "node {i} id={n} label={l}");
        }
        for (i, j) in &self.edges {
            let _ = writeln!(out, "edge {i} {j}");
        }
        out
    }
}

/// Collects the subgraph around `(u, v)` from events with `ts < t`.
///
/// Each BFS expands at most `cap` distinct, most recent neighbors of a node per
/// hop. Node order is `u, v`, then nodes discovered from `u`, then nodes
/// discovered from `v`. All pre-`t` events between collected nodes become
/// edges, including earlier `u–v` events.
pub fn extract_enclosing_subgraph(
    adj: &TemporalAdjacency,
    u: NodeId,
    v: NodeId,
    t: f64,
    k: usize,
    cap: usize,
) -> Result<EnclosingSubgraph> {
    if u == v {
        return Err(Error::InvalidQuery(format!("target pair has identical nodes ({u})")));
    }
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidQuery(format!("hop count k={k} outside 1..=3")));
    }
    if cap == 0 {
        return Err(Error::InvalidQuery("neighbor cap must be ≥ 1".into()));
    }
    for n in [u, v] {
        if n as usize >= adj.num_nodes() {
            return Err(Error::InvalidQuery(format!(
                "node {n} outside graph of {} nodes",
                adj.num_nodes()
            )));
        }
    }

    let mut nodes = vec![u, v];
    let mut local: HashMap<NodeId, usize> = HashMap::from([(u, 0), (v, 1)]);
    for root in [u, v] {
        let mut seen = vec![root];
        let mut frontier = vec![root];
        for _ in 0..k {
            let mut next = Vec::new();
            for &n in &frontier {
                for nb in adj.recent_distinct_neighbors(n, t, cap) {
                    if !seen.contains(&nb) {
                        seen.push(nb);
                        next.push(nb);
                    }
                }
            }
            for &n in &next {
                local.entry(n).or_insert_with(|| {
                    nodes.push(n);
                    nodes.len() - 1
                });
            }
            frontier = next;
        }
    }

    let mut latest: HashMap<(usize, usize), usize> = HashMap::new();
    for (i, &n) in nodes.iter().enumerate() {
        for e in adj.history_before(n, t) {
            if let Some(&j) = local.get(&e.neighbor) {
                if i < j {
                    let slot = latest.entry((i, j)).or_insert(e.event_idx);
                    *slot = (*slot).max(e.event_idx);
                }
            }
        }
    }
    let mut edges: Vec<((usize, usize), usize)> = latest.into_iter().collect();
    edges.sort_unstable();

    let mut lists = vec![Vec::new(); nodes.len()];
    for &((i, j), _) in &edges {
        lists[i].push(j);
        lists[j].push(i);
    }
    lists.iter_mut().for_each(|l| l.sort_unstable());

    let mut sub = EnclosingSubgraph {
        nodes,
        adj: lists,
        edges: edges.iter().map(|&(e, _)| e).collect(),
        edge_event: edges.iter().map(|&(_, idx)| idx).collect(),
        cutoff: t,
        k,
        labels: Vec::new(),
    };
    sub.labels = drnl_label(&sub, usize::MAX);
    Ok(sub)
}

/// DRNL from hop distances to the two targets; `None` means unreachable.
pub fn drnl_from_distances(d_u: Option<usize>, d_v: Option<usize>, l_max: usize) -> usize {
    let (Some(du), Some(dv)) = (d_u, d_v) else {
        return 0;
    };
    let d = du + dv;
    let half = d / 2;
    let label = 1 + du.min(dv) + half * (half + d % 2).saturating_sub(1);
    label.min(l_max)
}

fn bfs_without(adj: &[Vec<usize>], source: usize, removed: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(x) = queue.pop_front() {
        let dx = dist[x].expect("queued nodes have a distance");
        for &y in &adj[x] {
            if y != removed && dist[y].is_none() {
                dist[y] = Some(dx + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

/// Labels for every node of `sub`, clamped to `l_max`. Distances to one target
/// are measured with the other target removed; both targets get 1.
pub fn drnl_label(sub: &EnclosingSubgraph, l_max: usize) -> Vec<usize> {
    let from_u = bfs_without(&sub.adj, 0, 1);
    let from_v = bfs_without(&sub.adj, 1, 0);
    (0..sub.len())
        .map(|i| {
            if i < 2 {
                1.min(l_max)
            } else {
                drnl_from_distances(from_u[i], from_v[i], l_max)
            }
        })
        .collect()
}

fn one_hot_block<T: Scalar>(labels: &[usize], l_max: usize) -> Tensor<T> {
    let width = l_max + 1;
    let mut data = vec![T::zero(); labels.len() * width];
    for (i, &l) in labels.iter().enumerate() {
        data[i * width + l.min(l_max)] = T::one();
    }
    Tensor::new(vec![labels.len(), width], data).expect("shape")
}

/// Node features `z_i(cutoff) ‖ onehot(label_i)` recorded on `tape`, from
/// memory rows `s` of the subgraph nodes.
#[allow(clippy::too_many_arguments)]
pub fn node_features_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    sub: &EnclosingSubgraph,
    memory: &MemoryState<T>,
    embedding: &Embedding,
    s: Var,
    l_max: usize,
    grad: bool,
) -> Result<Var> {
    let z = embedding.apply_on_tape(tape, store, memory, &sub.nodes, s, sub.cutoff, grad)?;
    let labels = one_hot_block(&sub.labels, l_max);
    let labels = tape.constant(labels);
    Ok(tape.concat(&[z, labels], 1)?)
}

/// Feature matrix `[n_sub × (d_mem + l_max + 1)]`.
pub fn assemble_node_features<T: Scalar>(
    sub: &EnclosingSubgraph,
    memory: &MemoryState<T>,
    store: &ParamStore<T>,
    embedding: &Embedding,
    l_max: usize,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let s = tape.constant(memory.gather(&sub.nodes));
    let x = node_features_on_tape(&mut tape, store, sub, memory, embedding, s, l_max, false)?;
    Ok(tape.value(x).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, EventStream};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn stream(triples: &[(NodeId, NodeId, f64)], n: usize) -> EventStream {
        let events = triples
            .iter()
            .enumerate()
            .map(|(idx, &(src, dst, ts))| Event {
                idx,
                src,
                dst,
                ts,
                feats: vec![],
            })
            .collect();
        EventStream::new(events, n, 0).unwrap()
    }

    fn global_edges(sub: &EnclosingSubgraph) -> BTreeSet<(NodeId, NodeId)> {
        sub.edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (sub.nodes[i], sub.nodes[j]);
                (a.min(b), a.max(b))
            })
            .collect()
    }

    const A: NodeId = 0;
    const B: NodeId = 1;
    const C: NodeId = 2;
    const D: NodeId = 3;

    #[test]
    fn empty_history() {
        let adj = TemporalAdjacency::build(&stream(&[], 4));
        let sub = extract_enclosing_subgraph(&adj, 0, 1, 5.0, 2, 20).unwrap();
        assert_eq!(sub.nodes, vec![0, 1]);
        assert!(sub.edges.is_empty());
        assert_eq!(sub.labels, vec![1, 1]);
    }

    #[test]
    fn chain_examples() {
        let s = stream(&[(A, B, 1.0), (B, C, 2.0), (C, D, 3.0)], 4);
        let adj = TemporalAdjacency::build(&s);
        let sub = extract_enclosing_subgraph(&adj, A, C, 10.0, 1, 20).unwrap();
        assert_eq!(sub.nodes, vec![A, C, B, D]);
        assert_eq!(global_edges(&sub), BTreeSet::from([(A, B), (B, C), (C, D)]));

        let sub = extract_enclosing_subgraph(&adj, A, C, 2.5, 1, 20).unwrap();
        assert_eq!(sub.nodes, vec![A, C, B]);
        assert_eq!(global_edges(&sub), BTreeSet::from([(A, B), (B, C)]));
    }

    #[test]
    fn identical_targets_rejected() {
        let adj = TemporalAdjacency::build(&stream(&[], 3));
        assert!(matches!(
            extract_enclosing_subgraph(&adj, 1, 1, 1.0, 2, 20),
            Err(Error::InvalidQuery(_))
        ));
    }

    #[test]
    fn prior_target_edge_kept() {
        let s = stream(&[(A, B, 1.0), (A, B, 2.0)], 2);
        let adj = TemporalAdjacency::build(&s);
        let sub = extract_enclosing_subgraph(&adj, A, B, 2.0, 2, 20).unwrap();
        assert_eq!(sub.edges, vec![(0, 1)]);
        assert_eq!(sub.edge_event, vec![0]);
    }

    #[test]
    fn cap_limits_expansion_to_recent() {
        let s = stream(&[(A, B, 1.0), (A, C, 2.0), (A, D, 3.0)], 5);
        let adj = TemporalAdjacency::build(&s);
        let sub = extract_enclosing_subgraph(&adj, A, 4, 9.0, 1, 2).unwrap();
        assert_eq!(sub.nodes, vec![A, 4, D, C]);
    }

    #[test]
    fn drnl_formula_points() {
        assert_eq!(drnl_from_distances(Some(1), Some(1), 10), 2);
        assert_eq!(drnl_from_distances(Some(1), Some(2), 10), 3);
        assert_eq!(drnl_from_distances(Some(2), Some(1), 10), 3);
        assert_eq!(drnl_from_distances(None, Some(1), 10), 0);
        assert_eq!(drnl_from_distances(Some(3), None, 10), 0);
        assert_eq!(drnl_from_distances(Some(5), Some(5), 10), 10);
    }

    #[test]
    fn drnl_distinct_for_distinct_unordered_pairs() {
        let mut seen = HashMap::new();
        for du in 1..=6 {
            for dv in du..=6 {
                let l = drnl_from_distances(Some(du), Some(dv), usize::MAX);
                if let Some(prev) = seen.insert(l, (du, dv)) {
                    panic!("label {l} shared by {prev:?} and {:?}", (du, dv));
                }
            }
        }
    }

    #[test]
    fn path_and_removal_examples() {
        // u - x - v
        let s = stream(&[(0, 2, 1.0), (2, 1, 2.0)], 3);
        let sub = extract_enclosing_subgraph(&TemporalAdjacency::build(&s), 0, 1, 5.0, 2, 20).unwrap();
        assert_eq!(sub.labels, vec![1, 1, 2]);

        // y hangs off v only: unreachable from u once v is removed.
        let s = stream(&[(0, 1, 1.0), (1, 2, 2.0)], 3);
        let sub = extract_enclosing_subgraph(&TemporalAdjacency::build(&s), 0, 1, 5.0, 2, 20).unwrap();
        assert_eq!(sub.nodes, vec![0, 1, 2]);
        assert_eq!(sub.labels, vec![1, 1, 0]);
    }

    fn random_stream(rng: &mut ChaCha8Rng, n: usize, m: usize) -> EventStream {
        let triples: Vec<_> = (0..m)
            .map(|i| {
                let a = rng.gen_range(0..n as NodeId);
                let mut b = rng.gen_range(0..n as NodeId - 1);
                if b >= a {
                    b += 1;
                }
                (a, b, i as f64 + rng.gen_range(0.0..0.5))
            })
            .collect();
        stream(&triples, n)
    }

    #[test]
    fn edges_only_from_pre_cutoff_events() {
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_stream(&mut rng, 15, 60);
            let adj = TemporalAdjacency::build(&s);
            let t = rng.gen_range(0.0..60.0);
            let sub = extract_enclosing_subgraph(&adj, 0, 1, t, 2, 4).unwrap();
            for (&(i, j), &idx) in sub.edges.iter().zip(&sub.edge_event) {
                let e = &s.events()[idx];
                assert!(e.ts < t);
                let pair = BTreeSet::from([e.src, e.dst]);
                assert_eq!(pair, BTreeSet::from([sub.nodes[i], sub.nodes[j]]));
            }
        }
    }

    #[test]
    fn hop_sets_nest_and_swap_is_symmetric() {
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_stream(&mut rng, 25, 80);
            let adj = TemporalAdjacency::build(&s);
            let set = |k| -> BTreeSet<NodeId> {
                extract_enclosing_subgraph(&adj, 3, 4, 70.0, k, 3)
                    .unwrap()
                    .nodes
                    .into_iter()
                    .collect()
            };
            assert!(set(1).is_subset(&set(2)));
            assert!(set(2).is_subset(&set(3)));

            let a = extract_enclosing_subgraph(&adj, 3, 4, 70.0, 2, 3).unwrap();
            let b = extract_enclosing_subgraph(&adj, 4, 3, 70.0, 2, 3).unwrap();
            let labelled = |s: &EnclosingSubgraph| -> BTreeSet<(NodeId, usize)> {
                s.nodes.iter().copied().zip(s.labels.iter().copied()).collect()
            };
            assert_eq!(labelled(&a), labelled(&b));
        }
    }

    #[test]
    fn feature_rows_for_zero_memory() {
        let s = stream(&[(0, 2, 1.0), (2, 1, 2.0)], 3);
        let sub = extract_enclosing_subgraph(&TemporalAdjacency::build(&s), 0, 1, 5.0, 2, 20).unwrap();
        let memory = MemoryState::<f64>::new(3, 4);
        let store = ParamStore::new();
        let x = assemble_node_features(&sub, &memory, &store, &Embedding::Identity, 10).unwrap();
        assert_eq!(x.shape(), &[3, 4 + 11]);
        let mut expected = vec![0.0; 15];
        expected[4 + 1] = 1.0;
        assert_eq!(x.row(0), expected.as_slice());
        for i in 0..3 {
            assert_eq!(x.row(i)[4..].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn dump_lists_nodes_and_edges() {
        let s = stream(&[(A, B, 1.0), (B, C, 2.0)], 3);
        let sub = extract_enclosing_subgraph(&TemporalAdjacency::build(&s), A, C, 5.0, 1, 20).unwrap();
        let text = sub.dump();
        assert!(text.starts_with("subgraph u=0 v=2"));
        assert!(text.contains("node 2 id=1 label=2"));
        assert!(text.contains("edge 0 2"));
    }
}
