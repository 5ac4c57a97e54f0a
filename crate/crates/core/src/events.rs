//! Time-ordered interaction log, temporal neighbor index, chronological
//! splitting and negative sampling.

use crate::error::{config, Error, Result};
use crate::rng::{derived_rng, TAG_SPLIT};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;
use std::ops::Range;

pub type NodeId = u32;

/// One directed, timestamped interaction `src → dst` with edge features.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub idx: usize,
    pub src: NodeId,
    pub dst: NodeId,
    /// Seconds.
    pub ts: f64,
    pub feats: Vec<f64>,
}

impl Event {
    pub fn touches(&self, node: NodeId) -> bool {
        self.src == node || self.dst == node
    }
}

/// Events sorted by `(ts, idx)` with `idx` equal to the position in the log.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EventStream {
    events: Vec<Event>,
    num_nodes: usize,
    feat_dim: usize,
}

impl EventStream {
    /// Sorts by `(ts, idx)` (stable), renumbers `idx` to positions and validates.
    ///
    /// `num_nodes` may exceed the largest id in use; it must not be smaller.
    pub fn new(mut events: Vec<Event>, num_nodes: usize, feat_dim: usize) -> Result<Self> {
        for e in &events {
            if !e.ts.is_finite() {
                return Err(Error::Format(format!("event {} has non-finite ts", e.idx)));
            }
            if e.src == e.dst {
                return Err(Error::Format(format!("event {} is a self-interaction", e.idx)));
            }
            if e.src as usize >= num_nodes || e.dst as usize >= num_nodes {
                return Err(Error::Format(format!(
                    "event {} references node beyond num_nodes={num_nodes}",
                    e.idx
                )));
            }
            if e.feats.len() != feat_dim {
                return Err(Error::Format(format!(
                    "event {} has {} features, expected {feat_dim}",
                    e.idx,
                    e.feats.len()
                )));
            }
        }
        events.sort_by(|a, b| a.ts.total_cmp(&b.ts).then(a.idx.cmp(&b.idx)));
        for (i, e) in events.iter_mut().enumerate() {
            e.idx = i;
        }
        Ok(Self {
            events,
            num_nodes,
            feat_dim,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    /// The first `n` events as a stream of its own (same node universe).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            events: self.events[..n.min(self.events.len())].to_vec(),
            num_nodes: self.num_nodes,
            feat_dim: self.feat_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjEntry {
    pub neighbor: NodeId,
    pub ts: f64,
    pub event_idx: usize,
}

/// Per-node, time-sorted undirected view of an [`EventStream`].
#[derive(Clone, Debug, Default)]
pub struct TemporalAdjacency {
    lists: Vec<Vec<AdjEntry>>,
}

impl TemporalAdjacency {
    pub fn build(stream: &EventStream) -> Self {
        Self::build_filtered(stream, |_| true)
    }

    /// Index over the events for which `keep` holds.
    pub fn build_filtered(stream: &EventStream, keep: impl Fn(&Event) -> bool) -> Self {
        let mut lists = vec![Vec::new(); stream.num_nodes()];
        for e in stream.events().iter().filter(|e| keep(e)) {
            lists[e.src as usize].push(AdjEntry {
                neighbor: e.dst,
                ts: e.ts,
                event_idx: e.idx,
            });
            lists[e.dst as usize].push(AdjEntry {
                neighbor: e.src,
                ts: e.ts,
                event_idx: e.idx,
            });
        }
        Self { lists }
    }

    pub fn num_nodes(&self) -> usize {
        self.lists.len()
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Full list of a node, oldest first. Unknown nodes have none.
    pub fn entries(&self, node: NodeId) -> &[AdjEntry] {
        self.lists.get(node as usize).map_or(&[], Vec::as_slice)
    }

    /// Every entry of `node` strictly before `t`, oldest first.
    pub fn history_before(&self, node: NodeId, t: f64) -> &[AdjEntry] {
        let list = self.entries(node);
        let end = list.partition_point(|e| e.ts < t);
        &list[..end]
    }

    /// The `limit` most recent entries of `node` strictly before `t`, most recent last.
    pub fn neighbors_before(&self, node: NodeId, t: f64, limit: usize) -> &[AdjEntry] {
        let hist = self.history_before(node, t);
        &hist[hist.len().saturating_sub(limit)..]
    }

    /// Up to `cap` distinct neighbors seen strictly before `t`, most recent first.
    pub fn recent_distinct_neighbors(&self, node: NodeId, t: f64, cap: usize) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = Vec::with_capacity(cap);
        for e in self.history_before(node, t).iter().rev() {
            if out.len() == cap {
                break;
            }
            if !out.contains(&e.neighbor) {
                out.push(e.neighbor);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Train,
    Val,
    Test,
}

/// Chronological split boundaries plus the nodes held out as "unseen".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: usize,
    pub val_end: usize,
    pub len: usize,
    pub unseen_nodes: BTreeSet<NodeId>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn range(&self, region: Region) -> Range<usize> {
        match region {
            Region::Train => 0..self.train_end,
            Region::Val => self.train_end..self.val_end,
            Region::Test => self.val_end..self.len,
        }
    }

    pub fn region_of(&self, idx: usize) -> Region {
        if idx < self.train_end {
            Region::Train
        } else if idx < self.val_end {
            Region::Val
        } else {
            Region::Test
        }
    }

    pub fn is_unseen_node(&self, node: NodeId) -> bool {
        self.unseen_nodes.contains(&node)
    }

    /// At least one endpoint is held out.
    pub fn is_unseen_event(&self, e: &Event) -> bool {
        self.is_unseen_node(e.src) || self.is_unseen_node(e.dst)
    }

    /// Training events touching unseen nodes are masked out of every history.
    pub fn is_visible(&self, e: &Event) -> bool {
        e.idx >= self.train_end || !self.is_unseen_event(e)
    }
}

fn boundary(frac: f64, n: usize) -> usize {
    ((frac * n as f64) + 1e-9).floor().min(n as f64) as usize
}

/// Splits at the `train_frac` and `train_frac + val_frac` quantiles of the
/// time-ordered stream and selects unseen nodes.
///
/// Unseen nodes are every node that first appears after the training region,
/// plus `round(unseen_frac · num_nodes)` nodes drawn (seeded) from those
/// active after the training region; their training events get masked.
pub fn chronological_split(
    stream: &EventStream,
    train_frac: f64,
    val_frac: f64,
    unseen_frac: f64,
    seed: u64,
) -> Result<SplitSpec> {
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);
    if !in_unit(train_frac) || !in_unit(val_frac) || train_frac + val_frac >= 1.0 {
        return Err(config(format!(
            "split fractions train={train_frac} val={val_frac} must be non-negative and sum below 1"
        )));
    }
    if !(0.0..1.0).contains(&unseen_frac) {
        return Err(config(format!("unseen_frac={unseen_frac} must lie in [0, 1)")));
    }
    let n = stream.len();
    let train_end = boundary(train_frac, n);
    let val_end = boundary(train_frac + val_frac, n).max(train_end);

    let events = stream.events();
    let in_train: BTreeSet<NodeId> = events[..train_end]
        .iter()
        .flat_map(|e| [e.src, e.dst])
        .collect();
    let later: BTreeSet<NodeId> = events[train_end..]
        .iter()
        .flat_map(|e| [e.src, e.dst])
        .collect();

    let mut unseen: BTreeSet<NodeId> = later.difference(&in_train).copied().collect();
    let want = (unseen_frac * stream.num_nodes() as f64).round() as usize;
    let candidates: Vec<NodeId> = later.iter().copied().collect();
    let mut rng = derived_rng(seed, &[TAG_SPLIT]);
    unseen.extend(
        candidates
            .choose_multiple(&mut rng, want.min(candidates.len()))
            .copied(),
    );

    Ok(SplitSpec {
        train_end,
        val_end,
        len: n,
        unseen_nodes: unseen,
        seed,
    })
}

/// Uniform draw over `[0, num_nodes) \ {exclude}`.
pub fn sample_negative<R: Rng + ?Sized>(rng: &mut R, num_nodes: usize, exclude: NodeId) -> Result<NodeId> {
    if num_nodes < 2 {
        return Err(config(format!(
            "negative sampling needs at least 2 nodes, got {num_nodes}"
        )));
    }
    if (exclude as usize) >= num_nodes {
        return Ok(rng.gen_range(0..num_nodes) as NodeId);
    }
    let r = rng.gen_range(0..num_nodes - 1) as NodeId;
    Ok(if r >= exclude { r + 1 } else { r })
}

/// Negative destination for the event `src → dst`: uniform over every node
/// except the true destination and the source itself.
pub fn sample_negative_destination<R: Rng + ?Sized>(
    rng: &mut R,
    num_nodes: usize,
    src: NodeId,
    dst: NodeId,
) -> Result<NodeId> {
    if num_nodes < 3 || src == dst || src as usize >= num_nodes || dst as usize >= num_nodes {
        return Err(config(format!(
            "negative destination for {src}→{dst} needs two distinct endpoints among at least 3 nodes, got {num_nodes}"
        )));
    }
    let (lo, hi) = (src.min(dst), src.max(dst));
    let mut r = rng.gen_range(0..num_nodes - 2) as NodeId;
    if r >= lo {
        r += 1;
    }
    if r >= hi {
        r += 1;
    }
    Ok(r)
}
