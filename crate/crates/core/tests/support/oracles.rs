//! Brute-force references for labels and metrics, written independently of
//! the library code they check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use tgn_seal::{
    average_precision, extract_enclosing_subgraph, mann_whitney_u, Alternative, Event, EventStream, NodeId,
    TemporalAdjacency,
};

/// AP from the definition: the rank of item `i` counts the items placed ahead
/// of it (higher score, or equal score and smaller index).
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut total = 0.0;
    let mut positives = 0;
    for i in (0..n).filter(|&i| labels[i]) {
        let rank = 1 + (0..n).filter(|&j| ahead(j, i)).count();
        let hits = 1 + (0..n).filter(|&j| labels[j] && ahead(j, i)).count();
        total += hits as f64 / rank as f64;
        positives += 1;
    }
    total / positives as f64
}

/// 500 random cases, some with coarse (tied) scores. Returns the largest gap.
pub fn check_average_precision(cases: usize, tol: f64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = rng.gen_range(1..60);
        let coarse = rng.gen_bool(0.3);
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.gen_range(0..5) as f64 / 4.0 } else { rng.gen::<f64>() })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let fix = rng.gen_range(0..n);
        labels[fix] = true;
        let got = average_precision(&scores, &labels).map_err(|e| e.to_string())?;
        let want = brute_force_ap(&scores, &labels);
        let gap = (got - want).abs();
        if gap > tol {
            return Err(format!("case {case}: ap {got} vs brute force {want}"));
        }
        worst = worst.max(gap);
    }
    Ok(worst)
}

fn combinations(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        out(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Exact p-values by walking every assignment of the pooled ranks to `a`.
pub fn enumerated_mwu_p(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (m, n) = (a.len(), b.len());
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let rank_sum: usize = a.iter().map(|x| pooled.iter().position(|y| y == x).unwrap() + 1).sum();
    let observed = rank_sum - m * (m + 1) / 2;
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    combinations(m + n, m, 0, &mut Vec::new(), &mut |chosen| {
        let u = chosen.iter().map(|&r| r + 1).sum::<usize>() - m * (m + 1) / 2;
        total += 1;
        if u <= observed {
            le += 1;
        }
        if u >= observed {
            ge += 1;
        }
    });
    let lower = le as f64 / total as f64;
    let upper = ge as f64 / total as f64;
    ((2.0 * lower.min(upper)).min(1.0), upper, lower)
}

/// Every `|a|, |b|` in `1..=8`, several tie-free draws each, all three
/// alternatives. Returns the largest gap.
pub fn check_mann_whitney_exact(draws: usize, tol: f64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for m in 1..=8 {
        for n in 1..=8 {
            for _ in 0..draws {
                let shift = rng.gen_range(-0.5..0.5);
                let a: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + shift).collect();
                let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                let (two, greater, less) = enumerated_mwu_p(&a, &b);
                for (alt, want) in [
                    (Alternative::TwoSided, two),
                    (Alternative::Greater, greater),
                    (Alternative::Less, less),
                ] {
                    let got = mann_whitney_u(&a, &b, alt).map_err(|e| e.to_string())?;
                    if !got.exact {
                        return Err(format!("m={m} n={n}: exact path not taken"));
                    }
                    let gap = (got.p - want).abs();
                    if gap > tol {
                        return Err(format!("m={m} n={n} {alt:?}: p {} vs enumeration {want}", got.p));
                    }
                    worst = worst.max(gap);
                }
            }
        }
    }
    Ok(worst)
}

/// Label table built by listing distance pairs in the labeling order: by
/// total distance, then by the smaller distance.
fn drnl_table(max_d: usize) -> BTreeMap<(usize, usize), usize> {
    let mut table = BTreeMap::new();
    let mut next = 2;
    for d in 2..=max_d {
        for lo in 1..=d / 2 {
            table.insert((d, lo), next);
            next += 1;
        }
    }
    table
}

fn bfs(adj: &BTreeMap<NodeId, BTreeSet<NodeId>>, src: NodeId, skip: Option<NodeId>) -> BTreeMap<NodeId, usize> {
    let mut dist = BTreeMap::from([(src, 0)]);
    let mut queue = VecDeque::from([src]);
    while let Some(x) = queue.pop_front() {
        for &y in adj.get(&x).into_iter().flatten() {
            if Some(y) != skip && !dist.contains_key(&y) {
                dist.insert(y, dist[&x] + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

/// Random graphs of at most 30 nodes with every edge before the query time,
/// an uncapped neighbor budget, and `k` up to 3. Node sets and labels are
/// recomputed from the raw event list.
pub fn check_drnl(graphs: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let table = drnl_table(64);
    for g in 0..graphs {
        let n = rng.gen_range(3..=30);
        let m = rng.gen_range(1..=3 * n);
        let mut events = Vec::new();
        for i in 0..m {
            let a = rng.gen_range(0..n) as NodeId;
            let mut b = rng.gen_range(0..n) as NodeId;
            if a == b {
                b = (b + 1) % n as NodeId;
            }
            events.push(Event { idx: i, src: a, dst: b, ts: rng.gen_range(0..50) as f64, feats: vec![] });
        }
        let stream = EventStream::new(events, n, 0).map_err(|e| e.to_string())?;
        let t = 100.0;
        let u = rng.gen_range(0..n) as NodeId;
        let v = (u + rng.gen_range(1..n) as NodeId) % n as NodeId;
        let k = rng.gen_range(1..=3);

        let mut full: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for e in stream.events() {
            full.entry(e.src).or_default().insert(e.dst);
            full.entry(e.dst).or_default().insert(e.src);
        }
        let within = |root| -> BTreeSet<NodeId> {
            bfs(&full, root, None).into_iter().filter(|&(_, d)| d <= k).map(|(x, _)| x).collect()
        };
        let keep: BTreeSet<NodeId> = within(u).union(&within(v)).copied().chain([u, v]).collect();
        let induced: BTreeMap<NodeId, BTreeSet<NodeId>> = keep
            .iter()
            .map(|&x| (x, full.get(&x).map(|s| s.intersection(&keep).copied().collect()).unwrap_or_default()))
            .collect();
        let du = bfs(&induced, u, Some(v));
        let dv = bfs(&induced, v, Some(u));
        let expect: BTreeMap<NodeId, usize> = keep
            .iter()
            .map(|&x| {
                let label = if x == u || x == v {
                    1
                } else {
                    match (du.get(&x), dv.get(&x)) {
                        (Some(&a), Some(&b)) => table[&(a + b, a.min(b))],
                        _ => 0,
                    }
                };
                (x, label)
            })
            .collect();

        let adj = TemporalAdjacency::build(&stream);
        let sub = extract_enclosing_subgraph(&adj, u, v, t, k, n).map_err(|e| e.to_string())?;
        let got: BTreeMap<NodeId, usize> = sub.nodes.iter().copied().zip(sub.labels.iter().copied()).collect();
        if got.len() != sub.nodes.len() || got != expect {
            return Err(format!("graph {g} (n={n}, u={u}, v={v}, k={k}): labels {got:?}, oracle {expect:?}"));
        }
    }
    Ok(())
}
