//! Seeded synthetic call streams with repeat-partner and triadic-closure
//! behaviour, used as a desk-scale testbed.

use crate::error::{config, Result};
use crate::events::{Event, EventStream, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Probability of calling a previous partner again.
    pub p_repeat: f64,
    /// Probability of calling a partner of a partner.
    pub p_triad: f64,
    /// Mean of the exponential inter-arrival time, seconds.
    pub mean_gap_s: f64,
    /// Mean of the exponential call duration, seconds.
    pub mean_duration_s: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            p_repeat: 0.4,
            p_triad: 0.4,
            mean_gap_s: 60.0,
            mean_duration_s: 120.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_repeat) || !prob(self.p_triad) || self.p_repeat + self.p_triad > 1.0 {
            return Err(config(format!(
                "p_repeat={} and p_triad={} must be probabilities summing to at most 1",
                self.p_repeat, self.p_triad
            )));
        }
        if !(self.mean_gap_s > 0.0 && self.mean_gap_s.is_finite()) {
            return Err(config("mean_gap_s must be positive"));
        }
        if !(self.mean_duration_s > 0.0 && self.mean_duration_s.is_finite()) {
            return Err(config("mean_duration_s must be positive"));
        }
        Ok(())
    }
}

/// Which mechanism produced each event. Fallbacks count as `uniform`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SynthStats {
    pub repeat: usize,
    pub triad: usize,
    pub uniform: usize,
}

pub fn generate_synthetic(
    num_nodes: usize,
    num_events: usize,
    params: &SynthParams,
    seed: u64,
) -> Result<EventStream> {
    generate_synthetic_with_stats(num_nodes, num_events, params, seed).map(|(s, _)| s)
}

/// Each event picks a uniform caller, then a callee: a past partner with
/// probability `p_repeat`, a partner-of-partner with probability `p_triad`,
/// otherwise a uniform node. Past partners are drawn in proportion to how often
/// they were called.
pub fn generate_synthetic_with_stats(
    num_nodes: usize,
    num_events: usize,
    params: &SynthParams,
    seed: u64,
) -> Result<(EventStream, SynthStats)> {
    if num_nodes < 3 {
        return Err(config(format!("synthetic stream needs ≥ 3 nodes, got {num_nodes}")));
    }
    if num_events == 0 {
        return Err(config("synthetic stream needs ≥ 1 event"));
    }
    params.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partners: Vec<Vec<NodeId>> = vec![Vec::new(); num_nodes];
    let mut stats = SynthStats::default();
    let mut events = Vec::with_capacity(num_events);
    let mut t = 0.0f64;

    let uniform_other = |rng: &mut ChaCha8Rng, src: NodeId| -> NodeId {
        let r = rng.gen_range(0..num_nodes - 1) as NodeId;
        if r >= src {
            r + 1
        } else {
            r
        }
    };

    for idx in 0..num_events {
        t += -params.mean_gap_s * (1.0 - rng.gen::<f64>()).ln();
        let src = rng.gen_range(0..num_nodes) as NodeId;
        let roll: f64 = rng.gen();
        let mut dst = None;
        if roll < params.p_repeat {
            let hist = &partners[src as usize];
            if !hist.is_empty() {
                dst = Some(hist[rng.gen_range(0..hist.len())]);
                stats.repeat += 1;
            }
        } else if roll < params.p_repeat + params.p_triad {
            dst = pick_triad(&mut rng, &partners, src);
            if dst.is_some() {
                stats.triad += 1;
            }
        }
        let dst = dst.unwrap_or_else(|| {
            stats.uniform += 1;
            uniform_other(&mut rng, src)
        });
        partners[src as usize].push(dst);
        partners[dst as usize].push(src);

        let duration = -params.mean_duration_s * (1.0 - rng.gen::<f64>()).ln();
        let direction = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        events.push(Event {
            idx,
            src,
            dst,
            ts: t,
            feats: vec![duration.ln_1p(), direction],
        });
    }
    Ok((EventStream::new(events, num_nodes, 2)?, stats))
}

fn pick_triad(rng: &mut ChaCha8Rng, partners: &[Vec<NodeId>], src: NodeId) -> Option<NodeId> {
    let hist = &partners[src as usize];
    if hist.is_empty() {
        return None;
    }
    for _ in 0..8 {
        let mid = hist[rng.gen_range(0..hist.len())];
        let second = &partners[mid as usize];
        let w = second[rng.gen_range(0..second.len())];
        if w != src {
            return Some(w);
        }
    }
    None
}
