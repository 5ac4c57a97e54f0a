//! Small streams and configurations shared by the pipeline tests and the
//! acceptance suite, plus the leakage and determinism checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use tgn_seal::experiment::report_json;
use tgn_seal::{
    generate_synthetic, train_and_evaluate, EventStream, ModelKind, Session, SplitSpec, SynthParams, TrainConfig,
};

/// A configuration small enough to train in well under a second per epoch.
pub fn tiny_config(model: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig {
        model,
        d_mem: 8,
        d_time: 4,
        batch_size: 20,
        lr: 1e-3,
        epochs: 2,
        patience: 2,
        seed,
        sortpool_k: Some(10),
        time_scale: Some(60.0),
        dgcnn_channels: vec![8, 8, 1],
        conv1_filters: 4,
        conv2_filters: 8,
        dense_units: 16,
        ..TrainConfig::default()
    }
}

pub fn synth(nodes: usize, events: usize, seed: u64) -> EventStream {
    generate_synthetic(nodes, events, &SynthParams::default(), seed).expect("synthetic stream")
}

/// Stream number `i` of the fuzz corpus: varied sizes, batch sizes and models.
pub fn fuzz_case(i: u64) -> (EventStream, TrainConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
    let nodes = rng.gen_range(8..40);
    let events = rng.gen_range(60..200);
    let params = SynthParams {
        // coarse clocks make same-timestamp events common
        mean_gap_s: if rng.gen_bool(0.5) { 0.3 } else { 60.0 },
        ..SynthParams::default()
    };
    let stream = generate_synthetic(nodes, events, &params, rng.gen()).expect("fuzz stream");
    let stream = coarsen(&stream);
    let model = [ModelKind::TgnSeal, ModelKind::TgnId, ModelKind::TgnTime][(i % 3) as usize];
    let mut cfg = tiny_config(model, i);
    cfg.batch_size = rng.gen_range(3..30);
    cfg.k = rng.gen_range(1..=3);
    cfg.cap = rng.gen_range(1..8);
    cfg.train_memory = rng.gen_bool(0.5);
    (stream, cfg)
}

/// Rounds timestamps down to whole seconds so ties appear.
fn coarsen(stream: &EventStream) -> EventStream {
    let events = stream
        .events()
        .iter()
        .map(|e| tgn_seal::Event { ts: e.ts.floor(), ..e.clone() })
        .collect();
    EventStream::new(events, stream.num_nodes(), stream.feat_dim()).expect("coarsened stream")
}

/// Trains one epoch, then walks the whole stream batch by batch: each batch
/// is scored as given and shuffled, and every subgraph it reads is checked
/// against the cutoff. Returns the number of predictions compared.
pub fn check_batch_permutation(stream: &EventStream, cfg: &TrainConfig, seed: u64) -> Result<usize, String> {
    let err = |e: tgn_seal::Error| e.to_string();
    let mut session = Session::new(stream, cfg).map_err(err)?;
    session.train_epoch(0).map_err(err)?;
    session.reset_memory();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0;
    for batch in stream.events().chunks(cfg.batch_size) {
        let key = |items: Vec<tgn_seal::train::ScoredItem>| -> BTreeMap<(usize, usize), u64> {
            items.iter().map(|s| ((s.event_idx, s.slot), s.score.to_bits())).collect()
        };
        let plain = key(session.score_events(batch).map_err(err)?);
        let mut shuffled = batch.to_vec();
        shuffled.shuffle(&mut rng);
        let permuted = key(session.score_events(&shuffled).map_err(err)?);
        if plain != permuted {
            return Err(format!("batch starting at event {} changed under permutation", batch[0].idx));
        }
        compared += plain.len();
        for s in session.score_events(batch).map_err(err)? {
            let sub = session.extract(s.src, s.dst, s.t).map_err(err)?;
            for &idx in &sub.edge_event {
                if stream.events()[idx].ts >= s.t {
                    return Err(format!("subgraph for event {} reads event {idx} at or after the cutoff", s.event_idx));
                }
            }
        }
        session.flush_events(batch).map_err(err)?;
    }
    Ok(compared)
}

/// Scores of event `e` from the full stream and from the stream cut just
/// before `e`, with identical parameters and identical memory replay.
pub fn check_truncation(stream: &EventStream, cfg: &TrainConfig, samples: usize, seed: u64) -> Result<usize, String> {
    let err = |e: tgn_seal::Error| e.to_string();
    let mut full = Session::new(stream, cfg).map_err(err)?;
    full.train_epoch(0).map_err(err)?;
    let params = full.checkpoint_tensors();
    let split = full.split().clone();
    let bs = cfg.batch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for _ in 0..samples {
        let e = rng.gen_range(1..stream.len());
        let event = stream.events()[e].clone();
        if !split.is_visible(&event) {
            continue;
        }
        let cut = stream.truncated(e);
        let cut_split = SplitSpec {
            train_end: split.train_end.min(e),
            val_end: split.val_end.min(e),
            len: e,
            ..split.clone()
        };
        let mut short = Session::with_split(&cut, full.config(), cut_split).map_err(err)?;
        short.load_parameters(&params).map_err(err)?;
        full.reset_memory();
        let start = e / bs * bs;
        for b in stream.events()[..start].chunks(bs) {
            full.flush_events(b).map_err(err)?;
            short.flush_events(b).map_err(err)?;
        }
        let batch_end = (start + bs).min(stream.len());
        let from_full: Vec<u64> = full
            .score_events(&stream.events()[start..batch_end])
            .map_err(err)?
            .into_iter()
            .filter(|s| s.event_idx == e)
            .map(|s| s.score.to_bits())
            .collect();
        let from_cut: Vec<u64> = short
            .score_events(std::slice::from_ref(&event))
            .map_err(err)?
            .into_iter()
            .map(|s| s.score.to_bits())
            .collect();
        if from_full != from_cut || from_full.is_empty() {
            return Err(format!("event {e}: scores {from_full:?} vs truncated {from_cut:?}"));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Report JSON with the wall-clock field zeroed.
pub fn normalized_report(stream: &EventStream, cfg: &TrainConfig) -> Result<String, String> {
    let mut run = train_and_evaluate(stream, cfg).map_err(|e| e.to_string())?;
    run.report.wall_time_s = 0.0;
    report_json(&run.report).map_err(|e| e.to_string())
}
