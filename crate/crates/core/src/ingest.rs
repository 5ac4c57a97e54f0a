//! Call-detail-record CSV ingestion and the canonical event CSV.
//!
//! Raw input header (exact): `caller_id,callee_id,unix_ts,direction,duration_s`.
//! Canonical output header (exact): `src,dst,ts,f0,f1` with dense node ids,
//! rows sorted by `ts`, `f0 = ln(1 + duration_s)` and `f1 = 1` for outgoing calls.

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, NodeId};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

pub const RAW_HEADER: [&str; 5] = ["caller_id", "callee_id", "unix_ts", "direction", "duration_s"];
pub const EVENT_HEADER: [&str; 5] = ["src", "dst", "ts", "f0", "f1"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "in" => Some(Self::In),
            "out" => Some(Self::Out),
            _ => None,
        }
    }

    pub fn as_feature(self) -> f64 {
        match self {
            Self::In => 0.0,
            Self::Out => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawCdrRecord {
    pub caller: String,
    pub callee: String,
    pub ts: f64,
    pub direction: Direction,
    pub duration_s: f64,
}

impl RawCdrRecord {
    fn key(&self) -> (&str, &str, u64, Direction, u64) {
        (
            &self.caller,
            &self.callee,
            self.ts.to_bits(),
            self.direction,
            self.duration_s.to_bits(),
        )
    }
}

/// Outcome of reading a raw file: how many rows were kept and why others were skipped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub rows: usize,
    pub records: usize,
    pub skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
}

impl ParseReport {
    fn skip(&mut self, reason: &str) {
        self.skipped += 1;
        *self.skip_reasons.entry(reason.to_string()).or_default() += 1;
    }
}

pub fn parse_cdr_csv(path: impl AsRef<Path>) -> Result<(Vec<RawCdrRecord>, ParseReport)> {
    parse_cdr_reader(File::open(path)?)
}

pub fn parse_cdr_reader<R: Read>(input: R) -> Result<(Vec<RawCdrRecord>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = rdr.byte_records();
    let header = match rows.next() {
        Some(h) => h.map_err(csv_io)?,
        None => return Err(Error::Format("missing header".into())),
    };
    if header.iter().ne(RAW_HEADER.iter().map(|h| h.as_bytes())) {
        return Err(Error::Format(format!(
            "header must be `{}`",
            RAW_HEADER.join(",")
        )));
    }

    let mut records = Vec::new();
    let mut report = ParseReport::default();
    for row in rows {
        let row = row.map_err(csv_io)?;
        report.rows += 1;
        if row.len() != RAW_HEADER.len() {
            report.skip("field_count");
            continue;
        }
        let Ok(fields) = row
            .iter()
            .map(std::str::from_utf8)
            .collect::<Result<Vec<&str>, _>>()
        else {
            report.skip("invalid_utf8");
            continue;
        };
        match parse_row(&fields) {
            Ok(rec) => {
                records.push(rec);
                report.records += 1;
            }
            Err(reason) => report.skip(reason),
        }
    }
    Ok((records, report))
}

fn csv_io(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    } else {
        Error::Csv(e)
    }
}

fn parse_row(f: &[&str]) -> std::result::Result<RawCdrRecord, &'static str> {
    if f[0].is_empty() || f[1].is_empty() {
        return Err("missing_id");
    }
    let ts: f64 = f[2].parse().map_err(|_| "bad_timestamp")?;
    if !ts.is_finite() {
        return Err("bad_timestamp");
    }
    let direction = Direction::parse(f[3]).ok_or("bad_direction")?;
    let duration_s: f64 = f[4].parse().map_err(|_| "bad_duration")?;
    if !duration_s.is_finite() {
        return Err("bad_duration");
    }
    if duration_s < 0.0 {
        return Err("negative_duration");
    }
    Ok(RawCdrRecord {
        caller: f[0].to_string(),
        callee: f[1].to_string(),
        ts,
        direction,
        duration_s,
    })
}

/// Bidirectional external-id ↔ dense [`NodeId`] map, ids assigned from 0 in
/// order of first use.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    to_dense: HashMap<String, NodeId>,
    to_external: Vec<String>,
}

impl IdMap {
    pub fn get_or_insert(&mut self, external: &str) -> NodeId {
        if let Some(&id) = self.to_dense.get(external) {
            return id;
        }
        let id = self.to_external.len() as NodeId;
        self.to_external.push(external.to_string());
        self.to_dense.insert(external.to_string(), id);
        id
    }

    pub fn dense(&self, external: &str) -> Option<NodeId> {
        self.to_dense.get(external).copied()
    }

    pub fn external(&self, id: NodeId) -> Option<&str> {
        self.to_external.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.to_external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_external.is_empty()
    }
}

/// Drops self-calls and exact duplicates (first occurrence wins), then sorts by
/// `ts`, keeping arrival order among equal timestamps.
pub fn clean_records(records: &[RawCdrRecord]) -> Vec<RawCdrRecord> {
    let mut seen = HashSet::new();
    let mut kept: Vec<RawCdrRecord> = records
        .iter()
        .filter(|r| r.caller != r.callee)
        .filter(|r| seen.insert(r.key()))
        .cloned()
        .collect();
    kept.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    kept
}

/// Cleans the records and converts them to an [`EventStream`] with features
/// `[ln(1 + duration_s), direction]`.
pub fn clean_events(records: &[RawCdrRecord]) -> (EventStream, IdMap) {
    let cleaned = clean_records(records);
    let mut ids = IdMap::default();
    let events: Vec<Event> = cleaned
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let src = ids.get_or_insert(&r.caller);
            let dst = ids.get_or_insert(&r.callee);
            Event {
                idx,
                src,
                dst,
                ts: r.ts,
                feats: vec![r.duration_s.ln_1p(), r.direction.as_feature()],
            }
        })
        .collect();
    let stream = EventStream::new(events, ids.len(), 2)
        .expect("cleaned records satisfy stream invariants");
    (stream, ids)
}

pub fn write_events_csv<W: Write>(out: W, stream: &EventStream) -> Result<()> {
    if stream.feat_dim() != 2 {
        return Err(Error::Format(format!(
            "canonical CSV carries exactly 2 features, stream has {}",
            stream.feat_dim()
        )));
    }
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(EVENT_HEADER)?;
    for e in stream.events() {
        w.write_record([
            e.src.to_string(),
            e.dst.to_string(),
            e.ts.to_string(),
            e.feats[0].to_string(),
            e.feats[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_events_csv(path: impl AsRef<Path>, stream: &EventStream) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    write_events_csv(&mut file, stream)?;
    file.flush()?;
    Ok(())
}

/// Reads a canonical event CSV. Unlike the raw reader this is strict: any
/// malformed row is an error naming its line.
pub fn read_events_csv<R: Read>(input: R) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h.map_err(csv_io)?,
        None => return Err(Error::Format("missing header".into())),
    };
    if header.iter().ne(EVENT_HEADER.iter().copied()) {
        return Err(Error::Format(format!("header must be `{}`", EVENT_HEADER.join(","))));
    }
    let mut events = Vec::new();
    let mut num_nodes = 0usize;
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(csv_io)?;
        let bad = |what: &str| Error::Format(format!("line {line}: bad {what}"));
        let src: NodeId = row[0].parse().map_err(|_| bad("src"))?;
        let dst: NodeId = row[1].parse().map_err(|_| bad("dst"))?;
        let ts: f64 = row[2].parse().map_err(|_| bad("ts"))?;
        let f0: f64 = row[3].parse().map_err(|_| bad("f0"))?;
        let f1: f64 = row[4].parse().map_err(|_| bad("f1"))?;
        num_nodes = num_nodes.max(src.max(dst) as usize + 1);
        events.push(Event {
            idx: i,
            src,
            dst,
            ts,
            feats: vec![f0, f1],
        });
    }
    EventStream::new(events, num_nodes, 2)
}

pub fn load_events_csv(path: impl AsRef<Path>) -> Result<EventStream> {
    read_events_csv(File::open(path)?)
}
