use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tgn_seal::experiment::{
    compare_dirs, load_checkpoint, read_report, run_experiment, write_curves_csv, Metric, CHECKPOINT_FILE,
    REPORT_FILE,
};
use tgn_seal::ingest::{clean_events, load_events_csv, parse_cdr_csv, save_events_csv};
use tgn_seal::{generate_synthetic, Error, NodeId, Result, Session, SynthParams, TrainConfig};

/// Dynamic link prediction with temporal memory and enclosing-subgraph decoding.
#[derive(Parser, Debug)]
#[command(name = "tgn-seal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a raw call-record CSV and write the canonical event CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a seeded synthetic event CSV.
    Synth {
        #[arg(long, default_value_t = 500)]
        nodes: usize,
        #[arg(long, default_value_t = 5000)]
        events: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.4)]
        p_repeat: f64,
        #[arg(long, default_value_t = 0.4)]
        p_triad: f64,
        #[arg(long, default_value_t = 60.0)]
        mean_gap_s: f64,
        #[arg(long, default_value_t = 120.0)]
        mean_duration_s: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train and evaluate; writes report.json and checkpoint.txt per run.
    Train {
        #[arg(long)]
        events: PathBuf,
        /// Flat JSON config; flags below override its keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Independent runs with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[command(flatten)]
        overrides: ConfigFlags,
    },
    /// Re-evaluate a trained run on the test region.
    Eval {
        #[arg(long)]
        events: PathBuf,
        /// Directory holding report.json and checkpoint.txt.
        #[arg(long)]
        run: PathBuf,
        /// Print the enclosing subgraph for `U,V,T` instead of evaluating.
        #[arg(long, value_name = "U,V,T")]
        dump_subgraph: Option<String>,
    },
    /// Mann–Whitney U test between two sets of runs.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "ap_unseen")]
        metric: String,
    },
    /// Write loss and validation-AP curves of a report as CSV.
    ExportCurves {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Per-key overrides of the training config. Defaults shown are those used
/// when neither the config file nor a flag sets the key.
#[derive(Args, Debug, Default, Serialize)]
struct ConfigFlags {
    /// tgn_seal | tgn_id | tgn_time [default: tgn_seal]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    /// identity | time_projection, used by tgn_seal [default: identity]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<String>,
    /// Hop count 1..=3 [default: 2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    /// Most recent distinct neighbors expanded per node per hop [default: 20]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cap: Option<usize>,
    /// Largest structural label [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    l_max: Option<usize>,
    /// Memory width [default: 32]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d_mem: Option<usize>,
    /// Time encoding width [default: 16]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d_time: Option<usize>,
    /// Events per batch [default: 100]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.0001]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    /// Maximum epochs [default: 50]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
    /// Seed of every random draw [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// [default: 0.7]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_frac: Option<f64>,
    /// [default: 0.15]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    val_frac: Option<f64>,
    /// Fraction of nodes held out of training [default: 0.1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    unseen_frac: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    neg_per_pos: Option<usize>,
    /// most_recent | mean [default: most_recent]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregation: Option<String>,
    /// Backpropagate into the memory updater [default: false]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_memory: Option<bool>,
    /// Seconds per time-projection unit [default: mean node gap]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    time_scale: Option<f64>,
    /// SortPooling rows [default: from training subgraph sizes]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sortpool_k: Option<usize>,
    /// Share of subgraphs with at least sortpool_k nodes [default: 0.6]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sortpool_quantile: Option<f64>,
    /// Comma-separated graph-conv widths [default: 32,32,32,1]
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    dgcnn_channels: Option<Vec<usize>>,
    /// [default: 16]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    conv1_filters: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    conv2_filters: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    conv2_kernel: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pool_width: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dense_units: Option<usize>,
    /// [default: 0.5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    /// Worker threads for per-item work; results do not depend on it [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

fn resolve_config(path: Option<&Path>, flags: &ConfigFlags) -> Result<TrainConfig> {
    let base = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let overrides = match serde_json::to_value(flags)? {
        serde_json::Value::Object(map) => map,
        _ => unreachable!("flags serialize to an object"),
    };
    base.with_overrides(&overrides)
}

fn parse_query(text: &str) -> Result<(NodeId, NodeId, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("--dump-subgraph expects U,V,T, got `{text}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let u = parts[0].parse().map_err(|_| bad())?;
    let v = parts[1].parse().map_err(|_| bad())?;
    let t = parts[2].parse().map_err(|_| bad())?;
    Ok((u, v, t))
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map_or_else(|| "absent".to_string(), |v| format!("{v:.6}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, output } => {
            let (records, report) = parse_cdr_csv(&input)?;
            let (stream, ids) = clean_events(&records);
            save_events_csv(&output, &stream)?;
            println!(
                "rows={} parsed={} skipped={} events={} nodes={}",
                report.rows,
                report.records,
                report.skipped,
                stream.len(),
                ids.len()
            );
            for (reason, n) in &report.skip_reasons {
                println!("skipped {reason}={n}");
            }
        }
        Command::Synth {
            nodes,
            events,
            seed,
            p_repeat,
            p_triad,
            mean_gap_s,
            mean_duration_s,
            output,
        } => {
            let params = SynthParams {
                p_repeat,
                p_triad,
                mean_gap_s,
                mean_duration_s,
            };
            let stream = generate_synthetic(nodes, events, &params, seed)?;
            save_events_csv(&output, &stream)?;
            println!("events={} nodes={}", stream.len(), stream.num_nodes());
        }
        Command::Train {
            events,
            config,
            out,
            runs,
            overrides,
        } => {
            let cfg = resolve_config(config.as_deref(), &overrides)?;
            let stream = load_events_csv(&events)?;
            let (reports, summary) = run_experiment(&stream, &cfg, runs, Some(&out))?;
            for r in &reports {
                println!(
                    "model={} seed={} ap_seen={} ap_unseen={} epochs={}",
                    r.model,
                    r.seed,
                    fmt_ap(r.ap_seen),
                    fmt_ap(r.ap_unseen),
                    r.val_ap_curve.len()
                );
            }
            if runs > 1 {
                for (name, s) in [("ap_seen", summary.ap_seen), ("ap_unseen", summary.ap_unseen)] {
                    if let Some(s) = s {
                        println!("{name} mean={:.6} std={:.6} n={}", s.mean, s.std, s.n);
                    }
                }
            }
        }
        Command::Eval {
            events,
            run,
            dump_subgraph,
        } => {
            let report = read_report(run.join(REPORT_FILE))?;
            let stream = load_events_csv(&events)?;
            let mut session = Session::new(&stream, &report.config)?;
            if let Some(q) = dump_subgraph {
                let (u, v, t) = parse_query(&q)?;
                print!("{}", session.extract(u, v, t)?.dump());
                return Ok(());
            }
            session.load_parameters(&load_checkpoint(run.join(CHECKPOINT_FILE))?)?;
            let (seen, unseen) = session.evaluate_test()?;
            println!("ap_seen={} ap_unseen={}", fmt_ap(seen), fmt_ap(unseen));
        }
        Command::Compare { a, b, metric } => {
            let metric = Metric::parse(&metric)?;
            let r = compare_dirs(&a, &b, metric)?;
            println!(
                "U={} p={:.6e} method={}",
                r.u,
                r.p,
                if r.exact { "exact" } else { "normal" }
            );
        }
        Command::ExportCurves { report, output } => {
            let r = read_report(&report)?;
            let file = std::fs::File::create(&output)?;
            write_curves_csv(std::io::BufWriter::new(file), &r)?;
            println!(
                "rows={}",
                r.loss_curve.len() + r.val_ap_curve.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
