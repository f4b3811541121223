use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tesh_core::bench::{self, BenchSpec};
use tesh_core::config::Config;
use tesh_core::data::{load_graph, perturb, HeteroGraph, Split};
use tesh_core::metrics::summarize;
use tesh_core::pipeline::{train_dir, Session};
use tesh_core::Result;

#[derive(Parser)]
#[command(name = "tesh", version, about = "Sparse hyperbolic link prediction on text-rich heterogeneous graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an edge list and node texts and cache them in a directory.
    Ingest {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print sparsity, hyperbolicity and shortest-path statistics as JSON.
    Metrics {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write a checkpoint plus its JSON history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Configuration override, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_parser = ["val", "test"])]
        split: String,
    },
    /// Print the per-edge-type link scores of one pair.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        pair: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print the metapath trace of one prediction as JSON.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        pair: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cells kept per layer.
        #[arg(long, default_value_t = 1)]
        top: usize,
        /// Plain-text report instead of JSON.
        #[arg(long)]
        text: bool,
    },
    /// Write a copy of a dataset with dropped nodes and swapped texts.
    Perturb {
        #[arg(long)]
        data: PathBuf,
        /// Percentage of nodes to drop.
        #[arg(long)]
        node_drop: f64,
        /// Percentage of surviving node texts to replace.
        #[arg(long)]
        text_replace: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time one convolution layer over a grid of sizes and write CSV.
    Bench {
        #[arg(long, default_value = "V=512,1024,2048;nnz=10000,20000")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn history_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
    name.push(".history.json");
    ckpt.with_file_name(name)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { edges, nodes, out } => {
            let loaded = load_graph(&edges, &nodes)?;
            loaded.graph.save(&out)?;
            print_json(&serde_json::json!({
                "nodes": loaded.graph.num_nodes(),
                "edges": loaded.graph.num_edges(),
                "edge_types": loaded.graph.edge_types(),
                "duplicate_edges": loaded.duplicate_edges,
            }))
        }
        Command::Metrics { data, samples, seed } => {
            let g = HeteroGraph::load_dir(&data)?;
            print_json(&summarize(&g, samples, seed)?)
        }
        Command::Train { data, config, out, overrides } => {
            let mut cfg = Config::load(&config)?;
            cfg.apply_overrides(&overrides)?;
            let run = train_dir(&data, &cfg)?;
            run.save(&out)?;
            let history = run.history_json();
            std::fs::write(history_path(&out), serde_json::to_string_pretty(&history)?)?;
            print_json(&history)
        }
        Command::Eval { data, ckpt, split } => {
            let s = Session::open(&ckpt, Some(&data))?;
            print_json(&s.evaluate(Split::parse(&split)?)?)
        }
        Command::Predict { ckpt, pair, data } => {
            let s = Session::open(&ckpt, data.as_deref())?;
            let (i, j) = (s.resolve(&pair[0])?, s.resolve(&pair[1])?);
            print_json(&s.predict_json(i, j)?)
        }
        Command::Explain { ckpt, pair, data, top, text } => {
            let s = Session::open(&ckpt, data.as_deref())?;
            let (i, j) = (s.resolve(&pair[0])?, s.resolve(&pair[1])?);
            let report = s.explain(i, j, top)?;
            if text {
                print!("{}", report.text);
                Ok(())
            } else {
                print_json(&report.json)
            }
        }
        Command::Perturb { data, node_drop, text_replace, seed, out } => {
            let g = HeteroGraph::load_dir(&data)?;
            let noisy = perturb(&g, node_drop, text_replace, seed)?;
            noisy.save(&out)?;
            print_json(&serde_json::json!({ "nodes": noisy.num_nodes(), "edges": noisy.num_edges() }))
        }
        Command::Bench { grid, out } => {
            let rows = bench::run(&BenchSpec::parse(&grid)?)?;
            let mut w = BufWriter::new(File::create(&out)?);
            bench::write_csv(&mut w, &rows)?;
            w.flush()?;
            let mut stdout = std::io::stdout().lock();
            bench::write_csv(&mut stdout, &rows)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
