//! Command-line front end. [`run`] returns the process exit code so the
//! binary and the tests share one entry point.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::analysis::{
    layout_gap, optimize_weight, protocol_error_probability, sweep_comparison, sweep_csv, ErrorProfile, SqueezingLevel,
};
use crate::covsim::{simulate_report, VACUUM_VARIANCE};
use crate::graph::{ClusterGraph, GramKit, GraphKind};
use crate::protocol::{phase_schedule, run_with_schedule, Scenario};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cvtqt",
    version,
    about = "Continuous-variable cluster-state teleportation simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every reproduction check and print a pass/fail table.
    Verify {
        #[arg(long)]
        json: bool,
    },
    /// Run one scenario and print its report as JSON.
    Run {
        #[arg(long)]
        scenario: String,
        /// twelve | three:g12,g13,g23 | two | file:<path>
        #[arg(long, conflicts_with = "graph_file")]
        graph: Option<String>,
        #[arg(long)]
        graph_file: Option<PathBuf>,
        /// Squeezing in dB.
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        s: f64,
        /// Cross-check the variances with the covariance simulator.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write failure probabilities of the three layouts as CSV.
    Sweep {
        #[arg(long, allow_negative_numbers = true)]
        s_min: f64,
        #[arg(long, allow_negative_numbers = true)]
        s_max: f64,
        #[arg(long)]
        step: f64,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the three-node weight minimizing the failure probability.
    OptimizeG {
        #[arg(long)]
        s: f64,
    },
    /// Print a graph with its Gram matrix.
    Describe {
        #[arg(long, conflicts_with = "graph_file")]
        graph: Option<String>,
        #[arg(long)]
        graph_file: Option<PathBuf>,
    },
}

/// Graph selector accepted by `--graph`.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    Kind(GraphKind),
    File(PathBuf),
}

impl FromStr for GraphSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "twelve" => return Ok(GraphSpec::Kind(GraphKind::Twelve)),
            "two" => return Ok(GraphSpec::Kind(GraphKind::Two)),
            _ => {}
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(GraphSpec::File(PathBuf::from(path)));
        }
        if let Some(list) = s.strip_prefix("three:") {
            let w: Vec<f64> = list
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("bad weight in `{s}`: {e}"))?;
            if w.len() != 3 || w.iter().any(|x| !x.is_finite()) {
                return Err(format!("`three:` needs three finite weights, got `{list}`"));
            }
            return Ok(GraphSpec::Kind(GraphKind::Three {
                g12: w[0],
                g13: w[1],
                g23: w[2],
            }));
        }
        Err(format!(
            "unknown graph `{s}` (twelve | three:g12,g13,g23 | two | file:<path>)"
        ))
    }
}

impl GraphSpec {
    pub fn load(&self) -> Result<ClusterGraph, String> {
        match self {
            GraphSpec::Kind(kind) => Ok(ClusterGraph::canonical(*kind)),
            GraphSpec::File(path) => load_graph_file(path),
        }
    }
}

fn load_graph_file(path: &Path) -> Result<ClusterGraph, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    ClusterGraph::from_text(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn resolve_graph(
    graph: Option<&str>,
    graph_file: Option<&Path>,
    default: Option<GraphKind>,
) -> Result<ClusterGraph, String> {
    match (graph, graph_file) {
        (Some(spec), _) => spec.parse::<GraphSpec>()?.load(),
        (None, Some(path)) => load_graph_file(path),
        (None, None) => default
            .map(ClusterGraph::canonical)
            .ok_or_else(|| "a graph is required (--graph or --graph-file)".to_string()),
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INVALID
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32, String> {
    let io = |e: std::io::Error| e.to_string();
    match command {
        Command::Verify { json } => {
            let results = verify::run_all();
            let all = results.iter().all(|r| r.passed);
            if json {
                let doc = serde_json::to_string_pretty(&results).map_err(|e| e.to_string())?;
                writeln!(out, "{doc}").map_err(io)?;
            } else {
                for r in &results {
                    writeln!(out, "{}", r.line()).map_err(io)?;
                }
                let passed = results.iter().filter(|r| r.passed).count();
                writeln!(out, "{passed}/{} checks passed", results.len()).map_err(io)?;
            }
            Ok(if all { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Run {
            scenario,
            graph,
            graph_file,
            s,
            oracle,
            seed,
        } => {
            let scenario: Scenario = scenario
                .parse()
                .map_err(|e: crate::protocol::ProtocolError| e.to_string())?;
            let default = match scenario.required_nodes() {
                12 => GraphKind::Twelve,
                3 => GraphKind::Three {
                    g12: 1.0,
                    g13: 1.0,
                    g23: 0.0,
                },
                _ => GraphKind::Two,
            };
            let graph = resolve_graph(graph.as_deref(), graph_file.as_deref(), Some(default))?;
            let level = SqueezingLevel::from_db(s).map_err(|e| e.to_string())?;
            let setup = scenario.setup().map_err(|e| e.to_string())?;
            let schedule = phase_schedule(scenario, &graph).map_err(|e| e.to_string())?;
            let mut report = run_with_schedule(&graph, &setup, &schedule).map_err(|e| e.to_string())?;
            report.label = scenario.to_string();
            let profile = ErrorProfile::from_report(&report).map_err(|e| e.to_string())?;
            let mut doc = json!({
                "scenario": scenario.to_string(),
                "graph": graph.to_rows(),
                "s_db": s,
                "squeezed_variance": level.variance,
                "schedule": schedule,
                "report": report,
                "error_probability": protocol_error_probability(&profile, level),
            });
            if oracle {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sim = simulate_report(&graph, &setup.attachments, &report, s, &[], &mut rng)
                    .map_err(|e| e.to_string())?;
                let expected: Vec<f64> = report
                    .variances
                    .iter()
                    .map(|c| VACUUM_VARIANCE + c * level.variance)
                    .collect();
                let deltas: Vec<f64> = sim
                    .channel_variances
                    .iter()
                    .zip(&expected)
                    .map(|(a, b)| a - b)
                    .collect();
                let max_delta = deltas.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                doc["oracle"] = json!({
                    "seed": seed,
                    "expected": expected,
                    "channel_variances": sim.channel_variances,
                    "direct_variances": sim.direct_variances,
                    "conditional_variances": sim.conditional_variances,
                    "deltas": deltas,
                    "max_abs_delta": max_delta,
                });
            }
            let text = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
            writeln!(out, "{text}").map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::Sweep {
            s_min,
            s_max,
            step,
            out: path,
        } => {
            let rows = sweep_comparison(s_min, s_max, step).map_err(|e| e.to_string())?;
            let csv = sweep_csv(&rows);
            match path {
                Some(path) => {
                    write_atomic(&path, csv.as_bytes())?;
                    writeln!(out, "wrote {} rows to {}", rows.len(), path.display()).map_err(io)?;
                    if (s_min..=s_max).contains(&8.0) {
                        let gap = layout_gap(8.0).map_err(|e| e.to_string())?;
                        writeln!(
                            out,
                            "at 8 dB: relative gap {}, absolute gap {}",
                            gap.relative, gap.absolute
                        )
                        .map_err(io)?;
                    }
                }
                None => out.write_all(csv.as_bytes()).map_err(io)?,
            }
            Ok(EXIT_OK)
        }
        Command::OptimizeG { s } => {
            let opt = optimize_weight(s).map_err(|e| e.to_string())?;
            let text = serde_json::to_string_pretty(&opt).map_err(|e| e.to_string())?;
            writeln!(out, "{text}").map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::Describe { graph, graph_file } => {
            let graph = resolve_graph(graph.as_deref(), graph_file.as_deref(), None)?;
            let kit = GramKit::new(&graph).map_err(|e| e.to_string())?;
            let edges: Vec<_> = (1..=graph.node_count())
                .flat_map(|i| {
                    let g = &graph;
                    g.neighbours(i)
                        .filter(move |&(j, _)| j > i)
                        .map(move |(j, w)| json!([i, j, w]))
                })
                .collect();
            let doc = json!({
                "nodes": graph.node_count(),
                "edges": edges,
                "weights": graph.to_rows(),
                "gram": crate::graph::matrix_rows(&kit.gram),
                "gram_min_eigenvalue": kit.min_eigenvalue().map_err(|e| e.to_string())?,
            });
            let text = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
            writeln!(out, "{text}").map_err(io)?;
            Ok(EXIT_OK)
        }
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), String> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).map_err(|e| format!("cannot create file in {}: {e}", dir.display()))?;
    tmp.write_all(bytes).map_err(|e| e.to_string())?;
    tmp.as_file().sync_all().map_err(|e| e.to_string())?;
    tmp.persist(path)
        .map_err(|e| format!("cannot write {}: {}", path.display(), e.error))?;
    Ok(())
}
