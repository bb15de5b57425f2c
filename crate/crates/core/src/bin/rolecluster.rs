use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rolecluster::graph::{
    generate_synthetic, inject_noise, parse_dynamic_graph, serialize_dynamic_graph, EventKind,
    GeneratorConfig,
};
use rolecluster::pipeline::{
    cluster_report, evaluate_run, reasoner_for, train, ModelState, ReasonerMode, RunConfig,
    RunReport,
};

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "rolecluster",
    version,
    about = "Interpretable dynamic graph clustering"
)]
struct Cli {
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// deterministic, llm or off.
    #[arg(long, global = true)]
    reasoner: Option<ReasonerMode>,
    /// Unroll gradients through the recurrent state across snapshots.
    #[arg(long, global = true)]
    bptt: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dynamic graph with planted communities.
    Generate {
        #[arg(long, default_value = "BD")]
        event: EventKind,
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 5)]
        communities: usize,
        #[arg(long, default_value_t = 10)]
        snapshots: usize,
        #[arg(long, default_value_t = 0.3)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 0.2)]
        event_rate: f64,
    },
    /// Add random edges to every snapshot of a graph.
    Noise {
        graph: PathBuf,
        /// Added edges as a fraction of each snapshot's edge count.
        #[arg(long)]
        fraction: f64,
    },
    /// Train a model and write it together with a run report.
    Train { graph: PathBuf },
    /// Cluster a graph with a trained model.
    Cluster { model: PathBuf, graph: PathBuf },
    /// Score a report's assignments against a labeled graph.
    Evaluate { report: PathBuf, truth: PathBuf },
    /// Print the explanation of one node's assignment.
    Explain {
        report: PathBuf,
        node: String,
        /// Snapshot index (defaults to the last one containing the node).
        #[arg(long)]
        t: Option<usize>,
    },
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))?;
    log::info!("wrote {}", path.display());
    println!("{}", path.display());
    Ok(())
}

fn run_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::parse(&read(path)?)?,
        None => RunConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = cli.reasoner {
        config.reasoner = mode;
    }
    config.bptt |= cli.bptt;
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        &Command::Generate {
            event,
            nodes,
            communities,
            snapshots,
            p_in,
            p_out,
            event_rate,
        } => {
            let generated = generate_synthetic(&GeneratorConfig {
                event_kind: event,
                n_nodes: nodes,
                n_communities: communities,
                n_snapshots: snapshots,
                p_in,
                p_out,
                event_rate,
                seed: cli.seed.unwrap_or(1),
            })?;
            write(
                &cli.out,
                "graph.txt",
                &serialize_dynamic_graph(&generated.graph),
            )?;
            write(&cli.out, "generator.log", &generated.log_text())?;
        }
        Command::Noise { graph, fraction } => {
            let graph = parse_dynamic_graph(&read(graph)?)?;
            let (noisy, report) = inject_noise(&graph, *fraction, cli.seed.unwrap_or(0))?;
            if report.saturated() {
                log::warn!("some snapshots could not take the requested number of edges");
            }
            write(
                &cli.out,
                "noisy_graph.txt",
                &serialize_dynamic_graph(&noisy),
            )?;
        }
        Command::Train { graph } => {
            let config = run_config(cli)?;
            let graph = parse_dynamic_graph(&read(graph)?)?;
            let (model, report) = train(&config, &graph)?;
            write(&cli.out, "model.json", &model.to_json()?)?;
            write(&cli.out, "report.json", &report.to_json()?)?;
        }
        Command::Cluster { model, graph } => {
            let mut model = ModelState::from_json(&read(model)?)?;
            if let Some(mode) = cli.reasoner {
                model.config.reasoner = mode;
            }
            let graph = parse_dynamic_graph(&read(graph)?)?;
            let llm = reasoner_for(&model.config)?;
            let report = cluster_report(&model, &graph, llm.as_ref())?;
            write(&cli.out, "report.json", &report.to_json()?)?;
        }
        Command::Evaluate { report, truth } => {
            let report = RunReport::from_json(&read(report)?)?;
            let truth = parse_dynamic_graph(&read(truth)?)?;
            if !truth.has_labels() {
                return Err("truth graph carries no labels".into());
            }
            let metrics = evaluate_run(&truth, &report.snapshots, &report.config)?;
            let text = serde_json::to_string_pretty(&metrics)?;
            println!("{text}");
            write(&cli.out, "metrics.json", &text)?;
        }
        Command::Explain { report, node, t } => {
            let report = RunReport::from_json(&read(report)?)?;
            let explanation = report.explanation(node, *t).ok_or_else(|| match t {
                Some(t) => format!("node `{node}` has no explanation at snapshot {t}"),
                None => format!("node `{node}` does not appear in the report"),
            })?;
            print!("{}", explanation.text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
