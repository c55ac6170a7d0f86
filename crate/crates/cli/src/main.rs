use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentkg::cluster::FeatureMode;
use latentkg_cli::stages;
use latentkg_cli::{CliError, CliResult, ModelChoice, RunConfig, Workspace};

#[derive(Parser)]
#[command(name = "latentkg", version, about = "Decode per-layer latent knowledge of a language model into temporal knowledge graphs")]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Opts {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Claim corpus (JSONL with id, claim, label).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Directory of externally produced traces and outputs.
    #[arg(long, global = true)]
    trace_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelChoice>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Claims to sample after filtering.
    #[arg(long, global = true)]
    sample: Option<usize>,
    /// Bandwidth quantile for mean shift.
    #[arg(long, global = true)]
    quantile: Option<f64>,
    /// Diffusion steps in the node embedding.
    #[arg(long, global = true)]
    scales: Option<usize>,
    /// Layer features for clustering: profile or mean.
    #[arg(long, global = true)]
    feature: Option<FeatureMode>,
    /// Also patch the layer-0 merge.
    #[arg(long, global = true)]
    include_layer_0: bool,
    /// Weight every claim token when no noun or verb is found.
    #[arg(long, global = true)]
    fallback_uniform: bool,
    /// Rerun stages even when their manifests are current.
    #[arg(long, global = true)]
    force: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and sample the corpus.
    Ingest,
    /// Fill the source and target templates.
    Prompts,
    /// Capture hidden states of the source prompts.
    Trace,
    /// Merge claim-token states into per-layer patch vectors.
    Plan,
    /// Generate with the placeholder patched, one run per layer.
    PatchSweep,
    /// Parse generated texts into labels and facts.
    Decode {
        /// Decode one outputs file and print its label table instead.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build per-layer graphs, layer diffs and DOT renderings.
    Graph,
    /// Similarity of consecutive layer graphs and full pairwise matrices.
    Similarity,
    /// Mean-shift clustering of layers.
    Cluster,
    /// Precision, recall, F1, ROC AUC and self-consistency.
    Metrics,
    /// Tables from the metrics.
    Report,
    /// Every stage in order.
    RunAll,
}

fn build_config(o: &Opts) -> CliResult<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &o.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &o.dataset {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = &o.trace_dir {
        cfg.trace_dir = Some(v.clone());
    }
    if let Some(v) = o.model {
        cfg.model = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.sample {
        cfg.sample = Some(v);
    }
    if let Some(v) = o.quantile {
        cfg.quantile = v;
    }
    if let Some(v) = o.scales {
        cfg.scales = v;
    }
    if let Some(v) = o.feature {
        cfg.feature = v;
    }
    cfg.include_layer_0 |= o.include_layer_0;
    cfg.fallback_uniform |= o.fallback_uniform;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Decode { input: Some(path) } = &cli.command {
        print!("{}", stages::decode_file(path)?);
        return Ok(());
    }
    let cfg = build_config(&cli.opts)?;
    if cfg.model == ModelChoice::ExternalTrace {
        cfg.trace_dir_path()?;
    }
    let ws = Workspace::new(&cfg.out, cli.opts.force);
    std::fs::create_dir_all(ws.root())
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", ws.root().display())))?;
    std::fs::write(ws.path("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let stage = match &cli.command {
        Command::Ingest => "ingest",
        Command::Prompts => "prompts",
        Command::Trace => "trace",
        Command::Plan => "plan",
        Command::PatchSweep => "patch-sweep",
        Command::Decode { .. } => "decode",
        Command::Graph => "graph",
        Command::Similarity => "similarity",
        Command::Cluster => "cluster",
        Command::Metrics => "metrics",
        Command::Report => "report",
        Command::RunAll => {
            stages::run_all(&cfg, &ws)?;
            print!("{}", std::fs::read_to_string(ws.path("report/table.txt"))?);
            return Ok(());
        }
    };
    stages::run_named(stage, &cfg, &ws)?;
    if stage == "report" {
        print!("{}", std::fs::read_to_string(ws.path("report/table.txt"))?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.opts.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
