//! `wuglab`: drives the wuglab service. Without `--server` an in-process
//! server is started on a loopback port and every subcommand goes through it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wuglab_client::Client;
use wuglab_core::eval::ScoringMethod;
use wuglab_core::ops::*;
use wuglab_core::runner::{rows_to_csv, ExperimentConfig, Scale};
use wuglab_core::template::Phenomenon;
use wuglab_core::wug::WugMode;

#[derive(Parser, Debug)]
#[command(name = "wuglab", version, about = "Coined-word evidence experiments for masked language models")]
struct Cli {
    /// Experiment config (JSON); unset fields come from the `--scale` preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seeds (grid) or the operation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    scale: Option<ScaleArg>,
    /// Re-run finished grid cells and overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Use a running service instead of an in-process one.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Paper,
    Toy,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Paper => Scale::Paper,
            ScaleArg::Toy => Scale::Toy,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a wug lexicon (`<out>/wugs.jsonl`).
    Forge(ForgeArgs),
    /// Expand templates into evaluation pairs and training sets (`<out>/gen/`).
    Gen(GenArgs),
    /// Build a training stream with each instance injected exactly n times (`<out>/stream/`).
    Inject(InjectArgs),
    /// Train the BPE tokenizer (`<out>/tokenizer.json`).
    TokTrain(TokTrainArgs),
    /// Train a masked LM on a stream (`<out>/model/`).
    Train(TrainArgs),
    /// Score minimal pairs with a checkpoint; prints result rows as CSV.
    Eval(EvalArgs),
    /// Run the experiment grid or the seed/init ablation.
    Grid(GridArgs),
    /// Write CSVs, charts and the ablation summary from a results store.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Args, Debug)]
struct ForgeArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<WugMode>,
    /// Defaults to what the config's grid consumes.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 1)]
    start_id: u32,
    #[arg(long)]
    seed_nouns: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    per_seed: usize,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    wugs: Option<PathBuf>,
    #[arg(long)]
    interference: bool,
}

#[derive(Args, Debug)]
struct InjectArgs {
    /// Raw background corpus, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Already-clean corpus: skip preprocessing.
    #[arg(long)]
    clean: bool,
    /// Instance files (jsonl); defaults to `<out>/gen/de.jsonl`.
    #[arg(long = "instances", num_args = 1..)]
    instances: Vec<PathBuf>,
    #[arg(short, long)]
    n: usize,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct TokTrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    wugs: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<ScoringMethod>,
    #[arg(long, default_value = "none")]
    evidence: String,
    #[arg(short, long, default_value_t = 0)]
    n: usize,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, value_enum, default_value = "grid")]
    plan: PlanArg,
    /// Print the planned run keys without executing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlanArg {
    Grid,
    Ablation,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory with `results.json`; defaults to the config's output directory.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long = "phenomenon", value_parser = parse_phenomenon)]
    phenomena: Vec<Phenomenon>,
}

fn parse_mode(s: &str) -> Result<WugMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_method(s: &str) -> Result<ScoringMethod, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_phenomenon(s: &str) -> Result<Phenomenon, String> {
    s.parse().map_err(|e| format!("{e}"))
}

impl Cli {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let mut doc: serde_json::Value = serde_json::from_str(&text)?;
                if let (Some(s), Some(obj)) = (self.scale, doc.as_object_mut()) {
                    obj.insert("scale".into(), serde_json::to_value(Scale::from(s))?);
                }
                ExperimentConfig::from_json(&doc.to_string())?
            }
            None => ExperimentConfig::preset(self.scale.map(Scale::from).unwrap_or_default()),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.out_dir.clone())
    }

    fn fresh(&self, path: &Path) -> Result<()> {
        if path.exists() && !self.force {
            bail!("{} exists (use --force to overwrite)", path.display());
        }
        Ok(())
    }
}

fn print<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

async fn run(cli: &Cli, client: &Client) -> Result<()> {
    let cfg = cli.experiment()?;
    let out = cli.out(&cfg);
    let seed = cli.seed.unwrap_or(cfg.data_seed);
    match &cli.cmd {
        Cmd::Forge(a) => {
            let path = out.join("wugs.jsonl");
            cli.fresh(&path)?;
            let req = ForgeRequest {
                mode: a.mode.unwrap_or(cfg.wug_mode),
                count: a.count.unwrap_or_else(|| cfg.wug_count()),
                start_id: a.start_id,
                seed_nouns: a.seed_nouns.clone().or(cfg.seed_nouns.clone()),
                per_seed: a.per_seed,
                seed,
                out: path,
            };
            print(&client.forge(&req).await?)
        }
        Cmd::Gen(a) => {
            let req = GenRequest {
                wugs: a.wugs.clone().unwrap_or_else(|| out.join("wugs.jsonl")),
                templates: cfg.templates.clone(),
                lexicon: cfg.lexicon.clone(),
                expand: cfg.expand.clone(),
                seed,
                interference: a.interference || cfg.interference,
                out_dir: out.join("gen"),
            };
            print(&client.gen(&req).await?)
        }
        Cmd::Inject(a) => {
            let instances = if a.instances.is_empty() { vec![out.join("gen/de.jsonl")] } else { a.instances.clone() };
            let req = InjectRequest {
                corpus: a.corpus.clone(),
                clean: a.clean,
                instances,
                n: a.n,
                epochs: a.epochs.unwrap_or(cfg.epochs),
                seed,
                out_dir: out.join("stream"),
            };
            let resp = client.inject(&req).await?;
            print(&resp)?;
            if !resp.verified {
                bail!("injection counts do not match n={}", a.n);
            }
            Ok(())
        }
        Cmd::TokTrain(a) => {
            let path = out.join("tokenizer.json");
            cli.fresh(&path)?;
            let req = TokTrainRequest {
                corpus: a.corpus.clone().unwrap_or_else(|| out.join("stream/stream.txt")),
                vocab_size: a.vocab_size.unwrap_or(cfg.vocab_size),
                wugs: a.wugs.clone(),
                out: path,
            };
            print(&client.tok_train(&req).await?)
        }
        Cmd::Train(a) => {
            let dir = out.join("model");
            if !a.resume {
                cli.fresh(&dir.join("latest.ckpt"))?;
            }
            let req = TrainRequest {
                stream: a.stream.clone().unwrap_or_else(|| out.join("stream/stream.txt")),
                tokenizer: a.tokenizer.clone().unwrap_or_else(|| out.join("tokenizer.json")),
                model: cfg.model_for(0, a.init_std.unwrap_or(cfg.init_stds[0])),
                optim: cfg.optim.clone(),
                masking: cfg.masking.clone(),
                seed: cli.seed.unwrap_or(cfg.seeds[0]),
                out_dir: dir,
                checkpoint_every: cfg.checkpoint_every,
                resume: a.resume,
            };
            print(&client.train(&req).await?)
        }
        Cmd::Eval(a) => {
            let req = EvalRequest {
                checkpoint: a.checkpoint.clone().unwrap_or_else(|| out.join("model/latest.ckpt")),
                tokenizer: a.tokenizer.clone().unwrap_or_else(|| out.join("tokenizer.json")),
                pairs: a.pairs.clone().unwrap_or_else(|| out.join("gen/eval.jsonl")),
                methods: if a.methods.is_empty() { cfg.methods.clone() } else { a.methods.clone() },
                evidence: a.evidence.clone(),
                n: a.n,
                wug_mode: cfg.wug_mode,
                out: Some(out.join("eval.csv")),
            };
            let rows = client.eval(&req).await?;
            print!("{}", rows_to_csv(&rows));
            Ok(())
        }
        Cmd::Grid(a) => {
            let plan = match a.plan {
                PlanArg::Grid => PlanKind::Grid,
                PlanArg::Ablation => PlanKind::Ablation,
            };
            let resp = client.grid(&GridRequest { config: cfg, plan, force: cli.force, dry_run: a.dry_run }).await?;
            if a.dry_run {
                resp.keys.iter().for_each(|k| println!("{k}"));
                return Ok(());
            }
            print(&resp.summary)?;
            if !resp.summary.failed.is_empty() {
                bail!("{} run(s) failed", resp.summary.failed.len());
            }
            Ok(())
        }
        Cmd::Report(a) => {
            let req = ReportRequest {
                store: a.store.clone().unwrap_or_else(|| out.clone()),
                out_dir: out.join("report"),
                phenomena: (!a.phenomena.is_empty()).then(|| a.phenomena.clone()),
            };
            print(&client.report(&req).await?)
        }
        Cmd::Serve { .. } => unreachable!(),
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Cmd::Serve { addr } = &cli.cmd {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("wuglab service on http://{}", listener.local_addr()?);
        return Ok(wuglab_service::serve(listener).await?);
    }
    let base = match &cli.server {
        Some(url) => url.clone(),
        None => {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
            let addr = listener.local_addr()?;
            tokio::spawn(wuglab_service::serve(listener));
            format!("http://{addr}")
        }
    };
    run(&cli, &Client::new(base)).await
}
