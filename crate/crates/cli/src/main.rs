//! `mdslu`: data generation, training, evaluation and experiment runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mdslu_core::corpus::load_jsonl;
use mdslu_core::router::{DomainClfCheckpoint, DomainClfConfig};
use mdslu_core::{
    export_vectors, generate_synthetic, run_ablation, run_adaptation, train, train_domain_classifier,
    Checkpoint, CorpusSplit, DomainClassifier, ModeFlags, Routing, SynthConfig, TrainConfig,
};

#[derive(Parser)]
#[command(name = "mdslu", version, about = "Multi-domain joint intent detection and slot filling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev/test corpus.
    GenData(GenData),
    /// Train a joint model and write its checkpoint.
    Train(Train),
    /// Evaluate a checkpoint; JSON report on stdout, table on stderr.
    Eval(Eval),
    /// Target-domain data-ratio sweep.
    Adapt(Adapt),
    /// Train and test several architecture variants over seeds.
    Ablate(Ablate),
    /// Dump pooled global and local sentence vectors.
    ExportVectors(ExportVectors),
    /// Train or evaluate the domain classifier used for routing.
    #[command(subcommand)]
    DomainClf(DomainClf),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated domain names.
    #[arg(long, value_delimiter = ',')]
    domains: Option<Vec<String>>,
    #[arg(long)]
    train_per_domain: Option<usize>,
    #[arg(long)]
    dev_per_domain: Option<usize>,
    #[arg(long)]
    test_per_domain: Option<usize>,
    #[arg(long)]
    templates_per_intent: Option<usize>,
}

#[derive(Args)]
struct TrainOpts {
    /// JSON training configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `full` or a comma-separated list of no_local, no_filter_controller,
    /// no_gcn, oracle_filter.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    oracle_filter: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct Train {
    /// Directory holding train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct RoutingOpts {
    #[arg(long, default_value = "predicted")]
    routing: Routing,
    /// Domain classifier checkpoint; defaults to `<checkpoint>.clf`.
    #[arg(long)]
    domain_clf: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL examples to evaluate.
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    routing: RoutingOpts,
}

#[derive(Args)]
struct Adapt {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5])]
    ratios: Vec<f64>,
    /// Mode to compare; repeat for several.
    #[arg(long = "compare", default_values_t = ["full".to_string(), "no_local".to_string()])]
    modes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    seeds: Vec<u64>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "compare", default_values_t = [
        "full".to_string(),
        "no_filter_controller".to_string(),
        "no_local".to_string(),
        "no_gcn".to_string(),
        "oracle_filter".to_string(),
    ])]
    modes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    seeds: Vec<u64>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct ExportVectors {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL examples to encode.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    routing: RoutingOpts,
}

#[derive(Subcommand)]
enum DomainClf {
    Train(ClfTrain),
    Eval(ClfEval),
}

#[derive(Args)]
struct ClfTrain {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON classifier configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ClfEval {
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn train_config(opts: &TrainOpts) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &opts.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = &opts.mode {
        cfg.modes = ModeFlags::parse(m)?;
    }
    if opts.oracle_filter {
        cfg.modes.oracle_filter = true;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(e) = opts.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_modes(names: &[String]) -> Result<Vec<ModeFlags>> {
    Ok(names.iter().map(|m| ModeFlags::parse(m)).collect::<mdslu_core::Result<_>>()?)
}

fn clf_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".clf");
    s.into()
}

fn load_router(opts: &RoutingOpts, checkpoint: &Path) -> Result<Option<DomainClassifier>> {
    if opts.routing == Routing::Oracle {
        return Ok(None);
    }
    let path = opts.domain_clf.clone().unwrap_or_else(|| clf_path(checkpoint));
    if !path.exists() {
        bail!(
            "predicted routing needs a domain classifier; none at {} (train one with `mdslu domain-clf train` or pass --routing oracle)",
            path.display()
        );
    }
    Ok(Some(DomainClfCheckpoint::load(&path)?.classifier))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut cfg = SynthConfig { seed: a.seed, ..SynthConfig::default() };
            if let Some(d) = a.domains {
                cfg.domains = d;
            }
            if let Some(n) = a.train_per_domain {
                cfg.train_per_domain = n;
            }
            if let Some(n) = a.dev_per_domain {
                cfg.dev_per_domain = n;
            }
            if let Some(n) = a.test_per_domain {
                cfg.test_per_domain = n;
            }
            if let Some(n) = a.templates_per_intent {
                cfg.templates_per_intent = n;
            }
            let split = generate_synthetic(&cfg)?;
            split.save_dir(&a.out)?;
            eprintln!(
                "wrote {} train, {} dev, {} test examples to {}",
                split.train.len(),
                split.dev.len(),
                split.test.len(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let cfg = train_config(&a.opts)?;
            let corpus = CorpusSplit::load_dir(&a.data)?;
            let ck = train(&corpus, &cfg)?;
            ck.save(&a.out)?;
            eprintln!(
                "{}: best dev exact {:.4} at epoch {}; saved {}",
                cfg.modes.name(),
                ck.best_dev_exact,
                ck.best_epoch,
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let router = load_router(&a.routing, &a.checkpoint)?;
            let examples = load_jsonl(&a.test)?;
            let report = ck.evaluate(&examples, a.routing.routing, router.as_ref())?;
            eprint!("{}", report.table());
            print_json(&report)?;
        }
        Command::Adapt(a) => {
            let cfg = train_config(&a.opts)?;
            let corpus = CorpusSplit::load_dir(&a.data)?;
            let modes = parse_modes(&a.modes)?;
            let res = run_adaptation(&corpus, &a.target, &a.ratios, &modes, &a.seeds, &cfg)?;
            for r in &res.ratios {
                for m in &r.runs {
                    let t = m.mean.per_domain_exact.get(&res.target_domain).copied().unwrap_or(0.0);
                    eprintln!("ratio {:<5} {:<24} target exact {:.4}  overall {:.4}", r.ratio, m.mode, t, m.mean.overall_exact);
                }
            }
            print_json(&res)?;
        }
        Command::Ablate(a) => {
            let cfg = train_config(&a.opts)?;
            let corpus = CorpusSplit::load_dir(&a.data)?;
            let modes = parse_modes(&a.modes)?;
            let runs = run_ablation(&corpus, &cfg, &modes, &a.seeds)?;
            for m in &runs {
                eprintln!(
                    "{:<24} exact {:.4}  slot f1 {:.4}  intent {:.4}",
                    m.mode, m.mean.overall_exact, m.mean.slot_f1, m.mean.intent_accuracy
                );
            }
            print_json(&runs)?;
        }
        Command::ExportVectors(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            let router = load_router(&a.routing, &a.checkpoint)?;
            let examples = load_jsonl(&a.data)?;
            let n = export_vectors(&ck, &examples, a.routing.routing, router.as_ref(), &a.out)?;
            eprintln!("wrote {n} vectors to {}", a.out.display());
        }
        Command::DomainClf(DomainClf::Train(a)) => {
            let mut cfg: DomainClfConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => DomainClfConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            let corpus = CorpusSplit::load_dir(&a.data)?;
            let ck = train_domain_classifier(&corpus, &cfg)?;
            ck.save(&a.out)?;
            eprintln!("best dev accuracy {:.4}; saved {}", ck.best_dev_accuracy, a.out.display());
        }
        Command::DomainClf(DomainClf::Eval(a)) => {
            let ck = DomainClfCheckpoint::load(&a.classifier)?;
            let examples = load_jsonl(&a.test)?;
            let accuracy = ck.classifier.accuracy(&examples)?;
            print_json(&serde_json::json!({ "examples": examples.len(), "accuracy": accuracy }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", msg.join(": ").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
