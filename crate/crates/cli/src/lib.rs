//! Command implementations behind the `templex` binary: scoring, training,
//! extraction, ablation sweeps, and synthetic-corpus generation.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use templex::corpus::{
    load_corpus, load_predictions, save_corpus, save_ontology, save_predictions, Corpus,
    PredictionMap,
};
use templex::learn::{load_checkpoint, save_checkpoint, train, Beta, TrainConfig};
use templex::metrics::{
    score_corpus, score_corpus_granular, CorpusGranularReport, CorpusScoreReport, Phi, Variant,
};
use templex::policy::SlotVocab;
use templex::synth::{generate, SynthConfig};
use templex::{decode, Head};

#[derive(Parser)]
#[command(
    name = "templex",
    version,
    about = "Iterative template extraction: train, extract, score, sweep, synthesize"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against gold templates.
    Score(ScoreArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Run a trained checkpoint over a corpus and write predictions.
    Extract(ExtractArgs),
    /// Re-train across a grid of α values or β settings and tabulate scores.
    Sweep(SweepArgs),
    /// Generate a synthetic corpus and its ontology.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Pretty,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn parse_phi(s: &str) -> Result<Phi, String> {
    s.parse()
}

fn parse_beta(s: &str) -> Result<Beta, String> {
    s.parse()
}

fn parse_head(s: &str) -> Result<Head, String> {
    s.parse()
}

#[derive(Args)]
struct ScoreArgs {
    /// Gold corpus JSON (documents + gold templates).
    #[arg(long)]
    gold: PathBuf,
    /// Prediction file JSON.
    #[arg(long)]
    pred: PathBuf,
    /// Ontology JSON.
    #[arg(long, env = "TEMPLEX_ONTOLOGY")]
    ontology: PathBuf,
    /// Matching variant: rme-relaxed, ree-def or ree-impl.
    #[arg(long, default_value = "rme-relaxed", value_parser = parse_variant, conflicts_with = "granular")]
    variant: Variant,
    /// Entity similarity: phi3, phi4 or phi-subset.
    #[arg(long, default_value = "phi3", value_parser = parse_phi, conflicts_with = "granular")]
    phi: Phi,
    /// Use the granular combined score instead of the CEAF family.
    #[arg(long)]
    granular: bool,
    #[arg(long, value_enum, default_value_t = Format::Pretty)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus JSON.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, env = "TEMPLEX_ONTOLOGY")]
    ontology: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV output path (epoch,mean_loss).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

/// Training settings; start from `--config` (or defaults) and override with
/// any explicit flags.
#[derive(Args)]
struct TrainFlags {
    /// TrainConfig JSON file used as the base configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Agent roll-out rate in [0,1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Expert setting: fixed, argmax, xent, uniform, or a positive temperature.
    #[arg(long, value_parser = parse_beta)]
    beta: Option<Beta>,
    /// Discount in (0,1].
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Policy head: independent or joint.
    #[arg(long, value_parser = parse_head)]
    head: Option<Head>,
    /// Cap on executed steps per episode.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Representation width (positive multiple of 4).
    #[arg(long)]
    d: Option<usize>,
    /// Seed of the deterministic token embedder.
    #[arg(long)]
    embed_seed: Option<u64>,
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.head {
            cfg.head = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.d {
            cfg.embedder.d = v;
        }
        if let Some(v) = self.embed_seed {
            cfg.embedder.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, env = "TEMPLEX_ONTOLOGY")]
    ontology: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prediction file output path.
    #[arg(long)]
    out: PathBuf,
    /// Override the checkpoint's per-episode step cap.
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Training corpus JSON.
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out corpus JSON to score each grid point on.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, env = "TEMPLEX_ONTOLOGY")]
    ontology: PathBuf,
    /// Output CSV path (setting,p,r,f1,seed,runtime_s).
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated α grid, e.g. 0,0.25,0.5.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Comma-separated β settings, e.g. fixed,argmax,xent,uniform.
    #[arg(long, value_delimiter = ',', value_parser = parse_beta)]
    betas: Vec<Beta>,
    #[arg(long, default_value = "rme-relaxed", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value = "phi3", value_parser = parse_phi)]
    phi: Phi,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus output path.
    #[arg(long)]
    out_corpus: PathBuf,
    /// Ontology output path.
    #[arg(long)]
    out_ontology: PathBuf,
    /// SynthConfig JSON file used as the base configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_docs: Option<usize>,
    /// Number of template types.
    #[arg(long)]
    types: Option<usize>,
    #[arg(long)]
    slots_per_type: Option<usize>,
    #[arg(long)]
    fillers_per_slot: Option<usize>,
    /// Minimum templates per document.
    #[arg(long)]
    templates_min: Option<usize>,
    /// Maximum templates per document.
    #[arg(long)]
    templates_max: Option<usize>,
    #[arg(long)]
    distractor_vocab: Option<usize>,
    /// Fraction of tokens that are distractors, in [0,1).
    #[arg(long)]
    distractor_rate: Option<f64>,
}

pub fn run() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score(args) => cmd_score(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Extract(args) => cmd_extract(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let corpus = load_corpus(&args.gold, &args.ontology)?;
    let predictions = load_predictions(&args.pred, &corpus)?;
    let text = if args.granular {
        let report = score_corpus_granular(&corpus, &predictions)?;
        render_granular(&report, args.format)?
    } else {
        let report = score_corpus(&corpus, &predictions, args.phi, args.variant)?;
        render_entity(&report, args.format)?
    };
    emit(&text, args.out.as_deref())
}

fn render_entity(report: &CorpusScoreReport, format: Format) -> Result<String> {
    let mut s = String::new();
    match format {
        Format::Json => {
            s = serde_json::to_string_pretty(report)?;
            s.push('\n');
        }
        Format::Csv => {
            s.push_str("scope,name,p,r,f1,n_ref,n_pred\n");
            for (name, sc) in &report.per_slot {
                let _ = writeln!(
                    s,
                    "slot,{name},{:.6},{:.6},{:.6},{},{}",
                    sc.p, sc.r, sc.f1, sc.n_ref, sc.n_pred
                );
            }
            for (name, sc) in &report.per_type {
                let _ = writeln!(
                    s,
                    "type,{name},{:.6},{:.6},{:.6},{},{}",
                    sc.p, sc.r, sc.f1, sc.n_ref, sc.n_pred
                );
            }
            let m = &report.micro;
            let _ = writeln!(s, "summary,micro,{:.6},{:.6},{:.6},,", m.p, m.r, m.f1);
            let _ = writeln!(s, "summary,macro,,,{:.6},,", report.macro_f1);
        }
        Format::Pretty => {
            let _ = writeln!(
                s,
                "entity score  variant={}  phi={}{}",
                report.variant,
                report.phi,
                if report.empty { "  (empty: no scorable content)" } else { "" }
            );
            let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>8} {:>7} {:>7}", "slot", "p", "r", "f1", "n_ref", "n_pred");
            for (name, sc) in &report.per_slot {
                let _ = writeln!(
                    s,
                    "{name:<24} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7}",
                    sc.p, sc.r, sc.f1, sc.n_ref, sc.n_pred
                );
            }
            for (name, sc) in &report.per_type {
                let label = format!("[type] {name}");
                let _ = writeln!(
                    s,
                    "{label:<24} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7}",
                    sc.p, sc.r, sc.f1, sc.n_ref, sc.n_pred
                );
            }
            let m = &report.micro;
            let _ = writeln!(s, "{:<24} {:>8.4} {:>8.4} {:>8.4}", "micro", m.p, m.r, m.f1);
            let _ = writeln!(s, "{:<24} {:>26.4}", "macro f1", report.macro_f1);
        }
    }
    Ok(s)
}

fn render_granular(report: &CorpusGranularReport, format: Format) -> Result<String> {
    let mut s = String::new();
    match format {
        Format::Json => {
            s = serde_json::to_string_pretty(report)?;
            s.push('\n');
        }
        Format::Csv => {
            s.push_str("scope,name,p,r,f1,n_ref,n_pred\n");
            for (name, sc) in &report.per_slot {
                let _ = writeln!(
                    s,
                    "slot,{name},{:.6},{:.6},{:.6},{},{}",
                    sc.p, sc.r, sc.f1, sc.n_ref, sc.n_pred
                );
            }
            let t = &report.type_score;
            let sl = &report.slot_score;
            let _ = writeln!(s, "summary,type,{:.6},{:.6},{:.6},,", t.p, t.r, t.f1);
            let _ = writeln!(s, "summary,slot,{:.6},{:.6},{:.6},,", sl.p, sl.r, sl.f1);
            let _ = writeln!(s, "summary,combined,,,{:.6},,", report.combined);
        }
        Format::Pretty => {
            let _ = writeln!(
                s,
                "granular score{}",
                if report.empty { "  (empty: no scorable content)" } else { "" }
            );
            let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>8} {:>7} {:>7}", "slot", "p", "r", "f1", "n_ref", "n_pred");
            for (name, sc) in &report.per_slot {
                let _ = writeln!(
                    s,
                    "{name:<24} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7}",
                    sc.p, sc.r, sc.f1, sc.n_ref, sc.n_pred
                );
            }
            let t = &report.type_score;
            let sl = &report.slot_score;
            let _ = writeln!(s, "{:<24} {:>8.4} {:>8.4} {:>8.4}", "type f1", t.p, t.r, t.f1);
            let _ = writeln!(s, "{:<24} {:>8.4} {:>8.4} {:>8.4}", "slot f1", sl.p, sl.r, sl.f1);
            let _ = writeln!(s, "{:<24} {:>26.4}", "combined", report.combined);
        }
    }
    Ok(s)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.train.resolve()?;
    let corpus = load_corpus(&args.corpus, &args.ontology)?;
    let report = train(&corpus, &cfg)?;
    save_checkpoint(&args.out, &report.model, &cfg, &corpus.ontology)?;
    if let Some(path) = &args.trace {
        std::fs::write(path, loss_trace_csv(&report.trace))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "trained {} epochs on {} documents; final mean loss {}",
        cfg.epochs,
        corpus.documents.len(),
        report.trace.last().copied().unwrap_or(0.0)
    );
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn loss_trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (epoch, loss) in trace.iter().enumerate() {
        let _ = writeln!(s, "{epoch},{loss}");
    }
    s
}

fn extract_predictions(
    corpus: &Corpus,
    model: &templex::Model,
    head: Head,
    max_iter: usize,
) -> Result<PredictionMap> {
    let vocab = SlotVocab::new(&corpus.ontology);
    let mut predictions = PredictionMap::new();
    for doc in &corpus.documents {
        let (templates, _) = decode(doc, &corpus.ontology, &vocab, model, head, max_iter)?;
        predictions.insert(doc.id.clone(), templates);
    }
    Ok(predictions)
}

fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus, &args.ontology)?;
    let (model, cfg) = load_checkpoint(&args.checkpoint, &corpus.ontology)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let max_iter = args.max_iter.unwrap_or(cfg.max_iter);
    let predictions = extract_predictions(&corpus, &model, cfg.head, max_iter)?;
    let n: usize = predictions.values().map(Vec::len).sum();
    save_predictions(&predictions, &corpus, &args.out)?;
    println!(
        "extracted {n} templates across {} documents",
        corpus.documents.len()
    );
    println!("predictions: {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let base = args.train.resolve()?;
    if args.alphas.is_empty() && args.betas.is_empty() {
        bail!("empty sweep grid: pass --alphas and/or --betas");
    }
    let corpus = load_corpus(&args.corpus, &args.ontology)?;
    let eval = load_corpus(&args.eval, &args.ontology)?;

    let mut grid: Vec<(String, TrainConfig)> = Vec::new();
    for &alpha in &args.alphas {
        let cfg = TrainConfig { alpha, ..base };
        cfg.validate()?;
        grid.push((format!("alpha={alpha}"), cfg));
    }
    for &beta in &args.betas {
        // β settings are compared at α = 0 unless overridden, isolating the
        // expert from policy mixing.
        let alpha = args.train.alpha.unwrap_or(0.0);
        let cfg = TrainConfig { alpha, beta, ..base };
        cfg.validate()?;
        grid.push((format!("beta={beta}"), cfg));
    }

    let mut csv = String::from("setting,p,r,f1,seed,runtime_s\n");
    for (setting, cfg) in &grid {
        let start = Instant::now();
        let report = train(&corpus, cfg)?;
        let predictions = extract_predictions(&eval, &report.model, cfg.head, cfg.max_iter)?;
        let scored = score_corpus(&eval, &predictions, args.phi, args.variant)?;
        let runtime = start.elapsed().as_secs_f64();
        let m = &scored.micro;
        let _ = writeln!(
            csv,
            "{setting},{:.6},{:.6},{:.6},{},{runtime:.3}",
            m.p, m.r, m.f1, cfg.seed
        );
        eprintln!("{setting}: f1 {:.4} ({runtime:.1}s)", m.f1);
    }
    std::fs::write(&args.out, csv).with_context(|| format!("writing {}", args.out.display()))?;
    println!("sweep: {} grid points -> {}", grid.len(), args.out.display());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => SynthConfig::new(0),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_docs {
        cfg.n_docs = v;
    }
    if let Some(v) = args.types {
        cfg.n_template_types = v;
    }
    if let Some(v) = args.slots_per_type {
        cfg.slots_per_type = v;
    }
    if let Some(v) = args.fillers_per_slot {
        cfg.fillers_per_slot = v;
    }
    if let Some(v) = args.templates_min {
        cfg.templates_per_doc_range[0] = v;
    }
    if let Some(v) = args.templates_max {
        cfg.templates_per_doc_range[1] = v;
    }
    if let Some(v) = args.distractor_vocab {
        cfg.distractor_vocab = v;
    }
    if let Some(v) = args.distractor_rate {
        cfg.distractor_rate = v;
    }
    let corpus = generate(&cfg)?;
    save_ontology(&corpus.ontology, &args.out_ontology)?;
    save_corpus(&corpus, &args.out_corpus)?;
    let n: usize = corpus.gold.values().map(Vec::len).sum();
    println!(
        "synthesized {} documents with {n} gold templates",
        corpus.documents.len()
    );
    println!("corpus: {}", args.out_corpus.display());
    println!("ontology: {}", args.out_ontology.display());
    Ok(())
}
