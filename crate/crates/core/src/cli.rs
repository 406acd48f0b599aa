//! Command-line entry point. Every artifact-producing command writes one run
//! manifest next to its outputs.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::classifier::{ranking, ScoredPrediction};
use crate::data::{
    convert_timeline_record, enhance_symmetry, generate_synthetic, read_instances, write_instances, write_jsonl,
    SyntheticConfig, TimelineRecord,
};
use crate::encoder::{Pooling, PrecomputedEmbeddings};
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::relation_algebra::{Label, RelationSchema};
use crate::training::{grad_check, prepare_inputs, train, LossSelector, Mode, ModelFile, TrainConfig};

pub const CONFIG_ENV: &str = "METRE_CONFIG";

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "metre", version, about = "Multi-label temporal relation extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus with known Vague compositions.
    GenerateSynthetic(GenerateArgs),
    /// Map per-annotator timelines to relations and adjudicate by majority.
    AdjudicateUdst(AdjudicateArgs),
    /// Append the argument-swapped copy of every instance.
    Enhance(EnhanceArgs),
    /// Train a model and write it with its per-epoch log.
    Train(TrainArgs),
    /// Score a labelled dataset and write the metrics report.
    Evaluate(EvaluateArgs),
    /// Write one prediction per instance.
    Predict(PredictArgs),
    /// Print the ranked composition behind each Vague prediction.
    Explain(ExplainArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Preset name (tbdense, udst, matres) or a schema TOML file.
    #[arg(long, default_value = "tbdense")]
    pub schema: String,
    #[arg(long)]
    pub n: i64,
    #[arg(long, default_value_t = 0.45)]
    pub vague_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cue_vocab: Option<usize>,
    #[arg(long)]
    pub cue_dropout: Option<f64>,
    #[arg(long)]
    pub confusion_pair_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AdjudicateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "udst")]
    pub schema: String,
    /// Timelines per record: 3 for dev/test-style input, 1 for training input.
    #[arg(long, default_value_t = 3)]
    pub annotators: usize,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "tbdense")]
    pub schema: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with training hyperparameters; flags override its values.
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Output directory for model.json, train_log.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "tbdense")]
    pub schema: String,
    /// JSONL of precomputed pair vectors keyed by instance id.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Augment the training split with swapped argument pairs.
    #[arg(long)]
    pub symmetry: bool,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub w_bar: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub pair_dim: Option<usize>,
    #[arg(long, value_parser = parse_pooling)]
    pub pooling: Option<Pooling>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for metrics.txt, metrics.json and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub max_k: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Only explain this instance.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// One of well_defined, vague, penalty, baseline, end_to_end, or all.
    #[arg(long, default_value = "all")]
    pub loss: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub configs: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn parse_pooling(s: &str) -> std::result::Result<Pooling, String> {
    match s {
        "window" => Ok(Pooling::Window),
        "span" => Ok(Pooling::Span),
        _ => Err(format!("unknown pooling `{s}` (window, span)")),
    }
}

/// Record of one invocation: enough to rerun it.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    fn new(command: &str, config: Value, seed: Option<u64>, inputs: &[&Path], outputs: &[&Path]) -> Self {
        Self {
            command: command.into(),
            config,
            seed,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `<file>.manifest.json` beside a single-file output.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", path.display())))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_embeddings(path: Option<&Path>) -> Result<Option<PrecomputedEmbeddings>> {
    path.map(|p| {
        require_file(p, "embeddings file")?;
        PrecomputedEmbeddings::load(p)
    })
    .transpose()
}

fn load_model(path: &Path) -> Result<(ModelFile, RelationSchema)> {
    require_file(path, "model file")?;
    let model = ModelFile::load(path)?;
    let schema = model.schema()?;
    Ok((model, schema))
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let schema = RelationSchema::resolve(&a.schema)?;
    let mut cfg = SyntheticConfig::with_vague_fraction(a.vague_fraction);
    if let Some(v) = a.cue_vocab {
        cfg.cue_vocab = v;
    }
    if let Some(v) = a.cue_dropout {
        cfg.cue_dropout = v;
    }
    if let Some(v) = a.confusion_pair_prob {
        cfg.confusion_pair_prob = v;
    }
    let data = generate_synthetic(&schema, a.n, &cfg, a.seed)?;
    write_instances(&a.out, &data, &schema)?;
    let config = json!({
        "schema": a.schema,
        "n": a.n,
        "vague_fraction": cfg.vague_fraction,
        "cue_vocab": cfg.cue_vocab,
        "cue_dropout": cfg.cue_dropout,
        "confusion_pair_prob": cfg.confusion_pair_prob,
    });
    RunManifest::new("generate-synthetic", config, Some(a.seed), &[], &[&a.out]).write(&manifest_path_for(&a.out))?;
    println!("wrote {} instances to {}", data.len(), a.out.display());
    Ok(())
}

fn cmd_adjudicate(a: &AdjudicateArgs) -> Result<()> {
    let schema = RelationSchema::resolve(&a.schema)?;
    require_file(&a.input, "input file")?;
    let file = File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&a.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: String| Error::Data(format!("{} line {}: {e}", a.input.display(), i + 1));
        let record: TimelineRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let inst = convert_timeline_record(record, &schema, a.annotators).map_err(|e| at(e.to_string()))?;
        out.push(inst);
    }
    write_instances(&a.out, &out, &schema)?;
    let config = json!({ "schema": a.schema, "annotators": a.annotators });
    RunManifest::new("adjudicate-udst", config, None, &[&a.input], &[&a.out]).write(&manifest_path_for(&a.out))?;
    let vague = out.iter().filter(|i| i.gold.is_vague()).count();
    println!("wrote {} instances ({vague} Vague) to {}", out.len(), a.out.display());
    Ok(())
}

fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    let schema = RelationSchema::resolve(&a.schema)?;
    require_file(&a.input, "input file")?;
    let data = read_instances(&a.input, &schema)?;
    let enhanced = enhance_symmetry(&data, &schema)?;
    write_instances(&a.out, &enhanced, &schema)?;
    RunManifest::new("enhance", json!({ "schema": a.schema }), None, &[&a.input], &[&a.out])
        .write(&manifest_path_for(&a.out))?;
    println!("wrote {} instances to {}", enhanced.len(), a.out.display());
    Ok(())
}

/// Config file (or defaults) with every given flag applied on top.
pub fn effective_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p, "config file")?;
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    apply!(mode, alpha, w_bar, learning_rate, momentum, epochs, batch_size, seed, buckets, window, embed_dim, hidden_dim, pair_dim, pooling);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = effective_config(a)?;
    let schema = RelationSchema::resolve(&a.schema)?;
    require_file(&a.train, "training file")?;
    let mut train_set = read_instances(&a.train, &schema)?;
    if a.symmetry {
        train_set = enhance_symmetry(&train_set, &schema)?;
    }
    let dev_set = match &a.dev {
        Some(p) => {
            require_file(p, "dev file")?;
            read_instances(p, &schema)?
        }
        None => Vec::new(),
    };
    let embeddings = load_embeddings(a.embeddings.as_deref())?;
    let outcome = train(&train_set, &dev_set, &schema, &cfg, embeddings.as_ref())?;

    ensure_dir(&a.out)?;
    let model_path = a.out.join("model.json");
    let log_path = a.out.join("train_log.jsonl");
    ModelFile::new(&schema, cfg.mode, outcome.params).save(&model_path)?;
    let log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    write_jsonl(BufWriter::new(log_file), &outcome.log)?;

    let mut inputs: Vec<&Path> = vec![&a.train];
    inputs.extend(a.dev.as_deref());
    inputs.extend(a.embeddings.as_deref());
    let config = json!({
        "train": serde_json::to_value(&cfg).map_err(|e| Error::Format(e.to_string()))?,
        "schema": a.schema,
        "symmetry": a.symmetry,
        "best_epoch": outcome.best_epoch,
        "steps": outcome.steps,
    });
    RunManifest::new("train", config, Some(cfg.seed), &inputs, &[&model_path, &log_path])
        .write(&a.out.join("manifest.json"))?;
    for e in &outcome.log {
        match e.dev_micro_f1 {
            Some(f) => println!("epoch {:>3}  loss {:.4}  dev micro-F1 {:.1}", e.epoch, e.mean_loss, 100.0 * f),
            None => println!("epoch {:>3}  loss {:.4}", e.epoch, e.mean_loss),
        }
    }
    println!("best epoch {}; model written to {}", outcome.best_epoch, model_path.display());
    Ok(())
}

fn predict_file(
    model: &Path,
    data: &Path,
    embeddings: Option<&Path>,
) -> Result<(RelationSchema, Vec<crate::data::EventPairInstance>, Vec<ScoredPrediction>)> {
    let (model, schema) = load_model(model)?;
    require_file(data, "data file")?;
    let instances = read_instances(data, &schema)?;
    let embeddings = load_embeddings(embeddings)?;
    let inputs = prepare_inputs(&instances, embeddings.as_ref())?;
    let preds = model.params.predict_all(&inputs)?;
    Ok((schema, instances, preds))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let (schema, instances, preds) = predict_file(&a.model, &a.data, a.embeddings.as_deref())?;
    let report = MetricsReport::build(&schema, &instances, &preds, a.max_k)?;
    ensure_dir(&a.out)?;
    let text_path = a.out.join("metrics.txt");
    let json_path = a.out.join("metrics.json");
    let text = report.to_text();
    fs::write(&text_path, &text).map_err(|e| Error::io(&text_path, e))?;
    let doc = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&json_path, doc + "\n").map_err(|e| Error::io(&json_path, e))?;
    let mut inputs: Vec<&Path> = vec![&a.model, &a.data];
    inputs.extend(a.embeddings.as_deref());
    RunManifest::new("evaluate", json!({ "max_k": a.max_k }), None, &inputs, &[&text_path, &json_path])
        .write(&a.out.join("manifest.json"))?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    decision: &'a str,
    composition: Vec<&'a str>,
    scores: &'a [f64],
    threshold: f64,
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (schema, instances, preds) = predict_file(&a.model, &a.data, a.embeddings.as_deref())?;
    let records: Vec<PredictionRecord> = instances
        .iter()
        .zip(&preds)
        .map(|(inst, p)| PredictionRecord {
            id: &inst.id,
            decision: schema.label_name(p.decision),
            composition: p.composition.iter().map(|&r| schema.relation_name(r)).collect(),
            scores: &p.scores,
            threshold: p.threshold,
        })
        .collect();
    let file = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_jsonl(BufWriter::new(file), &records)?;
    let mut inputs: Vec<&Path> = vec![&a.model, &a.data];
    inputs.extend(a.embeddings.as_deref());
    RunManifest::new("predict", json!({}), None, &inputs, &[&a.out]).write(&manifest_path_for(&a.out))?;
    println!("wrote {} predictions to {}", records.len(), a.out.display());
    Ok(())
}

pub const NO_CONFIDENCE: &str = "no-confidence";

/// Human-readable account of one prediction.
pub fn explain_prediction(id: &str, p: &ScoredPrediction, schema: &RelationSchema) -> String {
    let fmt_rel = |r| format!("{} ({:.3})", schema.relation_name(r), p.scores[r.0]);
    match p.decision {
        Label::Rel(r) => format!("{id}: {} (threshold {:.3})", fmt_rel(r), p.threshold),
        Label::Vague if p.composition.len() >= 2 => {
            let parts: Vec<String> = p.composition.iter().map(|&r| fmt_rel(r)).collect();
            format!("{id}: Vague = {} (threshold {:.3})", parts.join(" > "), p.threshold)
        }
        Label::Vague => {
            let parts: Vec<String> = ranking(&p.scores).into_iter().take(2).map(fmt_rel).collect();
            format!(
                "{id}: Vague [{NO_CONFIDENCE}] no relation above threshold {:.3}; nearest {}",
                p.threshold,
                parts.join(", ")
            )
        }
    }
}

fn cmd_explain(a: &ExplainArgs) -> Result<()> {
    let (schema, instances, preds) = predict_file(&a.model, &a.data, a.embeddings.as_deref())?;
    let mut shown = 0;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (inst, p) in instances.iter().zip(&preds) {
        if a.id.as_deref().is_some_and(|id| id != inst.id) {
            continue;
        }
        shown += 1;
        writeln!(out, "{}", explain_prediction(&inst.id, p, &schema)).map_err(|e| Error::io("<stdout>", e))?;
    }
    if let (Some(id), 0) = (&a.id, shown) {
        return Err(Error::Data(format!("no instance with id `{id}`")));
    }
    Ok(())
}

/// Returns whether every selected check passed.
fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let selectors: Vec<LossSelector> = if a.loss == "all" {
        LossSelector::ALL.to_vec()
    } else {
        vec![a.loss.parse()?]
    };
    let mut ok = true;
    for sel in selectors {
        let r = grad_check(sel, a.seed, a.configs, a.epsilon)?;
        let pass = r.max_rel_error < a.tolerance && !r.all_zero;
        ok &= pass;
        println!(
            "{} {:<12} configs {:>3}  parameters {:>6}  max rel error {:.3e}",
            if pass { "PASS" } else { "FAIL" },
            sel.as_str(),
            r.configs,
            r.parameters_checked,
            r.max_rel_error
        );
    }
    Ok(ok)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) => exit::USAGE,
        Error::Data(_) | Error::Format(_) | Error::Schema(_) => exit::DATA,
        Error::Divergence(_) => exit::DIVERGENCE,
        Error::Io { .. } | Error::Undefined(_) => exit::FAILURE,
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::GenerateSynthetic(a) => cmd_generate(a)?,
        Command::AdjudicateUdst(a) => cmd_adjudicate(a)?,
        Command::Enhance(a) => cmd_enhance(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
        Command::Predict(a) => cmd_predict(a)?,
        Command::Explain(a) => cmd_explain(a)?,
        Command::Gradcheck(a) => {
            return Ok(if cmd_gradcheck(a)? { exit::OK } else { exit::FAILURE });
        }
    }
    Ok(exit::OK)
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}
