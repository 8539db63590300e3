//! Argument parsing and command implementations for the `sste` binary.
//!
//! Every subcommand's `--help` names all of its flags:
//!
//! ```
//! use clap::CommandFactory;
//!
//! let mut cmd = sste_cli::Cli::command();
//! cmd.build();
//! for sub in cmd.get_subcommands() {
//!     let help = sub.clone().render_long_help().to_string();
//!     for long in sub.get_arguments().filter_map(|a| a.get_long()) {
//!         assert!(help.contains(&format!("--{long}")), "{} lacks --{long}", sub.get_name());
//!     }
//! }
//! ```

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sste_core::classify::{fit, to_matrix, Algorithm, TrainConfig, TrainedModel};
use sste_core::embedding::{
    load_table, EmbeddingProvider, ProviderDescriptor, RemoteProvider, StaticProvider,
};
use sste_core::experiment::{run_experiment, ExperimentConfig, ExperimentId};
use sste_core::featurize::{
    combine, numeric_feature_names, numeric_features, write_feature_csv, FeatureRow, Featurizer,
    Mode,
};
use sste_core::profile::{
    parse_dataset, validate_reader, Dataset, LabelCounts, Profile, SectionTag,
};
use sste_core::synth::{generate_corpus, CorpusSpec};
use sste_core::text::TextPipeline;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(
    name = "sste",
    version,
    about = "Fake and machine-generated profile detection"
)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset file and print per-label counts.
    Validate(ValidateArgs),
    /// Generate a synthetic dataset and a matching word-vector file.
    Synth(SynthArgs),
    /// Write the feature matrix of a dataset as CSV.
    Featurize(FeaturizeArgs),
    /// Fit one classifier on a whole dataset.
    Train(TrainArgs),
    /// Apply a trained model to a dataset.
    Score(ScoreArgs),
    /// Run one of the evaluation protocols.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Line-delimited JSON dataset.
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus spec (TOML). Flags override its values.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dataset: PathBuf,
    #[arg(long)]
    pub out_vectors: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of content tokens drawn from the label's own vocabulary.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub llp: Option<usize>,
    #[arg(long)]
    pub flp: Option<usize>,
    #[arg(long)]
    pub clp: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct ProviderArgs {
    /// Static word-vector file; repeat for several providers.
    #[arg(long = "embeddings")]
    pub embeddings: Vec<PathBuf>,
    /// Remote contextual model name; repeat for several.
    #[arg(long = "contextual")]
    pub contextual: Vec<String>,
    /// Base URL of the contextual embedding service.
    #[arg(long, env = "SSTE_EMBED_ENDPOINT")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub providers: ProviderArgs,
    /// sste, ste, raw, or numeric.
    #[arg(long, default_value = "sste")]
    pub mode: String,
    /// Append the numeric features to the document embedding.
    #[arg(long)]
    pub with_numeric: bool,
    /// Output CSV; a `.schema.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub providers: ProviderArgs,
    /// lr, svm-linear, svm-poly, svm-rbf, or rf.
    #[arg(long, default_value = "lr")]
    pub algorithm: String,
    #[arg(long, default_value = "sste")]
    pub mode: String,
    #[arg(long)]
    pub with_numeric: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Classifier hyperparameters (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub providers: ProviderArgs,
    /// Model written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Output CSV: id, fake score, prediction.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// table2, table3, table4, table5, fig4, or fig5.
    pub experiment: String,
    /// Run config (TOML). Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub providers: ProviderArgs,
    /// Comma-separated embedding modes.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplier in (0, 1] applied to every split count.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Comma-separated CLP counts for fig4.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
    /// Comma-separated sections removed one at a time by fig5.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    /// Parent of the per-run output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Keys accepted in an experiment `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Vec<PathBuf>,
    #[serde(default)]
    pub contextual: Vec<String>,
    pub endpoint: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scale: Option<f64>,
    pub modes: Option<Vec<Mode>>,
    pub sweep: Option<Vec<usize>>,
    pub ablate: Option<Vec<SectionTag>>,
    pub train: Option<TrainConfig>,
}

/// What `train` writes: the fitted classifier plus how its inputs were built.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoringModel {
    pub mode: String,
    pub with_numeric: bool,
    pub provider: Option<ProviderDescriptor>,
    pub model: TrainedModel,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("cannot size the worker pool")?;
    }
    match cli.command {
        Command::Validate(a) => validate(&a),
        Command::Synth(a) => synth(&a),
        Command::Featurize(a) => featurize(&a),
        Command::Train(a) => train(&a),
        Command::Score(a) => score(&a),
        Command::Experiment(a) => experiment(a),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let file = fs::File::open(&a.dataset)
        .with_context(|| format!("cannot read {}", a.dataset.display()))?;
    let report = validate_reader(BufReader::new(file));
    if report.profiles == 0 && report.errors.is_empty() {
        bail!("empty dataset");
    }
    out!("{report}");
    for e in &report.errors {
        eprintln!("{e}");
    }
    if !report.errors.is_empty() {
        bail!("{} invalid records", report.errors.len());
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec: CorpusSpec = match &a.spec {
        Some(p) => read_toml(p)?,
        None => CorpusSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(s) = a.sigma {
        spec.sigma = s;
    }
    let LabelCounts { llp, flp, clp } = spec.counts;
    spec.counts = LabelCounts::new(
        a.llp.unwrap_or(llp),
        a.flp.unwrap_or(flp),
        a.clp.unwrap_or(clp),
    );
    let corpus = generate_corpus(&spec)?;
    corpus.write(&a.out_dataset, &a.out_vectors)?;
    out!(
        "{} profiles, {}",
        corpus.dataset.len(),
        corpus.dataset.counts()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = parse_dataset(path)?;
    if ds.is_empty() {
        bail!("empty dataset");
    }
    Ok(ds)
}

fn load_providers(args: &ProviderArgs) -> Result<Vec<Box<dyn EmbeddingProvider>>> {
    let mut out: Vec<Box<dyn EmbeddingProvider>> = Vec::new();
    for path in &args.embeddings {
        let table = load_table(path)?;
        let name = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        out.push(Box::new(StaticProvider::new(name, table)?));
    }
    if !args.contextual.is_empty() {
        let Some(endpoint) = &args.endpoint else {
            bail!(
                "--contextual needs --endpoint or {}",
                RemoteProvider::ENDPOINT_VAR
            );
        };
        for model in &args.contextual {
            out.push(Box::new(RemoteProvider::connect(endpoint, model)?));
        }
    }
    Ok(out)
}

fn single_provider(args: &ProviderArgs, mode: &str) -> Result<Option<Box<dyn EmbeddingProvider>>> {
    let mut providers = load_providers(args)?;
    match (mode, providers.len()) {
        ("numeric", _) => Ok(None),
        (_, 1) => Ok(providers.pop()),
        (_, 0) => bail!("mode {mode} needs --embeddings or --contextual"),
        (_, n) => bail!("expected one provider, got {n}"),
    }
}

/// Feature vectors for `profiles`; `None` marks profiles with no usable text.
fn feature_vectors(
    profiles: &[Profile],
    provider: Option<&dyn EmbeddingProvider>,
    mode: &str,
    with_numeric: bool,
) -> Result<Vec<Option<Vec<f64>>>> {
    let pipeline = TextPipeline::shipped();
    let numeric = |p: &Profile| numeric_features(p, pipeline);
    let Some(provider) = provider else {
        return Ok(profiles.iter().map(|p| Some(numeric(p).to_vec())).collect());
    };
    let mode: Mode = mode.parse().map_err(anyhow::Error::msg)?;
    let featurizer = Featurizer::new(provider)?;
    let embedded = featurizer.embed_profiles(profiles)?;
    Ok(profiles
        .iter()
        .zip(embedded)
        .map(|(p, e)| {
            let doc = e.document(featurizer.tags(), mode).ok()?;
            Some(if with_numeric {
                combine(&doc.vector, &numeric(p))
            } else {
                doc.vector
            })
        })
        .collect())
}

fn family_name(mode: &str, with_numeric: bool) -> String {
    match (mode, with_numeric) {
        ("numeric", _) => "baseline".into(),
        (m, true) => format!("numeric+{m}"),
        (m, false) => m.to_string(),
    }
}

fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let provider = single_provider(&a.providers, &a.mode)?;
    let vectors = feature_vectors(ds.profiles(), provider.as_deref(), &a.mode, a.with_numeric)?;
    let family = family_name(&a.mode, a.with_numeric);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (p, v) in ds.profiles().iter().zip(vectors) {
        match v {
            Some(values) => rows.push(FeatureRow {
                id: p.id().to_string(),
                label: p.label(),
                family: family.clone(),
                values,
            }),
            None => skipped.push(p.id().to_string()),
        }
    }
    let file =
        fs::File::create(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    write_feature_csv(std::io::BufWriter::new(file), &rows)?;

    let dim = provider.as_ref().map_or(0, |p| p.dim());
    let mut columns: Vec<String> = (0..dim).map(|i| format!("embedding_{i}")).collect();
    if provider.is_none() || a.with_numeric {
        columns.extend(numeric_feature_names());
    }
    let schema = serde_json::json!({
        "family": family,
        "provider": provider.as_ref().map(|p| p.descriptor().clone()),
        "columns": columns,
        "excluded": skipped,
    });
    let sidecar = a.out.with_extension("schema.json");
    fs::write(&sidecar, serde_json::to_string_pretty(&schema)? + "\n")
        .with_context(|| format!("cannot write {}", sidecar.display()))?;
    out!("{} rows, {} excluded", rows.len(), skipped.len());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let algorithm: Algorithm = a.algorithm.parse().map_err(anyhow::Error::msg)?;
    let mut config: TrainConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    config.seed = a.seed;
    let ds = load_dataset(&a.dataset)?;
    let provider = single_provider(&a.providers, &a.mode)?;
    let vectors = feature_vectors(ds.profiles(), provider.as_deref(), &a.mode, a.with_numeric)?;
    let (rows, y): (Vec<Vec<f64>>, Vec<u8>) = ds
        .profiles()
        .iter()
        .zip(vectors)
        .filter_map(|(p, v)| Some((v?, p.label().class())))
        .unzip();
    let model = fit(algorithm, to_matrix(&rows).view(), &y, &config)?;
    let saved = ScoringModel {
        mode: a.mode.clone(),
        with_numeric: a.with_numeric,
        provider: provider.as_ref().map(|p| p.descriptor().clone()),
        model,
    };
    fs::write(&a.out, serde_json::to_string(&saved)?)
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    out!(
        "trained {algorithm} on {} profiles ({} excluded)",
        y.len(),
        ds.len() - y.len()
    );
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<()> {
    let text = fs::read_to_string(&a.model)
        .with_context(|| format!("cannot read {}", a.model.display()))?;
    let saved: ScoringModel = serde_json::from_str(&text).context("invalid model file")?;
    let model = TrainedModel::from_json(&serde_json::to_string(&saved.model)?)?;
    let ds = load_dataset(&a.dataset)?;
    let provider = single_provider(&a.providers, &saved.mode)?;
    if let (Some(p), Some(want)) = (&provider, &saved.provider) {
        if p.dim() != want.dim {
            bail!(
                "provider dimension {} does not match the model's {}",
                p.dim(),
                want.dim
            );
        }
    }
    let vectors = feature_vectors(
        ds.profiles(),
        provider.as_deref(),
        &saved.mode,
        saved.with_numeric,
    )?;
    let mut out = String::from("id,fake_score,prediction\n");
    for (p, v) in ds.profiles().iter().zip(vectors) {
        let line = match v {
            Some(v) => {
                let x = to_matrix(&[v]);
                let s = model.fake_score(x.view())?[0];
                let pred = model.predict(x.view())?[0];
                format!(
                    "{},{s},{}\n",
                    p.id(),
                    if pred == 1 { "fake" } else { "legit" }
                )
            }
            None => format!("{},,excluded\n", p.id()),
        };
        out.push_str(&line);
    }
    fs::File::create(&a.out)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    Ok(())
}

/// Merges defaults, the config file and flags, in increasing precedence.
pub fn resolve_experiment(
    a: &ExperimentArgs,
) -> Result<(ExperimentConfig, PathBuf, ProviderArgs, PathBuf)> {
    let id: ExperimentId = a.experiment.parse().map_err(anyhow::Error::msg)?;
    let file: RunFile = match &a.config {
        Some(p) => read_toml(p)?,
        None => RunFile::default(),
    };
    let mut cfg = ExperimentConfig::new(id);
    cfg.scale = a.scale.or(file.scale).unwrap_or(cfg.scale);
    cfg.seed = a.seed.or(file.seed).unwrap_or(cfg.seed);
    if !a.mode.is_empty() {
        cfg.modes = a
            .mode
            .iter()
            .map(|m| m.parse::<Mode>())
            .collect::<Result<_, _>>()
            .map_err(anyhow::Error::msg)?;
    } else if let Some(m) = file.modes {
        cfg.modes = m;
    }
    cfg.sweep = if a.sweep.is_empty() {
        file.sweep.unwrap_or_default()
    } else {
        a.sweep.clone()
    };
    if !a.ablate.is_empty() {
        cfg.ablate = a
            .ablate
            .iter()
            .map(|s| SectionTag::from_key(s).with_context(|| format!("unknown section `{s}`")))
            .collect::<Result<_>>()?;
    } else if let Some(s) = file.ablate {
        cfg.ablate = s;
    }
    if let Some(t) = file.train {
        cfg.train = t;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    let dataset = a
        .dataset
        .clone()
        .or(file.dataset)
        .context("no dataset given (--dataset or `dataset` in the config file)")?;
    let providers = ProviderArgs {
        embeddings: if a.providers.embeddings.is_empty() {
            file.embeddings
        } else {
            a.providers.embeddings.clone()
        },
        contextual: if a.providers.contextual.is_empty() {
            file.contextual
        } else {
            a.providers.contextual.clone()
        },
        endpoint: a.providers.endpoint.clone().or(file.endpoint),
    };
    let out = a
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok((cfg, dataset, providers, out))
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let (cfg, dataset, provider_args, out) = resolve_experiment(&a)?;
    let ds = load_dataset(&dataset)?;
    let providers = load_providers(&provider_args)?;
    let featurizers = providers
        .iter()
        .map(|p| Featurizer::new(p.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let output = run_experiment(&ds, &featurizers, &cfg)?;
    let dir = output.write(&out)?;
    for r in output.rows.iter().filter(|r| r.classifier == "avg") {
        out!(
            "{:<10} {:<14} {:<14} acc {:.4}  f1 {:.4}",
            r.provider,
            r.family,
            r.variant,
            r.accuracy,
            r.f1
        );
    }
    out!("{}", dir.display());
    Ok(())
}
