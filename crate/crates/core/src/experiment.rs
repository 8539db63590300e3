//! Evaluation protocols: fixed train/test layouts over LLP, FLP and CLP
//! profiles, feature families, and the files each run writes.
//!
//! | id | train | test | features |
//! |----|-------|------|----------|
//! | `table2` | 420 LLP, 420 FLP | 180 LLP, 180 FLP | numeric baseline, STE, SSTE |
//! | `table3` | 420 LLP, 420 FLP | 180 LLP, 180 FLP | RAW, numeric + RAW |
//! | `table4` | 600 LLP, 600 FLP | 1200 LLP, 1200 CLP | SSTE |
//! | `table5` | 1200 LLP, 1200 CLP | 600 LLP, 600 FLP | SSTE |
//! | `fig4` | 600+n LLP, 600 FLP, n CLP | 1200-n LLP, 1200-n CLP | SSTE, per n |
//! | `fig5` | 500 LLP, 480 FLP, 20 CLP | 240 LLP, 120 FLP, 120 CLP | SSTE, one section removed per run |
//!
//! Counts are multiplied by `scale` and rounded; the sweep values `n` are not scaled.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::{ensemble_evaluate, to_matrix, ClassifierError, EnsembleReport, TrainConfig};
use crate::embedding::{EmbeddingError, ProviderDescriptor};
use crate::featurize::{combine, numeric_features, Featurizer, Mode, ProfileEmbedding};
use crate::profile::{hex_digest, Dataset, Label, LabelCounts, Profile, SectionTag};
use crate::text::TextPipeline;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{label} shortfall {shortfall}")]
    Shortfall { label: Label, shortfall: usize },
    #[error("profile `{0}` is in both the training and the test set")]
    Overlap(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{0} needs at least one embedding provider")]
    NoProvider(ExperimentId),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{context}: {source}")]
    Classifier {
        context: String,
        #[source]
        source: ClassifierError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Table2,
    Table3,
    Table4,
    Table5,
    Fig4,
    Fig5,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Table2,
        ExperimentId::Table3,
        ExperimentId::Table4,
        ExperimentId::Table5,
        ExperimentId::Fig4,
        ExperimentId::Fig5,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Table2 => "table2",
            ExperimentId::Table3 => "table3",
            ExperimentId::Table4 => "table4",
            ExperimentId::Table5 => "table5",
            ExperimentId::Fig4 => "fig4",
            ExperimentId::Fig5 => "fig5",
        }
    }

    /// Unscaled (train, test) counts. For `fig4` these are the counts at n = 0.
    pub fn layout(self) -> (LabelCounts, LabelCounts) {
        match self {
            ExperimentId::Table2 | ExperimentId::Table3 => {
                (LabelCounts::new(420, 420, 0), LabelCounts::new(180, 180, 0))
            }
            ExperimentId::Table4 => (
                LabelCounts::new(600, 600, 0),
                LabelCounts::new(1200, 0, 1200),
            ),
            ExperimentId::Table5 => (
                LabelCounts::new(1200, 0, 1200),
                LabelCounts::new(600, 600, 0),
            ),
            ExperimentId::Fig4 => (
                LabelCounts::new(600, 600, 0),
                LabelCounts::new(1200, 0, 1200),
            ),
            ExperimentId::Fig5 => (
                LabelCounts::new(500, 480, 20),
                LabelCounts::new(240, 120, 120),
            ),
        }
    }

    pub fn default_modes(self) -> Vec<Mode> {
        match self {
            ExperimentId::Table2 => vec![Mode::Ste, Mode::Sste],
            ExperimentId::Table3 => vec![Mode::Raw],
            _ => vec![Mode::Sste],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!("unknown experiment `{s}` (expected table2..table5, fig4 or fig5)")
            })
    }
}

pub const DEFAULT_SWEEP: [usize; 10] = [1, 2, 5, 10, 20, 50, 100, 200, 400, 600];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    /// Multiplier in (0, 1] applied to every layout count.
    pub scale: f64,
    /// Embedding modes to evaluate; empty means the experiment's default.
    pub modes: Vec<Mode>,
    /// CLP training counts for `fig4`; empty means [`DEFAULT_SWEEP`]
    /// truncated to what the scaled test set allows.
    pub sweep: Vec<usize>,
    /// Sections removed one at a time by `fig5`; empty means all sections.
    pub ablate: Vec<SectionTag>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentId::Table2,
            seed: 0,
            scale: 1.0,
            modes: Vec::new(),
            sweep: Vec::new(),
            ablate: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

fn scaled(n: usize, scale: f64) -> usize {
    if n == 0 {
        0
    } else {
        ((n as f64 * scale).round() as usize).max(1)
    }
}

fn scale_counts(c: LabelCounts, scale: f64) -> LabelCounts {
    LabelCounts::new(
        scaled(c.llp, scale),
        scaled(c.flp, scale),
        scaled(c.clp, scale),
    )
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return bad(format!("scale {} outside (0, 1]", self.scale));
        }
        if self.experiment == ExperimentId::Fig4 {
            let sweep = self.sweep();
            if sweep.is_empty() {
                return bad("sweep is empty".into());
            }
            if sweep[0] < 1 || sweep.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!(
                    "sweep {sweep:?} must be strictly increasing and start at 1 or more"
                ));
            }
            let cap = scaled(1200, self.scale);
            if let Some(&n) = sweep.iter().find(|&&n| n >= cap) {
                return bad(format!(
                    "sweep value {n} leaves no test profiles (limit {})",
                    cap - 1
                ));
            }
        }
        Ok(())
    }

    pub fn modes(&self) -> Vec<Mode> {
        if self.modes.is_empty() {
            self.experiment.default_modes()
        } else {
            self.modes.clone()
        }
    }

    pub fn sweep(&self) -> Vec<usize> {
        if self.sweep.is_empty() {
            let cap = scaled(1200, self.scale);
            DEFAULT_SWEEP.into_iter().filter(|&n| n < cap).collect()
        } else {
            self.sweep.clone()
        }
    }

    pub fn ablate(&self) -> Vec<SectionTag> {
        if self.ablate.is_empty() {
            SectionTag::ALL.to_vec()
        } else {
            self.ablate.clone()
        }
    }

    /// Scaled split for the experiment; `n` is the fig4 sweep value.
    pub fn split_spec(&self, n: usize) -> SplitSpec {
        let (train, test) = self.experiment.layout();
        let (mut train, mut test) = (
            scale_counts(train, self.scale),
            scale_counts(test, self.scale),
        );
        if self.experiment == ExperimentId::Fig4 {
            train.llp += n;
            train.clp = n;
            test.llp -= n;
            test.clp -= n;
        }
        SplitSpec {
            train,
            test,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitSpec {
    pub train: LabelCounts,
    pub test: LabelCounts,
    pub seed: u64,
}

/// Dataset positions of the training and test profiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Rejects splits that share a profile.
    pub fn new(
        dataset: &Dataset,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self, ExperimentError> {
        let seen: BTreeSet<usize> = train.iter().copied().collect();
        if let Some(&i) = test.iter().find(|i| seen.contains(i)) {
            return Err(ExperimentError::Overlap(
                dataset.profiles()[i].id().to_string(),
            ));
        }
        Ok(Self { train, test })
    }
}

/// Per label, shuffles that label's profiles with the seed and takes the
/// first `train` for training and the next `test` for testing. Train and
/// test lists are ordered LLP, FLP, CLP.
pub fn make_split(dataset: &Dataset, spec: &SplitSpec) -> Result<Split, ExperimentError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (stream, label) in Label::ALL.into_iter().enumerate() {
        let want_train = spec.train.get(label);
        let want_test = spec.test.get(label);
        let mut pool: Vec<usize> = dataset
            .profiles()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label() == label)
            .map(|(i, _)| i)
            .collect();
        let need = want_train + want_test;
        if need > pool.len() {
            return Err(ExperimentError::Shortfall {
                label,
                shortfall: need - pool.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream as u64);
        pool.shuffle(&mut rng);
        train.extend_from_slice(&pool[..want_train]);
        test.extend_from_slice(&pool[want_train..need]);
    }
    Split::new(dataset, train, test)
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Feature set fed to the classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Numeric,
    Document(Mode),
    NumericAndDocument(Mode),
}

impl Family {
    pub fn name(self) -> String {
        match self {
            Family::Numeric => "baseline".into(),
            Family::Document(m) => m.as_str().into(),
            Family::NumericAndDocument(m) => format!("numeric+{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub experiment: ExperimentId,
    pub provider: String,
    pub family: String,
    pub variant: String,
    /// Algorithm name, or `avg`.
    pub classifier: String,
    pub accuracy: f64,
    pub f1: f64,
    pub n_test: usize,
    pub excluded_train: usize,
    pub excluded_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub provider: String,
    pub family: String,
    pub n: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitRecord {
    pub variant: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExclusionRecord {
    pub provider: String,
    pub family: String,
    pub variant: String,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub experiment: ExperimentId,
    pub config: ExperimentConfig,
    pub dataset_hash: String,
    pub dataset_counts: LabelCounts,
    pub providers: Vec<ProviderDescriptor>,
    pub splits: Vec<SplitRecord>,
    pub excluded: Vec<ExclusionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricRow>,
    pub curve: Vec<CurvePoint>,
    pub manifest: Manifest,
}

/// Everything one (provider, family, variant) evaluation needs.
struct Cell<'r> {
    provider: usize,
    family: Family,
    variant: String,
    split: usize,
    embeddings: Option<&'r [Option<ProfileEmbedding>]>,
    sweep_n: Option<usize>,
}

struct CellResult {
    report: EnsembleReport,
    excluded: Vec<String>,
    n_test: usize,
}

fn embed_positions(
    featurizer: &Featurizer<'_>,
    profiles: &[Profile],
    positions: &BTreeSet<usize>,
    ablate: Option<SectionTag>,
) -> Result<Vec<Option<ProfileEmbedding>>, ExperimentError> {
    let picked: Vec<Profile> = positions
        .iter()
        .map(|&i| match ablate {
            Some(tag) => profiles[i].without_section(tag),
            None => profiles[i].clone(),
        })
        .collect();
    let embedded = featurizer.embed_profiles(&picked)?;
    let mut out = vec![None; profiles.len()];
    for (&i, e) in positions.iter().zip(embedded) {
        out[i] = Some(e);
    }
    Ok(out)
}

/// Runs one experiment end to end. No files are written.
pub fn run_experiment(
    dataset: &Dataset,
    featurizers: &[Featurizer<'_>],
    config: &ExperimentConfig,
) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let id = config.experiment;
    if featurizers.is_empty() && id != ExperimentId::Table2 {
        return Err(ExperimentError::NoProvider(id));
    }
    let profiles = dataset.profiles();
    let modes = config.modes();
    let pipeline = featurizers
        .first()
        .map_or(TextPipeline::shipped(), |f| f.pipeline());

    let variants: Vec<(String, Option<usize>)> = match id {
        ExperimentId::Fig4 => config
            .sweep()
            .into_iter()
            .map(|n| (format!("n={n}"), Some(n)))
            .collect(),
        _ => vec![("all".to_string(), None)],
    };
    let splits = variants
        .iter()
        .map(|(_, n)| make_split(dataset, &config.split_spec(n.unwrap_or(0))))
        .collect::<Result<Vec<_>, _>>()?;
    let used: BTreeSet<usize> = splits
        .iter()
        .flat_map(|s| s.train.iter().chain(&s.test).copied())
        .collect();

    // One embedding pass per provider, plus one per ablated section for fig5.
    let mut plain = Vec::with_capacity(featurizers.len());
    for f in featurizers {
        plain.push(embed_positions(f, profiles, &used, None)?);
    }
    let ablations = if id == ExperimentId::Fig5 {
        config.ablate()
    } else {
        Vec::new()
    };
    let mut ablated = Vec::with_capacity(featurizers.len());
    for f in featurizers {
        let per_section = ablations
            .iter()
            .map(|&tag| embed_positions(f, profiles, &used, Some(tag)))
            .collect::<Result<Vec<_>, _>>()?;
        ablated.push(per_section);
    }

    let mut cells = Vec::new();
    if id == ExperimentId::Table2 {
        cells.push(Cell {
            provider: usize::MAX,
            family: Family::Numeric,
            variant: variants[0].0.clone(),
            split: 0,
            embeddings: None,
            sweep_n: None,
        });
    }
    for (p, _) in featurizers.iter().enumerate() {
        for &mode in &modes {
            let families: Vec<Family> = match id {
                ExperimentId::Table3 => {
                    vec![Family::Document(mode), Family::NumericAndDocument(mode)]
                }
                _ => vec![Family::Document(mode)],
            };
            for family in families {
                for (s, (variant, n)) in variants.iter().enumerate() {
                    cells.push(Cell {
                        provider: p,
                        family,
                        variant: if id == ExperimentId::Fig5 {
                            "nothing".into()
                        } else {
                            variant.clone()
                        },
                        split: s,
                        embeddings: Some(&plain[p]),
                        sweep_n: *n,
                    });
                }
                for (a, tag) in ablations.iter().enumerate() {
                    cells.push(Cell {
                        provider: p,
                        family,
                        variant: tag.key().to_string(),
                        split: 0,
                        embeddings: Some(&ablated[p][a]),
                        sweep_n: None,
                    });
                }
            }
        }
    }

    let results = cells
        .par_iter()
        .map(|cell| {
            evaluate_cell(
                cell,
                featurizers,
                pipeline,
                profiles,
                &splits[cell.split],
                &config.train,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let provider_name = |cell: &Cell| {
        if cell.provider == usize::MAX {
            "none".to_string()
        } else {
            featurizers[cell.provider]
                .provider()
                .descriptor()
                .name
                .clone()
        }
    };
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    let mut excluded = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        let provider = provider_name(cell);
        let family = cell.family.name();
        let report = &result.report;
        let row = |classifier: String, accuracy: f64, f1: f64| MetricRow {
            experiment: id,
            provider: provider.clone(),
            family: family.clone(),
            variant: cell.variant.clone(),
            classifier,
            accuracy,
            f1,
            n_test: result.n_test,
            excluded_train: report.excluded_train,
            excluded_test: report.excluded_test,
        };
        for c in &report.classifiers {
            rows.push(row(c.algorithm.to_string(), c.accuracy, c.f1));
        }
        rows.push(row("avg".into(), report.avg_accuracy, report.avg_f1));
        if let Some(n) = cell.sweep_n {
            curve.push(CurvePoint {
                provider: provider.clone(),
                family: family.clone(),
                n,
                accuracy: report.avg_accuracy,
            });
        }
        if !result.excluded.is_empty() {
            excluded.push(ExclusionRecord {
                provider,
                family,
                variant: cell.variant.clone(),
                ids: result.excluded,
            });
        }
    }

    let ids = |v: &[usize]| {
        v.iter()
            .map(|&i| profiles[i].id().to_string())
            .collect::<Vec<_>>()
    };
    let manifest = Manifest {
        experiment: id,
        config: config.clone(),
        dataset_hash: dataset.content_hash(),
        dataset_counts: dataset.counts(),
        providers: featurizers
            .iter()
            .map(|f| f.provider().descriptor().clone())
            .collect(),
        splits: variants
            .iter()
            .zip(&splits)
            .map(|((variant, _), s)| SplitRecord {
                variant: variant.clone(),
                train: ids(&s.train),
                test: ids(&s.test),
            })
            .collect(),
        excluded,
    };
    Ok(ExperimentOutput {
        rows,
        curve,
        manifest,
    })
}

fn evaluate_cell(
    cell: &Cell<'_>,
    featurizers: &[Featurizer<'_>],
    pipeline: &TextPipeline,
    profiles: &[Profile],
    split: &Split,
    train: &TrainConfig,
) -> Result<CellResult, ExperimentError> {
    let features = |profile: &Profile, i: usize| -> Option<Vec<f64>> {
        let numeric = || numeric_features(profile, pipeline);
        let (Family::Document(mode) | Family::NumericAndDocument(mode)) = cell.family else {
            return Some(numeric().to_vec());
        };
        let tags = featurizers[cell.provider].tags();
        let emb = cell.embeddings.expect("document family has embeddings")[i]
            .as_ref()
            .expect("every split position is embedded");
        match emb.document(tags, mode) {
            Ok(doc) if matches!(cell.family, Family::NumericAndDocument(_)) => {
                Some(combine(&doc.vector, &numeric()))
            }
            Ok(doc) => Some(doc.vector),
            Err(_) => None,
        }
    };
    let build = |positions: &[usize]| {
        let mut rows = Vec::with_capacity(positions.len());
        let mut y = Vec::with_capacity(positions.len());
        let mut excluded = Vec::new();
        for &i in positions {
            let profile = &profiles[i];
            match features(profile, i) {
                Some(v) => {
                    rows.push(v);
                    y.push(profile.label().class());
                }
                None => excluded.push(profile.id().to_string()),
            }
        }
        (to_matrix(&rows), y, excluded)
    };
    let (x_train, y_train, mut excluded) = build(&split.train);
    let (x_test, y_test, excluded_from_test) = build(&split.test);
    let excluded_train = excluded.len();
    let excluded_test = excluded_from_test.len();
    excluded.extend(excluded_from_test);
    let context = || format!("{} / {}", cell.family.name(), cell.variant);
    if y_test.is_empty() {
        return Err(ExperimentError::Classifier {
            context: context(),
            source: ClassifierError::Evaluation("every test profile was excluded".into()),
        });
    }
    let mut report = ensemble_evaluate(x_train.view(), &y_train, x_test.view(), &y_test, train)
        .map_err(|source| ExperimentError::Classifier {
            context: context(),
            source,
        })?;
    report.excluded_train = excluded_train;
    report.excluded_test = excluded_test;
    Ok(CellResult {
        report,
        excluded,
        n_test: y_test.len(),
    })
}

const METRICS_HEADER: &str =
    "experiment,provider,mode,variant,classifier,accuracy,f1,n_test,excluded_train,excluded_test";

impl ExperimentOutput {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.experiment,
                crate::featurize::csv_field(&r.provider),
                r.family,
                r.variant,
                r.classifier,
                r.accuracy,
                r.f1,
                r.n_test,
                r.excluded_train,
                r.excluded_test
            ));
        }
        out
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("provider,mode,n,accuracy\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::featurize::csv_field(&p.provider),
                p.family,
                p.n,
                p.accuracy
            ));
        }
        out
    }

    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Hash of the effective config, dataset and providers.
    pub fn run_hash(&self) -> String {
        let m = &self.manifest;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&m.config).expect("config serializes"));
        h.update(m.dataset_hash.as_bytes());
        for p in &m.providers {
            h.update(serde_json::to_vec(p).expect("descriptor serializes"));
        }
        hex_digest(&h.finalize())[..12].to_string()
    }

    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.manifest.experiment, self.run_hash())
    }

    /// Writes `metrics.csv`, `manifest.json` and, for fig4, `curve.csv` into
    /// `root/<experiment>-<hash>`. Files are staged in a sibling directory
    /// and renamed into place, so a failure leaves no partial run behind.
    pub fn write(&self, root: &Path) -> Result<PathBuf, ExperimentError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExperimentError::Io { path, source }
        };
        std::fs::create_dir_all(root).map_err(io(root))?;
        let final_dir = root.join(self.dir_name());
        let staging = root.join(format!(
            ".{}.partial-{}",
            self.dir_name(),
            std::process::id()
        ));
        let result = (|| {
            if staging.exists() {
                std::fs::remove_dir_all(&staging).map_err(io(&staging))?;
            }
            std::fs::create_dir(&staging).map_err(io(&staging))?;
            let mut files = vec![
                ("metrics.csv", self.metrics_csv()),
                ("manifest.json", self.manifest_json()),
            ];
            if self.manifest.experiment == ExperimentId::Fig4 {
                files.push(("curve.csv", self.curve_csv()));
            }
            for (name, body) in files {
                let path = staging.join(name);
                let mut f = std::fs::File::create(&path).map_err(io(&path))?;
                f.write_all(body.as_bytes()).map_err(io(&path))?;
            }
            if final_dir.exists() {
                std::fs::remove_dir_all(&final_dir).map_err(io(&final_dir))?;
            }
            std::fs::rename(&staging, &final_dir).map_err(io(&final_dir))
        })();
        if result.is_err() {
            let _ = std::fs::remove_dir_all(&staging);
        }
        result.map(|()| final_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Item, SectionEntry, SubsectionTag};

    fn toy(llp: usize, flp: usize, clp: usize) -> Dataset {
        let mut profiles = Vec::new();
        for (label, n) in [(Label::Llp, llp), (Label::Flp, flp), (Label::Clp, clp)] {
            for i in 0..n {
                let mut item = Item::new();
                item.insert(SubsectionTag::Description, format!("text {i}"));
                profiles.push(
                    Profile::new(
                        format!("{label}-{i}"),
                        label,
                        vec![SectionEntry {
                            section: SectionTag::Overview,
                            items: vec![item],
                        }],
                    )
                    .unwrap(),
                );
            }
        }
        Dataset::new(profiles).unwrap()
    }

    fn spec(train: LabelCounts, test: LabelCounts, seed: u64) -> SplitSpec {
        SplitSpec { train, test, seed }
    }

    #[test]
    fn split_is_disjoint_and_covers_requested_counts() {
        let ds = toy(10, 3, 0);
        let s = make_split(
            &ds,
            &spec(LabelCounts::new(6, 1, 0), LabelCounts::new(4, 2, 0), 1),
        )
        .unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 6));
        let all: BTreeSet<usize> = s.train.iter().chain(&s.test).copied().collect();
        assert_eq!(all.len(), 13);
        let llp: Vec<_> = s.train.iter().chain(&s.test).filter(|&&i| i < 10).collect();
        assert_eq!(llp.len(), 10);
    }

    #[test]
    fn shortfall_names_label() {
        let ds = toy(0, 600, 0);
        let err = make_split(
            &ds,
            &spec(LabelCounts::new(0, 700, 0), LabelCounts::default(), 0),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "FLP shortfall 100");
    }

    #[test]
    fn split_is_seeded() {
        let ds = toy(20, 20, 0);
        let sp = spec(LabelCounts::new(5, 5, 0), LabelCounts::new(5, 5, 0), 9);
        assert_eq!(make_split(&ds, &sp).unwrap(), make_split(&ds, &sp).unwrap());
        let other = make_split(&ds, &SplitSpec { seed: 10, ..sp }).unwrap();
        assert_ne!(make_split(&ds, &sp).unwrap(), other);
    }

    #[test]
    fn overlapping_split_rejected() {
        let ds = toy(4, 0, 0);
        let err = Split::new(&ds, vec![0, 1], vec![1, 2]).unwrap_err();
        assert!(matches!(err, ExperimentError::Overlap(id) if id == "LLP-1"));
    }

    #[test]
    fn fig4_split_arithmetic() {
        let cfg = ExperimentConfig {
            scale: 0.1,
            ..ExperimentConfig::new(ExperimentId::Fig4)
        };
        let s = cfg.split_spec(5);
        assert_eq!(s.train, LabelCounts::new(65, 60, 5));
        assert_eq!(s.test, LabelCounts::new(115, 0, 115));
        // larger n moves LLPs from test to train without changing the total
        let t = cfg.split_spec(20);
        assert_eq!(t.train.llp + t.test.llp, s.train.llp + s.test.llp);
    }

    #[test]
    fn fig4_splits_are_nested() {
        let ds = toy(30, 10, 20);
        let cfg = ExperimentConfig {
            scale: 0.01,
            ..ExperimentConfig::new(ExperimentId::Fig4)
        };
        let a = make_split(&ds, &cfg.split_spec(2)).unwrap();
        let b = make_split(&ds, &cfg.split_spec(5)).unwrap();
        assert!(a.train.iter().all(|i| b.train.contains(i)));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new(ExperimentId::Fig4);
        cfg.sweep = vec![1, 5, 5];
        assert!(cfg.validate().is_err());
        cfg.sweep = vec![0, 5];
        assert!(cfg.validate().is_err());
        cfg.sweep = vec![1, 5, 20];
        assert!(cfg.validate().is_ok());
        cfg.scale = 0.01;
        assert!(cfg.validate().is_err());
        cfg.sweep.clear();
        assert_eq!(cfg.sweep(), vec![1, 2, 5, 10]);
        assert!(cfg.validate().is_ok());
        cfg.scale = 0.0;
        assert!(cfg.validate().is_err());
        cfg.scale = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn spearman_oracle() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // ranks of y are 1, 2.5, 2.5, 4: cov 4.5, var 5 and 4.5
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 3.0]);
        assert!((r - 4.5 / 22.5f64.sqrt()).abs() < 1e-12);
        assert!(spearman(&[1.0, 2.0], &[5.0, 5.0]).is_nan());
    }

    #[test]
    fn experiment_ids_parse() {
        for id in ExperimentId::ALL {
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
        assert!("table9".parse::<ExperimentId>().is_err());
    }
}
