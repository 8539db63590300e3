//! Binary classifiers written from scratch, plus ensemble reporting.
//!
//! Five algorithms are trained on the same matrix: logistic regression, a
//! linear SVM, polynomial and RBF kernel SVMs, and a random forest. Class 1 is
//! the fake (positive) class.

mod forest;
mod logistic;
mod metrics;
mod svm;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{DecisionTree, Node, TreeParams};
pub use logistic::{log_loss, LogisticFit};
pub use metrics::{evaluate, Confusion, Evaluation};
pub use svm::Kernel;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("{rows} feature rows but {labels} labels")]
    ShapeMismatch { rows: usize, labels: usize },
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("label {value} at row {row} is not 0 or 1")]
    BadLabel { row: usize, value: u8 },
    #[error("non-finite feature, row {0}")]
    NonFinite(usize),
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot evaluate: {0}")]
    Evaluation(String),
    #[error("model format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "lr")]
    LogisticRegression,
    #[serde(rename = "svm-linear")]
    SvmLinear,
    #[serde(rename = "svm-poly")]
    SvmPoly,
    #[serde(rename = "svm-rbf")]
    SvmRbf,
    #[serde(rename = "rf")]
    RandomForest,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::LogisticRegression,
        Algorithm::SvmLinear,
        Algorithm::SvmPoly,
        Algorithm::SvmRbf,
        Algorithm::RandomForest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::LogisticRegression => "lr",
            Algorithm::SvmLinear => "svm-linear",
            Algorithm::SvmPoly => "svm-poly",
            Algorithm::SvmRbf => "svm-rbf",
            Algorithm::RandomForest => "rf",
        }
    }

    fn scale_sensitive(self) -> bool {
        !matches!(self, Algorithm::RandomForest)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown algorithm `{s}` (expected lr, svm-linear, svm-poly, svm-rbf or rf)"
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub l2: f64,
    pub iterations: usize,
    pub step: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            iterations: 500,
            step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaPolicy {
    /// `1 / (n_features * variance of the training matrix)`.
    Scale,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    /// Full-batch subgradient epochs for the linear SVM.
    pub linear_epochs: usize,
    pub degree: u32,
    pub coef0: f64,
    pub gamma: GammaPolicy,
    /// SMO stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            linear_epochs: 500,
            degree: 3,
            coef0: 1.0,
            gamma: GammaPolicy::Scale,
            tol: 1e-3,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 100,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            max_depth: None,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Standardize features before LR and SVM training. Forests never standardize.
    pub standardize: bool,
    pub logistic: LogisticParams,
    pub svm: SvmParams,
    pub forest: ForestParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            standardize: true,
            logistic: LogisticParams::default(),
            svm: SvmParams::default(),
            forest: ForestParams::default(),
        }
    }
}

/// Per-feature mean and scale from the training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population standard deviation; constant columns get scale 1.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd > 0.0 && sd.is_finite() { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.as_standard_layout().into_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear {
        weights: Vec<f64>,
        bias: f64,
    },
    Kernel {
        kernel: Kernel,
        support_vectors: Vec<Vec<f64>>,
        /// `alpha_i * y_i` per support vector.
        dual_coef: Vec<f64>,
        bias: f64,
    },
    Forest {
        trees: Vec<DecisionTree>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub n_features: usize,
    pub standardizer: Option<Standardizer>,
    pub params: ModelParams,
}

fn validate_training(x: ArrayView2<f64>, y: &[u8]) -> Result<(), ClassifierError> {
    if x.nrows() != y.len() {
        return Err(ClassifierError::ShapeMismatch {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(ClassifierError::TooFewSamples(y.len()));
    }
    if let Some((row, &value)) = y.iter().enumerate().find(|(_, v)| **v > 1) {
        return Err(ClassifierError::BadLabel { row, value });
    }
    if y.iter().all(|v| *v == y[0]) {
        return Err(ClassifierError::SingleClass);
    }
    check_finite(x)
}

fn check_finite(x: ArrayView2<f64>) -> Result<(), ClassifierError> {
    match x
        .axis_iter(Axis(0))
        .position(|row| row.iter().any(|v| !v.is_finite()))
    {
        Some(row) => Err(ClassifierError::NonFinite(row)),
        None => Ok(()),
    }
}

/// Trains one classifier. Deterministic in `(x, y, config)`.
pub fn fit(
    algorithm: Algorithm,
    x: ArrayView2<f64>,
    y: &[u8],
    config: &TrainConfig,
) -> Result<TrainedModel, ClassifierError> {
    validate_training(x, y)?;
    let standardizer =
        (config.standardize && algorithm.scale_sensitive()).then(|| Standardizer::fit(x));
    let scaled = match &standardizer {
        Some(s) => s.transform(x),
        None => x.as_standard_layout().into_owned(),
    };
    let xs = scaled.view();
    let params = match algorithm {
        Algorithm::LogisticRegression => {
            let fit = logistic::train(xs, y, &config.logistic);
            ModelParams::Linear {
                weights: fit.weights,
                bias: fit.bias,
            }
        }
        Algorithm::SvmLinear => {
            let (weights, bias) = svm::train_linear(xs, y, &config.svm);
            ModelParams::Linear { weights, bias }
        }
        Algorithm::SvmPoly | Algorithm::SvmRbf => {
            let gamma = match config.svm.gamma {
                GammaPolicy::Fixed(g) => g,
                GammaPolicy::Scale => svm::scale_gamma(xs),
            };
            let kernel = if algorithm == Algorithm::SvmPoly {
                Kernel::Poly {
                    gamma,
                    coef0: config.svm.coef0,
                    degree: config.svm.degree,
                }
            } else {
                Kernel::Rbf { gamma }
            };
            svm::train_kernel(xs, y, kernel, &config.svm)
        }
        Algorithm::RandomForest => ModelParams::Forest {
            trees: forest::train_forest(xs, y, &config.forest, config.seed),
        },
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        algorithm,
        n_features: x.ncols(),
        standardizer,
        params,
    })
}

impl TrainedModel {
    fn prepare(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ClassifierError> {
        if x.ncols() != self.n_features && x.nrows() > 0 {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        check_finite(x)?;
        Ok(match &self.standardizer {
            Some(s) => s.transform(x),
            None => x.as_standard_layout().into_owned(),
        })
    }

    /// Raw scores: margin for linear and kernel models, fraction of fake votes
    /// for forests.
    pub fn decision_function(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, ClassifierError> {
        let xs = self.prepare(x)?;
        Ok(xs
            .axis_iter(Axis(0))
            .map(|row| self.score_row(row))
            .collect())
    }

    fn score_row(&self, row: ArrayView1<f64>) -> f64 {
        match &self.params {
            ModelParams::Linear { weights, bias } => {
                row.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + bias
            }
            ModelParams::Kernel {
                kernel,
                support_vectors,
                dual_coef,
                bias,
            } => {
                let row = row.as_slice().expect("standard layout");
                support_vectors
                    .iter()
                    .zip(dual_coef)
                    .map(|(sv, c)| c * kernel.eval(sv, row))
                    .sum::<f64>()
                    + bias
            }
            ModelParams::Forest { trees } => {
                let votes = trees.iter().filter(|t| t.predict_row(row) == 1).count();
                votes as f64 / trees.len() as f64
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<u8>, ClassifierError> {
        let forest = matches!(self.params, ModelParams::Forest { .. });
        Ok(self
            .decision_function(x)?
            .into_iter()
            // forest ties (exactly half the votes) go to class 0
            .map(|s| u8::from(if forest { s > 0.5 } else { s > 0.0 }))
            .collect())
    }

    /// Uncalibrated score in [0, 1]; higher means more likely fake.
    pub fn fake_score(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, ClassifierError> {
        let forest = matches!(self.params, ModelParams::Forest { .. });
        Ok(self
            .decision_function(x)?
            .into_iter()
            .map(|s| if forest { s } else { logistic::sigmoid(s) })
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let model: TrainedModel =
            serde_json::from_str(text).map_err(|e| ClassifierError::Format(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::Format(format!(
                "unsupported format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

pub fn predict(model: &TrainedModel, x: ArrayView2<f64>) -> Result<Vec<u8>, ClassifierError> {
    model.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierResult {
    pub algorithm: Algorithm,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub classifiers: Vec<ClassifierResult>,
    pub avg_accuracy: f64,
    pub avg_f1: f64,
    /// Profiles dropped before training/testing because they had no usable text.
    pub excluded_train: usize,
    pub excluded_test: usize,
}

/// Fits all five classifiers on the training matrix and scores them on the
/// test matrix. Classifiers train concurrently; results keep [`Algorithm::ALL`] order.
pub fn ensemble_evaluate(
    x_train: ArrayView2<f64>,
    y_train: &[u8],
    x_test: ArrayView2<f64>,
    y_test: &[u8],
    config: &TrainConfig,
) -> Result<EnsembleReport, ClassifierError> {
    let classifiers = Algorithm::ALL
        .par_iter()
        .map(|&algorithm| {
            let model = fit(algorithm, x_train, y_train, config)?;
            let pred = model.predict(x_test)?;
            let eval = evaluate(y_test, &pred)?;
            Ok(ClassifierResult {
                algorithm,
                accuracy: eval.accuracy,
                f1: eval.f1,
                confusion: eval.confusion,
            })
        })
        .collect::<Result<Vec<_>, ClassifierError>>()?;
    let n = classifiers.len() as f64;
    let avg_accuracy = classifiers.iter().map(|c| c.accuracy).sum::<f64>() / n;
    let avg_f1 = classifiers.iter().map(|c| c.f1).sum::<f64>() / n;
    Ok(EnsembleReport {
        classifiers,
        avg_accuracy,
        avg_f1,
        excluded_train: 0,
        excluded_test: 0,
    })
}

/// Stacks equal-length rows into a matrix.
pub fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut m = Array2::zeros((rows.len(), ncols));
    for (mut dst, src) in m.axis_iter_mut(Axis(0)).zip(rows) {
        assert_eq!(src.len(), ncols, "ragged rows");
        dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s);
    }
    m
}
