//! Word embedding providers.
//!
//! Two providers sit behind [`EmbeddingProvider`]: a static token table loaded
//! from the plain `token v1 ... vd` text format, and a client for a remote
//! contextual-embedding service (see [`wire`] for the protocol).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::profile::{SectionTag, SubsectionTag};
use crate::text::preprocess_tag;

pub type Vector = Vec<f64>;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch at line {line}: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("bad component `{value}` at line {line}")]
    BadComponent { line: usize, value: String },
    #[error("line {line} has a token but no components")]
    NoComponents { line: usize },
    #[error("embedding file is empty")]
    Empty,
    #[error("tag vocabulary missing from provider: {}", .0.join(", "))]
    MissingTags(Vec<String>),
    #[error("tag phrase `{0}` has no tokens")]
    EmptyTag(String),
    #[error("embedding service at {endpoint} unreachable: {source}")]
    Unreachable {
        endpoint: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("embedding service returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("embedding service not ready (status `{0}`)")]
    NotReady(String),
    #[error("embedding service protocol violation: {0}")]
    Protocol(String),
}

/// Dense token table. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    index: HashMap<String, usize>,
    data: Vec<f64>,
    dim: usize,
    warnings: Vec<String>,
    digest: String,
}

impl EmbeddingTable {
    /// Reads the `token v1 ... vd` text format. On duplicate tokens the first
    /// occurrence wins and a warning is recorded.
    pub fn from_reader<R: BufRead>(mut reader: R) -> Result<Self, EmbeddingError> {
        let mut hasher = Sha256::new();
        let mut index = HashMap::new();
        let mut data = Vec::new();
        let mut dim = 0usize;
        let mut warnings = Vec::new();
        let mut buf = String::new();
        let mut line_no = 0usize;
        loop {
            buf.clear();
            let n = reader
                .read_line(&mut buf)
                .map_err(|source| EmbeddingError::Io {
                    path: PathBuf::from("<reader>"),
                    source,
                })?;
            if n == 0 {
                break;
            }
            line_no += 1;
            hasher.update(buf.as_bytes());
            let line = buf.trim_end_matches(['\n', '\r']);
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let Some(token) = fields.next() else {
                continue;
            };
            let start = data.len();
            for field in fields {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => data.push(v),
                    _ => {
                        return Err(EmbeddingError::BadComponent {
                            line: line_no,
                            value: field.to_string(),
                        })
                    }
                }
            }
            let found = data.len() - start;
            if found == 0 {
                return Err(EmbeddingError::NoComponents { line: line_no });
            }
            if dim == 0 {
                dim = found;
            } else if found != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    line: line_no,
                    expected: dim,
                    found,
                });
            }
            if index.contains_key(token) {
                data.truncate(start);
                let msg =
                    format!("duplicate token `{token}` at line {line_no}; first occurrence kept");
                tracing::warn!("{msg}");
                warnings.push(msg);
            } else {
                index.insert(token.to_string(), start / dim);
            }
        }
        if index.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        let digest = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(Self {
            index,
            data,
            dim,
            warnings,
            digest,
        })
    }

    /// Builds a table from in-memory entries. All vectors must share one dimension.
    pub fn from_entries<I, S>(entries: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vector)>,
        S: Into<String>,
    {
        let mut text = String::new();
        for (token, v) in entries {
            text.push_str(&token.into());
            for x in v {
                text.push(' ');
                text.push_str(&format!("{x:?}"));
            }
            text.push('\n');
        }
        Self::from_reader(text.as_bytes())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// SHA-256 of the source bytes.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

pub fn load_table(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbeddingError> {
    let path = path.as_ref();
    let io_err = |source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    EmbeddingTable::from_reader(BufReader::new(file)).map_err(|e| match e {
        EmbeddingError::Io { source, .. } => io_err(source),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    StaticTable,
    ContextualRemote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    /// Short display name used in result tables.
    pub name: String,
    pub kind: ProviderKind,
    pub dim: usize,
    /// File digest for static tables, `model@endpoint#layer` for remote ones.
    pub identity: String,
}

/// The embedding function.
///
/// Implementations return exactly one entry per input token. `None` marks a
/// token the provider cannot embed (static out-of-vocabulary); contextual
/// providers never return `None`.
pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    fn dim(&self) -> usize {
        self.descriptor().dim
    }

    /// Embeds whole documents; each document is its own context.
    fn embed_documents(
        &self,
        docs: &[&[String]],
    ) -> Result<Vec<Vec<Option<Vector>>>, EmbeddingError>;

    /// Embeds `context[span]`, using the full `context` for contextual models.
    fn embed_tokens(
        &self,
        context: &[String],
        span: std::ops::Range<usize>,
    ) -> Result<Vec<Option<Vector>>, EmbeddingError> {
        let mut all = self.embed_documents(&[context])?;
        let doc = all.pop().unwrap_or_default();
        Ok(doc.into_iter().skip(span.start).take(span.len()).collect())
    }
}

#[derive(Debug, Clone)]
pub struct StaticProvider {
    table: EmbeddingTable,
    descriptor: ProviderDescriptor,
}

impl StaticProvider {
    /// Wraps a table, failing if any taxonomy tag token is missing from it.
    pub fn new(name: impl Into<String>, table: EmbeddingTable) -> Result<Self, EmbeddingError> {
        let provider = Self::without_tag_check(name, table);
        let missing = missing_tags(&provider.table);
        if missing.is_empty() {
            Ok(provider)
        } else {
            Err(EmbeddingError::MissingTags(missing))
        }
    }

    /// Wraps a table that may not cover the tag vocabulary.
    pub fn without_tag_check(name: impl Into<String>, table: EmbeddingTable) -> Self {
        let descriptor = ProviderDescriptor {
            name: name.into(),
            kind: ProviderKind::StaticTable,
            dim: table.dim(),
            identity: format!("sha256:{}", table.digest()),
        };
        Self { table, descriptor }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }
}

fn missing_tags(table: &EmbeddingTable) -> Vec<String> {
    let phrases = SectionTag::ALL
        .iter()
        .map(|t| t.phrase())
        .chain(SubsectionTag::ALL.iter().map(|t| t.phrase()));
    let missing: indexmap::IndexSet<&str> = phrases
        .filter(|p| {
            let tokens = preprocess_tag(p);
            tokens.is_empty() || tokens.iter().any(|t| !table.contains(t))
        })
        .collect();
    missing.into_iter().map(str::to_string).collect()
}

impl EmbeddingProvider for StaticProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_documents(
        &self,
        docs: &[&[String]],
    ) -> Result<Vec<Vec<Option<Vector>>>, EmbeddingError> {
        Ok(docs
            .iter()
            .map(|doc| {
                doc.iter()
                    .map(|t| self.table.get(t).map(<[f64]>::to_vec))
                    .collect()
            })
            .collect())
    }

    fn embed_tokens(
        &self,
        context: &[String],
        span: std::ops::Range<usize>,
    ) -> Result<Vec<Option<Vector>>, EmbeddingError> {
        Ok(context[span]
            .iter()
            .map(|t| self.table.get(t).map(<[f64]>::to_vec))
            .collect())
    }
}

/// Embeds a tag phrase; multi-token phrases give the mean of their token vectors.
pub fn embed_tag(provider: &dyn EmbeddingProvider, phrase: &str) -> Result<Vector, EmbeddingError> {
    let tokens = preprocess_tag(phrase);
    if tokens.is_empty() {
        return Err(EmbeddingError::EmptyTag(phrase.to_string()));
    }
    let vectors = provider
        .embed_documents(&[&tokens])?
        .pop()
        .unwrap_or_default();
    let mut sum = vec![0.0; provider.dim()];
    for v in &vectors {
        let v = v
            .as_ref()
            .ok_or_else(|| EmbeddingError::MissingTags(vec![phrase.to_string()]))?;
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = vectors.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// JSON bodies of the contextual-embedding service.
pub mod wire {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedRequest {
        pub id: String,
        pub model: String,
        pub sequences: Vec<Vec<String>>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedResponse {
        pub id: String,
        pub dim: usize,
        /// One list per sequence, one vector per token.
        pub vectors: Vec<Vec<Vec<f64>>>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Health {
        pub status: String,
        pub model: String,
        pub dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub layer: Option<String>,
    }

    pub const EMBED_PATH: &str = "/v1/embed";
    pub const HEALTH_PATH: &str = "/v1/health";
}

/// Client for the contextual-embedding service.
#[derive(Debug)]
pub struct RemoteProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    batch_size: usize,
    next_id: AtomicU64,
    descriptor: ProviderDescriptor,
}

impl RemoteProvider {
    /// Environment variable naming the service base URL.
    pub const ENDPOINT_VAR: &'static str = "SSTE_EMBED_ENDPOINT";

    /// Probes `/v1/health` and adopts the reported dimension.
    pub fn connect(endpoint: &str, model: &str) -> Result<Self, EmbeddingError> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(300))
            .build()
            .map_err(|source| EmbeddingError::Unreachable {
                endpoint: endpoint.clone(),
                source,
            })?;
        let resp = client
            .get(format!("{endpoint}{}", wire::HEALTH_PATH))
            .send()
            .map_err(|source| EmbeddingError::Unreachable {
                endpoint: endpoint.clone(),
                source,
            })?;
        let status = resp.status();
        let body = resp.text().unwrap_or_default();
        let health: Option<wire::Health> = serde_json::from_str(&body).ok();
        match health {
            Some(h) if status.is_success() && h.status == "ok" => {
                if h.dim == 0 {
                    return Err(EmbeddingError::Protocol("health reports dim 0".into()));
                }
                if h.model != model {
                    return Err(EmbeddingError::Protocol(format!(
                        "service hosts model `{}`, requested `{model}`",
                        h.model
                    )));
                }
                let descriptor = ProviderDescriptor {
                    name: model.to_string(),
                    kind: ProviderKind::ContextualRemote,
                    dim: h.dim,
                    identity: match &h.layer {
                        Some(layer) => format!("{model}@{endpoint}#{layer}"),
                        None => format!("{model}@{endpoint}"),
                    },
                };
                Ok(Self {
                    client,
                    endpoint,
                    model: model.to_string(),
                    batch_size: 16,
                    next_id: AtomicU64::new(0),
                    descriptor,
                })
            }
            Some(h) => Err(EmbeddingError::NotReady(h.status)),
            None => Err(EmbeddingError::Http {
                status: status.as_u16(),
                body,
            }),
        }
    }

    /// Maximum number of sequences per request.
    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn request(&self, sequences: Vec<Vec<String>>) -> Result<Vec<Vec<Vector>>, EmbeddingError> {
        let id = format!(
            "{}-{}",
            self.model,
            self.next_id.fetch_add(1, Ordering::Relaxed)
        );
        let req = wire::EmbedRequest {
            id: id.clone(),
            model: self.model.clone(),
            sequences,
        };
        let resp = self
            .client
            .post(format!("{}{}", self.endpoint, wire::EMBED_PATH))
            .json(&req)
            .send()
            .map_err(|source| EmbeddingError::Unreachable {
                endpoint: self.endpoint.clone(),
                source,
            })?;
        let status = resp.status();
        let body = resp.text().map_err(|source| EmbeddingError::Unreachable {
            endpoint: self.endpoint.clone(),
            source,
        })?;
        if !status.is_success() {
            return Err(EmbeddingError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let resp: wire::EmbedResponse = serde_json::from_str(&body)
            .map_err(|e| EmbeddingError::Protocol(format!("bad response body: {e}")))?;
        if resp.id != id {
            return Err(EmbeddingError::Protocol(format!(
                "response id `{}` does not match request `{id}`",
                resp.id
            )));
        }
        let dim = self.descriptor.dim;
        if resp.dim != dim {
            return Err(EmbeddingError::Protocol(format!(
                "dimension {} differs from health dimension {dim}",
                resp.dim
            )));
        }
        if resp.vectors.len() != req.sequences.len() {
            return Err(EmbeddingError::Protocol(format!(
                "{} sequences sent, {} returned",
                req.sequences.len(),
                resp.vectors.len()
            )));
        }
        for (i, (seq, vecs)) in req.sequences.iter().zip(&resp.vectors).enumerate() {
            if seq.len() != vecs.len() {
                return Err(EmbeddingError::Protocol(format!(
                    "sequence {i}: {} tokens but {} vectors",
                    seq.len(),
                    vecs.len()
                )));
            }
            if vecs
                .iter()
                .any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite()))
            {
                return Err(EmbeddingError::Protocol(format!(
                    "sequence {i}: vector of wrong length or non-finite"
                )));
            }
        }
        Ok(resp.vectors)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_documents(
        &self,
        docs: &[&[String]],
    ) -> Result<Vec<Vec<Option<Vector>>>, EmbeddingError> {
        // the service rejects empty sequences
        let nonempty: Vec<usize> = (0..docs.len()).filter(|&i| !docs[i].is_empty()).collect();
        let batches: Vec<&[usize]> = nonempty.chunks(self.batch_size).collect();
        let results = batches
            .par_iter()
            .map(|batch| self.request(batch.iter().map(|&i| docs[i].to_vec()).collect()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out: Vec<Vec<Option<Vector>>> = vec![Vec::new(); docs.len()];
        for (batch, vectors) in batches.iter().zip(results) {
            for (&i, doc) in batch.iter().zip(vectors) {
                out[i] = doc.into_iter().map(Some).collect();
            }
        }
        Ok(out)
    }
}
