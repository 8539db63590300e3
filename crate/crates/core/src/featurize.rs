//! Tag-debiased document embeddings.
//!
//! Every (item, subsection) text field is cleaned into tokens and embedded.
//! A subsection's feature is the mean of its embeddable token vectors minus a
//! tag vector `G`; the document embedding is the mean of those features.
//!
//! | mode | `G` |
//! |------|-----|
//! | SSTE | `(Em(section) + Em(subsection)) / 2` |
//! | STE  | `Em(section)` |
//! | RAW  | zero |

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_tag, EmbeddingError, EmbeddingProvider, Vector};
use crate::profile::{Label, Profile, SectionTag, SubsectionTag};
use crate::text::{TextPipeline, TokenList};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("profile `{0}` has no embeddable text")]
    EmptyDocument(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sste,
    Ste,
    Raw,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Sste, Mode::Ste, Mode::Raw];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sste => "sste",
            Mode::Ste => "ste",
            Mode::Raw => "raw",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sste" => Ok(Mode::Sste),
            "ste" => Ok(Mode::Ste),
            "raw" => Ok(Mode::Raw),
            other => Err(format!(
                "unknown mode `{other}` (expected sste, ste or raw)"
            )),
        }
    }
}

/// Tokens of one text field, with their position in the concatenated document.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsectionTokens {
    pub section: SectionTag,
    pub subsection: SubsectionTag,
    pub tokens: TokenList,
    pub span: Range<usize>,
}

/// Mean token vector of one subsection, before tag subtraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsectionMean {
    pub section: SectionTag,
    pub subsection: SubsectionTag,
    pub token_count: usize,
    pub embeddable_count: usize,
    /// `None` when no token was embeddable.
    pub mean: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsectionFeature {
    pub section: SectionTag,
    pub subsection: SubsectionTag,
    pub vector: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentEmbedding {
    pub profile_id: String,
    pub mode: Mode,
    pub vector: Vector,
}

/// Embedded tag vectors for every legal (section, subsection) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TagVectors {
    dim: usize,
    sections: Vec<Vector>,
    /// Indexed by section, then by position in [`SectionTag::subsections`].
    subsections: Vec<Vec<Vector>>,
}

impl TagVectors {
    /// Embeds every tag phrase. Fails listing all tags the provider cannot embed.
    pub fn build(provider: &dyn EmbeddingProvider) -> Result<Self, EmbeddingError> {
        let mut missing = indexmap::IndexSet::new();
        let mut embed = |phrase: &str| match embed_tag(provider, phrase) {
            Ok(v) => Ok(v),
            Err(EmbeddingError::MissingTags(_)) | Err(EmbeddingError::EmptyTag(_)) => {
                missing.insert(phrase.to_string());
                Ok(vec![0.0; provider.dim()])
            }
            Err(other) => Err(other),
        };
        let mut sections = Vec::with_capacity(SectionTag::COUNT);
        let mut subsections = Vec::with_capacity(SectionTag::COUNT);
        for tag in SectionTag::ALL {
            sections.push(embed(tag.phrase())?);
            subsections.push(
                tag.subsections()
                    .iter()
                    .map(|s| embed(s.phrase()))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        if !missing.is_empty() {
            return Err(EmbeddingError::MissingTags(missing.into_iter().collect()));
        }
        Ok(Self {
            dim: provider.dim(),
            sections,
            subsections,
        })
    }

    /// Tag vectors from arbitrary functions; `subsection` receives the owning section.
    pub fn from_fn(
        dim: usize,
        mut section: impl FnMut(SectionTag) -> Vector,
        mut subsection: impl FnMut(SectionTag, SubsectionTag) -> Vector,
    ) -> Self {
        let sections = SectionTag::ALL.iter().map(|t| section(*t)).collect();
        let subsections = SectionTag::ALL
            .iter()
            .map(|t| t.subsections().iter().map(|s| subsection(*t, *s)).collect())
            .collect();
        Self {
            dim,
            sections,
            subsections,
        }
    }

    pub fn zeroed(dim: usize) -> Self {
        Self::from_fn(dim, |_| vec![0.0; dim], |_, _| vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn section(&self, tag: SectionTag) -> &[f64] {
        &self.sections[tag.index()]
    }

    pub fn subsection(&self, section: SectionTag, sub: SubsectionTag) -> &[f64] {
        let pos = section
            .subsections()
            .iter()
            .position(|s| *s == sub)
            .expect("subsection belongs to section");
        &self.subsections[section.index()][pos]
    }

    /// The vector `G` subtracted from a subsection mean.
    pub fn tag_vector(&self, section: SectionTag, sub: SubsectionTag, mode: Mode) -> Vector {
        match mode {
            Mode::Sste => self
                .section(section)
                .iter()
                .zip(self.subsection(section, sub))
                .map(|(a, b)| (a + b) * 0.5)
                .collect(),
            Mode::Ste => self.section(section).to_vec(),
            Mode::Raw => vec![0.0; self.dim],
        }
    }
}

/// Mean of the embeddable vectors, or `None` if there are none.
pub fn mean_of_present(vectors: &[Option<Vector>], dim: usize) -> Option<Vector> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors.iter().flatten() {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    (n > 0).then(|| {
        let n = n as f64;
        sum.into_iter().map(|s| s / n).collect()
    })
}

/// Mean of the embeddable token vectors minus `g`; `None` (skipped) when no
/// token could be embedded.
pub fn subsection_feature(vectors: &[Option<Vector>], g: &[f64]) -> Option<Vector> {
    mean_of_present(vectors, g.len()).map(|m| m.iter().zip(g).map(|(m, g)| m - g).collect())
}

/// Every text field that survives cleaning, in profile order.
pub fn collect_subsections(profile: &Profile, pipeline: &TextPipeline) -> Vec<SubsectionTokens> {
    let mut offset = 0;
    profile
        .texts()
        .filter_map(|(section, subsection, text)| {
            let tokens = pipeline.preprocess(text);
            if tokens.is_empty() {
                return None;
            }
            let span = offset..offset + tokens.len();
            offset = span.end;
            Some(SubsectionTokens {
                section,
                subsection,
                tokens,
                span,
            })
        })
        .collect()
}

/// Per-profile subsection means; mode-independent, so one embedding pass
/// serves every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEmbedding {
    pub profile_id: String,
    pub subsections: Vec<SubsectionMean>,
}

impl ProfileEmbedding {
    pub fn features(&self, tags: &TagVectors, mode: Mode) -> Vec<SubsectionFeature> {
        self.subsections
            .iter()
            .filter_map(|s| {
                let mean = s.mean.as_ref()?;
                let g = tags.tag_vector(s.section, s.subsection, mode);
                Some(SubsectionFeature {
                    section: s.section,
                    subsection: s.subsection,
                    vector: mean.iter().zip(&g).map(|(m, g)| m - g).collect(),
                })
            })
            .collect()
    }

    pub fn document(
        &self,
        tags: &TagVectors,
        mode: Mode,
    ) -> Result<DocumentEmbedding, FeatureError> {
        let features = self.features(tags, mode);
        if features.is_empty() {
            return Err(FeatureError::EmptyDocument(self.profile_id.clone()));
        }
        let mut sum = vec![0.0; tags.dim()];
        for f in &features {
            for (s, x) in sum.iter_mut().zip(&f.vector) {
                *s += x;
            }
        }
        let n = features.len() as f64;
        Ok(DocumentEmbedding {
            profile_id: self.profile_id.clone(),
            mode,
            vector: sum.into_iter().map(|s| s / n).collect(),
        })
    }
}

const CHUNK: usize = 32;

/// Binds a provider, its tag vectors and a text pipeline.
pub struct Featurizer<'a> {
    provider: &'a dyn EmbeddingProvider,
    tags: TagVectors,
    pipeline: &'a TextPipeline,
}

impl<'a> Featurizer<'a> {
    /// Embeds the tag vocabulary up front; missing tags fail here.
    pub fn new(provider: &'a dyn EmbeddingProvider) -> Result<Self, EmbeddingError> {
        let tags = TagVectors::build(provider)?;
        Ok(Self::with_tags(provider, tags))
    }

    pub fn with_tags(provider: &'a dyn EmbeddingProvider, tags: TagVectors) -> Self {
        Self {
            provider,
            tags,
            pipeline: TextPipeline::shipped(),
        }
    }

    pub fn with_pipeline(mut self, pipeline: &'a TextPipeline) -> Self {
        self.pipeline = pipeline;
        self
    }

    pub fn tags(&self) -> &TagVectors {
        &self.tags
    }

    pub fn pipeline(&self) -> &TextPipeline {
        self.pipeline
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider
    }

    pub fn collect_subsections(&self, profile: &Profile) -> Vec<SubsectionTokens> {
        collect_subsections(profile, self.pipeline)
    }

    pub fn embed_profile(&self, profile: &Profile) -> Result<ProfileEmbedding, EmbeddingError> {
        let mut out = self.embed_chunk(std::slice::from_ref(profile))?;
        Ok(out.pop().expect("one profile in, one out"))
    }

    fn embed_chunk(&self, profiles: &[Profile]) -> Result<Vec<ProfileEmbedding>, EmbeddingError> {
        let parts: Vec<Vec<SubsectionTokens>> = profiles
            .iter()
            .map(|p| self.collect_subsections(p))
            .collect();
        let docs: Vec<Vec<String>> = parts
            .iter()
            .map(|subs| subs.iter().flat_map(|s| s.tokens.iter().cloned()).collect())
            .collect();
        let doc_refs: Vec<&[String]> = docs.iter().map(Vec::as_slice).collect();
        let vectors = self.provider.embed_documents(&doc_refs)?;
        let dim = self.provider.dim();
        Ok(profiles
            .iter()
            .zip(parts)
            .zip(vectors)
            .map(|((profile, subs), doc_vectors)| ProfileEmbedding {
                profile_id: profile.id().to_string(),
                subsections: subs
                    .into_iter()
                    .map(|s| {
                        let vs = &doc_vectors[s.span.clone()];
                        SubsectionMean {
                            section: s.section,
                            subsection: s.subsection,
                            token_count: s.tokens.len(),
                            embeddable_count: vs.iter().filter(|v| v.is_some()).count(),
                            mean: mean_of_present(vs, dim),
                        }
                    })
                    .collect(),
            })
            .collect())
    }

    /// Embeds many profiles in parallel; output order follows input order.
    pub fn embed_profiles(
        &self,
        profiles: &[Profile],
    ) -> Result<Vec<ProfileEmbedding>, EmbeddingError> {
        let chunks = profiles
            .par_chunks(CHUNK)
            .map(|chunk| self.embed_chunk(chunk))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn subsection_features(
        &self,
        profile: &Profile,
        mode: Mode,
    ) -> Result<Vec<SubsectionFeature>, FeatureError> {
        Ok(self.embed_profile(profile)?.features(&self.tags, mode))
    }

    pub fn document_embedding(
        &self,
        profile: &Profile,
        mode: Mode,
    ) -> Result<DocumentEmbedding, FeatureError> {
        self.embed_profile(profile)?.document(&self.tags, mode)
    }

    /// Document embedding followed by the numeric features.
    pub fn combined_features(&self, profile: &Profile, mode: Mode) -> Result<Vector, FeatureError> {
        let doc = self.document_embedding(profile, mode)?;
        let numeric = numeric_features(profile, self.pipeline);
        Ok(combine(&doc.vector, &numeric))
    }
}

pub fn combine(doc: &[f64], numeric: &NumericFeatures) -> Vector {
    doc.iter().copied().chain(numeric.to_vec()).collect()
}

pub const NUMERIC_FEATURE_COUNT: usize = SectionTag::COUNT + 2;

/// Column names of [`NumericFeatures`], in order.
pub fn numeric_feature_names() -> Vec<String> {
    SectionTag::ALL
        .iter()
        .map(|t| format!("count_{}", t.key()))
        .chain(["total_tokens".to_string(), "text_length".to_string()])
        .collect()
}

/// Registration-time counts: components per section in canonical section
/// order, then total cleaned token count, then raw character length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NumericFeatures(pub [u64; NUMERIC_FEATURE_COUNT]);

impl NumericFeatures {
    pub fn to_vec(&self) -> Vector {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

pub fn numeric_features(profile: &Profile, pipeline: &TextPipeline) -> NumericFeatures {
    let mut values = [0u64; NUMERIC_FEATURE_COUNT];
    for (slot, count) in values.iter_mut().zip(profile.component_counts().as_array()) {
        *slot = *count as u64;
    }
    let (tokens, chars) = profile.texts().fold((0u64, 0u64), |(t, c), (_, _, text)| {
        (
            t + pipeline.preprocess(text).len() as u64,
            c + text.chars().count() as u64,
        )
    });
    values[SectionTag::COUNT] = tokens;
    values[SectionTag::COUNT + 1] = chars;
    NumericFeatures(values)
}

/// One row of a feature matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub label: Label,
    pub family: String,
    pub values: Vector,
}

/// Writes `id,label,mode,f0..f{D-1}`. All rows must share a width.
pub fn write_feature_csv<W: Write>(mut w: W, rows: &[FeatureRow]) -> std::io::Result<()> {
    let width = rows.first().map_or(0, |r| r.values.len());
    write!(w, "id,label,mode")?;
    for i in 0..width {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for row in rows {
        assert_eq!(row.values.len(), width, "ragged feature matrix");
        write!(w, "{},{},{}", csv_field(&row.id), row.label, row.family)?;
        for v in &row.values {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
