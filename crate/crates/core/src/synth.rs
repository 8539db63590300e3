//! Seeded synthetic corpora with a tunable amount of class signal, plus a
//! matching random word-vector file.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::{IndexMap, IndexSet};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::profile::{
    Dataset, DatasetError, Item, Label, LabelCounts, Profile, SectionEntry, SectionTag,
    SubsectionTag,
};
use crate::text::{preprocess_tag, TextPipeline};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Section completion rates observed on the real platform. Introduction is
/// always present.
pub const DEFAULT_COMPLETION: [(SectionTag, f64); SectionTag::COUNT] = [
    (SectionTag::Introduction, 1.0),
    (SectionTag::Overview, 0.7804),
    (SectionTag::Experiences, 0.9862),
    (SectionTag::Educations, 0.9463),
    (SectionTag::Licenses, 0.3242),
    (SectionTag::Volunteers, 0.3133),
    (SectionTag::Honors, 0.2104),
    (SectionTag::Projects, 0.0804),
    (SectionTag::Publications, 0.1288),
    (SectionTag::Courses, 0.0908),
    (SectionTag::Skills, 0.8617),
    (SectionTag::Scores, 0.01),
    (SectionTag::Languages, 0.2767),
    (SectionTag::Organizations, 0.1971),
];

/// Which pool CLP content tokens come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClpVocabulary {
    /// CLPs have a pool of their own.
    #[default]
    Distinct,
    /// CLPs draw from the FLP pool.
    SharedWithFlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub counts: LabelCounts,
    pub seed: u64,
    /// Probability that a content token comes from the label's own pool
    /// rather than the shared pool.
    pub sigma: f64,
    /// Overrides of [`DEFAULT_COMPLETION`].
    pub completion: IndexMap<SectionTag, f64>,
    /// Sections whose content carries class signal; `None` means all.
    pub signal_sections: Option<Vec<SectionTag>>,
    pub clp_vocabulary: ClpVocabulary,
    pub shared_vocab: usize,
    pub class_vocab: usize,
    /// Fixed boilerplate words that open every field of a given subsection.
    pub template_words: usize,
    pub dim: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            counts: LabelCounts::new(100, 100, 0),
            seed: 0,
            sigma: 1.0,
            completion: IndexMap::new(),
            signal_sections: None,
            clp_vocabulary: ClpVocabulary::Distinct,
            shared_vocab: 400,
            class_vocab: 120,
            template_words: 1,
            dim: 32,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(SynthError::Spec(format!(
                "sigma {} outside [0, 1]",
                self.sigma
            )));
        }
        if let Some((tag, p)) = self
            .completion
            .iter()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(SynthError::Spec(format!(
                "completion for {tag} is {p}, outside [0, 1]"
            )));
        }
        if self.shared_vocab == 0 || self.class_vocab == 0 {
            return Err(SynthError::Spec("vocabulary sizes must be positive".into()));
        }
        if self.dim == 0 {
            return Err(SynthError::Spec("dim must be positive".into()));
        }
        Ok(())
    }

    pub fn completion(&self, section: SectionTag) -> f64 {
        self.completion
            .get(&section)
            .copied()
            .unwrap_or(DEFAULT_COMPLETION[section.index()].1)
    }

    fn carries_signal(&self, section: SectionTag) -> bool {
        self.signal_sections
            .as_ref()
            .is_none_or(|s| s.contains(&section))
    }
}

/// Token pools. All pools are pairwise disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyBank {
    pub shared: Vec<String>,
    pub by_label: [Vec<String>; 3],
    pub templates: IndexMap<(SectionTag, SubsectionTag), Vec<String>>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

impl VocabularyBank {
    /// Pseudo-words that the text pipeline leaves untouched and that do not
    /// collide with tag words.
    pub fn generate(spec: &CorpusSpec, pipeline: &TextPipeline) -> Self {
        let mut rng = stream(spec.seed, 0);
        let reserved: BTreeSet<String> = SectionTag::ALL
            .iter()
            .map(|t| t.phrase())
            .chain(SubsectionTag::ALL.iter().map(|t| t.phrase()))
            .flat_map(preprocess_tag)
            .collect();
        let mut seen = IndexSet::new();
        let mut draw = |n: usize| -> Vec<String> {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let w: String = (0..3)
                    .flat_map(|_| {
                        [
                            *CONSONANTS.choose(&mut rng).unwrap() as char,
                            *VOWELS.choose(&mut rng).unwrap() as char,
                        ]
                    })
                    .collect();
                if reserved.contains(&w) || pipeline.preprocess(&w) != [w.clone()] {
                    continue;
                }
                if seen.insert(w.clone()) {
                    out.push(w);
                }
            }
            out
        };
        let mut templates = IndexMap::new();
        for &section in SectionTag::ALL {
            for &sub in section.subsections() {
                templates.insert((section, sub), draw(spec.template_words));
            }
        }
        let shared = draw(spec.shared_vocab);
        let by_label = [
            draw(spec.class_vocab),
            draw(spec.class_vocab),
            draw(spec.class_vocab),
        ];
        Self {
            shared,
            by_label,
            templates,
        }
    }

    fn pool(&self, label: Label, clp: ClpVocabulary) -> &[String] {
        match (label, clp) {
            (Label::Llp, _) => &self.by_label[0],
            (Label::Flp, _) | (Label::Clp, ClpVocabulary::SharedWithFlp) => &self.by_label[1],
            (Label::Clp, ClpVocabulary::Distinct) => &self.by_label[2],
        }
    }
}

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

fn multi_item(section: SectionTag) -> bool {
    !matches!(
        section,
        SectionTag::Introduction
            | SectionTag::Overview
            | SectionTag::Courses
            | SectionTag::Skills
            | SectionTag::Languages
    )
}

fn field_text(
    section: SectionTag,
    sub: SubsectionTag,
    label: Label,
    spec: &CorpusSpec,
    bank: &VocabularyBank,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut words: Vec<String> = bank.templates[&(section, sub)].clone();
    match sub {
        SubsectionTag::Duration => {
            let start = rng.random_range(1990..=2020);
            let end = start + rng.random_range(0..=6);
            return format!("{} {start} - {end}", words.join(" "));
        }
        SubsectionTag::Date => {
            return format!("{} {}", words.join(" "), rng.random_range(1990..=2023));
        }
        _ => {}
    }
    let (lo, hi, sep) = match sub {
        SubsectionTag::Description => (6, 14, " "),
        SubsectionTag::Skills | SubsectionTag::Courses | SubsectionTag::Languages => (3, 8, ", "),
        _ => (1, 3, " "),
    };
    let k = rng.random_range(lo..=hi);
    let signal = spec.carries_signal(section);
    let own = bank.pool(label, spec.clp_vocabulary);
    for _ in 0..k {
        let from_class = signal && rng.random::<f64>() < spec.sigma;
        let pool = if from_class { own } else { &bank.shared };
        words.push(pool.choose(rng).unwrap().clone());
    }
    let mut text = words.join(sep);
    if sub == SubsectionTag::Description {
        if let Some(first) = text.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        text.push('.');
    }
    text
}

/// One profile. Sections are included by independent coin flips with the
/// spec's completion rates; multi-component sections get one to three items.
pub fn generate_profile(
    id: impl Into<String>,
    label: Label,
    spec: &CorpusSpec,
    bank: &VocabularyBank,
    rng: &mut ChaCha8Rng,
) -> Profile {
    let mut sections = Vec::new();
    for &section in SectionTag::ALL {
        if rng.random::<f64>() >= spec.completion(section) {
            continue;
        }
        let n_items = if multi_item(section) {
            rng.random_range(1..=3)
        } else {
            1
        };
        let items = (0..n_items)
            .map(|_| {
                section
                    .subsections()
                    .iter()
                    .map(|&sub| (sub, field_text(section, sub, label, spec, bank, rng)))
                    .collect::<Item>()
            })
            .collect();
        sections.push(SectionEntry { section, items });
    }
    Profile::new(id, label, sections).expect("generator follows the taxonomy")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    /// Contents of the word-vector file.
    pub embeddings: String,
}

/// Generates LLPs, then FLPs, then CLPs, with ids `llp-00000`, ...
pub fn generate_corpus(spec: &CorpusSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let pipeline = TextPipeline::shipped();
    let bank = VocabularyBank::generate(spec, pipeline);
    let mut rng = stream(spec.seed, 1);
    let mut profiles = Vec::with_capacity(spec.counts.total());
    for label in Label::ALL {
        let prefix = label.as_str().to_ascii_lowercase();
        for i in 0..spec.counts.get(label) {
            profiles.push(generate_profile(
                format!("{prefix}-{i:05}"),
                label,
                spec,
                &bank,
                &mut rng,
            ));
        }
    }
    let mut vocab: BTreeSet<String> = SectionTag::ALL
        .iter()
        .map(|t| t.phrase())
        .chain(SubsectionTag::ALL.iter().map(|t| t.phrase()))
        .flat_map(preprocess_tag)
        .collect();
    for p in &profiles {
        for (_, _, text) in p.texts() {
            vocab.extend(pipeline.preprocess(text));
        }
    }
    let embeddings = write_vectors(&vocab, spec.dim, spec.seed);
    let dataset = Dataset::new(profiles).expect("generated ids are unique");
    Ok(SynthCorpus {
        dataset,
        embeddings,
    })
}

/// A token's vector depends only on the token, the seed and `dim`.
pub fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(token.as_bytes())
        .finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn write_vectors(vocab: &BTreeSet<String>, dim: usize, seed: u64) -> String {
    let mut out = String::new();
    for token in vocab {
        out.push_str(token);
        for x in token_vector(token, dim, seed) {
            write!(out, " {x:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

impl SynthCorpus {
    pub fn write(&self, dataset_path: &Path, vectors_path: &Path) -> Result<(), SynthError> {
        crate::profile::write_dataset(&self.dataset, dataset_path)?;
        std::fs::write(vectors_path, &self.embeddings).map_err(|source| SynthError::Io {
            path: vectors_path.display().to_string(),
            source,
        })
    }
}
