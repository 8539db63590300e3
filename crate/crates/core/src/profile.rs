//! Profile data model and the line-delimited JSON dataset format.
//!
//! A dataset file holds one profile per line:
//!
//! ```text
//! {"id":"p1","label":"LLP","sections":[{"section":"experiences","items":[{"role":"engineer"}]}]}
//! ```
//!
//! Section and subsection keys are lowercase snake-case and must belong to the
//! closed tag taxonomy in [`SectionTag`]. Anything under `dynamic` (connection
//! counts, recommendations, activity) is kept verbatim but never featurized.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown label `{label}` at line {line}")]
    UnknownLabel { line: usize, label: String },
    #[error("unknown section `{key}` at line {line}")]
    UnknownSection { line: usize, key: String },
    #[error("unknown subsection `{key}` for section `{section}` at line {line}")]
    UnknownSubsection {
        line: usize,
        section: SectionTag,
        key: String,
    },
    #[error("duplicate section `{section}` at line {line}")]
    DuplicateSection { line: usize, section: SectionTag },
    #[error("duplicate id `{id}` at line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("empty id at line {line}")]
    EmptyId { line: usize },
    #[error("write failed: {0}")]
    Write(#[source] std::io::Error),
}

/// Ground-truth class of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Legitimate profile.
    Llp,
    /// Fake profile written by a human.
    Flp,
    /// Profile generated by a language model.
    Clp,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Llp, Label::Flp, Label::Clp];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Llp => "LLP",
            Label::Flp => "FLP",
            Label::Clp => "CLP",
        }
    }

    /// Binary class used by every classifier: legitimate is 0, both fake kinds are 1.
    pub fn class(self) -> u8 {
        match self {
            Label::Llp => 0,
            Label::Flp | Label::Clp => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LLP" => Ok(Label::Llp),
            "FLP" => Ok(Label::Flp),
            "CLP" => Ok(Label::Clp),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

macro_rules! tag_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $key:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            /// Key used in dataset files.
            pub fn key(self) -> &'static str {
                match self {
                    $($name::$variant => $key),+
                }
            }

            pub fn from_key(key: &str) -> Option<Self> {
                match key {
                    $($key => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.key())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.key())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let key = String::deserialize(d)?;
                $name::from_key(&key).ok_or_else(|| {
                    serde::de::Error::custom(format!("unknown {} `{}`", stringify!($name), key))
                })
            }
        }
    };
}

tag_enum! {
    /// Profile section. Declaration order is the canonical feature order.
    SectionTag {
        Introduction => "introduction",
        Overview => "overview",
        Experiences => "experiences",
        Educations => "educations",
        Licenses => "licenses",
        Volunteers => "volunteers",
        Honors => "honors",
        Projects => "projects",
        Publications => "publications",
        Courses => "courses",
        Skills => "skills",
        Scores => "scores",
        Languages => "languages",
        Organizations => "organizations",
    }
}

tag_enum! {
    /// Subsection name. The same name may appear under several sections
    /// (e.g. `duration` under experiences and educations); which pairs are
    /// legal is given by [`SectionTag::subsections`].
    SubsectionTag {
        Workplace => "workplace",
        Location => "location",
        Description => "description",
        Role => "role",
        Duration => "duration",
        Institute => "institute",
        Degree => "degree",
        Title => "title",
        Company => "company",
        Organization => "organization",
        Award => "award",
        Information => "information",
        Date => "date",
        Journal => "journal",
        Courses => "courses",
        Skills => "skills",
        Test => "test",
        Languages => "languages",
    }
}

impl SectionTag {
    pub const COUNT: usize = 14;

    /// Legal subsections of this section, in display order.
    pub fn subsections(self) -> &'static [SubsectionTag] {
        use SubsectionTag as S;
        match self {
            SectionTag::Introduction => &[S::Workplace, S::Location],
            SectionTag::Overview => &[S::Description],
            SectionTag::Experiences => &[
                S::Workplace,
                S::Role,
                S::Duration,
                S::Location,
                S::Description,
            ],
            SectionTag::Educations => &[S::Institute, S::Degree, S::Duration, S::Description],
            SectionTag::Licenses => &[S::Title, S::Company, S::Description],
            SectionTag::Volunteers => &[S::Role, S::Organization, S::Duration, S::Description],
            SectionTag::Honors => &[S::Award, S::Information, S::Description],
            SectionTag::Projects => &[S::Title, S::Date, S::Description],
            SectionTag::Publications => &[S::Title, S::Journal, S::Description],
            SectionTag::Courses => &[S::Courses],
            SectionTag::Skills => &[S::Skills],
            SectionTag::Scores => &[S::Test, S::Information],
            SectionTag::Languages => &[S::Languages],
            SectionTag::Organizations => &[S::Organization, S::Role],
        }
    }

    pub fn allows(self, sub: SubsectionTag) -> bool {
        self.subsections().contains(&sub)
    }

    /// Position in the canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Phrase fed to the embedding function for this tag.
    pub fn phrase(self) -> &'static str {
        self.key()
    }
}

impl SubsectionTag {
    pub fn phrase(self) -> &'static str {
        self.key()
    }
}

/// One component of a section (a single job, degree, licence, ...).
pub type Item = IndexMap<SubsectionTag, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub section: SectionTag,
    pub items: Vec<Item>,
}

impl SectionEntry {
    pub fn new(section: SectionTag) -> Self {
        Self {
            section,
            items: Vec::new(),
        }
    }
}

/// A labelled profile. Construct through [`Profile::new`] to get taxonomy checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    id: String,
    label: Label,
    sections: Vec<SectionEntry>,
    dynamic: Option<serde_json::Value>,
}

/// Reason a profile was rejected by [`Profile::new`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("empty id")]
    EmptyId,
    #[error("duplicate section `{0}`")]
    DuplicateSection(SectionTag),
    #[error("subsection `{sub}` does not belong to section `{section}`")]
    ForeignSubsection {
        section: SectionTag,
        sub: SubsectionTag,
    },
}

impl Profile {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        sections: Vec<SectionEntry>,
    ) -> Result<Self, ProfileError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ProfileError::EmptyId);
        }
        let mut seen = [false; SectionTag::COUNT];
        for entry in &sections {
            if std::mem::replace(&mut seen[entry.section.index()], true) {
                return Err(ProfileError::DuplicateSection(entry.section));
            }
            for item in &entry.items {
                if let Some(sub) = item.keys().find(|s| !entry.section.allows(**s)) {
                    return Err(ProfileError::ForeignSubsection {
                        section: entry.section,
                        sub: *sub,
                    });
                }
            }
        }
        Ok(Self {
            id,
            label,
            sections,
            dynamic: None,
        })
    }

    pub fn with_dynamic(mut self, dynamic: serde_json::Value) -> Self {
        self.dynamic = Some(dynamic);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn sections(&self) -> &[SectionEntry] {
        &self.sections
    }

    /// Time-dependent fields carried through from the source file.
    pub fn dynamic(&self) -> Option<&serde_json::Value> {
        self.dynamic.as_ref()
    }

    pub fn section(&self, tag: SectionTag) -> Option<&SectionEntry> {
        self.sections.iter().find(|e| e.section == tag)
    }

    /// Number of components in every section; absent sections count zero.
    pub fn component_counts(&self) -> ComponentCounts {
        let mut counts = [0usize; SectionTag::COUNT];
        for entry in &self.sections {
            counts[entry.section.index()] = entry.items.len();
        }
        ComponentCounts(counts)
    }

    /// Copy of this profile with one section's text removed.
    pub fn without_section(&self, tag: SectionTag) -> Profile {
        Profile {
            id: self.id.clone(),
            label: self.label,
            sections: self
                .sections
                .iter()
                .filter(|e| e.section != tag)
                .cloned()
                .collect(),
            dynamic: self.dynamic.clone(),
        }
    }

    /// All text fields in profile order.
    pub fn texts(&self) -> impl Iterator<Item = (SectionTag, SubsectionTag, &str)> {
        self.sections.iter().flat_map(|entry| {
            entry.items.iter().flat_map(move |item| {
                item.iter()
                    .map(move |(sub, text)| (entry.section, *sub, text.as_str()))
            })
        })
    }
}

/// Per-section component counts indexed by [`SectionTag`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ComponentCounts([usize; SectionTag::COUNT]);

impl ComponentCounts {
    pub fn get(&self, tag: SectionTag) -> usize {
        self.0[tag.index()]
    }

    pub fn as_array(&self) -> &[usize; SectionTag::COUNT] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelCounts {
    #[serde(rename = "LLP", alias = "llp")]
    pub llp: usize,
    #[serde(rename = "FLP", alias = "flp")]
    pub flp: usize,
    #[serde(rename = "CLP", alias = "clp")]
    pub clp: usize,
}

impl LabelCounts {
    pub fn new(llp: usize, flp: usize, clp: usize) -> Self {
        Self { llp, flp, clp }
    }

    pub fn total(&self) -> usize {
        self.llp + self.flp + self.clp
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Llp => self.llp,
            Label::Flp => self.flp,
            Label::Clp => self.clp,
        }
    }

    fn bump(&mut self, label: Label) {
        match label {
            Label::Llp => self.llp += 1,
            Label::Flp => self.flp += 1,
            Label::Clp => self.clp += 1,
        }
    }
}

impl fmt::Display for LabelCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LLP:{} FLP:{} CLP:{}", self.llp, self.flp, self.clp)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    profiles: Vec<Profile>,
    counts: LabelCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("duplicate id `{0}`")]
pub struct DuplicateId(pub String);

impl Dataset {
    pub fn new(profiles: Vec<Profile>) -> Result<Self, DuplicateId> {
        let mut ids = HashSet::with_capacity(profiles.len());
        let mut counts = LabelCounts::default();
        for p in &profiles {
            if !ids.insert(p.id.as_str()) {
                return Err(DuplicateId(p.id.clone()));
            }
            counts.bump(p.label);
        }
        Ok(Self { profiles, counts })
    }

    pub fn profiles(&self) -> &[Profile] {
        &self.profiles
    }

    pub fn counts(&self) -> LabelCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Parses line-delimited JSON. Blank lines are skipped; line numbers are 1-based.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, DatasetError> {
        let mut profiles = Vec::new();
        let mut ids = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| DatasetError::Io {
                path: PathBuf::from("<reader>"),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let profile = parse_line(&line, line_no)?;
            if !ids.insert(profile.id.clone()) {
                return Err(DatasetError::DuplicateId {
                    line: line_no,
                    id: profile.id,
                });
            }
            profiles.push(profile);
        }
        // ids were checked above
        Ok(Dataset::new(profiles).expect("unique ids"))
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for p in &self.profiles {
            serde_json::to_writer(&mut writer, &RecordRef::from(p))?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        hex_digest(&buf)
    }
}

/// Outcome of checking every line of a dataset file.
#[derive(Debug, Default)]
pub struct ValidationReport {
    /// Valid records.
    pub profiles: usize,
    pub counts: LabelCounts,
    pub errors: Vec<DatasetError>,
}

impl fmt::Display for ValidationReport {
    /// `3 profiles, LLP:2 FLP:1, 0 errors`; labels with no profiles are omitted.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = Label::ALL
            .iter()
            .filter(|&&l| self.counts.get(l) > 0)
            .map(|&l| format!("{l}:{}", self.counts.get(l)))
            .collect();
        write!(f, "{} profiles", self.profiles)?;
        if !labels.is_empty() {
            write!(f, ", {}", labels.join(" "))?;
        }
        write!(f, ", {} errors", self.errors.len())
    }
}

/// Like [`Dataset::from_reader`] but keeps going after a bad line.
pub fn validate_reader<R: BufRead>(reader: R) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(source) => {
                report.errors.push(DatasetError::Io {
                    path: PathBuf::from("<reader>"),
                    source,
                });
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, line_no) {
            Ok(p) if !ids.insert(p.id.clone()) => report.errors.push(DatasetError::DuplicateId {
                line: line_no,
                id: p.id,
            }),
            Ok(p) => {
                report.profiles += 1;
                report.counts.bump(p.label);
            }
            Err(e) => report.errors.push(e),
        }
    }
    report
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Dataset::from_reader(BufReader::new(file)).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = File::create(path.as_ref()).map_err(DatasetError::Write)?;
    dataset
        .write_to(BufWriter::new(file))
        .map_err(DatasetError::Write)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    label: String,
    #[serde(default)]
    sections: Vec<RawSection>,
    #[serde(default)]
    dynamic: Option<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSection {
    section: String,
    #[serde(default)]
    items: Vec<IndexMap<String, String>>,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    id: &'a str,
    label: &'a str,
    sections: &'a [SectionEntry],
    #[serde(skip_serializing_if = "Option::is_none")]
    dynamic: Option<&'a serde_json::Value>,
}

impl<'a> From<&'a Profile> for RecordRef<'a> {
    fn from(p: &'a Profile) -> Self {
        RecordRef {
            id: &p.id,
            label: p.label.as_str(),
            sections: &p.sections,
            dynamic: p.dynamic.as_ref(),
        }
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<Profile, DatasetError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|source| DatasetError::Malformed {
        line: line_no,
        source,
    })?;
    let label =
        raw.label
            .parse::<Label>()
            .map_err(|UnknownLabel(label)| DatasetError::UnknownLabel {
                line: line_no,
                label,
            })?;
    if raw.id.is_empty() {
        return Err(DatasetError::EmptyId { line: line_no });
    }
    let mut sections = Vec::with_capacity(raw.sections.len());
    for rs in raw.sections {
        let section =
            SectionTag::from_key(&rs.section).ok_or_else(|| DatasetError::UnknownSection {
                line: line_no,
                key: rs.section.clone(),
            })?;
        let mut entry = SectionEntry::new(section);
        for raw_item in rs.items {
            let mut item = Item::with_capacity(raw_item.len());
            for (key, text) in raw_item {
                let sub = SubsectionTag::from_key(&key)
                    .filter(|s| section.allows(*s))
                    .ok_or_else(|| DatasetError::UnknownSubsection {
                        line: line_no,
                        section,
                        key: key.clone(),
                    })?;
                item.insert(sub, text);
            }
            entry.items.push(item);
        }
        sections.push(entry);
    }
    let profile = Profile::new(raw.id, label, sections).map_err(|e| match e {
        ProfileError::DuplicateSection(section) => DatasetError::DuplicateSection {
            line: line_no,
            section,
        },
        ProfileError::EmptyId => DatasetError::EmptyId { line: line_no },
        ProfileError::ForeignSubsection { section, sub } => DatasetError::UnknownSubsection {
            line: line_no,
            section,
            key: sub.key().to_string(),
        },
    })?;
    Ok(match raw.dynamic {
        Some(d) => profile.with_dynamic(d),
        None => profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Dataset, DatasetError> {
        Dataset::from_reader(text.as_bytes())
    }

    fn item(pairs: &[(SubsectionTag, &str)]) -> Item {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn minimal_record() {
        let ds = parse(r#"{"id":"p1","label":"LLP","sections":[]}"#).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.profiles()[0].sections().is_empty());
        assert_eq!(ds.counts().llp, 1);
    }

    #[test]
    fn unknown_label_cites_line() {
        let text = "{\"id\":\"p1\",\"label\":\"LLP\"}\n{\"id\":\"p2\",\"label\":\"SPAM\"}\n";
        let err = parse(text).unwrap_err();
        assert!(matches!(err, DatasetError::UnknownLabel { line: 2, .. }));
        assert!(err.to_string().contains("unknown label"));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn validation_collects_every_error() {
        let ok = "{\"id\":\"a\",\"label\":\"LLP\"}\n{\"id\":\"b\",\"label\":\"LLP\"}\n{\"id\":\"c\",\"label\":\"FLP\"}\n";
        let report = validate_reader(ok.as_bytes());
        assert_eq!(report.to_string(), "3 profiles, LLP:2 FLP:1, 0 errors");

        let bad = "{\"id\":\"a\",\"label\":\"LLP\"}\n{\"id\":\"b\",\"label\":\"SPAM\"}\n{\"id\":\"a\",\"label\":\"FLP\"}\n{x\n";
        let report = validate_reader(bad.as_bytes());
        assert_eq!(report.profiles, 1);
        let lines: Vec<String> = report.errors.iter().map(|e| e.to_string()).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("line 2"));
        assert!(lines[1].contains("duplicate id `a` at line 3"));
        assert!(lines[2].contains("line 4"));
    }

    #[test]
    fn malformed_line_cites_line() {
        let err = parse("{\"id\":\"p1\",\"label\":\"LLP\"}\n{oops\n").unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 2, .. }));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = "{\"id\":\"p1\",\"label\":\"LLP\"}\n{\"id\":\"p1\",\"label\":\"FLP\"}\n";
        assert!(matches!(
            parse(text).unwrap_err(),
            DatasetError::DuplicateId { line: 2, .. }
        ));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err =
            parse(r#"{"id":"p","label":"LLP","sections":[{"section":"hobbies","items":[]}]}"#)
                .unwrap_err();
        assert!(err.to_string().contains("hobbies"));

        // `degree` exists, but not under experiences
        let err = parse(
            r#"{"id":"p","label":"LLP","sections":[{"section":"experiences","items":[{"degree":"x"}]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::UnknownSubsection { .. }));
        assert!(err.to_string().contains("degree"));
    }

    #[test]
    fn duplicate_section_rejected() {
        let err = parse(
            r#"{"id":"p","label":"LLP","sections":[{"section":"skills","items":[]},{"section":"skills","items":[]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateSection { .. }));
    }

    #[test]
    fn dynamic_fields_are_kept_but_opaque() {
        let ds = parse(
            r#"{"id":"p","label":"CLP","sections":[],"dynamic":{"connections":500,"recommendations":["x"]}}"#,
        )
        .unwrap();
        let dynamic = ds.profiles()[0].dynamic().unwrap();
        assert_eq!(dynamic["connections"], 500);
    }

    #[test]
    fn full_record_round_trip() {
        let line = r#"{"id":"p9","label":"FLP","sections":[{"section":"overview","items":[{"description":"Hi there"}]},{"section":"experiences","items":[{"workplace":"Acme","role":"Engineer","duration":"2019 - 2021"},{"role":"Intern","description":"Made tea"}]}],"dynamic":{"followers":3}}"#;
        let ds = parse(line).unwrap();
        let mut out = Vec::new();
        ds.write_to(&mut out).unwrap();
        let original: serde_json::Value = serde_json::from_str(line).unwrap();
        let written: serde_json::Value =
            serde_json::from_slice(out.strip_suffix(b"\n").unwrap()).unwrap();
        assert_eq!(original, written);
        let exp = ds.profiles()[0].section(SectionTag::Experiences).unwrap();
        assert_eq!(exp.items.len(), 2);
        assert_eq!(exp.items[1][&SubsectionTag::Description], "Made tea");
    }

    #[test]
    fn component_counts_cases() {
        let empty = Profile::new("e", Label::Llp, vec![]).unwrap();
        assert!(empty.component_counts().as_array().iter().all(|c| *c == 0));

        let mut exp = SectionEntry::new(SectionTag::Experiences);
        exp.items = vec![item(&[(SubsectionTag::Role, "a")]); 3];
        let p = Profile::new("x", Label::Flp, vec![exp]).unwrap();
        assert_eq!(p.component_counts().get(SectionTag::Experiences), 3);

        let mut edu = SectionEntry::new(SectionTag::Educations);
        edu.items = vec![
            item(&[(SubsectionTag::Degree, "bsc")]),
            item(&[(SubsectionTag::Institute, "uni")]),
        ];
        let mut skills = SectionEntry::new(SectionTag::Skills);
        skills.items = vec![item(&[(SubsectionTag::Skills, "rust")])];
        let p = Profile::new("y", Label::Llp, vec![edu, skills]).unwrap();
        let counts = p.component_counts();
        for tag in SectionTag::ALL {
            let expected = match tag {
                SectionTag::Educations => 2,
                SectionTag::Skills => 1,
                _ => 0,
            };
            assert_eq!(counts.get(*tag), expected, "{tag}");
        }
    }

    #[test]
    fn profile_new_checks_taxonomy() {
        let mut entry = SectionEntry::new(SectionTag::Skills);
        entry.items = vec![item(&[(SubsectionTag::Role, "x")])];
        assert!(matches!(
            Profile::new("p", Label::Llp, vec![entry]),
            Err(ProfileError::ForeignSubsection { .. })
        ));
        assert_eq!(
            Profile::new("", Label::Llp, vec![]).unwrap_err(),
            ProfileError::EmptyId
        );
    }

    #[test]
    fn every_subsection_has_a_home() {
        for sub in SubsectionTag::ALL {
            assert!(SectionTag::ALL.iter().any(|s| s.allows(*sub)), "{sub}");
        }
    }

    fn arb_profile(idx: usize) -> impl Strategy<Value = Profile> {
        let sections = proptest::sample::subsequence(SectionTag::ALL.to_vec(), 0..=5);
        (
            sections,
            proptest::collection::vec("[ -~]{0,12}", 1..20),
            prop_oneof![Just(Label::Llp), Just(Label::Flp), Just(Label::Clp)],
        )
            .prop_map(move |(tags, words, label)| {
                let mut w = words.into_iter().cycle();
                let entries = tags
                    .into_iter()
                    .map(|tag| {
                        let mut e = SectionEntry::new(tag);
                        for _ in 0..2 {
                            e.items.push(
                                tag.subsections()
                                    .iter()
                                    .map(|s| (*s, w.next().unwrap()))
                                    .collect(),
                            );
                        }
                        e
                    })
                    .collect();
                Profile::new(format!("p{idx}"), label, entries).unwrap()
            })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(a in arb_profile(0), b in arb_profile(1)) {
            let ds = Dataset::new(vec![a, b]).unwrap();
            let mut buf = Vec::new();
            ds.write_to(&mut buf).unwrap();
            let back = Dataset::from_reader(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &ds);
            for p in back.profiles() {
                let items: usize = p.sections().iter().map(|s| s.items.len()).sum();
                prop_assert_eq!(p.component_counts().total(), items);
            }
        }
    }
}
