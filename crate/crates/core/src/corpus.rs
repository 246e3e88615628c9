//! Labelled splits for the two binary subtasks: loading, validation,
//! class/genre distributions and submission-file IO.
//!
//! Input splits are line-delimited JSON records carrying `id`, `text` and
//! `label`, plus an optional `genre`. Any other fields are kept verbatim in
//! [`LabeledSample::extra`] so a split can be written back unchanged.

pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("unknown label {value:?}")]
    UnknownLabel { value: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("sample {id:?} has empty text")]
    EmptyText { id: String },
    #[error("file contains no records")]
    EmptyFile,
    #[error("split contains no samples")]
    EmptySplit,
    #[error("no sample carries a genre annotation")]
    NoGenreAnnotations,
    #[error("{ids} ids but {labels} labels")]
    LengthMismatch { ids: usize, labels: usize },
    #[error("value {0:?} cannot be written to a two-column prediction file")]
    UnwritableValue(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Shared-task subtask. Both are binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    /// Persuasion-technique detection over tweets and news paragraphs.
    #[serde(rename = "1A")]
    Persuasion1A,
    /// Disinformation detection over tweets.
    #[serde(rename = "2A")]
    Disinfo2A,
}

impl TaskId {
    pub const ALL: [TaskId; 2] = [TaskId::Persuasion1A, TaskId::Disinfo2A];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Persuasion1A => "1A",
            TaskId::Disinfo2A => "2A",
        }
    }

    /// Default label vocabulary. Class 0 is the "positive" tag (technique
    /// present / disinformative).
    pub fn vocab(self) -> LabelVocab {
        match self {
            TaskId::Persuasion1A => LabelVocab::new(["prop", "non-prop"])
                .with_aliases(0, ["true", "yes", "نعم"])
                .with_aliases(1, ["false", "no", "لا"]),
            TaskId::Disinfo2A => LabelVocab::new(["disinfo", "no-disinfo"])
                .with_aliases(0, ["true", "yes", "نعم"])
                .with_aliases(1, ["false", "no", "لا"]),
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1A" => Ok(TaskId::Persuasion1A),
            "2A" => Ok(TaskId::Disinfo2A),
            other => Err(format!("unknown task {other:?} (expected 1A or 2A)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Paragraph,
    Tweet,
}

/// Ordered class names plus lower-case aliases that resolve to a class.
///
/// Class order fixes the index used by confusion matrices, class weights and
/// model logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    classes: Vec<String>,
    #[serde(default)]
    aliases: Vec<(String, usize)>,
}

impl LabelVocab {
    pub fn new<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LabelVocab { classes: classes.into_iter().map(Into::into).collect(), aliases: Vec::new() }
    }

    /// Registers aliases for class `index`. Panics if the index is out of range.
    pub fn with_aliases<I, S>(mut self, index: usize, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        assert!(index < self.classes.len(), "alias target {index} out of range");
        for alias in aliases {
            self.aliases.push((alias.into().to_lowercase(), index));
        }
        self
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn aliases(&self) -> &[(String, usize)] {
        &self.aliases
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    /// Exact class-name lookup.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Resolves a class name or alias, ignoring case and surrounding space.
    pub fn resolve(&self, raw: &str) -> Option<usize> {
        let needle = raw.trim().to_lowercase();
        self.classes
            .iter()
            .position(|c| c.to_lowercase() == needle)
            .or_else(|| self.aliases.iter().find(|(a, _)| *a == needle).map(|&(_, i)| i))
    }

    /// Same classes in a different order (used to check order invariance).
    pub fn reordered(&self, order: &[usize]) -> Self {
        let classes = order.iter().map(|&i| self.classes[i].clone()).collect();
        let aliases = self
            .aliases
            .iter()
            .map(|(a, i)| (a.clone(), order.iter().position(|o| o == i).expect("order is a permutation")))
            .collect();
        LabelVocab { classes, aliases }
    }
}

/// One text unit: a tweet or a news paragraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub text: String,
    /// Canonical class name from the split's vocabulary.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<Genre>,
    /// Fields the loader does not interpret, kept for write-back.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        LabeledSample {
            id: id.into(),
            text: text.into(),
            label: label.into(),
            genre: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_genre(mut self, genre: Genre) -> Self {
        self.genre = Some(genre);
        self
    }
}

/// A validated train, dev or test split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    split_name: SplitName,
    task_id: TaskId,
    vocab: LabelVocab,
    samples: Vec<LabeledSample>,
}

impl DatasetSplit {
    /// Validates and canonicalises `samples`: ids unique, text nonempty after
    /// trimming, every label resolvable in `vocab`.
    pub fn new(
        split_name: SplitName,
        task_id: TaskId,
        vocab: LabelVocab,
        mut samples: Vec<LabeledSample>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(CorpusError::EmptySplit);
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for sample in &mut samples {
            if !seen.insert(sample.id.clone()) {
                return Err(CorpusError::DuplicateId(sample.id.clone()));
            }
            if sample.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { id: sample.id.clone() });
            }
            let index = vocab
                .resolve(&sample.label)
                .ok_or_else(|| CorpusError::UnknownLabel { value: sample.label.clone() })?;
            sample.label = vocab.name(index).to_string();
        }
        Ok(DatasetSplit { split_name, task_id, vocab, samples })
    }

    pub fn split_name(&self) -> SplitName {
        self.split_name
    }

    pub fn task_id(&self) -> TaskId {
        self.task_id
    }

    pub fn vocab(&self) -> &LabelVocab {
        &self.vocab
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Class index of every sample, in sample order.
    pub fn label_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| self.vocab.index_of(&s.label).expect("labels canonicalised on construction"))
            .collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.label.as_str()).collect()
    }

    /// Index of the most frequent class; ties go to the lower index.
    pub fn majority_class(&self) -> usize {
        let counts = self.class_counts();
        let mut best = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = i;
            }
        }
        best
    }

    fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.vocab.len()];
        for i in self.label_indices() {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<Value>,
    text: Option<String>,
    label: Option<Value>,
    #[serde(default)]
    genre: Option<Genre>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

fn scalar_to_string(value: Value) -> String {
    match value {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Loads a split with the task's default vocabulary.
pub fn load_split(path: impl AsRef<Path>, task_id: TaskId, split_name: SplitName) -> Result<DatasetSplit> {
    load_split_with_vocab(path, task_id, split_name, task_id.vocab())
}

pub fn load_split_with_vocab(
    path: impl AsRef<Path>,
    task_id: TaskId,
    split_name: SplitName,
    vocab: LabelVocab,
) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line = line.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let id = raw.id.map(scalar_to_string).ok_or(CorpusError::MissingField { line: line_no, field: "id" })?;
        let text = raw.text.ok_or(CorpusError::MissingField { line: line_no, field: "text" })?;
        let label = raw
            .label
            .map(scalar_to_string)
            .ok_or(CorpusError::MissingField { line: line_no, field: "label" })?;
        samples.push(LabeledSample { id, text, label, genre: raw.genre, extra: raw.extra });
    }
    if samples.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    DatasetSplit::new(split_name, task_id, vocab, samples)
}

/// Writes a split in the same line-delimited format `load_split` reads.
pub fn write_split(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for sample in split.samples() {
        let line = serde_json::to_string(sample).expect("samples serialise");
        writeln!(out, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// Per-class counts in vocabulary order. Ratios are derived on demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    counts: Vec<(String, u64)>,
}

impl ClassDistribution {
    pub fn from_counts(counts: Vec<(String, u64)>) -> Self {
        ClassDistribution { counts }
    }

    pub fn counts(&self) -> &[(String, u64)] {
        &self.counts
    }

    pub fn count(&self, label: &str) -> Option<u64> {
        self.counts.iter().find(|(l, _)| l == label).map(|&(_, c)| c)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&(_, c)| c).sum()
    }

    pub fn ratio(&self, label: &str) -> Option<f64> {
        let total = self.total();
        self.count(label).map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
    }

    pub fn ratios(&self) -> Vec<(String, f64)> {
        let total = self.total() as f64;
        self.counts
            .iter()
            .map(|(l, c)| (l.clone(), if total == 0.0 { 0.0 } else { *c as f64 / total }))
            .collect()
    }

    /// Adds another distribution with the same class order.
    pub fn merged(&self, other: &ClassDistribution) -> ClassDistribution {
        let counts = self
            .counts
            .iter()
            .map(|(l, c)| (l.clone(), c + other.count(l).unwrap_or(0)))
            .collect();
        ClassDistribution { counts }
    }
}

pub fn class_distribution(split: &DatasetSplit) -> Result<ClassDistribution> {
    if split.is_empty() {
        return Err(CorpusError::EmptySplit);
    }
    let counts = split
        .vocab()
        .classes()
        .iter()
        .cloned()
        .zip(split.class_counts())
        .collect();
    Ok(ClassDistribution { counts })
}

/// Fraction of each genre among genre-annotated samples. Genres that do not
/// occur are omitted.
pub fn genre_distribution(split: &DatasetSplit) -> Result<BTreeMap<Genre, f64>> {
    let mut counts: BTreeMap<Genre, u64> = BTreeMap::new();
    for genre in split.samples().iter().filter_map(|s| s.genre) {
        *counts.entry(genre).or_default() += 1;
    }
    let annotated: u64 = counts.values().sum();
    if annotated == 0 {
        return Err(CorpusError::NoGenreAnnotations);
    }
    Ok(counts.into_iter().map(|(g, c)| (g, c as f64 / annotated as f64)).collect())
}

/// Writes a headerless `id<TAB>label` submission file in input order.
pub fn write_predictions<I, L>(ids: &[I], labels: &[L], path: impl AsRef<Path>) -> Result<()>
where
    I: AsRef<str>,
    L: AsRef<str>,
{
    let path = path.as_ref();
    if ids.len() != labels.len() {
        return Err(CorpusError::LengthMismatch { ids: ids.len(), labels: labels.len() });
    }
    for value in ids.iter().map(AsRef::as_ref).chain(labels.iter().map(AsRef::as_ref)) {
        if value.is_empty() || value.contains(['\t', '\n', '\r']) {
            return Err(CorpusError::UnwritableValue(value.to_string()));
        }
    }
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, label) in ids.iter().zip(labels) {
        writeln!(out, "{}\t{}", id.as_ref(), label.as_ref()).map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// Reads `(id, label)` pairs from a prediction file.
///
/// Accepts the two-column tab-separated format written by
/// [`write_predictions`] as well as line-delimited JSON records with `id` and
/// `label` fields, so a gold split file can be scored directly.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line = line.trim_start_matches('\u{feff}').trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.trim_start().starts_with('{') {
            let raw: RawRecord = serde_json::from_str(line)
                .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
            let id = raw.id.map(scalar_to_string).ok_or(CorpusError::MissingField { line: line_no, field: "id" })?;
            let label = raw
                .label
                .map(scalar_to_string)
                .ok_or(CorpusError::MissingField { line: line_no, field: "label" })?;
            pairs.push((id, label));
        } else {
            let mut cols = line.split('\t');
            let id = cols.next().filter(|s| !s.is_empty());
            let label = cols.next().filter(|s| !s.is_empty());
            match (id, label, cols.next()) {
                (Some(id), Some(label), None) => pairs.push((id.to_string(), label.to_string())),
                (Some(_), None, _) => return Err(CorpusError::MissingField { line: line_no, field: "label" }),
                _ => {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        message: "expected exactly two tab-separated columns".into(),
                    })
                }
            }
        }
    }
    Ok(pairs)
}
