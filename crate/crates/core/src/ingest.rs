//! Dataset and prediction files.
//!
//! TSV files carry a header row and no quoting; a field may not contain a
//! tab. JSONL files carry one object per line with the same keys. Both are
//! UTF-8 without BOM.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::fsutil::write_atomic;
use crate::labels::{normalize_label, Emotion, LabelSet, LabeledItem, Language, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Tsv,
    Jsonl,
}

impl DataFormat {
    /// `.jsonl`, `.ndjson` and `.json` are JSONL; anything else is TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => DataFormat::Jsonl,
            _ => DataFormat::Tsv,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(DataFormat::Tsv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(format!("unknown format {other:?} (expected tsv or jsonl)")),
        }
    }
}

/// An ordered collection of items with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub split: String,
    items: Vec<LabeledItem>,
}

impl Dataset {
    pub fn new(split: impl Into<String>, items: Vec<LabeledItem>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for item in &items {
            if item.text.trim().is_empty() {
                return Err(IngestError::Invalid(format!("item {:?} has empty text", item.id)));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(IngestError::Invalid(format!("duplicate id {:?}", item.id)));
            }
        }
        Ok(Self {
            split: split.into(),
            items,
        })
    }

    pub fn items(&self) -> &[LabeledItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledItem> {
        self.items.iter()
    }

    /// Keeps only the items matching `keep`, preserving order.
    pub fn filtered(&self, keep: impl Fn(&LabeledItem) -> bool) -> Dataset {
        Dataset {
            split: self.split.clone(),
            items: self.items.iter().filter(|i| keep(i)).cloned().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a LabeledItem;
    type IntoIter = std::slice::Iter<'a, LabeledItem>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Id-keyed labels from one source, ordered by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap<L: LabelSet>(BTreeMap<String, L>);

/// One model's emotion assignments.
pub type PredictionSet = LabelMap<Emotion>;
/// One model's yes/no answers for a single class.
pub type VerdictSet = LabelMap<Verdict>;

impl<L: LabelSet> Default for LabelMap<L> {
    fn default() -> Self {
        Self(BTreeMap::new())
    }
}

impl<L: LabelSet> LabelMap<L> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &str) -> Option<L> {
        self.0.get(id).copied()
    }

    pub fn insert(&mut self, id: impl Into<String>, label: L) -> Option<L> {
        self.0.insert(id.into(), label)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, L)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }
}

impl<L: LabelSet, S: Into<String>> FromIterator<(S, L)> for LabelMap<L> {
    fn from_iter<T: IntoIterator<Item = (S, L)>>(iter: T) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// Ordered first and second choices per item.
pub type RankedSet = BTreeMap<String, (Emotion, Emotion)>;

/// One parsed row, keyed by column name. `None` marks an empty cell or JSON null.
struct Row {
    line: u64,
    fields: BTreeMap<String, Option<String>>,
}

impl Row {
    fn optional(&self, key: &str) -> Option<&str> {
        self.fields.get(key).and_then(|v| v.as_deref())
    }

    fn required(&self, key: &str, path: &Path) -> Result<&str, IngestError> {
        self.optional(key).ok_or_else(|| IngestError::MalformedRow {
            path: path.to_path_buf(),
            line: self.line,
            reason: format!("missing required field `{key}`"),
        })
    }

    fn label<L: LabelSet>(&self, key: &str, path: &Path) -> Result<Option<L>, IngestError> {
        self.optional(key)
            .map(|raw| {
                normalize_label::<L>(raw).map_err(|label| IngestError::UnknownLabel {
                    path: path.to_path_buf(),
                    line: self.line,
                    label,
                })
            })
            .transpose()
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if text.starts_with('\u{feff}') {
        return Err(IngestError::Format {
            path: path.to_path_buf(),
            reason: "UTF-8 byte-order mark is not allowed".into(),
        });
    }
    Ok(text)
}

fn read_rows(path: &Path, format: DataFormat) -> Result<Vec<Row>, IngestError> {
    let text = read_text(path)?;
    match format {
        DataFormat::Tsv => parse_tsv(&text, path),
        DataFormat::Jsonl => parse_jsonl(&text, path),
    }
}

fn parse_tsv(text: &str, path: &Path) -> Result<Vec<Row>, IngestError> {
    let mut lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l))
        .filter(|(_, l)| !l.is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(IngestError::Format {
            path: path.to_path_buf(),
            reason: "missing header row".into(),
        });
    };
    let columns: Vec<String> = header.split('\t').map(|c| c.trim().to_string()).collect();
    lines
        .map(|(line, raw)| {
            let cells: Vec<&str> = raw.split('\t').collect();
            if cells.len() != columns.len() {
                return Err(IngestError::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    reason: format!(
                        "expected {} tab-separated fields, found {} (embedded tabs are not allowed in TSV)",
                        columns.len(),
                        cells.len()
                    ),
                });
            }
            let fields = columns
                .iter()
                .zip(cells)
                .map(|(c, v)| (c.clone(), (!v.is_empty()).then(|| v.to_string())))
                .collect();
            Ok(Row { line, fields })
        })
        .collect()
}

fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<Row>, IngestError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(line, raw)| {
            let malformed = |reason: String| IngestError::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason,
            };
            let value: serde_json::Value =
                serde_json::from_str(raw).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
            let object = value
                .as_object()
                .ok_or_else(|| malformed("expected a JSON object".into()))?;
            let mut fields = BTreeMap::new();
            for (k, v) in object {
                let cell = match v {
                    serde_json::Value::Null => None,
                    serde_json::Value::String(s) if s.is_empty() => None,
                    serde_json::Value::String(s) => Some(s.clone()),
                    other => Some(other.to_string()),
                };
                fields.insert(k.clone(), cell);
            }
            Ok(Row { line, fields })
        })
        .collect()
}

/// Loads a labelled (or unlabelled) dataset, preserving file order.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset, IngestError> {
    let rows = read_rows(path, format)?;
    let mut seen = HashSet::new();
    let mut items = Vec::with_capacity(rows.len());
    for row in rows {
        let id = row.required("id", path)?.to_string();
        let text = row.required("text", path)?.to_string();
        if text.trim().is_empty() {
            return Err(IngestError::MalformedRow {
                path: path.to_path_buf(),
                line: row.line,
                reason: "text is blank".into(),
            });
        }
        let language = row.label::<Language>("language", path)?;
        let gold = row.label::<Emotion>("label", path)?;
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId {
                path: path.to_path_buf(),
                line: row.line,
                id,
            });
        }
        items.push(LabeledItem {
            id,
            text,
            language,
            gold,
        });
    }
    let split = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("custom")
        .to_string();
    Ok(Dataset { split, items })
}

/// Loads an `id`/`label` file into a [`LabelMap`] over any closed label set.
pub fn load_labels<L: LabelSet>(path: &Path, format: DataFormat) -> Result<LabelMap<L>, IngestError> {
    let mut out = BTreeMap::new();
    for row in read_rows(path, format)? {
        let id = row.required("id", path)?.to_string();
        row.required("label", path)?;
        let label = row.label::<L>("label", path)?.expect("label presence checked");
        if out.insert(id.clone(), label).is_some() {
            return Err(IngestError::DuplicateId {
                path: path.to_path_buf(),
                line: row.line,
                id,
            });
        }
    }
    Ok(LabelMap(out))
}

/// Loads one model's emotion predictions.
pub fn load_predictions(path: &Path, format: DataFormat) -> Result<PredictionSet, IngestError> {
    load_labels::<Emotion>(path, format)
}

/// Loads top-2 predictions (`id`, `label`, `label2`).
pub fn load_ranked(path: &Path, format: DataFormat) -> Result<RankedSet, IngestError> {
    let mut out = RankedSet::new();
    for row in read_rows(path, format)? {
        let id = row.required("id", path)?.to_string();
        row.required("label", path)?;
        row.required("label2", path)?;
        let first = row.label::<Emotion>("label", path)?.expect("checked");
        let second = row.label::<Emotion>("label2", path)?.expect("checked");
        if first == second {
            return Err(IngestError::MalformedRow {
                path: path.to_path_buf(),
                line: row.line,
                reason: format!("first and second choice are both {first}"),
            });
        }
        if out.insert(id.clone(), (first, second)).is_some() {
            return Err(IngestError::DuplicateId {
                path: path.to_path_buf(),
                line: row.line,
                id,
            });
        }
    }
    Ok(out)
}

/// Renders an `id\tlabel` TSV, rows sorted by id.
pub fn labels_to_tsv<L: LabelSet>(labels: &LabelMap<L>) -> String {
    let mut out = String::from("id\tlabel\n");
    for (id, label) in labels.iter() {
        let _ = writeln!(out, "{id}\t{}", label.as_str());
    }
    out
}

/// One `{"id", "label"}` object per line, sorted by id.
pub fn labels_to_jsonl<L: LabelSet>(labels: &LabelMap<L>) -> String {
    let mut out = String::new();
    for (id, label) in labels.iter() {
        let row = serde_json::json!({ "id": id, "label": label.as_str() });
        let _ = writeln!(out, "{row}");
    }
    out
}

/// Writes predictions as `id\tlabel` TSV, sorted by id, atomically.
pub fn write_predictions<L: LabelSet>(preds: &LabelMap<L>, path: &Path) -> Result<(), IngestError> {
    write_labels(preds, path, DataFormat::Tsv)
}

/// Writes labels in `format`, sorted by id, atomically.
pub fn write_labels<L: LabelSet>(labels: &LabelMap<L>, path: &Path, format: DataFormat) -> Result<(), IngestError> {
    let body = match format {
        DataFormat::Tsv => labels_to_tsv(labels),
        DataFormat::Jsonl => labels_to_jsonl(labels),
    };
    write_atomic(path, body.as_bytes()).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Serializes a dataset as JSONL in dataset order; JSONL has no trouble with tabs or newlines in text.
pub fn dataset_to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for item in ds {
        let _ = writeln!(out, "{}", serde_json::to_string(item).expect("item serializes"));
    }
    out
}

/// Counts per class and per language; items lacking a tag are tallied as unlabeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub by_class: BTreeMap<Emotion, usize>,
    pub by_language: BTreeMap<Language, usize>,
    pub total: usize,
    pub unlabeled: Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Unlabeled {
    pub class: usize,
    pub language: usize,
}

pub fn distribution_report(ds: &Dataset) -> DistributionReport {
    let mut by_class: BTreeMap<Emotion, usize> = Emotion::ALL.iter().map(|e| (*e, 0)).collect();
    let mut by_language: BTreeMap<Language, usize> = Language::ALL.iter().map(|l| (*l, 0)).collect();
    let mut unlabeled = Unlabeled::default();
    for item in ds {
        match item.gold {
            Some(e) => *by_class.entry(e).or_default() += 1,
            None => unlabeled.class += 1,
        }
        match item.language {
            Some(l) => *by_language.entry(l).or_default() += 1,
            None => unlabeled.language += 1,
        }
    }
    DistributionReport {
        by_class,
        by_language,
        total: ds.len(),
        unlabeled,
    }
}

impl fmt::Display for DistributionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8}", "Class", "Count")?;
        for (class, n) in &self.by_class {
            writeln!(f, "{:<10} {:>8}", class.as_str(), n)?;
        }
        if self.unlabeled.class > 0 {
            writeln!(f, "{:<10} {:>8}", "(none)", self.unlabeled.class)?;
        }
        writeln!(f, "{:<10} {:>8}", "Total", self.total)?;
        writeln!(f)?;
        writeln!(f, "{:<10} {:>8}", "Language", "Count")?;
        for (lang, n) in &self.by_language {
            writeln!(f, "{:<10} {:>8}", lang.as_str(), n)?;
        }
        if self.unlabeled.language > 0 {
            writeln!(f, "{:<10} {:>8}", "(none)", self.unlabeled.language)?;
        }
        writeln!(f, "{:<10} {:>8}", "Total", self.total)
    }
}

/// Path of a sibling file sharing `path`'s stem, e.g. `out.tsv` -> `out.log.jsonl`.
pub fn sibling_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}
