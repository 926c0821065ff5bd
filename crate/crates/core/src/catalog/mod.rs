//! Items, label vocabulary, embeddings and carts.
//!
//! A catalog is built once from a JSON Lines manifest, optionally enriched
//! with embeddings from an `EMB1` or CSV file, and is read-only afterwards.

pub mod vecfile;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use vecfile::{VecFile, EMBEDDING_MAGIC, INDEX_MAGIC};

const FREQUENCIES_KEY: &str = "__frequencies__";

/// One `(id, vector)` entry of an embedding or index file.
pub type Record = (String, Vec<f32>);

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty catalog")]
    EmptyCatalog,
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("label index {index} out of range for vocabulary of {size}")]
    LabelOutOfRange { index: usize, size: usize },
    #[error("invalid frequency {value} for label {label:?}: must be in (0, 1]")]
    InvalidFrequency { label: String, value: f64 },
    #[error("dimension mismatch for {id:?}: expected {expected}, found {found}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("id {0:?} not in catalog")]
    UnknownId(String),
    #[error("item {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("non-finite embedding value for {0:?}")]
    NonFinite(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid cart: {0}")]
    InvalidCart(String),
}

/// Ordered label set with per-label relative frequency over the training items.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
    frequencies: Vec<f64>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new(labels: Vec<String>, frequencies: Vec<f64>) -> Result<Self, CatalogError> {
        if labels.is_empty() {
            return Err(CatalogError::Format("vocabulary needs at least one label".into()));
        }
        if labels.len() != frequencies.len() {
            return Err(CatalogError::Format(format!(
                "{} labels but {} frequencies",
                labels.len(),
                frequencies.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, (label, &f)) in labels.iter().zip(&frequencies).enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(CatalogError::Format(format!("duplicate label {label:?}")));
            }
            if !(f > 0.0 && f <= 1.0) {
                return Err(CatalogError::InvalidFrequency { label: label.clone(), value: f });
            }
        }
        Ok(Self { labels, frequencies, index })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }
}

/// Dense feature vector for one item. All values are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Option<Self> {
        values.iter().all(|v| v.is_finite()).then_some(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogItem {
    pub id: String,
    pub image_ref: String,
    /// Sorted, deduplicated indices into the vocabulary.
    pub labels: Vec<usize>,
    pub split: Option<Split>,
    pub embedding: Option<EmbeddingVector>,
}

/// What to do with embedding records whose id is not in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownIdPolicy {
    #[default]
    Fail,
    Skip,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingLoadReport {
    pub attached: usize,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    vocabulary: LabelVocabulary,
    items: Vec<CatalogItem>,
    by_id: HashMap<String, usize>,
    dim: Option<usize>,
}

#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    image: String,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    split: Option<Split>,
}

#[derive(Serialize)]
struct ManifestLineOut<'a> {
    id: &'a str,
    image: &'a str,
    labels: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

impl Catalog {
    pub fn new(vocabulary: LabelVocabulary, items: Vec<CatalogItem>) -> Result<Self, CatalogError> {
        if items.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        let mut by_id = HashMap::with_capacity(items.len());
        let mut dim = None;
        for (i, item) in items.iter().enumerate() {
            if by_id.insert(item.id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId(item.id.clone()));
            }
            if let Some(&index) = item.labels.iter().find(|&&l| l >= vocabulary.len()) {
                return Err(CatalogError::LabelOutOfRange { index, size: vocabulary.len() });
            }
            if let Some(e) = &item.embedding {
                match dim {
                    None => dim = Some(e.dim()),
                    Some(d) if d != e.dim() => {
                        return Err(CatalogError::DimensionMismatch {
                            id: item.id.clone(),
                            expected: d,
                            found: e.dim(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { vocabulary, items, by_id, dim })
    }

    /// Parses a JSON Lines manifest. Frequencies are label counts over item
    /// counts unless a trailing `{"__frequencies__": {...}}` object overrides them.
    pub fn parse_manifest(text: &str) -> Result<Self, CatalogError> {
        let mut labels: Vec<String> = Vec::new();
        let mut label_index: HashMap<String, usize> = HashMap::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut items = Vec::new();
        let mut seen = HashSet::new();
        let mut overrides: Option<(usize, BTreeMap<String, f64>)> = None;

        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let bad = |message: String| CatalogError::Manifest { line, message };
            if overrides.is_some() {
                return Err(bad("frequencies object must be the last line".into()));
            }
            let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
            if let Some(freqs) = value.get(FREQUENCIES_KEY) {
                let map: BTreeMap<String, f64> =
                    serde_json::from_value(freqs.clone()).map_err(|e| bad(e.to_string()))?;
                overrides = Some((line, map));
                continue;
            }
            let entry: ManifestLine = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            if !seen.insert(entry.id.clone()) {
                return Err(CatalogError::DuplicateId(entry.id));
            }
            let mut item_labels = Vec::with_capacity(entry.labels.len());
            for label in entry.labels {
                let idx = *label_index.entry(label.clone()).or_insert_with(|| {
                    labels.push(label);
                    counts.push(0);
                    labels.len() - 1
                });
                item_labels.push(idx);
            }
            item_labels.sort_unstable();
            item_labels.dedup();
            for &idx in &item_labels {
                counts[idx] += 1;
            }
            items.push(CatalogItem {
                id: entry.id,
                image_ref: entry.image,
                labels: item_labels,
                split: entry.split,
                embedding: None,
            });
        }

        if items.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        if labels.is_empty() {
            return Err(CatalogError::Format("manifest declares no labels".into()));
        }
        let total = items.len() as f64;
        let mut frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
        if let Some((line, map)) = overrides {
            for (label, value) in map {
                let idx = *label_index.get(&label).ok_or_else(|| CatalogError::Manifest {
                    line,
                    message: CatalogError::UnknownLabel(label.clone()).to_string(),
                })?;
                frequencies[idx] = value;
            }
        }
        let vocabulary = LabelVocabulary::new(labels, frequencies)?;
        Self::new(vocabulary, items)
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::parse_manifest(&fs::read_to_string(path)?)
    }

    /// Serializes the catalog as a manifest, always including the frequencies trailer.
    pub fn to_manifest_string(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            let line = ManifestLineOut {
                id: &item.id,
                image: &item.image_ref,
                labels: item.labels.iter().map(|&l| self.vocabulary.labels[l].as_str()).collect(),
                split: item.split,
            };
            out.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
            out.push('\n');
        }
        let freqs: serde_json::Map<String, serde_json::Value> = self
            .vocabulary
            .labels
            .iter()
            .zip(&self.vocabulary.frequencies)
            .map(|(l, &f)| (l.clone(), serde_json::Value::from(f)))
            .collect();
        let trailer = serde_json::json!({ FREQUENCIES_KEY: freqs });
        out.push_str(&trailer.to_string());
        out.push('\n');
        out
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<(), CatalogError> {
        fs::write(path, self.to_manifest_string())?;
        Ok(())
    }

    pub fn vocabulary(&self) -> &LabelVocabulary {
        &self.vocabulary
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Embedding dimension, once any embedding is attached.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, id: &str) -> Option<&CatalogItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn label_names(&self, item: &CatalogItem) -> Vec<&str> {
        item.labels.iter().map(|&l| self.vocabulary.labels[l].as_str()).collect()
    }

    pub fn embedding(&self, id: &str) -> Result<&EmbeddingVector, CatalogError> {
        let item = self.get(id).ok_or_else(|| CatalogError::UnknownId(id.to_owned()))?;
        item.embedding.as_ref().ok_or_else(|| CatalogError::MissingEmbedding(id.to_owned()))
    }

    pub fn attach_embedding(&mut self, id: &str, values: Vec<f32>) -> Result<(), CatalogError> {
        let pos = self.position(id).ok_or_else(|| CatalogError::UnknownId(id.to_owned()))?;
        if let Some(d) = self.dim {
            if d != values.len() {
                return Err(CatalogError::DimensionMismatch { id: id.to_owned(), expected: d, found: values.len() });
            }
        }
        let vector = EmbeddingVector::new(values).ok_or_else(|| CatalogError::NonFinite(id.to_owned()))?;
        self.dim = Some(vector.dim());
        self.items[pos].embedding = Some(vector);
        Ok(())
    }

    /// Attaches embeddings from an `EMB1` file, or from CSV when the magic is absent.
    pub fn load_embeddings(
        &mut self,
        path: impl AsRef<Path>,
        policy: UnknownIdPolicy,
    ) -> Result<EmbeddingLoadReport, CatalogError> {
        let bytes = fs::read(path)?;
        let (dim, records) = if bytes.starts_with(&EMBEDDING_MAGIC) {
            let file = VecFile::decode(&bytes, EMBEDDING_MAGIC)?;
            (file.dim, file.records)
        } else {
            parse_embedding_csv(&bytes)?
        };
        self.attach_records(dim, records, policy)
    }

    fn attach_records(
        &mut self,
        dim: usize,
        records: Vec<(String, Vec<f32>)>,
        policy: UnknownIdPolicy,
    ) -> Result<EmbeddingLoadReport, CatalogError> {
        if let Some(d) = self.dim {
            if d != dim {
                let id = records.first().map(|r| r.0.clone()).unwrap_or_default();
                return Err(CatalogError::DimensionMismatch { id, expected: d, found: dim });
            }
        }
        // Validate everything before mutating so a failed load leaves the catalog untouched.
        let mut seen = HashSet::new();
        let mut report = EmbeddingLoadReport::default();
        let mut accepted = Vec::with_capacity(records.len());
        for (id, values) in records {
            if !seen.insert(id.clone()) {
                return Err(CatalogError::DuplicateId(id));
            }
            if values.len() != dim {
                return Err(CatalogError::DimensionMismatch { id, expected: dim, found: values.len() });
            }
            let Some(pos) = self.position(&id) else {
                match policy {
                    UnknownIdPolicy::Fail => return Err(CatalogError::UnknownId(id)),
                    UnknownIdPolicy::Skip => {
                        report.skipped.push(id);
                        continue;
                    }
                }
            };
            let vector = EmbeddingVector::new(values).ok_or_else(|| CatalogError::NonFinite(id.clone()))?;
            accepted.push((pos, vector));
        }
        report.attached = accepted.len();
        for (pos, vector) in accepted {
            self.items[pos].embedding = Some(vector);
        }
        if report.attached > 0 {
            self.dim = Some(dim);
        }
        Ok(report)
    }

    fn embedding_records(&self) -> Result<(usize, Vec<Record>), CatalogError> {
        let mut records = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let e = item.embedding.as_ref().ok_or_else(|| CatalogError::MissingEmbedding(item.id.clone()))?;
            records.push((item.id.clone(), e.values().to_vec()));
        }
        Ok((self.dim.unwrap_or(0), records))
    }

    /// Writes every item's embedding as `EMB1`, in catalog order.
    pub fn write_embeddings(&self, path: impl AsRef<Path>) -> Result<(), CatalogError> {
        let (dim, records) = self.embedding_records()?;
        let file = VecFile { magic: EMBEDDING_MAGIC, dim, records };
        fs::write(path, file.encode()?)?;
        Ok(())
    }

    pub fn write_embeddings_csv(&self, path: impl AsRef<Path>) -> Result<(), CatalogError> {
        let (dim, records) = self.embedding_records()?;
        let mut w = csv::WriterBuilder::new().flexible(true).from_path(path).map_err(csv_err)?;
        w.write_record(["id".to_string(), format!("dim={dim}")]).map_err(csv_err)?;
        for (id, values) in records {
            let mut row = Vec::with_capacity(dim + 1);
            row.push(id);
            row.extend(values.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> CatalogError {
    CatalogError::Format(e.to_string())
}

/// Parses the CSV fallback: header `id,dim=D`, then rows `id,v1,...,vD`.
pub fn parse_embedding_csv(bytes: &[u8]) -> Result<(usize, Vec<Record>), CatalogError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut rows = reader.records();
    let header = rows.next().ok_or_else(|| CatalogError::Format("empty embedding file".into()))?.map_err(csv_err)?;
    let dim = match (header.get(0), header.get(1)) {
        (Some("id"), Some(d)) => d
            .strip_prefix("dim=")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .ok_or_else(|| CatalogError::Format(format!("bad CSV header field {d:?}")))?,
        _ => return Err(CatalogError::Format("CSV header must be `id,dim=D`".into())),
    };
    let mut records = Vec::new();
    for (n, row) in rows.enumerate() {
        let row = row.map_err(csv_err)?;
        let id = row.get(0).ok_or_else(|| CatalogError::Format(format!("row {}: missing id", n + 2)))?.to_owned();
        let values = row
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CatalogError::Format(format!("row {}: {e}", n + 2)))?;
        if values.len() != dim {
            return Err(CatalogError::DimensionMismatch { id, expected: dim, found: values.len() });
        }
        records.push((id, values));
    }
    Ok((dim, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartEntry {
    pub id: String,
    pub rating: f64,
}

/// A user's rated purchases. Ratings lie in `[1, 5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CartFile", into = "CartFile")]
pub struct Cart {
    user_id: String,
    entries: Vec<CartEntry>,
}

#[derive(Serialize, Deserialize)]
struct CartFile {
    user_id: String,
    items: Vec<CartEntry>,
}

impl TryFrom<CartFile> for Cart {
    type Error = CatalogError;
    fn try_from(f: CartFile) -> Result<Self, Self::Error> {
        Cart::new(f.user_id, f.items)
    }
}

impl From<Cart> for CartFile {
    fn from(c: Cart) -> Self {
        CartFile { user_id: c.user_id, items: c.entries }
    }
}

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

impl Cart {
    pub fn new(user_id: impl Into<String>, entries: Vec<CartEntry>) -> Result<Self, CatalogError> {
        if entries.is_empty() {
            return Err(CatalogError::InvalidCart("cart has no items".into()));
        }
        let mut ids = HashSet::new();
        for e in &entries {
            if !(MIN_RATING..=MAX_RATING).contains(&e.rating) {
                return Err(CatalogError::InvalidCart(format!(
                    "rating {} for {:?} outside [{MIN_RATING}, {MAX_RATING}]",
                    e.rating, e.id
                )));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(CatalogError::InvalidCart(format!("item {:?} listed twice", e.id)));
            }
        }
        Ok(Self { user_id: user_id.into(), entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CatalogError::InvalidCart(e.to_string()))
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn entries(&self) -> &[CartEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}
