//! Cosine similarity and exact top-k search.
//!
//! Rows are L2-normalized at build time and stored contiguously, so a query
//! is one normalization followed by a dot-product scan. Results are totally
//! ordered by score descending, then id ascending.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, VecFile, INDEX_MAGIC};

/// Tolerance on the unit norm of stored rows.
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("k must be positive")]
    ZeroK,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("zero vector{}", .0.as_ref().map(|id| format!(" for item {id:?}")).unwrap_or_default())]
    ZeroVector(Option<String>),
    #[error("item {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("row {id:?} has norm {norm}, expected 1")]
    NotNormalized { id: String, norm: f64 },
    #[error("non-finite value in vector")]
    NonFinite,
    #[error(transparent)]
    File(#[from] CatalogError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Returns `v / |v|` in 32-bit, or `None` for zero or non-finite input.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let n = l2_norm(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|&x| (f64::from(x) / n) as f32).collect())
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a·b / (|a||b|)` clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::Dimension { expected: a.len(), found: b.len() });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector(None));
    }
    let d: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: String,
    pub score: f64,
}

/// Ranked results, ordered by score descending then id ascending.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecommendationList {
    pub entries: Vec<Recommendation>,
}

impl RecommendationList {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Candidate in the bounded heap. `Ord` puts the worst candidate on top.
#[derive(Debug)]
struct Candidate {
    score: f32,
    row: usize,
}

/// Immutable N×D matrix of unit rows with aligned ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl VectorIndex {
    /// Normalizes and stores the vectors in the given order.
    pub fn from_vectors<I, S, V>(dim: usize, records: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, V)>,
        S: Into<String>,
        V: AsRef<[f32]>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut seen = HashSet::new();
        for (id, v) in records {
            let id: String = id.into();
            let v = v.as_ref();
            if v.len() != dim {
                return Err(RetrievalError::Dimension { expected: dim, found: v.len() });
            }
            let unit = normalize(v).ok_or_else(|| RetrievalError::ZeroVector(Some(id.clone())))?;
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateId(id));
            }
            data.extend_from_slice(&unit);
            ids.push(id);
        }
        Ok(Self { ids, dim, data })
    }

    /// Builds from every catalog item, in catalog order.
    pub fn build(catalog: &Catalog) -> Result<Self, RetrievalError> {
        let dim = catalog.dim().unwrap_or(0);
        let mut records = Vec::with_capacity(catalog.len());
        for item in catalog.items() {
            let e = item.embedding.as_ref().ok_or_else(|| RetrievalError::MissingEmbedding(item.id.clone()))?;
            records.push((item.id.as_str(), e.values()));
        }
        Self::from_vectors(dim, records)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    fn better(&self, a: &Candidate, b: &Candidate) -> Ordering {
        b.score.total_cmp(&a.score).then_with(|| self.ids[a.row].cmp(&self.ids[b.row]))
    }

    /// The `k` rows most similar to `query`, skipping ids in `exclude`.
    pub fn top_k(
        &self,
        query: &[f32],
        k: usize,
        exclude: Option<&HashSet<String>>,
    ) -> Result<RecommendationList, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::Dimension { expected: self.dim, found: query.len() });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        let q = normalize(query).ok_or(RetrievalError::ZeroVector(None))?;

        // Max-heap under `worse-first` order: the top is the current weakest keeper.
        struct Keyed<'a> {
            c: Candidate,
            index: &'a VectorIndex,
        }
        impl PartialEq for Keyed<'_> {
            fn eq(&self, other: &Self) -> bool {
                self.cmp(other) == Ordering::Equal
            }
        }
        impl Eq for Keyed<'_> {}
        impl PartialOrd for Keyed<'_> {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Keyed<'_> {
            fn cmp(&self, other: &Self) -> Ordering {
                self.index.better(&self.c, &other.c)
            }
        }

        let mut heap: BinaryHeap<Keyed<'_>> = BinaryHeap::with_capacity(k.min(self.len()) + 1);
        for (row, chunk) in self.data.chunks_exact(self.dim.max(1)).enumerate().take(self.len()) {
            if exclude.is_some_and(|ex| ex.contains(&self.ids[row])) {
                continue;
            }
            let cand = Keyed { c: Candidate { score: dot(chunk, &q), row }, index: self };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(top) = heap.peek() {
                if cand.cmp(top) == Ordering::Less {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let entries = heap
            .into_sorted_vec()
            .into_iter()
            .map(|k| Recommendation {
                id: self.ids[k.c.row].clone(),
                score: f64::from(k.c.score).clamp(-1.0, 1.0),
            })
            .collect();
        Ok(RecommendationList { entries })
    }

    pub fn to_vec_file(&self) -> VecFile {
        VecFile {
            magic: INDEX_MAGIC,
            dim: self.dim,
            records: self.ids.iter().enumerate().map(|(i, id)| (id.clone(), self.row(i).to_vec())).collect(),
        }
    }

    /// Writes an `IDX1` file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        fs::write(path, self.to_vec_file().encode()?)?;
        Ok(())
    }

    /// Reads an `IDX1` file; rows are taken as stored after a norm check.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let file = VecFile::decode(bytes, INDEX_MAGIC)?;
        let mut ids = Vec::with_capacity(file.records.len());
        let mut data = Vec::with_capacity(file.records.len() * file.dim);
        let mut seen = HashSet::new();
        for (id, row) in file.records {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(RetrievalError::NonFinite);
            }
            let norm = l2_norm(&row);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(RetrievalError::NotNormalized { id, norm });
            }
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateId(id));
            }
            data.extend_from_slice(&row);
            ids.push(id);
        }
        Ok(Self { ids, dim: file.dim, data })
    }
}
