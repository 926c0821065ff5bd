//! Objective-guided human scoring.
//!
//! An evaluation sheet pairs each query with every system's top-10 results.
//! Human scorers give each (query, system, criterion) a hit@10 score from 0
//! to 10. Scores become percentages (mean per scorer over queries, then mean
//! over scorers), and a weighted mean over criteria gives one OHS per system.
//! Criteria and weights are chosen per evaluation goal, so scores are only
//! comparable between runs that share them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::VectorIndex;

/// Results kept per system and query.
pub const MAX_RESULTS: usize = 10;
pub const MAX_SCORE: u8 = 10;
pub const OHS_ROW: &str = "OHS";

const PUBLISHED_TABLE: &str = include_str!("../fixtures/ohs_five_networks.csv");

#[derive(Debug, Error)]
pub enum OhsError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid sheet: {0}")]
    InvalidSheet(String),
    #[error("system {system:?} has no results for query {query:?}")]
    MissingResults { system: String, query: String },
    #[error("no weight for criterion {0:?}")]
    MissingWeight(String),
    #[error("weight given for unknown criterion {0:?}")]
    UnknownCriterion(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("no scores")]
    NoScores,
    #[error("record for sheet {found:?} does not belong to sheet {expected:?}")]
    SheetMismatch { expected: String, found: String },
    #[error("table parse error: {0}")]
    Table(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub weight: f64,
    #[serde(default)]
    pub description: String,
}

impl Criterion {
    pub fn new(name: &str, weight: f64, description: &str) -> Self {
        Self { name: name.into(), weight, description: description.into() }
    }
}

/// The seven default criteria, equally weighted.
///
/// `Variety` pulls against the others: results that are more novel score
/// lower on category, subtype, color and the rest.
pub fn default_criteria() -> Vec<Criterion> {
    vec![
        Criterion::new("Category", 1.0, "Results share the query's main category, such as top, bottom, footwear or jewelry."),
        Criterion::new("Subtype", 1.0, "Results match the query's subtype within its category, such as boots versus slippers."),
        Criterion::new("Texture", 1.0, "Results share the query's main fabric or surface texture, such as denim or leather."),
        Criterion::new("Color", 1.0, "Results share the query's dominant color."),
        Criterion::new(
            "Variety",
            1.0,
            "Results that are novel relative to the query: a different category, subtype or color. Tends to move opposite to the other criteria.",
        ),
        Criterion::new("Details", 1.0, "Results that keep fine design details such as necklines, zippers or pockets."),
        Criterion::new(
            "Shape Difference",
            1.0,
            "Results whose outline differs from the query, for example another angle, perspective, rotation or flip.",
        ),
    ]
}

fn validate_criteria(criteria: &[Criterion]) -> Result<(), OhsError> {
    if criteria.is_empty() {
        return Err(OhsError::InvalidSheet("no criteria".into()));
    }
    let mut names = HashSet::new();
    for c in criteria {
        if !names.insert(c.name.as_str()) {
            return Err(OhsError::InvalidSheet(format!("duplicate criterion {:?}", c.name)));
        }
        if !(c.weight >= 0.0 && c.weight.is_finite()) {
            return Err(OhsError::InvalidSheet(format!("criterion {:?} has weight {}", c.name, c.weight)));
        }
    }
    if !criteria.iter().any(|c| c.weight > 0.0) {
        return Err(OhsError::InvalidSheet("at least one criterion weight must be positive".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Shop,
    Street,
}

/// A query image to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub query_id: String,
    pub image: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetQuery {
    pub query_id: String,
    pub image: String,
    pub domain: Domain,
    pub results: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSheet {
    pub sheet_id: String,
    pub criteria: Vec<Criterion>,
    pub systems: Vec<String>,
    pub queries: Vec<SheetQuery>,
}

impl EvaluationSheet {
    pub fn validate(&self) -> Result<(), OhsError> {
        let bad = |m: String| Err(OhsError::InvalidSheet(m));
        if self.sheet_id.is_empty() {
            return bad("empty sheet_id".into());
        }
        validate_criteria(&self.criteria)?;
        if self.systems.is_empty() {
            return bad("no systems".into());
        }
        let systems: HashSet<&str> = self.systems.iter().map(String::as_str).collect();
        if systems.len() != self.systems.len() {
            return bad("duplicate system names".into());
        }
        let mut ids = HashSet::new();
        for q in &self.queries {
            if !ids.insert(q.query_id.as_str()) {
                return bad(format!("duplicate query {:?}", q.query_id));
            }
            for s in &self.systems {
                match q.results.get(s) {
                    None => return Err(OhsError::MissingResults { system: s.clone(), query: q.query_id.clone() }),
                    Some(r) if r.len() > MAX_RESULTS => {
                        return bad(format!("{} results for {:?}/{:?}, at most {MAX_RESULTS}", r.len(), q.query_id, s))
                    }
                    _ => {}
                }
            }
            if let Some(extra) = q.results.keys().find(|k| !systems.contains(k.as_str())) {
                return bad(format!("query {:?} lists undeclared system {extra:?}", q.query_id));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, OhsError> {
        let sheet: Self = serde_json::from_str(text)?;
        sheet.validate()?;
        Ok(sheet)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OhsError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sheet serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OhsError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn criterion_weights(&self) -> BTreeMap<String, f64> {
        self.criteria.iter().map(|c| (c.name.clone(), c.weight)).collect()
    }

    /// Number of (query, system) screens a scorer works through.
    pub fn screen_count(&self) -> usize {
        self.queries.len() * self.systems.len()
    }
}

/// Supplies one system's ranked results for a query.
pub trait ResultSource {
    fn results(&self, query: &QuerySpec, k: usize) -> Option<Vec<String>>;
}

/// Precomputed results keyed by query id.
impl ResultSource for BTreeMap<String, Vec<String>> {
    fn results(&self, query: &QuerySpec, k: usize) -> Option<Vec<String>> {
        self.get(&query.query_id).map(|r| r.iter().take(k).cloned().collect())
    }
}

/// Live retrieval over an index, with query embeddings keyed by query id.
/// A query that is itself indexed is excluded from its own results.
pub struct IndexSource<'a> {
    pub index: &'a VectorIndex,
    pub query_vectors: HashMap<String, Vec<f32>>,
}

impl ResultSource for IndexSource<'_> {
    fn results(&self, query: &QuerySpec, k: usize) -> Option<Vec<String>> {
        let v = self.query_vectors.get(&query.query_id).map(Vec::as_slice).or_else(|| self.index.vector(&query.query_id))?;
        let exclude: HashSet<String> = [query.query_id.clone()].into();
        let list = self.index.top_k(v, k, Some(&exclude)).ok()?;
        Some(list.entries.into_iter().map(|e| e.id).collect())
    }
}

/// Runs every query through every system and records the top-`k` lists.
pub fn make_sheet(
    sheet_id: &str,
    criteria: Vec<Criterion>,
    queries: &[QuerySpec],
    systems: &[(String, &dyn ResultSource)],
    k: usize,
) -> Result<EvaluationSheet, OhsError> {
    if k == 0 || k > MAX_RESULTS {
        return Err(OhsError::InvalidSheet(format!("k = {k} must be in 1..={MAX_RESULTS}")));
    }
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let mut results = BTreeMap::new();
        for (name, source) in systems {
            let r = source
                .results(q, k)
                .ok_or_else(|| OhsError::MissingResults { system: name.clone(), query: q.query_id.clone() })?;
            results.insert(name.clone(), r.into_iter().take(k).collect());
        }
        out.push(SheetQuery { query_id: q.query_id.clone(), image: q.image.clone(), domain: q.domain, results });
    }
    let sheet = EvaluationSheet {
        sheet_id: sheet_id.to_owned(),
        criteria,
        systems: systems.iter().map(|(n, _)| n.clone()).collect(),
        queries: out,
    };
    sheet.validate()?;
    Ok(sheet)
}

/// Raw scores as posted by a scorer, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSubmission {
    pub sheet_id: String,
    pub scorer_id: String,
    pub entries: Vec<RawScoreEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScoreEntry {
    pub query_id: String,
    pub system: String,
    pub criterion: String,
    pub score: serde_json::Value,
}

/// Validated scores: integral, in range, unique and referring to the sheet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sheet_id: String,
    pub scorer_id: String,
    pub entries: Vec<ScoreEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub query_id: String,
    pub system: String,
    pub criterion: String,
    pub score: u8,
}

impl From<ScoreRecord> for ScoreSubmission {
    fn from(r: ScoreRecord) -> Self {
        Self {
            sheet_id: r.sheet_id,
            scorer_id: r.scorer_id,
            entries: r
                .entries
                .into_iter()
                .map(|e| RawScoreEntry {
                    query_id: e.query_id,
                    system: e.system,
                    criterion: e.criterion,
                    score: e.score.into(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    SheetMismatch,
    MissingScorer,
    OutOfRange,
    NonInteger,
    Duplicate,
    UnknownQuery,
    UnknownSystem,
    UnknownCriterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Position in `entries`, absent for record-level problems.
    pub entry: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

/// Checks a submission against its sheet, collecting every violation.
pub fn validate_scores(sheet: &EvaluationSheet, submission: &ScoreSubmission) -> Result<ScoreRecord, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut push = |entry: Option<usize>, kind, message: String| violations.push(Violation { entry, kind, message });
    if submission.sheet_id != sheet.sheet_id {
        push(
            None,
            ViolationKind::SheetMismatch,
            format!("record is for sheet {:?}, not {:?}", submission.sheet_id, sheet.sheet_id),
        );
    }
    if submission.scorer_id.trim().is_empty() {
        push(None, ViolationKind::MissingScorer, "scorer_id is empty".into());
    }
    let queries: HashSet<&str> = sheet.queries.iter().map(|q| q.query_id.as_str()).collect();
    let systems: HashSet<&str> = sheet.systems.iter().map(String::as_str).collect();
    let criteria: HashSet<&str> = sheet.criteria.iter().map(|c| c.name.as_str()).collect();
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(submission.entries.len());
    for (i, e) in submission.entries.iter().enumerate() {
        let at = Some(i);
        if !queries.contains(e.query_id.as_str()) {
            push(at, ViolationKind::UnknownQuery, format!("entry {i}: unknown query {:?}", e.query_id));
        }
        if !systems.contains(e.system.as_str()) {
            push(at, ViolationKind::UnknownSystem, format!("entry {i}: unknown system {:?}", e.system));
        }
        if !criteria.contains(e.criterion.as_str()) {
            push(at, ViolationKind::UnknownCriterion, format!("entry {i}: unknown criterion {:?}", e.criterion));
        }
        if !seen.insert((e.query_id.as_str(), e.system.as_str(), e.criterion.as_str())) {
            push(
                at,
                ViolationKind::Duplicate,
                format!("entry {i}: duplicate score for ({}, {}, {})", e.query_id, e.system, e.criterion),
            );
        }
        let score = match e.score.as_f64() {
            None => {
                push(at, ViolationKind::NonInteger, format!("entry {i}: score {} is not an integer", e.score));
                None
            }
            Some(v) if v.fract() != 0.0 => {
                push(at, ViolationKind::NonInteger, format!("entry {i}: score {v} is not an integer"));
                None
            }
            Some(v) if !(0.0..=f64::from(MAX_SCORE)).contains(&v) => {
                push(at, ViolationKind::OutOfRange, format!("entry {i}: score {v} out of range 0..={MAX_SCORE}"));
                None
            }
            Some(v) => Some(v as u8),
        };
        if let Some(score) = score {
            entries.push(ScoreEntry {
                query_id: e.query_id.clone(),
                system: e.system.clone(),
                criterion: e.criterion.clone(),
                score,
            });
        }
    }
    if violations.is_empty() {
        Ok(ScoreRecord { sheet_id: submission.sheet_id.clone(), scorer_id: submission.scorer_id.clone(), entries })
    } else {
        Err(violations)
    }
}

/// Percentage for one (system, criterion): each scorer's mean over queries,
/// then the mean over scorers, scaled from 0–10 to 0–100.
pub fn to_percentage<S: AsRef<[u8]>>(by_scorer: &[S]) -> Result<f64, OhsError> {
    let means: Vec<f64> = by_scorer
        .iter()
        .map(AsRef::as_ref)
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(|&v| f64::from(v)).sum::<f64>() / s.len() as f64)
        .collect();
    if means.is_empty() {
        return Err(OhsError::NoScores);
    }
    Ok(means.iter().sum::<f64>() / means.len() as f64 * 100.0 / f64::from(MAX_SCORE))
}

/// `sum(w * p) / sum(w)`; `None` if a positively weighted value is absent.
pub fn weighted_mean(values: &[Option<f64>], weights: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, &w) in values.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        num += w * (*v)?;
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub system: String,
    pub criterion: String,
}

/// Per-criterion percentages and OHS for every system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    pub sheet_id: String,
    pub systems: Vec<String>,
    pub criteria: Vec<String>,
    pub weights: Vec<f64>,
    /// `percentages[c][s]`, absent when nobody scored the cell.
    pub percentages: Vec<Vec<Option<f64>>>,
    pub ohs: Vec<Option<f64>>,
    pub gaps: Vec<Gap>,
}

pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl Aggregation {
    /// Builds an aggregation from known percentages (e.g. a published table).
    pub fn from_percentages(
        systems: Vec<String>,
        criteria: Vec<String>,
        percentages: Vec<Vec<Option<f64>>>,
        weights: Vec<f64>,
    ) -> Result<Self, OhsError> {
        check_weight_vector(&weights, criteria.len())?;
        if percentages.len() != criteria.len() || percentages.iter().any(|r| r.len() != systems.len()) {
            return Err(OhsError::Table("percentage grid does not match criteria × systems".into()));
        }
        let mut gaps = Vec::new();
        for (c, row) in percentages.iter().enumerate() {
            for (s, v) in row.iter().enumerate() {
                if v.is_none() {
                    gaps.push(Gap { system: systems[s].clone(), criterion: criteria[c].clone() });
                }
            }
        }
        let ohs = (0..systems.len())
            .map(|s| weighted_mean(&percentages.iter().map(|r| r[s]).collect::<Vec<_>>(), &weights))
            .collect();
        Ok(Self { sheet_id: String::new(), systems, criteria, weights, percentages, ohs, gaps })
    }

    pub fn cell(&self, criterion: &str, system: &str) -> Option<f64> {
        let c = self.criteria.iter().position(|x| x == criterion)?;
        let s = self.systems.iter().position(|x| x == system)?;
        self.percentages[c][s]
    }

    pub fn ohs_of(&self, system: &str) -> Option<f64> {
        let s = self.systems.iter().position(|x| x == system)?;
        self.ohs[s]
    }

    /// Copy with every value rounded to two decimals, for reporting.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        r.percentages.iter_mut().flatten().for_each(|v| *v = v.map(round2));
        r.ohs.iter_mut().for_each(|v| *v = v.map(round2));
        r
    }
}

fn check_weight_vector(weights: &[f64], n: usize) -> Result<(), OhsError> {
    if weights.len() != n {
        return Err(OhsError::InvalidWeights(format!("{} weights for {n} criteria", weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(OhsError::InvalidWeights("weights must be finite and non-negative".into()));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(OhsError::InvalidWeights("weights must not all be zero".into()));
    }
    Ok(())
}

/// Aggregates validated records into percentages and OHS per system.
///
/// When one scorer has several records, a later score for the same
/// (query, system, criterion) replaces the earlier one.
pub fn aggregate(
    sheet: &EvaluationSheet,
    records: &[ScoreRecord],
    weights: &BTreeMap<String, f64>,
) -> Result<Aggregation, OhsError> {
    let criteria: Vec<String> = sheet.criteria.iter().map(|c| c.name.clone()).collect();
    if let Some(unknown) = weights.keys().find(|k| !criteria.contains(k)) {
        return Err(OhsError::UnknownCriterion(unknown.clone()));
    }
    let w = criteria
        .iter()
        .map(|c| weights.get(c).copied().ok_or_else(|| OhsError::MissingWeight(c.clone())))
        .collect::<Result<Vec<f64>, _>>()?;
    check_weight_vector(&w, criteria.len())?;

    // (system, criterion) -> scorer -> query -> score
    type ByScorer<'a> = BTreeMap<&'a str, BTreeMap<&'a str, u8>>;
    let mut cells: HashMap<(&str, &str), ByScorer> = HashMap::new();
    for r in records {
        if r.sheet_id != sheet.sheet_id {
            return Err(OhsError::SheetMismatch { expected: sheet.sheet_id.clone(), found: r.sheet_id.clone() });
        }
        for e in &r.entries {
            cells
                .entry((e.system.as_str(), e.criterion.as_str()))
                .or_default()
                .entry(r.scorer_id.as_str())
                .or_default()
                .insert(e.query_id.as_str(), e.score);
        }
    }

    let mut percentages = vec![vec![None; sheet.systems.len()]; criteria.len()];
    let mut gaps = Vec::new();
    for (ci, c) in criteria.iter().enumerate() {
        for (si, s) in sheet.systems.iter().enumerate() {
            let value = cells.get(&(s.as_str(), c.as_str())).and_then(|by_scorer| {
                let lists: Vec<Vec<u8>> = by_scorer.values().map(|q| q.values().copied().collect()).collect();
                to_percentage(&lists).ok()
            });
            if value.is_none() {
                gaps.push(Gap { system: s.clone(), criterion: c.clone() });
            }
            percentages[ci][si] = value;
        }
    }
    let ohs = (0..sheet.systems.len())
        .map(|s| weighted_mean(&percentages.iter().map(|r| r[s]).collect::<Vec<_>>(), &w))
        .collect();
    Ok(Aggregation {
        sheet_id: sheet.sheet_id.clone(),
        systems: sheet.systems.clone(),
        criteria,
        weights: w,
        percentages,
        ohs,
        gaps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub column: usize,
    /// Another column holds the same value.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub cells: Vec<Option<f64>>,
    pub best: Option<Marker>,
    pub worst: Option<Marker>,
}

/// Criterion rows plus an OHS row, with best and worst marked per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub systems: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn mark(cells: &[Option<f64>], best: bool) -> Option<Marker> {
    let present: Vec<(usize, f64)> = cells.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    if present.len() < 2 {
        return None;
    }
    let mut pick = present[0];
    for &(i, v) in &present[1..] {
        if (best && v > pick.1) || (!best && v < pick.1) {
            pick = (i, v);
        }
    }
    let tied = present.iter().filter(|&&(_, v)| v == pick.1).count() > 1;
    Some(Marker { column: pick.0, tied })
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.2}"))
}

impl ComparisonTable {
    pub fn from_rows(systems: Vec<String>, rows: Vec<(String, Vec<Option<f64>>)>) -> Result<Self, OhsError> {
        let mut out = Vec::with_capacity(rows.len());
        for (name, cells) in rows {
            if cells.len() != systems.len() {
                return Err(OhsError::Table(format!("row {name:?} has {} cells for {} systems", cells.len(), systems.len())));
            }
            let (best, worst) = (mark(&cells, true), mark(&cells, false));
            out.push(TableRow { name, cells, best, worst });
        }
        Ok(Self { systems, rows: out })
    }

    pub fn from_aggregation(agg: &Aggregation) -> Self {
        let mut rows: Vec<(String, Vec<Option<f64>>)> =
            agg.criteria.iter().cloned().zip(agg.percentages.iter().cloned()).collect();
        rows.push((OHS_ROW.to_owned(), agg.ohs.clone()));
        Self::from_rows(agg.systems.clone(), rows).expect("aggregation grid is rectangular")
    }

    pub fn row(&self, name: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Parses `criterion,SYS1,SYS2,...` CSV; values may carry a `%` suffix,
    /// empty or `n/a` cells are absent.
    pub fn parse_csv(text: &str) -> Result<Self, OhsError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| OhsError::Table(e.to_string()))?.clone();
        let systems: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        if systems.is_empty() {
            return Err(OhsError::Table("no system columns".into()));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| OhsError::Table(e.to_string()))?;
            let name = rec.get(0).unwrap_or_default().to_owned();
            let cells = rec
                .iter()
                .skip(1)
                .map(|v| {
                    let v = v.trim_end_matches('%');
                    if v.is_empty() || v.eq_ignore_ascii_case("n/a") {
                        Ok(None)
                    } else {
                        v.parse::<f64>().map(Some).map_err(|e| OhsError::Table(format!("{name}: {v:?}: {e}")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((name, cells));
        }
        Self::from_rows(systems, rows)
    }

    /// Fixed-width text table; cells are percentages to two decimals with
    /// `*best*` / `*worst*` affixes.
    pub fn render_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut header = vec!["Criterion".to_owned()];
        header.extend(self.systems.iter().cloned());
        grid.push(header);
        for row in &self.rows {
            let mut line = vec![row.name.clone()];
            for (i, v) in row.cells.iter().enumerate() {
                let mut cell = fmt_cell(*v);
                if v.is_some() {
                    cell.push('%');
                }
                if row.best.is_some_and(|m| m.column == i) {
                    cell.push_str(" *best*");
                }
                if row.worst.is_some_and(|m| m.column == i) {
                    cell.push_str(" *worst*");
                }
                line.push(cell);
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (r, line) in grid.iter().enumerate() {
            let cells: Vec<String> =
                line.iter().zip(&widths).map(|(cell, &w)| format!("{cell:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
            if r == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                let _ = writeln!(out, "{}", rule.join("-+-"));
            }
        }
        let ties: Vec<&str> = self
            .rows
            .iter()
            .filter(|r| r.best.is_some_and(|m| m.tied) || r.worst.is_some_and(|m| m.tied))
            .map(|r| r.name.as_str())
            .collect();
        if !ties.is_empty() {
            let _ = writeln!(out, "ties (earliest column marked): {}", ties.join(", "));
        }
        out
    }

    /// CSV with `best` / `worst` columns naming the marked system.
    pub fn render_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["criterion".to_owned()];
        header.extend(self.systems.iter().cloned());
        header.extend(["best", "worst", "best_tied", "worst_tied"].map(str::to_owned));
        w.write_record(&header).expect("in-memory csv");
        for row in &self.rows {
            let mut line = vec![row.name.clone()];
            line.extend(row.cells.iter().map(|v| fmt_cell(*v)));
            let name = |m: Option<Marker>| m.map_or(String::new(), |m| self.systems[m.column].clone());
            let tied = |m: Option<Marker>| m.is_some_and(|m| m.tied).to_string();
            line.extend([name(row.best), name(row.worst), tied(row.best), tied(row.worst)]);
            w.write_record(&line).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

/// The five-network comparison used as a rendering and aggregation fixture:
/// a test-IOU row, the seven criterion rows and the published OHS row.
pub fn published_comparison() -> ComparisonTable {
    ComparisonTable::parse_csv(PUBLISHED_TABLE).expect("bundled fixture parses")
}

/// Raw text of the bundled fixture.
pub fn published_comparison_csv() -> &'static str {
    PUBLISHED_TABLE
}

/// Criterion names of the default set, in order.
pub fn default_criterion_names() -> BTreeSet<String> {
    default_criteria().into_iter().map(|c| c.name).collect()
}
