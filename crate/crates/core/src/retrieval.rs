//! Activity catalog loading and the activity / demonstration retrievers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ir::{collect_activities, is_identifier, Program};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityEntry {
    pub id: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog is not valid JSON: {0}")]
    Json(String),
    #[error("catalog must be a JSON array of objects")]
    NotAnArray,
    #[error("catalog entry {index} is missing string field '{field}'")]
    MissingField { index: usize, field: &'static str },
    #[error("catalog id '{id}' is not an identifier")]
    BadId { id: String },
    #[error("catalog id '{id}' appears more than once")]
    DuplicateId { id: String },
}

/// Ordered activity catalog with id lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    entries: Vec<ActivityEntry>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(entries: Vec<ActivityEntry>) -> Result<Self, CatalogError> {
        let mut by_id = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if !is_identifier(&e.id) {
                return Err(CatalogError::BadId { id: e.id.clone() });
            }
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId { id: e.id.clone() });
            }
        }
        Ok(Self { entries, by_id })
    }

    pub fn entries(&self) -> &[ActivityEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&ActivityEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }
}

pub fn load_catalog(json_text: &str) -> Result<Catalog, CatalogError> {
    let value: serde_json::Value =
        serde_json::from_str(json_text).map_err(|e| CatalogError::Json(e.to_string()))?;
    let items = value.as_array().ok_or(CatalogError::NotAnArray)?;
    let mut entries = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let field = |name: &'static str| {
            item.get(name)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or(CatalogError::MissingField { index, field: name })
        };
        entries.push(ActivityEntry {
            id: field("id")?,
            description: field("description")?,
        });
    }
    Catalog::new(entries)
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(ca != cb)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Levenshtein distance of the lowercased strings over the longer length.
pub fn normalized_distance(a: &str, b: &str) -> f64 {
    let (a, b) = (a.to_lowercase(), b.to_lowercase());
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(&a, &b) as f64 / longest as f64
}

/// Text similarity in `[0, 1]`; larger is more similar.
pub trait SimilarityBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Prepares corpus statistics; scoring works without it.
    fn index(&mut self, _corpus: &[&str]) {}
    fn score(&self, query: &str, candidate: &str) -> f64;
}

/// `1 - normalized_distance`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EditDistanceBackend;

impl SimilarityBackend for EditDistanceBackend {
    fn name(&self) -> &str {
        "edit_distance"
    }

    fn score(&self, query: &str, candidate: &str) -> f64 {
        1.0 - normalized_distance(query, candidate)
    }
}

/// Cosine similarity of character 3-gram TF-IDF vectors of lowercased text.
#[derive(Debug, Clone, Default)]
pub struct LexicalBackend {
    docs: usize,
    df: HashMap<String, usize>,
}

type Sparse = Vec<(String, f64)>;

fn trigrams(text: &str) -> BTreeMap<String, usize> {
    let padded: Vec<char> = format!(" {} ", text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" "))
        .chars()
        .collect();
    let mut out = BTreeMap::new();
    if padded.len() < 3 {
        *out.entry(padded.iter().collect()).or_default() += 1;
        return out;
    }
    for w in padded.windows(3) {
        *out.entry(w.iter().collect()).or_default() += 1;
    }
    out
}

impl LexicalBackend {
    pub fn new() -> Self {
        Self::default()
    }

    fn idf(&self, gram: &str) -> f64 {
        let df = self.df.get(gram).copied().unwrap_or(0);
        ((1 + self.docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    fn vector(&self, text: &str) -> Sparse {
        let mut v: Sparse = trigrams(text)
            .into_iter()
            .map(|(g, tf)| {
                let w = tf as f64 * self.idf(&g);
                (g, w)
            })
            .collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut v {
                *w /= norm;
            }
        }
        v
    }
}

fn dot(a: &Sparse, b: &Sparse) -> f64 {
    let (mut i, mut j, mut sum) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum.clamp(0.0, 1.0)
}

impl SimilarityBackend for LexicalBackend {
    fn name(&self) -> &str {
        "lexical"
    }

    fn index(&mut self, corpus: &[&str]) {
        self.docs = corpus.len();
        self.df.clear();
        for doc in corpus {
            for gram in trigrams(doc).into_keys() {
                *self.df.entry(gram).or_default() += 1;
            }
        }
    }

    fn score(&self, query: &str, candidate: &str) -> f64 {
        dot(&self.vector(query), &self.vector(candidate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    EditDistance,
    /// The built-in lexical similarity backend.
    SimilarityBackend,
}

impl RetrieverKind {
    fn backend(self) -> Box<dyn SimilarityBackend> {
        match self {
            RetrieverKind::EditDistance => Box::new(EditDistanceBackend),
            RetrieverKind::SimilarityBackend => Box::new(LexicalBackend::new()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub kind: RetrieverKind,
    pub top_k: usize,
}

impl RetrieverConfig {
    pub fn new(kind: RetrieverKind, top_k: usize) -> Self {
        assert!(top_k >= 1, "top_k must be positive");
        Self { kind, top_k }
    }
}

/// Indices of `scores` ordered by descending score, ties by index.
fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Activity retriever over a fixed catalog; build once, query many times.
pub struct ActivityRetriever<'c> {
    catalog: &'c Catalog,
    backend: Box<dyn SimilarityBackend>,
}

impl<'c> ActivityRetriever<'c> {
    pub fn new(catalog: &'c Catalog, kind: RetrieverKind) -> Self {
        Self::with_backend(catalog, kind.backend())
    }

    pub fn with_backend(catalog: &'c Catalog, mut backend: Box<dyn SimilarityBackend>) -> Self {
        let corpus: Vec<&str> = catalog.entries.iter().map(|e| e.description.as_str()).collect();
        backend.index(&corpus);
        Self { catalog, backend }
    }

    /// Every catalog entry, best first, with activities called by `prior`
    /// forced to the head.
    pub fn rank_all(&self, utterance: &str) -> Vec<usize> {
        let scores: Vec<f64> = self
            .catalog
            .entries
            .iter()
            .map(|e| self.backend.score(utterance, &e.description))
            .collect();
        rank(&scores)
    }

    pub fn retrieve(&self, utterance: &str, prior: Option<&Program>, top_k: usize) -> Vec<ActivityEntry> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        if let Some(prior) = prior {
            for id in collect_activities(prior) {
                if let Some(&i) = self.catalog.by_id.get(&id) {
                    if seen.insert(i) {
                        out.push(i);
                    }
                }
            }
        }
        out.extend(self.rank_all(utterance).into_iter().filter(|i| !seen.contains(i)));
        out.truncate(top_k);
        out.into_iter().map(|i| self.catalog.entries[i].clone()).collect()
    }
}

pub fn retrieve_activities(
    utterance: &str,
    prior: Option<&Program>,
    catalog: &Catalog,
    config: &RetrieverConfig,
) -> Vec<ActivityEntry> {
    ActivityRetriever::new(catalog, config.kind).retrieve(utterance, prior, config.top_k)
}

/// A few-shot example: utterance, optional prior program, expected program.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub uid: Option<u64>,
    pub utterance: String,
    pub prior_sequence: Option<Program>,
    pub expected: Program,
    pub tags: BTreeSet<String>,
}

/// Demonstration retriever over a fixed pool.
pub struct DemoRetriever<'d> {
    demos: &'d [Demonstration],
    backend: Box<dyn SimilarityBackend>,
}

impl<'d> DemoRetriever<'d> {
    pub fn new(demos: &'d [Demonstration], kind: RetrieverKind) -> Self {
        let mut backend = kind.backend();
        let corpus: Vec<&str> = demos.iter().map(|d| d.utterance.as_str()).collect();
        backend.index(&corpus);
        Self { demos, backend }
    }

    /// Best demos for the query among those accepted by `keep`. Only demos
    /// whose prior presence matches the query's are eligible.
    pub fn retrieve_filtered(
        &self,
        utterance: &str,
        has_prior: bool,
        top_k: usize,
        keep: impl Fn(&Demonstration) -> bool,
    ) -> Vec<&'d Demonstration> {
        let pool: Vec<&Demonstration> = self
            .demos
            .iter()
            .filter(|d| d.prior_sequence.is_some() == has_prior && keep(d))
            .collect();
        let scores: Vec<f64> = pool
            .iter()
            .map(|d| self.backend.score(utterance, &d.utterance))
            .collect();
        rank(&scores).into_iter().take(top_k).map(|i| pool[i]).collect()
    }
}

pub fn retrieve_demos<'d>(
    utterance: &str,
    prior: Option<&Program>,
    demos: &'d [Demonstration],
    config: &RetrieverConfig,
) -> Vec<&'d Demonstration> {
    DemoRetriever::new(demos, config.kind).retrieve_filtered(utterance, prior.is_some(), config.top_k, |_| true)
}

/// Fraction of gold activities present among the retrieved ids; 1 when
/// there is nothing to find.
pub fn activities_recall<S: AsRef<str>>(retrieved: &[S], gold: &BTreeSet<String>) -> f64 {
    if gold.is_empty() {
        return 1.0;
    }
    let got: HashSet<&str> = retrieved.iter().map(|s| s.as_ref()).collect();
    gold.iter().filter(|g| got.contains(g.as_str())).count() as f64 / gold.len() as f64
}
