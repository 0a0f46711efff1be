//! Benchmark datasets, metrics and the evaluation runner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bpmn::{parse_bpmn, BpmnDocument};
use crate::bpmn2py::decompile;
use crate::generate::{
    mock_oracle, HttpProvider, MockTable, Pipeline, PipelineConfig, Provider, ProviderError,
    ProviderSpec, Request, API_KEY_VAR,
};
use crate::ir::{collect_activities, normalize_ir, parse_ir, Program, Stmt};
use crate::py2bpmn::{compile, structural_equal};
use crate::retrieval::{activities_recall, ActivityRetriever, Catalog, Demonstration, RetrieverKind};

pub const SYNTAX_F1_NOTE: &str = "syntax_f1 is the F1 of (ancestor path, head label) statement features; it is this tool's own definition";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCase {
    pub uid: u64,
    pub file: PathBuf,
    pub tags: BTreeSet<String>,
    pub utterance: String,
    pub prior_sequence: Option<Program>,
    /// Kept verbatim; its meaning is not defined by the format.
    pub prior_context: serde_yaml::Value,
    pub prior_bpmn: Option<BpmnDocument>,
    pub expected_sequence: Program,
    pub expected_bpmn: BpmnDocument,
}

impl BenchCase {
    pub fn gold_activities(&self) -> BTreeSet<String> {
        collect_activities(&self.expected_sequence).into_iter().collect()
    }

    pub fn is_update(&self) -> bool {
        self.prior_sequence.is_some()
    }

    pub fn demonstration(&self) -> Demonstration {
        Demonstration {
            uid: Some(self.uid),
            utterance: self.utterance.clone(),
            prior_sequence: self.prior_sequence.clone(),
            expected: self.expected_sequence.clone(),
            tags: self.tags.clone(),
        }
    }

    /// The prior diagram, compiled from the prior sequence when no file was given.
    pub fn prior_document(&self) -> Option<BpmnDocument> {
        self.prior_bpmn
            .clone()
            .or_else(|| self.prior_sequence.as_ref().map(compile))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}: {reason}", file.display())]
pub struct DatasetError {
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Deserialize)]
struct RawCase {
    #[serde(rename = "_metadata")]
    metadata: RawMeta,
    input: RawInput,
    expected_output: RawExpected,
}

#[derive(Deserialize)]
struct RawMeta {
    #[serde(default)]
    tags: Vec<String>,
    uid: u64,
}

#[derive(Deserialize)]
struct RawInput {
    utterance: String,
    #[serde(default)]
    prior_sequence: Vec<String>,
    #[serde(default)]
    prior_context: serde_yaml::Value,
    bpmn: Option<RawRef>,
}

#[derive(Deserialize)]
struct RawExpected {
    sequence: Vec<String>,
    bpmn: RawRef,
}

#[derive(Deserialize)]
struct RawRef {
    #[serde(rename = "$ref")]
    path: String,
}

/// Reads every `*.yaml` case under `root`, resolving `$ref` paths relative
/// to the case file. Cases come back sorted by uid.
pub fn load_dataset(root: &Path) -> Result<Vec<BenchCase>, DatasetError> {
    let err = |file: &Path, reason: String| DatasetError {
        file: file.to_path_buf(),
        reason,
    };
    let entries = std::fs::read_dir(root).map_err(|e| err(root, e.to_string()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("yaml" | "yml")))
        .collect();
    files.sort();
    let mut cases = files
        .par_iter()
        .map(|f| load_case(f))
        .collect::<Result<Vec<_>, _>>()?;
    cases.sort_by_key(|c| c.uid);
    if let Some(w) = cases.windows(2).find(|w| w[0].uid == w[1].uid) {
        return Err(err(&w[1].file, format!("uid {} is used twice", w[1].uid)));
    }
    Ok(cases)
}

fn load_case(file: &Path) -> Result<BenchCase, DatasetError> {
    let err = |reason: String| DatasetError {
        file: file.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(file).map_err(|e| err(e.to_string()))?;
    let raw: RawCase = serde_yaml::from_str(&text).map_err(|e| err(e.to_string()))?;
    let dir = file.parent().unwrap_or(Path::new("."));
    let bpmn = |r: &RawRef| {
        let path = dir.join(&r.path);
        let text = std::fs::read_to_string(&path).map_err(|e| DatasetError {
            file: path.clone(),
            reason: e.to_string(),
        })?;
        parse_bpmn(&text).map_err(|e| DatasetError {
            file: path.clone(),
            reason: e.to_string(),
        })
    };
    let program = |parts: &[String], what: &str| {
        parse_ir(&parts.join("\n")).map_err(|e| err(format!("{what} does not parse: {e}")))
    };
    let prior_sequence = if raw.input.prior_sequence.iter().all(|s| s.trim().is_empty()) {
        None
    } else {
        Some(program(&raw.input.prior_sequence, "prior_sequence")?)
    };
    let prior_bpmn = raw.input.bpmn.as_ref().map(bpmn).transpose()?;
    if let (Some(doc), Some(seq)) = (&prior_bpmn, &prior_sequence) {
        let back = decompile(doc).map_err(|e| err(format!("prior bpmn does not decompile: {e}")))?;
        if normalize_ir(&back) != normalize_ir(seq) {
            return Err(err("prior bpmn does not match prior_sequence".into()));
        }
    }
    Ok(BenchCase {
        uid: raw.metadata.uid,
        file: file.to_path_buf(),
        tags: raw.metadata.tags.into_iter().collect(),
        utterance: raw.input.utterance,
        prior_sequence,
        prior_context: raw.input.prior_context,
        prior_bpmn,
        expected_sequence: program(&raw.expected_output.sequence, "expected sequence")?,
        expected_bpmn: bpmn(&raw.expected_output.bpmn)?,
    })
}

/// 1 when the programs agree up to variable names.
pub fn exact_match(generated: &Program, gold: &Program) -> f64 {
    if normalize_ir(generated) == normalize_ir(gold) {
        1.0
    } else {
        0.0
    }
}

/// Share of non-`user_task` calls whose callee is missing from the catalog.
pub fn hallucination_rate(generated: &Program, catalog: &Catalog) -> f64 {
    let calls = collect_activities(generated);
    if calls.is_empty() {
        return 0.0;
    }
    calls.iter().filter(|c| !catalog.contains(c)).count() as f64 / calls.len() as f64
}

type Feature = (Vec<&'static str>, String);

fn features(program: &Program) -> BTreeMap<Feature, usize> {
    fn walk(stmts: &[Stmt], path: &mut Vec<&'static str>, out: &mut BTreeMap<Feature, usize>) {
        for stmt in stmts {
            let label = match stmt {
                Stmt::Assign { call, .. } | Stmt::Expr(call) => call.callee.clone(),
                other => other.kind_name().to_string(),
            };
            *out.entry((path.clone(), label)).or_default() += 1;
            match stmt {
                Stmt::For { body, .. } | Stmt::While { body, .. } => {
                    path.push(stmt.kind_name());
                    walk(body, path, out);
                    path.pop();
                }
                Stmt::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    path.push("if");
                    walk(then_body, path, out);
                    path.pop();
                    if let Some(body) = else_body {
                        path.push("else");
                        walk(body, path, out);
                        path.pop();
                    }
                }
                _ => {}
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(&program.statements, &mut Vec::new(), &mut out);
    out
}

/// F1 over the multisets of per-statement features.
pub fn syntax_f1(generated: &Program, gold: &Program) -> f64 {
    let (g, t) = (features(generated), features(gold));
    let total = |m: &BTreeMap<Feature, usize>| m.values().sum::<usize>();
    let (ng, nt) = (total(&g), total(&t));
    if ng == 0 && nt == 0 {
        return 1.0;
    }
    let common: usize = g
        .iter()
        .map(|(f, n)| (*n).min(t.get(f).copied().unwrap_or(0)))
        .sum();
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / ng as f64;
    let r = common as f64 / nt as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomainMode {
    #[default]
    In,
    /// Demos that use any gold activity of the case are withheld.
    Cross,
}

impl std::str::FromStr for DomainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "in" => Ok(DomainMode::In),
            "cross" => Ok(DomainMode::Cross),
            _ => Err(format!("unknown domain mode '{s}' (expected in or cross)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRecord {
    pub uid: u64,
    pub tags: Vec<String>,
    pub exact_match: f64,
    pub activities_recall: f64,
    pub hallucination_rate: f64,
    pub syntax_f1: f64,
    /// Whether the produced diagram is structurally equal to the expected one.
    pub bpmn_match: bool,
    pub prompt_hash: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Aggregates {
    pub cases: usize,
    pub errored: usize,
    pub exact_match: f64,
    pub activities_recall: f64,
    pub hallucination_rate: f64,
    pub syntax_f1: f64,
    pub bpmn_match: f64,
}

impl Aggregates {
    /// Exact match, syntax F1, recall and diagram match average over every
    /// case (errors count as 0); hallucination averages over the cases that
    /// produced a program.
    pub fn of<'a>(records: impl IntoIterator<Item = &'a CaseRecord>) -> Self {
        let records: Vec<&CaseRecord> = records.into_iter().collect();
        let mean = |f: &dyn Fn(&CaseRecord) -> f64, rs: &[&CaseRecord]| {
            if rs.is_empty() {
                0.0
            } else {
                rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64
            }
        };
        let ok: Vec<&CaseRecord> = records.iter().copied().filter(|r| r.error.is_none()).collect();
        Self {
            cases: records.len(),
            errored: records.len() - ok.len(),
            exact_match: mean(&|r| r.exact_match, &records),
            activities_recall: mean(&|r| r.activities_recall, &records),
            hallucination_rate: mean(&|r| r.hallucination_rate, &ok),
            syntax_f1: mean(&|r| r.syntax_f1, &records),
            bpmn_match: mean(&|r| f64::from(u8::from(r.bpmn_match)), &records),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub activity_retriever: RetrieverKind,
    pub activity_top_k: usize,
    pub demo_retriever: RetrieverKind,
    pub demo_top_k: usize,
    pub provider: String,
    pub domain: DomainMode,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub note: String,
    pub config: ReportConfig,
    pub cases: Vec<CaseRecord>,
    pub aggregates: Aggregates,
    /// Keyed by the case's full tag set joined with `+`, so groups partition the cases.
    pub by_tag: BTreeMap<String, Aggregates>,
    pub seconds: f64,
}

fn tag_key(tags: &[String]) -> String {
    if tags.is_empty() {
        "untagged".to_string()
    } else {
        tags.join("+")
    }
}

impl EvalReport {
    pub fn from_records(config: ReportConfig, mut cases: Vec<CaseRecord>, seconds: f64) -> Self {
        cases.sort_by_key(|c| c.uid);
        let mut groups: BTreeMap<String, Vec<&CaseRecord>> = BTreeMap::new();
        for c in &cases {
            groups.entry(tag_key(&c.tags)).or_default().push(c);
        }
        let by_tag = groups
            .into_iter()
            .map(|(k, rs)| (k, Aggregates::of(rs)))
            .collect();
        Self {
            note: SYNTAX_F1_NOTE.to_string(),
            config,
            aggregates: Aggregates::of(&cases),
            by_tag,
            cases,
            seconds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: one row per tag group, then the total.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.note);
        let _ = writeln!(
            out,
            "# provider={} domain={:?} activities={:?}@{} demos={:?}@{}",
            self.config.provider,
            self.config.domain,
            self.config.activity_retriever,
            self.config.activity_top_k,
            self.config.demo_retriever,
            self.config.demo_top_k
        );
        let width = self
            .by_tag
            .keys()
            .map(String::len)
            .chain([5])
            .max()
            .unwrap_or(5);
        let _ = writeln!(
            out,
            "{:<width$}  {:>5}  {:>4}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
            "group", "cases", "err", "exact", "recall", "halluc", "syn_f1", "bpmn"
        );
        let mut row = |name: &str, a: &Aggregates| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}",
                name,
                a.cases,
                a.errored,
                a.exact_match,
                a.activities_recall,
                a.hallucination_rate,
                a.syntax_f1,
                a.bpmn_match
            );
        };
        for (k, a) in &self.by_tag {
            row(k, a);
        }
        row("total", &self.aggregates);
        out
    }
}

pub struct EvalOptions {
    pub config: PipelineConfig,
    pub domain: DomainMode,
    /// Worker threads; 0 picks the number of processors.
    pub jobs: usize,
}

/// Runs every case through the pipeline. Per-case failures are recorded in
/// the report and never stop the run.
pub fn run_eval(
    dataset: &[BenchCase],
    catalog: &Catalog,
    provider: &dyn Provider,
    options: &EvalOptions,
) -> EvalReport {
    let started = Instant::now();
    let demos: Vec<Demonstration> = dataset.iter().map(BenchCase::demonstration).collect();
    let pipeline = Pipeline::new(catalog, &demos, options.config, provider);
    let mut jobs = if options.jobs == 0 {
        std::thread::available_parallelism().map_or(1, usize::from)
    } else {
        options.jobs
    };
    if let Some(cap) = provider.max_in_flight() {
        jobs = jobs.min(cap.max(1));
    }
    let run = || {
        dataset
            .par_iter()
            .map(|case| eval_case(case, catalog, &pipeline, options.domain))
            .collect::<Vec<_>>()
    };
    let records = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    let config = ReportConfig {
        activity_retriever: options.config.activities.kind,
        activity_top_k: options.config.activities.top_k,
        demo_retriever: options.config.demos.kind,
        demo_top_k: options.config.demos.top_k,
        provider: provider.name(),
        domain: options.domain,
        jobs,
    };
    EvalReport::from_records(config, records, started.elapsed().as_secs_f64())
}

fn eval_case(case: &BenchCase, catalog: &Catalog, pipeline: &Pipeline<'_>, domain: DomainMode) -> CaseRecord {
    let gold = case.gold_activities();
    let filter = |d: &Demonstration| {
        d.uid != Some(case.uid)
            && (domain == DomainMode::In
                || collect_activities(&d.expected).iter().all(|a| !gold.contains(a)))
    };
    let request = Request {
        case_uid: Some(case.uid),
        demo_filter: Some(&filter),
    };
    let result = match case.prior_document() {
        Some(prior) => pipeline.run_update(&case.utterance, &prior, request),
        None => pipeline.run_initial(&case.utterance, request),
    };
    let mut record = CaseRecord {
        uid: case.uid,
        tags: case.tags.iter().cloned().collect(),
        exact_match: 0.0,
        activities_recall: 0.0,
        hallucination_rate: 0.0,
        syntax_f1: 0.0,
        bpmn_match: false,
        prompt_hash: None,
        error: None,
    };
    match result {
        Ok(outcome) => {
            let program = &outcome.generation.program;
            record.exact_match = exact_match(program, &case.expected_sequence);
            record.activities_recall = activities_recall(&outcome.retrieved, &gold);
            record.hallucination_rate = hallucination_rate(program, catalog);
            record.syntax_f1 = syntax_f1(program, &case.expected_sequence);
            record.bpmn_match = structural_equal(&outcome.document, &case.expected_bpmn);
            record.prompt_hash = Some(outcome.generation.prompt_hash);
        }
        Err(e) => {
            let ids: Vec<String> = pipeline
                .retrieve_activities(&case.utterance, case.prior_sequence.as_ref())
                .into_iter()
                .map(|a| a.id)
                .collect();
            record.activities_recall = activities_recall(&ids, &gold);
            record.error = Some(e.to_string());
        }
    }
    record
}

/// Mean activities recall of one retriever at each `top_k`, ranking each
/// case once.
pub fn recall_sweep(
    dataset: &[BenchCase],
    catalog: &Catalog,
    kind: RetrieverKind,
    top_ks: &[usize],
) -> Vec<(usize, f64)> {
    let retriever = ActivityRetriever::new(catalog, kind);
    let max_k = top_ks.iter().copied().max().unwrap_or(0);
    let per_case: Vec<Vec<f64>> = dataset
        .par_iter()
        .map(|case| {
            let gold = case.gold_activities();
            let ids: Vec<String> = retriever
                .retrieve(&case.utterance, case.prior_sequence.as_ref(), max_k)
                .into_iter()
                .map(|a| a.id)
                .collect();
            top_ks
                .iter()
                .map(|&k| activities_recall(&ids[..k.min(ids.len())], &gold))
                .collect()
        })
        .collect();
    top_ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let sum: f64 = per_case.iter().map(|r| r[i]).sum();
            (k, if per_case.is_empty() { 0.0 } else { sum / per_case.len() as f64 })
        })
        .collect()
}

/// Builds the provider a [`ProviderSpec`] names. `http` without an endpoint
/// reads it from the environment.
pub fn provider_from_spec(spec: &ProviderSpec) -> Result<Box<dyn Provider>, ProviderError> {
    Ok(match spec {
        ProviderSpec::MockTable(path) => Box::new(MockTable::from_file(path)?),
        ProviderSpec::MockOracle(dir) => {
            let cases = load_dataset(dir).map_err(|e| ProviderError::Setup(e.to_string()))?;
            Box::new(mock_oracle(
                cases
                    .iter()
                    .map(|c| (c.uid, c.utterance.as_str(), &c.expected_sequence)),
            ))
        }
        ProviderSpec::Http(None) => Box::new(HttpProvider::from_env()?),
        ProviderSpec::Http(Some(endpoint)) => Box::new(HttpProvider::new(
            endpoint.clone(),
            std::env::var(API_KEY_VAR).ok(),
        )),
    })
}
