//! Prompt assembly, language-model providers, code extraction and grounding.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bpmn::BpmnDocument;
use crate::bpmn2py::{decompile, DecompileError};
use crate::diff::{diff_ir, patch_bpmn, EditScript, PatchError};
use crate::ir::{parse_ir, print_ir, Program, SyntaxError};
use crate::py2bpmn::compile;
use crate::retrieval::{
    ActivityEntry, ActivityRetriever, Catalog, Demonstration, DemoRetriever, RetrieverConfig,
    RetrieverKind,
};

pub const ENDPOINT_VAR: &str = "FLOWGEN_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "FLOWGEN_LLM_API_KEY";
pub const DEFAULT_MAX_TOKENS: usize = 1024;

const INSTRUCTIONS: &str = "\
You turn workflow requests into programs in a small Python subset.
Rules:
- Answer with a single ```python code block and nothing else.
- Use only assignments, bare calls, if/else, for and while.
- Call only activities from the list below, with no arguments.
- Write user_task(\"...\") for any step a person performs by hand.
- When a current workflow is given, answer with the whole updated workflow.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub system_instructions: String,
    pub activity_block: String,
    pub demo_block: String,
    pub prior_block: Option<String>,
    pub utterance: String,
}

fn fenced(code: &str) -> String {
    format!("```python\n{code}\n```")
}

pub fn assemble_prompt(
    utterance: &str,
    activities: &[ActivityEntry],
    demos: &[&Demonstration],
    prior: Option<&Program>,
) -> PromptBundle {
    let mut activity_block = String::new();
    for a in activities {
        let _ = writeln!(activity_block, "{}: {}", a.id, a.description.trim());
    }
    let mut demo_block = String::new();
    for d in demos {
        let _ = writeln!(demo_block, "Request: {}", one_line(&d.utterance));
        if let Some(p) = &d.prior_sequence {
            let _ = writeln!(demo_block, "Current workflow:\n{}", fenced(&print_ir(p)));
        }
        let _ = writeln!(demo_block, "Workflow:\n{}\n", fenced(&print_ir(&d.expected)));
    }
    PromptBundle {
        system_instructions: INSTRUCTIONS.to_string(),
        activity_block,
        demo_block,
        prior_block: prior.map(print_ir),
        utterance: utterance.to_string(),
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl PromptBundle {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.system_instructions);
        out.push_str("\n\nActivities:\n");
        out.push_str(&self.activity_block);
        if !self.demo_block.is_empty() {
            out.push_str("\nExamples:\n");
            out.push_str(&self.demo_block);
        }
        out.push('\n');
        if let Some(prior) = &self.prior_block {
            let _ = writeln!(out, "Current workflow:\n{}", fenced(prior));
        }
        let _ = write!(out, "Request: {}\nWorkflow:\n", one_line(&self.utterance));
        out
    }

    /// Hex SHA-256 of the rendered prompt.
    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint answered with HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no canned response for case {0}")]
    Missing(String),
    #[error("provider setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no code block found in the model response")]
pub struct ExtractionError {
    pub raw_text: String,
}

/// What a provider is asked to complete.
#[derive(Debug, Clone, Copy)]
pub struct Completion<'a> {
    pub prompt: &'a str,
    pub max_tokens: usize,
    /// Benchmark case being served, which mock providers key on.
    pub case_uid: Option<u64>,
    pub utterance: &'a str,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> String;
    /// Most requests the provider accepts at once; `None` means no limit.
    fn max_in_flight(&self) -> Option<usize> {
        None
    }
    fn complete(&self, request: &Completion<'_>) -> Result<String, ProviderError>;
}

/// Canned responses keyed by case uid, falling back to the utterance text.
#[derive(Debug, Clone, Default)]
pub struct MockTable {
    label: String,
    responses: HashMap<String, String>,
}

fn table_key(uid: Option<u64>, utterance: &str) -> [Option<String>; 2] {
    [uid.map(|u| u.to_string()), Some(one_line(utterance))]
}

impl MockTable {
    pub fn new(label: impl Into<String>, responses: HashMap<String, String>) -> Self {
        let responses = responses.into_iter().map(|(k, v)| (one_line(&k), v)).collect();
        Self {
            label: label.into(),
            responses,
        }
    }

    /// Reads a YAML mapping from uid (or utterance) to response text.
    pub fn from_yaml(text: &str) -> Result<Self, ProviderError> {
        let map: HashMap<serde_yaml::Value, String> =
            serde_yaml::from_str(text).map_err(|e| ProviderError::Setup(e.to_string()))?;
        let mut responses = HashMap::new();
        for (k, v) in map {
            let key = match k {
                serde_yaml::Value::Number(n) => n.to_string(),
                serde_yaml::Value::String(s) => s,
                other => {
                    return Err(ProviderError::Setup(format!("unsupported table key {other:?}")))
                }
            };
            responses.insert(key, v);
        }
        Ok(Self::new("mock_table", responses))
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Setup(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Provider for MockTable {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn complete(&self, request: &Completion<'_>) -> Result<String, ProviderError> {
        table_key(request.case_uid, request.utterance)
            .into_iter()
            .flatten()
            .find_map(|k| self.responses.get(&k).cloned())
            .ok_or_else(|| {
                ProviderError::Missing(
                    request
                        .case_uid
                        .map_or_else(|| one_line(request.utterance), |u| u.to_string()),
                )
            })
    }
}

/// Answers every case with its gold expected sequence.
pub fn mock_oracle<'a>(cases: impl IntoIterator<Item = (u64, &'a str, &'a Program)>) -> MockTable {
    let mut responses = HashMap::new();
    for (uid, utterance, expected) in cases {
        let answer = fenced(&print_ir(expected));
        responses.insert(uid.to_string(), answer.clone());
        responses.entry(utterance.to_string()).or_insert(answer);
    }
    MockTable::new("mock_oracle", responses)
}

/// Posts `{prompt, max_tokens}` as JSON and reads `{text}` back.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    in_flight: usize,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            in_flight: 4,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(300))
                .build(),
        }
    }

    pub fn from_env() -> Result<Self, ProviderError> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| ProviderError::Setup(format!("{ENDPOINT_VAR} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(API_KEY_VAR).ok()))
    }

    pub fn with_in_flight(mut self, cap: usize) -> Self {
        self.in_flight = cap.max(1);
        self
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> String {
        format!("http:{}", self.endpoint)
    }

    fn max_in_flight(&self) -> Option<usize> {
        Some(self.in_flight)
    }

    fn complete(&self, request: &Completion<'_>) -> Result<String, ProviderError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({"prompt": request.prompt, "max_tokens": request.max_tokens});
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<HttpReply>()
                .map(|r| r.text)
                .map_err(|e| ProviderError::Malformed(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => Err(ProviderError::Status {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(e) => Err(ProviderError::Transport(e.to_string())),
        }
    }
}

/// Parsed `kind[:arg]` provider selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    MockTable(PathBuf),
    MockOracle(PathBuf),
    Http(Option<String>),
}

pub const PROVIDER_KINDS: &str = "mock-table:<file>, mock-oracle:<dataset-dir>, http[:<endpoint>]";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad provider '{spec}': {reason} (valid kinds: {PROVIDER_KINDS})")]
pub struct ProviderSpecError {
    pub spec: String,
    pub reason: String,
}

impl FromStr for ProviderSpec {
    type Err = ProviderSpecError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        let err = |reason: &str| ProviderSpecError {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let need = |a: Option<&str>| match a {
            Some(a) if !a.is_empty() => Ok(PathBuf::from(a)),
            _ => Err(err("missing argument")),
        };
        match kind.replace('_', "-").as_str() {
            "mock-table" => need(arg).map(ProviderSpec::MockTable),
            "mock-oracle" => need(arg).map(ProviderSpec::MockOracle),
            "http" => Ok(ProviderSpec::Http(arg.filter(|a| !a.is_empty()).map(str::to_string))),
            _ => Err(err("unknown kind")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    InCatalog,
    UserTask,
    Hallucinated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Grounding {
    pub callee: String,
    pub verdict: Verdict,
}

/// One verdict per call, in document order.
pub fn ground(program: &Program, catalog: &Catalog) -> Vec<Grounding> {
    let mut out = Vec::new();
    program.for_each_call(|call| {
        let verdict = if call.is_user_task() {
            Verdict::UserTask
        } else if catalog.contains(&call.callee) {
            Verdict::InCatalog
        } else {
            Verdict::Hallucinated
        };
        out.push(Grounding {
            callee: call.callee.clone(),
            verdict,
        });
    });
    out
}

/// First fenced block, else the first run of indented lines, dedented.
pub fn extract_code(raw: &str) -> Result<String, ExtractionError> {
    if let Some(code) = fenced_block(raw) {
        return Ok(code);
    }
    indented_block(raw).ok_or_else(|| ExtractionError {
        raw_text: raw.to_string(),
    })
}

fn fenced_block(raw: &str) -> Option<String> {
    let mut lines = raw.lines();
    lines.by_ref().find(|l| l.trim_start().starts_with("```"))?;
    let mut body = Vec::new();
    for line in lines {
        if line.trim_start().starts_with("```") {
            let code = body.join("\n");
            return (!code.trim().is_empty()).then_some(code);
        }
        body.push(line);
    }
    None
}

fn indented_block(raw: &str) -> Option<String> {
    let is_indented = |l: &str| l.starts_with("    ") || l.starts_with('\t');
    let lines: Vec<&str> = raw.lines().collect();
    let start = lines.iter().position(|l| is_indented(l) && !l.trim().is_empty())?;
    let mut end = start;
    while end < lines.len() && (is_indented(lines[end]) || lines[end].trim().is_empty()) {
        end += 1;
    }
    let block: Vec<String> = lines[start..end]
        .iter()
        .map(|l| {
            l.strip_prefix('\t')
                .or_else(|| l.strip_prefix("    "))
                .unwrap_or("")
                .to_string()
        })
        .collect();
    Some(block.join("\n").trim_end().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationResult {
    pub raw_text: String,
    #[serde(serialize_with = "ser_program")]
    pub program: Program,
    pub grounding: Vec<Grounding>,
    pub prompt_hash: String,
}

fn ser_program<S: serde::Serializer>(p: &Program, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&print_ir(p))
}

impl GenerationResult {
    pub fn hallucinated(&self) -> Vec<&str> {
        self.grounding
            .iter()
            .filter(|g| g.verdict == Verdict::Hallucinated)
            .map(|g| g.callee.as_str())
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("generated code does not parse: {source}")]
    Syntax {
        source: SyntaxError,
        raw_text: String,
    },
    #[error("prior workflow cannot be decompiled: {0}")]
    Decompile(#[from] DecompileError),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

impl GenerationError {
    /// Model output behind the failure, when there was one.
    pub fn raw_text(&self) -> Option<&str> {
        match self {
            GenerationError::Extraction(e) => Some(&e.raw_text),
            GenerationError::Syntax { raw_text, .. } => Some(raw_text),
            _ => None,
        }
    }
}

pub fn generate_ir(
    bundle: &PromptBundle,
    provider: &dyn Provider,
    catalog: &Catalog,
    case_uid: Option<u64>,
    max_tokens: usize,
) -> Result<GenerationResult, GenerationError> {
    let prompt = bundle.render();
    let raw_text = provider.complete(&Completion {
        prompt: &prompt,
        max_tokens,
        case_uid,
        utterance: &bundle.utterance,
    })?;
    let code = extract_code(&raw_text)?;
    let program = parse_ir(&code).map_err(|source| GenerationError::Syntax {
        source,
        raw_text: raw_text.clone(),
    })?;
    Ok(GenerationResult {
        grounding: ground(&program, catalog),
        raw_text,
        program,
        prompt_hash: bundle.hash(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub activities: RetrieverConfig,
    pub demos: RetrieverConfig,
    pub max_tokens: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            activities: RetrieverConfig::new(RetrieverKind::EditDistance, 50),
            demos: RetrieverConfig::new(RetrieverKind::SimilarityBackend, 5),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Generated document plus what produced it.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub document: BpmnDocument,
    pub generation: GenerationResult,
    pub retrieved: Vec<String>,
    /// Set on the update path only.
    pub script: Option<EditScript>,
}

/// Per-request options for a pipeline run.
#[derive(Clone, Copy, Default)]
pub struct Request<'a> {
    pub case_uid: Option<u64>,
    /// Extra demo eligibility test (leave-one-out, cross-domain).
    pub demo_filter: Option<&'a (dyn Fn(&Demonstration) -> bool + Sync)>,
}

/// Retrieval indexes plus provider; immutable once built.
pub struct Pipeline<'a> {
    catalog: &'a Catalog,
    activities: ActivityRetriever<'a>,
    demos: DemoRetriever<'a>,
    config: PipelineConfig,
    provider: &'a dyn Provider,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        catalog: &'a Catalog,
        demos: &'a [Demonstration],
        config: PipelineConfig,
        provider: &'a dyn Provider,
    ) -> Self {
        Self {
            catalog,
            activities: ActivityRetriever::new(catalog, config.activities.kind),
            demos: DemoRetriever::new(demos, config.demos.kind),
            config,
            provider,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn provider(&self) -> &dyn Provider {
        self.provider
    }

    pub fn retrieve_activities(&self, utterance: &str, prior: Option<&Program>) -> Vec<ActivityEntry> {
        self.activities
            .retrieve(utterance, prior, self.config.activities.top_k)
    }

    fn generate(
        &self,
        utterance: &str,
        prior: Option<&Program>,
        request: Request<'_>,
    ) -> Result<(GenerationResult, Vec<String>), GenerationError> {
        let activities = self.retrieve_activities(utterance, prior);
        let demos = self.demos.retrieve_filtered(
            utterance,
            prior.is_some(),
            self.config.demos.top_k,
            |d| request.demo_filter.is_none_or(|f| f(d)),
        );
        let bundle = assemble_prompt(utterance, &activities, &demos, prior);
        let generation = generate_ir(
            &bundle,
            self.provider,
            self.catalog,
            request.case_uid,
            self.config.max_tokens,
        )?;
        Ok((generation, activities.into_iter().map(|a| a.id).collect()))
    }

    pub fn run_initial(&self, utterance: &str, request: Request<'_>) -> Result<Outcome, GenerationError> {
        let (generation, retrieved) = self.generate(utterance, None, request)?;
        Ok(Outcome {
            document: compile(&generation.program),
            generation,
            retrieved,
            script: None,
        })
    }

    /// Hallucinated activities are reported in the outcome, not rejected.
    pub fn run_update(
        &self,
        utterance: &str,
        prior_doc: &BpmnDocument,
        request: Request<'_>,
    ) -> Result<Outcome, GenerationError> {
        let prior = decompile(prior_doc)?;
        let (generation, retrieved) = self.generate(utterance, Some(&prior), request)?;
        let script = diff_ir(&prior, &generation.program);
        let document = patch_bpmn(prior_doc, &script)?;
        Ok(Outcome {
            document,
            generation,
            retrieved,
            script: Some(script),
        })
    }
}

pub fn run_initial(
    utterance: &str,
    catalog: &Catalog,
    demos: &[Demonstration],
    config: PipelineConfig,
    provider: &dyn Provider,
) -> Result<Outcome, GenerationError> {
    Pipeline::new(catalog, demos, config, provider).run_initial(utterance, Request::default())
}

pub fn run_update(
    utterance: &str,
    prior_doc: &BpmnDocument,
    catalog: &Catalog,
    demos: &[Demonstration],
    config: PipelineConfig,
    provider: &dyn Provider,
) -> Result<Outcome, GenerationError> {
    Pipeline::new(catalog, demos, config, provider).run_update(utterance, prior_doc, Request::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_prefers_fences() {
        let raw = "Sure:\n    ignored = X()\n```python\nissue = GitHub_Issue__3_0_0__create_Issue()\n```\n";
        assert_eq!(extract_code(raw).unwrap(), "issue = GitHub_Issue__3_0_0__create_Issue()");
    }

    #[test]
    fn extraction_falls_back_to_indentation() {
        let raw = "Here it is\n\n    a = A()\n    for x in a:\n        B()\n\nDone.";
        assert_eq!(extract_code(raw).unwrap(), "a = A()\nfor x in a:\n    B()");
        assert!(extract_code("I cannot help with that.").is_err());
        assert!(extract_code("```python\n```").is_err());
    }

    #[test]
    fn provider_specs_parse() {
        assert_eq!(
            "mock-table:t.yaml".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::MockTable("t.yaml".into())
        );
        assert_eq!("http".parse::<ProviderSpec>().unwrap(), ProviderSpec::Http(None));
        assert_eq!(
            "http:http://h:1/x".parse::<ProviderSpec>().unwrap(),
            ProviderSpec::Http(Some("http://h:1/x".into()))
        );
        assert!("mock-oracle".parse::<ProviderSpec>().is_err());
        let err = "gpt".parse::<ProviderSpec>().unwrap_err();
        assert!(err.to_string().contains("mock-table"));
    }
}
