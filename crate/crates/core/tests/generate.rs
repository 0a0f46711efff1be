mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;

use sha2::{Digest, Sha256};

use flowgen_core::bench::{load_dataset, BenchCase};
use flowgen_core::generate::{
    assemble_prompt, generate_ir, mock_oracle, Completion, GenerationError, HttpProvider, MockTable,
    Pipeline, PipelineConfig, Provider, ProviderError, Request, Verdict,
};
use flowgen_core::ir::{parse_ir, print_ir, Program};
use flowgen_core::py2bpmn::{compile, structural_equal};
use flowgen_core::retrieval::{ActivityEntry, Catalog, Demonstration};

const GOLDEN_PROMPT: &str = "tests/fixtures/prompts/uid_97_update.txt";
const GOLDEN_HASH: &str = "tests/fixtures/prompts/uid_97_update.sha256";

/// Provider that always answers with the same text.
struct Fixed(String);

impl Provider for Fixed {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn complete(&self, _: &Completion<'_>) -> Result<String, ProviderError> {
        Ok(self.0.clone())
    }
}

fn corpus() -> (Vec<BenchCase>, Catalog, Vec<Demonstration>) {
    let cases = load_dataset(&common::flowbench_dir()).unwrap();
    let demos = cases.iter().map(BenchCase::demonstration).collect();
    (cases, common::flowbench_catalog(), demos)
}

fn case(cases: &[BenchCase], uid: u64) -> &BenchCase {
    cases.iter().find(|c| c.uid == uid).unwrap()
}

fn fenced(p: &Program) -> String {
    format!("```python\n{}\n```", print_ir(p))
}

fn entries(n: usize) -> Vec<ActivityEntry> {
    (0..n)
        .map(|i| ActivityEntry {
            id: format!("Svc_Thing{i}__1_0_0__create_Thing{i}"),
            description: format!("Create thing number {i}"),
        })
        .collect()
}

#[test]
fn prompt_blocks_follow_the_inputs() {
    let activities = entries(50);
    let demos: Vec<Demonstration> = (0..5)
        .map(|i| Demonstration {
            uid: Some(i),
            utterance: format!("request {i}"),
            prior_sequence: None,
            expected: parse_ir(&format!("t = Svc_Thing{i}__1_0_0__create_Thing{i}()")).unwrap(),
            tags: Default::default(),
        })
        .collect();
    let refs: Vec<&Demonstration> = demos.iter().collect();
    let bundle = assemble_prompt("make a thing", &activities, &refs, None);
    assert!(bundle.prior_block.is_none());
    assert!(!bundle.render().contains("Current workflow"));
    let lines: Vec<&str> = bundle.activity_block.lines().collect();
    assert_eq!(lines.len(), 50);
    for (line, a) in lines.iter().zip(&activities) {
        assert!(line.starts_with(&a.id));
    }
    let requests: Vec<&str> = bundle
        .demo_block
        .lines()
        .filter(|l| l.starts_with("Request: "))
        .collect();
    assert_eq!(requests, (0..5).map(|i| format!("Request: request {i}")).collect::<Vec<_>>());

    let prior = parse_ir("repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()\nfor repo in repositories:\n  new_issue = GitHub_Issue__3_0_0__retrievewithwhere_Issue()").unwrap();
    let with_prior = assemble_prompt("make a thing", &activities, &refs, Some(&prior));
    assert!(with_prior.render().contains(&print_ir(&prior)));
    assert_eq!(with_prior.render(), assemble_prompt("make a thing", &activities, &refs, Some(&prior)).render());
    assert_ne!(with_prior.hash(), bundle.hash());
}

#[test]
fn fenced_answer_parses_and_is_grounded() {
    let (_, catalog, _) = corpus();
    let bundle = assemble_prompt("create an issue", &entries(1), &[], None);
    let provider = Fixed("```python\nissue = GitHub_Issue__3_0_0__create_Issue()\n```".into());
    let result = generate_ir(&bundle, &provider, &catalog, None, 64).unwrap();
    assert_eq!(result.program.statements.len(), 1);
    assert_eq!(result.grounding.len(), 1);
    assert_eq!(result.grounding[0].verdict, Verdict::InCatalog);

    let provider = Fixed(
        "```python\nissue = GitHub_Issue__3_0_0__create_Issue()\nx = Made_Up__1_0_0__do_Thing()\nuser_task(\"Check\")\n```"
            .into(),
    );
    let result = generate_ir(&bundle, &provider, &catalog, None, 64).unwrap();
    let verdicts: Vec<Verdict> = result.grounding.iter().map(|g| g.verdict).collect();
    assert_eq!(verdicts, [Verdict::InCatalog, Verdict::Hallucinated, Verdict::UserTask]);
    assert_eq!(result.hallucinated(), ["Made_Up__1_0_0__do_Thing"]);
    assert_eq!(
        flowgen_core::bench::hallucination_rate(&result.program, &catalog),
        0.5
    );
}

#[test]
fn prose_and_bad_code_are_reported() {
    let catalog = Catalog::default();
    let bundle = assemble_prompt("x", &entries(1), &[], None);
    let err = generate_ir(&bundle, &Fixed("I would rather not.".into()), &catalog, None, 8).unwrap_err();
    assert!(matches!(err, GenerationError::Extraction(_)));
    assert_eq!(err.raw_text(), Some("I would rather not."));
    let err = generate_ir(&bundle, &Fixed("```\nfor x in:\n```".into()), &catalog, None, 8).unwrap_err();
    assert!(matches!(err, GenerationError::Syntax { .. }));
    assert!(err.raw_text().unwrap().contains("for x in:"));
}

#[test]
fn oracle_initial_run_compiles_the_gold() {
    let (cases, catalog, demos) = corpus();
    let initial = cases.iter().find(|c| !c.is_update()).unwrap();
    let oracle = mock_oracle(cases.iter().map(|c| (c.uid, c.utterance.as_str(), &c.expected_sequence)));
    let pipeline = Pipeline::new(&catalog, &demos, PipelineConfig::default(), &oracle);
    let out = pipeline
        .run_initial(&initial.utterance, Request { case_uid: Some(initial.uid), demo_filter: None })
        .unwrap();
    assert!(structural_equal(&out.document, &compile(&initial.expected_sequence)));
    assert!(out.script.is_none());
}

#[test]
fn oracle_update_reproduces_the_appendix_output() {
    let (cases, catalog, demos) = corpus();
    let c97 = case(&cases, 97);
    let oracle = mock_oracle([(97, c97.utterance.as_str(), &c97.expected_sequence)]);
    let prior = c97.prior_bpmn.clone().unwrap();
    let out = flowgen_core::generate::run_update(&c97.utterance, &prior, &catalog, &demos, PipelineConfig::default(), &oracle).unwrap();
    assert!(structural_equal(&out.document, &c97.expected_bpmn));
    assert_eq!(out.script.as_ref().unwrap().len(), 1);
    for id in ["Activity_0cwpd7f", "Activity_0n3dkn6", "Activity_0sj4qjl", "StartEvent_1twgfyv"] {
        assert!(out.document.find_node(id).is_some(), "{id}");
    }
    assert_eq!(out.document.diagram, prior.diagram);
    assert!(out.generation.hallucinated().is_empty());
}

#[test]
fn echoing_the_prior_returns_it_unchanged() {
    let (cases, catalog, demos) = corpus();
    let c97 = case(&cases, 97);
    let prior = c97.prior_bpmn.clone().unwrap();
    let echo = Fixed(fenced(c97.prior_sequence.as_ref().unwrap()));
    let out = flowgen_core::generate::run_update(&c97.utterance, &prior, &catalog, &demos, PipelineConfig::default(), &echo).unwrap();
    assert!(out.script.unwrap().is_empty());
    assert_eq!(out.document, prior);
}

#[test]
fn hallucinations_warn_but_still_patch() {
    let (cases, catalog, demos) = corpus();
    let c97 = case(&cases, 97);
    let prior = c97.prior_bpmn.clone().unwrap();
    let answer = "repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()\nfor repo in repositories:\n  issue = GitHub_Issue__9_9_9__summon_Issue()";
    let out = flowgen_core::generate::run_update(
        &c97.utterance,
        &prior,
        &catalog,
        &demos,
        PipelineConfig::default(),
        &Fixed(format!("```python\n{answer}\n```")),
    )
    .unwrap();
    assert_eq!(out.generation.hallucinated(), ["GitHub_Issue__9_9_9__summon_Issue"]);
    assert!(structural_equal(&out.document, &compile(&parse_ir(answer).unwrap())));
}

#[test]
fn mock_table_reads_yaml() {
    let table = MockTable::from_yaml("97: \"```\\na = A()\\n```\"\n\"post a note\": \"```\\nb = B()\\n```\"\n").unwrap();
    assert_eq!(table.len(), 2);
    let ask = |uid, utterance| {
        table.complete(&Completion { prompt: "", max_tokens: 1, case_uid: uid, utterance })
    };
    assert!(ask(Some(97), "whatever").unwrap().contains("A()"));
    assert!(ask(None, "post  a\nnote").unwrap().contains("B()"));
    assert!(matches!(ask(Some(3), "other"), Err(ProviderError::Missing(_))));
}

/// Serves one HTTP exchange and hands back the raw request.
fn one_shot_server(status: &'static str, body: String) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream);
        let mut head = String::new();
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut payload = vec![0; length];
        reader.read_exact(&mut payload).unwrap();
        head.push_str(&String::from_utf8(payload).unwrap());
        let mut stream = reader.into_inner();
        write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        tx.send(head).unwrap();
    });
    (format!("http://{addr}/complete"), rx)
}

/// The update prompt for the appendix case, frozen on disk. Set
/// `FLOWGEN_BLESS=1` to re-record it after a deliberate template change.
#[test]
fn http_provider_sends_the_golden_prompt() {
    let (cases, catalog, demos) = corpus();
    let c97 = case(&cases, 97);
    let skip_self = |d: &Demonstration| d.uid != Some(97);
    let answer = fenced(&c97.expected_sequence);
    let (url, seen) = one_shot_server("200 OK", serde_json::json!({ "text": answer }).to_string());
    let provider = HttpProvider::new(url, Some("sekret".into()));
    let pipeline = Pipeline::new(&catalog, &demos, PipelineConfig::default(), &provider);
    let prior = c97.prior_bpmn.clone().unwrap();
    let out = pipeline
        .run_update(&c97.utterance, &prior, Request { case_uid: Some(97), demo_filter: Some(&skip_self) })
        .unwrap();
    assert!(structural_equal(&out.document, &c97.expected_bpmn));

    let request = seen.recv().unwrap();
    assert!(request.starts_with("POST /complete"));
    assert!(request.contains("Bearer sekret"));
    let body = &request[request.find("\r\n\r\n").unwrap() + 4..];
    let json: serde_json::Value = serde_json::from_str(body).unwrap();
    let prompt = json["prompt"].as_str().unwrap();
    assert_eq!(json["max_tokens"], PipelineConfig::default().max_tokens);
    let hash: String = Sha256::digest(prompt.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hash, out.generation.prompt_hash);

    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    if std::env::var_os("FLOWGEN_BLESS").is_some() {
        std::fs::create_dir_all(root.join("tests/fixtures/prompts")).unwrap();
        std::fs::write(root.join(GOLDEN_PROMPT), prompt).unwrap();
        std::fs::write(root.join(GOLDEN_HASH), format!("{hash}\n")).unwrap();
    }
    let golden = std::fs::read_to_string(root.join(GOLDEN_PROMPT)).unwrap();
    assert_eq!(prompt, golden);
    assert_eq!(hash, std::fs::read_to_string(root.join(GOLDEN_HASH)).unwrap().trim());
    assert!(prompt.contains("for repo in repositories:"));
}

#[test]
fn http_errors_surface() {
    let (url, _seen) = one_shot_server("503 Service Unavailable", "{\"error\": \"busy\"}".into());
    let provider = HttpProvider::new(url, None);
    let err = provider
        .complete(&Completion { prompt: "p", max_tokens: 1, case_uid: None, utterance: "u" })
        .unwrap_err();
    assert!(matches!(err, ProviderError::Status { status: 503, .. }), "{err:?}");

    let (url, _seen) = one_shot_server("200 OK", "{\"txt\": 1}".into());
    let err = HttpProvider::new(url, None)
        .complete(&Completion { prompt: "p", max_tokens: 1, case_uid: None, utterance: "u" })
        .unwrap_err();
    assert!(matches!(err, ProviderError::Malformed(_)));

    let err = HttpProvider::new("http://127.0.0.1:9/none", None)
        .complete(&Completion { prompt: "p", max_tokens: 1, case_uid: None, utterance: "u" })
        .unwrap_err();
    assert!(matches!(err, ProviderError::Transport(_)));
}

#[test]
fn every_call_gets_one_verdict() {
    let (cases, catalog, _) = corpus();
    for c in &cases {
        let result = generate_ir(
            &assemble_prompt(&c.utterance, &entries(1), &[], None),
            &Fixed(fenced(&c.expected_sequence)),
            &catalog,
            Some(c.uid),
            8,
        )
        .unwrap();
        let mut calls = 0;
        result.program.for_each_call(|_| calls += 1);
        assert_eq!(result.grounding.len(), calls);
        assert!(result.hallucinated().is_empty(), "uid {}", c.uid);
    }
}
