mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use proptest::prelude::*;

use flowgen_core::bench::{
    exact_match, hallucination_rate, load_dataset, recall_sweep, run_eval, syntax_f1, BenchCase, DomainMode,
    EvalOptions, EvalReport,
};
use flowgen_core::generate::{mock_oracle, Completion, MockTable, PipelineConfig, Provider, ProviderError};
use flowgen_core::ir::{collect_activities, parse_ir, print_ir, Program};
use flowgen_core::retrieval::{ActivityEntry, Catalog, RetrieverKind};

fn p(src: &str) -> Program {
    parse_ir(src).unwrap()
}

fn dataset() -> Vec<BenchCase> {
    load_dataset(&common::flowbench_dir()).unwrap()
}

fn options(domain: DomainMode) -> EvalOptions {
    EvalOptions {
        config: PipelineConfig::default(),
        domain,
        jobs: 0,
    }
}

fn oracle(cases: &[BenchCase]) -> MockTable {
    mock_oracle(cases.iter().map(|c| (c.uid, c.utterance.as_str(), &c.expected_sequence)))
}

/// Same scores, ignoring wall-clock time.
fn same_scores(a: &EvalReport, b: &EvalReport) -> bool {
    a.cases == b.cases && a.aggregates == b.aggregates && a.by_tag == b.by_tag && a.config == b.config
}

#[test]
fn figure_one_case_loads() {
    let cases = dataset();
    let c = cases.iter().find(|c| c.uid == 97).unwrap();
    assert_eq!(c.tags.iter().collect::<Vec<_>>(), ["conditional_update"]);
    assert!(c.utterance.starts_with("Instead of retrieving all the issues"));
    let prior = c.prior_sequence.as_ref().unwrap();
    assert!(print_ir(prior).contains("for repo in repositories:"));
    assert_eq!(
        collect_activities(&c.expected_sequence),
        ["GitHub_Repository__3_0_0__retrievewithwhere_Repository", "GitHub_Issue__3_0_0__create_Issue"]
    );
    assert!(c.prior_context.as_sequence().is_some_and(|s| s.is_empty()));
    assert!(c.prior_bpmn.is_some());
}

#[test]
fn corpus_has_101_cases() {
    let cases = dataset();
    assert_eq!(cases.len(), 101);
    let uids: Vec<u64> = cases.iter().map(|c| c.uid).collect();
    assert_eq!(uids, (1..=101).collect::<Vec<_>>());
}

fn copy_case_97(dir: &Path, with_output: bool) {
    let src = common::flowbench_dir();
    std::fs::create_dir_all(dir.join("context")).unwrap();
    std::fs::create_dir_all(dir.join("output")).unwrap();
    std::fs::copy(src.join("uid_97.yaml"), dir.join("uid_97.yaml")).unwrap();
    std::fs::copy(src.join("context/uid_97_context.bpmn"), dir.join("context/uid_97_context.bpmn")).unwrap();
    if with_output {
        std::fs::copy(src.join("output/uid_97_output.bpmn"), dir.join("output/uid_97_output.bpmn")).unwrap();
    }
}

#[test]
fn missing_reference_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    copy_case_97(dir.path(), true);
    assert_eq!(load_dataset(dir.path()).unwrap().len(), 1);
    std::fs::remove_file(dir.path().join("output/uid_97_output.bpmn")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.file.ends_with("output/uid_97_output.bpmn"), "{err}");
}

#[test]
fn loader_rejects_broken_cases() {
    let dir = tempfile::tempdir().unwrap();
    copy_case_97(dir.path(), true);
    let yaml = std::fs::read_to_string(dir.path().join("uid_97.yaml")).unwrap();
    std::fs::write(dir.path().join("bad.yaml"), "input: [").unwrap();
    assert!(load_dataset(dir.path()).unwrap_err().file.ends_with("bad.yaml"));
    std::fs::remove_file(dir.path().join("bad.yaml")).unwrap();
    let mismatch = yaml.replace("new_issue = GitHub_Issue__3_0_0__retrievewithwhere_Issue()", "new_issue = GitHub_Issue__3_0_0__delete_Issue()");
    std::fs::write(dir.path().join("uid_97.yaml"), mismatch).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.reason.contains("does not match"), "{err}");
    std::fs::write(dir.path().join("uid_97.yaml"), &yaml).unwrap();
    std::fs::write(dir.path().join("copy.yaml"), &yaml).unwrap();
    assert!(load_dataset(dir.path()).unwrap_err().reason.contains("twice"));
}

#[test]
fn exact_match_examples() {
    let gold = p("repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()\nfor repo in repositories:\n  updated_issue = GitHub_Issue__3_0_0__create_Issue()");
    let renamed = p("repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()\nfor repo in repositories:\n  new_issue = GitHub_Issue__3_0_0__create_Issue()");
    assert_eq!(exact_match(&gold, &gold), 1.0);
    assert_eq!(exact_match(&renamed, &gold), 1.0);
    let longer = p(&format!("{}\nextra = Slack_Message__1_0_0__create_Message()", print_ir(&gold)));
    assert_eq!(exact_match(&longer, &gold), 0.0);
    assert_eq!(exact_match(&p("a = A(\"x\")"), &p("a = A(\"y\")")), 0.0);
}

fn small_catalog() -> Catalog {
    Catalog::new(
        ["A", "B"]
            .iter()
            .map(|id| ActivityEntry { id: id.to_string(), description: String::new() })
            .collect(),
    )
    .unwrap()
}

#[test]
fn hallucination_examples() {
    let c = small_catalog();
    assert_eq!(hallucination_rate(&p("a = A()\nb = B()"), &c), 0.0);
    assert_eq!(hallucination_rate(&p("a = A()\nz = Z()"), &c), 0.5);
    assert_eq!(hallucination_rate(&p("user_task(\"x\")\nuser_task(\"y\")"), &c), 0.0);
}

#[test]
fn syntax_f1_examples() {
    let gold = p("a = A()\nb = B()");
    assert_eq!(syntax_f1(&gold, &gold), 1.0);
    assert!((syntax_f1(&p("a = A()"), &gold) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(oracle_f1(&p("a = A()"), &gold), (1.0, 0.5));
    assert_eq!(syntax_f1(&p("c = C()"), &gold), 0.0);
    // A call moved into a loop no longer matches; the loop itself is new.
    let moved = p("for x in xs:\n  a = A()\nb = B()");
    assert!((syntax_f1(&moved, &gold) - 0.4).abs() < 1e-12);
}

/// Features read straight off the printed text: the ancestor path is the
/// stack of enclosing headers, found by indentation.
fn text_features(program: &Program) -> Vec<String> {
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut out = Vec::new();
    for line in print_ir(program).lines() {
        let depth = line.len() - line.trim_start().len();
        let text = line.trim();
        while stack.last().is_some_and(|(d, _)| *d >= depth) {
            stack.pop();
        }
        let path: Vec<&str> = stack.iter().map(|(_, k)| k.as_str()).collect();
        let head = text.split_whitespace().next().unwrap_or_default();
        let label = match head {
            "for" | "while" | "if" => head.to_string(),
            "else:" => {
                stack.push((depth, "else".into()));
                continue;
            }
            _ => {
                let call = text.split_once(" = ").map_or(text, |(_, c)| c);
                call[..call.find('(').unwrap()].to_string()
            }
        };
        out.push(format!("{}|{label}", path.join("/")));
        if matches!(head, "for" | "while" | "if") {
            stack.push((depth, head.to_string()));
        }
    }
    out
}

/// Precision and recall by removing matches one at a time.
fn oracle_f1(generated: &Program, gold: &Program) -> (f64, f64) {
    let g = text_features(generated);
    let mut t = text_features(gold);
    let mut matched = 0;
    for f in &g {
        if let Some(i) = t.iter().position(|x| x == f) {
            t.remove(i);
            matched += 1;
        }
    }
    let gold_n = text_features(gold).len();
    let p = if g.is_empty() { 0.0 } else { matched as f64 / g.len() as f64 };
    let r = if gold_n == 0 { 0.0 } else { matched as f64 / gold_n as f64 };
    (p, r)
}

fn program() -> impl Strategy<Value = Program> {
    let leaf = prop_oneof![
        (0..4u8).prop_map(|i| format!("v = Act{i}()")),
        Just("user_task(\"check\")".to_string()),
    ];
    let block = (leaf.clone(), proptest::collection::vec(leaf.clone(), 1..3), 0..4u8).prop_map(|(l, body, k)| {
        let inner: Vec<String> = body.iter().map(|s| format!("  {s}")).collect();
        match k {
            0 => l,
            1 => format!("for x in xs:\n{}", inner.join("\n")),
            2 => format!("while more:\n{}", inner.join("\n")),
            _ => format!("if ok:\n{}\nelse:\n  {l}", inner.join("\n")),
        }
    });
    proptest::collection::vec(block, 1..5).prop_map(|blocks| parse_ir(&blocks.join("\n")).unwrap())
}

proptest! {
    #[test]
    fn syntax_f1_agrees_with_text_oracle(a in program(), b in program()) {
        let (pr, rc) = oracle_f1(&a, &b);
        let want = if pr + rc == 0.0 { 0.0 } else { 2.0 * pr * rc / (pr + rc) };
        let got = syntax_f1(&a, &b);
        prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((syntax_f1(&b, &a) - got).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_bounded_and_consistent(a in program(), b in program()) {
        let c = Catalog::new(vec![ActivityEntry { id: "Act0".into(), description: "x".into() }]).unwrap();
        let em = exact_match(&a, &b);
        prop_assert!(em == 0.0 || em == 1.0);
        prop_assert!((0.0..=1.0).contains(&hallucination_rate(&a, &c)));
        if em == 1.0 {
            prop_assert_eq!(syntax_f1(&a, &b), 1.0);
            prop_assert_eq!(hallucination_rate(&a, &c), hallucination_rate(&b, &c));
        }
    }
}

#[test]
fn oracle_eval_is_perfect_in_both_modes() {
    let cases = dataset();
    let catalog = common::flowbench_catalog();
    let provider = oracle(&cases);
    for domain in [DomainMode::In, DomainMode::Cross] {
        let report = run_eval(&cases, &catalog, &provider, &options(domain));
        let a = &report.aggregates;
        assert_eq!((a.cases, a.errored), (101, 0));
        assert_eq!(a.exact_match, 1.0);
        assert_eq!(a.hallucination_rate, 0.0);
        assert_eq!(a.syntax_f1, 1.0);
        assert_eq!(a.bpmn_match, 1.0);
        assert_eq!(report.by_tag.values().map(|g| g.cases).sum::<usize>(), 101);
    }
}

#[test]
fn one_wrong_answer_costs_one_case() {
    let cases = dataset();
    let catalog = common::flowbench_catalog();
    let mut table: HashMap<String, String> = cases
        .iter()
        .map(|c| (c.uid.to_string(), format!("```\n{}\n```", print_ir(&c.expected_sequence))))
        .collect();
    table.insert("5".into(), "```\nwrong = Nope__1_0_0__do_Nothing()\n```".into());
    let provider = MockTable::new("mock_table", table);
    let report = run_eval(&cases, &catalog, &provider, &options(DomainMode::In));
    assert!((report.aggregates.exact_match - 100.0 / 101.0).abs() < 1e-12);
    let bad = report.cases.iter().find(|c| c.uid == 5).unwrap();
    assert_eq!((bad.exact_match, bad.hallucination_rate), (0.0, 1.0));
    assert!(bad.error.is_none());
}

/// Fails on even uids.
struct Flaky(MockTable);

impl Provider for Flaky {
    fn name(&self) -> String {
        "flaky".into()
    }

    fn max_in_flight(&self) -> Option<usize> {
        Some(2)
    }

    fn complete(&self, r: &Completion<'_>) -> Result<String, ProviderError> {
        match r.case_uid {
            Some(u) if u % 2 == 0 => Err(ProviderError::Transport("connection reset".into())),
            _ => self.0.complete(r),
        }
    }
}

#[test]
fn errors_score_zero_but_do_not_abort() {
    let cases = dataset();
    let catalog = common::flowbench_catalog();
    let report = run_eval(&cases, &catalog, &Flaky(oracle(&cases)), &options(DomainMode::In));
    let a = &report.aggregates;
    assert_eq!((a.cases, a.errored), (101, 50));
    assert!((a.exact_match - 51.0 / 101.0).abs() < 1e-12);
    assert!((a.syntax_f1 - 51.0 / 101.0).abs() < 1e-12);
    assert_eq!(a.hallucination_rate, 0.0);
    assert_eq!(report.config.jobs.min(2), report.config.jobs);
    let failed = report.cases.iter().find(|c| c.uid == 2).unwrap();
    assert!(failed.error.as_deref().unwrap().contains("connection reset"));
    assert!(failed.activities_recall > 0.0);
}

#[test]
fn reports_repeat_and_render() {
    let cases = dataset();
    let catalog = common::flowbench_catalog();
    let provider = oracle(&cases);
    let a = run_eval(&cases, &catalog, &provider, &options(DomainMode::Cross));
    let b = run_eval(&cases, &catalog, &provider, &EvalOptions { jobs: 1, ..options(DomainMode::Cross) });
    let mut b_cfg = b.clone();
    b_cfg.config.jobs = a.config.jobs;
    assert!(same_scores(&a, &b_cfg));
    let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(json["cases"].as_array().unwrap().len(), 101);
    assert!(json["aggregates"]["exact_match"].is_number());
    assert!(json["note"].as_str().unwrap().contains("syntax_f1"));
    let table = a.to_table();
    assert!(table.lines().any(|l| l.starts_with("total") && l.contains("1.0000")));
    let hashes: BTreeMap<u64, Option<String>> = a.cases.iter().map(|c| (c.uid, c.prompt_hash.clone())).collect();
    assert!(hashes.values().all(Option::is_some));
}

#[test]
fn recall_sweep_is_monotone() {
    let cases = dataset();
    let catalog = common::flowbench_catalog();
    for kind in [RetrieverKind::EditDistance, RetrieverKind::SimilarityBackend] {
        let sweep = recall_sweep(&cases, &catalog, kind, &[1, 10, 50, 100, 300]);
        for w in sweep.windows(2) {
            assert!(w[0].1 <= w[1].1, "{kind:?} {sweep:?}");
        }
        assert_eq!(sweep.last().unwrap().1, 1.0);
    }
}
