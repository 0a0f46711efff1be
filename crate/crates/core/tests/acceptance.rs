//! Acceptance criteria for the whole pipeline. Each criterion prints one
//! PASS/FAIL line; the test fails if any gated criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::io::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use flowgen_core::bench::{
    exact_match, hallucination_rate, load_dataset, recall_sweep, run_eval, syntax_f1, BenchCase, DomainMode,
    EvalOptions,
};
use flowgen_core::bpmn::serialize_bpmn;
use flowgen_core::bpmn2py::decompile;
use flowgen_core::diff::{apply_ir, diff_ir, patch_bpmn};
use flowgen_core::generate::{
    assemble_prompt, generate_ir, mock_oracle, Completion, MockTable, PipelineConfig, Provider, ProviderError,
    Verdict,
};
use flowgen_core::ir::{normalize_ir, parse_ir, print_ir, Program};
use flowgen_core::py2bpmn::{compile, structural_equal};
use flowgen_core::retrieval::{
    activities_recall, levenshtein, load_catalog, retrieve_activities, retrieve_demos, ActivityEntry, Catalog,
    Demonstration, RetrieverConfig, RetrieverKind,
};

const ED_TARGET: f64 = 0.81;
const ED_TOLERANCE: f64 = 0.08;

type Verdict8 = Result<String, String>;
type Check<'a> = (&'static str, Box<dyn Fn() -> bool + 'a>);

struct Run {
    cases: Vec<BenchCase>,
    catalog: Catalog,
}

fn report(n: u8, gated: bool, result: &Verdict8) -> bool {
    let line = match (result, gated) {
        (Ok(detail), _) => format!("criterion {n}: PASS  {detail}"),
        (Err(detail), true) => format!("criterion {n}: FAIL  {detail}"),
        (Err(detail), false) => format!("criterion {n}: MISS (reported, not gated)  {detail}"),
    };
    // Written to the raw handle so the line shows even when output is captured.
    let _ = writeln!(std::io::stdout().lock(), "{line}");
    result.is_ok() || !gated
}

fn programs(run: &Run) -> Vec<&Program> {
    run.cases
        .iter()
        .flat_map(|c| c.prior_sequence.iter().chain([&c.expected_sequence]))
        .collect()
}

fn ir_round_trip(run: &Run) -> Verdict8 {
    let all = programs(run);
    let started = Instant::now();
    let mut bad = Vec::new();
    for p in &all {
        let once = print_ir(p);
        let twice = parse_ir(&once).map(|q| print_ir(&q));
        if twice.as_deref() != Ok(once.as_str()) {
            bad.push(once);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if !bad.is_empty() {
        return Err(format!("{} of {} sequences are not fixed points", bad.len(), all.len()));
    }
    if secs >= 1.0 {
        return Err(format!("took {secs:.3}s"));
    }
    Ok(format!("{} sequences, {secs:.4}s", all.len()))
}

fn bpmn_round_trip(run: &Run) -> Verdict8 {
    let mut pairs: Vec<(u64, &Program, &flowgen_core::bpmn::BpmnDocument)> = Vec::new();
    for c in &run.cases {
        if let (Some(p), Some(d)) = (&c.prior_sequence, &c.prior_bpmn) {
            pairs.push((c.uid, p, d));
        }
        pairs.push((c.uid, &c.expected_sequence, &c.expected_bpmn));
    }
    let bad: Vec<u64> = pairs
        .par_iter()
        .filter(|(_, program, doc)| {
            let back = decompile(doc).map(|b| normalize_ir(&b));
            back.as_ref() != Ok(&normalize_ir(program)) || !structural_equal(&compile(program), doc)
        })
        .map(|(uid, _, _)| *uid)
        .collect();
    if bad.is_empty() {
        Ok(format!("{} sequence/diagram pairs", pairs.len()))
    } else {
        Err(format!("mismatching uids {bad:?}"))
    }
}

fn diff_commutation(run: &Run) -> Verdict8 {
    let updates: Vec<&BenchCase> = run.cases.iter().filter(|c| c.prior_bpmn.is_some()).collect();
    let bad: Vec<String> = updates
        .par_iter()
        .filter_map(|c| {
            let prior_doc = c.prior_bpmn.as_ref()?;
            let prior = c.prior_sequence.as_ref()?;
            let script = diff_ir(prior, &c.expected_sequence);
            let patched = match patch_bpmn(prior_doc, &script) {
                Ok(p) => p,
                Err(e) => return Some(format!("uid {}: {e}", c.uid)),
            };
            if !structural_equal(&patched, &c.expected_bpmn) {
                return Some(format!("uid {}: differs from expected diagram", c.uid));
            }
            let drift = common::drift(prior_doc, &patched, &script);
            (!drift.is_empty()).then(|| format!("uid {}: {}", c.uid, drift.join("; ")))
        })
        .collect();
    if bad.is_empty() {
        Ok(format!("{} update cases", updates.len()))
    } else {
        Err(bad.join(" | "))
    }
}

fn exhaustive_oracle() -> Verdict8 {
    let programs = common::toy::all_programs();
    let normalized: Vec<Program> = programs.iter().map(normalize_ir).collect();
    let decompile_bad = programs
        .par_iter()
        .zip(&normalized)
        .filter(|(p, n)| decompile(&compile(p)).map(|b| normalize_ir(&b)).as_ref() != Ok(*n))
        .count();
    let diff_bad: usize = programs
        .par_iter()
        .map(|base| {
            normalized
                .iter()
                .zip(&programs)
                .filter(|(want, target)| {
                    let script = diff_ir(base, target);
                    apply_ir(base, &script).map(|p| normalize_ir(&p)).as_ref() != Ok(*want)
                })
                .count()
        })
        .sum();
    let n = programs.len();
    if decompile_bad + diff_bad == 0 {
        Ok(format!("{n} programs, {} ordered pairs", n * n))
    } else {
        Err(format!("{decompile_bad} decompile failures, {diff_bad} diff failures over {n} programs"))
    }
}

fn oracle_end_to_end(run: &Run) -> Verdict8 {
    let provider = mock_oracle(run.cases.iter().map(|c| (c.uid, c.utterance.as_str(), &c.expected_sequence)));
    let options = EvalOptions {
        config: PipelineConfig::default(),
        domain: DomainMode::In,
        jobs: 1,
    };
    let started = Instant::now();
    let report = run_eval(&run.cases, &run.catalog, &provider, &options);
    let secs = started.elapsed().as_secs_f64();
    let a = &report.aggregates;
    let detail = format!(
        "{} cases, exact_match {:.4}, hallucination {:.4}, syntax_f1 {:.4}, {secs:.2}s single-threaded",
        a.cases, a.exact_match, a.hallucination_rate, a.syntax_f1
    );
    if a.cases == 101 && a.exact_match == 1.0 && a.hallucination_rate == 0.0 && a.syntax_f1 == 1.0 && secs < 30.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn compression(run: &Run) -> Verdict8 {
    let ratios: Vec<f64> = run
        .cases
        .iter()
        .map(|c| {
            let xml = serialize_bpmn(&compile(&c.expected_sequence)).unwrap();
            xml.len() as f64 / print_ir(&c.expected_sequence).len() as f64
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let detail = format!("mean BPMN/IR byte ratio {mean:.1} over {} expected sequences", ratios.len());
    if mean >= 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Returns (monotone verdict, calibration verdict).
fn ed_calibration(run: &Run) -> (Verdict8, Verdict8) {
    let sweep = recall_sweep(&run.cases, &run.catalog, RetrieverKind::EditDistance, &[10, 50, 100]);
    let text: Vec<String> = sweep.iter().map(|(k, r)| format!("@{k} {r:.4}")).collect();
    let text = text.join(", ");
    let monotone = sweep.windows(2).all(|w| w[0].1 < w[1].1);
    let at_100 = sweep[2].1;
    let mono = if monotone {
        Ok(format!("ED recall strictly increasing: {text}"))
    } else {
        Err(format!("ED recall not strictly increasing: {text}"))
    };
    let band = format!("ED recall@100 {at_100:.4}, target {ED_TARGET} +/- {ED_TOLERANCE}");
    let calib = if (at_100 - ED_TARGET).abs() <= ED_TOLERANCE {
        Ok(band)
    } else {
        Err(band)
    };
    (mono, calib)
}

struct Fixed(&'static str);

impl Provider for Fixed {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn complete(&self, _: &Completion<'_>) -> Result<String, ProviderError> {
        Ok(self.0.to_string())
    }
}

fn p(src: &str) -> Program {
    parse_ir(src).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// The worked examples for metrics, retrieval and grounding, checked in one place.
fn metric_suite(run: &Run) -> Verdict8 {
    let gold_fig1 = p("repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()\nfor repo in repositories:\n  updated_issue = GitHub_Issue__3_0_0__create_Issue()");
    let gen_fig1 = p("repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()\nfor repo in repositories:\n  new_issue = GitHub_Issue__3_0_0__create_Issue()");
    let ab = Catalog::new(
        ["A", "B"]
            .iter()
            .map(|id| ActivityEntry { id: id.to_string(), description: format!("do {id}") })
            .collect(),
    )
    .unwrap();
    let gold_ab: BTreeSet<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
    let demo = |u: &str, prior: Option<&str>| Demonstration {
        uid: None,
        utterance: u.into(),
        prior_sequence: prior.map(p),
        expected: p("x = X()"),
        tags: BTreeSet::new(),
    };

    let checks: Vec<Check<'_>> = vec![
        ("exact_match identical", Box::new(|| exact_match(&gold_fig1, &gold_fig1) == 1.0)),
        ("exact_match alpha-renamed", Box::new(|| exact_match(&gen_fig1, &gold_fig1) == 1.0)),
        ("exact_match extra statement", Box::new(|| {
            exact_match(&p(&format!("{}\nz = Z()", print_ir(&gold_fig1))), &gold_fig1) == 0.0
        })),
        ("hallucination all known", Box::new(|| hallucination_rate(&p("a = A()\nb = B()"), &ab) == 0.0)),
        ("hallucination one unknown", Box::new(|| hallucination_rate(&p("a = A()\nq = Q()"), &ab) == 0.5)),
        ("hallucination user tasks only", Box::new(|| hallucination_rate(&p("user_task(\"x\")"), &ab) == 0.0)),
        ("syntax_f1 identical", Box::new(|| syntax_f1(&gold_fig1, &gold_fig1) == 1.0)),
        ("syntax_f1 prefix", Box::new(|| close(syntax_f1(&p("a = A()"), &p("a = A()\nb = B()")), 2.0 / 3.0))),
        ("syntax_f1 disjoint", Box::new(|| syntax_f1(&p("c = C()"), &p("a = A()\nb = B()")) == 0.0)),
        ("recall superset", Box::new(|| activities_recall(&["A", "B", "C"], &gold_ab) == 1.0)),
        ("recall half", Box::new(|| activities_recall(&["A"], &gold_ab) == 0.5)),
        ("recall empty gold", Box::new(|| activities_recall(&["A"], &BTreeSet::new()) == 1.0)),
        ("levenshtein kitten/sitting", Box::new(|| levenshtein("kitten", "sitting") == 3)),
        ("catalog listing", Box::new(|| {
            load_catalog(r#"[{"id": "Jira_Issue__2_0_0__retrievewithwhere_Issue", "description": "Retrieve all Jira issues"}]"#)
                .is_ok_and(|c| c.len() == 1 && c.contains("Jira_Issue__2_0_0__retrievewithwhere_Issue"))
        })),
        ("catalog empty", Box::new(|| load_catalog("[]").is_ok_and(|c| c.is_empty()))),
        ("catalog duplicate", Box::new(|| {
            load_catalog(r#"[{"id": "A", "description": ""}, {"id": "A", "description": ""}]"#).is_err()
        })),
        ("retrieve identity first", Box::new(|| {
            let e = &run.catalog.entries()[17];
            retrieve_activities(&e.description, None, &run.catalog, &RetrieverConfig::new(RetrieverKind::EditDistance, 5))[0] == *e
        })),
        ("retrieve forces prior", Box::new(|| {
            let prior = p("i = GitHub_Issue__3_0_0__create_Issue()");
            retrieve_activities("send an invoice", Some(&prior), &run.catalog, &RetrieverConfig::new(RetrieverKind::EditDistance, 1))
                [0]
                .id
                == "GitHub_Issue__3_0_0__create_Issue"
        })),
        ("demos shortlisted by prior", Box::new(|| {
            let pool = [demo("a", Some("y = Y()")), demo("a", None)];
            let got = retrieve_demos("a", Some(&p("y = Y()")), &pool, &RetrieverConfig::new(RetrieverKind::SimilarityBackend, 5));
            got.len() == 1 && got[0].prior_sequence.is_some()
        })),
        ("demos pool smaller than top_k", Box::new(|| {
            let pool = [demo("a", None), demo("b", None)];
            retrieve_demos("b", None, &pool, &RetrieverConfig::new(RetrieverKind::EditDistance, 9)).len() == 2
        })),
        ("demos identical utterance first", Box::new(|| {
            let pool = [demo("sync the tickets", None), demo("post a message", None)];
            [RetrieverKind::EditDistance, RetrieverKind::SimilarityBackend].iter().all(|&k| {
                retrieve_demos("post a message", None, &pool, &RetrieverConfig::new(k, 1))[0].utterance == "post a message"
            })
        })),
        ("prompt without prior", Box::new(|| assemble_prompt("u", run.catalog.entries(), &[], None).prior_block.is_none())),
        ("fenced answer parses", Box::new(|| {
            let bundle = assemble_prompt("u", &run.catalog.entries()[..1], &[], None);
            generate_ir(&bundle, &Fixed("```python\nissue = GitHub_Issue__3_0_0__create_Issue()\n```"), &run.catalog, None, 8)
                .is_ok_and(|r| r.program.statements.len() == 1 && r.grounding[0].verdict == Verdict::InCatalog)
        })),
        ("grounding split", Box::new(|| {
            let bundle = assemble_prompt("u", &run.catalog.entries()[..1], &[], None);
            generate_ir(&bundle, &Fixed("```\na = GitHub_Issue__3_0_0__create_Issue()\nb = Nope()\n```"), &run.catalog, None, 8)
                .is_ok_and(|r| {
                    r.grounding.iter().map(|g| g.verdict).collect::<Vec<_>>() == [Verdict::InCatalog, Verdict::Hallucinated]
                        && hallucination_rate(&r.program, &run.catalog) == 0.5
                })
        })),
        ("one wrong case of 101", Box::new(|| {
            let mut table: HashMap<String, String> = run
                .cases
                .iter()
                .map(|c| (c.uid.to_string(), format!("```\n{}\n```", print_ir(&c.expected_sequence))))
                .collect();
            table.insert("1".into(), "```\nw = Wrong()\n```".into());
            let options = EvalOptions { config: PipelineConfig::default(), domain: DomainMode::In, jobs: 0 };
            let r = run_eval(&run.cases, &run.catalog, &MockTable::new("mock_table", table), &options);
            close(r.aggregates.exact_match, 100.0 / 101.0)
        })),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, f)| !f()).map(|(name, _)| *name).collect();
    if failed.is_empty() {
        Ok(format!("{} worked examples", checks.len()))
    } else {
        Err(format!("failed: {}", failed.join(", ")))
    }
}

#[test]
fn acceptance() {
    let dir = common::flowbench_dir();
    let run = Run {
        cases: load_dataset(&dir).unwrap_or_else(|e| panic!("{e}")),
        catalog: common::flowbench_catalog(),
    };
    let _ = writeln!(
        std::io::stdout().lock(),
        "acceptance over {} cases from {}",
        run.cases.len(),
        dir.display()
    );
    let (monotone, calibration) = ed_calibration(&run);
    let criterion7 = match (&monotone, &calibration) {
        (Ok(m), Ok(c)) => Ok(format!("{m}; {c}")),
        (Ok(m), Err(c)) => Ok(format!("{m}; {c} (outside band, reported only)")),
        (Err(m), _) => Err(m.clone()),
    };
    let results = [
        (1, ir_round_trip(&run)),
        (2, bpmn_round_trip(&run)),
        (3, diff_commutation(&run)),
        (4, exhaustive_oracle()),
        (5, oracle_end_to_end(&run)),
        (6, compression(&run)),
        (7, criterion7),
        (8, metric_suite(&run)),
    ];
    let mut all = true;
    for (n, result) in &results {
        all &= report(*n, true, result);
    }
    report(7, false, &calibration);
    assert!(all, "gated acceptance criteria failed");
}
