#![allow(dead_code)]

pub mod toy;

use std::collections::HashMap;

use flowgen_core::bpmn::{BpmnDocument, NodeKind};
use flowgen_core::diff::{EditOp, EditScript};

/// Parent subprocess (or "" for the process) of every task-like node.
fn task_parents(doc: &BpmnDocument) -> HashMap<String, String> {
    fn walk(scope: &flowgen_core::bpmn::Scope, parent: &str, out: &mut HashMap<String, String>) {
        for n in &scope.nodes {
            match &n.kind {
                NodeKind::Task | NodeKind::UserTask => {
                    out.insert(n.id.clone(), parent.to_string());
                }
                NodeKind::SubProcess { scope, .. } => walk(scope, &n.id, out),
                _ => {}
            }
        }
    }
    let mut out = HashMap::new();
    walk(&doc.root, "", &mut out);
    out
}

/// Geometry problems for tasks that survive the patch in the same parent.
/// Such tasks keep their size and vertical position; they keep their x as
/// well unless the script inserts or regroups statements.
pub fn drift(base: &BpmnDocument, patched: &BpmnDocument, script: &EditScript) -> Vec<String> {
    let may_shift = script.ops.iter().any(|op| {
        matches!(
            op,
            EditOp::InsertStmt { .. } | EditOp::WrapInLoop { .. } | EditOp::UnwrapLoop { .. }
        )
    });
    let before = task_parents(base);
    let after = task_parents(patched);
    let mut problems = Vec::new();
    for (id, parent) in &before {
        if after.get(id) != Some(parent) {
            continue;
        }
        let a = base.diagram.shape(id).unwrap().bounds;
        let b = patched.diagram.shape(id).unwrap().bounds;
        if a.y != b.y || a.width != b.width || a.height != b.height || (!may_shift && a.x != b.x) {
            problems.push(format!("{id}: {a:?} -> {b:?}"));
        }
    }
    problems
}

/// Benchmark corpus root; `FLOWBENCH_DIR` points the suites at another copy.
pub fn flowbench_dir() -> std::path::PathBuf {
    std::env::var_os("FLOWBENCH_DIR")
        .map(Into::into)
        .unwrap_or_else(|| std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/flowbench"))
}

pub fn flowbench_catalog() -> flowgen_core::retrieval::Catalog {
    let path = flowbench_dir().join("catalog.json");
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    flowgen_core::retrieval::load_catalog(&text).unwrap()
}
