//! Every program of at most three statements built from a four-activity toy
//! catalog, with at most one level of nesting.

use flowgen_core::ir::{parse_ir, Program};

const ACTIVITIES: [(&str, &str); 4] = [
    ("orders", "Shop_Order__1_0_0__create_Order"),
    ("invoices", "Shop_Invoice__1_0_0__send_Invoice"),
    ("stocks", "Shop_Stock__1_0_0__check_Stock"),
    ("messages", "Mail_Message__1_0_0__post_Message"),
];

const MAX_STATEMENTS: usize = 3;

fn leaves() -> Vec<(String, Option<&'static str>)> {
    let mut out: Vec<_> = ACTIVITIES
        .iter()
        .map(|(var, act)| (format!("{var} = {act}()"), Some(*var)))
        .collect();
    out.push(("user_task(\"Review the result\")".to_string(), None));
    out
}

/// Leaf sequences of exactly `n` statements: (lines, names they bind).
fn leaf_seqs(n: usize) -> Vec<(Vec<String>, Vec<&'static str>)> {
    if n == 0 {
        return vec![(Vec::new(), Vec::new())];
    }
    let mut out = Vec::new();
    for (lines, bound) in leaf_seqs(n - 1) {
        for (leaf, var) in leaves() {
            let mut l = lines.clone();
            l.push(leaf);
            let mut b = bound.clone();
            b.extend(var);
            out.push((l, b));
        }
    }
    out
}

fn indent(lines: &[String]) -> Vec<String> {
    lines.iter().map(|l| format!("  {l}")).collect()
}

/// Blocks of exactly `size` statements given the names bound so far.
fn blocks(size: usize, bound: &[&'static str]) -> Vec<(Vec<String>, Vec<&'static str>)> {
    let mut out = Vec::new();
    if size == 1 {
        for (leaf, var) in leaves() {
            out.push((vec![leaf], var.into_iter().collect()));
        }
        return out;
    }
    let mut refs: Vec<&str> = bound.to_vec();
    refs.sort();
    refs.dedup();
    let inner = size - 1;
    for (body, body_bound) in leaf_seqs(inner) {
        let mut loops: Vec<String> = vec!["for item in batches".into(), "while more".into()];
        for r in &refs {
            loops.push(format!("for item in {r}"));
            loops.push(format!("while {r}.pending"));
        }
        for header in loops {
            let mut lines = vec![format!("{header}:")];
            lines.extend(indent(&body));
            out.push((lines, body_bound.clone()));
        }
    }
    let mut conds: Vec<String> = vec!["ready".into()];
    conds.extend(refs.iter().map(|r| format!("{r}.ok")));
    for then_n in 1..=inner {
        for (then, then_bound) in leaf_seqs(then_n) {
            for (other, other_bound) in leaf_seqs(inner - then_n) {
                for c in &conds {
                    let mut lines = vec![format!("if {c}:")];
                    lines.extend(indent(&then));
                    if !other.is_empty() {
                        lines.push("else:".into());
                        lines.extend(indent(&other));
                    }
                    let mut b = then_bound.clone();
                    b.extend(&other_bound);
                    out.push((lines, b));
                }
            }
        }
    }
    out
}

fn programs_of(size: usize, bound: Vec<&'static str>) -> Vec<Vec<String>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 1..=size {
        for (lines, b) in blocks(first, &bound) {
            let mut all = bound.clone();
            all.extend(b);
            for rest in programs_of(size - first, all) {
                let mut l = lines.clone();
                l.extend(rest);
                out.push(l);
            }
        }
    }
    out
}

pub fn all_programs() -> Vec<Program> {
    (1..=MAX_STATEMENTS)
        .flat_map(|n| programs_of(n, Vec::new()))
        .map(|lines| parse_ir(&lines.join("\n")).unwrap())
        .collect()
}
