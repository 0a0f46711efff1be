//! Alpha-normalization of programs.
//!
//! Every binding site (assignment target, loop variable) gets a fresh name
//! `v1, v2, ...` in document order, and each reference is rewritten to the
//! name of the binding it resolves to. Re-assigning a name is a new binding
//! site. References to names never bound stay as written.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::{Arg, ArgValue, Call, Condition, Program, Stmt, RESERVED_WORDS};

/// Identifiers referenced and bound by a program.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BindingInfo {
    /// Names referenced before (or without) any binding.
    pub free: BTreeSet<String>,
    /// Binding sites in document order: `(name, callee)`; loop variables
    /// carry no callee.
    pub sites: Vec<(String, Option<String>)>,
    referenced: HashSet<usize>,
}

impl BindingInfo {
    pub fn is_referenced(&self, site: usize) -> bool {
        self.referenced.contains(&site)
    }
}

/// Walks bindings and references in evaluation order.
pub fn resolve_bindings(program: &Program) -> BindingInfo {
    let mut info = BindingInfo::default();
    let mut env: HashMap<String, usize> = HashMap::new();
    analyze(&program.statements, &mut env, &mut info);
    info
}

fn note_ref(name: &str, env: &HashMap<String, usize>, info: &mut BindingInfo) {
    match env.get(name) {
        Some(site) => {
            info.referenced.insert(*site);
        }
        None => {
            info.free.insert(name.to_string());
        }
    }
}

fn call_refs(call: &Call) -> impl Iterator<Item = &str> {
    call.args.iter().filter_map(|arg| match arg {
        Arg::Positional(ArgValue::Ident(name)) | Arg::Keyword { value: ArgValue::Ident(name), .. } => {
            Some(name.as_str())
        }
        _ => None,
    })
}

fn analyze(stmts: &[Stmt], env: &mut HashMap<String, usize>, info: &mut BindingInfo) {
    for stmt in stmts {
        match stmt {
            Stmt::Assign { target, call } => {
                for name in call_refs(call) {
                    note_ref(name, env, info);
                }
                env.insert(target.clone(), info.sites.len());
                info.sites.push((target.clone(), Some(call.callee.clone())));
            }
            Stmt::Expr(call) => {
                for name in call_refs(call) {
                    note_ref(name, env, info);
                }
            }
            Stmt::If {
                condition,
                then_body,
                else_body,
            } => {
                for (_, name) in condition_identifiers(condition.as_str()) {
                    note_ref(name, env, info);
                }
                analyze(then_body, env, info);
                if let Some(body) = else_body {
                    analyze(body, env, info);
                }
            }
            Stmt::For {
                loop_var,
                iterable,
                body,
            } => {
                note_ref(iterable, env, info);
                env.insert(loop_var.clone(), info.sites.len());
                info.sites.push((loop_var.clone(), None));
                analyze(body, env, info);
            }
            Stmt::While { condition, body } => {
                for (_, name) in condition_identifiers(condition.as_str()) {
                    note_ref(name, env, info);
                }
                analyze(body, env, info);
            }
        }
    }
}

/// Identifier tokens of a condition that may name variables: outside string
/// literals, not attribute names (after `.`), not keywords and not keyword
/// argument names. Returns byte offsets with the names.
pub fn condition_identifiers(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut quote: Option<char> = None;
    let mut prev_significant: Option<char> = None;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if let Some(q) = quote {
            if c == '\\' {
                i += 2;
                continue;
            }
            if c == q {
                quote = None;
                prev_significant = Some(c);
            }
            i += 1;
            continue;
        }
        if c == '"' || c == '\'' {
            quote = Some(c);
            i += 1;
            continue;
        }
        if c == '_' || c.is_alphabetic() {
            let mut j = i;
            while j < chars.len() && (chars[j].1 == '_' || chars[j].1.is_alphanumeric()) {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |x| x.0);
            let name = &text[pos..end];
            let mut k = j;
            while k < chars.len() && chars[k].1 == ' ' {
                k += 1;
            }
            let next = chars.get(k).map(|x| x.1);
            let after = chars.get(k + 1).map(|x| x.1);
            let is_kwarg = next == Some('=') && after != Some('=');
            if prev_significant != Some('.') && !is_kwarg && !RESERVED_WORDS.contains(&name) {
                out.push((pos, name));
            }
            prev_significant = Some('a');
            i = j;
            continue;
        }
        if c.is_ascii_digit() {
            // Skip numeric literals whole so suffixes like `1e5` never read as names.
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '.') {
                i += 1;
            }
            prev_significant = Some('0');
            continue;
        }
        if !c.is_whitespace() {
            prev_significant = Some(c);
        }
        i += 1;
    }
    out
}

/// Rewrites variable identifiers of a condition through `rename`.
pub fn rename_condition(text: &str, mut rename: impl FnMut(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (pos, name) in condition_identifiers(text) {
        if let Some(new_name) = rename(name) {
            out.push_str(&text[last..pos]);
            out.push_str(&new_name);
            last = pos + name.len();
        }
    }
    out.push_str(&text[last..]);
    out
}

struct Renamer<'a> {
    info: &'a BindingInfo,
    env: HashMap<String, String>,
    site: usize,
    counter: usize,
}

impl Renamer<'_> {
    fn fresh(&mut self) -> String {
        loop {
            self.counter += 1;
            let name = format!("v{}", self.counter);
            if !self.info.free.contains(&name) {
                return name;
            }
        }
    }

    fn lookup(&self, name: &str) -> String {
        self.env.get(name).cloned().unwrap_or_else(|| name.to_string())
    }

    fn call(&self, call: &Call) -> Call {
        let value = |v: &ArgValue| match v {
            ArgValue::Ident(name) => ArgValue::Ident(self.lookup(name)),
            other => other.clone(),
        };
        Call {
            callee: call.callee.clone(),
            args: call
                .args
                .iter()
                .map(|arg| match arg {
                    Arg::Positional(v) => Arg::Positional(value(v)),
                    Arg::Keyword { name, value: v } => Arg::Keyword {
                        name: name.clone(),
                        value: value(v),
                    },
                })
                .collect(),
        }
    }

    fn condition(&self, condition: &Condition) -> Condition {
        Condition::new(&rename_condition(condition.as_str(), |name| {
            self.env.get(name).cloned()
        }))
    }

    fn block(&mut self, stmts: &[Stmt]) -> Vec<Stmt> {
        stmts.iter().map(|s| self.stmt(s)).collect()
    }

    fn stmt(&mut self, stmt: &Stmt) -> Stmt {
        match stmt {
            Stmt::Assign { target, call } => {
                let call = self.call(call);
                let site = self.site;
                self.site += 1;
                if call.is_user_task() && !self.info.is_referenced(site) {
                    self.env.remove(target);
                    return Stmt::Expr(call);
                }
                let name = self.fresh();
                self.env.insert(target.clone(), name.clone());
                Stmt::Assign { target: name, call }
            }
            Stmt::Expr(call) => {
                let call = self.call(call);
                if call.is_user_task() {
                    Stmt::Expr(call)
                } else {
                    Stmt::Assign {
                        target: self.fresh(),
                        call,
                    }
                }
            }
            Stmt::If {
                condition,
                then_body,
                else_body,
            } => {
                let condition = self.condition(condition);
                let then_body = self.block(then_body);
                let else_body = else_body.as_ref().map(|b| self.block(b));
                Stmt::If {
                    condition,
                    then_body,
                    else_body,
                }
            }
            Stmt::For {
                loop_var,
                iterable,
                body,
            } => {
                let iterable = self.lookup(iterable);
                self.site += 1;
                let name = self.fresh();
                self.env.insert(loop_var.clone(), name.clone());
                Stmt::For {
                    loop_var: name,
                    iterable,
                    body: self.block(body),
                }
            }
            Stmt::While { condition, body } => Stmt::While {
                condition: self.condition(condition),
                body: self.block(body),
            },
        }
    }
}

/// Canonical alpha-renamed form used for equality checks.
///
/// Besides renaming, a bare catalog call gets a fresh result variable and an
/// unreferenced `x = user_task("...")` loses its target, since neither
/// difference is observable in the workflow.
pub fn normalize_ir(program: &Program) -> Program {
    let info = resolve_bindings(program);
    let mut renamer = Renamer {
        info: &info,
        env: HashMap::new(),
        site: 0,
        counter: 0,
    };
    Program {
        statements: renamer.block(&program.statements),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_ir, print_ir};

    fn norm(src: &str) -> String {
        print_ir(&normalize_ir(&parse_ir(src).unwrap()))
    }

    #[test]
    fn alpha_equivalent_assignments() {
        assert_eq!(norm("issue = F()"), norm("x = F()"));
        assert_eq!(norm("issue = F()"), "v1 = F()");
    }

    #[test]
    fn fig1_rename_is_immaterial() {
        let gold = "repositories = GitHub_Repository__3_0_0__retrievewithwhere_Repository()\nfor repo in repositories:\n  updated_issue = GitHub_Issue__3_0_0__create_Issue()";
        let renamed = gold.replace("updated_issue", "new_issue");
        assert_eq!(norm(gold), norm(&renamed));
        assert_eq!(
            norm(gold),
            "v1 = GitHub_Repository__3_0_0__retrievewithwhere_Repository()\nfor v2 in v1:\n  v3 = GitHub_Issue__3_0_0__create_Issue()"
        );
    }

    #[test]
    fn idempotent() {
        for src in [
            "a = F()\nfor x in a:\n  if x.ok and v1:\n    b = G(x, k=a)\n  else:\n    user_task(\"check\")\nwhile a.more:\n  a = F()",
            "v2 = F()\nG(v1)",
        ] {
            let once = normalize_ir(&parse_ir(src).unwrap());
            assert_eq!(normalize_ir(&once), once, "{src}");
        }
    }

    #[test]
    fn rebinding_is_a_new_site() {
        assert_eq!(norm("x = F()\nx = G()\nH(x)"), "v1 = F()\nv2 = G()\nv3 = H(v2)");
    }

    #[test]
    fn conditions_follow_bindings() {
        assert_eq!(
            norm("issue = F()\nif issue.status == \"issue\" and other:\n  G()"),
            "v1 = F()\nif v1.status == \"issue\" and other:\n  v2 = G()"
        );
    }

    #[test]
    fn free_names_are_not_captured() {
        assert_eq!(norm("a = F()\nG(v1)"), "v2 = F()\nv3 = G(v1)");
    }

    #[test]
    fn user_task_target_dropped_only_when_unused() {
        assert_eq!(norm("ok = user_task(\"approve\")"), "user_task(\"approve\")");
        assert_eq!(
            norm("ok = user_task(\"approve\")\nif ok:\n  F()"),
            "v1 = user_task(\"approve\")\nif v1:\n  v2 = F()"
        );
    }

    #[test]
    fn condition_identifier_scan() {
        let ids: Vec<&str> = condition_identifiers("a.b == f(x, key=y) and not 'z' in 1e5")
            .into_iter()
            .map(|(_, n)| n)
            .collect();
        assert_eq!(ids, ["a", "f", "x", "y"]);
    }
}
