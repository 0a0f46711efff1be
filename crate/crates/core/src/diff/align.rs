//! Statement alignment and edit script emission.
//!
//! Each scope is aligned with an edit-distance table over statement
//! signatures. A signature ignores variable names: every reference is
//! replaced by a description of the binding it resolves to. Besides insert,
//! delete and match, a target loop may wrap a run of base statements and a
//! base loop may be unwrapped into a run of target statements.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::{apply_ir, EditOp, EditScript, Path, PathRange};
use crate::ir::{
    normalize_ir, rename_condition, resolve_bindings, Arg, ArgValue, Call, Condition, Program,
    Stmt,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Assign,
    Expr,
    If,
    For,
    While,
}

struct SNode {
    kind: Kind,
    sig: String,
    site: Option<usize>,
    bodies: Vec<Vec<SNode>>,
}

impl SNode {
    fn is_loop(&self) -> bool {
        matches!(self.kind, Kind::For | Kind::While)
    }
}

#[derive(Default)]
struct SigBuilder {
    env: HashMap<String, usize>,
    site_sigs: Vec<String>,
}

impl SigBuilder {
    fn reference(&self, name: &str) -> String {
        match self.env.get(name) {
            Some(&site) => format!("@{}", self.site_sigs[site]),
            None => name.to_string(),
        }
    }

    fn bind(&mut self, name: &str, sig: String) -> usize {
        let site = self.site_sigs.len();
        self.site_sigs.push(sig);
        self.env.insert(name.to_string(), site);
        site
    }

    fn call(&self, call: &Call) -> String {
        let value = |v: &ArgValue| match v {
            ArgValue::Str(s) => format!("{s:?}"),
            ArgValue::Ident(name) => self.reference(name),
        };
        let args: Vec<String> = call
            .args
            .iter()
            .map(|a| match a {
                Arg::Positional(v) => value(v),
                Arg::Keyword { name, value: v } => format!("{name}={}", value(v)),
            })
            .collect();
        format!("{}({})", call.callee, args.join(","))
    }

    fn condition(&self, c: &Condition) -> String {
        rename_condition(c.as_str(), |name| {
            self.env.contains_key(name).then(|| self.reference(name))
        })
    }

    fn block(&mut self, stmts: &[Stmt]) -> Vec<SNode> {
        stmts.iter().map(|s| self.stmt(s)).collect()
    }

    fn stmt(&mut self, stmt: &Stmt) -> SNode {
        match stmt {
            Stmt::Assign { target, call } => {
                let sig = self.call(call);
                let site = self.bind(target, call.callee.clone());
                SNode {
                    kind: Kind::Assign,
                    sig,
                    site: Some(site),
                    bodies: Vec::new(),
                }
            }
            Stmt::Expr(call) => SNode {
                kind: Kind::Expr,
                sig: self.call(call),
                site: None,
                bodies: Vec::new(),
            },
            Stmt::If {
                condition,
                then_body,
                else_body,
            } => {
                let sig = self.condition(condition);
                let then = self.block(then_body);
                let other = else_body.as_deref().map_or_else(Vec::new, |b| self.block(b));
                SNode {
                    kind: Kind::If,
                    sig,
                    site: None,
                    bodies: vec![then, other],
                }
            }
            Stmt::For {
                loop_var,
                iterable,
                body,
            } => {
                let sig = self.reference(iterable);
                let site = self.bind(loop_var, format!("in:{sig}"));
                SNode {
                    kind: Kind::For,
                    sig,
                    site: Some(site),
                    bodies: vec![self.block(body)],
                }
            }
            Stmt::While { condition, body } => SNode {
                kind: Kind::While,
                sig: self.condition(condition),
                site: None,
                bodies: vec![self.block(body)],
            },
        }
    }
}

fn sig_tree(program: &Program) -> Vec<SNode> {
    SigBuilder::default().block(&program.statements)
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Match(usize, usize),
    Delete(usize),
    Insert(usize),
    /// Target loop `target` wraps base statements `from..to`.
    Wrap { from: usize, to: usize, target: usize },
    /// Base loop `base` dissolves into target statements `from..to`.
    Unwrap { base: usize, from: usize, to: usize },
}

struct Alignment {
    cost: u32,
    steps: Vec<Step>,
}

type Key = (usize, usize, usize, usize);

#[derive(Default)]
struct Aligner {
    memo: HashMap<Key, Rc<Alignment>>,
}

impl Aligner {
    fn pair_cost(&mut self, b: &SNode, t: &SNode) -> Option<u32> {
        if b.kind != t.kind {
            return None;
        }
        let mut cost = u32::from(b.sig != t.sig);
        for (bb, tb) in b.bodies.iter().zip(&t.bodies) {
            cost += self.align(bb, tb).cost;
        }
        Some(cost)
    }

    fn align(&mut self, b: &[SNode], t: &[SNode]) -> Rc<Alignment> {
        let key = (b.as_ptr() as usize, b.len(), t.as_ptr() as usize, t.len());
        if let Some(hit) = self.memo.get(&key) {
            return hit.clone();
        }
        let (n, m) = (b.len(), t.len());
        let mut dp = vec![vec![0u32; m + 1]; n + 1];
        let mut back = vec![vec![Step::Match(0, 0); m + 1]; n + 1];
        for i in 0..=n {
            for j in 0..=m {
                if i == 0 && j == 0 {
                    continue;
                }
                let mut best: Option<(u32, Step)> = None;
                let mut offer = |cost: u32, step: Step| {
                    if best.is_none_or(|(c, _)| cost < c) {
                        best = Some((cost, step));
                    }
                };
                if i > 0 && j > 0 {
                    if let Some(c) = self.pair_cost(&b[i - 1], &t[j - 1]) {
                        offer(dp[i - 1][j - 1] + c, Step::Match(i - 1, j - 1));
                    }
                }
                if i > 0 {
                    offer(dp[i - 1][j] + 1, Step::Delete(i - 1));
                }
                if j > 0 {
                    offer(dp[i][j - 1] + 1, Step::Insert(j - 1));
                }
                if j > 0 && t[j - 1].is_loop() {
                    for k in 0..i {
                        let inner = self.align(&b[k..i], &t[j - 1].bodies[0]).cost;
                        offer(
                            dp[k][j - 1] + 1 + inner,
                            Step::Wrap {
                                from: k,
                                to: i,
                                target: j - 1,
                            },
                        );
                    }
                }
                if i > 0 && b[i - 1].is_loop() {
                    for k in 0..j {
                        let inner = self.align(&b[i - 1].bodies[0], &t[k..j]).cost;
                        offer(
                            dp[i - 1][k] + 1 + inner,
                            Step::Unwrap {
                                base: i - 1,
                                from: k,
                                to: j,
                            },
                        );
                    }
                }
                let (cost, step) = best.expect("some transition always applies");
                dp[i][j] = cost;
                back[i][j] = step;
            }
        }
        let mut steps = Vec::new();
        let (mut i, mut j) = (n, m);
        while i > 0 || j > 0 {
            let step = back[i][j];
            steps.push(step);
            (i, j) = match step {
                Step::Match(bi, tj) => (bi, tj),
                Step::Delete(bi) => (bi, j),
                Step::Insert(tj) => (i, tj),
                Step::Wrap { from, target, .. } => (from, target),
                Step::Unwrap { base, from, .. } => (base, from),
            };
        }
        steps.reverse();
        let result = Rc::new(Alignment {
            cost: dp[n][m],
            steps,
        });
        self.memo.insert(key, result.clone());
        result
    }

    /// Target binding site -> base binding site, for aligned bindings.
    fn collect_matches(&mut self, b: &[SNode], t: &[SNode], out: &mut HashMap<usize, usize>) {
        let alignment = self.align(b, t);
        for step in &alignment.steps {
            match *step {
                Step::Match(i, j) => {
                    if let (Some(bs), Some(ts)) = (b[i].site, t[j].site) {
                        out.insert(ts, bs);
                    }
                    for (bb, tb) in b[i].bodies.iter().zip(&t[j].bodies) {
                        self.collect_matches(bb, tb, out);
                    }
                }
                Step::Wrap { from, to, target } => {
                    self.collect_matches(&b[from..to], &t[target].bodies[0], out)
                }
                Step::Unwrap { base, from, to } => {
                    self.collect_matches(&b[base].bodies[0], &t[from..to], out)
                }
                Step::Delete(_) | Step::Insert(_) => {}
            }
        }
    }

    /// Emits ops turning `bs` into `ts` (the renamed target), in application order.
    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        b: &[SNode],
        t: &[SNode],
        bs: &[Stmt],
        ts: &[Stmt],
        prefix: &Path,
        ops: &mut Vec<EditOp>,
    ) {
        let alignment = self.align(b, t);
        let mut positions = Vec::with_capacity(alignment.steps.len());
        let mut consumed = 0;
        for step in &alignment.steps {
            positions.push(consumed);
            consumed = match *step {
                Step::Match(i, _) | Step::Delete(i) | Step::Unwrap { base: i, .. } => i + 1,
                Step::Wrap { to, .. } => to,
                Step::Insert(_) => consumed,
            };
        }
        let at = |i: usize| {
            let mut p = prefix.clone();
            p.push(i);
            p
        };
        for (step, &pos) in alignment.steps.iter().zip(&positions).rev() {
            match *step {
                Step::Match(i, j) => self.emit_pair(&b[i], &t[j], &bs[i], &ts[j], at(i), ops),
                Step::Delete(i) => ops.push(EditOp::DeleteStmt { path: at(i) }),
                Step::Insert(j) => ops.push(EditOp::InsertStmt {
                    path: at(pos),
                    stmt: ts[j].clone(),
                }),
                Step::Wrap { from, to, target } => {
                    ops.push(EditOp::WrapInLoop {
                        path_range: PathRange {
                            path: at(from),
                            count: to - from,
                        },
                        header: loop_header(&ts[target]),
                    });
                    self.emit(
                        &b[from..to],
                        &t[target].bodies[0],
                        &bs[from..to],
                        body(&ts[target], 0),
                        &at(from),
                        ops,
                    );
                }
                Step::Unwrap { base, from, to } => {
                    self.emit(
                        &b[base].bodies[0],
                        &t[from..to],
                        body(&bs[base], 0),
                        &ts[from..to],
                        &at(base),
                        ops,
                    );
                    ops.push(EditOp::UnwrapLoop { path: at(base) });
                }
            }
        }
    }

    fn emit_pair(
        &mut self,
        b: &SNode,
        t: &SNode,
        bs: &Stmt,
        ts: &Stmt,
        path: Path,
        ops: &mut Vec<EditOp>,
    ) {
        match (bs, ts) {
            (Stmt::Assign { call: bc, .. }, Stmt::Assign { call: tc, .. })
            | (Stmt::Expr(bc), Stmt::Expr(tc)) => {
                if bc != tc {
                    ops.push(EditOp::ReplaceCall {
                        path,
                        new_callee: tc.callee.clone(),
                        new_args: tc.args.clone(),
                    });
                }
                return;
            }
            _ => {}
        }
        let (old, new) = (condition_text(bs), condition_text(ts));
        if old != new {
            ops.push(EditOp::SetCondition {
                path: path.clone(),
                text: new,
            });
        }
        if let Kind::If = b.kind {
            for branch in [1, 0] {
                let mut p = path.clone();
                p.push(branch);
                self.emit(
                    &b.bodies[branch],
                    &t.bodies[branch],
                    body(bs, branch),
                    body(ts, branch),
                    &p,
                    ops,
                );
            }
        } else {
            self.emit(&b.bodies[0], &t.bodies[0], body(bs, 0), body(ts, 0), &path, ops);
        }
    }
}

fn body(stmt: &Stmt, branch: usize) -> &[Stmt] {
    match (stmt, branch) {
        (Stmt::If { then_body, .. }, 0) => then_body,
        (Stmt::If { else_body, .. }, _) => else_body.as_deref().unwrap_or(&[]),
        (Stmt::For { body, .. } | Stmt::While { body, .. }, _) => body,
        _ => &[],
    }
}

fn condition_text(stmt: &Stmt) -> String {
    match stmt {
        Stmt::If { condition, .. } | Stmt::While { condition, .. } => condition.to_string(),
        Stmt::For {
            loop_var, iterable, ..
        } => format!("{loop_var} in {iterable}"),
        _ => String::new(),
    }
}

fn loop_header(stmt: &Stmt) -> String {
    match stmt {
        Stmt::For {
            loop_var, iterable, ..
        } => format!("for {loop_var} in {iterable}"),
        Stmt::While { condition, .. } => format!("while {condition}"),
        _ => unreachable!("wrap targets are loops"),
    }
}

/// Renames binding sites (and every reference resolving to them) by site index.
struct Renamer<'a> {
    names: &'a [String],
    env: HashMap<String, usize>,
    next: usize,
}

impl Renamer<'_> {
    fn reference(&self, name: &str) -> Option<String> {
        self.env.get(name).map(|&s| self.names[s].clone())
    }

    fn call(&self, call: &mut Call) {
        for arg in &mut call.args {
            if let Arg::Positional(ArgValue::Ident(name)) | Arg::Keyword { value: ArgValue::Ident(name), .. } = arg {
                if let Some(new) = self.reference(name) {
                    *name = new;
                }
            }
        }
    }

    fn condition(&self, c: &mut Condition) {
        *c = Condition::new(&rename_condition(c.as_str(), |name| self.reference(name)));
    }

    fn bind(&mut self, name: &mut String) {
        self.env.insert(name.clone(), self.next);
        *name = self.names[self.next].clone();
        self.next += 1;
    }

    fn block(&mut self, stmts: &mut [Stmt]) {
        for stmt in stmts {
            match stmt {
                Stmt::Assign { target, call } => {
                    self.call(call);
                    self.bind(target);
                }
                Stmt::Expr(call) => self.call(call),
                Stmt::If {
                    condition,
                    then_body,
                    else_body,
                } => {
                    self.condition(condition);
                    self.block(then_body);
                    if let Some(b) = else_body {
                        self.block(b);
                    }
                }
                Stmt::For {
                    loop_var,
                    iterable,
                    body,
                } => {
                    if let Some(new) = self.reference(iterable) {
                        *iterable = new;
                    }
                    self.bind(loop_var);
                    self.block(body);
                }
                Stmt::While { condition, body } => {
                    self.condition(condition);
                    self.block(body);
                }
            }
        }
    }
}

fn rename_sites(program: &Program, names: &[String]) -> Program {
    let mut out = program.clone();
    Renamer {
        names,
        env: HashMap::new(),
        next: 0,
    }
    .block(&mut out.statements);
    out
}

fn all_identifiers(programs: &[&Program]) -> HashSet<String> {
    let mut seen = HashSet::new();
    for p in programs {
        let info = resolve_bindings(p);
        seen.extend(info.free.iter().cloned());
        seen.extend(info.sites.iter().map(|(n, _)| n.clone()));
    }
    seen
}

/// Computes an edit script from `base` to `target`. Applying it to `base`
/// gives a program alpha-equivalent to `target`.
pub fn diff_ir(base: &Program, target: &Program) -> EditScript {
    let b = sig_tree(base);
    let t = sig_tree(target);
    let mut aligner = Aligner::default();
    let mut matches = HashMap::new();
    aligner.collect_matches(&b, &t, &mut matches);

    let base_sites = resolve_bindings(base).sites;
    let target_sites = resolve_bindings(target).sites;
    let want = normalize_ir(target);
    let verified = |script: &EditScript| {
        apply_ir(base, script).is_ok_and(|p| normalize_ir(&p) == want)
    };

    // Unmatched sites keep their own names first; if that collides with a
    // surviving base name, retry with fresh ones.
    let mut taken = all_identifiers(&[base, target]);
    let mut fresh_names = Vec::new();
    for (site, (name, _)) in target_sites.iter().enumerate() {
        let fresh = match matches.get(&site) {
            Some(&bs) => base_sites[bs].0.clone(),
            None => {
                let mut k = 2;
                while taken.contains(&format!("{name}_{k}")) {
                    k += 1;
                }
                let n = format!("{name}_{k}");
                taken.insert(n.clone());
                n
            }
        };
        fresh_names.push(fresh);
    }
    let kept_names: Vec<String> = target_sites
        .iter()
        .enumerate()
        .map(|(site, (name, _))| match matches.get(&site) {
            Some(&bs) => base_sites[bs].0.clone(),
            None => name.clone(),
        })
        .collect();

    for names in [&kept_names, &fresh_names] {
        let renamed = rename_sites(target, names);
        let mut ops = Vec::new();
        aligner.emit(&b, &t, &base.statements, &renamed.statements, &Vec::new(), &mut ops);
        let script = EditScript { ops };
        if verified(&script) {
            return script;
        }
    }

    let mut ops: Vec<EditOp> = (0..base.statements.len())
        .rev()
        .map(|i| EditOp::DeleteStmt { path: vec![i] })
        .collect();
    ops.extend(
        target
            .statements
            .iter()
            .enumerate()
            .map(|(j, stmt)| EditOp::InsertStmt {
                path: vec![j],
                stmt: stmt.clone(),
            }),
    );
    EditScript { ops }
}
