//! Decompiler from BPMN documents back to IR programs.
//!
//! BPMN keeps no variable names, so they are rebuilt: each task result is
//! named after the last `_` segment of its activity id, and references found
//! in loop headers and conditions are matched back to the latest earlier
//! assignment whose noun agrees (singular or plural).

use std::collections::{HashMap, HashSet};

use crate::bpmn::{BpmnDocument, GatewayDirection, LoopKind, NodeKind, Scope, SequenceFlow};
use crate::ir::{
    condition_identifiers, is_identifier, parse_loop_header, rename_condition, Call, Condition,
    LoopHeader, Program, Stmt, RESERVED_WORDS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecompileError {
    #[error("workflow has no activities")]
    EmptyProgram,
    #[error("scope {scope} has no start event")]
    NoStart { scope: String },
    #[error("node '{node}' is not reachable from the start event")]
    Unreachable { node: String },
    #[error("node '{node}' has {count} outgoing flows outside a gateway")]
    MultipleSuccessors { node: String, count: usize },
    #[error("node '{node}' has no outgoing flow")]
    DeadEnd { node: String },
    #[error("flow path revisits node '{node}'")]
    Cycle { node: String },
    #[error("loop subprocess '{node}' has no annotation")]
    MissingAnnotation { node: String },
    #[error("loop subprocess '{node}' has an unusable header '{text}': {reason}")]
    BadLoopHeader {
        node: String,
        text: String,
        reason: String,
    },
    #[error("gateway '{node}' is not a well-formed split/join pair: {reason}")]
    BadGateway { node: String, reason: String },
    #[error("node '{node}' cannot be expressed in the IR: {reason}")]
    Unsupported { node: String, reason: String },
    #[error("{construct} at node '{node}' has an empty body")]
    EmptyBody { node: String, construct: &'static str },
}

/// BPMN elements behind one decompiled statement, mirroring the statement tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Leaf {
        node: String,
    },
    Loop {
        node: String,
        body: Vec<Origin>,
    },
    Branch {
        split: String,
        join: String,
        then_body: Vec<Origin>,
        else_body: Option<Vec<Origin>>,
    },
}

impl Origin {
    /// Node ids owned by this statement, including nested ones.
    pub fn node_ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<String>) {
        match self {
            Origin::Leaf { node } => out.push(node.clone()),
            Origin::Loop { node, .. } => out.push(node.clone()),
            Origin::Branch {
                split,
                join,
                then_body,
                else_body,
            } => {
                out.push(split.clone());
                for o in then_body.iter().chain(else_body.iter().flatten()) {
                    o.collect(out);
                }
                out.push(join.clone());
            }
        }
    }

    /// The first and last node of the statement on its scope's flow path.
    pub fn entry_exit(&self) -> (&str, &str) {
        match self {
            Origin::Leaf { node } | Origin::Loop { node, .. } => (node, node),
            Origin::Branch { split, join, .. } => (split, join),
        }
    }
}

pub fn decompile(doc: &BpmnDocument) -> Result<Program, DecompileError> {
    decompile_traced(doc).map(|(program, _)| program)
}

/// Decompiles and reports which BPMN nodes produced each statement.
pub fn decompile_traced(doc: &BpmnDocument) -> Result<(Program, Vec<Origin>), DecompileError> {
    let mut walker = Walker {
        doc,
        reserved: reference_names(doc),
        used: HashSet::new(),
        nouns: HashMap::new(),
    };
    let (mut statements, origins) = walker.scope(&doc.root, "process")?;
    if statements.is_empty() {
        return Err(DecompileError::EmptyProgram);
    }
    let renames = resolve_references(&mut statements, &walker.nouns);
    rename_targets(&mut statements, &renames);
    Ok((Program::new(statements), origins))
}

/// Identifiers mentioned by loop headers and gateway conditions.
fn reference_names(doc: &BpmnDocument) -> HashSet<String> {
    let mut names = HashSet::new();
    doc.root.walk(&mut |scope| {
        for note in &scope.annotations {
            for (_, name) in condition_identifiers(&note.text) {
                names.insert(name.to_string());
            }
        }
        for flow in &scope.flows {
            if let Some(c) = &flow.condition {
                for (_, name) in condition_identifiers(c) {
                    names.insert(name.to_string());
                }
            }
        }
    });
    names
}

/// Lowercased last `_` segment of an activity id.
pub fn task_noun(task_name: &str) -> String {
    task_name
        .rsplit('_')
        .next()
        .unwrap_or_default()
        .to_lowercase()
}

/// A word plus its plausible singular forms.
fn noun_forms(word: &str) -> Vec<String> {
    let mut forms = vec![word.to_string()];
    if let Some(stem) = word.strip_suffix("ies") {
        forms.push(format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("es") {
        forms.push(stem.to_string());
    }
    if let Some(stem) = word.strip_suffix('s') {
        if !stem.is_empty() {
            forms.push(stem.to_string());
        }
    }
    forms
}

fn nouns_agree(a: &str, b: &str) -> bool {
    let fb = noun_forms(b);
    noun_forms(a).iter().any(|f| fb.contains(f))
}

struct Walker<'a> {
    doc: &'a BpmnDocument,
    reserved: HashSet<String>,
    used: HashSet<String>,
    /// Generated variable name -> noun of its task.
    nouns: HashMap<String, String>,
}

type Walked = (Vec<Stmt>, Vec<Origin>);

impl Walker<'_> {
    fn fresh_name(&mut self, task_name: &str) -> String {
        let noun = task_noun(task_name);
        let base = if is_identifier(&noun) && !RESERVED_WORDS.contains(&noun.as_str()) {
            noun.clone()
        } else {
            "result".to_string()
        };
        let mut name = base.clone();
        let mut n = 1;
        while self.used.contains(&name) || self.reserved.contains(&name) {
            n += 1;
            name = format!("{base}_{n}");
        }
        self.used.insert(name.clone());
        self.nouns.insert(name.clone(), noun);
        name
    }

    fn scope(&mut self, scope: &Scope, label: &str) -> Result<Walked, DecompileError> {
        let start = scope.start_event().ok_or_else(|| DecompileError::NoStart {
            scope: label.to_string(),
        })?;
        let mut visited = HashSet::new();
        visited.insert(start.id.clone());
        let first = successor(scope, &start.id)?;
        let (stmts, origins, stop) = self.path(scope, &first, &mut visited)?;
        let stop_node = scope.node(&stop).expect("path stops on a node");
        if !stop_node.is_end() {
            return Err(DecompileError::BadGateway {
                node: stop,
                reason: "join without a matching split".into(),
            });
        }
        if let Some(node) = scope.nodes.iter().find(|n| !visited.contains(&n.id)) {
            return Err(DecompileError::Unreachable {
                node: node.id.clone(),
            });
        }
        Ok((stmts, origins))
    }

    /// Follows the flow path from `first` until an end event or a join
    /// gateway, which is returned without being consumed.
    fn path(
        &mut self,
        scope: &Scope,
        first: &str,
        visited: &mut HashSet<String>,
    ) -> Result<(Vec<Stmt>, Vec<Origin>, String), DecompileError> {
        let mut stmts = Vec::new();
        let mut origins = Vec::new();
        let mut current = first.to_string();
        loop {
            let node = scope
                .node(&current)
                .ok_or_else(|| DecompileError::Unreachable {
                    node: current.clone(),
                })?;
            match &node.kind {
                NodeKind::EndEvent => {
                    if !visited.insert(current.clone()) {
                        return Err(DecompileError::Cycle { node: current });
                    }
                    return Ok((stmts, origins, current));
                }
                NodeKind::ExclusiveGateway {
                    direction: GatewayDirection::Join,
                    ..
                } => return Ok((stmts, origins, current)),
                NodeKind::StartEvent => return Err(DecompileError::Cycle { node: current }),
                _ => {}
            }
            if !visited.insert(current.clone()) {
                return Err(DecompileError::Cycle { node: current });
            }
            match &node.kind {
                NodeKind::Task => {
                    let name = node.name.clone().unwrap_or_default();
                    if !is_identifier(&name) || RESERVED_WORDS.contains(&name.as_str()) {
                        return Err(DecompileError::Unsupported {
                            node: current,
                            reason: format!("task name '{name}' is not an activity id"),
                        });
                    }
                    let target = self.fresh_name(&name);
                    stmts.push(Stmt::Assign {
                        target,
                        call: Call::new(name),
                    });
                    origins.push(Origin::Leaf {
                        node: current.clone(),
                    });
                    current = successor(scope, &current)?;
                }
                NodeKind::UserTask => {
                    stmts.push(Stmt::Expr(Call::user_task(
                        node.name.clone().unwrap_or_default(),
                    )));
                    origins.push(Origin::Leaf {
                        node: current.clone(),
                    });
                    current = successor(scope, &current)?;
                }
                NodeKind::SubProcess {
                    loop_kind,
                    scope: inner,
                } => {
                    let (stmt, origin) = self.subprocess(&current, *loop_kind, inner)?;
                    stmts.push(stmt);
                    origins.push(origin);
                    current = successor(scope, &current)?;
                }
                NodeKind::ExclusiveGateway {
                    default_flow, ..
                } => {
                    let (stmt, origin, join) =
                        self.conditional(scope, &current, default_flow.as_deref(), visited)?;
                    stmts.push(stmt);
                    origins.push(origin);
                    current = successor(scope, &join)?;
                }
                NodeKind::StartEvent | NodeKind::EndEvent => unreachable!(),
            }
        }
    }

    fn subprocess(
        &mut self,
        id: &str,
        loop_kind: Option<LoopKind>,
        inner: &Scope,
    ) -> Result<(Stmt, Origin), DecompileError> {
        let Some(loop_kind) = loop_kind else {
            return Err(DecompileError::Unsupported {
                node: id.to_string(),
                reason: "subprocess without loop characteristics".into(),
            });
        };
        let text = self
            .doc
            .loop_header(id)
            .ok_or_else(|| DecompileError::MissingAnnotation {
                node: id.to_string(),
            })?
            .to_string();
        let bad = |reason: String| DecompileError::BadLoopHeader {
            node: id.to_string(),
            text: text.clone(),
            reason,
        };
        let header = parse_loop_header(&text).map_err(|e| bad(e.message))?;
        // The header is parsed before the body so bindings stay in document order.
        let (body, body_origins) = self.scope(inner, &format!("subprocess '{id}'"))?;
        if body.is_empty() {
            return Err(DecompileError::EmptyBody {
                node: id.to_string(),
                construct: "loop",
            });
        }
        let stmt = match (loop_kind, header) {
            (LoopKind::MultiInstanceSequential, LoopHeader::For { loop_var, iterable }) => {
                self.used.insert(loop_var.clone());
                Stmt::For {
                    loop_var,
                    iterable,
                    body,
                }
            }
            (LoopKind::StandardLoop, LoopHeader::While { condition }) => {
                Stmt::While { condition, body }
            }
            (LoopKind::MultiInstanceSequential, _) => {
                return Err(bad("multi-instance loop needs a 'for' header".into()))
            }
            (LoopKind::StandardLoop, _) => {
                return Err(bad("standard loop needs a 'while' header".into()))
            }
        };
        Ok((
            stmt,
            Origin::Loop {
                node: id.to_string(),
                body: body_origins,
            },
        ))
    }

    fn conditional(
        &mut self,
        scope: &Scope,
        split: &str,
        default_flow: Option<&str>,
        visited: &mut HashSet<String>,
    ) -> Result<(Stmt, Origin, String), DecompileError> {
        let bad = |reason: &str| DecompileError::BadGateway {
            node: split.to_string(),
            reason: reason.to_string(),
        };
        let outgoing: Vec<&SequenceFlow> = scope.outgoing(split).collect();
        if outgoing.len() != 2 {
            return Err(bad("a split needs exactly two outgoing flows"));
        }
        let is_default = |f: &SequenceFlow| default_flow == Some(f.id.as_str());
        let (then_flow, else_flow) = match (&outgoing[0], &outgoing[1]) {
            (a, b) if a.condition.is_some() && (b.condition.is_none() || is_default(b)) => (*a, *b),
            (a, b) if b.condition.is_some() && (a.condition.is_none() || is_default(a)) => (*b, *a),
            _ => return Err(bad("expected one conditional flow and one default flow")),
        };
        let condition_text = then_flow.condition.clone().unwrap_or_default();
        Condition::validate(&condition_text).map_err(|e| bad(&e))?;
        let (then_body, then_origins, join) = self.path(scope, &then_flow.target, visited)?;
        if then_body.is_empty() {
            return Err(DecompileError::EmptyBody {
                node: split.to_string(),
                construct: "if",
            });
        }
        let join_is_gateway = matches!(
            scope.node(&join).map(|n| &n.kind),
            Some(NodeKind::ExclusiveGateway { .. })
        );
        if !join_is_gateway {
            return Err(bad("then branch does not reach a join gateway"));
        }
        let (else_body, else_origins) = if else_flow.target == join {
            (None, None)
        } else {
            let (body, origins, other_join) = self.path(scope, &else_flow.target, visited)?;
            if other_join != join {
                return Err(bad("branches end at different joins"));
            }
            if body.is_empty() {
                (None, None)
            } else {
                (Some(body), Some(origins))
            }
        };
        if !visited.insert(join.clone()) {
            return Err(DecompileError::Cycle { node: join });
        }
        Ok((
            Stmt::If {
                condition: Condition::new(&condition_text),
                then_body,
                else_body,
            },
            Origin::Branch {
                split: split.to_string(),
                join: join.clone(),
                then_body: then_origins,
                else_body: else_origins,
            },
            join,
        ))
    }
}

fn successor(scope: &Scope, id: &str) -> Result<String, DecompileError> {
    let out: Vec<&SequenceFlow> = scope.outgoing(id).collect();
    match out.as_slice() {
        [one] => Ok(one.target.clone()),
        [] => Err(DecompileError::DeadEnd {
            node: id.to_string(),
        }),
        many => Err(DecompileError::MultipleSuccessors {
            node: id.to_string(),
            count: many.len(),
        }),
    }
}

/// A binding site visible to later references.
struct Site {
    /// Generated name, or the loop variable itself.
    generated: String,
    /// Noun of the task; loop variables have none.
    noun: Option<String>,
    /// Name given by a reference that claimed the site.
    claimed: Option<String>,
}

impl Site {
    fn name(&self) -> &str {
        self.claimed.as_deref().unwrap_or(&self.generated)
    }
}

/// Binds header and condition references to earlier assignments, returning
/// the generated-name renames. References are rewritten in place when they
/// resolve to a site already claimed under another name.
fn resolve_references(
    stmts: &mut [Stmt],
    nouns: &HashMap<String, String>,
) -> HashMap<String, String> {
    let mut sites: Vec<Site> = Vec::new();
    resolve_block(stmts, nouns, &mut sites);
    sites
        .into_iter()
        .filter_map(|s| s.claimed.map(|c| (s.generated, c)))
        .collect()
}

fn resolve_name(name: &str, sites: &mut [Site]) -> Option<String> {
    let noun = task_noun(name);
    let found = sites.iter().rposition(|s| {
        s.name() == name || s.noun.as_deref().is_some_and(|n| nouns_agree(n, &noun))
    })?;
    let site = &mut sites[found];
    if site.name() == name {
        return None;
    }
    match &site.claimed {
        None => {
            site.claimed = Some(name.to_string());
            None
        }
        Some(other) => Some(other.clone()),
    }
}

fn resolve_text(text: &str, sites: &mut [Site]) -> String {
    let names: Vec<String> = condition_identifiers(text)
        .into_iter()
        .map(|(_, n)| n.to_string())
        .collect();
    let mut rewrites = HashMap::new();
    for name in names {
        if let Some(other) = resolve_name(&name, sites) {
            rewrites.insert(name, other);
        }
    }
    if rewrites.is_empty() {
        text.to_string()
    } else {
        rename_condition(text, |n| rewrites.get(n).cloned())
    }
}

fn resolve_block(stmts: &mut [Stmt], nouns: &HashMap<String, String>, sites: &mut Vec<Site>) {
    for stmt in stmts {
        match stmt {
            Stmt::Assign { target, .. } => sites.push(Site {
                generated: target.clone(),
                noun: nouns.get(target).cloned(),
                claimed: None,
            }),
            Stmt::Expr(_) => {}
            Stmt::For {
                loop_var,
                iterable,
                body,
            } => {
                if let Some(other) = resolve_name(iterable, sites) {
                    *iterable = other;
                }
                sites.push(Site {
                    generated: loop_var.clone(),
                    noun: None,
                    claimed: None,
                });
                resolve_block(body, nouns, sites);
            }
            Stmt::While { condition, body } => {
                *condition = Condition::new(&resolve_text(condition.as_str(), sites));
                resolve_block(body, nouns, sites);
            }
            Stmt::If {
                condition,
                then_body,
                else_body,
            } => {
                *condition = Condition::new(&resolve_text(condition.as_str(), sites));
                resolve_block(then_body, nouns, sites);
                if let Some(body) = else_body {
                    resolve_block(body, nouns, sites);
                }
            }
        }
    }
}

fn rename_targets(stmts: &mut [Stmt], renames: &HashMap<String, String>) {
    for stmt in stmts {
        if let Stmt::Assign { target, .. } = stmt {
            if let Some(new) = renames.get(target) {
                *target = new.clone();
            }
        }
        match stmt {
            Stmt::If {
                then_body,
                else_body,
                ..
            } => {
                rename_targets(then_body, renames);
                if let Some(body) = else_body {
                    rename_targets(body, renames);
                }
            }
            Stmt::For { body, .. } | Stmt::While { body, .. } => rename_targets(body, renames),
            _ => {}
        }
    }
}
