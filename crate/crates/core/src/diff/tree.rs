//! Mutable statement tree that edit scripts are applied to. Each node carries
//! a tag so the patcher can track where statements came from.

use super::{EditOp, EditScript, PathError};
use crate::ir::{parse_loop_header, Call, Condition, LoopHeader, Program, Stmt};

pub(crate) trait EditTag: Default + Clone {
    /// The node was carried into a new parent by a wrap or unwrap.
    fn on_moved(&mut self) {}
    /// The node's own call or header was rewritten.
    fn on_edited(&mut self) {}
}

impl EditTag for () {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Head {
    Assign { target: String, call: Call },
    Expr(Call),
    If(Condition),
    For { loop_var: String, iterable: String },
    While(Condition),
}

/// Loops own one body; conditionals always own two (then, else), where an
/// empty else stands for no else.
#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub head: Head,
    pub tag: T,
    pub bodies: Vec<Vec<Node<T>>>,
}

impl Head {
    pub fn of(stmt: &Stmt) -> Head {
        match stmt {
            Stmt::Assign { target, call } => Head::Assign {
                target: target.clone(),
                call: call.clone(),
            },
            Stmt::Expr(call) => Head::Expr(call.clone()),
            Stmt::If { condition, .. } => Head::If(condition.clone()),
            Stmt::For {
                loop_var, iterable, ..
            } => Head::For {
                loop_var: loop_var.clone(),
                iterable: iterable.clone(),
            },
            Stmt::While { condition, .. } => Head::While(condition.clone()),
        }
    }

    fn is_loop(&self) -> bool {
        matches!(self, Head::For { .. } | Head::While(_))
    }
}

impl<T: EditTag> Node<T> {
    pub fn from_stmt(stmt: &Stmt, tag: &mut impl FnMut(&Stmt) -> T) -> Self {
        let bodies = match stmt {
            Stmt::If {
                then_body,
                else_body,
                ..
            } => vec![
                from_stmts(then_body, tag),
                else_body.as_deref().map_or_else(Vec::new, |b| from_stmts(b, tag)),
            ],
            Stmt::For { body, .. } | Stmt::While { body, .. } => vec![from_stmts(body, tag)],
            _ => Vec::new(),
        };
        Node {
            head: Head::of(stmt),
            tag: tag(stmt),
            bodies,
        }
    }

    pub fn to_stmt(&self) -> Stmt {
        let body = |i: usize| to_stmts(&self.bodies[i]);
        match &self.head {
            Head::Assign { target, call } => Stmt::Assign {
                target: target.clone(),
                call: call.clone(),
            },
            Head::Expr(call) => Stmt::Expr(call.clone()),
            Head::If(condition) => Stmt::If {
                condition: condition.clone(),
                then_body: body(0),
                else_body: Some(body(1)).filter(|b| !b.is_empty()),
            },
            Head::For { loop_var, iterable } => Stmt::For {
                loop_var: loop_var.clone(),
                iterable: iterable.clone(),
                body: body(0),
            },
            Head::While(condition) => Stmt::While {
                condition: condition.clone(),
                body: body(0),
            },
        }
    }
}

pub(crate) fn from_stmts<T: EditTag>(stmts: &[Stmt], tag: &mut impl FnMut(&Stmt) -> T) -> Vec<Node<T>> {
    stmts.iter().map(|s| Node::from_stmt(s, tag)).collect()
}

pub(crate) fn from_program<T: EditTag>(program: &Program, tag: &mut impl FnMut(&Stmt) -> T) -> Vec<Node<T>> {
    from_stmts(&program.statements, tag)
}

pub(crate) fn to_stmts<T: EditTag>(nodes: &[Node<T>]) -> Vec<Stmt> {
    nodes.iter().map(Node::to_stmt).collect()
}

pub(crate) fn to_program<T: EditTag>(nodes: &[Node<T>]) -> Program {
    Program::new(to_stmts(nodes))
}

fn op_name(op: &EditOp) -> &'static str {
    match op {
        EditOp::InsertStmt { .. } => "insert_stmt",
        EditOp::DeleteStmt { .. } => "delete_stmt",
        EditOp::ReplaceCall { .. } => "replace_call",
        EditOp::WrapInLoop { .. } => "wrap_in_loop",
        EditOp::UnwrapLoop { .. } => "unwrap_loop",
        EditOp::SetCondition { .. } => "set_condition",
    }
}

/// The statement list a path prefix points into.
fn list_mut<'a, T>(nodes: &'a mut Vec<Node<T>>, prefix: &[usize]) -> Result<&'a mut Vec<Node<T>>, String> {
    let Some((&i, rest)) = prefix.split_first() else {
        return Ok(nodes);
    };
    let len = nodes.len();
    let node = nodes
        .get_mut(i)
        .ok_or_else(|| format!("index {i} out of range (scope has {len} statements)"))?;
    match node.head {
        Head::For { .. } | Head::While(_) => list_mut(&mut node.bodies[0], rest),
        Head::If(_) => {
            let Some((&b, rest)) = rest.split_first() else {
                return Err("conditional needs a branch index".into());
            };
            let branch = node
                .bodies
                .get_mut(b)
                .ok_or_else(|| format!("branch index {b} is not 0 or 1"))?;
            list_mut(branch, rest)
        }
        _ => Err(format!("statement at index {i} has no body")),
    }
}

fn split(path: &[usize]) -> Result<(&[usize], usize), String> {
    match path.split_last() {
        Some((&last, prefix)) => Ok((prefix, last)),
        None => Err("empty path".into()),
    }
}

fn loop_head(header: &str) -> Result<Head, String> {
    match parse_loop_header(header).map_err(|e| e.to_string())? {
        LoopHeader::For { loop_var, iterable } => Ok(Head::For { loop_var, iterable }),
        LoopHeader::While { condition } => Ok(Head::While(condition)),
    }
}

fn apply_op<T: EditTag>(nodes: &mut Vec<Node<T>>, op: &EditOp) -> Result<(), String> {
    let (prefix, idx) = split(op.path())?;
    let list = list_mut(nodes, prefix)?;
    let len = list.len();
    let missing = || format!("no statement at index {idx} (scope has {len})");
    match op {
        EditOp::InsertStmt { stmt, .. } => {
            if idx > len {
                return Err(format!("insert index {idx} past end of scope ({len})"));
            }
            list.insert(idx, Node::from_stmt(stmt, &mut |_| T::default()));
        }
        EditOp::DeleteStmt { .. } => {
            if idx >= len {
                return Err(missing());
            }
            list.remove(idx);
        }
        EditOp::ReplaceCall {
            new_callee, new_args, ..
        } => {
            let node = list.get_mut(idx).ok_or_else(missing)?;
            let call = match &mut node.head {
                Head::Assign { call, .. } | Head::Expr(call) => call,
                _ => return Err("replace_call on a compound statement".into()),
            };
            call.callee = new_callee.clone();
            call.args = new_args.clone();
            node.tag.on_edited();
        }
        EditOp::WrapInLoop { path_range, header } => {
            let end = idx + path_range.count;
            if path_range.count == 0 || end > len {
                return Err(format!("range {idx}..{end} invalid in scope of {len}"));
            }
            let head = loop_head(header)?;
            let mut body: Vec<Node<T>> = list.drain(idx..end).collect();
            for n in &mut body {
                n.tag.on_moved();
            }
            list.insert(
                idx,
                Node {
                    head,
                    tag: T::default(),
                    bodies: vec![body],
                },
            );
        }
        EditOp::UnwrapLoop { .. } => {
            let node = list.get(idx).ok_or_else(missing)?;
            if !node.head.is_loop() {
                return Err("unwrap_loop on a statement that is not a loop".into());
            }
            let mut node = list.remove(idx);
            let mut body = std::mem::take(&mut node.bodies[0]);
            for n in &mut body {
                n.tag.on_moved();
            }
            list.splice(idx..idx, body);
        }
        EditOp::SetCondition { text, .. } => {
            let node = list.get_mut(idx).ok_or_else(missing)?;
            match &mut node.head {
                Head::If(c) | Head::While(c) => {
                    Condition::validate(text)?;
                    *c = Condition::new(text);
                }
                head @ Head::For { .. } => match loop_head(&format!("for {text}"))? {
                    h @ Head::For { .. } => *head = h,
                    _ => unreachable!(),
                },
                _ => return Err("set_condition on a statement without a condition".into()),
            }
            node.tag.on_edited();
        }
    }
    Ok(())
}

pub(crate) fn apply<T: EditTag>(nodes: &mut Vec<Node<T>>, script: &EditScript) -> Result<(), PathError> {
    for (index, op) in script.ops.iter().enumerate() {
        apply_op(nodes, op).map_err(|reason| PathError {
            index,
            op: op_name(op),
            path: op.path().to_vec(),
            reason,
        })?;
    }
    Ok(())
}
