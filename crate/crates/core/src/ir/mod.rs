//! The restricted Python-syntax intermediate representation.
//!
//! A workflow is a list of statements drawn from a small subset of Python:
//! assignments of a call result, bare calls, `if`/`else`, `for` and `while`.
//! Callees are catalog activity ids, except for the reserved `user_task`
//! callee which marks a step performed by a human.

mod lexer;
mod normalize;
mod parser;
mod printer;

use std::fmt;

pub use normalize::{
    condition_identifiers, normalize_ir, rename_condition, resolve_bindings, BindingInfo,
};
pub use parser::{parse_ir, parse_loop_header, LoopHeader};
pub use printer::{print_ir, print_stmt};
pub(crate) use printer::call_text;

/// Reserved callee for human steps. It never names a catalog activity.
pub const USER_TASK: &str = "user_task";

/// Python keywords the subset refuses to treat as identifiers.
pub(crate) const RESERVED_WORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Program {
    pub statements: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Stmt {
    Assign {
        target: String,
        call: Call,
    },
    Expr(Call),
    If {
        condition: Condition,
        then_body: Vec<Stmt>,
        else_body: Option<Vec<Stmt>>,
    },
    For {
        loop_var: String,
        iterable: String,
        body: Vec<Stmt>,
    },
    While {
        condition: Condition,
        body: Vec<Stmt>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Call {
    pub callee: String,
    pub args: Vec<Arg>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Arg {
    Positional(ArgValue),
    Keyword { name: String, value: ArgValue },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ArgValue {
    Str(String),
    Ident(String),
}

/// Opaque condition of an `if`/`while`, kept verbatim up to whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Condition(String);

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at {span}: {message}")]
pub struct SyntaxError {
    pub span: SourceSpan,
    pub message: String,
}

impl SyntaxError {
    pub(crate) fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            span: SourceSpan { line, column },
            message: message.into(),
        }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

impl Program {
    pub fn new(statements: Vec<Stmt>) -> Self {
        Self { statements }
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Visits every call in document order, descending into compound bodies.
    pub fn for_each_call<'a>(&'a self, mut f: impl FnMut(&'a Call)) {
        fn walk<'a>(stmts: &'a [Stmt], f: &mut impl FnMut(&'a Call)) {
            for stmt in stmts {
                match stmt {
                    Stmt::Assign { call, .. } | Stmt::Expr(call) => f(call),
                    Stmt::If {
                        then_body,
                        else_body,
                        ..
                    } => {
                        walk(then_body, f);
                        if let Some(body) = else_body {
                            walk(body, f);
                        }
                    }
                    Stmt::For { body, .. } | Stmt::While { body, .. } => walk(body, f),
                }
            }
        }
        walk(&self.statements, &mut f);
    }

    /// Total statement count including nested ones.
    pub fn statement_count(&self) -> usize {
        fn count(stmts: &[Stmt]) -> usize {
            stmts
                .iter()
                .map(|s| 1 + s.bodies().map(|b| count(b)).sum::<usize>())
                .sum()
        }
        count(&self.statements)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_ir(self))
    }
}

impl Stmt {
    pub fn call(&self) -> Option<&Call> {
        match self {
            Stmt::Assign { call, .. } | Stmt::Expr(call) => Some(call),
            _ => None,
        }
    }

    /// Child statement lists: `[then, else?]` for `if`, `[body]` for loops.
    pub fn bodies(&self) -> impl Iterator<Item = &Vec<Stmt>> {
        let (first, second) = match self {
            Stmt::If {
                then_body,
                else_body,
                ..
            } => (Some(then_body), else_body.as_ref()),
            Stmt::For { body, .. } | Stmt::While { body, .. } => (Some(body), None),
            _ => (None, None),
        };
        first.into_iter().chain(second)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Stmt::Assign { .. } => "assign",
            Stmt::Expr(_) => "call",
            Stmt::If { .. } => "if",
            Stmt::For { .. } => "for",
            Stmt::While { .. } => "while",
        }
    }
}

impl Call {
    pub fn new(callee: impl Into<String>) -> Self {
        Self {
            callee: callee.into(),
            args: Vec::new(),
        }
    }

    pub fn user_task(description: impl Into<String>) -> Self {
        Self {
            callee: USER_TASK.to_string(),
            args: vec![Arg::Positional(ArgValue::Str(description.into()))],
        }
    }

    pub fn is_user_task(&self) -> bool {
        self.callee == USER_TASK
    }

    /// The description carried by a `user_task("...")` call.
    pub fn user_task_description(&self) -> Option<&str> {
        if !self.is_user_task() {
            return None;
        }
        match self.args.as_slice() {
            [Arg::Positional(ArgValue::Str(text))] => Some(text),
            _ => None,
        }
    }
}

impl Condition {
    /// Builds a condition, collapsing whitespace runs outside string literals.
    pub fn new(text: &str) -> Self {
        Self(collapse_whitespace(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Checks the lexical invariants: single line, balanced brackets.
    pub fn validate(text: &str) -> Result<(), String> {
        if text.contains('\n') || text.contains('\r') {
            return Err("condition spans multiple lines".into());
        }
        if text.trim().is_empty() {
            return Err("empty condition".into());
        }
        let mut stack = Vec::new();
        let mut quote: Option<char> = None;
        let mut chars = text.chars();
        while let Some(c) = chars.next() {
            if let Some(q) = quote {
                if c == '\\' {
                    chars.next();
                } else if c == q {
                    quote = None;
                }
                continue;
            }
            match c {
                '"' | '\'' => quote = Some(c),
                '(' | '[' | '{' => stack.push(c),
                ')' | ']' | '}' => {
                    let open = match c {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    if stack.pop() != Some(open) {
                        return Err(format!("unbalanced '{c}' in condition"));
                    }
                }
                _ => {}
            }
        }
        if quote.is_some() {
            return Err("unterminated string in condition".into());
        }
        if !stack.is_empty() {
            return Err("unclosed bracket in condition".into());
        }
        Ok(())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut quote: Option<char> = None;
    let mut pending_space = false;
    let mut chars = text.trim().chars();
    while let Some(c) = chars.next() {
        if let Some(q) = quote {
            out.push(c);
            if c == '\\' {
                if let Some(next) = chars.next() {
                    out.push(next);
                }
            } else if c == q {
                quote = None;
            }
            continue;
        }
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        if c == '"' || c == '\'' {
            quote = Some(c);
        }
        out.push(c);
    }
    out
}

/// Identifier lexical rule: letters, digits, underscore; no leading digit.
pub fn is_identifier(text: &str) -> bool {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_alphanumeric())
}

/// Multiset of activity ids called by the program, in document order.
/// The reserved `user_task` callee is excluded.
pub fn collect_activities(program: &Program) -> Vec<String> {
    let mut out = Vec::new();
    program.for_each_call(|call| {
        if !call.is_user_task() {
            out.push(call.callee.clone());
        }
    });
    out
}
