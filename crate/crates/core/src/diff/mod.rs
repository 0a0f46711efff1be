//! IR-level edit scripts: computing them, applying them to programs, and
//! patching them into existing BPMN documents.
//!
//! A path addresses a statement by indices: `[i]` at top level, `[i, k]`
//! inside the body of loop `i`, and `[i, b, k]` inside branch `b` of
//! conditional `i` (0 = then, 1 = else).

mod align;
mod patch;
mod tree;

use serde::{Deserialize, Serialize};

use crate::bpmn2py::DecompileError;
use crate::ir::{call_text, parse_ir, print_stmt, Arg, Call, Program, Stmt};

pub use align::diff_ir;
pub use patch::patch_bpmn;

pub type Path = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    InsertStmt {
        path: Path,
        #[serde(with = "stmt_text")]
        stmt: Stmt,
    },
    DeleteStmt {
        path: Path,
    },
    ReplaceCall {
        path: Path,
        new_callee: String,
        #[serde(with = "args_text")]
        new_args: Vec<Arg>,
    },
    /// Moves `count` consecutive statements starting at `path_range.path`
    /// into the body of a new loop with the given header.
    WrapInLoop {
        path_range: PathRange,
        header: String,
    },
    UnwrapLoop {
        path: Path,
    },
    /// New condition of an `if`/`while`, or `var in iterable` for a `for`.
    SetCondition {
        path: Path,
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRange {
    pub path: Path,
    pub count: usize,
}

impl EditOp {
    pub fn path(&self) -> &[usize] {
        match self {
            EditOp::InsertStmt { path, .. }
            | EditOp::DeleteStmt { path }
            | EditOp::ReplaceCall { path, .. }
            | EditOp::UnwrapLoop { path }
            | EditOp::SetCondition { path, .. } => path,
            EditOp::WrapInLoop { path_range, .. } => &path_range.path,
        }
    }

    /// Whether the op adds, removes or moves statements.
    pub fn is_structural(&self) -> bool {
        !matches!(self, EditOp::ReplaceCall { .. } | EditOp::SetCondition { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("edit scripts always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("op {index} ({op}) at path {path:?}: {reason}")]
pub struct PathError {
    pub index: usize,
    pub op: &'static str,
    pub path: Path,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchError {
    #[error(transparent)]
    Decompile(#[from] DecompileError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Applies a script to a program. Intermediate states may hold empty
/// bodies or an empty program; only the paths are checked.
pub fn apply_ir(base: &Program, script: &EditScript) -> Result<Program, PathError> {
    let mut nodes = tree::from_program::<()>(base, &mut |_| ());
    tree::apply(&mut nodes, script)?;
    Ok(tree::to_program(&nodes))
}

mod stmt_text {
    use super::*;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(stmt: &Stmt, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&print_stmt(stmt))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Stmt, D::Error> {
        let text = String::deserialize(d)?;
        let program = parse_ir(&text).map_err(D::Error::custom)?;
        match <[Stmt; 1]>::try_from(program.statements) {
            Ok([stmt]) => Ok(stmt),
            Err(_) => Err(D::Error::custom("expected exactly one statement")),
        }
    }
}

mod args_text {
    use super::*;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(args: &[Arg], s: S) -> Result<S::Ok, S::Error> {
        let call = Call {
            callee: "f".into(),
            args: args.to_vec(),
        };
        let text = call_text(&call);
        let inner = &text[2..text.len() - 1];
        let parts: Vec<String> = args
            .iter()
            .map(|a| {
                let one = call_text(&Call {
                    callee: "f".into(),
                    args: vec![a.clone()],
                });
                one[2..one.len() - 1].to_string()
            })
            .collect();
        debug_assert_eq!(parts.join(", "), inner);
        s.collect_seq(parts)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Arg>, D::Error> {
        let parts = Vec::<String>::deserialize(d)?;
        let program = parse_ir(&format!("f({})", parts.join(", "))).map_err(D::Error::custom)?;
        match program.statements.as_slice() {
            [Stmt::Expr(call)] => Ok(call.args.clone()),
            _ => Err(D::Error::custom("malformed argument list")),
        }
    }
}
