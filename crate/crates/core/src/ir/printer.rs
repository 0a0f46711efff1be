use super::{Arg, ArgValue, Call, Program, Stmt};

const INDENT: &str = "  ";

/// Canonical text: two-space indentation, one statement per line, no
/// trailing whitespace and no trailing newline.
pub fn print_ir(program: &Program) -> String {
    let mut out = String::new();
    write_block(&mut out, &program.statements, 0);
    out.truncate(out.trim_end_matches('\n').len());
    out
}

/// Canonical text of a single statement (and its nested bodies).
pub fn print_stmt(stmt: &Stmt) -> String {
    let mut out = String::new();
    write_stmt(&mut out, stmt, 0);
    out.truncate(out.trim_end_matches('\n').len());
    out
}

fn write_block(out: &mut String, stmts: &[Stmt], depth: usize) {
    for stmt in stmts {
        write_stmt(out, stmt, depth);
    }
}

fn write_stmt(out: &mut String, stmt: &Stmt, depth: usize) {
    let pad = INDENT.repeat(depth);
    match stmt {
        Stmt::Assign { target, call } => {
            out.push_str(&format!("{pad}{target} = {}\n", call_text(call)));
        }
        Stmt::Expr(call) => out.push_str(&format!("{pad}{}\n", call_text(call))),
        Stmt::If {
            condition,
            then_body,
            else_body,
        } => {
            out.push_str(&format!("{pad}if {condition}:\n"));
            write_block(out, then_body, depth + 1);
            if let Some(body) = else_body {
                out.push_str(&format!("{pad}else:\n"));
                write_block(out, body, depth + 1);
            }
        }
        Stmt::For {
            loop_var,
            iterable,
            body,
        } => {
            out.push_str(&format!("{pad}for {loop_var} in {iterable}:\n"));
            write_block(out, body, depth + 1);
        }
        Stmt::While { condition, body } => {
            out.push_str(&format!("{pad}while {condition}:\n"));
            write_block(out, body, depth + 1);
        }
    }
}

pub(crate) fn call_text(call: &Call) -> String {
    let args: Vec<String> = call
        .args
        .iter()
        .map(|arg| match arg {
            Arg::Positional(value) => value_text(value),
            Arg::Keyword { name, value } => format!("{name}={}", value_text(value)),
        })
        .collect();
    format!("{}({})", call.callee, args.join(", "))
}

fn value_text(value: &ArgValue) -> String {
    match value {
        ArgValue::Ident(name) => name.clone(),
        ArgValue::Str(text) => quote(text),
    }
}

pub(crate) fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_ir;

    #[test]
    fn single_assignment() {
        let program = Program::new(vec![Stmt::Assign {
            target: "issue".into(),
            call: Call::new("GitHub_Issue__3_0_0__create_Issue"),
        }]);
        assert_eq!(print_ir(&program), "issue = GitHub_Issue__3_0_0__create_Issue()");
    }

    #[test]
    fn for_body_is_indented_two_spaces() {
        let program = parse_ir("xs = A()\nfor x in xs:\n      y = B()").unwrap();
        assert_eq!(print_ir(&program), "xs = A()\nfor x in xs:\n  y = B()");
    }

    #[test]
    fn escapes_round_trip() {
        let src = "user_task(\"say \\\"hi\\\"\\n\\\\ now\")";
        let program = parse_ir(src).unwrap();
        assert_eq!(print_ir(&program), src);
        assert_eq!(parse_ir(&print_ir(&program)).unwrap(), program);
    }

    #[test]
    fn printing_is_idempotent() {
        let src = "if  a:\n    f( x ,  k = 'v')\nelse:\n     g()\nwhile b :\n  h()";
        let once = print_ir(&parse_ir(src).unwrap());
        let twice = print_ir(&parse_ir(&once).unwrap());
        assert_eq!(once, twice);
        assert_eq!(once, "if a:\n  f(x, k=\"v\")\nelse:\n  g()\nwhile b:\n  h()");
    }
}
