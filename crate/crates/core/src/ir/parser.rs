//! Indentation-driven recursive descent over logical lines.

use super::lexer::{logical_lines, LogicalLine, Token, TokenKind};
use super::{is_identifier, Arg, ArgValue, Call, Condition, Program, Stmt, SyntaxError, RESERVED_WORDS};

/// Statement keywords outside the subset; each is rejected by name.
const REJECTED_STATEMENTS: &[&str] = &[
    "def", "class", "import", "from", "return", "try", "except", "finally", "with", "lambda",
    "pass", "break", "continue", "raise", "yield", "async", "await", "global", "nonlocal", "del",
    "assert",
];

/// Parses IR source text into a program.
pub fn parse_ir(source: &str) -> Result<Program, SyntaxError> {
    let lines = logical_lines(source)?;
    if lines.is_empty() {
        return Err(SyntaxError::new(1, 1, "empty program"));
    }
    let mut parser = Parser { lines, pos: 0 };
    let top = parser.lines[0].indent;
    let statements = parser.block(top, &[])?;
    if let Some(line) = parser.lines.get(parser.pos) {
        return Err(SyntaxError::new(
            line.line,
            line.indent + 1,
            "unindent does not match any outer indentation level",
        ));
    }
    Ok(Program { statements })
}

/// A parsed loop header, as written on a loop annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoopHeader {
    For { loop_var: String, iterable: String },
    While { condition: Condition },
}

/// Parses `for <ident> in <ident>` or `while <expr>` (a trailing colon is allowed).
pub fn parse_loop_header(text: &str) -> Result<LoopHeader, SyntaxError> {
    let trimmed = text.trim();
    let with_colon = if trimmed.ends_with(':') {
        trimmed.to_string()
    } else {
        format!("{trimmed}:")
    };
    let lines = logical_lines(&with_colon)?;
    let [line] = lines.as_slice() else {
        return Err(SyntaxError::new(1, 1, "loop header must be a single line"));
    };
    match first_word(line) {
        Some("for") => {
            let (loop_var, iterable) = for_header(line)?;
            Ok(LoopHeader::For { loop_var, iterable })
        }
        Some("while") => Ok(LoopHeader::While {
            condition: condition_between(line, 1)?,
        }),
        _ => Err(SyntaxError::new(
            line.line,
            1,
            "expected 'for <name> in <name>' or 'while <condition>'",
        )),
    }
}

struct Parser {
    lines: Vec<LogicalLine>,
    pos: usize,
}

impl Parser {
    /// Parses statements at exactly `indent`. Returns at end of input or at a
    /// line with smaller indentation, which must match an enclosing level.
    fn block(&mut self, indent: usize, enclosing: &[usize]) -> Result<Vec<Stmt>, SyntaxError> {
        let mut stmts = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent > indent {
                return Err(SyntaxError::new(line.line, line.indent + 1, "unexpected indent"));
            }
            if line.indent < indent {
                if !enclosing.contains(&line.indent) {
                    return Err(SyntaxError::new(
                        line.line,
                        line.indent + 1,
                        "unindent does not match any outer indentation level",
                    ));
                }
                break;
            }
            let stmt = self.statement(indent, enclosing)?;
            stmts.push(stmt);
        }
        Ok(stmts)
    }

    fn statement(&mut self, indent: usize, enclosing: &[usize]) -> Result<Stmt, SyntaxError> {
        let line = self.lines[self.pos].clone();
        match first_word(&line) {
            Some("if") => {
                let condition = condition_between(&line, 1)?;
                self.pos += 1;
                self.if_rest(condition, &line, indent, enclosing)
            }
            Some("for") => {
                let (loop_var, iterable) = for_header(&line)?;
                self.pos += 1;
                let body = self.suite(&line, indent, enclosing)?;
                if self.peek_word(indent) == Some("else") {
                    return Err(self.error_here("'else' on a loop is not supported"));
                }
                Ok(Stmt::For {
                    loop_var,
                    iterable,
                    body,
                })
            }
            Some("while") => {
                let condition = condition_between(&line, 1)?;
                self.pos += 1;
                let body = self.suite(&line, indent, enclosing)?;
                if self.peek_word(indent) == Some("else") {
                    return Err(self.error_here("'else' on a loop is not supported"));
                }
                Ok(Stmt::While { condition, body })
            }
            Some(word @ ("else" | "elif")) => Err(SyntaxError::new(
                line.line,
                line.indent + 1,
                format!("'{word}' without a matching 'if'"),
            )),
            Some(word) if REJECTED_STATEMENTS.contains(&word) => Err(SyntaxError::new(
                line.line,
                line.indent + 1,
                format!("'{word}' statements are not part of the workflow subset"),
            )),
            _ => {
                let stmt = simple_statement(&line)?;
                self.pos += 1;
                Ok(stmt)
            }
        }
    }

    fn if_rest(
        &mut self,
        condition: Condition,
        header: &LogicalLine,
        indent: usize,
        enclosing: &[usize],
    ) -> Result<Stmt, SyntaxError> {
        let then_body = self.suite(header, indent, enclosing)?;
        let else_body = match self.peek_word(indent) {
            Some("else") => {
                let line = self.lines[self.pos].clone();
                expect_bare_header(&line)?;
                self.pos += 1;
                Some(self.suite(&line, indent, enclosing)?)
            }
            Some("elif") => {
                let line = self.lines[self.pos].clone();
                let cond = condition_between(&line, 1)?;
                self.pos += 1;
                Some(vec![self.if_rest(cond, &line, indent, enclosing)?])
            }
            _ => None,
        };
        Ok(Stmt::If {
            condition,
            then_body,
            else_body,
        })
    }

    /// Parses the indented block following a header line.
    fn suite(
        &mut self,
        header: &LogicalLine,
        indent: usize,
        enclosing: &[usize],
    ) -> Result<Vec<Stmt>, SyntaxError> {
        match self.lines.get(self.pos) {
            Some(next) if next.indent > indent => {
                let inner = next.indent;
                let mut levels = enclosing.to_vec();
                levels.push(indent);
                self.block(inner, &levels)
            }
            _ => Err(SyntaxError::new(
                header.line,
                header.text.len() + header.indent,
                "expected an indented block after ':'",
            )),
        }
    }

    fn peek_word(&self, indent: usize) -> Option<&str> {
        let line = self.lines.get(self.pos)?;
        if line.indent != indent {
            return None;
        }
        first_word(line)
    }

    fn error_here(&self, message: &str) -> SyntaxError {
        let line = &self.lines[self.pos];
        SyntaxError::new(line.line, line.indent + 1, message)
    }
}

fn first_word(line: &LogicalLine) -> Option<&str> {
    match line.tokens.first().map(|t| &t.kind) {
        Some(TokenKind::Ident(word)) => Some(word.as_str()),
        _ => None,
    }
}

fn error_at(token: &Token, message: impl Into<String>) -> SyntaxError {
    SyntaxError::new(token.line, token.column, message)
}

fn end_error(line: &LogicalLine, message: impl Into<String>) -> SyntaxError {
    let column = line.tokens.last().map_or(line.indent + 1, |t| t.column + 1);
    let at = line.tokens.last().map_or(line.line, |t| t.line);
    SyntaxError::new(at, column, message)
}

/// Condition text between the keyword at `skip` tokens and the trailing colon.
fn condition_between(line: &LogicalLine, skip: usize) -> Result<Condition, SyntaxError> {
    let last = line.tokens.last().expect("non-empty logical line");
    if last.kind != TokenKind::Colon {
        return Err(end_error(line, "expected ':' at end of header"));
    }
    let n = line.tokens.len();
    if n <= skip + 1 {
        return Err(end_error(line, "missing condition"));
    }
    let text = line.slice(line.tokens[skip].start, line.tokens[n - 1].start);
    Condition::validate(text).map_err(|msg| error_at(&line.tokens[skip], msg))?;
    Ok(Condition::new(text))
}

fn expect_bare_header(line: &LogicalLine) -> Result<(), SyntaxError> {
    match line.tokens.as_slice() {
        [_, colon] if colon.kind == TokenKind::Colon => Ok(()),
        _ => Err(end_error(line, "expected ':' after 'else'")),
    }
}

fn for_header(line: &LogicalLine) -> Result<(String, String), SyntaxError> {
    let t = &line.tokens;
    match t.as_slice() {
        [_, var, kw_in, iter, colon]
            if matches!(&kw_in.kind, TokenKind::Ident(w) if w == "in")
                && colon.kind == TokenKind::Colon =>
        {
            let loop_var = plain_identifier(var)?;
            let iterable = plain_identifier(iter)?;
            Ok((loop_var, iterable))
        }
        _ => Err(error_at(
            &t[0],
            "for-loop header must be 'for <name> in <name>:'",
        )),
    }
}

fn plain_identifier(token: &Token) -> Result<String, SyntaxError> {
    match &token.kind {
        TokenKind::Ident(name) if !RESERVED_WORDS.contains(&name.as_str()) => {
            debug_assert!(is_identifier(name));
            Ok(name.clone())
        }
        TokenKind::Ident(name) => Err(error_at(token, format!("'{name}' is a reserved word"))),
        _ => Err(error_at(token, "expected an identifier")),
    }
}

fn simple_statement(line: &LogicalLine) -> Result<Stmt, SyntaxError> {
    let t = &line.tokens;
    if t.len() >= 2 && t[1].kind == TokenKind::Equals {
        let target = plain_identifier(&t[0])?;
        let call = call_expr(line, 2)?;
        return Ok(Stmt::Assign { target, call });
    }
    if t.len() >= 2 && t[1].kind == TokenKind::LParen {
        return Ok(Stmt::Expr(call_expr(line, 0)?));
    }
    Err(error_at(
        &t[0],
        "expected an assignment, a call, 'if', 'for' or 'while'",
    ))
}

/// `callee ( args ) <end of line>` starting at token `at`.
fn call_expr(line: &LogicalLine, at: usize) -> Result<Call, SyntaxError> {
    let t = &line.tokens;
    let Some(callee_tok) = t.get(at) else {
        return Err(end_error(line, "expected a call"));
    };
    let callee = match &callee_tok.kind {
        TokenKind::Ident(name) if !RESERVED_WORDS.contains(&name.as_str()) => name.clone(),
        _ => return Err(error_at(callee_tok, "expected a function call")),
    };
    match t.get(at + 1) {
        Some(tok) if tok.kind == TokenKind::LParen => {}
        Some(tok) => return Err(error_at(tok, "expected '(' after callee")),
        None => return Err(end_error(line, "expected a call, found a bare name")),
    }
    let mut args = Vec::new();
    let mut i = at + 2;
    loop {
        let Some(tok) = t.get(i) else {
            return Err(end_error(line, "unclosed '('"));
        };
        if tok.kind == TokenKind::RParen {
            i += 1;
            break;
        }
        let (arg, next) = argument(t, i)?;
        args.push(arg);
        i = next;
        match t.get(i).map(|tok| &tok.kind) {
            Some(TokenKind::Comma) => i += 1,
            Some(TokenKind::RParen) => {}
            Some(_) => return Err(error_at(&t[i], "expected ',' or ')' in argument list")),
            None => return Err(end_error(line, "unclosed '('")),
        }
    }
    if let Some(extra) = t.get(i) {
        return Err(error_at(extra, "unexpected tokens after call"));
    }
    let call = Call { callee, args };
    if call.is_user_task() && call.user_task_description().is_none() {
        return Err(error_at(
            callee_tok,
            "user_task takes exactly one string literal argument",
        ));
    }
    Ok(call)
}

fn argument(t: &[Token], i: usize) -> Result<(Arg, usize), SyntaxError> {
    let tok = &t[i];
    if let (TokenKind::Ident(name), Some(eq)) = (&tok.kind, t.get(i + 1)) {
        if eq.kind == TokenKind::Equals {
            let value_tok = t.get(i + 2).ok_or_else(|| error_at(eq, "missing keyword value"))?;
            let value = arg_value(value_tok)?;
            return Ok((
                Arg::Keyword {
                    name: name.clone(),
                    value,
                },
                i + 3,
            ));
        }
    }
    Ok((Arg::Positional(arg_value(tok)?), i + 1))
}

fn arg_value(token: &Token) -> Result<ArgValue, SyntaxError> {
    match &token.kind {
        TokenKind::Str(s) => Ok(ArgValue::Str(s.clone())),
        TokenKind::Ident(_) => Ok(ArgValue::Ident(plain_identifier(token)?)),
        _ => Err(error_at(
            token,
            "arguments must be string literals or identifiers",
        )),
    }
}
