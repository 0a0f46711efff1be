use super::SyntaxError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenKind {
    Ident(String),
    Str(String),
    Number,
    LParen,
    RParen,
    Comma,
    Equals,
    Colon,
    /// Any other operator or bracket; only meaningful inside conditions.
    Punct(char),
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokenKind,
    /// Byte offset in the logical line text.
    pub start: usize,
    pub line: usize,
    pub column: usize,
}

/// One statement line after joining bracket continuations and dropping comments.
#[derive(Debug, Clone)]
pub(crate) struct LogicalLine {
    pub indent: usize,
    pub line: usize,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl LogicalLine {
    pub fn slice(&self, start: usize, end: usize) -> &str {
        &self.text[start..end]
    }
}

/// Splits source into logical lines, tokenizing each.
pub(crate) fn logical_lines(source: &str) -> Result<Vec<LogicalLine>, SyntaxError> {
    let mut out = Vec::new();
    let mut current: Option<LogicalLine> = None;
    // Open brackets carried across physical lines: (char, line, column).
    let mut open: Vec<(char, usize, usize)> = Vec::new();

    for (idx, raw) in source.split('\n').enumerate() {
        let line_no = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);

        let body_start = if current.is_none() {
            let mut indent = 0;
            for (col, c) in raw.char_indices() {
                match c {
                    ' ' => indent += 1,
                    '\t' => {
                        return Err(SyntaxError::new(
                            line_no,
                            col + 1,
                            "tab character in indentation",
                        ))
                    }
                    _ => break,
                }
            }
            let rest = &raw[indent..];
            if rest.trim().is_empty() || rest.starts_with('#') {
                continue;
            }
            current = Some(LogicalLine {
                indent,
                line: line_no,
                text: String::new(),
                tokens: Vec::new(),
            });
            indent
        } else {
            raw.len() - raw.trim_start().len()
        };

        let logical = current.as_mut().expect("logical line in progress");
        if !logical.text.is_empty() {
            logical.text.push(' ');
        }
        let offset = logical.text.len();
        let segment = &raw[body_start..];
        let consumed = tokenize_segment(segment, offset, line_no, body_start, logical, &mut open)?;
        logical.text.push_str(&segment[..consumed]);
        let trimmed_len = logical.text.trim_end().len();
        logical.text.truncate(trimmed_len);

        if open.is_empty() {
            out.push(current.take().expect("logical line in progress"));
        }
    }

    if let Some((c, line, column)) = open.first() {
        return Err(SyntaxError::new(*line, *column, format!("unclosed '{c}'")));
    }
    Ok(out)
}

/// Tokenizes one physical segment, returning how many bytes belong to code
/// (everything before a comment).
fn tokenize_segment(
    segment: &str,
    offset: usize,
    line: usize,
    col_base: usize,
    logical: &mut LogicalLine,
    open: &mut Vec<(char, usize, usize)>,
) -> Result<usize, SyntaxError> {
    let bytes: Vec<(usize, char)> = segment.char_indices().collect();
    let mut i = 0;
    while i < bytes.len() {
        let (pos, c) = bytes[i];
        let column = col_base + segment[..pos].chars().count() + 1;
        let push = |logical: &mut LogicalLine, kind: TokenKind| {
            logical.tokens.push(Token {
                kind,
                start: offset + pos,
                line,
                column,
            });
        };
        if c == '#' {
            return Ok(pos);
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '_' || c.is_alphabetic() {
            let mut j = i;
            while j < bytes.len() && (bytes[j].1 == '_' || bytes[j].1.is_alphanumeric()) {
                j += 1;
            }
            let end = bytes.get(j).map_or(segment.len(), |b| b.0);
            push(logical, TokenKind::Ident(segment[pos..end].to_string()));
            i = j;
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            while j < bytes.len() && (bytes[j].1.is_ascii_alphanumeric() || bytes[j].1 == '.') {
                j += 1;
            }
            push(logical, TokenKind::Number);
            i = j;
            continue;
        }
        if c == '"' || c == '\'' {
            let mut value = String::new();
            let mut j = i + 1;
            let mut closed = false;
            while j < bytes.len() {
                let ch = bytes[j].1;
                if ch == '\\' {
                    match bytes.get(j + 1).map(|b| b.1) {
                        Some('n') => value.push('\n'),
                        Some('t') => value.push('\t'),
                        Some('\\') => value.push('\\'),
                        Some('"') => value.push('"'),
                        Some('\'') => value.push('\''),
                        Some(other) => {
                            value.push('\\');
                            value.push(other);
                        }
                        None => break,
                    }
                    j += 2;
                    continue;
                }
                if ch == c {
                    closed = true;
                    break;
                }
                value.push(ch);
                j += 1;
            }
            if !closed {
                return Err(SyntaxError::new(line, column, "unterminated string literal"));
            }
            push(logical, TokenKind::Str(value));
            i = j + 1;
            continue;
        }
        let kind = match c {
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            ',' => TokenKind::Comma,
            ':' => TokenKind::Colon,
            '=' if bytes.get(i + 1).map(|b| b.1) != Some('=') => TokenKind::Equals,
            other => TokenKind::Punct(other),
        };
        match c {
            '(' | '[' | '{' => open.push((c, line, column)),
            ')' | ']' | '}' => {
                let expected = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match open.pop() {
                    Some((o, _, _)) if o == expected => {}
                    _ => return Err(SyntaxError::new(line, column, format!("unmatched '{c}'"))),
                }
            }
            _ => {}
        }
        // Two-character operators stay one token so `==` never reads as `=`.
        if matches!(c, '=' | '!' | '<' | '>') && bytes.get(i + 1).map(|b| b.1) == Some('=') {
            push(logical, TokenKind::Punct(c));
            i += 2;
            continue;
        }
        push(logical, kind);
        i += 1;
    }
    Ok(segment.len())
}
