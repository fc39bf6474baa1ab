//! Minimal s-expression reader for PDDL text.
//!
//! Symbols are lowercased on read (PDDL is case-insensitive). `;` starts a
//! comment that runs to the end of the line.

use super::PddlError;

#[derive(Debug, Clone, PartialEq)]
pub enum Sexp {
    Symbol { text: String, line: usize },
    List { items: Vec<Sexp>, line: usize },
}

impl Sexp {
    pub fn line(&self) -> usize {
        match self {
            Sexp::Symbol { line, .. } | Sexp::List { line, .. } => *line,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            Sexp::Symbol { text, .. } => Some(text),
            Sexp::List { .. } => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List { items, .. } => Some(items),
            Sexp::Symbol { .. } => None,
        }
    }

    /// The head symbol of a list, if the list starts with one.
    pub fn head(&self) -> Option<&str> {
        self.as_list()
            .and_then(|items| items.first())
            .and_then(Sexp::as_symbol)
    }

    pub fn describe(&self) -> String {
        match self {
            Sexp::Symbol { text, .. } => format!("symbol `{text}`"),
            Sexp::List { items, .. } => match items.first().and_then(Sexp::as_symbol) {
                Some(h) => format!("list `({h} ...)`"),
                None => "list".to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open(usize),
    Close(usize),
    Symbol(String, usize),
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut chars = text.chars().peekable();
    let mut current = String::new();
    let mut current_line = 1;

    let flush = |current: &mut String, tokens: &mut Vec<Token>, at: usize| {
        if !current.is_empty() {
            tokens.push(Token::Symbol(current.to_lowercase(), at));
            current.clear();
        }
    };

    while let Some(c) = chars.next() {
        match c {
            '(' => {
                flush(&mut current, &mut tokens, current_line);
                tokens.push(Token::Open(line));
            }
            ')' => {
                flush(&mut current, &mut tokens, current_line);
                tokens.push(Token::Close(line));
            }
            ';' => {
                flush(&mut current, &mut tokens, current_line);
                for c in chars.by_ref() {
                    if c == '\n' {
                        line += 1;
                        break;
                    }
                }
            }
            c if c.is_whitespace() => {
                flush(&mut current, &mut tokens, current_line);
                if c == '\n' {
                    line += 1;
                }
            }
            c => {
                if current.is_empty() {
                    current_line = line;
                }
                current.push(c);
            }
        }
    }
    flush(&mut current, &mut tokens, current_line);
    tokens
}

/// Parse exactly one top-level expression.
pub fn parse(text: &str) -> Result<Sexp, PddlError> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let expr = parse_expr(&tokens, &mut pos)?;
    if let Some(tok) = tokens.get(pos) {
        let (line, found) = match tok {
            Token::Open(l) => (*l, "`(`".to_string()),
            Token::Close(l) => (*l, "`)`".to_string()),
            Token::Symbol(s, l) => (*l, format!("`{s}`")),
        };
        return Err(PddlError::Parse {
            line,
            expected: "end of input".into(),
            found,
        });
    }
    Ok(expr)
}

fn parse_expr(tokens: &[Token], pos: &mut usize) -> Result<Sexp, PddlError> {
    let last_line = tokens
        .last()
        .map(|t| match t {
            Token::Open(l) | Token::Close(l) | Token::Symbol(_, l) => *l,
        })
        .unwrap_or(1);
    match tokens.get(*pos) {
        None => Err(PddlError::Parse {
            line: last_line,
            expected: "`(` or symbol".into(),
            found: "end of input".into(),
        }),
        Some(Token::Close(line)) => Err(PddlError::Parse {
            line: *line,
            expected: "`(` or symbol".into(),
            found: "`)`".into(),
        }),
        Some(Token::Symbol(s, line)) => {
            *pos += 1;
            Ok(Sexp::Symbol {
                text: s.clone(),
                line: *line,
            })
        }
        Some(Token::Open(line)) => {
            let line = *line;
            *pos += 1;
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos) {
                    Some(Token::Close(_)) => {
                        *pos += 1;
                        return Ok(Sexp::List { items, line });
                    }
                    None => {
                        return Err(PddlError::Parse {
                            line: last_line,
                            expected: "`)`".into(),
                            found: "end of input".into(),
                        })
                    }
                    Some(_) => items.push(parse_expr(tokens, pos)?),
                }
            }
        }
    }
}
