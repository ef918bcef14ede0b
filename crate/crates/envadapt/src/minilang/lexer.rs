//! Tokenizer for ELC source text.

use super::ast::Pos;
use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    KwInt,
    KwFloat,
    KwFor,
    KwWhile,
    KwIf,
    KwElse,
    KwCall,
    KwOutput,
    KwAccel,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Semi,
    Comma,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    /// `#pragma xfer copyin(v)` or `copyout(v)` on its own line.
    Pragma {
        copyout: bool,
        var: String,
    },
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Float(v) => format!("float `{v}`"),
            Tok::KwInt => "`int`".into(),
            Tok::KwFloat => "`float`".into(),
            Tok::KwFor => "`for`".into(),
            Tok::KwWhile => "`while`".into(),
            Tok::KwIf => "`if`".into(),
            Tok::KwElse => "`else`".into(),
            Tok::KwCall => "`call`".into(),
            Tok::KwOutput => "`output`".into(),
            Tok::KwAccel => "`accel`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::Ne => "`!=`".into(),
            Tok::Pragma { .. } => "transfer pragma".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub pos: Pos,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor {
            chars: text.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }
}

fn lex_pragma(cur: &mut Cursor, pos: Pos) -> Result<Tok, ParseError> {
    // Consume the rest of the line and parse it as a transfer pragma.
    let mut line = String::new();
    while let Some(c) = cur.peek() {
        if c == '\n' {
            break;
        }
        line.push(cur.bump().unwrap());
    }
    let body = line.trim();
    let rest = body.strip_prefix("pragma").map(str::trim_start).ok_or_else(|| {
        ParseError::Syntax {
            pos,
            expected: "`pragma` after `#`".into(),
        }
    })?;
    let rest = rest.strip_prefix("xfer").map(str::trim_start).ok_or_else(|| {
        ParseError::Syntax {
            pos,
            expected: "`xfer` pragma class".into(),
        }
    })?;
    let (copyout, rest) = if let Some(r) = rest.strip_prefix("copyin") {
        (false, r)
    } else if let Some(r) = rest.strip_prefix("copyout") {
        (true, r)
    } else {
        return Err(ParseError::Syntax {
            pos,
            expected: "`copyin` or `copyout`".into(),
        });
    };
    let rest = rest.trim();
    let var = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .map(str::trim)
        .filter(|v| !v.is_empty() && v.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
        .ok_or_else(|| ParseError::Syntax {
            pos,
            expected: "`(variable)` in transfer pragma".into(),
        })?;
    Ok(Tok::Pragma {
        copyout,
        var: var.to_string(),
    })
}

/// Tokenize a full source text.
pub fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut cur = Cursor::new(text);
    let mut out = Vec::new();
    loop {
        while matches!(cur.peek(), Some(c) if c.is_whitespace()) {
            cur.bump();
        }
        let pos = cur.pos();
        let c = match cur.peek() {
            Some(c) => c,
            None => break,
        };
        let tok = match c {
            '#' => {
                cur.bump();
                lex_pragma(&mut cur, pos)?
            }
            '(' => {
                cur.bump();
                Tok::LParen
            }
            ')' => {
                cur.bump();
                Tok::RParen
            }
            '[' => {
                cur.bump();
                Tok::LBracket
            }
            ']' => {
                cur.bump();
                Tok::RBracket
            }
            '{' => {
                cur.bump();
                Tok::LBrace
            }
            '}' => {
                cur.bump();
                Tok::RBrace
            }
            ';' => {
                cur.bump();
                Tok::Semi
            }
            ',' => {
                cur.bump();
                Tok::Comma
            }
            '+' => {
                cur.bump();
                Tok::Plus
            }
            '-' => {
                cur.bump();
                Tok::Minus
            }
            '*' => {
                cur.bump();
                Tok::Star
            }
            '/' => {
                cur.bump();
                Tok::Slash
            }
            '=' => {
                cur.bump();
                if cur.peek() == Some('=') {
                    cur.bump();
                    Tok::EqEq
                } else {
                    Tok::Assign
                }
            }
            '<' => {
                cur.bump();
                if cur.peek() == Some('=') {
                    cur.bump();
                    Tok::Le
                } else {
                    Tok::Lt
                }
            }
            '>' => {
                cur.bump();
                if cur.peek() == Some('=') {
                    cur.bump();
                    Tok::Ge
                } else {
                    Tok::Gt
                }
            }
            '!' => {
                cur.bump();
                if cur.peek() == Some('=') {
                    cur.bump();
                    Tok::Ne
                } else {
                    return Err(ParseError::Syntax {
                        pos,
                        expected: "`=` after `!`".into(),
                    });
                }
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                    s.push(cur.bump().unwrap());
                }
                let mut is_float = false;
                if cur.peek() == Some('.') {
                    is_float = true;
                    s.push(cur.bump().unwrap());
                    while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                        s.push(cur.bump().unwrap());
                    }
                }
                if matches!(cur.peek(), Some('e' | 'E')) {
                    is_float = true;
                    s.push(cur.bump().unwrap());
                    if matches!(cur.peek(), Some('+' | '-')) {
                        s.push(cur.bump().unwrap());
                    }
                    while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                        s.push(cur.bump().unwrap());
                    }
                }
                if is_float {
                    Tok::Float(s.parse().map_err(|_| ParseError::Syntax {
                        pos,
                        expected: "float literal".into(),
                    })?)
                } else {
                    Tok::Int(s.parse().map_err(|_| ParseError::Syntax {
                        pos,
                        expected: "integer literal in range".into(),
                    })?)
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while matches!(cur.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    s.push(cur.bump().unwrap());
                }
                match s.as_str() {
                    "int" => Tok::KwInt,
                    "float" => Tok::KwFloat,
                    "for" => Tok::KwFor,
                    "while" => Tok::KwWhile,
                    "if" => Tok::KwIf,
                    "else" => Tok::KwElse,
                    "call" => Tok::KwCall,
                    "output" => Tok::KwOutput,
                    "accel" => Tok::KwAccel,
                    _ => Tok::Ident(s),
                }
            }
            other => {
                return Err(ParseError::Syntax {
                    pos,
                    expected: format!("token, found `{other}`"),
                })
            }
        };
        out.push(Spanned { tok, pos });
    }
    Ok(out)
}
