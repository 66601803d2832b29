//! Infix rendering and parsing. The text form is fully parenthesized
//! (`(a + b)`, `sqrt(a)`, `(a ^ b)`) so parsing needs no precedence
//! table. JSON token/constant arrays stay canonical; the infix string is
//! for display and hand-written inputs.
//!
//! Numeric literals parse back as constant placeholders, except the exact
//! spelling `1.0`, which is the unit-constant token.

use thiserror::Error;

use super::{
    Expression, TokenId, TOK_ADD, TOK_CONST, TOK_DIV, TOK_EXP, TOK_LOG, TOK_MUL, TOK_ONE,
    TOK_POW, TOK_SQRT, TOK_SUB, VAR_BASE,
};

#[derive(Debug, Error, PartialEq)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        message: message.into(),
    })
}

pub fn to_infix(expr: &Expression) -> String {
    let mut pos = 0usize;
    let mut const_idx = 0usize;
    let s = render(&expr.tokens, &expr.constants, &mut pos, &mut const_idx);
    debug_assert_eq!(pos, expr.tokens.len());
    s
}

fn render(tokens: &[TokenId], constants: &[f64], pos: &mut usize, const_idx: &mut usize) -> String {
    let id = tokens[*pos];
    *pos += 1;
    match id {
        TOK_ADD | TOK_SUB | TOK_MUL | TOK_DIV | TOK_POW => {
            let a = render(tokens, constants, pos, const_idx);
            let b = render(tokens, constants, pos, const_idx);
            let op = match id {
                TOK_ADD => "+",
                TOK_SUB => "-",
                TOK_MUL => "*",
                TOK_DIV => "/",
                _ => "^",
            };
            format!("({a} {op} {b})")
        }
        TOK_SQRT | TOK_EXP | TOK_LOG => {
            let name = match id {
                TOK_SQRT => "sqrt",
                TOK_EXP => "exp",
                _ => "log",
            };
            let a = render(tokens, constants, pos, const_idx);
            format!("{name}({a})")
        }
        TOK_ONE => "1.0".to_string(),
        TOK_CONST => {
            let v = constants[*const_idx];
            *const_idx += 1;
            format!("{v}")
        }
        _ => format!("x{}", id - VAR_BASE + 1),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    Op(char),
    Ident(String),
    Number(f64, String),
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with its starting offset; Ok(None) at end of input.
    fn next(&mut self) -> Result<Option<(Tok, usize)>, ParseError> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos] as char;
        match c {
            '(' => {
                self.pos += 1;
                Ok(Some((Tok::LParen, start)))
            }
            ')' => {
                self.pos += 1;
                Ok(Some((Tok::RParen, start)))
            }
            '+' | '*' | '/' | '^' => {
                self.pos += 1;
                Ok(Some((Tok::Op(c), start)))
            }
            '-' => {
                // either a binary minus or the sign of a literal
                if self.pos + 1 < self.src.len()
                    && (self.src[self.pos + 1].is_ascii_digit() || self.src[self.pos + 1] == b'.')
                {
                    self.lex_number(start)
                } else {
                    self.pos += 1;
                    Ok(Some((Tok::Op('-'), start)))
                }
            }
            _ if c.is_ascii_digit() || c == '.' => self.lex_number(start),
            _ if c.is_ascii_alphabetic() => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let ident = std::str::from_utf8(&self.src[start..self.pos])
                    .unwrap()
                    .to_string();
                Ok(Some((Tok::Ident(ident), start)))
            }
            _ => err(start, format!("unexpected character '{c}'")),
        }
    }

    fn lex_number(&mut self, start: usize) -> Result<Option<(Tok, usize)>, ParseError> {
        if self.src[self.pos] == b'-' {
            self.pos += 1;
        }
        let mut seen_exp = false;
        while self.pos < self.src.len() {
            let b = self.src[self.pos];
            if b.is_ascii_digit() || b == b'.' {
                self.pos += 1;
            } else if (b == b'e' || b == b'E') && !seen_exp {
                seen_exp = true;
                self.pos += 1;
                if self.pos < self.src.len() && (self.src[self.pos] == b'-' || self.src[self.pos] == b'+')
                {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => Ok(Some((Tok::Number(v, text.to_string()), start))),
            Err(_) => err(start, format!("malformed number '{text}'")),
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<Option<(Tok, usize)>>,
    tokens: Vec<TokenId>,
    constants: Vec<f64>,
}

impl<'a> Parser<'a> {
    fn advance(&mut self) -> Result<Option<(Tok, usize)>, ParseError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next(),
        }
    }

    fn end_offset(&self) -> usize {
        self.lexer.src.len()
    }

    /// Parse one expression, returning the index where its prefix
    /// rendering starts in `self.tokens`.
    fn expect_expr(&mut self) -> Result<usize, ParseError> {
        match self.advance()? {
            None => err(self.end_offset(), "unexpected end of input"),
            Some((Tok::LParen, _)) => {
                // "(" expr op expr ")": the operator is spliced in front
                // of the left operand to restore prefix order
                let lhs_start = self.expect_expr()?;
                let (op_tok, op_at) = match self.advance()? {
                    Some((Tok::Op(c), at)) => (c, at),
                    Some((_, at)) => return err(at, "expected a binary operator"),
                    None => return err(self.end_offset(), "unexpected end of input"),
                };
                let op_id = match op_tok {
                    '+' => TOK_ADD,
                    '-' => TOK_SUB,
                    '*' => TOK_MUL,
                    '/' => TOK_DIV,
                    '^' => TOK_POW,
                    _ => return err(op_at, format!("unknown operator '{op_tok}'")),
                };
                self.tokens.insert(lhs_start, op_id);
                self.expect_expr()?;
                match self.advance()? {
                    Some((Tok::RParen, _)) => Ok(lhs_start),
                    Some((_, at)) => err(at, "expected ')'"),
                    None => err(self.end_offset(), "unexpected end of input"),
                }
            }
            Some((Tok::Ident(name), at)) => match name.as_str() {
                "sqrt" | "exp" | "log" => {
                    let id = match name.as_str() {
                        "sqrt" => TOK_SQRT,
                        "exp" => TOK_EXP,
                        _ => TOK_LOG,
                    };
                    let start = self.tokens.len();
                    self.tokens.push(id);
                    match self.advance()? {
                        Some((Tok::LParen, _)) => {}
                        Some((_, at)) => return err(at, "expected '(' after function name"),
                        None => return err(self.end_offset(), "unexpected end of input"),
                    }
                    self.expect_expr()?;
                    match self.advance()? {
                        Some((Tok::RParen, _)) => Ok(start),
                        Some((_, at)) => err(at, "expected ')'"),
                        None => err(self.end_offset(), "unexpected end of input"),
                    }
                }
                _ if name.starts_with('x') => match name[1..].parse::<usize>() {
                    Ok(k) if k >= 1 => {
                        let start = self.tokens.len();
                        self.tokens.push(VAR_BASE + k - 1);
                        Ok(start)
                    }
                    _ => err(at, format!("bad variable '{name}'")),
                },
                _ => err(at, format!("unknown identifier '{name}'")),
            },
            Some((Tok::Number(v, text), _)) => {
                let start = self.tokens.len();
                if text == "1.0" {
                    self.tokens.push(TOK_ONE);
                } else {
                    self.tokens.push(TOK_CONST);
                    self.constants.push(v);
                }
                Ok(start)
            }
            Some((tok, at)) => err(at, format!("unexpected token {tok:?}")),
        }
    }
}

/// Parse the fully-parenthesized infix form back into an expression.
pub fn parse(src: &str) -> Result<Expression, ParseError> {
    let mut p = Parser {
        lexer: Lexer::new(src),
        peeked: None,
        tokens: Vec::new(),
        constants: Vec::new(),
    };
    p.expect_expr()?;
    if let Some((_, at)) = p.advance()? {
        return err(at, "trailing input after expression");
    }
    Expression::new(p.tokens, p.constants).map_err(|e| ParseError {
        offset: src.len(),
        message: e.to_string(),
    })
}
