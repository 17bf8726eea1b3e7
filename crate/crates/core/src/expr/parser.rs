//! Recursive-descent parser for the expression grammar.
//!
//! Variables `x1..xN`, decimal/scientific literals, operators `+ - * / ^`
//! with standard precedence (`^` right-associative, binds tightest),
//! functions `sin cos exp ln abs sqrt` with mandatory parentheses,
//! unary minus allowed.

use super::{BinaryOp, Expr, UnaryOp};
use crate::error::{Error, Result};

use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(usize, Token)>> {
        let mut lx = Lexer {
            src: src.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        while lx.pos < lx.src.len() {
            let start = lx.pos;
            let c = lx.src[lx.pos];
            match c {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    lx.pos += 1;
                }
                b'+' => lx.push1(&mut out, Token::Plus),
                b'-' => lx.push1(&mut out, Token::Minus),
                b'*' => lx.push1(&mut out, Token::Star),
                b'/' => lx.push1(&mut out, Token::Slash),
                b'^' => lx.push1(&mut out, Token::Caret),
                b'(' => lx.push1(&mut out, Token::LParen),
                b')' => lx.push1(&mut out, Token::RParen),
                b'0'..=b'9' => {
                    let tok = lx.number()?;
                    out.push((start, tok));
                }
                b'a'..=b'z' | b'A'..=b'Z' => {
                    while lx.pos < lx.src.len()
                        && (lx.src[lx.pos].is_ascii_alphanumeric())
                    {
                        lx.pos += 1;
                    }
                    let name = std::str::from_utf8(&lx.src[start..lx.pos]).unwrap();
                    out.push((start, Token::Ident(name.to_string())));
                }
                _ => {
                    return Err(Error::Syntax {
                        position: start,
                        expected: "a token".to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    fn push1(&mut self, out: &mut Vec<(usize, Token)>, t: Token) {
        out.push((self.pos, t));
        self.pos += 1;
    }

    fn number(&mut self) -> Result<Token> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // not an exponent after all (e.g. `2*exp(x1)` lexed as `2` `exp`)
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map(Token::Num).map_err(|_| Error::Syntax {
            position: start,
            expected: "a numeric literal".to_string(),
        })
    }
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    cursor: usize,
    end: usize,
    dim: usize,
}

const FUNCTIONS: [(&str, UnaryOp); 6] = [
    ("sin", UnaryOp::Sin),
    ("cos", UnaryOp::Cos),
    ("exp", UnaryOp::Exp),
    ("ln", UnaryOp::Ln),
    ("abs", UnaryOp::Abs),
    ("sqrt", UnaryOp::Sqrt),
];

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.tokens
            .get(self.cursor)
            .map(|(p, _)| *p)
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.cursor).map(|(_, t)| t.clone());
        self.cursor += 1;
        t
    }

    fn expect(&mut self, t: &Token, what: &str) -> Result<()> {
        if self.peek() == Some(t) {
            self.cursor += 1;
            Ok(())
        } else {
            Err(self.err(what))
        }
    }

    fn err(&self, expected: &str) -> Error {
        Error::Syntax {
            position: self.pos(),
            expected: expected.to_string(),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinaryOp::Add,
                Some(Token::Minus) => BinaryOp::Sub,
                _ => break,
            };
            self.cursor += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Arc::new(lhs), Arc::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinaryOp::Mul,
                Some(Token::Slash) => BinaryOp::Div,
                _ => break,
            };
            self.cursor += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Arc::new(lhs), Arc::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Token::Minus) {
            self.cursor += 1;
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Arc::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(&Token::Caret) {
            self.cursor += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Binary(
                BinaryOp::Pow,
                Arc::new(base),
                Arc::new(exponent),
            ));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Const(v)),
            Some(Token::LParen) => {
                let e = self.expr()?;
                self.expect(&Token::RParen, "`)`")?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                if let Some((_, op)) = FUNCTIONS.iter().find(|(n, _)| *n == name) {
                    self.expect(&Token::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(&Token::RParen, "`)`")?;
                    return Ok(Expr::Unary(*op, Arc::new(arg)));
                }
                if let Some(digits) = name.strip_prefix('x') {
                    if let Ok(idx) = digits.parse::<usize>() {
                        if idx >= 1 && idx <= self.dim {
                            return Ok(Expr::Var(idx));
                        }
                        return Err(Error::UnknownVariable {
                            name,
                            dim: self.dim,
                        });
                    }
                }
                Err(Error::UnknownVariable {
                    name,
                    dim: self.dim,
                })
            }
            _ => Err(self.err("a number, variable, function or `(`")),
        }
    }
}

/// Parse `text` as an expression in variables `x1..x{dim}`.
pub fn parse(text: &str, dim: usize) -> Result<Expr> {
    let tokens = Lexer::tokenize(text)?;
    let mut parser = Parser {
        tokens,
        cursor: 0,
        end: text.len(),
        dim,
    };
    let e = parser.expr()?;
    if parser.cursor != parser.tokens.len() {
        return Err(parser.err("end of input"));
    }
    Ok(e)
}
