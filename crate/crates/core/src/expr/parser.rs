//! Recursive-descent parser for Lagrangian expressions.
//!
//! ```text
//! expr     = term { ("+" | "-") term } ;
//! term     = unary { ("*" | "/") unary } ;
//! unary    = "-" unary | power ;
//! power    = primary [ "^" unary ] ;
//! primary  = number | variable | func "(" expr ")" | "(" expr ")" ;
//! variable = "t" | "mu" | "y[" int "]" | "u[" int "]"
//!          | "dy[" int "]" [ "[" int "]" ] ;
//! func     = "sin" | "cos" | "exp" | "log" | "sqrt" ;
//! number   = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```

use super::ast::{BinOp, Expr, Func, Var};
use super::Arity;
use crate::error::{Error, Result};

pub(crate) fn parse(src: &str, arity: Arity) -> Result<Expr> {
    let mut p = Parser { src: src.as_bytes(), pos: 0, arity };
    p.skip_ws();
    if p.at_end() {
        return Err(p.syntax("empty expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.syntax(&format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    arity: Arity,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn syntax(&self, message: &str) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinOp::Add
            } else if self.eat(b'-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(b'*') {
                BinOp::Mul
            } else if self.eat(b'/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::binary(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat(b'^') {
            return Ok(Expr::binary(BinOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.syntax("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(self.syntax(&format!("unexpected `{}`", c as char))),
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        self.pos - start
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let mut count = self.digits();
        if self.peek() == Some(b'.') {
            self.pos += 1;
            count += self.digits();
        }
        if count == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                self.pos = mark;
                return Err(self.syntax("malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| Error::Syntax { offset: start, message: format!("malformed number `{text}`") })
    }

    fn index(&mut self) -> Result<usize> {
        self.expect(b'[')?;
        self.skip_ws();
        let start = self.pos;
        if self.digits() == 0 {
            return Err(self.syntax("expected an index"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let idx = text
            .parse()
            .map_err(|_| Error::Syntax { offset: start, message: "index too large".into() })?;
        self.expect(b']')?;
        Ok(idx)
    }

    fn identifier(&mut self) -> Result<Expr> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let Arity { n, r, m } = self.arity;
        let var = match name {
            "t" => Var::Time,
            "mu" => Var::Mu,
            "y" => {
                let i = self.index()?;
                if i >= n {
                    return Err(Error::Arity(format!("y[{i}] at byte {start} exceeds state dimension {n}")));
                }
                Var::Y(i)
            }
            "u" => {
                let i = self.index()?;
                if i >= m {
                    return Err(Error::Arity(format!("u[{i}] at byte {start} exceeds control dimension {m}")));
                }
                Var::U(i)
            }
            "dy" => {
                let comp = self.index()?;
                self.skip_ws();
                let order = if self.peek() == Some(b'[') { self.index()? } else { 1 };
                if comp >= n {
                    return Err(Error::Arity(format!(
                        "dy[{comp}] at byte {start} exceeds state dimension {n}"
                    )));
                }
                if order == 0 || order > r {
                    return Err(Error::Arity(format!(
                        "derivative order {order} at byte {start} outside 1..={r}"
                    )));
                }
                Var::Dy { comp, order }
            }
            "abs" => {
                return Err(Error::UnknownIdentifier {
                    name: "abs (not continuously differentiable)".into(),
                    offset: start,
                })
            }
            other => match Func::from_name(other) {
                Some(func) => {
                    self.expect(b'(')?;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                None => {
                    return Err(Error::UnknownIdentifier {
                        name: other.to_string(),
                        offset: start,
                    })
                }
            },
        };
        Ok(Expr::Var(var))
    }
}
