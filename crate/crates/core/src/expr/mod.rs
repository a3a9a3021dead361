//! Lagrangian and dynamics expressions.
//!
//! Expressions are parsed from text (grammar in [`parser`]) and evaluated
//! together with all first partial derivatives by forward-mode dual
//! arithmetic: one pass per variable that actually occurs in the tree.
//!
//! Variables are laid out in a single vector
//! `[y^0 | y^1 | … | y^r | u]`, where block `y^j` holds the `j`-th
//! Δ-derivative of all `n` state components. `t` and `mu` are parameters
//! and have no partials.

mod ast;
pub mod dual;
mod parser;

use std::fmt;

use serde::{Serialize, Serializer};

pub use ast::{BinOp, Expr, Func, Var};

use crate::error::{Error, Result};
use dual::{Dual, Scalar};

/// Declared dimensions: `n` state components, derivatives up to order `r`,
/// `m` controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Arity {
    pub n: usize,
    pub r: usize,
    pub m: usize,
}

impl Arity {
    pub const fn new(n: usize, r: usize, m: usize) -> Self {
        Self { n, r, m }
    }

    pub fn num_vars(&self) -> usize {
        self.n * (self.r + 1) + self.m
    }

    /// Position of a variable in the evaluation vector.
    pub fn index(&self, v: Var) -> Option<usize> {
        match v {
            Var::Time | Var::Mu => None,
            Var::Y(i) if i < self.n => Some(i),
            Var::Dy { comp, order } if comp < self.n && (1..=self.r).contains(&order) => {
                Some(order * self.n + comp)
            }
            Var::U(i) if i < self.m => Some(self.n * (self.r + 1) + i),
            _ => None,
        }
    }

    pub fn var(&self, index: usize) -> Var {
        let states = self.n * (self.r + 1);
        if index >= states {
            Var::U(index - states)
        } else if index < self.n {
            Var::Y(index)
        } else {
            Var::Dy {
                comp: index % self.n,
                order: index / self.n,
            }
        }
    }
}

/// Values for one evaluation: `t`, the graininess bound to `mu`, and the
/// variable vector in [`Arity`] layout.
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint<'a> {
    pub t: f64,
    pub mu: f64,
    pub vars: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    pub value: f64,
    /// One entry per declared variable, in [`Arity`] layout.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianExpr {
    ast: Expr,
    arity: Arity,
    used: Vec<usize>,
}

impl LagrangianExpr {
    pub fn parse(src: &str, arity: Arity) -> Result<Self> {
        Self::from_ast(parser::parse(src, arity)?, arity)
    }

    /// Wraps a tree after checking that every variable fits `arity`.
    pub fn from_ast(ast: Expr, arity: Arity) -> Result<Self> {
        let mut used = Vec::new();
        let mut bad = None;
        ast.visit_vars(&mut |v| match v {
            Var::Time | Var::Mu => {}
            _ => match arity.index(v) {
                Some(i) => used.push(i),
                None => bad = Some(v),
            },
        });
        if let Some(v) = bad {
            return Err(Error::Arity(format!("{v} is outside arity {arity:?}")));
        }
        used.sort_unstable();
        used.dedup();
        Ok(Self { ast, arity, used })
    }

    pub fn constant(value: f64, arity: Arity) -> Self {
        Self {
            ast: Expr::num(value),
            arity,
            used: Vec::new(),
        }
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    /// Indices of the variables that occur in the expression.
    pub fn used_vars(&self) -> &[usize] {
        &self.used
    }

    pub fn uses(&self, v: Var) -> bool {
        match self.arity.index(v) {
            Some(i) => self.used.binary_search(&i).is_ok(),
            None => {
                let mut found = false;
                self.ast.visit_vars(&mut |w| found |= w == v);
                found
            }
        }
    }

    pub fn polynomial_degree(&self) -> Option<u32> {
        self.ast.polynomial_degree()
    }

    fn check_point(&self, p: &EvalPoint<'_>) -> Result<()> {
        if p.vars.len() != self.arity.num_vars() {
            return Err(Error::Arity(format!(
                "point assigns {} variables, expression declares {}",
                p.vars.len(),
                self.arity.num_vars()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, p: &EvalPoint<'_>) -> Result<f64> {
        self.check_point(p)?;
        eval_node(&self.ast, &self.arity, p.t, p.mu, p.vars)
    }

    /// Value and every first partial, exact up to rounding.
    pub fn eval_with_partials(&self, p: &EvalPoint<'_>) -> Result<Partials> {
        self.check_point(p)?;
        let mut grad = vec![0.0; self.arity.num_vars()];
        if self.used.is_empty() {
            let value = eval_node(&self.ast, &self.arity, p.t, p.mu, p.vars)?;
            return Ok(Partials { value, grad });
        }
        let mut duals: Vec<Dual> = p.vars.iter().map(|&v| Dual::constant(v)).collect();
        let mut value = 0.0;
        for &k in &self.used {
            duals[k].eps = 1.0;
            let d = eval_node(&self.ast, &self.arity, Dual::constant(p.t), Dual::constant(p.mu), &duals)?;
            duals[k].eps = 0.0;
            value = d.re;
            grad[k] = d.eps;
        }
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::EvalDomain(format!("non-finite partial derivative {bad}")));
        }
        Ok(Partials { value, grad })
    }
}

impl fmt::Display for LagrangianExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.fmt(f)
    }
}

impl Serialize for LagrangianExpr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(&self.ast)
    }
}

fn eval_node<S: Scalar>(e: &Expr, arity: &Arity, t: S, mu: S, vars: &[S]) -> Result<S> {
    let v = match e {
        Expr::Num(v) => S::constant(*v),
        Expr::Var(Var::Time) => t,
        Expr::Var(Var::Mu) => mu,
        Expr::Var(v) => vars[arity.index(*v).expect("validated at construction")],
        Expr::Neg(x) => -eval_node(x, arity, t, mu, vars)?,
        Expr::Call(func, x) => {
            let a = eval_node(x, arity, t, mu, vars)?;
            match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Log => {
                    if a.re() <= 0.0 {
                        return Err(Error::EvalDomain(format!("log of nonpositive {}", a.re())));
                    }
                    a.ln()
                }
                Func::Sqrt => {
                    if a.re() <= 0.0 {
                        return Err(Error::EvalDomain(format!("sqrt of nonpositive {}", a.re())));
                    }
                    a.sqrt()
                }
            }
        }
        Expr::Binary(op, l, r) => {
            let a = eval_node(l, arity, t, mu, vars)?;
            let b = eval_node(r, arity, t, mu, vars)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b.re() == 0.0 {
                        return Err(Error::EvalDomain("division by zero".into()));
                    }
                    a / b
                }
                BinOp::Pow => pow(a, b)?,
            }
        }
    };
    if !v.re().is_finite() {
        return Err(Error::EvalDomain(format!("non-finite value while evaluating `{e}`")));
    }
    Ok(v)
}

fn pow<S: Scalar>(a: S, b: S) -> Result<S> {
    let e = b.re();
    if b.is_constant() && e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
        if e < 0.0 && a.re() == 0.0 {
            return Err(Error::EvalDomain("zero raised to a negative power".into()));
        }
        return Ok(a.powi(e as i32));
    }
    if a.re() <= 0.0 {
        return Err(Error::EvalDomain(format!(
            "non-integer power of nonpositive base {}",
            a.re()
        )));
    }
    Ok(a.powf(b))
}
