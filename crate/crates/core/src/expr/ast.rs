use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// The time point `t`.
    Time,
    /// Graininess `μ(t)`, bound from the scale at evaluation time.
    Mu,
    Y(usize),
    /// `j`-th Δ-derivative of component `comp`, `j ≥ 1`.
    Dy { comp: usize, order: usize },
    U(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Expression tree. Literals produced by the parser are never negative;
/// negation is always an explicit [`Expr::Neg`] node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        if v < 0.0 {
            Expr::Neg(Box::new(Expr::Num(-v)))
        } else {
            Expr::Num(v)
        }
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    /// Replaces variables for which `f` returns a new subtree.
    pub fn substitute(&self, f: &impl Fn(Var) -> Option<Expr>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(v) => f(*v).unwrap_or(Expr::Var(*v)),
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(f))),
            Expr::Binary(op, l, r) => Expr::binary(*op, l.substitute(f), r.substitute(f)),
            Expr::Call(func, e) => Expr::Call(*func, Box::new(e.substitute(f))),
        }
    }

    pub fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(e) | Expr::Call(_, e) => e.visit_vars(f),
            Expr::Binary(_, l, r) => {
                l.visit_vars(f);
                r.visit_vars(f);
            }
        }
    }

    /// Total polynomial degree in the state, derivative and control
    /// variables, treating `t` and `mu` as coefficients. `None` when the
    /// expression is not a polynomial in those variables.
    pub fn polynomial_degree(&self) -> Option<u32> {
        match self {
            Expr::Num(_) | Expr::Var(Var::Time) | Expr::Var(Var::Mu) => Some(0),
            Expr::Var(_) => Some(1),
            Expr::Neg(e) => e.polynomial_degree(),
            Expr::Call(_, e) => (e.polynomial_degree()? == 0).then_some(0),
            Expr::Binary(op, l, r) => {
                let (dl, dr) = (l.polynomial_degree()?, r.polynomial_degree()?);
                match op {
                    BinOp::Add | BinOp::Sub => Some(dl.max(dr)),
                    BinOp::Mul => Some(dl + dr),
                    BinOp::Div => (dr == 0).then_some(dl),
                    BinOp::Pow => {
                        if dl == 0 && dr == 0 {
                            return Some(0);
                        }
                        match r.as_constant()? {
                            k if k >= 0.0 && k.fract() == 0.0 && k <= 64.0 => Some(dl * k as u32),
                            _ => None,
                        }
                    }
                }
            }
        }
    }

    /// Value of a subtree that contains no variables at all.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Var(_) => None,
            Expr::Neg(e) => e.as_constant().map(|v| -v),
            Expr::Call(f, e) => {
                let v = e.as_constant()?;
                Some(match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sqrt => v.sqrt(),
                })
            }
            Expr::Binary(op, l, r) => {
                let (a, b) = (l.as_constant()?, r.as_constant()?);
                Some(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                })
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Time => write!(f, "t"),
            Var::Mu => write!(f, "mu"),
            Var::Y(i) => write!(f, "y[{i}]"),
            Var::Dy { comp, order } => write!(f, "dy[{comp}][{order}]"),
            Var::U(i) => write!(f, "u[{i}]"),
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints with the minimal parentheses that make re-parsing reproduce the
/// same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if v.fract() == 0.0 && v.abs() < 1e15 => write!(f, "{v}"),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                write_child(f, e, 3)
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Binary(op, l, r) => {
                let (sym, lp, rp) = match op {
                    BinOp::Add => (" + ", 1, 2),
                    BinOp::Sub => (" - ", 1, 2),
                    BinOp::Mul => ("*", 2, 3),
                    BinOp::Div => ("/", 2, 3),
                    BinOp::Pow => ("^", 5, 3),
                };
                write_child(f, l, lp)?;
                write!(f, "{sym}")?;
                write_child(f, r, rp)
            }
        }
    }
}
