//! Convergence of basic-problem solutions on uniform scales towards the
//! continuum solution as the spacing shrinks.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Arity, EvalPoint, Expr, LagrangianExpr, Var};
use crate::parallel::worker_threads;
use crate::timescale::{GridFunction, TimeScale};
use crate::variational::{solve_basic, BasicProblem, Form};

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// One expression in `t` per component; derivatives are exact.
    Analytic(Vec<LagrangianExpr>),
    /// The solution on a uniform scale with this many subintervals,
    /// interpolated linearly.
    FineGrid(usize),
}

impl Reference {
    /// Parses expressions that may only mention `t`.
    pub fn analytic(exprs: &[&str]) -> Result<Self> {
        let parsed = exprs
            .iter()
            .map(|s| {
                let e = LagrangianExpr::parse(s, Arity::new(1, 0, 0))?;
                if !e.used_vars().is_empty() {
                    return Err(Error::Domain(format!("reference `{s}` may only depend on t")));
                }
                Ok(e)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Reference::Analytic(parsed))
    }

    fn describe(&self) -> String {
        match self {
            Reference::Analytic(es) => es.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
            Reference::FineGrid(n) => format!("uniform solution with {n} subintervals"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineSpec {
    pub lagrangian: LagrangianExpr,
    pub form: Form,
    pub a: f64,
    pub b: f64,
    pub bc_a: Option<Vec<f64>>,
    pub bc_b: Option<Vec<f64>>,
    /// Subinterval counts; each entry builds a uniform scale of `N + 1` points.
    pub ladder: Vec<usize>,
    pub reference: Reference,
}

impl RefineSpec {
    fn problem(&self, subintervals: usize) -> Result<BasicProblem> {
        let scale = Arc::new(TimeScale::uniform(self.a, self.b, subintervals + 1)?);
        BasicProblem::new(scale, self.lagrangian.clone(), self.form, self.bc_a.clone(), self.bc_b.clone())
    }
}

/// One ladder entry. Errors are measured in the `‖·‖_{1,∞}` norm
/// (`sup |y − ŷ| + sup_{T^k} |y^Δ − ŷ'|`) and, separately, in the sup norm of
/// the values alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub subintervals: usize,
    pub h: f64,
    pub error: f64,
    /// Error of the previous entry divided by this one.
    pub ratio: Option<f64>,
    /// `log(e_prev / e) / log(h_prev / h)`.
    pub order: Option<f64>,
    pub sup_error: f64,
    pub sup_ratio: Option<f64>,
    pub sup_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub reference: String,
    pub rows: Vec<ConvergenceRow>,
}

type Slot = Mutex<Option<Result<(f64, f64)>>>;

/// Solves every ladder entry, in parallel up to the worker cap, and tabulates
/// the errors in ladder order.
pub fn refine_study(spec: &RefineSpec) -> Result<ConvergenceTable> {
    if spec.ladder.len() < 3 {
        return Err(Error::LadderTooShort(spec.ladder.len()));
    }
    if spec.ladder.windows(2).any(|w| w[0] >= w[1]) || spec.ladder[0] < 2 {
        return Err(Error::Config("ladder must be strictly increasing with entries ≥ 2".into()));
    }
    let fine = match &spec.reference {
        Reference::FineGrid(n) => {
            if *n <= *spec.ladder.last().expect("nonempty ladder") {
                return Err(Error::Config("reference grid must be finer than every ladder entry".into()));
            }
            Some(solve_basic(&spec.problem(*n)?)?.0)
        }
        Reference::Analytic(es) => {
            let n = spec.lagrangian.arity().n;
            if es.len() != n {
                return Err(Error::Arity(format!("reference has {} components, need {n}", es.len())));
            }
            None
        }
    };

    let results: Vec<Slot> = spec.ladder.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = worker_threads().clamp(1, spec.ladder.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= spec.ladder.len() {
                    break;
                }
                let outcome = spec
                    .problem(spec.ladder[k])
                    .and_then(|p| solve_basic(&p))
                    .and_then(|(y, _)| errors(&y, &spec.reference, fine.as_ref()));
                *results[k].lock().expect("result slot") = Some(outcome);
            });
        }
    });

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(spec.ladder.len());
    for (k, slot) in results.into_iter().enumerate() {
        let (error, sup_error) = slot.into_inner().expect("result slot").expect("every entry solved")?;
        let subintervals = spec.ladder[k];
        let h = (spec.b - spec.a) / subintervals as f64;
        let rate = |prev: Option<(f64, f64)>, e: f64| match prev {
            Some((pe, ph)) if pe > 0.0 && e > 0.0 => (Some(pe / e), Some((pe / e).ln() / (ph / h).ln())),
            _ => (None, None),
        };
        let (ratio, order) = rate(rows.last().map(|r| (r.error, r.h)), error);
        let (sup_ratio, sup_order) = rate(rows.last().map(|r| (r.sup_error, r.h)), sup_error);
        rows.push(ConvergenceRow {
            subintervals,
            h,
            error,
            ratio,
            order,
            sup_error,
            sup_ratio,
            sup_order,
        });
    }
    Ok(ConvergenceTable {
        reference: spec.reference.describe(),
        rows,
    })
}

/// `(‖y − ŷ‖_{1,∞}, sup |y − ŷ|)` over the points of `y`'s scale.
fn errors(y: &GridFunction, reference: &Reference, fine: Option<&GridFunction>) -> Result<(f64, f64)> {
    let dy = y.delta_derivative(1)?;
    let fine_dy = fine.map(|f| f.delta_derivative(1)).transpose()?;
    let mut sup: f64 = 0.0;
    let mut sup_d: f64 = 0.0;
    for (k, &t) in y.base().points().iter().enumerate() {
        let (value, slope) = match (reference, fine, &fine_dy) {
            (Reference::Analytic(es), _, _) => {
                let mut v = Vec::with_capacity(es.len());
                let mut d = Vec::with_capacity(es.len());
                for e in es {
                    let (a, b) = analytic_with_slope(e, t)?;
                    v.push(a);
                    d.push(b);
                }
                (v, d)
            }
            (Reference::FineGrid(_), Some(f), Some(fd)) => (interpolate(f, t), interpolate(fd, t)),
            _ => unreachable!("fine solution computed up front"),
        };
        for (v, e) in y.row(k).iter().zip(&value) {
            sup = sup.max((v - e).abs());
        }
        if k < dy.len() {
            for (v, e) in dy.row(k).iter().zip(&slope) {
                sup_d = sup_d.max((v - e).abs());
            }
        }
    }
    Ok((sup + sup_d, sup))
}

/// Value and `t`-derivative of a reference expression, differentiating by
/// treating `t` as the first variable slot.
fn analytic_with_slope(e: &LagrangianExpr, t: f64) -> Result<(f64, f64)> {
    let ast = e.ast().substitute(&|v| match v {
        Var::Time => Some(Expr::Var(Var::Y(0))),
        _ => None,
    });
    let lifted = LagrangianExpr::from_ast(ast, Arity::new(1, 0, 0))?;
    let p = lifted.eval_with_partials(&EvalPoint { t, mu: 0.0, vars: &[t] })?;
    Ok((p.value, p.grad[0]))
}

/// Piecewise-linear interpolation of `f` over the points it is defined on.
fn interpolate(f: &GridFunction, t: f64) -> Vec<f64> {
    let pts = &f.base().points()[..f.len()];
    if pts.len() == 1 {
        return f.row(0).to_vec();
    }
    let hi = pts.partition_point(|&p| p < t).clamp(1, pts.len() - 1);
    let (t0, t1) = (pts[hi - 1], pts[hi]);
    let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    f.row(hi - 1)
        .iter()
        .zip(f.row(hi))
        .map(|(a, b)| a + w * (b - a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(l: &str, ladder: Vec<usize>, reference: Reference) -> RefineSpec {
        RefineSpec {
            lagrangian: LagrangianExpr::parse(l, Arity::new(1, 1, 0)).unwrap(),
            form: Form::Plain,
            a: 0.0,
            b: 1.0,
            bc_a: Some(vec![0.0]),
            bc_b: Some(vec![1.0]),
            ladder,
            reference,
        }
    }

    #[test]
    fn ladder_guards() {
        let s = spec("dy[0]^2", vec![16, 32], Reference::analytic(&["t"]).unwrap());
        assert_eq!(refine_study(&s), Err(Error::LadderTooShort(2)));
        let s = spec("dy[0]^2", vec![16, 64, 32], Reference::analytic(&["t"]).unwrap());
        assert!(matches!(refine_study(&s), Err(Error::Config(_))));
        assert!(Reference::analytic(&["y[0]"]).is_err());
    }

    #[test]
    fn linear_solution_is_exact_on_every_grid() {
        let s = spec("dy[0]^2", vec![4, 8, 16], Reference::analytic(&["t"]).unwrap());
        let table = refine_study(&s).unwrap();
        assert!(table.rows.iter().all(|r| r.error < 1e-13));
    }

    #[test]
    fn analytic_slope() {
        let e = LagrangianExpr::parse("sin(2*t) + t^3", Arity::new(1, 0, 0)).unwrap();
        let (v, d) = analytic_with_slope(&e, 0.3).unwrap();
        assert!((v - (0.6f64.sin() + 0.027)).abs() < 1e-15);
        assert!((d - (2.0 * 0.6f64.cos() + 0.27)).abs() < 1e-14);
    }

    #[test]
    fn rates_against_fine_grid() {
        let s = spec("dy[0]^2 + y[0]^2", vec![8, 16, 32], Reference::FineGrid(1024));
        let table = refine_study(&s).unwrap();
        for r in &table.rows[1..] {
            let ratio = r.ratio.unwrap();
            assert!((1.6..=2.4).contains(&ratio), "{ratio}");
            // Values alone converge at second order on uniform scales.
            let sup = r.sup_ratio.unwrap();
            assert!((3.5..=4.5).contains(&sup), "{sup}");
        }
    }
}
