//! The basic problem `∫_a^b L(t, y, y^Δ) Δt → min` with optional endpoint
//! values, and its σ-form twin where `L` receives `y^σ` instead of `y`.
//!
//! On a finite scale the functional is the finite sum
//! `Σ_{t ∈ T^k} μ(t) L(t, y(t), y^Δ(t))`, so [`solve_basic`] minimises it
//! directly over the free grid values. The checkers evaluate the
//! Euler-Lagrange equation in integral form, in Δ-differentiated form, and
//! the natural boundary conditions on any candidate trajectory.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Arity, BinOp, EvalPoint, Expr, LagrangianExpr, Var};
use crate::linalg::{inf_norm, BandMatrix};
use crate::optimize::{
    minimize_newton, minimize_quadratic, ScaledGradient, SmoothObjective, SolverOptions,
};
use crate::report::{all_pass, Check, CERTIFICATE_RTOL, STATIONARITY_NOTE};
use crate::timescale::{GridFunction, TimeScale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// `L(t, y(t), y^Δ(t))`.
    Plain,
    /// `L(t, y^σ(t), y^Δ(t))`.
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum End {
    #[serde(rename = "a_free")]
    A,
    #[serde(rename = "b_free")]
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicProblem {
    scale: Arc<TimeScale>,
    lagrangian: LagrangianExpr,
    form: Form,
    bc_a: Option<Vec<f64>>,
    bc_b: Option<Vec<f64>>,
}

impl BasicProblem {
    pub fn new(
        scale: Arc<TimeScale>,
        lagrangian: LagrangianExpr,
        form: Form,
        bc_a: Option<Vec<f64>>,
        bc_b: Option<Vec<f64>>,
    ) -> Result<Self> {
        if scale.len() < 3 {
            return Err(Error::InsufficientPoints {
                needed: 3,
                got: scale.len(),
            });
        }
        let arity = lagrangian.arity();
        if arity.r != 1 || arity.m != 0 || arity.n == 0 {
            return Err(Error::Arity(format!(
                "basic problem needs a Lagrangian over (t, y, dy) with r = 1, m = 0; got {arity:?}"
            )));
        }
        for (name, bc) in [("bc_a", &bc_a), ("bc_b", &bc_b)] {
            if let Some(v) = bc {
                if v.len() != arity.n {
                    return Err(Error::Arity(format!("{name} has {} entries, need {}", v.len(), arity.n)));
                }
            }
        }
        Ok(Self {
            scale,
            lagrangian,
            form,
            bc_a,
            bc_b,
        })
    }

    /// Parses `L` for a state of dimension `n`.
    pub fn parse(
        scale: Arc<TimeScale>,
        lagrangian: &str,
        n: usize,
        form: Form,
        bc_a: Option<Vec<f64>>,
        bc_b: Option<Vec<f64>>,
    ) -> Result<Self> {
        let l = LagrangianExpr::parse(lagrangian, Arity::new(n, 1, 0))?;
        Self::new(scale, l, form, bc_a, bc_b)
    }

    pub fn scale(&self) -> &Arc<TimeScale> {
        &self.scale
    }

    pub fn lagrangian(&self) -> &LagrangianExpr {
        &self.lagrangian
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn n(&self) -> usize {
        self.lagrangian.arity().n
    }

    pub fn bc_a(&self) -> Option<&[f64]> {
        self.bc_a.as_deref()
    }

    pub fn bc_b(&self) -> Option<&[f64]> {
        self.bc_b.as_deref()
    }

    pub fn free_ends(&self) -> Vec<End> {
        let mut ends = Vec::new();
        if self.bc_a.is_none() {
            ends.push(End::A);
        }
        if self.bc_b.is_none() {
            ends.push(End::B);
        }
        ends
    }

    fn check_trajectory(&self, y: &GridFunction) -> Result<()> {
        if y.dim() != self.n() || y.len() != self.scale.len() || y.base().points() != self.scale.points() {
            return Err(Error::Domain(format!(
                "trajectory of {} rows x {} does not match the problem scale ({} points, n = {})",
                y.len(),
                y.dim(),
                self.scale.len(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Stage variables `[z | v]` at point `i` of `T^k`, with `z = y(t)` or
    /// `y^σ(t)` depending on the form, from full-length row-major values.
    fn stage_vars(&self, values: &[f64], i: usize) -> Vec<f64> {
        let n = self.n();
        let mu = self.scale.mu(i);
        let cur = &values[i * n..(i + 1) * n];
        let next = &values[(i + 1) * n..(i + 2) * n];
        let z = match self.form {
            Form::Plain => cur,
            Form::Sigma => next,
        };
        let mut w = z.to_vec();
        w.extend(cur.iter().zip(next).map(|(a, b)| (b - a) / mu));
        w
    }

    fn stage_point<'a>(&self, i: usize, w: &'a [f64]) -> EvalPoint<'a> {
        EvalPoint {
            t: self.scale.point(i),
            mu: self.scale.mu(i),
            vars: w,
        }
    }

    /// `L_z` and `L_v` along the trajectory, one entry per point of `T^k`.
    fn partials_along(&self, values: &[f64]) -> Result<StagePartials> {
        let n = self.n();
        let stages = self.scale.len() - 1;
        let mut sp = StagePartials {
            lz: Vec::with_capacity(stages),
            lv: Vec::with_capacity(stages),
        };
        for i in 0..stages {
            let w = self.stage_vars(values, i);
            let p = self.lagrangian.eval_with_partials(&self.stage_point(i, &w))?;
            sp.lz.push(p.grad[..n].to_vec());
            sp.lv.push(p.grad[n..].to_vec());
        }
        Ok(sp)
    }

    /// Partials of the plain-form integrand `F(t, y, y^Δ)` equivalent to this
    /// problem: for the σ-form, `F_y = L_{y^σ}` and
    /// `F_{y^Δ} = μ L_{y^σ} + L_{y^Δ}`.
    fn plain_partials(&self, values: &[f64]) -> Result<StagePartials> {
        let mut sp = self.partials_along(values)?;
        if self.form == Form::Sigma {
            for (i, (lz, lv)) in sp.lz.iter().zip(sp.lv.iter_mut()).enumerate() {
                let mu = self.scale.mu(i);
                for (v, z) in lv.iter_mut().zip(lz) {
                    *v += mu * z;
                }
            }
        }
        Ok(sp)
    }
}

struct StagePartials {
    lz: Vec<Vec<f64>>,
    lv: Vec<Vec<f64>>,
}

impl StagePartials {
    fn max_abs(&self) -> f64 {
        self.lz
            .iter()
            .chain(&self.lv)
            .fold(0.0, |m, r| m.max(inf_norm(r)))
    }
}

/// `Σ_{t ∈ T^k} μ(t) L(t, ·, y^Δ(t))`.
pub fn evaluate_functional(p: &BasicProblem, y: &GridFunction) -> Result<f64> {
    p.check_trajectory(y)?;
    check_boundary(p, y)?;
    let mut total = 0.0;
    for i in 0..p.scale.len() - 1 {
        let w = p.stage_vars(y.values(), i);
        total += p.scale.mu(i) * p.lagrangian.eval(&p.stage_point(i, &w))?;
    }
    Ok(total)
}

fn check_boundary(p: &BasicProblem, y: &GridFunction) -> Result<()> {
    let last = p.scale.len() - 1;
    for (bc, row, name) in [(&p.bc_a, 0, "a"), (&p.bc_b, last, "b")] {
        if let Some(target) = bc {
            for (v, w) in y.row(row).iter().zip(target) {
                if (v - w).abs() > 1e-12 * (1.0 + w.abs()) {
                    return Err(Error::Infeasible(format!(
                        "y({name}) = {:?} violates boundary value {:?}",
                        y.row(row),
                        target
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Euler-Lagrange equation in Δ-integral form. Returns the constant `c`
/// anchored at `t = a` and `max_t |g(t) − c|` over `T^k`, where
/// `g(t) = F_{y^Δ}(t) − ∫_a^{σ(t)} F_y Δξ`.
pub fn el_integral_residual(p: &BasicProblem, y: &GridFunction) -> Result<(Vec<f64>, f64)> {
    p.check_trajectory(y)?;
    let sp = p.plain_partials(y.values())?;
    let (c, dev) = integral_form(&p.scale, &sp);
    Ok((c, dev))
}

fn integral_form(scale: &TimeScale, sp: &StagePartials) -> (Vec<f64>, f64) {
    let n = sp.lz[0].len();
    let mut running = vec![0.0; n];
    let mut c = Vec::new();
    let mut dev: f64 = 0.0;
    for i in 0..sp.lz.len() {
        let mu = scale.mu(i);
        for k in 0..n {
            running[k] += mu * sp.lz[i][k];
        }
        let g: Vec<f64> = (0..n).map(|k| sp.lv[i][k] - running[k]).collect();
        if i == 0 {
            c = g;
        } else {
            dev = dev.max(g.iter().zip(&c).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
        }
    }
    (c, dev)
}

/// Euler-Lagrange equation in Δ-differentiated form on `T^{k²}`.
///
/// Plain form: `(L_{y^Δ} − μ L_y)^Δ − L_y`. σ-form: `L_{y^Δ}^Δ − L_{y^σ}`,
/// with partials taken at `(t, y^σ, y^Δ)`.
pub fn el_differentiated_residual(p: &BasicProblem, y: &GridFunction) -> Result<GridFunction> {
    p.check_trajectory(y)?;
    let n = p.n();
    let sp = p.partials_along(y.values())?;
    let stages = sp.lz.len();
    let mut bracket = Vec::with_capacity(stages * n);
    for i in 0..stages {
        let mu = p.scale.mu(i);
        for k in 0..n {
            bracket.push(match p.form {
                Form::Plain => sp.lv[i][k] - mu * sp.lz[i][k],
                Form::Sigma => sp.lv[i][k],
            });
        }
    }
    let bracket = GridFunction::new(p.scale.clone(), n, bracket)?;
    let lhs = bracket.delta_derivative(1)?;
    let rhs = GridFunction::new(p.scale.clone(), n, sp.lz.concat())?;
    lhs.zip_with(&rhs, |a, b| a - b)
}

/// Left-hand sides of the natural boundary conditions at each free end.
///
/// Plain form: `L_{y^Δ}(a) − μ(a) L_y(a)` and `L_{y^Δ}(ρ(b))`.
/// σ-form: `L_{y^Δ}(a)` and `μ(ρ(b)) L_{y^σ}(ρ(b)) + L_{y^Δ}(ρ(b))`.
pub fn transversality_residuals(p: &BasicProblem, y: &GridFunction) -> Result<BTreeMap<End, Vec<f64>>> {
    p.check_trajectory(y)?;
    let sp = p.partials_along(y.values())?;
    Ok(transversality_from(p, &sp))
}

fn transversality_from(p: &BasicProblem, sp: &StagePartials) -> BTreeMap<End, Vec<f64>> {
    let last = sp.lz.len() - 1;
    let mut out = BTreeMap::new();
    if p.bc_a.is_none() {
        let mu = p.scale.mu(0);
        let v = match p.form {
            Form::Plain => sp.lv[0].iter().zip(&sp.lz[0]).map(|(v, z)| v - mu * z).collect(),
            Form::Sigma => sp.lv[0].clone(),
        };
        out.insert(End::A, v);
    }
    if p.bc_b.is_none() {
        let mu = p.scale.mu(last);
        let v = match p.form {
            Form::Plain => sp.lv[last].clone(),
            Form::Sigma => sp.lv[last].iter().zip(&sp.lz[last]).map(|(v, z)| mu * z + v).collect(),
        };
        out.insert(End::B, v);
    }
    out
}

/// Rewrites the problem in the other form using `y = y^σ − μ y^Δ`
/// (plain → σ) or `y^σ = y + μ y^Δ` (σ → plain). The graininess enters as the
/// `mu` parameter, bound per point at evaluation time.
pub fn sigma_form_transform(p: &BasicProblem) -> BasicProblem {
    let (op, form) = match p.form {
        Form::Sigma => (BinOp::Add, Form::Plain),
        Form::Plain => (BinOp::Sub, Form::Sigma),
    };
    let ast = p.lagrangian.ast().substitute(&|v| match v {
        Var::Y(i) => Some(Expr::binary(
            op,
            Expr::Var(Var::Y(i)),
            Expr::binary(BinOp::Mul, Expr::Var(Var::Mu), Expr::Var(Var::Dy { comp: i, order: 1 })),
        )),
        _ => None,
    });
    let lagrangian = LagrangianExpr::from_ast(ast, p.lagrangian.arity()).expect("same arity");
    BasicProblem {
        scale: p.scale.clone(),
        lagrangian,
        form,
        bc_a: p.bc_a.clone(),
        bc_b: p.bc_b.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremalReport {
    pub classification: String,
    pub c_estimate: Vec<f64>,
    pub el_integral_max_dev: f64,
    pub el_diff_residuals: Vec<Vec<f64>>,
    pub transversality: BTreeMap<End, Vec<f64>>,
    /// `1 + max |L partials|` along the trajectory.
    pub magnitude: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub note: String,
}

/// Evaluates every first-order necessary condition on `y`.
///
/// Tolerances are `rtol · (1 + max |L partials|)`; the Δ-differentiated
/// residual divides by the graininess, so its tolerance is further scaled by
/// `max(1, 1/min μ)`.
pub fn certify_basic(p: &BasicProblem, y: &GridFunction, rtol: f64) -> Result<ExtremalReport> {
    p.check_trajectory(y)?;
    let raw = p.partials_along(y.values())?;
    let magnitude = 1.0 + raw.max_abs();
    let (c, dev) = integral_form(&p.scale, &p.plain_partials(y.values())?);
    let diff = el_differentiated_residual(p, y)?;
    let trans = transversality_from(p, &raw);
    let mu_min = (0..p.scale.len() - 1).map(|i| p.scale.mu(i)).fold(f64::INFINITY, f64::min);
    let tol = rtol * magnitude;

    let mut checks = vec![
        Check::new("euler_lagrange_integral", dev, tol),
        Check::new("euler_lagrange_differentiated", diff.max_abs(), tol * (1.0 / mu_min).max(1.0)),
    ];
    for (end, v) in &trans {
        let name = match end {
            End::A => "transversality_a",
            End::B => "transversality_b",
        };
        checks.push(Check::new(name, inf_norm(v), tol));
    }
    Ok(ExtremalReport {
        classification: "stationary".into(),
        c_estimate: c,
        el_integral_max_dev: dev,
        el_diff_residuals: diff.to_rows(),
        transversality: trans,
        magnitude,
        pass: all_pass(&checks),
        checks,
        note: STATIONARITY_NOTE.into(),
    })
}

/// Finds a stationary point of the transcribed functional and certifies it.
pub fn solve_basic(p: &BasicProblem) -> Result<(GridFunction, ExtremalReport)> {
    solve_basic_with(p, &SolverOptions::default(), CERTIFICATE_RTOL)
}

pub fn solve_basic_with(
    p: &BasicProblem,
    opts: &SolverOptions,
    rtol: f64,
) -> Result<(GridFunction, ExtremalReport)> {
    let tr = Transcription::new(p);
    let x0 = tr.initial_guess();
    let quadratic = p.lagrangian.polynomial_degree().is_some_and(|d| d <= 2);
    let min = if quadratic {
        minimize_quadratic(&tr, x0)?
    } else {
        minimize_newton(&tr, x0, opts)?
    };
    let y = GridFunction::new(p.scale.clone(), p.n(), tr.assemble(&min.x))?;
    let report = certify_basic(p, &y, rtol)?;
    Ok((y, report))
}

/// The finite-sum objective over the free grid values.
struct Transcription<'a> {
    p: &'a BasicProblem,
    /// Indices into the row-major value vector that are unknowns.
    free: Vec<usize>,
    /// Position among the unknowns of each row-major index.
    slot: Vec<Option<usize>>,
    template: Vec<f64>,
    quadratic: bool,
}

impl<'a> Transcription<'a> {
    fn new(p: &'a BasicProblem) -> Self {
        let n = p.n();
        let len = p.scale.len();
        let mut template = vec![0.0; len * n];
        let mut free = Vec::new();
        for i in 0..len {
            for k in 0..n {
                let fixed = match i {
                    0 => p.bc_a.as_ref().map(|v| v[k]),
                    _ if i == len - 1 => p.bc_b.as_ref().map(|v| v[k]),
                    _ => None,
                };
                match fixed {
                    Some(v) => template[i * n + k] = v,
                    None => free.push(i * n + k),
                }
            }
        }
        let mut slot = vec![None; len * n];
        for (k, &idx) in free.iter().enumerate() {
            slot[idx] = Some(k);
        }
        Self {
            p,
            free,
            slot,
            template,
            quadratic: p.lagrangian.polynomial_degree().is_some_and(|d| d <= 2),
        }
    }

    /// Linear interpolation between the given endpoint values.
    fn initial_guess(&self) -> Vec<f64> {
        let n = self.p.n();
        let pts = self.p.scale.points();
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let zero = vec![0.0; n];
        let ya = self.p.bc_a.as_deref().or(self.p.bc_b.as_deref()).unwrap_or(&zero);
        let yb = self.p.bc_b.as_deref().or(self.p.bc_a.as_deref()).unwrap_or(&zero);
        self.free
            .iter()
            .map(|&idx| {
                let (i, k) = (idx / n, idx % n);
                let s = (pts[i] - a) / (b - a);
                ya[k] + s * (yb[k] - ya[k])
            })
            .collect()
    }

    fn assemble(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.template.clone();
        for (&idx, &xi) in self.free.iter().zip(x) {
            v[idx] = xi;
        }
        v
    }

    /// Gradient with respect to every grid value.
    fn full_gradient(&self, values: &[f64]) -> Result<(Vec<f64>, f64)> {
        let p = self.p;
        let n = p.n();
        let sp = p.partials_along(values)?;
        let mut g = vec![0.0; values.len()];
        for i in 0..sp.lz.len() {
            let mu = p.scale.mu(i);
            let zrow = match p.form {
                Form::Plain => i,
                Form::Sigma => i + 1,
            };
            for k in 0..n {
                g[zrow * n + k] += mu * sp.lz[i][k];
                g[(i + 1) * n + k] += sp.lv[i][k];
                g[i * n + k] -= sp.lv[i][k];
            }
        }
        Ok((g, sp.max_abs()))
    }
}

impl SmoothObjective for Transcription<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let values = self.assemble(x);
        let p = self.p;
        let mut total = 0.0;
        for i in 0..p.scale.len() - 1 {
            let w = p.stage_vars(&values, i);
            total += p.scale.mu(i) * p.lagrangian.eval(&p.stage_point(i, &w))?;
        }
        Ok(total)
    }

    fn gradient(&self, x: &[f64]) -> Result<ScaledGradient> {
        let (g, scale) = self.full_gradient(&self.assemble(x))?;
        Ok(ScaledGradient {
            grad: self.free.iter().map(|&i| g[i]).collect(),
            scale,
        })
    }

    /// The Hessian is block-tridiagonal in point order, assembled from
    /// per-stage Hessians of `L` and solved as a band matrix.
    fn solve_hessian(&self, x: &[f64], rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.p;
        let n = p.n();
        let values = self.assemble(x);
        let band = 2 * n - 1;
        let mut h = BandMatrix::zeros(self.free.len(), band, band);
        for i in 0..p.scale.len() - 1 {
            let mu = p.scale.mu(i);
            let w = p.stage_vars(&values, i);
            let hl = crate::optimize::stage_hessian(&p.lagrangian, p.stage_point(i, &w), self.quadratic)?;
            // Map (y_i, y_{i+1}) -> (z, v).
            let mut jac = DMatrix::zeros(2 * n, 2 * n);
            for k in 0..n {
                match p.form {
                    Form::Plain => jac[(k, k)] = 1.0,
                    Form::Sigma => jac[(k, n + k)] = 1.0,
                }
                jac[(n + k, k)] = -1.0 / mu;
                jac[(n + k, n + k)] = 1.0 / mu;
            }
            let local = jac.transpose() * hl * &jac * mu;
            for a in 0..2 * n {
                let Some(ra) = self.slot[i * n + a] else { continue };
                for b in 0..2 * n {
                    if let Some(rb) = self.slot[i * n + b] {
                        h.add(ra, rb, local[(a, b)]);
                    }
                }
            }
        }
        h.solve(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale(p: &[f64]) -> Arc<TimeScale> {
        Arc::new(TimeScale::new(p.to_vec()).unwrap())
    }

    fn problem(p: &[f64], l: &str, a: Option<f64>, b: Option<f64>) -> BasicProblem {
        BasicProblem::parse(scale(p), l, 1, Form::Plain, a.map(|v| vec![v]), b.map(|v| vec![v])).unwrap()
    }

    fn traj(p: &BasicProblem, v: &[f64]) -> GridFunction {
        GridFunction::scalar(p.scale().clone(), v.to_vec()).unwrap()
    }

    #[test]
    fn needs_three_points() {
        let r = BasicProblem::parse(scale(&[0.0, 1.0]), "dy[0]^2", 1, Form::Plain, None, None);
        assert!(matches!(r, Err(Error::InsufficientPoints { needed: 3, got: 2 })));
    }

    #[test]
    fn functional_values() {
        let p = problem(&[0.0, 1.0, 2.0], "dy[0]^2", None, None);
        assert_eq!(evaluate_functional(&p, &traj(&p, &[0.0, 1.0, 2.0])).unwrap(), 2.0);
        let p = problem(&[0.0, 1.0, 3.0], "dy[0]^2", None, None);
        assert_eq!(evaluate_functional(&p, &traj(&p, &[0.0, 1.0, 3.0])).unwrap(), 3.0);
        assert_eq!(evaluate_functional(&p, &traj(&p, &[0.0, 0.0, 3.0])).unwrap(), 4.5);
        let p = problem(&[0.0, 1.0, 3.0], "dy[0]^2", Some(1.0), None);
        assert!(matches!(evaluate_functional(&p, &traj(&p, &[0.0, 0.0, 3.0])), Err(Error::Infeasible(_))));
    }

    #[test]
    fn solves_small_instances() {
        let p = problem(&[0.0, 1.0, 2.0], "dy[0]^2", Some(0.0), Some(2.0));
        let (y, rep) = solve_basic(&p).unwrap();
        assert!((y.row(1)[0] - 1.0).abs() < 1e-14);
        assert!(rep.pass);

        let p = problem(&[0.0, 1.0, 3.0], "dy[0]^2", Some(0.0), Some(3.0));
        let (y, rep) = solve_basic(&p).unwrap();
        assert!((y.row(1)[0] - 1.0).abs() < 1e-14);
        assert!((rep.c_estimate[0] - 2.0).abs() < 1e-12);

        let p = problem(&[0.0, 1.0, 2.0], "dy[0]^2", Some(0.0), None);
        let (y, rep) = solve_basic(&p).unwrap();
        assert!(y.max_abs() < 1e-14);
        assert!(rep.transversality[&End::B][0].abs() < 1e-14);
    }

    #[test]
    fn integral_form_examples() {
        let p = problem(&[0.0, 1.0, 2.0], "dy[0]^2", None, None);
        assert_eq!(el_integral_residual(&p, &traj(&p, &[0.0, 1.0, 2.0])).unwrap(), (vec![2.0], 0.0));
        assert_eq!(el_integral_residual(&p, &traj(&p, &[0.0, 0.0, 2.0])).unwrap(), (vec![0.0], 4.0));
        let p = problem(&[0.0, 1.0, 3.0], "dy[0]^2", None, None);
        assert_eq!(el_integral_residual(&p, &traj(&p, &[0.0, 1.0, 3.0])).unwrap(), (vec![2.0], 0.0));
    }

    #[test]
    fn differentiated_form_examples() {
        let p = problem(&[0.0, 1.0, 2.0], "dy[0]^2", None, None);
        let y = traj(&p, &[0.0, 1.0, 2.0]);
        let r = el_differentiated_residual(&p, &y).unwrap();
        assert_eq!(r.values(), &[0.0]);
        let q = sigma_form_transform(&p);
        assert_eq!(el_differentiated_residual(&q, &y).unwrap().values(), &[0.0]);

        let p = BasicProblem::parse(
            Arc::new(TimeScale::uniform(0.0, 1.0, 64).unwrap()),
            "dy[0]^2 + y[0]^2",
            1,
            Form::Plain,
            Some(vec![0.0]),
            Some(vec![1.0]),
        )
        .unwrap();
        let (y, _) = solve_basic(&p).unwrap();
        assert!(el_differentiated_residual(&p, &y).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn transversality_examples() {
        let p = problem(&[0.0, 1.0, 2.0], "dy[0]^2", Some(0.0), None);
        let t = transversality_residuals(&p, &traj(&p, &[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(t.keys().copied().collect::<Vec<_>>(), vec![End::B]);
        assert_eq!(t[&End::B], vec![0.0]);

        let p = problem(&[0.0, 1.0, 2.0], "dy[0]^2", None, Some(0.0));
        let t = transversality_residuals(&p, &traj(&p, &[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(t[&End::A], vec![0.0]);

        let p = problem(&[0.0, 1.0, 2.0], "dy[0]^2", Some(0.0), Some(0.0));
        assert!(transversality_residuals(&p, &traj(&p, &[0.0, 0.0, 0.0])).unwrap().is_empty());
    }

    #[test]
    fn transformed_lagrangian_prints_graininess_term() {
        let p = BasicProblem::parse(scale(&[0.0, 1.0, 3.0]), "y[0]", 1, Form::Sigma, None, None).unwrap();
        let q = sigma_form_transform(&p);
        assert_eq!(q.form(), Form::Plain);
        assert_eq!(q.lagrangian().to_string(), "y[0] + mu*dy[0][1]");
        assert_eq!(sigma_form_transform(&q).form(), Form::Sigma);
    }

    #[test]
    fn non_convex_lagrangian_converges_to_stationary_point() {
        let p = BasicProblem::parse(
            Arc::new(TimeScale::uniform(0.0, 1.0, 9).unwrap()),
            "dy[0]^2 + cos(y[0])",
            1,
            Form::Plain,
            Some(vec![0.0]),
            Some(vec![1.0]),
        )
        .unwrap();
        let (_, rep) = solve_basic(&p).unwrap();
        assert!(rep.pass, "{:?}", rep.checks);
        assert_eq!(rep.classification, "stationary");
    }

    #[test]
    fn singular_stationarity_system_is_degenerate() {
        // L independent of y and y^Δ: every trajectory is stationary.
        let p = problem(&[0.0, 1.0, 2.0], "t", Some(0.0), Some(1.0));
        assert!(matches!(solve_basic(&p), Err(Error::Degenerate(_))));
    }
}
