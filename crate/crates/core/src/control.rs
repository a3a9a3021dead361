//! The Lagrange problem: minimise `∫_a^b L(t, y, u) Δt` subject to
//! `y^Δ = φ(t, y, u)` and endpoint data, with `u(t) ∈ ℝ^m`, `m ≤ n`.
//!
//! The costate `ψ` is stored as a plain `n`-vector per point; the paper's
//! row-vector products `ψ^σ φ_y` are computed as `φ_yᵀ ψ^σ`.
//!
//! The transcription uses the step constraints
//! `c(t) = (y(σ(t)) − y(t))/μ(t) − φ(t, y(t), u(t)) = 0` on `T^k` and the
//! Lagrangian `Σ μ L + Σ λ(t)·c(t)`. With that normalisation the multiplier
//! of the step constraint at `t` is `λ(t) = −μ(t) ψ(σ(t))`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Arity, EvalPoint, Expr, LagrangianExpr, Partials, Var};
use crate::linalg::{inf_norm, nullspace, solve_square};
use crate::optimize::{stage_hessian, SolverOptions};
use crate::report::{all_pass, Check, CERTIFICATE_RTOL, STATIONARITY_NOTE};
use crate::timescale::{GridFunction, TimeScale};
use crate::variational::{sigma_form_transform, BasicProblem, End, Form};

/// Endpoint data per component; `None` leaves that component free.
pub type Boundary = Vec<Option<f64>>;

/// Relative singular-value cutoff for the abnormality nullspace.
pub const NULLSPACE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    scale: Arc<TimeScale>,
    lagrangian: LagrangianExpr,
    phi: Vec<LagrangianExpr>,
    bc_a: Boundary,
    bc_b: Boundary,
}

impl ControlProblem {
    /// Whole-vector endpoint data: each end is either fixed or free.
    pub fn new(
        scale: Arc<TimeScale>,
        lagrangian: LagrangianExpr,
        phi: Vec<LagrangianExpr>,
        bc_a: Option<Vec<f64>>,
        bc_b: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = lagrangian.arity().n;
        let expand = |bc: Option<Vec<f64>>| match bc {
            Some(v) => v.into_iter().map(Some).collect(),
            None => vec![None; n],
        };
        Self::with_boundary(scale, lagrangian, phi, expand(bc_a), expand(bc_b))
    }

    pub fn with_boundary(
        scale: Arc<TimeScale>,
        lagrangian: LagrangianExpr,
        phi: Vec<LagrangianExpr>,
        bc_a: Boundary,
        bc_b: Boundary,
    ) -> Result<Self> {
        if scale.len() < 3 {
            return Err(Error::InsufficientPoints {
                needed: 3,
                got: scale.len(),
            });
        }
        let arity = lagrangian.arity();
        if arity.r != 0 || arity.n == 0 {
            return Err(Error::Arity(format!(
                "control Lagrangian must be over (t, y, u) with r = 0; got {arity:?}"
            )));
        }
        if arity.m > arity.n {
            return Err(Error::Arity(format!("control dimension {} exceeds state dimension {}", arity.m, arity.n)));
        }
        if phi.len() != arity.n {
            return Err(Error::Arity(format!("phi has {} components, need {}", phi.len(), arity.n)));
        }
        if let Some(f) = phi.iter().find(|f| f.arity() != arity) {
            return Err(Error::Arity(format!("phi arity {:?} differs from L arity {arity:?}", f.arity())));
        }
        for (name, bc) in [("bc_a", &bc_a), ("bc_b", &bc_b)] {
            if bc.len() != arity.n {
                return Err(Error::Arity(format!("{name} has {} entries, need {}", bc.len(), arity.n)));
            }
        }
        Ok(Self {
            scale,
            lagrangian,
            phi,
            bc_a,
            bc_b,
        })
    }

    pub fn parse(
        scale: Arc<TimeScale>,
        lagrangian: &str,
        phi: &[&str],
        n: usize,
        m: usize,
        bc_a: Option<Vec<f64>>,
        bc_b: Option<Vec<f64>>,
    ) -> Result<Self> {
        let arity = Arity::new(n, 0, m);
        let l = LagrangianExpr::parse(lagrangian, arity)?;
        let phi = phi
            .iter()
            .map(|s| LagrangianExpr::parse(s, arity))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scale, l, phi, bc_a, bc_b)
    }

    /// The basic problem as a Lagrange problem with `y^Δ = u`, `m = n`.
    /// σ-form problems are first rewritten in plain form.
    pub fn from_basic(p: &BasicProblem) -> Result<Self> {
        let plain = match p.form() {
            Form::Plain => p.clone(),
            Form::Sigma => sigma_form_transform(p),
        };
        let n = plain.n();
        let arity = Arity::new(n, 0, n);
        let ast = plain.lagrangian().ast().substitute(&|v| match v {
            Var::Dy { comp, .. } => Some(Expr::Var(Var::U(comp))),
            _ => None,
        });
        let l = LagrangianExpr::from_ast(ast, arity)?;
        let phi = (0..n)
            .map(|i| LagrangianExpr::from_ast(Expr::Var(Var::U(i)), arity))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            plain.scale().clone(),
            l,
            phi,
            plain.bc_a().map(<[f64]>::to_vec),
            plain.bc_b().map(<[f64]>::to_vec),
        )
    }

    pub fn scale(&self) -> &Arc<TimeScale> {
        &self.scale
    }

    pub fn lagrangian(&self) -> &LagrangianExpr {
        &self.lagrangian
    }

    pub fn phi(&self) -> &[LagrangianExpr] {
        &self.phi
    }

    pub fn n(&self) -> usize {
        self.lagrangian.arity().n
    }

    pub fn m(&self) -> usize {
        self.lagrangian.arity().m
    }

    pub fn bc_a(&self) -> &[Option<f64>] {
        &self.bc_a
    }

    pub fn bc_b(&self) -> &[Option<f64>] {
        &self.bc_b
    }

    fn stage(&self, i: usize, y: &[f64], u: &[f64]) -> Result<Stage> {
        let mut vars = y.to_vec();
        vars.extend_from_slice(u);
        let p = EvalPoint {
            t: self.scale.point(i),
            mu: self.scale.mu(i),
            vars: &vars,
        };
        Ok(Stage {
            n: self.n(),
            l: self.lagrangian.eval_with_partials(&p)?,
            phi: self
                .phi
                .iter()
                .map(|f| f.eval_with_partials(&p))
                .collect::<Result<_>>()?,
        })
    }

    fn check_pair(&self, y: &GridFunction, u: &GridFunction) -> Result<()> {
        let big_n = self.scale.len();
        if y.dim() != self.n() || y.len() != big_n || y.base().points() != self.scale.points() {
            return Err(Error::Domain(format!(
                "state needs {big_n} rows of width {} on the problem scale",
                self.n()
            )));
        }
        if u.dim() != self.m() || u.len() != big_n - 1 || u.base().points() != self.scale.points() {
            return Err(Error::Domain(format!(
                "control needs {} rows of width {} on T^k",
                big_n - 1,
                self.m()
            )));
        }
        Ok(())
    }
}

/// Values and partials of `L` and every `φ_j` at one point.
struct Stage {
    n: usize,
    l: Partials,
    phi: Vec<Partials>,
}

impl Stage {
    fn phi_y(&self, j: usize, k: usize) -> f64 {
        self.phi[j].grad[k]
    }

    fn phi_u(&self, j: usize, l: usize) -> f64 {
        self.phi[j].grad[self.n + l]
    }

    fn magnitude(&self) -> f64 {
        std::iter::once(&self.l)
            .chain(&self.phi)
            .fold(0.0, |m, p| m.max(p.value.abs()).max(inf_norm(&p.grad)))
    }

    fn hamiltonian(&self, psi0: f64, psi_sigma: &[f64]) -> Hamiltonian {
        let n = self.n;
        let m = self.l.grad.len() - n;
        let h_psi_sigma: Vec<f64> = self.phi.iter().map(|p| p.value).collect();
        let h = psi0 * self.l.value + dot(psi_sigma, &h_psi_sigma);
        let h_y = (0..n)
            .map(|k| psi0 * self.l.grad[k] + (0..n).map(|j| psi_sigma[j] * self.phi_y(j, k)).sum::<f64>())
            .collect();
        let h_u = (0..m)
            .map(|l| psi0 * self.l.grad[n + l] + (0..n).map(|j| psi_sigma[j] * self.phi_u(j, l)).sum::<f64>())
            .collect();
        Hamiltonian {
            h,
            h_y,
            h_u,
            h_psi_sigma,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hamiltonian {
    pub h: f64,
    pub h_y: Vec<f64>,
    pub h_u: Vec<f64>,
    pub h_psi_sigma: Vec<f64>,
}

/// `H = ψ0 L + ψ^σ·φ` and its partials at a point `t` of the scale.
pub fn hamiltonian(
    p: &ControlProblem,
    t: f64,
    y: &[f64],
    u: &[f64],
    psi0: f64,
    psi_sigma: &[f64],
) -> Result<Hamiltonian> {
    if y.len() != p.n() || u.len() != p.m() || psi_sigma.len() != p.n() {
        return Err(Error::Arity(format!(
            "hamiltonian needs y, psi_sigma in R^{} and u in R^{}",
            p.n(),
            p.m()
        )));
    }
    let i = p.scale.index_of(t)?;
    Ok(p.stage(i, y, u)?.hamiltonian(psi0, psi_sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostateTrajectory {
    pub psi0: f64,
    #[serde(serialize_with = "serialize_rows")]
    pub psi: GridFunction,
}

fn serialize_rows<S: serde::Serializer>(g: &GridFunction, s: S) -> std::result::Result<S::Ok, S::Error> {
    g.to_rows().serialize(s)
}

impl CostateTrajectory {
    pub fn is_trivial(&self) -> bool {
        self.psi0 == 0.0 && self.psi.max_abs() == 0.0
    }
}

/// Backward recursion `ψ(t) = ψ(σ(t)) + μ(t) H_y(t, y, u, ψ0, ψ(σ(t)))`
/// from `ψ(b) = terminal`.
pub fn costate_sweep(
    p: &ControlProblem,
    y: &GridFunction,
    u: &GridFunction,
    psi0: f64,
    terminal: &[f64],
) -> Result<CostateTrajectory> {
    p.check_pair(y, u)?;
    let n = p.n();
    if terminal.len() != n {
        return Err(Error::Arity(format!("terminal costate has {} entries, need {n}", terminal.len())));
    }
    let big_n = p.scale.len();
    let mut psi = vec![0.0; big_n * n];
    psi[(big_n - 1) * n..].copy_from_slice(terminal);
    for i in (0..big_n - 1).rev() {
        let (head, tail) = psi.split_at_mut((i + 1) * n);
        let next = &tail[..n];
        let h = p.stage(i, y.row(i), u.row(i))?.hamiltonian(psi0, next);
        let mu = p.scale.mu(i);
        for k in 0..n {
            head[i * n + k] = next[k] + mu * h.h_y[k];
        }
    }
    Ok(CostateTrajectory {
        psi0,
        psi: GridFunction::new(p.scale.clone(), n, psi)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WmpReport {
    pub classification: String,
    pub psi0: f64,
    /// `y^Δ − φ` on `T^k`.
    pub dynamics: Vec<Vec<f64>>,
    /// `ψ^Δ + H_y` on `T^k`.
    pub costate: Vec<Vec<f64>>,
    /// `H_u` on `T^k`.
    pub stationarity: Vec<Vec<f64>>,
    /// `ψ` at each end, restricted to the free components.
    pub transversality: BTreeMap<End, Vec<f64>>,
    pub magnitude: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub note: String,
}

/// Residuals of the weak maximum principle along `(y, u, ψ0, ψ)`.
///
/// Costate-dependent tolerances scale with `max(ψ0, ‖ψ‖_∞)`, so multiplying
/// the multipliers by a positive constant never changes a verdict.
pub fn wmp_residuals(
    p: &ControlProblem,
    y: &GridFunction,
    u: &GridFunction,
    costate: &CostateTrajectory,
    rtol: f64,
) -> Result<WmpReport> {
    p.check_pair(y, u)?;
    let n = p.n();
    let big_n = p.scale.len();
    let psi = &costate.psi;
    if psi.dim() != n || psi.len() != big_n {
        return Err(Error::Domain(format!("costate needs {big_n} rows of width {n}")));
    }
    let mut dynamics = Vec::with_capacity(big_n - 1);
    let mut cost = Vec::with_capacity(big_n - 1);
    let mut stat = Vec::with_capacity(big_n - 1);
    let mut magnitude: f64 = 0.0;
    let mut mu_min = f64::INFINITY;
    for i in 0..big_n - 1 {
        let mu = p.scale.mu(i);
        mu_min = mu_min.min(mu);
        let st = p.stage(i, y.row(i), u.row(i))?;
        magnitude = magnitude.max(st.magnitude());
        let h = st.hamiltonian(costate.psi0, psi.row(i + 1));
        dynamics.push(
            (0..n)
                .map(|k| (y.row(i + 1)[k] - y.row(i)[k]) / mu - h.h_psi_sigma[k])
                .collect::<Vec<_>>(),
        );
        cost.push(
            (0..n)
                .map(|k| (psi.row(i + 1)[k] - psi.row(i)[k]) / mu + h.h_y[k])
                .collect::<Vec<_>>(),
        );
        stat.push(h.h_u);
    }
    let mut transversality = BTreeMap::new();
    for (end, bc, row) in [(End::A, &p.bc_a, 0), (End::B, &p.bc_b, big_n - 1)] {
        let free: Vec<f64> = bc
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| psi.row(row)[k])
            .collect();
        if !free.is_empty() {
            transversality.insert(end, free);
        }
    }

    let gamma = costate.psi0.abs().max(psi.max_abs());
    let tol = rtol * (1.0 + magnitude);
    let max_rows = |rows: &[Vec<f64>]| rows.iter().fold(0.0f64, |m, r| m.max(inf_norm(r)));
    let mut checks = vec![
        Check::new("dynamics", max_rows(&dynamics), tol * (1.0 / mu_min).max(1.0)),
        Check::new("costate", max_rows(&cost), gamma * tol * (1.0 / mu_min).max(1.0)),
        Check::new("stationarity", max_rows(&stat), gamma * tol),
    ];
    for (end, v) in &transversality {
        let name = match end {
            End::A => "transversality_a",
            End::B => "transversality_b",
        };
        checks.push(Check::new(name, inf_norm(v), gamma * tol));
    }
    checks.push(Check::flag("nontrivial_multipliers", !costate.is_trivial()));
    Ok(WmpReport {
        classification: if costate.psi0 == 0.0 { "abnormal" } else { "stationary" }.into(),
        psi0: costate.psi0,
        dynamics,
        costate: cost,
        stationarity: stat,
        transversality,
        magnitude: 1.0 + magnitude,
        pass: all_pass(&checks),
        checks,
        note: STATIONARITY_NOTE.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSolution {
    #[serde(serialize_with = "serialize_rows")]
    pub y: GridFunction,
    #[serde(serialize_with = "serialize_rows")]
    pub u: GridFunction,
    pub costate: CostateTrajectory,
    /// Multipliers of the step constraints, one row per point of `T^k`.
    pub multipliers: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub report: WmpReport,
}

/// Solves the transcribed problem by Newton iteration on its KKT system,
/// recovers the costate by a backward sweep and certifies it.
///
/// Linear `φ` with quadratic `L` converges in one step. A singular KKT matrix
/// is reported as [`Error::Degenerate`].
pub fn solve_lagrange(p: &ControlProblem) -> Result<ControlSolution> {
    solve_lagrange_with(p, &SolverOptions::default(), CERTIFICATE_RTOL)
}

pub fn solve_lagrange_with(p: &ControlProblem, opts: &SolverOptions, rtol: f64) -> Result<ControlSolution> {
    let tr = ControlTranscription::new(p);
    let (x, lambda, iterations) = tr.newton_kkt(opts)?;
    let (y, u) = tr.split(&x)?;
    let n = p.n();
    let big_n = p.scale.len();
    let mu_last = p.scale.mu(big_n - 2);
    let terminal: Vec<f64> = (0..n)
        .map(|k| match p.bc_b[k] {
            Some(_) => -lambda[(big_n - 2) * n + k] / mu_last,
            None => 0.0,
        })
        .collect();
    let costate = costate_sweep(p, &y, &u, 1.0, &terminal)?;
    let report = wmp_residuals(p, &y, &u, &costate, rtol)?;
    Ok(ControlSolution {
        objective: transcribed_objective(p, &y, &u)?,
        multipliers: lambda.chunks(n).map(<[f64]>::to_vec).collect(),
        y,
        u,
        costate,
        iterations,
        report,
    })
}

/// `Σ_{t ∈ T^k} μ(t) L(t, y(t), u(t))`.
pub fn transcribed_objective(p: &ControlProblem, y: &GridFunction, u: &GridFunction) -> Result<f64> {
    p.check_pair(y, u)?;
    let mut total = 0.0;
    for i in 0..p.scale.len() - 1 {
        let mut vars = y.row(i).to_vec();
        vars.extend_from_slice(u.row(i));
        let pt = EvalPoint {
            t: p.scale.point(i),
            mu: p.scale.mu(i),
            vars: &vars,
        };
        total += p.scale.mu(i) * p.lagrangian.eval(&pt)?;
    }
    Ok(total)
}

/// Unknowns are the free state values followed by every control value.
struct ControlTranscription<'a> {
    p: &'a ControlProblem,
    /// Full layout: `N·n` state values then `(N−1)·m` controls.
    template: Vec<f64>,
    free: Vec<usize>,
    /// Position of each full-layout index among the unknowns.
    slot: Vec<Option<usize>>,
    quadratic_l: bool,
    degree_phi: Vec<Option<u32>>,
}

impl<'a> ControlTranscription<'a> {
    fn new(p: &'a ControlProblem) -> Self {
        let (n, m, big_n) = (p.n(), p.m(), p.scale.len());
        let total = big_n * n + (big_n - 1) * m;
        let mut template = vec![0.0; total];
        let mut free = Vec::new();
        let mut slot = vec![None; total];
        let pts = p.scale.points();
        let span = pts[big_n - 1] - pts[0];
        for i in 0..big_n {
            for k in 0..n {
                let idx = i * n + k;
                let fixed = match i {
                    0 => p.bc_a[k],
                    _ if i == big_n - 1 => p.bc_b[k],
                    _ => None,
                };
                match fixed {
                    Some(v) => template[idx] = v,
                    None => {
                        let ya = p.bc_a[k].or(p.bc_b[k]).unwrap_or(0.0);
                        let yb = p.bc_b[k].or(p.bc_a[k]).unwrap_or(0.0);
                        template[idx] = ya + (pts[i] - pts[0]) / span * (yb - ya);
                        slot[idx] = Some(free.len());
                        free.push(idx);
                    }
                }
            }
        }
        for idx in big_n * n..total {
            slot[idx] = Some(free.len());
            free.push(idx);
        }
        Self {
            p,
            template,
            free,
            slot,
            quadratic_l: p.lagrangian.polynomial_degree().is_some_and(|d| d <= 2),
            degree_phi: p.phi.iter().map(LagrangianExpr::polynomial_degree).collect(),
        }
    }

    fn assemble(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.template.clone();
        for (&idx, &xi) in self.free.iter().zip(x) {
            v[idx] = xi;
        }
        v
    }

    fn split(&self, x: &[f64]) -> Result<(GridFunction, GridFunction)> {
        let p = self.p;
        let full = self.assemble(x);
        let cut = p.scale.len() * p.n();
        let y = GridFunction::new(p.scale.clone(), p.n(), full[..cut].to_vec())?;
        let u = GridFunction::new(p.scale.clone(), p.m(), full[cut..].to_vec())?;
        Ok((y, u))
    }

    /// Full-layout indices of the stage variables `(y_i, u_i)` and of `y_{i+1}`.
    fn stage_indices(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let (n, m, big_n) = (self.p.n(), self.p.m(), self.p.scale.len());
        let mut w: Vec<usize> = (i * n..(i + 1) * n).collect();
        w.extend(big_n * n + i * m..big_n * n + (i + 1) * m);
        (w, ((i + 1) * n..(i + 2) * n).collect())
    }

    fn stage_at(&self, full: &[f64], i: usize) -> Result<Stage> {
        let (n, m, big_n) = (self.p.n(), self.p.m(), self.p.scale.len());
        let u0 = big_n * n + i * m;
        self.p.stage(i, &full[i * n..(i + 1) * n], &full[u0..u0 + m])
    }

    /// Objective gradient, constraint values and constraint Jacobian, all
    /// in terms of the unknowns, plus the magnitude of the terms involved.
    fn linearize(&self, x: &[f64]) -> Result<Linearization> {
        let p = self.p;
        let (n, big_n) = (p.n(), p.scale.len());
        let full = self.assemble(x);
        let d = self.free.len();
        let rows = (big_n - 1) * n;
        let mut grad = vec![0.0; d];
        let mut c = vec![0.0; rows];
        let mut jac = DMatrix::zeros(rows, d);
        let mut scale: f64 = 0.0;
        for i in 0..big_n - 1 {
            let mu = p.scale.mu(i);
            let st = self.stage_at(&full, i)?;
            scale = scale.max(st.magnitude());
            let (w, next) = self.stage_indices(i);
            for (a, &idx) in w.iter().enumerate() {
                if let Some(s) = self.slot[idx] {
                    grad[s] += mu * st.l.grad[a];
                }
            }
            for j in 0..n {
                let row = i * n + j;
                c[row] = (full[next[j]] - full[w[j]]) / mu - st.phi[j].value;
                for (a, &idx) in w.iter().enumerate() {
                    if let Some(s) = self.slot[idx] {
                        jac[(row, s)] -= st.phi[j].grad[a];
                    }
                }
                if let Some(s) = self.slot[w[j]] {
                    jac[(row, s)] -= 1.0 / mu;
                }
                if let Some(s) = self.slot[next[j]] {
                    jac[(row, s)] += 1.0 / mu;
                }
            }
        }
        Ok(Linearization { grad, c, jac, scale })
    }

    /// Hessian of `Σ μ L + λ·c` with respect to the unknowns.
    fn lagrangian_hessian(&self, x: &[f64], lambda: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.p;
        let (n, big_n) = (p.n(), p.scale.len());
        let full = self.assemble(x);
        let d = self.free.len();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..big_n - 1 {
            let mu = p.scale.mu(i);
            let (w, _) = self.stage_indices(i);
            let vars: Vec<f64> = w.iter().map(|&k| full[k]).collect();
            let pt = EvalPoint {
                t: p.scale.point(i),
                mu,
                vars: &vars,
            };
            let mut local = stage_hessian(&p.lagrangian, pt, self.quadratic_l)? * mu;
            for j in 0..n {
                let lam = lambda[i * n + j];
                if lam == 0.0 || self.degree_phi[j].is_some_and(|deg| deg <= 1) {
                    continue;
                }
                let quad = self.degree_phi[j].is_some_and(|deg| deg <= 2);
                local -= stage_hessian(&p.phi[j], pt, quad)? * lam;
            }
            for (a, &ia) in w.iter().enumerate() {
                let Some(sa) = self.slot[ia] else { continue };
                for (b, &ib) in w.iter().enumerate() {
                    if let Some(sb) = self.slot[ib] {
                        h[(sa, sb)] += local[(a, b)];
                    }
                }
            }
        }
        Ok(h)
    }

    fn kkt_residual(&self, lin: &Linearization, lambda: &[f64]) -> (Vec<f64>, f64) {
        let jt_l = lin.jac.tr_mul(&DVector::from_column_slice(lambda));
        let mut r: Vec<f64> = lin.grad.iter().zip(jt_l.iter()).map(|(g, v)| g + v).collect();
        r.extend_from_slice(&lin.c);
        let norm = inf_norm(&r);
        (r, norm)
    }

    fn newton_kkt(&self, opts: &SolverOptions) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let d = self.free.len();
        let rows = (self.p.scale.len() - 1) * self.p.n();
        let mut x: Vec<f64> = self.free.iter().map(|&i| self.template[i]).collect();
        let mut lambda = vec![0.0; rows];
        let mut lin = self.linearize(&x)?;
        let (_, mut res) = self.kkt_residual(&lin, &lambda);
        let mut best = (res, x.clone());
        for it in 0..opts.max_iter {
            if res <= opts.grad_rtol * (1.0 + lin.scale) {
                return Ok((x, lambda, it));
            }
            let w = self.lagrangian_hessian(&x, &lambda)?;
            let mut k = DMatrix::zeros(d + rows, d + rows);
            k.view_mut((0, 0), (d, d)).copy_from(&w);
            k.view_mut((0, d), (d, rows)).copy_from(&lin.jac.transpose());
            k.view_mut((d, 0), (rows, d)).copy_from(&lin.jac);
            let mut rhs = DVector::zeros(d + rows);
            for (s, g) in lin.grad.iter().enumerate() {
                rhs[s] = -g;
            }
            for (r, c) in lin.c.iter().enumerate() {
                rhs[d + r] = -c;
            }
            let sol = solve_square(&k, &rhs)?;
            let dx = sol.rows(0, d);
            let lambda_new = sol.rows(d, rows);

            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-10 {
                let xt: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, s)| a + alpha * s).collect();
                let lt: Vec<f64> = lambda
                    .iter()
                    .zip(lambda_new.iter())
                    .map(|(l, ln)| l + alpha * (ln - l))
                    .collect();
                if let Ok(lin_t) = self.linearize(&xt) {
                    let (_, rt) = self.kkt_residual(&lin_t, &lt);
                    if rt < res || (alpha == 1.0 && rt <= opts.grad_rtol * (1.0 + lin_t.scale)) {
                        x = xt;
                        lambda = lt;
                        lin = lin_t;
                        res = rt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if res < best.0 {
                best = (res, x.clone());
            }
            if !accepted {
                if res <= CERTIFICATE_RTOL * (1.0 + lin.scale) {
                    return Ok((x, lambda, it));
                }
                return Err(Error::NonConvergence {
                    iterations: it,
                    residual: best.0,
                    best: best.1,
                });
            }
        }
        if res <= opts.grad_rtol * (1.0 + lin.scale) {
            return Ok((x, lambda, opts.max_iter));
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            residual: best.0,
            best: best.1,
        })
    }
}

struct Linearization {
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: DMatrix<f64>,
    scale: f64,
}

/// Nontrivial solutions of the abnormal system along `(y, u)`:
/// `ψ(t) = (I + μ(t) φ_y(t))ᵀ ψ(σ(t))`, `φ_u(t)ᵀ ψ(σ(t)) = 0` on `T^k`, and
/// `ψ = 0` at the free components of each end. Each basis direction is
/// returned with `ψ0 = 0`, scaled to `‖ψ‖_∞ = 1` with a positive largest
/// entry.
pub fn detect_abnormal(p: &ControlProblem, y: &GridFunction, u: &GridFunction) -> Result<Vec<CostateTrajectory>> {
    p.check_pair(y, u)?;
    let (n, m, big_n) = (p.n(), p.m(), p.scale.len());
    let unknowns = big_n * n;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..big_n - 1 {
        let mu = p.scale.mu(i);
        let st = p.stage(i, y.row(i), u.row(i))?;
        for k in 0..n {
            let mut r = vec![0.0; unknowns];
            r[i * n + k] = 1.0;
            for j in 0..n {
                let a = if j == k { 1.0 } else { 0.0 } + mu * st.phi_y(j, k);
                r[(i + 1) * n + j] -= a;
            }
            rows.push(r);
        }
        for l in 0..m {
            let mut r = vec![0.0; unknowns];
            for j in 0..n {
                r[(i + 1) * n + j] = st.phi_u(j, l);
            }
            rows.push(r);
        }
    }
    for (bc, row) in [(&p.bc_a, 0), (&p.bc_b, big_n - 1)] {
        for (k, v) in bc.iter().enumerate() {
            if v.is_none() {
                let mut r = vec![0.0; unknowns];
                r[row * n + k] = 1.0;
                rows.push(r);
            }
        }
    }
    let a = DMatrix::from_fn(rows.len(), unknowns, |r, c| rows[r][c]);
    let basis = nullspace(&a, NULLSPACE_RTOL);
    basis
        .column_iter()
        .map(|col| {
            let vmax = col.iter().fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best });
            let psi: Vec<f64> = col.iter().map(|v| v / vmax).collect();
            Ok(CostateTrajectory {
                psi0: 0.0,
                psi: GridFunction::new(p.scale.clone(), n, psi)?,
            })
        })
        .collect()
}

/// Appends the state `y_{n+1}` with `y_{n+1}^Δ = g`, `y_{n+1}(a) = 0` and
/// `y_{n+1}(b) = β`, turning `∫_a^b g Δt = β` into endpoint data.
pub fn isoperimetric_reduce(p: &ControlProblem, g: &LagrangianExpr, beta: f64) -> Result<ControlProblem> {
    if g.arity() != p.lagrangian.arity() {
        return Err(Error::Arity(format!(
            "constraint integrand arity {:?} differs from problem arity {:?}",
            g.arity(),
            p.lagrangian.arity()
        )));
    }
    let arity = Arity::new(p.n() + 1, 0, p.m());
    let lift = |e: &LagrangianExpr| LagrangianExpr::from_ast(e.ast().clone(), arity);
    let mut phi = p.phi.iter().map(lift).collect::<Result<Vec<_>>>()?;
    phi.push(lift(g)?);
    let mut bc_a = p.bc_a.clone();
    bc_a.push(Some(0.0));
    let mut bc_b = p.bc_b.clone();
    bc_b.push(Some(beta));
    ControlProblem::with_boundary(p.scale.clone(), lift(&p.lagrangian)?, phi, bc_a, bc_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale(pts: &[f64]) -> Arc<TimeScale> {
        Arc::new(TimeScale::new(pts.to_vec()).unwrap())
    }

    fn lq(bc_b: Option<f64>) -> ControlProblem {
        ControlProblem::parse(scale(&[0.0, 1.0, 2.0]), "u[0]^2", &["u[0]"], 1, 1, Some(vec![0.0]), bc_b.map(|v| vec![v]))
            .unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let p = lq(Some(2.0));
        let h = hamiltonian(&p, 0.0, &[0.0], &[1.0], 1.0, &[-2.0]).unwrap();
        assert_eq!((h.h, h.h_u.clone()), (-1.0, vec![0.0]));
        assert_eq!(h.h_psi_sigma, vec![1.0]);
        let h = hamiltonian(&p, 1.0, &[0.0], &[3.0], 0.0, &[0.5]).unwrap();
        assert_eq!(h.h, 1.5);
        assert!(matches!(hamiltonian(&p, 0.5, &[0.0], &[1.0], 1.0, &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn golden_lq() {
        let s = solve_lagrange(&lq(Some(2.0))).unwrap();
        assert_eq!(s.u.values(), &[1.0, 1.0]);
        assert_eq!(s.y.values(), &[0.0, 1.0, 2.0]);
        assert_eq!(s.costate.psi.values(), &[-2.0, -2.0, -2.0]);
        assert_eq!(s.costate.psi0, 1.0);
        // λ(t) = −μ(t) ψ(σ(t)).
        assert_eq!(s.multipliers, vec![vec![2.0], vec![2.0]]);
        assert!(s.report.pass);
    }

    #[test]
    fn free_end_lq() {
        let s = solve_lagrange(&lq(None)).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
        assert_eq!(s.y.max_abs(), 0.0);
        assert_eq!(s.costate.psi.row(2), &[0.0]);
        assert!(s.report.pass);
    }

    #[test]
    fn sweep_by_hand() {
        let p = ControlProblem::parse(scale(&[0.0, 1.0, 2.0]), "y[0]^2", &["u[0]"], 1, 1, None, None).unwrap();
        let y = GridFunction::scalar(p.scale().clone(), vec![1.0; 3]).unwrap();
        let u = GridFunction::scalar(p.scale().clone(), vec![0.0; 2]).unwrap();
        let c = costate_sweep(&p, &y, &u, 1.0, &[0.0]).unwrap();
        assert_eq!(c.psi.values(), &[4.0, 2.0, 0.0]);
        let c = costate_sweep(&p, &y, &u, 0.0, &[0.0]).unwrap();
        assert!(c.is_trivial());
    }

    #[test]
    fn perturbed_control_breaks_stationarity() {
        let p = lq(Some(2.0));
        let s = solve_lagrange(&p).unwrap();
        let u = GridFunction::scalar(p.scale().clone(), vec![1.1, 1.0]).unwrap();
        let r = wmp_residuals(&p, &s.y, &u, &s.costate, CERTIFICATE_RTOL).unwrap();
        assert!((r.stationarity[0][0] - 0.2).abs() < 1e-12);
        assert!(!r.pass);
    }

    #[test]
    fn abnormal_family() {
        let p = ControlProblem::parse(scale(&[0.0, 1.0, 2.0]), "u[0]", &["u[0]^2"], 1, 1, Some(vec![0.0]), Some(vec![0.0]))
            .unwrap();
        let y = GridFunction::scalar(p.scale().clone(), vec![0.0; 3]).unwrap();
        let u = GridFunction::scalar(p.scale().clone(), vec![0.0; 2]).unwrap();
        let fam = detect_abnormal(&p, &y, &u).unwrap();
        assert_eq!(fam.len(), 1);
        for v in fam[0].psi.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let r = wmp_residuals(&p, &y, &u, &fam[0], 1e-12).unwrap();
        assert!(r.pass, "{:?}", r.checks);
        assert_eq!(r.classification, "abnormal");
        let normal = CostateTrajectory {
            psi0: 1.0,
            psi: fam[0].psi.clone(),
        };
        assert!(!wmp_residuals(&p, &y, &u, &normal, 1e-12).unwrap().pass);
    }

    #[test]
    fn no_abnormal_when_endpoint_free_or_phi_is_control() {
        let p = lq(Some(2.0));
        let s = solve_lagrange(&p).unwrap();
        assert!(detect_abnormal(&p, &s.y, &s.u).unwrap().is_empty());
        let p = ControlProblem::parse(scale(&[0.0, 1.0, 2.0]), "u[0]", &["u[0]^2"], 1, 1, Some(vec![0.0]), None).unwrap();
        let y = GridFunction::scalar(p.scale().clone(), vec![0.0; 3]).unwrap();
        let u = GridFunction::scalar(p.scale().clone(), vec![0.0; 2]).unwrap();
        assert!(detect_abnormal(&p, &y, &u).unwrap().is_empty());
    }

    #[test]
    fn isoperimetric_examples() {
        let p = lq(None);
        let g = LagrangianExpr::parse("u[0]", p.lagrangian().arity()).unwrap();
        let q = isoperimetric_reduce(&p, &g, 2.0).unwrap();
        assert_eq!((q.n(), q.m()), (2, 1));
        let s = solve_lagrange(&q).unwrap();
        for v in s.u.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!((s.y.row(2)[1] - 2.0).abs() < 1e-12);

        let g = LagrangianExpr::parse("u[0]^2", p.lagrangian().arity()).unwrap();
        let s = solve_lagrange(&isoperimetric_reduce(&p, &g, 0.0).unwrap());
        // u ≡ 0 is forced, but the constraint gradient vanishes there.
        match s {
            Ok(s) => assert!(s.u.max_abs() < 1e-6),
            Err(e) => assert!(matches!(e, Error::Degenerate(_) | Error::NonConvergence { .. }), "{e:?}"),
        }
    }

    #[test]
    fn three_point_lq_with_state_cost() {
        let p = ControlProblem::parse(
            scale(&[0.0, 1.0, 2.0, 3.0]),
            "u[0]^2 + y[0]^2",
            &["u[0]"],
            1,
            1,
            Some(vec![1.0]),
            None,
        )
        .unwrap();
        let s = solve_lagrange(&p).unwrap();
        assert!(s.report.pass, "{:?}", s.report.checks);
        assert_eq!(s.costate.psi.row(3), &[0.0]);
    }

    #[test]
    fn nonlinear_dynamics_converge() {
        let p = ControlProblem::parse(
            Arc::new(TimeScale::uniform(0.0, 1.0, 11).unwrap()),
            "u[0]^2 + y[0]^2",
            &["sin(y[0]) + u[0]"],
            1,
            1,
            Some(vec![1.0]),
            Some(vec![0.0]),
        )
        .unwrap();
        let s = solve_lagrange(&p).unwrap();
        assert!(s.report.pass, "{:?}", s.report.checks);
        assert!(s.iterations > 1);
    }

    #[test]
    fn basic_embedding_matches_basic_solver() {
        let bp = BasicProblem::parse(
            scale(&[0.0, 0.5, 1.5, 2.0]),
            "dy[0]^2 + y[0]*dy[0] + y[0]^2",
            1,
            Form::Sigma,
            Some(vec![1.0]),
            None,
        )
        .unwrap();
        let cp = ControlProblem::from_basic(&bp).unwrap();
        assert_eq!(
            cp.lagrangian().to_string(),
            "u[0]^2 + (y[0] + mu*u[0])*u[0] + (y[0] + mu*u[0])^2"
        );
        let s = solve_lagrange(&cp).unwrap();
        let (y, _) = crate::variational::solve_basic(&bp).unwrap();
        for (a, b) in s.y.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(detect_abnormal(&cp, &s.y, &s.u).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_shapes() {
        let r = ControlProblem::parse(scale(&[0.0, 1.0, 2.0]), "u[0]", &["u[0]"], 1, 2, None, None);
        assert!(matches!(r, Err(Error::Arity(_))));
        let r = ControlProblem::parse(scale(&[0.0, 1.0]), "u[0]", &["u[0]"], 1, 1, None, None);
        assert!(matches!(r, Err(Error::InsufficientPoints { .. })));
    }
}
