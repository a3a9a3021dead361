//! Independent checks used to validate the solvers: exhaustive grid search
//! over the transcribed objective, KKT multipliers of the transcription, and
//! finite-difference gradient checks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{costate_sweep, transcribed_objective, ControlProblem, CostateTrajectory};
use crate::error::{Error, Result};
use crate::expr::{EvalPoint, LagrangianExpr};
use crate::higher_order::{evaluate_ho_functional, HigherOrderProblem};
use crate::linalg::inf_norm;
use crate::parallel::worker_threads;
use crate::timescale::{GridFunction, TimeScale};
use crate::variational::{evaluate_functional, BasicProblem};

/// Largest number of grid combinations a search may visit.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

/// Relative tolerance for meeting fixed terminal data by forward simulation.
pub const TERMINAL_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self { lo, hi, step }
    }

    /// Number of grid values, `lo` and `hi` included.
    pub fn count(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn value(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.step
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidStep(self.step));
        }
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.hi < self.lo {
            return Err(Error::ReversedBounds { lo: self.lo, hi: self.hi });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpec {
    /// One axis per unknown, in the order documented by [`OracleProblem`].
    pub axes: Vec<GridAxis>,
    #[serde(default = "default_budget")]
    pub budget: u64,
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

impl GridSearchSpec {
    pub fn new(axes: Vec<GridAxis>) -> Self {
        Self {
            axes,
            budget: DEFAULT_BUDGET,
        }
    }

    /// The same axis for each of `count` unknowns.
    pub fn uniform(count: usize, axis: GridAxis) -> Self {
        Self::new(vec![axis; count])
    }

    pub fn combinations(&self) -> u128 {
        self.axes.iter().map(|a| a.count() as u128).product()
    }
}

/// The problem being searched. Unknowns, in order:
///
/// * basic: `y` at every non-fixed point, row-major;
/// * control: the free components of `y(a)`, then `u` on `T^k`, row-major;
///   `y` is simulated forward and points missing fixed data at `b` are
///   infeasible;
/// * higher order: `y` at every point not pinned by boundary data, ascending.
#[derive(Debug, Clone, Copy)]
pub enum OracleProblem<'a> {
    Basic(&'a BasicProblem),
    Control(&'a ControlProblem),
    HigherOrder(&'a HigherOrderProblem),
}

impl OracleProblem<'_> {
    pub fn unknowns(&self) -> usize {
        match self {
            OracleProblem::Basic(p) => {
                let fixed = usize::from(p.bc_a().is_some()) + usize::from(p.bc_b().is_some());
                (p.scale().len() - fixed) * p.n()
            }
            OracleProblem::Control(p) => {
                p.bc_a().iter().filter(|v| v.is_none()).count() + (p.scale().len() - 1) * p.m()
            }
            OracleProblem::HigherOrder(hp) => HoPins::new(hp).free.len() * hp.n(),
        }
    }

    /// The unknowns of a trajectory, in the order the grid axes use. `u` is
    /// required for control problems and ignored otherwise.
    pub fn unknowns_of(&self, y: &GridFunction, u: Option<&GridFunction>) -> Result<Vec<f64>> {
        match self {
            OracleProblem::Basic(p) => {
                let len = p.scale().len();
                let lo = usize::from(p.bc_a().is_some());
                let hi = len - usize::from(p.bc_b().is_some());
                Ok((lo..hi).flat_map(|i| y.row(i).to_vec()).collect())
            }
            OracleProblem::Control(p) => {
                let u = u.ok_or_else(|| Error::Domain("control unknowns need u".into()))?;
                let mut x: Vec<f64> = p
                    .bc_a()
                    .iter()
                    .zip(y.row(0))
                    .filter(|(bc, _)| bc.is_none())
                    .map(|(_, v)| *v)
                    .collect();
                x.extend(u.rows().take(p.scale().len() - 1).flatten());
                Ok(x)
            }
            OracleProblem::HigherOrder(hp) => Ok(HoPins::new(hp).free.iter().flat_map(|&k| y.row(k).to_vec()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceResult {
    pub assignment: Vec<f64>,
    pub grid_index: Vec<usize>,
    pub objective: f64,
    pub combinations: u128,
}

/// Exhaustive minimisation of the exact transcribed objective over a grid.
///
/// The grid is split across worker threads; among equal objective values the
/// lexicographically smallest grid index wins, so the result does not depend
/// on the number of workers.
pub fn brute_force_minimize(problem: OracleProblem<'_>, spec: &GridSearchSpec) -> Result<BruteForceResult> {
    let unknowns = problem.unknowns();
    if spec.axes.len() != unknowns {
        return Err(Error::Config(format!(
            "grid has {} axes but the problem has {unknowns} unknowns",
            spec.axes.len()
        )));
    }
    for a in &spec.axes {
        a.validate()?;
    }
    let combinations = spec.combinations();
    if combinations > u128::from(spec.budget) {
        return Err(Error::BudgetExceeded {
            combinations,
            budget: spec.budget,
        });
    }
    let evaluator = Evaluator::new(problem);
    let total = combinations as u64;
    let workers = (worker_threads() as u64).clamp(1, total.max(1));
    let chunk = total.div_ceil(workers);
    let best = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let evaluator = &evaluator;
                let start = w * chunk;
                let end = ((w + 1) * chunk).min(total);
                s.spawn(move || scan(evaluator, spec, start, end))
            })
            .collect();
        handles
            .into_iter()
            .filter_map(|h| h.join().expect("grid worker panicked"))
            .fold(None, |acc: Option<(f64, u64)>, cand| match acc {
                Some(a) if a.0 < cand.0 || (a.0 == cand.0 && a.1 < cand.1) => Some(a),
                _ => Some(cand),
            })
    });
    let (objective, linear) =
        best.ok_or_else(|| Error::Infeasible("no grid point satisfies the problem constraints".into()))?;
    let grid_index = unravel(spec, linear);
    Ok(BruteForceResult {
        assignment: grid_index.iter().zip(&spec.axes).map(|(&k, a)| a.value(k)).collect(),
        grid_index,
        objective,
        combinations,
    })
}

/// First strict minimum over the linear indices `[start, end)`.
fn scan(evaluator: &Evaluator<'_>, spec: &GridSearchSpec, start: u64, end: u64) -> Option<(f64, u64)> {
    if start >= end {
        return None;
    }
    let mut index = unravel(spec, start);
    let mut x: Vec<f64> = index.iter().zip(&spec.axes).map(|(&k, a)| a.value(k)).collect();
    let mut best: Option<(f64, u64)> = None;
    for linear in start..end {
        if let Some(v) = evaluator.objective(&x) {
            if best.is_none_or(|b| v < b.0) {
                best = Some((v, linear));
            }
        }
        // Advance the mixed-radix counter, last axis fastest.
        for d in (0..index.len()).rev() {
            index[d] += 1;
            if index[d] < spec.axes[d].count() {
                x[d] = spec.axes[d].value(index[d]);
                break;
            }
            index[d] = 0;
            x[d] = spec.axes[d].value(0);
        }
    }
    best
}

fn unravel(spec: &GridSearchSpec, mut linear: u64) -> Vec<usize> {
    let mut index = vec![0; spec.axes.len()];
    for d in (0..spec.axes.len()).rev() {
        let len = spec.axes[d].count() as u64;
        index[d] = (linear % len) as usize;
        linear /= len;
    }
    index
}

/// Maps an assignment of the unknowns to the objective, or `None` when the
/// point is infeasible or outside the evaluation domain.
struct Evaluator<'a> {
    problem: OracleProblem<'a>,
    pins: Option<HoPins>,
}

impl<'a> Evaluator<'a> {
    fn new(problem: OracleProblem<'a>) -> Self {
        let pins = match problem {
            OracleProblem::HigherOrder(hp) => Some(HoPins::new(hp)),
            _ => None,
        };
        Self { problem, pins }
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        let v = match self.problem {
            OracleProblem::Basic(p) => basic_trajectory(p, x).and_then(|y| evaluate_functional(p, &y)),
            OracleProblem::Control(p) => forward_simulate(p, x).and_then(|(y, u)| transcribed_objective(p, &y, &u)),
            OracleProblem::HigherOrder(hp) => self
                .pins
                .as_ref()
                .expect("pins for higher order")
                .trajectory(hp, x)
                .and_then(|y| evaluate_ho_functional(hp, &y)),
        };
        v.ok().filter(|v| v.is_finite())
    }
}

fn basic_trajectory(p: &BasicProblem, x: &[f64]) -> Result<GridFunction> {
    let n = p.n();
    let len = p.scale().len();
    let mut values = Vec::with_capacity(len * n);
    let mut free = x.iter();
    for i in 0..len {
        let fixed = match i {
            0 => p.bc_a(),
            _ if i == len - 1 => p.bc_b(),
            _ => None,
        };
        match fixed {
            Some(v) => values.extend_from_slice(v),
            None => values.extend(free.by_ref().take(n)),
        }
    }
    GridFunction::new(p.scale().clone(), n, values)
}

/// `y(σ(t)) = y(t) + μ(t) φ(t, y(t), u(t))` from the assembled `y(a)`.
fn forward_simulate(p: &ControlProblem, x: &[f64]) -> Result<(GridFunction, GridFunction)> {
    let (n, m) = (p.n(), p.m());
    let scale = p.scale();
    let len = scale.len();
    let free_a = p.bc_a().iter().filter(|v| v.is_none()).count();
    let (head, controls) = x.split_at(free_a);
    let mut head = head.iter();
    let mut y: Vec<f64> = p
        .bc_a()
        .iter()
        .map(|v| v.unwrap_or_else(|| *head.next().expect("free initial value")))
        .collect();
    y.reserve((len - 1) * n);
    let mut vars = vec![0.0; n + m];
    for i in 0..len - 1 {
        vars[..n].copy_from_slice(&y[i * n..(i + 1) * n]);
        vars[n..].copy_from_slice(&controls[i * m..(i + 1) * m]);
        let pt = EvalPoint {
            t: scale.point(i),
            mu: scale.mu(i),
            vars: &vars,
        };
        for (k, f) in p.phi().iter().enumerate() {
            let next = vars[k] + scale.mu(i) * f.eval(&pt)?;
            y.push(next);
        }
    }
    for (k, target) in p.bc_b().iter().enumerate() {
        if let Some(t) = target {
            let got = y[(len - 1) * n + k];
            if (got - t).abs() > TERMINAL_RTOL * (1.0 + t.abs()) {
                return Err(Error::Infeasible(format!("y(b)[{k}] = {got} misses {t}")));
            }
        }
    }
    Ok((
        GridFunction::new(scale.clone(), n, y)?,
        GridFunction::new(scale.clone(), m, controls.to_vec())?,
    ))
}

/// Points of a higher-order problem whose values follow from boundary data:
/// a fixed block `i` at `a` pins `y(t_i)` and one at `ρ^{r−1}(b)` pins
/// `y(t_{N−r+i})`, each through the weights of `Δ^i` at that end.
struct HoPins {
    free: Vec<usize>,
    /// `(point, order, anchor, weights over points)` in solve order.
    pinned: Vec<(usize, usize, usize, Vec<f64>)>,
    scale: Arc<TimeScale>,
}

impl HoPins {
    fn new(hp: &HigherOrderProblem) -> Self {
        let len = hp.scale().len();
        let r = hp.r();
        let top = len - r;
        let mut pinned = Vec::new();
        for (i, b) in hp.bc_a().iter().enumerate() {
            if b.is_some() {
                pinned.push((i, i, 0, delta_weights(hp.scale(), i, 0)));
            }
        }
        for (i, b) in hp.bc_b().iter().enumerate() {
            if b.is_some() {
                pinned.push((top + i, i, top, delta_weights(hp.scale(), i, top)));
            }
        }
        let free = (0..len).filter(|k| pinned.iter().all(|p| p.0 != *k)).collect();
        Self {
            free,
            pinned,
            scale: hp.scale().clone(),
        }
    }

    fn trajectory(&self, hp: &HigherOrderProblem, x: &[f64]) -> Result<GridFunction> {
        let n = hp.n();
        let len = self.scale.len();
        let mut values = vec![0.0; len * n];
        for (slot, &k) in self.free.iter().enumerate() {
            values[k * n..(k + 1) * n].copy_from_slice(&x[slot * n..(slot + 1) * n]);
        }
        for (point, order, anchor, w) in &self.pinned {
            let block = if *anchor == 0 { hp.bc_a() } else { hp.bc_b() };
            let target = block[*order].as_ref().expect("pinned block is fixed");
            for c in 0..n {
                let known: f64 = (0..len)
                    .filter(|&l| l != *point)
                    .map(|l| w[l] * values[l * n + c])
                    .sum();
                values[point * n + c] = (target[c] - known) / w[*point];
            }
        }
        GridFunction::new(self.scale.clone(), n, values)
    }
}

/// Weights `w` with `Δ^order f(t_anchor) = Σ_l w_l f(t_l)`, built by
/// differencing unit vectors on `t_anchor, …, t_{anchor+order}`.
fn delta_weights(scale: &Arc<TimeScale>, order: usize, anchor: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = (0..=order)
        .map(|d| {
            let mut e = vec![0.0; order + 1];
            e[d] = 1.0;
            e
        })
        .collect();
    for j in 0..order {
        rows = (0..order - j)
            .map(|k| {
                let mu = scale.mu(anchor + k);
                rows[k + 1].iter().zip(&rows[k]).map(|(b, a)| (b - a) / mu).collect()
            })
            .collect();
    }
    let mut full = vec![0.0; scale.len()];
    full[anchor..=anchor + order].copy_from_slice(&rows[0]);
    full
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktMultipliers {
    /// Constraint times, the points of `T^k`.
    pub times: Vec<f64>,
    /// Multiplier of the step constraint `(y^σ − y)/μ − φ = 0` at each time.
    pub multipliers: Vec<Vec<f64>>,
    /// `‖∇F + Jᵀλ‖_∞` after the least-squares fit.
    pub stationarity_residual: f64,
}

/// Equality multipliers of the transcription at `(y, u)`, from the
/// least-squares solution of `Jᵀλ = −∇F` over the free unknowns.
pub fn kkt_multipliers(p: &ControlProblem, y: &GridFunction, u: &GridFunction) -> Result<KktMultipliers> {
    let (n, m) = (p.n(), p.m());
    let scale = p.scale();
    let len = scale.len();
    if y.dim() != n || y.len() != len || u.dim() != m || u.len() != len - 1 {
        return Err(Error::Domain("trajectory shape does not match the problem".into()));
    }
    // Column of each unknown: free y(t_i)[k], then u(t_i)[l].
    let mut ycol = vec![None; len * n];
    let mut cols = 0;
    for i in 0..len {
        for k in 0..n {
            let fixed = (i == 0 && p.bc_a()[k].is_some()) || (i == len - 1 && p.bc_b()[k].is_some());
            if !fixed {
                ycol[i * n + k] = Some(cols);
                cols += 1;
            }
        }
    }
    let ucol = |i: usize, l: usize| cols + i * m + l;
    let unknowns = cols + (len - 1) * m;
    let constraints = (len - 1) * n;

    let mut grad = DVector::zeros(unknowns);
    let mut jt = DMatrix::zeros(unknowns, constraints);
    let mut infeasibility: f64 = 0.0;
    let mut magnitude: f64 = 0.0;
    for i in 0..len - 1 {
        let mu = scale.mu(i);
        let mut vars = y.row(i).to_vec();
        vars.extend_from_slice(u.row(i));
        let pt = EvalPoint {
            t: scale.point(i),
            mu,
            vars: &vars,
        };
        let l = p.lagrangian().eval_with_partials(&pt)?;
        magnitude = magnitude.max(inf_norm(&l.grad));
        for k in 0..n {
            if let Some(c) = ycol[i * n + k] {
                grad[c] += mu * l.grad[k];
            }
        }
        for j in 0..m {
            grad[ucol(i, j)] += mu * l.grad[n + j];
        }
        for (j, f) in p.phi().iter().enumerate() {
            let fp = f.eval_with_partials(&pt)?;
            magnitude = magnitude.max(fp.value.abs()).max(inf_norm(&fp.grad));
            let row = i * n + j;
            infeasibility = infeasibility.max(((y.row(i + 1)[j] - y.row(i)[j]) / mu - fp.value).abs());
            if let Some(c) = ycol[(i + 1) * n + j] {
                jt[(c, row)] += 1.0 / mu;
            }
            if let Some(c) = ycol[i * n + j] {
                jt[(c, row)] -= 1.0 / mu;
            }
            for k in 0..n {
                if let Some(c) = ycol[i * n + k] {
                    jt[(c, row)] -= fp.grad[k];
                }
            }
            for l in 0..m {
                jt[(ucol(i, l), row)] -= fp.grad[n + l];
            }
        }
    }
    if infeasibility > TERMINAL_RTOL * (1.0 + magnitude) {
        return Err(Error::Infeasible(format!(
            "dynamics residual {infeasibility:.3e}; multipliers are defined only at feasible points"
        )));
    }
    let svd = jt.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if constraints > unknowns || smax == 0.0 || smin <= 1e-12 * smax {
        return Err(Error::Degenerate("constraint Jacobian is rank deficient".into()));
    }
    let lambda = svd
        .solve(&(-&grad), 0.0)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let residual = (&jt * &lambda + &grad).amax();
    Ok(KktMultipliers {
        times: scale.points()[..len - 1].to_vec(),
        multipliers: lambda.as_slice().chunks(n).map(<[f64]>::to_vec).collect(),
        stationarity_residual: residual,
    })
}

/// Costate with `ψ0 = 1` for a feasible `(y, u)`: terminal values of the
/// fixed components from the last KKT multiplier (`ψ(b) = −λ(ρ(b))/μ(ρ(b))`),
/// zero for the free ones, then the backward sweep.
pub fn costate_from_multipliers(p: &ControlProblem, y: &GridFunction, u: &GridFunction) -> Result<CostateTrajectory> {
    let kkt = kkt_multipliers(p, y, u)?;
    let last = kkt.multipliers.last().expect("at least one step");
    let mu = p.scale().mu(p.scale().len() - 2);
    let terminal: Vec<f64> = p
        .bc_b()
        .iter()
        .zip(last)
        .map(|(bc, l)| if bc.is_some() { -l / mu } else { 0.0 })
        .collect();
    costate_sweep(p, y, u, 1.0, &terminal)
}

/// Largest relative error `|fd − ad| / (1 + |ad|)` between central
/// differences with step `h` and the exact partials, over all variables.
pub fn finite_diff_check(e: &LagrangianExpr, point: &EvalPoint<'_>, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(h));
    }
    let exact = e.eval_with_partials(point)?;
    let mut w = point.vars.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..w.len() {
        let x = w[k];
        w[k] = x + h;
        let fp = e.eval(&EvalPoint { vars: &w, ..*point })?;
        w[k] = x - h;
        let fm = e.eval(&EvalPoint { vars: &w, ..*point })?;
        w[k] = x;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - exact.grad[k]).abs() / (1.0 + exact.grad[k].abs()));
    }
    Ok(worst)
}
