//! Unconstrained Newton iteration used by the direct-transcription solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{EvalPoint, LagrangianExpr};
use crate::linalg::inf_norm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop when `‖∇F‖_∞ ≤ grad_rtol · (1 + scale)`, where `scale` is the
    /// largest partial derivative seen in the gradient assembly.
    pub grad_rtol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_rtol: 1e-12,
        }
    }
}

/// Gradient together with the magnitude of the terms that produced it.
pub struct ScaledGradient {
    pub grad: Vec<f64>,
    pub scale: f64,
}

pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<ScaledGradient>;
    /// Solves `∇²F(x) d = rhs`, failing with [`Error::Degenerate`] when the
    /// Hessian is singular.
    fn solve_hessian(&self, x: &[f64], rhs: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Exact Newton step for objectives whose gradient is affine, polished by
/// at most two refinement steps.
pub fn minimize_quadratic(obj: &impl SmoothObjective, x0: Vec<f64>) -> Result<Minimum> {
    let mut x = x0;
    let mut g = obj.gradient(&x)?;
    let mut iterations = 0;
    for _ in 0..3 {
        let step = obj.solve_hessian(&x, &DVector::from_vec(g.grad.clone()))?;
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a - d).collect();
        let gt = obj.gradient(&trial)?;
        iterations += 1;
        if iterations > 1 && inf_norm(&gt.grad) >= inf_norm(&g.grad) {
            break;
        }
        x = trial;
        g = gt;
        if inf_norm(&g.grad) == 0.0 {
            break;
        }
    }
    Ok(Minimum {
        grad_norm: inf_norm(&g.grad),
        x,
        iterations,
    })
}

/// Damped Newton on the gradient with an Armijo line search, falling back to
/// steepest descent when the Newton direction is unusable.
pub fn minimize_newton(obj: &impl SmoothObjective, x0: Vec<f64>, opts: &SolverOptions) -> Result<Minimum> {
    let value = |x: &[f64]| obj.value(x).unwrap_or(f64::INFINITY);
    let mut x = x0;
    let mut fx = obj.value(&x)?;
    let mut best = (f64::INFINITY, x.clone());
    for it in 0..opts.max_iter {
        let ScaledGradient { grad, scale } = obj.gradient(&x)?;
        let gn = inf_norm(&grad);
        if gn < best.0 {
            best = (gn, x.clone());
        }
        if gn <= opts.grad_rtol * (1.0 + scale) {
            return Ok(Minimum { x, iterations: it, grad_norm: gn });
        }
        let g = DVector::from_vec(grad);
        let newton = obj.solve_hessian(&x, &g).ok().map(|d| -d);

        let mut accepted = false;
        let mut candidates = Vec::with_capacity(2);
        if let Some(d) = newton.filter(|d| d.dot(&g) < 0.0) {
            candidates.push(d);
        }
        candidates.push(-&g);
        for d in candidates {
            let slope = d.dot(&g);
            let mut alpha = 1.0;
            while alpha > 1e-14 {
                let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, s)| a + alpha * s).collect();
                let ft = value(&trial);
                if ft <= fx + 1e-4 * alpha * slope {
                    x = trial;
                    fx = ft;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            // No descent possible: either a stationary point below rounding
            // or a saddle. Take the full Newton step if it shrinks the gradient.
            let step = obj.solve_hessian(&x, &g)?;
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a - d).collect();
            let gt = obj.gradient(&trial)?;
            if inf_norm(&gt.grad) >= gn {
                return Err(Error::NonConvergence {
                    iterations: it,
                    residual: best.0,
                    best: best.1,
                });
            }
            fx = obj.value(&trial)?;
            x = trial;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: best.0,
        best: best.1,
    })
}

/// Hessian of `L` with respect to every declared variable, by differencing
/// its exact gradient. For quadratic `L` the gradient is affine and a unit
/// forward step is exact; otherwise central differences are used.
pub fn stage_hessian(l: &LagrangianExpr, p: EvalPoint<'_>, quadratic: bool) -> Result<DMatrix<f64>> {
    let dim = p.vars.len();
    let mut h = DMatrix::zeros(dim, dim);
    let used = l.used_vars();
    let grad_at = |w: &[f64]| -> Result<Vec<f64>> {
        Ok(l.eval_with_partials(&EvalPoint { vars: w, ..p })?.grad)
    };
    let base = if quadratic { Some(grad_at(p.vars)?) } else { None };
    let mut w = p.vars.to_vec();
    for &k in used {
        let col: Vec<f64> = match &base {
            Some(g0) => {
                w[k] = p.vars[k] + 1.0;
                let g1 = grad_at(&w)?;
                g1.iter().zip(g0).map(|(a, b)| a - b).collect()
            }
            None => {
                let step = 6e-6 * (1.0 + p.vars[k].abs());
                w[k] = p.vars[k] + step;
                let gp = grad_at(&w)?;
                w[k] = p.vars[k] - step;
                let gm = grad_at(&w)?;
                gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * step)).collect()
            }
        };
        w[k] = p.vars[k];
        for (r, v) in col.into_iter().enumerate() {
            h[(r, k)] = v;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_square;

    struct Rosenbrock;

    impl SmoothObjective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }
        fn gradient(&self, x: &[f64]) -> Result<ScaledGradient> {
            let a = x[1] - x[0] * x[0];
            Ok(ScaledGradient {
                grad: vec![-2.0 * (1.0 - x[0]) - 400.0 * x[0] * a, 200.0 * a],
                scale: 1.0,
            })
        }
        fn solve_hessian(&self, x: &[f64], rhs: &DVector<f64>) -> Result<DVector<f64>> {
            let h = DMatrix::from_row_slice(
                2,
                2,
                &[
                    2.0 - 400.0 * (x[1] - 3.0 * x[0] * x[0]),
                    -400.0 * x[0],
                    -400.0 * x[0],
                    200.0,
                ],
            );
            solve_square(&h, rhs)
        }
    }

    #[test]
    fn newton_finds_rosenbrock_minimum() {
        let m = minimize_newton(&Rosenbrock, vec![-1.2, 1.0], &SolverOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-9 && (m.x[1] - 1.0).abs() < 1e-9, "{:?}", m.x);
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let opts = SolverOptions { max_iter: 2, grad_rtol: 1e-12 };
        match minimize_newton(&Rosenbrock, vec![-1.2, 1.0], &opts) {
            Err(Error::NonConvergence { iterations, best, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(best.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
