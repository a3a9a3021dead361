//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use deltavar::higher_order::BlockBoundary;
use deltavar::{Arity, BasicProblem, ControlProblem, Form, GridFunction, HigherOrderProblem, LagrangianExpr, TimeScale};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// `len` points starting at a random origin with spacings in `[hmin, hmax]`.
pub fn random_scale(rng: &mut StdRng, len: usize, hmin: f64, hmax: f64) -> Arc<TimeScale> {
    let mut t = rng.gen_range(-1.0..1.0);
    let mut pts = Vec::with_capacity(len);
    for _ in 0..len {
        pts.push(t);
        t += rng.gen_range(hmin..=hmax);
    }
    Arc::new(TimeScale::new(pts).unwrap())
}

pub fn random_poly_function(rng: &mut StdRng, scale: &Arc<TimeScale>) -> GridFunction {
    let degree = rng.gen_range(0..=4);
    let coeffs: Vec<f64> = (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GridFunction::from_fn(scale.clone(), 1, |t| vec![coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)]).unwrap()
}

fn lit(v: f64) -> String {
    format!("({v:.12})")
}

/// `zᵀAz + bᵀz` with `A = MᵀM + 0.1 I`, over the named variables.
pub fn convex_quadratic(rng: &mut StdRng, vars: &[String]) -> String {
    let k = vars.len();
    let m = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
    let a = m.transpose() * m + DMatrix::identity(k, k) * 0.1;
    let mut terms = Vec::new();
    for i in 0..k {
        for j in 0..k {
            terms.push(format!("{}*{}*{}", lit(a[(i, j)]), vars[i], vars[j]));
        }
        terms.push(format!("{}*{}", lit(rng.gen_range(-1.0..1.0)), vars[i]));
    }
    terms.join(" + ")
}

pub fn basic_vars(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("y[{i}]")).chain((0..n).map(|i| format!("dy[{i}]"))).collect()
}

/// A strictly convex basic problem with `n ≤ 3` on a random scale, with
/// both ends fixed or exactly one end free.
pub fn random_basic(rng: &mut StdRng) -> BasicProblem {
    let n = rng.gen_range(1..=3);
    let len = rng.gen_range(3..=15);
    let scale = random_scale(rng, len, 0.1, 2.0);
    let l = convex_quadratic(rng, &basic_vars(n));
    let data = |rng: &mut StdRng| Some((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
    let (bc_a, bc_b) = match rng.gen_range(0..3) {
        0 => (data(rng), data(rng)),
        1 => (None, data(rng)),
        _ => (data(rng), None),
    };
    BasicProblem::parse(scale, &l, n, Form::Plain, bc_a, bc_b).unwrap()
}

/// A linear-quadratic Lagrange problem with `m ≤ n ≤ 3`: `y(a)` fixed,
/// each component of `y(b)` fixed with probability ½.
pub fn random_lq(rng: &mut StdRng) -> ControlProblem {
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(1..=n);
    let len = rng.gen_range(n + 3..=12);
    let scale = random_scale(rng, len, 0.1, 1.0);
    let vars: Vec<String> = (0..n).map(|i| format!("y[{i}]")).chain((0..m).map(|i| format!("u[{i}]"))).collect();
    let l = convex_quadratic(rng, &vars);
    let phi: Vec<String> = (0..n)
        .map(|_| {
            let mut terms: Vec<String> = vars.iter().map(|v| format!("{}*{v}", lit(rng.gen_range(-1.0..1.0)))).collect();
            terms.push(lit(rng.gen_range(-0.5..0.5)));
            terms.join(" + ")
        })
        .collect();
    let arity = Arity::new(n, 0, m);
    let phi = phi.iter().map(|s| LagrangianExpr::parse(s, arity).unwrap()).collect();
    let bc_a: Vec<Option<f64>> = (0..n).map(|_| Some(rng.gen_range(-1.0..1.0))).collect();
    let bc_b: Vec<Option<f64>> = (0..n).map(|_| rng.gen_bool(0.5).then(|| rng.gen_range(-1.0..1.0))).collect();
    ControlProblem::with_boundary(scale, LagrangianExpr::parse(&l, arity).unwrap(), phi, bc_a, bc_b).unwrap()
}

/// A strictly convex higher-order problem with every boundary block fixed.
pub fn random_higher_order_fixed(rng: &mut StdRng) -> HigherOrderProblem {
    let n = rng.gen_range(1..=2);
    let r = rng.gen_range(1..=3);
    let len = rng.gen_range(2 * r + 1..=2 * r + 6);
    let scale = random_scale(rng, len, 0.2, 1.5);
    let vars: Vec<String> = (0..n)
        .map(|i| format!("y[{i}]"))
        .chain((1..=r).flat_map(|j| (0..n).map(move |i| format!("dy[{i}][{j}]"))))
        .collect();
    let l = convex_quadratic(rng, &vars);
    let blocks = |rng: &mut StdRng| -> BlockBoundary {
        (0..r)
            .map(|_| Some((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect()
    };
    let bc_a = blocks(rng);
    let bc_b = blocks(rng);
    HigherOrderProblem::parse(scale, &l, n, r, bc_a, bc_b).unwrap()
}

/// Minimiser of a quadratic `F` over `x ∈ ℝ^k` from exact differences:
/// with unit steps, first and second differences of a quadratic are exact.
pub fn quadratic_minimiser(k: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let zero = vec![0.0; k];
    let f0 = f(&zero);
    let unit = |i: usize| {
        let mut e = zero.clone();
        e[i] = 1.0;
        e
    };
    let fi: Vec<f64> = (0..k).map(|i| f(&unit(i))).collect();
    let fmi: Vec<f64> = (0..k)
        .map(|i| {
            let mut e = zero.clone();
            e[i] = -1.0;
            f(&e)
        })
        .collect();
    let mut h = DMatrix::zeros(k, k);
    for i in 0..k {
        h[(i, i)] = fi[i] - 2.0 * f0 + fmi[i];
        for j in 0..i {
            let mut e = unit(i);
            e[j] = 1.0;
            let v = f(&e) - fi[i] - fi[j] + f0;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let g = DVector::from_fn(k, |i, _| (fi[i] - fmi[i]) / 2.0);
    let x = h.lu().solve(&(-g)).expect("positive definite Hessian");
    x.iter().copied().collect()
}
