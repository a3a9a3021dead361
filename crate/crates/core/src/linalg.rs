//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivot ratio below which a square system is treated as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

/// Solves `a x = b` with full-pivot LU, rejecting numerically singular `a`.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Domain(format!(
            "cannot solve {}x{} system with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let lu = a.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if max == 0.0 || min <= SINGULAR_PIVOT_RATIO * max {
        return Err(Error::Degenerate(format!(
            "singular linear system (pivot ratio {:.3e})",
            if max == 0.0 { 0.0 } else { min / max }
        )));
    }
    lu.solve(b)
        .ok_or_else(|| Error::Degenerate("singular linear system".into()))
}

/// Orthonormal basis of the nullspace of `a`, one column per basis vector.
///
/// Singular values at or below `rel_cutoff · σ_max` count as zero; an all-zero
/// matrix has the whole space as its nullspace.
pub fn nullspace(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let cols = a.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a full right basis.
    let rows = a.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let null: Vec<usize> = (0..cols)
        .filter(|&k| svd.singular_values[k] <= rel_cutoff * smax || smax == 0.0)
        .collect();
    let mut basis = DMatrix::zeros(cols, null.len());
    for (j, &k) in null.iter().enumerate() {
        basis.set_column(j, &v_t.row(k).transpose());
    }
    basis
}

/// Minimum-norm least-squares solution of `a x ≈ b` and its residual norm.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if a.ncols() == 0 {
        return Ok((DVector::zeros(0), b.norm()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let x = svd
        .solve(b, 1e-12 * smax.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let res = (a * &x - b).norm();
    Ok((x, res))
}

/// Square matrix with `kl` sub- and `ku` superdiagonals, stored by rows with
/// room for the fill-in of partial pivoting.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    dim: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(dim: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            dim,
            kl,
            ku,
            width,
            data: vec![0.0; dim * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + j + self.kl - i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// Adds `v` at `(i, j)`, which must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside the band");
        let k = self.slot(i, j);
        self.data[k] += v;
    }

    /// Solves `a x = b` by banded LU with partial pivoting, rejecting
    /// numerically singular matrices like [`solve_square`].
    pub fn solve(mut self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.dim;
        if b.len() != d {
            return Err(Error::Domain(format!("band system of size {d} with rhs of length {}", b.len())));
        }
        let mut rhs = b.clone();
        let reach = self.kl + self.ku;
        let (mut pmax, mut pmin) = (0.0f64, f64::INFINITY);
        for k in 0..d {
            let last = (k + self.kl).min(d - 1);
            let p = (k..=last)
                .max_by(|&a, &c| self.data[self.slot(a, k)].abs().total_cmp(&self.data[self.slot(c, k)].abs()))
                .expect("nonempty pivot range");
            if p != k {
                for j in k..=(k + reach).min(d - 1) {
                    let (sa, sb) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(sa, sb);
                }
                rhs.swap_rows(k, p);
            }
            let pivot = self.data[self.slot(k, k)];
            pmax = pmax.max(pivot.abs());
            pmin = pmin.min(pivot.abs());
            if pivot == 0.0 {
                continue;
            }
            for i in k + 1..=last {
                let l = self.data[self.slot(i, k)] / pivot;
                if l == 0.0 {
                    continue;
                }
                for j in k..=(k + reach).min(d - 1) {
                    let v = self.data[self.slot(k, j)];
                    let s = self.slot(i, j);
                    self.data[s] -= l * v;
                }
                rhs[i] -= l * rhs[k];
            }
        }
        if d > 0 && (pmax == 0.0 || pmin <= SINGULAR_PIVOT_RATIO * pmax) {
            return Err(Error::Degenerate(format!(
                "singular banded system (pivot ratio {:.3e})",
                if pmax == 0.0 { 0.0 } else { pmin / pmax }
            )));
        }
        let mut x = DVector::zeros(d);
        for i in (0..d).rev() {
            let mut acc = rhs[i];
            for j in i + 1..=(i + reach).min(d - 1) {
                acc -= self.data[self.slot(i, j)] * x[j];
            }
            x[i] = acc / self.data[self.slot(i, i)];
        }
        Ok(x)
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
