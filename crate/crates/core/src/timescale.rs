//! Finite time scales and the Δ-calculus on them.
//!
//! A [`TimeScale`] is a finite, strictly increasing set of reals. Every point
//! except the maximum is right-scattered, so the forward jump, graininess and
//! Δ-derivative reduce to index arithmetic and difference quotients, and the
//! Δ-integral is a graininess-weighted finite sum.
//!
//! A [`GridFunction`] samples a vector-valued function on a prefix of a base
//! scale. Derivatives of order `j` live on the first `N - j` points
//! (`T^{k^j}`) but keep a handle on the base scale, so the graininess used by
//! later operations is always the one of the original set.

use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative tolerance used when matching a real number to a scale point.
const POINT_MATCH_RTOL: f64 = 1e-12;

/// Refinement-study marker for the gap that starts at a point.
///
/// Tags never change calculus results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentTag {
    Isolated,
    SampledDense { h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jumps {
    pub sigma: f64,
    pub rho: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeScale {
    points: Vec<f64>,
    segment_tags: Option<Vec<SegmentTag>>,
}

impl TimeScale {
    /// Builds a scale from strictly increasing finite points (at least two).
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InsufficientPoints {
                needed: 2,
                got: points.len(),
            });
        }
        Self::validated(points)
    }

    fn validated(points: Vec<f64>) -> Result<Self> {
        if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::Domain(format!("non-finite scale point {bad}")));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!(
                "scale points must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self {
            points,
            segment_tags: None,
        })
    }

    /// `n` equally spaced points from `a` to `b` inclusive, tagged as a
    /// sampled dense segment.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientPoints { needed: 2, got: n });
        }
        if a.is_nan() || b.is_nan() || a >= b {
            return Err(Error::Domain(format!("uniform scale needs a < b, got [{a}, {b}]")));
        }
        let h = (b - a) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| a + h * i as f64).collect();
        points[n - 1] = b;
        let mut ts = Self::new(points)?;
        ts.segment_tags = Some(vec![SegmentTag::SampledDense { h }; n - 1]);
        Ok(ts)
    }

    /// Unit-spaced scale `{a, a+1, ..., a+n-1}`.
    pub fn integers(a: i64, n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| (a + i as i64) as f64).collect())
    }

    pub fn with_segment_tags(mut self, tags: Vec<SegmentTag>) -> Result<Self> {
        if tags.len() + 1 != self.points.len() {
            return Err(Error::Domain(format!(
                "expected {} segment tags, got {}",
                self.points.len() - 1,
                tags.len()
            )));
        }
        self.segment_tags = Some(tags);
        Ok(self)
    }

    pub fn segment_tags(&self) -> Option<&[SegmentTag]> {
        self.segment_tags.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index of `t` in the scale, allowing a relative mismatch of 1e-12.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let i = self.points.partition_point(|&p| p < t);
        let tol = |p: f64| POINT_MATCH_RTOL * p.abs().max(1.0);
        for j in [i.wrapping_sub(1), i] {
            if let Some(&p) = self.points.get(j) {
                if (p - t).abs() <= tol(p) {
                    return Ok(j);
                }
            }
        }
        Err(Error::Domain(format!("{t} is not a point of the time scale")))
    }

    pub fn contains(&self, t: f64) -> bool {
        self.index_of(t).is_ok()
    }

    pub fn sigma_index(&self, i: usize) -> usize {
        (i + 1).min(self.points.len() - 1)
    }

    pub fn rho_index(&self, i: usize) -> usize {
        i.saturating_sub(1)
    }

    /// Graininess at the point with index `i`; zero at the maximum.
    pub fn mu(&self, i: usize) -> f64 {
        self.points[self.sigma_index(i)] - self.points[i]
    }

    pub fn graininess(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.mu(i)).collect()
    }

    pub fn jumps_at_index(&self, i: usize) -> Jumps {
        Jumps {
            sigma: self.points[self.sigma_index(i)],
            rho: self.points[self.rho_index(i)],
            mu: self.mu(i),
        }
    }

    pub fn jump_operators(&self, t: f64) -> Result<Jumps> {
        Ok(self.jumps_at_index(self.index_of(t)?))
    }

    /// `T^{k^r}`: the first `N - r` points.
    pub fn k_restriction(&self, r: usize) -> Result<TimeScale> {
        if self.len() <= r {
            return Err(Error::InsufficientPoints {
                needed: r + 1,
                got: self.len(),
            });
        }
        Ok(self.prefix(self.len() - r))
    }

    /// First `len` points. Restrictions may have a single point, which the
    /// public constructor does not allow.
    pub(crate) fn prefix(&self, len: usize) -> TimeScale {
        TimeScale {
            points: self.points[..len].to_vec(),
            segment_tags: self
                .segment_tags
                .as_ref()
                .map(|t| t[..len.saturating_sub(1)].to_vec()),
        }
    }

    /// True when every gap equals one (up to 1e-12).
    pub fn is_unit_spaced(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - 1.0).abs() <= 1e-12)
    }

    /// Δ-derivative of the graininess on `T^{k^2}`.
    ///
    /// The value at `ρ(b)` would involve the artificial `μ(b) = 0`, so the
    /// result stops one point earlier.
    pub fn mu_delta(self: &Arc<Self>) -> Result<GridFunction> {
        let mu = GridFunction::scalar(self.clone(), self.graininess())?;
        mu.delta_derivative(1)?.restrict(1)
    }
}

impl Serialize for TimeScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.points.serialize(s)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformSpec {
    a: f64,
    b: f64,
    n: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScaleSpec {
    Points(Vec<f64>),
    Generator { uniform: UniformSpec },
}

impl<'de> Deserialize<'de> for TimeScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let built = match ScaleSpec::deserialize(d)? {
            ScaleSpec::Points(p) => TimeScale::new(p),
            ScaleSpec::Generator { uniform } => TimeScale::uniform(uniform.a, uniform.b, uniform.n),
        };
        built.map_err(serde::de::Error::custom)
    }
}

/// Forward jump, backward jump and graininess at a scale point.
pub fn jump_operators(ts: &TimeScale, t: f64) -> Result<Jumps> {
    ts.jump_operators(t)
}

pub fn k_restriction(ts: &TimeScale, r: usize) -> Result<TimeScale> {
    ts.k_restriction(r)
}

/// Samples of `f: T' → ℝⁿ` where `T'` is the first `len` points of a base scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    base: Arc<TimeScale>,
    dim: usize,
    values: Vec<f64>,
}

impl GridFunction {
    /// Row-major samples covering a prefix of `base`.
    pub fn new(base: Arc<TimeScale>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("grid function dimension must be positive".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::Domain(format!(
                "{} values do not form rows of width {dim}",
                values.len()
            )));
        }
        let rows = values.len() / dim;
        if rows == 0 || rows > base.len() {
            return Err(Error::Domain(format!(
                "{rows} rows do not fit a scale of {} points",
                base.len()
            )));
        }
        Ok(Self { base, dim, values })
    }

    pub fn from_rows(base: Arc<TimeScale>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("ragged grid function rows".into()));
        }
        Self::new(base, dim, rows.concat())
    }

    pub fn scalar(base: Arc<TimeScale>, values: Vec<f64>) -> Result<Self> {
        Self::new(base, 1, values)
    }

    /// Samples `f` at every point of `base`.
    pub fn from_fn(base: Arc<TimeScale>, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(base.len() * dim);
        for &t in base.points() {
            let row = f(t);
            if row.len() != dim {
                return Err(Error::Domain(format!("sample of width {} != {dim}", row.len())));
            }
            values.extend(row);
        }
        Self::new(base, dim, values)
    }

    pub fn base(&self) -> &Arc<TimeScale> {
        &self.base
    }

    /// Domain of the function: a k-restriction of the base scale.
    pub fn scale(&self) -> TimeScale {
        self.base.prefix(self.len())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Scalar component `j` as its own grid function.
    pub fn component(&self, j: usize) -> GridFunction {
        assert!(j < self.dim, "component {j} out of range");
        let values = self.rows().map(|r| r[j]).collect();
        GridFunction {
            base: self.base.clone(),
            dim: 1,
            values,
        }
    }

    pub fn value_at(&self, t: f64) -> Result<&[f64]> {
        let i = self.base.index_of(t)?;
        if i >= self.len() {
            return Err(Error::Domain(format!("{t} lies outside the function's domain")));
        }
        Ok(self.row(i))
    }

    /// Drops the last `r` rows.
    pub fn restrict(&self, r: usize) -> Result<GridFunction> {
        if self.len() <= r {
            return Err(Error::InsufficientPoints {
                needed: r + 1,
                got: self.len(),
            });
        }
        let keep = (self.len() - r) * self.dim;
        Ok(GridFunction {
            base: self.base.clone(),
            dim: self.dim,
            values: self.values[..keep].to_vec(),
        })
    }

    /// Δ-derivative of the given order, defined on the first `len - order` points.
    pub fn delta_derivative(&self, order: usize) -> Result<GridFunction> {
        if self.len() <= order {
            return Err(Error::InsufficientPoints {
                needed: order + 1,
                got: self.len(),
            });
        }
        let mut cur = self.values.clone();
        let mut rows = self.len();
        for _ in 0..order {
            let mut next = Vec::with_capacity((rows - 1) * self.dim);
            for i in 0..rows - 1 {
                let mu = self.base.mu(i);
                for k in 0..self.dim {
                    next.push((cur[(i + 1) * self.dim + k] - cur[i * self.dim + k]) / mu);
                }
            }
            cur = next;
            rows -= 1;
        }
        Ok(GridFunction {
            base: self.base.clone(),
            dim: self.dim,
            values: cur,
        })
    }

    /// `f^σ = f ∘ σ` on the first `len - 1` points.
    pub fn sigma(&self) -> Result<GridFunction> {
        if self.len() < 2 {
            return Err(Error::InsufficientPoints {
                needed: 2,
                got: self.len(),
            });
        }
        Ok(GridFunction {
            base: self.base.clone(),
            dim: self.dim,
            values: self.values[self.dim..].to_vec(),
        })
    }

    /// `∫_lo^hi f(τ) Δτ = Σ_{t ∈ [lo, hi)} μ(t) f(t)`.
    pub fn delta_integral(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        let lo_i = self.base.index_of(lo)?;
        let hi_i = self.base.index_of(hi)?;
        self.delta_integral_idx(lo_i, hi_i)
    }

    pub fn delta_integral_idx(&self, lo: usize, hi: usize) -> Result<Vec<f64>> {
        if lo > hi {
            return Err(Error::ReversedBounds {
                lo: self.base.point(lo),
                hi: self.base.point(hi),
            });
        }
        if hi > self.len() {
            return Err(Error::Domain(format!(
                "integrand defined on {} points cannot be integrated up to point {hi}",
                self.len()
            )));
        }
        let mut acc = vec![0.0; self.dim];
        for i in lo..hi {
            let mu = self.base.mu(i);
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += mu * v;
            }
        }
        Ok(acc)
    }

    /// Pointwise combination on the common domain of two functions with the
    /// same base scale and width.
    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        self.check_compatible(other)?;
        let rows = self.len().min(other.len());
        let values = self.values[..rows * self.dim]
            .iter()
            .zip(&other.values[..rows * self.dim])
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(GridFunction {
            base: self.base.clone(),
            dim: self.dim,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            base: self.base.clone(),
            dim: self.dim,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if !Arc::ptr_eq(&self.base, &other.base) && self.base.points != other.base.points {
            return Err(Error::Domain("grid functions live on different time scales".into()));
        }
        if self.dim != other.dim {
            return Err(Error::Domain(format!(
                "grid function widths differ ({} vs {})",
                self.dim, other.dim
            )));
        }
        Ok(())
    }
}

/// Residuals of both integration-by-parts formulas over `[a, b]`:
///
/// * `|∫ f^σ g^Δ − ([fg]_a^b − ∫ f^Δ g)|`
/// * `|∫ f g^Δ − ([fg]_a^b − ∫ f^Δ g^σ)|`
pub fn integration_by_parts_residuals(f: &GridFunction, g: &GridFunction) -> Result<(f64, f64)> {
    if f.dim() != 1 || g.dim() != 1 {
        return Err(Error::Domain("integration by parts expects scalar functions".into()));
    }
    f.check_compatible(g)?;
    let n = f.base().len();
    if f.len() != n || g.len() != n {
        return Err(Error::Domain("integration by parts needs functions on the whole scale".into()));
    }
    let (a, b) = (0, n - 1);
    let boundary = f.row(b)[0] * g.row(b)[0] - f.row(a)[0] * g.row(a)[0];
    let fd = f.delta_derivative(1)?;
    let gd = g.delta_derivative(1)?;
    let integral = |h: GridFunction| h.delta_integral_idx(a, b).map(|v| v[0]);
    let mul = |x: &GridFunction, y: &GridFunction| x.zip_with(y, |p, q| p * q);

    let lhs1 = integral(mul(&f.sigma()?, &gd)?)?;
    let rhs1 = boundary - integral(mul(&fd, g)?)?;
    let lhs2 = integral(mul(f, &gd)?)?;
    let rhs2 = boundary - integral(mul(&fd, &g.sigma()?)?)?;
    Ok(((lhs1 - rhs1).abs(), (lhs2 - rhs2).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(p: &[f64]) -> Arc<TimeScale> {
        Arc::new(TimeScale::new(p.to_vec()).unwrap())
    }

    #[test]
    fn jumps_match_definitions() {
        let s = TimeScale::new(vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.jump_operators(1.0).unwrap(), Jumps { sigma: 2.0, rho: 1.0, mu: 1.0 });
        assert_eq!(s.jump_operators(4.0).unwrap(), Jumps { sigma: 4.0, rho: 2.0, mu: 0.0 });
        let s = TimeScale::new(vec![0.0, 0.5, 0.75, 3.0]).unwrap();
        assert_eq!(s.jump_operators(0.75).unwrap(), Jumps { sigma: 3.0, rho: 0.5, mu: 2.25 });
        assert!(matches!(s.jump_operators(0.7), Err(Error::Domain(_))));
    }

    #[test]
    fn construction_guards() {
        assert!(matches!(TimeScale::new(vec![1.0]), Err(Error::InsufficientPoints { .. })));
        assert!(TimeScale::new(vec![0.0, 0.0, 1.0]).is_err());
        assert!(TimeScale::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn derivatives_on_prefixes() {
        let f = GridFunction::scalar(ts(&[0.0, 1.0, 3.0]), vec![0.0, 2.0, 8.0]).unwrap();
        let d = f.delta_derivative(1).unwrap();
        assert_eq!(d.values(), &[2.0, 3.0]);
        assert_eq!(d.scale().points(), &[0.0, 1.0]);

        let sq = GridFunction::scalar(ts(&[0.0, 1.0, 2.0, 3.0]), vec![0.0, 1.0, 4.0, 9.0]).unwrap();
        assert_eq!(sq.delta_derivative(2).unwrap().values(), &[2.0, 2.0]);

        let c = GridFunction::scalar(ts(&[0.0, 1.0]), vec![5.0, 5.0]).unwrap();
        assert_eq!(c.delta_derivative(1).unwrap().values(), &[0.0]);
        assert!(matches!(c.delta_derivative(2), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn integrals_are_weighted_sums() {
        let f = GridFunction::scalar(ts(&[0.0, 1.0, 3.0]), vec![0.0, 2.0, 8.0]).unwrap();
        assert_eq!(f.delta_integral(0.0, 3.0).unwrap(), vec![4.0]);
        assert_eq!(f.delta_integral(1.0, 3.0).unwrap(), vec![4.0]);
        assert_eq!(f.delta_integral(1.0, 1.0).unwrap(), vec![0.0]);
        assert!(matches!(f.delta_integral(3.0, 0.0), Err(Error::ReversedBounds { .. })));
        assert!(f.delta_integral(0.0, 2.0).is_err());
    }

    #[test]
    fn integration_by_parts_examples() {
        let s = ts(&[0.0, 1.0, 2.0]);
        let f = GridFunction::scalar(s.clone(), vec![1.0, 1.0, 1.0]).unwrap();
        let g = GridFunction::scalar(s, vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(integration_by_parts_residuals(&f, &g).unwrap(), (0.0, 0.0));

        // Hand expansion on {0,1,3}: f=(1,2,0), g=(3,1,4).
        // f^σ g^Δ = (2·(-2), 0·1.5) → ∫ = -4; [fg] = 0 - 3 = -3; f^Δ g = (3, -3) → ∫ = 3 - 6 = -3.
        let s = ts(&[0.0, 1.0, 3.0]);
        let f = GridFunction::scalar(s.clone(), vec![1.0, 2.0, 0.0]).unwrap();
        let g = GridFunction::scalar(s, vec![3.0, 1.0, 4.0]).unwrap();
        let (r1, r2) = integration_by_parts_residuals(&f, &g).unwrap();
        assert!(r1 < 1e-14 && r2 < 1e-14, "{r1} {r2}");
    }

    #[test]
    fn integration_by_parts_rejects_foreign_scales() {
        let f = GridFunction::scalar(ts(&[0.0, 1.0, 2.0]), vec![1.0, 1.0, 1.0]).unwrap();
        let g = GridFunction::scalar(ts(&[0.0, 1.0, 3.0]), vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(integration_by_parts_residuals(&f, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn k_restrictions() {
        let s = TimeScale::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.k_restriction(1).unwrap().points(), &[0.0, 1.0, 2.0]);
        assert_eq!(s.k_restriction(3).unwrap().points(), &[0.0]);
        let two = TimeScale::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(two.k_restriction(2), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn json_forms() {
        let s: TimeScale = serde_json::from_str("[0, 1, 3]").unwrap();
        assert_eq!(s.points(), &[0.0, 1.0, 3.0]);
        let u: TimeScale = serde_json::from_str(r#"{"uniform": {"a": 0, "b": 1, "n": 5}}"#).unwrap();
        assert_eq!(u.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(u.segment_tags().unwrap()[0], SegmentTag::SampledDense { h: 0.25 });
        assert_eq!(serde_json::to_string(&s).unwrap(), "[0.0,1.0,3.0]");
        assert!(serde_json::from_str::<TimeScale>("[1, 0]").is_err());
    }

    #[test]
    fn graininess_delta_on_k2() {
        let s = Arc::new(TimeScale::new(vec![0.0, 1.0, 3.0, 6.0]).unwrap());
        let md = s.mu_delta().unwrap();
        // μ = (1, 2, 3, 0); μ^Δ on {0, 1} = (1, 0.5)
        assert_eq!(md.values(), &[1.0, 0.5]);
    }
}
