//! B-spline knot vectors and basis matrices over the age grid.
//!
//! Basis values come from the Cox–de Boor recursion in its triangular
//! (non-zero functions only) form. Spans are half-open `[t_i, t_{i+1})`
//! except the last one, which is closed so the right boundary age is a
//! valid evaluation point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of interior knots for a 31-year lifecycle.
pub const DEFAULT_INTERIOR_KNOTS: usize = 6;
/// Cubic splines unless configured otherwise.
pub const DEFAULT_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Validates a clamped knot vector: non-decreasing, finite, boundary
    /// knots repeated exactly `degree + 1` times and at least one basis function.
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Domain("knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("knots must be non-decreasing".into()));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::Validation(format!(
                "{} knots cannot clamp a degree-{degree} spline",
                knots.len()
            )));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if last <= first {
            return Err(Error::Domain("knot range is empty".into()));
        }
        let lead = knots.iter().take_while(|&&k| k == first).count();
        let trail = knots.iter().rev().take_while(|&&k| k == last).count();
        if lead != degree + 1 || trail != degree + 1 {
            return Err(Error::Validation(format!(
                "boundary knots must repeat exactly {} times (got {lead} and {trail})",
                degree + 1
            )));
        }
        Ok(Self { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `len(knots) - degree - 1`.
    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Index `i` of the span `[t_i, t_{i+1})` holding `x`; the right boundary
    /// maps to the last non-degenerate span.
    fn find_span(&self, x: f64) -> usize {
        let last = self.n_basis() - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // Largest i in [degree, last] with knots[i] <= x.
        let mut lo = self.degree;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Writes the `degree + 1` non-zero basis values at `x` into `out` and
    /// returns the index of the first of them.
    fn nonzero_basis(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        let span = self.find_span(x);
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        span - p
    }

    /// All `K` basis values at one point.
    pub fn evaluate(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() || x < self.lower() || x > self.upper() {
            return Err(Error::Domain(format!(
                "age {x} outside knot range [{}, {}]",
                self.lower(),
                self.upper()
            )));
        }
        let mut local = vec![0.0; self.degree + 1];
        let first = self.nonzero_basis(x, &mut local);
        let mut row = vec![0.0; self.n_basis()];
        row[first..first + local.len()].copy_from_slice(&local);
        Ok(row)
    }
}

/// Clamped knot vector with `n_interior` equally spaced interior knots.
pub fn make_uniform_knots(
    age_min: f64,
    age_max: f64,
    n_interior: usize,
    degree: usize,
) -> Result<KnotVector> {
    if !age_min.is_finite() || !age_max.is_finite() {
        return Err(Error::Domain("knot bounds must be finite".into()));
    }
    if age_max <= age_min {
        return Err(Error::Domain(format!(
            "age_max ({age_max}) must exceed age_min ({age_min})"
        )));
    }
    let width = (age_max - age_min) / (n_interior + 1) as f64;
    let mut knots = Vec::with_capacity(n_interior + 2 * (degree + 1));
    knots.extend(std::iter::repeat_n(age_min, degree + 1));
    knots.extend((1..=n_interior).map(|i| age_min + width * i as f64));
    knots.extend(std::iter::repeat_n(age_max, degree + 1));
    KnotVector::new(degree, knots)
}

/// Basis values on an age grid, stored row-major (one row per age).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMatrix {
    ages: Vec<f64>,
    degree: usize,
    n_basis: usize,
    values: Vec<f64>,
}

impl BasisMatrix {
    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Basis row for the `t`-th grid age (0-based).
    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_basis..(t + 1) * self.n_basis]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.n_basis + k]
    }
}

pub fn basis_matrix(kv: &KnotVector, ages: &[f64]) -> Result<BasisMatrix> {
    let n_basis = kv.n_basis();
    let mut values = Vec::with_capacity(ages.len() * n_basis);
    for &a in ages {
        values.extend(kv.evaluate(a)?);
    }
    Ok(BasisMatrix {
        ages: ages.to_vec(),
        degree: kv.degree(),
        n_basis,
        values,
    })
}

/// Basis over the integer ages `1..=n_ages`.
pub fn age_grid_basis(kv: &KnotVector, n_ages: usize) -> Result<BasisMatrix> {
    let ages: Vec<f64> = (1..=n_ages).map(|a| a as f64).collect();
    basis_matrix(kv, &ages)
}

/// `intercept + B · weights` at every grid age.
pub fn curve(bm: &BasisMatrix, intercept: f64, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != bm.n_basis {
        return Err(Error::shape(bm.n_basis, weights.len()));
    }
    Ok((0..bm.n_ages())
        .map(|t| intercept + dot(bm.row(t), weights))
        .collect())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook recursive definition, used as an independent oracle.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64, last: usize) -> f64 {
        if p == 0 {
            let (a, b) = (knots[i], knots[i + 1]);
            let closed = i == last && x == b;
            return if (a <= x && x < b) || (closed && a < b) { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x, last);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x, last);
        }
        v
    }

    #[test]
    fn uniform_knot_examples() {
        let kv = make_uniform_knots(1.0, 31.0, 0, 0).unwrap();
        assert_eq!(kv.knots(), &[1.0, 31.0]);
        assert_eq!(kv.n_basis(), 1);

        let kv = make_uniform_knots(1.0, 31.0, 6, 3).unwrap();
        assert_eq!(kv.n_basis(), 10);

        let kv = make_uniform_knots(0.0, 1.0, 1, 1).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.5, 1.0, 1.0]);
        assert_eq!(kv.n_basis(), 3);
    }

    #[test]
    fn uniform_knot_errors() {
        assert!(matches!(make_uniform_knots(2.0, 1.0, 3, 3), Err(Error::Domain(_))));
        assert!(matches!(make_uniform_knots(1.0, 1.0, 3, 3), Err(Error::Domain(_))));
        assert!(matches!(make_uniform_knots(f64::NAN, 1.0, 3, 3), Err(Error::Domain(_))));
        assert!(make_uniform_knots(0.0, f64::INFINITY, 3, 3).is_err());
    }

    #[test]
    fn knot_vector_rejects_bad_multiplicity() {
        assert!(KnotVector::new(2, vec![0.0, 0.0, 1.0, 1.0, 1.0]).is_err());
        assert!(KnotVector::new(1, vec![0.0, 0.0, 0.7, 0.3, 1.0, 1.0]).is_err());
    }

    #[test]
    fn indicator_basis() {
        let kv = KnotVector::new(0, vec![0.0, 1.0, 2.0]).unwrap();
        let bm = basis_matrix(&kv, &[0.5]).unwrap();
        assert_eq!(bm.row(0), &[1.0, 0.0]);
        let bm = basis_matrix(&kv, &[2.0]).unwrap();
        assert_eq!(bm.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn bezier_midpoint() {
        let kv = make_uniform_knots(0.0, 4.0, 0, 3).unwrap();
        let bm = basis_matrix(&kv, &[2.0]).unwrap();
        // Bernstein polynomials at u = 0.5
        let u: f64 = 0.5;
        let oracle = [
            (1.0 - u).powi(3),
            3.0 * u * (1.0 - u).powi(2),
            3.0 * u * u * (1.0 - u),
            u.powi(3),
        ];
        for (a, b) in bm.row(0).iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(oracle, [0.125, 0.375, 0.375, 0.125]);
    }

    #[test]
    fn curve_examples() {
        let kv = make_uniform_knots(1.0, 31.0, 6, 3).unwrap();
        let bm = age_grid_basis(&kv, 31).unwrap();
        let c = curve(&bm, 2.5, &[0.0; 10]).unwrap();
        assert!(c.iter().all(|&v| v == 2.5));
        let c = curve(&bm, 0.0, &[1.0; 10]).unwrap();
        assert!(c.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let kv = make_uniform_knots(0.0, 4.0, 0, 3).unwrap();
        let bm = basis_matrix(&kv, &[2.0]).unwrap();
        let c = curve(&bm, 0.0, &[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((c[0] - 0.375).abs() < 1e-12);

        assert!(matches!(curve(&bm, 0.0, &[1.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn out_of_range_age_is_domain_error() {
        let kv = make_uniform_knots(1.0, 31.0, 6, 3).unwrap();
        assert!(matches!(basis_matrix(&kv, &[0.5]), Err(Error::Domain(_))));
        assert!(matches!(basis_matrix(&kv, &[31.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn right_endpoint_is_last_basis() {
        for p in 0..=3 {
            let kv = make_uniform_knots(1.0, 31.0, 5, p).unwrap();
            let row = kv.evaluate(31.0).unwrap();
            assert_eq!(*row.last().unwrap(), 1.0);
            assert!(row[..row.len() - 1].iter().all(|&v| v == 0.0));
        }
    }

    proptest! {
        #[test]
        fn matches_recursive_definition(
            degree in 0usize..4,
            n_interior in 0usize..9,
            u in 0.0f64..=1.0,
        ) {
            let kv = make_uniform_knots(-1.0, 3.0, n_interior, degree).unwrap();
            let x = -1.0 + 4.0 * u;
            let row = kv.evaluate(x).unwrap();
            // the degree-0 level of the recursion closes the last non-empty span
            let knots = kv.knots();
            let last_span = knots.len() - 2 - degree;
            for (k, v) in row.iter().enumerate() {
                let oracle = cox_de_boor(knots, k, degree, x, last_span);
                prop_assert!((v - oracle).abs() < 1e-12, "k={k} {v} vs {oracle}");
            }
        }

        #[test]
        fn partition_and_local_support(
            degree in 0usize..4,
            n_interior in 0usize..12,
            u in 0.0f64..=1.0,
        ) {
            let kv = make_uniform_knots(1.0, 31.0, n_interior, degree).unwrap();
            let x = 1.0 + 30.0 * u;
            let row = kv.evaluate(x).unwrap();
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (k, &v) in row.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&v));
                let (lo, hi) = (kv.knots()[k], kv.knots()[k + degree + 1]);
                if x < lo || x > hi {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }

        #[test]
        fn curve_is_linear(
            u in proptest::collection::vec(-5.0f64..5.0, 10),
            v in proptest::collection::vec(-5.0f64..5.0, 10),
        ) {
            let kv = make_uniform_knots(1.0, 31.0, 6, 3).unwrap();
            let bm = age_grid_basis(&kv, 31).unwrap();
            let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
            let cu = curve(&bm, 0.0, &u).unwrap();
            let cv = curve(&bm, 0.0, &v).unwrap();
            let cs = curve(&bm, 0.0, &sum).unwrap();
            for t in 0..31 {
                prop_assert!((cs[t] - cu[t] - cv[t]).abs() < 1e-12);
            }
        }
    }
}
