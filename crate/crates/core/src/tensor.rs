//! Dense 64-bit vectors and matrices.
//!
//! Every reduction sums in ascending index order so that results are
//! bitwise reproducible; the momentum-equivalence and collapse checks in
//! the test suite depend on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat vector of `f64`. Houses parameters, gradients and estimator deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec64(Vec<f64>);

impl Vec64 {
    pub fn new(data: Vec<f64>) -> Self {
        Vec64(data)
    }

    pub fn zeros(len: usize) -> Self {
        Vec64(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Fails with a numeric error when any entry is NaN or infinite.
    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context,
                iteration: None,
            })
        }
    }

    pub fn dot(&self, other: &Vec64) -> Result<f64> {
        ensure_len("dot", self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).fold(0.0, |acc, (a, b)| acc + a * b))
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc + v * v)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Vec64 {
        Vec64(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn sub(&self, other: &Vec64) -> Result<Vec64> {
        ensure_len("sub", self.len(), other.len())?;
        Ok(Vec64(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn add(&self, other: &Vec64) -> Result<Vec64> {
        ensure_len("add", self.len(), other.len())?;
        Ok(Vec64(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    /// `self += alpha * x`, in place.
    pub fn axpy_in_place(&mut self, alpha: f64, x: &Vec64) -> Result<()> {
        ensure_len("axpy", x.len(), self.len())?;
        for (y, xv) in self.0.iter_mut().zip(&x.0) {
            *y += alpha * xv;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Vec64) -> Result<f64> {
        ensure_len("max_abs_diff", self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs())))
    }
}

impl From<Vec<f64>> for Vec64 {
    fn from(data: Vec<f64>) -> Self {
        Vec64(data)
    }
}

impl std::ops::Index<usize> for Vec64 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vec64 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Mat64 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "Mat64::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Mat64 { data, rows, cols })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat64::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure_len("Mat64::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Mat64::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Returns `y + alpha * x`.
pub fn axpy(alpha: f64, x: &Vec64, y: &Vec64) -> Result<Vec64> {
    let mut out = y.clone();
    out.axpy_in_place(alpha, x)?;
    Ok(out)
}

/// Matrix-vector product.
pub fn matvec(a: &Mat64, x: &Vec64) -> Result<Vec64> {
    ensure_len("matvec", a.cols, x.len())?;
    let mut out = vec![0.0; a.rows];
    matvec_into(&a.data, a.rows, a.cols, x.as_slice(), &mut out);
    Ok(Vec64(out))
}

/// `out[r] = sum_c a[r * cols + c] * x[c]`, summed left to right.
///
/// Zero entries of `x` are skipped; with finite `a` that leaves every
/// partial sum bitwise unchanged.
pub(crate) fn matvec_into(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    let nz = nonzero_indices(x);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &a[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for &i in &nz {
            acc += row[i] * x[i];
        }
        *o = acc;
    }
}

/// Positions of the nonzero entries of `x`, ascending.
pub(crate) fn nonzero_indices(x: &[f64]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Elementwise mean, accumulated in list order.
pub fn reduce_mean(vs: &[Vec64]) -> Result<Vec64> {
    let first = vs.first().ok_or(Error::EmptyInput("reduce_mean"))?;
    let mut sum = Vec64::zeros(first.len());
    for v in vs {
        ensure_len("reduce_mean", first.len(), v.len())?;
        for (s, x) in sum.0.iter_mut().zip(&v.0) {
            *s += x;
        }
    }
    let k = vs.len() as f64;
    for s in sum.0.iter_mut() {
        *s /= k;
    }
    Ok(sum)
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vec64 {
        Vec64::new(xs.to_vec())
    }

    #[test]
    fn axpy_examples() {
        assert_eq!(axpy(0.0, &v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(), v(&[3.0, 4.0]));
        assert_eq!(axpy(1.0, &v(&[1.0, 2.0]), &v(&[0.0, 0.0])).unwrap(), v(&[1.0, 2.0]));
        assert_eq!(axpy(2.0, &v(&[1.0, -1.0]), &v(&[1.0, 1.0])).unwrap(), v(&[3.0, -1.0]));
    }

    #[test]
    fn axpy_length_mismatch() {
        assert!(matches!(
            axpy(1.0, &v(&[1.0]), &v(&[1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn matvec_examples() {
        assert_eq!(matvec(&Mat64::identity(2), &v(&[5.0, 7.0])).unwrap(), v(&[5.0, 7.0]));
        let a = Mat64::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&a, &v(&[1.0, 1.0])).unwrap(), v(&[3.0, 7.0]));
        assert_eq!(matvec(&Mat64::zeros(2, 2), &v(&[9.0, 9.0])).unwrap(), v(&[0.0, 0.0]));
        assert!(matvec(&a, &v(&[1.0])).is_err());
    }

    #[test]
    fn reduce_mean_examples() {
        assert_eq!(reduce_mean(&[v(&[2.0, 4.0])]).unwrap(), v(&[2.0, 4.0]));
        assert_eq!(reduce_mean(&[v(&[0.0, 0.0]), v(&[2.0, 2.0])]).unwrap(), v(&[1.0, 1.0]));
        assert_eq!(
            reduce_mean(&[v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[2.0, 2.0])]).unwrap(),
            v(&[1.0, 1.0])
        );
        assert!(matches!(reduce_mean(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mat_new_checks_shape() {
        assert!(Mat64::new(2, 3, vec![0.0; 5]).is_err());
    }

    fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, len)
    }

    proptest! {
        #[test]
        fn axpy_zero_is_bitwise_identity(x in finite_vec(8), y in finite_vec(8)) {
            let out = axpy(0.0, &Vec64::new(x), &Vec64::new(y.clone())).unwrap();
            let same = out.as_slice().iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }

        #[test]
        fn mean_of_copies(x in finite_vec(6), k in 1usize..12) {
            let v = Vec64::new(x);
            let m = reduce_mean(&vec![v.clone(); k]).unwrap();
            for (a, b) in m.as_slice().iter().zip(v.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-15 * b.abs());
            }
        }

        #[test]
        fn matvec_is_linear(a in finite_vec(100), x in finite_vec(10), y in finite_vec(10)) {
            let a = Mat64::new(10, 10, a).unwrap();
            let (x, y) = (Vec64::new(x), Vec64::new(y));
            let lhs = matvec(&a, &x.add(&y).unwrap()).unwrap();
            let rhs = matvec(&a, &x).unwrap().add(&matvec(&a, &y).unwrap()).unwrap();
            // Relative to the magnitude of the summed terms, not the (possibly
            // cancelling) result.
            let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()))
                * x.as_slice().iter().chain(y.as_slice()).fold(0.0f64, |m, v| m.max(v.abs()))
                * 10.0;
            for (l, r) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((l - r).abs() <= 1e-12 * scale.max(1.0));
            }
        }

        #[test]
        fn deterministic(a in finite_vec(12), x in finite_vec(4)) {
            let a = Mat64::new(3, 4, a).unwrap();
            let x = Vec64::new(x);
            let r1 = matvec(&a, &x).unwrap();
            let r2 = matvec(&a, &x).unwrap();
            prop_assert!(r1.as_slice().iter().zip(r2.as_slice()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
