//! Dense row-major real matrices and the handful of kernels built on them.
//!
//! Everything here is 64-bit and single-threaded, so results are
//! bit-identical for a fixed input regardless of the caller's threading.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default guard used when dividing by a row norm.
pub const NORM_EPS: f64 = 1e-12;

/// Tolerance on the row sum accepted by [`shannon_entropy_row`].
pub const PROBABILITY_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::contract(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix still has rows
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copies the selected rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self · other`, shapes (n×k)·(k×m).
    pub fn matmul(&self, other: &RealMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim_mismatch("matmul", self, other));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`, shapes (n×k)·(m×k)ᵀ.
    pub fn matmul_transpose(&self, other: &RealMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(dim_mismatch("matmul_transpose", self, other));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`, shapes (k×n)ᵀ·(k×m).
    pub fn transpose_matmul(&self, other: &RealMatrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(dim_mismatch("transpose_matmul", self, other));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for (i, &aki) in a.iter().enumerate() {
                if aki == 0.0 {
                    continue;
                }
                let o = out.row_mut(i);
                for (oj, &bkj) in o.iter_mut().zip(b) {
                    *oj += aki * bkj;
                }
            }
        }
        Ok(out)
    }

    /// Column sums as a vector.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }
}

fn dim_mismatch(op: &str, a: &RealMatrix, b: &RealMatrix) -> Error {
    Error::contract(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Divides each row by `max(‖row‖₂, eps)`.
pub fn row_normalize(m: &RealMatrix, eps: f64) -> RealMatrix {
    debug_assert!(eps > 0.0);
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let denom = l2_norm(row).max(eps);
        row.iter_mut().for_each(|v| *v /= denom);
    }
    out
}

/// Nonsquared Euclidean distances between every row of `a` and every row of
/// `b`, accumulated pair by pair rather than through `‖a‖² + ‖b‖² − 2a·b`.
pub fn pairwise_euclidean(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.cols != b.cols {
        return Err(dim_mismatch("pairwise_euclidean", a, b));
    }
    let mut out = RealMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let x = a.row(i);
        for j in 0..b.rows {
            let sq: f64 = x
                .iter()
                .zip(b.row(j))
                .map(|(p, q)| {
                    let d = p - q;
                    d * d
                })
                .sum();
            out.data[i * b.rows + j] = sq.sqrt();
        }
    }
    Ok(out)
}

/// Softmax of `scale · row` for every row, with the row maximum subtracted
/// before exponentiation.
pub fn stable_softmax_rows(m: &RealMatrix, scale: f64) -> RealMatrix {
    let mut out = m.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i), scale);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64], scale: f64) {
    let max = row
        .iter()
        .map(|&v| scale * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (scale * *v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// `ln Σ exp(scale · row)`, evaluated stably.
pub fn log_sum_exp(row: &[f64], scale: f64) -> f64 {
    let max = row
        .iter()
        .map(|&v| scale * v)
        .fold(f64::NEG_INFINITY, f64::max);
    max + row
        .iter()
        .map(|&v| (scale * v - max).exp())
        .sum::<f64>()
        .ln()
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn shannon_entropy_row(p: &[f64]) -> Result<f64> {
    check_probability_row(p)?;
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    // rounding can leave a degenerate row at -0.0 or a hair below zero
    Ok(h.max(0.0))
}

pub(crate) fn check_probability_row(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::contract("empty probability row"));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::contract(
            "probability row has a negative or non-finite entry",
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
        return Err(Error::contract(format!(
            "probability row sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(RealMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(RealMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn row_normalize_examples() {
        let m = RealMatrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = row_normalize(&m, NORM_EPS);
        assert!(close(n.get(0, 0), 0.6, 1e-15) && close(n.get(0, 1), 0.8, 1e-15));

        let z = RealMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert_eq!(row_normalize(&z, NORM_EPS).data(), &[0.0, 0.0]);

        let ones = RealMatrix::from_rows(&[[1.0; 4]]).unwrap();
        assert!(row_normalize(&ones, NORM_EPS)
            .data()
            .iter()
            .all(|&v| v == 0.5));
    }

    #[test]
    fn pairwise_examples() {
        let a = RealMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(pairwise_euclidean(&a, &a).unwrap().data(), &[0.0]);

        let a = RealMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = RealMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let d = pairwise_euclidean(&a, &b).unwrap();
        assert!(close(d.get(0, 0), std::f64::consts::SQRT_2, 1e-15));

        let a = RealMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let b = RealMatrix::from_rows(&[[3.0, 4.0], [6.0, 8.0]]).unwrap();
        assert_eq!(pairwise_euclidean(&a, &b).unwrap().data(), &[5.0, 10.0]);
    }

    #[test]
    fn pairwise_dimension_mismatch() {
        let a = RealMatrix::zeros(1, 2);
        let b = RealMatrix::zeros(1, 3);
        assert!(matches!(
            pairwise_euclidean(&a, &b),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let m = RealMatrix::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let p = stable_softmax_rows(&m, 1.0);
        assert!(p.data().iter().all(|&v| close(v, 1.0 / 3.0, 1e-15)));

        let m = RealMatrix::from_rows(&[[1000.0, 0.0]]).unwrap();
        let p = stable_softmax_rows(&m, 1.0);
        assert_eq!(p.get(0, 0), 1.0);
        assert!(p.get(0, 1) < 1e-300 && p.is_finite());

        let m = RealMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let p = stable_softmax_rows(&m, 1.0);
        assert!(close(p.get(0, 0), 0.26894142, 1e-8));
        assert!(close(p.get(0, 1), 0.73105858, 1e-8));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(shannon_entropy_row(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let h = shannon_entropy_row(&[0.25; 4]).unwrap();
        assert!(close(h, 4f64.ln(), 1e-15));
        let h = shannon_entropy_row(&[0.73105858, 0.26894142]).unwrap();
        assert!(close(h, 0.58220311, 1e-8));
        assert!(shannon_entropy_row(&[0.5, 0.6]).is_err());
        assert!(shannon_entropy_row(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn matmul_shapes() {
        let a = RealMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = RealMatrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(
            a.matmul_transpose(&b).unwrap().data(),
            &[17.0, 23.0, 39.0, 53.0]
        );
        assert_eq!(
            a.transpose_matmul(&b).unwrap().data(),
            &[26.0, 30.0, 38.0, 44.0]
        );
        assert!(a.matmul(&RealMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, d)
    }

    proptest! {
        #[test]
        fn metric_axioms(x in vec_strategy(3), y in vec_strategy(3), z in vec_strategy(3)) {
            let m = RealMatrix::from_rows(&[x, y, z]).unwrap();
            let d = pairwise_euclidean(&m, &m).unwrap();
            for i in 0..3 {
                prop_assert_eq!(d.get(i, i), 0.0);
                for j in 0..3 {
                    prop_assert!(d.get(i, j) >= 0.0);
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                    for k in 0..3 {
                        prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-9);
                    }
                }
            }
        }

        #[test]
        fn softmax_shift_invariant(row in vec_strategy(5), c in -50.0f64..50.0, s in 0.1f64..10.0) {
            let m = RealMatrix::from_rows(&[row.clone()]).unwrap();
            let shifted = RealMatrix::from_rows(&[row.iter().map(|v| v + c).collect::<Vec<_>>()]).unwrap();
            let p = stable_softmax_rows(&m, s);
            let q = stable_softmax_rows(&shifted, s);
            let sum: f64 = p.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for (a, b) in p.data().iter().zip(q.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!(*a > 0.0 && *a <= 1.0);
            }
        }

        #[test]
        fn normalize_idempotent(row in vec_strategy(4)) {
            prop_assume!(l2_norm(&row) >= NORM_EPS);
            let m = RealMatrix::from_rows(&[row]).unwrap();
            let once = row_normalize(&m, NORM_EPS);
            let twice = row_normalize(&once, NORM_EPS);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn entropy_permutation_invariant(row in vec_strategy(5), rot in 0usize..5) {
            let m = RealMatrix::from_rows(&[row]).unwrap();
            let p = stable_softmax_rows(&m, 1.0);
            let mut q = p.row(0).to_vec();
            q.rotate_left(rot);
            q.swap(0, 4);
            let a = shannon_entropy_row(p.row(0)).unwrap();
            let b = shannon_entropy_row(&q).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a <= 5f64.ln() + 1e-12);
        }
    }
}
