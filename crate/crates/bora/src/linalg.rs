//! Dense row-major matrices and the small set of numerical kernels the
//! adapter algebra is built on: multiplication, Frobenius norm, a one-sided
//! Jacobi SVD, and threshold-based numerical rank.
//!
//! Everything is `f64`. Values are immutable after construction and all
//! operations are pure functions with a fixed summation order, so results
//! are bit-stable across runs on one platform.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data. Length must equal `rows * cols`
    /// and both dimensions must be at least 1.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max-abs entrywise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot compare {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Standard matrix product with a fixed row-major summation order
/// (inner loop over the shared dimension).
pub fn matmul(lhs: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    if lhs.cols != rhs.rows {
        return Err(Error::Shape(format!(
            "matmul shapes incompatible: {}x{} times {}x{}",
            lhs.rows, lhs.cols, rhs.rows, rhs.cols
        )));
    }
    let mut out = DenseMatrix::zeros(lhs.rows, rhs.cols);
    for i in 0..lhs.rows {
        for k in 0..lhs.cols {
            let a = lhs.data[i * lhs.cols + k];
            if a == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
            for j in 0..rhs.cols {
                out_row[j] += a * rhs_row[j];
            }
        }
    }
    Ok(out)
}

/// Matrix-vector product.
pub fn matvec(m: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if m.cols != x.len() {
        return Err(Error::Shape(format!(
            "matvec shapes incompatible: {}x{} times vector of length {}",
            m.rows,
            m.cols,
            x.len()
        )));
    }
    let mut y = vec![0.0; m.rows];
    for i in 0..m.rows {
        let row = &m.data[i * m.cols..(i + 1) * m.cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        y[i] = acc;
    }
    Ok(y)
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Singular value decomposition `input = U diag(s) V^T` in thin form:
/// `U` is rows x k, `V` is cols x k with k = min(rows, cols), both
/// column-orthonormal, and `s` is nonincreasing and nonnegative.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub left_vectors: DenseMatrix,
    pub right_vectors: DenseMatrix,
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 60;

/// One-sided Jacobi SVD. Rotates column pairs until every pair is
/// orthogonal to relative tolerance 1e-12; fails after 60 sweeps.
///
/// Chosen for its high relative accuracy on small singular values, which the
/// fixed-threshold rank counting depends on.
pub fn svd(input: &DenseMatrix) -> Result<SvdResult> {
    if !input.is_finite() {
        return Err(Error::Numeric("svd input contains non-finite entries".into()));
    }
    if input.rows >= input.cols {
        svd_tall(input)
    } else {
        // Work on the transpose and swap the factor roles.
        let r = svd_tall(&input.transpose())?;
        Ok(SvdResult {
            singular_values: r.singular_values,
            left_vectors: r.right_vectors,
            right_vectors: r.left_vectors,
        })
    }
}

fn svd_tall(input: &DenseMatrix) -> Result<SvdResult> {
    let m = input.rows;
    let n = input.cols;
    // Column-major working copy of the input; rotations act on columns.
    let mut u: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| input.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    let mut worst = 0.0f64;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&u[p], &u[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for i in 0..m {
                        a += cp[i] * cp[i];
                        b += cq[i] * cq[i];
                        g += cp[i] * cq[i];
                    }
                    (a, b, g)
                };
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 {
                    continue;
                }
                let off = gamma.abs() / scale;
                max_off = max_off.max(off);
                if off <= JACOBI_TOL {
                    continue;
                }
                // Classic Jacobi rotation annihilating the (p,q) inner product.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u[p][i];
                    let uq = u[q][i];
                    u[p][i] = c * up - s * uq;
                    u[q][i] = s * up + c * uq;
                }
                for i in 0..n {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        worst = max_off;
        if max_off <= JACOBI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "jacobi svd did not converge after {JACOBI_MAX_SWEEPS} sweeps, residual {worst:.3e}"
        )));
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = u
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());

    let mut singular_values = Vec::with_capacity(n);
    let mut left = DenseMatrix::zeros(m, n);
    let mut right = DenseMatrix::zeros(n, n);
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    let null_tol = max_norm * 1e-300 + f64::MIN_POSITIVE;

    let mut null_cols = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        singular_values.push(norms[j]);
        for i in 0..n {
            right.set(i, slot, v[j][i]);
        }
        if norms[j] > null_tol {
            for i in 0..m {
                left.set(i, slot, u[j][i] / norms[j]);
            }
        } else {
            null_cols.push(slot);
        }
    }
    if !null_cols.is_empty() {
        complete_orthonormal(&mut left, &null_cols);
    }

    Ok(SvdResult {
        singular_values,
        left_vectors: left,
        right_vectors: right,
    })
}

/// Fill the given columns of `left` with unit vectors orthogonal to every
/// other column, via Gram-Schmidt against the standard basis.
fn complete_orthonormal(left: &mut DenseMatrix, slots: &[usize]) {
    let m = left.rows();
    let k = left.cols();
    let mut next_basis = 0usize;
    for &slot in slots {
        loop {
            assert!(next_basis < m, "ran out of basis vectors during completion");
            let mut cand = vec![0.0; m];
            cand[next_basis] = 1.0;
            next_basis += 1;
            // Two rounds of orthogonalization for stability.
            for _ in 0..2 {
                // Not-yet-filled slots are zero columns; projecting on them is a no-op.
                for c in 0..k {
                    if c == slot {
                        continue;
                    }
                    let mut dot = 0.0;
                    for i in 0..m {
                        dot += cand[i] * left.get(i, c);
                    }
                    for i in 0..m {
                        cand[i] -= dot * left.get(i, c);
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for i in 0..m {
                    left.set(i, slot, cand[i] / norm);
                }
                break;
            }
        }
    }
}

/// Number of singular values strictly greater than `threshold`.
pub fn numerical_rank(input: &DenseMatrix, threshold: f64) -> Result<usize> {
    if threshold <= 0.0 {
        return Err(Error::Argument(format!(
            "rank threshold must be positive, got {threshold}"
        )));
    }
    let s = svd(input)?;
    Ok(s.singular_values.iter().filter(|&&v| v > threshold).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform_stream, Seed};
    use proptest::prelude::*;

    fn random_matrix(seed: u64, rows: usize, cols: usize) -> DenseMatrix {
        let data = uniform_stream(Seed::new(seed), rows * cols, -1.0, 1.0).unwrap();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let m = random_matrix(5, 3, 3);
        let i3 = DenseMatrix::identity(3);
        let p = matmul(&i3, &m).unwrap();
        assert_eq!(p, m);
    }

    #[test]
    fn matmul_hand_computed() {
        let a = DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseMatrix::from_vec(2, 1, vec![5.0, 6.0]).unwrap();
        let p = matmul(&a, &b).unwrap();
        assert_eq!(p.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random_matrix(11, 7, 5);
        let b = random_matrix(13, 5, 3);
        let p = matmul(&a, &b).unwrap();
        let q = naive_matmul(&a, &b);
        assert!(p.max_abs_diff(&q).unwrap() < 1e-13);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = random_matrix(1, 2, 3);
        let b = random_matrix(2, 4, 2);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("4x2"), "{err}");
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm(&DenseMatrix::zeros(3, 4)), 0.0);
        let m = DenseMatrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(frobenius_norm(&m), 5.0);
        let r = random_matrix(17, 6, 6);
        let direct: f64 = r.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((frobenius_norm(&r) - direct).abs() <= 1e-12 * direct);
    }

    fn check_svd_invariants(m: &DenseMatrix) {
        let r = svd(m).unwrap();
        let k = m.rows().min(m.cols());
        assert_eq!(r.singular_values.len(), k);
        for w in r.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(r.singular_values.iter().all(|&s| s >= 0.0));

        // Reconstruction.
        let mut us = r.left_vectors.clone();
        for j in 0..k {
            for i in 0..m.rows() {
                let v = us.get(i, j) * r.singular_values[j];
                us.set(i, j, v);
            }
        }
        let rec = matmul(&us, &r.right_vectors.transpose()).unwrap();
        let scale = frobenius_norm(m).max(1e-300);
        assert!(rec.max_abs_diff(m).unwrap() <= 1e-9 * scale);

        // Orthonormality.
        for (label, f) in [("U", &r.left_vectors), ("V", &r.right_vectors)] {
            let g = matmul(&f.transpose(), f).unwrap();
            let diff = g.max_abs_diff(&DenseMatrix::identity(k)).unwrap();
            assert!(diff <= 1e-9, "{label}^T {label} deviates by {diff}");
        }
    }

    #[test]
    fn svd_diagonal() {
        let mut m = DenseMatrix::zeros(3, 3);
        m.set(0, 0, 3.0);
        m.set(1, 1, 2.0);
        m.set(2, 2, 1.0);
        let r = svd(&m).unwrap();
        assert!((r.singular_values[0] - 3.0).abs() < 1e-12);
        assert!((r.singular_values[1] - 2.0).abs() < 1e-12);
        assert!((r.singular_values[2] - 1.0).abs() < 1e-12);
        check_svd_invariants(&m);
    }

    #[test]
    fn svd_rank_one() {
        let u = uniform_stream(Seed::new(3), 6, -1.0, 1.0).unwrap();
        let v = uniform_stream(Seed::new(4), 4, -1.0, 1.0).unwrap();
        let mut m = DenseMatrix::zeros(6, 4);
        for i in 0..6 {
            for j in 0..4 {
                m.set(i, j, u[i] * v[j]);
            }
        }
        let r = svd(&m).unwrap();
        let tol = 1e-9 * frobenius_norm(&m);
        let big = r.singular_values.iter().filter(|&&s| s > tol).count();
        assert_eq!(big, 1);
        check_svd_invariants(&m);
    }

    // Eigenvalues of a symmetric 3x3 via the characteristic polynomial,
    // independent of the Jacobi path.
    fn sym3_eigenvalues(g: &DenseMatrix) -> Vec<f64> {
        assert_eq!(g.rows(), 3);
        let (a, b, c) = (g.get(0, 0), g.get(0, 1), g.get(0, 2));
        let (d, e) = (g.get(1, 1), g.get(1, 2));
        let f = g.get(2, 2);
        // det(G - xI) = -x^3 + p2 x^2 + p1 x + p0
        let p2 = a + d + f;
        let p1 = -(a * d + a * f + d * f - b * b - c * c - e * e);
        let p0 = a * d * f + 2.0 * b * c * e - a * e * e - d * c * c - f * b * b;
        // Bisection on each root bracket using sign changes of the cubic.
        let poly = |x: f64| -x * x * x + p2 * x * x + p1 * x + p0;
        let bound = 1.0 + a.abs() + b.abs() + c.abs() + d.abs() + e.abs() + f.abs();
        let mut roots = Vec::new();
        let steps = 20000;
        let mut prev_x = -bound;
        let mut prev_y = poly(prev_x);
        for i in 1..=steps {
            let x = -bound + 2.0 * bound * (i as f64) / (steps as f64);
            let y = poly(x);
            if prev_y == 0.0 {
                roots.push(prev_x);
            } else if prev_y.signum() != y.signum() {
                let (mut lo, mut hi) = (prev_x, x);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if poly(lo).signum() == poly(mid).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev_x = x;
            prev_y = y;
        }
        roots.sort_by(|x, y| y.partial_cmp(x).unwrap());
        roots
    }

    #[test]
    fn svd_matches_eigen_oracle_small() {
        // s_i^2 of M are the eigenvalues of M^T M; check on 3x3 where the
        // characteristic polynomial is tractable.
        let m = random_matrix(21, 3, 3);
        let g = matmul(&m.transpose(), &m).unwrap();
        let eigs = sym3_eigenvalues(&g);
        let r = svd(&m).unwrap();
        assert_eq!(eigs.len(), 3);
        for (s, lambda) in r.singular_values.iter().zip(&eigs) {
            assert!((s * s - lambda).abs() < 1e-7 * (1.0 + lambda.abs()));
        }
    }

    #[test]
    fn svd_squared_values_sum_matches_gram_trace() {
        // Larger instance: sum of s_i^2 equals trace(M^T M) exactly.
        let m = random_matrix(22, 12, 9);
        let r = svd(&m).unwrap();
        let sum_sq: f64 = r.singular_values.iter().map(|s| s * s).sum();
        let trace: f64 = (0..9)
            .map(|j| (0..12).map(|i| m.get(i, j) * m.get(i, j)).sum::<f64>())
            .sum();
        assert!((sum_sq - trace).abs() <= 1e-10 * trace);
    }

    #[test]
    fn svd_invariants_many_shapes() {
        for (seed, rows, cols) in [
            (1u64, 1, 1),
            (2, 4, 4),
            (3, 9, 5),
            (4, 5, 9),
            (5, 64, 64),
            (6, 64, 8),
            (7, 8, 64),
        ] {
            check_svd_invariants(&random_matrix(seed, rows, cols));
        }
        check_svd_invariants(&DenseMatrix::zeros(5, 7));
    }

    #[test]
    fn rank_cases() {
        assert_eq!(numerical_rank(&DenseMatrix::zeros(4, 4), 0.005).unwrap(), 0);
        let mut m = DenseMatrix::zeros(4, 4);
        for (i, v) in [3.0, 2.0, 1.0, 0.001].iter().enumerate() {
            m.set(i, i, *v);
        }
        assert_eq!(numerical_rank(&m, 0.005).unwrap(), 3);

        let b = random_matrix(31, 64, 8);
        let a = random_matrix(32, 8, 64);
        let p = matmul(&b, &a).unwrap();
        assert_eq!(numerical_rank(&p, 1e-8).unwrap(), 8);
    }

    #[test]
    fn rank_rejects_nonpositive_threshold() {
        assert!(numerical_rank(&DenseMatrix::identity(2), 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn matmul_associative(seed in 1u64..1000) {
            let a = random_matrix(seed, 6, 4);
            let b = random_matrix(seed + 1000, 4, 5);
            let c = random_matrix(seed + 2000, 5, 3);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = frobenius_norm(&left).max(1e-300);
            prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-10 * scale);
        }

        #[test]
        fn rank_monotone_in_threshold(seed in 1u64..500, t1 in 1e-6f64..1.0, t2 in 1e-6f64..1.0) {
            let m = random_matrix(seed, 8, 6);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(numerical_rank(&m, lo).unwrap() >= numerical_rank(&m, hi).unwrap());
        }

        #[test]
        fn svd_invariants_random(seed in 1u64..200) {
            check_svd_invariants(&random_matrix(seed, 10, 7));
        }
    }
}
