//! Minimal dense-matrix substrate: stable softmax, symmetric
//! eigendecomposition (cyclic Jacobi), and row-space projections.

use crate::error::{AdlError, Result};

/// Row-major dense matrix, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AdlError::InvalidArgument(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AdlError::Numerical("non-finite matrix entry".into()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, o) in dst.iter_mut().zip(orow) {
                    *d += a * o;
                }
            }
        }
        out
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            y[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Eigensystem of a symmetric matrix: orthonormal eigenvector columns and
/// eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvectors: DenseMatrix,
    pub eigenvalues: Vec<f64>,
}

/// Numerically stable softmax. `-inf` logits denote excluded entries.
pub fn stable_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(AdlError::Numerical("softmax logit is NaN or +inf".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(AdlError::Numerical("empty support".into()));
    }
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// log(sum(exp(logits))) with the usual max shift.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    max + sum.ln()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Input is symmetrized as (m + m')/2; asymmetry beyond 1e-8 (relative to the
/// largest entry) is rejected.
pub fn sym_eigen(m: &DenseMatrix) -> Result<EigenDecomposition> {
    if m.rows() != m.cols() {
        return Err(AdlError::InvalidArgument(format!(
            "sym_eigen requires a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let scale = m.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mut a = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            let asym = (m.get(r, c) - m.get(c, r)).abs();
            if asym > 1e-8 * scale {
                return Err(AdlError::Numerical(format!(
                    "matrix not symmetric: |a[{r},{c}] - a[{c},{r}]| = {asym:e}"
                )));
            }
            a[r * n + c] = 0.5 * (m.get(r, c) + m.get(c, r));
        }
    }

    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-15 * norm.max(f64::MIN_POSITIVE);
    let max_sweeps = 100;

    for _sweep in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if (2.0 * off).sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    // Sort eigenpairs by descending eigenvalue.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0f64; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vecs[r * n + new_col] = v[r * n + old_col];
        }
    }

    Ok(EigenDecomposition {
        eigenvectors: DenseMatrix::new(n, n, vecs)?,
        eigenvalues,
    })
}

/// Clamp near-zero negative eigenvalues of a PSD decomposition.
///
/// Negatives above -1e-10 (relative to the largest eigenvalue) clamp to zero;
/// anything below that is treated as a bug in the caller.
pub fn clamp_psd_eigenvalues(eigenvalues: &mut [f64]) -> Result<()> {
    let scale = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for v in eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 * scale {
                return Err(AdlError::Numerical(format!(
                    "eigenvalue {v:e} of a PSD matrix is significantly negative"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Orthogonal projection onto the row space of `a`: P = A' (A A')^+ A.
pub fn row_space_projection(a: &DenseMatrix) -> Result<DenseMatrix> {
    let r = a.rows();
    let d = a.cols();
    // G = A A'  (r x r, symmetric PSD)
    let mut g = vec![0.0f64; r * r];
    for i in 0..r {
        for j in i..r {
            let dot: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
            g[i * r + j] = dot;
            g[j * r + i] = dot;
        }
    }
    let eig = sym_eigen(&DenseMatrix::new(r, r, g)?)?;
    let lambda_max = eig.eigenvalues.first().cloned().unwrap_or(0.0).max(0.0);
    let tol = lambda_max * 1e-12;

    // P = sum_k (A' y_k)(A' y_k)' / lambda_k over nonzero eigenvalues.
    let mut p = vec![0.0f64; d * d];
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= tol || lam <= 0.0 {
            continue;
        }
        let mut u = vec![0.0f64; d];
        for i in 0..r {
            let y = eig.eigenvectors.get(i, k);
            if y == 0.0 {
                continue;
            }
            for (uc, ac) in u.iter_mut().zip(a.row(i)) {
                *uc += y * ac;
            }
        }
        let inv = 1.0 / lam;
        for x in 0..d {
            if u[x] == 0.0 {
                continue;
            }
            let ux = u[x] * inv;
            for y in 0..d {
                p[x * d + y] += ux * u[y];
            }
        }
    }
    DenseMatrix::new(d, d, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn softmax_symmetry() {
        let p = stable_softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariance_prevents_overflow() {
        let p = stable_softmax(&[1000.0, 1000.0, 1000.0]).unwrap();
        for v in p {
            assert_close(v, 1.0 / 3.0, 1e-12);
        }
    }

    #[test]
    fn softmax_direct_evaluation() {
        // exp-normalize of [0, ln 3] by hand: 1/(1+3), 3/(1+3)
        let p = stable_softmax(&[0.0, 3.0f64.ln()]).unwrap();
        assert_close(p[0], 0.25, 1e-14);
        assert_close(p[1], 0.75, 1e-14);
    }

    #[test]
    fn softmax_empty_support_errors() {
        let err = stable_softmax(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap_err();
        assert!(err.to_string().contains("empty support"));
    }

    #[test]
    fn softmax_neg_inf_excludes_entry() {
        let p = stable_softmax(&[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn eigen_diagonal() {
        let m = DenseMatrix::new(3, 3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let e = sym_eigen(&m).unwrap();
        assert_close(e.eigenvalues[0], 3.0, 1e-12);
        assert_close(e.eigenvalues[1], 2.0, 1e-12);
        assert_close(e.eigenvalues[2], 1.0, 1e-12);
        // eigenvectors are a signed permutation of identity columns
        for c in 0..3 {
            let col: Vec<f64> = (0..3).map(|r| e.eigenvectors.get(r, c).abs()).collect();
            let ones = col.iter().filter(|v| (**v - 1.0).abs() < 1e-10).count();
            let zeros = col.iter().filter(|v| v.abs() < 1e-10).count();
            assert_eq!((ones, zeros), (1, 2));
        }
    }

    #[test]
    fn eigen_zero_matrix() {
        let e = sym_eigen(&DenseMatrix::zeros(4, 4)).unwrap();
        assert!(e.eigenvalues.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn eigen_non_square_errors() {
        assert!(sym_eigen(&DenseMatrix::zeros(2, 3)).is_err());
    }

    fn reconstruction_residual(m: &DenseMatrix, e: &EigenDecomposition) -> f64 {
        let n = m.rows();
        let mut rec = DenseMatrix::zeros(n, n);
        for k in 0..n {
            let lam = e.eigenvalues[k];
            for r in 0..n {
                for c in 0..n {
                    rec.data[r * n + c] += lam * e.eigenvectors.get(r, k) * e.eigenvectors.get(c, k);
                }
            }
        }
        let mut diff = 0.0f64;
        for i in 0..n * n {
            let d = rec.data[i] - m.data()[i];
            diff += d * d;
        }
        diff.sqrt() / m.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn eigen_random_8x8_reconstruction() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let n = 8;
        let mut data = vec![0.0f64; n * n];
        for r in 0..n {
            for c in r..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                data[r * n + c] = v;
                data[c * n + r] = v;
            }
        }
        let m = DenseMatrix::new(n, n, data).unwrap();
        let e = sym_eigen(&m).unwrap();
        assert!(reconstruction_residual(&m, &e) < 1e-10);
    }

    #[test]
    fn eigen_large_random_reconstruction() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let n = 64;
        let mut data = vec![0.0f64; n * n];
        for r in 0..n {
            for c in r..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                data[r * n + c] = v;
                data[c * n + r] = v;
            }
        }
        let m = DenseMatrix::new(n, n, data).unwrap();
        let e = sym_eigen(&m).unwrap();
        assert!(reconstruction_residual(&m, &e) <= 1e-8);
        // orthonormality
        let vt = e.eigenvectors.transpose();
        let gram = vt.matmul(&e.eigenvectors);
        for r in 0..n {
            for c in 0..n {
                let want = if r == c { 1.0 } else { 0.0 };
                assert_close(gram.get(r, c), want, 1e-10);
            }
        }
    }

    #[test]
    fn projection_identity() {
        let p = row_space_projection(&DenseMatrix::identity(4)).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert_close(p.get(r, c), want, 1e-10);
            }
        }
    }

    #[test]
    fn projection_single_row() {
        let a = DenseMatrix::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let p = row_space_projection(&a).unwrap();
        let want = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for i in 0..9 {
            assert_close(p.data()[i], want[i], 1e-12);
        }
    }

    #[test]
    fn projection_depends_only_on_support() {
        // diag(5, 0, 2) projects onto the support {0, 2}
        let a = DenseMatrix::new(
            3,
            3,
            vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0],
        )
        .unwrap();
        let p = row_space_projection(&a).unwrap();
        let want = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for i in 0..9 {
            assert_close(p.data()[i], want[i], 1e-10);
        }
    }

    #[test]
    fn projection_zero_matrix() {
        let p = row_space_projection(&DenseMatrix::zeros(2, 3)).unwrap();
        assert!(p.data().iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn softmax_invariant_to_constant_shift(
            base in proptest::collection::vec(-50.0f64..50.0, 1..12),
            // shifts large enough to overflow a naive exp, small enough that
            // rounding of (v + c) itself stays below the 1e-12 budget
            c in -1e3f64..1e3,
        ) {
            let shifted: Vec<f64> = base.iter().map(|v| v + c).collect();
            let p0 = stable_softmax(&base).unwrap();
            let p1 = stable_softmax(&shifted).unwrap();
            let sum: f64 = p1.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (a, b) in p0.iter().zip(&p1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn projection_idempotent_and_symmetric(seed in 0u64..200, rows in 1usize..4, cols in 2usize..6) {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let mut data = vec![0.0f64; rows * cols];
            for v in &mut data {
                // rank-deficient by construction half the time
                *v = if rng.gen_bool(0.5) { rng.gen_range(-1.0..1.0) } else { 0.0 };
            }
            let a = DenseMatrix::new(rows, cols, data).unwrap();
            let p = row_space_projection(&a).unwrap();
            let pp = p.matmul(&p);
            for r in 0..cols {
                for c in 0..cols {
                    prop_assert!((p.get(r, c) - p.get(c, r)).abs() < 1e-8);
                    prop_assert!((pp.get(r, c) - p.get(r, c)).abs() < 1e-8);
                }
            }
            // P a' = a'
            let at = a.transpose();
            let pat = p.matmul(&at);
            for i in 0..cols * rows {
                prop_assert!((pat.data()[i] - at.data()[i]).abs() < 1e-8);
            }
        }
    }
}
