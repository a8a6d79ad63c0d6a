//! Dense matrix primitives: projectors, the Moore–Penrose inverse, Kronecker
//! products, row-stacking vectorization and SPD factorizations.
//!
//! Vectorization is row-stacking throughout the crate: `vec_t(A)` lists the
//! rows of `A` in order, so that `vec_t(A M B') = kron(A, B) vec_t(M)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{GcmError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold on singular values for full column rank.
pub const RANK_TOL: f64 = 1e-10;
/// Relative threshold on eigenvalues for positive definiteness.
pub const SPD_TOL: f64 = 1e-10;
/// Relative symmetry tolerance for [`SpdMatrix`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative singular value cutoff used by [`moore_penrose`].
pub const PINV_TOL: f64 = 1e-12;

/// Largest absolute entry, 0 for an empty matrix.
pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GcmError::NonFinite(what.to_string()))
    }
}

/// `(A + A') / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Symmetric positive definite matrix with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: Matrix,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    /// Validates symmetry and strict positive definiteness at working precision.
    pub fn new(matrix: Matrix) -> Result<Self> {
        Self::named(matrix, "matrix")
    }

    /// Same as [`SpdMatrix::new`], with `what` naming the matrix in errors.
    pub fn named(matrix: Matrix, what: &str) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(GcmError::DimensionMismatch(format!(
                "{what} must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        ensure_finite(&matrix, what)?;
        let scale = max_abs(&matrix);
        if scale == 0.0 {
            return Err(GcmError::not_spd(format!("{what} is zero")));
        }
        let asym = max_abs(&(&matrix - matrix.transpose()));
        if asym > SYMMETRY_TOL * scale {
            return Err(GcmError::not_spd(format!(
                "{what} is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let eig = SymmetricEigen::new(symmetrize(&matrix)).eigenvalues;
        let lo = eig.min();
        let hi = eig.max();
        if !(hi > 0.0 && lo > SPD_TOL * hi) {
            return Err(GcmError::not_spd(format!(
                "{what} has eigenvalue range [{lo:.3e}, {hi:.3e}]"
            )));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| GcmError::not_spd(format!("{what}: Cholesky factorization failed")))?;
        Ok(Self { matrix, chol })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Lower-triangular Cholesky factor `L` with `L L' = A`.
    pub fn cholesky_lower(&self) -> Matrix {
        self.chol.l()
    }

    /// Solves `A X = B` by the cached factorization.
    pub fn solve(&self, rhs: &Matrix) -> Matrix {
        self.chol.solve(rhs)
    }

    /// Explicit inverse, for callers whose contract returns the inverse itself.
    pub fn inverse(&self) -> Matrix {
        self.chol.inverse()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

/// Checks that `a` has full column rank at [`RANK_TOL`].
pub fn check_full_column_rank(a: &Matrix, what: &str) -> Result<()> {
    ensure_finite(a, what)?;
    let (n, k) = a.shape();
    if k == 0 || n < k {
        return Err(GcmError::RankDeficient {
            what: format!("{what} is {n}x{k}"),
            ratio: 0.0,
        });
    }
    let sv = singular_values(a);
    let (hi, lo) = (sv[0], sv[k - 1]);
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if ratio > RANK_TOL {
        Ok(())
    } else {
        Err(GcmError::RankDeficient {
            what: what.to_string(),
            ratio,
        })
    }
}

/// Condition number (largest over smallest singular value).
pub fn condition_number(a: &Matrix) -> f64 {
    let sv = singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(hi), Some(lo)) => hi / lo,
        _ => f64::NAN,
    }
}

/// Orthogonal projector `A (A'A)^{-1} A'` onto the column space of `A`.
pub fn orth_projector(a: &Matrix) -> Result<Matrix> {
    check_full_column_rank(a, "projector argument")?;
    let gram = SpdMatrix::named(a.tr_mul(a), "A'A")?;
    let coef = gram.solve(&a.transpose());
    Ok(symmetrize(&(a * coef)))
}

/// Symmetric eigendecomposition of the dilation `[[0, A], [A', 0]]`.
///
/// Its eigenvalues are `±σ_i` (plus zeros), and the eigenvector for `+σ_i` is
/// `[u_i; v_i] / √2`. Working through the symmetric solver keeps full accuracy
/// on rank-deficient input, where the bidiagonal SVD can return factors that
/// do not reconstruct `A`.
fn dilation_eigen(a: &Matrix) -> SymmetricEigen<f64, Dyn> {
    let (rows, cols) = a.shape();
    let mut j = Matrix::zeros(rows + cols, rows + cols);
    j.view_mut((0, rows), (rows, cols)).copy_from(a);
    j.view_mut((rows, 0), (cols, rows)).copy_from(&a.transpose());
    SymmetricEigen::new(j)
}

/// Singular values of `a` in decreasing order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    // reduce to the square triangular factor; its singular values are the same
    let r = if rows > cols {
        a.clone().qr().r()
    } else if cols > rows {
        a.transpose().qr().r()
    } else {
        a.clone()
    };
    let k = r.nrows();
    let mut values: Vec<f64> = dilation_eigen(&r).eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values.truncate(k);
    values.iter().map(|v| v.max(0.0)).collect()
}

/// Moore–Penrose inverse; singular values below `PINV_TOL * sigma_max` are
/// treated as zero.
pub fn moore_penrose(a: &Matrix) -> Matrix {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Matrix::zeros(cols, rows);
    }
    let eig = dilation_eigen(a);
    let hi = eig.eigenvalues.max();
    if hi <= 0.0 {
        return Matrix::zeros(cols, rows);
    }
    let cutoff = PINV_TOL * hi;
    let mut out = Matrix::zeros(cols, rows);
    for (i, &s) in eig.eigenvalues.iter().enumerate() {
        if s > cutoff {
            // the halves of a unit eigenvector have norm 1/√2 each: out += v u' / s
            let w = eig.eigenvectors.column(i);
            let u = w.rows(0, rows);
            let v = w.rows(rows, cols);
            out.ger(2.0 / s, &v, &u, 1.0);
        }
    }
    out
}

/// Kronecker product `(a_ij B)`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Row-stacking vectorization `vec(A')`.
pub fn vec_t(a: &Matrix) -> Vector {
    let (rows, cols) = a.shape();
    Vector::from_iterator(rows * cols, (0..rows).flat_map(|i| (0..cols).map(move |j| a[(i, j)])))
}

/// Inverse of [`vec_t`].
pub fn unvec_t(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(GcmError::DimensionMismatch(format!(
            "vector of length {} cannot be reshaped to {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Matrix::from_row_slice(rows, cols, v.as_slice()))
}

/// Symmetric inverse square root `B` with `B A B = I`.
pub fn inv_sqrt_spd(a: &SpdMatrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(a.matrix()));
    let scaled = Vector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()),
    );
    let v = &eig.eigenvectors;
    symmetrize(&(v * Matrix::from_diagonal(&scaled) * v.transpose()))
}

/// Serde adapter storing a matrix as a list of rows.
pub mod serde_rows {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Matrix;

    pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(format!("row {} has {} entries, expected {cols}", i + 1, r.len()));
        }
        Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
            match Option::<Vec<Vec<f64>>>::deserialize(d)? {
                None => Ok(None),
                Some(rows) => from_rows(&rows).map(Some).map_err(D::Error::custom),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_full_rank, random_matrix, random_spd, rng};

    fn qr_projector(a: &Matrix) -> Matrix {
        let q = a.clone().qr().q();
        &q * q.transpose()
    }

    // Pseudo-inverse built from the eigen-decomposition of A'A, independent of the SVD path.
    fn eigen_pinv(a: &Matrix) -> Matrix {
        let eig = SymmetricEigen::new(a.tr_mul(a));
        let hi = eig.eigenvalues.max().max(0.0);
        let mut inv = Matrix::zeros(a.ncols(), a.ncols());
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if hi > 0.0 && l > 1e-12 * hi {
                let v = eig.eigenvectors.column(i);
                inv += (v * v.transpose()) / l;
            }
        }
        inv * a.transpose()
    }

    fn penrose_residual(a: &Matrix, p: &Matrix) -> f64 {
        let scale = max_abs(a).max(max_abs(p)).max(1.0);
        let r1 = max_abs(&(a * p * a - a));
        let r2 = max_abs(&(p * a * p - p));
        let ap = a * p;
        let pa = p * a;
        let r3 = max_abs(&(&ap - ap.transpose()));
        let r4 = max_abs(&(&pa - pa.transpose()));
        r1.max(r2).max(r3).max(r4) / scale
    }

    #[test]
    fn projector_of_identity_is_identity() {
        let p = orth_projector(&Matrix::identity(3, 3)).unwrap();
        assert!(max_abs(&(p - Matrix::identity(3, 3))) < 1e-15);
    }

    #[test]
    fn projector_onto_ones_is_averaging() {
        let n = 5;
        let p = orth_projector(&Matrix::from_element(n, 1, 1.0)).unwrap();
        let expected = Matrix::from_element(n, n, 1.0 / n as f64);
        assert!(max_abs(&(p - expected)) < 1e-15);
    }

    #[test]
    fn projector_matches_qr_oracle() {
        let a = random_full_rank(&mut rng(11), 6, 2);
        let p = orth_projector(&a).unwrap();
        assert!(max_abs(&(&p * &p - &p)) < 1e-12);
        assert!(max_abs(&(&p - p.transpose())) < 1e-12);
        assert!(max_abs(&(&p * &a - &a)) < 1e-10 * max_abs(&a));
        assert!(max_abs(&(&p - qr_projector(&a))) < 1e-12);
        assert!((p.trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn projector_rejects_duplicated_column() {
        let mut a = random_matrix(&mut rng(3), 5, 2);
        let c0 = a.column(0).clone_owned();
        a.set_column(1, &c0);
        assert!(matches!(orth_projector(&a), Err(GcmError::RankDeficient { .. })));
    }

    #[test]
    fn singular_values_of_scaled_orthogonal_columns() {
        // columns are orthogonal with norms 3 and 2 (tall), and the transpose (wide)
        let a = Matrix::from_row_slice(3, 2, &[3.0, 0.0, 0.0, 1.2, 0.0, 1.6]);
        for m in [a.clone(), a.transpose()] {
            let sv = singular_values(&m);
            assert_eq!(sv.len(), 2);
            assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 2.0).abs() < 1e-14);
        }
        assert!((condition_number(&a) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn pinv_of_projected_precision_is_accurate() {
        // P_Z S P_Z with a rank-deficient symmetric structure; the Penrose
        // residual must stay at rounding level
        let mut r = rng(0x5eed);
        let z = random_full_rank(&mut r, 6, 3);
        let s = random_spd(&mut r, 6).inverse();
        let pz = orth_projector(&z).unwrap();
        let a = &pz * s * &pz;
        assert!(penrose_residual(&a, &moore_penrose(&a)) < 1e-12);
    }

    #[test]
    fn pinv_of_zero_is_zero_transposed() {
        let p = moore_penrose(&Matrix::zeros(3, 2));
        assert_eq!(p.shape(), (2, 3));
        assert_eq!(max_abs(&p), 0.0);
    }

    #[test]
    fn pinv_of_singular_diagonal() {
        let p = moore_penrose(&Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0])));
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.0]));
        assert!(max_abs(&(p - expected)) < 1e-15);
    }

    #[test]
    fn pinv_rank_two_matches_eigen_oracle() {
        let mut r = rng(5);
        let a = random_matrix(&mut r, 4, 2) * random_matrix(&mut r, 2, 3);
        let p = moore_penrose(&a);
        assert!(penrose_residual(&a, &p) < 1e-9);
        let oracle = eigen_pinv(&a);
        assert!(max_abs(&(&p - &oracle)) < 1e-8 * max_abs(&oracle));
    }

    #[test]
    fn kron_with_identity_is_block_diagonal() {
        let b = random_matrix(&mut rng(1), 2, 3);
        let k = kron(&Matrix::identity(2, 2), &b);
        assert_eq!(k.shape(), (4, 6));
        assert_eq!(k.view((0, 0), (2, 3)), b);
        assert_eq!(k.view((2, 3), (2, 3)), b);
        assert_eq!(max_abs(&k.view((0, 3), (2, 3)).clone_owned()), 0.0);
        assert_eq!(max_abs(&k.view((2, 0), (2, 3)).clone_owned()), 0.0);
        assert_eq!(kron(&Matrix::from_element(1, 1, 2.0), &b), &b * 2.0);
    }

    #[test]
    fn kron_vec_t_identity() {
        let mut r = rng(2);
        let a = random_matrix(&mut r, 2, 2);
        let b = random_matrix(&mut r, 3, 3);
        let m = random_matrix(&mut r, 2, 3);
        let lhs = vec_t(&(&a * &m * b.transpose()));
        let rhs = kron(&a, &b) * vec_t(&m);
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn vec_t_stacks_rows() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_t(&a).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        let row = Matrix::from_row_slice(1, 3, &[5.0, 6.0, 7.0]);
        assert_eq!(vec_t(&row).as_slice(), &[5.0, 6.0, 7.0]);
        let m = random_matrix(&mut rng(4), 3, 4);
        assert_eq!(unvec_t(&vec_t(&m), 3, 4).unwrap(), m);
        assert!(unvec_t(&vec_t(&m), 2, 4).is_err());
    }

    #[test]
    fn inv_sqrt_examples() {
        let b = inv_sqrt_spd(&SpdMatrix::new(Matrix::identity(4, 4)).unwrap());
        assert!(max_abs(&(b - Matrix::identity(4, 4))) < 1e-15);

        let d = SpdMatrix::new(Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]))).unwrap();
        let b = inv_sqrt_spd(&d);
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 1.0 / 3.0]));
        assert!(max_abs(&(b - expected)) < 1e-15);

        let a = random_spd(&mut rng(9), 3);
        let b = inv_sqrt_spd(&a);
        assert!(max_abs(&(&b * a.matrix() * &b - Matrix::identity(3, 3))) < 1e-9);
        assert!(max_abs(&(&b * a.matrix() - a.matrix() * &b)) < 1e-9);
        assert_eq!(b, b.transpose());
    }

    #[test]
    fn spd_rejections() {
        assert!(matches!(SpdMatrix::new(Matrix::zeros(2, 2)), Err(GcmError::NotSpd { .. })));
        let asym = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(GcmError::NotSpd { .. })));
        let indefinite = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(indefinite), Err(GcmError::NotSpd { .. })));
        let nan = Matrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(SpdMatrix::new(nan), Err(GcmError::NonFinite(_))));
        assert!(SpdMatrix::new(Matrix::zeros(2, 3)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn projector_laws(seed in any::<u64>(), n in 2usize..9, k in 1usize..5) {
                prop_assume!(k <= n);
                let a = random_full_rank(&mut rng(seed), n, k);
                let p = orth_projector(&a).unwrap();
                prop_assert!(max_abs(&(&p - p.transpose())) < 1e-10);
                prop_assert!(max_abs(&(&p * &p - &p)) < 1e-10);
                prop_assert!(max_abs(&(&p * &a - &a)) < 1e-10 * max_abs(&a).max(1.0));
                prop_assert!((p.trace() - k as f64).abs() < 1e-10);
            }

            #[test]
            fn penrose_conditions_all_ranks(seed in any::<u64>(), rows in 1usize..7, cols in 1usize..7, rank_pick in 0usize..7) {
                let rank = rank_pick % (rows.min(cols) + 1);
                let mut r = rng(seed);
                let a = if rank == 0 {
                    Matrix::zeros(rows, cols)
                } else {
                    random_matrix(&mut r, rows, rank) * random_matrix(&mut r, rank, cols)
                };
                let p = moore_penrose(&a);
                prop_assert!(penrose_residual(&a, &p) < 1e-9);
            }

            #[test]
            fn kron_vec_t_compatible(seed in any::<u64>(), a_r in 1usize..4, a_c in 1usize..4, b_r in 1usize..4, b_c in 1usize..4) {
                let mut r = rng(seed);
                let a = random_matrix(&mut r, a_r, a_c);
                let b = random_matrix(&mut r, b_r, b_c);
                let m = random_matrix(&mut r, a_c, b_c);
                let lhs = vec_t(&(&a * &m * b.transpose()));
                let rhs = kron(&a, &b) * vec_t(&m);
                prop_assert!((lhs - rhs).amax() < 1e-12);
            }

            #[test]
            fn inv_sqrt_commutes(seed in any::<u64>(), dim in 1usize..6) {
                let a = random_spd(&mut rng(seed), dim);
                let b = inv_sqrt_spd(&a);
                let scale = max_abs(a.matrix()) * max_abs(&b);
                prop_assert!(max_abs(&(&b * a.matrix() - a.matrix() * &b)) < 1e-9 * scale.max(1.0));
                prop_assert!(max_abs(&(&b * a.matrix() * &b - Matrix::identity(dim, dim))) < 1e-9);
            }
        }
    }
}
