//! Compact SVD through the smaller Gram matrix, and the rotated ridge
//! problem that both penalty-selection procedures work on.
//!
//! With `X = U diag(s) Vᵀ`, the ridge problem in the coordinates `α = Vᵀβ`
//! has a diagonal design, so for a fixed penalty every coefficient is
//! `α_j = c_j / (s_j² + λ)` with `c = diag(s) Uᵀ y`. Everything the solvers
//! need per candidate penalty is then `O(r)` or `O(n r)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, RidgeError};

/// Relative cut-off (against the largest eigenvalue of the Gram matrix) below
/// which a direction counts as numerically null, scaled by `max(n, p)`.
const RANK_SAFETY_FACTOR: f64 = 100.0;

/// Which Gram matrix to eigendecompose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GramRoute {
    /// `XᵀX` when `n >= p`, otherwise `XXᵀ`.
    #[default]
    Auto,
    /// Always `XᵀX` (p × p).
    Features,
    /// Always `XXᵀ` (n × n).
    Samples,
}

#[derive(Clone, Debug)]
pub struct CompactSvd {
    pub u: DMatrix<f64>,
    /// Singular values, descending.
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
}

impl CompactSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        us * self.v.transpose()
    }
}

pub fn compact_svd(x: &DMatrix<f64>) -> Result<CompactSvd> {
    compact_svd_with(x, GramRoute::Auto)
}

pub fn compact_svd_with(x: &DMatrix<f64>, route: GramRoute) -> Result<CompactSvd> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(RidgeError::InvalidParameter(
            "cannot decompose an empty matrix".into(),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RidgeError::InvalidParameter(
            "design matrix contains non-finite values".into(),
        ));
    }
    let features = match route {
        GramRoute::Auto => n >= p,
        GramRoute::Features => true,
        GramRoute::Samples => false,
    };
    let gram = if features {
        x.tr_mul(x)
    } else {
        x * x.transpose()
    };
    let (eigvecs, s) = leading_eigenpairs(gram, n.max(p));
    let r = s.len();
    let inv_s = DVector::from_iterator(r, s.iter().map(|v| 1.0 / v));

    let (mut u, mut v) = if features {
        let u = scale_columns(x * &eigvecs, &inv_s);
        (u, eigvecs)
    } else {
        let v = scale_columns(x.tr_mul(&eigvecs), &inv_s);
        (eigvecs, v)
    };
    orient_columns(&mut v, &mut u);
    Ok(CompactSvd { u, s, v, n, p })
}

/// Eigenvectors and square-rooted eigenvalues of a symmetric PSD matrix,
/// ordered by decreasing eigenvalue (ties by original index), with the
/// numerically null directions removed.
fn leading_eigenpairs(gram: DMatrix<f64>, dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i].max(0.0));
    let cutoff = RANK_SAFETY_FACTOR * dim as f64 * f64::EPSILON * top;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| top > 0.0 && eig.eigenvalues[i] > cutoff)
        .collect();
    let rows = eig.eigenvectors.nrows();
    let vecs = DMatrix::from_fn(rows, kept.len(), |i, k| eig.eigenvectors[(i, kept[k])]);
    let s = DVector::from_iterator(kept.len(), kept.iter().map(|&i| eig.eigenvalues[i].sqrt()));
    (vecs, s)
}

fn scale_columns(mut m: DMatrix<f64>, factors: &DVector<f64>) -> DMatrix<f64> {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= factors[j];
    }
    m
}

/// Makes the first clearly nonzero entry of every column of `v` positive,
/// flipping the paired column of `u` with it.
fn orient_columns(v: &mut DMatrix<f64>, u: &mut DMatrix<f64>) {
    for j in 0..v.ncols() {
        let flip = v
            .column(j)
            .iter()
            .find(|x| x.abs() > 1e-8)
            .is_some_and(|&x| x < 0.0);
        if flip {
            v.column_mut(j).neg_mut();
            u.column_mut(j).neg_mut();
        }
    }
}

/// The SVD-rotated ridge problem for one or more targets.
#[derive(Clone, Debug)]
pub struct RotatedProblem {
    pub s: DVector<f64>,
    pub s2: DVector<f64>,
    /// `Uᵀ Y`, r × q.
    pub uty: DMatrix<f64>,
    /// `diag(s) Uᵀ Y`, r × q.
    pub c: DMatrix<f64>,
    pub y_sq_norms: Vec<f64>,
    /// `‖y‖² − ‖Uᵀy‖²` per target: the part of `y` outside the column space.
    /// Unclamped, so rounding can make it slightly negative.
    pub out_of_span: Vec<f64>,
    /// `(1/n) Σ (y_i − ȳ)²` per target.
    pub y_variances: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
}

impl RotatedProblem {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn q(&self) -> usize {
        self.c.ncols()
    }

    pub fn n_dropped_directions(&self) -> usize {
        self.p - self.rank()
    }

    pub(crate) fn check_target(&self, t: usize) -> Result<()> {
        if t >= self.q() {
            return Err(RidgeError::DimensionMismatch {
                context: "target index",
                expected: self.q(),
                actual: t,
            });
        }
        Ok(())
    }
}

pub fn rotate(svd: CompactSvd, y: &DMatrix<f64>) -> Result<RotatedProblem> {
    if y.nrows() != svd.n {
        return Err(RidgeError::DimensionMismatch {
            context: "target rows",
            expected: svd.n,
            actual: y.nrows(),
        });
    }
    let uty = svd.u.tr_mul(y);
    let mut c = uty.clone();
    for (j, mut row) in c.row_iter_mut().enumerate() {
        row *= svd.s[j];
    }
    let y_sq_norms: Vec<f64> = y.column_iter().map(|col| col.norm_squared()).collect();
    let out_of_span = y_sq_norms
        .iter()
        .zip(uty.column_iter())
        .map(|(ys, col)| ys - col.norm_squared())
        .collect();
    let n = svd.n as f64;
    let y_variances = y
        .column_iter()
        .map(|col| {
            let mean = col.mean();
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        })
        .collect();
    let s2 = svd.s.map(|v| v * v);
    Ok(RotatedProblem {
        s: svd.s,
        s2,
        uty,
        c,
        y_sq_norms,
        out_of_span,
        y_variances,
        u: svd.u,
        v: svd.v,
        n: svd.n,
        p: svd.p,
    })
}

/// Rotated ridge coefficients `α_j = c_j / (s_j² + λ)` for target `t`.
pub fn rotated_ridge_solution(rp: &RotatedProblem, lambda: f64, t: usize) -> Result<DVector<f64>> {
    let mut alpha = DVector::zeros(rp.rank());
    rotated_ridge_solution_into(rp, lambda, t, alpha.as_mut_slice())?;
    Ok(alpha)
}

pub fn rotated_ridge_solution_into(
    rp: &RotatedProblem,
    lambda: f64,
    t: usize,
    out: &mut [f64],
) -> Result<()> {
    if !(lambda > 0.0) {
        return Err(RidgeError::InvalidParameter(format!(
            "penalty must be positive, got {lambda}"
        )));
    }
    rp.check_target(t)?;
    if out.len() != rp.rank() {
        return Err(RidgeError::DimensionMismatch {
            context: "rotated coefficient buffer",
            expected: rp.rank(),
            actual: out.len(),
        });
    }
    for ((a, c), s2) in out.iter_mut().zip(rp.c.column(t).iter()).zip(rp.s2.iter()) {
        *a = c / (s2 + lambda);
    }
    Ok(())
}

/// `β = V α`.
pub fn recover_beta(v: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    if alpha.len() != v.ncols() {
        return Err(RidgeError::DimensionMismatch {
            context: "rotated coefficients",
            expected: v.ncols(),
            actual: alpha.len(),
        });
    }
    Ok(v * alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::dense_ridge_solve;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::StreamRng::new(seed, 0, 0);
        DMatrix::from_fn(n, p, |_, _| rng.normal())
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn diagonal_matrix() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0]));
        let svd = compact_svd(&x).unwrap();
        assert_relative_eq!(svd.s.as_slice(), [3.0, 2.0].as_slice(), epsilon = 1e-14);
        assert_relative_eq!(svd.u, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(svd.v, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn rank_one_column() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let svd = compact_svd(&x).unwrap();
        assert_relative_eq!(svd.s[0], 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(svd.v[(0, 0)], 1.0, epsilon = 1e-14);
        let h = 1.0 / 2f64.sqrt();
        assert_relative_eq!(
            svd.u.column(0).as_slice(),
            [h, h].as_slice(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn both_routes_reconstruct() {
        let x = random_matrix(5, 3, 11);
        for route in [GramRoute::Features, GramRoute::Samples] {
            let svd = compact_svd_with(&x, route).unwrap();
            assert_eq!(svd.rank(), 3);
            assert!((svd.reconstruct() - &x).norm() < 1e-8, "{route:?}");
        }
        let xt = x.transpose();
        let a = compact_svd(&x).unwrap();
        let b = compact_svd(&xt).unwrap();
        assert_relative_eq!(a.s, b.s, epsilon = 1e-8);
    }

    #[test]
    fn all_zero_matrix_has_rank_zero() {
        let svd = compact_svd(&DMatrix::zeros(4, 3)).unwrap();
        assert_eq!(svd.rank(), 0);
        assert_eq!(svd.u.shape(), (4, 0));
        assert_eq!(svd.v.shape(), (3, 0));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut x = DMatrix::zeros(2, 2);
        x[(1, 0)] = f64::NAN;
        assert!(compact_svd(&x).is_err());
    }

    #[test]
    fn rank_deficient_drops_directions() {
        // third column is the sum of the first two
        let mut x = random_matrix(8, 3, 5);
        for i in 0..8 {
            x[(i, 2)] = x[(i, 0)] + x[(i, 1)];
        }
        let svd = compact_svd(&x).unwrap();
        assert_eq!(svd.rank(), 2);
        assert!((svd.reconstruct() - &x).norm() <= 1e-6 * x.norm());
        assert!(max_abs(&(svd.u.tr_mul(&svd.u) - DMatrix::identity(2, 2))) < 1e-8);
    }

    #[test]
    fn sign_convention() {
        let x = random_matrix(6, 4, 9);
        for route in [GramRoute::Features, GramRoute::Samples] {
            let svd = compact_svd_with(&x, route).unwrap();
            for col in svd.v.column_iter() {
                let first = col.iter().find(|v| v.abs() > 1e-8).unwrap();
                assert!(*first > 0.0);
            }
        }
    }

    #[test]
    fn rotate_examples() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let svd = compact_svd(&x).unwrap();
        let rp = rotate(svd.clone(), &DMatrix::from_column_slice(2, 1, &[4.0, 1.0])).unwrap();
        assert_relative_eq!(rp.c.as_slice(), [8.0, 1.0].as_slice(), epsilon = 1e-14);
        assert_eq!(rp.y_sq_norms, vec![17.0]);

        let rp0 = rotate(svd.clone(), &DMatrix::zeros(2, 1)).unwrap();
        assert!(rp0.c.iter().all(|&v| v == 0.0));
        assert_eq!(rp0.y_sq_norms, vec![0.0]);

        let col = compact_svd(&DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
        let rp1 = rotate(col, &DMatrix::from_column_slice(2, 1, &[1.0, 3.0])).unwrap();
        assert_relative_eq!(rp1.c[(0, 0)], 4.0, epsilon = 1e-14);

        assert!(rotate(svd, &DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn rotated_ridge_on_diagonal_design() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let y = DMatrix::from_column_slice(2, 1, &[4.0, 1.0]);
        let rp = rotate(compact_svd(&x).unwrap(), &y).unwrap();
        let alpha = rotated_ridge_solution(&rp, 3.0, 0).unwrap();
        assert_relative_eq!(
            alpha.as_slice(),
            [8.0 / 7.0, 0.25].as_slice(),
            epsilon = 1e-14
        );

        let huge = rotated_ridge_solution(&rp, 1e300, 0).unwrap();
        assert!(huge.iter().all(|a| a.abs() < 1e-290));

        assert!(rotated_ridge_solution(&rp, 0.0, 0).is_err());
        assert!(rotated_ridge_solution(&rp, -1.0, 0).is_err());
        assert!(rotated_ridge_solution(&rp, 1.0, 1).is_err());
    }

    #[test]
    fn rotated_solution_matches_dense_ridge() {
        let x = random_matrix(6, 4, 21);
        let y = random_matrix(6, 1, 22);
        let rp = rotate(compact_svd(&x).unwrap(), &y).unwrap();
        for lambda in [1e-3, 0.5, 7.0, 1e3] {
            let alpha = rotated_ridge_solution(&rp, lambda, 0).unwrap();
            let beta = recover_beta(&rp.v, &alpha).unwrap();
            let dense = dense_ridge_solve(&x, &y.column(0).into_owned(), lambda).unwrap();
            assert!((&beta - &dense).norm() <= 1e-10 * dense.norm());
        }
    }

    #[test]
    fn recover_beta_examples() {
        let alpha = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(
            recover_beta(&DMatrix::identity(2, 2), &alpha).unwrap(),
            alpha
        );
        let v = random_matrix(5, 2, 3);
        assert!(recover_beta(&v, &DVector::zeros(2))
            .unwrap()
            .iter()
            .all(|&b| b == 0.0));
        assert!(recover_beta(&v, &DVector::zeros(3)).is_err());

        let svd = compact_svd(&random_matrix(4, 7, 8)).unwrap();
        let alpha = DVector::from_fn(svd.rank(), |j, _| j as f64 - 1.5);
        let beta = recover_beta(&svd.v, &alpha).unwrap();
        assert_relative_eq!(beta.norm(), alpha.norm(), max_relative = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn svd_invariants(n in 1usize..12, p in 1usize..12, seed in any::<u64>()) {
            let x = random_matrix(n, p, seed);
            let svd = compact_svd(&x).unwrap();
            let r = svd.rank();
            prop_assert!(r <= n.min(p));
            prop_assert!(max_abs(&(svd.u.tr_mul(&svd.u) - DMatrix::identity(r, r))) < 1e-8);
            prop_assert!(max_abs(&(svd.v.tr_mul(&svd.v) - DMatrix::identity(r, r))) < 1e-8);
            prop_assert!((svd.reconstruct() - &x).norm() <= 1e-6 * x.norm());
            prop_assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));

            let st = compact_svd(&x.transpose()).unwrap();
            prop_assert_eq!(st.rank(), r);
            for j in 0..r {
                prop_assert!((svd.s[j] - st.s[j]).abs() <= 1e-8 * (1.0 + svd.s[0]));
            }
        }

        #[test]
        fn rotation_invariants(n in 2usize..10, p in 1usize..10, q in 1usize..3, seed in any::<u64>()) {
            let x = random_matrix(n, p, seed);
            let y = random_matrix(n, q, seed.wrapping_add(1));
            let svd = compact_svd(&x).unwrap();
            let direct = DMatrix::from_diagonal(&svd.s) * svd.u.transpose() * &y;
            let rp = rotate(svd, &y).unwrap();
            prop_assert!(max_abs(&(&rp.c - &direct)) <= 1e-10 * (1.0 + max_abs(&direct)));
            for t in 0..q {
                let bessel: f64 = (0..rp.rank()).map(|j| (rp.c[(j, t)] / rp.s[j]).powi(2)).sum();
                prop_assert!(rp.y_sq_norms[t] >= bessel * (1.0 - 1e-12) - 1e-12);
            }
            let mut prev: Option<DVector<f64>> = None;
            for lambda in [1e-4, 1e-2, 1.0, 1e2, 1e4] {
                let alpha = rotated_ridge_solution(&rp, lambda, 0).unwrap();
                let beta = recover_beta(&rp.v, &alpha).unwrap();
                prop_assert!((beta.norm() - alpha.norm()).abs() <= 1e-10 * alpha.norm() + 1e-300);
                if let Some(prev) = &prev {
                    for j in 0..alpha.len() {
                        prop_assert!(alpha[j].abs() <= prev[j].abs());
                    }
                }
                prev = Some(alpha);
            }
        }
    }
}
