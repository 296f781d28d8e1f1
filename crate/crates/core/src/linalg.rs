//! Small dense linear-algebra helpers. Matrices are nalgebra; SVDs go
//! through faer, whose singular vectors stay accurate on the exactly
//! rank-deficient matrices BN produces.

use nalgebra::{DMatrix, DVector};

/// Relative threshold below which a singular value counts as zero.
pub const RANK_RTOL: f64 = 1e-8;

/// Thin SVD `a = U diag(s) Vᵀ` with `s` descending.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn thin_svd(a: &DMatrix<f64>) -> ThinSvd {
    let (r, c) = a.shape();
    let k = r.min(c);
    if k == 0 {
        return ThinSvd { u: DMatrix::zeros(r, 0), s: Vec::new(), v: DMatrix::zeros(c, 0) };
    }
    let nan = || ThinSvd { u: DMatrix::from_element(r, k, f64::NAN), s: vec![f64::NAN; k], v: DMatrix::from_element(c, k, f64::NAN) };
    if !a.iter().all(|x| x.is_finite()) {
        return nan();
    }
    let m = faer::Mat::<f64>::from_fn(r, c, |i, j| a[(i, j)]);
    let Ok(svd) = m.thin_svd() else { return nan() };
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| s[y].partial_cmp(&s[x]).unwrap());
    ThinSvd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, order[j])]),
        s: order.iter().map(|&j| s[j]).collect(),
        v: DMatrix::from_fn(c, k, |i, j| v[(i, order[j])]),
    }
}

/// Singular values of `a`, sorted descending. Wide inputs go through a QR of
/// the transpose so only a small square SVD is needed.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Vec::new();
    }
    if c > 2 * r {
        thin_svd(&a.transpose().qr().r()).s
    } else if r > 2 * c {
        thin_svd(&a.clone().qr().r()).s
    } else {
        thin_svd(a).s
    }
}

pub fn rank_with(sv: &[f64], rtol: f64) -> usize {
    let Some(&top) = sv.first() else { return 0 };
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * top).count()
}

pub fn rank(a: &DMatrix<f64>) -> usize {
    rank_with(&singular_values(a), RANK_RTOL)
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Smallest eigenvalue of `a aᵀ`, i.e. the squared smallest singular value of
/// `a` when it has at least as many columns as rows, otherwise zero.
pub fn sigma_min_gram(a: &DMatrix<f64>) -> f64 {
    let (r, c) = a.shape();
    if c < r {
        return 0.0;
    }
    let sv = singular_values(a);
    let top = sv.first().copied().unwrap_or(0.0);
    let low = sv.last().copied().unwrap_or(0.0);
    if low <= RANK_RTOL * top {
        0.0
    } else {
        low * low
    }
}

/// Least-squares solve of `m x ≈ y` for `m`, i.e. `y x⁺`. Returns the solution
/// and whether `x` was rank deficient (in which case the min-norm solution is
/// returned).
pub fn right_lstsq(y: &DMatrix<f64>, x: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let d = x.nrows();
    let svd = thin_svd(&x.transpose());
    let (u, v, s) = (&svd.u, &svd.v, &svd.s); // q×k, d×k
    let top = s.first().copied().unwrap_or(0.0);
    let mut deficient = s.len() < d;
    // xᵀ = U S Vᵀ, so mᵀ = V S⁻¹ Uᵀ yᵀ.
    let uty = u.transpose() * y.transpose(); // k×p
    let mut scaled = uty;
    for i in 0..s.len() {
        if s[i] > RANK_RTOL * top && top > 0.0 {
            let inv = 1.0 / s[i];
            scaled.row_mut(i).scale_mut(inv);
        } else {
            deficient = true;
            scaled.row_mut(i).fill(0.0);
        }
    }
    let mt = v * scaled; // d×p
    (mt.transpose(), deficient)
}

/// Orthonormal basis (as columns) of the column span of `a`.
pub fn column_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    if a.ncols() == 0 {
        return DMatrix::zeros(d, 0);
    }
    let svd = thin_svd(a);
    let (u, s) = (svd.u, svd.s);
    let top = s.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..s.len())
        .filter(|&i| top > 0.0 && s[i] > RANK_RTOL * top)
        .collect();
    let mut out = DMatrix::zeros(d, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        out.set_column(j, &u.column(i));
    }
    out
}

/// Projects `v` onto the orthogonal complement of the columns of `basis`
/// (which must be orthonormal).
pub fn project_out(v: &DVector<f64>, basis: &DMatrix<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return v.clone();
    }
    let coef = basis.transpose() * v;
    v - basis * coef
}

/// Binomial coefficient as u128, saturating.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Binomial coefficient as f64 via log-gamma free product (exact for small n).
pub fn binomial_f64(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn non_finite_svd_is_nan() {
        let mut a = DMatrix::from_element(3, 8, 1.0);
        a[(1, 2)] = f64::INFINITY;
        assert!(spectral_norm(&a).is_nan());
        a[(1, 2)] = f64::NAN;
        assert!(thin_svd(&a).s.iter().all(|s| s.is_nan()));
    }

    /// Columns centered and scaled per row, so they sum to zero exactly:
    /// the shape of a single BN batch.
    fn bn_like(d: usize, b: usize, seed: u64) -> DMatrix<f64> {
        let mut r = crate::rng::stream(seed, 0);
        let mut x: DMatrix<f64> = DMatrix::from_fn(d, b, |_, _| StandardNormal.sample(&mut r));
        for mut row in x.row_iter_mut() {
            let mu = row.sum() / b as f64;
            row.add_scalar_mut(-mu);
            let sd = (row.norm_squared() / b as f64).sqrt();
            row /= sd;
        }
        x
    }

    #[test]
    fn svd_reconstructs_rank_deficient_batches() {
        for seed in 0..200 {
            let x = bn_like(10, 4, seed);
            let svd = thin_svd(&x);
            let rec = &svd.u * DMatrix::from_diagonal(&DVector::from_vec(svd.s.clone())) * svd.v.transpose();
            assert!((rec - &x).amax() < 1e-12, "seed {seed}");
            // Targets summing to zero are consistent with the batch columns.
            let c = DMatrix::from_row_slice(1, 4, &[0.5, -0.5, 0.5, -0.5]);
            let (m, deficient) = right_lstsq(&c, &x);
            assert!(deficient);
            assert!((m * &x - c).amax() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(3, 5), 0);
        assert!((binomial_f64(512, 2) - 130816.0).abs() < 1e-6);
    }

    #[test]
    fn rank_of_wide_matrix() {
        let a = DMatrix::from_row_slice(2, 6, &[1., 2., 3., 4., 5., 6., 2., 4., 6., 8., 10., 12.]);
        assert_eq!(rank(&a), 1);
        let b = DMatrix::from_row_slice(2, 3, &[1., 0., 1., 0., 1., 1.]);
        assert_eq!(rank(&b), 2);
    }

    #[test]
    fn lstsq_recovers_exact_map() {
        let x = DMatrix::from_row_slice(2, 4, &[1., 2., -1., 0.5, 0., 1., 3., -2.]);
        let c = DMatrix::from_row_slice(1, 2, &[0.7, -1.3]);
        let y = &c * &x;
        let (m, def) = right_lstsq(&y, &x);
        assert!(!def);
        assert!((m - c).norm() < 1e-12);
    }

    #[test]
    fn lstsq_flags_rank_deficiency() {
        let x = DMatrix::from_row_slice(2, 3, &[1., 2., 3., 2., 4., 6.]);
        let y = DMatrix::from_row_slice(1, 3, &[1., 1., 1.]);
        let (_, def) = right_lstsq(&y, &x);
        assert!(def);
    }
}
