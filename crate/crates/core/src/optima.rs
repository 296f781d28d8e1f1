//! Closed-form minimizers of the squared distorted risks and distortion
//! metrics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{
    for_each_permutation, normalize_gd, normalize_rr_full_capped, normalize_rr_sampled, normalize_ss,
    BatchPlan, Dataset, NormalizedDataset, RR_FULL_CAP,
};
use crate::error::{Error, Result};
use crate::linalg::{binomial, right_lstsq};
use crate::rng;

/// Minimizer over M of ‖Y − MX̄‖²_F.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub m: DMatrix<f64>,
    /// Set when X̄X̄ᵀ is singular; `m` is then the min-norm solution.
    pub rank_deficient: bool,
}

pub fn optimum(nds: &NormalizedDataset) -> Optimum {
    let (m, rank_deficient) = right_lstsq(&nds.targets().as_matrix(), nds.xbar());
    Optimum { m, rank_deficient }
}

/// ‖(Y − MX̄)X̄ᵀ‖_F, the normal-equation residual.
pub fn normal_equation_residual(m: &DMatrix<f64>, nds: &NormalizedDataset) -> f64 {
    let y = nds.targets().as_matrix();
    ((y - m * nds.xbar()) * nds.xbar().transpose()).norm()
}

/// ‖M − M_ref‖_F / ‖M_ref‖_F.
pub fn normalized_distance(m: &DMatrix<f64>, m_ref: &DMatrix<f64>) -> Result<f64> {
    let r = m_ref.norm();
    if r == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((m - m_ref).norm() / r)
}

/// For d = 1: the RR optimum from the RR-full dataset and the mean of the SS
/// optima over all n! permutations.
pub fn rr_average_check(ds: &Dataset, b: usize) -> Result<(f64, f64)> {
    if ds.d() != 1 {
        return Err(Error::DimensionNotOne(ds.d()));
    }
    if ds.n() > 6 {
        return Err(Error::TooManyPermutations(ds.n()));
    }
    if ds.p() != 1 {
        return Err(Error::DimensionMismatch("rr_average_check needs p = 1".into()));
    }
    let rr = normalize_rr_full_capped(ds, b, 0.0, RR_FULL_CAP)?;
    let lhs = optimum(&rr).m[0];
    let mut total = 0.0;
    let mut count = 0usize;
    let mut err = None;
    for_each_permutation(ds.n(), |perm| {
        if err.is_some() {
            return;
        }
        let r = BatchPlan::new(perm.to_vec(), b).and_then(|plan| normalize_ss(ds, &plan, 0.0));
        match r {
            Ok(nds) => {
                total += optimum(&nds).m[0];
                count += 1;
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok((lhs, total / count as f64))
}

/// How the RR optimum in a bundle was obtained.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RrSource {
    Full,
    Sampled { num_perms: usize },
}

/// GD, SS and RR optima with their distances to the GD optimum.
#[derive(Clone, Debug)]
pub struct OptimaBundle {
    pub m_gd: Optimum,
    pub m_ss: Optimum,
    pub m_rr: Optimum,
    pub rr_source: RrSource,
    pub d_ss: f64,
    pub d_rr: f64,
}

/// Computes all three optima. The RR optimum uses the exact unique-batch
/// construction when it fits in `RR_FULL_CAP` columns, otherwise `rr_perms`
/// seeded permutations.
pub fn optima_bundle(ds: &Dataset, plan: &BatchPlan, rr_perms: usize, seed: u64) -> Result<OptimaBundle> {
    let m_gd = optimum(&normalize_gd(ds, 0.0)?);
    let m_ss = optimum(&normalize_ss(ds, plan, 0.0)?);
    let b = plan.batch_size();
    let cols = binomial(ds.n(), b).saturating_mul(b as u128);
    let (rr, rr_source) = if cols <= RR_FULL_CAP as u128 {
        (normalize_rr_full_capped(ds, b, 0.0, RR_FULL_CAP)?, RrSource::Full)
    } else {
        (normalize_rr_sampled(ds, b, 0.0, rr_perms, seed)?, RrSource::Sampled { num_perms: rr_perms })
    };
    let m_rr = optimum(&rr);
    let d_ss = normalized_distance(&m_ss.m, &m_gd.m)?;
    let d_rr = normalized_distance(&m_rr.m, &m_gd.m)?;
    Ok(OptimaBundle { m_gd, m_ss, m_rr, rr_source, d_ss, d_rr })
}

/// d(M_π*) relative to M_GD* for `num_perms` seeded permutations; entry i
/// uses random stream i of `seed`.
pub fn distortion_histogram(ds: &Dataset, b: usize, num_perms: usize, seed: u64) -> Result<Vec<f64>> {
    if num_perms == 0 {
        return Err(Error::InvalidPlan("num_perms must be >= 1".into()));
    }
    let m_gd = optimum(&normalize_gd(ds, 0.0)?).m;
    (0..num_perms)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let plan = BatchPlan::random(ds.n(), b, &mut r)?;
            let m = optimum(&normalize_ss(ds, &plan, 0.0)?).m;
            normalized_distance(&m, &m_gd)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_linear_targets() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 7.0, -1.0]);
        let nds0 = normalize_gd(&Dataset::regression(x.clone(), DMatrix::zeros(1, 4)).unwrap(), 0.0).unwrap();
        let c = DMatrix::from_row_slice(1, 2, &[2.0, -0.5]);
        let y = &c * nds0.xbar();
        let ds = Dataset::regression(x, y).unwrap();
        let o = optimum(&normalize_gd(&ds, 0.0).unwrap());
        assert!(!o.rank_deficient);
        assert!((o.m - c).norm() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let r = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert_eq!(normalized_distance(&r, &r).unwrap(), 0.0);
        assert!((normalized_distance(&(&r * 2.0), &r).unwrap() - 1.0).abs() < 1e-15);
        assert!((normalized_distance(&DMatrix::zeros(1, 2), &r).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(normalized_distance(&r, &DMatrix::zeros(1, 2)), Err(Error::ZeroReference));
    }

    #[test]
    fn rr_average_symmetric_dataset() {
        let x = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(1, 4, &[0.5, -1.0, -0.5, 1.0]);
        let ds = Dataset::regression(x, y).unwrap();
        // Duplicate x values make some pairs constant, so use B = 4.
        let (l, r) = rr_average_check(&ds, 4).unwrap();
        assert!(l.abs() < 1e-14 && r.abs() < 1e-14);
    }

    #[test]
    fn rr_average_errors() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 0.0, 1.0]);
        let ds = Dataset::regression(x, DMatrix::zeros(1, 4)).unwrap();
        assert_eq!(rr_average_check(&ds, 2), Err(Error::DimensionNotOne(2)));
        let x = DMatrix::from_fn(1, 8, |_, j| j as f64);
        let ds = Dataset::regression(x, DMatrix::zeros(1, 8)).unwrap();
        assert_eq!(rr_average_check(&ds, 2), Err(Error::TooManyPermutations(8)));
    }

    #[test]
    fn histogram_full_batch_is_zero_and_deterministic() {
        let x = DMatrix::from_row_slice(2, 6, &[1.0, 2.5, -1.0, 0.3, 4.0, -2.0, 0.5, -0.5, 2.0, 1.0, 0.0, 3.0]);
        let y = DMatrix::from_row_slice(1, 6, &[1.0, -1.0, 0.5, 2.0, -0.3, 0.0]);
        let ds = Dataset::regression(x, y).unwrap();
        let h = distortion_histogram(&ds, 6, 5, 3).unwrap();
        assert!(h.iter().all(|&v| v < 1e-12));
        let a = distortion_histogram(&ds, 2, 7, 3).unwrap();
        assert_eq!(a, distortion_histogram(&ds, 2, 7, 3).unwrap());
    }
}
