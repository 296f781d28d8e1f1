//! Robustness of the GD decomposition (margin, penetration depth, feature
//! scale ratios) and the overparameterized optimal-direction construction.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{decompose, max_margin, SepKind, DECOMP_TOL};
use crate::dataset::{for_each_combination, normalize_gd, Dataset, NormalizedDataset, EPS_ANALYSIS};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Above this many d-subsets of hull differences the depth is estimated by
/// sampled directions instead.
const PD_SUBSET_CAP: u128 = 300_000;
const PD_SAMPLED_DIRECTIONS: usize = 50_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenetrationDepth {
    pub depth: f64,
    /// True when computed from sampled directions (an upper bound).
    pub approximate: bool,
}

/// Shortest translation of `conv(X⁺)` that makes it separable from `conv(X⁻)`.
///
/// Equals the distance from the origin to the boundary of the difference
/// polytope `conv(X⁻) − conv(X⁺)`, or 0 when the origin is not interior.
pub fn penetration_depth(x: &DMatrix<f64>, labels: &[f64]) -> Result<PenetrationDepth> {
    if x.ncols() != labels.len() {
        return Err(Error::DimensionMismatch("labels vs columns".into()));
    }
    let d = x.nrows();
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0.0).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] <= 0.0).collect();
    let exact = |depth: f64| Ok(PenetrationDepth { depth: depth.max(0.0), approximate: false });
    if pos.is_empty() || neg.is_empty() || d == 0 {
        return exact(0.0);
    }
    let mut diffs: Vec<DVector<f64>> = Vec::with_capacity(pos.len() * neg.len());
    for &j in &neg {
        for &i in &pos {
            diffs.push(x.column(j) - x.column(i));
        }
    }
    dedup(&mut diffs);
    let pmat = DMatrix::from_columns(&diffs);
    let centered = DMatrix::from_fn(d, diffs.len(), |r, c| pmat[(r, c)] - pmat[(r, 0)]);
    if linalg::rank(&centered) < d {
        return exact(0.0);
    }
    match d {
        1 => {
            let lo = diffs.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = diffs.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            exact(hi.min(-lo))
        }
        2 => exact(hull_2d_offset(&diffs)),
        _ if linalg::binomial(diffs.len(), d) <= PD_SUBSET_CAP => exact(facet_offset(&diffs, d)),
        _ => Ok(PenetrationDepth { depth: sampled_offset(&diffs, d).max(0.0), approximate: true }),
    }
}

fn dedup(v: &mut Vec<DVector<f64>>) {
    v.sort_by(|a, b| a.iter().partial_cmp(b.iter()).unwrap());
    v.dedup_by(|a, b| (&*a - &*b).amax() <= 1e-14);
}

/// Smallest signed distance from the origin to an edge line of the hull.
fn hull_2d_offset(pts: &[DVector<f64>]) -> f64 {
    let mut p: Vec<(f64, f64)> = pts.iter().map(|v| (v[0], v[1])).collect();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    // Counter-clockwise, so the outward normal of edge a→b is (dy, −dx).
    let mut best = f64::INFINITY;
    for k in 0..hull.len() {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        let (nx, ny) = (b.1 - a.1, a.0 - b.0);
        let len = (nx * nx + ny * ny).sqrt();
        if len > 0.0 {
            best = best.min((nx * a.0 + ny * a.1) / len);
        }
    }
    best
}

/// Minimum offset over all supporting hyperplanes spanned by d points.
fn facet_offset(pts: &[DVector<f64>], d: usize) -> f64 {
    let scale = pts.iter().map(|p| p.amax()).fold(0.0f64, f64::max);
    let tol = 1e-10 * scale.max(1.0);
    let mut best = f64::INFINITY;
    for_each_combination(pts.len(), d, |s| {
        let base = &pts[s[0]];
        let edges = DMatrix::from_fn(d, d - 1, |r, c| pts[s[c + 1]][r] - base[r]);
        let Some(n) = normal_of(&edges) else { return };
        let off = n.dot(base);
        let (mut above, mut below) = (false, false);
        for p in pts {
            let v = n.dot(p) - off;
            above |= v > tol;
            below |= v < -tol;
        }
        if !above {
            best = best.min(off);
        } else if !below {
            best = best.min(-off);
        }
    });
    best
}

/// Unit normal of the hyperplane spanned by the d−1 columns, if unique.
fn normal_of(edges: &DMatrix<f64>) -> Option<DVector<f64>> {
    let d = edges.nrows();
    let basis = linalg::column_basis(edges);
    if basis.ncols() + 1 != d {
        return None;
    }
    // Complete the span with the coordinate axis it misses the most.
    let mut best: Option<DVector<f64>> = None;
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        let r = linalg::project_out(&e, &basis);
        if best.as_ref().is_none_or(|b| r.norm() > b.norm()) {
            best = Some(r);
        }
    }
    best.map(|b| b.normalize())
}

fn sampled_offset(pts: &[DVector<f64>], d: usize) -> f64 {
    let mut r = rng::stream(0, 0);
    let mut best = f64::INFINITY;
    for _ in 0..PD_SAMPLED_DIRECTIONS {
        let u = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r)).normalize();
        let h = pts.iter().map(|p| u.dot(p)).fold(f64::NEG_INFINITY, f64::max);
        best = best.min(h);
    }
    best
}

/// Pass thresholds for the two asymptotic conditions, which have no
/// constants of their own.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessThresholds {
    pub min_scale_ratio: f64,
    pub max_norm_ratio: f64,
}

impl Default for RobustnessThresholds {
    fn default() -> Self {
        RobustnessThresholds { min_scale_ratio: 0.1, max_norm_ratio: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub gamma: f64,
    pub gd_kind: SepKind,
    /// Max-margin of the GD dataset when it is LS.
    pub margin: Option<f64>,
    /// Penetration depth of the GD dataset when it is SC.
    pub penetration_depth: Option<PenetrationDepth>,
    pub cond1_pass: bool,
    /// `min_k σ_k / (b_k − a_k)` over raw features.
    pub scale_ratio: f64,
    pub cond2_pass: bool,
    /// Largest column norm of the GD features divided by √d.
    pub norm_ratio: f64,
    pub cond3_pass: bool,
    pub robust: bool,
    pub thresholds: RobustnessThresholds,
}

pub fn gamma_robustness_report(
    ds: &Dataset,
    gamma: f64,
    thresholds: RobustnessThresholds,
) -> Result<RobustnessReport> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::InvalidDataset("robustness needs ±1 labels".into()))?;
    let gd = normalize_gd(ds, EPS_ANALYSIS)?;
    let dec = decompose(gd.xbar(), labels, DECOMP_TOL)?;
    let (margin, pd, cond1) = match dec.kind {
        SepKind::Ls => {
            let m = max_margin(gd.xbar(), labels)?.margin;
            (Some(m), None, m >= gamma)
        }
        SepKind::Sc => {
            let pd = penetration_depth(gd.xbar(), labels)?;
            let ok = pd.depth >= gamma;
            (None, Some(pd), ok)
        }
        SepKind::Pls => (None, None, false),
    };
    let x = ds.x();
    let n = x.ncols() as f64;
    let scale_ratio = (0..x.nrows())
        .map(|k| {
            let row = x.row(k);
            let mu = row.sum() / n;
            let sd = (row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
            let range = row.max() - row.min();
            if range > 0.0 {
                sd / range
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min);
    let max_col = gd.xbar().column_iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let norm_ratio = max_col / (gd.d() as f64).sqrt();
    let cond2 = scale_ratio >= thresholds.min_scale_ratio;
    let cond3 = norm_ratio <= thresholds.max_norm_ratio;
    Ok(RobustnessReport {
        gamma,
        gd_kind: dec.kind,
        margin,
        penetration_depth: pd,
        cond1_pass: cond1,
        scale_ratio,
        cond2_pass: cond2,
        norm_ratio,
        cond3_pass: cond3,
        robust: cond1 && cond2 && cond3,
        thresholds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverparamCheck {
    pub v: Vec<f64>,
    pub mono_batches: usize,
    pub mixed_batches: usize,
    /// Largest |vᵀx| over columns of monochromatic batches.
    pub max_mono_abs: f64,
    /// Smallest y vᵀx over columns of mixed batches (∞ if there are none).
    pub min_mixed_margin: f64,
    /// Largest deviation of vᵀX̄ from the target outputs.
    pub residual: f64,
}

/// Builds `v` with `vᵀx = 0` on monochromatic batches and `sign(vᵀx) = y`
/// elsewhere, by a least-norm solve of `vᵀX̄ = c`. Targets within a mixed
/// batch are `1/n⁺` and `−1/n⁻`, so each batch sums to zero like its BN
/// columns do.
pub fn overparam_direction_check(nds: &NormalizedDataset) -> Result<OverparamCheck> {
    let labels = nds
        .targets()
        .labels()
        .ok_or_else(|| Error::InvalidDataset("needs ±1 labels".into()))?;
    let d = nds.d();
    let m = nds.boundaries().len();
    let bound = (nds.batch_size().saturating_sub(1)) * m;
    if d <= bound {
        return Err(Error::NotOverparameterized { d, bound });
    }
    let q = nds.q();
    let mut c = DMatrix::zeros(1, q);
    let mut mono = vec![false; q];
    let (mut mono_batches, mut mixed_batches) = (0, 0);
    for r in nds.boundaries() {
        let npos = r.clone().filter(|&i| labels[i] > 0.0).count();
        let nneg = r.len() - npos;
        if npos == 0 || nneg == 0 {
            mono_batches += 1;
            r.clone().for_each(|i| mono[i] = true);
        } else {
            mixed_batches += 1;
            for i in r.clone() {
                c[(0, i)] = if labels[i] > 0.0 { 1.0 / npos as f64 } else { -1.0 / nneg as f64 };
            }
        }
    }
    let (vt, _) = linalg::right_lstsq(&c, nds.xbar());
    let out = &vt * nds.xbar();
    let residual = (&out - &c).amax();
    let mut max_mono_abs = 0.0f64;
    let mut min_mixed = f64::INFINITY;
    for i in 0..q {
        if mono[i] {
            max_mono_abs = max_mono_abs.max(out[(0, i)].abs());
        } else {
            min_mixed = min_mixed.min(labels[i] * out[(0, i)]);
        }
    }
    Ok(OverparamCheck {
        v: vt.iter().copied().collect(),
        mono_batches,
        mixed_batches,
        max_mono_abs,
        min_mixed_margin: min_mixed,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{normalize_ss, BatchPlan};

    #[test]
    fn overlapping_segments_depth() {
        // [0,1] (positive) and [0.8,1.8] (negative) overlap by 0.2.
        let x = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 0.8, 1.8]);
        let pd = penetration_depth(&x, &[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert!((pd.depth - 0.2).abs() < 1e-12);
        assert!(!pd.approximate);
    }

    #[test]
    fn separated_sets_have_zero_depth() {
        let x = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        assert_eq!(penetration_depth(&x, &[1.0, -1.0]).unwrap().depth, 0.0);
    }

    #[test]
    fn concentric_squares_2d() {
        // Unit square centered at origin vs square of half-side 0.25 also at
        // origin: the small one must move 0.5 + 0.25 along an axis.
        let big = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let mut cols: Vec<f64> = Vec::new();
        let mut y = Vec::new();
        for p in big {
            cols.extend([p[0] * 0.5, p[1] * 0.5]);
            y.push(1.0);
        }
        for p in big {
            cols.extend([p[0] * 0.25, p[1] * 0.25]);
            y.push(-1.0);
        }
        let x = DMatrix::from_column_slice(2, 8, &cols);
        let pd = penetration_depth(&x, &y).unwrap();
        assert!((pd.depth - 0.75).abs() < 1e-12, "{}", pd.depth);
    }

    #[test]
    fn cube_in_cube_3d_matches_axis_translation() {
        let mut cols = Vec::new();
        let mut y = Vec::new();
        for (s, lab) in [(1.0, 1.0), (0.5, -1.0)] {
            for m in 0..8 {
                for k in 0..3 {
                    cols.push(if m >> k & 1 == 1 { s } else { -s });
                }
                y.push(lab);
            }
        }
        let x = DMatrix::from_column_slice(3, 16, &cols);
        let pd = penetration_depth(&x, &y).unwrap();
        assert!(!pd.approximate);
        assert!((pd.depth - 1.5).abs() < 1e-9, "{}", pd.depth);
    }

    #[test]
    fn ls_margin_condition() {
        // GD normalization of two well separated clusters.
        let x = DMatrix::from_row_slice(1, 4, &[-2.0, -1.9, 1.9, 2.0]);
        let ds = Dataset::classification(x, vec![-1.0, -1.0, 1.0, 1.0]).unwrap();
        let r = gamma_robustness_report(&ds, 0.4, RobustnessThresholds::default()).unwrap();
        assert_eq!(r.gd_kind, SepKind::Ls);
        assert!(r.margin.unwrap() > 0.9 && r.cond1_pass);
    }

    #[test]
    fn pls_is_never_robust() {
        // Already centered, so GD normalization only rescales the rows.
        let x = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        let ds = Dataset::classification(x, vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let r = gamma_robustness_report(&ds, 1e-9, RobustnessThresholds::default()).unwrap();
        assert_eq!(r.gd_kind, SepKind::Pls);
        assert!(!r.robust && !r.cond1_pass);
    }

    fn gaussian(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 0);
        DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut r))
    }

    #[test]
    fn overparam_single_mixed_batch() {
        let x = gaussian(10, 4, 5);
        let ds = Dataset::classification(x, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let nds = normalize_ss(&ds, &BatchPlan::identity(4, 4).unwrap(), 0.0).unwrap();
        let c = overparam_direction_check(&nds).unwrap();
        assert_eq!(c.mixed_batches, 1);
        assert!(c.min_mixed_margin > 0.0 && c.residual < 1e-10, "{c:?}");
    }

    #[test]
    fn overparam_all_monochromatic() {
        let x = gaussian(8, 6, 6);
        let ds = Dataset::classification(x, vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]).unwrap();
        let nds = normalize_ss(&ds, &BatchPlan::identity(6, 3).unwrap(), 0.0).unwrap();
        let c = overparam_direction_check(&nds).unwrap();
        assert_eq!(c.mono_batches, 2);
        assert!(c.max_mono_abs <= 1e-12);
    }

    #[test]
    fn overparam_mixed_and_mono() {
        let x = gaussian(12, 6, 7);
        let ds = Dataset::classification(x, vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0]).unwrap();
        let nds = normalize_ss(&ds, &BatchPlan::identity(6, 3).unwrap(), 0.0).unwrap();
        let c = overparam_direction_check(&nds).unwrap();
        assert_eq!((c.mono_batches, c.mixed_batches), (1, 1));
        assert!(c.max_mono_abs <= 1e-10 && c.min_mixed_margin > 0.0);
    }

    #[test]
    fn overparam_requires_dimension() {
        let x = gaussian(2, 4, 8);
        let ds = Dataset::classification(x, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let nds = normalize_ss(&ds, &BatchPlan::identity(4, 2).unwrap(), 0.0).unwrap();
        assert_eq!(
            overparam_direction_check(&nds),
            Err(Error::NotOverparameterized { d: 2, bound: 2 })
        );
    }
}
