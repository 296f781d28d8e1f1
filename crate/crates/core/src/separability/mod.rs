//! Separability decomposition of labeled point sets, optimal directions of
//! the logistic risk, the GD divergence predicate, rank checks, and the
//! permutation statistics behind the large-batch arguments.
//!
//! All classifiers here are homogeneous (`x ↦ sign(uᵀx)`, no bias), matching
//! a linear layer on top of BN features.

pub mod robust;
pub mod simplex;
pub mod stats;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{NormKind, NormalizedDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{sigmoid, softplus_neg};
use simplex::{maximize, LpOutcome};

pub use robust::{
    gamma_robustness_report, overparam_direction_check, penetration_depth, OverparamCheck,
    PenetrationDepth, RobustnessReport, RobustnessThresholds,
};
pub use stats::{
    concentration_check, monochromatic_exact, monochromatic_stats, ConcentrationReport,
    MonochromaticStats,
};

/// Strictness threshold for "classified with positive margin".
pub const DECOMP_TOL: f64 = 1e-7;
const MM_KKT_TOL: f64 = 1e-8;
const MM_MAX_SWEEPS: usize = 1_000_000;
const NEWTON_GTOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SepKind {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "PLS")]
    Pls,
    #[serde(rename = "SC")]
    Sc,
}

impl SepKind {
    pub fn name(&self) -> &'static str {
        match self {
            SepKind::Ls => "LS",
            SepKind::Pls => "PLS",
            SepKind::Sc => "SC",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityDecomposition {
    pub ls_indices: Vec<usize>,
    pub sc_indices: Vec<usize>,
    pub kind: SepKind,
    /// Direction with `‖u‖_∞ ≤ 1`, certifying the split on the rescaled
    /// features `x / scale`.
    pub witness: Vec<f64>,
    /// Smallest `y uᵀx / scale` over the LS part (0 when it is empty).
    pub witness_margin: f64,
    /// Largest absolute entry of the features; tolerances are relative to it.
    pub scale: f64,
    pub tol: f64,
}

impl SeparabilityDecomposition {
    /// Checks the witness against the decomposition without solving anything.
    pub fn certifies(&self, x: &DMatrix<f64>, labels: &[f64]) -> bool {
        if x.ncols() != labels.len() || self.witness.len() != x.nrows() {
            return false;
        }
        let s = if self.scale > 0.0 { self.scale } else { 1.0 };
        let m = |i: usize| labels[i] * dot_col(&self.witness, x, i) / s;
        // The SC slack absorbs LP round-off, which is far below tol.
        self.ls_indices.iter().all(|&i| m(i) > self.tol)
            && self.sc_indices.iter().all(|&j| m(j).abs() <= self.tol)
    }
}

fn dot_col(u: &[f64], x: &DMatrix<f64>, j: usize) -> f64 {
    u.iter().zip(x.column(j).iter()).map(|(a, b)| a * b).sum()
}

fn check_labels(x: &DMatrix<f64>, labels: &[f64]) -> Result<()> {
    if x.ncols() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns but {} labels",
            x.ncols(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::NonBinaryLabel(bad));
    }
    Ok(())
}

/// Rows `y_j x_jᵀ / scale` as LP coefficients for `u = u⁺ − u⁻`.
fn signed_rows(x: &DMatrix<f64>, labels: &[f64], scale: f64) -> Vec<Vec<f64>> {
    (0..x.ncols())
        .map(|j| x.column(j).iter().map(|v| labels[j] * v / scale).collect())
        .collect()
}

/// LP variables are `[u⁺ (d), u⁻ (d), t]`. Builds `sign·aᵀu (+ t_coef·t) ≤ 0`.
fn lp_row(a: &[f64], sign: f64, t_coef: f64) -> Vec<f64> {
    let d = a.len();
    let mut r = vec![0.0; 2 * d + 1];
    for k in 0..d {
        r[k] = sign * a[k];
        r[d + k] = -sign * a[k];
    }
    r[2 * d] = t_coef;
    r
}

fn box_rows(d: usize, a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>) {
    for k in 0..2 * d {
        let mut r = vec![0.0; 2 * d + 1];
        r[k] = 1.0;
        a.push(r);
        b.push(1.0);
    }
}

fn solve_u(a: Vec<Vec<f64>>, b: Vec<f64>, d: usize) -> Result<(Vec<f64>, f64)> {
    let mut c = vec![0.0; 2 * d + 1];
    c[2 * d] = 1.0;
    match maximize(&c, &a, &b)? {
        LpOutcome::Optimal(s) => {
            let u = (0..d).map(|k| s.z[k] - s.z[d + k]).collect();
            Ok((u, s.value))
        }
        // t is bounded by the box on u; an unbounded report is a solver fault.
        LpOutcome::Unbounded => Err(Error::NumericallyIllConditioned("bounded LP reported unbounded".into())),
    }
}

/// Best strict margin of point `i` over directions that classify no point wrongly.
fn point_lp(rows: &[Vec<f64>], i: usize) -> Result<(Vec<f64>, f64)> {
    let d = rows[i].len();
    let mut a: Vec<Vec<f64>> = rows.iter().map(|r| lp_row(r, -1.0, 0.0)).collect();
    let mut b = vec![0.0; rows.len()];
    a.push(lp_row(&rows[i], -1.0, 1.0));
    b.push(0.0);
    box_rows(d, &mut a, &mut b);
    solve_u(a, b, d)
}

/// Max-min margin over `ls`, with every `sc` point held on the boundary.
fn witness_lp(rows: &[Vec<f64>], ls: &[usize], sc: &[usize]) -> Result<(Vec<f64>, f64)> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &i in ls {
        a.push(lp_row(&rows[i], -1.0, 1.0));
        b.push(0.0);
    }
    for &j in sc {
        a.push(lp_row(&rows[j], -1.0, 0.0));
        a.push(lp_row(&rows[j], 1.0, 0.0));
        b.extend([0.0, 0.0]);
    }
    box_rows(d, &mut a, &mut b);
    solve_u(a, b, d)
}

/// Splits the points into the maximal strictly separable part and the rest.
///
/// Point `i` is in the LS part iff some `u` with `‖u‖_∞ ≤ 1` has
/// `y_j uᵀx_j ≥ 0` for all `j` and `y_i uᵀx_i > tol` (features rescaled by
/// their largest absolute entry, so the split is scale invariant).
pub fn decompose(x: &DMatrix<f64>, labels: &[f64], tol: f64) -> Result<SeparabilityDecomposition> {
    check_labels(x, labels)?;
    let (d, q) = x.shape();
    if q == 0 {
        return Err(Error::InvalidDataset("decompose needs at least one point".into()));
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(SeparabilityDecomposition {
            ls_indices: vec![],
            sc_indices: (0..q).collect(),
            kind: SepKind::Sc,
            witness: vec![0.0; d],
            witness_margin: 0.0,
            scale,
            tol,
        });
    }
    let rows = signed_rows(x, labels, scale);
    let mut is_ls = vec![false; q];
    let mut decided = vec![false; q];
    for i in 0..q {
        if decided[i] {
            continue;
        }
        let (u, t) = point_lp(&rows, i)?;
        decided[i] = true;
        if t > tol {
            // u is feasible for every other point's program too.
            for j in 0..q {
                let m: f64 = rows[j].iter().zip(&u).map(|(a, b)| a * b).sum();
                if m > tol {
                    is_ls[j] = true;
                    decided[j] = true;
                }
            }
            is_ls[i] = true;
        }
    }
    let ls: Vec<usize> = (0..q).filter(|&i| is_ls[i]).collect();
    let sc: Vec<usize> = (0..q).filter(|&i| !is_ls[i]).collect();
    let kind = match (ls.is_empty(), sc.is_empty()) {
        (false, true) => SepKind::Ls,
        (true, false) => SepKind::Sc,
        _ => SepKind::Pls,
    };
    let (witness, witness_margin) = if ls.is_empty() {
        (vec![0.0; d], 0.0)
    } else {
        let (u, s) = witness_lp(&rows, &ls, &sc)?;
        if s <= tol {
            return Err(Error::NumericallyIllConditioned(format!(
                "aggregate witness margin {s:e} does not exceed tol"
            )));
        }
        (u, s)
    };
    Ok(SeparabilityDecomposition { ls_indices: ls, sc_indices: sc, kind, witness, witness_margin, scale, tol })
}

/// Decomposes the features of a normalized classification dataset.
pub fn decompose_nds(nds: &NormalizedDataset) -> Result<SeparabilityDecomposition> {
    let labels = nds
        .targets()
        .labels()
        .ok_or_else(|| Error::InvalidDataset("separability needs ±1 labels".into()))?;
    decompose(nds.xbar(), labels, DECOMP_TOL)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxMargin {
    pub u: DVector<f64>,
    pub margin: f64,
}

/// Hard-margin homogeneous classifier: min ‖w‖² s.t. `y_i wᵀx_i ≥ 1`,
/// returned as the unit vector `u = w/‖w‖` and its margin `min y uᵀx`.
pub fn max_margin(x: &DMatrix<f64>, labels: &[f64]) -> Result<MaxMargin> {
    let dec = decompose(x, labels, DECOMP_TOL)?;
    if dec.kind != SepKind::Ls {
        return Err(Error::NotSeparable);
    }
    dual_ascent(x, labels)
}

/// Coordinate ascent on the dual `max Σα − ½‖Σ α_i y_i x_i‖²`, `α ≥ 0`.
fn dual_ascent(x: &DMatrix<f64>, labels: &[f64]) -> Result<MaxMargin> {
    let (d, q) = x.shape();
    let a: Vec<DVector<f64>> = (0..q).map(|i| x.column(i) * labels[i]).collect();
    let sq: Vec<f64> = a.iter().map(|v| v.norm_squared()).collect();
    if sq.iter().any(|&s| s == 0.0) {
        return Err(Error::NotSeparable);
    }
    let mut alpha = vec![0.0; q];
    let mut w = DVector::zeros(d);
    for _ in 0..MM_MAX_SWEEPS {
        for i in 0..q {
            let next = (alpha[i] + (1.0 - a[i].dot(&w)) / sq[i]).max(0.0);
            let delta = next - alpha[i];
            if delta != 0.0 {
                w.axpy(delta, &a[i], 1.0);
                alpha[i] = next;
            }
        }
        let kkt = (0..q)
            .map(|i| {
                let r = 1.0 - a[i].dot(&w);
                if alpha[i] > 0.0 {
                    r.abs()
                } else {
                    r.max(0.0)
                }
            })
            .fold(0.0f64, f64::max);
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NotSeparable);
        }
        if kkt <= MM_KKT_TOL {
            let norm = w.norm();
            let u = w / norm;
            let margin = a.iter().map(|ai| ai.dot(&u)).fold(f64::INFINITY, f64::min);
            return Ok(MaxMargin { u, margin });
        }
    }
    Err(Error::NumericallyIllConditioned("max-margin dual ascent did not converge".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalDirection {
    /// Unit max-margin direction of the LS part inside `Span(X^SC)^⊥`.
    pub v: Vec<f64>,
    /// Finite minimizer of the logistic risk of the SC part on `Span(X^SC)`.
    pub v_sc: Vec<f64>,
    pub exists: bool,
    pub margin: f64,
    /// Rank of the SC features; below `d` for an SC dataset means the
    /// optimal direction is not well defined.
    pub sc_rank: usize,
}

/// Optimal direction of the logistic risk, `v* = v^SC + t·v` for `t → ∞`.
pub fn optimal_direction(
    dec: &SeparabilityDecomposition,
    x: &DMatrix<f64>,
    labels: &[f64],
) -> Result<OptimalDirection> {
    check_labels(x, labels)?;
    let d = x.nrows();
    let sc_x = x.select_columns(&dec.sc_indices);
    let q_basis = linalg::column_basis(&sc_x);
    let sc_labels: Vec<f64> = dec.sc_indices.iter().map(|&j| labels[j]).collect();
    let v_sc = if dec.sc_indices.is_empty() {
        DVector::zeros(d)
    } else {
        restricted_logistic_min(&q_basis, &sc_x, &sc_labels)?
    };
    if dec.kind == SepKind::Sc {
        return Ok(OptimalDirection {
            v: vec![0.0; d],
            v_sc: v_sc.iter().copied().collect(),
            exists: false,
            margin: 0.0,
            sc_rank: q_basis.ncols(),
        });
    }
    let mut proj = DMatrix::zeros(d, dec.ls_indices.len());
    for (c, &i) in dec.ls_indices.iter().enumerate() {
        let col: DVector<f64> = x.column(i).into();
        proj.set_column(c, &linalg::project_out(&col, &q_basis));
    }
    let ls_labels: Vec<f64> = dec.ls_indices.iter().map(|&i| labels[i]).collect();
    let mm = dual_ascent(&proj, &ls_labels)?;
    if mm.margin <= 0.0 {
        return Err(Error::NotSeparable);
    }
    Ok(OptimalDirection {
        v: mm.u.iter().copied().collect(),
        v_sc: v_sc.iter().copied().collect(),
        exists: true,
        margin: mm.margin,
        sc_rank: q_basis.ncols(),
    })
}

/// Damped Newton on `c ↦ mean softplus(−y cᵀQᵀx)`; returns `Q c`.
fn restricted_logistic_min(q: &DMatrix<f64>, x: &DMatrix<f64>, labels: &[f64]) -> Result<DVector<f64>> {
    let r = q.ncols();
    if r == 0 {
        return Ok(DVector::zeros(q.nrows()));
    }
    let z = q.transpose() * x; // r×m
    let m = labels.len() as f64;
    let f = |c: &DVector<f64>| -> f64 {
        let s = c.transpose() * &z;
        s.iter().zip(labels).map(|(v, y)| softplus_neg(y * v)).sum::<f64>() / m
    };
    let grad_hess = |c: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let s = c.transpose() * &z;
        let mut g = DVector::zeros(r);
        let mut h = DMatrix::zeros(r, r);
        for (j, &y) in labels.iter().enumerate() {
            let zj = z.column(j);
            let p = sigmoid(-y * s[j]);
            g.axpy(-y * p / m, &zj, 1.0);
            h.ger(p * (1.0 - p) / m, &zj, &zj, 1.0);
        }
        (g, h)
    };
    let mut c = DVector::zeros(r);
    let mut fc = f(&c);
    let (mut g, mut h) = grad_hess(&c);
    let mut gnorm = g.norm();
    for _ in 0..500 {
        if gnorm <= NEWTON_GTOL {
            return Ok(q * c);
        }
        let step = h
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&g))
            .ok_or_else(|| Error::NumericallyIllConditioned("SC Hessian not positive definite".into()))?;
        let slope = g.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &c - &step * t;
            let fv = f(&cand);
            let armijo = fv <= fc - 1e-4 * t * slope;
            // Near the minimizer the decrease drops below f64 resolution;
            // a full step that shrinks the gradient is then taken as is.
            let (gc, hc) = grad_hess(&cand);
            if armijo || (t == 1.0 && gc.norm() < gnorm) || t < 1e-12 {
                c = cand;
                fc = fv;
                g = gc;
                h = hc;
                gnorm = g.norm();
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NumericallyIllConditioned(format!(
        "Newton on the SC span stalled at gradient norm {gnorm:e}, ‖c‖ = {:e}",
        c.norm()
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceCall {
    Diverges,
    Safe,
}

/// GD risk diverges iff the distorted dataset has an LS part and its optimal
/// direction strictly misclassifies some GD point.
pub fn divergence_predicate(
    v_star: &OptimalDirection,
    kind: SepKind,
    gd_x: &DMatrix<f64>,
    gd_labels: &[f64],
) -> DivergenceCall {
    if kind == SepKind::Sc || !v_star.exists {
        return DivergenceCall::Safe;
    }
    let worst = (0..gd_x.ncols())
        .map(|i| gd_labels[i] * dot_col(&v_star.v, gd_x, i))
        .fold(f64::INFINITY, f64::min);
    if worst < -DECOMP_TOL {
        DivergenceCall::Diverges
    } else {
        DivergenceCall::Safe
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub predicted: usize,
    pub kind: String,
}

impl RankReport {
    /// True when the measured rank falls short of the generic value.
    pub fn deficient(&self) -> bool {
        self.rank < self.predicted
    }
}

/// SVD rank of X̄ and its generic value: `min{d, (B−1)·#batches}`.
pub fn rank_report(nds: &NormalizedDataset) -> RankReport {
    let d = nds.d() as u128;
    let b = nds.batch_size() as u128;
    let n = nds.n() as u128;
    let batches: u128 = match nds.kind() {
        NormKind::Ss { .. } => n / b,
        NormKind::Gd => 1,
        NormKind::RrFull => linalg::binomial(nds.n(), nds.batch_size()),
        NormKind::RrSampled { perms } => (n / b) * perms.len() as u128,
    };
    let predicted = d.min((b - 1).saturating_mul(batches)) as usize;
    RankReport { rank: linalg::rank(nds.xbar()), predicted, kind: nds.kind().name().to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(cols: &[[f64; 2]]) -> DMatrix<f64> {
        DMatrix::from_fn(2, cols.len(), |r, c| cols[c][r])
    }

    #[test]
    fn separable_line() {
        let x = pts(&[[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [-2.0, 0.0]]);
        let y = [1.0, 1.0, -1.0, -1.0];
        let dec = decompose(&x, &y, DECOMP_TOL).unwrap();
        assert_eq!(dec.kind, SepKind::Ls);
        assert_eq!(dec.ls_indices, vec![0, 1, 2, 3]);
        assert!(dec.certifies(&x, &y));
    }

    #[test]
    fn xor_is_sc() {
        let x = pts(&[[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]]);
        let y = [1.0, 1.0, -1.0, -1.0];
        let dec = decompose(&x, &y, DECOMP_TOL).unwrap();
        assert_eq!(dec.kind, SepKind::Sc);
        assert!(dec.certifies(&x, &y));
    }

    #[test]
    fn partial_split() {
        // First coordinate overlaps; second coordinate is separable only off
        // the overlapping pair.
        let x = pts(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [3.0, -1.0]]);
        let y = [1.0, -1.0, 1.0, -1.0];
        let dec = decompose(&x, &y, DECOMP_TOL).unwrap();
        assert_eq!(dec.kind, SepKind::Pls);
        assert_eq!(dec.sc_indices, vec![0, 1]);
        assert!(dec.certifies(&x, &y));
    }

    #[test]
    fn scale_invariant() {
        let x = pts(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [3.0, -1.0]]);
        let y = [1.0, -1.0, 1.0, -1.0];
        let a = decompose(&x, &y, DECOMP_TOL).unwrap();
        let b = decompose(&(&x * 1e-6), &y, DECOMP_TOL).unwrap();
        assert_eq!(a.ls_indices, b.ls_indices);
    }

    #[test]
    fn rejects_non_binary() {
        let x = pts(&[[1.0, 0.0]]);
        assert_eq!(decompose(&x, &[0.5], DECOMP_TOL), Err(Error::NonBinaryLabel(0.5)));
    }

    #[test]
    fn max_margin_symmetric_pair() {
        let x = pts(&[[1.0, 0.0], [-1.0, 0.0]]);
        let mm = max_margin(&x, &[1.0, -1.0]).unwrap();
        assert!((mm.u[0] - 1.0).abs() < 1e-9 && mm.u[1].abs() < 1e-9);
        assert!((mm.margin - 1.0).abs() < 1e-8);
    }

    #[test]
    fn max_margin_is_homogeneous() {
        // Through the origin the closer point sets the margin.
        let x = pts(&[[2.0, 0.0], [-4.0, 0.0]]);
        let mm = max_margin(&x, &[1.0, -1.0]).unwrap();
        assert!((mm.u[0] - 1.0).abs() < 1e-9);
        assert!((mm.margin - 2.0).abs() < 1e-7);
        let big = max_margin(&(&x * 10.0), &[1.0, -1.0]).unwrap();
        assert!((big.margin - 20.0).abs() < 1e-6);
    }

    #[test]
    fn max_margin_two_support_vectors() {
        // Support vectors (1,1) and (1,-1) with labels +1,+1 → u = (1,0), margin 1.
        let x = pts(&[[1.0, 1.0], [1.0, -1.0], [3.0, 0.5]]);
        let mm = max_margin(&x, &[1.0, 1.0, 1.0]).unwrap();
        assert!((mm.u[0] - 1.0).abs() < 1e-7);
        assert!((mm.margin - 1.0).abs() < 1e-7);
    }

    #[test]
    fn max_margin_rejects_overlap() {
        let x = pts(&[[1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(max_margin(&x, &[1.0, -1.0]), Err(Error::NotSeparable));
    }

    #[test]
    fn optimal_direction_pls() {
        // SC part lives on the first axis; LS part separates along the second.
        let x = pts(&[[1.0, 0.0], [2.0, 0.0], [0.5, 1.0], [0.0, 2.0], [-1.0, -1.0]]);
        let y = [1.0, -1.0, 1.0, 1.0, -1.0];
        let dec = decompose(&x, &y, DECOMP_TOL).unwrap();
        assert_eq!(dec.kind, SepKind::Pls);
        let od = optimal_direction(&dec, &x, &y).unwrap();
        assert!(od.exists);
        assert!(od.v[0].abs() < 1e-9 && (od.v[1] - 1.0).abs() < 1e-9);
        // v_sc minimizes log(1+e^{-c}) + log(1+e^{2c}) along the first axis.
        let c = od.v_sc[0];
        let g = -sigmoid(-c) + 2.0 * sigmoid(2.0 * c);
        assert!(g.abs() < 1e-9, "gradient {g}");
        assert!(od.v_sc[1].abs() < 1e-12);
    }

    #[test]
    fn optimal_direction_sc_is_zero() {
        let x = pts(&[[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]]);
        let y = [1.0, 1.0, -1.0, -1.0];
        let dec = decompose(&x, &y, DECOMP_TOL).unwrap();
        let od = optimal_direction(&dec, &x, &y).unwrap();
        assert!(!od.exists);
        assert!(od.v.iter().all(|&v| v == 0.0));
        assert_eq!(od.sc_rank, 2);
    }

    #[test]
    fn predicate_cases() {
        let x = pts(&[[1.0, 0.0], [-1.0, 0.0]]);
        let y = [1.0, -1.0];
        let good = OptimalDirection { v: vec![1.0, 0.0], v_sc: vec![0.0; 2], exists: true, margin: 1.0, sc_rank: 0 };
        assert_eq!(divergence_predicate(&good, SepKind::Ls, &x, &y), DivergenceCall::Safe);
        let bad = OptimalDirection { v: vec![-1.0, 0.0], ..good.clone() };
        assert_eq!(divergence_predicate(&bad, SepKind::Pls, &x, &y), DivergenceCall::Diverges);
        assert_eq!(divergence_predicate(&bad, SepKind::Sc, &x, &y), DivergenceCall::Safe);
    }
}
