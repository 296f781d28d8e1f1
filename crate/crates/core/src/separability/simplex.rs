//! Dense tableau simplex for `max cᵀz  s.t.  Az ≤ b, z ≥ 0` with `b ≥ 0`.
//!
//! The slack basis is feasible at the origin, so no phase one is needed. Bland's
//! rule (lowest eligible index for both entering and leaving variables)
//! prevents cycling on the many degenerate rows our feasibility programs have.

use crate::error::{Error, Result};

pub const LP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub z: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Unbounded,
}

/// Solves the program; `a` is row-major with `b.len()` rows of `c.len()` entries.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpOutcome> {
    let n = c.len();
    let m = b.len();
    if a.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("LP shape mismatch".into()));
    }
    if b.iter().any(|&v| v < 0.0) {
        return Err(Error::LpInfeasible);
    }
    let width = n + m + 1;
    // Row i: [A | I | b]; last row holds reduced costs (−c | 0 | 0).
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        t[i * width..i * width + n].copy_from_slice(&a[i]);
        t[i * width + n + i] = 1.0;
        t[i * width + width - 1] = b[i];
    }
    for j in 0..n {
        t[m * width + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let max_iter = 50 * (n + m) + 1000;
    for _ in 0..max_iter {
        let obj = &t[m * width..];
        let Some(enter) = (0..n + m).find(|&j| obj[j] < -LP_TOL) else {
            let mut z = vec![0.0; n];
            for (i, &bv) in basis.iter().enumerate() {
                if bv < n {
                    z[bv] = t[i * width + width - 1];
                }
            }
            let value = t[m * width + width - 1];
            return Ok(LpOutcome::Optimal(LpSolution { z, value }));
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = t[i * width + enter];
            if aij > LP_TOL {
                let ratio = t[i * width + width - 1] / aij;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - LP_TOL || (ratio <= lr + LP_TOL && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((r, _)) = leave else { return Ok(LpOutcome::Unbounded) };
        pivot(&mut t, width, m, r, enter);
        basis[r] = enter;
    }
    Err(Error::NumericallyIllConditioned("simplex iteration limit reached".into()))
}

fn pivot(t: &mut [f64], width: usize, m: usize, r: usize, col: usize) {
    let p = t[r * width + col];
    for j in 0..width {
        t[r * width + j] /= p;
    }
    t[r * width + col] = 1.0;
    let (head, tail) = t.split_at_mut(r * width);
    let (prow, rest) = tail.split_at_mut(width);
    let fix = |row: &mut [f64]| {
        let f = row[col];
        if f != 0.0 {
            for j in 0..width {
                row[j] -= f * prow[j];
            }
            row[col] = 0.0;
        }
    };
    for i in 0..r {
        fix(&mut head[i * width..(i + 1) * width]);
    }
    for i in 0..(m - r) {
        fix(&mut rest[i * width..(i + 1) * width]);
    }
}
