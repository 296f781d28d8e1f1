//! Deep linear+BN networks `W_L Γ_L BN(… W_2 Γ_2 BN(W_1 X))` with
//! reverse-mode gradients through the batch statistics.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{diag_at_b, loss_grad, loss_value, scale_columns, Loss};
use crate::rng;

/// BN → Γ → W.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub gamma: DVector<f64>,
    pub w: DMatrix<f64>,
}

/// An optional raw input map followed by one or more BN blocks.
///
/// Depth 1 is a single block with no input map; depth L ≥ 2 has input map
/// W_1 and L−1 blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepLinearParams {
    pub input: Option<DMatrix<f64>>,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepGrads {
    pub input: Option<DMatrix<f64>>,
    pub blocks: Vec<(DVector<f64>, DMatrix<f64>)>,
}

impl DeepGrads {
    pub fn norm(&self) -> f64 {
        let mut s = self.input.as_ref().map_or(0.0, |a| a.norm_squared());
        for (g, w) in &self.blocks {
            s += g.norm_squared() + w.norm_squared();
        }
        s.sqrt()
    }
}

impl DeepLinearParams {
    pub fn new(input: Option<DMatrix<f64>>, blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::DimensionMismatch("need at least one block".into()));
        }
        let mut width = input.as_ref().map(|a| a.nrows());
        for (i, b) in blocks.iter().enumerate() {
            if b.w.ncols() != b.gamma.len() {
                return Err(Error::DimensionMismatch(format!("block {i}: W and Γ disagree")));
            }
            if let Some(h) = width {
                if h != b.gamma.len() {
                    return Err(Error::DimensionMismatch(format!("block {i}: input width {h}, Γ has {}", b.gamma.len())));
                }
            }
            width = Some(b.w.nrows());
        }
        Ok(DeepLinearParams { input, blocks })
    }

    /// Default initialization: W entries uniform in ±1/√fan_in, Γ = I.
    pub fn init(depth: usize, d: usize, width: usize, p: usize, seed: u64) -> Result<Self> {
        if depth == 0 {
            return Err(Error::DimensionMismatch("depth must be >= 1".into()));
        }
        let mut r = rng::stream(seed, 0);
        let mut uni = |rows: usize, cols: usize| {
            let a = 1.0 / (cols as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| r.random_range(-a..a))
        };
        if depth == 1 {
            let w = uni(p, d);
            return Self::new(None, vec![Block { gamma: DVector::from_element(d, 1.0), w }]);
        }
        let input = uni(width, d);
        let mut blocks = Vec::new();
        for l in 1..depth {
            let out = if l + 1 == depth { p } else { width };
            blocks.push(Block { gamma: DVector::from_element(width, 1.0), w: uni(out, width) });
        }
        Self::new(Some(input), blocks)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len() + usize::from(self.input.is_some())
    }

    pub fn in_dim(&self) -> usize {
        match &self.input {
            Some(a) => a.ncols(),
            None => self.blocks[0].gamma.len(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.blocks.last().unwrap().w.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().flat_map(|a| a.iter()).all(|v| v.is_finite())
            && self.blocks.iter().all(|b| b.gamma.iter().chain(b.w.iter()).all(|v| v.is_finite()))
    }

    /// In-place `θ ← θ − η g`.
    pub fn step(&mut self, g: &DeepGrads, eta: f64) {
        if let (Some(a), Some(ga)) = (self.input.as_mut(), g.input.as_ref()) {
            *a -= ga * eta;
        }
        for (b, (gg, gw)) in self.blocks.iter_mut().zip(&g.blocks) {
            b.gamma -= gg * eta;
            b.w -= gw * eta;
        }
    }

    pub fn zeros_like(&self) -> DeepGrads {
        DeepGrads {
            input: self.input.as_ref().map(|a| DMatrix::zeros(a.nrows(), a.ncols())),
            blocks: self
                .blocks
                .iter()
                .map(|b| (DVector::zeros(b.gamma.len()), DMatrix::zeros(b.w.nrows(), b.w.ncols())))
                .collect(),
        }
    }
}

/// Cached per-slice BN state for the backward pass.
struct BnCache {
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
}

fn bn_forward(h: &DMatrix<f64>, eps: f64, slice: usize) -> Result<BnCache> {
    let b = h.ncols();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let mut xhat = DMatrix::zeros(h.nrows(), b);
    let mut inv_std = DVector::zeros(h.nrows());
    for k in 0..h.nrows() {
        let row = h.row(k);
        let mu = row.sum() / b as f64;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / b as f64;
        if eps == 0.0 && var == 0.0 {
            return Err(Error::ConstantCoordinate { batch: Some(slice), coord: k });
        }
        let is = 1.0 / (var + eps).sqrt();
        inv_std[k] = is;
        for i in 0..b {
            xhat[(k, i)] = if var == 0.0 { 0.0 } else { (h[(k, i)] - mu) * is };
        }
    }
    Ok(BnCache { xhat, inv_std })
}

fn bn_backward(c: &BnCache, g: &DMatrix<f64>) -> DMatrix<f64> {
    let b = g.ncols() as f64;
    let mut out = DMatrix::zeros(g.nrows(), g.ncols());
    for k in 0..g.nrows() {
        let gr = g.row(k);
        let xr = c.xhat.row(k);
        let mean_g = gr.sum() / b;
        let mean_gx = gr.dot(&xr) / b;
        for i in 0..g.ncols() {
            out[(k, i)] = c.inv_std[k] * (gr[i] - mean_g - xr[i] * mean_gx);
        }
    }
    out
}

struct SliceTape {
    x: DMatrix<f64>,
    caches: Vec<BnCache>,
    /// Γ ⊙ BN output, the input of each block's W.
    scaled: Vec<DMatrix<f64>>,
}

fn slice_forward(params: &DeepLinearParams, x: DMatrix<f64>, eps: f64, slice: usize) -> Result<(DMatrix<f64>, SliceTape)> {
    let mut h = match &params.input {
        Some(a) => a * &x,
        None => x.clone(),
    };
    let mut caches = Vec::with_capacity(params.blocks.len());
    let mut scaled = Vec::with_capacity(params.blocks.len());
    for b in &params.blocks {
        let c = bn_forward(&h, eps, slice)?;
        let s = DMatrix::from_fn(c.xhat.nrows(), c.xhat.ncols(), |k, i| b.gamma[k] * c.xhat[(k, i)]);
        h = &b.w * &s;
        caches.push(c);
        scaled.push(s);
    }
    Ok((h, SliceTape { x, caches, scaled }))
}

fn check_shape(params: &DeepLinearParams, x: &DMatrix<f64>, slices: &[Range<usize>]) -> Result<()> {
    if x.nrows() != params.in_dim() {
        return Err(Error::DimensionMismatch(format!("input has {} rows, model expects {}", x.nrows(), params.in_dim())));
    }
    if slices.iter().any(|r| r.end > x.ncols()) {
        return Err(Error::DimensionMismatch("batch boundary beyond input".into()));
    }
    Ok(())
}

/// Network outputs, BN applied separately within each slice.
pub fn deep_forward(
    params: &DeepLinearParams,
    x: &DMatrix<f64>,
    slices: &[Range<usize>],
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_shape(params, x, slices)?;
    let mut out = DMatrix::zeros(params.out_dim(), x.ncols());
    for (j, r) in slices.iter().enumerate() {
        let (o, _) = slice_forward(params, x.columns(r.start, r.len()).into_owned(), eps, j)?;
        out.columns_mut(r.start, r.len()).copy_from(&o);
    }
    Ok(out)
}

/// Output of the last BN inside each slice, before the last Γ and W: the
/// normalized features the final linear layer sees.
pub fn deep_features(
    params: &DeepLinearParams,
    x: &DMatrix<f64>,
    slices: &[Range<usize>],
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_shape(params, x, slices)?;
    let width = params.blocks.last().unwrap().gamma.len();
    let mut out = DMatrix::zeros(width, x.ncols());
    for (j, r) in slices.iter().enumerate() {
        let (_, tape) = slice_forward(params, x.columns(r.start, r.len()).into_owned(), eps, j)?;
        out.columns_mut(r.start, r.len()).copy_from(&tape.caches.last().unwrap().xhat);
    }
    Ok(out)
}

/// Summed loss over the given slices.
pub fn deep_loss(
    params: &DeepLinearParams,
    x: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    slices: &[Range<usize>],
    eps: f64,
    loss: Loss,
) -> Result<f64> {
    let mut total = 0.0;
    for (j, r) in slices.iter().enumerate() {
        let (o, _) = slice_forward(params, x.columns(r.start, r.len()).into_owned(), eps, j)?;
        total += loss_value(loss, &o, &targets.columns(r.start, r.len()).into_owned());
    }
    Ok(total)
}

/// Loss and gradient of the summed loss over the given slices.
pub fn deep_grad(
    params: &DeepLinearParams,
    x: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    slices: &[Range<usize>],
    eps: f64,
    loss: Loss,
) -> Result<(f64, DeepGrads)> {
    check_shape(params, x, slices)?;
    if targets.ncols() != x.ncols() || targets.nrows() != params.out_dim() {
        return Err(Error::DimensionMismatch("targets do not match outputs".into()));
    }
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for (j, r) in slices.iter().enumerate() {
        let (out, tape) = slice_forward(params, x.columns(r.start, r.len()).into_owned(), eps, j)?;
        let t = targets.columns(r.start, r.len()).into_owned();
        total += loss_value(loss, &out, &t);
        let mut g = loss_grad(loss, &out, &t);
        for l in (0..params.blocks.len()).rev() {
            let b = &params.blocks[l];
            let s = &tape.scaled[l];
            grads.blocks[l].1 += &g * s.transpose();
            let gs = b.w.transpose() * &g;
            let c = &tape.caches[l];
            grads.blocks[l].0 += diag_rows_dot(&gs, &c.xhat);
            let gz = DMatrix::from_fn(gs.nrows(), gs.ncols(), |k, i| b.gamma[k] * gs[(k, i)]);
            g = bn_backward(c, &gz);
        }
        if let Some(ga) = grads.input.as_mut() {
            *ga += &g * tape.x.transpose();
        }
    }
    Ok((total, grads))
}

fn diag_rows_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    diag_at_b(&a.transpose(), &b.transpose())
}

/// Depth-1 parameters as a shallow model (W, Γ).
pub fn as_shallow(params: &DeepLinearParams) -> Option<crate::model::ModelParams> {
    if params.input.is_some() || params.blocks.len() != 1 {
        return None;
    }
    let b = &params.blocks[0];
    Some(crate::model::ModelParams { w: b.w.clone(), gamma: b.gamma.clone() })
}

/// Collapsed final linear map W_L Γ_L.
pub fn last_m(params: &DeepLinearParams) -> DMatrix<f64> {
    let b = params.blocks.last().unwrap();
    scale_columns(&b.w, &b.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::bn_batch;

    fn data(d: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 1);
        DMatrix::from_fn(d, q, |_, _| r.random_range(-2.0..2.0))
    }

    #[test]
    fn depth_one_matches_shallow() {
        let p = DeepLinearParams::init(1, 3, 0, 2, 5).unwrap();
        let x = data(3, 8, 2);
        let slices = vec![0..4, 4..8];
        let out = deep_forward(&p, &x, &slices, 0.0).unwrap();
        let sh = as_shallow(&p).unwrap();
        for r in &slices {
            let xb = bn_batch(&x.columns(r.start, r.len()).into_owned(), 0.0).unwrap();
            let o = sh.m() * xb;
            assert!((o - out.columns(r.start, r.len())).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_depth_two_outputs_are_normalized() {
        let p = DeepLinearParams::new(
            Some(DMatrix::identity(2, 2)),
            vec![Block { gamma: DVector::from_element(2, 1.0), w: DMatrix::identity(2, 2) }],
        )
        .unwrap();
        let x = data(2, 8, 3);
        let out = deep_forward(&p, &x, &[0..4, 4..8], 0.0).unwrap();
        for r in [0..4, 4..8] {
            for k in 0..2 {
                let row: Vec<f64> = (r.clone()).map(|i| out[(k, i)]).collect();
                let mu = row.iter().sum::<f64>() / 4.0;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 4.0;
                assert!(mu.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deep_gradients_match_finite_differences() {
        for (depth, loss, seed) in [(1, Loss::Squared, 1), (2, Loss::Squared, 2), (3, Loss::Logistic, 3), (2, Loss::Logistic, 4)] {
            let p = DeepLinearParams::init(depth, 3, 4, 1, seed).unwrap();
            let x = data(3, 8, seed + 10);
            let t = DMatrix::from_fn(1, 8, |_, i| if i % 3 == 0 { 1.0 } else { -1.0 });
            let slices = vec![0..4, 4..8];
            let eps = 1e-5;
            let (_, g) = deep_grad(&p, &x, &t, &slices, eps, loss).unwrap();
            let f = |q: &DeepLinearParams| deep_loss(q, &x, &t, &slices, eps, loss).unwrap();
            let h = 1e-6;
            let check = |fd: f64, an: f64| assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1.0), "{fd} vs {an}");
            if let Some(a) = &p.input {
                for i in 0..a.len() {
                    let (mut u, mut v) = (p.clone(), p.clone());
                    u.input.as_mut().unwrap()[i] += h;
                    v.input.as_mut().unwrap()[i] -= h;
                    check((f(&u) - f(&v)) / (2.0 * h), g.input.as_ref().unwrap()[i]);
                }
            }
            for l in 0..p.blocks.len() {
                for k in 0..p.blocks[l].gamma.len() {
                    let (mut u, mut v) = (p.clone(), p.clone());
                    u.blocks[l].gamma[k] += h;
                    v.blocks[l].gamma[k] -= h;
                    check((f(&u) - f(&v)) / (2.0 * h), g.blocks[l].0[k]);
                }
                for i in 0..p.blocks[l].w.len() {
                    let (mut u, mut v) = (p.clone(), p.clone());
                    u.blocks[l].w[i] += h;
                    v.blocks[l].w[i] -= h;
                    check((f(&u) - f(&v)) / (2.0 * h), g.blocks[l].1[i]);
                }
            }
        }
    }

    #[test]
    fn constant_coordinate_propagates() {
        let p = DeepLinearParams::init(2, 2, 2, 1, 0).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(matches!(deep_forward(&p, &x, &[0..2], 0.0), Err(Error::ConstantCoordinate { .. })));
    }

    #[test]
    fn depth_and_shapes() {
        let p = DeepLinearParams::init(3, 2, 5, 1, 9).unwrap();
        assert_eq!(p.depth(), 3);
        assert_eq!(p.in_dim(), 2);
        assert_eq!(p.out_dim(), 1);
        assert!(DeepLinearParams::new(None, vec![]).is_err());
    }
}
