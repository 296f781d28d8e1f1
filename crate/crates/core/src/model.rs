//! Linear+BN model `f = W Γ BN(X)` acting on already-normalized features.
//!
//! Gradients are the exact derivatives of the summed losses. For the squared
//! loss that includes the factor 2 from ‖Y − MX̄‖²_F.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[serde(rename = "sq")]
    Squared,
    Logistic,
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Squared => "sq",
            Loss::Logistic => "logistic",
        }
    }
}

/// Numerically stable log(1 + e^{-z}).
pub fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Logistic sigmoid ρ(z).
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sum of losses of predictions `yhat` (p×q) against `targets` (p×q).
pub fn loss_value(loss: Loss, yhat: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
    match loss {
        Loss::Squared => (targets - yhat).norm_squared(),
        Loss::Logistic => yhat
            .iter()
            .zip(targets.iter())
            .map(|(&f, &y)| softplus_neg(y * f))
            .sum(),
    }
}

/// Derivative of the summed loss with respect to the predictions.
pub fn loss_grad(loss: Loss, yhat: &DMatrix<f64>, targets: &DMatrix<f64>) -> DMatrix<f64> {
    match loss {
        Loss::Squared => (yhat - targets) * 2.0,
        Loss::Logistic => yhat.zip_map(targets, |f, y| -y * sigmoid(-y * f)),
    }
}

/// Shallow parameters (W, Γ) with Γ diagonal, stored as its diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w: DMatrix<f64>,
    pub gamma: DVector<f64>,
}

/// Gradients with respect to W, Γ and the collapsed product M = WΓ.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub g_w: DMatrix<f64>,
    pub g_gamma: DVector<f64>,
    pub g_m: DMatrix<f64>,
}

impl ModelParams {
    pub fn new(w: DMatrix<f64>, gamma: DVector<f64>) -> Result<Self> {
        if w.ncols() != gamma.len() {
            return Err(Error::DimensionMismatch(format!(
                "W has {} columns, Γ has {} entries",
                w.ncols(),
                gamma.len()
            )));
        }
        Ok(ModelParams { w, gamma })
    }

    /// The (0, I) initialization.
    pub fn zero_identity(p: usize, d: usize) -> Self {
        ModelParams { w: DMatrix::zeros(p, d), gamma: DVector::from_element(d, 1.0) }
    }

    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// M = WΓ.
    pub fn m(&self) -> DMatrix<f64> {
        scale_columns(&self.w, &self.gamma)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.gamma.iter()).all(|v| v.is_finite())
    }

    fn check_input(&self, xbar: &DMatrix<f64>) -> Result<()> {
        if xbar.nrows() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "model expects d = {}, input has {} rows",
                self.d(),
                xbar.nrows()
            )));
        }
        Ok(())
    }
}

/// Multiplies column k of `a` by `s[k]`.
pub fn scale_columns(a: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for (k, mut col) in out.column_iter_mut().enumerate() {
        col *= s[k];
    }
    out
}

/// diag(Aᵀ B) for equally shaped A, B.
pub fn diag_at_b(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), (0..a.ncols()).map(|k| a.column(k).dot(&b.column(k))))
}

/// W Γ X̄ on already-normalized input.
pub fn forward(params: &ModelParams, xbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    params.check_input(xbar)?;
    Ok(params.m() * xbar)
}

/// Gradients from a given gradient of M: ∇_W = ∇_M Γ, ∇_Γ = diag(Wᵀ ∇_M).
pub fn grads_from_gm(params: &ModelParams, g_m: DMatrix<f64>) -> Grads {
    let g_w = scale_columns(&g_m, &params.gamma);
    let g_gamma = diag_at_b(&params.w, &g_m);
    Grads { g_w, g_gamma, g_m }
}

/// Gradient of the summed loss with respect to M for a normalized slice.
pub fn grad_m(
    params: &ModelParams,
    loss: Loss,
    xbar: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    params.check_input(xbar)?;
    if targets.ncols() != xbar.ncols() || targets.nrows() != params.p() {
        return Err(Error::DimensionMismatch(format!(
            "targets are {}x{}, expected {}x{}",
            targets.nrows(),
            targets.ncols(),
            params.p(),
            xbar.ncols()
        )));
    }
    let yhat = params.m() * xbar;
    Ok(loss_grad(loss, &yhat, targets) * xbar.transpose())
}

/// Exact gradients of ‖Y − WΓX̄‖²_F.
pub fn grad_minibatch_sq(params: &ModelParams, xbar: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Grads> {
    let g_m = grad_m(params, Loss::Squared, xbar, y)?;
    Ok(grads_from_gm(params, g_m))
}

/// Exact gradients of Σ_i −log ρ(y_i ŷ_i) for p = 1.
pub fn grad_minibatch_logistic(params: &ModelParams, xbar: &DMatrix<f64>, labels: &[f64]) -> Result<Grads> {
    if params.p() != 1 {
        return Err(Error::DimensionMismatch(format!("logistic loss needs p = 1, got {}", params.p())));
    }
    if let Some(&bad) = labels.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::NonBinaryLabel(bad));
    }
    let y = DMatrix::from_row_slice(1, labels.len(), labels);
    let g_m = grad_m(params, Loss::Logistic, xbar, &y)?;
    Ok(grads_from_gm(params, g_m))
}

/// Diagonal of the invariance matrix D = I + diag(WᵀW − Γ²).
#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceMatrix {
    pub diag: DVector<f64>,
}

impl InvarianceMatrix {
    /// ‖D‖₂ of a diagonal matrix.
    pub fn norm2(&self) -> f64 {
        self.diag.iter().fold(0.0, |a, &v| a.max(v.abs()))
    }
}

pub fn invariance(params: &ModelParams) -> InvarianceMatrix {
    let wtw = diag_at_b(&params.w, &params.w);
    let diag = DVector::from_iterator(
        params.d(),
        (0..params.d()).map(|k| 1.0 + wtw[k] - params.gamma[k] * params.gamma[k]),
    );
    InvarianceMatrix { diag }
}

/// max_k |diag(Wᵀ∇_W)_k − (∇_Γ)_k Γ_k| for the squared loss.
pub fn check_gradient_identity(params: &ModelParams, xbar: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let g = grad_minibatch_sq(params, xbar, y)?;
    let lhs = diag_at_b(&params.w, &g.g_w);
    Ok((0..params.d())
        .map(|k| (lhs[k] - g.g_gamma[k] * params.gamma[k]).abs())
        .fold(0.0, f64::max))
}

/// The collapsed signal ∇_W Γ + W diag(∇_Γ) driving M through one step.
pub fn collapsed_signal(params: &ModelParams, g: &Grads) -> DMatrix<f64> {
    scale_columns(&g.g_w, &params.gamma) + scale_columns(&params.w, &g.g_gamma)
}
