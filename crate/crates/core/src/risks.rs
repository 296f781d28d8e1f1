//! GD, SS and RR risks of the shallow model and their curvature constants.
//!
//! `smoothness_constant` and `strong_convexity_constant` return ‖X̄‖₂² and
//! σ_min(X̄X̄ᵀ). The squared risk ‖Y − MX̄‖²_F has Hessian 2X̄X̄ᵀ ⊗ I, so its
//! smoothness and strong convexity moduli in M are twice these numbers.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dataset::{NormKind, NormalizedDataset};
use crate::error::{Error, Result};
use crate::linalg::{sigma_min_gram, spectral_norm};
use crate::model::{loss_grad, loss_value, Loss, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskReport {
    pub value: f64,
    pub per_batch: Vec<f64>,
    pub kind: String,
    pub loss: Loss,
}

impl RiskReport {
    /// One `epoch,kind,loss,value` CSV row.
    pub fn csv_row(&self, epoch: usize) -> String {
        format!("{epoch},{},{},{:.17e}", self.kind, self.loss.name(), self.value)
    }
}

pub const RISK_CSV_HEADER: &str = "epoch,kind,loss,value";

fn check(params: &ModelParams, nds: &NormalizedDataset, loss: Loss) -> Result<DMatrix<f64>> {
    if params.d() != nds.d() {
        return Err(Error::DimensionMismatch(format!("model d = {}, data d = {}", params.d(), nds.d())));
    }
    let t = nds.targets().as_matrix();
    if t.nrows() != params.p() {
        return Err(Error::DimensionMismatch(format!("model p = {}, targets p = {}", params.p(), t.nrows())));
    }
    if loss == Loss::Logistic && nds.targets().labels().is_none() {
        return Err(Error::DimensionMismatch("logistic loss needs label targets".into()));
    }
    Ok(t)
}

/// Distorted (or GD) risk of `params` on `nds`.
pub fn risk(params: &ModelParams, nds: &NormalizedDataset, loss: Loss) -> Result<RiskReport> {
    let t = check(params, nds, loss)?;
    let yhat = params.m() * nds.xbar();
    let per_batch: Vec<f64> = nds
        .boundaries()
        .iter()
        .map(|r| {
            loss_value(
                loss,
                &yhat.columns(r.start, r.len()).into_owned(),
                &t.columns(r.start, r.len()).into_owned(),
            )
        })
        .collect();
    let value = nds.risk_weight() * per_batch.iter().sum::<f64>();
    Ok(RiskReport { value, per_batch, kind: nds.kind().name().to_string(), loss })
}

/// Risk as a function of the collapsed matrix M.
pub fn risk_of_m(m: &DMatrix<f64>, nds: &NormalizedDataset, loss: Loss) -> f64 {
    let t = nds.targets().as_matrix();
    nds.risk_weight() * loss_value(loss, &(m * nds.xbar()), &t)
}

/// Gradient of the (weighted) risk with respect to M.
pub fn risk_grad_m(m: &DMatrix<f64>, nds: &NormalizedDataset, loss: Loss) -> DMatrix<f64> {
    let t = nds.targets().as_matrix();
    let yhat = m * nds.xbar();
    loss_grad(loss, &yhat, &t) * nds.xbar().transpose() * nds.risk_weight()
}

fn perm_blocks(nds: &NormalizedDataset) -> Option<Vec<DMatrix<f64>>> {
    match nds.kind() {
        NormKind::RrSampled { perms } => {
            let n = nds.n();
            Some((0..perms.len()).map(|i| nds.xbar().columns(i * n, n).into_owned()).collect())
        }
        _ => None,
    }
}

/// G = ‖X̄‖₂². For RR-sampled the mean over permutations; for RR-full the
/// multiplicity-weighted value.
pub fn smoothness_constant(nds: &NormalizedDataset) -> f64 {
    if let Some(blocks) = perm_blocks(nds) {
        return blocks.iter().map(|b| spectral_norm(b).powi(2)).sum::<f64>() / blocks.len() as f64;
    }
    nds.risk_weight() * spectral_norm(nds.xbar()).powi(2)
}

/// α = σ_min(X̄X̄ᵀ), zero when rank deficient. For RR-sampled the mean of the
/// per-permutation values; for RR-full σ_min of the multiplicity-weighted Gram
/// matrix, which is at least the permutation average.
pub fn strong_convexity_constant(nds: &NormalizedDataset) -> f64 {
    if let Some(blocks) = perm_blocks(nds) {
        return blocks.iter().map(sigma_min_gram).sum::<f64>() / blocks.len() as f64;
    }
    nds.risk_weight() * sigma_min_gram(nds.xbar())
}
