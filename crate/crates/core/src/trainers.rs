//! SS, RR and GD training loops with per-epoch instrumentation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_gd, normalize_rr_from_plans, normalize_ss, BatchPlan, Dataset, NormalizedDataset};
use crate::deep::{deep_grad, deep_loss, last_m, DeepGrads, DeepLinearParams};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sigma_min_gram};
use crate::model::{grad_m, grads_from_gm, invariance, InvarianceMatrix, Loss, ModelParams};
use crate::risks::risk;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Manual,
    SsTheory,
    RrTheory,
    /// Fixed stepsize `c` every epoch.
    Constant,
}

/// η_k = c / k^β for epochs k = 1, 2, …
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    pub c: f64,
    pub beta: f64,
    pub mode: ScheduleMode,
}

impl StepsizeSchedule {
    pub fn manual(c: f64, beta: f64) -> Result<Self> {
        let s = StepsizeSchedule { c, beta, mode: ScheduleMode::Manual };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(eta: f64) -> Result<Self> {
        let s = StepsizeSchedule { c: eta, beta: 0.0, mode: ScheduleMode::Constant };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidSchedule(format!("c must be positive, got {}", self.c)));
        }
        if self.mode != ScheduleMode::Constant && !(self.beta > 0.5 && self.beta < 1.0) {
            return Err(Error::InvalidSchedule(format!("beta must lie in (1/2, 1), got {}", self.beta)));
        }
        Ok(())
    }

    /// Stepsize of epoch `k` (1-based).
    pub fn eta(&self, k: usize) -> f64 {
        match self.mode {
            ScheduleMode::Constant => self.c,
            _ => self.c / (k as f64).powf(self.beta),
        }
    }
}

/// Either a shallow model on pre-normalized data or a deep network that
/// renormalizes through its live weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Model {
    Shallow(ModelParams),
    Deep(DeepLinearParams),
}

impl Model {
    pub fn is_finite(&self) -> bool {
        match self {
            Model::Shallow(p) => p.is_finite(),
            Model::Deep(p) => p.is_finite(),
        }
    }

    /// Collapsed final linear map.
    pub fn m(&self) -> DMatrix<f64> {
        match self {
            Model::Shallow(p) => p.m(),
            Model::Deep(p) => last_m(p),
        }
    }

    /// (W, Γ) of the final block.
    pub fn last_layer(&self) -> ModelParams {
        match self {
            Model::Shallow(p) => p.clone(),
            Model::Deep(p) => {
                let b = p.blocks.last().unwrap();
                ModelParams { w: b.w.clone(), gamma: b.gamma.clone() }
            }
        }
    }

    pub fn shallow(&self) -> Option<&ModelParams> {
        match self {
            Model::Shallow(p) => Some(p),
            _ => None,
        }
    }

    pub fn deep(&self) -> Option<&DeepLinearParams> {
        match self {
            Model::Deep(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: StepsizeSchedule,
    pub epochs: usize,
    pub loss: Loss,
    pub epsilon: f64,
    pub momentum: f64,
    /// Permutations used to estimate the RR risk in `train_rr` traces.
    pub rr_eval_perms: usize,
    /// Keep per-step invariance drift records.
    pub record_steps: bool,
}

impl TrainConfig {
    pub fn new(schedule: StepsizeSchedule, epochs: usize, loss: Loss) -> Self {
        TrainConfig {
            schedule,
            epochs,
            loss,
            epsilon: crate::dataset::EPS_TRAIN,
            momentum: 0.0,
            rr_eval_perms: 100,
            record_steps: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidSchedule(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidSchedule("epsilon must be >= 0".into()));
        }
        if self.rr_eval_perms == 0 {
            return Err(Error::InvalidSchedule("rr_eval_perms must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eta: f64,
    /// Distorted risk (L_π for SS, sampled L_RR for RR, L_GD for GD).
    pub l_dist: f64,
    pub l_gd: f64,
    pub norm_d: f64,
    pub norm_w: f64,
    pub norm_gamma: f64,
    pub norm_m: f64,
}

/// One SGD step's change in the invariance matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDrift {
    pub epoch: usize,
    pub step: usize,
    pub eta: f64,
    /// ‖D_{j+1} − D_j‖₂.
    pub d_change: f64,
    /// ‖BN(batch)‖₂² of the batch used in this step.
    pub bn_norm2: f64,
    /// Distorted risk before the step.
    pub l_before: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converging,
    Plateaued,
    Diverging,
    BlowUp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// State before the first epoch (epoch 0).
    pub initial: Option<EpochRecord>,
    pub records: Vec<EpochRecord>,
    pub steps: Vec<StepDrift>,
    pub blew_up: bool,
    pub verdict: Option<Verdict>,
}

pub const TRACE_CSV_HEADER: &str = "epoch,eta,L_dist,L_gd,normD,normW,normG,normM";

impl TrainTrace {
    pub fn l_dist(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.l_dist).collect()
    }

    pub fn l_gd(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.l_gd).collect()
    }

    pub fn max_norm_m(&self) -> f64 {
        self.records.iter().map(|r| r.norm_m).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_CSV_HEADER);
        s.push('\n');
        for r in self.initial.iter().chain(&self.records) {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.epoch, r.eta, r.l_dist, r.l_gd, r.norm_d, r.norm_w, r.norm_gamma, r.norm_m
            ));
        }
        s
    }
}

/// Within a batch only the set of points matters; ordering each batch by
/// original index makes SS, RR and GD agree bit for bit when B = n.
fn canonical_plan(plan: &BatchPlan) -> BatchPlan {
    let b = plan.batch_size();
    let mut perm = plan.perm().to_vec();
    for chunk in perm.chunks_mut(b) {
        chunk.sort_unstable();
    }
    BatchPlan::new(perm, b).expect("reordering within batches keeps the plan valid")
}

/// Sum of the deep loss over the batches of each plan, averaged over plans.
fn deep_plan_loss(p: &DeepLinearParams, ds: &Dataset, t: &DMatrix<f64>, plans: &[BatchPlan], eps: f64, loss: Loss) -> Result<f64> {
    let mut total = 0.0;
    for plan in plans {
        let x = ds.x().select_columns(plan.perm());
        let tt = t.select_columns(plan.perm());
        let b = plan.batch_size();
        let slices: Vec<_> = (0..plan.num_batches()).map(|j| j * b..(j + 1) * b).collect();
        total += deep_loss(p, &x, &tt, &slices, eps, loss)?;
    }
    Ok(total / plans.len() as f64)
}

enum DistEval {
    /// Shallow: a fixed normalized dataset.
    Fixed(NormalizedDataset),
    /// Deep: average loss over these plans.
    Plans(Vec<BatchPlan>),
}

struct Ctx<'a> {
    ds: &'a Dataset,
    targets: DMatrix<f64>,
    cfg: &'a TrainConfig,
    gd: Option<NormalizedDataset>,
    dist: DistEval,
}

impl Ctx<'_> {
    fn l_gd(&self, model: &Model) -> Result<f64> {
        match model {
            Model::Shallow(p) => Ok(risk(p, self.gd.as_ref().unwrap(), self.cfg.loss)?.value),
            Model::Deep(p) => deep_loss(p, self.ds.x(), &self.targets, &[0..self.ds.n()], self.cfg.epsilon, self.cfg.loss),
        }
    }

    fn l_dist(&self, model: &Model) -> Result<f64> {
        match (&self.dist, model) {
            (DistEval::Fixed(nds), Model::Shallow(p)) => Ok(risk(p, nds, self.cfg.loss)?.value),
            (DistEval::Plans(plans), Model::Deep(p)) => {
                deep_plan_loss(p, self.ds, &self.targets, plans, self.cfg.epsilon, self.cfg.loss)
            }
            _ => unreachable!("evaluation kind always matches the model kind"),
        }
    }

    fn record(&self, model: &Model, epoch: usize, eta: f64) -> Result<EpochRecord> {
        let last = model.last_layer();
        Ok(EpochRecord {
            epoch,
            eta,
            l_dist: self.l_dist(model)?,
            l_gd: self.l_gd(model)?,
            norm_d: invariance(&last).norm2(),
            norm_w: spectral_norm(&last.w),
            norm_gamma: last.gamma.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            norm_m: spectral_norm(&model.m()),
        })
    }
}

enum Velocity {
    Shallow(DMatrix<f64>, DVector<f64>),
    Deep(DeepGrads),
}

/// One epoch over `plan`. Returns false if parameters became non-finite (the
/// model is then left at its last finite value).
fn run_epoch(
    ctx: &Ctx,
    model: &mut Model,
    vel: &mut Velocity,
    plan: &BatchPlan,
    epoch: usize,
    eta: f64,
    steps: &mut Vec<StepDrift>,
) -> Result<bool> {
    let cfg = ctx.cfg;
    let mu = cfg.momentum;
    let b = plan.batch_size();
    match model {
        Model::Shallow(p) => {
            let nds = normalize_ss(ctx.ds, plan, cfg.epsilon)?;
            let t = nds.targets().as_matrix();
            let Velocity::Shallow(vw, vg) = vel else { unreachable!() };
            for (j, r) in nds.boundaries().iter().enumerate() {
                let xb = nds.xbar().columns(r.start, r.len()).into_owned();
                let tb = t.columns(r.start, r.len()).into_owned();
                let (d_before, l_before) = if cfg.record_steps {
                    (Some(invariance(p)), risk(p, &nds, cfg.loss)?.value)
                } else {
                    (None, 0.0)
                };
                let g = grads_from_gm(p, grad_m(p, cfg.loss, &xb, &tb)?);
                *vw = &*vw * mu + &g.g_w;
                *vg = &*vg * mu + &g.g_gamma;
                let next = ModelParams { w: &p.w - &*vw * eta, gamma: &p.gamma - &*vg * eta };
                if !next.is_finite() {
                    return Ok(false);
                }
                if let Some(d0) = d_before {
                    steps.push(drift(epoch, j, eta, &d0, &invariance(&next), spectral_norm(&xb).powi(2), l_before));
                }
                *p = next;
            }
        }
        Model::Deep(p) => {
            let Velocity::Deep(v) = vel else { unreachable!() };
            for j in 0..plan.num_batches() {
                let cols = plan.batch(j);
                let x = ctx.ds.x().select_columns(cols);
                let t = ctx.targets.select_columns(cols);
                let (l_before, g) = deep_grad(p, &x, &t, &[0..b], cfg.epsilon, cfg.loss)?;
                let d_before = cfg.record_steps.then(|| invariance(&Model::Deep(p.clone()).last_layer()));
                if let (Some(va), Some(ga)) = (v.input.as_mut(), g.input.as_ref()) {
                    *va = &*va * mu + ga;
                }
                for ((vg, vw), (gg, gw)) in v.blocks.iter_mut().zip(&g.blocks) {
                    *vg = &*vg * mu + gg;
                    *vw = &*vw * mu + gw;
                }
                let mut next = p.clone();
                next.step(v, eta);
                if !next.is_finite() {
                    return Ok(false);
                }
                if let Some(d0) = d_before {
                    let d1 = invariance(&Model::Deep(next.clone()).last_layer());
                    steps.push(drift(epoch, j, eta, &d0, &d1, f64::NAN, l_before));
                }
                *p = next;
            }
        }
    }
    Ok(true)
}

fn drift(epoch: usize, step: usize, eta: f64, d0: &InvarianceMatrix, d1: &InvarianceMatrix, bn_norm2: f64, l_before: f64) -> StepDrift {
    let d_change = (&d1.diag - &d0.diag).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    StepDrift { epoch, step, eta, d_change, bn_norm2, l_before }
}

fn train_loop(
    ds: &Dataset,
    model: Model,
    cfg: &TrainConfig,
    dist: DistEval,
    mut next_plan: impl FnMut(usize) -> Result<BatchPlan>,
    mut on_epoch: impl FnMut(usize, &Model),
) -> Result<(Model, TrainTrace)> {
    cfg.validate()?;
    let targets = ds.targets().as_matrix();
    if cfg.loss == Loss::Logistic && ds.labels().is_none() {
        return Err(Error::DimensionMismatch("logistic loss needs label targets".into()));
    }
    let gd = match &model {
        Model::Shallow(p) => {
            if p.d() != ds.d() || p.p() != ds.p() {
                return Err(Error::DimensionMismatch("model shape does not match dataset".into()));
            }
            Some(normalize_gd(ds, cfg.epsilon)?)
        }
        Model::Deep(p) => {
            if p.in_dim() != ds.d() || p.out_dim() != ds.p() {
                return Err(Error::DimensionMismatch("model shape does not match dataset".into()));
            }
            None
        }
    };
    let ctx = Ctx { ds, targets, cfg, gd, dist };
    let mut trace = TrainTrace { initial: None, records: Vec::new(), steps: Vec::new(), blew_up: false, verdict: None };
    if cfg.epochs == 0 {
        return Ok((model, trace));
    }
    let mut model = model;
    trace.initial = Some(ctx.record(&model, 0, 0.0)?);
    let mut vel = match &model {
        Model::Shallow(p) => Velocity::Shallow(DMatrix::zeros(p.p(), p.d()), DVector::zeros(p.d())),
        Model::Deep(p) => Velocity::Deep(p.zeros_like()),
    };
    for k in 1..=cfg.epochs {
        on_epoch(k, &model);
        let plan = canonical_plan(&next_plan(k)?);
        let eta = cfg.schedule.eta(k);
        if !run_epoch(&ctx, &mut model, &mut vel, &plan, k, eta, &mut trace.steps)? {
            trace.blew_up = true;
            break;
        }
        let rec = ctx.record(&model, k, eta)?;
        if !(rec.l_dist.is_finite() && rec.l_gd.is_finite()) {
            trace.blew_up = true;
            break;
        }
        trace.records.push(rec);
    }
    trace.verdict = if trace.blew_up {
        Some(Verdict::BlowUp)
    } else {
        divergence_monitor(&trace, DEFAULT_WINDOW, DEFAULT_FACTOR).ok()
    };
    Ok((model, trace))
}

fn shallow_or_deep_dist(model: &Model, ds: &Dataset, plans: Vec<BatchPlan>, eps: f64) -> Result<DistEval> {
    Ok(match model {
        Model::Shallow(_) => {
            let plans: Vec<BatchPlan> = plans.iter().map(canonical_plan).collect();
            if plans.len() == 1 {
                DistEval::Fixed(normalize_ss(ds, &plans[0], eps)?)
            } else {
                DistEval::Fixed(normalize_rr_from_plans(ds, &plans, eps)?)
            }
        }
        Model::Deep(_) => DistEval::Plans(plans),
    })
}

/// Single shuffle: the same permutation every epoch.
pub fn train_ss(ds: &Dataset, plan: &BatchPlan, model: Model, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    train_ss_observed(ds, plan, model, cfg, |_, _| {})
}

/// `train_ss` that also hands the parameters at the start of every epoch to
/// `on_epoch`.
pub fn train_ss_observed(
    ds: &Dataset,
    plan: &BatchPlan,
    model: Model,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, &Model),
) -> Result<(Model, TrainTrace)> {
    plan.check_for(ds)?;
    let dist = shallow_or_deep_dist(&model, ds, vec![plan.clone()], cfg.epsilon)?;
    train_loop(ds, model, cfg, dist, |_| Ok(plan.clone()), on_epoch)
}

/// Random reshuffle: a fresh seeded permutation every epoch. `l_dist` is the
/// RR risk estimated on `cfg.rr_eval_perms` permutations drawn from a
/// separate stream of the same seed.
pub fn train_rr(ds: &Dataset, b: usize, model: Model, cfg: &TrainConfig, seed: u64) -> Result<(Model, TrainTrace)> {
    let mut eval_rng = rng::stream(seed, 1);
    let eval: Vec<BatchPlan> = (0..cfg.rr_eval_perms)
        .map(|_| BatchPlan::random(ds.n(), b, &mut eval_rng))
        .collect::<Result<_>>()?;
    let dist = shallow_or_deep_dist(&model, ds, eval, cfg.epsilon)?;
    let mut r = rng::stream(seed, 0);
    let n = ds.n();
    train_loop(ds, model, cfg, dist, move |_| BatchPlan::random(n, b, &mut r), |_, _| {})
}

/// The evaluation permutations `train_rr` uses for its RR risk estimate.
pub fn rr_eval_dataset(ds: &Dataset, b: usize, cfg: &TrainConfig, seed: u64) -> Result<NormalizedDataset> {
    let mut eval_rng = rng::stream(seed, 1);
    let plans: Vec<BatchPlan> = (0..cfg.rr_eval_perms)
        .map(|_| BatchPlan::random(ds.n(), b, &mut eval_rng).map(|p| canonical_plan(&p)))
        .collect::<Result<_>>()?;
    normalize_rr_from_plans(ds, &plans, cfg.epsilon)
}

/// Full-batch gradient descent.
pub fn train_gd(ds: &Dataset, model: Model, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    let plan = BatchPlan::identity(ds.n(), ds.n())?;
    train_ss(ds, &plan, model, cfg)
}

/// Constants entering the theory-mode stepsize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub alpha: f64,
    pub smoothness: f64,
    pub c_l: f64,
    pub y_fro: f64,
    pub xbar_fro2: f64,
    pub xi: f64,
    pub c_w2: f64,
    pub beta: f64,
    /// min{½, 2/α, √((2β−1) / (4(1 + 1/(2β−1)) C_w² C_L ‖X̄‖_F²))}.
    pub c_theory: f64,
}

/// Theory constants from α, ‖X̄‖_F², ‖Y‖_F, C_L and d.
pub fn theory_constants(alpha: f64, smoothness: f64, xbar_fro2: f64, y_fro: f64, c_l: f64, d: usize, beta: f64) -> TheoryConstants {
    let xi = (c_l.sqrt() + y_fro) / alpha.sqrt();
    let df = d as f64;
    let c_w2 = 1.5 + df * df * (0.5 + xi);
    let tb = 2.0 * beta - 1.0;
    let root = (tb / (4.0 * (1.0 + 1.0 / tb) * c_w2 * c_l * xbar_fro2)).sqrt();
    let c_theory = 0.5f64.min(2.0 / alpha).min(root);
    TheoryConstants { alpha, smoothness, c_l, y_fro, xbar_fro2, xi, c_w2, beta, c_theory }
}

/// Max distorted risk over the iterates of one epoch at stepsize `eta`.
fn first_epoch_max_risk(ds: &Dataset, plan: &BatchPlan, model: &ModelParams, eta: f64, eps: f64) -> Result<f64> {
    let plan = canonical_plan(plan);
    let nds = normalize_ss(ds, &plan, eps)?;
    let t = nds.targets().as_matrix();
    let mut p = model.clone();
    let mut worst = risk(&p, &nds, Loss::Squared)?.value;
    for r in nds.boundaries() {
        let xb = nds.xbar().columns(r.start, r.len()).into_owned();
        let tb = t.columns(r.start, r.len()).into_owned();
        let g = grads_from_gm(&p, grad_m(&p, Loss::Squared, &xb, &tb)?);
        p = ModelParams { w: &p.w - g.g_w * eta, gamma: &p.gamma - g.g_gamma * eta };
        let l = risk(&p, &nds, Loss::Squared)?.value;
        if !l.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(l);
    }
    Ok(worst)
}

fn theory_schedule(
    ds: &Dataset,
    probe: &BatchPlan,
    model: &ModelParams,
    alpha: f64,
    smoothness: f64,
    xbar_fro2: f64,
    beta: f64,
    multiplier: f64,
    eps: f64,
    mode: ScheduleMode,
) -> Result<(StepsizeSchedule, TheoryConstants)> {
    if alpha <= 0.0 {
        return Err(Error::NumericallyIllConditioned("distorted dataset is rank deficient (alpha = 0)".into()));
    }
    if !(multiplier > 0.0) {
        return Err(Error::InvalidSchedule("multiplier must be positive".into()));
    }
    let y_fro = ds.targets().as_matrix().norm();
    let c_l0 = y_fro * y_fro;
    let provisional = theory_constants(alpha, smoothness, xbar_fro2, y_fro, c_l0, ds.d(), beta);
    let measured = first_epoch_max_risk(ds, probe, model, provisional.c_theory * multiplier, eps)?;
    let tc = theory_constants(alpha, smoothness, xbar_fro2, y_fro, measured.max(c_l0), ds.d(), beta);
    let s = StepsizeSchedule { c: tc.c_theory * multiplier, beta, mode };
    s.validate()?;
    Ok((s, tc))
}

/// Theory-mode SS schedule for the squared loss; `multiplier` scales the
/// computed constant.
pub fn ss_theory_schedule(
    ds: &Dataset,
    plan: &BatchPlan,
    model: &ModelParams,
    beta: f64,
    multiplier: f64,
    eps: f64,
) -> Result<(StepsizeSchedule, TheoryConstants)> {
    let nds = normalize_ss(ds, plan, eps)?;
    let alpha = sigma_min_gram(nds.xbar());
    let g = spectral_norm(nds.xbar()).powi(2);
    let fro2 = nds.xbar().norm_squared();
    theory_schedule(ds, plan, model, alpha, g, fro2, beta, multiplier, eps, ScheduleMode::SsTheory)
}

/// Theory-mode RR schedule: α and G averaged over `num_perms` seeded
/// permutations, ‖X̄‖_F² maximized over them.
pub fn rr_theory_schedule(
    ds: &Dataset,
    b: usize,
    model: &ModelParams,
    beta: f64,
    multiplier: f64,
    eps: f64,
    num_perms: usize,
    seed: u64,
) -> Result<(StepsizeSchedule, TheoryConstants)> {
    let mut r = rng::stream(seed, 2);
    let plans: Vec<BatchPlan> = (0..num_perms.max(1)).map(|_| BatchPlan::random(ds.n(), b, &mut r)).collect::<Result<_>>()?;
    let (mut alpha, mut g, mut fro2) = (0.0, 0.0, 0.0f64);
    for p in &plans {
        let nds = normalize_ss(ds, p, eps)?;
        alpha += sigma_min_gram(nds.xbar());
        g += spectral_norm(nds.xbar()).powi(2);
        fro2 = fro2.max(nds.xbar().norm_squared());
    }
    let k = plans.len() as f64;
    theory_schedule(ds, &plans[0], model, alpha / k, g / k, fro2, beta, multiplier, eps, ScheduleMode::RrTheory)
}

/// Residuals of L(k)−L* ≤ (1−αη_k/2)(L(k−1)−L*) + Cη_k² per epoch, plus the
/// C that was used.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochInequality {
    pub residuals: Vec<f64>,
    pub c: f64,
}

/// Checks the one-epoch inequality on a trace's distorted risk. With
/// `c = None` the smallest C making every residual nonpositive is fitted.
pub fn check_epoch_inequality(trace: &TrainTrace, alpha: f64, l_star: f64, c: Option<f64>) -> EpochInequality {
    let Some(init) = &trace.initial else {
        return EpochInequality { residuals: Vec::new(), c: c.unwrap_or(0.0) };
    };
    let mut prev = init.l_dist - l_star;
    // Slack each epoch needs, divided by η².
    let mut ratios = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let gap = r.l_dist - l_star;
        let slack = gap - (1.0 - alpha * r.eta / 2.0) * prev;
        ratios.push((slack / (r.eta * r.eta), r.eta));
        prev = gap;
    }
    let c = c.unwrap_or_else(|| ratios.iter().map(|&(q, _)| q).fold(0.0, f64::max));
    let residuals = ratios.iter().map(|&(q, eta)| (q - c) * eta * eta).collect();
    EpochInequality { residuals, c }
}

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_FACTOR: f64 = 2.0;

fn slope(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = v.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &y) in v.iter().enumerate() {
        let dx = i as f64 - xm;
        num += dx * (y - ym);
        den += dx * dx;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Classifies a trace's GD risk. `diverging` iff the last window's mean is at
/// least `factor` times the first window's and the last window's least-squares
/// trend is nondecreasing.
pub fn divergence_monitor(trace: &TrainTrace, window: usize, factor: f64) -> Result<Verdict> {
    if trace.blew_up {
        return Ok(Verdict::BlowUp);
    }
    classify_series(&trace.l_gd(), window, factor)
}

/// The monitor's rule applied to any series.
pub fn classify_series(l: &[f64], window: usize, factor: f64) -> Result<Verdict> {
    let need = 2 * window.max(1);
    if l.len() < need {
        return Err(Error::TraceTooShort { len: l.len(), need });
    }
    let w = window.max(1);
    let first = &l[..w];
    let last = &l[l.len() - w..];
    let mf = first.iter().sum::<f64>() / w as f64;
    let ml = last.iter().sum::<f64>() / w as f64;
    if ml >= factor * mf && slope(last) >= 0.0 {
        Ok(Verdict::Diverging)
    } else if ml < mf {
        Ok(Verdict::Converging)
    } else {
        Ok(Verdict::Plateaued)
    }
}

/// Window means of a series (non-overlapping, trailing remainder dropped).
pub fn window_means(l: &[f64], window: usize) -> Vec<f64> {
    l.chunks_exact(window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}
