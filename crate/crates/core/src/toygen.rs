//! Generators for the toy regression and classification datasets and the
//! Gaussian synthetic problems, plus their Monte-Carlo sweeps and the
//! two-layer separability experiment.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_gd, normalize_rr_full, normalize_ss, BatchPlan, Dataset};
use crate::deep::{deep_features, DeepLinearParams};
use crate::error::{Error, Result};
use crate::model::Loss;
use crate::optima::optimum;
use crate::rng;
use crate::separability::{
    decompose, decompose_nds, divergence_predicate, optimal_direction, rank_report, DivergenceCall, SepKind, DECOMP_TOL,
};
use crate::trainers::{train_ss, Model, StepsizeSchedule, TrainConfig, Verdict};

/// Toy regression with 16n points, d = p = 1.
///
/// A holds 4n points strictly inside (3/4, 1); the clusters are A, −A,
/// −A + ½ and A − ½ with targets +1, +1, −1, −1.
pub fn gen_toy_regression(n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidDataset("n must be >= 1".into()));
    }
    let k = 4 * n;
    let a: Vec<f64> = (1..=k).map(|i| 0.75 + (i as f64 / (k as f64 + 1.0)) * 0.25).collect();
    let mut x = Vec::with_capacity(16 * n);
    let mut y = Vec::with_capacity(16 * n);
    for (shift, sign, label) in [(0.0, 1.0, 1.0), (0.0, -1.0, 1.0), (0.5, -1.0, -1.0), (-0.5, 1.0, -1.0)] {
        for &v in &a {
            x.push(sign * v + shift);
            y.push(label);
        }
    }
    Dataset::regression(DMatrix::from_row_slice(1, x.len(), &x), DMatrix::from_row_slice(1, y.len(), &y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyGroup {
    Cor,
    Err,
    Bdr,
}

/// Toy classification dataset with group metadata per column.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyClassification {
    pub dataset: Dataset,
    pub groups: Vec<ToyGroup>,
}

/// Toy classification with 2n + 6 points in d = 2.
///
/// Positives: n points on the diagonal segment from (2−1/(2n), 2−1/(2n)) to
/// (2+1/(2n), 2+1/(2n)), the point (3, 2.5), and (−3, 1.5), (1, −0.5) on the
/// line y = −x/2. Negatives are the negated positives.
pub fn gen_toy_classification(n: usize) -> Result<ToyClassification> {
    if n == 0 {
        return Err(Error::InvalidDataset("n must be >= 1".into()));
    }
    let h = 1.0 / (2.0 * n as f64);
    let mut pos: Vec<([f64; 2], ToyGroup)> = Vec::new();
    for i in 0..n {
        let t = if n == 1 { 2.0 } else { 2.0 - h + 2.0 * h * i as f64 / (n - 1) as f64 };
        pos.push(([t, t], ToyGroup::Cor));
    }
    pos.push(([3.0, 2.5], ToyGroup::Err));
    pos.push(([-3.0, 1.5], ToyGroup::Bdr));
    pos.push(([1.0, -0.5], ToyGroup::Bdr));
    let q = 2 * pos.len();
    let mut x = DMatrix::zeros(2, q);
    let mut labels = Vec::with_capacity(q);
    let mut groups = Vec::with_capacity(q);
    for (sign, label) in [(1.0, 1.0), (-1.0, -1.0)] {
        for (pt, g) in &pos {
            let c = labels.len();
            x[(0, c)] = sign * pt[0];
            x[(1, c)] = sign * pt[1];
            labels.push(label);
            groups.push(*g);
        }
    }
    Ok(ToyClassification { dataset: Dataset::classification(x, labels)?, groups })
}

/// x ~ N(0, I_d), M_true ~ U[−1, 1]^{1×d}, y = M_true x + N(0, noise²).
pub fn gen_synthetic_regression(n: usize, d: usize, b: usize, noise: f64, seed: u64) -> Result<(Dataset, DMatrix<f64>)> {
    if b < 2 || n % b != 0 {
        return Err(Error::InvalidPlan(format!("B = {b} must be >= 2 and divide n = {n}")));
    }
    let mut r = rng::stream(seed, 0);
    let m_true = DMatrix::from_fn(1, d, |_, _| r.random_range(-1.0..=1.0));
    let x = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut r));
    let eps = DMatrix::from_fn(1, n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut r);
        noise * z
    });
    let y = &m_true * &x + eps;
    Ok((Dataset::regression(x, y)?, m_true))
}

/// One permutation of the toy-regression sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRegSample {
    pub index: usize,
    pub m: f64,
    /// Number of normalized points at (+1, +1).
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRegMc {
    pub n: usize,
    pub num_perms: usize,
    pub frac_nonzero: f64,
    pub median_abs: f64,
    /// Sampled-RR optimum: with B = 2 every X̄_πX̄_πᵀ = 16n, so it is the mean
    /// of the SS optima.
    pub rr_estimate: f64,
    /// max over permutations of |M_π* − (k − 4n)/(4n)|.
    pub max_identity_err: f64,
    pub samples: Vec<ToyRegSample>,
}

/// Monte-Carlo SS optima of the toy regression dataset with B = 2.
pub fn mc_toy_regression(n: usize, num_perms: usize, seed: u64) -> Result<ToyRegMc> {
    let ds = gen_toy_regression(n)?;
    let samples: Vec<ToyRegSample> = (0..num_perms)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let plan = BatchPlan::random(ds.n(), 2, &mut r)?;
            let nds = normalize_ss(&ds, &plan, 0.0)?;
            let y = nds.targets().as_matrix();
            let k = (0..nds.q()).filter(|&c| nds.xbar()[(0, c)] == 1.0 && y[(0, c)] == 1.0).count();
            Ok(ToyRegSample { index: i, m: optimum(&nds).m[0], k })
        })
        .collect::<Result<_>>()?;
    let four_n = 4.0 * n as f64;
    let max_identity_err = samples.iter().map(|s| (s.m - (s.k as f64 - four_n) / four_n).abs()).fold(0.0, f64::max);
    let frac_nonzero = samples.iter().filter(|s| s.m.abs() > 1e-12).count() as f64 / num_perms.max(1) as f64;
    let mut abs: Vec<f64> = samples.iter().map(|s| s.m.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_abs = median_sorted(&abs);
    let rr_estimate = samples.iter().map(|s| s.m).sum::<f64>() / num_perms.max(1) as f64;
    Ok(ToyRegMc { n, num_perms, frac_nonzero, median_abs, rr_estimate, max_identity_err, samples })
}

/// BN epsilon for the toy classification sweep. Some batches pair two points
/// with an equal coordinate (x = ±3), which is undefined at epsilon = 0; a
/// tiny epsilon sends that coordinate to 0 and leaves the others at ±1 up to
/// 1e−12.
pub const TOY_CLF_EPS: f64 = 1e-12;

/// Batch plan of permutation `index` in the toy classification sweep.
pub fn toy_clf_plan(n_points: usize, seed: u64, index: usize) -> Result<BatchPlan> {
    let mut r = rng::stream(seed, index as u64);
    BatchPlan::random(n_points, 2, &mut r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyClfSample {
    pub index: usize,
    pub kind: SepKind,
    /// |cos| between v_π* and (1, −1).
    pub cos_anti: f64,
    /// PLS with v_π* along (1, −1).
    pub good: bool,
    pub diverges: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyClfMc {
    pub n: usize,
    pub num_perms: usize,
    pub epsilon: f64,
    pub gd_kind: SepKind,
    pub v_gd: Vec<f64>,
    pub frac_pls: f64,
    pub frac_good: f64,
    pub frac_diverges: f64,
    /// Full RR dataset kind and rank; only computed for n <= 4.
    pub rr_kind: Option<SepKind>,
    pub rr_rank: Option<usize>,
    pub samples: Vec<ToyClfSample>,
}

/// Monte-Carlo SS decompositions of the toy classification dataset, B = 2.
pub fn mc_toy_classification(n: usize, num_perms: usize, seed: u64, epsilon: f64) -> Result<ToyClfMc> {
    let toy = gen_toy_classification(n)?;
    let ds = &toy.dataset;
    let labels = ds.labels().expect("classification");
    let gd = normalize_gd(ds, epsilon)?;
    let gd_dec = decompose_nds(&gd)?;
    let v_gd = optimal_direction(&gd_dec, gd.xbar(), labels)?.v;
    let samples: Vec<ToyClfSample> = (0..num_perms)
        .into_par_iter()
        .map(|i| {
            let nds = normalize_ss(ds, &toy_clf_plan(ds.n(), seed, i)?, epsilon)?;
            let lab = nds.targets().labels().expect("classification");
            let dec = decompose_nds(&nds)?;
            let od = optimal_direction(&dec, nds.xbar(), lab)?;
            let cos_anti = (od.v[0] - od.v[1]).abs() / 2f64.sqrt();
            let good = dec.kind == SepKind::Pls && cos_anti >= 1.0 - 1e-9;
            let diverges = divergence_predicate(&od, dec.kind, gd.xbar(), labels) == DivergenceCall::Diverges;
            Ok(ToyClfSample { index: i, kind: dec.kind, cos_anti, good, diverges })
        })
        .collect::<Result<_>>()?;
    let (rr_kind, rr_rank) = if n <= 4 {
        let rr = normalize_rr_full(ds, 2, epsilon)?;
        (Some(decompose_nds(&rr)?.kind), Some(rank_report(&rr).rank))
    } else {
        (None, None)
    };
    let frac = |f: &dyn Fn(&ToyClfSample) -> bool| samples.iter().filter(|s| f(s)).count() as f64 / num_perms.max(1) as f64;
    Ok(ToyClfMc {
        n,
        num_perms,
        epsilon,
        gd_kind: gd_dec.kind,
        v_gd,
        frac_pls: frac(&|s| s.kind == SepKind::Pls),
        frac_good: frac(&|s| s.good),
        frac_diverges: frac(&|s| s.diverges),
        rr_kind,
        rr_rank,
        samples,
    })
}

/// Two Gaussian classes in the plane: `n_per_class` points each at
/// N(±mu·e1, I), positives first.
pub fn gen_two_gaussians(n_per_class: usize, mu: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidDataset("n_per_class must be >= 1".into()));
    }
    let mut r = rng::stream(seed, 2);
    let n = 2 * n_per_class;
    let mut x = DMatrix::zeros(2, n);
    let mut y = vec![0.0; n];
    for c in 0..n {
        let lab = if c < n_per_class { 1.0 } else { -1.0 };
        let z0: f64 = StandardNormal.sample(&mut r);
        let z1: f64 = StandardNormal.sample(&mut r);
        x[(0, c)] = lab * mu + z0;
        x[(1, c)] = z1;
        y[c] = lab;
    }
    Dataset::classification(x, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig4Config {
    pub n_per_class: usize,
    pub mu: f64,
    pub batch_size: usize,
    pub width: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub epochs: usize,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Self { n_per_class: 32, mu: 2.0, batch_size: 16, width: 2, eta: 1e-2, epsilon: 1e-5, epochs: 10_000 }
    }
}

/// Kinds are `None` when the decomposition is numerically ill-conditioned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig4Run {
    pub seed: u64,
    pub gd_start: Option<SepKind>,
    pub gd_end: Option<SepKind>,
    pub ss_start: Option<SepKind>,
    pub ss_end: Option<SepKind>,
    pub l_gd_start: f64,
    pub l_gd_end: f64,
    pub verdict: Option<Verdict>,
}

impl Fig4Run {
    /// GD stays SC while the SS dataset goes from SC to LS or PLS.
    pub fn transitioned(&self) -> bool {
        let sc = Some(SepKind::Sc);
        self.gd_start == sc
            && self.gd_end == sc
            && self.ss_start == sc
            && matches!(self.ss_end, Some(SepKind::Ls | SepKind::Pls))
    }
}

fn fig4_kinds(p: &DeepLinearParams, ds: &Dataset, plan: &BatchPlan, eps: f64) -> Result<(Option<SepKind>, Option<SepKind>)> {
    let lab = ds.labels().expect("classification");
    let n = ds.n();
    let gd = deep_features(p, ds.x(), &[0..n], eps)?;
    let xs = ds.x().select_columns(plan.perm());
    let ls: Vec<f64> = plan.perm().iter().map(|&i| lab[i]).collect();
    let b = plan.batch_size();
    let slices: Vec<_> = (0..plan.num_batches()).map(|j| j * b..(j + 1) * b).collect();
    let ss = deep_features(p, &xs, &slices, eps)?;
    let kind = |r: Result<crate::separability::SeparabilityDecomposition>| match r {
        Ok(dec) => Ok(Some(dec.kind)),
        Err(Error::NumericallyIllConditioned(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok((kind(decompose(&gd, lab, DECOMP_TOL))?, kind(decompose(&ss, &ls, DECOMP_TOL))?))
}

/// Trains a depth-2 linear+BN network with SS and logistic loss, and
/// decomposes the GD and SS features through the first layer before and
/// after training.
pub fn fig4_run(cfg: &Fig4Config, seed: u64) -> Result<Fig4Run> {
    let ds = gen_two_gaussians(cfg.n_per_class, cfg.mu, seed)?;
    let mut r = rng::stream(seed, 1);
    let plan = BatchPlan::random(ds.n(), cfg.batch_size, &mut r)?;
    let p0 = DeepLinearParams::init(2, 2, cfg.width, 1, seed)?;
    let (gd_start, ss_start) = fig4_kinds(&p0, &ds, &plan, cfg.epsilon)?;
    let mut tc = TrainConfig::new(StepsizeSchedule::constant(cfg.eta)?, cfg.epochs, Loss::Logistic);
    tc.epsilon = cfg.epsilon;
    let (model, trace) = train_ss(&ds, &plan, Model::Deep(p0), &tc)?;
    let p1 = model.deep().expect("deep model");
    let (gd_end, ss_end) = fig4_kinds(p1, &ds, &plan, cfg.epsilon)?;
    let lg = trace.l_gd();
    Ok(Fig4Run {
        seed,
        gd_start,
        gd_end,
        ss_start,
        ss_end,
        l_gd_start: lg.first().copied().unwrap_or(f64::NAN),
        l_gd_end: lg.last().copied().unwrap_or(f64::NAN),
        verdict: trace.verdict,
    })
}

pub fn fig4_experiment(cfg: &Fig4Config, seeds: &[u64]) -> Result<Vec<Fig4Run>> {
    seeds.par_iter().map(|&s| fig4_run(cfg, s)).collect()
}

pub fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        l if l % 2 == 1 => v[l / 2],
        l => 0.5 * (v[l / 2 - 1] + v[l / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::normalize_gd;

    #[test]
    fn toy_regression_layout() {
        let ds = gen_toy_regression(1).unwrap();
        assert_eq!(ds.n(), 16);
        assert!(ds.x().iter().all(|v| v.abs() < 1.0));
        assert!(ds.x().row(0).iter().take(4).all(|&v| v > 0.75 && v < 1.0));
        assert!(ds.x().sum().abs() < 1e-12);
        let m = optimum(&normalize_gd(&ds, 0.0).unwrap()).m[0];
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn toy_classification_layout() {
        let t = gen_toy_classification(4).unwrap();
        let ds = &t.dataset;
        assert_eq!(ds.n(), 14);
        assert_eq!((ds.x()[(0, 4)], ds.x()[(1, 4)]), (3.0, 2.5));
        assert_eq!((ds.x()[(0, 6)], ds.x()[(1, 6)]), (1.0, -0.5));
        assert_eq!(t.groups[5], ToyGroup::Bdr);
        assert!(ds.x().column_sum().norm() < 1e-12);
        // Negating features and labels maps the dataset to itself.
        for c in 0..7 {
            assert_eq!(ds.x().column(c), -ds.x().column(c + 7));
            assert_eq!(ds.labels().unwrap()[c], -ds.labels().unwrap()[c + 7]);
        }
        let first = ds.x().column(0);
        let last = ds.x().column(3);
        assert!((first[0] - (2.0 - 1.0 / 8.0)).abs() < 1e-15 && (last[1] - (2.0 + 1.0 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn toy_classification_sigma_limit() {
        let t = gen_toy_classification(2000).unwrap();
        let x = t.dataset.x();
        let n = x.ncols() as f64;
        for k in 0..2 {
            let s = (x.row(k).map(|v| v * v).sum() / n).sqrt();
            assert!((s - 2.0).abs() < 1e-2);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let (a, ma) = gen_synthetic_regression(100, 10, 10, 1.0, 3).unwrap();
        let (b, _) = gen_synthetic_regression(100, 10, 10, 1.0, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.d(), 10);
        assert!(ma.iter().all(|v| v.abs() <= 1.0));
        let (c, mc) = gen_synthetic_regression(20, 3, 5, 0.0, 3).unwrap();
        assert!((c.targets().as_matrix() - &mc * c.x()).norm() < 1e-12);
        assert!(gen_synthetic_regression(100, 10, 7, 1.0, 3).is_err());
    }

    #[test]
    fn toy_clf_rr_is_sc_full_rank() {
        let mc = mc_toy_classification(2, 20, 0, TOY_CLF_EPS).unwrap();
        assert_eq!(mc.rr_kind, Some(SepKind::Sc));
        assert_eq!(mc.rr_rank, Some(2));
        assert!(mc_toy_classification(5, 1, 0, TOY_CLF_EPS).unwrap().rr_kind.is_none());
    }

    #[test]
    fn fig4_short_run() {
        let cfg = Fig4Config { epochs: 20, ..Fig4Config::default() };
        let a = fig4_run(&cfg, 3).unwrap();
        assert_eq!(a, fig4_run(&cfg, 3).unwrap());
        // An invertible 2x2 first layer leaves the GD kind unchanged.
        assert_eq!(a.gd_start, a.gd_end);
        assert!(a.l_gd_end.is_finite());
    }

    #[test]
    fn toy_regression_mc_identity() {
        let mc = mc_toy_regression(3, 200, 1).unwrap();
        assert!(mc.max_identity_err <= 1e-12);
        assert_eq!(mc.samples.len(), 200);
        assert_eq!(mc, mc_toy_regression(3, 200, 1).unwrap());
    }
}
