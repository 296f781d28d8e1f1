//! Raw datasets, batch plans, and the batch-normalized dataset constructions.
//!
//! BN here uses the biased variance (divide by the batch size), unlike most
//! framework layers which use the unbiased estimate for running statistics.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::binomial;
use crate::rng;

/// Default epsilon for analysis-facing operations.
pub const EPS_ANALYSIS: f64 = 0.0;
/// Default epsilon for training-facing operations.
pub const EPS_TRAIN: f64 = 1e-5;
/// Default column cap for the RR-full construction.
pub const RR_FULL_CAP: usize = 1_000_000;

/// Regression targets (p×n) or binary labels in {-1, +1}.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Regression(DMatrix<f64>),
    Labels(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.ncols(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Output dimension p (1 for labels).
    pub fn dim(&self) -> usize {
        match self {
            Targets::Regression(y) => y.nrows(),
            Targets::Labels(_) => 1,
        }
    }

    pub fn labels(&self) -> Option<&[f64]> {
        match self {
            Targets::Labels(l) => Some(l),
            _ => None,
        }
    }

    pub fn regression(&self) -> Option<&DMatrix<f64>> {
        match self {
            Targets::Regression(y) => Some(y),
            _ => None,
        }
    }

    /// Targets as a p×n matrix (labels become a single row).
    pub fn as_matrix(&self) -> DMatrix<f64> {
        match self {
            Targets::Regression(y) => y.clone(),
            Targets::Labels(l) => DMatrix::from_row_slice(1, l.len(), l),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(y) => Targets::Regression(y.select_columns(idx)),
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Features (d×n, one column per point) plus aligned targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    targets: Targets,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, targets: Targets) -> Result<Self> {
        if x.ncols() < 2 {
            return Err(Error::InvalidDataset(format!("need n >= 2, got {}", x.ncols())));
        }
        if x.nrows() < 1 {
            return Err(Error::InvalidDataset("need d >= 1".into()));
        }
        if targets.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature columns but {} targets",
                x.ncols(),
                targets.len()
            )));
        }
        if let Targets::Labels(l) = &targets {
            if let Some(&bad) = l.iter().find(|&&v| v != 1.0 && v != -1.0) {
                return Err(Error::NonBinaryLabel(bad));
            }
        }
        if let Targets::Regression(y) = &targets {
            if y.nrows() == 0 {
                return Err(Error::InvalidDataset("need p >= 1".into()));
            }
        }
        Ok(Dataset { x, targets })
    }

    pub fn regression(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::new(x, Targets::Regression(y))
    }

    pub fn classification(x: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        Self::new(x, Targets::Labels(labels))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.targets.dim()
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.targets.labels()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset { x: self.x.select_columns(idx), targets: self.targets.select(idx) }
    }
}

/// A permutation of the n points split into m = n/B consecutive batches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    perm: Vec<usize>,
    b: usize,
}

impl BatchPlan {
    pub fn new(perm: Vec<usize>, b: usize) -> Result<Self> {
        let n = perm.len();
        if b < 2 {
            return Err(Error::InvalidPlan(format!("batch size {b} < 2")));
        }
        if n == 0 || n % b != 0 {
            return Err(Error::InvalidPlan(format!("B = {b} does not divide n = {n}")));
        }
        let mut seen = vec![false; n];
        for &i in &perm {
            if i >= n || seen[i] {
                return Err(Error::InvalidPlan("perm is not a bijection".into()));
            }
            seen[i] = true;
        }
        Ok(BatchPlan { perm, b })
    }

    pub fn identity(n: usize, b: usize) -> Result<Self> {
        Self::new((0..n).collect(), b)
    }

    pub fn random(n: usize, b: usize, rng: &mut rng::Rng) -> Result<Self> {
        Self::new(rng::permutation(n, rng), b)
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn batch_size(&self) -> usize {
        self.b
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn num_batches(&self) -> usize {
        self.perm.len() / self.b
    }

    /// Original column indices of batch `j` (0-based).
    pub fn batch(&self, j: usize) -> &[usize] {
        &self.perm[j * self.b..(j + 1) * self.b]
    }

    pub fn check_for(&self, ds: &Dataset) -> Result<()> {
        if self.n() != ds.n() {
            return Err(Error::InvalidPlan(format!(
                "plan covers {} points, dataset has {}",
                self.n(),
                ds.n()
            )));
        }
        Ok(())
    }
}

/// Which batching scheme produced a normalized dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormKind {
    Ss { perm: Vec<usize> },
    Gd,
    RrFull,
    RrSampled { perms: Vec<Vec<usize>> },
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::Ss { .. } => "SS",
            NormKind::Gd => "GD",
            NormKind::RrFull => "RR-full",
            NormKind::RrSampled { .. } => "RR-sampled",
        }
    }
}

/// Features after per-batch BN, with the batch layout retained.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDataset {
    xbar: DMatrix<f64>,
    targets: Targets,
    boundaries: Vec<Range<usize>>,
    source: Vec<usize>,
    epsilon: f64,
    kind: NormKind,
    batch_size: usize,
    n: usize,
}

impl NormalizedDataset {
    pub fn xbar(&self) -> &DMatrix<f64> {
        &self.xbar
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn boundaries(&self) -> &[Range<usize>] {
        &self.boundaries
    }

    /// Original dataset index of every column.
    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Size of the underlying raw dataset.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.xbar.nrows()
    }

    pub fn q(&self) -> usize {
        self.xbar.ncols()
    }

    /// Weight applied to the plain column sum so the risk matches its
    /// definition: 1 for SS and GD, (n/B)/C(n,B) for RR-full (every unique
    /// batch appears in the same fraction of permutations), 1/num_perms for
    /// RR-sampled.
    pub fn risk_weight(&self) -> f64 {
        match &self.kind {
            NormKind::Ss { .. } | NormKind::Gd => 1.0,
            NormKind::RrFull => {
                let m = (self.n / self.batch_size) as f64;
                m / crate::linalg::binomial_f64(self.n, self.batch_size)
            }
            NormKind::RrSampled { perms } => 1.0 / perms.len() as f64,
        }
    }

    /// Assembles a normalized dataset from parts; used by file loaders.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        xbar: DMatrix<f64>,
        targets: Targets,
        boundaries: Vec<Range<usize>>,
        source: Vec<usize>,
        epsilon: f64,
        kind: NormKind,
        batch_size: usize,
        n: usize,
    ) -> Result<Self> {
        if targets.len() != xbar.ncols() || source.len() != xbar.ncols() {
            return Err(Error::DimensionMismatch("normalized dataset parts disagree".into()));
        }
        Ok(NormalizedDataset { xbar, targets, boundaries, source, epsilon, kind, batch_size, n })
    }
}

/// Per-coordinate BN of `x[:, cols]` written into `out[:, at..at+len]`.
/// On a constant coordinate with epsilon = 0 returns `Err(coord)`.
fn bn_into(
    x: &DMatrix<f64>,
    cols: &[usize],
    epsilon: f64,
    out: &mut DMatrix<f64>,
    at: usize,
) -> std::result::Result<(), usize> {
    let b = cols.len() as f64;
    for k in 0..x.nrows() {
        let mu = cols.iter().map(|&c| x[(k, c)]).sum::<f64>() / b;
        let var = cols.iter().map(|&c| (x[(k, c)] - mu).powi(2)).sum::<f64>() / b;
        if epsilon == 0.0 && var == 0.0 {
            return Err(k);
        }
        if epsilon == 0.0 && cols.len() == 2 {
            // Two distinct numbers normalize to exactly (−1, +1) in their order.
            let s = if x[(k, cols[0])] < x[(k, cols[1])] { 1.0 } else { -1.0 };
            out[(k, at)] = -s;
            out[(k, at + 1)] = s;
            continue;
        }
        let denom = (var + epsilon).sqrt();
        for (i, &c) in cols.iter().enumerate() {
            out[(k, at + i)] = if var == 0.0 { 0.0 } else { (x[(k, c)] - mu) / denom };
        }
    }
    Ok(())
}

/// Batch-normalizes each coordinate (row) of a d×B batch.
pub fn bn_batch(batch: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    if batch.ncols() < 2 {
        return Err(Error::BatchTooSmall(batch.ncols()));
    }
    let cols: Vec<usize> = (0..batch.ncols()).collect();
    let mut out = DMatrix::zeros(batch.nrows(), batch.ncols());
    bn_into(batch, &cols, epsilon, &mut out, 0)
        .map_err(|coord| Error::ConstantCoordinate { batch: None, coord })?;
    Ok(out)
}

fn normalize_batches(
    ds: &Dataset,
    batches: &[&[usize]],
    epsilon: f64,
    kind: NormKind,
    batch_size: usize,
) -> Result<NormalizedDataset> {
    let q: usize = batches.iter().map(|b| b.len()).sum();
    let mut xbar = DMatrix::zeros(ds.d(), q);
    let mut boundaries = Vec::with_capacity(batches.len());
    let mut source = Vec::with_capacity(q);
    let mut at = 0;
    for (j, cols) in batches.iter().enumerate() {
        if cols.len() < 2 {
            return Err(Error::BatchTooSmall(cols.len()));
        }
        bn_into(ds.x(), cols, epsilon, &mut xbar, at)
            .map_err(|coord| Error::ConstantCoordinate { batch: Some(j), coord })?;
        boundaries.push(at..at + cols.len());
        source.extend_from_slice(cols);
        at += cols.len();
    }
    let targets = ds.targets().select(&source);
    Ok(NormalizedDataset { xbar, targets, boundaries, source, epsilon, kind, batch_size, n: ds.n() })
}

/// SS dataset: BN within each batch of the permuted data.
pub fn normalize_ss(ds: &Dataset, plan: &BatchPlan, epsilon: f64) -> Result<NormalizedDataset> {
    plan.check_for(ds)?;
    let batches: Vec<&[usize]> = (0..plan.num_batches()).map(|j| plan.batch(j)).collect();
    normalize_batches(
        ds,
        &batches,
        epsilon,
        NormKind::Ss { perm: plan.perm().to_vec() },
        plan.batch_size(),
    )
}

/// GD dataset: the whole dataset as one batch.
pub fn normalize_gd(ds: &Dataset, epsilon: f64) -> Result<NormalizedDataset> {
    let all: Vec<usize> = (0..ds.n()).collect();
    normalize_batches(ds, &[&all], epsilon, NormKind::Gd, ds.n())
}

/// Calls `f` on every k-subset of 0..n in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Calls `f` on every permutation of 0..n (Heap's algorithm).
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&a);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// RR dataset with one slice per unique B-subset of the points.
pub fn normalize_rr_full(ds: &Dataset, b: usize, epsilon: f64) -> Result<NormalizedDataset> {
    normalize_rr_full_capped(ds, b, epsilon, RR_FULL_CAP)
}

pub fn normalize_rr_full_capped(
    ds: &Dataset,
    b: usize,
    epsilon: f64,
    cap: usize,
) -> Result<NormalizedDataset> {
    let n = ds.n();
    if b < 2 {
        return Err(Error::InvalidPlan(format!("batch size {b} < 2")));
    }
    if n % b != 0 {
        return Err(Error::InvalidPlan(format!("B = {b} does not divide n = {n}")));
    }
    let columns = binomial(n, b).saturating_mul(b as u128);
    if columns > cap as u128 {
        return Err(Error::CombinatorialBlowup { columns, cap });
    }
    let mut flat = Vec::with_capacity(columns as usize);
    for_each_combination(n, b, |c| flat.extend_from_slice(c));
    let batches: Vec<&[usize]> = flat.chunks(b).collect();
    normalize_batches(ds, &batches, epsilon, NormKind::RrFull, b)
}

/// RR dataset approximated by `num_perms` seeded permutations.
pub fn normalize_rr_sampled(
    ds: &Dataset,
    b: usize,
    epsilon: f64,
    num_perms: usize,
    seed: u64,
) -> Result<NormalizedDataset> {
    if num_perms == 0 {
        return Err(Error::InvalidPlan("num_perms must be >= 1".into()));
    }
    let mut r = rng::stream(seed, 0);
    let plans: Vec<BatchPlan> = (0..num_perms)
        .map(|_| BatchPlan::random(ds.n(), b, &mut r))
        .collect::<Result<_>>()?;
    normalize_rr_from_plans(ds, &plans, epsilon)
}

/// Concatenation of the SS datasets of the given plans.
pub fn normalize_rr_from_plans(
    ds: &Dataset,
    plans: &[BatchPlan],
    epsilon: f64,
) -> Result<NormalizedDataset> {
    let Some(first) = plans.first() else {
        return Err(Error::InvalidPlan("num_perms must be >= 1".into()));
    };
    let b = first.batch_size();
    let mut batches: Vec<&[usize]> = Vec::new();
    for p in plans {
        p.check_for(ds)?;
        if p.batch_size() != b {
            return Err(Error::InvalidPlan("plans disagree on batch size".into()));
        }
        batches.extend((0..p.num_batches()).map(|j| p.batch(j)));
    }
    let perms = plans.iter().map(|p| p.perm().to_vec()).collect();
    normalize_batches(ds, &batches, epsilon, NormKind::RrSampled { perms }, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    fn reg(x: DMatrix<f64>) -> Dataset {
        let n = x.ncols();
        Dataset::regression(x, DMatrix::from_fn(1, n, |_, j| j as f64)).unwrap()
    }

    #[test]
    fn bn_pair_is_minus_one_plus_one() {
        let out = bn_batch(&row(&[3.0, 5.0]), 0.0).unwrap();
        assert_eq!(out, row(&[-1.0, 1.0]));
    }

    #[test]
    fn bn_three_points() {
        let out = bn_batch(&row(&[1.0, 2.0, 3.0]), 0.0).unwrap();
        let s = 1.5f64.sqrt();
        assert!((out[0] + s).abs() < 1e-15 && out[1].abs() < 1e-15 && (out[2] - s).abs() < 1e-15);
    }

    #[test]
    fn bn_fixed_point() {
        let x = row(&[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(bn_batch(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn bn_constant_coordinate() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 4.0]);
        assert_eq!(bn_batch(&x, 0.0), Err(Error::ConstantCoordinate { batch: None, coord: 1 }));
        let out = bn_batch(&x, 1e-5).unwrap();
        assert_eq!(out[(1, 0)], 0.0);
        assert_eq!(bn_batch(&row(&[1.0]), 0.0), Err(Error::BatchTooSmall(1)));
    }

    #[test]
    fn ss_b2_example() {
        let ds = reg(row(&[1.0, 2.0, 3.0, 4.0]));
        let nds = normalize_ss(&ds, &BatchPlan::identity(4, 2).unwrap(), 0.0).unwrap();
        assert_eq!(nds.xbar(), &row(&[-1.0, 1.0, -1.0, 1.0]));
    }

    #[test]
    fn b2_entries_are_exactly_unit() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.7, 1e9 + 0.3, -2.2]);
        let out = bn_batch(&x, 0.0).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn gd_examples() {
        let nds = normalize_gd(&reg(row(&[0.0, 0.0, 3.0, 3.0])), 0.0).unwrap();
        assert_eq!(nds.xbar(), &row(&[-1.0, -1.0, 1.0, 1.0]));
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 4.0, 2.0, 3.0, 12.0, 6.0]);
        let nds = normalize_gd(&reg(x), 0.0).unwrap();
        assert!((nds.xbar().row(0) - nds.xbar().row(1)).norm() < 1e-14);
    }

    #[test]
    fn ss_full_batch_equals_gd() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 7.0, -1.0]);
        let ds = reg(x);
        let a = normalize_ss(&ds, &BatchPlan::identity(4, 4).unwrap(), 0.0).unwrap();
        let b = normalize_gd(&ds, 0.0).unwrap();
        assert_eq!(a.xbar(), b.xbar());
    }

    #[test]
    fn permutation_consistency() {
        let x = DMatrix::from_row_slice(1, 4, &[1.0, 5.0, 2.0, 9.0]);
        let ds = reg(x);
        let plan = BatchPlan::new(vec![2, 0, 3, 1], 2).unwrap();
        let nds = normalize_ss(&ds, &plan, 0.0).unwrap();
        assert_eq!(nds.source(), &[2, 0, 3, 1]);
        let y = nds.targets().regression().unwrap();
        for (c, &s) in nds.source().iter().enumerate() {
            assert_eq!(y[(0, c)], s as f64);
        }
    }

    #[test]
    fn rr_full_shapes() {
        let ds = reg(row(&[1.0, 2.0, 4.0, 8.0]));
        let nds = normalize_rr_full(&ds, 2, 0.0).unwrap();
        assert_eq!(nds.q(), 12);
        assert_eq!(nds.boundaries().len(), 6);
        assert_eq!(&nds.source()[..4], &[0, 1, 0, 2]);
        assert_eq!(&nds.source()[10..], &[2, 3]);
        let err = normalize_rr_full_capped(&ds, 2, 0.0, 10).unwrap_err();
        assert!(matches!(err, Error::CombinatorialBlowup { columns: 12, cap: 10 }));
    }

    #[test]
    fn combinations_lexicographic() {
        let mut all = Vec::new();
        for_each_combination(4, 2, |c| all.push(c.to_vec()));
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        let mut count = 0;
        for_each_combination(3, 3, |_| count += 1);
        assert_eq!(count, 1);
    }

    #[test]
    fn permutations_enumerated_once() {
        let mut seen = std::collections::HashSet::new();
        for_each_permutation(5, |p| {
            seen.insert(p.to_vec());
        });
        assert_eq!(seen.len(), 120);
    }

    #[test]
    fn rr_sampled_single_perm_matches_ss() {
        let x = DMatrix::from_row_slice(1, 6, &[1.0, 5.0, 2.0, 9.0, -3.0, 0.5]);
        let ds = reg(x);
        let a = normalize_rr_sampled(&ds, 2, 0.0, 1, 11).unwrap();
        let NormKind::RrSampled { perms } = a.kind() else { panic!() };
        let plan = BatchPlan::new(perms[0].clone(), 2).unwrap();
        let b = normalize_ss(&ds, &plan, 0.0).unwrap();
        assert_eq!(a.xbar(), b.xbar());
        let c = normalize_rr_sampled(&ds, 2, 0.0, 1, 11).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn invalid_plans() {
        assert!(BatchPlan::new(vec![0, 1, 2], 2).is_err());
        assert!(BatchPlan::new(vec![0, 0, 1, 2], 2).is_err());
        assert!(BatchPlan::new(vec![0, 1], 1).is_err());
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(Dataset::classification(x.clone(), vec![1.0, -1.0, 0.5]).is_err());
        assert!(Dataset::classification(x.clone(), vec![1.0, -1.0]).is_err());
        assert!(Dataset::classification(x, vec![1.0, -1.0, 1.0]).is_ok());
    }
}
