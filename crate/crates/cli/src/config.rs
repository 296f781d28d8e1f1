//! Command-line surface and validated experiment configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use shufflebn::dataset::Dataset;
use shufflebn::io::read_dataset;
use shufflebn::model::Loss;
use shufflebn::toygen::{gen_synthetic_regression, gen_toy_classification, gen_toy_regression, gen_two_gaussians};
use shufflebn::Error;

#[derive(Parser, Debug)]
#[command(name = "shufflebn", version, about = "Shuffling SGD with batch normalization: experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Write a dataset CSV.
    Gen(Opts),
    /// Train with a single shuffle.
    TrainSs(Opts),
    /// Train with random reshuffling.
    TrainRr(Opts),
    /// Train with full-batch gradient descent.
    TrainGd(Opts),
    /// GD, SS and RR optima plus the SS distortion histogram.
    Optima(Opts),
    /// Separability decompositions and the GD robustness report.
    Separability(Opts),
    /// Ranks of the normalized datasets against their predictions.
    Rank(Opts),
    /// Monochromatic batch statistics.
    Mono(Opts),
    /// Without-replacement concentration of batch statistics.
    Concentration(Opts),
    /// Monte-Carlo sweeps over the toy datasets.
    #[command(subcommand)]
    Mc(McCommand),
    /// Two-layer experiment: separability of the GD and SS features before
    /// and after SS training.
    Fig4(Opts),
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "sweep", rename_all = "kebab-case")]
pub enum McCommand {
    ToyReg(Opts),
    ToyClf(Opts),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Sq,
    Logistic,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Sq => Loss::Squared,
            LossArg::Logistic => Loss::Logistic,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Opts {
    /// CSV path, or a generator: synthetic[:n:d], toy-reg:N, toy-clf:N, gaussians:N[:mu].
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    /// Batch size.
    #[arg(long = "B", value_name = "B")]
    pub b: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Decay exponent of η_k = c / k^β; 0 means a constant stepsize.
    #[arg(long, default_value_t = 0.6)]
    pub beta: f64,
    /// Multiplier on the theory-mode constant c.
    #[arg(long, default_value_t = 1.0)]
    pub lr_scale: f64,
    /// Use this c instead of the theory-mode constant.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum, default_value = "sq")]
    pub loss: LossArg,
    /// BN epsilon; defaults to 1e-5 for training and 0 for analysis.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub perms: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    /// Network depth; 1 is the shallow W Γ BN(X) model.
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    /// Hidden width for depth > 1 (defaults to d).
    #[arg(long)]
    pub width: Option<usize>,
    /// Size parameter of the toy sweeps.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    /// γ for the robustness report.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Number of seeds for fig4 (seeds are seed, seed+1, ...).
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
}

pub fn config_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config { field: field.into(), msg: msg.into() }
}

/// A parsed `--dataset` value.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Synthetic { n: usize, d: usize },
    ToyReg(usize),
    ToyClf(usize),
    Gaussians { per_class: usize, mu: f64 },
    Csv(PathBuf),
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, Error> {
    s.parse().map_err(|_| config_err("dataset", format!("`{s}` is not a valid number")))
}

pub fn parse_source(s: &str) -> Result<Source, Error> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["synthetic"] => Ok(Source::Synthetic { n: 100, d: 10 }),
        ["synthetic", n, d] => Ok(Source::Synthetic { n: parse_num(n)?, d: parse_num(d)? }),
        ["toy-reg", n] => Ok(Source::ToyReg(parse_num(n)?)),
        ["toy-clf", n] => Ok(Source::ToyClf(parse_num(n)?)),
        ["gaussians", n] => Ok(Source::Gaussians { per_class: parse_num(n)?, mu: 2.0 }),
        ["gaussians", n, mu] => Ok(Source::Gaussians { per_class: parse_num(n)?, mu: parse_num(mu)? }),
        _ if Path::new(s).extension().is_some_and(|e| e == "csv") => Ok(Source::Csv(PathBuf::from(s))),
        _ => Err(config_err("dataset", format!("unknown source `{s}`"))),
    }
}

impl Source {
    /// Batch size used when `--B` is absent.
    pub fn default_b(&self) -> usize {
        match self {
            Source::ToyReg(_) | Source::ToyClf(_) => 2,
            Source::Gaussians { .. } => 16,
            Source::Synthetic { .. } | Source::Csv(_) => 10,
        }
    }

    pub fn load(&self, seed: u64, b: usize) -> Result<Dataset, Error> {
        match self {
            Source::Synthetic { n, d } => Ok(gen_synthetic_regression(*n, *d, b, 1.0, seed)?.0),
            Source::ToyReg(n) => gen_toy_regression(*n),
            Source::ToyClf(n) => Ok(gen_toy_classification(*n)?.dataset),
            Source::Gaussians { per_class, mu } => gen_two_gaussians(*per_class, *mu, seed),
            Source::Csv(p) => read_dataset(p).map_err(|e| config_err("dataset", e.to_string())),
        }
    }
}

/// Checks every numeric field before any compute.
pub fn validate(o: &Opts) -> Result<Source, Error> {
    let src = parse_source(&o.dataset)?;
    if let Some(b) = o.b {
        if b < 2 {
            return Err(config_err("B", "batch size must be >= 2"));
        }
    }
    if o.beta != 0.0 && !(o.beta > 0.5 && o.beta < 1.0) {
        return Err(config_err("beta", "must be 0 (constant) or lie in (1/2, 1)"));
    }
    if !(o.lr_scale > 0.0 && o.lr_scale.is_finite()) {
        return Err(config_err("lr-scale", "must be positive"));
    }
    if let Some(lr) = o.lr {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(config_err("lr", "must be positive"));
        }
    }
    if o.beta == 0.0 && o.lr.is_none() {
        return Err(config_err("beta", "beta = 0 needs an explicit --lr"));
    }
    if let Some(e) = o.eps {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(config_err("eps", "must be >= 0"));
        }
    }
    if o.perms == Some(0) {
        return Err(config_err("perms", "must be >= 1"));
    }
    if !(0.0..1.0).contains(&o.momentum) {
        return Err(config_err("momentum", "must lie in [0, 1)"));
    }
    if o.depth == 0 {
        return Err(config_err("depth", "must be >= 1"));
    }
    if o.width == Some(0) {
        return Err(config_err("width", "must be >= 1"));
    }
    if !(o.delta > 0.0 && o.delta < 1.0) {
        return Err(config_err("delta", "must lie in (0, 1)"));
    }
    if !(o.gamma >= 0.0) {
        return Err(config_err("gamma", "must be >= 0"));
    }
    if o.seeds == 0 {
        return Err(config_err("seeds", "must be >= 1"));
    }
    if o.n == 0 {
        return Err(config_err("n", "must be >= 1"));
    }
    Ok(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources() {
        assert_eq!(parse_source("synthetic").unwrap(), Source::Synthetic { n: 100, d: 10 });
        assert_eq!(parse_source("toy-clf:4").unwrap(), Source::ToyClf(4));
        assert_eq!(parse_source("gaussians:32:1.5").unwrap(), Source::Gaussians { per_class: 32, mu: 1.5 });
        assert_eq!(parse_source("data/a.csv").unwrap(), Source::Csv("data/a.csv".into()));
        assert!(matches!(parse_source("toy-reg:x"), Err(Error::Config { .. })));
        assert!(matches!(parse_source("mnist"), Err(Error::Config { .. })));
    }
}
