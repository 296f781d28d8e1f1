//! `shufflebn` experiment runner.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric blow-up (or an
//! ill-conditioned computation) in a non-MC run, 1 anything else.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use serde_json::{json, Value};

use shufflebn::dataset::{
    normalize_gd, normalize_rr_full, normalize_rr_sampled, normalize_ss, BatchPlan, Dataset, NormalizedDataset,
    EPS_ANALYSIS, EPS_TRAIN,
};
use shufflebn::deep::DeepLinearParams;
use shufflebn::io::{checkpoint_json, dataset_to_csv, fmt_f64, histogram_csv};
use shufflebn::linalg::binomial;
use shufflebn::model::{Loss, ModelParams};
use shufflebn::optima::{distortion_histogram, optima_bundle, Optimum, RrSource};
use shufflebn::separability::{
    concentration_check, decompose_nds, gamma_robustness_report, max_margin, monochromatic_stats, optimal_direction,
    rank_report, RobustnessThresholds, SepKind,
};
use shufflebn::toygen::{fig4_experiment, mc_toy_classification, mc_toy_regression, median_sorted, Fig4Config, TOY_CLF_EPS};
use shufflebn::trainers::{
    rr_theory_schedule, ss_theory_schedule, train_gd, train_rr, train_ss, Model, StepsizeSchedule, TrainConfig,
    TrainTrace,
};
use shufflebn::{rng, Error};

use config::{config_err, validate, Cli, Command, McCommand, Opts, Source};

/// Stream index of the SS batch plan under the root seed.
const PLAN_STREAM: u64 = 1;

enum Failure {
    Config(Error),
    Numeric(String),
    Other(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. }
            | Error::InvalidPlan(_)
            | Error::InvalidSchedule(_)
            | Error::InvalidDataset(_)
            | Error::DimensionMismatch(_)
            | Error::NonBinaryLabel(_)
            | Error::BatchTooSmall(_)
            | Error::DimensionNotOne(_)
            | Error::TooManyPermutations(_)
            | Error::CombinatorialBlowup { .. }
            | Error::UnbalancedClasses { .. }
            | Error::DegenerateValues
            | Error::NotOverparameterized { .. } => Failure::Config(e),
            Error::NumericallyIllConditioned(_) | Error::ConstantCoordinate { .. } | Error::NotSeparable => {
                Failure::Numeric(e.to_string())
            }
            _ => Failure::Other(e),
        }
    }
}

type Run<T> = std::result::Result<T, Failure>;

struct Out {
    dir: PathBuf,
}

impl Out {
    fn create(dir: &Path) -> Run<Out> {
        fs::create_dir_all(dir).map_err(|e| Failure::Other(e.into()))?;
        Ok(Out { dir: dir.to_path_buf() })
    }

    fn text(&self, name: &str, body: &str) -> Run<()> {
        fs::write(self.dir.join(name), body).map_err(|e| Failure::Other(e.into()))
    }

    fn json(&self, name: &str, v: &impl Serialize) -> Run<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Other(e.into()))?;
        s.push('\n');
        self.text(name, &s)
    }
}

fn threads() -> Run<()> {
    let Ok(v) = std::env::var("SHUFFLEBN_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(config_err("SHUFFLEBN_THREADS", format!("`{v}` is not a positive integer"))))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Other(Error::Io(e.to_string())))
}

/// Validated options plus the dataset, loaded before any compute.
struct Setup<'a> {
    o: &'a Opts,
    src: Source,
    ds: Dataset,
    b: usize,
    out: Out,
}

fn setup<'a>(o: &'a Opts, cmd: &Command, seeds: Value) -> Run<Setup<'a>> {
    let src = validate(o)?;
    let b = o.b.unwrap_or_else(|| src.default_b());
    let ds = src.load(o.seed, b)?;
    let out = Out::create(&o.out)?;
    out.json(
        "config.json",
        &json!({ "version": env!("CARGO_PKG_VERSION"), "config": cmd, "seeds": seeds }),
    )?;
    Ok(Setup { o, src, ds, b, out })
}

fn root_seeds(o: &Opts) -> Value {
    json!({ "root": o.seed })
}

fn analysis_eps(s: &Setup) -> f64 {
    s.o.eps.unwrap_or(match s.src {
        Source::ToyClf(_) => TOY_CLF_EPS,
        _ => EPS_ANALYSIS,
    })
}

fn ss_plan(s: &Setup) -> Run<BatchPlan> {
    let mut r = rng::stream(s.o.seed, PLAN_STREAM);
    Ok(BatchPlan::random(s.ds.n(), s.b, &mut r)?)
}

fn labels(ds: &Dataset) -> Run<&[f64]> {
    ds.labels().ok_or_else(|| Failure::Config(config_err("dataset", "this subcommand needs ±1 labels")))
}

fn row_major(o: &Optimum) -> Vec<f64> {
    o.m.transpose().iter().copied().collect()
}

fn initial_model(s: &Setup) -> Run<Model> {
    let (d, p) = (s.ds.d(), s.ds.p());
    if s.o.depth == 1 {
        Ok(Model::Shallow(ModelParams::zero_identity(p, d)))
    } else {
        let width = s.o.width.unwrap_or(d);
        Ok(Model::Deep(DeepLinearParams::init(s.o.depth, d, width, p, s.o.seed)?))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Algo {
    Ss,
    Rr,
    Gd,
}

fn schedule(s: &Setup, algo: Algo, model: &Model, plan: &BatchPlan, eps: f64) -> Run<(StepsizeSchedule, Value)> {
    let o = s.o;
    if let Some(lr) = o.lr {
        let sched = if o.beta == 0.0 { StepsizeSchedule::constant(lr)? } else { StepsizeSchedule::manual(lr, o.beta)? };
        return Ok((sched, Value::Null));
    }
    let (Model::Shallow(init), Loss::Squared) = (model, Loss::from(o.loss)) else {
        return Err(Failure::Config(config_err("lr", "theory mode needs --loss sq and --depth 1; pass --lr")));
    };
    let (sched, tc) = match algo {
        Algo::Ss => ss_theory_schedule(&s.ds, plan, init, o.beta, o.lr_scale, eps)?,
        Algo::Rr => rr_theory_schedule(&s.ds, s.b, init, o.beta, o.lr_scale, eps, 100, o.seed)?,
        Algo::Gd => ss_theory_schedule(&s.ds, &BatchPlan::identity(s.ds.n(), s.ds.n())?, init, o.beta, o.lr_scale, eps)?,
    };
    Ok((sched, serde_json::to_value(tc).map_err(|e| Failure::Other(e.into()))?))
}

fn train(s: &Setup, algo: Algo) -> Run<()> {
    let o = s.o;
    let eps = o.eps.unwrap_or(EPS_TRAIN);
    let model = initial_model(s)?;
    let plan = match algo {
        Algo::Gd => BatchPlan::identity(s.ds.n(), s.ds.n())?,
        _ => ss_plan(s)?,
    };
    let (sched, theory) = schedule(s, algo, &model, &plan, eps)?;
    let mut cfg = TrainConfig::new(sched, o.epochs.unwrap_or(1000), o.loss.into());
    cfg.epsilon = eps;
    cfg.momentum = o.momentum;
    let (model, trace): (Model, TrainTrace) = match algo {
        Algo::Ss => train_ss(&s.ds, &plan, model, &cfg)?,
        Algo::Rr => train_rr(&s.ds, s.b, model, &cfg, o.seed)?,
        Algo::Gd => train_gd(&s.ds, model, &cfg)?,
    };
    s.out.text("trace.csv", &trace.to_csv())?;
    s.out.text("checkpoint.json", &checkpoint_json(&model))?;
    let last = trace.records.last();
    s.out.json(
        "summary.json",
        &json!({
            "schedule": cfg.schedule,
            "theory_constants": theory,
            "epochs_run": trace.records.len(),
            "blew_up": trace.blew_up,
            "verdict": trace.verdict,
            "initial": trace.initial,
            "final": last,
        }),
    )?;
    if trace.blew_up {
        return Err(Failure::Numeric(format!("training blew up after {} epochs", trace.records.len())));
    }
    Ok(())
}

fn optima(s: &Setup) -> Run<()> {
    let perms = s.o.perms.unwrap_or(1000);
    let plan = ss_plan(s)?;
    let bundle = optima_bundle(&s.ds, &plan, perms, s.o.seed)?;
    let hist = distortion_histogram(&s.ds, s.b, perms, s.o.seed)?;
    let mut sorted = hist.clone();
    sorted.sort_by(f64::total_cmp);
    s.out.text("histogram.csv", &histogram_csv("d_ss", &hist))?;
    let rr_source = match bundle.rr_source {
        RrSource::Full => json!("full"),
        RrSource::Sampled { num_perms } => json!({ "sampled": num_perms }),
    };
    s.out.json(
        "summary.json",
        &json!({
            "m_gd": row_major(&bundle.m_gd),
            "m_ss": row_major(&bundle.m_ss),
            "m_rr": row_major(&bundle.m_rr),
            "rr_source": rr_source,
            "d_ss": bundle.d_ss,
            "d_rr": bundle.d_rr,
            "hist_mean": hist.iter().sum::<f64>() / hist.len() as f64,
            "hist_median": median_sorted(&sorted),
        }),
    )
}

fn decomposition_json(nds: &NormalizedDataset) -> Run<Value> {
    let dec = decompose_nds(nds)?;
    let labels = nds.targets().labels().expect("classification");
    let od = optimal_direction(&dec, nds.xbar(), labels)?;
    let mm = if dec.kind == SepKind::Ls { Some(max_margin(nds.xbar(), labels)?.margin) } else { None };
    Ok(json!({
        "normalization": nds.kind().name(),
        "kind": dec.kind,
        "ls_indices": dec.ls_indices,
        "sc_indices": dec.sc_indices,
        "witness": dec.witness,
        "witness_margin": dec.witness_margin,
        "max_margin": mm,
        "optimal_direction": od.v,
        "sc_rank": od.sc_rank,
    }))
}

fn separability(s: &Setup) -> Run<()> {
    labels(&s.ds)?;
    let eps = analysis_eps(s);
    let plan = ss_plan(s)?;
    let mut reports = vec![
        decomposition_json(&normalize_gd(&s.ds, eps)?)?,
        decomposition_json(&normalize_ss(&s.ds, &plan, eps)?)?,
    ];
    if binomial(s.ds.n(), s.b) <= 10_000 {
        reports.push(decomposition_json(&normalize_rr_full(&s.ds, s.b, eps)?)?);
    }
    s.out.json("decompositions.json", &reports)?;
    let rob = gamma_robustness_report(&s.ds, s.o.gamma, RobustnessThresholds::default())?;
    s.out.json("robustness.json", &rob)
}

fn rank(s: &Setup) -> Run<()> {
    let eps = analysis_eps(s);
    let plan = ss_plan(s)?;
    let mut reps = vec![
        rank_report(&normalize_gd(&s.ds, eps)?),
        rank_report(&normalize_ss(&s.ds, &plan, eps)?),
        rank_report(&normalize_rr_sampled(&s.ds, s.b, eps, s.o.perms.unwrap_or(10), s.o.seed)?),
    ];
    if binomial(s.ds.n(), s.b) <= 10_000 {
        reps.push(rank_report(&normalize_rr_full(&s.ds, s.b, eps)?));
    }
    let rows: Vec<Value> = reps
        .iter()
        .map(|r| json!({ "kind": r.kind, "rank": r.rank, "predicted": r.predicted, "deficient": r.deficient() }))
        .collect();
    s.out.json("summary.json", &rows)
}

fn mono(s: &Setup) -> Run<()> {
    let stats = monochromatic_stats(labels(&s.ds)?, s.b, s.o.perms.unwrap_or(1000), s.o.seed, s.o.delta)?;
    s.out.json("summary.json", &stats)
}

fn concentration(s: &Setup) -> Run<()> {
    let values: Vec<f64> = s.ds.x().row(0).iter().copied().collect();
    let rep = concentration_check(&values, s.b, s.o.perms.unwrap_or(10_000), s.o.delta, s.o.seed)?;
    s.out.json("summary.json", &json!({ "report": rep, "within_delta": rep.within_delta() }))
}

fn mc_toy_reg(o: &Opts, out: &Out) -> Run<()> {
    let mc = mc_toy_regression(o.n, o.perms.unwrap_or(2000), o.seed)?;
    let mut csv = String::from("perm_index,m,k\n");
    for smp in &mc.samples {
        csv.push_str(&format!("{},{},{}\n", smp.index, fmt_f64(smp.m), smp.k));
    }
    out.text("samples.csv", &csv)?;
    out.json(
        "summary.json",
        &json!({
            "n": mc.n,
            "num_perms": mc.num_perms,
            "frac_nonzero": mc.frac_nonzero,
            "median_abs": mc.median_abs,
            "rr_estimate": mc.rr_estimate,
            "max_identity_err": mc.max_identity_err,
        }),
    )
}

fn mc_toy_clf(o: &Opts, out: &Out) -> Run<()> {
    let perms = o.perms.unwrap_or(5000);
    let mc = mc_toy_classification(o.n, perms, o.seed, o.eps.unwrap_or(TOY_CLF_EPS))?;
    let mut csv = String::from("perm_index,kind,cos_anti,good,diverges\n");
    for smp in &mc.samples {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            smp.index,
            smp.kind.name(),
            fmt_f64(smp.cos_anti),
            smp.good,
            smp.diverges
        ));
    }
    out.text("samples.csv", &csv)?;
    let p = 1.0f64 / 9.0;
    out.json(
        "summary.json",
        &json!({
            "n": mc.n,
            "num_perms": mc.num_perms,
            "epsilon": mc.epsilon,
            "gd_kind": mc.gd_kind,
            "v_gd": mc.v_gd,
            "frac_pls": mc.frac_pls,
            "frac_pls_good": mc.frac_good,
            "frac_pls_good_bound": p - 3.0 * (p * (1.0 - p) / perms as f64).sqrt(),
            "frac_diverges": mc.frac_diverges,
            "rr_kind": mc.rr_kind,
            "rr_rank": mc.rr_rank,
        }),
    )
}

fn fig4(o: &Opts, src: &Source, out: &Out) -> Run<()> {
    let Source::Gaussians { per_class, mu } = *src else {
        return Err(Failure::Config(config_err("dataset", "fig4 needs a gaussians:N[:mu] source")));
    };
    let cfg = Fig4Config {
        n_per_class: per_class,
        mu,
        batch_size: o.b.unwrap_or(16),
        width: o.width.unwrap_or(2),
        eta: o.lr.unwrap_or(1e-2),
        epsilon: o.eps.unwrap_or(EPS_TRAIN),
        epochs: o.epochs.unwrap_or(10_000),
    };
    let seeds: Vec<u64> = (0..o.seeds as u64).map(|i| o.seed + i).collect();
    let runs = fig4_experiment(&cfg, &seeds)?;
    let kind = |k: Option<SepKind>| k.map_or("ill-conditioned", |k| k.name());
    let mut csv = String::from("seed,gd_start,gd_end,ss_start,ss_end,l_gd_start,l_gd_end,transitioned\n");
    for r in &runs {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.seed,
            kind(r.gd_start),
            kind(r.gd_end),
            kind(r.ss_start),
            kind(r.ss_end),
            fmt_f64(r.l_gd_start),
            fmt_f64(r.l_gd_end),
            r.transitioned()
        ));
    }
    out.text("runs.csv", &csv)?;
    out.json(
        "summary.json",
        &json!({
            "config": cfg,
            "transitioned": runs.iter().filter(|r| r.transitioned()).count(),
            "runs": runs,
        }),
    )
}

fn dispatch(cmd: &Command) -> Run<()> {
    match cmd {
        Command::Gen(o) => {
            let s = setup(o, cmd, root_seeds(o))?;
            s.out.text("dataset.csv", &dataset_to_csv(&s.ds))
        }
        Command::TrainSs(o) => train(&setup(o, cmd, root_seeds(o))?, Algo::Ss),
        Command::TrainRr(o) => train(&setup(o, cmd, root_seeds(o))?, Algo::Rr),
        Command::TrainGd(o) => train(&setup(o, cmd, root_seeds(o))?, Algo::Gd),
        Command::Optima(o) => optima(&setup(o, cmd, root_seeds(o))?),
        Command::Separability(o) => separability(&setup(o, cmd, root_seeds(o))?),
        Command::Rank(o) => rank(&setup(o, cmd, root_seeds(o))?),
        Command::Mono(o) => mono(&setup(o, cmd, root_seeds(o))?),
        Command::Concentration(o) => concentration(&setup(o, cmd, root_seeds(o))?),
        Command::Mc(mc) => {
            let o = match mc {
                McCommand::ToyReg(o) | McCommand::ToyClf(o) => o,
            };
            validate(o)?;
            let out = Out::create(&o.out)?;
            out.json("config.json", &json!({ "version": env!("CARGO_PKG_VERSION"), "config": cmd, "seeds": root_seeds(o) }))?;
            match mc {
                McCommand::ToyReg(o) => mc_toy_reg(o, &out),
                McCommand::ToyClf(o) => mc_toy_clf(o, &out),
            }
        }
        Command::Fig4(o) => {
            let src = validate(o)?;
            let seeds: Vec<u64> = (0..o.seeds as u64).map(|i| o.seed + i).collect();
            let out = Out::create(&o.out)?;
            out.json("config.json", &json!({ "version": env!("CARGO_PKG_VERSION"), "config": cmd, "seeds": seeds }))?;
            fig4(o, &src, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|_| dispatch(&cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
