use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nlmtl::estimator::{fit, q_constant, ModelDoc, PerturbedFormula};
use nlmtl::harness::cv::{holdout_cv, CvConfig, CvScore};
use nlmtl::harness::experiment::{run_experiment, ExperimentConfig};
use nlmtl::harness::metrics::{explained_variance, mse};
use nlmtl::harness::synth::gen_synthetic;
use nlmtl::ranking::{exact_decode_costs, fit_ranking, DecodedDoc, RankingModel};
use nlmtl::{io, ConstraintDoc, ConstraintSpec, CurveKind, KernelSpec, LambdaSchedule, LossKind, NlMtlModel};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "nlmtl", version, about = "Nonlinear multitask learning with constrained structured prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic curve dataset as CSV.
    Synth(SynthArgs),
    /// Fit per-task score models and write a model file.
    Train(TrainArgs),
    /// Batch prediction from a model file.
    Predict(PredictArgs),
    /// MSE and explained variance of predictions against truth.
    Eval(EvalArgs),
    /// Repeated trials comparing the constrained estimator with plain ridge.
    Experiment(ExperimentArgs),
    /// Fit per-pair ranking models from comparison observations.
    RankFit(RankFitArgs),
    /// Decode acyclic comparison vectors for query points.
    RankDecode(RankDecodeArgs),
    /// Comparison constant of a constraint set for the square loss.
    Qconst(QconstArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_serde::<CurveKind>)]
    curve: CurveKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the noise-free targets here.
    #[arg(long)]
    clean_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Constraint JSON, inline or a file path.
    #[arg(long)]
    constraint: String,
    #[arg(long, value_parser = parse_serde::<LossKind>, default_value = "square")]
    loss: LossKind,
    #[arg(long, value_enum, default_value_t = KernelKind::Gaussian)]
    kernel: KernelKind,
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    /// Shared regularisation for every task.
    #[arg(long, conflicts_with_all = ["schedule", "cv"])]
    lambda: Option<f64>,
    /// Per-task regularisation from the task's sample count.
    #[arg(long, value_enum, conflicts_with = "cv")]
    schedule: Option<Schedule>,
    /// Pick bandwidth and lambda by hold-out validation on the default grid.
    #[arg(long)]
    cv: bool,
    /// Score hold-out candidates with the constrained predictor.
    #[arg(long, requires = "cv")]
    cv_constrained: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelKind {
    Gaussian,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    QuarterRoot,
    HalfRoot,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Constrained prediction, per-task weights.
    Mtl,
    /// Constrained prediction from shared scores.
    Vvr,
    Robust,
    Perturbed,
    /// Unconstrained ridge regression.
    Stl,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Mtl)]
    mode: Mode,
    /// Radius for `robust`.
    #[arg(long, required_if_eq("mode", "robust"))]
    delta: Option<f64>,
    /// Strength for `perturbed`.
    #[arg(long, required_if_eq("mode", "perturbed"))]
    mu: Option<f64>,
    /// Where to write JSON metadata about the prediction run.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RankFitArgs {
    /// CSV rows `features..., p, q, label` with one-based document ids.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    docs: usize,
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    /// Treat labels as signed preference strengths.
    #[arg(long)]
    weighted: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankDecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Enumerate all orders instead of the heuristic (at most 8 documents).
    #[arg(long)]
    exact: bool,
}

#[derive(Args)]
struct QconstArgs {
    /// Constraint JSON, inline or a file path.
    #[arg(long)]
    constraint: String,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_constraint(arg: &str) -> Result<ConstraintSpec> {
    let (doc, base): (ConstraintDoc, Option<&Path>) = if arg.trim_start().starts_with('{') {
        (serde_json::from_str(arg).context("parsing inline constraint")?, None)
    } else {
        let path = Path::new(arg);
        (read_json(path)?, path.parent())
    };
    Ok(ConstraintSpec::from_doc(&doc, base)?)
}

fn load_model(path: &Path) -> Result<NlMtlModel> {
    Ok(NlMtlModel::from_doc(read_json::<ModelDoc>(path)?)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let ds = gen_synthetic(a.curve, a.n, a.sigma, a.seed)?;
    io::write_dataset(&a.out, &ds.inputs, &ds.outputs).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = a.clean_out {
        io::write_dataset(&p, &ds.inputs, &ds.clean).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let data = io::read_dataset(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    let constraint = load_constraint(&a.constraint)?;
    let tasks = data.to_multitask()?;
    let (kernel, lambdas) = if a.cv {
        if !matches!(a.kernel, KernelKind::Gaussian) {
            bail!("--cv selects a Gaussian bandwidth; it cannot be combined with --kernel linear");
        }
        let cfg = CvConfig {
            score: if a.cv_constrained { CvScore::Constrained } else { CvScore::Unconstrained },
            ..CvConfig::default()
        };
        let outputs = data.dense_outputs().context("--cv needs every task observed at every input")?;
        let sel = holdout_cv(&data.inputs, &outputs, &cfg, Some(&constraint), a.seed)?;
        info!(
            "hold-out selected bandwidth {} lambda {} (validation mse {})",
            sel.bandwidth, sel.lambda, sel.validation_mse
        );
        (KernelSpec::gaussian(sel.bandwidth)?, vec![sel.lambda; tasks.len()])
    } else {
        let kernel = match a.kernel {
            KernelKind::Gaussian => KernelSpec::gaussian(a.bandwidth)?,
            KernelKind::Linear => KernelSpec::Linear,
        };
        let schedule = match (a.lambda, a.schedule) {
            (Some(l), _) => LambdaSchedule::Fixed(l),
            (None, Some(Schedule::QuarterRoot)) => LambdaSchedule::QuarterRoot,
            (None, Some(Schedule::HalfRoot)) => LambdaSchedule::HalfRoot,
            (None, None) => bail!("one of --lambda, --schedule or --cv is required"),
        };
        (kernel, tasks.tasks.iter().map(|t| schedule.lambda(t.len())).collect())
    };
    let model = fit(&tasks, &kernel, &lambdas, constraint, a.loss)?;
    write_json(&a.out, &model.to_doc())
}

#[derive(Serialize)]
struct PredictMeta {
    mode: &'static str,
    rows: usize,
    /// Queries where `|a(x)|` was too small and the generic path was used.
    fallbacks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbed: Option<PerturbedMeta>,
}

#[derive(Serialize)]
struct PerturbedMeta {
    stated: usize,
    corrected: usize,
    max_formula_gap: f64,
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let queries = io::read_queries(&a.queries).with_context(|| format!("reading queries {}", a.queries.display()))?;
    let rows: Vec<&[f64]> = queries.iter_rows().collect();
    let mut meta = PredictMeta { mode: mode_name(a.mode), rows: rows.len(), fallbacks: 0, perturbed: None };
    let preds: Vec<Vec<f64>> = match a.mode {
        Mode::Mtl => model.predict_batch(&queries)?,
        Mode::Stl => model.stl_batch(&queries)?,
        Mode::Vvr | Mode::Robust => {
            let mut out = Vec::with_capacity(rows.len());
            for x in &rows {
                let p = match a.mode {
                    Mode::Robust => model.predict_robust(x, a.delta.unwrap_or_default())?,
                    _ => model.predict_vvr(x)?,
                };
                meta.fallbacks += p.fallback as usize;
                out.push(p.value);
            }
            out
        }
        Mode::Perturbed => {
            let mu = a.mu.unwrap_or_default();
            let mut out = Vec::with_capacity(rows.len());
            if model.is_vvr() {
                for x in &rows {
                    let p = model.predict_perturbed(x, mu)?;
                    meta.fallbacks += p.fallback as usize;
                    out.push(p.value);
                }
            } else {
                let mut pm = PerturbedMeta { stated: 0, corrected: 0, max_formula_gap: 0.0 };
                for x in &rows {
                    let p = model.predict_perturbed_mtl(x, mu)?;
                    match p.formula {
                        PerturbedFormula::Stated => pm.stated += 1,
                        PerturbedFormula::Corrected => pm.corrected += 1,
                    }
                    pm.max_formula_gap = pm.max_formula_gap.max(p.formula_gap);
                    out.push(p.value);
                }
                if pm.corrected > 0 {
                    log::warn!("{} of {} queries used the corrected perturbed formula", pm.corrected, rows.len());
                }
                meta.perturbed = Some(pm);
            }
            out
        }
    };
    let residuals = preds.iter().map(|p| model.constraint().gamma_residual(p)).collect::<nlmtl::Result<Vec<_>>>()?;
    io::write_predictions(&a.out, &preds, &residuals).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = a.meta {
        write_json(&path, &meta)?;
    }
    Ok(())
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Mtl => "mtl",
        Mode::Vvr => "vvr",
        Mode::Robust => "robust",
        Mode::Perturbed => "perturbed",
        Mode::Stl => "stl",
    }
}

#[derive(Serialize)]
struct Metrics {
    mse: f64,
    explained_variance: f64,
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = io::read_outputs(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let truth = io::read_outputs(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?;
    let m = Metrics { mse: mse(&pred, &truth)?, explained_variance: explained_variance(&pred, &truth)? };
    match a.out {
        Some(p) => write_json(&p, &m),
        None => {
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(())
        }
    }
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let cfg: ExperimentConfig = read_json(&a.config)?;
    let report = run_experiment(&cfg)?;
    for s in &report.summary {
        info!("{}: median mse {:.3e}", s.method.name(), s.mse.median);
    }
    fs::write(&a.out, report.to_json()? + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = a.csv {
        fs::write(&p, report.to_csv()?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn rank_fit(a: RankFitArgs) -> Result<()> {
    let (index, data) = io::read_ranking(&a.data, a.docs).with_context(|| format!("reading {}", a.data.display()))?;
    let kernel = KernelSpec::gaussian(a.bandwidth)?;
    let lambdas = vec![a.lambda; index.len()];
    let model = fit_ranking(index, &data, &kernel, &lambdas, a.weighted)?;
    write_json(&a.out, &model)
}

fn rank_decode(a: RankDecodeArgs) -> Result<()> {
    let model: RankingModel = read_json(&a.model)?;
    let queries = io::read_queries(&a.queries).with_context(|| format!("reading queries {}", a.queries.display()))?;
    let docs = queries
        .iter_rows()
        .map(|x| -> Result<DecodedDoc> {
            let d =
                if a.exact { exact_decode_costs(model.index(), &model.pair_costs(x)?)? } else { model.decode(x)? };
            Ok(d.to_doc(model.index()))
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&a.out, &docs)
}

fn qconst(a: QconstArgs) -> Result<()> {
    let q = q_constant(&load_constraint(&a.constraint)?, a.samples)?;
    println!("{}", serde_json::json!({ "q": q }));
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::Train(a) => train(a),
        Cmd::Predict(a) => predict(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Experiment(a) => experiment(a),
        Cmd::RankFit(a) => rank_fit(a),
        Cmd::RankDecode(a) => rank_decode(a),
        Cmd::Qconst(a) => qconst(a),
    }
}
