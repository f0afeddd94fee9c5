//! Repeated synthetic trials comparing the constrained estimator with
//! unconstrained ridge regression, and learning-curve sweeps over `n`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSpec, CurveKind};
use crate::error::{Error, Result};
use crate::estimator::{fit, LossKind, MultitaskData};
use crate::harness::cv::{holdout_cv, CvConfig, CvScore};
use crate::harness::metrics::{mse, Summary};
use crate::harness::synth::{gen_synthetic, VvrDataset};
use crate::kernels::KernelSpec;
use crate::par;
use crate::scores::LambdaSchedule;

// xored into a trial seed to get an independent test-set stream
const TEST_STREAM: u64 = 0x7e57_5e7d_a7a5_e7ed;

fn test_seed(trial_seed: u64) -> u64 {
    trial_seed ^ TEST_STREAM
}

/// Which targets test MSE is measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestTarget {
    /// The noise-free `f*(x)`.
    #[default]
    Clean,
    /// Fresh noisy observations.
    Noisy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub curve: CurveKind,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
    pub trials: usize,
    #[serde(default)]
    pub cv: CvConfig,
    pub seed: u64,
    #[serde(default)]
    pub test_target: TestTarget,
    /// Adds wall-clock seconds to each trial. Off by default since it makes
    /// the report differ between runs.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentConfig {
    /// σ = 0.05, 100 training and 1000 test points, 10 trials, the default
    /// 30 × 30 grid.
    pub fn standard(curve: CurveKind, seed: u64) -> Self {
        Self {
            curve,
            n_train: 100,
            n_test: 1000,
            noise_sigma: 0.05,
            trials: 10,
            cv: CvConfig::default(),
            seed,
            test_target: TestTarget::Clean,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train < 4 {
            return Err(Error::InvalidParameter(format!("n_train must be at least 4, got {}", self.n_train)));
        }
        if self.n_test == 0 || self.trials == 0 {
            return Err(Error::InvalidParameter("n_test and trials must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_sigma must be non-negative, got {}", self.noise_sigma)));
        }
        self.cv.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nlmtl,
    Stl,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Nlmtl => "nlmtl",
            Method::Stl => "stl",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub method: Method,
    pub mse: f64,
    pub bandwidth: f64,
    pub lambda: f64,
    /// Largest `|γ(f̂(x))|` over the test set.
    pub max_residual: f64,
    pub mean_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mse: Summary,
    pub max_residual: f64,
    pub mean_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<MethodSummary>,
    /// Trials where the constrained estimator has strictly lower test MSE.
    pub nlmtl_wins: usize,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> impl Iterator<Item = &TrialResult> {
        self.trials.iter().filter(move |r| r.method == m)
    }

    pub fn summary_of(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per trial and method.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "trial",
            "method",
            "mse",
            "bandwidth",
            "lambda",
            "max_residual",
            "mean_residual",
            "runtime_seconds",
        ])?;
        for r in &self.trials {
            w.write_record([
                r.trial.to_string(),
                r.method.name().to_string(),
                r.mse.to_string(),
                r.bandwidth.to_string(),
                r.lambda.to_string(),
                r.max_residual.to_string(),
                r.mean_residual.to_string(),
                r.runtime_seconds.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Malformed(e.to_string()))
    }
}

struct Evaluated {
    mse: f64,
    max_residual: f64,
    mean_residual: f64,
}

fn evaluate(preds: &[Vec<f64>], target: &[Vec<f64>], curve: CurveKind) -> Result<Evaluated> {
    let res: Vec<f64> = preds.iter().map(|p| curve.residual(p).abs()).collect();
    Ok(Evaluated {
        mse: mse(preds, target)?,
        max_residual: res.iter().copied().fold(0.0, f64::max),
        mean_residual: res.iter().sum::<f64>() / res.len() as f64,
    })
}

fn targets(test: &VvrDataset, which: TestTarget) -> &[Vec<f64>] {
    match which {
        TestTarget::Clean => &test.clean,
        TestTarget::Noisy => &test.outputs,
    }
}

fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<[TrialResult; 2]> {
    let start = Instant::now();
    let seed = cfg.seed.wrapping_add(trial as u64);
    let train = gen_synthetic(cfg.curve, cfg.n_train, cfg.noise_sigma, seed)?;
    let test = gen_synthetic(cfg.curve, cfg.n_test, cfg.noise_sigma, test_seed(seed))?;
    let constraint = ConstraintSpec::curve(cfg.curve, crate::constraints::DEFAULT_GRID)?;
    let sel = holdout_cv(&train.inputs, &train.outputs, &cfg.cv, Some(&constraint), seed)?;
    // the baseline is always tuned on its own unconstrained validation error
    let sel_stl = match cfg.cv.score {
        CvScore::Unconstrained => sel,
        CvScore::Constrained => {
            let unc = CvConfig { score: CvScore::Unconstrained, ..cfg.cv };
            holdout_cv(&train.inputs, &train.outputs, &unc, None, seed)?
        }
    };
    let data = MultitaskData::from_vvr(&train.inputs, &train.outputs)?;
    let tasks = data.len();
    let target = targets(&test, cfg.test_target);

    let model = fit(
        &data,
        &KernelSpec::gaussian(sel.bandwidth)?,
        &vec![sel.lambda; tasks],
        constraint.clone(),
        LossKind::Square,
    )?;
    let nl = evaluate(&model.predict_batch(&test.inputs)?, target, cfg.curve)?;
    let stl_model = if sel_stl == sel {
        model
    } else {
        fit(
            &data,
            &KernelSpec::gaussian(sel_stl.bandwidth)?,
            &vec![sel_stl.lambda; tasks],
            constraint,
            LossKind::Square,
        )?
    };
    let st = evaluate(&stl_model.stl_batch(&test.inputs)?, target, cfg.curve)?;
    let runtime = cfg.record_timing.then(|| start.elapsed().as_secs_f64());

    let row = |method, e: Evaluated, bandwidth, lambda| TrialResult {
        trial,
        method,
        mse: e.mse,
        bandwidth,
        lambda,
        max_residual: e.max_residual,
        mean_residual: e.mean_residual,
        runtime_seconds: runtime,
    };
    Ok([row(Method::Nlmtl, nl, sel.bandwidth, sel.lambda), row(Method::Stl, st, sel_stl.bandwidth, sel_stl.lambda)])
}

fn summarize(method: Method, rows: &[&TrialResult]) -> Result<MethodSummary> {
    let mses: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    Ok(MethodSummary {
        method,
        mse: Summary::of(&mses)?,
        max_residual: rows.iter().map(|r| r.max_residual).fold(0.0, f64::max),
        mean_residual: rows.iter().map(|r| r.mean_residual).sum::<f64>() / rows.len() as f64,
    })
}

/// Per trial: fresh data from seed `seed + trial`, hold-out selection,
/// both fits, test MSE. Trials run in parallel and are reported in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let per_trial = par::try_map_range(cfg.trials, |t| run_trial(cfg, t))?;
    let nlmtl_wins = per_trial.iter().filter(|[nl, st]| nl.mse < st.mse).count();
    let trials: Vec<TrialResult> = per_trial.into_iter().flatten().collect();
    let summary = [Method::Nlmtl, Method::Stl]
        .into_iter()
        .map(|m| summarize(m, &trials.iter().filter(|r| r.method == m).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { config: cfg.clone(), trials, summary, nlmtl_wins })
}

/// How a sweep picks hyperparameters at each `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepHyper {
    Cv(CvConfig),
    Fixed { bandwidth: f64, lambda: LambdaSchedule },
}

impl Default for SweepHyper {
    /// Unit bandwidth with `λ = n^{-1/2}`.
    fn default() -> Self {
        SweepHyper::Fixed { bandwidth: 1.0, lambda: LambdaSchedule::HalfRoot }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSweepConfig {
    pub curve: CurveKind,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub n_test: usize,
    #[serde(default)]
    pub hyper: SweepHyper,
    #[serde(default)]
    pub test_target: TestTarget,
}

impl RateSweepConfig {
    pub fn new(curve: CurveKind, n_list: Vec<usize>, trials: usize, seed: u64) -> Self {
        Self {
            curve,
            n_list,
            trials,
            seed,
            noise_sigma: 0.05,
            n_test: 1000,
            hyper: SweepHyper::default(),
            test_target: TestTarget::Clean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub median_mse_nlmtl: f64,
    pub median_mse_stl: f64,
    pub trials: usize,
}

/// [`rate_sweep_with`] at σ = 0.05, 1000 test points and the default
/// fixed hyperparameters.
pub fn rate_sweep(curve: CurveKind, n_list: &[usize], trials: usize, seed: u64) -> Result<Vec<RateRow>> {
    rate_sweep_with(&RateSweepConfig::new(curve, n_list.to_vec(), trials, seed))
}

/// Median test MSE of both methods for each training size. Trial `t` uses
/// seed `seed + t` at every `n`, so the training sets are nested.
pub fn rate_sweep_with(cfg: &RateSweepConfig) -> Result<Vec<RateRow>> {
    if cfg.n_list.is_empty() || cfg.trials == 0 || cfg.n_test == 0 {
        return Err(Error::InvalidParameter("n_list, trials and n_test must be non-empty".into()));
    }
    if cfg.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("n_list must be strictly increasing".into()));
    }
    let min_n = if matches!(cfg.hyper, SweepHyper::Cv(_)) { 4 } else { 1 };
    if cfg.n_list[0] < min_n {
        return Err(Error::InvalidParameter(format!("training sizes must be at least {min_n}")));
    }
    let constraint = ConstraintSpec::curve(cfg.curve, crate::constraints::DEFAULT_GRID)?;
    let units = cfg.n_list.len() * cfg.trials;
    let results = par::try_map_range(units, |u| -> Result<(f64, f64)> {
        let (n, trial) = (cfg.n_list[u / cfg.trials], u % cfg.trials);
        let seed = cfg.seed.wrapping_add(trial as u64);
        let train = gen_synthetic(cfg.curve, n, cfg.noise_sigma, seed)?;
        let test = gen_synthetic(cfg.curve, cfg.n_test, cfg.noise_sigma, test_seed(seed))?;
        let (bandwidth, lambda) = match cfg.hyper {
            SweepHyper::Cv(cv) => {
                let sel = holdout_cv(&train.inputs, &train.outputs, &cv, Some(&constraint), seed)?;
                (sel.bandwidth, sel.lambda)
            }
            SweepHyper::Fixed { bandwidth, lambda } => (bandwidth, lambda.lambda(n)),
        };
        let data = MultitaskData::from_vvr(&train.inputs, &train.outputs)?;
        let model = fit(
            &data,
            &KernelSpec::gaussian(bandwidth)?,
            &vec![lambda; data.len()],
            constraint.clone(),
            LossKind::Square,
        )?;
        let target = targets(&test, cfg.test_target);
        Ok((mse(&model.predict_batch(&test.inputs)?, target)?, mse(&model.stl_batch(&test.inputs)?, target)?))
    })?;
    cfg.n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let chunk = &results[i * cfg.trials..(i + 1) * cfg.trials];
            let nl: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let st: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            Ok(RateRow {
                n,
                median_mse_nlmtl: Summary::of(&nl)?.median,
                median_mse_stl: Summary::of(&st)?.median,
                trials: cfg.trials,
            })
        })
        .collect()
}
