//! Monte-Carlo replication suites: A/A and A/B suites on the mixture model,
//! a paired pre/post-period generator for covariate methods, percentile grid
//! search and lookup tables.
//!
//! Every replication draws its data from a seed derived from
//! `(master_seed, rep)`, so results do not depend on the worker count, the
//! order in which replications finish, or the order of the method list.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{
    dml_estimate, doubly_robust, make_crossfit_plan, post_stratification, psm_estimate, DmlOptions, Loss, DEFAULT_CLIP,
};
use crate::estimators::{
    huber_ate, huber_per_arm, naive_estimate, winsorized_estimate, Covariates, Dataset, EstimateError, EstimateResult,
    WinsorMode, WinsorPolicy,
};
use crate::linear_models::DeltaMode;
use crate::stats::{self, clopper_pearson_ci, derive_seed, fmt_sig6};
use crate::tail_model::{inject_lift, sample_mixture, MixtureParams, TailError};

pub const DEFAULT_K_FOLDS: usize = 5;
pub const DEFAULT_WINSOR_PERCENTILE: f64 = 0.99;
pub const DEFAULT_ALPHA_LEVEL: f64 = 0.1;
/// Largest tolerated fraction of failed replications per method.
pub const MAX_FAILURE_RATE: f64 = 0.01;
pub const MIN_ARM_SIZE: usize = 100;

const STREAM_CONTROL: u64 = 0;
const STREAM_TREATMENT: u64 = 1;
const STREAM_METHOD: u64 = 2;
const STREAM_ASSIGN: u64 = 3;
const STREAM_NOISE_X: u64 = 4;
const STREAM_NOISE_Y: u64 = 5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Tail(#[from] TailError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("method `{method}` failed on {failures} of {reps} replications (first error: {first_error})")]
    ExcessiveFailures { method: String, failures: usize, reps: usize, first_error: String },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An estimator with its configuration, identified by a compact id such as
/// `naive`, `winsor_union@0.99`, `huber@robust_scale` or `dml_huber@5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Naive,
    Winsorized(WinsorPolicy),
    Huber(DeltaMode),
    HuberPerArm(DeltaMode),
    PostStrat,
    PostStratHuber,
    Psm,
    DoublyRobust,
    Dml { k_folds: usize },
    DmlHuber { k_folds: usize },
}

impl Method {
    pub fn id(&self) -> String {
        let mode_suffix = |m: &DeltaMode| match m {
            DeltaMode::RawSd => String::new(),
            other => format!("@{}", other.as_str()),
        };
        match self {
            Method::Naive => "naive".into(),
            Method::Winsorized(p) => format!("winsor_{}@{}", p.mode.as_str(), p.percentile),
            Method::Huber(m) => format!("huber{}", mode_suffix(m)),
            Method::HuberPerArm(m) => format!("huber_per_arm{}", mode_suffix(m)),
            Method::PostStrat => "post_strat".into(),
            Method::PostStratHuber => "post_strat_huber".into(),
            Method::Psm => "psm".into(),
            Method::DoublyRobust => "dr".into(),
            Method::Dml { k_folds } => format!("dml@{k_folds}"),
            Method::DmlHuber { k_folds } => format!("dml_huber@{k_folds}"),
        }
    }

    pub fn requires_covariates(&self) -> bool {
        matches!(
            self,
            Method::PostStrat
                | Method::PostStratHuber
                | Method::Psm
                | Method::DoublyRobust
                | Method::Dml { .. }
                | Method::DmlHuber { .. }
        )
    }

    /// Runs the estimator. `seed` only drives the cross-fitting partition.
    pub fn estimate(&self, data: &Dataset, seed: u64) -> Result<EstimateResult, EstimateError> {
        let mut res = match self {
            Method::Naive => naive_estimate(data),
            Method::Winsorized(p) => winsorized_estimate(data, p),
            Method::Huber(m) => huber_ate(data, *m),
            Method::HuberPerArm(m) => huber_per_arm(data, *m),
            Method::PostStrat => post_stratification(data, Loss::Squared),
            Method::PostStratHuber => post_stratification(data, Loss::Huber),
            Method::Psm => psm_estimate(data, DEFAULT_CLIP),
            Method::DoublyRobust => doubly_robust(data, DEFAULT_CLIP),
            Method::Dml { k_folds } | Method::DmlHuber { k_folds } => {
                let plan = make_crossfit_plan(data.len(), data.assignment(), *k_folds, seed)?;
                let final_loss = if matches!(self, Method::Dml { .. }) { Loss::Squared } else { Loss::Huber };
                dml_estimate(data, &plan, &DmlOptions { final_loss, ..DmlOptions::default() })
            }
        }?;
        res.method = self.id();
        Ok(res)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once('@') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let percentile = || -> Result<f64, String> {
            arg.map_or(Ok(DEFAULT_WINSOR_PERCENTILE), |a| {
                a.parse::<f64>().map_err(|_| format!("bad percentile `{a}` in `{s}`"))
            })
        };
        let delta_mode = || -> Result<DeltaMode, String> { arg.map_or(Ok(DeltaMode::RawSd), str::parse) };
        let folds = || -> Result<usize, String> {
            arg.map_or(Ok(DEFAULT_K_FOLDS), |a| a.parse().map_err(|_| format!("bad fold count `{a}` in `{s}`")))
        };
        let winsor = |mode| -> Result<Method, String> {
            WinsorPolicy::new(mode, percentile()?).map(Method::Winsorized).map_err(|e| e.to_string())
        };
        let no_arg = |m: Method| match arg {
            None => Ok(m),
            Some(_) => Err(format!("method `{name}` takes no argument")),
        };
        match name {
            "naive" => no_arg(Method::Naive),
            "winsor_separate" => winsor(WinsorMode::Separate),
            "winsor_union" | "winsorized" => winsor(WinsorMode::UnifiedUnion),
            "winsor_average" => winsor(WinsorMode::UnifiedAverage),
            "huber" => Ok(Method::Huber(delta_mode()?)),
            "huber_per_arm" => Ok(Method::HuberPerArm(delta_mode()?)),
            "post_strat" => no_arg(Method::PostStrat),
            "post_strat_huber" => no_arg(Method::PostStratHuber),
            "psm" => no_arg(Method::Psm),
            "dr" => no_arg(Method::DoublyRobust),
            "dml" => Ok(Method::Dml { k_folds: folds()? }),
            "dml_huber" => Ok(Method::DmlHuber { k_folds: folds()? }),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The nine estimators compared on the paired-period generator.
pub fn covariate_method_set() -> Vec<Method> {
    vec![
        Method::Naive,
        Method::Winsorized(WinsorPolicy { mode: WinsorMode::UnifiedUnion, percentile: DEFAULT_WINSOR_PERCENTILE }),
        Method::Huber(DeltaMode::RawSd),
        Method::PostStrat,
        Method::PostStratHuber,
        Method::Psm,
        Method::DoublyRobust,
        Method::Dml { k_folds: DEFAULT_K_FOLDS },
        Method::DmlHuber { k_folds: DEFAULT_K_FOLDS },
    ]
}

fn default_alpha_level() -> f64 {
    DEFAULT_ALPHA_LEVEL
}

/// Replication settings shared by every suite type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n_per_arm: usize,
    pub n_reps: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_alpha_level")]
    pub alpha_level: f64,
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_per_arm < MIN_ARM_SIZE {
            return Err(SimError::Config(format!("n_per_arm = {} is below {MIN_ARM_SIZE}", self.n_per_arm)));
        }
        if self.n_reps == 0 {
            return Err(SimError::Config("n_reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(SimError::Config("no methods configured".into()));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(SimError::Config(format!("alpha_level {} outside (0, 1)", self.alpha_level)));
        }
        Ok(())
    }
}

/// A/A (`target_lift = 0`) or A/B suite on the mixture model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub control_params: MixtureParams,
    #[serde(default)]
    pub target_lift: f64,
    #[serde(flatten)]
    pub suite: SuiteConfig,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        self.suite.validate()?;
        self.control_params.validate()?;
        if let Some(m) = self.suite.methods.iter().find(|m| m.requires_covariates()) {
            return Err(SimError::Config(format!("method `{m}` needs covariates; use the paired-period suite")));
        }
        Ok(())
    }
}

/// Synthetic pre/post-period generator: a latent unit size drives both the
/// pre-period covariate and the response through independent log-normal
/// multiplicative noise with mean 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedPeriodSpec {
    pub base_params: MixtureParams,
    /// Coefficient of variation of the multiplicative noise.
    pub noise_cv: f64,
    #[serde(default)]
    pub target_lift: f64,
}

impl PairedPeriodSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        self.base_params.validate()?;
        if !(self.noise_cv >= 0.0 && self.noise_cv.is_finite()) {
            return Err(SimError::Config(format!("noise_cv {} must be >= 0", self.noise_cv)));
        }
        if !(self.target_lift > -1.0 && self.target_lift.is_finite()) {
            return Err(SimError::Config(format!("target_lift {} must exceed -1", self.target_lift)));
        }
        Ok(())
    }

    /// One replication's dataset: `2 n_per_arm` units, exactly `n_per_arm`
    /// of them treated at random.
    pub fn generate(&self, n_per_arm: usize, seed: u64) -> Result<Dataset, SimError> {
        let n = 2 * n_per_arm;
        let size = sample_mixture(&self.base_params, n, derive_seed(seed, STREAM_CONTROL));
        let u = lognormal_noise(self.noise_cv, n, derive_seed(seed, STREAM_NOISE_X))?;
        let v = lognormal_noise(self.noise_cv, n, derive_seed(seed, STREAM_NOISE_Y))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ASSIGN)));
        let mut assignment = vec![0u8; n];
        for &i in &order[..n_per_arm] {
            assignment[i] = 1;
        }
        let x: Vec<f64> = size.iter().zip(&u).map(|(s, u)| s * u).collect();
        let y: Vec<f64> =
            (0..n).map(|i| size[i] * v[i] * (1.0 + self.target_lift * f64::from(assignment[i]))).collect();
        let cov = Covariates { names: vec!["x_pre".into()], values: x };
        Ok(Dataset::new(y, assignment, Some(cov))?)
    }
}

fn lognormal_noise(cv: f64, n: usize, seed: u64) -> Result<Vec<f64>, SimError> {
    if cv == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let sigma2 = cv.mul_add(cv, 1.0).ln();
    let dist =
        LogNormal::new(-0.5 * sigma2, sigma2.sqrt()).map_err(|e| SimError::Config(format!("log-normal noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// `(lift estimate, p-value)` of one method on one replication, or the
/// estimator's error message.
type RepOutcome = Result<(f64, f64), String>;

/// Per-method aggregate over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    /// Lift estimates of the successful replications, in rep order.
    pub estimates: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Replication index of each entry in `estimates`.
    pub reps: Vec<usize>,
    pub failures: usize,
    pub mse: f64,
    pub mad_signed: f64,
    pub mad_abs: f64,
    pub fpr: f64,
    pub fpr_ci: (f64, f64),
    pub detectable_lift: f64,
}

impl MethodSummary {
    fn from_outcomes(
        method: String,
        outcomes: Vec<(usize, RepOutcome)>,
        truth: f64,
        alpha_level: f64,
    ) -> Result<Self, SimError> {
        let total = outcomes.len();
        let mut estimates = Vec::with_capacity(total);
        let mut p_values = Vec::with_capacity(total);
        let mut reps = Vec::with_capacity(total);
        let mut failures = 0;
        let mut first_error = None;
        for (rep, out) in outcomes {
            match out {
                Ok((lift, p)) if lift.is_finite() && p.is_finite() => {
                    estimates.push(lift);
                    p_values.push(p);
                    reps.push(rep);
                }
                Ok((lift, p)) => {
                    failures += 1;
                    first_error.get_or_insert_with(|| format!("non-finite result (lift {lift}, p {p})"));
                }
                Err(e) => {
                    failures += 1;
                    first_error.get_or_insert(e);
                }
            }
        }
        if failures as f64 > MAX_FAILURE_RATE * total as f64 || estimates.is_empty() {
            return Err(SimError::ExcessiveFailures {
                method,
                failures,
                reps: total,
                first_error: first_error.unwrap_or_default(),
            });
        }
        let m = estimates.len() as f64;
        let dev = || estimates.iter().map(|e| e - truth);
        let rejections = p_values.iter().filter(|&&p| p < alpha_level).count();
        Ok(Self {
            mse: dev().map(|d| d * d).sum::<f64>() / m,
            mad_signed: dev().sum::<f64>() / m,
            mad_abs: dev().map(f64::abs).sum::<f64>() / m,
            fpr: rejections as f64 / m,
            fpr_ci: clopper_pearson_ci(rejections as u64, estimates.len() as u64, 0.95),
            detectable_lift: detectable_lift(&estimates),
            method,
            estimates,
            p_values,
            reps,
            failures,
        })
    }

    pub fn row(&self) -> ReportRow {
        ReportRow {
            method: self.method.clone(),
            n_reps: self.estimates.len(),
            mse: self.mse,
            mad_signed: self.mad_signed,
            mad_abs: self.mad_abs,
            fpr: self.fpr,
            fpr_lo: self.fpr_ci.0,
            fpr_hi: self.fpr_ci.1,
            detectable_lift: self.detectable_lift,
        }
    }
}

/// Twice the sample standard deviation of replicated lift estimates; zero
/// when fewer than two estimates are available.
pub fn detectable_lift(estimates: &[f64]) -> f64 {
    if estimates.len() < 2 {
        return 0.0;
    }
    2.0 * stats::sample_sd(estimates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub truth: f64,
    pub methods: Vec<MethodSummary>,
}

/// One line of the suite report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub n_reps: usize,
    pub mse: f64,
    pub mad_signed: f64,
    pub mad_abs: f64,
    pub fpr: f64,
    pub fpr_lo: f64,
    pub fpr_hi: f64,
    pub detectable_lift: f64,
}

pub const REPORT_HEADER: [&str; 9] =
    ["method", "n_reps", "mse", "mad_signed", "mad_abs", "fpr", "fpr_lo", "fpr_hi", "detectable_lift"];

impl SimulationReport {
    pub fn method(&self, id: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == id)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.methods.iter().map(MethodSummary::row).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(REPORT_HEADER).map_err(csv_err)?;
        for r in self.rows() {
            let nums = [r.mse, r.mad_signed, r.mad_abs, r.fpr, r.fpr_lo, r.fpr_hi, r.detectable_lift];
            let mut rec = vec![r.method, r.n_reps.to_string()];
            rec.extend(nums.iter().map(|v| fmt_sig6(*v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    /// Per-replication p-values, `rep,method,p`, ordered by method then rep.
    pub fn write_pvalues_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["rep", "method", "p"]).map_err(csv_err)?;
        for m in &self.methods {
            for (rep, p) in m.reps.iter().zip(&m.p_values) {
                w.write_record([rep.to_string(), m.method.clone(), fmt_sig6(*p)]).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a suite report CSV written by [`SimulationReport::write_csv`].
pub fn read_report_csv<R: Read>(input: R) -> Result<Vec<ReportRow>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(SimError::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Csv(e.to_string())
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, SimError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SimError::Config(format!("thread pool: {e}")))
}

/// Runs every method on `n_reps` generated datasets. `workers = 0` uses the
/// machine's parallelism.
fn run_replications<G>(
    suite: &SuiteConfig,
    truth: f64,
    workers: usize,
    generate: G,
) -> Result<SimulationReport, SimError>
where
    G: Fn(u64) -> Result<Dataset, SimError> + Sync,
{
    suite.validate()?;
    let methods = &suite.methods;
    let per_rep: Vec<Result<Vec<RepOutcome>, SimError>> = thread_pool(workers)?.install(|| {
        (0..suite.n_reps)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(suite.master_seed, rep as u64);
                let data = generate(seed)?;
                let method_seed = derive_seed(seed, STREAM_METHOD);
                Ok(methods
                    .iter()
                    .map(|m| m.estimate(&data, method_seed).map(|r| (r.lift, r.p_value)).map_err(|e| e.to_string()))
                    .collect())
            })
            .collect()
    });
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut summaries = Vec::with_capacity(methods.len());
    for (j, m) in methods.iter().enumerate() {
        let outcomes = per_rep.iter().enumerate().map(|(rep, row)| (rep, row[j].clone())).collect();
        summaries.push(MethodSummary::from_outcomes(m.id(), outcomes, truth, suite.alpha_level)?);
    }
    Ok(SimulationReport { truth, methods: summaries })
}

/// Mixture-model suite: control arm from `control_params`, treatment arm from
/// the lifted parameters, `n_per_arm` rows each.
pub fn run_suite(spec: &SimulationSpec, workers: usize) -> Result<SimulationReport, SimError> {
    spec.validate()?;
    let control = spec.control_params;
    let treatment = inject_lift(&control, spec.target_lift)?;
    let n = spec.suite.n_per_arm;
    run_replications(&spec.suite, spec.target_lift, workers, |seed| {
        let c = sample_mixture(&control, n, derive_seed(seed, STREAM_CONTROL));
        let t = sample_mixture(&treatment, n, derive_seed(seed, STREAM_TREATMENT));
        Ok(Dataset::from_arms(&t, &c)?)
    })
}

/// Paired-period suite; covariate methods see the pre-period covariate.
pub fn run_paired_suite(
    paired: &PairedPeriodSpec,
    suite: &SuiteConfig,
    workers: usize,
) -> Result<SimulationReport, SimError> {
    paired.validate()?;
    run_replications(suite, paired.target_lift, workers, |seed| paired.generate(suite.n_per_arm, seed))
}

/// Grid search over the unified (pooled) winsorization percentile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpec {
    pub control_params: MixtureParams,
    #[serde(default)]
    pub target_lift: f64,
    pub n_per_arm: usize,
    pub grid: Vec<f64>,
    pub n_reps: usize,
    #[serde(default)]
    pub master_seed: u64,
}

/// Evenly spaced percentiles from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCurve {
    pub percentiles: Vec<f64>,
    pub mse: Vec<f64>,
    pub argmin: f64,
    pub min_mse: f64,
}

impl GridCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["percentile", "mse"]).map_err(csv_err)?;
        for (p, m) in self.percentiles.iter().zip(&self.mse) {
            w.write_record([fmt_sig6(*p), fmt_sig6(*m)]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One suite with a unified winsorization method per grid point, so every
/// point sees the same replications.
pub fn grid_search_percentile(spec: &GridSearchSpec, workers: usize) -> Result<GridCurve, SimError> {
    if spec.grid.is_empty() {
        return Err(SimError::Config("empty percentile grid".into()));
    }
    if let Some(p) = spec.grid.iter().find(|&&p| !(p > 0.5 && p <= 1.0)) {
        return Err(SimError::Config(format!("grid percentile {p} outside (0.5, 1]")));
    }
    let methods = spec
        .grid
        .iter()
        .map(|&p| WinsorPolicy::new(WinsorMode::UnifiedUnion, p).map(Method::Winsorized))
        .collect::<Result<Vec<_>, _>>()?;
    let sim = SimulationSpec {
        control_params: spec.control_params,
        target_lift: spec.target_lift,
        suite: SuiteConfig {
            n_per_arm: spec.n_per_arm,
            n_reps: spec.n_reps,
            methods,
            master_seed: spec.master_seed,
            alpha_level: DEFAULT_ALPHA_LEVEL,
        },
    };
    let report = run_suite(&sim, workers)?;
    let mse: Vec<f64> = report.methods.iter().map(|m| m.mse).collect();
    // first minimum: ties resolve to the lower percentile
    let best = (0..mse.len()).fold(0, |b, i| if mse[i] < mse[b] { i } else { b });
    Ok(GridCurve { percentiles: spec.grid.clone(), argmin: spec.grid[best], min_mse: mse[best], mse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupCell {
    pub n_per_arm: usize,
    pub lift: f64,
    pub optimal_percentile: f64,
    pub min_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub cells: Vec<LookupCell>,
    pub curves: Vec<GridCurve>,
}

pub const LOOKUP_HEADER: [&str; 4] = ["n_per_arm", "lift", "optimal_percentile", "min_mse"];

impl LookupTable {
    pub fn optimal(&self, n_per_arm: usize, lift: f64) -> Option<f64> {
        self.cells.iter().find(|c| c.n_per_arm == n_per_arm && c.lift == lift).map(|c| c.optimal_percentile)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(LOOKUP_HEADER).map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.n_per_arm.to_string(),
                fmt_sig6(c.lift),
                fmt_sig6(c.optimal_percentile),
                fmt_sig6(c.min_mse),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// All cell curves in one CSV, `n_per_arm,lift,percentile,mse`.
    pub fn write_curves_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["n_per_arm", "lift", "percentile", "mse"]).map_err(csv_err)?;
        for (cell, curve) in self.cells.iter().zip(&self.curves) {
            for (p, m) in curve.percentiles.iter().zip(&curve.mse) {
                w.write_record([cell.n_per_arm.to_string(), fmt_sig6(cell.lift), fmt_sig6(*p), fmt_sig6(*m)])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_lookup_csv<R: Read>(input: R) -> Result<Vec<LookupCell>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(LOOKUP_HEADER) {
        return Err(SimError::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Grid search for every `(size, lift)` cell; all cells reuse the master
/// seed from `base`.
pub fn build_lookup_table(
    sizes: &[usize],
    lifts: &[f64],
    base: &GridSearchSpec,
    workers: usize,
) -> Result<LookupTable, SimError> {
    if sizes.is_empty() || lifts.is_empty() {
        return Err(SimError::Config("lookup table needs non-empty size and lift grids".into()));
    }
    let mut cells = Vec::with_capacity(sizes.len() * lifts.len());
    let mut curves = Vec::with_capacity(cells.capacity());
    for &n_per_arm in sizes {
        for &lift in lifts {
            let spec = GridSearchSpec { n_per_arm, target_lift: lift, ..base.clone() };
            let curve = grid_search_percentile(&spec, workers)?;
            cells.push(LookupCell { n_per_arm, lift, optimal_percentile: curve.argmin, min_mse: curve.min_mse });
            curves.push(curve);
        }
    }
    Ok(LookupTable { cells, curves })
}
