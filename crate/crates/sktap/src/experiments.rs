//! Experiment drivers: configuration, deterministic replica execution,
//! per-experiment observables, aggregation, and CSV/JSON persistence.
//!
//! Every driver is a pure function of its `ExperimentConfig`; replicas run
//! on independent RNG substreams indexed by replica number, so outputs are
//! bit-identical across runs and worker counts. Aggregates are computed from
//! the index-ordered replica table with pairwise summation, never in
//! completion order. A failed replica is recorded with its error string and
//! excluded from aggregates rather than aborting the run.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::amp::{
    amp_init, amp_step, diagnostics, sample_disorder_stream, symmetrize,
};
use crate::error::{Result, SkError};
use crate::freeprob::{
    density_grid, sherman_morrison_population, sherman_morrison_top_eig, subordination_h,
    support_edge, EdgeReport, FreeConvCdf, NuMeasure,
};
use crate::linalg::pairwise_sum;
use crate::params::ModelParams;
use crate::rs::{at_value, plefka2_limit_value, plefka_values, solve_q, RsSolution, DEFAULT_Q_TOL};
use crate::spectra::{
    haar_abs_statistic, ks_distance, sym_eigen, top_eigpair_block, top_eigpair_op, EsdCurve,
    SymOp,
};
use crate::tap::{
    hessian, hessian_decomposition, optimal_alpha, sample_independent_magnetization_stream,
    sign_magnetization, tap_free_energy, tap_residual, HessianOp, Magnetization,
};
use crate::VERSION;

/// Worker-count environment variable honored by the parallel feature.
pub const WORKERS_ENV: &str = "SKTAP_WORKERS";

/// Schema version stamped into every emitted JSON document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    RsSolve,
    AmpRun,
    TapRs,
    Spectrum,
    Edge,
    Theorem12,
    Theorem15,
    PhaseDiagram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_n() -> usize {
    1000
}
fn default_k() -> usize {
    8
}
fn default_replicas() -> usize {
    10
}
fn default_format() -> OutputFormat {
    OutputFormat::Csv
}
fn default_beta_range() -> (f64, f64) {
    (0.0, 3.5)
}
fn default_h_range() -> (f64, f64) {
    (0.0, 3.5)
}
fn default_resolution() -> usize {
    300
}

/// Flat experiment configuration; unknown keys in a config file are
/// rejected so parameter drift fails loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub beta: f64,
    pub h: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
    /// Phase-diagram grid: inclusive beta range; h range is half-open at the
    /// left when it starts at 0.
    #[serde(default = "default_beta_range")]
    pub beta_range: (f64, f64),
    #[serde(default = "default_h_range")]
    pub h_range: (f64, f64),
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, beta: f64, h: f64) -> Self {
        Self {
            experiment,
            beta,
            h,
            n: default_n(),
            k: default_k(),
            replicas: default_replicas(),
            seed: 0,
            out: None,
            format: default_format(),
            beta_range: default_beta_range(),
            h_range: default_h_range(),
            resolution: default_resolution(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| SkError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment == Experiment::PhaseDiagram {
            if self.resolution < 10 {
                return Err(SkError::Config(format!(
                    "phase-diagram resolution must be >= 10, got {}",
                    self.resolution
                )));
            }
            if !(self.beta_range.1 > self.beta_range.0) || !(self.h_range.1 > self.h_range.0) {
                return Err(SkError::Config("degenerate grid ranges".into()));
            }
            if self.h_range.0 < 0.0 {
                return Err(SkError::Config("h range must start at >= 0".into()));
            }
            return Ok(());
        }
        ModelParams::new(self.beta, self.h).map_err(|e| SkError::Config(e.to_string()))?;
        if self.replicas < 1 {
            return Err(SkError::Config("replicas must be >= 1".into()));
        }
        if self.n < 2 {
            return Err(SkError::Config("n must be >= 2".into()));
        }
        if self.k < 2 {
            return Err(SkError::Config("k must be >= 2".into()));
        }
        Ok(())
    }

    fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.beta, self.h)
    }
}

/// One replica's observables, or the error that felled it.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaRecord {
    pub replica: usize,
    pub observables: Vec<f64>,
    pub error: Option<String>,
}

/// A full experiment result: config echo, named per-replica columns, the
/// replica table, index-order-independent aggregates, and experiment-level
/// scalars (solved constants, predictions, edges).
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub scalars: Vec<(String, f64)>,
    pub columns: Vec<String>,
    pub replicas: Vec<ReplicaRecord>,
    pub aggregate_mean: Vec<f64>,
    pub aggregate_stddev: Vec<f64>,
    /// Wall-clock seconds; reported on stdout, never written to files.
    #[serde(skip)]
    pub duration_seconds: f64,
}

impl ExperimentRecord {
    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars
            .iter()
            .find(|(k, _)| k == name)
            .map(|&(_, v)| v)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Mean of one named column over successful replicas.
    pub fn mean(&self, name: &str) -> Option<f64> {
        self.column_index(name).map(|i| self.aggregate_mean[i])
    }

    /// Per-replica values of one named column (successful replicas only).
    pub fn column(&self, name: &str) -> Vec<f64> {
        match self.column_index(name) {
            None => Vec::new(),
            Some(i) => self
                .replicas
                .iter()
                .filter(|r| r.error.is_none())
                .map(|r| r.observables[i])
                .collect(),
        }
    }

    pub fn failed_fraction(&self) -> f64 {
        if self.replicas.is_empty() {
            return 0.0;
        }
        self.replicas.iter().filter(|r| r.error.is_some()).count() as f64
            / self.replicas.len() as f64
    }
}

fn aggregate(columns: usize, replicas: &[ReplicaRecord]) -> (Vec<f64>, Vec<f64>) {
    let good: Vec<&ReplicaRecord> = replicas.iter().filter(|r| r.error.is_none()).collect();
    let mut means = vec![0.0; columns];
    let mut stds = vec![0.0; columns];
    if good.is_empty() {
        return (means, stds);
    }
    let nf = good.len() as f64;
    for c in 0..columns {
        let vals: Vec<f64> = good.iter().map(|r| r.observables[c]).collect();
        let mean = pairwise_sum(&vals) / nf;
        means[c] = mean;
        if good.len() > 1 {
            let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
            stds[c] = (pairwise_sum(&sq) / (nf - 1.0)).sqrt();
        }
    }
    (means, stds)
}

fn build_record(
    config: &ExperimentConfig,
    scalars: Vec<(String, f64)>,
    columns: Vec<String>,
    replicas: Vec<ReplicaRecord>,
    started: Instant,
) -> ExperimentRecord {
    let (aggregate_mean, aggregate_stddev) = aggregate(columns.len(), &replicas);
    ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        code_version: VERSION.to_string(),
        config: config.clone(),
        scalars,
        columns,
        replicas,
        aggregate_mean,
        aggregate_stddev,
        duration_seconds: started.elapsed().as_secs_f64(),
    }
}

/// Runs `f` over replica indices on the worker pool (rayon, sized by
/// `SKTAP_WORKERS` when set) and returns results in index order.
#[cfg(feature = "parallel")]
pub fn replica_map<T: Send, F: Fn(usize) -> T + Sync + Send>(replicas: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&w| w >= 1);
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .expect("worker pool")
            .install(|| (0..replicas).into_par_iter().map(f).collect()),
        None => (0..replicas).into_par_iter().map(f).collect(),
    }
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn replica_map<T: Send, F: Fn(usize) -> T + Sync + Send>(replicas: usize, f: F) -> Vec<T> {
    (0..replicas).map(f).collect()
}

/// Always-sequential variant (benchmark baseline).
pub fn replica_map_sequential<T, F: Fn(usize) -> T>(replicas: usize, f: F) -> Vec<T> {
    (0..replicas).map(f).collect()
}

fn replica_rows<F>(replicas: usize, f: F) -> Vec<ReplicaRecord>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    replica_map(replicas, |i| match f(i) {
        Ok(observables) => ReplicaRecord {
            replica: i,
            observables,
            error: None,
        },
        Err(e) => ReplicaRecord {
            replica: i,
            observables: Vec::new(),
            error: Some(e.to_string()),
        },
    })
}

fn rs_scalars(params: ModelParams, rs: &RsSolution) -> Vec<(String, f64)> {
    vec![
        ("beta".into(), params.beta),
        ("h".into(), params.h),
        ("q".into(), rs.q),
        ("rs_value".into(), rs.rs_value),
        ("at_value".into(), rs.at_value),
        ("plefka2_value".into(), rs.plefka2_value),
    ]
}

/// Scalar layer only: solve the fixed point and report the classifiers.
pub fn run_rs_solve(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let started = Instant::now();
    config.validate()?;
    let params = config.params()?;
    let rs = solve_q(params, DEFAULT_Q_TOL)?;
    Ok(build_record(
        config,
        rs_scalars(params, &rs),
        Vec::new(),
        Vec::new(),
        started,
    ))
}

/// Runs the conditional iteration per replica and reports state diagnostics
/// at the final step.
pub fn run_amp_run(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let started = Instant::now();
    config.validate()?;
    let params = config.params()?;
    let rs = solve_q(params, DEFAULT_Q_TOL)?;
    let k = config.k;
    let overlaps = k.min(4);
    let mut columns = vec![
        "norm_m_sq".to_string(),
        "residual_norm".to_string(),
        "phi_xi_overlap".to_string(),
    ];
    for s in 1..=overlaps {
        columns.push(format!("overlap_{s}"));
    }
    let rows = replica_rows(config.replicas, |i| {
        let g = sample_disorder_stream(config.n, config.seed, i as u64)?;
        let gbar = symmetrize(&g);
        let mut state = amp_init(params, &rs, g, k + 1)?;
        for _ in 1..k {
            state = amp_step(state)?;
        }
        let diag = diagnostics(&state, &rs)?;
        let m = Magnetization::new(state.m_k.clone())?;
        let (_, res) = tap_residual(&gbar, &m, params, rs.q)?;
        let mut row = vec![diag.norm_m_sq, res, diag.phi_xi_overlap];
        for s in 0..overlaps {
            row.push(diag.gamma_overlaps[s]);
        }
        Ok(row)
    });
    Ok(build_record(
        config,
        rs_scalars(params, &rs),
        columns,
        rows,
        started,
    ))
}

/// TAP-vs-RS experiment: per-site TAP free energy at the iterate, plus the
/// stationarity residual along the whole k sweep.
pub fn run_tap_rs(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let started = Instant::now();
    config.validate()?;
    let params = config.params()?;
    let rs = solve_q(params, DEFAULT_Q_TOL)?;
    if rs.at_value >= 1.0 {
        eprintln!(
            "warning: ({}, {}) has at_value = {:.4} >= 1; iteration guarantees hold only below the AT line",
            params.beta, params.h, rs.at_value
        );
    }
    let k = config.k;
    let mut columns = vec![
        "per_site_tap".to_string(),
        "tap_minus_rs".to_string(),
        "norm_m_sq".to_string(),
    ];
    for step in 2..=k {
        columns.push(format!("residual_k{step}"));
    }
    let rows = replica_rows(config.replicas, |i| {
        let g = sample_disorder_stream(config.n, config.seed, i as u64)?;
        let gbar = symmetrize(&g);
        let mut state = amp_init(params, &rs, g, k + 1)?;
        let mut residuals = Vec::with_capacity(k - 1);
        for _ in 1..k {
            state = amp_step(state)?;
            let m = Magnetization::new(state.m_k.clone())?;
            let (_, res) = tap_residual(&gbar, &m, params, rs.q)?;
            residuals.push(res);
        }
        let m = Magnetization::new(state.m_k.clone())?;
        let tap = tap_free_energy(&gbar, &m, params)?;
        let norm_m_sq = m.m.iter().map(|x| x * x).sum::<f64>() / m.n as f64;
        let mut row = vec![tap.per_site, tap.per_site - rs.rs_value, norm_m_sq];
        row.extend(residuals);
        Ok(row)
    });
    Ok(build_record(
        config,
        rs_scalars(params, &rs),
        columns,
        rows,
        started,
    ))
}

/// Hessian spectrum at the iterate against the free-convolution prediction:
/// KS distance of the ESD, top eigenvalue vs the shifted edge, and the
/// rank/residual structure report.
pub fn run_spectrum(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let started = Instant::now();
    config.validate()?;
    let params = config.params()?;
    let rs = solve_q(params, DEFAULT_Q_TOL)?;
    let nu = NuMeasure::new(params, rs.q)?;
    let edge = support_edge(&nu)?;
    let shift = params.beta * params.beta * (1.0 - rs.q);
    let cdf = FreeConvCdf::build(&nu, shift, 1600, 1e-6)?;
    let k = config.k;
    let columns: Vec<String> = [
        "ks_distance",
        "lambda1",
        "b_rank",
        "resid_frob_over_n",
        "below_half_edge",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = replica_rows(config.replicas, |i| {
        let g = sample_disorder_stream(config.n, config.seed, i as u64)?;
        let gbar = symmetrize(&g);
        let mut state = amp_init(params, &rs, g, k + 1)?;
        for _ in 1..k {
            state = amp_step(state)?;
        }
        let m = Magnetization::new(state.m_k.clone())?;
        let hm = hessian(&gbar, &m, params)?;
        drop(gbar);
        let rep = hessian_decomposition(&state, &hm, params, rs.q)?;
        let eig = sym_eigen(&hm.entries, false)?;
        let lambda1 = eig.eigenvalues[0];
        let esd = EsdCurve::from_values(eig.eigenvalues);
        let ks = ks_distance(&esd, |x| cdf.eval(x));
        let below = if lambda1 < edge.shifted_edge / 2.0 { 1.0 } else { 0.0 };
        Ok(vec![
            ks,
            lambda1,
            rep.b_rank as f64,
            rep.residual_frobenius / config.n as f64,
            below,
        ])
    });
    let mut scalars = rs_scalars(params, &rs);
    scalars.push(("u_star".into(), edge.u_star));
    scalars.push(("d".into(), edge.d));
    scalars.push(("shifted_edge".into(), edge.shifted_edge));
    scalars.push(("cdf_mass".into(), cdf.total_mass));
    Ok(build_record(config, scalars, columns, rows, started))
}

struct ScaledMatOp<'a> {
    mat: &'a ndarray::Array2<f64>,
    factor: f64,
}

impl SymOp for ScaledMatOp<'_> {
    fn dim(&self) -> usize {
        self.mat.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mat.apply(x, y);
        for v in y.iter_mut() {
            *v *= self.factor;
        }
    }
    fn apply_block(&self, xs: &[Vec<f64>], ys: &mut [Vec<f64>]) {
        self.mat.apply_block(xs, ys);
        for y in ys.iter_mut() {
            for v in y.iter_mut() {
                *v *= self.factor;
            }
        }
    }
}

/// Edge-vector block size for the near-degenerate GOE top.
const EDGE_BLOCK: usize = 8;

/// Sign-magnetization experiment: Rayleigh quotient of the Hessian on the
/// GOE edge eigenvector against the analytic prediction, plus the Haar
/// absolute-sum statistic.
pub fn run_theorem12(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let started = Instant::now();
    config.validate()?;
    let params = config.params()?;
    let rs = solve_q(params, DEFAULT_Q_TOL)?;
    if params.beta <= 0.8 {
        eprintln!(
            "warning: beta = {} is at or below the positivity threshold ~0.798; the predicted Rayleigh quotient is not positive there",
            params.beta
        );
    }
    let (alpha_sq, prediction) = optimal_alpha(params.beta);
    let alpha = alpha_sq.sqrt();
    let columns: Vec<String> = ["rayleigh", "lambda1", "haar", "p1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = replica_rows(config.replicas, |i| {
        let g = sample_disorder_stream(config.n, config.seed, i as u64)?;
        let gbar = symmetrize(&g);
        drop(g);
        let goe = ScaledMatOp {
            mat: &gbar.entries,
            factor: params.beta / (config.n as f64).sqrt(),
        };
        let (_, v) = top_eigpair_block(&goe, EDGE_BLOCK, 1e-5, -3.0 * params.beta)?;
        let haar = haar_abs_statistic(&v);
        let m = sign_magnetization(&v, alpha)?;
        let (p1, _) = plefka_values(m.as_slice(), params)?;
        let op = HessianOp::new(&gbar, &m, params)?;
        let rayleigh = op.quadratic_form(&v);
        let floor = op.spectral_floor();
        let (lambda1, _) = top_eigpair_op(&op, 1e-8, floor)?;
        Ok(vec![rayleigh, lambda1, haar, p1])
    });
    let mut scalars = rs_scalars(params, &rs);
    scalars.push(("alpha_sq".into(), alpha_sq));
    scalars.push(("prediction".into(), prediction));
    scalars.push((
        "beta0".into(),
        std::f64::consts::FRAC_PI_2 * ((1.0 + 4.0 / std::f64::consts::PI).sqrt() - 1.0),
    ));
    Ok(build_record(config, scalars, columns, rows, started))
}

/// Independent-magnetization experiment (both stability branches): the top
/// Hessian eigenvalue against the secular-equation outlier prediction or the
/// shifted bulk edge, with the finite-N Sherman-Morrison root per replica.
pub fn run_theorem15(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let started = Instant::now();
    config.validate()?;
    let params = config.params()?;
    let rs = solve_q(params, DEFAULT_Q_TOL)?;
    if rs.at_value >= 1.0 {
        eprintln!(
            "warning: ({}, {}) has at_value = {:.4} >= 1; the independent-magnetization theory assumes a strict-AT point",
            params.beta, params.h, rs.at_value
        );
    }
    let nu = NuMeasure::new(params, rs.q)?;
    let edge = support_edge(&nu)?;
    let shift = params.beta * params.beta * (1.0 - rs.q);
    let (u_inf, positive) = sherman_morrison_population(&nu)?;
    let prediction = if positive {
        subordination_h(u_inf, &nu)?.0 - shift
    } else {
        edge.shifted_edge
    };
    let columns: Vec<String> = ["lambda1", "u_n", "p2_empirical"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = replica_rows(config.replicas, |i| {
        let m =
            sample_independent_magnetization_stream(params, rs.q, config.n, config.seed, i as u64)?;
        let (u_n, _) = sherman_morrison_top_eig(&m, params)?;
        let (_, p2) = plefka_values(m.as_slice(), params)?;
        let g = sample_disorder_stream(config.n, config.seed, i as u64)?;
        let gbar = symmetrize(&g);
        drop(g);
        let hm = hessian(&gbar, &m, params)?;
        drop(gbar);
        let eig = sym_eigen(&hm.entries, false)?;
        Ok(vec![eig.eigenvalues[0], u_n, p2])
    });
    let mut scalars = rs_scalars(params, &rs);
    scalars.push(("u_inf".into(), u_inf));
    scalars.push(("outlier_branch".into(), if positive { 1.0 } else { 0.0 }));
    scalars.push(("prediction".into(), prediction));
    scalars.push(("shifted_edge".into(), edge.shifted_edge));
    Ok(build_record(config, scalars, columns, rows, started))
}

/// Edge computation plus an optional density curve of the limiting Hessian
/// spectrum.
pub struct EdgeOutput {
    pub record: ExperimentRecord,
    pub edge: EdgeReport,
    /// (x, density) samples of the shifted free convolution.
    pub density: Vec<(f64, f64)>,
}

/// Number of density samples emitted by the edge experiment.
const EDGE_DENSITY_POINTS: usize = 1200;

pub fn run_edge(config: &ExperimentConfig) -> Result<EdgeOutput> {
    let started = Instant::now();
    config.validate()?;
    let params = config.params()?;
    let rs = solve_q(params, DEFAULT_Q_TOL)?;
    let nu = NuMeasure::new(params, rs.q)?;
    let edge = support_edge(&nu)?;
    let shift = params.beta * params.beta * (1.0 - rs.q);
    let (h0, dh0) = subordination_h(0.0, &nu)?;
    let lo = nu.lower_quantile(2e-4) - shift - 2.0 * params.beta - 0.5;
    let hi = edge.shifted_edge + 0.5;
    let xs: Vec<f64> = (0..EDGE_DENSITY_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (EDGE_DENSITY_POINTS - 1) as f64)
        .collect();
    let dens = density_grid(&xs, 1e-6, &nu, shift)?;
    let density: Vec<(f64, f64)> = xs.into_iter().zip(dens).collect();
    let mut scalars = rs_scalars(params, &rs);
    scalars.push(("u_star".into(), edge.u_star));
    scalars.push(("d".into(), edge.d));
    scalars.push(("shifted_edge".into(), edge.shifted_edge));
    scalars.push(("h_at_zero".into(), h0));
    scalars.push(("h_prime_at_zero".into(), dh0));
    let record = build_record(config, scalars, Vec::new(), Vec::new(), started);
    Ok(EdgeOutput {
        record,
        edge,
        density,
    })
}

/// Phase classification of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseRegion {
    /// AT holds and the limiting second Plefka value is below 1.
    AtAndP2,
    /// AT fails (the red region).
    BeyondAt,
    /// AT holds but the second Plefka condition fails (the blue region).
    AtNotP2,
}

impl PhaseRegion {
    pub fn code(self) -> u8 {
        match self {
            PhaseRegion::AtAndP2 => 0,
            PhaseRegion::BeyondAt => 1,
            PhaseRegion::AtNotP2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhasePoint {
    pub beta: f64,
    pub h: f64,
    pub q: f64,
    pub at_value: f64,
    pub plefka2_value: f64,
    pub region: PhaseRegion,
}

/// Phase diagram plus the two boundary curves traced by bisection in h.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseOutput {
    pub schema_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub points: Vec<PhasePoint>,
    /// (beta, h) along at_value = 1.
    pub at_boundary: Vec<(f64, f64)>,
    /// (beta, h) along plefka2_value = 1.
    pub p2_boundary: Vec<(f64, f64)>,
    #[serde(skip)]
    pub duration_seconds: f64,
}

fn classify(beta: f64, h: f64) -> Result<PhasePoint> {
    let params = ModelParams::new(beta.max(crate::params::BETA_MIN), h)?;
    let rs = solve_q(params, DEFAULT_Q_TOL)?;
    let region = if rs.at_value > 1.0 {
        PhaseRegion::BeyondAt
    } else if rs.plefka2_value >= 1.0 {
        PhaseRegion::AtNotP2
    } else {
        PhaseRegion::AtAndP2
    };
    Ok(PhasePoint {
        beta,
        h,
        q: rs.q,
        at_value: rs.at_value,
        plefka2_value: rs.plefka2_value,
        region,
    })
}

/// Bisection in h at fixed beta for `value(beta, h) = 1`, to 1e-6 in h.
fn boundary_h<F: Fn(f64, f64) -> Result<f64>>(
    beta: f64,
    h_lo: f64,
    h_hi: f64,
    value: F,
) -> Result<Option<f64>> {
    let lo0 = h_lo.max(1e-6);
    let top = value(beta, lo0)?;
    let bottom = value(beta, h_hi)?;
    if top < 1.0 || bottom > 1.0 {
        return Ok(None);
    }
    let (mut lo, mut hi) = (lo0, h_hi);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if value(beta, mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

pub fn run_phase_diagram(config: &ExperimentConfig) -> Result<PhaseOutput> {
    let started = Instant::now();
    config.validate()?;
    let res = config.resolution;
    let (b_lo, b_hi) = config.beta_range;
    let (h_lo, h_hi) = config.h_range;
    let betas: Vec<f64> = (0..res)
        .map(|i| b_lo + (b_hi - b_lo) * i as f64 / (res - 1) as f64)
        .collect();
    // half-open on the left when the range starts at 0
    let hs: Vec<f64> = (0..res)
        .map(|j| h_lo + (h_hi - h_lo) * (j + 1) as f64 / res as f64)
        .collect();

    let rows = replica_map(res, |bi| {
        let beta = betas[bi];
        let mut row = Vec::with_capacity(res);
        for &h in &hs {
            row.push(classify(beta, h));
        }
        row
    });
    let mut points = Vec::with_capacity(res * res);
    for row in rows {
        for p in row {
            points.push(p?);
        }
    }

    let scan = |which: u8| -> Vec<(f64, f64)> {
        let found = replica_map(res, |bi| {
            let beta = betas[bi].max(crate::params::BETA_MIN);
            let f = |b: f64, h: f64| -> Result<f64> {
                let params = ModelParams::new(b, h)?;
                let rs = solve_q(params, DEFAULT_Q_TOL)?;
                Ok(if which == 0 {
                    at_value(params, rs.q)?
                } else {
                    plefka2_limit_value(params, rs.q)?
                })
            };
            boundary_h(beta, h_lo, h_hi, f).ok().flatten().map(|h| (betas[bi], h))
        });
        found.into_iter().flatten().collect()
    };
    let at_boundary = scan(0);
    let p2_boundary = scan(1);

    Ok(PhaseOutput {
        schema_version: SCHEMA_VERSION,
        code_version: VERSION.to_string(),
        config: config.clone(),
        points,
        at_boundary,
        p2_boundary,
        duration_seconds: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// persistence

/// Formats a float with 17 significant digits (round-trips f64 exactly).
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| SkError::Config(format!("serialization failed: {e}")))?;
    Ok(String::from_utf8(out).expect("utf8 json"))
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| SkError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(BufWriter::new(file))
}

fn io_err(path: &Path, e: io::Error) -> SkError {
    SkError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Writes a record as CSV (replica table with labeled aggregate rows and a
/// trailing error column) or as a schema-versioned JSON document. Field
/// order is fixed; numbers carry 17 significant digits, so emitted files
/// parse back bit-exactly and identical configs yield identical bytes.
pub fn emit(record: &ExperimentRecord, path: &Path, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Json => {
            let text = to_json_pretty(record)?;
            let mut w = open_out(path)?;
            w.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
            w.write_all(b"\n").map_err(|e| io_err(path, e))?;
            Ok(())
        }
        OutputFormat::Csv => {
            let mut w = open_out(path)?;
            let mut write = || -> io::Result<()> {
                // scalar context as comment lines keeps the table rectangular
                for (k, v) in &record.scalars {
                    writeln!(w, "# {} = {}", k, fmt_float(*v))?;
                }
                write!(w, "replica")?;
                for c in &record.columns {
                    write!(w, ",{c}")?;
                }
                writeln!(w, ",error")?;
                for r in &record.replicas {
                    write!(w, "{}", r.replica)?;
                    if r.error.is_none() {
                        for v in &r.observables {
                            write!(w, ",{}", fmt_float(*v))?;
                        }
                        writeln!(w, ",")?;
                    } else {
                        for _ in &record.columns {
                            write!(w, ",")?;
                        }
                        writeln!(w, ",{}", r.error.clone().unwrap().replace(',', ";"))?;
                    }
                }
                if !record.columns.is_empty() {
                    write!(w, "mean")?;
                    for v in &record.aggregate_mean {
                        write!(w, ",{}", fmt_float(*v))?;
                    }
                    writeln!(w, ",")?;
                    write!(w, "stddev")?;
                    for v in &record.aggregate_stddev {
                        write!(w, ",{}", fmt_float(*v))?;
                    }
                    writeln!(w, ",")?;
                }
                Ok(())
            };
            write().map_err(|e| io_err(path, e))
        }
    }
}

/// Density curve as two-column CSV (`x,density`).
pub fn emit_density(density: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut w = open_out(path)?;
    let mut write = || -> io::Result<()> {
        writeln!(w, "x,density")?;
        for &(x, d) in density {
            writeln!(w, "{},{}", fmt_float(x), fmt_float(d))?;
        }
        Ok(())
    };
    write().map_err(|e| io_err(path, e))
}

/// Edge report as JSON.
pub fn emit_edge_json(out: &EdgeOutput, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct EdgeDoc<'a> {
        schema_version: u32,
        code_version: &'a str,
        config: &'a ExperimentConfig,
        edge: &'a EdgeReport,
        scalars: &'a [(String, f64)],
    }
    let doc = EdgeDoc {
        schema_version: SCHEMA_VERSION,
        code_version: VERSION,
        config: &out.record.config,
        edge: &out.edge,
        scalars: &out.record.scalars,
    };
    let text = to_json_pretty(&doc)?;
    let mut w = open_out(path)?;
    w.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Phase diagram: grid CSV (`beta,h,region_code,q,at_value,plefka2_value`;
/// the first three columns form the plottable grid) plus a boundary-curve
/// CSV next to it, or a single JSON document.
pub fn emit_phase(out: &PhaseOutput, path: &Path, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Json => {
            let text = to_json_pretty(out)?;
            let mut w = open_out(path)?;
            w.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
            w.write_all(b"\n").map_err(|e| io_err(path, e))?;
            Ok(())
        }
        OutputFormat::Csv => {
            {
                let mut w = open_out(path)?;
                let mut write = || -> io::Result<()> {
                    writeln!(w, "beta,h,region_code,q,at_value,plefka2_value")?;
                    for p in &out.points {
                        writeln!(
                            w,
                            "{},{},{},{},{},{}",
                            fmt_float(p.beta),
                            fmt_float(p.h),
                            p.region.code(),
                            fmt_float(p.q),
                            fmt_float(p.at_value),
                            fmt_float(p.plefka2_value)
                        )?;
                    }
                    Ok(())
                };
                write().map_err(|e| io_err(path, e))?;
            }
            let bpath = boundaries_path(path);
            let mut w = open_out(&bpath)?;
            let mut write = || -> io::Result<()> {
                writeln!(w, "curve,beta,h")?;
                for &(b, h) in &out.at_boundary {
                    writeln!(w, "at,{},{}", fmt_float(b), fmt_float(h))?;
                }
                for &(b, h) in &out.p2_boundary {
                    writeln!(w, "p2,{},{}", fmt_float(b), fmt_float(h))?;
                }
                Ok(())
            };
            write().map_err(|e| io_err(&bpath, e))
        }
    }
}

/// `<stem>.boundaries.csv` next to the main phase CSV.
pub fn boundaries_path(path: &Path) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "phase".into());
    path.with_file_name(format!("{stem}.boundaries.csv"))
}

/// State dump of a single replica (`site,m,h` per row) for debugging.
pub fn emit_state_dump(m: &[f64], hfield: &[f64], path: &Path) -> Result<()> {
    let mut w = open_out(path)?;
    let mut write = || -> io::Result<()> {
        writeln!(w, "site,m,h")?;
        for (i, (mv, hv)) in m.iter().zip(hfield).enumerate() {
            writeln!(w, "{},{},{}", i, fmt_float(*mv), fmt_float(*hv))?;
        }
        Ok(())
    };
    write().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::new(Experiment::TapRs, 1.0, 0.5);
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.beta, 1.0);
        assert!(ExperimentConfig::from_json("{\"experiment\":\"tap_rs\",\"beta\":1.0,\"h\":0.5,\"bogus\":1}").is_err());
        assert!(ExperimentConfig::from_json("{\"experiment\":\"tap_rs\",\"beta\":1.0,\"h\":0.0}").is_err());
    }

    #[test]
    fn rs_solve_record_has_no_replica_rows() {
        let cfg = ExperimentConfig::new(Experiment::RsSolve, 1.0, 0.5);
        let rec = run_rs_solve(&cfg).unwrap();
        assert!(rec.replicas.is_empty());
        assert!(rec.columns.is_empty());
        let q = rec.scalar("q").unwrap();
        assert!((q - 0.3025129643).abs() < 1e-9);
    }

    #[test]
    fn fmt_float_round_trips() {
        for &x in &[
            0.3025129643431804_f64,
            -1.0e-17,
            std::f64::consts::PI,
            6.02e23,
            -0.0,
        ] {
            let s = fmt_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn replica_map_is_index_ordered() {
        let out = replica_map(64, |i| i * 3);
        assert_eq!(out, (0..64).map(|i| i * 3).collect::<Vec<_>>());
    }

    #[test]
    fn aggregates_skip_failed_replicas() {
        let rows = vec![
            ReplicaRecord {
                replica: 0,
                observables: vec![1.0],
                error: None,
            },
            ReplicaRecord {
                replica: 1,
                observables: vec![],
                error: Some("boom".into()),
            },
            ReplicaRecord {
                replica: 2,
                observables: vec![3.0],
                error: None,
            },
        ];
        let (mean, std) = aggregate(1, &rows);
        assert_eq!(mean, vec![2.0]);
        assert!((std[0] - std::f64::consts::SQRT_2).abs() < 1e-12);
    }
}
