//! Monte Carlo harness.
//!
//! Every trial is addressed by `(master_seed, n, m, algorithm, trial_index)`;
//! its instance seed is [`derive_seed`] of those five words in that order.
//! Trials run in parallel and are aggregated by integer counting, so results
//! do not depend on the number of workers.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocators::{
    brute_force_ef_exists, select_tau, threshold_matching, threshold_matching_with_removal,
    verify_removal_certificates, welfare_maximizing, TauMode, DEFAULT_BRUTE_CAP,
};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::instance::{is_balanced, is_envy_free, Allocation, Instance, SCHEMA};
use crate::rng::derive_seed;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    WelfareMax,
    Alg1,
    Alg2,
    BruteForce,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::WelfareMax,
        Algorithm::Alg1,
        Algorithm::Alg2,
        Algorithm::BruteForce,
    ];

    /// Stable id mixed into trial seeds.
    pub fn id(self) -> u64 {
        match self {
            Algorithm::WelfareMax => 0,
            Algorithm::Alg1 => 1,
            Algorithm::Alg2 => 2,
            Algorithm::BruteForce => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::WelfareMax => "welfare_max",
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::BruteForce => "brute_force",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn schema_v1() -> String {
    SCHEMA.to_string()
}

fn default_brute_cap() -> u64 {
    DEFAULT_BRUTE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "schema_v1")]
    pub schema: String,
    /// `(n, m)` pairs.
    pub grid: Vec<(usize, usize)>,
    pub dist: DistributionSpec,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub tau_mode: TauMode,
    pub master_seed: u64,
    #[serde(default = "default_brute_cap")]
    pub brute_cap: u64,
}

impl SweepConfig {
    /// Desk-scale grid: `n in {20, 50, 100}`, `m/n in {1, 1.5, 2, 3, 5}`.
    pub fn desk_default() -> Self {
        let grid = [20usize, 50, 100]
            .iter()
            .flat_map(|&n| [2usize, 3, 4, 6, 10].map(|half_ratio| (n, n * half_ratio / 2)))
            .collect();
        SweepConfig {
            schema: schema_v1(),
            grid,
            dist: DistributionSpec::Uniform,
            trials: 500,
            algorithms: vec![Algorithm::WelfareMax, Algorithm::Alg1, Algorithm::Alg2],
            tau_mode: TauMode::default(),
            master_seed: 2019,
            brute_cap: DEFAULT_BRUTE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::InvalidParameter(format!(
                "unsupported schema {:?}",
                self.schema
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if let Some(&(n, m)) = self.grid.iter().find(|p| p.0 == 0) {
            return Err(Error::InvalidParameter(format!(
                "grid point ({n}, {m}) has no agents"
            )));
        }
        self.dist.validate()
    }

    /// Points that will actually run: algorithms on `m = r n` with `r >= 1`,
    /// brute force where `n^m <= brute_cap`.
    pub fn points(&self) -> Vec<SweepPoint> {
        self.grid
            .iter()
            .flat_map(|&(n, m)| {
                self.algorithms
                    .iter()
                    .map(move |&a| SweepPoint { n, m, algorithm: a })
            })
            .filter(|p| p.is_schedulable(self.brute_cap))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub m: usize,
    pub algorithm: Algorithm,
}

impl SweepPoint {
    pub fn r(&self) -> usize {
        self.m / self.n
    }

    fn is_schedulable(&self, brute_cap: u64) -> bool {
        match self.algorithm {
            Algorithm::WelfareMax => true,
            Algorithm::Alg1 | Algorithm::Alg2 => self.m >= self.n && self.m % self.n == 0,
            Algorithm::BruteForce => u32::try_from(self.m)
                .ok()
                .and_then(|e| (self.n as u64).checked_pow(e))
                .is_some_and(|t| t <= brute_cap),
        }
    }

    pub fn trial_seed(&self, master_seed: u64, trial_index: usize) -> u64 {
        derive_seed(&[
            master_seed,
            self.n as u64,
            self.m as u64,
            self.algorithm.id(),
            trial_index as u64,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    EfAllocation,
    Null,
    NonEfAllocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub algorithm: Algorithm,
    pub trial_index: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub removals: usize,
    pub tau: Option<f64>,
    pub owner: Option<Vec<usize>>,
    pub runtime_ns: u64,
}

impl TrialRecord {
    /// Regenerates the instance and re-checks the stored outcome.
    pub fn audit(&self, dist: &DistributionSpec) -> Result<bool> {
        let inst = Instance::generate(self.n, self.m, dist, self.seed)?;
        Ok(match (&self.outcome, &self.owner) {
            (Outcome::Null, None) => true,
            (Outcome::Null, Some(_)) => false,
            (_, None) => false,
            (outcome, Some(owner)) => {
                let alloc = Allocation::new(owner.clone());
                let ef = is_envy_free(&inst, &alloc)?;
                ef == (*outcome == Outcome::EfAllocation)
            }
        })
    }

    /// Record equality ignoring wall-clock time.
    pub fn same_result(&self, other: &TrialRecord) -> bool {
        TrialRecord {
            runtime_ns: 0,
            ..self.clone()
        } == TrialRecord {
            runtime_ns: 0,
            ..other.clone()
        }
    }
}

fn classify(inst: &Instance, alloc: Option<Allocation>) -> Result<(Outcome, Option<Vec<usize>>)> {
    Ok(match alloc {
        None => (Outcome::Null, None),
        Some(a) => {
            let outcome = if is_envy_free(inst, &a)? {
                Outcome::EfAllocation
            } else {
                Outcome::NonEfAllocation
            };
            (outcome, Some(a.owner))
        }
    })
}

/// Runs one trial and audits its output.
pub fn run_trial(cfg: &SweepConfig, point: &SweepPoint, trial_index: usize) -> Result<TrialRecord> {
    let seed = point.trial_seed(cfg.master_seed, trial_index);
    let inst = Instance::generate(point.n, point.m, &cfg.dist, seed)?;
    let r = point.r();
    let start = Instant::now();
    let mut removals = 0;
    let mut tau = None;
    let alloc = match point.algorithm {
        Algorithm::WelfareMax => Some(welfare_maximizing(&inst)),
        Algorithm::Alg1 | Algorithm::Alg2 => {
            let params = match cfg.tau_mode {
                TauMode::Analytic { .. } => Some(cfg.dist.poly_bound_params()?),
                _ => None,
            };
            let t = select_tau(&inst, r, params.as_ref(), cfg.tau_mode)?.resolved_tau;
            tau = Some(t);
            if point.algorithm == Algorithm::Alg1 {
                threshold_matching(&inst, r, t)?
            } else {
                let out = threshold_matching_with_removal(&inst, r, t)?;
                removals = out.log.len();
                if !verify_removal_certificates(&inst, t, r, &out.log).all_certified {
                    return Err(Error::Internal(format!(
                        "uncertified removal in trial {trial_index} at (n = {}, m = {})",
                        point.n, point.m
                    )));
                }
                out.allocation
            }
        }
        Algorithm::BruteForce => brute_force_ef_exists(&inst, cfg.brute_cap)?.witness,
    };
    let runtime_ns = u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX);
    if let (Some(a), Algorithm::Alg1 | Algorithm::Alg2) = (&alloc, point.algorithm) {
        if !is_balanced(a, point.n, r) {
            return Err(Error::Internal(
                "threshold allocation is not balanced".into(),
            ));
        }
    }
    let (outcome, owner) = classify(&inst, alloc)?;
    Ok(TrialRecord {
        n: point.n,
        m: point.m,
        r,
        algorithm: point.algorithm,
        trial_index,
        seed,
        outcome,
        removals,
        tau,
        owner,
        runtime_ns,
    })
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let t = trials as f64;
    let p = successes as f64 / t;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / t;
    let center = (p + z2 / (2.0 * t)) / denom;
    let half = Z_95 / denom * (p * (1.0 - p) / t + z2 / (4.0 * t * t)).sqrt();
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub success_count: usize,
    pub ef_count: usize,
    pub success_rate: f64,
    pub ef_rate: f64,
    /// Wilson 95% interval of `ef_rate`.
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_removals: f64,
    pub mean_runtime_ns: f64,
}

/// One output row; the CSV header is exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub dist: String,
    pub algorithm: String,
    pub tau_mode: String,
    pub trials: usize,
    pub success_rate: f64,
    pub ef_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_removals: f64,
    pub master_seed: u64,
}

pub const CSV_HEADER: &str =
    "n,m,r,dist,algorithm,tau_mode,trials,success_rate,ef_rate,ci_low,ci_high,mean_removals,master_seed";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub points: Vec<PointSummary>,
    pub records: Vec<TrialRecord>,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.points
            .iter()
            .map(|p| SweepRow {
                n: p.n,
                m: p.m,
                r: p.r,
                dist: self.config.dist.to_string(),
                algorithm: p.algorithm.to_string(),
                tau_mode: self.config.tau_mode.to_string(),
                trials: p.trials,
                success_rate: p.success_rate,
                ef_rate: p.ef_rate,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
                mean_removals: p.mean_removals,
                master_seed: self.config.master_seed,
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        // The header is written explicitly so an empty sweep still has one.
        w.write_record(CSV_HEADER.split(','))
            .map_err(|e| Error::Internal(e.to_string()))?;
        for row in self.rows() {
            w.serialize(row)
                .map_err(|e| Error::Internal(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema: &'a str,
            rows: Vec<SweepRow>,
        }
        serde_json::to_string_pretty(&Doc {
            schema: SCHEMA,
            rows: self.rows(),
        })
        .map_err(|e| Error::Internal(e.to_string()))
    }
}

fn summarize(point: &SweepPoint, records: &[TrialRecord]) -> PointSummary {
    let trials = records.len();
    let success_count = records
        .iter()
        .filter(|r| r.outcome != Outcome::Null)
        .count();
    let ef_count = records
        .iter()
        .filter(|r| r.outcome == Outcome::EfAllocation)
        .count();
    let removals: usize = records.iter().map(|r| r.removals).sum();
    let runtime: u128 = records.iter().map(|r| u128::from(r.runtime_ns)).sum();
    let (ci_low, ci_high) = wilson_interval(ef_count, trials);
    let t = trials as f64;
    PointSummary {
        n: point.n,
        m: point.m,
        r: point.r(),
        algorithm: point.algorithm,
        trials,
        success_count,
        ef_count,
        success_rate: success_count as f64 / t,
        ef_rate: ef_count as f64 / t,
        ci_low,
        ci_high,
        mean_removals: removals as f64 / t,
        mean_runtime_ns: runtime as f64 / t,
    }
}

/// Runs every trial on the global thread pool.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let points = cfg.points();
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let records = tasks
        .par_iter()
        .map(|&(p, t)| run_trial(cfg, &points[p], t))
        .collect::<Result<Vec<_>>>()?;
    let summaries = points
        .iter()
        .zip(records.chunks(cfg.trials))
        .map(|(p, recs)| summarize(p, recs))
        .collect();
    Ok(SweepResult {
        config: cfg.clone(),
        points: summaries,
        records,
    })
}

/// [`run_sweep`] on a dedicated pool; `workers = 0` means one per core.
pub fn run_sweep_with_workers(cfg: &SweepConfig, workers: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(|| run_sweep(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouponRow {
    pub m: usize,
    pub trials: usize,
    pub empty_agent_count: usize,
    pub ef_count: usize,
    pub empty_agent_rate: f64,
    pub ef_rate: f64,
    pub empty_agent_ci: (f64, f64),
    pub ef_ci: (f64, f64),
}

/// Welfare-maximizing allocation at each `m`: how often some agent ends up
/// with nothing, and how often the result is envy-free.
pub fn coupon_experiment(
    n: usize,
    m_values: &[usize],
    trials: usize,
    seed: u64,
    dist: &DistributionSpec,
) -> Result<Vec<CouponRow>> {
    dist.validate()?;
    m_values
        .iter()
        .map(|&m| {
            let point = SweepPoint {
                n,
                m,
                algorithm: Algorithm::WelfareMax,
            };
            let flags = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let inst = Instance::generate(n, m, dist, point.trial_seed(seed, t))?;
                    let alloc = welfare_maximizing(&inst);
                    let empty = alloc.bundle_sizes(n).contains(&0);
                    Ok((empty, is_envy_free(&inst, &alloc)?))
                })
                .collect::<Result<Vec<(bool, bool)>>>()?;
            let empty_agent_count = flags.iter().filter(|f| f.0).count();
            let ef_count = flags.iter().filter(|f| f.1).count();
            let t = trials.max(1) as f64;
            Ok(CouponRow {
                m,
                trials,
                empty_agent_count,
                ef_count,
                empty_agent_rate: empty_agent_count as f64 / t,
                ef_rate: ef_count as f64 / t,
                empty_agent_ci: wilson_interval(empty_agent_count, trials),
                ef_ci: wilson_interval(ef_count, trials),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastResult {
    pub n: usize,
    pub r: usize,
    pub trials: usize,
    pub m_divisible: usize,
    pub m_offset: usize,
    pub count_divisible: usize,
    pub count_offset: usize,
    pub p_divisible: f64,
    pub p_offset: f64,
    pub ci_divisible: (f64, f64),
    pub ci_offset: (f64, f64),
    /// `sqrt(p1 (1 - p1) / t + p2 (1 - p2) / t)`.
    pub combined_std_error: f64,
}

/// Offset used for the non-divisible side: `max(1, floor(n / 2))`.
pub fn contrast_offset(n: usize) -> usize {
    (n / 2).max(1)
}

/// Estimates `Pr[an envy-free allocation exists]` by exhaustive search at
/// `m = r n` and at `m = r n + max(1, floor(n/2))`.
pub fn divisibility_contrast(
    n: usize,
    r: usize,
    trials: usize,
    seed: u64,
    cap: u64,
    dist: &DistributionSpec,
) -> Result<ContrastResult> {
    if n == 0 || trials == 0 {
        return Err(Error::InvalidParameter(
            "n and trials must be positive".into(),
        ));
    }
    dist.validate()?;
    let m_divisible = r * n;
    let m_offset = m_divisible + contrast_offset(n);
    for m in [m_divisible, m_offset] {
        let fits = u32::try_from(m)
            .ok()
            .and_then(|e| (n as u64).checked_pow(e))
            .is_some_and(|t| t <= cap);
        if !fits {
            return Err(Error::CapExceeded(format!(
                "{n}^{m} allocations exceed cap {cap}"
            )));
        }
    }
    let count = |m: usize| -> Result<usize> {
        let point = SweepPoint {
            n,
            m,
            algorithm: Algorithm::BruteForce,
        };
        let hits = (0..trials)
            .into_par_iter()
            .map(|t| {
                let inst = Instance::generate(n, m, dist, point.trial_seed(seed, t))?;
                Ok(brute_force_ef_exists(&inst, cap)?.exists)
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(hits.into_iter().filter(|&h| h).count())
    };
    let (count_divisible, count_offset) = (count(m_divisible)?, count(m_offset)?);
    let t = trials as f64;
    let (p1, p2) = (count_divisible as f64 / t, count_offset as f64 / t);
    Ok(ContrastResult {
        n,
        r,
        trials,
        m_divisible,
        m_offset,
        count_divisible,
        count_offset,
        p_divisible: p1,
        p_offset: p2,
        ci_divisible: wilson_interval(count_divisible, trials),
        ci_offset: wilson_interval(count_offset, trials),
        combined_std_error: (p1 * (1.0 - p1) / t + p2 * (1.0 - p2) / t).sqrt(),
    })
}
