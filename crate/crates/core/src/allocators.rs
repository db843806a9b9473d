//! Allocation procedures.
//!
//! * [`welfare_maximizing`]: every item to the agent valuing it most.
//! * [`threshold_matching`]: a perfect r-matching of the graph of utilities
//!   at least `tau`.
//! * [`threshold_matching_with_removal`]: the same after pruning each agent's
//!   candidate set until no other agent values its top `r` candidates more than
//!   `r * tau` in total. Any allocation it returns is balanced and envy-free.
//!
//! Logarithms are natural throughout.

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::distributions::PolyBoundParams;
use crate::error::{Error, Result};
use crate::instance::{argmax_lowest, is_balanced, is_envy_free, sum_top_r, Allocation, Instance};
use crate::matching::{find_perfect_r_matching, BipartiteGraph};

/// Default cap on `n^m` for [`brute_force_ef_exists`].
pub const DEFAULT_BRUTE_CAP: u64 = 10_000_000;

/// Default multiplier in the threshold formula.
pub const ANALYTIC_C: f64 = 64.0;

/// Default `kappa` for quantile thresholds.
pub const DEFAULT_KAPPA: f64 = 2.0;

/// How the threshold `tau` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TauMode {
    /// `tau = 1 - (c ln m / (theta_lower n))^(1/q)`.
    Analytic {
        c: f64,
    },
    Fixed {
        tau: f64,
    },
    /// Empirical `(1 - kappa ln m / n)`-quantile of all utilities.
    Quantile {
        kappa: f64,
    },
}

impl Default for TauMode {
    fn default() -> Self {
        TauMode::Quantile {
            kappa: DEFAULT_KAPPA,
        }
    }
}

impl std::fmt::Display for TauMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TauMode::Analytic { c } => write!(f, "analytic({c})"),
            TauMode::Fixed { tau } => write!(f, "fixed({tau})"),
            TauMode::Quantile { kappa } => write!(f, "quantile({kappa})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauChoice {
    pub mode: TauMode,
    pub resolved_tau: f64,
}

/// One pruned edge: `item` left agent `agent`'s candidate set because of
/// `trigger`, as the `step`-th removal overall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub agent: usize,
    pub item: usize,
    pub trigger: usize,
    pub step: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalLog {
    pub entries: Vec<Removal>,
}

impl RemovalLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Output of [`threshold_matching_with_removal`].
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalOutcome {
    pub allocation: Option<Allocation>,
    pub log: RemovalLog,
    /// Candidate sets after pruning, items in increasing order.
    pub candidates: Vec<Vec<usize>>,
}

pub fn welfare_maximizing(inst: &Instance) -> Allocation {
    let owner = (0..inst.m())
        .map(|j| {
            argmax_lowest((0..inst.n()).map(|i| (i, inst.utility(i, j))))
                .expect("at least one agent")
        })
        .collect();
    Allocation::new(owner)
}

fn check_divisible(inst: &Instance, r: usize) -> Result<()> {
    if r == 0 || inst.m() != r * inst.n() {
        return Err(Error::DimensionMismatch(format!(
            "m = {} must equal r * n = {r} * {}",
            inst.m(),
            inst.n()
        )));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    Ok(())
}

/// Resolves the threshold for an instance with `m = r n`.
///
/// `params` is needed only in analytic mode.
pub fn select_tau(
    inst: &Instance,
    r: usize,
    params: Option<&PolyBoundParams>,
    mode: TauMode,
) -> Result<TauChoice> {
    check_divisible(inst, r)?;
    let (n, m) = (inst.n(), inst.m());
    let tau = match mode {
        TauMode::Analytic { c } => {
            let params = params.ok_or_else(|| {
                Error::InvalidParameter("analytic threshold needs poly bound params".into())
            })?;
            analysis::analytic_tau(c, n, m, params)?
        }
        TauMode::Fixed { tau } => tau,
        TauMode::Quantile { kappa } => {
            if !(kappa.is_finite() && kappa > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "kappa must be positive, got {kappa}"
                )));
            }
            let level = 1.0 - kappa * (m as f64).ln() / n as f64;
            if level <= 0.0 {
                return Err(Error::ThresholdNonPositive(format!(
                    "quantile level 1 - {kappa} ln {m} / {n} = {level} is not positive"
                )));
            }
            empirical_quantile(inst.utilities(), level)
        }
    };
    if tau <= 0.0 {
        return Err(Error::ThresholdNonPositive(format!("resolved tau = {tau}")));
    }
    check_tau(tau)?;
    Ok(TauChoice {
        mode,
        resolved_tau: tau,
    })
}

/// Lower empirical quantile: the `ceil(level * N)`-th smallest value.
fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    let mut v = values.to_vec();
    let k = ((level * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    *v.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Candidate sets `{ j : u_i(j) >= tau }`.
pub fn threshold_candidates(inst: &Instance, tau: f64) -> Vec<Vec<usize>> {
    (0..inst.n())
        .map(|i| {
            let row = inst.row(i);
            (0..inst.m()).filter(|&j| row[j] >= tau).collect()
        })
        .collect()
}

fn match_candidates(
    inst: &Instance,
    r: usize,
    candidates: Vec<Vec<usize>>,
) -> Result<Option<Allocation>> {
    let g = BipartiteGraph::new(inst.m(), candidates)?;
    find_perfect_r_matching(&g, r)?
        .map(|rm| Allocation::from_bundles(&rm.assignment, inst.m()))
        .transpose()
}

/// Perfect r-matching of the threshold graph, or `None`.
pub fn threshold_matching(inst: &Instance, r: usize, tau: f64) -> Result<Option<Allocation>> {
    check_divisible(inst, r)?;
    check_tau(tau)?;
    match_candidates(inst, r, threshold_candidates(inst, tau))
}

/// Threshold matching after the removal step.
///
/// Agents `i` are processed in increasing order and, for each, the other
/// agents `i'` in increasing order. While the `r` candidates of `i` that `i'`
/// likes best are worth more than `r * tau` to `i'`, the one `i'` likes most
/// (lowest item index on ties) is dropped.
pub fn threshold_matching_with_removal(
    inst: &Instance,
    r: usize,
    tau: f64,
) -> Result<RemovalOutcome> {
    check_divisible(inst, r)?;
    check_tau(tau)?;
    let n = inst.n();
    let budget = r as f64 * tau;
    let mut candidates = threshold_candidates(inst, tau);
    let mut log = RemovalLog::default();
    let mut scratch = Vec::new();
    for (i, cand) in candidates.iter_mut().enumerate() {
        for other in (0..n).filter(|&k| k != i) {
            let row = inst.row(other);
            loop {
                scratch.clear();
                scratch.extend(cand.iter().map(|&j| row[j]));
                if sum_top_r(&scratch, r) <= budget {
                    break;
                }
                let pos = argmax_lowest(cand.iter().map(|&j| row[j]).enumerate())
                    .expect("sum above a positive budget needs a candidate");
                let item = cand.remove(pos);
                log.entries.push(Removal {
                    agent: i,
                    item,
                    trigger: other,
                    step: log.entries.len(),
                });
            }
        }
    }
    let allocation = match_candidates(inst, r, candidates.clone())?;
    if let Some(a) = &allocation {
        if !is_balanced(a, n, r) || !is_envy_free(inst, a)? {
            return Err(Error::Internal(
                "allocation after removal is not balanced and envy-free".into(),
            ));
        }
    }
    Ok(RemovalOutcome {
        allocation,
        log,
        candidates,
    })
}

/// True iff no ordered pair `(i, i')` still violates the removal condition.
pub fn removal_is_stable(inst: &Instance, candidates: &[Vec<usize>], r: usize, tau: f64) -> bool {
    let budget = r as f64 * tau;
    candidates.iter().enumerate().all(|(i, cand)| {
        (0..inst.n()).filter(|&k| k != i).all(|other| {
            let vals: Vec<f64> = cand.iter().map(|&j| inst.utility(other, j)).collect();
            sum_top_r(&vals, r) <= budget
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryCertificate {
    pub removal: Removal,
    /// `u_agent(item) >= tau`, i.e. the edge existed before pruning.
    pub was_candidate: bool,
    /// An agent whose strict-`tau'` neighborhood shares more than `2r/3`
    /// items with the removed agent's, including the removed item.
    pub witness: Option<usize>,
    pub intersection_size: usize,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub tau_prime: f64,
    /// `tau' <= 0`: every item clears the strict threshold.
    pub degenerate_tau_prime: bool,
    pub entries: Vec<EntryCertificate>,
    pub all_certified: bool,
}

/// Checks every removed edge against the biclique certificate in the graph of
/// utilities strictly above `tau' = 3 tau - 2`.
pub fn verify_removal_certificates(
    inst: &Instance,
    tau: f64,
    r: usize,
    log: &RemovalLog,
) -> CertificateReport {
    let tau_prime = analysis::tau_prime(tau);
    let (n, m) = (inst.n(), inst.m());
    let above: Vec<Vec<bool>> = (0..n)
        .map(|i| inst.row(i).iter().map(|&u| u > tau_prime).collect())
        .collect();
    let need = 2.0 * r as f64 / 3.0;
    let entries: Vec<EntryCertificate> = log
        .entries
        .iter()
        .map(|&removal| {
            let Removal {
                agent,
                item,
                trigger,
                ..
            } = removal;
            if agent >= n || item >= m {
                return EntryCertificate {
                    removal,
                    was_candidate: false,
                    witness: None,
                    intersection_size: 0,
                    certified: false,
                };
            }
            let was_candidate = inst.utility(agent, item) >= tau;
            // The logged trigger is tried first, then every other agent.
            let order = std::iter::once(trigger)
                .filter(|&k| k < n)
                .chain((0..n).filter(|&k| k != trigger));
            let mut best = (None, 0);
            for other in order.filter(|&k| k != agent) {
                if !(above[agent][item] && above[other][item]) {
                    continue;
                }
                let shared = (0..m)
                    .filter(|&j| above[agent][j] && above[other][j])
                    .count();
                if shared as f64 > need {
                    best = (Some(other), shared);
                    break;
                }
                if shared > best.1 {
                    best.1 = shared;
                }
            }
            EntryCertificate {
                removal,
                was_candidate,
                witness: best.0,
                intersection_size: best.1,
                certified: was_candidate && best.0.is_some(),
            }
        })
        .collect();
    CertificateReport {
        tau_prime,
        degenerate_tau_prime: tau_prime <= 0.0,
        all_certified: entries.iter().all(|e| e.certified),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceResult {
    pub exists: bool,
    pub count: u64,
    /// First envy-free allocation in lexicographic order of `owner`.
    pub witness: Option<Allocation>,
}

/// Enumerates all `n^m` allocations.
pub fn brute_force_ef_exists(inst: &Instance, cap: u64) -> Result<BruteForceResult> {
    let (n, m) = (inst.n(), inst.m());
    let total = u32::try_from(m)
        .ok()
        .and_then(|e| (n as u64).checked_pow(e))
        .filter(|&t| t <= cap)
        .ok_or_else(|| Error::CapExceeded(format!("{n}^{m} allocations exceed cap {cap}")))?;

    // values[i * n + k] = u_i(M_k), maintained incrementally.
    let mut owner = vec![0usize; m];
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n] = inst.row(i).iter().sum();
    }
    let mut count = 0u64;
    let mut witness = None;
    for step in 0..total {
        if step > 0 {
            // Odometer with the last item fastest: lexicographic order.
            let mut j = m - 1;
            loop {
                let old = owner[j];
                let new = if old + 1 == n { 0 } else { old + 1 };
                owner[j] = new;
                for i in 0..n {
                    let u = inst.utility(i, j);
                    values[i * n + old] -= u;
                    values[i * n + new] += u;
                }
                if new != 0 {
                    break;
                }
                j -= 1;
            }
        }
        if envy_free_checked(inst, &owner, &values, n) {
            count += 1;
            if witness.is_none() {
                witness = Some(Allocation::new(owner.clone()));
            }
        }
    }
    Ok(BruteForceResult {
        exists: count > 0,
        count,
        witness,
    })
}

/// The incremental bundle values decide clear cases; comparisons within
/// rounding distance are re-evaluated from scratch so the verdict equals
/// [`is_envy_free`] exactly.
fn envy_free_checked(inst: &Instance, owner: &[usize], values: &[f64], n: usize) -> bool {
    const SLACK: f64 = 1e-9;
    let mut close = false;
    for i in 0..n {
        let v = &values[i * n..(i + 1) * n];
        for &x in v {
            let d = v[i] - x;
            if d < -SLACK {
                return false;
            }
            if d.abs() <= SLACK {
                close = true;
            }
        }
    }
    if !close {
        return true;
    }
    is_envy_free(inst, &Allocation::new(owner.to_vec())).expect("owner indices are in range")
}
