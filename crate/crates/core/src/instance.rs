//! Instances, allocations, and the envy predicates.
//!
//! Agents and items are 0-indexed throughout the library and in every JSON
//! format. Human-readable messages count from 1.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::rng::{DrawStream, UTILITY_STREAM};

pub const SCHEMA: &str = "v1";

fn schema_v1() -> String {
    SCHEMA.to_string()
}

/// An `n x m` additive utility profile with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct Instance {
    n: usize,
    m: usize,
    seed: u64,
    dist: DistributionSpec,
    /// Row-major, `utilities[i * m + j] = u_i(j)`.
    utilities: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    #[serde(default = "schema_v1")]
    schema: String,
    n: usize,
    m: usize,
    seed: u64,
    dist: DistributionSpec,
    utilities: Vec<Vec<f64>>,
}

impl TryFrom<InstanceFile> for Instance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        if f.schema != SCHEMA {
            return Err(Error::InvalidParameter(format!(
                "unsupported schema {:?}",
                f.schema
            )));
        }
        Instance::from_rows(f.seed, f.dist, f.n, f.m, f.utilities)
    }
}

impl From<Instance> for InstanceFile {
    fn from(inst: Instance) -> Self {
        let utilities = (0..inst.n).map(|i| inst.row(i).to_vec()).collect();
        InstanceFile {
            schema: schema_v1(),
            n: inst.n,
            m: inst.m,
            seed: inst.seed,
            dist: inst.dist,
            utilities,
        }
    }
}

impl Instance {
    /// Entry `(i, j)` is draw `i * m + j` of the utility stream of `seed`.
    pub fn generate(n: usize, m: usize, dist: &DistributionSpec, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "an instance needs at least one agent".into(),
            ));
        }
        let sampler = dist.sampler()?;
        let mut rng = DrawStream::new(seed, UTILITY_STREAM);
        let utilities = (0..n * m).map(|_| sampler.sample(&mut rng)).collect();
        Ok(Instance {
            n,
            m,
            seed,
            dist: dist.clone(),
            utilities,
        })
    }

    /// Builds an instance from explicit utility rows.
    pub fn from_rows(
        seed: u64,
        dist: DistributionSpec,
        n: usize,
        m: usize,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "an instance needs at least one agent".into(),
            ));
        }
        if rows.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} rows, got {}",
                rows.len()
            )));
        }
        let mut utilities = Vec::with_capacity(n * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} entries, expected {m}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|u| !(0.0..=1.0).contains(*u)) {
                return Err(Error::InvalidParameter(format!(
                    "utility {bad} of agent {} outside [0, 1]",
                    i + 1
                )));
            }
            utilities.extend(row);
        }
        Ok(Instance {
            n,
            m,
            seed,
            dist,
            utilities,
        })
    }

    /// Convenience for hand-written examples: uniform provenance, seed 0.
    pub fn from_matrix(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        Instance::from_rows(0, DistributionSpec::Uniform, n, m, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dist(&self) -> &DistributionSpec {
        &self.dist
    }

    pub fn row(&self, agent: usize) -> &[f64] {
        &self.utilities[agent * self.m..(agent + 1) * self.m]
    }

    pub fn utility(&self, agent: usize, item: usize) -> f64 {
        self.utilities[agent * self.m + item]
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    /// `u_agent(items)`; fails on out-of-range indices.
    pub fn bundle_utility(&self, agent: usize, items: &[usize]) -> Result<f64> {
        if agent >= self.n {
            return Err(Error::IndexOutOfRange(format!(
                "agent {agent} of {}",
                self.n
            )));
        }
        let row = self.row(agent);
        items.iter().try_fold(0.0, |acc, &j| {
            row.get(j)
                .map(|u| acc + u)
                .ok_or_else(|| Error::IndexOutOfRange(format!("item {j} of {}", self.m)))
        })
    }

    /// `values[i][k] = u_i(M_k)`.
    pub fn bundle_values(&self, alloc: &Allocation) -> Result<Vec<Vec<f64>>> {
        alloc.check_against(self)?;
        let mut values = vec![vec![0.0; self.n]; self.n];
        for (i, vals) in values.iter_mut().enumerate() {
            for (&u, &k) in self.row(i).iter().zip(&alloc.owner) {
                vals[k] += u;
            }
        }
        Ok(values)
    }
}

/// Maps each item to the agent who receives it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub owner: Vec<usize>,
}

impl Allocation {
    pub fn new(owner: Vec<usize>) -> Self {
        Allocation { owner }
    }

    /// Builds the allocation from per-agent bundles; every item in `0..m` must
    /// appear exactly once.
    pub fn from_bundles(bundles: &[Vec<usize>], m: usize) -> Result<Self> {
        let mut owner = vec![usize::MAX; m];
        for (i, bundle) in bundles.iter().enumerate() {
            for &j in bundle {
                let slot = owner
                    .get_mut(j)
                    .ok_or_else(|| Error::IndexOutOfRange(format!("item {j} of {m}")))?;
                if *slot != usize::MAX {
                    return Err(Error::InvalidParameter(format!("item {j} assigned twice")));
                }
                *slot = i;
            }
        }
        if let Some(j) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::InvalidParameter(format!("item {j} unassigned")));
        }
        Ok(Allocation { owner })
    }

    pub fn bundles(&self, n: usize) -> Vec<Vec<usize>> {
        let mut b = vec![Vec::new(); n];
        for (j, &i) in self.owner.iter().enumerate() {
            b[i].push(j);
        }
        b
    }

    pub fn bundle_sizes(&self, n: usize) -> Vec<usize> {
        let mut z = vec![0; n];
        for &i in &self.owner {
            if i < n {
                z[i] += 1;
            }
        }
        z
    }

    pub fn check_against(&self, inst: &Instance) -> Result<()> {
        if self.owner.len() != inst.m() {
            return Err(Error::DimensionMismatch(format!(
                "allocation covers {} items, instance has {}",
                self.owner.len(),
                inst.m()
            )));
        }
        if let Some(&bad) = self.owner.iter().find(|&&i| i >= inst.n()) {
            return Err(Error::DimensionMismatch(format!(
                "owner {bad} out of range for {} agents",
                inst.n()
            )));
        }
        Ok(())
    }
}

/// The largest envy in an allocation: `envious` values `envied`'s bundle
/// `deficit > 0` more than its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvyWitness {
    pub envious: usize,
    pub envied: usize,
    pub deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvyReport {
    pub envy_free: bool,
    /// Per agent: `max_k u_i(M_k) - u_i(M_i)`, zero when envy-free for `i`.
    pub max_envy: Vec<f64>,
    pub witness: Option<EnvyWitness>,
}

/// Exact envy audit; comparisons use `>=` without tolerance.
pub fn envy_report(inst: &Instance, alloc: &Allocation) -> Result<EnvyReport> {
    let values = inst.bundle_values(alloc)?;
    let mut witness: Option<EnvyWitness> = None;
    let mut max_envy = Vec::with_capacity(inst.n());
    for (i, vals) in values.iter().enumerate() {
        let own = vals[i];
        let mut worst = 0.0;
        for (k, &v) in vals.iter().enumerate() {
            if v > own {
                let deficit = v - own;
                if deficit > worst {
                    worst = deficit;
                }
                if witness.map_or(true, |w| deficit > w.deficit) {
                    witness = Some(EnvyWitness {
                        envious: i,
                        envied: k,
                        deficit,
                    });
                }
            }
        }
        max_envy.push(worst);
    }
    Ok(EnvyReport {
        envy_free: witness.is_none(),
        max_envy,
        witness,
    })
}

pub fn is_envy_free(inst: &Instance, alloc: &Allocation) -> Result<bool> {
    let values = inst.bundle_values(alloc)?;
    Ok(values
        .iter()
        .enumerate()
        .all(|(i, vals)| vals.iter().all(|&v| vals[i] >= v)))
}

/// Every agent owns exactly `r` items.
pub fn is_balanced(alloc: &Allocation, n: usize, r: usize) -> bool {
    alloc.owner.len() == n * r
        && alloc.owner.iter().all(|&i| i < n)
        && alloc.bundle_sizes(n).iter().all(|&z| z == r)
}

/// Sum of the `r` largest values, or of all values when fewer than `r`.
pub fn sum_top_r(values: &[f64], r: usize) -> f64 {
    if r == 0 {
        return 0.0;
    }
    if values.len() <= r {
        let mut v = values.to_vec();
        v.sort_unstable_by(|a, b| b.total_cmp(a));
        return v.iter().sum();
    }
    let mut v = values.to_vec();
    v.select_nth_unstable_by(r - 1, |a, b| b.total_cmp(a));
    let top = &mut v[..r];
    top.sort_unstable_by(|a, b| b.total_cmp(a));
    top.iter().sum()
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax_lowest<I: IntoIterator<Item = (usize, f64)>>(it: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in it {
        match best {
            Some((_, b)) if v.total_cmp(&b) != Ordering::Greater => {}
            _ => best = Some((j, v)),
        }
    }
    best.map(|b| b.0)
}
