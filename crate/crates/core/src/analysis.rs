//! Success-probability evaluators.
//!
//! The success probability (SP) of a selection is the probability that the
//! single relevant document `d_q` is retrieved, when `d_q` lives in shard `j`
//! with probability `p(j)` and every contacted node independently misses with
//! probability `f`.
//!
//! Under Replication the SP has the closed form
//! `(1 - f) * sum_i f^(i-1) * sum_{j in S_i} p(j)`, equal to
//! `sum_j p(j) * (1 - f^(c_j))`. Both routes are implemented separately so
//! they can check each other. The Monte-Carlo estimator simulates the miss
//! model directly and covers Repartition too.

use rand::Rng;
use rayon::prelude::*;

use crate::partition::DeploymentKind;
use crate::seed;
use crate::selection::{select_psmartred, select_rsmartred, ReplicaLevels, Selection};
use crate::shard_index::SuccessDistribution;
use crate::{Error, Result};

/// Default Monte-Carlo trial count.
pub const DEFAULT_TRIALS: u64 = 100_000;

/// Largest enumeration the brute-force oracle accepts.
pub const MAX_ENUMERATION: f64 = 1e7;

const TRIALS_PER_BLOCK: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpMethod {
    ClosedForm,
    MonteCarlo { trials: u64, std_error: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpResult {
    pub value: f64,
    pub method: SpMethod,
}

impl SpResult {
    pub fn closed_form(value: f64) -> Self {
        Self {
            value,
            method: SpMethod::ClosedForm,
        }
    }

    pub fn monte_carlo(successes: u64, trials: u64) -> Self {
        let value = successes as f64 / trials as f64;
        Self {
            value,
            method: SpMethod::MonteCarlo {
                trials,
                std_error: binomial_std_error(value, trials),
            },
        }
    }

    /// Zero for closed-form results.
    pub fn std_error(&self) -> f64 {
        match self.method {
            SpMethod::ClosedForm => 0.0,
            SpMethod::MonteCarlo { std_error, .. } => std_error,
        }
    }
}

pub fn binomial_std_error(value: f64, trials: u64) -> f64 {
    (value * (1.0 - value) / trials as f64).sqrt()
}

/// Level-by-level closed form: `(1 - f) * sum_i f^(i-1) * sum_{j in S_i} p(j)`.
pub fn sp_by_levels(dist: &SuccessDistribution, levels: &ReplicaLevels, f: f64) -> f64 {
    let mut weight = 1.0;
    let mut acc = 0.0;
    for level in levels.levels() {
        acc += weight * level.iter().map(|&j| dist.get(j)).sum::<f64>();
        weight *= f;
    }
    (1.0 - f) * acc
}

/// Per-shard closed form: `sum_j p(j) * (1 - f^(c_j))`.
pub fn sp_by_counts(dist: &SuccessDistribution, counts: &[usize], f: f64) -> f64 {
    counts
        .iter()
        .enumerate()
        .map(|(j, &c)| dist.get(j) * (1.0 - f.powi(c as i32)))
        .sum()
}

fn check_f(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidParameter(format!("miss probability {f} outside [0, 1]")));
    }
    Ok(())
}

fn check_levels(dist: &SuccessDistribution, levels: &ReplicaLevels) -> Result<()> {
    if dist.n() != levels.n() {
        return Err(Error::InvalidParameter(format!(
            "distribution has {} shards, selection has {}",
            dist.n(),
            levels.n()
        )));
    }
    Ok(())
}

/// Closed-form SP of a Replication selection given as levels.
pub fn sp_closed_form(dist: &SuccessDistribution, levels: &ReplicaLevels, f: f64) -> Result<SpResult> {
    check_f(f)?;
    check_levels(dist, levels)?;
    Ok(SpResult::closed_form(sp_by_levels(dist, levels, f)))
}

/// Closed-form SP of `selection` read in its canonical Replication form.
pub fn sp_of_selection(dist: &SuccessDistribution, selection: &Selection, f: f64) -> Result<SpResult> {
    sp_closed_form(dist, &selection.levels(), f)
}

/// Cumulative distribution for inverse-CDF sampling.
struct Sampler {
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(dist: &SuccessDistribution) -> Self {
        let mut acc = 0.0;
        let cumulative = dist
            .p()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        // First index whose cumulative mass exceeds u; zero-mass shards are skipped.
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.cumulative.len() - 1)
    }
}

/// Monte-Carlo SP.
///
/// Each trial places `d_q` and draws an independent miss for every selected
/// cell. Replication: `d_q`'s shard is drawn once from `dists[0]` and the
/// trial succeeds if any selected replica of that shard responds.
/// Repartition: `d_q`'s shard is drawn independently in each partition from
/// that partition's distribution, and the trial succeeds if any responding
/// selected cell holds it.
///
/// Trials run in fixed blocks whose random streams derive from
/// `(seed, block)`, so the estimate does not depend on thread count.
pub fn sp_monte_carlo(
    dists: &[SuccessDistribution],
    selection: &Selection,
    f: f64,
    kind: DeploymentKind,
    trials: u64,
    seed: u64,
) -> Result<SpResult> {
    check_f(f)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let r = selection.r();
    let n = selection.n();
    let partitions_needed = match kind {
        DeploymentKind::Replication => 1,
        DeploymentKind::Repartition => r,
    };
    if dists.len() < partitions_needed || dists.iter().any(|d| d.n() != n) {
        return Err(Error::InvalidParameter(format!(
            "need {partitions_needed} distributions over {n} shards"
        )));
    }
    let samplers: Vec<Sampler> = dists.iter().take(partitions_needed).map(Sampler::new).collect();
    // selected[i][j]: is cell (i, j) chosen.
    let mut selected = vec![vec![false; n]; r];
    for c in selection.cells() {
        selected[c.partition][c.shard] = true;
    }
    let counts = selection.replica_counts();

    let blocks = trials.div_ceil(TRIALS_PER_BLOCK);
    let successes: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed::derive(seed, b));
            let len = TRIALS_PER_BLOCK.min(trials - b * TRIALS_PER_BLOCK);
            let mut hits = 0u64;
            for _ in 0..len {
                let found = match kind {
                    DeploymentKind::Replication => {
                        let j = samplers[0].draw(&mut rng);
                        (0..counts[j]).any(|_| !rng.random_bool(f))
                    }
                    DeploymentKind::Repartition => {
                        let mut found = false;
                        for (i, sampler) in samplers.iter().enumerate() {
                            let j = sampler.draw(&mut rng);
                            if selected[i][j] && !rng.random_bool(f) {
                                found = true;
                            }
                        }
                        found
                    }
                };
                hits += u64::from(found);
            }
            hits
        })
        .sum();
    Ok(SpResult::monte_carlo(successes, trials))
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Exhaustively searches every replica-count vector `c` with
/// `sum_j c_j = budget`, `0 <= c_j <= r`, and returns a closed-form
/// maximizer. The first maximizer in lexicographic order of `c` (descending
/// counts first) is kept.
pub fn brute_force_best_selection(
    dist: &SuccessDistribution,
    f: f64,
    r: usize,
    budget: usize,
) -> Result<(Selection, SpResult)> {
    brute_force_best_by(dist, f, r, budget, sp_by_levels)
}

/// [`brute_force_best_selection`] with a caller-supplied SP evaluator.
pub fn brute_force_best_by(
    dist: &SuccessDistribution,
    f: f64,
    r: usize,
    budget: usize,
    sp: impl Fn(&SuccessDistribution, &ReplicaLevels, f64) -> f64,
) -> Result<(Selection, SpResult)> {
    check_f(f)?;
    let n = dist.n();
    if r == 0 || budget == 0 || budget > n * r {
        return Err(Error::BudgetExceeded {
            budget,
            capacity: n * r,
        });
    }
    let combinations = ln_binomial(n * r, budget).exp();
    if combinations > MAX_ENUMERATION {
        return Err(Error::InstanceTooLarge { combinations });
    }

    struct Search<'a, F> {
        dist: &'a SuccessDistribution,
        f: f64,
        r: usize,
        sp: F,
        counts: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl<F: Fn(&SuccessDistribution, &ReplicaLevels, f64) -> f64> Search<'_, F> {
        fn visit(&mut self, j: usize, remaining: usize) {
            let n = self.counts.len();
            if j == n {
                if remaining == 0 {
                    let levels = ReplicaLevels::from_counts(&self.counts, self.r);
                    let v = (self.sp)(self.dist, &levels, self.f);
                    if self.best.as_ref().is_none_or(|(b, _)| v > *b) {
                        self.best = Some((v, self.counts.clone()));
                    }
                }
                return;
            }
            // Remaining shards can absorb at most r each.
            if remaining > (n - j) * self.r {
                return;
            }
            for c in (0..=self.r.min(remaining)).rev() {
                self.counts[j] = c;
                self.visit(j + 1, remaining - c);
            }
            self.counts[j] = 0;
        }
    }

    let mut search = Search {
        dist,
        f,
        r,
        sp,
        counts: vec![0; n],
        best: None,
    };
    search.visit(0, budget);
    let (value, counts) = search.best.expect("budget <= n * r admits a selection");
    Ok((Selection::from_counts(&counts, r)?, SpResult::closed_form(value)))
}

/// SP of rSmartRed under Replication (closed form) and of pSmartRed under a
/// Repartition whose partitions all share `dist` (Monte Carlo).
pub fn compare_replication_repartition(
    dist: &SuccessDistribution,
    f: f64,
    r: usize,
    budget: usize,
    trials: u64,
    seed: u64,
) -> Result<(SpResult, SpResult)> {
    let replicated = select_rsmartred(dist, f, r, budget)?;
    let replication = sp_of_selection(dist, &replicated, f)?;
    let dists = vec![dist.clone(); r];
    let repartitioned = select_psmartred(&dists, f, r, budget)?;
    let repartition = sp_monte_carlo(&dists, &repartitioned, f, DeploymentKind::Repartition, trials, seed)?;
    Ok((replication, repartition))
}

/// Exact SP of a Repartition selection when every partition independently
/// places `d_q`: `1 - prod_i (1 - (1 - f) * sum_{j in T_i} p_i(j))`.
pub fn sp_repartition_exact(dists: &[SuccessDistribution], selection: &Selection, f: f64) -> f64 {
    let miss_all: f64 = (0..selection.r())
        .map(|i| {
            let mass: f64 = selection.shards_in(i).iter().map(|&j| dists[i].get(j)).sum();
            1.0 - (1.0 - f) * mass
        })
        .product();
    1.0 - miss_all
}
