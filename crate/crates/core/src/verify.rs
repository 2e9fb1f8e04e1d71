//! Randomized property suites for the selection and success-probability
//! code: optimality of rSmartRed against exhaustive search, closed form
//! against Monte Carlo, the level/count identity, Replication against
//! Repartition, and scheme degenerations.
//!
//! Every suite takes the success-probability function as a parameter so a
//! deliberately broken one can be substituted to check that the suites
//! catch it.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::analysis::{binomial_std_error, brute_force_best_by, sp_by_counts, sp_by_levels, sp_monte_carlo};
use crate::partition::DeploymentKind;
use crate::seed;
use crate::selection::{
    select_nored, select_psmartred, select_ptop, select_rfullred, select_rsmartred, ReplicaLevels, Scheme, Selection,
    SelectionBudget,
};
use crate::shard_index::{uniform_distribution, SuccessDistribution};

/// Success probability of a Replication selection given by its levels.
pub type SpFn = fn(&SuccessDistribution, &ReplicaLevels, f64) -> f64;

/// A broken success probability with the miss-probability exponent running
/// the wrong way across levels. Used to check that the suites fail.
pub fn mutant_sp(dist: &SuccessDistribution, levels: &ReplicaLevels, f: f64) -> f64 {
    let r = levels.r();
    let mut acc = 0.0;
    for (i, level) in levels.levels().iter().enumerate() {
        acc += f.powi((r - 1 - i) as i32) * level.iter().map(|&j| dist.get(j)).sum::<f64>();
    }
    (1.0 - f) * acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyLevel {
    Quick,
    Full,
}

impl std::str::FromStr for VerifyLevel {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quick" => Ok(VerifyLevel::Quick),
            "full" => Ok(VerifyLevel::Full),
            _ => Err(crate::Error::InvalidParameter(format!("unknown verify level `{s}`"))),
        }
    }
}

/// Sizes of the property suites.
#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Random instances for the optimality check.
    pub optimality_instances: usize,
    /// Random instances for closed form against Monte Carlo.
    pub mc_instances: usize,
    pub mc_trials: u64,
    /// Trials per cell of the Replication/Repartition grid.
    pub comparison_trials: u64,
    pub identity_cases: usize,
    pub degeneration_cases: usize,
    pub seed: u64,
    pub sp: SpFn,
}

impl VerifyOptions {
    pub fn for_level(level: VerifyLevel) -> Self {
        match level {
            VerifyLevel::Quick => Self {
                optimality_instances: 100,
                mc_instances: 50,
                mc_trials: 20_000,
                comparison_trials: 20_000,
                identity_cases: 1_000,
                degeneration_cases: 1_000,
                seed: 7,
                sp: sp_by_levels,
            },
            VerifyLevel::Full => Self {
                optimality_instances: 500,
                mc_instances: 100,
                mc_trials: 100_000,
                comparison_trials: 100_000,
                identity_cases: 5_000,
                degeneration_cases: 5_000,
                seed: 7,
                sp: sp_by_levels,
            },
        }
    }
}

/// Outcome of one property over all its cases. `worst_margin` is the
/// smallest slack observed (tolerance minus error, or value minus bound);
/// negative means the property failed.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub worst_margin: f64,
    /// The first failing case.
    pub counterexample: Option<String>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} cases, {} failures, worst margin {:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.worst_margin
        )?;
        if let Some(c) = &self.counterexample {
            write!(f, "\n    counterexample: {c}")?;
        }
        Ok(())
    }
}

struct Case {
    margin: f64,
    detail: Option<String>,
}

fn report(name: &'static str, cases: Vec<Case>) -> PropertyReport {
    let failures = cases.iter().filter(|c| c.margin < 0.0).count();
    PropertyReport {
        name,
        cases: cases.len(),
        failures,
        worst_margin: cases.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min),
        counterexample: cases.into_iter().find(|c| c.margin < 0.0).and_then(|c| c.detail),
    }
}

/// A random distribution over `n` shards: plain, sparse, tied or skewed.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> SuccessDistribution {
    loop {
        let mode = rng.random_range(0..4);
        let w: Vec<f64> = (0..n)
            .map(|_| match mode {
                0 => rng.random::<f64>(),
                1 => {
                    if rng.random_bool(0.4) {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                }
                2 => rng.random_range(0..4) as f64,
                _ => (-6.0 * rng.random::<f64>()).exp().powi(2),
            })
            .collect();
        if w.iter().any(|&x| x > 0.0) {
            return SuccessDistribution::normalized(&w).expect("positive weights");
        }
    }
}

fn f_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

/// rSmartRed attains the exhaustive-search maximum of the success
/// probability for every budget and every `f` on a 0.05 grid, within 1e-12.
pub fn check_optimality(opts: &VerifyOptions) -> PropertyReport {
    let sp = opts.sp;
    let cases: Vec<Case> = (0..opts.optimality_instances)
        .into_par_iter()
        .flat_map_iter(|inst| {
            let mut rng = seed::rng(seed::derive_many(opts.seed, &[1, inst as u64]));
            let n = rng.random_range(1..=6);
            let r = rng.random_range(1..=3);
            let dist = random_distribution(&mut rng, n);
            let mut out = Vec::new();
            for f in f_grid() {
                for budget in 1..=n * r {
                    let smart = select_rsmartred(&dist, f, r, budget).expect("valid budget");
                    let got = sp(&dist, &smart.levels(), f);
                    let (best_sel, best) = brute_force_best_by(&dist, f, r, budget, sp).expect("small instance");
                    let err = (best.value - got).abs();
                    out.push(Case {
                        margin: 1e-12 - err,
                        detail: Some(format!(
                            "p={:?} r={r} budget={budget} f={f}: rSmartRed counts {:?} sp={got}, best counts {:?} sp={}",
                            dist.p(),
                            smart.replica_counts(),
                            best_sel.replica_counts(),
                            best.value
                        )),
                    });
                }
            }
            out
        })
        .collect();
    report("rsmartred_optimal", cases)
}

/// Closed form matches Monte Carlo within four standard errors on random
/// Replication selections. The standard error is taken at the closed-form
/// value.
pub fn check_closed_form_vs_monte_carlo(opts: &VerifyOptions) -> PropertyReport {
    let sp = opts.sp;
    let cases: Vec<Case> = (0..opts.mc_instances)
        .map(|inst| {
            let mut rng = seed::rng(seed::derive_many(opts.seed, &[2, inst as u64]));
            let n = rng.random_range(1..=8);
            let r = rng.random_range(1..=3);
            let dist = random_distribution(&mut rng, n);
            let counts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=r)).collect();
            let f = (rng.random_range(0..20) as f64) / 20.0;
            let selection = Selection::from_counts(&counts, r).expect("counts within r");
            let closed = sp(&dist, &selection.levels(), f);
            let mc = sp_monte_carlo(
                std::slice::from_ref(&dist),
                &selection,
                f,
                DeploymentKind::Replication,
                opts.mc_trials,
                seed::derive_many(opts.seed, &[3, inst as u64]),
            )
            .expect("valid instance");
            let tolerance = 4.0 * binomial_std_error(closed.clamp(0.0, 1.0), opts.mc_trials);
            let err = (mc.value - closed).abs();
            Case {
                margin: tolerance - err,
                detail: Some(format!(
                    "p={:?} counts={counts:?} f={f}: closed form {closed}, Monte Carlo {} ({} trials)",
                    dist.p(),
                    mc.value,
                    opts.mc_trials
                )),
            }
        })
        .collect();
    report("closed_form_vs_monte_carlo", cases)
}

/// Level form and per-shard form of the success probability agree within
/// 1e-12.
pub fn check_identity(opts: &VerifyOptions) -> PropertyReport {
    let sp = opts.sp;
    let cases: Vec<Case> = (0..opts.identity_cases)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_many(opts.seed, &[4, i as u64]));
            let n = rng.random_range(1..=12);
            let r = rng.random_range(1..=5);
            let dist = random_distribution(&mut rng, n);
            let counts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=r)).collect();
            let f = rng.random::<f64>();
            let levels = ReplicaLevels::from_counts(&counts, r);
            let a = sp(&dist, &levels, f);
            let b = sp_by_counts(&dist, &counts, f);
            Case {
                margin: 1e-12 - (a - b).abs(),
                detail: Some(format!("p={:?} counts={counts:?} f={f}: levels {a}, counts {b}", dist.p())),
            }
        })
        .collect();
    report("level_count_identity", cases)
}

/// With equal per-partition distributions, Monte Carlo success probability
/// of pSmartRed under Repartition is at least that of rSmartRed under
/// Replication minus three standard errors, on a grid of skewed and uniform
/// distributions, `f` and budgets.
pub fn check_repartition_dominates(opts: &VerifyOptions) -> PropertyReport {
    let sp = opts.sp;
    let n = 16;
    let r = 3;
    let skewed = SuccessDistribution::normalized(&(0..n).map(|j| 0.5f64.powi(j as i32)).collect::<Vec<_>>())
        .expect("positive weights");
    let uniform = uniform_distribution(n).expect("n >= 1");
    let mut cases = Vec::new();
    for (name, dist) in [("skewed", &skewed), ("uniform", &uniform)] {
        for (fi, &f) in [0.05, 0.1, 0.2].iter().enumerate() {
            for &budget in &[6usize, 9, 15] {
                let replicated = select_rsmartred(dist, f, r, budget).expect("valid budget");
                let replication = sp(dist, &replicated.levels(), f);
                let dists = vec![dist.clone(); r];
                let repartitioned = select_psmartred(&dists, f, r, budget).expect("valid budget");
                let mc = sp_monte_carlo(
                    &dists,
                    &repartitioned,
                    f,
                    DeploymentKind::Repartition,
                    opts.comparison_trials,
                    seed::derive_many(opts.seed, &[5, fi as u64, budget as u64]),
                )
                .expect("valid instance");
                cases.push(Case {
                    margin: mc.value - (replication - 3.0 * mc.std_error()),
                    detail: Some(format!(
                        "{name} f={f} budget={budget}: Repartition {} (se {:.2e}) vs Replication {replication}",
                        mc.value,
                        mc.std_error()
                    )),
                });
            }
        }
    }
    report("repartition_dominates_replication", cases)
}

/// Degenerate cases of the schemes and containment of their levels.
pub fn check_degenerations(opts: &VerifyOptions) -> PropertyReport {
    let mut cases = Vec::new();
    let mut push = |ok: bool, detail: String| {
        cases.push(Case {
            margin: if ok { 0.0 } else { -1.0 },
            detail: Some(detail),
        })
    };
    for i in 0..opts.degeneration_cases {
        let mut rng = seed::rng(seed::derive_many(opts.seed, &[6, i as u64]));
        let n = rng.random_range(1..=10);
        let r = rng.random_range(1..=4);
        let f = rng.random::<f64>();

        // All p > 0 and f = 0: rSmartRed is NoRed.
        let positive = SuccessDistribution::normalized(
            &(0..n).map(|_| 0.01 + rng.random::<f64>()).collect::<Vec<_>>(),
        )
        .expect("positive weights");
        let b = rng.random_range(1..=n);
        let smart = select_rsmartred(&positive, 0.0, r, b).expect("valid budget");
        let nored = select_nored(&positive, r, b).expect("valid budget");
        push(smart == nored, format!("f=0 p={:?} r={r} budget={b}: rSmartRed != NoRed", positive.p()));

        // Point mass: min(r, budget) replicas of the sure shard.
        let star = rng.random_range(0..n);
        let point = SuccessDistribution::new((0..n).map(|j| if j == star { 1.0 } else { 0.0 }).collect())
            .expect("point mass");
        let b = rng.random_range(1..=n * r);
        let f_pos = f.max(1e-3);
        let sel = select_rsmartred(&point, f_pos, r, b).expect("valid budget");
        push(
            sel.replica_counts()[star] == r.min(b),
            format!("point mass at {star} n={n} r={r} budget={b} f={f_pos}: counts {:?}", sel.replica_counts()),
        );

        let dist = random_distribution(&mut rng, n);
        let t = rng.random_range(1..=n);
        // r = 1 collapses rFullRed and pTop to NoRed.
        let full = select_rfullred(&dist, t, 1).expect("valid t");
        let ptop = select_ptop(std::slice::from_ref(&dist), t).expect("valid t");
        let base = select_nored(&dist, 1, t).expect("valid budget");
        push(
            full == base && ptop == base,
            format!("r=1 p={:?} t={t}: rFullRed/pTop differ from NoRed", dist.p()),
        );

        // Containment for every scheme.
        let dists: Vec<SuccessDistribution> = (0..r).map(|_| random_distribution(&mut rng, n)).collect();
        let budget = SelectionBudget { t, r };
        for scheme in Scheme::ALL {
            if scheme.single_partition_budget() && t * r > n {
                continue;
            }
            let sel = scheme
                .select(&dists, f, budget, seed::derive(opts.seed, i as u64))
                .expect("valid budget");
            let ok = match scheme {
                Scheme::NoRed | Scheme::RFullRed | Scheme::RSmartRed => {
                    ReplicaLevels::try_new(n, (0..r).map(|i| sel.shards_in(i).into_iter().collect()).collect())
                        .is_ok()
                }
                Scheme::PTop | Scheme::PSmartRed => sel.per_partition_sizes().windows(2).all(|w| w[0] >= w[1]),
                Scheme::Random => sel.levels().counts() == sel.replica_counts(),
            } && sel.len() == budget.total();
            push(ok, format!("{scheme} n={n} r={r} t={t} f={f}: levels not nested"));
        }
    }
    report("scheme_degenerations", cases)
}

/// Runs every suite in a fixed order.
pub fn run_all(opts: &VerifyOptions) -> Vec<PropertyReport> {
    vec![
        check_optimality(opts),
        check_closed_form_vs_monte_carlo(opts),
        check_identity(opts),
        check_repartition_dominates(opts),
        check_degenerations(opts),
    ]
}
