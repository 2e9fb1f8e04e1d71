//! Shard-selection schemes.
//!
//! A selection is a set of cells `(partition, shard)` out of the `r x n`
//! grid. Indexes are 0-based throughout; "replica `i`" of the math is
//! partition `i - 1` here.
//!
//! Every ranking over cells uses the same total order: score descending,
//! then partition ascending, then shard ascending.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::seed;
use crate::shard_index::SuccessDistribution;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub partition: usize,
    pub shard: usize,
}

impl Cell {
    pub fn new(partition: usize, shard: usize) -> Self {
        Self { partition, shard }
    }
}

/// Chosen cells of an `r x n` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    n: usize,
    r: usize,
    cells: BTreeSet<Cell>,
}

impl Selection {
    pub fn new(n: usize, r: usize, cells: impl IntoIterator<Item = Cell>) -> Result<Self> {
        let cells: BTreeSet<Cell> = cells.into_iter().collect();
        if let Some(c) = cells.iter().find(|c| c.partition >= r || c.shard >= n) {
            return Err(Error::InvalidParameter(format!(
                "cell ({}, {}) outside the {r} x {n} grid",
                c.partition, c.shard
            )));
        }
        Ok(Self { n, r, cells })
    }

    /// Canonical Replication selection: replicas `0..counts[j]` of shard `j`.
    pub fn from_counts(counts: &[usize], r: usize) -> Result<Self> {
        if let Some(&c) = counts.iter().find(|&&c| c > r) {
            return Err(Error::InvalidParameter(format!("replica count {c} exceeds r = {r}")));
        }
        let cells = counts
            .iter()
            .enumerate()
            .flat_map(|(j, &c)| (0..c).map(move |i| Cell::new(i, j)));
        Self::new(counts.len(), r, cells)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn cells(&self) -> &BTreeSet<Cell> {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.contains(&cell)
    }

    /// `c_j`: number of chosen replicas of shard `j`.
    pub fn replica_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n];
        for c in &self.cells {
            counts[c.shard] += 1;
        }
        counts
    }

    /// Canonical Replication levels `S_i = {j : c_j >= i}`.
    pub fn levels(&self) -> ReplicaLevels {
        ReplicaLevels::from_counts(&self.replica_counts(), self.r)
    }

    /// Number of chosen cells in each partition.
    pub fn per_partition_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.r];
        for c in &self.cells {
            sizes[c.partition] += 1;
        }
        sizes
    }

    /// Chosen shards of partition `i`, ascending.
    pub fn shards_in(&self, partition: usize) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| c.partition == partition)
            .map(|c| c.shard)
            .collect()
    }

    pub fn distinct_shards(&self) -> BTreeSet<usize> {
        self.cells.iter().map(|c| c.shard).collect()
    }
}

/// Replication levels `S_1 ⊇ S_2 ⊇ ... ⊇ S_r`, where `S_i` holds the shards
/// selected at least `i` times.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplicaLevels {
    n: usize,
    levels: Vec<BTreeSet<usize>>,
}

impl ReplicaLevels {
    /// Validates explicit level sets (level 0 first).
    pub fn try_new(n: usize, levels: Vec<BTreeSet<usize>>) -> Result<Self> {
        if let Some(j) = levels.iter().flatten().find(|&&j| j >= n) {
            return Err(Error::InvalidParameter(format!("shard {j} outside 0..{n}")));
        }
        for i in 1..levels.len() {
            if !levels[i].is_subset(&levels[i - 1]) {
                return Err(Error::Containment {
                    level: i + 1,
                    previous: i,
                });
            }
        }
        Ok(Self { n, levels })
    }

    pub fn from_counts(counts: &[usize], r: usize) -> Self {
        let levels = (0..r)
            .map(|i| {
                counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > i)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Self {
            n: counts.len(),
            levels,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[BTreeSet<usize>] {
        &self.levels
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(BTreeSet::len).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n];
        for level in &self.levels {
            for &j in level {
                counts[j] += 1;
            }
        }
        counts
    }

    pub fn budget(&self) -> usize {
        self.levels.iter().map(BTreeSet::len).sum()
    }

    pub fn to_selection(&self) -> Selection {
        Selection::from_counts(&self.counts(), self.r()).expect("counts bounded by r")
    }
}

/// `t` shards per partition times redundancy `r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectionBudget {
    pub t: usize,
    pub r: usize,
}

impl SelectionBudget {
    pub fn total(&self) -> usize {
        self.t * self.r
    }

    pub fn check(&self, n: usize) -> Result<usize> {
        check_budget(self.total(), n * self.r)
    }
}

fn check_budget(budget: usize, capacity: usize) -> Result<usize> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    if budget > capacity {
        return Err(Error::BudgetExceeded { budget, capacity });
    }
    Ok(budget)
}

fn check_f(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidParameter(format!("miss probability {f} outside [0, 1]")));
    }
    Ok(())
}

/// Uniform sample of `budget` cells without replacement.
pub fn select_random(n: usize, r: usize, budget: usize, seed: u64) -> Result<Selection> {
    check_budget(budget, n * r)?;
    let mut rng = seed::rng(seed);
    let cells = rand::seq::index::sample(&mut rng, n * r, budget)
        .into_iter()
        .map(|x| Cell::new(x / n, x % n));
    Selection::new(n, r, cells)
}

fn top_shards(dist: &SuccessDistribution, count: usize) -> impl Iterator<Item = usize> {
    dist.ranked().into_iter().take(count)
}

/// The `budget` most probable shards of partition 0, once each.
pub fn select_nored(dist: &SuccessDistribution, r: usize, budget: usize) -> Result<Selection> {
    check_budget(budget, dist.n())?;
    Selection::new(dist.n(), r.max(1), top_shards(dist, budget).map(|j| Cell::new(0, j)))
}

/// The `t` most probable shards, every replica of each.
pub fn select_rfullred(dist: &SuccessDistribution, t: usize, r: usize) -> Result<Selection> {
    check_budget(t, dist.n())?;
    if r == 0 {
        return Err(Error::InvalidParameter("r must be >= 1".into()));
    }
    let cells = top_shards(dist, t).flat_map(|j| (0..r).map(move |i| Cell::new(i, j)));
    Selection::new(dist.n(), r, cells)
}

/// Score of replica `i` (0-based) of shard `j`: `f^i * p(j)`.
pub fn smartred_score(dist: &SuccessDistribution, f: f64, replica: usize, shard: usize) -> f64 {
    f.powi(replica as i32) * dist.get(shard)
}

/// All `r x n` cells ranked by miss-aware score.
pub fn smartred_ranking(dist: &SuccessDistribution, f: f64, r: usize) -> Vec<(f64, Cell)> {
    let n = dist.n();
    let mut cells: Vec<(f64, Cell)> = (0..r)
        .flat_map(|i| (0..n).map(move |j| Cell::new(i, j)))
        .map(|c| (smartred_score(dist, f, c.partition, c.shard), c))
        .collect();
    cells.sort_by(cell_order);
    cells
}

fn cell_order(a: &(f64, Cell), b: &(f64, Cell)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `budget` cells with the highest `f^i * p(j)`.
pub fn select_rsmartred(dist: &SuccessDistribution, f: f64, r: usize, budget: usize) -> Result<Selection> {
    check_f(f)?;
    if r == 0 {
        return Err(Error::InvalidParameter("r must be >= 1".into()));
    }
    check_budget(budget, dist.n() * r)?;
    let ranking = smartred_ranking(dist, f, r);
    Selection::new(dist.n(), r, ranking.into_iter().take(budget).map(|(_, c)| c))
}

/// Each partition's own top `t` shards.
pub fn select_ptop(dists: &[SuccessDistribution], t: usize) -> Result<Selection> {
    let n = common_n(dists)?;
    check_budget(t, n)?;
    let cells = dists
        .iter()
        .enumerate()
        .flat_map(|(i, d)| top_shards(d, t).map(move |j| Cell::new(i, j)));
    Selection::new(n, dists.len(), cells)
}

/// Keeps the per-partition counts `t_i = |S_i|` of rSmartRed run on
/// `dists[0]`, and fills partition `i` with its own top `t_i` shards.
pub fn select_psmartred(dists: &[SuccessDistribution], f: f64, r: usize, budget: usize) -> Result<Selection> {
    let n = common_n(dists)?;
    if dists.len() != r {
        return Err(Error::InvalidParameter(format!(
            "pSmartRed needs one distribution per partition ({} for r = {r})",
            dists.len()
        )));
    }
    let sizes = select_rsmartred(&dists[0], f, r, budget)?.levels().sizes();
    let cells = dists
        .iter()
        .zip(sizes)
        .enumerate()
        .flat_map(|(i, (d, t_i))| top_shards(d, t_i).map(move |j| Cell::new(i, j)));
    Selection::new(n, r, cells)
}

fn common_n(dists: &[SuccessDistribution]) -> Result<usize> {
    let first = dists
        .first()
        .ok_or_else(|| Error::InvalidParameter("no partition distributions".into()))?;
    if dists.iter().any(|d| d.n() != first.n()) {
        return Err(Error::InvalidParameter("partitions disagree on shard count".into()));
    }
    Ok(first.n())
}

/// The six selection schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(alias = "random")]
    Random,
    #[serde(rename = "NoRed", alias = "nored")]
    NoRed,
    #[serde(rename = "rFullRed", alias = "rfullred")]
    RFullRed,
    #[serde(rename = "rSmartRed", alias = "rsmartred")]
    RSmartRed,
    #[serde(rename = "pTop", alias = "ptop")]
    PTop,
    #[serde(rename = "pSmartRed", alias = "psmartred")]
    PSmartRed,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Random,
        Scheme::NoRed,
        Scheme::RFullRed,
        Scheme::RSmartRed,
        Scheme::PTop,
        Scheme::PSmartRed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Random => "Random",
            Scheme::NoRed => "NoRed",
            Scheme::RFullRed => "rFullRed",
            Scheme::RSmartRed => "rSmartRed",
            Scheme::PTop => "pTop",
            Scheme::PSmartRed => "pSmartRed",
        }
    }

    /// pTop and pSmartRed need independent per-partition distributions.
    pub fn requires_repartition(self) -> bool {
        matches!(self, Scheme::PTop | Scheme::PSmartRed)
    }

    /// Whether budget `t * r` must fit in one partition.
    pub fn single_partition_budget(self) -> bool {
        matches!(self, Scheme::NoRed)
    }

    /// Runs the scheme. `dists` holds one distribution per partition;
    /// Replication-style schemes read only `dists[0]`. `seed` is used by
    /// [`Scheme::Random`] only.
    pub fn select(
        self,
        dists: &[SuccessDistribution],
        f: f64,
        budget: SelectionBudget,
        seed: u64,
    ) -> Result<Selection> {
        let base = dists
            .first()
            .ok_or_else(|| Error::InvalidParameter("no partition distributions".into()))?;
        let SelectionBudget { t, r } = budget;
        match self {
            Scheme::Random => select_random(base.n(), r, budget.total(), seed),
            Scheme::NoRed => select_nored(base, r, budget.total()),
            Scheme::RFullRed => select_rfullred(base, t, r),
            Scheme::RSmartRed => select_rsmartred(base, f, r, budget.total()),
            Scheme::PTop => {
                if dists.len() != r {
                    return Err(Error::InvalidParameter(format!(
                        "pTop needs {r} partition distributions, got {}",
                        dists.len()
                    )));
                }
                select_ptop(dists, t)
            }
            Scheme::PSmartRed => select_psmartred(dists, f, r, budget.total()),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scheme `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> SuccessDistribution {
        SuccessDistribution::new(p.to_vec()).unwrap()
    }

    fn cells(sel: &Selection) -> Vec<(usize, usize)> {
        sel.cells().iter().map(|c| (c.partition, c.shard)).collect()
    }

    #[test]
    fn random_selection() {
        let all = select_random(4, 3, 12, 1).unwrap();
        assert_eq!(all.len(), 12);
        assert_eq!(select_random(4, 3, 5, 9).unwrap(), select_random(4, 3, 5, 9).unwrap());
        assert!(matches!(select_random(4, 3, 13, 1), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn random_inclusion_rate() {
        let (n, r, budget) = (5, 2, 3);
        let draws = 10_000;
        let mut counts = vec![0u32; n * r];
        for s in 0..draws {
            for c in select_random(n, r, budget, s).unwrap().cells() {
                counts[c.partition * n + c.shard] += 1;
            }
        }
        let rate = budget as f64 / (n * r) as f64;
        let sigma = (rate * (1.0 - rate) / draws as f64).sqrt();
        for &c in &counts {
            assert!((c as f64 / draws as f64 - rate).abs() < 4.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn nored_examples() {
        let d = dist(&[0.5, 0.3, 0.2]);
        assert_eq!(cells(&select_nored(&d, 3, 2).unwrap()), vec![(0, 0), (0, 1)]);
        assert_eq!(select_nored(&d, 3, 3).unwrap().len(), 3);
        assert!(select_nored(&d, 3, 4).is_err());
        assert!(select_nored(&d, 3, 3).unwrap().replica_counts().iter().all(|&c| c <= 1));
        // Ties by shard index.
        let u = dist(&[0.25; 4]);
        assert_eq!(cells(&select_nored(&u, 1, 2).unwrap()), vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn rfullred_examples() {
        let d = dist(&[0.5, 0.3, 0.1, 0.1]);
        let sel = select_rfullred(&d, 2, 3).unwrap();
        assert_eq!(sel.len(), 6);
        assert_eq!(sel.replica_counts(), vec![3, 3, 0, 0]);
        let levels = sel.levels();
        assert!(levels.levels().iter().all(|l| l == &BTreeSet::from([0, 1])));
        assert_eq!(select_rfullred(&d, 2, 1).unwrap(), select_nored(&d, 1, 2).unwrap());
        assert!(select_rfullred(&d, 5, 1).is_err());
    }

    #[test]
    fn rsmartred_worked_example() {
        let d = dist(&[0.8, 0.1, 0.05, 0.03, 0.02]);
        let low = select_rsmartred(&d, 0.05, 2, 2).unwrap();
        assert_eq!(cells(&low), vec![(0, 0), (0, 1)]);
        let high = select_rsmartred(&d, 0.2, 2, 2).unwrap();
        assert_eq!(cells(&high), vec![(0, 0), (1, 0)]);
        let two = dist(&[0.8, 0.2]);
        assert_eq!(cells(&select_rsmartred(&two, 0.5, 2, 2).unwrap()), vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn rsmartred_degenerations() {
        let d = dist(&[0.4, 0.3, 0.2, 0.1]);
        for budget in 1..=4 {
            let s = select_rsmartred(&d, 0.0, 3, budget).unwrap();
            assert_eq!(s, select_nored(&d, 3, budget).unwrap());
        }
        let spike = dist(&[0.0, 1.0, 0.0]);
        let s = select_rsmartred(&spike, 0.3, 3, 2).unwrap();
        assert_eq!(s.replica_counts(), vec![0, 2, 0]);
        let s = select_rsmartred(&spike, 0.3, 3, 5).unwrap();
        assert_eq!(s.replica_counts()[1], 3);
        let u = dist(&[0.25; 4]);
        let s = select_rsmartred(&u, 0.7, 3, 4).unwrap();
        assert_eq!(s.distinct_shards().len(), 4);
    }

    #[test]
    fn ptop_examples() {
        let a = dist(&[0.5, 0.3, 0.2]);
        let b = dist(&[0.1, 0.2, 0.7]);
        let s = select_ptop(&[a.clone(), b], 2).unwrap();
        assert_eq!(cells(&s), vec![(0, 0), (0, 1), (1, 1), (1, 2)]);
        assert_eq!(select_ptop(std::slice::from_ref(&a), 2).unwrap(), select_nored(&a, 1, 2).unwrap());
        let same = select_ptop(&[a.clone(), a.clone(), a.clone()], 2).unwrap();
        assert_eq!(same.len(), 6);
        for i in 0..3 {
            assert_eq!(same.shards_in(i), vec![0, 1]);
        }
    }

    #[test]
    fn psmartred_keeps_level_sizes() {
        // Skewed enough that rSmartRed takes levels of sizes (4, 2, 0).
        let d = dist(&[0.5, 0.3, 0.06, 0.05, 0.03, 0.03, 0.02, 0.01]);
        let base = select_rsmartred(&d, 0.15, 3, 6).unwrap();
        assert_eq!(base.levels().sizes(), vec![4, 2, 0]);
        let other = dist(&[0.01, 0.02, 0.03, 0.03, 0.05, 0.06, 0.3, 0.5]);
        let s = select_psmartred(&[d.clone(), other.clone(), d.clone()], 0.15, 3, 6).unwrap();
        assert_eq!(s.per_partition_sizes(), vec![4, 2, 0]);
        assert_eq!(s.shards_in(0), vec![0, 1, 2, 3]);
        assert_eq!(s.shards_in(1), vec![6, 7]);

        let s = select_psmartred(&[d.clone(), d.clone(), d.clone()], 0.0, 3, 6).unwrap();
        assert_eq!(s, select_nored(&d, 3, 6).unwrap());
    }

    #[test]
    fn levels_validation() {
        let ok = ReplicaLevels::try_new(3, vec![BTreeSet::from([0, 1]), BTreeSet::from([0])]).unwrap();
        assert_eq!(ok.counts(), vec![2, 1, 0]);
        assert_eq!(ok.budget(), 3);
        let bad = ReplicaLevels::try_new(3, vec![BTreeSet::from([0]), BTreeSet::from([1])]);
        assert!(matches!(bad, Err(Error::Containment { level: 2, previous: 1 })));
        assert!(ReplicaLevels::try_new(2, vec![BTreeSet::from([5])]).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
            assert_eq!(s.name().to_lowercase().parse::<Scheme>().unwrap(), s);
        }
        assert!("bogus".parse::<Scheme>().is_err());
    }
}
