//! Broker-side query processing and experiment grids.
//!
//! For one query the broker selects cells, every selected cell independently
//! misses with probability `f`, the survivors return their local top-k, and
//! the union is deduplicated, ranked and cut to the top `m`. Recall@m is the
//! overlap with the centralized top `m`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, DocId, QueryVector, RawDocument};
use crate::partition::{build_repartition, build_replicated, Deployment, DeploymentKind};
use crate::retrieval::{centralized_topm, merge_results, InvertedIndex, ScoredResult};
use crate::seed;
use crate::selection::{Cell, Scheme, Selection, SelectionBudget};
use crate::shard_index::{estimate_distribution, sample_csi, uniform_distribution, Csi, SuccessDistribution};
use crate::stats::{mean, sample_std};
use crate::{Error, Result};

pub const DEFAULT_K_PER_SHARD: usize = 100;
pub const DEFAULT_M: usize = 100;

/// Independent per-cell Bernoulli(`f`) misses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MissModel {
    pub f: f64,
    pub seed: u64,
}

impl MissModel {
    pub fn new(f: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("miss probability {f} outside [0, 1]")));
        }
        Ok(Self { f, seed })
    }

    /// Whether `cell` misses for `query_id`. The draw depends only on
    /// `(seed, query_id, cell)`.
    pub fn missed(&self, query_id: &str, cell: Cell) -> bool {
        let s = seed::derive_many(
            self.seed,
            &[seed::fnv1a(query_id.as_bytes()), cell.partition as u64, cell.shard as u64],
        );
        seed::rng(s).random::<f64>() < self.f
    }

    fn selection_seed(&self, query_id: &str) -> u64 {
        seed::derive_many(self.seed, &[seed::fnv1a(query_id.as_bytes()), 0x5E1])
    }
}

/// Where per-query shard distributions come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistributionSource {
    /// CRCS-Linear over the sample index.
    #[default]
    Crcs,
    /// `p(j) = 1/n`, the distribution induced by random selection.
    Uniform,
}

impl std::fmt::Display for DistributionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistributionSource::Crcs => "crcs",
            DistributionSource::Uniform => "uniform",
        })
    }
}

/// What the broker runs for one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuerySpec {
    pub scheme: Scheme,
    pub t: usize,
    pub miss: MissModel,
    pub k_per_shard: usize,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub query_id: String,
    pub selection: Selection,
    /// Selected cells that responded.
    pub responded: Vec<Cell>,
    /// Top-`m` merged doc ids, ranked.
    pub merged: Vec<DocId>,
    pub recall_at_m: f64,
}

/// `|centralized ∩ merged| / |centralized|`; 1 when the centralized list is
/// empty.
pub fn recall_at_m(centralized: &[DocId], merged: &[DocId]) -> f64 {
    if centralized.is_empty() {
        return 1.0;
    }
    let merged: HashSet<&DocId> = merged.iter().collect();
    let hits = centralized.iter().filter(|d| merged.contains(d)).count();
    hits as f64 / centralized.len() as f64
}

fn execute(
    kind: DeploymentKind,
    r: usize,
    dists: &[SuccessDistribution],
    query_id: &str,
    centralized: &[DocId],
    spec: &QuerySpec,
    mut fetch: impl FnMut(Cell) -> Arc<Vec<ScoredResult>>,
) -> Result<QueryOutcome> {
    let budget = SelectionBudget { t: spec.t, r };
    let selection = spec
        .scheme
        .select(dists, spec.miss.f, budget, spec.miss.selection_seed(query_id))?;
    let responded: Vec<Cell> = selection
        .cells()
        .iter()
        .copied()
        .filter(|&c| !spec.miss.missed(query_id, c))
        .collect();
    // Replicas answer identically; fetch each surviving shard once.
    let sources: Vec<Cell> = match kind {
        DeploymentKind::Replication => responded
            .iter()
            .map(|c| c.shard)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(|j| Cell::new(0, j))
            .collect(),
        DeploymentKind::Repartition => responded.clone(),
    };
    let lists: Vec<Arc<Vec<ScoredResult>>> = sources.into_iter().map(&mut fetch).collect();
    let merged: Vec<DocId> = merge_results(
        lists.iter().map(|l| &l[..spec.k_per_shard.min(l.len())]),
        spec.m,
    )
    .into_iter()
    .map(|r| r.doc_id)
    .collect();
    Ok(QueryOutcome {
        query_id: query_id.to_string(),
        recall_at_m: recall_at_m(centralized, &merged),
        selection,
        responded,
        merged,
    })
}

/// Processes one query end to end, searching shards on demand.
/// `dists` holds one distribution per partition and `centralized` is the
/// centralized top-`m` of the query.
pub fn run_query(
    deployment: &Deployment,
    dists: &[SuccessDistribution],
    query: &QueryVector,
    centralized: &[DocId],
    spec: &QuerySpec,
) -> Result<QueryOutcome> {
    check_scheme(spec.scheme, deployment.kind())?;
    execute(
        deployment.kind(),
        deployment.r(),
        dists,
        &query.id,
        centralized,
        spec,
        |c| Arc::new(deployment.shard(c.partition, c.shard).search(query, spec.k_per_shard)),
    )
}

fn check_scheme(scheme: Scheme, kind: DeploymentKind) -> Result<()> {
    if scheme.requires_repartition() && kind != DeploymentKind::Repartition {
        return Err(Error::InvalidParameter(format!(
            "{scheme} needs a Repartition deployment with per-partition distributions"
        )));
    }
    Ok(())
}

/// A query with everything that does not depend on `f`, scheme or seed:
/// centralized top-m, shard distributions and every shard's local top-k.
#[derive(Clone, Debug)]
pub struct PreparedQuery {
    pub query: QueryVector,
    pub centralized: Vec<DocId>,
    /// CRCS estimate per partition.
    pub crcs: Vec<SuccessDistribution>,
    uniform: Vec<SuccessDistribution>,
    /// `[partition][shard]`; replicas share lists.
    shard_results: Vec<Vec<Arc<Vec<ScoredResult>>>>,
}

impl PreparedQuery {
    pub fn prepare(
        deployment: &Deployment,
        csis: &[Arc<Csi>],
        central: &InvertedIndex,
        query: &QueryVector,
        params: &BrokerParams,
    ) -> Result<Self> {
        let n = deployment.n();
        let search_partition = |i: usize| -> Vec<Arc<Vec<ScoredResult>>> {
            (0..n)
                .map(|j| Arc::new(deployment.shard(i, j).search(query, params.k_per_shard)))
                .collect()
        };
        let (shard_results, crcs) = match deployment.kind() {
            DeploymentKind::Replication => {
                let lists = search_partition(0);
                let p = estimate_distribution(&csis[0], query, params.gamma)?;
                (vec![lists; deployment.r()], vec![p; deployment.r()])
            }
            DeploymentKind::Repartition => {
                let lists = (0..deployment.r()).map(search_partition).collect();
                let ps = csis
                    .iter()
                    .map(|c| estimate_distribution(c, query, params.gamma))
                    .collect::<Result<Vec<_>>>()?;
                (lists, ps)
            }
        };
        Ok(Self {
            query: query.clone(),
            centralized: centralized_topm(central, query, params.m),
            crcs,
            uniform: vec![uniform_distribution(n)?; deployment.r()],
            shard_results,
        })
    }

    pub fn dists(&self, source: DistributionSource) -> &[SuccessDistribution] {
        match source {
            DistributionSource::Crcs => &self.crcs,
            DistributionSource::Uniform => &self.uniform,
        }
    }

    pub fn run(&self, kind: DeploymentKind, source: DistributionSource, spec: &QuerySpec) -> Result<QueryOutcome> {
        check_scheme(spec.scheme, kind)?;
        execute(
            kind,
            self.shard_results.len(),
            self.dists(source),
            &self.query.id,
            &self.centralized,
            spec,
            |c| Arc::clone(&self.shard_results[c.partition][c.shard]),
        )
    }
}

/// Broker and estimation settings shared by every query.
#[derive(Clone, Debug, PartialEq)]
pub struct BrokerParams {
    pub k: u32,
    pub r: usize,
    pub dim: usize,
    pub k_per_shard: usize,
    pub m: usize,
    pub gamma: usize,
    pub sample_prob: f64,
    pub seed: u64,
}

/// Corpus, deployments and prepared queries for a batch of experiments.
pub struct Environment {
    pub collection: Collection,
    pub params: BrokerParams,
    deployments: BTreeMap<DeploymentKind, Deployment>,
    prepared: BTreeMap<DeploymentKind, Vec<PreparedQuery>>,
}

impl Environment {
    /// Builds the requested deployments from `params.seed`. Replication uses
    /// the first partition of the matching Repartition, and both share its
    /// sample index.
    pub fn build(
        collection: Collection,
        queries: &[RawDocument],
        kinds: &[DeploymentKind],
        params: BrokerParams,
    ) -> Result<Self> {
        let central = InvertedIndex::build(collection.docs().iter())?;
        let query_vectors: Vec<QueryVector> = queries.iter().map(|q| collection.weight_query(q)).collect();
        let mut seen = HashSet::new();
        if let Some(q) = query_vectors.iter().find(|q| !seen.insert(q.id.as_str())) {
            return Err(Error::DuplicateId(q.id.clone()));
        }
        let mut deployments = BTreeMap::new();
        let mut prepared = BTreeMap::new();
        for &kind in kinds {
            if deployments.contains_key(&kind) {
                continue;
            }
            let deployment = match kind {
                DeploymentKind::Replication => {
                    build_replicated(collection.docs(), params.r, params.k, params.dim, params.seed)?
                }
                DeploymentKind::Repartition => {
                    build_repartition(collection.docs(), params.r, params.k, params.dim, params.seed)?
                }
            };
            let csis = sample_csi(&deployment, params.sample_prob, params.seed)?;
            let queries = query_vectors
                .par_iter()
                .map(|q| PreparedQuery::prepare(&deployment, &csis, &central, q, &params))
                .collect::<Result<Vec<_>>>()?;
            prepared.insert(kind, queries);
            deployments.insert(kind, deployment);
        }
        Ok(Self {
            collection,
            params,
            deployments,
            prepared,
        })
    }

    pub fn deployment(&self, kind: DeploymentKind) -> Option<&Deployment> {
        self.deployments.get(&kind)
    }

    pub fn queries(&self, kind: DeploymentKind) -> &[PreparedQuery] {
        self.prepared.get(&kind).map_or(&[], Vec::as_slice)
    }

    pub fn n(&self) -> usize {
        1 << self.params.k
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.prepared
            .values()
            .next()
            .map(|qs| qs.iter().map(|q| q.query.id.clone()).collect())
            .unwrap_or_default()
    }
}

/// One cell of an experiment grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub scheme: Scheme,
    pub kind: DeploymentKind,
    pub source: DistributionSource,
    pub f: f64,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub figure: String,
    pub point: GridPoint,
    pub r: usize,
    pub budget: usize,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub seed: u64,
    /// Per-query Recall@m averaged over miss seeds, in query order.
    pub per_query: Vec<f64>,
}

impl MetricsRow {
    pub fn n_queries(&self) -> usize {
        self.per_query.len()
    }

    /// Same row restricted to the queries at `indexes`.
    pub fn subset(&self, figure: &str, indexes: &[usize]) -> MetricsRow {
        let per_query: Vec<f64> = indexes.iter().map(|&i| self.per_query[i]).collect();
        MetricsRow {
            figure: figure.to_string(),
            recall_mean: mean(&per_query),
            recall_std: sample_std(&per_query),
            per_query,
            ..self.clone()
        }
    }
}

pub const METRICS_HEADER: &str = "scheme,deployment,f,t,r,budget,recall_mean,recall_std,n_queries,seed";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub query_ids: Vec<String>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn find(&self, scheme: Scheme, kind: DeploymentKind, f: f64, t: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| {
            r.point.scheme == scheme && r.point.kind == kind && r.point.f == f && r.point.t == t
        })
    }

    /// Metrics CSV. With `with_figure` a leading `figure` column is added.
    pub fn to_csv(&self, with_figure: bool) -> String {
        let mut out = String::new();
        if with_figure {
            out.push_str("figure,");
        }
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for row in &self.rows {
            if with_figure {
                let _ = write!(out, "{},", row.figure);
            }
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{:.6},{},{}",
                row.point.scheme,
                row.point.kind,
                row.point.f,
                row.point.t,
                row.r,
                row.budget,
                row.recall_mean,
                row.recall_std,
                row.n_queries(),
                row.seed
            );
        }
        out
    }

    /// `query_id,scheme,deployment,f,t,recall` rows.
    pub fn per_query_csv(&self) -> String {
        let mut out = String::from("query_id,scheme,deployment,f,t,recall\n");
        for row in &self.rows {
            for (id, v) in self.query_ids.iter().zip(&row.per_query) {
                let _ = writeln!(
                    out,
                    "{id},{},{},{},{},{v:.6}",
                    row.point.scheme, row.point.kind, row.point.f, row.point.t
                );
            }
        }
        out
    }
}

/// Miss seed of repetition `rep` under `master`.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    seed::derive_many(master, &[0xF00D, rep as u64])
}

/// Checks a grid point against the environment before running anything.
pub fn check_point(env: &Environment, p: &GridPoint) -> Result<()> {
    let n = env.n();
    let r = env.params.r;
    check_scheme(p.scheme, p.kind)?;
    if env.deployment(p.kind).is_none() {
        return Err(Error::InvalidParameter(format!("no {} deployment was built", p.kind)));
    }
    if !(0.0..=1.0).contains(&p.f) {
        return Err(Error::InvalidParameter(format!("miss probability {} outside [0, 1]", p.f)));
    }
    if p.t == 0 || p.t > n {
        return Err(Error::InvalidParameter(format!("t = {} outside 1..={n}", p.t)));
    }
    if p.scheme.single_partition_budget() && p.t * r > n {
        return Err(Error::BudgetExceeded {
            budget: p.t * r,
            capacity: n,
        });
    }
    Ok(())
}

/// Runs every grid point over every query, averaging each query's recall
/// over `n_seeds` miss repetitions. Output order follows `grid`; values do
/// not depend on thread count.
pub fn run_experiment(
    env: &Environment,
    grid: &[GridPoint],
    n_seeds: usize,
    master_seed: u64,
    figure: &str,
) -> Result<MetricsTable> {
    if n_seeds == 0 {
        return Err(Error::InvalidParameter("n_seeds must be >= 1".into()));
    }
    for p in grid {
        check_point(env, p)?;
    }
    let r = env.params.r;
    let rows = grid
        .iter()
        .map(|p| {
            let queries = env.queries(p.kind);
            let per_query = queries
                .par_iter()
                .map(|q| {
                    let mut total = 0.0;
                    for rep in 0..n_seeds {
                        let spec = QuerySpec {
                            scheme: p.scheme,
                            t: p.t,
                            miss: MissModel::new(p.f, repetition_seed(master_seed, rep))?,
                            k_per_shard: env.params.k_per_shard,
                            m: env.params.m,
                        };
                        total += q.run(p.kind, p.source, &spec)?.recall_at_m;
                    }
                    Ok(total / n_seeds as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(MetricsRow {
                figure: figure.to_string(),
                point: *p,
                r,
                budget: p.t * r,
                recall_mean: mean(&per_query),
                recall_std: sample_std(&per_query),
                seed: master_seed,
                per_query,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable {
        query_ids: env.query_ids(),
        rows,
    })
}
