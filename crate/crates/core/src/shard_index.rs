//! Centralized sample index (CSI) and CRCS-Linear shard scoring.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::corpus::{DocId, QueryVector};
use crate::partition::{Deployment, DeploymentKind, Partition};
use crate::retrieval::InvertedIndex;
use crate::seed;
use crate::{Error, Result};

/// Default CSI result depth.
pub const DEFAULT_GAMMA: usize = 500;

/// Tolerance on `sum(p) == 1`.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Per-shard probability that the query's relevant document lives there.
#[derive(Clone, Debug, PartialEq)]
pub struct SuccessDistribution {
    p: Vec<f64>,
}

impl SuccessDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidDistribution("no shards".into()));
        }
        if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {x} is not a probability")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { p })
    }

    /// Scales nonnegative weights to sum to one. All-zero weights give the
    /// uniform distribution.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || total == 0.0 {
            return uniform_distribution(weights.len());
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, j: usize) -> f64 {
        self.p[j]
    }

    /// Shard indexes by probability descending, ties by index ascending.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.p.len()).collect();
        idx.sort_by(|&a, &b| self.p[b].total_cmp(&self.p[a]).then(a.cmp(&b)));
        idx
    }

    pub fn top_probability(&self) -> f64 {
        self.p.iter().copied().fold(0.0, f64::max)
    }
}

/// `p(j) = 1/n`.
pub fn uniform_distribution(n: usize) -> Result<SuccessDistribution> {
    if n == 0 {
        return Err(Error::InvalidParameter("uniform distribution needs n >= 1".into()));
    }
    Ok(SuccessDistribution {
        p: vec![1.0 / n as f64; n],
    })
}

/// Index over a random sample of one partition, with each sampled
/// document's shard of origin.
#[derive(Debug)]
pub struct Csi {
    partition_index: usize,
    n: usize,
    origin: HashMap<DocId, usize>,
    index: InvertedIndex,
    sample_prob: f64,
}

impl Csi {
    /// Includes each document of `partition` independently with probability
    /// `sample_prob`.
    pub fn sample(partition: &Partition, partition_index: usize, sample_prob: f64, seed: u64) -> Result<Self> {
        check_sample_prob(sample_prob)?;
        let mut rng = seed::rng(seed);
        let docs = partition.docs();
        let mut origin = HashMap::new();
        let mut sampled = Vec::new();
        for (i, doc) in docs.iter().enumerate() {
            if sample_prob >= 1.0 || rng.random_bool(sample_prob) {
                origin.insert(doc.id().clone(), partition.assignment()[i]);
                sampled.push(doc);
            }
        }
        Ok(Self {
            partition_index,
            n: partition.n(),
            origin,
            index: InvertedIndex::build(sampled)?,
            sample_prob,
        })
    }

    pub fn partition_index(&self) -> usize {
        self.partition_index
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn sample_prob(&self) -> f64 {
        self.sample_prob
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn origin(&self, id: &DocId) -> Option<usize> {
        self.origin.get(id).copied()
    }
}

fn check_sample_prob(sample_prob: f64) -> Result<()> {
    if !(sample_prob > 0.0 && sample_prob <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sample probability must be in (0, 1], got {sample_prob}"
        )));
    }
    Ok(())
}

/// Seed of the CSI sample of partition `index`.
pub fn csi_seed(seed: u64, index: usize) -> u64 {
    seed::derive_many(seed, &[0xC51, index as u64])
}

/// One CSI per partition. Under Replication every replica shares the CSI of
/// the first partition; under Repartition each partition is sampled
/// separately.
pub fn sample_csi(deployment: &Deployment, sample_prob: f64, seed: u64) -> Result<Vec<Arc<Csi>>> {
    check_sample_prob(sample_prob)?;
    match deployment.kind() {
        DeploymentKind::Replication => {
            let csi = Arc::new(Csi::sample(deployment.partition(0), 0, sample_prob, csi_seed(seed, 0))?);
            Ok(vec![csi; deployment.r()])
        }
        DeploymentKind::Repartition => deployment
            .partitions()
            .iter()
            .enumerate()
            .map(|(i, p)| Csi::sample(p, i, sample_prob, csi_seed(seed, i)).map(Arc::new))
            .collect(),
    }
}

/// CRCS-Linear: the result at 1-based rank `j` credits `gamma - j` to its
/// shard, and the credits are normalized. `shards_by_rank` lists the origin
/// shard of each result in rank order; entries beyond `gamma` are ignored.
/// All-zero credit falls back to the uniform distribution.
pub fn crcs_linear(
    shards_by_rank: impl IntoIterator<Item = usize>,
    n: usize,
    gamma: usize,
) -> Result<SuccessDistribution> {
    if gamma == 0 {
        return Err(Error::InvalidParameter("gamma must be >= 1".into()));
    }
    let mut credit = vec![0u64; n];
    for (rank0, shard) in shards_by_rank.into_iter().take(gamma).enumerate() {
        credit[shard] += (gamma - (rank0 + 1)) as u64;
    }
    let total: u64 = credit.iter().sum();
    if total == 0 {
        return uniform_distribution(n);
    }
    SuccessDistribution::new(credit.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Searches the CSI for the top `gamma` samples and scores shards with
/// CRCS-Linear.
pub fn estimate_distribution(csi: &Csi, query: &QueryVector, gamma: usize) -> Result<SuccessDistribution> {
    let results = csi.index.search(query, gamma);
    crcs_linear(
        results
            .iter()
            .map(|r| csi.origin(&r.doc_id).expect("sampled doc has an origin")),
        csi.n,
        gamma,
    )
}
