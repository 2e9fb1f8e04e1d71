//! Cosine-LSH partitioning and redundant deployments.
//!
//! A document is embedded by feature hashing (each term's weight is added to
//! bucket `fnv1a(term) % dim`) and its shard is the `k`-bit sign signature
//! against `k` Gaussian hyperplanes, giving `n = 2^k` shards.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, WeightedDocument};
use crate::retrieval::InvertedIndex;
use crate::seed;
use crate::{Error, Result};

pub const DEFAULT_HASH_DIM: usize = 1024;

/// Largest supported signature length.
pub const MAX_LSH_BITS: u32 = 20;

/// Random-hyperplane hash function.
#[derive(Clone, Debug, PartialEq)]
pub struct LshFunction {
    k: u32,
    dim: usize,
    hyperplanes: Vec<Vec<f64>>,
    seed: u64,
}

impl LshFunction {
    /// Samples `k` hyperplanes over `dim` coordinates from a standard normal
    /// stream seeded by `seed`.
    pub fn sample(k: u32, dim: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > MAX_LSH_BITS {
            return Err(Error::InvalidParameter(format!(
                "LSH bit count must be in 1..={MAX_LSH_BITS}, got {k}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("hashing dimension must be >= 1".into()));
        }
        let mut rng = seed::rng(seed);
        let hyperplanes = (0..k)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Ok(Self {
            k,
            dim,
            hyperplanes,
            seed,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hyperplanes(&self) -> &[Vec<f64>] {
        &self.hyperplanes
    }

    pub fn n_buckets(&self) -> usize {
        1 << self.k
    }

    /// Dense feature-hashed embedding of `doc`.
    pub fn embed(&self, doc: &WeightedDocument) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (term, w) in doc.weights() {
            v[term_bucket(term, self.dim)] += w;
        }
        v
    }

    /// Shard of `doc`: bit `i` is set iff the projection on hyperplane `i`
    /// is nonnegative.
    pub fn assign(&self, doc: &WeightedDocument) -> usize {
        let buckets: Vec<(usize, f64)> = doc
            .weights()
            .iter()
            .map(|(t, w)| (term_bucket(t, self.dim), *w))
            .collect();
        self.hyperplanes
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, h)| {
                let dot: f64 = buckets.iter().map(|&(b, w)| h[b] * w).sum();
                if dot >= 0.0 {
                    acc | (1 << i)
                } else {
                    acc
                }
            })
    }
}

pub fn term_bucket(term: &str, dim: usize) -> usize {
    (seed::fnv1a(term.as_bytes()) % dim as u64) as usize
}

/// `n` pairwise disjoint shards covering the corpus, each locally indexed.
#[derive(Debug)]
pub struct Partition {
    docs: Arc<[WeightedDocument]>,
    lsh_seed: u64,
    /// Shard of `docs[i]`.
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    shards: Vec<Arc<InvertedIndex>>,
}

impl Partition {
    pub fn n(&self) -> usize {
        self.shards.len()
    }

    pub fn lsh_seed(&self) -> u64 {
        self.lsh_seed
    }

    pub fn docs(&self) -> &Arc<[WeightedDocument]> {
        &self.docs
    }

    /// Shard of each document, aligned with [`Partition::docs`].
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn assignment_map(&self) -> BTreeMap<DocId, usize> {
        self.docs
            .iter()
            .zip(&self.assignment)
            .map(|(d, &s)| (d.id().clone(), s))
            .collect()
    }

    /// Document positions (into [`Partition::docs`]) held by shard `j`.
    pub fn members(&self, j: usize) -> &[usize] {
        &self.members[j]
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn shard(&self, j: usize) -> &Arc<InvertedIndex> {
        &self.shards[j]
    }

    pub fn same_assignment(&self, other: &Partition) -> bool {
        self.assignment == other.assignment
            && self.docs.len() == other.docs.len()
            && self.docs.iter().zip(other.docs.iter()).all(|(a, b)| a.id() == b.id())
    }
}

/// Hashes every document with `lsh` and indexes each shard.
pub fn build_partition(docs: &Arc<[WeightedDocument]>, lsh: &LshFunction) -> Result<Partition> {
    if docs.is_empty() {
        return Err(Error::InvalidParameter("cannot partition an empty corpus".into()));
    }
    let n = lsh.n_buckets();
    let assignment: Vec<usize> = docs.par_iter().map(|d| lsh.assign(d)).collect();
    let mut members = vec![Vec::new(); n];
    for (i, &s) in assignment.iter().enumerate() {
        members[s].push(i);
    }
    let shards = members
        .par_iter()
        .map(|m: &Vec<usize>| InvertedIndex::build(m.iter().map(|&i| &docs[i])).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition {
        docs: Arc::clone(docs),
        lsh_seed: lsh.seed(),
        assignment,
        members,
        shards,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeploymentKind {
    Replication,
    Repartition,
}

impl fmt::Display for DeploymentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeploymentKind::Replication => "replication",
            DeploymentKind::Repartition => "repartition",
        })
    }
}

/// `r` partitions of the corpus, each with `n` shards.
#[derive(Clone, Debug)]
pub struct Deployment {
    kind: DeploymentKind,
    partitions: Vec<Arc<Partition>>,
}

impl Deployment {
    pub fn kind(&self) -> DeploymentKind {
        self.kind
    }

    pub fn r(&self) -> usize {
        self.partitions.len()
    }

    pub fn n(&self) -> usize {
        self.partitions[0].n()
    }

    pub fn partitions(&self) -> &[Arc<Partition>] {
        &self.partitions
    }

    pub fn partition(&self, i: usize) -> &Arc<Partition> {
        &self.partitions[i]
    }

    pub fn shard(&self, partition: usize, shard: usize) -> &Arc<InvertedIndex> {
        self.partitions[partition].shard(shard)
    }

    pub fn docs(&self) -> &Arc<[WeightedDocument]> {
        self.partitions[0].docs()
    }

    /// Writes `doc_id,partition_index,shard_index` rows (0-based indexes).
    pub fn write_assignment_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "doc_id,partition_index,shard_index")?;
        for (i, p) in self.partitions.iter().enumerate() {
            for (doc, shard) in p.docs().iter().zip(p.assignment()) {
                writeln!(w, "{},{},{}", doc.id(), i, shard)?;
            }
        }
        Ok(())
    }
}

/// `r` identical copies of `partition`. The copies share shard indexes.
pub fn build_replication(partition: Arc<Partition>, r: usize) -> Result<Deployment> {
    if r == 0 {
        return Err(Error::InvalidParameter("redundancy r must be >= 1".into()));
    }
    Ok(Deployment {
        kind: DeploymentKind::Replication,
        partitions: vec![partition; r],
    })
}

/// Seed of the LSH function of partition `index` in a deployment seeded with
/// `seed`. Replication built from `partition_seed(seed, 0)` shares its
/// partition with the first partition of the matching Repartition.
pub fn partition_seed(seed: u64, index: usize) -> u64 {
    seed::derive_many(seed, &[0x15A, index as u64])
}

/// `r` independent LSH partitions.
pub fn build_repartition(
    docs: &Arc<[WeightedDocument]>,
    r: usize,
    k: u32,
    dim: usize,
    seed: u64,
) -> Result<Deployment> {
    if r == 0 {
        return Err(Error::InvalidParameter("redundancy r must be >= 1".into()));
    }
    let partitions = (0..r)
        .map(|i| {
            let lsh = LshFunction::sample(k, dim, partition_seed(seed, i))?;
            build_partition(docs, &lsh).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Deployment {
        kind: DeploymentKind::Repartition,
        partitions,
    })
}

/// Replication over the partition hashed with `partition_seed(seed, 0)`.
pub fn build_replicated(
    docs: &Arc<[WeightedDocument]>,
    r: usize,
    k: u32,
    dim: usize,
    seed: u64,
) -> Result<Deployment> {
    let lsh = LshFunction::sample(k, dim, partition_seed(seed, 0))?;
    build_replication(Arc::new(build_partition(docs, &lsh)?), r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, Collection, Stopwords, SyntheticSpec};
    use rand::Rng;

    fn wdoc(id: &str, weights: &[(&str, f64)]) -> WeightedDocument {
        WeightedDocument::new(id, weights.iter().map(|(t, w)| (t.to_string(), *w)).collect()).unwrap()
    }

    fn synthetic(n_docs: usize, n_clusters: usize, seed: u64) -> Collection {
        let raw = generate_synthetic_corpus(&SyntheticSpec {
            n_docs,
            vocab_size: 2000,
            n_clusters,
            doc_len_mean: 30.0,
            seed,
        })
        .unwrap();
        Collection::build(&raw, &Stopwords::new()).unwrap()
    }

    #[test]
    fn sample_is_deterministic() {
        let a = LshFunction::sample(5, 64, 3).unwrap();
        let b = LshFunction::sample(5, 64, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hyperplanes().len(), 5);
        assert_eq!(a.n_buckets(), 32);
        assert_ne!(a, LshFunction::sample(5, 64, 4).unwrap());
        assert!(LshFunction::sample(0, 64, 1).is_err());
        assert!(LshFunction::sample(3, 0, 1).is_err());
    }

    #[test]
    fn sign_rule_for_one_bit() {
        let lsh = LshFunction::sample(1, 16, 5).unwrap();
        let h = &lsh.hyperplanes()[0];
        // Find one term landing on a positive coordinate and one on a negative one.
        let mut pos = None;
        let mut neg = None;
        for i in 0..200 {
            let t = format!("t{i}");
            let b = term_bucket(&t, 16);
            if h[b] > 0.0 && pos.is_none() {
                pos = Some(t);
            } else if h[b] < 0.0 && neg.is_none() {
                neg = Some(t);
            }
        }
        let pos = wdoc("p", &[(pos.unwrap().as_str(), 1.0)]);
        let neg = wdoc("n", &[(neg.unwrap().as_str(), 1.0)]);
        assert_eq!(lsh.assign(&pos), 1);
        assert_eq!(lsh.assign(&neg), 0);
        let copy = wdoc("p2", &[(pos.weights()[0].0.as_str(), 1.0)]);
        assert_eq!(lsh.assign(&pos), lsh.assign(&copy));
    }

    #[test]
    fn embed_accumulates_weights() {
        let lsh = LshFunction::sample(1, 8, 1).unwrap();
        let d = wdoc("d", &[("a", 1.5), ("b", 2.0)]);
        let e = lsh.embed(&d);
        assert!((e.iter().sum::<f64>() - 3.5).abs() < 1e-12);
        let dot: f64 = e.iter().zip(&lsh.hyperplanes()[0]).map(|(x, h)| x * h).sum();
        assert_eq!(lsh.assign(&d), usize::from(dot >= 0.0));
    }

    #[test]
    fn collision_rate_increases_with_similarity() {
        let mut rng = crate::seed::rng(77);
        let n_deciles = 10;
        let mut hits = vec![0u64; n_deciles];
        let mut total = vec![0u64; n_deciles];
        let lshs: Vec<_> = (0..300)
            .map(|s| LshFunction::sample(2, DEFAULT_HASH_DIM, 1000 + s).unwrap())
            .collect();
        for pair in 0..600 {
            let shared = rng.random_range(0..=20usize);
            let a: Vec<(String, f64)> =
                (0..20).map(|i| (format!("p{pair}a{i}"), rng.random_range(0.5..2.0))).collect();
            let mut b: Vec<(String, f64)> = a[..shared].to_vec();
            b.extend((shared..20).map(|i| (format!("p{pair}b{i}"), rng.random_range(0.5..2.0))));
            let da = WeightedDocument::new("a", a).unwrap();
            let db = WeightedDocument::new("b", b).unwrap();
            let dot: f64 = da
                .weights()
                .iter()
                .filter_map(|(t, w)| db.weight(t).map(|v| v * w))
                .sum();
            let cos = dot / (da.norm() * db.norm());
            let decile = ((cos * n_deciles as f64) as usize).min(n_deciles - 1);
            for lsh in &lshs {
                total[decile] += 1;
                hits[decile] += u64::from(lsh.assign(&da) == lsh.assign(&db));
            }
        }
        let rates: Vec<f64> = hits
            .iter()
            .zip(&total)
            .filter(|(_, &t)| t > 3000)
            .map(|(&h, &t)| h as f64 / t as f64)
            .collect();
        assert!(rates.len() >= 5, "too few populated deciles: {rates:?}");
        for w in rates.windows(2) {
            assert!(w[1] > w[0], "collision rates not increasing: {rates:?}");
        }
    }

    #[test]
    fn partition_property() {
        let coll = synthetic(500, 8, 1);
        let lsh = LshFunction::sample(4, DEFAULT_HASH_DIM, 9).unwrap();
        let p = build_partition(coll.docs(), &lsh).unwrap();
        assert_eq!(p.n(), 16);
        assert_eq!(p.shard_sizes().iter().sum::<usize>(), coll.len());
        let mut seen = vec![false; coll.len()];
        for j in 0..p.n() {
            assert_eq!(p.shard(j).len(), p.members(j).len());
            for &i in p.members(j) {
                assert!(!seen[i]);
                seen[i] = true;
                assert!(p.shard(j).contains(coll.docs()[i].id()));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn single_doc_partition() {
        let docs: Arc<[WeightedDocument]> = vec![wdoc("only", &[("x", 1.0)])].into();
        let lsh = LshFunction::sample(3, 32, 2).unwrap();
        let p = build_partition(&docs, &lsh).unwrap();
        assert_eq!(p.shard_sizes().iter().filter(|&&s| s > 0).count(), 1);
        let empty: Arc<[WeightedDocument]> = Vec::new().into();
        assert!(build_partition(&empty, &lsh).is_err());
    }

    #[test]
    fn clusters_land_in_distinct_shards() {
        // Two disjoint-vocabulary topics.
        let mut rng = crate::seed::rng(5);
        let mut docs = Vec::new();
        for c in 0..2 {
            for i in 0..100 {
                let weights: Vec<(String, f64)> = (0..10)
                    .map(|t| (format!("c{c}t{t}"), 1.0 + rng.random_range(0.0..0.1)))
                    .collect();
                docs.push(WeightedDocument::new(format!("c{c}d{i:03}"), weights).unwrap());
            }
        }
        let docs: Arc<[WeightedDocument]> = docs.into();
        let mut separated = 0;
        let mut cohesive = 0;
        for s in 0..20 {
            let lsh = LshFunction::sample(5, DEFAULT_HASH_DIM, s).unwrap();
            let p = build_partition(&docs, &lsh).unwrap();
            let majority = |range: std::ops::Range<usize>| {
                let mut counts = vec![0; p.n()];
                for i in range {
                    counts[p.assignment()[i]] += 1;
                }
                let (shard, &count) = counts.iter().enumerate().max_by_key(|(_, &c)| c).unwrap();
                (shard, count)
            };
            let (s0, c0) = majority(0..100);
            let (s1, c1) = majority(100..200);
            cohesive += usize::from(c0 >= 80) + usize::from(c1 >= 80);
            separated += usize::from(s0 != s1);
        }
        assert!(cohesive >= 36, "only {cohesive} of 40 clusters kept a dominant shard");
        assert!(separated >= 18, "clusters shared a shard in {} of 20 draws", 20 - separated);
    }

    #[test]
    fn replication_copies() {
        let coll = synthetic(200, 4, 2);
        let lsh = LshFunction::sample(3, 64, 1).unwrap();
        let p = Arc::new(build_partition(coll.docs(), &lsh).unwrap());
        let d = build_replication(Arc::clone(&p), 3).unwrap();
        assert_eq!(d.r(), 3);
        assert_eq!(d.kind(), DeploymentKind::Replication);
        for part in d.partitions() {
            assert!(part.same_assignment(&d.partitions()[0]));
        }
        assert!(build_replication(p, 0).is_err());
    }

    #[test]
    fn repartition_determinism_and_independence() {
        let coll = synthetic(400, 6, 3);
        let a = build_repartition(coll.docs(), 2, 4, 128, 17).unwrap();
        let b = build_repartition(coll.docs(), 2, 4, 128, 17).unwrap();
        for (x, y) in a.partitions().iter().zip(b.partitions()) {
            assert!(x.same_assignment(y));
        }
        assert_ne!(a.partition(0).lsh_seed(), a.partition(1).lsh_seed());
        let disagreements = a
            .partition(0)
            .assignment()
            .iter()
            .zip(a.partition(1).assignment())
            .filter(|(x, y)| x != y)
            .count();
        assert!(disagreements > 0);

        let single = build_repartition(coll.docs(), 1, 4, 128, 17).unwrap();
        let repl = build_replicated(coll.docs(), 1, 4, 128, 17).unwrap();
        assert!(single.partition(0).same_assignment(repl.partition(0)));
    }

    #[test]
    fn assignment_csv() {
        let docs: Arc<[WeightedDocument]> =
            vec![wdoc("a", &[("x", 1.0)]), wdoc("b", &[("y", 1.0)])].into();
        let d = build_replicated(&docs, 2, 1, 8, 1).unwrap();
        let mut out = Vec::new();
        d.write_assignment_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "doc_id,partition_index,shard_index");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("a,0,"));
        assert!(lines[3].starts_with("a,1,"));
    }
}
