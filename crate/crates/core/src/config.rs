//! Experiment configuration.
//!
//! A config is a single JSON object. Every field except `corpus` has a
//! default; unknown fields are rejected. Example:
//!
//! ```json
//! {
//!   "corpus": { "synthetic": { "n_docs": 10000 } },
//!   "k": 4, "r": 3, "t": [4],
//!   "f": [0.0, 0.1, 0.2],
//!   "schemes": ["NoRed", "rFullRed", "rSmartRed"],
//!   "seed": 42
//! }
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic_corpus, load_corpus, sample_queries, CorpusFormat, RawDocument, Stopwords, SyntheticSpec};
use crate::partition::{DeploymentKind, DEFAULT_HASH_DIM, MAX_LSH_BITS};
use crate::selection::Scheme;
use crate::seed;
use crate::shard_index::DEFAULT_GAMMA;
use crate::simulator::{BrokerParams, DistributionSource, GridPoint, DEFAULT_K_PER_SHARD, DEFAULT_M};
use crate::{Error, Result};

/// Where documents come from: a file or the synthetic generator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: CorpusFormat,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

/// Queries are read from `path` when given, otherwise `sample` documents are
/// drawn from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySource {
    pub path: Option<PathBuf>,
    pub format: CorpusFormat,
    pub sample: usize,
}

impl Default for QuerySource {
    fn default() -> Self {
        Self {
            path: None,
            format: CorpusFormat::Jsonl,
            sample: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// The cartesian grid of the top-level `t`, `f`, `schemes` and
    /// `deployments` lists.
    #[default]
    Grid,
    /// The figure-shaped sweeps under `figures`.
    Figures,
}

/// Axes of the figure suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureConfig {
    /// Miss probabilities of the scheme-vs-f curves.
    pub f_sweep: Vec<f64>,
    /// `t` of the scheme-vs-f and Replication-vs-Repartition curves.
    pub t_fixed: usize,
    /// `t` values of the budget curves.
    pub t_sweep: Vec<usize>,
    /// `f` of the budget curves.
    pub f_budget: f64,
    /// Miss probabilities of the Replication-vs-Repartition curves.
    pub f_repartition: Vec<f64>,
    /// Rank positions in the distribution profile.
    pub top_k_profile: usize,
}

impl Default for FigureConfig {
    fn default() -> Self {
        Self {
            f_sweep: (0..=10).map(|i| i as f64 * 0.05).map(round6).collect(),
            t_fixed: 5,
            t_sweep: vec![3, 5, 8, 10],
            f_budget: 0.1,
            f_repartition: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            top_k_profile: 5,
        }
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    #[serde(default)]
    pub queries: QuerySource,
    #[serde(default)]
    pub stopwords: Vec<String>,
    /// LSH bits; `n = 2^k` shards per partition.
    #[serde(default = "defaults::k")]
    pub k: u32,
    #[serde(default = "defaults::r")]
    pub r: usize,
    #[serde(default = "defaults::dim")]
    pub dim: usize,
    #[serde(default = "defaults::t")]
    pub t: Vec<usize>,
    #[serde(default = "defaults::f")]
    pub f: Vec<f64>,
    #[serde(default = "defaults::schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "defaults::deployments")]
    pub deployments: Vec<DeploymentKind>,
    #[serde(default)]
    pub distribution: DistributionSource,
    #[serde(default = "defaults::m")]
    pub m: usize,
    #[serde(default = "defaults::k_per_shard")]
    pub k_per_shard: usize,
    #[serde(default = "defaults::gamma")]
    pub gamma: usize,
    #[serde(default = "defaults::sample_prob")]
    pub sample_prob: f64,
    /// Master seed; every random stream is derived from it.
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    /// Miss-model repetitions per query.
    #[serde(default = "defaults::n_seeds")]
    pub n_seeds: usize,
    /// Worker threads; 0 uses every core. Output does not depend on it.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub suite: Suite,
    /// Also write per-query recall values.
    #[serde(default)]
    pub per_query: bool,
    #[serde(default)]
    pub figures: FigureConfig,
}

mod defaults {
    use super::*;

    pub fn k() -> u32 {
        4
    }
    pub fn r() -> usize {
        3
    }
    pub fn dim() -> usize {
        DEFAULT_HASH_DIM
    }
    pub fn t() -> Vec<usize> {
        vec![5]
    }
    pub fn f() -> Vec<f64> {
        vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    }
    pub fn schemes() -> Vec<Scheme> {
        vec![Scheme::NoRed, Scheme::RFullRed, Scheme::RSmartRed]
    }
    pub fn deployments() -> Vec<DeploymentKind> {
        vec![DeploymentKind::Replication]
    }
    pub fn m() -> usize {
        DEFAULT_M
    }
    pub fn k_per_shard() -> usize {
        DEFAULT_K_PER_SHARD
    }
    pub fn gamma() -> usize {
        DEFAULT_GAMMA
    }
    pub fn sample_prob() -> f64 {
        0.4
    }
    pub fn seed() -> u64 {
        42
    }
    pub fn n_seeds() -> usize {
        20
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("results")
    }
}

impl ExperimentConfig {
    /// A config over `corpus` with every other field at its default.
    pub fn with_corpus(corpus: CorpusSource) -> Self {
        Self {
            corpus,
            queries: QuerySource::default(),
            stopwords: Vec::new(),
            k: defaults::k(),
            r: defaults::r(),
            dim: defaults::dim(),
            t: defaults::t(),
            f: defaults::f(),
            schemes: defaults::schemes(),
            deployments: defaults::deployments(),
            distribution: DistributionSource::default(),
            m: defaults::m(),
            k_per_shard: defaults::k_per_shard(),
            gamma: defaults::gamma(),
            sample_prob: defaults::sample_prob(),
            seed: defaults::seed(),
            n_seeds: defaults::n_seeds(),
            threads: 0,
            output_dir: defaults::output_dir(),
            suite: Suite::default(),
            per_query: false,
            figures: FigureConfig::default(),
        }
    }

    /// Parses and validates a JSON config.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates a JSON config file. Relative corpus and
    /// query paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [cfg.corpus.path.as_mut(), cfg.queries.path.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n(&self) -> usize {
        1 << self.k
    }

    /// Checks every field; the error names the first offending one.
    pub fn validate(&self) -> Result<()> {
        match (&self.corpus.path, &self.corpus.synthetic) {
            (None, None) => return Err(Error::config("corpus", "give either `path` or `synthetic`")),
            (Some(_), Some(_)) => return Err(Error::config("corpus", "`path` and `synthetic` are exclusive")),
            _ => {}
        }
        if let Some(s) = &self.corpus.synthetic {
            if s.n_docs == 0 || s.vocab_size == 0 || s.n_clusters == 0 {
                return Err(Error::config(
                    "corpus.synthetic",
                    "n_docs, vocab_size and n_clusters must be >= 1",
                ));
            }
            if !(s.doc_len_mean.is_finite() && s.doc_len_mean >= 1.0) {
                return Err(Error::config("corpus.synthetic.doc_len_mean", "must be >= 1"));
            }
        }
        if self.k == 0 || self.k > MAX_LSH_BITS {
            return Err(Error::config("k", format!("must be in 1..={MAX_LSH_BITS}")));
        }
        if self.r == 0 {
            return Err(Error::config("r", "must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        let n = self.n();
        check_ts("t", &self.t, n)?;
        check_fs("f", &self.f)?;
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "must not be empty"));
        }
        if self.deployments.is_empty() {
            return Err(Error::config("deployments", "must not be empty"));
        }
        if self.suite == Suite::Grid {
            if self.schemes.iter().any(|s| s.requires_repartition())
                && !self.deployments.contains(&DeploymentKind::Repartition)
            {
                return Err(Error::config(
                    "schemes",
                    "pTop and pSmartRed need `repartition` in `deployments`",
                ));
            }
            if self.schemes.contains(&Scheme::NoRed) {
                if let Some(&t) = self.t.iter().find(|&&t| t * self.r > n) {
                    return Err(Error::config(
                        "t",
                        format!("NoRed needs t*r <= n, but {t}*{} > {n}", self.r),
                    ));
                }
            }
        }
        if self.m == 0 {
            return Err(Error::config("m", "must be >= 1"));
        }
        if self.k_per_shard == 0 {
            return Err(Error::config("k_per_shard", "must be >= 1"));
        }
        if self.gamma == 0 {
            return Err(Error::config("gamma", "must be >= 1"));
        }
        if !(self.sample_prob > 0.0 && self.sample_prob <= 1.0) {
            return Err(Error::config("sample_prob", "must be in (0, 1]"));
        }
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "must be >= 1"));
        }
        if self.suite == Suite::Figures {
            let fig = &self.figures;
            check_fs("figures.f_sweep", &fig.f_sweep)?;
            check_ts("figures.t_fixed", &[fig.t_fixed], n)?;
            check_ts("figures.t_sweep", &fig.t_sweep, n)?;
            check_fs("figures.f_budget", &[fig.f_budget])?;
            check_fs("figures.f_repartition", &fig.f_repartition)?;
            if fig.top_k_profile == 0 {
                return Err(Error::config("figures.top_k_profile", "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn broker_params(&self) -> BrokerParams {
        BrokerParams {
            k: self.k,
            r: self.r,
            dim: self.dim,
            k_per_shard: self.k_per_shard,
            m: self.m,
            gamma: self.gamma,
            sample_prob: self.sample_prob,
            seed: self.seed,
        }
    }

    /// Grid points in output order: deployment, scheme, `t`, `f`. pTop and
    /// pSmartRed run only on Repartition.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut kinds = self.deployments.clone();
        kinds.sort();
        kinds.dedup();
        let mut points = Vec::new();
        for &kind in &kinds {
            for &scheme in &self.schemes {
                if scheme.requires_repartition() && kind != DeploymentKind::Repartition {
                    continue;
                }
                for &t in &self.t {
                    for &f in &self.f {
                        points.push(GridPoint {
                            scheme,
                            kind,
                            source: self.distribution,
                            f,
                            t,
                        });
                    }
                }
            }
        }
        points
    }

    pub fn stopword_set(&self) -> Stopwords {
        self.stopwords.iter().map(|w| w.to_lowercase()).collect()
    }

    /// Loads or generates the corpus and the query set.
    pub fn load_inputs(&self) -> Result<(Vec<RawDocument>, Vec<RawDocument>)> {
        let docs = match (&self.corpus.path, &self.corpus.synthetic) {
            (Some(path), _) => load_corpus(path, self.corpus.format)?,
            (None, Some(spec)) => generate_synthetic_corpus(spec)?,
            (None, None) => return Err(Error::config("corpus", "give either `path` or `synthetic`")),
        };
        let queries = match &self.queries.path {
            Some(path) => load_corpus(path, self.queries.format)?,
            None => sample_queries(&docs, self.queries.sample, seed::derive(self.seed, 0x9E)),
        };
        let mut seen = HashSet::new();
        if let Some(q) = queries.iter().find(|q| !seen.insert(q.id.as_str())) {
            return Err(Error::DuplicateId(q.id.clone()));
        }
        Ok((docs, queries))
    }
}

fn check_ts(field: &str, ts: &[usize], n: usize) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::config(field, "must not be empty"));
    }
    if let Some(&t) = ts.iter().find(|&&t| t == 0 || t > n) {
        return Err(Error::config(field, format!("{t} is outside 1..={n}")));
    }
    Ok(())
}

fn check_fs(field: &str, fs: &[f64]) -> Result<()> {
    if fs.is_empty() {
        return Err(Error::config(field, "must not be empty"));
    }
    if let Some(f) = fs.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::config(field, format!("{f} is outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"corpus": {"synthetic": {}}}"#).unwrap();
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.r, 3);
        assert_eq!(cfg.t, vec![5]);
        assert_eq!(cfg.m, 100);
        assert_eq!(cfg.k_per_shard, 100);
        assert_eq!(cfg.gamma, 500);
        assert_eq!(cfg.sample_prob, 0.4);
        assert_eq!(cfg.queries.sample, 200);
        assert_eq!(cfg.corpus.synthetic, Some(SyntheticSpec::default()));
        assert_eq!(cfg, ExperimentConfig::with_corpus(cfg.corpus.clone()));
        assert_eq!(cfg.figures.f_sweep.len(), 11);
        assert_eq!(cfg.figures.f_sweep[3], 0.15);
    }

    #[test]
    fn errors_name_the_field() {
        assert!(ExperimentConfig::from_json("{}").unwrap_err().to_string().contains("corpus"));
        assert_eq!(field_of(r#"{"corpus": {}}"#), "corpus");
        assert_eq!(field_of(r#"{"corpus": {"synthetic": {}}, "k": 0}"#), "k");
        assert_eq!(field_of(r#"{"corpus": {"synthetic": {}}, "r": 0}"#), "r");
        assert_eq!(field_of(r#"{"corpus": {"synthetic": {}}, "t": [17]}"#), "t");
        assert_eq!(field_of(r#"{"corpus": {"synthetic": {}}, "t": [6]}"#), "t");
        assert_eq!(field_of(r#"{"corpus": {"synthetic": {}}, "f": [1.5]}"#), "f");
        assert_eq!(field_of(r#"{"corpus": {"synthetic": {}}, "sample_prob": 0}"#), "sample_prob");
        assert_eq!(field_of(r#"{"corpus": {"synthetic": {}}, "schemes": ["pTop"]}"#), "schemes");
        assert_eq!(field_of(r#"{"corpus": {"synthetic": {}}, "n_seeds": 0}"#), "n_seeds");
        let unknown = ExperimentConfig::from_json(r#"{"corpus": {"synthetic": {}}, "bogus": 1}"#).unwrap_err();
        assert!(unknown.to_string().contains("bogus"));
    }

    #[test]
    fn nored_budget_only_checked_when_listed() {
        let ok = r#"{"corpus": {"synthetic": {}}, "t": [8], "schemes": ["rFullRed", "rSmartRed"]}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
    }

    #[test]
    fn grid_skips_partition_schemes_on_replication() {
        let cfg = ExperimentConfig::from_json(
            r#"{"corpus": {"synthetic": {}}, "t": [2, 3], "f": [0.0, 0.1],
                "schemes": ["rSmartRed", "pTop"], "deployments": ["repartition", "replication"]}"#,
        )
        .unwrap();
        let grid = cfg.grid();
        assert_eq!(grid.len(), 4 + 4 + 4);
        assert!(grid
            .iter()
            .all(|p| !p.scheme.requires_repartition() || p.kind == DeploymentKind::Repartition));
        assert_eq!(grid[0].kind, DeploymentKind::Replication);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("docs.jsonl"), "{\"id\": \"a\", \"text\": \"x y\"}\n").unwrap();
        let cfg_path = dir.path().join("exp.json");
        std::fs::write(&cfg_path, r#"{"corpus": {"path": "docs.jsonl"}, "queries": {"sample": 1}}"#).unwrap();
        let cfg = ExperimentConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.corpus.path.as_deref(), Some(dir.path().join("docs.jsonl").as_path()));
        let (docs, queries) = cfg.load_inputs().unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(queries[0].id, "q-a");
    }

    #[test]
    fn missing_corpus_file_names_path() {
        let cfg = ExperimentConfig::from_json(r#"{"corpus": {"path": "/nonexistent/c.jsonl"}}"#).unwrap();
        let err = cfg.load_inputs().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/c.jsonl"));
    }
}
