//! Figure-shaped experiment sweeps, distribution profiles and query strata.

use std::fmt::{self, Write as _};

use crate::config::{ExperimentConfig, Suite};
use crate::corpus::Collection;
use crate::partition::DeploymentKind;
use crate::selection::Scheme;
use crate::shard_index::SuccessDistribution;
use crate::simulator::{run_experiment, DistributionSource, Environment, GridPoint, MetricsRow, MetricsTable};
use crate::{Error, Result};

/// A query subset defined by the top-shard probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QueryStratum {
    Whole,
    /// Top-shard probability above 0.5.
    Skewed,
    /// Top-shard probability above 0.8.
    MostSkewed,
    /// Top-shard probability above the given threshold.
    Custom(f64),
}

impl QueryStratum {
    pub const STANDARD: [QueryStratum; 3] = [QueryStratum::Whole, QueryStratum::Skewed, QueryStratum::MostSkewed];

    pub fn threshold(self) -> Option<f64> {
        match self {
            QueryStratum::Whole => None,
            QueryStratum::Skewed => Some(0.5),
            QueryStratum::MostSkewed => Some(0.8),
            QueryStratum::Custom(x) => Some(x),
        }
    }

    pub fn contains(self, top_probability: f64) -> bool {
        self.threshold().is_none_or(|x| top_probability > x)
    }

    pub fn name(self) -> String {
        match self {
            QueryStratum::Whole => "whole".into(),
            QueryStratum::Skewed => "skewed".into(),
            QueryStratum::MostSkewed => "mostskewed".into(),
            QueryStratum::Custom(x) => format!("top_above_{x}"),
        }
    }
}

impl fmt::Display for QueryStratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Indexes of the queries in each stratum, in query order. A query joins
/// every stratum whose threshold its top-shard probability exceeds.
pub fn stratify_queries(
    dists: &[SuccessDistribution],
    strata: &[QueryStratum],
) -> Vec<(QueryStratum, Vec<usize>)> {
    strata
        .iter()
        .map(|&s| {
            let members = dists
                .iter()
                .enumerate()
                .filter(|(_, d)| s.contains(d.top_probability()))
                .map(|(i, _)| i)
                .collect();
            (s, members)
        })
        .collect()
}

/// Mean probability at each of the first `top_k` rank positions. Positions
/// past a distribution's length count as zero; an empty input gives NaN.
pub fn profile_distribution(dists: &[SuccessDistribution], top_k: usize) -> Result<Vec<f64>> {
    if top_k == 0 {
        return Err(Error::InvalidParameter("top_k must be >= 1".into()));
    }
    let mut sums = vec![0.0; top_k];
    for d in dists {
        let mut p = d.p().to_vec();
        p.sort_by(|a, b| b.total_cmp(a));
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    Ok(sums.into_iter().map(|s| s / dists.len() as f64).collect())
}

/// Files produced by one configuration, as `(file name, contents)` in a
/// fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteOutput {
    pub files: Vec<(String, String)>,
}

impl SuiteOutput {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, contents) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Builds corpus, deployments and prepared queries for `config`.
pub fn build_environment(config: &ExperimentConfig, kinds: &[DeploymentKind]) -> Result<Environment> {
    config.validate()?;
    let (docs, queries) = config.load_inputs()?;
    let collection = Collection::build(&docs, &config.stopword_set())?;
    Environment::build(collection, &queries, kinds, config.broker_params())
}

/// Runs the suite selected by `config.suite`.
pub fn run_config(config: &ExperimentConfig) -> Result<SuiteOutput> {
    match config.suite {
        Suite::Grid => run_grid(config),
        Suite::Figures => run_figure_suite(config),
    }
}

/// Runs the cartesian grid of the config: `metrics.csv` and, on request,
/// `per_query.csv`.
pub fn run_grid(config: &ExperimentConfig) -> Result<SuiteOutput> {
    let env = build_environment(config, &config.deployments)?;
    let table = run_experiment(&env, &config.grid(), config.n_seeds, config.seed, "grid")?;
    let mut out = SuiteOutput::default();
    out.files.push(("metrics.csv".into(), table.to_csv(false)));
    if config.per_query {
        out.files.push(("per_query.csv".into(), table.per_query_csv()));
    }
    Ok(out)
}

fn points(
    schemes: &[(Scheme, DeploymentKind)],
    source: DistributionSource,
    ts: &[usize],
    fs: &[f64],
    r: usize,
    n: usize,
) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &(scheme, kind) in schemes {
        for &t in ts {
            if scheme.single_partition_budget() && t * r > n {
                continue;
            }
            for &f in fs {
                out.push(GridPoint { scheme, kind, source, f, t });
            }
        }
    }
    out
}

/// Plot data: the `x` column followed by one recall column per
/// `scheme_deployment` series. Absent combinations are left empty.
pub fn plot_csv(rows: &[MetricsRow], x_name: &str, x_of: impl Fn(&MetricsRow) -> f64) -> String {
    let mut series: Vec<(Scheme, DeploymentKind)> = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for row in rows {
        let key = (row.point.scheme, row.point.kind);
        if !series.contains(&key) {
            series.push(key);
        }
        let x = x_of(row);
        if !xs.contains(&x) {
            xs.push(x);
        }
    }
    let mut out = String::from(x_name);
    for (scheme, kind) in &series {
        let _ = write!(out, ",{scheme}_{kind}");
    }
    out.push('\n');
    for &x in &xs {
        let _ = write!(out, "{x}");
        for &(scheme, kind) in &series {
            out.push(',');
            if let Some(row) = rows
                .iter()
                .find(|r| r.point.scheme == scheme && r.point.kind == kind && x_of(r) == x)
            {
                let _ = write!(out, "{:.6}", row.recall_mean);
            }
        }
        out.push('\n');
    }
    out
}

/// Runs every figure-shaped sweep of `config.figures`:
///
/// * `profile.csv`: mean probability per rank, CRCS and uniform;
/// * `strata.csv`: query counts per stratum;
/// * `f_sweep_crcs`, `f_sweep_uniform`: Replication schemes against `f`;
/// * `budget`: Replication and Repartition schemes against `t`;
/// * `repartition`: Replication against Repartition over low `f`;
/// * `f_sweep_crcs` and `repartition` restricted to the skewed strata.
///
/// Each figure gets a `plot_<figure>.csv`; all rows go to `metrics.csv` with
/// a leading `figure` column. NoRed cells with `t * r > n` are skipped.
pub fn run_figure_suite(config: &ExperimentConfig) -> Result<SuiteOutput> {
    use DeploymentKind::{Repartition, Replication};
    let env = build_environment(config, &[Replication, Repartition])?;
    let fig = &config.figures;
    let (r, n) = (config.r, config.n());
    let mut out = SuiteOutput::default();

    let crcs: Vec<SuccessDistribution> = env
        .queries(Replication)
        .iter()
        .map(|q| q.crcs[0].clone())
        .collect();
    let uniform: Vec<SuccessDistribution> = env
        .queries(Replication)
        .iter()
        .map(|q| q.dists(DistributionSource::Uniform)[0].clone())
        .collect();
    let profile_crcs = profile_distribution(&crcs, fig.top_k_profile)?;
    let profile_uniform = profile_distribution(&uniform, fig.top_k_profile)?;
    let mut profile = String::from("rank,crcs,uniform\n");
    for (i, (c, u)) in profile_crcs.iter().zip(&profile_uniform).enumerate() {
        let _ = writeln!(profile, "{},{c:.6},{u:.6}", i + 1);
    }
    let strata = stratify_queries(&crcs, &QueryStratum::STANDARD);
    let mut strata_csv = String::from("stratum,threshold,n_queries\n");
    for (s, members) in &strata {
        let threshold = s.threshold().map_or(String::new(), |x| x.to_string());
        let _ = writeln!(strata_csv, "{s},{threshold},{}", members.len());
    }
    out.files.push(("profile.csv".into(), profile));
    out.files.push(("strata.csv".into(), strata_csv));

    let replication_schemes = [
        (Scheme::NoRed, Replication),
        (Scheme::RFullRed, Replication),
        (Scheme::RSmartRed, Replication),
    ];
    let comparison_schemes = [
        (Scheme::RFullRed, Replication),
        (Scheme::RSmartRed, Replication),
        (Scheme::PTop, Repartition),
        (Scheme::PSmartRed, Repartition),
    ];
    let mut budget_schemes = replication_schemes.to_vec();
    budget_schemes.extend_from_slice(&comparison_schemes[2..]);

    let crcs_source = DistributionSource::Crcs;
    let figures: Vec<(&str, Vec<GridPoint>, &str)> = vec![
        (
            "f_sweep_crcs",
            points(&replication_schemes, crcs_source, &[fig.t_fixed], &fig.f_sweep, r, n),
            "f",
        ),
        (
            "f_sweep_uniform",
            points(
                &replication_schemes,
                DistributionSource::Uniform,
                &[fig.t_fixed],
                &fig.f_sweep,
                r,
                n,
            ),
            "f",
        ),
        (
            "budget",
            points(&budget_schemes, crcs_source, &fig.t_sweep, &[fig.f_budget], r, n),
            "t",
        ),
        (
            "repartition",
            points(&comparison_schemes, crcs_source, &[fig.t_fixed], &fig.f_repartition, r, n),
            "f",
        ),
    ];

    let mut all = MetricsTable {
        query_ids: env.query_ids(),
        rows: Vec::new(),
    };
    let mut per_query = String::from("figure,query_id,scheme,deployment,f,t,recall\n");
    for (name, grid, x_name) in figures {
        let table = run_experiment(&env, &grid, config.n_seeds, config.seed, name)?;
        let x_of = |row: &MetricsRow| if x_name == "t" { row.point.t as f64 } else { row.point.f };
        out.files.push((format!("plot_{name}.csv"), plot_csv(&table.rows, x_name, x_of)));
        if config.per_query {
            for line in table.per_query_csv().lines().skip(1) {
                let _ = writeln!(per_query, "{name},{line}");
            }
        }
        let stratified = matches!(name, "f_sweep_crcs" | "repartition");
        let whole_rows = table.rows.clone();
        all.rows.extend(table.rows);
        if stratified {
            for (stratum, members) in strata.iter().skip(1) {
                let label = format!("{name}_{stratum}");
                let rows: Vec<MetricsRow> = whole_rows.iter().map(|row| row.subset(&label, members)).collect();
                out.files.push((format!("plot_{label}.csv"), plot_csv(&rows, x_name, x_of)));
                all.rows.extend(rows);
            }
        }
    }
    out.files.insert(0, ("metrics.csv".into(), all.to_csv(true)));
    if config.per_query {
        out.files.push(("per_query.csv".into(), per_query));
    }
    Ok(out)
}
