//! `tailsearch` command-line entry point.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tailsearch::analysis::sp_closed_form;
use tailsearch::config::ExperimentConfig;
use tailsearch::harness::{build_environment, profile_distribution, run_config, stratify_queries, QueryStratum};
use tailsearch::partition::DeploymentKind;
use tailsearch::selection::ReplicaLevels;
use tailsearch::shard_index::{SuccessDistribution, SUM_TOLERANCE};
use tailsearch::simulator::DistributionSource;
use tailsearch::verify::{mutant_sp, run_all, VerifyLevel, VerifyOptions};

const OUTPUT_DIR_ENV: &str = "TAILSEARCH_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "tailsearch", version, about = "Shard selection under node misses: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment grid or figure suite of a JSON config and write CSVs.
    Experiment {
        config: PathBuf,
        /// Output directory; overrides the config and the environment.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
        /// Worker threads; overrides the config (0 uses every core).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the randomized property suites.
    Verify {
        #[arg(long, value_enum, default_value = "quick")]
        level: Level,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Substitute a broken success-probability function.
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
    /// Print the closed-form success probability of a Replication selection.
    Sp {
        /// Shard probabilities `D1,D2,...`. A total below 1 is padded with
        /// one extra shard holding the remainder.
        #[arg(long, value_delimiter = ',', conflicts_with = "dist_file", allow_hyphen_values = true)]
        p: Option<Vec<f64>>,
        /// File holding the probabilities, separated by commas or whitespace.
        #[arg(long)]
        dist_file: Option<PathBuf>,
        /// Selection such as `D1x2`, `D1,D2` or explicit levels `D1,D2;D1`.
        #[arg(long)]
        select: String,
        #[arg(long)]
        f: f64,
        /// Replicas per shard; defaults to the largest requested count.
        #[arg(long)]
        r: Option<usize>,
    },
    /// Write the doc-to-shard assignment CSV of a config's deployment.
    PartitionDump {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "replication")]
        deployment: Kind,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the mean shard probability per rank and stratum sizes.
    ProfileDist {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long, value_enum, default_value = "crcs")]
        source: Source,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Level {
    Quick,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Replication,
    Repartition,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Source {
    Crcs,
    Uniform,
}

enum Outcome {
    Ok,
    VerificationFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Experiment {
            config,
            output_dir,
            threads,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let output = with_threads(cfg.threads, || run_config(&cfg))??;
            output
                .write_to(&cfg.output_dir)
                .with_context(|| format!("writing results to {}", cfg.output_dir.display()))?;
            for (name, _) in &output.files {
                println!("{}", cfg.output_dir.join(name).display());
            }
            Ok(Outcome::Ok)
        }
        Command::Verify {
            level,
            seed,
            threads,
            inject_bug,
        } => {
            let mut opts = VerifyOptions::for_level(match level {
                Level::Quick => VerifyLevel::Quick,
                Level::Full => VerifyLevel::Full,
            });
            if let Some(s) = seed {
                opts.seed = s;
            }
            if inject_bug {
                opts.sp = mutant_sp;
            }
            let reports = with_threads(threads, || run_all(&opts))?;
            for rep in &reports {
                println!("{rep}");
            }
            if reports.iter().all(|r| r.passed()) {
                println!("all properties hold");
                Ok(Outcome::Ok)
            } else {
                println!("verification failed");
                Ok(Outcome::VerificationFailed)
            }
        }
        Command::Sp {
            p,
            dist_file,
            select,
            f,
            r,
        } => {
            let p = match (p, dist_file) {
                (Some(p), _) => p,
                (None, Some(path)) => read_probabilities(&path)?,
                (None, None) => bail!("give the distribution with --p or --dist-file"),
            };
            let value = sp_command(p, &select, f, r)?;
            println!("{value:.6}");
            Ok(Outcome::Ok)
        }
        Command::PartitionDump {
            config,
            deployment,
            out,
        } => {
            let cfg = load_config(&config)?;
            let kind = match deployment {
                Kind::Replication => DeploymentKind::Replication,
                Kind::Repartition => DeploymentKind::Repartition,
            };
            let env = with_threads(cfg.threads, || build_environment(&cfg, &[kind]))??;
            let dep = env.deployment(kind).expect("deployment was requested");
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    let mut w = std::io::BufWriter::new(file);
                    dep.write_assignment_csv(&mut w)?;
                    w.flush()?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut w = std::io::BufWriter::new(stdout.lock());
                    dep.write_assignment_csv(&mut w)?;
                    w.flush()?;
                }
            }
            Ok(Outcome::Ok)
        }
        Command::ProfileDist { config, top_k, source } => {
            let cfg = load_config(&config)?;
            let env = with_threads(cfg.threads, || build_environment(&cfg, &[DeploymentKind::Replication]))??;
            let source = match source {
                Source::Crcs => DistributionSource::Crcs,
                Source::Uniform => DistributionSource::Uniform,
            };
            let dists: Vec<SuccessDistribution> = env
                .queries(DeploymentKind::Replication)
                .iter()
                .map(|q| q.dists(source)[0].clone())
                .collect();
            let profile = profile_distribution(&dists, top_k)?;
            println!("rank,mean_probability");
            for (i, v) in profile.iter().enumerate() {
                println!("{},{v:.6}", i + 1);
            }
            for (stratum, members) in stratify_queries(&dists, &QueryStratum::STANDARD) {
                eprintln!("{stratum}: {} queries", members.len());
            }
            Ok(Outcome::Ok)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("invalid config {}", path.display()))
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting worker threads")?;
    Ok(pool.install(f))
}

fn read_probabilities(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .with_context(|| format!("{}: `{s}` is not a number", path.display()))
        })
        .collect()
}

fn sp_command(mut p: Vec<f64>, select: &str, f: f64, r: Option<usize>) -> Result<f64> {
    let total: f64 = p.iter().sum();
    if p.is_empty() {
        bail!("the distribution is empty");
    }
    if total < 1.0 - SUM_TOLERANCE {
        p.push(1.0 - total);
    }
    let dist = SuccessDistribution::new(p)?;
    let levels = parse_selection(select, dist.n(), r)?;
    Ok(sp_closed_form(&dist, &levels, f)?.value)
}

fn parse_shard(token: &str, n: usize) -> Result<usize> {
    let idx = token
        .trim()
        .strip_prefix(['D', 'd'])
        .unwrap_or(token.trim())
        .parse::<usize>()
        .with_context(|| format!("`{token}` is not a shard name like D1"))?;
    if idx == 0 || idx > n {
        bail!("shard `{token}` is outside D1..D{n}");
    }
    Ok(idx - 1)
}

/// `D1x2,D3` lists shards with replica counts; `D1,D2;D1` lists the shard
/// set of each replica level.
fn parse_selection(spec: &str, n: usize, r: Option<usize>) -> Result<ReplicaLevels> {
    if spec.contains(';') {
        let levels = spec
            .split(';')
            .map(|level| {
                level
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_shard(s, n))
                    .collect::<Result<BTreeSet<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(r) = r {
            if levels.len() > r {
                bail!("{} levels given but r = {r}", levels.len());
            }
        }
        let mut levels = levels;
        levels.resize(r.unwrap_or(levels.len()), BTreeSet::new());
        return Ok(ReplicaLevels::try_new(n, levels)?);
    }
    let mut counts = vec![0usize; n];
    for item in spec.split(',').filter(|s| !s.trim().is_empty()) {
        let item = item.trim();
        let (name, count) = match item.split_once(['x', 'X', '×']) {
            Some((name, c)) => (
                name,
                c.trim()
                    .parse::<usize>()
                    .with_context(|| format!("bad replica count in `{item}`"))?,
            ),
            None => (item, 1),
        };
        counts[parse_shard(name, n)?] += count;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let r = r.unwrap_or(max);
    if max > r {
        bail!("a shard is selected {max} times but r = {r}");
    }
    Ok(ReplicaLevels::from_counts(&counts, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_selection_forms() {
        let l = parse_selection("D1x2", 3, None).unwrap();
        assert_eq!(l.counts(), vec![2, 0, 0]);
        let l = parse_selection("D1,D2", 3, None).unwrap();
        assert_eq!(l.counts(), vec![1, 1, 0]);
        let l = parse_selection("D1, D1 ,D3", 3, Some(3)).unwrap();
        assert_eq!(l.counts(), vec![2, 0, 1]);
        assert_eq!(l.r(), 3);
        let l = parse_selection("D1,D2;D1", 3, None).unwrap();
        assert_eq!(l.counts(), vec![2, 1, 0]);
        assert!(parse_selection("D1;D2", 3, None).is_err());
        assert!(parse_selection("D4", 3, None).is_err());
        assert!(parse_selection("D1x3", 3, Some(2)).is_err());
        assert!(parse_selection("Q1", 3, None).is_err());
    }

    #[test]
    fn two_shard_examples() {
        let sp = |sel: &str, f| sp_command(vec![0.8, 0.1], sel, f, None).unwrap();
        assert_eq!(format!("{:.6}", sp("D1,D2", 0.05)), "0.855000");
        assert_eq!(format!("{:.6}", sp("D1x2", 0.2)), "0.768000");
        assert_eq!(format!("{:.6}", sp("D1x2", 1.0)), "0.000000");
    }
}
