//! `convabs`: verify convolutional networks from the command line.
//!
//! Exit status: 0 unsat (property holds), 1 sat (counterexample found),
//! 2 timeout or undecided, 3 error. Set `CONVABS_LOG` (e.g. `debug`) for
//! log output on stderr.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use convabs_core::batch::{adversarial_query, load_query_file, run_bench, BenchReport, LoadedQuery, Manifest};
use convabs_core::cegar::initial_bounds;
use convabs_core::io::{self, QuerySpec, ResultsDoc};
use convabs_core::synth::bench_suite;
use convabs_core::{
    interval_pass, solve_direct, solve_with_abstraction, CegarConfig, CegarReport, Interval, Policy, Relaxation,
    Status,
};
use rand::SeedableRng;
use tracing::info;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "convabs", version, about = "Abstraction-refinement verification of convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Targeted robustness of one dataset sample within an l-infinity ball.
    SolveAdversarial {
        /// Network file.
        #[arg(long)]
        model: PathBuf,
        /// Dataset file holding the sample.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        sample_index: usize,
        #[arg(long)]
        eps: f64,
        /// Lower end of the input domain the ball is clipped to.
        #[arg(long, allow_hyphen_values = true)]
        domain_lo: Option<f64>,
        /// Upper end of the input domain the ball is clipped to.
        #[arg(long, allow_hyphen_values = true)]
        domain_hi: Option<f64>,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Solve a query file.
    Solve {
        query: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Print the neuron bounds of a query as CSV.
    PropagateBounds {
        query: PathBuf,
        #[arg(long, default_value = "new")]
        relaxation: Relaxation,
        /// Interval arithmetic only, no LP tightening.
        #[arg(long)]
        interval_only: bool,
        /// Write the dump here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every query of a manifest in vanilla and abstraction modes.
    Bench {
        manifest: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate random adversarial benchmark queries and a manifest.
    GenBench {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        networks: usize,
        #[arg(long, default_value_t = 5)]
        per_network: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a bench report as an SVG plot.
    Plot {
        report: PathBuf,
        #[arg(long, value_enum, default_value = "cactus")]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    /// Solved queries against cumulative runtime, per mode.
    Cactus,
    /// Vanilla against abstraction runtime, per query.
    Scatter,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Refinement policy; overrides a policy given in a query file.
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long, default_value = "new")]
    relaxation: Relaxation,
    /// Neurons restored per refinement step.
    #[arg(long, default_value_t = 1)]
    step: usize,
    /// Double the refinement step after each refinement.
    #[arg(long)]
    geometric: bool,
    /// Overall time limit in seconds.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
    /// Time limit of each abstract query in seconds.
    #[arg(long, default_value_t = 800.0)]
    sub_timeout: f64,
    /// Seed of the random policy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip LP bound tightening.
    #[arg(long)]
    interval_only: bool,
    /// Abstract this layer instead of the automatically selected one.
    #[arg(long)]
    abstraction_layer: Option<usize>,
}

impl ConfigArgs {
    fn config(&self) -> Result<CegarConfig> {
        let secs = |s: f64, what: &str| {
            Duration::try_from_secs_f64(s).with_context(|| format!("invalid {what} `{s}`"))
        };
        Ok(CegarConfig {
            relaxation: self.relaxation,
            lp_tighten: !self.interval_only,
            step: self.step.max(1),
            geometric_step: self.geometric,
            timeout: secs(self.timeout, "--timeout")?,
            sub_timeout: secs(self.sub_timeout, "--sub-timeout")?,
            abstraction_layer: self.abstraction_layer,
            tighten_abstract: false,
        })
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Verify the original network directly (vanilla mode).
    #[arg(long)]
    no_abstraction: bool,
    /// Stop after bound propagation.
    #[arg(long)]
    bounds_only: bool,
    /// Write the results document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_UNSAT: u8 = 0;
const EXIT_SAT: u8 = 1;
const EXIT_UNDECIDED: u8 = 2;
const EXIT_ERROR: u8 = 3;

fn exit_code(status: Status) -> u8 {
    match status {
        Status::Unsat => EXIT_UNSAT,
        Status::Sat => EXIT_SAT,
        Status::Timeout => EXIT_UNDECIDED,
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn solve(q: &LoadedQuery, args: &SolveArgs) -> Result<u8> {
    let config = args.config.config()?;
    if args.bounds_only {
        let start = Instant::now();
        let bounds = initial_bounds(&q.query, &config)?;
        info!(secs = start.elapsed().as_secs_f64(), "bounds computed");
        let Some(b) = bounds else {
            eprintln!("{}: unsat after bound propagation", q.name);
            emit("", args.out.as_deref())?;
            return Ok(EXIT_UNSAT);
        };
        eprintln!("{}: undecided after bound propagation", q.name);
        emit(b.dump(q.query.graph()).trim_end(), args.out.as_deref())?;
        return Ok(EXIT_UNDECIDED);
    }
    let (mode, report): (&str, CegarReport) = if args.no_abstraction {
        ("vanilla", solve_direct(&q.query, &config)?)
    } else {
        let policy = args.config.policy.or(q.policy).unwrap_or(Policy::Centered);
        ("cegar", solve_with_abstraction(&q.query, policy, &q.context(args.config.seed), &config)?)
    };
    let doc = ResultsDoc::new(&q.name, mode, &report);
    eprintln!(
        "{}: {:?} ({:?}) in {:.3}s, {} refinements",
        q.name, doc.verdict, doc.solve_status, doc.timings.total_secs, doc.refinements
    );
    emit(&doc.to_json(), args.out.as_deref())?;
    Ok(exit_code(report.verdict.status))
}

fn propagate(query: &Path, relaxation: Relaxation, interval_only: bool, out: Option<&Path>) -> Result<u8> {
    let q = load_query_file(query)?;
    let text = if interval_only {
        interval_pass(q.query.graph(), q.query.input_box())?.dump(q.query.graph())
    } else {
        let config = CegarConfig {
            relaxation,
            ..CegarConfig::default()
        };
        match initial_bounds(&q.query, &config)? {
            Some(b) => b.dump(q.query.graph()),
            None => {
                eprintln!("the relaxation is infeasible: the query is unsat");
                String::new()
            }
        }
    };
    emit(text.trim_end(), out)?;
    Ok(EXIT_UNSAT)
}

fn bench(manifest: &Path, out: Option<&Path>, args: &ConfigArgs) -> Result<u8> {
    let m = Manifest::read(manifest)?;
    let queries = m
        .queries
        .iter()
        .map(|p| load_query_file(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let policy = args.policy.or(m.policy).unwrap_or(Policy::Centered);
    let report = run_bench(&queries, policy, &args.config()?, args.seed)?;
    for a in &report.aggregates {
        eprintln!(
            "{}: {}/{} solved, median {:.4}s, mean {:.4}s, verdicts {:?}, statuses {:?}",
            a.mode.name(),
            a.solved,
            a.rows,
            a.median_secs,
            a.mean_secs,
            a.verdicts,
            a.solve_statuses
        );
    }
    if !report.disagreements.is_empty() {
        eprintln!("modes disagree on: {}", report.disagreements.join(", "));
    }
    emit(&serde_json::to_string_pretty(&report)?, out)?;
    Ok(if report.disagreements.is_empty() { EXIT_UNSAT } else { EXIT_ERROR })
}

fn gen_bench(dir: &Path, networks: usize, per_network: usize, seed: u64) -> Result<u8> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (nets, specs) = bench_suite(&mut rng, networks, per_network);
    for (i, (net, ts)) in nets.iter().enumerate() {
        io::write_network(net, &dir.join(format!("net{i:03}.json")))?;
        io::write_dataset(ts, &dir.join(format!("net{i:03}.csv")))?;
    }
    let mut paths = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        let spec = QuerySpec::Adversarial {
            model: format!("net{:03}.json", s.network).into(),
            dataset: format!("net{:03}.csv", s.network).into(),
            sample_index: s.sample,
            eps: s.eps,
            policy: None,
            domain: None,
        };
        let name = PathBuf::from(format!("q{i:03}.json"));
        io::write_query(&spec, &dir.join(&name))?;
        paths.push(name);
    }
    Manifest::new(paths, None).write(&dir.join("manifest.json"))?;
    eprintln!("wrote {} queries over {} networks to {}", specs.len(), nets.len(), dir.display());
    Ok(EXIT_UNSAT)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::SolveAdversarial {
            model,
            dataset,
            sample_index,
            eps,
            domain_lo,
            domain_hi,
            solve: args,
        } => {
            let net = io::read_network(&model).with_context(|| format!("reading {}", model.display()))?;
            let ts = io::read_dataset(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let domain = match (domain_lo, domain_hi) {
                (None, None) => None,
                (lo, hi) => Some(Interval::new(lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY))),
            };
            if domain.is_some_and(|d| !(d.lo <= d.hi)) {
                bail!("empty input domain");
            }
            let name = format!("{}#{sample_index}", model.display());
            let q = adversarial_query(name, &net, ts, sample_index, eps, domain)?;
            solve(&q, &args)
        }
        Command::Solve { query, solve: args } => {
            let q = load_query_file(&query).with_context(|| format!("loading {}", query.display()))?;
            solve(&q, &args)
        }
        Command::PropagateBounds {
            query,
            relaxation,
            interval_only,
            out,
        } => propagate(&query, relaxation, interval_only, out.as_deref()),
        Command::Bench { manifest, out, config } => bench(&manifest, out.as_deref(), &config),
        Command::GenBench {
            out_dir,
            networks,
            per_network,
            seed,
        } => gen_bench(&out_dir, networks, per_network, seed),
        Command::Plot { report, kind, out } => {
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let report: BenchReport = serde_json::from_str(&text)?;
            let svg = match kind {
                PlotKind::Cactus => plot::cactus(&report),
                PlotKind::Scatter => plot::scatter(&report),
            };
            emit(&svg, Some(&out))?;
            Ok(EXIT_UNSAT)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("CONVABS_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_UNSAT };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
