//! Loading query files and running batches of queries in both modes.
//!
//! A manifest is a JSON document listing query files:
//!
//! ```text
//! { "format_version": 1, "queries": ["q000.json", "q001.json"],
//!   "policy": "centered" }
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::bounds::Interval;
use crate::cegar::{solve_direct, solve_with_abstraction, CegarConfig, CegarReport};
use crate::error::{Error, Result};
use crate::graph::NeuronGraph;
use crate::io::{self, QuerySpec, FORMAT_VERSION};
use crate::policies::{Policy, PolicyContext, TestSet};
use crate::query::{build_adversarial, SolveStatus, Status, VerificationQuery};

/// A query ready to solve, with what the refinement policies may use.
#[derive(Debug, Clone)]
pub struct LoadedQuery {
    pub name: String,
    pub query: VerificationQuery,
    /// Reference input of an adversarial query.
    pub x0: Option<Vec<f64>>,
    pub test_set: Option<TestSet>,
    /// Policy requested by the query file, if any.
    pub policy: Option<Policy>,
}

impl LoadedQuery {
    pub fn context(&self, seed: u64) -> PolicyContext<'_> {
        PolicyContext {
            test_set: self.test_set.as_ref(),
            x0: self.x0.as_deref(),
            seed,
        }
    }
}

/// Builds the adversarial query around sample `index` of `test_set`.
/// `domain` defaults to the whole real line.
pub fn adversarial_query(
    name: impl Into<String>,
    net: &crate::network::Network,
    test_set: TestSet,
    index: usize,
    eps: f64,
    domain: Option<Interval>,
) -> Result<LoadedQuery> {
    let x0 = test_set
        .samples()
        .get(index)
        .ok_or(Error::OutOfRange {
            index,
            size: test_set.len(),
        })?
        .clone();
    let domain = domain.unwrap_or(Interval::UNBOUNDED);
    let adv = build_adversarial(net, &x0, eps, domain)?;
    Ok(LoadedQuery {
        name: name.into(),
        query: adv.query,
        x0: Some(x0),
        test_set: Some(test_set),
        policy: None,
    })
}

/// Reads the files a query document refers to.
pub fn load_query(spec: &QuerySpec, name: impl Into<String>) -> Result<LoadedQuery> {
    let name = name.into();
    match spec {
        QuerySpec::Explicit {
            network,
            input_bounds,
            output_constraints,
        } => {
            let net = io::read_network(network)?;
            let query = VerificationQuery::new(
                NeuronGraph::from_network(&net),
                input_bounds.iter().map(|&p| p.into()).collect(),
                output_constraints.clone(),
            )?;
            Ok(LoadedQuery {
                name,
                query,
                x0: None,
                test_set: None,
                policy: None,
            })
        }
        QuerySpec::Adversarial {
            model,
            dataset,
            sample_index,
            eps,
            policy,
            domain,
        } => {
            let net = io::read_network(model)?;
            let ts = io::read_dataset(dataset)?;
            let mut q = adversarial_query(name, &net, ts, *sample_index, *eps, domain.map(Into::into))?;
            q.policy = *policy;
            Ok(q)
        }
    }
}

pub fn load_query_file(path: &Path) -> Result<LoadedQuery> {
    let spec = io::read_query(path)?;
    load_query(&spec, path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub queries: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
}

impl Manifest {
    pub fn new(queries: Vec<PathBuf>, policy: Option<Policy>) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            queries,
            policy,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads a manifest, resolving relative query paths against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "manifest has format version {}, expected {FORMAT_VERSION}",
                m.format_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for q in &mut m.queries {
            if q.is_relative() {
                *q = base.join(&*q);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Vanilla,
    Cegar,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Cegar => "cegar",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub query: String,
    pub mode: Mode,
    pub verdict: Status,
    pub solve_status: Option<SolveStatus>,
    pub secs: f64,
    pub refinements: usize,
    pub size_ratio: f64,
}

impl BenchRow {
    fn new(query: &str, mode: Mode, report: &CegarReport) -> Self {
        let v = &report.verdict;
        BenchRow {
            query: query.to_string(),
            mode,
            verdict: v.status,
            solve_status: v.solve_status,
            secs: v.stats.runtime_secs,
            refinements: v.stats.refinements,
            size_ratio: v.stats.size_ratio,
        }
    }
}

/// Per-mode summary over the terminating rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub rows: usize,
    pub solved: usize,
    pub median_secs: f64,
    pub mean_secs: f64,
    pub verdicts: BTreeMap<String, usize>,
    pub solve_statuses: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format_version: u32,
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<Aggregate>,
    /// Queries on which the two modes returned different terminating verdicts.
    pub disagreements: Vec<String>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn aggregate(mode: Mode, rows: &[BenchRow]) -> Aggregate {
    let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.mode == mode).collect();
    let solved: Vec<f64> = mine
        .iter()
        .filter(|r| r.verdict != Status::Timeout)
        .map(|r| r.secs)
        .collect();
    let mut verdicts = BTreeMap::new();
    let mut solve_statuses = BTreeMap::new();
    for r in &mine {
        let v = serde_json::to_value(r.verdict).expect("status serializes");
        *verdicts.entry(v.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
        if let Some(s) = r.solve_status {
            let s = serde_json::to_value(s).expect("status serializes");
            *solve_statuses.entry(s.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
        }
    }
    Aggregate {
        mode,
        rows: mine.len(),
        solved: solved.len(),
        mean_secs: if solved.is_empty() {
            f64::NAN
        } else {
            solved.iter().sum::<f64>() / solved.len() as f64
        },
        median_secs: median(solved),
        verdicts,
        solve_statuses,
    }
}

/// Solves every query in vanilla mode (original network only) and in
/// abstraction-refinement mode, one query at a time. `policy` is used for
/// queries that do not request one.
pub fn run_bench(queries: &[LoadedQuery], policy: Policy, config: &CegarConfig, seed: u64) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(2 * queries.len());
    let mut disagreements = Vec::new();
    for q in queries {
        let vanilla = solve_direct(&q.query, config)?;
        let cegar = solve_with_abstraction(&q.query, q.policy.unwrap_or(policy), &q.context(seed), config)?;
        let (a, b) = (vanilla.verdict.status, cegar.verdict.status);
        info!(query = %q.name, vanilla = ?a, cegar = ?b, "benchmark query done");
        if a != b && a != Status::Timeout && b != Status::Timeout {
            disagreements.push(q.name.clone());
        }
        rows.push(BenchRow::new(&q.name, Mode::Vanilla, &vanilla));
        rows.push(BenchRow::new(&q.name, Mode::Cegar, &cegar));
    }
    let aggregates = vec![aggregate(Mode::Vanilla, &rows), aggregate(Mode::Cegar, &rows)];
    Ok(BenchReport {
        format_version: FORMAT_VERSION,
        rows,
        aggregates,
        disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::io::{write_dataset, write_network, write_query};

    fn toy_files(dir: &Path) -> PathBuf {
        let net = fixtures::toy_cnn();
        write_network(&net, &dir.join("toy.json")).unwrap();
        let ts = TestSet::new(
            vec![vec![1.0, 0.0, 1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 1.0, 0.0]],
            vec![0, 0],
            Some(4),
        )
        .unwrap();
        write_dataset(&ts, &dir.join("toy.csv")).unwrap();
        let spec = QuerySpec::Adversarial {
            model: "toy.json".into(),
            dataset: "toy.csv".into(),
            sample_index: 0,
            eps: 0.0,
            policy: None,
            domain: None,
        };
        let path = dir.join("q.json");
        write_query(&spec, &path).unwrap();
        path
    }

    #[test]
    fn adversarial_file_loads_with_reference_point() {
        let dir = tempfile::tempdir().unwrap();
        let q = load_query_file(&toy_files(dir.path())).unwrap();
        assert_eq!(q.x0.as_deref(), Some(&[1.0, 0.0, 1.0, 0.0, 0.0][..]));
        assert!(q.query.input_box().iter().all(|b| b.width() == 0.0));
        assert_eq!(q.test_set.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn sample_index_out_of_range() {
        let net = fixtures::toy_cnn();
        let ts = TestSet::new(vec![vec![0.0; 5]], vec![0], None).unwrap();
        assert!(matches!(
            adversarial_query("q", &net, ts, 3, 0.1, None),
            Err(Error::OutOfRange { index: 3, size: 1 })
        ));
    }

    #[test]
    fn manifest_paths_resolve_against_its_directory() {
        let dir = tempfile::tempdir().unwrap();
        let q = toy_files(dir.path());
        let path = dir.path().join("m.json");
        Manifest::new(vec!["q.json".into()], Some(Policy::Random)).write(&path).unwrap();
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.queries, vec![q]);
        assert_eq!(m.policy, Some(Policy::Random));
    }

    #[test]
    fn ten_point_queries_give_twenty_agreeing_rows() {
        let dir = tempfile::tempdir().unwrap();
        let q = load_query_file(&toy_files(dir.path())).unwrap();
        let queries: Vec<LoadedQuery> = (0..10)
            .map(|i| LoadedQuery {
                name: format!("q{i}"),
                ..q.clone()
            })
            .collect();
        let report = run_bench(&queries, Policy::Centered, &CegarConfig::default(), 0).unwrap();
        assert_eq!(report.rows.len(), 20);
        assert!(report.disagreements.is_empty());
        for agg in &report.aggregates {
            assert_eq!(agg.rows, 10);
            assert_eq!(agg.verdicts.get("unsat"), Some(&10));
            assert_eq!(agg.solve_statuses.get("lp_infeasible"), Some(&10));
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
