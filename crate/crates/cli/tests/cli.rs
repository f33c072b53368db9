use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convabs_core::batch::{BenchReport, Manifest};
use convabs_core::io::{self, QuerySpec, ResultsDoc};
use convabs_core::{fixtures, NeuronGraph, OutputConstraint, SolveStatus, Status, TestSet, VerificationQuery};

fn convabs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convabs"))
        .args(args)
        .env_remove("CONVABS_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the toy network and a dataset holding the reference sample.
fn toy_files(dir: &Path) -> (PathBuf, PathBuf) {
    let model = dir.join("toy.json");
    let data = dir.join("toy.csv");
    io::write_network(&fixtures::toy_cnn(), &model).unwrap();
    let ts = TestSet::new(vec![vec![1.0, 0.0, 1.0, 0.0, 0.0]], vec![0], Some(4)).unwrap();
    io::write_dataset(&ts, &data).unwrap();
    (model, data)
}

fn explicit_query(dir: &Path, name: &str, net: &convabs_core::Network, bounds: Vec<(f64, f64)>, q: Vec<OutputConstraint>) -> PathBuf {
    let net_path = dir.join(format!("{name}.net.json"));
    io::write_network(net, &net_path).unwrap();
    let spec = QuerySpec::Explicit {
        network: net_path.file_name().unwrap().into(),
        input_bounds: bounds,
        output_constraints: q,
    };
    let path = dir.join(format!("{name}.query.json"));
    io::write_query(&spec, &path).unwrap();
    path
}

fn results(out: &Output) -> ResultsDoc {
    ResultsDoc::from_json(&String::from_utf8_lossy(&out.stdout)).expect("results document on stdout")
}

#[test]
fn point_query_is_unsat() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = toy_files(dir.path());
    let out = convabs(&["solve-adversarial", "--model", s(&model), "--dataset", s(&data), "--sample-index", "0", "--eps", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(results(&out).verdict, Status::Unsat);
}

#[test]
fn wide_ball_finds_a_valid_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = toy_files(dir.path());
    let res = dir.path().join("r.json");
    let out = convabs(&[
        "solve-adversarial", "--model", s(&model), "--dataset", s(&data), "--sample-index", "0", "--eps", "5",
        "--out", s(&res),
    ]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = ResultsDoc::from_json(&fs::read_to_string(&res).unwrap()).unwrap();
    assert_eq!(doc.verdict, Status::Sat);
    // the ball around (1,0,1,0,0) where runner-up y1 reaches y0
    let b: Vec<_> = [1.0, 0.0, 1.0, 0.0, 0.0].iter().map(|&v| (v - 5.0, v + 5.0).into()).collect();
    let q = VerificationQuery::new(NeuronGraph::from_network(&fixtures::toy_cnn()), b, vec![OutputConstraint::le(0, 1)]).unwrap();
    assert!(q.check_concrete(doc.counterexample.as_ref().unwrap()));
}

#[test]
fn targeted_box_query_is_sat() {
    let dir = tempfile::tempdir().unwrap();
    let bounds = vec![(0.5, 1.0), (0.0, 0.5), (0.5, 1.0), (0.0, 0.5), (0.0, 0.5)];
    let q = explicit_query(dir.path(), "toy", &fixtures::toy_cnn(), bounds.clone(), vec![OutputConstraint::le(1, 0)]);
    let out = convabs(&["solve", s(&q)]);
    assert_eq!(code(&out), 1);
    let doc = results(&out);
    let vq = VerificationQuery::new(
        NeuronGraph::from_network(&fixtures::toy_cnn()),
        bounds.into_iter().map(Into::into).collect(),
        vec![OutputConstraint::le(1, 0)],
    )
    .unwrap();
    assert!(vq.check_concrete(doc.counterexample.as_ref().unwrap()));
}

#[test]
fn missing_and_malformed_inputs_exit_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = toy_files(dir.path());
    let out = convabs(&["solve-adversarial", "--model", "/nonexistent/model.json", "--dataset", s(&data), "--sample-index", "0", "--eps", "0"]);
    assert_eq!(code(&out), 3);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&convabs(&["solve", s(&bad)])), 3);
    assert_eq!(code(&convabs(&["solve", "--bogus-flag", s(&bad)])), 3);
}

#[test]
fn skip_example_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixtures::skip_example_network();
    let flags = ["--interval-only", "--abstraction-layer", "2"];
    let hi = explicit_query(dir.path(), "hi", &net, vec![(-1.0, 1.0)], vec![OutputConstraint::at_least(0, 5.0)]);
    let lo = explicit_query(dir.path(), "lo", &net, vec![(-1.0, 1.0)], vec![OutputConstraint::at_least(0, 1.0)]);

    let out = convabs(&[&["solve", s(&hi)][..], &flags].concat());
    assert_eq!(code(&out), 0);
    let doc = results(&out);
    assert_eq!(doc.solve_status, Some(SolveStatus::AllAbstract));
    assert_eq!(doc.refinements, 0);

    let out = convabs(&[&["solve", s(&lo)][..], &flags].concat());
    assert_eq!(code(&out), 0);
    let doc = results(&out);
    assert_eq!(doc.solve_status, Some(SolveStatus::FullNetwork));
    assert!(doc.iterations[0].spurious);

    for q in [&hi, &lo] {
        let out = convabs(&["solve", s(q), "--no-abstraction"]);
        assert_eq!(code(&out), 0);
        assert_eq!(results(&out).mode, "vanilla");
    }
}

fn dump_row(text: &str, neuron: usize) -> (f64, f64) {
    let line = text
        .lines()
        .find(|l| l.split(',').next() == Some(&neuron.to_string()))
        .unwrap_or_else(|| panic!("no row for neuron {neuron} in\n{text}"));
    let f: Vec<&str> = line.split(',').collect();
    (f[3].parse().unwrap(), f[4].parse().unwrap())
}

#[test]
fn propagated_bounds_of_the_overlapping_pool_example() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixtures::lp_example_network();
    let q = explicit_query(dir.path(), "lp", &net, fixtures::lp_example_box(), vec![]);
    let y = net.neuron_count() - 1;
    let run = |extra: &[&str]| {
        let out = convabs(&[&["propagate-bounds", s(&q)][..], extra].concat());
        assert_eq!(code(&out), 0);
        dump_row(&String::from_utf8_lossy(&out.stdout), y)
    };
    let (_, new) = run(&[]);
    let (_, sota) = run(&["--relaxation", "sota"]);
    assert!((new - 6.5).abs() < 1e-6, "{new}");
    assert!((sota - 7.0).abs() < 1e-6, "{sota}");
    assert_eq!(run(&["--interval-only"]), (-5.0, 7.0));
}

#[test]
fn bounds_only_reports_undecided_or_unsat() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixtures::lp_example_network();
    let open = explicit_query(dir.path(), "open", &net, fixtures::lp_example_box(), vec![OutputConstraint::at_least(0, 5.0)]);
    let closed = explicit_query(dir.path(), "closed", &net, fixtures::lp_example_box(), vec![OutputConstraint::at_least(0, 8.0)]);
    assert_eq!(code(&convabs(&["solve", s(&open), "--bounds-only"])), 2);
    assert_eq!(code(&convabs(&["solve", s(&closed), "--bounds-only"])), 0);
}

#[test]
fn bench_of_ten_point_queries() {
    let dir = tempfile::tempdir().unwrap();
    toy_files(dir.path());
    let mut names = Vec::new();
    for i in 0..10 {
        let spec = QuerySpec::Adversarial {
            model: "toy.json".into(),
            dataset: "toy.csv".into(),
            sample_index: 0,
            eps: 0.0,
            policy: None,
            domain: None,
        };
        let name = PathBuf::from(format!("q{i}.json"));
        io::write_query(&spec, &dir.path().join(&name)).unwrap();
        names.push(name);
    }
    let manifest = dir.path().join("manifest.json");
    Manifest::new(names, None).write(&manifest).unwrap();
    let out = convabs(&["bench", s(&manifest)]);
    assert_eq!(code(&out), 0);
    let report: BenchReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.rows.len(), 20);
    assert!(report.rows.iter().all(|r| r.solve_status == Some(SolveStatus::LpInfeasible)));
    assert!(report.disagreements.is_empty());
}

#[test]
fn generated_bench_runs_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("bench");
    assert_eq!(code(&convabs(&["gen-bench", "--out-dir", s(&b), "--networks", "2", "--per-network", "2", "--seed", "3"])), 0);
    let report_path = dir.path().join("report.json");
    let out = convabs(&["bench", s(&b.join("manifest.json")), "--out", s(&report_path), "--timeout", "60"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: BenchReport = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert!(report.disagreements.is_empty());
    for kind in ["cactus", "scatter"] {
        let svg = dir.path().join(format!("{kind}.svg"));
        assert_eq!(code(&convabs(&["plot", s(&report_path), "--kind", kind, "--out", s(&svg)])), 0);
        let text = fs::read_to_string(&svg).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn repeated_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("bench");
    assert_eq!(code(&convabs(&["gen-bench", "--out-dir", s(&b), "--networks", "1", "--per-network", "3", "--seed", "9"])), 0);
    let again = dir.path().join("again");
    assert_eq!(code(&convabs(&["gen-bench", "--out-dir", s(&again), "--networks", "1", "--per-network", "3", "--seed", "9"])), 0);
    assert_eq!(fs::read(b.join("net000.json")).unwrap(), fs::read(again.join("net000.json")).unwrap());
    for q in ["q000.json", "q001.json", "q002.json"] {
        let path = b.join(q);
        let runs: Vec<_> = (0..2)
            .map(|_| {
                let out = convabs(&["solve", s(&path), "--policy", "random", "--seed", "4"]);
                let mut doc = results(&out);
                doc.timings.total_secs = 0.0;
                doc.timings.bounds_secs = 0.0;
                doc.iterations.iter_mut().for_each(|r| r.secs = 0.0);
                (code(&out), doc)
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
    }
}
