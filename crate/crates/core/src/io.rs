//! On-disk formats: networks, queries, datasets and run results.
//!
//! Networks, queries and results are JSON documents carrying a
//! `format_version` field. Floating-point values are written in their
//! shortest round-trip decimal form, so a network survives a write/read
//! cycle bit for bit. Datasets are CSV: one `#` comment line with the
//! format version, a header `label,x0,x1,...`, then one sample per row.
//!
//! Network document:
//!
//! ```text
//! { "format_version": 1, "name": "toy", "input_shape": [5],
//!   "layers": [
//!     { "kind": "convolution", "shape": [4], "kernel": [1.0, -1.3], "bias": 0.2 },
//!     { "kind": "relu", "shape": [4] },
//!     { "kind": "max_pool", "shape": [2], "pool_size": 2 },
//!     { "kind": "weighted_sum", "shape": [2],
//!       "weights": [[0, 0, 2.0], [0, 1, -1.0], ...], "biases": [5.0, -3.0] },
//!     { "kind": "output", "shape": [4], "weights": [...], "biases": [...] } ] }
//! ```
//!
//! Weighted layers list their non-zero weights as `[row, col, value]`
//! triples; `dense_weights` (one array per row) is accepted instead.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::Interval;
use crate::cegar::{CegarReport, IterationRow};
use crate::error::{Error, Result};
use crate::network::{Affine, Kernel, Layer, LayerKind, LayerOp, LayerShape, Network};
use crate::policies::{Policy, TestSet};
use crate::query::{OutputConstraint, SolveStatus, Status};

pub const FORMAT_VERSION: u32 = 1;

fn check_version(found: u32, what: &str) -> Result<()> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "unsupported {what} format version {found}, expected {FORMAT_VERSION}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkDoc {
    format_version: u32,
    name: String,
    input_shape: LayerShape,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerDoc {
    kind: LayerKind,
    shape: LayerShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<(usize, usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dense_weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    biases: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_size: Option<usize>,
}

impl LayerDoc {
    fn bare(kind: LayerKind, shape: LayerShape) -> Self {
        LayerDoc {
            kind,
            shape,
            weights: None,
            dense_weights: None,
            biases: None,
            kernel: None,
            bias: None,
            pool_size: None,
        }
    }

    fn affine(&self, in_size: usize, index: usize) -> Result<Affine> {
        let missing = |field: &str| Error::Format(format!("layer {index}: missing `{field}`"));
        let biases = self.biases.clone().ok_or_else(|| missing("biases"))?;
        match (&self.weights, &self.dense_weights) {
            (Some(t), None) => Affine::from_triples(self.shape.size(), in_size, t.iter().copied(), biases),
            (None, Some(d)) => {
                if d.len() != self.shape.size() {
                    return Err(Error::Format(format!(
                        "layer {index}: {} weight rows for {} neurons",
                        d.len(),
                        self.shape.size()
                    )));
                }
                Affine::from_dense(d, biases)
            }
            (None, None) => Err(missing("weights")),
            (Some(_), Some(_)) => Err(Error::Format(format!(
                "layer {index}: both `weights` and `dense_weights` given"
            ))),
        }
    }
}

fn network_doc(net: &Network) -> NetworkDoc {
    let triples = |a: &Affine| Some(a.triples().collect::<Vec<_>>());
    let layers = net.layers()[1..]
        .iter()
        .map(|l| {
            let mut d = LayerDoc::bare(l.kind(), l.shape.clone());
            match &l.op {
                LayerOp::Input | LayerOp::Relu => {}
                LayerOp::WeightedSum(a) | LayerOp::Output(a) => {
                    d.weights = triples(a);
                    d.biases = Some(a.bias().to_vec());
                }
                LayerOp::Convolution(k) => {
                    d.kernel = Some(k.weights.clone());
                    d.bias = Some(k.bias);
                }
                LayerOp::MaxPool { pool } => d.pool_size = Some(*pool),
            }
            d
        })
        .collect();
    NetworkDoc {
        format_version: FORMAT_VERSION,
        name: net.name().to_string(),
        input_shape: net.layers()[0].shape.clone(),
        layers,
    }
}

fn network_from_doc(doc: NetworkDoc) -> Result<Network> {
    check_version(doc.format_version, "network")?;
    let mut layers = vec![Layer::new(LayerOp::Input, doc.input_shape)];
    for (i, d) in doc.layers.iter().enumerate() {
        let index = i + 1;
        let in_size = layers.last().unwrap().size();
        let op = match d.kind {
            LayerKind::Input => {
                return Err(Error::Format(format!("layer {index}: input layer after the first")))
            }
            LayerKind::Relu => LayerOp::Relu,
            LayerKind::WeightedSum => LayerOp::WeightedSum(d.affine(in_size, index)?),
            LayerKind::Output => LayerOp::Output(d.affine(in_size, index)?),
            LayerKind::Convolution => LayerOp::Convolution(Kernel {
                weights: d
                    .kernel
                    .clone()
                    .ok_or_else(|| Error::Format(format!("layer {index}: missing `kernel`")))?,
                bias: d.bias.unwrap_or(0.0),
            }),
            LayerKind::MaxPool => LayerOp::MaxPool {
                pool: d
                    .pool_size
                    .ok_or_else(|| Error::Format(format!("layer {index}: missing `pool_size`")))?,
            },
        };
        layers.push(Layer::new(op, d.shape.clone()));
    }
    Network::new(doc.name, layers)
}

pub fn network_to_string(net: &Network) -> String {
    serde_json::to_string_pretty(&network_doc(net)).expect("network serializes")
}

pub fn network_from_str(text: &str) -> Result<Network> {
    network_from_doc(serde_json::from_str(text)?)
}

pub fn write_network(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, network_to_string(net))?;
    Ok(())
}

pub fn read_network(path: &Path) -> Result<Network> {
    network_from_str(&fs::read_to_string(path)?)
}

/// A query document. Relative paths are resolved against the directory of
/// the query file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuerySpec {
    /// A box over the inputs and linear output atoms `sum c*y + constant <= 0`.
    Explicit {
        network: PathBuf,
        input_bounds: Vec<(f64, f64)>,
        output_constraints: Vec<OutputConstraint>,
    },
    /// Targeted robustness around one dataset sample.
    Adversarial {
        model: PathBuf,
        dataset: PathBuf,
        sample_index: usize,
        eps: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        policy: Option<Policy>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QueryDoc {
    format_version: u32,
    #[serde(flatten)]
    spec: QuerySpec,
}

impl QuerySpec {
    pub fn input_box(&self) -> Option<Vec<Interval>> {
        match self {
            QuerySpec::Explicit { input_bounds, .. } => {
                Some(input_bounds.iter().map(|&p| p.into()).collect())
            }
            QuerySpec::Adversarial { .. } => None,
        }
    }

    fn resolve(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self {
            QuerySpec::Explicit { network, .. } => fix(network),
            QuerySpec::Adversarial { model, dataset, .. } => {
                fix(model);
                fix(dataset);
            }
        }
        self
    }
}

pub fn query_to_string(spec: &QuerySpec) -> String {
    serde_json::to_string_pretty(&QueryDoc {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
    })
    .expect("query serializes")
}

pub fn query_from_str(text: &str) -> Result<QuerySpec> {
    let doc: QueryDoc = serde_json::from_str(text)?;
    check_version(doc.format_version, "query")?;
    Ok(doc.spec)
}

pub fn write_query(spec: &QuerySpec, path: &Path) -> Result<()> {
    fs::write(path, query_to_string(spec))?;
    Ok(())
}

/// Reads a query file, resolving relative paths against its directory.
pub fn read_query(path: &Path) -> Result<QuerySpec> {
    let spec = query_from_str(&fs::read_to_string(path)?)?;
    Ok(spec.resolve(path.parent().unwrap_or(Path::new("."))))
}

pub fn write_dataset(set: &TestSet, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(
        file,
        "# format_version={FORMAT_VERSION} labels={}",
        set.num_labels()
    )?;
    let mut w = csv::Writer::from_writer(file);
    let width = set.samples().first().map_or(0, Vec::len);
    let mut header = vec!["label".to_string()];
    header.extend((0..width).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (s, l) in set.samples().iter().zip(set.labels()) {
        let mut rec = vec![l.to_string()];
        rec.extend(s.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TestSet> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or_default();
    let mut num_labels = None;
    if let Some(meta) = first.strip_prefix('#') {
        for field in meta.split_whitespace() {
            match field.split_once('=') {
                Some(("format_version", v)) => {
                    let v: u32 = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad format version `{v}`")))?;
                    check_version(v, "dataset")?;
                }
                Some(("labels", v)) => {
                    num_labels = Some(
                        v.parse()
                            .map_err(|_| Error::Format(format!("bad label count `{v}`")))?,
                    );
                }
                _ => {}
            }
        }
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or_default().trim();
        let label: usize = field(0)
            .parse()
            .map_err(|_| Error::Format(format!("row {i}: bad label `{}`", field(0))))?;
        let values = (1..rec.len())
            .map(|j| {
                field(j)
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {i}: bad value `{}`", field(j))))
            })
            .collect::<Result<Vec<_>>>()?;
        labels.push(label);
        samples.push(values);
    }
    TestSet::new(samples, labels, num_labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_secs: f64,
    pub bounds_secs: f64,
}

/// The per-query results document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDoc {
    pub format_version: u32,
    pub query: String,
    /// `cegar` or `vanilla`.
    pub mode: String,
    pub verdict: Status,
    pub solve_status: Option<SolveStatus>,
    pub timings: Timings,
    pub refinements: usize,
    pub size_ratio: f64,
    pub nodes: usize,
    pub tolerance_limited: bool,
    pub abstraction_layer: Option<usize>,
    pub iterations: Vec<IterationRow>,
    pub counterexample: Option<Vec<f64>>,
}

impl ResultsDoc {
    pub fn new(query: impl Into<String>, mode: impl Into<String>, report: &CegarReport) -> Self {
        let v = &report.verdict;
        ResultsDoc {
            format_version: FORMAT_VERSION,
            query: query.into(),
            mode: mode.into(),
            verdict: v.status,
            solve_status: v.solve_status,
            timings: Timings {
                total_secs: v.stats.runtime_secs,
                bounds_secs: report.bounds_secs,
            },
            refinements: v.stats.refinements,
            size_ratio: v.stats.size_ratio,
            nodes: v.stats.nodes,
            tolerance_limited: v.stats.tolerance_limited,
            abstraction_layer: report.abstraction_layer,
            iterations: report.iterations.clone(),
            counterexample: v.counterexample.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ResultsDoc = serde_json::from_str(text)?;
        check_version(doc.format_version, "results")?;
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn network_round_trip_is_exact() {
        for net in [
            fixtures::toy_cnn(),
            fixtures::lp_example_network(),
            fixtures::skip_example_network(),
        ] {
            let text = network_to_string(&net);
            assert_eq!(network_from_str(&text).unwrap(), net);
        }
    }

    #[test]
    fn awkward_floats_survive() {
        let w = vec![vec![0.1 + 0.2, 1e-300, -2.5e17, std::f64::consts::PI]];
        let a = Affine::from_dense(&w, vec![1.0 / 3.0]).unwrap();
        let net = Network::new(
            "floats",
            vec![
                Layer::new(LayerOp::Input, LayerShape::flat(4)),
                Layer::new(LayerOp::Output(a), LayerShape::flat(1)),
            ],
        )
        .unwrap();
        assert_eq!(network_from_str(&network_to_string(&net)).unwrap(), net);
    }

    #[test]
    fn dense_weights_accepted() {
        let text = r#"{"format_version":1,"name":"d","input_shape":[2],
            "layers":[{"kind":"output","shape":[1],"dense_weights":[[1.0,-1.0]],"biases":[0.5]}]}"#;
        let net = network_from_str(text).unwrap();
        assert_eq!(net.evaluate(&[2.0, 1.0]).unwrap().output(), &[1.5]);
    }

    #[test]
    fn malformed_networks_are_rejected() {
        assert!(network_from_str("{").is_err());
        let wrong_version = network_to_string(&fixtures::toy_cnn()).replace(
            "\"format_version\": 1",
            "\"format_version\": 9",
        );
        assert!(matches!(network_from_str(&wrong_version), Err(Error::Format(_))));
        let no_pool = r#"{"format_version":1,"name":"p","input_shape":[2],
            "layers":[{"kind":"max_pool","shape":[1]}]}"#;
        assert!(network_from_str(no_pool).is_err());
    }

    #[test]
    fn query_round_trip() {
        let spec = QuerySpec::Explicit {
            network: "net.json".into(),
            input_bounds: vec![(-1.0, 1.0)],
            output_constraints: vec![OutputConstraint::at_least(0, 5.0)],
        };
        assert_eq!(query_from_str(&query_to_string(&spec)).unwrap(), spec);
        let adv = QuerySpec::Adversarial {
            model: "m.json".into(),
            dataset: "d.csv".into(),
            sample_index: 3,
            eps: 0.05,
            policy: Some(Policy::SingleClass),
            domain: None,
        };
        let text = query_to_string(&adv);
        assert!(text.contains("\"kind\": \"adversarial\""));
        assert_eq!(query_from_str(&text).unwrap(), adv);
    }

    #[test]
    fn query_paths_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let spec = QuerySpec::Explicit {
            network: "net.json".into(),
            input_bounds: vec![],
            output_constraints: vec![],
        };
        let path = dir.path().join("q.json");
        write_query(&spec, &path).unwrap();
        match read_query(&path).unwrap() {
            QuerySpec::Explicit { network, .. } => assert_eq!(network, dir.path().join("net.json")),
            _ => unreachable!(),
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let set = TestSet::new(
            vec![vec![0.1, 0.7, 1.0 / 3.0], vec![0.0, 1.0, 0.25]],
            vec![3, 0],
            Some(10),
        )
        .unwrap();
        write_dataset(&set, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), set);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let set = TestSet::new(vec![], vec![], Some(10)).unwrap();
        write_dataset(&set, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
        let back = read_dataset(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.num_labels(), 10);
    }

    #[test]
    fn bad_dataset_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "label,x0\nzero,1.0\n").unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
