//! Neuron scoring policies that decide the refinement order.
//!
//! A higher score means more important: the highest-scoring abstract neuron
//! is restored first, ties going to the lower neuron id.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::graph::{NeuronGraph, NeuronId};
use crate::network::LayerShape;
use crate::query::top_two;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Centered,
    AllSamples,
    SampleRank,
    SingleClass,
    MajorityClassVote,
    Random,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Centered,
        Policy::AllSamples,
        Policy::SampleRank,
        Policy::SingleClass,
        Policy::MajorityClassVote,
        Policy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Centered => "centered",
            Policy::AllSamples => "allsamples",
            Policy::SampleRank => "samplerank",
            Policy::SingleClass => "singleclass",
            Policy::MajorityClassVote => "majorityclassvote",
            Policy::Random => "random",
        }
    }

    pub fn needs_test_set(self) -> bool {
        matches!(
            self,
            Policy::AllSamples | Policy::SingleClass | Policy::MajorityClassVote
        )
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// Labelled samples used by the data-driven policies.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    samples: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_labels: usize,
}

impl TestSet {
    /// `num_labels` defaults to one more than the largest label.
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<usize>, num_labels: Option<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Dimension {
                expected: samples.len(),
                actual: labels.len(),
            });
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.len() != first.len()) {
                return Err(Error::Dimension {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        let needed = labels.iter().max().map_or(0, |&l| l + 1);
        let num_labels = num_labels.unwrap_or(needed);
        if needed > num_labels {
            return Err(Error::OutOfRange {
                index: needed - 1,
                size: num_labels,
            });
        }
        Ok(TestSet {
            samples,
            labels,
            num_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }
}

/// Values of one layer at every test sample: `rows[i][j]` is neuron `j` of
/// the layer at sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub rows: Vec<Vec<f64>>,
}

impl LayerActivations {
    pub fn compute(graph: &NeuronGraph, layer: usize, test_set: &TestSet) -> Result<Self> {
        let ids = graph.layers()[layer].ids.clone();
        let rows = test_set
            .samples()
            .iter()
            .map(|s| graph.evaluate(s).map(|v| v[ids.clone()].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerActivations { rows })
    }

    fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn mean_over(&self, select: impl Fn(usize) -> bool) -> Vec<f64> {
        let mut sum = vec![0.0; self.width()];
        let mut count = 0usize;
        for (i, row) in self.rows.iter().enumerate() {
            if select(i) {
                count += 1;
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
            }
        }
        if count > 0 {
            for s in &mut sum {
                *s /= count as f64;
            }
        }
        sum
    }
}

/// Negated Euclidean distance of each neuron's coordinates from the center
/// `floor(d_i / 2)` of every dimension.
pub fn score_centered(shape: &LayerShape) -> Vec<f64> {
    (0..shape.size())
        .map(|i| {
            let c = shape.coordinates(i).expect("index in range");
            let d2: f64 = c
                .iter()
                .zip(shape.dims())
                .map(|(&j, &d)| {
                    let off = j as f64 - (d / 2) as f64;
                    off * off
                })
                .sum();
            -d2.sqrt()
        })
        .collect()
}

pub fn score_all_samples(acts: &LayerActivations) -> Vec<f64> {
    acts.mean_over(|_| true)
}

/// The layer's values at `x0`.
pub fn score_sample_rank(graph: &NeuronGraph, layer: usize, x0: &[f64]) -> Result<Vec<f64>> {
    let values = graph.evaluate(x0)?;
    Ok(values[graph.layers()[layer].ids.clone()].to_vec())
}

/// Mean layer values over the samples labelled `target`; falls back to all
/// samples when there are none.
pub fn score_single_class(acts: &LayerActivations, test_set: &TestSet, target: usize) -> Vec<f64> {
    if !test_set.labels().contains(&target) {
        warn!(target, "no test samples carry the target label, scoring over all samples");
        return score_all_samples(acts);
    }
    acts.mean_over(|i| test_set.labels()[i] == target)
}

/// Euclidean norm of the per-class mean vector of each neuron. Classes
/// without samples contribute zero.
pub fn score_majority_class_vote(acts: &LayerActivations, test_set: &TestSet) -> Vec<f64> {
    let mut sq = vec![0.0; acts.width()];
    for class in 0..test_set.num_labels() {
        if !test_set.labels().contains(&class) {
            continue;
        }
        let means = acts.mean_over(|i| test_set.labels()[i] == class);
        for (s, m) in sq.iter_mut().zip(means) {
            *s += m * m;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// A seeded random permutation of `0..size`, as scores.
pub fn score_random(size: usize, seed: u64) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..size).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm.into_iter().map(|p| p as f64).collect()
}

/// Inputs a policy may draw on.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyContext<'a> {
    pub test_set: Option<&'a TestSet>,
    /// Reference point; for adversarial queries the point being perturbed.
    pub x0: Option<&'a [f64]>,
    pub seed: u64,
}

/// Scores every neuron of `layer` (in flat layer order) under `policy`.
pub fn score_layer(
    policy: Policy,
    graph: &NeuronGraph,
    layer: usize,
    ctx: &PolicyContext<'_>,
) -> Result<Vec<f64>> {
    let info = &graph.layers()[layer];
    let test_set = || {
        ctx.test_set.ok_or(Error::Policy {
            policy: policy.name(),
            missing: "a test set",
        })
    };
    let x0 = || {
        ctx.x0.ok_or(Error::Policy {
            policy: policy.name(),
            missing: "a reference input",
        })
    };
    Ok(match policy {
        Policy::Centered => score_centered(&info.shape),
        Policy::AllSamples => score_all_samples(&LayerActivations::compute(graph, layer, test_set()?)?),
        Policy::SampleRank => score_sample_rank(graph, layer, x0()?)?,
        Policy::SingleClass => {
            let ts = test_set()?;
            let y = graph.evaluate_outputs(x0()?)?;
            let target = top_two(&y).map_or(0, |(first, _)| first);
            score_single_class(&LayerActivations::compute(graph, layer, ts)?, ts, target)
        }
        Policy::MajorityClassVote => {
            let ts = test_set()?;
            score_majority_class_vote(&LayerActivations::compute(graph, layer, ts)?, ts)
        }
        Policy::Random => score_random(info.ids.len(), ctx.seed),
    })
}

/// Layer neurons in the order refinement restores them: highest score
/// first, ties broken by lower id. `scores` follows the layer's flat order.
pub fn refinement_priority(graph: &NeuronGraph, layer: usize, scores: &[f64]) -> Vec<NeuronId> {
    let start = graph.layers()[layer].ids.start;
    let mut ids = graph.layer_neurons(layer);
    ids.sort_by(|a, b| {
        let (sa, sb) = (scores[a.0 - start], scores[b.0 - start]);
        sb.total_cmp(&sa).then(a.cmp(b))
    });
    ids
}
