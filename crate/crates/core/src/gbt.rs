//! Gradient-boosted regression trees grown leaf-wise (best-first).
//!
//! Each round fits one tree to the per-sample gradients `g` and hessians `h`
//! of the objective at the current scores:
//!
//! | objective | g            | h      | leaf value                 |
//! |-----------|--------------|--------|----------------------------|
//! | l2        | `f - y`      | 1      | `-Σg / (Σh + λ)`           |
//! | l1        | `sign(f - y)`| 1      | median of `y - f` in leaf  |
//! | poisson   | `exp(f) - y` | exp(f) | `-Σg / (Σh + λ)`           |
//!
//! Splits maximize `G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ)` over every feature
//! and every distinct value of it present in the training data (samples with
//! `x <= threshold` go left). Ties go to the lower feature index, then the
//! lower threshold. The tree repeatedly splits the leaf with the largest
//! positive gain until it has `num_leaves` leaves or no split gains; leaf
//! values are then multiplied by the learning rate.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::datagen::{dimension, LabeledRecord};
use crate::error::{Error, Result};
use crate::featurize::FeatureMode;
use crate::netmodel::SignalSetting;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    L2,
    L1,
    Poisson,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::L2 => "l2",
            Objective::L1 => "l1",
            Objective::Poisson => "poisson",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtSpec {
    pub num_leaves: usize,
    pub num_trees: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub objective: Objective,
    pub feature_mode: FeatureMode,
    /// λ in the gain and leaf-value formulas.
    pub l2_reg: f64,
    /// Recorded for provenance; training uses no sampling.
    pub seed: u64,
}

impl Default for GbtSpec {
    fn default() -> Self {
        GbtSpec {
            num_leaves: 31,
            num_trees: 400,
            learning_rate: 0.05,
            min_samples_leaf: 20,
            objective: Objective::L2,
            feature_mode: FeatureMode::Raw,
            l2_reg: 1e-3,
            seed: 0,
        }
    }
}

impl GbtSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_leaves < 2 {
            return Err(Error::invalid("num_leaves must be at least 2"));
        }
        if self.num_trees == 0 || self.min_samples_leaf == 0 {
            return Err(Error::invalid("num_trees and min_samples_leaf must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.l2_reg >= 0.0) {
            return Err(Error::invalid("learning_rate must be positive, l2_reg nonnegative"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mode = match self.feature_mode {
            FeatureMode::Raw => "",
            FeatureMode::Encoded => "-enc",
        };
        format!("gbt-{}-{}{}", self.objective, self.num_leaves, mode)
    }
}

/// The eight tree configurations analyzed side by side.
pub fn roster_specs(seed: u64) -> Vec<GbtSpec> {
    let mut out = Vec::new();
    for objective in [Objective::L2, Objective::L1, Objective::Poisson] {
        for num_leaves in [31, 127] {
            out.push(GbtSpec {
                num_leaves,
                objective,
                seed,
                ..GbtSpec::default()
            });
        }
    }
    for num_leaves in [31, 127] {
        out.push(GbtSpec {
            num_leaves,
            feature_mode: FeatureMode::Encoded,
            seed,
            ..GbtSpec::default()
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub spec: GbtSpec,
    pub n_intersections: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Training objective after each round (mean squared error, mean absolute
    /// error, or Poisson negative log-likelihood without the `log y!` term).
    pub objective_history: Vec<f64>,
}

/// Training matrix with every feature mapped to the rank of its value among
/// the feature's distinct values.
struct Binned {
    n: usize,
    /// Distinct sorted values per feature.
    values: Vec<Vec<f64>>,
    /// `bins[f][i]`: rank of sample `i`'s value of feature `f`.
    bins: Vec<Vec<u32>>,
}

impl Binned {
    fn new(rows: &[Vec<f64>], width: usize) -> Self {
        let n = rows.len();
        let mut values = Vec::with_capacity(width);
        let mut bins = Vec::with_capacity(width);
        for f in 0..width {
            let mut v: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let b = rows
                .iter()
                .map(|r| v.binary_search_by(|p| p.total_cmp(&r[f])).unwrap() as u32)
                .collect();
            values.push(v);
            bins.push(b);
        }
        Binned { n, values, bins }
    }
}

#[derive(Clone, Copy, Debug)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: u32,
}

/// Best split of the samples `idx`, or `None` when nothing gains.
fn best_split(
    data: &Binned,
    idx: &[u32],
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    min_leaf: usize,
    scratch: &mut Vec<(f64, f64, u32)>,
) -> Option<SplitCandidate> {
    if idx.len() < 2 * min_leaf {
        return None;
    }
    let (mut g_tot, mut h_tot) = (0.0, 0.0);
    for &i in idx {
        g_tot += grad[i as usize];
        h_tot += hess[i as usize];
    }
    let parent = g_tot * g_tot / (h_tot + lambda);
    let n_tot = idx.len();
    let mut best: Option<SplitCandidate> = None;
    for (f, values) in data.values.iter().enumerate() {
        if values.len() < 2 {
            continue;
        }
        scratch.clear();
        scratch.resize(values.len(), (0.0, 0.0, 0));
        let bins = &data.bins[f];
        for &i in idx {
            let slot = &mut scratch[bins[i as usize] as usize];
            slot.0 += grad[i as usize];
            slot.1 += hess[i as usize];
            slot.2 += 1;
        }
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
        for (b, &(g, h, k)) in scratch.iter().enumerate().take(values.len() - 1) {
            if k == 0 {
                continue;
            }
            gl += g;
            hl += h;
            nl += k as usize;
            let nr = n_tot - nl;
            if nl < min_leaf {
                continue;
            }
            if nr < min_leaf {
                break;
            }
            let gr = g_tot - gl;
            let hr = h_tot - hl;
            let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
            if gain > 0.0 && best.is_none_or(|bst| gain > bst.gain) {
                best = Some(SplitCandidate {
                    gain,
                    feature: f,
                    bin: b as u32,
                });
            }
        }
    }
    best
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn objective_value(obj: Objective, scores: &[f64], labels: &[f64]) -> f64 {
    let n = labels.len() as f64;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&f, &y)| match obj {
            Objective::L2 => (f - y) * (f - y),
            Objective::L1 => (f - y).abs(),
            Objective::Poisson => f.exp() - y * f,
        })
        .sum();
    total / n
}

struct Grown {
    tree: Tree,
    /// Leaf node id reached by each training sample.
    leaf_of: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn grow_tree(
    data: &Binned,
    grad: &[f64],
    hess: &[f64],
    scores: &[f64],
    labels: &[f64],
    spec: &GbtSpec,
    scratch: &mut Vec<(f64, f64, u32)>,
) -> Grown {
    struct Open {
        node: usize,
        idx: Vec<u32>,
        split: Option<SplitCandidate>,
    }
    let lambda = spec.l2_reg;
    let root_idx: Vec<u32> = (0..data.n as u32).collect();
    let root_split = best_split(data, &root_idx, grad, hess, lambda, spec.min_samples_leaf, scratch);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut open = vec![Open {
        node: 0,
        idx: root_idx,
        split: root_split,
    }];
    let mut leaves = 1;

    while leaves < spec.num_leaves {
        // Largest gain; the earliest-created leaf wins ties.
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(k, o)| o.split.map(|s| (k, s.gain)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)));
        let Some((k, _)) = pick else { break };
        let leaf = open.remove(k);
        let split = leaf.split.unwrap();
        let bins = &data.bins[split.feature];
        let (left_idx, right_idx): (Vec<u32>, Vec<u32>) =
            leaf.idx.iter().partition(|&&i| bins[i as usize] <= split.bin);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: data.values[split.feature][split.bin as usize],
            left,
            right,
        };
        for (node, idx) in [(left, left_idx), (right, right_idx)] {
            let split = best_split(data, &idx, grad, hess, lambda, spec.min_samples_leaf, scratch);
            open.push(Open { node, idx, split });
        }
        leaves += 1;
    }

    let mut leaf_of = vec![0usize; data.n];
    for o in &open {
        let value = match spec.objective {
            Objective::L1 => {
                let mut r: Vec<f64> = o
                    .idx
                    .iter()
                    .map(|&i| labels[i as usize] - scores[i as usize])
                    .collect();
                median(&mut r)
            }
            Objective::L2 | Objective::Poisson => {
                let (g, h) = o.idx.iter().fold((0.0, 0.0), |(g, h), &i| {
                    (g + grad[i as usize], h + hess[i as usize])
                });
                -g / (h + lambda)
            }
        };
        nodes[o.node] = Node::Leaf {
            value: value * spec.learning_rate,
        };
        for &i in &o.idx {
            leaf_of[i as usize] = o.node;
        }
    }
    Grown {
        tree: Tree { nodes },
        leaf_of,
    }
}

pub fn gbt_train(train: &[LabeledRecord], spec: &GbtSpec) -> Result<GbtModel> {
    spec.validate()?;
    let c = dimension(train)?;
    let labels: Vec<f64> = train.iter().map(|r| r.wait_s).collect();
    let base_score = match spec.objective {
        Objective::L2 => labels.iter().sum::<f64>() / labels.len() as f64,
        Objective::L1 => median(&mut labels.clone()),
        Objective::Poisson => {
            if let Some(bad) = labels.iter().find(|&&y| !(y > 0.0)) {
                return Err(Error::Domain(format!(
                    "poisson objective needs positive labels, found {bad}"
                )));
            }
            (labels.iter().sum::<f64>() / labels.len() as f64).ln()
        }
    };
    let width = spec.feature_mode.width(c);
    let rows: Vec<Vec<f64>> = train
        .iter()
        .map(|r| spec.feature_mode.features(&r.setting))
        .collect();
    let data = Binned::new(&rows, width);

    let n = train.len();
    let mut scores = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(spec.num_trees);
    let mut history = Vec::with_capacity(spec.num_trees);
    let mut scratch = Vec::new();

    for _ in 0..spec.num_trees {
        for i in 0..n {
            let (f, y) = (scores[i], labels[i]);
            (grad[i], hess[i]) = match spec.objective {
                Objective::L2 => (f - y, 1.0),
                Objective::L1 => ((f - y).signum() * f64::from(u8::from(f != y)), 1.0),
                Objective::Poisson => (f.exp() - y, f.exp()),
            };
        }
        let grown = grow_tree(&data, &grad, &hess, &scores, &labels, spec, &mut scratch);
        for (s, &leaf) in scores.iter_mut().zip(&grown.leaf_of) {
            if let Node::Leaf { value } = grown.tree.nodes[leaf] {
                *s += value;
            }
        }
        history.push(objective_value(spec.objective, &scores, &labels));
        trees.push(grown.tree);
    }

    Ok(GbtModel {
        spec: spec.clone(),
        n_intersections: c,
        base_score,
        trees,
        objective_history: history,
    })
}

impl GbtModel {
    /// Prediction in the objective's link space (log space for poisson).
    pub fn raw_score(&self, setting: &SignalSetting) -> Result<f64> {
        setting.check_len(self.n_intersections)?;
        let x = self.spec.feature_mode.features(setting);
        Ok(self.base_score + self.trees.iter().map(|t| t.predict(&x)).sum::<f64>())
    }

    /// Per-tree outputs in link space, in boosting order.
    pub fn contributions(&self, setting: &SignalSetting) -> Result<Vec<f64>> {
        setting.check_len(self.n_intersections)?;
        let x = self.spec.feature_mode.features(setting);
        Ok(self.trees.iter().map(|t| t.predict(&x)).collect())
    }

    pub fn predict(&self, setting: &SignalSetting) -> Result<f64> {
        let raw = self.raw_score(setting)?;
        Ok(match self.spec.objective {
            Objective::Poisson => raw.exp(),
            _ => raw,
        })
    }
}
