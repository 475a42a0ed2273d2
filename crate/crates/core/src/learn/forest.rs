//! Random forest of CART trees with Gini splits.
//!
//! Every node draws its feature subset from a seed derived from its path in
//! the tree, so a depth-limited tree is exactly a prefix of a deeper one.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{BinReader, BinWriter};

use super::svm::validate_training;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().round() as usize).max(1),
            MaxFeatures::All => n_features,
            MaxFeatures::Count(n) => n.clamp(1, n_features),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Class counts (over class positions) of the in-bag samples reaching it.
    Leaf { counts: Vec<u32> },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Class position with the most in-bag samples; ties go to the lowest.
    pub fn predict_position(&self, x: &[f64]) -> usize {
        argmax_counts(self.leaf(x))
    }
}

fn argmax_counts(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfModel {
    pub classes: Vec<usize>,
    pub trees: Vec<Tree>,
    pub config: RfConfig,
    pub n_features: usize,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    splitmix(seed ^ splitmix(tree as u64))
}

/// In-bag sample indices (with repetition) of tree `tree`.
pub fn bootstrap_indices(seed: u64, tree: usize, m: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, tree));
    (0..m).map(|_| rng.random_range(0..m)).collect()
}

fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    n_classes: usize,
    max_features: usize,
    config: &'a RfConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, samples: Vec<usize>, depth: usize, node_seed: u64) -> usize {
        let mut counts = vec![0u32; self.n_classes];
        for &s in &samples {
            counts[self.y[s]] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || samples.len() < self.config.min_samples_split.max(2) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&samples, &counts, node_seed) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&s| self.x[[s, feature]] <= threshold);
        let left = self.build(l, depth + 1, splitmix(node_seed ^ 1));
        let right = self.build(r, depth + 1, splitmix(node_seed ^ 2));
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, samples: &[usize], counts: &[u32], node_seed: u64) -> Option<(usize, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(node_seed);
        let features = index::sample(&mut rng, self.x.ncols(), self.max_features).into_vec();
        let total = samples.len() as u32;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
        for &f in &features {
            sorted.clear();
            sorted.extend(samples.iter().map(|&s| (self.x[[s, f]], self.y[s])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0u32; self.n_classes];
            for i in 0..sorted.len() - 1 {
                left[sorted[i].1] += 1;
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let nl = i as u32 + 1;
                let nr = total - nl;
                let right: Vec<u32> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / total as f64;
                if best.is_none_or(|(b, _, _)| score < b) {
                    let threshold = 0.5 * (sorted[i].0 + sorted[i + 1].0);
                    best = Some((score, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

pub fn rf_train(x: ArrayView2<f64>, y: &[usize], cfg: &RfConfig) -> Result<RfModel> {
    let classes = validate_training(x, y)?;
    if cfg.n_trees == 0 {
        return Err(Error::InvalidArgument("a forest needs at least one tree".into()));
    }
    let x = x.as_standard_layout().into_owned();
    let positions: Vec<usize> = y.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let max_features = cfg.max_features.resolve(x.ncols());
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let samples = bootstrap_indices(cfg.seed, t, x.nrows());
            let mut b = Builder {
                x: &x,
                y: &positions,
                n_classes: classes.len(),
                max_features,
                config: cfg,
                nodes: Vec::new(),
            };
            b.build(samples, 0, splitmix(tree_seed(cfg.seed, t) ^ 0x5eed));
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(RfModel {
        classes,
        trees,
        config: *cfg,
        n_features: x.ncols(),
    })
}

impl RfModel {
    /// Fraction of trees voting for each class.
    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        let x = x.as_standard_layout();
        let c = self.classes.len();
        let n_trees = self.trees.len() as f64;
        let mut out = Array2::zeros((x.nrows(), c));
        for (i, row) in x.rows().into_iter().enumerate() {
            let row = row.as_slice().unwrap();
            for t in &self.trees {
                out[[i, t.predict_position(row)]] += 1.0;
            }
        }
        out.mapv_inplace(|v| v / n_trees);
        Ok(out)
    }

    /// Majority vote over trees; ties go to the lowest class.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let votes = self.decision_values(x)?;
        Ok(super::argmax_rows(&votes)
            .into_iter()
            .map(|p| self.classes[p])
            .collect())
    }

    pub(crate) fn write(&self, w: &mut BinWriter) {
        w.u64(self.config.n_trees as u64);
        w.u64(self.config.max_depth.map_or(u64::MAX, |d| d as u64));
        match self.config.max_features {
            MaxFeatures::Sqrt => w.u64(0),
            MaxFeatures::All => w.u64(1),
            MaxFeatures::Count(n) => {
                w.u64(2);
                w.u64(n as u64);
            }
        }
        w.u64(self.config.min_samples_split as u64);
        w.u64(self.config.seed);
        w.u32(self.n_features as u32);
        w.u32(self.classes.len() as u32);
        self.classes.iter().for_each(|&c| w.u32(c as u32));
        w.u32(self.trees.len() as u32);
        for t in &self.trees {
            w.u32(t.nodes.len() as u32);
            for n in &t.nodes {
                match n {
                    Node::Leaf { counts } => {
                        w.u8(0);
                        counts.iter().for_each(|&c| w.u32(c));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.u8(1);
                        w.u32(*feature as u32);
                        w.f64(*threshold);
                        w.u32(*left as u32);
                        w.u32(*right as u32);
                    }
                }
            }
        }
    }

    pub(crate) fn read(r: &mut BinReader<'_>) -> Result<Self> {
        let n_trees = r.u64("trees")? as usize;
        let max_depth = match r.u64("max depth")? {
            u64::MAX => None,
            d => Some(d as usize),
        };
        let max_features = match r.u64("max features")? {
            0 => MaxFeatures::Sqrt,
            1 => MaxFeatures::All,
            2 => MaxFeatures::Count(r.u64("max features")? as usize),
            t => return Err(Error::Format(format!("unknown max-features tag {t}"))),
        };
        let config = RfConfig {
            n_trees,
            max_depth,
            max_features,
            min_samples_split: r.u64("min samples")? as usize,
            seed: r.u64("seed")?,
        };
        let n_features = r.u32("features")? as usize;
        let n_classes = r.u32("classes")? as usize;
        let classes = (0..n_classes)
            .map(|_| r.u32("class").map(|c| c as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = r.u32("tree count")? as usize;
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32("node count")? as usize;
            let mut nodes = Vec::with_capacity(n);
            for _ in 0..n {
                nodes.push(match r.u8("node tag")? {
                    0 => Node::Leaf {
                        counts: (0..n_classes).map(|_| r.u32("count")).collect::<Result<Vec<_>>>()?,
                    },
                    1 => Node::Split {
                        feature: r.u32("feature")? as usize,
                        threshold: r.f64("threshold")?,
                        left: r.u32("left")? as usize,
                        right: r.u32("right")? as usize,
                    },
                    t => return Err(Error::Format(format!("unknown node tag {t}"))),
                });
            }
            trees.push(Tree { nodes });
        }
        Ok(RfModel {
            classes,
            trees,
            config,
            n_features,
        })
    }
}
