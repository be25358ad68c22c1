//! Random-hyperplane tree forest for range queries over unit vectors.
//!
//! Each split stores a unit normal and offset, so the distance from a query
//! to the hyperplane lower-bounds its distance to every point on the far
//! side. The range query is a best-first search keyed on that bound which
//! stops once the smallest pending bound reaches the radius; only the probe
//! budget can make it inexact.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LEAF_SIZE: usize = 8;
const SPLIT_ATTEMPTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnConfig {
    pub trees: usize,
    /// Probe budget is `probe_factor × n`, capped at `probe_cap` distance evaluations.
    pub probe_factor: usize,
    pub probe_cap: usize,
    /// Stores smaller than this are scanned exhaustively.
    pub exhaustive_below: usize,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            trees: 16,
            probe_factor: 4,
            probe_cap: 1000,
            exhaustive_below: 200,
            seed: 0xA77,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf(Vec<u32>),
    Split {
        normal: Vec<f64>,
        offset: f64,
        below: u32,
        above: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<TreeNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnIndex {
    config: AnnConfig,
    len: usize,
    trees: Vec<Tree>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn build_node(
    points: &[Vec<f64>],
    ids: Vec<u32>,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<TreeNode>,
) -> u32 {
    let me = nodes.len() as u32;
    nodes.push(TreeNode::Leaf(Vec::new()));
    if ids.len() > LEAF_SIZE {
        for _ in 0..SPLIT_ATTEMPTS {
            let pair: Vec<&u32> = ids.choose_multiple(rng, 2).collect();
            let (p, q) = (&points[*pair[0] as usize], &points[*pair[1] as usize]);
            let mut normal: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
            let norm = dot(&normal, &normal).sqrt();
            if norm < 1e-12 {
                continue;
            }
            normal.iter_mut().for_each(|x| *x /= norm);
            let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            let offset = dot(&normal, &mid);
            let (above, below): (Vec<u32>, Vec<u32>) = ids
                .iter()
                .partition(|&&i| dot(&normal, &points[i as usize]) - offset >= 0.0);
            if above.is_empty() || below.is_empty() {
                continue;
            }
            let b = build_node(points, below, rng, nodes);
            let a = build_node(points, above, rng, nodes);
            nodes[me as usize] = TreeNode::Split {
                normal,
                offset,
                below: b,
                above: a,
            };
            return me;
        }
    }
    nodes[me as usize] = TreeNode::Leaf(ids);
    me
}

#[derive(PartialEq)]
struct Pending {
    bound: f64,
    tree: usize,
    node: u32,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on bound; ties broken by (tree, node) for determinism.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl AnnIndex {
    pub fn build(points: &[Vec<f64>], config: AnnConfig) -> Self {
        let mut trees = Vec::new();
        if points.len() >= config.exhaustive_below {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            for _ in 0..config.trees {
                let mut nodes = Vec::new();
                build_node(
                    points,
                    (0..points.len() as u32).collect(),
                    &mut rng,
                    &mut nodes,
                );
                trees.push(Tree { nodes });
            }
        }
        AnnIndex {
            config,
            len: points.len(),
            trees,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_exhaustive(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn probe_budget(&self) -> usize {
        (self.config.probe_factor * self.len).min(self.config.probe_cap)
    }

    /// All `(id, distance)` with distance strictly below `radius`, sorted by
    /// distance then id. `points` must be the vectors the index was built on.
    pub fn range(&self, points: &[Vec<f64>], query: &[f64], radius: f64) -> Vec<(usize, f64)> {
        debug_assert_eq!(points.len(), self.len);
        let mut hits = Vec::new();
        if self.is_exhaustive() {
            for (i, p) in points.iter().enumerate() {
                let d = euclidean(p, query);
                if d < radius {
                    hits.push((i, d));
                }
            }
        } else {
            let budget = self.probe_budget();
            let mut seen: HashSet<u32> = HashSet::new();
            let mut heap: BinaryHeap<Pending> = (0..self.trees.len())
                .map(|tree| Pending {
                    bound: 0.0,
                    tree,
                    node: 0,
                })
                .collect();
            'search: while let Some(Pending { bound, tree, node }) = heap.pop() {
                if bound >= radius {
                    break;
                }
                match &self.trees[tree].nodes[node as usize] {
                    TreeNode::Leaf(ids) => {
                        for &id in ids {
                            if seen.contains(&id) {
                                continue;
                            }
                            if seen.len() >= budget {
                                break 'search;
                            }
                            seen.insert(id);
                            let d = euclidean(&points[id as usize], query);
                            if d < radius {
                                hits.push((id as usize, d));
                            }
                        }
                    }
                    TreeNode::Split {
                        normal,
                        offset,
                        below,
                        above,
                    } => {
                        let m = dot(normal, query) - offset;
                        let (near, far) = if m >= 0.0 {
                            (*above, *below)
                        } else {
                            (*below, *above)
                        };
                        heap.push(Pending {
                            bound,
                            tree,
                            node: near,
                        });
                        heap.push(Pending {
                            bound: bound.max(m.abs()),
                            tree,
                            node: far,
                        });
                    }
                }
            }
        }
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        hits
    }
}

/// Brute-force reference for [`AnnIndex::range`].
pub fn exact_range(points: &[Vec<f64>], query: &[f64], radius: f64) -> Vec<(usize, f64)> {
    let mut hits: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, euclidean(p, query)))
        .filter(|(_, d)| *d < radius)
        .collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn unit_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = dot(&v, &v).sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    }

    #[test]
    fn small_stores_are_exhaustive() {
        let pts = unit_points(50, 8, 1);
        let idx = AnnIndex::build(&pts, AnnConfig::default());
        assert!(idx.is_exhaustive());
        assert_eq!(idx.range(&pts, &pts[3], 1e-9), vec![(3, 0.0)]);
    }

    #[test]
    fn forest_matches_brute_force() {
        let pts = unit_points(400, 16, 2);
        let idx = AnnIndex::build(&pts, AnnConfig::default());
        assert!(!idx.is_exhaustive());
        let queries = unit_points(200, 16, 3);
        for (k, q) in queries.iter().enumerate() {
            let r = [0.3, 0.8, 1.1, 1.3][k % 4];
            assert_eq!(idx.range(&pts, q, r), exact_range(&pts, q, r));
        }
    }

    #[test]
    fn build_is_deterministic_and_serializable() {
        let pts = unit_points(250, 8, 4);
        let a = AnnIndex::build(&pts, AnnConfig::default());
        let b = AnnIndex::build(&pts, AnnConfig::default());
        assert_eq!(a, b);
        let back: AnnIndex = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn duplicate_points_do_not_loop() {
        let pts = vec![vec![1.0, 0.0]; 300];
        let idx = AnnIndex::build(&pts, AnnConfig::default());
        assert_eq!(idx.range(&pts, &[1.0, 0.0], 0.1).len(), 300);
    }
}
