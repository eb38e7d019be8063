use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;

use crate::biasing::distance_weight;
use crate::nn::KdTree;
use crate::propagation::{EdgeRecord, ExpectedBelief};
use crate::team::TeamModel;
use crate::validation::Validator;
use crate::weights::WeightTree;

use super::Candidate;

#[derive(Debug, Clone)]
pub struct BeliefNode {
    pub belief: ExpectedBelief,
    /// `Sigma + Lambda`, cached.
    pub gamma: DMatrix<f64>,
    /// Workspace means of all robots, concatenated.
    pub positions: Vec<f64>,
    pub parent: Option<usize>,
    /// Edge from the parent; empty for the root.
    pub edge: EdgeRecord,
    /// Pairs measured on the transition into this node.
    pub arrival_pairs: Vec<usize>,
    /// Other nodes within the EST radius.
    pub neighbors: usize,
    pub distance_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    /// EST neighbourhood radius; `None` skips sparsity bookkeeping.
    pub sparsity_radius: Option<f64>,
    pub weight_cap: f64,
    pub cov_weight: f64,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            sparsity_radius: None,
            weight_cap: 1e6,
            cov_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeliefTree {
    nodes: Vec<BeliefNode>,
    num_robots: usize,
    w: usize,
    options: TreeOptions,
    index: KdTree,
    by_time: BTreeMap<(usize, usize), KdTree>,
    sparsity: WeightTree,
    weights: WeightTree,
}

impl BeliefTree {
    pub fn new(model: &TeamModel, root: ExpectedBelief, options: TreeOptions) -> Self {
        let w = model.workspace_dim();
        let n = model.num_robots();
        let extra = usize::from(options.cov_weight > 0.0);
        let mut tree = Self {
            nodes: Vec::new(),
            num_robots: n,
            w,
            options,
            index: KdTree::new(n * w + extra),
            by_time: BTreeMap::new(),
            sparsity: WeightTree::new(),
            weights: WeightTree::new(),
        };
        tree.push(model, root, None, EdgeRecord::default());
        tree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &BeliefNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[BeliefNode] {
        &self.nodes
    }

    pub fn num_robots(&self) -> usize {
        self.num_robots
    }

    pub fn workspace_dim(&self) -> usize {
        self.w
    }

    /// Workspace position of one robot in one node.
    pub fn position(&self, id: usize, robot: usize) -> &[f64] {
        &self.nodes[id].positions[robot * self.w..(robot + 1) * self.w]
    }

    fn key(&self, positions: &[f64], gamma: &DMatrix<f64>) -> Vec<f64> {
        let mut k = positions.to_vec();
        if self.options.cov_weight > 0.0 {
            k.push(self.options.cov_weight.sqrt() * gamma.trace());
        }
        k
    }

    /// Appends a validated candidate as a child of `parent`; returns its id.
    pub fn insert(&mut self, model: &TeamModel, parent: usize, candidate: Candidate) -> usize {
        let Candidate { mut beliefs, edge } = candidate;
        let tip = beliefs.pop().expect("candidate edges are non-empty");
        self.push(model, tip, Some(parent), edge)
    }

    fn push(&mut self, model: &TeamModel, belief: ExpectedBelief, parent: Option<usize>, edge: EdgeRecord) -> usize {
        let id = self.nodes.len();
        let gamma = belief.gamma();
        let positions = model.workspace_positions(&belief.mean);
        let key = self.key(&positions, &gamma);
        let mut neighbors = 0;
        if let Some(radius) = self.options.sparsity_radius {
            let near = self.index.within_radius(&key, radius);
            neighbors = near.len();
            for n in near {
                self.nodes[n].neighbors += 1;
                self.sparsity.set(n, 1.0 / (1.0 + self.nodes[n].neighbors as f64));
            }
            self.sparsity.push(1.0 / (1.0 + neighbors as f64));
        }
        let weight = distance_weight(&positions, self.w, self.options.weight_cap);
        self.weights.push(weight);
        self.index.insert(&key, id);
        for r in 0..self.num_robots {
            self.by_time
                .entry((belief.time_index, r))
                .or_insert_with(|| KdTree::new(self.w))
                .insert(&positions[r * self.w..(r + 1) * self.w], id);
        }
        self.nodes.push(BeliefNode {
            arrival_pairs: edge.schedule.last().cloned().unwrap_or_default(),
            belief,
            gamma,
            positions,
            parent,
            edge,
            neighbors,
            distance_weight: weight,
        });
        id
    }

    /// Node whose workspace means are nearest to `sample`.
    pub fn nearest(&self, sample: &[f64]) -> usize {
        let mut q = sample.to_vec();
        if self.options.cov_weight > 0.0 {
            q.push(0.0);
        }
        self.index.nearest(&q).expect("tree has a root").0
    }

    /// Nearest node at exactly `time` by one robot's position.
    pub fn nearest_at(&self, time: usize, robot: usize, point: &[f64]) -> Option<(usize, f64)> {
        self.by_time.get(&(time, robot)).and_then(|t| t.nearest(point))
    }

    /// Ids of nodes at exactly `time`.
    pub fn nodes_at(&self, time: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].belief.time_index == time)
            .collect()
    }

    /// Samples a node from the sparsity PDF `1 / (1 + n_r)`.
    pub fn sample_sparse<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.sparsity.is_empty() {
            return rng.random_range(0..self.nodes.len());
        }
        self.sparsity.sample(rng).unwrap_or(0)
    }

    pub fn sparsity_probability(&self, id: usize) -> f64 {
        self.sparsity.probability(id)
    }

    /// Samples a node with probability proportional to its distance weight.
    pub fn sample_weighted<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.weights.sample(rng).unwrap_or(0)
    }

    pub fn weight_probability(&self, id: usize) -> f64 {
        self.weights.probability(id)
    }

    pub fn weight_total(&self) -> f64 {
        self.weights.total()
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut p = vec![id];
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            p.push(parent);
            cur = parent;
        }
        p.reverse();
        p
    }

    /// Nodes that fail the safety checks on re-inspection.
    pub fn invalid_nodes(&self, validator: &Validator) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                let n = &self.nodes[i];
                validator
                    .validate(&n.belief.mean, &n.gamma, &n.arrival_pairs)
                    .is_err()
            })
            .collect()
    }
}
