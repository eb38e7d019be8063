//! Cooperative-localization biasing: cloning, distance weighting and
//! re-branching.

use nalgebra::DVector;
use rand::Rng;

use crate::planner::{BeliefTree, RejectCause, SearchContext};

/// Round-robin cursors shared by cloning and re-branching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiasState {
    num_robots: usize,
    clone_cursor: usize,
    target_cursor: usize,
}

impl BiasState {
    pub fn new(num_robots: usize) -> Self {
        assert!(num_robots > 0);
        Self {
            num_robots,
            clone_cursor: 0,
            target_cursor: 0,
        }
    }

    pub fn clone_cursor(&self) -> usize {
        self.clone_cursor
    }

    pub fn target_cursor(&self) -> usize {
        self.target_cursor
    }

    pub fn with_clone_cursor(mut self, robot: usize) -> Self {
        self.clone_cursor = robot % self.num_robots;
        self
    }

    pub fn with_target_cursor(mut self, robot: usize) -> Self {
        self.target_cursor = robot % self.num_robots;
        self
    }

    fn next_clone(&mut self) -> usize {
        let r = self.clone_cursor;
        self.clone_cursor = (r + 1) % self.num_robots;
        r
    }

    fn next_target(&mut self) -> usize {
        let r = self.target_cursor;
        self.target_cursor = (r + 1) % self.num_robots;
        r
    }
}

/// Overwrites every robot's workspace coordinates in `sample` with those of
/// the round-robin source robot. Returns the source.
pub fn clone_sample(sample: &mut [f64], w: usize, state: &mut BiasState) -> usize {
    let src = state.next_clone();
    let (head, tail) = sample.split_at_mut(src * w);
    let source: Vec<f64> = tail[..w].to_vec();
    for chunk in head.chunks_mut(w) {
        chunk.copy_from_slice(&source);
    }
    for chunk in tail[w..].chunks_mut(w) {
        chunk.copy_from_slice(&source);
    }
    src
}

/// `1 / D` with `D` the sum of workspace distances over ordered robot pairs;
/// coincident teams get `cap`.
pub fn distance_weight(positions: &[f64], w: usize, cap: f64) -> f64 {
    let n = positions.len() / w;
    let mut d = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pi = &positions[i * w..(i + 1) * w];
                let pj = &positions[j * w..(j + 1) * w];
                d += pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            }
        }
    }
    if d > 0.0 {
        (1.0 / d).min(cap)
    } else {
        cap
    }
}

/// Node drawn from the distance-weight PDF.
pub fn biased_pdf_sample<R: Rng + ?Sized>(tree: &BeliefTree, rng: &mut R) -> usize {
    tree.sample_weighted(rng)
}

/// Pair chosen for re-branching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairChoice {
    pub node: usize,
    pub robot: usize,
    pub distance: f64,
}

/// Among all nodes at the selected node's time, the `(node, robot)` with
/// `robot != target` whose position is nearest the target robot's position
/// in the selected node. Ties go to the smaller distance, node, then robot.
pub fn find_pair(tree: &BeliefTree, selected: usize, target: usize) -> Option<PairChoice> {
    let time = tree.node(selected).belief.time_index;
    let point = tree.position(selected, target);
    let mut best: Option<(f64, usize, usize)> = None;
    for robot in (0..tree.num_robots()).filter(|&r| r != target) {
        if let Some((node, d2)) = tree.nearest_at(time, robot, point) {
            let c = (d2, node, robot);
            if best.is_none_or(|b| c < b) {
                best = Some(c);
            }
        }
    }
    best.map(|(d2, node, robot)| PairChoice {
        node,
        robot,
        distance: d2.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RebranchOutcome {
    /// A new branch tip was inserted.
    Inserted,
    /// The splice changes nothing; the selected node is returned.
    NoOp,
    /// The spliced branch failed a check; the selected node is returned.
    Rejected(RejectCause),
}

fn path_controls(tree: &BeliefTree, id: usize) -> Vec<DVector<f64>> {
    tree.path(id)
        .into_iter()
        .skip(1)
        .flat_map(|n| tree.node(n).edge.controls.iter().cloned())
        .collect()
}

/// Splices the paired robot's controls from the pair node's path into the
/// selected node's path, re-propagates from the deepest unchanged ancestor
/// and validates every step. Returns the node to extend from.
pub fn rebranch(
    ctx: &SearchContext,
    tree: &mut BeliefTree,
    selected: usize,
    state: &mut BiasState,
) -> (usize, RebranchOutcome) {
    let target = state.next_target();
    let Some(pair) = find_pair(tree, selected, target) else {
        return (selected, RebranchOutcome::NoOp);
    };
    if pair.node == selected {
        return (selected, RebranchOutcome::NoOp);
    }
    let mut controls = path_controls(tree, selected);
    let donor = path_controls(tree, pair.node);
    let rows = ctx.model().control_range(pair.robot);
    let mut first_change = controls.len();
    for (k, (u, d)) in controls.iter_mut().zip(&donor).enumerate() {
        let spliced = d.rows(rows.start, rows.len()).clone_owned();
        if u.rows(rows.start, rows.len()) != spliced {
            first_change = first_change.min(k);
            u.rows_mut(rows.start, rows.len()).copy_from(&spliced);
        }
    }
    if first_change == controls.len() {
        return (selected, RebranchOutcome::NoOp);
    }
    let ancestor = tree
        .path(selected)
        .into_iter()
        .rev()
        .find(|&n| tree.node(n).belief.time_index <= first_change)
        .expect("root has time 0");
    let from = tree.node(ancestor).belief.clone();
    let start = from.time_index;
    let steps = controls.len() - start;
    match ctx.rollout(&from, steps, |s, _| controls[start + s].clone()) {
        Ok(candidate) => (tree.insert(ctx.model(), ancestor, candidate), RebranchOutcome::Inserted),
        Err(cause) => (selected, RebranchOutcome::Rejected(cause)),
    }
}
