//! Incremental kd-tree over points of a fixed dimension.
//!
//! Points are only ever appended; the tree is not rebalanced. Ties in
//! nearest-neighbour queries resolve to the smallest id.

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct KdNode {
    left: u32,
    right: u32,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    ids: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "kd-tree dimension must be positive");
        Self {
            dim,
            coords: Vec::new(),
            ids: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn point(&self, slot: usize) -> &[f64] {
        &self.coords[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn insert(&mut self, point: &[f64], id: usize) {
        assert_eq!(point.len(), self.dim, "point dimension mismatch");
        let slot = self.nodes.len() as u32;
        self.coords.extend_from_slice(point);
        self.ids.push(id);
        self.nodes.push(KdNode {
            left: NONE,
            right: NONE,
        });
        if slot == 0 {
            return;
        }
        let mut cur = 0usize;
        let mut depth = 0usize;
        loop {
            let axis = depth % self.dim;
            let go_left = point[axis] < self.coords[cur * self.dim + axis];
            let next = if go_left {
                self.nodes[cur].left
            } else {
                self.nodes[cur].right
            };
            if next == NONE {
                if go_left {
                    self.nodes[cur].left = slot;
                } else {
                    self.nodes[cur].right = slot;
                }
                return;
            }
            cur = next as usize;
            depth += 1;
        }
    }

    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// Nearest stored point as `(id, squared distance)`.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, 0, query, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, slot: usize, depth: usize, q: &[f64], best: &mut (usize, f64)) {
        let p = self.point(slot);
        let d2 = Self::dist2(p, q);
        let id = self.ids[slot];
        if d2 < best.1 || (d2 == best.1 && id < best.0) {
            *best = (id, d2);
        }
        let axis = depth % self.dim;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            (self.nodes[slot].left, self.nodes[slot].right)
        } else {
            (self.nodes[slot].right, self.nodes[slot].left)
        };
        if near != NONE {
            self.nearest_rec(near as usize, depth + 1, q, best);
        }
        if far != NONE && delta * delta <= best.1 {
            self.nearest_rec(far as usize, depth + 1, q, best);
        }
    }

    /// Ids of all points within `radius` (inclusive), in ascending id order.
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<usize> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.radius_rec(0, 0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, slot: usize, depth: usize, q: &[f64], r2: f64, out: &mut Vec<usize>) {
        let p = self.point(slot);
        if Self::dist2(p, q) <= r2 {
            out.push(self.ids[slot]);
        }
        let axis = depth % self.dim;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            (self.nodes[slot].left, self.nodes[slot].right)
        } else {
            (self.nodes[slot].right, self.nodes[slot].left)
        };
        if near != NONE {
            self.radius_rec(near as usize, depth + 1, q, r2, out);
        }
        if far != NONE && delta * delta <= r2 {
            self.radius_rec(far as usize, depth + 1, q, r2, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(points: &[Vec<f64>], q: &[f64]) -> (usize, f64) {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, KdTree::dist2(p, q)))
            .fold((usize::MAX, f64::INFINITY), |best, c| {
                if c.1 < best.1 || (c.1 == best.1 && c.0 < best.0) {
                    c
                } else {
                    best
                }
            })
    }

    #[test]
    fn empty_tree() {
        let t = KdTree::new(2);
        assert!(t.nearest(&[0.0, 0.0]).is_none());
        assert!(t.within_radius(&[0.0, 0.0], 1.0).is_empty());
    }

    #[test]
    fn exact_hit() {
        let mut t = KdTree::new(2);
        t.insert(&[1.0, 1.0], 7);
        t.insert(&[3.0, 0.0], 9);
        assert_eq!(t.nearest(&[3.0, 0.0]), Some((9, 0.0)));
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..120),
            q in prop::collection::vec(-6.0f64..6.0, 3),
            r in 0.0f64..4.0,
        ) {
            let mut t = KdTree::new(3);
            for (i, p) in pts.iter().enumerate() {
                t.insert(p, i);
            }
            let (id, d2) = t.nearest(&q).unwrap();
            let (bid, bd2) = brute_nearest(&pts, &q);
            prop_assert_eq!(d2, bd2);
            prop_assert_eq!(id, bid);
            let mut brute: Vec<usize> = pts
                .iter()
                .enumerate()
                .filter(|(_, p)| KdTree::dist2(p, &q) <= r * r)
                .map(|(i, _)| i)
                .collect();
            brute.sort_unstable();
            prop_assert_eq!(t.within_radius(&q, r), brute);
        }
    }
}
