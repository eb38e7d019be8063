//! Discrete distribution over a growing set of items with updatable weights
//! (Fenwick tree of prefix sums).

use rand::Rng;

#[derive(Debug, Clone, Default)]
pub struct WeightTree {
    weights: Vec<f64>,
    tree: Vec<f64>,
    total: f64,
}

impl WeightTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.weights[i] / self.total
    }

    pub fn push(&mut self, w: f64) {
        assert!(w >= 0.0 && w.is_finite(), "weights must be finite and non-negative");
        let i = self.weights.len();
        self.weights.push(0.0);
        // fenwick node i+1 covers (i+1 - lowbit(i+1), i+1]
        let idx = i + 1;
        let low = idx & idx.wrapping_neg();
        let mut covered = 0.0;
        let mut j = idx - 1;
        while j > idx - low {
            covered += self.tree[j - 1];
            j -= j & j.wrapping_neg();
        }
        self.tree.push(covered);
        self.add(i, w);
    }

    pub fn set(&mut self, i: usize, w: f64) {
        assert!(w >= 0.0 && w.is_finite(), "weights must be finite and non-negative");
        let delta = w - self.weights[i];
        self.add(i, delta);
    }

    fn add(&mut self, i: usize, delta: f64) {
        self.weights[i] += delta;
        self.total += delta;
        let mut idx = i + 1;
        while idx <= self.tree.len() {
            self.tree[idx - 1] += delta;
            idx += idx & idx.wrapping_neg();
        }
    }

    /// Smallest index whose prefix sum exceeds `target`.
    pub fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len();
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next - 1] <= target {
                target -= self.tree[next - 1];
                pos = next;
            }
            step >>= 1;
        }
        // skip zero-weight tail caused by round-off
        let mut i = pos.min(n - 1);
        while self.weights[i] <= 0.0 && i > 0 {
            i -= 1;
        }
        i
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.weights.is_empty() || self.total <= 0.0 {
            return None;
        }
        Some(self.find(rng.random::<f64>() * self.total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prefix_lookup() {
        let mut t = WeightTree::new();
        for w in [1.0, 0.0, 2.0, 3.0, 0.5] {
            t.push(w);
        }
        assert_eq!(t.total(), 6.5);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.99), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(6.4), 4);
        t.set(2, 0.0);
        assert_eq!(t.find(1.5), 3);
    }

    #[test]
    fn frequencies_follow_weights() {
        let mut t = WeightTree::new();
        t.push(1.0);
        t.push(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let hits = (0..n).filter(|_| t.sample(&mut rng) == Some(1)).count();
        let p = 0.75;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sd);
    }

    #[test]
    fn pushes_match_naive_prefix_sums() {
        let mut t = WeightTree::new();
        let ws: Vec<f64> = (0..37).map(|i| ((i * 7) % 5) as f64 + 0.25).collect();
        for &w in &ws {
            t.push(w);
        }
        let mut acc = 0.0;
        for (i, &w) in ws.iter().enumerate() {
            assert_eq!(t.find(acc + 0.5 * w), i);
            acc += w;
        }
    }
}
