//! Static 3-d tree for k-nearest-neighbour and fixed-radius queries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Clone, Copy, Debug)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

pub(crate) struct KdTree<'a> {
    points: &'a [[f64; 3]],
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl<'a> KdTree<'a> {
    pub(crate) fn build(points: &'a [[f64; 3]]) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut tree = Self {
            points,
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        tree.root = tree.build_rec(&mut idx, 0);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let point = idx[mid];
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(&mut rest[1..], depth + 1);
        self.nodes.push(Node {
            point,
            axis,
            left,
            right,
        });
        Some(self.nodes.len() - 1)
    }

    /// The `k` nearest points to `query` as `(index, squared distance)`, nearest first,
    /// skipping the point with index `exclude`.
    pub(crate) fn knn(&self, query: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(self.root, query, k, exclude, &mut heap);
        }
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.index, c.dist2)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(
        &self,
        node: Option<usize>,
        q: &[f64; 3],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let Some(n) = node else { return };
        let node = self.nodes[n];
        let p = &self.points[node.point];
        if Some(node.point) != exclude {
            let cand = Candidate {
                dist2: dist2(p, q),
                index: node.point,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(cand);
            }
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.knn_rec(near, q, k, exclude, heap);
        if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.dist2) {
            self.knn_rec(far, q, k, exclude, heap);
        }
    }

    /// Indices of all points with squared distance to `query` at most `radius2`, sorted.
    pub(crate) fn within(&self, query: &[f64; 3], radius2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.root.into_iter().collect();
        while let Some(n) = stack.pop() {
            let node = self.nodes[n];
            let p = &self.points[node.point];
            if dist2(p, query) <= radius2 {
                out.push(node.point);
            }
            let diff = query[node.axis] - p[node.axis];
            let (near, far) = if diff < 0.0 {
                (node.left, node.right)
            } else {
                (node.right, node.left)
            };
            stack.extend(near);
            if diff * diff <= radius2 {
                stack.extend(far);
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                // Coarse grid values produce plenty of exact ties.
                let mut c = || (rng.random_range(0..20) as f64) * 0.25;
                [c(), c(), c()]
            })
            .collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        for seed in 0..20 {
            let pts = cloud(seed, 150);
            let tree = KdTree::build(&pts);
            for (qi, q) in pts.iter().enumerate().take(30) {
                let got = tree.knn(q, 6, Some(qi));
                let mut brute: Vec<(usize, f64)> = (0..pts.len())
                    .filter(|&j| j != qi)
                    .map(|j| (j, dist2(q, &pts[j])))
                    .collect();
                brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                brute.truncate(6);
                assert_eq!(got, brute);
            }
        }
    }

    #[test]
    fn radius_matches_brute_force() {
        for seed in 0..20 {
            let pts = cloud(seed, 150);
            let tree = KdTree::build(&pts);
            for q in pts.iter().take(30) {
                let brute: Vec<usize> = (0..pts.len()).filter(|&j| dist2(q, &pts[j]) <= 0.5625).collect();
                assert_eq!(tree.within(q, 0.5625), brute);
            }
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::build(&[]);
        assert!(tree.knn(&[0.0; 3], 3, None).is_empty());
        assert!(tree.within(&[0.0; 3], 1.0).is_empty());
    }
}
