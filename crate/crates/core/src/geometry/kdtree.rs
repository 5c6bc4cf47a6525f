//! Static 3-D KD-tree for exact nearest-neighbor queries.
//!
//! Squared distances are computed with the same expression as
//! [`nearest_bruteforce`](super::nearest_bruteforce) and ties resolve to the
//! lowest point index, so results match the brute-force scan exactly.

use super::{dist2, Point3};

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let pts = self.points;
        let slice = &mut self.order[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            for k in 0..3 {
                lo[k] = lo[k].min(pts[i][k]);
                hi[k] = hi[k].max(pts[i][k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[slice[mid]][axis];

        self.nodes.push(Node::Leaf { start, end }); // placeholder
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point index and squared distance, or `None` for an empty tree.
    pub fn nearest(&self, query: &Point3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equidistant candidates reachable for the index tie-break.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::nearest_bruteforce;
    use rand::Rng;

    #[test]
    fn matches_bruteforce_including_ties() {
        let mut rng = crate::rng::rng_for(1, &[]);
        for trial in 0..50 {
            let n = rng.random_range(1..300);
            // A coarse lattice makes exact ties common.
            let coarse = trial % 2 == 0;
            let gen = |rng: &mut rand_chacha::ChaCha8Rng| -> Point3 {
                if coarse {
                    [
                        rng.random_range(-3..=3) as f64,
                        rng.random_range(-3..=3) as f64,
                        rng.random_range(-3..=3) as f64,
                    ]
                } else {
                    [rng.random(), rng.random(), rng.random()]
                }
            };
            let pts: Vec<Point3> = (0..n).map(|_| gen(&mut rng)).collect();
            let tree = KdTree::new(&pts);
            for _ in 0..100 {
                let q = gen(&mut rng);
                assert_eq!(tree.nearest(&q), Some(nearest_bruteforce(&q, &pts)));
            }
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&[0.0; 3]).is_none());
    }
}
