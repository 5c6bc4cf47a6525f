use crate::geometry::{KdTree, Point3};

/// Nearest-neighbor assignment behind one chamfer evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChamferMatch {
    pub value: f64,
    /// For each predicted point, index of its nearest target point.
    pub pred_nn: Vec<usize>,
    /// For each target point, index of its nearest predicted point.
    pub target_nn: Vec<usize>,
}

/// KD-tree accelerated chamfer distance. Produces the same value as
/// [`chamfer_bruteforce`](crate::geometry::chamfer_bruteforce): identical
/// distance expressions, lowest-index tie-break and index-ordered sums.
pub fn chamfer_forward(pred: &[Point3], target: &[Point3]) -> ChamferMatch {
    assert!(!pred.is_empty() && !target.is_empty(), "chamfer of an empty set");
    let one_way = |from: &[Point3], to: &[Point3]| -> (f64, Vec<usize>) {
        let tree = KdTree::new(to);
        let mut sum = 0.0;
        let mut nn = Vec::with_capacity(from.len());
        for p in from {
            let (i, d) = tree.nearest(p).expect("non-empty tree");
            sum += d;
            nn.push(i);
        }
        (sum / from.len() as f64, nn)
    };
    let (forward, pred_nn) = one_way(pred, target);
    let (backward, target_nn) = one_way(target, pred);
    ChamferMatch {
        value: forward + backward,
        pred_nn,
        target_nn,
    }
}
