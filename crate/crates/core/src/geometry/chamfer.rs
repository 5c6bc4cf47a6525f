use super::{dist2, Point3};

/// Index and squared distance of the nearest point, scanning in index order
/// (ties resolve to the lowest index).
pub fn nearest_bruteforce(query: &Point3, points: &[Point3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(query, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// O(N·M) symmetric chamfer distance: mean squared nearest distance from `a`
/// to `b` plus the same from `b` to `a`. Sums run in index order.
///
/// Panics if either set is empty.
pub fn chamfer_bruteforce(a: &[Point3], b: &[Point3]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "chamfer of an empty set");
    let one_way = |from: &[Point3], to: &[Point3]| {
        let sum: f64 = from.iter().map(|p| nearest_bruteforce(p, to).1).sum();
        sum / from.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_eq!(chamfer_bruteforce(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]), 2.0);
        let x = [[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        assert_eq!(chamfer_bruteforce(&x, &x), 0.0);
        // a = {0, 2} on a line, b = {0}: a->b = (0 + 4)/2, b->a = 0
        assert_eq!(
            chamfer_bruteforce(&[[0.0; 3], [2.0, 0.0, 0.0]], &[[0.0; 3]]),
            2.0
        );
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pts = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(nearest_bruteforce(&[0.0; 3], &pts), (0, 1.0));
    }

    fn cloud() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..40)
    }

    proptest! {
        #[test]
        fn symmetric_nonnegative_permutation_invariant(a in cloud(), b in cloud(), seed in any::<u64>()) {
            let ab = chamfer_bruteforce(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - chamfer_bruteforce(&b, &a)).abs() <= 1e-12 * ab.max(1.0));
            let mut shuffled = b.clone();
            let n = shuffled.len();
            for i in (1..n).rev() {
                let j = (crate::rng::mix64(seed ^ i as u64) % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let c = chamfer_bruteforce(&a, &shuffled);
            prop_assert!((ab - c).abs() <= 1e-12 * ab.max(1.0));
            prop_assert_eq!(chamfer_bruteforce(&a, &a), 0.0);
        }
    }
}
