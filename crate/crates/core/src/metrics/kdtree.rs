//! Static kd-tree over 3D points with deterministic tie-breaking.

/// Squared Euclidean distance.
#[inline]
pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// `(d, i)` beats `(best_d, best_i)`: closer, or equally close with a lower index.
#[inline]
fn better(d: f64, i: usize, best_d: f64, best_i: usize) -> bool {
    d < best_d || (d == best_d && i < best_i)
}

/// Balanced kd-tree stored implicitly: each subtree is a slice of `order`
/// whose middle element splits it along `depth % 3`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn from_points(points: &[crate::geometry::Point]) -> Self {
        KdTree::new(points.iter().map(|p| p.map(f64::from)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Index and squared distance of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(&self.order, 0, q, &mut best);
        Some(best)
    }

    fn nearest_in(&self, slice: &[usize], depth: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = &self.points[idx];
        let d = squared_distance(p, q);
        if better(d, idx, best.1, best.0) {
            *best = (idx, d);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.nearest_in(near, depth + 1, q, best);
        if diff * diff <= best.1 {
            self.nearest_in(far, depth + 1, q, best);
        }
    }

    /// The `k` nearest points sorted by distance then index.
    pub fn k_nearest(&self, q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let mut found = Vec::with_capacity(k + 1);
        if k > 0 {
            self.k_nearest_in(&self.order, 0, q, k, &mut found);
        }
        found
    }

    fn k_nearest_in(
        &self,
        slice: &[usize],
        depth: usize,
        q: &[f64; 3],
        k: usize,
        found: &mut Vec<(usize, f64)>,
    ) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = &self.points[idx];
        let d = squared_distance(p, q);
        let full = found.len() == k;
        if !full || better(d, idx, found[k - 1].1, found[k - 1].0) {
            let pos = found.partition_point(|&(j, dj)| better(dj, j, d, idx));
            found.insert(pos, (idx, d));
            found.truncate(k);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.k_nearest_in(near, depth + 1, q, k, found);
        if found.len() < k || diff * diff <= found[k - 1].1 {
            self.k_nearest_in(far, depth + 1, q, k, found);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, rest) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut rest[1..], depth + 1);
}

/// Linear-scan nearest neighbour with the same tie rule as [`KdTree::nearest`].
pub fn brute_force_nearest(points: &[[f64; 3]], q: &[f64; 3]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = squared_distance(p, q);
        if best.map_or(true, |(bi, bd)| better(d, i, bd, bi)) {
            best = Some((i, d));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(
            prop::array::uniform3(0u32..12).prop_map(|p| p.map(f64::from)),
            1..500,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn nearest_matches_brute_force(points in cloud(), queries in prop::collection::vec(prop::array::uniform3(-2.0f64..14.0), 1..20)) {
            let tree = KdTree::new(points.clone());
            for q in queries.iter().chain(points.iter()) {
                prop_assert_eq!(tree.nearest(q), brute_force_nearest(&points, q));
            }
        }

        #[test]
        fn k_nearest_matches_sorted_scan(points in cloud(), q in prop::array::uniform3(0.0f64..12.0), k in 1usize..12) {
            let tree = KdTree::new(points.clone());
            let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, squared_distance(p, &q))).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            prop_assert_eq!(tree.k_nearest(&q, k), all);
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(Vec::new());
        assert!(tree.nearest(&[0.0; 3]).is_none());
        assert!(tree.k_nearest(&[0.0; 3], 3).is_empty());
    }
}
