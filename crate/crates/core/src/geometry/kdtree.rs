use std::collections::BinaryHeap;

use super::{cmp_candidates, dist2, Point3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3-D kd-tree answering exact kNN queries.
///
/// Results are ordered by `(distance, index)` so they coincide with a sorted
/// brute-force scan, including on ties.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate(f64, usize);

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        cmp_candidates((self.0, self.1), (other.0, other.1))
    }
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    /// The `k` nearest `(squared distance, index)` pairs to `query`, nearest
    /// first. `skip` removes one index from consideration.
    pub fn nearest(&self, query: &Point3, k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, skip, &mut heap);
        heap.into_sorted_vec().into_iter().map(|c| (c.0, c.1)).collect()
    }

    fn search(
        &self,
        node: usize,
        query: &Point3,
        k: usize,
        skip: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == skip {
                        continue;
                    }
                    let cand = Candidate(dist2(query, &self.points[i]), i);
                    if heap.len() < k {
                        heap.push(cand);
                    } else if heap.peek().is_some_and(|worst| cand < *worst) {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, skip, heap);
                // Equality must still descend: an equidistant point with a
                // lower index may live on the far side.
                let full = heap.len() == k;
                if !full || heap.peek().is_some_and(|w| diff * diff <= w.0) {
                    self.search(far, query, k, skip, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_with_many_ties() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let tree = KdTree::build(&pts);
        for (q, p) in pts.iter().enumerate() {
            for k in [1, 7, 19, 125] {
                let got = tree.nearest(p, k, None);
                let mut all: Vec<(f64, usize)> =
                    pts.iter().enumerate().map(|(i, o)| (dist2(p, o), i)).collect();
                all.sort_by(|a, b| cmp_candidates(*a, *b));
                all.truncate(k);
                assert_eq!(got, all, "query {q} k {k}");
            }
        }
    }

    #[test]
    fn skip_removes_one_index() {
        let pts = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let tree = KdTree::build(&pts);
        let got: Vec<usize> = tree.nearest(&pts[0], 2, Some(0)).into_iter().map(|c| c.1).collect();
        assert_eq!(got, vec![1, 2]);
    }
}
