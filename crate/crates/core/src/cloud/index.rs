use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{dist2, Point};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// k-d tree over a snapshot of points.
///
/// Query results are exactly those of a linear scan: k-NN ties are broken by
/// the smaller point id, radius queries are inclusive and sorted by id.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl SpatialIndex {
    pub fn new(points: &[Point]) -> Self {
        let mut index = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    /// The `k` nearest points as `(id, distance)`, nearest first.
    pub fn knn(&self, query: &Point, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.id, c.d2.sqrt()))
            .collect()
    }

    fn knn_rec(&self, node: usize, q: &Point, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let c = Candidate {
                        d2: dist2(q, &self.points[id]),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
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
                self.knn_rec(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.d2) {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// Ids of all points within distance `radius` (inclusive), ascending.
    pub fn radius_search(&self, query: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() && radius >= 0.0 {
            self.radius_rec(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, q: &Point, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => out.extend(
                self.order[start..end]
                    .iter()
                    .copied()
                    .filter(|&id| dist2(q, &self.points[id]) <= r2),
            ),
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_rec(far, q, r2, out);
                }
            }
        }
    }
}
