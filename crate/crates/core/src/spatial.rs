//! Static 3-d tree over point positions.
//!
//! Queries are exact. Ties between equal distances (or equal costs in
//! [`KdTree::best_by`]) resolve to the lowest original index, so results do
//! not depend on the tree layout.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 12;

/// Squared Euclidean distance, summed x, y, z in that order.
#[inline]
pub fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

impl Node {
    #[inline]
    fn box_dist2(&self, q: &Vector3<f64>) -> f64 {
        let mut acc = 0.0;
        for axis in 0..3 {
            let x = q[axis];
            let gap = if x < self.lo[axis] {
                self.lo[axis] - x
            } else if x > self.hi[axis] {
                x - self.hi[axis]
            } else {
                0.0
            };
            acc += gap * gap;
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

/// Running best candidate for branch-and-bound searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Best {
    pub cost: f64,
    pub index: usize,
    pub dist2: f64,
}

impl Best {
    pub fn none() -> Self {
        Self {
            cost: f64::INFINITY,
            index: usize::MAX,
            dist2: f64::INFINITY,
        }
    }

    pub fn is_some(&self) -> bool {
        self.index != usize::MAX
    }

    #[inline]
    fn beats(&self, cost: f64, index: usize) -> bool {
        cost < self.cost || (cost == self.cost && index < self.index)
    }
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        Self::with_ids(points.iter().copied().enumerate())
    }

    /// Builds from `(id, position)` pairs; queries report the given ids.
    pub fn with_ids(items: impl IntoIterator<Item = (usize, Vector3<f64>)>) -> Self {
        let mut items: Vec<(usize, Vector3<f64>)> = items.into_iter().collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            build(&mut items, 0, &mut nodes);
        }
        let (ids, points) = items.into_iter().unzip();
        Self { points, ids, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest id and squared distance.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best = Best::none();
        self.best_by(q, 0.0, &mut best, |_, d2| d2);
        best.is_some().then_some((best.index, best.dist2))
    }

    /// Ids with squared distance `<= radius²`, ascending.
    pub fn within(&self, q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.visit_within(q, r2, |id, _| {
            out.push(id);
            true
        });
        out.sort_unstable();
        out
    }

    /// Counts points within `radius`, skipping `exclude`, stopping at `limit`.
    pub fn count_within(
        &self,
        q: &Vector3<f64>,
        radius: f64,
        exclude: Option<usize>,
        limit: usize,
    ) -> usize {
        let r2 = radius * radius;
        let mut count = 0;
        self.visit_within(q, r2, |id, _| {
            if Some(id) != exclude {
                count += 1;
            }
            count < limit
        });
        count
    }

    /// Calls `f(id, d2)` for every point within `r2`; `f` returns false to stop.
    fn visit_within(&self, q: &Vector3<f64>, r2: f64, mut f: impl FnMut(usize, f64) -> bool) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.box_dist2(q) > r2 {
                continue;
            }
            match node.children {
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
                None => {
                    for k in node.start..node.end {
                        let d2 = dist2(q, &self.points[k]);
                        if d2 <= r2 && !f(self.ids[k], d2) {
                            return;
                        }
                    }
                }
            }
        }
    }

    /// Branch-and-bound minimization of `cost(id, d2) + offset` over the tree.
    ///
    /// `cost` must satisfy `cost(id, d2) >= d2`; subtrees whose box distance
    /// plus `offset` already exceeds the current best are skipped. `best` is
    /// shared so several trees can be searched against one running optimum.
    pub fn best_by(
        &self,
        q: &Vector3<f64>,
        offset: f64,
        best: &mut Best,
        mut cost: impl FnMut(usize, f64) -> f64,
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack: Vec<(usize, f64)> = vec![(0, self.nodes[0].box_dist2(q))];
        while let Some((n, bound)) = stack.pop() {
            if bound + offset > best.cost {
                continue;
            }
            let node = &self.nodes[n];
            match node.children {
                Some((a, b)) => {
                    let da = self.nodes[a].box_dist2(q);
                    let db = self.nodes[b].box_dist2(q);
                    // nearer child on top of the stack
                    if da <= db {
                        stack.push((b, db));
                        stack.push((a, da));
                    } else {
                        stack.push((a, da));
                        stack.push((b, db));
                    }
                }
                None => {
                    for k in node.start..node.end {
                        let d2 = dist2(q, &self.points[k]);
                        if d2 + offset > best.cost {
                            continue;
                        }
                        let id = self.ids[k];
                        let c = cost(id, d2);
                        if best.beats(c, id) {
                            *best = Best {
                                cost: c,
                                index: id,
                                dist2: d2,
                            };
                        }
                    }
                }
            }
        }
    }
}

fn build(items: &mut [(usize, Vector3<f64>)], start: usize, nodes: &mut Vec<Node>) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (_, p) in items.iter() {
        for axis in 0..3 {
            lo[axis] = lo[axis].min(p[axis]);
            hi[axis] = hi[axis].max(p[axis]);
        }
    }
    let id = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        start,
        end: start + items.len(),
        children: None,
    });
    if items.len() <= LEAF_SIZE {
        return id;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] - lo[axis] <= 0.0 {
        // all coincident: one big leaf
        return id;
    }
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| a.1[axis].total_cmp(&b.1[axis]));
    let (left, right) = items.split_at_mut(mid);
    let a = build(left, start, nodes);
    let b = build(right, start + mid, nodes);
    nodes[id].children = Some((a, b));
    id
}
