//! Static interval tree over closed `[begin, end]` intervals.
//!
//! Intervals are kept in an array sorted by `(begin, end)`; the implicit
//! balanced tree over that array stores, at every midpoint, the maximum end
//! of its subtree. A containment query prunes subtrees whose maximum end is
//! too small and right halves whose begins are too large.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval<T> {
    pub begin: u64,
    pub end: u64,
    pub value: T,
}

#[derive(Debug, Clone)]
struct Node<T> {
    iv: Interval<T>,
    max_end: u64,
}

#[derive(Debug, Clone)]
pub struct IntervalTree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Copy> IntervalTree<T> {
    pub fn new(intervals: impl IntoIterator<Item = Interval<T>>) -> Self {
        let mut nodes: Vec<Node<T>> = intervals.into_iter().map(|iv| Node { max_end: iv.end, iv }).collect();
        nodes.sort_by_key(|n| (n.iv.begin, n.iv.end));
        let len = nodes.len();
        fill_max(&mut nodes, 0, len);
        IntervalTree { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Stored intervals `[b, e]` with `b <= begin` and `end <= e`, in
    /// `(begin, end)` order.
    pub fn containing(&self, begin: u64, end: u64) -> Vec<Interval<T>> {
        let mut out = Vec::new();
        self.visit(0, self.nodes.len(), begin, end, &mut out);
        out
    }

    /// Stored intervals containing the point `t`.
    pub fn stab(&self, t: u64) -> Vec<Interval<T>> {
        self.containing(t, t)
    }

    fn visit(&self, lo: usize, hi: usize, begin: u64, end: u64, out: &mut Vec<Interval<T>>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let node = &self.nodes[mid];
        if node.max_end < end {
            return;
        }
        self.visit(lo, mid, begin, end, out);
        if node.iv.begin > begin {
            return;
        }
        if node.iv.end >= end {
            out.push(node.iv);
        }
        self.visit(mid + 1, hi, begin, end, out);
    }
}

fn fill_max<T>(nodes: &mut [Node<T>], lo: usize, hi: usize) -> u64 {
    if lo >= hi {
        return 0;
    }
    let mid = lo + (hi - lo) / 2;
    let left = fill_max(nodes, lo, mid);
    let right = fill_max(nodes, mid + 1, hi);
    let m = nodes[mid].iv.end.max(left).max(right);
    nodes[mid].max_end = m;
    m
}
