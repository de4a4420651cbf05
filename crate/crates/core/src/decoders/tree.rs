//! CART classification tree with Gini impurity.

pub const MAX_DEPTH: usize = 12;
pub const MIN_LEAF: usize = 5;

/// One node; leaves have `feature == None`. `dist` is the class
/// distribution of the training rows that reached the node.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub n_classes: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|&c| (c as f64 / n as f64).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [f64],
    dim: usize,
    labels: &'a [usize],
    k: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &i in idx {
            c[self.labels[i]] += 1;
        }
        c
    }

    /// Best `(feature, threshold)` by weighted Gini; ties keep the first found.
    fn best_split(&self, idx: &[usize], parent: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = idx.to_vec();
        for f in 0..self.dim {
            let val = |i: usize| self.x[i * self.dim + f];
            sorted.sort_by(|&a, &b| val(a).total_cmp(&val(b)).then(a.cmp(&b)));
            let mut left = vec![0usize; self.k];
            for pos in 0..n - 1 {
                left[self.labels[sorted[pos]]] += 1;
                let nl = pos + 1;
                let (lo, hi) = (val(sorted[pos]), val(sorted[pos + 1]));
                if nl < self.min_leaf || n - nl < self.min_leaf || lo == hi {
                    continue;
                }
                // Threshold stored at f32 precision; skip if rounding breaks the split.
                let thr = (0.5 * (lo + hi)) as f32 as f64;
                if !(lo <= thr && thr < hi) {
                    continue;
                }
                let nr = (n - nl) as f64;
                let right_sq: f64 = parent.iter().zip(&left).map(|(p, l)| ((p - l) as f64 / nr).powi(2)).sum();
                let score = (nl as f64 * gini(&left, nl) + nr * (1.0 - right_sq)) / n as f64;
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, thr));
                }
            }
        }
        let parent_gini = gini(parent, n);
        best.filter(|&(s, _, _)| s < parent_gini - 1e-12).map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let n = idx.len();
        let dist = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let id = self.nodes.len();
        self.nodes.push(TreeNode { feature: None, threshold: 0.0, left: 0, right: 0, dist });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || n < 2 * self.min_leaf {
            return id;
        }
        let Some((f, thr)) = self.best_split(&idx, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i * self.dim + f] <= thr);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        let node = &mut self.nodes[id];
        node.feature = Some(f);
        node.threshold = thr;
        node.left = left;
        node.right = right;
        id
    }
}

impl Tree {
    pub fn fit(x: &[f64], dim: usize, labels: &[usize], k: usize, max_depth: usize, min_leaf: usize) -> Self {
        let mut b = Builder { x, dim, labels, k, max_depth, min_leaf: min_leaf.max(1), nodes: Vec::new() };
        b.grow((0..labels.len()).collect(), 0);
        let mut nodes = b.nodes;
        for n in &mut nodes {
            n.dist.iter_mut().for_each(|p| *p = *p as f32 as f64);
        }
        Self { nodes, n_classes: k }
    }

    pub fn leaf_dist(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        while let Some(f) = self.nodes[i].feature {
            i = if x[f] <= self.nodes[i].threshold { self.nodes[i].left } else { self.nodes[i].right };
        }
        &self.nodes[i].dist
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i].feature {
                None => 0,
                Some(_) => 1 + walk(t, t.nodes[i].left).max(walk(t, t.nodes[i].right)),
            }
        }
        walk(self, 0)
    }

    /// Rows of `[feature or -1, threshold, left, right, dist...]`.
    pub fn to_rows(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .flat_map(|n| {
                let head = [n.feature.map_or(-1.0, |f| f as f64), n.threshold, n.left as f64, n.right as f64];
                head.into_iter().chain(n.dist.iter().copied())
            })
            .collect()
    }

    pub fn from_rows(rows: &[f64], k: usize, dim: usize) -> Option<Self> {
        let width = 4 + k;
        let n_nodes = rows.len() / width;
        let mut nodes = Vec::with_capacity(n_nodes);
        for r in rows.chunks_exact(width) {
            let feature = if r[0] < 0.0 { None } else { Some(r[0] as usize) };
            let (left, right) = (r[2] as usize, r[3] as usize);
            if let Some(f) = feature {
                if f >= dim || left >= n_nodes || right >= n_nodes || left == 0 || right == 0 {
                    return None;
                }
            }
            nodes.push(TreeNode { feature, threshold: r[1], left, right, dist: r[4..].to_vec() });
        }
        (!nodes.is_empty()).then_some(Self { nodes, n_classes: k })
    }
}
