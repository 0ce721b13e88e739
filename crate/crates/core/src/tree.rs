//! Finite rooted metric trees.
//!
//! A [`RootedTree`] is stored as a parent array: every non-root vertex knows
//! its parent and the length of the edge leading to it. Points of the tree
//! that are not vertices are addressed by a [`TreePoint`], an offset along the
//! edge from a vertex toward its parent.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for all metric equality decisions.
pub const TOL: f64 = 1e-9;

/// Opaque vertex handle, dense within one tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub usize);

impl VertexId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for VertexId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// A location on a tree: the vertex itself (`offset == 0`) or the point at
/// distance `offset` from `vertex` along the edge toward its parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePoint {
    pub vertex: VertexId,
    pub offset: f64,
}

impl TreePoint {
    pub fn at_vertex(vertex: VertexId) -> Self {
        TreePoint { vertex, offset: 0.0 }
    }

    pub fn on_edge(vertex: VertexId, offset: f64) -> Self {
        TreePoint { vertex, offset }
    }

    pub fn is_vertex(&self) -> bool {
        self.offset == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("cycle detected through vertex {0}")]
    Cycle(u64),
    #[error("vertex {0} is not connected to the root")]
    Disconnected(u64),
    #[error("edge above vertex {child} has negative length {length}")]
    NegativeLength { child: u64, length: f64 },
    #[error("edge above vertex {0} has a non-finite length")]
    NonFiniteLength(u64),
    #[error("vertex {0} is listed with more than one parent")]
    MultipleParents(u64),
    #[error("root {0} is listed with a parent")]
    RootHasParent(u64),
    #[error("point {vertex}+{offset} is not on the tree")]
    PointNotOnTree { vertex: VertexId, offset: f64 },
    #[error("tree has zero total length")]
    ZeroLength,
    #[error("invalid distance matrix: {0}")]
    BadMatrix(String),
    #[error("four-point condition violated on points ({0}, {1}, {2}, {3})")]
    FourPointViolation(usize, usize, usize, usize),
}

pub type Result<T> = std::result::Result<T, TreeError>;

/// A finite rooted tree with nonnegative edge lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct RootedTree {
    root: VertexId,
    parent: Vec<Option<(VertexId, f64)>>,
    children: Vec<Vec<VertexId>>,
    height: Vec<f64>,
    depth: Vec<usize>,
    labels: Vec<Option<String>>,
}

impl RootedTree {
    /// The tree consisting of the root alone.
    pub fn trivial() -> Self {
        Self::from_parent_array(VertexId(0), vec![None], vec![None])
    }

    /// A segment of the given length rooted at one end.
    pub fn segment(length: f64) -> Self {
        if length <= 0.0 {
            return Self::trivial();
        }
        Self::from_parent_array(
            VertexId(0),
            vec![None, Some((VertexId(0), length))],
            vec![None, None],
        )
    }

    /// Builds a tree from a trusted dense parent array. Only the root may have
    /// no parent and the structure must be acyclic.
    pub(crate) fn from_parent_array(
        root: VertexId,
        parent: Vec<Option<(VertexId, f64)>>,
        labels: Vec<Option<String>>,
    ) -> Self {
        let n = parent.len();
        debug_assert_eq!(labels.len(), n);
        debug_assert!(parent[root.0].is_none());
        let mut children = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            if let Some((p, _)) = p {
                children[p.0].push(VertexId(v));
            }
        }
        let mut height = vec![0.0; n];
        let mut depth = vec![0usize; n];
        let mut stack = vec![root];
        let mut seen = 1usize;
        while let Some(u) = stack.pop() {
            for &c in &children[u.0] {
                let len = parent[c.0].expect("child has parent").1;
                height[c.0] = height[u.0] + len;
                depth[c.0] = depth[u.0] + 1;
                stack.push(c);
                seen += 1;
            }
        }
        debug_assert_eq!(seen, n, "parent array is not a tree");
        RootedTree {
            root,
            parent,
            children,
            height,
            depth,
            labels,
        }
    }

    pub(crate) fn parent_array(&self) -> &[Option<(VertexId, f64)>] {
        &self.parent
    }

    pub(crate) fn labels_vec(&self) -> &[Option<String>] {
        &self.labels
    }

    pub fn root(&self) -> VertexId {
        self.root
    }

    pub fn num_vertices(&self) -> usize {
        self.parent.len()
    }

    pub fn num_edges(&self) -> usize {
        self.parent.len() - 1
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.parent.len()).map(VertexId)
    }

    /// Edges as `(child, parent, length)`.
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId, f64)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|(p, len)| (VertexId(v), p, len)))
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        self.parent[v.0].map(|(p, _)| p)
    }

    /// Length of the edge from `v` to its parent (0 for the root).
    pub fn edge_length(&self, v: VertexId) -> f64 {
        self.parent[v.0].map_or(0.0, |(_, len)| len)
    }

    pub fn children(&self, v: VertexId) -> &[VertexId] {
        &self.children[v.0]
    }

    pub fn is_leaf(&self, v: VertexId) -> bool {
        self.children[v.0].is_empty() && v != self.root
    }

    /// Non-root vertices without children.
    pub fn leaves(&self) -> Vec<VertexId> {
        self.vertices().filter(|&v| self.is_leaf(v)).collect()
    }

    pub fn vertex_height(&self, v: VertexId) -> f64 {
        self.height[v.0]
    }

    pub fn vertex_depth(&self, v: VertexId) -> usize {
        self.depth[v.0]
    }

    pub fn label(&self, v: VertexId) -> Option<&str> {
        self.labels[v.0].as_deref()
    }

    pub fn set_label(&mut self, v: VertexId, label: impl Into<String>) {
        self.labels[v.0] = Some(label.into());
    }

    pub fn find_label(&self, label: &str) -> Option<VertexId> {
        self.labels
            .iter()
            .position(|l| l.as_deref() == Some(label))
            .map(VertexId)
    }

    pub fn is_trivial(&self) -> bool {
        self.parent.len() == 1
    }

    /// Total edge length, the mass of the length measure.
    pub fn total_length(&self) -> f64 {
        self.edges().map(|(_, _, len)| len).sum()
    }

    /// Largest vertex height.
    pub fn tree_height(&self) -> f64 {
        self.height.iter().copied().fold(0.0, f64::max)
    }

    /// Largest distance between two points; attained at vertices.
    pub fn diameter(&self) -> f64 {
        let vs: Vec<TreePoint> = self.vertices().map(TreePoint::at_vertex).collect();
        let mut best = 0.0f64;
        for (i, &p) in vs.iter().enumerate() {
            for &q in &vs[i + 1..] {
                best = best.max(self.distance_unchecked(p, q));
            }
        }
        best
    }

    /// Validates `p` and brings it to canonical form: offsets within
    /// tolerance of the edge ends snap to the corresponding vertex.
    pub fn normalize_point(&self, p: TreePoint) -> Result<TreePoint> {
        let bad = || TreeError::PointNotOnTree {
            vertex: p.vertex,
            offset: p.offset,
        };
        if p.vertex.0 >= self.parent.len() || !p.offset.is_finite() {
            return Err(bad());
        }
        match self.parent[p.vertex.0] {
            None => {
                if p.offset.abs() <= TOL {
                    Ok(TreePoint::at_vertex(p.vertex))
                } else {
                    Err(bad())
                }
            }
            Some((parent, len)) => {
                if p.offset < -TOL || p.offset > len + TOL {
                    Err(bad())
                } else if p.offset <= TOL {
                    Ok(TreePoint::at_vertex(p.vertex))
                } else if p.offset >= len - TOL {
                    Ok(TreePoint::at_vertex(parent))
                } else {
                    Ok(p)
                }
            }
        }
    }

    pub fn height(&self, p: TreePoint) -> Result<f64> {
        let p = self.normalize_point(p)?;
        Ok(self.point_height(p))
    }

    pub(crate) fn point_height(&self, p: TreePoint) -> f64 {
        self.height[p.vertex.0] - p.offset
    }

    /// Lowest common ancestor of two vertices.
    pub fn lca_vertex(&self, a: VertexId, b: VertexId) -> VertexId {
        let (mut a, mut b) = (a, b);
        while self.depth[a.0] > self.depth[b.0] {
            a = self.parent(a).expect("non-root");
        }
        while self.depth[b.0] > self.depth[a.0] {
            b = self.parent(b).expect("non-root");
        }
        while a != b {
            a = self.parent(a).expect("non-root");
            b = self.parent(b).expect("non-root");
        }
        a
    }

    /// Whether vertex `a` lies on the path from the root to vertex `b`.
    pub fn is_vertex_ancestor(&self, a: VertexId, b: VertexId) -> bool {
        let mut b = b;
        while self.depth[b.0] > self.depth[a.0] {
            b = self.parent(b).expect("non-root");
        }
        a == b
    }

    pub(crate) fn mca_unchecked(&self, p: TreePoint, q: TreePoint) -> TreePoint {
        if p.vertex == q.vertex {
            return if p.offset >= q.offset { p } else { q };
        }
        let l = self.lca_vertex(p.vertex, q.vertex);
        if l == p.vertex {
            // q lies above p's vertex, so p's edge is on q's root path
            p
        } else if l == q.vertex {
            q
        } else {
            TreePoint::at_vertex(l)
        }
    }

    /// Most recent common ancestor `p ∧ q`.
    pub fn mca(&self, p: TreePoint, q: TreePoint) -> Result<TreePoint> {
        let p = self.normalize_point(p)?;
        let q = self.normalize_point(q)?;
        self.normalize_point(self.mca_unchecked(p, q))
    }

    /// Whether `p` lies on the arc from the root to `q` (`p ≤ q`).
    pub fn is_ancestor(&self, p: TreePoint, q: TreePoint) -> Result<bool> {
        let p = self.normalize_point(p)?;
        let q = self.normalize_point(q)?;
        let m = self.mca_unchecked(p, q);
        Ok((self.point_height(m) - self.point_height(p)).abs() <= TOL)
    }

    pub(crate) fn distance_unchecked(&self, p: TreePoint, q: TreePoint) -> f64 {
        let m = self.mca_unchecked(p, q);
        let d = self.point_height(p) + self.point_height(q) - 2.0 * self.point_height(m);
        d.max(0.0)
    }

    /// Length of the arc between two points.
    pub fn distance(&self, p: TreePoint, q: TreePoint) -> Result<f64> {
        let p = self.normalize_point(p)?;
        let q = self.normalize_point(q)?;
        Ok(self.distance_unchecked(p, q))
    }

    /// Pairwise distances between the given points.
    pub fn distance_matrix(&self, points: &[TreePoint]) -> Result<Vec<Vec<f64>>> {
        let pts = points
            .iter()
            .map(|&p| self.normalize_point(p))
            .collect::<Result<Vec<_>>>()?;
        let n = pts.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let d = self.distance_unchecked(pts[i], pts[j]);
                m[i][j] = d;
                m[j][i] = d;
            }
        }
        Ok(m)
    }

    /// Distance matrix over all vertices with the root first.
    pub fn vertex_distance_matrix(&self) -> Vec<Vec<f64>> {
        let mut pts = vec![TreePoint::at_vertex(self.root)];
        pts.extend(
            self.vertices()
                .filter(|&v| v != self.root)
                .map(TreePoint::at_vertex),
        );
        self.distance_matrix(&pts).expect("vertices are on the tree")
    }

    /// The closed subtree `{x : p ≤ x}` rooted at `p`.
    pub fn subtree_above(&self, p: TreePoint) -> Result<RootedTree> {
        let p = self.normalize_point(p)?;
        let mut parent = Vec::new();
        let mut labels = Vec::new();
        let mut map = vec![usize::MAX; self.parent.len()];
        let top = if p.is_vertex() {
            p.vertex
        } else {
            parent.push(None);
            labels.push(None);
            p.vertex
        };
        let mut stack = vec![top];
        while let Some(u) = stack.pop() {
            let id = parent.len();
            map[u.0] = id;
            let entry = if u == top {
                if p.is_vertex() {
                    None
                } else {
                    Some((VertexId(0), p.offset))
                }
            } else {
                let (pu, len) = self.parent[u.0].expect("non-root");
                Some((VertexId(map[pu.0]), len))
            };
            parent.push(entry);
            labels.push(self.labels[u.0].clone());
            stack.extend(self.children[u.0].iter().copied());
        }
        Ok(RootedTree::from_parent_array(VertexId(0), parent, labels))
    }

    /// Draws a point uniformly with respect to the length measure.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TreePoint> {
        LengthSampler::new(self)?.sample(rng)
    }

    /// Removes zero-length edges and splices non-root vertices with exactly
    /// one child. Distances between surviving points are unchanged.
    pub fn canonicalize(&self) -> RootedTree {
        // representative vertex for every original vertex after merging
        let n = self.parent.len();
        let mut keep = vec![true; n];
        for v in self.vertices() {
            if v == self.root {
                continue;
            }
            if self.edge_length(v) <= 0.0
                || (self.children[v.0].len() == 1 && self.labels[v.0].is_none())
            {
                keep[v.0] = false;
            }
        }
        let mut new_id = vec![usize::MAX; n];
        let mut parent = Vec::new();
        let mut labels = Vec::new();
        let mut order = vec![self.root];
        let mut i = 0;
        while i < order.len() {
            let u = order[i];
            i += 1;
            order.extend(self.children[u.0].iter().copied());
        }
        for &u in &order {
            if !keep[u.0] {
                continue;
            }
            new_id[u.0] = parent.len();
            if u == self.root {
                parent.push(None);
            } else {
                let mut len = self.edge_length(u);
                let mut a = self.parent(u).expect("non-root");
                while !keep[a.0] {
                    len += self.edge_length(a);
                    a = self.parent(a).expect("non-root");
                }
                parent.push(Some((VertexId(new_id[a.0]), len)));
            }
            labels.push(self.labels[u.0].clone());
        }
        // labels of merged zero-length children move to their representative
        for v in self.vertices() {
            if keep[v.0] || self.edge_length(v) > 0.0 {
                continue;
            }
            if let Some(l) = &self.labels[v.0] {
                let mut a = self.parent(v).expect("non-root");
                while !keep[a.0] {
                    a = self.parent(a).expect("non-root");
                }
                let slot = &mut labels[new_id[a.0]];
                if slot.is_none() {
                    *slot = Some(l.clone());
                }
            }
        }
        RootedTree::from_parent_array(VertexId(0), parent, labels)
    }

    /// The rooted subtree `∪ [ρ, p]` over the given points, as a new tree.
    /// Labels of retained vertices are kept.
    pub fn spanned_subtree(&self, tips: &[TreePoint]) -> Result<RootedTree> {
        let n = self.parent.len();
        let mut keep = vec![false; n];
        keep[self.root.0] = true;
        // deepest kept offset on each partially covered edge
        let mut partial = vec![0.0f64; n];
        for &t in tips {
            let t = self.normalize_point(t)?;
            let mut v = t.vertex;
            if t.offset > 0.0 {
                partial[v.0] = partial[v.0].max(self.edge_length(v) - t.offset);
                v = self.parent(v).expect("interior points have a parent");
            }
            while !keep[v.0] {
                keep[v.0] = true;
                v = self.parent(v).expect("non-root");
            }
        }
        let mut parent = Vec::new();
        let mut labels = Vec::new();
        let mut new_id = vec![usize::MAX; n];
        let mut stack = vec![self.root];
        while let Some(u) = stack.pop() {
            new_id[u.0] = parent.len();
            parent.push(
                self.parent[u.0].map(|(p, len)| (VertexId(new_id[p.0]), len)),
            );
            labels.push(self.labels[u.0].clone());
            for &c in &self.children[u.0] {
                if keep[c.0] {
                    stack.push(c);
                } else if partial[c.0] > 0.0 {
                    parent.push(Some((VertexId(new_id[u.0]), partial[c.0])));
                    labels.push(None);
                }
            }
        }
        Ok(RootedTree::from_parent_array(VertexId(0), parent, labels))
    }

    /// Points spanning the tree: root first, then all leaves.
    pub fn spanning_points(&self) -> Vec<TreePoint> {
        let mut pts = vec![TreePoint::at_vertex(self.root)];
        pts.extend(self.leaves().into_iter().map(TreePoint::at_vertex));
        pts
    }
}

/// Builds and validates a tree from `(child, parent, length)` triples with
/// arbitrary integer ids. Zero-length edges are contracted. The resulting
/// vertex ids follow the sorted order of the surviving input ids.
pub fn build_tree(edges: &[(u64, u64, f64)], root: u64) -> Result<RootedTree> {
    build_labeled_tree(edges, root, &BTreeMap::new())
}

pub fn build_labeled_tree(
    edges: &[(u64, u64, f64)],
    root: u64,
    labels: &BTreeMap<u64, String>,
) -> Result<RootedTree> {
    let mut ids: Vec<u64> = edges.iter().flat_map(|&(c, p, _)| [c, p]).collect();
    ids.push(root);
    ids.sort_unstable();
    ids.dedup();
    let index = |id: u64| ids.binary_search(&id).expect("id collected");
    let n = ids.len();

    let mut parent: Vec<Option<(usize, f64)>> = vec![None; n];
    for &(c, p, len) in edges {
        if !len.is_finite() {
            return Err(TreeError::NonFiniteLength(c));
        }
        if len < 0.0 {
            return Err(TreeError::NegativeLength { child: c, length: len });
        }
        let ci = index(c);
        if parent[ci].is_some() {
            return Err(TreeError::MultipleParents(c));
        }
        parent[ci] = Some((index(p), len));
    }

    // 0 = unvisited, 1 = on current chain, 2 = finished
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut chain = Vec::new();
        let mut u = start;
        loop {
            match state[u] {
                2 => break,
                1 => return Err(TreeError::Cycle(ids[u])),
                _ => {}
            }
            state[u] = 1;
            chain.push(u);
            match parent[u] {
                Some((p, _)) => u = p,
                None => break,
            }
        }
        for c in chain {
            state[c] = 2;
        }
    }
    let ri = index(root);
    if parent[ri].is_some() {
        return Err(TreeError::RootHasParent(root));
    }
    for v in 0..n {
        if v != ri && parent[v].is_none() {
            return Err(TreeError::Disconnected(ids[v]));
        }
    }

    let parent_ids: Vec<Option<(VertexId, f64)>> = parent
        .iter()
        .map(|p| p.map(|(p, len)| (VertexId(p), len)))
        .collect();
    let label_vec: Vec<Option<String>> = ids.iter().map(|id| labels.get(id).cloned()).collect();
    let raw = RootedTree::from_parent_array(VertexId(ri), parent_ids, label_vec);
    Ok(contract_zero_edges(&raw))
}

fn contract_zero_edges(tree: &RootedTree) -> RootedTree {
    if tree.edges().all(|(_, _, len)| len > 0.0) {
        return tree.clone();
    }
    let n = tree.num_vertices();
    let rep = |mut v: VertexId| {
        while v != tree.root && tree.edge_length(v) <= 0.0 {
            v = tree.parent(v).expect("non-root");
        }
        v
    };
    let mut new_id = vec![usize::MAX; n];
    let mut count = 0;
    for v in tree.vertices() {
        if rep(v) == v {
            new_id[v.0] = count;
            count += 1;
        }
    }
    let mut parent = vec![None; count];
    let mut labels: Vec<Option<String>> = vec![None; count];
    for v in tree.vertices() {
        let r = rep(v);
        if r == v {
            if let Some((p, len)) = tree.parent[v.0] {
                parent[new_id[v.0]] = Some((VertexId(new_id[rep(p).0]), len));
            }
            if labels[new_id[v.0]].is_none() {
                labels[new_id[v.0]] = tree.labels[v.0].clone();
            }
        } else if labels[new_id[r.0]].is_none() {
            labels[new_id[r.0]] = tree.labels[v.0].clone();
        }
    }
    RootedTree::from_parent_array(VertexId(new_id[tree.root.0]), parent, labels)
}

/// Repeated uniform sampling from the length measure of one tree.
#[derive(Debug, Clone)]
pub struct LengthSampler {
    cumulative: Vec<f64>,
    vertex: Vec<VertexId>,
    length: Vec<f64>,
}

impl LengthSampler {
    pub fn new(tree: &RootedTree) -> Result<Self> {
        let mut acc = 0.0;
        let mut cumulative = Vec::new();
        let mut vertex = Vec::new();
        let mut length = Vec::new();
        for (v, _, len) in tree.edges() {
            if len > 0.0 {
                acc += len;
                cumulative.push(acc);
                vertex.push(v);
                length.push(len);
            }
        }
        if acc <= 0.0 {
            return Err(TreeError::ZeroLength);
        }
        Ok(LengthSampler {
            cumulative,
            vertex,
            length,
        })
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().expect("nonempty")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TreePoint> {
        let u = rng.random::<f64>() * self.total();
        let i = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        let start = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        let offset = (u - start).clamp(0.0, self.length[i]);
        Ok(TreePoint::on_edge(self.vertex[i], offset))
    }
}

/// Whether a symmetric matrix with zero diagonal satisfies the four-point
/// condition `d12 + d34 <= max(d13 + d24, d14 + d23)` within [`TOL`].
pub fn four_point_check(d: &[Vec<f64>]) -> bool {
    first_four_point_violation(d).is_none()
}

pub(crate) fn first_four_point_violation(d: &[Vec<f64>]) -> Option<(usize, usize, usize, usize)> {
    let n = d.len();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for e in c + 1..n {
                    let s1 = d[a][b] + d[c][e];
                    let s2 = d[a][c] + d[b][e];
                    let s3 = d[a][e] + d[b][c];
                    // equivalent to the condition for every labeling: the two
                    // largest pair sums coincide
                    let mut s = [s1, s2, s3];
                    s.sort_by(f64::total_cmp);
                    if s[2] - s[1] > TOL * (1.0 + s[2].abs()) {
                        return Some((a, b, c, e));
                    }
                }
            }
        }
    }
    None
}

pub(crate) fn validate_matrix(d: &[Vec<f64>]) -> Result<()> {
    let n = d.len();
    for (i, row) in d.iter().enumerate() {
        if row.len() != n {
            return Err(TreeError::BadMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        if row[i].abs() > TOL {
            return Err(TreeError::BadMatrix(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            if !row[j].is_finite() || row[j] < -TOL {
                return Err(TreeError::BadMatrix(format!("entry ({i},{j}) is not a distance")));
            }
            if (row[j] - d[j][i]).abs() > TOL {
                return Err(TreeError::BadMatrix(format!("asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Total length of the subtree spanned by `x0..xn` computed from their
/// pairwise distances alone.
pub fn spanned_length_from_distances(d: &[Vec<f64>]) -> Result<f64> {
    validate_matrix(d)?;
    if let Some((a, b, c, e)) = first_four_point_violation(d) {
        return Err(TreeError::FourPointViolation(a, b, c, e));
    }
    let n = d.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = d[0][1];
    for k in 2..n {
        let mut best = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                best = best.min(0.5 * (d[k][i] + d[k][j] - d[i][j]));
            }
        }
        total += best.max(0.0);
    }
    Ok(total)
}

/// Random tree with `edges` edges: each new vertex attaches to a uniformly
/// chosen existing vertex with an edge length drawn from `(0.05, 1.05)`.
pub fn random_tree<R: Rng + ?Sized>(edges: usize, rng: &mut R) -> RootedTree {
    let mut parent = vec![None];
    for v in 1..=edges {
        let p = rng.random_range(0..v);
        let len = 0.05 + rng.random::<f64>();
        parent.push(Some((VertexId(p), len)));
    }
    let labels = vec![None; parent.len()];
    RootedTree::from_parent_array(VertexId(0), parent, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // root 0, branch point 1 at height 1, leaves 2 (pendant 2) and 3 (pendant 3)
    fn y_tree() -> RootedTree {
        build_tree(&[(1, 0, 1.0), (2, 1, 2.0), (3, 1, 3.0)], 0).unwrap()
    }

    fn v(i: usize) -> TreePoint {
        TreePoint::at_vertex(VertexId(i))
    }

    /// Shortest path by explicit edge-walk; independent of heights and lca.
    fn path_distance_oracle(tree: &RootedTree, a: VertexId, b: VertexId) -> f64 {
        let mut up_a = vec![(a, 0.0)];
        let mut acc = 0.0;
        let mut x = a;
        while let Some(p) = tree.parent(x) {
            acc += tree.edge_length(x);
            up_a.push((p, acc));
            x = p;
        }
        let mut y = b;
        let mut acc_b = 0.0;
        loop {
            if let Some(&(_, da)) = up_a.iter().find(|(u, _)| *u == y) {
                return da + acc_b;
            }
            acc_b += tree.edge_length(y);
            y = tree.parent(y).unwrap();
        }
    }

    #[test]
    fn star_total_length() {
        let t = build_tree(&[(1, 0, 1.0), (2, 0, 2.0)], 0).unwrap();
        assert_eq!(t.total_length(), 3.0);
        let t = build_tree(&[(1, 0, 1.0), (2, 0, 2.0), (3, 0, 3.0)], 0).unwrap();
        assert_eq!(t.total_length(), 6.0);
        assert_eq!(RootedTree::trivial().total_length(), 0.0);
    }

    #[test]
    fn zero_edge_is_contracted() {
        let t = build_tree(&[(1, 0, 1.0), (2, 1, 0.0)], 0).unwrap();
        assert_eq!(t.num_vertices(), 2);
        assert_eq!(t.total_length(), 1.0);
    }

    #[test]
    fn validation_errors_are_distinct() {
        assert_eq!(
            build_tree(&[(1, 0, 1.0), (0, 1, 1.0)], 0),
            Err(TreeError::Cycle(0))
        );
        assert!(matches!(
            build_tree(&[(1, 0, 1.0), (2, 3, 1.0)], 0),
            Err(TreeError::Disconnected(3))
        ));
        assert!(matches!(
            build_tree(&[(1, 0, -1.0)], 0),
            Err(TreeError::NegativeLength { child: 1, .. })
        ));
        assert!(matches!(
            build_tree(&[(1, 0, 1.0), (1, 2, 1.0), (2, 0, 1.0)], 0),
            Err(TreeError::MultipleParents(1))
        ));
    }

    #[test]
    fn segment_distance_and_height() {
        let t = RootedTree::segment(5.0);
        assert_eq!(t.distance(v(0), v(1)).unwrap(), 5.0);
        assert_eq!(t.height(v(1)).unwrap(), 5.0);
        assert_eq!(t.height(v(0)).unwrap(), 0.0);
        let mid = TreePoint::on_edge(VertexId(1), 1.5);
        assert_eq!(t.distance(mid, mid).unwrap(), 0.0);
    }

    #[test]
    fn y_tree_distance_mca_height() {
        let t = y_tree();
        let oracle = path_distance_oracle(&t, VertexId(2), VertexId(3));
        assert_eq!(oracle, 5.0);
        assert_eq!(t.distance(v(2), v(3)).unwrap(), oracle);
        assert_eq!(t.mca(v(2), v(3)).unwrap(), v(1));
        assert_eq!(t.height(v(2)).unwrap(), 3.0);
        assert_eq!(t.mca(v(0), v(3)).unwrap(), v(0));
    }

    #[test]
    fn mca_of_comparable_points() {
        let t = RootedTree::segment(5.0);
        let p = TreePoint::on_edge(VertexId(1), 3.0); // height 2
        let q = TreePoint::on_edge(VertexId(1), 1.0); // height 4
        assert_eq!(t.mca(p, q).unwrap(), p);
        assert!(t.is_ancestor(p, q).unwrap());
        assert!(!t.is_ancestor(q, p).unwrap());
    }

    #[test]
    fn point_not_on_tree() {
        let t = RootedTree::segment(1.0);
        assert!(t.distance(v(0), TreePoint::on_edge(VertexId(1), 2.0)).is_err());
        assert!(t.height(v(7)).is_err());
        assert!(t.mca(TreePoint::on_edge(VertexId(0), 0.5), v(1)).is_err());
    }

    #[test]
    fn offset_at_edge_end_is_parent_vertex() {
        let t = y_tree();
        let p = t.normalize_point(TreePoint::on_edge(VertexId(2), 2.0)).unwrap();
        assert_eq!(p, v(1));
    }

    #[test]
    fn subtree_above_cases() {
        let seg = RootedTree::segment(5.0);
        let s = seg.subtree_above(TreePoint::on_edge(VertexId(1), 3.0)).unwrap();
        assert_eq!(s.total_length(), 3.0);
        assert_eq!(s.tree_height(), 3.0);

        let t = y_tree();
        let s = t.subtree_above(v(1)).unwrap();
        let mut lens: Vec<f64> = s.edges().map(|e| e.2).collect();
        lens.sort_by(f64::total_cmp);
        assert_eq!(lens, vec![2.0, 3.0]);
        assert!(t.subtree_above(v(3)).unwrap().is_trivial());
    }

    #[test]
    fn total_length_matches_independent_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tree(20, &mut rng);
        let mut oracle = 0.0;
        for v in t.vertices() {
            if let Some(p) = t.parent(v) {
                oracle += t.vertex_height(v) - t.vertex_height(p);
            }
        }
        assert!((t.total_length() - oracle).abs() < 1e-12);
    }

    #[test]
    fn spanned_length_examples() {
        assert_eq!(spanned_length_from_distances(&[vec![0.0, 5.0], vec![5.0, 0.0]]).unwrap(), 5.0);
        let d = vec![
            vec![0.0, 3.0, 4.0],
            vec![3.0, 0.0, 5.0],
            vec![4.0, 5.0, 0.0],
        ];
        assert_eq!(spanned_length_from_distances(&d).unwrap(), 6.0);
    }

    #[test]
    fn spanned_length_rejects_non_tree_metric() {
        let d = bad_four_point();
        assert!(matches!(
            spanned_length_from_distances(&d),
            Err(TreeError::FourPointViolation(..))
        ));
    }

    fn bad_four_point() -> Vec<Vec<f64>> {
        // d12=d13=d14=d23=d24=1, d34=3
        vec![
            vec![0.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 3.0],
            vec![1.0, 1.0, 3.0, 0.0],
        ]
    }

    #[test]
    fn four_point_examples() {
        assert!(!four_point_check(&bad_four_point()));
        assert!(four_point_check(&[vec![0.0, 2.0], vec![2.0, 0.0]]));
        assert!(four_point_check(&y_tree().vertex_distance_matrix()));
    }

    #[test]
    fn sample_point_mean_height_on_segment() {
        let t = RootedTree::segment(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| t.height(t.sample_point(&mut rng).unwrap()).unwrap())
            .sum::<f64>()
            / n as f64;
        let se = 5.0 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 2.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn sample_point_edge_frequencies_on_star() {
        let t = build_tree(&[(1, 0, 1.0), (2, 0, 2.0), (3, 0, 3.0)], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let p = t.sample_point(&mut rng).unwrap();
            counts[p.vertex.0 - 1] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let p = (k + 1) as f64 / 6.0;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * se, "edge {k}: {c}");
        }
    }

    #[test]
    fn sample_point_is_seed_deterministic() {
        let t = y_tree();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| t.sample_point(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert!(RootedTree::trivial().sample_point(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn canonicalize_splices_degree_two() {
        let t = build_tree(&[(1, 0, 1.0), (2, 1, 2.0), (3, 2, 1.0), (4, 2, 1.0)], 0).unwrap();
        let c = t.canonicalize();
        assert_eq!(c.num_vertices(), 4);
        assert_eq!(c.total_length(), t.total_length());
        assert_eq!(c.tree_height(), 4.0);
    }

    #[test]
    fn diameter_of_y_tree() {
        assert_eq!(y_tree().diameter(), 5.0);
    }
}
