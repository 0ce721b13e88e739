//! Metric operations between finite rooted trees: Hausdorff distance,
//! correspondence distortion, rooted Gromov–Hausdorff distance on δ-nets,
//! quartet reconstruction, and the trimming map R_η.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{
    first_four_point_violation, validate_matrix, RootedTree, TreeError, TreePoint, VertexId, TOL,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("point set is empty")]
    EmptySet,
    #[error("δ-net has {required} points, exhaustive search is capped at {cap}")]
    NetTooLarge { required: usize, cap: usize },
    #[error("parameter must be positive, got {0}")]
    NonPositive(f64),
    #[error("correspondence does not contain the root pair")]
    MissingRootPair,
    #[error("reconstructed quartet length {0} is negative")]
    NegativeQuartetLength(f64),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Hausdorff distance between two finite point sets of one ambient tree.
pub fn hausdorff(tree: &RootedTree, a: &[TreePoint], b: &[TreePoint]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let a = normalize_all(tree, a)?;
    let b = normalize_all(tree, b)?;
    let one_sided = |xs: &[TreePoint], ys: &[TreePoint]| {
        xs.iter()
            .map(|&x| {
                ys.iter()
                    .map(|&y| tree.distance_unchecked(x, y))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(one_sided(&a, &b).max(one_sided(&b, &a)))
}

fn normalize_all(tree: &RootedTree, pts: &[TreePoint]) -> Result<Vec<TreePoint>> {
    Ok(pts
        .iter()
        .map(|&p| tree.normalize_point(p))
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Distance from `x` to the rooted subtree spanned by `tips` (root included).
fn distance_to_rooted_subtree(tree: &RootedTree, x: TreePoint, tips: &[TreePoint]) -> f64 {
    let hx = tree.point_height(x);
    let reach = tips
        .iter()
        .map(|&s| tree.point_height(tree.mca_unchecked(x, s)))
        .fold(0.0, f64::max);
    (hx - reach).max(0.0)
}

/// Hausdorff distance between the two rooted subtrees `∪[ρ, a]` and `∪[ρ, b]`
/// of one ambient tree, given by their tips.
///
/// Walking up an arc of one subtree, the distance to the other grows at most
/// at unit speed, so the supremum sits at a tip.
pub fn subtree_hausdorff(tree: &RootedTree, a: &[TreePoint], b: &[TreePoint]) -> Result<f64> {
    let a = normalize_all(tree, a)?;
    let b = normalize_all(tree, b)?;
    let one_sided = |xs: &[TreePoint], ys: &[TreePoint]| {
        xs.iter()
            .map(|&x| distance_to_rooted_subtree(tree, x, ys))
            .fold(0.0, f64::max)
    };
    Ok(one_sided(&a, &b).max(one_sided(&b, &a)))
}

/// `sup_{y ∈ tree} d(y, sources)`, computed exactly.
///
/// On every edge the distance to the nearest source is the lower envelope of
/// the sources on the edge and two virtual sources standing for everything
/// reachable through the edge's ends.
pub fn covering_radius(tree: &RootedTree, sources: &[TreePoint]) -> Result<f64> {
    if sources.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let n = tree.num_vertices();
    let mut at_vertex = vec![false; n];
    let mut on_edge: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &s in sources {
        let s = tree.normalize_point(s)?;
        if s.is_vertex() {
            at_vertex[s.vertex.0] = true;
        } else {
            on_edge[s.vertex.0].push(s.offset);
        }
    }

    let mut order = vec![tree.root()];
    let mut i = 0;
    while i < order.len() {
        order.extend(tree.children(order[i]).iter().copied());
        i += 1;
    }

    // down[v]: nearest source in the closed subtree of v
    let mut down = vec![f64::INFINITY; n];
    // branch[c]: nearest source seen from parent(c) through the edge of c
    let mut branch = vec![f64::INFINITY; n];
    for &v in order.iter().rev() {
        let mut d = if at_vertex[v.0] { 0.0 } else { f64::INFINITY };
        for &c in tree.children(v) {
            d = d.min(branch[c.0]);
        }
        down[v.0] = d;
        if v != tree.root() {
            let len = tree.edge_length(v);
            let mut b = len + d;
            for &o in &on_edge[v.0] {
                b = b.min(len - o);
            }
            branch[v.0] = b;
        }
    }

    // up[v]: nearest source from v through the edge above v;
    // outer[v]: nearest source from parent(v) avoiding the edge of v
    let mut up = vec![f64::INFINITY; n];
    let mut outer = vec![f64::INFINITY; n];
    for &v in &order {
        let kids = tree.children(v);
        let own = if at_vertex[v.0] { 0.0 } else { f64::INFINITY };
        let base = own.min(up[v.0]);
        for &c in kids {
            let mut others = base;
            for &c2 in kids {
                if c2 != c {
                    others = others.min(branch[c2.0]);
                }
            }
            outer[c.0] = others;
            let len = tree.edge_length(c);
            let mut u = len + others;
            for &o in &on_edge[c.0] {
                u = u.min(o);
            }
            up[c.0] = u;
        }
    }

    let mut worst = 0.0f64;
    for (v, _, len) in tree.edges() {
        let mut pos = vec![-down[v.0], len + outer[v.0]];
        pos.extend(on_edge[v.0].iter().copied());
        pos.sort_by(f64::total_cmp);
        for w in pos.windows(2) {
            let (a, b) = (w[0], w[1]);
            let lo = a.max(0.0);
            let hi = b.min(len);
            if lo > hi {
                continue;
            }
            let mid = (0.5 * (a + b)).clamp(lo, hi);
            worst = worst.max((mid - a).min(b - mid));
        }
    }
    Ok(worst)
}

/// A finite relation between points of two trees that contains the root pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pairs: Vec<(TreePoint, TreePoint)>,
}

impl Correspondence {
    pub fn new(a: &RootedTree, b: &RootedTree, pairs: Vec<(TreePoint, TreePoint)>) -> Result<Self> {
        let mut norm = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            norm.push((a.normalize_point(x)?, b.normalize_point(y)?));
        }
        let root_pair = (TreePoint::at_vertex(a.root()), TreePoint::at_vertex(b.root()));
        if !norm.contains(&root_pair) {
            return Err(MetricError::MissingRootPair);
        }
        Ok(Correspondence { pairs: norm })
    }

    pub fn pairs(&self) -> &[(TreePoint, TreePoint)] {
        &self.pairs
    }
}

/// `sup |d₁(x, x') − d₂(y, y')|` over pairs of pairs.
pub fn distortion(a: &RootedTree, b: &RootedTree, c: &Correspondence) -> f64 {
    pair_distortion(a, b, c.pairs())
}

fn pair_distortion(a: &RootedTree, b: &RootedTree, pairs: &[(TreePoint, TreePoint)]) -> f64 {
    let mut worst = 0.0f64;
    for (i, &(x, y)) in pairs.iter().enumerate() {
        for &(x2, y2) in &pairs[i + 1..] {
            let d = (a.distance_unchecked(x, x2) - b.distance_unchecked(y, y2)).abs();
            worst = worst.max(d);
        }
    }
    worst
}

/// Vertices (root first) plus an equal subdivision of every edge into
/// `⌈length/δ⌉` parts.
pub fn delta_net(tree: &RootedTree, delta: f64) -> Result<Vec<TreePoint>> {
    if !(delta > 0.0) {
        return Err(MetricError::NonPositive(delta));
    }
    let mut pts = vec![TreePoint::at_vertex(tree.root())];
    pts.extend(
        tree.vertices()
            .filter(|&v| v != tree.root())
            .map(TreePoint::at_vertex),
    );
    for (v, _, len) in tree.edges() {
        let parts = subdivisions(len, delta);
        for k in 1..parts {
            pts.push(TreePoint::on_edge(v, len * k as f64 / parts as f64));
        }
    }
    Ok(pts)
}

fn subdivisions(len: f64, delta: f64) -> usize {
    ((len / delta).ceil() as usize).max(1)
}

/// Exact Hausdorff distance between a tree and its δ-net.
pub fn net_error(tree: &RootedTree, delta: f64) -> f64 {
    tree.edges()
        .map(|(_, _, len)| len / (2.0 * subdivisions(len, delta) as f64))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhEstimate {
    pub value: f64,
    pub error_bound: f64,
}

/// Nets larger than this are refused by [`gh_root_exact`] unless a larger
/// cap is passed to [`gh_root_exact_capped`].
pub const DEFAULT_NET_CAP: usize = 6;

/// Rooted GH distance between the δ-nets of two trees, found by exhaustive
/// search over root-preserving correspondences. `error_bound` certifies the
/// gap to the distance between the trees themselves.
pub fn gh_root_exact(a: &RootedTree, b: &RootedTree, delta: f64) -> Result<GhEstimate> {
    gh_root_exact_capped(a, b, delta, DEFAULT_NET_CAP)
}

pub fn gh_root_exact_capped(
    a: &RootedTree,
    b: &RootedTree,
    delta: f64,
    cap: usize,
) -> Result<GhEstimate> {
    let xa = delta_net(a, delta)?;
    let xb = delta_net(b, delta)?;
    let required = xa.len().max(xb.len());
    if required > cap {
        return Err(MetricError::NetTooLarge { required, cap });
    }
    let da = a.distance_matrix(&xa)?;
    let db = b.distance_matrix(&xb)?;
    let dis = min_rooted_distortion(&da, &db);
    Ok(GhEstimate {
        value: 0.5 * dis,
        error_bound: net_error(a, delta) + net_error(b, delta),
    })
}

/// Minimum distortion over relations between two finite rooted metric spaces
/// (index 0 is the root of each) that cover both sides and contain `(0, 0)`.
///
/// Every covering relation contains the graph of some `f: X → Y` together
/// with reverse pairs for the points of `Y` missed by `f`, and distortion is
/// monotone under inclusion, so only such minimal relations are searched.
pub fn min_rooted_distortion(dx: &[Vec<f64>], dy: &[Vec<f64>]) -> f64 {
    let greedy = greedy_distortion(dx, dy);
    let mut s = Search {
        dx,
        dy,
        pairs: vec![(0, 0)],
        best: greedy,
    };
    s.assign_forward(1, 0.0);
    s.best
}

struct Search<'a> {
    dx: &'a [Vec<f64>],
    dy: &'a [Vec<f64>],
    pairs: Vec<(usize, usize)>,
    best: f64,
}

impl Search<'_> {
    fn added(&self, x: usize, y: usize) -> f64 {
        self.pairs
            .iter()
            .map(|&(a, b)| (self.dx[x][a] - self.dy[y][b]).abs())
            .fold(0.0, f64::max)
    }

    fn assign_forward(&mut self, x: usize, cur: f64) {
        if x == self.dx.len() {
            let mut covered = vec![false; self.dy.len()];
            for &(_, y) in &self.pairs {
                covered[y] = true;
            }
            let missing: Vec<usize> = (0..self.dy.len()).filter(|&y| !covered[y]).collect();
            self.assign_backward(&missing, 0, cur);
            return;
        }
        let mut cands: Vec<(f64, usize)> = (0..self.dy.len())
            .map(|y| (cur.max(self.added(x, y)), y))
            .filter(|&(d, _)| d < self.best)
            .collect();
        cands.sort_by(|p, q| p.0.total_cmp(&q.0));
        for (d, y) in cands {
            if d >= self.best {
                break;
            }
            self.pairs.push((x, y));
            self.assign_forward(x + 1, d);
            self.pairs.pop();
        }
    }

    fn assign_backward(&mut self, missing: &[usize], k: usize, cur: f64) {
        if k == missing.len() {
            self.best = self.best.min(cur);
            return;
        }
        let y = missing[k];
        let mut cands: Vec<(f64, usize)> = (0..self.dx.len())
            .map(|x| (cur.max(self.added(x, y)), x))
            .filter(|&(d, _)| d < self.best)
            .collect();
        cands.sort_by(|p, q| p.0.total_cmp(&q.0));
        for (d, x) in cands {
            if d >= self.best {
                break;
            }
            self.pairs.push((x, y));
            self.assign_backward(missing, k + 1, d);
            self.pairs.pop();
        }
    }
}

/// Distortion of a greedily built root-preserving correspondence.
fn greedy_distortion(dx: &[Vec<f64>], dy: &[Vec<f64>]) -> f64 {
    let mut pairs = vec![(0usize, 0usize)];
    let mut cur = 0.0f64;
    let added = |pairs: &[(usize, usize)], x: usize, y: usize| {
        pairs
            .iter()
            .map(|&(a, b)| (dx[x][a] - dy[y][b]).abs())
            .fold(0.0, f64::max)
    };
    let mut covered = vec![false; dy.len()];
    covered[0] = true;
    for x in 1..dx.len() {
        let (d, y) = (0..dy.len())
            .map(|y| (added(&pairs, x, y), y))
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .expect("nonempty");
        cur = cur.max(d);
        covered[y] = true;
        pairs.push((x, y));
    }
    for y in 0..dy.len() {
        if covered[y] {
            continue;
        }
        let (d, x) = (0..dx.len())
            .map(|x| (added(&pairs, x, y), x))
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .expect("nonempty");
        cur = cur.max(d);
        pairs.push((x, y));
    }
    cur
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Certified envelope for the rooted GH distance of two trees of any size.
///
/// The lower bound compares heights and diameters; the upper bound is half the
/// distortion of a greedy correspondence between δ-nets plus the net errors.
pub fn gh_root_bounds(a: &RootedTree, b: &RootedTree, delta: f64) -> Result<GhBounds> {
    let lower = 0.5
        * (a.tree_height() - b.tree_height())
            .abs()
            .max((a.diameter() - b.diameter()).abs());
    let xa = delta_net(a, delta)?;
    let xb = delta_net(b, delta)?;
    let da = a.distance_matrix(&xa)?;
    let db = b.distance_matrix(&xb)?;
    let dis = greedy_distortion(&da, &db);
    let upper = 0.5 * dis + net_error(a, delta) + net_error(b, delta);
    Ok(GhBounds {
        lower,
        upper: upper.max(lower),
    })
}

/// The four shapes of a tree with leaves `x₁..x₄`: `I` splits 12|34, `II`
/// splits 13|24, `III` splits 14|23 and `IV` is the star.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuartetShape {
    I,
    II,
    III,
    IV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartetResult {
    pub shape: QuartetShape,
    /// Pendant edge lengths of leaves 1..4.
    pub pendants: [f64; 4],
    /// Length of the internal edge, zero for the star.
    pub internal: f64,
    /// `½(d₁₃ + d₂₄ − d₁₂ − d₃₄)`: positive for shape I, negative for II.
    pub chi: f64,
}

impl QuartetResult {
    /// The two leaves on the first side of the internal edge (0-based).
    pub fn split(&self) -> ([usize; 2], [usize; 2]) {
        match self.shape {
            QuartetShape::I | QuartetShape::IV => ([0, 1], [2, 3]),
            QuartetShape::II => ([0, 2], [1, 3]),
            QuartetShape::III => ([0, 3], [1, 2]),
        }
    }

    /// Leaf-to-leaf distances of the reconstructed tree.
    pub fn leaf_distances(&self) -> [[f64; 4]; 4] {
        let (left, _) = self.split();
        let mut d = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let across = left.contains(&i) != left.contains(&j);
                    d[i][j] = self.pendants[i]
                        + self.pendants[j]
                        + if across { self.internal } else { 0.0 };
                }
            }
        }
        d
    }

    /// The reconstructed tree rooted at the branch point on leaf 1's side,
    /// leaves labeled `1..4`.
    pub fn to_tree(&self) -> std::result::Result<RootedTree, TreeError> {
        let (left, right) = self.split();
        // 0: left branch point (root), 1: right branch point, 2..6: leaves
        let mut edges = vec![(1u64, 0u64, self.internal)];
        for &i in &left {
            edges.push((i as u64 + 2, 0, self.pendants[i]));
        }
        for &i in &right {
            edges.push((i as u64 + 2, 1, self.pendants[i]));
        }
        let labels = (0..4).map(|i| (i as u64 + 2, (i + 1).to_string())).collect();
        crate::tree::build_labeled_tree(&edges, 0, &labels)
    }
}

/// Reconstructs shape and edge lengths of a four-leaf tree from its leaf
/// distances.
pub fn quartet_reconstruct(d: &[Vec<f64>]) -> Result<QuartetResult> {
    if d.len() != 4 {
        return Err(TreeError::BadMatrix(format!("expected 4x4, got {} rows", d.len())).into());
    }
    validate_matrix(d)?;
    if let Some((a, b, c, e)) = first_four_point_violation(d) {
        return Err(TreeError::FourPointViolation(a, b, c, e).into());
    }
    let sums = [
        d[0][1] + d[2][3], // 12|34
        d[0][2] + d[1][3], // 13|24
        d[0][3] + d[1][2], // 14|23
    ];
    let chi = 0.5 * (sums[1] - sums[0]);
    let (mut lo, mut hi) = (0, 0);
    for k in 1..3 {
        if sums[k] < sums[lo] {
            lo = k;
        }
        if sums[k] > sums[hi] {
            hi = k;
        }
    }
    let spread = sums[hi] - sums[lo];
    let shape = if spread <= TOL * (1.0 + sums[hi].abs()) {
        QuartetShape::IV
    } else {
        [QuartetShape::I, QuartetShape::II, QuartetShape::III][lo]
    };
    let internal = if shape == QuartetShape::IV { 0.0 } else { 0.5 * spread };
    let mut r = QuartetResult {
        shape,
        pendants: [0.0; 4],
        internal,
        chi,
    };
    let (left, right) = r.split();
    let pend = |i: usize, j: usize, k: usize| 0.5 * (d[i][j] + d[i][k] - d[j][k]);
    r.pendants[left[0]] = pend(left[0], left[1], right[0]);
    r.pendants[left[1]] = pend(left[1], left[0], right[0]);
    r.pendants[right[0]] = pend(right[0], right[1], left[0]);
    r.pendants[right[1]] = pend(right[1], right[0], left[0]);
    for p in r.pendants.iter_mut() {
        if *p < -TOL {
            return Err(MetricError::NegativeQuartetLength(*p));
        }
        *p = p.max(0.0);
    }
    Ok(r)
}

/// For each vertex, the largest distance to a point above it.
fn reaches(tree: &RootedTree) -> Vec<f64> {
    let n = tree.num_vertices();
    let mut top = vec![0.0f64; n];
    let mut order = vec![tree.root()];
    let mut i = 0;
    while i < order.len() {
        order.extend(tree.children(order[i]).iter().copied());
        i += 1;
    }
    for &v in order.iter().rev() {
        let mut best = tree.vertex_height(v);
        for &c in tree.children(v) {
            best = best.max(top[c.0]);
        }
        top[v.0] = best;
    }
    (0..n).map(|v| top[v] - tree.vertex_height(VertexId(v))).collect()
}

/// Largest `d(p, y)` over points `y` with `p ≤ y`.
pub fn point_reach(tree: &RootedTree, p: TreePoint) -> Result<f64> {
    let p = tree.normalize_point(p)?;
    Ok(reaches(tree)[p.vertex.0] + p.offset)
}

/// The trimmed tree `R_η(T)` together with, for every vertex of the result,
/// its location in the input tree.
#[derive(Debug, Clone)]
pub struct Trimmed {
    pub tree: RootedTree,
    pub origin: Vec<TreePoint>,
}

impl Trimmed {
    /// Tips of the trimmed tree as points of the input tree.
    pub fn tips(&self) -> Vec<TreePoint> {
        let mut t: Vec<TreePoint> = self
            .tree
            .leaves()
            .into_iter()
            .map(|v| self.origin[v.0])
            .collect();
        t.push(self.origin[self.tree.root().0]);
        t
    }
}

/// `R_η`: the root together with all points that have some point at distance
/// at least η above them.
pub fn trim(tree: &RootedTree, eta: f64) -> Result<RootedTree> {
    Ok(trim_mapped(tree, eta)?.tree)
}

pub fn trim_mapped(tree: &RootedTree, eta: f64) -> Result<Trimmed> {
    if !(eta > 0.0) {
        return Err(MetricError::NonPositive(eta));
    }
    let reach = reaches(tree);
    let root = tree.root();
    let mut parent = vec![None];
    let mut origin = vec![TreePoint::at_vertex(root)];
    if reach[root.0] < eta {
        return Ok(Trimmed {
            tree: RootedTree::from_parent_array(VertexId(0), parent, vec![None]),
            origin,
        });
    }
    let mut labels = vec![tree.label(root).map(str::to_string)];
    let mut stack = vec![(root, 0usize)];
    while let Some((u, id)) = stack.pop() {
        for &c in tree.children(u) {
            let len = tree.edge_length(c);
            let cut = eta - reach[c.0]; // offsets below this are dropped
            if cut <= 0.0 {
                parent.push(Some((VertexId(id), len)));
                origin.push(TreePoint::at_vertex(c));
                labels.push(tree.label(c).map(str::to_string));
                stack.push((c, parent.len() - 1));
            } else if cut < len {
                parent.push(Some((VertexId(id), len - cut)));
                origin.push(TreePoint::on_edge(c, cut));
                labels.push(None);
            }
        }
    }
    Ok(Trimmed {
        tree: RootedTree::from_parent_array(VertexId(0), parent, labels),
        origin,
    })
}

/// Whether `pairs`, read as a map from points of `a` to points of `b`, is a
/// root-invariant ε-isometry: it sends root to root, has distortion below ε,
/// and its image lies within ε of every point of `b`.
pub fn eps_isometry_check(
    pairs: &[(TreePoint, TreePoint)],
    a: &RootedTree,
    b: &RootedTree,
    eps: f64,
) -> Result<bool> {
    let mut norm = Vec::with_capacity(pairs.len());
    for &(x, y) in pairs {
        norm.push((a.normalize_point(x)?, b.normalize_point(y)?));
    }
    let ra = TreePoint::at_vertex(a.root());
    let rb = TreePoint::at_vertex(b.root());
    let root_images: Vec<TreePoint> = norm.iter().filter(|p| p.0 == ra).map(|p| p.1).collect();
    if root_images.is_empty() || root_images.iter().any(|&y| y != rb) {
        return Ok(false);
    }
    if pair_distortion(a, b, &norm) >= eps {
        return Ok(false);
    }
    let image: Vec<TreePoint> = norm.iter().map(|p| p.1).collect();
    Ok(covering_radius(b, &image)? <= eps)
}

/// Whether two rooted trees are isometric by a root-preserving isometry,
/// comparing edge lengths within `tol` after canonicalization.
pub fn rooted_isometric(a: &RootedTree, b: &RootedTree, tol: f64) -> bool {
    let a = a.canonicalize();
    let b = b.canonicalize();
    if a.num_vertices() != b.num_vertices() {
        return false;
    }
    iso(&a, a.root(), &b, b.root(), tol)
}

fn iso(a: &RootedTree, u: VertexId, b: &RootedTree, v: VertexId, tol: f64) -> bool {
    let ka = a.children(u);
    let kb = b.children(v);
    if ka.len() != kb.len() {
        return false;
    }
    let mut used = vec![false; kb.len()];
    match_children(a, ka, b, kb, 0, &mut used, tol)
}

fn match_children(
    a: &RootedTree,
    ka: &[VertexId],
    b: &RootedTree,
    kb: &[VertexId],
    i: usize,
    used: &mut [bool],
    tol: f64,
) -> bool {
    if i == ka.len() {
        return true;
    }
    for j in 0..kb.len() {
        if used[j] || (a.edge_length(ka[i]) - b.edge_length(kb[j])).abs() > tol {
            continue;
        }
        if iso(a, ka[i], b, kb[j], tol) {
            used[j] = true;
            if match_children(a, ka, b, kb, i + 1, used, tol) {
                return true;
            }
            used[j] = false;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::build_tree;

    fn seg(len: f64) -> RootedTree {
        RootedTree::segment(len)
    }

    fn at(v: usize, o: f64) -> TreePoint {
        TreePoint::on_edge(VertexId(v), o)
    }

    /// Brute-force minimum distortion over every subset of the pair grid.
    fn brute_min_distortion(dx: &[Vec<f64>], dy: &[Vec<f64>]) -> f64 {
        let m = dx.len();
        let n = dy.len();
        let cells: Vec<(usize, usize)> = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&c| c != (0, 0))
            .collect();
        let mut best = f64::INFINITY;
        for mask in 0u64..(1u64 << cells.len()) {
            let mut pairs = vec![(0, 0)];
            for (k, &c) in cells.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    pairs.push(c);
                }
            }
            let cov_x = (0..m).all(|i| pairs.iter().any(|p| p.0 == i));
            let cov_y = (0..n).all(|j| pairs.iter().any(|p| p.1 == j));
            if !(cov_x && cov_y) {
                continue;
            }
            let mut d = 0.0f64;
            for &(a, b) in &pairs {
                for &(c, e) in &pairs {
                    d = d.max((dx[a][c] - dy[b][e]).abs());
                }
            }
            best = best.min(d);
        }
        best
    }

    #[test]
    fn hausdorff_examples() {
        let t = seg(5.0);
        let a = [at(0, 0.0), at(1, 0.0)];
        let b = [at(0, 0.0), at(1, 3.0), at(1, 0.0)];
        assert_eq!(hausdorff(&t, &a, &b).unwrap(), 2.0);
        assert_eq!(hausdorff(&t, &a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&t, &[at(0, 0.0)], &[at(1, 0.0)]).unwrap(), 5.0);
        assert_eq!(hausdorff(&t, &[], &a), Err(MetricError::EmptySet));
    }

    #[test]
    fn distortion_examples() {
        let a = seg(1.0);
        let b = seg(2.0);
        let grid: Vec<(TreePoint, TreePoint)> = (0..=10)
            .map(|k| {
                let x = k as f64 / 10.0;
                (at(1, 1.0 - x), at(1, 2.0 - 2.0 * x))
            })
            .collect();
        let c = Correspondence::new(&a, &b, grid).unwrap();
        assert!((distortion(&a, &b, &c) - 1.0).abs() < 1e-12);

        let id: Vec<_> = (0..=4).map(|k| (at(1, k as f64 * 0.25), at(1, k as f64 * 0.25))).collect();
        let c = Correspondence::new(&a, &a, id).unwrap();
        assert_eq!(distortion(&a, &a, &c), 0.0);

        let t0 = RootedTree::trivial();
        let c = Correspondence::new(&t0, &t0, vec![(at(0, 0.0), at(0, 0.0))]).unwrap();
        assert_eq!(distortion(&t0, &t0, &c), 0.0);

        assert_eq!(
            Correspondence::new(&a, &b, vec![(at(1, 0.0), at(1, 0.0))]),
            Err(MetricError::MissingRootPair)
        );
    }

    #[test]
    fn branch_and_bound_matches_brute_force() {
        let a = build_tree(&[(1, 0, 1.0), (2, 1, 0.7), (3, 1, 1.3)], 0).unwrap();
        let b = build_tree(&[(1, 0, 2.0), (2, 0, 0.4)], 0).unwrap();
        let xa = delta_net(&a, 10.0).unwrap();
        let xb = delta_net(&b, 10.0).unwrap();
        let da = a.distance_matrix(&xa).unwrap();
        let db = b.distance_matrix(&xb).unwrap();
        let bb = min_rooted_distortion(&da, &db);
        let brute = brute_min_distortion(&da, &db);
        assert!((bb - brute).abs() < 1e-12, "{bb} vs {brute}");
    }

    #[test]
    fn gh_segments_one_and_two() {
        let a = seg(1.0);
        let b = seg(2.0);
        let est = gh_root_exact_capped(&a, &b, 0.25, 9).unwrap();
        assert!((est.value - 0.5).abs() <= 2.0 * 0.25, "{est:?}");
        assert!(est.error_bound <= 0.5);
        assert!(matches!(
            gh_root_exact(&a, &b, 0.25),
            Err(MetricError::NetTooLarge { required: 9, cap: 6 })
        ));
    }

    #[test]
    fn gh_identity_and_trivial() {
        let t = build_tree(&[(1, 0, 1.0), (2, 1, 2.0), (3, 1, 3.0)], 0).unwrap();
        assert_eq!(gh_root_exact(&t, &t, 10.0).unwrap().value, 0.0);
        let t0 = RootedTree::trivial();
        let v = gh_root_exact(&t0, &t, 10.0).unwrap().value;
        assert!((v - 0.5 * t.diameter()).abs() < 1e-12);
    }

    #[test]
    fn gh_bounds_examples() {
        let t = build_tree(&[(1, 0, 1.0), (2, 1, 2.0), (3, 1, 3.0)], 0).unwrap();
        let eq = gh_root_bounds(&t, &t, 0.5).unwrap();
        assert_eq!(eq.lower, 0.0);
        let s3 = seg(3.0);
        let bnd = gh_root_bounds(&RootedTree::trivial(), &s3, 0.25).unwrap();
        assert!(bnd.lower >= 1.5);
        assert!((bnd.upper - (1.5 + net_error(&s3, 0.25))).abs() < 1e-12);
    }

    #[test]
    fn quartet_shape_one() {
        let d = vec![
            vec![0.0, 3.0, 5.0, 6.0],
            vec![3.0, 0.0, 6.0, 7.0],
            vec![5.0, 6.0, 0.0, 7.0],
            vec![6.0, 7.0, 7.0, 0.0],
        ];
        let r = quartet_reconstruct(&d).unwrap();
        assert_eq!(r.shape, QuartetShape::I);
        assert_eq!(r.chi, 1.0);
        assert_eq!(r.internal, 1.0);
        assert_eq!(r.pendants, [1.0, 2.0, 3.0, 4.0]);
        let back = r.leaf_distances();
        for i in 0..4 {
            for j in 0..4 {
                assert!((back[i][j] - d[i][j]).abs() < 1e-9);
            }
        }
        // relabel 2 <-> 3
        let p = [0, 2, 1, 3];
        let d2: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| d[p[i]][p[j]]).collect()).collect();
        let r2 = quartet_reconstruct(&d2).unwrap();
        assert_eq!(r2.shape, QuartetShape::II);
        assert_eq!(r2.internal, 1.0);
        assert!(r2.chi < 0.0);
    }

    #[test]
    fn quartet_star() {
        let d: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 0.0 } else { 2.0 }).collect())
            .collect();
        let r = quartet_reconstruct(&d).unwrap();
        assert_eq!(r.shape, QuartetShape::IV);
        assert_eq!(r.chi, 0.0);
        assert_eq!(r.pendants, [1.0; 4]);
        assert_eq!(r.to_tree().unwrap().total_length(), 4.0);
    }

    #[test]
    fn trim_examples() {
        let t = trim(&seg(1.0), 0.3).unwrap();
        assert!((t.total_length() - 0.7).abs() < 1e-12);

        let y = build_tree(&[(1, 0, 1.0), (2, 1, 0.5), (3, 1, 2.0)], 0).unwrap();
        let t = trim(&y, 0.6).unwrap();
        assert!((t.total_length() - 2.4).abs() < 1e-12);
        assert!(rooted_isometric(&t, &seg(2.4), 1e-12));

        assert!(trim(&y, 10.0).unwrap().is_trivial());
        assert!(trim(&y, 0.0).is_err());
    }

    #[test]
    fn trim_matches_pointwise_definition() {
        // discretize the Y tree and keep points whose reach is at least η
        let y = build_tree(&[(1, 0, 1.0), (2, 1, 0.5), (3, 1, 2.0)], 0).unwrap();
        let eta = 0.6;
        let steps = 100_000;
        let mut kept = 0.0;
        for (v, _, len) in y.edges() {
            let h = len / steps as f64;
            for k in 0..steps {
                let o = (k as f64 + 0.5) * h;
                let p = TreePoint::on_edge(v, o);
                let reach = y
                    .leaves()
                    .iter()
                    .filter(|&&l| y.is_ancestor(p, TreePoint::at_vertex(l)).unwrap())
                    .map(|&l| y.distance(p, TreePoint::at_vertex(l)).unwrap())
                    .fold(0.0, f64::max);
                if reach >= eta {
                    kept += h;
                }
            }
        }
        assert!((kept - trim(&y, eta).unwrap().total_length()).abs() < 1e-4);
    }

    #[test]
    fn eps_isometry_examples() {
        let a = seg(1.0);
        let b = seg(2.0);
        let grid: Vec<(TreePoint, TreePoint)> = (0..=10)
            .map(|k| {
                let x = k as f64 / 10.0;
                (at(1, 1.0 - x), at(1, 2.0 - 2.0 * x))
            })
            .collect();
        assert!(eps_isometry_check(&grid, &a, &b, 1.05).unwrap());
        assert!(!eps_isometry_check(&grid, &a, &b, 0.9).unwrap());
        let no_root: Vec<_> = grid[1..].to_vec();
        assert!(!eps_isometry_check(&no_root, &a, &b, 1.05).unwrap());
        let id: Vec<_> = (0..=4).map(|k| (at(1, k as f64 * 0.25), at(1, k as f64 * 0.25))).collect();
        assert!(eps_isometry_check(&id, &a, &a, 0.3).unwrap());
    }

    #[test]
    fn covering_radius_against_sampling() {
        let t = build_tree(&[(1, 0, 1.0), (2, 1, 2.0), (3, 1, 3.0), (4, 0, 0.5)], 0).unwrap();
        let src = [at(0, 0.0), at(3, 1.0), at(2, 1.5)];
        let exact = covering_radius(&t, &src).unwrap();
        let mut approx = 0.0f64;
        for (v, _, len) in t.edges() {
            for k in 0..=2000 {
                let p = TreePoint::on_edge(v, len * k as f64 / 2000.0);
                let d = src
                    .iter()
                    .map(|&s| t.distance(p, s).unwrap())
                    .fold(f64::INFINITY, f64::min);
                approx = approx.max(d);
            }
        }
        assert!((exact - approx).abs() < 2e-3, "{exact} vs {approx}");
    }

    #[test]
    fn net_error_is_hausdorff_to_net() {
        let t = build_tree(&[(1, 0, 1.0), (2, 1, 0.7), (3, 1, 1.3)], 0).unwrap();
        let net = delta_net(&t, 0.3).unwrap();
        let cr = covering_radius(&t, &net).unwrap();
        assert!((cr - net_error(&t, 0.3)).abs() < 1e-12);
    }
}
