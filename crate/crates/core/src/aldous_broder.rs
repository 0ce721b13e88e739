//! The Aldous–Broder chain on rooted labeled trees.
//!
//! Vertices are `0..n`. A step picks a vertex `υ`; unless it is the root, the
//! edge from `υ` toward the root is erased, `υ` is joined to the old root and
//! becomes the new root. With uniform picks the chain leaves the uniform law
//! on all `n^(n−1)` rooted trees invariant. In continuous time steps come at
//! rate `n/(n−1)`, so actual jumps happen at rate 1.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use thiserror::Error;

use crate::stats::ks_unsorted;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbError {
    #[error("need at least 2 vertices, got {0}")]
    TooSmall(usize),
    #[error("exhaustive enumeration is limited to {max} vertices, got {got}")]
    TooLarge { got: usize, max: usize },
    #[error("not a rooted tree: {0}")]
    NotATree(String),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("transition matrix must be {n}x{n} with rows summing to 1")]
    BadMatrix { n: usize },
}

pub type Result<T> = std::result::Result<T, AbError>;

/// A rooted labeled tree with unit edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct CombTree {
    root: usize,
    parent: Vec<Option<usize>>,
}

impl CombTree {
    /// Validates a parent array: exactly one root, no cycles.
    pub fn new(root: usize, parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        if n < 2 {
            return Err(AbError::TooSmall(n));
        }
        if root >= n || parent[root].is_some() {
            return Err(AbError::NotATree(format!("vertex {root} is not a parentless vertex")));
        }
        for (v, p) in parent.iter().enumerate() {
            match p {
                None if v != root => return Err(AbError::NotATree(format!("second root {v}"))),
                Some(p) if *p >= n => return Err(AbError::NotATree(format!("parent {p} out of range"))),
                _ => {}
            }
        }
        let t = CombTree { root, parent };
        for v in 0..n {
            let mut u = v;
            let mut steps = 0;
            while let Some(p) = t.parent[u] {
                u = p;
                steps += 1;
                if steps > n {
                    return Err(AbError::NotATree(format!("cycle through {v}")));
                }
            }
        }
        Ok(t)
    }

    /// The path `0 − 1 − … − (n−1)` rooted at 0.
    pub fn path(n: usize) -> Result<Self> {
        let parent = (0..n).map(|v| v.checked_sub(1)).collect();
        CombTree::new(0, parent)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn depth(&self, v: usize) -> usize {
        let mut d = 0;
        let mut u = v;
        while let Some(p) = self.parent[u] {
            u = p;
            d += 1;
        }
        d
    }

    /// Whether `a` lies on the path from `v` to the root (inclusive).
    pub fn is_ancestor(&self, a: usize, v: usize) -> bool {
        let mut u = v;
        loop {
            if u == a {
                return true;
            }
            match self.parent[u] {
                Some(p) => u = p,
                None => return false,
            }
        }
    }

    /// Base-`n` code of the parent array with the root as its own parent.
    pub fn code(&self) -> u64 {
        let n = self.len() as u64;
        self.parent
            .iter()
            .enumerate()
            .rev()
            .fold(0, |acc, (v, p)| acc * n + p.unwrap_or(v) as u64)
    }

    /// Moves the root to `v`. A no-op when `v` is already the root.
    pub fn reroot_at(&mut self, v: usize) {
        if v == self.root {
            return;
        }
        let old = self.root;
        self.parent[v] = None;
        self.parent[old] = Some(v);
        self.root = v;
    }

    /// As a metric tree with unit edges; vertex ids are kept.
    pub fn to_rooted_tree(&self) -> crate::RootedTree {
        let parent = self
            .parent
            .iter()
            .map(|p| p.map(|p| (crate::VertexId(p), 1.0)))
            .collect();
        let labels = (0..self.len()).map(|v| Some(v.to_string())).collect();
        crate::RootedTree::from_parent_array(crate::VertexId(self.root), parent, labels)
    }
}

/// One step with the picked vertex given.
pub fn ab_step_with(tree: &CombTree, pick: usize) -> CombTree {
    let mut t = tree.clone();
    t.reroot_at(pick);
    t
}

/// One discrete step with a uniform pick.
pub fn ab_step<R: Rng + ?Sized>(tree: &CombTree, rng: &mut R) -> CombTree {
    ab_step_with(tree, rng.random_range(0..tree.len()))
}

/// Tallies from a continuous-time run.
#[derive(Debug, Clone, Serialize)]
pub struct AbRun {
    pub final_tree: CombTree,
    pub events: u64,
    pub no_ops: u64,
    /// Roots chosen by actual jumps, in order (kept only when requested).
    pub roots: Vec<usize>,
    /// Visit counts by tree code, sampled after every `thin`-th event.
    pub visits: BTreeMap<u64, u64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AbRunOptions {
    pub keep_roots: bool,
    /// Tally the state after every `thin`-th event; 0 disables tallies.
    pub thin: u64,
}

impl Default for AbRunOptions {
    fn default() -> Self {
        AbRunOptions {
            keep_roots: false,
            thin: 0,
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        Err(AbError::TooSmall(n))
    } else {
        Ok(())
    }
}

/// Continuous-time chain on `[0, t_max]` from `start`, steps at rate `n/(n−1)`.
pub fn simulate_ab<R: Rng + ?Sized>(start: &CombTree, t_max: f64, rng: &mut R, opts: AbRunOptions) -> Result<AbRun> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(AbError::NonPositive {
            name: "t_max",
            value: t_max,
        });
    }
    let n = start.len();
    let rate = n as f64 / (n as f64 - 1.0);
    let clock = Exp::new(rate).expect("positive rate");
    let mut run = AbRun {
        final_tree: start.clone(),
        events: 0,
        no_ops: 0,
        roots: Vec::new(),
        visits: BTreeMap::new(),
    };
    let mut t = clock.sample(rng);
    while t <= t_max {
        step_counted(&mut run, rng, opts);
        t += clock.sample(rng);
    }
    Ok(run)
}

/// Discrete chain run for a fixed number of steps.
pub fn run_ab_events<R: Rng + ?Sized>(start: &CombTree, events: u64, rng: &mut R, opts: AbRunOptions) -> AbRun {
    let mut run = AbRun {
        final_tree: start.clone(),
        events: 0,
        no_ops: 0,
        roots: Vec::new(),
        visits: BTreeMap::new(),
    };
    for _ in 0..events {
        step_counted(&mut run, rng, opts);
    }
    run
}

fn step_counted<R: Rng + ?Sized>(run: &mut AbRun, rng: &mut R, opts: AbRunOptions) {
    let tree = &mut run.final_tree;
    let v = rng.random_range(0..tree.len());
    if v == tree.root() {
        run.no_ops += 1;
    } else {
        tree.reroot_at(v);
        if opts.keep_roots {
            run.roots.push(v);
        }
    }
    run.events += 1;
    if opts.thin > 0 && run.events % opts.thin == 0 {
        *run.visits.entry(tree.code()).or_insert(0) += 1;
    }
}

pub const MAX_ENUMERATE: usize = 5;

/// All `n^(n−1)` rooted labeled trees on `n` vertices, ordered by code.
pub fn enumerate_rooted_trees(n: usize) -> Result<Vec<CombTree>> {
    check_n(n)?;
    if n > MAX_ENUMERATE {
        return Err(AbError::TooLarge {
            got: n,
            max: MAX_ENUMERATE,
        });
    }
    let total = (n as u64).pow(n as u32);
    let mut out = Vec::new();
    let mut digits = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for d in digits.iter_mut() {
            *d = (c % n as u64) as usize;
            c /= n as u64;
        }
        let roots: Vec<usize> = (0..n).filter(|&v| digits[v] == v).collect();
        if roots.len() != 1 {
            continue;
        }
        let parent = (0..n).map(|v| (digits[v] != v).then_some(digits[v])).collect();
        if let Ok(t) = CombTree::new(roots[0], parent) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Unnormalized mass `∏ P(x, y)` over edges with `y` the parent of `x`.
pub fn wform_mass(tree: &CombTree, p: &[Vec<f64>]) -> f64 {
    (0..tree.len())
        .filter_map(|x| tree.parent(x).map(|y| p[x][y]))
        .product()
}

fn check_matrix(p: &[Vec<f64>]) -> Result<()> {
    let n = p.len();
    let ok = p.iter().all(|row| {
        row.len() == n && row.iter().all(|&x| x >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-12
    });
    if ok {
        Ok(())
    } else {
        Err(AbError::BadMatrix { n })
    }
}

/// Largest deviation of `π K` from `π`, where `π` is the normalized product
/// law for `p` and `K` the chain with picks drawn from `P(root, ·)`.
pub fn kernel_residual(p: &[Vec<f64>]) -> Result<f64> {
    check_matrix(p)?;
    let states = enumerate_rooted_trees(p.len())?;
    let index: HashMap<u64, usize> = states.iter().enumerate().map(|(i, s)| (s.code(), i)).collect();
    let masses: Vec<f64> = states.iter().map(|s| wform_mass(s, p)).collect();
    let c: f64 = masses.iter().sum();
    let pi: Vec<f64> = masses.iter().map(|m| m / c).collect();
    let mut next = vec![0.0; states.len()];
    for (i, s) in states.iter().enumerate() {
        for (v, &w) in p[s.root()].iter().enumerate() {
            if w > 0.0 {
                next[index[&ab_step_with(s, v).code()]] += pi[i] * w;
            }
        }
    }
    Ok(next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// [`kernel_residual`] for uniform picks, against the uniform law.
pub fn stationarity_residual(n: usize) -> Result<f64> {
    check_n(n)?;
    let p = vec![vec![1.0 / n as f64; n]; n];
    kernel_residual(&p)
}

/// Summary of a rescaled run: space scaled by `n^(−1/2)`, time sped up by `n^(1/2)`.
#[derive(Debug, Clone, Serialize)]
pub struct RescaledRun {
    /// Rescaled times of actual jumps.
    pub times: Vec<f64>,
    /// Rescaled length of the tracked subtree after each jump.
    pub lengths: Vec<f64>,
    /// Rescaled height of the marked vertex after each jump.
    pub heights: Vec<f64>,
    pub final_length: f64,
    pub final_height: f64,
}

/// Starting tree for the rescaled experiment: the path `0 − 1 − … − (n−1)`
/// rooted at 0 with vertex `round(r·√n)` marked.
pub fn rescaled_start(n: usize, r: f64) -> Result<(CombTree, usize)> {
    let tree = CombTree::path(n)?;
    let mark = ((r * (n as f64).sqrt()).round() as usize).min(n - 1);
    Ok((tree, mark))
}

/// Runs the chain from `start` for rescaled time `t_max`. The tracked
/// subtree starts as the path from the root to `mark` and absorbs each new
/// root, which makes its rescaled length grow like root growth.
pub fn rescaled_ab<R: Rng + ?Sized>(
    start: &CombTree,
    mark: usize,
    t_max: f64,
    rng: &mut R,
    keep_series: bool,
) -> Result<RescaledRun> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(AbError::NonPositive {
            name: "t_max",
            value: t_max,
        });
    }
    let n = start.len();
    let scale = (n as f64).sqrt();
    let mut tree = start.clone();
    let mut tracked = vec![false; n];
    let mut tracked_count = 0usize;
    let mut u = mark;
    loop {
        tracked[u] = true;
        tracked_count += 1;
        match tree.parent(u) {
            Some(p) => u = p,
            None => break,
        }
    }
    let mut run = RescaledRun {
        times: Vec::new(),
        lengths: Vec::new(),
        heights: Vec::new(),
        final_length: 0.0,
        final_height: 0.0,
    };
    // actual jumps at rate 1 in chain time, chain time = √n · rescaled time
    let clock = Exp::new(1.0).expect("unit rate");
    let horizon = t_max * scale;
    let mut t = clock.sample(rng);
    while t <= horizon {
        let mut v = rng.random_range(0..n - 1);
        if v >= tree.root() {
            v += 1;
        }
        if !tracked[v] {
            tracked[v] = true;
            tracked_count += 1;
        }
        tree.reroot_at(v);
        if keep_series {
            run.times.push(t / scale);
            run.lengths.push((tracked_count - 1) as f64 / scale);
            run.heights.push(tree.depth(mark) as f64 / scale);
        }
        t += clock.sample(rng);
    }
    run.final_length = (tracked_count - 1) as f64 / scale;
    run.final_height = tree.depth(mark) as f64 / scale;
    Ok(run)
}

/// KS distance between rescaled marked heights at `t` (start height `r`)
/// and the limiting transition law.
pub fn rescaled_height_ks<R: Rng + ?Sized>(n: usize, r: f64, t: f64, replicates: usize, rng: &mut R) -> Result<f64> {
    let (start, mark) = rescaled_start(n, r)?;
    let r_actual = start.depth(mark) as f64 / (n as f64).sqrt();
    let hs: Vec<f64> = (0..replicates)
        .map(|_| rescaled_ab(&start, mark, t, rng, false).map(|run| run.final_height))
        .collect::<Result<_>>()?;
    let law = crate::rayleigh::TransitionLaw { r: r_actual, t };
    Ok(ks_unsorted(&hs, &law).expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_example_on_path() {
        // path 1−2−3 rooted at 1, pick 3 (ids shifted down by one)
        let t = CombTree::path(3).unwrap();
        let s = ab_step_with(&t, 2);
        assert_eq!(s.root(), 2);
        assert_eq!(s.parent(1), Some(0));
        assert_eq!(s.parent(0), Some(2));
        assert_eq!(ab_step_with(&t, 0), t);
    }

    #[test]
    fn two_vertices_alternate() {
        let t = CombTree::path(2).unwrap();
        let s = ab_step_with(&t, 1);
        assert_eq!(s.root(), 1);
        assert_eq!(ab_step_with(&s, 0), t);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_rooted_trees(2).unwrap().len(), 2);
        assert_eq!(enumerate_rooted_trees(3).unwrap().len(), 9);
        assert_eq!(enumerate_rooted_trees(4).unwrap().len(), 64);
        assert_eq!(enumerate_rooted_trees(5).unwrap().len(), 625);
        assert!(enumerate_rooted_trees(6).is_err());
        assert!(enumerate_rooted_trees(1).is_err());
    }

    #[test]
    fn steps_keep_tree_invariants() {
        for n in 2..=4 {
            for t in enumerate_rooted_trees(n).unwrap() {
                for v in 0..n {
                    let s = ab_step_with(&t, v);
                    assert!(CombTree::new(s.root(), s.parents().to_vec()).is_ok());
                    assert_eq!(s.parents().iter().filter(|p| p.is_some()).count(), n - 1);
                }
            }
        }
    }

    #[test]
    fn uniform_law_is_invariant() {
        for n in 2..=4 {
            assert!(stationarity_residual(n).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn product_law_is_invariant_for_general_picks() {
        let p = vec![
            vec![0.1, 0.5, 0.2, 0.2],
            vec![0.3, 0.3, 0.3, 0.1],
            vec![0.25, 0.25, 0.4, 0.1],
            vec![0.6, 0.1, 0.1, 0.2],
        ];
        assert!(kernel_residual(&p).unwrap() <= 1e-12);
    }

    #[test]
    fn uniform_wform_is_flat() {
        let p = vec![vec![1.0 / 3.0; 3]; 3];
        let masses: Vec<f64> = enumerate_rooted_trees(3).unwrap().iter().map(|t| wform_mass(t, &p)).collect();
        assert!(masses.iter().all(|&m| (m - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn no_op_fraction_and_root_uniformity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        let opts = AbRunOptions {
            keep_roots: true,
            thin: 0,
        };
        let run = run_ab_events(&CombTree::path(n).unwrap(), 200_000, &mut rng, opts);
        let frac = run.no_ops as f64 / run.events as f64;
        let se = (0.2 * 0.8 / run.events as f64).sqrt();
        assert!((frac - 0.2).abs() < 4.0 * se, "{frac}");
        let mut counts = vec![0u64; n];
        for &r in &run.roots {
            counts[r] += 1;
        }
        let stat = crate::stats::chi_square_uniform(&counts).unwrap();
        assert!(stat < crate::stats::chi_square_critical_001(n - 1), "{stat}");
    }

    #[test]
    fn actual_jumps_have_unit_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = CombTree::path(4).unwrap();
        let jumps: Vec<f64> = (0..2000)
            .map(|_| {
                let r = simulate_ab(&t, 10.0, &mut rng, AbRunOptions::default()).unwrap();
                (r.events - r.no_ops) as f64
            })
            .collect();
        let (m, se) = crate::stats::mean_se(&jumps);
        assert!((m - 10.0).abs() < 4.0 * se, "{m}");
    }

    #[test]
    fn same_seed_same_run() {
        let t = CombTree::path(6).unwrap();
        let opts = AbRunOptions {
            keep_roots: true,
            thin: 1,
        };
        let a = simulate_ab(&t, 50.0, &mut ChaCha8Rng::seed_from_u64(9), opts).unwrap();
        let b = simulate_ab(&t, 50.0, &mut ChaCha8Rng::seed_from_u64(9), opts).unwrap();
        assert_eq!(a.roots, b.roots);
        assert_eq!(a.final_tree, b.final_tree);
    }

    #[test]
    fn rescaled_length_grows_like_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let (start, mark) = rescaled_start(n, 0.5).unwrap();
        let l0 = start.depth(mark) as f64 / 100.0;
        let lens: Vec<f64> = (0..400)
            .map(|_| rescaled_ab(&start, mark, 1.0, &mut rng, false).unwrap().final_length)
            .collect();
        let (m, _) = crate::stats::mean_se(&lens);
        // growth rate is 1 − Λ/√n, so the drift is of order 1/√n
        assert!((m - (l0 + 1.0)).abs() < 0.05, "{m}");
    }
}
