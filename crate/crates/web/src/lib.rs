//! Browser bindings: a growing RGR tree that can be stepped and trimmed,
//! line-breaking trees, and the Rayleigh height histogram.

use serde_json::json;
use wasm_bindgen::prelude::*;

use retree::metric::trim;
use retree::rayleigh::{pdmp_value_at, TransitionLaw};
use retree::rgr::{simulate_line_breaking, GrowingTree, RgrError};
use retree::rng::{replicate_rng, SimRng};
use retree::stats::Cdf;
use retree::RootedTree;

/// Tidy layout: leaves spread evenly on x, y is height above the root.
fn layout(tree: &RootedTree) -> serde_json::Value {
    let n = tree.num_vertices();
    let mut x = vec![0.0f64; n];
    let mut next_leaf = 0.0;
    // iterative post-order so deep trees do not blow the wasm stack
    let mut stack = vec![(tree.root(), false)];
    while let Some((v, done)) = stack.pop() {
        let kids = tree.children(v);
        if kids.is_empty() {
            x[v.0] = next_leaf;
            next_leaf += 1.0;
        } else if done {
            let sum: f64 = kids.iter().map(|c| x[c.0]).sum();
            x[v.0] = sum / kids.len() as f64;
        } else {
            stack.push((v, true));
            for &c in kids.iter().rev() {
                stack.push((c, false));
            }
        }
    }
    let width = (next_leaf - 1.0).max(1.0);
    let nodes: Vec<_> = tree
        .vertices()
        .map(|v| {
            json!({
                "x": x[v.0] / width,
                "y": tree.vertex_height(v),
                "leaf": tree.is_leaf(v) && v != tree.root(),
                "label": tree.label(v),
            })
        })
        .collect();
    let edges: Vec<_> = tree.edges().map(|(c, p, _)| [c.0, p.0]).collect();
    json!({
        "nodes": nodes,
        "edges": edges,
        "root": tree.root().0,
        "height": tree.tree_height(),
        "length": tree.total_length(),
    })
}

/// A root-growth-with-re-grafting run started from the one-point tree.
#[wasm_bindgen]
pub struct RgrDemo {
    tree: GrowingTree,
    rng: SimRng,
    next_cut: f64,
    cuts: u32,
}

#[wasm_bindgen]
impl RgrDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> RgrDemo {
        let mut rng = replicate_rng(seed, 0);
        let next_cut = retree::rayleigh::next_delay(0.0, &mut rng);
        RgrDemo {
            tree: GrowingTree::new(&RootedTree::trivial()),
            rng,
            next_cut,
            cuts: 0,
        }
    }

    /// Advances time by `dt`, applying every cut that falls inside.
    pub fn advance(&mut self, dt: f64) -> Result<(), JsError> {
        let target = self.tree.time() + dt.max(0.0);
        while self.next_cut <= target {
            self.tree.grow_to(self.next_cut)?;
            if let Some(p) = self.tree.sample_point(&mut self.rng) {
                match self.tree.cut_at(p) {
                    Ok(_) => self.cuts += 1,
                    Err(RgrError::CutAtRoot) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            let len = self.tree.total_length();
            self.next_cut += retree::rayleigh::next_delay(len, &mut self.rng);
        }
        self.tree.grow_to(target)?;
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.tree.time()
    }

    pub fn cuts(&self) -> u32 {
        self.cuts
    }

    /// Layout of the current tree, trimmed at `eta` when it is positive.
    pub fn layout(&self, eta: f64) -> Result<String, JsError> {
        let snap = self.tree.snapshot().canonicalize();
        let shown = if eta > 0.0 { trim(&snap, eta)? } else { snap };
        Ok(layout(&shown).to_string())
    }
}

/// Layout of a line-breaking tree with `n` leaves.
#[wasm_bindgen]
pub fn line_breaking(n: usize, seed: u64) -> Result<String, JsError> {
    let lb = simulate_line_breaking(n.max(1), &mut replicate_rng(seed, 0))?;
    Ok(layout(&lb.tree).to_string())
}

/// Histogram of the height process at time `t` from `r0` next to the exact
/// transition law, as JSON `{width, empirical, exact, atom}`.
#[wasm_bindgen]
pub fn rayleigh_histogram(r0: f64, t: f64, samples: usize, bins: usize, seed: u64) -> String {
    let bins = bins.max(1);
    let top = r0 + t;
    let width = top / bins as f64;
    let mut rng = replicate_rng(seed, 0);
    let mut counts = vec![0usize; bins];
    let mut at_top = 0usize;
    for _ in 0..samples {
        let x = pdmp_value_at(r0, t, &mut rng);
        if x >= top {
            at_top += 1;
        } else {
            counts[((x / width) as usize).min(bins - 1)] += 1;
        }
    }
    let law = TransitionLaw { r: r0, t };
    let n = samples.max(1) as f64;
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let exact: Vec<f64> = (0..bins)
        .map(|i| {
            let a = i as f64 * width;
            law.cdf_left((a + width).min(top)) - law.cdf_left(a)
        })
        .collect();
    json!({
        "width": width,
        "empirical": empirical,
        "exact": exact,
        "atom": { "empirical": at_top as f64 / n, "exact": law.cdf(top) - law.cdf_left(top) },
    })
    .to_string()
}

#[doc(hidden)]
pub fn vertex_count(layout_json: &str) -> usize {
    serde_json::from_str::<serde_json::Value>(layout_json)
        .ok()
        .and_then(|v| v["nodes"].as_array().map(|a| a.len()))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_runs_natively() {
        let mut d = RgrDemo::new(1);
        d.advance(3.0).unwrap();
        assert!((d.time() - 3.0).abs() < 1e-12);
        let full = d.layout(0.0).unwrap();
        let trimmed = d.layout(0.5).unwrap();
        assert!(vertex_count(&trimmed) <= vertex_count(&full));
        let v: serde_json::Value = serde_json::from_str(&full).unwrap();
        assert!((v["length"].as_f64().unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_mass_sums_to_one() {
        let h: serde_json::Value = serde_json::from_str(&rayleigh_histogram(0.5, 1.0, 2000, 20, 3)).unwrap();
        let exact: f64 = h["exact"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        let atom = h["atom"]["exact"].as_f64().unwrap();
        assert!((exact + atom - 1.0).abs() < 1e-9);
        assert_eq!(line_breaking(4, 1).map(|s| vertex_count(&s)).unwrap(), 8);
    }

    #[test]
    fn layout_handles_the_point() {
        let v = layout(&RootedTree::trivial());
        assert_eq!(v["nodes"].as_array().unwrap().len(), 1);
    }
}
