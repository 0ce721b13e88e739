//! Tree serialization: rooted Newick and the JSON parent-array form.
//!
//! Newick output writes the root implicitly when it has exactly one child, so
//! a root with a single branch of length 1 above `b` prints as `(u:2,v:3)b:1;`.
//! On input, a top-level node carrying a branch length gets an implicit root
//! below it; a top-level node without one is the root itself.
//!
//! The JSON form `{"root": id, "edges": [[child, parent, length], ...]}` is the
//! interchange format. Floats are written in shortest round-trip form, so
//! writing and re-reading gives bit-identical lengths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{build_labeled_tree, RootedTree, TreeError, VertexId};

#[derive(Debug, Error)]
pub enum SerialError {
    #[error("newick parse error at byte {pos}: {msg}")]
    Newick { pos: usize, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub root: u64,
    pub edges: Vec<(u64, u64, f64)>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<u64, String>,
}

impl TreeJson {
    pub fn from_tree(tree: &RootedTree) -> Self {
        let labels = tree
            .vertices()
            .filter_map(|v| tree.label(v).map(|l| (v.0 as u64, l.to_string())))
            .collect();
        TreeJson {
            root: tree.root().0 as u64,
            edges: tree
                .edges()
                .map(|(c, p, len)| (c.0 as u64, p.0 as u64, len))
                .collect(),
            labels,
        }
    }

    pub fn into_tree(self) -> Result<RootedTree, SerialError> {
        Ok(build_labeled_tree(&self.edges, self.root, &self.labels)?)
    }
}

pub fn to_json(tree: &RootedTree) -> String {
    serde_json::to_string(&TreeJson::from_tree(tree)).expect("tree json is serializable")
}

pub fn from_json(s: &str) -> Result<RootedTree, SerialError> {
    serde_json::from_str::<TreeJson>(s)?.into_tree()
}

/// Canonical JSON of the canonicalized tree with vertices renumbered in a
/// deterministic preorder (children sorted by their own canonical text).
/// Two trees are isometric as rooted trees exactly when these strings agree,
/// up to float rounding; `round` controls the decimal digits kept.
pub fn canonical_form(tree: &RootedTree, round: u32) -> String {
    let t = tree.canonicalize();
    let scale = 10f64.powi(round as i32);
    fn enc(t: &RootedTree, v: VertexId, scale: f64) -> String {
        let mut parts: Vec<String> = t.children(v).iter().map(|&c| enc(t, c, scale)).collect();
        parts.sort();
        let len = (t.edge_length(v) * scale).round() / scale;
        format!("({}){}", parts.join(","), len)
    }
    enc(&t, t.root(), scale)
}

pub fn to_newick(tree: &RootedTree) -> String {
    let mut out = String::new();
    let root = tree.root();
    let kids = tree.children(root);
    if kids.len() == 1 && tree.label(root).is_none() {
        write_node(tree, kids[0], true, &mut out);
    } else {
        write_node(tree, root, false, &mut out);
    }
    out.push(';');
    out
}

fn write_node(tree: &RootedTree, v: VertexId, with_length: bool, out: &mut String) {
    let kids = tree.children(v);
    if !kids.is_empty() {
        out.push('(');
        for (i, &c) in kids.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_node(tree, c, true, out);
        }
        out.push(')');
    }
    if let Some(l) = tree.label(v) {
        out.push_str(&quote_label(l));
    }
    if with_length {
        out.push(':');
        out.push_str(&tree.edge_length(v).to_string());
    }
}

fn quote_label(l: &str) -> String {
    if l.chars().any(|c| "(),:;[]' \t\n".contains(c)) {
        format!("'{}'", l.replace('\'', "''"))
    } else {
        l.to_string()
    }
}

pub fn from_newick(s: &str) -> Result<RootedTree, SerialError> {
    let mut p = NewickParser {
        src: s.as_bytes(),
        pos: 0,
        edges: Vec::new(),
        labels: BTreeMap::new(),
        next: 0,
    };
    let top = p.node()?;
    p.skip_ws();
    if p.peek() != Some(b';') {
        return Err(p.err("expected ';'"));
    }
    p.pos += 1;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input after ';'"));
    }
    let root = match top.1 {
        Some(len) => {
            let r = p.fresh();
            p.edges.push((top.0, r, len));
            r
        }
        None => top.0,
    };
    Ok(build_labeled_tree(&p.edges, root, &p.labels)?)
}

struct NewickParser<'a> {
    src: &'a [u8],
    pos: usize,
    edges: Vec<(u64, u64, f64)>,
    labels: BTreeMap<u64, String>,
    next: u64,
}

impl NewickParser<'_> {
    fn err(&self, msg: &str) -> SerialError {
        SerialError::Newick {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn fresh(&mut self) -> u64 {
        self.next += 1;
        self.next - 1
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b'[' {
                while let Some(c) = self.peek() {
                    self.pos += 1;
                    if c == b']' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Parses one node; returns its id and optional branch length.
    fn node(&mut self) -> Result<(u64, Option<f64>), SerialError> {
        let id = self.fresh();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                let (c, len) = self.node()?;
                self.edges.push((c, id, len.unwrap_or(0.0)));
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
        }
        self.skip_ws();
        if let Some(label) = self.label()? {
            self.labels.insert(id, label);
        }
        self.skip_ws();
        let mut len = None;
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c.is_ascii_digit() || b"+-.eE".contains(&c) || c.is_ascii_alphabetic() {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            let v: f64 = text.parse().map_err(|_| self.err("bad branch length"))?;
            len = Some(v);
        }
        Ok((id, len))
    }

    fn label(&mut self) -> Result<Option<String>, SerialError> {
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut out = Vec::new();
            loop {
                match self.peek() {
                    None => return Err(self.err("unterminated quoted label")),
                    Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                        out.push(b'\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        break;
                    }
                    Some(c) => {
                        out.push(c);
                        self.pos += 1;
                    }
                }
            }
            return Ok(Some(String::from_utf8_lossy(&out).into_owned()));
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if b"(),:;[".contains(&c) || c.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, random_tree, TreePoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn newick_y_tree() {
        let t = from_newick("(u:2,v:3)b:1;").unwrap();
        assert_eq!(t.total_length(), 6.0);
        let u = t.find_label("u").unwrap();
        let v = t.find_label("v").unwrap();
        assert_eq!(t.distance(TreePoint::at_vertex(u), TreePoint::at_vertex(v)).unwrap(), 5.0);
        assert_eq!(t.vertex_height(u), 3.0);
        assert_eq!(to_newick(&t), "(u:2,v:3)b:1;");
    }

    #[test]
    fn newick_root_with_several_children() {
        let t = from_newick("(a:1,b:2.5);").unwrap();
        assert_eq!(t.children(t.root()).len(), 2);
        assert_eq!(to_newick(&t), "(a:1,b:2.5);");
        assert!(from_newick(";").unwrap().is_trivial());
    }

    #[test]
    fn newick_rejects_garbage() {
        assert!(from_newick("(a:1,b:2").is_err());
        assert!(from_newick("(a:x);").is_err());
        assert!(from_newick("(a:-1);").is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = random_tree(30, &mut rng);
            let s = to_json(&t);
            let back = from_json(&s).unwrap();
            assert_eq!(back, t);
            for ((_, _, a), (_, _, b)) in t.edges().zip(back.edges()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(to_json(&back), s);
        }
    }

    #[test]
    fn json_shape() {
        let t = build_tree(&[(1, 0, 0.1), (2, 0, 2.0)], 0).unwrap();
        assert_eq!(to_json(&t), r#"{"root":0,"edges":[[1,0,0.1],[2,0,2.0]]}"#);
    }

    #[test]
    fn canonical_form_ignores_child_order() {
        let a = build_tree(&[(1, 0, 1.0), (2, 0, 2.0)], 0).unwrap();
        let b = build_tree(&[(1, 0, 2.0), (2, 0, 1.0)], 0).unwrap();
        assert_eq!(canonical_form(&a, 9), canonical_form(&b, 9));
    }
}
