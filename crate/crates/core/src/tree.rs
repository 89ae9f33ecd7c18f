//! Binary regression trees over hyper-rectangular cells of `[0,1]^d`.
//!
//! Both the CART and the median growers produce a [`RegressionTree`]. Nodes
//! are stored in creation order; children are always created as a
//! `(left, right)` pair. A query point goes left when its coordinate is
//! `<= threshold`, so a left cell is `(lower, threshold]` and a right cell
//! `(threshold, upper]` along the split dimension.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub dimension: usize,
    pub threshold: f64,
    /// Parent sum of squares minus the children's sums of squares.
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Leaf,
    Internal { split: Split, left: usize, right: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Number of observations (with multiplicity) that reached the node.
    pub count: usize,
    /// Mean response of those observations.
    pub value: f64,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }
}

/// Axis-aligned cell `{x : lower_j < x_j <= upper_j}` (closed at 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Cell {
    pub fn unit(d: usize) -> Self {
        Self { lower: vec![0.0; d], upper: vec![1.0; d] }
    }

    pub fn side(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn volume(&self) -> f64 {
        (0..self.lower.len()).map(|j| self.side(j)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(j, &v)| {
            let above = if self.lower[j] == 0.0 { v >= 0.0 } else { v > self.lower[j] };
            above && v <= self.upper[j]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    d: usize,
    nodes: Vec<Node>,
}

pub(crate) fn check_query(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
    }
    if let Some((column, &value)) = x.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::QueryOutOfRange { column, value });
    }
    Ok(())
}

impl RegressionTree {
    pub(crate) fn with_root(d: usize, count: usize, value: f64) -> Self {
        Self {
            d,
            nodes: vec![Node { parent: None, depth: 0, count, value, kind: NodeKind::Leaf }],
        }
    }

    /// Turns leaf `id` into an internal node and appends its two children.
    /// Returns `(left_id, right_id)`.
    pub(crate) fn split_leaf(
        &mut self,
        id: usize,
        split: Split,
        left: (usize, f64),
        right: (usize, f64),
    ) -> (usize, usize) {
        debug_assert!(self.nodes[id].is_leaf());
        let depth = self.nodes[id].depth + 1;
        let l = self.nodes.len();
        let r = l + 1;
        for (count, value) in [left, right] {
            self.nodes.push(Node { parent: Some(id), depth, count, value, kind: NodeKind::Leaf });
        }
        self.nodes[id].kind = NodeKind::Internal { split, left: l, right: r };
        (l, r)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_leaf()).map(|(i, _)| i)
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_ids().count()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Leaf reached by `x`. No range check.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut id = 0;
        while let NodeKind::Internal { split, left, right } = self.nodes[id].kind {
            id = if x[split.dimension] <= split.threshold { left } else { right };
        }
        id
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_query(x, self.d)?;
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_of(x)].value
    }

    /// Ids on the path from the root to `id`, root first.
    pub fn path_to(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// The cell of node `id`, rebuilt from the splits on its root path.
    pub fn cell(&self, id: usize) -> Cell {
        let mut cell = Cell::unit(self.d);
        let path = self.path_to(id);
        for pair in path.windows(2) {
            if let NodeKind::Internal { split, left, .. } = self.nodes[pair[0]].kind {
                if pair[1] == left {
                    cell.upper[split.dimension] = cell.upper[split.dimension].min(split.threshold);
                } else {
                    cell.lower[split.dimension] = cell.lower[split.dimension].max(split.threshold);
                }
            }
        }
        cell
    }

    /// Line-oriented text form: a `tree` header followed by one line per
    /// node, `id parent dim threshold gain mean count`, with `-` for absent
    /// fields. Floats use shortest round-trip formatting.
    pub fn write_text<W: Write>(&self, w: &mut W, index: usize) -> Result<()> {
        writeln!(w, "tree {index} nodes {} dims {}", self.nodes.len(), self.d)?;
        for (id, node) in self.nodes.iter().enumerate() {
            let parent = node.parent.map_or("-".to_string(), |p| p.to_string());
            match node.kind {
                NodeKind::Leaf => {
                    writeln!(w, "{id} {parent} - - - {} {}", node.value, node.count)?;
                }
                NodeKind::Internal { split, .. } => writeln!(
                    w,
                    "{id} {parent} {} {} {} {} {}",
                    split.dimension, split.threshold, split.gain, node.value, node.count
                )?,
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf, 0).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses one tree written by [`RegressionTree::write_text`]. `line_no`
    /// tracks the position in the enclosing file for error messages.
    pub fn read_text<B: BufRead>(lines: &mut std::io::Lines<B>, line_no: &mut usize) -> Result<(usize, Self)> {
        let bad = |line: usize, message: String| Error::MalformedModel { line, message };
        let header = next_line(lines, line_no)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "tree" || parts[2] != "nodes" || parts[4] != "dims" {
            return Err(bad(*line_no, format!("expected tree header, found `{header}`")));
        }
        let index = parse_field(parts[1], *line_no)?;
        let n_nodes: usize = parse_field(parts[3], *line_no)?;
        let d: usize = parse_field(parts[5], *line_no)?;
        if n_nodes == 0 || d == 0 {
            return Err(bad(*line_no, "tree must have nodes and dims".into()));
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(n_nodes);
        for expected_id in 0..n_nodes {
            let line = next_line(lines, line_no)?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(bad(*line_no, format!("expected 7 fields, found {}", f.len())));
            }
            let id: usize = parse_field(f[0], *line_no)?;
            if id != expected_id {
                return Err(bad(*line_no, format!("node ids must be sequential, expected {expected_id}")));
            }
            let parent = match f[1] {
                "-" => None,
                p => Some(parse_field::<usize>(p, *line_no)?),
            };
            let value: f64 = parse_field(f[5], *line_no)?;
            let count: usize = parse_field(f[6], *line_no)?;
            let depth = match parent {
                None if id == 0 => 0,
                Some(p) if p < id => {
                    let pn = &mut nodes[p];
                    let depth = pn.depth + 1;
                    match &mut pn.kind {
                        NodeKind::Internal { left, right, .. } if *left == usize::MAX => *left = id,
                        NodeKind::Internal { left, right, .. } if *right == usize::MAX && *left != id => {
                            *right = id
                        }
                        _ => return Err(bad(*line_no, format!("node {p} cannot take child {id}"))),
                    }
                    depth
                }
                _ => return Err(bad(*line_no, format!("invalid parent for node {id}"))),
            };
            let kind = if f[2] == "-" {
                NodeKind::Leaf
            } else {
                let dimension: usize = parse_field(f[2], *line_no)?;
                if dimension >= d {
                    return Err(bad(*line_no, format!("split dimension {dimension} >= {d}")));
                }
                NodeKind::Internal {
                    split: Split {
                        dimension,
                        threshold: parse_field(f[3], *line_no)?,
                        gain: parse_field(f[4], *line_no)?,
                    },
                    left: usize::MAX,
                    right: usize::MAX,
                }
            };
            nodes.push(Node { parent, depth, count, value, kind });
        }
        if nodes.iter().any(|n| {
            matches!(n.kind, NodeKind::Internal { left, right, .. } if left == usize::MAX || right == usize::MAX)
        }) {
            return Err(bad(*line_no, "internal node without two children".into()));
        }
        Ok((index, Self { d, nodes }))
    }
}

fn next_line<B: BufRead>(lines: &mut std::io::Lines<B>, line_no: &mut usize) -> Result<String> {
    *line_no += 1;
    match lines.next() {
        Some(Ok(l)) => Ok(l),
        Some(Err(e)) => Err(Error::Write(e)),
        None => Err(Error::MalformedModel { line: *line_no, message: "unexpected end of file".into() }),
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::MalformedModel { line, message: format!("cannot parse `{s}`") })
}
