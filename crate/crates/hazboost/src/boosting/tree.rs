//! Regression-tree structure shared by training and prediction.

use serde::{Deserialize, Serialize};

use crate::codes::MISSING_CODE;

/// One node of a tree. Nodes are stored in a flat vector; children are
/// referenced by index, with node 0 the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        /// 0 = time, `k >= 1` = covariate `k - 1`.
        axis: u32,
        /// Index into the axis's candidate list. The semantic rule is
        /// "value <= candidate" goes left, which in shifted codes is
        /// `code <= threshold_idx`; the below-minimum cell (code 0) always
        /// goes left.
        threshold_idx: u16,
        /// Where rows with a missing value on this axis go.
        missing_left: bool,
        /// Risk change `d` of this split, always negative.
        score: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Log-hazard increment; applied to the ensemble as `F -= nu * value`.
        value: f64,
    },
}

/// A fixed-depth binary tree over grid-cell codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// A tree consisting of a single leaf.
    pub fn single_leaf(value: f64) -> Tree {
        Tree { nodes: vec![Node::Leaf { value }] }
    }

    /// Routes a point to its leaf value. `code_of(axis)` must return the
    /// point's shifted bin code on that axis ([`MISSING_CODE`] for missing).
    pub fn route(&self, mut code_of: impl FnMut(usize) -> u16) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { axis, threshold_idx, missing_left, left, right, .. } => {
                    let code = code_of(*axis as usize);
                    let go_left = if code == MISSING_CODE {
                        *missing_left
                    } else {
                        code <= *threshold_idx
                    };
                    i = if go_left { *left as usize } else { *right as usize };
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// True when the tree is a single leaf (the root could not split).
    pub fn is_stump(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Longest root-to-leaf path length in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Iterates over internal nodes.
    pub fn splits(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. }))
    }
}
