//! Interaction machinery: per-attribute pivot trees with round-robin
//! question selection, and the typed requests the engine can issue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ItemId};
use crate::relevance::{FeedbackConstraint, Polarity};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InteractionError {
    #[error("attribute {0} has no live pivot")]
    Exhausted(usize),
    #[error("attribute index {attr} out of range (m = {m})")]
    BadAttribute { attr: usize, m: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Node {
    item: ItemId,
    left: Option<usize>,
    right: Option<usize>,
    // Half-open span of this subtree in score-sorted order.
    lo: usize,
    hi: usize,
}

/// Balanced binary search tree over all items, keyed by one attribute's
/// score (ties by id). Each node's pivot is the lower median of its span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotTree {
    attr: usize,
    nodes: Vec<Node>,
    root: usize,
}

impl PivotTree {
    pub fn build(catalog: &Catalog, attr: usize) -> Self {
        let mut sorted: Vec<ItemId> = (0..catalog.len()).collect();
        sorted.sort_by(|&a, &b| catalog.attr(a, attr).total_cmp(&catalog.attr(b, attr)).then(a.cmp(&b)));
        let mut nodes = Vec::with_capacity(sorted.len());
        let root = Self::build_span(&sorted, 0, sorted.len(), &mut nodes).expect("catalog has items");
        Self { attr, nodes, root }
    }

    fn build_span(sorted: &[ItemId], lo: usize, hi: usize, nodes: &mut Vec<Node>) -> Option<usize> {
        if lo >= hi {
            return None;
        }
        let mid = lo + (hi - lo - 1) / 2;
        let idx = nodes.len();
        nodes.push(Node { item: sorted[mid], left: None, right: None, lo, hi });
        let left = Self::build_span(sorted, lo, mid, nodes);
        let right = Self::build_span(sorted, mid + 1, hi, nodes);
        nodes[idx].left = left;
        nodes[idx].right = right;
        Some(idx)
    }

    pub fn attr(&self) -> usize {
        self.attr
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pivot(&self, node: usize) -> ItemId {
        self.nodes[node].item
    }

    pub fn left(&self, node: usize) -> Option<usize> {
        self.nodes[node].left
    }

    pub fn right(&self, node: usize) -> Option<usize> {
        self.nodes[node].right
    }

    /// Number of items in the subtree rooted at `node`.
    pub fn span_len(&self, node: usize) -> usize {
        self.nodes[node].hi - self.nodes[node].lo
    }

    pub fn depth(&self) -> usize {
        fn go(t: &PivotTree, n: Option<usize>) -> usize {
            n.map_or(0, |i| 1 + go(t, t.nodes[i].left).max(go(t, t.nodes[i].right)))
        }
        go(self, Some(self.root))
    }

    pub fn in_order(&self) -> Vec<ItemId> {
        fn go(t: &PivotTree, n: Option<usize>, out: &mut Vec<ItemId>) {
            if let Some(i) = n {
                go(t, t.nodes[i].left, out);
                out.push(t.nodes[i].item);
                go(t, t.nodes[i].right, out);
            }
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        go(self, Some(self.root), &mut out);
        out
    }
}

pub fn build_pivot_trees(catalog: &Catalog) -> Vec<PivotTree> {
    (0..catalog.m()).map(|a| PivotTree::build(catalog, a)).collect()
}

/// Per-session cursor state for round-robin pivot questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRobinState {
    order: Vec<usize>,
    next_ptr: usize,
    /// Current node per attribute; `None` once the attribute is exhausted.
    cursors: Vec<Option<usize>>,
}

impl RoundRobinState {
    /// Ascending attribute order, every cursor at its tree root.
    pub fn new(trees: &[PivotTree]) -> Self {
        Self {
            order: (0..trees.len()).collect(),
            next_ptr: 0,
            cursors: trees.iter().map(|t| Some(t.root())).collect(),
        }
    }

    pub fn cursor(&self, attr: usize) -> Option<usize> {
        self.cursors.get(attr).copied().flatten()
    }

    pub fn is_exhausted(&self, attr: usize) -> bool {
        self.cursor(attr).is_none()
    }

    /// Marks an attribute exhausted without descending.
    pub fn exhaust(&mut self, attr: usize) {
        if let Some(c) = self.cursors.get_mut(attr) {
            *c = None;
        }
    }

    /// Current pivot of the next live attribute in rotation; advances the
    /// rotation past it. `None` when every attribute is exhausted.
    pub fn next_question(&mut self, trees: &[PivotTree]) -> Option<(usize, ItemId)> {
        let len = self.order.len();
        for step in 0..len {
            let pos = (self.next_ptr + step) % len;
            let attr = self.order[pos];
            if let Some(node) = self.cursors[attr] {
                self.next_ptr = (pos + 1) % len;
                return Some((attr, trees[attr].pivot(node)));
            }
        }
        None
    }

    /// Moves an attribute's cursor according to the user's answer: `more`
    /// goes right, `less` goes left, `equal` (or falling off the tree)
    /// exhausts the attribute.
    pub fn descend(&mut self, trees: &[PivotTree], attr: usize, response: Polarity) -> Result<(), InteractionError> {
        let m = self.cursors.len();
        let slot = self.cursors.get_mut(attr).ok_or(InteractionError::BadAttribute { attr, m })?;
        let node = slot.ok_or(InteractionError::Exhausted(attr))?;
        *slot = match response {
            Polarity::More => trees[attr].right(node),
            Polarity::Less => trees[attr].left(node),
            Polarity::Equal => None,
        };
        Ok(())
    }
}

/// What the engine asks of the user at one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionRequest {
    FreeForm,
    Question { attr: usize, pivot_id: ItemId },
    SketchRequest,
}

pub fn question_to_constraint(attr: usize, pivot_id: ItemId, response: Polarity) -> FeedbackConstraint {
    FeedbackConstraint::AttributeCompare { attr, ref_id: pivot_id, polarity: response }
}
