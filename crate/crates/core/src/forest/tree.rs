use crate::dataset::CovariateMatrix;

/// Binary tree node. Routing goes left iff `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub enum Node<L> {
    Leaf(L),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat arena of nodes; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn leaf_index(&self, x: &CovariateMatrix, row: usize) -> usize {
        self.route(|f| x.get(row, f))
    }

    pub fn leaf_index_for(&self, row: &[f64]) -> usize {
        self.route(|f| row[f])
    }

    fn route(&self, value: impl Fn(usize) -> f64) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(_) => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if value(*feature) <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn leaf(&self, index: usize) -> &L {
        match &self.nodes[index] {
            Node::Leaf(l) => l,
            Node::Split { .. } => panic!("node {index} is not a leaf"),
        }
    }

    pub fn leaf_for(&self, x: &CovariateMatrix, row: usize) -> &L {
        self.leaf(self.leaf_index(x, row))
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &L)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Leaf(l) => Some((i, l)),
            Node::Split { .. } => None,
        })
    }
}

/// Recursive builder shared by the regression and survival growers.
pub(crate) struct Builder<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Builder<L> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Reserve a slot, filled later by `set`.
    pub fn reserve(&mut self, placeholder: L) -> usize {
        self.nodes.push(Node::Leaf(placeholder));
        self.nodes.len() - 1
    }

    pub fn set(&mut self, index: usize, node: Node<L>) {
        self.nodes[index] = node;
    }

    pub fn finish(self) -> Tree<L> {
        Tree { nodes: self.nodes }
    }
}

/// Stable partition of `samples` by `x[feature] <= threshold`.
pub(crate) fn partition(
    x: &CovariateMatrix,
    samples: &[usize],
    feature: usize,
    threshold: f64,
) -> (Vec<usize>, Vec<usize>) {
    let col = x.column(feature);
    samples.iter().partition(|&&i| col[i] <= threshold)
}
