//! Neural decision trees: a decision-node layer, a fixed binary routing
//! layer, and a leaf layer.
//!
//! A tree with `n` decision nodes and `n + 1` leaves is evaluated in three
//! steps. The node layer computes a signed score per node for both the
//! positive and negative branch, `[z, -z]` with `z_i = w_i . x + b_i`. A
//! pairwise log-softmax over each node's branch pair (scaled by
//! `routing_temperature`) turns scores into per-branch log routing
//! probabilities. The frozen routing matrix sums, per leaf, the log
//! probabilities of the branches on that leaf's root path, so
//! `exp(leaf_logprob)` are path probabilities that add up to 1. The output
//! is the probability-weighted combination of the trainable per-leaf value
//! rows.
//!
//! The softmax is taken per node pair rather than across all `2n` branch
//! scores; a global softmax would not make the per-leaf path probabilities
//! multiply along root paths.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Matrix};

/// A child reference inside a [`TreeTopology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Child {
    Node(usize),
    Leaf(usize),
}

/// Children of one decision node. `left` is the positive branch, taken when
/// the node score is `>= 0`; `right` is the negative branch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NodeChildren {
    pub left: Child,
    pub right: Child,
}

/// Shape of a proper binary tree with `n` nodes and `n + 1` leaves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeTopology {
    nodes: Vec<NodeChildren>,
    root: usize,
}

impl TreeTopology {
    /// Validates that every node and leaf is reachable from the root by
    /// exactly one path and that leaf ids cover `0..n+1`.
    pub fn new(nodes: Vec<NodeChildren>, root: usize) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Topology("tree has no decision nodes".into()));
        }
        if root >= n {
            return Err(Error::Topology(format!("root {root} out of range")));
        }
        let mut node_seen = vec![false; n];
        let mut leaf_seen = vec![false; n + 1];
        let mut stack = vec![root];
        node_seen[root] = true;
        let mut visited_nodes = 0;
        while let Some(i) = stack.pop() {
            visited_nodes += 1;
            for child in [nodes[i].left, nodes[i].right] {
                match child {
                    Child::Node(c) => {
                        if c >= n {
                            return Err(Error::Topology(format!("node ref {c} out of range")));
                        }
                        if node_seen[c] {
                            return Err(Error::Topology(format!("node {c} has two parents")));
                        }
                        node_seen[c] = true;
                        stack.push(c);
                    }
                    Child::Leaf(l) => {
                        if l > n {
                            return Err(Error::Topology(format!("leaf ref {l} out of range")));
                        }
                        if leaf_seen[l] {
                            return Err(Error::Topology(format!("leaf {l} has two parents")));
                        }
                        leaf_seen[l] = true;
                    }
                }
            }
        }
        if visited_nodes != n {
            return Err(Error::Topology("unreachable decision nodes".into()));
        }
        // n nodes reached once each and n+1 leaf slots with no duplicates
        // forces every leaf to be present.
        Ok(TreeTopology { nodes, root })
    }

    /// Complete binary tree of the given depth (`2^depth - 1` nodes).
    pub fn complete(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Topology("depth must be at least 1".into()));
        }
        let n = (1usize << depth) - 1;
        let nodes = (0..n)
            .map(|i| {
                let child = |c: usize| {
                    if c < n {
                        Child::Node(c)
                    } else {
                        Child::Leaf(c - n)
                    }
                };
                NodeChildren {
                    left: child(2 * i + 1),
                    right: child(2 * i + 2),
                }
            })
            .collect();
        TreeTopology::new(nodes, 0)
    }

    /// Degenerate chain: each node's right child is a leaf and the left
    /// child continues the chain.
    pub fn chain(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("chain needs at least one node".into()));
        }
        let nodes = (0..n)
            .map(|i| NodeChildren {
                left: if i + 1 < n {
                    Child::Node(i + 1)
                } else {
                    Child::Leaf(n)
                },
                right: Child::Leaf(i),
            })
            .collect();
        TreeTopology::new(nodes, 0)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.len() + 1
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn children(&self, node: usize) -> NodeChildren {
        self.nodes[node]
    }

    /// Root path of every leaf as `(node, took_positive_branch)` pairs,
    /// indexed by leaf id.
    pub fn leaf_paths(&self) -> Vec<Vec<(usize, bool)>> {
        let mut paths = vec![Vec::new(); self.leaf_count()];
        let mut stack = vec![(self.root, Vec::new())];
        while let Some((i, prefix)) = stack.pop() {
            for (child, positive) in [(self.nodes[i].left, true), (self.nodes[i].right, false)] {
                let mut path = prefix.clone();
                path.push((i, positive));
                match child {
                    Child::Node(c) => stack.push((c, path)),
                    Child::Leaf(l) => paths[l] = path,
                }
            }
        }
        paths
    }
}

/// Frozen binary matrix mapping the `2n` signed branch decisions to the
/// `n + 1` leaves. Row `j` has a 1 in column `i` when leaf `j`'s root path
/// takes node `i`'s positive branch, and in column `n + i` when it takes
/// the negative branch. Never updated by training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutingMatrix {
    matrix: Matrix,
    nodes: usize,
}

impl RoutingMatrix {
    pub fn build(topology: &TreeTopology) -> Result<Self> {
        let n = topology.node_count();
        let leaves = topology.leaf_count();
        let mut matrix = Matrix::zeros(leaves, 2 * n);
        for (leaf, path) in topology.leaf_paths().iter().enumerate() {
            for &(node, positive) in path {
                let col = if positive { node } else { n + node };
                matrix.set(leaf, col, 1.0);
            }
        }
        Ok(RoutingMatrix { matrix, nodes: n })
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.matrix.rows()
    }
}

/// Convenience wrapper: topology validation plus routing-matrix
/// construction.
pub fn build_routing_matrix(topology: &TreeTopology) -> Result<RoutingMatrix> {
    RoutingMatrix::build(topology)
}

/// Per-example activations of a tree forward pass.
#[derive(Debug, Clone)]
pub struct TreeActivations {
    /// Branch scores `[z, -z]`, length `2n`, before temperature scaling.
    pub h1: Vec<f64>,
    /// Log path probability per leaf; `sum(exp)` is 1 within 1e-9.
    pub leaf_logprob: Vec<f64>,
    /// Probability-weighted combination of leaf value rows.
    pub output: Vec<f64>,
}

/// Gradients of a scalar loss with respect to tree parameters and input.
#[derive(Debug, Clone)]
pub struct TreeGradients {
    pub node_weights: Matrix,
    pub bias: Vec<f64>,
    pub leaf_values: Matrix,
    pub input: Vec<f64>,
}

/// A trainable neural decision tree.
///
/// Trainable parameters are the node weights/biases and the leaf value
/// matrix; the routing matrix is fixed at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuralDecisionTree {
    /// One row per decision node, `n x k`.
    node_weights: Matrix,
    /// One bias per decision node.
    bias: Vec<f64>,
    /// One value row per leaf, `(n + 1) x c`.
    leaf_values: Matrix,
    routing: RoutingMatrix,
    topology: TreeTopology,
    routing_temperature: f64,
}

impl NeuralDecisionTree {
    /// Fresh tree: node weights uniform in `(-1/sqrt(k), 1/sqrt(k))`, zero
    /// biases, zero leaf values (so an untrained tree outputs zero).
    pub fn new(
        topology: TreeTopology,
        n_features: usize,
        output_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_features == 0 || output_width == 0 {
            return Err(Error::InvalidArgument(
                "tree needs at least one feature and one output".into(),
            ));
        }
        let routing = RoutingMatrix::build(&topology)?;
        let n = topology.node_count();
        let scale = 1.0 / (n_features as f64).sqrt();
        Ok(NeuralDecisionTree {
            node_weights: Matrix::random_uniform(n, n_features, -scale, scale, rng),
            bias: vec![0.0; n],
            leaf_values: Matrix::zeros(n + 1, output_width),
            routing,
            topology,
            routing_temperature: 1.0,
        })
    }

    pub fn n_features(&self) -> usize {
        self.node_weights.cols()
    }

    pub fn node_count(&self) -> usize {
        self.node_weights.rows()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_values.rows()
    }

    pub fn output_width(&self) -> usize {
        self.leaf_values.cols()
    }

    pub fn topology(&self) -> &TreeTopology {
        &self.topology
    }

    pub fn routing(&self) -> &RoutingMatrix {
        &self.routing
    }

    pub fn routing_temperature(&self) -> f64 {
        self.routing_temperature
    }

    pub fn set_routing_temperature(&mut self, temperature: f64) -> Result<()> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "routing temperature must be positive and finite, got {temperature}"
            )));
        }
        self.routing_temperature = temperature;
        Ok(())
    }

    pub fn node_weights(&self) -> &Matrix {
        &self.node_weights
    }

    pub fn node_weights_mut(&mut self) -> &mut Matrix {
        &mut self.node_weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn leaf_values(&self) -> &Matrix {
        &self.leaf_values
    }

    pub fn leaf_values_mut(&mut self) -> &mut Matrix {
        &mut self.leaf_values
    }

    fn node_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features() {
            return Err(Error::LengthMismatch {
                op: "tree forward",
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok((0..self.node_count())
            .map(|i| math::dot(self.node_weights.row(i), x) + self.bias[i])
            .collect())
    }

    /// Soft-routing forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<TreeActivations> {
        let n = self.node_count();
        let z = self.node_scores(x)?;
        let mut h1 = Vec::with_capacity(2 * n);
        h1.extend_from_slice(&z);
        h1.extend(z.iter().map(|v| -v));

        // pairwise log-softmax over each node's (positive, negative) branch
        // pair; with scores (a, -a) this is -softplus(∓2a)
        let temp = self.routing_temperature;
        let mut branch_logprob = vec![0.0; 2 * n];
        for (i, &zi) in z.iter().enumerate() {
            let a = temp * zi;
            branch_logprob[i] = -math::softplus(-2.0 * a);
            branch_logprob[n + i] = -math::softplus(2.0 * a);
        }

        let leaf_logprob = self.routing.as_matrix().matvec(&branch_logprob)?;
        let leaf_prob: Vec<f64> = leaf_logprob.iter().map(|l| l.exp()).collect();
        let output = self.leaf_values.matvec_transposed(&leaf_prob)?;
        Ok(TreeActivations {
            h1,
            leaf_logprob,
            output,
        })
    }

    /// Gradients of a scalar loss given `d loss / d output`.
    pub fn backward(
        &self,
        x: &[f64],
        activations: &TreeActivations,
        grad_output: &[f64],
    ) -> Result<TreeGradients> {
        let n = self.node_count();
        let leaves = self.leaf_count();
        let k = self.n_features();
        if grad_output.len() != self.output_width() {
            return Err(Error::LengthMismatch {
                op: "tree backward",
                expected: self.output_width(),
                got: grad_output.len(),
            });
        }

        let mut d_leaf_values = Matrix::zeros(leaves, self.output_width());
        // weight of each leaf's log-probability in the loss
        let mut leaf_pull = vec![0.0; leaves];
        for j in 0..leaves {
            let prob = activations.leaf_logprob[j].exp();
            let sensitivity = math::dot(self.leaf_values.row(j), grad_output);
            leaf_pull[j] = prob * sensitivity;
            let row = j * self.output_width();
            for (c, &g) in grad_output.iter().enumerate() {
                d_leaf_values.as_mut_slice()[row + c] = prob * g;
            }
        }

        // pull apart by branch column through the routing matrix
        let q = self.routing.as_matrix();
        let mut pos_pull = vec![0.0; n];
        let mut neg_pull = vec![0.0; n];
        for (j, &pull) in leaf_pull.iter().enumerate() {
            if pull == 0.0 {
                continue;
            }
            let row = q.row(j);
            for i in 0..n {
                pos_pull[i] += row[i] * pull;
                neg_pull[i] += row[n + i] * pull;
            }
        }

        let temp = self.routing_temperature;
        let mut d_weights = Matrix::zeros(n, k);
        let mut d_bias = vec![0.0; n];
        let mut d_input = vec![0.0; k];
        for i in 0..n {
            let a = temp * activations.h1[i];
            let p_pos = math::sigmoid(2.0 * a);
            // d log p_pos / d a = 2 (1 - p_pos); d log p_neg / d a = -2 p_pos
            let da = 2.0 * (1.0 - p_pos) * pos_pull[i] - 2.0 * p_pos * neg_pull[i];
            let dz = temp * da;
            d_bias[i] = dz;
            let w_row = self.node_weights.row(i);
            let d_row = &mut d_weights.as_mut_slice()[i * k..(i + 1) * k];
            for f in 0..k {
                d_row[f] = dz * x[f];
                d_input[f] += dz * w_row[f];
            }
        }

        Ok(TreeGradients {
            node_weights: d_weights,
            bias: d_bias,
            leaf_values: d_leaf_values,
            input: d_input,
        })
    }

    /// Hard routing: at each node take the positive branch exactly when
    /// `w_i . x + b_i >= 0` (ties route positive). Returns the reached leaf
    /// and its value row.
    pub fn forward_deterministic(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let z = self.node_scores(x)?;
        let mut at = self.topology.root();
        loop {
            let children = self.topology.children(at);
            let next = if z[at] >= 0.0 {
                children.left
            } else {
                children.right
            };
            match next {
                Child::Node(i) => at = i,
                Child::Leaf(l) => return Ok((l, self.leaf_values.row(l).to_vec())),
            }
        }
    }

    /// In-place SGD step. The routing matrix is untouched.
    pub fn apply_gradients(&mut self, grads: &TreeGradients, learning_rate: f64) -> Result<()> {
        self.node_weights
            .add_scaled(&grads.node_weights, -learning_rate)?;
        math::add_scaled_slice(&mut self.bias, &grads.bias, -learning_rate);
        self.leaf_values
            .add_scaled(&grads.leaf_values, -learning_rate)?;
        Ok(())
    }

    /// Converts a classical axis-aligned tree: node with split `(feature f,
    /// threshold t)` gets weight row `e_f` and bias `-t`, so the positive
    /// branch is taken exactly when `x[f] >= t`.
    pub fn import(spec: &TreeImportSpec) -> Result<Self> {
        let topology = spec.resolve()?;
        let n = spec.nodes.len();
        let leaves = spec.leaves.len();
        let width = spec.leaves[0].value.len();
        let mut node_weights = Matrix::zeros(n, spec.n_features);
        let mut bias = vec![0.0; n];
        for (internal, node) in spec.nodes.iter().enumerate() {
            node_weights.set(internal, node.feature_index, 1.0);
            bias[internal] = -node.threshold;
        }
        let mut leaf_values = Matrix::zeros(leaves, width);
        for (internal, leaf) in spec.leaves.iter().enumerate() {
            for (c, &v) in leaf.value.iter().enumerate() {
                leaf_values.set(internal, c, v);
            }
        }
        let routing = RoutingMatrix::build(&topology)?;
        Ok(NeuralDecisionTree {
            node_weights,
            bias,
            leaf_values,
            routing,
            topology,
            routing_temperature: 1.0,
        })
    }

    /// Inverse of [`import`](Self::import). Requires every node weight row
    /// to be axis-aligned (exactly one nonzero entry); a negative weight is
    /// folded into the threshold by swapping the branches.
    pub fn export(&self) -> Result<TreeImportSpec> {
        let n = self.node_count();
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let row = self.node_weights.row(i);
            let nonzero: Vec<usize> = (0..row.len()).filter(|&f| row[f] != 0.0).collect();
            if nonzero.len() != 1 {
                return Err(Error::TreeExport(format!(
                    "node {i} is not axis-aligned: {} nonzero weights",
                    nonzero.len()
                )));
            }
            let feature = nonzero[0];
            let scale = row[feature];
            let threshold = -self.bias[i] / scale;
            let as_id = |c: Child| match c {
                Child::Node(j) => j as u64,
                Child::Leaf(l) => (n + l) as u64,
            };
            let children = self.topology.children(i);
            let (left, right) = if scale > 0.0 {
                (children.left, children.right)
            } else {
                (children.right, children.left)
            };
            nodes.push(NodeSpec {
                id: i as u64,
                feature_index: feature,
                threshold,
                left: as_id(left),
                right: as_id(right),
            });
        }
        let leaves = (0..self.leaf_count())
            .map(|l| LeafSpec {
                id: (n + l) as u64,
                value: self.leaf_values.row(l).to_vec(),
            })
            .collect();
        Ok(TreeImportSpec {
            n_features: self.n_features(),
            nodes,
            leaves,
        })
    }
}

/// JSON document describing a classical axis-aligned decision tree.
///
/// `left`/`right` reference node or leaf `id`s; ids share one namespace and
/// must be unique. The left branch is taken when `x[feature_index] >=
/// threshold`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeImportSpec {
    pub n_features: usize,
    pub nodes: Vec<NodeSpec>,
    pub leaves: Vec<LeafSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u64,
    pub feature_index: usize,
    pub threshold: f64,
    pub left: u64,
    pub right: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafSpec {
    pub id: u64,
    pub value: Vec<f64>,
}

impl TreeImportSpec {
    /// Validates ids and references and maps the document onto a
    /// [`TreeTopology`]. Internal indices follow document order.
    fn resolve(&self) -> Result<TreeTopology> {
        if self.nodes.is_empty() {
            return Err(Error::TreeImport("no decision nodes".into()));
        }
        if self.leaves.len() != self.nodes.len() + 1 {
            return Err(Error::TreeImport(format!(
                "{} nodes need {} leaves, got {}",
                self.nodes.len(),
                self.nodes.len() + 1,
                self.leaves.len()
            )));
        }
        let mut ids: HashMap<u64, Child> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if ids.insert(node.id, Child::Node(i)).is_some() {
                return Err(Error::TreeImport(format!("duplicate id {}", node.id)));
            }
        }
        for (l, leaf) in self.leaves.iter().enumerate() {
            if ids.insert(leaf.id, Child::Leaf(l)).is_some() {
                return Err(Error::TreeImport(format!("duplicate id {}", leaf.id)));
            }
        }
        let width = self.leaves[0].value.len();
        if width == 0 {
            return Err(Error::TreeImport("leaf values must be non-empty".into()));
        }
        for leaf in &self.leaves {
            if leaf.value.len() != width {
                return Err(Error::TreeImport(format!(
                    "leaf {} value width {} != {}",
                    leaf.id,
                    leaf.value.len(),
                    width
                )));
            }
        }
        let mut referenced: HashMap<u64, u64> = HashMap::new();
        let mut children = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            if node.feature_index >= self.n_features {
                return Err(Error::TreeImport(format!(
                    "node {}: feature_index {} out of range for {} features",
                    node.id, node.feature_index, self.n_features
                )));
            }
            let mut resolve_ref = |id: u64| -> Result<Child> {
                let child = *ids
                    .get(&id)
                    .ok_or_else(|| Error::TreeImport(format!("unresolved reference {id}")))?;
                if let Some(parent) = referenced.insert(id, node.id) {
                    return Err(Error::TreeImport(format!(
                        "id {id} referenced by both {parent} and {}",
                        node.id
                    )));
                }
                Ok(child)
            };
            children.push(NodeChildren {
                left: resolve_ref(node.left)?,
                right: resolve_ref(node.right)?,
            });
        }
        let mut roots = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, node)| !referenced.contains_key(&node.id));
        let root = match (roots.next(), roots.next()) {
            (Some((i, _)), None) => i,
            (Some((_, a)), Some((_, b))) => {
                return Err(Error::TreeImport(format!(
                    "multiple roots: {} and {}",
                    a.id, b.id
                )))
            }
            _ => return Err(Error::TreeImport("no root node".into())),
        };
        TreeTopology::new(children, root).map_err(|e| Error::TreeImport(format!("{e}")))
    }

    /// Evaluates the document directly, without going through the neural
    /// parameterization: at each node, take `left` when
    /// `row[feature_index] - threshold >= 0`. Returns the reached leaf id
    /// and its value.
    pub fn evaluate_classical(&self, row: &[f64]) -> Result<(u64, &[f64])> {
        if row.len() != self.n_features {
            return Err(Error::LengthMismatch {
                op: "evaluate_classical",
                expected: self.n_features,
                got: row.len(),
            });
        }
        let by_id: HashMap<u64, &NodeSpec> = self.nodes.iter().map(|n| (n.id, n)).collect();
        let leaves: HashMap<u64, &LeafSpec> = self.leaves.iter().map(|l| (l.id, l)).collect();
        let referenced: std::collections::HashSet<u64> = self
            .nodes
            .iter()
            .flat_map(|n| [n.left, n.right])
            .collect();
        let mut at = self
            .nodes
            .iter()
            .find(|n| !referenced.contains(&n.id))
            .ok_or_else(|| Error::TreeImport("no root node".into()))?;
        loop {
            let next = if row[at.feature_index] - at.threshold >= 0.0 {
                at.left
            } else {
                at.right
            };
            if let Some(node) = by_id.get(&next) {
                at = node;
            } else if let Some(leaf) = leaves.get(&next) {
                return Ok((leaf.id, &leaf.value));
            } else {
                return Err(Error::TreeImport(format!("unresolved reference {next}")));
            }
        }
    }

    /// Internal leaf index of the leaf a row routes to (position in
    /// `leaves`), for comparing against [`NeuralDecisionTree::forward_deterministic`].
    pub fn classical_leaf_index(&self, row: &[f64]) -> Result<usize> {
        let (id, _) = self.evaluate_classical(row)?;
        Ok(self.leaves.iter().position(|l| l.id == id).unwrap())
    }
}
