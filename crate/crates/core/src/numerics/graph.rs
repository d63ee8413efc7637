use std::collections::{BTreeMap, HashMap};

use crate::scalar::Scalar;

use super::Tensor;

/// Position of a node inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable operations the embedding and loss
/// graphs are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    /// `x [C,H,W]`, `kernel [O,C,k,k]` with k in {1, 3}, `bias [O]`;
    /// stride 1, zero padding that preserves the spatial size.
    Conv2d,
    Relu,
    /// Elementwise sum of two tensors of identical shape.
    Add,
    /// Elementwise product; the second operand may be `[1,H,W]` and is
    /// then broadcast over the channels of a `[C,H,W]` first operand.
    Mul,
    Sigmoid,
    /// Softmax over the spatial positions of each channel of `[C,H,W]`.
    SpatialSoftmax,
    /// `[C,H,W] -> [C]`.
    GlobalAvgPool,
    /// Non-overlapping 2x2 mean, `[C,H,W] -> [C,H/2,W/2]` (floor).
    AvgPool2,
    /// `weight [D,C]`, `x [C]`, `bias [D]` -> `[D]`.
    Linear,
    /// `||a - b||_2` as a one-element tensor.
    EuclideanDistance,
    /// Sum of all elements as a one-element tensor.
    Sum,
    Scale(f64),
    /// `max(x, 0)` used as the loss hinge.
    HingeMaxZero,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::SpatialSoftmax => "spatial_softmax",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::AvgPool2 => "avg_pool2",
            OpKind::Linear => "linear",
            OpKind::EuclideanDistance => "euclidean_distance",
            OpKind::Sum => "sum",
            OpKind::Scale(_) => "scale",
            OpKind::HingeMaxZero => "hinge",
        }
    }

    pub(crate) fn arity(&self) -> usize {
        match self {
            OpKind::Conv2d | OpKind::Linear => 3,
            OpKind::Add | OpKind::Mul | OpKind::EuclideanDistance => 2,
            _ => 1,
        }
    }

    /// Ops with a kink where the subgradient convention applies.
    pub(crate) fn is_piecewise(&self) -> bool {
        matches!(
            self,
            OpKind::Relu | OpKind::HingeMaxZero | OpKind::EuclideanDistance
        )
    }
}

#[derive(Debug, Clone)]
pub enum Node<T> {
    Input(String),
    Param(String),
    Const(Tensor<T>),
    Apply { op: OpKind, inputs: Vec<NodeId> },
}

/// Computation graph in topological order. Nodes can only reference nodes
/// created before them, so insertion order is a valid evaluation order.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    output: Option<NodeId>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            output: None,
        }
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Designated output; defaults to the last node added.
    pub fn output(&self) -> Option<NodeId> {
        self.output
            .or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    pub fn set_output(&mut self, id: NodeId) {
        assert!(id.0 < self.nodes.len(), "output node out of range");
        self.output = Some(id);
    }

    fn push(&mut self, node: Node<T>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Node::Input(name.into()))
    }

    pub fn param(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Node::Param(name.into()))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Node::Const(value))
    }

    /// Appends an op application.
    ///
    /// Panics if an input id does not precede the new node or the arity
    /// is wrong; both are construction bugs, not data errors.
    pub fn apply(&mut self, op: OpKind, inputs: &[NodeId]) -> NodeId {
        assert_eq!(inputs.len(), op.arity(), "{} arity", op.name());
        let next = self.nodes.len();
        for id in inputs {
            assert!(id.0 < next, "node {} referenced before definition", id.0);
        }
        self.push(Node::Apply {
            op,
            inputs: inputs.to_vec(),
        })
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> NodeId {
        self.apply(OpKind::Conv2d, &[x, kernel, bias])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.apply(OpKind::Sigmoid, &[x])
    }

    pub fn spatial_softmax(&mut self, x: NodeId) -> NodeId {
        self.apply(OpKind::SpatialSoftmax, &[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        self.apply(OpKind::GlobalAvgPool, &[x])
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> NodeId {
        self.apply(OpKind::AvgPool2, &[x])
    }

    pub fn linear(&mut self, weight: NodeId, x: NodeId, bias: NodeId) -> NodeId {
        self.apply(OpKind::Linear, &[weight, x, bias])
    }

    pub fn euclidean(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(OpKind::EuclideanDistance, &[a, b])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.apply(OpKind::Sum, &[x])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.apply(OpKind::Scale(factor), &[x])
    }

    pub fn hinge(&mut self, x: NodeId) -> NodeId {
        self.apply(OpKind::HingeMaxZero, &[x])
    }

    /// Left-to-right sum of one-element nodes; `None` for an empty list.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Option<NodeId> {
        let (&first, rest) = terms.split_first()?;
        Some(rest.iter().fold(first, |acc, &t| self.add(acc, t)))
    }

    /// Names of every parameter leaf, deduplicated and sorted.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Param(name) => Some(name.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Anything that can resolve a leaf name to a tensor.
pub trait TensorSource<T>: Sync {
    fn tensor(&self, name: &str) -> Option<&Tensor<T>>;
}

impl<T: Sync> TensorSource<T> for HashMap<String, Tensor<T>> {
    fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.get(name)
    }
}

impl<T: Sync> TensorSource<T> for BTreeMap<String, Tensor<T>> {
    fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.get(name)
    }
}

/// Layered name lookup; earlier layers shadow later ones.
pub struct Bindings<'a, T> {
    layers: Vec<&'a dyn TensorSource<T>>,
}

impl<'a, T> Default for Bindings<'a, T> {
    fn default() -> Self {
        Bindings { layers: Vec::new() }
    }
}

impl<'a, T> Bindings<'a, T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, source: &'a dyn TensorSource<T>) -> Self {
        self.layers.push(source);
        self
    }

    /// New lookup with `front` shadowing every existing layer.
    pub fn over<'b>(&self, front: &'b dyn TensorSource<T>) -> Bindings<'b, T>
    where
        'a: 'b,
    {
        let mut layers: Vec<&'b dyn TensorSource<T>> = vec![front];
        layers.extend(self.layers.iter().copied());
        Bindings { layers }
    }

    pub fn get(&self, name: &str) -> Option<&'a Tensor<T>> {
        self.layers.iter().find_map(|l| l.tensor(name))
    }
}
