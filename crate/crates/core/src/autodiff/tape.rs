use std::collections::BTreeMap;

use super::ops::Primitive;
use super::tensor::Tensor;
use crate::error::{LcmError, Result};

/// Parameter name to gradient, one entry per trainable leaf on the tape.
pub type GradientMap = BTreeMap<String, Tensor>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Constant,
    Param(String),
    Op(Primitive, Vec<NodeId>),
}

#[derive(Clone, Debug)]
struct Node {
    kind: NodeKind,
    value: Tensor,
}

/// Records a computation in topological order so it can be differentiated
/// in reverse. Parents always precede their children.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, kind: NodeKind, value: Tensor) -> NodeId {
        self.nodes.push(Node { kind, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(NodeKind::Constant, value.with_requires_grad(false))
    }

    /// Records a named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.push(NodeKind::Param(name.into()), value.with_requires_grad(true))
    }

    /// Copies `id`'s value into a new constant, cutting gradient flow.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.nodes[id.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            prim.forward(&vals)?
        };
        Ok(self.push(NodeKind::Op(prim, inputs.to_vec()), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        self.apply(Primitive::AddBias, &[a, bias])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn gather(&mut self, table: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        self.apply(Primitive::Gather(rows), &[table])
    }

    pub fn segment_mean(&mut self, a: NodeId, lens: Vec<usize>) -> Result<NodeId> {
        self.apply(Primitive::SegmentMean(lens), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn kl_divergence(&mut self, target: NodeId, predicted: NodeId) -> Result<NodeId> {
        self.apply(Primitive::KlDivergence, &[target, predicted])
    }

    /// Names and values of every trainable leaf, in recording order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Param(name) => Some((name.as_str(), &n.value)),
            _ => None,
        })
    }

    /// Re-evaluates every recorded operation from the leaves and returns the
    /// value at `output`.
    pub fn replay(&self, output: NodeId) -> Result<Tensor> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes[..=output.0] {
            let v = match &node.kind {
                NodeKind::Constant | NodeKind::Param(_) => node.value.clone(),
                NodeKind::Op(prim, parents) => {
                    let vals: Vec<&Tensor> = parents.iter().map(|p| &values[p.0]).collect();
                    prim.forward(&vals)?
                }
            };
            values.push(v);
        }
        Ok(values.pop().expect("output is on the tape"))
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to every
    /// parameter leaf. Parameters that do not reach the loss get zeros.
    pub fn backprop(&self, loss: NodeId) -> Result<GradientMap> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(LcmError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut needs = vec![false; n];
        for (i, node) in self.nodes[..n].iter().enumerate() {
            needs[i] = match &node.kind {
                NodeKind::Constant => false,
                NodeKind::Param(_) => true,
                NodeKind::Op(_, parents) => parents.iter().any(|p| needs[p.0]),
            };
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::new(loss_value.shape().to_vec(), vec![1.0]).unwrap());
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].kind {
                NodeKind::Op(prim, parents) => {
                    if !needs[i] {
                        continue;
                    }
                    let inputs: Vec<&Tensor> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
                    let parent_grads = prim.backward(&inputs, &self.nodes[i].value, &g);
                    for (p, pg) in parents.iter().zip(parent_grads) {
                        if !needs[p.0] {
                            continue;
                        }
                        match &mut grads[p.0] {
                            Some(acc) => acc
                                .data_mut()
                                .iter_mut()
                                .zip(pg.data())
                                .for_each(|(a, b)| *a += b),
                            slot => *slot = Some(pg),
                        }
                    }
                }
                // keep leaf gradients for collection below
                _ => grads[i] = Some(g),
            }
        }

        let mut out = GradientMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Param(name) = &node.kind {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match out.get_mut(name) {
                    // the same name registered twice shares one gradient
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => {
                        out.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(out)
    }
}
