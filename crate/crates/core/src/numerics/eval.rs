use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::scalar::Scalar;

use super::graph::{Bindings, Graph, Node, NodeId, OpKind};
use super::kernels::{self, ConvDims};
use super::{NumericsError, Tensor};

/// Gradients keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

/// Result of a backward pass: the scalar output and its parameter gradients.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub value: T,
    pub grads: Gradients<T>,
}

/// All node values of one forward pass over a graph.
pub struct Evaluation<'a, T: Scalar> {
    graph: &'a Graph<T>,
    values: Vec<Cow<'a, Tensor<T>>>,
}

fn mismatch(node: usize, op: &OpKind, expected: &str, inputs: &[&[usize]]) -> NumericsError {
    NumericsError::ShapeMismatch {
        node,
        op: op.name(),
        expected: expected.to_string(),
        actual: inputs.iter().map(|s| s.to_vec()).collect(),
    }
}

fn apply_forward<T: Scalar>(
    node: usize,
    op: &OpKind,
    args: &[&Tensor<T>],
) -> Result<Tensor<T>, NumericsError> {
    let shapes: Vec<&[usize]> = args.iter().map(|t| t.shape()).collect();
    let err = |expected: &str| mismatch(node, op, expected, &shapes);
    let unary = |f: &dyn Fn(T) -> T| args[0].map(f);
    let out = match op {
        OpKind::Conv2d => {
            let (x, k, b) = (args[0], args[1], args[2]);
            let ok = x.shape().len() == 3
                && k.shape().len() == 4
                && b.shape().len() == 1
                && k.shape()[1] == x.shape()[0]
                && k.shape()[2] == k.shape()[3]
                && matches!(k.shape()[2], 1 | 3)
                && b.shape()[0] == k.shape()[0];
            if !ok {
                return Err(err("x [C,H,W], kernel [O,C,k,k] with k in {1,3}, bias [O]"));
            }
            let d = ConvDims {
                c: x.shape()[0],
                h: x.shape()[1],
                w: x.shape()[2],
                o: k.shape()[0],
                k: k.shape()[2],
            };
            let data = kernels::conv2d_forward(x.data(), k.data(), b.data(), &d);
            Tensor::new(vec![d.o, d.h, d.w], data)?
        }
        OpKind::Relu | OpKind::HingeMaxZero => {
            unary(&|v| if v > T::zero() { v } else { T::zero() })
        }
        OpKind::Sigmoid => unary(&kernels::sigmoid),
        OpKind::Scale(s) => {
            let s = T::lit(*s);
            unary(&|v| v * s)
        }
        OpKind::Add => {
            if shapes[0] != shapes[1] {
                return Err(err("identical shapes"));
            }
            let mut out = args[0].clone();
            out.add_assign(args[1]);
            out
        }
        OpKind::Mul => {
            let (a, b) = (args[0], args[1]);
            if a.shape() == b.shape() {
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| x * y)
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            } else if a.shape().len() == 3
                && b.shape().len() == 3
                && b.shape()[0] == 1
                && a.shape()[1..] == b.shape()[1..]
            {
                let hw = b.len();
                let mut data = Vec::with_capacity(a.len());
                for chunk in a.data().chunks(hw) {
                    data.extend(chunk.iter().zip(b.data()).map(|(&x, &y)| x * y));
                }
                Tensor::new(a.shape().to_vec(), data)?
            } else {
                return Err(err("identical shapes or a [C,H,W] with b [1,H,W]"));
            }
        }
        OpKind::SpatialSoftmax => {
            let x = args[0];
            if x.shape().len() != 3 {
                return Err(err("[C,H,W]"));
            }
            let c = x.shape()[0];
            let data = kernels::spatial_softmax_forward(x.data(), c, x.len() / c);
            Tensor::new(x.shape().to_vec(), data)?
        }
        OpKind::GlobalAvgPool => {
            let x = args[0];
            if x.shape().len() != 3 {
                return Err(err("[C,H,W]"));
            }
            let c = x.shape()[0];
            let hw = x.len() / c;
            let inv = T::one() / T::lit(hw as f64);
            let data = x
                .data()
                .chunks(hw)
                .map(|ch| kernels::sum(ch) * inv)
                .collect();
            Tensor::new(vec![c], data)?
        }
        OpKind::AvgPool2 => {
            let x = args[0];
            if x.shape().len() != 3 || x.shape()[1] < 2 || x.shape()[2] < 2 {
                return Err(err("[C,H,W] with H, W >= 2"));
            }
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            Tensor::new(
                vec![c, h / 2, w / 2],
                kernels::avg_pool2_forward(x.data(), c, h, w),
            )?
        }
        OpKind::Linear => {
            let (wt, x, b) = (args[0], args[1], args[2]);
            let ok = wt.shape().len() == 2
                && x.shape().len() == 1
                && b.shape().len() == 1
                && wt.shape()[1] == x.shape()[0]
                && wt.shape()[0] == b.shape()[0];
            if !ok {
                return Err(err("weight [D,C], x [C], bias [D]"));
            }
            let c = x.len();
            let data = b
                .data()
                .iter()
                .enumerate()
                .map(|(d, &bias)| bias + kernels::dot(&wt.data()[d * c..(d + 1) * c], x.data()))
                .collect();
            Tensor::from_vec(data)
        }
        OpKind::EuclideanDistance => {
            if shapes[0] != shapes[1] {
                return Err(err("identical shapes"));
            }
            let sq = args[0]
                .data()
                .iter()
                .zip(args[1].data())
                .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
            Tensor::scalar(sq.sqrt())
        }
        OpKind::Sum => Tensor::scalar(kernels::sum(args[0].data())),
    };
    Ok(out)
}

/// Adjoint of one op: gradient contributions for each input whose flag in
/// `want` is set.
fn apply_backward<T: Scalar>(
    op: &OpKind,
    args: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    want: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let zero = T::zero();
    let shaped = |like: &Tensor<T>, data: Vec<T>| {
        Tensor::new(like.shape().to_vec(), data).expect("adjoint shape")
    };
    match op {
        OpKind::Conv2d => {
            let (x, k) = (args[0], args[1]);
            let d = ConvDims {
                c: x.shape()[0],
                h: x.shape()[1],
                w: x.shape()[2],
                o: k.shape()[0],
                k: k.shape()[2],
            };
            let (gx, gk, gb) = kernels::conv2d_backward(
                x.data(),
                k.data(),
                g.data(),
                &d,
                [want[0], want[1], want[2]],
            );
            vec![
                gx.map(|v| shaped(x, v)),
                gk.map(|v| shaped(k, v)),
                gb.map(|v| shaped(args[2], v)),
            ]
        }
        OpKind::Relu | OpKind::HingeMaxZero => {
            let data = args[0]
                .data()
                .iter()
                .zip(g.data())
                .map(|(&x, &gi)| if x > zero { gi } else { zero })
                .collect();
            vec![Some(shaped(args[0], data))]
        }
        OpKind::Sigmoid => {
            let data = out
                .data()
                .iter()
                .zip(g.data())
                .map(|(&y, &gi)| gi * y * (T::one() - y))
                .collect();
            vec![Some(shaped(args[0], data))]
        }
        OpKind::Scale(s) => {
            let s = T::lit(*s);
            vec![Some(g.map(|v| v * s))]
        }
        OpKind::Add => vec![want[0].then(|| g.clone()), want[1].then(|| g.clone())],
        OpKind::Mul => {
            let (a, b) = (args[0], args[1]);
            if a.shape() == b.shape() {
                let ga = want[0].then(|| {
                    shaped(
                        a,
                        g.data()
                            .iter()
                            .zip(b.data())
                            .map(|(&gi, &bi)| gi * bi)
                            .collect(),
                    )
                });
                let gb = want[1].then(|| {
                    shaped(
                        b,
                        g.data()
                            .iter()
                            .zip(a.data())
                            .map(|(&gi, &ai)| gi * ai)
                            .collect(),
                    )
                });
                vec![ga, gb]
            } else {
                let hw = b.len();
                let ga = want[0].then(|| {
                    let mut data = Vec::with_capacity(a.len());
                    for gc in g.data().chunks(hw) {
                        data.extend(gc.iter().zip(b.data()).map(|(&gi, &bi)| gi * bi));
                    }
                    shaped(a, data)
                });
                let gb = want[1].then(|| {
                    let mut data = vec![zero; hw];
                    for (gc, ac) in g.data().chunks(hw).zip(a.data().chunks(hw)) {
                        for ((acc, &gi), &ai) in data.iter_mut().zip(gc).zip(ac) {
                            *acc += gi * ai;
                        }
                    }
                    shaped(b, data)
                });
                vec![ga, gb]
            }
        }
        OpKind::SpatialSoftmax => {
            let c = out.shape()[0];
            let data = kernels::spatial_softmax_backward(out.data(), g.data(), c, out.len() / c);
            vec![Some(shaped(args[0], data))]
        }
        OpKind::GlobalAvgPool => {
            let x = args[0];
            let c = x.shape()[0];
            let hw = x.len() / c;
            let inv = T::one() / T::lit(hw as f64);
            let mut data = Vec::with_capacity(x.len());
            for &gc in g.data() {
                data.extend(std::iter::repeat_n(gc * inv, hw));
            }
            vec![Some(shaped(x, data))]
        }
        OpKind::AvgPool2 => {
            let x = args[0];
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            vec![Some(shaped(
                x,
                kernels::avg_pool2_backward(g.data(), c, h, w),
            ))]
        }
        OpKind::Linear => {
            let (wt, x) = (args[0], args[1]);
            let c = x.len();
            let gw = want[0].then(|| {
                let mut data = Vec::with_capacity(wt.len());
                for &gd in g.data() {
                    data.extend(x.data().iter().map(|&xi| gd * xi));
                }
                shaped(wt, data)
            });
            let gx = want[1].then(|| {
                let mut data = vec![zero; c];
                for (d, &gd) in g.data().iter().enumerate() {
                    kernels::axpy(gd, &wt.data()[d * c..(d + 1) * c], &mut data);
                }
                shaped(x, data)
            });
            vec![gw, gx, want[2].then(|| g.clone())]
        }
        OpKind::EuclideanDistance => {
            let (a, b) = (args[0], args[1]);
            let dist = out.item();
            let ga: Vec<T> = if dist > zero {
                let f = g.item() / dist;
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| (x - y) * f)
                    .collect()
            } else {
                vec![zero; a.len()]
            };
            let gb = want[1].then(|| shaped(b, ga.iter().map(|&v| -v).collect()));
            vec![want[0].then(|| shaped(a, ga)), gb]
        }
        OpKind::Sum => vec![Some(Tensor::filled(args[0].shape(), g.item()))],
    }
}

impl<'a, T: Scalar> Evaluation<'a, T> {
    /// Runs every node of `graph` in order.
    pub fn run(graph: &'a Graph<T>, bindings: &Bindings<'a, T>) -> Result<Self, NumericsError> {
        let mut values: Vec<Cow<'a, Tensor<T>>> = Vec::with_capacity(graph.len());
        for (idx, node) in graph.nodes().iter().enumerate() {
            let value = match node {
                Node::Input(name) | Node::Param(name) => Cow::Borrowed(
                    bindings
                        .get(name)
                        .ok_or_else(|| NumericsError::UnboundInput(name.clone()))?,
                ),
                Node::Const(t) => Cow::Borrowed(t),
                Node::Apply { op, inputs } => {
                    let args: Vec<&Tensor<T>> =
                        inputs.iter().map(|i| values[i.0].as_ref()).collect();
                    Cow::Owned(apply_forward(idx, op, &args)?)
                }
            };
            values.push(value);
        }
        Ok(Evaluation { graph, values })
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id.0]
    }

    /// Value of the graph's designated output.
    pub fn output(&self) -> Result<&Tensor<T>, NumericsError> {
        let id = self.graph.output().ok_or(NumericsError::EmptyGraph)?;
        Ok(self.value(id))
    }

    /// Sign pattern of every piecewise-linear op input, used to detect
    /// perturbations that cross a kink.
    pub(crate) fn kink_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for (idx, node) in self.graph.nodes().iter().enumerate() {
            if let Node::Apply { op, inputs } = node {
                if !op.is_piecewise() {
                    continue;
                }
                if matches!(op, OpKind::EuclideanDistance) {
                    pattern.push(self.values[idx].item() > T::zero());
                } else {
                    pattern.extend(
                        self.values[inputs[0].0]
                            .data()
                            .iter()
                            .map(|&v| v > T::zero()),
                    );
                }
            }
        }
        pattern
    }

    /// Reverse sweep from the designated output, which must hold a single
    /// element. Only parameters accepted by `trainable` receive gradients,
    /// and subgraphs that cannot reach one are skipped entirely.
    pub fn backward(&self, trainable: &dyn Fn(&str) -> bool) -> Result<Backward<T>, NumericsError> {
        let out_id = self.graph.output().ok_or(NumericsError::EmptyGraph)?;
        let out = self.value(out_id);
        if out.len() != 1 {
            return Err(NumericsError::NonScalarOutput(out.shape().to_vec()));
        }
        let nodes = self.graph.nodes();
        let mut needs = vec![false; nodes.len()];
        for (idx, node) in nodes.iter().enumerate().take(out_id.0 + 1) {
            needs[idx] = match node {
                Node::Param(name) => trainable(name),
                Node::Input(_) | Node::Const(_) => false,
                Node::Apply { inputs, .. } => inputs.iter().any(|i| needs[i.0]),
            };
        }

        let mut grads: Gradients<T> = BTreeMap::new();
        let mut adjoints: Vec<Option<Tensor<T>>> = vec![None; out_id.0 + 1];
        adjoints[out_id.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=out_id.0).rev() {
            if !needs[idx] {
                continue;
            }
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            match &nodes[idx] {
                Node::Param(name) => match grads.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        grads.insert(name.clone(), g);
                    }
                },
                Node::Apply { op, inputs } => {
                    let args: Vec<&Tensor<T>> =
                        inputs.iter().map(|i| self.values[i.0].as_ref()).collect();
                    let want: Vec<bool> = inputs.iter().map(|i| needs[i.0]).collect();
                    let parts = apply_backward(op, &args, &self.values[idx], &g, &want);
                    for ((input, part), wanted) in inputs.iter().zip(parts).zip(want) {
                        let Some(part) = part.filter(|_| wanted) else {
                            continue;
                        };
                        match &mut adjoints[input.0] {
                            Some(acc) => acc.add_assign(&part),
                            slot @ None => *slot = Some(part),
                        }
                    }
                }
                Node::Input(_) | Node::Const(_) => {}
            }
        }
        Ok(Backward {
            value: out.item(),
            grads,
        })
    }
}

/// Value of the designated output node.
pub fn eval_forward<T: Scalar>(
    graph: &Graph<T>,
    bindings: &Bindings<'_, T>,
) -> Result<Tensor<T>, NumericsError> {
    let eval = Evaluation::run(graph, bindings)?;
    Ok(eval.output()?.clone())
}

/// Gradient of the scalar output with respect to every parameter leaf.
pub fn eval_backward<T: Scalar>(
    graph: &Graph<T>,
    bindings: &Bindings<'_, T>,
) -> Result<Backward<T>, NumericsError> {
    let eval = Evaluation::run(graph, bindings)?;
    let mut out = eval.backward(&|_| true)?;
    // Parameters with no path to the output still get an explicit zero.
    for name in graph.param_names() {
        if let (std::collections::btree_map::Entry::Vacant(slot), Some(p)) =
            (out.grads.entry(name.clone()), bindings.get(&name))
        {
            slot.insert(Tensor::zeros(p.shape()));
        }
    }
    Ok(out)
}
