use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvGeom};
use super::{GraphError, Tensor};

/// Handle to a node inside a [`GraphBuilder`] / [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis-aligned rectangle on a `C×H×W` feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Named tensors fed to graph leaves.
pub type Bindings = HashMap<String, Tensor>;

#[derive(Clone, Debug)]
enum Op {
    Leaf(String),
    Constant(Tensor),
    Conv2d { stride: usize, pad: usize },
    Relu,
    MatMul,
    AddBias,
    AvgPoolRegions(Vec<Region>),
    Upsample { height: usize, width: usize },
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    Log { eps: f64 },
    Add,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Powf(f64),
    Sum,
    Mean,
    SumAxis { axis: usize },
    Reshape,
    SelectRows(Vec<usize>),
    ConcatRows,
    L2NormalizeRows,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Constant(_) => "constant",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu => "relu",
            Op::MatMul => "matmul",
            Op::AddBias => "add_bias",
            Op::AvgPoolRegions(_) => "avg_pool_regions",
            Op::Upsample { .. } => "upsample_bilinear",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Log { .. } => "log",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Powf(_) => "powf",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::Reshape => "reshape",
            Op::SelectRows(_) => "select_rows",
            Op::ConcatRows => "concat_rows",
            Op::L2NormalizeRows => "l2_normalize_rows",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// Incrementally records operations. Shapes are inferred (and checked) as
/// nodes are added, so a finished [`Graph`] is always shape-consistent.
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
    named: Vec<(String, NodeId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let requires_grad = match op {
            Op::Leaf(_) => true,
            Op::Constant(_) => false,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn err(&self, op: &'static str, detail: String) -> GraphError {
        GraphError::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    /// Declare a named input whose value is supplied at evaluation time.
    pub fn leaf(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, GraphError> {
        if self.leaves.contains_key(name) {
            return Err(GraphError::DuplicateLeaf(name.to_string()));
        }
        if shape.contains(&0) {
            return Err(self.err("leaf", format!("zero-sized dimension in {shape:?}")));
        }
        let id = self.push(Op::Leaf(name.to_string()), vec![], shape.to_vec());
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    /// Embed a fixed tensor. Constants never receive gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), vec![], shape)
    }

    /// Attach a name to a node so its value can be read back after evaluation.
    pub fn name(&mut self, id: NodeId, name: &str) {
        self.named.push((name.to_string(), id));
    }

    /// 2-D convolution of `x: [C,H,W]` with `w: [O,C,k,k]` plus bias `b: [O]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, GraphError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 {
            return Err(self.err(
                "conv2d",
                format!("expected x[C,H,W], w[O,C,k,k], b[O]; got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        if ws[1] != xs[0] || ws[2] != ws[3] || bs[0] != ws[0] || stride == 0 {
            return Err(self.err(
                "conv2d",
                format!("incompatible x {xs:?}, w {ws:?}, b {bs:?}, stride {stride}"),
            ));
        }
        if xs[1] + 2 * pad < ws[2] || xs[2] + 2 * pad < ws[2] {
            return Err(self.err("conv2d", format!("kernel {} exceeds input {xs:?}", ws[2])));
        }
        let g = ConvGeom {
            channels: xs[0],
            height: xs[1],
            width: xs[2],
            kernel: ws[2],
            stride,
            pad,
        };
        let shape = vec![ws[0], g.out_height(), g.out_width()];
        Ok(self.push(Op::Conv2d { stride, pad }, vec![x, w, b], shape))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Relu, vec![x], shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.err("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul, vec![a, b], shape))
    }

    /// `x: [n,d] + b: [d]`, broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(self.err("add_bias", format!("cannot add {sb:?} to rows of {sx:?}")));
        }
        let shape = sx.to_vec();
        Ok(self.push(Op::AddBias, vec![x, b], shape))
    }

    /// Average `x: [C,H,W]` over each region, giving `[regions, C]`.
    pub fn avg_pool_regions(
        &mut self,
        x: NodeId,
        regions: Vec<Region>,
    ) -> Result<NodeId, GraphError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || regions.is_empty() {
            return Err(self.err(
                "avg_pool_regions",
                format!("expected [C,H,W] and at least one region; got {sx:?}"),
            ));
        }
        for r in &regions {
            if r.height == 0 || r.width == 0 || r.top + r.height > sx[1] || r.left + r.width > sx[2]
            {
                return Err(self.err(
                    "avg_pool_regions",
                    format!("region {r:?} outside feature map {sx:?}"),
                ));
            }
        }
        let shape = vec![regions.len(), sx[0]];
        Ok(self.push(Op::AvgPoolRegions(regions), vec![x], shape))
    }

    /// Bilinear resize of `x: [C,h,w]` to `[C,height,width]`.
    pub fn upsample_bilinear(
        &mut self,
        x: NodeId,
        height: usize,
        width: usize,
    ) -> Result<NodeId, GraphError> {
        let sx = self.shape(x);
        if sx.len() != 3 || height == 0 || width == 0 {
            return Err(self.err(
                "upsample_bilinear",
                format!("expected [C,h,w] and positive output size; got {sx:?}"),
            ));
        }
        let shape = vec![sx[0], height, width];
        Ok(self.push(Op::Upsample { height, width }, vec![x], shape))
    }

    fn check_axis(&self, op: &'static str, x: NodeId, axis: usize) -> Result<(), GraphError> {
        let sx = self.shape(x);
        if axis >= sx.len() {
            return Err(self.err(op, format!("axis {axis} out of range for {sx:?}")));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        self.check_axis("softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Softmax { axis }, vec![x], shape))
    }

    pub fn log_softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        self.check_axis("log_softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::LogSoftmax { axis }, vec![x], shape))
    }

    /// `ln(x + eps)` elementwise.
    pub fn log(&mut self, x: NodeId, eps: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Log { eps }, vec![x], shape)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), GraphError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.err(
                op,
                format!("operands differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.same_shape("add", a, b)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add, vec![a, b], shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.same_shape("mul", a, b)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul, vec![a, b], shape))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(factor), vec![x], shape)
    }

    pub fn add_scalar(&mut self, x: NodeId, value: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::AddScalar(value), vec![x], shape)
    }

    /// `x^p` elementwise; inputs must stay positive for non-integer `p`.
    pub fn powf(&mut self, x: NodeId, p: f64) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Powf(p), vec![x], shape)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, vec![x], vec![])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean, vec![x], vec![])
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        self.check_axis("sum_axis", x, axis)?;
        let mut shape = self.shape(x).to_vec();
        shape.remove(axis);
        Ok(self.push(Op::SumAxis { axis }, vec![x], shape))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let n: usize = self.shape(x).iter().product();
        if shape.iter().product::<usize>() != n || shape.contains(&0) {
            return Err(self.err(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape(x)),
            ));
        }
        Ok(self.push(Op::Reshape, vec![x], shape.to_vec()))
    }

    /// Gather rows of `x: [n,d]`; indices may repeat.
    pub fn select_rows(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId, GraphError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || indices.is_empty() || indices.iter().any(|&i| i >= sx[0]) {
            return Err(self.err(
                "select_rows",
                format!("bad row selection from {sx:?} ({} indices)", indices.len()),
            ));
        }
        let shape = vec![indices.len(), sx[1]];
        Ok(self.push(Op::SelectRows(indices), vec![x], shape))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        let Some(&first) = parts.first() else {
            return Err(self.err("concat_rows", "no inputs".to_string()));
        };
        let d = self.shape(first).get(1).copied();
        let mut rows = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != 2 || Some(sp[1]) != d {
                return Err(self.err("concat_rows", format!("inconsistent part shape {sp:?}")));
            }
            rows += sp[0];
        }
        let shape = vec![rows, d.unwrap_or(0)];
        Ok(self.push(Op::ConcatRows, parts.to_vec(), shape))
    }

    /// Scale each row of `x: [n,d]` to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(self.err("l2_normalize_rows", format!("expected [n,d], got {sx:?}")));
        }
        Ok(self.push(Op::L2NormalizeRows, vec![x], sx))
    }

    pub fn build(self, output: NodeId) -> Graph {
        Graph {
            nodes: self.nodes,
            output,
            named: self.named,
            check_finite: cfg!(debug_assertions),
        }
    }
}

/// Immutable computation graph with a designated output node.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    output: NodeId,
    named: Vec<(String, NodeId)>,
    check_finite: bool,
}

/// Counters collected during one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub conv_evals: usize,
}

/// Values of every node after a forward pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    values: Vec<Tensor>,
    output: NodeId,
    named: Vec<(String, NodeId)>,
    pub stats: EvalStats,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn output(&self) -> &Tensor {
        &self.values[self.output.0]
    }

    pub fn named(&self, name: &str) -> Option<&Tensor> {
        self.named
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| &self.values[id.0])
    }

    /// All named node values.
    pub fn named_values(&self) -> BTreeMap<String, Tensor> {
        self.named
            .iter()
            .map(|(n, id)| (n.clone(), self.values[id.0].clone()))
            .collect()
    }
}

impl Graph {
    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Toggle per-node non-finite detection (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Leaf names with their declared shapes, in declaration order.
    pub fn leaves(&self) -> Vec<(String, Vec<usize>)> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Leaf(name) => Some((name.clone(), n.shape.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn evaluate(&self, bindings: &Bindings) -> Result<Evaluation, GraphError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut stats = EvalStats::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            let value = self.forward_node(idx, node, &values, bindings, &mut stats)?;
            if self.check_finite && !value.all_finite() {
                return Err(GraphError::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            values.push(value);
        }
        Ok(Evaluation {
            values,
            output: self.output,
            named: self.named.clone(),
            stats,
        })
    }

    /// Forward pass followed by reverse accumulation from the scalar output.
    /// Returns the evaluation and one gradient per leaf (zeros when unused).
    pub fn backward(
        &self,
        bindings: &Bindings,
    ) -> Result<(Evaluation, BTreeMap<String, Tensor>), GraphError> {
        let eval = self.evaluate(bindings)?;
        let grads = self.backward_from(&eval)?;
        Ok((eval, grads))
    }

    pub fn backward_from(&self, eval: &Evaluation) -> Result<BTreeMap<String, Tensor>, GraphError> {
        let out_shape = &self.nodes[self.output.0].shape;
        if out_shape.iter().product::<usize>() != 1 {
            return Err(GraphError::NonScalarOutput(out_shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[self.output.0] = Some(vec![1.0]);
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let input_grads = self.backward_node(idx, node, &dy, eval);
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let mut out = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf(name) = &node.op {
                let data = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.shape.iter().product()]);
                out.insert(name.clone(), Tensor::new(node.shape.clone(), data)?);
            }
        }
        Ok(out)
    }

    fn forward_node(
        &self,
        idx: usize,
        node: &Node,
        values: &[Tensor],
        bindings: &Bindings,
        stats: &mut EvalStats,
    ) -> Result<Tensor, GraphError> {
        let input = |k: usize| &values[node.inputs[k].0];
        let shape = node.shape.clone();
        let unary = |f: &dyn Fn(f64) -> f64| -> Result<Tensor, GraphError> {
            Tensor::new(shape.clone(), input(0).data().iter().map(|&v| f(v)).collect())
        };
        let out = match &node.op {
            Op::Leaf(name) => {
                let t = bindings
                    .get(name)
                    .ok_or_else(|| GraphError::Unbound(name.clone()))?;
                if t.shape() != node.shape.as_slice() {
                    return Err(GraphError::BindingShape {
                        name: name.clone(),
                        got: t.shape().to_vec(),
                        want: node.shape.clone(),
                    });
                }
                t.clone()
            }
            Op::Constant(t) => t.clone(),
            Op::Conv2d { stride, pad } => {
                stats.conv_evals += 1;
                let (x, w, b) = (input(0), input(1), input(2));
                let g = conv_geom(x.shape(), w.shape(), *stride, *pad);
                let cols = kernels::im2col(x.data(), &g);
                let (o, n) = (w.shape()[0], g.col_cols());
                let mut out = vec![0.0; o * n];
                for (row, &bias) in out.chunks_mut(n).zip(b.data()) {
                    row.fill(bias);
                }
                kernels::gemm(o, g.col_rows(), n, w.data(), false, &cols, false, 1.0, &mut out);
                Tensor::new(shape, out)?
            }
            Op::Relu => unary(&|v| v.max(0.0))?,
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut out = vec![0.0; m * n];
                kernels::gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
                Tensor::new(shape, out)?
            }
            Op::AddBias => {
                let (x, b) = (input(0), input(1));
                let d = b.len();
                let mut out = x.data().to_vec();
                for row in out.chunks_mut(d) {
                    row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
                }
                Tensor::new(shape, out)?
            }
            Op::AvgPoolRegions(regions) => {
                let x = input(0);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut out = Vec::with_capacity(regions.len() * c);
                for r in regions {
                    let area = (r.height * r.width) as f64;
                    for ch in 0..c {
                        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
                        let mut acc = 0.0;
                        for y in r.top..r.top + r.height {
                            acc += plane[y * w + r.left..y * w + r.left + r.width]
                                .iter()
                                .sum::<f64>();
                        }
                        out.push(acc / area);
                    }
                }
                Tensor::new(shape, out)?
            }
            Op::Upsample { height, width } => {
                let x = input(0);
                let s = x.shape();
                let out = kernels::upsample_forward(x.data(), s[0], (s[1], s[2]), (*height, *width));
                Tensor::new(shape, out)?
            }
            Op::Softmax { axis } => Tensor::new(shape, softmax(input(0), *axis, false))?,
            Op::LogSoftmax { axis } => Tensor::new(shape, softmax(input(0), *axis, true))?,
            Op::Log { eps } => unary(&|v| (v + eps).ln())?,
            Op::Add => binary(input(0), input(1), |a, b| a + b)?,
            Op::Mul => binary(input(0), input(1), |a, b| a * b)?,
            Op::Scale(c) => unary(&|v| v * c)?,
            Op::AddScalar(c) => unary(&|v| v + c)?,
            Op::Powf(p) => unary(&|v| v.powf(*p))?,
            Op::Sum => Tensor::scalar(input(0).data().iter().sum()),
            Op::Mean => {
                let x = input(0);
                Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
            }
            Op::SumAxis { axis } => {
                let x = input(0);
                let (outer, n, inner) = kernels::split_axis(x.shape(), *axis);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..n {
                        let src = &x.data()[(o * n + a) * inner..(o * n + a + 1) * inner];
                        out[o * inner..(o + 1) * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                }
                Tensor::new(shape, out)?
            }
            Op::Reshape => Tensor::new(shape, input(0).data().to_vec())?,
            Op::SelectRows(indices) => {
                let x = input(0);
                let d = x.shape()[1];
                let mut out = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    out.extend_from_slice(&x.data()[i * d..(i + 1) * d]);
                }
                Tensor::new(shape, out)?
            }
            Op::ConcatRows => {
                let mut out = Vec::with_capacity(shape.iter().product());
                for k in 0..node.inputs.len() {
                    out.extend_from_slice(input(k).data());
                }
                Tensor::new(shape, out)?
            }
            Op::L2NormalizeRows => {
                let x = input(0);
                let d = x.shape()[1];
                let mut out = x.data().to_vec();
                for (r, row) in out.chunks_mut(d).enumerate() {
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return Err(GraphError::Domain {
                            node: idx,
                            op: node.op.name(),
                            detail: format!("row {r} has zero norm"),
                        });
                    }
                    row.iter_mut().for_each(|v| *v /= norm);
                }
                Tensor::new(shape, out)?
            }
        };
        Ok(out)
    }

    /// Gradient contributions to each input of `node`, `None` where the
    /// input does not need one.
    fn backward_node(
        &self,
        idx: usize,
        node: &Node,
        dy: &[f64],
        eval: &Evaluation,
    ) -> Vec<Option<Vec<f64>>> {
        let wants = |k: usize| self.nodes[node.inputs[k].0].requires_grad;
        let x = |k: usize| eval.value(node.inputs[k]);
        let y = || &eval.values[idx];
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..dy.len()).map(f).collect() };
        match &node.op {
            Op::Leaf(_) | Op::Constant(_) => vec![],
            Op::Conv2d { stride, pad } => {
                let (xv, w) = (x(0), x(1));
                let g = conv_geom(xv.shape(), w.shape(), *stride, *pad);
                let (o, n, ckk) = (w.shape()[0], g.col_cols(), g.col_rows());
                let cols = kernels::im2col(xv.data(), &g);
                let dx = wants(0).then(|| {
                    let mut dcols = vec![0.0; ckk * n];
                    kernels::gemm(ckk, o, n, w.data(), true, dy, false, 0.0, &mut dcols);
                    kernels::col2im(&dcols, &g)
                });
                let dw = wants(1).then(|| {
                    let mut dw = vec![0.0; o * ckk];
                    kernels::gemm(o, n, ckk, dy, false, &cols, true, 0.0, &mut dw);
                    dw
                });
                let db = wants(2).then(|| dy.chunks(n).map(|r| r.iter().sum()).collect());
                vec![dx, dw, db]
            }
            Op::Relu => {
                let xv = x(0).data();
                vec![Some(elementwise(&|i| if xv[i] > 0.0 { dy[i] } else { 0.0 }))]
            }
            Op::MatMul => {
                let (a, b) = (x(0), x(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let da = wants(0).then(|| {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, dy, false, b.data(), true, 0.0, &mut da);
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, a.data(), true, dy, false, 0.0, &mut db);
                    db
                });
                vec![da, db]
            }
            Op::AddBias => {
                let d = x(1).len();
                let db = wants(1).then(|| {
                    let mut db = vec![0.0; d];
                    for row in dy.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    db
                });
                vec![wants(0).then(|| dy.to_vec()), db]
            }
            Op::AvgPoolRegions(regions) => {
                let s = x(0).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; c * h * w];
                for (ri, r) in regions.iter().enumerate() {
                    let area = (r.height * r.width) as f64;
                    for ch in 0..c {
                        let g = dy[ri * c + ch] / area;
                        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
                        for yy in r.top..r.top + r.height {
                            plane[yy * w + r.left..yy * w + r.left + r.width]
                                .iter_mut()
                                .for_each(|v| *v += g);
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::Upsample { height, width } => {
                let s = x(0).shape();
                vec![Some(kernels::upsample_backward(
                    dy,
                    s[0],
                    (s[1], s[2]),
                    (*height, *width),
                ))]
            }
            Op::Softmax { axis } => {
                let yv = y();
                let (outer, n, inner) = kernels::split_axis(yv.shape(), *axis);
                let yd = yv.data();
                let mut dx = vec![0.0; dy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * n + a) * inner + i;
                        let dot: f64 = (0..n).map(|a| dy[at(a)] * yd[at(a)]).sum();
                        for a in 0..n {
                            dx[at(a)] = yd[at(a)] * (dy[at(a)] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::LogSoftmax { axis } => {
                let yv = y();
                let (outer, n, inner) = kernels::split_axis(yv.shape(), *axis);
                let yd = yv.data();
                let mut dx = vec![0.0; dy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * n + a) * inner + i;
                        let total: f64 = (0..n).map(|a| dy[at(a)]).sum();
                        for a in 0..n {
                            dx[at(a)] = dy[at(a)] - yd[at(a)].exp() * total;
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::Log { eps } => {
                let xv = x(0).data();
                vec![Some(elementwise(&|i| dy[i] / (xv[i] + eps)))]
            }
            Op::Add => vec![wants(0).then(|| dy.to_vec()), wants(1).then(|| dy.to_vec())],
            Op::Mul => {
                let (a, b) = (x(0).data(), x(1).data());
                vec![
                    wants(0).then(|| elementwise(&|i| dy[i] * b[i])),
                    wants(1).then(|| elementwise(&|i| dy[i] * a[i])),
                ]
            }
            Op::Scale(c) => vec![Some(elementwise(&|i| dy[i] * c))],
            Op::AddScalar(_) | Op::Reshape => vec![Some(dy.to_vec())],
            Op::Powf(p) => {
                let xv = x(0).data();
                vec![Some(elementwise(&|i| dy[i] * p * xv[i].powf(p - 1.0)))]
            }
            Op::Sum => vec![Some(vec![dy[0]; x(0).len()])],
            Op::Mean => {
                let n = x(0).len();
                vec![Some(vec![dy[0] / n as f64; n])]
            }
            Op::SumAxis { axis } => {
                let (outer, n, inner) = kernels::split_axis(x(0).shape(), *axis);
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for a in 0..n {
                        dx[(o * n + a) * inner..(o * n + a + 1) * inner]
                            .copy_from_slice(&dy[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(dx)]
            }
            Op::SelectRows(indices) => {
                let xv = x(0);
                let d = xv.shape()[1];
                let mut dx = vec![0.0; xv.len()];
                for (r, &i) in indices.iter().enumerate() {
                    dx[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&dy[r * d..(r + 1) * d])
                        .for_each(|(a, b)| *a += b);
                }
                vec![Some(dx)]
            }
            Op::ConcatRows => {
                let mut offset = 0;
                (0..node.inputs.len())
                    .map(|k| {
                        let n = x(k).len();
                        let part = wants(k).then(|| dy[offset..offset + n].to_vec());
                        offset += n;
                        part
                    })
                    .collect()
            }
            Op::L2NormalizeRows => {
                let (xv, yv) = (x(0), y());
                let d = xv.shape()[1];
                let mut dx = vec![0.0; xv.len()];
                for r in 0..xv.shape()[0] {
                    let span = r * d..(r + 1) * d;
                    let xr = &xv.data()[span.clone()];
                    let yr = &yv.data()[span.clone()];
                    let gr = &dy[span.clone()];
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, out) in dx[span].iter_mut().enumerate() {
                        *out = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                vec![Some(dx)]
            }
        }
    }

}

fn conv_geom(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> ConvGeom {
    ConvGeom {
        channels: xs[0],
        height: xs[1],
        width: xs[2],
        kernel: ws[2],
        stride,
        pad,
    }
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, GraphError> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn softmax(x: &Tensor, axis: usize, log: bool) -> Vec<f64> {
    let (outer, n, inner) = kernels::split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let max = (0..n).map(|a| xd[at(a)]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..n).map(|a| (xd[at(a)] - max).exp()).sum();
            let log_total = total.ln();
            for a in 0..n {
                let shifted = xd[at(a)] - max;
                out[at(a)] = if log {
                    shifted - log_total
                } else {
                    shifted.exp() / total
                };
            }
        }
    }
    out
}
