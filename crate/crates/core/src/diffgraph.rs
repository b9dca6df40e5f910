//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only list of primitive operations. Leaves are
//! either named inputs (bound per call) or named trainable parameters (owned
//! by the graph). `forward` caches every intermediate value; `backward`
//! replays the tape in reverse and returns the cotangent-contracted gradient
//! for every leaf.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a node inside its graph.
pub type NodeId = usize;

/// Named tensors supplied to `forward`/`backward` for the input leaves.
pub type Bindings = BTreeMap<String, Tensor>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch at node `{node}`: {detail}")]
    Shape { node: String, detail: String },
    #[error("input `{0}` is not bound")]
    Unbound(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("backward called with bindings that differ from the cached forward pass")]
    StaleBindings,
    #[error("non-finite value produced at node `{0}`")]
    NonFinite(String),
    #[error("graph has no output node")]
    NoOutput,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate leaf name `{0}`")]
    DuplicateLeaf(String),
}

/// Dense row-major tensor.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GraphError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(GraphError::Shape {
                node: "tensor".into(),
                detail: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len()], data: values }
    }

    /// Builds an `rows x cols` matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, GraphError> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Elementwise activation used by [`MlpSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Param(String),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum(NodeId),
    SqDist(NodeId, NodeId),
    LogSumExp(NodeId),
    Scale(NodeId, f64),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::SqDist(..) => "sqdist",
            Op::LogSumExp(_) => "logsumexp",
            Op::Scale(..) => "scale",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
        }
    }
}

#[derive(Debug, Clone)]
struct Cache {
    inputs: Bindings,
    values: Vec<Tensor>,
}

/// Per-leaf gradients returned by [`Graph::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub grads: BTreeMap<String, Tensor>,
    /// Filled in by [`Graph::check_gradient`].
    pub max_rel_error: Option<f64>,
}

impl GradientReport {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }
}

/// One serialized parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// JSON checkpoint layout: `{"format": "svnr-params/1", "records": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub format: String,
    pub records: Vec<ParamRecord>,
}

pub const CHECKPOINT_FORMAT: &str = "svnr-params/1";

/// Topologically ordered computation graph.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    params: BTreeMap<String, Tensor>,
    output: Option<NodeId>,
    cache: Option<Cache>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.cache = None;
        self.nodes.push(op);
        self.nodes.len() - 1
    }

    fn check_id(&self, id: NodeId) {
        assert!(id < self.nodes.len(), "node {id} does not exist yet");
    }

    pub fn input(&mut self, name: &str) -> Result<NodeId, GraphError> {
        if self.leaf_exists(name) {
            return Err(GraphError::DuplicateLeaf(name.into()));
        }
        Ok(self.push(Op::Input(name.into())))
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId, GraphError> {
        if self.leaf_exists(name) {
            return Err(GraphError::DuplicateLeaf(name.into()));
        }
        self.params.insert(name.into(), value);
        Ok(self.push(Op::Param(name.into())))
    }

    fn leaf_exists(&self, name: &str) -> bool {
        self.nodes.iter().any(|op| matches!(op, Op::Input(n) | Op::Param(n) if n == name))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        for id in [x, w, b] {
            self.check_id(id);
        }
        self.push(Op::Affine { x, w, b })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        self.push(Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        self.push(Op::Relu(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        self.push(Op::Exp(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        self.push(Op::Log(x))
    }

    /// Sum of all elements, producing a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        self.push(Op::Sum(x))
    }

    /// Pairwise squared Euclidean distances between the rows of two matrices.
    pub fn sqdist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_id(a);
        self.check_id(b);
        self.push(Op::SqDist(a, b))
    }

    /// Log-sum-exp over the last axis.
    pub fn logsumexp(&mut self, x: NodeId) -> NodeId {
        self.check_id(x);
        self.push(Op::LogSumExp(x))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.check_id(x);
        self.push(Op::Scale(x, factor))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_id(a);
        self.check_id(b);
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_id(a);
        self.check_id(b);
        self.push(Op::Mul(a, b))
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.check_id(id);
        self.cache = None;
        self.output = Some(id);
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Names of the input leaves, in insertion order.
    pub fn input_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter_map(|op| match op {
                Op::Input(n) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param_value(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Replaces a parameter value; the shape must stay the same.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), GraphError> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| GraphError::UnknownParameter(name.into()))?;
        if slot.shape != value.shape {
            return Err(GraphError::Shape {
                node: name.into(),
                detail: format!("expected {:?}, got {:?}", slot.shape, value.shape),
            });
        }
        *slot = value;
        self.cache = None;
        Ok(())
    }

    /// Mutable access to every parameter, for optimizers.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.cache = None;
        self.params.iter_mut()
    }

    pub fn export_params(&self) -> ParamCheckpoint {
        ParamCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            records: self
                .params
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    values: t.data.clone(),
                })
                .collect(),
        }
    }

    pub fn import_params(&mut self, checkpoint: &ParamCheckpoint) -> Result<(), GraphError> {
        for rec in &checkpoint.records {
            self.set_param(&rec.name, Tensor::new(rec.shape.clone(), rec.values.clone())?)?;
        }
        Ok(())
    }

    fn label(&self, id: NodeId) -> String {
        match &self.nodes[id] {
            Op::Input(n) | Op::Param(n) => n.clone(),
            op => format!("{}#{id}", op.kind()),
        }
    }

    fn shape_err(&self, id: NodeId, detail: String) -> GraphError {
        GraphError::Shape { node: self.label(id), detail }
    }

    /// Evaluates the graph and caches all intermediate values.
    pub fn forward(&mut self, bindings: &Bindings) -> Result<Tensor, GraphError> {
        let out = self.output.ok_or(GraphError::NoOutput)?;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for id in 0..self.nodes.len() {
            let v = self.eval_node(id, &values, bindings)?;
            if !v.is_finite() {
                return Err(GraphError::NonFinite(self.label(id)));
            }
            values.push(v);
        }
        let result = values[out].clone();
        let inputs = self
            .input_names()
            .into_iter()
            .filter_map(|n| bindings.get(&n).map(|t| (n, t.clone())))
            .collect();
        self.cache = Some(Cache { inputs, values });
        Ok(result)
    }

    fn eval_node(&self, id: NodeId, v: &[Tensor], bindings: &Bindings) -> Result<Tensor, GraphError> {
        Ok(match &self.nodes[id] {
            Op::Input(name) => bindings.get(name).cloned().ok_or_else(|| GraphError::Unbound(name.clone()))?,
            Op::Param(name) => self.params[name].clone(),
            Op::Affine { x, w, b } => {
                let (xv, wv, bv) = (&v[*x], &v[*w], &v[*b]);
                if xv.shape.len() != 2 || wv.shape.len() != 2 || bv.shape.len() != 1 {
                    return Err(self.shape_err(
                        id,
                        format!("affine needs x[B,in], w[out,in], b[out]; got {:?}, {:?}, {:?}", xv.shape, wv.shape, bv.shape),
                    ));
                }
                let (rows, fan_in) = (xv.shape[0], xv.shape[1]);
                let fan_out = wv.shape[0];
                if wv.shape[1] != fan_in || bv.shape[0] != fan_out {
                    return Err(self.shape_err(
                        id,
                        format!("x{:?} incompatible with w{:?} / b{:?}", xv.shape, wv.shape, bv.shape),
                    ));
                }
                let mut out = Vec::with_capacity(rows * fan_out);
                for _ in 0..rows {
                    out.extend_from_slice(&bv.data);
                }
                gemm(rows, fan_in, fan_out, &xv.data, (fan_in, 1), &wv.data, (1, fan_in), 1.0, &mut out);
                Tensor { shape: vec![rows, fan_out], data: out }
            }
            Op::Tanh(x) => v[*x].map(f64::tanh),
            Op::Relu(x) => v[*x].map(|a| a.max(0.0)),
            Op::Exp(x) => v[*x].map(f64::exp),
            Op::Log(x) => {
                if v[*x].data.iter().any(|&a| a <= 0.0) {
                    return Err(self.shape_err(id, "log of a non-positive value".into()));
                }
                v[*x].map(f64::ln)
            }
            Op::Sum(x) => Tensor::scalar(v[*x].data.iter().sum()),
            Op::SqDist(a, b) => {
                let (av, bv) = (&v[*a], &v[*b]);
                if av.shape.len() != 2 || bv.shape.len() != 2 || av.shape[1] != bv.shape[1] {
                    return Err(self.shape_err(
                        id,
                        format!("sqdist needs [n,d] and [m,d]; got {:?} and {:?}", av.shape, bv.shape),
                    ));
                }
                let (n, m) = (av.shape[0], bv.shape[0]);
                let mut out = Vec::with_capacity(n * m);
                for i in 0..n {
                    for j in 0..m {
                        out.push(av.row(i).iter().zip(bv.row(j)).map(|(p, q)| (p - q) * (p - q)).sum());
                    }
                }
                Tensor { shape: vec![n, m], data: out }
            }
            Op::LogSumExp(x) => {
                let xv = &v[*x];
                let Some((&k, lead)) = xv.shape.split_last() else {
                    return Err(self.shape_err(id, "logsumexp of a scalar".into()));
                };
                if k == 0 {
                    return Err(self.shape_err(id, "logsumexp over an empty axis".into()));
                }
                let data = xv.data.chunks(k).map(logsumexp).collect();
                Tensor { shape: lead.to_vec(), data }
            }
            Op::Scale(x, c) => v[*x].map(|a| a * c),
            Op::Add(a, b) | Op::Mul(a, b) => {
                let (av, bv) = (&v[*a], &v[*b]);
                if av.shape != bv.shape {
                    return Err(self.shape_err(id, format!("operands {:?} and {:?} differ", av.shape, bv.shape)));
                }
                let add = matches!(self.nodes[id], Op::Add(..));
                let data = av
                    .data
                    .iter()
                    .zip(&bv.data)
                    .map(|(p, q)| if add { p + q } else { p * q })
                    .collect();
                Tensor { shape: av.shape.clone(), data }
            }
        })
    }

    /// Contracts `d output / d leaf` with `cotangent` for every leaf.
    ///
    /// Requires a prior `forward` on the same bindings.
    pub fn backward(&self, bindings: &Bindings, cotangent: &Tensor) -> Result<GradientReport, GraphError> {
        let cache = self.cache.as_ref().ok_or(GraphError::BackwardBeforeForward)?;
        let out = self.output.ok_or(GraphError::NoOutput)?;
        for (name, t) in &cache.inputs {
            if bindings.get(name) != Some(t) {
                return Err(GraphError::StaleBindings);
            }
        }
        let vals = &cache.values;
        if cotangent.shape != vals[out].shape {
            return Err(self.shape_err(
                out,
                format!("cotangent {:?} does not match output {:?}", cotangent.shape, vals[out].shape),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[out] = Some(cotangent.clone());
        for id in (0..=out).rev() {
            let Some(g) = adj[id].take() else { continue };
            match &self.nodes[id] {
                Op::Input(_) | Op::Param(_) => adj[id] = Some(g),
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (&vals[*x], &vals[*w]);
                    let (rows, fan_in, fan_out) = (xv.shape[0], xv.shape[1], wv.shape[0]);
                    let mut gx = vec![0.0; rows * fan_in];
                    gemm(rows, fan_out, fan_in, &g.data, (fan_out, 1), &wv.data, (fan_in, 1), 0.0, &mut gx);
                    let mut gw = vec![0.0; fan_out * fan_in];
                    gemm(fan_out, rows, fan_in, &g.data, (1, fan_out), &xv.data, (fan_in, 1), 0.0, &mut gw);
                    let mut gb = vec![0.0; fan_out];
                    for r in 0..rows {
                        for (acc, gv) in gb.iter_mut().zip(&g.data[r * fan_out..(r + 1) * fan_out]) {
                            *acc += gv;
                        }
                    }
                    accumulate(&mut adj, *x, Tensor { shape: xv.shape.clone(), data: gx });
                    accumulate(&mut adj, *w, Tensor { shape: wv.shape.clone(), data: gw });
                    accumulate(&mut adj, *b, Tensor { shape: vec![fan_out], data: gb });
                }
                Op::Tanh(x) => {
                    let y = &vals[id];
                    let data = g.data.iter().zip(&y.data).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                    accumulate(&mut adj, *x, Tensor { shape: g.shape.clone(), data });
                }
                Op::Relu(x) => {
                    let xv = &vals[*x];
                    let data = g.data.iter().zip(&xv.data).map(|(gv, a)| if *a > 0.0 { *gv } else { 0.0 }).collect();
                    accumulate(&mut adj, *x, Tensor { shape: g.shape.clone(), data });
                }
                Op::Exp(x) => {
                    let y = &vals[id];
                    let data = g.data.iter().zip(&y.data).map(|(gv, yv)| gv * yv).collect();
                    accumulate(&mut adj, *x, Tensor { shape: g.shape.clone(), data });
                }
                Op::Log(x) => {
                    let xv = &vals[*x];
                    let data = g.data.iter().zip(&xv.data).map(|(gv, a)| gv / a).collect();
                    accumulate(&mut adj, *x, Tensor { shape: g.shape.clone(), data });
                }
                Op::Sum(x) => {
                    let shape = vals[*x].shape.clone();
                    accumulate(&mut adj, *x, Tensor::filled(&shape, g.data[0]));
                }
                Op::SqDist(a, b) => {
                    let (av, bv) = (&vals[*a], &vals[*b]);
                    let (n, m, d) = (av.shape[0], bv.shape[0], av.shape[1]);
                    let mut ga = vec![0.0; n * d];
                    let mut gb = vec![0.0; m * d];
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g.data[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                let diff = 2.0 * gij * (av.data[i * d + k] - bv.data[j * d + k]);
                                ga[i * d + k] += diff;
                                gb[j * d + k] -= diff;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, Tensor { shape: av.shape.clone(), data: ga });
                    accumulate(&mut adj, *b, Tensor { shape: bv.shape.clone(), data: gb });
                }
                Op::LogSumExp(x) => {
                    let xv = &vals[*x];
                    let k = *xv.shape.last().expect("checked in forward");
                    let mut data = Vec::with_capacity(xv.len());
                    for (chunk, (gv, lse)) in xv.data.chunks(k).zip(g.data.iter().zip(&vals[id].data)) {
                        data.extend(chunk.iter().map(|a| gv * (a - lse).exp()));
                    }
                    accumulate(&mut adj, *x, Tensor { shape: xv.shape.clone(), data });
                }
                Op::Scale(x, c) => {
                    accumulate(&mut adj, *x, g.map(|gv| gv * c));
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&vals[*a], &vals[*b]);
                    let ga = g.data.iter().zip(&bv.data).map(|(gv, q)| gv * q).collect();
                    let gb = g.data.iter().zip(&av.data).map(|(gv, p)| gv * p).collect();
                    accumulate(&mut adj, *a, Tensor { shape: g.shape.clone(), data: ga });
                    accumulate(&mut adj, *b, Tensor { shape: g.shape.clone(), data: gb });
                }
            }
        }
        let mut grads = BTreeMap::new();
        for (id, op) in self.nodes.iter().enumerate() {
            if let Op::Input(name) | Op::Param(name) = op {
                let g = adj[id].take().unwrap_or_else(|| Tensor::zeros(&vals[id].shape));
                grads.insert(name.clone(), g);
            }
        }
        Ok(GradientReport { grads, max_rel_error: None })
    }

    /// Compares `backward` against central finite differences over every
    /// leaf element and returns the largest relative error.
    ///
    /// The relative error of one element is `|a - n| / max(|a|, |n|, 1e-3)`,
    /// so gradients far below the finite-difference noise floor are compared
    /// in absolute terms. The cotangent is all ones.
    pub fn check_gradient(&mut self, bindings: &Bindings, fd_step: f64) -> Result<f64, GraphError> {
        assert!(fd_step > 0.0, "fd_step must be positive");
        let out = self.forward(bindings)?;
        let cot = Tensor::filled(out.shape(), 1.0);
        let report = self.backward(bindings, &cot)?;
        let mut worst: f64 = 0.0;
        let objective = |g: &mut Graph, b: &Bindings| -> Result<f64, GraphError> { Ok(g.forward(b)?.data.iter().sum()) };

        for name in self.input_names() {
            let base = bindings.get(&name).ok_or_else(|| GraphError::Unbound(name.clone()))?.clone();
            let analytic = &report.grads[&name];
            for k in 0..base.len() {
                let mut b = bindings.clone();
                let (hi, lo) = (base.data[k] + fd_step, base.data[k] - fd_step);
                let slot = b.get_mut(&name).expect("bound above");
                slot.data[k] = hi;
                let plus = objective(self, &b)?;
                let slot = b.get_mut(&name).expect("bound above");
                slot.data[k] = lo;
                let minus = objective(self, &b)?;
                worst = worst.max(rel_error(analytic.data[k], (plus - minus) / (hi - lo)));
            }
        }
        let names: Vec<String> = self.params.keys().cloned().collect();
        for name in names {
            let base = self.params[&name].clone();
            let analytic = report.grads[&name].clone();
            for k in 0..base.len() {
                let (hi, lo) = (base.data[k] + fd_step, base.data[k] - fd_step);
                let mut t = base.clone();
                t.data[k] = hi;
                self.params.insert(name.clone(), t.clone());
                let plus = objective(self, bindings)?;
                t.data[k] = lo;
                self.params.insert(name.clone(), t);
                let minus = objective(self, bindings)?;
                worst = worst.max(rel_error(analytic.data[k], (plus - minus) / (hi - lo)));
            }
            self.params.insert(name, base);
        }
        // leave the cache consistent with the caller's bindings
        self.forward(bindings)?;
        Ok(worst)
    }

    /// Builds a fully connected network reading input `"x"` of shape `[B, in]`.
    ///
    /// Parameters are named `l{k}.w` (`[out, in]`) and `l{k}.b` (`[out]`) and
    /// initialized uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn mlp<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Graph, GraphError> {
        if spec.sizes.len() < 2 {
            return Err(GraphError::InvalidSpec("need at least an input and an output size".into()));
        }
        if let Some(pos) = spec.sizes.iter().position(|&s| s == 0) {
            return Err(GraphError::InvalidSpec(format!("layer {pos} has zero width")));
        }
        let mut g = Graph::new();
        let mut h = g.input("x")?;
        let layers = spec.sizes.len() - 1;
        for (k, pair) in spec.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            let b: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            let wn = g.param(&format!("l{k}.w"), Tensor { shape: vec![fan_out, fan_in], data: w })?;
            let bn = g.param(&format!("l{k}.b"), Tensor { shape: vec![fan_out], data: b })?;
            h = g.affine(h, wn, bn);
            let act = if k + 1 == layers { spec.output } else { spec.hidden };
            h = match act {
                Activation::Linear => h,
                Activation::Relu => g.relu(h),
                Activation::Tanh => g.tanh(h),
            };
        }
        if let Some(c) = spec.output_scale {
            h = g.scale(h, c);
        }
        g.set_output(h);
        Ok(g)
    }

    /// Convenience for single-input graphs built by [`Graph::mlp`].
    pub fn forward_x(&mut self, x: Tensor) -> Result<Tensor, GraphError> {
        self.forward(&bind("x", x))
    }
}

/// Layer sizes and activations for [`Graph::mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// `[in, hidden.., out]`.
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    /// Multiplies the final activation, e.g. an action bound after `tanh`.
    #[serde(default)]
    pub output_scale: Option<f64>,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        MlpSpec { sizes, hidden, output, output_scale: None }
    }

    /// Two hidden layers of the given width with relu, linear output.
    pub fn default_hidden(input: usize, output: usize, width: usize) -> Self {
        MlpSpec::new(vec![input, width, width, output], Activation::Relu, Activation::Linear)
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

pub fn bind(name: &str, t: Tensor) -> Bindings {
    let mut b = Bindings::new();
    b.insert(name.into(), t);
    b
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut adj[id] {
        Some(acc) => {
            for (a, v) in acc.data.iter_mut().zip(&g.data) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `c = beta * c + A * B` where `A` is `m x k` and `B` is `k x n`, both given
/// with explicit (row, col) strides; `c` is dense row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let max_a = (m - 1) * a_strides.0 + (k - 1) * a_strides.1;
    let max_b = (k - 1) * b_strides.0 + (n - 1) * b_strides.1;
    assert!(max_a < a.len() && max_b < b.len(), "gemm operand out of bounds");
    // SAFETY: the asserts above bound every strided access inside `a` and
    // `b`, and `c` holds exactly m*n contiguous row-major values.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
