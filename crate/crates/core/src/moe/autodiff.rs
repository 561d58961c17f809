//! Tape-based reverse-mode differentiation over the handful of operations the
//! toy network needs.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the tape from a scalar node back to the start and returns the
//! gradient of every parameter leaf that contributed.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use super::router::{renormalize, top_k_indices};
use super::{MoeError, Tensor};
use crate::numeric::softmax;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Tanh(NodeId),
    Add(NodeId, NodeId),
    GlobalAvgPool(NodeId),
    AddConstant(NodeId),
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Softmax(NodeId),
    TopK {
        input: NodeId,
        keep: Vec<usize>,
    },
    Mix {
        weights: NodeId,
        experts: Vec<(usize, NodeId)>,
    },
    L1 {
        pred: NodeId,
        target: Tensor,
    },
    Dot {
        input: NodeId,
        coeffs: Tensor,
    },
    WeightedSum(Vec<(NodeId, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Parameter gradients keyed by parameter id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, param: usize) -> Option<&Tensor> {
        self.grads.get(&param)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<usize, NodeId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor, MoeError> {
        Ok(&self.nodes[self.check(id)?].value)
    }

    fn check(&self, id: NodeId) -> Result<usize, MoeError> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(MoeError::UnknownNode);
        }
        Ok(id.index)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.index].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let id = NodeId {
            tape: self.id,
            index: self.nodes.len(),
        };
        self.nodes.push(Node { value, op });
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Leaf for parameter `param`. Repeated calls return the same node.
    pub fn param(&mut self, param: usize, value: &Tensor) -> NodeId {
        if let Some(&id) = self.params.get(&param) {
            return id;
        }
        let id = self.push(value.clone(), Op::Param(param));
        self.params.insert(param, id);
        id
    }

    /// Same-padded 2-D convolution of a `C x H x W` input with an
    /// `O x C x K x K` kernel (odd `K`) plus a per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, MoeError> {
        for id in [input, weight, bias] {
            self.check(id)?;
        }
        let (x, w, b) = (self.val(input), self.val(weight), self.val(bias));
        let geom = ConvGeom::new(x.shape(), w.shape(), b.shape())?;
        let out = geom.forward(x.data(), w.data(), b.data());
        let value = Tensor::new(vec![geom.o, geom.h, geom.w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, MoeError> {
        let v = self.value(x)?;
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|a| a.tanh()).collect(),
        )?;
        Ok(self.push(out, Op::Tanh(x)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MoeError> {
        let (va, vb) = (self.value(a)?, self.value(b)?);
        if va.shape() != vb.shape() {
            return Err(MoeError::Shape(format!(
                "add {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `C x H x W -> C`, mean over each channel.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, MoeError> {
        let pooled = super::router::global_average_pool(self.value(x)?)?;
        let out = Tensor::new(vec![pooled.len()], pooled)?;
        Ok(self.push(out, Op::GlobalAvgPool(x)))
    }

    /// Adds a constant (non-differentiated) offset, e.g. routing noise.
    pub fn add_constant(&mut self, x: NodeId, offset: &[f64]) -> Result<NodeId, MoeError> {
        let v = self.value(x)?;
        if v.len() != offset.len() {
            return Err(MoeError::Shape(format!(
                "offset of {} for {:?}",
                offset.len(),
                v.shape()
            )));
        }
        let data = v.data().iter().zip(offset).map(|(a, b)| a + b).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddConstant(x)))
    }

    /// `y = W x + b` for a vector `x` of length `C` and `W` of shape `E x C`.
    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, MoeError> {
        let (x, w, b) = (self.value(input)?, self.value(weight)?, self.value(bias)?);
        let ws = w.shape();
        if ws.len() != 2 || x.len() != ws[1] || b.shape() != [ws[0]] {
            return Err(MoeError::Shape(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                ws,
                b.shape()
            )));
        }
        let y = super::router::project(w, b, x.data());
        let out = Tensor::new(vec![y.len()], y)?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, MoeError> {
        let v = self.value(x)?;
        let out = Tensor::new(v.shape().to_vec(), softmax(v.data()))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Keeps the `k` largest entries (lower index wins ties) and rescales them
    /// to sum to one. Gradients flow through the survivors only.
    pub fn top_k(&mut self, x: NodeId, k: usize) -> Result<NodeId, MoeError> {
        let v = self.value(x)?;
        if k == 0 || k > v.len() {
            return Err(MoeError::TopK {
                k,
                experts: v.len(),
            });
        }
        let keep = top_k_indices(v.data(), k);
        let out = Tensor::new(v.shape().to_vec(), renormalize(v.data(), &keep))?;
        Ok(self.push(out, Op::TopK { input: x, keep }))
    }

    /// `sum_e weights[e] * expert_e` over the listed `(e, node)` pairs.
    pub fn mix(
        &mut self,
        weights: NodeId,
        experts: &[(usize, NodeId)],
    ) -> Result<NodeId, MoeError> {
        let w = self.value(weights)?.clone();
        let &(_, first) = experts
            .first()
            .ok_or_else(|| MoeError::Shape("mix of zero experts".into()))?;
        let shape = self.value(first)?.shape().to_vec();
        let mut acc = Tensor::zeros(&shape);
        for &(e, node) in experts {
            let y = self.value(node)?;
            if y.shape() != shape.as_slice() || e >= w.len() {
                return Err(MoeError::Shape(format!(
                    "expert {e} output {:?} (expected {shape:?}, {} weights)",
                    y.shape(),
                    w.len()
                )));
            }
            acc.axpy(w.data()[e], y);
        }
        Ok(self.push(
            acc,
            Op::Mix {
                weights,
                experts: experts.to_vec(),
            },
        ))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId, MoeError> {
        let p = self.value(pred)?;
        if p.shape() != target.shape() {
            return Err(MoeError::Shape(format!(
                "l1 {:?} vs {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::L1 {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// `sum_i coeffs_i * x_i`.
    pub fn dot(&mut self, x: NodeId, coeffs: &Tensor) -> Result<NodeId, MoeError> {
        let v = self.value(x)?;
        if v.len() != coeffs.len() {
            return Err(MoeError::Shape(format!(
                "dot {:?} . {:?}",
                v.shape(),
                coeffs.shape()
            )));
        }
        let s = v.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::Dot {
                input: x,
                coeffs: coeffs.clone(),
            },
        ))
    }

    /// `sum_i c_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId, MoeError> {
        let mut total = 0.0;
        for &(node, c) in terms {
            let v = self.value(node)?;
            if v.len() != 1 {
                return Err(MoeError::NotScalar(v.shape().to_vec()));
            }
            total += c * v.item();
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, MoeError> {
        let end = self.check(loss)?;
        if self.nodes[end].value.len() != 1 {
            return Err(MoeError::NotScalar(self.nodes[end].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=end).map(|_| None).collect();
        grads[end] = Some(Tensor::filled(self.nodes[end].value.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=end).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    out.grads.insert(*p, g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                } => {
                    let (x, w, b) = (self.val(*input), self.val(*weight), self.val(*bias));
                    let geom = ConvGeom::new(x.shape(), w.shape(), b.shape())?;
                    let (dx, dw, db) = geom.backward(x.data(), w.data(), g.data());
                    accumulate(&mut grads, *input, x.shape(), dx);
                    accumulate(&mut grads, *weight, w.shape(), dw);
                    accumulate(&mut grads, *bias, b.shape(), db);
                }
                Op::Tanh(x) => {
                    let dx = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(y, g)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *x, g.shape(), dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape(), g.data().to_vec());
                }
                Op::GlobalAvgPool(x) => {
                    let shape = self.val(*x).shape();
                    let plane = shape[1] * shape[2];
                    let dx = g
                        .data()
                        .iter()
                        .flat_map(|&gc| std::iter::repeat_n(gc / plane as f64, plane))
                        .collect();
                    accumulate(&mut grads, *x, shape, dx);
                }
                Op::AddConstant(x) => {
                    accumulate(&mut grads, *x, g.shape(), g.data().to_vec());
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let (x, w) = (self.val(*input), self.val(*weight));
                    let c = x.len();
                    let mut dx = vec![0.0; c];
                    let mut dw = vec![0.0; w.len()];
                    for (e, &ge) in g.data().iter().enumerate() {
                        let row = &w.data()[e * c..(e + 1) * c];
                        for j in 0..c {
                            dx[j] += row[j] * ge;
                            dw[e * c + j] = ge * x.data()[j];
                        }
                    }
                    accumulate(&mut grads, *input, x.shape(), dx);
                    accumulate(&mut grads, *weight, w.shape(), dw);
                    accumulate(&mut grads, *bias, g.shape(), g.data().to_vec());
                }
                Op::Softmax(x) => {
                    let s = node.value.data();
                    let dot: f64 = s.iter().zip(g.data()).map(|(a, b)| a * b).sum();
                    let dx = s
                        .iter()
                        .zip(g.data())
                        .map(|(si, gi)| si * (gi - dot))
                        .collect();
                    accumulate(&mut grads, *x, g.shape(), dx);
                }
                Op::TopK { input, keep } => {
                    let x = self.val(*input).data();
                    let total: f64 = keep.iter().map(|&j| x[j]).sum();
                    let inner: f64 = keep.iter().map(|&j| g.data()[j] * x[j]).sum();
                    let mut dx = vec![0.0; x.len()];
                    for &j in keep {
                        dx[j] = g.data()[j] / total - inner / (total * total);
                    }
                    accumulate(&mut grads, *input, g.shape(), dx);
                }
                Op::Mix { weights, experts } => {
                    let w = self.val(*weights);
                    let mut dw = vec![0.0; w.len()];
                    for &(e, node_id) in experts {
                        let y = self.val(node_id);
                        dw[e] += y
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                        let we = w.data()[e];
                        accumulate(
                            &mut grads,
                            node_id,
                            g.shape(),
                            g.data().iter().map(|v| v * we).collect(),
                        );
                    }
                    accumulate(&mut grads, *weights, w.shape(), dw);
                }
                Op::L1 { pred, target } => {
                    let p = self.val(*pred);
                    let scale = g.item() / p.len() as f64;
                    let dp = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| {
                            let d = a - b;
                            if d > 0.0 {
                                scale
                            } else if d < 0.0 {
                                -scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *pred, p.shape(), dp);
                }
                Op::Dot { input, coeffs } => {
                    let gs = g.item();
                    let shape = self.val(*input).shape();
                    accumulate(
                        &mut grads,
                        *input,
                        shape,
                        coeffs.data().iter().map(|c| c * gs).collect(),
                    );
                }
                Op::WeightedSum(terms) => {
                    let gs = g.item();
                    for &(node_id, c) in terms {
                        accumulate(&mut grads, node_id, &[1], vec![c * gs]);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[id.index] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient matches value shape"));
        }
    }
}

/// Shapes of one same-padded convolution.
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], b: &[usize]) -> Result<Self, MoeError> {
        let ok = x.len() == 3
            && w.len() == 4
            && w[1] == x[0]
            && w[2] == w[3]
            && w[2] % 2 == 1
            && b == [w[0]];
        if !ok {
            return Err(MoeError::Shape(format!(
                "conv2d: input {x:?}, weight {w:?}, bias {b:?}"
            )));
        }
        Ok(Self {
            c: x[0],
            h: x[1],
            w: x[2],
            o: w[0],
            k: w[2],
        })
    }

    /// Overlap of output row/column range with a kernel offset `d`.
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).min(len as isize).max(0) as usize;
        (lo, hi.max(lo))
    }

    fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let Self { c, h, w, o, k } = *self;
        let pad = (k / 2) as isize;
        let plane = h * w;
        let mut out = vec![0.0; o * plane];
        for oc in 0..o {
            let out_plane = &mut out[oc * plane..(oc + 1) * plane];
            out_plane.fill(bias[oc]);
            for ic in 0..c {
                let in_plane = &x[ic * plane..(ic + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = Self::span(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = Self::span(w, dx);
                        let wv = weight[((oc * c + ic) * k + ky) * k + kx];
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let ix0 = (x0 as isize + dx) as usize;
                            let orow = &mut out_plane[y * w + x0..y * w + x1];
                            let irow = &in_plane[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                            for (ov, iv) in orow.iter_mut().zip(irow) {
                                *ov += wv * iv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&self, x: &[f64], weight: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let Self { c, h, w, o, k } = *self;
        let pad = (k / 2) as isize;
        let plane = h * w;
        let mut dx = vec![0.0; c * plane];
        let mut dw = vec![0.0; weight.len()];
        let db: Vec<f64> = (0..o)
            .map(|oc| g[oc * plane..(oc + 1) * plane].iter().sum())
            .collect();
        for oc in 0..o {
            let g_plane = &g[oc * plane..(oc + 1) * plane];
            for ic in 0..c {
                let in_plane = &x[ic * plane..(ic + 1) * plane];
                let dx_plane = &mut dx[ic * plane..(ic + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = Self::span(h, dy);
                    for kx in 0..k {
                        let dxo = kx as isize - pad;
                        let (x0, x1) = Self::span(w, dxo);
                        let widx = ((oc * c + ic) * k + ky) * k + kx;
                        let wv = weight[widx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let ix0 = (x0 as isize + dxo) as usize;
                            let n = x1 - x0;
                            let grow = &g_plane[y * w + x0..y * w + x1];
                            let irow = &in_plane[iy * w + ix0..iy * w + ix0 + n];
                            let drow = &mut dx_plane[iy * w + ix0..iy * w + ix0 + n];
                            for ((gv, iv), dv) in grow.iter().zip(irow).zip(drow.iter_mut()) {
                                acc += gv * iv;
                                *dv += wv * gv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
        (dx, dw, db)
    }
}
