use alloc::vec;
use alloc::vec::Vec;

use crate::ops::conv::{conv2d_backward, conv2d_forward, Conv2dSpec};
use crate::ops::corr::{corr_backward, corr_forward, CorrCache};
use crate::ops::norm::{layer_norm_backward, layer_norm_forward, LayerNormCache};
use crate::ops::resample::{repeat_nearest2, repeat_nearest2_backward, resize_bilinear, resize_bilinear_backward};
use crate::ops::upsample::{convex_upsample_backward, convex_upsample_forward};
use crate::ops::xca::{xca_backward, xca_forward, XcaCache};
use crate::ops::{gelu, gelu_grad, sigmoid};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::training::loss::{flow_loss_grads, flow_loss_value, LossKind};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    ChannelScale { x: Var, scale: Var },
    ChannelShift { x: Var, shift: Var },
    Conv { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec, cols: Option<Vec<f64>> },
    LayerNorm { g: Var, b: Var, x: Var, cache: LayerNormCache },
    Xca { k: Var, q: Var, v: Var, theta: Var, heads: usize, cache: XcaCache },
    Resize { x: Var },
    Repeat2(Var),
    Corr { f1: Var, f2: Var, flow: Var, radius: usize, cache: CorrCache },
    ConvexUp { flow: Var, mask: Var },
    FlowLoss { preds: Vec<Var>, gt: Tensor, valid: Option<Vec<bool>>, weights: Vec<f64>, kind: LossKind },
    Dot { x: Var, weights: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode autodiff recording.
///
/// Every operation evaluates eagerly and appends a node. Parameters are read
/// from the borrowed [`ParamStore`]; each parameter gets at most one leaf per
/// tape, so gradients of shared weights accumulate into that leaf.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
}

static EMPTY_STORE: ParamStore = ParamStore::new();

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grad_enabled: true,
        }
    }

    /// Inference tape: no backward information is kept.
    pub fn no_grad(store: &'p ParamStore) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(store)
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, value: Tensor) -> Var {
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node {
            value: self.store.get(id).clone(),
            op: Op::Param(id),
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// The parameter a node reads, if it is a parameter leaf.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Parameters touched by this tape so far.
    pub fn used_params(&self) -> Vec<ParamId> {
        self.param_vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Copy of `x` cut off from the graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    /// Frees the values of nodes created at or after `mark`, except `keep`.
    /// Only meaningful on a no-grad tape.
    pub fn release_since(&mut self, mark: usize, keep: &[Var]) {
        assert!(!self.grad_enabled, "cannot release values on a recording tape");
        for i in mark..self.nodes.len() {
            if !keep.iter().any(|k| k.0 == i) && !matches!(self.nodes[i].op, Op::Param(_)) {
                self.nodes[i].value = Tensor::empty();
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x).scaled(s);
        self.push(t, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(libm::tanh);
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        self.push(t, Op::Gelu(x), &[x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let t = Tensor::concat_channels(&ts);
        self.push(t, Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x).slice_channels(start, len);
        self.push(t, Op::Slice { x, start }, &[x])
    }

    /// Multiplies channel `c` of a `[C, H, W]` map by `scale[c]`.
    pub fn channel_scale(&mut self, x: Var, scale: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let s = self.value(scale);
        assert_eq!(s.len(), c, "channel scale length mismatch");
        let n = h * w;
        let sd = s.data().to_vec();
        let mut t = self.value(x).clone();
        for (ch, &sv) in sd.iter().enumerate() {
            t.data_mut()[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v *= sv);
        }
        self.push(t, Op::ChannelScale { x, scale }, &[x, scale])
    }

    /// Adds `shift[c]` to channel `c` of a `[C, H, W]` map.
    pub fn channel_shift(&mut self, x: Var, shift: Var) -> Var {
        let (c, h, w) = self.value(x).dims3();
        let s = self.value(shift);
        assert_eq!(s.len(), c, "channel shift length mismatch");
        let n = h * w;
        let sd = s.data().to_vec();
        let mut t = self.value(x).clone();
        for (ch, &sv) in sd.iter().enumerate() {
            t.data_mut()[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v += sv);
        }
        self.push(t, Op::ChannelShift { x, shift }, &[x, shift])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Var {
        let keep = self.grad_enabled;
        let (t, cols) = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec, keep);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(t, Op::Conv { x, w, b, spec, cols }, &inputs)
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (t, cache) = layer_norm_forward(self.value(x), self.value(g), self.value(b));
        self.push(t, Op::LayerNorm { g, b, x, cache }, &[x, g, b])
    }

    /// Cross-covariance attention; `theta` holds per-head log-temperatures.
    pub fn xca(&mut self, k: Var, q: Var, v: Var, theta: Var, heads: usize) -> Var {
        let (t, cache) = xca_forward(self.value(k), self.value(q), self.value(v), self.value(theta), heads);
        self.push(t, Op::Xca { k, q, v, theta, heads, cache }, &[k, q, v, theta])
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let t = resize_bilinear(self.value(x), out_h, out_w);
        self.push(t, Op::Resize { x }, &[x])
    }

    pub fn repeat_nearest2(&mut self, x: Var) -> Var {
        let t = repeat_nearest2(self.value(x));
        self.push(t, Op::Repeat2(x), &[x])
    }

    pub fn corr_lookup(&mut self, f1: Var, f2: Var, flow: Var, radius: usize) -> Var {
        let (t, cache) = corr_forward(self.value(f1), self.value(f2), self.value(flow), radius);
        self.push(t, Op::Corr { f1, f2, flow, radius, cache }, &[f1, f2, flow])
    }

    pub fn convex_upsample(&mut self, flow: Var, mask: Var) -> Var {
        let t = convex_upsample_forward(self.value(flow), self.value(mask));
        self.push(t, Op::ConvexUp { flow, mask }, &[flow, mask])
    }

    /// Shapes must already be validated by the caller.
    pub(crate) fn flow_loss(
        &mut self,
        preds: &[Var],
        gt: Tensor,
        valid: Option<Vec<bool>>,
        weights: Vec<f64>,
        kind: LossKind,
    ) -> Var {
        let value = {
            let ps: Vec<&Tensor> = preds.iter().map(|&p| self.value(p)).collect();
            flow_loss_value(&ps, &gt, valid.as_deref(), &weights, kind).expect("validated loss inputs")
        };
        self.push(
            Tensor::scalar(value),
            Op::FlowLoss {
                preds: preds.to_vec(),
                gt,
                valid,
                weights,
                kind,
            },
            preds,
        )
    }

    /// Scalar `Σ x ⊙ weights`; turns any node into a loss for gradient checks.
    pub fn dot(&mut self, x: Var, weights: Tensor) -> Var {
        let t = Tensor::scalar(self.value(x).dot(&weights));
        self.push(t, Op::Dot { x, weights }, &[x])
    }

    /// Reverse pass from a scalar node with seed 1.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward() needs a scalar output");
        self.backward_with(out, Tensor::from_vec(self.shape(out), vec![1.0]))
    }

    pub fn backward_with(&self, out: Var, seed: Tensor) -> Gradients {
        assert!(self.grad_enabled, "backward on a no-grad tape");
        assert_eq!(seed.shape(), self.shape(out), "seed shape mismatch");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, g, &mut grads);
        }
        Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf | Op::Param(_) => grads[i] = Some(g),
            Op::Add(a, b) => {
                if needs(*a) {
                    self.acc(grads, *a, g.clone());
                }
                self.acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    self.acc(grads, *a, g.clone());
                }
                self.acc(grads, *b, g.scaled(-1.0));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    self.acc(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    self.acc(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Scale(x, s) => self.acc(grads, *x, g.scaled(*s)),
            Op::Relu(x) => self.acc(grads, *x, g.zip_map(&node.value, |d, y| if y > 0.0 { d } else { 0.0 })),
            Op::Tanh(x) => self.acc(grads, *x, g.zip_map(&node.value, |d, y| d * (1.0 - y * y))),
            Op::Sigmoid(x) => self.acc(grads, *x, g.zip_map(&node.value, |d, y| d * y * (1.0 - y))),
            Op::Gelu(x) => self.acc(grads, *x, g.zip_map(val(*x), |d, v| d * gelu_grad(v))),
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = val(*p).channels();
                    if needs(*p) {
                        self.acc(grads, *p, g.slice_channels(start, c));
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let (c, h, w) = val(*x).dims3();
                let len = g.channels();
                let mut dx = Tensor::zeros(&[c, h, w]);
                dx.data_mut()[start * h * w..(start + len) * h * w].copy_from_slice(g.data());
                self.acc(grads, *x, dx);
            }
            Op::ChannelScale { x, scale } => {
                let (c, h, w) = g.dims3();
                let n = h * w;
                if needs(*scale) {
                    let xv = val(*x);
                    let ds = Tensor::from_fn(&[c], |ch| {
                        g.channel(ch).iter().zip(&xv.data()[ch * n..(ch + 1) * n]).map(|(a, b)| a * b).sum()
                    });
                    self.acc(grads, *scale, ds);
                }
                if needs(*x) {
                    let sv = val(*scale).data();
                    let mut dx = g;
                    for (ch, &s) in sv.iter().enumerate() {
                        dx.data_mut()[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v *= s);
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::ChannelShift { x, shift } => {
                if needs(*shift) {
                    let c = g.channels();
                    let db = Tensor::from_fn(&[c], |ch| g.channel(ch).iter().sum());
                    self.acc(grads, *shift, db);
                }
                self.acc(grads, *x, g);
            }
            Op::Conv { x, w, b, spec, cols } => {
                let need = (needs(*x), needs(*w), b.is_some_and(|b| needs(b)));
                let r = conv2d_backward(val(*x), val(*w), spec, cols.as_deref(), &g, need);
                if let Some(d) = r.dx {
                    self.acc(grads, *x, d);
                }
                if let Some(d) = r.dweight {
                    self.acc(grads, *w, d);
                }
                if let (Some(b), Some(d)) = (b, r.dbias) {
                    self.acc(grads, *b, d);
                }
            }
            Op::LayerNorm { g: gain, b, x, cache } => {
                let (dx, dg, db) = layer_norm_backward(cache, val(*gain), &g);
                self.acc(grads, *x, dx);
                self.acc(grads, *gain, dg);
                self.acc(grads, *b, db);
            }
            Op::Xca { k, q, v, theta, heads, cache } => {
                let r = xca_backward(val(*v), val(*theta), *heads, cache, &g);
                self.acc(grads, *k, r.dk);
                self.acc(grads, *q, r.dq);
                self.acc(grads, *v, r.dv);
                self.acc(grads, *theta, r.dlog_temperature);
            }
            Op::Resize { x } => {
                let d = resize_bilinear_backward(val(*x).shape(), &g);
                self.acc(grads, *x, d);
            }
            Op::Repeat2(x) => self.acc(grads, *x, repeat_nearest2_backward(&g)),
            Op::Corr { f1, f2, flow, radius, cache } => {
                let need = (needs(*f1), needs(*f2), needs(*flow));
                let r = corr_backward(val(*f1), val(*f2), *radius, cache, &g, need);
                if let Some(d) = r.df1 {
                    self.acc(grads, *f1, d);
                }
                if let Some(d) = r.df2 {
                    self.acc(grads, *f2, d);
                }
                if let Some(d) = r.dflow {
                    self.acc(grads, *flow, d);
                }
            }
            Op::ConvexUp { flow, mask } => {
                let (df, dm) = convex_upsample_backward(val(*flow), val(*mask), &g);
                self.acc(grads, *flow, df);
                self.acc(grads, *mask, dm);
            }
            Op::FlowLoss { preds, gt, valid, weights, kind } => {
                let ps: Vec<&Tensor> = preds.iter().map(|&p| val(p)).collect();
                let ds = flow_loss_grads(&ps, gt, valid.as_deref(), weights, *kind, g.data()[0]);
                for (p, d) in preds.iter().zip(ds) {
                    self.acc(grads, *p, d);
                }
            }
            Op::Dot { x, weights } => self.acc(grads, *x, weights.scaled(g.data()[0])),
        }
    }
}

impl Tape<'static> {
    /// Tape without model parameters, for exercising individual operations.
    pub fn standalone() -> Self {
        Self::new(&EMPTY_STORE)
    }
}

/// Result of a reverse pass: gradients of leaves and parameters.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient of an input leaf, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_vars[id.0].and_then(|v| self.wrt(v))
    }

    /// Moves parameter gradients out, indexed by [`ParamId`].
    pub fn into_param_grads(mut self) -> Vec<Option<Tensor>> {
        self.param_vars
            .iter()
            .map(|v| v.and_then(|v| self.grads[v.0].take()))
            .collect()
    }
}
