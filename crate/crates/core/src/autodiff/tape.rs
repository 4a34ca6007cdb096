use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::param::{Gradients, ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f32>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Relu {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<f32>,
    },
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape {
        input: Var,
    },
    PairwiseEuclidean {
        test: Var,
        reference: Var,
    },
    Sum {
        input: Var,
    },
    SoftmaxXent {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
        loss: f64,
    },
}

#[derive(Debug)]
struct Node {
    /// `None` for parameter leaves, whose value lives in the [`ParamSet`].
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass so it can be replayed backwards.
///
/// Parameter leaves borrow their values from the [`ParamSet`]; gradients
/// for them come back from [`Tape::backward`] and are folded in with
/// [`ParamSet::accumulate`].
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(32),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.params.get(*id).value,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Looks up a parameter by name and records it as a leaf.
    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{name}`")))?;
        Ok(self.param(id))
    }

    /// Valid (unpadded) 2-D convolution of a `C_in×H×W` input with
    /// `C_out×C_in×kH×kW` weights.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("expected C×H×W input and 4-d weights, got {xs:?} and {ws:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        if ws[1] != xs[0] {
            return Err(Error::dim(
                "conv2d",
                format!("input channels {} vs weight channels {}", xs[0], ws[1]),
            ));
        }
        if ws[2] > xs[1] || ws[3] > xs[2] {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "kernel {}×{} larger than input {}×{} (axes H, W)",
                    ws[2], ws[3], xs[1], xs[2]
                ),
            ));
        }
        if b.shape() != [ws[0]] {
            return Err(Error::dim(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), ws[0]),
            ));
        }
        let geom = ConvGeom {
            c_in: xs[0],
            h: xs[1],
            w: xs[2],
            c_out: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
        };
        let (out, cols) = kernels::conv2d_forward(&geom, x.data(), w.data(), b.data());
        let shape = vec![geom.c_out, geom.out_h(), geom.out_w()];
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        // Patches are only needed for the weight gradient.
        let cols = if self.needs(weight) { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// 2×2 max pooling with stride 2 over a `C×H×W` tensor.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return Err(Error::dim(
                "maxpool2d",
                format!("expected C×H×W with H,W ≥ 2, got {s:?}"),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (out, argmax) = kernels::maxpool_forward(x.data(), (c, h, w), 2, 2);
        let t = Tensor::new(vec![c, h / 2, w / 2], out)?;
        let rg = self.needs(input);
        Ok(self.push(t, Op::MaxPool { input, argmax }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(input);
        self.push(t, Op::Relu { input }, rg)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors scaled by `1/(1-p)`; otherwise identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        p: f32,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let x = self.value(input);
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..x.len())
            .map(|_| if rng.random::<f32>() < p { 0.0 } else { scale })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(input);
        Ok(self.push(t, Op::Dropout { input, mask }, rg))
    }

    /// `W·x + b` for `W: m×n`, `x` with `n` elements (any shape), `b: m`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let ws = w.shape();
        if ws.len() != 2 || ws[1] != x.len() || b.shape() != [ws[0]] {
            return Err(Error::dim(
                "affine",
                format!(
                    "weights {ws:?}, input of {} values, bias {:?}",
                    x.len(),
                    b.shape()
                ),
            ));
        }
        let m = ws[0];
        let mut out = b.data().to_vec();
        kernels::matvec_add(w.data(), x.data(), &mut out);
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            Tensor::new(vec![m], out)?,
            Op::Affine {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).reshaped(shape.to_vec())?;
        let rg = self.needs(input);
        Ok(self.push(t, Op::Reshape { input }, rg))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        self.reshape(input, &[n])
    }

    /// Frame-pair Euclidean distances between two `F×S` maps, giving `S×S`.
    pub fn pairwise_euclidean(&mut self, test: Var, reference: Var, eps: f64) -> Result<Var> {
        let (t, r) = (self.value(test), self.value(reference));
        if t.rank() != 2 || t.shape() != r.shape() {
            return Err(Error::dim(
                "pairwise_euclidean",
                format!("test {:?} vs reference {:?}", t.shape(), r.shape()),
            ));
        }
        let (f, s) = (t.shape()[0], t.shape()[1]);
        let d = kernels::pairwise_euclidean_forward(t.data(), r.data(), f, s, eps);
        let rg = self.needs(test) || self.needs(reference);
        Ok(self.push(
            Tensor::new(vec![s, s], d)?,
            Op::PairwiseEuclidean { test, reference },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data().iter().map(|&v| v as f64).sum();
        let rg = self.needs(input);
        self.push(Tensor::scalar(total as f32), Op::Sum { input }, rg)
    }

    /// Cross-entropy loss of `softmax(logits)` against `label`. Returns the
    /// scalar loss node; probabilities are available via [`Tape::probabilities`].
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 1 {
            return Err(Error::dim(
                "softmax_xent",
                format!("logits must be a vector, got {:?}", z.shape()),
            ));
        }
        if label >= z.len() {
            return Err(Error::Input(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let (loss, probs) = kernels::softmax_xent(z.data(), label);
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss as f32),
            Op::SoftmaxXent {
                logits,
                label,
                probs,
                loss,
            },
            rg,
        ))
    }

    /// Softmax probabilities recorded by a [`Tape::softmax_xent`] node.
    pub fn probabilities(&self, loss: Var) -> Option<&[f64]> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Full-precision loss recorded by a [`Tape::softmax_xent`] node.
    pub fn loss_value(&self, loss: Var) -> Option<f64> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { loss, .. } => Some(*loss),
            _ => None,
        }
    }

    /// Reverse pass from a scalar `loss` with upstream gradient 1.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse pass seeding `d loss = scale` (e.g. `1/batch` for mean loss).
    pub fn backward_scaled(self, loss: Var, scale: f32) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![scale]);
        let mut out = Gradients {
            per_param: vec![None; self.params.len()],
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out.per_param[id.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                },
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                    cols,
                } => {
                    if self.needs(*weight) || self.needs(*bias) {
                        let mut gw = vec![0.0; self.value(*weight).len()];
                        let mut gb = vec![0.0; geom.c_out];
                        if self.needs(*weight) {
                            kernels::conv2d_backward_params(geom, &g, cols, &mut gw, &mut gb);
                        } else {
                            for (b, row) in gb.iter_mut().zip(g.chunks_exact(geom.positions())) {
                                *b += row.iter().sum::<f32>();
                            }
                        }
                        add_into(&mut grads[weight.0], &gw);
                        add_into(&mut grads[bias.0], &gb);
                    }
                    if self.needs(*input) {
                        let gi = slot(&mut grads[input.0], geom.c_in * geom.h * geom.w);
                        kernels::conv2d_backward_input(geom, &g, self.value(*weight).data(), gi);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let gi = slot(&mut grads[input.0], self.value(*input).len());
                    for (&a, &v) in argmax.iter().zip(&g) {
                        gi[a as usize] += v;
                    }
                }
                Op::Relu { input } => {
                    let x = self.value(*input).data();
                    let gi = slot(&mut grads[input.0], x.len());
                    for ((d, &xv), &gv) in gi.iter_mut().zip(x).zip(&g) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Dropout { input, mask } => {
                    let gi = slot(&mut grads[input.0], mask.len());
                    for ((d, m), gv) in gi.iter_mut().zip(mask).zip(&g) {
                        *d += m * gv;
                    }
                }
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    let (m, n) = {
                        let ws = self.value(*weight).shape();
                        (ws[0], ws[1])
                    };
                    if self.needs(*weight) {
                        let x = self.value(*input).data();
                        let gw = slot(&mut grads[weight.0], m * n);
                        kernels::outer_add(&g, x, gw);
                    }
                    if self.needs(*bias) {
                        add_into(&mut grads[bias.0], &g);
                    }
                    if self.needs(*input) {
                        let w = self.value(*weight).data();
                        let gi = slot(&mut grads[input.0], n);
                        kernels::matvec_t_add(w, &g, gi);
                    }
                }
                Op::Reshape { input } => add_into(&mut grads[input.0], &g),
                Op::PairwiseEuclidean { test, reference } => {
                    let (t, r) = (self.value(*test), self.value(*reference));
                    let (f, s) = (t.shape()[0], t.shape()[1]);
                    let dist = node.value.as_ref().expect("has value").data();
                    let mut gt = self.needs(*test).then(|| vec![0.0; f * s]);
                    let mut gr = self.needs(*reference).then(|| vec![0.0; f * s]);
                    kernels::pairwise_euclidean_backward(
                        t.data(),
                        r.data(),
                        dist,
                        &g,
                        f,
                        s,
                        gt.as_deref_mut(),
                        gr.as_deref_mut(),
                    );
                    // Shared front-end: test and reference may be the same node.
                    if let Some(gt) = gt {
                        add_into(&mut grads[test.0], &gt);
                    }
                    if let Some(gr) = gr {
                        add_into(&mut grads[reference.0], &gr);
                    }
                }
                Op::Sum { input } => {
                    let n = self.value(*input).len();
                    let gi = slot(&mut grads[input.0], n);
                    for d in gi.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    label,
                    probs,
                    ..
                } => {
                    let gi = slot(&mut grads[logits.0], probs.len());
                    for (k, (d, &p)) in gi.iter_mut().zip(probs).enumerate() {
                        let onehot = if k == *label { 1.0 } else { 0.0 };
                        *d += g[0] * (p - onehot) as f32;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn slot(g: &mut Option<Vec<f32>>, len: usize) -> &mut [f32] {
    g.get_or_insert_with(|| vec![0.0; len])
}

fn add_into(g: &mut Option<Vec<f32>>, v: &[f32]) {
    match g {
        Some(buf) => {
            for (a, b) in buf.iter_mut().zip(v) {
                *a += b;
            }
        }
        None => *g = Some(v.to_vec()),
    }
}
