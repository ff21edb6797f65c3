//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every op applied during a forward pass. Values live on
//! the tape; callers hold copyable [`Var`] handles. Learnable weights live in
//! a [`ParamStore`] and enter a tape through [`Tape::param`], which records a
//! leaf bound to the parameter's id. [`Tape::backward`] walks the records in
//! reverse creation order, which is a valid reverse topological order since
//! an op can only consume values that already exist.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, conv::ConvGeometry, AxisMap, NormStats};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter in its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A learnable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Ordered, named collection of parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Same parameters at a different precision; gradients are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.insert(p.name.clone(), p.value.cast());
        }
        out
    }
}

enum Op<T: Real> {
    Leaf,
    Param,
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        geo: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<T>,
    },
    LeakyRelu {
        input: Var,
        alpha: T,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Resize {
        input: Var,
        from: (usize, usize, usize),
        to: (usize, usize),
        maps: [AxisMap; 2],
    },
    Concat {
        inputs: Vec<(Var, usize)>,
    },
    CostVolume {
        left: Var,
        right: Var,
        dims: (usize, usize, usize),
        candidates: usize,
    },
    SoftArgmin {
        input: Var,
        probs: Vec<T>,
        candidates: usize,
    },
    Softmax {
        input: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum(Var),
    RobustMean {
        input: Var,
        target: Vec<T>,
        mask: Vec<bool>,
        scale: T,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded forward computation.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient of a scalar with respect to every recorded value.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

fn check_finite<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn spatial_dims(shape: &[usize], rank: usize, what: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::shape(format!(
            "{what} expects rank {rank}, got {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Input that gradients are tracked for (used by gradient checks).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, &[]);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Leaf bound to a stored parameter. Repeated calls with the same id
    /// return the same handle, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, &[]);
        self.params.insert(id, v);
        v
    }

    /// Convolution over 2 (`H×W×C`) or 3 (`H×W×D×C`) spatial dimensions
    /// with zero "same" padding. The weight has shape `kernel..×Cin×Cout`.
    pub fn conv(&mut self, input: Var, weight: Var, bias: Var, stride: usize, dilation: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        let spatial = xs.len() - 1;
        if !(spatial == 2 || spatial == 3) || ws.len() != spatial + 2 {
            return Err(Error::shape(format!(
                "conv input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let cin = xs[spatial];
        let cout = ws[spatial + 1];
        if ws[spatial] != cin {
            return Err(Error::shape(format!(
                "conv channel mismatch: input has {cin}, weight expects {}",
                ws[spatial]
            )));
        }
        if bs != [cout] {
            return Err(Error::shape(format!("conv bias {bs:?} for {cout} outputs")));
        }
        if ws[..spatial].iter().any(|k| k % 2 == 0) {
            return Err(Error::invalid(format!("conv kernel {ws:?} must be odd")));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::invalid("conv stride and dilation must be >= 1"));
        }
        if spatial == 3 && stride != 1 {
            return Err(Error::invalid("3-D convolution supports stride 1 only"));
        }
        let mut geo = ConvGeometry {
            input: [1; 3],
            kernel: [1; 3],
            stride: [1; 3],
            dilation: [1; 3],
            cin,
            cout,
        };
        for a in 0..spatial {
            geo.input[a] = xs[a];
            geo.kernel[a] = ws[a];
            if spatial == 2 {
                geo.stride[a] = stride;
                geo.dilation[a] = dilation;
            }
        }
        let out = kernels::conv::conv_forward(
            &geo,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let o = geo.output();
        let mut shape: Vec<usize> = o[..spatial].to_vec();
        shape.push(cout);
        let t = Tensor::new(&shape, out)?;
        check_finite(&t, "conv")?;
        Ok(self.push(
            t,
            Op::Conv {
                input,
                weight,
                bias,
                geo,
            },
            &[input, weight, bias],
        ))
    }

    /// Per-call batch normalization over all non-channel elements.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = self.value(input).channels();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batch norm over {c} channels given gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (out, stats) = kernels::batch_norm_forward(
            self.value(input).data(),
            c,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let t = Tensor::new(self.shape(input), out)?;
        check_finite(&t, "batch_norm")?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                stats,
            },
            &[input, gamma, beta],
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, alpha: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid(format!("leaky relu slope {alpha} not in [0,1)")));
        }
        let a = T::lit(alpha);
        let t = self
            .value(input)
            .map(|x| if x >= T::zero() { x } else { a * x });
        Ok(self.push(t, Op::LeakyRelu { input, alpha: a }, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.leaky_relu(input, 0.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        check_finite(&t, "add")?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        check_finite(&t, "mul")?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let f = T::lit(factor);
        let t = self.value(input).map(|x| x * f);
        check_finite(&t, "scale")?;
        Ok(self.push(t, Op::Scale(input, f), &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(input), &[input]))
    }

    /// Bilinear resize of an `H×W×C` (or `H×W`) map with centered pixels.
    pub fn resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (h, w) = match *self.shape(input) {
            [h, w] | [h, w, _] => (h, w),
            ref s => return Err(Error::shape(format!("resize expects H×W(×C), got {s:?}"))),
        };
        let maps = [AxisMap::centered(h, out_h.max(1)), AxisMap::centered(w, out_w.max(1))];
        self.resample(input, out_h, out_w, maps)
    }

    /// Bilinear resampling where output row `i` reads source row
    /// `maps[0].scale·i + maps[0].offset`, and likewise for columns.
    pub fn resample(&mut self, input: Var, out_h: usize, out_w: usize, maps: [AxisMap; 2]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let (h, w, c) = match s.as_slice() {
            [h, w] => (*h, *w, 1),
            [h, w, c] => (*h, *w, *c),
            _ => return Err(Error::shape(format!("resample expects H×W(×C), got {s:?}"))),
        };
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("resample target must be at least 1×1"));
        }
        let data = kernels::resample_forward(self.value(input).data(), (h, w, c), (out_h, out_w), maps);
        let mut shape = vec![out_h, out_w];
        if s.len() == 3 {
            shape.push(c);
        }
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(
            t,
            Op::Resize {
                input,
                from: (h, w, c),
                to: (out_h, out_w),
                maps,
            },
            &[input],
        ))
    }

    /// Concatenates along the last axis; leading dims must agree.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = self.shape(inputs[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape(format!("concat {first:?} with {s:?}")));
            }
            widths.push((v, *s.last().unwrap()));
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(v, c) in &widths {
                data.extend_from_slice(&self.value(v).data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::Concat { inputs: widths }, inputs))
    }

    /// Feature-difference cost volume `H×W×D×C` from two `H×W×C` maps.
    pub fn cost_volume(&mut self, left: Var, right: Var, candidates: usize) -> Result<Var> {
        let s = self.shape(left).to_vec();
        spatial_dims(&s, 3, "cost volume")?;
        if self.shape(right) != s.as_slice() {
            return Err(Error::shape(format!(
                "cost volume features differ: {s:?} vs {:?}",
                self.shape(right)
            )));
        }
        if candidates == 0 {
            return Err(Error::invalid("cost volume needs at least one candidate"));
        }
        let dims = (s[0], s[1], s[2]);
        let data = kernels::cost_volume_forward(
            self.value(left).data(),
            self.value(right).data(),
            dims,
            candidates,
        );
        let t = Tensor::new(&[s[0], s[1], candidates, s[2]], data)?;
        Ok(self.push(
            t,
            Op::CostVolume {
                left,
                right,
                dims,
                candidates,
            },
            &[left, right],
        ))
    }

    /// Expected candidate index under `softmax(−cost)` along the last axis.
    pub fn soft_argmin(&mut self, costs: Var) -> Result<Var> {
        let s = self.shape(costs).to_vec();
        let d = *s.last().unwrap();
        let (out, probs) = kernels::soft_argmin_forward(self.value(costs).data(), d);
        let shape = if s.len() > 1 { &s[..s.len() - 1] } else { &[1][..] };
        let t = Tensor::new(shape, out)?;
        check_finite(&t, "soft_argmin")?;
        Ok(self.push(
            t,
            Op::SoftArgmin {
                input: costs,
                probs,
                candidates: d,
            },
            &[costs],
        ))
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() {
            return Err(Error::invalid(format!("softmax axis {axis} for rank {}", s.len())));
        }
        let outer = s[..axis].iter().product();
        let inner = s[axis + 1..].iter().product();
        let len = s[axis];
        let data = kernels::softmax_forward(self.value(input).data(), outer, len, inner);
        let t = Tensor::new(&s, data)?;
        check_finite(&t, "softmax")?;
        Ok(self.push(
            t,
            Op::Softmax {
                input,
                outer,
                len,
                inner,
            },
            &[input],
        ))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(input).sum());
        check_finite(&t, "sum")?;
        Ok(self.push(t, Op::Sum(input), &[input]))
    }

    /// Mean over masked elements of `sqrt(((x − target)/scale)² + 1) − 1`.
    pub fn robust_mean(&mut self, input: Var, target: &Tensor<T>, mask: &[bool], scale: f64) -> Result<Var> {
        if self.shape(input) != target.shape() || mask.len() != target.len() {
            return Err(Error::shape(format!(
                "robust loss prediction {:?} vs target {:?} (mask {})",
                self.shape(input),
                target.shape(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let c = T::lit(scale);
        let one = T::one();
        let total: T = self
            .value(input)
            .data()
            .iter()
            .zip(target.data())
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&x, &g), _)| {
                let r = (x - g) / c;
                (r * r + one).sqrt() - one
            })
            .sum();
        let t = Tensor::scalar(total / T::lit(count as f64));
        check_finite(&t, "robust_mean")?;
        Ok(self.push(
            t,
            Op::RobustMean {
                input,
                target: target.data().to_vec(),
                mask: mask.to_vec(),
                scale: c,
            },
            &[input],
        ))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Reverse pass from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            for (target, delta) in self.local_grads(node, &g)? {
                if !self.nodes[target.0].needs_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&delta),
                    slot => *slot = Some(delta),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs the reverse pass and adds parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v), data);
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv {
                input,
                weight,
                bias,
                geo,
            } => {
                let grads = kernels::conv::conv_backward(
                    geo,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    self.wants(*input),
                );
                if let Some(dx) = grads.input {
                    out.push((*input, like(*input, dx)?));
                }
                out.push((*weight, like(*weight, grads.weight)?));
                out.push((*bias, like(*bias, grads.bias)?));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                stats,
            } => {
                let c = self.value(*input).channels();
                let (dx, dg, db) =
                    kernels::batch_norm_backward(g.data(), c, self.value(*gamma).data(), stats);
                out.push((*input, like(*input, dx)?));
                out.push((*gamma, like(*gamma, dg)?));
                out.push((*beta, like(*beta, db)?));
            }
            Op::LeakyRelu { input, alpha } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| if x > T::zero() { g } else { *alpha * g })
                    .collect();
                out.push((*input, like(*input, dx)?));
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = g.data().iter().zip(vb).map(|(&g, &y)| g * y).collect();
                let db = g.data().iter().zip(va).map(|(&g, &x)| g * x).collect();
                out.push((*a, like(*a, da)?));
                out.push((*b, like(*b, db)?));
            }
            Op::Scale(input, f) => {
                out.push((*input, g.map(|v| v * *f)));
            }
            Op::Reshape(input) => {
                out.push((*input, g.clone().reshape(self.shape(*input))?));
            }
            Op::Resize { input, from, to, maps } => {
                let dx = kernels::resample_backward(g.data(), *from, *to, *maps);
                out.push((*input, like(*input, dx)?));
            }
            Op::Concat { inputs } => {
                let total: usize = inputs.iter().map(|w| w.1).sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for &(v, c) in inputs {
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    out.push((v, like(v, d)?));
                }
            }
            Op::CostVolume {
                left,
                right,
                dims,
                candidates,
            } => {
                let (dl, dr) = kernels::cost_volume_backward(g.data(), *dims, *candidates);
                out.push((*left, like(*left, dl)?));
                out.push((*right, like(*right, dr)?));
            }
            Op::SoftArgmin {
                input,
                probs,
                candidates,
            } => {
                let dc = kernels::soft_argmin_backward(
                    g.data(),
                    probs,
                    node.value.data(),
                    *candidates,
                );
                out.push((*input, like(*input, dc)?));
            }
            Op::Softmax {
                input,
                outer,
                len,
                inner,
            } => {
                let dx =
                    kernels::softmax_backward(g.data(), node.value.data(), *outer, *len, *inner);
                out.push((*input, like(*input, dx)?));
            }
            Op::Sum(input) => {
                out.push((*input, Tensor::full(self.shape(*input), g[0])));
            }
            Op::RobustMean {
                input,
                target,
                mask,
                scale,
            } => {
                let count = T::lit(mask.iter().filter(|&&m| m).count() as f64);
                let upstream = g[0] / count;
                let c2 = *scale * *scale;
                let dx = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((&x, &t), &m)| {
                        if !m {
                            return T::zero();
                        }
                        let d = x - t;
                        upstream * d / (c2 * ((d * d) / c2 + T::one()).sqrt())
                    })
                    .collect();
                out.push((*input, like(*input, dx)?));
            }
        }
        Ok(out)
    }
}
