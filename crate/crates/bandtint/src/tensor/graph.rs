//! Reverse-mode autodiff tape over dense tensors.
//!
//! A `Graph` owns tensor values for one forward pass. Operations whose inputs
//! are tracked (transitively depend on a `requires_grad` leaf) are recorded
//! together with the information their backward rule needs; untracked
//! computation records nothing, so pure inference leaves the tape empty.
//! One graph serves one training step and is then dropped.

use super::{Scalar, Tensor, TensorError};

/// Handle to a tensor stored on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Abs,
    Relu,
    Sigmoid,
    AddScalar(f64),
    MulScalar(f64),
    Conv2d { stride: usize, padding: usize },
    Linear,
    Down2Mean,
    Up2Nearest,
    ConcatChannels,
    AddChannelBias,
    Mean,
    Sum,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Abs => "abs",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear => "linear",
            Op::Down2Mean => "down2_mean",
            Op::Up2Nearest => "up2_nearest",
            Op::ConcatChannels => "concat_channels",
            Op::AddChannelBias => "add_channel_bias",
            Op::Mean => "mean",
            Op::Sum => "sum",
        }
    }
}

struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
    tracked: bool,
}

struct Record {
    op: Op,
    inputs: Vec<TensorId>,
    output: TensorId,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    records: Vec<Record>,
    tracked_leaves: Vec<TensorId>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), records: Vec::new(), tracked_leaves: Vec::new() }
    }

    fn push_node(&mut self, shape: Vec<usize>, data: Vec<S>, tracked: bool) -> TensorId {
        self.nodes.push(Node { shape, data, grad: None, tracked });
        TensorId(self.nodes.len() - 1)
    }

    fn push_result(
        &mut self,
        op: Op,
        inputs: Vec<TensorId>,
        shape: Vec<usize>,
        data: Vec<S>,
    ) -> Result<TensorId, TensorError> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name(), index });
        }
        let tracked = inputs.iter().any(|id| self.nodes[id.0].tracked);
        let out = self.push_node(shape, data, tracked);
        if tracked {
            self.records.push(Record { op, inputs, output: out });
        }
        Ok(out)
    }

    /// Insert a leaf, honoring the tensor's `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<S>) -> TensorId {
        let id = self.push_node(t.shape().to_vec(), t.data().to_vec(), t.requires_grad());
        if t.requires_grad() {
            self.tracked_leaves.push(id);
        }
        id
    }

    /// Insert a leaf that never receives gradients, regardless of the flag.
    pub fn leaf_detached(&mut self, t: &Tensor<S>) -> TensorId {
        self.push_node(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<S>) -> Result<TensorId, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch { shape, expected, actual: data.len() });
        }
        Ok(self.push_node(shape, data, false))
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].data
    }

    /// Scalar value of a one-element tensor, in double precision.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0].to_f64()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Tracked leaves in insertion order; after `backward` their grads are
    /// available via [`Graph::grad`].
    pub fn tracked_leaves(&self) -> &[TensorId] {
        &self.tracked_leaves
    }

    pub fn is_tracked(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    pub fn num_recorded_ops(&self) -> usize {
        self.records.len()
    }

    /// Smallest nonzero |input| over all recorded relu applications: the
    /// distance of this forward pass from the nearest movable relu kink.
    /// Finite-difference probes are only meaningful when this margin exceeds
    /// the perturbation they can induce. Inputs that are exactly 0.0 come
    /// from identically dead feature patches; they cannot move under probes
    /// whose live inputs all clear the margin, so they are excluded.
    pub fn relu_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for r in &self.records {
            if matches!(r.op, Op::Relu) {
                for v in &self.nodes[r.inputs[0].0].data {
                    let a = v.to_f64().abs();
                    if a > 0.0 {
                        margin = margin.min(a);
                    }
                }
            }
        }
        margin
    }

    /// Largest |value| over every tensor on the graph.
    pub fn max_abs_value(&self) -> f64 {
        self.nodes
            .iter()
            .flat_map(|n| n.data.iter())
            .map(|v| v.to_f64().abs())
            .fold(0.0, f64::max)
    }

    fn check_id(&self, id: TensorId) -> Result<(), TensorError> {
        if id.0 >= self.nodes.len() {
            return Err(TensorError::NotOnGraph(id.0));
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<(), TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::DimMismatch {
                op,
                what: "operand",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    // ---- elementwise ----------------------------------------------------

    fn zip_op(
        &mut self,
        op: Op,
        a: TensorId,
        b: TensorId,
        f: impl Fn(S, S) -> S,
    ) -> Result<TensorId, TensorError> {
        self.check_id(a)?;
        self.check_id(b)?;
        self.same_shape(op.name(), a, b)?;
        let data: Vec<S> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push_result(op, vec![a, b], shape, data)
    }

    fn map_op(
        &mut self,
        op: Op,
        a: TensorId,
        f: impl Fn(S) -> S,
    ) -> Result<TensorId, TensorError> {
        self.check_id(a)?;
        let data: Vec<S> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push_result(op, vec![a], shape, data)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_op(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_op(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_op(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_op(Op::Div, a, b, |x, y| x / y)
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId, TensorError> {
        let cv = S::from_f64(c);
        self.map_op(Op::AddScalar(c), a, |x| x + cv)
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId, TensorError> {
        let cv = S::from_f64(c);
        self.map_op(Op::MulScalar(c), a, |x| x * cv)
    }

    pub fn abs(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.map_op(Op::Abs, a, |x| x.abs())
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.map_op(Op::Relu, a, |x| if x > S::ZERO { x } else { S::ZERO })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.map_op(Op::Sigmoid, a, sigmoid_stable)
    }

    // ---- reductions ------------------------------------------------------

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.check_id(a)?;
        let n = self.nodes[a.0].data.len();
        let s: f64 = self.nodes[a.0].data.iter().map(|v| v.to_f64()).sum();
        self.push_result(Op::Mean, vec![a], vec![1], vec![S::from_f64(s / n as f64)])
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        self.check_id(a)?;
        let s: f64 = self.nodes[a.0].data.iter().map(|v| v.to_f64()).sum();
        self.push_result(Op::Sum, vec![a], vec![1], vec![S::from_f64(s)])
    }

    // ---- structured ops --------------------------------------------------

    /// 2-D cross-correlation of a `[C_in, H, W]` input with a
    /// `[C_out, C_in, k, k]` kernel plus per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId, TensorError> {
        self.check_id(input)?;
        self.check_id(kernel)?;
        self.check_id(bias)?;
        let in_shape = self.nodes[input.0].shape.clone();
        let k_shape = self.nodes[kernel.0].shape.clone();
        if in_shape.len() != 3 {
            return Err(TensorError::BadRank { op: "conv2d", expected: 3, shape: in_shape });
        }
        if k_shape.len() != 4 {
            return Err(TensorError::BadRank { op: "conv2d", expected: 4, shape: k_shape });
        }
        let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (c_out, kc_in, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kh != kw || kh.is_multiple_of(2) {
            return Err(TensorError::BadArgument {
                op: "conv2d",
                msg: format!("kernel must be square with odd extent, got {kh}x{kw}"),
            });
        }
        if kc_in != c_in {
            return Err(TensorError::DimMismatch {
                op: "conv2d",
                what: "input channel",
                lhs: vec![c_in],
                rhs: vec![kc_in],
            });
        }
        if self.nodes[bias.0].shape != [c_out] {
            return Err(TensorError::DimMismatch {
                op: "conv2d",
                what: "bias",
                lhs: vec![c_out],
                rhs: self.nodes[bias.0].shape.clone(),
            });
        }
        if stride == 0 {
            return Err(TensorError::BadArgument { op: "conv2d", msg: "stride must be positive".into() });
        }
        let k = kh;
        let h_num = h + 2 * padding;
        if h_num < k || w + 2 * padding < k {
            return Err(TensorError::BadArgument {
                op: "conv2d",
                msg: format!("kernel {k} exceeds padded input {h_num}x{}", w + 2 * padding),
            });
        }
        if !(h_num - k).is_multiple_of(stride) || !(w + 2 * padding - k).is_multiple_of(stride) {
            return Err(TensorError::BadArgument {
                op: "conv2d",
                msg: format!(
                    "padded extents {}x{} minus kernel {k} not divisible by stride {stride}",
                    h_num,
                    w + 2 * padding
                ),
            });
        }
        let h_out = (h_num - k) / stride + 1;
        let w_out = (w + 2 * padding - k) / stride + 1;

        let mut out = vec![S::ZERO; c_out * h_out * w_out];
        {
            let inp = &self.nodes[input.0].data;
            let ker = &self.nodes[kernel.0].data;
            let bs = &self.nodes[bias.0].data;
            conv2d_forward(
                inp, ker, bs, &mut out, c_in, h, w, c_out, k, stride, padding, h_out, w_out,
            );
        }
        self.push_result(
            Op::Conv2d { stride, padding },
            vec![input, kernel, bias],
            vec![c_out, h_out, w_out],
            out,
        )
    }

    /// `weight · input + bias` for a rank-1 input.
    pub fn linear(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
    ) -> Result<TensorId, TensorError> {
        self.check_id(input)?;
        self.check_id(weight)?;
        self.check_id(bias)?;
        let in_shape = self.nodes[input.0].shape.clone();
        let w_shape = self.nodes[weight.0].shape.clone();
        if in_shape.len() != 1 {
            return Err(TensorError::BadRank { op: "linear", expected: 1, shape: in_shape });
        }
        if w_shape.len() != 2 {
            return Err(TensorError::BadRank { op: "linear", expected: 2, shape: w_shape });
        }
        let (m, n) = (w_shape[0], w_shape[1]);
        if in_shape[0] != n {
            return Err(TensorError::DimMismatch {
                op: "linear",
                what: "inner",
                lhs: w_shape,
                rhs: in_shape,
            });
        }
        if self.nodes[bias.0].shape != [m] {
            return Err(TensorError::DimMismatch {
                op: "linear",
                what: "bias",
                lhs: vec![m],
                rhs: self.nodes[bias.0].shape.clone(),
            });
        }
        let mut out = vec![S::ZERO; m];
        {
            let x = &self.nodes[input.0].data;
            let wm = &self.nodes[weight.0].data;
            let b = &self.nodes[bias.0].data;
            for i in 0..m {
                let mut acc = b[i];
                let row = &wm[i * n..(i + 1) * n];
                for j in 0..n {
                    acc += row[j] * x[j];
                }
                out[i] = acc;
            }
        }
        self.push_result(Op::Linear, vec![input, weight, bias], vec![m], out)
    }

    /// Halve spatial extents by 2x2 averaging; extents must be even.
    pub fn down2_mean(&mut self, input: TensorId) -> Result<TensorId, TensorError> {
        self.check_id(input)?;
        let shape = self.nodes[input.0].shape.clone();
        if shape.len() != 3 {
            return Err(TensorError::BadRank { op: "down2_mean", expected: 3, shape });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
            return Err(TensorError::BadArgument {
                op: "down2_mean",
                msg: format!("spatial extents must be even, got {h}x{w}"),
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = S::from_f64(0.25);
        let mut out = vec![S::ZERO; c * ho * wo];
        {
            let inp = &self.nodes[input.0].data;
            for ci in 0..c {
                for oh in 0..ho {
                    let r0 = &inp[ci * h * w + (2 * oh) * w..];
                    let r1 = &inp[ci * h * w + (2 * oh + 1) * w..];
                    let orow = &mut out[ci * ho * wo + oh * wo..][..wo];
                    for (ow, o) in orow.iter_mut().enumerate() {
                        *o = (r0[2 * ow] + r0[2 * ow + 1] + r1[2 * ow] + r1[2 * ow + 1]) * quarter;
                    }
                }
            }
        }
        self.push_result(Op::Down2Mean, vec![input], vec![c, ho, wo], out)
    }

    /// Double spatial extents by nearest-neighbor replication.
    pub fn up2_nearest(&mut self, input: TensorId) -> Result<TensorId, TensorError> {
        self.check_id(input)?;
        let shape = self.nodes[input.0].shape.clone();
        if shape.len() != 3 {
            return Err(TensorError::BadRank { op: "up2_nearest", expected: 3, shape });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![S::ZERO; c * ho * wo];
        {
            let inp = &self.nodes[input.0].data;
            for ci in 0..c {
                for ih in 0..h {
                    let irow = &inp[ci * h * w + ih * w..][..w];
                    for dy in 0..2 {
                        let orow = &mut out[ci * ho * wo + (2 * ih + dy) * wo..][..wo];
                        for iw in 0..w {
                            orow[2 * iw] = irow[iw];
                            orow[2 * iw + 1] = irow[iw];
                        }
                    }
                }
            }
        }
        self.push_result(Op::Up2Nearest, vec![input], vec![c, ho, wo], out)
    }

    /// Stack two `[C, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.check_id(a)?;
        self.check_id(b)?;
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 3 || sb.len() != 3 {
            return Err(TensorError::BadRank { op: "concat_channels", expected: 3, shape: sa });
        }
        if sa[1..] != sb[1..] {
            return Err(TensorError::DimMismatch {
                op: "concat_channels",
                what: "spatial",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut data = Vec::with_capacity((sa[0] + sb[0]) * sa[1] * sa[2]);
        data.extend_from_slice(&self.nodes[a.0].data);
        data.extend_from_slice(&self.nodes[b.0].data);
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        self.push_result(Op::ConcatChannels, vec![a, b], shape, data)
    }

    /// Add a per-channel bias vector to every spatial position of `[C, H, W]`.
    pub fn add_channel_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, TensorError> {
        self.check_id(x)?;
        self.check_id(bias)?;
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 3 {
            return Err(TensorError::BadRank { op: "add_channel_bias", expected: 3, shape });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if self.nodes[bias.0].shape != [c] {
            return Err(TensorError::DimMismatch {
                op: "add_channel_bias",
                what: "channel",
                lhs: vec![c],
                rhs: self.nodes[bias.0].shape.clone(),
            });
        }
        let mut out = self.nodes[x.0].data.clone();
        for ci in 0..c {
            let bv = self.nodes[bias.0].data[ci];
            for v in &mut out[ci * h * w..(ci + 1) * h * w] {
                *v += bv;
            }
        }
        self.push_result(Op::AddChannelBias, vec![x, bias], shape, out)
    }

    // ---- backward --------------------------------------------------------

    /// Populate gradients of every tracked node reachable from `loss`,
    /// visiting each recorded operation exactly once in reverse order.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        self.check_id(loss)?;
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::LossNotScalar(self.nodes[loss.0].shape.clone()));
        }
        if !self.nodes[loss.0].tracked {
            return Err(TensorError::LossNotTracked);
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![S::ONE]);

        for ri in (0..self.records.len()).rev() {
            let (op, inputs, output) = {
                let r = &self.records[ri];
                (r.op.clone(), r.inputs.clone(), r.output)
            };
            if self.nodes[output.0].grad.is_none() {
                continue;
            }
            self.backprop_record(&op, &inputs, output);
        }
        Ok(())
    }

    fn ensure_grad(&mut self, id: TensorId) -> bool {
        if !self.nodes[id.0].tracked {
            return false;
        }
        if self.nodes[id.0].grad.is_none() {
            let n = self.nodes[id.0].data.len();
            self.nodes[id.0].grad = Some(vec![S::ZERO; n]);
        }
        true
    }

    fn backprop_record(&mut self, op: &Op, inputs: &[TensorId], output: TensorId) {
        let g_out = self.nodes[output.0].grad.take().expect("checked by caller");
        match op {
            Op::Add => {
                for &inp in inputs {
                    if self.ensure_grad(inp) {
                        let g = self.nodes[inp.0].grad.as_mut().unwrap();
                        for (gi, &go) in g.iter_mut().zip(&g_out) {
                            *gi += go;
                        }
                    }
                }
            }
            Op::Sub => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.ensure_grad(a) {
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for (gi, &go) in g.iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                }
                if self.ensure_grad(b) {
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for (gi, &go) in g.iter_mut().zip(&g_out) {
                        *gi -= go;
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.ensure_grad(a) {
                    let bv = self.nodes[b.0].data.clone();
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for ((gi, &go), &y) in g.iter_mut().zip(&g_out).zip(&bv) {
                        *gi += go * y;
                    }
                }
                if self.ensure_grad(b) {
                    let av = self.nodes[a.0].data.clone();
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for ((gi, &go), &x) in g.iter_mut().zip(&g_out).zip(&av) {
                        *gi += go * x;
                    }
                }
            }
            Op::Div => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.ensure_grad(a) {
                    let bv = self.nodes[b.0].data.clone();
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for ((gi, &go), &y) in g.iter_mut().zip(&g_out).zip(&bv) {
                        *gi += go / y;
                    }
                }
                if self.ensure_grad(b) {
                    let av = self.nodes[a.0].data.clone();
                    let bv = self.nodes[b.0].data.clone();
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for i in 0..g.len() {
                        g[i] -= g_out[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::Abs => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let av = self.nodes[a.0].data.clone();
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for ((gi, &go), &x) in g.iter_mut().zip(&g_out).zip(&av) {
                        // subgradient 0 at x == 0
                        if x > S::ZERO {
                            *gi += go;
                        } else if x < S::ZERO {
                            *gi -= go;
                        }
                    }
                }
            }
            Op::Relu => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let av = self.nodes[a.0].data.clone();
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for ((gi, &go), &x) in g.iter_mut().zip(&g_out).zip(&av) {
                        if x > S::ZERO {
                            *gi += go;
                        }
                    }
                }
            }
            Op::Sigmoid => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let yv = self.nodes[output.0].data.clone();
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for ((gi, &go), &y) in g.iter_mut().zip(&g_out).zip(&yv) {
                        *gi += go * y * (S::ONE - y);
                    }
                }
            }
            Op::AddScalar(_) => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for (gi, &go) in g.iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                }
            }
            Op::MulScalar(c) => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let cv = S::from_f64(*c);
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for (gi, &go) in g.iter_mut().zip(&g_out) {
                        *gi += go * cv;
                    }
                }
            }
            Op::Mean => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let n = self.nodes[a.0].data.len();
                    let gv = g_out[0] * S::from_f64(1.0 / n as f64);
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for gi in g.iter_mut() {
                        *gi += gv;
                    }
                }
            }
            Op::Sum => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let gv = g_out[0];
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for gi in g.iter_mut() {
                        *gi += gv;
                    }
                }
            }
            Op::Conv2d { stride, padding } => {
                self.backprop_conv2d(inputs, output, &g_out, *stride, *padding);
            }
            Op::Linear => {
                let (x, wt, b) = (inputs[0], inputs[1], inputs[2]);
                let n = self.nodes[x.0].data.len();
                let m = g_out.len();
                if self.ensure_grad(x) {
                    let wv = self.nodes[wt.0].data.clone();
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..m {
                        let go = g_out[i];
                        let row = &wv[i * n..(i + 1) * n];
                        for j in 0..n {
                            g[j] += go * row[j];
                        }
                    }
                }
                if self.ensure_grad(wt) {
                    let xv = self.nodes[x.0].data.clone();
                    let g = self.nodes[wt.0].grad.as_mut().unwrap();
                    for i in 0..m {
                        let go = g_out[i];
                        let row = &mut g[i * n..(i + 1) * n];
                        for j in 0..n {
                            row[j] += go * xv[j];
                        }
                    }
                }
                if self.ensure_grad(b) {
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for (gi, &go) in g.iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                }
            }
            Op::Down2Mean => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let shape = self.nodes[a.0].shape.clone();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (ho, wo) = (h / 2, w / 2);
                    let quarter = S::from_f64(0.25);
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for ci in 0..c {
                        for oh in 0..ho {
                            for ow in 0..wo {
                                let gv = g_out[ci * ho * wo + oh * wo + ow] * quarter;
                                let base = ci * h * w + (2 * oh) * w + 2 * ow;
                                g[base] += gv;
                                g[base + 1] += gv;
                                g[base + w] += gv;
                                g[base + w + 1] += gv;
                            }
                        }
                    }
                }
            }
            Op::Up2Nearest => {
                let a = inputs[0];
                if self.ensure_grad(a) {
                    let shape = self.nodes[a.0].shape.clone();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (ho, wo) = (2 * h, 2 * w);
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for ci in 0..c {
                        for ih in 0..h {
                            for iw in 0..w {
                                let base = ci * ho * wo + (2 * ih) * wo + 2 * iw;
                                let acc = g_out[base]
                                    + g_out[base + 1]
                                    + g_out[base + wo]
                                    + g_out[base + wo + 1];
                                g[ci * h * w + ih * w + iw] += acc;
                            }
                        }
                    }
                }
            }
            Op::ConcatChannels => {
                let (a, b) = (inputs[0], inputs[1]);
                let na = self.nodes[a.0].data.len();
                if self.ensure_grad(a) {
                    let g = self.nodes[a.0].grad.as_mut().unwrap();
                    for (gi, &go) in g.iter_mut().zip(&g_out[..na]) {
                        *gi += go;
                    }
                }
                if self.ensure_grad(b) {
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for (gi, &go) in g.iter_mut().zip(&g_out[na..]) {
                        *gi += go;
                    }
                }
            }
            Op::AddChannelBias => {
                let (x, b) = (inputs[0], inputs[1]);
                if self.ensure_grad(x) {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for (gi, &go) in g.iter_mut().zip(&g_out) {
                        *gi += go;
                    }
                }
                if self.ensure_grad(b) {
                    let shape = self.nodes[x.0].shape.clone();
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let g = self.nodes[b.0].grad.as_mut().unwrap();
                    for ci in 0..c {
                        let mut acc = S::ZERO;
                        for &go in &g_out[ci * h * w..(ci + 1) * h * w] {
                            acc += go;
                        }
                        g[ci] += acc;
                    }
                }
            }
        }
        // restore the output grad so sibling records sharing it still see it
        self.nodes[output.0].grad = Some(g_out);
    }

    fn backprop_conv2d(
        &mut self,
        inputs: &[TensorId],
        output: TensorId,
        g_out: &[S],
        stride: usize,
        padding: usize,
    ) {
        let (input, kernel, bias) = (inputs[0], inputs[1], inputs[2]);
        let in_shape = self.nodes[input.0].shape.clone();
        let k_shape = self.nodes[kernel.0].shape.clone();
        let out_shape = self.nodes[output.0].shape.clone();
        let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (c_out, k) = (k_shape[0], k_shape[2]);
        let (h_out, w_out) = (out_shape[1], out_shape[2]);

        if self.ensure_grad(input) {
            let ker = self.nodes[kernel.0].data.clone();
            let g_in = self.nodes[input.0].grad.as_mut().unwrap();
            conv2d_backward_input(
                &ker, g_out, g_in, c_in, h, w, c_out, k, stride, padding, h_out, w_out,
            );
        }
        if self.ensure_grad(kernel) {
            let inp = self.nodes[input.0].data.clone();
            let g_k = self.nodes[kernel.0].grad.as_mut().unwrap();
            conv2d_backward_kernel(
                &inp, g_out, g_k, c_in, h, w, c_out, k, stride, padding, h_out, w_out,
            );
        }
        if self.ensure_grad(bias) {
            let g_b = self.nodes[bias.0].grad.as_mut().unwrap();
            for co in 0..c_out {
                let mut acc = S::ZERO;
                for &go in &g_out[co * h_out * w_out..(co + 1) * h_out * w_out] {
                    acc += go;
                }
                g_b[co] += acc;
            }
        }
    }
}

fn sigmoid_stable<S: Scalar>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

/// Output-index range `[lo, hi)` such that `0 <= o*stride + k_off < in_len`.
fn valid_range(out_len: usize, k_off: isize, stride: usize, in_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if k_off >= 0 { 0 } else { (-k_off + s - 1) / s };
    let max_in = in_len as isize - 1 - k_off;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in / s + 1).min(out_len as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<S: Scalar>(
    inp: &[S],
    ker: &[S],
    bias: &[S],
    out: &mut [S],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
) {
    for co in 0..c_out {
        let out_plane = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
        out_plane.fill(bias[co]);
        for ci in 0..c_in {
            let in_plane = &inp[ci * h * w..(ci + 1) * h * w];
            for kh in 0..k {
                let row_off = kh as isize - padding as isize;
                let (oh_lo, oh_hi) = valid_range(h_out, row_off, stride, h);
                for kw in 0..k {
                    let col_off = kw as isize - padding as isize;
                    let wv = ker[((co * c_in + ci) * k + kh) * k + kw];
                    let (ow_lo, ow_hi) = valid_range(w_out, col_off, stride, w);
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    for oh in oh_lo..oh_hi {
                        let ih = (oh * stride) as isize + row_off;
                        let in_row = &in_plane[ih as usize * w..(ih as usize + 1) * w];
                        let out_row = &mut out_plane[oh * w_out..(oh + 1) * w_out];
                        if stride == 1 {
                            let iw0 = (ow_lo as isize + col_off) as usize;
                            let src = &in_row[iw0..iw0 + (ow_hi - ow_lo)];
                            let dst = &mut out_row[ow_lo..ow_hi];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        } else {
                            for ow in ow_lo..ow_hi {
                                let iw = (ow * stride) as isize + col_off;
                                out_row[ow] += wv * in_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input<S: Scalar>(
    ker: &[S],
    g_out: &[S],
    g_in: &mut [S],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
) {
    for co in 0..c_out {
        let go_plane = &g_out[co * h_out * w_out..(co + 1) * h_out * w_out];
        for ci in 0..c_in {
            let gi_plane = &mut g_in[ci * h * w..(ci + 1) * h * w];
            for kh in 0..k {
                let row_off = kh as isize - padding as isize;
                let (oh_lo, oh_hi) = valid_range(h_out, row_off, stride, h);
                for kw in 0..k {
                    let col_off = kw as isize - padding as isize;
                    let wv = ker[((co * c_in + ci) * k + kh) * k + kw];
                    let (ow_lo, ow_hi) = valid_range(w_out, col_off, stride, w);
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    for oh in oh_lo..oh_hi {
                        let ih = ((oh * stride) as isize + row_off) as usize;
                        let go_row = &go_plane[oh * w_out..(oh + 1) * w_out];
                        let gi_row = &mut gi_plane[ih * w..(ih + 1) * w];
                        if stride == 1 {
                            let iw0 = (ow_lo as isize + col_off) as usize;
                            let dst = &mut gi_row[iw0..iw0 + (ow_hi - ow_lo)];
                            let src = &go_row[ow_lo..ow_hi];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        } else {
                            for ow in ow_lo..ow_hi {
                                let iw = ((ow * stride) as isize + col_off) as usize;
                                gi_row[iw] += wv * go_row[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_kernel<S: Scalar>(
    inp: &[S],
    g_out: &[S],
    g_k: &mut [S],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
) {
    for co in 0..c_out {
        let go_plane = &g_out[co * h_out * w_out..(co + 1) * h_out * w_out];
        for ci in 0..c_in {
            let in_plane = &inp[ci * h * w..(ci + 1) * h * w];
            for kh in 0..k {
                let row_off = kh as isize - padding as isize;
                let (oh_lo, oh_hi) = valid_range(h_out, row_off, stride, h);
                for kw in 0..k {
                    let col_off = kw as isize - padding as isize;
                    let (ow_lo, ow_hi) = valid_range(w_out, col_off, stride, w);
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    let mut acc = S::ZERO;
                    for oh in oh_lo..oh_hi {
                        let ih = ((oh * stride) as isize + row_off) as usize;
                        let go_row = &go_plane[oh * w_out..(oh + 1) * w_out];
                        let in_row = &in_plane[ih * w..(ih + 1) * w];
                        if stride == 1 {
                            let iw0 = (ow_lo as isize + col_off) as usize;
                            let src = &in_row[iw0..iw0 + (ow_hi - ow_lo)];
                            for (&g, &x) in go_row[ow_lo..ow_hi].iter().zip(src) {
                                acc += g * x;
                            }
                        } else {
                            for ow in ow_lo..ow_hi {
                                let iw = ((ow * stride) as isize + col_off) as usize;
                                acc += go_row[ow] * in_row[iw];
                            }
                        }
                    }
                    g_k[((co * c_in + ci) * k + kh) * k + kw] += acc;
                }
            }
        }
    }
}
