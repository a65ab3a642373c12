//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is a define-by-run tape: every operator executes eagerly,
//! stores its output in an arena, and appends a record. [`Graph::backward`]
//! replays the records in reverse, accumulating vector-Jacobian products.
//! The operator set is exactly what the model needs; there is no
//! broadcasting, no fusion, and no implicit casting.
//!
//! Graphs are rebuilt per training step. Parameters live outside the graph
//! in a [`params::ParamStore`] and are registered as leaf tensors each step.

mod backward;

pub mod adamw;
pub mod gradcheck;
pub mod params;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Default epsilon under the square root of `l2_normalize`, guarding the
/// singularity at zero.
pub const L2_EPSILON: f64 = 1e-12;

/// Default epsilon inside layer normalization.
pub const LAYER_NORM_EPSILON: f64 = 1e-5;

/// Handle to a tensor stored in a [`Graph`] arena.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub usize);

/// Operator kinds with their per-kind attributes.
///
/// Masks are row-major boolean grids; `true` keeps the value, `false`
/// marks the cell masked. `Reshape` is metadata-only (row-major layout is
/// preserved) and its gradient is the identity.
#[derive(Clone, Debug)]
pub enum OpKind<R: Real> {
    /// `[m,k] @ [k,n] -> [m,n]`
    Matmul,
    /// Elementwise sum of two same-shape tensors.
    Add,
    /// Multiply every element by a constant.
    Scale { factor: R },
    Relu,
    Sigmoid,
    Log,
    Exp,
    /// Reduce all elements to a scalar `[1]`.
    Sum,
    /// Mean of all elements, scalar `[1]`.
    Mean,
    /// Same-padded 2D convolution: input `[c_in,n,n]`, weight
    /// `[c_out,c_in,k,k]`, optional bias `[c_out]`. `k` must be odd. With
    /// `out_keep` set, output is computed only at kept spatial positions
    /// and is exactly zero elsewhere (the caller's mask discipline makes
    /// those cells dead anyway; skipping them avoids most of the work on
    /// sparse grids).
    Conv2dSame { kernel: usize, out_keep: Option<Vec<bool>> },
    /// Moment aggregation: input `[n,d]` clip rows, output `[d,n,n]` where
    /// cell (i,j) is the coordinatewise max of rows i..=j for kept cells
    /// and exactly zero elsewhere. Gradient routes one unit per kept output
    /// coordinate to the earliest argmax row.
    MaxPoolInterval { n: usize, keep: Vec<bool> },
    /// Row-wise layer normalization with affine parameters; all three
    /// inputs share the shape `[rows, d]`.
    LayerNorm { eps: R },
    /// Normalize along `axis` to unit L2 norm using `x / sqrt(|x|^2 + eps)`.
    L2Normalize { axis: usize, eps: R },
    /// Keep elements where the mask is true, replace the rest with `fill`.
    /// The mask tiles over leading dimensions.
    MaskedFill { keep: Vec<bool>, fill: R },
    /// Reinterpret the (row-major) buffer with a new shape.
    Reshape { shape: Vec<usize> },
}

pub(crate) struct Record<R: Real> {
    pub op: OpKind<R>,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
}

/// Define-by-run computation graph.
pub struct Graph<R: Real> {
    values: Vec<Vec<R>>,
    shapes: Vec<Vec<usize>>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<R>>>,
    records: Vec<Record<R>>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            shapes: Vec::new(),
            requires: Vec::new(),
            grads: Vec::new(),
            records: Vec::new(),
        }
    }

    fn push_node(&mut self, values: Vec<R>, shape: Vec<usize>, requires: bool) -> TensorId {
        let id = TensorId(self.values.len());
        self.values.push(values);
        self.shapes.push(shape);
        self.requires.push(requires);
        self.grads.push(None);
        id
    }

    /// Registers a leaf tensor that does not receive gradients.
    pub fn input(&mut self, values: Vec<R>, shape: &[usize]) -> Result<TensorId> {
        check_count("input", &values, shape)?;
        Ok(self.push_node(values, shape.to_vec(), false))
    }

    /// Registers a trainable leaf tensor.
    pub fn param(&mut self, values: Vec<R>, shape: &[usize]) -> Result<TensorId> {
        check_count("param", &values, shape)?;
        Ok(self.push_node(values, shape.to_vec(), true))
    }

    /// A constant tensor filled with one value.
    pub fn full(&mut self, fill: R, shape: &[usize]) -> TensorId {
        let numel = shape.iter().product();
        self.push_node(vec![fill; numel], shape.to_vec(), false)
    }

    pub fn value(&self, id: TensorId) -> &[R] {
        &self.values[id.0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.values[id.0].len()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.requires[id.0]
    }

    /// The single element of a scalar tensor.
    pub fn scalar(&self, id: TensorId) -> R {
        debug_assert_eq!(self.numel(id), 1);
        self.values[id.0][0]
    }

    /// Gradient accumulated by the last `backward` call, if any reached
    /// this tensor.
    pub fn grad(&self, id: TensorId) -> Option<&[R]> {
        self.grads[id.0].as_deref()
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    // ---- typed wrappers over op_forward ----

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.op_forward(OpKind::Matmul, &[a, b])
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.op_forward(OpKind::Add, &[a, b])
    }

    /// `x + c` via a constant tensor shaped like `x`.
    pub fn offset(&mut self, x: TensorId, c: R) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let cst = self.full(c, &shape);
        self.add(x, cst)
    }

    pub fn scale(&mut self, x: TensorId, factor: R) -> Result<TensorId> {
        self.op_forward(OpKind::Scale { factor }, &[x])
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        self.op_forward(OpKind::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        self.op_forward(OpKind::Sigmoid, &[x])
    }

    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        self.op_forward(OpKind::Log, &[x])
    }

    pub fn exp(&mut self, x: TensorId) -> Result<TensorId> {
        self.op_forward(OpKind::Exp, &[x])
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        self.op_forward(OpKind::Sum, &[x])
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        self.op_forward(OpKind::Mean, &[x])
    }

    pub fn conv2d_same(
        &mut self,
        x: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        kernel: usize,
    ) -> Result<TensorId> {
        let mut inputs = vec![x, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.op_forward(OpKind::Conv2dSame { kernel, out_keep: None }, &inputs)
    }

    /// Convolution restricted to kept output positions (zero elsewhere).
    pub fn conv2d_same_masked(
        &mut self,
        x: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        kernel: usize,
        out_keep: &[bool],
    ) -> Result<TensorId> {
        let mut inputs = vec![x, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.op_forward(
            OpKind::Conv2dSame { kernel, out_keep: Some(out_keep.to_vec()) },
            &inputs,
        )
    }

    pub fn maxpool_interval(&mut self, clips: TensorId, n: usize, keep: &[bool]) -> Result<TensorId> {
        self.op_forward(
            OpKind::MaxPoolInterval { n, keep: keep.to_vec() },
            &[clips],
        )
    }

    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId) -> Result<TensorId> {
        self.op_forward(
            OpKind::LayerNorm { eps: R::from_f64(LAYER_NORM_EPSILON) },
            &[x, gamma, beta],
        )
    }

    pub fn l2_normalize(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        self.l2_normalize_with_eps(x, axis, R::from_f64(L2_EPSILON))
    }

    pub fn l2_normalize_with_eps(&mut self, x: TensorId, axis: usize, eps: R) -> Result<TensorId> {
        self.op_forward(OpKind::L2Normalize { axis, eps }, &[x])
    }

    pub fn masked_fill(&mut self, x: TensorId, keep: &[bool], fill: R) -> Result<TensorId> {
        self.op_forward(
            OpKind::MaskedFill { keep: keep.to_vec(), fill },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        self.op_forward(OpKind::Reshape { shape: shape.to_vec() }, &[x])
    }

    /// Executes one operator, records it, and returns the output tensor.
    pub fn op_forward(&mut self, op: OpKind<R>, inputs: &[TensorId]) -> Result<TensorId> {
        let (values, shape) = self.eval_forward(&op, inputs)?;
        let requires = inputs.iter().any(|id| self.requires[id.0]);
        let output = self.push_node(values, shape, requires);
        self.records.push(Record { op, inputs: inputs.to_vec(), output });
        Ok(output)
    }

    fn eval_forward(&self, op: &OpKind<R>, inputs: &[TensorId]) -> Result<(Vec<R>, Vec<usize>)> {
        match op {
            OpKind::Matmul => {
                let [a, b] = arity::<2>("matmul", inputs)?;
                self.forward_matmul(a, b)
            }
            OpKind::Add => {
                let [a, b] = arity::<2>("add", inputs)?;
                if self.shapes[a.0] != self.shapes[b.0] {
                    return Err(shape_err("add", format!(
                        "{:?} vs {:?}",
                        self.shapes[a.0], self.shapes[b.0]
                    )));
                }
                let vals = self.values[a.0]
                    .iter()
                    .zip(&self.values[b.0])
                    .map(|(&x, &y)| x + y)
                    .collect();
                Ok((vals, self.shapes[a.0].clone()))
            }
            OpKind::Scale { factor } => {
                let [x] = arity::<1>("scale", inputs)?;
                let vals = self.values[x.0].iter().map(|&v| v * *factor).collect();
                Ok((vals, self.shapes[x.0].clone()))
            }
            OpKind::Relu => {
                let [x] = arity::<1>("relu", inputs)?;
                let zero = R::zero();
                let vals = self.values[x.0]
                    .iter()
                    .map(|&v| if v > zero { v } else { zero })
                    .collect();
                Ok((vals, self.shapes[x.0].clone()))
            }
            OpKind::Sigmoid => {
                let [x] = arity::<1>("sigmoid", inputs)?;
                let vals = self.values[x.0].iter().map(|&v| sigmoid(v)).collect();
                Ok((vals, self.shapes[x.0].clone()))
            }
            OpKind::Log => {
                let [x] = arity::<1>("log", inputs)?;
                let mut vals = Vec::with_capacity(self.values[x.0].len());
                for &v in &self.values[x.0] {
                    if v <= R::zero() {
                        return Err(Error::NonPositiveLog);
                    }
                    vals.push(v.ln());
                }
                Ok((vals, self.shapes[x.0].clone()))
            }
            OpKind::Exp => {
                let [x] = arity::<1>("exp", inputs)?;
                let vals = self.values[x.0].iter().map(|&v| v.exp()).collect();
                Ok((vals, self.shapes[x.0].clone()))
            }
            OpKind::Sum => {
                let [x] = arity::<1>("sum", inputs)?;
                let total = self.values[x.0].iter().fold(R::zero(), |acc, &v| acc + v);
                Ok((vec![total], vec![1]))
            }
            OpKind::Mean => {
                let [x] = arity::<1>("mean", inputs)?;
                let n = self.values[x.0].len();
                if n == 0 {
                    return Err(Error::InvalidArgument("mean of an empty tensor".into()));
                }
                let total = self.values[x.0].iter().fold(R::zero(), |acc, &v| acc + v);
                Ok((vec![total / R::from_f64(n as f64)], vec![1]))
            }
            OpKind::Conv2dSame { kernel, out_keep } => {
                self.forward_conv(inputs, *kernel, out_keep.as_deref())
            }
            OpKind::MaxPoolInterval { n, keep } => {
                let [x] = arity::<1>("maxpool_interval", inputs)?;
                self.forward_maxpool(x, *n, keep)
            }
            OpKind::LayerNorm { eps } => {
                let [x, gamma, beta] = arity::<3>("layer_norm", inputs)?;
                self.forward_layer_norm(x, gamma, beta, *eps)
            }
            OpKind::L2Normalize { axis, eps } => {
                let [x] = arity::<1>("l2_normalize", inputs)?;
                self.forward_l2_normalize(x, *axis, *eps)
            }
            OpKind::MaskedFill { keep, fill } => {
                let [x] = arity::<1>("masked_fill", inputs)?;
                let numel = self.values[x.0].len();
                check_mask_tiles("masked_fill", &self.shapes[x.0], keep.len())?;
                let mut vals = Vec::with_capacity(numel);
                for (idx, &v) in self.values[x.0].iter().enumerate() {
                    vals.push(if keep[idx % keep.len()] { v } else { *fill });
                }
                Ok((vals, self.shapes[x.0].clone()))
            }
            OpKind::Reshape { shape } => {
                let [x] = arity::<1>("reshape", inputs)?;
                let new_numel: usize = shape.iter().product();
                if new_numel != self.values[x.0].len() {
                    return Err(shape_err("reshape", format!(
                        "cannot view {:?} ({} elements) as {:?} ({} elements)",
                        self.shapes[x.0],
                        self.values[x.0].len(),
                        shape,
                        new_numel
                    )));
                }
                Ok((self.values[x.0].clone(), shape.clone()))
            }
        }
    }

    fn forward_matmul(&self, a: TensorId, b: TensorId) -> Result<(Vec<R>, Vec<usize>)> {
        let (sa, sb) = (&self.shapes[a.0], &self.shapes[b.0]);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} @ {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        let mut out = vec![R::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == R::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bvv) in orow.iter_mut().zip(brow) {
                    *o = *o + x * bvv;
                }
            }
        }
        Ok((out, vec![m, n]))
    }

    fn forward_conv(
        &self,
        inputs: &[TensorId],
        kernel: usize,
        out_keep: Option<&[bool]>,
    ) -> Result<(Vec<R>, Vec<usize>)> {
        if inputs.len() != 2 && inputs.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "conv2d_same takes input, weight, and optional bias; got {} tensors",
                inputs.len()
            )));
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d_same requires an odd kernel size, got {kernel}"
            )));
        }
        let x = inputs[0];
        let w = inputs[1];
        let sx = &self.shapes[x.0];
        let sw = &self.shapes[w.0];
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != kernel || sw[3] != kernel {
            return Err(shape_err("conv2d_same", format!(
                "input {sx:?}, weight {sw:?}, kernel {kernel}"
            )));
        }
        let (c_in, h, wid) = (sx[0], sx[1], sx[2]);
        let c_out = sw[0];
        if let Some(&b) = inputs.get(2) {
            if self.shapes[b.0] != [c_out] {
                return Err(shape_err("conv2d_same", format!(
                    "bias {:?}, expected [{c_out}]",
                    self.shapes[b.0]
                )));
            }
        }
        if let Some(keep) = out_keep {
            if keep.len() != h * wid {
                return Err(shape_err("conv2d_same", format!(
                    "output mask of {} cells for a {h}x{wid} map",
                    keep.len()
                )));
            }
        }
        let pad = kernel / 2;
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let bias = inputs.get(2).map(|&b| self.values[b.0].as_slice());

        let mut out = vec![R::zero(); c_out * h * wid];
        match out_keep {
            Some(keep) => {
                // Cell-centric: only kept output positions are computed. A
                // per-cell patch in [ci][ky][kx] order matches the weight
                // layout, so each output channel is one contiguous dot.
                let patch_len = c_in * kernel * kernel;
                let mut patch = vec![R::zero(); patch_len];
                for idx in 0..h * wid {
                    if !keep[idx] {
                        continue;
                    }
                    let (oy, ox) = (idx / wid, idx % wid);
                    gather_patch(xv, &mut patch, c_in, h, wid, kernel, pad, oy, ox);
                    for co in 0..c_out {
                        let wrow = &wv[co * patch_len..(co + 1) * patch_len];
                        let mut acc = bias.map_or(R::zero(), |bv| bv[co]);
                        for (wv_j, p_j) in wrow.iter().zip(&patch) {
                            acc = acc + *wv_j * *p_j;
                        }
                        out[co * h * wid + idx] = acc;
                    }
                }
            }
            None => {
                if let Some(bv) = bias {
                    for co in 0..c_out {
                        out[co * h * wid..(co + 1) * h * wid].fill(bv[co]);
                    }
                }
                for co in 0..c_out {
                    for ci in 0..c_in {
                        for ky in 0..kernel {
                            let oy_lo = pad.saturating_sub(ky);
                            let oy_hi = (h + pad).saturating_sub(ky).min(h);
                            for kx in 0..kernel {
                                let wgt = wv[((co * c_in + ci) * kernel + ky) * kernel + kx];
                                if wgt == R::zero() {
                                    continue;
                                }
                                let ox_lo = pad.saturating_sub(kx);
                                let ox_hi = (wid + pad).saturating_sub(kx).min(wid);
                                for oy in oy_lo..oy_hi {
                                    let iy = oy + ky - pad;
                                    let irow = (ci * h + iy) * wid;
                                    let orow = (co * h + oy) * wid;
                                    for ox in ox_lo..ox_hi {
                                        let ix = ox + kx - pad;
                                        out[orow + ox] = out[orow + ox] + wgt * xv[irow + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((out, vec![c_out, h, wid]))
    }

    fn forward_maxpool(&self, x: TensorId, n: usize, keep: &[bool]) -> Result<(Vec<R>, Vec<usize>)> {
        let sx = &self.shapes[x.0];
        if sx.len() != 2 || sx[0] != n {
            return Err(shape_err("maxpool_interval", format!(
                "clips {sx:?}, expected [{n}, d]"
            )));
        }
        if keep.len() != n * n {
            return Err(shape_err("maxpool_interval", format!(
                "mask has {} cells, expected {}",
                keep.len(),
                n * n
            )));
        }
        let d = sx[1];
        let xv = &self.values[x.0];
        let mut out = vec![R::zero(); d * n * n];
        for c in 0..d {
            for i in 0..n {
                let mut cur = xv[i * d + c];
                if keep[i * n + i] {
                    out[(c * n + i) * n + i] = cur;
                }
                for j in (i + 1)..n {
                    let v = xv[j * d + c];
                    if v > cur {
                        cur = v;
                    }
                    if keep[i * n + j] {
                        out[(c * n + i) * n + j] = cur;
                    }
                }
            }
        }
        Ok((out, vec![d, n, n]))
    }

    fn forward_layer_norm(
        &self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: R,
    ) -> Result<(Vec<R>, Vec<usize>)> {
        let sx = &self.shapes[x.0];
        if sx.len() != 2 {
            return Err(shape_err("layer_norm", format!("input {sx:?}, expected [rows, d]")));
        }
        if self.shapes[gamma.0] != *sx || self.shapes[beta.0] != *sx {
            return Err(shape_err("layer_norm", format!(
                "input {sx:?}, gamma {:?}, beta {:?}",
                self.shapes[gamma.0], self.shapes[beta.0]
            )));
        }
        let (rows, d) = (sx[0], sx[1]);
        if d == 0 {
            return Err(Error::InvalidArgument("layer_norm over an empty row".into()));
        }
        let xv = &self.values[x.0];
        let gv = &self.values[gamma.0];
        let bv = &self.values[beta.0];
        let inv_d = R::from_f64(1.0 / d as f64);
        let mut out = Vec::with_capacity(rows * d);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().fold(R::zero(), |a, &v| a + v) * inv_d;
            let var = row
                .iter()
                .fold(R::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_d;
            let inv_std = R::one() / (var + eps).sqrt();
            for c in 0..d {
                let xhat = (row[c] - mean) * inv_std;
                out.push(gv[r * d + c] * xhat + bv[r * d + c]);
            }
        }
        Ok((out, sx.clone()))
    }

    fn forward_l2_normalize(&self, x: TensorId, axis: usize, eps: R) -> Result<(Vec<R>, Vec<usize>)> {
        let sx = &self.shapes[x.0];
        if axis >= sx.len() {
            return Err(shape_err("l2_normalize", format!("axis {axis} for shape {sx:?}")));
        }
        let (outer, len, inner) = axis_strides(sx, axis);
        let xv = &self.values[x.0];
        let mut out = xv.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut sq = R::zero();
                for t in 0..len {
                    let v = xv[base + t * inner];
                    sq = sq + v * v;
                }
                let denom_sq = sq + eps;
                if denom_sq <= R::zero() {
                    return Err(Error::ZeroNorm);
                }
                let inv = R::one() / denom_sq.sqrt();
                for t in 0..len {
                    out[base + t * inner] = xv[base + t * inner] * inv;
                }
            }
        }
        Ok((out, sx.clone()))
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn check_count<R: Real>(op: &'static str, values: &[R], shape: &[usize]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != values.len() {
        return Err(shape_err(op, format!(
            "{} values for shape {:?} ({} expected)",
            values.len(),
            shape,
            numel
        )));
    }
    Ok(())
}

/// The mask must tile exactly over trailing dimensions.
fn check_mask_tiles(op: &'static str, shape: &[usize], mask_len: usize) -> Result<()> {
    let mut suffix = 1usize;
    for &dim in shape.iter().rev() {
        if suffix == mask_len {
            return Ok(());
        }
        suffix *= dim;
    }
    if suffix == mask_len {
        return Ok(());
    }
    Err(shape_err(op, format!(
        "mask of {mask_len} cells does not tile shape {shape:?}"
    )))
}

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Copies the receptive field of output cell (oy, ox) into `patch` laid
/// out [ci][ky][kx], zeroing padded positions.
pub(crate) fn gather_patch<R: Real>(
    xv: &[R],
    patch: &mut [R],
    c_in: usize,
    h: usize,
    wid: usize,
    kernel: usize,
    pad: usize,
    oy: usize,
    ox: usize,
) {
    let k2 = kernel * kernel;
    for slot in patch.iter_mut() {
        *slot = R::zero();
    }
    for ky in 0..kernel {
        let iy = oy + ky;
        if iy < pad || iy - pad >= h {
            continue;
        }
        let kx_lo = pad.saturating_sub(ox);
        let kx_hi = (wid + pad - ox).min(kernel);
        let src_row = (iy - pad) * wid;
        for ci in 0..c_in {
            let src = ci * h * wid + src_row;
            let dst = ci * k2 + ky * kernel;
            for kx in kx_lo..kx_hi {
                patch[dst + kx] = xv[src + ox + kx - pad];
            }
        }
    }
}

fn arity<const N: usize>(op: &'static str, inputs: &[TensorId]) -> Result<[TensorId; N]> {
    inputs.try_into().map_err(|_| {
        Error::InvalidArgument(format!("{op} takes {N} inputs, got {}", inputs.len()))
    })
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::ShapeMismatch { op, detail }
}
