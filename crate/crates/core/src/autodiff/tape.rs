//! Reverse-mode automatic differentiation on a flat tape.
//!
//! The tape is rebuilt for every training iteration (define-by-run): leaves
//! are inserted, a scalar objective is composed from op methods on [`Var`],
//! and [`Tape::backward`] walks the tape once in reverse. All values are f64.
//! Complex quantities travel as stacked re/im planes in one tensor of shape
//! `[2, ...]`; spectral primitives (rdft/irdft/frame/overlap-add) are single
//! tape ops whose adjoints are computed with FFTs rather than dense matrices.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;

use super::fft;
use super::tensor::Tensor;
use crate::{Error, Result};

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Elementwise product with a single-element node, broadcast over `a`.
    MulScalar { a: usize, s: usize },
    Scale(usize, f64),
    AddConst(usize),
    Matmul(usize, usize),
    Conv1d { x: usize, w: usize, bias: Option<usize>, dilation: usize },
    Conv2d { x: usize, w: usize, bias: Option<usize>, stride: (usize, usize), pad: (usize, usize) },
    AddChannelBias { x: usize, b: usize },
    Tanh(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Softplus(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    Pow(usize, f64),
    ClampMin(usize, f64),
    Sum(usize),
    Mean(usize),
    /// Peak magnitude; the subgradient routes to the first argmax element.
    MaxAbs(usize),
    SliceRows { a: usize, start: usize },
    ConcatRows(usize, usize),
    Reshape(usize),
    Transpose2d(usize),
    /// [2, bins] -> [2, frames, bins], repeating over the frame axis.
    BroadcastFrames { a: usize },
    /// Elementwise complex product of two [2, ...] tensors.
    ComplexMul(usize, usize),
    /// comp(Z) = |Z|^c * Z / |Z| with comp(0) = 0; see forward for the floor.
    CompressedComplex { a: usize, exponent: f64 },
    /// Windowed framing of a 1-D signal with implicit zero padding.
    Frame { x: usize, window: Arc<Vec<f64>>, hop: usize, pad_left: usize },
    /// Per-row real DFT after zero-padding rows to fft_len; onesided output.
    Rdft { frames: usize, fft_len: usize },
    /// Per-row inverse DFT of a onesided spectrum (Hermitian extension).
    Irdft { spec: usize, fft_len: usize },
    /// Overlap-add of full-length frames, normalized by the window envelope.
    OverlapAdd { frames: usize, hop: usize, pad_left: usize, target_len: usize, inv_env: Arc<Vec<f64>> },
    /// Uniform Catmull-Rom spline on [-1, 1] with linear extrapolation.
    CatmullRom { points: usize, x: usize },
    /// Real circulant filter given its (full-length, symmetric) DFT gains.
    CirculantFilter { x: usize, gains: Arc<Vec<f64>> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Arena holding one computation graph.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts an input node. Rejects non-finite entries: the tape boundary
    /// is where NaN/Inf must stop.
    pub fn leaf(&self, value: Tensor) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(Error::non_finite("tape leaf"));
        }
        Ok(self.push(value, Op::Leaf))
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push_checked(&self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(Error::non_finite(format!("op {op_name}")));
        }
        Ok(self.push(value, op))
    }

    /// Reverse sweep from a scalar root. Nodes not on a path to the root
    /// simply keep zero gradients.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::invalid("backward: var from another tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got shape {:?}", nodes[root.id].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            backward_op(&nodes, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        for (id, g) in grads.into_iter().enumerate() {
            match g {
                Some(data) => {
                    if !data.iter().all(|v| v.is_finite()) {
                        return Err(Error::non_finite(format!("gradient of node {id}")));
                    }
                    out.push(Some(Tensor::new(nodes[id].value.shape().to_vec(), data)?));
                }
                None => out.push(None),
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Gradients produced by one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var` (zeros if unreached).
    pub fn get(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(t) => t.clone(),
            None => {
                let nodes = var.tape.nodes.borrow();
                Tensor::zeros(nodes[var.id].value.shape())
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a scalar node.
    pub fn item(&self) -> Result<f64> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn same_tape(&self, rhs: Var<'t>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, rhs.tape) {
            Ok(())
        } else {
            Err(Error::invalid(format!("{op}: vars from different tapes")))
        }
    }

    fn zip_elementwise(
        self,
        rhs: Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(rhs, op)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            if a.shape() != b.shape() {
                return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.tape.push_checked(op, out, make(self.id, rhs.id))
    }

    fn map_elementwise(
        self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        make: impl FnOnce(usize) -> Op,
    ) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let data = a.data().iter().map(|&x| f(x)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.tape.push_checked(op, out, make(self.id))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.zip_elementwise(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.zip_elementwise(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.zip_elementwise(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    /// Broadcast product with a single-element node.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(s, "mul_scalar")?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let sv = &nodes[s.id].value;
            if sv.len() != 1 {
                return Err(Error::shape("mul_scalar", format!("scalar operand has shape {:?}", sv.shape())));
            }
            let k = sv.data()[0];
            let a = &nodes[self.id].value;
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| x * k).collect())?
        };
        self.tape.push_checked("mul_scalar", out, Op::MulScalar { a: self.id, s: s.id })
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.map_elementwise("scale", |x| x * c, |a| Op::Scale(a, c))
    }

    pub fn add_const(self, c: f64) -> Result<Var<'t>> {
        self.map_elementwise("add_const", |x| x + c, Op::AddConst)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.map_elementwise("tanh", f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.map_elementwise("sigmoid", sigmoid, Op::Sigmoid)
    }

    /// relu for slope 0; leaky rectifier otherwise. x >= 0 takes slope 1.
    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.map_elementwise("leaky_relu", |x| if x >= 0.0 { x } else { slope * x }, |a| {
            Op::LeakyRelu(a, slope)
        })
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.leaky_relu(0.0)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.map_elementwise("softplus", softplus, Op::Softplus)
    }

    /// x * sigmoid(x), as a composition of existing ops.
    pub fn silu(self) -> Result<Var<'t>> {
        self.mul(self.sigmoid()?)
    }

    pub fn sin(self) -> Result<Var<'t>> {
        self.map_elementwise("sin", f64::sin, Op::Sin)
    }

    pub fn cos(self) -> Result<Var<'t>> {
        self.map_elementwise("cos", f64::cos, Op::Cos)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.map_elementwise("exp", f64::exp, Op::Exp)
    }

    /// Natural log; requires strictly positive input.
    pub fn log(self) -> Result<Var<'t>> {
        {
            let nodes = self.tape.nodes.borrow();
            if nodes[self.id].value.data().iter().any(|&x| x <= 0.0) {
                return Err(Error::invalid("log: non-positive input"));
            }
        }
        self.map_elementwise("log", f64::ln, Op::Log)
    }

    /// Requires non-negative input; the derivative blows up at exactly 0,
    /// so clamp above zero first when zeros are possible.
    pub fn sqrt(self) -> Result<Var<'t>> {
        {
            let nodes = self.tape.nodes.borrow();
            if nodes[self.id].value.data().iter().any(|&x| x < 0.0) {
                return Err(Error::invalid("sqrt: negative input"));
            }
        }
        self.map_elementwise("sqrt", f64::sqrt, Op::Sqrt)
    }

    /// Subgradient at 0 is 0.
    pub fn abs(self) -> Result<Var<'t>> {
        self.map_elementwise("abs", f64::abs, Op::Abs)
    }

    /// x^c for strictly positive x.
    pub fn pow(self, c: f64) -> Result<Var<'t>> {
        {
            let nodes = self.tape.nodes.borrow();
            if nodes[self.id].value.data().iter().any(|&x| x <= 0.0) {
                return Err(Error::invalid("pow: non-positive input"));
            }
        }
        self.map_elementwise("pow", |x| x.powf(c), |a| Op::Pow(a, c))
    }

    /// max(x, c) elementwise; gradient is 0 where the floor binds.
    pub fn clamp_min(self, c: f64) -> Result<Var<'t>> {
        self.map_elementwise("clamp_min", |x| x.max(c), |a| Op::ClampMin(a, c))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let total: f64 = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.data().iter().sum()
        };
        self.tape.push_checked("sum", Tensor::scalar(total), Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            if v.is_empty() {
                return Err(Error::shape("mean", "empty tensor".to_string()));
            }
            Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64)
        };
        self.tape.push_checked("mean", out, Op::Mean(self.id))
    }

    /// Peak magnitude max_i |x_i| as a scalar node.
    pub fn max_abs(self) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            if v.is_empty() {
                return Err(Error::shape("max_abs", "empty tensor".to_string()));
            }
            Tensor::scalar(v.data().iter().fold(0.0f64, |m, &x| m.max(x.abs())))
        };
        self.tape.push_checked("max_abs", out, Op::MaxAbs(self.id))
    }

    /// 2-D matrix product.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs, "matmul")?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            let (m, k) = dims2(a, "matmul lhs")?;
            let (k2, n) = dims2(b, "matmul rhs")?;
            if k != k2 {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let mut data = vec![0.0; m * n];
            let ad = a.data();
            let bd = b.data();
            for i in 0..m {
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    let orow = &mut data[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += av * brow[j];
                    }
                }
            }
            Tensor::new(vec![m, n], data)?
        };
        self.tape.push_checked("matmul", out, Op::Matmul(self.id, rhs.id))
    }

    /// Causal dilated 1-D convolution: x [C_in, L] * w [C_out, C_in, K]
    /// (+ optional bias [C_out]) -> [C_out, L]. The kernel's last tap reads
    /// the current sample; earlier taps reach back by `dilation` steps.
    pub fn conv1d(self, w: Var<'t>, bias: Option<Var<'t>>, dilation: usize) -> Result<Var<'t>> {
        self.same_tape(w, "conv1d")?;
        if let Some(b) = bias {
            self.same_tape(b, "conv1d")?;
        }
        if dilation == 0 {
            return Err(Error::invalid("conv1d: dilation must be >= 1"));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let wt = &nodes[w.id].value;
            let (cin, l) = dims2(x, "conv1d input")?;
            let (cout, cin2, k) = dims3(wt, "conv1d kernel")?;
            if cin != cin2 {
                return Err(Error::shape(
                    "conv1d",
                    format!("input channels {} vs kernel {:?}", cin, wt.shape()),
                ));
            }
            let bd = match bias {
                Some(b) => {
                    let bv = &nodes[b.id].value;
                    if bv.shape() != [cout] {
                        return Err(Error::shape(
                            "conv1d",
                            format!("bias shape {:?}, want [{}]", bv.shape(), cout),
                        ));
                    }
                    Some(bv.data().to_vec())
                }
                None => None,
            };
            let xd = x.data();
            let wd = wt.data();
            let mut data = vec![0.0; cout * l];
            for co in 0..cout {
                let orow = &mut data[co * l..(co + 1) * l];
                if let Some(b) = &bd {
                    orow.iter_mut().for_each(|v| *v = b[co]);
                }
                for ci in 0..cin {
                    let xrow = &xd[ci * l..(ci + 1) * l];
                    for kk in 0..k {
                        let wv = wd[(co * cin + ci) * k + kk];
                        if wv == 0.0 {
                            continue;
                        }
                        let back = (k - 1 - kk) * dilation;
                        for t in back..l {
                            orow[t] += wv * xrow[t - back];
                        }
                    }
                }
            }
            Tensor::new(vec![cout, l], data)?
        };
        self.tape.push_checked(
            "conv1d",
            out,
            Op::Conv1d { x: self.id, w: w.id, bias: bias.map(|b| b.id), dilation },
        )
    }

    /// 2-D convolution: x [C_in, H, W] * w [C_out, C_in, KH, KW] with
    /// zero padding `pad` and stride `stride` -> [C_out, H', W'].
    pub fn conv2d(
        self,
        w: Var<'t>,
        bias: Option<Var<'t>>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var<'t>> {
        self.same_tape(w, "conv2d")?;
        if let Some(b) = bias {
            self.same_tape(b, "conv2d")?;
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("conv2d: stride must be >= 1"));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let wt = &nodes[w.id].value;
            let (cin, h, wd_) = dims3(x, "conv2d input")?;
            let (cout, cin2, kh, kw) = dims4(wt, "conv2d kernel")?;
            if cin != cin2 {
                return Err(Error::shape(
                    "conv2d",
                    format!("input channels {} vs kernel {:?}", cin, wt.shape()),
                ));
            }
            let (ph, pw) = pad;
            let (sh, sw) = stride;
            if h + 2 * ph < kh || wd_ + 2 * pw < kw {
                return Err(Error::shape(
                    "conv2d",
                    format!("input {}x{} too small for kernel {}x{} pad {:?}", h, wd_, kh, kw, pad),
                ));
            }
            let hout = (h + 2 * ph - kh) / sh + 1;
            let wout = (wd_ + 2 * pw - kw) / sw + 1;
            let bd = match bias {
                Some(b) => {
                    let bv = &nodes[b.id].value;
                    if bv.shape() != [cout] {
                        return Err(Error::shape(
                            "conv2d",
                            format!("bias shape {:?}, want [{}]", bv.shape(), cout),
                        ));
                    }
                    Some(bv.data().to_vec())
                }
                None => None,
            };
            let xd = x.data();
            let wdd = wt.data();
            let mut data = vec![0.0; cout * hout * wout];
            for co in 0..cout {
                let obase = co * hout * wout;
                if let Some(b) = &bd {
                    data[obase..obase + hout * wout].iter_mut().for_each(|v| *v = b[co]);
                }
                for ci in 0..cin {
                    let xbase = ci * h * wd_;
                    for kh_i in 0..kh {
                        for kw_i in 0..kw {
                            let wv = wdd[((co * cin + ci) * kh + kh_i) * kw + kw_i];
                            if wv == 0.0 {
                                continue;
                            }
                            for oh in 0..hout {
                                let ih = (oh * sh + kh_i) as isize - ph as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let xrow = xbase + ih as usize * wd_;
                                let orow = obase + oh * wout;
                                for ow in 0..wout {
                                    let iw = (ow * sw + kw_i) as isize - pw as isize;
                                    if iw < 0 || iw >= wd_ as isize {
                                        continue;
                                    }
                                    data[orow + ow] += wv * xd[xrow + iw as usize];
                                }
                            }
                        }
                    }
                }
            }
            Tensor::new(vec![cout, hout, wout], data)?
        };
        self.tape.push_checked(
            "conv2d",
            out,
            Op::Conv2d { x: self.id, w: w.id, bias: bias.map(|b| b.id), stride, pad },
        )
    }

    /// x [C, L] + b [C] broadcast along the time axis.
    pub fn add_channel_bias(self, b: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(b, "add_channel_bias")?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let bv = &nodes[b.id].value;
            let (c, l) = dims2(x, "add_channel_bias input")?;
            if bv.shape() != [c] {
                return Err(Error::shape(
                    "add_channel_bias",
                    format!("bias {:?} vs channels {}", bv.shape(), c),
                ));
            }
            let mut data = x.data().to_vec();
            for ch in 0..c {
                let bvv = bv.data()[ch];
                data[ch * l..(ch + 1) * l].iter_mut().for_each(|v| *v += bvv);
            }
            Tensor::new(vec![c, l], data)?
        };
        self.tape.push_checked("add_channel_bias", out, Op::AddChannelBias { x: self.id, b: b.id })
    }

    /// Rows `start..start+rows` along axis 0.
    pub fn slice_rows(self, start: usize, rows: usize) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let shape = a.shape();
            if shape.is_empty() {
                return Err(Error::shape("slice_rows", "scalar input".to_string()));
            }
            let d0 = shape[0];
            if start + rows > d0 {
                return Err(Error::shape(
                    "slice_rows",
                    format!("rows {}..{} out of {:?}", start, start + rows, shape),
                ));
            }
            let stride: usize = shape[1..].iter().product();
            let mut new_shape = shape.to_vec();
            new_shape[0] = rows;
            let data = a.data()[start * stride..(start + rows) * stride].to_vec();
            Tensor::new(new_shape, data)?
        };
        self.tape.push_checked("slice_rows", out, Op::SliceRows { a: self.id, start })
    }

    /// Concatenation along axis 0; trailing dimensions must match.
    pub fn concat_rows(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs, "concat_rows")?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            if a.shape().is_empty() || b.shape().is_empty() || a.shape()[1..] != b.shape()[1..] {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let mut new_shape = a.shape().to_vec();
            new_shape[0] += b.shape()[0];
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::new(new_shape, data)?
        };
        self.tape.push_checked("concat_rows", out, Op::ConcatRows(self.id, rhs.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            a.clone().reshaped(shape.to_vec())?
        };
        self.tape.push_checked("reshape", out, Op::Reshape(self.id))
    }

    pub fn transpose2d(self) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let (r, c) = dims2(a, "transpose2d")?;
            let ad = a.data();
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = ad[i * c + j];
                }
            }
            Tensor::new(vec![c, r], data)?
        };
        self.tape.push_checked("transpose2d", out, Op::Transpose2d(self.id))
    }

    /// [2, bins] -> [2, frames, bins].
    pub fn broadcast_frames(self, frames: usize) -> Result<Var<'t>> {
        if frames == 0 {
            return Err(Error::invalid("broadcast_frames: frames must be >= 1"));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let shape = a.shape();
            if shape.len() != 2 || shape[0] != 2 {
                return Err(Error::shape("broadcast_frames", format!("want [2, bins], got {:?}", shape)));
            }
            let bins = shape[1];
            let ad = a.data();
            let mut data = vec![0.0; 2 * frames * bins];
            for p in 0..2 {
                for f in 0..frames {
                    data[(p * frames + f) * bins..(p * frames + f + 1) * bins]
                        .copy_from_slice(&ad[p * bins..(p + 1) * bins]);
                }
            }
            Tensor::new(vec![2, frames, bins], data)?
        };
        self.tape.push_checked("broadcast_frames", out, Op::BroadcastFrames { a: self.id })
    }

    /// Elementwise complex product of [2, ...] re/im pairs.
    pub fn complex_mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs, "complex_mul")?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            if a.shape() != b.shape() || a.shape().first() != Some(&2) {
                return Err(Error::shape(
                    "complex_mul",
                    format!("want matching [2, ...], got {:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let half = a.len() / 2;
            let (ar, ai) = a.data().split_at(half);
            let (br, bi) = b.data().split_at(half);
            let mut data = vec![0.0; a.len()];
            {
                let (or, oi) = data.split_at_mut(half);
                for i in 0..half {
                    or[i] = ar[i] * br[i] - ai[i] * bi[i];
                    oi[i] = ar[i] * bi[i] + ai[i] * br[i];
                }
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.tape.push_checked("complex_mul", out, Op::ComplexMul(self.id, rhs.id))
    }

    /// Magnitude compression comp(Z) = |Z|^c * Z/|Z| on a [2, ...] pair,
    /// with comp(0) = 0. Below a tiny magnitude floor the scaling factor is
    /// frozen so gradients stay finite.
    pub fn compressed_complex(self, exponent: f64) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            if a.shape().first() != Some(&2) {
                return Err(Error::shape("compressed_complex", format!("want [2, ...], got {:?}", a.shape())));
            }
            let half = a.len() / 2;
            let (re, im) = a.data().split_at(half);
            let mut data = vec![0.0; a.len()];
            {
                let (or, oi) = data.split_at_mut(half);
                for i in 0..half {
                    let f = comp_factor(re[i], im[i], exponent);
                    or[i] = f * re[i];
                    oi[i] = f * im[i];
                }
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.tape.push_checked("compressed_complex", out, Op::CompressedComplex { a: self.id, exponent })
    }

    /// Windowed analysis framing: 1-D signal -> [n_frames, window_len].
    /// The signal is implicitly zero padded by `pad_left` on the left and as
    /// needed on the right; frame f covers padded samples [f*hop, f*hop+W).
    pub fn frame_signal(
        self,
        window: Arc<Vec<f64>>,
        hop: usize,
        pad_left: usize,
        n_frames: usize,
    ) -> Result<Var<'t>> {
        if hop == 0 || n_frames == 0 || window.is_empty() {
            return Err(Error::invalid("frame_signal: hop, n_frames, window must be non-empty"));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.shape().len() != 1 {
                return Err(Error::shape("frame_signal", format!("want 1-D, got {:?}", x.shape())));
            }
            let l = x.len();
            let w = window.len();
            let xd = x.data();
            let mut data = vec![0.0; n_frames * w];
            for f in 0..n_frames {
                let base = f * hop;
                let row = &mut data[f * w..(f + 1) * w];
                for (j, rv) in row.iter_mut().enumerate() {
                    let t = base + j;
                    if t >= pad_left && t - pad_left < l {
                        *rv = window[j] * xd[t - pad_left];
                    }
                }
            }
            Tensor::new(vec![n_frames, w], data)?
        };
        self.tape.push_checked(
            "frame_signal",
            out,
            Op::Frame { x: self.id, window, hop, pad_left },
        )
    }

    /// Per-row real DFT with zero padding to `fft_len`; keeps bins
    /// 0..=fft_len/2. Output shape [2, n_frames, fft_len/2 + 1].
    pub fn rdft(self, fft_len: usize) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let fr = &nodes[self.id].value;
            let (n_frames, w) = dims2(fr, "rdft input")?;
            if fft_len < w || fft_len == 0 {
                return Err(Error::shape("rdft", format!("fft_len {} < frame len {}", fft_len, w)));
            }
            let bins = fft_len / 2 + 1;
            let fd = fr.data();
            let mut data = vec![0.0; 2 * n_frames * bins];
            let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
            for f in 0..n_frames {
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = if n < w { Complex::new(fd[f * w + n], 0.0) } else { Complex::new(0.0, 0.0) };
                }
                fft::forward(&mut buf);
                for k in 0..bins {
                    data[f * bins + k] = buf[k].re;
                    data[(n_frames + f) * bins + k] = buf[k].im;
                }
            }
            Tensor::new(vec![2, n_frames, bins], data)?
        };
        self.tape.push_checked("rdft", out, Op::Rdft { frames: self.id, fft_len })
    }

    /// Per-row inverse DFT of a onesided spectrum, Hermitian-extended.
    /// The imaginary parts of bins 0 and fft_len/2 are ignored (and get zero
    /// gradients). Output shape [n_frames, fft_len].
    pub fn irdft(self, fft_len: usize) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let sp = &nodes[self.id].value;
            let (two, n_frames, bins) = dims3(sp, "irdft input")?;
            if two != 2 || fft_len / 2 + 1 != bins || fft_len % 2 != 0 {
                return Err(Error::shape(
                    "irdft",
                    format!("spectrum {:?} does not match even fft_len {}", sp.shape(), fft_len),
                ));
            }
            let sd = sp.data();
            let mut data = vec![0.0; n_frames * fft_len];
            let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
            let half = fft_len / 2;
            for f in 0..n_frames {
                let re = &sd[f * bins..(f + 1) * bins];
                let im = &sd[(n_frames + f) * bins..(n_frames + f + 1) * bins];
                buf[0] = Complex::new(re[0], 0.0);
                buf[half] = Complex::new(re[half], 0.0);
                for k in 1..half {
                    buf[k] = Complex::new(re[k], im[k]);
                    buf[fft_len - k] = Complex::new(re[k], -im[k]);
                }
                fft::inverse(&mut buf);
                let inv_n = 1.0 / fft_len as f64;
                for n in 0..fft_len {
                    data[f * fft_len + n] = buf[n].re * inv_n;
                }
            }
            Tensor::new(vec![n_frames, fft_len], data)?
        };
        self.tape.push_checked("irdft", out, Op::Irdft { spec: self.id, fft_len })
    }

    /// Overlap-add of [n_frames, frame_len] rows at the given hop, dividing
    /// by the analysis-window envelope (`inv_env` indexed by padded position)
    /// and trimming `pad_left`/`target_len` back out.
    pub fn overlap_add(
        self,
        hop: usize,
        pad_left: usize,
        target_len: usize,
        inv_env: Arc<Vec<f64>>,
    ) -> Result<Var<'t>> {
        if hop == 0 || target_len == 0 {
            return Err(Error::invalid("overlap_add: hop and target_len must be >= 1"));
        }
        let out = {
            let nodes = self.tape.nodes.borrow();
            let fr = &nodes[self.id].value;
            let (n_frames, flen) = dims2(fr, "overlap_add input")?;
            let padded = (n_frames - 1) * hop + flen;
            if inv_env.len() != padded {
                return Err(Error::shape(
                    "overlap_add",
                    format!("envelope len {} vs padded len {}", inv_env.len(), padded),
                ));
            }
            if pad_left + target_len > padded {
                return Err(Error::shape(
                    "overlap_add",
                    format!("target {}+{} exceeds padded len {}", pad_left, target_len, padded),
                ));
            }
            let fd = fr.data();
            let mut acc = vec![0.0; padded];
            for f in 0..n_frames {
                let row = &fd[f * flen..(f + 1) * flen];
                let base = f * hop;
                for (j, &v) in row.iter().enumerate() {
                    acc[base + j] += v;
                }
            }
            let data: Vec<f64> = (0..target_len)
                .map(|t| acc[pad_left + t] * inv_env[pad_left + t])
                .collect();
            Tensor::from_vec(data)
        };
        self.tape.push_checked(
            "overlap_add",
            out,
            Op::OverlapAdd { frames: self.id, hop, pad_left, target_len, inv_env },
        )
    }

    /// Catmull-Rom spline with uniform knots on [-1, 1], phantom endpoints
    /// mirrored (p_{-1} = 2p_0 - p_1), and linear extrapolation outside.
    /// `self` holds the knot values; `x` is the sample tensor.
    pub fn catmull_rom(self, x: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(x, "catmull_rom")?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let p = &nodes[self.id].value;
            let xv = &nodes[x.id].value;
            if p.shape().len() != 1 || p.len() < 2 {
                return Err(Error::shape("catmull_rom", format!("knots must be 1-D len>=2, got {:?}", p.shape())));
            }
            let pd = p.data();
            let data = xv.data().iter().map(|&s| spline_eval(pd, s).0).collect();
            Tensor::new(xv.shape().to_vec(), data)?
        };
        self.tape.push_checked("catmull_rom", out, Op::CatmullRom { points: self.id, x: x.id })
    }

    /// Real circulant filter: IFFT(FFT(x) .* gains). `gains` must be the
    /// full-length DFT gain vector, real and even-symmetric so the output
    /// stays real. Self-adjoint, which keeps the backward pass one FFT pair.
    pub fn circulant_filter(self, gains: Arc<Vec<f64>>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.shape().len() != 1 {
                return Err(Error::shape("circulant_filter", format!("want 1-D, got {:?}", x.shape())));
            }
            if gains.len() != x.len() {
                return Err(Error::shape(
                    "circulant_filter",
                    format!("gains len {} vs signal len {}", gains.len(), x.len()),
                ));
            }
            Tensor::from_vec(circulant_apply(x.data(), &gains))
        };
        self.tape.push_checked("circulant_filter", out, Op::CirculantFilter { x: self.id, gains })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable for large |x|.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Scaling factor f with comp(re, im) = f * (re, im); f = |Z|^(c-1) above
/// the floor, frozen at the floor value below it, 0 at zero magnitude.
const COMP_MAG_FLOOR: f64 = 1e-12;

fn comp_factor(re: f64, im: f64, c: f64) -> f64 {
    let m = (re * re + im * im).sqrt();
    if m == 0.0 {
        0.0
    } else if m < COMP_MAG_FLOOR {
        COMP_MAG_FLOOR.powf(c - 1.0)
    } else {
        m.powf(c - 1.0)
    }
}

pub(crate) fn circulant_apply(x: &[f64], gains: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft::forward(&mut buf);
    for (b, &g) in buf.iter_mut().zip(gains.iter()) {
        *b *= g;
    }
    fft::inverse(&mut buf);
    let inv_n = 1.0 / n as f64;
    buf.iter().map(|c| c.re * inv_n).collect()
}

/// Evaluates the spline and its slope at s. Returns (value, dvalue/ds,
/// knot index contributions) via the weights closure in backward.
fn spline_eval(p: &[f64], s: f64) -> (f64, f64) {
    let np = p.len();
    let h = 2.0 / (np - 1) as f64;
    if s < -1.0 {
        let slope = (p[1] - p[0]) / h;
        return (p[0] + slope * (s + 1.0), slope);
    }
    if s > 1.0 {
        let slope = (p[np - 1] - p[np - 2]) / h;
        return (p[np - 1] + slope * (s - 1.0), slope);
    }
    let (i, t) = spline_segment(np, s);
    let q0 = if i == 0 { 2.0 * p[0] - p[1] } else { p[i - 1] };
    let q1 = p[i];
    let q2 = p[i + 1];
    let q3 = if i + 2 > np - 1 { 2.0 * p[np - 1] - p[np - 2] } else { p[i + 2] };
    let (b0, b1, b2, b3) = spline_basis(t);
    let (d0, d1, d2, d3) = spline_basis_deriv(t);
    let val = b0 * q0 + b1 * q1 + b2 * q2 + b3 * q3;
    let dt = d0 * q0 + d1 * q1 + d2 * q2 + d3 * q3;
    (val, dt / h)
}

fn spline_segment(np: usize, s: f64) -> (usize, f64) {
    let h = 2.0 / (np - 1) as f64;
    let u = (s + 1.0) / h;
    let mut i = u.floor() as usize;
    if i > np - 2 {
        i = np - 2;
    }
    (i, u - i as f64)
}

fn spline_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    )
}

fn spline_basis_deriv(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    (
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    )
}

fn dims2(t: &Tensor, what: &'static str) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(Error::shape(what, format!("want 2-D, got {:?}", s)));
    }
    Ok((s[0], s[1]))
}

fn dims3(t: &Tensor, what: &'static str) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::shape(what, format!("want 3-D, got {:?}", s)));
    }
    Ok((s[0], s[1], s[2]))
}

fn dims4(t: &Tensor, what: &'static str) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::shape(what, format!("want 4-D, got {:?}", s)));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

fn add_into(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

#[allow(clippy::too_many_lines)]
fn backward_op(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let val = |i: usize| nodes[i].value.data();
    let len = |i: usize| nodes[i].value.len();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_into(grads, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
            add_into(grads, *b, len(*b), |d| d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
        }
        Op::Sub(a, b) => {
            add_into(grads, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
            add_into(grads, *b, len(*b), |d| d.iter_mut().zip(g).for_each(|(d, &gv)| *d -= gv));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * bv[i];
                }
            });
            add_into(grads, *b, len(*b), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * av[i];
                }
            });
        }
        Op::MulScalar { a, s } => {
            let k = val(*s)[0];
            let av = val(*a);
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * k;
                }
            });
            let dot: f64 = g.iter().zip(av).map(|(&gv, &x)| gv * x).sum();
            add_into(grads, *s, 1, |d| d[0] += dot);
        }
        Op::Scale(a, c) => {
            let c = *c;
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * c;
                }
            });
        }
        Op::AddConst(a) => {
            add_into(grads, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
        }
        Op::Matmul(a, b) => {
            let av = val(*a);
            let bv = val(*b);
            let (m, k) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            let n = nodes[*b].value.shape()[1];
            add_into(grads, *a, m * k, |d| {
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &bv[p * n..(p + 1) * n];
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        d[i * k + p] += acc;
                    }
                }
            });
            add_into(grads, *b, k * n, |d| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let avv = av[i * k + p];
                        if avv == 0.0 {
                            continue;
                        }
                        let drow = &mut d[p * n..(p + 1) * n];
                        for j in 0..n {
                            drow[j] += avv * grow[j];
                        }
                    }
                }
            });
        }
        Op::Conv1d { x, w, bias, dilation } => {
            let xd = val(*x);
            let wd = val(*w);
            let (cin, l) = (nodes[*x].value.shape()[0], nodes[*x].value.shape()[1]);
            let (cout, k) = (nodes[*w].value.shape()[0], nodes[*w].value.shape()[2]);
            add_into(grads, *x, cin * l, |d| {
                for co in 0..cout {
                    let grow = &g[co * l..(co + 1) * l];
                    for ci in 0..cin {
                        let drow = &mut d[ci * l..(ci + 1) * l];
                        for kk in 0..k {
                            let wv = wd[(co * cin + ci) * k + kk];
                            if wv == 0.0 {
                                continue;
                            }
                            let back = (k - 1 - kk) * dilation;
                            for t in back..l {
                                drow[t - back] += wv * grow[t];
                            }
                        }
                    }
                }
            });
            add_into(grads, *w, cout * cin * k, |d| {
                for co in 0..cout {
                    let grow = &g[co * l..(co + 1) * l];
                    for ci in 0..cin {
                        let xrow = &xd[ci * l..(ci + 1) * l];
                        for kk in 0..k {
                            let back = (k - 1 - kk) * dilation;
                            let mut acc = 0.0;
                            for t in back..l {
                                acc += grow[t] * xrow[t - back];
                            }
                            d[(co * cin + ci) * k + kk] += acc;
                        }
                    }
                }
            });
            if let Some(b) = bias {
                add_into(grads, *b, cout, |d| {
                    for co in 0..cout {
                        d[co] += g[co * l..(co + 1) * l].iter().sum::<f64>();
                    }
                });
            }
        }
        Op::Conv2d { x, w, bias, stride, pad } => {
            let xd = val(*x);
            let wd = val(*w);
            let xs = nodes[*x].value.shape();
            let ws = nodes[*w].value.shape();
            let (cin, h, wdim) = (xs[0], xs[1], xs[2]);
            let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
            let os = nodes[id].value.shape();
            let (hout, wout) = (os[1], os[2]);
            let (sh, sw) = *stride;
            let (ph, pw) = *pad;
            add_into(grads, *x, cin * h * wdim, |d| {
                for co in 0..cout {
                    let gbase = co * hout * wout;
                    for ci in 0..cin {
                        let dbase = ci * h * wdim;
                        for kh_i in 0..kh {
                            for kw_i in 0..kw {
                                let wv = wd[((co * cin + ci) * kh + kh_i) * kw + kw_i];
                                if wv == 0.0 {
                                    continue;
                                }
                                for oh in 0..hout {
                                    let ih = (oh * sh + kh_i) as isize - ph as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let drow = dbase + ih as usize * wdim;
                                    let grow = gbase + oh * wout;
                                    for ow in 0..wout {
                                        let iw = (ow * sw + kw_i) as isize - pw as isize;
                                        if iw < 0 || iw >= wdim as isize {
                                            continue;
                                        }
                                        d[drow + iw as usize] += wv * g[grow + ow];
                                    }
                                }
                            }
                        }
                    }
                }
            });
            add_into(grads, *w, cout * cin * kh * kw, |d| {
                for co in 0..cout {
                    let gbase = co * hout * wout;
                    for ci in 0..cin {
                        let xbase = ci * h * wdim;
                        for kh_i in 0..kh {
                            for kw_i in 0..kw {
                                let mut acc = 0.0;
                                for oh in 0..hout {
                                    let ih = (oh * sh + kh_i) as isize - ph as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let xrow = xbase + ih as usize * wdim;
                                    let grow = gbase + oh * wout;
                                    for ow in 0..wout {
                                        let iw = (ow * sw + kw_i) as isize - pw as isize;
                                        if iw < 0 || iw >= wdim as isize {
                                            continue;
                                        }
                                        acc += xd[xrow + iw as usize] * g[grow + ow];
                                    }
                                }
                                d[((co * cin + ci) * kh + kh_i) * kw + kw_i] += acc;
                            }
                        }
                    }
                }
            });
            if let Some(b) = bias {
                add_into(grads, *b, cout, |d| {
                    for co in 0..cout {
                        d[co] += g[co * hout * wout..(co + 1) * hout * wout].iter().sum::<f64>();
                    }
                });
            }
        }
        Op::AddChannelBias { x, b } => {
            let (c, l) = (nodes[*x].value.shape()[0], nodes[*x].value.shape()[1]);
            add_into(grads, *x, c * l, |d| d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
            add_into(grads, *b, c, |d| {
                for ch in 0..c {
                    d[ch] += g[ch * l..(ch + 1) * l].iter().sum::<f64>();
                }
            });
        }
        Op::Tanh(a) => {
            let y = nodes[id].value.data();
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = nodes[id].value.data();
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            });
        }
        Op::LeakyRelu(a, slope) => {
            let x = val(*a);
            let slope = *slope;
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * if x[i] >= 0.0 { 1.0 } else { slope };
                }
            });
        }
        Op::Softplus(a) => {
            let x = val(*a);
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * sigmoid(x[i]);
                }
            });
        }
        Op::Sin(a) => {
            let x = val(*a);
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * x[i].cos();
                }
            });
        }
        Op::Cos(a) => {
            let x = val(*a);
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] -= g[i] * x[i].sin();
                }
            });
        }
        Op::Exp(a) => {
            let y = nodes[id].value.data();
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i];
                }
            });
        }
        Op::Log(a) => {
            let x = val(*a);
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] / x[i];
                }
            });
        }
        Op::Sqrt(a) => {
            let y = nodes[id].value.data();
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * 0.5 / y[i];
                }
            });
        }
        Op::Abs(a) => {
            let x = val(*a);
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    // Subgradient 0 at x == 0.
                    d[i] += g[i] * if x[i] > 0.0 { 1.0 } else if x[i] < 0.0 { -1.0 } else { 0.0 };
                }
            });
        }
        Op::Pow(a, c) => {
            let x = val(*a);
            let c = *c;
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * c * x[i].powf(c - 1.0);
                }
            });
        }
        Op::ClampMin(a, c) => {
            let x = val(*a);
            let c = *c;
            add_into(grads, *a, len(*a), |d| {
                for i in 0..d.len() {
                    if x[i] > c {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::Sum(a) => {
            let gv = g[0];
            add_into(grads, *a, len(*a), |d| d.iter_mut().for_each(|d| *d += gv));
        }
        Op::Mean(a) => {
            let gv = g[0] / len(*a) as f64;
            add_into(grads, *a, len(*a), |d| d.iter_mut().for_each(|d| *d += gv));
        }
        Op::MaxAbs(a) => {
            let x = val(*a);
            let mut best = 0usize;
            let mut bm = -1.0;
            for (i, &v) in x.iter().enumerate() {
                if v.abs() > bm {
                    bm = v.abs();
                    best = i;
                }
            }
            let sign = if x[best] > 0.0 { 1.0 } else if x[best] < 0.0 { -1.0 } else { 0.0 };
            let gv = g[0] * sign;
            add_into(grads, *a, len(*a), |d| d[best] += gv);
        }
        Op::SliceRows { a, start } => {
            let stride: usize = nodes[*a].value.shape()[1..].iter().product();
            let off = start * stride;
            add_into(grads, *a, len(*a), |d| {
                for (i, &gv) in g.iter().enumerate() {
                    d[off + i] += gv;
                }
            });
        }
        Op::ConcatRows(a, b) => {
            let la = len(*a);
            add_into(grads, *a, la, |d| d.iter_mut().zip(&g[..la]).for_each(|(d, &gv)| *d += gv));
            add_into(grads, *b, len(*b), |d| {
                d.iter_mut().zip(&g[la..]).for_each(|(d, &gv)| *d += gv)
            });
        }
        Op::Reshape(a) => {
            add_into(grads, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv));
        }
        Op::Transpose2d(a) => {
            let (r, c) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            add_into(grads, *a, r * c, |d| {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::BroadcastFrames { a } => {
            let bins = nodes[*a].value.shape()[1];
            let frames = nodes[id].value.shape()[1];
            add_into(grads, *a, 2 * bins, |d| {
                for p in 0..2 {
                    for f in 0..frames {
                        let row = &g[(p * frames + f) * bins..(p * frames + f + 1) * bins];
                        let drow = &mut d[p * bins..(p + 1) * bins];
                        for k in 0..bins {
                            drow[k] += row[k];
                        }
                    }
                }
            });
        }
        Op::ComplexMul(a, b) => {
            let av = val(*a);
            let bv = val(*b);
            let half = av.len() / 2;
            let (ar, ai) = av.split_at(half);
            let (br, bi) = bv.split_at(half);
            let (gr, gi) = g.split_at(half);
            add_into(grads, *a, 2 * half, |d| {
                let (dr, di) = d.split_at_mut(half);
                for i in 0..half {
                    dr[i] += gr[i] * br[i] + gi[i] * bi[i];
                    di[i] += -gr[i] * bi[i] + gi[i] * br[i];
                }
            });
            add_into(grads, *b, 2 * half, |d| {
                let (dr, di) = d.split_at_mut(half);
                for i in 0..half {
                    dr[i] += gr[i] * ar[i] + gi[i] * ai[i];
                    di[i] += -gr[i] * ai[i] + gi[i] * ar[i];
                }
            });
        }
        Op::CompressedComplex { a, exponent } => {
            let av = val(*a);
            let c = *exponent;
            let half = av.len() / 2;
            let (re, im) = av.split_at(half);
            let (gr, gi) = g.split_at(half);
            add_into(grads, *a, 2 * half, |d| {
                let (dr, di) = d.split_at_mut(half);
                for i in 0..half {
                    let s = re[i] * re[i] + im[i] * im[i];
                    let m = s.sqrt();
                    if m == 0.0 {
                        continue;
                    }
                    let f = comp_factor(re[i], im[i], c);
                    if m < COMP_MAG_FLOOR {
                        // Frozen scaling below the floor: Jacobian is f * I.
                        dr[i] += gr[i] * f;
                        di[i] += gi[i] * f;
                    } else {
                        let fp = (c - 1.0) * m.powf(c - 3.0);
                        dr[i] += gr[i] * (f + fp * re[i] * re[i]) + gi[i] * fp * re[i] * im[i];
                        di[i] += gr[i] * fp * re[i] * im[i] + gi[i] * (f + fp * im[i] * im[i]);
                    }
                }
            });
        }
        Op::Frame { x, window, hop, pad_left } => {
            let l = len(*x);
            let w = window.len();
            let n_frames = nodes[id].value.shape()[0];
            add_into(grads, *x, l, |d| {
                for f in 0..n_frames {
                    let base = f * hop;
                    let grow = &g[f * w..(f + 1) * w];
                    for j in 0..w {
                        let t = base + j;
                        if t >= *pad_left && t - pad_left < l {
                            d[t - pad_left] += window[j] * grow[j];
                        }
                    }
                }
            });
        }
        Op::Rdft { frames, fft_len } => {
            let (n_frames, w) = (nodes[*frames].value.shape()[0], nodes[*frames].value.shape()[1]);
            let bins = fft_len / 2 + 1;
            let mut buf = vec![Complex::new(0.0, 0.0); *fft_len];
            add_into(grads, *frames, n_frames * w, |d| {
                for f in 0..n_frames {
                    for b in buf.iter_mut() {
                        *b = Complex::new(0.0, 0.0);
                    }
                    for k in 0..bins {
                        buf[k] = Complex::new(g[f * bins + k], g[(n_frames + f) * bins + k]);
                    }
                    fft::inverse(&mut buf);
                    let drow = &mut d[f * w..(f + 1) * w];
                    for j in 0..w {
                        drow[j] += buf[j].re;
                    }
                }
            });
        }
        Op::Irdft { spec, fft_len } => {
            let n_frames = nodes[*spec].value.shape()[1];
            let bins = fft_len / 2 + 1;
            let half = fft_len / 2;
            let inv_n = 1.0 / *fft_len as f64;
            let mut buf = vec![Complex::new(0.0, 0.0); *fft_len];
            add_into(grads, *spec, 2 * n_frames * bins, |d| {
                for f in 0..n_frames {
                    for (n, b) in buf.iter_mut().enumerate() {
                        *b = Complex::new(g[f * fft_len + n], 0.0);
                    }
                    fft::forward(&mut buf);
                    d[f * bins] += buf[0].re * inv_n;
                    d[f * bins + half] += buf[half].re * inv_n;
                    for k in 1..half {
                        d[f * bins + k] += 2.0 * buf[k].re * inv_n;
                        d[(n_frames + f) * bins + k] += 2.0 * buf[k].im * inv_n;
                    }
                }
            });
        }
        Op::OverlapAdd { frames, hop, pad_left, target_len, inv_env } => {
            let (n_frames, flen) = (nodes[*frames].value.shape()[0], nodes[*frames].value.shape()[1]);
            add_into(grads, *frames, n_frames * flen, |d| {
                for f in 0..n_frames {
                    let base = f * hop;
                    let drow = &mut d[f * flen..(f + 1) * flen];
                    for j in 0..flen {
                        let tp = base + j;
                        if tp >= *pad_left && tp - pad_left < *target_len {
                            drow[j] += g[tp - pad_left] * inv_env[tp];
                        }
                    }
                }
            });
        }
        Op::CatmullRom { points, x } => {
            let pd = val(*points);
            let xd = val(*x);
            let np = pd.len();
            let h = 2.0 / (np - 1) as f64;
            add_into(grads, *x, xd.len(), |d| {
                for (i, &s) in xd.iter().enumerate() {
                    let (_, slope) = spline_eval(pd, s);
                    d[i] += g[i] * slope;
                }
            });
            add_into(grads, *points, np, |d| {
                for (i, &s) in xd.iter().enumerate() {
                    let gv = g[i];
                    if gv == 0.0 {
                        continue;
                    }
                    if s < -1.0 {
                        let u = (s + 1.0) / h;
                        d[0] += gv * (1.0 - u);
                        d[1] += gv * u;
                    } else if s > 1.0 {
                        let u = (s - 1.0) / h;
                        d[np - 1] += gv * (1.0 + u);
                        d[np - 2] -= gv * u;
                    } else {
                        let (seg, t) = spline_segment(np, s);
                        let (b0, b1, b2, b3) = spline_basis(t);
                        if seg == 0 {
                            d[0] += gv * 2.0 * b0;
                            d[1] -= gv * b0;
                        } else {
                            d[seg - 1] += gv * b0;
                        }
                        d[seg] += gv * b1;
                        d[seg + 1] += gv * b2;
                        if seg + 2 > np - 1 {
                            d[np - 1] += gv * 2.0 * b3;
                            d[np - 2] -= gv * b3;
                        } else {
                            d[seg + 2] += gv * b3;
                        }
                    }
                }
            });
        }
        Op::CirculantFilter { x, gains } => {
            // Real even-symmetric gains make the filter self-adjoint.
            let adj = circulant_apply(g, gains);
            add_into(grads, *x, len(*x), |d| {
                for i in 0..d.len() {
                    d[i] += adj[i];
                }
            });
        }
    }
    Ok(())
}
