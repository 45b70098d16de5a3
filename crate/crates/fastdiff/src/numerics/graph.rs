//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A `Graph` is a tape: every operation appends a node holding its result and
//! a record of how to push gradients back to its parents. Creation order is a
//! topological order, so `backward` is a single reverse sweep. Graphs are
//! rebuilt per training step and dropped afterwards.

use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::scalar::Scalar;
use super::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Silu,
    /// x[N,C,H,W] + b[C]
    AddChannelBias,
    /// x[N,C] + b[C]
    AddRowBias,
    /// x[N,C,H,W] + b[N,C]
    AddSampleChannelBias,
    Matmul,
    Conv2d(ConvGeom),
    AvgPool2x,
    UpsampleNearest2x,
    /// Channel concatenation of two NCHW tensors; payload = channels of the first.
    ConcatChannels(usize),
    MseLoss,
    SumAll,
}

struct Node {
    op: Op,
    parents: Vec<NodeId>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node>,
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id]
    }

    /// Gradient accumulated at `id`, available after `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id].as_ref()
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            op,
            parents,
            needs_grad,
        });
        self.values.push(value);
        self.grads.push(None);
        self.nodes.len() - 1
    }

    /// Insert an input node. Gradients flow into it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        let id = self.push(Op::Leaf, Vec::new(), value);
        self.nodes[id].needs_grad = requires_grad;
        id
    }

    fn binary_shapes(&self, a: NodeId, b: NodeId, op: &str) -> Result<bool> {
        let (sa, sb) = (self.values[a].shape(), self.values[b].shape());
        if sa == sb {
            Ok(false)
        } else if self.values[b].numel() == 1 {
            Ok(true) // scalar broadcast on the right
        } else {
            Err(Error::Shape(format!(
                "{op}: incompatible shapes {sa:?} and {sb:?}"
            )))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.binary_shapes(a, b, "add")?;
        let value = if broadcast {
            let s = self.values[b].data()[0];
            self.values[a].map(|x| x + s)
        } else {
            self.values[a].zip_map(&self.values[b], |x, y| x + y)?
        };
        Ok(self.push(Op::Add, vec![a, b], value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.binary_shapes(a, b, "sub")?;
        let value = if broadcast {
            let s = self.values[b].data()[0];
            self.values[a].map(|x| x - s)
        } else {
            self.values[a].zip_map(&self.values[b], |x, y| x - y)?
        };
        Ok(self.push(Op::Sub, vec![a, b], value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.binary_shapes(a, b, "mul")?;
        let value = if broadcast {
            let s = self.values[b].data()[0];
            self.values[a].map(|x| x * s)
        } else {
            self.values[a].zip_map(&self.values[b], |x, y| x * y)?
        };
        Ok(self.push(Op::Mul, vec![a, b], value))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let f = T::of_f64(factor);
        let value = self.values[a].map(|x| x * f);
        self.push(Op::Scale(factor), vec![a], value)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let x = &self.values[a];
        let mut y = Tensor::zeros(x.shape());
        kernels::silu_forward(x.data(), y.data_mut());
        self.push(Op::Silu, vec![a], y)
    }

    /// x[N,C,H,W] + bias[C], broadcast over batch and space.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.values[x].shape().to_vec();
        let bs = self.values[bias].shape().to_vec();
        if xs.len() != 4 || bs != [xs[1]] {
            return Err(Error::Shape(format!(
                "add_channel_bias: x {xs:?} needs NCHW and bias {bs:?} must be [C]"
            )));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let mut out = self.values[x].clone();
        {
            let b = self.values[bias].clone();
            let data = out.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    let bv = b.data()[ci];
                    let plane = &mut data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    for v in plane.iter_mut() {
                        *v = *v + bv;
                    }
                }
            }
        }
        Ok(self.push(Op::AddChannelBias, vec![x, bias], out))
    }

    /// x[N,C] + bias[C], broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.values[x].shape().to_vec();
        let bs = self.values[bias].shape().to_vec();
        if xs.len() != 2 || bs != [xs[1]] {
            return Err(Error::Shape(format!(
                "add_row_bias: x {xs:?} needs [N,C] and bias {bs:?} must be [C]"
            )));
        }
        let (n, c) = (xs[0], xs[1]);
        let mut out = self.values[x].clone();
        {
            let b = self.values[bias].clone();
            let data = out.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    data[ni * c + ci] = data[ni * c + ci] + b.data()[ci];
                }
            }
        }
        Ok(self.push(Op::AddRowBias, vec![x, bias], out))
    }

    /// x[N,C,H,W] + bias[N,C], broadcast over space (per-sample channel bias).
    pub fn add_sample_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.values[x].shape().to_vec();
        let bs = self.values[bias].shape().to_vec();
        if xs.len() != 4 || bs != [xs[0], xs[1]] {
            return Err(Error::Shape(format!(
                "add_sample_channel_bias: x {xs:?} needs NCHW and bias {bs:?} must be [N,C]"
            )));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let mut out = self.values[x].clone();
        {
            let b = self.values[bias].clone();
            let data = out.data_mut();
            for ni in 0..n {
                for ci in 0..c {
                    let bv = b.data()[ni * c + ci];
                    let plane = &mut data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    for v in plane.iter_mut() {
                        *v = *v + bv;
                    }
                }
            }
        }
        Ok(self.push(Op::AddSampleChannelBias, vec![x, bias], out))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.values[a].shape().to_vec();
        let sb = self.values[b].shape().to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!(
                "matmul: incompatible shapes {sa:?} · {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul(
            self.values[a].data(),
            self.values[b].data(),
            m,
            k,
            n,
            out.data_mut(),
        );
        Ok(self.push(Op::Matmul, vec![a, b], out))
    }

    /// Cross-correlation of x[N,C,H,W] with w[F,C,kh,kw].
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.values[x].shape().to_vec();
        let ws = self.values[w].shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d: x {xs:?} and w {ws:?} must be rank 4"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::Shape(format!(
                "conv2d: input channels {} != kernel channels {}",
                xs[1], ws[1]
            )));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d: kernel extents must be odd, got {}x{}",
                ws[2], ws[3]
            )));
        }
        let h_out = ConvGeom::out_extent(xs[2], ws[2], stride, pad);
        let w_out = ConvGeom::out_extent(xs[3], ws[3], stride, pad);
        let (Some(h_out), Some(w_out)) = (h_out, w_out) else {
            return Err(Error::Shape(format!(
                "conv2d: non-integral output extent for input {}x{}, kernel {}x{}, stride {stride}, pad {pad}",
                xs[2], xs[3], ws[2], ws[3]
            )));
        };
        let geom = ConvGeom {
            channels_in: xs[1],
            channels_out: ws[0],
            h_in: xs[2],
            w_in: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            h_out,
            w_out,
        };
        let mut out = Tensor::zeros(&[xs[0], ws[0], h_out, w_out]);
        kernels::conv2d_forward(
            self.values[x].data(),
            self.values[w].data(),
            xs[0],
            &geom,
            out.data_mut(),
        );
        Ok(self.push(Op::Conv2d(geom), vec![x, w], out))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.values[x].shape().to_vec();
        if xs.len() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0 {
            return Err(Error::Shape(format!(
                "avg_pool2: needs NCHW with even spatial extents, got {xs:?}"
            )));
        }
        let mut out = Tensor::zeros(&[xs[0], xs[1], xs[2] / 2, xs[3] / 2]);
        kernels::avgpool2_forward(
            self.values[x].data(),
            xs[0] * xs[1],
            xs[2],
            xs[3],
            out.data_mut(),
        );
        Ok(self.push(Op::AvgPool2x, vec![x], out))
    }

    pub fn upsample_nearest2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.values[x].shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::Shape(format!(
                "upsample_nearest2: needs NCHW, got {xs:?}"
            )));
        }
        let mut out = Tensor::zeros(&[xs[0], xs[1], xs[2] * 2, xs[3] * 2]);
        kernels::upsample2_forward(
            self.values[x].data(),
            xs[0] * xs[1],
            xs[2],
            xs[3],
            out.data_mut(),
        );
        Ok(self.push(Op::UpsampleNearest2x, vec![x], out))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.values[a].shape().to_vec();
        let sb = self.values[b].shape().to_vec();
        if sa.len() != 4
            || sb.len() != 4
            || sa[0] != sb[0]
            || sa[2] != sb[2]
            || sa[3] != sb[3]
        {
            return Err(Error::Shape(format!(
                "concat_channels: spatially misaligned shapes {sa:?} and {sb:?}"
            )));
        }
        let (n, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let mut out = Tensor::zeros(&[n, ca + cb, sa[2], sa[3]]);
        {
            let dst = out.data_mut();
            let av = self.values[a].data();
            let bv = self.values[b].data();
            for ni in 0..n {
                let dst_n = &mut dst[ni * (ca + cb) * hw..(ni + 1) * (ca + cb) * hw];
                dst_n[..ca * hw].copy_from_slice(&av[ni * ca * hw..(ni + 1) * ca * hw]);
                dst_n[ca * hw..].copy_from_slice(&bv[ni * cb * hw..(ni + 1) * cb * hw]);
            }
        }
        Ok(self.push(Op::ConcatChannels(ca), vec![a, b], out))
    }

    /// Mean of squared differences, accumulated in f64, returned as a scalar node.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.values[pred].check_same_shape(&self.values[target])?;
        let mut acc = 0.0f64;
        for (&p, &t) in self.values[pred]
            .data()
            .iter()
            .zip(self.values[target].data())
        {
            let d = p.as_f64() - t.as_f64();
            acc += d * d;
        }
        let mean = acc / self.values[pred].numel() as f64;
        let value = Tensor::scalar(T::of_f64(mean));
        Ok(self.push(Op::MseLoss, vec![pred, target], value))
    }

    /// Sum of all elements as a scalar node (f64 accumulation).
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(T::of_f64(self.values[x].sum_f64()));
        self.push(Op::SumAll, vec![x], value)
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        match &mut grads[id] {
            Some(g) => {
                let gd = g.data_mut();
                for (gv, &dv) in gd.iter_mut().zip(delta.data()) {
                    *gv = *gv + dv;
                }
            }
            None => grads[id] = Some(delta),
        }
    }

    /// Reverse-topological gradient sweep from a scalar loss node.
    ///
    /// Gradients accumulate into every node with `needs_grad`; read them with
    /// [`Graph::grad`]. Non-finite gradients abort with the offending node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.values[loss].numel() != 1 {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.values[loss].shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss] = Some(Tensor::scalar(T::one()));

        let nodes = &self.nodes;
        let values = &self.values;
        let grads = &mut self.grads;

        for id in (0..nodes.len()).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].clone() else {
                continue;
            };
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient at node {id} ({:?})",
                    nodes[id].op
                )));
            }
            let parents = &nodes[id].parents;
            let needs = |p: NodeId| nodes[p].needs_grad;
            match &nodes[id].op {
                Op::Leaf => {}
                Op::Add => {
                    let (a, b) = (parents[0], parents[1]);
                    if needs(a) {
                        Self::accumulate(grads, a, g.clone());
                    }
                    if needs(b) {
                        let delta = if values[b].numel() == 1 && values[a].numel() != 1 {
                            Tensor::scalar(T::of_f64(g.sum_f64()))
                        } else {
                            g.clone()
                        };
                        Self::accumulate(grads, b, delta);
                    }
                }
                Op::Sub => {
                    let (a, b) = (parents[0], parents[1]);
                    if needs(a) {
                        Self::accumulate(grads, a, g.clone());
                    }
                    if needs(b) {
                        let delta = if values[b].numel() == 1 && values[a].numel() != 1 {
                            Tensor::scalar(T::of_f64(-g.sum_f64()))
                        } else {
                            g.map(|v| -v)
                        };
                        Self::accumulate(grads, b, delta);
                    }
                }
                Op::Mul => {
                    let (a, b) = (parents[0], parents[1]);
                    let broadcast = values[b].numel() == 1 && values[a].numel() != 1;
                    if needs(a) {
                        let delta = if broadcast {
                            let s = values[b].data()[0];
                            g.map(|v| v * s)
                        } else {
                            g.zip_map(&values[b], |gv, bv| gv * bv)?
                        };
                        Self::accumulate(grads, a, delta);
                    }
                    if needs(b) {
                        let delta = if broadcast {
                            let mut acc = 0.0f64;
                            for (&gv, &av) in g.data().iter().zip(values[a].data()) {
                                acc += gv.as_f64() * av.as_f64();
                            }
                            Tensor::scalar(T::of_f64(acc))
                        } else {
                            g.zip_map(&values[a], |gv, av| gv * av)?
                        };
                        Self::accumulate(grads, b, delta);
                    }
                }
                Op::Scale(factor) => {
                    let f = T::of_f64(*factor);
                    Self::accumulate(grads, parents[0], g.map(|v| v * f));
                }
                Op::Silu => {
                    let x = &values[parents[0]];
                    let mut dx = Tensor::zeros(x.shape());
                    kernels::silu_backward(x.data(), g.data(), dx.data_mut());
                    Self::accumulate(grads, parents[0], dx);
                }
                Op::AddChannelBias => {
                    let (x, b) = (parents[0], parents[1]);
                    if needs(x) {
                        Self::accumulate(grads, x, g.clone());
                    }
                    if needs(b) {
                        let xs = values[x].shape();
                        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                        let mut db = Tensor::zeros(&[c]);
                        {
                            let dbd = db.data_mut();
                            for ni in 0..n {
                                for ci in 0..c {
                                    let plane =
                                        &g.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                                    let mut acc = T::zero();
                                    for &v in plane {
                                        acc = acc + v;
                                    }
                                    dbd[ci] = dbd[ci] + acc;
                                }
                            }
                        }
                        Self::accumulate(grads, b, db);
                    }
                }
                Op::AddRowBias => {
                    let (x, b) = (parents[0], parents[1]);
                    if needs(x) {
                        Self::accumulate(grads, x, g.clone());
                    }
                    if needs(b) {
                        let xs = values[x].shape();
                        let (n, c) = (xs[0], xs[1]);
                        let mut db = Tensor::zeros(&[c]);
                        {
                            let dbd = db.data_mut();
                            for ni in 0..n {
                                for ci in 0..c {
                                    dbd[ci] = dbd[ci] + g.data()[ni * c + ci];
                                }
                            }
                        }
                        Self::accumulate(grads, b, db);
                    }
                }
                Op::AddSampleChannelBias => {
                    let (x, b) = (parents[0], parents[1]);
                    if needs(x) {
                        Self::accumulate(grads, x, g.clone());
                    }
                    if needs(b) {
                        let xs = values[x].shape();
                        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                        let mut db = Tensor::zeros(&[n, c]);
                        {
                            let dbd = db.data_mut();
                            for ni in 0..n {
                                for ci in 0..c {
                                    let plane =
                                        &g.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                                    let mut acc = T::zero();
                                    for &v in plane {
                                        acc = acc + v;
                                    }
                                    dbd[ni * c + ci] = acc;
                                }
                            }
                        }
                        Self::accumulate(grads, b, db);
                    }
                }
                Op::Matmul => {
                    let (a, b) = (parents[0], parents[1]);
                    let (m, k) = (values[a].shape()[0], values[a].shape()[1]);
                    let n = values[b].shape()[1];
                    if needs(a) {
                        let mut da = Tensor::zeros(&[m, k]);
                        kernels::matmul_nt(g.data(), values[b].data(), m, n, k, da.data_mut());
                        Self::accumulate(grads, a, da);
                    }
                    if needs(b) {
                        let mut db = Tensor::zeros(&[k, n]);
                        kernels::matmul_tn(values[a].data(), g.data(), m, k, n, db.data_mut());
                        Self::accumulate(grads, b, db);
                    }
                }
                Op::Conv2d(geom) => {
                    let (x, w) = (parents[0], parents[1]);
                    let batch = values[x].shape()[0];
                    if needs(w) {
                        let mut dw = Tensor::zeros(values[w].shape());
                        kernels::conv2d_backward_w(
                            values[x].data(),
                            g.data(),
                            batch,
                            geom,
                            dw.data_mut(),
                        );
                        Self::accumulate(grads, w, dw);
                    }
                    if needs(x) {
                        let mut dx = Tensor::zeros(values[x].shape());
                        kernels::conv2d_backward_x(
                            values[w].data(),
                            g.data(),
                            batch,
                            geom,
                            dx.data_mut(),
                        );
                        Self::accumulate(grads, x, dx);
                    }
                }
                Op::AvgPool2x => {
                    let xs = values[parents[0]].shape();
                    let mut dx = Tensor::zeros(xs);
                    kernels::avgpool2_backward(
                        g.data(),
                        xs[0] * xs[1],
                        xs[2],
                        xs[3],
                        dx.data_mut(),
                    );
                    Self::accumulate(grads, parents[0], dx);
                }
                Op::UpsampleNearest2x => {
                    let xs = values[parents[0]].shape();
                    let mut dx = Tensor::zeros(xs);
                    kernels::upsample2_backward(
                        g.data(),
                        xs[0] * xs[1],
                        xs[2],
                        xs[3],
                        dx.data_mut(),
                    );
                    Self::accumulate(grads, parents[0], dx);
                }
                Op::ConcatChannels(ca) => {
                    let (a, b) = (parents[0], parents[1]);
                    let os = values[id].shape();
                    let (n, ctot, hw) = (os[0], os[1], os[2] * os[3]);
                    let cb = ctot - ca;
                    if needs(a) {
                        let mut da = Tensor::zeros(values[a].shape());
                        {
                            let dad = da.data_mut();
                            for ni in 0..n {
                                let src = &g.data()[ni * ctot * hw..ni * ctot * hw + ca * hw];
                                dad[ni * ca * hw..(ni + 1) * ca * hw].copy_from_slice(src);
                            }
                        }
                        Self::accumulate(grads, a, da);
                    }
                    if needs(b) {
                        let mut db = Tensor::zeros(values[b].shape());
                        {
                            let dbd = db.data_mut();
                            for ni in 0..n {
                                let src =
                                    &g.data()[ni * ctot * hw + ca * hw..(ni + 1) * ctot * hw];
                                dbd[ni * cb * hw..(ni + 1) * cb * hw].copy_from_slice(src);
                            }
                        }
                        Self::accumulate(grads, b, db);
                    }
                }
                Op::MseLoss => {
                    let (p, t) = (parents[0], parents[1]);
                    let n = values[p].numel() as f64;
                    let g0 = g.data()[0].as_f64();
                    let coef = T::of_f64(2.0 * g0 / n);
                    if needs(p) {
                        let dp = values[p].zip_map(&values[t], |pv, tv| (pv - tv) * coef)?;
                        Self::accumulate(grads, p, dp);
                    }
                    if needs(t) {
                        let dt = values[p].zip_map(&values[t], |pv, tv| (tv - pv) * coef)?;
                        Self::accumulate(grads, t, dt);
                    }
                }
                Op::SumAll => {
                    let g0 = g.data()[0];
                    let dx = Tensor::full(values[parents[0]].shape(), g0);
                    Self::accumulate(grads, parents[0], dx);
                }
            }
        }
        Ok(())
    }
}
