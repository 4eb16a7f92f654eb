use super::kernels::{adaptive_bounds, col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use super::tensor::{dims2, dims4, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        // im2col buffers per sample, kept only when the weight needs a gradient
        cols: Option<Vec<T>>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        k: usize,
    },
    AdaptiveAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Concat {
        lhs: Var,
        rhs: Var,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of a forward pass, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in evaluation order, so the index order is already a
/// topological order of the graph.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input or parameter. Its `requires_grad` flag decides
    /// whether backward fills its gradient.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let mut value = tensor;
        value.clear_grad();
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears every accumulated gradient on the tape.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.clear_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad())
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<T>, parents: &[Var], op: Op<T>, what: &str) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{what} produced a non-finite value")));
        }
        let rg = self.needs_grad(parents);
        let value = Tensor::new(shape, data)?.with_requires_grad(rg);
        Ok(self.push(value, op))
    }

    /// 2-d cross-correlation over `[N,Cin,H,W]` with a `[Cout,Cin,kh,kw]`
    /// kernel, square stride and symmetric zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, c_in, h, w] = dims4(self.shape(input), "conv2d input")?;
        let [c_out, wc_in, kh, kw] = dims4(self.shape(weight), "conv2d weight")?;
        if wc_in != c_in {
            return Err(Error::config(format!(
                "conv2d: input has {c_in} channels but weight expects {wc_in}"
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::config(format!(
                "conv2d: bias shape {:?} does not match {c_out} output channels",
                self.shape(bias)
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("conv2d: kernel {kh}x{kw} must have odd sides")));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::config(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            h_out: (h + 2 * padding - kh) / stride + 1,
            w_out: (w + 2 * padding - kw) / stride + 1,
        };
        let rows = geom.col_rows();
        let spatial = geom.col_cols();
        let keep_cols = self.nodes[weight.0].value.requires_grad();

        let x = self.data(input);
        let wt = self.data(weight);
        let b = self.data(bias);
        let mut out = vec![T::zero(); n * c_out * spatial];
        let mut saved = if keep_cols {
            vec![T::zero(); n * rows * spatial]
        } else {
            Vec::new()
        };
        let mut scratch = vec![T::zero(); rows * spatial];
        for s in 0..n {
            let image = &x[s * c_in * h * w..(s + 1) * c_in * h * w];
            let cols: &mut [T] = if keep_cols {
                &mut saved[s * rows * spatial..(s + 1) * rows * spatial]
            } else {
                &mut scratch
            };
            im2col(&geom, image, cols);
            let o = &mut out[s * c_out * spatial..(s + 1) * c_out * spatial];
            for (co, chunk) in o.chunks_mut(spatial).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[co]);
            }
            gemm_nn(c_out, rows, spatial, wt, cols, o);
        }
        let op = Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            cols: keep_cols.then_some(saved),
        };
        self.record(
            vec![n, c_out, geom.h_out, geom.w_out],
            out,
            &[input, weight, bias],
            op,
            "conv2d",
        )
    }

    /// Non-overlapping `k x k` max pooling. Ties resolve to the first
    /// row-major position in the window.
    pub fn maxpool2d(&mut self, input: Var, k: usize) -> Result<Var> {
        let [n, c, h, w] = dims4(self.shape(input), "maxpool2d input")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::config(format!(
                "maxpool2d: spatial dims {h}x{w} not divisible by window {k}"
            )));
        }
        let (ho, wo) = (h / k, w / k);
        let x = self.data(input);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let idx = base + (oy * k + dy) * w + ox * k + dx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        self.record(
            vec![n, c, ho, wo],
            out,
            &[input],
            Op::MaxPool { input, argmax },
            "maxpool2d",
        )
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, k: usize) -> Result<Var> {
        let [n, c, h, w] = dims4(self.shape(input), "upsample input")?;
        if k == 0 {
            return Err(Error::config("upsample_nearest: factor must be positive"));
        }
        let (ho, wo) = (h * k, w * k);
        let x = self.data(input);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            for oy in 0..ho {
                let src = &x[plane * h * w + (oy / k) * w..plane * h * w + (oy / k + 1) * w];
                let dst = &mut out[plane * ho * wo + oy * wo..plane * ho * wo + (oy + 1) * wo];
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = src[ox / k];
                }
            }
        }
        self.record(
            vec![n, c, ho, wo],
            out,
            &[input],
            Op::Upsample { input, k },
            "upsample_nearest",
        )
    }

    /// Averages contiguous regions down to `out_h x out_w`. Regions tile the
    /// input exactly when the sizes divide.
    pub fn adaptive_avgpool(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = dims4(self.shape(input), "adaptive_avgpool input")?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::config(format!(
                "adaptive_avgpool: output {out_h}x{out_w} must be within input {h}x{w}"
            )));
        }
        let x = self.data(input);
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..out_h {
                let (y0, y1) = adaptive_bounds(oy, out_h, h);
                for ox in 0..out_w {
                    let (x0, x1) = adaptive_bounds(ox, out_w, w);
                    let mut acc = T::zero();
                    for iy in y0..y1 {
                        for v in &x[base + iy * w + x0..base + iy * w + x1] {
                            acc += *v;
                        }
                    }
                    out.push(acc / T::from_wide(((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
        self.record(
            vec![n, c, out_h, out_w],
            out,
            &[input],
            Op::AdaptiveAvgPool { input },
            "adaptive_avgpool",
        )
    }

    /// `input[N,D] * weight[K,D]^T + bias[K]`
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, d] = dims2(self.shape(input), "linear input")?;
        let [k, wd] = dims2(self.shape(weight), "linear weight")?;
        if wd != d {
            return Err(Error::config(format!(
                "linear: input dim {d} does not match weight dim {wd}"
            )));
        }
        if self.shape(bias) != [k] {
            return Err(Error::config(format!(
                "linear: bias shape {:?} does not match {k} outputs",
                self.shape(bias)
            )));
        }
        let b = self.data(bias);
        let mut out: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
        gemm_nt(n, d, k, self.data(input), self.data(weight), &mut out);
        self.record(
            vec![n, k],
            out,
            &[input, weight, bias],
            Op::Linear { input, weight, bias },
            "linear",
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = self.data(input).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(input).to_vec();
        self.record(shape, out, &[input], Op::Relu { input }, "relu")
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape(lhs, rhs, "add")?;
        let out = self
            .data(lhs)
            .iter()
            .zip(self.data(rhs))
            .map(|(&a, &b)| a + b)
            .collect();
        let shape = self.shape(lhs).to_vec();
        self.record(shape, out, &[lhs, rhs], Op::Add { lhs, rhs }, "add")
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape(lhs, rhs, "mul")?;
        let out = self
            .data(lhs)
            .iter()
            .zip(self.data(rhs))
            .map(|(&a, &b)| a * b)
            .collect();
        let shape = self.shape(lhs).to_vec();
        self.record(shape, out, &[lhs, rhs], Op::Mul { lhs, rhs }, "mul")
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out = self.data(input).iter().map(|&v| v * factor).collect();
        let shape = self.shape(input).to_vec();
        self.record(shape, out, &[input], Op::Scale { input, factor }, "scale")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::config(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Concatenates along axis 1. All other dims must agree.
    pub fn concat_channels(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(lhs), self.shape(rhs));
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::config(format!(
                "concat_channels: incompatible shapes {sa:?} and {sb:?}"
            )));
        }
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let n = sa[0];
        let mut shape = sa.to_vec();
        shape[1] = ca + cb;
        let (a, b) = (self.data(lhs), self.data(rhs));
        let mut out = Vec::with_capacity(n * (ca + cb) * inner);
        for s in 0..n {
            out.extend_from_slice(&a[s * ca * inner..(s + 1) * ca * inner]);
            out.extend_from_slice(&b[s * cb * inner..(s + 1) * cb * inner]);
        }
        self.record(shape, out, &[lhs, rhs], Op::Concat { lhs, rhs }, "concat_channels")
    }

    /// `[N, ...] -> [N, prod(...)]`
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input);
        if shape.is_empty() {
            return Err(Error::config("flatten: scalar input"));
        }
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(input, vec![n, rest])
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(input).numel() {
            return Err(Error::config(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape(input)
            )));
        }
        let data = self.data(input).to_vec();
        self.record(shape, data, &[input], Op::Reshape { input }, "reshape")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: T = self.data(input).iter().copied().sum();
        self.record(vec![1], vec![s], &[input], Op::Sum { input }, "sum")
    }

    /// Batch-mean cross entropy of `softmax(logits)` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, k] = dims2(self.shape(logits), "softmax_cross_entropy logits")?;
        if labels.len() != n {
            return Err(Error::data(format!("{} labels for a batch of {n}", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::data(format!("label {bad} out of range for {k} classes")));
        }
        let z = self.data(logits);
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (s, &label) in labels.iter().enumerate() {
            let row = &z[s * k..(s + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&v| (v - m).exp()).sum();
            let log_denom = denom.ln();
            for (j, p) in probs[s * k..(s + 1) * k].iter_mut().enumerate() {
                *p = (row[j] - m).exp() / denom;
            }
            total += log_denom - (row[label] - m);
        }
        let loss = total / T::from_wide(n as f64);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.record(vec![1], vec![loss], &[logits], op, "softmax_cross_entropy")
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients accumulate into
    /// every `requires_grad` node, so calling twice doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::usage("backward: variable is not on this tape"));
        }
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                root.shape()
            )));
        }
        if !root.requires_grad() {
            return Err(Error::usage("backward: loss is detached from every trainable input"));
        }

        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj);
            self.nodes[id].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn propagate(&self, id: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let [n, c_out, _, _] = dims4(node.value.shape(), "").expect("conv output is 4-d");
                let rows = geom.col_rows();
                let spatial = geom.col_cols();
                let img = geom.c_in * geom.h * geom.w;
                if self.wants(*bias) {
                    let db = slot(adj, *bias, c_out);
                    for s in 0..n {
                        for (co, chunk) in g[s * c_out * spatial..(s + 1) * c_out * spatial]
                            .chunks(spatial)
                            .enumerate()
                        {
                            db[co] += chunk.iter().copied().sum();
                        }
                    }
                }
                if self.wants(*weight) {
                    let cols = cols.as_ref().expect("cols saved when weight requires grad");
                    let dw = slot(adj, *weight, c_out * rows);
                    for s in 0..n {
                        gemm_nt(
                            c_out,
                            spatial,
                            rows,
                            &g[s * c_out * spatial..(s + 1) * c_out * spatial],
                            &cols[s * rows * spatial..(s + 1) * rows * spatial],
                            dw,
                        );
                    }
                }
                if self.wants(*input) {
                    let wt = self.data(*weight);
                    let mut dcols = vec![T::zero(); rows * spatial];
                    let dx = slot(adj, *input, n * img);
                    for s in 0..n {
                        dcols.iter_mut().for_each(|v| *v = T::zero());
                        gemm_tn(
                            rows,
                            c_out,
                            spatial,
                            wt,
                            &g[s * c_out * spatial..(s + 1) * c_out * spatial],
                            &mut dcols,
                        );
                        col2im(geom, &dcols, &mut dx[s * img..(s + 1) * img]);
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if self.wants(*input) {
                    let dx = slot(adj, *input, self.value(*input).numel());
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] += gv;
                    }
                }
            }
            Op::Upsample { input, k } => {
                if self.wants(*input) {
                    let [n, c, h, w] = dims4(self.shape(*input), "").expect("4-d");
                    let (ho, wo) = (h * k, w * k);
                    let dx = slot(adj, *input, n * c * h * w);
                    for plane in 0..n * c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                dx[plane * h * w + (oy / k) * w + ox / k] += g[plane * ho * wo + oy * wo + ox];
                            }
                        }
                    }
                }
            }
            Op::AdaptiveAvgPool { input } => {
                if self.wants(*input) {
                    let [n, c, h, w] = dims4(self.shape(*input), "").expect("4-d");
                    let [_, _, out_h, out_w] = dims4(node.value.shape(), "").expect("4-d");
                    let dx = slot(adj, *input, n * c * h * w);
                    let mut o = 0;
                    for plane in 0..n * c {
                        let base = plane * h * w;
                        for oy in 0..out_h {
                            let (y0, y1) = adaptive_bounds(oy, out_h, h);
                            for ox in 0..out_w {
                                let (x0, x1) = adaptive_bounds(ox, out_w, w);
                                let share = g[o] / T::from_wide(((y1 - y0) * (x1 - x0)) as f64);
                                for iy in y0..y1 {
                                    for v in &mut dx[base + iy * w + x0..base + iy * w + x1] {
                                        *v += share;
                                    }
                                }
                                o += 1;
                            }
                        }
                    }
                }
            }
            Op::Linear { input, weight, bias } => {
                let [n, d] = dims2(self.shape(*input), "").expect("2-d");
                let k = self.shape(*weight)[0];
                if self.wants(*bias) {
                    let db = slot(adj, *bias, k);
                    for row in g.chunks(k) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                }
                if self.wants(*weight) {
                    let dw = slot(adj, *weight, k * d);
                    gemm_tn(k, n, d, g, self.data(*input), dw);
                }
                if self.wants(*input) {
                    let dx = slot(adj, *input, n * d);
                    gemm_nn(n, k, d, g, self.data(*weight), dx);
                }
            }
            Op::Relu { input } => {
                if self.wants(*input) {
                    let out = node.value.data();
                    let dx = slot(adj, *input, out.len());
                    for ((d, &o), &gv) in dx.iter_mut().zip(out).zip(g) {
                        if o > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Add { lhs, rhs } => {
                for v in [*lhs, *rhs] {
                    if self.wants(v) {
                        let d = slot(adj, v, g.len());
                        d.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::Mul { lhs, rhs } => {
                for (v, other) in [(*lhs, *rhs), (*rhs, *lhs)] {
                    if self.wants(v) {
                        let o = self.data(other);
                        let d = slot(adj, v, g.len());
                        for ((a, &gv), &ov) in d.iter_mut().zip(g).zip(o) {
                            *a += gv * ov;
                        }
                    }
                }
            }
            Op::Scale { input, factor } => {
                if self.wants(*input) {
                    let d = slot(adj, *input, g.len());
                    d.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *factor);
                }
            }
            Op::Concat { lhs, rhs } => {
                let sa = self.shape(*lhs);
                let sb = self.shape(*rhs);
                let inner: usize = sa[2..].iter().product();
                let (n, ca, cb) = (sa[0], sa[1], sb[1]);
                let stride = (ca + cb) * inner;
                if self.wants(*lhs) {
                    let d = slot(adj, *lhs, n * ca * inner);
                    for s in 0..n {
                        let src = &g[s * stride..s * stride + ca * inner];
                        d[s * ca * inner..(s + 1) * ca * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, &b)| *a += b);
                    }
                }
                if self.wants(*rhs) {
                    let d = slot(adj, *rhs, n * cb * inner);
                    for s in 0..n {
                        let src = &g[s * stride + ca * inner..(s + 1) * stride];
                        d[s * cb * inner..(s + 1) * cb * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::Reshape { input } => {
                if self.wants(*input) {
                    let d = slot(adj, *input, g.len());
                    d.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
            Op::Sum { input } => {
                if self.wants(*input) {
                    let len = self.value(*input).numel();
                    let d = slot(adj, *input, len);
                    d.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if self.wants(*logits) {
                    let k = self.shape(*logits)[1];
                    let scale = g[0] / T::from_wide(labels.len() as f64);
                    let d = slot(adj, *logits, probs.len());
                    for (s, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == label { T::one() } else { T::zero() };
                            d[s * k + j] += (probs[s * k + j] - onehot) * scale;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint buffer for `v`, allocated as zeros on first touch.
fn slot<T: Scalar>(adj: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    adj[v.0].get_or_insert_with(|| vec![T::zero(); len])
}
