//! Minimal reverse-mode autodiff over 2-D f64 arrays.
//!
//! Nodes are appended in topological order, so the backward pass is a single
//! reverse sweep. Gradients flow only into subgraphs that contain parameters;
//! constants never accumulate grads.

use ndarray::{s, Array2, Axis};

pub type VarId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.ksize) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.ksize) / self.stride + 1
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Transpose(VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    /// (m,n) + (1,n)
    AddRowVec(VarId, VarId),
    /// (m,n) - (1,n)
    SubRowVec(VarId, VarId),
    /// (m,n) / (m,1)
    DivColVec(VarId, VarId),
    /// (m,n) / (1,n)
    DivRowVec(VarId, VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    Relu(VarId),
    Sqrt(VarId),
    SumRows(VarId),
    SumCols(VarId),
    SumAll(VarId),
    LogSumExpRows(VarId),
    ConcatRows(VarId, VarId),
    /// elementwise product with the node's constant aux matrix
    MulConst(VarId),
    Conv2d { input: VarId, kernel: VarId, bias: VarId, shape: ConvShape },
    GlobalAvgPool { input: VarId, h: usize, w: usize, c: usize },
}

struct Node {
    value: Array2<f64>,
    grad: Array2<f64>,
    op: Op,
    aux: Option<Array2<f64>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, aux: Option<Array2<f64>>, requires_grad: bool) -> VarId {
        let grad = Array2::zeros(value.dim());
        self.nodes.push(Node { value, grad, op, aux, requires_grad });
        self.nodes.len() - 1
    }

    fn requires(&self, id: VarId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn constant(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf, None, false)
    }

    pub fn param(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf, None, true)
    }

    pub fn value(&self, id: VarId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: VarId) -> &Array2<f64> {
        &self.nodes[id].grad
    }

    pub fn scalar(&self, id: VarId) -> f64 {
        let v = &self.nodes[id].value;
        assert_eq!(v.dim(), (1, 1), "node is not a scalar");
        v[[0, 0]]
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::MatMul(a, b), None, rg)
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.t().to_owned();
        let rg = self.requires(a);
        self.push(v, Op::Transpose(a), None, rg)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value + &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::Add(a, b), None, rg)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value - &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::Sub(a, b), None, rg)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value * &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::Mul(a, b), None, rg)
    }

    pub fn add_rowvec(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.nodes[b].value.nrows(), 1);
        let v = &self.nodes[a].value + &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::AddRowVec(a, b), None, rg)
    }

    pub fn sub_rowvec(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.nodes[b].value.nrows(), 1);
        let v = &self.nodes[a].value - &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::SubRowVec(a, b), None, rg)
    }

    pub fn div_colvec(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.nodes[b].value.ncols(), 1);
        let v = &self.nodes[a].value / &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::DivColVec(a, b), None, rg)
    }

    pub fn div_rowvec(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.nodes[b].value.nrows(), 1);
        let v = &self.nodes[a].value / &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::DivRowVec(a, b), None, rg)
    }

    pub fn scale(&mut self, a: VarId, s: f64) -> VarId {
        let v = self.nodes[a].value.mapv(|x| x * s);
        let rg = self.requires(a);
        self.push(v, Op::Scale(a, s), None, rg)
    }

    pub fn add_scalar(&mut self, a: VarId, s: f64) -> VarId {
        let v = self.nodes[a].value.mapv(|x| x + s);
        let rg = self.requires(a);
        self.push(v, Op::AddScalar(a), None, rg)
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        let rg = self.requires(a);
        self.push(v, Op::Relu(a), None, rg)
    }

    pub fn sqrt(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::sqrt);
        let rg = self.requires(a);
        self.push(v, Op::Sqrt(a), None, rg)
    }

    pub fn sum_rows(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.requires(a);
        self.push(v, Op::SumRows(a), None, rg)
    }

    pub fn sum_cols(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.requires(a);
        self.push(v, Op::SumCols(a), None, rg)
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        let rg = self.requires(a);
        self.push(v, Op::SumAll(a), None, rg)
    }

    /// Numerically stable log(sum(exp(row))) per row, shape (m, 1).
    pub fn logsumexp_rows(&mut self, a: VarId) -> VarId {
        let src = &self.nodes[a].value;
        let mut v = Array2::zeros((src.nrows(), 1));
        for (i, row) in src.rows().into_iter().enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
            v[[i, 0]] = m + s.ln();
        }
        let rg = self.requires(a);
        self.push(v, Op::LogSumExpRows(a), None, rg)
    }

    pub fn concat_rows(&mut self, a: VarId, b: VarId) -> VarId {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        assert_eq!(va.ncols(), vb.ncols());
        let mut v = Array2::zeros((va.nrows() + vb.nrows(), va.ncols()));
        v.slice_mut(s![..va.nrows(), ..]).assign(va);
        v.slice_mut(s![va.nrows().., ..]).assign(vb);
        let rg = self.requires(a) || self.requires(b);
        self.push(v, Op::ConcatRows(a, b), None, rg)
    }

    /// Elementwise product with a fixed matrix (masking).
    pub fn mul_const(&mut self, a: VarId, m: Array2<f64>) -> VarId {
        assert_eq!(self.nodes[a].value.dim(), m.dim());
        let v = &self.nodes[a].value * &m;
        let rg = self.requires(a);
        self.push(v, Op::MulConst(a), Some(m), rg)
    }

    pub fn conv2d(&mut self, input: VarId, kernel: VarId, bias: VarId, shape: ConvShape) -> VarId {
        let x = &self.nodes[input].value;
        let k = &self.nodes[kernel].value;
        let b = &self.nodes[bias].value;
        assert_eq!(x.ncols(), shape.in_h * shape.in_w * shape.in_c);
        assert_eq!(k.dim(), (shape.out_c, shape.ksize * shape.ksize * shape.in_c));
        assert_eq!(b.dim(), (1, shape.out_c));
        let (oh, ow) = (shape.out_h(), shape.out_w());
        let batch = x.nrows();
        let mut v = Array2::zeros((batch, oh * ow * shape.out_c));
        for bi in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    for oc in 0..shape.out_c {
                        let mut acc = b[[0, oc]];
                        for ky in 0..shape.ksize {
                            for kx in 0..shape.ksize {
                                let iy = (oy * shape.stride + ky) as isize - shape.pad as isize;
                                let ix = (ox * shape.stride + kx) as isize - shape.pad as isize;
                                if iy < 0 || ix < 0 || iy >= shape.in_h as isize || ix >= shape.in_w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                for ic in 0..shape.in_c {
                                    acc += x[[bi, (iy * shape.in_w + ix) * shape.in_c + ic]]
                                        * k[[oc, (ky * shape.ksize + kx) * shape.in_c + ic]];
                                }
                            }
                        }
                        v[[bi, (oy * ow + ox) * shape.out_c + oc]] = acc;
                    }
                }
            }
        }
        let rg = self.requires(input) || self.requires(kernel) || self.requires(bias);
        self.push(v, Op::Conv2d { input, kernel, bias, shape }, None, rg)
    }

    /// (B, h*w*c) HWC -> (B, c), averaging over the spatial extent.
    pub fn global_avg_pool(&mut self, input: VarId, h: usize, w: usize, c: usize) -> VarId {
        let x = &self.nodes[input].value;
        assert_eq!(x.ncols(), h * w * c);
        let mut v = Array2::zeros((x.nrows(), c));
        for bi in 0..x.nrows() {
            for p in 0..h * w {
                for ch in 0..c {
                    v[[bi, ch]] += x[[bi, p * c + ch]];
                }
            }
        }
        v /= (h * w) as f64;
        let rg = self.requires(input);
        self.push(v, Op::GlobalAvgPool { input, h, w, c }, None, rg)
    }

    // compositions

    pub fn square(&mut self, a: VarId) -> VarId {
        self.mul(a, a)
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let n = self.nodes[a].value.len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise L2 normalization: x / ||x||.
    pub fn row_l2_normalize(&mut self, a: VarId) -> VarId {
        let sq = self.square(a);
        let ss = self.sum_rows(sq);
        let norm = self.sqrt(ss);
        self.div_colvec(a, norm)
    }

    /// Reverse sweep from a scalar loss node; fills gradients of every node
    /// on a parameter path.
    pub fn backward(&mut self, loss: VarId) {
        assert_eq!(self.nodes[loss].value.dim(), (1, 1), "loss must be scalar");
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
        self.nodes[loss].grad[[0, 0]] = 1.0;
        for i in (0..=loss).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = self.nodes[i].grad.clone();
            match self.nodes[i].op.clone() {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        let d = g.dot(&self.nodes[b].value.t());
                        self.nodes[a].grad += &d;
                    }
                    if self.requires(b) {
                        let d = self.nodes[a].value.t().dot(&g);
                        self.nodes[b].grad += &d;
                    }
                }
                Op::Transpose(a) => {
                    if self.requires(a) {
                        self.nodes[a].grad += &g.t();
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(a) {
                        self.nodes[a].grad += &g;
                    }
                    if self.requires(b) {
                        self.nodes[b].grad += &g;
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires(a) {
                        self.nodes[a].grad += &g;
                    }
                    if self.requires(b) {
                        self.nodes[b].grad -= &g;
                    }
                }
                Op::Mul(a, b) => {
                    if self.requires(a) {
                        let d = &g * &self.nodes[b].value;
                        self.nodes[a].grad += &d;
                    }
                    if self.requires(b) {
                        let d = &g * &self.nodes[a].value;
                        self.nodes[b].grad += &d;
                    }
                }
                Op::AddRowVec(a, b) => {
                    if self.requires(a) {
                        self.nodes[a].grad += &g;
                    }
                    if self.requires(b) {
                        let d = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.nodes[b].grad += &d;
                    }
                }
                Op::SubRowVec(a, b) => {
                    if self.requires(a) {
                        self.nodes[a].grad += &g;
                    }
                    if self.requires(b) {
                        let d = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.nodes[b].grad -= &d;
                    }
                }
                Op::DivColVec(a, b) => {
                    if self.requires(a) {
                        let d = &g / &self.nodes[b].value;
                        self.nodes[a].grad += &d;
                    }
                    if self.requires(b) {
                        let d = {
                            let av = &self.nodes[a].value;
                            let bv = &self.nodes[b].value;
                            (&g * av / (bv * bv)).sum_axis(Axis(1)).insert_axis(Axis(1))
                        };
                        self.nodes[b].grad -= &d;
                    }
                }
                Op::DivRowVec(a, b) => {
                    if self.requires(a) {
                        let d = &g / &self.nodes[b].value;
                        self.nodes[a].grad += &d;
                    }
                    if self.requires(b) {
                        let d = {
                            let av = &self.nodes[a].value;
                            let bv = &self.nodes[b].value;
                            (&g * av / (bv * bv)).sum_axis(Axis(0)).insert_axis(Axis(0))
                        };
                        self.nodes[b].grad -= &d;
                    }
                }
                Op::Scale(a, sfac) => {
                    if self.requires(a) {
                        let d = g.mapv(|x| x * sfac);
                        self.nodes[a].grad += &d;
                    }
                }
                Op::AddScalar(a) => {
                    if self.requires(a) {
                        self.nodes[a].grad += &g;
                    }
                }
                Op::Relu(a) => {
                    if self.requires(a) {
                        let mask = self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                        let d = &g * &mask;
                        self.nodes[a].grad += &d;
                    }
                }
                Op::Sqrt(a) => {
                    if self.requires(a) {
                        let d = &g * &self.nodes[i].value.mapv(|y| 0.5 / y);
                        self.nodes[a].grad += &d;
                    }
                }
                Op::SumRows(a) => {
                    if self.requires(a) {
                        let cols = self.nodes[a].value.ncols();
                        let mut d = Array2::zeros(self.nodes[a].value.dim());
                        for r in 0..d.nrows() {
                            let gv = g[[r, 0]];
                            for cidx in 0..cols {
                                d[[r, cidx]] = gv;
                            }
                        }
                        self.nodes[a].grad += &d;
                    }
                }
                Op::SumCols(a) => {
                    if self.requires(a) {
                        let mut d = Array2::zeros(self.nodes[a].value.dim());
                        for r in 0..d.nrows() {
                            for cidx in 0..d.ncols() {
                                d[[r, cidx]] = g[[0, cidx]];
                            }
                        }
                        self.nodes[a].grad += &d;
                    }
                }
                Op::SumAll(a) => {
                    if self.requires(a) {
                        let gv = g[[0, 0]];
                        let d = Array2::from_elem(self.nodes[a].value.dim(), gv);
                        self.nodes[a].grad += &d;
                    }
                }
                Op::LogSumExpRows(a) => {
                    if self.requires(a) {
                        let av = &self.nodes[a].value;
                        let yv = &self.nodes[i].value;
                        let mut d = Array2::zeros(av.dim());
                        for r in 0..av.nrows() {
                            let gv = g[[r, 0]];
                            for cidx in 0..av.ncols() {
                                d[[r, cidx]] = gv * (av[[r, cidx]] - yv[[r, 0]]).exp();
                            }
                        }
                        self.nodes[a].grad += &d;
                    }
                }
                Op::ConcatRows(a, b) => {
                    let na = self.nodes[a].value.nrows();
                    if self.requires(a) {
                        let d = g.slice(s![..na, ..]).to_owned();
                        self.nodes[a].grad += &d;
                    }
                    if self.requires(b) {
                        let d = g.slice(s![na.., ..]).to_owned();
                        self.nodes[b].grad += &d;
                    }
                }
                Op::MulConst(a) => {
                    if self.requires(a) {
                        let d = &g * self.nodes[i].aux.as_ref().unwrap();
                        self.nodes[a].grad += &d;
                    }
                }
                Op::Conv2d { input, kernel, bias, shape } => {
                    self.conv2d_backward(&g, input, kernel, bias, shape);
                }
                Op::GlobalAvgPool { input, h, w, c } => {
                    if self.requires(input) {
                        let mut d = Array2::zeros(self.nodes[input].value.dim());
                        let inv = 1.0 / (h * w) as f64;
                        for bi in 0..d.nrows() {
                            for p in 0..h * w {
                                for ch in 0..c {
                                    d[[bi, p * c + ch]] = g[[bi, ch]] * inv;
                                }
                            }
                        }
                        self.nodes[input].grad += &d;
                    }
                }
            }
        }
    }

    fn conv2d_backward(&mut self, g: &Array2<f64>, input: VarId, kernel: VarId, bias: VarId, shape: ConvShape) {
        let (oh, ow) = (shape.out_h(), shape.out_w());
        let batch = self.nodes[input].value.nrows();
        let need_input = self.requires(input);
        let need_kernel = self.requires(kernel);
        let need_bias = self.requires(bias);
        let mut d_input = Array2::zeros(self.nodes[input].value.dim());
        let mut d_kernel = Array2::zeros(self.nodes[kernel].value.dim());
        let mut d_bias = Array2::zeros(self.nodes[bias].value.dim());
        let x = self.nodes[input].value.clone();
        let k = self.nodes[kernel].value.clone();
        for bi in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    for oc in 0..shape.out_c {
                        let gv = g[[bi, (oy * ow + ox) * shape.out_c + oc]];
                        if gv == 0.0 {
                            continue;
                        }
                        if need_bias {
                            d_bias[[0, oc]] += gv;
                        }
                        for ky in 0..shape.ksize {
                            for kx in 0..shape.ksize {
                                let iy = (oy * shape.stride + ky) as isize - shape.pad as isize;
                                let ix = (ox * shape.stride + kx) as isize - shape.pad as isize;
                                if iy < 0 || ix < 0 || iy >= shape.in_h as isize || ix >= shape.in_w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                for ic in 0..shape.in_c {
                                    let xi = (iy * shape.in_w + ix) * shape.in_c + ic;
                                    let kidx = (ky * shape.ksize + kx) * shape.in_c + ic;
                                    if need_kernel {
                                        d_kernel[[oc, kidx]] += gv * x[[bi, xi]];
                                    }
                                    if need_input {
                                        d_input[[bi, xi]] += gv * k[[oc, kidx]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if need_input {
            self.nodes[input].grad += &d_input;
        }
        if need_kernel {
            self.nodes[kernel].grad += &d_kernel;
        }
        if need_bias {
            self.nodes[bias].grad += &d_bias;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central finite differences through an arbitrary graph builder.
    fn fd_check(build: impl Fn(&mut Graph, VarId) -> VarId, x0: Array2<f64>, tol: f64) {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let loss = build(&mut g, x);
        g.backward(loss);
        let analytic = g.grad(x).clone();
        let h = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let mut plus = x0.clone();
            plus[[r, c]] += h;
            let mut minus = x0.clone();
            minus[[r, c]] -= h;
            let mut gp = Graph::new();
            let xp = gp.param(plus);
            let lp_id = build(&mut gp, xp);
            let lp = gp.scalar(lp_id);
            let mut gm = Graph::new();
            let xm = gm.param(minus);
            let lm_id = build(&mut gm, xm);
            let lm = gm.scalar(lm_id);
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[[r, c]];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (a - numeric).abs() / denom < tol,
                "grad mismatch at ({r},{c}): analytic {a}, numeric {numeric}"
            );
        }
    }

    #[test]
    fn matmul_chain_gradient() {
        let w = array![[0.3, -0.2], [0.5, 0.8], [-0.4, 0.1]];
        fd_check(
            move |g, x| {
                let wc = g.constant(w.clone());
                let y = g.matmul(x, wc);
                let sq = g.square(y);
                g.sum_all(sq)
            },
            array![[0.5, -1.2, 0.7], [0.1, 0.4, -0.9]],
            1e-6,
        );
    }

    #[test]
    fn normalize_and_logsumexp_gradients() {
        fd_check(
            |g, x| {
                let n = g.row_l2_normalize(x);
                let t = g.transpose(n);
                let sims = g.matmul(n, t);
                let lse = g.logsumexp_rows(sims);
                g.mean_all(lse)
            },
            array![[0.9, -0.3, 0.4], [-0.2, 0.8, 0.5], [0.3, 0.3, -0.7]],
            1e-5,
        );
    }

    #[test]
    fn broadcast_div_and_sqrt_gradients() {
        fd_check(
            |g, x| {
                let mean = g.sum_cols(x);
                let mean = g.scale(mean, 1.0 / 3.0);
                let cen = g.sub_rowvec(x, mean);
                let var = g.square(cen);
                let var = g.sum_cols(var);
                let var = g.scale(var, 1.0 / 3.0);
                let std = g.sqrt(var);
                let z = g.div_rowvec(cen, std);
                let zz = g.square(z);
                g.sum_all(zz)
            },
            array![[1.0, 2.0], [0.5, -1.0], [2.0, 0.3]],
            1e-5,
        );
    }

    #[test]
    fn conv_and_pool_gradients() {
        let shape = ConvShape { in_h: 4, in_w: 4, in_c: 2, out_c: 3, ksize: 3, stride: 2, pad: 1 };
        let x = Array2::from_shape_fn((2, 32), |(i, j)| ((i * 13 + j * 7) % 9) as f64 / 9.0 - 0.4);
        fd_check(
            move |g, k| {
                let xc = g.constant(x.clone());
                let b = g.constant(Array2::zeros((1, 3)));
                let y = g.conv2d(xc, k, b, shape);
                let r = g.relu(y);
                let p = g.global_avg_pool(r, 2, 2, 3);
                let sq = g.square(p);
                g.sum_all(sq)
            },
            Array2::from_shape_fn((3, 18), |(i, j)| ((i * 5 + j * 11) % 13) as f64 / 13.0 - 0.5),
            1e-5,
        );
    }

    #[test]
    fn concat_and_mask_gradients() {
        let mask = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]];
        fd_check(
            move |g, x| {
                let two = g.scale(x, 2.0);
                let cat = g.concat_rows(x, two);
                let masked = g.mul_const(cat, mask.clone());
                let sq = g.square(masked);
                g.sum_all(sq)
            },
            array![[0.7, -0.4], [0.2, 0.9]],
            1e-6,
        );
    }

    #[test]
    fn constants_collect_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(array![[1.0, 2.0]]);
        let p = g.param(array![[3.0, 4.0]]);
        let y = g.mul(c, p);
        let l = g.sum_all(y);
        g.backward(l);
        assert_eq!(g.grad(c), &array![[0.0, 0.0]]);
        assert_eq!(g.grad(p), &array![[1.0, 2.0]]);
    }
}
