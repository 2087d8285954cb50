//! Minimal reverse-mode differentiation over dense f64 matrices.
//!
//! A [`Tape`] records a define-by-run graph of the operations the training
//! losses are composed of (dense layers, sines, sigmoid, clamp, bilinear
//! projection, sums, absolute values). Values are computed eagerly;
//! [`Tape::backward`] then accumulates exact gradients of a scalar root
//! into every parameter leaf. Clamp propagates zero gradient in its
//! saturated regions; nested spatial-derivative terms (the Eikonal and
//! spatial-TV losses) are handled by building the analytic input-gradient
//! expression out of tape ops, so differentiating it with respect to the
//! weights is ordinary reverse mode.
//!
//! Large matrix products are sharded over fixed-size row chunks; chunk
//! boundaries do not depend on the worker count, so results are
//! reproducible regardless of parallelism.

use std::rc::Rc;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

pub type Mat = Array2<f64>;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Differentiable operation with a custom forward/VJP pair (the projector).
pub trait CustomOp {
    fn forward(&self, x: &Mat) -> Mat;
    /// Vector-Jacobian product: gradient w.r.t. `x` given `grad_out`.
    fn vjp(&self, x: &Mat, grad_out: &Mat) -> Mat;
    fn name(&self) -> &'static str;
}

enum Op {
    Leaf,
    /// `x * W^T + b` with `W` of shape `(out, in)` and `b` of shape `(1, out)`.
    Linear { x: Var, w: Var, b: Var },
    /// `x * W^T`.
    MatmulT { x: Var, w: Var },
    /// `x * M` with a constant matrix.
    MatmulConst { x: Var, m: Rc<Mat> },
    /// `sin(freq * x)`.
    Sin { x: Var, freq: f64 },
    /// `freq * cos(freq * x)`, the derivative of [`Op::Sin`] w.r.t. its input.
    SinDeriv { x: Var, freq: f64 },
    Sigmoid { x: Var },
    /// `a * x + b` with scalar constants.
    AffineConst { x: Var, a: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    Abs { x: Var },
    /// `sqrt(x + eps)`.
    SqrtEps { x: Var },
    Mul { a: Var, b: Var },
    Sub { a: Var, b: Var },
    /// `a + c * b`.
    AddScaled { a: Var, b: Var, c: f64 },
    /// Scalar mean over all entries, shape `(1, 1)`.
    MeanAll { x: Var },
    /// `x - T` with a constant matrix.
    SubConst { x: Var },
    Reshape { x: Var, from: (usize, usize) },
    Custom { x: Var, op: Rc<dyn CustomOp> },
}

struct Node {
    op: Op,
    value: Mat,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const PAR_CHUNK: usize = 1024;

/// `a . b` sharded over fixed row chunks of `a`.
fn par_dot(a: &Mat, b: ArrayView2<f64>) -> Mat {
    let rows = a.dim().0;
    if rows <= PAR_CHUNK {
        return a.dot(&b);
    }
    let chunks: Vec<Mat> = a
        .axis_chunks_iter(Axis(0), PAR_CHUNK)
        .into_par_iter()
        .map(|ch| ch.dot(&b))
        .collect();
    let views: Vec<ArrayView2<f64>> = chunks.iter().map(|c| c.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("chunk shapes agree")
}

/// `a^T . b` accumulated over fixed row chunks, summed in chunk order.
fn par_t_dot(a: &Mat, b: &Mat) -> Mat {
    let rows = a.dim().0;
    if rows <= PAR_CHUNK {
        return a.t().dot(b);
    }
    let partials: Vec<Mat> = a
        .axis_chunks_iter(Axis(0), PAR_CHUNK)
        .into_par_iter()
        .zip(b.axis_chunks_iter(Axis(0), PAR_CHUNK).into_par_iter())
        .map(|(ca, cb)| ca.t().dot(&cb))
        .collect();
    let mut acc = partials[0].clone();
    for p in &partials[1..] {
        acc += p;
    }
    acc
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Mat, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut value = par_dot(&self.nodes[x.0].value, self.nodes[w.0].value.t());
        value += &self.nodes[b.0].value.row(0);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Op::Linear { x, w, b }, value, needs)
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let value = par_dot(&self.nodes[x.0].value, self.nodes[w.0].value.t());
        let needs = self.needs(x) || self.needs(w);
        self.push(Op::MatmulT { x, w }, value, needs)
    }

    pub fn matmul_const(&mut self, x: Var, m: Rc<Mat>) -> Var {
        let value = par_dot(&self.nodes[x.0].value, m.view());
        let needs = self.needs(x);
        self.push(Op::MatmulConst { x, m }, value, needs)
    }

    pub fn sin(&mut self, x: Var, freq: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| (freq * z).sin());
        let needs = self.needs(x);
        self.push(Op::Sin { x, freq }, value, needs)
    }

    /// `freq * cos(freq * x)`: the activation derivative as a first-class
    /// value, used to build analytic input-gradients on the tape.
    pub fn sin_deriv(&mut self, x: Var, freq: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| freq * (freq * z).cos());
        let needs = self.needs(x);
        self.push(Op::SinDeriv { x, freq }, value, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| 1.0 / (1.0 + (-z).exp()));
        let needs = self.needs(x);
        self.push(Op::Sigmoid { x }, value, needs)
    }

    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| a * z + b);
        let needs = self.needs(x);
        self.push(Op::AffineConst { x, a }, value, needs)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| z.clamp(lo, hi));
        let needs = self.needs(x);
        self.push(Op::Clamp { x, lo, hi }, value, needs)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(f64::abs);
        let needs = self.needs(x);
        self.push(Op::Abs { x }, value, needs)
    }

    pub fn sqrt_eps(&mut self, x: Var, eps: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|z| (z + eps).sqrt());
        let needs = self.needs(x);
        self.push(Op::SqrtEps { x }, value, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Mul { a, b }, value, needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Sub { a, b }, value, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.add_scaled(a, b, 1.0)
    }

    pub fn add_scaled(&mut self, a: Var, b: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value + &(c * &self.nodes[b.0].value);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::AddScaled { a, b, c }, value, needs)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let mean = v.sum() / v.len() as f64;
        let needs = self.needs(x);
        self.push(Op::MeanAll { x }, Mat::from_elem((1, 1), mean), needs)
    }

    pub fn sub_const(&mut self, x: Var, t: &Mat) -> Var {
        let value = &self.nodes[x.0].value - t;
        let needs = self.needs(x);
        self.push(Op::SubConst { x }, value, needs)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let from = self.nodes[x.0].value.dim();
        assert_eq!(from.0 * from.1, rows * cols, "reshape must preserve size");
        let value = self.nodes[x.0]
            .value
            .clone()
            .into_shape_with_order((rows, cols))
            .expect("contiguous reshape");
        let needs = self.needs(x);
        self.push(Op::Reshape { x, from }, value, needs)
    }

    pub fn custom(&mut self, x: Var, op: Rc<dyn CustomOp>) -> Var {
        let value = op.forward(&self.nodes[x.0].value);
        let needs = self.needs(x);
        self.push(Op::Custom { x, op }, value, needs)
    }

    /// Reverse pass from a scalar root. Returns per-node gradients; entries
    /// are `None` for nodes that never received one.
    pub fn backward(&self, root: Var) -> Vec<Option<Mat>> {
        assert_eq!(
            self.nodes[root.0].value.dim(),
            (1, 1),
            "backward root must be scalar"
        );
        let root_val = self.nodes[root.0].value[[0, 0]];
        assert!(root_val.is_finite(), "NaN in forward pass");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::from_elem((1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &grad_out, &mut grads);
            grads[idx] = Some(grad_out);
        }
        grads
    }

    fn add_grad(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn accumulate(&self, idx: usize, grad_out: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                if self.needs(*x) {
                    self.add_grad(grads, *x, par_dot(grad_out, self.nodes[w.0].value.view()));
                }
                if self.needs(*w) {
                    self.add_grad(grads, *w, par_t_dot(grad_out, &self.nodes[x.0].value));
                }
                if self.needs(*b) {
                    let col_sum = grad_out.sum_axis(Axis(0));
                    let out = col_sum.len();
                    self.add_grad(
                        grads,
                        *b,
                        col_sum.into_shape_with_order((1, out)).expect("row"),
                    );
                }
            }
            Op::MatmulT { x, w } => {
                if self.needs(*x) {
                    self.add_grad(grads, *x, par_dot(grad_out, self.nodes[w.0].value.view()));
                }
                if self.needs(*w) {
                    self.add_grad(grads, *w, par_t_dot(grad_out, &self.nodes[x.0].value));
                }
            }
            Op::MatmulConst { x, m } => {
                self.add_grad(grads, *x, par_dot(grad_out, m.t()));
            }
            Op::Sin { x, freq } => {
                let d = self.nodes[x.0].value.mapv(|z| freq * (freq * z).cos());
                self.add_grad(grads, *x, grad_out * &d);
            }
            Op::SinDeriv { x, freq } => {
                let d = self.nodes[x.0]
                    .value
                    .mapv(|z| -freq * freq * (freq * z).sin());
                self.add_grad(grads, *x, grad_out * &d);
            }
            Op::Sigmoid { x } => {
                let s = &self.nodes[idx].value;
                let d = s.mapv(|v| v * (1.0 - v));
                self.add_grad(grads, *x, grad_out * &d);
            }
            Op::AffineConst { x, a } => {
                self.add_grad(grads, *x, grad_out * *a);
            }
            Op::Clamp { x, lo, hi } => {
                // zero gradient in the saturated regions
                let input = &self.nodes[x.0].value;
                let mut delta = grad_out.clone();
                for (d, &z) in delta.iter_mut().zip(input.iter()) {
                    if z <= *lo || z >= *hi {
                        *d = 0.0;
                    }
                }
                self.add_grad(grads, *x, delta);
            }
            Op::Abs { x } => {
                // subgradient 0 at the kink (f64::signum(0.0) would be 1)
                let d = self.nodes[x.0]
                    .value
                    .mapv(|z| if z == 0.0 { 0.0 } else { z.signum() });
                self.add_grad(grads, *x, grad_out * &d);
            }
            Op::SqrtEps { x } => {
                let y = &self.nodes[idx].value;
                let d = y.mapv(|v| 0.5 / v);
                self.add_grad(grads, *x, grad_out * &d);
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, grad_out * &self.nodes[b.0].value);
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, grad_out * &self.nodes[a.0].value);
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, grad_out.clone());
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, grad_out * -1.0);
                }
            }
            Op::AddScaled { a, b, c } => {
                if self.needs(*a) {
                    self.add_grad(grads, *a, grad_out.clone());
                }
                if self.needs(*b) {
                    self.add_grad(grads, *b, grad_out * *c);
                }
            }
            Op::MeanAll { x } => {
                let v = &self.nodes[x.0].value;
                let g = grad_out[[0, 0]] / v.len() as f64;
                self.add_grad(grads, *x, Mat::from_elem(v.dim(), g));
            }
            Op::SubConst { x } => {
                self.add_grad(grads, *x, grad_out.clone());
            }
            Op::Reshape { x, from } => {
                let delta = grad_out
                    .clone()
                    .into_shape_with_order(*from)
                    .expect("reshape back");
                self.add_grad(grads, *x, delta);
            }
            Op::Custom { x, op } => {
                self.add_grad(grads, *x, op.vjp(&self.nodes[x.0].value, grad_out));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_mat(r: usize, c: usize, rng: &mut ChaCha12Rng) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference gradient check of `build` at each entry of the
    /// parameter leaves it creates (leaves come first on the tape).
    fn grad_check(build: impl Fn(&mut Tape, &[Mat]) -> Var, params: Vec<Mat>, tol: f64) {
        let mut tape = Tape::new();
        let root = build(&mut tape, &params);
        let grads = tape.backward(root);
        for (pi, p) in params.iter().enumerate() {
            let g = grads[pi].as_ref().expect("param gradient");
            for r in 0..p.dim().0 {
                for c in 0..p.dim().1 {
                    let h = 1e-6;
                    let mut plus = params.clone();
                    plus[pi][[r, c]] += h;
                    let mut minus = params.clone();
                    minus[pi][[r, c]] -= h;
                    let mut tp = Tape::new();
                    let rp = build(&mut tp, &plus);
                    let mut tm = Tape::new();
                    let rm = build(&mut tm, &minus);
                    let fd = (tp.scalar(rp) - tm.scalar(rm)) / (2.0 * h);
                    let ad = g[[r, c]];
                    let scale = ad.abs().max(fd.abs()).max(1e-8);
                    assert!(
                        (ad - fd).abs() / scale < tol,
                        "param {pi} ({r},{c}): ad {ad} fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn squared_norm_gradient_is_the_parameter() {
        // loss = mean(w * w) / 2  =>  dL/dw = w / N
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let w = random_mat(3, 4, &mut rng);
        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let sq = tape.mul(wv, wv);
        let half = tape.affine(sq, 0.5, 0.0);
        let loss = tape.mean_all(half);
        let grads = tape.backward(loss);
        let g = grads[wv.0].as_ref().unwrap();
        for (gv, wv) in g.iter().zip(w.iter()) {
            assert!((gv - wv / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_clamp_blocks_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Mat::from_elem((2, 2), 3.0)); // all above hi
        let c = tape.clamp(w, 0.0, 1.0);
        let loss = tape.mean_all(c);
        let grads = tape.backward(loss);
        let g = grads[w.0].as_ref().unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = random_mat(5, 3, &mut rng);
        let w = random_mat(4, 3, &mut rng);
        let b = random_mat(1, 4, &mut rng);
        grad_check(
            |tape, p| {
                let xv = tape.param(p[0].clone());
                let wv = tape.param(p[1].clone());
                let bv = tape.param(p[2].clone());
                let y = tape.linear(xv, wv, bv);
                let s = tape.sin(y, 1.7);
                tape.mean_all(s)
            },
            vec![x, w, b],
            1e-5,
        );
    }

    #[test]
    fn elementwise_chain_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = random_mat(4, 4, &mut rng);
        let b = random_mat(4, 4, &mut rng);
        grad_check(
            |tape, p| {
                let av = tape.param(p[0].clone());
                let bv = tape.param(p[1].clone());
                let sig = tape.sigmoid(av);
                let prod = tape.mul(sig, bv);
                let diff = tape.sub(prod, av);
                let sq = tape.mul(diff, diff);
                let sqrt = tape.sqrt_eps(sq, 1e-12);
                tape.mean_all(sqrt)
            },
            vec![a, b],
            1e-4,
        );
    }

    #[test]
    fn sin_deriv_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = random_mat(3, 3, &mut rng);
        grad_check(
            |tape, p| {
                let xv = tape.param(p[0].clone());
                let d = tape.sin_deriv(xv, 2.3);
                let sq = tape.mul(d, d);
                tape.mean_all(sq)
            },
            vec![x],
            1e-5,
        );
    }

    #[test]
    fn matmul_and_reshape_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = random_mat(4, 3, &mut rng);
        let w = random_mat(2, 3, &mut rng);
        let mix = Rc::new(random_mat(2, 2, &mut rng));
        grad_check(
            move |tape, p| {
                let xv = tape.param(p[0].clone());
                let wv = tape.param(p[1].clone());
                let y = tape.matmul_t(xv, wv); // 4x2
                let z = tape.matmul_const(y, mix.clone()); // 4x2
                let r = tape.reshape(z, 2, 4);
                let a = tape.abs(r);
                tape.mean_all(a)
            },
            vec![x, w],
            1e-5,
        );
    }

    #[test]
    fn abs_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let w = tape.param(Mat::zeros((2, 2)));
        let a = tape.abs(w);
        let loss = tape.mean_all(a);
        let grads = tape.backward(loss);
        assert!(grads[w.0].as_ref().unwrap().iter().all(|&v| v == 0.0));
    }

    struct DoubleFirstRow;
    impl CustomOp for DoubleFirstRow {
        fn forward(&self, x: &Mat) -> Mat {
            let mut row = Mat::zeros((1, x.dim().1));
            for c in 0..x.dim().1 {
                row[[0, c]] = 2.0 * x[[0, c]];
            }
            row
        }
        fn vjp(&self, x: &Mat, grad_out: &Mat) -> Mat {
            let mut g = Mat::zeros(x.dim());
            for c in 0..x.dim().1 {
                g[[0, c]] = 2.0 * grad_out[[0, c]];
            }
            g
        }
        fn name(&self) -> &'static str {
            "double_first_row"
        }
    }

    #[test]
    fn custom_op_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let x = random_mat(3, 4, &mut rng);
        grad_check(
            |tape, p| {
                let xv = tape.param(p[0].clone());
                let y = tape.custom(xv, Rc::new(DoubleFirstRow));
                let s = tape.mul(y, y);
                tape.mean_all(s)
            },
            vec![x],
            1e-6,
        );
    }

    #[test]
    fn fanout_accumulates_gradients() {
        // w used twice: loss = mean(w * w) + 0.7 * mean(sin(w))
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let w = random_mat(3, 3, &mut rng);
        grad_check(
            |tape, p| {
                let wv = tape.param(p[0].clone());
                let sq = tape.mul(wv, wv);
                let m1 = tape.mean_all(sq);
                let s = tape.sin(wv, 1.0);
                let m2 = tape.mean_all(s);
                tape.add_scaled(m1, m2, 0.7)
            },
            vec![w],
            1e-5,
        );
    }

    #[test]
    fn chunked_matmul_matches_serial() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let a = random_mat(PAR_CHUNK * 2 + 37, 16, &mut rng);
        let b = random_mat(8, 16, &mut rng);
        let par = par_dot(&a, b.t());
        let serial = a.dot(&b.t());
        // identical row blocks, so results agree exactly
        assert_eq!(par, serial);
        let g = random_mat(PAR_CHUNK * 2 + 37, 8, &mut rng);
        let par_t = par_t_dot(&g, &a);
        let serial_t = g.t().dot(&a);
        for (x, y) in par_t.iter().zip(serial_t.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
