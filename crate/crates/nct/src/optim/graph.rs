//! Tape-graph builders for the training losses.
//!
//! The encoder and velocity head are evaluated once per step on the pixel
//! grid (their outputs do not depend on `t`); each sampled time then mixes
//! the Fourier coefficient fields with cheap elementwise ops, so a
//! 20-sample minibatch costs one network forward/backward instead of 20.

use std::rc::Rc;

use ndarray::Array2;

use crate::autodiff::{CustomOp, Mat, Tape, Var};
use crate::neural::{FourierBasis, MlpParams, NeuralSdf};
use crate::projector::{backproject_view, project_view};

/// Parameter leaves of one network, in update order.
#[derive(Debug, Clone)]
pub struct MlpVars {
    /// `(weight, bias)` per layer.
    pub layers: Vec<(Var, Var)>,
}

/// All parameter leaves of the model, in the canonical flattening order
/// (encoder layers then velocity layers, weight before bias).
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: MlpVars,
    pub velocity: MlpVars,
}

impl ModelVars {
    pub fn flat(&self) -> Vec<Var> {
        self.encoder
            .layers
            .iter()
            .chain(self.velocity.layers.iter())
            .flat_map(|(w, b)| [*w, *b])
            .collect()
    }
}

/// Copy the model weights onto the tape as parameter leaves.
pub fn push_params(tape: &mut Tape, model: &NeuralSdf) -> ModelVars {
    let mut push_mlp = |mlp: &MlpParams| MlpVars {
        layers: mlp
            .layers
            .iter()
            .map(|l| {
                let w = tape.param(l.weight.clone());
                let rows = l.bias.len();
                let b = tape.param(
                    l.bias
                        .clone()
                        .into_shape_with_order((1, rows))
                        .expect("bias row"),
                );
                (w, b)
            })
            .collect(),
    };
    ModelVars {
        encoder: push_mlp(&model.encoder),
        velocity: push_mlp(&model.velocity),
    }
}

/// Network outputs on the evaluation grid: value and the analytic
/// input-gradient fields, all as tape nodes.
pub struct GridEval {
    pub value: Var,
    /// `d(value)/dx` and `d(value)/dy`.
    pub jac: [Var; 2],
}

/// Sinusoidal forward pass with in-graph Jacobian propagation. The
/// input-gradient chain uses the same weights as the value chain, so
/// reverse mode through it yields exact weight gradients of
/// gradient-dependent losses.
pub fn forward_on_grid(
    tape: &mut Tape,
    vars: &MlpVars,
    mlp: &MlpParams,
    pts: Var,
) -> GridEval {
    let batch = tape.value(pts).dim().0;
    let in_dim = mlp.input_dim();
    let last = vars.layers.len() - 1;
    let mut act = pts;
    let mut jac: Vec<Var> = (0..in_dim)
        .map(|d| {
            tape.constant(Mat::from_shape_fn((batch, in_dim), |(_, c)| {
                if c == d {
                    1.0
                } else {
                    0.0
                }
            }))
        })
        .collect();
    for (l, (w, b)) in vars.layers.iter().enumerate() {
        let pre = tape.linear(act, *w, *b);
        let jac_pre: Vec<Var> = jac.iter().map(|g| tape.matmul_t(*g, *w)).collect();
        if l == last {
            act = pre;
            jac = jac_pre;
        } else {
            let omega = mlp.layer_omega(l);
            let deriv = tape.sin_deriv(pre, omega);
            act = tape.sin(pre, omega);
            jac = jac_pre.into_iter().map(|g| tape.mul(g, deriv)).collect();
        }
    }
    GridEval {
        value: act,
        jac: [jac[0], jac[1]],
    }
}

/// Combined SDF value at time `t`: encoder plus Fourier-mixed velocity
/// coefficients, `(batch, K)`.
pub fn sdf_at(
    tape: &mut Tape,
    enc: &GridEval,
    vel: &GridEval,
    basis: &FourierBasis,
    t: f64,
    classes: usize,
) -> Var {
    let mix = Rc::new(basis.mix_at(t, classes));
    let vel_t = tape.matmul_const(vel.value, mix);
    tape.add(enc.value, vel_t)
}

/// Spatial gradient components of the combined SDF at time `t`.
pub fn spatial_grad_at(
    tape: &mut Tape,
    enc: &GridEval,
    vel: &GridEval,
    basis: &FourierBasis,
    t: f64,
    classes: usize,
) -> (Var, Var) {
    let mix = Rc::new(basis.mix_at(t, classes));
    let gx_v = tape.matmul_const(vel.jac[0], mix.clone());
    let gy_v = tape.matmul_const(vel.jac[1], mix);
    let gx = tape.add(enc.jac[0], gx_v);
    let gy = tape.add(enc.jac[1], gy_v);
    (gx, gy)
}

/// Temporal derivative of the combined SDF at time `t` (exact trigonometric
/// derivative of the Fourier mix).
pub fn temporal_grad_at(
    tape: &mut Tape,
    vel: &GridEval,
    basis: &FourierBasis,
    t: f64,
    classes: usize,
) -> Var {
    let mix = Rc::new(basis.mix_dt_at(t, classes));
    tape.matmul_const(vel.value, mix)
}

/// `mean | ||grad||_2 - 1 |` over the grid.
pub fn eikonal_term(tape: &mut Tape, gx: Var, gy: Var) -> Var {
    let gx2 = tape.mul(gx, gx);
    let gy2 = tape.mul(gy, gy);
    let sq = tape.add(gx2, gy2);
    let norm = tape.sqrt_eps(sq, 1e-12);
    let dev = tape.affine(norm, 1.0, -1.0);
    let a = tape.abs(dev);
    tape.mean_all(a)
}

/// Spatial and temporal total-variation terms:
/// `mean(|gx| + |gy|)` and `mean |gt|`.
pub fn tv_terms(tape: &mut Tape, gx: Var, gy: Var, gt: Var) -> (Var, Var) {
    let ax = tape.abs(gx);
    let ay = tape.abs(gy);
    let mx = tape.mean_all(ax);
    let my = tape.mean_all(ay);
    let tvs = tape.add(mx, my);
    let at = tape.abs(gt);
    let tvt = tape.mean_all(at);
    (tvs, tvt)
}

/// `mean |sdf - target|` over the grid.
pub fn sdf_l1_term(tape: &mut Tape, sdf: Var, target: &Mat) -> Var {
    let diff = tape.sub_const(sdf, target);
    let a = tape.abs(diff);
    tape.mean_all(a)
}

/// Occupancy `min(1, max(0, mu (sigmoid(f) - 0.5)))` as tape ops.
pub fn occupancy_node(tape: &mut Tape, sdf: Var, mu: f64) -> Var {
    let sig = tape.sigmoid(sdf);
    let scaled = tape.affine(sig, mu, -mu / 2.0);
    tape.clamp(scaled, 0.0, 1.0)
}

/// Differentiable parallel-beam view: linear forward projection whose VJP
/// is the exact adjoint.
pub struct ProjectView {
    pub angle: f64,
    pub k_samp: usize,
}

impl CustomOp for ProjectView {
    fn forward(&self, x: &Mat) -> Mat {
        let row = project_view(x, self.angle, self.k_samp).expect("square image on tape");
        let n = row.len();
        row.into_shape_with_order((1, n)).expect("row shape")
    }

    fn vjp(&self, x: &Mat, grad_out: &Mat) -> Mat {
        backproject_view(grad_out.row(0), self.angle, self.k_samp, x.dim().0)
    }

    fn name(&self) -> &'static str {
        "project_view"
    }
}

/// `mean | r - r_hat |` for one view: render the intensity map from the SDF
/// node, project it at the view angle, and compare with the acquired row.
#[allow(clippy::too_many_arguments)]
pub fn sinogram_term(
    tape: &mut Tape,
    sdf: Var,
    class_intensity: &[f64],
    mu: f64,
    n: usize,
    angle: f64,
    k_samp: usize,
    acquired: &Mat,
) -> Var {
    let occ = occupancy_node(tape, sdf, mu);
    // weight classes by a(k) and sum into one image column
    let k = class_intensity.len();
    let intensity = if k == 1 {
        tape.affine(occ, class_intensity[0], 0.0)
    } else {
        let a = Rc::new(Array2::from_shape_fn((k, 1), |(i, _)| class_intensity[i]));
        tape.matmul_const(occ, a)
    };
    let img = tape.reshape(intensity, n, n);
    let row = tape.custom(img, Rc::new(ProjectView { angle, k_samp }));
    let diff = tape.sub_const(row, acquired);
    let a = tape.abs(diff);
    tape.mean_all(a)
}
