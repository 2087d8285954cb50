//! Training: direct SDF supervision and sinogram-supervised
//! analysis-by-synthesis.
//!
//! Both loops sample a minibatch of time points per step, assemble the loss
//! on a [`Tape`], take exact reverse-mode gradients, and update with Adam
//! under a step-decayed learning rate. The standalone `loss_*` functions
//! are straight-line evaluations over any [`SdfField`]; the tape builders
//! in [`graph`] compute the same quantities differentiably.

pub mod adam;
pub mod graph;

use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{NctError, Result};
use crate::grid::GridSpec;
use crate::movie::SdfMovie;
use crate::neural::{intensity_map, NeuralSdf, SdfField};
use crate::projector::{project_view, Sinogram};

pub use adam::{Optimizer, OptimizerKind};

/// Regularization weights. `lambda_eik` weighs the Eikonal constraint,
/// `lambda_tvs`/`lambda_tvt` the spatial/temporal total variation in the
/// sinogram-supervised loss, and `lambda_init` the Eikonal term during
/// direct SDF supervision.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_eik: f64,
    pub lambda_tvs: f64,
    pub lambda_tvt: f64,
    pub lambda_init: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_eik: 0.1,
            lambda_tvs: 0.5,
            lambda_tvt: 0.5,
            lambda_init: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_eik < 0.0
            || self.lambda_tvs < 0.0
            || self.lambda_tvt < 0.0
            || self.lambda_init < 0.0
        {
            return Err(NctError::config("loss weights must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub max_iterations: usize,
    pub min_loss: f64,
    /// Time points per minibatch.
    pub minibatch: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-5,
            decay: 0.95,
            decay_every: 200,
            max_iterations: 5000,
            min_loss: 0.08,
            minibatch: 20,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl OptimConfig {
    fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.decay.powi((step / self.decay_every.max(1)) as i32)
    }
}

/// One row of the loss trace. `data` is the SDF term during initialization
/// and the sinogram term during training.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub data: f64,
    pub eikonal: f64,
    pub tvs: f64,
    pub tvt: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub steps: Vec<StepTrace>,
    pub stopped_early: bool,
}

impl FitReport {
    pub fn final_data_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.data)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,lr,total,data,eikonal,tvs,tvt\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.step, s.lr, s.total, s.data, s.eikonal, s.tvs, s.tvt
            ));
        }
        std::fs::write(path, out).map_err(|e| NctError::io(path, e))
    }
}

// ---------------------------------------------------------------------
// straight-line loss evaluations over any SdfField
// ---------------------------------------------------------------------

/// Mean absolute SDF mismatch over the grid, averaged over the frame batch.
pub fn loss_sdf(field: &dyn SdfField, target: &SdfMovie, frames: &[usize]) -> f64 {
    let grid = target.grid;
    let pts = grid.pixel_centers();
    let n = grid.n;
    let mut acc = 0.0;
    for &fi in frames {
        let t = grid.frame_time(fi);
        let vals = field.eval(&pts, t);
        let mut frame_acc = 0.0;
        for k in 0..field.classes() {
            let target_img = &target.values[fi][k];
            for p in 0..n * n {
                frame_acc += (vals[[p, k]] - target_img[[p / n, p % n]]).abs();
            }
        }
        acc += frame_acc / (n * n * field.classes()) as f64;
    }
    acc / frames.len() as f64
}

/// Mean `| ||grad f|| - 1 |` over the grid, averaged over the time batch.
pub fn loss_eikonal(field: &dyn SdfField, grid: &GridSpec, times: &[f64]) -> f64 {
    let pts = grid.pixel_centers();
    let mut acc = 0.0;
    for &t in times {
        let (gx, gy) = field.spatial_grad(&pts, t);
        let mut s = 0.0;
        for (x, y) in gx.iter().zip(gy.iter()) {
            s += ((x * x + y * y).sqrt() - 1.0).abs();
        }
        acc += s / gx.len() as f64;
    }
    acc / times.len() as f64
}

/// Spatial and temporal total-variation losses averaged over the batch.
pub fn loss_tv(field: &dyn SdfField, grid: &GridSpec, times: &[f64]) -> (f64, f64) {
    let pts = grid.pixel_centers();
    let (mut acc_s, mut acc_t) = (0.0, 0.0);
    for &t in times {
        let (gx, gy) = field.spatial_grad(&pts, t);
        let gt = field.temporal_grad(&pts, t);
        acc_s += gx
            .iter()
            .zip(gy.iter())
            .map(|(x, y)| x.abs() + y.abs())
            .sum::<f64>()
            / gx.len() as f64;
        acc_t += gt.iter().map(|v| v.abs()).sum::<f64>() / gt.len() as f64;
    }
    (acc_s / times.len() as f64, acc_t / times.len() as f64)
}

/// Mean absolute sinogram mismatch over the view batch: render the
/// intensity map at each view time, project at the view angle, compare.
pub fn loss_sinogram(
    field: &dyn SdfField,
    sino: &Sinogram,
    grid: &GridSpec,
    views: &[usize],
    class_intensity: &[f64],
    mu: f64,
    k_samp: usize,
) -> f64 {
    let mut acc = 0.0;
    for &j in views {
        let t = sino.schedule.view_time(j);
        let img = intensity_map(field, grid, t, class_intensity, mu);
        let row = project_view(&img, sino.schedule.view_angle(j), k_samp)
            .expect("grid images are square");
        let mut s = 0.0;
        for (d, r) in row.iter().enumerate() {
            s += (sino.rows[[j, d]] - r).abs();
        }
        acc += s / row.len() as f64;
    }
    acc / views.len() as f64
}

// ---------------------------------------------------------------------
// model parameter flattening (canonical order shared with graph::push_params)
// ---------------------------------------------------------------------

/// Copy all model weights into the canonical parameter vector.
pub fn model_param_mats(model: &NeuralSdf) -> Vec<Mat> {
    let mut out = Vec::new();
    for mlp in [&model.encoder, &model.velocity] {
        for l in &mlp.layers {
            out.push(l.weight.clone());
            let rows = l.bias.len();
            out.push(
                l.bias
                    .clone()
                    .into_shape_with_order((1, rows))
                    .expect("bias row"),
            );
        }
    }
    out
}

/// Write a canonical parameter vector back into the model.
pub fn set_model_params(model: &mut NeuralSdf, params: &[Mat]) {
    let mut it = params.iter();
    for mlp in [&mut model.encoder, &mut model.velocity] {
        for l in mlp.layers.iter_mut() {
            l.weight.assign(it.next().expect("weight"));
            let b = it.next().expect("bias");
            for (dst, src) in l.bias.iter_mut().zip(b.iter()) {
                *dst = *src;
            }
        }
    }
    assert!(it.next().is_none(), "parameter count mismatch");
}

// ---------------------------------------------------------------------
// loss graphs
// ---------------------------------------------------------------------

struct BuiltLoss {
    total: Var,
    data: Var,
    eikonal: Var,
    tvs: Var,
    tvt: Var,
    params: Vec<Var>,
}

fn flatten_target(target: &SdfMovie, fi: usize) -> Mat {
    let n = target.grid.n;
    let k = target.classes();
    Array2::from_shape_fn((n * n, k), |(p, c)| target.values[fi][c][[p / n, p % n]])
}

/// Direct SDF supervision (initialization): `L = L_SDF + lambda L_Eikonal`.
fn build_initial_loss(
    tape: &mut Tape,
    model: &NeuralSdf,
    target: &SdfMovie,
    frames: &[usize],
    weights: &LossWeights,
) -> BuiltLoss {
    let vars = graph::push_params(tape, model);
    let pts = tape.constant(target.grid.pixel_centers());
    let enc = graph::forward_on_grid(tape, &vars.encoder, &model.encoder, pts);
    let vel = graph::forward_on_grid(tape, &vars.velocity, &model.velocity, pts);

    let mut acc_sdf: Option<Var> = None;
    let mut acc_eik: Option<Var> = None;
    for &fi in frames {
        let t = target.grid.frame_time(fi);
        let sdf = graph::sdf_at(tape, &enc, &vel, &model.basis, t, model.k);
        let target_flat = flatten_target(target, fi);
        let l_sdf = graph::sdf_l1_term(tape, sdf, &target_flat);
        let (gx, gy) = graph::spatial_grad_at(tape, &enc, &vel, &model.basis, t, model.k);
        let l_eik = graph::eikonal_term(tape, gx, gy);
        acc_sdf = Some(match acc_sdf {
            Some(a) => tape.add(a, l_sdf),
            None => l_sdf,
        });
        acc_eik = Some(match acc_eik {
            Some(a) => tape.add(a, l_eik),
            None => l_eik,
        });
    }
    let inv = 1.0 / frames.len() as f64;
    let data = tape.affine(acc_sdf.expect("nonempty batch"), inv, 0.0);
    let eikonal = tape.affine(acc_eik.expect("nonempty batch"), inv, 0.0);
    let total = tape.add_scaled(data, eikonal, weights.lambda_init);
    // TV terms are not part of the initialization loss; report zeros
    let zero = tape.constant(Mat::zeros((1, 1)));
    BuiltLoss {
        total,
        data,
        eikonal,
        tvs: zero,
        tvt: zero,
        params: vars.flat(),
    }
}

/// Analysis-by-synthesis loss:
/// `L = L_Sinogram + l1 L_Eikonal + l2 L_TVS + l3 L_TVT`.
fn build_sinogram_loss(
    tape: &mut Tape,
    model: &NeuralSdf,
    sino: &Sinogram,
    grid: &GridSpec,
    views: &[usize],
    weights: &LossWeights,
    k_samp: usize,
) -> BuiltLoss {
    let vars = graph::push_params(tape, model);
    let pts = tape.constant(grid.pixel_centers());
    let enc = graph::forward_on_grid(tape, &vars.encoder, &model.encoder, pts);
    let vel = graph::forward_on_grid(tape, &vars.velocity, &model.velocity, pts);

    let n = grid.n;
    let (mut acc_sino, mut acc_eik, mut acc_tvs, mut acc_tvt): (
        Option<Var>,
        Option<Var>,
        Option<Var>,
        Option<Var>,
    ) = (None, None, None, None);
    let fold = |tape: &mut Tape, acc: &mut Option<Var>, term: Var| {
        *acc = Some(match acc.take() {
            Some(a) => tape.add(a, term),
            None => term,
        });
    };
    for &j in views {
        let t = sino.schedule.view_time(j);
        let angle = sino.schedule.view_angle(j);
        let sdf = graph::sdf_at(tape, &enc, &vel, &model.basis, t, model.k);
        let acquired = sino
            .rows
            .row(j)
            .to_owned()
            .into_shape_with_order((1, sino.n_det()))
            .expect("row");
        let l_sino = graph::sinogram_term(
            tape,
            sdf,
            &model.class_intensity,
            model.mu,
            n,
            angle,
            k_samp,
            &acquired,
        );
        let (gx, gy) = graph::spatial_grad_at(tape, &enc, &vel, &model.basis, t, model.k);
        let gt = graph::temporal_grad_at(tape, &vel, &model.basis, t, model.k);
        let l_eik = graph::eikonal_term(tape, gx, gy);
        let (l_tvs, l_tvt) = graph::tv_terms(tape, gx, gy, gt);
        fold(tape, &mut acc_sino, l_sino);
        fold(tape, &mut acc_eik, l_eik);
        fold(tape, &mut acc_tvs, l_tvs);
        fold(tape, &mut acc_tvt, l_tvt);
    }
    let inv = 1.0 / views.len() as f64;
    let data = tape.affine(acc_sino.expect("nonempty batch"), inv, 0.0);
    let eikonal = tape.affine(acc_eik.expect("nonempty batch"), inv, 0.0);
    let tvs = tape.affine(acc_tvs.expect("nonempty batch"), inv, 0.0);
    let tvt = tape.affine(acc_tvt.expect("nonempty batch"), inv, 0.0);
    let mut total = tape.add_scaled(data, eikonal, weights.lambda_eik);
    total = tape.add_scaled(total, tvs, weights.lambda_tvs);
    total = tape.add_scaled(total, tvt, weights.lambda_tvt);
    BuiltLoss {
        total,
        data,
        eikonal,
        tvs,
        tvt,
        params: vars.flat(),
    }
}

/// Scalar value of the full analysis-by-synthesis loss for the given view
/// batch (used by the finite-difference gradient checks).
pub fn alg4_loss_value(
    model: &NeuralSdf,
    sino: &Sinogram,
    grid: &GridSpec,
    views: &[usize],
    weights: &LossWeights,
    k_samp: usize,
) -> f64 {
    let mut tape = Tape::new();
    let built = build_sinogram_loss(&mut tape, model, sino, grid, views, weights, k_samp);
    tape.scalar(built.total)
}

/// Value and exact reverse-mode gradients (canonical parameter order) of
/// the full analysis-by-synthesis loss.
pub fn alg4_gradients(
    model: &NeuralSdf,
    sino: &Sinogram,
    grid: &GridSpec,
    views: &[usize],
    weights: &LossWeights,
    k_samp: usize,
) -> (f64, Vec<Mat>) {
    let mut tape = Tape::new();
    let built = build_sinogram_loss(&mut tape, model, sino, grid, views, weights, k_samp);
    let value = tape.scalar(built.total);
    let grads = tape.backward(built.total);
    let out = built
        .params
        .iter()
        .map(|v| {
            grads[v.0]
                .clone()
                .unwrap_or_else(|| Mat::zeros(tape.value(*v).dim()))
        })
        .collect();
    (value, out)
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients of the full analysis-by-synthesis loss, over every parameter
/// entry.
///
/// The loss is piecewise smooth (occupancy clamp, absolute values), so a
/// difference window that straddles a kink measures a blend of two
/// segments rather than the local slope; each entry therefore takes the
/// best agreement over shrinking windows. Relative errors are floored by
/// a fraction of the largest gradient so near-zero entries don't amplify
/// f64 cancellation noise.
pub fn max_grad_check_error(
    model: &NeuralSdf,
    sino: &Sinogram,
    grid: &GridSpec,
    views: &[usize],
    weights: &LossWeights,
    k_samp: usize,
) -> f64 {
    let (_, grads) = alg4_gradients(model, sino, grid, views, weights, k_samp);
    let params = model_param_mats(model);
    let gmax = grads
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    let floor = (1e-6 * gmax).max(1e-12);
    let mut max_rel = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for r in 0..p.dim().0 {
            for c in 0..p.dim().1 {
                let ad = grads[pi][[r, c]];
                let mut best = f64::INFINITY;
                for h in [1e-6, 1e-7, 1e-8] {
                    let mut pp = params.clone();
                    pp[pi][[r, c]] += h;
                    let mut m_plus = model.clone();
                    set_model_params(&mut m_plus, &pp);
                    let f_plus = alg4_loss_value(&m_plus, sino, grid, views, weights, k_samp);
                    let mut pm = params.clone();
                    pm[pi][[r, c]] -= h;
                    let mut m_minus = model.clone();
                    set_model_params(&mut m_minus, &pm);
                    let f_minus = alg4_loss_value(&m_minus, sino, grid, views, weights, k_samp);
                    let fd = (f_plus - f_minus) / (2.0 * h);
                    let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(floor);
                    best = best.min(rel);
                    if best < 1e-5 {
                        break;
                    }
                }
                max_rel = max_rel.max(best);
            }
        }
    }
    max_rel
}

// ---------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------

fn sample_batch(rng: &mut ChaCha12Rng, total: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, total, count.min(total)).into_vec()
}

/// Initialize the neural SDF against an explicit SDF movie (direct
/// supervision with the Eikonal regularizer).
pub fn fit_initial(
    model: &mut NeuralSdf,
    target: &SdfMovie,
    cfg: &OptimConfig,
    weights: &LossWeights,
) -> Result<FitReport> {
    weights.validate()?;
    if target.classes() != model.k {
        return Err(NctError::config("target class count differs from model"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut params = model_param_mats(model);
    let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.dim()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, &shapes);
    let mut report = FitReport::default();

    for step in 0..cfg.max_iterations {
        let frames = sample_batch(&mut rng, target.values.len(), cfg.minibatch);
        set_model_params(model, &params);
        let mut tape = Tape::new();
        let built = build_initial_loss(&mut tape, model, target, &frames, weights);
        let total = tape.scalar(built.total);
        if !total.is_finite() {
            return Err(NctError::numeric(
                "fit_initial",
                format!("non-finite loss at step {step}"),
            ));
        }
        let grads = tape.backward(built.total);
        let lr = cfg.lr_at(step);
        report.steps.push(StepTrace {
            step,
            lr,
            total,
            data: tape.scalar(built.data),
            eikonal: tape.scalar(built.eikonal),
            tvs: 0.0,
            tvt: 0.0,
        });
        let grad_mats: Vec<Mat> = built
            .params
            .iter()
            .map(|v| {
                grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Mat::zeros(tape.value(*v).dim()))
            })
            .collect();
        opt.update(&mut params, &grad_mats, lr);
    }
    set_model_params(model, &params);
    Ok(report)
}

/// Optimize the neural SDF to explain the acquired sinogram. Stops early
/// once the sinogram term drops below `cfg.min_loss`. Checkpoints land in
/// `checkpoint_dir` every 500 steps, plus the last finite state if the
/// loss ever turns non-finite.
pub fn fit_sinogram(
    model: &mut NeuralSdf,
    sino: &Sinogram,
    grid: &GridSpec,
    cfg: &OptimConfig,
    weights: &LossWeights,
    k_samp: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<FitReport> {
    weights.validate()?;
    if sino.n_det() != grid.n {
        return Err(NctError::config(
            "sinogram detector count differs from the grid",
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut params = model_param_mats(model);
    let mut prev_params = params.clone();
    let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.dim()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, &shapes);
    let mut report = FitReport::default();

    for step in 0..cfg.max_iterations {
        let views = sample_batch(&mut rng, sino.schedule.n_views, cfg.minibatch);
        set_model_params(model, &params);
        let mut tape = Tape::new();
        let built = build_sinogram_loss(&mut tape, model, sino, grid, &views, weights, k_samp);
        let total = tape.scalar(built.total);
        if !total.is_finite() {
            if let Some(dir) = checkpoint_dir {
                set_model_params(model, &prev_params);
                model.save(&dir.join("last_finite.nctm"))?;
            }
            return Err(NctError::numeric(
                "fit_sinogram",
                format!("non-finite loss at step {step}"),
            ));
        }
        let data = tape.scalar(built.data);
        let lr = cfg.lr_at(step);
        report.steps.push(StepTrace {
            step,
            lr,
            total,
            data,
            eikonal: tape.scalar(built.eikonal),
            tvs: tape.scalar(built.tvs),
            tvt: tape.scalar(built.tvt),
        });
        let grads = tape.backward(built.total);
        let grad_mats: Vec<Mat> = built
            .params
            .iter()
            .map(|v| {
                grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Mat::zeros(tape.value(*v).dim()))
            })
            .collect();
        prev_params.clone_from(&params);
        opt.update(&mut params, &grad_mats, lr);

        if let Some(dir) = checkpoint_dir {
            if (step + 1) % 500 == 0 {
                set_model_params(model, &params);
                model.save(&dir.join(format!("checkpoint_{:05}.nctm", step + 1)))?;
            }
        }
        if data < cfg.min_loss {
            report.stopped_early = true;
            break;
        }
    }
    set_model_params(model, &params);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{occupancy_threshold, NeuralConfig};
    use crate::projector::{render_sinogram, GantrySchedule};
    use crate::scene::{make_translating_circle, CircleScene};

    fn toy_model(seed: u64) -> NeuralSdf {
        let cfg = NeuralConfig {
            hidden_width: 16,
            encoder_hidden: 2,
            velocity_hidden: 2,
            harmonics: 2,
            f_max: 2.0,
            mu: 50.0,
            omega0: 30.0,
        };
        NeuralSdf::new(&cfg, 1, vec![1.0], seed).unwrap()
    }

    /// Static planar field f = x with unit gradient.
    struct PlanarField;
    impl SdfField for PlanarField {
        fn classes(&self) -> usize {
            1
        }
        fn eval(&self, pts: &Array2<f64>, _t: f64) -> Array2<f64> {
            Array2::from_shape_fn((pts.dim().0, 1), |(p, _)| pts[[p, 0]])
        }
        fn spatial_grad(&self, pts: &Array2<f64>, _t: f64) -> (Array2<f64>, Array2<f64>) {
            (
                Array2::from_elem((pts.dim().0, 1), 1.0),
                Array2::zeros((pts.dim().0, 1)),
            )
        }
        fn temporal_grad(&self, pts: &Array2<f64>, _t: f64) -> Array2<f64> {
            Array2::zeros((pts.dim().0, 1))
        }
    }

    /// f = c * t everywhere: constant in space, linear in time.
    struct LinearTimeField(f64);
    impl SdfField for LinearTimeField {
        fn classes(&self) -> usize {
            1
        }
        fn eval(&self, pts: &Array2<f64>, t: f64) -> Array2<f64> {
            Array2::from_elem((pts.dim().0, 1), self.0 * t)
        }
        fn spatial_grad(&self, pts: &Array2<f64>, _t: f64) -> (Array2<f64>, Array2<f64>) {
            (
                Array2::zeros((pts.dim().0, 1)),
                Array2::zeros((pts.dim().0, 1)),
            )
        }
        fn temporal_grad(&self, pts: &Array2<f64>, _t: f64) -> Array2<f64> {
            Array2::from_elem((pts.dim().0, 1), self.0)
        }
    }

    struct CircleField {
        center: (f64, f64),
        radius: f64,
    }
    impl SdfField for CircleField {
        fn classes(&self) -> usize {
            1
        }
        fn eval(&self, pts: &Array2<f64>, _t: f64) -> Array2<f64> {
            Array2::from_shape_fn((pts.dim().0, 1), |(p, _)| {
                let dx = pts[[p, 0]] - self.center.0;
                let dy = pts[[p, 1]] - self.center.1;
                self.radius - (dx * dx + dy * dy).sqrt()
            })
        }
        fn spatial_grad(&self, pts: &Array2<f64>, _t: f64) -> (Array2<f64>, Array2<f64>) {
            let mut gx = Array2::zeros((pts.dim().0, 1));
            let mut gy = Array2::zeros((pts.dim().0, 1));
            for p in 0..pts.dim().0 {
                let dx = pts[[p, 0]] - self.center.0;
                let dy = pts[[p, 1]] - self.center.1;
                let d = (dx * dx + dy * dy).sqrt().max(1e-12);
                gx[[p, 0]] = -dx / d;
                gy[[p, 0]] = -dy / d;
            }
            (gx, gy)
        }
        fn temporal_grad(&self, pts: &Array2<f64>, _t: f64) -> Array2<f64> {
            Array2::zeros((pts.dim().0, 1))
        }
    }

    #[test]
    fn loss_sdf_trivials_and_oracle() {
        let grid = GridSpec::new(16, 4).unwrap();
        let field = CircleField {
            center: (0.0, 0.0),
            radius: 0.4,
        };
        // target that equals the field exactly: loss 0
        let target = crate::neural::discretize(&field, &grid, &[0.0, 0.33, 0.67, 1.0]);
        let frames = [0usize, 1, 2, 3];
        assert!(loss_sdf(&field, &target, &frames).abs() < 1e-12);

        // target shifted by a constant c: loss = |c|
        let mut shifted = target.clone();
        for per_t in shifted.values.iter_mut() {
            for img in per_t.iter_mut() {
                img.mapv_inplace(|v| v + 0.3);
            }
        }
        let l = loss_sdf(&field, &shifted, &frames);
        assert!((l - 0.3).abs() < 1e-12, "{l}");

        // random pair vs a straight-line double-loop oracle
        let model = toy_model(3);
        let l_impl = loss_sdf(&model, &target, &[1, 2]);
        let pts = grid.pixel_centers();
        let mut oracle = 0.0;
        for &fi in &[1usize, 2] {
            let t = grid.frame_time(fi);
            let vals = model.eval(&pts, t);
            let mut s = 0.0;
            for p in 0..256 {
                s += (vals[[p, 0]] - target.values[fi][0][[p / 16, p % 16]]).abs();
            }
            oracle += s / 256.0;
        }
        oracle /= 2.0;
        assert!((l_impl - oracle).abs() < 1e-9);
    }

    #[test]
    fn loss_eikonal_trivials() {
        let grid = GridSpec::new(32, 2).unwrap();
        // planar SDF: exactly satisfied
        assert!(loss_eikonal(&PlanarField, &grid, &[0.0, 0.5]) < 1e-12);
        // constant field: |0 - 1| = 1
        let l = loss_eikonal(&LinearTimeField(0.0), &grid, &[0.2]);
        assert!((l - 1.0).abs() < 1e-12);
        // analytic circle lookup: near zero (center is off pixel centers)
        let field = CircleField {
            center: (0.013, -0.007),
            radius: 0.5,
        };
        let l = loss_eikonal(&field, &grid, &[0.0]);
        assert!(l < 0.02, "{l}");
    }

    #[test]
    fn loss_tv_trivials() {
        let grid = GridSpec::new(16, 2).unwrap();
        let (tvs, tvt) = loss_tv(&LinearTimeField(0.0), &grid, &[0.1, 0.6]);
        assert_eq!((tvs, tvt), (0.0, 0.0));
        // static circle: tvt = 0, tvs = mean |gx|+|gy| > 0
        let circle = CircleField {
            center: (0.0, 0.0),
            radius: 0.4,
        };
        let (tvs, tvt) = loss_tv(&circle, &grid, &[0.5]);
        assert_eq!(tvt, 0.0);
        assert!(tvs > 0.5);
        // linear-in-time field: tvt = |c|
        let (_, tvt) = loss_tv(&LinearTimeField(-1.7), &grid, &[0.3]);
        assert!((tvt - 1.7).abs() < 1e-12);
    }

    /// Per-pixel lookup field whose occupancy reproduces a movie exactly:
    /// sdf = logit of the inverted occupancy at the nearest frame.
    struct MovieField {
        movie: crate::movie::IntensityMovie,
        mu: f64,
    }
    impl SdfField for MovieField {
        fn classes(&self) -> usize {
            1
        }
        fn eval(&self, pts: &Array2<f64>, t: f64) -> Array2<f64> {
            let grid = self.movie.grid;
            let frame = &self.movie.frames[grid.nearest_frame(t)];
            let n = grid.n;
            Array2::from_shape_fn((pts.dim().0, 1), |(p, _)| {
                // invert zeta: v = mu (sigmoid(f) - 0.5), clamped
                let v = frame[[p / n, p % n]].clamp(1e-9, 1.0 - 1e-9);
                let sig = (v / self.mu + 0.5).clamp(1e-9, 1.0 - 1e-9);
                (sig / (1.0 - sig)).ln()
            })
        }
        fn spatial_grad(&self, pts: &Array2<f64>, _t: f64) -> (Array2<f64>, Array2<f64>) {
            (
                Array2::zeros((pts.dim().0, 1)),
                Array2::zeros((pts.dim().0, 1)),
            )
        }
        fn temporal_grad(&self, pts: &Array2<f64>, _t: f64) -> Array2<f64> {
            Array2::zeros((pts.dim().0, 1))
        }
    }

    fn circle_sinogram(n: usize, views: usize) -> (crate::movie::IntensityMovie, Sinogram) {
        let grid = GridSpec::new(n, views).unwrap();
        let movie = make_translating_circle(
            &CircleScene {
                radius: 0.25,
                orbit_radius: 0.3,
                displacement_deg: 40.0,
            },
            &grid,
        )
        .unwrap();
        let schedule = GantrySchedule::new(views, 1).unwrap();
        let sino = render_sinogram(&movie, &schedule, 2).unwrap();
        (movie, sino)
    }

    #[test]
    fn loss_sinogram_of_exact_reproduction_is_tiny() {
        let (movie, sino) = circle_sinogram(32, 48);
        let field = MovieField {
            movie: movie.clone(),
            mu: 50.0,
        };
        let views: Vec<usize> = (0..48).step_by(5).collect();
        let l = loss_sinogram(&field, &sino, &movie.grid, &views, &[1.0], 50.0, 2);
        assert!(l < 1e-3, "{l}");
    }

    #[test]
    fn loss_sinogram_zero_against_zero() {
        let grid = GridSpec::new(16, 4).unwrap();
        let schedule = GantrySchedule::new(16, 1).unwrap();
        let sino = Sinogram {
            rows: Array2::zeros((16, 16)),
            schedule,
        };
        // a field far outside the FOV renders black
        let field = CircleField {
            center: (9.0, 9.0),
            radius: 0.1,
        };
        let l = loss_sinogram(&field, &sino, &grid, &[0, 5, 9], &[1.0], 50.0, 2);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn doubling_intensity_doubles_the_rendered_rows() {
        let (movie, sino) = circle_sinogram(32, 48);
        let field = CircleField {
            center: (0.3, 0.0),
            radius: 0.25,
        };
        let views = [0usize, 10, 20];
        // |2r - 2r_hat| = 2 |r - r_hat| by projector linearity
        let mut doubled = sino.clone();
        doubled.rows.mapv_inplace(|v| 2.0 * v);
        let l1 = loss_sinogram(&field, &sino, &movie.grid, &views, &[1.0], 50.0, 2);
        let l2 = loss_sinogram(&field, &doubled, &movie.grid, &views, &[2.0], 50.0, 2);
        assert!((l2 - 2.0 * l1).abs() < 1e-9, "{l2} vs {}", 2.0 * l1);
    }

    #[test]
    fn tape_losses_match_the_field_evaluations() {
        let (movie, sino) = circle_sinogram(16, 20);
        let model = toy_model(7);
        let views = [0usize, 7, 13];
        let weights = LossWeights::default();
        let mut tape = Tape::new();
        let built = build_sinogram_loss(&mut tape, &model, &sino, &movie.grid, &views, &weights, 2);
        let times: Vec<f64> = views.iter().map(|&j| sino.schedule.view_time(j)).collect();
        let l_sino = loss_sinogram(&model, &sino, &movie.grid, &views, &[1.0], model.mu, 2);
        let l_eik = loss_eikonal(&model, &movie.grid, &times);
        let (l_tvs, l_tvt) = loss_tv(&model, &movie.grid, &times);
        assert!((tape.scalar(built.data) - l_sino).abs() < 1e-9);
        assert!((tape.scalar(built.eikonal) - l_eik).abs() < 1e-9);
        assert!((tape.scalar(built.tvs) - l_tvs).abs() < 1e-9);
        assert!((tape.scalar(built.tvt) - l_tvt).abs() < 1e-9);
        let expect_total = l_sino + 0.1 * l_eik + 0.5 * l_tvs + 0.5 * l_tvt;
        assert!((tape.scalar(built.total) - expect_total).abs() < 1e-9);
    }

    #[test]
    fn full_loss_gradients_match_central_differences() {
        // scaled-down mirror of the acceptance gradient check
        let (movie, sino) = circle_sinogram(16, 20);
        let model = toy_model(11);
        let views = [2usize, 9, 15];
        let weights = LossWeights::default();
        let max_rel = max_grad_check_error(&model, &sino, &movie.grid, &views, &weights, 2);
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn zero_iterations_leaves_the_model_unchanged() {
        let mut model = toy_model(13);
        let before = model_param_mats(&model);
        let grid = GridSpec::new(16, 4).unwrap();
        let field = CircleField {
            center: (0.0, 0.0),
            radius: 0.4,
        };
        let target = crate::neural::discretize(&field, &grid, &[0.0, 0.5, 1.0, 1.0]);
        let cfg = OptimConfig {
            max_iterations: 0,
            ..OptimConfig::default()
        };
        fit_initial(&mut model, &target, &cfg, &LossWeights::default()).unwrap();
        let after = model_param_mats(&model);
        for (a, b) in before.iter().zip(after.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn short_fit_reduces_the_sdf_loss() {
        let mut model = toy_model(17);
        let grid = GridSpec::new(16, 6).unwrap();
        let field = CircleField {
            center: (0.1, 0.0),
            radius: 0.4,
        };
        let times: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let target = crate::neural::discretize(&field, &grid, &times);
        let cfg = OptimConfig {
            lr: 3e-4,
            max_iterations: 60,
            minibatch: 3,
            seed: 5,
            ..OptimConfig::default()
        };
        let report = fit_initial(&mut model, &target, &cfg, &LossWeights::default()).unwrap();
        assert!(report.steps.iter().all(|s| s.total.is_finite()));
        let first = report.steps.first().unwrap().data;
        let last = report.steps.last().unwrap().data;
        assert!(last <= first, "no descent: {first} -> {last}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let grid = GridSpec::new(16, 6).unwrap();
        let field = CircleField {
            center: (0.0, 0.0),
            radius: 0.35,
        };
        let times: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let target = crate::neural::discretize(&field, &grid, &times);
        let cfg = OptimConfig {
            lr: 1e-4,
            max_iterations: 25,
            minibatch: 4,
            seed: 9,
            ..OptimConfig::default()
        };
        let mut m1 = toy_model(19);
        let mut m2 = toy_model(19);
        fit_initial(&mut m1, &target, &cfg, &LossWeights::default()).unwrap();
        fit_initial(&mut m2, &target, &cfg, &LossWeights::default()).unwrap();
        for (a, b) in model_param_mats(&m1).iter().zip(model_param_mats(&m2).iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn converged_model_stops_after_one_step() {
        // sinogram rendered from the model itself: data loss starts ~0
        let grid = GridSpec::new(16, 3).unwrap();
        let model = toy_model(23);
        let schedule = GantrySchedule::new(16, 1).unwrap();
        let times: Vec<f64> = (0..16).map(|j| schedule.view_time(j)).collect();
        let mut rows = Array2::zeros((16, 16));
        for (j, &t) in times.iter().enumerate() {
            let img = intensity_map(&model, &grid, t, &[1.0], model.mu);
            let row = project_view(&img, schedule.view_angle(j), 2).unwrap();
            for d in 0..16 {
                rows[[j, d]] = row[d];
            }
        }
        let sino = Sinogram { rows, schedule };
        let mut m = model.clone();
        let cfg = OptimConfig {
            max_iterations: 100,
            minibatch: 4,
            ..OptimConfig::default()
        };
        let report =
            fit_sinogram(&mut m, &sino, &grid, &cfg, &LossWeights::default(), 2, None).unwrap();
        assert!(report.stopped_early);
        assert_eq!(report.steps.len(), 1);
    }

    #[test]
    fn losses_are_nonnegative() {
        let (movie, sino) = circle_sinogram(16, 20);
        for seed in 0..4 {
            let model = toy_model(100 + seed);
            let times = [0.0, 0.5];
            assert!(loss_eikonal(&model, &movie.grid, &times) >= 0.0);
            let (tvs, tvt) = loss_tv(&model, &movie.grid, &times);
            assert!(tvs >= 0.0 && tvt >= 0.0);
            let l = loss_sinogram(&model, &sino, &movie.grid, &[0, 5], &[1.0], 50.0, 2);
            assert!(l >= 0.0);
        }
    }

    #[test]
    fn binarize_threshold_is_consistent_with_training_occupancy() {
        // occupancy_node and occupancy agree, so the exported masks use the
        // same threshold the loss saw
        let mut tape = Tape::new();
        let f0 = occupancy_threshold(50.0);
        let vals = Mat::from_shape_fn((1, 5), |(_, c)| f0 + (c as f64 - 2.0) * 1e-3);
        let v = tape.constant(vals.clone());
        let occ = graph::occupancy_node(&mut tape, v, 50.0);
        for (c, &sdf) in vals.row(0).iter().enumerate() {
            let direct = crate::neural::occupancy(sdf, 50.0);
            assert!((tape.value(occ)[[0, c]] - direct).abs() < 1e-12);
        }
    }
}
