//! Neural implicit SDF: a time-independent sinusoidal encoder plus a
//! velocity head whose outputs are Fourier coefficients of the temporal
//! evolution, evaluable at any continuous `(x, t)`.
//!
//! The representation of class `k` is
//! `g(x,t) = enc_k(x) + (1/M) sum_i A_ik(x) sin(2 pi w_i t) + B_ik(x) cos(2 pi w_i t)`
//! with the frequencies `w_i ~ Normal(0, F_max^2)` drawn once and frozen.
//! All evaluation here is straight-line forward math; training gradients
//! live in [`crate::autodiff`] and [`crate::optim`].

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NctError, Result};
use crate::grid::GridSpec;
use crate::movie::{BinaryMovie, SdfMovie};

pub const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `(out, in)` weight matrix.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Dense network with sinusoidal activations: `sin(omega0 * z)` after the
/// first layer, `sin(z)` after the rest, linear output.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    pub omega0: f64,
}

impl MlpParams {
    /// Sinusoidal-network initialization: layer weights drawn from
    /// `Uniform(+-sqrt(6/fan_in)/omega)` where `omega` is the layer's
    /// activation frequency (`omega0` on the first layer, 1 after).
    pub fn siren(dims: &[usize], omega0: f64, rng: &mut ChaCha12Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let omega = if l == 0 { omega0 } else { 1.0 };
            let limit = (6.0 / fan_in as f64).sqrt() / omega;
            let weight =
                Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..=limit));
            let b_limit = 1.0 / (fan_in as f64).sqrt();
            let bias = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-b_limit..=b_limit));
            layers.push(DenseLayer { weight, bias });
        }
        MlpParams { layers, omega0 }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.dim().1
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.dim().0
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Activation frequency of layer `l`.
    pub fn layer_omega(&self, l: usize) -> f64 {
        if l == 0 {
            self.omega0
        } else {
            1.0
        }
    }

    /// Batched forward pass; `x` is `(batch, input_dim)`.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.dim().1, self.input_dim(), "input dimension mismatch");
        let last = self.layers.len() - 1;
        let mut act = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = act.dot(&layer.weight.t());
            pre += &layer.bias;
            act = if l == last {
                pre
            } else {
                let omega = self.layer_omega(l);
                pre.mapv(|z| (omega * z).sin())
            };
        }
        act
    }

    /// Forward pass returning both the output and the exact Jacobian with
    /// respect to each input coordinate, propagated in closed form through
    /// the sine activations. `jac[d]` is `(batch, output_dim)`.
    pub fn forward_with_jacobian(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let in_dim = self.input_dim();
        assert_eq!(x.dim().1, in_dim, "input dimension mismatch");
        let last = self.layers.len() - 1;
        let mut act = x.clone();
        // jac[d] holds d(act)/d(x_d)
        let mut jac: Vec<Array2<f64>> = (0..in_dim)
            .map(|d| {
                Array2::from_shape_fn(
                    (x.dim().0, in_dim),
                    |(_, c)| if c == d { 1.0 } else { 0.0 },
                )
            })
            .collect();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = act.dot(&layer.weight.t());
            pre += &layer.bias;
            let jac_pre: Vec<Array2<f64>> =
                jac.iter().map(|g| g.dot(&layer.weight.t())).collect();
            if l == last {
                act = pre;
                jac = jac_pre;
            } else {
                let omega = self.layer_omega(l);
                let deriv = pre.mapv(|z| omega * (omega * z).cos());
                act = pre.mapv(|z| (omega * z).sin());
                jac = jac_pre.into_iter().map(|g| g * &deriv).collect();
            }
        }
        (act, jac)
    }
}

/// Frozen random Fourier frequencies of the temporal head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierBasis {
    pub omegas: Vec<f64>,
    pub f_max: f64,
}

impl FourierBasis {
    /// Draw `m` frequencies from `Normal(0, f_max^2)`; they stay frozen for
    /// the lifetime of the model and are serialized with it.
    pub fn sample(m: usize, f_max: f64, rng: &mut ChaCha12Rng) -> Result<Self> {
        if m < 1 {
            return Err(NctError::config("fourier basis needs at least 1 harmonic"));
        }
        // Box-Muller, so rand_distr can stay a dev-only dependency
        let mut omegas = Vec::with_capacity(m);
        while omegas.len() < m {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen::<f64>();
            let r = (-2.0 * u1.ln()).sqrt();
            omegas.push(f_max * r * (TAU * u2).cos());
            if omegas.len() < m {
                omegas.push(f_max * r * (TAU * u2).sin());
            }
        }
        Ok(FourierBasis { omegas, f_max })
    }

    pub fn from_omegas(omegas: Vec<f64>, f_max: f64) -> Result<Self> {
        if omegas.is_empty() {
            return Err(NctError::config("fourier basis needs at least 1 harmonic"));
        }
        Ok(FourierBasis { omegas, f_max })
    }

    pub fn m(&self) -> usize {
        self.omegas.len()
    }

    /// Mixing matrix `(2MK, K)` turning head coefficients into per-class
    /// values at time `t`: the `A` block rows carry `sin(2 pi w_i t)/M`, the
    /// `B` block rows carry `cos(2 pi w_i t)/M`. Column layout of the head
    /// output is `[A(k=0,i=0..M), .., A(k=K-1,..), B(k=0,..), ..]`.
    pub fn mix_at(&self, t: f64, classes: usize) -> Array2<f64> {
        let m = self.m();
        let mut mix = Array2::zeros((2 * m * classes, classes));
        for k in 0..classes {
            for (i, &w) in self.omegas.iter().enumerate() {
                mix[[k * m + i, k]] = (TAU * w * t).sin() / m as f64;
                mix[[m * classes + k * m + i, k]] = (TAU * w * t).cos() / m as f64;
            }
        }
        mix
    }

    /// Time derivative of [`Self::mix_at`].
    pub fn mix_dt_at(&self, t: f64, classes: usize) -> Array2<f64> {
        let m = self.m();
        let mut mix = Array2::zeros((2 * m * classes, classes));
        for k in 0..classes {
            for (i, &w) in self.omegas.iter().enumerate() {
                mix[[k * m + i, k]] = TAU * w * (TAU * w * t).cos() / m as f64;
                mix[[m * classes + k * m + i, k]] = -TAU * w * (TAU * w * t).sin() / m as f64;
            }
        }
        mix
    }
}

/// Temporal evaluation of Fourier coefficient fields:
/// `(1/M) sum_i A_i sin(2 pi w_i t) + B_i cos(2 pi w_i t)` per class.
/// `coeffs` is `(batch, 2*M*K)` in the layout of [`FourierBasis::mix_at`].
pub fn fourier_temporal_eval(
    coeffs: &Array2<f64>,
    basis: &FourierBasis,
    t: f64,
    classes: usize,
) -> Array2<f64> {
    assert_eq!(
        coeffs.dim().1,
        2 * basis.m() * classes,
        "coefficient count must be 2*M*K"
    );
    coeffs.dot(&basis.mix_at(t, classes))
}

/// Anything evaluable as a per-class signed distance field over space-time.
/// Implemented by [`NeuralSdf`] and by lookup-table fields in tests.
pub trait SdfField: Sync {
    fn classes(&self) -> usize;
    /// `(batch, K)` signed distances at the points for time `t`.
    fn eval(&self, pts: &Array2<f64>, t: f64) -> Array2<f64>;
    /// Spatial gradient `(d/dx, d/dy)`, each `(batch, K)`.
    fn spatial_grad(&self, pts: &Array2<f64>, t: f64) -> (Array2<f64>, Array2<f64>);
    /// Temporal derivative, `(batch, K)`.
    fn temporal_grad(&self, pts: &Array2<f64>, t: f64) -> Array2<f64>;
}

/// Architecture hyperparameters for [`NeuralSdf`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub hidden_width: usize,
    pub encoder_hidden: usize,
    pub velocity_hidden: usize,
    /// Harmonic count `M`.
    pub harmonics: usize,
    /// Frequency bandwidth `F_max`.
    pub f_max: f64,
    /// Occupancy sharpness `mu`.
    pub mu: f64,
    pub omega0: f64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            hidden_width: 256,
            encoder_hidden: 3,
            velocity_hidden: 2,
            harmonics: 8,
            f_max: 3.0,
            mu: 50.0,
            omega0: 30.0,
        }
    }
}

/// EncoderNet + VelocityNet weights, the frozen frequency draw, and the
/// rendering constants.
#[derive(Debug, Clone)]
pub struct NeuralSdf {
    pub encoder: MlpParams,
    pub velocity: MlpParams,
    pub basis: FourierBasis,
    pub k: usize,
    pub class_intensity: Vec<f64>,
    pub mu: f64,
    pub seed: u64,
}

impl NeuralSdf {
    pub fn new(cfg: &NeuralConfig, k: usize, class_intensity: Vec<f64>, seed: u64) -> Result<Self> {
        if k < 1 {
            return Err(NctError::config("need at least one object class"));
        }
        if class_intensity.len() != k {
            return Err(NctError::config("class_intensity length must equal K"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let basis = FourierBasis::sample(cfg.harmonics, cfg.f_max, &mut rng)?;
        let mut enc_dims = vec![2];
        enc_dims.extend(std::iter::repeat(cfg.hidden_width).take(cfg.encoder_hidden));
        enc_dims.push(k);
        let mut vel_dims = vec![2];
        vel_dims.extend(std::iter::repeat(cfg.hidden_width).take(cfg.velocity_hidden));
        vel_dims.push(2 * cfg.harmonics * k);
        let encoder = MlpParams::siren(&enc_dims, cfg.omega0, &mut rng);
        let velocity = MlpParams::siren(&vel_dims, cfg.omega0, &mut rng);
        Ok(NeuralSdf {
            encoder,
            velocity,
            basis,
            k,
            class_intensity,
            mu: cfg.mu,
            seed,
        })
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.velocity.num_params()
    }
}

impl SdfField for NeuralSdf {
    fn classes(&self) -> usize {
        self.k
    }

    fn eval(&self, pts: &Array2<f64>, t: f64) -> Array2<f64> {
        let enc = self.encoder.forward(pts);
        let coeffs = self.velocity.forward(pts);
        enc + fourier_temporal_eval(&coeffs, &self.basis, t, self.k)
    }

    fn spatial_grad(&self, pts: &Array2<f64>, t: f64) -> (Array2<f64>, Array2<f64>) {
        let (_, enc_jac) = self.encoder.forward_with_jacobian(pts);
        let (_, vel_jac) = self.velocity.forward_with_jacobian(pts);
        let mix = self.basis.mix_at(t, self.k);
        let gx = &enc_jac[0] + &vel_jac[0].dot(&mix);
        let gy = &enc_jac[1] + &vel_jac[1].dot(&mix);
        (gx, gy)
    }

    fn temporal_grad(&self, pts: &Array2<f64>, t: f64) -> Array2<f64> {
        let coeffs = self.velocity.forward(pts);
        coeffs.dot(&self.basis.mix_dt_at(t, self.k))
    }
}

/// Soft occupancy `zeta(x) = min(1, max(0, mu * (sigmoid(x) - 0.5)))`.
pub fn occupancy(sdf: f64, mu: f64) -> f64 {
    let sig = 1.0 / (1.0 + (-sdf).exp());
    (mu * (sig - 0.5)).clamp(0.0, 1.0)
}

/// Signed distance threshold `f0` solving `mu * (sigmoid(f0) - 0.5) = 0.5`,
/// the level at which occupancy crosses one half.
pub fn occupancy_threshold(mu: f64) -> f64 {
    let target = 0.5 + 0.5 / mu;
    (target / (1.0 - target)).ln()
}

/// Render the spatiotemporal intensity map at time `t`:
/// `I(x) = sum_k a(k) * zeta(f_k(x))` on the pixel grid.
pub fn intensity_map(
    field: &dyn SdfField,
    grid: &GridSpec,
    t: f64,
    class_intensity: &[f64],
    mu: f64,
) -> Array2<f64> {
    let pts = grid.pixel_centers();
    let sdf = field.eval(&pts, t);
    let n = grid.n;
    let mut img = Array2::zeros((n, n));
    for k in 0..field.classes() {
        let a = class_intensity[k];
        for (p, v) in img.iter_mut().enumerate() {
            *v += a * occupancy(sdf[[p, k]], mu);
        }
    }
    img
}

/// Sample the field on pixel centers at each requested time.
pub fn discretize(field: &dyn SdfField, grid: &GridSpec, times: &[f64]) -> SdfMovie {
    use rayon::prelude::*;
    let pts = grid.pixel_centers();
    let n = grid.n;
    let values: Vec<Vec<Array2<f64>>> = times
        .par_iter()
        .map(|&t| {
            let sdf = field.eval(&pts, t);
            (0..field.classes())
                .map(|k| Array2::from_shape_fn((n, n), |(i, j)| sdf[[i * n + j, k]]))
                .collect()
        })
        .collect();
    SdfMovie {
        grid: GridSpec {
            frames: times.len(),
            ..*grid
        },
        values,
    }
}

/// Hard occupancy masks: occupancy above one half.
pub fn binarize(sdf: &SdfMovie, mu: f64) -> BinaryMovie {
    BinaryMovie {
        grid: sdf.grid,
        masks: sdf
            .values
            .iter()
            .map(|per_t| {
                per_t
                    .iter()
                    .map(|f| f.mapv(|v| occupancy(v, mu) > 0.5))
                    .collect()
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------
// checkpoint format: "NCTM" magic, u32 LE header length, JSON header,
// then all weights as little-endian f64 (encoder layers then velocity
// layers, each weight row-major followed by its bias).
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    encoder_dims: Vec<usize>,
    velocity_dims: Vec<usize>,
    omega0: f64,
    m: usize,
    f_max: f64,
    omegas: Vec<f64>,
    k: usize,
    class_intensity: Vec<f64>,
    mu: f64,
    seed: u64,
}

fn mlp_dims(mlp: &MlpParams) -> Vec<usize> {
    let mut dims = vec![mlp.input_dim()];
    dims.extend(mlp.layers.iter().map(|l| l.weight.dim().0));
    dims
}

impl NeuralSdf {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            schema_version: 1,
            encoder_dims: mlp_dims(&self.encoder),
            velocity_dims: mlp_dims(&self.velocity),
            omega0: self.encoder.omega0,
            m: self.basis.m(),
            f_max: self.basis.f_max,
            omegas: self.basis.omegas.clone(),
            k: self.k,
            class_intensity: self.class_intensity.clone(),
            mu: self.mu,
            seed: self.seed,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| NctError::config(format!("checkpoint header: {e}")))?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"NCTM");
        bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        for mlp in [&self.encoder, &self.velocity] {
            for layer in &mlp.layers {
                for v in layer.weight.iter().chain(layer.bias.iter()) {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| NctError::io(dir, e))?;
            }
        }
        fs::write(path, bytes).map_err(|e| NctError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| NctError::io(path, e))?;
        if bytes.len() < 8 || &bytes[0..4] != b"NCTM" {
            return Err(NctError::config(format!(
                "{}: not a model checkpoint",
                path.display()
            )));
        }
        let header_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + header_len])
            .map_err(|e| NctError::config(format!("{}: header: {e}", path.display())))?;
        let mut cursor = 8 + header_len;
        let mut read_f64 = |count: usize| -> Result<Vec<f64>> {
            let end = cursor + count * 8;
            if end > bytes.len() {
                return Err(NctError::config(format!(
                    "{}: truncated payload",
                    path.display()
                )));
            }
            let vals = bytes[cursor..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor = end;
            Ok(vals)
        };
        let mut load_mlp = |dims: &[usize]| -> Result<MlpParams> {
            let mut layers = Vec::new();
            for l in 0..dims.len() - 1 {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let w = read_f64(fan_out * fan_in)?;
                let b = read_f64(fan_out)?;
                layers.push(DenseLayer {
                    weight: Array2::from_shape_vec((fan_out, fan_in), w).expect("dims"),
                    bias: Array1::from_vec(b),
                });
            }
            Ok(MlpParams {
                layers,
                omega0: header.omega0,
            })
        };
        let encoder = load_mlp(&header.encoder_dims)?;
        let velocity = load_mlp(&header.velocity_dims)?;
        Ok(NeuralSdf {
            encoder,
            velocity,
            basis: FourierBasis::from_omegas(header.omegas, header.f_max)?,
            k: header.k,
            class_intensity: header.class_intensity,
            mu: header.mu,
            seed: header.seed,
        })
    }
}
