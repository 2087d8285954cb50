//! End-to-end reconstruction: FBP initialization, segmentation and SDF
//! conversion, direct SDF fit, sinogram-supervised training, and a
//! refinement pass that re-enters the SDF conversion on the binarized
//! first prediction. Also the evaluation metrics (per-frame MSE and Dice).

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NctError, Result};
use crate::fbp::{fbp_movie, FbpConfig};
use crate::grid::GridSpec;
use crate::initseg::{binary_to_sdf, gmm_segment, SdfChainParams};
use crate::movie::IntensityMovie;
use crate::neural::{binarize, discretize, intensity_map, NeuralConfig, NeuralSdf};
use crate::optim::{fit_initial, fit_sinogram, FitReport, LossWeights, OptimConfig};
use crate::projector::Sinogram;

/// How the per-class attenuation `a(k)` is chosen.
///
/// `Fixed` is the default: the phantoms are unit-attenuation objects and
/// motion only dilutes FBP intensities, so the GMM mean underestimates
/// badly under fast motion. `GmmMean` uses the mean intensity of the
/// segmented class instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum IntensityMode {
    Fixed(f64),
    GmmMean,
}

impl Default for IntensityMode {
    fn default() -> Self {
        IntensityMode::Fixed(1.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Number of foreground objects `K`.
    pub k_objects: usize,
    /// Buffer classes for the intensity segmentation.
    pub kappa: usize,
    pub seg: SdfChainParams,
    pub neural: NeuralConfig,
    /// Direct SDF supervision settings (initialization).
    pub init_optim: OptimConfig,
    /// Sinogram-supervised training settings.
    pub train_optim: OptimConfig,
    pub weights: LossWeights,
    pub fbp: FbpConfig,
    /// Projector upsampling during training.
    pub k_samp: usize,
    /// Refinement passes after the first prediction.
    pub refine_passes: usize,
    pub intensity: IntensityMode,
    /// Output frame count; `None` reconstructs one frame per view.
    pub frames: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_objects: 1,
            kappa: 3,
            seg: SdfChainParams::default(),
            neural: NeuralConfig::default(),
            init_optim: OptimConfig::default(),
            train_optim: OptimConfig::default(),
            weights: LossWeights::default(),
            fbp: FbpConfig::default(),
            k_samp: 2,
            refine_passes: 1,
            intensity: IntensityMode::default(),
            frames: None,
            seed: 0,
        }
    }
}

/// Everything needed to reproduce and audit one reconstruction.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub class_intensity: Vec<f64>,
    /// Wall time per stage, seconds.
    pub stage_seconds: Vec<(String, f64)>,
    /// Loss traces of the direct SDF fit, one per pass.
    pub init_reports: Vec<FitReport>,
    /// Loss traces of the sinogram-supervised training, one per pass.
    pub train_reports: Vec<FitReport>,
    /// Exported intensity movie after each pass (index 0 = before any
    /// refinement); the last entry is the returned reconstruction.
    pub pass_movies: Vec<IntensityMovie>,
    /// The FBP baseline the pipeline initialized from.
    pub fbp_movie: IntensityMovie,
}

#[derive(Debug, Serialize)]
struct RunRecordSummary<'a> {
    seed: u64,
    class_intensity: &'a [f64],
    stage_seconds: &'a [(String, f64)],
    passes: usize,
    init_final_loss: Vec<Option<f64>>,
    train_final_loss: Vec<Option<f64>>,
    train_steps: Vec<usize>,
}

impl RunRecord {
    /// JSON summary (traces are exported separately as CSV).
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(RunRecordSummary {
            seed: self.seed,
            class_intensity: &self.class_intensity,
            stage_seconds: &self.stage_seconds,
            passes: self.pass_movies.len(),
            init_final_loss: self.init_reports.iter().map(|r| r.final_data_loss()).collect(),
            train_final_loss: self
                .train_reports
                .iter()
                .map(|r| r.final_data_loss())
                .collect(),
            train_steps: self.train_reports.iter().map(|r| r.steps.len()).collect(),
        })
        .expect("summary serializes")
    }
}

fn subseed(seed: u64, tag: &str, pass: usize) -> u64 {
    // FNV-1a over the tag, mixed with the run seed and pass index
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.rotate_left(17) ^ (pass as u64).wrapping_mul(0x9e3779b97f4a7c15)
}

/// Full reconstruction of a time-resolved movie from one sinogram.
pub fn reconstruct(sino: &Sinogram, cfg: &PipelineConfig) -> Result<(IntensityMovie, RunRecord)> {
    crate::threads::init_pool();
    let n = sino.n_det();
    let frames = cfg.frames.unwrap_or(sino.schedule.n_views);
    let grid = GridSpec::new(n, frames)?;
    let times: Vec<f64> = (0..frames).map(|i| grid.frame_time(i)).collect();

    let mut record = RunRecord {
        seed: cfg.seed,
        class_intensity: Vec::new(),
        stage_seconds: Vec::new(),
        init_reports: Vec::new(),
        train_reports: Vec::new(),
        pass_movies: Vec::new(),
        fbp_movie: IntensityMovie::zeros(grid),
    };
    let clock = |record: &mut RunRecord, name: &str, start: Instant| {
        record
            .stage_seconds
            .push((name.to_string(), start.elapsed().as_secs_f64()));
    };

    // FBP baseline
    let start = Instant::now();
    let fbp = fbp_movie(sino, &times, &cfg.fbp)?;
    clock(&mut record, "fbp", start);
    record.fbp_movie = fbp.clone();

    // intensity segmentation (only on the first pass; refinement re-enters
    // at the SDF conversion)
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(subseed(cfg.seed, "gmm", 0));
    let seg = gmm_segment(&fbp, cfg.k_objects, cfg.kappa, &mut rng)?;
    clock(&mut record, "segmentation", start);

    let class_intensity: Vec<f64> = match cfg.intensity {
        IntensityMode::Fixed(a) => vec![a; cfg.k_objects],
        IntensityMode::GmmMean => seg.class_mean.clone(),
    };
    record.class_intensity = class_intensity.clone();

    let mut classes = seg.classes;
    let total_passes = 1 + cfg.refine_passes;
    for pass in 0..total_passes {
        // explicit SDF conversion
        let start = Instant::now();
        let target = binary_to_sdf(&classes, &cfg.seg)?;
        clock(&mut record, &format!("pass{pass}.sdf_convert"), start);

        // direct SDF supervision from a fresh random network
        let start = Instant::now();
        let mut model = NeuralSdf::new(
            &cfg.neural,
            cfg.k_objects,
            class_intensity.clone(),
            subseed(cfg.seed, "model", pass),
        )?;
        let mut init_cfg = cfg.init_optim;
        init_cfg.seed = subseed(cfg.seed, "fit_initial", pass);
        let report = fit_initial(&mut model, &target, &init_cfg, &cfg.weights)?;
        record.init_reports.push(report);
        clock(&mut record, &format!("pass{pass}.fit_initial"), start);

        // analysis-by-synthesis against the acquired sinogram
        let start = Instant::now();
        let mut train_cfg = cfg.train_optim;
        train_cfg.seed = subseed(cfg.seed, "fit_sinogram", pass);
        let report = fit_sinogram(
            &mut model,
            sino,
            &grid,
            &train_cfg,
            &cfg.weights,
            cfg.k_samp,
            None,
        )?;
        record.train_reports.push(report);
        clock(&mut record, &format!("pass{pass}.fit_sinogram"), start);

        // discretize, binarize, export
        let start = Instant::now();
        let sdf_movie = discretize(&model, &grid, &times);
        classes = binarize(&sdf_movie, model.mu);
        let movie = IntensityMovie {
            grid,
            frames: times
                .iter()
                .map(|&t| intensity_map(&model, &grid, t, &class_intensity, model.mu))
                .collect(),
            class_intensity: class_intensity.clone(),
        };
        movie.validate()?;
        record.pass_movies.push(movie);
        clock(&mut record, &format!("pass{pass}.export"), start);
    }

    let final_movie = record.pass_movies.last().expect("at least one pass").clone();
    Ok((final_movie, record))
}

// ---------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------

/// Per-frame mean squared error between two movies on `[0, 1]` intensities.
pub fn mse(a: &IntensityMovie, b: &IntensityMovie) -> Result<Vec<f64>> {
    if a.grid.n != b.grid.n || a.frames.len() != b.frames.len() {
        return Err(NctError::config("mse: movie shapes differ"));
    }
    Ok(a.frames
        .iter()
        .zip(&b.frames)
        .map(|(fa, fb)| {
            fa.iter()
                .zip(fb.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / fa.len() as f64
        })
        .collect())
}

/// Per-frame Dice coefficient after thresholding both movies at half the
/// foreground intensity. Two empty masks count as a perfect match.
pub fn dice(pred: &IntensityMovie, truth: &IntensityMovie, fg_intensity: f64) -> Result<Vec<f64>> {
    if pred.grid.n != truth.grid.n || pred.frames.len() != truth.frames.len() {
        return Err(NctError::config("dice: movie shapes differ"));
    }
    let threshold = fg_intensity / 2.0;
    Ok(pred
        .frames
        .iter()
        .zip(&truth.frames)
        .map(|(fp, ft)| {
            let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
            for (x, y) in fp.iter().zip(ft.iter()) {
                let fa = *x > threshold;
                let fb = *y > threshold;
                a += fa as usize;
                b += fb as usize;
                inter += (fa && fb) as usize;
            }
            if a + b == 0 {
                1.0
            } else {
                2.0 * inter as f64 / (a + b) as f64
            }
        })
        .collect())
}

/// Median of a sample (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `(q25, q75)` by linear interpolation.
pub fn iqr(xs: &[f64]) -> (f64, f64) {
    assert!(!xs.is_empty());
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |frac: f64| -> f64 {
        let pos = frac * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        s[lo] * (1.0 - w) + s[hi] * w
    };
    (q(0.25), q(0.75))
}

/// Run the same reconstruction under several seeds (the paper-style
/// repetition helper); everything else in the config is shared.
pub fn run_seeds(
    sino: &Sinogram,
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<Vec<(IntensityMovie, RunRecord)>> {
    seeds
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.seed = s;
            reconstruct(sino, &c)
        })
        .collect()
}
