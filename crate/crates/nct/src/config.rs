//! Declarative experiment specs: a single TOML file describes the scene,
//! the gantry schedule, the reconstruction settings, optional sweep axes,
//! and the output directory. See `examples/` specs in the repository root
//! and the schema walkthrough in the README.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NctError, Result};
use crate::fbp::{FbpConfig, RampWindow};
use crate::grid::GridSpec;
use crate::initseg::SdfChainParams;
use crate::neural::NeuralConfig;
use crate::optim::{LossWeights, OptimConfig, OptimizerKind};
use crate::pipeline::{IntensityMode, PipelineConfig};
use crate::projector::GantrySchedule;
use crate::scene::{CircleScene, EllipseScene, LetterScene, SceneConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub scene: SceneSection,
    #[serde(default)]
    pub gantry: GantrySection,
    #[serde(default)]
    pub fbp: FbpSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub init_optim: OptimSection,
    #[serde(default)]
    pub train_optim: OptimSection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub segment: SegmentSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    /// `translating_circle`, `beating_ellipse` or `letter_warp`.
    pub kind: String,
    pub n: usize,
    /// Movie frame count; default is one frame per view.
    pub frames: Option<usize>,
    // translating circle
    pub radius: Option<f64>,
    pub orbit_radius: Option<f64>,
    pub displacement_deg: Option<f64>,
    // beating ellipse
    pub axis_x: Option<f64>,
    pub axis_y: Option<f64>,
    pub beat_amplitude: Option<f64>,
    pub beat_rate: Option<f64>,
    // letter warp
    pub hold_fraction: Option<f64>,
    pub extent: Option<f64>,
    pub glyph_dir: Option<PathBuf>,
}

impl SceneSection {
    pub fn build(&self) -> Result<SceneConfig> {
        match self.kind.as_str() {
            "translating_circle" => {
                let d = CircleScene::default();
                Ok(SceneConfig::TranslatingCircle(CircleScene {
                    radius: self.radius.unwrap_or(d.radius),
                    orbit_radius: self.orbit_radius.unwrap_or(d.orbit_radius),
                    displacement_deg: self.displacement_deg.unwrap_or(d.displacement_deg),
                }))
            }
            "beating_ellipse" => {
                let d = EllipseScene::default();
                Ok(SceneConfig::BeatingEllipse(EllipseScene {
                    axis_x: self.axis_x.unwrap_or(d.axis_x),
                    axis_y: self.axis_y.unwrap_or(d.axis_y),
                    beat_amplitude: self.beat_amplitude.unwrap_or(d.beat_amplitude),
                    beat_rate: self.beat_rate.unwrap_or(d.beat_rate),
                }))
            }
            "letter_warp" => {
                let d = LetterScene::default();
                Ok(SceneConfig::LetterWarp(LetterScene {
                    hold_fraction: self.hold_fraction.unwrap_or(d.hold_fraction),
                    extent: self.extent.unwrap_or(d.extent),
                    glyph_dir: self.glyph_dir.clone(),
                }))
            }
            other => Err(NctError::config(format!("unknown scene kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GantrySection {
    pub views_per_rotation: usize,
    pub rotations: usize,
    pub k_samp: usize,
}

impl Default for GantrySection {
    fn default() -> Self {
        GantrySection {
            views_per_rotation: 360,
            rotations: 1,
            k_samp: 2,
        }
    }
}

impl GantrySection {
    pub fn schedule(&self) -> Result<GantrySchedule> {
        GantrySchedule::new(self.views_per_rotation * self.rotations, self.rotations)
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FbpSection {
    pub filter: Option<String>,
    pub window_views: Option<usize>,
    pub pad_factor: Option<usize>,
}

impl FbpSection {
    pub fn build(&self, k_samp: usize) -> Result<FbpConfig> {
        let filter = match self.filter.as_deref() {
            None | Some("ramp") => RampWindow::Ramp,
            Some("ramp_hann") => RampWindow::RampHann,
            Some(other) => {
                return Err(NctError::config(format!("unknown fbp filter `{other}`")))
            }
        };
        Ok(FbpConfig {
            filter,
            window_views: self.window_views,
            pad_factor: self.pad_factor.unwrap_or(2),
            k_samp,
        })
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_width: Option<usize>,
    pub encoder_hidden: Option<usize>,
    pub velocity_hidden: Option<usize>,
    pub harmonics: Option<usize>,
    pub f_max: Option<f64>,
    pub mu: Option<f64>,
    pub omega0: Option<f64>,
}

impl ModelSection {
    pub fn build(&self) -> NeuralConfig {
        let d = NeuralConfig::default();
        NeuralConfig {
            hidden_width: self.hidden_width.unwrap_or(d.hidden_width),
            encoder_hidden: self.encoder_hidden.unwrap_or(d.encoder_hidden),
            velocity_hidden: self.velocity_hidden.unwrap_or(d.velocity_hidden),
            harmonics: self.harmonics.unwrap_or(d.harmonics),
            f_max: self.f_max.unwrap_or(d.f_max),
            mu: self.mu.unwrap_or(d.mu),
            omega0: self.omega0.unwrap_or(d.omega0),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub lr: Option<f64>,
    pub decay: Option<f64>,
    pub decay_every: Option<usize>,
    pub max_iterations: Option<usize>,
    pub min_loss: Option<f64>,
    pub minibatch: Option<usize>,
    pub optimizer: Option<String>,
}

impl OptimSection {
    pub fn build(&self) -> Result<OptimConfig> {
        let d = OptimConfig::default();
        let optimizer = match self.optimizer.as_deref() {
            None | Some("adam") => OptimizerKind::Adam,
            Some("sgd") => OptimizerKind::Sgd,
            Some(other) => {
                return Err(NctError::config(format!("unknown optimizer `{other}`")))
            }
        };
        let cfg = OptimConfig {
            lr: self.lr.unwrap_or(d.lr),
            decay: self.decay.unwrap_or(d.decay),
            decay_every: self.decay_every.unwrap_or(d.decay_every),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            min_loss: self.min_loss.unwrap_or(d.min_loss),
            minibatch: self.minibatch.unwrap_or(d.minibatch),
            optimizer,
            seed: 0,
        };
        if cfg.lr <= 0.0 {
            return Err(NctError::config("learning rate must be positive"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub lambda_eik: Option<f64>,
    pub lambda_tvs: Option<f64>,
    pub lambda_tvt: Option<f64>,
    pub lambda_init: Option<f64>,
}

impl WeightsSection {
    pub fn build(&self) -> LossWeights {
        let d = LossWeights::default();
        LossWeights {
            lambda_eik: self.lambda_eik.unwrap_or(d.lambda_eik),
            lambda_tvs: self.lambda_tvs.unwrap_or(d.lambda_tvs),
            lambda_tvt: self.lambda_tvt.unwrap_or(d.lambda_tvt),
            lambda_init: self.lambda_init.unwrap_or(d.lambda_init),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub kappa: Option<usize>,
    pub tv_mask_weight: Option<f64>,
    pub tv_mask_iters: Option<usize>,
    pub tv_sdf_weight: Option<f64>,
    pub tv_sdf_iters: Option<usize>,
}

impl SegmentSection {
    pub fn build(&self) -> (usize, SdfChainParams) {
        let d = SdfChainParams::default();
        (
            self.kappa.unwrap_or(3),
            SdfChainParams {
                tv_mask_weight: self.tv_mask_weight.unwrap_or(d.tv_mask_weight),
                tv_mask_iters: self.tv_mask_iters.unwrap_or(d.tv_mask_iters),
                tv_sdf_weight: self.tv_sdf_weight.unwrap_or(d.tv_sdf_weight),
                tv_sdf_iters: self.tv_sdf_iters.unwrap_or(d.tv_sdf_iters),
            },
        )
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub k_objects: Option<usize>,
    pub refine_passes: Option<usize>,
    /// `fixed` or `gmm_mean`.
    pub intensity_mode: Option<String>,
    pub fixed_intensity: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub displacement_deg: Vec<f64>,
    #[serde(default)]
    pub lambda_tvs: Vec<f64>,
    #[serde(default)]
    pub lambda_tvt: Vec<f64>,
    #[serde(default)]
    pub f_max: Vec<f64>,
}

/// Values of the sweep axes a run was instantiated with (`None` when the
/// axis is not swept).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SweepPoint {
    pub displacement_deg: Option<f64>,
    pub lambda_tvs: Option<f64>,
    pub lambda_tvt: Option<f64>,
    pub f_max: Option<f64>,
}

/// One fully resolved run: scene + schedule + pipeline settings.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub label: String,
    /// Label without the seed suffix; runs sharing it share a scene.
    pub scene_label: String,
    pub scene: SceneConfig,
    pub grid: GridSpec,
    pub schedule: GantrySchedule,
    pub k_samp: usize,
    pub pipeline: PipelineConfig,
    pub seed: u64,
    pub point: SweepPoint,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NctError::io(path, e))?;
        let spec: ExperimentSpec = toml::from_str(&text)
            .map_err(|e| NctError::config(format!("{}: {e}", path.display())))?;
        if spec.schema_version != SCHEMA_VERSION {
            return Err(NctError::config(format!(
                "{}: schema_version {} unsupported (expected {SCHEMA_VERSION})",
                path.display(),
                spec.schema_version
            )));
        }
        if spec.seeds.is_empty() {
            return Err(NctError::config("seeds must be nonempty"));
        }
        Ok(spec)
    }

    fn base_pipeline(&self) -> Result<PipelineConfig> {
        let (kappa, seg) = self.segment.build();
        let intensity = match self.pipeline.intensity_mode.as_deref() {
            None | Some("fixed") => {
                IntensityMode::Fixed(self.pipeline.fixed_intensity.unwrap_or(1.0))
            }
            Some("gmm_mean") => IntensityMode::GmmMean,
            Some(other) => {
                return Err(NctError::config(format!(
                    "unknown intensity_mode `{other}`"
                )))
            }
        };
        Ok(PipelineConfig {
            k_objects: self.pipeline.k_objects.unwrap_or(1),
            kappa,
            seg,
            neural: self.model.build(),
            init_optim: self.init_optim.build()?,
            train_optim: self.train_optim.build()?,
            weights: self.weights.build(),
            fbp: self.fbp.build(self.gantry.k_samp)?,
            k_samp: self.gantry.k_samp,
            refine_passes: self.pipeline.refine_passes.unwrap_or(1),
            intensity,
            frames: self.scene.frames,
            seed: 0,
        })
    }

    /// Expand the sweep axes (cross product) and seeds into concrete runs.
    pub fn plans(&self) -> Result<Vec<RunPlan>> {
        let schedule = self.gantry.schedule()?;
        let frames = self.scene.frames.unwrap_or(schedule.n_views);
        let grid = GridSpec::new(self.scene.n, frames)?;
        let base_scene = self.scene.build()?;
        let base_pipe = self.base_pipeline()?;

        let opt_axis = |v: &[f64]| -> Vec<Option<f64>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().cloned().map(Some).collect()
            }
        };
        let mut plans = Vec::new();
        for disp in opt_axis(&self.sweep.displacement_deg) {
            for tvs in opt_axis(&self.sweep.lambda_tvs) {
                for tvt in opt_axis(&self.sweep.lambda_tvt) {
                    for fmax in opt_axis(&self.sweep.f_max) {
                        for &seed in &self.seeds {
                            let mut scene = base_scene.clone();
                            if let Some(d) = disp {
                                match &mut scene {
                                    SceneConfig::TranslatingCircle(c) => c.displacement_deg = d,
                                    _ => {
                                        return Err(NctError::config(
                                            "displacement_deg sweep needs a translating_circle scene",
                                        ))
                                    }
                                }
                            }
                            let mut pipe = base_pipe.clone();
                            if let Some(v) = tvs {
                                pipe.weights.lambda_tvs = v;
                            }
                            if let Some(v) = tvt {
                                pipe.weights.lambda_tvt = v;
                            }
                            if let Some(v) = fmax {
                                pipe.neural.f_max = v;
                            }
                            pipe.seed = seed;
                            let mut label = String::new();
                            let mut scene_label = String::new();
                            if let Some(d) = disp {
                                label.push_str(&format!("disp{d:03.0}_"));
                                scene_label.push_str(&format!("disp{d:03.0}"));
                            }
                            if let Some(v) = tvs {
                                label.push_str(&format!("tvs{v}_"));
                            }
                            if let Some(v) = tvt {
                                label.push_str(&format!("tvt{v}_"));
                            }
                            if let Some(v) = fmax {
                                label.push_str(&format!("fmax{v}_"));
                            }
                            if label.is_empty() {
                                label.push_str("run_");
                            }
                            if scene_label.is_empty() {
                                scene_label.push_str("scene");
                            }
                            label.push_str(&format!("seed{seed}"));
                            plans.push(RunPlan {
                                label,
                                scene_label,
                                scene,
                                grid,
                                schedule,
                                k_samp: self.gantry.k_samp,
                                pipeline: pipe,
                                seed,
                                point: SweepPoint {
                                    displacement_deg: disp,
                                    lambda_tvs: tvs,
                                    lambda_tvt: tvt,
                                    f_max: fmax,
                                },
                            });
                        }
                    }
                }
            }
        }
        if plans.is_empty() {
            return Err(NctError::config("sweep produced no runs"));
        }
        Ok(plans)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
output_dir = "out"
seeds = [0, 1]

[scene]
kind = "translating_circle"
n = 64
displacement_deg = 100.0

[gantry]
views_per_rotation = 180
rotations = 1
k_samp = 2
"#;

    #[test]
    fn minimal_spec_parses_with_defaults() {
        let spec: ExperimentSpec = toml::from_str(MINIMAL).unwrap();
        assert_eq!(spec.schema_version, 1);
        let plans = spec.plans().unwrap();
        assert_eq!(plans.len(), 2); // two seeds, no sweep axes
        assert_eq!(plans[0].schedule.n_views, 180);
        assert!(matches!(plans[0].scene, SceneConfig::TranslatingCircle(_)));
        // spec-default optimizer settings survive
        assert_eq!(plans[0].pipeline.train_optim.max_iterations, 5000);
        assert!((plans[0].pipeline.train_optim.lr - 1e-5).abs() < 1e-20);
        assert!((plans[0].pipeline.weights.lambda_eik - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sweep_expands_cross_product() {
        let text = format!(
            "{MINIMAL}\n[sweep]\ndisplacement_deg = [40.0, 100.0]\nf_max = [1.0, 3.0, 10.0]\n"
        );
        let spec: ExperimentSpec = toml::from_str(&text).unwrap();
        let plans = spec.plans().unwrap();
        assert_eq!(plans.len(), 2 * 3 * 2);
        assert!(plans.iter().any(|p| p.label == "disp040_fmax1_seed0"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{MINIMAL}\ntypo_field = 3\n");
        assert!(toml::from_str::<ExperimentSpec>(&text).is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.toml");
        std::fs::write(&path, MINIMAL.replace("schema_version = 1", "schema_version = 9"))
            .unwrap();
        assert!(ExperimentSpec::load(&path).is_err());
    }
}
