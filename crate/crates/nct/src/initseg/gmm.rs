//! Scalar-intensity Gaussian mixture segmentation of FBP movies.
//!
//! A `K' = K + kappa + 1` component mixture is fit by EM on the pixels of a
//! small random frame subset, every pixel of every frame is classified by
//! maximum posterior, the largest-mass class is discarded as background and
//! the `K` largest remaining classes become the foreground channels.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::{NctError, Result};
use crate::movie::{BinaryMovie, IntensityMovie};

const VAR_FLOOR: f64 = 1e-6;
const EM_MAX_ITERS: usize = 100;
const EM_TOL: f64 = 1e-6;
const EM_MAX_REINITS: usize = 5;

#[derive(Debug, Clone)]
pub struct GmmComponent {
    pub mean: f64,
    pub var: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
}

impl GmmModel {
    /// Index of the maximum-posterior component for intensity `x`.
    /// Ties resolve to the lowest index.
    pub fn classify(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for (i, c) in self.components.iter().enumerate() {
            let d = x - c.mean;
            let ll = c.weight.ln() - 0.5 * c.var.ln() - d * d / (2.0 * c.var);
            if ll > best_ll {
                best_ll = ll;
                best = i;
            }
        }
        best
    }
}

fn kmeans_pp_init(samples: &[f64], k: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k);
    centers.push(samples[rng.gen_range(0..samples.len())]);
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|&s| (s - centers[0]).powi(2))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            samples[rng.gen_range(0..samples.len())]
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = samples.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            samples[pick]
        };
        centers.push(next);
        for (i, &s) in samples.iter().enumerate() {
            d2[i] = d2[i].min((s - next).powi(2));
        }
    }
    centers
}

/// Fit a scalar GMM by EM with k-means++ initialization.
///
/// Empty components are re-seeded from a random sample, at most
/// [`EM_MAX_REINITS`] times in total; a mixture that stays degenerate is an
/// error (a constant image always ends up here).
pub fn fit_gmm(samples: &[f64], k: usize, rng: &mut ChaCha12Rng) -> Result<GmmModel> {
    if samples.len() < k {
        return Err(NctError::numeric("gmm", "fewer samples than components"));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo < 1e-9 {
        return Err(NctError::numeric(
            "gmm",
            "intensity range is degenerate (constant image)",
        ));
    }
    let n = samples.len() as f64;
    let global_var = {
        let mean = samples.iter().sum::<f64>() / n;
        (samples.iter().map(|&s| (s - mean).powi(2)).sum::<f64>() / n).max(VAR_FLOOR)
    };

    let centers = kmeans_pp_init(samples, k, rng);
    let mut comps: Vec<GmmComponent> = centers
        .into_iter()
        .map(|c| GmmComponent {
            mean: c,
            var: global_var / (k * k) as f64 + VAR_FLOOR,
            weight: 1.0 / k as f64,
        })
        .collect();

    let mut reinits = 0usize;
    let mut prev_ll = f64::NEG_INFINITY;
    let mut resp = vec![0.0f64; k];
    let mut iter = 0usize;
    while iter < EM_MAX_ITERS {
        iter += 1;
        // accumulators: weight, weighted sum, weighted square sum
        let mut acc_w = vec![0.0f64; k];
        let mut acc_m = vec![0.0f64; k];
        let mut acc_s = vec![0.0f64; k];
        let mut ll_total = 0.0f64;
        for &x in samples {
            let mut max_ll = f64::NEG_INFINITY;
            for (i, c) in comps.iter().enumerate() {
                let d = x - c.mean;
                resp[i] = c.weight.ln()
                    - 0.5 * (2.0 * std::f64::consts::PI * c.var).ln()
                    - d * d / (2.0 * c.var);
                max_ll = max_ll.max(resp[i]);
            }
            let mut z = 0.0;
            for r in resp.iter_mut() {
                *r = (*r - max_ll).exp();
                z += *r;
            }
            ll_total += max_ll + z.ln();
            for (i, &r) in resp.iter().enumerate() {
                let g = r / z;
                acc_w[i] += g;
                acc_m[i] += g * x;
                acc_s[i] += g * x * x;
            }
        }

        // M step, with re-seeding of empty components
        let mut reseeded = false;
        for i in 0..k {
            if acc_w[i] < 1e-8 {
                if reinits >= EM_MAX_REINITS {
                    return Err(NctError::numeric(
                        "gmm",
                        format!("component {i} stayed empty after {EM_MAX_REINITS} re-inits"),
                    ));
                }
                reinits += 1;
                reseeded = true;
                comps[i] = GmmComponent {
                    mean: samples[rng.gen_range(0..samples.len())],
                    var: global_var / (k * k) as f64 + VAR_FLOOR,
                    weight: 1.0 / k as f64,
                };
                continue;
            }
            let mean = acc_m[i] / acc_w[i];
            let var = (acc_s[i] / acc_w[i] - mean * mean).max(VAR_FLOOR);
            comps[i] = GmmComponent {
                mean,
                var,
                weight: acc_w[i] / n,
            };
        }
        if reseeded {
            // renormalize weights after the reset
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            for c in comps.iter_mut() {
                c.weight /= total;
            }
            prev_ll = f64::NEG_INFINITY;
            continue;
        }
        let ll = ll_total / n;
        if (ll - prev_ll).abs() < EM_TOL {
            break;
        }
        prev_ll = ll;
    }
    Ok(GmmModel { components: comps })
}

/// Output of the object segmentation: binary class movie, per-class mean
/// intensity, and the fitted mixture.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub classes: BinaryMovie,
    pub class_mean: Vec<f64>,
    pub model: GmmModel,
    /// Frame indices the mixture was fit on.
    pub tau: Vec<usize>,
}

/// Group components that are statistically indistinguishable: EM routinely
/// splits one intensity mode into co-located components, and ranking those
/// shards by mass would keep a background shard instead of the object.
/// Single-linkage on `|mean_i - mean_j| <= 2.5 * max(std_i, std_j)`.
fn merge_groups(comps: &[GmmComponent]) -> Vec<usize> {
    let k = comps.len();
    let mut group: Vec<usize> = (0..k).collect();
    fn root(group: &mut Vec<usize>, mut i: usize) -> usize {
        while group[i] != i {
            group[i] = group[group[i]];
            i = group[i];
        }
        i
    }
    for i in 0..k {
        for j in i + 1..k {
            let scale = comps[i].var.sqrt().max(comps[j].var.sqrt());
            if (comps[i].mean - comps[j].mean).abs() <= 2.5 * scale {
                let (ri, rj) = (root(&mut group, i), root(&mut group, j));
                if ri != rj {
                    group[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    (0..k).map(|i| root(&mut group, i)).collect()
}

/// Intensity-based object segmentation of an FBP movie.
pub fn gmm_segment(
    fbp: &IntensityMovie,
    k_objects: usize,
    kappa: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Segmentation> {
    if k_objects < 1 {
        return Err(NctError::config("gmm_segment requires K >= 1"));
    }
    let t_total = fbp.frames.len();
    let k_prime = k_objects + kappa + 1;

    // |tau| = max(1, round(0.02 * T)) random frames feed the fit
    let tau_len = ((0.02 * t_total as f64).round() as usize).max(1);
    let mut indices: Vec<usize> = (0..t_total).collect();
    indices.shuffle(rng);
    let mut tau: Vec<usize> = indices.into_iter().take(tau_len).collect();
    tau.sort_unstable();

    let mut samples = Vec::with_capacity(tau.len() * fbp.grid.n * fbp.grid.n);
    for &t in &tau {
        samples.extend(fbp.frames[t].iter().copied());
    }
    let model = fit_gmm(&samples, k_prime, rng)?;

    // classify every pixel of every frame, then collapse shard components
    // onto their merge group
    let group = merge_groups(&model.components);
    let labels: Vec<Array2<usize>> = fbp
        .frames
        .iter()
        .map(|f| f.mapv(|x| group[model.classify(x)]))
        .collect();

    // per-group mass across all frames
    let mut mass = vec![0usize; k_prime];
    for lab in &labels {
        for &c in lab.iter() {
            mass[c] += 1;
        }
    }
    let background = (0..k_prime).max_by_key(|&c| (mass[c], k_prime - c)).unwrap();
    let mut remaining: Vec<usize> =
        (0..k_prime).filter(|&c| c != background && mass[c] > 0).collect();
    remaining.sort_by_key(|&c| std::cmp::Reverse(mass[c]));
    if remaining.len() < k_objects {
        return Err(NctError::numeric(
            "gmm_segment",
            format!(
                "needed {k_objects} foreground classes, found {}",
                remaining.len()
            ),
        ));
    }
    let kept: Vec<usize> = remaining.into_iter().take(k_objects).collect();

    // mass-weighted mean intensity of each kept group
    let class_mean: Vec<f64> = kept
        .iter()
        .map(|&g| {
            let (mut num, mut den) = (0.0, 0.0);
            for (i, c) in model.components.iter().enumerate() {
                if group[i] == g {
                    num += c.weight * c.mean;
                    den += c.weight;
                }
            }
            num / den
        })
        .collect();

    let masks = labels
        .iter()
        .map(|lab| {
            kept.iter()
                .map(|&c| lab.mapv(|l| l == c))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(Segmentation {
        classes: BinaryMovie {
            grid: fbp.grid,
            masks,
        },
        class_mean,
        model,
        tau,
    })
}
