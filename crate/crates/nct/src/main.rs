//! Batch front-end: simulate scenes, acquire sinograms, run FBP and the
//! neural reconstruction, emit metrics, image strips, and plots.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::Array2;

use nct::config::{ExperimentSpec, RunPlan};
use nct::error::{NctError, Result};
use nct::fbp::{fbp_movie, FbpConfig, RampWindow};
use nct::movie::IntensityMovie;
use nct::pipeline::{dice, iqr, median, mse, reconstruct};
use nct::plot::{frame_strip, heatmap, line_plot, Series, COLORS};
use nct::projector::{render_sinogram, Sinogram};

#[derive(Parser)]
#[command(name = "nct", version, about = "Time-resolved CT of moving objects")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scene movies and acquire their sinograms.
    Simulate { spec: PathBuf },
    /// Filtered-backprojection reconstruction of a stored sinogram.
    Fbp {
        /// Sinogram base path (reads <sino>.f32 + <sino>.json).
        sino: PathBuf,
        /// Output movie base path.
        out: PathBuf,
        /// Frame count; defaults to one frame per view.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 2)]
        pad_factor: usize,
        #[arg(long)]
        window_views: Option<usize>,
        #[arg(long, default_value_t = 2)]
        k_samp: usize,
        /// `ramp` or `ramp_hann`.
        #[arg(long, default_value = "ramp")]
        filter: String,
    },
    /// Run the full reconstruction for every sweep point and seed.
    Reconstruct { spec: PathBuf },
    /// Per-frame MSE and Dice between two stored movies.
    Metrics {
        pred: PathBuf,
        truth: PathBuf,
        /// CSV output path; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate sweep plots from a reconstruction output directory.
    Plot { dir: PathBuf },
}

fn main() -> ExitCode {
    nct::threads::init_pool();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate { spec } => cmd_simulate(&spec),
        Cmd::Fbp {
            sino,
            out,
            frames,
            pad_factor,
            window_views,
            k_samp,
            filter,
        } => cmd_fbp(&sino, &out, frames, pad_factor, window_views, k_samp, &filter),
        Cmd::Reconstruct { spec } => cmd_reconstruct(&spec),
        Cmd::Metrics { pred, truth, out } => cmd_metrics(&pred, &truth, out.as_deref()),
        Cmd::Plot { dir } => cmd_plot(&dir),
    }
}

/// Scene + acquisition for one plan; deterministic given the spec.
fn simulate_plan(plan: &RunPlan) -> Result<(IntensityMovie, Sinogram)> {
    let truth = plan.scene.generate(&plan.grid)?;
    let sino = render_sinogram(&truth, &plan.schedule, plan.k_samp)?;
    Ok((truth, sino))
}

fn cmd_simulate(spec_path: &Path) -> Result<()> {
    let spec = ExperimentSpec::load(spec_path)?;
    let plans = spec.plans()?;
    let mut done: BTreeSet<String> = BTreeSet::new();
    for plan in &plans {
        if !done.insert(plan.scene_label.clone()) {
            continue;
        }
        let dir = spec.output_dir.join(&plan.scene_label);
        let (truth, sino) = simulate_plan(plan)?;
        truth.save(&dir.join("truth"))?;
        sino.save(&dir.join("sino"))?;
        frame_strip(&dir.join("truth_strip.png"), &[("GT", &truth)], 8)?;
        println!(
            "simulated {}: {} frames at n={}, {} views",
            plan.scene_label,
            truth.frames.len(),
            truth.grid.n,
            sino.schedule.n_views
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fbp(
    sino_path: &Path,
    out: &Path,
    frames: Option<usize>,
    pad_factor: usize,
    window_views: Option<usize>,
    k_samp: usize,
    filter: &str,
) -> Result<()> {
    let sino = Sinogram::load(sino_path)?;
    let filter = match filter {
        "ramp" => RampWindow::Ramp,
        "ramp_hann" => RampWindow::RampHann,
        other => return Err(NctError::config(format!("unknown filter `{other}`"))),
    };
    let cfg = FbpConfig {
        filter,
        window_views,
        pad_factor,
        k_samp,
    };
    let count = frames.unwrap_or(sino.schedule.n_views);
    if count < 2 {
        return Err(NctError::config("need at least 2 frames"));
    }
    let times: Vec<f64> = (0..count)
        .map(|i| i as f64 / (count - 1) as f64)
        .collect();
    let movie = fbp_movie(&sino, &times, &cfg)?;
    movie.save(out)?;
    frame_strip(&out.with_file_name("fbp_strip.png"), &[("FBP", &movie)], 8)?;
    println!("fbp: wrote {} frames to {}", count, out.display());
    Ok(())
}

/// Per-run summary row accumulated into `summary.csv`.
struct SummaryRow {
    label: String,
    seed: u64,
    displacement: Option<f64>,
    lambda_tvs: Option<f64>,
    lambda_tvt: Option<f64>,
    f_max: Option<f64>,
    dice_fbp: f64,
    dice_nct: f64,
    dice_pass0: f64,
    mse_fbp: f64,
    mse_nct: f64,
    dice_nct_iqr: (f64, f64),
    frac_fbp_dice_gt085: f64,
    frac_nct_dice_gt085: f64,
    seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_reconstruct(spec_path: &Path) -> Result<()> {
    let spec = ExperimentSpec::load(spec_path)?;
    let plans = spec.plans()?;
    let mut rows: Vec<SummaryRow> = Vec::new();
    for plan in &plans {
        let dir = spec.output_dir.join(&plan.label);
        std::fs::create_dir_all(&dir).map_err(|e| NctError::io(&dir, e))?;
        let started = std::time::Instant::now();
        let (truth, sino) = simulate_plan(plan)?;
        truth.save(&dir.join("truth"))?;
        sino.save(&dir.join("sino"))?;

        let (nct_movie, record) = reconstruct(&sino, &plan.pipeline)?;
        let seconds = started.elapsed().as_secs_f64();
        nct_movie.save(&dir.join("nct"))?;
        record.fbp_movie.save(&dir.join("fbp"))?;

        // per-frame metrics
        let fg = truth.class_intensity[0];
        let mse_fbp = mse(&record.fbp_movie, &truth)?;
        let mse_nct = mse(&nct_movie, &truth)?;
        let dice_fbp = dice(&record.fbp_movie, &truth, fg)?;
        let dice_nct = dice(&nct_movie, &truth, fg)?;
        let dice_pass0 = dice(&record.pass_movies[0], &truth, fg)?;
        let mut csv = String::from("frame,mse_fbp,mse_nct,dice_fbp,dice_nct\n");
        for f in 0..truth.frames.len() {
            csv.push_str(&format!(
                "{f},{},{},{},{}\n",
                mse_fbp[f], mse_nct[f], dice_fbp[f], dice_nct[f]
            ));
        }
        let csv_path = dir.join("metrics.csv");
        std::fs::write(&csv_path, csv).map_err(|e| NctError::io(&csv_path, e))?;

        // run record, loss traces, previews
        let run_json = dir.join("run.json");
        std::fs::write(
            &run_json,
            serde_json::to_string_pretty(&record.summary_json())
                .expect("summary serializes"),
        )
        .map_err(|e| NctError::io(&run_json, e))?;
        for (i, rep) in record.init_reports.iter().enumerate() {
            rep.write_csv(&dir.join(format!("init_pass{i}.csv")))?;
        }
        for (i, rep) in record.train_reports.iter().enumerate() {
            rep.write_csv(&dir.join(format!("train_pass{i}.csv")))?;
        }
        frame_strip(
            &dir.join("strip.png"),
            &[
                ("GT", &truth),
                ("FBP", &record.fbp_movie),
                ("NCT", &nct_movie),
            ],
            8,
        )?;
        line_plot(
            &dir.join("dice_per_frame.png"),
            "DICE PER FRAME",
            "FRAME",
            "DICE",
            &[
                Series {
                    label: "FBP".into(),
                    xs: (0..dice_fbp.len()).map(|i| i as f64).collect(),
                    ys: dice_fbp.clone(),
                    color: COLORS[0],
                },
                Series {
                    label: "NCT".into(),
                    xs: (0..dice_nct.len()).map(|i| i as f64).collect(),
                    ys: dice_nct.clone(),
                    color: COLORS[1],
                },
            ],
        )?;

        let frac = |xs: &[f64]| xs.iter().filter(|&&d| d > 0.85).count() as f64 / xs.len() as f64;
        let row = SummaryRow {
            label: plan.label.clone(),
            seed: plan.seed,
            displacement: plan.point.displacement_deg,
            lambda_tvs: plan.point.lambda_tvs,
            lambda_tvt: plan.point.lambda_tvt,
            f_max: plan.point.f_max,
            dice_fbp: median(&dice_fbp),
            dice_nct: median(&dice_nct),
            dice_pass0: median(&dice_pass0),
            mse_fbp: median(&mse_fbp),
            mse_nct: median(&mse_nct),
            dice_nct_iqr: iqr(&dice_nct),
            frac_fbp_dice_gt085: frac(&dice_fbp),
            frac_nct_dice_gt085: frac(&dice_nct),
            seconds,
        };
        println!(
            "{}: FBP dice {:.3} -> NCT dice {:.3} (pass0 {:.3}), mse {:.4} -> {:.4} [{:.0}s]",
            row.label, row.dice_fbp, row.dice_nct, row.dice_pass0, row.mse_fbp, row.mse_nct, seconds
        );
        rows.push(row);
    }

    write_summary(&spec.output_dir, &rows)?;
    make_sweep_plots(&spec.output_dir)?;
    Ok(())
}

fn write_summary(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut csv = String::from(
        "label,seed,displacement_deg,lambda_tvs,lambda_tvt,f_max,\
         dice_fbp,dice_nct,dice_pass0,mse_fbp,mse_nct,dice_nct_q25,dice_nct_q75,\
         frac_fbp_dice_gt085,frac_nct_dice_gt085,seconds\n",
    );
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.1}\n",
            r.label,
            r.seed,
            opt(r.displacement),
            opt(r.lambda_tvs),
            opt(r.lambda_tvt),
            opt(r.f_max),
            r.dice_fbp,
            r.dice_nct,
            r.dice_pass0,
            r.mse_fbp,
            r.mse_nct,
            r.dice_nct_iqr.0,
            r.dice_nct_iqr.1,
            r.frac_fbp_dice_gt085,
            r.frac_nct_dice_gt085,
            r.seconds
        ));
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, csv).map_err(|e| NctError::io(&path, e))
}

/// Minimal reader for our own summary.csv format (no quoting).
struct Summary {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Summary {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NctError::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| NctError::config("empty summary.csv"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
            .collect();
        Ok(Summary { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| NctError::config(format!("summary.csv lacks column {name}")))
    }

    fn numeric(&self, row: &[String], col: usize) -> Option<f64> {
        row.get(col).and_then(|s| s.parse().ok())
    }
}

fn make_sweep_plots(dir: &Path) -> Result<()> {
    let summary = Summary::load(&dir.join("summary.csv"))?;
    let c_disp = summary.col("displacement_deg")?;
    let c_tvs = summary.col("lambda_tvs")?;
    let c_tvt = summary.col("lambda_tvt")?;
    let c_fmax = summary.col("f_max")?;
    let c_dfbp = summary.col("dice_fbp")?;
    let c_dnct = summary.col("dice_nct")?;

    // median over seeds per axis value
    let axis_medians = |axis: usize, value: usize| -> Vec<(f64, f64)> {
        let mut keys: Vec<f64> = summary
            .rows
            .iter()
            .filter_map(|r| summary.numeric(r, axis))
            .collect();
        keys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        keys.dedup();
        keys.into_iter()
            .map(|k| {
                let ys: Vec<f64> = summary
                    .rows
                    .iter()
                    .filter(|r| summary.numeric(r, axis) == Some(k))
                    .filter_map(|r| summary.numeric(r, value))
                    .collect();
                (k, median(&ys))
            })
            .collect()
    };

    let disp_nct = axis_medians(c_disp, c_dnct);
    if disp_nct.len() > 1 {
        let disp_fbp = axis_medians(c_disp, c_dfbp);
        line_plot(
            &dir.join("dice_vs_displacement.png"),
            "DICE VS ANGULAR DISPLACEMENT",
            "DEG PER ROTATION",
            "DICE",
            &[
                Series {
                    label: "FBP".into(),
                    xs: disp_fbp.iter().map(|p| p.0).collect(),
                    ys: disp_fbp.iter().map(|p| p.1).collect(),
                    color: COLORS[0],
                },
                Series {
                    label: "NCT".into(),
                    xs: disp_nct.iter().map(|p| p.0).collect(),
                    ys: disp_nct.iter().map(|p| p.1).collect(),
                    color: COLORS[1],
                },
            ],
        )?;
    }

    let fmax_nct = axis_medians(c_fmax, c_dnct);
    if fmax_nct.len() > 1 {
        line_plot(
            &dir.join("dice_vs_fmax.png"),
            "DICE VS FMAX",
            "FMAX",
            "DICE",
            &[Series {
                label: "NCT".into(),
                xs: fmax_nct.iter().map(|p| p.0).collect(),
                ys: fmax_nct.iter().map(|p| p.1).collect(),
                color: COLORS[1],
            }],
        )?;
    }

    // lambda heatmap only when both axes were swept
    let tvs_vals: BTreeSet<String> = summary
        .rows
        .iter()
        .filter(|r| !r[c_tvs].is_empty())
        .map(|r| r[c_tvs].clone())
        .collect();
    let tvt_vals: BTreeSet<String> = summary
        .rows
        .iter()
        .filter(|r| !r[c_tvt].is_empty())
        .map(|r| r[c_tvt].clone())
        .collect();
    if tvs_vals.len() > 1 && tvt_vals.len() > 1 {
        let xs: Vec<String> = tvs_vals.into_iter().collect();
        let ys: Vec<String> = tvt_vals.into_iter().collect();
        let mut grid = Array2::from_elem((ys.len(), xs.len()), f64::NAN);
        for (i, tvt) in ys.iter().enumerate() {
            for (j, tvs) in xs.iter().enumerate() {
                let vals: Vec<f64> = summary
                    .rows
                    .iter()
                    .filter(|r| &r[c_tvs] == tvs && &r[c_tvt] == tvt)
                    .filter_map(|r| summary.numeric(r, c_dnct))
                    .collect();
                if !vals.is_empty() {
                    grid[[i, j]] = median(&vals);
                }
            }
        }
        heatmap(
            &dir.join("dice_lambda_sweep.png"),
            "NCT DICE: TVS (X) VS TVT (Y)",
            &xs,
            &ys,
            &grid,
        )?;
    }
    Ok(())
}

fn cmd_metrics(pred_path: &Path, truth_path: &Path, out: Option<&Path>) -> Result<()> {
    let pred = IntensityMovie::load(pred_path)?;
    let truth = IntensityMovie::load(truth_path)?;
    let fg = truth.class_intensity[0];
    let m = mse(&pred, &truth)?;
    let d = dice(&pred, &truth, fg)?;
    let mut csv = String::from("frame,mse,dice\n");
    for f in 0..m.len() {
        csv.push_str(&format!("{f},{},{}\n", m[f], d[f]));
    }
    match out {
        Some(path) => std::fs::write(path, csv).map_err(|e| NctError::io(path, e))?,
        None => print!("{csv}"),
    }
    eprintln!(
        "median mse {:.5}, median dice {:.4} over {} frames",
        median(&m),
        median(&d),
        m.len()
    );
    Ok(())
}

fn cmd_plot(dir: &Path) -> Result<()> {
    make_sweep_plots(dir)?;
    println!("plots regenerated under {}", dir.display());
    Ok(())
}
