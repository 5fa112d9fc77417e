//! The four subcommands. Each writes its outputs and a manifest into `cfg.out`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use eki_core::diagnostics::{self, RateFit, RunComparison, TimeSeries};
use eki_core::ensemble::{ensemble_mean, sample_ensemble};
use eki_core::flow::{self, Trajectory};
use eki_core::imaging;
use eki_core::model::GuideWireModel;
use eki_core::nalgebra::DMatrix;
use eki_core::problem::{InverseProblem, NoiseModel, PriorModel};
use eki_core::subsample::{self, PartitionScheme};
use eki_core::ForwardModel;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;
use crate::parallel::ParallelModel;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes `manifest.json` echoing the resolved configuration.
pub fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    summary: serde_json::Value,
) -> Result<PathBuf> {
    let path = cfg.out.join("manifest.json");
    let doc = json!({ "version": VERSION, "command": command, "config": cfg, "summary": summary });
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&doc).expect("manifest serializes"),
    )
    .map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn build_model(cfg: &RunConfig) -> Result<GuideWireModel> {
    Ok(GuideWireModel::new(
        cfg.rod.clone(),
        cfg.camera.clone(),
        cfg.sigma,
        cfg.metric,
        cfg.scaling,
    )?)
}

/// The observation vector: the ingested image if configured, else `G(truth)`.
pub fn observed_data(cfg: &RunConfig, model: &GuideWireModel) -> Result<Vec<f64>> {
    match &cfg.data {
        Some(path) => io::ingest(
            path,
            cfg.sigma,
            cfg.metric,
            Some((cfg.camera.width, cfg.camera.height)),
        ),
        None => model
            .evaluate(&cfg.truth)
            .map_err(|e| CliError::Solver(format!("synthetic data generation failed: {e}"))),
    }
}

pub fn build_prior(cfg: &RunConfig) -> Result<PriorModel> {
    let d0 = match &cfg.prior.d0 {
        Some(rows) => {
            if rows.len() != 2 || rows.iter().any(|r| r.len() != 2) {
                return Err(CliError::Config("prior d0 must be a 2x2 matrix".into()));
            }
            DMatrix::from_row_iterator(2, 2, rows.iter().flatten().copied())
        }
        None => DMatrix::identity(2, 2),
    };
    Ok(PriorModel::new(d0, cfg.prior.alpha)?)
}

/// The inverse problem for the guide-wire model with `Γ = noise_std² Id`.
pub fn build_problem(cfg: &RunConfig) -> Result<InverseProblem> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let data = observed_data(cfg, &model)?;
    let n = data.len();
    let noise = if cfg.noise_std == 1.0 {
        NoiseModel::Identity(n)
    } else {
        NoiseModel::Diagonal(vec![cfg.noise_std * cfg.noise_std; n])
    };
    let forward: Arc<dyn ForwardModel> = Arc::new(ParallelModel::new(Arc::new(model)));
    Ok(InverseProblem::new(
        forward,
        data,
        noise,
        build_prior(cfg)?,
    )?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ForwardSummary {
    pub n_pixels: usize,
    pub clipped: bool,
    pub tip: [f64; 3],
    pub files: Vec<PathBuf>,
}

/// Renders the rod at `cfg.truth` and writes the image chain.
pub fn cmd_forward(cfg: &RunConfig) -> Result<ForwardSummary> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let state = model
        .solve(&cfg.truth)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let render = imaging::render(&state, &cfg.camera);
    if render.clipped {
        log::warn!("the rod leaves the camera frame and was clipped");
    }
    let grey = imaging::to_grey(&render.image);
    let binary = imaging::threshold(&grey, cfg.sigma)?;
    let dist = imaging::distance_transform(&binary, cfg.metric)?;
    ensure_dir(&cfg.out)?;
    let mut files = Vec::new();
    let mut out = |name: &str| {
        let p = cfg.out.join(name);
        files.push(p.clone());
        p
    };
    io::write_ppm(&out("render.ppm"), &render.image)?;
    #[cfg(feature = "png")]
    io::write_png(&out("render.png"), &render.image)?;
    io::write_pgm(&out("binary.pgm"), &binary.as_grey())?;
    io::write_pgm(&out("distance.pgm"), &io::distance_to_grey(&dist))?;
    io::write_distance_csv(&out("distance.csv"), &dist)?;
    let header = ["s", "x", "y", "z"].map(String::from);
    io::write_table(
        &out("rod.csv"),
        &header,
        state.snapshot().into_iter().map(|r| r.to_vec()),
    )?;
    let tip = state.tip();
    let summary = ForwardSummary {
        n_pixels: dist.values.len(),
        clipped: render.clipped,
        tip: [tip.x, tip.y, tip.z],
        files,
    };
    write_manifest(cfg, "forward", serde_json::to_value(&summary).unwrap())?;
    Ok(summary)
}

/// Result of an inversion run.
#[derive(Debug, Clone)]
pub struct InversionOutcome {
    pub trajectory: Trajectory,
    pub residuals: TimeSeries,
    pub estimate: [f64; 2],
    pub physical: [f64; 2],
}

fn trajectory_rows(traj: &Trajectory, residuals: &TimeSeries) -> (Vec<String>, Vec<Vec<f64>>) {
    let n = traj.samples[0].ensemble.len();
    let d = traj.samples[0].ensemble.dim();
    let mut header: Vec<String> = ["t", "mean_residual", "V_e", "lambda_min"]
        .map(String::from)
        .to_vec();
    header.extend((0..d).map(|k| format!("u_mean_{k}")));
    for j in 0..n {
        header.extend((0..d).map(|k| format!("u{j}_{k}")));
    }
    let rows = traj
        .samples
        .iter()
        .zip(&residuals.values)
        .map(|(s, r)| {
            let mut row = vec![s.t(), *r, s.spread, s.lambda_min];
            row.extend(ensemble_mean(&s.ensemble).iter());
            for p in s.ensemble.particles() {
                row.extend(p.iter());
            }
            row
        })
        .collect();
    (header, rows)
}

fn run_inversion(cfg: &RunConfig, command: &str, subsampled: bool) -> Result<InversionOutcome> {
    let p = build_problem(cfg)?;
    let e0 = sample_ensemble(
        &cfg.ensemble.mean,
        &cfg.ensemble.spread,
        cfg.ensemble.size,
        cfg.ensemble_seed(),
    )?;
    let started = std::time::Instant::now();
    let traj = if subsampled {
        let part = subsample::partition(
            &p,
            cfg.n_sub,
            PartitionScheme::HorizontalBands {
                width: cfg.camera.width,
                height: cfg.camera.height,
            },
        )?;
        let schedule = cfg.schedule.resolve(cfg.flow.t_end)?;
        subsample::integrate_subsampled(&e0, &p, &part, &cfg.flow, &schedule, cfg.seed, 1)?
    } else {
        flow::integrate(&e0, &p, &cfg.flow)?
    };
    let residuals = diagnostics::mean_residual(&traj, &p)?;
    let estimate_pv = traj.final_mean();
    let estimate = [estimate_pv[0], estimate_pv[1]];
    let physical = cfg
        .scaling
        .to_physical(&estimate)
        .map_err(|e| CliError::Solver(e.to_string()))?;

    ensure_dir(&cfg.out)?;
    let (header, rows) = trajectory_rows(&traj, &residuals);
    io::write_table(&cfg.out.join("trajectory.csv"), &header, rows)?;
    if subsampled {
        let header = ["switch_time", "new_index"].map(String::from);
        let rows = traj.switches.iter().map(|s| vec![s.t, s.index as f64]);
        io::write_table(&cfg.out.join("switches.csv"), &header, rows)?;
    }
    let summary = json!({
        "estimate": estimate,
        "physical": { "density": physical[0], "youngs_modulus": physical[1] },
        "terminal_residual": residuals.last().map(|(_, v)| v),
        "forward_evaluations": traj.forward_evaluations,
        "accepted_steps": traj.stats.accepted,
        "rejected_steps": traj.stats.rejected,
        "forward_failures": traj.failures.len(),
        "switches": traj.switches.len(),
        "initial_index": traj.initial_index,
        "seconds": started.elapsed().as_secs_f64(),
    });
    std::fs::write(
        cfg.out.join("estimate.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )
    .map_err(|e| CliError::io(&cfg.out.join("estimate.json"), e))?;
    write_manifest(cfg, command, summary)?;
    Ok(InversionOutcome {
        trajectory: traj,
        residuals,
        estimate,
        physical,
    })
}

/// Full-data regularised (or configured) EKI flow.
pub fn cmd_invert(cfg: &RunConfig) -> Result<InversionOutcome> {
    run_inversion(cfg, "invert", false)
}

/// Subsampled EKI over horizontal bands of the image.
pub fn cmd_invert_subsampled(cfg: &RunConfig) -> Result<InversionOutcome> {
    run_inversion(cfg, "invert-sub", true)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseSummary {
    pub window: [f64; 2],
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub samples: usize,
    pub terminal_ratio: Option<f64>,
    pub max_tail_log_distance: Option<f64>,
}

/// Reads the `t` and `mean_residual` columns of a trajectory CSV.
pub fn read_residual_series(path: &Path) -> Result<TimeSeries> {
    let (header, rows) = io::read_table(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::parse(path, format!("missing column `{name}`")))
    };
    let (ti, ri) = (col("t")?, col("mean_residual")?);
    let times = rows.iter().map(|r| r[ti]).collect();
    let values = rows.iter().map(|r| r[ri]).collect();
    TimeSeries::new(times, values).map_err(|e| CliError::parse(path, e))
}

/// Rate fit of a trajectory's residual and an optional comparison run.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<DiagnoseSummary> {
    let path = cfg
        .diagnose
        .trajectory
        .clone()
        .unwrap_or_else(|| cfg.out.join("trajectory.csv"));
    let series = read_residual_series(&path)?;
    let window = match cfg.diagnose.window {
        Some(w) => w,
        None => {
            let positive: Vec<f64> = series.times.iter().copied().filter(|t| *t > 0.0).collect();
            let (lo, hi) = (
                *positive
                    .first()
                    .ok_or_else(|| CliError::parse(&path, "no positive times"))?,
                *positive.last().unwrap(),
            );
            [(lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp(), hi]
        }
    };
    let fit: RateFit = diagnostics::fit_power_law(&series, (window[0], window[1]))?;
    let comparison: Option<RunComparison> = match &cfg.diagnose.reference {
        Some(r) => Some(diagnostics::compare_runs(
            &read_residual_series(r)?,
            &series,
        )?),
        None => None,
    };
    let summary = DiagnoseSummary {
        window,
        rate: fit.rate,
        prefactor: fit.prefactor,
        r_squared: fit.r_squared,
        samples: fit.samples,
        terminal_ratio: comparison.as_ref().map(|c| c.terminal_ratio),
        max_tail_log_distance: comparison.as_ref().map(|c| c.max_tail_log_distance),
    };
    ensure_dir(&cfg.out)?;
    let out = cfg.out.join("diagnose.json");
    std::fs::write(&out, serde_json::to_string_pretty(&summary).unwrap())
        .map_err(|e| CliError::io(&out, e))?;
    write_manifest(cfg, "diagnose", serde_json::to_value(&summary).unwrap())?;
    Ok(summary)
}
