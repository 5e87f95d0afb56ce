//! Command implementations. Each returns a [`RunReport`]; artifacts go to
//! the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mammobot_core::imaging::{bmode_volume_normalized, cnr, ImagingError, RfFrame, Roi};
use mammobot_core::raster::{read_raster, write_pgm, write_raster, RasterError};
use mammobot_core::simworld::{rng_for, ScenarioConfig, SimError};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{
    calibrate_all, calibrate_force, calibrate_handeye, calibrate_us, jittered_start, run_trial,
    PipelineError, TrialOutcome,
};
use crate::report::RunReport;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CommandError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Pipeline(e) => e.kind(),
            Self::Raster(_) => "raster",
            Self::Io { .. } => "io",
            Self::Json { .. } => "json",
            Self::Usage(_) => "usage",
        }
    }
}

impl From<SimError> for CommandError {
    fn from(e: SimError) -> Self {
        Self::Pipeline(e.into())
    }
}

impl From<ImagingError> for CommandError {
    fn from(e: ImagingError) -> Self {
        Self::Pipeline(e.into())
    }
}

type Result<T> = std::result::Result<T, CommandError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Scenario, seed and output directory shared by all commands.
#[derive(Debug, Clone)]
pub struct Context {
    pub scenario: ScenarioConfig,
    pub scenario_path: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    /// Loads the scenario (built-in default when `path` is `None`). A seed
    /// given here overrides the scenario's.
    pub fn load(
        path: Option<&Path>,
        seed: Option<u64>,
        zero_noise: bool,
        out: &Path,
    ) -> Result<Self> {
        let mut scenario = match path {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if zero_noise {
            scenario = scenario.zero_noise();
        }
        scenario.validate()?;
        let seed = seed.unwrap_or(scenario.seed);
        Ok(Self {
            scenario,
            scenario_path: path.map(Path::to_path_buf),
            seed,
            out: out.to_path_buf(),
        })
    }

    fn report(&self, command: &str) -> RunReport {
        RunReport::new(command, self.scenario_path.as_deref(), self.seed)
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let p = self.out.join(name);
        Ok(BufWriter::new(File::create(&p).map_err(io_err(&p))?))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T, report: &mut RunReport) -> Result<()> {
        let mut f = self.file(name)?;
        let p = self.out.join(name);
        serde_json::to_writer_pretty(&mut f, value).map_err(|source| CommandError::Json {
            path: p.clone(),
            source,
        })?;
        f.flush().map_err(io_err(&p))?;
        report.artifact(name);
        Ok(())
    }
}

/// Runs `f`, timing it and turning an error into a report with an error
/// record. Writes `metrics.json` and `report.json` in every case.
pub fn execute(
    command: &str,
    out: &Path,
    scenario: Option<&Path>,
    seed: u64,
    f: impl FnOnce() -> Result<RunReport>,
) -> RunReport {
    let start = Instant::now();
    let mut report = f().unwrap_or_else(|e| {
        let mut r = RunReport::new(command, scenario, seed);
        r.error(e.kind(), e.to_string());
        r
    });
    report.wall_time = start.elapsed().as_secs_f64();
    if let Err(e) = report.write(out) {
        report.error("io", format!("{}: {e}", out.display()));
    }
    report
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationKind {
    HandEye,
    Us,
    Force,
}

impl CalibrationKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::HandEye => "handeye",
            Self::Us => "us",
            Self::Force => "force",
        }
    }
}

pub fn cmd_calibrate(ctx: &Context, kind: CalibrationKind, init_truth: bool) -> Result<RunReport> {
    let s = &ctx.scenario;
    let mut rng = rng_for(ctx.seed, 0);
    let mut report = ctx.report(&format!("calibrate {}", kind.name()));
    match kind {
        CalibrationKind::HandEye => {
            let o = calibrate_handeye(s, &mut rng)?;
            report
                .metric("pairs", o.pairs as f64, "count")
                .metric("rotation_error", o.rotation_error_rad, "rad")
                .metric("rotation_error_deg", o.rotation_error_rad.to_degrees(), "deg")
                .metric("translation_error", o.translation_error_mm, "mm")
                .metric("residual_rms_rotation", o.residual.rms_rotation, "rad")
                .metric("residual_rms_translation", o.residual.rms_translation, "mm");
            ctx.write_json("handeye.json", &o.t_ec, &mut report)?;
        }
        CalibrationKind::Us => {
            let init = init_truth.then(|| s.truth.us_calibration());
            let o = calibrate_us(s, init, &mut rng)?;
            let r = &o.report;
            report
                .metric("iterations", r.iterations as f64, "count")
                .metric("converged", if r.converged() { 1.0 } else { 0.0 }, "bool")
                .metric("final_cost", r.final_cost, "mm^2")
                .metric("final_grad_norm", r.final_grad_norm, "1")
                .metric("rotation_error", o.error.rotation_rad, "rad")
                .metric("rotation_error_deg", o.error.rotation_rad.to_degrees(), "deg")
                .metric("translation_error", o.error.translation_mm, "mm")
                .metric("scale_error_rel", o.error.scale_rel, "1");
            ctx.write_json("us_calibration.json", &r.calibration, &mut report)?;
            let mut f = ctx.file("us_trace.csv")?;
            r.write_trace_csv(&mut f)
                .and_then(|_| f.flush())
                .map_err(io_err(&ctx.out.join("us_trace.csv")))?;
            report.artifact("us_trace.csv");
        }
        CalibrationKind::Force => {
            let o = calibrate_force(s, &mut rng)?;
            report
                .metric("train_samples", o.train_samples as f64, "count")
                .metric("test_samples", o.test_samples as f64, "count")
                .metric("basis_size", o.model.basis_size() as f64, "count")
                .metric("uncompensated_force_rms", o.uncompensated_force_rms, "N")
                .metric("uncompensated_torque_rms", o.uncompensated_torque_rms, "N*mm")
                .metric("residual_force_rms", o.residual_force_rms, "N")
                .metric("residual_torque_rms", o.residual_torque_rms, "N*mm")
                .metric("residual_ratio", o.residual_ratio(), "1");
            ctx.write_json("force_model.json", &o.model, &mut report)?;
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// scan

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoiPair {
    pub target: Roi,
    pub background: Roi,
}

/// ROI file read by `cnr`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoiFile {
    pub us: RoiPair,
    pub xray: RoiPair,
}

/// Square-ish target around `(row, col)` and an equal background block
/// shifted sideways by `shift` columns, both clipped to the image.
fn roi_pair(shape: (usize, usize), row: f64, col: f64, half: (usize, usize), shift: usize) -> RoiPair {
    let (rows, cols) = (2 * half.0 + 1, 2 * half.1 + 1);
    let place = |center: f64, half: usize, size: usize, limit: usize| {
        let c = center.round().max(0.0) as usize;
        c.saturating_sub(half).min(limit.saturating_sub(size))
    };
    let r0 = place(row, half.0, rows, shape.0);
    let c0 = place(col, half.1, cols, shape.1);
    let bc = if c0 + shift + cols <= shape.1 {
        c0 + shift
    } else {
        c0.saturating_sub(shift)
    };
    RoiPair {
        target: Roi::new(r0, c0, rows, cols),
        background: Roi::new(r0, bc, rows, cols),
    }
}

fn trial_metrics(report: &mut RunReport, t: &TrialOutcome, s: &ScenarioConfig) {
    let c = &s.control;
    report
        .metric("lesion", t.lesion as f64, "index")
        .metric("path_waypoints", t.path.len() as f64, "count")
        .metric("ik_iterations", t.ik_iterations as f64, "count")
        .metric("navigation_error_x", t.navigation_error.x, "mm")
        .metric("navigation_error_y", t.navigation_error.y, "mm")
        .metric("navigation_error_z", t.navigation_error.z, "mm")
        .metric("navigation_error_in_plane", t.navigation_error.in_plane(), "mm")
        .metric("error_x", t.repeatability_error.x, "mm")
        .metric("error_y", t.repeatability_error.y, "mm")
        .metric("error_z", t.repeatability_error.z, "mm")
        .metric("descent_stop_force", t.descent.stop_force, "N")
        .metric("descent_stop_time", t.descent.stop_time, "s")
        .metric("peak_frame", t.peak.frame as f64, "index")
        .metric("peak_row", t.peak.row as f64, "index")
        .metric("peak_col", t.peak.col as f64, "index")
        .metric("volume_extent", t.volume.elevational_extent(), "mm")
        .metric("scan_overshoot", t.scan.overshoot(c.f_target), "N")
        .metric("contact_events", t.scan.events.len() as f64, "count");
    if let Some(st) = t.scan.force_stats(c.settle_time) {
        report
            .metric("force_mean", st.mean, "N")
            .metric("force_std", st.std, "N");
    }
}

pub fn cmd_scan(ctx: &Context, lesion: usize) -> Result<RunReport> {
    let s = &ctx.scenario;
    let calib = calibrate_all(s, &mut rng_for(ctx.seed, 0))?;
    let mut rng = rng_for(ctx.seed, 1);
    let start = jittered_start(s, &mut rng);
    let t = run_trial(s, &calib, lesion, start, &mut rng)?;
    let mut report = ctx.report("scan");
    trial_metrics(&mut report, &t, s);

    let mut f = ctx.file("scan_log.csv")?;
    t.scan
        .write_csv(&mut f)
        .and_then(|_| f.flush())
        .map_err(io_err(&ctx.out.join("scan_log.csv")))?;
    report.artifact("scan_log.csv");
    ctx.write_json("scan_events.json", &t.scan.events, &mut report)?;

    let mut f = ctx.file("path.csv")?;
    let p = ctx.out.join("path.csv");
    writeln!(f, "q1,q2,q3,q4,q5,q6").map_err(io_err(&p))?;
    for q in &t.path {
        let row: Vec<String> = q.iter().map(f64::to_string).collect();
        writeln!(f, "{}", row.join(",")).map_err(io_err(&p))?;
    }
    f.flush().map_err(io_err(&p))?;
    report.artifact("path.csv");

    let sc = calib.us.scale;
    let im = &s.imaging;
    write_raster(
        &ctx.out.join("volume.f32"),
        &t.volume.frames,
        [sc[1], sc[0], im.frame_spacing],
    )?;
    report.artifact("volume.f32");
    write_raster(
        &ctx.out.join("rf_center.f32"),
        std::slice::from_ref(&t.center_rf.samples),
        [t.center_rf.axial_spacing, t.center_rf.lateral_spacing, 1.0],
    )?;
    report.artifact("rf_center.f32");
    write_pgm(
        &ctx.out.join("bmode_peak.pgm"),
        &t.volume.frames[t.peak.frame],
        0.0,
        1.0,
    )?;
    report.artifact("bmode_peak.pgm");

    let mammo = &t.registration.mammogram;
    let xr = &s.xray;
    write_raster(
        &ctx.out.join("xray.f32"),
        std::slice::from_ref(&mammo.image),
        [xr.pixel_size, xr.pixel_size, 1.0],
    )?;
    report.artifact("xray.f32");
    write_pgm(
        &ctx.out.join("xray.pgm"),
        &mammo.image,
        0.0,
        xr.marker_intensity,
    )?;
    report.artifact("xray.pgm");

    let radius = s.lesions[lesion].radius;
    let frame_shape = t.volume.frame_shape().expect("volume has frames");
    let us_half = (
        ((0.6 * radius / sc[1]).round() as usize).max(1),
        ((0.6 * radius / sc[0]).round() as usize).max(1),
    );
    let us = roi_pair(
        frame_shape,
        t.peak.row as f64,
        t.peak.col as f64,
        us_half,
        frame_shape.1 / 4,
    );
    let lp = mammo.lesion_px[lesion];
    let xh = ((0.6 * radius / xr.pixel_size).round() as usize).max(1);
    let xray = roi_pair(mammo.image.dim(), lp[1], lp[0], (xh, xh), 8 * xh);
    ctx.write_json("rois.json", &RoiFile { us, xray }, &mut report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// repeatability

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisSummary {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

/// Mean, sample standard deviation and maximum.
pub fn summarize(values: &[f64]) -> AxisSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    AxisSummary {
        mean,
        std: var.sqrt(),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn cmd_repeatability(ctx: &Context, trials: usize, lesion: usize) -> Result<RunReport> {
    if trials < 2 {
        return Err(CommandError::Usage("repeatability needs at least 2 trials".into()));
    }
    let s = &ctx.scenario;
    let calib = calibrate_all(s, &mut rng_for(ctx.seed, 0))?;
    let outcomes: Vec<_> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(ctx.seed, 1 + i as u64);
            let start = jittered_start(s, &mut rng);
            run_trial(s, &calib, lesion, start, &mut rng)
        })
        .collect();

    let mut report = ctx.report("repeatability");
    let mut f = ctx.file("repeatability.csv")?;
    let p = ctx.out.join("repeatability.csv");
    writeln!(
        f,
        "trial,e_x,e_y,e_z,nav_x,nav_y,nav_z,force_mean,force_std,overshoot"
    )
    .map_err(io_err(&p))?;
    let mut abs = [Vec::new(), Vec::new(), Vec::new()];
    let mut nav = Vec::new();
    let mut force = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        match o {
            Ok(t) => {
                let e = t.repeatability_error;
                let n = t.navigation_error;
                let st = t.scan.force_stats(s.control.settle_time);
                let (fm, fs) = st.map(|st| (st.mean, st.std)).unwrap_or((f64::NAN, f64::NAN));
                writeln!(
                    f,
                    "{i},{},{},{},{},{},{},{fm},{fs},{}",
                    e.x,
                    e.y,
                    e.z,
                    n.x,
                    n.y,
                    n.z,
                    t.scan.overshoot(s.control.f_target)
                )
                .map_err(io_err(&p))?;
                abs[0].push(e.x.abs());
                abs[1].push(e.y.abs());
                abs[2].push(e.z.abs());
                nav.push(n.in_plane());
                force.push(fm);
            }
            Err(e) => {
                log::warn!("trial {i} failed: {e}");
                report.error(e.kind(), format!("trial {i}: {e}"));
            }
        }
    }
    f.flush().map_err(io_err(&p))?;
    report.artifact("repeatability.csv");
    report
        .metric("trials", trials as f64, "count")
        .metric("succeeded", nav.len() as f64, "count");
    if !nav.is_empty() {
        for (axis, v) in ["x", "y", "z"].iter().zip(&abs) {
            let a = summarize(v);
            report
                .metric(&format!("error_{axis}_mean"), a.mean, "mm")
                .metric(&format!("error_{axis}_std"), a.std, "mm")
                .metric(&format!("error_{axis}_max"), a.max, "mm");
        }
        let n = summarize(&nav);
        report
            .metric("navigation_error_mean", n.mean, "mm")
            .metric("navigation_error_max", n.max, "mm");
        let fm = summarize(&force);
        report.metric("force_mean_mean", fm.mean, "N");
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// cnr

pub fn cmd_cnr(ctx: &Context, volume: &Path, xray: &Path, rois: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(rois).map_err(io_err(rois))?;
    let rois: RoiFile = serde_json::from_str(&text).map_err(|source| CommandError::Json {
        path: rois.to_path_buf(),
        source,
    })?;
    let (frames, _) = read_raster(volume)?;
    let (ximg, _) = read_raster(xray)?;
    let ximg = ximg
        .first()
        .ok_or_else(|| CommandError::Usage("x-ray raster holds no frame".into()))?;
    let per_frame = frames
        .iter()
        .map(|f| cnr(f, &rois.us.target, &rois.us.background))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if per_frame.is_empty() {
        return Err(ImagingError::EmptyVolume.into());
    }
    let us_mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    let us_max = per_frame.iter().cloned().fold(0.0, f64::max);
    let x = cnr(ximg, &rois.xray.target, &rois.xray.background)?;

    let mut report = ctx.report("cnr");
    let mut f = ctx.file("cnr_frames.csv")?;
    let p = ctx.out.join("cnr_frames.csv");
    writeln!(f, "frame,cnr").map_err(io_err(&p))?;
    for (i, v) in per_frame.iter().enumerate() {
        writeln!(f, "{i},{v}").map_err(io_err(&p))?;
    }
    f.flush().map_err(io_err(&p))?;
    report.artifact("cnr_frames.csv");
    let mut f = ctx.file("cnr_table.csv")?;
    let p = ctx.out.join("cnr_table.csv");
    writeln!(f, "modality,cnr\nultrasound,{us_mean}\nxray,{x}").map_err(io_err(&p))?;
    f.flush().map_err(io_err(&p))?;
    report.artifact("cnr_table.csv");
    report
        .metric("frames", per_frame.len() as f64, "count")
        .metric("us_cnr_mean", us_mean, "1")
        .metric("us_cnr_max", us_max, "1")
        .metric("xray_cnr", x, "1");
    Ok(report)
}

// ---------------------------------------------------------------------------
// bmode

/// RF raster (axial × lines per frame) to a B-mode raster normalized over
/// all frames, plus a PGM of the middle frame.
pub fn cmd_bmode(ctx: &Context, rf: &Path, dynamic_range_db: Option<f64>) -> Result<RunReport> {
    let (frames, meta) = read_raster(rf)?;
    let rf_frames = frames
        .into_iter()
        .map(|f| RfFrame::new(f, meta.spacings[0], meta.spacings[1]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let dr = dynamic_range_db.unwrap_or(ctx.scenario.imaging.dynamic_range_db);
    let images: Vec<Array2<f64>> = bmode_volume_normalized(&rf_frames, dr)?;
    let mut report = ctx.report("bmode");
    fs::create_dir_all(&ctx.out).map_err(io_err(&ctx.out))?;
    write_raster(&ctx.out.join("bmode.f32"), &images, meta.spacings)?;
    report.artifact("bmode.f32");
    if let Some(mid) = images.get(images.len() / 2) {
        write_pgm(&ctx.out.join("bmode.pgm"), mid, 0.0, 1.0)?;
        report.artifact("bmode.pgm");
    }
    report
        .metric("frames", images.len() as f64, "count")
        .metric("rows", meta.rows as f64, "count")
        .metric("cols", meta.cols as f64, "count")
        .metric("dynamic_range", dr, "dB");
    Ok(report)
}

/// Writes the effective scenario so it can be edited and fed back.
pub fn cmd_scenario(ctx: &Context) -> Result<RunReport> {
    let mut report = ctx.report("scenario");
    let p = ctx.out.join("scenario.json");
    fs::create_dir_all(&ctx.out).map_err(io_err(&ctx.out))?;
    fs::write(&p, ctx.scenario.to_json()).map_err(io_err(&p))?;
    report.artifact("scenario.json");
    Ok(report)
}
