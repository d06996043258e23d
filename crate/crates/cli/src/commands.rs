use anyhow::{Context, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vvtrace::geometry::Vec3;
use vvtrace::kinematics::{
    axis_distances, cdf, cdf_csv, default_tolerance, dwell_heatmap, dwell_heatmap_in, gaze_trajectory_intersection,
    rotational_acceleration_with, FloorGrid,
};
use vvtrace::ply::load_ply;
use vvtrace::predictor::baselines::{linear_regression, persistence};
use vvtrace::predictor::checkpoint;
use vvtrace::predictor::dataset::{state_of, subsample_points};
use vvtrace::predictor::metrics::{evaluate_states, mean_report, MaeaReport};
use vvtrace::predictor::train::{ablate, evaluate_model, train_with};
use vvtrace::predictor::{build_windows, split_by_user, Predictor, PredictorConfig, ViewportState, Window};
use vvtrace::roi::{compute_roi, histogram_csv, roi_csv, roi_distribution, RoiOptions};
use vvtrace::streaming::{
    simulate, LaggedOracle, LinearRegressionPredictor, ModelPredictor, OraclePredictor, PersistencePredictor,
    QualityLadder, RayPredictor, SimOptions, SimReport,
};
use vvtrace::trace::{
    axis_map, format_real, load_trace, parse_trace, resample, serialize_trace, validate_session, AxisMap, DatasetMeta,
    GazePolicy, MovementClass, TraceSchema, ValidationPolicy,
};
use vvtrace::Session;

use crate::config::RunConfig;
use crate::manifest::{digest_file, Manifest, Run};
use crate::{
    AblateArgs, Command, EvalArgs, HeatmapArgs, IngestArgs, KinematicsArgs, ModelFlags, PredictArgs, ReportArgs,
    ResampleArgs, RoiArgs, RoiFlags, SimulateArgs, TrainArgs, UsageError, ValidateArgs,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn dispatch(
    cmd: &Command,
    mut cfg: RunConfig,
    run: &mut Run,
    options: &mut serde_json::Value,
    parallel: bool,
) -> Result<()> {
    apply_flags(cmd, &mut cfg)?;
    options["config"] = serde_json::to_value(&cfg)?;
    match cmd {
        Command::Ingest(a) => ingest(a, &cfg, run),
        Command::Validate(a) => validate(a, &cfg, run),
        Command::Resample(a) => resample_cmd(a, &cfg, run),
        Command::Roi(a) => roi(a, &cfg, run),
        Command::Kinematics(a) => kinematics(a, &cfg, run),
        Command::Heatmap(a) => heatmap(a, &cfg, run),
        Command::Train(a) => train(a, &cfg, run, parallel),
        Command::Predict(a) => predict(a, &cfg, run),
        Command::Eval(a) => eval(a, &cfg, run),
        Command::Ablate(a) => ablate_cmd(a, &cfg, run),
        Command::Simulate(a) => simulate_cmd(a, &cfg, run),
        Command::Report(a) => report(a, run),
    }
}

fn apply_roi_flags(f: &RoiFlags, cfg: &mut RunConfig) {
    if let Some(v) = f.edge {
        cfg.roi.edge = v;
    }
    if let Some(v) = f.half_angle {
        cfg.roi.half_angle = v;
        cfg.streaming.half_angle = v;
    }
    if let Some(v) = f.tau0 {
        cfg.roi.tau0 = v;
    }
    if f.fixed_threshold {
        cfg.roi.adaptive_threshold = false;
    }
}

fn apply_model_flags(f: &ModelFlags, cfg: &mut RunConfig) -> Result<()> {
    match f.preset.as_deref() {
        None => {}
        Some("default") => cfg.predictor = PredictorConfig::default(),
        Some("tiny") => cfg.predictor = PredictorConfig::tiny(),
        Some(p) => return Err(usage(format!("unknown preset {p:?}; expected default or tiny"))),
    }
    let p = &mut cfg.predictor;
    if let Some(v) = f.epochs {
        p.epochs = v;
    }
    if let Some(v) = f.seed {
        p.seed = v;
    }
    if let Some(v) = f.learning_rate {
        p.learning_rate = v;
    }
    if let Some(v) = f.history {
        p.history_len = v;
    }
    if let Some(v) = f.horizon {
        p.horizon = v;
    }
    if let Some(v) = f.stride {
        cfg.dataset.window_stride = v;
    }
    if let Some(v) = f.validation_fraction {
        cfg.dataset.validation_fraction = v;
    }
    Ok(())
}

fn parse_policy(s: &str) -> Result<GazePolicy> {
    Ok(match s {
        "mask" => GazePolicy::Mask,
        "clamp" => GazePolicy::Clamp,
        "drop" => GazePolicy::Drop,
        _ => return Err(usage(format!("unknown gaze policy {s:?}; expected mask, clamp or drop"))),
    })
}

fn apply_flags(cmd: &Command, cfg: &mut RunConfig) -> Result<()> {
    match cmd {
        Command::Ingest(a) => {
            if let Some(m) = &a.axis_map {
                cfg.trace.axis_map = m.clone();
            }
        }
        Command::Validate(a) => {
            if let Some(p) = &a.gaze_policy {
                cfg.trace.gaze_policy = parse_policy(p)?;
            }
            if let Some(v) = a.min_confidence {
                cfg.trace.min_confidence = v;
            }
        }
        Command::Resample(a) => {
            if let Some(r) = a.rate {
                cfg.trace.resample_hz = r;
            }
        }
        Command::Roi(a) => apply_roi_flags(&a.roi, cfg),
        Command::Heatmap(a) => {
            let k = &mut cfg.kinematics;
            if let Some(v) = a.cell {
                k.cell = v;
            }
            if let Some(v) = a.floor_z {
                k.floor_z = v;
            }
            if a.tolerance.is_some() {
                k.tolerance = a.tolerance;
            }
            if a.capture_area {
                k.capture_area = true;
            }
        }
        Command::Train(a) => apply_model_flags(&a.model, cfg)?,
        Command::Ablate(a) => apply_model_flags(&a.model, cfg)?,
        Command::Eval(a) => {
            if let Some(v) = a.stride {
                cfg.dataset.window_stride = v;
            }
        }
        Command::Simulate(a) => {
            apply_roi_flags(&a.roi, cfg);
            let s = &mut cfg.streaming;
            if let Some(p) = &a.predictor {
                s.predictor = p.clone();
            }
            if let Some(v) = a.lag {
                s.lag = v;
            }
            if !a.budget.is_empty() {
                s.budgets = a.budget.clone();
            }
            if let Some(v) = a.horizon {
                s.horizon = v;
            }
            if let Some(v) = a.refresh {
                s.refresh = v;
            }
        }
        Command::Kinematics(_) | Command::Predict(_) | Command::Report(_) => {}
    }
    Ok(())
}

/// User id from the file stem, video id from the parent directory name.
fn ids_of(path: &Path) -> (String, String) {
    let user = path.file_stem().map_or("unknown".into(), |s| s.to_string_lossy().into_owned());
    let video = path
        .parent()
        .and_then(|p| p.file_name())
        .map_or("unknown".into(), |s| s.to_string_lossy().into_owned());
    (user, video)
}

fn load_session(run: &mut Run, path: &Path) -> Result<Session> {
    let path = run.input(path)?;
    let (user, video) = ids_of(&path);
    load_trace(&path, &TraceSchema::default(), &user, &video).with_context(|| format!("trace {}", path.display()))
}

fn ply_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")))
        .collect();
    files.sort();
    Ok(files)
}

fn load_scene(run: &mut Run, paths: &[PathBuf]) -> Result<Vec<Vec<Vec3>>> {
    let mut frames = Vec::new();
    for p in paths {
        let canon = run.input(p)?;
        let files = if canon.is_dir() { ply_files(&canon)? } else { vec![canon] };
        for f in files {
            let f = run.input(&f)?;
            frames.push(load_ply(&f).with_context(|| format!("scene {}", f.display()))?);
        }
    }
    if frames.is_empty() {
        return Err(vvtrace::Error::EmptyScene.into());
    }
    Ok(frames)
}

fn ingest(a: &IngestArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let map = AxisMap::parse(&cfg.trace.axis_map)?;
    let schema = match &a.columns {
        Some(p) => {
            let p = run.input(p)?;
            let text = std::fs::read_to_string(&p)?;
            TraceSchema {
                columns: text.split([',', '\n', '\r']).map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect(),
            }
        }
        None => TraceSchema::default(),
    };
    let input = run.input(&a.input)?;
    let (user, video) = ids_of(&input);
    let user = a.user.clone().unwrap_or(user);
    let video = a.video.clone().unwrap_or(video);
    let raw = parse_trace(&std::fs::read_to_string(&input)?, &schema, &user, &video)?;
    let s = axis_map(&raw, &map)?;
    run.write("trace.csv", serialize_trace(&s))?;
    run.write_json("ingest.json", &session_info(&s))?;
    println!("ingested {} samples ({} s) for user {user}, video {video}", s.len(), s.duration());
    Ok(())
}

#[derive(Serialize)]
struct SessionInfo {
    user_id: String,
    video_id: String,
    samples: usize,
    duration_s: f64,
    mean_rate_hz: Option<f64>,
}

fn session_info(s: &Session) -> SessionInfo {
    SessionInfo {
        user_id: s.user_id.clone(),
        video_id: s.video_id.clone(),
        samples: s.len(),
        duration_s: s.duration(),
        mean_rate_hz: (s.len() > 1 && s.duration() > 0.0).then(|| (s.len() - 1) as f64 / s.duration()),
    }
}

fn validate(a: &ValidateArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let s = load_session(run, &a.trace)?;
    let policy = ValidationPolicy { gaze: cfg.trace.gaze_policy, min_confidence: cfg.trace.min_confidence };
    let (clean, report) = validate_session(&s, &policy)?;
    run.write("validated.csv", serialize_trace(&clean))?;
    run.write_json("validation.json", &serde_json::json!({ "input": session_info(&s), "output": session_info(&clean), "report": report }))?;
    println!("kept {} of {} samples, {} repairs", clean.len(), s.len(), report.total());
    Ok(())
}

fn resample_cmd(a: &ResampleArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let s = load_session(run, &a.trace)?;
    let r = resample(&s, cfg.trace.resample_hz)?;
    run.write("resampled.csv", serialize_trace(&r))?;
    println!("resampled {} samples to {} at {} Hz", s.len(), r.len(), cfg.trace.resample_hz);
    Ok(())
}

fn roi_options(cfg: &RunConfig) -> RoiOptions {
    RoiOptions {
        edge: cfg.roi.edge,
        half_angle: cfg.roi.half_angle,
        tau0: cfg.roi.tau0,
        d_ref: cfg.roi.d_ref,
        adaptive_threshold: cfg.roi.adaptive_threshold,
        distance_mode: cfg.roi.distance_mode,
        euler_order: cfg.trace.euler_order,
    }
}

fn roi(a: &RoiArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let s = load_session(run, &a.trace)?;
    let frames = load_scene(run, &a.scene)?;
    let r = compute_roi(&s, &frames, &roi_options(cfg))?;
    run.write("roi.csv", roi_csv(&r.map))?;
    let histogram = roi_distribution(&r.map, cfg.roi.histogram_bins, cfg.roi.min_hits);
    if let Ok(d) = &histogram {
        run.write("roi_histogram.csv", histogram_csv(d))?;
    }
    let hit = r.map.entries.values().filter(|e| e.hits > 0).count();
    let max_fa = r.map.entries.values().map(|e| e.f_a).fold(0.0, f64::max);
    run.write_json(
        "roi.json",
        &serde_json::json!({
            "frames": frames.len(),
            "occupied_cubes": r.grid.cubes.len(),
            "effective_cubes": r.effective.len(),
            "cubes_with_hits": hit,
            "samples": r.map.n_sample,
            "max_f_a": max_fa,
            "histogram": histogram.as_ref().ok(),
            "histogram_error": histogram.as_ref().err().map(|e| e.to_string()),
        }),
    )?;
    println!("{} effective cubes of {} occupied, {hit} gazed", r.effective.len(), r.grid.cubes.len());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct RotationSummary {
    mean_velocity_deg_s: f64,
    mean_acceleration_deg_s2: f64,
    max_acceleration_deg_s2: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SessionKinematics {
    user_id: String,
    video_id: String,
    samples: usize,
    duration_s: f64,
    lateral_m: f64,
    forward_m: f64,
    up_down_m: f64,
    total_m: f64,
    rotation: Option<RotationSummary>,
    rotation_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct SceneKinematics {
    video_id: String,
    movement_class: Option<MovementClass>,
    users: usize,
    mean_total_m: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 }
}

fn dataset_traces(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut videos: Vec<PathBuf> =
        std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
    videos.retain(|p| p.is_dir());
    videos.sort();
    let mut out = Vec::new();
    for v in videos {
        let mut files: Vec<PathBuf> =
            std::fs::read_dir(&v)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")));
        files.sort();
        out.extend(files);
    }
    Ok(out)
}

fn kinematics(a: &KinematicsArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let (paths, meta) = match &a.dataset {
        Some(dir) => {
            let dir = run.input(dir)?;
            let meta_path = dir.join("meta.json");
            let meta = if meta_path.is_file() {
                run.input(&meta_path)?;
                Some(DatasetMeta::load(&meta_path)?)
            } else {
                None
            };
            (dataset_traces(&dir)?, meta)
        }
        None => (a.trace.clone(), None),
    };
    if paths.is_empty() {
        return Err(vvtrace::Error::EmptyDataset.into());
    }
    let single = paths.len() == 1;
    let mut sessions = Vec::new();
    for p in &paths {
        let s = load_session(run, p)?;
        let moves = axis_distances(&s)?;
        let [lateral_m, forward_m, up_down_m, total_m] = moves.final_totals();
        let rs = match a.resample {
            Some(hz) => resample(&s, hz)?,
            None => s.clone(),
        };
        let rotation = rotational_acceleration_with(&rs, cfg.trace.euler_order);
        if single {
            run.write("movement.csv", moves.to_csv())?;
            if let Ok(r) = &rotation {
                run.write("rotation.csv", r.to_csv())?;
                run.write("rotation_cdf.csv", cdf_csv(&cdf(&r.acceleration)?))?;
            }
        }
        let (rotation, rotation_error) = match rotation {
            Ok(r) => (
                Some(RotationSummary {
                    mean_velocity_deg_s: mean(&r.velocity),
                    mean_acceleration_deg_s2: mean(&r.acceleration),
                    max_acceleration_deg_s2: r.acceleration.iter().copied().fold(0.0, f64::max),
                }),
                None,
            ),
            Err(e) if !e.is_numeric() => (None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        sessions.push(SessionKinematics {
            user_id: s.user_id.clone(),
            video_id: s.video_id.clone(),
            samples: s.len(),
            duration_s: s.duration(),
            lateral_m,
            forward_m,
            up_down_m,
            total_m,
            rotation,
            rotation_error,
        });
    }
    let mut by_video: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for k in &sessions {
        by_video.entry(&k.video_id).or_default().push(k.total_m);
    }
    let class_of = |v: &str| meta.as_ref().and_then(|m| m.videos.iter().find(|x| x.name == v)).map(|x| x.movement_class);
    let scenes: Vec<SceneKinematics> = by_video
        .iter()
        .map(|(v, t)| SceneKinematics { video_id: v.to_string(), movement_class: class_of(v), users: t.len(), mean_total_m: mean(t) })
        .collect();

    let mut csv = String::from("user_id,video_id,samples,duration_s,lateral_m,forward_m,up_down_m,total_m,mean_acceleration_deg_s2\n");
    for k in &sessions {
        let acc = k.rotation.as_ref().map(|r| format_real(r.mean_acceleration_deg_s2)).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{acc}",
            k.user_id, k.video_id, k.samples, k.duration_s, k.lateral_m, k.forward_m, k.up_down_m, k.total_m
        );
    }
    run.write("sessions.csv", csv)?;
    let mut csv = String::from("video_id,movement_class,users,mean_total_m\n");
    for s in &scenes {
        let class = s.movement_class.map(|c| serde_json::to_value(c).ok().and_then(|v| v.as_str().map(String::from)));
        let _ = writeln!(csv, "{},{},{},{}", s.video_id, class.flatten().unwrap_or_default(), s.users, s.mean_total_m);
    }
    run.write("scenes.csv", csv)?;
    let overall = mean(&sessions.iter().map(|k| k.total_m).collect::<Vec<_>>());
    run.write_json(
        "kinematics.json",
        &serde_json::json!({ "sessions": sessions, "scenes": scenes, "mean_total_m": overall }),
    )?;
    println!("{} sessions over {} scenes, mean total distance {overall:.3} m", sessions.len(), scenes.len());
    Ok(())
}

fn heatmap(a: &HeatmapArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let s = load_session(run, &a.trace)?;
    let k = &cfg.kinematics;
    let dwell = if k.capture_area { dwell_heatmap_in(&s, FloorGrid::capture_area(k.cell))? } else { dwell_heatmap(&s, k.cell)? };
    let gaze = s.gaze_rays(cfg.trace.euler_order);
    let tolerance = k.tolerance.unwrap_or_else(|| default_tolerance(k.cell));
    let mask = gaze_trajectory_intersection(&s, &gaze, k.cell, tolerance, k.floor_z)?;
    run.write("dwell.csv", dwell.to_csv())?;
    run.write("dwell.pgm", dwell.to_pgm())?;
    run.write("intersection.csv", mask.to_csv())?;
    run.write("intersection.pgm", mask.to_pgm())?;
    let visited = mask.visited.iter().filter(|&&v| v).count();
    run.write_json(
        "heatmap.json",
        &serde_json::json!({
            "cell_m": k.cell,
            "tolerance_m": tolerance,
            "grid": [dwell.grid.nx, dwell.grid.ny],
            "total_dwell_s": dwell.total(),
            "duration_s": s.duration(),
            "clamped_intervals": dwell.clamped,
            "visited_cells": visited,
            "gazed_visited_cells": mask.count(),
        }),
    )?;
    println!("{visited} visited cells, {} also crossed by gaze", mask.count());
    Ok(())
}

/// Windows from every trace after resampling to the predictor rate.
fn windows(
    run: &mut Run,
    traces: &[PathBuf],
    scene: &[PathBuf],
    p: &PredictorConfig,
    stride: usize,
) -> Result<Vec<Window>> {
    let frames = load_scene(run, scene)?;
    let mut out = Vec::new();
    for t in traces {
        let s = resample(&load_session(run, t)?, p.rate_hz)?;
        out.extend(build_windows(&s, &frames, p, stride)?);
    }
    if out.is_empty() {
        return Err(vvtrace::Error::EmptyDataset.into());
    }
    Ok(out)
}

fn train(a: &TrainArgs, cfg: &RunConfig, run: &mut Run, parallel: bool) -> Result<()> {
    let p = &cfg.predictor;
    p.validate()?;
    let all = windows(run, &a.trace, &a.scene, p, cfg.dataset.window_stride)?;
    let (train_set, val_set) = split_by_user(all, cfg.dataset.validation_fraction);
    let out = train_with(&train_set, p, parallel)?;
    let validation = if val_set.is_empty() { None } else { Some(evaluate_model(&out.model, &val_set)?) };
    run.write("model.vvpm", checkpoint::to_bytes(&out.model)?)?;
    run.write("model.manifest.txt", checkpoint::manifest(&out.model))?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in out.losses.iter().enumerate() {
        let _ = writeln!(csv, "{e},{l}");
    }
    run.write("losses.csv", csv)?;
    let final_loss = out.losses.last().copied();
    run.write_json(
        "train.json",
        &serde_json::json!({
            "train_windows": train_set.len(),
            "validation_windows": val_set.len(),
            "parameters": out.model.param_count(),
            "final_loss": final_loss,
            "validation": validation,
        }),
    )?;
    println!(
        "trained on {} windows, {} parameters, final loss {}",
        train_set.len(),
        out.model.param_count(),
        final_loss.map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    Ok(())
}

fn load_model(run: &mut Run, path: &Path) -> Result<Predictor> {
    let path = run.input(path)?;
    Ok(checkpoint::from_bytes(&std::fs::read(&path)?)?)
}

fn states_csv(states: &[ViewportState], t0: f64, rate: f64) -> String {
    let mut csv = String::from("step,timestamp,x,y,z,yaw,pitch,roll\n");
    for (j, st) in states.iter().enumerate() {
        let (p, o) = (st.position, st.orientation);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            j + 1,
            t0 + (j + 1) as f64 / rate,
            p.x,
            p.y,
            p.z,
            o.yaw,
            o.pitch,
            o.roll
        );
    }
    csv
}

fn predict(a: &PredictArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let model = load_model(run, &a.model)?;
    let p = model.cfg.clone();
    let frames = load_scene(run, &a.scene)?;
    let s = resample(&load_session(run, &a.trace)?, p.rate_hz)?;
    let (n, t) = (p.history_len, p.horizon);
    let at = a.at.unwrap_or(s.len().saturating_sub(t));
    if at < n || at > s.len() {
        return Err(vvtrace::Error::InsufficientHistory { needed: n, got: at.min(s.len()) }.into());
    }
    let hist = &s.samples[at - n..at];
    let frame = hist[n - 1].frame as usize % frames.len();
    let truth: Vec<ViewportState> = s.samples[at..(at + t).min(s.len())].iter().map(state_of).collect();
    let w = Window {
        user_id: s.user_id.clone(),
        video_id: s.video_id.clone(),
        history: hist.iter().map(state_of).collect(),
        gaze: hist.iter().map(|x| x.global_gaze(cfg.trace.euler_order).0).collect(),
        scene: subsample_points(&frames[frame], p.scene_points),
        target: truth.clone(),
    };
    let pred = model.predict(&w)?;
    let t0 = hist[n - 1].timestamp;
    run.write("prediction.csv", states_csv(&pred.states, t0, p.rate_hz))?;
    let score = if truth.len() == t { Some(evaluate_states(&pred.states, &truth)?) } else { None };
    run.write_json("predict.json", &serde_json::json!({ "at": at, "horizon": t, "against_truth": score }))?;
    match score {
        Some(r) => println!("predicted {t} steps from sample {at}: MAEA {:.3} deg", r.maea_deg),
        None => println!("predicted {t} steps from sample {at}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    predictor: String,
    report: MaeaReport,
}

fn eval(a: &EvalArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let model = load_model(run, &a.model)?;
    let p = model.cfg.clone();
    let data = windows(run, &a.trace, &a.scene, &p, cfg.dataset.window_stride)?;
    let score = |f: &dyn Fn(&Window) -> vvtrace::Result<Vec<ViewportState>>| -> vvtrace::Result<MaeaReport> {
        let r = data.iter().map(|w| evaluate_states(&f(w)?, &w.target)).collect::<vvtrace::Result<Vec<_>>>()?;
        mean_report(&r)
    };
    let rows = vec![
        EvalRow { predictor: format!("model_{}", p.ablation.name()), report: evaluate_model(&model, &data)? },
        EvalRow { predictor: "persistence".into(), report: score(&|w| Ok(persistence(&w.history, p.horizon)?.states))? },
        EvalRow {
            predictor: "linear_regression".into(),
            report: score(&|w| Ok(linear_regression(&w.history, p.horizon, p.rate_hz)?.states))?,
        },
    ];
    let mut csv = String::from("predictor,maea_deg,position_mae_m\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.predictor, r.report.maea_deg, r.report.position_mae_m);
    }
    run.write("eval.csv", csv)?;
    run.write_json("eval.json", &serde_json::json!({ "windows": data.len(), "rows": rows }))?;
    for r in &rows {
        println!("{:<24} MAEA {:.3} deg, position MAE {:.4} m", r.predictor, r.report.maea_deg, r.report.position_mae_m);
    }
    Ok(())
}

fn ablate_cmd(a: &AblateArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let p = &cfg.predictor;
    p.validate()?;
    let all = windows(run, &a.trace, &a.scene, p, cfg.dataset.window_stride)?;
    let (train_set, val_set) = split_by_user(all, cfg.dataset.validation_fraction);
    let report = ablate(&train_set, &val_set, p)?;
    run.write("ablation.csv", report.to_csv())?;
    run.write_json("ablation.json", &report)?;
    for r in report.rows.iter().chain(&report.baselines) {
        println!("{:<32} MAEA {:.3} deg ({} parameters)", r.variant, r.maea_deg, r.parameters);
    }
    Ok(())
}

fn simulate_cmd(a: &SimulateArgs, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let st = &cfg.streaming;
    let ladder = QualityLadder::new(st.ladder.clone())?;
    let frames = load_scene(run, &a.scene)?;
    let mut s = load_session(run, &a.trace)?;
    let model = match st.predictor.as_str() {
        "model" => {
            let path = a.model.as_ref().ok_or_else(|| usage("--predictor model needs --model"))?;
            let m = load_model(run, path)?;
            s = resample(&s, m.cfg.rate_hz)?;
            Some(m)
        }
        _ => None,
    };
    let predictor: Box<dyn RayPredictor + '_> = match (st.predictor.as_str(), &model) {
        ("oracle", _) => Box::new(OraclePredictor),
        ("persistence", _) => Box::new(PersistencePredictor),
        ("lagged", _) => Box::new(LaggedOracle { lag: st.lag }),
        ("linear", _) => Box::new(LinearRegressionPredictor { window: st.regression_window }),
        ("model", Some(m)) => Box::new(ModelPredictor { model: m, frames: &frames }),
        (p, _) => return Err(usage(format!("unknown predictor {p:?}; expected oracle, persistence, lagged, linear or model"))),
    };
    if st.budgets.is_empty() {
        return Err(usage("at least one budget is required"));
    }
    let roi = compute_roi(&s, &frames, &roi_options(cfg))?;
    let gaze = s.gaze_rays(cfg.trace.euler_order);
    let mut reports: Vec<SimReport> = Vec::new();
    for (i, &budget) in st.budgets.iter().enumerate() {
        let opts = SimOptions { half_angle_deg: st.half_angle, budget, horizon: st.horizon, refresh: st.refresh, keep_trace: a.frames };
        let r = simulate(&s, &gaze, predictor.as_ref(), &roi.map, &ladder, &opts)?;
        if a.frames {
            run.write(&format!("frames_{i}.csv"), r.trace_csv())?;
        }
        println!(
            "{} budget {budget}: recall {:.4}, saved {:.4}, quality {:.4}",
            r.predictor, r.recall, r.bandwidth_saved, r.mean_quality
        );
        reports.push(SimReport { trace: Vec::new(), ..r });
    }
    run.write("simulation.csv", SimReport::summary_csv(&reports))?;
    run.write_json("simulation.json", &reports)?;
    Ok(())
}

#[derive(Serialize)]
struct ReportRow {
    manifest: String,
    subcommand: String,
    status: String,
    outputs: usize,
    verified: bool,
    problems: Vec<String>,
}

fn report(a: &ReportArgs, run: &mut Run) -> Result<()> {
    let dir = a.dir.clone().unwrap_or_else(|| run.out_dir.clone());
    let mut manifests: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("report directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    manifests.retain(|p| {
        p.file_name().is_some_and(|n| {
            let n = n.to_string_lossy();
            n.ends_with(".manifest.json") && n != "report.manifest.json"
        })
    });
    manifests.sort();
    let mut rows = Vec::new();
    for m in &manifests {
        let name = m.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let parsed: Manifest = serde_json::from_str(&std::fs::read_to_string(m)?)
            .map_err(vvtrace::Error::from)
            .with_context(|| format!("manifest {}", m.display()))?;
        let mut problems = Vec::new();
        for o in &parsed.outputs {
            match digest_file(&dir.join(&o.path)) {
                Ok((sha, _)) if sha == o.sha256 => {}
                Ok(_) => problems.push(format!("{}: checksum mismatch", o.path)),
                Err(e) => problems.push(format!("{}: {e}", o.path)),
            }
        }
        rows.push(ReportRow {
            manifest: name,
            subcommand: parsed.subcommand,
            status: parsed.status,
            outputs: parsed.outputs.len(),
            verified: problems.is_empty(),
            problems,
        });
    }
    let mut csv = String::from("manifest,subcommand,status,outputs,verified\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.manifest, r.subcommand, r.status, r.outputs, r.verified);
        println!("{:<12} {:<6} {} outputs, {}", r.subcommand, r.status, r.outputs, if r.verified { "verified" } else { "MODIFIED" });
    }
    run.write("report.csv", csv)?;
    run.write_json("report.json", &rows)?;
    let bad = rows.iter().filter(|r| !r.verified).count();
    if bad > 0 {
        return Err(vvtrace::Error::MisalignedInputs(format!("{bad} run(s) have outputs that no longer match their manifest")).into());
    }
    Ok(())
}
