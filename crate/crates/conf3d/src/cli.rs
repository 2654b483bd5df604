//! The `conf3d` command-line surface.
//!
//! One thin binary, eight subcommands, each a direct orchestration of one
//! library module. Conventions shared by all of them:
//!
//! * every output is byte-identical across reruns with the same flags and
//!   seed: no wall-clock entropy, fixed number formatting, sorted orders;
//! * reports are JSON when the output path ends in `.json`, CSV otherwise;
//! * exit codes: 0 success, 2 bad input (parse, validation, I/O), 3
//!   numerical failure;
//! * `--threads` (or the `CONF3D_THREADS` env var) caps frame-level
//!   parallelism without changing any result.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::confidence::{
    calibration_bins, calibration_to_csv, parse_train_record_csv, train_scorer, CombineRule,
    ConfidenceConfig, Scorer, TargetMode, TrainOptions,
};
use crate::detection_eval::{
    eval_result_to_csv, eval_result_to_json, evaluate, ApMode, EvalConfig, FrameData, Metric,
};
use crate::error::{Error, Result};
use crate::geo_split::{geosep_filter, overlap_audit, split_train_val, GeosepOptions};
use crate::kitti_io::{
    parse_detection_file, parse_feature_csv, parse_split_manifest, read_detection_dir,
    read_label_dir, read_pose_input, write_detection_file, write_split_manifest, ScoreMode,
};
use crate::oracle_analysis::{oracle_sweep, parse_components, sweep_to_csv, SweepConfig};
use crate::synth_bench::{generate_corpus, NoiseSpec};

#[derive(Parser)]
#[command(
    name = "conf3d",
    version,
    about = "Evaluation and learned-confidence rescoring toolkit for KITTI-format 3D detection"
)]
struct Cli {
    /// Worker threads for frame-level parallelism (default: all cores;
    /// env fallback CONF3D_THREADS). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute average precision over a detection directory.
    Eval(EvalArgs),
    /// Rewrite detection scores using a trained confidence scorer.
    Rescore(RescoreArgs),
    /// Train a confidence scorer from a record file.
    TrainConf(TrainConfArgs),
    /// Build a geographically separated training split.
    Geosep(GeosepArgs),
    /// Measure overlap between two splits.
    Audit(AuditArgs),
    /// Per-component oracle substitution sweep.
    Oracle(OracleArgs),
    /// Bin predicted against realized confidence.
    Calib(CalibArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    #[value(name = "3d")]
    ThreeD,
    Bev,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ApArg {
    R40,
    R11,
}

impl From<ApArg> for ApMode {
    fn from(a: ApArg) -> ApMode {
        match a {
            ApArg::R40 => ApMode::R40,
            ApArg::R11 => ApMode::R11,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Absolute,
    Relative,
}

impl From<ModeArg> for TargetMode {
    fn from(m: ModeArg) -> TargetMode {
        match m {
            ModeArg::Absolute => TargetMode::Absolute,
            ModeArg::Relative => TargetMode::Relative,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RescoreMode {
    /// score2d * predicted 3D confidence.
    Combined,
    /// Predicted 3D confidence replaces the score outright.
    #[value(name = "3d-only")]
    ThreeDOnly,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth label directory (per-frame `<frame_id>.txt`).
    #[arg(long)]
    gt: PathBuf,
    /// Detection directory (same layout, 16-column rows).
    #[arg(long)]
    det: PathBuf,
    /// Frame-id manifest selecting which frames to evaluate.
    #[arg(long)]
    split: PathBuf,
    /// Comma-separated class list.
    #[arg(long, default_value = "Car,Pedestrian,Cyclist")]
    classes: String,
    #[arg(long, value_enum, default_value = "both")]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "r40")]
    ap: ApArg,
    /// IoU threshold for Car.
    #[arg(long, default_value_t = 0.7)]
    iou_car: f64,
    /// IoU threshold for every other class.
    #[arg(long, default_value_t = 0.5)]
    iou_ped: f64,
    /// Treat frames without a detection file as empty instead of failing.
    #[arg(long)]
    allow_missing: bool,
    /// Report path; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RescoreArgs {
    #[arg(long)]
    det: PathBuf,
    /// Trained scorer JSON.
    #[arg(long)]
    scorer: PathBuf,
    /// Feature table covering every detection (frame_id, det_index).
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value = "combined")]
    mode: RescoreMode,
    /// Combination rule used in `combined` mode.
    #[arg(long, value_enum, default_value = "product")]
    rule: RuleArg,
    /// Output directory for rewritten detection files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Product,
    Mean,
}

#[derive(Args)]
struct TrainConfArgs {
    /// Training records CSV (`class_id,loss,feat_*`).
    #[arg(long)]
    records: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Loss-to-confidence temperature for absolute mode.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Hidden layer widths, comma-separated.
    #[arg(long, default_value = "512,512")]
    hidden: String,
    #[arg(long, default_value_t = 1.0)]
    loss_weight: f64,
    #[arg(long)]
    seed: u64,
    /// Scorer JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional `epoch,loss` CSV tracking the training curve.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Args)]
struct GeosepArgs {
    /// Candidate pose table (CSV file or OXTS directory).
    #[arg(long)]
    candidates: PathBuf,
    /// Protected pose table (CSV file or OXTS directory).
    #[arg(long)]
    protected: PathBuf,
    /// Exclusion radius in meters; retention is strictly-greater.
    #[arg(long, default_value_t = 200.0)]
    radius: f64,
    /// Drop candidates sharing a capture sequence with protected frames.
    #[arg(long)]
    exclude_sequences: bool,
    /// Validation frames carved out of the retained set (0 = none).
    #[arg(long, default_value_t = 0)]
    val_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_val: PathBuf,
    /// Filter report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    split_a: PathBuf,
    #[arg(long)]
    split_b: PathBuf,
    /// Pose table enabling sequence-level attribution.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    /// Frame-id manifest; defaults to every `.txt` in the gt directory.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Component groups to substitute, comma-separated.
    #[arg(long, default_value = "R,HWL,XY,Z")]
    components: String,
    #[arg(long, default_value = "Car")]
    class: String,
    #[arg(long, value_enum, default_value = "r40")]
    ap: ApArg,
    /// Treat frames without a detection file as empty instead of failing.
    #[arg(long)]
    allow_missing: bool,
    /// Sweep table path; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibArgs {
    /// Predicted confidences, one per line.
    #[arg(long)]
    preds: PathBuf,
    /// Realized targets, one per line, aligned with --preds.
    #[arg(long)]
    realized: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Bin table path; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    frames: usize,
    /// Ground-truth objects per frame.
    #[arg(long, default_value_t = 5)]
    objects: usize,
    /// Noise profile file (.toml or .json); defaults when omitted.
    #[arg(long)]
    noise_profile: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
}

/// Parses flags, dispatches, and maps the outcome to an exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("CONF3D_THREADS").ok().and_then(|v| v.parse().ok()));
    let outcome = match threads {
        Some(n) if n > 0 => {
            match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| dispatch(cli.command)),
                Err(e) => Err(Error::invalid(format!("could not build thread pool: {e}"))),
            }
        }
        _ => dispatch(cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => 3,
                _ => 2,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Eval(a) => cmd_eval(a),
        Command::Rescore(a) => cmd_rescore(a),
        Command::TrainConf(a) => cmd_train_conf(a),
        Command::Geosep(a) => cmd_geosep(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Calib(a) => cmd_calib(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn parse_csv_list(list: &str, what: &str) -> Result<Vec<String>> {
    let items: Vec<String> =
        list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::invalid(format!("{what} list is empty")));
    }
    Ok(items)
}

fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read split {}: {e}", path.display())))?;
    Ok(parse_split_manifest(&text).manifest.frame_ids().to_vec())
}

/// Sorted frame ids of every `.txt` file directly inside `dir`.
fn list_frame_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::invalid(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn load_frames(
    gt_dir: &Path,
    det_dir: &Path,
    ids: &[String],
    allow_missing: bool,
) -> Result<Vec<FrameData>> {
    let gts = read_label_dir(gt_dir, ids)?;
    let dets = read_detection_dir(det_dir, ids, allow_missing)?;
    Ok(gts
        .into_iter()
        .zip(dets)
        .map(|(ground_truth, detections)| FrameData { detections, ground_truth })
        .collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let classes = parse_csv_list(&a.classes, "class")?;
    let ids = read_manifest(&a.split)?;
    let frames = load_frames(&a.gt, &a.det, &ids, a.allow_missing)?;

    let mut thresholds = BTreeMap::new();
    for class in &classes {
        let t = if class == "Car" { a.iou_car } else { a.iou_ped };
        thresholds.insert(class.clone(), t);
    }
    let metrics = match a.metric {
        MetricArg::ThreeD => vec![Metric::ThreeD],
        MetricArg::Bev => vec![Metric::Bev],
        MetricArg::Both => vec![Metric::ThreeD, Metric::Bev],
    };
    let cfg = EvalConfig {
        classes,
        iou_thresholds: thresholds,
        metrics,
        ap_mode: a.ap.into(),
        ..Default::default()
    };
    let result = evaluate(&frames, &cfg)?;
    let text =
        if is_json(&a.out) { eval_result_to_json(&result)? } else { eval_result_to_csv(&result) };
    write_text(&a.out, &text)
}

fn cmd_rescore(a: RescoreArgs) -> Result<()> {
    let scorer_text = std::fs::read_to_string(&a.scorer)
        .map_err(|e| Error::invalid(format!("cannot read scorer {}: {e}", a.scorer.display())))?;
    let scorer = Scorer::from_json(&scorer_text)?;
    let feature_text = std::fs::read_to_string(&a.features).map_err(|e| {
        Error::invalid(format!("cannot read features {}: {e}", a.features.display()))
    })?;
    let rows = parse_feature_csv(&feature_text)?;
    let mut by_key: BTreeMap<(String, usize), &crate::kitti_io::FeatureRow> = BTreeMap::new();
    for row in &rows {
        if by_key.insert((row.frame_id.clone(), row.det_index), row).is_some() {
            return Err(Error::invalid(format!(
                "duplicate feature row for frame {} det {}",
                row.frame_id, row.det_index
            )));
        }
    }

    let ids = list_frame_ids(&a.det)?;
    if ids.is_empty() {
        return Err(Error::invalid(format!(
            "no detection files found in {}",
            a.det.display()
        )));
    }
    std::fs::create_dir_all(&a.out)?;

    let mut matched_rows = 0usize;
    for id in &ids {
        let path = a.det.join(format!("{id}.txt"));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut dets = parse_detection_file(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;

        let mut missing = Vec::new();
        for (i, det) in dets.iter_mut().enumerate() {
            let Some(row) = by_key.get(&(id.clone(), i)) else {
                missing.push(i);
                continue;
            };
            matched_rows += 1;
            let p = scorer.predict(&row.features, row.class_id)?;
            match a.mode {
                RescoreMode::Combined => det.score3d = Some(p),
                RescoreMode::ThreeDOnly => {
                    det.score2d = p;
                    det.score3d = None;
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "frame {id}: no feature rows for detection indices {missing:?}"
            )));
        }

        let score_mode = match (a.mode, a.rule) {
            (RescoreMode::ThreeDOnly, _) => ScoreMode::Score2d,
            (RescoreMode::Combined, RuleArg::Product) => ScoreMode::Combined,
            (RescoreMode::Combined, RuleArg::Mean) => {
                // Fold the mean rule into score2d so the writer stays simple.
                for det in &mut dets {
                    let p = det.score3d.take().expect("combined mode fills every score3d");
                    det.score2d = crate::confidence::combine_scores_with(
                        CombineRule::MeanRenormalize,
                        det.score2d,
                        p,
                    )?;
                }
                ScoreMode::Score2d
            }
        };
        let out_text = write_detection_file(&dets, score_mode)?;
        std::fs::write(a.out.join(format!("{id}.txt")), out_text)?;
    }

    if matched_rows != rows.len() {
        return Err(Error::invalid(format!(
            "feature table has {} rows but only {matched_rows} matched a detection; \
             the table must cover exactly the detections being rescored",
            rows.len()
        )));
    }
    Ok(())
}

fn cmd_train_conf(a: TrainConfArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.records)
        .map_err(|e| Error::invalid(format!("cannot read records {}: {e}", a.records.display())))?;
    let records = parse_train_record_csv(&text)?;
    let hidden = parse_csv_list(&a.hidden, "hidden width")?
        .iter()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("hidden width is not an integer: {s:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;

    let config = ConfidenceConfig { mode: a.mode.into(), beta: a.beta, loss_weight: a.loss_weight };
    let opts = TrainOptions {
        hidden,
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainOptions::default()
    };
    let outcome = train_scorer(&records, &config, &opts)?;
    write_text(&a.out, &outcome.scorer.to_json()?)?;
    if let Some(curve) = &a.loss_curve {
        use std::fmt::Write;
        let mut csv = String::from("epoch,loss\n");
        for (i, loss) in outcome.epoch_losses.iter().enumerate() {
            writeln!(csv, "{},{loss:.6}", i + 1).expect("writing to String cannot fail");
        }
        write_text(curve, &csv)?;
    }
    println!(
        "trained {} parameters on {} records; final epoch loss {:.6}; {} singletons skipped",
        outcome.scorer.param_count(),
        records.len(),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
        outcome.singletons_skipped
    );
    Ok(())
}

fn cmd_geosep(a: GeosepArgs) -> Result<()> {
    let candidates = read_pose_input(&a.candidates)?;
    let protected = read_pose_input(&a.protected)?;
    let opts = GeosepOptions { radius_m: a.radius, exclude_sequences: a.exclude_sequences };
    let (retained, report) = geosep_filter(&candidates, &protected, &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    let (train, val) = if a.val_size == 0 {
        (retained.clone(), crate::kitti_io::SplitManifest::default())
    } else {
        split_train_val(&retained, a.val_size, a.seed)?
    };
    write_text(&a.out_train, &write_split_manifest(&train))?;
    write_text(&a.out_val, &write_split_manifest(&val))?;
    if let Some(path) = &a.report {
        write_text(path, &to_pretty_json(&report)?)?;
    }
    println!(
        "retained {} of {} candidates (distance {}, sequence {}, missing pose {}); verified: {}",
        report.retained,
        report.total_candidates,
        report.dropped_distance,
        report.dropped_sequence,
        report.dropped_missing_pose,
        report.verified
    );
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> Result<()> {
    let split_a = crate::kitti_io::SplitManifest::from_ids(read_manifest(&a.split_a)?);
    let split_b = crate::kitti_io::SplitManifest::from_ids(read_manifest(&a.split_b)?);
    let poses = match &a.poses {
        Some(path) => Some(read_pose_input(path)?),
        None => None,
    };
    let report = overlap_audit(&split_a, &split_b, poses.as_ref());
    write_text(&a.report, &to_pretty_json(&report)?)?;
    println!(
        "shared frames: {} of {} ({:.1}%)",
        report.shared_frames,
        report.frames_b,
        100.0 * report.shared_fraction_of_b
    );
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let components = parse_components(&a.components)?;
    let ids = match &a.split {
        Some(path) => read_manifest(path)?,
        None => list_frame_ids(&a.gt)?,
    };
    if ids.is_empty() {
        return Err(Error::invalid("no frames to analyze"));
    }
    let frames = load_frames(&a.gt, &a.det, &ids, a.allow_missing)?;
    let cfg = SweepConfig { class: a.class, ap_mode: a.ap.into(), ..Default::default() };
    let rows = oracle_sweep(&frames, &cfg, &components)?;
    let text = if is_json(&a.out) { to_pretty_json(&rows)? } else { sweep_to_csv(&rows) };
    write_text(&a.out, &text)
}

fn read_float_lines(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse::<f64>()
                .map_err(|_| Error::parse(idx + 1, format!("not a number: {t:?}")))?,
        );
    }
    Ok(out)
}

fn cmd_calib(a: CalibArgs) -> Result<()> {
    let preds = read_float_lines(&a.preds)?;
    let realized = read_float_lines(&a.realized)?;
    let bins = calibration_bins(&preds, &realized, a.bins)?;
    let text = if is_json(&a.out) { to_pretty_json(&bins)? } else { calibration_to_csv(&bins) };
    write_text(&a.out, &text)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.noise_profile {
        None => NoiseSpec::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::invalid(format!("cannot read noise profile {}: {e}", path.display()))
            })?;
            match path.extension().and_then(|e| e.to_str()) {
                Some("toml") => toml::from_str(&text)
                    .map_err(|e| Error::invalid(format!("noise profile: {e}")))?,
                Some("json") => serde_json::from_str(&text)?,
                other => {
                    return Err(Error::invalid(format!(
                        "noise profile must be .toml or .json, got {other:?}"
                    )));
                }
            }
        }
    };
    let corpus = generate_corpus(a.frames, a.objects, &spec, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    corpus.write_to_dir(&a.out)?;
    let total_dets: usize = corpus.frames.iter().map(|f| f.detections.len()).sum();
    println!(
        "wrote {} frames, {} ground-truth objects, {} detections to {}",
        corpus.frames.len(),
        corpus.frames.iter().map(|f| f.ground_truth.len()).sum::<usize>(),
        total_dets,
        a.out.display()
    );
    Ok(())
}
