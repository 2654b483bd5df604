//! Average precision for 3D and bird's-eye-view detection, KITTI style.
//!
//! The evaluation follows the official protocol:
//!
//! * Ground truth is bucketed into **Easy / Moderate / Hard** by image-box
//!   height, occlusion level, and truncation. A box can qualify for several
//!   buckets; one that clears none (too small, too occluded) is *ignorable*:
//!   detections landing on it are neither rewarded nor punished.
//! * Matching is greedy in descending score order. Each detection grabs the
//!   unmatched same-class ground truth with the highest IoU; it is a true
//!   positive iff that IoU clears the class threshold (0.7 for `Car`, 0.5
//!   for `Pedestrian`/`Cyclist` by default). Each ground truth matches at
//!   most once, so duplicates become false positives.
//! * Detections overlapping only out-of-difficulty ground truth, or sitting
//!   mostly inside a `DontCare` region, are ignored.
//! * AP is the mean of interpolated precision, `p(r) = max {prec at recall
//!   >= r}`, over 40 recall points `{1/40 .. 1}` ([`ApMode::R40`]) or the
//!   legacy 11 points `{0, 0.1 .. 1}` ([`ApMode::R11`]), scaled to
//!   `[0, 100]`.
//!
//! Score ties are broken by stable input order (frame order, then row
//! order); AP can differ under reordering of exact ties, so the order is
//! part of the contract. Frames are processed in parallel, with results
//! reduced in frame order so the outcome is identical to a sequential run.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::box_geometry::{iou_3d, iou_bev};
use crate::error::{Error, Result};
use crate::kitti_io::{Annotation, Detection};

/// KITTI difficulty bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Hard => "Hard",
        })
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "moderate" => Ok(Difficulty::Moderate),
            "hard" => Ok(Difficulty::Hard),
            _ => Err(Error::invalid(format!("unknown difficulty: {s:?}"))),
        }
    }
}

/// Which overlap the matcher uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    #[serde(rename = "BEV")]
    Bev,
    #[serde(rename = "3D")]
    ThreeD,
}

impl Metric {
    pub fn iou(&self, det: &Detection, gt: &Annotation) -> f64 {
        match self {
            Metric::Bev => iou_bev(&det.base.box3d(), &gt.box3d()),
            Metric::ThreeD => iou_3d(&det.base.box3d(), &gt.box3d()),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Bev => "BEV",
            Metric::ThreeD => "3D",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(Metric::Bev),
            "3d" => Ok(Metric::ThreeD),
            _ => Err(Error::invalid(format!("unknown metric: {s:?} (expected 3D or BEV)"))),
        }
    }
}

/// Recall grid for the AP integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ApMode {
    /// 40 points `{1/40, 2/40, .., 1}`: the current KITTI standard.
    R40,
    /// Legacy 11 points `{0, 0.1, .., 1}`. Includes recall 0, which makes
    /// an empty detection set score exactly 0 rather than undefined.
    R11,
}

impl ApMode {
    pub fn recall_points(&self) -> Vec<f64> {
        match self {
            ApMode::R40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
            ApMode::R11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl std::str::FromStr for ApMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r40" => Ok(ApMode::R40),
            "r11" => Ok(ApMode::R11),
            _ => Err(Error::invalid(format!("unknown AP mode: {s:?} (expected R40 or R11)"))),
        }
    }
}

/// Qualification gate for one difficulty bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyRule {
    pub difficulty: Difficulty,
    /// Minimum image-box height in pixels.
    pub min_bbox_height: f64,
    /// Maximum occlusion level (inclusive).
    pub max_occlusion: i32,
    /// Maximum truncation fraction (inclusive).
    pub max_truncation: f64,
}

impl DifficultyRule {
    pub fn qualifies(&self, ann: &Annotation) -> bool {
        ann.bbox_height() >= self.min_bbox_height
            && ann.occlusion <= self.max_occlusion
            && ann.truncation <= self.max_truncation
    }
}

/// The official KITTI gates: Easy (40 px, occlusion 0, truncation 0.15),
/// Moderate (25 px, 1, 0.30), Hard (25 px, 2, 0.50).
pub fn default_rules() -> [DifficultyRule; 3] {
    [
        DifficultyRule {
            difficulty: Difficulty::Easy,
            min_bbox_height: 40.0,
            max_occlusion: 0,
            max_truncation: 0.15,
        },
        DifficultyRule {
            difficulty: Difficulty::Moderate,
            min_bbox_height: 25.0,
            max_occlusion: 1,
            max_truncation: 0.30,
        },
        DifficultyRule {
            difficulty: Difficulty::Hard,
            min_bbox_height: 25.0,
            max_occlusion: 2,
            max_truncation: 0.50,
        },
    ]
}

/// All difficulty buckets an annotation qualifies for. The set may be
/// empty: such ground truth is ignorable at every difficulty.
pub fn assign_difficulty(ann: &Annotation, rules: &[DifficultyRule]) -> Vec<Difficulty> {
    rules.iter().filter(|r| r.qualifies(ann)).map(|r| r.difficulty).collect()
}

/// Per-detection matching outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    Tp,
    Fp,
    /// Neither rewarded nor punished: the detection overlaps only
    /// out-of-difficulty ground truth or a DontCare region.
    Ignored,
}

/// Role of one ground-truth row during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtStatus {
    /// Same class, qualifies for the difficulty: counts toward recall.
    Relevant,
    /// Same class, out of difficulty: matching it is forgiven, not rewarded.
    Ignored,
    /// DontCare region (2D only; its 3D geometry is a sentinel).
    DontCare,
}

/// A detection sitting mostly inside a DontCare image region is ignored:
/// the fraction of the detection's 2D box covered must reach this value.
pub const DONTCARE_COVERAGE: f64 = 0.5;

fn dontcare_coverage(det: &Annotation, dc: &Annotation) -> f64 {
    let a = det.bbox;
    let b = dc.bbox;
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let det_area = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    if det_area <= 0.0 {
        0.0
    } else {
        iw * ih / det_area
    }
}

/// Greedy single-frame matching.
///
/// `dets` must already be sorted by descending score (ties in stable input
/// order); each detection claims the unmatched [`GtStatus::Relevant`]
/// ground truth with the highest IoU and is a TP iff that IoU reaches
/// `iou_threshold`. A ground truth is claimed at most once. Unclaimed
/// detections are ignored if they overlap an [`GtStatus::Ignored`] ground
/// truth at threshold, or a DontCare region at [`DONTCARE_COVERAGE`];
/// otherwise they are FPs.
pub fn match_frame(
    dets: &[Detection],
    gts: &[Annotation],
    status: &[GtStatus],
    iou_fn: &dyn Fn(&Detection, &Annotation) -> f64,
    iou_threshold: f64,
) -> Vec<MatchFlag> {
    assert_eq!(gts.len(), status.len(), "one status per ground truth");
    let mut claimed = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(dets.len());
    for det in dets {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if status[gi] != GtStatus::Relevant || claimed[gi] {
                continue;
            }
            let iou = iou_fn(det, gt);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, iou)) = best {
            if iou >= iou_threshold {
                claimed[gi] = true;
                flags.push(MatchFlag::Tp);
                continue;
            }
        }
        let forgiven = gts.iter().zip(status).any(|(gt, st)| match st {
            GtStatus::Ignored => iou_fn(det, gt) >= iou_threshold,
            GtStatus::DontCare => dontcare_coverage(&det.base, gt) >= DONTCARE_COVERAGE,
            GtStatus::Relevant => false,
        });
        flags.push(if forgiven { MatchFlag::Ignored } else { MatchFlag::Fp });
    }
    flags
}

/// One frame of aligned detections and ground truth.
#[derive(Debug, Clone, Default)]
pub struct FrameData {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Annotation>,
}

/// One sampled point of the interpolated PR curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrSample {
    pub recall: f64,
    pub precision: f64,
}

/// AP for a single (class, difficulty, metric) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ApOutcome {
    /// Mean interpolated precision times 100.
    pub ap: f64,
    /// Set when no ground truth qualified; the AP is reported as 0 and
    /// should be read as "nothing to detect", not "detected nothing".
    pub no_ground_truth: bool,
    pub samples: Vec<PrSample>,
}

fn per_frame_flags(
    frames: &[FrameData],
    class: &str,
    difficulty: Difficulty,
    metric: Metric,
    iou_threshold: f64,
    rules: &[DifficultyRule],
) -> (Vec<Vec<(f64, MatchFlag)>>, usize) {
    let rule = rules
        .iter()
        .find(|r| r.difficulty == difficulty)
        .expect("a rule exists for every difficulty");
    let results: Vec<(Vec<(f64, MatchFlag)>, usize)> = frames
        .par_iter()
        .map(|frame| {
            let mut gts = Vec::new();
            let mut status = Vec::new();
            for gt in &frame.ground_truth {
                if gt.is_dontcare() {
                    gts.push(gt.clone());
                    status.push(GtStatus::DontCare);
                } else if gt.class_name == class {
                    gts.push(gt.clone());
                    status.push(if rule.qualifies(gt) {
                        GtStatus::Relevant
                    } else {
                        GtStatus::Ignored
                    });
                }
            }
            let mut dets: Vec<Detection> = frame
                .detections
                .iter()
                .filter(|d| d.base.class_name == class)
                .cloned()
                .collect();
            dets.sort_by(|a, b| b.score2d.total_cmp(&a.score2d));
            let iou_fn = |d: &Detection, g: &Annotation| metric.iou(d, g);
            let flags = match_frame(&dets, &gts, &status, &iou_fn, iou_threshold);
            let n_relevant = status.iter().filter(|s| **s == GtStatus::Relevant).count();
            let scored: Vec<(f64, MatchFlag)> =
                dets.iter().map(|d| d.score2d).zip(flags).collect();
            (scored, n_relevant)
        })
        .collect();
    let n_gt = results.iter().map(|(_, n)| n).sum();
    (results.into_iter().map(|(s, _)| s).collect(), n_gt)
}

fn interpolated_curve(
    mut scored: Vec<(f64, MatchFlag)>,
    n_gt: usize,
    recall_points: &[f64],
) -> Vec<PrSample> {
    // Stable sort: ties keep frame-major input order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ops: Vec<(f64, f64)> = Vec::new(); // (recall, precision) after each counted detection
    for (_, flag) in scored {
        match flag {
            MatchFlag::Tp => tp += 1,
            MatchFlag::Fp => fp += 1,
            MatchFlag::Ignored => continue,
        }
        ops.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // Suffix max of precision: ops recall is nondecreasing, so the best
    // precision at recall >= r is a suffix maximum.
    let mut suffix = vec![0.0f64; ops.len()];
    let mut run = 0.0f64;
    for i in (0..ops.len()).rev() {
        run = run.max(ops[i].1);
        suffix[i] = run;
    }
    recall_points
        .iter()
        .map(|&r| {
            let first = ops.partition_point(|&(recall, _)| recall < r);
            let precision = if first < ops.len() { suffix[first] } else { 0.0 };
            PrSample { recall: r, precision }
        })
        .collect()
}

fn ap_with_mode(
    frames: &[FrameData],
    class: &str,
    difficulty: Difficulty,
    metric: Metric,
    iou_threshold: f64,
    mode: ApMode,
    rules: &[DifficultyRule],
) -> ApOutcome {
    let points = mode.recall_points();
    let (per_frame, n_gt) = per_frame_flags(frames, class, difficulty, metric, iou_threshold, rules);
    if n_gt == 0 {
        let samples = points.iter().map(|&r| PrSample { recall: r, precision: 0.0 }).collect();
        return ApOutcome { ap: 0.0, no_ground_truth: true, samples };
    }
    let scored: Vec<(f64, MatchFlag)> = per_frame.into_iter().flatten().collect();
    let samples = interpolated_curve(scored, n_gt, &points);
    let ap = 100.0 * samples.iter().map(|s| s.precision).sum::<f64>() / points.len() as f64;
    ApOutcome { ap, no_ground_truth: false, samples }
}

/// AP over the 40-point recall grid.
pub fn ap_r40(
    frames: &[FrameData],
    class: &str,
    difficulty: Difficulty,
    metric: Metric,
    iou_threshold: f64,
) -> ApOutcome {
    ap_with_mode(frames, class, difficulty, metric, iou_threshold, ApMode::R40, &default_rules())
}

/// AP over the legacy 11-point recall grid.
pub fn ap_r11(
    frames: &[FrameData],
    class: &str,
    difficulty: Difficulty,
    metric: Metric,
    iou_threshold: f64,
) -> ApOutcome {
    ap_with_mode(frames, class, difficulty, metric, iou_threshold, ApMode::R11, &default_rules())
}

/// The KITTI defaults: 0.7 for Car, 0.5 otherwise.
pub fn default_iou_threshold(class: &str) -> f64 {
    if class == "Car" {
        0.7
    } else {
        0.5
    }
}

/// Full evaluation request.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub classes: Vec<String>,
    /// Per-class IoU thresholds; classes not present fall back to
    /// [`default_iou_threshold`].
    pub iou_thresholds: BTreeMap<String, f64>,
    pub metrics: Vec<Metric>,
    pub difficulties: Vec<Difficulty>,
    pub ap_mode: ApMode,
    pub rules: Vec<DifficultyRule>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            classes: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
            iou_thresholds: BTreeMap::new(),
            metrics: vec![Metric::ThreeD, Metric::Bev],
            difficulties: Difficulty::ALL.to_vec(),
            ap_mode: ApMode::R40,
            rules: default_rules().to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn threshold_for(&self, class: &str) -> f64 {
        self.iou_thresholds.get(class).copied().unwrap_or_else(|| default_iou_threshold(class))
    }
}

/// One (class, difficulty, metric) row of an evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct EvalEntry {
    pub class: String,
    pub difficulty: Difficulty,
    pub metric: Metric,
    pub ap: f64,
    pub no_ground_truth: bool,
    pub samples: Vec<PrSample>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EvalResult {
    pub entries: Vec<EvalEntry>,
}

impl EvalResult {
    pub fn find(&self, class: &str, difficulty: Difficulty, metric: Metric) -> Option<&EvalEntry> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.difficulty == difficulty && e.metric == metric)
    }
}

/// Evaluates every configured (class, difficulty, metric) cell.
pub fn evaluate(frames: &[FrameData], cfg: &EvalConfig) -> Result<EvalResult> {
    if cfg.classes.is_empty() || cfg.metrics.is_empty() || cfg.difficulties.is_empty() {
        return Err(Error::invalid("evaluation needs at least one class, metric, and difficulty"));
    }
    let mut entries = Vec::new();
    for class in &cfg.classes {
        let threshold = cfg.threshold_for(class);
        for &difficulty in &cfg.difficulties {
            for &metric in &cfg.metrics {
                let out = ap_with_mode(frames, class, difficulty, metric, threshold, cfg.ap_mode, &cfg.rules);
                entries.push(EvalEntry {
                    class: class.clone(),
                    difficulty,
                    metric,
                    ap: out.ap,
                    no_ground_truth: out.no_ground_truth,
                    samples: out.samples,
                });
            }
        }
    }
    Ok(EvalResult { entries })
}

/// `class,difficulty,metric,ap` with 6-decimal AP values.
pub fn eval_result_to_csv(result: &EvalResult) -> String {
    use std::fmt::Write;
    let mut out = String::from("class,difficulty,metric,ap\n");
    for e in &result.entries {
        writeln!(out, "{},{},{},{:.6}", e.class, e.difficulty, e.metric, e.ap)
            .expect("writing to String cannot fail");
    }
    out
}

/// Pretty JSON including the sampled PR curves.
pub fn eval_result_to_json(result: &EvalResult) -> Result<String> {
    let mut s = serde_json::to_string_pretty(result)?;
    s.push('\n');
    Ok(s)
}
