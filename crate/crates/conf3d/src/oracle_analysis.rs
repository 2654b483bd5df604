//! Error attribution by oracle substitution.
//!
//! To find out which regression target actually limits a 3D detector,
//! replace one component group of every matched detection with its
//! ground-truth value and re-evaluate. The component whose substitution
//! buys the most AP is the bottleneck. On monocular detectors the answer
//! is almost always depth: fixing Z alone recovers most of the gap to a
//! perfect box, while heading and shape fixes barely move the needle.
//!
//! Substitution needs its own detection-to-ground-truth matching, and it
//! must be more permissive than the evaluation matching: the interesting
//! detections are exactly the ones whose IoU is too poor to match at the
//! evaluation threshold. The default pairs greedily by confidence using
//! bird's-eye center distance with a generous gate.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::detection_eval::{ap_r11, ap_r40, ApMode, FrameData, Metric};
use crate::error::{Error, Result};
use crate::kitti_io::{Annotation, Detection};

/// A group of box parameters that can be swapped for ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum OracleComponent {
    /// Heading angle.
    R,
    /// Box extents: height, width, length.
    Hwl,
    /// Lateral and vertical position.
    Xy,
    /// Depth.
    Z,
}

impl OracleComponent {
    pub const ALL: [OracleComponent; 4] =
        [OracleComponent::R, OracleComponent::Hwl, OracleComponent::Xy, OracleComponent::Z];
}

impl fmt::Display for OracleComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleComponent::R => "R",
            OracleComponent::Hwl => "HWL",
            OracleComponent::Xy => "XY",
            OracleComponent::Z => "Z",
        })
    }
}

impl FromStr for OracleComponent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R" => Ok(OracleComponent::R),
            "HWL" => Ok(OracleComponent::Hwl),
            "XY" => Ok(OracleComponent::Xy),
            "Z" => Ok(OracleComponent::Z),
            _ => Err(Error::invalid(format!(
                "unknown oracle component {s:?} (expected R, HWL, XY, or Z)"
            ))),
        }
    }
}

/// Parses a comma-separated component list such as `"Z,XY,HWL,R"`.
pub fn parse_components(list: &str) -> Result<Vec<OracleComponent>> {
    list.split(',').map(|t| t.trim().parse()).collect()
}

/// How detections are paired with ground truth for substitution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchPolicy {
    /// Nearest unmatched same-class ground truth by bird's-eye center
    /// distance, accepted within `max_dist_m`.
    BevCenter { max_dist_m: f64 },
    /// Highest-overlap unmatched same-class ground truth by image-plane
    /// box IoU, accepted at or above `min_iou`.
    Bbox2dIou { min_iou: f64 },
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy::BevCenter { max_dist_m: 4.0 }
    }
}

/// Pairs detections with ground-truth boxes for substitution.
///
/// Detections are visited in descending 2D-score order (ties keep input
/// order); each claims its best-scoring unmatched ground truth of the same
/// class under the policy. DontCare regions never match. Returns, per
/// detection, the index of its ground truth.
pub fn match_detections_to_gts(
    dets: &[Detection],
    gts: &[Annotation],
    policy: &MatchPolicy,
) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b].score2d.partial_cmp(&dets[a].score2d).unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut taken = vec![false; gts.len()];
    let mut matched = vec![None; dets.len()];
    for &d in &order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.is_dontcare() || gt.class_name != det.base.class_name {
                continue;
            }
            match policy {
                MatchPolicy::BevCenter { max_dist_m } => {
                    let dist = ((det.base.x - gt.x).powi(2) + (det.base.z - gt.z).powi(2)).sqrt();
                    if dist <= *max_dist_m && best.is_none_or(|(_, b)| dist < b) {
                        best = Some((g, dist));
                    }
                }
                MatchPolicy::Bbox2dIou { min_iou } => {
                    let iou = crate::box_geometry::iou_2d(det.base.bbox, gt.bbox);
                    if iou >= *min_iou && best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched[d] = Some(g);
        }
    }
    matched
}

/// Copies the named component groups from each matched ground truth into
/// a clone of the detections. Unmatched detections and scores are left
/// untouched. Substitutions on a fixed matching commute, so the order of
/// `components` is irrelevant.
pub fn substitute_components(
    dets: &[Detection],
    gts: &[Annotation],
    matching: &[Option<usize>],
    components: &[OracleComponent],
) -> Vec<Detection> {
    assert_eq!(dets.len(), matching.len(), "one matching entry per detection");
    let mut out = dets.to_vec();
    for (det, &m) in out.iter_mut().zip(matching) {
        let Some(g) = m else { continue };
        let gt = &gts[g];
        for c in components {
            match c {
                OracleComponent::R => det.base.rotation_y = gt.rotation_y,
                OracleComponent::Hwl => {
                    det.base.height = gt.height;
                    det.base.width = gt.width;
                    det.base.length = gt.length;
                }
                OracleComponent::Xy => {
                    det.base.x = gt.x;
                    det.base.y = gt.y;
                }
                OracleComponent::Z => det.base.z = gt.z,
            }
        }
    }
    out
}

/// Matches and substitutes in one step over whole frames.
pub fn oracle_substitute(
    frames: &[FrameData],
    components: &[OracleComponent],
    policy: &MatchPolicy,
) -> Vec<FrameData> {
    frames
        .iter()
        .map(|f| {
            let matching = match_detections_to_gts(&f.detections, &f.ground_truth, policy);
            FrameData {
                detections: substitute_components(
                    &f.detections,
                    &f.ground_truth,
                    &matching,
                    components,
                ),
                ground_truth: f.ground_truth.clone(),
            }
        })
        .collect()
}

/// What a substitution sweep evaluates.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub class: String,
    pub metric: Metric,
    pub ap_mode: ApMode,
    /// Overlap threshold for the evaluation; `None` uses the class default.
    pub iou_threshold: Option<f64>,
    pub policy: MatchPolicy,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            class: "Car".to_string(),
            metric: Metric::ThreeD,
            ap_mode: ApMode::R40,
            iou_threshold: None,
            policy: MatchPolicy::default(),
        }
    }
}

/// AP per difficulty for one substitution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub component: String,
    pub easy: f64,
    pub moderate: f64,
    pub hard: f64,
}

/// Evaluates the unmodified detections ("none") and then each component
/// substitution, reporting AP at every difficulty.
pub fn oracle_sweep(
    frames: &[FrameData],
    cfg: &SweepConfig,
    components: &[OracleComponent],
) -> Result<Vec<SweepRow>> {
    if cfg.class.is_empty() {
        return Err(Error::invalid("sweep needs a class name"));
    }
    let threshold = cfg
        .iou_threshold
        .unwrap_or_else(|| crate::detection_eval::default_iou_threshold(&cfg.class));
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("IoU threshold outside (0, 1]: {threshold}")));
    }

    let row = |label: String, frames: &[FrameData]| -> SweepRow {
        let ap = |difficulty| match cfg.ap_mode {
            ApMode::R40 => ap_r40(frames, &cfg.class, difficulty, cfg.metric, threshold).ap,
            ApMode::R11 => ap_r11(frames, &cfg.class, difficulty, cfg.metric, threshold).ap,
        };
        SweepRow {
            component: label,
            easy: ap(crate::detection_eval::Difficulty::Easy),
            moderate: ap(crate::detection_eval::Difficulty::Moderate),
            hard: ap(crate::detection_eval::Difficulty::Hard),
        }
    };

    let mut rows = vec![row("none".to_string(), frames)];
    for &c in components {
        let substituted = oracle_substitute(frames, &[c], &cfg.policy);
        rows.push(row(c.to_string(), &substituted));
    }
    Ok(rows)
}

/// `component,easy,moderate,hard` with six decimals, matching the
/// evaluation CSV conventions.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    use std::fmt::Write;
    let mut out = String::from("component,easy,moderate,hard\n");
    for r in rows {
        writeln!(out, "{},{:.6},{:.6},{:.6}", r.component, r.easy, r.moderate, r.hard)
            .expect("writing to String cannot fail");
    }
    out
}
