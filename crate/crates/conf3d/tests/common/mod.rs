//! Independent oracles shared by the integration suites.
//!
//! Everything here is a second implementation written from the documented
//! behavior, deliberately naive where the library is clever: Monte-Carlo
//! point counting instead of polygon clipping, a full re-match per score
//! threshold instead of one cumulative pass. Slow and simple on purpose,
//! so a shared bug with the library is unlikely.

#![allow(dead_code)]

use conf3d::box_geometry::{iou_3d, iou_bev, Box3D};
use conf3d::detection_eval::{ApMode, Difficulty, FrameData, Metric};
use conf3d::kitti_io::{Annotation, Detection};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Monte-Carlo IoU oracles

/// Footprint membership by inverse rotation: world offset back to box-local
/// axes, then two interval checks. At yaw 0 the footprint spans l/2 along x
/// and w/2 along z.
fn footprint_contains(b: &Box3D, x: f64, z: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let dx = x - b.x;
    let dz = z - b.z;
    let lx = c * dx - s * dz;
    let lz = s * dx + c * dz;
    lx.abs() <= b.l / 2.0 && lz.abs() <= b.w / 2.0
}

fn footprint_corners(b: &Box3D) -> [[f64; 2]; 4] {
    let (s, c) = b.yaw.sin_cos();
    let mut out = [[0.0; 2]; 4];
    for (i, (lx, lz)) in
        [(b.l / 2.0, b.w / 2.0), (-b.l / 2.0, b.w / 2.0), (-b.l / 2.0, -b.w / 2.0), (b.l / 2.0, -b.w / 2.0)]
            .into_iter()
            .enumerate()
    {
        out[i] = [b.x + c * lx + s * lz, b.z - s * lx + c * lz];
    }
    out
}

/// Axis-aligned (x, z) bounds of one footprint.
fn aabb(b: &Box3D) -> ([f64; 2], [f64; 2]) {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut zs = (f64::INFINITY, f64::NEG_INFINITY);
    for [x, z] in footprint_corners(b) {
        xs = (xs.0.min(x), xs.1.max(x));
        zs = (zs.0.min(z), zs.1.max(z));
    }
    ([xs.0, xs.1], [zs.0, zs.1])
}

/// The (x, z) rectangle that confines any footprint intersection: the
/// overlap of the two axis-aligned bounds. `None` when they are disjoint.
fn intersection_window(a: &Box3D, b: &Box3D) -> Option<([f64; 2], [f64; 2])> {
    let ([ax0, ax1], [az0, az1]) = aabb(a);
    let ([bx0, bx1], [bz0, bz1]) = aabb(b);
    let x0 = ax0.max(bx0);
    let x1 = ax1.min(bx1);
    let z0 = az0.max(bz0);
    let z1 = az1.min(bz1);
    if x0 < x1 && z0 < z1 {
        Some(([x0, x1], [z0, z1]))
    } else {
        None
    }
}

/// Fraction of the smaller footprint covered by the other one, by uniform
/// sampling inside the smaller rectangle (exact sampler: uniform in local
/// box coordinates, then rotate and translate). Membership is tested only
/// against the other footprint, so the standard error of the intersection
/// area is `area_small * sqrt(p (1 - p) / n)`, several times tighter than
/// sampling any bounding window at the same `n`.
fn mc_footprint_intersection(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    if intersection_window(a, b).is_none() {
        return 0.0;
    }
    let (small, other) = if a.l * a.w <= b.l * b.w { (a, b) } else { (b, a) };
    let (s, c) = small.yaw.sin_cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..samples {
        let lx = (rng.random::<f64>() - 0.5) * small.l;
        let lz = (rng.random::<f64>() - 0.5) * small.w;
        let x = small.x + c * lx + s * lz;
        let z = small.z - s * lx + c * lz;
        if footprint_contains(other, x, z) {
            hits += 1;
        }
    }
    small.l * small.w * hits as f64 / samples as f64
}

/// BEV IoU with only the intersection area estimated by Monte-Carlo; the
/// two footprint areas themselves are exact (l * w).
pub fn mc_iou_bev(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let inter = mc_footprint_intersection(a, b, samples, seed);
    let union = a.l * a.w + b.l * b.w - inter;
    inter / union
}

/// 3D IoU. Both boxes are vertical prisms, so the intersection volume is
/// exactly (footprint intersection area) x (vertical overlap): the
/// footprint term is Monte-Carlo as in [`mc_iou_bev`], the vertical
/// interval `[y - h, y]` overlap (y points down) is plain interval math.
pub fn mc_iou_3d(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let y_overlap = a.y.min(b.y) - (a.y - a.h).max(b.y - b.h);
    if y_overlap <= 0.0 {
        return 0.0;
    }
    let inter = mc_footprint_intersection(a, b, samples, seed) * y_overlap;
    let union = a.l * a.w * a.h + b.l * b.w * b.h - inter;
    inter / union
}

// ---------------------------------------------------------------------------
// Threshold-sweep AP oracle

/// Difficulty gates, restated: minimum 2D box height in pixels, maximum
/// occlusion level, maximum truncation fraction.
fn difficulty_gate(d: Difficulty) -> (f64, i32, f64) {
    match d {
        Difficulty::Easy => (40.0, 0, 0.15),
        Difficulty::Moderate => (25.0, 1, 0.30),
        Difficulty::Hard => (25.0, 2, 0.50),
    }
}

fn gt_qualifies(gt: &Annotation, d: Difficulty) -> bool {
    let (min_h, max_occ, max_trunc) = difficulty_gate(d);
    gt.bbox[3] - gt.bbox[1] >= min_h && gt.occlusion <= max_occ && gt.truncation <= max_trunc
}

fn pair_iou(metric: Metric, det: &Detection, gt: &Annotation) -> f64 {
    match metric {
        Metric::ThreeD => iou_3d(&det.base.box3d(), &gt.box3d()),
        Metric::Bev => iou_bev(&det.base.box3d(), &gt.box3d()),
    }
}

/// Fraction of the detection's image box covered by the DontCare region.
fn coverage(det: &Annotation, dc: &Annotation) -> f64 {
    let iw = (det.bbox[2].min(dc.bbox[2]) - det.bbox[0].max(dc.bbox[0])).max(0.0);
    let ih = (det.bbox[3].min(dc.bbox[3]) - det.bbox[1].max(dc.bbox[1])).max(0.0);
    let area = (det.bbox[2] - det.bbox[0]).max(0.0) * (det.bbox[3] - det.bbox[1]).max(0.0);
    if area <= 0.0 {
        0.0
    } else {
        iw * ih / area
    }
}

/// One frame preprocessed for repeated greedy matching: detection scores
/// in descending order, the IoU of every (detection, in-difficulty ground
/// truth) pair, and the cut-independent forgiveness flag per detection
/// (overlaps an out-of-difficulty same-class ground truth at threshold,
/// or sits half inside a DontCare region).
struct PreparedFrame {
    /// Class detections sorted by descending score, ties in input order.
    scores: Vec<f64>,
    /// `iou[d][g]` for the sorted detections against relevant ground truth.
    iou: Vec<Vec<f64>>,
    forgiven: Vec<bool>,
    n_relevant: usize,
}

fn prepare_frame(
    frame: &FrameData,
    class: &str,
    difficulty: Difficulty,
    metric: Metric,
    iou_threshold: f64,
) -> PreparedFrame {
    let mut dets: Vec<&Detection> =
        frame.detections.iter().filter(|d| d.base.class_name == class).collect();
    dets.sort_by(|a, b| b.score2d.total_cmp(&a.score2d));

    let relevant: Vec<&Annotation> = frame
        .ground_truth
        .iter()
        .filter(|g| g.class_name == class && gt_qualifies(g, difficulty))
        .collect();
    let forgiving: Vec<&Annotation> = frame
        .ground_truth
        .iter()
        .filter(|g| g.class_name == class && !gt_qualifies(g, difficulty))
        .collect();
    let dontcare: Vec<&Annotation> =
        frame.ground_truth.iter().filter(|g| g.class_name == "DontCare").collect();

    PreparedFrame {
        scores: dets.iter().map(|d| d.score2d).collect(),
        iou: dets
            .iter()
            .map(|d| relevant.iter().map(|g| pair_iou(metric, d, g)).collect())
            .collect(),
        forgiven: dets
            .iter()
            .map(|d| {
                forgiving.iter().any(|g| pair_iou(metric, d, g) >= iou_threshold)
                    || dontcare.iter().any(|dc| coverage(&d.base, dc) >= 0.5)
            })
            .collect(),
        n_relevant: relevant.len(),
    }
}

/// Greedy-matches the detections of a prepared frame with scores >= `cut`
/// and returns (true positives, false positives). Each detection claims
/// the unmatched in-difficulty ground truth with the highest IoU; it is a
/// TP iff that IoU reaches the threshold. Unmatched detections marked
/// forgiven count as neither.
fn match_prepared_at(frame: &PreparedFrame, iou_threshold: f64, cut: f64) -> (usize, usize) {
    let mut claimed = vec![false; frame.n_relevant];
    let mut tp = 0;
    let mut fp = 0;
    for d in 0..frame.scores.len() {
        if frame.scores[d] < cut {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, &iou) in frame.iou[d].iter().enumerate() {
            if claimed[gi] {
                continue;
            }
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, iou)) = best {
            if iou >= iou_threshold {
                claimed[gi] = true;
                tp += 1;
                continue;
            }
        }
        if !frame.forgiven[d] {
            fp += 1;
        }
    }
    (tp, fp)
}

/// Interpolated AP by brute force: re-match the whole corpus at every
/// distinct detection score, collect the (recall, precision) points, and
/// average `max { precision : recall >= r }` over the recall grid.
///
/// Assumes detection scores are distinct (the random corpora draw them
/// continuously), since tie groups enter prefix evaluation atomically here
/// but one-by-one in a cumulative pass.
pub fn sweep_ap(
    frames: &[FrameData],
    class: &str,
    difficulty: Difficulty,
    metric: Metric,
    iou_threshold: f64,
    mode: ApMode,
) -> f64 {
    let n_gt: usize = frames
        .iter()
        .flat_map(|f| &f.ground_truth)
        .filter(|g| g.class_name == class && gt_qualifies(g, difficulty))
        .count();
    if n_gt == 0 {
        return 0.0;
    }

    let mut cuts: Vec<f64> = frames
        .iter()
        .flat_map(|f| &f.detections)
        .filter(|d| d.base.class_name == class)
        .map(|d| d.score2d)
        .collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();

    let prepared: Vec<PreparedFrame> = frames
        .iter()
        .map(|f| prepare_frame(f, class, difficulty, metric, iou_threshold))
        .collect();
    let mut points = Vec::with_capacity(cuts.len());
    for &cut in &cuts {
        let mut tp = 0;
        let mut fp = 0;
        for frame in &prepared {
            let (t, f) = match_prepared_at(frame, iou_threshold, cut);
            tp += t;
            fp += f;
        }
        if tp + fp > 0 {
            points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }

    let grid: Vec<f64> = match mode {
        ApMode::R40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
        ApMode::R11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
    };
    let interp = |r: f64| {
        points
            .iter()
            .filter(|(recall, _)| *recall >= r)
            .map(|(_, precision)| *precision)
            .fold(0.0f64, f64::max)
    };
    100.0 * grid.iter().map(|&r| interp(r)).sum::<f64>() / grid.len() as f64
}

// ---------------------------------------------------------------------------
// Random corpus construction

/// An annotation with every field spelled out; the 2D box is synthesized
/// from a height and an aspect so difficulty gates are easy to steer.
pub fn annotation(
    class: &str,
    bbox_height: f64,
    occlusion: i32,
    truncation: f64,
    xyz: [f64; 3],
    hwl: [f64; 3],
    yaw: f64,
) -> Annotation {
    Annotation {
        class_name: class.to_string(),
        truncation,
        occlusion,
        alpha: 0.0,
        bbox: [100.0, 100.0, 100.0 + bbox_height * 0.8, 100.0 + bbox_height],
        height: hwl[0],
        width: hwl[1],
        length: hwl[2],
        x: xyz[0],
        y: xyz[1],
        z: xyz[2],
        rotation_y: yaw,
    }
}

/// A random evaluation corpus exercising the awkward paths: DontCare
/// regions, out-of-difficulty ground truth, other-class rows, detections
/// both near and far from the truth, continuous scores.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_frames: usize) -> Vec<FrameData> {
    let n_frames = rng.random_range(1..=max_frames);
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut ground_truth = Vec::new();
        let n_gt = rng.random_range(0..=6);
        for _ in 0..n_gt {
            let class = match rng.random_range(0..10) {
                0 | 1 => "Pedestrian",
                2 => "Van",
                _ => "Car",
            };
            // Gate attributes lean toward qualifying so every difficulty
            // sees mid-range APs, with enough mass past each gate to
            // exercise the forgiveness path too.
            let occlusion = [0, 0, 1, 1, 2, 3][rng.random_range(0..6)];
            let truncation = if rng.random_bool(0.5) {
                rng.random_range(0.0..0.12)
            } else {
                rng.random_range(0.0..0.6)
            };
            let gt = annotation(
                class,
                rng.random_range(15.0..80.0),
                occlusion,
                truncation,
                [rng.random_range(-12.0..12.0), rng.random_range(1.0..2.0), rng.random_range(5.0..45.0)],
                [rng.random_range(1.2..2.0), rng.random_range(1.4..2.0), rng.random_range(3.0..5.0)],
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            );
            ground_truth.push(gt);
        }
        // A couple of DontCare image regions near the synthetic 2D boxes.
        for _ in 0..rng.random_range(0..=2) {
            let mut dc = annotation("DontCare", 0.0, -1, -1.0, [0.0; 3], [0.0; 3], 0.0);
            let x0 = rng.random_range(60.0..140.0);
            let y0 = rng.random_range(60.0..140.0);
            dc.bbox = [x0, y0, x0 + rng.random_range(20.0..90.0), y0 + rng.random_range(20.0..90.0)];
            ground_truth.push(dc);
        }

        let mut detections = Vec::new();
        let n_det = rng.random_range(0..=7);
        let real_gts: Vec<usize> = ground_truth
            .iter()
            .enumerate()
            .filter(|(_, g)| g.class_name != "DontCare")
            .map(|(i, _)| i)
            .collect();
        for _ in 0..n_det {
            let mut base = if !real_gts.is_empty() && rng.random_bool(0.65) {
                // Perturbed copy of a random ground truth. The perturbation
                // scale is drawn from three regimes so the IoU distribution
                // covers clear matches, values straddling both thresholds,
                // and clear misses.
                let gt = &ground_truth[real_gts[rng.random_range(0..real_gts.len())]];
                let scale = [0.08, 0.45, 1.5][rng.random_range(0..3)];
                let mut b = gt.clone();
                b.x += rng.random_range(-scale..scale);
                b.z += rng.random_range(-scale..scale);
                b.rotation_y += rng.random_range(-0.2 * scale..0.2 * scale);
                b
            } else {
                annotation(
                    "Car",
                    rng.random_range(15.0..80.0),
                    0,
                    0.0,
                    [rng.random_range(-12.0..12.0), rng.random_range(1.0..2.0), rng.random_range(5.0..45.0)],
                    [rng.random_range(1.2..2.0), rng.random_range(1.4..2.0), rng.random_range(3.0..5.0)],
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                )
            };
            // Copies mostly keep their source class (Van has no tested
            // detections, so those become Cars); a few flip between the
            // two tested classes and land as cross-class false positives.
            if base.class_name == "Van" {
                base.class_name = "Car".to_string();
            } else if rng.random_bool(0.12) {
                base.class_name =
                    if base.class_name == "Pedestrian" { "Car" } else { "Pedestrian" }.to_string();
            }
            // Fresh detection attributes: the 2D box tracks the 3D box
            // loosely, occlusion/truncation are detector outputs (zero).
            base.occlusion = 0;
            base.truncation = 0.0;
            detections.push(Detection::new(base, rng.random::<f64>()));
        }
        frames.push(FrameData { detections, ground_truth });
    }
    frames
}
