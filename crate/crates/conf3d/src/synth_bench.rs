//! Synthetic detection corpora with controllable error structure.
//!
//! Real detector outputs make bad test fixtures: every effect is
//! entangled. Here the ground truth, the detector's error process, and
//! the informativeness of scores and features are all dialed in
//! explicitly, so a claim like "depth error dominates" or "features
//! predict loss" is true by construction and measurable downstream.
//!
//! The scene model is deliberately plain: a straight road, cars at
//! stratified depths, a pinhole camera (721 px focal length, 1242x375
//! image) deciding each box's 2D footprint and with it the difficulty
//! bucket. Detections are ground truth plus Gaussian noise per component,
//! with depth noise optionally growing with distance; false positives and
//! misses are independent coin flips. Every frame is generated from its
//! own RNG stream, so frame `k` of a 10-frame corpus is bitwise identical
//! to frame `k` of a 1000-frame corpus under the same seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::box_geometry::Box3D;
use crate::confidence::{BoxLoss, TrainRecord};
use crate::detection_eval::FrameData;
use crate::error::{Error, Result};
use crate::kitti_io::{
    write_detection_file, write_label_file, write_pose_csv, write_split_manifest, Annotation,
    Detection, FeatureRow, GeoPose, PoseTable, ScoreMode, SplitManifest,
};

pub const FOCAL_LENGTH_PX: f64 = 721.0;
pub const IMAGE_WIDTH_PX: f64 = 1242.0;
pub const IMAGE_HEIGHT_PX: f64 = 375.0;
/// Depth range objects are spawned in, meters.
pub const MIN_DEPTH_M: f64 = 6.0;
pub const MAX_DEPTH_M: f64 = 55.0;
/// Camera height above the road plane, meters.
const CAMERA_HEIGHT_M: f64 = 1.65;
/// Box-quality loss assigned to a false positive in a frame with no
/// ground truth at all: far worse than any plausible real detection.
const ORPHAN_FP_LOSS: f64 = 50.0;

/// How the synthetic detector's 2D score behaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScoreModel {
    /// Scores reflect 2D evidence: near objects score high, false
    /// positives score low. Says nothing about 3D quality on purpose.
    Informative,
    /// Scores are uniform noise; ranking by them is meaningless.
    Noise,
}

/// How detection features relate to the (unobservable at test time)
/// box-quality loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureModel {
    /// Feature 0 is the loss itself; a linear readout can recover the
    /// loss ranking exactly.
    LossLinear,
    /// Feature 0 mixes loss with noise: `rho * loss + (1 - rho) * eta`
    /// with `eta` scaled to the loss magnitude. `rho = 1` carries the
    /// full signal, `rho = 0` none of it.
    LossNoisy { rho: f64 },
}

/// Full error-process description for the synthetic detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub sigma_hwl: f64,
    pub sigma_yaw: f64,
    /// Depth noise scales as `sigma_z * (z / 20)^z_error_exponent`;
    /// 0 makes it depth-independent.
    pub z_error_exponent: f64,
    /// Per object slot, probability of adding one spurious detection.
    pub fp_rate: f64,
    /// Per ground-truth object, probability of missing it.
    pub fn_rate: f64,
    pub score2d_model: ScoreModel,
    pub feature_model: FeatureModel,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_x: 0.15,
            sigma_y: 0.05,
            sigma_z: 0.35,
            sigma_hwl: 0.06,
            sigma_yaw: 0.05,
            z_error_exponent: 1.0,
            fp_rate: 0.1,
            fn_rate: 0.05,
            score2d_model: ScoreModel::Informative,
            feature_model: FeatureModel::LossLinear,
        }
    }
}

impl NoiseSpec {
    /// A detector with no errors at all; useful for exactness checks.
    pub fn perfect() -> Self {
        NoiseSpec {
            sigma_x: 0.0,
            sigma_y: 0.0,
            sigma_z: 0.0,
            sigma_hwl: 0.0,
            sigma_yaw: 0.0,
            z_error_exponent: 0.0,
            fp_rate: 0.0,
            fn_rate: 0.0,
            score2d_model: ScoreModel::Informative,
            feature_model: FeatureModel::LossLinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("sigma_z", self.sigma_z),
            ("sigma_hwl", self.sigma_hwl),
            ("sigma_yaw", self.sigma_yaw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.z_error_exponent.is_finite() {
            return Err(Error::invalid("z_error_exponent must be finite"));
        }
        for (name, v) in [("fp_rate", self.fp_rate), ("fn_rate", self.fn_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if let FeatureModel::LossNoisy { rho } = self.feature_model {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::invalid(format!("rho must be in [0, 1], got {rho}")));
            }
        }
        Ok(())
    }

    fn sigma_z_at(&self, z: f64) -> f64 {
        self.sigma_z * (z / 20.0).powf(self.z_error_exponent)
    }
}

/// Where frames sit on the map: consecutive runs of frames form
/// sequences driving east, on parallel roads offset to the north.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    pub frames_per_sequence: usize,
    /// Ego motion between consecutive frames of a sequence, meters.
    pub frame_spacing_m: f64,
    /// Distance between parallel sequence roads, meters.
    pub sequence_offset_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl Default for RoadLayout {
    fn default() -> Self {
        RoadLayout {
            frames_per_sequence: 10,
            frame_spacing_m: 5.0,
            sequence_offset_m: 500.0,
            origin_lat: 49.0,
            origin_lon: 8.4,
        }
    }
}

impl RoadLayout {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_sequence == 0 {
            return Err(Error::invalid("frames_per_sequence must be at least 1"));
        }
        if !(self.frame_spacing_m.is_finite() && self.frame_spacing_m >= 0.0)
            || !(self.sequence_offset_m.is_finite() && self.sequence_offset_m >= 0.0)
        {
            return Err(Error::invalid("layout spacings must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn sequence_of(&self, frame_idx: usize) -> String {
        format!("seq_{:03}", frame_idx / self.frames_per_sequence)
    }

    /// GPS pose of a frame: local equirectangular conversion around the
    /// origin, north along latitude, east along longitude.
    pub fn pose(&self, frame_idx: usize) -> (f64, f64) {
        let seq = frame_idx / self.frames_per_sequence;
        let step = frame_idx % self.frames_per_sequence;
        let north_m = seq as f64 * self.sequence_offset_m;
        let east_m = step as f64 * self.frame_spacing_m;
        let meters_per_deg = crate::box_geometry::EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let lat = self.origin_lat + north_m / meters_per_deg;
        let lon = self.origin_lon + east_m / (meters_per_deg * self.origin_lat.to_radians().cos());
        (lat, lon)
    }
}

/// One generated frame; misses and false positives are already applied,
/// and every detection carries its feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub frame_id: String,
    pub ground_truth: Vec<Annotation>,
    pub detections: Vec<Detection>,
}

/// A complete generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub frames: Vec<SynthFrame>,
    /// One record per detection, frame-major, in detection order. The
    /// loss is the detection's true box loss against its source object
    /// (nearest object, or a fixed large value, for false positives).
    pub records: Vec<TrainRecord>,
    pub poses: PoseTable,
}

impl SynthCorpus {
    pub fn frame_data(&self) -> Vec<FrameData> {
        self.frames
            .iter()
            .map(|f| FrameData {
                detections: f.detections.clone(),
                ground_truth: f.ground_truth.clone(),
            })
            .collect()
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest::from_ids(self.frames.iter().map(|f| f.frame_id.clone()))
    }

    /// Writes the corpus in the layout the rest of the toolkit reads:
    /// `gt/` and `det/` label directories, `poses.csv`, `records.csv`,
    /// `features.csv`, and `split.txt`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let gt_dir = dir.join("gt");
        let det_dir = dir.join("det");
        std::fs::create_dir_all(&gt_dir)?;
        std::fs::create_dir_all(&det_dir)?;
        for frame in &self.frames {
            std::fs::write(
                gt_dir.join(format!("{}.txt", frame.frame_id)),
                write_label_file(&frame.ground_truth),
            )?;
            std::fs::write(
                det_dir.join(format!("{}.txt", frame.frame_id)),
                write_detection_file(&frame.detections, ScoreMode::Score2d)?,
            )?;
        }
        std::fs::write(dir.join("poses.csv"), write_pose_csv(&self.poses))?;
        std::fs::write(
            dir.join("records.csv"),
            crate::confidence::write_train_record_csv(&self.records),
        )?;
        let mut feature_rows = Vec::new();
        for frame in &self.frames {
            for (det_index, det) in frame.detections.iter().enumerate() {
                feature_rows.push(FeatureRow {
                    frame_id: frame.frame_id.clone(),
                    det_index,
                    class_id: 0,
                    features: det.features.clone().unwrap_or_default(),
                });
            }
        }
        std::fs::write(
            dir.join("features.csv"),
            crate::kitti_io::write_feature_csv(&feature_rows),
        )?;
        std::fs::write(dir.join("split.txt"), write_split_manifest(&self.manifest()))?;
        Ok(())
    }
}

/// Standard normal draw via Box-Muller; always consumes exactly two
/// uniforms, which keeps the stream layout easy to reason about.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Projects a 3D box onto the image: clipped 2D bounds plus the fraction
/// of the unclipped footprint that fell outside the image.
fn project_bbox(b: &Box3D) -> ([f64; 4], f64) {
    let cx = IMAGE_WIDTH_PX / 2.0;
    let cy = IMAGE_HEIGHT_PX / 2.0;
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for [x, z] in b.bev_corners() {
        let z = z.max(0.1);
        for y in [b.y - b.h, b.y] {
            let u = cx + FOCAL_LENGTH_PX * x / z;
            let v = cy + FOCAL_LENGTH_PX * y / z;
            min_u = min_u.min(u);
            max_u = max_u.max(u);
            min_v = min_v.min(v);
            max_v = max_v.max(v);
        }
    }
    let full = ((max_u - min_u) * (max_v - min_v)).max(1e-9);
    let cu0 = min_u.clamp(0.0, IMAGE_WIDTH_PX);
    let cu1 = max_u.clamp(0.0, IMAGE_WIDTH_PX);
    let cv0 = min_v.clamp(0.0, IMAGE_HEIGHT_PX);
    let cv1 = max_v.clamp(0.0, IMAGE_HEIGHT_PX);
    let visible = ((cu1 - cu0) * (cv1 - cv0)).max(0.0);
    ([cu0, cv0, cu1, cv1], (1.0 - visible / full).clamp(0.0, 1.0))
}

fn annotation_for(b: &Box3D) -> Annotation {
    let (bbox, truncation) = project_bbox(b);
    Annotation {
        class_name: "Car".to_string(),
        truncation,
        occlusion: 0,
        alpha: b.yaw - b.x.atan2(b.z),
        bbox,
        height: b.h,
        width: b.w,
        length: b.l,
        x: b.x,
        y: b.y,
        z: b.z,
        rotation_y: b.yaw,
    }
}

fn features_for<R: Rng>(spec: &NoiseSpec, loss: f64, z: f64, rng: &mut R) -> Vec<f64> {
    let x0 = match spec.feature_model {
        FeatureModel::LossLinear => loss,
        FeatureModel::LossNoisy { rho } => rho * loss + (1.0 - rho) * (1.0 + loss) * normal(rng),
    };
    vec![x0, z / 20.0, normal(rng), normal(rng)]
}

fn tp_score<R: Rng>(spec: &NoiseSpec, z: f64, rng: &mut R) -> f64 {
    match spec.score2d_model {
        ScoreModel::Informative => (0.92 - 0.005 * z + 0.05 * normal(rng)).clamp(0.01, 0.99),
        ScoreModel::Noise => rng.random_range(0.01..0.99),
    }
}

fn fp_score<R: Rng>(spec: &NoiseSpec, z: f64, rng: &mut R) -> f64 {
    match spec.score2d_model {
        ScoreModel::Informative => (0.40 - 0.003 * z + 0.08 * normal(rng)).clamp(0.01, 0.99),
        ScoreModel::Noise => rng.random_range(0.01..0.99),
    }
}

/// Spawns a plausible car at depth `z`, kept inside the viewing frustum.
fn random_object<R: Rng>(z: f64, rng: &mut R) -> Box3D {
    let x_lim = (0.38 * z).min(8.0);
    let x = rng.random_range(-x_lim..x_lim);
    let h = (1.5 + 0.12 * normal(rng)).clamp(1.2, 2.1);
    let w = (1.7 + 0.10 * normal(rng)).clamp(1.4, 2.1);
    let l = (4.2 + 0.35 * normal(rng)).clamp(3.2, 5.5);
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Box3D::new(x, CAMERA_HEIGHT_M, z, h, w, l, yaw)
}

fn noisy_copy<R: Rng>(gt: &Box3D, spec: &NoiseSpec, rng: &mut R) -> Box3D {
    Box3D::new(
        gt.x + spec.sigma_x * normal(rng),
        gt.y + spec.sigma_y * normal(rng),
        (gt.z + spec.sigma_z_at(gt.z) * normal(rng)).max(0.5),
        (gt.h + spec.sigma_hwl * normal(rng)).max(0.2),
        (gt.w + spec.sigma_hwl * normal(rng)).max(0.2),
        (gt.l + spec.sigma_hwl * normal(rng)).max(0.2),
        gt.yaw + spec.sigma_yaw * normal(rng),
    )
}

fn generate_frame(
    frame_idx: usize,
    objects_per_frame: usize,
    spec: &NoiseSpec,
    seed: u64,
) -> (SynthFrame, Vec<TrainRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is reserved; frames use their own streams so a frame's
    // content does not depend on how many frames the corpus has.
    rng.set_stream(frame_idx as u64 + 1);

    // Stratified depths keep objects from overlapping in bird's-eye view.
    let span = (MAX_DEPTH_M - MIN_DEPTH_M) / objects_per_frame.max(1) as f64;
    let gt_boxes: Vec<Box3D> = (0..objects_per_frame)
        .map(|i| {
            let z = MIN_DEPTH_M + span * (i as f64 + rng.random_range(0.2..0.8));
            random_object(z, &mut rng)
        })
        .collect();
    let ground_truth: Vec<Annotation> = gt_boxes.iter().map(annotation_for).collect();

    let loss_fn = BoxLoss::DisentangledSmoothL1;
    let mut detections = Vec::new();
    let mut records = Vec::new();

    for gt in &gt_boxes {
        let missed = rng.random::<f64>() < spec.fn_rate;
        // The noise draws are consumed either way so that toggling
        // fn_rate does not reshuffle every later object's noise.
        let noisy = noisy_copy(gt, spec, &mut rng);
        let score = tp_score(spec, gt.z, &mut rng);
        let loss = loss_fn.eval(&noisy, gt);
        let features = features_for(spec, loss, noisy.z, &mut rng);
        if missed {
            continue;
        }
        // The detection reports the true object's 2D extent: the premise
        // is a detector whose image-plane output is fine and whose 3D
        // placement is what wobbles.
        let mut base = annotation_for(gt);
        base.height = noisy.h;
        base.width = noisy.w;
        base.length = noisy.l;
        base.x = noisy.x;
        base.y = noisy.y;
        base.z = noisy.z;
        base.rotation_y = noisy.yaw;
        base.alpha = noisy.yaw - noisy.x.atan2(noisy.z);
        base.truncation = 0.0;
        let mut det = Detection::new(base, score);
        det.features = Some(features.clone());
        detections.push(det);
        records.push(TrainRecord { class_id: 0, loss, features });
    }

    for _ in 0..objects_per_frame.max(1) {
        if rng.random::<f64>() >= spec.fp_rate {
            continue;
        }
        let z = rng.random_range(MIN_DEPTH_M..MAX_DEPTH_M);
        let fp_box = random_object(z, &mut rng);
        let score = fp_score(spec, z, &mut rng);
        let loss = gt_boxes
            .iter()
            .map(|gt| loss_fn.eval(&fp_box, gt))
            .fold(f64::INFINITY, f64::min);
        let loss = if loss.is_finite() { loss } else { ORPHAN_FP_LOSS };
        let features = features_for(spec, loss, fp_box.z, &mut rng);
        let mut det = Detection::new(annotation_for(&fp_box), score);
        det.base.truncation = 0.0;
        det.features = Some(features.clone());
        detections.push(det);
        records.push(TrainRecord { class_id: 0, loss, features });
    }

    let frame = SynthFrame {
        frame_id: format!("{frame_idx:06}"),
        ground_truth,
        detections,
    };
    (frame, records)
}

/// Generates a corpus of `n_frames` frames under the default road layout.
pub fn generate_corpus(
    n_frames: usize,
    objects_per_frame: usize,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<SynthCorpus> {
    generate_corpus_with_layout(n_frames, objects_per_frame, spec, &RoadLayout::default(), seed)
}

pub fn generate_corpus_with_layout(
    n_frames: usize,
    objects_per_frame: usize,
    spec: &NoiseSpec,
    layout: &RoadLayout,
    seed: u64,
) -> Result<SynthCorpus> {
    spec.validate()?;
    layout.validate()?;
    if n_frames == 0 {
        return Err(Error::invalid("corpus needs at least one frame"));
    }

    let mut frames = Vec::with_capacity(n_frames);
    let mut records = Vec::new();
    let mut poses = Vec::with_capacity(n_frames);
    for frame_idx in 0..n_frames {
        let (frame, frame_records) = generate_frame(frame_idx, objects_per_frame, spec, seed);
        let (lat, lon) = layout.pose(frame_idx);
        poses.push(GeoPose {
            frame_id: frame.frame_id.clone(),
            sequence_id: layout.sequence_of(frame_idx),
            lat,
            lon,
        });
        records.extend(frame_records);
        frames.push(frame);
    }
    Ok(SynthCorpus { frames, records, poses: PoseTable { poses, missing: Vec::new() } })
}
