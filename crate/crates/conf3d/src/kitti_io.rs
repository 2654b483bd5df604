//! Readers and writers for the KITTI object-detection text formats.
//!
//! A label file carries one object per line, 15 whitespace-separated
//! columns:
//!
//! ```text
//! type truncated occluded alpha left top right bottom height width length x y z rotation_y
//! ```
//!
//! Detection files append a 16th column, the detector score. `DontCare`
//! rows keep their sentinel geometry (-1 sizes, -1000 positions) untouched
//! so that files round-trip byte-for-byte modulo float formatting. All
//! writers emit 6-decimal fixed-point numbers, which is enough to
//! reproduce every published metric and keeps reruns diff-clean.
//!
//! The module also handles the side tables the toolkit needs: GPS poses
//! (either raw per-frame OXTS files or the consolidated `poses.csv`),
//! newline-delimited split manifests, and per-detection feature tables.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::box_geometry::Box3D;
use crate::error::{Error, Result};

/// One ground-truth object from a KITTI label file.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Class token, preserved verbatim (`Car`, `Pedestrian`, `DontCare`, ...).
    pub class_name: String,
    /// Fraction of the object outside image bounds, `[0, 1]` for real
    /// objects, `-1` on DontCare rows.
    pub truncation: f64,
    /// Occlusion level: 0 visible, 1 partly, 2 largely, 3 unknown.
    pub occlusion: i32,
    pub alpha: f64,
    /// Image box `[left, top, right, bottom]` in pixels.
    pub bbox: [f64; 4],
    pub height: f64,
    pub width: f64,
    pub length: f64,
    /// Bottom-face center in the camera frame, meters.
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation_y: f64,
}

impl Annotation {
    pub fn box3d(&self) -> Box3D {
        Box3D::new(self.x, self.y, self.z, self.height, self.width, self.length, self.rotation_y)
    }

    /// Pixel height of the image box, the difficulty gate quantity.
    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    pub fn is_dontcare(&self) -> bool {
        self.class_name == "DontCare"
    }
}

/// A predicted box: annotation-shaped geometry plus scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub base: Annotation,
    /// Score read from (and written to) the 16th file column.
    pub score2d: f64,
    /// Learned 3D confidence, attached by the rescoring stage.
    pub score3d: Option<f64>,
    /// Per-detection feature vector used by the confidence scorer.
    pub features: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(base: Annotation, score2d: f64) -> Self {
        Detection { base, score2d, score3d: None, features: None }
    }
}

/// Which score lands in the written detection file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Write `score2d` unchanged.
    Score2d,
    /// Write the combined 2D x 3D score; every detection must carry `score3d`.
    Combined,
}

fn parse_float(token: &str, line: usize, what: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("{what} is not a number: {token:?}")))
}

fn parse_object_line(line_no: usize, line: &str) -> Result<(Annotation, Option<f64>)> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() != 15 && cols.len() != 16 {
        return Err(Error::parse(
            line_no,
            format!("expected 15 label or 16 detection columns, found {}", cols.len()),
        ));
    }
    let f = |i: usize, what: &str| parse_float(cols[i], line_no, what);
    let ann = Annotation {
        class_name: cols[0].to_string(),
        truncation: f(1, "truncation")?,
        occlusion: f(2, "occlusion")? as i32,
        alpha: f(3, "alpha")?,
        bbox: [f(4, "bbox left")?, f(5, "bbox top")?, f(6, "bbox right")?, f(7, "bbox bottom")?],
        height: f(8, "height")?,
        width: f(9, "width")?,
        length: f(10, "length")?,
        x: f(11, "x")?,
        y: f(12, "y")?,
        z: f(13, "z")?,
        rotation_y: f(14, "rotation_y")?,
    };
    let score = if cols.len() == 16 { Some(f(15, "score")?) } else { None };
    Ok((ann, score))
}

/// Parses a label file. Blank lines are skipped; anything else must be a
/// 15-column object row.
pub fn parse_label_file(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (ann, score) = parse_object_line(idx + 1, line)?;
        if score.is_some() {
            return Err(Error::parse(idx + 1, "label rows must have 15 columns, found a 16th"));
        }
        out.push(ann);
    }
    Ok(out)
}

/// Parses a detection file: 16 columns per row, score last.
pub fn parse_detection_file(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (ann, score) = parse_object_line(idx + 1, line)?;
        let score = score
            .ok_or_else(|| Error::parse(idx + 1, "detections require a 16th score column"))?;
        out.push(Detection::new(ann, score));
    }
    Ok(out)
}

fn write_annotation_columns(ann: &Annotation, out: &mut String) {
    use std::fmt::Write;
    write!(
        out,
        "{} {:.6} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        ann.class_name,
        ann.truncation,
        ann.occlusion,
        ann.alpha,
        ann.bbox[0],
        ann.bbox[1],
        ann.bbox[2],
        ann.bbox[3],
        ann.height,
        ann.width,
        ann.length,
        ann.x,
        ann.y,
        ann.z,
        ann.rotation_y
    )
    .expect("writing to String cannot fail");
}

pub fn write_label_file(anns: &[Annotation]) -> String {
    let mut out = String::new();
    for ann in anns {
        write_annotation_columns(ann, &mut out);
        out.push('\n');
    }
    out
}

/// Serializes detections. In [`ScoreMode::Combined`] every detection must
/// carry a `score3d`; missing ones are reported by index in one error.
pub fn write_detection_file(dets: &[Detection], score_mode: ScoreMode) -> Result<String> {
    use std::fmt::Write;
    if score_mode == ScoreMode::Combined {
        let missing: Vec<usize> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.score3d.is_none())
            .map(|(i, _)| i)
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "combined score requested but detections {missing:?} have no score3d"
            )));
        }
    }
    let mut out = String::new();
    for det in dets {
        let score = match score_mode {
            ScoreMode::Score2d => det.score2d,
            ScoreMode::Combined => {
                crate::confidence::combine_scores(det.score2d, det.score3d.unwrap())?
            }
        };
        write_annotation_columns(&det.base, &mut out);
        write!(out, " {score:.6}").expect("writing to String cannot fail");
        out.push('\n');
    }
    Ok(out)
}

/// GPS fix for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoPose {
    /// Zero-padded decimal frame id.
    pub frame_id: String,
    /// Capturing drive/sequence the frame belongs to.
    pub sequence_id: String,
    pub lat: f64,
    pub lon: f64,
}

/// A frame listed in a pose table without usable coordinates. Downstream
/// filters treat these conservatively (can't prove distance, so drop).
#[derive(Debug, Clone, PartialEq)]
pub struct MissingPose {
    pub frame_id: String,
    pub sequence_id: String,
}

/// Consolidated pose table: the toolkit's canonical geo interchange.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseTable {
    pub poses: Vec<GeoPose>,
    pub missing: Vec<MissingPose>,
}

impl PoseTable {
    pub fn len(&self) -> usize {
        self.poses.len() + self.missing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty() && self.missing.is_empty()
    }
}

fn validate_frame_id(id: &str, line: usize) -> Result<()> {
    if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::parse(line, format!("frame_id must be a non-negative integer: {id:?}")));
    }
    Ok(())
}

/// Parses one raw OXTS packet file and returns `(lat, lon)`, the first two
/// fields of the first non-empty line.
pub fn parse_pose_file(text: &str) -> Result<(f64, f64)> {
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let lat = fields
            .next()
            .ok_or_else(|| Error::parse(idx + 1, "empty OXTS line"))
            .and_then(|t| parse_float(t, idx + 1, "latitude"))?;
        let lon = fields
            .next()
            .ok_or_else(|| Error::parse(idx + 1, "OXTS line has no longitude field"))
            .and_then(|t| parse_float(t, idx + 1, "longitude"))?;
        return Ok((lat, lon));
    }
    Err(Error::parse(1, "pose file contains no data line"))
}

/// Parses `frame_id,sequence_id,lat,lon` CSV. A header row is optional.
/// Rows with empty or `nan` coordinates become [`PoseTable::missing`]
/// entries instead of poses.
pub fn parse_pose_csv(text: &str) -> Result<PoseTable> {
    let mut table = PoseTable::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed.starts_with("frame_id")) {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::parse(line_no, format!("expected 4 CSV columns, found {}", cols.len())));
        }
        validate_frame_id(cols[0], line_no)?;
        let coord_missing =
            |t: &str| t.is_empty() || t.eq_ignore_ascii_case("nan");
        if coord_missing(cols[2]) || coord_missing(cols[3]) {
            table.missing.push(MissingPose {
                frame_id: cols[0].to_string(),
                sequence_id: cols[1].to_string(),
            });
            continue;
        }
        let lat = parse_float(cols[2], line_no, "lat")?;
        let lon = parse_float(cols[3], line_no, "lon")?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::parse(line_no, format!("latitude out of range: {lat}")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::parse(line_no, format!("longitude out of range: {lon}")));
        }
        table.poses.push(GeoPose {
            frame_id: cols[0].to_string(),
            sequence_id: cols[1].to_string(),
            lat,
            lon,
        });
    }
    Ok(table)
}

pub fn write_pose_csv(table: &PoseTable) -> String {
    use std::fmt::Write;
    let mut out = String::from("frame_id,sequence_id,lat,lon\n");
    for p in &table.poses {
        writeln!(out, "{},{},{:.8},{:.8}", p.frame_id, p.sequence_id, p.lat, p.lon)
            .expect("writing to String cannot fail");
    }
    for m in &table.missing {
        writeln!(out, "{},{},,", m.frame_id, m.sequence_id).expect("writing to String cannot fail");
    }
    out
}

/// Reads a directory of per-frame OXTS files (`<frame_id>.txt`). The
/// directory name becomes the sequence id.
pub fn read_oxts_dir(dir: &Path) -> Result<PoseTable> {
    let sequence_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".to_string());
    let mut names: Vec<_> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().map_or(false, |e| e == "txt"))
        .collect();
    names.sort();
    let mut table = PoseTable::default();
    for path in names {
        let frame_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path)?;
        match parse_pose_file(&text) {
            Ok((lat, lon)) => table.poses.push(GeoPose {
                frame_id,
                sequence_id: sequence_id.clone(),
                lat,
                lon,
            }),
            Err(_) => table.missing.push(MissingPose { frame_id, sequence_id: sequence_id.clone() }),
        }
    }
    Ok(table)
}

/// Loads a pose table from either layout: a consolidated CSV file or a
/// directory of raw OXTS packets.
pub fn read_pose_input(path: &Path) -> Result<PoseTable> {
    if path.is_dir() {
        read_oxts_dir(path)
    } else {
        parse_pose_csv(&fs::read_to_string(path)?)
    }
}

/// An ordered, duplicate-free set of frame ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitManifest {
    frame_ids: Vec<String>,
}

impl SplitManifest {
    /// Builds a manifest from arbitrary ids: sorted, duplicates collapsed.
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let set: BTreeSet<String> = ids.into_iter().collect();
        SplitManifest { frame_ids: set.into_iter().collect() }
    }

    pub fn frame_ids(&self) -> &[String] {
        &self.frame_ids
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.frame_ids.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }
}

/// Outcome of parsing a manifest: the deduplicated set plus the ids that
/// appeared more than once (worth a warning, never fatal).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestParse {
    pub manifest: SplitManifest,
    pub duplicates: Vec<String>,
}

/// Parses a newline-delimited frame-id list.
pub fn parse_split_manifest(text: &str) -> ManifestParse {
    let mut seen = BTreeSet::new();
    let mut duplicates = BTreeSet::new();
    for line in text.lines() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        if !seen.insert(id.to_string()) {
            duplicates.insert(id.to_string());
        }
    }
    ManifestParse {
        manifest: SplitManifest { frame_ids: seen.into_iter().collect() },
        duplicates: duplicates.into_iter().collect(),
    }
}

pub fn write_split_manifest(manifest: &SplitManifest) -> String {
    let mut out = String::new();
    for id in &manifest.frame_ids {
        out.push_str(id);
        out.push('\n');
    }
    out
}

/// Per-detection feature row, aligned to a detection file by
/// `(frame_id, det_index)` where `det_index` is the 0-based row inside the
/// frame's detection file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub frame_id: String,
    pub det_index: usize,
    pub class_id: u32,
    pub features: Vec<f64>,
}

/// Parses `frame_id,det_index,class_id,feat_0..feat_{d-1}` CSV. All rows
/// must agree on the feature dimension.
pub fn parse_feature_csv(text: &str) -> Result<Vec<FeatureRow>> {
    let mut rows: Vec<FeatureRow> = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed.starts_with("frame_id")) {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cols.len() < 4 {
            return Err(Error::parse(line_no, "feature rows need frame_id,det_index,class_id and at least one feature"));
        }
        validate_frame_id(cols[0], line_no)?;
        let det_index = cols[1]
            .parse::<usize>()
            .map_err(|_| Error::parse(line_no, format!("det_index is not an integer: {:?}", cols[1])))?;
        let class_id = cols[2]
            .parse::<u32>()
            .map_err(|_| Error::parse(line_no, format!("class_id is not an integer: {:?}", cols[2])))?;
        let features = cols[3..]
            .iter()
            .map(|t| parse_float(t, line_no, "feature"))
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::parse(
                    line_no,
                    format!("feature dimension {} does not match earlier rows ({d})", features.len()),
                ));
            }
            _ => {}
        }
        rows.push(FeatureRow { frame_id: cols[0].to_string(), det_index, class_id, features });
    }
    Ok(rows)
}

pub fn write_feature_csv(rows: &[FeatureRow]) -> String {
    use std::fmt::Write;
    let dim = rows.first().map_or(0, |r| r.features.len());
    let mut out = String::from("frame_id,det_index,class_id");
    for i in 0..dim {
        write!(out, ",feat_{i}").expect("writing to String cannot fail");
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{}", r.frame_id, r.det_index, r.class_id)
            .expect("writing to String cannot fail");
        for v in &r.features {
            write!(out, ",{v:.6}").expect("writing to String cannot fail");
        }
        out.push('\n');
    }
    out
}

/// Reads `<frame_id>.txt` label files for every manifest frame.
pub fn read_label_dir(dir: &Path, ids: &[String]) -> Result<Vec<Vec<Annotation>>> {
    read_frame_dir(dir, ids, false, parse_label_file)
}

/// Reads `<frame_id>.txt` detection files for every manifest frame. With
/// `allow_missing`, absent files stand for "no detections".
pub fn read_detection_dir(dir: &Path, ids: &[String], allow_missing: bool) -> Result<Vec<Vec<Detection>>> {
    read_frame_dir(dir, ids, allow_missing, parse_detection_file)
}

fn read_frame_dir<T>(
    dir: &Path,
    ids: &[String],
    allow_missing: bool,
    parse: impl Fn(&str) -> Result<Vec<T>>,
) -> Result<Vec<Vec<T>>> {
    let mut out = Vec::with_capacity(ids.len());
    let mut missing = Vec::new();
    for id in ids {
        let path = dir.join(format!("{id}.txt"));
        if !path.exists() {
            if allow_missing {
                out.push(Vec::new());
            } else {
                missing.push(id.clone());
            }
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let parsed = parse(&text).map_err(|e| match e {
            Error::Parse { line, message } => {
                Error::parse(line, format!("{}: {message}", path.display()))
            }
            other => other,
        })?;
        out.push(parsed);
    }
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "missing frame files under {}: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    Ok(out)
}
