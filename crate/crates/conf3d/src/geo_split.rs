//! Split hygiene for datasets captured as driving sequences.
//!
//! Frames recorded seconds apart show the same intersection from nearly
//! the same viewpoint. When such near-duplicates land on both sides of a
//! train/validation split, validation scores measure memorization, not
//! generalization. This module provides two tools:
//!
//! * [`overlap_audit`] quantifies the damage in an existing split pair:
//!   direct frame overlap, plus (given poses) how many validation frames
//!   come from sequences that also feed the training side.
//! * [`geosep_filter`] builds a clean training pool: a candidate frame
//!   survives only if its GPS position is strictly farther than a radius
//!   from every protected (validation) frame. Frames without usable
//!   coordinates are dropped, because their distance cannot be certified.
//!
//! Distances are great-circle meters ([`haversine_m`]); the filter
//! re-measures its own output and reports the verified minimum.

use rayon::prelude::*;
use serde::Serialize;

use crate::box_geometry::haversine_m;
use crate::error::{Error, Result};
use crate::kitti_io::{PoseTable, SplitManifest};

use std::collections::BTreeSet;

/// Sequence-level contamination, computable only when poses are supplied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceAudit {
    pub sequences_a: usize,
    pub sequences_b: usize,
    pub shared_sequences: usize,
    /// Frames of `b` whose capturing sequence also contributes to `a`.
    pub contaminated_frames_b: usize,
    /// `contaminated_frames_b / |b|`; 0 when `b` is empty.
    pub contaminated_fraction_of_b: f64,
    /// Frames of either split absent from the pose table; these cannot be
    /// attributed to a sequence and are not counted as contaminated.
    pub frames_without_pose: usize,
}

/// Overlap measurement between two frame-id splits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub frames_a: usize,
    pub frames_b: usize,
    pub shared_frames: usize,
    /// `shared_frames / |b|`; 0 when `b` is empty. `b` is the reference
    /// side, conventionally the validation split.
    pub shared_fraction_of_b: f64,
    pub sequence_level: Option<SequenceAudit>,
}

/// Measures how much of split `b` is compromised by split `a`.
pub fn overlap_audit(
    a: &SplitManifest,
    b: &SplitManifest,
    poses: Option<&PoseTable>,
) -> AuditReport {
    let shared_frames = b.frame_ids().iter().filter(|id| a.contains(id)).count();
    let frac = |n: usize| if b.is_empty() { 0.0 } else { n as f64 / b.len() as f64 };

    let sequence_level = poses.map(|table| {
        let seq_of = |frame_id: &str| {
            table
                .poses
                .iter()
                .find(|p| p.frame_id == frame_id)
                .map(|p| p.sequence_id.as_str())
                .or_else(|| {
                    table
                        .missing
                        .iter()
                        .find(|m| m.frame_id == frame_id)
                        .map(|m| m.sequence_id.as_str())
                })
        };
        let mut frames_without_pose = 0usize;
        let mut collect = |manifest: &SplitManifest| -> BTreeSet<&str> {
            let mut seqs = BTreeSet::new();
            for id in manifest.frame_ids() {
                match seq_of(id) {
                    Some(s) => {
                        seqs.insert(s);
                    }
                    None => frames_without_pose += 1,
                }
            }
            seqs
        };
        let seqs_a = collect(a);
        let seqs_b = collect(b);
        let shared: BTreeSet<&str> = seqs_a.intersection(&seqs_b).copied().collect();
        let contaminated_frames_b = b
            .frame_ids()
            .iter()
            .filter(|id| seq_of(id).is_some_and(|s| seqs_a.contains(s)))
            .count();
        SequenceAudit {
            sequences_a: seqs_a.len(),
            sequences_b: seqs_b.len(),
            shared_sequences: shared.len(),
            contaminated_frames_b,
            contaminated_fraction_of_b: frac(contaminated_frames_b),
            frames_without_pose,
        }
    });

    AuditReport {
        frames_a: a.len(),
        frames_b: b.len(),
        shared_frames,
        shared_fraction_of_b: frac(shared_frames),
        sequence_level,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeosepOptions {
    /// Exclusion radius in meters. Retention is strict: a candidate at
    /// exactly this distance is dropped.
    pub radius_m: f64,
    /// Also drop candidates whose sequence contributes any protected frame,
    /// regardless of distance.
    pub exclude_sequences: bool,
}

impl Default for GeosepOptions {
    fn default() -> Self {
        GeosepOptions { radius_m: 200.0, exclude_sequences: false }
    }
}

/// Accounting for one [`geosep_filter`] run. Drop reasons are disjoint;
/// `retained + dropped_* == total_candidates`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeosepReport {
    pub radius_m: f64,
    pub total_candidates: usize,
    pub retained: usize,
    pub dropped_distance: usize,
    pub dropped_sequence: usize,
    pub dropped_missing_pose: usize,
    pub protected_frames: usize,
    /// Protected frames that actually carry coordinates; only these
    /// constrain the candidates.
    pub protected_with_pose: usize,
    /// Independently re-measured minimum distance from any retained frame
    /// to any protected frame. `None` when either side is empty.
    pub min_retained_distance_m: Option<f64>,
    /// True when the re-measurement confirms every retained frame is
    /// strictly outside the radius.
    pub verified: bool,
    pub warnings: Vec<String>,
}

/// Filters `candidates` down to the frames that are provably far from
/// every `protected` frame.
///
/// Rules, in order, per candidate:
/// 1. no coordinates -> dropped (`dropped_missing_pose`);
/// 2. sequence shared with any protected frame, if `exclude_sequences`
///    -> dropped (`dropped_sequence`);
/// 3. minimum haversine distance to the protected poses `<= radius_m`
///    -> dropped (`dropped_distance`);
/// 4. otherwise retained.
///
/// With no protected coordinates at all, rule 3 is vacuous: every posed
/// candidate survives and a warning is recorded. The returned report's
/// `verified` flag comes from an independent second pass over the output.
pub fn geosep_filter(
    candidates: &PoseTable,
    protected: &PoseTable,
    opts: &GeosepOptions,
) -> Result<(SplitManifest, GeosepReport)> {
    if !(opts.radius_m.is_finite() && opts.radius_m >= 0.0) {
        return Err(Error::invalid(format!(
            "radius_m must be finite and non-negative, got {}",
            opts.radius_m
        )));
    }

    let mut warnings = Vec::new();
    if protected.poses.is_empty() {
        warnings.push(
            "protected split has no usable coordinates; distance rule is vacuous \
             and every posed candidate is retained"
                .to_string(),
        );
    }
    if !protected.missing.is_empty() {
        warnings.push(format!(
            "{} protected frame(s) lack coordinates and cannot repel candidates",
            protected.missing.len()
        ));
    }

    let protected_seqs: BTreeSet<&str> = if opts.exclude_sequences {
        protected
            .poses
            .iter()
            .map(|p| p.sequence_id.as_str())
            .chain(protected.missing.iter().map(|m| m.sequence_id.as_str()))
            .collect()
    } else {
        BTreeSet::new()
    };

    let min_dist = |lat: f64, lon: f64| -> f64 {
        protected
            .poses
            .iter()
            .map(|p| haversine_m(lat, lon, p.lat, p.lon))
            .fold(f64::INFINITY, f64::min)
    };

    // Verdicts are per-candidate pure functions, so the parallel map is
    // deterministic and order-preserving.
    #[derive(PartialEq)]
    enum Verdict {
        Retain,
        Sequence,
        Distance,
    }
    let verdicts: Vec<Verdict> = candidates
        .poses
        .par_iter()
        .map(|c| {
            if protected_seqs.contains(c.sequence_id.as_str()) {
                Verdict::Sequence
            } else if !protected.poses.is_empty() && min_dist(c.lat, c.lon) <= opts.radius_m {
                Verdict::Distance
            } else {
                Verdict::Retain
            }
        })
        .collect();

    let mut retained_ids = Vec::new();
    let mut dropped_sequence = 0usize;
    let mut dropped_distance = 0usize;
    for (c, v) in candidates.poses.iter().zip(&verdicts) {
        match v {
            Verdict::Retain => retained_ids.push(c.frame_id.clone()),
            Verdict::Sequence => dropped_sequence += 1,
            Verdict::Distance => dropped_distance += 1,
        }
    }
    let mut dropped_missing_pose = candidates.missing.len();
    if opts.exclude_sequences {
        // A missing-pose candidate in a protected sequence is a sequence
        // drop, not a pose drop; keep the reasons disjoint and honest.
        let seq_hits = candidates
            .missing
            .iter()
            .filter(|m| protected_seqs.contains(m.sequence_id.as_str()))
            .count();
        dropped_missing_pose -= seq_hits;
        dropped_sequence += seq_hits;
    }

    let manifest = SplitManifest::from_ids(retained_ids);

    // Self-check: re-measure the output against the protected poses,
    // sequentially and from the manifest itself rather than the loop above.
    let mut min_retained_distance_m = None;
    let mut verified = true;
    if !protected.poses.is_empty() && !manifest.is_empty() {
        let mut min_seen = f64::INFINITY;
        for id in manifest.frame_ids() {
            let pose = candidates
                .poses
                .iter()
                .find(|p| &p.frame_id == id)
                .expect("retained ids come from the candidate pose list");
            min_seen = min_seen.min(min_dist(pose.lat, pose.lon));
        }
        min_retained_distance_m = Some(min_seen);
        verified = min_seen > opts.radius_m;
    }

    let report = GeosepReport {
        radius_m: opts.radius_m,
        total_candidates: candidates.len(),
        retained: manifest.len(),
        dropped_distance,
        dropped_sequence,
        dropped_missing_pose,
        protected_frames: protected.len(),
        protected_with_pose: protected.poses.len(),
        min_retained_distance_m,
        verified,
        warnings,
    };
    Ok((manifest, report))
}

/// Splits a manifest into train/validation parts by seeded shuffle.
/// `val_size` must leave at least one training frame.
pub fn split_train_val(
    manifest: &SplitManifest,
    val_size: usize,
    seed: u64,
) -> Result<(SplitManifest, SplitManifest)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if val_size >= manifest.len() {
        return Err(Error::invalid(format!(
            "val_size {} must be smaller than the manifest ({} frames)",
            val_size,
            manifest.len()
        )));
    }
    let mut ids: Vec<String> = manifest.frame_ids().to_vec();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let val = SplitManifest::from_ids(ids[..val_size].iter().cloned());
    let train = SplitManifest::from_ids(ids[val_size..].iter().cloned());
    Ok((train, val))
}
