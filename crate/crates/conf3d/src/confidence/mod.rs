//! Learned 3D confidence: training targets, loss, score combination, and
//! calibration diagnostics.
//!
//! A detector's 2D score says how sure it is that an object exists; it says
//! nothing about whether the predicted 3D box is any good. This module
//! turns a per-detection regression loss `l` (any non-negative measure of
//! 3D box quality, see [`BoxLoss`]) into a supervised confidence signal.
//! Two target families are supported:
//!
//! * **Absolute**: `T = exp(-l / beta)`. Squashes the loss into `(0, 1]`;
//!   the scale knob `beta` decides how fast confidence decays with loss.
//!   Sensitive to any rescaling of the loss, and prone to systematic
//!   over-estimation once the model producing `l` overfits its training
//!   split (training losses shrink, held-out losses don't).
//! * **Relative**: the target for detection `i` is the fraction of other
//!   same-class detections whose loss is at least as large,
//!   `T_i = (1/(n-1)) * #{j != i : l_j >= l_i}` ([`relative_target_exact`]).
//!   A rank, not a magnitude: invariant under any strictly increasing
//!   transform of the losses and therefore immune to loss-scale drift.
//!   Training never materializes the full ranking; it draws one uniform
//!   same-class partner per detection and uses the binary outcome
//!   `1{l_i <= l_partner}` ([`sample_pair_targets`]), whose expectation is
//!   exactly the rank target.
//!
//! Either target is regressed with binary cross-entropy ([`bce_loss`]) by
//! the MLP in [`scorer`], trained by [`train`]. At inference the learned
//! 3D confidence multiplies the 2D score ([`combine_scores`]), and
//! [`calibration_bins`] compares predicted against realized target values
//! to expose over- or under-confidence.

pub mod scorer;
pub mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::box_geometry::Box3D;
use crate::error::{Error, Result};

pub use scorer::Scorer;
pub use train::{train_scorer, Adam, TrainOptions, TrainOutcome};

/// Predictions are clamped to `[PRED_CLAMP, 1 - PRED_CLAMP]` before any
/// logarithm so the loss and its gradient stay finite.
pub const PRED_CLAMP: f64 = 1e-7;

/// Which target family the scorer is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetMode {
    Absolute,
    Relative,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "absolute" | "abs" => Ok(TargetMode::Absolute),
            "relative" | "rel" => Ok(TargetMode::Relative),
            _ => Err(Error::invalid(format!("unknown target mode: {s:?}"))),
        }
    }
}

/// Target configuration. `beta` only matters in absolute mode; the
/// relative target has no scale knob by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    pub mode: TargetMode,
    pub beta: f64,
    /// Multiplier applied to the confidence loss during training.
    pub loss_weight: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig { mode: TargetMode::Relative, beta: 1.0, loss_weight: 1.0 }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.loss_weight >= 0.0) {
            return Err(Error::invalid(format!(
                "loss_weight must be non-negative, got {}",
                self.loss_weight
            )));
        }
        Ok(())
    }
}

/// Absolute confidence target `exp(-loss / beta)`, in `(0, 1]`.
pub fn absolute_target(loss: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    if !(loss >= 0.0) {
        return Err(Error::invalid(format!("loss must be non-negative, got {loss}")));
    }
    Ok((-loss / beta).exp())
}

/// Exact rank target for `losses[i]`: the fraction of other entries at
/// least as large, ties counting in favor. Needs at least two entries.
pub fn relative_target_exact(losses: &[f64], i: usize) -> Result<f64> {
    let n = losses.len();
    if n < 2 {
        return Err(Error::invalid(format!("rank target needs n >= 2 entries, got {n}")));
    }
    if i >= n {
        return Err(Error::invalid(format!("index {i} out of range for {n} losses")));
    }
    let better_or_tied = losses
        .iter()
        .enumerate()
        .filter(|&(j, &lj)| j != i && lj >= losses[i])
        .count();
    Ok(better_or_tied as f64 / (n - 1) as f64)
}

/// One stochastic pairing: detection `index` was compared against
/// `partner`; `target` is 1 when its loss was no worse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTarget {
    pub index: usize,
    pub partner: usize,
    pub target: f64,
}

/// Output of [`sample_pair_targets`]: pairings plus the number of records
/// skipped because they were alone in their class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSample {
    pub pairs: Vec<PairTarget>,
    pub singletons_skipped: usize,
}

/// Draws one uniform same-class partner for every record and emits the
/// binary comparison target `1{l_i <= l_partner}`.
///
/// The expectation of the sampled target over partner choice equals
/// [`relative_target_exact`] within the record's class group. Records
/// whose class appears only once cannot be paired and are skipped.
pub fn sample_pair_targets<R: rand::Rng>(records: &[TrainRecord], rng: &mut R) -> PairSample {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.class_id).or_default().push(i);
    }
    let mut out = PairSample::default();
    for (i, rec) in records.iter().enumerate() {
        let group = &groups[&rec.class_id];
        if group.len() < 2 {
            out.singletons_skipped += 1;
            continue;
        }
        let pos = group.binary_search(&i).expect("record index is in its class group");
        // Uniform over the group minus self: draw from len-1 slots and
        // shift past our own position.
        let mut k = rng.random_range(0..group.len() - 1);
        if k >= pos {
            k += 1;
        }
        let partner = group[k];
        let target = if rec.loss <= records[partner].loss { 1.0 } else { 0.0 };
        out.pairs.push(PairTarget { index: i, partner, target });
    }
    out
}

/// Binary cross-entropy and its analytic gradient in the prediction.
///
/// The prediction is clamped to `[PRED_CLAMP, 1 - PRED_CLAMP]` first;
/// value and gradient are both evaluated at the clamped point:
///
/// ```text
/// L = -t*ln(p) - (1-t)*ln(1-p),    dL/dp = (p - t) / (p*(1-p))
/// ```
pub fn bce_loss(pred: f64, target: f64) -> (f64, f64) {
    debug_assert!((0.0..=1.0).contains(&target), "target out of [0,1]: {target}");
    let p = pred.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
    let value = -target * p.ln() - (1.0 - target) * (1.0 - p).ln();
    let grad = (p - target) / (p * (1.0 - p));
    (value, grad)
}

/// How the 2D score and the 3D confidence are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombineRule {
    /// `score2d * score3d`: the default. An object is only as trustworthy
    /// as the weaker of "it exists" and "its box is right".
    Product,
    /// `(score2d + score3d) / 2`: softer; available for comparison.
    MeanRenormalize,
}

/// Combines scores under [`CombineRule::Product`]. Both inputs must lie in
/// `[0, 1]`.
pub fn combine_scores(score2d: f64, score3d: f64) -> Result<f64> {
    combine_scores_with(CombineRule::Product, score2d, score3d)
}

pub fn combine_scores_with(rule: CombineRule, score2d: f64, score3d: f64) -> Result<f64> {
    for (name, v) in [("score2d", score2d), ("score3d", score3d)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} outside [0, 1]: {v}")));
        }
    }
    Ok(match rule {
        CombineRule::Product => score2d * score3d,
        CombineRule::MeanRenormalize => (score2d + score3d) / 2.0,
    })
}

/// One reliability bin: predictions grouped by their realized target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub bin_center: f64,
    pub mean_pred: f64,
    pub mean_realized: f64,
    pub count: usize,
}

/// Bins `(pred, realized)` pairs by realized value over `[0, 1]` into
/// `n_bins` equal-width bins and reports per-bin means. Only populated
/// bins are returned; their counts sum to the input length. A calibrated
/// scorer shows `mean_pred ~= mean_realized` everywhere; over-confidence
/// shows up as `mean_pred > mean_realized`.
pub fn calibration_bins(preds: &[f64], realized: &[f64], n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if preds.len() != realized.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} realized values",
            preds.len(),
            realized.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be at least 1"));
    }
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_bins];
    for (&p, &r) in preds.iter().zip(realized) {
        let idx = ((r.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
        sums[idx].0 += p;
        sums[idx].1 += r;
        sums[idx].2 += 1;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, _, count))| *count > 0)
        .map(|(i, (p_sum, r_sum, count))| CalibrationBin {
            bin_center: (i as f64 + 0.5) / n_bins as f64,
            mean_pred: p_sum / count as f64,
            mean_realized: r_sum / count as f64,
            count,
        })
        .collect())
}

/// `bin_center,mean_pred,mean_realized,count` rows for plotting.
pub fn calibration_to_csv(bins: &[CalibrationBin]) -> String {
    use std::fmt::Write;
    let mut out = String::from("bin_center,mean_pred,mean_realized,count\n");
    for b in bins {
        writeln!(out, "{:.6},{:.6},{:.6},{}", b.bin_center, b.mean_pred, b.mean_realized, b.count)
            .expect("writing to String cannot fail");
    }
    out
}

/// One training sample for the scorer: where the detection came from is
/// irrelevant, only its class, its realized box loss, and its features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub class_id: u32,
    pub loss: f64,
    pub features: Vec<f64>,
}

/// Parses `class_id,loss,feat_0..feat_{d-1}` CSV (header optional).
/// Losses must be finite and non-negative; feature dimensions must agree.
pub fn parse_train_record_csv(text: &str) -> Result<Vec<TrainRecord>> {
    let mut out: Vec<TrainRecord> = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed.starts_with("class_id")) {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cols.len() < 3 {
            return Err(Error::parse(line_no, "record rows need class_id,loss and at least one feature"));
        }
        let class_id = cols[0]
            .parse::<u32>()
            .map_err(|_| Error::parse(line_no, format!("class_id is not an integer: {:?}", cols[0])))?;
        let loss = cols[1]
            .parse::<f64>()
            .map_err(|_| Error::parse(line_no, format!("loss is not a number: {:?}", cols[1])))?;
        if !loss.is_finite() || loss < 0.0 {
            return Err(Error::parse(line_no, format!("loss must be finite and >= 0, got {loss}")));
        }
        let features = cols[2..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("feature is not a number: {t:?}")))
            })
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
        out.push(TrainRecord { class_id, loss, features });
    }
    Ok(out)
}

pub fn write_train_record_csv(records: &[TrainRecord]) -> String {
    use std::fmt::Write;
    let dim = records.first().map_or(0, |r| r.features.len());
    let mut out = String::from("class_id,loss");
    for i in 0..dim {
        write!(out, ",feat_{i}").expect("writing to String cannot fail");
    }
    out.push('\n');
    for r in records {
        write!(out, "{},{:.6}", r.class_id, r.loss).expect("writing to String cannot fail");
        for v in &r.features {
            write!(out, ",{v:.6}").expect("writing to String cannot fail");
        }
        out.push('\n');
    }
    out
}

/// Per-detection box-quality loss, pluggable where a different notion of
/// "how wrong is this box" is wanted. Any finite non-negative function of
/// (predicted box, ground-truth box) is admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxLoss {
    /// Smooth-L1 applied independently to each center coordinate, each
    /// shape extent, and the wrapped heading difference, then summed.
    DisentangledSmoothL1,
    /// Euclidean distance between box centers; crude but scale-free in
    /// everything except position.
    CenterDistance,
}

fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

impl BoxLoss {
    pub fn eval(&self, pred: &Box3D, gt: &Box3D) -> f64 {
        match self {
            BoxLoss::DisentangledSmoothL1 => {
                smooth_l1(pred.x - gt.x)
                    + smooth_l1(pred.y - gt.y)
                    + smooth_l1(pred.z - gt.z)
                    + smooth_l1(pred.h - gt.h)
                    + smooth_l1(pred.w - gt.w)
                    + smooth_l1(pred.l - gt.l)
                    + smooth_l1(wrap_angle(pred.yaw - gt.yaw))
            }
            BoxLoss::CenterDistance => {
                ((pred.x - gt.x).powi(2) + (pred.y - gt.y).powi(2) + (pred.z - gt.z).powi(2)).sqrt()
            }
        }
    }
}

impl Default for BoxLoss {
    fn default() -> Self {
        BoxLoss::DisentangledSmoothL1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn absolute_target_reference_values() {
        assert_eq!(absolute_target(0.0, 1.0).unwrap(), 1.0);
        let half = absolute_target(std::f64::consts::LN_2, 1.0).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
        // beta rescales the decay.
        let fast = absolute_target(1.0, 0.1).unwrap();
        let slow = absolute_target(1.0, 10.0).unwrap();
        assert!(fast < 1e-4 && slow > 0.9);
    }

    #[test]
    fn absolute_target_rejects_bad_inputs() {
        assert!(absolute_target(1.0, 0.0).is_err());
        assert!(absolute_target(1.0, -2.0).is_err());
        assert!(absolute_target(-0.5, 1.0).is_err());
    }

    #[test]
    fn relative_target_counts_ties_in_favor() {
        let losses = [2.0, 5.0, 5.0, 7.0];
        // For index 1 (loss 5): comparisons are 2 (no), 5 (tie, yes), 7 (yes).
        assert_eq!(relative_target_exact(&losses, 1).unwrap(), 2.0 / 3.0);
        assert_eq!(relative_target_exact(&losses, 0).unwrap(), 1.0);
        assert_eq!(relative_target_exact(&losses, 3).unwrap(), 0.0);
        assert_eq!(relative_target_exact(&[1.0, 2.0], 0).unwrap(), 1.0);
        assert_eq!(relative_target_exact(&[1.0, 2.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn relative_target_needs_two_entries() {
        assert!(relative_target_exact(&[1.0], 0).is_err());
        assert!(relative_target_exact(&[], 0).is_err());
        assert!(relative_target_exact(&[1.0, 2.0], 5).is_err());
    }

    fn rec(class_id: u32, loss: f64) -> TrainRecord {
        TrainRecord { class_id, loss, features: vec![loss] }
    }

    #[test]
    fn pair_sampling_skips_class_singletons() {
        let records = vec![rec(0, 1.0), rec(0, 2.0), rec(1, 3.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = sample_pair_targets(&records, &mut rng);
        assert_eq!(sample.singletons_skipped, 1);
        assert_eq!(sample.pairs.len(), 2);
        for p in &sample.pairs {
            assert_ne!(p.index, p.partner);
            assert_eq!(records[p.index].class_id, records[p.partner].class_id);
        }
        // Two records in class 0: each must pair with the other.
        assert_eq!(sample.pairs[0].partner, 1);
        assert_eq!(sample.pairs[1].partner, 0);
        assert_eq!(sample.pairs[0].target, 1.0); // 1.0 <= 2.0
        assert_eq!(sample.pairs[1].target, 0.0);
    }

    #[test]
    fn pair_sampling_is_deterministic_per_seed() {
        let records: Vec<TrainRecord> = (0..20).map(|i| rec(i % 3, (i * 7 % 13) as f64)).collect();
        let a = sample_pair_targets(&records, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_pair_targets(&records, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn pair_target_mean_approaches_exact_rank() {
        // Statistical smoke test; the exact enumeration identity is locked
        // down by the acceptance suite.
        let losses = [0.3, 1.2, 0.9, 2.5, 0.1, 1.7];
        let records: Vec<TrainRecord> = losses.iter().map(|&l| rec(0, l)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sums = vec![0.0; records.len()];
        let draws = 20_000;
        for _ in 0..draws {
            for p in sample_pair_targets(&records, &mut rng).pairs {
                sums[p.index] += p.target;
            }
        }
        for i in 0..records.len() {
            let exact = relative_target_exact(&losses, i).unwrap();
            let mean = sums[i] / draws as f64;
            assert!((mean - exact).abs() < 0.02, "index {i}: {mean} vs {exact}");
        }
    }

    #[test]
    fn bce_reference_values_and_clamping() {
        let (v, g) = bce_loss(0.5, 1.0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g < 0.0, "under-confident prediction should push up");
        // Clamped endpoints stay finite.
        let (v0, g0) = bce_loss(0.0, 1.0);
        assert!(v0.is_finite() && g0.is_finite());
        let (v1, g1) = bce_loss(1.0, 0.0);
        assert!(v1.is_finite() && g1.is_finite());
        // Perfect prediction costs (almost) nothing.
        let (v_perfect, _) = bce_loss(1.0, 1.0);
        assert!(v_perfect < 1e-6);
    }

    #[test]
    fn combine_scores_is_a_guarded_product() {
        assert_eq!(combine_scores(0.5, 0.5).unwrap(), 0.25);
        assert_eq!(combine_scores(1.0, 0.3).unwrap(), 0.3);
        assert!(combine_scores(1.2, 0.5).is_err());
        assert!(combine_scores(0.5, -0.1).is_err());
        assert!(combine_scores(f64::NAN, 0.5).is_err());
        assert_eq!(combine_scores_with(CombineRule::MeanRenormalize, 0.2, 0.6).unwrap(), 0.4);
    }

    #[test]
    fn calibration_bins_partition_the_input() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let realized: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let preds = vec![1.0; realized.len()];
        let bins = calibration_bins(&preds, &realized, 10).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), realized.len());
        for b in &bins {
            assert_eq!(b.mean_pred, 1.0);
            assert!((b.mean_realized - b.bin_center).abs() < 0.05);
        }
    }

    #[test]
    fn calibrated_predictions_match_realized_per_bin() {
        let realized: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let bins = calibration_bins(&realized, &realized, 10).unwrap();
        for b in &bins {
            assert_eq!(b.mean_pred, b.mean_realized);
        }
    }

    #[test]
    fn calibration_edge_cases() {
        assert!(calibration_bins(&[], &[], 10).unwrap().is_empty());
        assert!(calibration_bins(&[0.5], &[], 10).is_err());
        assert!(calibration_bins(&[], &[], 0).is_err());
        // realized == 1.0 lands in the top bin, not out of range.
        let bins = calibration_bins(&[0.9], &[1.0], 10).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 1);
        assert!((bins[0].bin_center - 0.95).abs() < 1e-12);
    }

    #[test]
    fn train_record_csv_roundtrip_and_validation() {
        let records = vec![
            TrainRecord { class_id: 0, loss: 0.5, features: vec![1.0, -2.0] },
            TrainRecord { class_id: 2, loss: 3.25, features: vec![0.0, 0.125] },
        ];
        let text = write_train_record_csv(&records);
        assert!(text.starts_with("class_id,loss,feat_0,feat_1\n"));
        assert_eq!(parse_train_record_csv(&text).unwrap(), records);
        assert!(parse_train_record_csv("0,-1.0,0.5\n").is_err());
        assert!(parse_train_record_csv("0,nan,0.5\n").is_err());
        assert!(parse_train_record_csv("0,1.0,0.5\n0,1.0,0.5,0.7\n").is_err());
    }

    #[test]
    fn box_loss_is_zero_at_ground_truth_and_wraps_heading() {
        let b = Box3D::new(1.0, 1.5, 20.0, 1.5, 1.7, 4.0, 3.0);
        assert_eq!(BoxLoss::DisentangledSmoothL1.eval(&b, &b), 0.0);
        // Heading off by 2*pi is the same heading.
        let spun = Box3D { yaw: b.yaw - std::f64::consts::TAU, ..b };
        assert!(BoxLoss::DisentangledSmoothL1.eval(&spun, &b) < 1e-12);
        let shifted = Box3D { z: b.z + 3.0, ..b };
        assert!((BoxLoss::CenterDistance.eval(&shifted, &b) - 3.0).abs() < 1e-12);
        assert!(BoxLoss::DisentangledSmoothL1.eval(&shifted, &b) > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn absolute_target_is_monotone_and_bounded(
            l1 in 0.0f64..50.0, l2 in 0.0f64..50.0, beta in 0.05f64..20.0
        ) {
            let t1 = absolute_target(l1, beta).unwrap();
            let t2 = absolute_target(l2, beta).unwrap();
            prop_assert!(t1 > 0.0 && t1 <= 1.0);
            if l1 < l2 {
                prop_assert!(t1 >= t2);
            }
        }

        #[test]
        fn relative_target_depends_only_on_order(
            mut losses in proptest::collection::vec(0.0f64..10.0, 2..12),
            scale in 0.1f64..5.0,
        ) {
            let i = losses.len() / 2;
            let before = relative_target_exact(&losses, i).unwrap();
            // Strictly increasing map: order (and ties) unchanged.
            for l in losses.iter_mut() {
                *l = scale * *l + (*l).powi(3);
            }
            let after = relative_target_exact(&losses, i).unwrap();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn bce_gradient_matches_finite_differences(
            pred in 0.05f64..0.95, target in 0.0f64..1.0
        ) {
            let h = 1e-6;
            let (_, grad) = bce_loss(pred, target);
            let (lo, _) = bce_loss(pred - h, target);
            let (hi, _) = bce_loss(pred + h, target);
            let fd = (hi - lo) / (2.0 * h);
            prop_assert!((grad - fd).abs() <= 1e-5 * grad.abs().max(fd.abs()).max(1.0),
                "analytic {grad} vs fd {fd}");
        }

        #[test]
        fn pair_targets_reference_valid_same_class_partners(
            classes in proptest::collection::vec(0u32..4, 2..40),
            seed in 0u64..1000,
        ) {
            let records: Vec<TrainRecord> = classes
                .iter()
                .enumerate()
                .map(|(i, &c)| rec(c, (i as f64 * 0.7).sin().abs()))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = sample_pair_targets(&records, &mut rng);
            let mut class_counts: BTreeMap<u32, usize> = BTreeMap::new();
            for r in &records {
                *class_counts.entry(r.class_id).or_default() += 1;
            }
            let expected_skips: usize =
                class_counts.values().filter(|&&c| c == 1).count();
            prop_assert_eq!(sample.singletons_skipped, expected_skips);
            prop_assert_eq!(sample.pairs.len() + expected_skips, records.len());
            for p in &sample.pairs {
                prop_assert_ne!(p.index, p.partner);
                prop_assert_eq!(records[p.index].class_id, records[p.partner].class_id);
                let expect = if records[p.index].loss <= records[p.partner].loss { 1.0 } else { 0.0 };
                prop_assert_eq!(p.target, expect);
            }
        }
    }
}
