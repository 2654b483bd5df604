//! Shows the calibration failure mode of absolute confidence targets.
//!
//! A scorer is overfit on a small training set, then calibrated on
//! held-out data whose box losses run systematically higher (the usual
//! train/test gap). The absolute head keeps predicting the low training
//! losses it memorized, so its confidence overshoots the realized
//! `exp(-loss / beta)` in essentially every bin. The relative head only
//! ever promised a loss *ranking*, and rankings survive the loss-scale
//! shift, so it stays near the diagonal on its own target.
//!
//! Run with `cargo run --example calibration`.

use conf3d::confidence::{
    absolute_target, calibration_bins, relative_target_exact, train_scorer, CalibrationBin,
    ConfidenceConfig, TargetMode, TrainOptions, TrainRecord,
};
use conf3d::synth_bench::{generate_corpus, NoiseSpec};

fn print_bins(label: &str, bins: &[CalibrationBin]) {
    println!("\n{label}");
    println!("  bin    predicted  realized   count");
    for b in bins {
        println!("  {:.2}   {:>9.3}  {:>8.3}   {:>5}", b.bin_center, b.mean_pred, b.mean_realized, b.count);
    }
}

fn main() -> conf3d::Result<()> {
    let spec = NoiseSpec::default();
    let train = generate_corpus(30, 4, &spec, 40)?.records;
    // Held-out records with a 1.6x loss scale. The features are left
    // alone: the boxes look the same, the outcomes are worse, which is
    // what a train/test gap does to a scorer.
    let heldout: Vec<TrainRecord> = generate_corpus(120, 4, &spec, 41)?
        .records
        .into_iter()
        .map(|mut r| {
            r.loss *= 1.6;
            r
        })
        .collect();

    // Small set, small batches, many epochs: deliberate overfit.
    let opts = TrainOptions {
        hidden: vec![64, 64],
        epochs: 600,
        batch_size: 16,
        lr_drop_epochs: vec![450, 540],
        seed: 0,
        ..TrainOptions::default()
    };
    let beta = 1.0;
    let losses: Vec<f64> = heldout.iter().map(|r| r.loss).collect();

    for mode in [TargetMode::Absolute, TargetMode::Relative] {
        let config = ConfidenceConfig { mode, beta, ..ConfidenceConfig::default() };
        let out = train_scorer(&train, &config, &opts)?;

        let mut preds = Vec::with_capacity(heldout.len());
        let mut realized = Vec::with_capacity(heldout.len());
        for (i, rec) in heldout.iter().enumerate() {
            preds.push(out.scorer.predict(&rec.features, rec.class_id)?);
            realized.push(match mode {
                TargetMode::Absolute => absolute_target(rec.loss, beta)?,
                TargetMode::Relative => relative_target_exact(&losses, i)?,
            });
        }
        let bins = calibration_bins(&preds, &realized, 8)?;
        print_bins(&format!("{mode:?} targets, held-out reliability:"), &bins);

        let high = bins.iter().filter(|b| b.mean_pred > b.mean_realized).count();
        println!("  overconfident in {high} of {} bins", bins.len());
    }
    Ok(())
}
