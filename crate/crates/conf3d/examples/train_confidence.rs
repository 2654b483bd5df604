//! Trains the two confidence target modes on the same records and
//! contrasts what they learn.
//!
//! Absolute targets regress `exp(-loss / beta)`: the prediction tracks
//! the loss *magnitude*, so it moves when the loss scale moves. Relative
//! targets regress the fraction of same-class objects with larger loss:
//! only the *ordering* matters.
//!
//! Run with `cargo run --example train_confidence`.

use conf3d::confidence::{train_scorer, ConfidenceConfig, TargetMode, TrainOptions};
use conf3d::synth_bench::{generate_corpus, NoiseSpec};

fn main() -> conf3d::Result<()> {
    let corpus = generate_corpus(150, 6, &NoiseSpec::default(), 3)?;
    let records = corpus.records;
    println!("{} training records", records.len());

    let opts = TrainOptions {
        hidden: vec![64, 64],
        epochs: 30,
        lr_drop_epochs: vec![20],
        seed: 0,
        ..TrainOptions::default()
    };

    // Feature 0 of the synthetic records is the loss itself, so probing
    // with a low-loss and a high-loss vector shows the learned ordering.
    let mut lo = records[0].features.clone();
    let mut hi = lo.clone();
    lo[0] = 0.05;
    hi[0] = 2.5;

    for mode in [TargetMode::Absolute, TargetMode::Relative] {
        let config = ConfidenceConfig { mode, ..ConfidenceConfig::default() };
        let out = train_scorer(&records, &config, &opts)?;
        println!(
            "\n{mode:?}: epoch loss {:.4} -> {:.4}, {} singleton skips",
            out.epoch_losses.first().unwrap(),
            out.epoch_losses.last().unwrap(),
            out.singletons_skipped,
        );
        println!(
            "  confidence at box loss 0.05: {:.3}, at 2.5: {:.3}",
            out.scorer.predict(&lo, 0)?,
            out.scorer.predict(&hi, 0)?,
        );
    }
    Ok(())
}
