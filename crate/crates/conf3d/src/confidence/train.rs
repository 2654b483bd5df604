//! Scorer training: mini-batch SGD with a hand-rolled Adam optimizer.
//!
//! The optimizer is implemented here rather than pulled from a framework:
//! it is thirty lines, and owning it keeps the whole training path
//! auditable and bitwise reproducible from a seed. Determinism contract:
//! a fixed seed and fixed inputs produce a bitwise identical scorer. All
//! randomness (weight init, epoch shuffling, partner sampling) flows from
//! one ChaCha stream, and the update loop is single-threaded on purpose.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::scorer::{Gradients, Scorer};
use super::{
    absolute_target, bce_loss, sample_pair_targets, ConfidenceConfig, TargetMode, TrainRecord,
};

/// Adam with bias correction; the step rule is
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(param_count: usize) -> Adam {
        Adam {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed under the optimizer");
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Training hyperparameters. The defaults match the regime the scorer was
/// designed around: two 512-unit hidden layers, 100 epochs of batch-64
/// Adam at 1e-3, decimating the rate at epochs 20 and 40.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// 1-based epoch numbers at the start of which the rate is multiplied
    /// by `lr_drop_factor`.
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hidden: vec![512, 512],
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_drop_epochs: vec![20, 40],
            lr_drop_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(Error::invalid(format!(
                "lr_drop_factor must be in (0, 1], got {}",
                self.lr_drop_factor
            )));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn learning_rate_for_epoch(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&d| d <= epoch).count();
        self.learning_rate * self.lr_drop_factor.powi(drops as i32)
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scorer: Scorer,
    /// Mean (weighted) confidence loss per epoch, over contributing records.
    pub epoch_losses: Vec<f64>,
    /// Records skipped across all epochs because their class had no batch
    /// partner. Nonzero values in absolute mode are impossible.
    pub singletons_skipped: usize,
}

/// Trains a fresh scorer on `records`.
///
/// In absolute mode every record contributes `T = exp(-loss / beta)`. In
/// relative mode each mini-batch draws fresh same-class partners and uses
/// the binary comparison outcome; class singletons within a batch are
/// skipped and counted. Gradients flow only through each record's class
/// head. A non-finite batch loss aborts with a numerical error naming the
/// epoch and step.
pub fn train_scorer(
    records: &[TrainRecord],
    config: &ConfidenceConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    opts.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("cannot train on zero records"));
    }
    let dim = records[0].features.len();
    if dim == 0 {
        return Err(Error::invalid("records have empty feature vectors"));
    }
    for (i, r) in records.iter().enumerate() {
        if r.features.len() != dim {
            return Err(Error::invalid(format!(
                "record {i} has {} features, expected {dim}",
                r.features.len()
            )));
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("record {i} has non-finite features")));
        }
        if !(r.loss.is_finite() && r.loss >= 0.0) {
            return Err(Error::invalid(format!(
                "record {i} has invalid loss {} (must be finite and >= 0)",
                r.loss
            )));
        }
    }

    let mut class_ids: Vec<u32> = records.iter().map(|r| r.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut scorer = Scorer::init(dim, &opts.hidden, class_ids, &mut rng)?;
    let mut adam = Adam::new(scorer.param_count());

    // Absolute targets never change; compute them once.
    let fixed_targets: Option<Vec<f64>> = match config.mode {
        TargetMode::Absolute => Some(
            records
                .iter()
                .map(|r| absolute_target(r.loss, config.beta))
                .collect::<Result<Vec<f64>>>()?,
        ),
        TargetMode::Relative => None,
    };

    let mut indices: Vec<usize> = (0..records.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    let mut singletons_skipped = 0usize;

    for epoch in 1..=opts.epochs {
        let lr = opts.learning_rate_for_epoch(epoch);
        indices.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0;
        let mut epoch_contrib = 0usize;

        for (step, chunk) in indices.chunks(opts.batch_size).enumerate() {
            // (record index, target) pairs contributing to this batch.
            let contributions: Vec<(usize, f64)> = match &fixed_targets {
                Some(targets) => chunk.iter().map(|&i| (i, targets[i])).collect(),
                None => {
                    let batch: Vec<TrainRecord> =
                        chunk.iter().map(|&i| records[i].clone()).collect();
                    let sample = sample_pair_targets(&batch, &mut rng);
                    singletons_skipped += sample.singletons_skipped;
                    sample.pairs.iter().map(|p| (chunk[p.index], p.target)).collect()
                }
            };
            if contributions.is_empty() {
                continue;
            }

            let mut grads = Gradients::zeros_for(&scorer);
            let mut batch_loss_sum = 0.0;
            for &(i, target) in &contributions {
                let record = &records[i];
                let cache = scorer.forward_cached(&record.features)?;
                let unit = scorer.class_unit(record.class_id)?;
                let z = cache.logits[unit];
                let p = sigmoid_clamped(z);
                let (value, _) = bce_loss(p, target);
                batch_loss_sum += value;
                let mut grad_logits = vec![0.0; scorer.class_ids.len()];
                grad_logits[unit] = p - target;
                scorer.backward(&cache, &grad_logits, &mut grads);
            }

            let n = contributions.len() as f64;
            let batch_loss = config.loss_weight * batch_loss_sum / n;
            if !batch_loss.is_finite() {
                return Err(Error::numerical(format!(
                    "loss became non-finite at epoch {epoch}, step {}; \
                     lower the learning rate or rescale the features",
                    step + 1
                )));
            }
            grads.scale(config.loss_weight / n);

            let mut params = scorer.params_flat();
            adam.step(&mut params, &grads.flat(), lr);
            scorer.set_params_flat(&params);

            epoch_loss_sum += config.loss_weight * batch_loss_sum;
            epoch_contrib += contributions.len();
        }

        if epoch_contrib == 0 {
            return Err(Error::invalid(
                "no record received a training target this epoch; \
                 every batch contained only class singletons",
            ));
        }
        epoch_losses.push(epoch_loss_sum / epoch_contrib as f64);
    }

    Ok(TrainOutcome { scorer, epoch_losses, singletons_skipped })
}

fn sigmoid_clamped(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(super::PRED_CLAMP, 1.0 - super::PRED_CLAMP)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut adam = Adam::new(2);
        let mut params = vec![1.0, -2.0];
        let grads = vec![0.5, -0.25];
        adam.step(&mut params, &grads, 0.001);
        // After bias correction the first step is lr * g / (|g| + eps).
        for (k, (&p, &g)) in params.iter().zip(&grads).enumerate() {
            let want = [1.0, -2.0][k] - 0.001 * g / (g.abs() + 1e-8);
            assert!((p - want).abs() < 1e-15, "param {k}: {p} vs {want}");
        }
        // Second step uses accumulated moments.
        let before = params.clone();
        adam.step(&mut params, &grads, 0.001);
        let m = 0.9 * 0.1 * 0.5 + 0.1 * 0.5;
        let v = 0.999 * 0.001 * 0.25 + 0.001 * 0.25;
        let m_hat = m / (1.0 - 0.9f64.powi(2));
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let want = before[0] - 0.001 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params[0] - want).abs() < 1e-15);
    }

    #[test]
    fn lr_schedule_decimates_at_the_named_epochs() {
        let opts = TrainOptions::default();
        assert_eq!(opts.learning_rate_for_epoch(1), 1e-3);
        assert_eq!(opts.learning_rate_for_epoch(19), 1e-3);
        assert!((opts.learning_rate_for_epoch(20) - 1e-4).abs() < 1e-19);
        assert!((opts.learning_rate_for_epoch(39) - 1e-4).abs() < 1e-19);
        assert!((opts.learning_rate_for_epoch(40) - 1e-5).abs() < 1e-20);
        assert!((opts.learning_rate_for_epoch(100) - 1e-5).abs() < 1e-20);
    }

    fn toy_records(n: usize, classes: u32) -> Vec<TrainRecord> {
        (0..n)
            .map(|i| {
                let loss = (i % 10) as f64 * 0.3;
                TrainRecord {
                    class_id: i as u32 % classes,
                    loss,
                    features: vec![loss, (i as f64 * 0.37).sin(), 1.0],
                }
            })
            .collect()
    }

    fn quick_opts(seed: u64) -> TrainOptions {
        TrainOptions {
            hidden: vec![16],
            epochs: 8,
            batch_size: 8,
            lr_drop_epochs: vec![5],
            seed,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn same_seed_reproduces_the_scorer_bitwise() {
        let records = toy_records(40, 2);
        let config = ConfidenceConfig { mode: TargetMode::Relative, ..Default::default() };
        let a = train_scorer(&records, &config, &quick_opts(7)).unwrap();
        let b = train_scorer(&records, &config, &quick_opts(7)).unwrap();
        assert_eq!(a.scorer.to_json().unwrap(), b.scorer.to_json().unwrap());
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.singletons_skipped, b.singletons_skipped);

        let c = train_scorer(&records, &config, &quick_opts(8)).unwrap();
        assert_ne!(a.scorer.to_json().unwrap(), c.scorer.to_json().unwrap());
    }

    /// Options for tests that need the net to actually converge: full
    /// rate for the whole run, enough epochs to fit the toy data.
    fn learn_opts(seed: u64) -> TrainOptions {
        TrainOptions {
            hidden: vec![32],
            epochs: 60,
            batch_size: 16,
            lr_drop_epochs: vec![],
            seed,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn absolute_training_reduces_loss_on_learnable_data() {
        let records = toy_records(80, 1);
        let config = ConfidenceConfig { mode: TargetMode::Absolute, ..Default::default() };
        let opts = learn_opts(0);
        let out = train_scorer(&records, &config, &opts).unwrap();
        assert_eq!(out.singletons_skipped, 0, "absolute mode never pairs");
        assert_eq!(out.epoch_losses.len(), opts.epochs);
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last < first * 0.8, "loss did not fall: {first} -> {last}");
        // The loss is a monotone feature, so low loss must map to higher
        // confidence than high loss.
        let good = out.scorer.predict(&[0.0, 0.5, 1.0], 0).unwrap();
        let bad = out.scorer.predict(&[2.7, 0.5, 1.0], 0).unwrap();
        assert!(good > bad, "confidence should fall with loss: {good} vs {bad}");
    }

    #[test]
    fn relative_training_learns_the_ranking() {
        let records = toy_records(80, 1);
        let config = ConfidenceConfig { mode: TargetMode::Relative, ..Default::default() };
        let opts = learn_opts(1);
        let out = train_scorer(&records, &config, &opts).unwrap();
        let good = out.scorer.predict(&[0.0, 0.5, 1.0], 0).unwrap();
        let bad = out.scorer.predict(&[2.7, 0.5, 1.0], 0).unwrap();
        assert!(good > bad, "rank training should order by loss: {good} vs {bad}");
    }

    #[test]
    fn class_singletons_are_skipped_and_counted() {
        // One lone class-9 record among class-0 records: in relative mode
        // it can never find a partner, whatever the shuffle does.
        let mut records = toy_records(16, 1);
        records.push(TrainRecord { class_id: 9, loss: 0.5, features: vec![0.5, 0.0, 1.0] });
        let config = ConfidenceConfig { mode: TargetMode::Relative, ..Default::default() };
        let opts = TrainOptions { epochs: 4, batch_size: 17, ..quick_opts(2) };
        let out = train_scorer(&records, &config, &opts).unwrap();
        assert_eq!(out.singletons_skipped, 4, "one skip per epoch");
        // The singleton class still gets a head; it just stays untrained.
        assert!(out.scorer.predict(&[0.5, 0.0, 1.0], 9).is_ok());
    }

    #[test]
    fn all_singleton_batches_are_an_error() {
        // Two classes, one record each, batch size 1: no pair can ever form.
        let records = vec![
            TrainRecord { class_id: 0, loss: 0.1, features: vec![1.0] },
            TrainRecord { class_id: 1, loss: 0.2, features: vec![2.0] },
        ];
        let config = ConfidenceConfig { mode: TargetMode::Relative, ..Default::default() };
        let opts = TrainOptions { batch_size: 1, ..quick_opts(3) };
        let err = train_scorer(&records, &config, &opts).unwrap_err();
        assert!(err.to_string().contains("singleton"), "unexpected error: {err}");
    }

    #[test]
    fn runaway_learning_rate_is_a_numerical_error() {
        let records = toy_records(32, 1);
        let config = ConfidenceConfig { mode: TargetMode::Absolute, ..Default::default() };
        let opts = TrainOptions { learning_rate: 1e308, epochs: 5, ..quick_opts(4) };
        match train_scorer(&records, &config, &opts) {
            Err(crate::Error::Numerical(msg)) => {
                assert!(msg.contains("epoch"), "message should locate the failure: {msg}");
            }
            other => panic!("expected a numerical error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_inputs_are_rejected_up_front() {
        let config = ConfidenceConfig::default();
        let opts = quick_opts(0);
        assert!(train_scorer(&[], &config, &opts).is_err());

        let ragged = vec![
            TrainRecord { class_id: 0, loss: 0.1, features: vec![1.0] },
            TrainRecord { class_id: 0, loss: 0.2, features: vec![1.0, 2.0] },
        ];
        assert!(train_scorer(&ragged, &config, &opts).is_err());

        let nan_feature = vec![
            TrainRecord { class_id: 0, loss: 0.1, features: vec![f64::NAN] },
            TrainRecord { class_id: 0, loss: 0.2, features: vec![1.0] },
        ];
        assert!(train_scorer(&nan_feature, &config, &opts).is_err());

        let bad_beta = ConfidenceConfig { beta: 0.0, ..Default::default() };
        assert!(train_scorer(&toy_records(4, 1), &bad_beta, &opts).is_err());

        let bad_opts = TrainOptions { epochs: 0, ..TrainOptions::default() };
        assert!(train_scorer(&toy_records(4, 1), &config, &bad_opts).is_err());
    }
}
