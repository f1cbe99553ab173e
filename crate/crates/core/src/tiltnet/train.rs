//! Mini-batch training loop and evaluation.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::loss::{batch_cross_entropy, cross_entropy};
use super::model::{argmax, batch_input, Model};
use super::optim::{PlateauConfig, PlateauScheduler, SgdMomentum};
use super::model::ModelSpec;
use crate::dataset::{split_dataset, DatasetRecord, Split};
use crate::error::{Error, Result};
use crate::sim::mix_seed;
use crate::tactile::{TiltClass, TILT_DEGREES};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub plateau: PlateauConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            plateau: PlateauConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2 for batchnorm".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        let f = self.plateau.factor;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("plateau factor {f} not in (0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: [[usize; TiltClass::COUNT]; TiltClass::COUNT],
}

impl EvalReport {
    pub fn row_sums(&self) -> [usize; TiltClass::COUNT] {
        let mut out = [0; TiltClass::COUNT];
        for (o, row) in out.iter_mut().zip(&self.confusion) {
            *o = row.iter().sum();
        }
        out
    }

    /// Share of `from`-class samples predicted as `to`.
    pub fn rate(&self, from: TiltClass, to: TiltClass) -> f64 {
        let n: usize = self.confusion[from.index()].iter().sum();
        if n == 0 {
            0.0
        } else {
            self.confusion[from.index()][to.index()] as f64 / n as f64
        }
    }

    pub fn confusion_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:>8}", "true\\pred");
        for d in TILT_DEGREES {
            let _ = write!(s, "{d:>6}");
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{:>9}", TILT_DEGREES[i]);
            for v in row {
                let _ = write!(s, "{v:>6}");
            }
            s.push('\n');
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true_deg");
        for d in TILT_DEGREES {
            let _ = write!(s, ",pred_{d}");
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{}", TILT_DEGREES[i]);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test: Option<EvalReport>,
}

impl TrainReport {
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:e},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.lr, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            );
        }
        s
    }
}

pub fn evaluate(model: &Model, records: &[DatasetRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptySet("evaluation"));
    }
    let mut confusion = [[0usize; TiltClass::COUNT]; TiltClass::COUNT];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in records.chunks(EVAL_BATCH) {
        let logits = model.infer(&batch_input(chunk.iter().map(|r| &r.biframe)))?;
        for (b, r) in chunk.iter().enumerate() {
            let z = logits.item(b);
            loss += cross_entropy(z, r.label.index()).0;
            let (p, _) = argmax(z);
            confusion[r.label.index()][p] += 1;
            if p == r.label.index() {
                correct += 1;
            }
        }
    }
    let n = records.len();
    Ok(EvalReport {
        count: n,
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
        confusion,
    })
}

/// Trains in place and returns the weights from the epoch with the best
/// validation accuracy (lower validation loss breaks ties).
pub fn train(
    mut model: Model,
    train_set: &[DatasetRecord],
    val_set: &[DatasetRecord],
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySet("validation"));
    }
    let mut opt = SgdMomentum::new(cfg.momentum);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.plateau);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Model)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = sched.lr();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = batch_input(batch.iter().map(|&i| &train_set[i].biframe));
            let labels: Vec<usize> = batch.iter().map(|&i| train_set[i].label.index()).collect();
            let (logits, tape) = model.forward(&x, Mode::Train)?;
            let (loss, grad) = batch_cross_entropy(&logits, &labels);
            let (grads, _) = model.backward(&tape, &grad)?;
            model.commit_running_stats(&tape);
            opt.step(&mut model.params_mut(), &grads, lr);

            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            correct += labels
                .iter()
                .enumerate()
                .filter(|(b, &l)| argmax(logits.item(*b)).0 == l)
                .count();
        }
        if !loss_sum.is_finite() {
            return Err(Error::Config(format!(
                "training diverged at epoch {epoch} (lr {lr})"
            )));
        }
        let val = evaluate(&model, val_set)?;
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        info!(
            "epoch {epoch:>3} lr {lr:.1e} train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
            stats.train_loss, stats.train_acc, stats.val_loss, stats.val_acc
        );
        epochs.push(stats);
        let improved = match &best {
            None => true,
            Some((acc, loss, _, _)) => {
                val.accuracy > *acc || (val.accuracy == *acc && val.loss < *loss)
            }
        };
        if improved {
            debug!("new best at epoch {epoch}");
            best = Some((val.accuracy, val.loss, epoch, model.clone()));
        }
        sched.step(val.loss);
    }
    let (best_val_acc, _, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok((
        best_model,
        TrainReport {
            epochs,
            best_epoch,
            best_val_acc,
            test: None,
        },
    ))
}

/// Seed for weight initialization derived from the run seed.
pub fn init_seed(seed: u64) -> u64 {
    mix_seed(seed, 0x1417)
}

/// The full recipe: stratified split with `cfg.seed`, fresh weights from the
/// same seed, training, then evaluation on the held-out test part.
pub fn fit_dataset(
    records: &[DatasetRecord],
    spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport, Split)> {
    let split = split_dataset(records, cfg.seed);
    if split.test.is_empty() {
        return Err(Error::EmptySet("test"));
    }
    let model = Model::init(spec, init_seed(cfg.seed))?;
    let (model, mut report) = train(model, &split.train, &split.val, cfg)?;
    report.test = Some(evaluate(&model, &split.test)?);
    Ok((model, report, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{render_contact, ContactParams};

    fn toy_set() -> Vec<DatasetRecord> {
        let p = ContactParams::default();
        let classes = [-60, -30, 0, 30, 60];
        (0..10)
            .map(|i| {
                let c = TiltClass::from_degrees(classes[i % 5]).unwrap();
                let pos = (i * 3) as u8;
                DatasetRecord {
                    biframe: render_contact(c, pos, &p, i as u64).unwrap(),
                    label: c,
                    gripper_pos: pos,
                    sample_id: i as u32,
                }
            })
            .collect()
    }

    fn small_spec() -> ModelSpec {
        ModelSpec::tilt_classifier(&[4, 4], &[32, 16, 16])
    }

    fn train_mode_loss(m: &Model, data: &[DatasetRecord]) -> f64 {
        let x = batch_input(data.iter().map(|r| &r.biframe));
        let labels: Vec<usize> = data.iter().map(|r| r.label.index()).collect();
        let (logits, _) = m.forward(&x, Mode::Train).unwrap();
        batch_cross_entropy(&logits, &labels).0
    }

    #[test]
    fn one_epoch_reduces_toy_loss() {
        let data = toy_set();
        let model = Model::init(small_spec(), 3).unwrap();
        let before = train_mode_loss(&model, &data);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 10,
            ..Default::default()
        };
        let (m, report) = train(model, &data, &data, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 1);
        let after = train_mode_loss(&m, &data);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn overfits_toy_set() {
        let data = toy_set();
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 10,
            lr: 0.05,
            ..Default::default()
        };
        let (m, report) = train(Model::init(small_spec(), 4).unwrap(), &data, &data, &cfg).unwrap();
        let eval = evaluate(&m, &data).unwrap();
        assert_eq!(eval.accuracy, 1.0, "{}", report.curves_csv());
        assert_eq!(eval.row_sums().iter().sum::<usize>(), 10);
        assert_eq!(eval.row_sums()[4], 2);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data = toy_set();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let a = train(Model::init(small_spec(), 1).unwrap(), &data, &data, &cfg).unwrap();
        let b = train(Model::init(small_spec(), 1).unwrap(), &data, &data, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = toy_set();
        let m = Model::init(small_spec(), 1).unwrap();
        assert!(train(m.clone(), &data, &[], &TrainConfig::default()).is_err());
        assert!(train(m.clone(), &data[..1], &data, &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train(m.clone(), &data, &data, &bad).is_err());
        let mut bad = TrainConfig::default();
        bad.plateau.factor = 1.0;
        assert!(train(m.clone(), &data, &data, &bad).is_err());
        assert!(evaluate(&m, &[]).is_err());
    }

    #[test]
    fn confusion_table_layout() {
        let mut r = EvalReport {
            count: 3,
            loss: 0.0,
            accuracy: 0.0,
            confusion: [[0; 9]; 9],
        };
        r.confusion[0][8] = 2;
        r.confusion[8][8] = 1;
        assert_eq!(r.rate(TiltClass::from_index(0).unwrap(), TiltClass::from_index(8).unwrap()), 1.0);
        let t = r.confusion_table();
        assert_eq!(t.lines().count(), 10);
        assert!(r.confusion_csv().starts_with("true_deg,pred_-90"));
    }
}
