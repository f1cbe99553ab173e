//! SGD with momentum and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

/// Heavy-ball SGD: `v = mu * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) {
        sgd_momentum_step(params, grads, &mut self.velocity, self.momentum, lr);
    }
}

pub fn sgd_momentum_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    velocity: &mut Vec<Vec<f64>>,
    momentum: f64,
    lr: f64,
) {
    assert_eq!(params.len(), grads.len());
    debug_assert!(lr > 0.0);
    if velocity.is_empty() {
        *velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        assert_eq!(p.len(), g.len());
        for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// An epoch counts as an improvement only if it beats the best loss by this much.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            patience: 5,
            min_lr: 1e-5,
            threshold: 1e-4,
        }
    }
}

/// Cuts the learning rate once the validation loss stops improving for
/// `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub cfg: PlateauConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: PlateauConfig) -> Self {
        Self {
            cfg,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, val_loss: f64) -> f64 {
        reduce_lr_on_plateau(self, val_loss)
    }
}

pub fn reduce_lr_on_plateau(sched: &mut PlateauScheduler, val_loss: f64) -> f64 {
    if val_loss < sched.best - sched.cfg.threshold {
        sched.best = val_loss;
        sched.bad_epochs = 0;
    } else {
        sched.bad_epochs += 1;
        if sched.bad_epochs >= sched.cfg.patience {
            sched.lr = (sched.lr * sched.cfg.factor).max(sched.cfg.min_lr);
            sched.bad_epochs = 0;
        }
    }
    sched.lr
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_losses_keep_lr() {
        let mut s = PlateauScheduler::new(0.01, PlateauConfig::default());
        for e in 0..50 {
            assert_eq!(s.step(10.0 - e as f64 * 0.1), 0.01);
        }
    }

    #[test]
    fn constant_loss_first_cut_after_sixth_epoch() {
        let mut s = PlateauScheduler::new(0.01, PlateauConfig::default());
        let lrs: Vec<f64> = (0..12).map(|_| s.step(1.0)).collect();
        // epoch 1 sets the best; epochs 2..=6 are five bad epochs
        assert!(lrs[..5].iter().all(|&lr| lr == 0.01));
        assert!((lrs[5] - 0.001).abs() < 1e-15);
        assert!(lrs[6..10].iter().all(|&lr| (lr - 0.001).abs() < 1e-15));
        assert!((lrs[10] - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn lr_floor() {
        let mut s = PlateauScheduler::new(1e-5, PlateauConfig::default());
        for _ in 0..30 {
            assert_eq!(s.step(1.0), 1e-5);
        }
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut s = PlateauScheduler::new(0.1, PlateauConfig::default());
        let mut loss = 1.0;
        let mut lr = 0.1;
        for _ in 0..6 {
            lr = s.step(loss);
            loss -= 1e-5;
        }
        assert!(lr < 0.1);
    }

    #[test]
    fn momentum_step() {
        let mut p = vec![1.0, 2.0];
        let g = vec![vec![0.5, -1.0]];
        let mut opt = SgdMomentum::new(0.9);
        opt.step(&mut [&mut p[..]], &g, 0.1);
        assert_eq!(p, vec![0.95, 2.1]);
        opt.step(&mut [&mut p[..]], &g, 0.1);
        // v = 0.9*0.5 + 0.5 = 0.95
        assert!((p[0] - (0.95 - 0.095)).abs() < 1e-15);
    }
}
