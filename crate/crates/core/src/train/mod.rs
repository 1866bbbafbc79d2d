//! Weighted multi-branch objective, the training loop, evaluation and the
//! repeated-run harnesses for ablations.

mod eval;
mod runs;

use std::io::Write;

use rand::seq::SliceRandom;

use crate::autograd::{Tape, Var};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::net::{Branch, BranchSet, ForwardTrace, MgmlNet};
use crate::nn::{lr_schedule, OptimizerState, SgdConfig};
use crate::ops;
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use eval::{evaluate, global_mean_pairwise, mean_std, EvalReport};
pub use runs::{
    ablate, compare_crop, run_many, run_seed, threads_from_env, AblationRow, AblationTable, RunResult, Variant, ABLATION_VARIANTS,
};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Independent repetitions for mean/std reporting.
    pub runs: usize,
    pub branches: BranchSet,
    /// Evaluate on the test set every this many epochs (0: after the last only).
    pub eval_every: usize,
}

impl TrainConfig {
    /// 60 epochs of batch 16 from lr 0.005, decayed at 30 and 45.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            base_lr: 0.005,
            milestones: vec![30, 45],
            lr_factor: 10.0,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
            runs: 5,
            branches: BranchSet::FULL,
            eval_every: 1,
        }
    }

    /// 200 epochs of batch 64 from lr 0.005, decayed at 90 and 150.
    pub fn long() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            base_lr: 0.005,
            milestones: vec![90, 150],
            ..Self::desk()
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "long" => Ok(Self::long()),
            other => Err(Error::config(format!("unknown schedule preset {other:?} (expected desk or long)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return Err(Error::config("epochs, batch_size and runs must all be >= 1"));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.base_lr) || !finite_nonneg(self.momentum) || !finite_nonneg(self.weight_decay) {
            return Err(Error::config("learning rate, momentum and weight decay must be finite and >= 0"));
        }
        if !(self.lr_factor.is_finite() && self.lr_factor > 0.0) {
            return Err(Error::config(format!("lr factor must be > 0, got {}", self.lr_factor)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.base_lr, &self.milestones, self.lr_factor)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::long()
    }
}

fn check_lambda(lambda: &[f64; 4]) -> Result<()> {
    match lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        Some(l) => Err(Error::config(format!("branch weights must be finite and >= 0, got {l}"))),
        None => Ok(()),
    }
}

/// Traced objective: `sum_b lambda_b * CE(logits_b, labels)` over the
/// branches present in `trace`.
pub fn objective_traced<T: Scalar>(
    tape: &mut Tape<T>,
    trace: &ForwardTrace,
    labels: &[usize],
    lambda: &[f64; 4],
) -> Result<Var> {
    check_lambda(lambda)?;
    let mut terms = Vec::with_capacity(4);
    for b in Branch::ALL {
        if let Some(l) = trace.logits.get(b) {
            let ce = tape.softmax_cross_entropy(l, labels)?;
            terms.push((ce, T::from_f64_lossy(lambda[b.index()])));
        }
    }
    tape.weighted_sum(&terms)
}

/// Objective value from per-branch logits; absent branches contribute nothing.
pub fn objective<T: Scalar>(logits: &[Option<Tensor<T>>; 4], labels: &[usize], lambda: &[f64; 4]) -> Result<f64> {
    check_lambda(lambda)?;
    let mut total = 0.0;
    for (l, &w) in logits.iter().zip(lambda) {
        if let Some(l) = l {
            let (ce, _) = ops::softmax_cross_entropy(l, labels)?;
            total += w * ce.to_f64_lossy();
        }
    }
    Ok(total)
}

/// One row of the per-epoch metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean objective over the epoch's batches.
    pub train_loss: f64,
    pub eval: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn last_eval(&self) -> Option<&EvalReport> {
        self.epochs.iter().rev().find_map(|e| e.eval.as_ref())
    }

    /// CSV with one row per epoch; accuracies are blank for epochs that
    /// were not evaluated and for branches that did not run.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,lr,train_loss,oa_mb,oa_ffb,oa_fem3,oa_fem4,oa_ensemble")?;
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        for e in &self.epochs {
            let (branch, ens) = match &e.eval {
                Some(r) => (r.branch_oa, Some(r.oa)),
                None => ([None; 4], None),
            };
            writeln!(
                w,
                "{},{},{:.10},{},{},{},{},{}",
                e.epoch + 1,
                e.lr,
                e.train_loss,
                cell(branch[0]),
                cell(branch[1]),
                cell(branch[2]),
                cell(branch[3]),
                cell(ens)
            )?;
        }
        Ok(())
    }
}

/// Trains the selected branches of `net` with SGD. Sample order is
/// reshuffled every epoch from `cfg.seed`; when `test` is given it is
/// scored on the schedule set by `cfg.eval_every`.
pub fn train<T: Scalar>(
    net: &mut MgmlNet<T>,
    train_set: &LabeledSet<T>,
    test: Option<&LabeledSet<T>>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if train_set.num_classes() > net.config().num_classes {
        return Err(Error::config(format!(
            "dataset has {} classes, model has {}",
            train_set.num_classes(),
            net.config().num_classes
        )));
    }
    let lambda = net.config().lambda;
    let ids = net.param_ids(cfg.branches);
    let sgd = SgdConfig {
        learning_rate: cfg.base_lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let mut opt = OptimizerState::new(sgd, net.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, epoch as u64));
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.batch(idx)?;
            let labels = train_set.batch_labels(idx);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let trace = net.forward(&mut tape, xv, cfg.branches)?;
            let loss = objective_traced(&mut tape, &trace, &labels, &lambda)?;
            let value = tape.value(loss).data()[0].to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::Runtime(format!(
                    "loss became {value} at epoch {} batch {} (lr {})",
                    epoch + 1,
                    bi + 1,
                    opt.learning_rate
                )));
            }
            loss_sum += value * idx.len() as f64;
            let grads = tape.backward(loss)?;
            let store = net.params_mut();
            store.accumulate(&grads)?;
            opt.step_params(store, &ids)?;
            store.clear_grads();
        }
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let eval = match test {
            Some(t) if last || due => Some(evaluate(net, t, cfg.branches)?),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            lr: opt.learning_rate,
            train_loss: loss_sum / train_set.len() as f64,
            eval,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn zeros(n: usize, k: usize) -> Tensor<f64> {
        Tensor::zeros(Shape::vector(n, k).unwrap())
    }

    #[test]
    fn uniform_logits_give_weighted_log_k() {
        let l = Some(zeros(3, 45));
        let v = objective(&[l.clone(), l.clone(), l.clone(), l], &[0, 7, 44], &[1.0, 0.5, 0.2, 0.5]).unwrap();
        assert!((v - 2.2 * 45f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn main_only_weights() {
        let a = Tensor::from_vec([2, 3, 1, 1], vec![0.3, -1.0, 2.0, 0.0, 0.5, -0.5]).unwrap();
        let b = Tensor::from_vec([2, 3, 1, 1], vec![1.0, 1.0, 0.0, 4.0, 0.5, 0.5]).unwrap();
        let labels = [2, 1];
        let logits = [Some(a.clone()), Some(b.clone()), Some(b.clone()), Some(b)];
        let v = objective(&logits, &labels, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let (ce, _) = ops::softmax_cross_entropy(&a, &labels).unwrap();
        assert!((v - ce).abs() < 1e-12);
    }

    #[test]
    fn negative_lambda_is_config_error() {
        let l = [Some(zeros(1, 2)), None, None, None];
        assert!(matches!(objective(&l, &[0], &[1.0, -0.1, 0.0, 0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn presets() {
        let d = TrainConfig::desk();
        assert_eq!((d.epochs, d.batch_size, d.base_lr), (60, 16, 0.005));
        assert_eq!(d.milestones, vec![30, 45]);
        let p = TrainConfig::long();
        assert_eq!((p.epochs, p.batch_size, p.base_lr, p.runs), (200, 64, 0.005, 5));
        assert_eq!(p.milestones, vec![90, 150]);
        assert_eq!((p.momentum, p.weight_decay), (0.9, 0.0005));
    }
}
