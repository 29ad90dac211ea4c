use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{accuracy, argmax_rows, cross_entropy, SoftmaxHead};
use crate::dataset::DecomposedSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Rate for the hidden layer, when there is one.
    pub learning_rate: f64,
    /// Rate for the output layer.
    pub head_learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_period_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            head_learning_rate: 1e-2,
            batch_size: 64,
            epochs: 100,
            weight_decay: 1e-4,
            momentum: 0.95,
            lr_drop_factor: 0.95,
            lr_drop_period_epochs: 5,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// The longer schedule: 256 epochs, weight decay 1e-3, momentum 0.9.
    pub fn long_schedule() -> Self {
        Self {
            epochs: 256,
            weight_decay: 1e-3,
            momentum: 0.9,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| r.is_finite() && r >= 0.0;
        if !rate_ok(self.learning_rate) || !rate_ok(self.head_learning_rate) || !rate_ok(self.weight_decay) {
            return Err(Error::Config("learning rates and weight decay must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(Error::Config(format!("lr_drop_factor must lie in (0, 1], got {}", self.lr_drop_factor)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.lr_drop_period_epochs == 0 {
            return Err(Error::Config("batch_size, epochs and lr_drop_period_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Step schedule: `base * factor^floor((epoch - 1) / period)` for 1-based
/// `epoch`.
pub fn lr_at_epoch(base: f64, cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = (epoch.saturating_sub(1) / cfg.lr_drop_period_epochs) as i32;
    base * cfg.lr_drop_factor.powi(drops)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Effective output-layer rate during the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,lr,train_loss,train_acc,val_loss,val_acc`; validation cells are
    /// empty when no validation set was given.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,val_loss,val_acc\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc)
            );
        }
        out
    }
}

/// Momentum SGD with coupled L2 weight decay:
/// `v = momentum * v - lr * (g + decay * p)`, then `p += v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    velocity: SoftmaxHead<T>,
    momentum: T,
    weight_decay: T,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(like: &SoftmaxHead<T>, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: like.zeros_like(),
            momentum: T::c(momentum),
            weight_decay: T::c(weight_decay),
        }
    }

    /// One update; `hidden_lr` applies to the hidden layer, `output_lr` to
    /// the output layer.
    pub fn step(&mut self, head: &mut SoftmaxHead<T>, grad: &SoftmaxHead<T>, hidden_lr: T, output_lr: T) {
        let mask = head.output_layer_mask();
        let grads = grad.params();
        for (((p, v), g), is_out) in head
            .params_mut()
            .into_iter()
            .zip(self.velocity.params_mut())
            .zip(grads)
            .zip(mask)
        {
            let lr = if is_out { output_lr } else { hidden_lr };
            for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v - lr * (g + self.weight_decay * *p);
                *p += *v;
            }
        }
    }
}

fn evaluate<T: Scalar>(head: &SoftmaxHead<T>, x: ArrayView2<'_, T>, y: &[usize]) -> Result<(f64, f64)> {
    let probs = head.predict_proba(x)?;
    let loss = cross_entropy(&probs, y)?.as_f64();
    Ok((loss, accuracy(&argmax_rows(&probs), y)))
}

/// Trains on `(x, y)`, reporting validation metrics on `val` when it is
/// given and non-empty.
pub fn train_on<T: Scalar>(
    mut head: SoftmaxHead<T>,
    x: &Array2<T>,
    y: &[usize],
    val: Option<(&Array2<T>, &[usize])>,
    cfg: &TrainConfig,
) -> Result<(SoftmaxHead<T>, TrainHistory)> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    let val = val.filter(|(vx, _)| vx.nrows() > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(&head, cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let hidden_lr = lr_at_epoch(cfg.learning_rate, cfg, epoch);
        let output_lr = lr_at_epoch(cfg.head_learning_rate, cfg, epoch);
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grad) = head.loss_and_gradient(bx.view(), &by)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            opt.step(&mut head, &grad, T::c(hidden_lr), T::c(output_lr));
        }
        if !head.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let (train_loss, train_acc) = evaluate(&head, x.view(), y)?;
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let (val_loss, val_acc) = match val {
            Some((vx, vy)) => {
                let (l, a) = evaluate(&head, vx.view(), vy)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch,
            lr: output_lr,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
    }
    Ok((head, history))
}

/// Trains on the sub-class labels of `train`.
pub fn train<T: Scalar>(
    head: SoftmaxHead<T>,
    train: &DecomposedSet<T>,
    val: Option<&DecomposedSet<T>>,
    cfg: &TrainConfig,
) -> Result<(SoftmaxHead<T>, TrainHistory)> {
    if head.n_classes() != train.parent_map().n_sub() {
        return Err(Error::DimensionMismatch {
            expected: train.parent_map().n_sub(),
            found: head.n_classes(),
        });
    }
    train_on(
        head,
        train.features(),
        train.sub_labels(),
        val.map(|v| (v.features(), v.sub_labels())),
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(per_class: usize, sigma: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let centers = [(0.0, 0.0), (5.0, 5.0)];
        let mut x = Array2::zeros((2 * per_class, 2));
        let mut y = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..per_class {
                let row = c * per_class + i;
                x[[row, 0]] = cx + noise.sample(&mut rng);
                x[[row, 1]] = cy + noise.sample(&mut rng);
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn schedule_drops_every_period() {
        let cfg = TrainConfig::default();
        for e in 1..=5 {
            assert_eq!(lr_at_epoch(0.01, &cfg, e), 0.01);
        }
        for e in 6..=10 {
            assert!((lr_at_epoch(0.01, &cfg, e) - 0.0095).abs() < 1e-15);
        }
        assert!((lr_at_epoch(0.01, &cfg, 11) - 0.01 * 0.95 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn history_follows_schedule() {
        let (x, y) = blobs(20, 0.3, 1);
        let cfg = TrainConfig { epochs: 12, ..Default::default() };
        let (_, h) = train_on(SoftmaxHead::new(2, 2, None, 0).unwrap(), &x, &y, None, &cfg).unwrap();
        assert_eq!(h.len(), 12);
        for r in &h.epochs {
            assert_eq!(r.lr, lr_at_epoch(cfg.head_learning_rate, &cfg, r.epoch));
            assert!(r.val_loss.is_none());
        }
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let (x, y) = blobs(100, 0.3, 2);
        let cfg = TrainConfig { epochs: 150, ..Default::default() };
        let first = |seed: u64| {
            let (_, h) = train_on(SoftmaxHead::new(2, 2, None, seed).unwrap(), &x, &y, None, &cfg).unwrap();
            h.epochs.iter().find(|r| r.train_acc == 1.0).map(|r| r.epoch)
        };
        assert_eq!(first(2), Some(26));
        assert_eq!(first(5), Some(7));
        let (head, h) = train_on(SoftmaxHead::new(2, 2, None, 0).unwrap(), &x, &y, Some((&x, &y)), &cfg).unwrap();
        assert_eq!(h.last().unwrap().train_acc, 1.0);
        assert_eq!(head.predict(x.view()).unwrap(), y);
        assert!(head.is_finite());
    }

    #[test]
    fn hidden_layer_trains_too() {
        let (x, y) = blobs(50, 0.3, 3);
        let cfg = TrainConfig { epochs: 50, learning_rate: 1e-2, ..Default::default() };
        let (_, h) = train_on(SoftmaxHead::new(2, 2, Some(8), 1).unwrap(), &x, &y, None, &cfg).unwrap();
        assert!(h.last().unwrap().train_acc >= 0.99);
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let (x, y) = blobs(10, 0.3, 4);
        let head = SoftmaxHead::new(2, 2, Some(3), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            head_learning_rate: 0.0,
            ..Default::default()
        };
        let (trained, h) = train_on(head.clone(), &x, &y, None, &cfg).unwrap();
        assert_eq!(trained, head);
        assert_eq!(h.len(), 1);
        assert!(TrainConfig { epochs: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn full_batch_loss_decreases() {
        let (x, y) = blobs(100, 0.3, 5);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 200,
            head_learning_rate: 1e-3,
            ..Default::default()
        };
        let (_, h) = train_on(SoftmaxHead::new(2, 2, None, 7).unwrap(), &x, &y, None, &cfg).unwrap();
        for w in h.epochs.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss, "{:?}", h.epochs);
        }
    }

    #[test]
    fn identical_seeds_identical_history() {
        let (x, y) = blobs(30, 0.5, 6);
        let cfg = TrainConfig { epochs: 8, batch_size: 7, seed: 3, ..Default::default() };
        let run = || train_on(SoftmaxHead::new(2, 2, Some(4), 2).unwrap(), &x, &y, Some((&x, &y)), &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha.to_csv(), hb.to_csv());
    }

    #[test]
    fn decay_alone_shrinks_norm() {
        let mut head = SoftmaxHead::<f64>::new(3, 2, Some(4), 1).unwrap();
        let zero = head.zeros_like();
        let mut opt = Sgd::new(&head, 0.95, 1e-4);
        let mut prev = head.squared_norm();
        for _ in 0..200 {
            opt.step(&mut head, &zero, 0.01, 0.01);
            let now = head.squared_norm();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = blobs(10, 0.3, 7);
        let x = x * 1e150;
        let cfg = TrainConfig { epochs: 3, head_learning_rate: 1e10, ..Default::default() };
        let err = train_on(SoftmaxHead::new(2, 2, None, 0).unwrap(), &x, &y, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 2 }), "{err}");
    }

    #[test]
    fn csv_layout() {
        let h = TrainHistory {
            epochs: vec![EpochRecord { epoch: 1, lr: 0.01, train_loss: 0.5, train_acc: 0.75, val_loss: None, val_acc: Some(1.0) }],
        };
        assert_eq!(h.to_csv(), "epoch,lr,train_loss,train_acc,val_loss,val_acc\n1,0.01,0.5,0.75,,1\n");
    }
}
