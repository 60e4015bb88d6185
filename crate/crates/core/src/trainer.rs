//! Training protocol: Xavier initialization, RMSprop with momentum and
//! decoupled weight decay, global gradient-norm clipping, multi-start
//! initialization, the epoch loop and evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::fusion::{Modality, ModelConfig, RcFusionModel};
use crate::image::{augment, channel_stats, standardize, AugmentConfig, RgbdSample};
use crate::params::{ParamId, ParamSet};
use crate::rng::{item_rng, Stream};
use crate::scalar::Scalar;
use crate::tape::{BnMode, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub rms_decay: f64,
    pub eps: f64,
    pub epochs: usize,
    pub multi_start_k: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0002,
            max_grad_norm: 4.0,
            rms_decay: 0.9,
            eps: 1e-8,
            epochs: 30,
            multi_start_k: 3,
            seed: 0,
            augment: AugmentConfig::disabled(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.epochs < 1 || self.multi_start_k < 1 {
            return Err(Error::Config(
                "batch_size, epochs and multi_start_k must be at least 1".into(),
            ));
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::Config(
                "learning_rate/weight_decay must be >= 0 and eps > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::Config("momentum and rms_decay must be in [0,1)".into()));
        }
        if self.max_grad_norm <= 0.0 {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Worker count from `RCF_THREADS` (default 1). Parallelism never changes
/// results: it only spreads independent runs (multi-start candidates,
/// ablation variants) over threads.
pub fn configured_threads() -> usize {
    std::env::var("RCF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Uniform in `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`. Convolution
/// fans include the receptive-field size.
pub fn xavier_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha12Rng,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::from_f64(rng.random::<f64>() * 2.0 * bound - bound))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sizes agree by construction")
}

/// Square-average and momentum buffers per trainable parameter.
pub struct RmsPropState<T: Scalar> {
    entries: Vec<(ParamId, Vec<T>, Vec<T>)>,
}

impl<T: Scalar> RmsPropState<T> {
    pub fn new(ps: &ParamSet<T>) -> Self {
        let entries = ps
            .trainable_ids()
            .into_iter()
            .map(|id| {
                let n = ps.get(id).tensor.numel();
                (id, vec![T::zero(); n], vec![T::zero(); n])
            })
            .collect();
        RmsPropState { entries }
    }

    pub fn square_avg_nonnegative(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, s, _)| s.iter().all(|&v| v >= T::zero()))
    }
}

/// Scales all trainable gradients so their global L2 norm is at most
/// `max_norm`; returns the applied scale.
pub fn clip_grad_norm<T: Scalar>(ps: &mut ParamSet<T>, max_norm: f64) -> Result<f64> {
    let mut total = 0.0f64;
    for id in ps.trainable_ids() {
        if let Some(g) = ps.get(id).tensor.grad() {
            let mut part = 0.0f64;
            for v in g {
                let x = v.as_f64();
                part += x * x;
            }
            total += part;
        }
    }
    let norm = total.sqrt();
    if !norm.is_finite() {
        return Err(Error::numeric("gradient norm is not finite"));
    }
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    let s = T::from_f64(scale);
    for id in ps.trainable_ids() {
        let t = &mut ps.get_mut(id).tensor;
        if t.grad().is_some() {
            let scaled: Vec<T> = t.grad().unwrap().iter().map(|&g| g * s).collect();
            t.zero_grad();
            t.accumulate_grad(&scaled);
        }
    }
    Ok(scale)
}

/// One update: `g += wd * theta` on decay-eligible weights, then
/// `s = rho s + (1-rho) g^2`, `v = mu v + lr g / sqrt(s + eps)`,
/// `theta -= v`.
pub fn rmsprop_step<T: Scalar>(
    ps: &mut ParamSet<T>,
    state: &mut RmsPropState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let rho = T::from_f64(cfg.rms_decay);
    let one_minus_rho = T::from_f64(1.0 - cfg.rms_decay);
    let mu = T::from_f64(cfg.momentum);
    let lr = T::from_f64(cfg.learning_rate);
    let wd = T::from_f64(cfg.weight_decay);
    let eps = T::from_f64(cfg.eps);

    for (id, sq, mom) in state.entries.iter_mut() {
        let entry = ps.get_mut(*id);
        if entry.tensor.grad().map(|g| g.len()) != Some(sq.len())
            && entry.tensor.grad().is_some()
        {
            return Err(Error::shape(format!(
                "optimizer state size mismatch for '{}'",
                entry.name
            )));
        }
        let decay = entry.decay;
        let grad_snapshot: Option<Vec<T>> = entry.tensor.grad().map(|g| g.to_vec());
        let data = entry.tensor.data_mut();
        for i in 0..data.len() {
            let mut g = grad_snapshot.as_ref().map(|g| g[i]).unwrap_or(T::zero());
            if decay {
                g = g + wd * data[i];
            }
            sq[i] = rho * sq[i] + one_minus_rho * g * g;
            mom[i] = mu * mom[i] + lr * g / (sq[i] + eps).sqrt();
            data[i] = data[i] - mom[i];
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct StepMetrics {
    pub loss: f64,
    pub correct: usize,
    pub n: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    /// Row-major `k x k` counts, rows are true classes.
    pub confusion: Vec<usize>,
    pub support: Vec<usize>,
}

/// Computes standardization constants from the training split and stores
/// them in the model's `norm.*` entries.
pub fn set_normalization<T: Scalar>(
    model: &mut RcFusionModel<T>,
    train: &[RgbdSample<T>],
) -> Result<()> {
    let write = |ps: &mut ParamSet<T>, name: &str, v: &[f64; 3]| {
        if let Some(id) = ps.id_of(name) {
            let t = &mut ps.get_mut(id).tensor;
            let cast: Vec<T> = v.iter().map(|&x| T::from_f64(x)).collect();
            t.data_mut().copy_from_slice(&cast);
        }
    };
    if model.cfg.modality != Modality::Depth {
        let (mean, std) = channel_stats(train.iter().map(|s| &s.rgb));
        write(&mut model.params, "norm.rgb.mean", &mean);
        write(&mut model.params, "norm.rgb.std", &std);
    }
    if model.cfg.modality != Modality::Rgb {
        let (mean, std) = channel_stats(train.iter().map(|s| &s.depth_encoded));
        write(&mut model.params, "norm.depth.mean", &mean);
        write(&mut model.params, "norm.depth.std", &std);
    }
    Ok(())
}

fn norm_constants<T: Scalar>(ps: &ParamSet<T>, stream: &str) -> ([f64; 3], [f64; 3]) {
    let read = |name: &str, default: f64| -> [f64; 3] {
        match ps.id_of(name) {
            Some(id) => {
                let d = ps.get(id).tensor.to_f64_vec();
                [d[0], d[1], d[2]]
            }
            None => [default; 3],
        }
    };
    (
        read(&format!("norm.{stream}.mean"), 0.0),
        read(&format!("norm.{stream}.std"), 1.0),
    )
}

/// Stacks standardized per-sample planes into batch tensors for the streams
/// the model consumes.
pub fn make_batch<T: Scalar>(
    model: &RcFusionModel<T>,
    batch: &[&RgbdSample<T>],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Vec<usize>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let stack = |stream: &str, pick: &dyn Fn(&RgbdSample<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
        let (mean, std) = norm_constants(&model.params, stream);
        let first = pick(batch[0]).shape().to_vec();
        let mut data = Vec::with_capacity(batch.len() * pick(batch[0]).numel());
        for s in batch {
            let img = pick(s);
            if img.shape() != first {
                return Err(Error::shape(format!(
                    "inconsistent sample shapes {:?} vs {:?}",
                    img.shape(),
                    first
                )));
            }
            let z = standardize(img, &mean, &std)?;
            data.extend_from_slice(z.data());
        }
        Tensor::new(vec![batch.len(), first[0], first[1], first[2]], data)
    };
    let rgb = if model.cfg.modality != Modality::Depth {
        Some(stack("rgb", &|s| &s.rgb)?)
    } else {
        None
    };
    let depth = if model.cfg.modality != Modality::Rgb {
        Some(stack("depth", &|s| &s.depth_encoded)?)
    } else {
        None
    };
    Ok((rgb, depth, labels))
}

fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Optimizer plus configuration; owns the per-parameter state across steps.
pub struct Trainer<T: Scalar> {
    pub cfg: TrainConfig,
    state: RmsPropState<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig, model: &RcFusionModel<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            state: RmsPropState::new(&model.params),
            cfg,
        })
    }

    /// Forward, loss, backward, clip, update, zero. Batchnorm runs in train
    /// mode. Samples must already be augmented (the epoch loop does that).
    pub fn step(
        &mut self,
        model: &mut RcFusionModel<T>,
        batch: &[&RgbdSample<T>],
    ) -> Result<StepMetrics> {
        let (rgb, depth, labels) = make_batch(model, batch)?;
        let mut tape = Tape::new();
        let logits = model.forward_logits(&mut tape, rgb, depth, BnMode::Train)?;
        let (loss, probs) = tape.softmax_cross_entropy(logits, &labels)?;
        tape.backward(loss)?;
        tape.accumulate_param_grads(&mut model.params);
        clip_grad_norm(&mut model.params, self.cfg.max_grad_norm)?;
        rmsprop_step(&mut model.params, &mut self.state, &self.cfg)?;
        model.params.zero_grads();

        let k = model.cfg.num_classes;
        let correct = labels
            .iter()
            .enumerate()
            .filter(|(r, &y)| argmax_row(&probs.data()[r * k..(r + 1) * k]) == y)
            .count();
        Ok(StepMetrics {
            loss: tape.value(loss).item()?.as_f64(),
            correct,
            n: labels.len(),
        })
    }

    /// One pass over shuffled data. The shuffle and per-sample augmentation
    /// streams derive from `(seed, epoch)`, so a whole run replays exactly.
    pub fn train_epoch(
        &mut self,
        model: &mut RcFusionModel<T>,
        data: &[RgbdSample<T>],
        epoch: u64,
    ) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::Data("train_epoch: empty training data".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng = item_rng(self.cfg.seed, Stream::Shuffle, epoch);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let augmented: Vec<RgbdSample<T>> = chunk
                .iter()
                .map(|&i| {
                    if self.cfg.augment.is_disabled() {
                        data[i].clone()
                    } else {
                        let mut rng = item_rng(
                            self.cfg.seed,
                            Stream::Augment,
                            epoch * data.len() as u64 + i as u64,
                        );
                        augment(&data[i], &mut rng, &self.cfg.augment)
                    }
                })
                .collect();
            let refs: Vec<&RgbdSample<T>> = augmented.iter().collect();
            let m = self.step(model, &refs).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch} aborted: {msg}")),
                other => other,
            })?;
            loss_sum += m.loss * m.n as f64;
            correct += m.correct;
        }
        Ok(EpochMetrics {
            mean_loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        })
    }
}

/// Eval-mode accuracy, per-class accuracy and confusion matrix (rows are
/// true classes). No augmentation, no gradients.
pub fn evaluate<T: Scalar>(
    model: &mut RcFusionModel<T>,
    data: &[RgbdSample<T>],
    batch_size: usize,
) -> Result<EvalMetrics> {
    let k = model.cfg.num_classes;
    let mut confusion = vec![0usize; k * k];
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&RgbdSample<T>> = chunk.iter().collect();
        let (rgb, depth, labels) = make_batch(model, &refs)?;
        let probs = model.forward_probs(rgb, depth, BnMode::Eval)?;
        for (r, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::Data(format!("label {y} out of range [0,{k})")));
            }
            let pred = argmax_row(&probs.data()[r * k..(r + 1) * k]);
            confusion[y * k + pred] += 1;
        }
    }
    let support: Vec<usize> = (0..k).map(|c| confusion[c * k..(c + 1) * k].iter().sum()).collect();
    let diag: usize = (0..k).map(|c| confusion[c * k + c]).sum();
    let total: usize = support.iter().sum();
    let per_class: Vec<f64> = (0..k)
        .map(|c| {
            if support[c] == 0 {
                0.0
            } else {
                confusion[c * k + c] as f64 / support[c] as f64
            }
        })
        .collect();
    Ok(EvalMetrics {
        accuracy: if total == 0 { 0.0 } else { diag as f64 / total as f64 },
        per_class,
        confusion,
        support,
    })
}

pub struct MultiStartOutcome<T: Scalar> {
    pub model: RcFusionModel<T>,
    pub trainer: Trainer<T>,
    pub first_epoch: EpochMetrics,
    pub chosen_candidate: usize,
    pub chosen_seed: u64,
    pub candidate_losses: Vec<f64>,
}

/// Trains `k` fresh initializations (seeds `seed..seed+k`) for one epoch each
/// and keeps the one with the lowest end-of-epoch training loss (ties go to
/// the lowest seed). Candidates run on up to `RCF_THREADS` worker threads;
/// each candidate is self-contained, so the outcome is identical at any
/// thread count.
pub fn multi_start<T: Scalar>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[RgbdSample<T>],
) -> Result<MultiStartOutcome<T>> {
    if train.is_empty() {
        return Err(Error::Data("multi_start: empty training data".into()));
    }
    train_cfg.validate()?;
    let k = train_cfg.multi_start_k;

    let run_candidate = |c: usize| -> Result<(RcFusionModel<T>, Trainer<T>, EpochMetrics)> {
        let seed = train_cfg.seed + c as u64;
        let mut cfg = train_cfg.clone();
        cfg.seed = seed;
        let mut model = RcFusionModel::init(model_cfg, seed)?;
        set_normalization(&mut model, train)?;
        let mut trainer = Trainer::new(cfg, &model)?;
        let metrics = trainer.train_epoch(&mut model, train, 0)?;
        Ok((model, trainer, metrics))
    };

    let workers = configured_threads().min(k);
    let mut outcomes: Vec<Option<Result<(RcFusionModel<T>, Trainer<T>, EpochMetrics)>>> =
        (0..k).map(|_| None).collect();
    if workers <= 1 {
        for (c, slot) in outcomes.iter_mut().enumerate() {
            *slot = Some(run_candidate(c));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots = std::sync::Mutex::new(&mut outcomes);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let c = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if c >= k {
                        break;
                    }
                    let r = run_candidate(c);
                    slots.lock().unwrap()[c] = Some(r);
                });
            }
        });
    }

    let mut candidate_losses = Vec::with_capacity(k);
    let mut best: Option<(usize, f64)> = None;
    let mut results = Vec::with_capacity(k);
    for (c, slot) in outcomes.into_iter().enumerate() {
        let r = slot.expect("all candidates ran")?;
        candidate_losses.push(r.2.mean_loss);
        // Strictly-lower wins; ties keep the earlier (lower) seed.
        if best.map(|(_, l)| r.2.mean_loss < l).unwrap_or(true) {
            best = Some((c, r.2.mean_loss));
        }
        results.push(Some(r));
    }
    let (chosen, _) = best.expect("k >= 1");
    let (model, trainer, first_epoch) = results[chosen].take().expect("winner present");
    Ok(MultiStartOutcome {
        model,
        trainer,
        first_epoch,
        chosen_candidate: chosen,
        chosen_seed: train_cfg.seed + chosen as u64,
        candidate_losses,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

pub struct FitOutcome<T: Scalar> {
    pub model: RcFusionModel<T>,
    pub history: Vec<EpochRecord>,
    pub chosen_seed: u64,
}

/// Full protocol: multi-start, then the remaining epochs on the winner.
/// `val` is evaluated (eval mode, no augmentation) after every epoch.
pub fn fit<T: Scalar>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[RgbdSample<T>],
    val: Option<&[RgbdSample<T>]>,
) -> Result<FitOutcome<T>> {
    let ms = multi_start(model_cfg, train_cfg, train)?;
    let MultiStartOutcome {
        mut model,
        mut trainer,
        first_epoch,
        chosen_seed,
        ..
    } = ms;

    let mut history = Vec::with_capacity(train_cfg.epochs);
    let eval_batch = train_cfg.batch_size;
    let val_acc = match val {
        Some(v) if !v.is_empty() => evaluate(&mut model, v, eval_batch)?.accuracy,
        _ => f64::NAN,
    };
    history.push(EpochRecord {
        epoch: 1,
        loss: first_epoch.mean_loss,
        train_acc: first_epoch.accuracy,
        val_acc,
    });

    for e in 1..train_cfg.epochs {
        let m = trainer.train_epoch(&mut model, train, e as u64)?;
        let val_acc = match val {
            Some(v) if !v.is_empty() => evaluate(&mut model, v, eval_batch)?.accuracy,
            _ => f64::NAN,
        };
        history.push(EpochRecord {
            epoch: e + 1,
            loss: m.mean_loss,
            train_acc: m.accuracy,
            val_acc,
        });
    }
    Ok(FitOutcome {
        model,
        history,
        chosen_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn xavier_bound_and_determinism() {
        // fan_in 4, fan_out 2: bound sqrt(6/6) = 1 exactly.
        let mut r1 = stream_rng(4, Stream::Init);
        let t1: Tensor<f64> = xavier_uniform(&[4, 2], 4, 2, &mut r1);
        assert!(t1.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        let mut r2 = stream_rng(4, Stream::Init);
        let t2: Tensor<f64> = xavier_uniform(&[4, 2], 4, 2, &mut r2);
        assert_eq!(t1.data(), t2.data());
    }

    fn grad_fixture(values: &[f64]) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.register(
            "w",
            Tensor::from_f64(&[values.len()], values).unwrap(),
            true,
            true,
        )
        .unwrap();
        ps
    }

    fn set_grad(ps: &mut ParamSet<f64>, name: &str, g: &[f64]) {
        let id = ps.id_of(name).unwrap();
        let t = &mut ps.get_mut(id).tensor;
        t.zero_grad();
        t.accumulate_grad(g);
    }

    #[test]
    fn clip_scales_only_above_threshold() {
        // Norm 8 with max 4 scales by 0.5.
        let mut ps = grad_fixture(&[0.0, 0.0]);
        set_grad(&mut ps, "w", &[8.0, 0.0]);
        assert_eq!(clip_grad_norm(&mut ps, 4.0).unwrap(), 0.5);
        let id = ps.id_of("w").unwrap();
        assert_eq!(ps.get(id).tensor.grad().unwrap(), &[4.0, 0.0]);

        // Norm 2 with max 4 unchanged; exact boundary unchanged.
        set_grad(&mut ps, "w", &[2.0, 0.0]);
        assert_eq!(clip_grad_norm(&mut ps, 4.0).unwrap(), 1.0);
        set_grad(&mut ps, "w", &[4.0, 0.0]);
        assert_eq!(clip_grad_norm(&mut ps, 4.0).unwrap(), 1.0);
        assert_eq!(ps.get(id).tensor.grad().unwrap(), &[4.0, 0.0]);
    }

    #[test]
    fn rmsprop_first_step_hand_values() {
        // g=1, lr=0.001, rho=0.9, mu=0.9, wd=0:
        // s=0.1, v=0.001/sqrt(0.1+1e-8), theta drops by that amount.
        let mut ps = grad_fixture(&[1.0]);
        set_grad(&mut ps, "w", &[1.0]);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut st = RmsPropState::new(&ps);
        rmsprop_step(&mut ps, &mut st, &cfg).unwrap();
        let id = ps.id_of("w").unwrap();
        let v1 = 0.001 / (0.1f64 + 1e-8).sqrt();
        assert!((ps.get(id).tensor.data()[0] - (1.0 - v1)).abs() < 1e-12);
        assert!(st.square_avg_nonnegative());

        // Second step with the same gradient: momentum accumulates.
        set_grad(&mut ps, "w", &[1.0]);
        let before = ps.get(id).tensor.data()[0];
        rmsprop_step(&mut ps, &mut st, &cfg).unwrap();
        let second_delta = before - ps.get(id).tensor.data()[0];
        assert!(second_delta > v1, "second step {second_delta} <= first {v1}");
        let v2 = 0.9 * v1 + 0.001 / (0.19f64 + 1e-8).sqrt();
        assert!((second_delta - v2).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut ps = grad_fixture(&[0.7, -0.3]);
        set_grad(&mut ps, "w", &[0.0, 0.0]);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut st = RmsPropState::new(&ps);
        for _ in 0..3 {
            rmsprop_step(&mut ps, &mut st, &cfg).unwrap();
        }
        let id = ps.id_of("w").unwrap();
        assert_eq!(ps.get(id).tensor.data(), &[0.7, -0.3]);
    }
}
