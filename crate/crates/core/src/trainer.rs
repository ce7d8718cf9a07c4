//! Maximum-likelihood training: Adam with decoupled weight decay,
//! deterministic dataset splits, early stopping on validation NLL, and a
//! recovery path for non-finite losses.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{loss_and_grads_offset, LossReport};
use crate::classical::EventSequence;
use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::ode::{SolverConfig, SolverStats};
use crate::scalar::{c, Real};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// sequences per gradient step
    pub batch_size: usize,
    /// train / validation / test fractions; must sum to 1
    pub split: [f64; 3],
    pub seed: u64,
    /// uniform quadrature nodes per sequence window
    pub grid_points: usize,
    /// early-stop after this many epochs without validation improvement
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
            batch_size: 32,
            split: [0.6, 0.2, 0.2],
            seed: 0,
            grid_points: 100,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f < 0.0) {
            return Err(Error::Schema(format!(
                "split fractions {:?} must be nonnegative and sum to 1",
                self.split
            )));
        }
        if self.learning_rate < 0.0
            || self.weight_decay < 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon <= 0.0
        {
            return Err(Error::Schema("optimizer rates out of range".into()));
        }
        if self.batch_size == 0 || self.grid_points < 2 {
            return Err(Error::Schema(
                "batch size must be positive and grid_points at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Disjoint (train, validation, test) index sets: a seeded shuffle of
/// 0..n cut at the fraction boundaries.
pub fn split_dataset(n: usize, split: [f64; 3], seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    idx.shuffle(&mut rng);
    let n_train = ((split[0] * n as f64).round() as usize).min(n).max(usize::from(n > 0));
    let n_val = ((split[1] * n as f64).round() as usize).min(n - n_train);
    let val = idx.split_off(n_train + n_val);
    let test = val; // remainder
    let mut train = idx;
    let val = train.split_off(n_train);
    (train, val, test)
}

/// One Adam state per parameter, with decoupled weight decay applied
/// before the moment update.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
    pub learning_rate: T,
    pub weight_decay: T,
    beta1: T,
    beta2: T,
    epsilon: T,
}

impl<T: Real> Adam<T> {
    pub fn new(dim: usize, config: &TrainConfig) -> Self {
        Adam {
            m: vec![T::zero(); dim],
            v: vec![T::zero(); dim],
            t: 0,
            learning_rate: c(config.learning_rate),
            weight_decay: c(config.weight_decay),
            beta1: c(config.beta1),
            beta2: c(config.beta2),
            epsilon: c(config.epsilon),
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = T::one() - b1.powi(self.t as i32);
        let bc2 = T::one() - b2.powi(self.t as i32);
        let decay = T::one() - self.learning_rate * self.weight_decay;
        for i in 0..params.len() {
            params[i] = params[i] * decay;
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog<T> {
    pub epoch: usize,
    pub train_nll: T,
    pub val_nll: T,
    pub learning_rate: T,
    pub wall_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// parameters with the best validation NLL seen
    pub params: ParamVector<T>,
    pub best_val_nll: T,
    pub log: Vec<EpochLog<T>>,
    pub stats: SolverStats,
    pub lr_recoveries: usize,
}

/// Mean loss over a set of sequences, gradients summed in index order so
/// the result is independent of thread scheduling.
fn batch_loss_grads<T: Real>(
    model: &Model<T>,
    params: &[T],
    seqs: &[&EventSequence<T>],
    offsets: &[T],
    grid_points: usize,
    solver: SolverConfig<T>,
) -> Result<(T, Vec<T>, SolverStats)> {
    let results: Vec<Result<(LossReport<T>, crate::adjoint::Gradients<T>)>> = seqs
        .par_iter()
        .zip(offsets.par_iter())
        .map(|(seq, &offset)| {
            loss_and_grads_offset(model, params, seq, grid_points, offset, solver)
        })
        .collect();
    let mut total = T::zero();
    let mut grads = vec![T::zero(); params.len()];
    let mut stats = SolverStats::default();
    for r in results {
        let (report, g) = r?;
        total = total + report.total;
        for (acc, gi) in grads.iter_mut().zip(&g.wrt_params) {
            *acc = *acc + *gi;
        }
        stats += g.stats;
    }
    let scale = T::one() / c(seqs.len() as f64);
    for gi in grads.iter_mut() {
        *gi = *gi * scale;
    }
    Ok((total * scale, grads, stats))
}

/// Mean NLL over a set of sequences (no gradients).
pub fn mean_nll<T: Real>(
    model: &Model<T>,
    params: &[T],
    seqs: &[&EventSequence<T>],
    grid_points: usize,
    solver: SolverConfig<T>,
) -> Result<T> {
    if seqs.is_empty() {
        return Ok(T::zero());
    }
    let totals: Vec<Result<T>> = seqs
        .par_iter()
        .map(|seq| {
            crate::adjoint::forward_loss(model, params, seq, grid_points, solver)
                .map(|(r, _)| r.total)
        })
        .collect();
    let mut sum = T::zero();
    for t in totals {
        sum = sum + t?;
    }
    Ok(sum / c(seqs.len() as f64))
}

/// Train on the training split, track validation NLL, and return the best
/// parameters. A non-finite loss halves the learning rate and restores
/// the last epoch's parameters, up to three times.
pub fn train<T: Real>(
    model: &Model<T>,
    config: &TrainConfig,
    solver: SolverConfig<T>,
    dataset: &[EventSequence<T>],
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = model.init_params(&mut rng);
    let mut opt = Adam::<T>::new(params.len(), config);
    let val_seqs: Vec<&EventSequence<T>> = val_idx.iter().map(|&i| &dataset[i]).collect();

    let mut best_params = params.clone();
    let mut best_val = T::infinity();
    let mut since_best = 0usize;
    let mut recoveries = 0usize;
    let mut stats = SolverStats::default();
    let mut log = Vec::new();
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut epoch_start_params = params.clone();

    for epoch in 0..config.epochs {
        let t_epoch = std::time::Instant::now();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1 + epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut train_nll = T::zero();
        let mut batches = 0usize;
        let mut failed = false;
        for chunk in order.chunks(config.batch_size) {
            let seqs: Vec<&EventSequence<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
            // Jitter the quadrature grid per sequence per epoch so the
            // compensator estimate has no fixed node gaps the optimizer
            // could hide intensity spikes in.
            let offsets: Vec<T> = (0..seqs.len())
                .map(|_| c::<T>(shuffle_rng.gen::<f64>()))
                .collect();
            match batch_loss_grads(
                model,
                params.as_slice(),
                &seqs,
                &offsets,
                config.grid_points,
                solver,
            ) {
                Ok((loss, grads, s)) if loss.is_finite() && grads.iter().all(|g| g.is_finite()) => {
                    stats += s;
                    train_nll = train_nll + loss;
                    batches += 1;
                    opt.step(params.as_mut_slice(), &grads);
                }
                Ok(_) | Err(Error::NonFiniteLoss(_)) | Err(Error::StepSizeUnderflow { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            recoveries += 1;
            if recoveries > 3 {
                return Err(Error::NonFiniteLoss(
                    "loss stayed non-finite after 3 learning-rate halvings".into(),
                ));
            }
            opt.learning_rate = opt.learning_rate * c(0.5);
            params = epoch_start_params.clone();
            opt.m.iter_mut().for_each(|v| *v = T::zero());
            opt.v.iter_mut().for_each(|v| *v = T::zero());
            opt.t = 0;
            continue;
        }
        epoch_start_params = params.clone();
        let train_nll = train_nll / c(batches.max(1) as f64);
        let val_nll = if val_seqs.is_empty() {
            train_nll
        } else {
            mean_nll(model, params.as_slice(), &val_seqs, config.grid_points, solver)?
        };
        log.push(EpochLog {
            epoch,
            train_nll,
            val_nll,
            learning_rate: opt.learning_rate,
            wall_secs: t_epoch.elapsed().as_secs_f64(),
        });
        if val_nll < best_val {
            best_val = val_nll;
            best_params = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if !best_val.is_finite() {
        best_params = params;
        best_val = log.last().map(|l| l.val_nll).unwrap_or(T::nan());
    }
    Ok(TrainOutcome {
        params: best_params,
        best_val_nll: best_val,
        log,
        stats,
        lr_recoveries: recoveries,
    })
}
