//! Held-out evaluation: intensity recovery against a known generator,
//! event-type prediction, and real-valued mark prediction.

use rayon::prelude::*;
use serde::Serialize;

use crate::classical::{true_intensity, ClassicalProcessSpec, EventSequence, Mark};
use crate::dynamics::{MarkSpace, Model};
use crate::error::{Error, Result};
use crate::ode::SolverConfig;
use crate::scalar::{c, Real};

#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricReport<T> {
    /// mean absolute percentage error of the model intensity against the
    /// generating process, averaged over a uniform grid and sequences
    pub intensity_mape: Option<T>,
    /// misclassification rate (%) of argmax type prediction at events
    pub type_error_rate: Option<T>,
    /// mean absolute error of the predicted mixture mean at events
    pub mark_mae: Option<T>,
    /// same error for the running-mean-of-history baseline
    pub baseline_mark_mae: Option<T>,
    /// mean per-sequence negative log-likelihood
    pub nll: Option<T>,
}

/// Model and ground-truth intensity sampled on one sequence's grid.
#[derive(Debug, Clone)]
pub struct IntensityTrace<T> {
    pub times: Vec<T>,
    pub model: Vec<T>,
    pub truth: Vec<T>,
}

/// Drive the latent state through a sequence's true history, sampling the
/// model intensity at `grid_points` uniform times (left limits).
pub fn model_intensity_on_grid<T: Real>(
    model: &Model<T>,
    params: &[T],
    seq: &EventSequence<T>,
    grid_points: usize,
    solver: SolverConfig<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    if grid_points < 2 {
        return Err(Error::Config("intensity grid needs at least 2 points".into()));
    }
    let span = seq.t1 - seq.t0;
    let grid: Vec<T> = (0..grid_points)
        .map(|i| seq.t0 + span * c(i as f64) / c((grid_points - 1) as f64))
        .collect();
    // merge grid times and event times into one landing schedule
    let mut schedule: Vec<(T, Option<usize>)> = grid.iter().map(|&t| (t, None)).collect();
    for (j, &(t, _)) in seq.events.iter().enumerate() {
        schedule.push((t, Some(j)));
    }
    schedule.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| a.1.is_some().cmp(&b.1.is_some()))
    });
    let mut field = |_t: T, y: &[T], out: &mut [T]| {
        model.flow(params, y, out).expect("latent width fixed");
    };
    let z0 = model.initial_state(params).to_vec();
    let mut stepper = crate::ode::Stepper::new(&mut field, seq.t0, z0, seq.t1, solver)?;
    let mut lambdas = Vec::with_capacity(grid_points);
    for (t, ev) in schedule {
        stepper.advance_to(t)?;
        match ev {
            None => lambdas.push(model.intensity(params, &stepper.y)?),
            Some(j) => {
                let dz = model.jump(params, &stepper.y, &seq.events[j].1)?;
                let mut z = stepper.y.clone();
                for (zi, di) in z.iter_mut().zip(&dz) {
                    *zi = *zi + *di;
                }
                stepper.set_state(z);
            }
        }
    }
    Ok((grid, lambdas))
}

/// Per-sequence traces of model vs ground-truth intensity.
pub fn intensity_traces<T: Real>(
    model: &Model<T>,
    params: &[T],
    spec: &ClassicalProcessSpec<T>,
    seqs: &[&EventSequence<T>],
    grid_points: usize,
    solver: SolverConfig<T>,
) -> Result<Vec<IntensityTrace<T>>> {
    seqs.par_iter()
        .map(|seq| {
            let (times, model_vals) =
                model_intensity_on_grid(model, params, seq, grid_points, solver)?;
            let history: Vec<T> = seq.times().collect();
            let truth = times
                .iter()
                .map(|&t| true_intensity(spec, t, &history))
                .collect();
            Ok(IntensityTrace {
                times,
                model: model_vals,
                truth,
            })
        })
        .collect()
}

/// Mean of |model − truth| / truth × 100 over all trace points.
pub fn mape_from_traces<T: Real>(traces: &[IntensityTrace<T>]) -> Result<T> {
    let mut sum = T::zero();
    let mut count = 0usize;
    for trace in traces {
        for (&m, &g) in trace.model.iter().zip(&trace.truth) {
            if g <= T::zero() {
                return Err(Error::Internal("ground-truth intensity not positive".into()));
            }
            sum = sum + (m - g).abs() / g;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("no trace points to average".into()));
    }
    Ok(sum / c(count as f64) * c(100.0))
}

pub fn eval_intensity_mape<T: Real>(
    model: &Model<T>,
    params: &[T],
    spec: &ClassicalProcessSpec<T>,
    seqs: &[&EventSequence<T>],
    grid_points: usize,
    solver: SolverConfig<T>,
) -> Result<T> {
    mape_from_traces(&intensity_traces(model, params, spec, seqs, grid_points, solver)?)
}

/// Intensity recovery of one classical fit against the generating spec,
/// on the same uniform grid — the baseline row for comparisons.
pub fn classical_intensity_mape<T: Real>(
    fitted: &ClassicalProcessSpec<T>,
    spec: &ClassicalProcessSpec<T>,
    seqs: &[&EventSequence<T>],
    grid_points: usize,
) -> Result<T> {
    let mut sum = T::zero();
    let mut count = 0usize;
    for seq in seqs {
        let span = seq.t1 - seq.t0;
        let history: Vec<T> = seq.times().collect();
        for i in 0..grid_points {
            let t = seq.t0 + span * c(i as f64) / c((grid_points - 1) as f64);
            let g = true_intensity(spec, t, &history);
            if g <= T::zero() {
                return Err(Error::Internal("ground-truth intensity not positive".into()));
            }
            let m = true_intensity(fitted, t, &history);
            sum = sum + (m - g).abs() / g;
            count += 1;
        }
    }
    Ok(sum / c(count as f64) * c(100.0))
}

/// Misclassification rate (%) of predicting each event's type by the
/// argmax of per-type intensities at the left-limit state.
pub fn eval_type_error<T: Real>(
    model: &Model<T>,
    params: &[T],
    seqs: &[&EventSequence<T>],
    solver: SolverConfig<T>,
) -> Result<T> {
    if !matches!(model.config().mark_space, MarkSpace::Discrete { .. }) {
        return Err(Error::Config("type prediction needs discrete marks".into()));
    }
    let counts: Vec<Result<(usize, usize)>> = seqs
        .par_iter()
        .map(|seq| {
            let mut field = |_t: T, y: &[T], out: &mut [T]| {
                model.flow(params, y, out).expect("latent width fixed");
            };
            let z0 = model.initial_state(params).to_vec();
            let mut stepper =
                crate::ode::Stepper::new(&mut field, seq.t0, z0, seq.t1, solver)?;
            let mut errors = 0usize;
            for (t, mark) in &seq.events {
                stepper.advance_to(*t)?;
                let per_type = model.per_type_intensities(params, &stepper.y)?;
                let predicted = per_type
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                let actual = match mark {
                    Mark::Type(k) => *k,
                    Mark::Features(_) => {
                        return Err(Error::Schema("feature mark in discrete corpus".into()))
                    }
                };
                if predicted != actual {
                    errors += 1;
                }
                let dz = model.jump(params, &stepper.y, mark)?;
                let mut z = stepper.y.clone();
                for (zi, di) in z.iter_mut().zip(&dz) {
                    *zi = *zi + *di;
                }
                stepper.set_state(z);
            }
            Ok((errors, seq.len()))
        })
        .collect();
    let mut errors = 0usize;
    let mut total = 0usize;
    for r in counts {
        let (e, n) = r?;
        errors += e;
        total += n;
    }
    if total == 0 {
        return Ok(T::zero());
    }
    Ok(c::<T>(errors as f64) / c(total as f64) * c(100.0))
}

/// Mean absolute error of the predicted mixture mean at each event,
/// paired with the running-mean-of-history baseline (which predicts the
/// zero vector before the first event).
pub fn eval_mark_mae<T: Real>(
    model: &Model<T>,
    params: &[T],
    seqs: &[&EventSequence<T>],
    solver: SolverConfig<T>,
) -> Result<(T, T)> {
    let dim = match model.config().mark_space {
        MarkSpace::Continuous { dim, .. } => dim,
        MarkSpace::Discrete { .. } => {
            return Err(Error::Config("mark regression needs continuous marks".into()))
        }
    };
    let sums: Vec<Result<(T, T, usize)>> = seqs
        .par_iter()
        .map(|seq| {
            let mut field = |_t: T, y: &[T], out: &mut [T]| {
                model.flow(params, y, out).expect("latent width fixed");
            };
            let z0 = model.initial_state(params).to_vec();
            let mut stepper =
                crate::ode::Stepper::new(&mut field, seq.t0, z0, seq.t1, solver)?;
            let mut model_abs = T::zero();
            let mut baseline_abs = T::zero();
            let mut seen = 0usize;
            let mut running_sum = vec![T::zero(); dim];
            for (t, mark) in &seq.events {
                let features = match mark {
                    Mark::Features(v) => v,
                    Mark::Type(_) => {
                        return Err(Error::Schema("type mark in continuous corpus".into()))
                    }
                };
                stepper.advance_to(*t)?;
                let mixture = model.mixture_params(params, &stepper.y)?;
                let predicted = mixture.mean();
                for d in 0..dim {
                    model_abs = model_abs + (predicted[d] - features[d]).abs();
                    let baseline = if seen == 0 {
                        T::zero()
                    } else {
                        running_sum[d] / c(seen as f64)
                    };
                    baseline_abs = baseline_abs + (baseline - features[d]).abs();
                    running_sum[d] = running_sum[d] + features[d];
                }
                seen += 1;
                let dz = model.jump(params, &stepper.y, mark)?;
                let mut z = stepper.y.clone();
                for (zi, di) in z.iter_mut().zip(&dz) {
                    *zi = *zi + *di;
                }
                stepper.set_state(z);
            }
            Ok((model_abs, baseline_abs, seen * dim))
        })
        .collect();
    let mut model_abs = T::zero();
    let mut baseline_abs = T::zero();
    let mut count = 0usize;
    for r in sums {
        let (m, b, n) = r?;
        model_abs = model_abs + m;
        baseline_abs = baseline_abs + b;
        count += n;
    }
    if count == 0 {
        return Ok((T::zero(), T::zero()));
    }
    let scale = T::one() / c(count as f64);
    Ok((model_abs * scale, baseline_abs * scale))
}
