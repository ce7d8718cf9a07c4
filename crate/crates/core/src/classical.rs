//! Classical point processes: exact generators, conditional intensities,
//! closed-form likelihoods, and maximum-likelihood fitters. These produce
//! the training corpora and the baselines the learned model is judged
//! against.

use crate::error::{Error, Result};
use crate::scalar::{c, sample_exponential, Real};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Event payload: a discrete type id or a real feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Mark<T> {
    Type(usize),
    Features(Vec<T>),
}

/// Ordered marked events on an observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence<T> {
    pub t0: T,
    pub t1: T,
    pub events: Vec<(T, Mark<T>)>,
}

impl<T: Real> EventSequence<T> {
    pub fn empty(t0: T, t1: T) -> Self {
        EventSequence {
            t0,
            t1,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        self.events.iter().map(|(t, _)| *t)
    }

    /// t0 <= tau_1 < ... < tau_J <= t1.
    pub fn validate(&self) -> Result<()> {
        if self.t1 < self.t0 {
            return Err(Error::Schema("window end precedes window start".into()));
        }
        let mut prev = None;
        for &(t, _) in &self.events {
            if t < self.t0 || t > self.t1 {
                return Err(Error::EventOutsideWindow {
                    t: t.to_f64_lossy(),
                    t0: self.t0.to_f64_lossy(),
                    t1: self.t1.to_f64_lossy(),
                });
            }
            if let Some(p) = prev {
                if t <= p {
                    return Err(Error::Schema(format!(
                        "event times not strictly increasing at t = {}",
                        t.to_f64_lossy()
                    )));
                }
            }
            prev = Some(t);
        }
        Ok(())
    }
}

/// Which classical family a spec or fit refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessFamily {
    Poisson,
    HawkesExp,
    HawkesPl,
    SelfCorrecting,
}

/// Ground-truth parameterization of the four classical processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ClassicalProcessSpec<T> {
    /// lambda(t) = rate
    Poisson { rate: T },
    /// lambda(t) = base + excitation * sum e^(-decay (t - tau_j))
    HawkesExp { base: T, excitation: T, decay: T },
    /// lambda(t) = base + excitation * sum kappa(t - tau_j) with the delayed
    /// power-law kernel kappa(x) = 0 for x < delay,
    /// (exponent/delay) (x/delay)^(-exponent-1) otherwise.
    HawkesPl {
        base: T,
        excitation: T,
        exponent: T,
        delay: T,
    },
    /// lambda(t) = e^(growth t - inhibition N(t))
    SelfCorrecting { growth: T, inhibition: T },
}

impl<T: Real> ClassicalProcessSpec<T> {
    pub fn family(&self) -> ProcessFamily {
        match self {
            ClassicalProcessSpec::Poisson { .. } => ProcessFamily::Poisson,
            ClassicalProcessSpec::HawkesExp { .. } => ProcessFamily::HawkesExp,
            ClassicalProcessSpec::HawkesPl { .. } => ProcessFamily::HawkesPl,
            ClassicalProcessSpec::SelfCorrecting { .. } => ProcessFamily::SelfCorrecting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = match *self {
            ClassicalProcessSpec::Poisson { rate } => rate > T::zero(),
            ClassicalProcessSpec::HawkesExp {
                base,
                excitation,
                decay,
            } => base > T::zero() && excitation > T::zero() && decay > T::zero(),
            ClassicalProcessSpec::HawkesPl {
                base,
                excitation,
                exponent,
                delay,
            } => {
                base > T::zero()
                    && excitation > T::zero()
                    && exponent > T::zero()
                    && delay > T::zero()
            }
            ClassicalProcessSpec::SelfCorrecting { growth, inhibition } => {
                growth > T::zero() && inhibition > T::zero()
            }
        };
        if !all_positive {
            return Err(Error::Config(
                "classical process parameters must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Branching ratio >= 1: sequence lengths grow without bound.
    pub fn is_supercritical(&self) -> bool {
        match *self {
            ClassicalProcessSpec::HawkesExp {
                excitation, decay, ..
            } => excitation / decay >= T::one(),
            ClassicalProcessSpec::HawkesPl { excitation, .. } => excitation >= T::one(),
            _ => false,
        }
    }

    /// Flat parameter list, in a fixed per-family order.
    pub fn params(&self) -> Vec<T> {
        match *self {
            ClassicalProcessSpec::Poisson { rate } => vec![rate],
            ClassicalProcessSpec::HawkesExp {
                base,
                excitation,
                decay,
            } => vec![base, excitation, decay],
            ClassicalProcessSpec::HawkesPl {
                base,
                excitation,
                exponent,
                delay,
            } => vec![base, excitation, exponent, delay],
            ClassicalProcessSpec::SelfCorrecting { growth, inhibition } => {
                vec![growth, inhibition]
            }
        }
    }

    pub fn from_params(family: ProcessFamily, p: &[T]) -> Self {
        match family {
            ProcessFamily::Poisson => ClassicalProcessSpec::Poisson { rate: p[0] },
            ProcessFamily::HawkesExp => ClassicalProcessSpec::HawkesExp {
                base: p[0],
                excitation: p[1],
                decay: p[2],
            },
            ProcessFamily::HawkesPl => ClassicalProcessSpec::HawkesPl {
                base: p[0],
                excitation: p[1],
                exponent: p[2],
                delay: p[3],
            },
            ProcessFamily::SelfCorrecting => ClassicalProcessSpec::SelfCorrecting {
                growth: p[0],
                inhibition: p[1],
            },
        }
    }
}

fn power_law_kernel<T: Real>(x: T, exponent: T, delay: T) -> T {
    if x < delay {
        T::zero()
    } else {
        (exponent / delay) * (x / delay).powf(-exponent - T::one())
    }
}

/// Integral of the power-law kernel from 0 to x (closed form).
fn power_law_kernel_integral<T: Real>(x: T, exponent: T, delay: T) -> T {
    if x < delay {
        T::zero()
    } else {
        T::one() - (x / delay).powf(-exponent)
    }
}

/// Exact conditional intensity at time t, given the event times strictly
/// before t (left-continuous: an event at exactly t is excluded).
pub fn true_intensity<T: Real>(spec: &ClassicalProcessSpec<T>, t: T, history: &[T]) -> T {
    let past = history.iter().copied().filter(|&tau| tau < t);
    match *spec {
        ClassicalProcessSpec::Poisson { rate } => rate,
        ClassicalProcessSpec::HawkesExp {
            base,
            excitation,
            decay,
        } => base + excitation * past.map(|tau| (-decay * (t - tau)).exp()).sum::<T>(),
        ClassicalProcessSpec::HawkesPl {
            base,
            excitation,
            exponent,
            delay,
        } => {
            base + excitation
                * past
                    .map(|tau| power_law_kernel(t - tau, exponent, delay))
                    .sum::<T>()
        }
        ClassicalProcessSpec::SelfCorrecting { growth, inhibition } => {
            let n = past.count();
            (growth * t - inhibition * c(n as f64)).exp()
        }
    }
}

/// Exact sampling on [t0, t1] by Ogata thinning with a process-specific
/// majorant. Deterministic given the RNG state. All events carry type 0.
pub fn simulate_classical<T: Real, R: Rng + ?Sized>(
    spec: &ClassicalProcessSpec<T>,
    t0: T,
    t1: T,
    rng: &mut R,
) -> Result<EventSequence<T>> {
    spec.validate()?;
    if t1 < t0 {
        return Err(Error::Config("window end precedes window start".into()));
    }
    let mut times: Vec<T> = Vec::new();
    match *spec {
        ClassicalProcessSpec::Poisson { rate } => {
            let mut t = t0;
            loop {
                t = t + sample_exponential(rng, rate);
                if t > t1 {
                    break;
                }
                times.push(t);
            }
        }
        ClassicalProcessSpec::HawkesExp {
            base,
            excitation,
            decay,
        } => {
            // between events the intensity is non-increasing, so the value
            // just after the last accepted point dominates
            let mut t = t0;
            // sum of e^(-decay (t - tau_j)) maintained recursively
            let mut excite = T::zero();
            loop {
                let majorant = base + excitation * excite;
                let dt = sample_exponential(rng, majorant);
                let tc = t + dt;
                if tc > t1 {
                    break;
                }
                excite = excite * (-decay * dt).exp();
                let lam = base + excitation * excite;
                debug_assert!(lam <= majorant * (T::one() + c(1e-12)));
                t = tc;
                if T::sample_uniform(rng) * majorant < lam {
                    times.push(tc);
                    excite = excite + T::one();
                }
            }
        }
        ClassicalProcessSpec::HawkesPl {
            base,
            excitation,
            exponent,
            delay,
        } => {
            // the kernel switches on at lag `delay`, so refresh a stepwise
            // majorant over short horizons
            let horizon = delay * c(0.5);
            let sup_kernel = |a: T, b: T| -> T {
                // sup of kappa(x) over x in [a, b]
                if b < delay {
                    T::zero()
                } else if a <= delay {
                    exponent / delay
                } else {
                    power_law_kernel(a, exponent, delay)
                }
            };
            let mut t = t0;
            while t < t1 {
                let seg_end = (t + horizon).min(t1);
                let m = base
                    + excitation
                        * times
                            .iter()
                            .map(|&tau| sup_kernel(t - tau, seg_end - tau))
                            .sum::<T>();
                let dt = sample_exponential(rng, m);
                if t + dt > seg_end {
                    t = seg_end;
                    continue;
                }
                let tc = t + dt;
                let lam = true_intensity(spec, tc, &times);
                debug_assert!(lam <= m * (T::one() + c(1e-12)));
                t = tc;
                if T::sample_uniform(rng) * m < lam {
                    times.push(tc);
                }
            }
        }
        ClassicalProcessSpec::SelfCorrecting { growth, inhibition } => {
            // intensity grows between events; majorant is its value at the
            // end of a short horizon
            let horizon = (T::one() / growth).min((t1 - t0).max(c(1e-6)));
            let mut t = t0;
            while t < t1 {
                let seg_end = (t + horizon).min(t1);
                let n = c::<T>(times.len() as f64);
                let m = (growth * seg_end - inhibition * n).exp();
                let dt = sample_exponential(rng, m);
                if t + dt > seg_end {
                    t = seg_end;
                    continue;
                }
                let tc = t + dt;
                let lam = (growth * tc - inhibition * n).exp();
                t = tc;
                if T::sample_uniform(rng) * m < lam {
                    times.push(tc);
                }
            }
        }
    }
    Ok(EventSequence {
        t0,
        t1,
        events: times.into_iter().map(|t| (t, Mark::Type(0))).collect(),
    })
}

/// Negative log-likelihood with the exact (closed-form) compensator.
pub fn classical_nll<T: Real>(spec: &ClassicalProcessSpec<T>, seq: &EventSequence<T>) -> T {
    let times: Vec<T> = seq.times().collect();
    let mut nll = T::zero();
    // event terms, left-continuous
    match *spec {
        ClassicalProcessSpec::HawkesExp {
            base,
            excitation,
            decay,
        } => {
            // recursive accumulation of the excitation sum
            let mut excite = T::zero();
            let mut prev: Option<T> = None;
            for &t in &times {
                if let Some(p) = prev {
                    excite = (excite + T::one()) * (-decay * (t - p)).exp();
                }
                nll = nll - (base + excitation * excite).ln();
                prev = Some(t);
            }
        }
        _ => {
            for (j, &t) in times.iter().enumerate() {
                nll = nll - true_intensity(spec, t, &times[..j]).ln();
            }
        }
    }
    // compensator
    let comp = match *spec {
        ClassicalProcessSpec::Poisson { rate } => rate * (seq.t1 - seq.t0),
        ClassicalProcessSpec::HawkesExp {
            base,
            excitation,
            decay,
        } => {
            base * (seq.t1 - seq.t0)
                + (excitation / decay)
                    * times
                        .iter()
                        .map(|&tau| T::one() - (-decay * (seq.t1 - tau)).exp())
                        .sum::<T>()
        }
        ClassicalProcessSpec::HawkesPl {
            base,
            excitation,
            exponent,
            delay,
        } => {
            base * (seq.t1 - seq.t0)
                + excitation
                    * times
                        .iter()
                        .map(|&tau| power_law_kernel_integral(seq.t1 - tau, exponent, delay))
                        .sum::<T>()
        }
        ClassicalProcessSpec::SelfCorrecting { growth, inhibition } => {
            // piecewise exponential between events
            let mut comp = T::zero();
            let mut lo = seq.t0;
            for (j, &tau) in times.iter().enumerate() {
                let damp = (-inhibition * c::<T>(j as f64)).exp();
                comp = comp + damp * ((growth * tau).exp() - (growth * lo).exp()) / growth;
                lo = tau;
            }
            let damp = (-inhibition * c::<T>(times.len() as f64)).exp();
            comp + damp * ((growth * seq.t1).exp() - (growth * lo).exp()) / growth
        }
    };
    nll + comp
}

/// Result of a maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct FittedSpec<T> {
    pub spec: ClassicalProcessSpec<T>,
    pub nll: T,
    pub converged: bool,
    pub iterations: usize,
}

/// Maximum-likelihood fit of one family to a dataset, by gradient descent
/// on log-parameters (positivity by construction) with backtracking line
/// search and central-difference gradients.
pub fn fit_mle<T: Real>(
    family: ProcessFamily,
    dataset: &[EventSequence<T>],
) -> Result<FittedSpec<T>> {
    if dataset.is_empty() || dataset.iter().all(|s| s.is_empty()) {
        return Err(Error::Config(
            "MLE needs at least one nonempty sequence".into(),
        ));
    }
    let num_events: usize = dataset.iter().map(|s| s.len()).sum();
    let scale = c::<T>(num_events as f64);
    // mean NLL per event keeps the optimization landscape O(1)
    let objective = |log_p: &[T]| -> T {
        let p: Vec<T> = log_p.iter().map(|&x| x.exp()).collect();
        let spec = ClassicalProcessSpec::from_params(family, &p);
        dataset.iter().map(|s| classical_nll(&spec, s)).sum::<T>() / scale
    };
    let dim = match family {
        ProcessFamily::Poisson => 1,
        ProcessFamily::HawkesExp => 3,
        ProcessFamily::HawkesPl => 4,
        ProcessFamily::SelfCorrecting => 2,
    };
    // moment-based starting point: match the observed event rate
    let total_window: T = dataset.iter().map(|s| s.t1 - s.t0).sum();
    let mean_rate = c::<T>(num_events as f64) / total_window;
    let mut x: Vec<T> = match family {
        ProcessFamily::Poisson => vec![mean_rate.ln()],
        ProcessFamily::HawkesExp => vec![(mean_rate * c(0.5)).ln(), c::<T>(0.5).ln(), T::zero()],
        ProcessFamily::HawkesPl => vec![
            (mean_rate * c(0.5)).ln(),
            c::<T>(0.5).ln(),
            T::zero(),
            T::zero(),
        ],
        ProcessFamily::SelfCorrecting => vec![c::<T>(0.3).ln(), c::<T>(0.3).ln()],
    };
    debug_assert_eq!(x.len(), dim);

    let grad = |x: &[T]| -> Vec<T> {
        let h: T = c(1e-5);
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] = xp[i] + h;
                xm[i] = xm[i] - h;
                (objective(&xp) - objective(&xm)) / (h + h)
            })
            .collect()
    };

    let max_iters = 2000;
    let mut step: T = c(1e-2);
    let mut fx = objective(&x);
    let mut converged = false;
    let mut iters = 0;
    for it in 0..max_iters {
        iters = it + 1;
        let g = grad(&x);
        let gnorm = g.iter().map(|&v| v * v).sum::<T>().sqrt();
        if gnorm < c(1e-9) {
            converged = true;
            break;
        }
        // backtracking with warm-started step
        let mut accepted = false;
        for _ in 0..40 {
            let xt: Vec<T> = x.iter().zip(&g).map(|(&xi, &gi)| xi - step * gi).collect();
            let ft = objective(&xt);
            if ft.is_finite() && ft < fx {
                x = xt;
                fx = ft;
                step = (step + step).min(c(10.0));
                accepted = true;
                break;
            }
            step = step * c(0.5);
        }
        if !accepted {
            converged = gnorm < c(1e-6);
            break;
        }
    }
    let p: Vec<T> = x.iter().map(|&v| v.exp()).collect();
    let spec = ClassicalProcessSpec::from_params(family, &p);
    let nll: T = dataset.iter().map(|s| classical_nll(&spec, s)).sum();
    Ok(FittedSpec {
        spec,
        nll,
        converged,
        iterations: iters,
    })
}
