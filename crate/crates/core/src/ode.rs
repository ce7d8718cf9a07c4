//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 5(4)).
//!
//! The solver never steps across a mandatory landing time: the step is
//! clamped so the trajectory lands on it bit-exactly. This matters for
//! hybrid trajectories, where interpolating across a jump would be invalid,
//! so dense output is deliberately not provided.

use crate::error::{Error, Result};
use crate::scalar::{c, Real};

/// Dormand-Prince 5(4) coefficients.
mod tableau {
    pub const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    pub const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    /// 5th-order combination weights. The last entry is 11/84 nudged by one
    /// rounding unit so the weights sum to exactly 1.0 in sequential f64
    /// summation (skipping the zero), making quadrature of constants exact.
    pub const B: [f64; 6] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        0.13095238095238115,
    ];
    /// b5 - b4, for the embedded error estimate.
    pub const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(bound(deserialize = "T: Real + serde::Deserialize<'de>"))]
pub struct SolverConfig<T> {
    #[serde(default = "default_rtol")]
    pub rtol: T,
    #[serde(default = "default_atol")]
    pub atol: T,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_rtol<T: Real>() -> T {
    c(1e-6)
}

fn default_atol<T: Real>() -> T {
    c(1e-8)
}

fn default_max_steps() -> usize {
    100_000_000
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            rtol: c(1e-6),
            atol: c(1e-8),
            max_steps: 100_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub field_evals: usize,
}

impl std::ops::AddAssign for SolverStats {
    fn add_assign(&mut self, rhs: Self) {
        self.accepted += rhs.accepted;
        self.rejected += rhs.rejected;
        self.field_evals += rhs.field_evals;
    }
}

pub struct OdeProblem<'a, T> {
    pub field: &'a mut dyn FnMut(T, &[T], &mut [T]),
    pub y0: Vec<T>,
    pub t_start: T,
    pub t_end: T,
    pub config: SolverConfig<T>,
    /// Sorted along the integration direction; every time is landed on
    /// exactly and its state recorded.
    pub landing_times: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    /// Landing times, in integration order (t_end appended if absent).
    pub times: Vec<T>,
    /// State at each landing time.
    pub states: Vec<Vec<T>>,
    pub stats: SolverStats,
}

impl<T: Real> Trajectory<T> {
    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("trajectory has final state")
    }
}

/// One raw 5th-order step, no error control. Exposed for order tests.
pub fn fixed_step<T: Real>(
    field: &mut dyn FnMut(T, &[T], &mut [T]),
    t: T,
    y: &[T],
    dt: T,
) -> Vec<T> {
    let n = y.len();
    let mut k: Vec<Vec<T>> = Vec::with_capacity(7);
    let mut k1 = vec![T::zero(); n];
    field(t, y, &mut k1);
    k.push(k1);
    for s in 0..6 {
        let mut ys = y.to_vec();
        for (j, kj) in k.iter().enumerate() {
            let a: T = c(tableau::A[s][j]);
            if a != T::zero() {
                for i in 0..n {
                    ys[i] = ys[i] + dt * a * kj[i];
                }
            }
        }
        let mut ks = vec![T::zero(); n];
        field(t + dt * c(tableau::C[s]), &ys, &mut ks);
        k.push(ks);
    }
    combine_solution(y, &k, dt)
}

/// y + dt * sum_j B[j] k_j, with the per-component weighted sum accumulated
/// before the single multiply-add into y.
fn combine_solution<T: Real>(y: &[T], k: &[Vec<T>], dt: T) -> Vec<T> {
    let n = y.len();
    let mut out = y.to_vec();
    for i in 0..n {
        let mut incr = T::zero();
        for (j, kj) in k.iter().take(6).enumerate() {
            let b: T = c(tableau::B[j]);
            if b != T::zero() {
                incr = incr + b * kj[i];
            }
        }
        out[i] = out[i] + dt * incr;
    }
    out
}

/// Incremental adaptive stepper. Drives both plain integration and the
/// event-interleaved simulation loop, which needs single-step granularity.
pub struct Stepper<'a, T> {
    field: &'a mut dyn FnMut(T, &[T], &mut [T]),
    pub t: T,
    pub y: Vec<T>,
    dir: T,
    h: T,
    span: T,
    rtol: T,
    atol: T,
    err_old: T,
    k1: Option<Vec<T>>,
    pub stats: SolverStats,
    max_steps: usize,
}

impl<'a, T: Real> Stepper<'a, T> {
    pub fn new(
        field: &'a mut dyn FnMut(T, &[T], &mut [T]),
        t0: T,
        y0: Vec<T>,
        t_end: T,
        config: SolverConfig<T>,
    ) -> Result<Self> {
        let span = (t_end - t0).abs();
        let dir = if t_end >= t0 { T::one() } else { -T::one() };
        let mut s = Stepper {
            field,
            t: t0,
            y: y0,
            dir,
            h: T::zero(),
            span: if span > T::zero() { span } else { T::one() },
            rtol: config.rtol,
            atol: config.atol,
            err_old: c(1e-4),
            k1: None,
            stats: SolverStats::default(),
            max_steps: config.max_steps,
        };
        s.h = s.initial_step()?;
        Ok(s)
    }

    fn eval(&mut self, t: T, y: &[T], out: &mut [T]) -> Result<()> {
        (self.field)(t, y, out);
        self.stats.field_evals += 1;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDerivative { t: t.to_f64_lossy() });
        }
        Ok(())
    }

    /// Classical automatic initial-step selection from the field magnitude.
    fn initial_step(&mut self) -> Result<T> {
        let n = self.y.len();
        let mut f0 = vec![T::zero(); n];
        let (t0, y0) = (self.t, self.y.clone());
        self.eval(t0, &y0, &mut f0)?;
        let (atol, rtol) = (self.atol, self.rtol);
        let sc = move |yi: T| atol + rtol * yi.abs();
        let d0 = (y0.iter().map(|&v| (v / sc(v)).powi(2)).sum::<T>() / c(n as f64)).sqrt();
        let d1 = (y0
            .iter()
            .zip(&f0)
            .map(|(&yv, &fv)| (fv / sc(yv)).powi(2))
            .sum::<T>()
            / c(n as f64))
        .sqrt();
        let h0 = if d0 < c(1e-5) || d1 < c(1e-5) {
            c(1e-6)
        } else {
            c::<T>(0.01) * d0 / d1
        };
        let mut y1 = y0.clone();
        for i in 0..n {
            y1[i] = y1[i] + h0 * self.dir * f0[i];
        }
        let mut f1 = vec![T::zero(); n];
        self.eval(t0 + h0 * self.dir, &y1, &mut f1)?;
        let d2 = (f0
            .iter()
            .zip(&f1)
            .zip(&y0)
            .map(|((&a, &b), &yv)| ((b - a) / sc(yv)).powi(2))
            .sum::<T>()
            / c(n as f64))
        .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= c(1e-15) {
            (h0 * c(1e-3)).max(c(1e-6))
        } else {
            (c::<T>(0.01) / d1.max(d2)).powf(c(0.2))
        };
        self.k1 = Some(f0);
        Ok((h0 * c(100.0)).min(h1).min(self.span))
    }

    /// Take exactly one accepted step with size at most `h_max` (> 0).
    /// Returns the signed step actually taken. If the step was clamped to
    /// `h_max`, the caller should overwrite `self.t` with its exact target.
    pub fn step_at_most(&mut self, h_max: T) -> Result<T> {
        debug_assert!(h_max > T::zero());
        let n = self.y.len();
        let safety: T = c(0.9);
        loop {
            if self.stats.accepted + self.stats.rejected >= self.max_steps {
                return Err(Error::Internal("solver step budget exhausted".into()));
            }
            let h = self.h.min(h_max);
            if h < c::<T>(1e-12) * self.span {
                return Err(Error::StepSizeUnderflow {
                    t: self.t.to_f64_lossy(),
                });
            }
            let clamped = h >= h_max;
            let dt = h * self.dir;
            // stages (FSAL: reuse k7 of the previous accepted step as k1)
            let k1 = match self.k1.take() {
                Some(k) => k,
                None => {
                    let mut k = vec![T::zero(); n];
                    let (t, y) = (self.t, self.y.clone());
                    self.eval(t, &y, &mut k)?;
                    k
                }
            };
            let mut k: Vec<Vec<T>> = Vec::with_capacity(7);
            k.push(k1);
            for s in 0..5 {
                let mut ys = self.y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a: T = c(tableau::A[s][j]);
                    if a != T::zero() {
                        for i in 0..n {
                            ys[i] = ys[i] + dt * a * kj[i];
                        }
                    }
                }
                let ts = self.t + dt * c(tableau::C[s]);
                let mut ks = vec![T::zero(); n];
                self.eval(ts, &ys, &mut ks)?;
                k.push(ks);
            }
            // FSAL: the 7th stage is evaluated at the 5th-order solution
            let y_new = combine_solution(&self.y, &k, dt);
            let mut k7 = vec![T::zero(); n];
            self.eval(self.t + dt, &y_new, &mut k7)?;
            k.push(k7);
            // embedded error estimate
            let mut err_sq = T::zero();
            for i in 0..n {
                let mut e = T::zero();
                for (j, kj) in k.iter().enumerate() {
                    let ej: T = c(tableau::E[j]);
                    if ej != T::zero() {
                        e = e + ej * kj[i];
                    }
                }
                e = e * dt;
                let sc = self.atol + self.rtol * self.y[i].abs().max(y_new[i].abs());
                err_sq = err_sq + (e / sc).powi(2);
            }
            let err = (err_sq / c(n as f64)).sqrt();

            if err.is_finite() && err <= T::one() {
                // accepted
                self.stats.accepted += 1;
                let err_clip = err.max(c(1e-10));
                let fac11 = err_clip.powf(c(0.17));
                let fac = fac11 * self.err_old.powf(c(-0.04));
                let scale = (safety / fac).max(c(0.2)).min(c(5.0));
                self.err_old = err_clip.max(c(1e-4));
                self.h = h * scale;
                self.t = self.t + dt;
                self.y = y_new;
                self.k1 = Some(k.pop().unwrap());
                return Ok(dt);
            }
            // rejected: shrink and retry
            self.stats.rejected += 1;
            let err_clip = if err.is_finite() { err } else { c(1e10) };
            let fac11 = err_clip.max(c(1e-10)).powf(c(0.17));
            self.h = h * (safety / fac11).max(c(0.2)).min(T::one());
            let _ = clamped;
            // retry from the same point; k1 is still valid
            self.k1 = Some(k.swap_remove(0));
        }
    }

    /// Replace the current state (after a jump); invalidates the FSAL stage.
    pub fn set_state(&mut self, y: Vec<T>) {
        self.y = y;
        self.k1 = None;
    }

    /// Advance with error control until `t_target`, landing on it exactly.
    pub fn advance_to(&mut self, t_target: T) -> Result<()> {
        loop {
            let remaining = (t_target - self.t) * self.dir;
            // a few ulps of slack: accumulated `t + dt` rounding can leave
            // the current time just short of a target it already reached
            let resolution =
                T::epsilon() * c::<T>(8.0) * (self.t.abs().max(t_target.abs()) + self.span);
            if remaining <= resolution {
                self.t = t_target;
                return Ok(());
            }
            let dt = self.step_at_most(remaining)?;
            // a step clamped to the remaining span lands on the target;
            // snap to it so `t + dt` rounding can't leave an ulp residue
            if dt.abs() >= remaining || (t_target - self.t) * self.dir <= T::zero() {
                self.t = t_target;
                return Ok(());
            }
        }
    }
}

/// Integrate an [`OdeProblem`], recording the state at every landing time.
pub fn integrate<T: Real>(problem: OdeProblem<'_, T>) -> Result<Trajectory<T>> {
    let OdeProblem {
        field,
        y0,
        t_start,
        t_end,
        config,
        landing_times,
    } = problem;
    if config.rtol <= T::zero() || config.atol <= T::zero() {
        return Err(Error::Config("solver tolerances must be positive".into()));
    }
    let dir = if t_end >= t_start { T::one() } else { -T::one() };
    let mut landings = landing_times;
    for w in landings.windows(2) {
        if (w[1] - w[0]) * dir <= T::zero() {
            return Err(Error::Config(
                "landing times must be strictly sorted along the integration direction".into(),
            ));
        }
    }
    for &lt in &landings {
        if (lt - t_start) * dir < T::zero() || (t_end - lt) * dir < T::zero() {
            return Err(Error::Config(format!(
                "landing time {} outside the time span",
                lt.to_f64_lossy()
            )));
        }
    }
    if landings.last().copied() != Some(t_end) {
        landings.push(t_end);
    }
    let mut stepper = Stepper::new(field, t_start, y0, t_end, config)?;
    let mut times = Vec::with_capacity(landings.len());
    let mut states = Vec::with_capacity(landings.len());
    for lt in landings {
        stepper.advance_to(lt)?;
        times.push(lt);
        states.push(stepper.y.clone());
    }
    Ok(Trajectory {
        times,
        states,
        stats: stepper.stats,
    })
}
