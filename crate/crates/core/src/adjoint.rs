//! Likelihood of an event sequence under the latent hybrid model, and its
//! exact gradients via backward adjoint integration.
//!
//! The loss is
//!   L = -sum_j log lambda(z(tau_j)) - sum_j log p(k_j | z(tau_j))
//!       + integral of lambda over the window,
//! with the integral computed by trapezoidal quadrature on a checkpoint
//! grid unioned with the event times. Intensity and mark terms are always
//! evaluated at the left limit z(tau_j), before the jump.
//!
//! The backward pass integrates the adjoint variables (a, a_theta, a_t)
//! from the window end to its start, recomputing z alongside. At every
//! event time the latent trajectory is discontinuous, so the adjoints are
//! lifted from their right limit to their left limit with the jump map's
//! Jacobian before the event's own loss gradients are injected. Disabling
//! that lift (see [`AdjointOptions`]) breaks gradient correctness whenever
//! the jump network is non-trivial; the option exists as a negative
//! control.

use crate::classical::EventSequence;
use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::ode::{SolverConfig, SolverStats, Stepper};
use crate::scalar::{c, Real};

/// Quadrature nodes over the observation window: a uniform grid unioned
/// with the event times, with trapezoidal weights.
#[derive(Debug, Clone)]
pub struct CheckpointGrid<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
    /// trapezoid weight of the half-cell left of each node
    left_weights: Vec<T>,
    /// trapezoid weight of the half-cell right of each node
    right_weights: Vec<T>,
    /// event index in the source sequence, for nodes that are events
    event_at: Vec<Option<usize>>,
}

impl<T: Real> CheckpointGrid<T> {
    /// `points` uniform nodes spanning [t0, t1] (endpoints included),
    /// unioned with the event times of `seq`.
    pub fn for_sequence(seq: &EventSequence<T>, points: usize) -> Result<Self> {
        Self::for_sequence_offset(seq, points, T::zero())
    }

    /// Like [`Self::for_sequence`], but the uniform interior nodes are
    /// shifted right by `offset` (in [0, 1)) times the grid spacing.
    /// Training jitters this offset so the compensator quadrature has no
    /// fixed gaps for the intensity to hide sharp features in; the
    /// endpoints stay pinned to the window.
    pub fn for_sequence_offset(seq: &EventSequence<T>, points: usize, offset: T) -> Result<Self> {
        if points < 2 {
            return Err(Error::Config("checkpoint grid needs at least 2 nodes".into()));
        }
        if seq.t1 <= seq.t0 {
            return Err(Error::Config("degenerate observation window".into()));
        }
        if offset < T::zero() || offset >= T::one() {
            return Err(Error::Config("grid offset must lie in [0, 1)".into()));
        }
        seq.validate()?;
        let span = seq.t1 - seq.t0;
        let spacing = span / c((points - 1) as f64);
        let mut nodes: Vec<(T, Option<usize>)> = (0..points - 1)
            .map(|i| (seq.t0 + spacing * (c::<T>(i as f64) + offset), None))
            .collect();
        nodes.push((seq.t0, None));
        nodes.push((seq.t1, None));
        for (j, &(t, _)) in seq.events.iter().enumerate() {
            nodes.push((t, Some(j)));
        }
        nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // merge exact duplicates, keeping the event tag
        let mut merged: Vec<(T, Option<usize>)> = Vec::with_capacity(nodes.len());
        for (t, ev) in nodes {
            match merged.last_mut() {
                Some((tp, evp)) if *tp == t => {
                    if ev.is_some() {
                        *evp = ev;
                    }
                }
                _ => merged.push((t, ev)),
            }
        }
        let n = merged.len();
        let mut left_weights = vec![T::zero(); n];
        let mut right_weights = vec![T::zero(); n];
        for i in 0..n {
            if i > 0 {
                left_weights[i] = (merged[i].0 - merged[i - 1].0) * c(0.5);
            }
            if i + 1 < n {
                right_weights[i] = (merged[i + 1].0 - merged[i].0) * c(0.5);
            }
        }
        let weights = left_weights
            .iter()
            .zip(&right_weights)
            .map(|(&l, &r)| l + r)
            .collect();
        Ok(CheckpointGrid {
            nodes: merged.iter().map(|&(t, _)| t).collect(),
            weights,
            left_weights,
            right_weights,
            event_at: merged.into_iter().map(|(_, e)| e).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Weight of the half-cell to the left of node `i`, applied to the
    /// left-limit intensity there; zero at the first node.
    pub fn left_weight(&self, i: usize) -> T {
        self.left_weights[i]
    }

    /// Weight of the half-cell to the right of node `i`, applied to the
    /// right-limit (post-jump) intensity there; zero at the last node.
    pub fn right_weight(&self, i: usize) -> T {
        self.right_weights[i]
    }

    pub fn event_index(&self, node: usize) -> Option<usize> {
        self.event_at[node]
    }
}

/// Trapezoidal weighted sum of intensities on the grid. Exact for
/// piecewise-linear integrands.
pub fn quadrature_compensator<T: Real>(
    intensities: &[T],
    grid: &CheckpointGrid<T>,
) -> Result<T> {
    if grid.len() < 2 {
        return Err(Error::Config("quadrature needs at least 2 nodes".into()));
    }
    if intensities.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            context: "quadrature intensities".into(),
            expected: grid.len(),
            actual: intensities.len(),
        });
    }
    Ok(intensities
        .iter()
        .zip(grid.weights())
        .map(|(&l, &w)| l * w)
        .sum())
}

/// Negative log-likelihood, split into its three components.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LossReport<T> {
    pub total: T,
    /// -sum_j log lambda(z(tau_j))
    pub neg_log_intensity: T,
    /// -sum_j log p(k_j | z(tau_j))
    pub neg_log_mark: T,
    /// integral of lambda over the window
    pub compensator: T,
}

/// Forward pass output: left-limit states at every grid node (events
/// included), which is all the backward pass needs.
pub struct ForwardRecord<T> {
    pub grid: CheckpointGrid<T>,
    /// left-limit state at each grid node
    pub states: Vec<Vec<T>>,
    pub stats: SolverStats,
}

/// Perturb duplicate event timestamps forward by 1e-9 of the window so the
/// ordering becomes strict. Returns how many events were moved.
pub fn enforce_strict_ordering<T: Real>(seq: &mut EventSequence<T>) -> usize {
    let eps = (seq.t1 - seq.t0) * c(1e-9);
    let mut moved = 0;
    for i in 1..seq.events.len() {
        if seq.events[i].0 <= seq.events[i - 1].0 {
            seq.events[i].0 = seq.events[i - 1].0 + eps;
            moved += 1;
        }
    }
    moved
}

/// Integrate the hybrid dynamics over the window, landing exactly on every
/// grid node, recording left-limit states, and assembling the loss.
pub fn forward_loss<T: Real>(
    model: &Model<T>,
    params: &[T],
    seq: &EventSequence<T>,
    grid_points: usize,
    solver: SolverConfig<T>,
) -> Result<(LossReport<T>, ForwardRecord<T>)> {
    forward_loss_on(model, params, seq, CheckpointGrid::for_sequence(seq, grid_points)?, solver)
}

/// [`forward_loss`] over a caller-supplied quadrature grid.
pub fn forward_loss_on<T: Real>(
    model: &Model<T>,
    params: &[T],
    seq: &EventSequence<T>,
    grid: CheckpointGrid<T>,
    solver: SolverConfig<T>,
) -> Result<(LossReport<T>, ForwardRecord<T>)> {
    let n = model.latent_dim();
    let mut field = |_t: T, y: &[T], out: &mut [T]| {
        model.flow(params, y, out).expect("latent width fixed");
    };
    let z0 = model.initial_state(params).to_vec();
    let mut stepper = Stepper::new(&mut field, seq.t0, z0, seq.t1, solver)?;

    let mut states: Vec<Vec<T>> = Vec::with_capacity(grid.len());
    let mut neg_log_intensity = T::zero();
    let mut neg_log_mark = T::zero();
    // The compensator integrand jumps at events, so each event node
    // contributes its left-limit intensity over the half-cell before it
    // and its post-jump intensity over the half-cell after it; folding
    // both into one weight would systematically miss the jump.
    let mut compensator = T::zero();
    for i in 0..grid.len() {
        stepper.advance_to(grid.nodes()[i])?;
        let z_left = stepper.y.clone();
        let lam = model.intensity(params, &z_left)?;
        if let Some(j) = grid.event_index(i) {
            compensator = compensator + grid.left_weight(i) * lam;
            let (_, mark) = &seq.events[j];
            neg_log_intensity = neg_log_intensity - lam.ln();
            neg_log_mark = neg_log_mark - model.mark_logprob(params, &z_left, mark)?;
            // apply the jump; the recorded state stays the left limit
            let dz = model.jump(params, &z_left, mark)?;
            let mut z_next = z_left.clone();
            for (zi, di) in z_next.iter_mut().zip(&dz) {
                *zi = *zi + *di;
            }
            debug_assert_eq!(z_next.len(), n);
            let lam_right = model.intensity(params, &z_next)?;
            compensator = compensator + grid.right_weight(i) * lam_right;
            stepper.set_state(z_next);
        } else {
            compensator = compensator + grid.weights()[i] * lam;
        }
        states.push(z_left);
    }
    let total = neg_log_intensity + neg_log_mark + compensator;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "components ({}, {}, {})",
            neg_log_intensity.to_f64_lossy(),
            neg_log_mark.to_f64_lossy(),
            compensator.to_f64_lossy()
        )));
    }
    Ok((
        LossReport {
            total,
            neg_log_intensity,
            neg_log_mark,
            compensator,
        },
        ForwardRecord {
            grid,
            states,
            stats: stepper.stats,
        },
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct AdjointOptions {
    /// Lift the adjoint across each jump (the correct behavior). `false`
    /// treats the adjoint as continuous at events; kept as a negative
    /// control for tests.
    pub lift_jumps: bool,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        AdjointOptions { lift_jumps: true }
    }
}

/// Gradients of the loss from one backward adjoint sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// dL/dz(t0), width n
    pub wrt_initial_state: Vec<T>,
    /// dL/dtheta over the full flat parameter vector (the initial-state
    /// segment receives dL/dz(t0), since the initial state is learned)
    pub wrt_params: Vec<T>,
    /// dL/dt0 (diagnostic)
    pub wrt_start_time: T,
    /// per-event sensitivities dL/dtau_j (diagnostic)
    pub event_time_grads: Vec<T>,
    /// max deviation between recomputed and recorded states at grid nodes
    pub recompute_deviation: T,
    pub stats: SolverStats,
}

/// Backward adjoint sweep over a recorded forward pass.
pub fn backward_grads<T: Real>(
    model: &Model<T>,
    params: &[T],
    seq: &EventSequence<T>,
    record: &ForwardRecord<T>,
    solver: SolverConfig<T>,
    options: AdjointOptions,
) -> Result<Gradients<T>> {
    let n = model.latent_dim();
    let p = model.param_count();
    let grid = &record.grid;
    if record.states.len() != grid.len() {
        return Err(Error::Internal("forward record does not cover the grid".into()));
    }
    let last = grid.len() - 1;

    // augmented backward state: [z, a, a_theta, a_t]
    let aug_len = n + n + p + 1;
    let mut tmp_dz = vec![T::zero(); n];
    let mut tmp_dtheta = vec![T::zero(); p];
    let mut field = |_t: T, y: &[T], out: &mut [T]| {
        let (z, a) = (&y[..n], &y[n..2 * n]);
        out.iter_mut().for_each(|v| *v = T::zero());
        model
            .flow(params, z, &mut out[..n])
            .expect("latent width fixed");
        tmp_dz.iter_mut().for_each(|v| *v = T::zero());
        tmp_dtheta.iter_mut().for_each(|v| *v = T::zero());
        model
            .flow_vjp(params, z, a, &mut tmp_dz, &mut tmp_dtheta)
            .expect("latent width fixed");
        for i in 0..n {
            out[n + i] = -tmp_dz[i];
        }
        for i in 0..p {
            out[2 * n + i] = -tmp_dtheta[i];
        }
        // a_t carries no flow dependence (the networks never see t)
        out[aug_len - 1] = T::zero();
    };

    // loss-term injections at one node, evaluated at the recorded left limit
    let inject = |node: usize,
                  a: &mut [T],
                  a_theta: &mut [T]|
     -> Result<()> {
        let z_left = &record.states[node];
        // compensator: left-limit intensity covers only the half-cell
        // before an event node (the half-cell after it belongs to the
        // post-jump state and is injected before the lift)
        let w = if grid.event_index(node).is_some() {
            grid.left_weight(node)
        } else {
            grid.weights()[node]
        };
        model.intensity_vjp(params, z_left, w, a, a_theta)?;
        if let Some(j) = grid.event_index(node) {
            let (_, mark) = &seq.events[j];
            let lam = model.intensity(params, z_left)?;
            // -log lambda term
            model.intensity_vjp(params, z_left, -T::one() / lam, a, a_theta)?;
            // -log p term
            model.mark_logprob_vjp(params, z_left, mark, -T::one(), a, a_theta)?;
        }
        Ok(())
    };

    // initialize at t_N from the recorded left limit
    let mut aug = vec![T::zero(); aug_len];
    aug[..n].copy_from_slice(&record.states[last]);
    {
        let (zpart, rest) = aug.split_at_mut(n);
        let (a, rest) = rest.split_at_mut(n);
        let (a_theta, _a_t) = rest.split_at_mut(p);
        let _ = zpart;
        inject(last, a, a_theta)?;
    }
    // a_t(t_N) = a(t_N) . f(z(t_N))
    {
        let mut f0 = vec![T::zero(); n];
        model.flow(params, &record.states[last], &mut f0)?;
        let a = &aug[n..2 * n];
        aug[aug_len - 1] = a.iter().zip(&f0).map(|(&ai, &fi)| ai * fi).sum();
    }

    let mut event_time_grads = vec![T::zero(); seq.events.len()];
    let mut deviation = T::zero();
    let mut stats = SolverStats::default();

    let t_start_all = grid.nodes()[last];
    let t_end_all = grid.nodes()[0];
    let mut stepper = Stepper::new(&mut field, t_start_all, aug, t_end_all, solver)?;

    for node in (0..last).rev() {
        stepper.advance_to(grid.nodes()[node])?;
        let mut aug = stepper.y.clone();
        // recomputed-z consistency against the forward record (right limit
        // at events: the recorded left limit differs by the jump, so only
        // compare at non-event nodes)
        if grid.event_index(node).is_none() {
            for i in 0..n {
                deviation = deviation.max((aug[i] - record.states[node][i]).abs());
            }
        }
        {
            let (zpart, rest) = aug.split_at_mut(n);
            let (a, rest) = rest.split_at_mut(n);
            let (a_theta, _a_t) = rest.split_at_mut(p);
            if let Some(j) = grid.event_index(node) {
                let z_left = &record.states[node];
                let (_, mark) = &seq.events[j];
                // compensator half-cell right of the event, attached to
                // the post-jump state, so inject it before the lift
                model.intensity_vjp(params, zpart, grid.right_weight(node), a, a_theta)?;
                // sensitivity of the loss to the jump time (diagnostic):
                // a(tau+) . f(z(tau+)) before the lift ...
                let mut f_right = vec![T::zero(); n];
                model.flow(params, zpart, &mut f_right)?;
                let right_rate: T = a.iter().zip(&f_right).map(|(&ai, &fi)| ai * fi).sum();
                // reverse the jump: restore the recorded left limit
                zpart.copy_from_slice(z_left);
                if options.lift_jumps {
                    // a(tau) = a(tau+) + a(tau+) . dw/dz, likewise a_theta;
                    // dw/dtau = 0 since the jump net never sees t
                    let a_right = a.to_vec();
                    model.jump_vjp(params, z_left, mark, &a_right, a, a_theta)?;
                }
                // ... minus a(tau) . f(z(tau)) after the lift
                let mut f_left = vec![T::zero(); n];
                model.flow(params, z_left, &mut f_left)?;
                let left_rate: T = a.iter().zip(&f_left).map(|(&ai, &fi)| ai * fi).sum();
                event_time_grads[j] = left_rate - right_rate;
            }
            inject(node, a, a_theta)?;
        }
        stepper.set_state(aug);
    }
    stats += stepper.stats;

    let aug = stepper.y.clone();
    let wrt_initial_state = aug[n..2 * n].to_vec();
    let mut wrt_params = aug[2 * n..2 * n + p].to_vec();
    // the initial state is a learnable segment: route dL/dz(t0) into it
    let init_range = model.initial_state_range();
    for (slot, &g) in wrt_params[init_range].iter_mut().zip(&wrt_initial_state) {
        *slot = *slot + g;
    }
    Ok(Gradients {
        wrt_initial_state,
        wrt_params,
        wrt_start_time: aug[aug_len - 1],
        event_time_grads,
        recompute_deviation: deviation,
        stats,
    })
}

/// Convenience: loss and gradients in one call.
pub fn loss_and_grads<T: Real>(
    model: &Model<T>,
    params: &[T],
    seq: &EventSequence<T>,
    grid_points: usize,
    solver: SolverConfig<T>,
) -> Result<(LossReport<T>, Gradients<T>)> {
    let (report, record) = forward_loss(model, params, seq, grid_points, solver)?;
    let grads = backward_grads(model, params, seq, &record, solver, AdjointOptions::default())?;
    Ok((report, grads))
}

/// [`loss_and_grads`] with the uniform quadrature nodes shifted by
/// `offset` (in [0, 1)) grid spacings.
pub fn loss_and_grads_offset<T: Real>(
    model: &Model<T>,
    params: &[T],
    seq: &EventSequence<T>,
    grid_points: usize,
    offset: T,
    solver: SolverConfig<T>,
) -> Result<(LossReport<T>, Gradients<T>)> {
    let grid = CheckpointGrid::for_sequence_offset(seq, grid_points, offset)?;
    let (report, record) = forward_loss_on(model, params, seq, grid, solver)?;
    let grads = backward_grads(model, params, seq, &record, solver, AdjointOptions::default())?;
    Ok((report, grads))
}
