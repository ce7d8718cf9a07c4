//! The learnable hybrid-system maps over the split latent state
//! z = (c, h): continuous flow, event-triggered jump, total intensity, and
//! the mark distribution. Each map comes with a hand-written VJP so the
//! backward adjoint pass can consume exact gradients.
//!
//! Conventions: the internal state c evolves on a sphere (its derivative is
//! orthogonalized against c); the event memory h decays between events and
//! is the only block a jump touches. All trajectories are left-continuous;
//! the networks see only z, never t explicitly.

use crate::classical::{EventSequence, Mark};
use crate::error::{Error, Result};
use crate::nn::{softplus, softplus_deriv, Mlp, OutputActivation, ParamVector};
use crate::ode::{SolverConfig, Stepper};
use crate::scalar::{c, sample_exponential, Real};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Guard for the orthogonal projection near c = 0, where the sphere
/// constraint is vacuous and the raw MLP output passes through.
const PROJECTION_GUARD: f64 = 1e-12;

/// Floor on mixture standard deviations, to keep densities bounded.
const STDEV_FLOOR: f64 = 1e-3;

/// Simulation aborts once the intensity exceeds this.
const INTENSITY_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkSpace {
    /// One-hot marks over `num_types` event types.
    Discrete { num_types: usize },
    /// Real feature vectors of dimension `dim`, modeled by a Gaussian
    /// mixture with `components` components.
    Continuous { dim: usize, components: usize },
}

impl MarkSpace {
    pub fn mark_width(&self) -> usize {
        match *self {
            MarkSpace::Discrete { num_types } => num_types,
            MarkSpace::Continuous { dim, .. } => dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            MarkSpace::Discrete { num_types } => num_types >= 1,
            MarkSpace::Continuous { dim, components } => dim >= 1 && components >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("degenerate mark space".into()))
        }
    }
}

/// Architecture of the four networks. Hidden widths are explicit per
/// network; one hidden layer of 20 units is the default everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the internal state c.
    pub n_internal: usize,
    /// Width of the event memory h.
    pub n_memory: usize,
    #[serde(default = "default_hidden")]
    pub hidden_flow: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_decay: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_jump: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_intensity: Vec<usize>,
    pub mark_space: MarkSpace,
}

fn default_hidden() -> Vec<usize> {
    vec![20]
}

impl ModelConfig {
    pub fn latent_dim(&self) -> usize {
        self.n_internal + self.n_memory
    }
}

/// Gaussian mixture read off the intensity head at one latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<T> {
    pub weights: Vec<T>,
    /// component-major: means[g] has length `dim`
    pub means: Vec<Vec<T>>,
    pub stdevs: Vec<Vec<T>>,
}

impl<T: Real> MixtureParams<T> {
    /// Mean of the mixture, the point prediction for a mark.
    pub fn mean(&self) -> Vec<T> {
        let d = self.means[0].len();
        let mut out = vec![T::zero(); d];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for i in 0..d {
                out[i] = out[i] + *w * mu[i];
            }
        }
        out
    }
}

/// Split latent state. Stored flat as [c, h]; this view names the blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub internal: Vec<T>,
    pub memory: Vec<T>,
}

impl<T: Real> LatentState<T> {
    pub fn from_flat(config: &ModelConfig, z: &[T]) -> Self {
        LatentState {
            internal: z[..config.n_internal].to_vec(),
            memory: z[config.n_internal..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut z = self.internal.clone();
        z.extend_from_slice(&self.memory);
        z
    }
}

/// The model: four network shapes plus the parameter layout. Parameters
/// themselves live in a flat [`ParamVector`], so the whole model is a pure
/// function of (params, inputs) and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    flow_net: Mlp,
    decay_net: Mlp,
    jump_net: Mlp,
    head_net: Mlp,
    flow_range: Range<usize>,
    decay_range: Range<usize>,
    jump_range: Range<usize>,
    head_range: Range<usize>,
    init_range: Range<usize>,
    _scalar: std::marker::PhantomData<T>,
}

pub const SEG_FLOW: &str = "flow_net";
pub const SEG_DECAY: &str = "decay_net";
pub const SEG_JUMP: &str = "jump_net";
pub const SEG_HEAD: &str = "intensity_head";
pub const SEG_INIT: &str = "initial_state";

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.mark_space.validate()?;
        if config.n_internal == 0 || config.n_memory == 0 {
            return Err(Error::Config("latent blocks must be non-empty".into()));
        }
        let n = config.latent_dim();
        let mk = |input: usize, hidden: &[usize], output: usize| -> Result<Mlp> {
            let mut widths = vec![input];
            widths.extend_from_slice(hidden);
            widths.push(output);
            Mlp::new(widths, OutputActivation::Identity)
        };
        let head_out = match config.mark_space {
            MarkSpace::Discrete { num_types } => num_types,
            MarkSpace::Continuous { dim, components } => 1 + components + 2 * components * dim,
        };
        let flow_net = mk(n, &config.hidden_flow, config.n_internal)?;
        let decay_net = mk(n, &config.hidden_decay, config.n_memory)?;
        let jump_net = mk(
            config.n_internal + config.mark_space.mark_width(),
            &config.hidden_jump,
            config.n_memory,
        )?;
        let head_net = mk(n, &config.hidden_intensity, head_out)?;

        let mut builder = ParamVector::<T>::builder();
        let flow_range = builder.push_segment(SEG_FLOW, flow_net.param_count());
        let decay_range = builder.push_segment(SEG_DECAY, decay_net.param_count());
        let jump_range = builder.push_segment(SEG_JUMP, jump_net.param_count());
        let head_range = builder.push_segment(SEG_HEAD, head_net.param_count());
        let init_range = builder.push_segment(SEG_INIT, n);
        let _ = builder.finish();
        Ok(Model {
            config,
            flow_net,
            decay_net,
            jump_net,
            head_net,
            flow_range,
            decay_range,
            jump_range,
            head_range,
            init_range,
            _scalar: std::marker::PhantomData,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    pub fn param_count(&self) -> usize {
        self.init_range.end
    }

    /// Fresh parameter vector with the model's segment table.
    pub fn zero_params(&self) -> ParamVector<T> {
        let mut b = ParamVector::<T>::builder();
        b.push_segment(SEG_FLOW, self.flow_net.param_count());
        b.push_segment(SEG_DECAY, self.decay_net.param_count());
        b.push_segment(SEG_JUMP, self.jump_net.param_count());
        b.push_segment(SEG_HEAD, self.head_net.param_count());
        b.push_segment(SEG_INIT, self.latent_dim());
        b.finish()
    }

    /// Seeded initialization. The initial internal state is a random unit
    /// vector (the sphere radius is itself learned through this segment);
    /// the initial event memory starts at zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector<T> {
        let mut pv = self.zero_params();
        let p = pv.as_mut_slice();
        self.flow_net.init_params(rng, &mut p[self.flow_range.clone()]);
        self.decay_net
            .init_params(rng, &mut p[self.decay_range.clone()]);
        self.jump_net.init_params(rng, &mut p[self.jump_range.clone()]);
        self.head_net.init_params(rng, &mut p[self.head_range.clone()]);
        let n1 = self.config.n_internal;
        let init = &mut p[self.init_range.clone()];
        let mut norm_sq = T::zero();
        for slot in init.iter_mut().take(n1) {
            let v = T::sample_standard_normal(rng);
            *slot = v;
            norm_sq = norm_sq + v * v;
        }
        let norm = norm_sq.sqrt().max(c(1e-6));
        for slot in init.iter_mut().take(n1) {
            *slot = *slot / norm;
        }
        // Keep the initial total intensity at softplus(0) regardless of the
        // number of event types: with m per-type softplus outputs the total
        // would otherwise start at ~0.69*m, and training first has to
        // deflate every head before it can learn anything else.
        if let MarkSpace::Discrete { num_types } = self.config.mark_space {
            if num_types > 1 {
                let target = softplus(T::zero()) / c(num_types as f64);
                let bias = (target.exp() - T::one()).ln();
                let head = self.head_range.clone();
                for i in 0..num_types {
                    p[head.end - 1 - i] = bias;
                }
            }
        }
        pv
    }

    pub fn initial_state<'a>(&self, params: &'a [T]) -> &'a [T] {
        &params[self.init_range.clone()]
    }

    pub fn initial_state_range(&self) -> Range<usize> {
        self.init_range.clone()
    }

    fn check_latent(&self, z: &[T]) -> Result<()> {
        if z.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "latent state".into(),
                expected: self.latent_dim(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// One-hot or pass-through encoding of a mark.
    pub fn encode_mark(&self, mark: &Mark<T>) -> Result<Vec<T>> {
        match (&self.config.mark_space, mark) {
            (MarkSpace::Discrete { num_types }, Mark::Type(k)) => {
                if *k >= *num_types {
                    return Err(Error::Schema(format!(
                        "mark type {k} out of range (m = {num_types})"
                    )));
                }
                let mut v = vec![T::zero(); *num_types];
                v[*k] = T::one();
                Ok(v)
            }
            (MarkSpace::Continuous { dim, .. }, Mark::Features(f)) => {
                if f.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        context: "mark features".into(),
                        expected: *dim,
                        actual: f.len(),
                    });
                }
                Ok(f.clone())
            }
            _ => Err(Error::Schema(
                "mark kind does not match the model's mark space".into(),
            )),
        }
    }

    // ---- flow -----------------------------------------------------------

    /// dz/dt at z: dc/dt is the flow MLP output orthogonalized against c,
    /// dh/dt = -softplus(decay MLP(z)) * h elementwise.
    pub fn flow(&self, params: &[T], z: &[T], out: &mut [T]) -> Result<()> {
        self.check_latent(z)?;
        let n1 = self.config.n_internal;
        let g = self.flow_net.forward(&params[self.flow_range.clone()], z)?;
        let cvec = &z[..n1];
        let s: T = cvec.iter().map(|&v| v * v).sum();
        if s > c(PROJECTION_GUARD) {
            let u: T = g.iter().zip(cvec).map(|(&gi, &ci)| gi * ci).sum();
            let p = u / s;
            for i in 0..n1 {
                out[i] = g[i] - p * cvec[i];
            }
        } else {
            out[..n1].copy_from_slice(&g);
        }
        let d = self.decay_net.forward(&params[self.decay_range.clone()], z)?;
        for (i, &di) in d.iter().enumerate() {
            out[n1 + i] = -softplus(di) * z[n1 + i];
        }
        Ok(())
    }

    /// VJP of the flow: given a cotangent on dz/dt, accumulate the z
    /// cotangent into `dz` and the parameter cotangent into `dtheta`
    /// (full-length, only the flow and decay segments are touched).
    pub fn flow_vjp(
        &self,
        params: &[T],
        z: &[T],
        cot: &[T],
        dz: &mut [T],
        dtheta: &mut [T],
    ) -> Result<()> {
        self.check_latent(z)?;
        let n1 = self.config.n_internal;
        let n2 = self.config.n_memory;
        let flow_params = &params[self.flow_range.clone()];
        let decay_params = &params[self.decay_range.clone()];
        let vc = &cot[..n1];
        let vh = &cot[n1..];
        let cvec = &z[..n1];
        let hvec = &z[n1..];

        // c block: dc = g - (g.c / s) c
        let g_cache = self.flow_net.forward_cached(flow_params, z)?;
        let g = g_cache.output().to_vec();
        let s: T = cvec.iter().map(|&v| v * v).sum();
        let cot_g: Vec<T>;
        if s > c(PROJECTION_GUARD) {
            let u: T = g.iter().zip(cvec).map(|(&gi, &ci)| gi * ci).sum();
            let vc_dot_c: T = vc.iter().zip(cvec).map(|(&a, &b)| a * b).sum();
            cot_g = (0..n1).map(|i| vc[i] - cvec[i] * vc_dot_c / s).collect();
            // direct dependence of the projection on c
            for j in 0..n1 {
                dz[j] = dz[j] - vc_dot_c * g[j] / s - u * vc[j] / s
                    + (u + u) * vc_dot_c * cvec[j] / (s * s);
            }
        } else {
            cot_g = vc.to_vec();
        }
        let dz_from_flow = self.flow_net.vjp_into(
            flow_params,
            &g_cache,
            &cot_g,
            &mut dtheta[self.flow_range.clone()],
        )?;
        for (o, v) in dz.iter_mut().zip(&dz_from_flow) {
            *o = *o + *v;
        }

        // h block: dh = -softplus(d) * h
        let d_cache = self.decay_net.forward_cached(decay_params, z)?;
        let d = d_cache.output().to_vec();
        let mut cot_d = vec![T::zero(); n2];
        for i in 0..n2 {
            dz[n1 + i] = dz[n1 + i] - softplus(d[i]) * vh[i];
            cot_d[i] = -hvec[i] * vh[i] * softplus_deriv(d[i]);
        }
        let dz_from_decay = self.decay_net.vjp_into(
            decay_params,
            &d_cache,
            &cot_d,
            &mut dtheta[self.decay_range.clone()],
        )?;
        for (o, v) in dz.iter_mut().zip(&dz_from_decay) {
            *o = *o + *v;
        }
        Ok(())
    }

    // ---- jump -----------------------------------------------------------

    /// State jump at an event: the c block is untouched, the h block gets
    /// the jump MLP applied to (c, encoded mark).
    pub fn jump(&self, params: &[T], z: &[T], mark: &Mark<T>) -> Result<Vec<T>> {
        self.check_latent(z)?;
        let n1 = self.config.n_internal;
        let k = self.encode_mark(mark)?;
        let mut x = z[..n1].to_vec();
        x.extend_from_slice(&k);
        let dh = self.jump_net.forward(&params[self.jump_range.clone()], &x)?;
        let mut dz = vec![T::zero(); self.latent_dim()];
        dz[n1..].copy_from_slice(&dh);
        Ok(dz)
    }

    /// VJP of the jump map wrt (z, theta); the mark is data.
    pub fn jump_vjp(
        &self,
        params: &[T],
        z: &[T],
        mark: &Mark<T>,
        cot: &[T],
        dz: &mut [T],
        dtheta: &mut [T],
    ) -> Result<()> {
        self.check_latent(z)?;
        let n1 = self.config.n_internal;
        let k = self.encode_mark(mark)?;
        let mut x = z[..n1].to_vec();
        x.extend_from_slice(&k);
        let jump_params = &params[self.jump_range.clone()];
        let cache = self.jump_net.forward_cached(jump_params, &x)?;
        let dx = self.jump_net.vjp_into(
            jump_params,
            &cache,
            &cot[n1..],
            &mut dtheta[self.jump_range.clone()],
        )?;
        for i in 0..n1 {
            dz[i] = dz[i] + dx[i];
        }
        Ok(())
    }

    // ---- intensity and marks -------------------------------------------

    fn head_raw(&self, params: &[T], z: &[T]) -> Result<Vec<T>> {
        self.head_net.forward(&params[self.head_range.clone()], z)
    }

    /// Total conditional intensity (softplus, strictly positive).
    pub fn intensity(&self, params: &[T], z: &[T]) -> Result<T> {
        self.check_latent(z)?;
        let raw = self.head_raw(params, z)?;
        Ok(match self.config.mark_space {
            MarkSpace::Discrete { .. } => raw.iter().map(|&r| softplus(r)).sum(),
            MarkSpace::Continuous { .. } => softplus(raw[0]),
        })
    }

    /// Per-type intensities (discrete mark space only).
    pub fn per_type_intensities(&self, params: &[T], z: &[T]) -> Result<Vec<T>> {
        self.check_latent(z)?;
        match self.config.mark_space {
            MarkSpace::Discrete { .. } => {
                Ok(self.head_raw(params, z)?.iter().map(|&r| softplus(r)).collect())
            }
            MarkSpace::Continuous { .. } => Err(Error::Schema(
                "per-type intensities are only defined for discrete marks".into(),
            )),
        }
    }

    /// VJP of the total intensity wrt (z, theta), scaled by `cot`.
    pub fn intensity_vjp(
        &self,
        params: &[T],
        z: &[T],
        cot: T,
        dz: &mut [T],
        dtheta: &mut [T],
    ) -> Result<()> {
        self.check_latent(z)?;
        let head_params = &params[self.head_range.clone()];
        let cache = self.head_net.forward_cached(head_params, z)?;
        let raw = cache.output().to_vec();
        let cot_raw: Vec<T> = match self.config.mark_space {
            MarkSpace::Discrete { .. } => {
                raw.iter().map(|&r| cot * softplus_deriv(r)).collect()
            }
            MarkSpace::Continuous { .. } => {
                let mut v = vec![T::zero(); raw.len()];
                v[0] = cot * softplus_deriv(raw[0]);
                v
            }
        };
        let dx = self.head_net.vjp_into(
            head_params,
            &cache,
            &cot_raw,
            &mut dtheta[self.head_range.clone()],
        )?;
        for (o, v) in dz.iter_mut().zip(&dx) {
            *o = *o + *v;
        }
        Ok(())
    }

    /// Gaussian mixture parameters at z (continuous mark space only).
    pub fn mixture_params(&self, params: &[T], z: &[T]) -> Result<MixtureParams<T>> {
        let (dim, components) = match self.config.mark_space {
            MarkSpace::Continuous { dim, components } => (dim, components),
            MarkSpace::Discrete { .. } => {
                return Err(Error::Schema(
                    "mixture parameters are only defined for continuous marks".into(),
                ))
            }
        };
        let raw = self.head_raw(params, z)?;
        let (logits, rest) = raw[1..].split_at(components);
        let (mean_raw, stdev_raw) = rest.split_at(components * dim);
        let weights = softmax(logits);
        let means: Vec<Vec<T>> = (0..components)
            .map(|g| mean_raw[g * dim..(g + 1) * dim].to_vec())
            .collect();
        let stdevs: Vec<Vec<T>> = (0..components)
            .map(|g| {
                stdev_raw[g * dim..(g + 1) * dim]
                    .iter()
                    .map(|&r| softplus(r) + c(STDEV_FLOOR))
                    .collect()
            })
            .collect();
        Ok(MixtureParams {
            weights,
            means,
            stdevs,
        })
    }

    /// log p(k | z): log type probability (discrete, induced by the
    /// per-type intensities) or Gaussian-mixture log density (continuous).
    pub fn mark_logprob(&self, params: &[T], z: &[T], mark: &Mark<T>) -> Result<T> {
        self.check_latent(z)?;
        match (&self.config.mark_space, mark) {
            (MarkSpace::Discrete { num_types }, Mark::Type(k)) => {
                if *k >= *num_types {
                    return Err(Error::Schema(format!("mark type {k} out of range")));
                }
                let lam = self.per_type_intensities(params, z)?;
                let total: T = lam.iter().copied().sum();
                Ok((lam[*k] / total).ln())
            }
            (MarkSpace::Continuous { .. }, Mark::Features(k)) => {
                let mix = self.mixture_params(params, z)?;
                Ok(mixture_log_density(&mix, k))
            }
            _ => Err(Error::Schema(
                "mark kind does not match the model's mark space".into(),
            )),
        }
    }

    /// VJP of `cot * mark_logprob` wrt (z, theta).
    pub fn mark_logprob_vjp(
        &self,
        params: &[T],
        z: &[T],
        mark: &Mark<T>,
        cot: T,
        dz: &mut [T],
        dtheta: &mut [T],
    ) -> Result<()> {
        self.check_latent(z)?;
        let head_params = &params[self.head_range.clone()];
        let cache = self.head_net.forward_cached(head_params, z)?;
        let raw = cache.output().to_vec();
        let mut cot_raw = vec![T::zero(); raw.len()];
        match (&self.config.mark_space, mark) {
            (MarkSpace::Discrete { .. }, Mark::Type(k)) => {
                // log p = log softplus(raw_k) - log sum softplus(raw_i)
                let lam: Vec<T> = raw.iter().map(|&r| softplus(r)).collect();
                let total: T = lam.iter().copied().sum();
                for i in 0..raw.len() {
                    let mut g = -softplus_deriv(raw[i]) / total;
                    if i == *k {
                        g = g + softplus_deriv(raw[i]) / lam[i];
                    }
                    cot_raw[i] = cot * g;
                }
            }
            (MarkSpace::Continuous { dim, components }, Mark::Features(k)) => {
                let (dim, components) = (*dim, *components);
                let mix = self.mixture_params(params, z)?;
                let logp = mixture_log_density(&mix, k);
                // responsibilities
                let resp: Vec<T> = (0..components)
                    .map(|g| (component_log_density(&mix, g, k) - logp).exp())
                    .collect();
                // weight logits (softmax): grad = r_g - w_g
                for g in 0..components {
                    cot_raw[1 + g] = cot * (resp[g] - mix.weights[g]);
                }
                let mean_off = 1 + components;
                let stdev_off = mean_off + components * dim;
                for g in 0..components {
                    for i in 0..dim {
                        let sd = mix.stdevs[g][i];
                        let delta = k[i] - mix.means[g][i];
                        cot_raw[mean_off + g * dim + i] = cot * resp[g] * delta / (sd * sd);
                        let dsd = resp[g] * (delta * delta / (sd * sd * sd) - T::one() / sd);
                        let raw_sd = raw[stdev_off + g * dim + i];
                        cot_raw[stdev_off + g * dim + i] = cot * dsd * softplus_deriv(raw_sd);
                    }
                }
            }
            _ => {
                return Err(Error::Schema(
                    "mark kind does not match the model's mark space".into(),
                ))
            }
        }
        let dx = self.head_net.vjp_into(
            head_params,
            &cache,
            &cot_raw,
            &mut dtheta[self.head_range.clone()],
        )?;
        for (o, v) in dz.iter_mut().zip(&dx) {
            *o = *o + *v;
        }
        Ok(())
    }

    /// Sample a mark from p(k | z).
    pub fn sample_mark<R: Rng + ?Sized>(
        &self,
        params: &[T],
        z: &[T],
        rng: &mut R,
    ) -> Result<Mark<T>> {
        match self.config.mark_space {
            MarkSpace::Discrete { .. } => {
                let lam = self.per_type_intensities(params, z)?;
                let total: T = lam.iter().copied().sum();
                let u = T::sample_uniform(rng) * total;
                let mut acc = T::zero();
                for (k, &l) in lam.iter().enumerate() {
                    acc = acc + l;
                    if u < acc {
                        return Ok(Mark::Type(k));
                    }
                }
                Ok(Mark::Type(lam.len() - 1))
            }
            MarkSpace::Continuous { .. } => {
                let mix = self.mixture_params(params, z)?;
                let u = T::sample_uniform(rng);
                let mut acc = T::zero();
                let mut comp = mix.weights.len() - 1;
                for (g, &w) in mix.weights.iter().enumerate() {
                    acc = acc + w;
                    if u < acc {
                        comp = g;
                        break;
                    }
                }
                let f: Vec<T> = mix.means[comp]
                    .iter()
                    .zip(&mix.stdevs[comp])
                    .map(|(&mu, &sd)| mu + sd * T::sample_standard_normal(rng))
                    .collect();
                Ok(Mark::Features(f))
            }
        }
    }

    // ---- simulation -----------------------------------------------------

    /// Sample one event sequence from the model on [t0, t1] by integrating
    /// the hybrid dynamics with Ogata thinning. The majorant is refreshed
    /// at every accepted solver step (twice the current intensity), and a
    /// pending proposal is discarded whenever the intensity outruns it.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        params: &[T],
        t0: T,
        t1: T,
        solver: SolverConfig<T>,
        rng: &mut R,
    ) -> Result<EventSequence<T>> {
        if t1 < t0 {
            return Err(Error::Config("window end precedes window start".into()));
        }
        let mut seq = EventSequence::empty(t0, t1);
        if t1 == t0 {
            return Ok(seq);
        }
        let mut field = |_t: T, y: &[T], out: &mut [T]| {
            self.flow(params, y, out).expect("latent width fixed");
        };
        let z0 = self.initial_state(params).to_vec();
        let mut stepper = Stepper::new(&mut field, t0, z0, t1, solver)?;
        loop {
            if stepper.t >= t1 {
                break;
            }
            let lam = self.intensity(params, &stepper.y)?;
            if lam > c(INTENSITY_CAP) {
                return Err(Error::IntensityOverflow {
                    lambda: lam.to_f64_lossy(),
                    t: stepper.t.to_f64_lossy(),
                });
            }
            let majorant = lam + lam;
            let proposal = stepper.t + sample_exponential(rng, majorant);
            let target = proposal.min(t1);
            let h_max = target - stepper.t;
            if h_max <= T::zero() {
                break;
            }
            let dt = stepper.step_at_most(h_max)?;
            let landed = dt >= h_max;
            if landed {
                stepper.t = target;
            }
            let lam_new = self.intensity(params, &stepper.y)?;
            if lam_new > majorant {
                continue; // majorant violated: refresh and re-propose
            }
            if landed && target == proposal && proposal < t1 {
                if T::sample_uniform(rng) * majorant < lam_new {
                    let mark = self.sample_mark(params, &stepper.y, rng)?;
                    let dz = self.jump(params, &stepper.y, &mark)?;
                    let mut z_next = stepper.y.clone();
                    for (zi, di) in z_next.iter_mut().zip(&dz) {
                        *zi = *zi + *di;
                    }
                    stepper.set_state(z_next);
                    seq.events.push((proposal, mark));
                }
            }
        }
        Ok(seq)
    }
}

fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn component_log_density<T: Real>(mix: &MixtureParams<T>, g: usize, k: &[T]) -> T {
    let half_log_2pi: T = c(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut l = mix.weights[g].ln();
    for i in 0..k.len() {
        let sd = mix.stdevs[g][i];
        let delta = (k[i] - mix.means[g][i]) / sd;
        l = l - half_log_2pi - sd.ln() - delta * delta * c(0.5);
    }
    l
}

/// Log density of the mixture via log-sum-exp over components.
pub fn mixture_log_density<T: Real>(mix: &MixtureParams<T>, k: &[T]) -> T {
    let logs: Vec<T> = (0..mix.weights.len())
        .map(|g| component_log_density(mix, g, k))
        .collect();
    let m = logs.iter().copied().fold(T::neg_infinity(), T::max);
    m + logs.iter().map(|&l| (l - m).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{integrate, OdeProblem};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(mark_space: MarkSpace) -> ModelConfig {
        ModelConfig {
            n_internal: 3,
            n_memory: 2,
            hidden_flow: vec![8],
            hidden_decay: vec![8],
            hidden_jump: vec![8],
            hidden_intensity: vec![8],
            mark_space,
        }
    }

    fn random_model(seed: u64, mark_space: MarkSpace) -> (Model<f64>, ParamVector<f64>) {
        let model = Model::new(small_config(mark_space)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = model.init_params(&mut rng);
        (model, params)
    }

    fn random_z(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect()
    }

    #[test]
    fn flow_is_orthogonal_to_internal_state() {
        let (model, params) = random_model(1, MarkSpace::Discrete { num_types: 3 });
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let z = random_z(&mut rng, 5);
            let mut out = vec![0.0; 5];
            model.flow(params.as_slice(), &z, &mut out).unwrap();
            let dot: f64 = out[..3].iter().zip(&z[..3]).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-9, "dc/dt . c = {dot}");
        }
    }

    #[test]
    fn memory_decay_vanishes_at_zero_memory() {
        let (model, params) = random_model(2, MarkSpace::Discrete { num_types: 2 });
        let z = vec![0.3, -0.1, 0.7, 0.0, 0.0];
        let mut out = vec![0.0; 5];
        model.flow(params.as_slice(), &z, &mut out).unwrap();
        assert_eq!(&out[3..], &[0.0, 0.0]);
    }

    #[test]
    fn memory_decay_rate_is_nonpositive() {
        let (model, params) = random_model(3, MarkSpace::Discrete { num_types: 2 });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let z = random_z(&mut rng, 5);
            let mut out = vec![0.0; 5];
            model.flow(params.as_slice(), &z, &mut out).unwrap();
            for i in 0..2 {
                if z[3 + i] != 0.0 {
                    assert!(out[3 + i] / z[3 + i] <= 0.0, "decay rate positive");
                }
            }
        }
    }

    #[test]
    fn jump_leaves_internal_state_untouched() {
        let (model, params) = random_model(4, MarkSpace::Discrete { num_types: 3 });
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for k in 0..3 {
            let z = random_z(&mut rng, 5);
            let dz = model.jump(params.as_slice(), &z, &Mark::Type(k)).unwrap();
            assert_eq!(&dz[..3], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn zero_jump_net_gives_zero_jump() {
        let model = Model::<f64>::new(small_config(MarkSpace::Discrete { num_types: 2 })).unwrap();
        let params = model.zero_params();
        let z = vec![0.5, -0.2, 0.1, 0.3, -0.4];
        let dz = model.jump(params.as_slice(), &z, &Mark::Type(1)).unwrap();
        assert!(dz.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn intensity_is_strictly_positive() {
        let (model, params) = random_model(5, MarkSpace::Discrete { num_types: 3 });
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let z = random_z(&mut rng, 5);
            assert!(model.intensity(params.as_slice(), &z).unwrap() > 0.0);
        }
    }

    #[test]
    fn total_intensity_is_sum_of_per_type() {
        let (model, params) = random_model(6, MarkSpace::Discrete { num_types: 3 });
        let z = vec![0.1, 0.2, -0.3, 0.4, 0.5];
        let per = model.per_type_intensities(params.as_slice(), &z).unwrap();
        let total = model.intensity(params.as_slice(), &z).unwrap();
        assert_eq!(per.len(), 3);
        assert_relative_eq!(total, per.iter().sum::<f64>(), max_relative = 1e-15);
    }

    #[test]
    fn zero_head_gives_m_log2() {
        let model = Model::<f64>::new(small_config(MarkSpace::Discrete { num_types: 3 })).unwrap();
        let params = model.zero_params();
        let z = vec![0.0; 5];
        let total = model.intensity(params.as_slice(), &z).unwrap();
        assert_relative_eq!(total, 3.0 * 2.0f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn uniform_type_probability() {
        // zero head: all per-type intensities equal, so log p = log(1/m)
        let model = Model::<f64>::new(small_config(MarkSpace::Discrete { num_types: 4 })).unwrap();
        let params = model.zero_params();
        let z = vec![0.2; 5];
        let lp = model
            .mark_logprob(params.as_slice(), &z, &Mark::Type(2))
            .unwrap();
        assert_relative_eq!(lp, (1.0f64 / 4.0).ln(), max_relative = 1e-12);
    }

    #[test]
    fn type_probabilities_sum_to_one() {
        let (model, params) = random_model(7, MarkSpace::Discrete { num_types: 5 });
        let z = vec![0.3, -0.6, 0.2, 0.9, -0.1];
        let total: f64 = (0..5)
            .map(|k| {
                model
                    .mark_logprob(params.as_slice(), &z, &Mark::Type(k))
                    .unwrap()
                    .exp()
            })
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn standard_normal_log_density() {
        let mix = MixtureParams {
            weights: vec![1.0],
            means: vec![vec![0.0]],
            stdevs: vec![vec![1.0]],
        };
        let lp = mixture_log_density(&mix, &[0.0]);
        assert_relative_eq!(lp, -0.5 * (2.0 * std::f64::consts::PI).ln(), max_relative = 1e-12);
        assert_relative_eq!(lp, -0.91894, epsilon = 1e-5);
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let (model, params) = random_model(8, MarkSpace::Continuous { dim: 1, components: 3 });
        let z = vec![0.4, -0.2, 0.1, 0.6, -0.5];
        let mix = model.mixture_params(params.as_slice(), &z).unwrap();
        // trapezoid over a wide bracket
        let (lo, hi, n) = (-30.0, 30.0, 600_000);
        let dx = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * dx;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * mixture_log_density(&mix, &[x]).exp() * dx;
        }
        assert_relative_eq!(integral, 1.0, epsilon = 1e-4);
    }

    fn fd_vjp_check<F>(dim_theta: usize, z: &[f64], analytic: (Vec<f64>, Vec<f64>), f: F)
    where
        F: Fn(&[f64], &[f64]) -> f64,
    {
        // f(params_perturbation, z) is the scalar cot . map
        let h = 1e-5;
        let (dz, dtheta) = analytic;
        for j in 0..z.len() {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[j] += h;
            zm[j] -= h;
            let fd = (f(&vec![0.0; dim_theta], &zp) - f(&vec![0.0; dim_theta], &zm)) / (2.0 * h);
            let scale = fd.abs().max(dz[j].abs()).max(1e-5);
            assert!(
                (fd - dz[j]).abs() / scale < 1e-4,
                "dz[{j}]: {} vs fd {fd}",
                dz[j]
            );
        }
        for j in 0..dim_theta {
            let mut dp = vec![0.0; dim_theta];
            dp[j] = h;
            let mut dm = vec![0.0; dim_theta];
            dm[j] = -h;
            let fd = (f(&dp, z) - f(&dm, z)) / (2.0 * h);
            let scale = fd.abs().max(dtheta[j].abs()).max(1e-5);
            assert!(
                (fd - dtheta[j]).abs() / scale < 1e-4,
                "dtheta[{j}]: {} vs fd {fd}",
                dtheta[j]
            );
        }
    }

    #[test]
    fn flow_vjp_matches_finite_differences() {
        let (model, params) = random_model(20, MarkSpace::Discrete { num_types: 2 });
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = random_z(&mut rng, 5);
        let cot = random_z(&mut rng, 5);
        let mut dz = vec![0.0; 5];
        let mut dtheta = vec![0.0; model.param_count()];
        model
            .flow_vjp(params.as_slice(), &z, &cot, &mut dz, &mut dtheta)
            .unwrap();
        let pc = model.param_count();
        let mref = &model;
        let pref = &params;
        let cref = &cot;
        fd_vjp_check(pc, &z, (dz, dtheta), move |dp, zq| {
            let p: Vec<f64> = pref.as_slice().iter().zip(dp).map(|(a, b)| a + b).collect();
            let mut out = vec![0.0; 5];
            mref.flow(&p, zq, &mut out).unwrap();
            out.iter().zip(cref).map(|(a, b)| a * b).sum()
        });
    }

    #[test]
    fn jump_vjp_matches_finite_differences() {
        let (model, params) = random_model(22, MarkSpace::Discrete { num_types: 3 });
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let z = random_z(&mut rng, 5);
        let cot = random_z(&mut rng, 5);
        let mark = Mark::Type(1);
        let mut dz = vec![0.0; 5];
        let mut dtheta = vec![0.0; model.param_count()];
        model
            .jump_vjp(params.as_slice(), &z, &mark, &cot, &mut dz, &mut dtheta)
            .unwrap();
        let pc = model.param_count();
        let (mref, pref, cref) = (&model, &params, &cot);
        fd_vjp_check(pc, &z, (dz, dtheta), move |dp, zq| {
            let p: Vec<f64> = pref.as_slice().iter().zip(dp).map(|(a, b)| a + b).collect();
            let out = mref.jump(&p, zq, &Mark::Type(1)).unwrap();
            out.iter().zip(cref).map(|(a, b)| a * b).sum()
        });
    }

    #[test]
    fn intensity_vjp_matches_finite_differences() {
        for space in [
            MarkSpace::Discrete { num_types: 3 },
            MarkSpace::Continuous { dim: 2, components: 2 },
        ] {
            let (model, params) = random_model(24, space);
            let mut rng = ChaCha8Rng::seed_from_u64(25);
            let z = random_z(&mut rng, 5);
            let mut dz = vec![0.0; 5];
            let mut dtheta = vec![0.0; model.param_count()];
            model
                .intensity_vjp(params.as_slice(), &z, 1.0, &mut dz, &mut dtheta)
                .unwrap();
            let pc = model.param_count();
            let (mref, pref) = (&model, &params);
            fd_vjp_check(pc, &z, (dz, dtheta), move |dp, zq| {
                let p: Vec<f64> = pref.as_slice().iter().zip(dp).map(|(a, b)| a + b).collect();
                mref.intensity(&p, zq).unwrap()
            });
        }
    }

    #[test]
    fn mark_logprob_vjp_matches_finite_differences() {
        // discrete
        let (model, params) = random_model(26, MarkSpace::Discrete { num_types: 4 });
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let z = random_z(&mut rng, 5);
        let mut dz = vec![0.0; 5];
        let mut dtheta = vec![0.0; model.param_count()];
        model
            .mark_logprob_vjp(params.as_slice(), &z, &Mark::Type(2), 1.0, &mut dz, &mut dtheta)
            .unwrap();
        let pc = model.param_count();
        {
            let (mref, pref) = (&model, &params);
            fd_vjp_check(pc, &z, (dz, dtheta), move |dp, zq| {
                let p: Vec<f64> = pref.as_slice().iter().zip(dp).map(|(a, b)| a + b).collect();
                mref.mark_logprob(&p, zq, &Mark::Type(2)).unwrap()
            });
        }
        // continuous
        let (model, params) = random_model(28, MarkSpace::Continuous { dim: 2, components: 3 });
        let z = random_z(&mut rng, 5);
        let k = Mark::Features(vec![0.7, -0.4]);
        let mut dz = vec![0.0; 5];
        let mut dtheta = vec![0.0; model.param_count()];
        model
            .mark_logprob_vjp(params.as_slice(), &z, &k, 1.0, &mut dz, &mut dtheta)
            .unwrap();
        let pc = model.param_count();
        let (mref, pref) = (&model, &params);
        fd_vjp_check(pc, &z, (dz, dtheta), move |dp, zq| {
            let p: Vec<f64> = pref.as_slice().iter().zip(dp).map(|(a, b)| a + b).collect();
            mref.mark_logprob(&p, zq, &Mark::Features(vec![0.7, -0.4]))
                .unwrap()
        });
    }

    #[test]
    fn sphere_norm_is_conserved_along_flow() {
        let (model, params) = random_model(30, MarkSpace::Discrete { num_types: 2 });
        let z0 = model.initial_state(params.as_slice()).to_vec();
        let r0: f64 = z0[..3].iter().map(|v| v * v).sum::<f64>();
        let mut field = |_t: f64, y: &[f64], out: &mut [f64]| {
            model.flow(params.as_slice(), y, out).unwrap();
        };
        let traj = integrate(OdeProblem {
            field: &mut field,
            y0: z0,
            t_start: 0.0,
            t_end: 20.0,
            config: SolverConfig::default(),
            landing_times: (1..20).map(|i| i as f64).collect(),
        })
        .unwrap();
        for state in &traj.states {
            let r: f64 = state[..3].iter().map(|v| v * v).sum::<f64>();
            assert!((r - r0).abs() < 1e-5, "norm drift {}", (r - r0).abs());
        }
    }

    #[test]
    fn memory_magnitude_never_increases_without_events() {
        let (model, params) = random_model(31, MarkSpace::Discrete { num_types: 2 });
        let mut z0 = model.initial_state(params.as_slice()).to_vec();
        z0[3] = 0.8;
        z0[4] = -0.6;
        let mut field = |_t: f64, y: &[f64], out: &mut [f64]| {
            model.flow(params.as_slice(), y, out).unwrap();
        };
        let traj = integrate(OdeProblem {
            field: &mut field,
            y0: z0.clone(),
            t_start: 0.0,
            t_end: 10.0,
            config: SolverConfig::default(),
            landing_times: (1..10).map(|i| i as f64).collect(),
        })
        .unwrap();
        let mut prev = [z0[3].abs(), z0[4].abs()];
        for state in &traj.states {
            for i in 0..2 {
                let mag = state[3 + i].abs();
                assert!(mag <= prev[i] + 1e-9, "memory grew without an event");
                prev[i] = mag;
            }
        }
    }

    #[test]
    fn simulate_empty_window() {
        let (model, params) = random_model(32, MarkSpace::Discrete { num_types: 2 });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = model
            .simulate(params.as_slice(), 3.0, 3.0, SolverConfig::default(), &mut rng)
            .unwrap();
        assert!(seq.is_empty());
    }

    #[test]
    fn simulate_is_deterministic_per_seed() {
        let (model, params) = random_model(33, MarkSpace::Discrete { num_types: 2 });
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            model
                .simulate(params.as_slice(), 0.0, 20.0, SolverConfig::default(), &mut rng)
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    /// Model rigged to a constant unit intensity: zero parameters except a
    /// head bias solving softplus(b) = 1.
    fn unit_rate_model() -> (Model<f64>, ParamVector<f64>) {
        let config = ModelConfig {
            n_internal: 2,
            n_memory: 2,
            hidden_flow: vec![4],
            hidden_decay: vec![4],
            hidden_jump: vec![4],
            hidden_intensity: vec![4],
            mark_space: MarkSpace::Discrete { num_types: 1 },
        };
        let model = Model::new(config).unwrap();
        let mut params = model.zero_params();
        let head = model.head_range.clone();
        // last bias entry of the head net
        let bias_idx = head.end - 1;
        params.as_mut_slice()[bias_idx] = (std::f64::consts::E - 1.0f64).ln();
        let z = vec![0.0; 4];
        assert_relative_eq!(model.intensity(params.as_slice(), &z).unwrap(), 1.0, max_relative = 1e-12);
        (model, params)
    }

    #[test]
    fn simulate_unit_rate_poisson_statistics() {
        let (model, params) = unit_rate_model();
        let mut total = 0usize;
        let n_seeds = 500;
        for seed in 0..n_seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
            total += model
                .simulate(params.as_slice(), 0.0, 100.0, SolverConfig::default(), &mut rng)
                .unwrap()
                .len();
        }
        let mean = total as f64 / n_seeds as f64;
        assert!((mean - 100.0).abs() < 1.35, "mean count {mean}");
    }

    #[test]
    fn simulated_mark_frequencies_match_type_distribution() {
        let (model, params) = random_model(34, MarkSpace::Discrete { num_types: 3 });
        // sample marks at a fixed state and compare to the induced law
        let z = vec![0.2, -0.1, 0.5, 0.3, -0.2];
        let lam = model.per_type_intensities(params.as_slice(), &z).unwrap();
        let total: f64 = lam.iter().sum();
        let probs: Vec<f64> = lam.iter().map(|l| l / total).collect();
        let n = 20_000;
        let mut counts = [0usize; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..n {
            match model.sample_mark(params.as_slice(), &z, &mut rng).unwrap() {
                Mark::Type(k) => counts[k] += 1,
                _ => unreachable!(),
            }
        }
        for k in 0..3 {
            let emp = counts[k] as f64 / n as f64;
            let sigma = (probs[k] * (1.0 - probs[k]) / n as f64).sqrt();
            assert!(
                (emp - probs[k]).abs() < 3.0 * sigma + 1e-9,
                "type {k}: empirical {emp} vs {}",
                probs[k]
            );
        }
    }
}
