//! Feed-forward networks with reverse-mode vector-Jacobian products.
//!
//! An [`Mlp`] only describes the shape of a network; its weights live in a
//! flat parameter slice so that whole-model gradients can be carried as one
//! vector through the backward pass. The flattening order is fixed: for each
//! layer, the weight matrix in row-major order (rows = output units), then
//! the bias vector.

use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use rand::Rng;

/// Activation applied to the final layer. Hidden layers always use CELU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Softplus,
}

/// celu(x) = max(0, x) + min(0, e^x - 1), scale alpha = 1.
#[inline]
pub fn celu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

#[inline]
pub fn celu_deriv<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        x.exp()
    }
}

/// Overflow-safe softplus: log(1 + e^x), linear for large x.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > c(30.0) {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// d/dx softplus = sigmoid.
#[inline]
pub fn softplus_deriv<T: Real>(x: T) -> T {
    sigmoid(x)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Shape descriptor of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    widths: Vec<usize>,
    output: OutputActivation,
}

/// Cached forward sweep: layer inputs and pre-activations, for the VJP.
pub struct ForwardCache<T> {
    /// inputs\[l\] is the input vector of layer l; inputs\[L\] is the final output.
    inputs: Vec<Vec<T>>,
    /// pre\[l\] is the pre-activation of layer l.
    pre: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.inputs.last().expect("cache has output")
    }
}

impl Mlp {
    pub fn new(widths: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("invalid MLP widths {widths:?}")));
        }
        Ok(Mlp { widths, output })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)] per layer.
    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        assert_eq!(out.len(), self.param_count());
        let mut off = 0;
        for w in self.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound: T = (T::one() / c(fan_in as f64)).sqrt();
            let n = fan_in * fan_out + fan_out;
            for slot in &mut out[off..off + n] {
                let u = T::sample_uniform(rng);
                *slot = (u + u - T::one()) * bound;
            }
            off += n;
        }
    }

    fn check_input<T>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::DimensionMismatch {
                context: "mlp input".into(),
                expected: self.input_width(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward evaluation, no cache.
    pub fn forward<T: Real>(&self, params: &[T], x: &[T]) -> Result<Vec<T>> {
        let mut cache = self.forward_cached(params, x)?;
        Ok(cache.inputs.pop().unwrap())
    }

    /// Forward evaluation, caching activations for a later VJP.
    pub fn forward_cached<T: Real>(&self, params: &[T], x: &[T]) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        debug_assert_eq!(params.len(), self.param_count());
        let num_layers = self.num_layers();
        let mut inputs: Vec<Vec<T>> = Vec::with_capacity(num_layers + 1);
        let mut pre: Vec<Vec<T>> = Vec::with_capacity(num_layers);
        inputs.push(x.to_vec());
        let mut off = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let xin = inputs.last().unwrap();
            let mut z = vec![T::zero(); n_out];
            for i in 0..n_out {
                let row = &weights[i * n_in..(i + 1) * n_in];
                let mut acc = bias[i];
                for (wij, xj) in row.iter().zip(xin.iter()) {
                    acc = acc + *wij * *xj;
                }
                z[i] = acc;
            }
            let last = l == num_layers - 1;
            let act: Vec<T> = if last {
                match self.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Softplus => z.iter().map(|&v| softplus(v)).collect(),
                }
            } else {
                z.iter().map(|&v| celu(v)).collect()
            };
            pre.push(z);
            inputs.push(act);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// One backward sweep: returns v . dout/dx and accumulates v . dout/dtheta
    /// into `dtheta` (which must have length `param_count`).
    pub fn vjp_into<T: Real>(
        &self,
        params: &[T],
        cache: &ForwardCache<T>,
        v: &[T],
        dtheta: &mut [T],
    ) -> Result<Vec<T>> {
        if v.len() != self.output_width() {
            return Err(Error::DimensionMismatch {
                context: "mlp cotangent".into(),
                expected: self.output_width(),
                actual: v.len(),
            });
        }
        assert_eq!(dtheta.len(), self.param_count());
        let num_layers = self.num_layers();
        // layer parameter offsets
        let mut offsets = Vec::with_capacity(num_layers);
        let mut off = 0;
        for w in self.widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta: Vec<T> = v.to_vec();
        for l in (0..num_layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let z = &cache.pre[l];
            // chain through this layer's activation
            if l == num_layers - 1 {
                if self.output == OutputActivation::Softplus {
                    for i in 0..n_out {
                        delta[i] = delta[i] * softplus_deriv(z[i]);
                    }
                }
            } else {
                for i in 0..n_out {
                    delta[i] = delta[i] * celu_deriv(z[i]);
                }
            }
            let xin = &cache.inputs[l];
            let po = offsets[l];
            let weights = &params[po..po + n_in * n_out];
            let (dw, db) = dtheta[po..po + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut dx = vec![T::zero(); n_in];
            for i in 0..n_out {
                let di = delta[i];
                db[i] = db[i] + di;
                let wrow = &weights[i * n_in..(i + 1) * n_in];
                let grow = &mut dw[i * n_in..(i + 1) * n_in];
                for j in 0..n_in {
                    grow[j] = grow[j] + di * xin[j];
                    dx[j] = dx[j] + di * wrow[j];
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Convenience wrapper returning fresh (dx, dtheta) vectors.
    pub fn vjp<T: Real>(&self, params: &[T], x: &[T], v: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let cache = self.forward_cached(params, x)?;
        let mut dtheta = vec![T::zero(); self.param_count()];
        let dx = self.vjp_into(params, &cache, v, &mut dtheta)?;
        Ok((dx, dtheta))
    }
}

/// Flat parameter vector with named, contiguous segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    data: Vec<T>,
    segments: Vec<(String, std::ops::Range<usize>)>,
}

impl<T: Real> ParamVector<T> {
    pub fn builder() -> ParamVectorBuilder<T> {
        ParamVectorBuilder {
            data: Vec::new(),
            segments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn segments(&self) -> &[(String, std::ops::Range<usize>)] {
        &self.segments
    }

    pub fn range(&self, name: &str) -> Result<std::ops::Range<usize>> {
        self.segments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::Internal(format!("unknown parameter segment `{name}`")))
    }

    pub fn segment(&self, name: &str) -> Result<&[T]> {
        Ok(&self.data[self.range(name)?])
    }

    /// Replace the flat data, keeping the segment table. Lengths must agree.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::DimensionMismatch {
                context: "param vector data".into(),
                expected: self.data.len(),
                actual: data.len(),
            });
        }
        Ok(ParamVector {
            data,
            segments: self.segments.clone(),
        })
    }
}

pub struct ParamVectorBuilder<T> {
    data: Vec<T>,
    segments: Vec<(String, std::ops::Range<usize>)>,
}

impl<T: Real> ParamVectorBuilder<T> {
    pub fn push_segment(&mut self, name: &str, len: usize) -> std::ops::Range<usize> {
        let start = self.data.len();
        self.data.resize(start + len, T::zero());
        let range = start..start + len;
        self.segments.push((name.to_string(), range.clone()));
        range
    }

    pub fn finish(self) -> ParamVector<T> {
        ParamVector {
            data: self.data,
            segments: self.segments,
        }
    }
}
