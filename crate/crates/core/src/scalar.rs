//! Scalar abstraction: all numerical code is generic over [`Real`],
//! instantiated as `f32` or `f64`. File formats and the CLI pin `f64`.

use rand::Rng;

/// Floating-point scalar used throughout the numerical core.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Draw from U[0, 1).
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Draw from the standard normal distribution.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Real for f32 {
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f32>()
    }
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        normal::sample_f32(rng)
    }
}

impl Real for f64 {
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f64>()
    }
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        normal::sample_f64(rng)
    }
}

/// Marsaglia polar normal sampler, kept local to avoid a wider dependency.
mod normal {
    use rand::Rng;

    pub fn sample_f64<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        loop {
            let u = 2.0 * rng.gen::<f64>() - 1.0;
            let v = 2.0 * rng.gen::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    pub fn sample_f32<R: Rng + ?Sized>(rng: &mut R) -> f32 {
        sample_f64(rng) as f32
    }
}

/// Shorthand for lifting `f64` literals into the generic scalar type.
#[inline]
pub fn c<T: Real>(x: f64) -> T {
    T::from_f64_lossy(x)
}

/// Draw from Exp(rate).
pub fn sample_exponential<T: Real, R: Rng + ?Sized>(rng: &mut R, rate: T) -> T {
    let u = T::sample_uniform(rng);
    // ln(1 - u) is finite since u < 1
    -(T::one() - u).ln() / rate
}
