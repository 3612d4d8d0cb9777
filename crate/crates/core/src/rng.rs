//! Deterministic counter-based random number generation and the variate
//! samplers used by the simulation experiments.
//!
//! The generator is a keyed counter construction: draw `i` of a stream is
//! `mix64(mix64(c ^ k1) ^ k2)` where `c` walks the Weyl sequence
//! `i * 0x9E3779B97F4A7C15` and `(k1, k2)` are derived from `(seed,
//! stream_id)` by the SplitMix64 finalizer. Distinct stream ids select
//! distinct keyed permutations of the counter, so streams never share
//! state and a `(seed, stream_id)` pair reproduces the same draw sequence
//! on every platform.

use crate::error::{Error, Result};
use crate::special::log_gamma;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer (Steele, Lea & Flood 2014).
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded, splittable random stream. Cheap to copy; each worker owns one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    key1: u64,
    key2: u64,
    counter: u64,
}

impl Rng {
    /// Creates the stream identified by `(seed, stream_id)`.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key1 = mix64(seed.wrapping_add(GOLDEN));
        let key2 = mix64(key1 ^ mix64(stream_id.wrapping_mul(GOLDEN) ^ 0xD1B5_4A32_D192_ED03));
        Rng {
            key1,
            key2,
            counter: 0,
        }
    }

    /// Next raw 64-bit draw.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter.wrapping_mul(GOLDEN);
        self.counter += 1;
        mix64(mix64(c ^ self.key1) ^ self.key2)
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in the open interval `(0, 1)`.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box–Muller; consumes two uniforms).
    pub fn next_standard_normal(&mut self) -> f64 {
        let u1 = self.next_open01();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

fn check_finite(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::domain(format!("{name} must be finite, got {value}")));
    }
    Ok(())
}

/// Draws from Gamma(shape, rate) in the shape–rate parametrization.
///
/// Marsaglia–Tsang squeeze/rejection for shape ≥ 1; shapes below 1 are
/// boosted to shape + 1 and scaled by `U^(1/shape)`.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut Rng) -> Result<f64> {
    check_finite("shape", shape)?;
    check_finite("rate", rate)?;
    if shape <= 0.0 || rate <= 0.0 {
        return Err(Error::domain(format!(
            "gamma sampler requires shape > 0 and rate > 0, got shape={shape}, rate={rate}"
        )));
    }
    if shape < 1.0 {
        let boost = rng.next_open01().powf(1.0 / shape);
        return Ok(boost * sample_gamma(shape + 1.0, rate, rng)?);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z = rng.next_standard_normal();
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u = rng.next_open01();
        if u < 1.0 - 0.0331 * z * z * z * z
            || u.ln() < 0.5 * z * z + d * (1.0 - v3 + v3.ln())
        {
            return Ok(d * v3 / rate);
        }
    }
}

/// Draws from Poisson(mean): sequential inversion below mean 10, the PTRS
/// transformed-rejection method of Hörmann (1993) above.
pub fn sample_poisson(mean: f64, rng: &mut Rng) -> Result<u32> {
    check_finite("mean", mean)?;
    if mean < 0.0 {
        return Err(Error::domain(format!(
            "poisson sampler requires mean >= 0, got {mean}"
        )));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    if mean > 1e9 {
        return Err(Error::domain(format!(
            "poisson sampler supports mean <= 1e9, got {mean}"
        )));
    }
    if mean < 10.0 {
        // Inversion by sequential search on the cdf.
        let mut x = 0u32;
        let mut p = (-mean).exp();
        let mut cdf = p;
        let u = rng.next_f64();
        while u > cdf {
            x += 1;
            p *= mean / f64::from(x);
            cdf += p;
            if x > 10_000 {
                break; // u in the far tail beyond f64 resolution
            }
        }
        return Ok(x);
    }
    // PTRS: transformed rejection with squeeze.
    let b = 0.931 + 2.53 * mean.sqrt();
    let a = -0.059 + 0.024_83 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    let ln_mean = mean.ln();
    loop {
        let u = rng.next_f64() - 0.5;
        let v = rng.next_f64();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return Ok(k as u32);
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if (v * inv_alpha / (a / (us * us) + b)).ln()
            <= k * ln_mean - mean - log_gamma(k + 1.0)?
        {
            return Ok(k as u32);
        }
    }
}

/// Draws from the lognormal law `exp(Normal(mu, sigma^2))`.
pub fn sample_lognormal(mu: f64, sigma: f64, rng: &mut Rng) -> Result<f64> {
    check_finite("mu", mu)?;
    check_finite("sigma", sigma)?;
    if sigma <= 0.0 {
        return Err(Error::domain(format!(
            "lognormal sampler requires sigma > 0, got {sigma}"
        )));
    }
    Ok((mu + sigma * rng.next_standard_normal()).exp())
}

/// Draws from the inverse-Gaussian law IG(mu, lam) with mean `mu`
/// (Michael–Schucany–Haas transformation).
pub fn sample_inverse_gaussian(mu: f64, lam: f64, rng: &mut Rng) -> Result<f64> {
    check_finite("mu", mu)?;
    check_finite("lam", lam)?;
    if mu <= 0.0 || lam <= 0.0 {
        return Err(Error::domain(format!(
            "inverse-Gaussian sampler requires mu > 0 and lam > 0, got mu={mu}, lam={lam}"
        )));
    }
    let z = rng.next_standard_normal();
    let y = z * z;
    let x = mu + mu * mu * y / (2.0 * lam)
        - mu / (2.0 * lam) * (4.0 * mu * lam * y + mu * mu * y * y).sqrt();
    let u = rng.next_f64();
    if u <= mu / (mu + x) {
        Ok(x)
    } else {
        Ok(mu * mu / x)
    }
}
