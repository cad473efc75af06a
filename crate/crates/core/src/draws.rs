//! Quasi-random standard-normal draws from Halton sequences.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::substream;
use crate::scalar::Scalar;

pub const MAX_RANDOM_TERMS: usize = 64;

/// The first 64 primes; random term `k` uses `PRIMES[k]` as its base.
pub const PRIMES: [u64; MAX_RANDOM_TERMS] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307,
    311,
];

// Stream tag for per-observation shuffles.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrawSettings {
    pub n_draws: usize,
    pub seed: u64,
    /// Leading sequence elements discarded before slicing.
    pub skip: usize,
    /// Shuffle draw order within each observation and term.
    pub shuffle: bool,
}

impl Default for DrawSettings {
    fn default() -> Self {
        Self {
            n_draws: 500,
            seed: 0,
            skip: 100,
            shuffle: true,
        }
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Radical inverse of `index` (1-based) in `base`.
fn radical_inverse(base: u64, mut index: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    out
}

/// Elements `skip + 1 ..= skip + count` of the Halton sequence in `base`.
pub fn halton_sequence(base: u64, count: usize, skip: usize) -> Result<Vec<f64>> {
    if !is_prime(base) {
        return Err(Error::Argument(format!("Halton base {base} is not prime")));
    }
    Ok((0..count)
        .map(|i| radical_inverse(base, (skip + i + 1) as u64))
        .collect())
}

/// Standard normal CDF.
pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, refined with one Newton step on the CDF.
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Argument(format!("probability {p} outside (0, 1)")));
    }
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density > 0.0 {
        Ok(z - (standard_normal_cdf(z) - p) / density)
    } else {
        Ok(z)
    }
}

/// Draws indexed `[observation][draw][term]`, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawTensor<T> {
    values: Vec<T>,
    n_obs: usize,
    n_draws: usize,
    n_terms: usize,
    pub settings: DrawSettings,
    pub primes: Vec<u64>,
}

impl<T: Scalar> DrawTensor<T> {
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_obs, self.n_draws, self.n_terms)
    }

    pub fn get(&self, obs: usize, draw: usize, term: usize) -> T {
        self.values[(obs * self.n_draws + draw) * self.n_terms + term]
    }

    /// All draws of one observation, `n_draws * n_terms` values.
    pub fn observation(&self, obs: usize) -> &[T] {
        let width = self.n_draws * self.n_terms;
        &self.values[obs * width..(obs + 1) * width]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Draws for a subset of observations, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.n_draws * self.n_terms);
        for &r in rows {
            values.extend_from_slice(self.observation(r));
        }
        Self {
            values,
            n_obs: rows.len(),
            n_draws: self.n_draws,
            n_terms: self.n_terms,
            settings: self.settings.clone(),
            primes: self.primes.clone(),
        }
    }
}

fn generate<T, F>(n_obs: usize, n_terms: usize, settings: &DrawSettings, map: F) -> Result<DrawTensor<T>>
where
    T: Scalar,
    F: Fn(f64) -> T + Sync,
{
    if settings.n_draws == 0 {
        return Err(Error::Argument("n_draws must be at least 1".into()));
    }
    if n_terms > MAX_RANDOM_TERMS {
        return Err(Error::Capacity {
            requested: n_terms,
            max: MAX_RANDOM_TERMS,
        });
    }
    let r = settings.n_draws;
    let primes: Vec<u64> = PRIMES[..n_terms].to_vec();
    let mut values = vec![T::zero(); n_obs * r * n_terms];
    if n_terms > 0 {
        values
            .par_chunks_mut(r * n_terms)
            .enumerate()
            .for_each(|(obs, chunk)| {
                let mut column = vec![0.0; r];
                for (k, &base) in primes.iter().enumerate() {
                    let start = settings.skip + obs * r;
                    for (i, c) in column.iter_mut().enumerate() {
                        *c = radical_inverse(base, (start + i + 1) as u64);
                    }
                    if settings.shuffle {
                        let mut rng = substream(settings.seed, SHUFFLE_STREAM ^ k as u64, obs as u64);
                        column.shuffle(&mut rng);
                    }
                    for (i, &u) in column.iter().enumerate() {
                        chunk[i * n_terms + k] = map(u);
                    }
                }
            });
    }
    Ok(DrawTensor {
        values,
        n_obs,
        n_draws: r,
        n_terms,
        settings: settings.clone(),
        primes,
    })
}

/// Standard-normal draws for every random term of `spec`.
///
/// Term `k` (declaration order) gets prime base `PRIMES[k]`. Each sequence
/// skips `settings.skip` elements, then observation `n` takes the next
/// `n_draws` elements starting at `n * n_draws`.
pub fn make_draws<T: Scalar>(n_obs: usize, spec: &ModelSpec, settings: &DrawSettings) -> Result<DrawTensor<T>> {
    make_normal_draws(n_obs, spec.n_random(), settings)
}

pub fn make_normal_draws<T: Scalar>(n_obs: usize, n_terms: usize, settings: &DrawSettings) -> Result<DrawTensor<T>> {
    generate(n_obs, n_terms, settings, |u| {
        T::lit(inverse_normal_cdf(u).expect("Halton values lie strictly inside (0, 1)"))
    })
}

/// The same layout as [`make_normal_draws`] before the normal transform.
pub fn make_uniform_draws(n_obs: usize, n_terms: usize, settings: &DrawSettings) -> Result<DrawTensor<f64>> {
    generate(n_obs, n_terms, settings, |u| u)
}
