//! Post-estimation analytics: marginal effects of dummies, distributional
//! shares of random coefficients, and the covariance implied by the
//! Cholesky factor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ChoiceDataset;
use crate::draws::{make_draws, standard_normal_cdf, DrawSettings, DrawTensor};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::likelihood::BoundModel;
use crate::linalg::Matrix;
use crate::model::{ModelSpec, ParamKind, ParamLayout, TermKind};
use crate::scalar::Scalar;

const CHUNK: usize = 64;

/// Population shares of a normal coefficient `N(mean, sd^2)` above and
/// below zero.
pub fn distribution_shares<T: Scalar>(mean: T, sd: T) -> Result<(T, T)> {
    if !(sd > T::zero()) {
        return Err(Error::Argument(format!("standard deviation {sd} must be positive")));
    }
    let below = T::lit(standard_normal_cdf((-mean / sd).as_f64()));
    Ok((T::one() - below, below))
}

/// Pointwise limit of [`distribution_shares`] as the deviation goes to zero.
pub fn degenerate_shares<T: Scalar>(mean: T) -> (T, T) {
    if mean > T::zero() {
        (T::one(), T::zero())
    } else if mean < T::zero() {
        (T::zero(), T::one())
    } else {
        (T::lit(0.5), T::lit(0.5))
    }
}

/// Standard deviation of a random coefficient from its factor row.
pub fn random_param_sd<T: Scalar>(row: &[T]) -> T {
    row.iter().map(|v| *v * *v).sum::<T>().sqrt()
}

/// Pearson correlation from a covariance and two standard deviations.
pub fn correlation_from_covariance<T: Scalar>(cov: T, sd_a: T, sd_b: T) -> T {
    cov / (sd_a * sd_b)
}

/// `V = L L'`, the row-norm standard deviations, and the correlation matrix.
pub fn correlation_matrix<T: Scalar>(cholesky: &Matrix<T>) -> (Matrix<T>, Vec<T>, Matrix<T>) {
    let n = cholesky.dim();
    let v = cholesky.mul_transpose();
    let sd: Vec<T> = (0..n).map(|k| random_param_sd(&cholesky.row(k)[..=k])).collect();
    debug_assert!(sd
        .iter()
        .zip(v.diagonal())
        .all(|(s, d)| (*s - d.sqrt()).abs() <= T::lit(1e-6) * (T::one() + *s)));
    let mut rho = Matrix::zeros(n);
    for j in 0..n {
        for k in 0..n {
            rho[(j, k)] = if j == k {
                T::one()
            } else if sd[j] > T::zero() && sd[k] > T::zero() {
                correlation_from_covariance(v[(j, k)], sd[j], sd[k])
            } else {
                T::zero()
            };
        }
    }
    (v, sd, rho)
}

/// Lower-triangular factor of the correlated block from a packed vector.
pub fn block_factor<T: Scalar>(layout: &ParamLayout, params: &[T]) -> Matrix<T> {
    let m = layout.block_size;
    let mut l = Matrix::zeros(m);
    for p in 0..m {
        for q in 0..=p {
            l[(p, q)] = params[layout.block_index(p, q)];
        }
    }
    l
}

/// Sign-normalized copy of `params`: each factor column is flipped so its
/// diagonal is non-negative and uncorrelated deviations are made positive.
/// The implied covariance is unchanged.
pub fn canonical_params<T: Scalar>(layout: &ParamLayout, params: &[T]) -> Vec<T> {
    let mut out = params.to_vec();
    for (i, kind) in layout.kinds().iter().enumerate() {
        if let ParamKind::StdDev { .. } = kind {
            out[i] = out[i].abs();
        }
    }
    let m = layout.block_size;
    for q in 0..m {
        if params[layout.block_index(q, q)] < T::zero() {
            for p in q..m {
                let i = layout.block_index(p, q);
                out[i] = -out[i];
            }
        }
    }
    out
}

/// Average change in each alternative's simulated probability when
/// variable `var` goes from 0 to 1, holding the draws fixed.
pub fn marginal_effects_with<T: Scalar>(
    model: &BoundModel,
    params: &[T],
    data: &ChoiceDataset<T>,
    draws: &DrawTensor<T>,
    var: usize,
) -> Vec<T> {
    let n_alt = model.n_alternatives();
    let partials: Vec<Vec<T>> = data
        .observations()
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut acc = vec![T::zero(); n_alt];
            let mut x = Vec::new();
            for (j, o) in chunk.iter().enumerate() {
                let n = ci * CHUNK + j;
                let d: &[T] = if model.n_random() == 0 { &[] } else { draws.observation(n) };
                x.clone_from(&o.x);
                x[var] = T::one();
                let on = model.simulated_probabilities(params, &x, d);
                x[var] = T::zero();
                let off = model.simulated_probabilities(params, &x, d);
                for ((a, p1), p0) in acc.iter_mut().zip(on).zip(off) {
                    *a = *a + (p1 - p0);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![T::zero(); n_alt];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t = *t + v;
        }
    }
    let n = T::from_usize_lossy(data.len().max(1));
    total.into_iter().map(|v| v / n).collect()
}

/// Regenerates the draws a fit was estimated with, sized for `n_obs`.
pub fn fit_draws<T: Scalar>(fit: &FitResult<T>, n_obs: usize) -> Result<DrawTensor<T>> {
    let settings = DrawSettings {
        n_draws: fit.draws.n_draws,
        seed: fit.draws.seed,
        skip: fit.draws.skip,
        shuffle: fit.draws.shuffle,
    };
    make_draws(n_obs, &fit.spec, &settings)
}

fn spec_uses_variable(spec: &ModelSpec, variable: &str) -> bool {
    spec.referenced_variables().contains(variable)
}

/// Marginal effect of a dummy used by the fitted spec, per alternative.
pub fn marginal_effect<T: Scalar>(fit: &FitResult<T>, data: &ChoiceDataset<T>, variable: &str) -> Result<Vec<T>> {
    if !spec_uses_variable(&fit.spec, variable) {
        return Err(Error::UnknownName {
            name: variable.to_string(),
            context: "variable of the fitted spec".into(),
        });
    }
    let var = data.variable_index(variable).ok_or_else(|| Error::UnknownName {
        name: variable.to_string(),
        context: "dataset variable".into(),
    })?;
    let model = BoundModel::new(&fit.spec, data.variable_names())?;
    let draws = fit_draws(fit, data.len())?;
    Ok(marginal_effects_with(&model, &fit.estimates, data, &draws, var))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct MarginalEffect<T> {
    pub variable: String,
    /// One entry per alternative, in alternative order.
    pub effects: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct RandomParamSummary<T> {
    pub term: String,
    pub alternative: String,
    pub mean: T,
    pub sd: T,
    pub share_above_zero: T,
    pub share_below_zero: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct CorrelationBlock<T> {
    pub terms: Vec<String>,
    pub cholesky: Vec<Vec<T>>,
    pub covariance: Vec<Vec<T>>,
    pub sd: Vec<T>,
    pub correlation: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct EffectsReport<T> {
    pub alternatives: Vec<String>,
    pub marginal_effects: Vec<MarginalEffect<T>>,
    pub random_parameters: Vec<RandomParamSummary<T>>,
    pub correlation: Option<CorrelationBlock<T>>,
}

fn to_rows<T: Scalar>(m: &Matrix<T>) -> Vec<Vec<T>> {
    (0..m.dim()).map(|i| m.row(i).to_vec()).collect()
}

/// Marginal effects of every variable the model uses, distributional shares
/// of every random term, and the correlation block.
pub fn effects_report<T: Scalar>(fit: &FitResult<T>, data: &ChoiceDataset<T>) -> Result<EffectsReport<T>> {
    let spec = &fit.spec;
    let layout = spec.layout();
    let params = canonical_params(&layout, &fit.estimates);
    let model = BoundModel::new(spec, data.variable_names())?;
    let draws = fit_draws(fit, data.len())?;

    let mut marginal_effects = Vec::new();
    for var in spec.referenced_variables() {
        let j = data.variable_index(var).ok_or_else(|| Error::UnknownName {
            name: var.to_string(),
            context: "dataset variable".into(),
        })?;
        marginal_effects.push(MarginalEffect {
            variable: var.to_string(),
            effects: marginal_effects_with(&model, &fit.estimates, data, &draws, j),
        });
    }

    let factor = block_factor(&layout, &params);
    let (cov, block_sd, rho) = correlation_matrix(&factor);
    let mut random_parameters = Vec::new();
    for t in spec.terms.iter().filter(|t| t.kind == TermKind::Random) {
        let mean = params[layout.index_of(&format!("mean({})", t.name)).expect("mean in layout")];
        let sd = match spec.correlated_block.iter().position(|b| *b == t.name) {
            Some(p) => block_sd[p],
            None => params[layout.index_of(&format!("sd({})", t.name)).expect("sd in layout")].abs(),
        };
        let (above, below) = if sd > T::zero() {
            distribution_shares(mean, sd)?
        } else {
            degenerate_shares(mean)
        };
        random_parameters.push(RandomParamSummary {
            term: t.name.clone(),
            alternative: spec.alternatives[t.alternative].clone(),
            mean,
            sd,
            share_above_zero: above,
            share_below_zero: below,
        });
    }

    let correlation = (layout.block_size > 0).then(|| CorrelationBlock {
        terms: spec.correlated_block.clone(),
        cholesky: to_rows(&factor),
        covariance: to_rows(&cov),
        sd: block_sd.clone(),
        correlation: to_rows(&rho),
    });

    Ok(EffectsReport {
        alternatives: spec.alternatives.clone(),
        marginal_effects,
        random_parameters,
        correlation,
    })
}
