//! Maximum simulated likelihood estimation and asymptotic inference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::ChoiceDataset;
use crate::draws::{make_draws, DrawSettings, DrawTensor};
use crate::error::{Error, Result};
use crate::likelihood::{BoundModel, ParamVector};
use crate::linalg::Matrix;
use crate::model::{ModelSpec, ParamKind};
use crate::optim::{maximize_bfgs, BfgsSettings, StopReason};
use crate::scalar::Scalar;

/// |t| at or above this is reported as significant (two-sided 90%).
pub const SIGNIFICANCE_T: f64 = 1.645;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub tol_g: f64,
    pub tol_f: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// Box guard applied to every parameter.
    pub bound: f64,
    /// Starting value for Cholesky diagonal elements.
    pub initial_sd: f64,
    /// Warm-start fixed coefficients and random means from a plain logit fit.
    pub mnl_prefit: bool,
    /// Explicit starting values by parameter name; these win over the prefit.
    pub start: BTreeMap<String, f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            tol_g: 1e-6,
            tol_f: 1e-8,
            max_iter: 500,
            max_backtracks: 40,
            bound: 50.0,
            initial_sd: 0.5,
            mnl_prefit: true,
            start: BTreeMap::new(),
        }
    }
}

impl OptimizerSettings {
    fn bfgs(&self) -> BfgsSettings {
        BfgsSettings {
            tol_g: self.tol_g,
            tol_f: self.tol_f,
            max_iter: self.max_iter,
            max_backtracks: self.max_backtracks,
            bound: self.bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawConfig {
    pub n_draws: usize,
    pub seed: u64,
    pub skip: usize,
    pub shuffle: bool,
    pub primes: Vec<u64>,
}

/// Which covariance estimator produced the standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    /// Inverse of the negated numerical Hessian.
    Hessian,
    /// Inverse of the outer product of per-observation scores.
    Bhhh,
    /// Both estimators were singular; standard errors are reported as zero.
    Unavailable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FitResult<T> {
    pub spec: ModelSpec,
    pub parameter_names: Vec<String>,
    pub estimates: ParamVector<T>,
    pub std_errors: Vec<T>,
    pub t_stats: Vec<T>,
    pub ll_zero: T,
    pub ll_start: T,
    pub ll_convergence: T,
    pub n_obs: usize,
    pub n_params: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub draws: DrawConfig,
    pub inference: InferenceMethod,
    /// Parameters whose information was singular when inference failed.
    pub singular_params: Vec<String>,
    /// Parameters that ended on the box guard.
    pub at_bound: Vec<String>,
    /// Set when any parameter ended on the box guard or inference failed.
    pub non_identified: bool,
}

impl<T: Scalar> FitResult<T> {
    pub fn estimate(&self, name: &str) -> Option<T> {
        self.parameter_names.iter().position(|n| n == name).map(|i| self.estimates[i])
    }

    pub fn std_error(&self, name: &str) -> Option<T> {
        self.parameter_names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }

    /// Number of parameters with |t| >= 1.645.
    pub fn n_significant(&self) -> usize {
        self.t_stats
            .iter()
            .filter(|t| t.abs() >= T::lit(SIGNIFICANCE_T))
            .count()
    }
}

/// `estimate / std_error`, or zero when the standard error is not positive.
pub fn t_stat<T: Scalar>(estimate: T, std_error: T) -> T {
    if std_error > T::zero() {
        estimate / std_error
    } else {
        T::zero()
    }
}

/// Log-likelihood with every parameter at zero: `-N ln I`.
pub fn null_log_likelihood<T: Scalar>(data: &ChoiceDataset<T>) -> T {
    -T::from_usize_lossy(data.len()) * T::from_usize_lossy(data.n_alternatives()).ln()
}

/// Starting vector: plain-logit warm start, then configured overrides.
pub fn start_values<T: Scalar>(spec: &ModelSpec, data: &ChoiceDataset<T>) -> Result<Vec<T>> {
    let layout = spec.layout();
    let opts = &spec.optimizer;
    let mut start = vec![T::zero(); layout.len()];
    let mut prefit = BTreeMap::new();
    if opts.mnl_prefit && spec.n_random() > 0 {
        let fixed_spec = spec.as_fixed();
        let model = BoundModel::new(&fixed_spec, data.variable_names())?;
        let empty = make_draws(data.len(), &fixed_spec, &DrawSettings { n_draws: 1, ..spec.draws.clone() })?;
        let x0 = vec![T::zero(); model.n_params()];
        if let Ok(out) = maximize_bfgs(&x0, |p| model.log_likelihood_and_gradient(p, data, &empty), &opts.bfgs()) {
            for (name, v) in model.layout().names().iter().zip(out.x) {
                prefit.insert(name.clone(), v);
            }
        }
    }
    for (i, kind) in layout.kinds().iter().enumerate() {
        start[i] = match kind {
            ParamKind::Fixed { term } | ParamKind::RandomMean { term } => {
                prefit.get(term).copied().unwrap_or_else(T::zero)
            }
            k if k.is_cholesky_diagonal() => T::lit(opts.initial_sd),
            _ => T::zero(),
        };
    }
    for (name, v) in &opts.start {
        let i = layout.index_of(name).ok_or_else(|| Error::UnknownName {
            name: name.clone(),
            context: "optimizer start value".into(),
        })?;
        start[i] = T::lit(*v);
    }
    Ok(start)
}

/// Fits `spec` to `data` by maximum simulated likelihood.
pub fn maximize<T: Scalar>(spec: &ModelSpec, data: &ChoiceDataset<T>) -> Result<FitResult<T>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset { dropped: 0 });
    }
    let model = BoundModel::new(spec, data.variable_names())?;
    let draws: DrawTensor<T> = make_draws(data.len(), spec, &spec.draws)?;
    let start = start_values(spec, data)?;
    maximize_from(spec, &model, data, &draws, &start)
}

/// Coefficients beyond this magnitude are probed for divergence.
const ESCAPE_PROBE: f64 = 10.0;

/// Under separation the likelihood keeps rising toward infinity while its
/// gradient vanishes, so the optimizer stops short of the box. Any large
/// coefficient whose move to the bound does not lower the likelihood is
/// placed on the bound.
fn push_escaping_to_bound<T: Scalar>(
    model: &BoundModel,
    data: &ChoiceDataset<T>,
    draws: &DrawTensor<T>,
    bound: f64,
    x: &mut [T],
    value: &mut T,
) -> Result<()> {
    for i in 0..x.len() {
        let v = x[i].as_f64();
        if v.abs() < ESCAPE_PROBE || v.abs() >= bound {
            continue;
        }
        let mut probe = x.to_vec();
        probe[i] = T::lit(bound.copysign(v));
        let ll = model.log_likelihood(&probe, data, draws)?;
        let slack = T::lit(1e-10) * (T::one() + value.abs());
        if ll.is_finite() && ll >= *value - slack {
            x[i] = probe[i];
            *value = ll;
        }
    }
    Ok(())
}

/// Fits from an explicit start vector using pre-built draws.
pub fn maximize_from<T: Scalar>(
    spec: &ModelSpec,
    model: &BoundModel,
    data: &ChoiceDataset<T>,
    draws: &DrawTensor<T>,
    start: &[T],
) -> Result<FitResult<T>> {
    let layout = model.layout();
    let opts = &spec.optimizer;
    let ll_start = model.log_likelihood(start, data, draws)?;
    if !ll_start.is_finite() {
        return Err(Error::Initialization(format!("{ll_start}")));
    }
    let mut out = maximize_bfgs(start, |p| model.log_likelihood_and_gradient(p, data, draws), &opts.bfgs())?;
    push_escaping_to_bound(model, data, draws, opts.bound, &mut out.x, &mut out.value)?;

    let (std_errors, inference, singular_params) = match standard_errors(model, &out.x, data, draws) {
        Ok((se, method)) => (se, method, Vec::new()),
        Err(Error::Inference(names)) => (vec![T::zero(); layout.len()], InferenceMethod::Unavailable, names),
        Err(e) => return Err(e),
    };
    let t_stats = out.x.iter().zip(&std_errors).map(|(e, s)| t_stat(*e, *s)).collect();
    let bound = T::lit(opts.bound);
    let at_bound: Vec<String> = out
        .x
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= bound * T::lit(1.0 - 1e-9))
        .map(|(i, _)| layout.names()[i].clone())
        .collect();
    let non_identified = !at_bound.is_empty() || inference == InferenceMethod::Unavailable;

    Ok(FitResult {
        spec: spec.clone(),
        parameter_names: layout.names().to_vec(),
        estimates: ParamVector::new(out.x, layout)?,
        std_errors,
        t_stats,
        ll_zero: null_log_likelihood(data),
        ll_start,
        ll_convergence: out.value,
        n_obs: data.len(),
        n_params: layout.len(),
        converged: out.reason.converged(),
        stop_reason: out.reason,
        iterations: out.iterations,
        draws: DrawConfig {
            n_draws: draws.settings.n_draws,
            seed: draws.settings.seed,
            skip: draws.settings.skip,
            shuffle: draws.settings.shuffle,
            primes: draws.primes.clone(),
        },
        inference,
        singular_params,
        at_bound,
        non_identified,
    })
}

/// Numerical Hessian of the simulated log-likelihood by central differences
/// of the analytic gradient, symmetrized.
pub fn numerical_hessian<T: Scalar>(
    model: &BoundModel,
    params: &[T],
    data: &ChoiceDataset<T>,
    draws: &DrawTensor<T>,
) -> Result<Matrix<T>> {
    let n = params.len();
    let mut h = Matrix::zeros(n);
    let mut p = params.to_vec();
    for j in 0..n {
        let step = T::lit(1e-5) * params[j].abs().max(T::one());
        p[j] = params[j] + step;
        let gp = model.gradient(&p, data, draws)?;
        p[j] = params[j] - step;
        let gm = model.gradient(&p, data, draws)?;
        p[j] = params[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (step + step);
        }
    }
    h.symmetrize();
    Ok(h)
}

/// Outer product of per-observation scores.
pub fn bhhh_matrix<T: Scalar>(
    model: &BoundModel,
    params: &[T],
    data: &ChoiceDataset<T>,
    draws: &DrawTensor<T>,
) -> Result<Matrix<T>> {
    let scores = model.observation_gradients(params, data, draws)?;
    let n = params.len();
    let mut b = Matrix::zeros(n);
    for s in &scores {
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = b[(i, j)] + s[i] * s[j];
            }
        }
    }
    Ok(b)
}

/// Standard errors from the inverse negated Hessian, falling back to BHHH
/// when the Hessian is not negative definite.
pub fn standard_errors<T: Scalar>(
    model: &BoundModel,
    params: &[T],
    data: &ChoiceDataset<T>,
    draws: &DrawTensor<T>,
) -> Result<(Vec<T>, InferenceMethod)> {
    let n = params.len();
    let mut info = numerical_hessian(model, params, data, draws)?;
    for i in 0..n {
        for j in 0..n {
            info[(i, j)] = -info[(i, j)];
        }
    }
    if let Some(se) = se_from_information(&info) {
        return Ok((se, InferenceMethod::Hessian));
    }
    let bhhh = bhhh_matrix(model, params, data, draws)?;
    if let Some(se) = se_from_information(&bhhh) {
        return Ok((se, InferenceMethod::Bhhh));
    }
    Err(Error::Inference(singular_names(model, &bhhh)))
}

fn se_from_information<T: Scalar>(info: &Matrix<T>) -> Option<Vec<T>> {
    let inv = info.spd_inverse().ok()?;
    let diag = inv.diagonal();
    if diag.iter().all(|v| *v > T::zero() && v.is_finite()) {
        Some(diag.into_iter().map(|v| v.sqrt()).collect())
    } else {
        None
    }
}

fn singular_names<T: Scalar>(model: &BoundModel, info: &Matrix<T>) -> Vec<String> {
    let diag = info.diagonal();
    let scale = diag.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let names = model.layout().names();
    let flat: Vec<String> = diag
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() <= T::lit(1e-12) * scale)
        .map(|(i, _)| names[i].clone())
        .collect();
    if !flat.is_empty() {
        return flat;
    }
    match info.cholesky() {
        Err(pivot) => vec![names[pivot].clone()],
        Ok(_) => names.to_vec(),
    }
}
