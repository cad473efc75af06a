//! Utilities, logit kernel probabilities, simulated choice probabilities,
//! and the simulated log-likelihood with its analytic gradient.
//!
//! A random term's coefficient for observation `n` and draw `r` is
//!
//! ```text
//! b_nr = mean + sum_s shift_s * z_ns + sum_q L_pq * v_nrq
//! ```
//!
//! where `L` is the lower-triangular factor row belonging to the term
//! (a single diagonal element for uncorrelated terms).

use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ChoiceDataset;
use crate::draws::DrawTensor;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamLayout, TermKind, CONSTANT};
use crate::scalar::Scalar;

/// Observations per reduction chunk. Partial sums are always combined in
/// chunk order, so results do not depend on the thread count.
const CHUNK: usize = 64;

/// Flat parameter values conforming to a [`ParamLayout`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>, layout: &ParamLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch {
                expected: layout.len(),
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "parameter `{}` is not finite",
                layout.name_of(i).unwrap_or("?")
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(layout: &ParamLayout) -> Self {
        Self(vec![T::zero(); layout.len()])
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for ParamVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct FixedSlot {
    alt: usize,
    var: Option<usize>,
    param: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct RandomSlot {
    alt: usize,
    var: Option<usize>,
    mean: usize,
    /// (shifter variable, parameter index)
    shifters: Vec<(usize, usize)>,
    /// (draw column, parameter index), off-diagonals first, diagonal last.
    chol: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TermSlot {
    Fixed(usize),
    Random(usize),
}

/// A spec resolved against a dataset's variable names.
#[derive(Clone, Debug)]
pub struct BoundModel {
    n_alternatives: usize,
    layout: ParamLayout,
    fixed: Vec<FixedSlot>,
    random: Vec<RandomSlot>,
    terms: Vec<TermSlot>,
}

fn resolve_var(name: &str, variables: &[String], context: &str) -> Result<Option<usize>> {
    if name == CONSTANT {
        return Ok(None);
    }
    variables
        .iter()
        .position(|v| v == name)
        .map(Some)
        .ok_or_else(|| Error::UnknownName {
            name: name.to_string(),
            context: context.to_string(),
        })
}

#[inline]
fn value<T: Scalar>(x: &[T], var: Option<usize>) -> T {
    match var {
        Some(j) => x[j],
        None => T::one(),
    }
}

impl BoundModel {
    pub fn new(spec: &ModelSpec, variables: &[String]) -> Result<Self> {
        spec.check()?;
        let layout = spec.layout();
        let mut fixed = Vec::new();
        let mut random = Vec::new();
        let mut terms = Vec::new();
        for t in &spec.terms {
            let var = resolve_var(&t.variable, variables, &format!("variable of term `{}`", t.name))?;
            match t.kind {
                TermKind::Fixed => {
                    terms.push(TermSlot::Fixed(fixed.len()));
                    fixed.push(FixedSlot {
                        alt: t.alternative,
                        var,
                        param: layout.index_of(&t.name).expect("layout contains every fixed term"),
                    });
                }
                TermKind::Random => {
                    let k = random.len();
                    terms.push(TermSlot::Random(k));
                    let mut shifters = Vec::new();
                    for (s_idx, s) in spec.mean_shifters.iter().enumerate() {
                        if s.term == t.name {
                            let v = resolve_var(&s.variable, variables, "mean shifter variable")?
                                .ok_or_else(|| Error::Spec("a mean shifter cannot be the constant".into()))?;
                            shifters.push((v, layout.shifter_offset() + s_idx));
                        }
                    }
                    random.push(RandomSlot {
                        alt: t.alternative,
                        var,
                        mean: layout.mean_offset() + k,
                        shifters,
                        chol: Vec::new(),
                    });
                }
            }
        }
        // Draw column of each random term is its declaration index.
        let random_names: Vec<&str> = spec.random_terms().iter().map(|t| t.name.as_str()).collect();
        let col_of = |name: &str| random_names.iter().position(|n| *n == name).expect("random term");
        let mut next_sd = layout.sd_offset();
        for (k, name) in random_names.iter().enumerate() {
            if let Some(p) = spec.correlated_block.iter().position(|b| b == name) {
                random[k].chol = (0..=p)
                    .map(|q| (col_of(&spec.correlated_block[q]), layout.block_index(p, q)))
                    .collect();
            } else {
                random[k].chol = vec![(k, next_sd)];
                next_sd += 1;
            }
        }
        Ok(Self {
            n_alternatives: spec.n_alternatives(),
            layout,
            fixed,
            random,
            terms,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn n_alternatives(&self) -> usize {
        self.n_alternatives
    }

    pub fn n_random(&self) -> usize {
        self.random.len()
    }

    fn check_shapes<T: Scalar>(&self, params: &[T], data: &ChoiceDataset<T>, draws: &DrawTensor<T>) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::LayoutMismatch {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        if data.n_alternatives() != self.n_alternatives {
            return Err(Error::Argument("dataset and spec disagree on the number of alternatives".into()));
        }
        if self.random.is_empty() {
            return Ok(());
        }
        if draws.n_obs() != data.len() || draws.n_terms() != self.random.len() {
            return Err(Error::Argument(format!(
                "draw tensor shape {:?} does not match {} observations x {} random terms",
                draws.shape(),
                data.len(),
                self.random.len()
            )));
        }
        Ok(())
    }

    /// Draw-independent part of each random coefficient: mean plus shifts.
    fn random_centres<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        self.random
            .iter()
            .map(|s| {
                s.shifters
                    .iter()
                    .fold(params[s.mean], |acc, &(v, p)| acc + params[p] * x[v])
            })
            .collect()
    }

    #[inline]
    fn random_deviation<T: Scalar>(slot: &RandomSlot, params: &[T], draw_row: &[T]) -> T {
        slot.chol
            .iter()
            .fold(T::zero(), |acc, &(col, p)| acc + params[p] * draw_row[col])
    }

    fn fixed_utilities<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        let mut u = vec![T::zero(); self.n_alternatives];
        for f in &self.fixed {
            u[f.alt] = u[f.alt] + params[f.param] * value(x, f.var);
        }
        u
    }

    /// Per-term coefficient values, in spec term order, for one draw.
    pub fn realized_coefficients<T: Scalar>(&self, params: &[T], x: &[T], draw_row: &[T]) -> Vec<T> {
        let centres = self.random_centres(params, x);
        self.terms
            .iter()
            .map(|slot| match *slot {
                TermSlot::Fixed(i) => params[self.fixed[i].param],
                TermSlot::Random(k) => centres[k] + Self::random_deviation(&self.random[k], params, draw_row),
            })
            .collect()
    }

    /// Utilities of every alternative for one draw; the base stays at zero.
    pub fn utilities<T: Scalar>(&self, params: &[T], x: &[T], draw_row: &[T]) -> Vec<T> {
        let mut u = self.fixed_utilities(params, x);
        let centres = self.random_centres(params, x);
        self.add_random_utilities(&mut u, &centres, params, x, draw_row);
        u
    }

    #[inline]
    fn add_random_utilities<T: Scalar>(&self, u: &mut [T], centres: &[T], params: &[T], x: &[T], draw_row: &[T]) {
        for (k, s) in self.random.iter().enumerate() {
            let b = centres[k] + Self::random_deviation(s, params, draw_row);
            u[s.alt] = u[s.alt] + b * value(x, s.var);
        }
    }

    /// Simulated probabilities of every alternative for one observation.
    pub fn simulated_probabilities<T: Scalar>(&self, params: &[T], x: &[T], obs_draws: &[T]) -> Vec<T> {
        let n_terms = self.random.len();
        let r_count = if n_terms == 0 { 1 } else { obs_draws.len() / n_terms };
        let base = self.fixed_utilities(params, x);
        let centres = self.random_centres(params, x);
        let mut acc = vec![T::zero(); self.n_alternatives];
        let mut u = vec![T::zero(); self.n_alternatives];
        let mut p = vec![T::zero(); self.n_alternatives];
        for r in 0..r_count {
            u.copy_from_slice(&base);
            let row = &obs_draws[r * n_terms..(r + 1) * n_terms];
            self.add_random_utilities(&mut u, &centres, params, x, row);
            softmax_into(&u, &mut p);
            for (a, pi) in acc.iter_mut().zip(&p) {
                *a = *a + *pi;
            }
        }
        let rc = T::from_usize_lossy(r_count);
        acc.into_iter().map(|a| a / rc).collect()
    }

    /// Simulated probability of `chosen` for one observation.
    pub fn simulated_probability<T: Scalar>(&self, params: &[T], x: &[T], chosen: usize, obs_draws: &[T]) -> T {
        let mut scratch = ObsScratch::new(self.n_alternatives, 0);
        self.observation_contribution(params, x, chosen, obs_draws, &mut scratch, None)
    }

    /// Returns the simulated probability of `chosen`; when `grad` is given,
    /// adds the gradient of its logarithm into it.
    fn observation_contribution<T: Scalar>(
        &self,
        params: &[T],
        x: &[T],
        chosen: usize,
        obs_draws: &[T],
        scratch: &mut ObsScratch<T>,
        grad: Option<&mut [T]>,
    ) -> T {
        let n_terms = self.random.len();
        let r_count = if n_terms == 0 { 1 } else { obs_draws.len() / n_terms };
        let base = self.fixed_utilities(params, x);
        let centres = self.random_centres(params, x);
        let want_grad = grad.is_some();
        let ObsScratch { u, p, e, c } = scratch;
        if want_grad {
            e.iter_mut().for_each(|v| *v = T::zero());
            c.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v = T::zero()));
            if c.len() != n_terms {
                *c = self.random.iter().map(|s| vec![T::zero(); s.chol.len()]).collect();
            }
        }
        let mut sum_p = T::zero();
        for r in 0..r_count {
            u.copy_from_slice(&base);
            let row = &obs_draws[r * n_terms..(r + 1) * n_terms];
            self.add_random_utilities(u, &centres, params, x, row);
            softmax_into(u, p);
            let pr = p[chosen];
            sum_p = sum_p + pr;
            if want_grad {
                for (i, ei) in e.iter_mut().enumerate() {
                    let ind = if i == chosen { T::one() } else { T::zero() };
                    *ei = *ei + pr * (ind - p[i]);
                }
                for (k, s) in self.random.iter().enumerate() {
                    let ind = if s.alt == chosen { T::one() } else { T::zero() };
                    let w = pr * (ind - p[s.alt]);
                    for (j, &(col, _)) in s.chol.iter().enumerate() {
                        c[k][j] = c[k][j] + w * row[col];
                    }
                }
            }
        }
        if let Some(g) = grad {
            // d ln P / d theta = (1 / sum_r p_r) * sum_r dp_r / d theta
            let scale = T::one() / sum_p;
            for f in &self.fixed {
                g[f.param] = g[f.param] + e[f.alt] * value(x, f.var) * scale;
            }
            for (k, s) in self.random.iter().enumerate() {
                let xk = value(x, s.var) * scale;
                let ek = e[s.alt] * xk;
                g[s.mean] = g[s.mean] + ek;
                for &(v, pidx) in &s.shifters {
                    g[pidx] = g[pidx] + ek * x[v];
                }
                for (j, &(_, pidx)) in s.chol.iter().enumerate() {
                    g[pidx] = g[pidx] + c[k][j] * xk;
                }
            }
        }
        sum_p / T::from_usize_lossy(r_count)
    }

    fn scratch<T: Scalar>(&self) -> ObsScratch<T> {
        let mut s = ObsScratch::new(self.n_alternatives, 0);
        s.c = self.random.iter().map(|r| vec![T::zero(); r.chol.len()]).collect();
        s
    }

    fn obs_draws<'a, T: Scalar>(&self, draws: &'a DrawTensor<T>, n: usize) -> &'a [T] {
        if self.random.is_empty() {
            &[]
        } else {
            draws.observation(n)
        }
    }

    /// Simulated log-likelihood of the sample.
    pub fn log_likelihood<T: Scalar>(&self, params: &[T], data: &ChoiceDataset<T>, draws: &DrawTensor<T>) -> Result<T> {
        self.check_shapes(params, data, draws)?;
        let obs = data.observations();
        let partials: Vec<T> = obs
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut scratch = self.scratch();
                let mut ll = T::zero();
                for (j, o) in chunk.iter().enumerate() {
                    let n = ci * CHUNK + j;
                    let pn = self.observation_contribution(params, &o.x, o.chosen, self.obs_draws(draws, n), &mut scratch, None);
                    ll = ll + pn.ln();
                }
                ll
            })
            .collect();
        Ok(partials.into_iter().fold(T::zero(), |a, b| a + b))
    }

    /// Simulated log-likelihood and its gradient, evaluated on the same draws.
    pub fn log_likelihood_and_gradient<T: Scalar>(
        &self,
        params: &[T],
        data: &ChoiceDataset<T>,
        draws: &DrawTensor<T>,
    ) -> Result<(T, Vec<T>)> {
        self.check_shapes(params, data, draws)?;
        let np = self.n_params();
        let obs = data.observations();
        let partials: Vec<(T, Vec<T>)> = obs
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut scratch = self.scratch();
                let mut ll = T::zero();
                let mut g = vec![T::zero(); np];
                for (j, o) in chunk.iter().enumerate() {
                    let n = ci * CHUNK + j;
                    let pn = self.observation_contribution(params, &o.x, o.chosen, self.obs_draws(draws, n), &mut scratch, Some(&mut g));
                    ll = ll + pn.ln();
                }
                (ll, g)
            })
            .collect();
        let mut ll = T::zero();
        let mut grad = vec![T::zero(); np];
        for (l, g) in partials {
            ll = ll + l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        Ok((ll, grad))
    }

    pub fn gradient<T: Scalar>(&self, params: &[T], data: &ChoiceDataset<T>, draws: &DrawTensor<T>) -> Result<Vec<T>> {
        self.log_likelihood_and_gradient(params, data, draws).map(|(_, g)| g)
    }

    /// Per-observation score vectors (gradients of ln P_n).
    pub fn observation_gradients<T: Scalar>(
        &self,
        params: &[T],
        data: &ChoiceDataset<T>,
        draws: &DrawTensor<T>,
    ) -> Result<Vec<Vec<T>>> {
        self.check_shapes(params, data, draws)?;
        let np = self.n_params();
        Ok(data
            .observations()
            .par_iter()
            .enumerate()
            .map_init(
                || self.scratch(),
                |scratch, (n, o)| {
                    let mut g = vec![T::zero(); np];
                    self.observation_contribution(params, &o.x, o.chosen, self.obs_draws(draws, n), scratch, Some(&mut g));
                    g
                },
            )
            .collect())
    }
}

struct ObsScratch<T> {
    u: Vec<T>,
    p: Vec<T>,
    e: Vec<T>,
    c: Vec<Vec<T>>,
}

impl<T: Scalar> ObsScratch<T> {
    fn new(n_alt: usize, n_random: usize) -> Self {
        Self {
            u: vec![T::zero(); n_alt],
            p: vec![T::zero(); n_alt],
            e: vec![T::zero(); n_alt],
            c: vec![Vec::new(); n_random],
        }
    }
}

/// Logit kernel probabilities with max-subtraction.
pub fn mnl_probability<T: Scalar>(utilities: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); utilities.len()];
    softmax_into(utilities, &mut out);
    out
}

#[inline]
fn softmax_into<T: Scalar>(u: &[T], out: &mut [T]) {
    let m = u.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &ui) in out.iter_mut().zip(u) {
        *o = (ui - m).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Closed-form multinomial logit log-likelihood; random terms are treated
/// at their means (shifters included) with no dispersion.
pub fn mnl_log_likelihood<T: Scalar>(model: &BoundModel, params: &[T], data: &ChoiceDataset<T>) -> T {
    let zero_row = vec![T::zero(); model.n_random()];
    data.observations()
        .iter()
        .map(|o| {
            let u = model.utilities(params, &o.x, &zero_row);
            mnl_probability(&u)[o.chosen].ln()
        })
        .fold(T::zero(), |a, b| a + b)
}
