//! Structured and text reports for fits, comparisons and transfer tests.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compare::{aic, lr_test, pseudo_r2, TestResult};
use crate::error::{Error, Result};
use crate::fit::{DrawConfig, FitResult, InferenceMethod};
use crate::likelihood::ParamVector;
use crate::model::{ModelSpec, ParamKind, TermKind};
use crate::optim::StopReason;
use crate::post::EffectsReport;
use crate::scalar::Scalar;

/// Provenance embedded in every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    /// SHA-256 of the canonical JSON serialization of the model spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_hash: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn spec_hash(spec: &ModelSpec) -> String {
    let canonical = serde_json::to_string(spec).expect("spec serializes");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

impl RunManifest {
    pub fn new(command: &str, inputs: &[&Path], spec: Option<&ModelSpec>, seed: Option<u64>) -> Self {
        let now = unix_now();
        RunManifest {
            command: command.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            spec_hash: spec.map(spec_hash),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now,
            finished_at: now,
        }
    }

    pub fn finish(mut self) -> Self {
        self.finished_at = unix_now();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ParamRow<T> {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
    pub estimate: T,
    pub std_error: T,
    pub t_stat: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct EstimatesSection<T> {
    pub spec: ModelSpec,
    pub parameters: Vec<ParamRow<T>>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub draws: DrawConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceSection {
    pub method: InferenceMethod,
    pub singular_params: Vec<String>,
    pub at_bound: Vec<String>,
    pub non_identified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct GoodnessOfFit<T> {
    pub n_obs: usize,
    pub n_params: usize,
    pub n_significant: usize,
    pub ll_zero: T,
    pub ll_start: T,
    pub ll_convergence: T,
    pub aic: T,
    pub pseudo_r2: T,
}

/// The structured output of `fit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FitReport<T> {
    pub manifest: RunManifest,
    pub estimates: EstimatesSection<T>,
    pub inference: InferenceSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effects: Option<EffectsReport<T>>,
    pub gof: GoodnessOfFit<T>,
}

impl<T: Scalar> FitReport<T> {
    pub fn new(fit: &FitResult<T>, effects: Option<EffectsReport<T>>, manifest: RunManifest) -> Self {
        let layout = fit.spec.layout();
        let parameters = layout
            .names()
            .iter()
            .zip(layout.kinds())
            .enumerate()
            .map(|(i, (name, kind))| ParamRow {
                name: name.clone(),
                kind: kind.clone(),
                estimate: fit.estimates[i],
                std_error: fit.std_errors[i],
                t_stat: fit.t_stats[i],
            })
            .collect();
        FitReport {
            manifest,
            estimates: EstimatesSection {
                spec: fit.spec.clone(),
                parameters,
                converged: fit.converged,
                stop_reason: fit.stop_reason,
                iterations: fit.iterations,
                draws: fit.draws.clone(),
            },
            inference: InferenceSection {
                method: fit.inference,
                singular_params: fit.singular_params.clone(),
                at_bound: fit.at_bound.clone(),
                non_identified: fit.non_identified,
            },
            effects,
            gof: GoodnessOfFit {
                n_obs: fit.n_obs,
                n_params: fit.n_params,
                n_significant: fit.n_significant(),
                ll_zero: fit.ll_zero,
                ll_start: fit.ll_start,
                ll_convergence: fit.ll_convergence,
                aic: aic(fit.n_params, fit.ll_convergence),
                pseudo_r2: pseudo_r2(fit.ll_zero, fit.ll_convergence),
            },
        }
    }

    /// Rebuilds the fit the report was written from.
    pub fn to_fit_result(&self) -> Result<FitResult<T>> {
        let spec = self.estimates.spec.clone();
        let layout = spec.layout();
        let names: Vec<String> = self.estimates.parameters.iter().map(|p| p.name.clone()).collect();
        if names.as_slice() != layout.names() {
            return Err(Error::LayoutMismatch {
                expected: layout.len(),
                actual: names.len(),
            });
        }
        let values = self.estimates.parameters.iter().map(|p| p.estimate).collect();
        Ok(FitResult {
            parameter_names: names,
            estimates: ParamVector::new(values, &layout)?,
            std_errors: self.estimates.parameters.iter().map(|p| p.std_error).collect(),
            t_stats: self.estimates.parameters.iter().map(|p| p.t_stat).collect(),
            ll_zero: self.gof.ll_zero,
            ll_start: self.gof.ll_start,
            ll_convergence: self.gof.ll_convergence,
            n_obs: self.gof.n_obs,
            n_params: self.gof.n_params,
            converged: self.estimates.converged,
            stop_reason: self.estimates.stop_reason,
            iterations: self.estimates.iterations,
            draws: self.estimates.draws.clone(),
            inference: self.inference.method,
            singular_params: self.inference.singular_params.clone(),
            at_bound: self.inference.at_bound.clone(),
            non_identified: self.inference.non_identified,
            spec,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Table-3-style rendering.
    pub fn render_text(&self) -> String {
        render_fit(self)
    }
}

fn f(v: impl Scalar, digits: usize) -> String {
    format!("{:.*}", digits, v.as_f64())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn render_fit<T: Scalar>(r: &FitReport<T>) -> String {
    let spec = &r.estimates.spec;
    let mut out = String::new();
    let alts = &spec.alternatives;
    let _ = writeln!(
        out,
        "Alternatives: {} (base: {})",
        alts.join(", "),
        alts[spec.base_alternative]
    );
    let w = r
        .estimates
        .parameters
        .iter()
        .map(|p| p.name.len())
        .max()
        .unwrap_or(8)
        .max(24);
    let marginal_for = |variable: &str, alt: usize| -> Option<T> {
        r.effects.as_ref().and_then(|e| {
            e.marginal_effects
                .iter()
                .find(|m| m.variable == variable)
                .map(|m| m.effects[alt])
        })
    };
    let _ = writeln!(out, "{:<w$} {:>10} {:>9} {:>10}", "Variable", "Coeff.", "t-stat", "Marginal");
    let row = |out: &mut String, label: &str, p: &ParamRow<T>, marginal: Option<T>| {
        let m = marginal.map(|m| f(m, 4)).unwrap_or_default();
        let _ = writeln!(out, "{:<w$} {:>10} {:>9} {:>10}", label, f(p.estimate, 3), f(p.t_stat, 2), m);
    };

    for (ai, alt) in alts.iter().enumerate() {
        let terms: Vec<_> = spec.terms.iter().filter(|t| t.alternative == ai).collect();
        if terms.is_empty() {
            continue;
        }
        let _ = writeln!(out, "[{alt}]");
        for t in terms {
            let pname = match t.kind {
                TermKind::Fixed => t.name.clone(),
                TermKind::Random => format!("mean({})", t.name),
            };
            if let Some(p) = r.estimates.parameters.iter().find(|p| p.name == pname) {
                let marg = if t.variable == crate::model::CONSTANT {
                    None
                } else {
                    marginal_for(&t.variable, ai)
                };
                row(&mut out, &pname, p, marg);
            }
        }
    }

    let section = |out: &mut String, title: &str, pred: &dyn Fn(&ParamKind) -> bool| {
        let rows: Vec<_> = r.estimates.parameters.iter().filter(|p| pred(&p.kind)).collect();
        if rows.is_empty() {
            return;
        }
        let _ = writeln!(out, "{title}");
        for p in rows {
            let shown = if p.kind.is_cholesky_diagonal() {
                ParamRow {
                    estimate: p.estimate.abs(),
                    t_stat: p.t_stat.abs(),
                    ..(*p).clone()
                }
            } else {
                (*p).clone()
            };
            row(out, &p.name, &shown, None);
        }
    };
    section(&mut out, "Standard deviation of parameter distribution", &|k| {
        matches!(k, ParamKind::StdDev { .. })
    });
    section(&mut out, "Heterogeneity in the mean of random parameters", &|k| {
        matches!(k, ParamKind::Shifter { .. })
    });
    section(&mut out, "Cholesky factor of the correlated block", &|k| {
        matches!(k, ParamKind::Cholesky { .. })
    });

    if let Some(e) = &r.effects {
        if !e.random_parameters.is_empty() {
            let _ = writeln!(out, "Distributional effect of the random parameters (%)");
            let _ = writeln!(out, "{:<w$} {:>10} {:>10} {:>10} {:>10}", "Term", "Mean", "Std.dev.", "Above 0", "Below 0");
            for p in &e.random_parameters {
                let _ = writeln!(
                    out,
                    "{:<w$} {:>10} {:>10} {:>10} {:>10}",
                    p.term,
                    f(p.mean, 3),
                    f(p.sd, 3),
                    pct(p.share_above_zero.as_f64()),
                    pct(p.share_below_zero.as_f64())
                );
            }
        }
        if let Some(c) = &e.correlation {
            let _ = writeln!(out, "Correlation of random parameters");
            let _ = writeln!(out, "{:<w$} {:>10} {:>10}", "Pair", "Cov.", "Corr.");
            for j in 0..c.terms.len() {
                for k in 0..j {
                    let _ = writeln!(
                        out,
                        "{:<w$} {:>10} {:>10}",
                        format!("{} / {}", c.terms[j], c.terms[k]),
                        f(c.covariance[j][k], 3),
                        f(c.correlation[j][k], 3)
                    );
                }
            }
        }
    }

    let g = &r.gof;
    let _ = writeln!(out, "Number of observations          {}", g.n_obs);
    let _ = writeln!(out, "Number of parameters            {}", g.n_params);
    let _ = writeln!(out, "Log-likelihood at zero          {}", f(g.ll_zero, 2));
    let _ = writeln!(out, "Log-likelihood at convergence   {}", f(g.ll_convergence, 2));
    let _ = writeln!(out, "AIC                             {}", f(g.aic, 2));
    let _ = writeln!(out, "Pseudo R-squared                {}", f(g.pseudo_r2, 4));
    let _ = writeln!(
        out,
        "Converged                       {} ({:?}, {} iterations)",
        r.estimates.converged, r.estimates.stop_reason, r.estimates.iterations
    );
    if !r.inference.at_bound.is_empty() {
        let _ = writeln!(out, "At the parameter bound: {}", r.inference.at_bound.join(", "));
    }
    if r.inference.method == InferenceMethod::Unavailable {
        let _ = writeln!(
            out,
            "Standard errors unavailable; singular: {}",
            r.inference.singular_params.join(", ")
        );
    }
    out
}

/// Fit statistics of one model as read back from a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub n_obs: usize,
    pub n_params: usize,
    pub n_significant: usize,
    pub ll_zero: f64,
    pub ll_convergence: f64,
}

impl ModelSummary {
    pub fn from_report<T: Scalar>(label: &str, r: &FitReport<T>) -> Self {
        ModelSummary {
            label: label.to_string(),
            n_obs: r.gof.n_obs,
            n_params: r.gof.n_params,
            n_significant: r.gof.n_significant,
            ll_zero: r.gof.ll_zero.as_f64(),
            ll_convergence: r.gof.ll_convergence.as_f64(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub restricted: String,
    pub full: String,
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    /// Absent when the pair was refused or has zero degrees of freedom.
    pub test: Option<TestResult>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub n_obs: usize,
    pub n_params: usize,
    pub ll_zero: f64,
    pub ll_convergence: f64,
    pub aic: f64,
    pub pseudo_r2: f64,
}

/// Table-2-shaped comparison of several fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub models: Vec<ComparisonRow>,
    pub tests: Vec<PairTest>,
    pub warnings: Vec<String>,
}

/// Compares models in the given order; each consecutive pair gets an LR
/// test with the smaller model as the restricted one. `df` overrides the
/// parameter-count difference pair by pair.
pub fn compare_models(models: &[ModelSummary], df: Option<&[usize]>) -> Result<Comparison> {
    if models.len() < 2 {
        return Err(Error::Argument("at least two reports are needed".into()));
    }
    if let Some(d) = df {
        if d.len() != models.len() - 1 {
            return Err(Error::Argument(format!(
                "{} degrees-of-freedom values given for {} model pairs",
                d.len(),
                models.len() - 1
            )));
        }
    }
    let mut warnings = Vec::new();
    if models.iter().any(|m| m.n_obs != models[0].n_obs) {
        warnings.push(
            "warning: reports were fitted to different numbers of observations; AIC values are not comparable \
             and likelihood-ratio tests are refused"
                .to_string(),
        );
    }
    let rows = models
        .iter()
        .map(|m| ComparisonRow {
            label: m.label.clone(),
            n_obs: m.n_obs,
            n_params: m.n_params,
            ll_zero: m.ll_zero,
            ll_convergence: m.ll_convergence,
            aic: aic(m.n_params, m.ll_convergence),
            pseudo_r2: pseudo_r2(m.ll_zero, m.ll_convergence),
        })
        .collect();
    let mut tests = Vec::new();
    for (i, pair) in models.windows(2).enumerate() {
        let (r, u) = if pair[0].n_params <= pair[1].n_params {
            (&pair[0], &pair[1])
        } else {
            (&pair[1], &pair[0])
        };
        let dof = df.map(|d| d[i]).unwrap_or(u.n_params - r.n_params);
        let statistic = -2.0 * (r.ll_convergence - u.ll_convergence);
        let (test, note) = if r.n_obs != u.n_obs {
            (None, Some(format!("refused: n_obs {} vs {}", r.n_obs, u.n_obs)))
        } else if dof == 0 {
            (None, Some("zero degrees of freedom".to_string()))
        } else {
            let t = lr_test(r.ll_convergence, u.ll_convergence, dof)?;
            let note = t.warning.clone();
            (Some(t), note)
        };
        tests.push(PairTest {
            restricted: r.label.clone(),
            full: u.label.clone(),
            statistic,
            degrees_of_freedom: dof,
            test,
            note,
        });
    }
    Ok(Comparison {
        models: rows,
        tests,
        warnings,
    })
}

impl Comparison {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            let _ = writeln!(out, "{w}");
        }
        let w = self.models.iter().map(|m| m.label.len()).max().unwrap_or(5).max(12);
        let _ = writeln!(
            out,
            "{:<w$} {:>7} {:>7} {:>12} {:>14} {:>10} {:>9}",
            "Model", "N", "Params", "LL(zero)", "LL(converged)", "AIC", "Pseudo R2"
        );
        for m in &self.models {
            let _ = writeln!(
                out,
                "{:<w$} {:>7} {:>7} {:>12.2} {:>14.2} {:>10.2} {:>9.4}",
                m.label, m.n_obs, m.n_params, m.ll_zero, m.ll_convergence, m.aic, m.pseudo_r2
            );
        }
        let _ = writeln!(out, "Likelihood ratio tests");
        for t in &self.tests {
            let head = format!("{} vs {}", t.full, t.restricted);
            match &t.test {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "{head}: statistic {:.2}, df {}, p {:.6}, confidence {}%",
                        r.statistic,
                        r.degrees_of_freedom,
                        r.p_value,
                        pct(r.confidence)
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{head}: statistic {:.2}, df {}, no test",
                        t.statistic, t.degrees_of_freedom
                    );
                }
            }
            if let Some(n) = &t.note {
                let _ = writeln!(out, "  {n}");
            }
        }
        out
    }
}

/// Outcome of the pooled-versus-split test with a plain-language verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub pooled: ModelSummary,
    pub group1: ModelSummary,
    pub group2: ModelSummary,
    pub test: TestResult,
    pub alpha: f64,
    pub verdict: String,
    pub warnings: Vec<String>,
}

pub fn transfer_verdict(test: &TestResult, alpha: f64) -> String {
    if test.p_value >= alpha {
        format!("no significant difference (p = {:.4})", test.p_value)
    } else if test.confidence > 0.9999 {
        "reject pooling, confidence > 99.99%".to_string()
    } else {
        format!("reject pooling, confidence {}%", pct(test.confidence))
    }
}

impl TransferReport {
    pub fn new(pooled: ModelSummary, group1: ModelSummary, group2: ModelSummary, test: TestResult, alpha: f64) -> Self {
        let mut warnings = Vec::new();
        if pooled.n_obs != group1.n_obs + group2.n_obs {
            warnings.push(format!(
                "warning: pooled n_obs {} differs from the group total {}",
                pooled.n_obs,
                group1.n_obs + group2.n_obs
            ));
        }
        if let Some(w) = &test.warning {
            warnings.push(format!("warning: {w}"));
        }
        let verdict = transfer_verdict(&test, alpha);
        TransferReport {
            pooled,
            group1,
            group2,
            test,
            alpha,
            verdict,
            warnings,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            let _ = writeln!(out, "{w}");
        }
        for m in [&self.pooled, &self.group1, &self.group2] {
            let _ = writeln!(out, "{:<12} N {:>7}  LL {:>12.2}", m.label, m.n_obs, m.ll_convergence);
        }
        let _ = writeln!(
            out,
            "Transferability statistic {:.2}, df {}, p {}, confidence {}%",
            self.test.statistic,
            self.test.degrees_of_freedom,
            fmt_p(self.test.p_value),
            pct(self.test.confidence)
        );
        let _ = writeln!(out, "Verdict: {}", self.verdict);
        out
    }
}

fn fmt_p(p: f64) -> String {
    if p >= 1e-4 {
        format!("{p:.4}")
    } else {
        format!("{p:.3e}")
    }
}
