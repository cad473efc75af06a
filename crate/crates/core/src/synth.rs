//! Synthetic choice data from known parameters, and recovery diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, Observation};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::likelihood::{mnl_probability, BoundModel};
use crate::model::{parse_model_spec, ModelSpec};
use crate::post::canonical_params;
use crate::rng::substream;
use crate::scalar::Scalar;

const COVARIATE_STREAM: u64 = 0x5EED_0001;

/// Ground truth for a simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthConfig {
    pub spec: ModelSpec,
    /// Packed in layout order.
    pub true_params: Vec<f64>,
    pub n_obs: usize,
    /// Bernoulli inclusion probability of each dummy, in column order.
    pub covariates: Vec<(String, f64)>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    spec: serde_json::Value,
    true_params: BTreeMap<String, f64>,
    n_obs: usize,
    covariates: BTreeMap<String, f64>,
    #[serde(default)]
    seed: u64,
}

impl TruthConfig {
    /// Parses a truth file. `spec` may use the hand-written spec format or
    /// the serialized form found in fit reports; parameters are keyed by
    /// layout name.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: TruthFile = serde_json::from_str(text)?;
        let spec = match parse_model_spec(&raw.spec.to_string()) {
            Ok(s) => s,
            Err(first) => {
                let s: ModelSpec = serde_json::from_value(raw.spec).map_err(|_| first)?;
                s.check()?;
                s
            }
        };
        let true_params = spec.layout().pack(&raw.true_params)?;
        let cfg = TruthConfig {
            spec,
            true_params,
            n_obs: raw.n_obs,
            covariates: raw.covariates.into_iter().collect(),
            seed: raw.seed,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let layout = self.spec.layout();
        let file = TruthFile {
            spec: serde_json::to_value(&self.spec)?,
            true_params: layout.unpack(&self.true_params)?,
            n_obs: self.n_obs,
            covariates: self.covariates.iter().cloned().collect(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn check(&self) -> Result<()> {
        let layout = self.spec.layout();
        if self.true_params.len() != layout.len() {
            return Err(Error::LayoutMismatch {
                expected: layout.len(),
                actual: self.true_params.len(),
            });
        }
        if let Some(v) = self.true_params.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("true parameter {v} is not finite")));
        }
        for (name, p) in &self.covariates {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Argument(format!("inclusion probability {p} of `{name}` is outside [0, 1]")));
            }
        }
        for v in self.spec.referenced_variables() {
            if !self.covariates.iter().any(|(n, _)| n == v) {
                return Err(Error::UnknownName {
                    name: v.to_string(),
                    context: "covariate of the truth config".into(),
                });
            }
        }
        Ok(())
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.covariates.iter().map(|(n, _)| n.clone()).collect()
    }
}

/// Samples a dataset from the truth.
///
/// Each observation gets its own generator seeded from `(seed, index)`, so
/// the output does not depend on the thread count. Every observation
/// receives a fresh pseudo-random coefficient realization.
pub fn generate_dataset<T: Scalar>(cfg: &TruthConfig) -> Result<ChoiceDataset<T>> {
    cfg.check()?;
    let names = cfg.variable_names();
    let model = BoundModel::new(&cfg.spec, &names)?;
    let params = cfg.true_params.clone();
    let n_random = model.n_random();
    let observations: Vec<Observation<T>> = (0..cfg.n_obs)
        .into_par_iter()
        .map(|n| {
            let mut rng = substream(cfg.seed, COVARIATE_STREAM, n as u64);
            let x: Vec<f64> = cfg
                .covariates
                .iter()
                .map(|(_, p)| if rng.random::<f64>() < *p { 1.0 } else { 0.0 })
                .collect();
            let v: Vec<f64> = (0..n_random).map(|_| rng.sample(StandardNormal)).collect();
            let probs = mnl_probability(&model.utilities(&params, &x, &v));
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut chosen = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    chosen = i;
                    break;
                }
            }
            Observation {
                chosen,
                x: x.into_iter().map(T::lit).collect(),
                crash_id: format!("{}", n + 1),
            }
        })
        .collect();
    ChoiceDataset::new(observations, names, cfg.spec.alternatives.clone(), cfg.spec.base_alternative)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub covered: bool,
}

/// Per-parameter comparison of a fit against the truth it was simulated
/// from. Both vectors are sign-normalized first, so factor columns that
/// converged to their mirror image still compare.
pub fn recovery_report<T: Scalar>(truth: &[f64], fit: &FitResult<T>) -> Result<Vec<RecoveryRow>> {
    let layout = fit.spec.layout();
    if truth.len() != layout.len() {
        return Err(Error::LayoutMismatch {
            expected: layout.len(),
            actual: truth.len(),
        });
    }
    let est: Vec<f64> = fit.estimates.iter().map(|v| v.as_f64()).collect();
    let truth = canonical_params(&layout, truth);
    let est = canonical_params(&layout, &est);
    Ok(layout
        .names()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let se = fit.std_errors[i].as_f64();
            let diff = est[i] - truth[i];
            let z = if diff == 0.0 {
                0.0
            } else if se > 0.0 {
                diff / se
            } else {
                f64::INFINITY.copysign(diff)
            };
            RecoveryRow {
                name: name.clone(),
                truth: truth[i],
                estimate: est[i],
                std_error: se,
                z,
                covered: z.abs() < 1.96,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_alt(beta: f64) -> TruthConfig {
        let spec = parse_model_spec(
            r#"{"alternatives": ["minor", "serious", "fatal"],
                "terms": [{"name": "c2", "variable": "CONSTANT", "alternative": 2}]}"#,
        )
        .unwrap();
        TruthConfig {
            spec,
            true_params: vec![beta],
            n_obs: 10_000,
            covariates: vec![("x".into(), 0.5)],
            seed: 11,
        }
    }

    #[test]
    fn symmetric_truth_gives_equal_shares() {
        let data: ChoiceDataset<f64> = generate_dataset(&three_alt(0.0)).unwrap();
        for s in data.choice_shares() {
            assert!((s - 1.0 / 3.0).abs() < 0.02, "{s}");
        }
    }

    #[test]
    fn dominant_constant() {
        let data: ChoiceDataset<f64> = generate_dataset(&three_alt(5.0)).unwrap();
        assert!(data.choice_shares()[2] > 0.97);
    }

    #[test]
    fn seeded_and_thread_independent() {
        let cfg = three_alt(0.3);
        let a: ChoiceDataset<f64> = generate_dataset(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b: ChoiceDataset<f64> = pool.install(|| generate_dataset(&cfg)).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 12;
        let c: ChoiceDataset<f64> = generate_dataset(&other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_probability_rejected() {
        let mut cfg = three_alt(0.0);
        cfg.covariates[0].1 = 1.5;
        assert!(generate_dataset::<f64>(&cfg).is_err());
    }

    #[test]
    fn truth_file_round_trip() {
        let cfg = three_alt(0.7);
        let back = TruthConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let hand = r#"{"spec": {"alternatives": ["a", "b"], "terms": [{"name": "x", "alternative": 1}]},
                       "true_params": {"x": 1.5}, "n_obs": 3, "covariates": {"x": 0.2}, "seed": 4}"#;
        let cfg = TruthConfig::from_json(hand).unwrap();
        assert_eq!(cfg.true_params, vec![1.5]);
        assert!(TruthConfig::from_json(&hand.replace("\"x\": 0.2", "\"y\": 0.2")).is_err());
    }
}
