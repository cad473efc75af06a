#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sevlogit::model::{parse_model_spec, ModelSpec};
use sevlogit::TruthConfig;

/// Three-outcome spec with two correlated random terms on different
/// alternatives, one mean shifter, and strong fixed dummies.
pub const CRPLHM_SPEC: &str = r#"{
    "alternatives": {"names": ["minor", "serious", "fatal"], "base": "minor"},
    "terms": [
        {"name": "asc", "variable": "CONSTANT", "alternatives": ["serious", "fatal"]},
        {"name": "night", "alternatives": ["serious", "fatal"]},
        {"name": "wet", "alternative": "serious"},
        {"name": "old", "alternative": "fatal"},
        {"name": "belt", "alternative": "fatal", "kind": "random"},
        {"name": "truck", "alternative": "serious", "kind": "random"}
    ],
    "mean_shifters": [{"term": "belt", "variable": "weekend"}],
    "correlated_block": ["belt", "truck"]
}"#;

pub fn crplhm_spec(n_draws: usize, seed: u64) -> ModelSpec {
    let mut spec = parse_model_spec(CRPLHM_SPEC).unwrap();
    spec.draws.n_draws = n_draws;
    spec.draws.seed = seed;
    spec
}

/// Truth with standard deviations 2 and correlation 0.5.
pub fn crplhm_truth(n_obs: usize, seed: u64) -> TruthConfig {
    let spec = crplhm_spec(500, 0);
    let s = 2.0;
    let named = [
        ("asc:serious", -0.5),
        ("asc:fatal", -1.0),
        ("night:serious", 1.0),
        ("night:fatal", -1.0),
        ("wet", -1.0),
        ("old", 1.5),
        ("mean(belt)", -1.0),
        ("mean(truck)", 1.0),
        ("shift(belt; weekend)", 1.0),
        ("chol(belt, belt)", s),
        ("chol(truck, belt)", 0.5 * s),
        ("chol(truck, truck)", s * 0.75f64.sqrt()),
    ];
    let map = named.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    TruthConfig {
        true_params: spec.layout().pack(&map).unwrap(),
        spec,
        n_obs,
        covariates: ["belt", "night", "old", "truck", "weekend", "wet"]
            .iter()
            .zip([0.5, 0.5, 0.5, 0.5, 0.4, 0.5])
            .map(|(n, p)| (n.to_string(), p))
            .collect(),
        seed,
    }
}

/// Nodes and probability weights of Gauss-Hermite quadrature for a
/// standard normal, from the eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let nodes = eig.eigenvalues.iter().copied().collect();
    let weights = (0..n).map(|i| eig.eigenvectors[(0, i)].powi(2)).collect();
    (nodes, weights)
}

pub fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
