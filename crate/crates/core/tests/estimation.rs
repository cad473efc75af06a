mod common;

use sevlogit::data::{ChoiceDataset, Observation};
use sevlogit::draws::make_draws;
use sevlogit::fit::{maximize_from, start_values, InferenceMethod};
use sevlogit::likelihood::BoundModel;
use sevlogit::model::parse_model_spec;
use sevlogit::optim::StopReason;
use sevlogit::post::effects_report;
use sevlogit::report::{FitReport, RunManifest};
use sevlogit::{generate_dataset, maximize, TruthConfig};

use common::{crplhm_spec, crplhm_truth};

const BINARY: &str = r#"{"alternatives": ["no", "yes"],
    "terms": [{"name": "x1", "alternative": 1}, {"name": "x2", "alternative": 1}]}"#;

fn binary_truth(n_obs: usize, seed: u64) -> TruthConfig {
    let spec = parse_model_spec(BINARY).unwrap();
    TruthConfig {
        spec,
        true_params: vec![1.0, -0.5],
        n_obs,
        covariates: vec![("x1".into(), 0.5), ("x2".into(), 0.5)],
        seed,
    }
}

#[test]
fn logit_recovers_truth_within_three_standard_errors() {
    let truth = binary_truth(5000, 42);
    let data: ChoiceDataset<f64> = generate_dataset(&truth).unwrap();
    let fit = maximize(&truth.spec, &data).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.inference, InferenceMethod::Hessian);
    for (i, t) in truth.true_params.iter().enumerate() {
        assert!((fit.estimates[i] - t).abs() < 3.0 * fit.std_errors[i], "{:?}", fit.estimates);
    }
    assert!(fit.ll_convergence > fit.ll_zero);
}

#[test]
fn single_precision_fit_tracks_double() {
    let truth = binary_truth(3000, 5);
    let d64: ChoiceDataset<f64> = generate_dataset(&truth).unwrap();
    let d32: ChoiceDataset<f32> = generate_dataset(&truth).unwrap();
    let f64_fit = maximize(&truth.spec, &d64).unwrap();
    let f32_fit = maximize(&truth.spec, &d32).unwrap();
    for i in 0..2 {
        assert!((f64_fit.estimates[i] - f64::from(f32_fit.estimates[i])).abs() < 1e-2);
    }
}

#[test]
fn perfect_separation_hits_the_bound() {
    // `sep` = 1 exactly when the outcome is "yes".
    let obs: Vec<Observation<f64>> = (0..200)
        .map(|i| {
            let y = usize::from(i % 3 == 0);
            Observation { chosen: y, x: vec![y as f64, (i % 2) as f64], crash_id: i.to_string() }
        })
        .collect();
    let data = ChoiceDataset::new(obs, vec!["sep".into(), "z".into()], vec!["no".into(), "yes".into()], 0).unwrap();
    let spec = parse_model_spec(
        r#"{"alternatives": ["no", "yes"],
            "terms": [{"name": "sep", "alternative": 1}, {"name": "z", "alternative": 1}],
            "optimizer": {"max_iter": 2000}}"#,
    )
    .unwrap();
    let fit = maximize(&spec, &data).unwrap();
    assert!(fit.non_identified);
    assert_eq!(fit.at_bound, vec!["sep".to_string()]);
    assert_eq!(fit.estimate("sep"), Some(50.0));
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let truth = crplhm_truth(400, 2);
    let mut spec = crplhm_spec(30, 2);
    spec.optimizer.max_iter = 2;
    let data: ChoiceDataset<f64> = generate_dataset(&truth).unwrap();
    let fit = maximize(&spec, &data).unwrap();
    assert!(!fit.converged);
    assert_eq!(fit.stop_reason, StopReason::MaxIterations);
    assert_eq!(fit.iterations, 2);
}

#[test]
fn refits_are_bitwise_identical_across_thread_counts() {
    let truth = crplhm_truth(400, 3);
    let spec = crplhm_spec(40, 3);
    let data: ChoiceDataset<f64> = generate_dataset(&truth).unwrap();
    let a = maximize(&spec, &data).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let b = pool.install(|| maximize(&spec, &data)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn richer_models_started_from_nested_optima_fit_at_least_as_well() {
    let truth = crplhm_truth(600, 4);
    let full = crplhm_spec(50, 4);
    let rpl = full.as_uncorrelated_without_shifters();
    let mnl = full.as_fixed();
    let data: ChoiceDataset<f64> = generate_dataset(&truth).unwrap();

    let mnl_fit = maximize(&mnl, &data).unwrap();
    let rpl_model = BoundModel::new(&rpl, data.variable_names()).unwrap();
    let draws = make_draws(data.len(), &rpl, &rpl.draws).unwrap();
    let mut start = start_values(&rpl, &data).unwrap();
    let rl = rpl.layout();
    for (i, name) in rl.names().iter().enumerate() {
        let plain = name.strip_prefix("mean(").map(|r| r.trim_end_matches(')')).unwrap_or(name);
        if let Some(v) = mnl_fit.estimate(plain) {
            start[i] = v;
        }
        if name.starts_with("sd(") {
            start[i] = 1e-3;
        }
    }
    let rpl_fit = maximize_from(&rpl, &rpl_model, &data, &draws, &start).unwrap();
    assert!(rpl_fit.ll_convergence >= mnl_fit.ll_convergence - 1e-6);

    let fl = full.layout();
    let full_model = BoundModel::new(&full, data.variable_names()).unwrap();
    let mut start = vec![0.0; fl.len()];
    for (i, name) in fl.names().iter().enumerate() {
        let from = match name.as_str() {
            "chol(belt, belt)" => "sd(belt)".to_string(),
            "chol(truck, truck)" => "sd(truck)".to_string(),
            other => other.to_string(),
        };
        start[i] = rpl_fit.estimate(&from).unwrap_or(0.0);
    }
    let full_fit = maximize_from(&full, &full_model, &data, &draws, &start).unwrap();
    assert_eq!(full_fit.ll_start.to_bits(), rpl_fit.ll_convergence.to_bits());
    assert!(full_fit.ll_convergence >= rpl_fit.ll_convergence);
}

#[test]
fn report_round_trip_and_effect_invariants() {
    let truth = crplhm_truth(500, 5);
    let spec = crplhm_spec(40, 5);
    let data: ChoiceDataset<f64> = generate_dataset(&truth).unwrap();
    let fit = maximize(&spec, &data).unwrap();
    let effects = effects_report(&fit, &data).unwrap();
    for m in &effects.marginal_effects {
        assert!(m.effects.iter().sum::<f64>().abs() < 1e-10);
    }
    for r in &effects.random_parameters {
        assert!((r.share_above_zero + r.share_below_zero - 1.0).abs() < 1e-12);
    }
    let c = effects.correlation.as_ref().unwrap();
    for j in 0..2 {
        assert!((c.correlation[j][j] - 1.0).abs() < 1e-12);
        assert!(c.correlation[1][0].abs() <= 1.0);
    }

    let manifest = RunManifest::new("fit", &[], Some(&spec), Some(5));
    let report = FitReport::new(&fit, Some(effects), manifest);
    let back: FitReport<f64> = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.to_fit_result().unwrap(), fit);
    let text = report.render_text();
    for needle in ["Coeff.", "t-stat", "Marginal", "Heterogeneity", "Distributional", "Correlation"] {
        assert!(text.contains(needle), "{needle}");
    }
}
