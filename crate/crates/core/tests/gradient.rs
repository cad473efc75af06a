mod common;

use proptest::prelude::*;
use sevlogit::data::ChoiceDataset;
use sevlogit::draws::{make_draws, DrawTensor};
use sevlogit::likelihood::BoundModel;
use sevlogit::generate_dataset;

use common::{crplhm_spec, crplhm_truth};

fn setup() -> (BoundModel, ChoiceDataset<f64>, DrawTensor<f64>, Vec<f64>) {
    let spec = crplhm_spec(20, 4);
    let truth = crplhm_truth(60, 8);
    let data: ChoiceDataset<f64> = generate_dataset(&truth).unwrap();
    let model = BoundModel::new(&spec, data.variable_names()).unwrap();
    let draws = make_draws(data.len(), &spec, &spec.draws).unwrap();
    (model, data, draws, truth.true_params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_gradient_matches_central_differences(shift in proptest::collection::vec(-1.5f64..1.5, 12)) {
        let (model, data, draws, truth) = setup();
        let p: Vec<f64> = truth.iter().zip(&shift).map(|(t, s)| t + s).collect();
        let (ll, g) = model.log_likelihood_and_gradient(&p, &data, &draws).unwrap();
        prop_assert_eq!(ll, model.log_likelihood(&p, &data, &draws).unwrap());
        let h = 1e-6;
        for k in 0..p.len() {
            let mut up = p.clone();
            let mut dn = p.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (model.log_likelihood(&up, &data, &draws).unwrap()
                - model.log_likelihood(&dn, &data, &draws).unwrap()) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() <= f64::max(1e-6, 1e-4 * fd.abs()), "k={} analytic {} fd {}", k, g[k], fd);
        }
    }

    #[test]
    fn observation_scores_sum_to_gradient(shift in proptest::collection::vec(-1.0f64..1.0, 12)) {
        let (model, data, draws, truth) = setup();
        let p: Vec<f64> = truth.iter().zip(&shift).map(|(t, s)| t + s).collect();
        let g = model.gradient(&p, &data, &draws).unwrap();
        let scores = model.observation_gradients(&p, &data, &draws).unwrap();
        for k in 0..p.len() {
            let total: f64 = scores.iter().map(|s| s[k]).sum();
            prop_assert!((total - g[k]).abs() <= 1e-9 * (1.0 + g[k].abs()));
        }
    }
}

#[test]
fn log_likelihood_is_thread_count_invariant() {
    let (model, data, draws, truth) = setup();
    let a = model.log_likelihood_and_gradient(&truth, &data, &draws).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| model.log_likelihood_and_gradient(&truth, &data, &draws).unwrap());
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn observation_order_changes_nothing_but_rounding() {
    let (model, data, draws, truth) = setup();
    let order: Vec<usize> = (0..data.len()).rev().collect();
    let a = model.log_likelihood(&truth, &data, &draws).unwrap();
    let b = model
        .log_likelihood(&truth, &data.reordered(&order), &draws.select(&order))
        .unwrap();
    assert!((a - b).abs() < 1e-10);
}
