//! Mixed logit models for injury severity data:
//! multinomial logit, random parameters logit, heterogeneity in the means of
//! the random parameters, and correlated random parameters, estimated by
//! maximum simulated likelihood over Halton draws.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod compare;
pub mod data;
pub mod draws;
pub mod error;
pub mod fit;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod post;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use compare::{aic, chi2_survival, lr_test, pseudo_r2, transferability_df, transferability_test, TestResult};
pub use data::{load_dataset, load_encoded_dataset, CodingSchema, LoadReport};
pub use draws::{make_draws, DrawSettings};
pub use error::{Error, Result};
pub use fit::{maximize, null_log_likelihood, OptimizerSettings};
pub use likelihood::BoundModel;
pub use model::{parse_model_spec, validate_spec, ModelSpec, ParamLayout, TermKind};
pub use post::{distribution_shares, marginal_effect};
pub use report::{FitReport, RunManifest};
pub use scalar::Scalar;
pub use synth::{generate_dataset, recovery_report, TruthConfig};

pub type ChoiceDataset = data::ChoiceDataset<f64>;
pub type Observation = data::Observation<f64>;
pub type DrawTensor = draws::DrawTensor<f64>;
pub type ParamVector = likelihood::ParamVector<f64>;
pub type FitResult = fit::FitResult<f64>;
pub type EffectsReport = post::EffectsReport<f64>;
pub type Report = report::FitReport<f64>;

pub type ChoiceDatasetF32 = data::ChoiceDataset<f32>;
pub type FitResultF32 = fit::FitResult<f32>;
