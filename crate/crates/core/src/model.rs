//! Model specifications and the packed parameter layout.
//!
//! A [`ModelSpec`] says which covariate enters which alternative's utility,
//! which coefficients are normally distributed across observations, which
//! covariates shift the mean of a random coefficient, and which random
//! coefficients may covary. The base alternative has utility zero.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ChoiceDataset;
use crate::draws::DrawSettings;
use crate::error::{Error, Result};
use crate::fit::OptimizerSettings;
use crate::scalar::Scalar;

/// Variable name for an alternative-specific constant.
pub const CONSTANT: &str = "CONSTANT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Fixed,
    Random,
}

/// A single coefficient in one alternative's utility.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilityTerm {
    pub name: String,
    pub variable: String,
    pub alternative: usize,
    pub kind: TermKind,
}

/// Covariate shifting the mean of a random term.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeanShifter {
    pub term: String,
    pub variable: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub alternatives: Vec<String>,
    pub base_alternative: usize,
    pub terms: Vec<UtilityTerm>,
    pub mean_shifters: Vec<MeanShifter>,
    pub correlated_block: Vec<String>,
    pub draws: DrawSettings,
    pub optimizer: OptimizerSettings,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AltRef {
    Index(usize),
    Name(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(AltRef),
    Many(Vec<AltRef>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AlternativesSection {
    Names(Vec<String>),
    Full { names: Vec<String>, base: Option<AltRef> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    name: String,
    #[serde(default)]
    variable: Option<String>,
    #[serde(alias = "alternatives")]
    alternative: OneOrMany,
    #[serde(default = "default_kind")]
    kind: TermKind,
}

fn default_kind() -> TermKind {
    TermKind::Fixed
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    alternatives: AlternativesSection,
    terms: Vec<RawTerm>,
    #[serde(default)]
    mean_shifters: Vec<MeanShifter>,
    #[serde(default)]
    correlated_block: Vec<String>,
    #[serde(default)]
    draws: DrawSettings,
    #[serde(default)]
    optimizer: OptimizerSettings,
}

fn resolve_alt(names: &[String], r: &AltRef) -> Result<usize> {
    match r {
        AltRef::Index(i) if *i < names.len() => Ok(*i),
        AltRef::Index(i) => Err(Error::UnknownName {
            name: i.to_string(),
            context: "alternative index".into(),
        }),
        AltRef::Name(n) => names.iter().position(|a| a == n).ok_or_else(|| Error::UnknownName {
            name: n.clone(),
            context: "alternative".into(),
        }),
    }
}

/// Parses a JSON model specification and checks its internal consistency.
///
/// A term listing several alternatives expands into one term per
/// alternative, named `name:alternative`.
pub fn parse_model_spec(text: &str) -> Result<ModelSpec> {
    let raw: RawSpec = serde_json::from_str(text)?;
    let (alternatives, base) = match raw.alternatives {
        AlternativesSection::Names(n) => (n, None),
        AlternativesSection::Full { names, base } => (names, base),
    };
    let base_alternative = match base {
        Some(b) => resolve_alt(&alternatives, &b)?,
        None => 0,
    };
    let mut terms = Vec::new();
    for t in raw.terms {
        let alts = match t.alternative {
            OneOrMany::One(a) => vec![a],
            OneOrMany::Many(v) => v,
        };
        let expand = alts.len() > 1;
        for a in &alts {
            let alternative = resolve_alt(&alternatives, a)?;
            let name = if expand {
                format!("{}:{}", t.name, alternatives[alternative])
            } else {
                t.name.clone()
            };
            terms.push(UtilityTerm {
                name,
                variable: t.variable.clone().unwrap_or_else(|| t.name.clone()),
                alternative,
                kind: t.kind,
            });
        }
    }
    let spec = ModelSpec {
        alternatives,
        base_alternative,
        terms,
        mean_shifters: raw.mean_shifters,
        correlated_block: raw.correlated_block,
        draws: raw.draws,
        optimizer: raw.optimizer,
    };
    spec.check()?;
    Ok(spec)
}

impl ModelSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        parse_model_spec(&text)
    }

    /// Structural checks that do not need data.
    pub fn check(&self) -> Result<()> {
        if self.alternatives.len() < 2 {
            return Err(Error::Spec("at least two alternatives are required".into()));
        }
        if self.base_alternative >= self.alternatives.len() {
            return Err(Error::Spec("base alternative out of range".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.terms {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Spec(format!("duplicate term name `{}`", t.name)));
            }
            if t.alternative >= self.alternatives.len() {
                return Err(Error::Spec(format!("term `{}` has an invalid alternative", t.name)));
            }
            if t.alternative == self.base_alternative {
                return Err(Error::Spec(format!(
                    "term `{}` is attached to the base alternative `{}`",
                    t.name, self.alternatives[t.alternative]
                )));
            }
        }
        for s in &self.mean_shifters {
            match self.term(&s.term) {
                None => {
                    return Err(Error::UnknownName {
                        name: s.term.clone(),
                        context: "mean shifter term".into(),
                    })
                }
                Some(t) if t.kind != TermKind::Random => {
                    return Err(Error::Spec(format!(
                        "mean shifter on `{}`, which is a fixed term",
                        s.term
                    )))
                }
                _ => {}
            }
        }
        let mut seen = BTreeSet::new();
        for b in &self.correlated_block {
            match self.term(b) {
                None => {
                    return Err(Error::UnknownName {
                        name: b.clone(),
                        context: "correlated block".into(),
                    })
                }
                Some(t) if t.kind != TermKind::Random => {
                    return Err(Error::Spec(format!(
                        "`{b}` is in the correlated block but declared fixed"
                    )))
                }
                _ => {}
            }
            if !seen.insert(b.as_str()) {
                return Err(Error::Spec(format!("`{b}` listed twice in the correlated block")));
            }
        }
        if self.random_terms().len() > crate::draws::MAX_RANDOM_TERMS {
            return Err(Error::Capacity {
                requested: self.random_terms().len(),
                max: crate::draws::MAX_RANDOM_TERMS,
            });
        }
        Ok(())
    }

    pub fn n_alternatives(&self) -> usize {
        self.alternatives.len()
    }

    pub fn term(&self, name: &str) -> Option<&UtilityTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Random terms in declaration order; this is also the draw column order.
    pub fn random_terms(&self) -> Vec<&UtilityTerm> {
        self.terms.iter().filter(|t| t.kind == TermKind::Random).collect()
    }

    pub fn n_random(&self) -> usize {
        self.terms.iter().filter(|t| t.kind == TermKind::Random).count()
    }

    /// Every variable name the model refers to, except the constant.
    pub fn referenced_variables(&self) -> BTreeSet<&str> {
        self.terms
            .iter()
            .map(|t| t.variable.as_str())
            .chain(self.mean_shifters.iter().map(|s| s.variable.as_str()))
            .filter(|v| *v != CONSTANT)
            .collect()
    }

    /// The same utility structure with every term fixed and no mixing.
    pub fn as_fixed(&self) -> ModelSpec {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.kind = TermKind::Fixed;
        }
        out.mean_shifters.clear();
        out.correlated_block.clear();
        out
    }

    /// Drops mean shifters and correlations, keeping random terms independent.
    pub fn as_uncorrelated_without_shifters(&self) -> ModelSpec {
        let mut out = self.clone();
        out.mean_shifters.clear();
        out.correlated_block.clear();
        out
    }

    pub fn layout(&self) -> ParamLayout {
        parameter_layout(self)
    }
}

/// What a packed parameter controls.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Fixed { term: String },
    RandomMean { term: String },
    Shifter { term: String, variable: String },
    /// Standard deviation element of an uncorrelated random term.
    StdDev { term: String },
    /// Element (row, col) of the lower-triangular factor of the correlated block.
    Cholesky { row: String, col: String },
}

impl ParamKind {
    pub fn is_cholesky_diagonal(&self) -> bool {
        match self {
            ParamKind::StdDev { .. } => true,
            ParamKind::Cholesky { row, col } => row == col,
            _ => false,
        }
    }
}

/// Flat parameter packing: fixed coefficients, random means, mean shifters,
/// standard deviations of uncorrelated random terms, then the correlated
/// block's lower-triangular factor in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    index: HashMap<String, usize>,
    pub n_fixed: usize,
    pub n_random: usize,
    pub n_shifters: usize,
    pub n_uncorrelated: usize,
    pub block_size: usize,
}

fn param_name(kind: &ParamKind) -> String {
    match kind {
        ParamKind::Fixed { term } => term.clone(),
        ParamKind::RandomMean { term } => format!("mean({term})"),
        ParamKind::Shifter { term, variable } => format!("shift({term}; {variable})"),
        ParamKind::StdDev { term } => format!("sd({term})"),
        ParamKind::Cholesky { row, col } => format!("chol({row}, {col})"),
    }
}

/// Deterministic packing order for `spec`.
pub fn parameter_layout(spec: &ModelSpec) -> ParamLayout {
    let mut kinds = Vec::new();
    for t in spec.terms.iter().filter(|t| t.kind == TermKind::Fixed) {
        kinds.push(ParamKind::Fixed { term: t.name.clone() });
    }
    let random = spec.random_terms();
    for t in &random {
        kinds.push(ParamKind::RandomMean { term: t.name.clone() });
    }
    for s in &spec.mean_shifters {
        kinds.push(ParamKind::Shifter {
            term: s.term.clone(),
            variable: s.variable.clone(),
        });
    }
    let in_block: BTreeSet<&str> = spec.correlated_block.iter().map(String::as_str).collect();
    let mut n_uncorrelated = 0;
    for t in random.iter().filter(|t| !in_block.contains(t.name.as_str())) {
        kinds.push(ParamKind::StdDev { term: t.name.clone() });
        n_uncorrelated += 1;
    }
    for (p, row) in spec.correlated_block.iter().enumerate() {
        for col in &spec.correlated_block[..=p] {
            kinds.push(ParamKind::Cholesky {
                row: row.clone(),
                col: col.clone(),
            });
        }
    }
    let names: Vec<String> = kinds.iter().map(param_name).collect();
    let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    ParamLayout {
        names,
        kinds,
        index,
        n_fixed: spec.terms.len() - random.len(),
        n_random: random.len(),
        n_shifters: spec.mean_shifters.len(),
        n_uncorrelated,
        block_size: spec.correlated_block.len(),
    }
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ParamKind] {
        &self.kinds
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name_of(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn mean_offset(&self) -> usize {
        self.n_fixed
    }

    pub fn shifter_offset(&self) -> usize {
        self.n_fixed + self.n_random
    }

    pub fn sd_offset(&self) -> usize {
        self.shifter_offset() + self.n_shifters
    }

    pub fn block_offset(&self) -> usize {
        self.sd_offset() + self.n_uncorrelated
    }

    /// Index of element (p, q), q <= p, of the correlated block's factor.
    pub fn block_index(&self, p: usize, q: usize) -> usize {
        debug_assert!(q <= p && p < self.block_size);
        self.block_offset() + p * (p + 1) / 2 + q
    }

    /// Named view of a flat vector.
    pub fn unpack<T: Scalar>(&self, values: &[T]) -> Result<BTreeMap<String, T>> {
        if values.len() != self.len() {
            return Err(Error::LayoutMismatch {
                expected: self.len(),
                actual: values.len(),
            });
        }
        Ok(self.names.iter().cloned().zip(values.iter().copied()).collect())
    }

    /// Flat vector from a named map; every layout name must be present.
    pub fn pack<T: Scalar>(&self, named: &BTreeMap<String, T>) -> Result<Vec<T>> {
        if let Some(extra) = named.keys().find(|k| !self.index.contains_key(*k)) {
            return Err(Error::UnknownName {
                name: extra.clone(),
                context: "parameter".into(),
            });
        }
        self.names
            .iter()
            .map(|n| {
                named.get(n).copied().ok_or_else(|| Error::UnknownName {
                    name: n.clone(),
                    context: "missing parameter value".into(),
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueSeverity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: IssueSeverity,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == IssueSeverity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == IssueSeverity::Warning)
    }

    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    fn push(&mut self, severity: IssueSeverity, message: String) {
        self.issues.push(ValidationIssue { severity, message });
    }
}

/// Checks a spec against a dataset. Never fails; problems are reported.
pub fn validate_spec<T: Scalar>(spec: &ModelSpec, data: &ChoiceDataset<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    if spec.n_alternatives() != data.n_alternatives() {
        report.push(
            IssueSeverity::Error,
            format!(
                "spec has {} alternatives, data has {}",
                spec.n_alternatives(),
                data.n_alternatives()
            ),
        );
    }
    for t in &spec.terms {
        if t.alternative == spec.base_alternative {
            report.push(
                IssueSeverity::Error,
                format!("term `{}` is attached to the base alternative", t.name),
            );
        }
    }
    let mut warned = BTreeSet::new();
    for var in spec.referenced_variables() {
        match data.variable_index(var) {
            None => report.push(
                IssueSeverity::Error,
                format!("variable `{var}` is not in the dataset"),
            ),
            Some(j) => {
                let first = data.observations().first().map(|o| o.x[j]);
                let constant = data.observations().iter().all(|o| Some(o.x[j]) == first);
                if constant && warned.insert(var) {
                    report.push(
                        IssueSeverity::Warning,
                        format!("variable `{var}` has zero variance in the data"),
                    );
                }
            }
        }
    }
    report
}
