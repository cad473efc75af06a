//! Occupant-level choice data: loading, dummy coding and validation.
//!
//! Two on-disk layouts are supported. A *raw* table carries categorical
//! columns that are expanded into dummies through a [`CodingSchema`]; an
//! *encoded* table already holds one 0/1 column per dummy variable (this is
//! what the simulator writes). Both carry a `severity` and a `crash_id`
//! column.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_SEVERITY_COLUMN: &str = "severity";
pub const DEFAULT_CRASH_ID_COLUMN: &str = "crash_id";

const DEFAULT_SCHEMA_JSON: &str = include_str!("../schemas/rear_end_occupant.json");

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// One occupant row before dummy coding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub severity_label: String,
    pub covariates: BTreeMap<String, String>,
    pub crash_id: String,
    pub occupant_id: Option<String>,
}

/// Mapping from raw outcome labels to the modelled outcome categories.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SeverityCoding {
    #[serde(default = "default_severity_column")]
    pub column: String,
    /// Category names in alternative-index order.
    pub categories: Vec<String>,
    /// Raw label to category name. Category names always map to themselves.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    /// Category whose utility is normalized to zero; defaults to the first.
    #[serde(default)]
    pub base: Option<String>,
}

fn default_severity_column() -> String {
    DEFAULT_SEVERITY_COLUMN.to_string()
}

fn default_crash_id_column() -> String {
    DEFAULT_CRASH_ID_COLUMN.to_string()
}

fn default_sentinels() -> Vec<String> {
    vec!["unknown".into(), "not reported".into(), String::new()]
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LevelCoding {
    pub level: String,
    pub dummy: String,
}

/// A categorical column and the dummies it expands into. The base level
/// emits no column.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct VariableCoding {
    pub column: String,
    pub base: String,
    pub levels: Vec<LevelCoding>,
}

/// Coding table for a raw occupant file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CodingSchema {
    pub severity: SeverityCoding,
    #[serde(default = "default_crash_id_column")]
    pub crash_id_column: String,
    #[serde(default)]
    pub occupant_id_column: Option<String>,
    #[serde(default = "default_sentinels")]
    pub unknown_sentinels: Vec<String>,
    pub variables: Vec<VariableCoding>,
}

impl CodingSchema {
    /// The rear-end occupant coding shipped with the crate (three severity
    /// categories, 19 categorical columns, 32 dummies).
    pub fn rear_end_default() -> Self {
        serde_json::from_str(DEFAULT_SCHEMA_JSON).expect("bundled schema is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: CodingSchema = serde_json::from_str(text)?;
        schema.check()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        if self.severity.categories.len() < 2 {
            return Err(Error::Schema("at least two severity categories are required".into()));
        }
        for target in self.severity.labels.values() {
            if !self.severity.categories.iter().any(|c| normalize(c) == normalize(target)) {
                return Err(Error::Schema(format!(
                    "severity label maps to undeclared category `{target}`"
                )));
            }
        }
        if let Some(base) = &self.severity.base {
            if !self.severity.categories.iter().any(|c| normalize(c) == normalize(base)) {
                return Err(Error::Schema(format!("base category `{base}` is not declared")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.variables {
            for l in &v.levels {
                if normalize(&l.level) == normalize(&v.base) {
                    return Err(Error::Schema(format!(
                        "variable `{}` declares its base level `{}` as a dummy",
                        v.column, v.base
                    )));
                }
                if !seen.insert(l.dummy.clone()) {
                    return Err(Error::Schema(format!("dummy `{}` declared twice", l.dummy)));
                }
            }
        }
        Ok(())
    }

    /// Dummy column names in emission order.
    pub fn dummy_names(&self) -> Vec<String> {
        self.variables
            .iter()
            .flat_map(|v| v.levels.iter().map(|l| l.dummy.clone()))
            .collect()
    }

    pub fn base_category(&self) -> usize {
        self.severity
            .base
            .as_ref()
            .and_then(|b| {
                self.severity
                    .categories
                    .iter()
                    .position(|c| normalize(c) == normalize(b))
            })
            .unwrap_or(0)
    }

    fn is_sentinel(&self, value: &str) -> bool {
        let v = normalize(value);
        self.unknown_sentinels.iter().any(|s| normalize(s) == v)
    }

    /// Maps a raw severity label to its category index.
    pub fn severity_index(&self, label: &str) -> Option<usize> {
        let key = normalize(label);
        let category = self
            .severity
            .labels
            .iter()
            .find(|(raw, _)| normalize(raw) == key)
            .map(|(_, cat)| normalize(cat))
            .unwrap_or(key);
        self.severity
            .categories
            .iter()
            .position(|c| normalize(c) == category)
    }

    /// Recovers the categorical level of variable `var` from its slice of a
    /// dummy vector. Returns the base level when no dummy is set.
    pub fn decode(&self, var: usize, dummies: &[f64]) -> Option<&str> {
        let coding = self.variables.get(var)?;
        let offset: usize = self.variables[..var].iter().map(|v| v.levels.len()).sum();
        let slice = dummies.get(offset..offset + coding.levels.len())?;
        match slice.iter().position(|&d| d == 1.0) {
            Some(i) => Some(&coding.levels[i].level),
            None => Some(&coding.base),
        }
    }
}

/// Expands one record into its dense dummy vector.
pub fn encode_dummies<T: Scalar>(record: &RawRecord, schema: &CodingSchema) -> Result<Vec<T>> {
    let mut x = Vec::with_capacity(schema.variables.iter().map(|v| v.levels.len()).sum());
    for var in &schema.variables {
        let value = record
            .covariates
            .get(&var.column)
            .ok_or_else(|| Error::MissingColumn(var.column.clone()))?;
        let key = normalize(value);
        let hit = var.levels.iter().position(|l| normalize(&l.level) == key);
        if hit.is_none() && normalize(&var.base) != key {
            return Err(Error::UnknownLevel {
                variable: var.column.clone(),
                level: value.clone(),
            });
        }
        x.extend((0..var.levels.len()).map(|i| if Some(i) == hit { T::one() } else { T::zero() }));
    }
    Ok(x)
}

/// One occupant after coding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub chosen: usize,
    pub x: Vec<T>,
    pub crash_id: String,
}

/// Immutable, validated occupant-level choice data.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceDataset<T> {
    observations: Vec<Observation<T>>,
    variable_names: Vec<String>,
    alternative_names: Vec<String>,
    base_alternative: usize,
}

impl<T: Scalar> ChoiceDataset<T> {
    /// Builds a dataset, checking every structural invariant.
    pub fn new(
        observations: Vec<Observation<T>>,
        variable_names: Vec<String>,
        alternative_names: Vec<String>,
        base_alternative: usize,
    ) -> Result<Self> {
        let n_alt = alternative_names.len();
        if n_alt < 2 {
            return Err(Error::Argument("a choice dataset needs at least two alternatives".into()));
        }
        if base_alternative >= n_alt {
            return Err(Error::Argument(format!("base alternative {base_alternative} out of range")));
        }
        for (row, obs) in observations.iter().enumerate() {
            if obs.chosen >= n_alt {
                return Err(Error::Value {
                    row: row + 1,
                    message: format!("chosen alternative {} out of range", obs.chosen),
                });
            }
            if obs.x.len() != variable_names.len() {
                return Err(Error::Value {
                    row: row + 1,
                    message: format!(
                        "covariate vector has {} entries, expected {}",
                        obs.x.len(),
                        variable_names.len()
                    ),
                });
            }
            if let Some(v) = obs.x.iter().find(|&&v| v != T::zero() && v != T::one()) {
                return Err(Error::Value {
                    row: row + 1,
                    message: format!("dummy value {v} is not 0 or 1"),
                });
            }
        }
        Ok(Self {
            observations,
            variable_names,
            alternative_names,
            base_alternative,
        })
    }

    pub fn observations(&self) -> &[Observation<T>] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn alternative_names(&self) -> &[String] {
        &self.alternative_names
    }

    pub fn n_alternatives(&self) -> usize {
        self.alternative_names.len()
    }

    pub fn base_alternative(&self) -> usize {
        self.base_alternative
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variable_names.iter().position(|v| v == name)
    }

    /// Copy of the dataset with variable `var` set to `value` everywhere.
    pub fn with_variable_forced(&self, var: usize, value: T) -> Self {
        let mut out = self.clone();
        for obs in &mut out.observations {
            obs.x[var] = value;
        }
        out
    }

    /// Copy with the chosen alternative replaced on every observation.
    pub fn with_chosen(&self, alternative: usize) -> Self {
        let mut out = self.clone();
        for obs in &mut out.observations {
            obs.chosen = alternative;
        }
        out
    }

    /// Observations in the given index order.
    pub fn reordered(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.observations = order.iter().map(|&i| self.observations[i].clone()).collect();
        out
    }

    /// Stacks two datasets with identical variables and alternatives.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.variable_names != other.variable_names
            || self.alternative_names != other.alternative_names
            || self.base_alternative != other.base_alternative
        {
            return Err(Error::Argument("datasets have different layouts".into()));
        }
        let mut out = self.clone();
        out.observations.extend(other.observations.iter().cloned());
        Ok(out)
    }

    /// Share of observations choosing each alternative.
    pub fn choice_shares(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_alternatives()];
        for obs in &self.observations {
            counts[obs.chosen] += 1;
        }
        let n = self.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Writes the dataset in the encoded layout (one 0/1 column per dummy).
    pub fn write_encoded_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec![DEFAULT_SEVERITY_COLUMN.to_string(), DEFAULT_CRASH_ID_COLUMN.to_string()];
        header.extend(self.variable_names.iter().cloned());
        w.write_record(&header)?;
        for obs in &self.observations {
            let mut row = vec![self.alternative_names[obs.chosen].clone(), obs.crash_id.clone()];
            row.extend(obs.x.iter().map(|v| if *v == T::one() { "1".to_string() } else { "0".to_string() }));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }
}

/// Counts produced while loading a file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub kept: usize,
    pub dropped: usize,
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

/// Reads the raw records of a delimited file, in file order.
pub fn read_raw_records(path: impl AsRef<Path>, schema: &CodingSchema) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr.headers()?.clone();
    let severity_col = header_index(&headers, &schema.severity.column)?;
    let crash_col = header_index(&headers, &schema.crash_id_column)?;
    let occupant_col = match &schema.occupant_id_column {
        Some(c) => headers.iter().position(|h| h.trim() == c),
        None => None,
    };
    let var_cols = schema
        .variables
        .iter()
        .map(|v| header_index(&headers, &v.column).map(|i| (v.column.clone(), i)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("").to_string();
        out.push(RawRecord {
            severity_label: get(severity_col),
            covariates: var_cols.iter().map(|(name, i)| (name.clone(), get(*i))).collect(),
            crash_id: get(crash_col),
            occupant_id: occupant_col.map(get),
        });
    }
    Ok(out)
}

/// Loads and dummy-codes a raw occupant file. Rows carrying an unknown
/// sentinel in the outcome or any coded covariate are dropped.
pub fn load_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    schema: &CodingSchema,
) -> Result<(ChoiceDataset<T>, LoadReport)> {
    let records = read_raw_records(path, schema)?;
    let mut report = LoadReport {
        rows_read: records.len(),
        ..Default::default()
    };
    let mut observations = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if schema.is_sentinel(&rec.severity_label)
            || rec.covariates.values().any(|v| schema.is_sentinel(v))
        {
            report.dropped += 1;
            continue;
        }
        let chosen = schema.severity_index(&rec.severity_label).ok_or_else(|| Error::Value {
            row: i + 1,
            message: format!("unmappable severity label `{}`", rec.severity_label),
        })?;
        let x = encode_dummies(rec, schema)?;
        observations.push(Observation {
            chosen,
            x,
            crash_id: rec.crash_id.clone(),
        });
    }
    report.kept = observations.len();
    if observations.is_empty() {
        return Err(Error::EmptyDataset {
            dropped: report.dropped,
        });
    }
    let ds = ChoiceDataset::new(
        observations,
        schema.dummy_names(),
        schema.severity.categories.clone(),
        schema.base_category(),
    )?;
    Ok((ds, report))
}

/// Loads a file whose covariate columns are already 0/1 dummies. Every
/// column other than `severity` and `crash_id` is a variable. Severity
/// values must name one of `alternatives`.
pub fn load_encoded_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    alternatives: &[String],
    base_alternative: usize,
) -> Result<(ChoiceDataset<T>, LoadReport)> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr.headers()?.clone();
    let severity_col = header_index(&headers, DEFAULT_SEVERITY_COLUMN)?;
    let crash_col = header_index(&headers, DEFAULT_CRASH_ID_COLUMN)?;
    let var_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != severity_col && *i != crash_col)
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();
    let sentinels = default_sentinels();
    let is_sentinel = |v: &str| sentinels.iter().any(|s| normalize(s) == normalize(v));

    let mut report = LoadReport::default();
    let mut observations = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        report.rows_read += 1;
        let field = |c: usize| row.get(c).unwrap_or("");
        let label = field(severity_col);
        if is_sentinel(label) || var_cols.iter().any(|(c, _)| is_sentinel(field(*c))) {
            report.dropped += 1;
            continue;
        }
        let chosen = alternatives
            .iter()
            .position(|a| normalize(a) == normalize(label))
            .ok_or_else(|| Error::Value {
                row: i + 1,
                message: format!("unmappable severity label `{label}`"),
            })?;
        let x = var_cols
            .iter()
            .map(|(c, name)| match field(*c).trim() {
                "1" | "1.0" => Ok(T::one()),
                "0" | "0.0" => Ok(T::zero()),
                other => Err(Error::Value {
                    row: i + 1,
                    message: format!("column `{name}` holds non-dummy value `{other}`"),
                }),
            })
            .collect::<Result<Vec<T>>>()?;
        observations.push(Observation {
            chosen,
            x,
            crash_id: field(crash_col).to_string(),
        });
    }
    report.kept = observations.len();
    if observations.is_empty() {
        return Err(Error::EmptyDataset {
            dropped: report.dropped,
        });
    }
    let ds = ChoiceDataset::new(
        observations,
        var_cols.into_iter().map(|(_, n)| n).collect(),
        alternatives.to_vec(),
        base_alternative,
    )?;
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn record(pairs: &[(&str, &str)]) -> RawRecord {
        let schema = CodingSchema::rear_end_default();
        let mut covariates: BTreeMap<String, String> = schema
            .variables
            .iter()
            .map(|v| (v.column.clone(), v.base.clone()))
            .collect();
        for (k, v) in pairs {
            covariates.insert(k.to_string(), v.to_string());
        }
        RawRecord {
            severity_label: "minor".into(),
            covariates,
            crash_id: "c1".into(),
            occupant_id: None,
        }
    }

    fn dummy(schema: &CodingSchema, x: &[f64], name: &str) -> f64 {
        let idx = schema.dummy_names().iter().position(|n| n == name).unwrap();
        x[idx]
    }

    #[test]
    fn bundled_schema_has_32_dummies() {
        let schema = CodingSchema::rear_end_default();
        assert_eq!(schema.dummy_names().len(), 32);
        assert_eq!(schema.severity.categories, vec!["minor", "serious", "fatal"]);
    }

    #[test]
    fn base_levels_emit_nothing() {
        let schema = CodingSchema::rear_end_default();
        let x: Vec<f64> = encode_dummies(&record(&[("light_condition", "Daylight")]), &schema).unwrap();
        assert_eq!(dummy(&schema, &x, "lighted"), 0.0);
        assert_eq!(dummy(&schema, &x, "dark"), 0.0);

        let x: Vec<f64> = encode_dummies(&record(&[("seat_position", "Second")]), &schema).unwrap();
        assert_eq!(dummy(&schema, &x, "driver_position"), 0.0);
        assert_eq!(dummy(&schema, &x, "front_right"), 0.0);
    }

    #[test]
    fn non_base_level_is_one_hot() {
        let schema = CodingSchema::rear_end_default();
        let x: Vec<f64> = encode_dummies(&record(&[("light_condition", "Lighted")]), &schema).unwrap();
        assert_eq!(dummy(&schema, &x, "lighted"), 1.0);
        assert_eq!(dummy(&schema, &x, "dark"), 0.0);
        assert_eq!(x.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn unknown_level_is_rejected() {
        let schema = CodingSchema::rear_end_default();
        let err = encode_dummies::<f64>(&record(&[("light_condition", "twilight")]), &schema).unwrap_err();
        match err {
            Error::UnknownLevel { variable, level } => {
                assert_eq!(variable, "light_condition");
                assert_eq!(level, "twilight");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decode_inverts_encode() {
        let schema = CodingSchema::rear_end_default();
        for (vi, var) in schema.variables.iter().enumerate() {
            for level in var.levels.iter().map(|l| l.level.as_str()).chain([var.base.as_str()]) {
                let x: Vec<f64> = encode_dummies(&record(&[(&var.column, level)]), &schema).unwrap();
                assert_eq!(schema.decode(vi, &x), Some(level));
            }
        }
    }

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn small_schema() -> CodingSchema {
        CodingSchema::from_json(
            r#"{
              "severity": {"categories": ["minor", "serious", "fatal"]},
              "variables": [
                {"column": "seat", "base": "second",
                 "levels": [{"level": "driver", "dummy": "driver_position"},
                            {"level": "front_right", "dummy": "front_right"}]}
              ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn sentinel_rows_are_dropped() {
        let f = write_file(
            "severity,crash_id,seat\nminor,1,driver\nfatal,1,second\nserious,2,unknown\nminor,3,front_right\nfatal,4,driver\n",
        );
        let (ds, report) = load_dataset::<f64>(f.path(), &small_schema()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(report.dropped, 1);
        assert_eq!(report.kept, 4);
        assert_eq!(ds.observations()[1].chosen, 2);
    }

    #[test]
    fn fatal_only_file_maps_to_index_two() {
        let f = write_file("severity,crash_id,seat\nfatal,1,driver\nFatal,2,second\n");
        let (ds, _) = load_dataset::<f64>(f.path(), &small_schema()).unwrap();
        assert!(ds.observations().iter().all(|o| o.chosen == 2));
    }

    #[test]
    fn load_errors() {
        let f = write_file("severity,crash_id\nfatal,1\n");
        assert!(matches!(
            load_dataset::<f64>(f.path(), &small_schema()),
            Err(Error::MissingColumn(c)) if c == "seat"
        ));

        let f = write_file("severity,crash_id,seat\nfatal,1,driver\nbruised,2,driver\n");
        assert!(matches!(
            load_dataset::<f64>(f.path(), &small_schema()),
            Err(Error::Value { row: 2, .. })
        ));

        let f = write_file("severity,crash_id,seat\nunknown,1,driver\n");
        assert!(matches!(
            load_dataset::<f64>(f.path(), &small_schema()),
            Err(Error::EmptyDataset { dropped: 1 })
        ));
    }

    #[test]
    fn encoded_round_trip_through_csv() {
        let obs = vec![
            Observation { chosen: 0, x: vec![1.0, 0.0], crash_id: "a".into() },
            Observation { chosen: 2, x: vec![0.0, 1.0], crash_id: "b".into() },
        ];
        let alts: Vec<String> = ["minor", "serious", "fatal"].iter().map(|s| s.to_string()).collect();
        let ds = ChoiceDataset::new(obs, vec!["u".into(), "v".into()], alts.clone(), 0).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        ds.write_encoded_csv(f.path()).unwrap();
        let (back, _) = load_encoded_dataset::<f64>(f.path(), &alts, 0).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_rejects_non_dummy_values() {
        let obs = vec![Observation { chosen: 0, x: vec![0.5], crash_id: "a".into() }];
        assert!(ChoiceDataset::new(obs, vec!["u".into()], vec!["a".into(), "b".into()], 0).is_err());
    }
}
