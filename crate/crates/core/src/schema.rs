//! Feature schema shared by every state in a dataset.
//!
//! A dataset declares its feature layout once: an ordered list of categorical
//! features (each with a closed vocabulary), an ordered list of numeric
//! features, the action vocabulary, and the signal channel names. States then
//! carry only values, in schema order. Everything that needs to interpret a
//! state (ingestion, signal extractors, Q models, cohort filters) resolves
//! names against the schema up front and works with indices afterwards.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DataError;

/// One categorical feature: a name and its closed vocabulary.
/// Category ids are indices into `vocab`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub vocab: Vec<String>,
}

impl CategoricalFeature {
    pub fn cardinality(&self) -> usize {
        self.vocab.len()
    }

    /// Id for a category label, if it is in the vocabulary.
    pub fn id_of(&self, label: &str) -> Option<u32> {
        self.vocab.iter().position(|v| v == label).map(|i| i as u32)
    }
}

/// The per-dataset feature layout. Identical for every state in one
/// [`TrajectorySet`](crate::trajectory::TrajectorySet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical: Vec<CategoricalFeature>,
    pub numeric: Vec<String>,
    /// Action vocabulary; action ids are indices.
    pub actions: Vec<String>,
    pub signal_names: Vec<String>,
    /// Scale factor applied to each signal by normalization (1.0 = raw).
    /// `reported = raw / scale`.
    pub signal_scales: Vec<f64>,
}

impl FeatureSchema {
    pub fn new(
        categorical: Vec<CategoricalFeature>,
        numeric: Vec<String>,
        actions: Vec<String>,
        signal_names: Vec<String>,
    ) -> Self {
        let n = signal_names.len();
        Self {
            categorical,
            numeric,
            actions,
            signal_names,
            signal_scales: vec![1.0; n],
        }
    }

    pub fn n_signals(&self) -> usize {
        self.signal_names.len()
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn categorical_index(&self, name: &str) -> Result<usize, DataError> {
        self.categorical
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| DataError::UnknownFeature(name.to_string()))
    }

    pub fn numeric_index(&self, name: &str) -> Result<usize, DataError> {
        self.numeric
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| DataError::UnknownFeature(name.to_string()))
    }

    pub fn action_id(&self, label: &str) -> Option<u32> {
        self.actions.iter().position(|a| a == label).map(|i| i as u32)
    }

    /// Stable content hash used to pair persisted models with datasets.
    /// Excludes signal scales so normalization does not orphan models trained
    /// on the same layout.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let canonical = serde_json::to_string(&SchemaForHash {
            categorical: &self.categorical,
            numeric: &self.numeric,
            actions: &self.actions,
            signal_names: &self.signal_names,
        })
        .expect("schema serializes");
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

#[derive(Serialize)]
struct SchemaForHash<'a> {
    categorical: &'a [CategoricalFeature],
    numeric: &'a [String],
    actions: &'a [String],
    signal_names: &'a [String],
}

/// One observed state: categorical ids and numeric values in schema order,
/// plus the step timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub categorical: Vec<u32>,
    pub numeric: Vec<f64>,
    pub timestamp: i64,
}

impl StateVector {
    pub fn new(categorical: Vec<u32>, numeric: Vec<f64>, timestamp: i64) -> Self {
        Self {
            categorical,
            numeric,
            timestamp,
        }
    }

    /// Checks value shapes and categorical ranges against a schema.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), DataError> {
        if self.categorical.len() != schema.categorical.len()
            || self.numeric.len() != schema.numeric.len()
        {
            return Err(DataError::SchemaMismatch(format!(
                "state has {} categorical / {} numeric values, schema declares {} / {}",
                self.categorical.len(),
                self.numeric.len(),
                schema.categorical.len(),
                schema.numeric.len()
            )));
        }
        for (value, feature) in self.categorical.iter().zip(&schema.categorical) {
            if *value as usize >= feature.cardinality() {
                return Err(DataError::SchemaMismatch(format!(
                    "category id {} out of range for feature '{}' (cardinality {})",
                    value,
                    feature.name,
                    feature.cardinality()
                )));
            }
        }
        Ok(())
    }
}

/// Which features identify a state for tabular lookups and feasible-action
/// grouping. Numeric features are bracketed: `floor(value / width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateKeySpec {
    pub categorical: Vec<String>,
    #[serde(default)]
    pub numeric_brackets: Vec<NumericBracket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericBracket {
    pub feature: String,
    pub width: f64,
}

impl StateKeySpec {
    /// Keys on every categorical feature and no numeric ones.
    pub fn all_categorical(schema: &FeatureSchema) -> Self {
        Self {
            categorical: schema.categorical.iter().map(|f| f.name.clone()).collect(),
            numeric_brackets: Vec::new(),
        }
    }

    pub fn resolve(&self, schema: &FeatureSchema) -> Result<StateKeyFn, DataError> {
        let mut cat = Vec::with_capacity(self.categorical.len());
        for name in &self.categorical {
            cat.push(schema.categorical_index(name)?);
        }
        let mut num = Vec::with_capacity(self.numeric_brackets.len());
        for bracket in &self.numeric_brackets {
            if bracket.width <= 0.0 {
                return Err(DataError::SchemaMismatch(format!(
                    "bracket width for '{}' must be positive",
                    bracket.feature
                )));
            }
            num.push((schema.numeric_index(&bracket.feature)?, bracket.width));
        }
        Ok(StateKeyFn { cat, num })
    }
}

/// Resolved key extractor: schema indices instead of names.
#[derive(Debug, Clone)]
pub struct StateKeyFn {
    cat: Vec<usize>,
    num: Vec<(usize, f64)>,
}

/// A state's identity under a [`StateKeySpec`]. Ordered so tables keyed on it
/// iterate deterministically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey(pub Vec<i64>);

impl StateKeyFn {
    pub fn key(&self, state: &StateVector) -> StateKey {
        let mut parts = Vec::with_capacity(self.cat.len() + self.num.len());
        for &i in &self.cat {
            parts.push(i64::from(state.categorical[i]));
        }
        for &(i, width) in &self.num {
            parts.push((state.numeric[i] / width).floor() as i64);
        }
        StateKey(parts)
    }
}

impl std::fmt::Display for StateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, part) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{part}")?;
        }
        Ok(())
    }
}

/// A single comparison against one feature, e.g. `level >= 50` or
/// `class == Warrior`. Cohort filters are conjunctions of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePredicate {
    pub feature: String,
    pub op: PredicateOp,
    pub value: PredicateValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredicateOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredicateValue {
    Number(f64),
    Label(String),
}

impl FeaturePredicate {
    /// Parses the `<feature> <op> <value>` form used in config files.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let ops = ["==", "!=", ">=", "<=", ">", "<"];
        for op_text in ops {
            if let Some(pos) = text.find(op_text) {
                let feature = text[..pos].trim().to_string();
                let raw = text[pos + op_text.len()..].trim();
                if feature.is_empty() || raw.is_empty() {
                    break;
                }
                let op = match op_text {
                    "==" => PredicateOp::Eq,
                    "!=" => PredicateOp::Ne,
                    ">=" => PredicateOp::Ge,
                    "<=" => PredicateOp::Le,
                    ">" => PredicateOp::Gt,
                    "<" => PredicateOp::Lt,
                    _ => unreachable!(),
                };
                let value = match raw.parse::<f64>() {
                    Ok(n) => PredicateValue::Number(n),
                    Err(_) => PredicateValue::Label(raw.to_string()),
                };
                return Ok(Self { feature, op, value });
            }
        }
        Err(DataError::BadPredicate(text.to_string()))
    }

    pub fn resolve(&self, schema: &FeatureSchema) -> Result<ResolvedPredicate, DataError> {
        match &self.value {
            PredicateValue::Number(n) => {
                let idx = schema.numeric_index(&self.feature)?;
                Ok(ResolvedPredicate::Numeric(idx, self.op, *n))
            }
            PredicateValue::Label(label) => {
                let idx = schema.categorical_index(&self.feature)?;
                let id = schema.categorical[idx].id_of(label).ok_or_else(|| {
                    DataError::BadPredicate(format!(
                        "'{}' is not in the vocabulary of '{}'",
                        label, self.feature
                    ))
                })?;
                match self.op {
                    PredicateOp::Eq | PredicateOp::Ne => {}
                    _ => {
                        return Err(DataError::BadPredicate(format!(
                            "categorical feature '{}' only supports == and !=",
                            self.feature
                        )))
                    }
                }
                Ok(ResolvedPredicate::Categorical(idx, self.op, id))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum ResolvedPredicate {
    Numeric(usize, PredicateOp, f64),
    Categorical(usize, PredicateOp, u32),
}

impl ResolvedPredicate {
    pub fn matches(&self, state: &StateVector) -> bool {
        match self {
            ResolvedPredicate::Numeric(idx, op, rhs) => {
                let lhs = state.numeric[*idx];
                match op {
                    PredicateOp::Eq => lhs == *rhs,
                    PredicateOp::Ne => lhs != *rhs,
                    PredicateOp::Lt => lhs < *rhs,
                    PredicateOp::Le => lhs <= *rhs,
                    PredicateOp::Gt => lhs > *rhs,
                    PredicateOp::Ge => lhs >= *rhs,
                }
            }
            ResolvedPredicate::Categorical(idx, op, rhs) => {
                let lhs = state.categorical[*idx];
                match op {
                    PredicateOp::Eq => lhs == *rhs,
                    PredicateOp::Ne => lhs != *rhs,
                    _ => false,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![CategoricalFeature {
                name: "class".into(),
                vocab: vec!["Warrior".into(), "Priest".into()],
            }],
            vec!["level".into()],
            vec!["stay".into(), "move".into()],
            vec!["advancement".into()],
        )
    }

    #[test]
    fn key_extracts_in_spec_order() {
        let schema = schema();
        let spec = StateKeySpec {
            categorical: vec!["class".into()],
            numeric_brackets: vec![NumericBracket {
                feature: "level".into(),
                width: 10.0,
            }],
        };
        let key_fn = spec.resolve(&schema).unwrap();
        let state = StateVector::new(vec![1], vec![57.0], 0);
        assert_eq!(key_fn.key(&state), StateKey(vec![1, 5]));
    }

    #[test]
    fn predicate_parsing_and_matching() {
        let schema = schema();
        let pred = FeaturePredicate::parse("level >= 50").unwrap();
        let resolved = pred.resolve(&schema).unwrap();
        assert!(resolved.matches(&StateVector::new(vec![0], vec![50.0], 0)));
        assert!(!resolved.matches(&StateVector::new(vec![0], vec![49.0], 0)));

        let pred = FeaturePredicate::parse("class == Priest").unwrap();
        let resolved = pred.resolve(&schema).unwrap();
        assert!(resolved.matches(&StateVector::new(vec![1], vec![1.0], 0)));
        assert!(!resolved.matches(&StateVector::new(vec![0], vec![1.0], 0)));
    }

    #[test]
    fn predicate_rejects_order_comparison_on_categorical() {
        let schema = schema();
        let pred = FeaturePredicate::parse("class >= Priest").unwrap();
        assert!(pred.resolve(&schema).is_err());
    }

    #[test]
    fn state_validation_catches_out_of_range_category() {
        let schema = schema();
        let bad = StateVector::new(vec![2], vec![1.0], 0);
        assert!(bad.validate(&schema).is_err());
    }

    #[test]
    fn schema_hash_ignores_signal_scales() {
        let mut a = schema();
        let hash = a.content_hash();
        a.signal_scales = vec![3.5];
        assert_eq!(a.content_hash(), hash);
    }
}
