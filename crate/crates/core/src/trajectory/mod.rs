//! Canonical data model for logged agent trajectories.
//!
//! A [`TrajectorySet`] is an immutable, validated collection of
//! [`Transition`]s sharing one [`FeatureSchema`]. Construction validates;
//! everything downstream (signal extraction, Q training, the LP) can then
//! assume shape invariants hold. Windowing and feasible-action inference are
//! pure functions of a set.

mod format;
mod ingest;

pub use format::{read_trajectory_file, write_trajectory_file};
pub use ingest::{ingest_log, ActionSource, IngestReport, IngestSchema, RowIssue};

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::schema::{FeatureSchema, StateKey, StateKeyFn, StateVector};

/// One logged step: the state seen, the action taken, the successor state
/// (absent at episode ends), and the per-motivation signal vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub agent: String,
    pub state: StateVector,
    pub action: u32,
    pub next_state: Option<StateVector>,
    pub signals: Vec<f64>,
}

impl Transition {
    pub fn timestamp(&self) -> i64 {
        self.state.timestamp
    }
}

/// An ordered, schema-validated collection of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    schema: FeatureSchema,
    transitions: Vec<Transition>,
}

impl TrajectorySet {
    /// Validates every transition against the schema and the set-level
    /// invariants (fixed signal length, per-agent non-decreasing timestamps).
    pub fn new(schema: FeatureSchema, transitions: Vec<Transition>) -> Result<Self, DataError> {
        let n = schema.n_signals();
        let mut last_seen: BTreeMap<&str, i64> = BTreeMap::new();
        for (i, t) in transitions.iter().enumerate() {
            t.state.validate(&schema)?;
            if let Some(next) = &t.next_state {
                next.validate(&schema)?;
            }
            if t.signals.len() != n {
                return Err(DataError::SchemaMismatch(format!(
                    "transition {} has {} signals, schema declares {}",
                    i,
                    t.signals.len(),
                    n
                )));
            }
            if t.action as usize >= schema.action_count() {
                return Err(DataError::SchemaMismatch(format!(
                    "transition {} action id {} out of range ({} actions declared)",
                    i,
                    t.action,
                    schema.action_count()
                )));
            }
            if let Some(prev) = last_seen.get(t.agent.as_str()) {
                if t.timestamp() < *prev {
                    return Err(DataError::SchemaMismatch(format!(
                        "agent '{}' has decreasing timestamps ({} after {})",
                        t.agent,
                        t.timestamp(),
                        prev
                    )));
                }
            }
            last_seen.insert(t.agent.as_str(), t.timestamp());
        }
        Ok(Self {
            schema,
            transitions,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_signals(&self) -> usize {
        self.schema.n_signals()
    }

    pub fn action_count(&self) -> usize {
        self.schema.action_count()
    }

    pub fn signal_names(&self) -> &[String] {
        &self.schema.signal_names
    }

    /// Replaces the signal columns wholesale. Used by signal extraction;
    /// lengths must match the schema.
    pub(crate) fn with_signals(
        &self,
        schema: FeatureSchema,
        signals: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        assert_eq!(signals.len(), self.transitions.len());
        let transitions = self
            .transitions
            .iter()
            .zip(signals)
            .map(|(t, s)| Transition {
                signals: s,
                ..t.clone()
            })
            .collect();
        Self::new(schema, transitions)
    }

    /// Transitions whose timestamp falls in `[t_start, t_end)`. The schema is
    /// preserved; the result may be empty.
    pub fn window(&self, t_start: i64, t_end: i64) -> Self {
        let transitions = self
            .transitions
            .iter()
            .filter(|t| t.timestamp() >= t_start && t.timestamp() < t_end)
            .cloned()
            .collect();
        Self {
            schema: self.schema.clone(),
            transitions,
        }
    }

    /// Keeps transitions whose *state* matches every predicate.
    pub fn filter_states(&self, predicates: &[crate::schema::ResolvedPredicate]) -> Self {
        let transitions = self
            .transitions
            .iter()
            .filter(|t| predicates.iter().all(|p| p.matches(&t.state)))
            .cloned()
            .collect();
        Self {
            schema: self.schema.clone(),
            transitions,
        }
    }

    /// Minimum and maximum state timestamps, if non-empty.
    pub fn time_span(&self) -> Option<(i64, i64)> {
        let mut iter = self.transitions.iter().map(Transition::timestamp);
        let first = iter.next()?;
        let (mut lo, mut hi) = (first, first);
        for t in iter {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        Some((lo, hi))
    }

    /// Sorted distinct agent ids.
    pub fn agents(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.transitions.iter().map(|t| t.agent.as_str()).collect();
        set.into_iter().collect()
    }

    /// Indices of each agent's transitions, in dataset order.
    pub fn by_agent(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.transitions.iter().enumerate() {
            map.entry(t.agent.as_str()).or_default().push(i);
        }
        map
    }

    /// A new set with a subset of transitions, by index. Indices must be
    /// sorted if per-agent timestamp order is to be preserved.
    pub fn select(&self, indices: &[usize]) -> Self {
        let transitions = indices
            .iter()
            .map(|&i| self.transitions[i].clone())
            .collect();
        Self {
            schema: self.schema.clone(),
            transitions,
        }
    }
}

/// How to obtain the feasible-action sets.
#[derive(Debug, Clone)]
pub enum FeasibleActionMode {
    /// Use the observed data: for each state key, the union of actions taken
    /// anywhere from states sharing that key.
    Inferred,
    /// Use an explicit map (environment geometry, declared adjacency).
    Declared(FeasibleActionMap),
}

/// The feasible-action sets, keyed by state key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibleActionMap {
    map: BTreeMap<StateKey, BTreeSet<u32>>,
}

impl FeasibleActionMap {
    pub fn from_map(map: BTreeMap<StateKey, BTreeSet<u32>>) -> Self {
        Self { map }
    }

    pub fn actions(&self, key: &StateKey) -> Option<&BTreeSet<u32>> {
        self.map.get(key)
    }

    /// Feasible actions for a key as a sorted vector; `None` if unknown.
    pub fn actions_vec(&self, key: &StateKey) -> Option<Vec<u32>> {
        self.map.get(key).map(|s| s.iter().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &BTreeSet<u32>)> {
        self.map.iter()
    }

    pub fn contains(&self, key: &StateKey, action: u32) -> bool {
        self.map.get(key).is_some_and(|s| s.contains(&action))
    }
}

/// Builds the feasible-action map for a dataset.
///
/// Inferred mode unions observed actions per state key. Declared mode
/// returns the supplied map verbatim after checking it covers every state
/// key present in the data and contains every observed `(state, action)`
/// pair; violations are reported, not dropped.
pub fn build_feasible_actions(
    ts: &TrajectorySet,
    key_fn: &StateKeyFn,
    mode: FeasibleActionMode,
) -> Result<FeasibleActionMap, DataError> {
    if ts.is_empty() {
        return Err(DataError::EmptyDataset(
            " (cannot build feasible actions)".into(),
        ));
    }
    match mode {
        FeasibleActionMode::Inferred => {
            let mut map: BTreeMap<StateKey, BTreeSet<u32>> = BTreeMap::new();
            for t in ts.transitions() {
                map.entry(key_fn.key(&t.state)).or_default().insert(t.action);
            }
            Ok(FeasibleActionMap { map })
        }
        FeasibleActionMode::Declared(declared) => {
            for t in ts.transitions() {
                let key = key_fn.key(&t.state);
                match declared.actions(&key) {
                    None => return Err(DataError::UnknownStateKey(key.to_string())),
                    Some(actions) => {
                        if !actions.contains(&t.action) {
                            return Err(DataError::SchemaMismatch(format!(
                                "observed action {} at state key [{}] is not in the declared feasible set",
                                t.action, key
                            )));
                        }
                    }
                }
            }
            Ok(declared)
        }
    }
}
