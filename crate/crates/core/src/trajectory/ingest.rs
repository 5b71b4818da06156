//! Ingestion of external log files (WoWAH-style CSVs) into the canonical
//! trajectory model.
//!
//! The ingestion schema maps columns to roles. Rows are validated against
//! declared vocabularies, grouped per agent, sorted by timestamp, and paired
//! into transitions. Consecutive rows pair only when their time gap is at
//! most `max_gap`; larger gaps start a new episode so session breaks do not
//! fabricate transitions. Rows that fail validation are counted and reported,
//! never silently dropped.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::schema::{CategoricalFeature, FeatureSchema, StateVector};
use crate::trajectory::{Transition, TrajectorySet};

/// Where a transition's action id comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    /// The action column of the row itself (logs that record decisions).
    SameRow,
    /// The action column of the successor row (movement logs where the
    /// decision is revealed by where the agent turns up next).
    NextRow,
}

/// Column-to-role mapping for one external log format.
#[derive(Debug, Clone)]
pub struct IngestSchema {
    pub agent_column: String,
    pub timestamp_column: String,
    /// Owned strftime pattern; `None` means integer timestamps.
    pub timestamp_pattern: Option<String>,
    pub action_column: String,
    pub action_source: ActionSource,
    pub action_vocab: Vec<String>,
    pub categorical: Vec<CategoricalFeature>,
    pub numeric: Vec<String>,
    /// Expected spacing of rows, in timestamp units.
    pub logging_interval: i64,
    /// Maximum per-agent gap that still pairs two rows into a transition.
    /// Defaults to `2 * logging_interval` when `None`.
    pub max_gap: Option<i64>,
}

impl IngestSchema {
    pub fn max_gap(&self) -> i64 {
        self.max_gap.unwrap_or(2 * self.logging_interval)
    }

    fn feature_schema(&self) -> FeatureSchema {
        FeatureSchema::new(
            self.categorical.clone(),
            self.numeric.clone(),
            self.action_vocab.clone(),
            Vec::new(),
        )
    }
}

/// One rejected row: source line number and the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: usize,
    pub reason: String,
}

/// What ingestion saw and what it kept.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_ok: usize,
    pub transitions: usize,
    pub agents: usize,
    pub episodes: usize,
    pub malformed: Vec<RowIssue>,
}

struct ParsedRow {
    agent: String,
    timestamp: i64,
    action: u32,
    categorical: Vec<u32>,
    numeric: Vec<f64>,
    order: usize,
}

/// Reads an external CSV log and returns the validated trajectory set plus
/// an ingestion report.
pub fn ingest_log(path: &Path, schema: &IngestSchema) -> Result<(TrajectorySet, IngestReport), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| DataError::SchemaMismatch(format!("cannot read csv header: {e}")))?
        .clone();
    let columns = resolve_columns(&headers, schema)?;

    let mut report = IngestReport::default();
    let mut rows: Vec<ParsedRow> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is line 1; first data row is line 2.
        let line = i + 2;
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.malformed.push(RowIssue {
                    line,
                    reason: format!("csv parse: {e}"),
                });
                continue;
            }
        };
        match parse_row(&record, &columns, schema, report.rows_ok) {
            Ok(row) => {
                report.rows_ok += 1;
                rows.push(row);
            }
            Err(reason) => report.malformed.push(RowIssue { line, reason }),
        }
    }

    if report.rows_read == 0 {
        return Err(DataError::EmptyDataset(format!(
            " ({} has no data rows)",
            path.display()
        )));
    }

    let (transitions, episodes, agents) = pair_rows(rows, schema);
    report.transitions = transitions.len();
    report.episodes = episodes;
    report.agents = agents;
    if transitions.is_empty() {
        return Err(DataError::EmptyDataset(format!(
            " ({} produced no transitions; {} of {} rows malformed)",
            path.display(),
            report.malformed.len(),
            report.rows_read
        )));
    }

    let ts = TrajectorySet::new(schema.feature_schema(), transitions)?;
    Ok((ts, report))
}

struct ResolvedColumns {
    agent: usize,
    timestamp: usize,
    action: usize,
    categorical: Vec<usize>,
    numeric: Vec<usize>,
}

fn resolve_columns(headers: &csv::StringRecord, schema: &IngestSchema) -> Result<ResolvedColumns, DataError> {
    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| {
                DataError::SchemaMismatch(format!(
                    "declared column '{}' not found; file has: {}",
                    name,
                    headers.iter().collect::<Vec<_>>().join(", ")
                ))
            })
    };
    Ok(ResolvedColumns {
        agent: find(&schema.agent_column)?,
        timestamp: find(&schema.timestamp_column)?,
        action: find(&schema.action_column)?,
        categorical: schema
            .categorical
            .iter()
            .map(|f| find(&f.name))
            .collect::<Result<_, _>>()?,
        numeric: schema
            .numeric
            .iter()
            .map(|f| find(f))
            .collect::<Result<_, _>>()?,
    })
}

fn parse_row(
    record: &csv::StringRecord,
    columns: &ResolvedColumns,
    schema: &IngestSchema,
    order: usize,
) -> Result<ParsedRow, String> {
    let agent = record
        .get(columns.agent)
        .ok_or("missing agent field")?
        .to_string();
    if agent.is_empty() {
        return Err("empty agent id".into());
    }

    let raw_ts = record.get(columns.timestamp).ok_or("missing timestamp field")?;
    let timestamp = parse_timestamp(raw_ts, schema.timestamp_pattern.as_deref())?;

    let raw_action = record.get(columns.action).ok_or("missing action field")?;
    let action = schema
        .action_vocab
        .iter()
        .position(|a| a == raw_action)
        .ok_or_else(|| format!("action '{raw_action}' not in declared vocabulary"))?
        as u32;

    let mut categorical = Vec::with_capacity(columns.categorical.len());
    for (feature, &col) in schema.categorical.iter().zip(&columns.categorical) {
        let raw = record.get(col).ok_or("missing categorical field")?;
        let id = feature
            .id_of(raw)
            .ok_or_else(|| format!("'{}' not in vocabulary of '{}'", raw, feature.name))?;
        categorical.push(id);
    }

    let mut numeric = Vec::with_capacity(columns.numeric.len());
    for (name, &col) in schema.numeric.iter().zip(&columns.numeric) {
        let raw = record.get(col).ok_or("missing numeric field")?;
        let value: f64 = raw
            .parse()
            .map_err(|_| format!("'{raw}' is not a number for '{name}'"))?;
        if !value.is_finite() {
            return Err(format!("non-finite value for '{name}'"));
        }
        numeric.push(value);
    }

    Ok(ParsedRow {
        agent,
        timestamp,
        action,
        categorical,
        numeric,
        order,
    })
}

fn parse_timestamp(raw: &str, pattern: Option<&str>) -> Result<i64, String> {
    match pattern {
        None => raw
            .parse::<i64>()
            .map_err(|_| format!("'{raw}' is not an integer timestamp")),
        Some(p) => chrono::NaiveDateTime::parse_from_str(raw, p)
            .map(|dt| dt.and_utc().timestamp())
            .map_err(|e| format!("'{raw}' does not match timestamp pattern: {e}")),
    }
}

/// Groups rows per agent, sorts by timestamp (file order breaks ties), and
/// pairs consecutive rows within the gap threshold into transitions.
fn pair_rows(rows: Vec<ParsedRow>, schema: &IngestSchema) -> (Vec<Transition>, usize, usize) {
    let max_gap = schema.max_gap();
    let mut per_agent: BTreeMap<String, Vec<ParsedRow>> = BTreeMap::new();
    for row in rows {
        per_agent.entry(row.agent.clone()).or_default().push(row);
    }
    let agents = per_agent.len();

    let mut transitions = Vec::new();
    let mut episodes = 0;
    for (_, mut agent_rows) in per_agent {
        agent_rows.sort_by_key(|r| (r.timestamp, r.order));
        let mut episode_open = false;
        for pair in agent_rows.windows(2) {
            let (cur, next) = (&pair[0], &pair[1]);
            if next.timestamp - cur.timestamp > max_gap {
                episode_open = false;
                continue;
            }
            if !episode_open {
                episodes += 1;
                episode_open = true;
            }
            let action = match schema.action_source {
                ActionSource::SameRow => cur.action,
                ActionSource::NextRow => next.action,
            };
            transitions.push(Transition {
                agent: cur.agent.clone(),
                state: StateVector::new(cur.categorical.clone(), cur.numeric.clone(), cur.timestamp),
                action,
                next_state: Some(StateVector::new(
                    next.categorical.clone(),
                    next.numeric.clone(),
                    next.timestamp,
                )),
                signals: Vec::new(),
            });
        }
    }

    // Dataset order: agents sorted, then time. Re-sort globally by (agent,
    // time) is already the iteration order above.
    (transitions, episodes, agents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn wowah_schema() -> IngestSchema {
        IngestSchema {
            agent_column: "avatar".into(),
            timestamp_column: "time".into(),
            timestamp_pattern: None,
            action_column: "zone".into(),
            action_source: ActionSource::NextRow,
            action_vocab: vec!["Durotar".into(), "Orgrimmar".into(), "Arena".into()],
            categorical: vec![
                CategoricalFeature {
                    name: "zone".into(),
                    vocab: vec!["Durotar".into(), "Orgrimmar".into(), "Arena".into()],
                },
                CategoricalFeature {
                    name: "class".into(),
                    vocab: vec!["Warrior".into(), "Priest".into()],
                },
            ],
            numeric: vec!["level".into()],
            logging_interval: 10,
            max_gap: None,
        }
    }

    fn write_csv(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn three_rows_make_two_transitions() {
        let (_d, path) = write_csv(
            "time,avatar,level,class,zone\n\
             0,a1,10,Warrior,Durotar\n\
             10,a1,10,Warrior,Orgrimmar\n\
             20,a1,11,Warrior,Arena\n",
        );
        let (ts, report) = ingest_log(&path, &wowah_schema()).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(report.transitions, 2);
        assert_eq!(report.episodes, 1);
        // Destination semantics: first transition's action is the zone the
        // agent turned up in next.
        assert_eq!(ts.transitions()[0].action, 1);
        assert_eq!(ts.transitions()[1].action, 2);
    }

    #[test]
    fn session_gap_splits_episodes() {
        let (_d, path) = write_csv(
            "time,avatar,level,class,zone\n\
             0,a1,10,Warrior,Durotar\n\
             10,a1,10,Warrior,Orgrimmar\n\
             1000,a1,11,Warrior,Orgrimmar\n\
             1010,a1,11,Warrior,Arena\n",
        );
        let (ts, report) = ingest_log(&path, &wowah_schema()).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(report.episodes, 2);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let (_d, path) = write_csv("time,avatar,level,class,zone\n");
        match ingest_log(&path, &wowah_schema()) {
            Err(DataError::EmptyDataset(_)) => {}
            other => panic!("expected EmptyDataset, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_counted_not_included() {
        let (_d, path) = write_csv(
            "time,avatar,level,class,zone\n\
             0,a1,10,Warrior,Durotar\n\
             10,a1,10,Necromancer,Orgrimmar\n\
             20,a1,11,Warrior,Orgrimmar\n\
             30,a1,11,Warrior,Arena\n",
        );
        let (ts, report) = ingest_log(&path, &wowah_schema()).unwrap();
        assert_eq!(report.malformed.len(), 1);
        assert_eq!(report.malformed[0].line, 3);
        assert!(report.malformed[0].reason.contains("Necromancer"));
        // The malformed row breaks the chain: rows 1 and 3 are 20 apart,
        // exactly the default max gap, so they still pair.
        assert_eq!(ts.len(), 2);
    }

    #[test]
    fn missing_declared_column_is_schema_mismatch() {
        let (_d, path) = write_csv("time,avatar,level,zone\n0,a1,10,Durotar\n");
        match ingest_log(&path, &wowah_schema()) {
            Err(DataError::SchemaMismatch(msg)) => assert!(msg.contains("class")),
            other => panic!("expected SchemaMismatch, got {other:?}"),
        }
    }

    #[test]
    fn datetime_pattern_timestamps_parse() {
        let mut schema = wowah_schema();
        schema.timestamp_pattern = Some("%d/%m/%y %H:%M:%S".into());
        schema.logging_interval = 600;
        let (_d, path) = write_csv(
            "time,avatar,level,class,zone\n\
             01/01/06 00:00:00,a1,10,Warrior,Durotar\n\
             01/01/06 00:10:00,a1,10,Warrior,Orgrimmar\n",
        );
        let (ts, _) = ingest_log(&path, &schema).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(
            ts.transitions()[0].next_state.as_ref().unwrap().timestamp
                - ts.transitions()[0].state.timestamp,
            600
        );
    }
}
