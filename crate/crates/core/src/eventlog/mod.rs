//! Event logs: cases, events, static and dynamic attributes.
//!
//! Logs are read from CSV files with one event per row. The columns
//! `case_id`, `activity` and `timestamp` are required (names configurable
//! through [`SchemaConfig`]); columns prefixed with `case:` are static case
//! attributes and every other column is a dynamic event attribute.

mod prefix;
mod synth;

pub use prefix::{
    extract_prefixes, label_and_cut, split_cases, validation_split, RawPrefixSample,
};
pub use synth::{generate_synthetic_log, BiasLevel, BiasSpec};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Column prefix marking static (case-level) attributes.
pub const STATIC_PREFIX: &str = "case:";

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("case `{case_id}`: static attribute `{attr}` varies within the case")]
    InconsistentStatic { case_id: String, attr: String },
    #[error("attribute `{0}` is not a static boolean attribute of the log")]
    NotStaticBoolean(String),
    #[error("case `{case_id}` has no value for sensitive attribute `{attr}`")]
    MissingSensitive { case_id: String, attr: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("invalid bias spec: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, EventLogError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Categorical,
    Numeric,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Boolean(bool),
    Numeric(f64),
    Categorical(String),
}

impl AttrValue {
    pub fn kind(&self) -> AttrKind {
        match self {
            AttrValue::Categorical(_) => AttrKind::Categorical,
            AttrValue::Numeric(_) => AttrKind::Numeric,
            AttrValue::Boolean(_) => AttrKind::Boolean,
        }
    }

    fn to_field(&self) -> String {
        match self {
            AttrValue::Categorical(s) => s.clone(),
            AttrValue::Numeric(x) => x.to_string(),
            AttrValue::Boolean(true) => "TRUE".to_string(),
            AttrValue::Boolean(false) => "FALSE".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrSpec {
    pub kind: AttrKind,
    pub is_static: bool,
}

/// Kind and scope of every non-required attribute in a log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: BTreeMap<String, AttrSpec>,
}

impl Schema {
    pub fn get(&self, name: &str) -> Option<&AttrSpec> {
        self.attributes.get(name)
    }

    /// A config that re-parses files written by [`write_event_log`] to the same schema.
    pub fn to_config(&self) -> SchemaConfig {
        SchemaConfig {
            attributes: self
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), v.kind))
                .collect(),
            ..SchemaConfig::default()
        }
    }
}

fn default_case_column() -> String {
    "case_id".into()
}
fn default_activity_column() -> String {
    "activity".into()
}
fn default_timestamp_column() -> String {
    "timestamp".into()
}

/// How to read a CSV log. Attribute kinds not listed are inferred from the
/// column's values (all TRUE/FALSE → boolean, all numbers → numeric, else
/// categorical).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    #[serde(default = "default_case_column")]
    pub case_column: String,
    #[serde(default = "default_activity_column")]
    pub activity_column: String,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrKind>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            case_column: default_case_column(),
            activity_column: default_activity_column(),
            timestamp_column: default_timestamp_column(),
            attributes: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub case_id: String,
    pub activity: String,
    pub timestamp: DateTime<Utc>,
    /// Dynamic attributes only; missing cells are absent.
    pub attrs: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub case_id: String,
    pub events: Vec<Event>,
    pub static_attrs: BTreeMap<String, AttrValue>,
}

impl Trace {
    pub fn activities(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.activity.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub traces: Vec<Trace>,
    pub schema: Schema,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.traces.iter().map(|t| t.events.len()).sum()
    }

    pub(crate) fn with_traces(&self, traces: Vec<Trace>) -> EventLog {
        EventLog {
            traces,
            schema: self.schema.clone(),
        }
    }
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

fn parse_bool(raw: &str) -> Option<bool> {
    if raw.eq_ignore_ascii_case("true") {
        Some(true)
    } else if raw.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

fn infer_kind<'a>(values: impl Iterator<Item = &'a str> + Clone) -> AttrKind {
    let mut present = values.filter(|v| !v.is_empty()).peekable();
    if present.peek().is_none() {
        return AttrKind::Categorical;
    }
    let all = present.collect::<Vec<_>>();
    if all.iter().all(|v| parse_bool(v).is_some()) {
        AttrKind::Boolean
    } else if all.iter().all(|v| v.parse::<f64>().is_ok()) {
        AttrKind::Numeric
    } else {
        AttrKind::Categorical
    }
}

fn parse_value(raw: &str, kind: AttrKind) -> std::result::Result<Option<AttrValue>, String> {
    if raw.is_empty() {
        return Ok(None);
    }
    match kind {
        AttrKind::Categorical => Ok(Some(AttrValue::Categorical(raw.to_string()))),
        AttrKind::Numeric => raw
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(|x| Some(AttrValue::Numeric(x)))
            .ok_or_else(|| format!("`{raw}` is not a finite number")),
        AttrKind::Boolean => parse_bool(raw)
            .map(|b| Some(AttrValue::Boolean(b)))
            .ok_or_else(|| format!("`{raw}` is not TRUE/FALSE")),
    }
}

pub fn parse_event_log(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<EventLog> {
    let file = std::fs::File::open(path)?;
    read_event_log(file, schema)
}

/// Reads a CSV log. One trace per distinct case id (in order of first
/// appearance), events stably sorted by timestamp. Lines starting with `#`
/// are comments.
pub fn read_event_log<R: Read>(reader: R, schema: &SchemaConfig) -> Result<EventLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EventLogError::MissingColumn(name.to_string()))
    };
    let case_col = column(&schema.case_column)?;
    let act_col = column(&schema.activity_column)?;
    let ts_col = column(&schema.timestamp_column)?;

    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        records.push((line, rec));
    }

    let attr_cols: Vec<(usize, String, AttrSpec)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != case_col && *i != act_col && *i != ts_col)
        .map(|(i, name)| {
            let kind = schema.attributes.get(name).copied().unwrap_or_else(|| {
                infer_kind(records.iter().map(|(_, r)| r.get(i).unwrap_or("")))
            });
            let spec = AttrSpec {
                kind,
                is_static: name.starts_with(STATIC_PREFIX),
            };
            (i, name.to_string(), spec)
        })
        .collect();

    let mut case_index: HashMap<String, usize> = HashMap::new();
    let mut traces: Vec<Trace> = Vec::new();
    for (line, rec) in &records {
        let row_err = |message: String| EventLogError::Row {
            line: *line,
            message,
        };
        let case_id = rec.get(case_col).unwrap_or("").to_string();
        if case_id.is_empty() {
            return Err(row_err("empty case id".into()));
        }
        let activity = rec.get(act_col).unwrap_or("").to_string();
        if activity.is_empty() {
            return Err(row_err("empty activity".into()));
        }
        let raw_ts = rec.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(raw_ts)
            .ok_or_else(|| row_err(format!("unparseable timestamp `{raw_ts}`")))?;

        let mut dynamic = BTreeMap::new();
        let mut statics = BTreeMap::new();
        for (i, name, spec) in &attr_cols {
            let raw = rec.get(*i).unwrap_or("");
            let value = parse_value(raw, spec.kind)
                .map_err(|m| row_err(format!("column `{name}`: {m}")))?;
            if spec.is_static {
                statics.insert(name.clone(), value);
            } else if let Some(v) = value {
                dynamic.insert(name.clone(), v);
            }
        }

        let event = Event {
            case_id: case_id.clone(),
            activity,
            timestamp,
            attrs: dynamic,
        };
        match case_index.get(&case_id) {
            Some(&idx) => {
                let trace = &mut traces[idx];
                for (name, value) in statics {
                    if trace.static_attrs.get(&name) != value.as_ref() {
                        return Err(EventLogError::InconsistentStatic {
                            case_id,
                            attr: name,
                        });
                    }
                }
                trace.events.push(event);
            }
            None => {
                case_index.insert(case_id.clone(), traces.len());
                traces.push(Trace {
                    case_id,
                    events: vec![event],
                    static_attrs: statics
                        .into_iter()
                        .filter_map(|(k, v)| v.map(|v| (k, v)))
                        .collect(),
                });
            }
        }
    }
    for trace in &mut traces {
        trace.events.sort_by_key(|e| e.timestamp);
    }

    let schema = Schema {
        attributes: attr_cols
            .into_iter()
            .map(|(_, name, spec)| (name, spec))
            .collect(),
    };
    Ok(EventLog { traces, schema })
}

/// Writes a log as CSV in the format accepted by [`read_event_log`].
pub fn write_event_log<W: Write>(log: &EventLog, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let attr_names: Vec<&String> = log.schema.attributes.keys().collect();
    let mut header = vec!["case_id", "activity", "timestamp"];
    header.extend(attr_names.iter().map(|s| s.as_str()));
    wtr.write_record(&header)?;
    for trace in &log.traces {
        for event in &trace.events {
            let mut row = vec![
                event.case_id.clone(),
                event.activity.clone(),
                event.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            ];
            for name in &attr_names {
                let value = if name.starts_with(STATIC_PREFIX) {
                    trace.static_attrs.get(*name)
                } else {
                    event.attrs.get(*name)
                };
                row.push(value.map(AttrValue::to_field).unwrap_or_default());
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_event_log(log: &EventLog, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_event_log(log, std::io::BufWriter::new(file))
}
