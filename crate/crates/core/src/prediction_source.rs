//! Prediction logs: per-sample ordered local predictions in JSON Lines.
//!
//! ```text
//! {"num_classes":2,"meta":{"dataset":"synthetic-2d"}}
//! {"id":"s1","label":1,"preds":[[0.2,0.8],[0.1,0.9]],"tags":["net0","net1"]}
//! ```
//!
//! The header line is optional when at least one record is present; the
//! class count is then taken from the first record. Probabilities are
//! written in shortest round-trip form, so a read of a written log returns
//! the same bits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::probability::ProbabilityVector;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLogRecord {
    pub id: String,
    pub true_label: usize,
    pub preds: Vec<ProbabilityVector>,
    /// Optional per-prediction provenance, e.g. `center/noflip/net1`.
    pub tags: Option<Vec<String>>,
}

impl PredictionLogRecord {
    pub fn num_classes(&self) -> Option<usize> {
        self.preds.first().map(ProbabilityVector::num_classes)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionLog {
    num_classes: Option<usize>,
    pub records: Vec<PredictionLogRecord>,
    pub metadata: BTreeMap<String, Value>,
}

impl PredictionLog {
    /// Builds a log and checks the per-record invariants.
    pub fn new(
        num_classes: usize,
        records: Vec<PredictionLogRecord>,
        metadata: BTreeMap<String, Value>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::data(format!("num_classes must be at least 2, got {num_classes}")));
        }
        let mut ids = HashSet::new();
        for rec in &records {
            validate_record(rec, num_classes).map_err(|e| Error::Record {
                id: rec.id.clone(),
                source: Box::new(e),
            })?;
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::data(format!("duplicate record id {:?}", rec.id)));
            }
        }
        Ok(Self {
            num_classes: Some(num_classes),
            records,
            metadata,
        })
    }

    /// Class count, unresolved only for a log read from an empty file.
    pub fn num_classes(&self) -> Result<usize> {
        self.num_classes
            .ok_or_else(|| Error::data("prediction log has no header and no records; class count unknown"))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Smallest number of predictions carried by any record.
    pub fn min_predictions(&self) -> usize {
        self.records.iter().map(|r| r.preds.len()).min().unwrap_or(0)
    }
}

fn validate_record(rec: &PredictionLogRecord, num_classes: usize) -> Result<()> {
    if rec.preds.is_empty() {
        return Err(Error::data("record has no predictions"));
    }
    if let Some(p) = rec.preds.iter().find(|p| p.num_classes() != num_classes) {
        return Err(Error::data(format!(
            "prediction with {} classes in a {num_classes}-class log",
            p.num_classes()
        )));
    }
    if rec.true_label >= num_classes {
        return Err(Error::data(format!(
            "label {} out of range for {num_classes} classes",
            rec.true_label
        )));
    }
    if let Some(tags) = &rec.tags {
        if tags.len() != rec.preds.len() {
            return Err(Error::data(format!(
                "{} tags for {} predictions",
                tags.len(),
                rec.preds.len()
            )));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    num_classes: usize,
    #[serde(default)]
    meta: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    label: usize,
    preds: Vec<Vec<f64>>,
    #[serde(default)]
    tags: Option<Vec<String>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    label: usize,
    preds: &'a [ProbabilityVector],
    #[serde(skip_serializing_if = "Option::is_none")]
    tags: Option<&'a [String]>,
}

pub fn read_log(path: impl AsRef<Path>) -> Result<PredictionLog> {
    let file = File::open(path.as_ref())?;
    parse_log(BufReader::new(file))
}

/// Parses a log from any line source; errors carry 1-based line numbers.
pub fn parse_log<R: BufRead>(reader: R) -> Result<PredictionLog> {
    let mut log = PredictionLog::default();
    let mut ids = HashSet::new();
    let mut seen_content = false;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| Error::Log {
            line: lineno,
            message,
        };
        let value: Value =
            serde_json::from_str(&line).map_err(|e| at(format!("malformed JSON: {e}")))?;

        if !seen_content && value.get("num_classes").is_some() {
            seen_content = true;
            let header: Header =
                serde_json::from_value(value).map_err(|e| at(format!("bad header: {e}")))?;
            if header.num_classes < 2 {
                return Err(at(format!("num_classes must be at least 2, got {}", header.num_classes)));
            }
            log.num_classes = Some(header.num_classes);
            log.metadata = header.meta;
            continue;
        }
        seen_content = true;

        let raw: RawRecord =
            serde_json::from_value(value).map_err(|e| at(format!("bad record: {e}")))?;
        let preds = raw
            .preds
            .into_iter()
            .enumerate()
            .map(|(j, p)| {
                ProbabilityVector::new(p).map_err(|e| at(format!("prediction {}: {e}", j + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = PredictionLogRecord {
            id: raw.id,
            true_label: raw.label,
            preds,
            tags: raw.tags,
        };
        let k = match (log.num_classes, rec.num_classes()) {
            (Some(k), _) => k,
            (None, Some(k)) => {
                log.num_classes = Some(k);
                k
            }
            (None, None) => return Err(at("record has no predictions".into())),
        };
        validate_record(&rec, k).map_err(|e| at(e.to_string()))?;
        if !ids.insert(rec.id.clone()) {
            return Err(at(format!("duplicate record id {:?}", rec.id)));
        }
        log.records.push(rec);
    }
    Ok(log)
}

pub fn write_log(log: &PredictionLog, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), |w| write_log_to(log, w))
}

pub fn write_log_to(log: &PredictionLog, w: &mut dyn Write) -> Result<()> {
    if let Some(num_classes) = log.num_classes {
        let header = Header {
            num_classes,
            meta: log.metadata.clone(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
    }
    for rec in &log.records {
        let out = RecordOut {
            id: &rec.id,
            label: rec.true_label,
            preds: &rec.preds,
            tags: rec.tags.as_deref(),
        };
        serde_json::to_writer(&mut *w, &out)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Merges per-network logs so that each record's predictions run
/// variant-major, network-minor: `v1/net1, v1/net2, ..., v2/net1, ...`.
///
/// Records are matched by id and emitted in the order of the first log.
pub fn interleave_networks(per_network: &[PredictionLog]) -> Result<PredictionLog> {
    let (first, rest) = per_network
        .split_first()
        .ok_or_else(|| Error::data("no logs to interleave"))?;
    let num_classes = first.num_classes()?;
    let mut lookups = Vec::with_capacity(rest.len());
    for (k, log) in rest.iter().enumerate() {
        if log.num_classes()? != num_classes {
            return Err(Error::data(format!(
                "log {} has {} classes, expected {num_classes}",
                k + 2,
                log.num_classes()?
            )));
        }
        if log.len() != first.len() {
            return Err(Error::data(format!(
                "log {} has {} records, expected {}",
                k + 2,
                log.len(),
                first.len()
            )));
        }
        let by_id: HashMap<&str, &PredictionLogRecord> =
            log.records.iter().map(|r| (r.id.as_str(), r)).collect();
        lookups.push(by_id);
    }

    let mut records = Vec::with_capacity(first.len());
    for rec in &first.records {
        let mut group = vec![rec];
        for (k, by_id) in lookups.iter().enumerate() {
            let other = by_id.get(rec.id.as_str()).ok_or_else(|| {
                Error::data(format!("record {:?} missing from log {}", rec.id, k + 2))
            })?;
            if other.preds.len() != rec.preds.len() {
                return Err(Error::data(format!(
                    "record {:?}: {} predictions in log {}, {} in log 1",
                    rec.id,
                    other.preds.len(),
                    k + 2,
                    rec.preds.len()
                )));
            }
            if other.true_label != rec.true_label {
                return Err(Error::data(format!("record {:?}: labels disagree across logs", rec.id)));
            }
            group.push(other);
        }
        let variants = rec.preds.len();
        let mut preds = Vec::with_capacity(variants * group.len());
        for v in 0..variants {
            preds.extend(group.iter().map(|r| r.preds[v].clone()));
        }
        let tags = if group.iter().all(|r| r.tags.is_some()) {
            let mut tags = Vec::with_capacity(preds.len());
            for v in 0..variants {
                tags.extend(group.iter().map(|r| r.tags.as_ref().expect("checked")[v].clone()));
            }
            Some(tags)
        } else {
            None
        };
        records.push(PredictionLogRecord {
            id: rec.id.clone(),
            true_label: rec.true_label,
            preds,
            tags,
        });
    }

    let mut metadata = first.metadata.clone();
    metadata.insert("networks".into(), Value::from(per_network.len()));
    PredictionLog::new(num_classes, records, metadata)
}
