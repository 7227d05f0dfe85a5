use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use diffnum::Real;

use crate::error::{Result, StoreError};
use crate::event::{EventKind, EventLog, EventLogBuilder};

const FIXED_COLUMNS: [&str; 4] = ["source_id", "target_id", "timestamp", "state_label"];

/// Ingest a bipartite interaction export with header
/// `source_id,target_id,timestamp,state_label,f_1,...,f_d`.
///
/// Raw source and destination id spaces may overlap, so destinations are
/// re-indexed by the size of the source space. Rows are sorted by timestamp
/// (stable, so equal timestamps keep file order). `expected_features`
/// optionally pins the feature width `d`.
pub fn ingest_csv(path: &Path, expected_features: Option<usize>) -> Result<EventLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(csv_error)?;
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        // Zero-byte file: an empty log with no nodes.
        return Ok(EventLogBuilder::new().finish());
    }
    if headers.len() < FIXED_COLUMNS.len() {
        return Err(StoreError::Parse {
            line: 1,
            message: format!("header needs at least {} columns", FIXED_COLUMNS.len()),
        });
    }
    for (i, name) in FIXED_COLUMNS.iter().enumerate() {
        if &headers[i] != *name {
            return Err(StoreError::Parse {
                line: 1,
                message: format!("column {i} must be {name}, got {}", &headers[i]),
            });
        }
    }
    let feature_dim = headers.len() - FIXED_COLUMNS.len();
    if let Some(expected) = expected_features {
        if feature_dim != expected {
            return Err(StoreError::Parse {
                line: 1,
                message: format!("expected {expected} feature columns, header has {feature_dim}"),
            });
        }
    }

    struct Row {
        source: usize,
        target: usize,
        timestamp: f64,
        label: u8,
        features: Vec<Real>,
    }
    let mut rows: Vec<Row> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record
            .position()
            .map(csv::Position::line)
            .unwrap_or(rows.len() as u64 + 2);
        if record.len() != headers.len() {
            return Err(StoreError::RaggedRow {
                line,
                expected: feature_dim,
                got: record.len().saturating_sub(FIXED_COLUMNS.len()),
            });
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse_err = |what: &str, raw: &str| StoreError::Parse {
            line,
            message: format!("invalid {what}: {raw:?}"),
        };
        let source: usize = field(0).parse().map_err(|_| parse_err("source_id", field(0)))?;
        let target: usize = field(1).parse().map_err(|_| parse_err("target_id", field(1)))?;
        let timestamp: f64 = field(2).parse().map_err(|_| parse_err("timestamp", field(2)))?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(StoreError::NegativeTimestamp {
                line,
                value: timestamp,
            });
        }
        let label: u8 = field(3).parse().map_err(|_| parse_err("state_label", field(3)))?;
        if label > 1 {
            return Err(parse_err("state_label", field(3)));
        }
        let mut features = Vec::with_capacity(feature_dim);
        for i in 0..feature_dim {
            let raw = field(FIXED_COLUMNS.len() + i);
            let v: f64 = raw.parse().map_err(|_| parse_err("feature", raw))?;
            features.push(v as Real);
        }
        rows.push(Row {
            source,
            target,
            timestamp,
            label,
            features,
        });
    }

    rows.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
    let source_space = rows.iter().map(|r| r.source + 1).max().unwrap_or(0);
    let mut builder = EventLogBuilder::new()
        .with_edge_feature_dim(feature_dim)
        .with_source_space(source_space);
    for row in rows {
        builder.interaction(
            row.source,
            row.target + source_space,
            row.timestamp,
            row.features,
            row.label,
        )?;
    }
    Ok(builder.finish())
}

/// Serialize the log's interaction events back to the ingestion schema,
/// undoing the destination re-indexing. Floats are written in shortest
/// round-trip form, so ingest → write reproduces well-formed input exactly.
pub fn write_csv(log: &EventLog, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "source_id,target_id,timestamp,state_label")?;
    for i in 1..=log.edge_feature_dim() {
        write!(out, ",f_{i}")?;
    }
    writeln!(out)?;
    let offset = log.source_space();
    for event in log.events() {
        if event.kind != EventKind::Interaction {
            continue;
        }
        let target = event.target.expect("interaction has target");
        write!(
            out,
            "{},{},{},{}",
            event.source,
            target - offset,
            event.timestamp,
            event.state_label
        )?;
        for v in &event.features {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> StoreError {
    let line = e.position().map(csv::Position::line).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => StoreError::RaggedRow {
            line,
            expected: (*expected_len as usize).saturating_sub(FIXED_COLUMNS.len()),
            got: (*len as usize).saturating_sub(FIXED_COLUMNS.len()),
        },
        csv::ErrorKind::Io(_) => StoreError::Parse {
            line,
            message: format!("io failure: {e}"),
        },
        _ => StoreError::Parse {
            line,
            message: e.to_string(),
        },
    }
}
