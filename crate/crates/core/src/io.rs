//! JSON-lines records. Every line is an object carrying a `schema` tag and a
//! document `id` next to the payload fields.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const LOGICAL_TABLE: &str = "logical_table.v1";
pub const GRID_LABEL: &str = "grid_label.v1";
pub const GRID_PREDICTION: &str = "grid_prediction.v1";
pub const RAW_ANNOTATION: &str = "raw_annotation.v1";
pub const ERROR: &str = "error.v1";
pub const EVAL_RECORD: &str = "eval_record.v1";
pub const EVAL_SUMMARY: &str = "eval_summary.v1";
pub const ROUNDTRIP_RECORD: &str = "roundtrip_record.v1";
pub const ROUNDTRIP_SUMMARY: &str = "roundtrip_summary.v1";
pub const MANIFEST: &str = "manifest.v1";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error("line {line}: invalid JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: expected schema {expected}, found {found}")]
    Schema { line: usize, expected: String, found: String },
    #[error("line {line}: {message}")]
    Payload { line: usize, message: String },
}

/// One decoded line.
#[derive(Debug, Clone, PartialEq)]
pub struct Record<T> {
    pub id: String,
    pub body: T,
}

/// Serializes `body` (which must be a JSON object) with schema and id.
pub fn encode<T: Serialize>(schema: &str, id: &str, body: &T) -> String {
    let mut out = Map::new();
    out.insert("schema".into(), Value::from(schema));
    out.insert("id".into(), Value::from(id));
    match serde_json::to_value(body).expect("payload serializes") {
        Value::Object(fields) => {
            for (k, v) in fields {
                if k != "schema" && k != "id" {
                    out.insert(k, v);
                }
            }
        }
        other => {
            out.insert("value".into(), other);
        }
    }
    Value::Object(out).to_string()
}

pub fn error_line(id: &str, stage: &str, message: &str) -> String {
    #[derive(Serialize)]
    struct Body<'a> {
        stage: &'a str,
        message: &'a str,
    }
    encode(ERROR, id, &Body { stage, message })
}

/// Raw object of a line plus its schema and id. Lines without an id get
/// `line-<n>` (1-based).
pub fn parse_object(text: &str, line: usize) -> Result<(String, String, Value), IoError> {
    let value: Value = serde_json::from_str(text).map_err(|e| IoError::Json { line, message: e.to_string() })?;
    let Value::Object(mut obj) = value else {
        return Err(IoError::Json { line, message: "expected an object".into() });
    };
    let schema = match obj.remove("schema") {
        Some(Value::String(s)) => s,
        _ => return Err(IoError::Schema { line, expected: "a schema field".into(), found: "none".into() }),
    };
    let id = match obj.remove("id") {
        Some(Value::String(s)) => s,
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("line-{line}"),
    };
    Ok((schema, id, Value::Object(obj)))
}

/// Decodes a line of the expected schema.
pub fn decode<T: DeserializeOwned>(text: &str, line: usize, expected: &str) -> Result<Record<T>, IoError> {
    let (schema, id, obj) = parse_object(text, line)?;
    if schema != expected {
        return Err(IoError::Schema { line, expected: expected.into(), found: schema });
    }
    let body = serde_json::from_value(obj).map_err(|e| IoError::Payload { line, message: e.to_string() })?;
    Ok(Record { id, body })
}

/// What a line of an input file turned out to be.
#[derive(Debug, Clone, PartialEq)]
pub enum Entry<T> {
    Doc(Record<T>),
    /// An upstream `error.v1` record: the document failed earlier.
    Failed { id: String, message: String },
}

impl<T> Entry<T> {
    pub fn id(&self) -> &str {
        match self {
            Entry::Doc(r) => &r.id,
            Entry::Failed { id, .. } => id,
        }
    }
}

/// Decodes every non-blank line, passing upstream error records through.
pub fn decode_all<T: DeserializeOwned>(text: &str, expected: &str) -> Result<Vec<Entry<T>>, IoError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = k + 1;
        let (schema, id, obj) = parse_object(raw, line)?;
        if schema == ERROR {
            let message = obj.get("message").and_then(Value::as_str).unwrap_or("").to_string();
            out.push(Entry::Failed { id, message });
            continue;
        }
        if schema != expected {
            return Err(IoError::Schema { line, expected: expected.into(), found: schema });
        }
        let body = serde_json::from_value(obj).map_err(|e| IoError::Payload { line, message: e.to_string() })?;
        out.push(Entry::Doc(Record { id, body }));
    }
    Ok(out)
}

/// Reads a file, or stdin for `-`.
pub fn read_input(path: &Path) -> Result<String, IoError> {
    let err = |source| IoError::File { path: path.display().to_string(), source };
    if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(err)?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(err)
}

/// Writes lines to a file, or stdout when `path` is `None` or `-`.
pub fn write_lines(path: Option<&Path>, lines: &[String]) -> Result<(), IoError> {
    let mut buf = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        buf.push_str(l);
        buf.push('\n');
    }
    match path {
        Some(p) if p.as_os_str() != "-" => {
            fs::write(p, buf).map_err(|source| IoError::File { path: p.display().to_string(), source })
        }
        _ => {
            let mut out = io::stdout().lock();
            out.write_all(buf.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| IoError::File { path: "<stdout>".into(), source })
        }
    }
}
