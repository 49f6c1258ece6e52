//! Line-delimited structured records: tab-separated `key=value` pairs with a
//! stable key order. Both the planner's structured reports and the trainer's
//! metrics files use this shape.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("record line {line}: empty field")]
    EmptyField { line: usize },
    #[error("record line {line}: field `{field}` has no `=`")]
    MissingSeparator { line: usize, field: String },
}

/// Renders one record line (without the trailing newline).
pub fn render_record(fields: &[(&str, String)]) -> String {
    fields
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("\t")
}

/// Parses one record line into ordered `(key, value)` pairs.
pub fn parse_record(line: &str, line_no: usize) -> Result<Vec<(String, String)>, RecordError> {
    let mut fields = Vec::new();
    for field in line.split('\t') {
        if field.is_empty() {
            return Err(RecordError::EmptyField { line: line_no });
        }
        match field.split_once('=') {
            Some((k, v)) => fields.push((k.to_string(), v.to_string())),
            None => {
                return Err(RecordError::MissingSeparator {
                    line: line_no,
                    field: field.to_string(),
                })
            }
        }
    }
    Ok(fields)
}

/// Parses a whole metrics/report document, skipping blank lines.
pub fn parse_records(text: &str) -> Result<Vec<Vec<(String, String)>>, RecordError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l, i + 1))
        .collect()
}
