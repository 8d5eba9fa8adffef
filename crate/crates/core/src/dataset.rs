//! Two-group survival data from delimited text.
//!
//! The header must name the columns `time`, `status` and `group`; `id` is
//! optional and other columns are ignored. Comma, tab and semicolon
//! delimiters are recognised from the header line. Every bad row is an
//! error carrying its line number; nothing is dropped silently.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::{Record, SurvivalSample};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub reference: SurvivalSample,
    pub test: SurvivalSample,
    /// Non-fatal notes, e.g. an implicitly chosen reference group.
    pub warnings: Vec<String>,
}

fn delimiter(header: &str) -> u8 {
    if header.contains(',') {
        b','
    } else if header.contains('\t') {
        b'\t'
    } else if header.contains(';') {
        b';'
    } else {
        b','
    }
}

fn row_error(line: usize, message: impl Into<String>) -> Error {
    Error::Dataset {
        line,
        message: message.into(),
    }
}

/// Parses dataset text. `reference` names the reference group; without it
/// the lexicographically first group is used and a warning is recorded.
pub fn parse_dataset_str(text: &str, reference: Option<&str>) -> Result<Dataset> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let header_line = text.lines().next().unwrap_or("");
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(header_line))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| row_error(1, format!("unreadable header: {e}")))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing: Vec<&str> = ["time", "status", "group"]
        .into_iter()
        .filter(|c| column(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(row_error(1, format!("missing required column(s): {}", missing.join(", "))));
    }
    let (ti, si, gi) = (column("time").unwrap(), column("status").unwrap(), column("group").unwrap());

    let mut groups: BTreeMap<String, Vec<Record>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            row_error(line, format!("malformed row: {e}"))
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |i: usize, name: &str| {
            row.get(i)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| row_error(line, format!("missing value for '{name}'")))
        };
        let time_text = field(ti, "time")?;
        let time: f64 = time_text
            .parse()
            .map_err(|_| row_error(line, format!("time '{time_text}' is not a number")))?;
        if !(time.is_finite() && time > 0.0) {
            return Err(row_error(line, format!("time must be positive, got {time_text}")));
        }
        let event = match field(si, "status")? {
            "1" => true,
            "0" => false,
            other => return Err(row_error(line, format!("status must be 0 or 1, got '{other}'"))),
        };
        let group = field(gi, "group")?.to_string();
        groups.entry(group).or_default().push(Record::new(time, event));
    }

    if groups.len() != 2 {
        let names: Vec<&str> = groups.keys().map(String::as_str).collect();
        return Err(Error::Input(format!(
            "expected exactly two groups, found {}{}",
            groups.len(),
            if names.is_empty() { String::new() } else { format!(" ({})", names.join(", ")) }
        )));
    }
    let names: Vec<String> = groups.keys().cloned().collect();
    let mut warnings = Vec::new();
    let reference = match reference {
        Some(r) if groups.contains_key(r) => r.to_string(),
        Some(r) => {
            return Err(Error::Input(format!(
                "reference group '{r}' not found (groups: {}, {})",
                names[0], names[1]
            )))
        }
        None => {
            warnings.push(format!(
                "no reference group given; using '{}' (lexicographically first)",
                names[0]
            ));
            names[0].clone()
        }
    };
    let test = names.iter().find(|n| **n != reference).unwrap().clone();
    let reference_records = groups.remove(&reference).unwrap();
    let test_records = groups.remove(&test).unwrap();
    Ok(Dataset {
        reference: SurvivalSample::new(reference, reference_records)?,
        test: SurvivalSample::new(test, test_records)?,
        warnings,
    })
}

pub fn parse_dataset_reader(mut reader: impl Read, reference: Option<&str>) -> Result<Dataset> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Input(format!("cannot read dataset: {e}")))?;
    parse_dataset_str(&text, reference)
}

pub fn parse_dataset(path: impl AsRef<Path>, reference: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read dataset {}: {e}", path.display())))?;
    parse_dataset_str(&text, reference)
}
