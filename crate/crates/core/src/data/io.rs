use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Array;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};

// Ingestion format:
//   NEGREP-DS v1; C=<int>; dims=<d1,...>; n=<int>
//   label,<v1>,...,<vD>        (n records, decimal text)
// Floats are written with Rust's shortest round-trip formatting, so
// save -> load is exact.

const MAGIC: &str = "NEGREP-DS v1";

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let dims: Vec<String> = dataset
        .pattern_shape()
        .iter()
        .map(|d| d.to_string())
        .collect();
    out.push_str(&format!(
        "{MAGIC}; C={}; dims={}; n={}\n",
        dataset.num_classes(),
        dims.join(","),
        dataset.len()
    ));
    for (pattern, &label) in dataset.patterns().iter().zip(dataset.labels()) {
        out.push_str(&label.to_string());
        for v in pattern.values() {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, Vec<usize>, usize)> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::MalformedHeader(format!("expected '{MAGIC}', got '{line}'")))?;
    let mut classes = None;
    let mut dims = None;
    let mut n = None;
    for part in rest.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("bad field '{part}'")))?;
        match key {
            "C" => {
                classes = Some(value.parse::<usize>().map_err(|_| {
                    Error::MalformedHeader(format!("C must be an integer, got '{value}'"))
                })?)
            }
            "dims" => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|d| d.parse::<usize>()).collect();
                dims = Some(parsed.map_err(|_| {
                    Error::MalformedHeader(format!("dims must be integers, got '{value}'"))
                })?)
            }
            "n" => {
                n = Some(value.parse::<usize>().map_err(|_| {
                    Error::MalformedHeader(format!("n must be an integer, got '{value}'"))
                })?)
            }
            other => {
                return Err(Error::MalformedHeader(format!("unknown field '{other}'")));
            }
        }
    }
    match (classes, dims, n) {
        (Some(c), Some(d), Some(n)) if c > 0 && !d.is_empty() => Ok((c, d, n)),
        _ => Err(Error::MalformedHeader(
            "header must declare C, dims and n".to_string(),
        )),
    }
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, split)
}

pub(crate) fn parse_dataset(text: &str, split: Split) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty file".to_string()))?;
    let (classes, dims, n) = parse_header(header)?;
    if n == 0 {
        return Err(Error::EmptyPatterns);
    }
    let width: usize = dims.iter().product();
    let mut patterns = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines.by_ref().take(n).enumerate() {
        let lineno = i + 2;
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::BadRecord {
                line: lineno,
                detail: "missing or non-integer label".to_string(),
            })?;
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let values: std::result::Result<Vec<f64>, _> = fields.map(|f| f.parse::<f64>()).collect();
        let values = values.map_err(|e| Error::BadRecord {
            line: lineno,
            detail: format!("bad float: {e}"),
        })?;
        if values.len() != width {
            return Err(Error::BadRecord {
                line: lineno,
                detail: format!("expected {width} values, got {}", values.len()),
            });
        }
        patterns.push(Array::new(dims.clone(), values)?);
        labels.push(label);
    }
    if patterns.len() < n {
        return Err(Error::TruncatedPayload(format!(
            "header declared {n} records, file holds {}",
            patterns.len()
        )));
    }
    if lines.next().is_some_and(|l| !l.trim().is_empty()) {
        return Err(Error::TruncatedPayload(
            "trailing data after the declared record count".to_string(),
        ));
    }
    Dataset::new(patterns, labels, classes, split)
}
