//! Plain-text columnar dataset format.
//!
//! ```text
//! schema_version=1,classes=<K>,dims=<d>
//! <label>,<x_0>,...,<x_{d-1}>
//! ...
//! ```
//!
//! One sample per line after the header. Values use the shortest decimal
//! form that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const COLUMNAR_SCHEMA_VERSION: u32 = 1;

pub fn write_columnar(dataset: &Dataset, mut out: impl Write) -> Result<()> {
    writeln!(
        out,
        "schema_version={COLUMNAR_SCHEMA_VERSION},classes={},dims={}",
        dataset.classes(),
        dataset.input_dim()
    )?;
    let mut line = String::new();
    for (r, &label) in dataset.labels.iter().enumerate() {
        line.clear();
        write!(line, "{label}").expect("write to string");
        for x in dataset.features.row(r) {
            write!(line, ",{x}").expect("write to string");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn header_field(fields: &[&str], key: &str) -> Result<usize> {
    fields
        .iter()
        .find_map(|f| f.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .ok_or_else(|| Error::Schema {
            missing: vec![key.to_string()],
        })?
        .parse()
        .map_err(|_| Error::Format {
            offset: 0,
            message: format!("header field {key} is not an integer"),
        })
}

pub fn read_columnar(input: impl BufRead, provenance: &str) -> Result<Dataset> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Format {
        offset: 0,
        message: "empty file".into(),
    })??;
    let fields: Vec<&str> = header.split(',').collect();
    let version = header_field(&fields, "schema_version")?;
    if version != COLUMNAR_SCHEMA_VERSION as usize {
        return Err(Error::Version(format!(
            "columnar schema {version}, expected {COLUMNAR_SCHEMA_VERSION}"
        )));
    }
    let classes = header_field(&fields, "classes")?;
    let dims = header_field(&fields, "dims")?;
    let mut offset = header.len() as u64 + 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for line in lines {
        let line = line?;
        let bad = |message: String| Error::Format { offset, message };
        let mut parts = line.split(',');
        let label: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing or malformed label".into()))?;
        let before = data.len();
        for p in parts {
            data.push(p.parse::<f64>().map_err(|_| bad(format!("malformed value {p:?}")))?);
        }
        if data.len() - before != dims {
            return Err(bad(format!("expected {dims} values, found {}", data.len() - before)));
        }
        labels.push(label);
        offset += line.len() as u64 + 1;
    }
    let features = Matrix::new(labels.len(), dims, data)?;
    Dataset::new(features, labels, classes, provenance)
}
