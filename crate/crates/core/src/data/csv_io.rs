//! CSV ingestion and export.
//!
//! Layout: header `series_id,t,v0[,v1,...]`, one row per time step. Rows of a
//! series are contiguous with `t = 0..T+H-1` in order; series appear in the
//! order of their first row. Values are written with Rust's shortest
//! round-trip float formatting.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSchema, Provenance, SeriesDataset};
use crate::error::{Error, Result};

pub const METADATA_FORMAT: &str = "ccnf-dataset";
pub const METADATA_VERSION: u32 = 1;

/// Sidecar document describing a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub context_len: usize,
    pub horizon: usize,
    pub dim: usize,
    pub provenance: Provenance,
}

impl DatasetMetadata {
    pub fn for_dataset(ds: &SeriesDataset) -> Self {
        Self {
            format: METADATA_FORMAT.into(),
            version: METADATA_VERSION,
            n: ds.len(),
            context_len: ds.context_len,
            horizon: ds.horizon,
            dim: ds.dim,
            provenance: ds.provenance.clone(),
        }
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            n: self.n,
            context_len: self.context_len,
            horizon: self.horizon,
            dim: self.dim,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let meta: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("dataset metadata: {e}")))?;
        if meta.format != METADATA_FORMAT || meta.version != METADATA_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset metadata {} v{}",
                meta.format, meta.version
            )));
        }
        if meta.n == 0 || meta.context_len == 0 || meta.horizon == 0 || meta.dim == 0 {
            return Err(Error::Format("dataset metadata has a zero dimension".into()));
        }
        Ok(meta)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metadata serialises");
        s.push('\n');
        s
    }
}

pub fn write_csv<W: Write>(ds: &SeriesDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend((0..ds.dim).map(|d| format!("v{d}")));
    let to_err = |e: csv::Error| Error::Format(format!("writing CSV: {e}"));
    w.write_record(&header).map_err(to_err)?;
    for (i, s) in ds.series.iter().enumerate() {
        for (t, row) in s.iter().enumerate() {
            let mut rec = vec![i.to_string(), t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(to_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn load_csv(path: &Path, schema: DatasetSchema) -> Result<SeriesDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_csv(file, schema)?;
    ds.provenance = Provenance::File {
        path: path.display().to_string(),
    };
    Ok(ds)
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

/// Parses and validates a dataset against `schema`.
pub fn parse_csv<R: Read>(input: R, schema: DatasetSchema) -> Result<SeriesDataset> {
    let DatasetSchema {
        n,
        context_len,
        horizon,
        dim,
    } = schema;
    if n == 0 || context_len == 0 || horizon == 0 || dim == 0 {
        return Err(Error::Input(format!("schema has a zero dimension: {schema:?}")));
    }
    let series_len = context_len
        .checked_add(horizon)
        .ok_or_else(|| Error::Input("schema length overflows".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);

    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let expected: Vec<String> = ["series_id".to_string(), "t".to_string()]
        .into_iter()
        .chain((0..dim).map(|d| format!("v{d}")))
        .collect();
    if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(1, format!("expected header `{}`", expected.join(","))));
    }

    let mut series: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut ids: Vec<i64> = Vec::new();
    let mut last_line = 1;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(last_line + 1, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(last_line + 1, |p| p.line());
        last_line = line;
        if rec.len() != dim + 2 {
            return Err(parse_err(line, format!("expected {} fields, found {}", dim + 2, rec.len())));
        }
        let id: i64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("series_id `{}` is not an integer", &rec[0])))?;
        let t: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("t `{}` is not a non-negative integer", &rec[1])))?;
        let mut row = Vec::with_capacity(dim);
        for (k, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("v{k} `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("v{k} is not finite")));
            }
            row.push(v);
        }

        if ids.last() != Some(&id) {
            if let (Some(&prev), Some(rows)) = (ids.last(), series.last()) {
                if rows.len() < series_len {
                    return Err(parse_err(line, format!("series {prev} is missing step {}", rows.len())));
                }
            }
            if ids.contains(&id) {
                return Err(parse_err(line, format!("rows of series {id} are not contiguous")));
            }
            if ids.len() == n {
                return Err(parse_err(line, format!("more than the expected {n} series")));
            }
            ids.push(id);
            series.push(Vec::with_capacity(series_len));
        }
        let rows = series.last_mut().expect("series pushed above");
        if t != rows.len() {
            return Err(if t > rows.len() && t < series_len {
                parse_err(line, format!("series {id} is missing step {}", rows.len()))
            } else {
                parse_err(line, format!("series {id}: unexpected step {t} (expected {})", rows.len()))
            });
        }
        rows.push(row);
    }

    if let (Some(&id), Some(rows)) = (ids.last(), series.last()) {
        if rows.len() < series_len {
            return Err(parse_err(last_line + 1, format!("series {id} is missing step {}", rows.len())));
        }
    }
    if series.len() != n {
        return Err(parse_err(last_line + 1, format!("found {} series, expected {n}", series.len())));
    }
    SeriesDataset::new(context_len, horizon, dim, series, Provenance::Manual)
}
