use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PredictionRegion, RegionPoint};
use crate::error::{Error, Result};

pub const REGION_FORMAT: &str = "ccnf-region";
pub const REGION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionFile {
    pub format: String,
    pub version: u32,
    pub region: PredictionRegion,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl RegionFile {
    pub fn new(region: PredictionRegion) -> Self {
        Self {
            format: REGION_FORMAT.into(),
            version: REGION_VERSION,
            region,
            provenance: serde_json::Value::Null,
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("region serialises");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: RegionFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("region file: {e}")))?;
        if file.format != REGION_FORMAT || file.version != REGION_VERSION {
            return Err(Error::Format(format!("unsupported region file {} v{}", file.format, file.version)));
        }
        file.region.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

fn header(label_dim: usize) -> Vec<String> {
    (0..label_dim)
        .map(|k| format!("dim{k}"))
        .chain(["log_density".to_string(), "component".to_string()])
        .collect()
}

/// Writes one row per point: coordinates, log-density, component id.
pub fn write_points_csv<W: Write>(region: &PredictionRegion, out: W) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("region points: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(region.label_dim)).map_err(csv_err)?;
    for p in &region.points {
        let row = p
            .coords
            .iter()
            .chain(std::iter::once(&p.log_density))
            .map(f64::to_string)
            .chain(std::iter::once(p.component.to_string()));
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("region points: {e}")))?;
    Ok(())
}

pub fn read_points_csv<R: Read>(input: R, label_dim: usize) -> Result<Vec<RegionPoint>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut points = Vec::new();
    let expected = header(label_dim);
    let mut saw_header = false;
    for (i, rec) in r.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if i == 0 {
            saw_header = true;
            if rec.iter().ne(expected.iter().map(String::as_str)) {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header {}", expected.join(",")),
                });
            }
            continue;
        }
        if rec.len() != label_dim + 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", label_dim + 2, rec.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = rec[k].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("field {k} is not a number"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line,
                    message: format!("field {k} is not finite"),
                })
            }
        };
        let coords = (0..label_dim).map(num).collect::<Result<Vec<_>>>()?;
        let log_density = num(label_dim)?;
        let component = rec[label_dim + 1].trim().parse().map_err(|_| Error::Parse {
            line,
            message: "component is not a non-negative integer".into(),
        })?;
        points.push(RegionPoint {
            coords,
            log_density,
            component,
        });
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(points)
}

/// Writes the region document and, optionally, the flat point table.
pub fn export_region(
    region: &PredictionRegion,
    provenance: serde_json::Value,
    json_path: &Path,
    csv_path: Option<&Path>,
) -> Result<()> {
    region.validate()?;
    let mut file = RegionFile::new(region.clone());
    file.provenance = provenance;
    file.save(json_path)?;
    if let Some(path) = csv_path {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_points_csv(region, std::io::BufWriter::new(f))?;
    }
    Ok(())
}
