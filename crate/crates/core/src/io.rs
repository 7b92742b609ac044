//! CSV ingestion and the JSON/CSV output documents.
//!
//! Input CSV: a header row, comma separators and `.` decimals. The output
//! JSON document has the top-level shape `{meta, selection?, locations[],
//! report?}` described by `schema/output.schema.json`. Non-finite numbers
//! (an infinite condition number) are written as `null`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::estimator::FitWarning;
use crate::kernel::{Coordinates, KernelFamily};
use crate::pipeline::Param;
use crate::selection::{SelectionResult, TuningGrid};
use crate::sim::SimReport;

pub const SCHEMA_VERSION: &str = "1.0";

/// Optional response transform applied at ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    /// `y = ln(1 + y_raw / area)`, e.g. log counts per unit area.
    Log1pPerArea { area_column: String },
}

impl std::str::FromStr for Transform {
    type Err = Error;

    /// `none` or `log1p_per_area:<area column>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Transform::None);
        }
        match s.split_once(':') {
            Some(("log1p_per_area", col)) if !col.is_empty() => Ok(Transform::Log1pPerArea {
                area_column: col.to_string(),
            }),
            _ => Err(Error::Config(format!(
                "unknown transform '{s}' (expected 'none' or 'log1p_per_area:<column>')"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnBindings {
    pub coords: [String; 2],
    pub response: String,
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: SpatialDataset,
    /// Names of the design columns, starting with `intercept`.
    pub design_names: Vec<String>,
    /// Applied standardization, empty when not requested.
    pub standardization: Vec<ColumnScaling>,
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    bindings: &ColumnBindings,
    transform: &Transform,
    standardize: bool,
) -> Result<Ingested> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    ingest_reader(file, bindings, transform, standardize)
}

/// Builds a dataset from CSV text; the intercept column is prepended.
pub fn ingest_reader<R: Read>(
    reader: R,
    bindings: &ColumnBindings,
    transform: &Transform,
    standardize: bool,
) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("column '{name}' not found in header")))
    };
    let cx = col(&bindings.coords[0])?;
    let cy = col(&bindings.coords[1])?;
    let cr = col(&bindings.response)?;
    let cov_idx: Vec<usize> = bindings.covariates.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let area_idx = match transform {
        Transform::None => None,
        Transform::Log1pPerArea { area_column } => Some(col(area_column)?),
    };

    let mut pts = Vec::new();
    let mut y = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_idx.len()];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = k + 2;
        let num = |idx: usize| -> Result<f64> {
            let raw = rec.get(idx).unwrap_or("");
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Input(format!(
                    "row {line}, column '{}': '{raw}' is not a finite number",
                    &headers[idx]
                ))
            })
        };
        pts.push([num(cx)?, num(cy)?]);
        let raw = num(cr)?;
        y.push(match area_idx {
            None => raw,
            Some(a) => {
                let area = num(a)?;
                if !(area > 0.0) {
                    return Err(Error::Input(format!("row {line}: area must be positive, got {area}")));
                }
                let v = (raw / area).ln_1p();
                if !v.is_finite() {
                    return Err(Error::Input(format!(
                        "row {line}: log(1 + {raw}/{area}) is not finite"
                    )));
                }
                v
            }
        });
        for (c, &idx) in covs.iter_mut().zip(&cov_idx) {
            c.push(num(idx)?);
        }
    }
    if pts.is_empty() {
        return Err(Error::Input("CSV has no data rows".into()));
    }

    let mut standardization = Vec::new();
    if standardize {
        let n = y.len() as f64;
        for (c, name) in covs.iter_mut().zip(&bindings.covariates) {
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(Error::Input(format!("column '{name}' is constant and cannot be standardized")));
            }
            c.iter_mut().for_each(|v| *v = (*v - mean) / sd);
            standardization.push(ColumnScaling {
                column: name.clone(),
                mean,
                sd,
            });
        }
    }

    let dataset = SpatialDataset::with_intercept(Coordinates::new(pts)?, &covs, y)?;
    let mut design_names = vec!["intercept".to_string()];
    design_names.extend(bindings.covariates.iter().cloned());
    Ok(Ingested {
        dataset,
        design_names,
        standardization,
    })
}

/// Heuristic: every point is a plausible (lon, lat) pair and the extent
/// spans more than one degree.
pub fn looks_geographic(coords: &Coordinates) -> bool {
    let pts = coords.points();
    let plausible = pts.iter().all(|p| p[0].abs() <= 180.0 && p[1].abs() <= 90.0);
    let span = |k: usize| {
        let (lo, hi) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
        hi - lo
    };
    plausible && (span(0) > 1.0 || span(1) > 1.0)
}

/// `serde(with)` helper writing non-finite floats as `null` and reading
/// `null` back as `+inf`.
pub mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Fit,
    Tune,
    Diagnose,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub input: String,
    pub n: usize,
    pub p: usize,
    pub bindings: ColumnBindings,
    pub design_names: Vec<String>,
    pub transform: Transform,
    pub standardize: bool,
    pub standardization: Vec<ColumnScaling>,
}

/// Effective estimation settings, defaults included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub gamma_requested: Param,
    pub bandwidth_requested: Param,
    pub kernel: KernelFamily,
    pub grid: TuningGrid,
    /// Final gamma (selected or fixed); absent before fitting.
    pub gamma: Option<f64>,
    pub bandwidth: Option<f64>,
    pub threshold: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub sigma2_floor: Option<f64>,
    pub min_ess: Option<f64>,
    pub cn_include_intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: String,
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitMeta>,
    /// Path of the fit file a diagnosis was computed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub warnings: Vec<String>,
}

/// One location in an output document. Fit outputs fill every field;
/// diagnosis outputs carry only the diagnostic ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub index: usize,
    pub coords: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    /// Design row, intercept included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<FitWarning>,
    #[serde(rename = "U")]
    pub u: f64,
    pub outlier: bool,
    #[serde(with = "inf_as_null")]
    pub cn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDocument {
    pub meta: Meta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionResult>,
    pub locations: Vec<LocationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SimReport>,
}

impl OutputDocument {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: OutputDocument = serde_json::from_str(text)?;
        if doc.meta.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema version '{}' (expected {SCHEMA_VERSION})",
                doc.meta.schema_version
            )));
        }
        Ok(doc)
    }

    /// Flattens the document to CSV: one row per location for fit and
    /// diagnose, one per score for tune, one per replication and method for
    /// simulate.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { "inf".to_string() };
        match self.meta.command {
            CommandKind::Fit | CommandKind::Diagnose => {
                let p = self
                    .locations
                    .first()
                    .and_then(|l| l.beta.as_ref().map(Vec::len))
                    .unwrap_or(0);
                let full = self.meta.command == CommandKind::Fit;
                let mut header = vec!["index".to_string(), "coord_0".into(), "coord_1".into()];
                if full {
                    header.push("y".into());
                    header.extend((0..p).map(|k| format!("beta_{k}")));
                    header.extend((0..p).map(|k| format!("se_{k}")));
                    header.extend(["sigma2".into(), "converged".into(), "iterations".into()]);
                }
                header.extend(["U".into(), "outlier".into(), "cn".into()]);
                out.write_record(&header)?;
                for l in &self.locations {
                    let mut row = vec![l.index.to_string(), fmt(l.coords[0]), fmt(l.coords[1])];
                    if full {
                        row.push(l.y.map(fmt).unwrap_or_default());
                        let beta = l.beta.clone().unwrap_or_default();
                        row.extend((0..p).map(|k| beta.get(k).map(|v| fmt(*v)).unwrap_or_default()));
                        let se = l.se.clone().unwrap_or_default();
                        row.extend((0..p).map(|k| se.get(k).map(|v| fmt(*v)).unwrap_or_default()));
                        row.push(l.sigma2.map(fmt).unwrap_or_default());
                        row.push(l.converged.map(|c| c.to_string()).unwrap_or_default());
                        row.push(l.iterations.map(|c| c.to_string()).unwrap_or_default());
                    }
                    row.extend([fmt(l.u), l.outlier.to_string(), fmt(l.cn)]);
                    out.write_record(&row)?;
                }
            }
            CommandKind::Tune => {
                out.write_record(["step", "gamma", "bandwidth", "score"])?;
                if let Some(sel) = &self.selection {
                    let b_max = sel.grid.bandwidths.last().copied().unwrap_or(f64::NAN);
                    let hb = if sel.rcv_trace.is_empty() { sel.b_opt } else { b_max };
                    for (g, h) in &sel.hscore_trace {
                        out.write_record(["gamma".to_string(), fmt(*g), fmt(hb), fmt(*h)])?;
                    }
                    for (b, r) in &sel.rcv_trace {
                        out.write_record(["bandwidth".to_string(), fmt(sel.gamma_opt), fmt(*b), fmt(*r)])?;
                    }
                }
            }
            CommandKind::Simulate => {
                out.write_record(["replication", "method", "mse", "gamma", "bandwidth", "outlier_fraction", "error"])?;
                if let Some(rep) = &self.report {
                    for r in &rep.replications {
                        for o in &r.outcomes {
                            out.write_record([
                                r.index.to_string(),
                                format!("{:?}", o.method).to_lowercase(),
                                fmt(o.mse),
                                fmt(o.gamma),
                                fmt(o.bandwidth),
                                r.outlier_fraction.map(fmt).unwrap_or_default(),
                                String::new(),
                            ])?;
                        }
                        for f in &r.failures {
                            out.write_record([
                                r.index.to_string(),
                                format!("{:?}", f.method).to_lowercase(),
                                String::new(),
                                String::new(),
                                String::new(),
                                r.outlier_fraction.map(fmt).unwrap_or_default(),
                                f.code.clone(),
                            ])?;
                        }
                    }
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}
