//! Coefficient manifest: one CSV row per design with its drag target and
//! optional lift/moment coefficients.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub const REQUIRED_COLUMNS: [&str; 2] = ["design_id", "cd"];
pub const OPTIONAL_COLUMNS: [&str; 4] = ["cl", "cl_f", "cl_r", "cm"];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest is missing required column {0:?}")]
    MissingColumn(String),
    #[error("design id {id:?} appears more than once (line {line})")]
    DuplicateId { id: String, line: u64 },
    #[error("no STL file for {} design(s): {}", .0.len(), .0.join(", "))]
    MissingStl(Vec<String>),
    #[error("manifest line {line}: {message}")]
    ParseError { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestRow {
    pub design_id: String,
    pub cd: f64,
    pub cl: Option<f64>,
    pub cl_f: Option<f64>,
    pub cl_r: Option<f64>,
    pub cm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// STL path per design when the manifest was joined against a directory.
    pub stl_paths: BTreeMap<String, PathBuf>,
}

impl Manifest {
    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.design_id.clone()).collect()
    }

    pub fn targets(&self) -> Vec<(String, f64)> {
        self.rows.iter().map(|r| (r.design_id.clone(), r.cd)).collect()
    }
}

/// Parses `name=column` alias specs (external header → canonical name).
pub fn parse_alias(spec: &str) -> Result<(String, String), String> {
    let (from, to) = spec
        .split_once('=')
        .ok_or_else(|| format!("alias {spec:?} is not of the form EXTERNAL=CANONICAL"))?;
    let to = to.trim();
    if !REQUIRED_COLUMNS.contains(&to) && !OPTIONAL_COLUMNS.contains(&to) {
        return Err(format!("alias target {to:?} is not a manifest column"));
    }
    Ok((from.trim().to_string(), to.to_string()))
}

/// STL files in `dir` keyed by file stem (extension matched
/// case-insensitively).
pub fn stl_files(dir: &Path) -> std::io::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_stl = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("stl"));
        if is_stl && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Loads a manifest, matching columns by name after applying `aliases`.
/// With `stl_dir`, every design must have `<design_id>.stl` there.
pub fn load_manifest(path: &Path, stl_dir: Option<&Path>, aliases: &[(String, String)]) -> Result<Manifest, ManifestError> {
    let io = |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = fs::read_to_string(path).map_err(io)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| ManifestError::ParseError {
        line: 1,
        message: e.to_string(),
    })?;
    let alias: HashMap<&str, &str> = aliases.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut column = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let name = alias.get(h).copied().unwrap_or(h);
        column.entry(name.to_string()).or_insert(i);
    }
    for required in REQUIRED_COLUMNS {
        if !column.contains_key(required) {
            return Err(ManifestError::MissingColumn(required.to_string()));
        }
    }

    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| ManifestError::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |name: &str| column.get(name).and_then(|&i| record.get(i)).unwrap_or("");
        let number = |name: &str| -> Result<Option<f64>, ManifestError> {
            let raw = field(name);
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse::<f64>().map(Some).map_err(|_| ManifestError::ParseError {
                line,
                message: format!("column {name}: {raw:?} is not a number"),
            })
        };
        let design_id = field("design_id").to_string();
        if design_id.is_empty() {
            return Err(ManifestError::ParseError {
                line,
                message: "empty design_id".into(),
            });
        }
        let cd = match number("cd")? {
            Some(v) if v.is_finite() => v,
            _ => {
                return Err(ManifestError::ParseError {
                    line,
                    message: format!("cd of {design_id} is missing or not finite"),
                })
            }
        };
        if seen.insert(design_id.clone(), line).is_some() {
            return Err(ManifestError::DuplicateId { id: design_id, line });
        }
        rows.push(ManifestRow {
            cl: number("cl")?,
            cl_f: number("cl_f")?,
            cl_r: number("cl_r")?,
            cm: number("cm")?,
            design_id,
            cd,
        });
    }
    rows.sort_by(|a, b| a.design_id.cmp(&b.design_id));

    let mut stl_paths = BTreeMap::new();
    if let Some(dir) = stl_dir {
        let files = stl_files(dir).map_err(|source| ManifestError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut missing = Vec::new();
        for r in &rows {
            match files.get(&r.design_id) {
                Some(p) => {
                    stl_paths.insert(r.design_id.clone(), p.clone());
                }
                None => missing.push(r.design_id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(ManifestError::MissingStl(missing));
        }
    }
    Ok(Manifest {
        rows,
        stl_paths,
    })
}
