//! Reports and the files written under an output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evolution::Diagnostics;
use crate::field::{write_snapshot, PhysicalField};
use crate::lab::config::ExperimentConfig;
use crate::lattice::TorusGeometry;

pub const DIAGNOSTICS_HEADER: &str = "t,mass,energy,e_star,e_star_star,hdot1,h1_star";
pub const NORMS_HEADER: &str = "window_start,window_end,z,z_prime,x1_proxy,y1_proxy";
pub const EXTINCTION_HEADER: &str = "N,T,z_value";

/// A named property with its verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub lambda: [f64; 4],
    pub grid: [usize; 4],
}

impl From<&TorusGeometry> for GridMeta {
    fn from(g: &TorusGeometry) -> Self {
        Self {
            lambda: g.lambda(),
            grid: g.grid(),
        }
    }
}

/// Outcome of one scenario. Wall-clock time is kept out of the report so
/// that reruns are byte-identical; it goes to `timing.txt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: ExperimentConfig,
    pub grid: Option<GridMeta>,
    pub results: Map<String, Value>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn new(scenario: &str, config: &ExperimentConfig) -> Self {
        Self {
            scenario: scenario.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            grid: None,
            results: Map::new(),
            checks: Vec::new(),
            passed: true,
        }
    }

    pub fn with_grid(mut self, g: &TorusGeometry) -> Self {
        self.grid = Some(g.into());
        self
    }

    pub fn result<T: Serialize>(&mut self, key: &str, value: T) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| Error::Data(e.to_string()))?;
        self.results.insert(key.to_string(), v);
        Ok(())
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn find_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub version: String,
    pub passed: bool,
    pub files: Vec<ManifestEntry>,
}

/// Writer for everything a run leaves under `--out`.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn target(&mut self, name: &str, kind: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.insert(name.to_string(), kind.to_string());
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, kind: &str, text: &str) -> Result<()> {
        let path = self.target(name, kind)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
        text.push('\n');
        self.write_text(name, "json", &text)
    }

    pub fn write_field(&mut self, name: &str, field: &PhysicalField) -> Result<()> {
        let path = self.target(name, "field_binary")?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        write_snapshot(&mut w, field).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Writes `manifest.json` and the untracked `timing.txt`.
    pub fn finish(mut self, report: &ExperimentReport, seconds: f64) -> Result<()> {
        self.write_json("report.json", report)?;
        let manifest = Manifest {
            scenario: report.scenario.clone(),
            version: report.version.clone(),
            passed: report.passed,
            files: self
                .files
                .iter()
                .map(|(p, k)| ManifestEntry {
                    path: p.clone(),
                    kind: k.clone(),
                })
                .collect(),
        };
        let mut text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let path = self.root.join("timing.txt");
        fs::write(&path, format!("wall_clock_seconds={seconds}\n")).map_err(|e| Error::io(&path, e))
    }
}

/// CSV with the shortest decimal text that reads back to the same f64.
pub fn csv_text(header: &str, rows: &[Vec<f64>]) -> String {
    let mut s = String::with_capacity(32 * (rows.len() + 1));
    s.push_str(header);
    s.push('\n');
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn diagnostics_csv(rows: &[Diagnostics]) -> String {
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|d| {
            vec![
                d.t,
                d.mass,
                d.energy,
                d.e_star,
                d.e_star_star,
                d.hdot1,
                d.h1_star,
            ]
        })
        .collect();
    csv_text(DIAGNOSTICS_HEADER, &rows)
}

/// Reads a CSV written by [`csv_text`], checking the header.
pub fn read_csv(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if first != header {
        return Err(Error::Data(format!(
            "{}: expected header `{header}`, found `{first}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), k + 2)))?;
        rows.push(row);
    }
    Ok(rows)
}
