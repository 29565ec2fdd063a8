// SPDX-License-Identifier: MIT OR Apache-2.0

//! Table and manifest output: CSV with fixed column schemas, pretty JSON
//! with sorted keys, and per-analysis manifests of input digests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::sha256_hex;
use crate::error::{Error, Result};
use crate::store::write_atomic;

/// Kind of value a CSV column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Col {
    Text,
    Int,
    Float,
    /// A float, or empty when the value is undefined.
    OptFloat,
}

/// Column layout of one CSV table.
#[derive(Debug, Clone, Copy)]
pub struct Schema {
    pub name: &'static str,
    pub columns: &'static [(&'static str, Col)],
}

use Col::{Float, Int, OptFloat, Text};

pub const HEAD_STABILITY: Schema = Schema {
    name: "head_stability",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("anchor_seed", Int),
        ("layer", Int),
        ("head", Int),
        ("S", Float),
        ("pair_min", Float),
        ("pair_max", Float),
    ],
};

pub const LAYERS: Schema = Schema {
    name: "layers",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("mode", Text),
        ("layer", Int),
        ("r_l", Float),
        ("S_l", Float),
    ],
};

pub const ALIGNMENT: Schema = Schema {
    name: "alignment",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("anchor_layer", Int),
        ("match_layer", Int),
        ("fraction", Float),
    ],
};

pub const COMMONNESS: Schema = Schema {
    name: "commonness",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("seed", Int),
        ("layer", Int),
        ("head", Int),
        ("commonness", Float),
    ],
};

pub const CKA: Schema = Schema {
    name: "cka",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("layer", Int),
        ("cka", Float),
    ],
};

pub const CKA_OVERLAY: Schema = Schema {
    name: "cka_overlay",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("layer", Int),
        ("cka", Float),
        ("S_l", Float),
    ],
};

pub const ABLATION: Schema = Schema {
    name: "ablation",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("seed", Int),
        ("layer", Int),
        ("head", Int),
        ("S", Float),
        ("ppl_baseline", Float),
        ("ppl_ablated", Float),
        ("delta_ppl", Float),
    ],
};

pub const SWEEP: Schema = Schema {
    name: "sweep",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("nominal_length", Int),
        ("mean_byte_tokens", Float),
        ("layer", Int),
        ("S_l", Float),
    ],
};

pub const NORMS: Schema = Schema {
    name: "norms",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("seed", Int),
        ("layer", Int),
        ("head", Int),
        ("query_norm", Float),
        ("output_norm", Float),
    ],
};

pub const REFITS: Schema = Schema {
    name: "refits",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("seed", Int),
        ("perplexity", Float),
        ("mean_output_norm", Float),
        ("final_loss", Float),
    ],
};

pub const METASNE_POINTS: Schema = Schema {
    name: "metasne_points",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("seed", Int),
        ("layer", Int),
        ("head", Int),
        ("r_l", Float),
        ("x", Float),
        ("y", Float),
    ],
};

pub const GAP_DEPTH: Schema = Schema {
    name: "gap_depth",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("n_layers", Int),
        ("l_max", Int),
        ("l_min", Int),
        ("S_lmax", Float),
        ("S_lmin", Float),
        ("delta_S", Float),
        ("r_lmax", Float),
        ("r_lmin", Float),
    ],
};

pub const OPTIMIZER_SUMMARY: Schema = Schema {
    name: "optimizer_summary",
    columns: &[
        ("arch_id", Text),
        ("variant", Text),
        ("mean_S", OptFloat),
        ("mean_S_cross", OptFloat),
        ("mean_perplexity", OptFloat),
        ("mean_output_norm", OptFloat),
    ],
};

pub const PANELS: Schema = Schema {
    name: "panels",
    columns: &[("panel", Text), ("status", Text), ("file", Text)],
};

/// Every schema, for lookup by table name.
pub const ALL_SCHEMAS: &[Schema] = &[
    HEAD_STABILITY,
    LAYERS,
    ALIGNMENT,
    COMMONNESS,
    CKA,
    CKA_OVERLAY,
    ABLATION,
    SWEEP,
    NORMS,
    REFITS,
    METASNE_POINTS,
    GAP_DEPTH,
    OPTIMIZER_SUMMARY,
    PANELS,
];

/// Schema of a CSV written by `analyze` or `report`, from its file name.
pub fn schema_for_file(file_name: &str) -> Option<Schema> {
    let stem = file_name.strip_suffix(".csv")?;
    Some(match stem {
        "head_stability_same_layer" | "head_stability_cross_layer" => HEAD_STABILITY,
        "layers_same_layer" | "layers_cross_layer" | "layer_stability" => LAYERS,
        "alignment" => ALIGNMENT,
        "commonness" => COMMONNESS,
        "cka" => CKA,
        "cka_overlay" => CKA_OVERLAY,
        "ablation" => ABLATION,
        "sweep" => SWEEP,
        "norms" => NORMS,
        "refits" => REFITS,
        "points" | "metasne_points" => METASNE_POINTS,
        "gap_depth" => GAP_DEPTH,
        "optimizer_summary" => OPTIMIZER_SUMMARY,
        "panels" => PANELS,
        _ => return None,
    })
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Float(f64),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => f.to_string(),
            Cell::Missing => String::new(),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Float)
    }
}

/// Rows checked against a schema as they are added.
#[derive(Debug, Clone)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.schema.columns.len(),
            "row width for table {}",
            self.schema.name
        );
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.schema.columns.iter().map(|c| c.0))
            .map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .map_err(csv_error)?;
        }
        w.into_inner().map_err(|e| Error::usage(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::usage(format!("csv: {e}"))
}

/// Check a CSV file's header and every cell against `schema`. Returns the row count.
pub fn validate_csv(path: &Path, schema: &Schema) -> Result<usize> {
    let bad = |msg: String| Error::InvalidDump(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<&str> = schema.columns.iter().map(|c| c.0).collect();
    if header != expected {
        return Err(bad(format!("header {header:?}, expected {expected:?}")));
    }
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        for ((name, kind), v) in schema.columns.iter().zip(rec.iter()) {
            let ok = match kind {
                Text => !v.is_empty(),
                Int => v.parse::<u64>().is_ok(),
                Float => v.parse::<f64>().is_ok_and(f64::is_finite),
                OptFloat => v.is_empty() || v.parse::<f64>().is_ok_and(f64::is_finite),
            };
            if !ok {
                return Err(bad(format!(
                    "row {}, column {name}: `{v}` is not a valid {kind:?}",
                    i + 1
                )));
            }
        }
        n += 1;
    }
    Ok(n)
}

/// Read a CSV file into header-keyed rows.
pub fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_error)?;
            Ok(header
                .iter()
                .cloned()
                .zip(rec.iter().map(str::to_string))
                .collect())
        })
        .collect()
}

/// Serialise as pretty JSON with object keys in sorted order.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    // Converting to a `Value` first sorts every map by key.
    let v = serde_json::to_value(value)?;
    let mut out = serde_json::to_vec_pretty(&v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &json_bytes(value)?)
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Record of what one analysis consumed and produced, keyed by paths
/// relative to the output root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub analysis: String,
    pub params: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    /// True if the manifest at `path` lists the same analysis, parameters
    /// and inputs, and every output it lists is still present unchanged.
    pub fn is_current(
        path: &Path,
        root: &Path,
        analysis: &str,
        params: &Value,
        inputs: &BTreeMap<String, String>,
    ) -> bool {
        let Ok(bytes) = std::fs::read(path) else {
            return false;
        };
        let Ok(m) = serde_json::from_slice::<Manifest>(&bytes) else {
            return false;
        };
        m.analysis == analysis
            && &m.params == params
            && &m.inputs == inputs
            && m.outputs
                .iter()
                .all(|(rel, digest)| file_digest(&root.join(rel)).is_ok_and(|d| &d == digest))
    }
}
