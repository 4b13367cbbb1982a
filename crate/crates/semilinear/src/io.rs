//! CSV and JSON formats for fields, boundary data, operators and tables.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use semilinear_core::schrodinger::DNMatrix;
use semilinear_core::solution_map::SolveReport;
use semilinear_core::sparse::SparseOperator;
use semilinear_core::{BoundaryField, Field, Grid};

use crate::error::{CliError, CliResult};

fn writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

// --- fields ----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    i: usize,
    j: usize,
    value: f64,
}

/// One row `i,j,value` per node, `j` outer.
pub fn write_field_csv(path: &Path, u: &Field) -> CliResult<()> {
    let n = u.grid().n();
    let mut w = writer(path)?;
    for j in 0..n {
        for i in 0..n {
            w.serialize(NodeRow { i, j, value: u.at(i, j) })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_csv(grid: &Arc<Grid>, path: &Path) -> CliResult<Field> {
    let n = grid.n();
    let mut values = vec![f64::NAN; n * n];
    let mut seen = vec![false; n * n];
    for row in reader(path)?.deserialize() {
        let row: NodeRow = row?;
        if row.i >= n || row.j >= n {
            return Err(CliError::Config(format!("node ({}, {}) outside a grid of {n}", row.i, row.j)));
        }
        let k = grid.index(row.i, row.j);
        if std::mem::replace(&mut seen[k], true) {
            return Err(CliError::Config(format!("node ({}, {}) listed twice", row.i, row.j)));
        }
        values[k] = row.value;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        let (i, j) = grid.coords(k);
        return Err(CliError::Config(format!("node ({i}, {j}) missing from {}", path.display())));
    }
    Field::new(grid, values).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldJson {
    n: usize,
    values: Vec<f64>,
}

pub fn write_field_json(path: &Path, u: &Field) -> CliResult<()> {
    let doc = FieldJson {
        n: u.grid().n(),
        values: u.values().to_vec(),
    };
    write_json(path, &doc)
}

pub fn read_field_json(grid: &Arc<Grid>, path: &Path) -> CliResult<Field> {
    let doc: FieldJson = read_json(path)?;
    if doc.n != grid.n() {
        return Err(CliError::Config(format!(
            "{} holds a field on a grid of {}, expected {}",
            path.display(),
            doc.n,
            grid.n()
        )));
    }
    Field::new(grid, doc.values).map_err(|e| CliError::Config(e.to_string()))
}

/// Dispatches on the extension: `.json` or CSV otherwise.
pub fn read_field_file(grid: &Arc<Grid>, path: &Path) -> CliResult<Field> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_field_json(grid, path),
        _ => read_field_csv(grid, path),
    }
}

// --- boundary fields ---------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct BoundaryRow {
    slot: usize,
    i: usize,
    j: usize,
    arclength: f64,
    value: f64,
}

/// One row per boundary node in counterclockwise order from the origin.
pub fn write_boundary_csv(path: &Path, f: &BoundaryField) -> CliResult<()> {
    let grid = f.grid();
    let mut w = writer(path)?;
    for (slot, (&node, &value)) in grid.boundary_order().iter().zip(f.values()).enumerate() {
        let (i, j) = grid.coords(node);
        w.serialize(BoundaryRow {
            slot,
            i,
            j,
            arclength: grid.arclength(slot),
            value,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_boundary_csv(grid: &Arc<Grid>, path: &Path) -> CliResult<BoundaryField> {
    let len = grid.boundary_len();
    let mut values = vec![f64::NAN; len];
    let mut count = 0;
    for row in reader(path)?.deserialize() {
        let row: BoundaryRow = row?;
        if row.slot >= len || grid.boundary_order()[row.slot] != grid.index(row.i, row.j) {
            return Err(CliError::Config(format!("boundary row {} does not match the grid", row.slot)));
        }
        values[row.slot] = row.value;
        count += 1;
    }
    if count != len {
        return Err(CliError::Config(format!("expected {len} boundary rows, got {count}")));
    }
    BoundaryField::new(grid, values).map_err(|e| CliError::Config(e.to_string()))
}

// --- operators -------------------------------------------------------------

/// Nonzero entries as `row,col,value`.
pub fn write_triplets_csv(path: &Path, op: &SparseOperator) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["row", "col", "value"])?;
    for (r, c, v) in op.to_triplets() {
        w.serialize((r, c, v))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnHeader {
    pub grid: usize,
    pub basis_size: usize,
    pub potential_hash: String,
}

/// Matrix `⟨Λ f_i, f_j⟩` with one row per `j`, preceded by a `#` line
/// holding the JSON header.
pub fn write_dn_csv(path: &Path, dn: &DNMatrix) -> CliResult<()> {
    let k = dn.size();
    let header = DnHeader {
        grid: dn.basis.first().map_or(0, |b| b.grid().n()),
        basis_size: k,
        potential_hash: format!("{:016x}", dn.potential_hash),
    };
    let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# {}", serde_json::to_string(&header)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..k).map(|i| format!("f{i}")))?;
    for j in 0..k {
        w.serialize((0..k).map(|i| dn.get(j, i)).collect::<Vec<f64>>())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the header and the entries in row-major order.
pub fn read_dn_csv(path: &Path) -> CliResult<(DnHeader, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or_default();
    let header: DnHeader = serde_json::from_str(first.trim_start_matches('#').trim())
        .map_err(|e| CliError::Config(format!("{}: bad header: {e}", path.display())))?;
    let mut entries = Vec::with_capacity(header.basis_size * header.basis_size);
    for row in reader(path)?.deserialize() {
        let row: Vec<f64> = row?;
        if row.len() != header.basis_size {
            return Err(CliError::Config("DN row length does not match the header".into()));
        }
        entries.extend(row);
    }
    if entries.len() != header.basis_size * header.basis_size {
        return Err(CliError::Config("DN matrix is not square".into()));
    }
    Ok((header, entries))
}

// --- tables and JSON ---------------------------------------------------------

/// Column-named table of floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Table {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|x| x == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }
}

pub fn write_table_csv(path: &Path, table: &Table) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table_csv(path: &Path) -> CliResult<Table> {
    let mut r = reader(path)?;
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(Table { columns, rows })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Serializable mirror of a solver report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub iterations: usize,
    pub final_update_norm: f64,
    pub contraction_rate: f64,
    pub residual: f64,
    pub delta_used: f64,
    pub bound_ratio: f64,
    pub history: Vec<f64>,
}

impl From<&SolveReport> for ReportJson {
    fn from(r: &SolveReport) -> Self {
        ReportJson {
            iterations: r.iterations,
            final_update_norm: r.final_update_norm,
            contraction_rate: r.contraction_rate,
            residual: r.residual,
            delta_used: r.delta_used,
            bound_ratio: r.bound_ratio,
            history: r.history.clone(),
        }
    }
}
