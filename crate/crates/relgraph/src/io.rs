//! Series and adjacency loaders, and the CSV artifacts written by runs.
//!
//! Input files are comma-separated, one record per line. Lines starting
//! with `#` are comments, so every artifact written here (which begins with
//! a provenance comment) can be read back as input.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use relgraph_core::data::PredefinedGraph;
use relgraph_core::Tensor;

use crate::config::AdjacencyFormat;
use crate::error::{Error, Result};

/// One record of a numeric CSV: its 1-based line and raw fields.
struct Record {
    line: u64,
    fields: Vec<String>,
}

fn read_records(text: &str, what: &str) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{what}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push(Record { line, fields: rec.iter().map(str::to_string).collect() });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{what}: file is empty")));
    }
    Ok(out)
}

fn parse_cell(what: &str, line: u64, col: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::Data(format!("{what}: line {line}, column {}: `{cell}` is not a number", col + 1)))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("{what}: line {line}, column {}: non-finite value `{cell}`", col + 1)));
    }
    Ok(v)
}

fn dense_rows(records: &[Record], what: &str) -> Result<Tensor> {
    let width = records[0].fields.len();
    let mut data = Vec::with_capacity(records.len() * width);
    for r in records {
        if r.fields.len() != width {
            return Err(Error::Data(format!(
                "{what}: line {} has {} fields, expected {width} as on line {}",
                r.line,
                r.fields.len(),
                records[0].line
            )));
        }
        for (col, cell) in r.fields.iter().enumerate() {
            data.push(parse_cell(what, r.line, col, cell)?);
        }
    }
    Ok(Tensor::new(records.len(), width, data)?)
}

/// Parses a `T×N` series: one timestep per line, one node per column.
pub fn parse_series(text: &str, what: &str) -> Result<Tensor> {
    dense_rows(&read_records(text, what)?, what)
}

/// Loads a series and checks its node count against `nodes` when given.
pub fn load_series(path: &Path, nodes: Option<usize>) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let what = path.display().to_string();
    let series = parse_series(&text, &what)?;
    if let Some(n) = nodes {
        if series.cols() != n {
            return Err(Error::Data(format!("{what}: {} nodes but the config declares {n}", series.cols())));
        }
    }
    Ok(series)
}

/// Parses an adjacency for `n` nodes, as a dense `N×N` matrix or as
/// `i,j,w` edge lines with zero-based indices.
pub fn parse_adjacency(text: &str, n: usize, format: AdjacencyFormat, what: &str) -> Result<PredefinedGraph> {
    let records = read_records(text, what)?;
    let looks_dense = records.len() == n && records.iter().all(|r| r.fields.len() == n);
    let dense = match format {
        AdjacencyFormat::Dense => true,
        AdjacencyFormat::Edges => false,
        AdjacencyFormat::Auto => looks_dense,
    };
    let matrix = if dense {
        let m = dense_rows(&records, what)?;
        if m.shape() != (n, n) {
            return Err(Error::Data(format!("{what}: adjacency is {}x{}, expected {n}x{n}", m.rows(), m.cols())));
        }
        m
    } else {
        edge_list(&records, n, what)?
    };
    for i in 0..n {
        for j in 0..n {
            if matrix.get(i, j) < 0.0 {
                return Err(Error::Data(format!("{what}: negative weight {} at ({i}, {j})", matrix.get(i, j))));
            }
        }
    }
    Ok(PredefinedGraph::dense(matrix)?)
}

fn edge_list(records: &[Record], n: usize, what: &str) -> Result<Tensor> {
    let mut m = Tensor::zeros(n, n);
    let mut seen = vec![false; n * n];
    for r in records {
        if r.fields.len() != 3 {
            return Err(Error::Data(format!("{what}: line {}: expected `i,j,w`, found {} fields", r.line, r.fields.len())));
        }
        let index = |col: usize| -> Result<usize> {
            let cell = &r.fields[col];
            let k: usize = cell
                .parse()
                .map_err(|_| Error::Data(format!("{what}: line {}, column {}: `{cell}` is not a node index", r.line, col + 1)))?;
            if k >= n {
                return Err(Error::Data(format!("{what}: line {}: node index {k} out of range for {n} nodes", r.line)));
            }
            Ok(k)
        };
        let (i, j) = (index(0)?, index(1)?);
        let w = parse_cell(what, r.line, 2, &r.fields[2])?;
        if std::mem::replace(&mut seen[i * n + j], true) {
            return Err(Error::Data(format!("{what}: line {}: duplicate edge {i},{j}", r.line)));
        }
        m.set(i, j, w);
    }
    Ok(m)
}

/// Loads the optional pre-defined graph; no path means no graph.
pub fn load_adjacency(path: Option<&Path>, n: usize, format: AdjacencyFormat) -> Result<PredefinedGraph> {
    let Some(path) = path else {
        return Ok(PredefinedGraph::absent());
    };
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse_adjacency(&text, n, format, &path.display().to_string())
}

/// The first line of every artifact.
pub fn provenance(hash: &str, seed: u64) -> String {
    format!("# relgraph config={hash} seed={seed}")
}

/// Writes `lines` after the provenance comment.
pub fn write_lines<I, S>(path: &Path, header: &str, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let body = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for l in lines {
            writeln!(w, "{}", l.as_ref())?;
        }
        w.flush()
    };
    body().map_err(Error::io(path))
}

/// Comma-joined shortest round-trip representation.
pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Writes a matrix with an optional column-name line.
pub fn write_matrix(path: &Path, header: &str, columns: Option<&[&str]>, m: &Tensor) -> Result<()> {
    let names = columns.map(|c| c.join(","));
    let rows = (0..m.rows()).map(|i| csv_row(m.row(i)));
    write_lines(path, header, names.into_iter().chain(rows))
}
