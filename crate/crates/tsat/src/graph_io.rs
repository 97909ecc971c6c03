//! Dynamic-graph serialization: one self-describing text document per graph
//! with a shape header, node matrix, dense edge tensor, adjacency, residual
//! correlations, and the per-series decompositions. Values are written in
//! shortest round-trip decimal form, so a parse of the output restores every
//! 64-bit float bit-exactly. An archive is a plain concatenation of graph
//! documents.

use crate::emd::ImfDecomposition;
use crate::error::{Result, TsatError};
use crate::graph::{build_adjacency, DynamicGraph, EdgeTensor, NodeMatrix};
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "tsat-graph v1";

pub fn graph_to_text(g: &DynamicGraph) -> String {
    let n = g.num_series();
    let k = g.num_imfs();
    let l_x = g.nodes.backcast_len();
    let mut out = String::new();
    let _ = writeln!(out, "{}", MAGIC);
    let _ = writeln!(out, "series {}", n);
    let _ = writeln!(out, "backcast {}", l_x);
    let _ = writeln!(out, "imfs {}", k);
    let _ = writeln!(out, "threshold {}", g.adjacency.threshold());
    let _ = writeln!(out, "window_start {}", g.nodes.window_start());
    for name in g.nodes.series_names() {
        let _ = writeln!(out, "name {}", name);
    }
    let _ = writeln!(out, "nodes");
    for i in 0..n {
        let _ = writeln!(out, "{}", join_floats(g.nodes.matrix().row(i)));
    }
    for kk in 0..k {
        let _ = writeln!(out, "edges {}", kk);
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| g.edges.at(i, j, kk)).collect();
            let _ = writeln!(out, "{}", join_floats(&row));
        }
    }
    let _ = writeln!(out, "adjacency");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| g.adjacency.at(i, j).to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let _ = writeln!(out, "rho");
    for i in 0..n {
        let _ = writeln!(out, "{}", join_floats(g.residual_correlations.row(i)));
    }
    for (i, d) in g.decompositions.iter().enumerate() {
        let _ = writeln!(out, "decomposition {}", i);
        let iters: Vec<String> = d.sift_iterations.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "sift_iters {}", iters.join(" "));
        for imf in &d.imfs {
            let _ = writeln!(out, "imf {}", join_floats(imf));
        }
        let _ = writeln!(out, "residual {}", join_floats(&d.residual));
    }
    let _ = writeln!(out, "end");
    out
}

fn join_floats(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{}", x)).collect();
    parts.join(" ")
}

pub fn export_graph(g: &DynamicGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, graph_to_text(g)).map_err(|e| TsatError::io(path.display().to_string(), e))
}

pub fn export_archive(graphs: &[DynamicGraph], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for g in graphs {
        out.push_str(&graph_to_text(g));
    }
    std::fs::write(path, out).map_err(|e| TsatError::io(path.display().to_string(), e))
}

/// Read exactly one graph from a file.
pub fn import_graph(path: impl AsRef<Path>) -> Result<DynamicGraph> {
    let path = path.as_ref();
    let graphs = import_archive(path)?;
    if graphs.len() != 1 {
        return Err(TsatError::Integrity {
            path: path.display().to_string(),
            detail: format!("expected one graph, found {}", graphs.len()),
        });
    }
    Ok(graphs.into_iter().next().unwrap())
}

/// Read all graphs from a file or archive.
pub fn import_archive(path: impl AsRef<Path>) -> Result<Vec<DynamicGraph>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TsatError::io(path.display().to_string(), e))?;
    parse_graphs(&text, &path.display().to_string())
}

pub fn parse_graphs(text: &str, path: &str) -> Result<Vec<DynamicGraph>> {
    let mut cursor = Cursor {
        lines: text.lines().collect(),
        pos: 0,
        path,
    };
    let mut graphs = Vec::new();
    while !cursor.at_end() {
        graphs.push(parse_one(&mut cursor)?);
    }
    if graphs.is_empty() {
        return Err(cursor.err("no graph documents found"));
    }
    Ok(graphs)
}

struct Cursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn at_end(&mut self) -> bool {
        while self.pos < self.lines.len() && self.lines[self.pos].trim().is_empty() {
            self.pos += 1;
        }
        self.pos >= self.lines.len()
    }

    fn next_line(&mut self) -> Result<&'a str> {
        while self.pos < self.lines.len() && self.lines[self.pos].trim().is_empty() {
            self.pos += 1;
        }
        if self.pos >= self.lines.len() {
            return Err(self.err("unexpected end of file"));
        }
        let line = self.lines[self.pos].trim_end_matches('\r');
        self.pos += 1;
        Ok(line)
    }

    fn expect_prefix(&mut self, prefix: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(prefix)
            .map(str::trim)
            .ok_or_else(|| self.err(&format!("expected {:?}, found {:?}", prefix, line)))
    }

    fn err(&self, detail: &str) -> TsatError {
        TsatError::Integrity {
            path: self.path.to_string(),
            detail: format!("line {}: {}", self.pos.min(self.lines.len()), detail),
        }
    }
}

fn parse_one(cursor: &mut Cursor) -> Result<DynamicGraph> {
    let magic = cursor.next_line()?;
    if magic.trim() != MAGIC {
        return Err(cursor.err(&format!("bad magic {:?}", magic)));
    }
    let n: usize = parse_scalar(cursor, "series")?;
    let l_x: usize = parse_scalar(cursor, "backcast")?;
    let k: usize = parse_scalar(cursor, "imfs")?;
    let threshold: f64 = parse_scalar(cursor, "threshold")?;
    let window_start: usize = parse_scalar(cursor, "window_start")?;
    let mut names = Vec::with_capacity(n);
    for _ in 0..n {
        names.push(cursor.expect_prefix("name")?.to_string());
    }

    cursor.expect_prefix("nodes")?;
    let mut node_data = Vec::with_capacity(n * l_x);
    for _ in 0..n {
        let row = parse_float_row(cursor, l_x)?;
        node_data.extend_from_slice(&row);
    }
    let nodes = NodeMatrix::new(Tensor::new(vec![n, l_x], node_data)?, names, window_start)?;

    let mut edge_data = vec![0.0; n * n * k];
    for kk in 0..k {
        let tag = cursor.expect_prefix("edges")?;
        let found: usize = tag.parse().map_err(|_| cursor.err("bad edges index"))?;
        if found != kk {
            return Err(cursor.err(&format!("edges slice {} out of order (expected {})", found, kk)));
        }
        for i in 0..n {
            let row = parse_float_row(cursor, n)?;
            for (j, v) in row.into_iter().enumerate() {
                edge_data[(i * n + j) * k + kk] = v;
            }
        }
    }
    let edges = EdgeTensor::from_raw(n, k, edge_data)?;
    for kk in 0..k {
        for i in 0..n {
            for j in (i + 1)..n {
                if edges.at(i, j, kk) != edges.at(j, i, kk) {
                    return Err(cursor.err(&format!("edge tensor not symmetric at ({}, {}, {})", i, j, kk)));
                }
            }
        }
    }

    cursor.expect_prefix("adjacency")?;
    let mut adj_rows = Vec::with_capacity(n);
    for _ in 0..n {
        let line = cursor.next_line()?;
        let row: Vec<u8> = line
            .split_whitespace()
            .map(|c| match c {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(cursor.err(&format!("adjacency entry {:?} is not 0/1", other))),
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(cursor.err(&format!("adjacency row has {} entries, expected {}", row.len(), n)));
        }
        adj_rows.push(row);
    }

    cursor.expect_prefix("rho")?;
    let mut rho_data = Vec::with_capacity(n * n);
    for _ in 0..n {
        rho_data.extend_from_slice(&parse_float_row(cursor, n)?);
    }
    let rho = Tensor::new(vec![n, n], rho_data)?;

    // Rebuild the adjacency through the same constructor and verify it
    // matches the stored rows.
    let adjacency = build_adjacency(&rho, threshold)?;
    for (i, row) in adj_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if adjacency.at(i, j) != v {
                return Err(cursor.err(&format!(
                    "adjacency[{}][{}] = {} disagrees with threshold rule on rho",
                    i, j, v
                )));
            }
        }
    }

    let mut decompositions = Vec::with_capacity(n);
    for i in 0..n {
        let tag = cursor.expect_prefix("decomposition")?;
        let found: usize = tag.parse().map_err(|_| cursor.err("bad decomposition index"))?;
        if found != i {
            return Err(cursor.err(&format!("decomposition {} out of order (expected {})", found, i)));
        }
        let iters_line = cursor.expect_prefix("sift_iters")?;
        let sift_iterations: Vec<usize> = iters_line
            .split_whitespace()
            .map(|c| c.parse().map_err(|_| cursor.err(&format!("bad sift count {:?}", c))))
            .collect::<Result<_>>()?;
        if sift_iterations.len() != k {
            return Err(cursor.err(&format!(
                "{} sift counts for {} IMF slots",
                sift_iterations.len(),
                k
            )));
        }
        let mut imfs = Vec::with_capacity(k);
        for _ in 0..k {
            let line = cursor.expect_prefix("imf")?;
            imfs.push(parse_floats(cursor, line, l_x)?);
        }
        let line = cursor.expect_prefix("residual")?;
        let residual = parse_floats(cursor, line, l_x)?;
        decompositions.push(ImfDecomposition {
            imfs,
            residual,
            sift_iterations,
        });
    }

    let terminator = cursor.next_line()?;
    if terminator.trim() != "end" {
        return Err(cursor.err(&format!("expected end marker, found {:?}", terminator)));
    }

    Ok(DynamicGraph {
        nodes,
        edges,
        adjacency,
        residual_correlations: rho,
        decompositions,
    })
}

fn parse_scalar<T: std::str::FromStr>(cursor: &mut Cursor, tag: &str) -> Result<T> {
    let raw = cursor.expect_prefix(tag)?;
    raw.parse()
        .map_err(|_| cursor.err(&format!("bad {} value {:?}", tag, raw)))
}

fn parse_float_row(cursor: &mut Cursor, expected: usize) -> Result<Vec<f64>> {
    let line = cursor.next_line()?;
    parse_floats(cursor, line, expected)
}

fn parse_floats(cursor: &Cursor, line: &str, expected: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|c| c.parse().map_err(|_| cursor.err(&format!("bad float {:?}", c))))
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(cursor.err(&format!("{} values on line, expected {}", vals.len(), expected)));
    }
    Ok(vals)
}
