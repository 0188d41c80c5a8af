//! On-disk formats for graphs, features, labels, splits and embeddings.
//!
//! * edges: `src<TAB>dst` per line, `#` comments, 0-based ids
//! * features: CSV, or binary `DSGF` + `N: u64 LE` + `F: u64 LE` + `N*F` f32 LE
//! * labels: `node<TAB>label` per line, nodes may be missing
//! * splits: JSON `{"train": [...], "val": [...], "test": [...]}` (or an array of those)
//! * manifest: JSON array of `{"edges", "features" | "degree_profile", "label"}`

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{degree_profile_features, Graph, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::sparse::Csr;

pub const FEATURE_MAGIC: &[u8; 4] = b"DSGF";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Keep arcs as given instead of adding the reverse direction.
    pub directed: bool,
    /// Skip the first line of CSV feature files.
    pub header: bool,
    /// Scale every feature row to unit L2 norm after loading.
    pub row_normalize: bool,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Parses an edge list into `(src, dst, line_number)` triples.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(path, line_no, format!("expected `src<TAB>dst`, got {line:?}")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, line_no, format!("bad node id {s:?}")))
        };
        out.push((parse(fields[0])?, parse(fields[1])?, line_no));
    }
    Ok(out)
}

pub fn read_features(path: &Path, header: bool) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        decode_features_binary(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| parse_err(path, 0, "feature file is neither DSGF nor UTF-8 CSV"))?;
        parse_features_csv(path, &text, header)
    }
}

fn parse_features_csv(path: &Path, text: &str, header: bool) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (k, line) in text.lines().enumerate().skip(usize::from(header)) {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad number {:?}", field.trim())))?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(path, line_no, format!("expected {c} columns, got {width}")))
            }
            _ => {}
        }
        rows += 1;
    }
    Tensor::from_vec(rows, cols.unwrap_or(0), data)
}

pub fn decode_features_binary(bytes: &[u8]) -> Result<Tensor> {
    if !bytes.starts_with(FEATURE_MAGIC) {
        return Err(Error::Format("missing DSGF magic".into()));
    }
    if bytes.len() < 20 {
        return Err(Error::Format("truncated DSGF header".into()));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let f = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload = &bytes[20..];
    let want = n
        .checked_mul(f)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Format("DSGF dimensions overflow".into()))?;
    if payload.len() != want {
        return Err(Error::Format(format!(
            "DSGF payload is {} bytes, expected {want} for {n}x{f}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(n, f, data)
}

pub fn encode_features_binary(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * t.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_features_binary(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_features_binary(t)).map_err(|e| Error::io(path, e))
}

pub fn write_features_csv(path: &Path, t: &Tensor) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for r in 0..t.rows() {
        let line: Vec<String> = t.row(r).iter().map(|v| format!("{}", *v as f32)).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_labels(path: &Path, n: usize) -> Result<Vec<Option<usize>>> {
    let text = read_text(path)?;
    let mut labels = vec![None; n];
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(path, line_no, format!("expected `node<TAB>label`, got {line:?}")));
        }
        let node: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad node id {:?}", fields[0])))?;
        let label: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad label {:?}", fields[1])))?;
        if node >= n {
            return Err(Error::Range {
                id: node,
                n,
                context: Some(format!("{}:{line_no}", path.display())),
            });
        }
        labels[node] = Some(label);
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[Option<usize>]) -> Result<()> {
    let mut s = String::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            s.push_str(&format!("{i}\t{l}\n"));
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes each undirected edge once (`src <= dst`) unless `directed`.
pub fn write_edges(path: &Path, adj: &Csr, directed: bool) -> Result<()> {
    let mut s = String::new();
    for (r, c, _) in adj.iter() {
        if directed || r <= c {
            s.push_str(&format!("{r}\t{c}\n"));
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// `src<TAB>dst<TAB>weight` for every stored entry.
pub fn write_weighted_edges(path: &Path, adj: &Csr) -> Result<()> {
    let mut s = String::new();
    for (r, c, w) in adj.iter() {
        s.push_str(&format!("{r}\t{c}\t{w}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn build_adjacency(path: &Path, n: usize, directed: bool) -> Result<Csr> {
    let edges = read_edges(path)?;
    let mut arcs = Vec::with_capacity(edges.len() * 2);
    for (s, d, line) in edges {
        for id in [s, d] {
            if id >= n {
                return Err(Error::Range {
                    id,
                    n,
                    context: Some(format!("{}:{line}", path.display())),
                });
            }
        }
        arcs.push((s, d));
        if !directed {
            arcs.push((d, s));
        }
    }
    Csr::from_arcs(n, arcs)
}

fn row_normalize(t: &mut Tensor) {
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// Loads a graph; `N` is the feature row count.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
    opts: LoadOptions,
) -> Result<Graph> {
    let mut features = read_features(feature_path, opts.header)?;
    if opts.row_normalize {
        row_normalize(&mut features);
    }
    let n = features.rows();
    let adjacency = build_adjacency(edge_path, n, opts.directed)?;
    let graph = Graph::new(adjacency, features)?;
    match label_path {
        Some(p) => graph.with_labels(read_labels(p, n)?),
        None => Ok(graph),
    }
}

/// Reads one split object or an array of them.
pub fn read_splits(path: &Path) -> Result<Vec<Split>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Split),
        Many(Vec<Split>),
    }
    let text = read_text(path)?;
    Ok(match serde_json::from_str(&text)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

pub fn write_splits(path: &Path, splits: &[Split]) -> Result<()> {
    let text = if splits.len() == 1 {
        serde_json::to_string_pretty(&splits[0])?
    } else {
        serde_json::to_string_pretty(splits)?
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    DegreeProfile,
    #[serde(untagged)]
    File(PathBuf),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub edges: PathBuf,
    pub features: FeatureSource,
    pub label: Option<usize>,
    /// Node count; needed for degree-profile graphs with isolated tail nodes.
    #[serde(default)]
    pub nodes: Option<usize>,
}

/// Loads a graph collection. Relative paths resolve against the manifest's
/// directory.
pub fn load_manifest(path: &Path, opts: LoadOptions) -> Result<Vec<Graph>> {
    let entries: Vec<ManifestEntry> = serde_json::from_str(&read_text(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let edges = base.join(&e.edges);
            let graph = match &e.features {
                FeatureSource::File(f) => load_graph(&edges, &base.join(f), None, opts)?,
                FeatureSource::DegreeProfile => {
                    let n = match e.nodes {
                        Some(n) => n,
                        None => read_edges(&edges)?
                            .iter()
                            .map(|&(s, d, _)| s.max(d) + 1)
                            .max()
                            .unwrap_or(0),
                    };
                    let adj = build_adjacency(&edges, n, opts.directed)?;
                    let feats = degree_profile_features(&adj);
                    Graph::new(adj, feats)?
                }
            };
            Ok(graph.with_graph_label(e.label))
        })
        .collect()
}
