//! Datasets on disk, the contextual SBM generator, and JSON reports.
//!
//! Two directory layouts are read:
//!
//! * generic bundle: `edges.tsv` (two node indices per line, `#` comments),
//!   `features.csv` (one comma-separated row per node) and `labels.txt` (one
//!   class index per line). Node indices are row numbers in `features.csv`.
//! * WebKB layout: `out1_graph_edges.txt` and `out1_node_feature_label.txt`,
//!   each with one header line. Node ids are remapped to `0..N` in the order
//!   they appear in the feature file.
//!
//! Edge lists are symmetrized and deduplicated; self-loops in files are
//! dropped and counted in [`Dataset::dropped_self_loops`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";
pub const PARAMS_FILE: &str = "params.json";
pub const WEBKB_EDGES_FILE: &str = "out1_graph_edges.txt";
pub const WEBKB_NODES_FILE: &str = "out1_node_feature_label.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub dropped_self_loops: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, graph: Graph, features: Matrix, labels: Vec<usize>) -> Result<Self> {
        let n = graph.node_count();
        if features.rows() != n || labels.len() != n {
            return Err(Error::InconsistentNodeCount(format!(
                "graph has {n} nodes, features {} rows, labels {}",
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() == 0 {
            return Err(Error::InvalidConfig("dataset has no feature columns".into()));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            name: name.into(),
            graph,
            features,
            labels,
            num_classes,
            dropped_self_loops: 0,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// WebKB if its node file exists, otherwise the generic bundle.
    Auto,
    Generic,
    WebKb,
}

pub fn load_dataset(dir: &Path, format: DatasetFormat) -> Result<Dataset> {
    let format = match format {
        DatasetFormat::Auto if dir.join(WEBKB_NODES_FILE).exists() => DatasetFormat::WebKb,
        DatasetFormat::Auto => DatasetFormat::Generic,
        f => f,
    };
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    match format {
        DatasetFormat::WebKb => load_webkb(dir, name),
        _ => load_generic(dir, name),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))
}

/// Reads a dataset file; a missing file is reported as a parse error on the
/// bundle rather than an I/O failure.
fn read_required(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::parse(path.display(), 0, "required dataset file is missing"));
    }
    read(path)
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: &str) -> Result<T> {
    tok.trim()
        .parse()
        .map_err(|_| Error::parse(path.display(), line, format!("cannot parse `{tok}`")))
}

fn parse_pair(path: &Path, line: usize, text: &str) -> Result<(String, String)> {
    let mut toks = text.split_whitespace();
    match (toks.next(), toks.next(), toks.next()) {
        (Some(a), Some(b), None) => Ok((a.to_string(), b.to_string())),
        _ => Err(Error::parse(path.display(), line, "expected two node ids")),
    }
}

fn build_graph(edges: Vec<(usize, usize)>, n: usize) -> Result<(Graph, usize)> {
    let before = edges.len();
    let edges: Vec<_> = edges.into_iter().filter(|(u, v)| u != v).collect();
    let loops = before - edges.len();
    Ok((Graph::from_edges(&edges, n)?, loops))
}

fn load_generic(dir: &Path, name: String) -> Result<Dataset> {
    let fpath = dir.join(FEATURES_FILE);
    let ftext = read_required(&fpath)?;
    let mut rows = Vec::new();
    for (line, text) in content_lines(&ftext) {
        let row = text
            .split(',')
            .map(|t| parse_num::<f64>(&fpath, line, t))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(Error::parse(
                    fpath.display(),
                    line,
                    format!("expected {} features, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let features = Matrix::from_rows(&rows)?;
    let n = features.rows();

    let lpath = dir.join(LABELS_FILE);
    let ltext = read_required(&lpath)?;
    let labels = content_lines(&ltext)
        .map(|(line, t)| parse_num::<usize>(&lpath, line, t))
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != n {
        return Err(Error::InconsistentNodeCount(format!(
            "{} has {} labels but {} has {n} rows",
            lpath.display(),
            labels.len(),
            fpath.display()
        )));
    }

    let epath = dir.join(EDGES_FILE);
    let etext = read_required(&epath)?;
    let mut edges = Vec::new();
    for (line, text) in content_lines(&etext) {
        let (a, b) = parse_pair(&epath, line, text)?;
        let (u, v): (usize, usize) = (parse_num(&epath, line, &a)?, parse_num(&epath, line, &b)?);
        if u >= n || v >= n {
            return Err(Error::parse(
                epath.display(),
                line,
                format!("node index out of range for {n} nodes"),
            ));
        }
        edges.push((u, v));
    }
    let (graph, loops) = build_graph(edges, n)?;
    let mut ds = Dataset::new(name, graph, features, labels)?;
    ds.dropped_self_loops = loops;
    Ok(ds)
}

fn load_webkb(dir: &Path, name: String) -> Result<Dataset> {
    let npath = dir.join(WEBKB_NODES_FILE);
    let ntext = read_required(&npath)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, text) in ntext.lines().enumerate().skip(1) {
        let line = line + 1;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(npath.display(), line, "expected id, features, label"));
        }
        let row = cols[1]
            .split(',')
            .map(|t| parse_num::<f64>(&npath, line, t))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(Error::parse(
                    npath.display(),
                    line,
                    format!("expected {} features, found {}", first.len(), row.len()),
                ));
            }
        }
        let next = ids.len();
        if ids.insert(cols[0].trim().to_string(), next).is_some() {
            return Err(Error::parse(npath.display(), line, format!("duplicate node id {}", cols[0])));
        }
        rows.push(row);
        labels.push(parse_num::<usize>(&npath, line, cols[2])?);
    }
    let features = Matrix::from_rows(&rows)?;
    let n = features.rows();

    let epath = dir.join(WEBKB_EDGES_FILE);
    let etext = read_required(&epath)?;
    let mut edges = Vec::new();
    for (line, text) in etext.lines().enumerate().skip(1) {
        let line = line + 1;
        if text.trim().is_empty() {
            continue;
        }
        let (a, b) = parse_pair(&epath, line, text)?;
        let lookup = |id: &str| {
            ids.get(id).copied().ok_or_else(|| {
                Error::parse(epath.display(), line, format!("unknown node id {id}"))
            })
        };
        edges.push((lookup(&a)?, lookup(&b)?));
    }
    let (graph, loops) = build_graph(edges, n)?;
    let mut ds = Dataset::new(name, graph, features, labels)?;
    ds.dropped_self_loops = loops;
    Ok(ds)
}

/// Writes `ds` as a generic bundle. Floats use the shortest representation
/// that parses back to the same value.
pub fn save_bundle(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
    let mut edges = String::from("# source\ttarget\n");
    for (u, v) in ds.graph.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    let mut feats = String::new();
    for i in 0..ds.features.rows() {
        let row: Vec<String> = ds.features.row(i).iter().map(|v| format!("{v:?}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    let labels: String = ds.labels.iter().map(|l| format!("{l}\n")).collect();
    for (file, body) in [(EDGES_FILE, edges), (FEATURES_FILE, feats), (LABELS_FILE, labels)] {
        let p = dir.join(file);
        fs::write(&p, body).map_err(|e| Error::io(p.display(), e))?;
    }
    Ok(())
}

/// Contextual stochastic block model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsbmParams {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Norm of each class-mean vector.
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for CsbmParams {
    fn default() -> Self {
        Self {
            nodes: 500,
            classes: 2,
            p_in: 0.02,
            p_out: 0.2,
            feature_dim: 32,
            mu: 1.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl CsbmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return bad("edge probabilities must lie in [0, 1]");
        }
        if self.classes == 0 || self.nodes < self.classes {
            return bad("need at least one node per class");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.mu.is_nan() || self.mu < 0.0 || self.sigma.is_nan() || self.sigma <= 0.0 {
            return bad("need mu >= 0 and sigma > 0");
        }
        Ok(())
    }

    /// Unordered same-class and cross-class pair counts.
    pub fn pair_counts(&self) -> (u64, u64) {
        let (n, c) = (self.nodes as u64, self.classes as u64);
        let sizes = (0..c).map(|k| n / c + u64::from(k < n % c));
        let intra: u64 = sizes.map(|s| s * s.saturating_sub(1) / 2).sum();
        (intra, n * (n - 1) / 2 - intra)
    }

    pub fn expected_edge_homophily(&self) -> f64 {
        let (n_in, n_out) = self.pair_counts();
        let a = self.p_in * n_in as f64;
        a / (a + self.p_out * n_out as f64)
    }
}

/// Sign of class `c`'s mean in feature `k`: Walsh pattern `(-1)^popcount(c & k)`.
pub fn class_sign(c: usize, k: usize) -> f64 {
    if (c & k).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Samples a contextual SBM: round-robin labels, independent edges, and
/// features `±μ/√F` by class sign pattern plus `N(0, σ²)` noise.
pub fn generate_csbm(p: &CsbmParams) -> Result<Dataset> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.nodes;
    let labels: Vec<usize> = (0..n).map(|i| i % p.classes).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if labels[u] == labels[v] { p.p_in } else { p.p_out };
            if rng.random_bool(prob) {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edges(&edges, n)?;
    let f = p.feature_dim;
    let amp = p.mu / (f as f64).sqrt();
    let mut features = Matrix::zeros(n, f);
    for (i, &c) in labels.iter().enumerate() {
        for (k, x) in features.row_mut(i).iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *x = class_sign(c, k) * amp + p.sigma * noise;
        }
    }
    let mut ds = Dataset::new(format!("csbm-{}", p.seed), graph, features, labels)?;
    ds.num_classes = p.classes;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    report: T,
}

pub fn report_to_json<T: Serialize>(report: &T) -> Result<String> {
    let env = Envelope {
        schema_version: REPORT_SCHEMA_VERSION,
        report,
    };
    serde_json::to_string_pretty(&env).map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn report_from_json<T: DeserializeOwned>(source: &str, text: &str) -> Result<T> {
    let env: Envelope<T> =
        serde_json::from_str(text).map_err(|e| Error::parse(source, e.line(), e))?;
    if env.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::parse(
            source,
            0,
            format!("unsupported schema_version {}", env.schema_version),
        ));
    }
    Ok(env.report)
}

pub fn save_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    fs::write(path, report_to_json(report)? + "\n").map_err(|e| Error::io(path.display(), e))
}

pub fn load_report<T: DeserializeOwned>(path: &Path) -> Result<T> {
    report_from_json(&path.display().to_string(), &read(path)?)
}
