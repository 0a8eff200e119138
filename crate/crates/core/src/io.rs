//! File formats: edge lists, feature matrices, labels, the binary pair
//! cache, and the CSV result files. Every writer goes through
//! [`atomic_write`], so readers never see a half-written file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PumcError, Result};
use crate::eval::FprFnrCurve;
use crate::linalg::DenseMatrix;
use crate::model::ObservedOnes;

const CACHE_MAGIC: &[u8; 5] = b"PUMC1";

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over
/// `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| PumcError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        PumcError::io(path, e)
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PumcError::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> PumcError {
    PumcError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeListOptions {
    /// Add `(j, i)` for every `(i, j)`.
    pub undirected: bool,
    /// Node count; defaults to the header declaration or `max index + 1`.
    pub nodes: Option<usize>,
}

impl Default for EdgeListOptions {
    fn default() -> Self {
        Self {
            undirected: true,
            nodes: None,
        }
    }
}

/// Reads `src<TAB>dst[<TAB>weight]` lines.
///
/// `#` lines are comments. `%` lines are headers with `key=value` tokens:
/// `base=1` shifts indices down by one, `nodes=N` declares a square size,
/// `rows=R cols=C` a rectangular one. Weights are ignored with a warning.
pub fn read_edge_list(path: &Path, opts: EdgeListOptions) -> Result<ObservedOnes> {
    let text = read_text(path)?;
    let mut base = 0usize;
    let mut dims: (Option<usize>, Option<usize>) = (opts.nodes, opts.nodes);
    let mut pairs = Vec::new();
    let mut warned = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(header) = line.strip_prefix('%') {
            for token in header.split_whitespace() {
                let Some((key, value)) = token.split_once('=') else { continue };
                let value: usize = value
                    .parse()
                    .map_err(|_| parse_err(path, line_no, format!("bad header value in `{token}`")))?;
                match key {
                    "base" if value <= 1 => base = value,
                    "base" => return Err(parse_err(path, line_no, "base must be 0 or 1")),
                    "nodes" if opts.nodes.is_none() => dims = (Some(value), Some(value)),
                    "rows" if opts.nodes.is_none() => dims.0 = Some(value),
                    "cols" if opts.nodes.is_none() => dims.1 = Some(value),
                    _ => {}
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(parse_err(path, line_no, format!("expected `src dst [weight]`, got `{line}`")));
        }
        let index = |s: &str| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| parse_err(path, line_no, format!("`{s}` is not a node index")))?;
            v.checked_sub(base)
                .ok_or_else(|| parse_err(path, line_no, format!("index {v} below base {base}")))
        };
        let (i, j) = (index(fields[0])?, index(fields[1])?);
        if fields.len() == 3 && !warned {
            log::warn!("{}: edge weights are ignored", path.display());
            warned = true;
        }
        pairs.push((i, j));
    }
    let max_i = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
    let max_j = pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0);
    let (rows, cols) = match dims {
        (Some(r), Some(c)) => (r, c),
        (r, c) if opts.undirected => {
            let n = max_i.max(max_j);
            (r.unwrap_or(n), c.unwrap_or(n))
        }
        (r, c) => (r.unwrap_or(max_i), c.unwrap_or(max_j)),
    };
    let undirected = opts.undirected;
    if undirected && rows != cols {
        return Err(PumcError::Data(format!("undirected graph needs a square size, got {rows}x{cols}")));
    }
    let obs = ObservedOnes::new(rows, cols, pairs).map_err(|e| e.context(path.display().to_string()))?;
    if undirected {
        obs.symmetrize()
    } else {
        Ok(obs)
    }
}

/// Writes every stored pair, 0-based, with a size header.
pub fn write_edge_list(path: &Path, obs: &ObservedOnes) -> Result<()> {
    let mut out = format!("% rows={} cols={}\n", obs.rows(), obs.cols());
    for &(i, j) in obs.entries() {
        out.push_str(&format!("{i}\t{j}\n"));
    }
    atomic_write(path, out.as_bytes())
}

/// Compact binary cache: `PUMC1`, then little-endian u64 rows, cols and
/// pair count, then the sorted pairs as u32 (row, col).
pub fn write_binary_cache(path: &Path, obs: &ObservedOnes) -> Result<()> {
    if obs.rows() > u32::MAX as usize + 1 || obs.cols() > u32::MAX as usize + 1 {
        return Err(PumcError::SizeLimit("indices do not fit in u32".into()));
    }
    let mut bytes = Vec::with_capacity(5 + 24 + 8 * obs.len());
    bytes.extend_from_slice(CACHE_MAGIC);
    for v in [obs.rows(), obs.cols(), obs.len()] {
        bytes.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &(i, j) in obs.entries() {
        bytes.extend_from_slice(&(i as u32).to_le_bytes());
        bytes.extend_from_slice(&(j as u32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_binary_cache(path: &Path) -> Result<ObservedOnes> {
    let bytes = fs::read(path).map_err(|e| PumcError::io(path, e))?;
    let bad = |msg: &str| PumcError::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < 29 || &bytes[..5] != CACHE_MAGIC {
        return Err(bad("not a PUMC1 cache"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes")) as usize;
    let (rows, cols, count) = (u64_at(5), u64_at(13), u64_at(21));
    if count.checked_mul(8).and_then(|b| b.checked_add(29)) != Some(bytes.len()) {
        return Err(bad("pair count does not match file length"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let pairs = (0..count).map(|e| (u32_at(29 + 8 * e), u32_at(33 + 8 * e))).collect();
    ObservedOnes::new(rows, cols, pairs)
}

/// Whitespace-separated numeric rows; an optional first line `% rows cols`
/// declares the shape. `normalize` scales every row to unit L2 norm.
pub fn read_feature_matrix(path: &Path, normalize: bool) -> Result<DenseMatrix> {
    let text = read_text(path)?;
    let mut declared: Option<(usize, usize)> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(header) = line.strip_prefix('%') {
            let dims: Vec<usize> = header
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| parse_err(path, line_no, format!("bad shape header `{line}`"))))
                .collect::<Result<_>>()?;
            if dims.len() != 2 || !rows.is_empty() {
                return Err(parse_err(path, line_no, "shape header must be `% rows cols` on the first line"));
            }
            declared = Some((dims[0], dims[1]));
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(path, line_no, format!("`{t}` is not a number"))))
            .collect::<Result<_>>()?;
        let arity = declared.map(|d| d.1).or(rows.first().map(Vec::len)).unwrap_or(row.len());
        if row.len() != arity {
            return Err(parse_err(
                path,
                line_no,
                format!("row {} has {} values, expected {arity}", rows.len() + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    if let Some((r, _)) = declared {
        if r != rows.len() {
            return Err(PumcError::Data(format!("{}: header declares {r} rows, found {}", path.display(), rows.len())));
        }
    }
    let mut m = DenseMatrix::from_rows(&rows).map_err(|e| e.context(path.display().to_string()))?;
    if normalize {
        m.normalize_rows();
    }
    Ok(m)
}

/// Writes a feature matrix with a shape header; values use the shortest
/// representation that round-trips.
pub fn write_feature_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut out = format!("% {} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// One integer class label per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(idx, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err(path, idx + 1, format!("`{}` is not a class label", l.trim())))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let out: String = labels.iter().map(|l| format!("{l}\n")).collect();
    atomic_write(path, out.as_bytes())
}

/// One row of `metrics.csv`. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: String,
    pub solver: String,
    pub n: usize,
    pub k: usize,
    pub rho: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub metric: String,
    pub value: f64,
    pub sweeps: usize,
    /// Seconds; left empty unless timing output was requested, so that
    /// replays compare bitwise.
    pub wall_clock: Option<f64>,
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let ser = |e: csv::Error| PumcError::Data(format!("CSV encoding failed: {e}"));
    w.write_record(header).map_err(ser)?;
    for r in rows {
        w.serialize(r).map_err(ser)?;
    }
    w.into_inner().map_err(|e| PumcError::Data(format!("CSV encoding failed: {e}")))
}

pub const METRICS_HEADER: [&str; 11] =
    ["task", "solver", "n", "k", "rho", "alpha", "lambda", "metric", "value", "sweeps", "wall_clock"];

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    atomic_write(path, &csv_bytes(rows, &METRICS_HEADER)?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| PumcError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(idx, row)| row.map_err(|e| parse_err(path, idx + 2, e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveRow<'a> {
    method: &'a str,
    k: usize,
    fpr: f64,
    fnr: f64,
}

/// Writes named FPR/FNR curves as `method,k,fpr,fnr`.
pub fn write_curves(path: &Path, curves: &[(String, FprFnrCurve)]) -> Result<()> {
    let rows: Vec<CurveRow<'_>> = curves
        .iter()
        .flat_map(|(name, c)| {
            c.points.iter().map(move |p| CurveRow {
                method: name,
                k: p.k,
                fpr: p.fpr,
                fnr: p.fnr,
            })
        })
        .collect();
    atomic_write(path, &csv_bytes(&rows, &["method", "k", "fpr", "fnr"])?)
}

/// `dir/name`, as a convenience for output directories.
pub fn output_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn undirected_closure() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.tsv", "0\t1\n1\t2\n");
        let g = read_edge_list(&p, EdgeListOptions::default()).unwrap();
        assert_eq!(g.entries(), &[(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn duplicates_merge() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.tsv", "# comment\n0\t1\n1\t0\n0\t1\t3.5\n");
        let g = read_edge_list(&p, EdgeListOptions::default()).unwrap();
        assert_eq!(g.entries(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn one_based_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.tsv", "% base=1\n1\t2\n3\t4\n");
        let g = read_edge_list(&p, EdgeListOptions::default()).unwrap();
        assert_eq!(g.rows(), 4);
        assert_eq!(g.entries(), &[(0, 1), (1, 0), (2, 3), (3, 2)]);
        let zero = write(dir.path(), "z.tsv", "% base=1\n0\t2\n");
        assert!(matches!(read_edge_list(&zero, EdgeListOptions::default()), Err(PumcError::Parse { line: 2, .. })));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.tsv", "0\t1\n\n2 x\n");
        match read_edge_list(&p, EdgeListOptions::default()) {
            Err(PumcError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let declared = write(dir.path(), "d.tsv", "% nodes=3\n0\t5\n");
        assert!(read_edge_list(&declared, EdgeListOptions::default()).is_err());
    }

    #[test]
    fn feature_matrix_io() {
        let dir = tempfile::tempdir().unwrap();
        let id = DenseMatrix::identity(4);
        let p = dir.path().join("f.txt");
        write_feature_matrix(&p, &id).unwrap();
        assert_eq!(read_feature_matrix(&p, false).unwrap(), id);
        let ragged = write(dir.path(), "r.txt", "1 2 3\n4 5 6\n7 8\n");
        match read_feature_matrix(&ragged, false) {
            Err(PumcError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("row 3"));
            }
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "n.txt", "% 2 3\n3 4 0\n1 -2 2\n");
        let m = read_feature_matrix(&p, true).unwrap();
        for i in 0..2 {
            let norm: f64 = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-12);
        }
        assert!(read_feature_matrix(&write(dir.path(), "x.txt", "1 a\n"), false).is_err());
    }

    #[test]
    fn metrics_csv_golden() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRow {
                task: "synth_nondet".into(),
                solver: "shift_bounded".into(),
                n: 256,
                k: 10,
                rho: 0.9,
                alpha: 0.95,
                lambda: 1.0,
                metric: "mse".into(),
                value: 0.125,
                sweeps: 12,
                wall_clock: None,
            },
            MetricsRow {
                task: "link, \"quoted\"".into(),
                solver: "bias_cd".into(),
                n: 3,
                k: 2,
                rho: 0.5,
                alpha: 0.75,
                lambda: 0.1,
                metric: "fnr".into(),
                value: 0.0,
                sweeps: 1,
                wall_clock: Some(1.5),
            },
        ];
        write_metrics(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "task,solver,n,k,rho,alpha,lambda,metric,value,sweeps,wall_clock\n\
             synth_nondet,shift_bounded,256,10,0.9,0.95,1.0,mse,0.125,12,\n\
             \"link, \"\"quoted\"\"\",bias_cd,3,2,0.5,0.75,0.1,fnr,0.0,1,1.5\n"
        );
        assert_eq!(read_metrics(&p).unwrap(), rows);
    }

    #[test]
    fn cache_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.bin", "PUMC0 nope");
        assert!(matches!(read_binary_cache(&p), Err(PumcError::Data(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trips_are_exact(
            rows in 1usize..40,
            cols in 1usize..40,
            raw in proptest::collection::vec((0usize..1000, 0usize..1000), 0..200),
        ) {
            let pairs = raw.into_iter().map(|(i, j)| (i % rows, j % cols)).collect();
            let obs = ObservedOnes::new(rows, cols, pairs).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let bin = dir.path().join("c.bin");
            write_binary_cache(&bin, &obs).unwrap();
            prop_assert_eq!(read_binary_cache(&bin).unwrap(), obs.clone());
            let txt = dir.path().join("e.tsv");
            write_edge_list(&txt, &obs).unwrap();
            let back = read_edge_list(&txt, EdgeListOptions { undirected: false, nodes: None }).unwrap();
            prop_assert_eq!(back, obs);
        }
    }
}
