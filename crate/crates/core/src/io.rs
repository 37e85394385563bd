//! CSV and JSON import/export.
//!
//! Numbers are written in the shortest decimal form that round-trips to the
//! same binary64 value, so files are byte-stable for a fixed seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path as FsPath, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::matrix_rows;
use crate::manifold::{ManifoldSpec, Point};
use crate::process::Path;
use crate::series::SeriesTrace;

/// Shortest round-trip representation of `x`.
pub fn fmt_f64(x: f64) -> String {
    // `{:?}` is the shortest round-trip form and switches to exponent
    // notation for very large/small magnitudes.
    format!("{x:?}")
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Input(format!("csv: {other:?}")),
        }
    } else {
        Error::Input(format!("csv: {e}"))
    }
}

fn parse_f64(field: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Input(format!("line {line}: `{field}` is not a number")))
}

/// How an ensemble of paths is laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PathLayout {
    /// One file, leading `path_id` column.
    #[default]
    Long,
    /// One file per path: `<stem>_<id>.<ext>`.
    PerPath,
}

fn coord_header(k: usize) -> impl Iterator<Item = String> {
    (1..=k).map(|i| format!("c{i}"))
}

/// Writes one path with header `t,c1,...,cK`; SO(n) points are flattened column-major.
pub fn write_path_csv<W: Write>(path: &Path, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let k = path.manifold().ambient_dim();
    let header: Vec<String> = std::iter::once("t".to_string()).chain(coord_header(k)).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (t, p) in path.times().iter().zip(path.points()) {
        let row = std::iter::once(fmt_f64(*t)).chain(p.matrix().iter().map(|&x| fmt_f64(x)));
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an ensemble in long format: `path_id,t,c1,...,cK`.
pub fn write_paths_long_csv<W: Write>(paths: &[Path], out: W) -> Result<()> {
    let Some(first) = paths.first() else {
        return Err(Error::Input("no paths to write".into()));
    };
    let k = first.manifold().ambient_dim();
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = ["path_id".to_string(), "t".to_string()]
        .into_iter()
        .chain(coord_header(k))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for (id, path) in paths.iter().enumerate() {
        if path.manifold().ambient_dim() != k {
            return Err(Error::Input("paths have different coordinate counts".into()));
        }
        for (t, p) in path.times().iter().zip(path.points()) {
            let row = [id.to_string(), fmt_f64(*t)]
                .into_iter()
                .chain(p.matrix().iter().map(|&x| fmt_f64(x)));
            w.write_record(row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn sibling_with_suffix(target: &FsPath, suffix: &str, ext: &str) -> PathBuf {
    let stem = target
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    target.with_file_name(format!("{stem}{suffix}.{ext}"))
}

/// Writes `paths` to `target` using `layout`; returns the files written.
pub fn write_paths_csv_file(paths: &[Path], layout: PathLayout, target: &FsPath) -> Result<Vec<PathBuf>> {
    match layout {
        PathLayout::Long => {
            write_paths_long_csv(paths, BufWriter::new(File::create(target)?))?;
            Ok(vec![target.to_path_buf()])
        }
        PathLayout::PerPath => {
            let width = paths.len().saturating_sub(1).to_string().len();
            paths
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let file = sibling_with_suffix(target, &format!("_{i:0width$}"), "csv");
                    write_path_csv(p, BufWriter::new(File::create(&file)?))?;
                    Ok(file)
                })
                .collect()
        }
    }
}

#[derive(Serialize)]
struct PathJson {
    path_id: usize,
    manifold: ManifoldSpec,
    t: Vec<f64>,
    /// Flattened (column-major) ambient coordinates per time.
    x: Vec<Vec<f64>>,
}

/// JSON array of `{path_id, manifold, t, x}` records.
pub fn write_paths_json<W: Write>(paths: &[Path], out: W) -> Result<()> {
    let recs: Vec<PathJson> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| PathJson {
            path_id: i,
            manifold: p.manifold(),
            t: p.times().to_vec(),
            x: p.points().iter().map(|q| q.matrix().iter().copied().collect()).collect(),
        })
        .collect();
    serde_json::to_writer(out, &recs)?;
    Ok(())
}

/// Reads paths in either layout. Points are validated against `manifold`.
pub fn read_paths_csv<R: Read>(input: R, manifold: ManifoldSpec) -> Result<Vec<Path>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    let k = manifold.ambient_dim();
    let (long, offset) = match header.first().map(String::as_str) {
        Some("path_id") => (true, 2),
        Some("t") => (false, 1),
        _ => return Err(Error::Input("path CSV must start with `t` or `path_id,t`".into())),
    };
    if long && header.get(1).map(String::as_str) != Some("t") {
        return Err(Error::Input("long-format path CSV must start with `path_id,t`".into()));
    }
    if header.len() != offset + k {
        return Err(Error::Input(format!(
            "{manifold} needs {k} coordinate columns, file has {}",
            header.len() - offset
        )));
    }
    let (rows, cols) = manifold.ambient_shape();
    let mut groups: Vec<(u64, Vec<f64>, Vec<Point>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i as u64 + 2;
        if rec.len() != header.len() {
            return Err(Error::Input(format!("line {line}: expected {} fields", header.len())));
        }
        let id = if long {
            rec[0]
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Input(format!("line {line}: bad path_id")))?
        } else {
            0
        };
        let t = parse_f64(&rec[offset - 1], line)?;
        let coords = (offset..rec.len())
            .map(|j| parse_f64(&rec[j], line))
            .collect::<Result<Vec<_>>>()?;
        let point = manifold
            .point(DMatrix::from_column_slice(rows, cols, &coords))
            .map_err(|e| Error::Input(format!("line {line}: {e}")))?;
        match groups.last_mut() {
            Some((gid, ts, ps)) if *gid == id => {
                ts.push(t);
                ps.push(point);
            }
            _ => {
                if groups.iter().any(|(gid, _, _)| *gid == id) {
                    return Err(Error::Input(format!("line {line}: rows of path {id} are not contiguous")));
                }
                groups.push((id, vec![t], vec![point]));
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::Input("path CSV has no rows".into()));
    }
    groups
        .into_iter()
        .map(|(_, ts, ps)| Path::new(manifold, ts, ps))
        .collect()
}

pub fn read_paths_csv_file(file: &FsPath, manifold: ManifoldSpec) -> Result<Vec<Path>> {
    read_paths_csv(BufReader::new(File::open(file)?), manifold)
}

/// Column names `m11,m21,...,mnn` (column-major). Indices are separated by
/// `_` once `n ≥ 10` so names stay unambiguous.
pub fn sample_header(n: usize) -> Vec<String> {
    let sep = if n >= 10 { "_" } else { "" };
    (1..=n)
        .flat_map(|j| (1..=n).map(move |i| (i, j)))
        .map(|(i, j)| format!("m{i}{sep}{j}"))
        .collect()
}

/// Writes `n×n` samples one per row, flattened column-major.
pub fn write_samples_csv<W: Write>(samples: &[Point], out: W) -> Result<()> {
    let Some(first) = samples.first() else {
        return Err(Error::Input("no samples to write".into()));
    };
    let n = first.matrix().nrows();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sample_header(n)).map_err(csv_err)?;
    for s in samples {
        if s.matrix().shape() != (n, n) {
            return Err(Error::Input("samples have inconsistent shapes".into()));
        }
        w.write_record(s.matrix().iter().map(|&x| fmt_f64(x))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample file; returns `n` and the samples, each checked to lie in SO(n).
pub fn read_samples_csv<R: Read>(input: R) -> Result<(usize, Vec<Point>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    let n = (header.len() as f64).sqrt().round() as usize;
    if n < 2 || n * n != header.len() || header != sample_header(n) {
        return Err(Error::Input(format!(
            "sample CSV header must be m11,m21,...,mnn; got {} columns",
            header.len()
        )));
    }
    let group = ManifoldSpec::SpecialOrthogonal(n);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i as u64 + 2;
        if rec.len() != n * n {
            return Err(Error::Input(format!("line {line}: expected {} fields", n * n)));
        }
        let vals = rec.iter().map(|f| parse_f64(f, line)).collect::<Result<Vec<_>>>()?;
        let p = group
            .point(DMatrix::from_column_slice(n, n, &vals))
            .map_err(|e| Error::Input(format!("line {line}: {e}")))?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(Error::Input("sample CSV has no rows".into()));
    }
    Ok((n, out))
}

pub fn read_samples_csv_file(file: &FsPath) -> Result<(usize, Vec<Point>)> {
    read_samples_csv(BufReader::new(File::open(file)?))
}

/// Sidecar metadata for a sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub n: usize,
    /// Row-major rows of the true location.
    pub g: Vec<Vec<f64>>,
    /// Row-major rows of the covariance in the orthonormal basis.
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub delta: f64,
    pub seed: u64,
    pub m: usize,
}

impl SampleMetadata {
    pub fn new(g: &DMatrix<f64>, c: &DMatrix<f64>, delta: f64, seed: u64, m: usize) -> Self {
        SampleMetadata { n: g.nrows(), g: matrix_rows(g), c: matrix_rows(c), delta, seed, m }
    }
}

/// `<stem>.json` next to a sample file.
pub fn metadata_path(sample_file: &FsPath) -> PathBuf {
    sample_file.with_extension("json")
}

pub fn write_json_file<T: Serialize>(value: &T, file: &FsPath) -> Result<()> {
    let mut w = BufWriter::new(File::create(file)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json_file<T: for<'de> Deserialize<'de>>(file: &FsPath) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(file)?))?)
}

/// One scalar outcome of a seeded experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub name: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub value: f64,
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "N", "seed", "value"]).map_err(csv_err)?;
    for r in records {
        w.write_record([r.name.clone(), r.n.to_string(), r.seed.to_string(), fmt_f64(r.value)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Partial-sum traces as `label,k,partial_sum`.
pub fn write_traces_csv<W: Write>(traces: &[SeriesTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "k", "partial_sum"]).map_err(csv_err)?;
    for tr in traces {
        for (k, s) in &tr.samples {
            w.write_record([tr.label.clone(), k.to_string(), fmt_f64(*s)]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
