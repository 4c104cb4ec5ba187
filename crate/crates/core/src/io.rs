//! Dataset ingestion and CSV / key=value output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::continuum::GridField;
use crate::depth::DepthResult;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::graph::{DirectedGeometricGraph, VectorSet};
use crate::pagerank::RankResult;

/// Rows of comma separated floats, optionally followed by an integer label.
pub fn read_vectors_csv(path: impl AsRef<Path>, labels: bool) -> Result<(VectorSet, Option<Vec<i64>>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_vectors_csv(file, labels).map_err(|e| match e {
        Error::Parse { .. } => e.context(path.display().to_string()),
        other => other,
    })
}

pub fn parse_vectors_csv<R: Read>(input: R, labels: bool) -> Result<(VectorSet, Option<Vec<i64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut values = Vec::new();
    let mut label_col = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let cells = record.len();
        if *width.get_or_insert(cells) != cells {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {cells}", width.unwrap()),
            });
        }
        let features = if labels { cells - 1 } else { cells };
        if features == 0 {
            return Err(Error::Parse {
                line,
                message: "row has no feature columns".into(),
            });
        }
        for (col, cell) in record.iter().take(features).enumerate() {
            let x: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {}: cannot parse {cell:?} as a number", col + 1),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {}: non-finite value", col + 1),
                });
            }
            values.push(x);
        }
        if labels {
            let cell = &record[features];
            label_col.push(parse_label(cell).ok_or_else(|| Error::Parse {
                line,
                message: format!("label {cell:?} is not an integer"),
            })?);
        }
    }
    let Some(width) = width else {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    };
    let dim = if labels { width - 1 } else { width };
    let vectors = VectorSet::new(dim, values)?;
    Ok((vectors, labels.then_some(label_col)))
}

fn parse_label(cell: &str) -> Option<i64> {
    if let Ok(l) = cell.parse::<i64>() {
        return Some(l);
    }
    let x: f64 = cell.parse().ok()?;
    (x.fract() == 0.0 && x.abs() < 9e15).then_some(x as i64)
}

/// Element payload of an IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::I8(v) => v.len(),
            IdxData::I16(v) => v.len(),
            IdxData::I32(v) => v.len(),
            IdxData::F32(v) => v.len(),
            IdxData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            IdxData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I8(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I16(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::F64(v) => v.clone(),
        }
    }

    fn is_integer(&self) -> bool {
        !matches!(self, IdxData::F32(_) | IdxData::F64(_))
    }
}

/// A row-major tensor read from the IDX binary format.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

impl IdxTensor {
    /// One vector per index of the first dimension, the rest flattened.
    pub fn to_vectors(&self) -> Result<VectorSet> {
        let dim: usize = self.dims.iter().skip(1).product();
        VectorSet::new(dim.max(1), self.data.to_f64())
    }

    /// The payload of a one-dimensional integer tensor.
    pub fn to_labels(&self) -> Result<Vec<i64>> {
        if self.dims.len() != 1 || !self.data.is_integer() {
            return Err(Error::invalid(format!(
                "labels need a 1-d integer tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok(self.data.to_f64().into_iter().map(|x| x as i64).collect())
    }
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|e| e.context(path.display().to_string()))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "IDX header needs 4 bytes, got {}",
            bytes.len()
        )));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format(format!(
            "bad IDX magic {:02x} {:02x}",
            bytes[0], bytes[1]
        )));
    }
    let code = bytes[2];
    let width = match code {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        _ => return Err(Error::Format(format!("unknown IDX type code 0x{code:02x}"))),
    };
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Format(format!(
            "IDX header: expected {header} bytes, got {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let expected = count
        .checked_mul(width)
        .and_then(|b| b.checked_add(header))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "IDX payload: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let body = &bytes[header..];
    let data = match code {
        0x08 => IdxData::U8(body.to_vec()),
        0x09 => IdxData::I8(body.iter().map(|&b| b as i8).collect()),
        0x0B => IdxData::I16(body.chunks_exact(2).map(|c| i16::from_be_bytes([c[0], c[1]])).collect()),
        0x0C => IdxData::I32(
            body.chunks_exact(4)
                .map(|c| i32::from_be_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        0x0D => IdxData::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        _ => IdxData::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(IdxTensor { dims, data })
}

/// Serialize a tensor to IDX bytes.
pub fn encode_idx(tensor: &IdxTensor) -> Vec<u8> {
    let code = match tensor.data {
        IdxData::U8(_) => 0x08,
        IdxData::I8(_) => 0x09,
        IdxData::I16(_) => 0x0B,
        IdxData::I32(_) => 0x0C,
        IdxData::F32(_) => 0x0D,
        IdxData::F64(_) => 0x0E,
    };
    let mut out = vec![0, 0, code, tensor.dims.len() as u8];
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    match &tensor.data {
        IdxData::U8(v) => out.extend_from_slice(v),
        IdxData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
        IdxData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        IdxData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        IdxData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        IdxData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
    }
    out
}

/// CSV writer with a fixed header.
pub struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = CsvOut {
            inner: csv::Writer::from_writer(BufWriter::new(file)),
            path,
        };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let path = &self.path;
        self.inner.write_record(fields).map_err(|e| csv_error(path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_edges_csv(path: impl AsRef<Path>, graph: &DirectedGeometricGraph) -> Result<()> {
    let mut out = CsvOut::create(path, &["src", "dst", "weight"])?;
    for (i, j, w) in graph.edges() {
        out.row([i.to_string(), j.to_string(), fmt_f64(w)])?;
    }
    out.finish()
}

pub fn write_points_csv(path: impl AsRef<Path>, points: &PointCloud) -> Result<()> {
    let header: Vec<String> = (1..=points.dim()).map(|k| format!("x{k}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header)?;
    for p in points.iter() {
        out.row(p.iter().map(|&x| fmt_f64(x)))?;
    }
    out.finish()
}

pub fn write_rank_csv(path: impl AsRef<Path>, rank: &RankResult) -> Result<()> {
    let mut out = CsvOut::create(path, &["node", "r", "u"])?;
    for (i, (r, u)) in rank.r.iter().zip(&rank.u).enumerate() {
        out.row([i.to_string(), fmt_f64(*r), fmt_f64(*u)])?;
    }
    out.finish()
}

/// One row per grid node: the multi-index followed by the value.
pub fn write_grid_csv(path: impl AsRef<Path>, field: &GridField) -> Result<()> {
    let mut header: Vec<String> = (1..=field.dim()).map(|k| format!("i{k}")).collect();
    header.push("value".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header)?;
    for (j, &v) in field.values().iter().enumerate() {
        let mut row: Vec<String> = field.multi_index(j).iter().map(usize::to_string).collect();
        row.push(fmt_f64(v));
        out.row(row)?;
    }
    out.finish()
}

/// Rows `class,rank,node_index,score`; only the per-class top members
/// unless `full` is set, in which case the whole ordering is written.
pub fn write_depth_csv(path: impl AsRef<Path>, depth: &DepthResult, full: bool) -> Result<()> {
    let mut out = CsvOut::create(path, &["class", "rank", "node_index", "score"])?;
    for c in &depth.classes {
        let nodes: &[usize] = if full { &c.ordering } else { &c.top };
        for (rank, &i) in nodes.iter().enumerate() {
            out.row([c.label.to_string(), (rank + 1).to_string(), i.to_string(), fmt_f64(c.scores[i])])?;
        }
    }
    out.finish()
}

/// The raw vectors of every class's top members, prefixed by class and rank.
pub fn write_depth_vectors_csv(path: impl AsRef<Path>, depth: &DepthResult, vectors: &VectorSet) -> Result<()> {
    let mut header = vec!["class".to_string(), "rank".into(), "node_index".into()];
    header.extend((1..=vectors.dim()).map(|k| format!("x{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header)?;
    for c in &depth.classes {
        for (rank, &i) in c.top.iter().enumerate() {
            let mut row = vec![c.label.to_string(), (rank + 1).to_string(), i.to_string()];
            row.extend(vectors.row(i).iter().map(|&x| fmt_f64(x)));
            out.row(row)?;
        }
    }
    out.finish()
}

/// Path of the metadata file written next to `output`.
pub fn sidecar_path(output: impl AsRef<Path>) -> PathBuf {
    let mut s = output.as_ref().as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Ordered `key=value` metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sidecar {
    entries: Vec<(String, String)>,
}

impl Sidecar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Writes the sidecar for `output` and returns its path.
    pub fn write_for(&self, output: impl AsRef<Path>) -> Result<PathBuf> {
        let path = sidecar_path(output);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for (k, v) in &self.entries {
            writeln!(w, "{k}={v}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let map = read_key_values(path)?;
        Ok(Sidecar {
            entries: map.into_iter().collect(),
        })
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key=value, found {line:?}"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key {k:?}"),
            });
        }
    }
    Ok(map)
}

pub fn read_key_values(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text).map_err(|e| e.context(path.display().to_string()))
}
