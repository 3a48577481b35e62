//! Flat binary trajectory dumps.
//!
//! Layout: one ASCII header line
//! `roughflow-trajectories v1 d=<d> rows=<n> columns=path,time,a_index,x0,...\n`
//! followed by `n` rows of `3 + d` little-endian `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use super::FlowEnsemble;
use crate::error::{Error, Result};

const MAGIC: &str = "roughflow-trajectories";
const VERSION: &str = "v1";
const MAX_HEADER: usize = 4096;

/// Decoded dump; `rows` is flat with `3 + d` values per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDump {
    pub d: usize,
    pub rows: Vec<f64>,
}

impl TrajectoryDump {
    pub fn width(&self) -> usize {
        3 + self.d
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len() / self.width()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.width()..(i + 1) * self.width()]
    }

    pub fn from_ensemble(ens: &FlowEnsemble) -> Self {
        let mut rows = Vec::with_capacity(ens.n_paths() * ens.n_times() * ens.n_points() * (3 + ens.d));
        for (slot, &path) in ens.paths.iter().enumerate() {
            for (ti, &t) in ens.times.iter().enumerate() {
                for a in 0..ens.n_points() {
                    rows.extend([path as f64, t, a as f64]);
                    rows.extend_from_slice(ens.position(slot, ti, a));
                }
            }
        }
        TrajectoryDump { d: ens.d, rows }
    }

    fn header(&self) -> String {
        let cols: Vec<String> = (0..self.d).map(|i| format!("x{i}")).collect();
        format!("{MAGIC} {VERSION} d={} rows={} columns=path,time,a_index,{}\n", self.d, self.n_rows(), cols.join(","))
    }
}

pub fn encode_dump(dump: &TrajectoryDump) -> Vec<u8> {
    let mut out = dump.header().into_bytes();
    out.reserve(dump.rows.len() * 8);
    for v in &dump.rows {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn field<'a>(tok: Option<&'a str>, key: &str) -> Result<&'a str> {
    tok.and_then(|t| t.strip_prefix(key)).and_then(|t| t.strip_prefix('=')).ok_or_else(|| Error::Dump(format!("missing `{key}=` field")))
}

/// Parses a dump, rejecting any mismatch between header and payload.
pub fn decode_dump(bytes: &[u8]) -> Result<TrajectoryDump> {
    let limit = bytes.len().min(MAX_HEADER);
    let nl = bytes[..limit].iter().position(|&b| b == b'\n').ok_or_else(|| Error::Dump("no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Dump("header is not UTF-8".into()))?;
    let mut toks = header.split(' ');
    if toks.next() != Some(MAGIC) {
        return Err(Error::Dump("bad magic".into()));
    }
    if toks.next() != Some(VERSION) {
        return Err(Error::Dump("unsupported version".into()));
    }
    let d: usize = field(toks.next(), "d")?.parse().map_err(|_| Error::Dump("bad dimension".into()))?;
    let rows: usize = field(toks.next(), "rows")?.parse().map_err(|_| Error::Dump("bad row count".into()))?;
    let cols = field(toks.next(), "columns")?;
    if toks.next().is_some() {
        return Err(Error::Dump("trailing header tokens".into()));
    }
    if d == 0 || d > 64 {
        return Err(Error::Dump(format!("dimension {d} out of range")));
    }
    let expected: Vec<String> = ["path", "time", "a_index"].iter().map(|s| s.to_string()).chain((0..d).map(|i| format!("x{i}"))).collect();
    if cols.split(',').ne(expected.iter().map(String::as_str)) {
        return Err(Error::Dump("column list does not match the dimension".into()));
    }
    let payload = &bytes[nl + 1..];
    let need = rows.checked_mul(3 + d).and_then(|n| n.checked_mul(8));
    if need != Some(payload.len()) {
        return Err(Error::Dump(format!("payload has {} bytes, header announces {rows} rows of {} values", payload.len(), 3 + d)));
    }
    let rows: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Ok(TrajectoryDump { d, rows })
}

pub fn write_dump(path: &Path, dump: &TrajectoryDump) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode_dump(dump))?;
    f.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<TrajectoryDump> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dump(&bytes)
}
