//! Trace-set and IQ-capture containers.
//!
//! A trace set is two files sharing a base path: `<base>.json` holds the
//! metadata, `<base>.f32` holds the samples row-major as little-endian f32.
//! IQ captures use `<base>.json` plus `<base>.iqf32` with interleaved I,Q
//! pairs, also little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::IqTrace;
use crate::error::{Error, Result};

/// What a trace set was collected for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "profiling")]
    Profiling,
    #[serde(rename = "attack")]
    Attack,
    #[serde(rename = "ttest_setA")]
    TtestSetA,
    #[serde(rename = "ttest_setB")]
    TtestSetB,
}

/// Metadata of a segmented, time-diversity-averaged trace set.
#[derive(Debug, Clone)]
pub struct TraceSetMeta {
    pub center_frequency: f64,
    pub sample_rate: f64,
    pub n_traces: usize,
    pub trace_len: usize,
    pub time_diversity_n: usize,
    pub plaintexts: Vec<[u8; 16]>,
    pub key: Option<[u8; 16]>,
    pub role: Role,
}

/// A trace set: metadata plus one row per trace.
///
/// Rows are f32, matching the on-disk representation bit for bit, so a
/// write/read round trip returns exactly the same values.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub meta: TraceSetMeta,
    pub rows: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct MetaWire {
    center_frequency: f64,
    sample_rate: f64,
    n_traces: usize,
    trace_len: usize,
    time_diversity_n: usize,
    plaintexts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    role: Role,
}

pub fn parse_hex16(s: &str) -> Result<[u8; 16]> {
    let bytes = hex::decode(s).map_err(|e| Error::CorruptContainer {
        context: format!("bad hex block {s:?}: {e}"),
    })?;
    bytes.try_into().map_err(|_| Error::CorruptContainer {
        context: format!("hex block {s:?} is not 16 bytes"),
    })
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

impl TraceSet {
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.n_traces != self.rows.len() {
            return Err(Error::ShapeError {
                context: format!("meta says {} traces, set holds {}", m.n_traces, self.rows.len()),
            });
        }
        if m.plaintexts.len() != m.n_traces {
            return Err(Error::ShapeError {
                context: format!(
                    "{} plaintexts for {} traces",
                    m.plaintexts.len(),
                    m.n_traces
                ),
            });
        }
        if self.rows.iter().any(|r| r.len() != m.trace_len) {
            return Err(Error::ShapeError {
                context: format!("row length differs from trace_len {}", m.trace_len),
            });
        }
        Ok(())
    }
}

/// Writes `<base>.json` and `<base>.f32`.
pub fn write_container(set: &TraceSet, base: &Path) -> Result<()> {
    set.validate()?;
    let wire = MetaWire {
        center_frequency: set.meta.center_frequency,
        sample_rate: set.meta.sample_rate,
        n_traces: set.meta.n_traces,
        trace_len: set.meta.trace_len,
        time_diversity_n: set.meta.time_diversity_n,
        plaintexts: set.meta.plaintexts.iter().map(hex::encode).collect(),
        key: set.meta.key.map(hex::encode),
        role: set.meta.role,
    };
    let json = File::create(with_suffix(base, ".json"))?;
    serde_json::to_writer_pretty(BufWriter::new(json), &wire).map_err(|e| {
        Error::CorruptContainer {
            context: format!("metadata serialization: {e}"),
        }
    })?;

    let mut data = BufWriter::new(File::create(with_suffix(base, ".f32"))?);
    let mut buf = Vec::with_capacity(set.meta.trace_len * 4);
    for row in &set.rows {
        buf.clear();
        for &v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        data.write_all(&buf)?;
    }
    data.flush()?;
    Ok(())
}

/// Reads a trace set written by [`write_container`].
pub fn read_container(base: &Path) -> Result<TraceSet> {
    let json = File::open(with_suffix(base, ".json"))?;
    let wire: MetaWire =
        serde_json::from_reader(BufReader::new(json)).map_err(|e| Error::CorruptContainer {
            context: format!("metadata parse: {e}"),
        })?;

    let plaintexts = wire
        .plaintexts
        .iter()
        .map(|s| parse_hex16(s))
        .collect::<Result<Vec<_>>>()?;
    let key = wire.key.as_deref().map(parse_hex16).transpose()?;
    if plaintexts.len() != wire.n_traces {
        return Err(Error::CorruptContainer {
            context: format!(
                "{} plaintexts for {} traces",
                plaintexts.len(),
                wire.n_traces
            ),
        });
    }

    let mut data = File::open(with_suffix(base, ".f32"))?;
    let expected = wire.n_traces * wire.trace_len * 4;
    let actual = data.metadata()?.len();
    if actual != expected as u64 {
        return Err(Error::CorruptContainer {
            context: format!("data file holds {actual} bytes, metadata implies {expected}"),
        });
    }
    let mut bytes = Vec::with_capacity(expected);
    data.read_to_end(&mut bytes)?;

    let rows = bytes
        .chunks_exact(wire.trace_len * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect();

    Ok(TraceSet {
        meta: TraceSetMeta {
            center_frequency: wire.center_frequency,
            sample_rate: wire.sample_rate,
            n_traces: wire.n_traces,
            trace_len: wire.trace_len,
            time_diversity_n: wire.time_diversity_n,
            plaintexts,
            key,
            role: wire.role,
        },
        rows,
    })
}

#[derive(Serialize, Deserialize)]
struct IqWire {
    center_frequency: f64,
    sample_rate: f64,
    n_samples: usize,
}

/// Writes `<base>.json` and `<base>.iqf32` (interleaved I,Q little-endian f32).
pub fn write_iq_capture(trace: &IqTrace, center_frequency: f64, base: &Path) -> Result<()> {
    trace.validate()?;
    let wire = IqWire {
        center_frequency,
        sample_rate: trace.sample_rate,
        n_samples: trace.samples.len(),
    };
    let json = File::create(with_suffix(base, ".json"))?;
    serde_json::to_writer_pretty(BufWriter::new(json), &wire).map_err(|e| {
        Error::CorruptContainer {
            context: format!("metadata serialization: {e}"),
        }
    })?;
    let mut data = BufWriter::new(File::create(with_suffix(base, ".iqf32"))?);
    let mut buf = Vec::with_capacity(trace.samples.len().min(1 << 16) * 8);
    for chunk in trace.samples.chunks(1 << 15) {
        buf.clear();
        for z in chunk {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        data.write_all(&buf)?;
    }
    data.flush()?;
    Ok(())
}

/// Reads an IQ capture; returns the trace and its center frequency.
pub fn read_iq_capture(base: &Path) -> Result<(IqTrace, f64)> {
    let json = File::open(with_suffix(base, ".json"))?;
    let wire: IqWire =
        serde_json::from_reader(BufReader::new(json)).map_err(|e| Error::CorruptContainer {
            context: format!("metadata parse: {e}"),
        })?;
    let mut data = File::open(with_suffix(base, ".iqf32"))?;
    let expected = wire.n_samples * 8;
    let actual = data.metadata()?.len();
    if actual != expected as u64 {
        return Err(Error::CorruptContainer {
            context: format!("IQ file holds {actual} bytes, metadata implies {expected}"),
        });
    }
    let mut bytes = Vec::with_capacity(expected);
    data.read_to_end(&mut bytes)?;
    let samples = bytes
        .chunks_exact(8)
        .map(|b| {
            Complex64::new(
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                f32::from_le_bytes([b[4], b[5], b[6], b[7]]) as f64,
            )
        })
        .collect();
    let trace = IqTrace {
        samples,
        sample_rate: wire.sample_rate,
    };
    trace.validate()?;
    Ok((trace, wire.center_frequency))
}

/// Averages consecutive groups of `n` rows that repeated the same plaintext.
///
/// Returns one averaged row and one plaintext per group. Row count must be a
/// multiple of `n`, and every group must repeat a single plaintext.
pub fn average_time_diversity(
    rows: &[Vec<f64>],
    plaintexts: &[[u8; 16]],
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<[u8; 16]>)> {
    if n == 0 {
        return Err(Error::ShapeError {
            context: "time diversity n must be at least 1".into(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if rows.len() % n != 0 {
        return Err(Error::ShapeError {
            context: format!("{} rows not divisible by diversity {n}", rows.len()),
        });
    }
    if plaintexts.len() != rows.len() {
        return Err(Error::ShapeError {
            context: format!("{} plaintexts for {} rows", plaintexts.len(), rows.len()),
        });
    }
    let len = rows[0].len();
    if rows.iter().any(|r| r.len() != len) {
        return Err(Error::ShapeError {
            context: "rows have differing lengths".into(),
        });
    }

    let mut avg_rows = Vec::with_capacity(rows.len() / n);
    let mut avg_pts = Vec::with_capacity(rows.len() / n);
    for (g, group) in rows.chunks_exact(n).enumerate() {
        let pt = plaintexts[g * n];
        if plaintexts[g * n..(g + 1) * n].iter().any(|p| *p != pt) {
            return Err(Error::GroupingError { group: g });
        }
        let mut acc = vec![0.0f64; len];
        for row in group {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let inv = 1.0 / n as f64;
        for a in &mut acc {
            *a *= inv;
        }
        avg_rows.push(acc);
        avg_pts.push(pt);
    }
    Ok((avg_rows, avg_pts))
}
