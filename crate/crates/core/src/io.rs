//! File formats: CSV tables, binary datasets and affinities, and run manifests.
//!
//! Binary files are little-endian and start with an 8-byte magic and a `u32`
//! format version.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::parity::{build_task_spec, parity_label, SampleBatch, TaskSpec};
use crate::qdg::{AffinityKind, AffinityMatrix};
use crate::seed::SeedSet;

pub const DATASET_MAGIC: &[u8; 8] = b"QPARDATA";
pub const DATASET_VERSION: u32 = 1;
pub const AFFINITY_MAGIC: &[u8; 8] = b"QAFFINTY";
pub const AFFINITY_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Locale-independent float with 17 significant digits (round-trips `f64`).
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// CSV table with a header row, built in memory and written in one go.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| Error::format("<csv>", e.to_string()))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| Error::format("<csv>", e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::format("<csv>", e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for record in r.records() {
            rows.push(record.map_err(|e| csv_error(path, e))?.iter().map(String::from).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parse a column as floats.
    pub fn floats(&self, name: &str, path: &Path) -> Result<Vec<f64>> {
        let col = self.column(name).ok_or_else(|| Error::format(path, format!("missing column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row[col]
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("row {}: `{}` is not a number", i + 1, row[col])))
            })
            .collect()
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 8], version: u32) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::format(self.path, "bad magic"));
        }
        let found = self.u32()?;
        if found != version {
            return Err(Error::format(self.path, format!("unsupported version {found}, expected {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Dataset: header (`n_tasks`, `n`, `k` as u64, `alpha` f64, `seed`, `m`
/// u64), then `m` rows of the full input bit string packed LSB-first into
/// `ceil((n_tasks + n) / 8)` bytes, then `m` label bytes.
pub fn dataset_to_bytes(spec: &TaskSpec, batch: &SampleBatch) -> Vec<u8> {
    let row_bytes = spec.input_dim().div_ceil(8);
    let mut out = Vec::with_capacity(60 + batch.len() * (row_bytes + 1));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [spec.n_tasks as u64, spec.n as u64, spec.k as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&spec.alpha.to_le_bytes());
    out.extend_from_slice(&spec.seed.to_le_bytes());
    out.extend_from_slice(&(batch.len() as u64).to_le_bytes());
    for row in 0..batch.len() {
        out.extend_from_slice(&batch.packed_row(row));
    }
    out.extend_from_slice(batch.labels());
    out
}

pub fn write_dataset(path: &Path, spec: &TaskSpec, batch: &SampleBatch) -> Result<()> {
    write_bytes(path, &dataset_to_bytes(spec, batch))
}

/// Reads a dataset and rebuilds its task spec. Rows must carry exactly one
/// control bit and a label equal to the parity of their subtask's subset.
pub fn read_dataset(path: &Path) -> Result<(TaskSpec, SampleBatch)> {
    let bytes = read_file(path)?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    r.header(DATASET_MAGIC, DATASET_VERSION)?;
    let n_tasks = r.u64()? as usize;
    let n = r.u64()? as usize;
    let k = r.u64()? as usize;
    let alpha = r.f64()?;
    let seed = r.u64()?;
    let m = r.u64()? as usize;
    let spec = build_task_spec(n_tasks, n, k, alpha, seed).map_err(|e| Error::format(path, e.to_string()))?;
    let row_bytes = spec.input_dim().div_ceil(8);
    if m.checked_mul(row_bytes + 1).is_none_or(|need| need > bytes.len()) {
        return Err(Error::format(path, "truncated file"));
    }
    let rows = r.take(m * row_bytes)?;
    let labels = r.take(m)?;
    r.finish()?;
    let bit = |row: &[u8], j: usize| row[j / 8] >> (j % 8) & 1 == 1;
    let mut batch = SampleBatch::with_capacity(n_tasks, n, m);
    let mut task_bits = vec![0u64; spec.words_per_row()];
    for i in 0..m {
        let row = &rows[i * row_bytes..(i + 1) * row_bytes];
        let controls: Vec<usize> = (0..n_tasks).filter(|&j| bit(row, j)).collect();
        if controls.len() != 1 {
            return Err(Error::format(path, format!("row {i} has {} control bits set", controls.len())));
        }
        if (spec.input_dim()..row_bytes * 8).any(|j| bit(row, j)) {
            return Err(Error::format(path, format!("row {i} has padding bits set")));
        }
        task_bits.iter_mut().for_each(|w| *w = 0);
        for j in 0..n {
            if bit(row, n_tasks + j) {
                task_bits[j / 64] |= 1 << (j % 64);
            }
        }
        let subtask = controls[0];
        let expected = parity_label(&task_bits, n, &spec.subsets[subtask])?;
        if labels[i] != expected {
            return Err(Error::format(path, format!("row {i} label {} disagrees with its parity", labels[i])));
        }
        batch.push(subtask as u32, &task_bits, labels[i]);
    }
    Ok((spec, batch))
}

/// Human-readable dataset: one row per sample.
pub fn dataset_table(batch: &SampleBatch) -> Table {
    let mut t = Table::new(&["sample_id", "subtask", "task_bits", "label"]);
    for i in 0..batch.len() {
        let mut active = Vec::new();
        batch.active_inputs(i, &mut active);
        let mut bits = vec![b'0'; batch.n];
        for &j in &active[1..] {
            bits[j - batch.n_tasks] = b'1';
        }
        t.push(vec![
            i.to_string(),
            batch.subtask_ids()[i].to_string(),
            String::from_utf8(bits).expect("ascii"),
            batch.labels()[i].to_string(),
        ]);
    }
    t
}

fn kind_code(kind: AffinityKind) -> u32 {
    match kind {
        AffinityKind::Cosine => 0,
        AffinityKind::Angular => 1,
        AffinityKind::Custom => 2,
    }
}

/// Affinity: header (`kind` u32, `m` u64), then `m²` row-major f64.
pub fn write_affinity(path: &Path, aff: &AffinityMatrix) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(AFFINITY_MAGIC).map_err(io)?;
    w.write_all(&AFFINITY_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&kind_code(aff.kind).to_le_bytes()).map_err(io)?;
    w.write_all(&(aff.m as u64).to_le_bytes()).map_err(io)?;
    for x in &aff.values {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_affinity(path: &Path) -> Result<AffinityMatrix> {
    let bytes = read_file(path)?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    r.header(AFFINITY_MAGIC, AFFINITY_VERSION)?;
    let kind = match r.u32()? {
        0 => AffinityKind::Cosine,
        1 => AffinityKind::Angular,
        2 => AffinityKind::Custom,
        other => return Err(Error::format(path, format!("unknown affinity kind {other}"))),
    };
    let m = r.u64()? as usize;
    if m.checked_mul(m).and_then(|c| c.checked_mul(8)).is_none_or(|need| need != bytes.len() - r.pos) {
        return Err(Error::format(path, "payload size does not match m"));
    }
    let values = (0..m * m).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    AffinityMatrix::new(m, kind, values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one pipeline run. `run_id` hashes the command, resolved config,
/// seeds and input file digests, so identical inputs give identical ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: SeedSet,
    pub inputs: Vec<OutputFile>,
    pub run_id: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputFile>,
}

/// Collects outputs of one run and writes the manifest last.
pub struct RunContext {
    pub out_dir: PathBuf,
    manifest: ExperimentManifest,
}

impl RunContext {
    pub fn new(out_dir: &Path, command: &str, args: &[String], config: serde_json::Value, seeds: SeedSet, inputs: &[PathBuf]) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let inputs: Vec<OutputFile> = inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok(OutputFile { path: p.display().to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
            })
            .collect::<Result<_>>()?;
        let identity = serde_json::json!({
            "command": command,
            "config": config,
            "seeds": seeds,
            "inputs": inputs.iter().map(|i| &i.sha256).collect::<Vec<_>>(),
        });
        let run_id = sha256_hex(&serde_json::to_vec(&identity)?);
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: ExperimentManifest {
                tool_version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                args: args.to_vec(),
                config,
                seeds,
                inputs,
                run_id,
                started_at: now(),
                finished_at: String::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Register a file already written under `out_dir`.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.push(OutputFile { path: name.into(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<()> {
        table.write(&self.path(name))?;
        self.record(name)
    }

    /// JSON output with the run id embedded under `run_id`.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("run_id".into(), self.manifest.run_id.clone().into());
        }
        write_json(&self.path(name), &v)?;
        self.record(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        write_bytes(&self.path(name), text.as_bytes())?;
        self.record(name)
    }

    pub fn finish(mut self) -> Result<ExperimentManifest> {
        self.manifest.finished_at = now();
        write_json(&self.out_dir.join(MANIFEST_FILE), &self.manifest)?;
        Ok(self.manifest)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
