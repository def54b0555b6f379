//! Binary checkpoint records and the on-disk store.
//!
//! Every object is one `.ld` file: a fixed 59-byte little-endian header
//! (magic `LDIF`, version u16, kind u8, Ψ u64, iteration u64, covered range
//! u64 x2, ratio f64, payload length u64, payload CRC32 u32) followed by the
//! payload. Payloads:
//!
//! - full: `[params | moment1 | moment2]`, 3Ψ f64 values, exactly 3Ψ·8
//!   bytes, with the optimizer step carried in the header's iteration field;
//! - diff: k u32 indices then k f64 values of one sparse gradient;
//! - batched: a count followed by several sparse gradients verbatim.
//!
//! Writes go to a temp file and rename into place, so a crash mid-write never
//! leaves a half-visible object in the chain.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::compress::SparseGradient;
use crate::error::{Error, Result};
use crate::model::ModelState;

pub const MAGIC: &[u8; 4] = b"LDIF";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 59;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Full,
    Diff,
    Batched,
}

impl RecordKind {
    fn code(self) -> u8 {
        match self {
            RecordKind::Full => 0,
            RecordKind::Diff => 1,
            RecordKind::Batched => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RecordKind::Full),
            1 => Some(RecordKind::Diff),
            2 => Some(RecordKind::Batched),
            _ => None,
        }
    }

    pub fn file_tag(self) -> &'static str {
        match self {
            RecordKind::Full => "full",
            RecordKind::Diff => "diff",
            RecordKind::Batched => "batch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordPayload {
    Full(ModelState),
    Diff(SparseGradient),
    Batched(Vec<SparseGradient>),
}

/// One checkpoint object: a full snapshot, a single differential, or a batch
/// of differentials covering a contiguous iteration range.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    /// For batched records this is the last covered iteration.
    pub iteration: u64,
    /// Inclusive range of training iterations the record covers.
    pub covered: (u64, u64),
    pub payload: RecordPayload,
}

impl CheckpointRecord {
    pub fn full(state: ModelState) -> Self {
        let it = state.step;
        Self { iteration: it, covered: (it, it), payload: RecordPayload::Full(state) }
    }

    pub fn diff(grad: SparseGradient) -> Self {
        let it = grad.iteration;
        Self { iteration: it, covered: (it, it), payload: RecordPayload::Diff(grad) }
    }

    pub fn batched(grads: Vec<SparseGradient>) -> Result<Self> {
        if grads.is_empty() {
            return Err(Error::Domain("batched record needs at least one gradient".into()));
        }
        let first = grads.first().unwrap().iteration;
        let last = grads.last().unwrap().iteration;
        Ok(Self { iteration: last, covered: (first, last), payload: RecordPayload::Batched(grads) })
    }

    /// A batch whose payload is one accumulated gradient standing in for the
    /// covered range.
    pub fn batched_accumulated(grad: SparseGradient, covered: (u64, u64)) -> Self {
        Self { iteration: covered.1, covered, payload: RecordPayload::Batched(vec![grad]) }
    }

    pub fn kind(&self) -> RecordKind {
        match self.payload {
            RecordPayload::Full(_) => RecordKind::Full,
            RecordPayload::Diff(_) => RecordKind::Diff,
            RecordPayload::Batched(_) => RecordKind::Batched,
        }
    }

    fn dense_len(&self) -> usize {
        match &self.payload {
            RecordPayload::Full(state) => state.psi(),
            RecordPayload::Diff(sg) => sg.dense_len,
            RecordPayload::Batched(grads) => grads[0].dense_len,
        }
    }

    fn ratio(&self) -> f64 {
        match &self.payload {
            RecordPayload::Full(_) => 1.0,
            RecordPayload::Diff(sg) => sg.ratio,
            RecordPayload::Batched(grads) => grads[0].ratio,
        }
    }

    /// Gradients carried by a diff or batched record, in iteration order.
    pub fn gradients(&self) -> Option<&[SparseGradient]> {
        match &self.payload {
            RecordPayload::Full(_) => None,
            RecordPayload::Diff(sg) => Some(std::slice::from_ref(sg)),
            RecordPayload::Batched(grads) => Some(grads),
        }
    }

    fn encode_payload(&self) -> Vec<u8> {
        match &self.payload {
            RecordPayload::Full(state) => {
                let mut buf = Vec::with_capacity(3 * state.psi() * 8);
                for part in [&state.params, &state.moment1, &state.moment2] {
                    for v in part {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                buf
            }
            RecordPayload::Diff(sg) => encode_sparse_bare(sg),
            RecordPayload::Batched(grads) => {
                let mut buf = Vec::new();
                buf.extend_from_slice(&(grads.len() as u32).to_le_bytes());
                for sg in grads {
                    buf.extend_from_slice(&sg.iteration.to_le_bytes());
                    buf.extend_from_slice(&(sg.k() as u32).to_le_bytes());
                    buf.extend_from_slice(&sg.ratio.to_le_bytes());
                    buf.extend_from_slice(&encode_sparse_bare(sg));
                }
                buf
            }
        }
    }

    /// Serialize to the full on-disk byte image (header + payload).
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.encode_payload();
        let mut buf = Vec::with_capacity(HEADER_LEN + payload.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.push(self.kind().code());
        buf.extend_from_slice(&(self.dense_len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.iteration.to_le_bytes());
        buf.extend_from_slice(&self.covered.0.to_le_bytes());
        buf.extend_from_slice(&self.covered.1.to_le_bytes());
        buf.extend_from_slice(&self.ratio().to_le_bytes());
        buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        buf.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        buf.extend_from_slice(&payload);
        buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let header = Header::parse(bytes, origin)?;
        let payload = bytes
            .get(HEADER_LEN..HEADER_LEN + header.payload_len)
            .ok_or_else(|| corrupt(origin, "truncated payload"))?;
        if bytes.len() != HEADER_LEN + header.payload_len {
            return Err(corrupt(origin, "trailing bytes after payload"));
        }
        if crc32fast::hash(payload) != header.crc32 {
            return Err(corrupt(origin, "checksum mismatch"));
        }
        let payload = match header.kind {
            RecordKind::Full => {
                if header.payload_len != 3 * header.psi * 8 {
                    return Err(corrupt(origin, "full payload length does not match 3*psi"));
                }
                let mut parts = [vec![], vec![], vec![]];
                for (p, part) in parts.iter_mut().enumerate() {
                    let base = p * header.psi * 8;
                    *part = decode_f64s(&payload[base..base + header.psi * 8]);
                }
                let [params, m1, m2] = parts;
                let state = ModelState::new(params, m1, m2, header.iteration)
                    .map_err(|e| corrupt(origin, &e.to_string()))?;
                RecordPayload::Full(state)
            }
            RecordKind::Diff => {
                if header.payload_len % 12 != 0 {
                    return Err(corrupt(origin, "diff payload not a multiple of 12 bytes"));
                }
                let k = header.payload_len / 12;
                let sg = decode_sparse_bare(payload, k, header.psi, header.iteration, origin)?;
                RecordPayload::Diff(SparseGradient { ratio: header.ratio, ..sg })
            }
            RecordKind::Batched => {
                let mut grads = Vec::new();
                let mut off = 0usize;
                let count = read_u32(payload, &mut off, origin)? as usize;
                for _ in 0..count {
                    let iteration = read_u64(payload, &mut off, origin)?;
                    let k = read_u32(payload, &mut off, origin)? as usize;
                    let ratio = read_f64(payload, &mut off, origin)?;
                    let body = payload
                        .get(off..off + k * 12)
                        .ok_or_else(|| corrupt(origin, "truncated batched gradient"))?;
                    off += k * 12;
                    let sg = decode_sparse_bare(body, k, header.psi, iteration, origin)?;
                    grads.push(SparseGradient { ratio, ..sg });
                }
                if off != payload.len() {
                    return Err(corrupt(origin, "trailing bytes in batched payload"));
                }
                RecordPayload::Batched(grads)
            }
        };
        Ok(Self { iteration: header.iteration, covered: header.covered, payload })
    }
}

struct Header {
    kind: RecordKind,
    psi: usize,
    iteration: u64,
    covered: (u64, u64),
    ratio: f64,
    payload_len: usize,
    crc32: u32,
}

impl Header {
    fn parse(bytes: &[u8], origin: &str) -> Result<Self> {
        if bytes.len() < 4 || &bytes[0..4] != MAGIC {
            return Err(Error::Format { path: origin.into(), reason: "unknown magic".into() });
        }
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(origin, "truncated header"));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                path: origin.into(),
                reason: format!("unsupported version {version}"),
            });
        }
        let kind = RecordKind::from_code(bytes[6]).ok_or_else(|| Error::Format {
            path: origin.into(),
            reason: format!("unknown record kind {}", bytes[6]),
        })?;
        Ok(Self {
            kind,
            psi: u64::from_le_bytes(bytes[7..15].try_into().unwrap()) as usize,
            iteration: u64::from_le_bytes(bytes[15..23].try_into().unwrap()),
            covered: (
                u64::from_le_bytes(bytes[23..31].try_into().unwrap()),
                u64::from_le_bytes(bytes[31..39].try_into().unwrap()),
            ),
            ratio: f64::from_le_bytes(bytes[39..47].try_into().unwrap()),
            payload_len: u64::from_le_bytes(bytes[47..55].try_into().unwrap()) as usize,
            crc32: u32::from_le_bytes(bytes[55..59].try_into().unwrap()),
        })
    }
}

fn corrupt(origin: &str, reason: &str) -> Error {
    Error::Corrupt { path: origin.into(), reason: reason.into() }
}

fn encode_sparse_bare(sg: &SparseGradient) -> Vec<u8> {
    let mut buf = Vec::with_capacity(sg.k() * 12);
    for &i in &sg.indices {
        buf.extend_from_slice(&i.to_le_bytes());
    }
    for &v in &sg.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn decode_sparse_bare(
    bytes: &[u8],
    k: usize,
    dense_len: usize,
    iteration: u64,
    origin: &str,
) -> Result<SparseGradient> {
    if bytes.len() < k * 12 {
        return Err(corrupt(origin, "sparse payload shorter than k entries"));
    }
    let indices: Vec<u32> = bytes[..4 * k]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = decode_f64s(&bytes[4 * k..12 * k]);
    SparseGradient::from_parts(dense_len, indices, values, iteration)
        .map_err(|e| corrupt(origin, &e.to_string()))
}

fn decode_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

fn read_u32(bytes: &[u8], off: &mut usize, origin: &str) -> Result<u32> {
    let v = bytes
        .get(*off..*off + 4)
        .ok_or_else(|| corrupt(origin, "unexpected end of payload"))?;
    *off += 4;
    Ok(u32::from_le_bytes(v.try_into().unwrap()))
}

fn read_u64(bytes: &[u8], off: &mut usize, origin: &str) -> Result<u64> {
    let v = bytes
        .get(*off..*off + 8)
        .ok_or_else(|| corrupt(origin, "unexpected end of payload"))?;
    *off += 8;
    Ok(u64::from_le_bytes(v.try_into().unwrap()))
}

fn read_f64(bytes: &[u8], off: &mut usize, origin: &str) -> Result<f64> {
    Ok(f64::from_bits(read_u64(bytes, off, origin)?))
}

/// Nominal byte accounting with configurable widths, for reasoning about
/// checkpoint sizes independent of the fixed on-disk encoding (e.g. 4-byte
/// values for single-precision sizes).
#[derive(Debug, Clone, Copy)]
pub struct SizeModel {
    pub index_width: usize,
    pub value_width: usize,
}

impl Default for SizeModel {
    fn default() -> Self {
        Self { index_width: 4, value_width: 8 }
    }
}

impl SizeModel {
    /// Full checkpoint payload: parameters plus both moments.
    pub fn full_payload(&self, psi: usize) -> usize {
        3 * psi * self.value_width
    }

    /// Sparse payload with k kept entries.
    pub fn sparse_payload(&self, k: usize) -> usize {
        k * (self.index_width + self.value_width)
    }
}

/// Directory-backed checkpoint store.
#[derive(Debug, Clone)]
pub struct StorageBackend {
    root: PathBuf,
    fsync: bool,
    /// Optional write throttle in bytes/second, for experiments that model a
    /// slow device.
    write_bandwidth: Option<f64>,
}

impl StorageBackend {
    pub fn new(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self { root: root.as_ref().to_path_buf(), fsync: false, write_bandwidth: None })
    }

    pub fn with_fsync(mut self, on: bool) -> Self {
        self.fsync = on;
        self
    }

    pub fn with_write_bandwidth(mut self, bytes_per_sec: Option<f64>) -> Self {
        self.write_bandwidth = bytes_per_sec;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_name(kind: RecordKind, iteration: u64) -> String {
        format!("ckpt_{}_{}.ld", kind.file_tag(), iteration)
    }

    pub fn object_path(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }
}

/// Durably store a record; returns the object id and exact on-disk bytes.
pub fn write_checkpoint(rec: &CheckpointRecord, backend: &StorageBackend) -> Result<(String, u64)> {
    let id = StorageBackend::object_name(rec.kind(), rec.iteration);
    let bytes = rec.to_bytes();
    let tmp = backend.root.join(format!(".{id}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        if backend.fsync {
            f.sync_all()?;
        }
    }
    fs::rename(&tmp, backend.object_path(&id))?;
    if let Some(bw) = backend.write_bandwidth {
        std::thread::sleep(std::time::Duration::from_secs_f64(bytes.len() as f64 / bw));
    }
    Ok((id, bytes.len() as u64))
}

/// Load and validate one record.
pub fn read_checkpoint(id: &str, backend: &StorageBackend) -> Result<CheckpointRecord> {
    let bytes = fs::read(backend.object_path(id))?;
    CheckpointRecord::from_bytes(&bytes, id)
}

/// One differential link of a recovery chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLink {
    pub id: String,
    pub kind: RecordKind,
    pub covered: (u64, u64),
}

/// The records recovery needs to reach `up_to`: the newest full checkpoint at
/// or before it, plus the gap-free run of differentials after that full.
#[derive(Debug, Clone)]
pub struct Chain {
    pub full_id: String,
    pub full_iteration: u64,
    pub diffs: Vec<ChainLink>,
}

impl Chain {
    /// Last iteration the chain can reconstruct (capped by the caller's
    /// recovery target, not here).
    pub fn last_covered(&self) -> u64 {
        self.diffs.last().map_or(self.full_iteration, |l| l.covered.1)
    }
}

fn scan_headers(backend: &StorageBackend) -> Result<(Vec<(u64, String)>, Vec<ChainLink>)> {
    let mut fulls: Vec<(u64, String)> = Vec::new();
    let mut diffs: Vec<ChainLink> = Vec::new();
    for entry in fs::read_dir(&backend.root)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".ld") || !name.starts_with("ckpt_") {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        let header = Header::parse(&bytes, &name)?;
        match header.kind {
            RecordKind::Full => fulls.push((header.iteration, name)),
            RecordKind::Diff | RecordKind::Batched => diffs.push(ChainLink {
                id: name,
                kind: header.kind,
                covered: header.covered,
            }),
        }
    }
    fulls.sort();
    Ok((fulls, diffs))
}

/// Differential records tiling iterations `after_iteration+1 ..= up_to`,
/// ordered by covered range. Batched records need not align with full
/// checkpoints, so a record may straddle either end of the range (recovery
/// skips the gradients outside it); a gap is an error.
pub fn ordered_diffs(
    backend: &StorageBackend,
    after_iteration: u64,
    up_to: u64,
) -> Result<Vec<ChainLink>> {
    let (_, mut diffs) = scan_headers(backend)?;
    diffs.retain(|l| l.covered.1 > after_iteration && l.covered.0 <= up_to);
    diffs.sort_by_key(|l| l.covered);
    let mut expected = after_iteration + 1;
    for link in &diffs {
        if link.covered.0 > expected {
            return Err(Error::ChainGap { expected, found: link.covered.0 });
        }
        expected = link.covered.1 + 1;
    }
    Ok(diffs)
}

/// Model width recorded in the store, preferring full checkpoints (whose Ψ
/// is the model width even when differentials cover a wider flat state).
pub fn model_psi_hint(backend: &StorageBackend) -> Result<Option<usize>> {
    let mut diff_psi = None;
    for entry in fs::read_dir(&backend.root)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".ld") || !name.starts_with("ckpt_") {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        let header = Header::parse(&bytes, &name)?;
        match header.kind {
            RecordKind::Full => return Ok(Some(header.psi)),
            _ => diff_psi = Some(header.psi),
        }
    }
    Ok(diff_psi)
}

/// Newest full checkpoint in the store.
pub fn latest_full(backend: &StorageBackend) -> Result<(String, u64)> {
    let (fulls, _) = scan_headers(backend)?;
    fulls.into_iter().next_back().map(|(it, id)| (id, it)).ok_or(Error::MissingFull(u64::MAX))
}

/// Scan the store and assemble the chain for recovery up to `up_to_iteration`.
pub fn list_chain(backend: &StorageBackend, up_to_iteration: u64) -> Result<Chain> {
    let (fulls, _) = scan_headers(backend)?;
    let (full_iteration, full_id) = fulls
        .into_iter()
        .rfind(|(it, _)| *it <= up_to_iteration)
        .ok_or(Error::MissingFull(up_to_iteration))?;
    let diffs = ordered_diffs(backend, full_iteration, up_to_iteration)?;
    Ok(Chain { full_id, full_iteration, diffs })
}
