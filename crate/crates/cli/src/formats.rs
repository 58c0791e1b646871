//! On-disk artifact formats and the run manifest.
//!
//! - feed files: the core wire codec (see `oflow_core::feed`), read/written whole;
//! - preprocessed messages: compact binary (`OFPRE001`, little-endian
//!   fixed-width records with sentinel values for absent fields) and CSV;
//! - token corpora: `OFTOK001` header recording ticker count, layout version
//!   and vocab hash, then flat little-endian u16 ids;
//! - checkpoints: the core checkpoint codec;
//! - traces: JSON lines, one attempt per line, plus a summary JSON;
//! - manifests: one JSON document per output directory.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use oflow_core::feed::{MsgKind, Side};
use oflow_core::preprocess::PreMessage;
use oflow_core::rng::fnv1a64;
use oflow_core::sim::{AttemptRecord, TraceSink};
use oflow_core::vocab::LAYOUT_VERSION;

use crate::user_error;

pub fn read_input(path: &Path) -> anyhow::Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) => user_error(format!("cannot read {}: {e}", path.display())),
    }
}

pub fn write_output(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

// ---- preprocessed messages ---------------------------------------------------

pub const PRE_MAGIC: [u8; 8] = *b"OFPRE001";

const ABSENT_U64: u64 = u64::MAX;
const ABSENT_U32: u32 = u32::MAX;
const ABSENT_I64: i64 = i64::MIN;
const ABSENT_I32: i32 = i32::MIN;

pub fn write_pre_binary(pres: &[PreMessage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pres.len() * 78);
    out.extend_from_slice(&PRE_MAGIC);
    out.extend_from_slice(&(pres.len() as u64).to_le_bytes());
    for p in pres {
        out.extend_from_slice(&p.symbol_id.to_le_bytes());
        out.extend_from_slice(&p.order_id.unwrap_or(ABSENT_U64).to_le_bytes());
        out.push(p.kind.index() as u8);
        out.push(p.side.index() as u8);
        out.extend_from_slice(&p.price_abs.unwrap_or(ABSENT_I64).to_le_bytes());
        out.extend_from_slice(&p.price_rel.unwrap_or(ABSENT_I32).to_le_bytes());
        out.extend_from_slice(&p.size.unwrap_or(ABSENT_U32).to_le_bytes());
        out.extend_from_slice(&p.size_aux.unwrap_or(ABSENT_U32).to_le_bytes());
        out.extend_from_slice(&p.dt_s.to_le_bytes());
        out.extend_from_slice(&p.dt_ns.to_le_bytes());
        out.extend_from_slice(&p.time_s.to_le_bytes());
        out.extend_from_slice(&p.time_ns.to_le_bytes());
        out.extend_from_slice(&p.old_id.unwrap_or(ABSENT_U64).to_le_bytes());
        out.extend_from_slice(&p.old_price_abs.unwrap_or(ABSENT_I64).to_le_bytes());
        out.extend_from_slice(&p.ref_price_rel.unwrap_or(ABSENT_I32).to_le_bytes());
        out.extend_from_slice(&p.ref_size.unwrap_or(ABSENT_U32).to_le_bytes());
        out.extend_from_slice(&p.ref_time_s.unwrap_or(ABSENT_U32).to_le_bytes());
        out.extend_from_slice(&p.ref_time_ns.unwrap_or(ABSENT_U32).to_le_bytes());
    }
    out
}

pub fn read_pre_binary(bytes: &[u8]) -> anyhow::Result<Vec<PreMessage>> {
    if bytes.len() < 16 || bytes[..8] != PRE_MAGIC {
        return user_error("not a preprocessed-message file (bad magic)");
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut pos = 16usize;
    let mut take = |n: usize| -> anyhow::Result<&[u8]> {
        if pos + n > bytes.len() {
            return user_error("truncated preprocessed-message file");
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let symbol_id = u16::from_le_bytes(take(2)?.try_into().unwrap());
        let order_id = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let kind = take(1)?[0];
        let side = take(1)?[0];
        let price_abs = i64::from_le_bytes(take(8)?.try_into().unwrap());
        let price_rel = i32::from_le_bytes(take(4)?.try_into().unwrap());
        let size = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let size_aux = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let dt_s = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let dt_ns = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let time_s = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let time_ns = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let old_id = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let old_price_abs = i64::from_le_bytes(take(8)?.try_into().unwrap());
        let ref_price_rel = i32::from_le_bytes(take(4)?.try_into().unwrap());
        let ref_size = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let ref_time_s = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let ref_time_ns = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let Some(kind) = MsgKind::from_index(kind as usize) else {
            return user_error(format!("bad message kind {kind}"));
        };
        out.push(PreMessage {
            symbol_id,
            order_id: (order_id != ABSENT_U64).then_some(order_id),
            kind,
            side: if side == 0 { Side::Bid } else { Side::Ask },
            price_abs: (price_abs != ABSENT_I64).then_some(price_abs),
            price_rel: (price_rel != ABSENT_I32).then_some(price_rel),
            size: (size != ABSENT_U32).then_some(size),
            size_aux: (size_aux != ABSENT_U32).then_some(size_aux),
            dt_s,
            dt_ns,
            time_s,
            time_ns,
            old_id: (old_id != ABSENT_U64).then_some(old_id),
            old_price_abs: (old_price_abs != ABSENT_I64).then_some(old_price_abs),
            ref_price_rel: (ref_price_rel != ABSENT_I32).then_some(ref_price_rel),
            ref_size: (ref_size != ABSENT_U32).then_some(ref_size),
            ref_time_s: (ref_time_s != ABSENT_U32).then_some(ref_time_s),
            ref_time_ns: (ref_time_ns != ABSENT_U32).then_some(ref_time_ns),
        });
    }
    if pos != bytes.len() {
        return user_error("trailing bytes in preprocessed-message file");
    }
    Ok(out)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const PRE_CSV_HEADER: &str = "symbol_id,order_id,kind,side,price_abs,price_rel,size,size_aux,dt_s,dt_ns,time_s,time_ns,old_id,old_price_abs,ref_price_rel,ref_size,ref_time_s,ref_time_ns";

pub fn write_pre_csv(pres: &[PreMessage]) -> String {
    let mut out = String::with_capacity(pres.len() * 64);
    out.push_str(PRE_CSV_HEADER);
    out.push('\n');
    for p in pres {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            p.symbol_id,
            opt(p.order_id),
            p.kind.label(),
            if p.side == Side::Bid { "bid" } else { "ask" },
            opt(p.price_abs),
            opt(p.price_rel),
            opt(p.size),
            opt(p.size_aux),
            p.dt_s,
            p.dt_ns,
            p.time_s,
            p.time_ns,
            opt(p.old_id),
            opt(p.old_price_abs),
            opt(p.ref_price_rel),
            opt(p.ref_size),
            opt(p.ref_time_s),
            opt(p.ref_time_ns),
        ));
    }
    out
}

// ---- token corpora -------------------------------------------------------------

pub const TOKENS_MAGIC: [u8; 8] = *b"OFTOK001";

pub struct TokenFile {
    pub ticker_count: u16,
    pub layout_version: u16,
    pub vocab_hash: u64,
    pub tokens: Vec<u16>,
}

pub fn write_tokens(ticker_count: u16, vocab_hash: u64, tokens: &[u16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + tokens.len() * 2);
    out.extend_from_slice(&TOKENS_MAGIC);
    out.extend_from_slice(&ticker_count.to_le_bytes());
    out.extend_from_slice(&LAYOUT_VERSION.to_le_bytes());
    out.extend_from_slice(&vocab_hash.to_le_bytes());
    out.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    for &t in tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

pub fn read_tokens(bytes: &[u8]) -> anyhow::Result<TokenFile> {
    if bytes.len() < 28 || bytes[..8] != TOKENS_MAGIC {
        return user_error("not a token corpus file (bad magic)");
    }
    let ticker_count = u16::from_le_bytes(bytes[8..10].try_into().unwrap());
    let layout_version = u16::from_le_bytes(bytes[10..12].try_into().unwrap());
    if layout_version != LAYOUT_VERSION {
        return user_error(format!(
            "token layout version {layout_version} unsupported (tool speaks {LAYOUT_VERSION})"
        ));
    }
    let vocab_hash = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    if bytes.len() != 28 + count * 2 {
        return user_error("token corpus length does not match its header");
    }
    let tokens = bytes[28..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(TokenFile {
        ticker_count,
        layout_version,
        vocab_hash,
        tokens,
    })
}

// ---- traces ----------------------------------------------------------------------

/// Appends one JSON line per attempt; flushed per record so a crash loses at
/// most the line being written.
pub struct JsonlTraceSink {
    out: BufWriter<File>,
}

impl JsonlTraceSink {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(path: &Path) -> anyhow::Result<Self> {
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }
}

impl TraceSink for JsonlTraceSink {
    fn record(&mut self, rec: &AttemptRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(rec).expect("attempt record serializes");
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

pub fn read_trace(path: &Path) -> anyhow::Result<Vec<AttemptRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => return user_error(format!("cannot read {}: {e}", path.display())),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AttemptRecord = serde_json::from_str(&line)
            .map_err(|e| anyhow::anyhow!("{}: line {}: {e}", path.display(), i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

// ---- manifest ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileStamp {
    pub path: String,
    pub fnv64: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileStamp>,
    pub outputs: Vec<FileStamp>,
    pub vocab_hash: Option<String>,
    pub checkpoint_hash: Option<String>,
    pub created_unix_s: u64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            vocab_hash: None,
            checkpoint_hash: None,
            created_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn stamp_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(stamp(path, bytes));
    }

    pub fn stamp_output(&mut self, path: &Path, bytes: &[u8]) {
        self.outputs.push(stamp(path, bytes));
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_output(&path, &json)?;
        Ok(path)
    }
}

fn stamp(path: &Path, bytes: &[u8]) -> FileStamp {
    FileStamp {
        path: path.display().to_string(),
        fnv64: format!("{:016x}", fnv1a64(bytes)),
        bytes: bytes.len() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pre_binary_roundtrip() {
        let pres = vec![
            PreMessage {
                symbol_id: 3,
                order_id: Some(42),
                kind: MsgKind::Cancel,
                side: Side::Ask,
                price_abs: Some(17_005),
                price_rel: Some(-12),
                size: Some(100),
                size_aux: Some(0),
                dt_s: 1,
                dt_ns: 999,
                time_s: 36_000,
                time_ns: 17,
                old_id: Some(42),
                old_price_abs: Some(17_005),
                ref_price_rel: Some(-12),
                ref_size: Some(100),
                ref_time_s: Some(35_000),
                ref_time_ns: Some(5),
            },
            PreMessage {
                symbol_id: 0,
                order_id: None,
                kind: MsgKind::Add,
                side: Side::Bid,
                price_abs: None,
                price_rel: Some(3),
                size: Some(7),
                size_aux: None,
                dt_s: 0,
                dt_ns: 0,
                time_s: 1,
                time_ns: 2,
                old_id: None,
                old_price_abs: None,
                ref_price_rel: None,
                ref_size: None,
                ref_time_s: None,
                ref_time_ns: None,
            },
        ];
        let bytes = write_pre_binary(&pres);
        assert_eq!(read_pre_binary(&bytes).unwrap(), pres);
    }

    #[test]
    fn token_file_roundtrip() {
        let toks: Vec<u16> = (0..48).collect();
        let bytes = write_tokens(98, 0xdead_beef, &toks);
        let f = read_tokens(&bytes).unwrap();
        assert_eq!(f.ticker_count, 98);
        assert_eq!(f.vocab_hash, 0xdead_beef);
        assert_eq!(f.tokens, toks);
    }
}
