//! Newline-delimited record container shared by every on-disk artifact.
//!
//! Layout: one JSON header line (`kind`, `version`, free-form `meta`),
//! then one JSON line per record, then a trailing checksum line holding the
//! SHA-256 of every preceding byte. Append-friendly, diffable, and strict on
//! read: unknown versions and checksum failures are hard errors.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("version mismatch: found {found}, expected {expected} (kind {kind})")]
    VersionMismatch {
        kind: String,
        found: u32,
        expected: u32,
    },
    #[error("kind mismatch: found {found:?}, expected {expected:?}")]
    KindMismatch { found: String, expected: String },
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Trailer {
    checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Serialize `records` under the given `kind`/`version` header.
pub fn write_container<T: Serialize, M: Serialize>(
    path: &Path,
    kind: &str,
    version: u32,
    meta: &M,
    records: &[T],
) -> Result<(), ContainerError> {
    let mut body = Vec::new();
    let header = Header {
        kind: kind.to_string(),
        version,
        meta: serde_json::to_value(meta).expect("meta serializes"),
    };
    serde_json::to_writer(&mut body, &header).expect("header serializes");
    body.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut body, r).expect("record serializes");
        body.push(b'\n');
    }
    let trailer = Trailer {
        checksum: sha256_hex(&body),
    };
    let mut file = fs::File::create(path)?;
    file.write_all(&body)?;
    serde_json::to_writer(&mut file, &trailer).expect("trailer serializes");
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

/// Read and validate a container, returning its meta value and typed records.
pub fn read_container<T: DeserializeOwned>(
    path: &Path,
    expected_kind: &str,
    expected_version: u32,
) -> Result<(serde_json::Value, Vec<T>), ContainerError> {
    let raw = fs::read(path)?;
    let text = std::str::from_utf8(&raw)
        .map_err(|_| ContainerError::CorruptFile("not valid utf-8".into()))?;
    // The trailer is the final non-empty line; everything before it is covered
    // by the checksum.
    let trimmed = text.trim_end_matches('\n');
    let (body, trailer_line) = match trimmed.rfind('\n') {
        Some(idx) => (&raw[..idx + 1], &trimmed[idx + 1..]),
        None => {
            return Err(ContainerError::CorruptFile(
                "missing checksum trailer".into(),
            ))
        }
    };
    let trailer: Trailer = serde_json::from_str(trailer_line)
        .map_err(|_| ContainerError::CorruptFile("unreadable checksum trailer".into()))?;
    let actual = sha256_hex(body);
    if actual != trailer.checksum {
        return Err(ContainerError::CorruptFile(format!(
            "checksum mismatch: stored {}, computed {}",
            trailer.checksum, actual
        )));
    }

    let mut lines = std::str::from_utf8(body).expect("validated utf-8").lines();
    let header_line = lines
        .next()
        .ok_or_else(|| ContainerError::CorruptFile("empty container".into()))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|_| ContainerError::CorruptFile("unreadable header".into()))?;
    if header.kind != expected_kind {
        return Err(ContainerError::KindMismatch {
            found: header.kind,
            expected: expected_kind.to_string(),
        });
    }
    if header.version != expected_version {
        return Err(ContainerError::VersionMismatch {
            kind: header.kind,
            found: header.version,
            expected: expected_version,
        });
    }

    let mut records = Vec::new();
    for (index, line) in lines.enumerate() {
        let rec: T =
            serde_json::from_str(line).map_err(|source| ContainerError::Record { index, source })?;
        records.push(rec);
    }
    Ok((header.meta, records))
}
