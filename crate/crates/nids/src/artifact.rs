//! Versioned artifact container. Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "NIDSART\x01"
//! 8       4     format version (u32)
//! 12      4     kind length K (u32)
//! 16      K     kind (UTF-8, e.g. "detector.dos", "meta_system")
//! ..      4     config digest length D (u32)
//! ..      D     config digest (hex SHA-256 of the experiment config)
//! ..      8     payload length P (u64)
//! ..      P     payload (JSON)
//! ..      32    SHA-256 over all preceding bytes
//! ```
//!
//! Writes go to a temp file in the destination directory and are renamed into
//! place, so a crash never leaves a loadable-but-corrupt artifact.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NIDSART\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub kind: String,
    pub config_digest: String,
}

pub fn save<T: Serialize>(
    path: &Path,
    kind: &str,
    config_digest: &str,
    payload: &T,
) -> Result<()> {
    let json = serde_json::to_vec(payload)
        .map_err(|e| Error::Artifact(format!("serialize payload: {e}")))?;

    let mut bytes = Vec::with_capacity(json.len() + 128);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    bytes.extend_from_slice(kind.as_bytes());
    bytes.extend_from_slice(&(config_digest.len() as u32).to_le_bytes());
    bytes.extend_from_slice(config_digest.as_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    let checksum = Sha256::digest(&bytes);
    bytes.extend_from_slice(&checksum);

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact"),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<(ArtifactHeader, T)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::Artifact(format!("{}: {msg}", path.display()));

    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(fail("truncated"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(fail("checksum mismatch"));
    }
    if &body[..8] != MAGIC {
        return Err(fail("bad magic"));
    }
    fn take<'a>(body: &'a [u8], pos: &mut usize, n: usize) -> Option<&'a [u8]> {
        let s = body.get(*pos..*pos + n)?;
        *pos += n;
        Some(s)
    }
    let mut pos = 8usize;
    let mut take = |n: usize| take(body, &mut pos, n).ok_or_else(|| fail("truncated"));
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(fail(&format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let kind_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let kind = String::from_utf8(take(kind_len)?.to_vec()).map_err(|_| fail("kind not UTF-8"))?;
    let digest_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let config_digest =
        String::from_utf8(take(digest_len)?.to_vec()).map_err(|_| fail("digest not UTF-8"))?;
    let payload_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let payload = take(payload_len)?;
    if pos != body.len() {
        return Err(fail("trailing bytes"));
    }
    let value = serde_json::from_slice(payload)
        .map_err(|e| fail(&format!("payload deserialize: {e}")))?;
    Ok((
        ArtifactHeader {
            kind,
            config_digest,
        },
        value,
    ))
}

/// Load and additionally require a specific kind and config digest.
pub fn load_expected<T: DeserializeOwned>(
    path: &Path,
    kind: &str,
    config_digest: &str,
) -> Result<T> {
    let (header, value) = load(path)?;
    if header.kind != kind {
        return Err(Error::Artifact(format!(
            "{}: kind {:?}, expected {:?}",
            path.display(),
            header.kind,
            kind
        )));
    }
    if header.config_digest != config_digest {
        return Err(Error::Artifact(format!(
            "{}: config digest mismatch; artifact was built from a different configuration",
            path.display()
        )));
    }
    Ok(value)
}
