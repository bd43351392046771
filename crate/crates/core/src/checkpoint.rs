//! Binary parameter container shared by the detector and the denoiser:
//! an 8-byte magic, a little-endian `u32` header length, a JSON header,
//! then the parameters as little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LTRAPCK\0";
pub const CHECKPOINT_VERSION: u64 = 1;

pub fn write_container(
    path: &Path,
    kind: &str,
    mut header: serde_json::Value,
    params: &[f64],
) -> Result<()> {
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
    }
    header["kind"] = kind.into();
    header["version"] = CHECKPOINT_VERSION.into();
    header["param_count"] = params.len().into();
    let head = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + head.len() + params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(head.len() as u32).to_le_bytes());
    buf.extend_from_slice(&head);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path, kind: &str) -> Result<(serde_json::Value, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header["version"].as_u64() != Some(CHECKPOINT_VERSION) {
        return Err(bad(&format!("unsupported version {}", header["version"])));
    }
    if header["kind"].as_str() != Some(kind) {
        return Err(bad(&format!("expected a {kind} checkpoint, found {}", header["kind"])));
    }
    let raw = &bytes[12 + hlen..];
    let count = header["param_count"].as_u64().ok_or_else(|| bad("missing param_count"))? as usize;
    if raw.len() != count * 8 {
        return Err(bad("parameter block length does not match header"));
    }
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_kind_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        write_container(&p, "a", serde_json::json!({}), &[1.0, -2.5]).unwrap();
        let (_, params) = read_container(&p, "a").unwrap();
        assert_eq!(params, vec![1.0, -2.5]);
        assert!(matches!(read_container(&p, "b"), Err(Error::Checkpoint(_))));

        let mut bytes = fs::read(&p).unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("\"version\":1", "\"version\":7");
        bytes = text.into_bytes();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_container(&p, "a"), Err(Error::Checkpoint(_))));
    }
}
