//! Binary checkpoint container for a trained parameter set.
//!
//! Layout (all integers little-endian):
//!   magic "BODYCKPT" | schema u32 | tool (u32 len + utf8) | seed u64
//!   | sha256(config) 32B | config len u64 | config toml bytes
//!   | param count u64
//!   | per param: name (u32 len + utf8), flags u8 (bit0 = learnable),
//!     ndim u32, dims u64 each, values f64
//!   | sha256 of everything above, 32B
//!
//! Parameters are written in sorted-name order, so identical parameter sets
//! always serialize to identical bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParameterSet;
use super::tensor::Tensor;
use super::{DiffError, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BODYCKPT";

pub struct Checkpoint {
    pub schema_version: u32,
    pub tool: String,
    pub seed: u64,
    pub config_toml: String,
    pub config_digest: [u8; 32],
    pub params: ParameterSet,
}

pub fn config_digest(config_toml: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(config_toml.as_bytes());
    h.finalize().into()
}

/// Hex form of a digest, for log lines and reports.
pub fn digest_hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    path: &Path,
    params: &ParameterSet,
    tool: &str,
    seed: u64,
    config_toml: &str,
) -> Result<()> {
    let bytes = encode(params, tool, seed, config_toml);
    fs::write(path, bytes).map_err(|e| DiffError::Io {
        context: format!("writing checkpoint {}", path.display()),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| DiffError::Io {
        context: format!("reading checkpoint {}", path.display()),
        source: e,
    })?;
    decode(&bytes)
}

fn encode(params: &ParameterSet, tool: &str, seed: u64, config_toml: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&params.schema_version.to_le_bytes());
    put_str(&mut out, tool);
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&config_digest(config_toml));
    out.extend_from_slice(&(config_toml.len() as u64).to_le_bytes());
    out.extend_from_slice(config_toml.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in params.iter() {
        put_str(&mut out, name);
        out.push(u8::from(t.requires_grad));
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut h = Sha256::new();
    h.update(&out);
    let footer: [u8; 32] = h.finalize().into();
    out.extend_from_slice(&footer);
    out
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 32);
    let mut h = Sha256::new();
    h.update(body);
    let want: [u8; 32] = h.finalize().into();
    if want != footer {
        return Err(corrupt("content digest mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let schema_version = r.u32()?;
    if schema_version != SCHEMA_VERSION {
        return Err(DiffError::SchemaVersion { found: schema_version, expected: SCHEMA_VERSION });
    }
    let tool = r.string()?;
    let seed = r.u64()?;
    let mut config_digest_stored = [0u8; 32];
    config_digest_stored.copy_from_slice(r.take(32)?);
    let config_len = r.u64()? as usize;
    let config_toml = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|_| corrupt("config is not utf-8"))?;
    if config_digest(&config_toml) != config_digest_stored {
        return Err(corrupt("config digest mismatch"));
    }
    let count = r.u64()? as usize;
    let mut params = ParameterSet::new(schema_version);
    for _ in 0..count {
        let name = r.string()?;
        let flags = r.take(1)?[0];
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(corrupt(&format!("parameter {name} claims {ndim} dims")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        if n == 0 || n > body.len() / 8 + 1 {
            return Err(corrupt(&format!("parameter {name} has impossible shape {shape:?}")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        let mut t = Tensor::new(shape, data)
            .map_err(|e| corrupt(&format!("parameter {name}: {e}")))?;
        t.requires_grad = flags & 1 == 1;
        params.insert(&name, t).map_err(|e| corrupt(&e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after last parameter"));
    }
    Ok(Checkpoint {
        schema_version,
        tool,
        seed,
        config_toml,
        config_digest: config_digest_stored,
        params,
    })
}

fn corrupt(detail: &str) -> DiffError {
    DiffError::CorruptCheckpoint { detail: detail.to_string() }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 4096 {
            return Err(corrupt("string field too long"));
        }
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ParameterSet {
        let mut p = ParameterSet::new(SCHEMA_VERSION);
        p.insert("enc.w", Tensor::new(vec![2, 3], vec![1.5, -0.25, 0.0, 3.0, -7.5, 0.125]).unwrap())
            .unwrap();
        p.insert("enc.running_mean", Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap().buffer())
            .unwrap();
        p
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let p = sample_params();
        let bytes = encode(&p, "trainer", 42, "[train]\nseed = 42\n");
        let ck = decode(&bytes).unwrap();
        assert_eq!(ck.seed, 42);
        assert_eq!(ck.tool, "trainer");
        assert_eq!(ck.config_toml, "[train]\nseed = 42\n");
        assert_eq!(ck.params.len(), 2);
        let w = ck.params.get("enc.w").unwrap();
        assert_eq!(w.shape(), &[2, 3]);
        assert_eq!(w.data(), p.get("enc.w").unwrap().data());
        assert!(w.requires_grad);
        assert!(!ck.params.get("enc.running_mean").unwrap().requires_grad);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let p = sample_params();
        let bytes = encode(&p, "trainer", 7, "x = 1\n");
        let ck = decode(&bytes).unwrap();
        let again = encode(&ck.params, &ck.tool, ck.seed, &ck.config_toml);
        assert_eq!(bytes, again);
    }

    #[test]
    fn corruption_is_detected() {
        let p = sample_params();
        let mut bytes = encode(&p, "trainer", 7, "x = 1\n");
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(DiffError::CorruptCheckpoint { .. })));
    }

    #[test]
    fn truncation_is_detected() {
        let p = sample_params();
        let bytes = encode(&p, "trainer", 7, "x = 1\n");
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(decode(cut), Err(DiffError::CorruptCheckpoint { .. })));
    }

    #[test]
    fn trailing_bytes_are_detected() {
        let p = sample_params();
        let mut bytes = encode(&p, "trainer", 7, "x = 1\n");
        // Splice garbage before the footer and restamp the digest so only the
        // structural trailing-bytes check can catch it.
        let body_end = bytes.len() - 32;
        bytes.truncate(body_end);
        bytes.extend_from_slice(&[1, 2, 3]);
        let mut h = Sha256::new();
        h.update(&bytes);
        let footer: [u8; 32] = h.finalize().into();
        bytes.extend_from_slice(&footer);
        assert!(matches!(decode(&bytes), Err(DiffError::CorruptCheckpoint { .. })));
    }

    #[test]
    fn future_schema_is_refused_with_versions_named() {
        let p = sample_params();
        let mut bytes = encode(&p, "trainer", 7, "x = 1\n");
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        let body_end = bytes.len() - 32;
        let mut h = Sha256::new();
        h.update(&bytes[..body_end]);
        let footer: [u8; 32] = h.finalize().into();
        bytes[body_end..].copy_from_slice(&footer);
        let err = decode(&bytes).err().expect("future schema must be refused");
        match err {
            DiffError::SchemaVersion { found: 99, expected } => {
                assert_eq!(expected, SCHEMA_VERSION);
            }
            other => panic!("expected schema error, got {other}"),
        }
    }
}
