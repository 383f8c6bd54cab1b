//! Checkpoint container: named f64 tensors plus a JSON metadata blob, in one
//! binary file (magic `DAVC`).

use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DAVC";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Config echo, seed, step count, loss curve, and anything else the
    /// producer wants to pin.
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidInput(format!("checkpoint tensor {name} missing")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(t.ndim() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut raw = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => {
                    Error::MissingInput(format!("checkpoint {}", path.display()))
                }
                _ => Error::io(path, e),
            })?
            .read_to_end(&mut raw)
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::InvalidInput(format!("checkpoint {}: {m}", path.display()));
        if raw.len() < 16 || &raw[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(raw[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("version {version}")));
        }
        let meta_len = u64::from_le_bytes(raw[8..16].try_into().unwrap()) as usize;
        let mut at = 16;
        if raw.len() < at + meta_len + 4 {
            return Err(bad("truncated metadata"));
        }
        let meta: serde_json::Value =
            serde_json::from_slice(&raw[at..at + meta_len]).map_err(|e| bad(&e.to_string()))?;
        at += meta_len;
        let count = u32::from_le_bytes(raw[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            if raw.len() < at + 4 {
                return Err(bad("truncated tensor header"));
            }
            let nlen = u32::from_le_bytes(raw[at..at + 4].try_into().unwrap()) as usize;
            at += 4;
            let name = String::from_utf8(raw[at..at + nlen].to_vec()).map_err(|_| bad("name utf8"))?;
            at += nlen;
            let ndim = raw[at] as usize;
            at += 1;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u64::from_le_bytes(raw[at..at + 8].try_into().unwrap()) as usize);
                at += 8;
            }
            let n: usize = dims.iter().product();
            if raw.len() < at + n * 8 {
                return Err(bad("truncated tensor data"));
            }
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                data.push(f64::from_le_bytes(raw[at + i * 8..at + i * 8 + 8].try_into().unwrap()));
            }
            at += n * 8;
            tensors.push((
                name,
                ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|_| bad("shape"))?,
            ));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Copy named tensors into matching parameter tensors (shape-checked).
    pub fn load_into(&self, params: &[(String, crate::tape::Tensor)]) -> Result<()> {
        for (name, t) in params {
            let src = self.tensor(name)?;
            if src.shape() != t.shape().as_slice() {
                return Err(Error::InvalidInput(format!(
                    "checkpoint tensor {name}: shape {:?} vs expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.set_data(src.clone());
        }
        Ok(())
    }

    pub fn from_params(meta: serde_json::Value, params: &[(String, crate::tape::Tensor)]) -> Checkpoint {
        Checkpoint {
            meta,
            tensors: params.iter().map(|(n, t)| (n.clone(), t.data().clone())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits_and_meta() {
        let meta = serde_json::json!({"seed": 7, "steps": 12, "curve": [1.0, 0.5]});
        let t1 = ArrayD::from_shape_fn(IxDyn(&[3, 2]), |ix| (ix[0] * 2 + ix[1]) as f64 * 0.1);
        let t2 = ArrayD::from_shape_fn(IxDyn(&[4]), |ix| -(ix[0] as f64));
        let ck = Checkpoint {
            meta: meta.clone(),
            tensors: vec![("a.w".into(), t1.clone()), ("b".into(), t2.clone())],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.tensor("a.w").unwrap(), &t1);
        assert_eq!(back.tensor("b").unwrap(), &t2);
        assert!(back.tensor("missing").is_err());
    }

    #[test]
    fn corrupt_magic_is_invalid_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::InvalidInput(_))));
    }
}
