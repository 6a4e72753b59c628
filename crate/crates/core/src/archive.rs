//! Named-tensor container shared by checkpoints, window sets and embeddings.
//!
//! Layout: magic `SGEM`, u16 format version, a 32-byte digest, then records
//! until end of file. Each record is a u16 name length, the UTF-8 name, a u8
//! rank, u32 extents and the little-endian f32 data. All integers are
//! little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"SGEM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub digest: [u8; 32],
    tensors: Vec<(String, Tensor)>,
}

fn load_error(what: &str, reason: impl Into<String>) -> Error {
    Error::Load {
        what: what.to_string(),
        reason: reason.into(),
    }
}

impl Archive {
    pub fn new(digest: [u8; 32]) -> Self {
        Archive {
            digest,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::contract(format!(
                "bad tensor name length {}",
                name.len()
            )));
        }
        if tensor.rank() > u8::MAX as usize || tensor.shape().iter().any(|&e| e > u32::MAX as usize)
        {
            return Err(Error::contract(format!(
                "tensor `{name}` shape not representable"
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::contract(format!("duplicate tensor `{name}`")));
        }
        self.tensors.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Removes and returns a tensor, failing with a load error if absent.
    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| load_error("archive", format!("missing tensor `{name}`")))?;
        Ok(self.tensors.remove(pos).1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn into_tensors(self) -> Vec<(String, Tensor)> {
        self.tensors
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.digest)?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.rank() as u8])?;
            for &e in t.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a whole archive; any truncation inside a record is an error and
    /// nothing is returned.
    pub fn read_from(mut r: impl Read, what: &str) -> Result<Self> {
        let truncated = |e: std::io::Error| {
            if e.kind() == ErrorKind::UnexpectedEof {
                load_error(what, "file is truncated")
            } else {
                load_error(what, e.to_string())
            }
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(load_error(what, "bad magic (not an SGEM file)"));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(truncated)?;
        let version = u16::from_le_bytes(b2);
        if version != FORMAT_VERSION {
            return Err(load_error(
                what,
                format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
            ));
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest).map_err(truncated)?;
        let mut archive = Archive::new(digest);
        loop {
            // A clean end of file is only allowed between records.
            match r.read(&mut b2[..1]) {
                Ok(0) => break,
                Ok(_) => {}
                Err(e) => return Err(load_error(what, e.to_string())),
            }
            r.read_exact(&mut b2[1..]).map_err(truncated)?;
            let name_len = u16::from_le_bytes(b2) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name)
                .map_err(|_| load_error(what, "tensor name is not UTF-8"))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank).map_err(truncated)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                let mut b4 = [0u8; 4];
                r.read_exact(&mut b4).map_err(truncated)?;
                shape.push(u32::from_le_bytes(b4) as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| load_error(what, format!("tensor `{name}` is too large")))?;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes).map_err(truncated)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::from_vec(&shape, data)?;
            archive
                .push(name, tensor)
                .map_err(|e| load_error(what, e.to_string()))?;
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                return Err(Error::MissingFile {
                    path: path.to_path_buf(),
                })
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        Self::read_from(BufReader::new(file), &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new([7; 32]);
        a.push("a", Tensor::from_fn(&[2, 3], |i| i as f32 - 2.5))
            .unwrap();
        a.push(
            "scalar",
            Tensor::from_vec(&[1], vec![f32::MIN_POSITIVE]).unwrap(),
        )
        .unwrap();
        a.push("nan", Tensor::from_vec(&[1], vec![f32::NAN]).unwrap())
            .unwrap();
        a
    }

    fn bytes(a: &Archive) -> Vec<u8> {
        let mut v = Vec::new();
        a.write_to(&mut v).unwrap();
        v
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = sample();
        let raw = bytes(&a);
        let b = Archive::read_from(&raw[..], "mem").unwrap();
        assert_eq!(bytes(&b), raw);
        assert_eq!(b.digest, [7; 32]);
        assert_eq!(b.names().collect::<Vec<_>>(), ["a", "scalar", "nan"]);
    }

    #[test]
    fn every_truncation_inside_a_record_fails() {
        let raw = bytes(&sample());
        let header = 4 + 2 + 32;
        let first_record = header + 2 + 1 + 1 + 8 + 24;
        for cut in 0..raw.len() {
            let res = Archive::read_from(&raw[..cut], "mem");
            if cut == header || cut == first_record || cut == first_record + 2 + 6 + 1 + 4 + 4 {
                // Record boundaries parse; callers check required names.
                assert!(res.is_ok(), "cut {cut}");
            } else {
                assert!(matches!(res, Err(Error::Load { .. })), "cut {cut}");
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut raw = bytes(&sample());
        raw[4] = 9;
        assert!(matches!(
            Archive::read_from(&raw[..], "m"),
            Err(Error::Load { .. })
        ));
        raw[0] = b'X';
        assert!(matches!(
            Archive::read_from(&raw[..], "m"),
            Err(Error::Load { .. })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = sample();
        assert!(a.push("a", Tensor::zeros(&[1])).is_err());
    }
}
