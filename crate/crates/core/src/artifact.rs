//! Binary container shared by checkpoints and dataset caches.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DBSE" u8:version
//! u32:header_len  header_len bytes of UTF-8 `key=value\n` lines, keys sorted
//! repeated until end of file:
//!     u32:name_len name  u32:rank  u64 * rank dims  f64 * numel payload
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DBSE";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Artifact {
    pub header: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Artifact {
    pub fn header_value(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing header key `{key}`")))
    }

    pub fn parse_header<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.header_value(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("header key `{key}` has bad value `{raw}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }
}

/// Canonical text form of a key=value map: sorted `key=value` lines.
pub fn header_text(header: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (k, v) in header {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s
}

pub fn encode(a: &Artifact) -> Vec<u8> {
    let text = header_text(&a.header);
    let mut out = Vec::with_capacity(16 + text.len());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for (name, t) in &a.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Artifact> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.take(1, "version")?[0];
    if version != FORMAT_VERSION {
        return Err(Error::Compat(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = r.u32("header length")? as usize;
    let text = std::str::from_utf8(r.take(len, "header")?)
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let mut header = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
        header.insert(k.to_string(), v.to_string());
    }

    let mut tensors = Vec::new();
    while r.pos < buf.len() {
        let n = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("dims")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= buf.len()))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` has implausible shape")))?;
        let bytes = r.take(numel * 8, "tensor payload")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_parts(shape, data)));
    }
    Ok(Artifact { header, tensors })
}

/// Writes via a temporary sibling and a rename, so an existing file is
/// never left half-written.
pub fn write(path: &Path, a: &Artifact) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&encode(a)).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Artifact> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Artifact {
        let mut header = BTreeMap::new();
        header.insert("b".into(), "2".into());
        header.insert("a".into(), "x y".into());
        Artifact {
            header,
            tensors: vec![
                ("w".into(), Tensor::from_fn(&[2, 3], |i| i as f64 / 3.0)),
                ("s".into(), Tensor::scalar(-0.0)),
                ("e".into(), Tensor::zeros(&[0, 4])),
            ],
        }
    }

    #[test]
    fn layout_is_as_documented() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"DBSE");
        assert_eq!(bytes[4], FORMAT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 10);
        assert_eq!(&bytes[9..19], b"a=x y\nb=2\n");
        assert_eq!(u32::from_le_bytes(bytes[19..23].try_into().unwrap()), 1);
        assert_eq!(bytes[23], b'w');
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[28..36].try_into().unwrap()), 2);
    }

    #[test]
    fn round_trip_is_exact() {
        let a = sample();
        let bytes = encode(&a);
        let b = decode(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(encode(&b), bytes);
        assert!(b.tensors[1].1.data()[0].is_sign_negative());
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut old = bytes.clone();
        old[4] = 0;
        assert!(matches!(decode(&old), Err(Error::Compat(_))));
        for cut in [3, 7, 12, 30, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn write_replaces_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        write(&path, &sample()).unwrap();
        assert_eq!(read(&path).unwrap(), sample());
        assert!(!path.with_extension("partial").exists());
    }
}
