//! Tensor container files: one line of JSON header followed by raw
//! little-endian `f32` buffers, in the order the header lists them.
//!
//! ```text
//! {"format":"aimc-map-container","version":1,"meta":{...},"tensors":[{"name":"w0","shape":[9,8]},...]}\n
//! <9*8 f32 values of w0><...>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT: &str = "aimc-map-container";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_container<W: Write>(
    mut w: W,
    meta: serde_json::Value,
    tensors: &[(&str, &Tensor)],
) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        meta,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let line = serde_json::to_string(&header).map_err(std::io::Error::other)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    for (_, t) in tensors {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn save(path: &Path, meta: serde_json::Value, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_container(std::io::BufWriter::new(f), meta, tensors).map_err(|e| Error::io(path, e))
}

pub fn read_container<R: Read>(r: R) -> std::result::Result<(Header, Vec<(String, Tensor)>), String> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| e.to_string())?;
    let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| format!("header: {e}"))?;
    if header.format != FORMAT {
        return Err(format!("unknown container format {:?}", header.format));
    }
    if header.version != VERSION {
        return Err(format!("unsupported container version {}", header.version));
    }
    let mut out = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        reader
            .read_exact(&mut buf)
            .map_err(|e| format!("tensor {}: {e}", entry.name))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor::new(entry.shape.clone(), data).map_err(|e| e.to_string())?;
        out.push((entry.name.clone(), t));
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest).map_err(|e| e.to_string())? != 0 {
        return Err("trailing bytes after last tensor".into());
    }
    Ok((header, out))
}

pub fn load(path: &Path) -> Result<(Header, Vec<(String, Tensor)>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_container(f).map_err(|reason| Error::Format {
        path: path.into(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_f32_exact() {
        let a = Tensor::matrix(2, 2, vec![1.0, -0.5, 3.25, 1e-3]).unwrap();
        let b = Tensor::vector(vec![7.0]);
        let mut buf = Vec::new();
        write_container(&mut buf, serde_json::json!({"seed": 3}), &[("a", &a), ("b", &b)]).unwrap();
        let header_len = buf.iter().position(|&c| c == b'\n').unwrap() + 1;
        assert_eq!(buf.len(), header_len + 5 * 4);
        let (h, ts) = read_container(buf.as_slice()).unwrap();
        assert_eq!(h.meta["seed"], 3);
        assert_eq!(ts[0].0, "a");
        assert_eq!(ts[0].1.data()[3], 1e-3f32 as f64);
        assert_eq!(ts[1].1.data(), &[7.0]);
    }

    #[test]
    fn truncated_and_trailing_data_rejected() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_container(&mut buf, serde_json::Value::Null, &[("a", &a)]).unwrap();
        assert!(read_container(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_container(buf.as_slice()).is_err());
    }
}
