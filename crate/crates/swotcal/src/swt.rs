//! SWT container: the toolkit's bit-exact binary file format.
//!
//! Layout:
//!
//! ```text
//! magic   "SWT1\n"
//! header  one JSON object on a single newline-terminated UTF-8 line
//! payload concatenated row-major little-endian f64 arrays, in the order
//!         declared by the header
//! ```
//!
//! The header carries `kind`, `dims` (one dims list per array), `dtype`
//! (always "f64le"), optional `names` (parallel to `dims`), optional
//! `sigmas_km`, and a free-form `meta` object. Payload length must equal
//! 8 bytes times the sum of the dims products. Floats round-trip exactly:
//! byte-for-byte on write-read-write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, SwotError};

pub const MAGIC: &[u8; 5] = b"SWT1\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwtHeader {
    pub kind: String,
    pub dims: Vec<Vec<usize>>,
    pub dtype: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub names: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigmas_km: Option<Vec<f64>>,
    #[serde(default)]
    pub meta: Value,
}

impl SwtHeader {
    pub fn new(kind: &str, dims: Vec<Vec<usize>>) -> Self {
        SwtHeader {
            kind: kind.to_string(),
            dims,
            dtype: "f64le".to_string(),
            names: None,
            sigmas_km: None,
            meta: Value::Null,
        }
    }

    pub fn total_len(&self) -> usize {
        self.dims.iter().map(|d| d.iter().product::<usize>()).sum()
    }
}

/// A parsed SWT file: header plus one payload buffer per declared array.
#[derive(Debug, Clone)]
pub struct SwtFile {
    pub header: SwtHeader,
    pub arrays: Vec<Vec<f64>>,
}

impl SwtFile {
    pub fn new(header: SwtHeader, arrays: Vec<Vec<f64>>) -> Result<Self> {
        if header.dims.len() != arrays.len() {
            return Err(SwotError::Data(format!(
                "header declares {} arrays, got {}",
                header.dims.len(),
                arrays.len()
            )));
        }
        for (d, a) in header.dims.iter().zip(arrays.iter()) {
            if d.iter().product::<usize>() != a.len() {
                return Err(SwotError::Data(format!(
                    "array length {} does not match dims {:?}",
                    a.len(),
                    d
                )));
            }
        }
        if header.dtype != "f64le" {
            return Err(SwotError::Data(format!("unsupported dtype {}", header.dtype)));
        }
        Ok(SwtFile { header, arrays })
    }

    /// Index of a named array.
    pub fn find(&self, name: &str) -> Result<usize> {
        let names = self
            .header
            .names
            .as_ref()
            .ok_or_else(|| SwotError::Data("SWT file has no array names".into()))?;
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SwotError::Data(format!("array '{name}' not in SWT file")))
    }
}

/// Serialize to bytes (magic + one-line JSON header + payload).
pub fn to_bytes(file: &SwtFile) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let header = serde_json::to_string(&file.header)?;
    if header.contains('\n') {
        return Err(SwotError::Data("SWT header must serialize to one line".into()));
    }
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for arr in &file.arrays {
        for v in arr {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<SwtFile> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(SwotError::Data("not an SWT file (bad magic)".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| SwotError::Data("SWT header line not terminated".into()))?;
    let header: SwtHeader = serde_json::from_slice(&rest[..nl])?;
    let payload = &rest[nl + 1..];
    let expect = header.total_len() * 8;
    if payload.len() != expect {
        return Err(SwotError::Data(format!(
            "SWT payload is {} bytes, header declares {expect}",
            payload.len()
        )));
    }
    let mut arrays = Vec::with_capacity(header.dims.len());
    let mut off = 0usize;
    for d in &header.dims {
        let n = d.iter().product::<usize>();
        let mut arr = Vec::with_capacity(n);
        for i in 0..n {
            let mut b = [0u8; 8];
            b.copy_from_slice(&payload[off + i * 8..off + i * 8 + 8]);
            arr.push(f64::from_le_bytes(b));
        }
        off += n * 8;
        arrays.push(arr);
    }
    SwtFile::new(header, arrays)
}

/// Write atomically: to `<path>.tmp` then rename over the target.
pub fn write(path: &Path, file: &SwtFile) -> Result<()> {
    let bytes = to_bytes(file)?;
    let tmp = path.with_extension("swt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&bytes)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<SwtFile> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    from_bytes(&buf).map_err(|e| match e {
        SwotError::Data(msg) => SwotError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_is_bitwise_lossless() {
        let mut rng = Rng::new(1);
        let mut a = vec![0.0; 64];
        rng.fill_normal(&mut a);
        // include awkward values
        a[0] = 0.1 + 0.2;
        a[1] = f64::MIN_POSITIVE;
        a[2] = -0.0;
        a[3] = 1e300;
        let mut b = vec![0.0; 12];
        rng.fill_normal(&mut b);
        let mut header = SwtHeader::new("test", vec![vec![4, 16], vec![3, 4]]);
        header.names = Some(vec!["alpha".into(), "beta".into()]);
        header.sigmas_km = Some(vec![8.0, 16.0]);
        header.meta = serde_json::json!({"note": "round trip", "seed": 7});
        let f = SwtFile::new(header, vec![a.clone(), b.clone()]).unwrap();
        let bytes = to_bytes(&f).unwrap();
        let g = from_bytes(&bytes).unwrap();
        for (x, y) in a.iter().zip(&g.arrays[0]) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in b.iter().zip(&g.arrays[1]) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // write-read-write byte identity
        let bytes2 = to_bytes(&g).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(g.find("beta").unwrap(), 1);
        assert!(g.find("gamma").is_err());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let header = SwtHeader::new("t", vec![vec![2]]);
        let f = SwtFile::new(header, vec![vec![1.0, 2.0]]).unwrap();
        let mut bytes = to_bytes(&f).unwrap();
        assert!(from_bytes(&bytes[1..]).is_err()); // bad magic
        bytes.pop(); // truncated payload
        assert!(from_bytes(&bytes).is_err());
        // dims/array mismatch rejected at construction
        let header = SwtHeader::new("t", vec![vec![3]]);
        assert!(SwtFile::new(header, vec![vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn file_write_read(){
        let dir = std::env::temp_dir().join("swotcal_swt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.swt");
        let header = SwtHeader::new("t", vec![vec![2, 2]]);
        let f = SwtFile::new(header, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        write(&path, &f).unwrap();
        let g = read(&path).unwrap();
        assert_eq!(g.arrays[0], vec![1.0, 2.0, 3.0, 4.0]);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
