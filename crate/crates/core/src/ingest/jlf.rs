//! JLF, the binary Jacobian file format.
//!
//! ```text
//! magic      8 bytes   "UINFJAC1"
//! hdr_len    u32 LE    length of the JSON header in bytes
//! header     hdr_len   UTF-8 JSON (see `Header`)
//! indices    u32 LE    kept indices, layer after layer (d0_layer each)
//! jacobian   f64 LE    n·k rows × Σ d0_layer, row i·k+o = ∂f_o(x_i)
//! f0         f64 LE    n × k initial outputs, row-major
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{JacobianStore, LayerSketch, Provenance};
use crate::error::{Error, FormatError, Result};

pub const JLF_MAGIC: &[u8; 8] = b"UINFJAC1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    n: usize,
    k: usize,
    layers: Vec<HeaderLayer>,
    dtype: String,
    order: String,
    #[serde(default)]
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLayer {
    name: String,
    d_layer: usize,
    d0_layer: usize,
    seed: u64,
}

pub fn encode_jacobians(store: &JacobianStore) -> Vec<u8> {
    let header = Header {
        version: VERSION,
        n: store.n(),
        k: store.k(),
        layers: store
            .layers()
            .iter()
            .map(|l| HeaderLayer {
                name: l.name.clone(),
                d_layer: l.d_layer,
                d0_layer: l.d0(),
                seed: l.seed,
            })
            .collect(),
        dtype: "f64".into(),
        order: "sample-major".into(),
        provenance: store.provenance.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let jac = store.jacobian();
    let mut out = Vec::with_capacity(12 + json.len() + 8 * (jac.len() + store.f0().len()));
    out.extend_from_slice(JLF_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for layer in store.layers() {
        for &idx in &layer.kept {
            out.extend_from_slice(&idx.to_le_bytes());
        }
    }
    for r in 0..jac.nrows() {
        for c in 0..jac.ncols() {
            out.extend_from_slice(&jac[(r, c)].to_le_bytes());
        }
    }
    let f0 = store.f0();
    for r in 0..f0.nrows() {
        for c in 0..f0.ncols() {
            out.extend_from_slice(&f0[(r, c)].to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                needed: self.pos.saturating_add(len),
                available: self.buf.len(),
            }),
        }
    }
}

pub fn decode_jacobians(bytes: &[u8]) -> Result<JacobianStore> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(8).map_err(|_| FormatError::Magic)?;
    if magic != JLF_MAGIC {
        return Err(FormatError::Magic.into());
    }
    let hdr_len = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(cur.take(hdr_len)?)
        .map_err(|e| FormatError::Header(e.to_string()))?;
    if header.version != VERSION {
        return Err(FormatError::Header(format!("unsupported version {}", header.version)).into());
    }
    if header.dtype != "f64" || header.order != "sample-major" {
        return Err(FormatError::Header(format!(
            "unsupported dtype/order {}/{}",
            header.dtype, header.order
        ))
        .into());
    }
    if header.k == 0 || header.layers.is_empty() {
        return Err(FormatError::Header("k and layer count must be positive".into()).into());
    }
    for l in &header.layers {
        if l.d0_layer == 0 || l.d0_layer > l.d_layer {
            return Err(FormatError::Header(format!(
                "layer {} keeps {} of {} coordinates",
                l.name, l.d0_layer, l.d_layer
            ))
            .into());
        }
    }

    let d0: usize = header.layers.iter().map(|l| l.d0_layer).sum();
    let rows = header.n.checked_mul(header.k);
    let expected = rows
        .and_then(|r| r.checked_mul(d0))
        .and_then(|j| j.checked_add(header.n * header.k))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(4 * d0))
        .and_then(|v| v.checked_add(cur.pos))
        .ok_or_else(|| FormatError::SizeMismatch("header dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            needed: expected,
            available: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(FormatError::SizeMismatch(format!(
            "header implies {expected} bytes, file has {}",
            bytes.len()
        ))
        .into());
    }

    let mut layers = Vec::with_capacity(header.layers.len());
    for l in &header.layers {
        let raw = cur.take(4 * l.d0_layer)?;
        let kept = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        layers.push(LayerSketch {
            name: l.name.clone(),
            d_layer: l.d_layer,
            kept,
            seed: l.seed,
        });
    }
    let nk = header.n * header.k;
    let jac_raw = cur.take(8 * nk * d0)?;
    let jac = DMatrix::from_row_iterator(nk, d0, f64_iter(jac_raw));
    let f0_raw = cur.take(8 * nk)?;
    let f0 = DMatrix::from_row_iterator(header.n, header.k, f64_iter(f0_raw));
    JacobianStore::new(header.k, layers, jac, f0, header.provenance)
}

fn f64_iter(raw: &[u8]) -> impl Iterator<Item = f64> + '_ {
    raw.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
}

pub fn write_jacobians(store: &JacobianStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_jacobians(store)).map_err(|e| Error::io(path, e))
}

pub fn read_jacobians(path: impl AsRef<Path>) -> Result<JacobianStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_jacobians(&bytes)
}
