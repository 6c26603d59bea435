//! IDX files: big-endian magic `00 00 08 NDIM`, `NDIM` big-endian `u32`
//! dimensions, then unsigned bytes. Gzip-compressed files are detected by
//! their header and decompressed transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::autograd::Tensor;
use crate::{Error, Result};

/// Magic of a 1-D unsigned-byte file (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// Magic of a 3-D unsigned-byte file (images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn parse(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad =
            |offset: usize, msg: String| Error::format(origin, format!("offset {offset}: {msg}"));
        if bytes.len() < 4 {
            return Err(bad(0, "file shorter than the 4-byte magic".into()));
        }
        if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
            return Err(bad(
                0,
                format!(
                    "bad magic {:02x} {:02x} {:02x} {:02x} (expected 00 00 08 NN)",
                    bytes[0], bytes[1], bytes[2], bytes[3]
                ),
            ));
        }
        let ndim = bytes[3] as usize;
        if ndim == 0 {
            return Err(bad(3, "zero dimensions".into()));
        }
        let header = 4 + 4 * ndim;
        if bytes.len() < header {
            return Err(bad(
                bytes.len(),
                format!("truncated header, {ndim} dimensions declared"),
            ));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() < n {
            return Err(bad(
                bytes.len(),
                format!("truncated payload: {} of {n} bytes", payload.len()),
            ));
        }
        if payload.len() > n {
            return Err(bad(
                header + n,
                format!("{} trailing bytes", payload.len() - n),
            ));
        }
        Ok(Self {
            dims,
            data: payload.to_vec(),
        })
    }

    /// Items flattened to rows and rescaled by `1/255`.
    pub fn to_images(&self) -> Tensor {
        let items = self.dims[0];
        let width = self.dims[1..].iter().product();
        let data = self.data.iter().map(|&b| f64::from(b) / 255.0).collect();
        Tensor::matrix(items, width, data).expect("dims match payload")
    }
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        out
    } else {
        raw
    };
    IdxArray::parse(&bytes, path)
}

pub fn write_idx<W: Write>(mut w: W, array: &IdxArray) -> std::io::Result<()> {
    w.write_all(&[0, 0, 0x08, array.dims.len() as u8])?;
    for &d in &array.dims {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    w.write_all(&array.data)
}

/// Loads an image file and its label file; images come back as `N×784`
/// rows in `[0, 1]`.
pub fn load_mnist(images: &Path, labels: &Path) -> Result<(Tensor, Vec<u8>)> {
    let img = read_idx(images)?;
    if img.dims.len() != 3 {
        return Err(Error::format(
            images,
            format!(
                "expected a 3-D image file, found {} dimensions",
                img.dims.len()
            ),
        ));
    }
    let lab = read_idx(labels)?;
    if lab.dims.len() != 1 {
        return Err(Error::format(
            labels,
            format!(
                "expected a 1-D label file, found {} dimensions",
                lab.dims.len()
            ),
        ));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            img.dims[0], lab.dims[0]
        )));
    }
    Ok((img.to_images(), lab.data))
}
