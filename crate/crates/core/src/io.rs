//! On-disk formats: tensor files, parameter checkpoints, PGM images and the
//! metrics CSV. Every writer goes through a temporary file and a rename.
//!
//! Tensor file layout, all little-endian:
//!
//! ```text
//! "LACT" | version: u16 | dtype: u8 (0 = f32, 1 = f64) | ndim: u8 | dims: ndim x u32 | payload
//! ```
//!
//! A checkpoint is `"LCKP" | version: u16 | count: u32`, then `count` index
//! entries `name_len: u16 | name | frozen: u8`, then `count` tensor records
//! in index order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Image, Sinogram};
use crate::metrics::{MetricRow, CSV_HEADER};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"LACT";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LCKP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// An n-dimensional array as stored on disk. Values are held as `f64`;
/// `F32` files narrow on write, which is exact for values read from `F32`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn new(dtype: DType, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(crate::error::dim_err(dims, data.len()));
        }
        Ok(TensorFile { dtype, dims, data })
    }

    pub fn from_image(u: &Image) -> Self {
        let (h, w) = u.shape();
        TensorFile {
            dtype: DType::F64,
            dims: vec![h, w],
            data: u.as_slice().to_vec(),
        }
    }

    pub fn from_sinogram(y: &Sinogram) -> Self {
        let (v, d) = y.shape();
        TensorFile {
            dtype: DType::F64,
            dims: vec![v, d],
            data: y.as_slice().to_vec(),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        TensorFile {
            dtype: DType::F64,
            dims: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    fn dims2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [h, w] => Ok((h, w)),
            _ => Err(crate::error::dim_err("2 dims", self.dims.len())),
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        let (h, w) = self.dims2()?;
        Image::from_vec(h, w, self.data.clone())
    }

    pub fn to_sinogram(&self) -> Result<Sinogram> {
        let (v, d) = self.dims2()?;
        let a = ndarray::Array2::from_shape_vec((v, d), self.data.clone())
            .map_err(|_| crate::error::dim_err((v, d), self.data.len()))?;
        Sinogram::from_array(a)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let shape = match self.dims[..] {
            [c, h, w] => [c, h, w],
            [h, w] => [1, h, w],
            _ => return Err(crate::error::dim_err("2 or 3 dims", self.dims.len())),
        };
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + self.data.len() * self.dtype.size());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match self.dtype {
            DType::F32 => self
                .data
                .iter()
                .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => self.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
        out
    }

    /// Decodes one record starting at `bytes[0]`; `base` is its offset in
    /// the enclosing file, used in error messages. Returns the record and
    /// the number of bytes consumed.
    pub fn decode(bytes: &[u8], base: u64) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0, base };
        let magic = r.take(4)?;
        if magic != TENSOR_MAGIC {
            return Err(r.err_at(0, "bad magic, expected \"LACT\""));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(r.err_at(4, format!("unsupported version {version}")));
        }
        let dtype = match r.u8()? {
            0 => DType::F32,
            1 => DType::F64,
            c => return Err(r.err_at(6, format!("unknown dtype code {c}"))),
        };
        let ndim = r.u8()? as usize;
        let dims: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.err_at(8, "dimension product overflows"))?;
        let payload_at = r.pos;
        let payload = r.take(count * dtype.size()).map_err(|_| {
            r.err_at(
                payload_at as u64,
                format!("truncated payload: need {} bytes", count * dtype.size()),
            )
        })?;
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        Ok((TensorFile { dtype, dims, data }, r.pos))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    fn err_at(&self, rel: u64, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.base + rel,
            message: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err_at(self.pos as u64, format!("unexpected end of data, need {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_tensor(path: &Path, t: &TensorFile) -> Result<()> {
    atomic_write(path, &t.encode())
}

pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path)?;
    let (t, used) = TensorFile::decode(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used as u64,
            message: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    Ok(t)
}

pub fn write_image(path: &Path, u: &Image) -> Result<()> {
    write_tensor(path, &TensorFile::from_image(u))
}

pub fn read_image(path: &Path) -> Result<Image> {
    read_tensor(path)?.to_image()
}

pub fn write_sinogram(path: &Path, y: &Sinogram) -> Result<()> {
    write_tensor(path, &TensorFile::from_sinogram(y))
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    read_tensor(path)?.to_sinogram()
}

/// One named parameter of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub frozen: bool,
    pub value: Tensor,
}

pub fn encode_checkpoint(entries: &[CheckpointEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint {
            name: e.name.clone(),
            message: "name longer than 65535 bytes".into(),
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::from(e.frozen));
    }
    for e in entries {
        out.extend_from_slice(&TensorFile::from_tensor(&e.value).encode());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut r = Reader { bytes, pos: 0, base: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.err_at(0, "bad magic, expected \"LCKP\""));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(r.err_at(4, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut index = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let at = r.pos as u64;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.err_at(at, "parameter name is not UTF-8"))?
            .to_string();
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(r.err_at(r.pos as u64 - 1, format!("bad frozen flag {f}"))),
        };
        index.push((name, frozen));
    }
    let mut entries = Vec::with_capacity(index.len());
    for (name, frozen) in index {
        let (t, used) = TensorFile::decode(&bytes[r.pos..], r.pos as u64)?;
        r.pos += used;
        let value = t.to_tensor().map_err(|e| Error::Checkpoint {
            name: name.clone(),
            message: e.to_string(),
        })?;
        entries.push(CheckpointEntry { name, frozen, value });
    }
    if r.pos != bytes.len() {
        return Err(r.err_at(r.pos as u64, "trailing bytes after the last record"));
    }
    Ok(entries)
}

/// Saves every parameter with its frozen flag.
pub fn checkpoint_save(path: &Path, store: &ParamStore) -> Result<()> {
    let entries: Vec<CheckpointEntry> = store
        .entries()
        .iter()
        .map(|e| CheckpointEntry {
            name: e.name.clone(),
            frozen: e.frozen,
            value: e.value.clone(),
        })
        .collect();
    atomic_write(path, &encode_checkpoint(&entries)?)
}

/// Loads every parameter of the checkpoint into `store`, which may hold
/// more parameters than the file; those keep their values. Unknown names
/// and shape mismatches are errors and leave `store` unchanged.
pub fn checkpoint_load(path: &Path, store: &mut ParamStore) -> Result<Vec<String>> {
    let entries = decode_checkpoint(&fs::read(path)?)?;
    for e in &entries {
        let cur = store.get(&e.name).ok_or_else(|| Error::Checkpoint {
            name: e.name.clone(),
            message: "not present in the network".into(),
        })?;
        if cur.value.shape() != e.value.shape() {
            return Err(Error::Checkpoint {
                name: e.name.clone(),
                message: format!("shape {:?} does not match {:?}", e.value.shape(), cur.value.shape()),
            });
        }
    }
    let mut names = Vec::with_capacity(entries.len());
    for e in entries {
        store.load_value(&e.name, e.value, e.frozen)?;
        names.push(e.name);
    }
    Ok(names)
}

/// Saves only the parameters whose name starts with `prefix`.
pub fn checkpoint_save_prefix(path: &Path, store: &ParamStore, prefix: &str) -> Result<()> {
    let entries: Vec<CheckpointEntry> = store
        .entries()
        .iter()
        .filter(|e| e.name.starts_with(prefix))
        .map(|e| CheckpointEntry {
            name: e.name.clone(),
            frozen: e.frozen,
            value: e.value.clone(),
        })
        .collect();
    atomic_write(path, &encode_checkpoint(&entries)?)
}

/// 16-bit binary PGM of `u`, mapping `[lo, hi]` to `[0, 65535]`.
pub fn encode_pgm(u: &Image, lo: f64, hi: f64) -> Vec<u8> {
    let (h, w) = u.shape();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for &v in u.as_slice() {
        let q = (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Images side by side in a grid with `cols` columns, each windowed to the
/// common `[lo, hi]`.
pub fn image_grid(images: &[Image], cols: usize, lo: f64, hi: f64) -> Result<Image> {
    let Some(first) = images.first() else {
        return Err(crate::error::param_err("empty image grid"));
    };
    let (h, w) = first.shape();
    if images.iter().any(|u| u.shape() != (h, w)) {
        return Err(crate::error::param_err("grid images differ in size"));
    }
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let mut grid = Image::zeros(rows * h, cols * w);
    grid.data.fill(lo);
    for (k, u) in images.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        grid.data
            .slice_mut(ndarray::s![r * h..(r + 1) * h, c * w..(c + 1) * w])
            .assign(&u.data.mapv(|v| v.clamp(lo, hi)));
    }
    Ok(grid)
}

pub fn write_pgm(path: &Path, u: &Image, lo: f64, hi: f64) -> Result<()> {
    atomic_write(path, &encode_pgm(u, lo, hi))
}

/// Appends rows to a metrics CSV, creating it with a header if needed.
pub fn append_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    if text.is_empty() {
        text.push_str(CSV_HEADER);
        text.push('\n');
    } else if text.lines().next() != Some(CSV_HEADER) {
        return Err(Error::Format {
            offset: 0,
            message: format!("{} is not a metrics CSV", path.display()),
        });
    } else if !text.ends_with('\n') {
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

/// A `step,loss` CSV.
pub fn write_loss_curve(path: &Path, pretrain: &[f64], main: &[f64]) -> Result<()> {
    let mut text = String::from("phase,step,loss\n");
    for (i, l) in pretrain.iter().enumerate() {
        text.push_str(&format!("epl,{i},{l:e}\n"));
    }
    for (i, l) in main.iter().enumerate() {
        text.push_str(&format!("total,{i},{l:e}\n"));
    }
    atomic_write(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_in_memory() {
        let t = TensorFile::new(DType::F64, vec![2, 3], vec![0.1, -2.0, 3.5, 1e-300, f64::MAX, 0.0]).unwrap();
        let (back, used) = TensorFile::decode(&t.encode(), 0).unwrap();
        assert_eq!(back, t);
        assert_eq!(used, t.encode().len());
    }

    #[test]
    fn header_errors_name_offsets() {
        let t = TensorFile::new(DType::F32, vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = t.encode();
        bytes[0] = b'X';
        assert!(matches!(TensorFile::decode(&bytes, 0), Err(Error::Format { offset: 0, .. })));
        let bytes = t.encode();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(TensorFile::decode(cut, 0), Err(Error::Format { offset: 12, .. })));
        let mut bad = t.encode();
        bad[6] = 9;
        assert!(matches!(TensorFile::decode(&bad, 0), Err(Error::Format { offset: 6, .. })));
    }

    #[test]
    fn pgm_header_and_scaling() {
        let u = Image::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let b = encode_pgm(&u, 0.0, 1.0);
        let head = b"P5\n2 1\n65535\n";
        assert_eq!(&b[..head.len()], head);
        assert_eq!(&b[head.len()..], &[0, 0, 255, 255]);
    }

    #[test]
    fn grid_layout() {
        let a = Image::from_vec(1, 1, vec![1.0]).unwrap();
        let b = Image::from_vec(1, 1, vec![2.0]).unwrap();
        let g = image_grid(&[a.clone(), b, a], 2, 0.0, 5.0).unwrap();
        assert_eq!(g.shape(), (2, 2));
        assert_eq!(g.as_slice(), &[1.0, 2.0, 1.0, 0.0]);
    }
}
