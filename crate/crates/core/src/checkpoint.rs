//! Versioned binary checkpoint container.
//!
//! One record per file: either full model parameters, a task-vector delta,
//! or a coefficient matrix, distinguished by a kind tag. All numbers are
//! little-endian; floats are raw IEEE-754 bits, so round trips are
//! bit-exact by construction.

use crate::arch::{Activation, ArchitectureDescriptor, LayerBlock, ModelParams};
use crate::error::{Error, Result};
use crate::personalize::CoefficientMatrix;
use crate::taskvec::{Provenance, TaskVector};
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"TMXC";
const VERSION: u16 = 1;

const KIND_PARAMS: u8 = 0;
const KIND_DELTA: u8 = 1;
const KIND_COEFFICIENTS: u8 = 2;

/// FNV-1a 64 over the canonical encoding of descriptor plus layers.
pub fn params_hash(params: &ModelParams) -> u64 {
    let mut w = Writer::new();
    write_descriptor(&mut w, params.descriptor());
    write_layers(&mut w, params.layers());
    fnv1a(&w.buf)
}

pub fn save_params(params: &ModelParams, id: &str, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.header(KIND_PARAMS);
    w.string(id);
    write_descriptor(&mut w, params.descriptor());
    write_layers(&mut w, params.layers());
    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<(String, ModelParams)> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.header(KIND_PARAMS)?;
    let id = r.string()?;
    let descriptor = read_descriptor(&mut r)?;
    let layers = read_layers(&mut r, &descriptor)?;
    r.finish()?;
    Ok((id, ModelParams::from_layers(descriptor, layers)?))
}

pub fn save_task_vector(
    tv: &TaskVector,
    descriptor: &ArchitectureDescriptor,
    path: &Path,
) -> Result<()> {
    let mut w = Writer::new();
    w.header(KIND_DELTA);
    w.string(&tv.task_id);
    w.u64(tv.provenance.pre_hash);
    w.u64(tv.provenance.ft_hash);
    write_descriptor(&mut w, descriptor);
    write_layers(&mut w, tv.layers());
    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn load_task_vector(path: &Path) -> Result<(ArchitectureDescriptor, TaskVector)> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.header(KIND_DELTA)?;
    let task_id = r.string()?;
    let pre_hash = r.u64()?;
    let ft_hash = r.u64()?;
    let descriptor = read_descriptor(&mut r)?;
    let layers = read_layers(&mut r, &descriptor)?;
    r.finish()?;
    Ok((
        descriptor,
        TaskVector::from_layers(task_id, layers, Provenance { pre_hash, ft_hash }),
    ))
}

pub fn save_coefficients(cm: &CoefficientMatrix, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.header(KIND_COEFFICIENTS);
    w.u32(cm.task_count() as u32);
    w.u32(cm.layer_count() as u32);
    for id in cm.task_ids() {
        w.string(id);
    }
    for &v in cm.values() {
        w.f64(v);
    }
    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn load_coefficients(path: &Path) -> Result<CoefficientMatrix> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.header(KIND_COEFFICIENTS)?;
    let n = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(r.string()?);
    }
    let mut values = Vec::with_capacity(n * layer_count);
    for _ in 0..n * layer_count {
        values.push(r.f64()?);
    }
    r.finish()?;
    CoefficientMatrix::from_values(ids, layer_count, values)
}

fn write_descriptor(w: &mut Writer, d: &ArchitectureDescriptor) {
    w.u32(d.input_dim as u32);
    w.u32(d.hidden_dims.len() as u32);
    for &h in &d.hidden_dims {
        w.u32(h as u32);
    }
    w.u32(d.head_hidden_dim as u32);
    w.u32(d.template.len() as u32);
    for &t in &d.template {
        w.f64(t);
    }
    w.buf.push(d.activation.code());
    w.f64(d.dropout_rate);
}

fn read_descriptor(r: &mut Reader) -> Result<ArchitectureDescriptor> {
    let input_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    if n_hidden > 1024 {
        return Err(r.corrupt("implausible hidden layer count"));
    }
    let mut hidden_dims = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden_dims.push(r.u32()? as usize);
    }
    let head_hidden_dim = r.u32()? as usize;
    let n_template = r.u32()? as usize;
    let mut template = Vec::with_capacity(n_template.min(64));
    for _ in 0..n_template {
        template.push(r.f64()?);
    }
    let activation = Activation::from_code(r.byte()?)?;
    let dropout_rate = r.f64()?;
    let d = ArchitectureDescriptor {
        input_dim,
        hidden_dims,
        head_hidden_dim,
        template,
        activation,
        dropout_rate,
    };
    d.validate()
        .map_err(|e| Error::Format(format!("invalid stored descriptor: {e}")))?;
    Ok(d)
}

fn write_layers(w: &mut Writer, layers: &[LayerBlock]) {
    w.u32(layers.len() as u32);
    for block in layers {
        w.u32(block.out_dim() as u32);
        w.u32(block.in_dim() as u32);
        for &v in block.weight.data() {
            w.f64(v);
        }
        for &v in block.bias.data() {
            w.f64(v);
        }
    }
}

fn read_layers(r: &mut Reader, descriptor: &ArchitectureDescriptor) -> Result<Vec<LayerBlock>> {
    let count = r.u32()? as usize;
    let dims = descriptor.layer_dims();
    if count != dims.len() {
        return Err(r.corrupt(format!(
            "layer count {count} does not match descriptor ({})",
            dims.len()
        )));
    }
    let mut layers = Vec::with_capacity(count);
    for (l, &(out, inp)) in dims.iter().enumerate() {
        let stored_out = r.u32()? as usize;
        let stored_in = r.u32()? as usize;
        if stored_out != out || stored_in != inp {
            return Err(r.corrupt(format!(
                "layer {l} shape [{stored_out}, {stored_in}] does not match descriptor [{out}, {inp}]"
            )));
        }
        let mut wdata = Vec::with_capacity(out * inp);
        for _ in 0..out * inp {
            wdata.push(r.f64()?);
        }
        let mut bdata = Vec::with_capacity(out);
        for _ in 0..out {
            bdata.push(r.f64()?);
        }
        layers.push(LayerBlock {
            weight: Tensor::matrix(out, inp, wdata)
                .map_err(|e| r.corrupt(format!("layer {l} weight: {e}")))?,
            bias: Tensor::vector(bdata).map_err(|e| r.corrupt(format!("layer {l} bias: {e}")))?,
        });
    }
    Ok(layers)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn header(&mut self, kind: u8) {
        self.buf.extend_from_slice(MAGIC);
        self.buf.extend_from_slice(&VERSION.to_le_bytes());
        self.buf.push(kind);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &Path) -> Self {
        Self {
            buf,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn corrupt(&self, msg: impl std::fmt::Display) -> Error {
        Error::Format(format!("{}: {msg}", self.path))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn header(&mut self, expected_kind: u8) -> Result<()> {
        let magic = self.take(4)?;
        if magic != MAGIC {
            return Err(self.corrupt("not a checkpoint file (bad magic)"));
        }
        let version = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(self.corrupt(format!("unsupported format version {version}")));
        }
        let kind = self.byte()?;
        if kind != expected_kind {
            return Err(self.corrupt(format!(
                "record kind {} found, {} required",
                kind_name(kind),
                kind_name(expected_kind)
            )));
        }
        Ok(())
    }

    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return Err(self.corrupt("implausible string length"));
        }
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("invalid utf-8 string"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn kind_name(kind: u8) -> &'static str {
    match kind {
        KIND_PARAMS => "params",
        KIND_DELTA => "delta",
        KIND_COEFFICIENTS => "coefficients",
        _ => "unknown",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchitectureDescriptor;
    use crate::taskvec;

    fn desc() -> ArchitectureDescriptor {
        let mut d = ArchitectureDescriptor::new(5, vec![7], 4);
        d.dropout_rate = 0.25;
        d
    }

    #[test]
    fn params_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(desc(), 42).unwrap();
        let path = dir.path().join("m.ckpt");
        save_params(&p, "base", &path).unwrap();
        let (id, loaded) = load_params(&path).unwrap();
        assert_eq!(id, "base");
        assert!(p.bit_equal(&loaded));
        // Byte-stable writes.
        let bytes1 = std::fs::read(&path).unwrap();
        save_params(&p, "base", &path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn delta_round_trip_keeps_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let base = ModelParams::init(desc(), 1).unwrap();
        let ft = taskvec::canonicalize(&base, &ModelParams::init(desc(), 2).unwrap()).unwrap();
        let tv = taskvec::extract(&base, &ft, "dbA").unwrap();
        let path = dir.path().join("dbA.tv");
        save_task_vector(&tv, base.descriptor(), &path).unwrap();
        let (d, loaded) = load_task_vector(&path).unwrap();
        assert_eq!(&d, base.descriptor());
        assert_eq!(loaded.task_id, "dbA");
        assert_eq!(loaded.provenance, tv.provenance);
        assert!(loaded.bit_equal(&tv));
        assert_eq!(tv.provenance.pre_hash, params_hash(&base));
        assert_eq!(tv.provenance.ft_hash, params_hash(&ft));
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(desc(), 3).unwrap();
        let path = dir.path().join("m.ckpt");
        save_params(&p, "base", &path).unwrap();
        let err = load_task_vector(&path).unwrap_err();
        assert!(err.to_string().contains("params"), "{err}");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_params(&path), Err(Error::Format(_))));
        let p = ModelParams::init(desc(), 4).unwrap();
        save_params(&p, "base", &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Format(_))));
    }

    #[test]
    fn distinct_params_hash_differently() {
        let a = ModelParams::init(desc(), 5).unwrap();
        let b = ModelParams::init(desc(), 6).unwrap();
        assert_ne!(params_hash(&a), params_hash(&b));
        assert_eq!(params_hash(&a), params_hash(&a.clone()));
    }
}
