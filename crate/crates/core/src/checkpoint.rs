//! WGCK checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "WGCK" (4 bytes)
//! format version   u32
//! epsilon          f64
//! width multiplier f64
//! tensor count     u32
//! per tensor:
//!   name length    u16, then UTF-8 name bytes
//!   rank           u8
//!   dims           u32 * rank
//!   payload        f32 * product(dims)
//! ```
//!
//! Learnable tensors appear first in a fixed census order. Provenance
//! values that are not learnable (seed, trained input size) ride along as
//! trailing `meta/...` tensors whose f32 payloads carry u32 bit patterns;
//! loaders ignore unknown meta entries. Parameters are kept exactly
//! f32-representable in memory, so save/load round trips are bit-exact.

use std::path::Path;

use crate::generator::{parameter_census, Generator};
use crate::nn::ParamTensor;
use crate::surrogate::SurrogateEncoder;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"WGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct RawTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub payload: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct WgckFile {
    pub epsilon: f64,
    pub width_multiplier: f64,
    pub tensors: Vec<RawTensor>,
}

impl WgckFile {
    pub fn tensor(&self, name: &str) -> Option<&RawTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn meta_u32s(&self, name: &str) -> Option<Vec<u32>> {
        self.tensor(name)
            .map(|t| t.payload.iter().map(|v| v.to_bits()).collect())
    }
}

fn put_meta(tensors: &mut Vec<RawTensor>, name: &str, values: &[u32]) {
    tensors.push(RawTensor {
        name: name.to_string(),
        dims: vec![values.len()],
        payload: values.iter().map(|&v| f32::from_bits(v)).collect(),
    });
}

pub fn write_wgck(
    path: impl AsRef<Path>,
    epsilon: f64,
    width_multiplier: f64,
    tensors: &[RawTensor],
) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&epsilon.to_le_bytes());
    buf.extend_from_slice(&width_multiplier.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("tensor name too long: {}", t.name)));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        if t.dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!("tensor rank too large: {}", t.name)));
        }
        buf.push(t.dims.len() as u8);
        let mut n = 1usize;
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
            n *= d;
        }
        if n != t.payload.len() {
            return Err(Error::Format(format!(
                "tensor {} payload length {} does not match dims {:?}",
                t.name,
                t.payload.len(),
                t.dims
            )));
        }
        for &v in &t.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(
                "truncated checkpoint: unexpected end of file".into(),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_wgck(path: impl AsRef<Path>) -> Result<WgckFile> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a WGCK checkpoint",
            path.display()
        )));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let epsilon = c.f64()?;
    let width_multiplier = c.f64()?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = c.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut n = 1usize;
        for _ in 0..rank {
            let d = c.u32()? as usize;
            dims.push(d);
            n = n.saturating_mul(d);
        }
        let bytes = c.take(4 * n)?;
        let payload = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(RawTensor { name, dims, payload });
    }
    if c.pos != buf.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after tensor table",
            path.display(),
            buf.len() - c.pos
        )));
    }
    Ok(WgckFile {
        epsilon,
        width_multiplier,
        tensors,
    })
}

fn raw_from_param(name: &str, p: &ParamTensor) -> RawTensor {
    RawTensor {
        name: name.to_string(),
        dims: p.dims.clone(),
        payload: p.data.iter().map(|&v| v as f32).collect(),
    }
}

/// Validates a tensor table against an expected census. Name problems are
/// format errors; dimension problems are incompatibility errors naming the
/// first offending tensor.
fn validate_census(
    tensors: &[RawTensor],
    census: &[(String, Vec<usize>)],
    what: &str,
) -> Result<()> {
    for (i, (name, dims)) in census.iter().enumerate() {
        let Some(t) = tensors.get(i) else {
            return Err(Error::Format(format!(
                "{what}: missing tensor {name}"
            )));
        };
        if &t.name != name {
            return Err(Error::Format(format!(
                "{what}: expected tensor {name} at position {i}, found {}",
                t.name
            )));
        }
        if &t.dims != dims {
            return Err(Error::Incompatibility(format!(
                "{what}: tensor {name} has dims {:?}, expected {dims:?}",
                t.dims
            )));
        }
    }
    for t in &tensors[census.len()..] {
        if !t.name.starts_with("meta/") {
            return Err(Error::Format(format!(
                "{what}: unexpected non-meta tensor {} after census",
                t.name
            )));
        }
    }
    Ok(())
}

pub fn save_generator(gen: &Generator, path: impl AsRef<Path>) -> Result<()> {
    let mut tensors: Vec<RawTensor> = gen
        .named_tensors()
        .into_iter()
        .map(|(name, p)| raw_from_param(&name, p))
        .collect();
    put_meta(
        &mut tensors,
        "meta/seed",
        &[gen.seed as u32, (gen.seed >> 32) as u32],
    );
    put_meta(
        &mut tensors,
        "meta/input_size",
        &[gen.input_size.0 as u32, gen.input_size.1 as u32],
    );
    write_wgck(path, gen.epsilon, gen.width_multiplier, &tensors)
}

pub fn load_generator(path: impl AsRef<Path>) -> Result<Generator> {
    let file = read_wgck(&path)?;
    generator_from_file(&file)
}

/// Loads a generator while requiring a particular width multiplier, for
/// callers whose configuration fixes the architecture up front.
pub fn load_generator_expecting(path: impl AsRef<Path>, width_multiplier: f64) -> Result<Generator> {
    let file = read_wgck(&path)?;
    if file.width_multiplier != width_multiplier {
        // Name the first tensor whose shape disagrees with the requested plan.
        let expected = parameter_census(width_multiplier);
        for (i, (name, dims)) in expected.iter().enumerate() {
            match file.tensors.get(i) {
                Some(t) if t.name == *name && t.dims == *dims => continue,
                Some(t) => {
                    return Err(Error::Incompatibility(format!(
                        "checkpoint width {} does not fit requested width {width_multiplier}: tensor {name} has dims {:?}, expected {dims:?}",
                        file.width_multiplier, t.dims
                    )))
                }
                None => {
                    return Err(Error::Incompatibility(format!(
                        "checkpoint width {} does not fit requested width {width_multiplier}: tensor {name} missing",
                        file.width_multiplier
                    )))
                }
            }
        }
        return Err(Error::Incompatibility(format!(
            "checkpoint width multiplier {} does not match requested {width_multiplier}",
            file.width_multiplier
        )));
    }
    generator_from_file(&file)
}

fn generator_from_file(file: &WgckFile) -> Result<Generator> {
    let census = parameter_census(file.width_multiplier);
    validate_census(&file.tensors, &census, "generator checkpoint")?;
    let seed = file
        .meta_u32s("meta/seed")
        .filter(|v| v.len() == 2)
        .map(|v| v[0] as u64 | ((v[1] as u64) << 32))
        .unwrap_or(0);
    let input_size = file
        .meta_u32s("meta/input_size")
        .filter(|v| v.len() == 2)
        .map(|v| (v[0] as usize, v[1] as usize))
        .unwrap_or((0, 0));
    if !(file.epsilon > 0.0 && file.epsilon <= 1.0) {
        return Err(Error::Format(format!(
            "generator checkpoint has epsilon {} outside (0, 1]",
            file.epsilon
        )));
    }
    let mut gen = Generator::new(file.width_multiplier, file.epsilon, input_size, seed)?;
    for (layer, chunk) in gen.layers.iter_mut().zip(file.tensors.chunks(2)) {
        layer.weight.data = chunk[0].payload.iter().map(|&v| v as f64).collect();
        layer.bias.data = chunk[1].payload.iter().map(|&v| v as f64).collect();
    }
    for (layer, name) in gen.layers.iter().zip(crate::generator::LAYER_NAMES) {
        if !layer.weight.all_finite() || !layer.bias.all_finite() {
            return Err(Error::Format(format!(
                "generator checkpoint has non-finite values in {name}"
            )));
        }
    }
    Ok(gen)
}

pub fn save_surrogate(enc: &SurrogateEncoder, path: impl AsRef<Path>) -> Result<()> {
    let mut tensors: Vec<RawTensor> = enc
        .named_tensors()
        .into_iter()
        .map(|(name, p)| raw_from_param(&name, p))
        .collect();
    put_meta(
        &mut tensors,
        "meta/seed",
        &[enc.seed as u32, (enc.seed >> 32) as u32],
    );
    write_wgck(path, 0.0, 1.0, &tensors)
}

pub fn load_surrogate(path: impl AsRef<Path>) -> Result<SurrogateEncoder> {
    let file = read_wgck(&path)?;
    let census = crate::surrogate::parameter_census();
    validate_census(&file.tensors, &census, "surrogate checkpoint")?;
    let seed = file
        .meta_u32s("meta/seed")
        .filter(|v| v.len() == 2)
        .map(|v| v[0] as u64 | ((v[1] as u64) << 32))
        .unwrap_or(0);
    let mut enc = SurrogateEncoder::new(seed);
    for (layer, chunk) in enc.layers_mut().iter_mut().zip(file.tensors.chunks(2)) {
        layer.weight.data = chunk[0].payload.iter().map(|&v| v as f64).collect();
        layer.bias.data = chunk[1].payload.iter().map(|&v| v as f64).collect();
    }
    for (name, p) in enc.named_tensors() {
        if !p.all_finite() {
            return Err(Error::Format(format!(
                "surrogate checkpoint has non-finite values in {name}"
            )));
        }
    }
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::DEFAULT_EPSILON;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn generator_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.wgck");
        let mut gen = Generator::new(0.125, DEFAULT_EPSILON, (64, 64), 42).unwrap();
        gen.randomize_all(5);
        save_generator(&gen, &path).unwrap();
        let loaded = load_generator(&path).unwrap();
        assert_eq!(loaded.epsilon, gen.epsilon);
        assert_eq!(loaded.width_multiplier, gen.width_multiplier);
        assert_eq!(loaded.seed, gen.seed);
        assert_eq!(loaded.input_size, gen.input_size);
        for ((_, a), (_, b)) in gen.named_tensors().iter().zip(loaded.named_tensors()) {
            assert_eq!(a.data, b.data);
        }
        // Bit-identical forwards on the same input.
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let x = Tensor::from_vec(3, 16, 16, (0..768).map(|_| rng.gen_range(0.0..1.0)).collect());
        let t = crate::imagecore::make_default_target(16, 16).unwrap();
        let (a1, d1, _) = gen.forward(&x, &t).unwrap();
        let (a2, d2, _) = loaded.forward(&x, &t).unwrap();
        assert_eq!(a1.data, a2.data);
        assert_eq!(d1.data, d2.data);
    }

    #[test]
    fn save_is_deterministic_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.wgck");
        let p2 = dir.path().join("b.wgck");
        let gen = Generator::new(0.25, DEFAULT_EPSILON, (32, 32), 7).unwrap();
        save_generator(&gen, &p1).unwrap();
        save_generator(&gen, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wgck");
        let gen = Generator::new(0.125, DEFAULT_EPSILON, (16, 16), 1).unwrap();
        save_generator(&gen, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_generator(&path), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wgck");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(read_wgck(&path), Err(Error::Format(_))));
    }

    #[test]
    fn width_mismatch_names_first_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.wgck");
        let gen = Generator::new(0.125, DEFAULT_EPSILON, (16, 16), 42).unwrap();
        save_generator(&gen, &path).unwrap();
        let err = load_generator_expecting(&path, 1.0).unwrap_err();
        match err {
            Error::Incompatibility(msg) => assert!(msg.contains("enc1.weight"), "{msg}"),
            other => panic!("expected incompatibility, got {other:?}"),
        }
        // Matching width load stays fine.
        assert!(load_generator_expecting(&path, 0.125).is_ok());
    }

    #[test]
    fn surrogate_round_trip_identical_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wgck");
        let enc = SurrogateEncoder::new(42);
        save_surrogate(&enc, &path).unwrap();
        let loaded = load_surrogate(&path).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = Tensor::from_vec(3, 32, 32, (0..3072).map(|_| rng.gen_range(0.0..1.0)).collect());
        let a = enc.encode(&x).unwrap();
        let b = loaded.encode(&x).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(loaded.seed, 42);
    }

    #[test]
    fn surrogate_wrong_shape_is_incompatibility() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wgck");
        let enc = SurrogateEncoder::new(42);
        let mut tensors: Vec<RawTensor> = enc
            .named_tensors()
            .into_iter()
            .map(|(name, p)| raw_from_param(&name, p))
            .collect();
        // Corrupt the latent head: wrong output channel count.
        let head = tensors.last_mut().unwrap();
        head.dims = vec![8];
        head.payload = vec![0.0; 8];
        write_wgck(&path, 0.0, 1.0, &tensors).unwrap();
        assert!(matches!(
            load_surrogate(&path),
            Err(Error::Incompatibility(_))
        ));
    }

    #[test]
    fn surrogate_missing_tensor_is_format_error_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.wgck");
        let enc = SurrogateEncoder::new(42);
        let mut tensors: Vec<RawTensor> = enc
            .named_tensors()
            .into_iter()
            .map(|(name, p)| raw_from_param(&name, p))
            .collect();
        tensors.pop();
        write_wgck(&path, 0.0, 1.0, &tensors).unwrap();
        match load_surrogate(&path).unwrap_err() {
            Error::Format(msg) => assert!(msg.contains("head.bias"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
