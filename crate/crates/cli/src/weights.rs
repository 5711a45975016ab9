//! `PODE` weight files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "PODE"  u32 version (= 1)
//! config: u8 variant, u8 norm mode, u8 reordered, u8 reserved,
//!         u32 embed width, 4 x u32 stage widths, u32 bottleneck ratio,
//!         u32 group size, u32 ODE iterations, f64 t_start, f64 t_end,
//!         u32 classes, u32 head depth, head depth x u32 head widths
//! records until EOF:
//!         u16 name length, name (UTF-8), u8 dtype (0 = f32), u8 rank,
//!         rank x u32 dims, row-major f32 payload
//! ```
//!
//! Batch norms may be stored folded (`<bn>.scale`, `<bn>.offset`) or as the
//! raw `<bn>.weight`, `<bn>.bias`, `<bn>.running_mean`, `<bn>.running_var`
//! quadruple, which is folded on load.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::Context;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use pointode_core::model::{ModelConfig, ModelParams, NormMode, TensorRole, TensorSpec, Variant};
use pointode_core::nn::BnParams;

use crate::error::{eof_as, FormatError, FormatResult};

pub const MAGIC: [u8; 4] = *b"PODE";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
/// Variance guard used when folding raw batch-norm statistics.
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_config<W: Write>(w: &mut W, c: &ModelConfig) -> FormatResult<()> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(c.variant.code())?;
    w.write_u8(c.norm_mode.code())?;
    w.write_u8(u8::from(c.reordered))?;
    w.write_u8(0)?;
    let u32s = [c.embed_dim]
        .into_iter()
        .chain(c.stage_dims)
        .chain([c.bottleneck_ratio, c.group_size, c.ode_iterations]);
    for v in u32s {
        w.write_u32::<LittleEndian>(to_u32(v)?)?;
    }
    w.write_f64::<LittleEndian>(c.t_start)?;
    w.write_f64::<LittleEndian>(c.t_end)?;
    w.write_u32::<LittleEndian>(to_u32(c.num_classes)?)?;
    w.write_u32::<LittleEndian>(to_u32(c.head_dims.len())?)?;
    for &d in &c.head_dims {
        w.write_u32::<LittleEndian>(to_u32(d)?)?;
    }
    Ok(())
}

fn to_u32(v: usize) -> FormatResult<u32> {
    u32::try_from(v).map_err(|_| FormatError::Invalid(format!("{v} does not fit in u32")))
}

pub fn read_config<R: Read>(r: &mut R) -> FormatResult<ModelConfig> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as("weight magic"))?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof_as("weight version"))?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let eof = || eof_as("model configuration");
    let variant_code = r.read_u8().map_err(eof())?;
    let norm_code = r.read_u8().map_err(eof())?;
    let reordered = r.read_u8().map_err(eof())?;
    let _reserved = r.read_u8().map_err(eof())?;
    let mut u = [0u32; 8];
    r.read_u32_into::<LittleEndian>(&mut u).map_err(eof())?;
    let t_start = r.read_f64::<LittleEndian>().map_err(eof())?;
    let t_end = r.read_f64::<LittleEndian>().map_err(eof())?;
    let num_classes = r.read_u32::<LittleEndian>().map_err(eof())? as usize;
    let depth = r.read_u32::<LittleEndian>().map_err(eof())? as usize;
    if depth > 64 {
        return Err(FormatError::Invalid(format!("head depth {depth} is implausible")));
    }
    let mut head = vec![0u32; depth];
    r.read_u32_into::<LittleEndian>(&mut head).map_err(eof())?;

    let variant = Variant::from_code(variant_code)
        .ok_or_else(|| FormatError::Invalid(format!("unknown variant code {variant_code}")))?;
    let norm_mode =
        NormMode::from_code(norm_code).ok_or_else(|| FormatError::Invalid(format!("unknown norm mode {norm_code}")))?;
    if reordered > 1 {
        return Err(FormatError::Invalid(format!("reordered flag is {reordered}")));
    }
    let config = ModelConfig {
        variant,
        norm_mode,
        reordered: reordered == 1,
        embed_dim: u[0] as usize,
        stage_dims: [u[1], u[2], u[3], u[4]].map(|v| v as usize),
        bottleneck_ratio: u[5] as usize,
        group_size: u[6] as usize,
        ode_iterations: u[7] as usize,
        t_start,
        t_end,
        num_classes,
        head_dims: head.into_iter().map(|v| v as usize).collect(),
    };
    config.validate()?;
    Ok(config)
}

pub fn write_record<W: Write>(w: &mut W, rec: &TensorRecord) -> FormatResult<()> {
    let name = rec.name.as_bytes();
    let len = u16::try_from(name.len()).map_err(|_| FormatError::Invalid(format!("tensor name `{}` too long", rec.name)))?;
    w.write_u16::<LittleEndian>(len)?;
    w.write_all(name)?;
    w.write_u8(DTYPE_F32)?;
    w.write_u8(rec.dims.len() as u8)?;
    for &d in &rec.dims {
        w.write_u32::<LittleEndian>(to_u32(d)?)?;
    }
    for &v in &rec.data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Reads one record, or `None` at a clean end of file.
pub fn read_record<R: Read>(r: &mut R) -> FormatResult<Option<TensorRecord>> {
    let mut len_bytes = [0u8; 2];
    let got = read_fully(r, &mut len_bytes)?;
    if got == 0 {
        return Ok(None);
    }
    if got < 2 {
        return Err(FormatError::Truncated("tensor name length".into()));
    }
    let mut name = vec![0u8; u16::from_le_bytes(len_bytes) as usize];
    r.read_exact(&mut name).map_err(eof_as("tensor name"))?;
    let name = String::from_utf8(name).map_err(|_| FormatError::Invalid("tensor name is not UTF-8".into()))?;
    let dtype = r.read_u8().map_err(eof_as(format!("header of `{name}`")))?;
    if dtype != DTYPE_F32 {
        return Err(FormatError::Dtype { name, dtype });
    }
    let rank = r.read_u8().map_err(eof_as(format!("header of `{name}`")))? as usize;
    let mut dims = vec![0u32; rank];
    r.read_u32_into::<LittleEndian>(&mut dims)
        .map_err(eof_as(format!("dims of `{name}`")))?;
    let dims: Vec<usize> = dims.into_iter().map(|d| d as usize).collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| FormatError::Invalid(format!("tensor `{name}` dims {dims:?} are implausible")))?;
    let mut data = vec![0f32; numel];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(eof_as(format!("payload of `{name}`")))?;
    Ok(Some(TensorRecord { name, dims, data }))
}

/// Like `read_exact`, but reports how many bytes arrived before EOF.
fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> FormatResult<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn write_weights<W: Write>(mut w: W, params: &ModelParams<f64>) -> FormatResult<()> {
    write_config(&mut w, &params.config)?;
    for (spec, data) in params.tensors() {
        write_record(
            &mut w,
            &TensorRecord {
                name: spec.name,
                dims: spec.shape,
                data: data.iter().map(|&v| v as f32).collect(),
            },
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> FormatResult<ModelParams<f64>> {
    let config = read_config(&mut r)?;
    let mut records: HashMap<String, TensorRecord> = HashMap::new();
    while let Some(rec) = read_record(&mut r)? {
        if records.contains_key(&rec.name) {
            return Err(FormatError::Duplicate(rec.name));
        }
        records.insert(rec.name.clone(), rec);
    }
    let mut folded: HashMap<String, Vec<f64>> = HashMap::new();
    let params = ModelParams::assemble(&config, |spec| take_tensor(spec, &mut records, &mut folded))?;
    if let Some(name) = records.keys().min() {
        return Err(FormatError::Unexpected(name.clone()));
    }
    Ok(params)
}

fn shape_error(spec: &TensorSpec, got: Vec<usize>) -> pointode_core::Error {
    pointode_core::Error::ShapeMismatch {
        name: spec.name.clone(),
        expected: spec.shape.clone(),
        got,
    }
}

fn take_tensor(
    spec: &TensorSpec,
    records: &mut HashMap<String, TensorRecord>,
    folded: &mut HashMap<String, Vec<f64>>,
) -> pointode_core::Result<Vec<f64>> {
    if let Some(rec) = records.remove(&spec.name) {
        if rec.dims != spec.shape {
            return Err(shape_error(spec, rec.dims));
        }
        return Ok(rec.data.into_iter().map(f64::from).collect());
    }
    if let Some(v) = folded.remove(&spec.name) {
        return Ok(v);
    }
    let prefix = match spec.role {
        TensorRole::BnScale => spec.name.strip_suffix(".scale"),
        TensorRole::BnOffset => spec.name.strip_suffix(".offset"),
        _ => None,
    };
    let Some(prefix) = prefix else {
        return Err(pointode_core::Error::MissingTensor(spec.name.clone()));
    };
    let mut raw = Vec::with_capacity(4);
    for part in ["running_mean", "running_var", "weight", "bias"] {
        let name = format!("{prefix}.{part}");
        let rec = records
            .remove(&name)
            .ok_or_else(|| pointode_core::Error::MissingTensor(spec.name.clone()))?;
        if rec.dims != spec.shape {
            return Err(pointode_core::Error::ShapeMismatch {
                name,
                expected: spec.shape.clone(),
                got: rec.dims,
            });
        }
        raw.push(rec.data.into_iter().map(f64::from).collect::<Vec<_>>());
    }
    let bn = BnParams::fold(&raw[0], &raw[1], &raw[2], &raw[3], BN_EPSILON)?;
    let (this, other, other_name) = match spec.role {
        TensorRole::BnScale => (bn.scale, bn.offset, format!("{prefix}.offset")),
        _ => (bn.offset, bn.scale, format!("{prefix}.scale")),
    };
    folded.insert(other_name, other);
    Ok(this)
}

pub fn save_weights(path: &Path, params: &ModelParams<f64>) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_weights(BufWriter::new(file), params).with_context(|| format!("writing {}", path.display()))
}

pub fn load_weights(path: &Path) -> anyhow::Result<ModelParams<f64>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_weights(BufReader::new(file)).with_context(|| format!("loading weights {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            stage_dims: [4, 8, 8, 8],
            group_size: 2,
            num_classes: 3,
            head_dims: vec![5],
            ..ModelConfig::elite()
        }
    }

    fn encoded(params: &ModelParams<f64>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_weights(&mut buf, params).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let params = ModelParams::build(&small(), 3).unwrap();
        let as_f32 = params.tensors();
        let back = read_weights(&encoded(&params)[..]).unwrap();
        assert_eq!(back.config, params.config);
        for ((spec, a), (_, b)) in as_f32.iter().zip(back.tensors()) {
            let a32: Vec<f64> = a.iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(a32, b, "{}", spec.name);
        }
    }

    #[test]
    fn header_errors_are_distinct() {
        let params = ModelParams::build(&small(), 3).unwrap();
        let buf = encoded(&params);
        let mut bad = buf.clone();
        bad[..4].copy_from_slice(b"NOPE");
        assert!(matches!(read_weights(&bad[..]), Err(FormatError::BadMagic { .. })));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_weights(&bad[..]), Err(FormatError::Version(2))));
        assert!(matches!(read_weights(&buf[..20]), Err(FormatError::Truncated(_))));
        let e = read_weights(&buf[..buf.len() - 1]).unwrap_err();
        assert!(matches!(&e, FormatError::Truncated(w) if w.contains("head.out.bias")), "{e}");
    }

    #[test]
    fn raw_batch_norm_is_folded() {
        let cfg = small();
        let params = ModelParams::build(&cfg, 5).unwrap();
        let mut buf = Vec::new();
        write_config(&mut buf, &cfg).unwrap();
        for (spec, data) in params.tensors() {
            if spec.name == "embed.bn.scale" || spec.name == "embed.bn.offset" {
                continue;
            }
            let data = data.iter().map(|&v| v as f32).collect();
            write_record(&mut buf, &TensorRecord { name: spec.name, dims: spec.shape, data }).unwrap();
        }
        let n = cfg.embed_dim;
        for (part, v) in [("running_mean", 1.0f32), ("running_var", 3.0), ("weight", 2.0), ("bias", 0.5)] {
            let rec = TensorRecord {
                name: format!("embed.bn.{part}"),
                dims: vec![n],
                data: vec![v; n],
            };
            write_record(&mut buf, &rec).unwrap();
        }
        let back = read_weights(&buf[..]).unwrap();
        let g = 2.0 / (3.0f64 + BN_EPSILON).sqrt();
        assert!(back.embedding.bn.scale.iter().all(|&s| (s - g).abs() < 1e-12));
        assert!(back.embedding.bn.offset.iter().all(|&o| (o - (0.5 - g)).abs() < 1e-12));
    }
}
