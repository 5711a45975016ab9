//! Point-cloud and sampling-plan files.
//!
//! Clouds are either text (one `x y z` triple per line, `#` comments and
//! blank lines ignored) or raw little-endian `f32` triples, selected by a
//! `.bin` extension. Plans use the `PIDX` layout: magic, `u32` stage count,
//! then per stage `u32` rows, `u32` group size and the row-major `u32`
//! neighbor table.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::Context;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use pointode_core::{GroupIndex, PointCloud, SamplingPlan};

use crate::error::{eof_as, FormatError, FormatResult};

pub const PLAN_MAGIC: [u8; 4] = *b"PIDX";

pub fn parse_text_cloud(text: &str) -> FormatResult<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| FormatError::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|e| parse_err(format!("`{f}`: {e}")))?;
            if !slot.is_finite() {
                return Err(parse_err(format!("non-finite coordinate `{f}`")));
            }
        }
        points.push(p);
    }
    Ok(PointCloud::new(points)?)
}

pub fn parse_binary_cloud(bytes: &[u8]) -> FormatResult<PointCloud> {
    if bytes.len() % 12 != 0 {
        return Err(FormatError::Invalid(format!(
            "binary cloud is {} bytes, not a multiple of 12",
            bytes.len()
        )));
    }
    let mut floats = vec![0f32; bytes.len() / 4];
    (&bytes[..]).read_f32_into::<LittleEndian>(&mut floats)?;
    let points: Vec<[f64; 3]> = floats
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(FormatError::Invalid(format!("point {i} has a non-finite coordinate")));
    }
    Ok(PointCloud::new(points)?)
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bin"))
}

pub fn read_cloud(path: &Path) -> anyhow::Result<PointCloud> {
    let cloud = if is_binary(path) {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        parse_binary_cloud(&bytes)
    } else {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        parse_text_cloud(&text)
    };
    cloud.with_context(|| format!("parsing point cloud {}", path.display()))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> anyhow::Result<()> {
    let mut out = Vec::new();
    if is_binary(path) {
        for p in cloud.points() {
            for &c in p {
                out.write_f32::<LittleEndian>(c as f32)?;
            }
        }
    } else {
        for p in cloud.points() {
            writeln!(out, "{} {} {}", p[0], p[1], p[2])?;
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_plan<W: Write>(mut w: W, plan: &SamplingPlan) -> FormatResult<()> {
    w.write_all(&PLAN_MAGIC)?;
    w.write_u32::<LittleEndian>(plan.stages().len() as u32)?;
    for g in plan.stages() {
        w.write_u32::<LittleEndian>(g.rows() as u32)?;
        w.write_u32::<LittleEndian>(g.k() as u32)?;
        for &i in g.table() {
            w.write_u32::<LittleEndian>(i as u32)?;
        }
    }
    Ok(())
}

/// Reads a plan for a cloud of `n_points`. Each stage's indices refer to the
/// previous stage's rows, so the parent sizes are chained from `n_points`.
pub fn read_plan<R: Read>(mut r: R, n_points: usize) -> FormatResult<SamplingPlan> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as("plan magic"))?;
    if magic != PLAN_MAGIC {
        return Err(FormatError::BadMagic {
            expected: PLAN_MAGIC,
            found: magic,
        });
    }
    let count = r.read_u32::<LittleEndian>().map_err(eof_as("plan stage count"))? as usize;
    if count != 4 {
        return Err(FormatError::Invalid(format!("plan has {count} stages, expected 4")));
    }
    let mut stages = Vec::with_capacity(count);
    let mut parent = n_points;
    for s in 0..count {
        let rows = r.read_u32::<LittleEndian>().map_err(eof_as(format!("stage {} header", s + 1)))? as usize;
        let k = r.read_u32::<LittleEndian>().map_err(eof_as(format!("stage {} header", s + 1)))? as usize;
        let len = rows
            .checked_mul(k)
            .filter(|&l| l <= parent.saturating_mul(k))
            .ok_or_else(|| FormatError::Invalid(format!("stage {} claims {rows} x {k} entries", s + 1)))?;
        let mut raw = vec![0u32; len];
        r.read_u32_into::<LittleEndian>(&mut raw)
            .map_err(eof_as(format!("stage {} indices", s + 1)))?;
        let ids = raw.into_iter().map(|v| v as usize).collect();
        stages.push(GroupIndex::from_table(parent, k, ids)?);
        parent = rows;
    }
    Ok(SamplingPlan::from_stages(stages)?)
}

pub fn read_plan_file(path: &Path, n_points: usize) -> anyhow::Result<SamplingPlan> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_plan(std::io::BufReader::new(file), n_points).with_context(|| format!("reading plan {}", path.display()))
}
