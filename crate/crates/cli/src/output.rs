//! Feature-matrix output: raw row-major `f32`, or CSV with a header row when
//! the path ends in `.csv`.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use byteorder::{LittleEndian, WriteBytesExt};
use pointode_core::Matrix;

pub fn encode_raw(m: &Matrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.as_slice().len() * 4);
    for &v in m.as_slice() {
        out.write_f32::<LittleEndian>(v as f32).expect("writing to a Vec cannot fail");
    }
    out
}

pub fn encode_csv(m: &Matrix<f64>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..m.cols()).map(|c| format!("f{c}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in m.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_features(path: &Path, m: &Matrix<f64>) -> anyhow::Result<()> {
    let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let bytes = if csv { encode_csv(m).into_bytes() } else { encode_raw(m) };
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&bytes).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings() {
        let m = Matrix::new(2, 2, vec![1.0, -0.5, 0.25, 3.0]).unwrap();
        assert_eq!(encode_csv(&m), "f0,f1\n1,-0.5\n0.25,3\n");
        let raw = encode_raw(&m);
        assert_eq!(raw.len(), 16);
        assert_eq!(&raw[4..8], &(-0.5f32).to_le_bytes());
    }
}
