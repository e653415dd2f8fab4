//! Snapshot files: a text header `dim nx [ny] Lx [Ly] time` followed by the
//! cell values in row-major order. Files ending in `.bin` hold the same header
//! fields and values as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::field::ScalarField;
use super::grid::Grid;
use crate::error::{Error, Result};

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn header(grid: &Grid, time: f64) -> Vec<f64> {
    if grid.dim() == 1 {
        vec![1.0, grid.nx() as f64, grid.extent(0), time]
    } else {
        vec![2.0, grid.nx() as f64, grid.ny() as f64, grid.extent(0), grid.extent(1), time]
    }
}

pub fn encode_text(field: &ScalarField, time: f64) -> String {
    let g = field.grid();
    let mut s = String::with_capacity(24 * g.len() + 64);
    if g.dim() == 1 {
        s.push_str(&format!("1 {} {:e} {:e}\n", g.nx(), g.extent(0), time));
    } else {
        s.push_str(&format!("2 {} {} {:e} {:e} {:e}\n", g.nx(), g.ny(), g.extent(0), g.extent(1), time));
    }
    for row in field.values().chunks(g.nx()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn encode_binary(field: &ScalarField, time: f64) -> Vec<u8> {
    let head = header(field.grid(), time);
    let mut out = Vec::with_capacity(8 * (head.len() + field.values().len()));
    for v in head.iter().chain(field.values()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn grid_from_header(nums: &[f64]) -> Result<(Grid, f64, usize)> {
    let bad = |m: &str| Error::Format(m.to_string());
    let dim = *nums.first().ok_or_else(|| bad("empty header"))?;
    let as_count = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(bad("cell count must be a positive integer"))
        }
    };
    if dim == 1.0 {
        if nums.len() < 4 {
            return Err(bad("short 1D header"));
        }
        Ok((Grid::new_1d(nums[2], as_count(nums[1])?)?, nums[3], 4))
    } else if dim == 2.0 {
        if nums.len() < 6 {
            return Err(bad("short 2D header"));
        }
        let g = Grid::new_2d(nums[3], nums[4], as_count(nums[1])?, as_count(nums[2])?)?;
        Ok((g, nums[5], 6))
    } else {
        Err(bad("dimension must be 1 or 2"))
    }
}

pub fn decode_text(text: &str) -> Result<(ScalarField, f64)> {
    let mut lines = text.lines();
    let head_line = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
    let head: Vec<f64> = head_line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("header token `{t}`: {e}"))))
        .collect::<Result<_>>()?;
    let (grid, time, used) = grid_from_header(&head)?;
    if used != head.len() {
        return Err(Error::Format("unexpected tokens in header".into()));
    }
    let mut values = Vec::with_capacity(grid.len());
    for line in lines {
        for t in line.split_whitespace() {
            values.push(t.parse::<f64>().map_err(|e| Error::Format(format!("value `{t}`: {e}")))?);
        }
    }
    Ok((ScalarField::new(grid, values)?, time))
}

pub fn decode_binary(bytes: &[u8]) -> Result<(ScalarField, f64)> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format("binary length not a multiple of 8".into()));
    }
    let nums: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let (grid, time, used) = grid_from_header(&nums)?;
    Ok((ScalarField::new(grid, nums[used..].to_vec())?, time))
}

pub fn write_field(path: &Path, field: &ScalarField, time: f64) -> Result<()> {
    let mut f = fs::File::create(path)?;
    if is_binary(path) {
        f.write_all(&encode_binary(field, time))?;
    } else {
        f.write_all(encode_text(field, time).as_bytes())?;
    }
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(ScalarField, f64)> {
    if is_binary(path) {
        decode_binary(&fs::read(path)?)
    } else {
        decode_text(&fs::read_to_string(path)?)
    }
}
