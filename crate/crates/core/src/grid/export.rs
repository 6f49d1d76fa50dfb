//! Field export: CSV and raw little-endian complex blobs behind a one-line JSON header.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FormField, Grid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawPrecision {
    Complex64,
    Complex128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub n: usize,
    #[serde(rename = "R")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub points_per_axis: usize,
    pub degree: usize,
    pub precision: RawPrecision,
}

/// One row per grid point: axis indices, then `re_c, im_c` per component.
pub fn write_csv(field: &FormField, out: &mut impl Write) -> Result<()> {
    let g = field.grid();
    let axis_names = ["i_x1", "i_y1", "i_x2", "i_y2"];
    let mut header: Vec<String> = axis_names[..g.axes()].iter().map(|s| s.to_string()).collect();
    for c in 0..field.components() {
        header.push(format!("re_{c}"));
        header.push(format!("im_{c}"));
    }
    writeln!(out, "{}", header.join(","))?;
    for idx in 0..g.len() {
        let m = g.multi_index(idx);
        let mut row: Vec<String> = m[..g.axes()].iter().map(|i| i.to_string()).collect();
        for c in 0..field.components() {
            let v = field.at(c, idx);
            row.push(format!("{:e}", v.re));
            row.push(format!("{:e}", v.im));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_raw(field: &FormField, precision: RawPrecision, out: &mut impl Write) -> Result<()> {
    let g = field.grid();
    let header = RawHeader {
        n: g.dim(),
        half_width: g.half_width(),
        points_per_axis: g.points_per_axis(),
        degree: field.degree(),
        precision,
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::Io(e.into()))?;
    writeln!(out, "{json}")?;
    for v in field.data() {
        match precision {
            RawPrecision::Complex64 => {
                out.write_all(&(v.re as f32).to_le_bytes())?;
                out.write_all(&(v.im as f32).to_le_bytes())?;
            }
            RawPrecision::Complex128 => {
                out.write_all(&v.re.to_le_bytes())?;
                out.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_raw(input: &mut impl BufRead) -> Result<FormField> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: RawHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Shape(format!("bad raw header: {e}")))?;
    let grid = Grid::new(header.n, header.half_width, header.points_per_axis)?;
    let count = grid.components(header.degree) * grid.len();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = match header.precision {
            RawPrecision::Complex64 => {
                let mut b = [0u8; 8];
                input.read_exact(&mut b)?;
                Complex64::new(
                    f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(b[4..].try_into().unwrap()) as f64,
                )
            }
            RawPrecision::Complex128 => {
                let mut b = [0u8; 16];
                input.read_exact(&mut b)?;
                Complex64::new(
                    f64::from_le_bytes(b[..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..].try_into().unwrap()),
                )
            }
        };
        data.push(v);
    }
    FormField::from_data(grid, header.degree, data)
}
