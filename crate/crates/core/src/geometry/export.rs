//! Plain-text polytope exchange format.
//!
//! ```text
//! <dim> <k>
//! a_1 ... a_dim b        (k lines)
//! ```
//!
//! Coefficients are written in scientific notation with 17 significant
//! digits. An empty set is written as its canonical contradictory pair, the
//! whole space as `k = 0`.
//!
//! For planar sets a companion vertex loop can be written as two columns
//! `x,y`, closed by repeating the first vertex.

use std::fmt::Write as _;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::{GeometryError, Polytope};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("malformed polytope text at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn to_text(p: &Polytope) -> String {
    let mut s = String::new();
    writeln!(s, "{} {}", p.dim(), p.num_rows()).unwrap();
    for k in 0..p.num_rows() {
        let mut fields: Vec<String> = p.normals().row(k).iter().map(|v| format!("{v:.16e}")).collect();
        fields.push(format!("{:.16e}", p.offsets()[k]));
        writeln!(s, "{}", fields.join(" ")).unwrap();
    }
    s
}

pub fn write_polytope<W: Write>(mut w: W, p: &Polytope) -> io::Result<()> {
    w.write_all(to_text(p).as_bytes())
}

pub fn from_text(text: &str) -> Result<Polytope, ExportError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(ExportError::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| ExportError::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
    let [dim, k] = head[..] else {
        return Err(ExportError::Parse {
            line: 1,
            msg: "header must be `dim k`".into(),
        });
    };
    let mut a = DMatrix::zeros(k, dim);
    let mut b = DVector::zeros(k);
    for r in 0..k {
        let (idx, line) = lines.next().ok_or(ExportError::Parse {
            line: r + 2,
            msg: format!("expected {k} rows"),
        })?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ExportError::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        if vals.len() != dim + 1 {
            return Err(ExportError::Parse {
                line: idx + 1,
                msg: format!("expected {} numbers, found {}", dim + 1, vals.len()),
            });
        }
        for j in 0..dim {
            a[(r, j)] = vals[j];
        }
        b[r] = vals[dim];
    }
    Ok(Polytope::new(a, b)?)
}

/// Closed vertex loop of a planar set as `x,y` lines with a header.
pub fn vertex_loop_csv(p: &Polytope) -> Result<String, ExportError> {
    let verts = p.vertices_2d()?;
    let mut s = String::from("x,y\n");
    for v in verts.iter().chain(verts.first()) {
        writeln!(s, "{:.16e},{:.16e}", v[0], v[1]).unwrap();
    }
    Ok(s)
}
