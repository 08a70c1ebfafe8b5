//! Columnar text serialization for paths and their lifts.
//!
//! The format exists for golden-file and reproducibility tests, so it
//! optimizes for stability and exactness, not size: line-oriented,
//! space-separated columns, floats printed in Rust's shortest
//! round-trip form (parsing reproduces the exact bits that were
//! written).  Two block types:
//!
//! ```text
//! path v1                         roughpath v1
//! dim 2                           dim 2
//! nodes 3                         nodes 3
//! t x…                            exponents α β γ
//! 0 0.1 -0.3                      geometric true
//! …                               t x… sig1… sig2… sig3…
//!                                 0 0.1 -0.3 0 0 0 0 0 0 …
//!                                 …
//! ```
//!
//! A rough-path row carries the node time, the node value, and the
//! signature blocks of the cell *ending* at that node (levels 1–3,
//! row-major flattening); the first row's blocks are zero padding.
//! Reading reconstructs through the checked constructors, so a
//! hand-edited file with inconsistent increments or grids is rejected
//! rather than materialized.

use thiserror::Error;

use crate::algebra::{AlgebraError, PiecewiseLinearPath, TruncatedTensor};
use crate::roughpath::{GeometricCheck, HolderExponents, RoughPath, RoughPathError};

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    RoughPath(#[from] RoughPathError),
}

fn fmt_row(out: &mut String, floats: &[f64]) {
    for (i, x) in floats.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{x}"));
    }
    out.push('\n');
}

/// Render a piecewise-linear path.
pub fn write_path(path: &PiecewiseLinearPath) -> String {
    let mut out = String::new();
    out.push_str("path v1\n");
    out.push_str(&format!("dim {}\n", path.dim()));
    out.push_str(&format!("nodes {}\n", path.len()));
    out.push_str("t x\n");
    for (k, t) in path.times().iter().enumerate() {
        let mut row = Vec::with_capacity(1 + path.dim());
        row.push(*t);
        row.extend_from_slice(&path.values()[k]);
        fmt_row(&mut out, &row);
    }
    out
}

/// Render a rough path with its per-cell signature blocks.
pub fn write_rough_path(rp: &RoughPath) -> String {
    let d = rp.dim();
    let mut out = String::new();
    out.push_str("roughpath v1\n");
    out.push_str(&format!("dim {d}\n"));
    out.push_str(&format!("nodes {}\n", rp.len()));
    let e = rp.exponents();
    out.push_str(&format!("exponents {} {} {}\n", e.alpha, e.beta, e.gamma));
    out.push_str(&format!("geometric {}\n", rp.geometric()));
    out.push_str("t x sig1 sig2 sig3\n");
    let width = 1 + d + d + d * d + d * d * d;
    for k in 0..rp.len() {
        let mut row = Vec::with_capacity(width);
        row.push(rp.times()[k]);
        row.extend_from_slice(rp.value(k));
        if k == 0 {
            row.resize(width, 0.0);
        } else {
            let cell = rp.cell(k - 1);
            row.extend_from_slice(&cell.level1);
            row.extend_from_slice(&cell.level2);
            row.extend_from_slice(&cell.level3);
        }
        fmt_row(&mut out, &row);
    }
    out
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    at: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, SerializeError> {
        self.at += 1;
        self.inner
            .next()
            .ok_or_else(|| SerializeError::Malformed(format!("unexpected end at line {}", self.at)))
    }
}

fn expect_kv(line: &str, key: &str) -> Result<String, SerializeError> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => Ok(v.to_string()),
        _ => Err(SerializeError::Malformed(format!(
            "expected `{key} <value>`, got `{line}`"
        ))),
    }
}

fn parse_floats(line: &str, want: usize, what: &str) -> Result<Vec<f64>, SerializeError> {
    let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let vals =
        vals.map_err(|e| SerializeError::Malformed(format!("bad float in {what}: {e}")))?;
    if vals.len() != want {
        return Err(SerializeError::Malformed(format!(
            "{what}: expected {want} columns, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn parse_usize(text: &str, what: &str) -> Result<usize, SerializeError> {
    text.parse::<usize>()
        .map_err(|e| SerializeError::Malformed(format!("bad {what}: {e}")))
}

fn parse_float(text: &str, what: &str) -> Result<f64, SerializeError> {
    text.parse::<f64>()
        .map_err(|e| SerializeError::Malformed(format!("bad {what}: {e}")))
}

/// Parse a [`write_path`] rendering.
pub fn read_path(text: &str) -> Result<PiecewiseLinearPath, SerializeError> {
    let mut lines = Lines {
        inner: text.lines(),
        at: 0,
    };
    if lines.next()? != "path v1" {
        return Err(SerializeError::Malformed("not a `path v1` block".into()));
    }
    let d = parse_usize(&expect_kv(lines.next()?, "dim")?, "dim")?;
    let n = parse_usize(&expect_kv(lines.next()?, "nodes")?, "nodes")?;
    lines.next()?; // column header
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let row = parse_floats(lines.next()?, 1 + d, &format!("node row {k}"))?;
        times.push(row[0]);
        values.push(row[1..].to_vec());
    }
    Ok(PiecewiseLinearPath::new(times, values)?)
}

/// Parse a [`write_rough_path`] rendering, revalidating through the
/// checked constructor (cell/increment consistency, grid monotonicity).
pub fn read_rough_path(text: &str) -> Result<RoughPath, SerializeError> {
    let mut lines = Lines {
        inner: text.lines(),
        at: 0,
    };
    if lines.next()? != "roughpath v1" {
        return Err(SerializeError::Malformed(
            "not a `roughpath v1` block".into(),
        ));
    }
    let d = parse_usize(&expect_kv(lines.next()?, "dim")?, "dim")?;
    let n = parse_usize(&expect_kv(lines.next()?, "nodes")?, "nodes")?;
    let exps = {
        let line = lines.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("exponents") {
            return Err(SerializeError::Malformed(format!(
                "expected `exponents α β γ`, got `{line}`"
            )));
        }
        let rest: Vec<&str> = parts.collect();
        if rest.len() != 3 {
            return Err(SerializeError::Malformed(
                "exponents line needs three values".into(),
            ));
        }
        HolderExponents::new(
            parse_float(rest[0], "alpha")?,
            parse_float(rest[1], "beta")?,
            parse_float(rest[2], "gamma")?,
        )?
    };
    let geometric = match expect_kv(lines.next()?, "geometric")?.as_str() {
        "true" => true,
        "false" => false,
        other => {
            return Err(SerializeError::Malformed(format!(
                "geometric flag must be true/false, got `{other}`"
            )))
        }
    };
    lines.next()?; // column header
    let width = 1 + d + d + d * d + d * d * d;
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut cells = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n {
        let row = parse_floats(lines.next()?, width, &format!("node row {k}"))?;
        times.push(row[0]);
        values.push(row[1..1 + d].to_vec());
        if k > 0 {
            let mut cell = TruncatedTensor::identity(d);
            let mut at = 1 + d;
            cell.level1.copy_from_slice(&row[at..at + d]);
            at += d;
            cell.level2.copy_from_slice(&row[at..at + d * d]);
            at += d * d;
            cell.level3.copy_from_slice(&row[at..at + d * d * d]);
            cells.push(cell);
        }
    }
    // The stored flag is authoritative (the original's defect tolerance is
    // not part of the format); consistency checks still run.
    let check = if geometric {
        GeometricCheck::Record(f64::MAX)
    } else {
        GeometricCheck::Record(-1.0)
    };
    Ok(RoughPath::from_cells(times, values, cells, exps, check)?)
}
