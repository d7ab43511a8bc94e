//! Text container for fitted parameters.
//!
//! ```text
//! vpgmm-params v1 M T I J
//! w_1 .. w_J
//! mu_1            (D values, one line per component)
//! ...
//! Sigma_1 row 1   (D values, D lines per component)
//! ...
//! ```
//!
//! Every number is written with 17 significant digits so a file survives
//! write -> read -> write byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::params::GmmParams;
use crate::dims::Dims;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &str = "vpgmm-params";
pub const PARAMS_VERSION: &str = "v1";

fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:.16e}").expect("write to String");
    }
    out.push('\n');
}

pub fn format_params(dims: &Dims, params: &GmmParams) -> Result<String> {
    if dims.dim() != params.dim() || dims.num_components != params.num_components() {
        return Err(Error::DimensionMismatch {
            context: "params header",
            expected: dims.dim(),
            found: params.dim(),
        });
    }
    let mut out = format!(
        "{PARAMS_MAGIC} {PARAMS_VERSION} {} {} {} {}\n",
        dims.num_farms, dims.num_periods, dims.num_obs, dims.num_components
    );
    push_row(&mut out, params.weights().into_iter());
    for c in params.components() {
        push_row(&mut out, c.mean.iter().copied());
    }
    for c in params.components() {
        for r in 0..params.dim() {
            push_row(&mut out, c.covariance.row(r).iter().copied());
        }
    }
    Ok(out)
}

pub fn parse_params(text: &str) -> Result<(Dims, GmmParams)> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != PARAMS_MAGIC || fields[1] != PARAMS_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `{PARAMS_MAGIC} {PARAMS_VERSION} M T I J`"),
        });
    }
    let counts = fields[2..]
        .iter()
        .map(|f| {
            f.parse::<usize>().map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad count `{f}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dims = Dims::new(counts[0], counts[1], counts[2], counts[3])?;
    let (d, k) = (dims.dim(), dims.num_components);

    let mut next_row = |expected: usize| -> Result<Vec<f64>> {
        let (line, text) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: "unexpected end of file".into(),
        })?;
        let row = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad number `{tok}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected {expected} values, found {}", row.len()),
            });
        }
        Ok(row)
    };

    let weights = next_row(k)?;
    let means = (0..k)
        .map(|_| next_row(d).map(DVector::from_vec))
        .collect::<Result<Vec<_>>>()?;
    let mut covariances = Vec::with_capacity(k);
    for _ in 0..k {
        let mut rows = Vec::with_capacity(d * d);
        for _ in 0..d {
            rows.extend(next_row(d)?);
        }
        covariances.push(DMatrix::from_row_slice(d, d, &rows));
    }
    if let Some((line, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Parse {
            line,
            message: format!("trailing content `{extra}`"),
        });
    }
    Ok((dims, GmmParams::new(weights, means, covariances)?))
}

pub fn write_params(path: impl AsRef<Path>, dims: &Dims, params: &GmmParams) -> Result<()> {
    std::fs::write(path, format_params(dims, params)?)?;
    Ok(())
}

pub fn read_params(path: impl AsRef<Path>) -> Result<(Dims, GmmParams)> {
    parse_params(&std::fs::read_to_string(path)?)
}
