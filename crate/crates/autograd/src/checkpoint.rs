//! Plain-text container of named tensors.
//!
//! ```text
//! tgn-seal-checkpoint 1
//! <name> <rank> <dim_0> .. <dim_{rank-1}> <v_0> <v_1> ..
//! ```
//!
//! One tensor per line, fields separated by single spaces, values row-major in
//! shortest round-trip decimal form. Names contain no whitespace. Lines keep
//! the order they were written in.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use thiserror::Error;

pub const MAGIC: &str = "tgn-seal-checkpoint 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("tensor name `{0}` contains whitespace")]
    BadName(String),
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    tensors: &[(String, Tensor<T>)],
) -> Result<(), CheckpointError> {
    writeln!(w, "{MAGIC}")?;
    for (name, t) in tensors {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(CheckpointError::BadName(name.clone()));
        }
        let mut line = String::new();
        write!(line, "{name} {}", t.rank()).unwrap();
        for d in t.shape() {
            write!(line, " {d}").unwrap();
        }
        for v in t.data() {
            write!(line, " {v}").unwrap();
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: R) -> Result<Vec<(String, Tensor<T>)>, CheckpointError> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let fmt_err = |line: usize, msg: String| CheckpointError::Format { line, msg };
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(MAGIC) {
        return Err(fmt_err(1, format!("expected header `{MAGIC}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let name = fields.next().unwrap_or_default().to_string();
        let mut next_usize = |what: &str| -> Result<usize, CheckpointError> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| fmt_err(lineno, format!("bad {what}")))
        };
        let rank = next_usize("rank")?;
        let shape = (0..rank)
            .map(|_| next_usize("dimension"))
            .collect::<Result<Vec<_>, _>>()?;
        let data = fields
            .map(|f| {
                f.parse::<T>()
                    .map_err(|_| fmt_err(lineno, format!("bad value `{f}`")))
            })
            .collect::<Result<Vec<T>, _>>()?;
        let t = Tensor::new(shape, data).map_err(|e| fmt_err(lineno, e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}
