//! Text checkpoints.
//!
//! ```text
//! attnpool-checkpoint 1
//! pooling sap
//! tensors 12
//! extractor.0.weight 64 40
//! <64 lines of 40 values>
//! ...
//! ```
//!
//! Values are written in shortest round-trip form, so a checkpoint reloads
//! to bit-identical parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Model, ModelShape};
use crate::numerics::Matrix;
use crate::pooling::Pooling;

pub const CHECKPOINT_MAGIC: &str = "attnpool-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub pooling: Pooling,
    pub model: Model,
}

pub fn format_checkpoint(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "pooling {}", ckpt.pooling.name());
    let names = ckpt.model.names();
    let tensors = ckpt.model.tensors();
    let _ = writeln!(out, "tensors {}", tensors.len());
    for (name, t) in names.iter().zip(tensors) {
        let _ = writeln!(out, "{name} {} {}", t.rows(), t.cols());
        for row in t.iter_rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    source: &'a str,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(Error::parse(
                self.source,
                self.last + 1,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }
}

fn keyed<'a>(line: &'a str, key: &str, lineno: usize, source: &str) -> Result<&'a str> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => Ok(v),
        _ => Err(Error::parse(
            source,
            lineno,
            format!("expected `{key} <value>`, found {line:?}"),
        )),
    }
}

pub fn parse_checkpoint(text: &str, source: &str) -> Result<Checkpoint> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        source,
        last: 0,
    };
    let (n, header) = lines.next("header")?;
    let version = keyed(header, CHECKPOINT_MAGIC, n, source)?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(Error::parse(
            source,
            n,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let (n, line) = lines.next("pooling line")?;
    let pooling: Pooling = keyed(line, "pooling", n, source)?
        .parse()
        .map_err(|e: Error| Error::parse(source, n, e.to_string()))?;
    let (n, line) = lines.next("tensor count")?;
    let count: usize = keyed(line, "tensors", n, source)?
        .parse()
        .map_err(|_| Error::parse(source, n, "tensor count must be an integer"))?;
    if count > text.len() {
        return Err(Error::parse(source, n, "tensor count exceeds file size"));
    }

    let mut named: Vec<(String, Matrix)> = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = lines.next("tensor header")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, rows, cols] = parts[..] else {
            return Err(Error::parse(
                source,
                n,
                format!("expected `name rows cols`, found {line:?}"),
            ));
        };
        let parse_dim = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(source, n, format!("bad dimension {s:?}")))
        };
        let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
        if rows
            .checked_mul(cols)
            .is_none_or(|total| total > text.len())
        {
            return Err(Error::parse(
                source,
                n,
                format!("tensor {name} of {rows}x{cols} exceeds file size"),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = lines.next(&format!("row of {name}"))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::parse(source, n, format!("expected a real number, found {tok:?}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(source, n, format!("non-finite value {tok:?}")));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::parse(
                    source,
                    n,
                    format!(
                        "{name}: expected {cols} values, found {}",
                        data.len() - before
                    ),
                ));
            }
        }
        named.push((name.to_string(), Matrix::from_vec(rows, cols, data)?));
    }
    if let Some((n, line)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(
            source,
            n + 1,
            format!("trailing content {line:?}"),
        ));
    }

    let model = assemble(named).map_err(|e| Error::parse(source, 1, e.to_string()))?;
    Ok(Checkpoint { pooling, model })
}

fn assemble(named: Vec<(String, Matrix)>) -> Result<Model> {
    let layers = named
        .iter()
        .take_while(|(n, _)| n.starts_with("extractor."))
        .count();
    if layers == 0 || layers % 2 != 0 {
        return Err(Error::invalid(
            "checkpoint needs weight/bias pairs for at least one extractor layer",
        ));
    }
    let find = |name: &str| -> Result<&Matrix> {
        named
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::invalid(format!("missing tensor {name}")))
    };
    let mut dims = vec![find("extractor.0.weight")?.cols()];
    for i in 0..layers / 2 {
        dims.push(find(&format!("extractor.{i}.weight"))?.rows());
    }
    let head = find("head.weight")?;
    let shape = ModelShape {
        input_dim: dims[0],
        hidden: dims[1..dims.len() - 1].to_vec(),
        frame_dim: dims[dims.len() - 1],
        embed_dim: head.rows(),
        num_classes: find("classifier.weight")?.rows(),
    };
    shape.validate()?;
    let skeleton = Model::zeros(&shape);
    let expected = skeleton.names();
    if expected.len() != named.len() {
        return Err(Error::invalid(format!(
            "expected {} tensors, found {}",
            expected.len(),
            named.len()
        )));
    }
    let mut tensors = Vec::with_capacity(named.len());
    for (want, (got, m)) in expected.iter().zip(named) {
        if *want != got {
            return Err(Error::invalid(format!(
                "expected tensor {want}, found {got}"
            )));
        }
        tensors.push(m);
    }
    Model::from_tensors(&shape, tensors)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_checkpoint(&text, &path.display().to_string())
}
