//! Text feature files.
//!
//! Line 1 is `T F frame_rate speaker_id utterance_id`; each of the next `T`
//! lines holds `F` whitespace-separated reals. A directory of `.feat` files
//! is a dataset.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, FrameSequence};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FEATURE_EXTENSION: &str = "feat";

fn parse_real(tok: &str, source: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| {
        Error::parse(
            source,
            line,
            format!("expected a real number, found {tok:?}"),
        )
    })?;
    if !v.is_finite() {
        return Err(Error::parse(
            source,
            line,
            format!("non-finite value {tok:?}"),
        ));
    }
    Ok(v)
}

fn parse_count(tok: &str, what: &str, source: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| {
        Error::parse(
            source,
            line,
            format!("{what}: expected a non-negative integer, found {tok:?}"),
        )
    })
}

/// Parses the text of one feature file; `source` names it in errors.
pub fn parse_features(text: &str, source: &str) -> Result<FrameSequence> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "empty feature file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(Error::parse(
            source,
            1,
            format!(
                "header needs `T F frame_rate speaker_id utterance_id`, found {} fields",
                fields.len()
            ),
        ));
    }
    let t = parse_count(fields[0], "T", source, 1)?;
    let f = parse_count(fields[1], "F", source, 1)?;
    let frame_rate = parse_real(fields[2], source, 1)?;
    let speaker = parse_count(fields[3], "speaker_id", source, 1)?;
    let utterance_id = fields[4];
    if t == 0 || f == 0 {
        return Err(Error::parse(source, 1, "T and F must be at least 1"));
    }
    if frame_rate <= 0.0 {
        return Err(Error::parse(source, 1, "frame_rate must be positive"));
    }
    let total = t
        .checked_mul(f)
        .filter(|n| *n <= text.len())
        .ok_or_else(|| {
            Error::parse(
                source,
                1,
                format!("header declares {t}x{f} values, more than the file holds"),
            )
        })?;

    let mut data = Vec::with_capacity(total);
    let mut rows = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows == t {
            return Err(Error::parse(
                source,
                lineno,
                format!("header declares {t} rows but more follow"),
            ));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(parse_real(tok, source, lineno)?);
        }
        let got = data.len() - before;
        if got != f {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected {f} values, found {got}"),
            ));
        }
        rows += 1;
    }
    if rows != t {
        return Err(Error::parse(
            source,
            text.lines().count() + 1,
            format!("header declares {t} rows but file has {rows}"),
        ));
    }
    let features = Matrix::from_vec(t, f, data)?;
    FrameSequence::new(features, utterance_id, speaker, frame_rate)
        .map_err(|e| Error::parse(source, 1, e.to_string()))
}

/// Serializes a sequence; values use the shortest representation that
/// parses back to the same `f64`.
pub fn format_features(frames: &FrameSequence) -> String {
    let x = frames.features();
    let mut out = String::with_capacity(x.len() * 20 + 64);
    let _ = writeln!(
        out,
        "{} {} {:?} {} {}",
        x.rows(),
        x.cols(),
        frames.frame_rate,
        frames.speaker,
        frames.utterance_id
    );
    for row in x.iter_rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_features(&text, &path.display().to_string())
}

pub fn save_features(frames: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_features(frames))?;
    Ok(())
}

/// Loads every `.feat` file in `dir` in file-name order. Speaker labels
/// must cover `0..num_speakers` without gaps.
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let mut paths: Vec<_> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == FEATURE_EXTENSION))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no .{FEATURE_EXTENSION} files in {}",
            dir.as_ref().display()
        )));
    }
    let utterances = paths
        .iter()
        .map(load_features)
        .collect::<Result<Vec<_>>>()?;
    let num_speakers = utterances
        .iter()
        .map(|u| u.speaker)
        .max()
        .map_or(0, |m| m + 1);
    Dataset::new(utterances, num_speakers)
}

/// Writes one `<utterance_id>.feat` per utterance into `dir`.
pub fn save_dataset_dir(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for u in dataset.utterances() {
        save_features(
            u,
            dir.join(format!("{}.{FEATURE_EXTENSION}", u.utterance_id)),
        )?;
    }
    Ok(())
}
