//! Text formats: trial lists (`<0|1> <enroll> <test>`), score files
//! (`<score> <enroll> <test>`), embeddings (`<utterance_id> v1 ... vE`) and
//! the DET CSV (`threshold,p_miss,p_fa`). Blank lines and lines starting
//! with `#` are ignored by the parsers.

use std::fmt::Write;

use super::{DetPoint, ScoredTrialSet, Trial};
use crate::error::{Error, Result};

/// Longest accepted embedding, guarding allocation on hostile input.
const MAX_EMBEDDING_DIM: usize = 1 << 16;

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim();
        (!line.is_empty() && !line.starts_with('#'))
            .then(|| (i + 1, line.split_whitespace().collect()))
    })
}

fn parse_real(token: &str, source: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(source, line, format!("invalid number {token:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            source,
            line,
            format!("non-finite value {token:?}"),
        ));
    }
    Ok(v)
}

pub fn parse_trials(text: &str, source: &str) -> Result<Vec<Trial>> {
    content_lines(text)
        .map(|(line, fields)| {
            let [label, enroll, test] = fields[..] else {
                return Err(Error::parse(
                    source,
                    line,
                    format!("expected 3 fields, found {}", fields.len()),
                ));
            };
            let target = match label {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::parse(
                        source,
                        line,
                        format!("label must be 0 or 1, found {other:?}"),
                    ))
                }
            };
            if enroll == test {
                return Err(Error::parse(
                    source,
                    line,
                    format!("trial pairs {enroll} with itself"),
                ));
            }
            Ok(Trial {
                enroll: enroll.to_string(),
                test: test.to_string(),
                target,
            })
        })
        .collect()
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        let _ = writeln!(out, "{} {} {}", u8::from(t.target), t.enroll, t.test);
    }
    out
}

/// One row of a score file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLine {
    pub score: f64,
    pub enroll: String,
    pub test: String,
}

pub fn parse_scores(text: &str, source: &str) -> Result<Vec<ScoreLine>> {
    content_lines(text)
        .map(|(line, fields)| {
            let [score, enroll, test] = fields[..] else {
                return Err(Error::parse(
                    source,
                    line,
                    format!("expected 3 fields, found {}", fields.len()),
                ));
            };
            Ok(ScoreLine {
                score: parse_real(score, source, line)?,
                enroll: enroll.to_string(),
                test: test.to_string(),
            })
        })
        .collect()
}

pub fn format_scores(set: &ScoredTrialSet) -> String {
    let mut out = String::new();
    for t in &set.trials {
        let _ = writeln!(out, "{:?} {} {}", t.score, t.trial.enroll, t.trial.test);
    }
    out
}

/// Embeddings in file order. All rows must share one dimension and ids must
/// be unique.
pub fn parse_embeddings(text: &str, source: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line, fields) in content_lines(text) {
        let Some((id, values)) = fields.split_first() else {
            continue;
        };
        if values.is_empty() {
            return Err(Error::parse(
                source,
                line,
                format!("embedding {id} has no values"),
            ));
        }
        if values.len() > MAX_EMBEDDING_DIM {
            return Err(Error::parse(
                source,
                line,
                format!("embedding dimension {} too large", values.len()),
            ));
        }
        if let Some((_, first)) = out.first() {
            if first.len() != values.len() {
                return Err(Error::parse(
                    source,
                    line,
                    format!(
                        "embedding {id} has {} values, expected {}",
                        values.len(),
                        first.len()
                    ),
                ));
            }
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(
                source,
                line,
                format!("duplicate embedding id {id}"),
            ));
        }
        let v = values
            .iter()
            .map(|t| parse_real(t, source, line))
            .collect::<Result<Vec<_>>>()?;
        out.push((id.to_string(), v));
    }
    Ok(out)
}

pub fn format_embeddings<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = String::new();
    for (id, values) in rows {
        out.push_str(id);
        for v in values {
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn format_det_csv(points: &[DetPoint]) -> String {
    let mut out = String::from("threshold,p_miss,p_fa\n");
    for p in points {
        let _ = writeln!(out, "{:?},{:?},{:?}", p.threshold, p.p_miss, p.p_fa);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trial_round_trip() {
        let text = "# header\n1 a b\n\n0 a c\n";
        let trials = parse_trials(text, "t").unwrap();
        assert_eq!(trials.len(), 2);
        assert!(trials[0].target && !trials[1].target);
        assert_eq!(parse_trials(&format_trials(&trials), "t").unwrap(), trials);
    }

    #[test]
    fn trial_errors_carry_lines() {
        let err = parse_trials("1 a b\n2 a b\n", "t.txt").unwrap_err();
        assert_eq!(
            err.to_string(),
            "t.txt:2: label must be 0 or 1, found \"2\""
        );
        assert!(parse_trials("1 a\n", "t").is_err());
        assert!(parse_trials("1 a a\n", "t").is_err());
    }

    #[test]
    fn score_round_trip() {
        let set = ScoredTrialSet::from_scores(&[0.1, -0.25], &[1.0 / 3.0]);
        let lines = parse_scores(&format_scores(&set), "s").unwrap();
        let scores: Vec<f64> = lines.iter().map(|l| l.score).collect();
        assert_eq!(scores, vec![0.1, -0.25, 1.0 / 3.0]);
        assert!(parse_scores("nan a b\n", "s").is_err());
        assert!(parse_scores("x a b\n", "s").is_err());
    }

    #[test]
    fn embedding_errors() {
        assert!(parse_embeddings("a 1 2\nb 1\n", "e").is_err());
        assert!(parse_embeddings("a 1 2\na 1 2\n", "e").is_err());
        assert!(parse_embeddings("a\n", "e").is_err());
        assert!(parse_embeddings("a inf\n", "e").is_err());
    }

    #[test]
    fn det_csv_layout() {
        let csv = format_det_csv(&[
            DetPoint {
                threshold: 0.5,
                p_miss: 0.0,
                p_fa: 1.0,
            },
            DetPoint {
                threshold: f64::INFINITY,
                p_miss: 1.0,
                p_fa: 0.0,
            },
        ]);
        assert_eq!(csv, "threshold,p_miss,p_fa\n0.5,0.0,1.0\ninf,1.0,0.0\n");
    }

    proptest! {
        #[test]
        fn embeddings_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..8)) {
            let ids: Vec<String> = (0..rows.len()).map(|i| format!("u{i}")).collect();
            let text = format_embeddings(ids.iter().map(String::as_str).zip(rows.iter().map(Vec::as_slice)));
            let parsed = parse_embeddings(&text, "e").unwrap();
            prop_assert_eq!(parsed.len(), rows.len());
            for ((id, v), (eid, row)) in parsed.iter().zip(ids.iter().zip(&rows)) {
                prop_assert_eq!(id, eid);
                prop_assert_eq!(v, row);
            }
        }

        #[test]
        fn parsers_never_panic(text in "\\PC{0,200}") {
            let _ = parse_trials(&text, "f");
            let _ = parse_scores(&text, "f");
            let _ = parse_embeddings(&text, "f");
        }
    }
}
