//! Checkpoint evaluation over test durations, and attention statistics.

use std::fmt::Write;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    build_trials, compute_eer, compute_min_dcf, duration_protocol, DcfConfig, ScoredTrialSet, Trial,
};
use crate::network::Checkpoint;
use crate::numerics::Rng;

use super::pipeline::{embed, forward_utterance};
use super::train::streams;

/// How trials are drawn and costed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig {
    pub pairs_per_speaker: usize,
    pub seed: u64,
    pub dcf: DcfConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// Test crop length in seconds; `None` for full utterances.
    pub duration: Option<f64>,
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub min_dcf_threshold: f64,
    pub scores: ScoredTrialSet,
}

impl MetricsRow {
    pub fn label(&self) -> String {
        match self.duration {
            Some(d) => format!("{d}s"),
            None => "full".to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn full(&self) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.duration.is_none())
    }

    pub fn at(&self, seconds: f64) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.duration == Some(seconds))
    }

    /// CSV with one row per duration.
    pub fn render(&self) -> String {
        let mut out = String::from("duration,trials,eer,eer_threshold,min_dcf,min_dcf_threshold\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?}",
                r.label(),
                r.scores.len(),
                r.eer,
                r.eer_threshold,
                r.min_dcf,
                r.min_dcf_threshold
            );
        }
        out
    }
}

/// Builds trials from `cfg` and scores them at each duration plus full
/// length.
pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    durations: &[f64],
    cfg: &TrialConfig,
) -> Result<MetricsTable> {
    let root = Rng::new(cfg.seed);
    let trials = build_trials(
        dataset,
        cfg.pairs_per_speaker,
        &mut root.derive(streams::TRIALS),
    )?;
    evaluate_trials(ckpt, dataset, &trials, durations, cfg)
}

/// Scores a fixed trial list at each duration plus full length. Crops for
/// each duration use their own random stream.
pub fn evaluate_trials(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    trials: &[Trial],
    durations: &[f64],
    cfg: &TrialConfig,
) -> Result<MetricsTable> {
    let root = Rng::new(cfg.seed);
    let embed_fn = |f: &crate::data::FrameSequence| embed(&ckpt.model, ckpt.pooling, f.features());
    let mut table = MetricsTable::default();
    let mut labels: Vec<Option<f64>> = durations.iter().map(|&d| Some(d)).collect();
    labels.push(None);
    for (i, duration) in labels.into_iter().enumerate() {
        let mut rng = root.derive(streams::CROPS + i as u64);
        let scores = duration_protocol(dataset, embed_fn, trials, duration, &mut rng)?;
        let (eer, eer_threshold) = compute_eer(&scores)?;
        let (min_dcf, min_dcf_threshold) = compute_min_dcf(&scores, &cfg.dcf)?;
        table.rows.push(MetricsRow {
            duration,
            eer,
            eer_threshold,
            min_dcf,
            min_dcf_threshold,
            scores,
        });
    }
    Ok(table)
}

/// Mean attention weight on informative versus distractor frames.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStats {
    /// Utterances with both frame kinds present.
    pub utterances: usize,
    pub informative_mean: f64,
    pub distractor_mean: f64,
    /// Utterances where informative frames get the larger mean weight.
    pub wins: usize,
    pub losses: usize,
    /// One-sided sign test of wins against losses; ties are dropped.
    pub sign_test_p: f64,
}

/// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut log_pmf = -(n as f64) * std::f64::consts::LN_2;
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += log_pmf.exp();
        }
        if k < n {
            log_pmf += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    tail.min(1.0)
}

pub fn attention_stats(ckpt: &Checkpoint, dataset: &Dataset) -> Result<AttentionStats> {
    let (mut n, mut inf_sum, mut dis_sum, mut wins, mut losses) =
        (0usize, 0.0, 0.0, 0usize, 0usize);
    for utt in dataset.utterances() {
        let Some(mask) = utt.informative_mask() else {
            continue;
        };
        let informative = mask.iter().filter(|&&m| m).count();
        if informative == 0 || informative == mask.len() {
            continue;
        }
        let weights = forward_utterance(&ckpt.model, ckpt.pooling, utt.features())?.weights();
        let (mut wi, mut wd) = (0.0, 0.0);
        for (&w, &m) in weights.iter().zip(mask) {
            if m {
                wi += w;
            } else {
                wd += w;
            }
        }
        let (mi, md) = (
            wi / informative as f64,
            wd / (mask.len() - informative) as f64,
        );
        n += 1;
        inf_sum += mi;
        dis_sum += md;
        // differences at rounding level are ties
        let tie = (mi - md).abs() <= 1e-12 * mi.max(md);
        if !tie && mi > md {
            wins += 1;
        } else if !tie {
            losses += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid(
            "no utterance carries both informative and distractor frames",
        ));
    }
    Ok(AttentionStats {
        utterances: n,
        informative_mean: inf_sum / n as f64,
        distractor_mean: dis_sum / n as f64,
        wins,
        losses,
        sign_test_p: sign_test_p(wins, losses),
    })
}
