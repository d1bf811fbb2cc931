//! End-to-end runs and their reports.

use std::fmt::Write;
use std::time::Instant;

use crate::data::{load_dataset_dir, normalize_time_axis, synth_speakers, Dataset};
use crate::error::{Error, Result};
use crate::network::Checkpoint;

use super::config::{DataSource, ExperimentConfig};
use super::evaluate::{attention_stats, evaluate, AttentionStats, MetricsTable, TrialConfig};
use super::optim::ScheduleEvent;
use super::train::{StepRecord, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub steps: Vec<StepRecord>,
    pub stopped_early: bool,
    pub lr_decays: usize,
    /// Mean step accuracy over the last `accuracy_window` steps.
    pub train_accuracy: f64,
    pub metrics: MetricsTable,
    pub attention: Option<AttentionStats>,
    /// First and last context loss over steps where it was active.
    pub context_first: Option<f64>,
    pub context_last: Option<f64>,
    /// Not part of [`RunReport::render`].
    pub wall_time_seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl RunReport {
    /// Structured text: key/value sections and CSV tables. Wall time is
    /// left out so identical runs render identically.
    pub fn render(&self) -> String {
        let mut out = String::from("# attnpool run report\n\n[run]\n");
        let kv = |out: &mut String, k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv(&mut out, "variant", self.config.variant.to_string());
        kv(&mut out, "objective", self.config.objective.to_string());
        kv(&mut out, "seed", self.config.seed.to_string());
        kv(&mut out, "steps_run", self.steps.len().to_string());
        kv(&mut out, "stopped_early", self.stopped_early.to_string());
        kv(&mut out, "lr_decays", self.lr_decays.to_string());
        kv(&mut out, "final_lr", opt(self.steps.last().map(|s| s.lr)));
        kv(
            &mut out,
            "final_total_loss",
            opt(self.steps.last().map(|s| s.total)),
        );
        kv(
            &mut out,
            "train_accuracy",
            format!("{:?}", self.train_accuracy),
        );
        kv(&mut out, "context_first", opt(self.context_first));
        kv(&mut out, "context_last", opt(self.context_last));
        out.push_str("\n[config]\n");
        out.push_str(&self.config.render());
        out.push_str("\n[metrics]\n");
        out.push_str(&self.metrics.render());
        out.push_str("\n[attention]\n");
        if let Some(a) = &self.attention {
            kv(&mut out, "utterances", a.utterances.to_string());
            kv(
                &mut out,
                "informative_mean",
                format!("{:?}", a.informative_mean),
            );
            kv(
                &mut out,
                "distractor_mean",
                format!("{:?}", a.distractor_mean),
            );
            kv(&mut out, "wins", a.wins.to_string());
            kv(&mut out, "losses", a.losses.to_string());
            kv(&mut out, "sign_test_p", format!("{:?}", a.sign_test_p));
        }
        out.push_str("\n[steps]\nstep,lr,total,softmax,prototypical,am_softmax,context,context_active,accuracy,event\n");
        for s in &self.steps {
            let event = match s.event {
                ScheduleEvent::None => "",
                ScheduleEvent::Decayed => "decay",
                ScheduleEvent::Stopped => "stop",
            };
            let p = &s.parts;
            let _ = writeln!(
                out,
                "{},{:?},{:?},{},{},{},{},{},{:?},{event}",
                s.step,
                s.lr,
                s.total,
                opt(p.softmax),
                opt(p.prototypical),
                opt(p.am_softmax),
                opt(p.context),
                s.context_active,
                s.accuracy
            );
        }
        out
    }
}

/// Training and held-out data for `cfg`, normalized when `cfg.cmvn`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    let (train, held_out) = match &cfg.data {
        DataSource::Synthetic(s) => (
            synth_speakers(s, 0, s.num_speakers)?,
            Some(synth_speakers(s, s.num_speakers, cfg.eval.speakers)?),
        ),
        DataSource::Directory { train, eval } => {
            let held = eval.as_ref().map(load_dataset_dir).transpose()?;
            (load_dataset_dir(train)?, held)
        }
    };
    let prep = |d: Dataset| {
        if cfg.cmvn {
            d.map_utterances(normalize_time_axis)
        } else {
            d
        }
    };
    Ok((prep(train), held_out.map(prep)))
}

/// Final state of a run.
pub struct TrainOutcome {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
}

/// Trains for `cfg.steps` (or until the schedule stops), then evaluates on
/// `held_out`. `on_checkpoint` receives a label and a checkpoint at every
/// learning-rate decay, at the end, and as `last_good` when a step fails
/// numerically.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    train: Dataset,
    held_out: Option<&Dataset>,
    mut on_checkpoint: impl FnMut(&str, &Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let mut trainer = Trainer::new(cfg, train)?;
    let mut steps = Vec::with_capacity(cfg.steps);
    while steps.len() < cfg.steps && !trainer.schedule().stopped() {
        match trainer.step() {
            Ok(rec) => {
                if rec.event == ScheduleEvent::Decayed {
                    on_checkpoint(
                        &format!("decay{}_step{}", trainer.schedule().decays(), rec.step),
                        &trainer.checkpoint(),
                    )?;
                }
                log::debug!(
                    "step {} total {:.5} acc {:.3}",
                    rec.step,
                    rec.total,
                    rec.accuracy
                );
                steps.push(rec);
            }
            Err(e) if e.is_numerical() => {
                on_checkpoint("last_good", &trainer.checkpoint())?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    let checkpoint = trainer.checkpoint();
    on_checkpoint("final", &checkpoint)?;

    let window = &steps[steps.len().saturating_sub(cfg.accuracy_window)..];
    let train_accuracy = window.iter().map(|s| s.accuracy).sum::<f64>() / window.len() as f64;
    let active: Vec<f64> = steps
        .iter()
        .filter(|s| s.context_active)
        .filter_map(|s| s.parts.context)
        .collect();

    let (metrics, attention) = match held_out {
        Some(ds) => {
            let trial_cfg = TrialConfig {
                pairs_per_speaker: cfg.eval.pairs_per_speaker,
                seed: cfg.seed,
                dcf: cfg.eval.dcf,
            };
            let metrics = evaluate(&checkpoint, ds, &cfg.eval.durations, &trial_cfg)?;
            let attention = match attention_stats(&checkpoint, ds) {
                Ok(a) => Some(a),
                Err(Error::Invalid(_)) => None,
                Err(e) => return Err(e),
            };
            (metrics, attention)
        }
        None => (MetricsTable::default(), None),
    };
    let report = RunReport {
        config: cfg.clone(),
        stopped_early: trainer.schedule().stopped(),
        lr_decays: trainer.schedule().decays(),
        steps,
        train_accuracy,
        metrics,
        attention,
        context_first: active.first().copied(),
        context_last: active.last().copied(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { report, checkpoint })
}

/// [`load_data`] followed by [`train_and_evaluate`], discarding
/// intermediate checkpoints.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let (train, held_out) = load_data(cfg)?;
    train_and_evaluate(cfg, train, held_out.as_ref(), |_, _| Ok(()))
}
