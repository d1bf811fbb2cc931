//! Flat `key = value` experiment configuration.

use std::fmt::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::DcfConfig;
use crate::network::ModelShape;
use crate::objectives::{AmSoftmaxConfig, Variant};

use super::episode::EpisodeSpec;
use super::optim::OptimizerConfig;

/// Which classification loss drives training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Softmax,
    AmSoftmax,
    /// Episodic prototypical loss plus softmax over all training speakers.
    PlSoftmax,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Softmax => "softmax",
            Objective::AmSoftmax => "am_softmax",
            Objective::PlSoftmax => "pl_softmax",
        }
    }

    pub fn is_episodic(self) -> bool {
        self == Objective::PlSoftmax
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" => Ok(Objective::Softmax),
            "am_softmax" => Ok(Objective::AmSoftmax),
            "pl_softmax" => Ok(Objective::PlSoftmax),
            other => Err(Error::Config(format!(
                "unknown objective {other:?} (expected softmax, am_softmax or pl_softmax)"
            ))),
        }
    }
}

/// Where training and held-out utterances come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated speakers; held-out speakers come from the same generator.
    Synthetic(SynthConfig),
    /// A directory of feature files, with an optional held-out directory.
    Directory {
        train: PathBuf,
        eval: Option<PathBuf>,
    },
}

/// Held-out evaluation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Number of held-out speakers for a synthetic source.
    pub speakers: usize,
    pub pairs_per_speaker: usize,
    /// Test crop lengths in seconds; the full-length row is always added.
    pub durations: Vec<f64>,
    pub dcf: DcfConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            speakers: 20,
            pairs_per_speaker: 100,
            durations: vec![1.0, 2.0, 5.0],
            dcf: DcfConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub objective: Objective,
    pub lambda_mu: f64,
    /// Confine context-loss gradients to the context vector.
    pub stop_gradient: bool,
    /// Per-utterance mean and variance normalization of features.
    pub cmvn: bool,
    pub steps: usize,
    pub seed: u64,
    pub episode: EpisodeSpec,
    pub batch_size: usize,
    pub crop_seconds: f64,
    pub am: AmSoftmaxConfig,
    pub optimizer: OptimizerConfig,
    pub hidden: Vec<usize>,
    pub frame_dim: usize,
    pub embed_dim: usize,
    /// Steps averaged into the reported training accuracy.
    pub accuracy_window: usize,
    pub data: DataSource,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::Sap,
            objective: Objective::PlSoftmax,
            lambda_mu: 1.0,
            stop_gradient: false,
            cmvn: false,
            steps: 500,
            seed: 0,
            episode: EpisodeSpec::default(),
            batch_size: 64,
            crop_seconds: 2.0,
            am: AmSoftmaxConfig::default(),
            optimizer: OptimizerConfig::default(),
            hidden: vec![64],
            frame_dim: 32,
            embed_dim: 256,
            accuracy_window: 50,
            data: DataSource::Synthetic(SynthConfig::default()),
            eval: EvalConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn join<T: fmt::Debug>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn model_shape(&self, input_dim: usize, num_classes: usize) -> ModelShape {
        ModelShape {
            input_dim,
            hidden: self.hidden.clone(),
            frame_dim: self.frame_dim,
            embed_dim: self.embed_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.lambda_mu.is_finite() || self.lambda_mu < 0.0 {
            return bad(format!(
                "lambda_mu must be finite and non-negative, got {}",
                self.lambda_mu
            ));
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.objective.is_episodic() {
            self.episode.validate()?;
        } else {
            if self.batch_size < 2 {
                return bad(format!(
                    "batch_size must be at least 2, got {}",
                    self.batch_size
                ));
            }
            if !(self.crop_seconds > 0.0 && self.crop_seconds.is_finite()) {
                return bad(format!(
                    "crop_seconds must be positive, got {}",
                    self.crop_seconds
                ));
            }
        }
        if !(self.am.scale > 0.0 && self.am.margin >= 0.0) {
            return bad("am.scale must be positive and am.margin non-negative".into());
        }
        self.optimizer.validate()?;
        if self.hidden.contains(&0) || self.frame_dim == 0 || self.embed_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.accuracy_window == 0 {
            return bad("accuracy_window must be positive".into());
        }
        if self.eval.pairs_per_speaker == 0 {
            return bad("eval.pairs_per_speaker must be positive".into());
        }
        if self
            .eval
            .durations
            .iter()
            .any(|d| !(*d > 0.0 && d.is_finite()))
        {
            return bad("eval.durations must be positive".into());
        }
        self.eval.dcf.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
            if self.eval.speakers < 2 {
                return bad("eval.speakers must be at least 2".into());
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown and repeated keys are errors.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut synth = SynthConfig::default();
        let mut data_dir: Option<PathBuf> = None;
        let mut eval_dir: Option<PathBuf> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected key = value, found {line:?}"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("duplicate key {key}"),
                ));
            }
            let applied = (|| -> Result<()> {
                match key {
                    "variant" => cfg.variant = value.parse()?,
                    "objective" => cfg.objective = value.parse()?,
                    "lambda_mu" => cfg.lambda_mu = parse_value(key, value)?,
                    "stop_gradient" => cfg.stop_gradient = parse_bool(key, value)?,
                    "cmvn" => cfg.cmvn = parse_bool(key, value)?,
                    "steps" => cfg.steps = parse_value(key, value)?,
                    "seed" => cfg.seed = parse_value(key, value)?,
                    "episode.preset" => match value {
                        "default" => cfg.episode = EpisodeSpec::default(),
                        "hundred_way" => cfg.episode = EpisodeSpec::hundred_way(),
                        _ => {
                            return Err(Error::Config(format!("unknown episode preset {value:?}")))
                        }
                    },
                    "episode.classes" => cfg.episode.n_classes = parse_value(key, value)?,
                    "episode.support" => cfg.episode.n_support = parse_value(key, value)?,
                    "episode.query" => cfg.episode.n_query = parse_value(key, value)?,
                    "episode.support_seconds" => {
                        cfg.episode.support_seconds = parse_value(key, value)?
                    }
                    "episode.query_min_seconds" => {
                        cfg.episode.query_seconds.0 = parse_value(key, value)?
                    }
                    "episode.query_max_seconds" => {
                        cfg.episode.query_seconds.1 = parse_value(key, value)?
                    }
                    "batch_size" => cfg.batch_size = parse_value(key, value)?,
                    "crop_seconds" => cfg.crop_seconds = parse_value(key, value)?,
                    "am.scale" => cfg.am.scale = parse_value(key, value)?,
                    "am.margin" => cfg.am.margin = parse_value(key, value)?,
                    "lr" => cfg.optimizer.lr = parse_value(key, value)?,
                    "momentum" => cfg.optimizer.momentum = parse_value(key, value)?,
                    "weight_decay" => cfg.optimizer.weight_decay = parse_value(key, value)?,
                    "lr_decay_factor" => cfg.optimizer.lr_decay_factor = parse_value(key, value)?,
                    "decay_patience" => cfg.optimizer.decay_patience = parse_value(key, value)?,
                    "max_decays" => cfg.optimizer.max_decays = parse_value(key, value)?,
                    "min_improvement" => cfg.optimizer.min_improvement = parse_value(key, value)?,
                    "loss_window" => cfg.optimizer.loss_window = parse_value(key, value)?,
                    "model.hidden" => cfg.hidden = parse_list(key, value)?,
                    "model.frame_dim" => cfg.frame_dim = parse_value(key, value)?,
                    "model.embed_dim" => cfg.embed_dim = parse_value(key, value)?,
                    "accuracy_window" => cfg.accuracy_window = parse_value(key, value)?,
                    "data.source" => match value {
                        "synth" => data_dir = None,
                        path => data_dir = Some(PathBuf::from(path)),
                    },
                    "eval.data" => eval_dir = Some(PathBuf::from(value)),
                    "synth.speakers" => synth.num_speakers = parse_value(key, value)?,
                    "synth.utterances" => synth.utterances_per_speaker = parse_value(key, value)?,
                    "synth.feature_dim" => synth.feature_dim = parse_value(key, value)?,
                    "synth.frames" => synth.frames_per_utterance = parse_value(key, value)?,
                    "synth.spread" => synth.speaker_spread = parse_value(key, value)?,
                    "synth.noise" => synth.noise_scale = parse_value(key, value)?,
                    "synth.distractor_fraction" => {
                        synth.distractor_fraction = parse_value(key, value)?
                    }
                    "synth.seed" => synth.seed = parse_value(key, value)?,
                    "eval.speakers" => cfg.eval.speakers = parse_value(key, value)?,
                    "eval.pairs_per_speaker" => {
                        cfg.eval.pairs_per_speaker = parse_value(key, value)?
                    }
                    "eval.durations" => cfg.eval.durations = parse_list(key, value)?,
                    "eval.p_target" => cfg.eval.dcf.p_target = parse_value(key, value)?,
                    "eval.c_miss" => cfg.eval.dcf.c_miss = parse_value(key, value)?,
                    "eval.c_fa" => cfg.eval.dcf.c_fa = parse_value(key, value)?,
                    "eval.normalize_dcf" => cfg.eval.dcf.normalize = parse_bool(key, value)?,
                    _ => return Err(Error::Config(format!("unknown key {key}"))),
                }
                Ok(())
            })();
            applied.map_err(|e| match e {
                Error::Config(msg) => Error::parse(source, line_no, msg),
                other => Error::parse(source, line_no, other.to_string()),
            })?;
        }
        cfg.data = match data_dir {
            None => {
                if eval_dir.is_some() {
                    return Err(Error::Config(
                        "eval.data requires a directory data.source".into(),
                    ));
                }
                DataSource::Synthetic(synth)
            }
            Some(train) => DataSource::Directory {
                train,
                eval: eval_dir,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("variant", self.variant.to_string());
        kv("objective", self.objective.to_string());
        kv("lambda_mu", format!("{:?}", self.lambda_mu));
        kv("stop_gradient", self.stop_gradient.to_string());
        kv("cmvn", self.cmvn.to_string());
        kv("steps", self.steps.to_string());
        kv("seed", self.seed.to_string());
        kv("episode.classes", self.episode.n_classes.to_string());
        kv("episode.support", self.episode.n_support.to_string());
        kv("episode.query", self.episode.n_query.to_string());
        kv(
            "episode.support_seconds",
            format!("{:?}", self.episode.support_seconds),
        );
        kv(
            "episode.query_min_seconds",
            format!("{:?}", self.episode.query_seconds.0),
        );
        kv(
            "episode.query_max_seconds",
            format!("{:?}", self.episode.query_seconds.1),
        );
        kv("batch_size", self.batch_size.to_string());
        kv("crop_seconds", format!("{:?}", self.crop_seconds));
        kv("am.scale", format!("{:?}", self.am.scale));
        kv("am.margin", format!("{:?}", self.am.margin));
        let o = &self.optimizer;
        kv("lr", format!("{:?}", o.lr));
        kv("momentum", format!("{:?}", o.momentum));
        kv("weight_decay", format!("{:?}", o.weight_decay));
        kv("lr_decay_factor", format!("{:?}", o.lr_decay_factor));
        kv("decay_patience", o.decay_patience.to_string());
        kv("max_decays", o.max_decays.to_string());
        kv("min_improvement", format!("{:?}", o.min_improvement));
        kv("loss_window", o.loss_window.to_string());
        kv(
            "model.hidden",
            self.hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("model.frame_dim", self.frame_dim.to_string());
        kv("model.embed_dim", self.embed_dim.to_string());
        kv("accuracy_window", self.accuracy_window.to_string());
        match &self.data {
            DataSource::Synthetic(s) => {
                kv("data.source", "synth".into());
                kv("synth.speakers", s.num_speakers.to_string());
                kv("synth.utterances", s.utterances_per_speaker.to_string());
                kv("synth.feature_dim", s.feature_dim.to_string());
                kv("synth.frames", s.frames_per_utterance.to_string());
                kv("synth.spread", format!("{:?}", s.speaker_spread));
                kv("synth.noise", format!("{:?}", s.noise_scale));
                kv(
                    "synth.distractor_fraction",
                    format!("{:?}", s.distractor_fraction),
                );
                kv("synth.seed", s.seed.to_string());
            }
            DataSource::Directory { train, eval } => {
                kv("data.source", train.display().to_string());
                if let Some(e) = eval {
                    kv("eval.data", e.display().to_string());
                }
            }
        }
        kv("eval.speakers", self.eval.speakers.to_string());
        kv(
            "eval.pairs_per_speaker",
            self.eval.pairs_per_speaker.to_string(),
        );
        kv("eval.durations", join(&self.eval.durations));
        kv("eval.p_target", format!("{:?}", self.eval.dcf.p_target));
        kv("eval.c_miss", format!("{:?}", self.eval.dcf.c_miss));
        kv("eval.c_fa", format!("{:?}", self.eval.dcf.c_fa));
        kv("eval.normalize_dcf", self.eval.dcf.normalize.to_string());
        out
    }
}
