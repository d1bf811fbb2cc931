use crate::data::{Dataset, FrameSequence, DEFAULT_FRAME_RATE};
use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix, Rng};

/// Offset of the distractor cluster from the origin, in units of
/// `speaker_spread`.
const DISTRACTOR_OFFSET: f64 = 4.0;

/// Parameters of the synthetic speaker generator.
///
/// Speaker `c` owns a mean vector `m_c ~ N(0, speaker_spread² I)`;
/// informative frames are `m_c + noise_scale · N(0, I)`. Distractor frames
/// come from one speaker-independent cluster shared by every utterance:
/// centred `DISTRACTOR_OFFSET · speaker_spread` away from the origin along a
/// fixed random direction, with per-dimension spread `speaker_spread`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub feature_dim: usize,
    pub frames_per_utterance: usize,
    pub speaker_spread: f64,
    pub noise_scale: f64,
    pub distractor_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_speakers: 20,
            utterances_per_speaker: 10,
            feature_dim: 40,
            frames_per_utterance: 300,
            speaker_spread: 1.0,
            noise_scale: 0.3,
            distractor_fraction: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.utterances_per_speaker == 0 {
            return Err(Error::invalid(
                "synthetic dataset needs at least one speaker and utterance",
            ));
        }
        if self.feature_dim == 0 || self.frames_per_utterance == 0 {
            return Err(Error::invalid("synthetic frames need T >= 1 and F >= 1"));
        }
        if !(0.0..1.0).contains(&self.distractor_fraction) {
            return Err(Error::invalid(format!(
                "distractor_fraction {} outside [0, 1)",
                self.distractor_fraction
            )));
        }
        if !(self.speaker_spread.is_finite() && self.speaker_spread > 0.0) {
            return Err(Error::invalid("speaker_spread must be positive"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_scale must be non-negative"));
        }
        Ok(())
    }
}

/// Speakers `0..num_speakers` of the world described by `config`.
pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    synth_speakers(config, 0, config.num_speakers)
}

/// Speakers `first..first + count` of the world described by `config`,
/// relabelled `0..count`.
///
/// All speakers of one seed share the distractor cluster, so disjoint
/// ranges give train and held-out sets drawn from the same distribution.
pub fn synth_speakers(config: &SynthConfig, first: usize, count: usize) -> Result<Dataset> {
    config.validate()?;
    if count == 0 {
        return Err(Error::invalid(
            "synthetic dataset needs at least one speaker",
        ));
    }
    let f = config.feature_dim;
    let root = Rng::new(config.seed);

    let mut world = root.derive(0);
    let mut direction: Vec<f64> = (0..f).map(|_| world.gaussian()).collect();
    let len = norm(&direction).max(1e-12);
    direction
        .iter_mut()
        .for_each(|v| *v *= DISTRACTOR_OFFSET * config.speaker_spread / len);

    let t = config.frames_per_utterance;
    let n_distract = (config.distractor_fraction * t as f64).round() as usize;
    let n_distract = n_distract.min(t - 1);

    let mut utterances = Vec::with_capacity(count * config.utterances_per_speaker);
    for label in 0..count {
        let speaker = first + label;
        let mut rng = root.derive(1 + speaker as u64);
        let mean: Vec<f64> = (0..f)
            .map(|_| config.speaker_spread * rng.gaussian())
            .collect();
        for u in 0..config.utterances_per_speaker {
            let mut mask = vec![true; t];
            for i in rng.sample_indices(t, n_distract) {
                mask[i] = false;
            }
            let mut data = Vec::with_capacity(t * f);
            for &informative in &mask {
                if informative {
                    data.extend(mean.iter().map(|m| m + config.noise_scale * rng.gaussian()));
                } else {
                    data.extend(
                        direction
                            .iter()
                            .map(|d| d + config.speaker_spread * rng.gaussian()),
                    );
                }
            }
            let features = Matrix::from_vec(t, f, data)?;
            let id = format!("spk{speaker:04}_utt{u:03}");
            utterances.push(
                FrameSequence::new(features, id, label, DEFAULT_FRAME_RATE)?.with_mask(mask)?,
            );
        }
    }
    Dataset::new(utterances, count)
}
