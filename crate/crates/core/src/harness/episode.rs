//! Episode and batch sampling over raw frame sequences.

use crate::data::{crop, Dataset, FrameSequence};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub n_classes: usize,
    pub n_support: usize,
    pub n_query: usize,
    pub support_seconds: f64,
    /// Query crop lengths are drawn uniformly from this range.
    pub query_seconds: (f64, f64),
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            n_classes: 10,
            n_support: 1,
            n_query: 2,
            support_seconds: 2.0,
            query_seconds: (1.0, 2.0),
        }
    }
}

impl EpisodeSpec {
    /// 100-way episodes, for datasets with enough speakers.
    pub fn hundred_way() -> Self {
        EpisodeSpec {
            n_classes: 100,
            ..EpisodeSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "episodes need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.n_support == 0 || self.n_query == 0 {
            return Err(Error::Config(
                "episodes need at least one support and one query per class".into(),
            ));
        }
        let (lo, hi) = self.query_seconds;
        if !(self.support_seconds > 0.0 && self.support_seconds.is_finite())
            || !(lo > 0.0 && lo <= hi && hi.is_finite())
        {
            return Err(Error::Config(format!(
                "invalid crop lengths: support {}, query range ({lo}, {hi})",
                self.support_seconds
            )));
        }
        Ok(())
    }
}

/// An episode before embedding. Class `c` of the episode is dataset speaker
/// `speakers[c]`.
#[derive(Clone, Debug)]
pub struct RawEpisode {
    pub speakers: Vec<usize>,
    pub support: Vec<FrameSequence>,
    pub support_labels: Vec<usize>,
    pub query: Vec<FrameSequence>,
    pub query_labels: Vec<usize>,
}

/// Draws `N` distinct speakers, then `K` support and `M` query crops per
/// speaker from distinct utterances when the speaker has `K + M` of them.
pub fn sample_episode(dataset: &Dataset, spec: &EpisodeSpec, rng: &mut Rng) -> Result<RawEpisode> {
    spec.validate()?;
    if dataset.num_speakers() < spec.n_classes {
        return Err(Error::invalid(format!(
            "{}-way episodes need {} speakers, dataset has {}",
            spec.n_classes,
            spec.n_classes,
            dataset.num_speakers()
        )));
    }
    let groups = dataset.by_speaker();
    let utts = dataset.utterances();
    let speakers = rng.sample_indices(dataset.num_speakers(), spec.n_classes);
    let per = spec.n_support + spec.n_query;
    let mut ep = RawEpisode {
        speakers: speakers.clone(),
        support: Vec::with_capacity(spec.n_classes * spec.n_support),
        support_labels: Vec::with_capacity(spec.n_classes * spec.n_support),
        query: Vec::with_capacity(spec.n_classes * spec.n_query),
        query_labels: Vec::with_capacity(spec.n_classes * spec.n_query),
    };
    for (class, &s) in speakers.iter().enumerate() {
        let members = &groups[s];
        let picks: Vec<usize> = if members.len() >= per {
            rng.sample_indices(members.len(), per)
        } else {
            (0..per).map(|_| rng.below(members.len())).collect()
        };
        for (k, &p) in picks.iter().enumerate() {
            let utt = &utts[members[p]];
            if k < spec.n_support {
                ep.support.push(crop(utt, spec.support_seconds, rng)?);
                ep.support_labels.push(class);
            } else {
                let (lo, hi) = spec.query_seconds;
                let seconds = if lo == hi {
                    lo
                } else {
                    rng.uniform_range(lo, hi)
                };
                ep.query.push(crop(utt, seconds, rng)?);
                ep.query_labels.push(class);
            }
        }
    }
    Ok(ep)
}

/// `batch_size` random crops of `seconds` from uniformly chosen utterances.
pub fn sample_batch(
    dataset: &Dataset,
    batch_size: usize,
    seconds: f64,
    rng: &mut Rng,
) -> Result<Vec<FrameSequence>> {
    let utts = dataset.utterances();
    if utts.is_empty() {
        return Err(Error::invalid(
            "cannot sample a batch from an empty dataset",
        ));
    }
    (0..batch_size)
        .map(|_| crop(&utts[rng.below(utts.len())], seconds, rng))
        .collect()
}
