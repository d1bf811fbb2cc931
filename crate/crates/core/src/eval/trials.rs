use std::collections::HashMap;

use super::{cosine_score, ScoredTrial, ScoredTrialSet};
use crate::data::{crop, Dataset, FrameSequence};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One verification pair. `target` is true for same-speaker pairs.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

/// `k` draws from `0..n`, distinct until the pool is exhausted, then
/// continuing with fresh passes over the pool.
fn draw(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let take = (k - out.len()).min(n);
        out.extend(rng.sample_indices(n, take));
    }
    out
}

/// Per speaker, `pairs_per_speaker` same-speaker and as many
/// different-speaker pairs. The enrollment side of every pair belongs to the
/// speaker being sampled.
pub fn build_trials(
    dataset: &Dataset,
    pairs_per_speaker: usize,
    rng: &mut Rng,
) -> Result<Vec<Trial>> {
    if pairs_per_speaker == 0 {
        return Err(Error::invalid("pairs_per_speaker must be positive"));
    }
    if dataset.num_speakers() < 2 {
        return Err(Error::invalid("trials need at least two speakers"));
    }
    let groups = dataset.by_speaker();
    if let Some(s) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::invalid(format!(
            "speaker {s} has {} utterance(s); target trials need at least 2",
            groups[s].len()
        )));
    }
    let utts = dataset.utterances();
    let id = |i: usize| utts[i].utterance_id.clone();
    let mut trials = Vec::with_capacity(2 * pairs_per_speaker * groups.len());
    for (s, members) in groups.iter().enumerate() {
        let same: Vec<(usize, usize)> = (0..members.len())
            .flat_map(|a| (a + 1..members.len()).map(move |b| (a, b)))
            .map(|(a, b)| (members[a], members[b]))
            .collect();
        for k in draw(same.len(), pairs_per_speaker, rng) {
            let (a, b) = same[k];
            trials.push(Trial {
                enroll: id(a),
                test: id(b),
                target: true,
            });
        }
        let others: Vec<usize> = (0..utts.len()).filter(|&i| utts[i].speaker != s).collect();
        for k in draw(members.len() * others.len(), pairs_per_speaker, rng) {
            let (a, b) = (members[k / others.len()], others[k % others.len()]);
            trials.push(Trial {
                enroll: id(a),
                test: id(b),
                target: false,
            });
        }
    }
    Ok(trials)
}

fn lookup<'a>(
    dataset: &'a Dataset,
    index: &HashMap<&str, usize>,
    id: &str,
) -> Result<&'a FrameSequence> {
    index
        .get(id)
        .map(|&i| &dataset.utterances()[i])
        .ok_or_else(|| Error::invalid(format!("trial references unknown utterance {id}")))
}

/// Scores `trials` with full-length enrollment and test utterances cropped
/// to `test_seconds` (`None` keeps them whole). Each test utterance is
/// cropped once, in order of first appearance.
pub fn duration_protocol(
    dataset: &Dataset,
    mut embed: impl FnMut(&FrameSequence) -> Result<Vec<f64>>,
    trials: &[Trial],
    test_seconds: Option<f64>,
    rng: &mut Rng,
) -> Result<ScoredTrialSet> {
    let index: HashMap<&str, usize> = dataset
        .utterances()
        .iter()
        .enumerate()
        .map(|(i, u)| (u.utterance_id.as_str(), i))
        .collect();
    let mut full: HashMap<String, Vec<f64>> = HashMap::new();
    let mut cropped: HashMap<String, Vec<f64>> = HashMap::new();
    let mut scored = Vec::with_capacity(trials.len());
    for trial in trials {
        if !full.contains_key(&trial.enroll) {
            let e = embed(lookup(dataset, &index, &trial.enroll)?)?;
            full.insert(trial.enroll.clone(), e);
        }
        let cache = match test_seconds {
            None => &mut full,
            Some(_) => &mut cropped,
        };
        if !cache.contains_key(&trial.test) {
            let utt = lookup(dataset, &index, &trial.test)?;
            let e = match test_seconds {
                None => embed(utt)?,
                Some(seconds) => embed(&crop(utt, seconds, rng)?)?,
            };
            cache.insert(trial.test.clone(), e);
        }
        let test = match test_seconds {
            None => &full[&trial.test],
            Some(_) => &cropped[&trial.test],
        };
        scored.push(ScoredTrial {
            trial: trial.clone(),
            score: cosine_score(&full[&trial.enroll], test)?,
        });
    }
    Ok(ScoredTrialSet { trials: scored })
}

/// Scores `trials` against precomputed embeddings keyed by utterance id.
pub fn score_trials(
    embeddings: &HashMap<String, Vec<f64>>,
    trials: &[Trial],
) -> Result<ScoredTrialSet> {
    let get = |id: &str| {
        embeddings
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no embedding for utterance {id}")))
    };
    let scored = trials
        .iter()
        .map(|t| {
            Ok(ScoredTrial {
                trial: t.clone(),
                score: cosine_score(get(&t.enroll)?, get(&t.test)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoredTrialSet { trials: scored })
}
