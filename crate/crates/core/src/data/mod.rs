//! Frame sequences, time-axis normalization, cropping, feature files and
//! a synthetic speaker generator.

mod io;
mod synth;

pub use io::{
    format_features, load_dataset_dir, load_features, parse_features, save_dataset_dir,
    save_features,
};
pub use synth::{synth_dataset, synth_speakers, SynthConfig};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Frames per second assumed for every sequence in this crate (10 ms hop).
pub const DEFAULT_FRAME_RATE: f64 = 100.0;

/// Variance floor used by [`normalize_time_axis`].
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// A `T x F` block of frame features for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    features: Matrix,
    pub utterance_id: String,
    pub speaker: usize,
    pub frame_rate: f64,
    informative_mask: Option<Vec<bool>>,
}

impl FrameSequence {
    pub fn new(
        features: Matrix,
        utterance_id: impl Into<String>,
        speaker: usize,
        frame_rate: f64,
    ) -> Result<Self> {
        let seq = FrameSequence {
            features,
            utterance_id: utterance_id.into(),
            speaker,
            frame_rate,
            informative_mask: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.num_frames() {
            return Err(Error::shape(format!(
                "mask has {} entries for {} frames",
                mask.len(),
                self.num_frames()
            )));
        }
        self.informative_mask = Some(mask);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.features.rows() == 0 {
            return Err(Error::invalid(format!(
                "utterance {} has no frames",
                self.utterance_id
            )));
        }
        if self.features.cols() == 0 {
            return Err(Error::invalid(format!(
                "utterance {} has no feature dims",
                self.utterance_id
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::non_finite(format!(
                "utterance {} features",
                self.utterance_id
            )));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::invalid(format!(
                "frame rate {} must be positive",
                self.frame_rate
            )));
        }
        if self.utterance_id.is_empty() || self.utterance_id.contains(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "utterance id {:?} must be a non-empty token",
                self.utterance_id
            )));
        }
        Ok(())
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn informative_mask(&self) -> Option<&[bool]> {
        self.informative_mask.as_deref()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.num_frames() as f64 / self.frame_rate
    }

    fn derive(&self, features: Matrix, mask: Option<Vec<bool>>) -> FrameSequence {
        FrameSequence {
            features,
            utterance_id: self.utterance_id.clone(),
            speaker: self.speaker,
            frame_rate: self.frame_rate,
            informative_mask: mask,
        }
    }
}

/// A labelled collection of utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    utterances: Vec<FrameSequence>,
    num_speakers: usize,
}

impl Dataset {
    pub fn new(utterances: Vec<FrameSequence>, num_speakers: usize) -> Result<Self> {
        let mut counts = vec![0usize; num_speakers];
        for u in &utterances {
            match counts.get_mut(u.speaker) {
                Some(c) => *c += 1,
                None => {
                    return Err(Error::invalid(format!(
                        "utterance {} has speaker {} but only {num_speakers} speakers declared",
                        u.utterance_id, u.speaker
                    )))
                }
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("speaker {empty} has no utterances")));
        }
        if let Some(first) = utterances.first() {
            if let Some(bad) = utterances
                .iter()
                .find(|u| u.feature_dim() != first.feature_dim())
            {
                return Err(Error::shape(format!(
                    "utterance {} has {} feature dims, expected {}",
                    bad.utterance_id,
                    bad.feature_dim(),
                    first.feature_dim()
                )));
            }
        }
        Ok(Dataset {
            utterances,
            num_speakers,
        })
    }

    pub fn utterances(&self) -> &[FrameSequence] {
        &self.utterances
    }

    pub fn num_speakers(&self) -> usize {
        self.num_speakers
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.utterances.first().map(FrameSequence::feature_dim)
    }

    /// Utterance indices grouped by speaker.
    pub fn by_speaker(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_speakers];
        for (i, u) in self.utterances.iter().enumerate() {
            groups[u.speaker].push(i);
        }
        groups
    }

    pub fn find(&self, utterance_id: &str) -> Option<&FrameSequence> {
        self.utterances
            .iter()
            .find(|u| u.utterance_id == utterance_id)
    }

    pub fn map_utterances(&self, f: impl Fn(&FrameSequence) -> FrameSequence) -> Dataset {
        Dataset {
            utterances: self.utterances.iter().map(f).collect(),
            num_speakers: self.num_speakers,
        }
    }
}

/// Per-dimension mean and variance normalization over time.
///
/// Dimensions whose variance is below [`VARIANCE_FLOOR`] are divided by the
/// floor's square root, so constant columns become zeros.
pub fn normalize_time_axis(frames: &FrameSequence) -> FrameSequence {
    let x = frames.features();
    let (t, f) = (x.rows(), x.cols());
    let mut mean = vec![0.0; f];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; f];
    for row in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| 1.0 / (s / t as f64).max(VARIANCE_FLOOR).sqrt())
        .collect();
    let mut out = Matrix::zeros(t, f);
    for (i, row) in x.iter_rows().enumerate() {
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = (row[j] - mean[j]) * scale[j];
        }
    }
    frames.derive(out, frames.informative_mask.clone())
}

/// Number of frames covering `seconds` at `frame_rate`, at least one.
pub fn frames_for(seconds: f64, frame_rate: f64) -> usize {
    ((seconds * frame_rate).round() as usize).max(1)
}

/// A contiguous random window of `target_seconds`; shorter utterances are
/// returned whole.
pub fn crop(frames: &FrameSequence, target_seconds: f64, rng: &mut Rng) -> Result<FrameSequence> {
    if !(target_seconds.is_finite() && target_seconds > 0.0) {
        return Err(Error::invalid(format!(
            "crop length {target_seconds} s must be positive"
        )));
    }
    let want = frames_for(target_seconds, frames.frame_rate);
    let t = frames.num_frames();
    if want >= t {
        return Ok(frames.clone());
    }
    let start = rng.below(t - want + 1);
    Ok(crop_at(frames, start, want))
}

pub(crate) fn crop_at(frames: &FrameSequence, start: usize, len: usize) -> FrameSequence {
    let features = frames.features.slice_rows(start, start + len);
    let mask = frames
        .informative_mask
        .as_ref()
        .map(|m| m[start..start + len].to_vec());
    frames.derive(features, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;

    fn seq(rows: &[Vec<f64>]) -> FrameSequence {
        FrameSequence::new(Matrix::from_rows(rows).unwrap(), "u", 0, DEFAULT_FRAME_RATE).unwrap()
    }

    fn random_seq(t: usize, f: usize, seed: u64) -> FrameSequence {
        let mut rng = seeded_rng(seed);
        let data = (0..t * f).map(|_| 3.0 * rng.gaussian() + 1.0).collect();
        FrameSequence::new(
            Matrix::from_vec(t, f, data).unwrap(),
            "r",
            0,
            DEFAULT_FRAME_RATE,
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_and_bad_ids() {
        assert!(FrameSequence::new(Matrix::zeros(0, 3), "a", 0, 100.0).is_err());
        assert!(FrameSequence::new(Matrix::zeros(2, 3), "a b", 0, 100.0).is_err());
        assert!(FrameSequence::new(Matrix::zeros(2, 3), "a", 0, 0.0).is_err());
        let s = FrameSequence::new(Matrix::zeros(2, 3), "a", 0, 100.0).unwrap();
        assert!(s.with_mask(vec![true]).is_err());
    }

    #[test]
    fn normalize_constant_column_is_zero() {
        let out = normalize_time_axis(&seq(&[vec![5.0, 1.0], vec![5.0, 3.0]]));
        assert_eq!(out.features().get(0, 0), 0.0);
        assert_eq!(out.features().get(1, 0), 0.0);
        assert!((out.features().get(0, 1) + 1.0).abs() < 1e-12);
        assert!((out.features().get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_columns_have_zero_mean_unit_variance() {
        let out = normalize_time_axis(&random_seq(50, 7, 3));
        for j in 0..7 {
            let col: Vec<f64> = (0..50).map(|i| out.features().get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = normalize_time_axis(&random_seq(40, 5, 9));
        let twice = normalize_time_axis(&once);
        assert!(once.features().max_abs_diff(twice.features()) < 1e-9);
    }

    #[test]
    fn crop_lengths() {
        let s = random_seq(500, 4, 1);
        let mut rng = seeded_rng(2);
        assert_eq!(crop(&s, 2.0, &mut rng).unwrap().num_frames(), 200);
        assert_eq!(crop(&s, 10.0, &mut rng).unwrap(), s);
        assert_eq!(crop(&s, 5.0, &mut rng).unwrap(), s);
        assert!(crop(&s, 0.0, &mut rng).is_err());
    }

    #[test]
    fn crop_carries_mask() {
        let mask: Vec<bool> = (0..300).map(|i| i % 3 != 0).collect();
        let s = random_seq(300, 2, 4).with_mask(mask.clone()).unwrap();
        let mut rng = seeded_rng(5);
        let c = crop(&s, 1.0, &mut rng).unwrap();
        let m = c.informative_mask().unwrap();
        assert_eq!(m.len(), 100);
        // find the offset by matching the first frame
        let start = (0..=200)
            .find(|&k| s.features().row(k) == c.features().row(0))
            .unwrap();
        assert_eq!(m, &mask[start..start + 100]);
    }

    proptest! {
        #[test]
        fn crop_is_contiguous_and_bounded(t in 1usize..400, secs in 0.01f64..6.0, seed in 0u64..1000) {
            let s = random_seq(t, 3, seed);
            let mut rng = seeded_rng(seed);
            let c = crop(&s, secs, &mut rng).unwrap();
            prop_assert!(c.num_frames() <= t);
            let start = (0..=t - c.num_frames())
                .find(|&k| s.features().row(k) == c.features().row(0))
                .unwrap();
            for i in 0..c.num_frames() {
                prop_assert_eq!(c.features().row(i), s.features().row(start + i));
            }
        }
    }
}
