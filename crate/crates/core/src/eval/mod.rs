//! Verification scoring: trial lists, cosine scoring, EER, minDCF and DET
//! curves.
//!
//! A trial is accepted when `score >= threshold`. Miss and false-alarm
//! rates are step functions of the threshold, so the DET curve is sampled
//! at every distinct score plus `+inf`.

mod io;
mod trials;

pub use io::{
    format_det_csv, format_embeddings, format_scores, format_trials, parse_embeddings,
    parse_scores, parse_trials, ScoreLine,
};
pub use trials::{build_trials, duration_protocol, score_trials, Trial};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm};
use crate::objectives::ZERO_NORM;

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_score(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::shape(format!(
            "embeddings of length {} and {}",
            e1.len(),
            e2.len()
        )));
    }
    let (n1, n2) = (norm(e1), norm(e2));
    if n1 < ZERO_NORM || n2 < ZERO_NORM {
        return Err(Error::invalid("cosine score of a zero-norm embedding"));
    }
    Ok((dot(e1, e2) / (n1 * n2)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredTrialSet {
    pub trials: Vec<ScoredTrial>,
}

impl ScoredTrialSet {
    /// Anonymous trials from separate target and non-target score lists.
    pub fn from_scores(targets: &[f64], nontargets: &[f64]) -> Self {
        let mk = |target: bool, i: usize, &score: &f64| ScoredTrial {
            trial: Trial {
                enroll: format!("e{i}"),
                test: format!("t{i}"),
                target,
            },
            score,
        };
        let mut trials: Vec<ScoredTrial> = targets
            .iter()
            .enumerate()
            .map(|(i, s)| mk(true, i, s))
            .collect();
        trials.extend(nontargets.iter().enumerate().map(|(i, s)| mk(false, i, s)));
        ScoredTrialSet { trials }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let nt = self.trials.iter().filter(|t| t.trial.target).count();
        let nn = self.trials.len() - nt;
        if nt == 0 || nn == 0 {
            return Err(Error::invalid(format!(
                "need at least one target and one non-target trial, got {nt} and {nn}"
            )));
        }
        if let Some(bad) = self.trials.iter().find(|t| !t.score.is_finite()) {
            return Err(Error::non_finite(format!(
                "score {} for trial {} {}",
                bad.score, bad.trial.enroll, bad.trial.test
            )));
        }
        Ok((nt, nn))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfConfig {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub normalize: bool,
}

impl Default for DcfConfig {
    fn default() -> Self {
        DcfConfig {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
            normalize: true,
        }
    }
}

impl DcfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::invalid(format!(
                "p_target {} outside (0, 1)",
                self.p_target
            )));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::invalid("detection costs must be positive"));
        }
        Ok(())
    }

    /// Unnormalized detection cost at one operating point.
    pub fn cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        self.c_miss * p_miss * self.p_target + self.c_fa * p_fa * (1.0 - self.p_target)
    }

    /// Cost of the better of the two trivial systems (accept all, reject all).
    pub fn default_cost(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Operating points at every distinct score (ascending) and at `+inf`.
pub fn det_curve(set: &ScoredTrialSet) -> Result<Vec<DetPoint>> {
    let (nt, nn) = set.counts()?;
    let mut sorted: Vec<(f64, bool)> = set
        .trials
        .iter()
        .map(|t| (t.score, t.trial.target))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::new();
    let (mut targets_below, mut nontargets_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        points.push(DetPoint {
            threshold,
            p_miss: targets_below as f64 / nt as f64,
            p_fa: (nn - nontargets_below) as f64 / nn as f64,
        });
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(points)
}

/// Equal error rate from a DET curve: the crossing of `p_miss - p_fa`,
/// linearly interpolated between adjacent points. Returns `(eer, threshold)`.
pub fn eer_from_curve(points: &[DetPoint]) -> Result<(f64, f64)> {
    let diff = |p: &DetPoint| p.p_miss - p.p_fa;
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (da, db) = (diff(a), diff(b));
        if da == 0.0 {
            return Ok((a.p_fa, a.threshold));
        }
        if da < 0.0 && db >= 0.0 {
            let alpha = -da / (db - da);
            let eer = a.p_fa + alpha * (b.p_fa - a.p_fa);
            let threshold = if b.threshold.is_finite() {
                a.threshold + alpha * (b.threshold - a.threshold)
            } else {
                a.threshold
            };
            return Ok((eer, threshold));
        }
    }
    Err(Error::invalid("DET curve never crosses p_miss = p_fa"))
}

pub fn compute_eer(set: &ScoredTrialSet) -> Result<(f64, f64)> {
    eer_from_curve(&det_curve(set)?)
}

/// Minimum detection cost over all thresholds, normalized by
/// [`DcfConfig::default_cost`] when `cfg.normalize`. Returns
/// `(min_dcf, threshold)`; ties keep the lowest threshold.
pub fn compute_min_dcf(set: &ScoredTrialSet, cfg: &DcfConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let points = det_curve(set)?;
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in &points {
        let c = cfg.cost(p.p_miss, p.p_fa);
        if c < best.0 {
            best = (c, p.threshold);
        }
    }
    if cfg.normalize {
        best.0 /= cfg.default_cost();
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;

    fn fixture() -> ScoredTrialSet {
        ScoredTrialSet::from_scores(&[0.9, 0.8, 0.7, 0.4], &[0.5, 0.3, 0.2, 0.1])
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine_score(&[1.0, 2.0], &[-2.0, -4.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn perfect_separation() {
        let s = ScoredTrialSet::from_scores(&[0.9, 0.8], &[0.3, 0.1]);
        assert_eq!(compute_eer(&s).unwrap().0, 0.0);
        assert_eq!(compute_min_dcf(&s, &DcfConfig::default()).unwrap().0, 0.0);
    }

    #[test]
    fn four_plus_four_fixture() {
        let (eer, thr) = compute_eer(&fixture()).unwrap();
        assert_eq!(eer, 0.25);
        assert_eq!(thr, 0.5);
        let (dcf, dthr) = compute_min_dcf(&fixture(), &DcfConfig::default()).unwrap();
        assert_eq!(dcf, 0.25);
        assert!(dthr > 0.5 && dthr <= 0.7);
    }

    #[test]
    fn inverted_labels() {
        let s = ScoredTrialSet::from_scores(&[0.5, 0.3, 0.2, 0.1], &[0.9, 0.8, 0.7, 0.4]);
        assert!(compute_eer(&s).unwrap().0 >= 0.5);
    }

    #[test]
    fn missing_class_is_error() {
        let s = ScoredTrialSet::from_scores(&[0.5, 0.3], &[]);
        assert!(compute_eer(&s).is_err());
        assert!(compute_min_dcf(&s, &DcfConfig::default()).is_err());
        assert!(det_curve(&s).is_err());
        let bad = DcfConfig {
            p_target: 1.0,
            ..DcfConfig::default()
        };
        assert!(compute_min_dcf(&fixture(), &bad).is_err());
    }

    #[test]
    fn det_curve_shape() {
        let pts = det_curve(&fixture()).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!((pts[0].p_miss, pts[0].p_fa), (0.0, 1.0));
        let last = pts.last().unwrap();
        assert_eq!((last.p_miss, last.p_fa), (1.0, 0.0));
        for w in pts.windows(2) {
            assert!(w[0].threshold < w[1].threshold);
            assert!(w[0].p_miss <= w[1].p_miss && w[0].p_fa >= w[1].p_fa);
        }
        let tied = ScoredTrialSet::from_scores(&[0.5, 0.5, 0.9], &[0.5, 0.1]);
        assert_eq!(det_curve(&tied).unwrap().len(), 4);
    }

    #[test]
    fn eer_lies_between_adjacent_points() {
        let mut rng = seeded_rng(77);
        let t: Vec<f64> = (0..50).map(|_| rng.gaussian() + 1.0).collect();
        let n: Vec<f64> = (0..70).map(|_| rng.gaussian()).collect();
        let s = ScoredTrialSet::from_scores(&t, &n);
        let pts = det_curve(&s).unwrap();
        let (eer, _) = compute_eer(&s).unwrap();
        let ok = pts.windows(2).any(|w| {
            let lo = w[0].p_fa.min(w[1].p_fa).min(w[0].p_miss.min(w[1].p_miss));
            let hi = w[0].p_fa.max(w[1].p_fa).max(w[0].p_miss.max(w[1].p_miss));
            w[0].p_miss <= w[0].p_fa && w[1].p_miss >= w[1].p_fa && lo <= eer && eer <= hi
        });
        assert!(ok);
    }

    proptest! {
        #[test]
        fn bounded_and_rank_invariant(seed in 0u64..10_000, nt in 1usize..40, nn in 1usize..40) {
            let mut rng = seeded_rng(seed);
            // coarse scores to exercise ties
            let t: Vec<f64> = (0..nt).map(|_| (rng.gaussian() * 4.0 + 2.0).round() / 4.0).collect();
            let n: Vec<f64> = (0..nn).map(|_| (rng.gaussian() * 4.0).round() / 4.0).collect();
            let s = ScoredTrialSet::from_scores(&t, &n);
            let (eer, _) = compute_eer(&s).unwrap();
            let (dcf, _) = compute_min_dcf(&s, &DcfConfig::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&eer));
            prop_assert!((0.0..=1.0).contains(&dcf));
            let f = |x: &f64| (x * 0.7).exp() + 3.0;
            let mapped = ScoredTrialSet::from_scores(&t.iter().map(f).collect::<Vec<_>>(), &n.iter().map(f).collect::<Vec<_>>());
            prop_assert!((compute_eer(&mapped).unwrap().0 - eer).abs() < 1e-9);
            prop_assert!((compute_min_dcf(&mapped, &DcfConfig::default()).unwrap().0 - dcf).abs() < 1e-9);
        }
    }
}
