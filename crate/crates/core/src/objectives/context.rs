//! Supervised context-vector losses.
//!
//! Each loss projects pooled utterance vectors `e` through the shared
//! `g(e) = tanh(W e + b)` and compares them with the context vector `μ`.
//! APF pulls `μ` towards correctly classified samples, ANF pushes it away
//! from misclassified ones, ADF runs a two-way classifier with weights
//! `μ` (correct) and `-μ` (incorrect) over the whole set.

use crate::error::{Error, Result};
use crate::network::{project_gphi, project_gphi_backward, ContextVector, Dense, ProjectionParams};
use crate::numerics::{axpy, dot, logistic, norm, softplus, Matrix};
use crate::objectives::ZERO_NORM;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackFlag {
    Cor,
    In,
}

/// Per-sample correctness of the full-class classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Feedback {
    flags: Vec<FeedbackFlag>,
}

impl Feedback {
    pub fn from_flags(flags: Vec<FeedbackFlag>) -> Self {
        Feedback { flags }
    }

    pub fn flags(&self) -> &[FeedbackFlag] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    fn indices(&self, want: FeedbackFlag) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f == want)
            .map(|(i, _)| i)
            .collect()
    }

    /// Samples the classifier got right.
    pub fn correct(&self) -> Vec<usize> {
        self.indices(FeedbackFlag::Cor)
    }

    /// Samples the classifier got wrong.
    pub fn misclassified(&self) -> Vec<usize> {
        self.indices(FeedbackFlag::In)
    }

    pub fn swapped(&self) -> Feedback {
        Feedback {
            flags: self
                .flags
                .iter()
                .map(|f| match f {
                    FeedbackFlag::Cor => FeedbackFlag::In,
                    FeedbackFlag::In => FeedbackFlag::Cor,
                })
                .collect(),
        }
    }
}

pub fn feedback_partition(predictions: &[usize], labels: &[usize]) -> Result<Feedback> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(Feedback {
        flags: predictions
            .iter()
            .zip(labels)
            .map(|(p, l)| {
                if p == l {
                    FeedbackFlag::Cor
                } else {
                    FeedbackFlag::In
                }
            })
            .collect(),
    })
}

/// Value and gradients of a context-vector loss. `grad_embeddings` has one
/// row per input embedding; rows outside the loss's sample set are zero.
#[derive(Clone, Debug)]
pub struct ContextLossOutput {
    pub loss: f64,
    pub grad_embeddings: Matrix,
    pub grad_projection: ProjectionParams,
    pub grad_mu: Vec<f64>,
}

impl ContextLossOutput {
    fn zero(rows: usize, d: usize) -> Self {
        ContextLossOutput {
            loss: 0.0,
            grad_embeddings: Matrix::zeros(rows, d),
            grad_projection: ProjectionParams {
                layer: Dense::zeros(d, d),
            },
            grad_mu: vec![0.0; d],
        }
    }
}

fn check_inputs(
    embeddings: &Matrix,
    members: &[usize],
    proj: &ProjectionParams,
    mu: &ContextVector,
) -> Result<()> {
    let d = mu.dim();
    if embeddings.cols() != d || proj.layer.input_dim() != d || proj.layer.output_dim() != d {
        return Err(Error::shape(format!(
            "context losses need embeddings, projection and context vector of one dimension; got {}, {}x{}, {d}",
            embeddings.cols(),
            proj.layer.output_dim(),
            proj.layer.input_dim()
        )));
    }
    if let Some(bad) = members.iter().find(|&&i| i >= embeddings.rows()) {
        return Err(Error::invalid(format!("sample index {bad} out of range")));
    }
    Ok(())
}

/// `mean_{i ∈ members} sign · cos(g(e_i), μ)`.
fn cosine_loss(
    sign: f64,
    embeddings: &Matrix,
    members: &[usize],
    proj: &ProjectionParams,
    mu: &ContextVector,
    stop_gradient: bool,
) -> Result<ContextLossOutput> {
    check_inputs(embeddings, members, proj, mu)?;
    let d = mu.dim();
    let mut out = ContextLossOutput::zero(embeddings.rows(), d);
    if members.is_empty() {
        return Ok(out);
    }
    let mu_v = mu.values();
    let mu_norm = norm(mu_v);
    if mu_norm < ZERO_NORM {
        log::warn!("context vector has zero norm; cosine context loss taken as 0");
        return Ok(out);
    }
    let scale = sign / members.len() as f64;
    for &i in members {
        let e = embeddings.row(i);
        let q = project_gphi(e, proj)?;
        let q_norm = norm(&q);
        if q_norm < ZERO_NORM {
            continue;
        }
        let cos = dot(&q, mu_v) / (q_norm * mu_norm);
        out.loss += scale * cos;
        // dcos/dμ = q/(‖q‖‖μ‖) - cos μ/‖μ‖²
        axpy(scale / (q_norm * mu_norm), &q, &mut out.grad_mu);
        axpy(-scale * cos / (mu_norm * mu_norm), mu_v, &mut out.grad_mu);
        if !stop_gradient {
            let mut g_q = vec![0.0; d];
            axpy(scale / (q_norm * mu_norm), mu_v, &mut g_q);
            axpy(-scale * cos / (q_norm * q_norm), &q, &mut g_q);
            let g_e = project_gphi_backward(e, &q, &g_q, proj, &mut out.grad_projection);
            out.grad_embeddings.row_mut(i).copy_from_slice(&g_e);
        }
    }
    Ok(out)
}

/// Positive feedback: `-(1/|D_cor|) Σ cos(g(e), μ)` over correctly
/// classified samples `members`. Zero for an empty set or `μ = 0`.
pub fn apf_loss(
    embeddings: &Matrix,
    members: &[usize],
    proj: &ProjectionParams,
    mu: &ContextVector,
    stop_gradient: bool,
) -> Result<ContextLossOutput> {
    cosine_loss(-1.0, embeddings, members, proj, mu, stop_gradient)
}

/// Negative feedback: `(1/|D_mis|) Σ cos(g(e), μ)` over misclassified
/// samples `members`. Zero for an empty set or `μ = 0`.
pub fn anf_loss(
    embeddings: &Matrix,
    members: &[usize],
    proj: &ProjectionParams,
    mu: &ContextVector,
    stop_gradient: bool,
) -> Result<ContextLossOutput> {
    cosine_loss(1.0, embeddings, members, proj, mu, stop_gradient)
}

/// `p(z | e)` of the `±μ` classifier, evaluated in its two-exponential form.
pub fn adf_probability(
    e: &[f64],
    proj: &ProjectionParams,
    mu: &ContextVector,
    flag: FeedbackFlag,
) -> Result<f64> {
    let q = project_gphi(e, proj)?;
    if q.len() != mu.dim() {
        return Err(Error::shape(
            "context vector dimension differs from projection",
        ));
    }
    let a = dot(&q, mu.values());
    let (cor, inc) = (a, -a);
    let m = cor.max(inc);
    let (ec, ei) = ((cor - m).exp(), (inc - m).exp());
    Ok(match flag {
        FeedbackFlag::Cor => ec / (ec + ei),
        FeedbackFlag::In => ei / (ec + ei),
    })
}

/// Dual feedback: cross-entropy of the `±μ` classifier labelled by
/// `feedback`, averaged over `members`.
pub fn adf_loss(
    embeddings: &Matrix,
    members: &[usize],
    feedback: &Feedback,
    proj: &ProjectionParams,
    mu: &ContextVector,
    stop_gradient: bool,
) -> Result<ContextLossOutput> {
    check_inputs(embeddings, members, proj, mu)?;
    if feedback.len() != embeddings.rows() {
        return Err(Error::shape(format!(
            "{} feedback flags for {} embeddings",
            feedback.len(),
            embeddings.rows()
        )));
    }
    if members.is_empty() {
        return Err(Error::invalid("dual-feedback loss over an empty batch"));
    }
    let d = mu.dim();
    let mut out = ContextLossOutput::zero(embeddings.rows(), d);
    let mu_v = mu.values();
    let inv = 1.0 / members.len() as f64;
    for &i in members {
        let e = embeddings.row(i);
        let q = project_gphi(e, proj)?;
        let a = dot(&q, mu_v);
        // -log p(cor) = softplus(-2a), -log p(in) = softplus(2a)
        let (loss, dl_da) = match feedback.flags()[i] {
            FeedbackFlag::Cor => (softplus(-2.0 * a), -2.0 * logistic(-2.0 * a)),
            FeedbackFlag::In => (softplus(2.0 * a), 2.0 * logistic(2.0 * a)),
        };
        out.loss += inv * loss;
        axpy(inv * dl_da, &q, &mut out.grad_mu);
        if !stop_gradient {
            let g_q: Vec<f64> = mu_v.iter().map(|m| inv * dl_da * m).collect();
            let g_e = project_gphi_backward(e, &q, &g_q, proj, &mut out.grad_projection);
            out.grad_embeddings.row_mut(i).copy_from_slice(&g_e);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, seeded_rng, GradCheckConfig, Rng};
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gaussian()).collect(),
        )
        .unwrap()
    }

    fn identity_proj(d: usize) -> ProjectionParams {
        ProjectionParams {
            layer: Dense {
                weight: Matrix::identity(d),
                bias: Matrix::zeros(1, d),
            },
        }
    }

    fn random_proj(d: usize, rng: &mut Rng) -> ProjectionParams {
        ProjectionParams {
            layer: Dense {
                weight: random_matrix(d, d, rng),
                bias: random_matrix(1, d, rng),
            },
        }
    }

    #[test]
    fn feedback_examples() {
        let f = feedback_partition(&[1, 2], &[1, 0]).unwrap();
        assert_eq!(f.correct(), vec![0]);
        assert_eq!(f.misclassified(), vec![1]);
        assert!(feedback_partition(&[0, 1], &[0, 1])
            .unwrap()
            .misclassified()
            .is_empty());
        assert!(feedback_partition(&[1, 0], &[0, 1])
            .unwrap()
            .correct()
            .is_empty());
        assert!(feedback_partition(&[1], &[0, 1]).is_err());
    }

    #[test]
    fn apf_anf_parallel_and_orthogonal() {
        let p = identity_proj(2);
        // g(e) = tanh(e) along x when e = (1, 0)
        let e = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let along = ContextVector::from_slice(&[2.0, 0.0]).unwrap();
        let across = ContextVector::from_slice(&[0.0, 3.0]).unwrap();
        assert!((apf_loss(&e, &[0], &p, &along, false).unwrap().loss + 1.0).abs() < 1e-12);
        assert!(apf_loss(&e, &[0], &p, &across, false).unwrap().loss.abs() < 1e-12);
        assert!((anf_loss(&e, &[0], &p, &along, false).unwrap().loss - 1.0).abs() < 1e-12);
        assert_eq!(apf_loss(&e, &[], &p, &along, false).unwrap().loss, 0.0);
        assert_eq!(anf_loss(&e, &[], &p, &along, false).unwrap().loss, 0.0);
    }

    #[test]
    fn zero_context_cosine_losses_are_zero() {
        let p = identity_proj(2);
        let e = Matrix::from_rows(&[vec![1.0, 0.5]]).unwrap();
        let out = apf_loss(&e, &[0], &p, &ContextVector::zeros(2), false).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_mu.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn anf_descent_step_reduces_cosine() {
        let mut rng = seeded_rng(12);
        let p = random_proj(4, &mut rng);
        let e = random_matrix(3, 4, &mut rng);
        let mu = ContextVector {
            mu: random_matrix(1, 4, &mut rng),
        };
        let before = anf_loss(&e, &[0, 1, 2], &p, &mu, true).unwrap();
        let mut stepped = mu.clone();
        axpy(-1e-3, &before.grad_mu, stepped.mu.data_mut());
        let after = anf_loss(&e, &[0, 1, 2], &p, &stepped, true).unwrap();
        assert!(after.loss < before.loss);
    }

    #[test]
    fn adf_symmetric_point_is_ln2() {
        let p = identity_proj(2);
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let fb = Feedback::from_flags(vec![FeedbackFlag::Cor, FeedbackFlag::In]);
        let out = adf_loss(&e, &[0, 1], &fb, &p, &ContextVector::zeros(2), false).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
        let pc =
            adf_probability(e.row(0), &p, &ContextVector::zeros(2), FeedbackFlag::Cor).unwrap();
        assert!((pc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adf_probability_is_logistic_of_twice_logit() {
        let mut rng = seeded_rng(13);
        for _ in 0..100 {
            let p = random_proj(3, &mut rng);
            let e: Vec<f64> = (0..3).map(|_| 2.0 * rng.gaussian()).collect();
            let mu = ContextVector {
                mu: random_matrix(1, 3, &mut rng),
            };
            let a = dot(&project_gphi(&e, &p).unwrap(), mu.values());
            let pc = adf_probability(&e, &p, &mu, FeedbackFlag::Cor).unwrap();
            let pi = adf_probability(&e, &p, &mu, FeedbackFlag::In).unwrap();
            assert!((pc - logistic(2.0 * a)).abs() < 1e-12);
            assert!((pc + pi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adf_negation_symmetry() {
        let mut rng = seeded_rng(14);
        let p = random_proj(3, &mut rng);
        let e = random_matrix(5, 3, &mut rng);
        let mu = random_matrix(1, 3, &mut rng);
        let fb = Feedback::from_flags(vec![
            FeedbackFlag::Cor,
            FeedbackFlag::In,
            FeedbackFlag::In,
            FeedbackFlag::Cor,
            FeedbackFlag::Cor,
        ]);
        let mut neg = mu.clone();
        neg.scale(-1.0);
        let all = [0, 1, 2, 3, 4];
        let a = adf_loss(&e, &all, &fb, &p, &ContextVector { mu }, false)
            .unwrap()
            .loss;
        let b = adf_loss(
            &e,
            &all,
            &fb.swapped(),
            &p,
            &ContextVector { mu: neg },
            false,
        )
        .unwrap()
        .loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn stop_gradient_confines_to_mu() {
        let mut rng = seeded_rng(15);
        let p = random_proj(3, &mut rng);
        let e = random_matrix(2, 3, &mut rng);
        let mu = ContextVector {
            mu: random_matrix(1, 3, &mut rng),
        };
        let out = apf_loss(&e, &[0, 1], &p, &mu, true).unwrap();
        assert!(out.grad_embeddings.data().iter().all(|&g| g == 0.0));
        assert!(out
            .grad_projection
            .layer
            .weight
            .data()
            .iter()
            .all(|&g| g == 0.0));
        assert!(out.grad_mu.iter().any(|&g| g != 0.0));
    }

    type LossFn =
        fn(&Matrix, &[usize], &ProjectionParams, &ContextVector) -> Result<ContextLossOutput>;

    fn check(loss: LossFn, seed: u64) {
        let mut rng = seeded_rng(seed);
        let e = random_matrix(5, 4, &mut rng);
        let proj = random_proj(4, &mut rng);
        let mu = random_matrix(1, 4, &mut rng);
        let members = [0, 2, 3];
        let out = loss(&e, &members, &proj, &ContextVector { mu: mu.clone() }).unwrap();
        let value = |ps: &[Matrix]| -> Result<f64> {
            let p = ProjectionParams {
                layer: Dense {
                    weight: ps[1].clone(),
                    bias: ps[2].clone(),
                },
            };
            Ok(loss(&ps[0], &members, &p, &ContextVector { mu: ps[3].clone() })?.loss)
        };
        let params = [e, proj.layer.weight.clone(), proj.layer.bias.clone(), mu];
        let analytic = [
            out.grad_embeddings,
            out.grad_projection.layer.weight,
            out.grad_projection.layer.bias,
            Matrix::row_vector(&out.grad_mu).unwrap(),
        ];
        let rep = grad_check(value, &params, &analytic, GradCheckConfig::default()).unwrap();
        assert!(rep.passed(), "seed {seed}: {}", rep.max_rel_error());
    }

    #[test]
    fn gradients_match_finite_differences() {
        fn adf(
            e: &Matrix,
            m: &[usize],
            p: &ProjectionParams,
            mu: &ContextVector,
        ) -> Result<ContextLossOutput> {
            let fb = Feedback::from_flags(
                (0..e.rows())
                    .map(|i| {
                        if i % 2 == 0 {
                            FeedbackFlag::Cor
                        } else {
                            FeedbackFlag::In
                        }
                    })
                    .collect(),
            );
            adf_loss(e, m, &fb, p, mu, false)
        }
        fn apf(
            e: &Matrix,
            m: &[usize],
            p: &ProjectionParams,
            mu: &ContextVector,
        ) -> Result<ContextLossOutput> {
            apf_loss(e, m, p, mu, false)
        }
        fn anf(
            e: &Matrix,
            m: &[usize],
            p: &ProjectionParams,
            mu: &ContextVector,
        ) -> Result<ContextLossOutput> {
            anf_loss(e, m, p, mu, false)
        }
        for seed in 0..10 {
            check(apf, 900 + seed);
            check(anf, 1000 + seed);
            check(adf, 1100 + seed);
        }
    }

    proptest! {
        #[test]
        fn bounds(seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let p = random_proj(3, &mut rng);
            let e = random_matrix(4, 3, &mut rng);
            let mu = ContextVector { mu: random_matrix(1, 3, &mut rng) };
            let all = [0, 1, 2, 3];
            let a = apf_loss(&e, &all, &p, &mu, false).unwrap().loss;
            let n = anf_loss(&e, &all, &p, &mu, false).unwrap().loss;
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert!((-1.0..=1.0).contains(&n));
            let fb = Feedback::from_flags(vec![FeedbackFlag::Cor, FeedbackFlag::In, FeedbackFlag::Cor, FeedbackFlag::Cor]);
            prop_assert!(adf_loss(&e, &all, &fb, &p, &mu, false).unwrap().loss >= 0.0);
        }
    }
}
