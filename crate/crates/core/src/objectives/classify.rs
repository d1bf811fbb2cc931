use crate::error::{Error, Result};
use crate::network::ClassifierParams;
use crate::numerics::{argmax, axpy, dot, log_sum_exp, norm, softmax_unchecked, Matrix};
use crate::objectives::ZERO_NORM;

/// Loss value, argmax predictions and gradients of a classification loss.
#[derive(Clone, Debug)]
pub struct ClassifierOutput {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub grad_embeddings: Matrix,
    pub grad_weights: Matrix,
}

impl ClassifierOutput {
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        let hits = self
            .predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}

pub(crate) fn check_labels(
    rows: &Matrix,
    labels: &[usize],
    classes: usize,
    what: &str,
) -> Result<()> {
    if rows.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} {what} but {} labels",
            rows.rows(),
            labels.len()
        )));
    }
    if rows.rows() == 0 {
        return Err(Error::invalid(format!("no {what}")));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

fn anchor_norms(anchors: &Matrix, what: &str) -> Result<Vec<f64>> {
    anchors
        .iter_rows()
        .enumerate()
        .map(|(j, w)| {
            let n = norm(w);
            if n < ZERO_NORM {
                Err(Error::invalid(format!("{what} {j} has zero norm")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Cross-entropy over logits `d(x_i, a_j) = x_iᵀ a_j / ‖a_j‖`, shared by the
/// softmax and prototypical losses.
pub(crate) fn scaled_cosine_ce(
    rows: &Matrix,
    anchors: &Matrix,
    labels: &[usize],
    what: &str,
) -> Result<ClassifierOutput> {
    if rows.cols() != anchors.cols() {
        return Err(Error::shape(format!(
            "embeddings are {}-d but {what}s are {}-d",
            rows.cols(),
            anchors.cols()
        )));
    }
    let norms = anchor_norms(anchors, what)?;
    let b = rows.rows() as f64;
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(rows.rows());
    let mut g_rows = Matrix::zeros(rows.rows(), rows.cols());
    let mut g_anchors = Matrix::zeros(anchors.rows(), anchors.cols());
    for (i, (x, &y)) in rows.iter_rows().zip(labels).enumerate() {
        let logits: Vec<f64> = anchors
            .iter_rows()
            .zip(&norms)
            .map(|(a, n)| dot(x, a) / n)
            .collect();
        loss += log_sum_exp(&logits) - logits[y];
        predictions.push(argmax(&logits).unwrap_or(0));
        let p = softmax_unchecked(&logits);
        for (j, a) in anchors.iter_rows().enumerate() {
            let c = (p[j] - if j == y { 1.0 } else { 0.0 }) / b;
            if c == 0.0 {
                continue;
            }
            let inv = 1.0 / norms[j];
            axpy(c * inv, a, g_rows.row_mut(i));
            // d/da (xᵀa/‖a‖) = (x - (xᵀa/‖a‖) â) / ‖a‖
            let ga = g_anchors.row_mut(j);
            axpy(c * inv, x, ga);
            axpy(-c * logits[j] * inv * inv, a, ga);
        }
    }
    Ok(ClassifierOutput {
        loss: loss / b,
        predictions,
        grad_embeddings: g_rows,
        grad_weights: g_anchors,
    })
}

/// Softmax cross-entropy over scaled-cosine logits against every class
/// weight.
pub fn softmax_loss(
    embeddings: &Matrix,
    labels: &[usize],
    classifier: &ClassifierParams,
) -> Result<ClassifierOutput> {
    check_labels(embeddings, labels, classifier.num_classes(), "embeddings")?;
    scaled_cosine_ce(embeddings, &classifier.weights, labels, "class weight")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmSoftmaxConfig {
    pub scale: f64,
    pub margin: f64,
}

impl Default for AmSoftmaxConfig {
    fn default() -> Self {
        AmSoftmaxConfig {
            scale: 40.0,
            margin: 0.1,
        }
    }
}

/// Additive-margin softmax: logits `s · (cos θ_j - m·[j = y])` with both the
/// embedding and class weights length-normalized. Predictions are the
/// argmax cosine, without margin.
pub fn am_softmax_loss(
    embeddings: &Matrix,
    labels: &[usize],
    classifier: &ClassifierParams,
    cfg: AmSoftmaxConfig,
) -> Result<ClassifierOutput> {
    check_labels(embeddings, labels, classifier.num_classes(), "embeddings")?;
    let w = &classifier.weights;
    if embeddings.cols() != w.cols() {
        return Err(Error::shape(format!(
            "embeddings are {}-d but class weights are {}-d",
            embeddings.cols(),
            w.cols()
        )));
    }
    if !(cfg.scale > 0.0 && cfg.margin >= 0.0) {
        return Err(Error::invalid("AM-Softmax needs s > 0 and m >= 0"));
    }
    let w_norms = anchor_norms(w, "class weight")?;
    let b = embeddings.rows() as f64;
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(embeddings.rows());
    let mut g_x = Matrix::zeros(embeddings.rows(), embeddings.cols());
    let mut g_w = Matrix::zeros(w.rows(), w.cols());
    for (i, (x, &y)) in embeddings.iter_rows().zip(labels).enumerate() {
        let xn = norm(x);
        if xn < ZERO_NORM {
            return Err(Error::invalid(format!("embedding {i} has zero norm")));
        }
        let cos: Vec<f64> = w
            .iter_rows()
            .zip(&w_norms)
            .map(|(wj, n)| dot(x, wj) / (xn * n))
            .collect();
        let logits: Vec<f64> = cos
            .iter()
            .enumerate()
            .map(|(j, c)| cfg.scale * (c - if j == y { cfg.margin } else { 0.0 }))
            .collect();
        loss += log_sum_exp(&logits) - logits[y];
        predictions.push(argmax(&cos).unwrap_or(0));
        let p = softmax_unchecked(&logits);
        for (j, wj) in w.iter_rows().enumerate() {
            let c = cfg.scale * (p[j] - if j == y { 1.0 } else { 0.0 }) / b;
            if c == 0.0 {
                continue;
            }
            // dcos/dx = (ŵ - cos x̂) / ‖x‖,  dcos/dw = (x̂ - cos ŵ) / ‖w‖
            let gx = g_x.row_mut(i);
            axpy(c / (xn * w_norms[j]), wj, gx);
            axpy(-c * cos[j] / (xn * xn), x, gx);
            let gw = g_w.row_mut(j);
            axpy(c / (xn * w_norms[j]), x, gw);
            axpy(-c * cos[j] / (w_norms[j] * w_norms[j]), wj, gw);
        }
    }
    Ok(ClassifierOutput {
        loss: loss / b,
        predictions,
        grad_embeddings: g_x,
        grad_weights: g_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, seeded_rng, GradCheckConfig, Rng};

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gaussian()).collect(),
        )
        .unwrap()
    }

    fn classifier(rows: &[Vec<f64>]) -> ClassifierParams {
        ClassifierParams {
            weights: Matrix::from_rows(rows).unwrap(),
        }
    }

    #[test]
    fn orthogonal_embedding_gives_ln_c() {
        let c = classifier(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 2.0],
            vec![0.0, -1.0, 1.0],
        ]);
        let x = Matrix::from_rows(&[vec![4.0, 0.0, 0.0]]).unwrap();
        let out = softmax_loss(&x, &[1], &c).unwrap();
        assert!((out.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_class_fixture() {
        // logits (1, 0)
        let c = classifier(&[vec![1.0, 0.0], vec![0.0, 3.0]]);
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let out = softmax_loss(&x, &[0], &c).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((out.loss - 0.3133).abs() < 1e-4);
        assert_eq!(out.predictions, vec![0]);
    }

    #[test]
    fn zero_weight_rejected() {
        let c = classifier(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(softmax_loss(&x, &[0], &c).is_err());
        assert!(softmax_loss(&x, &[2], &classifier(&[vec![1.0, 0.0], vec![0.0, 1.0]])).is_err());
        let zero_x = Matrix::zeros(1, 2);
        assert!(am_softmax_loss(
            &zero_x,
            &[0],
            &classifier(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            AmSoftmaxConfig::default()
        )
        .is_err());
    }

    #[test]
    fn am_softmax_defaults() {
        let cfg = AmSoftmaxConfig::default();
        assert_eq!((cfg.scale, cfg.margin), (40.0, 0.1));
    }

    #[test]
    fn am_softmax_fixture() {
        // cosines (1, -1), s = 1, m = 0
        let c = classifier(&[vec![2.0, 0.0], vec![-1.0, 0.0]]);
        let x = Matrix::from_rows(&[vec![0.5, 0.0]]).unwrap();
        let out = am_softmax_loss(
            &x,
            &[0],
            &c,
            AmSoftmaxConfig {
                scale: 1.0,
                margin: 0.0,
            },
        )
        .unwrap();
        assert!((out.loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((out.loss - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn am_softmax_collapses_to_cosine_softmax() {
        let mut rng = seeded_rng(21);
        let x = random_matrix(7, 5, &mut rng);
        let w = random_matrix(4, 5, &mut rng);
        let labels: Vec<usize> = (0..7).map(|i| i % 4).collect();
        let am = am_softmax_loss(
            &x,
            &labels,
            &ClassifierParams { weights: w.clone() },
            AmSoftmaxConfig {
                scale: 1.0,
                margin: 0.0,
            },
        )
        .unwrap();
        // Reference: plain softmax over raw cosines.
        let mut reference = 0.0;
        for (xi, &y) in x.iter_rows().zip(&labels) {
            let cos: Vec<f64> = w
                .iter_rows()
                .map(|wj| dot(xi, wj) / (norm(xi) * norm(wj)))
                .collect();
            let z: f64 = cos.iter().map(|c| c.exp()).sum();
            reference -= (cos[y].exp() / z).ln();
        }
        reference /= 7.0;
        assert!((am.loss - reference).abs() < 1e-12);
    }

    #[test]
    fn am_softmax_monotone_in_margin() {
        for seed in 0..10 {
            let mut rng = seeded_rng(seed);
            let x = random_matrix(6, 4, &mut rng);
            let c = ClassifierParams {
                weights: random_matrix(3, 4, &mut rng),
            };
            let labels = [0, 1, 2, 0, 1, 2];
            let losses: Vec<f64> = [0.0, 0.05, 0.1, 0.2]
                .iter()
                .map(|&m| {
                    am_softmax_loss(
                        &x,
                        &labels,
                        &c,
                        AmSoftmaxConfig {
                            scale: 40.0,
                            margin: m,
                        },
                    )
                    .unwrap()
                    .loss
                })
                .collect();
            assert!(losses.windows(2).all(|w| w[0] <= w[1]), "{losses:?}");
        }
    }

    #[test]
    fn softmax_invariant_to_weight_rescaling() {
        let mut rng = seeded_rng(8);
        let x = random_matrix(5, 4, &mut rng);
        let w = random_matrix(3, 4, &mut rng);
        let mut scaled = w.clone();
        for j in 0..3 {
            let c = 0.1 + 5.0 * j as f64;
            scaled.row_mut(j).iter_mut().for_each(|v| *v *= c);
        }
        let labels = [0, 1, 2, 1, 0];
        let a = softmax_loss(&x, &labels, &ClassifierParams { weights: w }).unwrap();
        let b = softmax_loss(&x, &labels, &ClassifierParams { weights: scaled }).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-9);
    }

    fn check(loss_fn: impl Fn(&Matrix, &ClassifierParams) -> Result<ClassifierOutput>, seed: u64) {
        let mut rng = seeded_rng(seed);
        let x = random_matrix(5, 4, &mut rng);
        let w = random_matrix(3, 4, &mut rng);
        let out = loss_fn(&x, &ClassifierParams { weights: w.clone() }).unwrap();
        let value = |ps: &[Matrix]| -> Result<f64> {
            Ok(loss_fn(
                &ps[0],
                &ClassifierParams {
                    weights: ps[1].clone(),
                },
            )?
            .loss)
        };
        let rep = grad_check(
            value,
            &[x, w],
            &[out.grad_embeddings, out.grad_weights],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(rep.passed(), "seed {seed}: {}", rep.max_rel_error());
    }

    #[test]
    fn softmax_gradients() {
        let labels = [0, 2, 1, 1, 0];
        for seed in 0..10 {
            check(|x, c| softmax_loss(x, &labels, c), 500 + seed);
        }
    }

    /// Rows clustered around one direction, so that at s = 40 the logits stay
    /// within a few units of each other and no gradient entry drops below the
    /// round-off floor of the central difference.
    pub(crate) fn clustered(rows: usize, cols: usize, spread: f64, rng: &mut Rng) -> Matrix {
        let centre: Vec<f64> = (0..cols).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect();
        let data = (0..rows)
            .flat_map(|_| {
                centre
                    .iter()
                    .map(|c| c + spread * rng.gaussian())
                    .collect::<Vec<_>>()
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn am_softmax_gradients() {
        let labels = [0, 2, 1, 1, 0];
        for seed in 0..10 {
            check(
                |x, c| {
                    am_softmax_loss(
                        x,
                        &labels,
                        c,
                        AmSoftmaxConfig {
                            scale: 4.0,
                            margin: 0.2,
                        },
                    )
                },
                700 + seed,
            );
            let mut rng = seeded_rng(600 + seed);
            let x = clustered(5, 4, 0.05, &mut rng);
            let w = clustered(3, 4, 0.05, &mut rng);
            let f = |x: &Matrix, w: &Matrix| {
                am_softmax_loss(
                    x,
                    &labels,
                    &ClassifierParams { weights: w.clone() },
                    AmSoftmaxConfig::default(),
                )
            };
            let out = f(&x, &w).unwrap();
            let rep = grad_check(
                |ps: &[Matrix]| Ok(f(&ps[0], &ps[1])?.loss),
                &[x, w],
                &[out.grad_embeddings, out.grad_weights],
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(rep.passed(), "s=40 seed {seed}: {}", rep.max_rel_error());
        }
    }
}
