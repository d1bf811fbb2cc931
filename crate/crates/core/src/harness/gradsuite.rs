//! Finite-difference checks of every differentiable operation.

use std::fmt::Write;

use crate::error::Result;
use crate::network::{
    embed_head, embed_head_backward, extractor_backward, extractor_forward, project_gphi,
    project_gphi_backward, ClassifierParams, ContextVector, Dense, EmbedHeadParams,
    ExtractorParams, ProjectionParams,
};
use crate::numerics::{dot, grad_check, GradCheckConfig, GradCheckReport, Matrix, Rng};
use crate::objectives::{
    adf_loss, am_softmax_loss, anf_loss, apf_loss, prototypes, prototypical_loss, softmax_loss,
    AmSoftmaxConfig, ContextLossOutput, Episode, Feedback, FeedbackFlag,
};
use crate::pooling::{sap, sap_backward};

/// Operations covered by [`gradient_suite`], in report order.
pub const SUITE_OPS: [&str; 10] = [
    "extractor",
    "projection",
    "embed_head",
    "sap",
    "softmax",
    "am_softmax",
    "prototypical",
    "apf",
    "anf",
    "adf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub op: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gaussian()).collect(),
    )
    .expect("finite")
}

/// Weights at initialization scale, keeping tanh units out of saturation.
fn weights(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut w = gaussian(rows, cols, rng);
    w.scale(1.0 / (cols as f64).sqrt());
    w
}

/// Points near `e_0` with small spread: keeps AM-Softmax logits at scale 40
/// unsaturated, so every gradient entry sits above finite-difference noise.
fn clustered(rows: usize, cols: usize, spread: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|k| f64::from(u8::from(k % cols == 0)) + spread * rng.gaussian())
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite")
}

fn dense(ps: &[Matrix], at: usize) -> Dense {
    Dense {
        weight: ps[at].clone(),
        bias: ps[at + 1].clone(),
    }
}

fn row(v: &[f64]) -> Matrix {
    Matrix::row_vector(v).expect("finite")
}

fn check_op(op: &str, rng: &mut Rng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    match op {
        "extractor" => {
            let (x, l1, l2) = (
                gaussian(5, 3, rng),
                Dense {
                    weight: weights(4, 3, rng),
                    bias: gaussian(1, 4, rng),
                },
                Dense {
                    weight: weights(3, 4, rng),
                    bias: gaussian(1, 3, rng),
                },
            );
            let r = gaussian(5, 3, rng);
            let params = ExtractorParams {
                layers: vec![l1, l2],
            };
            let (_, cache) = extractor_forward(&x, &params)?;
            let mut g = ExtractorParams {
                layers: vec![Dense::zeros(3, 4), Dense::zeros(4, 3)],
            };
            let gx = extractor_backward(&cache, &params, &r, &mut g, true)
                .expect("input gradient requested");
            let value = |ps: &[Matrix]| {
                let p = ExtractorParams {
                    layers: vec![dense(ps, 1), dense(ps, 3)],
                };
                Ok(dot(extractor_forward(&ps[0], &p)?.0.data(), r.data()))
            };
            let [a, b] = [&params.layers[0], &params.layers[1]];
            let [ga, gb] = [&g.layers[0], &g.layers[1]];
            grad_check(
                value,
                &[
                    x,
                    a.weight.clone(),
                    a.bias.clone(),
                    b.weight.clone(),
                    b.bias.clone(),
                ],
                &[
                    gx,
                    ga.weight.clone(),
                    ga.bias.clone(),
                    gb.weight.clone(),
                    gb.bias.clone(),
                ],
                cfg,
            )
        }
        "projection" => {
            let x = gaussian(1, 4, rng);
            let p = ProjectionParams {
                layer: Dense {
                    weight: weights(4, 4, rng),
                    bias: gaussian(1, 4, rng),
                },
            };
            let r = gaussian(1, 4, rng);
            let h = project_gphi(x.data(), &p)?;
            let mut g = ProjectionParams {
                layer: Dense::zeros(4, 4),
            };
            let gx = project_gphi_backward(x.data(), &h, r.data(), &p, &mut g);
            let value = |ps: &[Matrix]| {
                Ok(dot(
                    &project_gphi(
                        ps[0].data(),
                        &ProjectionParams {
                            layer: dense(ps, 1),
                        },
                    )?,
                    r.data(),
                ))
            };
            grad_check(
                value,
                &[x, p.layer.weight.clone(), p.layer.bias.clone()],
                &[row(&gx), g.layer.weight, g.layer.bias],
                cfg,
            )
        }
        "embed_head" => {
            let e = gaussian(1, 4, rng);
            let p = EmbedHeadParams {
                layer: Dense {
                    weight: weights(6, 4, rng),
                    bias: gaussian(1, 6, rng),
                },
            };
            let r = gaussian(1, 6, rng);
            let mut g = EmbedHeadParams {
                layer: Dense::zeros(4, 6),
            };
            let ge = embed_head_backward(e.data(), r.data(), &p, &mut g);
            let value = |ps: &[Matrix]| {
                Ok(dot(
                    &embed_head(
                        ps[0].data(),
                        &EmbedHeadParams {
                            layer: dense(ps, 1),
                        },
                    )?,
                    r.data(),
                ))
            };
            grad_check(
                value,
                &[e, p.layer.weight.clone(), p.layer.bias.clone()],
                &[row(&ge), g.layer.weight, g.layer.bias],
                cfg,
            )
        }
        "sap" => {
            let x = gaussian(6, 4, rng);
            let p = ProjectionParams {
                layer: Dense {
                    weight: weights(4, 4, rng),
                    bias: gaussian(1, 4, rng),
                },
            };
            let mu = ContextVector {
                mu: gaussian(1, 4, rng),
            };
            let r = gaussian(1, 4, rng);
            let out = sap(&x, &p, &mu)?;
            let g = sap_backward(&x, &out, &p, &mu, r.data());
            let value = |ps: &[Matrix]| {
                let out = sap(
                    &ps[0],
                    &ProjectionParams {
                        layer: dense(ps, 1),
                    },
                    &ContextVector { mu: ps[3].clone() },
                )?;
                Ok(dot(&out.embedding, r.data()))
            };
            grad_check(
                value,
                &[
                    x,
                    p.layer.weight.clone(),
                    p.layer.bias.clone(),
                    mu.mu.clone(),
                ],
                &[
                    g.frames,
                    g.projection.layer.weight,
                    g.projection.layer.bias,
                    row(&g.mu),
                ],
                cfg,
            )
        }
        "softmax" | "am_softmax" => {
            let labels = [0, 2, 1, 1, 0];
            let am = op == "am_softmax";
            let (x, w) = if am {
                (clustered(5, 4, 0.05, rng), clustered(3, 4, 0.05, rng))
            } else {
                (gaussian(5, 4, rng), gaussian(3, 4, rng))
            };
            let f = |x: &Matrix, w: &Matrix| {
                let c = ClassifierParams { weights: w.clone() };
                if am {
                    am_softmax_loss(x, &labels, &c, AmSoftmaxConfig::default())
                } else {
                    softmax_loss(x, &labels, &c)
                }
            };
            let out = f(&x, &w)?;
            grad_check(
                |ps: &[Matrix]| Ok(f(&ps[0], &ps[1])?.loss),
                &[x, w],
                &[out.grad_embeddings, out.grad_weights],
                cfg,
            )
        }
        "prototypical" => {
            let (support, query) = (gaussian(6, 4, rng), gaussian(5, 4, rng));
            let episode = |s: &Matrix, q: &Matrix| Episode {
                support: s.clone(),
                support_labels: vec![0, 1, 2, 0, 1, 2],
                query: q.clone(),
                query_labels: vec![2, 0, 1, 1, 0],
                num_classes: 3,
            };
            let ep = episode(&support, &query);
            let out = prototypical_loss(&ep, &prototypes(&ep)?)?;
            let value = |ps: &[Matrix]| {
                let ep = episode(&ps[0], &ps[1]);
                Ok(prototypical_loss(&ep, &prototypes(&ep)?)?.loss)
            };
            grad_check(
                value,
                &[support, query],
                &[out.grad_support, out.grad_query],
                cfg,
            )
        }
        "apf" | "anf" | "adf" => {
            let e = gaussian(5, 4, rng);
            let p = ProjectionParams {
                layer: Dense {
                    weight: weights(4, 4, rng),
                    bias: gaussian(1, 4, rng),
                },
            };
            let mu = gaussian(1, 4, rng);
            let feedback = Feedback::from_flags(
                (0..5)
                    .map(|i| {
                        if i % 2 == 0 {
                            FeedbackFlag::Cor
                        } else {
                            FeedbackFlag::In
                        }
                    })
                    .collect(),
            );
            let loss = |e: &Matrix,
                        p: &ProjectionParams,
                        mu: &ContextVector|
             -> Result<ContextLossOutput> {
                match op {
                    "apf" => apf_loss(e, &feedback.correct(), p, mu, false),
                    "anf" => anf_loss(e, &feedback.misclassified(), p, mu, false),
                    _ => adf_loss(e, &[0, 1, 2, 3, 4], &feedback, p, mu, false),
                }
            };
            let out = loss(&e, &p, &ContextVector { mu: mu.clone() })?;
            let value = |ps: &[Matrix]| {
                Ok(loss(
                    &ps[0],
                    &ProjectionParams {
                        layer: dense(ps, 1),
                    },
                    &ContextVector { mu: ps[3].clone() },
                )?
                .loss)
            };
            grad_check(
                value,
                &[e, p.layer.weight.clone(), p.layer.bias.clone(), mu],
                &[
                    out.grad_embeddings,
                    out.grad_projection.layer.weight,
                    out.grad_projection.layer.bias,
                    row(&out.grad_mu),
                ],
                cfg,
            )
        }
        other => Err(crate::Error::invalid(format!("unknown operation {other}"))),
    }
}

/// Runs every operation in [`SUITE_OPS`] for seeds `0..seeds`. Each
/// (operation, seed) pair draws its inputs from its own random stream.
pub fn gradient_suite(seeds: u64, cfg: GradCheckConfig) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::with_capacity(SUITE_OPS.len() * seeds as usize);
    for (k, op) in SUITE_OPS.iter().enumerate() {
        for seed in 0..seeds {
            let mut rng = Rng::new(seed).derive(k as u64);
            let rep = check_op(op, &mut rng, cfg)?;
            out.push(SuiteResult {
                op,
                seed,
                max_rel_error: rep.max_rel_error(),
                passed: rep.passed(),
            });
        }
    }
    Ok(out)
}

/// CSV of suite results.
pub fn render_suite(results: &[SuiteResult]) -> String {
    let mut out = String::from("op,seed,max_rel_error,passed\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{:e},{}",
            r.op, r.seed, r.max_rel_error, r.passed
        );
    }
    out
}
