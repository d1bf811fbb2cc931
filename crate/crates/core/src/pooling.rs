//! Temporal average pooling and self-attentive pooling.
//!
//! SAP scores each frame by `h_tᵀ μ` with `h_t = tanh(W x_t + b)`, turns
//! the scores into weights with a softmax over time and returns the
//! weighted sum of the raw frames `x_t`.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{project_gphi_backward, ContextVector, ProjectionParams};
use crate::numerics::{argmax, axpy, dot, softmax_unchecked, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Tap,
    Sap,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Tap => "tap",
            Pooling::Sap => "sap",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tap" => Ok(Pooling::Tap),
            "sap" => Ok(Pooling::Sap),
            other => Err(Error::invalid(format!("unknown pooling {other:?}"))),
        }
    }
}

fn check_frames(frames: &Matrix) -> Result<()> {
    if frames.rows() == 0 {
        return Err(Error::invalid("cannot pool zero frames"));
    }
    Ok(())
}

/// Mean over frames.
pub fn tap(frames: &Matrix) -> Result<Vec<f64>> {
    check_frames(frames)?;
    let mut acc = vec![0.0; frames.cols()];
    for row in frames.iter_rows() {
        axpy(1.0, row, &mut acc);
    }
    let t = frames.rows() as f64;
    acc.iter_mut().for_each(|v| *v /= t);
    Ok(acc)
}

/// Gradient of [`tap`] wrt its frames.
pub fn tap_backward(num_frames: usize, grad_embedding: &[f64]) -> Matrix {
    let mut g = Matrix::zeros(num_frames, grad_embedding.len());
    let scale = 1.0 / num_frames as f64;
    for t in 0..num_frames {
        g.row_mut(t)
            .iter_mut()
            .zip(grad_embedding)
            .for_each(|(o, v)| *o = v * scale);
    }
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    /// `h_t` per frame (`T x D`).
    pub hidden: Matrix,
    /// `h_tᵀ μ` per frame.
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl AttentionOutput {
    /// Most attended frame; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.weights).unwrap_or(0)
    }

    /// `frame_index,score,weight,informative_mask` rows; the mask column is
    /// empty when no mask is known.
    pub fn to_csv(&self, mask: Option<&[bool]>) -> String {
        let mut out = String::from("frame_index,score,weight,informative_mask\n");
        for (t, (s, w)) in self.scores.iter().zip(&self.weights).enumerate() {
            let m = match mask.and_then(|m| m.get(t)) {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            let _ = writeln!(out, "{t},{s:?},{w:?},{m}");
        }
        out
    }
}

pub fn sap(
    frames: &Matrix,
    proj: &ProjectionParams,
    mu: &ContextVector,
) -> Result<AttentionOutput> {
    check_frames(frames)?;
    let d = frames.cols();
    if proj.layer.input_dim() != d || proj.layer.output_dim() != d || mu.dim() != d {
        return Err(Error::shape(format!(
            "frames are {d}-d but projection is {}x{} and context vector {}-d",
            proj.layer.output_dim(),
            proj.layer.input_dim(),
            mu.dim()
        )));
    }
    let mut hidden = proj.layer.affine_rows(frames);
    hidden.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    let scores: Vec<f64> = hidden.iter_rows().map(|h| dot(h, mu.values())).collect();
    let weights = softmax_unchecked(&scores);
    let mut embedding = vec![0.0; d];
    for (row, &w) in frames.iter_rows().zip(&weights) {
        axpy(w, row, &mut embedding);
    }
    Ok(AttentionOutput {
        hidden,
        scores,
        weights,
        embedding,
    })
}

/// Gradients produced by [`sap_backward`].
#[derive(Clone, Debug)]
pub struct SapGrads {
    pub frames: Matrix,
    pub projection: ProjectionParams,
    pub mu: Vec<f64>,
}

/// Backward of [`sap`] for an upstream gradient wrt the pooled embedding.
pub fn sap_backward(
    frames: &Matrix,
    out: &AttentionOutput,
    proj: &ProjectionParams,
    mu: &ContextVector,
    grad_embedding: &[f64],
) -> SapGrads {
    let (t, d) = (frames.rows(), frames.cols());
    let mut g_frames = Matrix::zeros(t, d);
    let mut g_proj = ProjectionParams {
        layer: crate::network::Dense::zeros(d, d),
    };
    let mut g_mu = vec![0.0; d];

    // e = Σ w_t x_t
    let g_w: Vec<f64> = frames.iter_rows().map(|x| dot(x, grad_embedding)).collect();
    for (i, &w) in out.weights.iter().enumerate() {
        axpy(w, grad_embedding, g_frames.row_mut(i));
    }
    // softmax over scores
    let mean_gw = dot(&out.weights, &g_w);
    for i in 0..t {
        let g_s = out.weights[i] * (g_w[i] - mean_gw);
        if g_s == 0.0 {
            continue;
        }
        let h = out.hidden.row(i);
        axpy(g_s, h, &mut g_mu);
        let g_h: Vec<f64> = mu.values().iter().map(|m| g_s * m).collect();
        let g_x = project_gphi_backward(frames.row(i), h, &g_h, proj, &mut g_proj);
        axpy(1.0, &g_x, g_frames.row_mut(i));
    }
    SapGrads {
        frames: g_frames,
        projection: g_proj,
        mu: g_mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Dense;
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

    fn random_proj(d: usize, rng: &mut Rng) -> ProjectionParams {
        ProjectionParams {
            layer: Dense {
                weight: random_matrix(d, d, rng),
                bias: random_matrix(1, d, rng),
            },
        }
    }

    #[test]
    fn tap_examples() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(tap(&x).unwrap(), vec![2.0, 3.0]);
        let one = Matrix::from_rows(&[vec![7.0, -1.0]]).unwrap();
        assert_eq!(tap(&one).unwrap(), vec![7.0, -1.0]);
        let swapped = x.select_rows(&[1, 0]);
        assert_eq!(tap(&swapped).unwrap(), tap(&x).unwrap());
        assert!(tap(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn zero_context_is_tap() {
        let mut rng = seeded_rng(1);
        let x = random_matrix(9, 4, &mut rng);
        let out = sap(&x, &random_proj(4, &mut rng), &ContextVector::zeros(4)).unwrap();
        assert!(out.weights.iter().all(|w| (w - 1.0 / 9.0).abs() < 1e-15));
        let mean = tap(&x).unwrap();
        for (a, b) in out.embedding.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_weight_one() {
        let mut rng = seeded_rng(2);
        let x = random_matrix(1, 3, &mut rng);
        let mu = ContextVector::from_slice(&[1.0, -2.0, 0.5]).unwrap();
        let out = sap(&x, &random_proj(3, &mut rng), &mu).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        assert_eq!(out.embedding, x.row(0).to_vec());
    }

    #[test]
    fn two_frame_weights_quarter_three_quarters() {
        // W = I, b = 0: h = tanh(x). Pick x so h_1 = 0 and h_2ᵀμ = ln 3.
        let proj = ProjectionParams {
            layer: Dense {
                weight: Matrix::identity(1),
                bias: Matrix::zeros(1, 1),
            },
        };
        let h2: f64 = 0.5;
        let mu = ContextVector::from_slice(&[3f64.ln() / h2]).unwrap();
        let x = Matrix::from_rows(&[vec![0.0], vec![h2.atanh()]]).unwrap();
        let out = sap(&x, &proj, &mu).unwrap();
        assert!((out.weights[0] - 0.25).abs() < 1e-12);
        assert!((out.weights[1] - 0.75).abs() < 1e-12);
        assert_eq!(out.argmax(), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = seeded_rng(3);
        let x = random_matrix(3, 4, &mut rng);
        assert!(sap(&x, &random_proj(3, &mut rng), &ContextVector::zeros(4)).is_err());
        assert!(sap(&x, &random_proj(4, &mut rng), &ContextVector::zeros(3)).is_err());
        assert!(sap(
            &Matrix::zeros(0, 4),
            &random_proj(4, &mut rng),
            &ContextVector::zeros(4)
        )
        .is_err());
    }

    #[test]
    fn csv_dump() {
        let mut rng = seeded_rng(4);
        let x = random_matrix(3, 2, &mut rng);
        let out = sap(
            &x,
            &random_proj(2, &mut rng),
            &ContextVector::from_slice(&[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let csv = out.to_csv(Some(&[true, false, true]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frame_index,score,weight,informative_mask");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,") && lines[2].ends_with(",0"));
    }

    fn sap_grad_case(seed: u64, zero_mu: bool) -> crate::numerics::GradCheckReport {
        let mut rng = seeded_rng(seed);
        let (t, d) = (6, 4);
        let x = random_matrix(t, d, &mut rng);
        let proj = random_proj(d, &mut rng);
        let mu = if zero_mu {
            Matrix::zeros(1, d)
        } else {
            random_matrix(1, d, &mut rng)
        };
        let r = random_matrix(1, d, &mut rng);
        let loss = |ps: &[Matrix]| -> Result<f64> {
            let p = ProjectionParams {
                layer: Dense {
                    weight: ps[1].clone(),
                    bias: ps[2].clone(),
                },
            };
            let out = sap(&ps[0], &p, &ContextVector { mu: ps[3].clone() })?;
            Ok(dot(&out.embedding, r.data()))
        };
        let ctx = ContextVector { mu: mu.clone() };
        let out = sap(&x, &proj, &ctx).unwrap();
        let g = sap_backward(&x, &out, &proj, &ctx, r.data());
        let params = vec![x, proj.layer.weight.clone(), proj.layer.bias.clone(), mu];
        let analytic = vec![
            g.frames,
            g.projection.layer.weight,
            g.projection.layer.bias,
            Matrix::row_vector(&g.mu).unwrap(),
        ];
        grad_check(loss, &params, &analytic, GradCheckConfig::default()).unwrap()
    }

    #[test]
    fn sap_gradients_match_finite_differences() {
        for seed in 0..10 {
            let rep = sap_grad_case(300 + seed, false);
            assert!(rep.passed(), "seed {seed}: {}", rep.max_rel_error());
            let rep = sap_grad_case(400 + seed, true);
            assert!(rep.passed(), "zero mu seed {seed}: {}", rep.max_rel_error());
        }
    }

    #[test]
    fn no_upstream_gives_zero_grads() {
        let mut rng = seeded_rng(5);
        let x = random_matrix(4, 3, &mut rng);
        let proj = random_proj(3, &mut rng);
        let mu = ContextVector::from_slice(&[0.3, -0.2, 1.0]).unwrap();
        let out = sap(&x, &proj, &mu).unwrap();
        let g = sap_backward(&x, &out, &proj, &mu, &[0.0; 3]);
        assert!(g.frames.data().iter().all(|&v| v == 0.0));
        assert!(g.mu.iter().all(|&v| v == 0.0));
        assert!(g.projection.layer.weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flipped_mu_gradient_is_caught() {
        let mut rng = seeded_rng(6);
        let x = random_matrix(5, 3, &mut rng);
        let proj = random_proj(3, &mut rng);
        let mu = random_matrix(1, 3, &mut rng);
        let r = [1.0, 1.0, 1.0];
        let ctx = ContextVector { mu: mu.clone() };
        let out = sap(&x, &proj, &ctx).unwrap();
        let g = sap_backward(&x, &out, &proj, &ctx, &r);
        let wrong: Vec<f64> = g.mu.iter().map(|v| -v).collect();
        let loss = |ps: &[Matrix]| -> Result<f64> {
            Ok(sap(&x, &proj, &ContextVector { mu: ps[0].clone() })?
                .embedding
                .iter()
                .sum())
        };
        let rep = grad_check(
            loss,
            &[mu],
            &[Matrix::row_vector(&wrong).unwrap()],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!rep.passed());
    }

    proptest! {
        #[test]
        fn weights_normalized_and_order_preserved_under_scaling(seed in 0u64..500, t in 1usize..12, c in 0.1f64..10.0) {
            let mut rng = seeded_rng(seed);
            let x = random_matrix(t, 3, &mut rng);
            let proj = random_proj(3, &mut rng);
            let mu = random_matrix(1, 3, &mut rng);
            let a = sap(&x, &proj, &ContextVector { mu: mu.clone() }).unwrap();
            prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a.weights.iter().all(|&w| w >= 0.0));
            let mut scaled = mu.clone();
            scaled.scale(c);
            let b = sap(&x, &proj, &ContextVector { mu: scaled }).unwrap();
            for i in 0..t {
                for j in 0..t {
                    if a.scores[i] > a.scores[j] + 1e-12 {
                        prop_assert!(b.weights[i] >= b.weights[j]);
                    }
                }
            }
        }

        #[test]
        fn frame_permutation(seed in 0u64..500, t in 1usize..12) {
            let mut rng = seeded_rng(seed);
            let x = random_matrix(t, 3, &mut rng);
            let proj = random_proj(3, &mut rng);
            let mu = ContextVector { mu: random_matrix(1, 3, &mut rng) };
            let mut order: Vec<usize> = (0..t).collect();
            rng.shuffle(&mut order);
            let a = sap(&x, &proj, &mu).unwrap();
            let b = sap(&x.select_rows(&order), &proj, &mu).unwrap();
            for (i, &o) in order.iter().enumerate() {
                prop_assert!((b.weights[i] - a.weights[o]).abs() < 1e-12);
            }
            for (p, q) in a.embedding.iter().zip(&b.embedding) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
