//! Utterance-level forward and backward passes through extractor, pooling
//! and embedding head.

use crate::error::Result;
use crate::network::{
    embed_head, embed_head_backward, extractor_backward, extractor_forward, Dense, ExtractorCache,
    Model,
};
use crate::numerics::{axpy, Matrix};
use crate::pooling::{sap, sap_backward, tap, tap_backward, AttentionOutput, Pooling};

enum PoolState {
    Tap,
    Sap(AttentionOutput),
}

/// Activations of one utterance, kept for the backward pass.
pub struct UtteranceForward {
    frames: Matrix,
    cache: ExtractorCache,
    pool: PoolState,
    /// Pooled frame-level representation, before the head.
    pub pooled: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl UtteranceForward {
    /// Attention weights per frame; uniform under average pooling.
    pub fn weights(&self) -> Vec<f64> {
        match &self.pool {
            PoolState::Tap => vec![1.0 / self.frames.rows() as f64; self.frames.rows()],
            PoolState::Sap(out) => out.weights.clone(),
        }
    }

    pub fn attention(&self) -> Option<&AttentionOutput> {
        match &self.pool {
            PoolState::Tap => None,
            PoolState::Sap(out) => Some(out),
        }
    }
}

pub fn forward_utterance(
    model: &Model,
    pooling: Pooling,
    features: &Matrix,
) -> Result<UtteranceForward> {
    let (frames, cache) = extractor_forward(features, &model.extractor)?;
    let (pool, pooled) = match pooling {
        Pooling::Tap => (PoolState::Tap, tap(&frames)?),
        Pooling::Sap => {
            let out = sap(&frames, &model.projection, &model.context)?;
            let pooled = out.embedding.clone();
            (PoolState::Sap(out), pooled)
        }
    };
    let embedding = embed_head(&pooled, &model.head)?;
    Ok(UtteranceForward {
        frames,
        cache,
        pool,
        pooled,
        embedding,
    })
}

/// Utterance embedding (the head output).
pub fn embed(model: &Model, pooling: Pooling, features: &Matrix) -> Result<Vec<f64>> {
    Ok(forward_utterance(model, pooling, features)?.embedding)
}

pub(crate) fn add_dense(dst: &mut Dense, alpha: f64, src: &Dense) {
    dst.weight.add_scaled(alpha, &src.weight);
    dst.bias.add_scaled(alpha, &src.bias);
}

/// Accumulates into `grads` the gradient of a loss whose derivative is
/// `grad_embedding` at the head output plus `grad_pooled` at the pooled
/// representation.
pub fn backward_utterance(
    model: &Model,
    fwd: &UtteranceForward,
    grad_embedding: &[f64],
    grad_pooled: Option<&[f64]>,
    grads: &mut Model,
) {
    let mut g_pooled =
        embed_head_backward(&fwd.pooled, grad_embedding, &model.head, &mut grads.head);
    if let Some(extra) = grad_pooled {
        axpy(1.0, extra, &mut g_pooled);
    }
    let g_frames = match &fwd.pool {
        PoolState::Tap => tap_backward(fwd.frames.rows(), &g_pooled),
        PoolState::Sap(out) => {
            let g = sap_backward(
                &fwd.frames,
                out,
                &model.projection,
                &model.context,
                &g_pooled,
            );
            add_dense(&mut grads.projection.layer, 1.0, &g.projection.layer);
            axpy(1.0, &g.mu, grads.context.mu.data_mut());
            g.frames
        }
    };
    extractor_backward(
        &fwd.cache,
        &model.extractor,
        &g_frames,
        &mut grads.extractor,
        false,
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, ModelShape};
    use crate::numerics::{dot, grad_check, seeded_rng, GradCheckConfig, Rng};

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gaussian()).collect(),
        )
        .unwrap()
    }

    fn check_pipeline(pooling: Pooling, seed: u64) {
        let mut rng = seeded_rng(seed);
        let shape = ModelShape {
            input_dim: 3,
            hidden: vec![4],
            frame_dim: 3,
            embed_dim: 5,
            num_classes: 2,
        };
        let mut model = init_params(&shape, &mut rng).unwrap();
        model.context.mu = random_matrix(1, 3, &mut rng);
        model.projection.layer.bias = random_matrix(1, 3, &mut rng);
        let x = random_matrix(5, 3, &mut rng);
        let r_e = random_matrix(1, 5, &mut rng);
        let r_p = random_matrix(1, 3, &mut rng);
        let value = |ps: &[Matrix]| -> Result<f64> {
            let m = Model::from_tensors(&shape, ps.to_vec())?;
            let f = forward_utterance(&m, pooling, &x)?;
            Ok(dot(&f.embedding, r_e.data()) + dot(&f.pooled, r_p.data()))
        };
        let fwd = forward_utterance(&model, pooling, &x).unwrap();
        let mut grads = model.zeros_like();
        backward_utterance(&model, &fwd, r_e.data(), Some(r_p.data()), &mut grads);
        let params: Vec<Matrix> = model.tensors().into_iter().cloned().collect();
        let analytic: Vec<Matrix> = grads.tensors().into_iter().cloned().collect();
        let rep = grad_check(value, &params, &analytic, GradCheckConfig::default()).unwrap();
        assert!(
            rep.passed(),
            "{pooling:?} seed {seed}: {}",
            rep.max_rel_error()
        );
    }

    #[test]
    fn end_to_end_gradients() {
        for seed in 0..3 {
            check_pipeline(Pooling::Sap, seed);
            check_pipeline(Pooling::Tap, seed);
        }
    }

    #[test]
    fn tap_weights_are_uniform() {
        let mut rng = seeded_rng(1);
        let shape = ModelShape {
            input_dim: 2,
            hidden: vec![3],
            frame_dim: 2,
            embed_dim: 2,
            num_classes: 2,
        };
        let model = init_params(&shape, &mut rng).unwrap();
        let f = forward_utterance(&model, Pooling::Tap, &random_matrix(4, 2, &mut rng)).unwrap();
        assert_eq!(f.weights(), vec![0.25; 4]);
        assert!(f.attention().is_none());
    }
}
