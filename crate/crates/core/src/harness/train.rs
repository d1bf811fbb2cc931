//! The training step: sample, forward, losses, feedback, backward, update.

use crate::data::{Dataset, FrameSequence};
use crate::error::{Error, Result};
use crate::network::{init_params, Checkpoint, Model};
use crate::numerics::{norm, Matrix, Rng};
use crate::objectives::{
    adf_loss, am_softmax_loss, anf_loss, apf_loss, feedback_partition, prototypes,
    prototypical_loss, softmax_loss, total_objective, ContextLossOutput, Episode, Feedback,
    LossParts, Variant, ZERO_NORM,
};

use super::config::{ExperimentConfig, Objective};
use super::episode::{sample_batch, sample_episode};
use super::optim::{sgd_step, LrSchedule, ScheduleEvent, SgdState};
use super::pipeline::{add_dense, backward_utterance, forward_utterance};

/// Random streams derived from the run seed.
pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const TRIALS: u64 = 3;
    pub const CROPS: u64 = 4;
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    /// Learning rate used for this step's update.
    pub lr: f64,
    pub total: f64,
    pub parts: LossParts,
    /// Whether the context loss had samples and a usable context vector.
    pub context_active: bool,
    /// Accuracy of the feedback-generating classifier on this step.
    pub accuracy: f64,
    pub event: ScheduleEvent,
}

pub struct Trainer {
    cfg: ExperimentConfig,
    data: Dataset,
    model: Model,
    state: SgdState,
    schedule: LrSchedule,
    rng: Rng,
    step: usize,
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::non_finite(format!("{what} is {v}")))
    }
}

impl Trainer {
    /// Initializes parameters from the config seed. `data` is used as is;
    /// feature normalization is the caller's concern.
    pub fn new(cfg: &ExperimentConfig, data: Dataset) -> Result<Self> {
        cfg.validate()?;
        let input_dim = data
            .feature_dim()
            .ok_or_else(|| Error::invalid("training set is empty"))?;
        let shape = cfg.model_shape(input_dim, data.num_speakers());
        let root = Rng::new(cfg.seed);
        let model = init_params(&shape, &mut root.derive(streams::INIT))?;
        Ok(Trainer {
            cfg: cfg.clone(),
            data,
            state: SgdState::new(&model),
            model,
            schedule: LrSchedule::new(&cfg.optimizer),
            rng: root.derive(streams::SAMPLING),
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            pooling: self.cfg.variant.pooling(),
            model: self.model.clone(),
        }
    }

    /// Runs one update. On error the parameters are left as they were.
    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = &self.cfg;
        let pooling = cfg.variant.pooling();
        let model = &self.model;

        // Utterances, their speaker labels, and which rows get feedback.
        let episodic = cfg.objective.is_episodic();
        let (utts, episode_labels, n_support): (
            Vec<FrameSequence>,
            Option<(Vec<usize>, Vec<usize>)>,
            usize,
        ) = if episodic {
            let ep = sample_episode(&self.data, &cfg.episode, &mut self.rng)?;
            let ns = ep.support.len();
            let mut utts = ep.support;
            utts.extend(ep.query);
            (utts, Some((ep.support_labels, ep.query_labels)), ns)
        } else {
            (
                sample_batch(&self.data, cfg.batch_size, cfg.crop_seconds, &mut self.rng)?,
                None,
                0,
            )
        };
        let labels: Vec<usize> = utts.iter().map(|u| u.speaker).collect();
        let fwds = utts
            .iter()
            .map(|u| forward_utterance(model, pooling, u.features()))
            .collect::<Result<Vec<_>>>()?;
        let embeddings =
            Matrix::from_rows(&fwds.iter().map(|f| f.embedding.clone()).collect::<Vec<_>>())?;

        let mut grads = model.zeros_like();
        let mut parts = LossParts::default();
        let classifier = match cfg.objective {
            Objective::AmSoftmax => {
                let out = am_softmax_loss(&embeddings, &labels, &model.classifier, cfg.am)?;
                parts.am_softmax = Some(check_finite("AM-Softmax loss", out.loss)?);
                out
            }
            Objective::Softmax | Objective::PlSoftmax => {
                let out = softmax_loss(&embeddings, &labels, &model.classifier)?;
                parts.softmax = Some(check_finite("softmax loss", out.loss)?);
                out
            }
        };
        grads
            .classifier
            .weights
            .add_scaled(1.0, &classifier.grad_weights);
        let mut grad_emb = classifier.grad_embeddings;

        let fb_rows: Vec<usize> = (n_support..utts.len()).collect();
        let feedback: Feedback = feedback_partition(
            &fb_rows
                .iter()
                .map(|&i| classifier.predictions[i])
                .collect::<Vec<_>>(),
            &fb_rows.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        )?;
        let accuracy = feedback.correct().len() as f64 / feedback.len() as f64;

        if let Some((support_labels, query_labels)) = episode_labels {
            let ep = Episode {
                support: embeddings.slice_rows(0, n_support),
                support_labels,
                query: embeddings.slice_rows(n_support, utts.len()),
                query_labels,
                num_classes: cfg.episode.n_classes,
            };
            let pl = prototypical_loss(&ep, &prototypes(&ep)?)?;
            parts.prototypical = Some(check_finite("prototypical loss", pl.loss)?);
            for k in 0..n_support {
                crate::numerics::axpy(1.0, pl.grad_support.row(k), grad_emb.row_mut(k));
            }
            for q in 0..pl.grad_query.rows() {
                crate::numerics::axpy(1.0, pl.grad_query.row(q), grad_emb.row_mut(n_support + q));
            }
        }

        let pooled_fb = Matrix::from_rows(
            &fb_rows
                .iter()
                .map(|&i| fwds[i].pooled.clone())
                .collect::<Vec<_>>(),
        )?;
        let (proj, mu, stop) = (&model.projection, &model.context, cfg.stop_gradient);
        let mu_usable = norm(mu.values()) >= ZERO_NORM;
        let context: Option<(ContextLossOutput, bool)> = match cfg.variant {
            Variant::Tap | Variant::Sap => None,
            Variant::Apf => {
                let members = feedback.correct();
                let active = !members.is_empty() && mu_usable;
                Some((apf_loss(&pooled_fb, &members, proj, mu, stop)?, active))
            }
            Variant::Anf => {
                let members = feedback.misclassified();
                let active = !members.is_empty() && mu_usable;
                Some((anf_loss(&pooled_fb, &members, proj, mu, stop)?, active))
            }
            Variant::Adf => {
                let members: Vec<usize> = (0..fb_rows.len()).collect();
                Some((
                    adf_loss(&pooled_fb, &members, &feedback, proj, mu, stop)?,
                    true,
                ))
            }
        };
        let lambda = cfg.lambda_mu;
        let mut grad_pooled: Vec<Option<Vec<f64>>> = vec![None; utts.len()];
        let mut context_active = false;
        if let Some((ctx, active)) = &context {
            parts.context = Some(check_finite("context loss", ctx.loss)?);
            context_active = *active;
            add_dense(
                &mut grads.projection.layer,
                lambda,
                &ctx.grad_projection.layer,
            );
            crate::numerics::axpy(lambda, &ctx.grad_mu, grads.context.mu.data_mut());
            for (r, &i) in fb_rows.iter().enumerate() {
                grad_pooled[i] = Some(
                    ctx.grad_embeddings
                        .row(r)
                        .iter()
                        .map(|g| lambda * g)
                        .collect(),
                );
            }
        }
        let mut bundle = total_objective(parts, cfg.variant, lambda)?;
        check_finite("total loss", bundle.total)?;

        for (i, fwd) in fwds.iter().enumerate() {
            backward_utterance(
                model,
                fwd,
                grad_emb.row(i),
                grad_pooled[i].as_deref(),
                &mut grads,
            );
        }
        let lr = self.schedule.lr();
        sgd_step(&mut self.model, &grads, &mut self.state, lr, &cfg.optimizer)?;
        bundle.gradients = Some(grads);
        self.step += 1;
        let event = self.schedule.observe(bundle.total, &cfg.optimizer);
        Ok(StepRecord {
            step: self.step,
            lr,
            total: bundle.total,
            parts: bundle.parts,
            context_active,
            accuracy,
            event,
        })
    }
}
