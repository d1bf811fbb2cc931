use crate::error::{Error, Result};
use crate::numerics::{axpy, Matrix};
use crate::objectives::classify::{check_labels, scaled_cosine_ce};

/// Support and query embeddings of one episode; labels are `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support: Matrix,
    pub support_labels: Vec<usize>,
    pub query: Matrix,
    pub query_labels: Vec<usize>,
    pub num_classes: usize,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        check_labels(
            &self.support,
            &self.support_labels,
            self.num_classes,
            "support embeddings",
        )?;
        check_labels(
            &self.query,
            &self.query_labels,
            self.num_classes,
            "query embeddings",
        )?;
        if self.support.cols() != self.query.cols() {
            return Err(Error::shape(
                "support and query embeddings differ in dimension",
            ));
        }
        Ok(())
    }
}

/// Class means of the support set (`N x E`).
pub fn prototypes(episode: &Episode) -> Result<Matrix> {
    check_labels(
        &episode.support,
        &episode.support_labels,
        episode.num_classes,
        "support embeddings",
    )?;
    let mut sums = Matrix::zeros(episode.num_classes, episode.support.cols());
    let mut counts = vec![0usize; episode.num_classes];
    for (row, &c) in episode.support.iter_rows().zip(&episode.support_labels) {
        axpy(1.0, row, sums.row_mut(c));
        counts[c] += 1;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "class {empty} has no support examples"
        )));
    }
    for (c, &n) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(sums)
}

#[derive(Clone, Debug)]
pub struct ProtoOutput {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub grad_query: Matrix,
    pub grad_support: Matrix,
}

/// Cross-entropy of each query against the prototypes under the scaled
/// cosine distance. Gradients flow into queries and, through the class
/// means, into supports.
pub fn prototypical_loss(episode: &Episode, protos: &Matrix) -> Result<ProtoOutput> {
    episode.validate()?;
    if protos.rows() != episode.num_classes {
        return Err(Error::shape(format!(
            "{} prototypes for {} classes",
            protos.rows(),
            episode.num_classes
        )));
    }
    let out = scaled_cosine_ce(&episode.query, protos, &episode.query_labels, "prototype")?;
    let mut counts = vec![0usize; episode.num_classes];
    for &c in &episode.support_labels {
        counts[c] += 1;
    }
    let mut grad_support = Matrix::zeros(episode.support.rows(), episode.support.cols());
    for (k, &c) in episode.support_labels.iter().enumerate() {
        let n = counts[c] as f64;
        axpy(1.0 / n, out.grad_weights.row(c), grad_support.row_mut(k));
    }
    Ok(ProtoOutput {
        loss: out.loss,
        predictions: out.predictions,
        grad_query: out.grad_embeddings,
        grad_support,
    })
}
