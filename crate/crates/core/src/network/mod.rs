//! Trainable parameters: per-frame extractor, the shared tanh projection,
//! the context vector, the embedding head and the training-class
//! classifier, each with hand-written forward and backward passes.

mod checkpoint;

pub use checkpoint::{
    format_checkpoint, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint,
};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Rng};

/// Fully-connected layer; `weight` is `out x in`, `bias` is `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// `W x + b` for one vector.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weight.matvec(x);
        out.iter_mut()
            .zip(self.bias.data())
            .for_each(|(o, b)| *o += b);
        out
    }

    /// Row-wise `X Wᵀ + b` for `X` of shape `T x in`.
    pub fn affine_rows(&self, x: &Matrix) -> Matrix {
        let (t, out_dim) = (x.rows(), self.output_dim());
        let mut out = Matrix::zeros(t, out_dim);
        for (i, row) in x.iter_rows().enumerate() {
            let dst = out.row_mut(i);
            for (k, o) in dst.iter_mut().enumerate() {
                *o = dot(self.weight.row(k), row) + self.bias.data()[k];
            }
        }
        out
    }

    fn check_input(&self, dim: usize, what: &str) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::shape(format!(
                "{what} expects input dimension {}, got {dim}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Per-frame tanh MLP standing in for a convolutional trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams {
    pub layers: Vec<Dense>,
}

/// The projection `g(x) = tanh(W x + b)` shared by attention scoring and the
/// context-vector losses.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub layer: Dense,
}

/// The attention context vector, stored as a `1 x D` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVector {
    pub mu: Matrix,
}

impl ContextVector {
    pub fn zeros(dim: usize) -> Self {
        ContextVector {
            mu: Matrix::zeros(1, dim),
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Ok(ContextVector {
            mu: Matrix::row_vector(values)?,
        })
    }

    pub fn values(&self) -> &[f64] {
        self.mu.data()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }
}

/// Affine map from the pooled `D`-vector to the `E`-dimensional embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedHeadParams {
    pub layer: Dense,
}

/// One weight row per training class (`C x E`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub weights: Matrix,
}

impl ClassifierParams {
    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }
}

/// Layer sizes of a [`Model`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub frame_dim: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl ModelShape {
    /// `input_dim -> 64 -> 32` extractor, 256-d embedding.
    pub fn standard(input_dim: usize, num_classes: usize) -> Self {
        ModelShape {
            input_dim,
            hidden: vec![64],
            frame_dim: 32,
            embed_dim: 256,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.frame_dim == 0
            || self.embed_dim == 0
            || self.hidden.contains(&0)
        {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("classifier needs at least two classes"));
        }
        Ok(())
    }

    fn extractor_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.frame_dim);
        dims
    }
}

/// Every trainable tensor. The same type carries gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub extractor: ExtractorParams,
    pub projection: ProjectionParams,
    pub context: ContextVector,
    pub head: EmbedHeadParams,
    pub classifier: ClassifierParams,
}

impl Model {
    pub fn shape(&self) -> ModelShape {
        let layers = &self.extractor.layers;
        ModelShape {
            input_dim: layers[0].input_dim(),
            hidden: layers[..layers.len() - 1]
                .iter()
                .map(Dense::output_dim)
                .collect(),
            frame_dim: self.context.dim(),
            embed_dim: self.head.layer.output_dim(),
            num_classes: self.classifier.num_classes(),
        }
    }

    pub fn zeros(shape: &ModelShape) -> Self {
        let dims = shape.extractor_dims();
        Model {
            extractor: ExtractorParams {
                layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            },
            projection: ProjectionParams {
                layer: Dense::zeros(shape.frame_dim, shape.frame_dim),
            },
            context: ContextVector::zeros(shape.frame_dim),
            head: EmbedHeadParams {
                layer: Dense::zeros(shape.frame_dim, shape.embed_dim),
            },
            classifier: ClassifierParams {
                weights: Matrix::zeros(shape.num_classes, shape.embed_dim),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Model::zeros(&self.shape())
    }

    /// Tensor names in canonical order, matching [`Model::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.extractor.layers.len() {
            names.push(format!("extractor.{i}.weight"));
            names.push(format!("extractor.{i}.bias"));
        }
        names.extend(
            [
                "projection.weight",
                "projection.bias",
                "context.mu",
                "head.weight",
                "head.bias",
                "classifier.weight",
            ]
            .map(String::from),
        );
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.extractor.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend([
            &self.projection.layer.weight,
            &self.projection.layer.bias,
            &self.context.mu,
            &self.head.layer.weight,
            &self.head.layer.bias,
            &self.classifier.weights,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.extractor.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend([
            &mut self.projection.layer.weight,
            &mut self.projection.layer.bias,
            &mut self.context.mu,
            &mut self.head.layer.weight,
            &mut self.head.layer.bias,
            &mut self.classifier.weights,
        ]);
        out
    }

    /// Rebuilds a model from tensors in [`Model::tensors`] order.
    pub fn from_tensors(shape: &ModelShape, tensors: Vec<Matrix>) -> Result<Self> {
        let mut model = Model::zeros(shape);
        let slots = model.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::shape(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if !slot.same_shape(&t) {
                return Err(Error::shape(format!(
                    "tensor is {}x{}, expected {}x{}",
                    t.rows(),
                    t.cols(),
                    slot.rows(),
                    slot.cols()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Model) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(alpha, b);
        }
    }

    pub fn max_abs_diff(&self, other: &Model) -> f64 {
        self.tensors()
            .into_iter()
            .zip(other.tensors())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    m.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.uniform_range(-a, a));
    m
}

/// Glorot-uniform weights, zero biases, zero context vector.
pub fn init_params(shape: &ModelShape, rng: &mut Rng) -> Result<Model> {
    shape.validate()?;
    let mut model = Model::zeros(shape);
    for l in &mut model.extractor.layers {
        l.weight = xavier(l.output_dim(), l.input_dim(), rng);
    }
    model.projection.layer.weight = xavier(shape.frame_dim, shape.frame_dim, rng);
    model.head.layer.weight = xavier(shape.embed_dim, shape.frame_dim, rng);
    model.classifier.weights = xavier(shape.num_classes, shape.embed_dim, rng);
    Ok(model)
}

/// Activations kept by [`extractor_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ExtractorCache {
    /// Input followed by each layer's tanh output.
    activations: Vec<Matrix>,
}

/// Applies the MLP to every frame (`T x F` in, `T x D` out).
pub fn extractor_forward(
    frames: &Matrix,
    params: &ExtractorParams,
) -> Result<(Matrix, ExtractorCache)> {
    let first = params
        .layers
        .first()
        .ok_or_else(|| Error::invalid("extractor has no layers"))?;
    first.check_input(frames.cols(), "extractor")?;
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(frames.clone());
    for layer in &params.layers {
        let prev = activations.last().expect("non-empty");
        layer.check_input(prev.cols(), "extractor layer")?;
        let mut z = layer.affine_rows(prev);
        z.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        activations.push(z);
    }
    let out = activations.last().expect("non-empty").clone();
    Ok((out, ExtractorCache { activations }))
}

/// Backpropagates `grad_out` (`T x D`) through the extractor, accumulating
/// into `grads`. Returns the gradient wrt the input frames when requested.
pub fn extractor_backward(
    cache: &ExtractorCache,
    params: &ExtractorParams,
    grad_out: &Matrix,
    grads: &mut ExtractorParams,
    want_input_grad: bool,
) -> Option<Matrix> {
    let mut upstream = grad_out.clone();
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let out = &cache.activations[li + 1];
        let input = &cache.activations[li];
        // through tanh
        for (g, y) in upstream.data_mut().iter_mut().zip(out.data()) {
            *g *= 1.0 - y * y;
        }
        let g = &mut grads.layers[li];
        for t in 0..upstream.rows() {
            let gz = upstream.row(t);
            g.weight.add_outer(1.0, gz, input.row(t));
            crate::numerics::axpy(1.0, gz, g.bias.data_mut());
        }
        if li == 0 && !want_input_grad {
            return None;
        }
        let mut next = Matrix::zeros(input.rows(), input.cols());
        for t in 0..upstream.rows() {
            let gx = layer.weight.matvec_t(upstream.row(t));
            next.row_mut(t).copy_from_slice(&gx);
        }
        upstream = next;
    }
    Some(upstream)
}

/// `tanh(W x + b)`.
pub fn project_gphi(x: &[f64], params: &ProjectionParams) -> Result<Vec<f64>> {
    params.layer.check_input(x.len(), "projection")?;
    let mut h = params.layer.affine(x);
    h.iter_mut().for_each(|v| *v = v.tanh());
    Ok(h)
}

/// Backward of [`project_gphi`] given its output `h` and `grad_h`:
/// accumulates into `grads` and returns the gradient wrt `x`.
pub fn project_gphi_backward(
    x: &[f64],
    h: &[f64],
    grad_h: &[f64],
    params: &ProjectionParams,
    grads: &mut ProjectionParams,
) -> Vec<f64> {
    let gz: Vec<f64> = grad_h
        .iter()
        .zip(h)
        .map(|(g, y)| g * (1.0 - y * y))
        .collect();
    grads.layer.weight.add_outer(1.0, &gz, x);
    crate::numerics::axpy(1.0, &gz, grads.layer.bias.data_mut());
    params.layer.weight.matvec_t(&gz)
}

/// Affine embedding head, no activation.
pub fn embed_head(e: &[f64], params: &EmbedHeadParams) -> Result<Vec<f64>> {
    params.layer.check_input(e.len(), "embedding head")?;
    Ok(params.layer.affine(e))
}

/// Backward of [`embed_head`]; returns the gradient wrt `e`.
pub fn embed_head_backward(
    e: &[f64],
    grad_out: &[f64],
    params: &EmbedHeadParams,
    grads: &mut EmbedHeadParams,
) -> Vec<f64> {
    grads.layer.weight.add_outer(1.0, grad_out, e);
    crate::numerics::axpy(1.0, grad_out, grads.layer.bias.data_mut());
    params.layer.weight.matvec_t(grad_out)
}
