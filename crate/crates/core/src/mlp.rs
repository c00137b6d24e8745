//! Fully-connected networks with hand-written backpropagation.
//!
//! Hidden layers use ReLU, the output layer is linear. Weight matrices are
//! stored as `(fan_in, fan_out)` so a batch of row vectors `X` maps to
//! `X · W + b`. Everything is `f64` so that central-difference gradient checks
//! are meaningful at tight tolerances.
//!
//! The optimizer is plain SGD with heavy-ball momentum, with the buffers kept
//! inside the network itself:
//!
//! ```text
//! buffer <- momentum * buffer + grad
//! param  <- param - lr * buffer
//! ```

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hidden widths used by both the policy and the value function unless configured otherwise.
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];

/// Multilayer perceptron with ReLU hidden units and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpJson", try_from = "MlpJson")]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    momentum: ParamGrads,
}

/// Gradients (or momentum buffers) with the same shapes as an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Addresses a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub kind: ParamKind,
    /// Row-major flat index into the weight matrix, or index into the bias vector.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Per-layer activations recorded by [`Mlp::forward_trace`], consumed by [`Mlp::backward_from`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    // activations[0] is the input, activations[l + 1] the output of layer l.
    activations: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace holds at least the input")
    }
}

impl Mlp {
    /// Builds a network with seeded He-uniform weights and zero biases.
    ///
    /// The final layer's weights are additionally multiplied by `output_scale`,
    /// which lets a policy start with near-zero means or logits.
    pub fn new(layer_dims: &[usize], seed: u64, output_scale: f64) -> Result<Self> {
        validate_dims(layer_dims)?;
        if !(output_scale > 0.0 && output_scale.is_finite()) {
            return Err(Error::Config(format!(
                "output_scale must be positive and finite, got {output_scale}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = layer_dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for (l, pair) in layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = init_bound(fan_in);
            let scale = if l + 1 == n_layers { output_scale } else { 1.0 };
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-bound..bound) * scale
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        let momentum = ParamGrads::zeros(layer_dims);
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            momentum,
        })
    }

    /// Convenience constructor: `input`, the given hidden widths, then `output`.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        seed: u64,
        output_scale: f64,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        Self::new(&dims, seed, output_scale)
    }

    /// Builds a network from explicit parameters. Momentum buffers start at zero.
    pub fn from_parameters(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Config(
                "need one bias vector per weight matrix and at least one layer".into(),
            ));
        }
        let mut dims = vec![weights[0].nrows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != dims[l] || w.ncols() != b.len() {
                return Err(Error::Shape(format!(
                    "layer {l}: weight {:?} does not chain with bias of length {}",
                    w.dim(),
                    b.len()
                )));
            }
            dims.push(w.ncols());
        }
        validate_dims(&dims)?;
        let momentum = ParamGrads::zeros(&dims);
        Ok(Self {
            layer_dims: dims,
            weights,
            biases,
            momentum,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated at construction")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn momentum(&self) -> &ParamGrads {
        &self.momentum
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Batched forward pass; one output row per input row.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_inputs(inputs)?;
        let last = self.num_layers() - 1;
        let mut h = inputs.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(w) + b;
            if l < last {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }

    /// Forward pass for a single input vector.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that keeps every layer's activations for a later backward pass.
    /// Which hidden pre-activations are positive, row by row and layer by layer.
    pub fn relu_pattern(&self, inputs: ArrayView2<'_, f64>) -> Vec<bool> {
        let mut h = inputs.to_owned();
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases).take(self.num_layers() - 1) {
            h = h.dot(w) + b;
            out.extend(h.iter().map(|&z| z > 0.0));
            h.mapv_inplace(relu);
        }
        out
    }

    pub fn forward_trace(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        self.check_inputs(inputs)?;
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(inputs.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut h = activations[l].dot(w) + b;
            if l < last {
                h.mapv_inplace(relu);
            }
            activations.push(h);
        }
        Ok(ForwardTrace { activations })
    }

    /// Gradients of `sum_rows(upstream . output)` with respect to every parameter.
    pub fn backward(
        &self,
        inputs: ArrayView2<'_, f64>,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<ParamGrads> {
        let trace = self.forward_trace(inputs)?;
        self.backward_from(&trace, upstream)
    }

    /// Backward pass reusing activations from [`Mlp::forward_trace`].
    pub fn backward_from(
        &self,
        trace: &ForwardTrace,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<ParamGrads> {
        let out = trace.output();
        if upstream.dim() != out.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let n = self.num_layers();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for l in (0..n).rev() {
            let a_in = &trace.activations[l];
            weights.push(a_in.t().dot(&delta));
            biases.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                // a_in is post-ReLU here, so a_in > 0 exactly where the unit was active.
                Zip::from(&mut back).and(a_in).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(ParamGrads { weights, biases })
    }

    /// One SGD-with-momentum update. Non-finite gradients are rejected before
    /// anything is modified.
    pub fn sgd_momentum_step(&mut self, grads: &ParamGrads, lr: f64, momentum: f64) -> Result<()> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "need lr > 0 and momentum in [0, 1), got lr={lr}, momentum={momentum}"
            )));
        }
        if !grads.same_shape(&self.momentum) {
            return Err(Error::Shape("gradient shapes do not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        let layers = self
            .weights
            .iter_mut()
            .zip(&mut self.momentum.weights)
            .zip(&grads.weights);
        for ((w, buf), g) in layers {
            Zip::from(w).and(buf).and(g).for_each(|p, v, &g| {
                *v = momentum * *v + g;
                *p -= lr * *v;
            });
        }
        let layers = self
            .biases
            .iter_mut()
            .zip(&mut self.momentum.biases)
            .zip(&grads.biases);
        for ((b, buf), g) in layers {
            Zip::from(b).and(buf).and(g).for_each(|p, v, &g| {
                *v = momentum * *v + g;
                *p -= lr * *v;
            });
        }
        Ok(())
    }

    /// Clears the momentum buffers.
    pub fn reset_momentum(&mut self) {
        self.momentum = ParamGrads::zeros(&self.layer_dims);
    }

    pub fn param(&self, id: ParamId) -> f64 {
        match id.kind {
            ParamKind::Weight => self.weights[id.layer][flat_to_2d(&self.weights[id.layer], id.index)],
            ParamKind::Bias => self.biases[id.layer][id.index],
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut f64 {
        match id.kind {
            ParamKind::Weight => {
                let ix = flat_to_2d(&self.weights[id.layer], id.index);
                &mut self.weights[id.layer][ix]
            }
            ParamKind::Bias => &mut self.biases[id.layer][id.index],
        }
    }

    fn check_inputs(&self, inputs: ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "expected inputs of width {}, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        Ok(())
    }
}

impl ParamGrads {
    /// All-zero gradients for a network with the given layer dims.
    pub fn zeros(layer_dims: &[usize]) -> Self {
        let weights = layer_dims
            .windows(2)
            .map(|p| Array2::zeros((p[0], p[1])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Self { weights, biases }
    }

    pub fn zeros_like(m: &Mlp) -> Self {
        Self::zeros(&m.layer_dims)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &ParamGrads) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.dim() == b.dim())
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match id.kind {
            ParamKind::Weight => self.weights[id.layer][flat_to_2d(&self.weights[id.layer], id.index)],
            ParamKind::Bias => self.biases[id.layer][id.index],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

// Row-major flat index into a matrix regardless of its memory layout.
fn flat_to_2d(m: &Array2<f64>, index: usize) -> (usize, usize) {
    let cols = m.ncols();
    (index / cols, index % cols)
}

/// Knobs for [`gradient_check`].
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// A parameter is flagged unless its relative error is strictly below this.
    pub tol: f64,
    /// Check at most this many randomly chosen entries per weight matrix and
    /// per bias vector. `None` checks everything.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
    /// Inputs the loss is evaluated on. When given, a parameter whose ± step
    /// flips the sign of any hidden pre-activation is reported as a kink and
    /// not compared, since ReLU is not differentiable there.
    pub inputs: Option<Array2<f64>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            max_per_tensor: None,
            seed: 0,
            inputs: None,
        }
    }
}

/// Largest errors seen in one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: usize,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
    pub flagged: Vec<ParamId>,
    pub kinks: Vec<ParamId>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| m.max(l.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Gradients whose magnitudes both fall under this are compared absolutely.
/// Round-off in a central difference of an O(1) loss is about 1e-11.
const REL_ERROR_FLOOR: f64 = 1e-6;

/// Relative disagreement between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient returned by `loss` against central differences.
///
/// `loss` maps a network to `(value, analytic gradient)`; only the value is used
/// for the numeric side.
pub fn gradient_check<F>(m: &Mlp, loss: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: Fn(&Mlp) -> (f64, ParamGrads),
{
    let (_, analytic) = loss(m);
    let mut probe = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut layers = Vec::with_capacity(m.num_layers());
    let mut flagged = Vec::new();
    let mut kinks = Vec::new();
    let pattern = |net: &Mlp| opts.inputs.as_ref().map(|x| net.relu_pattern(x.view()));
    let base = pattern(m);

    for layer in 0..m.num_layers() {
        let mut ids = Vec::new();
        let tensors = [
            (ParamKind::Weight, m.weights[layer].len()),
            (ParamKind::Bias, m.biases[layer].len()),
        ];
        for (kind, len) in tensors {
            let picked: Vec<usize> = match opts.max_per_tensor {
                Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
                _ => (0..len).collect(),
            };
            ids.extend(picked.into_iter().map(|index| ParamId { layer, kind, index }));
        }

        let mut max_err = 0.0_f64;
        for &id in &ids {
            let original = probe.param(id);
            *probe.param_mut(id) = original + opts.step;
            let plus = loss(&probe).0;
            let crossed_up = pattern(&probe) != base;
            *probe.param_mut(id) = original - opts.step;
            let minus = loss(&probe).0;
            let crossed_down = pattern(&probe) != base;
            *probe.param_mut(id) = original;
            if crossed_up || crossed_down {
                kinks.push(id);
                continue;
            }

            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(analytic.get(id), numeric);
            max_err = max_err.max(err);
            if !(err < opts.tol) {
                flagged.push(id);
            }
        }
        layers.push(LayerCheck {
            layer,
            checked: ids.len(),
            max_rel_error: max_err,
        });
    }
    GradCheckReport { layers, flagged, kinks }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn init_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "need at least an input and an output dimension, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config(format!(
            "layer dimensions must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

// Checkpoint layout: row-major nested arrays.
#[derive(Serialize, Deserialize)]
pub(crate) struct MlpJson {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    momentum: MomentumJson,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentumJson {
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], shape: (usize, usize)) -> Result<Array2<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Shape(format!(
            "checkpoint matrix is not {}x{}",
            shape.0, shape.1
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec(shape, flat).map_err(|e| Error::Shape(e.to_string()))
}

impl From<Mlp> for MlpJson {
    fn from(m: Mlp) -> Self {
        MlpJson {
            weights: m.weights.iter().map(matrix_to_rows).collect(),
            biases: m.biases.iter().map(|b| b.to_vec()).collect(),
            momentum: MomentumJson {
                weights: m.momentum.weights.iter().map(matrix_to_rows).collect(),
                biases: m.momentum.biases.iter().map(|b| b.to_vec()).collect(),
            },
            layer_dims: m.layer_dims,
        }
    }
}

impl TryFrom<MlpJson> for Mlp {
    type Error = Error;

    fn try_from(j: MlpJson) -> Result<Self> {
        validate_dims(&j.layer_dims)?;
        let n = j.layer_dims.len() - 1;
        if j.weights.len() != n
            || j.biases.len() != n
            || j.momentum.weights.len() != n
            || j.momentum.biases.len() != n
        {
            return Err(Error::Shape(format!(
                "checkpoint has the wrong number of layers for dims {:?}",
                j.layer_dims
            )));
        }
        let mut params = ParamGrads::zeros(&j.layer_dims);
        let mut momentum = ParamGrads::zeros(&j.layer_dims);
        for l in 0..n {
            let shape = (j.layer_dims[l], j.layer_dims[l + 1]);
            params.weights[l] = rows_to_matrix(&j.weights[l], shape)?;
            momentum.weights[l] = rows_to_matrix(&j.momentum.weights[l], shape)?;
            if j.biases[l].len() != shape.1 || j.momentum.biases[l].len() != shape.1 {
                return Err(Error::Shape(format!("checkpoint bias {l} has the wrong length")));
            }
            params.biases[l] = Array1::from(j.biases[l].clone());
            momentum.biases[l] = Array1::from(j.momentum.biases[l].clone());
        }
        Ok(Mlp {
            layer_dims: j.layer_dims,
            weights: params.weights,
            biases: params.biases,
            momentum,
        })
    }
}
