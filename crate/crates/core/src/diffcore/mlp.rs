use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Tanh,
    Relu,
    Identity,
}

impl Nonlinearity {
    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Nonlinearity::Tanh => S::one() - y * y,
            Nonlinearity::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Nonlinearity::Identity => S::one(),
        }
    }
}

/// Dense MLP topology: layer widths from input to output plus the hidden
/// nonlinearity. Parameters for layer `j` are the row-major weight matrix
/// `(out_j, in_j)` followed by the bias `(out_j)`, concatenated over layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_widths: Vec<usize>,
    nonlinearity: Nonlinearity,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, nonlinearity: Nonlinearity) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "layer_widths needs at least input and output".into(),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(Self {
            layer_widths,
            nonlinearity,
        })
    }

    #[inline]
    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    #[inline]
    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    /// Number of parameterized (weight) layers.
    #[inline]
    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// `(fan_in, fan_out)` of layer `j`.
    #[inline]
    pub fn layer_dims(&self, j: usize) -> (usize, usize) {
        (self.layer_widths[j], self.layer_widths[j + 1])
    }

    /// `fan_in * fan_out + fan_out` for layer `j`.
    #[inline]
    pub fn layer_param_count(&self, j: usize) -> usize {
        let (fan_in, fan_out) = self.layer_dims(j);
        fan_in * fan_out + fan_out
    }

    /// Offset of layer `j`'s parameters in the flat parameter vector.
    pub fn layer_param_offset(&self, j: usize) -> usize {
        (0..j).map(|i| self.layer_param_count(i)).sum()
    }

    /// Total flat parameter count.
    pub fn param_count(&self) -> usize {
        (0..self.num_layers()).map(|j| self.layer_param_count(j)).sum()
    }

    fn check_params(&self, params: &[impl Sized]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters for widths {:?}, got {}",
                self.param_count(),
                self.layer_widths,
                params.len()
            )));
        }
        Ok(())
    }
}

/// Per-layer post-activation outputs of a batched forward pass, kept around
/// so backprop can run without re-evaluating the network.
#[derive(Debug, Clone)]
pub struct BatchTrace<S: Scalar> {
    batch_size: usize,
    /// `layer_outputs[j]` has shape `(batch_size, widths[j + 1])`.
    layer_outputs: Vec<Vec<S>>,
}

impl<S: Scalar> BatchTrace<S> {
    #[inline]
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Final-layer outputs, shape `(batch_size, output_dim)`.
    #[inline]
    pub fn outputs(&self) -> &[S] {
        self.layer_outputs.last().unwrap()
    }
}

/// One dense layer on a batch: `Y = X W^T + b`, then the activation.
/// `x` is `(n, fan_in)` row-major, `y` is `(n, fan_out)`.
fn layer_forward<S: Scalar>(
    x: &[S],
    n: usize,
    weights: &[S],
    bias: &[S],
    fan_in: usize,
    fan_out: usize,
    act: Nonlinearity,
    y: &mut Vec<S>,
) {
    y.clear();
    y.resize(n * fan_out, S::zero());
    // W is (fan_out, fan_in) row-major; pass its transposed view.
    S::gemm(
        n,
        fan_in,
        fan_out,
        S::one(),
        x,
        fan_in as isize,
        1,
        weights,
        1,
        fan_in as isize,
        S::zero(),
        y,
        fan_out as isize,
        1,
    );
    for row in y.chunks_exact_mut(fan_out) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = act.apply(*v + *b);
        }
    }
}

/// Batched forward pass recording per-layer activations.
///
/// `inputs` is `(n, input_dim)` row-major.
pub fn forward_batch<S: Scalar>(spec: &MlpSpec, params: &[S], inputs: &[S], n: usize) -> Result<BatchTrace<S>> {
    spec.check_params(params)?;
    if inputs.len() != n * spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "inputs length {} != batch {} x input_dim {}",
            inputs.len(),
            n,
            spec.input_dim()
        )));
    }
    let layers = spec.num_layers();
    let mut layer_outputs: Vec<Vec<S>> = Vec::with_capacity(layers);
    let mut offset = 0;
    for j in 0..layers {
        let (fan_in, fan_out) = spec.layer_dims(j);
        let w = &params[offset..offset + fan_in * fan_out];
        let b = &params[offset + fan_in * fan_out..offset + spec.layer_param_count(j)];
        offset += spec.layer_param_count(j);
        let act = if j + 1 == layers {
            Nonlinearity::Identity
        } else {
            spec.nonlinearity()
        };
        let x = if j == 0 {
            inputs
        } else {
            layer_outputs[j - 1].as_slice()
        };
        let mut y = Vec::new();
        layer_forward(x, n, w, b, fan_in, fan_out, act, &mut y);
        layer_outputs.push(y);
    }
    Ok(BatchTrace {
        batch_size: n,
        layer_outputs,
    })
}

/// Batched forward pass that keeps only the final outputs (planner hot path).
/// `out` is resized to `(n, output_dim)`.
pub fn forward_batch_into<S: Scalar>(
    spec: &MlpSpec,
    params: &[S],
    inputs: &[S],
    n: usize,
    out: &mut Vec<S>,
) -> Result<()> {
    spec.check_params(params)?;
    if inputs.len() != n * spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "inputs length {} != batch {} x input_dim {}",
            inputs.len(),
            n,
            spec.input_dim()
        )));
    }
    let layers = spec.num_layers();
    let mut ping: Vec<S> = Vec::new();
    let mut pong: Vec<S> = Vec::new();
    let mut offset = 0;
    for j in 0..layers {
        let (fan_in, fan_out) = spec.layer_dims(j);
        let w = &params[offset..offset + fan_in * fan_out];
        let b = &params[offset + fan_in * fan_out..offset + spec.layer_param_count(j)];
        offset += spec.layer_param_count(j);
        let act = if j + 1 == layers {
            Nonlinearity::Identity
        } else {
            spec.nonlinearity()
        };
        let dst = if j + 1 == layers { &mut *out } else { &mut pong };
        if j == 0 {
            layer_forward(inputs, n, w, b, fan_in, fan_out, act, dst);
        } else {
            layer_forward(&ping, n, w, b, fan_in, fan_out, act, dst);
        }
        if j + 1 < layers {
            std::mem::swap(&mut ping, &mut pong);
        }
    }
    Ok(())
}

/// Batched backprop. `output_grads` is `(n, output_dim)`; returns the flat
/// parameter gradient and the `(n, input_dim)` input gradient of
/// `sum_i <outputs_i, output_grads_i>`.
pub fn backward_batch<S: Scalar>(
    spec: &MlpSpec,
    params: &[S],
    inputs: &[S],
    trace: &BatchTrace<S>,
    output_grads: &[S],
) -> Result<(Vec<S>, Vec<S>)> {
    let mut param_grads = vec![S::zero(); spec.param_count()];
    let input_grads = backward_batch_into(spec, params, inputs, trace, output_grads, &mut param_grads)?;
    Ok((param_grads, input_grads))
}

/// [`backward_batch`] writing the parameter gradient into a caller-owned
/// buffer (overwrite semantics); hot paths reuse the buffer across calls.
pub fn backward_batch_into<S: Scalar>(
    spec: &MlpSpec,
    params: &[S],
    inputs: &[S],
    trace: &BatchTrace<S>,
    output_grads: &[S],
    param_grads: &mut [S],
) -> Result<Vec<S>> {
    spec.check_params(params)?;
    let n = trace.batch_size;
    if inputs.len() != n * spec.input_dim() {
        return Err(Error::DimensionMismatch("inputs vs trace batch".into()));
    }
    if output_grads.len() != n * spec.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "output_grads length {} != batch {} x output_dim {}",
            output_grads.len(),
            n,
            spec.output_dim()
        )));
    }
    if param_grads.len() != spec.param_count() {
        return Err(Error::DimensionMismatch("param_grads buffer length".into()));
    }
    let layers = spec.num_layers();
    // d_y: gradient w.r.t. the current layer's post-activation outputs.
    let mut d_y = output_grads.to_vec();
    let mut d_x: Vec<S> = Vec::new();
    for j in (0..layers).rev() {
        let (fan_in, fan_out) = spec.layer_dims(j);
        let offset = spec.layer_param_offset(j);
        let w = &params[offset..offset + fan_in * fan_out];
        let act = if j + 1 == layers {
            Nonlinearity::Identity
        } else {
            spec.nonlinearity()
        };
        let y = &trace.layer_outputs[j];
        // d_z = d_y * act'(y), in place.
        if act != Nonlinearity::Identity {
            for (dv, &yv) in d_y.iter_mut().zip(y.iter()) {
                *dv = *dv * act.grad_from_output(yv);
            }
        }
        let x = if j == 0 {
            inputs
        } else {
            trace.layer_outputs[j - 1].as_slice()
        };
        {
            let layer_grads = &mut param_grads[offset..offset + spec.layer_param_count(j)];
            let (dw, db) = layer_grads.split_at_mut(fan_in * fan_out);
            db.fill(S::zero());
            // dW = dZ^T X  -> (fan_out, fan_in)
            S::gemm(
                fan_out,
                n,
                fan_in,
                S::one(),
                &d_y,
                1,
                fan_out as isize,
                x,
                fan_in as isize,
                1,
                S::zero(),
                dw,
                fan_in as isize,
                1,
            );
            for row in d_y.chunks_exact(fan_out) {
                for (b, &dz) in db.iter_mut().zip(row) {
                    *b += dz;
                }
            }
        }
        // dX = dZ W -> (n, fan_in)
        d_x.clear();
        d_x.resize(n * fan_in, S::zero());
        S::gemm(
            n,
            fan_out,
            fan_in,
            S::one(),
            &d_y,
            fan_out as isize,
            1,
            w,
            fan_in as isize,
            1,
            S::zero(),
            &mut d_x,
            fan_in as isize,
            1,
        );
        std::mem::swap(&mut d_y, &mut d_x);
    }
    Ok(d_y)
}

/// Single-sample forward pass. Pure function of `(spec, params, input)`.
pub fn forward<S: Scalar>(spec: &MlpSpec, params: &[S], input: &[S]) -> Result<Vec<S>> {
    if input.len() != spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input length {} != input_dim {}",
            input.len(),
            spec.input_dim()
        )));
    }
    let mut out = Vec::new();
    forward_batch_into(spec, params, input, 1, &mut out)?;
    Ok(out)
}

/// Single-sample backprop: exact gradients of `<output, output_grad>` with
/// respect to the parameters and the input.
pub fn backward<S: Scalar>(
    spec: &MlpSpec,
    params: &[S],
    input: &[S],
    output_grad: &[S],
) -> Result<(Vec<S>, Vec<S>)> {
    if input.len() != spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input length {} != input_dim {}",
            input.len(),
            spec.input_dim()
        )));
    }
    let trace = forward_batch(spec, params, input, 1)?;
    backward_batch(spec, params, input, &trace, output_grad)
}
