//! Differentiable predictors (linear and MLP with ReLU), the feature-wise
//! linear modulation layer, squared-error loss, exact backprop gradients,
//! and a central finite-difference oracle used to check them.
//!
//! Parameters pack into one flat vector: layer-major, weights before biases,
//! row-major weight matrices. The loss carries the 1/2 factor, so the
//! gradient of a single sample is `(f(x) - y) * df/dtheta`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;
use crate::task::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

/// Architecture of a predictor: layer sizes run input -> hidden... -> 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            layer_sizes: vec![input_dim, 1],
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], dropout_rate: f64) -> Self {
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(input_dim);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        ModelSpec {
            kind: ModelKind::Mlp,
            layer_sizes,
            activation: Activation::Relu,
            dropout_rate,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be non-empty and positive".into()));
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidConfig("output layer size must be 1".into()));
        }
        match self.kind {
            ModelKind::Linear if self.layer_sizes.len() != 2 => {
                Err(Error::InvalidConfig("linear model takes no hidden layers".into()))
            }
            _ if !(0.0..1.0).contains(&self.dropout_rate) => {
                Err(Error::InvalidConfig("dropout_rate must lie in [0,1)".into()))
            }
            _ => Ok(()),
        }
    }

    /// Offset of layer `l`'s weight block inside the flat parameter vector.
    fn weight_offset(&self, layer: usize) -> usize {
        self.layer_sizes
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flat parameter vector whose layout is derived from a `ModelSpec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Binary form: little-endian u32 layer-size header then the values as
    /// little-endian f64.
    pub fn to_blob(&self, spec: &ModelSpec) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * spec.layer_sizes.len() + 8 * self.values.len());
        out.extend_from_slice(&(spec.layer_sizes.len() as u32).to_le_bytes());
        for &s in &spec.layer_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for &v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of `to_blob`; returns the layer sizes and the vector.
    pub fn from_blob(bytes: &[u8]) -> Result<(Vec<usize>, ParamVector)> {
        let fail = |reason: &str| Error::MalformedFile {
            file: "<param blob>".into(),
            reason: reason.into(),
        };
        if bytes.len() < 4 {
            return Err(fail("truncated header"));
        }
        let n_sizes = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let mut offset = 4;
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            if bytes.len() < offset + 4 {
                return Err(fail("truncated layer sizes"));
            }
            sizes.push(u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize);
            offset += 4;
        }
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if bytes.len() != offset + 8 * expected {
            return Err(fail("value payload does not match layer sizes"));
        }
        let mut values = Vec::with_capacity(expected);
        for _ in 0..expected {
            values.push(f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()));
            offset += 8;
        }
        Ok((sizes, ParamVector { values }))
    }
}

/// Per-dimension affine modulation: `out = scale .* x + shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmCoefficients {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl FilmCoefficients {
    pub fn identity(dim: usize) -> Self {
        FilmCoefficients {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }
}

/// Gradient with the same layout as the `ParamVector` it differentiates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        Gradient { values: vec![0.0; n] }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Weights uniform in ±1/sqrt(fan_in), biases zero. Deterministic per seed.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = rng_for(seed, &[0x20]);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.random_range(-bound..bound));
        }
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(ParamVector { values })
}

/// Apply feature-wise modulation. Identity coefficients reproduce the input
/// verbatim (the component copy keeps -0.0 intact).
pub fn film_modulate(x: &[f64], coeffs: &FilmCoefficients) -> Result<Vec<f64>> {
    if coeffs.scale.len() != x.len() || coeffs.shift.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: coeffs.scale.len(),
        });
    }
    Ok(x.iter()
        .enumerate()
        .map(|(d, &v)| {
            if coeffs.scale[d] == 1.0 && coeffs.shift[d] == 0.0 {
                v
            } else {
                coeffs.scale[d] * v + coeffs.shift[d]
            }
        })
        .collect())
}

fn check_dims(spec: &ModelSpec, params: &ParamVector, x_len: usize) -> Result<()> {
    if x_len != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            got: x_len,
        });
    }
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    Ok(())
}

/// Inference forward pass; dropout is never applied here.
pub fn forward(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<f64> {
    check_dims(spec, params, x.len())?;
    let mut activation = x.to_vec();
    for layer in 0..spec.n_layers() {
        activation = layer_forward(spec, params, layer, &activation, None);
    }
    Ok(activation[0])
}

/// One dense layer; `mask_scale` carries inverted-dropout factors for the
/// hidden activations when training.
fn layer_forward(
    spec: &ModelSpec,
    params: &ParamVector,
    layer: usize,
    input: &[f64],
    mask_scale: Option<&[f64]>,
) -> Vec<f64> {
    let (n_in, n_out) = (spec.layer_sizes[layer], spec.layer_sizes[layer + 1]);
    let off = spec.weight_offset(layer);
    let weights = &params.values[off..off + n_in * n_out];
    let biases = &params.values[off + n_in * n_out..off + n_in * n_out + n_out];
    let last = layer == spec.n_layers() - 1;
    let mut out = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let mut z = biases[o];
        let row = &weights[o * n_in..(o + 1) * n_in];
        for (w, v) in row.iter().zip(input.iter()) {
            z += w * v;
        }
        let mut a = if last { z } else { z.max(0.0) };
        if let Some(scale) = mask_scale {
            a *= scale[o];
        }
        out.push(a);
    }
    out
}

/// Mean over the batch of `0.5 * (y - f(x))^2`, with optional feature
/// modulation applied before the forward pass.
pub fn loss_mse(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[Observation],
    coeffs: Option<&FilmCoefficients>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for obs in batch {
        let x = obs.x.flatten();
        let x = match coeffs {
            Some(c) => film_modulate(&x, c)?,
            None => x,
        };
        let f = forward(spec, params, &x)?;
        let r = obs.y - f;
        total += 0.5 * r * r;
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of the loss plus optional extras used by the training
/// loops (modulation-coefficient gradients, per-step dropout).
pub(crate) struct BatchBackward {
    #[cfg_attr(not(test), allow(dead_code))]
    pub loss: f64,
    pub grad: Gradient,
    /// (d loss / d scale, d loss / d shift), summed over the batch.
    pub film_grad: Option<(Vec<f64>, Vec<f64>)>,
}

pub(crate) fn batch_backward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[Observation],
    coeffs: Option<&FilmCoefficients>,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    want_film_grad: bool,
) -> Result<BatchBackward> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    spec.validate()?;
    let n_layers = spec.n_layers();
    let m = spec.input_dim();
    let inv_b = 1.0 / batch.len() as f64;
    let drop_p = spec.dropout_rate;

    let mut grad = Gradient::zeros(spec.param_count());
    let mut film_grad = want_film_grad.then(|| (vec![0.0; m], vec![0.0; m]));
    let mut loss = 0.0;

    for obs in batch {
        let raw_x = obs.x.flatten();
        check_dims(spec, params, raw_x.len())?;
        let x = match coeffs {
            Some(c) => film_modulate(&raw_x, c)?,
            None => raw_x.clone(),
        };

        // Forward with caches: activations per layer and the inverted-dropout
        // scale applied to each hidden activation.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut mask_scales: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_layers);
        activations.push(x);
        for layer in 0..n_layers {
            let last = layer == n_layers - 1;
            let mask = if !last && drop_p > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let keep = 1.0 - drop_p;
                    Some(
                        (0..spec.layer_sizes[layer + 1])
                            .map(|_| {
                                if rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect::<Vec<f64>>(),
                    )
                } else {
                    None
                }
            } else {
                None
            };
            let out = layer_forward(spec, params, layer, &activations[layer], mask.as_deref());
            activations.push(out);
            mask_scales.push(mask);
        }

        let f = activations[n_layers][0];
        let r = f - obs.y;
        loss += 0.5 * r * r * inv_b;

        // Backward. delta holds dL/d(activation of current layer output).
        let mut delta = vec![r * inv_b];
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (spec.layer_sizes[layer], spec.layer_sizes[layer + 1]);
            let off = spec.weight_offset(layer);
            let last = layer == n_layers - 1;

            // dL/dz: undo dropout scaling and the ReLU gate. The ReLU
            // subgradient at exactly zero is zero. Post-activation values are
            // positive iff the pre-activation was (masked units contribute
            // nothing either way).
            let mut dz = delta;
            if !last {
                let acts = &activations[layer + 1];
                match &mask_scales[layer] {
                    Some(scale) => {
                        for o in 0..n_out {
                            dz[o] = if scale[o] > 0.0 && acts[o] > 0.0 {
                                dz[o] * scale[o]
                            } else {
                                0.0
                            };
                        }
                    }
                    None => {
                        for o in 0..n_out {
                            if acts[o] <= 0.0 {
                                dz[o] = 0.0;
                            }
                        }
                    }
                }
            }

            let input = &activations[layer];
            let weights = &params.values[off..off + n_in * n_out];
            let mut d_input = vec![0.0; n_in];
            for o in 0..n_out {
                let g = dz[o];
                if g != 0.0 {
                    let w_row = &weights[o * n_in..(o + 1) * n_in];
                    let g_row = &mut grad.values[off + o * n_in..off + (o + 1) * n_in];
                    for i in 0..n_in {
                        g_row[i] += g * input[i];
                        d_input[i] += g * w_row[i];
                    }
                }
                grad.values[off + n_in * n_out + o] += g;
            }
            delta = d_input;
        }

        if let Some((d_scale, d_shift)) = film_grad.as_mut() {
            // delta now holds dL/d(modulated input).
            for d in 0..m {
                d_scale[d] += delta[d] * raw_x[d];
                d_shift[d] += delta[d];
            }
        }
    }

    Ok(BatchBackward {
        loss,
        grad,
        film_grad,
    })
}

/// Exact gradient of `loss_mse` with respect to the parameters.
pub fn grad_loss(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[Observation],
    coeffs: Option<&FilmCoefficients>,
) -> Result<Gradient> {
    let out = batch_backward(spec, params, batch, coeffs, None, false)?;
    if !out.grad.all_finite() {
        return Err(Error::NonFiniteGradient {
            context: "grad_loss".into(),
        });
    }
    Ok(out.grad)
}

/// Central finite differences per coordinate with step `1e-5 * max(1, |t|)`.
/// Test oracle; independent of the backprop path.
pub fn finite_diff_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[Observation],
    coeffs: Option<&FilmCoefficients>,
) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut probe = params.clone();
    let mut values = Vec::with_capacity(params.len());
    for d in 0..params.len() {
        let theta = params.values[d];
        let step = 1e-5 * theta.abs().max(1.0);
        probe.values[d] = theta + step;
        let up = loss_mse(spec, &probe, batch, coeffs)?;
        probe.values[d] = theta - step;
        let down = loss_mse(spec, &probe, batch, coeffs)?;
        probe.values[d] = theta;
        values.push((up - down) / (2.0 * step));
    }
    Ok(Gradient { values })
}

/// Smallest absolute hidden pre-activation across the batch; infinite for
/// models without hidden layers. The finite-difference oracle is only
/// trustworthy away from ReLU kinks, so randomized checks resample instances
/// until this margin is comfortable.
pub fn relu_kink_margin(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[Observation],
    coeffs: Option<&FilmCoefficients>,
) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for obs in batch {
        let x = obs.x.flatten();
        check_dims(spec, params, x.len())?;
        let mut activation = match coeffs {
            Some(c) => film_modulate(&x, c)?,
            None => x,
        };
        for layer in 0..spec.n_layers() {
            let (n_in, n_out) = (spec.layer_sizes[layer], spec.layer_sizes[layer + 1]);
            let off = spec.weight_offset(layer);
            let weights = &params.values[off..off + n_in * n_out];
            let biases = &params.values[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let mut z = biases[o];
                for (w, v) in weights[o * n_in..(o + 1) * n_in].iter().zip(activation.iter()) {
                    z += w * v;
                }
                if layer != spec.n_layers() - 1 {
                    margin = margin.min(z.abs());
                    out.push(z.max(0.0));
                } else {
                    out.push(z);
                }
            }
            activation = out;
        }
    }
    Ok(margin)
}

/// Relative sup-norm disagreement used by the gradient checks.
pub fn gradient_disagreement(analytic: &Gradient, reference: &Gradient) -> f64 {
    let diff = analytic
        .values
        .iter()
        .zip(reference.values.iter())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    diff / (1.0 + reference.sup_norm())
}

/// Compare backprop against the finite-difference oracle on randomized
/// (architecture, parameters, batch) instances sampled away from ReLU
/// kinks; returns the worst relative sup-norm disagreement.
pub fn gradient_check(instances: u64, seed: u64) -> Result<f64> {
    use crate::task::FeatureTuple;
    use rand_distr::{Distribution, StandardNormal};

    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = rng_for(seed, &[0x9e, i]);
        let (spec, params, batch) = loop {
            let m = rng.random_range(3..7usize);
            let spec = if rng.random::<bool>() {
                ModelSpec::linear(m)
            } else {
                ModelSpec::mlp(m, &[rng.random_range(2..8usize)], 0.0)
            };
            let param_seed: u64 = rng.random();
            let mut params = init_params(&spec, param_seed)?;
            for v in params.values.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 0.3 * z;
            }
            let batch: Vec<Observation> = (0..rng.random_range(1..6usize))
                .map(|_| {
                    let xs: Vec<f64> = (0..m)
                        .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect();
                    let y: f64 = StandardNormal.sample(&mut rng);
                    let n = xs.len() - 3;
                    Observation {
                        x: FeatureTuple {
                            product_features: xs[..n].to_vec(),
                            environment_features: vec![],
                            hist_price: xs[n],
                            hist_demand: xs[n + 1].abs(),
                            query_price: xs[n + 2],
                        },
                        y,
                    }
                })
                .collect();
            if relu_kink_margin(&spec, &params, &batch, None)? > 1e-3 {
                break (spec, params, batch);
            }
        };
        let analytic = grad_loss(&spec, &params, &batch, None)?;
        let numeric = finite_diff_grad(&spec, &params, &batch, None)?;
        worst = worst.max(gradient_disagreement(&analytic, &numeric));
    }
    Ok(worst)
}
