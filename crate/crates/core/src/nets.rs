//! Fully connected networks used for the primal DNN, the adversarial test
//! function and the two XNODE sub-networks.
//!
//! Parameters live in one flat buffer, layer by layer: the weight matrix in
//! row-major order (one row per output unit) followed by the bias vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xwan_autodiff::Scalar;

use crate::error::{Error, Result};
use crate::jet::Jet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

/// Shape of a feed-forward network. The activation is applied to hidden
/// layers only; the output layer is affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config(format!("network widths must be at least 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// Network parameters with their configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub params: Vec<f64>,
}

impl MlpParams {
    /// Xavier-uniform weights, zero biases.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(config.param_count());
        for (fan_in, fan_out) in config.layer_shapes() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let params = vec![0.0; config.param_count()];
        Ok(Self { config, params })
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(&self.config, &self.params, input)
    }

    /// Product over layers of the largest absolute row sum. Bounds the
    /// sup-norm Lipschitz constant for 1-Lipschitz activations.
    pub fn lipschitz_bound(&self) -> f64 {
        let mut offset = 0;
        let mut bound = 1.0;
        for (fan_in, fan_out) in self.config.layer_shapes() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let row_max = w
                .chunks(fan_in)
                .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            bound *= row_max;
            offset += fan_in * fan_out + fan_out;
        }
        bound
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("network parameters serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let p: Self = serde_json::from_value(value.clone()).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_params(p.config, p.params)
    }
}

fn check_dims(config: &MlpConfig, n_weights: usize, n_inputs: usize) -> Result<()> {
    if n_inputs != config.input_dim {
        return Err(Error::Shape(format!(
            "network expects {} inputs, got {}",
            config.input_dim, n_inputs
        )));
    }
    if n_weights != config.param_count() {
        return Err(Error::Shape(format!(
            "network expects {} weights, got {}",
            config.param_count(),
            n_weights
        )));
    }
    Ok(())
}

/// Evaluate the network with the given weights, which may be tape variables.
pub fn mlp_forward<S: Scalar>(config: &MlpConfig, weights: &[S], input: &[S]) -> Result<Vec<S>> {
    check_dims(config, weights.len(), input.len())?;
    let shapes = config.layer_shapes();
    let last = shapes.len() - 1;
    let mut current: Vec<S> = input.to_vec();
    let mut offset = 0;
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let (w, rest) = weights[offset..].split_at(fan_in * fan_out);
        let b = &rest[..fan_out];
        let next = (0..fan_out)
            .map(|j| {
                let z = S::affine(&w[j * fan_in..(j + 1) * fan_in], &current, b[j]);
                if l == last {
                    z
                } else {
                    config.activation.apply(z)
                }
            })
            .collect();
        offset += fan_in * fan_out + fan_out;
        current = next;
    }
    Ok(current)
}

/// Forward pass propagating input tangents alongside values.
///
/// Weights multiply value and tangents directly, so no tangent arithmetic is
/// spent on the weights themselves.
pub fn mlp_forward_jet<S: Scalar>(config: &MlpConfig, weights: &[S], input: &[Jet<S>]) -> Result<Vec<Jet<S>>> {
    check_dims(config, weights.len(), input.len())?;
    let n = input.iter().map(|j| j.n).max().unwrap_or(0);
    let shapes = config.layer_shapes();
    let last = shapes.len() - 1;
    let mut current: Vec<Jet<S>> = input.to_vec();
    let mut offset = 0;
    // values and each tangent direction as contiguous slices
    let mut vals: Vec<S> = Vec::new();
    let mut tans: Vec<Vec<S>> = vec![Vec::new(); n];
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let (w, rest) = weights[offset..].split_at(fan_in * fan_out);
        let b = &rest[..fan_out];
        vals.clear();
        vals.extend(current.iter().map(|a| a.v));
        for (k, tk) in tans.iter_mut().enumerate() {
            tk.clear();
            tk.extend(current.iter().map(|a| a.t[k]));
        }
        let mut next = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            let mut z = Jet::lift(S::affine(row, &vals, b[j]), n);
            for (k, tk) in tans.iter().enumerate() {
                z.t[k] = S::affine(row, tk, S::zero());
            }
            next.push(if l == last { z } else { activate(config.activation, z) });
        }
        offset += fan_in * fan_out + fan_out;
        current = next;
    }
    Ok(current)
}

fn activate<S: Scalar>(act: Activation, z: Jet<S>) -> Jet<S> {
    match act {
        Activation::Tanh => {
            let y = z.v.tanh();
            z.chain(y, -(y * y) + 1.0)
        }
        Activation::Relu => z.relu(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(i: usize, h: &[usize], o: usize) -> MlpConfig {
        MlpConfig::new(i, h.to_vec(), o, Activation::Tanh)
    }

    #[test]
    fn parameter_count() {
        let p = MlpParams::init(cfg(2, &[3], 1), 7).unwrap();
        assert_eq!(p.len(), 13);
        let p = MlpParams::init(cfg(4, &[], 3), 7).unwrap();
        assert_eq!(p.len(), 4 * 3 + 3);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = MlpParams::init(cfg(3, &[5, 4], 2), 42).unwrap();
        let b = MlpParams::init(cfg(3, &[5, 4], 2), 42).unwrap();
        assert_eq!(a, b);
        let c = MlpParams::init(cfg(3, &[5, 4], 2), 43).unwrap();
        assert_ne!(a, c);
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(a.params[..15].iter().all(|w| w.abs() <= bound));
        assert!(a.params[15..20].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_width_rejected() {
        assert!(MlpParams::init(cfg(2, &[0], 1), 0).is_err());
        assert!(MlpParams::init(cfg(0, &[2], 1), 0).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(cfg(3, &[4, 4], 2)).unwrap();
        assert_eq!(p.eval(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let p = MlpParams::from_params(cfg(2, &[], 2), params).unwrap();
        assert_eq!(p.eval(&[0.7, -0.2]).unwrap(), vec![0.7, -0.2]);
    }

    #[test]
    fn scaled_tanh_unit() {
        // 1 → 1 → 1: w1 = 1, b1 = 0, w2 = 2, b2 = 0
        let p = MlpParams::from_params(cfg(1, &[1], 1), vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let y = p.eval(&[1.0]).unwrap()[0];
        assert!((y - 1.5231883119115298).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = MlpParams::zeros(cfg(3, &[2], 1)).unwrap();
        assert!(matches!(p.eval(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn jet_forward_matches_plain_forward_and_fd() {
        let p = MlpParams::init(MlpConfig::new(3, vec![5, 4], 2, Activation::Tanh), 9).unwrap();
        let x = [0.3, -0.7, 1.1];
        let jets: Vec<Jet<f64>> = (0..3).map(|k| Jet::seed(x[k], 3, k)).collect();
        let out = mlp_forward_jet(&p.config, &p.params, &jets).unwrap();
        let plain = p.eval(&x).unwrap();
        let h = 1e-6;
        for o in 0..2 {
            assert_eq!(out[o].v, plain[o]);
            for k in 0..3 {
                let mut up = x;
                up[k] += h;
                let mut dn = x;
                dn[k] -= h;
                let fd = (p.eval(&up).unwrap()[o] - p.eval(&dn).unwrap()[o]) / (2.0 * h);
                assert!((out[o].t[k] - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn json_round_trip_keeps_layout() {
        let p = MlpParams::init(cfg(2, &[3], 1), 5).unwrap();
        let v = p.to_json();
        assert_eq!(v["params"].as_array().unwrap().len(), 13);
        assert_eq!(MlpParams::from_json(&v).unwrap(), p);
    }
}
