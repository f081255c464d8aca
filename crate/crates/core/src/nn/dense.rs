use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `activation(W x + b)` whose weights live in a
/// [`ParameterSet`]. `W` is stored row-major as `[outputs x inputs]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Range<usize>,
    biases: Range<usize>,
}

/// Values retained by [`DenseLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
    pre: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> Self {
        let weights = params.allocate(format!("{name}.weight"), inputs * outputs);
        let biases = params.allocate(format!("{name}.bias"), outputs);
        Self {
            inputs,
            outputs,
            activation,
            weights,
            biases,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight_range(&self) -> Range<usize> {
        self.weights.clone()
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.biases.clone()
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases alike.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) {
        let bound = 1.0 / (self.inputs.max(1) as f64).sqrt();
        params.init_uniform(self.weights.clone(), bound, rng);
        params.init_uniform(self.biases.clone(), bound, rng);
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.inputs {
            return Err(Error::config(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs,
                input.len()
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, params: &ParameterSet, input: &[f64]) -> Vec<f64> {
        let w = &params.values()[self.weights.clone()];
        let b = &params.values()[self.biases.clone()];
        w.chunks_exact(self.inputs.max(1))
            .take(self.outputs)
            .zip(b)
            .map(|(row, bias)| {
                if self.inputs == 0 {
                    *bias
                } else {
                    row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias
                }
            })
            .collect()
    }

    pub fn forward(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        self.check_input(input)?;
        let pre = self.pre_activation(params, input);
        let out = pre.iter().map(|&p| self.activation.apply(p)).collect();
        Ok((
            out,
            DenseCache {
                input: input.to_vec(),
                pre,
            },
        ))
    }

    /// Forward pass without retaining a cache.
    pub fn infer(&self, params: &ParameterSet, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self
            .pre_activation(params, input)
            .into_iter()
            .map(|p| self.activation.apply(p))
            .collect())
    }

    /// Accumulates parameter gradients into `params` and returns the
    /// gradient with respect to the layer input.
    pub fn backward(
        &self,
        params: &mut ParameterSet,
        cache: &DenseCache,
        upstream: &[f64],
    ) -> Result<Vec<f64>> {
        if cache.input.len() != self.inputs || cache.pre.len() != self.outputs {
            return Err(Error::usage("dense cache does not belong to this layer"));
        }
        if upstream.len() != self.outputs {
            return Err(Error::usage(format!(
                "dense backward expects {} upstream values, got {}",
                self.outputs,
                upstream.len()
            )));
        }
        let mut input_grad = vec![0.0; self.inputs];
        let (values, grads) = params.split_mut();
        for o in 0..self.outputs {
            let delta = upstream[o] * self.activation.derivative(cache.pre[o]);
            if delta == 0.0 {
                continue;
            }
            grads[self.biases.start + o] += delta;
            let row = self.weights.start + o * self.inputs;
            for i in 0..self.inputs {
                grads[row + i] += delta * cache.input[i];
                input_grad[i] += delta * values[row + i];
            }
        }
        Ok(input_grad)
    }
}

/// Stack of dense layers applied in sequence.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<DenseCache>,
}

impl Mlp {
    /// Hidden layers use `hidden_activation`; the last layer is linear.
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        hidden_activation: Activation,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = inputs;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(DenseLayer::new(
                params,
                &format!("{name}.{i}"),
                width,
                h,
                hidden_activation,
            ));
            width = h;
        }
        layers.push(DenseLayer::new(
            params,
            &format!("{name}.out"),
            width,
            outputs,
            Activation::Identity,
        ));
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) {
        for layer in &self.layers {
            layer.init(params, rng);
        }
    }

    pub fn forward(&self, params: &ParameterSet, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let (y, cache) = layer.forward(params, &x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, MlpCache { layers: caches }))
    }

    pub fn infer(&self, params: &ParameterSet, input: &[f64]) -> Result<Vec<f64>> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.infer(params, &x)?;
        }
        Ok(x)
    }

    pub fn backward(
        &self,
        params: &mut ParameterSet,
        cache: &MlpCache,
        upstream: &[f64],
    ) -> Result<Vec<f64>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::usage("mlp cache depth mismatch"));
        }
        let mut grad = upstream.to_vec();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            grad = layer.backward(params, c, &grad)?;
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer_with(weights: &[f64], biases: &[f64], inputs: usize, act: Activation) -> (ParameterSet, DenseLayer) {
        let mut p = ParameterSet::new();
        let l = DenseLayer::new(&mut p, "l", inputs, biases.len(), act);
        p.values_mut()[l.weight_range()].copy_from_slice(weights);
        p.values_mut()[l.bias_range()].copy_from_slice(biases);
        (p, l)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let (p, l) = layer_with(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, Activation::Identity);
        let (y, _) = l.forward(&p, &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn relu_clips_negative_pre_activation() {
        let (p, l) = layer_with(&[1.0, -1.0], &[0.0], 2, Activation::Relu);
        let (y, cache) = l.forward(&p, &[2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0]);
        assert_eq!(cache.pre, vec![-1.0]);
    }

    #[test]
    fn matches_hand_rolled_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParameterSet::new();
        let l = DenseLayer::new(&mut p, "l", 3, 4, Activation::Tanh);
        l.init(&mut p, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, _) = l.forward(&p, &x).unwrap();
        let w = &p.values()[l.weight_range()];
        let b = &p.values()[l.bias_range()];
        for o in 0..4 {
            let mut acc = b[o];
            for i in 0..3 {
                acc += w[o * 3 + i] * x[i];
            }
            assert!((y[o] - acc.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_leaves_accumulator_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParameterSet::new();
        let l = DenseLayer::new(&mut p, "l", 3, 2, Activation::Relu);
        l.init(&mut p, &mut rng);
        let (_, cache) = l.forward(&p, &[0.3, -0.2, 0.9]).unwrap();
        let dx = l.backward(&mut p, &cache, &[0.0, 0.0]).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
        assert!(p.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_unit_weight_gradient_is_input() {
        let (mut p, l) = layer_with(&[0.7, -1.3], &[0.0], 2, Activation::Identity);
        let x = [1.5, -2.5];
        let (_, cache) = l.forward(&p, &x).unwrap();
        l.backward(&mut p, &cache, &[1.0]).unwrap();
        assert_eq!(&p.grads()[l.weight_range()], &x);
        assert_eq!(p.grads()[l.bias_range()][0], 1.0);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let (p, l) = layer_with(&[1.0, 1.0], &[0.0], 2, Activation::Identity);
        assert!(matches!(l.forward(&p, &[1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn foreign_cache_is_usage_error() {
        let (mut p, l) = layer_with(&[1.0, 1.0], &[0.0], 2, Activation::Identity);
        let (p2, l2) = layer_with(&[1.0, 1.0, 1.0], &[0.0], 3, Activation::Identity);
        let (_, cache) = l2.forward(&p2, &[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(l.backward(&mut p, &cache, &[1.0]), Err(Error::Usage(_))));
    }
}
