use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fresh_instance_id, GradientSet, Parameterized, TextReader, TextWriter};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Affine map followed by an activation. Weights are `outputs x inputs`,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.bias[o];
            out.push(self.activation.apply(z));
        }
    }
}

/// Activations recorded by [`DenseNet::forward`]: the input followed by every
/// layer's output.
#[derive(Debug, Clone)]
pub struct DenseCache {
    owner: u64,
    activations: Vec<Vec<f64>>,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Feed-forward network of dense layers.
#[derive(Debug)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    // Bumped on construction, clone and every parameter mutation so that a
    // cache from before an update is rejected by `backward`.
    instance: u64,
}

impl Clone for DenseNet {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            instance: fresh_instance_id(),
        }
    }
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    /// `sizes = [in, h1, ..., out]`, `activations.len() == sizes.len() - 1`.
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("a dense net needs at least input and output sizes".into()));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::dim("activations", sizes.len() - 1, activations.len()));
        }
        if sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::zeros(w[0], w[1], a))
            .collect();
        Ok(Self {
            layers,
            instance: fresh_instance_id(),
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a dense net needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::dim("adjacent layers", pair[0].outputs, pair[1].inputs));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::dim("layer parameters", l.inputs * l.outputs, l.weights.len()));
            }
        }
        Ok(Self {
            layers,
            instance: fresh_instance_id(),
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to the layers. Invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.instance = fresh_instance_id();
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    /// `sum(fan_in * fan_out + fan_out)` over layers.
    pub fn analytic_param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("dense forward input", self.input_dim(), x.len()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(activations.last().unwrap(), &mut out);
            activations.push(out);
        }
        let y = activations.last().unwrap().clone();
        Ok((
            y,
            DenseCache {
                owner: self.instance,
                activations,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("dense forward input", self.input_dim(), x.len()));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the input.
    pub fn backward(&self, cache: &DenseCache, grad_output: &[f64]) -> Result<(GradientSet, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let dx = self.backward_accumulate(cache, grad_output, &mut grads)?;
        Ok((grads, dx))
    }

    /// Like [`backward`](Self::backward) but adds into an existing gradient
    /// set, which avoids an allocation per sample in batched training.
    pub fn backward_accumulate(
        &self,
        cache: &DenseCache,
        grad_output: &[f64],
        grads: &mut GradientSet,
    ) -> Result<Vec<f64>> {
        if cache.owner != self.instance || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::StaleCache);
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::dim("dense grad_output", self.output_dim(), grad_output.len()));
        }
        if grads.tensors.len() != 2 * self.layers.len() {
            return Err(Error::dim("gradient tensors", 2 * self.layers.len(), grads.tensors.len()));
        }
        let mut delta = grad_output.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[li];
            let output = &cache.activations[li + 1];
            for (d, &y) in delta.iter_mut().zip(output) {
                *d *= layer.activation.derivative_from_output(y);
            }
            let (gw, gb) = {
                let (a, b) = grads.tensors.split_at_mut(2 * li + 1);
                (&mut a[2 * li], &mut b[0])
            };
            for o in 0..layer.outputs {
                let d = delta[o];
                gb[o] += d;
                if d != 0.0 {
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d != 0.0 {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    pub fn write_text(&self, w: &mut TextWriter) {
        w.line_usize(&self.sizes());
        w.line_words(self.layers.iter().map(|l| l.activation.name()));
        for layer in &self.layers {
            for row in layer.weights.chunks(layer.inputs) {
                w.line_f64(row);
            }
            w.line_f64(&layer.bias);
        }
    }

    pub fn read_text(r: &mut TextReader<'_>) -> Result<Self> {
        let sizes = r.line_usize()?;
        if sizes.len() < 2 {
            return Err(r.error("dense net needs at least two sizes"));
        }
        let names = r.line_words()?;
        if names.len() != sizes.len() - 1 {
            return Err(r.error("activation count does not match layer count"));
        }
        let mut layers = Vec::with_capacity(names.len());
        for (w, name) in sizes.windows(2).zip(names) {
            let activation = Activation::parse(&name)
                .ok_or_else(|| r.error(&format!("unknown activation `{name}`")))?;
            let mut weights = Vec::with_capacity(w[0] * w[1]);
            for _ in 0..w[1] {
                weights.extend(r.line_f64_exact(w[0])?);
            }
            let bias = r.line_f64_exact(w[1])?;
            layers.push(DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weights,
                bias,
                activation,
            });
        }
        Self::from_layers(layers)
    }
}

impl Parameterized for DenseNet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.instance = fresh_instance_id();
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
