//! A small dense feed-forward network engine.
//!
//! Layers compute `a = act(x W^T + b)` with `W` stored row-major as
//! `(out_dim, in_dim)`. Back-propagation produces gradients with respect to
//! both the parameters and the network inputs; the latter is what a worker
//! ships back to the server as generator feedback.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim], activation }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Layer description used to build networks: `(out_dim, activation)`.
pub type LayerSpec = (usize, Activation);

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations retained by a forward pass, consumed by back-propagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    dims: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer parameter gradients, shaped exactly like the owning [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGradients { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
            .collect();
        Self { layers }
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient depth mismatch".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.len() != b.weights.len() || a.bias.len() != b.bias.len() {
                return Err(Error::Shape("gradient layer mismatch".into()));
            }
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += scale * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += scale * y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Shape(format!("layer {i} buffers disagree with its dimensions")));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized network with input width `in_dim`.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, spec: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut prev = in_dim;
        for &(out, act) in spec {
            if prev == 0 || out == 0 {
                return Err(Error::Config("layer dimensions must be positive".into()));
            }
            layers.push(Dense::glorot(prev, out, act, rng));
            prev = out;
        }
        Self::from_layers(layers)
    }

    pub fn zeros(in_dim: usize, spec: &[LayerSpec]) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut prev = in_dim;
        for &(out, act) in spec {
            layers.push(Dense::zeros(prev, out, act));
            prev = out;
        }
        Self::from_layers(layers)
    }

    /// Composition `second ∘ first` as one network.
    pub fn stack(first: &Mlp, second: &Mlp) -> Result<Self> {
        let mut layers = first.layers.clone();
        layers.extend(second.layers.iter().cloned());
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// All parameters, layer by layer, weights before bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mutable views over every parameter buffer in flat order.
    pub(crate) fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if batch.shape().len() != 2 || batch.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network expects (batch, {}) input, got {:?}",
                self.in_dim(),
                batch.shape()
            )));
        }
        let rows = batch.rows();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map_or(batch.data(), Vec::as_slice);
            let mut z = vec![0.0; rows * layer.out_dim];
            for r in 0..rows {
                let x = &input[r * layer.in_dim..(r + 1) * layer.in_dim];
                let zr = &mut z[r * layer.out_dim..(r + 1) * layer.out_dim];
                for (o, zo) in zr.iter_mut().enumerate() {
                    let w = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    *zo = layer.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let out_dim = self.out_dim();
        let output = Tensor::matrix(rows, out_dim, post.last().cloned().unwrap_or_default())?;
        if !output.all_finite() {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        let dims = self.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect();
        Ok((output, ForwardCache { input: batch.clone(), pre, post, dims }))
    }

    /// Gradient of `Σ output ⊙ output_grad` with respect to the parameters.
    pub fn backward_params(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<Gradients> {
        self.backward(cache, output_grad, true).map(|(g, _)| g.expect("params requested"))
    }

    /// Gradient of `Σ output ⊙ output_grad` with respect to the inputs.
    pub fn backward_inputs(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<Tensor> {
        self.backward(cache, output_grad, false).map(|(_, x)| x)
    }

    /// Both gradients from a single sweep.
    pub fn backward_all(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<(Gradients, Tensor)> {
        self.backward(cache, output_grad, true).map(|(g, x)| (g.expect("params requested"), x))
    }

    fn check_cache(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<()> {
        let dims: Vec<_> = self.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect();
        if cache.dims != dims {
            return Err(Error::State("forward cache was produced by a different architecture".into()));
        }
        let rows = cache.batch_size();
        if output_grad.shape() != [rows, self.out_dim()] {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match forward output ({rows}, {})",
                output_grad.shape(),
                self.out_dim()
            )));
        }
        Ok(())
    }

    fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &Tensor,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Tensor)> {
        self.check_cache(cache, output_grad)?;
        let rows = cache.batch_size();
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        // upstream gradient w.r.t. the current layer's output
        let mut upstream = output_grad.data().to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[idx];
            let a = &cache.post[idx];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(z.iter().zip(a))
                .map(|(g, (&zv, &av))| g * layer.activation.derivative(zv, av))
                .collect();
            let input = if idx == 0 { cache.input.data() } else { cache.post[idx - 1].as_slice() };
            if let Some(grads) = grads.as_mut() {
                let lg = &mut grads.layers[idx];
                for r in 0..rows {
                    let x = &input[r * layer.in_dim..(r + 1) * layer.in_dim];
                    let dr = &delta[r * layer.out_dim..(r + 1) * layer.out_dim];
                    for (o, &d) in dr.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        lg.bias[o] += d;
                        let gw = &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        gw.iter_mut().zip(x).for_each(|(g, xv)| *g += d * xv);
                    }
                }
            }
            let mut down = vec![0.0; rows * layer.in_dim];
            for r in 0..rows {
                let dr = &delta[r * layer.out_dim..(r + 1) * layer.out_dim];
                let out = &mut down[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let w = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    out.iter_mut().zip(w).for_each(|(g, wv)| *g += d * wv);
                }
            }
            upstream = down;
        }
        let input_grad = Tensor::matrix(rows, self.in_dim(), upstream)?;
        Ok((grads, input_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(n: usize) -> Dense {
        let mut l = Dense::zeros(n, n, Activation::Identity);
        for i in 0..n {
            l.weights[i * n + i] = 1.0;
        }
        l
    }

    /// Straight triple-loop evaluation, independent of `forward`.
    fn oracle_forward(net: &Mlp, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|x| {
                let mut cur = x.clone();
                for l in net.layers() {
                    let mut next = Vec::new();
                    for o in 0..l.out_dim {
                        let mut s = l.bias[o];
                        for (i, c) in cur.iter().enumerate() {
                            s += l.weights[o * l.in_dim + i] * c;
                        }
                        next.push(match l.activation {
                            Activation::Relu => s.max(0.0),
                            Activation::Tanh => s.tanh(),
                            Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                            Activation::Identity => s,
                        });
                    }
                    cur = next;
                }
                cur
            })
            .collect()
    }

    fn seeded_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::glorot(3, &[(5, Activation::Tanh), (4, Activation::Relu), (2, Activation::Sigmoid)], &mut rng).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Mlp::from_layers(vec![identity_layer(2)]).unwrap();
        let (out, _) = net.forward(&Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let net = Mlp::zeros(3, &[(1, Activation::Sigmoid)]).unwrap();
        let batch = Tensor::matrix(2, 3, vec![5.0, -1.0, 7.0, 0.3, 0.2, 100.0]).unwrap();
        let (out, _) = net.forward(&batch).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn forward_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = Mlp::glorot(3, &[(4, Activation::Tanh), (2, Activation::Sigmoid)], &mut rng).unwrap();
        let rows = vec![vec![0.1, -0.7, 2.0], vec![1.5, 0.0, -0.3]];
        let (out, _) = net.forward(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let expected = oracle_forward(&net, &rows);
        for (r, exp) in expected.iter().enumerate() {
            for (c, e) in exp.iter().enumerate() {
                assert!((out.row(r)[c] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = seeded_net(1);
        assert!(matches!(net.forward(&Tensor::zeros(vec![2, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let net = seeded_net(3);
        let batch = Tensor::matrix(2, 3, vec![0.3, 0.1, -0.2, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(net.forward(&batch).unwrap().0, net.forward(&batch).unwrap().0);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = seeded_net(4);
        let batch = Tensor::matrix(1, 3, vec![0.5, 0.5, 0.5]).unwrap();
        let (_, cache) = net.forward(&batch).unwrap();
        let g = net.backward_params(&cache, &Tensor::zeros(vec![1, 2])).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let mut l = Dense::zeros(1, 1, Activation::Identity);
        l.weights[0] = 0.8;
        let net = Mlp::from_layers(vec![l]).unwrap();
        let (_, cache) = net.forward(&Tensor::matrix(1, 1, vec![3.5]).unwrap()).unwrap();
        let g = net.backward_params(&cache, &Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.layers[0].weights, vec![3.5]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn identity_net_input_gradient_is_output_grad() {
        let net = Mlp::from_layers(vec![identity_layer(3)]).unwrap();
        let (_, cache) = net.forward(&Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let og = Tensor::matrix(1, 3, vec![0.2, -0.4, 9.0]).unwrap();
        assert_eq!(net.backward_inputs(&cache, &og).unwrap(), og);
    }

    #[test]
    fn zero_first_layer_blocks_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Mlp::glorot(2, &[(3, Activation::Tanh), (1, Activation::Sigmoid)], &mut rng).unwrap();
        net.layers_mut()[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let (_, cache) = net.forward(&Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
        let gx = net.backward_inputs(&cache, &Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cache_from_other_architecture_is_rejected() {
        let net = seeded_net(5);
        let other = Mlp::zeros(3, &[(2, Activation::Identity)]).unwrap();
        let (_, cache) = other.forward(&Tensor::zeros(vec![1, 3])).unwrap();
        assert!(matches!(net.backward_params(&cache, &Tensor::zeros(vec![1, 2])), Err(Error::State(_))));
    }

    #[test]
    fn param_counts_match_layer_arithmetic() {
        // 2→16→2 generator and 2→16→1 discriminator used throughout the tests
        let g = Mlp::zeros(2, &[(16, Activation::Relu), (2, Activation::Identity)]).unwrap();
        let d = Mlp::zeros(2, &[(16, Activation::Relu), (1, Activation::Sigmoid)]).unwrap();
        assert_eq!(g.param_count(), 2 * 16 + 16 + 16 * 2 + 2);
        assert_eq!(d.param_count(), 2 * 16 + 16 + 16 + 1);
        let toy = Mlp::zeros(2, &[(64, Activation::Relu), (64, Activation::Relu), (2, Activation::Identity)]).unwrap();
        assert_eq!(toy.param_count(), 192 + 4160 + 130);
    }

    #[test]
    fn set_params_round_trips() {
        let mut net = seeded_net(6);
        let mut p = net.params();
        p[3] = 42.0;
        net.set_params(&p).unwrap();
        assert_eq!(net.params(), p);
        assert!(net.set_params(&p[1..]).is_err());
    }
}
