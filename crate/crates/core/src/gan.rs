//! GAN objectives and the two learning steps.
//!
//! Losses use base-2 logarithms of probabilities clamped to
//! `[PROB_CLAMP, 1 - PROB_CLAMP]`:
//!
//! - `J_disc(X_r, X_g) = mean log2 D(x_r) + mean log2(1 - D(x_g))`, maximized over θ
//! - `J_gen(Z) = mean log2(1 - D(G(z)))`, minimized over w

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, Scorer};
use crate::nn::{Activation, ForwardCache, Gradients, LayerSpec, Mlp};
use crate::rng::{stream, SimRng, Stream};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: Mlp,
    pub noise_dim: usize,
    pub adam: AdamState,
}

impl Generator {
    /// Hidden layers from `hidden`, then an identity layer of width `data_dim`.
    pub fn new<R: Rng + ?Sized>(
        noise_dim: usize,
        hidden: &[LayerSpec],
        data_dim: usize,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut spec = hidden.to_vec();
        spec.push((data_dim, Activation::Identity));
        let net = Mlp::glorot(noise_dim, &spec, rng)?;
        Self::from_net(net, adam)
    }

    pub fn from_net(net: Mlp, adam: AdamConfig) -> Result<Self> {
        let noise_dim = net.in_dim();
        let adam = AdamState::for_net(adam, &net);
        Ok(Self { net, noise_dim, adam })
    }

    pub fn data_dim(&self) -> usize {
        self.net.out_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Mlp,
    pub adam: AdamState,
}

impl Discriminator {
    /// Hidden layers from `hidden`, then a single sigmoid unit.
    pub fn new<R: Rng + ?Sized>(data_dim: usize, hidden: &[LayerSpec], adam: AdamConfig, rng: &mut R) -> Result<Self> {
        let mut spec = hidden.to_vec();
        spec.push((1, Activation::Sigmoid));
        Self::from_net(Mlp::glorot(data_dim, &spec, rng)?, adam)
    }

    pub fn from_net(net: Mlp, adam: AdamConfig) -> Result<Self> {
        let last = net.layers().last().expect("non-empty network");
        if net.out_dim() != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::Config("discriminator must end in a single sigmoid unit".into()));
        }
        let adam = AdamState::for_net(adam, &net);
        Ok(Self { net, adam })
    }

    pub fn data_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn probabilities(&self, x: &DataBatch) -> Result<Vec<f64>> {
        Ok(self.net.forward(&x.samples)?.0.into_data())
    }
}

/// Network shapes and optimizer settings shared by every protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanArchitecture {
    pub noise_dim: usize,
    pub generator_hidden: Vec<LayerSpec>,
    pub discriminator_hidden: Vec<LayerSpec>,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
}

impl Default for GanArchitecture {
    fn default() -> Self {
        Self {
            noise_dim: 2,
            generator_hidden: vec![(64, Activation::Relu), (64, Activation::Relu)],
            discriminator_hidden: vec![(64, Activation::Relu), (64, Activation::Relu)],
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
        }
    }
}

impl GanArchitecture {
    /// Generator and discriminator initialized from the run seed. Every
    /// protocol starts from these same parameters.
    pub fn build(&self, data_dim: usize, seed: u64) -> Result<(Generator, Discriminator)> {
        if self.noise_dim == 0 || data_dim == 0 {
            return Err(Error::Config("noise and data dimensions must be positive".into()));
        }
        let g = Generator::new(
            self.noise_dim,
            &self.generator_hidden,
            data_dim,
            self.generator_adam,
            &mut stream(seed, Stream::GeneratorInit, 0),
        )?;
        let d = Discriminator::new(
            data_dim,
            &self.discriminator_hidden,
            self.discriminator_adam,
            &mut stream(seed, Stream::DiscriminatorInit, 0),
        )?;
        Ok((g, d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    pub samples: Tensor,
}

impl NoiseBatch {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Real,
    Generated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub samples: Tensor,
    pub origin: Origin,
}

impl DataBatch {
    pub fn real(samples: Tensor) -> Self {
        Self { samples, origin: Origin::Real }
    }

    pub fn generated(samples: Tensor) -> Self {
        Self { samples, origin: Origin::Generated }
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-sample gradients `e_i = ∂B̃(X_g)/∂x_i`, one row per generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackBundle {
    pub vectors: Tensor,
}

impl FeedbackBundle {
    pub fn scalar_count(&self) -> usize {
        self.vectors.scalar_count()
    }
}

pub fn sample_noise(b: usize, dim: usize, rng: &mut SimRng) -> NoiseBatch {
    let data: Vec<f64> = (0..b * dim).map(|_| StandardNormal.sample(rng)).collect();
    NoiseBatch { samples: Tensor::matrix(b, dim, data).expect("noise buffer sized by construction") }
}

pub fn generate(g: &Generator, z: &NoiseBatch) -> Result<DataBatch> {
    generate_cached(g, z).map(|(x, _)| x)
}

/// Generation that keeps the forward cache for a later back-propagation.
pub fn generate_cached(g: &Generator, z: &NoiseBatch) -> Result<(DataBatch, ForwardCache)> {
    if z.dim() != g.noise_dim {
        return Err(Error::Shape(format!("noise has dim {}, generator expects {}", z.dim(), g.noise_dim)));
    }
    let (out, cache) = g.net.forward(&z.samples)?;
    Ok((DataBatch::generated(out), cache))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn inside_clamp(p: f64) -> bool {
    p > PROB_CLAMP && p < 1.0 - PROB_CLAMP
}

/// `mean log2 D(x)` over a batch.
fn mean_log_real(p: &[f64]) -> f64 {
    p.iter().map(|&v| clamp_prob(v).log2()).sum::<f64>() / p.len() as f64
}

/// `mean log2(1 - D(x))` over a batch.
fn mean_log_fake(p: &[f64]) -> f64 {
    p.iter().map(|&v| (1.0 - clamp_prob(v)).log2()).sum::<f64>() / p.len() as f64
}

fn real_output_grad(p: &[f64]) -> Tensor {
    let b = p.len() as f64;
    let g = p.iter().map(|&v| if inside_clamp(v) { 1.0 / (b * v * LN_2) } else { 0.0 }).collect();
    Tensor::matrix(p.len(), 1, g).expect("column vector")
}

fn fake_output_grad(p: &[f64]) -> Tensor {
    let b = p.len() as f64;
    let g = p.iter().map(|&v| if inside_clamp(v) { -1.0 / (b * (1.0 - v) * LN_2) } else { 0.0 }).collect();
    Tensor::matrix(p.len(), 1, g).expect("column vector")
}

fn check_batch(d: &Discriminator, x: &DataBatch) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if x.samples.cols() != d.data_dim() {
        return Err(Error::Shape(format!("batch has dim {}, discriminator expects {}", x.samples.cols(), d.data_dim())));
    }
    Ok(())
}

/// `B̃(X) = mean log2(1 - D(x))`.
pub fn fake_term(d: &Discriminator, x: &DataBatch) -> Result<f64> {
    check_batch(d, x)?;
    Ok(mean_log_fake(&d.probabilities(x)?))
}

pub fn disc_loss(d: &Discriminator, x_real: &DataBatch, x_gen: &DataBatch) -> Result<f64> {
    check_batch(d, x_real)?;
    check_batch(d, x_gen)?;
    Ok(mean_log_real(&d.probabilities(x_real)?) + mean_log_fake(&d.probabilities(x_gen)?))
}

/// Gradient of `J_disc` with respect to θ.
pub fn disc_gradient(d: &Discriminator, x_real: &DataBatch, x_gen: &DataBatch) -> Result<Gradients> {
    check_batch(d, x_real)?;
    check_batch(d, x_gen)?;
    let (p_real, cache_real) = d.net.forward(&x_real.samples)?;
    let (p_gen, cache_gen) = d.net.forward(&x_gen.samples)?;
    let mut grads = d.net.backward_params(&cache_real, &real_output_grad(p_real.data()))?;
    let fake = d.net.backward_params(&cache_gen, &fake_output_grad(p_gen.data()))?;
    grads.add_scaled(&fake, 1.0)?;
    Ok(grads)
}

/// `L` Adam ascent steps on `J_disc`; the generator is not involved.
pub fn disc_learning_step(d: &mut Discriminator, x_real: &DataBatch, x_gen: &DataBatch, steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::Config("discriminator needs at least one learning step".into()));
    }
    for _ in 0..steps {
        let grads = disc_gradient(d, x_real, x_gen)?;
        d.adam.apply(&mut d.net, &grads)?;
    }
    Ok(())
}

pub fn gen_loss(g: &Generator, d: &Discriminator, z: &NoiseBatch) -> Result<f64> {
    fake_term(d, &generate(g, z)?)
}

/// Input gradients of `B̃` at each generated sample.
pub fn feedback_for_batch(d: &Discriminator, x_gen: &DataBatch) -> Result<FeedbackBundle> {
    if x_gen.origin != Origin::Generated {
        return Err(Error::Protocol("feedback is only defined on generated batches".into()));
    }
    check_batch(d, x_gen)?;
    let (p, cache) = d.net.forward(&x_gen.samples)?;
    let vectors = d.net.backward_inputs(&cache, &fake_output_grad(p.data()))?;
    Ok(FeedbackBundle { vectors })
}

/// Gradient of `J_gen` with respect to w, chained through the feedback vectors.
pub fn gen_gradient(g: &Generator, d: &Discriminator, z: &NoiseBatch) -> Result<Gradients> {
    let (x, cache) = generate_cached(g, z)?;
    let feedback = feedback_for_batch(d, &x)?;
    g.net.backward_params(&cache, &feedback.vectors)
}

/// One Adam descent step on `J_gen`; the discriminator is not modified.
pub fn gen_learning_step(g: &mut Generator, d: &Discriminator, z: &NoiseBatch) -> Result<()> {
    let mut grads = gen_gradient(g, d, z)?;
    grads.scale(-1.0);
    g.adam.apply(&mut g.net, &grads)
}

/// Draws `b` rows uniformly with replacement.
pub fn sample_real(data: &Tensor, b: usize, rng: &mut SimRng) -> Result<DataBatch> {
    if data.rows() == 0 {
        return Err(Error::Config("cannot sample from an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.rows())).collect();
    Ok(DataBatch::real(data.select_rows(&idx)))
}

/// A generator/discriminator pair trained on one local dataset.
///
/// This is both the standalone baseline and the per-worker trainer of FL-GAN.
#[derive(Debug, Clone)]
pub struct LocalGan {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub noise_rng: SimRng,
    pub sample_rng: SimRng,
}

impl LocalGan {
    /// One iteration: `disc_steps` discriminator steps on a fresh real batch and
    /// a fresh generated batch, then a single generator step on new noise.
    pub fn iteration(&mut self, data: &Tensor, b: usize, disc_steps: usize) -> Result<()> {
        let x_real = sample_real(data, b, &mut self.sample_rng)?;
        let z_d = sample_noise(b, self.generator.noise_dim, &mut self.noise_rng);
        let x_d = generate(&self.generator, &z_d)?;
        disc_learning_step(&mut self.discriminator, &x_real, &x_d, disc_steps)?;
        let z_g = sample_noise(b, self.generator.noise_dim, &mut self.noise_rng);
        gen_learning_step(&mut self.generator, &self.discriminator, &z_g)
    }
}

/// Trains `gan` for `iterations` steps on `data`, scoring at every
/// iteration `i` (1-based) with `i % checkpoint_stride == 0`.
pub fn standalone_train(
    gan: &mut LocalGan,
    data: &Tensor,
    b: usize,
    iterations: u64,
    disc_steps: usize,
    checkpoint_stride: u64,
    scorer: &Scorer,
) -> Result<Vec<MetricsRow>> {
    if data.rows() == 0 {
        return Err(Error::Config("dataset is empty".into()));
    }
    let mut rows = Vec::new();
    for i in 1..=iterations {
        gan.iteration(data, b, disc_steps)?;
        if checkpoint_stride > 0 && i % checkpoint_stride == 0 {
            rows.push(scorer.score(i, &gan.generator)?);
        }
    }
    Ok(rows)
}
