//! MD-GAN: a single generator on the server, one discriminator per worker.
//!
//! Each global iteration the server draws `k` generated batches and sends
//! every worker a pair `(X_d, X_g)`. A worker trains its discriminator on
//! `X_d` against a real batch from its shard, then returns the input
//! gradients of `B̃` at `X_g`. The server chains those through its cached
//! forward passes to get `Δw = ∂/∂w (1/N Σ_n B̃(X_g,n))` and takes one Adam
//! step. Every `mE/b` iterations the discriminators are permuted among the
//! workers by a random derangement.

use std::collections::BTreeMap;

use crate::cluster::{Message, Network, NodeId, Payload, Protocol};
use crate::error::{Error, Result};
use crate::gan::{
    disc_learning_step, feedback_for_batch, generate_cached, sample_noise, sample_real, DataBatch, Discriminator,
    FeedbackBundle, Generator,
};
use crate::nn::{ForwardCache, Gradients};
use crate::protocols::{apply_swap, batch_pair, make_swap_plan, SwapPlan};
use crate::rng::{stream, SimRng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MdGanSettings {
    /// Batches generated per iteration, `1 ≤ k ≤ N`.
    pub k: usize,
    pub batch: usize,
    /// Discriminator learning steps per iteration.
    pub disc_steps: usize,
    /// Iterations between swaps (`mE/b`); `None` disables swapping.
    pub swap_period: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct MdGanServerState {
    pub generator: Generator,
    pub k: usize,
    pub batch: usize,
    noise_rng: SimRng,
    batches: Vec<(Tensor, ForwardCache)>,
    pending: BTreeMap<usize, FeedbackBundle>,
}

impl MdGanServerState {
    pub fn new(generator: Generator, k: usize, batch: usize, seed: u64) -> Self {
        Self {
            generator,
            k,
            batch,
            noise_rng: stream(seed, Stream::ServerNoise, 0),
            batches: Vec::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn has_cache(&self) -> bool {
        !self.batches.is_empty()
    }

    /// Generated batch `X^(j)` (1-based) of the current iteration.
    pub fn batch(&self, j: usize) -> Option<&Tensor> {
        self.batches.get(j.wrapping_sub(1)).map(|(x, _)| x)
    }

    /// Noise `z` that produced batch `j` (1-based).
    pub fn noise(&self, j: usize) -> Option<&Tensor> {
        self.batches.get(j.wrapping_sub(1)).map(|(_, cache)| cache.input())
    }
}

#[derive(Debug, Clone)]
pub struct MdGanWorkerState {
    pub index: usize,
    pub disc: Discriminator,
    pub shard: Tensor,
    pub disc_steps: usize,
    pub batch: usize,
    sample_rng: SimRng,
    pub iterations_done: u64,
}

impl MdGanWorkerState {
    pub fn new(index: usize, disc: Discriminator, shard: Tensor, disc_steps: usize, batch: usize, seed: u64) -> Self {
        Self {
            index,
            disc,
            shard,
            disc_steps,
            batch,
            sample_rng: stream(seed, Stream::RealSampling, index as u64),
            iterations_done: 0,
        }
    }
}

/// Draws the `k` batches, keeps their forward caches, and returns one
/// `(X_d, X_g)` message per alive worker.
pub fn mdgan_server_iteration(state: &mut MdGanServerState, alive: &[usize]) -> Result<Vec<Message>> {
    state.batches.clear();
    state.pending.clear();
    for _ in 0..state.k {
        let z = sample_noise(state.batch, state.generator.noise_dim, &mut state.noise_rng);
        let (x, cache) = generate_cached(&state.generator, &z)?;
        state.batches.push((x.samples, cache));
    }
    let mut out = Vec::with_capacity(alive.len());
    for &n in alive {
        let (g, d) = batch_pair(n, state.k);
        let payload = Payload::GeneratedBatchPair {
            disc: state.batches[d - 1].0.clone(),
            gen: state.batches[g - 1].0.clone(),
        };
        out.push(Message::new(NodeId::Server, NodeId::Worker(n), payload));
    }
    Ok(out)
}

/// Local discriminator training followed by feedback on `X_g` computed with
/// the updated discriminator.
pub fn mdgan_worker_iteration(
    state: &mut MdGanWorkerState,
    x_disc: &Tensor,
    x_gen: &Tensor,
) -> Result<FeedbackBundle> {
    let x_real = sample_real(&state.shard, state.batch, &mut state.sample_rng)?;
    let x_d = DataBatch::generated(x_disc.clone());
    disc_learning_step(&mut state.disc, &x_real, &x_d, state.disc_steps)?;
    state.iterations_done += 1;
    feedback_for_batch(&state.disc, &DataBatch::generated(x_gen.clone()))
}

/// `Δw` from the feedback of every alive worker, averaged over the alive
/// count. A batch referenced by several workers is back-propagated once per
/// referencing worker.
pub fn mdgan_merge_gradient(
    state: &MdGanServerState,
    feedbacks: &BTreeMap<usize, FeedbackBundle>,
    alive: &[usize],
) -> Result<Gradients> {
    if !state.has_cache() {
        return Err(Error::State("no generated batches cached for this iteration".into()));
    }
    if alive.is_empty() {
        return Err(Error::Protocol("no alive worker to merge feedback from".into()));
    }
    let divisor = alive.len() as f64;
    let mut delta = Gradients::zeros_like(&state.generator.net);
    for &n in alive {
        let fb = feedbacks
            .get(&n)
            .ok_or_else(|| Error::Protocol(format!("missing feedback from alive worker {n}")))?;
        let (g, _) = batch_pair(n, state.k);
        let (x, cache) = &state.batches[g - 1];
        if fb.vectors.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "feedback from worker {n} has shape {:?}, batch has {:?}",
                fb.vectors.shape(),
                x.shape()
            )));
        }
        let contribution = state.generator.net.backward_params(cache, &fb.vectors)?;
        delta.add_scaled(&contribution, 1.0 / divisor)?;
    }
    Ok(delta)
}

/// Merges feedback, applies one Adam descent step on `w`, clears the caches,
/// and returns `Δw`.
pub fn mdgan_merge_feedback(
    state: &mut MdGanServerState,
    feedbacks: &BTreeMap<usize, FeedbackBundle>,
    alive: &[usize],
) -> Result<Gradients> {
    let delta = mdgan_merge_gradient(state, feedbacks, alive)?;
    let mut direction = delta.clone();
    direction.scale(-1.0);
    state.generator.adam.apply(&mut state.generator.net, &direction)?;
    state.batches.clear();
    state.pending.clear();
    Ok(delta)
}

/// One merge as recorded by the instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeRecord {
    pub iteration: u64,
    pub divisor: usize,
    pub alive: usize,
}

#[derive(Debug, Clone)]
pub struct MdGan {
    pub server: MdGanServerState,
    pub workers: Vec<MdGanWorkerState>,
    pub settings: MdGanSettings,
    alive: Vec<bool>,
    swap_rng: SimRng,
    pub merges: Vec<MergeRecord>,
    pub swaps: Vec<(u64, SwapPlan)>,
}

impl MdGan {
    /// `shards[n-1]` belongs to worker `n`; every worker starts from a copy of `disc`.
    pub fn new(
        generator: Generator,
        disc: &Discriminator,
        shards: Vec<Tensor>,
        settings: MdGanSettings,
        seed: u64,
    ) -> Result<Self> {
        let n = shards.len();
        if n == 0 {
            return Err(Error::Config("MD-GAN needs at least one worker".into()));
        }
        if settings.k == 0 || settings.k > n {
            return Err(Error::Config(format!("k={} must lie in 1..={n}", settings.k)));
        }
        if settings.batch == 0 || settings.disc_steps == 0 {
            return Err(Error::Config("batch size and discriminator steps must be positive".into()));
        }
        if shards.iter().any(|s| s.rows() == 0) {
            return Err(Error::Config("every worker needs a non-empty shard".into()));
        }
        if generator.data_dim() != disc.data_dim() {
            return Err(Error::Config("generator output and discriminator input widths differ".into()));
        }
        let workers = shards
            .into_iter()
            .enumerate()
            .map(|(i, s)| MdGanWorkerState::new(i + 1, disc.clone(), s, settings.disc_steps, settings.batch, seed))
            .collect();
        Ok(Self {
            server: MdGanServerState::new(generator, settings.k, settings.batch, seed),
            workers,
            settings,
            alive: vec![true; n],
            swap_rng: stream(seed, Stream::Swap, 0),
            merges: Vec::new(),
            swaps: Vec::new(),
        })
    }

    fn alive_workers(&self) -> Vec<usize> {
        (1..=self.workers.len()).filter(|&n| self.alive[n - 1]).collect()
    }
}

impl Protocol for MdGan {
    fn server_generate(&mut self, _iteration: u64, net: &mut Network) -> Result<()> {
        let alive = self.alive_workers();
        for msg in mdgan_server_iteration(&mut self.server, &alive)? {
            net.send(msg)?;
        }
        Ok(())
    }

    fn worker_learn(&mut self, _iteration: u64, net: &mut Network) -> Result<()> {
        for n in self.alive_workers() {
            let node = NodeId::Worker(n);
            let msg = net
                .recv(node)
                .ok_or_else(|| Error::Protocol(format!("worker {n} received no batches")))?;
            let Payload::GeneratedBatchPair { disc, gen } = msg.payload else {
                return Err(Error::Protocol(format!("worker {n} expected a batch pair")));
            };
            let feedback = mdgan_worker_iteration(&mut self.workers[n - 1], &disc, &gen)?;
            net.send(Message::new(node, NodeId::Server, Payload::Feedback(feedback)))?;
        }
        Ok(())
    }

    fn server_merge(&mut self, iteration: u64, net: &mut Network) -> Result<()> {
        for msg in net.recv_all(NodeId::Server) {
            let (NodeId::Worker(n), Payload::Feedback(fb)) = (msg.src, msg.payload) else {
                return Err(Error::Protocol("server expected worker feedback".into()));
            };
            self.server.pending.insert(n, fb);
        }
        let alive = self.alive_workers();
        let pending = std::mem::take(&mut self.server.pending);
        mdgan_merge_feedback(&mut self.server, &pending, &alive)?;
        self.merges.push(MergeRecord { iteration, divisor: alive.len(), alive: net.alive_count() });
        Ok(())
    }

    fn swap_check(&mut self, iteration: u64, net: &mut Network) -> Result<()> {
        let Some(period) = self.settings.swap_period else {
            return Ok(());
        };
        if !iteration.is_multiple_of(period) {
            return Ok(());
        }
        let alive = self.alive_workers();
        let plan = make_swap_plan(&alive, &mut self.swap_rng)?;
        if !plan.is_identity() {
            for (&src, &dst) in plan.sources.iter().zip(&plan.targets) {
                let params = self.workers[src - 1].disc.net.params();
                net.send(Message::new(NodeId::Worker(src), NodeId::Worker(dst), Payload::DiscParams(params)))?;
            }
            net.deliver();
            for &n in &alive {
                let msg = net
                    .recv(NodeId::Worker(n))
                    .ok_or_else(|| Error::Protocol(format!("worker {n} received no discriminator")))?;
                let Payload::DiscParams(params) = msg.payload else {
                    return Err(Error::Protocol(format!("worker {n} expected discriminator parameters")));
                };
                self.workers[n - 1].disc.net.set_params(&params)?;
            }
        }
        self.swaps.push((iteration, plan));
        Ok(())
    }

    fn finish(&mut self, _net: &mut Network) -> Result<()> {
        Ok(())
    }

    fn on_crash(&mut self, worker: usize) {
        self.alive[worker - 1] = false;
    }

    fn generator(&self) -> &Generator {
        &self.server.generator
    }
}

/// Swap carried out directly on worker states, without a network.
pub fn swap_discriminators(workers: &mut [MdGanWorkerState], plan: &SwapPlan) -> Result<()> {
    let params: Vec<Vec<f64>> = plan.sources.iter().map(|&n| workers[n - 1].disc.net.params()).collect();
    let swapped = apply_swap(plan, params)?;
    for (&n, p) in plan.sources.iter().zip(swapped) {
        workers[n - 1].disc.net.set_params(&p)?;
    }
    Ok(())
}
